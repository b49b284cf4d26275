#pragma once

#include "nest/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <vector>

namespace nest {

struct EventRecord {
  std::uint32_t t = 0;  // microseconds
  std::uint16_t x = 0;
  std::uint16_t y = 0;
  std::uint8_t polarity = 0;

  friend bool operator==(const EventRecord&, const EventRecord&) = default;
};

/// Splits the stream's time span into T equal windows and sets cell
/// (bin, polarity, y, x) when at least one event falls there. Returns
/// [T, 1, 2, H, W]. An empty stream yields zeros and logs a warning.
SpikeTensor bin_events(const std::vector<EventRecord>& stream, Index T, Index height, Index width);

/// Same windows, but cells hold event counts (real currents for the first layer).
RealTensor bin_event_counts(const std::vector<EventRecord>& stream, Index T, Index height, Index width);

/// Direct coding of a static image [C, H, W] with values in [0, 1]: the image
/// is presented as the same real current on every one of T steps, giving
/// [T, 1, C, H, W]. The first LIF layer does the binarisation.
RealTensor encode_static(const RealTensor& image, Index T);

struct GestureSample {
  std::vector<EventRecord> events;
  int label = 0;
};

inline constexpr int kGestureClasses = 4;  // right, left, down, up

/// A one-pixel-wide bar sweeping across the sensor in one of four directions.
/// Each step emits OFF events on the trailing edge and ON events on the
/// leading edge; `noise` is the per-pixel, per-polarity, per-step probability
/// of a spurious event.
GestureSample synth_gesture(int cls, std::uint64_t seed, Index T, Index height, Index width, double noise);

// Event files: packed little-endian records of u32 t, u16 x, u16 y, u8 polarity
// (9 bytes each), or CSV with the header "t,x,y,polarity".
void write_events(const std::filesystem::path& path, const std::vector<EventRecord>& stream);
std::vector<EventRecord> read_events(const std::filesystem::path& path);

struct Dataset {
  std::vector<std::vector<EventRecord>> streams;
  std::vector<int> labels;
  Index height = 0;
  Index width = 0;
  int classes = kGestureClasses;

  Index size() const { return static_cast<Index>(labels.size()); }
};

/// Class-balanced synthetic set, `per_class` samples per class, interleaved by class.
Dataset synth_dataset(Index per_class, std::uint64_t seed, Index T, Index height, Index width, double noise);

/// Directory with index.csv ("file,label") next to the event files it lists.
Dataset load_dataset(const std::filesystem::path& dir, Index height, Index width, int classes);
void save_dataset(const Dataset& data, const std::filesystem::path& dir);

/// Every stream binned to T frames.
std::vector<SpikeTensor> bin_dataset(const Dataset& data, Index T);

/// Frames of the selected samples as model rows [T * B * H * W, 2].
Currents batch_rows(const std::vector<SpikeTensor>& frames, const std::vector<Index>& indices);

}  // namespace nest
