#include "nest/events.hpp"

#include <spdlog/spdlog.h>

#include <fstream>
#include <random>
#include <sstream>

namespace nest {

namespace {

void check_stream(const std::vector<EventRecord>& stream, Index height, Index width) {
  for (std::size_t i = 0; i < stream.size(); ++i) {
    const EventRecord& e = stream[i];
    if (i > 0 && e.t < stream[i - 1].t)
      throw DataError("events: timestamps decrease at record " + std::to_string(i));
    if (e.x >= width || e.y >= height) throw DataError("events: coordinate outside the sensor at record " + std::to_string(i));
    if (e.polarity > 1) throw DataError("events: polarity must be 0 or 1 at record " + std::to_string(i));
  }
}

template <typename Cell>
void bin_into(const std::vector<EventRecord>& stream, Index T, Cell&& cell) {
  const std::uint64_t t0 = stream.front().t;
  const std::uint64_t span = std::uint64_t{stream.back().t} - t0 + 1;
  for (const EventRecord& e : stream) {
    const auto bin = static_cast<Index>((std::uint64_t{e.t} - t0) * static_cast<std::uint64_t>(T) / span);
    cell(bin, e);
  }
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

Index uniform_index(std::mt19937_64& rng, Index lo, Index hi) {
  return std::uniform_int_distribution<Index>(lo, hi)(rng);
}

}  // namespace

SpikeTensor bin_events(const std::vector<EventRecord>& stream, Index T, Index height, Index width) {
  if (T < 1 || height < 1 || width < 1) throw ConfigError("bin_events: T, H and W must be positive");
  SpikeTensor out({T, 1, 2, height, width});
  if (stream.empty()) {
    spdlog::warn("bin_events: empty stream, returning an all-zero tensor");
    return out;
  }
  check_stream(stream, height, width);
  bin_into(stream, T, [&](Index bin, const EventRecord& e) { out({bin, 0, e.polarity, e.y, e.x}) = 1; });
  return out;
}

RealTensor bin_event_counts(const std::vector<EventRecord>& stream, Index T, Index height, Index width) {
  if (T < 1 || height < 1 || width < 1) throw ConfigError("bin_events: T, H and W must be positive");
  RealTensor out({T, 1, 2, height, width});
  if (stream.empty()) {
    spdlog::warn("bin_event_counts: empty stream, returning an all-zero tensor");
    return out;
  }
  check_stream(stream, height, width);
  bin_into(stream, T, [&](Index bin, const EventRecord& e) { out({bin, 0, e.polarity, e.y, e.x}) += 1.0; });
  return out;
}

RealTensor encode_static(const RealTensor& image, Index T) {
  if (image.rank() != 3) throw StructuralError("encode_static: image must be [C, H, W]");
  if (T < 1) throw ConfigError("encode_static: T must be positive");
  for (double v : image.data())
    if (!(v >= 0.0 && v <= 1.0)) throw DataError("encode_static: pixel values must lie in [0, 1]");
  RealTensor out({T, 1, image.dim(0), image.dim(1), image.dim(2)});
  const auto src = image.data();
  auto dst = out.data();
  for (Index t = 0; t < T; ++t) std::copy(src.begin(), src.end(), dst.begin() + t * image.size());
  return out;
}

GestureSample synth_gesture(int cls, std::uint64_t seed, Index T, Index height, Index width, double noise) {
  if (cls < 0 || cls >= kGestureClasses) throw ConfigError("synth_gesture: class must be in 0..3");
  if (!(noise >= 0.0 && noise < 1.0)) throw ConfigError("synth_gesture: noise must be in [0, 1)");
  if (T < 1 || height < 8 || width < 8) throw ConfigError("synth_gesture: sensor too small");
  std::mt19937_64 rng(seed);

  const bool horizontal = cls < 2;  // right/left move along x with a vertical bar
  const int dir = (cls == 0 || cls == 2) ? 1 : -1;
  const Index along = horizontal ? width : height;
  const Index across = horizontal ? height : width;
  const Index max_travel = std::min(along - 2, std::max(T, along / 2));
  const Index travel = uniform_index(rng, std::min(max_travel, std::max(T, along / 4)), max_travel);
  const Index length = uniform_index(rng, across / 4, across / 2);
  const Index offset = uniform_index(rng, 0, across - length);
  Index pos = dir > 0 ? uniform_index(rng, 0, along - 1 - travel) : uniform_index(rng, travel, along - 1);
  const std::uint32_t dt = static_cast<std::uint32_t>(uniform_index(rng, 800, 1200));

  GestureSample s;
  s.label = cls;
  auto emit = [&](std::uint32_t t, Index a, Index c, int polarity) {
    const Index x = horizontal ? a : c;
    const Index y = horizontal ? c : a;
    s.events.push_back({t, static_cast<std::uint16_t>(x), static_cast<std::uint16_t>(y),
                        static_cast<std::uint8_t>(polarity)});
  };
  std::binomial_distribution<Index> noise_count(2 * height * width, noise);
  for (Index step = 1; step <= travel; ++step) {
    const auto t = static_cast<std::uint32_t>(step) * dt;
    for (Index c = offset; c < offset + length; ++c) emit(t, pos, c, 0);
    pos += dir;
    for (Index c = offset; c < offset + length; ++c) emit(t, pos, c, 1);
    if (noise > 0.0) {
      const Index n = noise_count(rng);
      for (Index i = 0; i < n; ++i) {
        const auto x = static_cast<std::uint16_t>(uniform_index(rng, 0, width - 1));
        const auto y = static_cast<std::uint16_t>(uniform_index(rng, 0, height - 1));
        const auto p = static_cast<std::uint8_t>(uniform_index(rng, 0, 1));
        s.events.push_back({t, x, y, p});
      }
    }
  }
  return s;
}

void write_events(const std::filesystem::path& path, const std::vector<EventRecord>& stream) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("events: cannot write " + path.string());
  if (path.extension() == ".csv") {
    out << "t,x,y,polarity\n";
    for (const auto& e : stream) out << e.t << ',' << e.x << ',' << e.y << ',' << int{e.polarity} << '\n';
    return;
  }
  for (const auto& e : stream) {
    char buf[9];
    for (int i = 0; i < 4; ++i) buf[i] = static_cast<char>((e.t >> (8 * i)) & 0xff);
    buf[4] = static_cast<char>(e.x & 0xff);
    buf[5] = static_cast<char>(e.x >> 8);
    buf[6] = static_cast<char>(e.y & 0xff);
    buf[7] = static_cast<char>(e.y >> 8);
    buf[8] = static_cast<char>(e.polarity);
    out.write(buf, sizeof buf);
  }
}

std::vector<EventRecord> read_events(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("events: cannot open " + path.string());
  std::vector<EventRecord> stream;
  if (path.extension() == ".csv") {
    std::string line;
    std::getline(in, line);
    if (line.rfind("t,x,y,polarity", 0) != 0) throw DataError("events: missing CSV header in " + path.string());
    Index lineno = 1;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      std::istringstream row(line);
      unsigned long t = 0, x = 0, y = 0, p = 0;
      char c1 = 0, c2 = 0, c3 = 0;
      if (!(row >> t >> c1 >> x >> c2 >> y >> c3 >> p) || c1 != ',' || c2 != ',' || c3 != ',' || t > 0xffffffffUL ||
          x > 0xffff || y > 0xffff || p > 1)
        throw DataError("events: bad CSV row " + std::to_string(lineno) + " in " + path.string());
      stream.push_back({static_cast<std::uint32_t>(t), static_cast<std::uint16_t>(x),
                        static_cast<std::uint16_t>(y), static_cast<std::uint8_t>(p)});
    }
    return stream;
  }
  unsigned char buf[9];
  while (in.read(reinterpret_cast<char*>(buf), sizeof buf)) {
    EventRecord e;
    e.t = std::uint32_t{buf[0]} | std::uint32_t{buf[1]} << 8 | std::uint32_t{buf[2]} << 16 |
          std::uint32_t{buf[3]} << 24;
    e.x = static_cast<std::uint16_t>(buf[4] | buf[5] << 8);
    e.y = static_cast<std::uint16_t>(buf[6] | buf[7] << 8);
    e.polarity = buf[8];
    stream.push_back(e);
  }
  if (in.gcount() != 0) throw DataError("events: trailing partial record in " + path.string());
  return stream;
}

Dataset synth_dataset(Index per_class, std::uint64_t seed, Index T, Index height, Index width, double noise) {
  if (per_class < 1) throw ConfigError("synth_dataset: per_class must be positive");
  Dataset d;
  d.height = height;
  d.width = width;
  for (Index i = 0; i < per_class; ++i) {
    for (int cls = 0; cls < kGestureClasses; ++cls) {
      const std::uint64_t s = splitmix64(seed ^ splitmix64(static_cast<std::uint64_t>(i * kGestureClasses + cls)));
      GestureSample g = synth_gesture(cls, s, T, height, width, noise);
      d.streams.push_back(std::move(g.events));
      d.labels.push_back(g.label);
    }
  }
  return d;
}

Dataset load_dataset(const std::filesystem::path& dir, Index height, Index width, int classes) {
  const auto index = dir / "index.csv";
  std::ifstream in(index);
  if (!in) throw DataError("dataset: missing " + index.string());
  Dataset d;
  d.height = height;
  d.width = width;
  d.classes = classes;
  std::string line;
  std::getline(in, line);
  if (line.rfind("file,label", 0) != 0) throw DataError("dataset: index.csv must start with 'file,label'");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto comma = line.rfind(',');
    if (comma == std::string::npos) throw DataError("dataset: bad index row '" + line + "'");
    int label = 0;
    try {
      label = std::stoi(line.substr(comma + 1));
    } catch (const std::exception&) {
      throw DataError("dataset: bad label in '" + line + "'");
    }
    if (label < 0 || label >= classes) throw DataError("dataset: label out of range in '" + line + "'");
    auto stream = read_events(dir / line.substr(0, comma));
    check_stream(stream, height, width);
    d.streams.push_back(std::move(stream));
    d.labels.push_back(label);
  }
  if (d.labels.empty()) throw DataError("dataset: " + index.string() + " lists no samples");
  return d;
}

void save_dataset(const Dataset& data, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream index(dir / "index.csv");
  if (!index) throw DataError("dataset: cannot write index in " + dir.string());
  index << "file,label\n";
  for (Index i = 0; i < data.size(); ++i) {
    const std::string name = "sample" + std::to_string(i) + ".evt";
    write_events(dir / name, data.streams[i]);
    index << name << ',' << data.labels[i] << '\n';
  }
}

std::vector<SpikeTensor> bin_dataset(const Dataset& data, Index T) {
  std::vector<SpikeTensor> frames;
  frames.reserve(data.streams.size());
  for (const auto& s : data.streams) frames.push_back(bin_events(s, T, data.height, data.width));
  return frames;
}

Currents batch_rows(const std::vector<SpikeTensor>& frames, const std::vector<Index>& indices) {
  if (indices.empty()) throw UsageError("batch_rows: empty batch");
  const SpikeTensor& first = frames.at(indices.front());
  const Index T = first.dim(0), C = first.dim(2), H = first.dim(3), W = first.dim(4), P = H * W;
  const Index B = static_cast<Index>(indices.size());
  Currents rows(T * B * P, C);
  for (Index b = 0; b < B; ++b) {
    const SpikeTensor& f = frames.at(indices[b]);
    if (f.shape() != first.shape()) throw StructuralError("batch_rows: samples differ in shape");
    const auto data = f.data();
    for (Index t = 0; t < T; ++t)
      for (Index c = 0; c < C; ++c)
        for (Index p = 0; p < P; ++p) rows((t * B + b) * P + p, c) = data[(t * C + c) * P + p];
  }
  return rows;
}

}  // namespace nest
