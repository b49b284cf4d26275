#include "nest/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace nest {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

namespace {

template <typename T>
void put(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw DataError("checkpoint: truncated file");
  return value;
}

const char* mode_name(AttentionMode m) { return m == AttentionMode::kRowwise ? "rowwise" : "parallel"; }

}  // namespace

void save_checkpoint(Nestformer& model, const std::filesystem::path& path) {
  Registry reg = model.registry();
  json arrays = json::array();
  for (const auto& e : reg.params)
    arrays.push_back({{"name", e.name}, {"kind", "param"}, {"rows", e.param->values.rows()},
                      {"cols", e.param->values.cols()}});
  for (const auto& b : reg.buffers)
    arrays.push_back({{"name", b.name}, {"kind", "buffer"}, {"rows", b.values->size()}, {"cols", 1}});
  const json manifest{{"config", to_json(model.cfg)},
                      {"granularities", model.granularities()},
                      {"mode", mode_name(model.mode)},
                      {"arrays", arrays}};
  const std::string text = manifest.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("checkpoint: cannot write " + path.string());
  out.write(kCheckpointMagic, sizeof kCheckpointMagic);
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint64_t>(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& e : reg.params)
    out.write(reinterpret_cast<const char*>(e.param->values.data()),
              static_cast<std::streamsize>(e.param->values.size() * sizeof(double)));
  for (const auto& b : reg.buffers)
    out.write(reinterpret_cast<const char*>(b.values->data()),
              static_cast<std::streamsize>(b.values->size() * sizeof(double)));
  if (!out) throw DataError("checkpoint: write failed for " + path.string());
}

Nestformer load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("checkpoint: cannot open " + path.string());
  char magic[sizeof kCheckpointMagic];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0)
    throw DataError("checkpoint: " + path.string() + " is not a checkpoint");
  const auto version = get<std::uint32_t>(in);
  if (version != kCheckpointVersion)
    throw VersionMismatch("checkpoint: version " + std::to_string(version) + ", expected " +
                          std::to_string(kCheckpointVersion));
  const auto length = get<std::uint64_t>(in);
  if (length > (std::uint64_t{1} << 30)) throw DataError("checkpoint: implausible manifest size");
  std::string text(length, '\0');
  in.read(text.data(), static_cast<std::streamsize>(length));
  if (!in) throw DataError("checkpoint: truncated manifest");

  json manifest;
  try {
    manifest = json::parse(text);
  } catch (const json::exception& e) {
    throw DataError(std::string("checkpoint: bad manifest: ") + e.what());
  }
  try {
    Nestformer model(config_from_json(manifest.at("config")));
    model.mode = manifest.value("mode", "parallel") == "rowwise" ? AttentionMode::kRowwise : AttentionMode::kParallel;
    if (manifest.at("granularities").get<int>() != model.granularities())
      throw StructuralError("checkpoint: granularity count disagrees with the schedules");

    Registry reg = model.registry();
    const json& arrays = manifest.at("arrays");
    if (arrays.size() != reg.params.size() + reg.buffers.size())
      throw StructuralError("checkpoint: array count does not match the model");
    std::size_t i = 0;
    auto check = [&](const std::string& name, Index rows, Index cols) {
      const json& a = arrays[i++];
      if (a.at("name").get<std::string>() != name || a.at("rows").get<Index>() != rows ||
          a.at("cols").get<Index>() != cols)
        throw StructuralError("checkpoint: array '" + a.at("name").get<std::string>() + "' does not match " + name);
    };
    auto read = [&](double* data, Index count) {
      in.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(count * sizeof(double)));
      if (!in) throw DataError("checkpoint: truncated array data");
    };
    for (auto& e : reg.params) {
      check(e.name, e.param->values.rows(), e.param->values.cols());
      read(e.param->values.data(), e.param->values.size());
    }
    for (auto& b : reg.buffers) {
      check(b.name, b.values->size(), 1);
      read(b.values->data(), b.values->size());
    }
    if (in.peek() != std::char_traits<char>::eof()) throw DataError("checkpoint: trailing bytes");
    return model;
  } catch (const json::exception& e) {
    throw DataError(std::string("checkpoint: malformed manifest: ") + e.what());
  } catch (const ConfigError& e) {
    throw DataError(std::string("checkpoint: bad model config: ") + e.what());
  }
}

}  // namespace nest
