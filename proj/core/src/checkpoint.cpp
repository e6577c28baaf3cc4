#include "sprm/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include <fmt/format.h>

#include "sprm/config.hpp"
#include "sprm/error.hpp"

namespace sprm {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <typename T>
void put(std::string& buf, T v) {
  char raw[sizeof(T)];
  std::memcpy(raw, &v, sizeof(T));
  buf.append(raw, sizeof(T));
}

class Cursor {
 public:
  Cursor(const std::string& bytes, const std::string& what) : bytes_(bytes), what_(what) {}

  template <typename T>
  T get(const char* field) {
    need(sizeof(T), field);
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::string text(std::size_t n, const char* field) {
    need(n, field);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::size_t offset() const { return pos_; }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n, const char* field) const {
    if (bytes_.size() - pos_ < n) {
      throw FormatError(fmt::format("{}: truncated at byte offset {} while reading {}", what_, pos_, field));
    }
  }

  const std::string& bytes_;
  const std::string& what_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string serialize_checkpoint(const Model& model) {
  std::string buf = "SPRC";
  put<std::uint32_t>(buf, kCheckpointVersion);
  const std::string config = model_config_text(model.config());
  put<std::uint64_t>(buf, config.size());
  buf += config;
  const ParamList params = model.parameters();
  put<std::uint64_t>(buf, params.size());
  for (const auto& p : params) {
    put<std::uint32_t>(buf, static_cast<std::uint32_t>(p.name.size()));
    buf += p.name;
    put<std::uint32_t>(buf, static_cast<std::uint32_t>(p.value.ndim()));
    for (std::size_t d : p.value.shape()) put<std::uint64_t>(buf, d);
    for (double v : p.value.data()) put<float>(buf, static_cast<float>(v));
  }
  return buf;
}

Model deserialize_checkpoint(const std::string& bytes, const std::string& what) {
  Cursor in(bytes, what);
  if (in.text(4, "magic") != "SPRC") throw FormatError(what + ": bad magic at byte offset 0, not a checkpoint");
  const auto version = in.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw FormatError(fmt::format("{}: unsupported checkpoint version {} at byte offset 4", what, version));
  }
  const auto config_len = in.get<std::uint64_t>("config length");
  const std::size_t config_at = in.offset();
  ModelConfig config;
  try {
    config = parse_model_config(in.text(config_len, "config text"));
    config.validate();
  } catch (const ConfigError& e) {
    throw FormatError(fmt::format("{}: bad config echo at byte offset {}: {}", what, config_at, e.what()));
  }
  Model model(config, 0);
  std::map<std::string, NdArray> by_name;
  for (const auto& p : model.parameters()) by_name.emplace(p.name, p.value);

  const auto count = in.get<std::uint64_t>("parameter count");
  if (count != by_name.size()) {
    throw DataError(fmt::format("{}: holds {} parameters, the configured model has {}", what, count, by_name.size()));
  }
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto name_len = in.get<std::uint32_t>("name length");
    const std::string name = in.text(name_len, "parameter name");
    const auto it = by_name.find(name);
    if (it == by_name.end()) throw DataError(fmt::format("{}: unexpected parameter '{}'", what, name));
    const auto ndim = in.get<std::uint32_t>("rank");
    Shape shape(ndim);
    for (auto& d : shape) d = in.get<std::uint64_t>("dimension");
    NdArray target = it->second;
    if (shape != target.shape()) {
      throw DataError(fmt::format("{}: parameter '{}' stored as {}, model expects {}", what, name, shape_str(shape),
                                  shape_str(target.shape())));
    }
    for (double& v : target.mutable_data()) v = static_cast<double>(in.get<float>("parameter values"));
    by_name.erase(it);
  }
  if (!in.done()) throw FormatError(fmt::format("{}: trailing bytes at byte offset {}", what, in.offset()));
  return model;
}

void save_checkpoint(const std::filesystem::path& path, const Model& model) {
  const std::string bytes = serialize_checkpoint(model);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failed for " + path.string());
}

Model load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return deserialize_checkpoint(ss.str(), path.string());
}

}  // namespace sprm
