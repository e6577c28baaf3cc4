#include "sprm/data_io.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "sprm/error.hpp"

namespace sprm::io {

namespace fs = std::filesystem;

namespace {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <typename T>
T to_little(T v) {
  if constexpr (std::endian::native == std::endian::big) {
    auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<T>(bytes);
  } else {
    return v;
  }
}

template <typename T>
void put(std::string& buf, T v) {
  v = to_little(v);
  char raw[sizeof(T)];
  std::memcpy(raw, &v, sizeof(T));
  buf.append(raw, sizeof(T));
}

class Reader {
 public:
  Reader(std::string bytes, std::string what) : bytes_(std::move(bytes)), what_(std::move(what)) {}

  template <typename T>
  T get(const char* field) {
    if (bytes_.size() - pos_ < sizeof(T)) {
      throw FormatError(fmt::format("{}: truncated at byte offset {} while reading {}", what_, pos_, field));
    }
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return to_little(v);
  }

  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::string bytes_;
  std::string what_;
  std::size_t pos_ = 0;
};

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void dump(const fs::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failed for " + path.string());
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream ss(line);
  while (std::getline(ss, cur, sep)) out.push_back(cur);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

long parse_int(const std::string& s, const fs::path& path, std::size_t line) {
  try {
    std::size_t used = 0;
    const long v = std::stol(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw DataError(fmt::format("{}:{}: expected an integer, got '{}'", path.string(), line, s));
  }
}

std::string trim_cr(std::string s) {
  if (!s.empty() && s.back() == '\r') s.pop_back();
  return s;
}

}  // namespace

void write_features(const fs::path& path, const FeatureSequence& seq) {
  const std::size_t l = seq.length(), d = seq.dim();
  if (l == 0) throw DataError("refusing to write an empty sequence to " + path.string());
  std::string buf;
  buf.reserve(28 + l * d * 4);
  buf.append("SPRF", 4);
  put<std::uint32_t>(buf, kFeatureVersion);
  put<std::uint64_t>(buf, l);
  put<std::uint64_t>(buf, d);
  put<std::uint32_t>(buf, seq.fps);
  for (double v : seq.features.data()) put<float>(buf, static_cast<float>(v));
  dump(path, buf);
}

FeatureSequence read_features(const fs::path& path) {
  Reader r(slurp(path), path.string());
  char magic[4];
  for (char& c : magic) c = static_cast<char>(r.get<std::uint8_t>("magic"));
  if (std::memcmp(magic, "SPRF", 4) != 0) {
    throw FormatError(path.string() + ": bad magic at byte offset 0, not an SPRF feature file");
  }
  const auto version = r.get<std::uint32_t>("version");
  if (version != kFeatureVersion) {
    throw FormatError(fmt::format("{}: unsupported version {} at byte offset 4", path.string(), version));
  }
  const auto l = r.get<std::uint64_t>("frame count");
  const auto d = r.get<std::uint64_t>("feature dim");
  FeatureSequence seq;
  seq.fps = r.get<std::uint32_t>("fps");
  if (l == 0 || d == 0) throw FormatError(path.string() + ": empty sequence in header at byte offset 8");
  if (seq.fps == 0) throw FormatError(path.string() + ": fps must be > 0 (byte offset 24)");
  if (r.remaining() / 4 < l * d || l * d / d != l) {
    throw FormatError(fmt::format("{}: truncated payload at byte offset {}: header promises {} values, {} bytes left",
                                  path.string(), r.offset(), l * d, r.remaining()));
  }
  std::vector<double> values(l * d);
  for (auto& v : values) v = r.get<float>("payload");
  if (r.remaining() != 0) {
    throw FormatError(fmt::format("{}: {} trailing bytes at byte offset {}", path.string(), r.remaining(), r.offset()));
  }
  seq.features = NdArray({l, d}, std::move(values));
  seq.video_id = path.stem().string();
  return seq;
}

void write_labels(const fs::path& path, const std::vector<int>& labels) {
  std::string out = "frame,phase\n";
  for (std::size_t i = 0; i < labels.size(); ++i) out += fmt::format("{},{}\n", i, labels[i]);
  dump(path, out);
}

std::vector<int> read_labels(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || trim_cr(line) != "frame,phase") {
    throw DataError(path.string() + ": expected header 'frame,phase'");
  }
  std::vector<int> labels;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim_cr(line);
    if (line.empty()) continue;
    const auto cols = split(line, ',');
    if (cols.size() != 2) throw DataError(fmt::format("{}:{}: expected 2 columns", path.string(), lineno));
    const long frame = parse_int(cols[0], path, lineno);
    if (frame != static_cast<long>(labels.size())) {
      throw DataError(fmt::format("{}:{}: frames must be consecutive from 0", path.string(), lineno));
    }
    const long phase = parse_int(cols[1], path, lineno);
    if (phase < 0) throw DataError(fmt::format("{}:{}: negative phase id", path.string(), lineno));
    labels.push_back(static_cast<int>(phase));
  }
  return labels;
}

fs::path labels_path_for(const fs::path& feature_path) {
  return feature_path.parent_path() / (feature_path.stem().string() + ".labels.csv");
}

void write_sequence(const fs::path& dir, const FeatureSequence& seq) {
  if (seq.labels.size() != seq.length()) {
    throw DataError(fmt::format("sequence {}: {} labels for {} frames", seq.video_id, seq.labels.size(), seq.length()));
  }
  const fs::path features = dir / (seq.video_id + ".sprf");
  write_features(features, seq);
  write_labels(labels_path_for(features), seq.labels);
}

FeatureSequence read_sequence(const fs::path& feature_path) {
  FeatureSequence seq = read_features(feature_path);
  seq.labels = read_labels(labels_path_for(feature_path));
  if (seq.labels.size() != seq.length()) {
    throw DataError(fmt::format("{}: {} labels for {} frames", feature_path.string(), seq.labels.size(), seq.length()));
  }
  return seq;
}

std::vector<FeatureSequence> read_dataset(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw DataError(dir.string() + " is not a directory");
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".sprf") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<FeatureSequence> out;
  out.reserve(files.size());
  for (const auto& f : files) out.push_back(read_sequence(f));
  return out;
}

void write_predictions(const fs::path& path, const PredictionRows& rows) {
  const std::size_t l = rows.pred.size();
  if (rows.truth.size() != l || rows.probs.size() != l) {
    throw DataError(fmt::format("predictions: {} truth, {} pred and {} prob rows", rows.truth.size(), l,
                                rows.probs.size()));
  }
  const std::size_t classes = l ? rows.probs[0].size() : 0;
  std::string out = "frame,true,pred";
  for (std::size_t c = 0; c < classes; ++c) out += fmt::format(",p{}", c);
  out += '\n';
  for (std::size_t i = 0; i < l; ++i) {
    if (rows.probs[i].size() != classes) throw DataError(fmt::format("predictions: ragged probability row {}", i));
    out += fmt::format("{},{},{}", i, rows.truth[i], rows.pred[i]);
    for (double p : rows.probs[i]) out += fmt::format(",{:.6f}", p);
    out += '\n';
  }
  dump(path, out);
}

PredictionRows read_predictions(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw DataError(path.string() + ": empty predictions file");
  const auto header = split(trim_cr(line), ',');
  if (header.size() < 3 || header[0] != "frame" || header[1] != "true" || header[2] != "pred") {
    throw DataError(path.string() + ": expected header 'frame,true,pred,p0,...'");
  }
  const std::size_t classes = header.size() - 3;
  PredictionRows rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim_cr(line);
    if (line.empty()) continue;
    const auto cols = split(line, ',');
    if (cols.size() != header.size()) {
      throw DataError(fmt::format("{}:{}: expected {} columns", path.string(), lineno, header.size()));
    }
    if (parse_int(cols[0], path, lineno) != static_cast<long>(rows.pred.size())) {
      throw DataError(fmt::format("{}:{}: frames must be consecutive from 0", path.string(), lineno));
    }
    rows.truth.push_back(static_cast<int>(parse_int(cols[1], path, lineno)));
    rows.pred.push_back(static_cast<int>(parse_int(cols[2], path, lineno)));
    std::vector<double> p(classes);
    for (std::size_t c = 0; c < classes; ++c) {
      try {
        p[c] = std::stod(cols[3 + c]);
      } catch (const std::exception&) {
        throw DataError(fmt::format("{}:{}: bad probability '{}'", path.string(), lineno, cols[3 + c]));
      }
    }
    rows.probs.push_back(std::move(p));
  }
  return rows;
}

}  // namespace sprm::io
