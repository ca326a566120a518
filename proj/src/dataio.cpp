#include "avfuse/dataio.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <set>

#include <json.hpp>

namespace avf {

namespace {

void put_u32(std::ostream& os, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                              static_cast<unsigned char>((v >> 8) & 0xff),
                              static_cast<unsigned char>((v >> 16) & 0xff),
                              static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

void put_f32(std::ostream& os, float f) {
  std::uint32_t v;
  std::memcpy(&v, &f, 4);
  put_u32(os, v);
}

std::uint32_t get_u32(std::istream& is, const std::filesystem::path& path) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4))
    throw LoadError("truncated file at offset " + std::to_string(is.tellg() == -1 ? 0 : long(is.tellg())) +
                    ": " + path.string());
  return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) |
         (std::uint32_t(b[3]) << 24);
}

float get_f32(std::istream& is, const std::filesystem::path& path) {
  const std::uint32_t v = get_u32(is, path);
  float f;
  std::memcpy(&f, &v, 4);
  return f;
}

void expect_magic(std::istream& is, const char* magic, const std::filesystem::path& path) {
  char buf[4];
  if (!is.read(buf, 4) || std::memcmp(buf, magic, 4) != 0)
    throw LoadError("bad magic (expected " + std::string(magic) + "): " + path.string());
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw LoadError("cannot open for writing: " + path.string());
  return os;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw LoadError("cannot open: " + path.string());
  return is;
}

}  // namespace

void write_feature_matrix(const std::filesystem::path& path, const MatrixF& m) {
  auto os = open_out(path);
  os.write("FWF1", 4);
  put_u32(os, static_cast<std::uint32_t>(m.rows()));
  put_u32(os, static_cast<std::uint32_t>(m.cols()));
  for (std::size_t i = 0; i < m.size(); ++i) put_f32(os, m.data()[i]);
  if (!os) throw LoadError("write failed: " + path.string());
}

MatrixF read_feature_matrix(const std::filesystem::path& path) {
  auto is = open_in(path);
  expect_magic(is, "FWF1", path);
  const std::uint32_t rows = get_u32(is, path);
  const std::uint32_t cols = get_u32(is, path);
  MatrixF m(rows, cols);
  for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = get_f32(is, path);
  // must be exactly at EOF
  is.peek();
  if (!is.eof()) throw LoadError("trailing bytes after " + std::to_string(m.size()) +
                                 " floats: " + path.string());
  return m;
}

void write_labels(const std::filesystem::path& path, const std::vector<int>& labels) {
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] < -1 || labels[i] >= kNumClasses)
      throw LoadError("label out of range at frame " + std::to_string(i));
  auto os = open_out(path);
  os.write("FWL1", 4);
  put_u32(os, static_cast<std::uint32_t>(labels.size()));
  for (int v : labels) {
    const char b = static_cast<char>(static_cast<std::int8_t>(v));
    os.write(&b, 1);
  }
  if (!os) throw LoadError("write failed: " + path.string());
}

std::vector<int> read_labels(const std::filesystem::path& path) {
  auto is = open_in(path);
  expect_magic(is, "FWL1", path);
  const std::uint32_t t = get_u32(is, path);
  std::vector<int> labels(t);
  for (std::uint32_t i = 0; i < t; ++i) {
    char b;
    if (!is.read(&b, 1))
      throw LoadError("truncated labels at frame " + std::to_string(i) + ": " + path.string());
    const int v = static_cast<std::int8_t>(b);
    if (v < -1 || v >= kNumClasses)
      throw LoadError("label " + std::to_string(v) + " out of {-1,0..7} at frame " +
                      std::to_string(i) + ": " + path.string());
    labels[i] = v;
  }
  is.peek();
  if (!is.eof()) throw LoadError("trailing bytes after " + std::to_string(t) +
                                 " labels: " + path.string());
  return labels;
}

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& e : entries) {
    arr.push_back({{"video_id", e.video_id},
                   {"visual_path", e.visual_path},
                   {"audio_path", e.audio_path},
                   {"labels_path", e.labels_path},
                   {"raw_audio_len", e.raw_audio_len}});
  }
  auto os = open_out(path);
  os << arr.dump(2) << "\n";
}

DatasetManifest load_manifest(const std::filesystem::path& path, std::string split) {
  auto is = open_in(path);
  nlohmann::json arr;
  try {
    is >> arr;
  } catch (const nlohmann::json::exception& e) {
    throw LoadError("manifest parse error in " + path.string() + ": " + e.what());
  }
  if (!arr.is_array()) throw LoadError("manifest must be a JSON array: " + path.string());

  DatasetManifest man;
  man.split = std::move(split);
  man.base_dir = path.parent_path();
  std::set<std::string> seen;
  for (const auto& j : arr) {
    static const std::set<std::string> known = {"video_id", "visual_path", "audio_path",
                                                "labels_path", "raw_audio_len"};
    for (auto it = j.begin(); it != j.end(); ++it)
      if (!known.count(it.key()))
        throw LoadError("manifest entry has unknown field '" + it.key() + "': " + path.string());
    ManifestEntry e;
    try {
      e.video_id = j.at("video_id").get<std::string>();
      e.visual_path = j.at("visual_path").get<std::string>();
      e.audio_path = j.at("audio_path").get<std::string>();
      e.labels_path = j.at("labels_path").get<std::string>();
      e.raw_audio_len = j.at("raw_audio_len").get<std::size_t>();
    } catch (const nlohmann::json::exception& ex) {
      throw LoadError("manifest entry missing field in " + path.string() + ": " + ex.what());
    }
    if (!seen.insert(e.video_id).second)
      throw LoadError("duplicate video_id '" + e.video_id + "': " + path.string());
    man.entries.push_back(std::move(e));
  }
  return man;
}

MatrixF align_audio(const MatrixF& audio, std::size_t target_len) {
  if (audio.rows() < 1 || target_len < 1)
    throw DimensionError("align_audio: rows and target_len must be >= 1");
  if (audio.rows() == target_len) return audio;

  MatrixF out(target_len, audio.cols());
  const std::size_t t_a = audio.rows();
  for (std::size_t i = 0; i < target_len; ++i) {
    double pos = 0.0;
    if (target_len > 1 && t_a > 1)
      pos = static_cast<double>(i) * static_cast<double>(t_a - 1) /
            static_cast<double>(target_len - 1);
    const std::size_t lo = static_cast<std::size_t>(pos);
    const std::size_t hi = std::min(lo + 1, t_a - 1);
    const float frac = static_cast<float>(pos - static_cast<double>(lo));
    const float* rlo = audio.row(lo);
    const float* rhi = audio.row(hi);
    float* ro = out.row(i);
    for (std::size_t j = 0; j < audio.cols(); ++j)
      ro[j] = (1.0f - frac) * rlo[j] + frac * rhi[j];
  }
  return out;
}

std::vector<float> context_pool(const MatrixF& audio, std::size_t frame, std::size_t radius) {
  if (frame >= audio.rows())
    throw std::out_of_range("context_pool: frame " + std::to_string(frame) + " >= T=" +
                            std::to_string(audio.rows()));
  const std::size_t lo = frame >= radius ? frame - radius : 0;
  const std::size_t hi = std::min(frame + radius, audio.rows() - 1);
  std::vector<float> out(audio.cols(), 0.0f);
  for (std::size_t r = lo; r <= hi; ++r) {
    const float* row = audio.row(r);
    for (std::size_t j = 0; j < audio.cols(); ++j) out[j] += row[j];
  }
  const float n = static_cast<float>(hi - lo + 1);
  for (float& v : out) v /= n;
  return out;
}

FeatureSequence load_sequence(const ManifestEntry& entry, std::size_t d_v, std::size_t d_a,
                              const std::filesystem::path& base_dir) {
  auto resolve = [&](const std::string& p) {
    std::filesystem::path fp(p);
    return fp.is_absolute() ? fp : base_dir / fp;
  };

  FeatureSequence seq;
  seq.video_id = entry.video_id;
  seq.visual = read_feature_matrix(resolve(entry.visual_path));
  if (seq.visual.cols() != d_v)
    throw LoadError("visual dim " + std::to_string(seq.visual.cols()) + " != declared d_v=" +
                    std::to_string(d_v) + ": " + entry.visual_path);
  if (seq.visual.rows() < 1)
    throw LoadError("empty visual sequence: " + entry.visual_path);

  seq.labels = read_labels(resolve(entry.labels_path));
  if (seq.labels.size() != seq.visual.rows())
    throw LoadError("label count " + std::to_string(seq.labels.size()) + " != frame count " +
                    std::to_string(seq.visual.rows()) + ": " + entry.labels_path);

  MatrixF audio = read_feature_matrix(resolve(entry.audio_path));
  if (audio.cols() != d_a)
    throw LoadError("audio dim " + std::to_string(audio.cols()) + " != declared d_a=" +
                    std::to_string(d_a) + ": " + entry.audio_path);
  if (audio.rows() != entry.raw_audio_len)
    throw LoadError("audio rows " + std::to_string(audio.rows()) + " != manifest raw_audio_len=" +
                    std::to_string(entry.raw_audio_len) + ": " + entry.audio_path);
  seq.audio = align_audio(audio, seq.visual.rows());
  return seq;
}

std::vector<FeatureSequence> load_sequences(const DatasetManifest& manifest, std::size_t d_v,
                                            std::size_t d_a) {
  std::vector<FeatureSequence> out;
  out.reserve(manifest.entries.size());
  for (const auto& e : manifest.entries)
    out.push_back(load_sequence(e, d_v, d_a, manifest.base_dir));
  return out;
}

}  // namespace avf
