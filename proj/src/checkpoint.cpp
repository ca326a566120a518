#include "avfuse/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <map>

#include <json.hpp>

namespace avf {

namespace {

constexpr std::uint32_t kVersion = 1;

void put_u32(std::ostream& os, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                              static_cast<unsigned char>((v >> 8) & 0xff),
                              static_cast<unsigned char>((v >> 16) & 0xff),
                              static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& is, const std::filesystem::path& path) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4))
    throw LoadError("truncated checkpoint: " + path.string());
  return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) |
         (std::uint32_t(b[3]) << 24);
}

nlohmann::json config_to_json(const FusionConfig& c) {
  return {{"d_v", c.d_v},
          {"d_a", c.d_a},
          {"d_model", c.d_model},
          {"layers", c.layers},
          {"heads", c.heads},
          {"ff_dim", c.ff_dim},
          {"attn_dropout", c.attn_dropout},
          {"residual_dropout", c.residual_dropout},
          {"p", c.p_visual_dropout},
          {"n_classes", c.n_classes},
          {"ln_eps", c.ln_eps}};
}

FusionConfig config_from_json(const nlohmann::json& j) {
  FusionConfig c;
  c.d_v = j.at("d_v").get<std::size_t>();
  c.d_a = j.at("d_a").get<std::size_t>();
  c.d_model = j.at("d_model").get<std::size_t>();
  c.layers = j.at("layers").get<std::size_t>();
  c.heads = j.at("heads").get<std::size_t>();
  c.ff_dim = j.at("ff_dim").get<std::size_t>();
  c.attn_dropout = j.at("attn_dropout").get<double>();
  c.residual_dropout = j.at("residual_dropout").get<double>();
  c.p_visual_dropout = j.at("p").get<double>();
  c.n_classes = j.at("n_classes").get<std::size_t>();
  c.ln_eps = j.at("ln_eps").get<double>();
  return c;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, FusionModel<float>& model) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw LoadError("cannot open checkpoint for writing: " + path.string());

  os.write("FWC1", 4);
  put_u32(os, kVersion);
  const std::string cfg = config_to_json(model.config).dump();
  put_u32(os, static_cast<std::uint32_t>(cfg.size()));
  os.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));

  std::uint32_t n_tensors = 0;
  model.params.for_each([&](const std::string&, MatrixF&, bool) { ++n_tensors; });
  put_u32(os, n_tensors);

  model.params.for_each([&](const std::string& name, MatrixF& m, bool) {
    put_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    os.write("FWF1", 4);
    put_u32(os, static_cast<std::uint32_t>(m.rows()));
    put_u32(os, static_cast<std::uint32_t>(m.cols()));
    for (std::size_t i = 0; i < m.size(); ++i) {
      std::uint32_t bits;
      std::memcpy(&bits, &m.data()[i], 4);
      put_u32(os, bits);
    }
  });
  if (!os) throw LoadError("checkpoint write failed: " + path.string());
}

FusionModel<float> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw LoadError("cannot open checkpoint: " + path.string());

  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "FWC1", 4) != 0)
    throw LoadError("bad checkpoint magic: " + path.string());
  const std::uint32_t version = get_u32(is, path);
  if (version != kVersion)
    throw LoadError("unsupported checkpoint version " + std::to_string(version) + ": " +
                    path.string());

  const std::uint32_t cfg_len = get_u32(is, path);
  std::string cfg_str(cfg_len, '\0');
  if (!is.read(cfg_str.data(), cfg_len))
    throw LoadError("truncated checkpoint config: " + path.string());
  FusionConfig config;
  try {
    config = config_from_json(nlohmann::json::parse(cfg_str));
  } catch (const nlohmann::json::exception& e) {
    throw LoadError("checkpoint config parse error in " + path.string() + ": " + e.what());
  }
  config.validate();

  const std::uint32_t n_tensors = get_u32(is, path);
  std::map<std::string, MatrixF> tensors;
  for (std::uint32_t t = 0; t < n_tensors; ++t) {
    const std::uint32_t name_len = get_u32(is, path);
    std::string name(name_len, '\0');
    if (!is.read(name.data(), name_len))
      throw LoadError("truncated tensor name: " + path.string());
    char m2[4];
    if (!is.read(m2, 4) || std::memcmp(m2, "FWF1", 4) != 0)
      throw LoadError("bad tensor magic for '" + name + "': " + path.string());
    const std::uint32_t rows = get_u32(is, path);
    const std::uint32_t cols = get_u32(is, path);
    MatrixF m(rows, cols);
    for (std::size_t i = 0; i < m.size(); ++i) {
      const std::uint32_t bits = get_u32(is, path);
      std::memcpy(&m.data()[i], &bits, 4);
    }
    tensors.emplace(std::move(name), std::move(m));
  }

  FusionModel<float> model;
  model.config = config;
  model.params = make_param_structure<MatrixF>(config);
  model.params.for_each([&](const std::string& name, MatrixF& m, bool) {
    auto it = tensors.find(name);
    if (it == tensors.end())
      throw LoadError("checkpoint missing tensor '" + name + "': " + path.string());
    m = std::move(it->second);
    tensors.erase(it);
  });
  if (!tensors.empty())
    throw LoadError("checkpoint has unexpected tensor '" + tensors.begin()->first + "': " +
                    path.string());
  return model;
}

}  // namespace avf
