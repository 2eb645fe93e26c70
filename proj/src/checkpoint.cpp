// SPDX-License-Identifier: Apache-2.0
#include "refseg/checkpoint.hpp"

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

namespace fs = std::filesystem;
using nlohmann::json;

namespace refseg {

namespace {
constexpr char kMagic[4] = {'R', 'S', 'C', 'K'};
constexpr uint32_t kVersion = 1;
}  // namespace

json model_config_to_json(const ModelConfig& c) {
  return json{{"canvas", c.canvas},
              {"patch", c.patch},
              {"embed_dim", c.embed_dim},
              {"heads", c.heads},
              {"img_layers", c.img_layers},
              {"text_layers", c.text_layers},
              {"dec_layers", c.dec_layers},
              {"ffn_mult", c.ffn_mult},
              {"bins", c.bins},
              {"contour_points", c.contour_points},
              {"max_text_len", c.max_text_len}};
}

ModelConfig model_config_from_json(const json& j) {
  ModelConfig c;
  c.canvas = j.at("canvas");
  c.patch = j.at("patch");
  c.embed_dim = j.at("embed_dim");
  c.heads = j.at("heads");
  c.img_layers = j.at("img_layers");
  c.text_layers = j.at("text_layers");
  c.dec_layers = j.at("dec_layers");
  c.ffn_mult = j.at("ffn_mult");
  c.bins = j.at("bins");
  c.contour_points = j.at("contour_points");
  c.max_text_len = j.at("max_text_len");
  return c;
}

void save_checkpoint(const std::string& path, const Model& model, AdamW& opt,
                     const TrainState& state) {
  json header;
  header["format_version"] = kVersion;
  header["model"] = model_config_to_json(model.config());
  header["state"] = {{"step", state.step}, {"round", state.round}, {"gamma", state.gamma}};
  header["adam_steps"] = opt.steps();
  header["n_params"] = model.store().size();
  json params = json::array();
  for (const auto& e : model.store().entries())
    params.push_back({{"name", e.name}, {"rows", e.rows}, {"cols", e.cols}});
  header["params"] = params;
  std::string hs = header.dump();

  std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw_error(Errc::run, "save_checkpoint: cannot open " + tmp);
    f.write(kMagic, 4);
    uint32_t ver = kVersion;
    f.write(reinterpret_cast<const char*>(&ver), sizeof(ver));
    uint64_t hlen = hs.size();
    f.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
    f.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    auto write_f32 = [&](const std::vector<float>& v) {
      f.write(reinterpret_cast<const char*>(v.data()),
              static_cast<std::streamsize>(v.size() * sizeof(float)));
    };
    write_f32(model.store().data());
    write_f32(opt.moment1());
    write_f32(opt.moment2());
    if (!f) throw_error(Errc::run, "save_checkpoint: write failed for " + tmp);
  }
  fs::rename(tmp, path);
}

CheckpointData load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw_error(Errc::run, "load_checkpoint: cannot open " + path);
  char magic[4];
  f.read(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0)
    throw_error(Errc::schema, "load_checkpoint: bad magic in " + path);
  uint32_t ver = 0;
  f.read(reinterpret_cast<char*>(&ver), sizeof(ver));
  if (ver != kVersion)
    throw_error(Errc::schema, "load_checkpoint: unsupported version " + std::to_string(ver));
  uint64_t hlen = 0;
  f.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
  std::string hs(hlen, '\0');
  f.read(hs.data(), static_cast<std::streamsize>(hlen));
  json header;
  try {
    header = json::parse(hs);
  } catch (const json::exception& e) {
    throw_error(Errc::schema, std::string("load_checkpoint: bad header: ") + e.what());
  }
  CheckpointData out;
  out.config = model_config_from_json(header.at("model"));
  out.state.step = header.at("state").at("step");
  out.state.round = header.at("state").at("round");
  out.state.gamma = header.at("state").at("gamma");
  out.adam_steps = header.at("adam_steps");
  size_t n = header.at("n_params");
  auto read_f32 = [&](std::vector<float>& v) {
    v.resize(n);
    f.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(float)));
  };
  read_f32(out.params);
  read_f32(out.m1);
  read_f32(out.m2);
  if (!f) throw_error(Errc::schema, "load_checkpoint: truncated file " + path);
  return out;
}

void restore_model(Model& model, const CheckpointData& data) {
  if (model.store().size() != data.params.size())
    throw_error(Errc::run, "restore_model: parameter count mismatch");
  model.store().data() = data.params;
}

}  // namespace refseg
