// SPDX-License-Identifier: Apache-2.0
#include "refseg/model.hpp"

#include <algorithm>
#include <cmath>

namespace refseg {

using nn::Mat;
using nn::Vec;

void ModelConfig::validate() const {
  if (canvas <= 0 || patch <= 0 || canvas % patch != 0)
    throw_error(Errc::config, "model config: canvas must be a multiple of patch size");
  if (embed_dim <= 0 || heads <= 0 || embed_dim % heads != 0)
    throw_error(Errc::config, "model config: embed dim must be divisible by head count");
  if (img_layers < 1 || text_layers < 1 || dec_layers < 1 || ffn_mult < 1)
    throw_error(Errc::config, "model config: layer counts must be positive");
  if (bins < 2 || contour_points < 3 || max_text_len < 1)
    throw_error(Errc::config, "model config: bins >= 2, K >= 3, text length >= 1");
}

// ---------------------------------------------------------------------------

TextVocab::TextVocab() {
  words_ = {
      // colors and shapes of the closed grammar
      "red", "green", "blue", "yellow", "purple", "orange",
      "circle", "square", "triangle", "ellipse",
      // relation keywords
      "right", "east", "left", "west", "smaller", "tinier", "further",
      "bigger", "larger", "closer", "between", "within", "inside",
      "above", "north", "top", "below", "under", "south", "back", "behind", "front",
      // connectives
      "the", "a", "an", "on", "to", "of", "in", "than", "and",
  };
}

std::vector<int> TextVocab::encode(const std::string& text, int max_len) const {
  std::vector<int> ids;
  std::string word;
  auto flush = [&] {
    if (word.empty()) return;
    int id = kUnk;
    for (size_t i = 0; i < words_.size(); ++i)
      if (words_[i] == word) {
        id = static_cast<int>(i) + 2;
        break;
      }
    ids.push_back(id);
    word.clear();
  };
  for (char ch : text) {
    if (std::isspace(static_cast<unsigned char>(ch)))
      flush();
    else
      word.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
  }
  flush();
  ids.resize(static_cast<size_t>(max_len), kPad);
  return ids;
}

// ---------------------------------------------------------------------------

int coord_to_bin(float c, int size, int bins) {
  int b = static_cast<int>(std::floor(double(c) * bins / size));
  return std::clamp(b, 0, bins - 1);
}

float bin_to_coord(int b, int size, int bins) {
  return static_cast<float>((b + 0.5) * size / bins);
}

TokenSequence contour_to_tokens(const ContourSequence& c, int width, int height, int bins) {
  TokenSequence seq;
  seq.tokens.reserve(c.points.size() * 2 + 2);
  seq.tokens.push_back(bins);  // BOS
  for (const auto& p : c.points) {
    seq.tokens.push_back(coord_to_bin(p.x, width, bins));
    seq.tokens.push_back(coord_to_bin(p.y, height, bins));
  }
  seq.tokens.push_back(bins + 1);  // EOS
  return seq;
}

ContourSequence tokens_to_contour(const TokenSequence& seq, int width, int height, int bins) {
  const auto& t = seq.tokens;
  if (t.size() < 2 || t.front() != bins || t.back() != bins + 1)
    throw_error(Errc::run, "tokens_to_contour: sequence must be framed by BOS/EOS");
  size_t ncoord = t.size() - 2;
  if (ncoord % 2 != 0) throw_error(Errc::run, "tokens_to_contour: odd coordinate count");
  if (ncoord < 6) throw_error(Errc::run, "tokens_to_contour: fewer than 3 points");
  ContourSequence c;
  for (size_t i = 1; i + 1 < t.size(); i += 2) {
    int bx = t[i], by = t[i + 1];
    if (bx < 0 || bx >= bins || by < 0 || by >= bins)
      throw_error(Errc::run, "tokens_to_contour: non-coordinate token inside the frame");
    c.points.push_back({bin_to_coord(bx, width, bins), bin_to_coord(by, height, bins)});
  }
  return c;
}

nn::Mat patches_from_image(const ImageRgb& img, const ModelConfig& cfg) {
  if (img.width != cfg.canvas || img.height != cfg.canvas)
    throw_error(Errc::run, "patches_from_image: image does not match configured canvas");
  const int g = cfg.grid(), p = cfg.patch;
  Mat out(cfg.img_tokens(), 3 * p * p);
  for (int py = 0; py < g; ++py)
    for (int px = 0; px < g; ++px) {
      int row = py * g + px;
      int col = 0;
      for (int y = 0; y < p; ++y)
        for (int x = 0; x < p; ++x) {
          Rgb c = img.at(px * p + x, py * p + y);
          out(row, col++) = (c[0] / 255.0f - 0.5f) * 2.0f;
          out(row, col++) = (c[1] / 255.0f - 0.5f) * 2.0f;
          out(row, col++) = (c[2] / 255.0f - 0.5f) * 2.0f;
        }
    }
  return out;
}

// ---------------------------------------------------------------------------

Grads::Grads(const nn::ParamStore& layout) : g(layout.size(), 0.f), layout_(&layout) {}

Eigen::Map<nn::Mat> Grads::view(const std::string& name) {
  return layout_->map_in(g, name);
}

void Grads::zero() { std::fill(g.begin(), g.end(), 0.f); }

void Grads::add(const Grads& other) {
  for (size_t i = 0; i < g.size(); ++i) g[i] += other.g[i];
}

// ---------------------------------------------------------------------------

namespace {

std::string ln_g(const std::string& p) { return p + ".g"; }
std::string ln_b(const std::string& p) { return p + ".b"; }

void add_mha(nn::ParamStore& s, const std::string& p, int d) {
  s.add(p + ".wq", d, d);
  s.add(p + ".bq", 1, d);
  s.add(p + ".wk", d, d);
  s.add(p + ".bk", 1, d);
  s.add(p + ".wv", d, d);
  s.add(p + ".bv", 1, d);
  s.add(p + ".wo", d, d);
  s.add(p + ".bo", 1, d);
}

void add_ln(nn::ParamStore& s, const std::string& p, int d) {
  s.add(ln_g(p), 1, d);
  s.add(ln_b(p), 1, d);
}

void add_ffn(nn::ParamStore& s, const std::string& p, int d, int mult) {
  s.add(p + ".w1", d, d * mult);
  s.add(p + ".b1", 1, d * mult);
  s.add(p + ".w2", d * mult, d);
  s.add(p + ".b2", 1, d);
}

}  // namespace

Model::Model(const ModelConfig& cfg, uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  build();
  init_params(seed);
}

void Model::build() {
  const int d = cfg_.embed_dim;
  store_.add("patch.w", 3 * cfg_.patch * cfg_.patch, d);
  store_.add("patch.b", 1, d);
  store_.add("img.pos", cfg_.img_tokens(), d);
  store_.add("text.emb", vocab_.size(), d);
  store_.add("text.pos", cfg_.max_text_len, d);
  for (int i = 0; i < cfg_.text_layers; ++i) {
    std::string p = "text." + std::to_string(i);
    add_ln(store_, p + ".ln1", d);
    add_mha(store_, p + ".attn", d);
    add_ln(store_, p + ".ln2", d);
    add_ffn(store_, p + ".ffn", d, cfg_.ffn_mult);
  }
  add_ln(store_, "text.final", d);
  for (int i = 0; i < cfg_.img_layers; ++i) {
    std::string p = "img." + std::to_string(i);
    add_ln(store_, p + ".ln1", d);
    add_mha(store_, p + ".self", d);
    add_ln(store_, p + ".ln2", d);
    add_mha(store_, p + ".cross", d);
    store_.add(p + ".beta", 1, 1);
    add_ln(store_, p + ".ln3", d);
    add_ffn(store_, p + ".ffn", d, cfg_.ffn_mult);
  }
  add_ln(store_, "img.final", d);
  store_.add("dec.emb", cfg_.vocab(), d);
  store_.add("dec.pos", cfg_.seq_len() - 1, d);
  for (int i = 0; i < cfg_.dec_layers; ++i) {
    std::string p = "dec." + std::to_string(i);
    add_ln(store_, p + ".ln1", d);
    add_mha(store_, p + ".self", d);
    add_ln(store_, p + ".ln2", d);
    add_mha(store_, p + ".cross", d);
    add_ln(store_, p + ".ln3", d);
    add_ffn(store_, p + ".ffn", d, cfg_.ffn_mult);
  }
  add_ln(store_, "dec.final", d);
  store_.add("dec.out.w", d, cfg_.vocab());
  store_.add("dec.out.b", 1, cfg_.vocab());
}

void Model::init_params(uint64_t seed) {
  Rng rng(derive_seed(seed, 0x10de1));
  auto is_bias = [](const std::string& n) {
    for (const char* suf : {".b", ".b1", ".b2", ".bq", ".bk", ".bv", ".bo"})
      if (n.ends_with(suf)) return true;
    return false;
  };
  for (const auto& e : store_.entries()) {
    auto m = store_.param(e.name);
    if (e.name.ends_with(".beta")) {
      m.setZero();  // the gate opens during training
    } else if (e.name.ends_with(".g")) {
      m.setOnes();  // layer-norm gains
    } else if (is_bias(e.name)) {
      m.setZero();
    } else if (e.name.find("emb") != std::string::npos || e.name.find("pos") != std::string::npos) {
      nn::uniform_init(m, rng, 0.02f);
    } else {
      nn::xavier_init(m, rng);
    }
  }
}

nn::MhaParamRefs<float> Model::mha_params(const std::string& p) {
  return {store_.param(p + ".wq"), store_.param(p + ".bq"), store_.param(p + ".wk"),
          store_.param(p + ".bk"), store_.param(p + ".wv"), store_.param(p + ".bv"),
          store_.param(p + ".wo"), store_.param(p + ".bo")};
}

nn::MhaGradRefs<float> Model::mha_grads(Grads& g, const std::string& p) const {
  return {g.view(p + ".wq"), g.view(p + ".bq"), g.view(p + ".wk"), g.view(p + ".bk"),
          g.view(p + ".wv"), g.view(p + ".bv"), g.view(p + ".wo"), g.view(p + ".bo")};
}

namespace {

// x += FFN(LN(x)), caching intermediates
void ffn_block_fwd(nn::ParamStore& s, const std::string& lnp, const std::string& fp, Mat& x,
                   BlockFfnCache& c) {
  c.x_in = x;
  c.x_ln = nn::layernorm_fwd<float>(x, Mat(s.param(ln_g(lnp))), Mat(s.param(ln_b(lnp))), &c.ln);
  c.h_pre = nn::linear_fwd<float>(c.x_ln, Mat(s.param(fp + ".w1")), Mat(s.param(fp + ".b1")));
  c.h_act = nn::gelu_fwd<float>(c.h_pre);
  x += nn::linear_fwd<float>(c.h_act, Mat(s.param(fp + ".w2")), Mat(s.param(fp + ".b2")));
}

// dx arrives as gradient of the block output; returns gradient of the input
void ffn_block_bwd(nn::ParamStore& s, Grads& g, const std::string& lnp, const std::string& fp,
                   const BlockFfnCache& c, Mat& dx) {
  Mat dh_act(c.h_act.rows(), c.h_act.cols());
  dh_act.setZero();
  nn::linear_bwd<float>(c.h_act, Mat(s.param(fp + ".w2")), dx, dh_act, g.view(fp + ".w2"),
                        g.view(fp + ".b2"));
  Mat dh_pre = nn::gelu_bwd<float>(c.h_pre, dh_act);
  Mat dx_ln(c.x_ln.rows(), c.x_ln.cols());
  dx_ln.setZero();
  nn::linear_bwd<float>(c.x_ln, Mat(s.param(fp + ".w1")), dh_pre, dx_ln, g.view(fp + ".w1"),
                        g.view(fp + ".b1"));
  // residual: dx already carries the skip path
  nn::layernorm_bwd<float>(dx_ln, Mat(s.param(ln_g(lnp))), c.ln, dx, g.view(ln_g(lnp)),
                           g.view(ln_b(lnp)));
}

}  // namespace

void Model::encode_fused(const Mat& patches, const std::vector<int>& text_ids, ModelCache& c,
                         bool disable_cross) {
  const int d = cfg_.embed_dim;
  if (patches.rows() != cfg_.img_tokens() || patches.cols() != 3 * cfg_.patch * cfg_.patch)
    throw_error(Errc::run, "encode_fused: patch grid does not match model config");
  if (static_cast<int>(text_ids.size()) != cfg_.max_text_len)
    throw_error(Errc::run, "encode_fused: text ids must be padded to max_text_len");

  c.patches = patches;
  c.text_ids = text_ids;
  c.text_valid.assign(text_ids.size(), 1);
  c.n_text_valid = 0;
  for (size_t i = 0; i < text_ids.size(); ++i) {
    c.text_valid[i] = text_ids[i] != TextVocab::kPad;
    c.n_text_valid += c.text_valid[i];
  }
  if (c.n_text_valid == 0) throw_error(Errc::run, "encode_fused: empty text");
  c.cross_disabled = disable_cross;

  // text stream
  auto temb = store_.param("text.emb");
  auto tpos = store_.param("text.pos");
  c.y0.resize(cfg_.max_text_len, d);
  for (int i = 0; i < cfg_.max_text_len; ++i)
    c.y0.row(i) = temb.row(text_ids[static_cast<size_t>(i)]) + tpos.row(i);
  Mat y = c.y0;
  c.text_layers.resize(static_cast<size_t>(cfg_.text_layers));
  nn::MhaMasks tmask;
  tmask.key_valid = &c.text_valid;
  for (int i = 0; i < cfg_.text_layers; ++i) {
    auto& lc = c.text_layers[static_cast<size_t>(i)];
    std::string p = "text." + std::to_string(i);
    lc.x_in = y;
    lc.x_ln = nn::layernorm_fwd<float>(y, Mat(store_.param(ln_g(p + ".ln1"))),
                                       Mat(store_.param(ln_b(p + ".ln1"))), &lc.ln1);
    y += nn::mha_fwd<float>(lc.x_ln, lc.x_ln, mha_params(p + ".attn"), cfg_.heads, tmask, &lc.attn);
    ffn_block_fwd(store_, p + ".ln2", p + ".ffn", y, lc.ffn);
  }
  c.text_pre_final = y;
  c.y_text = nn::layernorm_fwd<float>(y, Mat(store_.param("text.final.g")),
                                      Mat(store_.param("text.final.b")), &c.text_final);

  // image stream with gated fusion
  c.x0 = nn::linear_fwd<float>(patches, Mat(store_.param("patch.w")), Mat(store_.param("patch.b")));
  c.x0 += Mat(store_.param("img.pos"));
  Mat x = c.x0;
  c.img_layers.resize(static_cast<size_t>(cfg_.img_layers));
  nn::MhaMasks none;
  for (int i = 0; i < cfg_.img_layers; ++i) {
    auto& lc = c.img_layers[static_cast<size_t>(i)];
    std::string p = "img." + std::to_string(i);
    lc.x_in = x;
    lc.x_ln = nn::layernorm_fwd<float>(x, Mat(store_.param(ln_g(p + ".ln1"))),
                                       Mat(store_.param(ln_b(p + ".ln1"))), &lc.ln1);
    lc.s_out = nn::mha_fwd<float>(lc.x_ln, lc.x_ln, mha_params(p + ".self"), cfg_.heads, none, &lc.self);
    if (!disable_cross) {
      lc.beta = store_.param(p + ".beta")(0, 0);
      lc.s_ln = nn::layernorm_fwd<float>(lc.s_out, Mat(store_.param(ln_g(p + ".ln2"))),
                                         Mat(store_.param(ln_b(p + ".ln2"))), &lc.ln2);
      lc.c_out = nn::mha_fwd<float>(lc.s_ln, c.y_text, mha_params(p + ".cross"), cfg_.heads, tmask,
                                    &lc.cross);
      x = lc.x_in + (1.0f - lc.beta) * lc.s_out + lc.beta * lc.c_out;
    } else {
      x = lc.x_in + lc.s_out;
    }
    lc.x_gated = x;
    ffn_block_fwd(store_, p + ".ln3", p + ".ffn", x, lc.ffn);
  }
  c.img_pre_final = x;
  c.memory = nn::layernorm_fwd<float>(x, Mat(store_.param("img.final.g")),
                                      Mat(store_.param("img.final.b")), &c.img_final);

  // attention map: last layer's cross scores, softmaxed over image positions
  // per (head, valid text token), head- and token-averaged
  const int n_img = cfg_.img_tokens();
  c.attn_map.resize(n_img);
  if (disable_cross) {
    c.map_probs.clear();
    c.attn_map.setConstant(1.0f / float(n_img));
    return;
  }
  const auto& last = c.img_layers.back();
  c.map_probs.assign(static_cast<size_t>(cfg_.heads), Mat());
  c.attn_map.setZero();
  float coef = 1.0f / (float(cfg_.heads) * float(c.n_text_valid));
  for (int h = 0; h < cfg_.heads; ++h) {
    Mat& mp = c.map_probs[static_cast<size_t>(h)];
    mp.resize(n_img, cfg_.max_text_len);
    mp.setZero();
    const Mat& sc = last.cross.scores[static_cast<size_t>(h)];
    for (int s = 0; s < cfg_.max_text_len; ++s) {
      if (!c.text_valid[static_cast<size_t>(s)]) continue;
      float mx = sc.col(s).maxCoeff();
      Vec e = (sc.col(s).array() - mx).exp();
      mp.col(s) = e / e.sum();
      c.attn_map += coef * mp.col(s);
    }
  }
}

void Model::decode_teacher(const std::vector<int>& full_seq, ModelCache& c) {
  const int d = cfg_.embed_dim;
  const int li = cfg_.seq_len() - 1;
  if (static_cast<int>(full_seq.size()) != cfg_.seq_len())
    throw_error(Errc::run, "decode_teacher: sequence length does not match config");
  c.dec_in.assign(full_seq.begin(), full_seq.end() - 1);
  auto demb = store_.param("dec.emb");
  auto dpos = store_.param("dec.pos");
  c.h0.resize(li, d);
  for (int i = 0; i < li; ++i) c.h0.row(i) = demb.row(c.dec_in[static_cast<size_t>(i)]) + dpos.row(i);
  Mat h = c.h0;
  c.dec_layers.resize(static_cast<size_t>(cfg_.dec_layers));
  nn::MhaMasks causal;
  causal.causal = true;
  nn::MhaMasks none;
  for (int i = 0; i < cfg_.dec_layers; ++i) {
    auto& lc = c.dec_layers[static_cast<size_t>(i)];
    std::string p = "dec." + std::to_string(i);
    lc.h_in = h;
    lc.h_ln = nn::layernorm_fwd<float>(h, Mat(store_.param(ln_g(p + ".ln1"))),
                                       Mat(store_.param(ln_b(p + ".ln1"))), &lc.ln1);
    h += nn::mha_fwd<float>(lc.h_ln, lc.h_ln, mha_params(p + ".self"), cfg_.heads, causal, &lc.self);
    lc.h_mid = h;
    lc.h_ln2 = nn::layernorm_fwd<float>(h, Mat(store_.param(ln_g(p + ".ln2"))),
                                        Mat(store_.param(ln_b(p + ".ln2"))), &lc.ln2);
    h += nn::mha_fwd<float>(lc.h_ln2, c.memory, mha_params(p + ".cross"), cfg_.heads, none, &lc.cross);
    ffn_block_fwd(store_, p + ".ln3", p + ".ffn", h, lc.ffn);
  }
  c.dec_pre_final = h;
  c.dec_out = nn::layernorm_fwd<float>(h, Mat(store_.param("dec.final.g")),
                                       Mat(store_.param("dec.final.b")), &c.dec_final);
  c.logits = nn::linear_fwd<float>(c.dec_out, Mat(store_.param("dec.out.w")),
                                   Mat(store_.param("dec.out.b")));
}

void Model::backward(ModelCache& c, const Mat& dlogits, const Vec& dmap, Grads& g) {
  const int d = cfg_.embed_dim;
  const int li = cfg_.seq_len() - 1;
  const int n_img = cfg_.img_tokens();

  Mat dmem(n_img, d);
  dmem.setZero();

  // decoder
  if (dlogits.size() > 0) {
    Mat ddec_out(li, d);
    ddec_out.setZero();
    nn::linear_bwd<float>(c.dec_out, Mat(store_.param("dec.out.w")), dlogits, ddec_out,
                          g.view("dec.out.w"), g.view("dec.out.b"));
    Mat dh(li, d);
    dh.setZero();
    nn::layernorm_bwd<float>(ddec_out, Mat(store_.param("dec.final.g")), c.dec_final, dh,
                             g.view("dec.final.g"), g.view("dec.final.b"));
    for (int i = cfg_.dec_layers - 1; i >= 0; --i) {
      auto& lc = c.dec_layers[static_cast<size_t>(i)];
      std::string p = "dec." + std::to_string(i);
      ffn_block_bwd(store_, g, p + ".ln3", p + ".ffn", lc.ffn, dh);
      Mat dh_ln2(li, d);
      dh_ln2.setZero();
      nn::mha_bwd<float>(dh, mha_params(p + ".cross"), mha_grads(g, p + ".cross"), cfg_.heads,
                         lc.cross, dh_ln2, dmem);
      nn::layernorm_bwd<float>(dh_ln2, Mat(store_.param(ln_g(p + ".ln2"))), lc.ln2, dh,
                               g.view(ln_g(p + ".ln2")), g.view(ln_b(p + ".ln2")));
      Mat dh_ln(li, d);
      dh_ln.setZero();
      nn::mha_bwd<float>(dh, mha_params(p + ".self"), mha_grads(g, p + ".self"), cfg_.heads,
                         lc.self, dh_ln, dh_ln);
      nn::layernorm_bwd<float>(dh_ln, Mat(store_.param(ln_g(p + ".ln1"))), lc.ln1, dh,
                               g.view(ln_g(p + ".ln1")), g.view(ln_b(p + ".ln1")));
    }
    // embeddings
    auto demb_g = g.view("dec.emb");
    auto dpos_g = g.view("dec.pos");
    for (int i = 0; i < li; ++i) {
      demb_g.row(c.dec_in[static_cast<size_t>(i)]) += dh.row(i);
      dpos_g.row(i) += dh.row(i);
    }
  }

  // attention-map gradient enters the last fusion layer's cross scores
  std::vector<Mat> dscores_map;
  bool have_map_grad = !c.cross_disabled && dmap.size() > 0 && dmap.cwiseAbs().maxCoeff() > 0.f;
  if (have_map_grad) {
    dscores_map.assign(static_cast<size_t>(cfg_.heads), Mat());
    float coef = 1.0f / (float(cfg_.heads) * float(c.n_text_valid));
    for (int h = 0; h < cfg_.heads; ++h) {
      Mat& ds = dscores_map[static_cast<size_t>(h)];
      ds.resize(n_img, cfg_.max_text_len);
      ds.setZero();
      const Mat& mp = c.map_probs[static_cast<size_t>(h)];
      for (int s = 0; s < cfg_.max_text_len; ++s) {
        if (!c.text_valid[static_cast<size_t>(s)]) continue;
        Vec p = mp.col(s);
        Vec dp = dmap * coef;
        float dot = p.dot(dp);
        ds.col(s) = p.cwiseProduct((dp.array() - dot).matrix());
      }
    }
  }

  // image stream
  Mat dx(n_img, d);
  dx.setZero();
  nn::layernorm_bwd<float>(dmem, Mat(store_.param("img.final.g")), c.img_final, dx,
                           g.view("img.final.g"), g.view("img.final.b"));
  Mat dy_text(cfg_.max_text_len, d);
  dy_text.setZero();
  for (int i = cfg_.img_layers - 1; i >= 0; --i) {
    auto& lc = c.img_layers[static_cast<size_t>(i)];
    std::string p = "img." + std::to_string(i);
    ffn_block_bwd(store_, g, p + ".ln3", p + ".ffn", lc.ffn, dx);
    Mat dx_in = dx;
    if (!c.cross_disabled) {
      Mat ds = (1.0f - lc.beta) * dx;
      Mat dc = lc.beta * dx;
      g.view(p + ".beta")(0, 0) += (dx.cwiseProduct(lc.c_out - lc.s_out)).sum();
      const std::vector<Mat>* extra = nullptr;
      if (have_map_grad && i == cfg_.img_layers - 1) extra = &dscores_map;
      if (extra || lc.beta != 0.f || dc.cwiseAbs().maxCoeff() > 0.f) {
        Mat ds_ln(n_img, d);
        ds_ln.setZero();
        nn::mha_bwd<float>(dc, mha_params(p + ".cross"), mha_grads(g, p + ".cross"), cfg_.heads,
                           lc.cross, ds_ln, dy_text, extra);
        nn::layernorm_bwd<float>(ds_ln, Mat(store_.param(ln_g(p + ".ln2"))), lc.ln2, ds,
                                 g.view(ln_g(p + ".ln2")), g.view(ln_b(p + ".ln2")));
      }
      Mat dx_ln(n_img, d);
      dx_ln.setZero();
      nn::mha_bwd<float>(ds, mha_params(p + ".self"), mha_grads(g, p + ".self"), cfg_.heads,
                         lc.self, dx_ln, dx_ln);
      nn::layernorm_bwd<float>(dx_ln, Mat(store_.param(ln_g(p + ".ln1"))), lc.ln1, dx_in,
                               g.view(ln_g(p + ".ln1")), g.view(ln_b(p + ".ln1")));
    } else {
      Mat dx_ln(n_img, d);
      dx_ln.setZero();
      nn::mha_bwd<float>(dx, mha_params(p + ".self"), mha_grads(g, p + ".self"), cfg_.heads,
                         lc.self, dx_ln, dx_ln);
      nn::layernorm_bwd<float>(dx_ln, Mat(store_.param(ln_g(p + ".ln1"))), lc.ln1, dx_in,
                               g.view(ln_g(p + ".ln1")), g.view(ln_b(p + ".ln1")));
    }
    dx = dx_in;
  }
  {
    Mat dpatches(c.patches.rows(), c.patches.cols());
    dpatches.setZero();
    nn::linear_bwd<float>(c.patches, Mat(store_.param("patch.w")), dx, dpatches, g.view("patch.w"),
                          g.view("patch.b"));
    g.view("img.pos") += dx;
  }

  // text stream
  Mat dy(cfg_.max_text_len, d);
  dy.setZero();
  nn::layernorm_bwd<float>(dy_text, Mat(store_.param("text.final.g")), c.text_final, dy,
                           g.view("text.final.g"), g.view("text.final.b"));
  for (int i = cfg_.text_layers - 1; i >= 0; --i) {
    auto& lc = c.text_layers[static_cast<size_t>(i)];
    std::string p = "text." + std::to_string(i);
    ffn_block_bwd(store_, g, p + ".ln2", p + ".ffn", lc.ffn, dy);
    Mat dy_ln(cfg_.max_text_len, d);
    dy_ln.setZero();
    nn::mha_bwd<float>(dy, mha_params(p + ".attn"), mha_grads(g, p + ".attn"), cfg_.heads, lc.attn,
                       dy_ln, dy_ln);
    nn::layernorm_bwd<float>(dy_ln, Mat(store_.param(ln_g(p + ".ln1"))), lc.ln1, dy,
                             g.view(ln_g(p + ".ln1")), g.view(ln_b(p + ".ln1")));
  }
  auto temb_g = g.view("text.emb");
  auto tpos_g = g.view("text.pos");
  for (int i = 0; i < cfg_.max_text_len; ++i) {
    temb_g.row(c.text_ids[static_cast<size_t>(i)]) += dy.row(i);
    tpos_g.row(i) += dy.row(i);
  }
}

TokenSequence Model::greedy_decode(const ModelCache& c) {
  const int d = cfg_.embed_dim;
  const int heads = cfg_.heads;
  const int dh = d / heads;
  const float scale = 1.0f / std::sqrt(float(dh));
  const int max_coords = 2 * cfg_.contour_points;

  struct LayerState {
    Mat k_self, v_self;  // grows with steps
    Mat k_cross, v_cross;
  };
  std::vector<LayerState> st(static_cast<size_t>(cfg_.dec_layers));
  for (int i = 0; i < cfg_.dec_layers; ++i) {
    std::string p = "dec." + std::to_string(i);
    st[i].k_cross = nn::linear_fwd<float>(c.memory, Mat(store_.param(p + ".cross.wk")),
                                          Mat(store_.param(p + ".cross.bk")));
    st[i].v_cross = nn::linear_fwd<float>(c.memory, Mat(store_.param(p + ".cross.wv")),
                                          Mat(store_.param(p + ".cross.bv")));
    st[i].k_self.resize(0, d);
    st[i].v_self.resize(0, d);
  }

  auto demb = store_.param("dec.emb");
  auto dpos = store_.param("dec.pos");
  TokenSequence out;
  out.tokens.push_back(cfg_.bos());
  int tok = cfg_.bos();
  for (int pos = 0; pos < max_coords; ++pos) {
    Mat h(1, d);
    h = demb.row(tok) + dpos.row(pos);
    for (int i = 0; i < cfg_.dec_layers; ++i) {
      std::string p = "dec." + std::to_string(i);
      nn::LnCache<float> lnc;
      Mat h_ln = nn::layernorm_fwd<float>(h, Mat(store_.param(ln_g(p + ".ln1"))),
                                          Mat(store_.param(ln_b(p + ".ln1"))), &lnc);
      Mat q = nn::linear_fwd<float>(h_ln, Mat(store_.param(p + ".self.wq")),
                                    Mat(store_.param(p + ".self.bq")));
      Mat k = nn::linear_fwd<float>(h_ln, Mat(store_.param(p + ".self.wk")),
                                    Mat(store_.param(p + ".self.bk")));
      Mat v = nn::linear_fwd<float>(h_ln, Mat(store_.param(p + ".self.wv")),
                                    Mat(store_.param(p + ".self.bv")));
      auto& s = st[static_cast<size_t>(i)];
      s.k_self.conservativeResize(s.k_self.rows() + 1, d);
      s.k_self.row(s.k_self.rows() - 1) = k.row(0);
      s.v_self.conservativeResize(s.v_self.rows() + 1, d);
      s.v_self.row(s.v_self.rows() - 1) = v.row(0);
      Mat attn_out(1, d);
      for (int hh = 0; hh < heads; ++hh) {
        auto qh = q.middleCols(hh * dh, dh);
        auto kh = s.k_self.middleCols(hh * dh, dh);
        auto vh = s.v_self.middleCols(hh * dh, dh);
        Mat sc = qh * kh.transpose() * scale;
        Mat pr = nn::softmax_rows<float>(sc);
        attn_out.middleCols(hh * dh, dh) = pr * vh;
      }
      h += nn::linear_fwd<float>(attn_out, Mat(store_.param(p + ".self.wo")),
                                 Mat(store_.param(p + ".self.bo")));
      Mat h_ln2 = nn::layernorm_fwd<float>(h, Mat(store_.param(ln_g(p + ".ln2"))),
                                           Mat(store_.param(ln_b(p + ".ln2"))), &lnc);
      Mat q2 = nn::linear_fwd<float>(h_ln2, Mat(store_.param(p + ".cross.wq")),
                                     Mat(store_.param(p + ".cross.bq")));
      Mat cross_out(1, d);
      for (int hh = 0; hh < heads; ++hh) {
        auto qh = q2.middleCols(hh * dh, dh);
        auto kh = s.k_cross.middleCols(hh * dh, dh);
        auto vh = s.v_cross.middleCols(hh * dh, dh);
        Mat sc = qh * kh.transpose() * scale;
        Mat pr = nn::softmax_rows<float>(sc);
        cross_out.middleCols(hh * dh, dh) = pr * vh;
      }
      h += nn::linear_fwd<float>(cross_out, Mat(store_.param(p + ".cross.wo")),
                                 Mat(store_.param(p + ".cross.bo")));
      Mat h_ln3 = nn::layernorm_fwd<float>(h, Mat(store_.param(ln_g(p + ".ln3"))),
                                           Mat(store_.param(ln_b(p + ".ln3"))), &lnc);
      Mat hp = nn::linear_fwd<float>(h_ln3, Mat(store_.param(p + ".ffn.w1")),
                                     Mat(store_.param(p + ".ffn.b1")));
      Mat ha = nn::gelu_fwd<float>(hp);
      h += nn::linear_fwd<float>(ha, Mat(store_.param(p + ".ffn.w2")),
                                 Mat(store_.param(p + ".ffn.b2")));
    }
    nn::LnCache<float> lnf;
    Mat hf = nn::layernorm_fwd<float>(h, Mat(store_.param("dec.final.g")),
                                      Mat(store_.param("dec.final.b")), &lnf);
    Mat logits = nn::linear_fwd<float>(hf, Mat(store_.param("dec.out.w")),
                                       Mat(store_.param("dec.out.b")));
    int best = 0;
    float bestv = logits(0, 0);
    for (int v = 1; v < cfg_.vocab(); ++v)
      if (logits(0, v) > bestv) {
        bestv = logits(0, v);
        best = v;
      }
    if (best == cfg_.eos()) {
      out.tokens.push_back(cfg_.eos());
      return out;
    }
    out.tokens.push_back(best);
    tok = best;
  }
  out.tokens.push_back(cfg_.eos());  // cap reached
  return out;
}

std::optional<BinaryMask> Model::predict_mask(const ImageRgb& img, const std::string& text,
                                              ModelCache& c, bool disable_cross) {
  Mat patches = patches_from_image(img, cfg_);
  std::vector<int> ids = vocab_.encode(text, cfg_.max_text_len);
  encode_fused(patches, ids, c, disable_cross);
  TokenSequence seq = greedy_decode(c);
  try {
    ContourSequence contour = tokens_to_contour(seq, cfg_.canvas, cfg_.canvas, cfg_.bins);
    return contour_to_mask(contour, cfg_.canvas, cfg_.canvas);
  } catch (const Error&) {
    return std::nullopt;
  }
}

}  // namespace refseg
