// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <string>
#include <vector>

#include "refseg/geometry.hpp"
#include "refseg/image.hpp"
#include "refseg/nn.hpp"

namespace refseg {

// Coordinate tokens are per-axis bins 0..bins-1; BOS = bins, EOS = bins+1.
// Layout of a complete sequence: BOS, x1, y1, ..., xK, yK, EOS.
struct TokenSequence {
  std::vector<int> tokens;
  bool operator==(const TokenSequence&) const = default;
};

struct ModelConfig {
  int canvas = 128;
  int patch = 16;
  int embed_dim = 64;
  int heads = 4;
  int img_layers = 4;
  int text_layers = 2;
  int dec_layers = 2;
  int ffn_mult = 2;
  int bins = 64;           // coordinate bins per axis
  int contour_points = 16; // K
  int max_text_len = 12;

  int grid() const { return canvas / patch; }
  int img_tokens() const { return grid() * grid(); }
  int vocab() const { return bins + 2; }
  int bos() const { return bins; }
  int eos() const { return bins + 1; }
  int seq_len() const { return 2 * contour_points + 2; }
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

// Closed-grammar tokenizer. The vocabulary is fixed in code: the generator
// and the parser share one word list.
class TextVocab {
public:
  TextVocab();
  int size() const { return static_cast<int>(words_.size()) + 2; }  // + PAD, UNK
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  // lowercased whitespace tokenization, padded/truncated to max_len
  std::vector<int> encode(const std::string& text, int max_len) const;

private:
  std::vector<std::string> words_;
};

// pixel coordinate -> bin and back; round-trip error <= size/(2*bins)
int coord_to_bin(float c, int size, int bins);
float bin_to_coord(int b, int size, int bins);

TokenSequence contour_to_tokens(const ContourSequence& c, int width, int height, int bins);
// Throws Errc::run on malformed layout (bad frame, odd coordinate count,
// fewer than 3 points).
ContourSequence tokens_to_contour(const TokenSequence& seq, int width, int height, int bins);

// normalized patch rows (img_tokens x 3*patch*patch)
nn::Mat patches_from_image(const ImageRgb& img, const ModelConfig& cfg);

// ---------------------------------------------------------------------------

struct BlockFfnCache {
  nn::LnCache<float> ln;
  nn::Mat x_in, x_ln, h_pre, h_act;
};

struct TextLayerCache {
  nn::LnCache<float> ln1;
  nn::Mat x_in, x_ln;
  nn::MhaCache<float> attn;
  BlockFfnCache ffn;
};

struct ImgLayerCache {
  nn::LnCache<float> ln1;
  nn::Mat x_in, x_ln;
  nn::MhaCache<float> self;
  nn::LnCache<float> ln2;
  nn::Mat s_out, s_ln;
  nn::MhaCache<float> cross;
  nn::Mat c_out;
  float beta = 0.f;
  nn::Mat x_gated;
  BlockFfnCache ffn;
};

struct DecLayerCache {
  nn::LnCache<float> ln1;
  nn::Mat h_in, h_ln;
  nn::MhaCache<float> self;
  nn::LnCache<float> ln2;
  nn::Mat h_mid, h_ln2;
  nn::MhaCache<float> cross;
  BlockFfnCache ffn;
};

// Per-sample forward state; reused across steps to avoid reallocation.
struct ModelCache {
  nn::Mat patches;
  std::vector<int> text_ids;
  std::vector<uint8_t> text_valid;
  int n_text_valid = 0;

  nn::Mat y0, x0;
  std::vector<TextLayerCache> text_layers;
  std::vector<ImgLayerCache> img_layers;
  nn::Mat text_pre_final;
  nn::LnCache<float> text_final;
  nn::Mat y_text;
  nn::Mat img_pre_final;
  nn::LnCache<float> img_final;
  nn::Mat memory;

  std::vector<nn::Mat> map_probs;  // per head, img_tokens x text_len (zero cols at pads)
  nn::Vec attn_map;                // img_tokens, nonnegative

  std::vector<int> dec_in;
  nn::Mat h0;
  std::vector<DecLayerCache> dec_layers;
  nn::Mat dec_pre_final;
  nn::LnCache<float> dec_final;
  nn::Mat dec_out;
  nn::Mat logits;  // (seq_len-1) x vocab

  bool cross_disabled = false;
};

// Gradient buffer matching a ParamStore layout; each worker thread owns one.
struct Grads {
  explicit Grads(const nn::ParamStore& layout);
  Eigen::Map<nn::Mat> view(const std::string& name);
  void zero();
  void add(const Grads& other);
  std::vector<float> g;

private:
  const nn::ParamStore* layout_;
};

class Model {
public:
  Model(const ModelConfig& cfg, uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  nn::ParamStore& store() { return store_; }
  const nn::ParamStore& store() const { return store_; }

  // Eq-style gated fusion of image and text streams. The attention map is the
  // last fusion layer's cross attention, softmaxed over image positions per
  // (head, text token), then averaged over heads and non-pad text tokens.
  // With disable_cross the cross branch is skipped entirely (ablation arm).
  void encode_fused(const nn::Mat& patches, const std::vector<int>& text_ids, ModelCache& c,
                    bool disable_cross = false);

  // Teacher-forced pass; fills c.logits with one row per target position.
  void decode_teacher(const std::vector<int>& full_seq, ModelCache& c);

  // Gradients of (dlogits, dmap) w.r.t. all parameters, accumulated into g.
  void backward(ModelCache& c, const nn::Mat& dlogits, const nn::Vec& dmap, Grads& g);

  // Greedy autoregressive decode; stops at EOS or after 2K coordinate tokens.
  TokenSequence greedy_decode(const ModelCache& c);

  // convenience: encode + decode to a mask; nullopt when the prediction is
  // invalid (fewer than 3 points or malformed layout)
  std::optional<BinaryMask> predict_mask(const ImageRgb& img, const std::string& text,
                                         ModelCache& c, bool disable_cross = false);

  const TextVocab& vocab() const { return vocab_; }

private:
  void build();
  void init_params(uint64_t seed);
  nn::MhaParamRefs<float> mha_params(const std::string& prefix);
  nn::MhaGradRefs<float> mha_grads(Grads& g, const std::string& prefix) const;

  ModelConfig cfg_;
  TextVocab vocab_;
  nn::ParamStore store_;
};

}  // namespace refseg
