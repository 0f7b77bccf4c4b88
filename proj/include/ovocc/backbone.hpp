#pragma once

#include <cstdint>
#include <vector>

#include "ovocc/layers.hpp"

namespace ovocc::backbone {

struct VitConfig {
  std::size_t image_h = 64;
  std::size_t image_w = 176;
  std::size_t channels = 4;
  std::size_t patch = 16;
  std::size_t heads = 2;
  std::size_t head_dim = 16;
  std::size_t layers = 12;
  std::size_t mlp_ratio = 4;
  // 1-based layer numbers whose output tokens feed the side adaptor.
  std::vector<std::size_t> inject_after = {3, 6};
  // The last `bias_layers` layers receive the attention bias.
  std::size_t bias_layers = 3;
  std::size_t head_bias_dim = 8;
  // false: bias added unscaled; true: bias scaled by 1/sqrt(head_dim) like QK^T.
  bool scale_bias = false;
  std::uint64_t seed = 11;

  std::size_t dim() const { return heads * head_dim; }
  std::size_t grid_h() const { return image_h / patch; }
  std::size_t grid_w() const { return image_w / patch; }
  std::size_t visual_tokens() const { return grid_h() * grid_w(); }
  std::size_t tokens() const { return visual_tokens() + 1; }  // [cls] is last
  std::size_t first_bias_layer() const { return layers - bias_layers; }
  void validate() const;
};

// Multi-head self-attention from packed projections.
//   qkv:  (N, T, 3 * heads * head_dim), layout [Q | K | V], heads contiguous
//   bias: undefined, or (N, V, n_bias_layers, heads, head_bias_dim) with
//         V = T - 1 visual tokens; slot `bias_slot` is used.
// logits_h = QK^T / sqrt(head_dim) + bias_scale * A_h A_h^T on the
// visual-visual block; [cls] rows and columns receive no bias.
// Returns (N, T, heads * head_dim). Throws ShapeMismatch.
ad::Var attention(const ad::Var& qkv, std::size_t heads, const ad::Var& bias,
                  std::size_t bias_slot, double bias_scale);

// Post-softmax weights (N, heads, T, T) of the same computation.
Tensor attention_probs(const Tensor& qkv, std::size_t heads, const Tensor* bias,
                       std::size_t bias_slot, double bias_scale);

struct VitLayer {
  ad::Var ln1_g, ln1_b;
  Dense qkv, proj;
  ad::Var ln2_g, ln2_b;
  Mlp mlp;
};

// Frozen toy vision transformer: patch embedding, learned positions, [cls]
// appended after the visual tokens, pre-norm blocks, final norm.
class TinyViT {
 public:
  explicit TinyViT(const VitConfig& cfg);

  const VitConfig& config() const { return cfg_; }
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }
  const std::vector<VitLayer>& layers() const { return layers_; }

  // (N, H, W, C) image -> (N, T, D) tokens.
  Tensor embed(const Tensor& image) const;

  // One block. `bias` may be undefined.
  ad::Var layer_forward(const ad::Var& x, std::size_t layer, const ad::Var& bias) const;
  // Attention weights of one block for inspection, (N, heads, T, T).
  Tensor layer_attention(const Tensor& x, std::size_t layer, const Tensor* bias) const;

  // Everything before the biased layers; depends on the image only.
  struct Prefix {
    Tensor tokens;                // (N, T, D) after first_bias_layer() blocks
    std::vector<Tensor> injected; // per inject_after entry, (N, grid_h, grid_w, D)
  };
  Prefix run_prefix(const Tensor& image) const;

  // Biased blocks plus final norm; returns visual tokens as (N, grid_h, grid_w, D).
  ad::Var run_suffix(const Tensor& prefix_tokens, const ad::Var& bias) const;

  // Visual tokens of `tokens` (N, T, D) as a (N, grid_h, grid_w, D) map.
  Tensor token_map(const Tensor& tokens) const;

 private:
  VitConfig cfg_;
  ParamSet params_;
  ad::Var patch_w_, patch_b_, pos_, cls_;
  std::vector<VitLayer> layers_;
  ad::Var lnf_g_, lnf_b_;
};

struct HsaConfig {
  std::size_t channels = 16;        // body width
  std::size_t head_hidden = 32;
  std::size_t supp_channels = 16;   // S
  std::size_t feature_channels = 16;  // channels of the fused semantic features
  std::size_t fuse_hidden = 32;
  std::size_t blocks = 3;
  bool enabled = true;
  std::uint64_t seed = 13;
};

// High-resolution side adaptor with the semantic fusion MLPs. Components:
//   hsa.body, hsa.head, hsa.fuse
class Hsa {
 public:
  Hsa(const HsaConfig& cfg, const VitConfig& vit);

  const HsaConfig& config() const { return cfg_; }
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }
  std::size_t out_h() const { return 2 * vit_.grid_h(); }
  std::size_t out_w() const { return 2 * vit_.grid_w(); }

  // Residual conv stack at twice the token resolution. Token maps from
  // `injected` (one per VitConfig::inject_after) are resized, projected and
  // added after the first blocks; pass an empty list to skip injection.
  ad::Var body(const Tensor& image, const std::vector<Tensor>& injected) const;

  struct HeadOut {
    ad::Var bias;  // (N, V, bias_layers, heads, head_bias_dim)
    ad::Var supp;  // (N, out_h, out_w, supp_channels)
  };
  HeadOut head(const ad::Var& features) const;

  const Mlp& mlp1() const { return mlp1_; }
  const Mlp& mlp2() const { return mlp2_; }

  // Sets every adaptor parameter to zero (body, head and projections).
  void zero_adaptor();

 private:
  HsaConfig cfg_;
  VitConfig vit_;
  ParamSet params_;
  ad::Var stem_w_, stem_b_;
  struct Block {
    ad::Var w1, b1, w2, b2;
  };
  std::vector<Block> blocks_;
  std::vector<Dense> inject_proj_;
  Mlp bias_mlp_, supp_mlp_;
  Mlp mlp1_, mlp2_;
};

// features = [MLP1(resize(x_last)), MLP2([resize(x_last), S])] with a 3:1
// channel split. x_last is (N, gh, gw, D); S is (N, h, w, Cs) or undefined
// (treated as zero). Throws ChannelsNotDivisible unless channels % 4 == 0.
ad::Var fuse_fsem(const ad::Var& x_last, const ad::Var& supp, const Mlp& mlp1, const Mlp& mlp2,
                  std::size_t channels, std::size_t out_h, std::size_t out_w);

// Frozen-only work for one image batch, reusable across steps.
struct SemanticCache {
  Tensor image;
  TinyViT::Prefix prefix;
};
SemanticCache prepare_semantics(const Tensor& image, const TinyViT& vit);

// Full stage-2 image encoder; returns fused features (N, out_h, out_w, C).
ad::Var encode_semantics(const SemanticCache& cache, const TinyViT& vit, const Hsa& hsa);
ad::Var encode_semantics(const Tensor& image, const TinyViT& vit, const Hsa& hsa);

}  // namespace ovocc::backbone
