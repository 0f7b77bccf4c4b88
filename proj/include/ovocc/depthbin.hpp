#pragma once

#include <cstdint>
#include <vector>

#include "ovocc/ad.hpp"
#include "ovocc/bin_spec.hpp"
#include "ovocc/params.hpp"

namespace ovocc::depthbin {

// Metric depth per (camera, row, col) with a ground-truth availability mask.
struct DepthMap {
  Tensor values;                     // (camera, row, col), metres
  std::vector<std::uint8_t> mask;    // same element count; 1 = has depth
  std::size_t masked_count() const;
};

// Per-pixel bin similarities, (camera, row, col, bin).
struct BinDepthMap {
  Tensor probs;
};

struct BinTarget {
  Tensor onehot;                      // (camera, row, col, bin)
  std::vector<std::uint8_t> coverage; // one entry per pixel
};

struct LoraAdapter {
  ad::Var down;  // (rank, in)
  ad::Var up;    // (out, rank), zero at init
  std::size_t rank = 1;
  double scale = 1.0;
};

// y = W x + b + scale * up (down x); W and b are frozen.
ad::Var lora_linear(const ad::Var& x, const ad::Var& base_weight, const ad::Var& base_bias,
                    const LoraAdapter& adapter);

struct R2mParams {
  ad::Var s, t;         // scalars
  ad::Var w1, b1;       // (hidden, 1), (hidden)
  ad::Var w2, b2;       // (1, hidden), (1)
};

// metric = softplus(s * rel + t + MLP(rel)). Throws NonFiniteInput.
ad::Var relative_to_metric(const ad::Var& rel, const R2mParams& r2m);

// d'_j = softmax_j(beta * -|d - c_j|); output shape is d's shape + (n_bins).
ad::Var metric_to_bin(const ad::Var& depth, const BinSpec& bins);

// One-hot of the bin with |d - c_j| <= w / 2 (lowest index on ties); pixels
// outside every bin or without ground truth get a zero row and no coverage.
BinTarget gt_bin_onehot(const DepthMap& d_hat, const BinSpec& bins);

// sqrt(mean(g^2) - alpha * mean(g)^2), g = ln d - ln d_hat over masked pixels.
// Throws EmptyMask.
ad::Var silog_loss(const ad::Var& depth, const DepthMap& d_hat, double alpha);

// Mean over covered pixels of -ln(prob at target bin). Throws EmptyCoverage.
ad::Var bin_ce_loss(const ad::Var& probs, const BinTarget& target);

struct LossWeights {
  double first = 1.0;
  double second = 1.0;
};

// w.first * a + w.second * b. Throws InvalidArgument for negative weights.
ad::Var weighted_sum(const ad::Var& a, const ad::Var& b, LossWeights w);
inline ad::Var stage1_loss(const ad::Var& l_pix, const ad::Var& l_bd, LossWeights w) {
  return weighted_sum(l_pix, l_bd, w);
}

struct DepthModelConfig {
  std::size_t in_channels = 4;
  std::size_t hidden = 128;
  std::size_t lora_rank = 1;
  double lora_scale = 1.0;
  bool lora_enabled = true;
  std::size_t r2m_hidden = 16;
  std::size_t downsample = 8;  // image pixels per feature cell
  BinSpec bins;
  std::uint64_t seed = 7;
};

// Frozen three-layer pointwise network over block-pooled pixels (relative
// depth), LoRA on each of its linear layers, and the relative-to-metric
// adaptor. Parameters live in `params`:
//   depth.backbone  frozen
//   depth.lora      trainable when lora_enabled
//   depth.r2m       trainable
class DepthModel {
 public:
  explicit DepthModel(const DepthModelConfig& cfg);

  const DepthModelConfig& config() const { return cfg_; }
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }

  // (N, H, W, C) image -> (N, H/ds, W/ds, C) block means.
  Tensor pool_image(const Tensor& image) const;

  ad::Var relative(const Tensor& pooled) const;  // (N, h, w)
  ad::Var metric(const Tensor& pooled) const;    // (N, h, w)
  BinDepthMap predict_bins(const Tensor& image) const;

  const std::vector<LoraAdapter>& adapters() const { return lora_; }
  const R2mParams& r2m() const { return r2m_; }

 private:
  DepthModelConfig cfg_;
  ParamSet params_;
  std::vector<ad::Var> weights_, biases_;
  std::vector<LoraAdapter> lora_;
  R2mParams r2m_;
};

}  // namespace ovocc::depthbin
