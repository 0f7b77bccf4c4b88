#include "ovocc/backbone.hpp"

#include <Eigen/Core>
#include <cmath>
#include <string>

#include "ovocc/error.hpp"

namespace ovocc::backbone {

using ad::Var;

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct AttnDims {
  std::size_t n = 0, t = 0, d = 0, heads = 0, hd = 0, v = 0;
  std::size_t slots = 0, hb = 0;
};

AttnDims check_attention(const Tensor& qkv, std::size_t heads, const Tensor* bias,
                         std::size_t slot) {
  if (qkv.rank() != 3 || heads == 0 || qkv.dim(2) % (3 * heads) != 0 || qkv.dim(1) < 2) {
    throw Error(ErrorCode::kShapeMismatch, "attention: qkv " + shape_str(qkv.shape()) +
                                               " with " + std::to_string(heads) + " heads");
  }
  AttnDims a;
  a.n = qkv.dim(0);
  a.t = qkv.dim(1);
  a.d = qkv.dim(2) / 3;
  a.heads = heads;
  a.hd = a.d / heads;
  a.v = a.t - 1;
  if (bias) {
    const Shape& s = bias->shape();
    if (s.size() != 5 || s[0] != a.n || s[1] != a.v || s[3] != heads || slot >= s[2]) {
      throw Error(ErrorCode::kShapeMismatch, "attention: bias " + shape_str(s) + " for qkv " +
                                                 shape_str(qkv.shape()) + ", slot " +
                                                 std::to_string(slot));
    }
    a.slots = s[2];
    a.hb = s[4];
  }
  return a;
}

void gather_head(const Tensor& qkv, const AttnDims& a, std::size_t n, std::size_t h, RowMat& q,
                 RowMat& k, RowMat& v) {
  q.resize(a.t, a.hd);
  k.resize(a.t, a.hd);
  v.resize(a.t, a.hd);
  for (std::size_t t = 0; t < a.t; ++t) {
    const double* row = qkv.ptr() + (n * a.t + t) * 3 * a.d + h * a.hd;
    for (std::size_t e = 0; e < a.hd; ++e) {
      q(t, e) = row[e];
      k(t, e) = row[a.d + e];
      v(t, e) = row[2 * a.d + e];
    }
  }
}

const double* bias_row(const Tensor& bias, const AttnDims& a, std::size_t n, std::size_t i,
                       std::size_t slot, std::size_t h) {
  return bias.ptr() + (((n * a.v + i) * a.slots + slot) * a.heads + h) * a.hb;
}

// Row-softmaxed attention weights for one (image, head).
RowMat head_probs(const RowMat& q, const RowMat& k, const AttnDims& a, const Tensor* bias,
                  std::size_t n, std::size_t h, std::size_t slot, double bias_scale) {
  RowMat logits = (q * k.transpose()) * (1.0 / std::sqrt(static_cast<double>(a.hd)));
  if (bias) {
    for (std::size_t i = 0; i < a.v; ++i) {
      const double* ai = bias_row(*bias, a, n, i, slot, h);
      for (std::size_t j = 0; j < a.v; ++j) {
        const double* aj = bias_row(*bias, a, n, j, slot, h);
        double s = 0.0;
        for (std::size_t e = 0; e < a.hb; ++e) s += ai[e] * aj[e];
        logits(i, j) += bias_scale * s;
      }
    }
  }
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double mx = logits.row(r).maxCoeff();
    logits.row(r) = (logits.row(r).array() - mx).exp();
    logits.row(r) /= logits.row(r).sum();
  }
  return logits;
}

// Tokens [begin, end) of a (N, T, D) tensor.
Var take_tokens(const Var& x, std::size_t begin, std::size_t end) {
  const Tensor& xv = x.value();
  const std::size_t n = xv.dim(0), t = xv.dim(1), d = xv.dim(2), m = end - begin;
  Tensor out({n, m, d});
  for (std::size_t b = 0; b < n; ++b)
    std::copy(xv.ptr() + (b * t + begin) * d, xv.ptr() + (b * t + end) * d,
              out.ptr() + b * m * d);
  auto xn = x.node();
  return ad::make_op(std::move(out), {x}, [xn, n, t, d, m, begin](ad::Node& self) {
    Tensor g(xn->value.shape());
    for (std::size_t b = 0; b < n; ++b)
      std::copy(self.grad.ptr() + b * m * d, self.grad.ptr() + (b + 1) * m * d,
                g.ptr() + (b * t + begin) * d);
    ad::accumulate(xn, g);
  });
}

Tensor normal_init(Rng& rng, Shape shape, double fan_in, double gain = 1.0) {
  return rng.normal_tensor(std::move(shape), gain / std::sqrt(fan_in));
}

}  // namespace

void VitConfig::validate() const {
  if (patch == 0 || image_h % patch != 0 || image_w % patch != 0 || patch % 2 != 0) {
    throw Error(ErrorCode::kConfig, "vit: image size must be a multiple of an even patch size");
  }
  if (heads == 0 || head_dim == 0 || layers == 0 || bias_layers > layers) {
    throw Error(ErrorCode::kConfig, "vit: invalid layer/head counts");
  }
  for (std::size_t l : inject_after) {
    if (l == 0 || l > first_bias_layer()) {
      throw Error(ErrorCode::kConfig, "vit: injected layer " + std::to_string(l) +
                                          " must precede the biased layers");
    }
  }
}

Var attention(const Var& qkv, std::size_t heads, const Var& bias, std::size_t bias_slot,
              double bias_scale) {
  const Tensor* bv = bias.defined() ? &bias.value() : nullptr;
  const AttnDims a = check_attention(qkv.value(), heads, bv, bias_slot);
  Tensor out({a.n, a.t, a.d});
  RowMat q, k, v;
  for (std::size_t n = 0; n < a.n; ++n) {
    for (std::size_t h = 0; h < heads; ++h) {
      gather_head(qkv.value(), a, n, h, q, k, v);
      const RowMat o = head_probs(q, k, a, bv, n, h, bias_slot, bias_scale) * v;
      for (std::size_t t = 0; t < a.t; ++t)
        for (std::size_t e = 0; e < a.hd; ++e) out[(n * a.t + t) * a.d + h * a.hd + e] = o(t, e);
    }
  }
  auto xn = qkv.node();
  std::shared_ptr<ad::Node> bn = bias.defined() ? bias.node() : nullptr;
  std::vector<Var> inputs{qkv};
  if (bias.defined()) inputs.push_back(bias);
  return ad::make_op(std::move(out), inputs, [xn, bn, a, bias_slot, bias_scale](ad::Node& self) {
    const Tensor* bv = bn ? &bn->value : nullptr;
    const double s = 1.0 / std::sqrt(static_cast<double>(a.hd));
    Tensor gx(xn->value.shape());
    Tensor gb = bn ? Tensor(bn->value.shape()) : Tensor();
    RowMat q, k, v, dout(a.t, a.hd);
    for (std::size_t n = 0; n < a.n; ++n) {
      for (std::size_t h = 0; h < a.heads; ++h) {
        gather_head(xn->value, a, n, h, q, k, v);
        const RowMat p = head_probs(q, k, a, bv, n, h, bias_slot, bias_scale);
        for (std::size_t t = 0; t < a.t; ++t)
          for (std::size_t e = 0; e < a.hd; ++e)
            dout(t, e) = self.grad[(n * a.t + t) * a.d + h * a.hd + e];
        const RowMat dv = p.transpose() * dout;
        const RowMat dp = dout * v.transpose();
        RowMat dl = p.cwiseProduct(dp);
        const Eigen::VectorXd rs = dl.rowwise().sum();
        dl -= p.cwiseProduct(rs.replicate(1, a.t));
        const RowMat dq = (dl * k) * s;
        const RowMat dk = (dl.transpose() * q) * s;
        for (std::size_t t = 0; t < a.t; ++t) {
          double* row = gx.ptr() + (n * a.t + t) * 3 * a.d + h * a.hd;
          for (std::size_t e = 0; e < a.hd; ++e) {
            row[e] += dq(t, e);
            row[a.d + e] += dk(t, e);
            row[2 * a.d + e] += dv(t, e);
          }
        }
        if (bn && bn->requires_grad) {
          for (std::size_t i = 0; i < a.v; ++i) {
            double* gi = gb.ptr() + (((n * a.v + i) * a.slots + bias_slot) * a.heads + h) * a.hb;
            for (std::size_t j = 0; j < a.v; ++j) {
              const double w = bias_scale * (dl(i, j) + dl(j, i));
              const double* aj = bias_row(*bv, a, n, j, bias_slot, h);
              for (std::size_t e = 0; e < a.hb; ++e) gi[e] += w * aj[e];
            }
          }
        }
      }
    }
    ad::accumulate(xn, gx);
    if (bn) ad::accumulate(bn, gb);
  });
}

Tensor attention_probs(const Tensor& qkv, std::size_t heads, const Tensor* bias,
                       std::size_t bias_slot, double bias_scale) {
  const AttnDims a = check_attention(qkv, heads, bias, bias_slot);
  Tensor out({a.n, heads, a.t, a.t});
  RowMat q, k, v;
  for (std::size_t n = 0; n < a.n; ++n) {
    for (std::size_t h = 0; h < heads; ++h) {
      gather_head(qkv, a, n, h, q, k, v);
      const RowMat p = head_probs(q, k, a, bias, n, h, bias_slot, bias_scale);
      std::copy(p.data(), p.data() + p.size(), out.ptr() + (n * heads + h) * a.t * a.t);
    }
  }
  return out;
}

TinyViT::TinyViT(const VitConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(cfg.seed);
  const std::size_t d = cfg.dim(), p = cfg.patch, c = cfg.channels;
  const std::string comp = "vit";
  patch_w_ = params_.add("vit.patch.weight", comp, normal_init(rng, {p, p, c, d}, double(p * p * c)), false);
  patch_b_ = params_.add("vit.patch.bias", comp, Tensor({d}), false);
  pos_ = params_.add("vit.pos", comp, rng.normal_tensor({cfg.tokens(), d}, 0.1), false);
  cls_ = params_.add("vit.cls", comp, rng.normal_tensor({d}, 0.1), false);
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    const std::string b = "vit.l" + std::to_string(l);
    VitLayer L;
    L.ln1_g = params_.add(b + ".ln1.gamma", comp, Tensor({d}, 1.0), false);
    L.ln1_b = params_.add(b + ".ln1.beta", comp, Tensor({d}), false);
    L.qkv = make_dense(params_, b + ".qkv", comp, d, 3 * d, rng, false);
    L.proj = make_dense(params_, b + ".proj", comp, d, d, rng, false, 0.5);
    L.ln2_g = params_.add(b + ".ln2.gamma", comp, Tensor({d}, 1.0), false);
    L.ln2_b = params_.add(b + ".ln2.beta", comp, Tensor({d}), false);
    L.mlp = make_mlp(params_, b + ".mlp", comp, d, cfg.mlp_ratio * d, d, rng, false, 0.5);
    layers_.push_back(L);
  }
  lnf_g_ = params_.add("vit.lnf.gamma", comp, Tensor({d}, 1.0), false);
  lnf_b_ = params_.add("vit.lnf.beta", comp, Tensor({d}), false);
}

Tensor TinyViT::embed(const Tensor& image) const {
  if (image.rank() != 4 || image.dim(1) != cfg_.image_h || image.dim(2) != cfg_.image_w ||
      image.dim(3) != cfg_.channels) {
    throw Error(ErrorCode::kShapeMismatch, "vit: image " + shape_str(image.shape()));
  }
  const Tensor patches =
      ad::conv2d(ad::constant(image), patch_w_, patch_b_, cfg_.patch, 0).value();
  const std::size_t n = image.dim(0), vt = cfg_.visual_tokens(), t = cfg_.tokens(), d = cfg_.dim();
  Tensor out({n, t, d});
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t i = 0; i < t; ++i) {
      for (std::size_t e = 0; e < d; ++e) {
        const double tok = i < vt ? patches[(b * vt + i) * d + e] : cls_.value()[e];
        out[(b * t + i) * d + e] = tok + pos_.value()[i * d + e];
      }
    }
  }
  return out;
}

Var TinyViT::layer_forward(const Var& x, std::size_t layer, const Var& bias) const {
  const VitLayer& L = layers_.at(layer);
  const std::size_t slot = layer >= cfg_.first_bias_layer() ? layer - cfg_.first_bias_layer() : 0;
  const double bs = cfg_.scale_bias ? 1.0 / std::sqrt(double(cfg_.head_dim)) : 1.0;
  const Var qkv = L.qkv(ad::layer_norm(x, L.ln1_g, L.ln1_b));
  const Var att = attention(qkv, cfg_.heads, bias, slot, bs);
  const Var h = ad::add(x, L.proj(att));
  return ad::add(h, L.mlp(ad::layer_norm(h, L.ln2_g, L.ln2_b)));
}

Tensor TinyViT::layer_attention(const Tensor& x, std::size_t layer, const Tensor* bias) const {
  const VitLayer& L = layers_.at(layer);
  const std::size_t slot = layer >= cfg_.first_bias_layer() ? layer - cfg_.first_bias_layer() : 0;
  const double bs = cfg_.scale_bias ? 1.0 / std::sqrt(double(cfg_.head_dim)) : 1.0;
  const Tensor qkv = L.qkv(ad::layer_norm(ad::constant(x), L.ln1_g, L.ln1_b)).value();
  return attention_probs(qkv, cfg_.heads, bias, slot, bs);
}

TinyViT::Prefix TinyViT::run_prefix(const Tensor& image) const {
  Prefix p;
  Var x = ad::constant(embed(image));
  for (std::size_t l = 0; l < cfg_.first_bias_layer(); ++l) {
    x = layer_forward(x, l, Var());
    for (std::size_t inj : cfg_.inject_after) {
      if (inj == l + 1) p.injected.push_back(token_map(x.value()));
    }
  }
  p.tokens = x.value();
  return p;
}

Var TinyViT::run_suffix(const Tensor& prefix_tokens, const Var& bias) const {
  Var x = ad::constant(prefix_tokens);
  for (std::size_t l = cfg_.first_bias_layer(); l < cfg_.layers; ++l) {
    x = layer_forward(x, l, bias);
  }
  x = ad::layer_norm(x, lnf_g_, lnf_b_);
  const std::size_t n = prefix_tokens.dim(0);
  return ad::reshape(take_tokens(x, 0, cfg_.visual_tokens()),
                     {n, cfg_.grid_h(), cfg_.grid_w(), cfg_.dim()});
}

Tensor TinyViT::token_map(const Tensor& tokens) const {
  const std::size_t n = tokens.dim(0);
  return take_tokens(ad::constant(tokens), 0, cfg_.visual_tokens())
      .value()
      .reshaped({n, cfg_.grid_h(), cfg_.grid_w(), cfg_.dim()});
}

Hsa::Hsa(const HsaConfig& cfg, const VitConfig& vit) : cfg_(cfg), vit_(vit) {
  vit_.validate();
  if (cfg.feature_channels % 4 != 0) {
    throw Error(ErrorCode::kChannelsNotDivisible,
                "feature channels " + std::to_string(cfg.feature_channels) + " not divisible by 4");
  }
  Rng rng(cfg.seed);
  const std::size_t ch = cfg.channels, s = vit.patch / 2, d = vit.dim();
  stem_w_ = params_.add("hsa.stem.weight", "hsa.body",
                        normal_init(rng, {s, s, vit.channels, ch}, double(s * s * vit.channels)), true);
  stem_b_ = params_.add("hsa.stem.bias", "hsa.body", Tensor({ch}), true);
  for (std::size_t b = 0; b < cfg.blocks; ++b) {
    const std::string n = "hsa.block" + std::to_string(b);
    Block blk;
    blk.w1 = params_.add(n + ".conv1.weight", "hsa.body", normal_init(rng, {3, 3, ch, ch}, 9.0 * ch), true);
    blk.b1 = params_.add(n + ".conv1.bias", "hsa.body", Tensor({ch}), true);
    blk.w2 = params_.add(n + ".conv2.weight", "hsa.body", normal_init(rng, {3, 3, ch, ch}, 9.0 * ch, 0.5), true);
    blk.b2 = params_.add(n + ".conv2.bias", "hsa.body", Tensor({ch}), true);
    blocks_.push_back(blk);
  }
  for (std::size_t i = 0; i < vit.inject_after.size(); ++i) {
    inject_proj_.push_back(make_dense(params_, "hsa.inject" + std::to_string(i), "hsa.body", d, ch, rng, true));
  }
  const std::size_t bias_out = vit.bias_layers * vit.heads * vit.head_bias_dim;
  bias_mlp_ = make_mlp(params_, "hsa.bias_mlp", "hsa.head", ch, cfg.head_hidden, bias_out, rng, true, 0.1);
  supp_mlp_ = make_mlp(params_, "hsa.supp_mlp", "hsa.head", ch, cfg.head_hidden, cfg.supp_channels, rng, true);
  const std::size_t c = cfg.feature_channels;
  mlp1_ = make_mlp(params_, "hsa.fuse.mlp1", "hsa.fuse", d, cfg.fuse_hidden, 3 * c / 4, rng, true);
  mlp2_ = make_mlp(params_, "hsa.fuse.mlp2", "hsa.fuse", d + cfg.supp_channels, cfg.fuse_hidden, c / 4, rng, true);
}

Var Hsa::body(const Tensor& image, const std::vector<Tensor>& injected) const {
  if (!injected.empty() && injected.size() != inject_proj_.size()) {
    throw Error(ErrorCode::kShapeMismatch, "hsa: expected " + std::to_string(inject_proj_.size()) +
                                               " injected token maps, got " +
                                               std::to_string(injected.size()));
  }
  const std::size_t s = vit_.patch / 2;
  Var x = ad::silu(ad::conv2d(ad::constant(image), stem_w_, stem_b_, s, 0));
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    const Block& blk = blocks_[b];
    const Var r = ad::conv2d(ad::silu(ad::conv2d(x, blk.w1, blk.b1, 1, 1)), blk.w2, blk.b2, 1, 1);
    x = ad::add(x, r);
    if (!injected.empty() && b < inject_proj_.size()) {
      const Tensor& tok = injected[b];
      if (tok.rank() != 4 || tok.dim(3) != vit_.dim()) {
        throw Error(ErrorCode::kShapeMismatch, "hsa: injected tokens " + shape_str(tok.shape()));
      }
      const Var up = ad::resize_bilinear(ad::constant(tok), out_h(), out_w());
      x = ad::add(x, inject_proj_[b](up));
    }
  }
  return x;
}

Hsa::HeadOut Hsa::head(const Var& features) const {
  const std::size_t n = features.shape()[0];
  const Var pooled = ad::avg_pool(features, 2);
  const Var a = bias_mlp_(pooled);
  HeadOut out;
  out.bias = ad::reshape(a, {n, vit_.visual_tokens(), vit_.bias_layers, vit_.heads, vit_.head_bias_dim});
  out.supp = supp_mlp_(features);
  return out;
}

void Hsa::zero_adaptor() {
  for (auto& p : params_.params()) {
    if (p.component == "hsa.body" || p.component == "hsa.head") p.var.mutable_value().fill(0.0);
  }
}

Var fuse_fsem(const Var& x_last, const Var& supp, const Mlp& mlp1, const Mlp& mlp2,
              std::size_t channels, std::size_t out_h, std::size_t out_w) {
  if (channels % 4 != 0) {
    throw Error(ErrorCode::kChannelsNotDivisible,
                "semantic feature channels " + std::to_string(channels) + " not divisible by 4");
  }
  if (mlp1.fc2.out() != 3 * channels / 4 || mlp2.fc2.out() != channels / 4) {
    throw Error(ErrorCode::kShapeMismatch, "fuse: MLP outputs do not split channels 3:1");
  }
  const Var xr = ad::resize_bilinear(x_last, out_h, out_w);
  const std::size_t n = xr.shape()[0];
  const std::size_t cs = mlp2.fc1.in() - x_last.shape()[3];
  Var s = supp.defined() ? supp : ad::constant(Tensor({n, out_h, out_w, cs}));
  if (s.shape() != Shape{n, out_h, out_w, cs}) {
    throw Error(ErrorCode::kShapeMismatch, "fuse: supplementary map " + shape_str(s.shape()));
  }
  return ad::concat_last(mlp1(xr), mlp2(ad::concat_last(xr, s)));
}

SemanticCache prepare_semantics(const Tensor& image, const TinyViT& vit) {
  return {image, vit.run_prefix(image)};
}

Var encode_semantics(const SemanticCache& cache, const TinyViT& vit, const Hsa& hsa) {
  const HsaConfig& c = hsa.config();
  if (!c.enabled) {
    const Var x_last = vit.run_suffix(cache.prefix.tokens, Var());
    return fuse_fsem(x_last, Var(), hsa.mlp1(), hsa.mlp2(), c.feature_channels, hsa.out_h(), hsa.out_w());
  }
  const Var feats = hsa.body(cache.image, cache.prefix.injected);
  const Hsa::HeadOut h = hsa.head(feats);
  const Var x_last = vit.run_suffix(cache.prefix.tokens, h.bias);
  return fuse_fsem(x_last, h.supp, hsa.mlp1(), hsa.mlp2(), c.feature_channels, hsa.out_h(), hsa.out_w());
}

Var encode_semantics(const Tensor& image, const TinyViT& vit, const Hsa& hsa) {
  return encode_semantics(prepare_semantics(image, vit), vit, hsa);
}

}  // namespace ovocc::backbone
