#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "esres/ops.hpp"
#include "esres/rng.hpp"
#include "esres/tensor.hpp"

namespace esres::nn {

struct ModelConfig {
  int num_classes = 50;
  int in_channels = 3;
  bool attention = false;
  double width_scale = 1.0;
  int num_stages = 4;          // reduced-depth variants for fast gradient checks
  double input_div = 100.0;    // dB values are divided by this before the stem
  bool force_identity_attention = false;  // test hook: compute no masks, apply none

  int scaled(int base) const {
    return std::max(1, static_cast<int>(std::lround(base * width_scale)));
  }

  void validate() const {
    if (num_classes < 1) throw ConfigError("model: num_classes must be positive");
    if (in_channels < 1) throw ConfigError("model: in_channels must be positive");
    if (num_stages < 1 || num_stages > 4)
      throw ConfigError("model: num_stages must be in [1, 4]");
    if (!(width_scale > 0.0)) throw ConfigError("model: width_scale must be positive");
    for (int base : {64, 128, 256, 512})
      if (static_cast<int>(std::lround(base * width_scale)) < 1)
        throw ConfigError("model: width_scale rounds a stage width below 1");
    if (!(input_div > 0.0)) throw ConfigError("model: input_div must be positive");
  }
};

// ResNet-50 style backbone over band spectrograms, with optional per-stage
// attention gates and a joint gate on the pooled embedding.
template <typename T>
class EsResNet {
 public:
  explicit EsResNet(const ModelConfig& cfg, uint64_t seed = 0) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(seed);
    build(rng);
  }

  EsResNet(const EsResNet&) = delete;
  EsResNet& operator=(const EsResNet&) = delete;

  const ModelConfig& config() const { return cfg_; }
  int embedding_dim() const { return embed_dim_; }

  // (N, in_channels, H, W) -> (N, embed_dim)
  Tensor<T> embed(const Tensor<T>& x, bool training) {
    check_shape(x.rank() == 4, "model: input rank " + std::to_string(x.rank()));
    check_shape(x.dim(1) == cfg_.in_channels,
                "model: expected " + std::to_string(cfg_.in_channels) + " channels, got " +
                    std::to_string(x.dim(1)));
    Tensor<T> h = cfg_.input_div == 1.0 ? x : scale(x, 1.0 / cfg_.input_div);
    h = relu(bn1_.apply(conv2d(h, conv1_w_, 2, 2, 3, 3), training));
    h = max_pool2d(h, 3, 2, 1);
    for (size_t s = 0; s < stages_.size(); ++s) {
      Tensor<T> gate;
      if (use_masks()) gate = attention_mask(atts_[s], h, training);
      for (auto& block : stages_[s]) h = bottleneck(block, h, training);
      if (gate.defined()) h = mul(h, gate);
    }
    Tensor<T> pooled = global_avg_pool2d(h);
    if (cfg_.attention && use_masks())
      pooled = mul_channels(pooled, global_avg_pool2d(attention_mask(att_joint_, h, training)));
    return reshape(pooled, {x.dim(0), embed_dim_});
  }

  Tensor<T> forward(const Tensor<T>& x, bool training) {
    return linear(embed(x, training), fc_w_, fc_b_);
  }

  // Shared-weight two-channel pass: embeddings fuse by elementwise addition
  // before the head.
  Tensor<T> forward_stereo(const Tensor<T>& left, const Tensor<T>& right, bool training) {
    check_shape(left.shape() == right.shape(),
                "model: stereo inputs " + shape_str(left.shape()) + " vs " +
                    shape_str(right.shape()));
    return linear(add(embed(left, training), embed(right, training)), fc_w_, fc_b_);
  }

  int64_t parameter_count() const {
    int64_t n = 0;
    const_cast<EsResNet*>(this)->walk_params(
        [&n](const std::string&, Tensor<T>& p) { n += p.numel(); });
    return n;
  }

  std::vector<std::pair<std::string, Tensor<T>>> named_parameters() {
    std::vector<std::pair<std::string, Tensor<T>>> out;
    walk_params([&out](const std::string& name, Tensor<T>& p) { out.emplace_back(name, p); });
    return out;
  }

  struct BufferRef {
    std::string name;
    std::vector<T>* data;
  };

  std::vector<BufferRef> named_buffers() {
    std::vector<BufferRef> out;
    walk_buffers([&out](const std::string& name, std::vector<T>& b) {
      out.push_back({name, &b});
    });
    return out;
  }

  void zero_grad() {
    walk_params([](const std::string&, Tensor<T>& p) { p.zero_grad(); });
  }

 private:
  struct BnUnit {
    Tensor<T> weight, bias;
    std::vector<T> rm, rv;

    void init(int c) {
      weight = Tensor<T>::from({c}, std::vector<T>(c, T(1)), true);
      bias = Tensor<T>::from({c}, std::vector<T>(c, T(0)), true);
      rm.assign(c, T(0));
      rv.assign(c, T(1));
    }

    Tensor<T> apply(const Tensor<T>& x, bool training) {
      return batch_norm2d(x, weight, bias, rm, rv, training);
    }
  };

  struct Bottleneck {
    Tensor<T> conv1_w, conv2_w, conv3_w;
    BnUnit bn1, bn2, bn3;
    Tensor<T> down_w;
    BnUnit down_bn;
    int stride = 1;
  };

  struct AttentionGate {
    Tensor<T> dw_w, pw_w;  // depthwise then pointwise halves
    BnUnit bn;
    int pool_stride = 1;
    int dw_kh = 1, dw_kw = 1;
  };

  bool use_masks() const { return cfg_.attention && !cfg_.force_identity_attention; }

  Tensor<T> he_conv(Rng& rng, int out_c, int in_c, int kh, int kw) {
    const int64_t fan_in = static_cast<int64_t>(in_c) * kh * kw;
    const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
    std::vector<T> w(static_cast<size_t>(out_c) * in_c * kh * kw);
    for (auto& v : w) v = static_cast<T>(rng.normal(0.0, stddev));
    return Tensor<T>::from({out_c, in_c, kh, kw}, std::move(w), true);
  }

  void build(Rng& rng) {
    const int stem = cfg_.scaled(64);
    conv1_w_ = he_conv(rng, stem, cfg_.in_channels, 7, 7);
    bn1_.init(stem);

    const int depths[4] = {3, 4, 6, 3};
    const int mids[4] = {cfg_.scaled(64), cfg_.scaled(128), cfg_.scaled(256), cfg_.scaled(512)};
    int in_c = stem;
    for (int s = 0; s < cfg_.num_stages; ++s) {
      const int mid = mids[s];
      const int out_c = mid * 4;
      const int stage_stride = s == 0 ? 1 : 2;
      std::vector<Bottleneck> stage;
      for (int b = 0; b < depths[s]; ++b) {
        Bottleneck blk;
        blk.stride = b == 0 ? stage_stride : 1;
        blk.conv1_w = he_conv(rng, mid, in_c, 1, 1);
        blk.bn1.init(mid);
        blk.conv2_w = he_conv(rng, mid, mid, 3, 3);
        blk.bn2.init(mid);
        blk.conv3_w = he_conv(rng, out_c, mid, 1, 1);
        blk.bn3.init(out_c);
        if (b == 0 && (in_c != out_c || blk.stride != 1)) {
          blk.down_w = he_conv(rng, out_c, in_c, 1, 1);
          blk.down_bn.init(out_c);
        }
        stage.push_back(std::move(blk));
        in_c = out_c;
      }
      stages_.push_back(std::move(stage));
    }
    embed_dim_ = in_c;

    if (cfg_.attention) {
      int gate_in = stem;
      for (int s = 0; s < cfg_.num_stages; ++s) {
        AttentionGate g;
        g.pool_stride = s == 0 ? 1 : 2;
        const bool freq_axis = s % 2 == 0;  // alternate frequency / time
        g.dw_kh = freq_axis ? 7 : 1;
        g.dw_kw = freq_axis ? 1 : 7;
        const int out_c = mids[s] * 4;
        g.dw_w = he_conv(rng, gate_in, 1, g.dw_kh, g.dw_kw);
        g.pw_w = he_conv(rng, out_c, gate_in, 1, 1);
        g.bn.init(out_c);
        atts_.push_back(std::move(g));
        gate_in = out_c;
      }
      att_joint_.pool_stride = 1;
      att_joint_.dw_kh = att_joint_.dw_kw = 1;
      att_joint_.dw_w = he_conv(rng, embed_dim_, 1, 1, 1);
      att_joint_.pw_w = he_conv(rng, embed_dim_, embed_dim_, 1, 1);
      att_joint_.bn.init(embed_dim_);
    }

    const double fc_stddev = std::sqrt(2.0 / static_cast<double>(embed_dim_));
    std::vector<T> fcw(static_cast<size_t>(cfg_.num_classes) * embed_dim_);
    for (auto& v : fcw) v = static_cast<T>(rng.normal(0.0, fc_stddev));
    fc_w_ = Tensor<T>::from({cfg_.num_classes, embed_dim_}, std::move(fcw), true);
    fc_b_ = Tensor<T>::from({cfg_.num_classes}, std::vector<T>(cfg_.num_classes, T(0)), true);
  }

  Tensor<T> bottleneck(Bottleneck& blk, const Tensor<T>& x, bool training) {
    Tensor<T> h = relu(blk.bn1.apply(conv2d(x, blk.conv1_w, 1, 1, 0, 0), training));
    h = relu(blk.bn2.apply(conv2d(h, blk.conv2_w, blk.stride, blk.stride, 1, 1), training));
    h = blk.bn3.apply(conv2d(h, blk.conv3_w, 1, 1, 0, 0), training);
    Tensor<T> identity =
        blk.down_w.defined()
            ? blk.down_bn.apply(conv2d(x, blk.down_w, blk.stride, blk.stride, 0, 0), training)
            : x;
    return relu(add(h, identity));
  }

  // sigmoid(BN(pointwise(depthwise(maxpool(x))))), pooled so the mask shape
  // matches the paired stage's output shape.
  Tensor<T> attention_mask(AttentionGate& g, const Tensor<T>& x, bool training) {
    Tensor<T> h = max_pool2d(x, 3, g.pool_stride, 1);
    h = depthwise_conv2d(h, g.dw_w, 1, 1, g.dw_kh / 2, g.dw_kw / 2);
    h = conv2d(h, g.pw_w, 1, 1, 0, 0);
    return sigmoid(g.bn.apply(h, training));
  }

  template <typename Fn>
  void walk_params(Fn&& fn) {
    fn("conv1.weight", conv1_w_);
    fn("bn1.weight", bn1_.weight);
    fn("bn1.bias", bn1_.bias);
    for (size_t s = 0; s < stages_.size(); ++s)
      for (size_t b = 0; b < stages_[s].size(); ++b) {
        const std::string p = "layer" + std::to_string(s + 1) + "." + std::to_string(b) + ".";
        Bottleneck& blk = stages_[s][b];
        fn(p + "conv1.weight", blk.conv1_w);
        fn(p + "bn1.weight", blk.bn1.weight);
        fn(p + "bn1.bias", blk.bn1.bias);
        fn(p + "conv2.weight", blk.conv2_w);
        fn(p + "bn2.weight", blk.bn2.weight);
        fn(p + "bn2.bias", blk.bn2.bias);
        fn(p + "conv3.weight", blk.conv3_w);
        fn(p + "bn3.weight", blk.bn3.weight);
        fn(p + "bn3.bias", blk.bn3.bias);
        if (blk.down_w.defined()) {
          fn(p + "downsample.0.weight", blk.down_w);
          fn(p + "downsample.1.weight", blk.down_bn.weight);
          fn(p + "downsample.1.bias", blk.down_bn.bias);
        }
      }
    if (cfg_.attention) {
      for (size_t s = 0; s < atts_.size(); ++s) {
        const std::string p = "att" + std::to_string(s + 1) + ".";
        fn(p + "dw.weight", atts_[s].dw_w);
        fn(p + "pw.weight", atts_[s].pw_w);
        fn(p + "bn.weight", atts_[s].bn.weight);
        fn(p + "bn.bias", atts_[s].bn.bias);
      }
      fn("att_joint.dw.weight", att_joint_.dw_w);
      fn("att_joint.pw.weight", att_joint_.pw_w);
      fn("att_joint.bn.weight", att_joint_.bn.weight);
      fn("att_joint.bn.bias", att_joint_.bn.bias);
    }
    fn("fc.weight", fc_w_);
    fn("fc.bias", fc_b_);
  }

  template <typename Fn>
  void walk_buffers(Fn&& fn) {
    fn("bn1.running_mean", bn1_.rm);
    fn("bn1.running_var", bn1_.rv);
    for (size_t s = 0; s < stages_.size(); ++s)
      for (size_t b = 0; b < stages_[s].size(); ++b) {
        const std::string p = "layer" + std::to_string(s + 1) + "." + std::to_string(b) + ".";
        Bottleneck& blk = stages_[s][b];
        fn(p + "bn1.running_mean", blk.bn1.rm);
        fn(p + "bn1.running_var", blk.bn1.rv);
        fn(p + "bn2.running_mean", blk.bn2.rm);
        fn(p + "bn2.running_var", blk.bn2.rv);
        fn(p + "bn3.running_mean", blk.bn3.rm);
        fn(p + "bn3.running_var", blk.bn3.rv);
        if (blk.down_w.defined()) {
          fn(p + "downsample.1.running_mean", blk.down_bn.rm);
          fn(p + "downsample.1.running_var", blk.down_bn.rv);
        }
      }
    if (cfg_.attention) {
      for (size_t s = 0; s < atts_.size(); ++s) {
        const std::string p = "att" + std::to_string(s + 1) + ".";
        fn(p + "bn.running_mean", atts_[s].bn.rm);
        fn(p + "bn.running_var", atts_[s].bn.rv);
      }
      fn("att_joint.bn.running_mean", att_joint_.bn.rm);
      fn("att_joint.bn.running_var", att_joint_.bn.rv);
    }
  }

  ModelConfig cfg_;
  Tensor<T> conv1_w_;
  BnUnit bn1_;
  std::vector<std::vector<Bottleneck>> stages_;
  std::vector<AttentionGate> atts_;
  AttentionGate att_joint_;
  Tensor<T> fc_w_, fc_b_;
  int embed_dim_ = 0;
};

}  // namespace esres::nn
