#pragma once

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "dunet/conv.hpp"
#include "dunet/ops.hpp"

namespace dunet {

// ---------------------------------------------------------------------------
// Width-preserving residual blocks
// ---------------------------------------------------------------------------
//
// Every block maps (N, C, H, W) -> (N, C, H, W) with C % 4 == 0 and carries
// an identity residual.  Convolutions are pre-activation (BN -> ReLU -> conv).
//
//   ResNetBottleneck - 1x1 down to C/ratio, 3x3, 1x1 back up (ratio 4).
//   InceptionResNet  - three parallel towers (1x1 / 1x1+3x3 / 1x1+3x3+3x3),
//                      concatenated and merged by a 1x1.
//   Hpm              - input split into C/2, C/4, C/4 channel groups
//                      processed at full, half and quarter resolution.
//   Cab              - palindromic width profile, halving the channel count
//                      `levels` times (default C -> C/2 -> C/4 -> C/2 -> C)
//                      with depthwise-separable convs in the compressed
//                      backbone; widening steps replicate channels and refine
//                      depthwise, with skips joining equal-width stations.
//                      levels = 0 degenerates to a separable-conv residual
//                      block.

enum class BlockKind { ResNetBottleneck, InceptionResNet, Hpm, Cab };

struct BlockSpec {
  BlockKind kind = BlockKind::ResNetBottleneck;
  int width = 64;
  int bottleneck_ratio = 4;  // ResNetBottleneck compression factor
  int cab_levels = 2;        // Cab channel-halving steps
};

inline const char* block_kind_name(BlockKind k) {
  switch (k) {
    case BlockKind::ResNetBottleneck: return "resnet_bottleneck";
    case BlockKind::InceptionResNet: return "inception_resnet";
    case BlockKind::Hpm: return "hpm";
    case BlockKind::Cab: return "cab";
  }
  return "?";
}

inline BlockKind block_kind_from_name(const std::string& s) {
  if (s == "resnet_bottleneck") return BlockKind::ResNetBottleneck;
  if (s == "inception_resnet") return BlockKind::InceptionResNet;
  if (s == "hpm") return BlockKind::Hpm;
  if (s == "cab") return BlockKind::Cab;
  throw ConfigError("unknown block kind '" + s + "'");
}

// Ordered, named collection of every tensor a model owns: learnable
// parameters plus non-learnable buffers (BN running statistics).  Order is
// construction order, which is deterministic, and is the contract for
// checkpoint layout.
template <typename T>
struct ParamRegistry {
  std::vector<std::pair<std::string, Var<T>>> params;
  std::vector<std::pair<std::string, Tensor<T>*>> buffers;

  void add_param(const std::string& name, const Var<T>& v) { params.emplace_back(name, v); }
  void add_buffer(const std::string& name, Tensor<T>* t) { buffers.emplace_back(name, t); }

  void add_conv(const std::string& prefix, ConvParams<T>& c) {
    add_param(prefix + "/kernel", c.kernel);
    add_param(prefix + "/bias", c.bias);
  }
  void add_sep(const std::string& prefix, SeparableConvParams<T>& c) {
    add_conv(prefix + "/dw", c.depthwise);
    add_conv(prefix + "/pw", c.pointwise);
  }
  void add_bn(const std::string& prefix, BatchNorm<T>& bn) {
    add_param(prefix + "/gamma", bn.gamma);
    add_param(prefix + "/beta", bn.beta);
    add_buffer(prefix + "/running_mean", &bn.running_mean);
    add_buffer(prefix + "/running_var", &bn.running_var);
  }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (const auto& [name, v] : params) n += v.tensor().numel();
    return n;
  }
};

template <typename T>
struct Block {
  virtual ~Block() = default;
  virtual Var<T> forward(const Var<T>& x, bool training) = 0;
  virtual void register_tensors(const std::string& prefix, ParamRegistry<T>& reg) = 0;
};

// BN -> ReLU -> conv unit.
template <typename T>
struct BnActConv {
  BatchNorm<T> bn;
  ConvParams<T> conv;

  static BnActConv make(int in_c, int out_c, int k, Rng* rng, int stride = 1) {
    BnActConv u;
    u.bn = BatchNorm<T>::make(in_c);
    u.conv = ConvParams<T>::make(in_c, out_c, k, stride, k == 1 ? 0 : -1, 1, rng);
    return u;
  }
  Var<T> forward(const Var<T>& x, bool training) {
    Var<T> a = relu(batch_norm(x, bn, training));
    return conv2d(a, conv);
  }
  void register_tensors(const std::string& prefix, ParamRegistry<T>& reg) {
    reg.add_bn(prefix + "/bn", bn);
    reg.add_conv(prefix + "/conv", conv);
  }
};

// BN -> ReLU -> depthwise-separable conv unit.
template <typename T>
struct BnActSep {
  BatchNorm<T> bn;
  SeparableConvParams<T> conv;

  static BnActSep make(int in_c, int out_c, int k, Rng* rng) {
    BnActSep u;
    u.bn = BatchNorm<T>::make(in_c);
    u.conv = SeparableConvParams<T>::make(in_c, out_c, k, 1, rng);
    return u;
  }
  Var<T> forward(const Var<T>& x, bool training) {
    Var<T> a = relu(batch_norm(x, bn, training));
    return depthwise_separable_conv(a, conv);
  }
  void register_tensors(const std::string& prefix, ParamRegistry<T>& reg) {
    reg.add_bn(prefix + "/bn", bn);
    reg.add_sep(prefix + "/sep", conv);
  }
};

namespace detail {

inline void require_block_width(int c) {
  if (c < 4 || c % 4 != 0) {
    throw ConfigError("block width must be a positive multiple of 4, got " +
                      std::to_string(c));
  }
}

}  // namespace detail

template <typename T>
class BottleneckBlock final : public Block<T> {
 public:
  BottleneckBlock(int c, int ratio, Rng* rng)
      : reduce_(BnActConv<T>::make(c, c / ratio, 1, rng)),
        spatial_(BnActConv<T>::make(c / ratio, c / ratio, 3, rng)),
        expand_(BnActConv<T>::make(c / ratio, c, 1, rng)) {}

  Var<T> forward(const Var<T>& x, bool training) override {
    Var<T> y = reduce_.forward(x, training);
    y = spatial_.forward(y, training);
    y = expand_.forward(y, training);
    return add(x, y);
  }
  void register_tensors(const std::string& prefix, ParamRegistry<T>& reg) override {
    reduce_.register_tensors(prefix + "/reduce", reg);
    spatial_.register_tensors(prefix + "/spatial", reg);
    expand_.register_tensors(prefix + "/expand", reg);
  }

 private:
  BnActConv<T> reduce_, spatial_, expand_;
};

template <typename T>
class InceptionResNetBlock final : public Block<T> {
 public:
  InceptionResNetBlock(int c, Rng* rng)
      : pre_(BatchNorm<T>::make(c)),
        t1_(ConvParams<T>::make(c, c / 4, 1, 1, 0, 1, rng)),
        t2a_(ConvParams<T>::make(c, c / 4, 1, 1, 0, 1, rng)),
        t2b_(BnActConv<T>::make(c / 4, c / 4, 3, rng)),
        t3a_(ConvParams<T>::make(c, c / 4, 1, 1, 0, 1, rng)),
        t3b_(BnActConv<T>::make(c / 4, c / 4, 3, rng)),
        t3c_(BnActConv<T>::make(c / 4, c / 4, 3, rng)),
        merge_(ConvParams<T>::make(3 * (c / 4), c, 1, 1, 0, 1, rng)) {}

  Var<T> forward(const Var<T>& x, bool training) override {
    Var<T> a = relu(batch_norm(x, pre_, training));
    Var<T> b1 = conv2d(a, t1_);
    Var<T> b2 = t2b_.forward(conv2d(a, t2a_), training);
    Var<T> b3 = t3c_.forward(t3b_.forward(conv2d(a, t3a_), training), training);
    Var<T> merged = conv2d(concat_channels<T>({b1, b2, b3}), merge_);
    return add(x, merged);
  }
  void register_tensors(const std::string& prefix, ParamRegistry<T>& reg) override {
    reg.add_bn(prefix + "/pre_bn", pre_);
    reg.add_conv(prefix + "/t1", t1_);
    reg.add_conv(prefix + "/t2a", t2a_);
    t2b_.register_tensors(prefix + "/t2b", reg);
    reg.add_conv(prefix + "/t3a", t3a_);
    t3b_.register_tensors(prefix + "/t3b", reg);
    t3c_.register_tensors(prefix + "/t3c", reg);
    reg.add_conv(prefix + "/merge", merge_);
  }

 private:
  BatchNorm<T> pre_;
  ConvParams<T> t1_, t2a_, t3a_, merge_;
  BnActConv<T> t2b_, t3b_, t3c_;
};

template <typename T>
class HpmBlock final : public Block<T> {
 public:
  HpmBlock(int c, Rng* rng)
      : c_(c),
        full_(BnActConv<T>::make(c / 2, c / 2, 3, rng)),
        half_(BnActConv<T>::make(c / 4, c / 4, 3, rng)),
        quarter_(BnActConv<T>::make(c / 4, c / 4, 3, rng)) {}

  Var<T> forward(const Var<T>& x, bool training) override {
    const int c = c_;
    Var<T> s1 = slice_channels(x, 0, c / 2);
    Var<T> s2 = slice_channels(x, c / 2, 3 * c / 4);
    Var<T> s3 = slice_channels(x, 3 * c / 4, c);
    Var<T> b1 = full_.forward(s1, training);
    Var<T> b2 = upsample_nearest2x(half_.forward(max_pool2d(s2), training));
    Var<T> b3 = upsample_nearest2x(
        upsample_nearest2x(quarter_.forward(max_pool2d(max_pool2d(s3)), training)));
    return add(x, concat_channels<T>({b1, b2, b3}));
  }
  void register_tensors(const std::string& prefix, ParamRegistry<T>& reg) override {
    full_.register_tensors(prefix + "/full", reg);
    half_.register_tensors(prefix + "/half", reg);
    quarter_.register_tensors(prefix + "/quarter", reg);
  }

 private:
  int c_;
  BnActConv<T> full_, half_, quarter_;
};

template <typename T>
class CabBlock final : public Block<T> {
 public:
  CabBlock(int c, int levels, Rng* rng)
      : levels_(levels),
        entry_(BnActSep<T>::make(c, c, 3, rng)),
        bottom_(BnActSep<T>::make(c >> levels, c >> levels, 3, rng)),
        exit_(BnActSep<T>::make(c, c, 3, rng)) {
    for (int i = 0; i < levels; ++i) {
      downs_.push_back(BnActSep<T>::make(c >> i, c >> (i + 1), 3, rng));
    }
    // Widening stages, deepest first: replicate x2, refine depthwise at the
    // doubled width w = c >> (levels - 1 - i).
    for (int i = 0; i < levels; ++i) {
      const int w = c >> (levels - 1 - i);
      up_bn_.push_back(BatchNorm<T>::make(w));
      up_dw_.push_back(ConvParams<T>::make(w, w, 3, 1, -1, w, rng));
    }
  }

  Var<T> forward(const Var<T>& x, bool training) override {
    // Stations on the narrowing path; station[i] has width c >> i.
    std::vector<Var<T>> station;
    station.push_back(entry_.forward(x, training));
    for (auto& d : downs_) station.push_back(d.forward(station.back(), training));
    Var<T> u = bottom_.forward(station.back(), training);
    // Widen back up, joining the equal-width station after each step.
    for (int i = 0; i < levels_; ++i) {
      u = replicate_channels(u, 2);
      u = conv2d(relu(batch_norm(u, up_bn_[i], training)), up_dw_[i]);
      u = add(u, station[levels_ - 1 - i]);
    }
    return add(x, exit_.forward(u, training));
  }
  void register_tensors(const std::string& prefix, ParamRegistry<T>& reg) override {
    entry_.register_tensors(prefix + "/entry", reg);
    for (int i = 0; i < levels_; ++i) {
      downs_[i].register_tensors(prefix + "/down" + std::to_string(i + 1), reg);
    }
    bottom_.register_tensors(prefix + "/bottom", reg);
    for (int i = 0; i < levels_; ++i) {
      const std::string up = prefix + "/up" + std::to_string(levels_ - i);
      reg.add_bn(up + "_bn", up_bn_[i]);
      reg.add_conv(up + "_dw", up_dw_[i]);
    }
    exit_.register_tensors(prefix + "/exit", reg);
  }

 private:
  int levels_;
  BnActSep<T> entry_;
  std::vector<BnActSep<T>> downs_;
  BnActSep<T> bottom_;
  std::vector<BatchNorm<T>> up_bn_;
  std::vector<ConvParams<T>> up_dw_;
  BnActSep<T> exit_;
};

template <typename T>
std::unique_ptr<Block<T>> build_block(const BlockSpec& spec, Rng* rng) {
  detail::require_block_width(spec.width);
  switch (spec.kind) {
    case BlockKind::ResNetBottleneck:
      if (spec.bottleneck_ratio < 1 || spec.width % spec.bottleneck_ratio != 0) {
        throw ConfigError("bottleneck ratio must divide the block width");
      }
      return std::make_unique<BottleneckBlock<T>>(spec.width, spec.bottleneck_ratio, rng);
    case BlockKind::InceptionResNet:
      return std::make_unique<InceptionResNetBlock<T>>(spec.width, rng);
    case BlockKind::Hpm:
      return std::make_unique<HpmBlock<T>>(spec.width, rng);
    case BlockKind::Cab:
      if (spec.cab_levels < 0 || spec.width % (1 << spec.cab_levels) != 0) {
        throw ConfigError("cab width must be divisible by 2^levels");
      }
      return std::make_unique<CabBlock<T>>(spec.width, spec.cab_levels, rng);
  }
  throw ConfigError("build_block: bad kind");
}

// Parameter tally broken down by role (conv kernels vs biases vs BN affine).
struct ParamCountBreakdown {
  std::size_t conv_kernels = 0;
  std::size_t conv_biases = 0;
  std::size_t bn_affine = 0;
  std::size_t total() const { return conv_kernels + conv_biases + bn_affine; }
};

template <typename T>
ParamCountBreakdown count_params(const ParamRegistry<T>& reg) {
  ParamCountBreakdown out;
  for (const auto& [name, v] : reg.params) {
    const std::size_t n = v.tensor().numel();
    if (name.size() >= 7 && name.compare(name.size() - 7, 7, "/kernel") == 0) {
      out.conv_kernels += n;
    } else if (name.size() >= 5 && name.compare(name.size() - 5, 5, "/bias") == 0) {
      out.conv_biases += n;
    } else {
      out.bn_affine += n;
    }
  }
  return out;
}

inline ParamCountBreakdown block_param_count(const BlockSpec& spec) {
  ParamRegistry<float> reg;
  build_block<float>(spec, nullptr)->register_tensors("block", reg);
  return count_params(reg);
}

}  // namespace dunet
