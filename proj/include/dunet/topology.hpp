#pragma once

#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "dunet/blocks.hpp"

namespace dunet {

// ---------------------------------------------------------------------------
// Multi-scale topologies on a (column, level) lattice
// ---------------------------------------------------------------------------
//
// A topology processes features at `down_steps + 1` resolution levels; level
// l runs at input_resolution / 2^l.  Nodes sit on a lattice indexed by column
// j and level l.  Column 0 is always the encoder chain (block, then pool into
// the next level).  Later columns merge resampled streams; two merge styles
// exist:
//
//   * add-merge (UNet, Hourglass): lateral + upsampled input summed
//     elementwise, then one block.  Laterals are identities (UNet) or carry
//     one block (Hourglass).
//   * aggregation nodes (Dla, Sat*): inputs concatenated, fused by a 1x1
//     convolution back to the lattice width, then refined.
//
// Kinds:
//   UNet      - encoder + add-merge decoder column.
//   Hourglass - UNet with a block on each lateral skip.
//   Dla       - full triangle j + l <= down_steps of aggregation nodes, each
//               fed by the lateral (j-1,l) and the upsampled (j-1,l+1).
//   Sat1      - Dla plus a pooled "down" edge into every aggregation node
//               with l >= 1, so interior nodes see same-, lower- and
//               higher-resolution input.
//   Sat2      - Sat1 restricted to three down-sampling steps.
//   Sat3      - sparse Sat2: only column 1 and the anti-diagonal
//               j + l == down_steps survive; laterals span the removed
//               columns directly; down edges enter column 1 only (the
//               default `down_cols` mask); aggregation refinement is two
//               depthwise-separable stages instead of a full block.
//
// All nodes preserve the width `block.width`; the output node is the last
// one built, at level 0 (full topology resolution).

enum class TopologyKind { UNet, Hourglass, Dla, Sat1, Sat2, Sat3 };

inline const char* topology_kind_name(TopologyKind k) {
  switch (k) {
    case TopologyKind::UNet: return "unet";
    case TopologyKind::Hourglass: return "hourglass";
    case TopologyKind::Dla: return "dla";
    case TopologyKind::Sat1: return "sat1";
    case TopologyKind::Sat2: return "sat2";
    case TopologyKind::Sat3: return "sat3";
  }
  return "?";
}

inline TopologyKind topology_kind_from_name(const std::string& s) {
  if (s == "unet") return TopologyKind::UNet;
  if (s == "hourglass") return TopologyKind::Hourglass;
  if (s == "dla") return TopologyKind::Dla;
  if (s == "sat1") return TopologyKind::Sat1;
  if (s == "sat2") return TopologyKind::Sat2;
  if (s == "sat3") return TopologyKind::Sat3;
  throw ConfigError("unknown topology kind '" + s + "'");
}

struct TopologySpec {
  TopologyKind kind = TopologyKind::Hourglass;
  int down_steps = 4;  // 3 or 4; Sat2/Sat3 require 3
  BlockSpec block;
  int input_resolution = 64;  // spatial size entering the topology
  // Columns whose aggregation nodes receive a pooled down edge (Sat kinds
  // only).  Empty selects the kind's default: every column for Sat1/Sat2,
  // column 1 for Sat3.
  std::vector<int> down_cols;
};

inline bool is_sat_kind(TopologyKind k) {
  return k == TopologyKind::Sat1 || k == TopologyKind::Sat2 ||
         k == TopologyKind::Sat3;
}

inline void validate_topology_spec(const TopologySpec& spec) {
  if (spec.down_steps != 3 && spec.down_steps != 4) {
    throw ConfigError("down_steps must be 3 or 4, got " +
                      std::to_string(spec.down_steps));
  }
  if ((spec.kind == TopologyKind::Sat2 || spec.kind == TopologyKind::Sat3) &&
      spec.down_steps != 3) {
    throw ConfigError(std::string(topology_kind_name(spec.kind)) +
                      " requires exactly 3 down-sampling steps");
  }
  const int divisor = 1 << spec.down_steps;
  if (spec.input_resolution < divisor || spec.input_resolution % divisor != 0) {
    throw ConfigError("input_resolution " + std::to_string(spec.input_resolution) +
                      " is not divisible by 2^down_steps = " + std::to_string(divisor));
  }
  if (!spec.down_cols.empty() && !is_sat_kind(spec.kind)) {
    throw ConfigError("down_cols mask applies to sat kinds only");
  }
  for (int c : spec.down_cols) {
    if (c < 1 || c > spec.down_steps) {
      throw ConfigError("down_cols entry " + std::to_string(c) + " out of range");
    }
  }
}

// Resolution of the lowest-level node (e.g. 8 for input 64 at 3 steps).
inline int deepest_resolution(const TopologySpec& spec) {
  return spec.input_resolution >> spec.down_steps;
}

template <typename T>
class Topology {
 public:
  enum class EdgeKind { Lateral, Up, Down };

  struct Edge {
    int src;
    EdgeKind kind;
    std::unique_ptr<Block<T>> skip;  // Hourglass lateral block, else null
  };

  struct Node {
    int j = 0, l = 0;
    int enc_src = -1;  // encoder chain predecessor (-1 = topology input)
    bool pooled = false;
    std::vector<Edge> in;     // merge inputs (empty for encoder nodes)
    bool has_merge = false;   // concat + 1x1 fuse; otherwise elementwise add
    ConvParams<T> merge;
    std::unique_ptr<Block<T>> proc;
    std::vector<BnActSep<T>> sep_proc;
  };

  Topology(const TopologySpec& spec, Rng* rng) : spec_(spec) {
    validate_topology_spec(spec);
    detail::require_block_width(spec.block.width);
    build(rng);
  }

  const TopologySpec& spec() const { return spec_; }
  const std::vector<Node>& nodes() const { return nodes_; }
  int resolution_of(const Node& n) const { return spec_.input_resolution >> n.l; }

  Var<T> forward(const Var<T>& x, bool training) {
    std::vector<Var<T>> values(nodes_.size());
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      Node& n = nodes_[i];
      Var<T> v;
      if (n.in.empty()) {
        v = n.enc_src < 0 ? x : values[n.enc_src];
        if (n.pooled) v = max_pool2d(v);
        if (n.proc) v = n.proc->forward(v, training);
      } else {
        std::vector<Var<T>> gathered;
        gathered.reserve(n.in.size());
        for (Edge& e : n.in) {
          Var<T> t = values[e.src];
          switch (e.kind) {
            case EdgeKind::Lateral:
              if (e.skip) t = e.skip->forward(t, training);
              break;
            case EdgeKind::Up:
              t = upsample_nearest2x(t);
              break;
            case EdgeKind::Down:
              t = max_pool2d(t);
              break;
          }
          gathered.push_back(std::move(t));
        }
        if (n.has_merge) {
          v = conv2d(concat_channels<T>(gathered), n.merge);
        } else {
          v = gathered[0];
          for (std::size_t g = 1; g < gathered.size(); ++g) v = add(v, gathered[g]);
        }
        if (n.proc) v = n.proc->forward(v, training);
        for (auto& s : n.sep_proc) v = s.forward(v, training);
      }
      values[i] = std::move(v);
    }
    return values.back();
  }

  void register_tensors(const std::string& prefix, ParamRegistry<T>& reg) {
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      Node& n = nodes_[i];
      const std::string np =
          prefix + "/n" + std::to_string(n.j) + "_" + std::to_string(n.l);
      for (std::size_t e = 0; e < n.in.size(); ++e) {
        if (n.in[e].skip) {
          n.in[e].skip->register_tensors(np + "/skip" + std::to_string(e), reg);
        }
      }
      if (n.has_merge) reg.add_conv(np + "/merge", n.merge);
      if (n.proc) n.proc->register_tensors(np + "/block", reg);
      for (std::size_t s = 0; s < n.sep_proc.size(); ++s) {
        n.sep_proc[s].register_tensors(np + "/refine" + std::to_string(s), reg);
      }
    }
  }

  // Nodes that fuse multiple processed streams through a learned 1x1 merge
  // (the Dla/Sat machinery); UNet and Hourglass have none.
  int aggregation_node_count() const {
    int c = 0;
    for (const Node& n : nodes_) c += n.has_merge ? 1 : 0;
    return c;
  }

  // Graphviz rendering of the lattice; node labels carry (column, level) and
  // the level's spatial resolution.
  std::string to_dot() const {
    std::ostringstream os;
    os << "digraph topology {\n";
    os << "  label=\"" << topology_kind_name(spec_.kind) << " x" << spec_.down_steps
       << " (" << block_kind_name(spec_.block.kind) << ", width "
       << spec_.block.width << ")\";\n";
    os << "  rankdir=TB;\n  node [shape=box];\n";
    os << "  input [shape=ellipse];\n";
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      const Node& n = nodes_[i];
      os << "  " << node_id(i) << " [label=\"(" << n.j << "," << n.l << ") "
         << resolution_of(n) << "x" << resolution_of(n) << "\"];\n";
    }
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      const Node& n = nodes_[i];
      if (n.in.empty()) {
        os << "  " << (n.enc_src < 0 ? std::string("input") : node_id(n.enc_src))
           << " -> " << node_id(i);
        if (n.pooled) os << " [label=\"pool\"]";
        os << ";\n";
      } else {
        for (const Edge& e : n.in) {
          os << "  " << node_id(e.src) << " -> " << node_id(i) << " [label=\"";
          switch (e.kind) {
            case EdgeKind::Lateral: os << (e.skip ? "skip" : "lat"); break;
            case EdgeKind::Up: os << "up"; break;
            case EdgeKind::Down: os << "down"; break;
          }
          os << "\"];\n";
        }
      }
    }
    os << "}\n";
    return os.str();
  }

 private:
  std::string node_id(int i) const {
    return "n" + std::to_string(nodes_[i].j) + "_" + std::to_string(nodes_[i].l);
  }

  std::unique_ptr<Block<T>> make_block(Rng* rng) {
    return build_block<T>(spec_.block, rng);
  }

  void build(Rng* rng) {
    const int L = spec_.down_steps;
    const int W = spec_.block.width;
    std::map<std::pair<int, int>, int> at;  // (j,l) -> node index

    for (int l = 0; l <= L; ++l) {
      Node n;
      n.j = 0;
      n.l = l;
      n.enc_src = l == 0 ? -1 : at[{0, l - 1}];
      n.pooled = l > 0;
      n.proc = make_block(rng);
      at[{0, l}] = static_cast<int>(nodes_.size());
      nodes_.push_back(std::move(n));
    }

    // Nearest existing column strictly left of j in a given row; identity
    // laterals in sparse kinds span the removed columns this way.
    auto row_pred = [&](int j, int l) {
      for (int jj = j - 1; jj >= 0; --jj) {
        auto it = at.find({jj, l});
        if (it != at.end()) return it->second;
      }
      throw ConfigError("topology wiring: no predecessor in row " + std::to_string(l));
    };

    auto down_into = [&](int col) {
      if (!spec_.down_cols.empty()) {
        for (int c : spec_.down_cols) {
          if (c == col) return true;
        }
        return false;
      }
      switch (spec_.kind) {
        case TopologyKind::Sat1:
        case TopologyKind::Sat2: return true;
        case TopologyKind::Sat3: return col == 1;
        default: return false;
      }
    };

    // Aggregation node: concat -> 1x1 -> refinement (family block, or two
    // depthwise-separable stages for Sat3).
    auto add_agg = [&](int j, int l) {
      Node n;
      n.j = j;
      n.l = l;
      n.in.push_back(Edge{row_pred(j, l), EdgeKind::Lateral, nullptr});
      n.in.push_back(Edge{row_pred(j, l + 1), EdgeKind::Up, nullptr});
      if (l >= 1 && down_into(j)) {
        n.in.push_back(Edge{row_pred(j, l - 1), EdgeKind::Down, nullptr});
      }
      n.has_merge = true;
      n.merge = ConvParams<T>::make(static_cast<int>(n.in.size()) * W, W, 1, 1, 0, 1, rng);
      if (spec_.kind == TopologyKind::Sat3) {
        n.sep_proc.push_back(BnActSep<T>::make(W, W, 3, rng));
        n.sep_proc.push_back(BnActSep<T>::make(W, W, 3, rng));
      } else {
        n.proc = make_block(rng);
      }
      at[{j, l}] = static_cast<int>(nodes_.size());
      nodes_.push_back(std::move(n));
    };

    switch (spec_.kind) {
      case TopologyKind::UNet:
      case TopologyKind::Hourglass: {
        // Decoder chain: sum of the lateral and the upsampled node below,
        // then one block.  No learned merge, so no aggregation nodes.
        const bool skip_blocks = spec_.kind == TopologyKind::Hourglass;
        for (int l = L - 1; l >= 0; --l) {
          Node n;
          n.j = 1;
          n.l = l;
          Edge lat{at[{0, l}], EdgeKind::Lateral, nullptr};
          if (skip_blocks) lat.skip = make_block(rng);
          n.in.push_back(std::move(lat));
          n.in.push_back(Edge{l + 1 == L ? at[{0, L}] : at[{1, l + 1}],
                              EdgeKind::Up, nullptr});
          n.proc = make_block(rng);
          at[{1, l}] = static_cast<int>(nodes_.size());
          nodes_.push_back(std::move(n));
        }
        break;
      }
      case TopologyKind::Dla:
      case TopologyKind::Sat1:
      case TopologyKind::Sat2: {
        for (int j = 1; j <= L; ++j) {
          for (int l = 0; l <= L - j; ++l) add_agg(j, l);
        }
        break;
      }
      case TopologyKind::Sat3: {
        for (int l = L - 1; l >= 0; --l) add_agg(1, l);    // decoder column
        for (int j = 2; j <= L; ++j) add_agg(j, L - j);    // anti-diagonal
        break;
      }
    }
    // The output is the last node: (1,0) for the two-column kinds,
    // (down_steps,0) for the triangular ones.
  }

  TopologySpec spec_;
  std::vector<Node> nodes_;
};

template <typename T>
std::unique_ptr<Topology<T>> build_topology(const TopologySpec& spec, Rng* rng) {
  return std::make_unique<Topology<T>>(spec, rng);
}

inline std::string export_dot(const TopologySpec& spec) {
  return Topology<float>(spec, nullptr).to_dot();
}

// ---------------------------------------------------------------------------
// Stacked model: stem -> repeated (topology [-> deformable unit] -> heatmap
// head), with feature couplers between consecutive stacks.
// ---------------------------------------------------------------------------
//
// Stem: 3x3 conv to the lattice width, a bottleneck residual block, then a
// 2x2 max pool, so a (3, R, R) image enters the first topology at R/2.
// Each stack emits pre-sigmoid heatmap logits (one channel per landmark) at
// the stem resolution; stack s+1 consumes the previous stack's input plus
// 1x1 projections of its features and logits.  The optional deformable unit
// predicts a 3x3 offset field from the topology output and resamples it with
// a deformable convolution before the head; its offset-predicting conv is
// zero-initialised so the unit starts exactly equal to a standard conv.

struct StackSpec {
  TopologySpec topology;
  int num_stacks = 2;
  int num_landmarks = 68;
  bool with_deformable = false;
  int image_channels = 3;
};

template <typename T>
class StackedModel {
 public:
  StackedModel(const StackSpec& spec, Rng* rng) : spec_(spec) {
    if (spec.num_stacks < 1) throw ConfigError("model needs at least one stack");
    if (spec.num_landmarks < 1) throw ConfigError("model needs at least one landmark");
    validate_topology_spec(spec.topology);
    const int W = spec.topology.block.width;
    stem_conv_ = ConvParams<T>::make(spec.image_channels, W, 3, 1, -1, 1, rng);
    stem_block_ = build_block<T>(BlockSpec{BlockKind::ResNetBottleneck, W}, rng);
    for (int s = 0; s < spec.num_stacks; ++s) {
      Stage st;
      st.topo = std::make_unique<Topology<T>>(spec.topology, rng);
      if (spec.with_deformable) {
        st.offset_conv = ConvParams<T>::make(W, 18, 3, 1, -1, 1, nullptr);
        st.deform_conv = ConvParams<T>::make(W, W, 3, 1, -1, 1, rng);
      }
      st.head_bn = BatchNorm<T>::make(W);
      st.head_conv = ConvParams<T>::make(W, spec.num_landmarks, 1, 1, 0, 1, rng);
      if (s + 1 < spec.num_stacks) {
        st.feat_proj = ConvParams<T>::make(W, W, 1, 1, 0, 1, rng);
        st.logit_proj = ConvParams<T>::make(spec.num_landmarks, W, 1, 1, 0, 1, rng);
        st.has_coupler = true;
      }
      stages_.push_back(std::move(st));
    }
  }

  const StackSpec& spec() const { return spec_; }

  // Per-stack heatmap logits, shallowest first; the last entry is the model
  // output.
  std::vector<Var<T>> forward(const Var<T>& image, bool training) {
    Var<T> x = conv2d(image, stem_conv_);
    x = stem_block_->forward(x, training);
    x = max_pool2d(x);
    std::vector<Var<T>> logits;
    logits.reserve(stages_.size());
    for (std::size_t s = 0; s < stages_.size(); ++s) {
      Stage& st = stages_[s];
      Var<T> f = st.topo->forward(x, training);
      if (spec_.with_deformable) {
        Var<T> off = conv2d(f, st.offset_conv);
        f = deformable_conv2d(f, st.deform_conv, off);
      }
      Var<T> h = relu(batch_norm(f, st.head_bn, training));
      Var<T> logit = conv2d(h, st.head_conv);
      logits.push_back(logit);
      if (st.has_coupler) {
        x = add(add(x, conv2d(f, st.feat_proj)), conv2d(logit, st.logit_proj));
      }
    }
    return logits;
  }

  void register_tensors(ParamRegistry<T>& reg) {
    reg.add_conv("stem/conv", stem_conv_);
    stem_block_->register_tensors("stem/block", reg);
    for (std::size_t s = 0; s < stages_.size(); ++s) {
      Stage& st = stages_[s];
      const std::string p = "stack" + std::to_string(s);
      st.topo->register_tensors(p + "/topo", reg);
      if (spec_.with_deformable) {
        reg.add_conv(p + "/offset", st.offset_conv);
        reg.add_conv(p + "/deform", st.deform_conv);
      }
      reg.add_bn(p + "/head_bn", st.head_bn);
      reg.add_conv(p + "/head", st.head_conv);
      if (st.has_coupler) {
        reg.add_conv(p + "/feat_proj", st.feat_proj);
        reg.add_conv(p + "/logit_proj", st.logit_proj);
      }
    }
  }

 private:
  struct Stage {
    std::unique_ptr<Topology<T>> topo;
    ConvParams<T> offset_conv, deform_conv;
    BatchNorm<T> head_bn;
    ConvParams<T> head_conv;
    ConvParams<T> feat_proj, logit_proj;
    bool has_coupler = false;
  };

  StackSpec spec_;
  ConvParams<T> stem_conv_;
  std::unique_ptr<Block<T>> stem_block_;
  std::vector<Stage> stages_;
};

// ---------------------------------------------------------------------------
// Architecture cost summaries
// ---------------------------------------------------------------------------

inline ParamCountBreakdown count_params(const TopologySpec& spec) {
  ParamRegistry<float> reg;
  Topology<float>(spec, nullptr).register_tensors("topo", reg);
  return count_params(reg);
}

inline ParamCountBreakdown count_params(const StackSpec& spec) {
  ParamRegistry<float> reg;
  StackedModel<float>(spec, nullptr).register_tensors(reg);
  return count_params(reg);
}

// float32 storage footprint of the parameters, in binary megabytes.
inline double estimate_size_mb(const StackSpec& spec) {
  return static_cast<double>(count_params(spec).total()) * sizeof(float) /
         (1024.0 * 1024.0);
}

// Convolution arithmetic (multiplies and adds counted separately) for one
// forward pass of a single image, measured by instrumented execution.  The
// image resolution is twice the topology's input_resolution, mirroring the
// stem's 2x pool.
inline unsigned long long estimate_flops(const StackSpec& spec) {
  StackedModel<float> model(spec, nullptr);
  const int res = 2 * spec.topology.input_resolution;
  Tensor<float> img(1, spec.image_channels, res, res);
  const unsigned long long before = flop_counter();
  model.forward(Var<float>(img, false), false);
  return flop_counter() - before;
}

}  // namespace dunet
