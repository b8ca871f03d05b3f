#pragma once

#include <algorithm>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dunet/blocks.hpp"
#include "dunet/common.hpp"
#include "dunet/data.hpp"
#include "dunet/topology.hpp"

namespace dunet {

// ---------------------------------------------------------------------------
// JSON configuration
// ---------------------------------------------------------------------------
//
// Readers are strict: unknown keys and wrong value types are ConfigErrors,
// so a typo in a config file fails loudly instead of silently using a
// default.  Writers emit every field, making emitted configs self-contained.

namespace detail {

class JsonReader {
 public:
  JsonReader(const nlohmann::json& j, std::string ctx)
      : j_(j), ctx_(std::move(ctx)) {
    if (!j_.is_object()) throw ConfigError(ctx_ + ": expected a JSON object");
  }

  template <typename T>
  T get(const std::string& key, const T& fallback) {
    seen_.push_back(key);
    if (!j_.contains(key)) return fallback;
    return read<T>(key);
  }

  template <typename T>
  T require(const std::string& key) {
    seen_.push_back(key);
    if (!j_.contains(key)) throw ConfigError(ctx_ + ": missing required key '" + key + "'");
    return read<T>(key);
  }

  bool has(const std::string& key) {
    seen_.push_back(key);
    return j_.contains(key);
  }

  const nlohmann::json& raw(const std::string& key) {
    seen_.push_back(key);
    return j_.at(key);
  }

  // Call last: flags keys the caller never asked about.
  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      (void)value;
      if (std::find(seen_.begin(), seen_.end(), key) == seen_.end()) {
        throw ConfigError(ctx_ + ": unknown key '" + key + "'");
      }
    }
  }

 private:
  template <typename T>
  T read(const std::string& key) {
    try {
      return j_.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError(ctx_ + ": bad value type for '" + key + "'");
    }
  }

  const nlohmann::json& j_;
  std::string ctx_;
  std::vector<std::string> seen_;
};

}  // namespace detail

// --- blocks ----------------------------------------------------------------

inline nlohmann::json block_to_json(const BlockSpec& b) {
  return {{"kind", block_kind_name(b.kind)},
          {"bottleneck_ratio", b.bottleneck_ratio},
          {"cab_levels", b.cab_levels}};
}

// Accepts either a bare kind string or an object; `width` lives at the
// topology level, never here.
inline BlockSpec block_from_json(const nlohmann::json& j, int width) {
  BlockSpec b;
  b.width = width;
  if (j.is_string()) {
    b.kind = block_kind_from_name(j.get<std::string>());
    return b;
  }
  detail::JsonReader r(j, "block");
  if (r.has("width")) {
    throw ConfigError("block: width is set at the topology level");
  }
  b.kind = block_kind_from_name(r.require<std::string>("kind"));
  b.bottleneck_ratio = r.get<int>("bottleneck_ratio", b.bottleneck_ratio);
  b.cab_levels = r.get<int>("cab_levels", b.cab_levels);
  r.finish();
  return b;
}

// --- topologies ------------------------------------------------------------

inline nlohmann::json topology_to_json(const TopologySpec& t) {
  nlohmann::json j{{"kind", topology_kind_name(t.kind)},
                   {"down_steps", t.down_steps},
                   {"width", t.block.width},
                   {"block", block_to_json(t.block)},
                   {"input_resolution", t.input_resolution}};
  if (!t.down_cols.empty()) j["down_cols"] = t.down_cols;
  return j;
}

inline TopologySpec topology_from_json(const nlohmann::json& j) {
  detail::JsonReader r(j, "topology");
  TopologySpec t;
  t.kind = topology_kind_from_name(r.require<std::string>("kind"));
  t.down_steps = r.get<int>("down_steps", t.down_steps);
  t.input_resolution = r.get<int>("input_resolution", t.input_resolution);
  const int width = r.require<int>("width");
  t.block = r.has("block") ? block_from_json(r.raw("block"), width)
                           : BlockSpec{BlockKind::ResNetBottleneck, width, 4, 2};
  t.down_cols = r.get<std::vector<int>>("down_cols", {});
  r.finish();
  validate_topology_spec(t);
  return t;
}

// --- stacked models --------------------------------------------------------

inline nlohmann::json stack_to_json(const StackSpec& s) {
  return {{"topology", topology_to_json(s.topology)},
          {"num_stacks", s.num_stacks},
          {"num_landmarks", s.num_landmarks},
          {"with_deformable", s.with_deformable}};
}

inline StackSpec stack_from_json(const nlohmann::json& j) {
  detail::JsonReader r(j, "model");
  StackSpec s;
  s.topology = topology_from_json(r.raw("topology"));
  s.num_stacks = r.get<int>("num_stacks", s.num_stacks);
  s.num_landmarks = r.get<int>("num_landmarks", s.num_landmarks);
  s.with_deformable = r.get<bool>("with_deformable", s.with_deformable);
  r.finish();
  if (s.num_stacks < 1) throw ConfigError("model: num_stacks must be positive");
  if (s.num_landmarks < 1) throw ConfigError("model: num_landmarks must be positive");
  return s;
}

// --- synthetic data --------------------------------------------------------

inline nlohmann::json synth_to_json(const SynthConfig& c) {
  return {{"n_landmarks", c.n_landmarks},
          {"seed", c.seed},
          {"shape_jitter", c.shape_jitter},
          {"texture_noise", c.texture_noise},
          {"occluder_prob", c.occluder_prob}};
}

inline SynthConfig synth_from_json(const nlohmann::json& j) {
  detail::JsonReader r(j, "synth");
  SynthConfig c;
  c.n_landmarks = r.get<int>("n_landmarks", c.n_landmarks);
  c.seed = r.get<std::uint64_t>("seed", c.seed);
  c.shape_jitter = r.get<double>("shape_jitter", c.shape_jitter);
  c.texture_noise = r.get<double>("texture_noise", c.texture_noise);
  c.occluder_prob = r.get<double>("occluder_prob", c.occluder_prob);
  r.finish();
  if (c.n_landmarks != 5 && c.n_landmarks != 68) {
    throw ConfigError("synth: n_landmarks must be 5 or 68");
  }
  return c;
}

inline nlohmann::json load_json_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("config: cannot open " + path);
  try {
    nlohmann::json j;
    is >> j;
    return j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("config: ") + path + ": " + e.what());
  }
}

}  // namespace dunet
