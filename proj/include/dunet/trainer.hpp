#pragma once

#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "dunet/config.hpp"
#include "dunet/data.hpp"
#include "dunet/heatmap.hpp"
#include "dunet/loss.hpp"
#include "dunet/topology.hpp"

namespace dunet {

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------
//
// Every batch pairs each sample with a randomly transformed twin; both views
// run through the model and the coherence loss ties their heatmap stacks
// together.  Optimisation is Nadam with a two-drop step schedule; runs are
// bit-reproducible under a fixed seed (single-threaded, one rng stream).

struct TrainConfig {
  double lr0 = 2.5e-4;
  int batch = 8;
  int total_steps = 2000;
  double lambda = 1e-3;  // weight of the twin-coherence term
  std::uint64_t seed = 0;
  double grad_clip = 5.0;  // global-norm ceiling; <= 0 disables
  PgLossKind loss_kind = PgLossKind::CrossEntropy;
  double sigma = 1.0;  // ground-truth heatmap spread, heatmap px
};

inline nlohmann::json train_to_json(const TrainConfig& c) {
  return {{"lr0", c.lr0},
          {"batch", c.batch},
          {"total_steps", c.total_steps},
          {"lambda", c.lambda},
          {"seed", c.seed},
          {"grad_clip", c.grad_clip},
          {"loss", c.loss_kind == PgLossKind::CrossEntropy ? "ce" : "mse"},
          {"sigma", c.sigma}};
}

inline TrainConfig train_from_json(const nlohmann::json& j) {
  detail::JsonReader r(j, "train");
  TrainConfig c;
  c.lr0 = r.get<double>("lr0", c.lr0);
  c.batch = r.get<int>("batch", c.batch);
  c.total_steps = r.get<int>("total_steps", c.total_steps);
  c.lambda = r.get<double>("lambda", c.lambda);
  c.seed = r.get<std::uint64_t>("seed", c.seed);
  c.grad_clip = r.get<double>("grad_clip", c.grad_clip);
  const std::string loss = r.get<std::string>("loss", "ce");
  if (loss == "ce") {
    c.loss_kind = PgLossKind::CrossEntropy;
  } else if (loss == "mse") {
    c.loss_kind = PgLossKind::Mse;
  } else {
    throw ConfigError("train: loss must be 'ce' or 'mse'");
  }
  c.sigma = r.get<double>("sigma", c.sigma);
  r.finish();
  if (c.lr0 < 0.0) throw ConfigError("train: lr0 must be non-negative");
  if (c.batch < 1) throw ConfigError("train: batch must be positive");
  if (c.total_steps < 1) throw ConfigError("train: total_steps must be positive");
  return c;
}

// Step schedule: two 0.2 drops at 16/30 and 24/30 of the run.
inline double lr_at(long long step, const TrainConfig& cfg) {
  const long long first = 16LL * cfg.total_steps / 30;
  const long long second = 24LL * cfg.total_steps / 30;
  double lr = cfg.lr0;
  if (step >= first) lr *= 0.2;
  if (step >= second) lr *= 0.2;
  return lr;
}

// --- Nadam -----------------------------------------------------------------

template <typename T>
struct OptimizerState {
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  long long step = 0;               // completed updates
  std::vector<Tensor<T>> m, v;      // aligned with the registry's param order

  void init(const ParamRegistry<T>& reg) {
    m.clear();
    v.clear();
    m.reserve(reg.params.size());
    v.reserve(reg.params.size());
    for (const auto& [name, var] : reg.params) {
      const Tensor<T>& t = var.tensor();
      m.emplace_back(t.n(), t.c(), t.h(), t.w());
      v.emplace_back(t.n(), t.c(), t.h(), t.w());
    }
  }
};

template <typename T>
double global_grad_norm(const ParamRegistry<T>& reg) {
  double sq = 0.0;
  for (const auto& [name, var] : reg.params) {
    for (T g : var.tensor().grad()) sq += static_cast<double>(g) * g;
  }
  return std::sqrt(sq);
}

// One Nadam update from the gradients currently held in the registry.
// Nesterov correction: the momentum term is bias-corrected one step ahead
// while the raw gradient keeps the current step's correction.  Returns the
// pre-clip global gradient norm.
template <typename T>
double nadam_apply(ParamRegistry<T>& reg, OptimizerState<T>& opt, double lr,
                   double grad_clip) {
  if (opt.m.size() != reg.params.size()) {
    throw ConfigError("optimizer: state does not match the parameter registry");
  }
  const double norm = global_grad_norm(reg);
  const double gscale = (grad_clip > 0.0 && norm > grad_clip) ? grad_clip / norm : 1.0;
  const double t = static_cast<double>(opt.step + 1);
  const double c_now = 1.0 - std::pow(opt.beta1, t);
  const double c_next = 1.0 - std::pow(opt.beta1, t + 1.0);
  const double c_v = 1.0 - std::pow(opt.beta2, t);
  for (std::size_t i = 0; i < reg.params.size(); ++i) {
    Tensor<T>& th = reg.params[i].second.tensor();
    const std::vector<T>& gr = th.grad();
    std::vector<T>& m = opt.m[i].vec();
    std::vector<T>& v = opt.v[i].vec();
    std::vector<T>& w = th.vec();
    for (std::size_t k = 0; k < w.size(); ++k) {
      const double g = static_cast<double>(gr[k]) * gscale;
      const double mk = opt.beta1 * static_cast<double>(m[k]) + (1.0 - opt.beta1) * g;
      const double vk =
          opt.beta2 * static_cast<double>(v[k]) + (1.0 - opt.beta2) * g * g;
      m[k] = static_cast<T>(mk);
      v[k] = static_cast<T>(vk);
      const double update = (opt.beta1 * (mk / c_next) + (1.0 - opt.beta1) * (g / c_now)) /
                            (std::sqrt(vk / c_v) + opt.eps);
      w[k] = static_cast<T>(static_cast<double>(w[k]) - lr * update);
    }
  }
  ++opt.step;
  return norm;
}

// --- one training step -----------------------------------------------------

struct StepReport {
  long long step = 0;  // index of the step just taken
  double lr = 0.0;
  CoherentLossParts parts;  // summed over stack heads
  double grad_norm = 0.0;   // pre-clip
  double wall_ms = 0.0;
};

namespace detail {

template <typename T>
Tensor<T> stack_images(const std::vector<const Tensor<float>*>& imgs) {
  const int h = imgs.at(0)->h(), w = imgs.at(0)->w();
  Tensor<T> out(static_cast<int>(imgs.size()), 3, h, w);
  for (std::size_t i = 0; i < imgs.size(); ++i) {
    const auto& src = imgs[i]->vec();
    std::copy(src.begin(), src.end(), out.sample(static_cast<int>(i)));
  }
  return out;
}

template <typename T>
Tensor<T> stack_heatmaps(const std::vector<const Landmarks*>& lms, int img_h,
                         int img_w, int stride, double sigma) {
  const int k = static_cast<int>(lms.at(0)->size());
  Tensor<T> out(static_cast<int>(lms.size()), k, img_h / stride, img_w / stride);
  for (std::size_t i = 0; i < lms.size(); ++i) {
    const Tensor<T> one = render_heatmaps<T>(*lms[i], img_h, img_w, stride, sigma);
    std::copy(one.vec().begin(), one.vec().end(), out.sample(static_cast<int>(i)));
  }
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Training session
// ---------------------------------------------------------------------------

template <typename T = float>
class TrainSession {
 public:
  TrainSession(const StackSpec& sspec, const TrainConfig& cfg)
      : TrainSession(sspec, cfg, flip_pairs_for(sspec.num_landmarks)) {}

  TrainSession(const StackSpec& sspec, const TrainConfig& cfg,
               std::vector<std::pair<int, int>> flip_pairs)
      : sspec_(sspec), cfg_(cfg), rng_(cfg.seed),
        flip_pairs_(std::move(flip_pairs)) {
    model_ = std::make_unique<StackedModel<T>>(sspec, &rng_);
    model_->register_tensors(reg_);
    opt_.init(reg_);
  }

  StackedModel<T>& model() { return *model_; }
  const StackSpec& stack_spec() const { return sspec_; }
  const TrainConfig& config() const { return cfg_; }
  ParamRegistry<T>& registry() { return reg_; }
  OptimizerState<T>& optimizer() { return opt_; }
  Rng& rng() { return rng_; }
  long long step_count() const { return opt_.step; }
  const std::vector<std::pair<int, int>>& flip_pairs() const { return flip_pairs_; }
  void set_flip_pairs(std::vector<std::pair<int, int>> pairs) {
    flip_pairs_ = std::move(pairs);
  }

  // Deterministic core: one update from an explicit batch and its transform
  // draws.  Gradients stay in the registry afterwards for inspection.
  StepReport step_on(const std::vector<const Sample*>& batch,
                     const std::vector<TransformSpec>& t_batch) {
    const auto t0 = std::chrono::steady_clock::now();
    if (batch.empty() || batch.size() != t_batch.size()) {
      throw ShapeError("batch", "train step: batch and transform lists must align");
    }
    StepReport rep;
    rep.step = opt_.step;
    rep.lr = lr_at(opt_.step, cfg_);

    std::vector<const Tensor<float>*> orig_imgs, trans_imgs;
    std::vector<const Landmarks*> orig_lms, trans_lms;
    std::vector<Sample> twins;
    twins.reserve(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
      twins.push_back(apply_augmentation(*batch[i], t_batch[i]));
      orig_imgs.push_back(&batch[i]->image);
      trans_imgs.push_back(&twins.back().image);
      orig_lms.push_back(&batch[i]->landmarks);
      trans_lms.push_back(&twins.back().landmarks);
    }
    const int img_h = batch[0]->image.h(), img_w = batch[0]->image.w();
    // Heatmaps live at the topology's working resolution (stem pools once).
    if (img_h != 2 * sspec_.topology.input_resolution || img_w != img_h) {
      throw ConfigError(
          "train: square images of exactly twice the topology input_resolution "
          "required (got " + std::to_string(img_w) + "x" + std::to_string(img_h) +
          " for input_resolution " +
          std::to_string(sspec_.topology.input_resolution) + ")");
    }
    const int stride = img_h / sspec_.topology.input_resolution;
    const Var<T> x_orig(detail::stack_images<T>(orig_imgs), false);
    const Var<T> x_trans(detail::stack_images<T>(trans_imgs), false);
    const Tensor<T> gt_orig =
        detail::stack_heatmaps<T>(orig_lms, img_h, img_w, stride, cfg_.sigma);
    const Tensor<T> gt_trans =
        detail::stack_heatmaps<T>(trans_lms, img_h, img_w, stride, cfg_.sigma);

    for (auto& [name, var] : reg_.params) var.zero_grad();
    auto h_orig = model_->forward(x_orig, true);
    auto h_trans = model_->forward(x_trans, true);
    Var<T> loss;
    for (std::size_t s = 0; s < h_orig.size(); ++s) {
      CoherentLossParts parts;
      Var<T> l = coherent_loss(h_orig[s], h_trans[s], gt_orig, gt_trans, t_batch,
                               cfg_.lambda, cfg_.loss_kind, &parts);
      rep.parts.pp += parts.pp;
      rep.parts.pg1 += parts.pg1;
      rep.parts.pg2 += parts.pg2;
      rep.parts.total += parts.total;
      loss = s == 0 ? l : add(loss, l);
    }
    if (!std::isfinite(rep.parts.total)) {
      throw NumericError("train step " + std::to_string(opt_.step) +
                         ": non-finite loss (pp=" + std::to_string(rep.parts.pp) +
                         ", pg1=" + std::to_string(rep.parts.pg1) +
                         ", pg2=" + std::to_string(rep.parts.pg2) + ")");
    }
    loss.backward();
    rep.grad_norm = nadam_apply(reg_, opt_, rep.lr, cfg_.grad_clip);
    rep.wall_ms = std::chrono::duration<double, std::milli>(
                      std::chrono::steady_clock::now() - t0)
                      .count();
    return rep;
  }

  // One update on a random batch with fresh augmentation draws.
  StepReport step(const Dataset& train) {
    if (train.empty()) throw ConfigError("train step: empty dataset");
    std::vector<const Sample*> batch;
    std::vector<TransformSpec> t_batch;
    batch.reserve(cfg_.batch);
    for (int i = 0; i < cfg_.batch; ++i) {
      batch.push_back(&train[static_cast<std::size_t>(
          rng_.uniform_int(0, static_cast<std::int64_t>(train.size()) - 1))]);
    }
    t_batch.reserve(cfg_.batch);
    for (int i = 0; i < cfg_.batch; ++i) {
      const bool flip = rng_.bernoulli(0.5);
      const double rot = rng_.uniform(-40.0, 40.0);
      const double scl = rng_.uniform(0.8, 1.2);
      t_batch.push_back(TransformSpec::centred_transform(
          batch[i]->image.w(), batch[i]->image.h(), rot, scl, flip, flip_pairs_));
    }
    return step_on(batch, t_batch);
  }

  // Runs until total_steps, appending one JSON line per step to `log`.
  void run(const Dataset& train, std::ostream* log = nullptr) {
    while (opt_.step < cfg_.total_steps) {
      const StepReport rep = step(train);
      if (log != nullptr) {
        nlohmann::json line{{"step", rep.step},       {"lr", rep.lr},
                            {"L_pp", rep.parts.pp},   {"L_pg1", rep.parts.pg1},
                            {"L_pg2", rep.parts.pg2}, {"wall_ms", rep.wall_ms}};
        *log << line.dump() << "\n";
      }
    }
    if (log != nullptr) log->flush();
  }

  // --- checkpointing -------------------------------------------------------
  //
  // Layout: "DUTC" magic; u32 length + JSON blob (model/train config, step,
  // rng state); u32 record count; records of u32 name length, name bytes and
  // a tensor in the engine dump format.  Records cover parameters, batch-norm
  // running statistics and both optimiser moments, in registry order.

  void save(const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("checkpoint: cannot open " + path + " for writing");
    os.write("DUTC", 4);
    nlohmann::json flip_pairs = nlohmann::json::array();
    for (const auto& [a, b] : flip_pairs_) flip_pairs.push_back({a, b});
    nlohmann::json meta{{"model", stack_to_json(sspec_)},
                        {"train", train_to_json(cfg_)},
                        {"step", opt_.step},
                        {"rng", rng_.save_state()},
                        {"flip_pairs", flip_pairs}};
    const std::string mj = meta.dump();
    write_u32(os, static_cast<std::uint32_t>(mj.size()));
    os.write(mj.data(), static_cast<std::streamsize>(mj.size()));
    const std::size_t n_records =
        reg_.params.size() * 3 + reg_.buffers.size();
    write_u32(os, static_cast<std::uint32_t>(n_records));
    for (auto& [name, var] : reg_.params) write_record(os, "param/" + name, var.tensor());
    for (auto& [name, buf] : reg_.buffers) write_record(os, "buffer/" + name, *buf);
    for (std::size_t i = 0; i < reg_.params.size(); ++i) {
      write_record(os, "opt_m/" + reg_.params[i].first, opt_.m[i]);
    }
    for (std::size_t i = 0; i < reg_.params.size(); ++i) {
      write_record(os, "opt_v/" + reg_.params[i].first, opt_.v[i]);
    }
    if (!os) throw IoError("checkpoint: write failed for " + path);
  }

  static TrainSession load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("checkpoint: cannot open " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "DUTC", 4) != 0) {
      throw ParseError("checkpoint: bad magic");
    }
    const std::uint32_t mlen = read_u32(is);
    std::string mj(mlen, '\0');
    is.read(mj.data(), mlen);
    if (!is) throw ParseError("checkpoint: truncated config blob");
    nlohmann::json meta;
    try {
      meta = nlohmann::json::parse(mj);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("checkpoint: config blob: ") + e.what());
    }
    if (!meta.contains("model") || !meta.contains("train") || !meta.contains("step") ||
        !meta.contains("rng")) {
      throw ParseError("checkpoint: config blob missing model/train/step/rng");
    }
    TrainSession s(stack_from_json(meta.at("model")), train_from_json(meta.at("train")),
                   restore_tag{});
    s.opt_.step = meta.at("step").get<long long>();
    s.rng_.load_state(meta.at("rng").get<std::string>());
    if (meta.contains("flip_pairs")) {
      std::vector<std::pair<int, int>> pairs;
      for (const auto& p : meta.at("flip_pairs")) {
        pairs.emplace_back(p.at(0).get<int>(), p.at(1).get<int>());
      }
      s.flip_pairs_ = std::move(pairs);
    }

    const std::uint32_t n_records = read_u32(is);
    const std::size_t expected = s.reg_.params.size() * 3 + s.reg_.buffers.size();
    if (n_records != expected) {
      throw ParseError("checkpoint: expected " + std::to_string(expected) +
                       " records, found " + std::to_string(n_records));
    }
    std::size_t cursor = 0;
    for (auto& [name, var] : s.reg_.params) {
      read_record_into(is, "param/" + name, var.tensor(), cursor);
    }
    for (auto& [name, buf] : s.reg_.buffers) {
      read_record_into(is, "buffer/" + name, *buf, cursor);
    }
    for (std::size_t i = 0; i < s.reg_.params.size(); ++i) {
      read_record_into(is, "opt_m/" + s.reg_.params[i].first, s.opt_.m[i], cursor);
    }
    for (std::size_t i = 0; i < s.reg_.params.size(); ++i) {
      read_record_into(is, "opt_v/" + s.reg_.params[i].first, s.opt_.v[i], cursor);
    }
    is.peek();
    if (!is.eof()) throw ParseError("checkpoint: trailing bytes after last record");
    return s;
  }

 private:
  struct restore_tag {};

  // Zero-initialised skeleton for load(): every tensor is overwritten from
  // the record stream, rng state and flip pairs from the config blob.
  TrainSession(const StackSpec& sspec, const TrainConfig& cfg, restore_tag)
      : sspec_(sspec), cfg_(cfg), rng_(0) {
    model_ = std::make_unique<StackedModel<T>>(sspec, nullptr);
    model_->register_tensors(reg_);
    opt_.init(reg_);
  }

  static void write_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    os.write(reinterpret_cast<const char*>(b), 4);
  }

  static std::uint32_t read_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw ParseError("checkpoint: truncated header");
    return static_cast<std::uint32_t>(b[0]) |
           (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) |
           (static_cast<std::uint32_t>(b[3]) << 24);
  }

  static void write_record(std::ostream& os, const std::string& name,
                           const Tensor<T>& t) {
    write_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    t.dump(os);
  }

  static void read_record_into(std::istream& is, const std::string& expected_name,
                               Tensor<T>& dst, std::size_t& cursor) {
    const std::uint32_t nlen = read_u32(is);
    std::string name(nlen, '\0');
    is.read(name.data(), nlen);
    if (!is) throw ParseError("checkpoint: truncated record name");
    if (name != expected_name) {
      throw ParseError("checkpoint: record " + std::to_string(cursor) + " is '" +
                       name + "', expected '" + expected_name + "'");
    }
    Tensor<T> t = Tensor<T>::load(is);
    if (!t.same_shape(dst)) {
      throw ParseError("checkpoint: shape mismatch for record '" + name + "'");
    }
    dst.vec() = t.vec();
    ++cursor;
  }

  StackSpec sspec_;
  TrainConfig cfg_;
  Rng rng_;
  std::vector<std::pair<int, int>> flip_pairs_;
  std::unique_ptr<StackedModel<T>> model_;
  ParamRegistry<T> reg_;
  OptimizerState<T> opt_;
};

// ---------------------------------------------------------------------------
// Whole-run description (config files for the CLI)
// ---------------------------------------------------------------------------
//
// {
//   "model": { "topology": {...}, "num_stacks": ..., ... },
//   "train": { "lr0": ..., "batch": ..., ... },
//   "data":  { "synth": {...}, "n_train": 200, "n_eval": 50 }
//            or { "manifest": "path/to/manifest.json", "n_eval": 50 }
// }
//
// With a manifest source the last n_eval samples are held out; with a
// synthetic source n_train + n_eval samples are generated and split.

struct TrainRunConfig {
  StackSpec model;
  TrainConfig train;
  bool use_synth = true;
  SynthConfig synth;
  int n_train = 200;
  int n_eval = 50;
  std::string manifest;
};

inline TrainRunConfig run_from_json(const nlohmann::json& j) {
  detail::JsonReader r(j, "config");
  TrainRunConfig c;
  c.model = stack_from_json(r.raw("model"));
  c.train = r.has("train") ? train_from_json(r.raw("train")) : TrainConfig{};
  detail::JsonReader d(r.raw("data"), "data");
  if (d.has("synth") == d.has("manifest")) {
    throw ConfigError("data: exactly one of 'synth' or 'manifest' required");
  }
  if (d.has("synth")) {
    c.use_synth = true;
    c.synth = synth_from_json(d.raw("synth"));
    c.n_train = d.get<int>("n_train", c.n_train);
  } else {
    c.use_synth = false;
    c.manifest = d.require<std::string>("manifest");
  }
  c.n_eval = d.get<int>("n_eval", c.n_eval);
  d.finish();
  r.finish();
  if (c.n_eval < 0 || (c.use_synth && c.n_train < 1)) {
    throw ConfigError("data: sample counts out of range");
  }
  if (c.use_synth && c.synth.n_landmarks != c.model.num_landmarks) {
    throw ConfigError("data: synth n_landmarks disagrees with the model head");
  }
  return c;
}

inline nlohmann::json run_to_json(const TrainRunConfig& c) {
  nlohmann::json data;
  if (c.use_synth) {
    data = {{"synth", synth_to_json(c.synth)}, {"n_train", c.n_train}};
  } else {
    data = {{"manifest", c.manifest}};
  }
  data["n_eval"] = c.n_eval;
  return {{"model", stack_to_json(c.model)},
          {"train", train_to_json(c.train)},
          {"data", data}};
}

// Materialises the (train, heldout) split described by the config.
inline std::pair<Dataset, Dataset> load_run_datasets(const TrainRunConfig& c) {
  Dataset all;
  std::size_t n_eval = c.n_eval;
  if (c.use_synth) {
    all = generate(c.synth, c.n_train + c.n_eval);
  } else {
    all = load_manifest_dataset(c.manifest);
    if (all.size() <= n_eval) {
      throw ConfigError("data: manifest smaller than the held-out split");
    }
  }
  Dataset train(all.begin(), all.end() - n_eval);
  Dataset heldout(all.end() - n_eval, all.end());
  return {std::move(train), std::move(heldout)};
}

}  // namespace dunet
