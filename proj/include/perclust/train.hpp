#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "perclust/dataset.hpp"
#include "perclust/loss.hpp"
#include "perclust/metrics.hpp"
#include "perclust/model.hpp"
#include "perclust/optim.hpp"

namespace perclust {

struct AugmentConfig {
  bool flips = true;
  bool rotation = true;
  bool crop_wrap = true;
};

struct TrainConfig {
  double learning_rate = 1e-5;
  int batch_size = 32;
  double negative_momentum = 50.0;
  double t_agree = 0.7;
  std::int64_t max_steps = 37000;
  int plateau_patience = 50;
  double plateau_factor = 10.0;
  AugmentConfig augment;
  std::uint64_t seed = 0;
  ModelConfig model;

  void validate() const {
    if (learning_rate <= 0.0 || plateau_factor <= 1.0 || batch_size < 1 || max_steps < 0)
      throw Error::usage("train config: rates and sizes must be positive");
    if (t_agree < 0.0 || t_agree > 1.0) throw Error::usage("train config: t_agree must be in [0, 1]");
    if (negative_momentum <= 0.0) throw Error::usage("train config: negative momentum must be positive");
    model.validate();
  }
};

struct FinetuneConfig {
  std::string base_checkpoint;
  double learning_rate = 1e-7;
  std::int64_t steps = 8000;
  double negative_momentum = 0.1;
  double t_agree = 0.7;
  int batch_size = 32;
  int plateau_patience = 50;
  double plateau_factor = 10.0;
  AugmentConfig augment;
  std::uint64_t seed = 0;
};

// One optimization sample: a stimulus paired with a single rater's labels and
// the group-level agreement target shared by all samples of that stimulus.
struct TrainSample {
  std::string id;
  std::string rater;
  std::vector<Point2> points;
  std::vector<int> labels;
  AgreementVector gamma;
};

inline nlohmann::json augment_config_to_json(const AugmentConfig& a) {
  return {{"flips", a.flips}, {"rotation", a.rotation}, {"crop_wrap", a.crop_wrap}};
}

inline AugmentConfig augment_config_from_json(const nlohmann::json& j) {
  AugmentConfig a;
  if (j.contains("flips")) a.flips = j["flips"].get<bool>();
  if (j.contains("rotation")) a.rotation = j["rotation"].get<bool>();
  if (j.contains("crop_wrap")) a.crop_wrap = j["crop_wrap"].get<bool>();
  return a;
}

inline nlohmann::json train_config_to_json(const TrainConfig& c) {
  return {{"learning_rate", c.learning_rate},
          {"batch_size", c.batch_size},
          {"negative_momentum", c.negative_momentum},
          {"t_agree", c.t_agree},
          {"max_steps", c.max_steps},
          {"plateau_patience", c.plateau_patience},
          {"plateau_factor", c.plateau_factor},
          {"augment", augment_config_to_json(c.augment)},
          {"seed", c.seed},
          {"model", model_config_to_json(c.model)}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  if (j.contains("learning_rate")) c.learning_rate = j["learning_rate"].get<double>();
  if (j.contains("batch_size")) c.batch_size = j["batch_size"].get<int>();
  if (j.contains("negative_momentum")) c.negative_momentum = j["negative_momentum"].get<double>();
  if (j.contains("t_agree")) c.t_agree = j["t_agree"].get<double>();
  if (j.contains("max_steps")) c.max_steps = j["max_steps"].get<std::int64_t>();
  if (j.contains("plateau_patience")) c.plateau_patience = j["plateau_patience"].get<int>();
  if (j.contains("plateau_factor")) c.plateau_factor = j["plateau_factor"].get<double>();
  if (j.contains("augment")) c.augment = augment_config_from_json(j["augment"]);
  if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
  if (j.contains("model")) c.model = model_config_from_json(j["model"]);
  c.validate();
  return c;
}

inline nlohmann::json finetune_config_to_json(const FinetuneConfig& c) {
  return {{"base_checkpoint", c.base_checkpoint},
          {"learning_rate", c.learning_rate},
          {"steps", c.steps},
          {"negative_momentum", c.negative_momentum},
          {"t_agree", c.t_agree},
          {"batch_size", c.batch_size},
          {"plateau_patience", c.plateau_patience},
          {"plateau_factor", c.plateau_factor},
          {"augment", augment_config_to_json(c.augment)},
          {"seed", c.seed}};
}

inline FinetuneConfig finetune_config_from_json(const nlohmann::json& j) {
  FinetuneConfig c;
  if (j.contains("base_checkpoint")) c.base_checkpoint = j["base_checkpoint"].get<std::string>();
  if (j.contains("learning_rate")) c.learning_rate = j["learning_rate"].get<double>();
  if (j.contains("steps")) c.steps = j["steps"].get<std::int64_t>();
  if (j.contains("negative_momentum")) c.negative_momentum = j["negative_momentum"].get<double>();
  if (j.contains("t_agree")) c.t_agree = j["t_agree"].get<double>();
  if (j.contains("batch_size")) c.batch_size = j["batch_size"].get<int>();
  if (j.contains("plateau_patience")) c.plateau_patience = j["plateau_patience"].get<int>();
  if (j.contains("plateau_factor")) c.plateau_factor = j["plateau_factor"].get<double>();
  if (j.contains("augment")) c.augment = augment_config_from_json(j["augment"]);
  if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
  return c;
}

// Cyclic shift across a cut at `cut` on one axis: the >= cut side moves to
// the low end, the < cut side to the high end. Any cluster with points on
// both sides splits, the wrapped (>= cut) side receiving a fresh id. Noise
// (label 0) never splits, and per-point agreement targets travel unchanged.
inline void crop_wrap_axis(TrainSample& sample, int axis, double cut) {
  const int n = static_cast<int>(sample.points.size());
  std::vector<char> wrapped(static_cast<std::size_t>(n), 0);
  for (int i = 0; i < n; ++i) {
    double& v = axis == 0 ? sample.points[static_cast<std::size_t>(i)].x
                          : sample.points[static_cast<std::size_t>(i)].y;
    if (v >= cut) {
      v = v - cut - 1.0;
      wrapped[static_cast<std::size_t>(i)] = 1;
    } else {
      v = v - cut + 1.0;
    }
  }
  int max_label = 0;
  for (int l : sample.labels) max_label = std::max(max_label, l);
  std::map<int, std::pair<bool, bool>> sides;  // label -> (has kept, has wrapped)
  for (int i = 0; i < n; ++i) {
    const int l = sample.labels[static_cast<std::size_t>(i)];
    if (l == 0) continue;
    auto& [kept, moved] = sides[l];
    (wrapped[static_cast<std::size_t>(i)] ? moved : kept) = true;
  }
  std::map<int, int> fresh;
  for (const auto& [label, flags] : sides)
    if (flags.first && flags.second) fresh[label] = ++max_label;
  for (int i = 0; i < n; ++i) {
    const int l = sample.labels[static_cast<std::size_t>(i)];
    if (l == 0 || !wrapped[static_cast<std::size_t>(i)]) continue;
    auto it = fresh.find(l);
    if (it != fresh.end()) sample.labels[static_cast<std::size_t>(i)] = it->second;
  }
}

// Flips, rotation about the origin, re-normalization, then an independent
// crop-wrap per axis with probability 1/2 each.
inline TrainSample augment(const TrainSample& input, std::uint64_t seed,
                           const AugmentConfig& config = AugmentConfig{}) {
  TrainSample out = input;
  auto rng = rng_from(seed, {0xa06ull});

  if (config.flips) {
    const bool flip_x = bounded(rng, 2) == 1;
    const bool flip_y = bounded(rng, 2) == 1;
    for (Point2& p : out.points) {
      if (flip_x) p.x = -p.x;
      if (flip_y) p.y = -p.y;
    }
  }
  if (config.rotation) {
    const double theta = uniform_in(rng, -3.14159265358979323846, 3.14159265358979323846);
    const double c = std::cos(theta), s = std::sin(theta);
    for (Point2& p : out.points) {
      const double x = p.x, y = p.y;
      p.x = c * x - s * y;
      p.y = s * x + c * y;
    }
  }
  if (config.flips || config.rotation) {
    PointSet ps{input.id, out.points};
    out.points = normalize_points(ps).points;
  }

  if (config.crop_wrap) {
    for (int axis = 0; axis < 2; ++axis) {
      if (bounded(rng, 2) != 1) continue;
      crop_wrap_axis(out, axis, uniform_in(rng, -1.0, 1.0));
    }
  }
  return out;
}

// Agreement filter first, then one sample per (stimulus, rater) with the
// group agreement target computed once per stimulus.
inline std::vector<TrainSample> build_samples(const std::vector<AnnotatedPlot>& plots, double t_agree,
                                              int expected_points = kTrainInputSize) {
  const auto kept = filter_by_agreement(plots, t_agree);
  std::vector<TrainSample> samples;
  for (const AnnotatedPlot& plot : kept) {
    if (plot.pointset.size() != expected_points)
      throw Error::data("build_samples: stimulus '" + plot.pointset.id + "' has " +
                        std::to_string(plot.pointset.size()) + " points, expected " +
                        std::to_string(expected_points));
    const AgreementVector gamma = group_agreement(plot.group);
    for (const Annotation& rater : plot.group.annotations) {
      TrainSample s;
      s.id = plot.pointset.id;
      s.rater = rater.rater;
      s.points = plot.pointset.points;
      s.labels = rater.labels;
      s.gamma = gamma;
      samples.push_back(std::move(s));
    }
  }
  return samples;
}

struct StepLog {
  std::int64_t step = 0;
  double mcl = 0.0;
  double noise = 0.0;
  double agree = 0.0;
  double total = 0.0;
  double lr = 0.0;
};

struct EpochLog {
  std::int64_t epoch = 0;
  double val_total = 0.0;
  double lr = 0.0;
  bool improved = false;
};

using StepCallback = std::function<void(const StepLog&)>;
using EpochCallback = std::function<void(const EpochLog&)>;

// All trainer randomness is keyed on (seed, purpose, step/epoch, slot), so a
// state snapshot plus the same sample lists resumes bit-exactly.
class Trainer {
 public:
  Trainer(TrainConfig config, std::vector<TrainSample> train_samples,
          std::vector<TrainSample> val_samples)
      : config_(std::move(config)),
        train_(std::move(train_samples)),
        val_(std::move(val_samples)),
        scheduler_(config_.learning_rate, config_.plateau_patience, config_.plateau_factor) {
    config_.validate();
    if (train_.empty()) throw Error::data("trainer: empty training sample set");
    if (val_.empty()) throw Error::data("trainer: empty validation sample set");
  }

  void init_fresh() { init_with_params(init_params(config_.model, config_.seed)); }

  void init_with_params(ModelParams params) {
    params_ = std::move(params);
    adam_ = AdamState{};
    adam_.learning_rate = config_.learning_rate;
    adam_.init(params_.tensors);
    scheduler_ = PlateauScheduler(config_.learning_rate, config_.plateau_patience, config_.plateau_factor);
    step_ = epoch_ = pos_ = 0;
    best_val_ = std::numeric_limits<double>::infinity();
    best_params_ = params_;
    has_best_ = false;
  }

  // Runs until the global step counter reaches min(step_target, max_steps).
  void run_until(std::int64_t step_target, const StepCallback& on_step = nullptr,
                 const EpochCallback& on_epoch = nullptr) {
    const std::int64_t target = std::min(step_target, config_.max_steps);
    while (step_ < target) {
      if (pos_ == 0) order_ = epoch_order(epoch_);
      const int remaining = static_cast<int>(train_.size() - static_cast<std::size_t>(pos_));
      const int batch = std::min(config_.batch_size, remaining);
      const StepLog log = run_batch(batch);
      if (on_step) on_step(log);
      pos_ += batch;
      if (pos_ == static_cast<std::int64_t>(train_.size())) {
        pos_ = 0;
        ++epoch_;
        const EpochLog elog = end_epoch();
        if (on_epoch) on_epoch(elog);
      }
      if (step_ >= config_.max_steps) break;
    }
  }

  // Validation pass for best-parameter selection when training stops
  // mid-epoch; does not feed the scheduler.
  void final_validation() {
    if (pos_ == 0 && has_best_) return;
    const double val = validation_loss();
    if (val < best_val_) {
      best_val_ = val;
      best_params_ = params_;
      has_best_ = true;
    }
  }

  double validation_loss() const {
    std::vector<double> losses(val_.size(), 0.0);
    parallel_for(val_.size(), [&](std::size_t i) {
      losses[i] = sample_loss(val_[i], 0, false, nullptr).total;
    });
    double acc = 0.0;
    for (double v : losses) acc += v;
    return acc / static_cast<double>(losses.size());
  }

  const ModelParams& params() const { return params_; }
  const ModelParams& best_params() const { return has_best_ ? best_params_ : params_; }
  const ModelConfig& model_config() const { return config_.model; }
  std::int64_t step() const { return step_; }
  std::int64_t epoch() const { return epoch_; }
  double best_val() const { return best_val_; }

  void save_state(const std::string& path) const {
    nlohmann::json header{{"model_config", model_config_to_json(config_.model)},
                          {"step", step_},
                          {"epoch", epoch_},
                          {"pos", pos_},
                          {"best_val", best_val_},
                          {"has_best", has_best_},
                          {"sched_lr", scheduler_.learning_rate()},
                          {"sched_best", scheduler_.best()},
                          {"sched_counter", scheduler_.counter()},
                          {"sched_has_best", scheduler_.has_best()},
                          {"adam_step", adam_.step},
                          {"adam_lr", adam_.learning_rate}};
    std::vector<double> blob;
    auto append_params = [&](const ModelParams& p) {
      for (const auto& t : p.tensors) blob.insert(blob.end(), t.values.begin(), t.values.end());
    };
    append_params(params_);
    append_params(best_params_);
    for (const auto& m : adam_.m) blob.insert(blob.end(), m.begin(), m.end());
    for (const auto& v : adam_.v) blob.insert(blob.end(), v.begin(), v.end());
    detail::write_blob_file(path, kStateMagic, header, blob);
  }

  void load_state(const std::string& path) {
    auto [header, blob] = detail::read_blob_file(path, kStateMagic);
    const ModelConfig mc = model_config_from_json(header.at("model_config"));
    if (model_config_to_json(mc) != model_config_to_json(config_.model))
      throw Error::data("trainer state: model config mismatch");
    init_fresh();
    std::size_t cursor = 0;
    auto take_params = [&](ModelParams& p) {
      for (auto& t : p.tensors) {
        if (cursor + t.numel() > blob.size()) throw Error::data("trainer state: truncated blob");
        std::copy_n(blob.begin() + static_cast<std::ptrdiff_t>(cursor), t.numel(), t.values.begin());
        cursor += t.numel();
      }
    };
    take_params(params_);
    take_params(best_params_);
    for (auto& m : adam_.m) {
      std::copy_n(blob.begin() + static_cast<std::ptrdiff_t>(cursor), m.size(), m.begin());
      cursor += m.size();
    }
    for (auto& v : adam_.v) {
      std::copy_n(blob.begin() + static_cast<std::ptrdiff_t>(cursor), v.size(), v.begin());
      cursor += v.size();
    }
    step_ = header.at("step").get<std::int64_t>();
    epoch_ = header.at("epoch").get<std::int64_t>();
    pos_ = header.at("pos").get<std::int64_t>();
    best_val_ = header.at("best_val").get<double>();
    has_best_ = header.at("has_best").get<bool>();
    adam_.step = header.at("adam_step").get<std::int64_t>();
    adam_.learning_rate = header.at("adam_lr").get<double>();
    scheduler_.restore(header.at("sched_lr").get<double>(), header.at("sched_best").get<double>(),
                       header.at("sched_counter").get<int>(), header.at("sched_has_best").get<bool>());
    if (pos_ != 0) order_ = epoch_order(epoch_);
  }

 private:
  static constexpr char kStateMagic[8] = {'P', 'C', 'L', 'S', 'T', 'A', 'T', '1'};
  static constexpr std::uint64_t kOrderKey = 0x04de4;
  static constexpr std::uint64_t kAugKey = 0xa06;
  static constexpr std::uint64_t kFpsKey = 0xf45;

  struct SampleLoss {
    double mcl = 0.0;
    double noise = 0.0;
    double agree = 0.0;
    double total = 0.0;
  };

  std::vector<std::int64_t> epoch_order(std::int64_t epoch) const {
    std::vector<std::int64_t> order(train_.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<std::int64_t>(i);
    auto rng = rng_from(config_.seed, {kOrderKey, static_cast<std::uint64_t>(epoch)});
    deterministic_shuffle(order, rng);
    return order;
  }

  SampleLoss sample_loss(const TrainSample& sample, int fps_start, bool with_grad,
                         std::vector<std::vector<double>>* grads) const {
    ad::Tape tape;
    const auto ids = lease_params(tape, params_, with_grad);
    const auto f = forward_on_tape(tape, sample.points, params_, config_.model, ids, fps_start);
    const auto target = similarity_matrix(sample.labels);
    const auto weights = weight_matrix(sample.labels, config_.negative_momentum);
    const auto mcl = mcl_loss_on_tape(tape, target.entries, weights, tape.row_gram(f.cluster_probs));
    const auto noise = noise_loss_on_tape(tape, noise_indicator(sample.labels), f.noise_prob);
    const auto agree = agree_loss_on_tape(tape, sample.gamma, f.agreement);
    const auto total = total_loss_on_tape(tape, mcl, noise, agree);
    SampleLoss out;
    out.mcl = tape.scalar_value(mcl);
    out.noise = tape.scalar_value(noise);
    out.agree = tape.scalar_value(agree);
    out.total = tape.scalar_value(total);
    if (with_grad) {
      tape.backward(total);
      grads->clear();
      grads->reserve(ids.size());
      for (auto id : ids) grads->push_back(tape.grad(id));
    }
    return out;
  }

  StepLog run_batch(int batch) {
    std::vector<SampleLoss> losses(static_cast<std::size_t>(batch));
    std::vector<std::vector<std::vector<double>>> slot_grads(static_cast<std::size_t>(batch));
    parallel_for(static_cast<std::size_t>(batch), [&](std::size_t slot) {
      const TrainSample& base =
          train_[static_cast<std::size_t>(order_[static_cast<std::size_t>(pos_) + slot])];
      const bool any_aug = config_.augment.flips || config_.augment.rotation || config_.augment.crop_wrap;
      const TrainSample sample =
          any_aug ? augment(base,
                            derive_key(config_.seed, {kAugKey, static_cast<std::uint64_t>(step_),
                                                      static_cast<std::uint64_t>(slot)}),
                    config_.augment)
                  : base;
      const int n = static_cast<int>(sample.points.size());
      const int fps_start = static_cast<int>(derive_key(config_.seed,
                                                        {kFpsKey, static_cast<std::uint64_t>(step_),
                                                         static_cast<std::uint64_t>(slot)}) %
                                             static_cast<std::uint64_t>(n));
      losses[slot] = sample_loss(sample, fps_start, true, &slot_grads[slot]);
    });

    StepLog log;
    log.step = step_ + 1;
    for (int slot = 0; slot < batch; ++slot) {
      const SampleLoss& l = losses[static_cast<std::size_t>(slot)];
      if (!std::isfinite(l.total))
        throw Error::numeric("training diverged: non-finite loss at step " + std::to_string(step_ + 1));
      log.mcl += l.mcl;
      log.noise += l.noise;
      log.agree += l.agree;
      log.total += l.total;
    }
    log.mcl /= batch;
    log.noise /= batch;
    log.agree /= batch;
    log.total /= batch;

    // Slot-ordered reduction keeps gradients identical for any worker count.
    std::vector<std::vector<double>> grads(params_.tensors.size());
    for (std::size_t t = 0; t < params_.tensors.size(); ++t)
      grads[t].assign(params_.tensors[t].numel(), 0.0);
    for (int slot = 0; slot < batch; ++slot)
      for (std::size_t t = 0; t < grads.size(); ++t) {
        const auto& src = slot_grads[static_cast<std::size_t>(slot)][t];
        for (std::size_t i = 0; i < src.size(); ++i) grads[t][i] += src[i];
      }
    const double inv = 1.0 / static_cast<double>(batch);
    for (auto& g : grads)
      for (double& v : g) v *= inv;

    adam_.learning_rate = scheduler_.learning_rate();
    adam_step(params_.tensors, grads, adam_);
    ++step_;
    log.lr = adam_.learning_rate;
    return log;
  }

  EpochLog end_epoch() {
    const double val = validation_loss();
    EpochLog log;
    log.epoch = epoch_;
    log.val_total = val;
    if (val < best_val_) {
      best_val_ = val;
      best_params_ = params_;
      has_best_ = true;
      log.improved = true;
    }
    log.lr = scheduler_.step(val);
    return log;
  }

  TrainConfig config_;
  std::vector<TrainSample> train_;
  std::vector<TrainSample> val_;
  ModelParams params_;
  ModelParams best_params_;
  AdamState adam_;
  PlateauScheduler scheduler_;
  std::vector<std::int64_t> order_;
  std::int64_t step_ = 0;
  std::int64_t epoch_ = 0;
  std::int64_t pos_ = 0;
  double best_val_ = std::numeric_limits<double>::infinity();
  bool has_best_ = false;
};

struct TrainOutput {
  ModelParams best_params;
  ModelParams final_params;
  ModelConfig model_config;
  std::vector<StepLog> steps;
  std::vector<EpochLog> epochs;
};

// Full protocol: agreement-filtered per-rater samples, augmentation, Adam
// with plateau decay, per-epoch validation, best-validation checkpoint.
inline TrainOutput train(const TrainConfig& config, const std::vector<AnnotatedPlot>& train_plots,
                         const std::vector<AnnotatedPlot>& val_plots,
                         const StepCallback& on_step = nullptr, const EpochCallback& on_epoch = nullptr) {
  config.validate();
  auto train_samples = build_samples(train_plots, config.t_agree);
  auto val_samples = build_samples(val_plots, 0.0);
  Trainer trainer(config, std::move(train_samples), std::move(val_samples));
  trainer.init_fresh();
  TrainOutput out;
  out.model_config = config.model;
  trainer.run_until(config.max_steps,
                    [&](const StepLog& s) {
                      out.steps.push_back(s);
                      if (on_step) on_step(s);
                    },
                    [&](const EpochLog& e) {
                      out.epochs.push_back(e);
                      if (on_epoch) on_epoch(e);
                    });
  trainer.final_validation();
  out.best_params = trainer.best_params();
  out.final_params = trainer.params();
  return out;
}

// Continues from a checkpoint with a reduced rate, a new negative momentum
// and a fresh optimizer state.
inline TrainOutput finetune(const FinetuneConfig& config, const std::vector<AnnotatedPlot>& train_plots,
                            const std::vector<AnnotatedPlot>& val_plots,
                            const StepCallback& on_step = nullptr,
                            const EpochCallback& on_epoch = nullptr) {
  auto [params, model_config] = load_checkpoint(config.base_checkpoint);
  TrainConfig tc;
  tc.learning_rate = config.learning_rate;
  tc.batch_size = config.batch_size;
  tc.negative_momentum = config.negative_momentum;
  tc.t_agree = config.t_agree;
  tc.max_steps = config.steps;
  tc.plateau_patience = config.plateau_patience;
  tc.plateau_factor = config.plateau_factor;
  tc.augment = config.augment;
  tc.seed = config.seed;
  tc.model = model_config;
  tc.validate();
  auto train_samples = build_samples(train_plots, tc.t_agree);
  auto val_samples = build_samples(val_plots, 0.0);
  Trainer trainer(tc, std::move(train_samples), std::move(val_samples));
  trainer.init_with_params(std::move(params));
  TrainOutput out;
  out.model_config = model_config;
  trainer.run_until(tc.max_steps,
                    [&](const StepLog& s) {
                      out.steps.push_back(s);
                      if (on_step) on_step(s);
                    },
                    [&](const EpochLog& e) {
                      out.epochs.push_back(e);
                      if (on_epoch) on_epoch(e);
                    });
  if (tc.max_steps > 0) trainer.final_validation();
  out.best_params = tc.max_steps > 0 ? trainer.best_params() : trainer.params();
  out.final_params = trainer.params();
  return out;
}

}  // namespace perclust
