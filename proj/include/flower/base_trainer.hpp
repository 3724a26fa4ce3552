#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "flower/autodiff.hpp"
#include "flower/model.hpp"
#include "flower/noise.hpp"
#include "flower/protonet.hpp"
#include "flower/rng.hpp"
#include "flower/schedule.hpp"
#include "flower/tensor.hpp"

namespace flower {

/// Box around the feature-extractor anchor discovered by base training.
/// The clamp region is [anchor - bound, anchor + bound] elementwise.
struct FlatWideRegion {
  std::map<std::string, Tensor> anchor;  // feature-extractor tensors only
  double bound = 0.0;

  bool empty() const { return anchor.empty(); }
};

inline FlatWideRegion snapshot_region(const ParamSet& params, double bound) {
  FlatWideRegion region;
  region.bound = bound;
  for (const auto& id : params.ids(ParamGroup::feature_extractor))
    region.anchor.emplace(id, params.at(id));
  return region;
}

struct StepRecord {
  double loss = 0.0;
  double grad_norm_sq = 0.0;
};

struct TrainDiagnostics {
  std::vector<StepRecord> steps;  // one entry per parameter update
  std::size_t epochs = 0;
  std::size_t updates_per_epoch = 0;
  std::vector<double> epoch_loss;  // mean loss per epoch
};

/// Per-update ||mean gradient||_2^2 sequence, for trend inspection against
/// the vanishing-gradient convergence property.
inline std::vector<double> gradient_norm_trace(const TrainDiagnostics& diag) {
  std::vector<double> out;
  out.reserve(diag.steps.size());
  for (const StepRecord& s : diag.steps) out.push_back(s.grad_norm_sq);
  return out;
}

inline double grad_norm_sq(const GradMap& grads) {
  double s = 0.0;
  for (const auto& [_, g] : grads)
    for (std::size_t i = 0; i < g.size(); ++i) s += g[i] * g[i];
  return s;
}

inline GradMap scale_grads(GradMap grads, double c) {
  for (auto& [_, g] : grads)
    for (std::size_t i = 0; i < g.size(); ++i) g[i] *= c;
  return grads;
}

inline void accumulate_grads(GradMap& into, const GradMap& from) {
  for (const auto& [id, g] : from) {
    auto it = into.find(id);
    if (it == into.end()) {
      into.emplace(id, g);
    } else {
      for (std::size_t i = 0; i < g.size(); ++i) it->second[i] += g[i];
    }
  }
}

/// Loss-and-gradient evaluator for the generic SGD loop below.
using LossGradFn = std::function<std::pair<double, GradMap>(const ParamSet&)>;

/// Plain SGD over an arbitrary objective, recording per-step loss and
/// squared gradient norm. The schedule is indexed by step. Aborts on a
/// non-finite loss.
inline TrainDiagnostics sgd_trajectory(ParamSet& params, const LossGradFn& fn,
                                       const LrSchedule& schedule,
                                       std::size_t steps) {
  TrainDiagnostics diag;
  diag.epochs = steps;
  diag.updates_per_epoch = 1;
  diag.steps.reserve(steps);
  for (std::size_t k = 0; k < steps; ++k) {
    auto [loss, grads] = fn(params);
    FLOWER_CHECK(std::isfinite(loss),
                 "sgd_trajectory: non-finite loss at step " + std::to_string(k));
    diag.steps.push_back({loss, grad_norm_sq(grads)});
    params = sgd_step(params, grads, schedule.rate(k));
  }
  return diag;
}

/// Builds the per-trial base loss on a tape bound to the *perturbed*
/// parameters: episode cross-entropy + KL-to-uniform (both on the perturbed
/// forward pass) + lambda1 * mean_c ||p_c - p_c*||_2, where the reference
/// prototypes p_c come from the unperturbed parameters and enter as
/// constants (the drift gradient flows through the perturbed path only).
/// `include_kl = false` drops the projection term (plain-CE baselines).
inline Tape::NodeId build_base_loss(Tape& tape, const ModelConfig& cfg,
                                    const Tensor& features,
                                    const std::vector<std::size_t>& slots,
                                    std::size_t n_classes,
                                    const Tensor& reference_protos,
                                    double lambda1, bool include_kl = true) {
  Tape::NodeId z = build_embedding(tape, cfg, tape.constant(features, "batch"));
  Tape::NodeId protos = tape.group_mean(z, slots, n_classes);
  Tape::NodeId logits = build_neg_distance_logits(tape, z, protos, cfg.distance);
  Tape::NodeId loss = build_ce_from_logits(tape, logits, slots);
  if (include_kl)
    loss = tape.add(loss, build_kl_uniform_from_logits(tape, logits));
  if (lambda1 != 0.0) {
    Tape::NodeId ref = tape.constant(reference_protos, "reference_protos");
    Tape::NodeId diff = tape.sub(ref, protos);
    Tape::NodeId norms = tape.sqrt(tape.row_sum(tape.square(diff)));
    loss = tape.add(loss, tape.scale(tape.mean_all(norms), lambda1));
  }
  return loss;
}

/// Scalar value of the base loss for given unperturbed/perturbed parameter
/// pairs on one batch.
inline double base_loss(const ModelConfig& cfg, const ParamSet& params,
                        const ParamSet& perturbed, const Batch& batch,
                        double lambda1) {
  batch.validate();
  FLOWER_CHECK(batch.size() > 0, "base_loss: empty batch");
  std::vector<int> classes = distinct_labels(batch.labels);
  std::vector<std::size_t> slots = label_slots(batch.labels, classes);
  Tensor reference = compute_prototypes(cfg, params, batch).matrix();
  Tape tape(perturbed);
  Tape::NodeId loss = build_base_loss(tape, cfg, batch.features, slots,
                                      classes.size(), reference, lambda1);
  return tape.scalar(loss);
}

struct BaseTrainResult {
  ParamSet params;
  FlatWideRegion region;
  TrainDiagnostics diagnostics;
};

/// Switches for the base-phase variants: the full flat-wide loss, the
/// wide-only form (no noise trials, no drift) and the plain-CE form used
/// by the baselines.
struct BaseOptions {
  bool flat = true;  // M noise trials + prototype-drift anchoring
  bool wide = true;  // KL-to-uniform projection term
  double lambda1 = 1.0;
};

inline BaseTrainResult train_base_with_options(
    const ModelConfig& cfg, ParamSet params, const Batch& data,
    const NoiseSpec& noise, const LrSchedule& schedule, std::size_t epochs,
    std::size_t batch_size, const BaseOptions& options, Rng& rng) {
  data.validate();
  noise.validate();
  schedule.validate();
  FLOWER_CHECK(epochs >= 1, "train_base: epochs must be >= 1");
  FLOWER_CHECK(batch_size >= 1, "train_base: batch_size must be >= 1");

  std::size_t n = data.size();
  std::size_t batches = (n + batch_size - 1) / batch_size;
  std::size_t trials = options.flat ? noise.trials : 1;
  double lambda1 = options.flat ? options.lambda1 : 0.0;

  TrainDiagnostics diag;
  diag.epochs = epochs;
  diag.updates_per_epoch = batches;

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;

  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    rng.shuffle(order);
    double lr = schedule.rate(epoch);
    double epoch_total = 0.0;

    for (std::size_t b = 0; b < batches; ++b) {
      std::size_t lo = b * batch_size;
      std::size_t hi = std::min(n, lo + batch_size);
      Batch batch;
      batch.features = Tensor({hi - lo, data.features.cols()});
      batch.labels.reserve(hi - lo);
      for (std::size_t i = lo; i < hi; ++i) {
        for (std::size_t d = 0; d < data.features.cols(); ++d)
          batch.features.at(i - lo, d) = data.features.at(order[i], d);
        batch.labels.push_back(data.labels[order[i]]);
      }
      std::vector<int> classes = distinct_labels(batch.labels);
      std::vector<std::size_t> slots = label_slots(batch.labels, classes);
      Tensor reference = lambda1 != 0.0
                             ? compute_prototypes(cfg, params, batch).matrix()
                             : Tensor({1, 1});

      GradMap mean_grad;
      double trial_total = 0.0;
      for (std::size_t j = 0; j < trials; ++j) {
        ParamSet perturbed =
            options.flat ? apply_noise(params, sample_noise(noise, cfg, params, rng))
                         : params;
        Tape tape(perturbed);
        Tape::NodeId loss =
            build_base_loss(tape, cfg, batch.features, slots, classes.size(),
                            reference, lambda1, options.wide);
        double value = tape.scalar(loss);
        FLOWER_CHECK(std::isfinite(value),
                     "train_base: non-finite loss at epoch " +
                         std::to_string(epoch) + " trial " + std::to_string(j));
        trial_total += value;
        accumulate_grads(mean_grad, tape.backward(loss));
      }
      mean_grad =
          scale_grads(std::move(mean_grad), 1.0 / static_cast<double>(trials));
      double mean_loss = trial_total / static_cast<double>(trials);
      diag.steps.push_back({mean_loss, grad_norm_sq(mean_grad)});
      epoch_total += mean_loss;
      params = sgd_step(params, mean_grad, lr);
    }
    diag.epoch_loss.push_back(epoch_total / static_cast<double>(batches));
  }

  BaseTrainResult result{std::move(params), {}, std::move(diag)};
  result.region = snapshot_region(result.params, noise.bound);
  return result;
}

/// Base-phase training with the full flat-wide objective: per update, M
/// noise trials against a fixed parameter snapshot; the step direction is
/// the arithmetic mean of the M per-trial gradients. Noise never mutates
/// the snapshot (perturbations are applied to copies), so the
/// reset-after-trial contract holds bit-exactly.
inline BaseTrainResult train_base(const ModelConfig& cfg, ParamSet params,
                                  const Batch& data, const NoiseSpec& noise,
                                  const LrSchedule& schedule,
                                  std::size_t epochs, std::size_t batch_size,
                                  double lambda1, Rng& rng) {
  BaseOptions options;
  options.lambda1 = lambda1;
  return train_base_with_options(cfg, std::move(params), data, noise, schedule,
                                 epochs, batch_size, options, rng);
}

/// Max |L_base(params + eps) - L_base(params)| over fresh noise draws.
/// Small values at the trained anchor indicate the loss is flat inside the
/// noise box.
inline double flatness_probe(const ModelConfig& cfg, const ParamSet& params,
                             const Batch& data, const NoiseSpec& noise,
                             std::size_t draws, Rng& rng) {
  double at_anchor = base_loss(cfg, params, params, data, 0.0);
  double worst = 0.0;
  for (std::size_t i = 0; i < draws; ++i) {
    ParamSet perturbed = apply_noise(params, sample_noise(noise, cfg, params, rng));
    double shifted = base_loss(cfg, params, perturbed, data, 0.0);
    worst = std::max(worst, std::abs(shifted - at_anchor));
  }
  FLOWER_CHECK(std::isfinite(worst), "flatness_probe: non-finite loss");
  return worst;
}

}  // namespace flower
