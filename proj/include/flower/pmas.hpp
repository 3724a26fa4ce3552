#pragma once

#include <cmath>
#include <map>
#include <string>

#include "flower/autodiff.hpp"
#include "flower/model.hpp"
#include "flower/protonet.hpp"
#include "flower/tensor.hpp"

namespace flower {

/// Per-parameter sensitivity of the squared embedding norm, accumulated
/// across tasks by running average. Covers extractor and head parameters
/// only; the transformation module is never regularised.
struct ImportanceMatrix {
  std::map<std::string, Tensor> xi;
  std::size_t tasks_seen = 0;

  bool empty() const { return xi.empty(); }
};

/// Immutable copy of the extractor+head parameters at a task boundary.
struct ParamSnapshot {
  std::map<std::string, Tensor> values;

  bool empty() const { return values.empty(); }
};

inline ParamSnapshot take_snapshot(const ParamSet& params) {
  ParamSnapshot snap;
  for (const auto& [id, value] : params.values())
    if (params.group(id) != ParamGroup::transformation)
      snap.values.emplace(id, value);
  return snap;
}

/// Accumulates |d ||embed(x)||^2 / d theta| per parameter, averaged over the
/// (unlabelled) batch, then folds it into the running average over tasks.
inline ImportanceMatrix update_importance(ImportanceMatrix xi,
                                          const ModelConfig& cfg,
                                          const ParamSet& params,
                                          const Tensor& features) {
  Tensor batch = as_batch(features);
  FLOWER_CHECK(batch.rows() > 0, "update_importance: empty batch");

  std::map<std::string, Tensor> task_xi;
  for (const auto& [id, value] : params.values())
    if (params.group(id) != ParamGroup::transformation)
      task_xi.emplace(id, Tensor::zeros(value.shape()));

  // MAS accumulates the magnitude of each per-sample gradient, so one
  // backward pass per sample rather than one for the batch mean.
  for (std::size_t i = 0; i < batch.rows(); ++i) {
    Tensor x({1, batch.cols()});
    for (std::size_t d = 0; d < batch.cols(); ++d) x.at(0, d) = batch.at(i, d);
    Tape tape(params);
    Tape::NodeId z = build_embedding(tape, cfg, tape.constant(x, "sample"));
    GradMap grads = tape.backward(tape.sum_all(tape.square(z)));
    for (auto& [id, acc] : task_xi) {
      const Tensor& g = grads.at(id);
      for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += std::abs(g[k]);
    }
  }
  double inv_n = 1.0 / static_cast<double>(batch.rows());
  for (auto& [_, acc] : task_xi)
    for (std::size_t k = 0; k < acc.size(); ++k) acc[k] *= inv_n;

  if (xi.empty()) {
    xi.xi = std::move(task_xi);
    xi.tasks_seen = 1;
    return xi;
  }
  double n = static_cast<double>(xi.tasks_seen);
  for (auto& [id, old] : xi.xi) {
    const Tensor& fresh = task_xi.at(id);
    FLOWER_CHECK(old.same_shape(fresh), "update_importance: shape drift for " + id);
    for (std::size_t k = 0; k < old.size(); ++k)
      old[k] = (n * old[k] + fresh[k]) / (n + 1.0);
  }
  xi.tasks_seen += 1;
  return xi;
}

/// Quadratic anchoring graph: lambda4 * sum_i xi_i (theta_i - snapshot_i)^2
/// over extractor+head parameters.
inline Tape::NodeId build_anchor_penalty(Tape& tape, const ParamSet& params,
                                         const ParamSnapshot& snapshot,
                                         const ImportanceMatrix& xi,
                                         double lambda4) {
  Tape::NodeId total = tape.constant(Tensor::scalar(0.0), "anchor_zero");
  for (const auto& [id, ref] : snapshot.values) {
    if (!params.has(id)) continue;
    auto w = xi.xi.find(id);
    FLOWER_CHECK(w != xi.xi.end(), "anchor penalty: no importance for " + id);
    Tape::NodeId diff = tape.sub(tape.param(id), tape.constant(ref, "snap:" + id));
    Tape::NodeId weighted =
        tape.mul(tape.square(diff), tape.constant(w->second, "xi:" + id));
    total = tape.add(total, tape.sum_all(weighted));
  }
  return tape.scale(total, lambda4);
}

/// Scalar regulariser value: (lambda3/N) sum_i KL(posterior(x_i) || U) +
/// lambda4 * sum_i xi_i (theta_i - theta_i^{prev})^2. The posterior is taken
/// against the full prototype table (all classes seen so far).
inline double pmas_penalty(const ModelConfig& cfg, const ParamSet& params,
                           const ParamSnapshot& snapshot,
                           const ImportanceMatrix& xi,
                           const PrototypeTable& table, const Tensor& features,
                           double lambda3, double lambda4) {
  FLOWER_CHECK(!snapshot.empty(),
               "pmas_penalty: no parameter snapshot; run the base phase first");
  FLOWER_CHECK(!xi.empty(),
               "pmas_penalty: no importance estimate; run the base phase first");
  Tensor batch = as_batch(features);
  FLOWER_CHECK(batch.rows() > 0, "pmas_penalty: empty batch");

  double kl_sum = 0.0;
  Tensor z = embed(cfg, params, batch);
  for (std::size_t i = 0; i < z.rows(); ++i)
    kl_sum += kl_to_uniform(class_posterior(table, z.row(i), cfg.distance));
  double kl_term = lambda3 * kl_sum / static_cast<double>(batch.rows());

  Tape tape(params);
  double quad = tape.scalar(build_anchor_penalty(tape, params, snapshot, xi, 1.0));
  return kl_term + lambda4 * quad;
}

}  // namespace flower
