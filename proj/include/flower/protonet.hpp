#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "flower/autodiff.hpp"
#include "flower/model.hpp"
#include "flower/tensor.hpp"

namespace flower {

/// Per-class mean embeddings for every class seen so far. Class ids are
/// globally unique (tasks have disjoint label sets); iteration is always
/// in ascending class-id order, which also fixes tie-breaking.
class PrototypeTable {
 public:
  void add(int class_id, Tensor prototype) {
    FLOWER_CHECK(!prototypes_.count(class_id),
                 "PrototypeTable: class " + std::to_string(class_id) +
                     " already present (tasks must be class-disjoint)");
    if (!prototypes_.empty())
      FLOWER_CHECK(prototype.size() == dim(),
                   "PrototypeTable: prototype dimension mismatch");
    prototypes_.emplace(class_id, std::move(prototype));
  }

  bool has(int class_id) const { return prototypes_.count(class_id) != 0; }

  const Tensor& at(int class_id) const {
    auto it = prototypes_.find(class_id);
    FLOWER_CHECK(it != prototypes_.end(),
                 "PrototypeTable: unknown class " + std::to_string(class_id));
    return it->second;
  }

  std::size_t size() const { return prototypes_.size(); }
  bool empty() const { return prototypes_.empty(); }

  std::size_t dim() const {
    FLOWER_CHECK(!prototypes_.empty(), "PrototypeTable: empty table");
    return prototypes_.begin()->second.size();
  }

  std::vector<int> class_ids() const {
    std::vector<int> ids;
    ids.reserve(prototypes_.size());
    for (const auto& [c, _] : prototypes_) ids.push_back(c);
    return ids;
  }

  /// Stacks prototypes as rows, ascending class-id order.
  Tensor matrix() const {
    FLOWER_CHECK(!prototypes_.empty(), "PrototypeTable: empty table");
    Tensor m({prototypes_.size(), dim()});
    std::size_t r = 0;
    for (const auto& [_, p] : prototypes_) {
      for (std::size_t d = 0; d < p.size(); ++d) m.at(r, d) = p[d];
      ++r;
    }
    return m;
  }

 private:
  std::map<int, Tensor> prototypes_;
};

/// A labelled batch in columnar form: features [n, dim] plus n labels.
struct Batch {
  Tensor features;
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }

  void validate() const {
    FLOWER_CHECK(features.rank() == 2 && features.rows() == labels.size(),
                 "Batch: one label per feature row required");
  }
};

/// Distinct labels of a batch in ascending order.
inline std::vector<int> distinct_labels(const std::vector<int>& labels) {
  std::map<int, bool> seen;
  for (int l : labels) seen[l] = true;
  std::vector<int> out;
  for (const auto& [c, _] : seen) out.push_back(c);
  return out;
}

/// Maps each label to its slot in the ascending distinct-label list.
inline std::vector<std::size_t> label_slots(const std::vector<int>& labels,
                                            const std::vector<int>& classes) {
  std::map<int, std::size_t> slot;
  for (std::size_t i = 0; i < classes.size(); ++i) slot[classes[i]] = i;
  std::vector<std::size_t> out;
  out.reserve(labels.size());
  for (int l : labels) {
    auto it = slot.find(l);
    FLOWER_CHECK(it != slot.end(),
                 "label " + std::to_string(l) + " missing from class list");
    out.push_back(it->second);
  }
  return out;
}

/// Mean embedding per class over a labelled batch. Every class in
/// `required_classes` (default: the classes present) must occur at least
/// once; an absent class is reported by id.
inline PrototypeTable compute_prototypes(const ModelConfig& cfg,
                                         const ParamSet& params,
                                         const Batch& batch) {
  batch.validate();
  FLOWER_CHECK(batch.size() > 0, "compute_prototypes: empty batch");
  Tensor z = embed(cfg, params, batch.features);
  std::vector<int> classes = distinct_labels(batch.labels);
  std::vector<std::size_t> slots = label_slots(batch.labels, classes);
  std::vector<std::size_t> counts(classes.size(), 0);
  Tensor sums({classes.size(), z.cols()});
  for (std::size_t i = 0; i < z.rows(); ++i) {
    counts[slots[i]]++;
    for (std::size_t d = 0; d < z.cols(); ++d)
      sums.at(slots[i], d) += z.at(i, d);
  }
  PrototypeTable table;
  for (std::size_t c = 0; c < classes.size(); ++c) {
    FLOWER_CHECK(counts[c] > 0, "compute_prototypes: class " +
                                    std::to_string(classes[c]) + " has no samples");
    Tensor p({z.cols()});
    for (std::size_t d = 0; d < z.cols(); ++d)
      p[d] = sums.at(c, d) / static_cast<double>(counts[c]);
    table.add(classes[c], std::move(p));
  }
  return table;
}

inline double prototype_distance(const Tensor& z, const Tensor& p,
                                 Distance mode) {
  double sq = squared_distance(z, p);
  return mode == Distance::euclidean ? std::sqrt(sq) : sq;
}

/// Softmax over negative distances to every prototype (ascending class-id
/// order). Max-subtraction keeps the exponentials stable; ties in the
/// posterior resolve to the smallest class id via the ordering.
inline std::vector<double> class_posterior(const PrototypeTable& table,
                                           const Tensor& z, Distance mode) {
  FLOWER_CHECK(!table.empty(), "class_posterior: empty prototype table");
  FLOWER_CHECK(z.size() == table.dim(),
               "class_posterior: embedding dimension mismatch");
  std::vector<int> ids = table.class_ids();
  std::vector<double> logits(ids.size());
  for (std::size_t c = 0; c < ids.size(); ++c)
    logits[c] = -prototype_distance(z, table.at(ids[c]), mode);
  double mx = logits[0];
  for (double v : logits) mx = std::max(mx, v);
  double sum = 0.0;
  std::vector<double> p(ids.size());
  for (std::size_t c = 0; c < ids.size(); ++c) {
    p[c] = std::exp(logits[c] - mx);
    sum += p[c];
  }
  for (double& v : p) v /= sum;
  return p;
}

/// Predicted class = nearest prototype (equivalently the posterior argmax);
/// exact ties go to the smallest class id.
inline int predict(const PrototypeTable& table, const Tensor& z, Distance mode) {
  std::vector<int> ids = table.class_ids();
  std::vector<double> p = class_posterior(table, z, mode);
  std::size_t best = 0;
  for (std::size_t c = 1; c < p.size(); ++c)
    if (p[c] > p[best]) best = c;
  return ids[best];
}

/// Mean over the batch of -log posterior[true class], on embeddings that
/// are already in prototype space.
inline double proto_ce_loss(const PrototypeTable& table, const Batch& embeddings,
                            Distance mode) {
  embeddings.validate();
  FLOWER_CHECK(embeddings.size() > 0, "proto_ce_loss: empty batch");
  std::vector<int> ids = table.class_ids();
  std::map<int, std::size_t> slot;
  for (std::size_t c = 0; c < ids.size(); ++c) slot[ids[c]] = c;
  double total = 0.0;
  for (std::size_t i = 0; i < embeddings.size(); ++i) {
    auto it = slot.find(embeddings.labels[i]);
    FLOWER_CHECK(it != slot.end(),
                 "proto_ce_loss: label " + std::to_string(embeddings.labels[i]) +
                     " not in prototype table");
    std::vector<double> p = class_posterior(table, embeddings.features.row(i), mode);
    total += -std::log(p[it->second]);
  }
  return total / static_cast<double>(embeddings.size());
}

/// KL(p || uniform) = log M - H(p), in [0, log M]. Uses 0*log 0 = 0.
inline double kl_to_uniform(const std::vector<double>& p) {
  FLOWER_CHECK(!p.empty(), "kl_to_uniform: empty distribution");
  double sum = 0.0;
  for (double v : p) {
    FLOWER_CHECK(v >= 0.0, "kl_to_uniform: negative probability");
    sum += v;
  }
  FLOWER_CHECK(std::abs(sum - 1.0) <= 1e-9,
               "kl_to_uniform: probabilities sum to " + std::to_string(sum));
  double entropy = 0.0;
  for (double v : p)
    if (v > 0.0) entropy -= v * std::log(v);
  double kl = std::log(static_cast<double>(p.size())) - entropy;
  return kl < 0.0 ? 0.0 : kl;  // clip the last-ulp negative at uniform
}

// ---- graph builders used by the trainers ----------------------------------

/// Distance logits: -d(z_i, p_c) for an embedding node and prototype node.
inline Tape::NodeId build_neg_distance_logits(Tape& tape, Tape::NodeId z,
                                              Tape::NodeId protos,
                                              Distance mode) {
  Tape::NodeId sq = tape.pairwise_sqdist(z, protos);
  Tape::NodeId d = mode == Distance::euclidean ? tape.sqrt(sq) : sq;
  return tape.scale(d, -1.0);
}

/// Mean of -log softmax(logits)[i, slot_i] over rows.
inline Tape::NodeId build_ce_from_logits(Tape& tape, Tape::NodeId logits,
                                         const std::vector<std::size_t>& slots) {
  Tape::NodeId ls = tape.log_softmax_rows(logits);
  Tape::NodeId picked = tape.pick_rows(ls, slots);
  return tape.scale(tape.mean_all(picked), -1.0);
}

/// Mean over rows of KL(softmax(logits) || uniform).
inline Tape::NodeId build_kl_uniform_from_logits(Tape& tape, Tape::NodeId logits) {
  std::size_t m = tape.value(logits).cols();
  Tape::NodeId ls = tape.log_softmax_rows(logits);
  Tape::NodeId p = tape.exp(ls);
  Tape::NodeId neg_entropy = tape.row_sum(tape.mul(p, ls));
  return tape.add_scalar(tape.mean_all(neg_entropy),
                         std::log(static_cast<double>(m)));
}

}  // namespace flower
