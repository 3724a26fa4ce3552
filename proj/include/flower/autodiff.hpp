#pragma once

#include <array>
#include <cstddef>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "flower/tensor.hpp"

namespace flower {

/// Which part of the model a parameter belongs to. The trainers rely on
/// this partition: noise and clamping touch only the feature extractor,
/// importance penalties never touch the transformation module.
enum class ParamGroup { feature_extractor, classifier_head, transformation };

inline const char* to_string(ParamGroup g) {
  switch (g) {
    case ParamGroup::feature_extractor: return "feature_extractor";
    case ParamGroup::classifier_head: return "classifier_head";
    case ParamGroup::transformation: return "transformation";
  }
  return "?";
}

/// Named, partitioned parameter collection. Iteration order is the sorted
/// id order (std::map), which keeps every traversal deterministic.
class ParamSet {
 public:
  void insert(const std::string& id, Tensor value, ParamGroup group) {
    FLOWER_CHECK(!values_.count(id), "duplicate parameter id: " + id);
    values_.emplace(id, std::move(value));
    groups_.emplace(id, group);
  }

  bool has(const std::string& id) const { return values_.count(id) != 0; }

  const Tensor& at(const std::string& id) const {
    auto it = values_.find(id);
    FLOWER_CHECK(it != values_.end(), "unknown parameter id: " + id);
    return it->second;
  }

  Tensor& mutable_at(const std::string& id) {
    auto it = values_.find(id);
    FLOWER_CHECK(it != values_.end(), "unknown parameter id: " + id);
    return it->second;
  }

  ParamGroup group(const std::string& id) const {
    auto it = groups_.find(id);
    FLOWER_CHECK(it != groups_.end(), "unknown parameter id: " + id);
    return it->second;
  }

  std::size_t size() const { return values_.size(); }

  std::vector<std::string> ids() const {
    std::vector<std::string> out;
    out.reserve(values_.size());
    for (const auto& [id, _] : values_) out.push_back(id);
    return out;
  }

  std::vector<std::string> ids(ParamGroup g) const {
    std::vector<std::string> out;
    for (const auto& [id, grp] : groups_)
      if (grp == g) out.push_back(id);
    return out;
  }

  const std::map<std::string, Tensor>& values() const { return values_; }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& [_, t] : values_) n += t.size();
    return n;
  }

  ParamSet clone() const { return *this; }

 private:
  std::map<std::string, Tensor> values_;
  std::map<std::string, ParamGroup> groups_;
};

/// Gradient (or any per-parameter tensor map) keyed like a ParamSet.
using GradMap = std::map<std::string, Tensor>;

/// One SGD step: theta <- theta - lr * g for every parameter that has a
/// gradient entry. Parameters without an entry are left unchanged.
inline ParamSet sgd_step(const ParamSet& params, const GradMap& grads,
                         double lr) {
  FLOWER_CHECK(lr > 0.0, "sgd_step: learning rate must be positive");
  ParamSet out = params;
  for (const auto& [id, g] : grads) {
    FLOWER_CHECK(params.has(id), "sgd_step: gradient for unknown parameter " + id);
    Tensor& p = out.mutable_at(id);
    FLOWER_CHECK(p.same_shape(g), "sgd_step: gradient shape mismatch for " + id);
    for (std::size_t i = 0; i < p.size(); ++i) p[i] -= lr * g[i];
  }
  return out;
}

/// Reverse-mode tape over dense tensors. Define-by-run: each builder call
/// evaluates eagerly and records one node; backward() walks the tape in
/// reverse. No broadcasting beyond the bias-add and column-broadcast ops.
class Tape {
 public:
  using NodeId = std::size_t;

  explicit Tape(const ParamSet& params) : params_(&params) {}

  // ---- leaves ------------------------------------------------------------

  NodeId constant(Tensor v, std::string label = "const") {
    return push(Op::kConst, std::move(v), {}, std::move(label));
  }

  NodeId param(const std::string& id) {
    auto it = param_nodes_.find(id);
    if (it != param_nodes_.end()) return it->second;
    NodeId n = push(Op::kParam, params_->at(id), {}, "param:" + id);
    nodes_[n].param_id = id;
    param_nodes_.emplace(id, n);
    return n;
  }

  // ---- elementwise -------------------------------------------------------

  NodeId add(NodeId a, NodeId b) {
    require_same_shape(a, b, "add");
    Tensor out = val(a);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += val(b)[i];
    return push(Op::kAdd, std::move(out), {a, b}, "add");
  }

  NodeId sub(NodeId a, NodeId b) {
    require_same_shape(a, b, "sub");
    Tensor out = val(a);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= val(b)[i];
    return push(Op::kSub, std::move(out), {a, b}, "sub");
  }

  NodeId mul(NodeId a, NodeId b) {
    require_same_shape(a, b, "mul");
    Tensor out = val(a);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= val(b)[i];
    return push(Op::kMul, std::move(out), {a, b}, "mul");
  }

  NodeId scale(NodeId a, double c) {
    Tensor out = val(a);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= c;
    NodeId n = push(Op::kScale, std::move(out), {a}, "scale");
    nodes_[n].c = c;
    return n;
  }

  NodeId add_scalar(NodeId a, double c) {
    Tensor out = val(a);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += c;
    return push(Op::kAddScalar, std::move(out), {a}, "add_scalar");
  }

  NodeId relu(NodeId a) {
    Tensor out = val(a);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = out[i] > 0.0 ? out[i] : 0.0;
    return push(Op::kRelu, std::move(out), {a}, "relu");
  }

  NodeId square(NodeId a) {
    Tensor out = val(a);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= out[i];
    return push(Op::kSquare, std::move(out), {a}, "square");
  }

  NodeId exp(NodeId a) {
    Tensor out = val(a);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(out[i]);
    return push(Op::kExp, std::move(out), {a}, "exp");
  }

  /// Elementwise sqrt. Inputs must be >= 0; the derivative at exactly 0 is
  /// taken as 0 (subgradient), which covers zero distances and zero drift.
  NodeId sqrt(NodeId a) {
    Tensor out = val(a);
    for (std::size_t i = 0; i < out.size(); ++i) {
      FLOWER_CHECK(out[i] >= 0.0, "sqrt of negative value at node " + name(a));
      out[i] = std::sqrt(out[i]);
    }
    return push(Op::kSqrt, std::move(out), {a}, "sqrt");
  }

  // ---- linear algebra ----------------------------------------------------

  NodeId matmul(NodeId a, NodeId b) {
    const Tensor& A = val(a);
    const Tensor& B = val(b);
    FLOWER_CHECK(A.rank() == 2 && B.rank() == 2 && A.cols() == B.rows(),
                 "matmul: incompatible shapes " + Tensor::shape_str(A.shape()) +
                     " x " + Tensor::shape_str(B.shape()) + " at node " + name(a));
    std::size_t m = A.rows(), k = A.cols(), n = B.cols();
    Tensor out({m, n});
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t p = 0; p < k; ++p) {
        double av = A.at(i, p);
        if (av == 0.0) continue;
        for (std::size_t j = 0; j < n; ++j) out.at(i, j) += av * B.at(p, j);
      }
    return push(Op::kMatmul, std::move(out), {a, b}, "matmul");
  }

  /// X [m,n] + b [n], broadcast over rows.
  NodeId add_row_bias(NodeId x, NodeId b) {
    const Tensor& X = val(x);
    const Tensor& B = val(b);
    FLOWER_CHECK(X.rank() == 2 && B.rank() == 1 && X.cols() == B.size(),
                 "add_row_bias: bias length must equal column count at node " +
                     name(x));
    Tensor out = X;
    for (std::size_t i = 0; i < X.rows(); ++i)
      for (std::size_t j = 0; j < X.cols(); ++j) out.at(i, j) += B[j];
    return push(Op::kAddRowBias, std::move(out), {x, b}, "add_row_bias");
  }

  // ---- reductions and shapes ----------------------------------------------

  NodeId sum_all(NodeId a) {
    double s = 0.0;
    for (std::size_t i = 0; i < val(a).size(); ++i) s += val(a)[i];
    return push(Op::kSumAll, Tensor::scalar(s), {a}, "sum_all");
  }

  NodeId mean_all(NodeId a) {
    double s = 0.0;
    for (std::size_t i = 0; i < val(a).size(); ++i) s += val(a)[i];
    return push(Op::kMeanAll, Tensor::scalar(s / static_cast<double>(val(a).size())),
                {a}, "mean_all");
  }

  /// [m,n] -> [m], summing each row.
  NodeId row_sum(NodeId a) {
    const Tensor& A = val(a);
    FLOWER_CHECK(A.rank() == 2, "row_sum requires a rank-2 input at node " + name(a));
    Tensor out({A.rows()});
    for (std::size_t i = 0; i < A.rows(); ++i)
      for (std::size_t j = 0; j < A.cols(); ++j) out[i] += A.at(i, j);
    return push(Op::kRowSum, std::move(out), {a}, "row_sum");
  }

  /// v [m] -> [m,n], repeating the vector across columns.
  NodeId col_broadcast(NodeId v, std::size_t n_cols) {
    const Tensor& V = val(v);
    FLOWER_CHECK(V.rank() == 1, "col_broadcast requires a rank-1 input");
    Tensor out({V.size(), n_cols});
    for (std::size_t i = 0; i < V.size(); ++i)
      for (std::size_t j = 0; j < n_cols; ++j) out.at(i, j) = V[i];
    return push(Op::kColBroadcast, std::move(out), {v}, "col_broadcast");
  }

  /// Row-wise log-softmax with max subtraction.
  NodeId log_softmax_rows(NodeId a) {
    const Tensor& A = val(a);
    FLOWER_CHECK(A.rank() == 2, "log_softmax_rows requires a rank-2 input");
    Tensor out = A;
    for (std::size_t i = 0; i < A.rows(); ++i) {
      double mx = A.at(i, 0);
      for (std::size_t j = 1; j < A.cols(); ++j) mx = std::max(mx, A.at(i, j));
      double lse = 0.0;
      for (std::size_t j = 0; j < A.cols(); ++j) lse += std::exp(A.at(i, j) - mx);
      lse = mx + std::log(lse);
      for (std::size_t j = 0; j < A.cols(); ++j) out.at(i, j) = A.at(i, j) - lse;
    }
    return push(Op::kLogSoftmaxRows, std::move(out), {a}, "log_softmax_rows");
  }

  /// X [m,n], cols[i] in [0,n) -> [m] picking X[i, cols[i]].
  NodeId pick_rows(NodeId x, std::vector<std::size_t> cols) {
    const Tensor& X = val(x);
    FLOWER_CHECK(X.rank() == 2 && cols.size() == X.rows(),
                 "pick_rows: one column index per row required");
    Tensor out({X.rows()});
    for (std::size_t i = 0; i < X.rows(); ++i) {
      FLOWER_CHECK(cols[i] < X.cols(), "pick_rows: column index out of range");
      out[i] = X.at(i, cols[i]);
    }
    NodeId n = push(Op::kPickRows, std::move(out), {x}, "pick_rows");
    nodes_[n].indices = std::move(cols);
    return n;
  }

  /// Z [m,D], P [c,D] -> [m,c] of squared euclidean distances.
  NodeId pairwise_sqdist(NodeId z, NodeId p) {
    const Tensor& Z = val(z);
    const Tensor& P = val(p);
    FLOWER_CHECK(Z.rank() == 2 && P.rank() == 2 && Z.cols() == P.cols(),
                 "pairwise_sqdist: dimension mismatch " +
                     Tensor::shape_str(Z.shape()) + " vs " +
                     Tensor::shape_str(P.shape()));
    Tensor out({Z.rows(), P.rows()});
    for (std::size_t i = 0; i < Z.rows(); ++i)
      for (std::size_t c = 0; c < P.rows(); ++c) {
        double s = 0.0;
        for (std::size_t d = 0; d < Z.cols(); ++d) {
          double dv = Z.at(i, d) - P.at(c, d);
          s += dv * dv;
        }
        out.at(i, c) = s;
      }
    return push(Op::kPairwiseSqdist, std::move(out), {z, p}, "pairwise_sqdist");
  }

  /// Z [m,D] with slots[i] in [0,g) -> [g,D] of per-slot means.
  /// Every slot must receive at least one row.
  NodeId group_mean(NodeId z, std::vector<std::size_t> slots, std::size_t n_groups) {
    const Tensor& Z = val(z);
    FLOWER_CHECK(Z.rank() == 2 && slots.size() == Z.rows(),
                 "group_mean: one slot per row required");
    std::vector<std::size_t> counts(n_groups, 0);
    for (std::size_t s : slots) {
      FLOWER_CHECK(s < n_groups, "group_mean: slot out of range");
      counts[s]++;
    }
    for (std::size_t g = 0; g < n_groups; ++g)
      FLOWER_CHECK(counts[g] > 0, "group_mean: empty group slot " + std::to_string(g));
    Tensor out({n_groups, Z.cols()});
    for (std::size_t i = 0; i < Z.rows(); ++i)
      for (std::size_t d = 0; d < Z.cols(); ++d)
        out.at(slots[i], d) += Z.at(i, d);
    for (std::size_t g = 0; g < n_groups; ++g)
      for (std::size_t d = 0; d < Z.cols(); ++d)
        out.at(g, d) /= static_cast<double>(counts[g]);
    NodeId n = push(Op::kGroupMean, std::move(out), {z}, "group_mean");
    nodes_[n].indices = std::move(slots);
    nodes_[n].counts = std::move(counts);
    return n;
  }

  /// A [m,n] over B [k,n] -> [m+k,n].
  NodeId concat_rows(NodeId a, NodeId b) {
    const Tensor& A = val(a);
    const Tensor& B = val(b);
    FLOWER_CHECK(A.rank() == 2 && B.rank() == 2 && A.cols() == B.cols(),
                 "concat_rows: column counts differ");
    Tensor out({A.rows() + B.rows(), A.cols()});
    std::copy(A.data(), A.data() + A.size(), out.data());
    std::copy(B.data(), B.data() + B.size(), out.data() + A.size());
    return push(Op::kConcatRows, std::move(out), {a, b}, "concat_rows");
  }

  // ---- evaluation ----------------------------------------------------------

  const Tensor& value(NodeId n) const { return nodes_[n].value; }

  double scalar(NodeId n) const { return nodes_[n].value.item(); }

  std::size_t node_count() const { return nodes_.size(); }

  /// Reverse pass from a scalar loss node. Returns a gradient for every
  /// parameter in the bound ParamSet; parameters that do not reach the loss
  /// get exact zero tensors.
  GradMap backward(NodeId loss) {
    FLOWER_CHECK(val(loss).size() == 1,
                 "backward: loss node " + name(loss) + " is not scalar, shape " +
                     Tensor::shape_str(val(loss).shape()));
    std::vector<Tensor> grads(nodes_.size());
    std::vector<bool> touched(nodes_.size(), false);
    grads[loss] = Tensor::scalar(1.0);
    touched[loss] = true;

    for (std::size_t idx = nodes_.size(); idx-- > 0;) {
      if (!touched[idx]) continue;
      accumulate_inputs(idx, grads, touched);
    }

    GradMap out;
    for (const auto& [id, value] : params_->values()) {
      auto it = param_nodes_.find(id);
      if (it != param_nodes_.end() && touched[it->second]) {
        out.emplace(id, grads[it->second]);
      } else {
        out.emplace(id, Tensor::zeros(value.shape()));
      }
    }
    return out;
  }

 private:
  enum class Op {
    kConst, kParam,
    kAdd, kSub, kMul, kScale, kAddScalar,
    kRelu, kSquare, kExp, kSqrt,
    kMatmul, kAddRowBias,
    kSumAll, kMeanAll, kRowSum, kColBroadcast,
    kLogSoftmaxRows, kPickRows, kPairwiseSqdist, kGroupMean, kConcatRows,
  };

  struct Node {
    Op op;
    Tensor value;
    std::array<NodeId, 2> in{};
    std::size_t n_in = 0;
    double c = 0.0;
    std::vector<std::size_t> indices;  // pick_rows columns / group_mean slots
    std::vector<std::size_t> counts;   // group_mean slot sizes
    std::string label;
    std::string param_id;
  };

  NodeId push(Op op, Tensor value, std::initializer_list<NodeId> ins,
              std::string label) {
    Node n;
    n.op = op;
    n.value = std::move(value);
    n.n_in = ins.size();
    std::size_t i = 0;
    for (NodeId id : ins) n.in[i++] = id;
    n.label = std::move(label);
    nodes_.push_back(std::move(n));
    return nodes_.size() - 1;
  }

  const Tensor& val(NodeId n) const { return nodes_[n].value; }

  std::string name(NodeId n) const {
    return nodes_[n].label + "#" + std::to_string(n);
  }

  void require_same_shape(NodeId a, NodeId b, const char* op) const {
    FLOWER_CHECK(val(a).same_shape(val(b)),
                 std::string(op) + ": shape mismatch " +
                     Tensor::shape_str(val(a).shape()) + " vs " +
                     Tensor::shape_str(val(b).shape()) + " at node " + name(a));
  }

  static Tensor& grad_slot(std::vector<Tensor>& grads, std::vector<bool>& touched,
                           NodeId n, const Tensor& like) {
    if (!touched[n]) {
      grads[n] = Tensor::zeros(like.shape());
      touched[n] = true;
    }
    return grads[n];
  }

  void accumulate_inputs(NodeId idx, std::vector<Tensor>& grads,
                         std::vector<bool>& touched) const {
    const Node& node = nodes_[idx];
    const Tensor& g = grads[idx];
    auto in_val = [&](std::size_t k) -> const Tensor& { return val(node.in[k]); };
    auto in_grad = [&](std::size_t k) -> Tensor& {
      return grad_slot(grads, touched, node.in[k], in_val(k));
    };

    switch (node.op) {
      case Op::kConst:
      case Op::kParam:
        break;
      case Op::kAdd: {
        Tensor& ga = in_grad(0);
        Tensor& gb = in_grad(1);
        for (std::size_t i = 0; i < g.size(); ++i) {
          ga[i] += g[i];
          gb[i] += g[i];
        }
        break;
      }
      case Op::kSub: {
        Tensor& ga = in_grad(0);
        Tensor& gb = in_grad(1);
        for (std::size_t i = 0; i < g.size(); ++i) {
          ga[i] += g[i];
          gb[i] -= g[i];
        }
        break;
      }
      case Op::kMul: {
        Tensor& ga = in_grad(0);
        Tensor& gb = in_grad(1);
        const Tensor& a = in_val(0);
        const Tensor& b = in_val(1);
        for (std::size_t i = 0; i < g.size(); ++i) {
          ga[i] += g[i] * b[i];
          gb[i] += g[i] * a[i];
        }
        break;
      }
      case Op::kScale: {
        Tensor& ga = in_grad(0);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += node.c * g[i];
        break;
      }
      case Op::kAddScalar: {
        Tensor& ga = in_grad(0);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        break;
      }
      case Op::kRelu: {
        Tensor& ga = in_grad(0);
        const Tensor& a = in_val(0);
        for (std::size_t i = 0; i < g.size(); ++i)
          if (a[i] > 0.0) ga[i] += g[i];
        break;
      }
      case Op::kSquare: {
        Tensor& ga = in_grad(0);
        const Tensor& a = in_val(0);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += 2.0 * a[i] * g[i];
        break;
      }
      case Op::kExp: {
        Tensor& ga = in_grad(0);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += node.value[i] * g[i];
        break;
      }
      case Op::kSqrt: {
        Tensor& ga = in_grad(0);
        for (std::size_t i = 0; i < g.size(); ++i)
          if (node.value[i] > 0.0) ga[i] += g[i] / (2.0 * node.value[i]);
        break;
      }
      case Op::kMatmul: {
        const Tensor& A = in_val(0);
        const Tensor& B = in_val(1);
        Tensor& ga = in_grad(0);
        Tensor& gb = in_grad(1);
        std::size_t m = A.rows(), k = A.cols(), n = B.cols();
        // gA = g * B^T; gB = A^T * g
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) {
            double gv = g.at(i, j);
            if (gv == 0.0) continue;
            for (std::size_t p = 0; p < k; ++p) {
              ga.at(i, p) += gv * B.at(p, j);
              gb.at(p, j) += A.at(i, p) * gv;
            }
          }
        break;
      }
      case Op::kAddRowBias: {
        Tensor& gx = in_grad(0);
        Tensor& gb = in_grad(1);
        const Tensor& X = in_val(0);
        for (std::size_t i = 0; i < X.rows(); ++i)
          for (std::size_t j = 0; j < X.cols(); ++j) {
            gx.at(i, j) += g.at(i, j);
            gb[j] += g.at(i, j);
          }
        break;
      }
      case Op::kSumAll: {
        Tensor& ga = in_grad(0);
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[0];
        break;
      }
      case Op::kMeanAll: {
        Tensor& ga = in_grad(0);
        double s = g[0] / static_cast<double>(ga.size());
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += s;
        break;
      }
      case Op::kRowSum: {
        Tensor& ga = in_grad(0);
        const Tensor& A = in_val(0);
        for (std::size_t i = 0; i < A.rows(); ++i)
          for (std::size_t j = 0; j < A.cols(); ++j) ga.at(i, j) += g[i];
        break;
      }
      case Op::kColBroadcast: {
        Tensor& gv = in_grad(0);
        for (std::size_t i = 0; i < node.value.rows(); ++i)
          for (std::size_t j = 0; j < node.value.cols(); ++j)
            gv[i] += g.at(i, j);
        break;
      }
      case Op::kLogSoftmaxRows: {
        Tensor& ga = in_grad(0);
        const Tensor& S = node.value;  // log-softmax output
        for (std::size_t i = 0; i < S.rows(); ++i) {
          double gsum = 0.0;
          for (std::size_t j = 0; j < S.cols(); ++j) gsum += g.at(i, j);
          for (std::size_t j = 0; j < S.cols(); ++j)
            ga.at(i, j) += g.at(i, j) - std::exp(S.at(i, j)) * gsum;
        }
        break;
      }
      case Op::kPickRows: {
        Tensor& gx = in_grad(0);
        for (std::size_t i = 0; i < node.indices.size(); ++i)
          gx.at(i, node.indices[i]) += g[i];
        break;
      }
      case Op::kPairwiseSqdist: {
        const Tensor& Z = in_val(0);
        const Tensor& P = in_val(1);
        Tensor& gz = in_grad(0);
        Tensor& gp = in_grad(1);
        for (std::size_t i = 0; i < Z.rows(); ++i)
          for (std::size_t c = 0; c < P.rows(); ++c) {
            double gv = g.at(i, c);
            if (gv == 0.0) continue;
            for (std::size_t d = 0; d < Z.cols(); ++d) {
              double diff = 2.0 * (Z.at(i, d) - P.at(c, d)) * gv;
              gz.at(i, d) += diff;
              gp.at(c, d) -= diff;
            }
          }
        break;
      }
      case Op::kGroupMean: {
        Tensor& gz = in_grad(0);
        const Tensor& Z = in_val(0);
        for (std::size_t i = 0; i < Z.rows(); ++i) {
          std::size_t slot = node.indices[i];
          double inv = 1.0 / static_cast<double>(node.counts[slot]);
          for (std::size_t d = 0; d < Z.cols(); ++d)
            gz.at(i, d) += g.at(slot, d) * inv;
        }
        break;
      }
      case Op::kConcatRows: {
        Tensor& ga = in_grad(0);
        Tensor& gb = in_grad(1);
        std::size_t na = ga.size();
        for (std::size_t i = 0; i < na; ++i) ga[i] += g[i];
        for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[na + i];
        break;
      }
    }
  }

  const ParamSet* params_;
  std::vector<Node> nodes_;
  std::map<std::string, NodeId> param_nodes_;
};

/// A graph description: given a tape bound to a ParamSet and the input
/// node, builds the computation and returns the output node.
using GraphFn = std::function<Tape::NodeId(Tape&, Tape::NodeId)>;

/// Evaluates a graph description on an input. Deterministic: identical
/// inputs give bit-identical outputs.
inline Tensor forward(const GraphFn& graph, const ParamSet& params,
                      const Tensor& input) {
  Tape tape(params);
  Tape::NodeId in = tape.constant(input, "input");
  Tape::NodeId out = graph(tape, in);
  return tape.value(out);
}

/// Evaluates a graph description whose output is a scalar loss and returns
/// d(loss)/d(theta) for every parameter (exact zeros off the loss path).
inline GradMap backward(const GraphFn& graph, const ParamSet& params,
                        const Tensor& input) {
  Tape tape(params);
  Tape::NodeId in = tape.constant(input, "input");
  Tape::NodeId loss = graph(tape, in);
  return tape.backward(loss);
}

}  // namespace flower
