#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "flower/autodiff.hpp"
#include "flower/ball.hpp"
#include "flower/base_trainer.hpp"
#include "flower/model.hpp"
#include "flower/noise.hpp"
#include "flower/pmas.hpp"
#include "flower/protonet.hpp"
#include "flower/rng.hpp"
#include "flower/schedule.hpp"
#include "flower/stream.hpp"
#include "flower/tensor.hpp"

namespace flower {

/// Training regimes. `flower` is the full method; `baseline` trains the base
/// task only and just builds prototypes afterwards; `finetune` keeps
/// training sessions with plain cross-entropy and no protection; the three
/// ablations each switch off one mechanism.
enum class Method { flower, baseline, finetune, no_fm, no_pmas, no_ball };

inline const char* to_string(Method m) {
  switch (m) {
    case Method::flower: return "flower";
    case Method::baseline: return "baseline";
    case Method::finetune: return "finetune";
    case Method::no_fm: return "no-fm";
    case Method::no_pmas: return "no-pmas";
    case Method::no_ball: return "no-ball";
  }
  return "?";
}

inline Method method_from_string(const std::string& s) {
  if (s == "flower") return Method::flower;
  if (s == "baseline") return Method::baseline;
  if (s == "finetune") return Method::finetune;
  if (s == "no-fm") return Method::no_fm;
  if (s == "no-pmas") return Method::no_pmas;
  if (s == "no-ball") return Method::no_ball;
  throw Error("unknown method '" + s + "'");
}

/// Which mechanisms a method runs with.
struct MethodTraits {
  bool flat_base;       // noise trials + drift term in the base phase
  bool wide_base;       // KL projection term in the base phase
  bool clamp;           // clamp the extractor into the flat-wide box
  bool pmas;            // PMAS regulariser (and its bookkeeping)
  bool ball;            // feature-space augmentation + ball loss
  bool train_sessions;  // false: prototype construction only
};

inline MethodTraits traits_of(Method m) {
  switch (m) {
    case Method::flower:   return {true, true, true, true, true, true};
    case Method::baseline: return {false, false, false, false, false, false};
    case Method::finetune: return {false, false, false, false, false, true};
    case Method::no_fm:    return {false, true, false, true, true, true};
    case Method::no_pmas:  return {true, true, true, false, true, true};
    case Method::no_ball:  return {true, true, true, true, false, true};
  }
  return {};
}

/// Everything a run needs, independent of the data stream.
struct RunnerConfig {
  Method method = Method::flower;
  ModelConfig model;
  NoiseSpec noise;
  BallGenConfig ball;
  double lambda1 = 1.0;
  double lambda3 = 10.0;
  double lambda4 = 100.0;

  std::size_t base_epochs = 60;
  std::size_t session_epochs = 10;
  std::size_t batch_size = 256;
  double base_lr = 0.1;
  double base_gamma = 0.1;
  double base_gamma_frac = 0.6;  // gamma event at this fraction of epochs
  double session_lr = 0.05;

  void validate() const {
    model.validate();
    noise.validate();
    ball.validate(model.feature_dim());
    FLOWER_CHECK(lambda1 >= 0 && lambda3 >= 0 && lambda4 >= 0,
                 "RunnerConfig: lambda weights must be >= 0");
    FLOWER_CHECK(base_epochs >= 1, "RunnerConfig: base_epochs must be >= 1");
    FLOWER_CHECK(batch_size >= 1, "RunnerConfig: batch_size must be >= 1");
    FLOWER_CHECK(base_lr > 0 && session_lr > 0,
                 "RunnerConfig: learning rates must be positive");
    FLOWER_CHECK(base_gamma > 0 && base_gamma <= 1,
                 "RunnerConfig: base_gamma must be in (0,1]");
    FLOWER_CHECK(base_gamma_frac > 0 && base_gamma_frac <= 1,
                 "RunnerConfig: base_gamma_frac must be in (0,1]");
  }

  LrSchedule base_schedule() const {
    std::size_t at = static_cast<std::size_t>(
        base_gamma_frac * static_cast<double>(base_epochs));
    return LrSchedule::step_at(base_lr, base_gamma, std::max<std::size_t>(1, at));
  }
};

/// Mutable state of one continual-learning stream.
struct ContinualState {
  ParamSet params;  // extractor + head + transformation module
  PrototypeTable prototypes;
  std::map<int, Tensor> feature_centers;  // per-class extractor-space centroid
  FlatWideRegion region;
  ImportanceMatrix importance;
  ParamSnapshot snapshot;
  std::set<int> seen_classes;
  std::size_t session_index = 0;  // k: 0 = untrained, 1 = base done
  std::uint64_t master_seed = 0;
  std::vector<double> clamp_deviations;  // max |W_F - anchor| after each update
};

/// Projects the feature-extractor tensors into the flat-wide box; the head
/// and transformation module are untouched.
inline ParamSet clamp_feature_extractor(ParamSet params,
                                        const FlatWideRegion& region) {
  FLOWER_CHECK(!region.empty(), "clamp: no flat-wide region recorded");
  for (const auto& [id, anchor] : region.anchor) {
    Tensor& p = params.mutable_at(id);
    FLOWER_CHECK(p.same_shape(anchor), "clamp: anchor shape mismatch for " + id);
    for (std::size_t i = 0; i < p.size(); ++i) {
      double lo = anchor[i] - region.bound;
      double hi = anchor[i] + region.bound;
      p[i] = p[i] < lo ? lo : (p[i] > hi ? hi : p[i]);
    }
  }
  return params;
}

inline double max_anchor_deviation(const ParamSet& params,
                                   const FlatWideRegion& region) {
  double worst = 0.0;
  for (const auto& [id, anchor] : region.anchor) {
    const Tensor& p = params.at(id);
    for (std::size_t i = 0; i < p.size(); ++i)
      worst = std::max(worst, std::abs(p[i] - anchor[i]));
  }
  return worst;
}

namespace detail {

// rng derivation tags
constexpr std::uint64_t kInitTag = 0x696e6974;
constexpr std::uint64_t kBaseTag = 0x62617365;
constexpr std::uint64_t kSessionTag = 0x73657373;

/// Slot ordering of the in-session posterior: old classes first (the stored
/// table's ascending order), then the session's new classes (ascending).
struct CombinedClasses {
  std::vector<int> old_ids;
  std::vector<int> new_ids;

  std::size_t total() const { return old_ids.size() + new_ids.size(); }

  std::size_t slot(int label) const {
    for (std::size_t i = 0; i < old_ids.size(); ++i)
      if (old_ids[i] == label) return i;
    for (std::size_t i = 0; i < new_ids.size(); ++i)
      if (new_ids[i] == label) return old_ids.size() + i;
    throw Error("session: label " + std::to_string(label) + " unknown");
  }
};

/// Per-class centroid of extractor-space features.
inline std::map<int, Tensor> class_feature_centers(const ModelConfig& cfg,
                                                   const ParamSet& params,
                                                   const Batch& data) {
  Tensor f = extract_features(cfg, params, data.features);
  std::map<int, std::pair<Tensor, std::size_t>> acc;
  for (std::size_t i = 0; i < data.size(); ++i) {
    auto [it, fresh] = acc.try_emplace(data.labels[i],
                                       Tensor::zeros({f.cols()}), 0);
    for (std::size_t d = 0; d < f.cols(); ++d) it->second.first[d] += f.at(i, d);
    it->second.second += 1;
  }
  std::map<int, Tensor> out;
  for (auto& [c, sum_n] : acc) {
    for (std::size_t d = 0; d < sum_n.first.size(); ++d)
      sum_n.first[d] /= static_cast<double>(sum_n.second);
    out.emplace(c, std::move(sum_n.first));
  }
  return out;
}

}  // namespace detail

/// One few-shot session: for E epochs, fresh augmentation, the joint loss
/// (cross-entropy over the augmented set against all classes seen so far,
/// plus ball loss and the PMAS regulariser), one update, clamp; then the
/// prototype table is extended from real samples, importance is updated and
/// a fresh snapshot is taken.
inline ContinualState run_session(ContinualState state,
                                  const Batch& session_data,
                                  const RunnerConfig& config) {
  config.validate();
  session_data.validate();
  FLOWER_CHECK(state.session_index >= 1,
               "run_session: base phase has not run (k = 0)");
  FLOWER_CHECK(session_data.size() > 0, "run_session: empty session data");

  std::vector<int> new_classes = distinct_labels(session_data.labels);
  for (int c : new_classes)
    FLOWER_CHECK(!state.seen_classes.count(c),
                 "run_session: class " + std::to_string(c) +
                     " overlaps an earlier task (tasks must be disjoint)");

  MethodTraits traits = traits_of(config.method);
  const ModelConfig& model = config.model;
  std::size_t k = state.session_index;

  if (traits.train_sessions) {
    detail::CombinedClasses combined;
    combined.old_ids = state.prototypes.class_ids();
    combined.new_ids = new_classes;
    Tensor old_protos = state.prototypes.matrix();

    std::vector<std::size_t> real_slots;
    std::vector<std::size_t> new_block_slots;  // within the new-class rows
    for (int l : session_data.labels) {
      real_slots.push_back(combined.slot(l));
      new_block_slots.push_back(combined.slot(l) - combined.old_ids.size());
    }

    for (std::size_t epoch = 0; epoch < config.session_epochs; ++epoch) {
      Rng rng(derive_seed(state.master_seed, {detail::kSessionTag, k, epoch}));

      SyntheticDraw draw;
      if (traits.ball)
        draw = generate_synthetic(model, state.params, config.ball,
                                  session_data, rng);

      Tape tape(state.params);
      Tape::NodeId f_real = build_features(
          tape, model, tape.constant(session_data.features, "session"));
      Tape::NodeId z_real = build_head(tape, f_real);
      Tape::NodeId new_protos =
          tape.group_mean(z_real, new_block_slots, new_classes.size());
      Tape::NodeId protos = tape.concat_rows(
          tape.constant(old_protos, "old_protos"), new_protos);

      // query set: real embeddings, plus synthetic extractor-space samples
      // carried through the transformation module and the head
      Tape::NodeId queries = z_real;
      Tape::NodeId f_synthetic = 0;
      std::vector<std::size_t> query_slots = real_slots;
      std::vector<int> query_labels = session_data.labels;
      if (!draw.empty()) {
        f_synthetic = build_transform(
            tape, config.ball, tape.constant(draw.matrix(), "synthetic"));
        queries = tape.concat_rows(z_real, build_head(tape, f_synthetic));
        for (int l : draw.labels) {
          query_slots.push_back(combined.slot(l));
          query_labels.push_back(l);
        }
      }
      Tape::NodeId logits =
          build_neg_distance_logits(tape, queries, protos, model.distance);
      Tape::NodeId loss = build_ce_from_logits(tape, logits, query_slots);

      if (traits.ball && combined.total() >= 2 && config.ball.lambda2 > 0.0) {
        // the hinge lives in extractor space: fitted balls for the session's
        // classes, stored feature centroids as centers for the rest
        std::vector<ClassBall> balls;
        for (int c : combined.old_ids)
          balls.push_back(ClassBall{c, state.feature_centers.at(c), 0.0});
        for (const ClassBall& b : draw.balls) balls.push_back(b);
        Tape::NodeId hinge_samples =
            draw.empty() ? f_real : tape.concat_rows(f_real, f_synthetic);
        loss = tape.add(
            loss, build_ball_loss(tape, hinge_samples, query_labels, balls,
                                  config.ball.margin, config.ball.lambda2,
                                  model.distance));
      }

      if (traits.pmas) {
        Tape::NodeId real_logits =
            build_neg_distance_logits(tape, z_real, protos, model.distance);
        Tape::NodeId kl = tape.scale(
            build_kl_uniform_from_logits(tape, real_logits), config.lambda3);
        Tape::NodeId anchor =
            build_anchor_penalty(tape, state.params, state.snapshot,
                                 state.importance, config.lambda4);
        loss = tape.add(loss, tape.add(kl, anchor));
      }

      double value = tape.scalar(loss);
      FLOWER_CHECK(std::isfinite(value),
                   "run_session: non-finite loss in session " +
                       std::to_string(k + 1) + " epoch " +
                       std::to_string(epoch));
      GradMap grads = tape.backward(loss);
      state.params = sgd_step(state.params, grads, config.session_lr);
      if (traits.clamp) {
        state.params =
            clamp_feature_extractor(std::move(state.params), state.region);
        state.clamp_deviations.push_back(
            max_anchor_deviation(state.params, state.region));
      }
    }
  }

  // prototype extension from real samples under the final parameters
  PrototypeTable fresh = compute_prototypes(model, state.params, session_data);
  for (int c : fresh.class_ids()) state.prototypes.add(c, fresh.at(c));
  for (auto& [c, center] :
       detail::class_feature_centers(model, state.params, session_data))
    state.feature_centers.emplace(c, std::move(center));
  for (int c : new_classes) state.seen_classes.insert(c);

  if (traits.pmas) {
    state.importance = update_importance(std::move(state.importance), model,
                                         state.params, session_data.features);
    state.snapshot = take_snapshot(state.params);
  }
  state.session_index += 1;
  return state;
}

/// Per-session evaluation record produced by a stream run.
struct SessionEval {
  std::size_t session = 0;  // 1-based; 1 = after the base phase
  double accuracy = 0.0;
  std::map<int, double> per_class;
};

/// Nearest-prototype accuracy over the test samples of all classes seen so
/// far (single head, no task ids: every seen class competes).
inline SessionEval evaluate(const ModelConfig& cfg, const ContinualState& state,
                            const Batch& test_pool) {
  FLOWER_CHECK(!state.prototypes.empty(), "evaluate: no prototypes yet");
  test_pool.validate();
  FLOWER_CHECK(test_pool.size() > 0, "evaluate: empty test pool");

  Tensor z = embed(cfg, state.params, test_pool.features);
  SessionEval eval;
  eval.session = state.session_index;
  std::map<int, std::size_t> correct, total;
  std::size_t n_correct = 0, n_total = 0;
  for (std::size_t i = 0; i < test_pool.size(); ++i) {
    int label = test_pool.labels[i];
    if (!state.seen_classes.count(label)) continue;
    int predicted = predict(state.prototypes, z.row(i), cfg.distance);
    total[label] += 1;
    n_total += 1;
    if (predicted == label) {
      correct[label] += 1;
      n_correct += 1;
    }
  }
  FLOWER_CHECK(n_total > 0, "evaluate: test pool has no samples of seen classes");
  eval.accuracy = static_cast<double>(n_correct) / static_cast<double>(n_total);
  for (const auto& [c, t] : total) {
    auto it = correct.find(c);
    eval.per_class[c] = static_cast<double>(it == correct.end() ? 0 : it->second) /
                        static_cast<double>(t);
  }
  return eval;
}

struct StreamRunResult {
  std::vector<SessionEval> sessions;
  ContinualState state;
};

/// Runs a complete stream: base phase, then every few-shot session, with an
/// evaluation over all classes seen after each stage. Deterministic given
/// the seed.
inline StreamRunResult run_stream(const Stream& stream,
                                  const RunnerConfig& config,
                                  std::uint64_t seed) {
  config.validate();
  MethodTraits traits = traits_of(config.method);
  const ModelConfig& model = config.model;

  Rng init_rng(derive_seed(seed, {detail::kInitTag}));
  ParamSet params = init_model_params(model, init_rng);
  add_transform_params(params, config.ball, model.embedding_dim, init_rng);

  BaseOptions base_options;
  base_options.flat = traits.flat_base;
  base_options.wide = traits.wide_base;
  base_options.lambda1 = config.lambda1;

  Rng base_rng(derive_seed(seed, {detail::kBaseTag}));
  BaseTrainResult base = train_base_with_options(
      model, std::move(params), stream.base, config.noise,
      config.base_schedule(), config.base_epochs, config.batch_size,
      base_options, base_rng);

  ContinualState state;
  state.params = std::move(base.params);
  state.region = std::move(base.region);
  state.master_seed = seed;
  state.prototypes = compute_prototypes(model, state.params, stream.base);
  state.feature_centers =
      detail::class_feature_centers(model, state.params, stream.base);
  for (int c : state.prototypes.class_ids()) state.seen_classes.insert(c);
  state.session_index = 1;
  if (traits.pmas) {
    state.importance = update_importance(std::move(state.importance), model,
                                         state.params, stream.base.features);
    state.snapshot = take_snapshot(state.params);
  }

  StreamRunResult result;
  result.sessions.push_back(evaluate(model, state, stream.test_pool));
  for (const Batch& session : stream.sessions) {
    state = run_session(std::move(state), session, config);
    result.sessions.push_back(evaluate(model, state, stream.test_pool));
  }
  result.state = std::move(state);
  return result;
}

}  // namespace flower
