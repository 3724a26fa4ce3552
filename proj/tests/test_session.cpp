#include <catch2/catch_amalgamated.hpp>

#include <functional>
#include <set>

#include "flower/session.hpp"

using namespace flower;

namespace {

RunnerConfig small_runner() {
  RunnerConfig cfg;
  cfg.model.input_dim = 8;
  cfg.model.hidden_widths = {12, 12, 12};
  cfg.model.embedding_dim = 8;
  cfg.noise.bound = 0.01;
  cfg.noise.trials = 2;
  cfg.noise.target_layers = 2;
  cfg.ball.synthetic_per_class = 10;
  cfg.ball.transform_widths = {8, 8, 8};
  cfg.base_epochs = 15;
  cfg.session_epochs = 5;
  cfg.batch_size = 64;
  cfg.session_lr = 0.05;
  return cfg;
}

StreamSpec small_stream_spec(std::uint64_t seed) {
  StreamSpec spec;
  spec.input_dim = 8;
  spec.base_classes = 4;
  spec.base_samples_per_class = 30;
  spec.session_count = 2;
  spec.ways = 2;
  spec.shots = 5;
  spec.test_samples_per_class = 10;
  spec.cluster_spread = 0.25;
  spec.seed = seed;
  return spec;
}

std::size_t param_hash(const ParamSet& params) {
  std::size_t h = 1469598103934665603ull;
  for (const auto& [id, t] : params.values()) {
    for (char c : id) h = (h ^ static_cast<std::size_t>(c)) * 1099511628211ull;
    for (double v : t.raw()) {
      std::uint64_t bits;
      static_assert(sizeof(bits) == sizeof(v));
      std::memcpy(&bits, &v, sizeof(bits));
      h = (h ^ bits) * 1099511628211ull;
    }
  }
  return h;
}

}  // namespace

TEST_CASE("clamp_feature_extractor: projection semantics") {
  RunnerConfig cfg = small_runner();
  Rng rng(40);
  ParamSet params = init_model_params(cfg.model, rng);
  add_transform_params(params, cfg.ball, cfg.model.embedding_dim, rng);
  FlatWideRegion region = snapshot_region(params, 0.01);

  SECTION("interior point is bit-unchanged") {
    ParamSet clamped = clamp_feature_extractor(params, region);
    for (const auto& id : params.ids())
      REQUIRE(clamped.at(id).raw() == params.at(id).raw());
  }

  SECTION("a coordinate at anchor + 2b is pulled to anchor + b") {
    ParamSet moved = params;
    double anchor0 = region.anchor.at("fe.0.w")[0];
    moved.mutable_at("fe.0.w")[0] = anchor0 + 0.02;
    ParamSet clamped = clamp_feature_extractor(moved, region);
    REQUIRE(clamped.at("fe.0.w")[0] == anchor0 + 0.01);
  }

  SECTION("head and transform parameters are never touched") {
    ParamSet moved = params;
    moved.mutable_at("head.w")[0] += 5.0;
    moved.mutable_at("tf.0.w")[0] += 5.0;
    ParamSet clamped = clamp_feature_extractor(moved, region);
    REQUIRE(clamped.at("head.w")[0] == moved.at("head.w")[0]);
    REQUIRE(clamped.at("tf.0.w")[0] == moved.at("tf.0.w")[0]);
  }
}

TEST_CASE("run_stream: determinism and zero-session edge") {
  RunnerConfig cfg = small_runner();

  SECTION("identical seeds give bit-identical evaluation records") {
    Stream stream = generate_stream(small_stream_spec(50));
    StreamRunResult a = run_stream(stream, cfg, 7);
    StreamRunResult b = run_stream(stream, cfg, 7);
    REQUIRE(a.sessions.size() == b.sessions.size());
    for (std::size_t i = 0; i < a.sessions.size(); ++i) {
      REQUIRE(a.sessions[i].accuracy == b.sessions[i].accuracy);
      REQUIRE(a.sessions[i].per_class == b.sessions[i].per_class);
    }
    REQUIRE(param_hash(a.state.params) == param_hash(b.state.params));
  }

  SECTION("zero few-shot sessions returns exactly the base record") {
    StreamSpec spec = small_stream_spec(51);
    spec.session_count = 0;
    Stream stream = generate_stream(spec);
    StreamRunResult r = run_stream(stream, cfg, 3);
    REQUIRE(r.sessions.size() == 1);
    REQUIRE(r.sessions[0].session == 1);
    REQUIRE(r.state.session_index == 1);
  }
}

TEST_CASE("run_session: contracts and toggle semantics") {
  RunnerConfig cfg = small_runner();
  Stream stream = generate_stream(small_stream_spec(52));

  SECTION("session before base phase is rejected") {
    ContinualState empty;
    REQUIRE_THROWS_WITH(run_session(std::move(empty), stream.sessions[0], cfg),
                        Catch::Matchers::ContainsSubstring("base phase"));
  }

  SECTION("class overlap with an earlier task is rejected") {
    StreamRunResult r = run_stream(stream, cfg, 4);
    // feed the base task's classes back in as a "session"
    Batch overlap;
    overlap.features = Tensor({2, 8});
    overlap.labels = {0, 1};
    REQUIRE_THROWS_WITH(run_session(std::move(r.state), overlap, cfg),
                        Catch::Matchers::ContainsSubstring("disjoint"));
  }

  SECTION("baseline: parameters bit-identical, prototypes added") {
    RunnerConfig baseline = cfg;
    baseline.method = Method::baseline;
    Stream s = generate_stream(small_stream_spec(53));
    // run base phase via run_stream on a session-free copy of the stream
    Stream base_only = s;
    base_only.sessions.clear();
    StreamRunResult r = run_stream(base_only, baseline, 5);

    std::size_t before = param_hash(r.state.params);
    std::size_t protos_before = r.state.prototypes.size();
    ContinualState state = run_session(std::move(r.state), s.sessions[0], baseline);
    REQUIRE(param_hash(state.params) == before);
    REQUIRE(state.prototypes.size() == protos_before + 2);
    REQUIRE(state.session_index == 2);
  }

  SECTION("E = 0: prototypes still added, parameters untouched") {
    RunnerConfig zero_epochs = cfg;
    zero_epochs.session_epochs = 0;
    Stream s = generate_stream(small_stream_spec(54));
    Stream base_only = s;
    base_only.sessions.clear();
    StreamRunResult r = run_stream(base_only, zero_epochs, 6);
    std::size_t before = param_hash(r.state.params);
    ContinualState state =
        run_session(std::move(r.state), s.sessions[0], zero_epochs);
    REQUIRE(param_hash(state.params) == before);
    REQUIRE(state.prototypes.size() == 6);  // 4 base + 2 new
  }
}

TEST_CASE("no-ball session step equals a manual CE+PMAS+clamp step") {
  RunnerConfig cfg = small_runner();
  cfg.method = Method::no_ball;
  cfg.session_epochs = 1;

  Stream stream = generate_stream(small_stream_spec(55));
  Stream base_only = stream;
  base_only.sessions.clear();
  StreamRunResult base_run = run_stream(base_only, cfg, 8);
  ContinualState state = base_run.state;

  // manual replication of one training epoch on session 0
  const Batch& session = stream.sessions[0];
  std::vector<int> new_classes = distinct_labels(session.labels);
  std::vector<int> old_ids = state.prototypes.class_ids();
  Tensor old_protos = state.prototypes.matrix();
  std::vector<std::size_t> real_slots, new_block;
  for (int l : session.labels) {
    std::size_t slot = 0;
    for (std::size_t i = 0; i < new_classes.size(); ++i)
      if (new_classes[i] == l) slot = i;
    new_block.push_back(slot);
    real_slots.push_back(old_ids.size() + slot);
  }
  Tape tape(state.params);
  Tape::NodeId z = build_embedding(tape, cfg.model,
                                   tape.constant(session.features, "x"));
  Tape::NodeId protos = tape.concat_rows(
      tape.constant(old_protos, "old"),
      tape.group_mean(z, new_block, new_classes.size()));
  Tape::NodeId logits =
      build_neg_distance_logits(tape, z, protos, cfg.model.distance);
  Tape::NodeId loss = build_ce_from_logits(tape, logits, real_slots);
  Tape::NodeId kl =
      tape.scale(build_kl_uniform_from_logits(tape, logits), cfg.lambda3);
  Tape::NodeId anchor = build_anchor_penalty(tape, state.params, state.snapshot,
                                             state.importance, cfg.lambda4);
  loss = tape.add(loss, tape.add(kl, anchor));
  ParamSet expected = sgd_step(state.params, tape.backward(loss), cfg.session_lr);
  expected = clamp_feature_extractor(std::move(expected), state.region);

  ContinualState after = run_session(std::move(base_run.state), session, cfg);
  for (const auto& id : expected.ids()) {
    const Tensor& got = after.params.at(id);
    const Tensor& want = expected.at(id);
    for (std::size_t i = 0; i < got.size(); ++i)
      REQUIRE(std::abs(got[i] - want[i]) <= 1e-12);
  }
}

TEST_CASE("flower stream: clamp invariant and monotone class coverage") {
  RunnerConfig cfg = small_runner();
  Stream stream = generate_stream(small_stream_spec(56));
  StreamRunResult r = run_stream(stream, cfg, 9);

  SECTION("every post-update deviation stays inside the box") {
    REQUIRE(r.state.clamp_deviations.size() ==
            stream.sessions.size() * cfg.session_epochs);
    for (double dev : r.state.clamp_deviations)
      REQUIRE(dev <= cfg.noise.bound + 1e-12);
  }

  SECTION("class coverage grows strictly across sessions") {
    REQUIRE(r.sessions.size() == 3);
    REQUIRE(r.sessions[0].per_class.size() == 4);
    REQUIRE(r.sessions[1].per_class.size() == 6);
    REQUIRE(r.sessions[2].per_class.size() == 8);
    // session-1 classes remain measurable in every evaluation
    for (const SessionEval& e : r.sessions)
      for (int c = 0; c < 4; ++c) REQUIRE(e.per_class.count(c) == 1);
  }

  SECTION("disjointness: seen-class count equals the sum of task sizes") {
    REQUIRE(r.state.seen_classes.size() == 4 + 2 * 2);
  }
}

TEST_CASE("baseline immutability across a full stream") {
  RunnerConfig cfg = small_runner();
  cfg.method = Method::baseline;
  Stream stream = generate_stream(small_stream_spec(57));

  Stream base_only = stream;
  base_only.sessions.clear();
  StreamRunResult base_run = run_stream(base_only, cfg, 10);
  std::size_t hash_after_base = param_hash(base_run.state.params);

  StreamRunResult full = run_stream(stream, cfg, 10);
  REQUIRE(param_hash(full.state.params) == hash_after_base);
  REQUIRE(full.state.prototypes.size() == 8);
}

TEST_CASE("evaluate: perfect separation, single class, chance level") {
  ModelConfig identity;
  identity.input_dim = 4;
  identity.hidden_widths = {};
  identity.embedding_dim = 4;

  ParamSet params;
  Tensor eye({4, 4});
  for (std::size_t i = 0; i < 4; ++i) eye.at(i, i) = 1.0;
  params.insert("head.w", std::move(eye), ParamGroup::classifier_head);
  params.insert("head.b", Tensor::zeros({4}), ParamGroup::classifier_head);

  SECTION("prototypes at class means with zero spread classify perfectly") {
    ContinualState state;
    state.params = params;
    state.prototypes.add(0, Tensor::vector({1, 0, 0, 0}));
    state.prototypes.add(1, Tensor::vector({0, 1, 0, 0}));
    state.seen_classes = {0, 1};
    state.session_index = 1;
    Batch pool;
    pool.features = Tensor::matrix(4, 4, {1, 0, 0, 0, 1, 0, 0, 0,  //
                                          0, 1, 0, 0, 0, 1, 0, 0});
    pool.labels = {0, 0, 1, 1};
    SessionEval e = evaluate(identity, state, pool);
    REQUIRE(e.accuracy == 1.0);
    REQUIRE(e.per_class.at(0) == 1.0);
  }

  SECTION("a single seen class is always predicted") {
    ContinualState state;
    state.params = params;
    state.prototypes.add(5, Tensor::vector({0, 0, 0, 0}));
    state.seen_classes = {5};
    state.session_index = 1;
    Rng rng(58);
    Batch pool;
    pool.features = rng.normal_tensor({50, 4});
    pool.labels.assign(50, 5);
    REQUIRE(evaluate(identity, state, pool).accuracy == 1.0);
  }

  SECTION("random prototypes on diffuse balanced classes sit near chance") {
    Rng rng(59);
    ContinualState state;
    state.params = params;
    state.prototypes.add(0, rng.normal_tensor({4}));
    state.prototypes.add(1, rng.normal_tensor({4}));
    state.seen_classes = {0, 1};
    state.session_index = 1;
    Batch pool;
    const std::size_t n = 10000;
    pool.features = rng.normal_tensor({n, 4}, 100.0);  // spread >> separation
    for (std::size_t i = 0; i < n; ++i)
      pool.labels.push_back(static_cast<int>(i % 2));
    double acc = evaluate(identity, state, pool).accuracy;
    REQUIRE(acc > 0.45);
    REQUIRE(acc < 0.55);
  }

  SECTION("empty test pool rejected") {
    ContinualState state;
    state.params = params;
    state.prototypes.add(0, Tensor::vector({0, 0, 0, 0}));
    state.seen_classes = {0};
    Batch pool;
    pool.features = Tensor::matrix(1, 4, {0, 0, 0, 0});
    pool.labels = {3};  // not a seen class
    REQUIRE_THROWS_AS(evaluate(identity, state, pool), Error);
  }
}
