#include <catch2/catch_amalgamated.hpp>

#include "flower/base_trainer.hpp"
#include "flower/finite_diff.hpp"
#include "flower/model.hpp"
#include "flower/noise.hpp"
#include "flower/protonet.hpp"
#include "flower/rng.hpp"
#include "flower/schedule.hpp"

using namespace flower;

namespace {

ModelConfig small_config() {
  ModelConfig cfg;
  cfg.input_dim = 4;
  cfg.hidden_widths = {6, 5, 5};
  cfg.embedding_dim = 3;
  return cfg;
}

Batch two_class_gaussian(std::size_t dim, std::size_t per_class, double spread,
                         Rng& rng) {
  Batch b;
  b.features = Tensor({2 * per_class, dim});
  Tensor m0 = rng.normal_tensor({dim});
  Tensor m1 = rng.normal_tensor({dim});
  double norm0 = l2_norm(m0), norm1 = l2_norm(m1);
  for (std::size_t d = 0; d < dim; ++d) {
    m0[d] /= norm0;
    m1[d] /= norm1;
  }
  for (std::size_t i = 0; i < 2 * per_class; ++i) {
    const Tensor& m = i < per_class ? m0 : m1;
    for (std::size_t d = 0; d < dim; ++d)
      b.features.at(i, d) = m[d] + spread * rng.normal();
    b.labels.push_back(i < per_class ? 0 : 1);
  }
  return b;
}

}  // namespace

TEST_CASE("sample_noise: contracts and targeting") {
  ModelConfig cfg = small_config();
  Rng rng(1);
  ParamSet params = init_model_params(cfg, rng);

  SECTION("bound must be positive") {
    NoiseSpec bad;
    bad.bound = 0.0;
    REQUIRE_THROWS_AS(sample_noise(bad, cfg, params, rng), Error);
  }

  SECTION("layers outside the suffix receive no entry, biases never do") {
    NoiseSpec spec;
    spec.target_layers = 2;
    NoiseMap noise = sample_noise(spec, cfg, params, rng);
    REQUIRE(noise.size() == 2);
    REQUIRE(noise.count("fe.1.w") == 1);
    REQUIRE(noise.count("fe.2.w") == 1);
    REQUIRE(noise.count("fe.0.w") == 0);
    REQUIRE(noise.count("fe.1.b") == 0);
    REQUIRE(noise.count("head.w") == 0);
  }

  SECTION("target_layers beyond depth rejected") {
    NoiseSpec spec;
    spec.target_layers = 4;
    REQUIRE_THROWS_AS(sample_noise(spec, cfg, params, rng), Error);
  }

  SECTION("discrete-beta has no defined sampling and is rejected") {
    NoiseSpec spec;
    spec.mode = NoiseSpec::Mode::discrete_beta;
    REQUIRE_THROWS_WITH(sample_noise(spec, cfg, params, rng),
                        Catch::Matchers::ContainsSubstring("discrete-beta"));
  }

  SECTION("uniform draws stay in [-b, b] with near-zero mean") {
    NoiseSpec spec;
    spec.bound = 0.01;
    spec.target_layers = 3;
    double max_abs = 0.0, sum = 0.0;
    std::size_t count = 0;
    // repeated draws across fresh maps reach ~1e5 samples
    for (int rep = 0; rep < 150; ++rep) {
      NoiseMap noise = sample_noise(spec, cfg, params, rng);
      for (const auto& [_, eps] : noise)
        for (std::size_t i = 0; i < eps.size(); ++i) {
          max_abs = std::max(max_abs, std::abs(eps[i]));
          sum += eps[i];
          ++count;
        }
    }
    REQUIRE(count > 10000);
    REQUIRE(max_abs <= 0.01);
    // mean of U(-b,b) has sd b/sqrt(3N); allow 3 sigma
    double sigma = 0.01 / std::sqrt(3.0 * static_cast<double>(count));
    REQUIRE(std::abs(sum / static_cast<double>(count)) < 3.0 * sigma);
  }
}

TEST_CASE("apply_noise leaves the source parameters bit-exact") {
  ModelConfig cfg = small_config();
  Rng rng(2);
  ParamSet params = init_model_params(cfg, rng);
  ParamSet reference = params;
  NoiseSpec spec;
  NoiseMap noise = sample_noise(spec, cfg, params, rng);
  ParamSet perturbed = apply_noise(params, noise);
  for (const auto& id : params.ids())
    REQUIRE(params.at(id).raw() == reference.at(id).raw());
  // and the perturbation actually moved the targeted tensors
  REQUIRE(perturbed.at("fe.2.w").raw() != params.at("fe.2.w").raw());
}

TEST_CASE("base_loss: zero noise gives CE + KL with zero drift") {
  ModelConfig cfg = small_config();
  Rng rng(3);
  ParamSet params = init_model_params(cfg, rng);
  Batch batch = two_class_gaussian(4, 6, 0.3, rng);

  double with_drift_term = base_loss(cfg, params, params, batch, 1.0);
  double without = base_loss(cfg, params, params, batch, 0.0);
  REQUIRE(std::abs(with_drift_term - without) < 1e-12);

  // equals independently composed CE + KL on the unperturbed embeddings
  PrototypeTable table = compute_prototypes(cfg, params, batch);
  Batch embedded{embed(cfg, params, batch.features), batch.labels};
  double ce = proto_ce_loss(table, embedded, cfg.distance);
  double kl = 0.0;
  for (std::size_t i = 0; i < embedded.size(); ++i)
    kl += kl_to_uniform(
        class_posterior(table, embedded.features.row(i), cfg.distance));
  kl /= static_cast<double>(embedded.size());
  REQUIRE(std::abs(without - (ce + kl)) < 1e-10);
}

TEST_CASE("base_loss: lambda1 = 1 equals term-by-term oracle under noise") {
  ModelConfig cfg = small_config();
  Rng rng(4);
  ParamSet params = init_model_params(cfg, rng);
  Batch batch = two_class_gaussian(4, 5, 0.3, rng);
  NoiseSpec spec;
  spec.bound = 0.05;
  spec.target_layers = 2;
  ParamSet perturbed = apply_noise(params, sample_noise(spec, cfg, params, rng));

  double loss = base_loss(cfg, params, perturbed, batch, 1.0);

  PrototypeTable ref = compute_prototypes(cfg, params, batch);
  PrototypeTable pert = compute_prototypes(cfg, perturbed, batch);
  Batch embedded{embed(cfg, perturbed, batch.features), batch.labels};
  double ce = proto_ce_loss(pert, embedded, cfg.distance);
  double kl = 0.0;
  for (std::size_t i = 0; i < embedded.size(); ++i)
    kl += kl_to_uniform(
        class_posterior(pert, embedded.features.row(i), cfg.distance));
  kl /= static_cast<double>(embedded.size());
  double drift = 0.0;
  for (int c : ref.class_ids()) drift += euclidean_distance(ref.at(c), pert.at(c));
  drift /= static_cast<double>(ref.size());

  REQUIRE(std::abs(loss - (ce + kl + drift)) < 1e-12);

  // lambda1 = 0 removes the drift dependence entirely
  double no_drift = base_loss(cfg, params, perturbed, batch, 0.0);
  REQUIRE(std::abs(loss - no_drift - drift) < 1e-12);
}

TEST_CASE("base loss gradient matches finite differences") {
  ModelConfig cfg;
  cfg.input_dim = 3;
  cfg.hidden_widths = {4, 4};
  cfg.embedding_dim = 2;
  Rng rng(5);
  ParamSet params = init_model_params(cfg, rng);
  Batch batch = two_class_gaussian(3, 4, 0.4, rng);
  std::vector<int> classes = distinct_labels(batch.labels);
  std::vector<std::size_t> slots = label_slots(batch.labels, classes);
  Tensor reference = compute_prototypes(cfg, params, batch).matrix();
  // evaluate at a visibly perturbed point so the drift term is active
  NoiseSpec spec;
  spec.bound = 0.05;
  ParamSet at = apply_noise(params, sample_noise(spec, cfg, params, rng));

  auto loss_at = [&](const ParamSet& ps) {
    Tape tape(ps);
    return tape.scalar(build_base_loss(tape, cfg, batch.features, slots,
                                       classes.size(), reference, 1.0));
  };
  Tape tape(at);
  Tape::NodeId loss = build_base_loss(tape, cfg, batch.features, slots,
                                      classes.size(), reference, 1.0);
  GradMap analytic = tape.backward(loss);
  GradMap numeric = finite_diff_grad(loss_at, at, 1e-6);
  REQUIRE(max_relative_error(analytic, numeric) < 1e-4);
}

TEST_CASE("train_base: M=1 with tiny bound matches plain SGD on CE+KL") {
  ModelConfig cfg = small_config();
  Rng data_rng(6);
  Batch data = two_class_gaussian(4, 8, 0.3, data_rng);

  Rng init_rng(7);
  ParamSet params = init_model_params(cfg, init_rng);

  NoiseSpec spec;
  spec.bound = 1e-8;
  spec.trials = 1;
  spec.target_layers = 2;
  LrSchedule lr = LrSchedule::constant(0.05);

  Rng train_rng(derive_seed(8, {1}));
  BaseTrainResult result = train_base(cfg, params, data, spec, lr, 10,
                                      data.size(), 0.0, train_rng);

  // oracle: plain SGD on CE+KL (full batch, no noise)
  ParamSet oracle = params;
  std::vector<int> classes = distinct_labels(data.labels);
  std::vector<std::size_t> slots = label_slots(data.labels, classes);
  for (int step = 0; step < 10; ++step) {
    Tape tape(oracle);
    Tape::NodeId z =
        build_embedding(tape, cfg, tape.constant(data.features, "x"));
    Tape::NodeId protos = tape.group_mean(z, slots, classes.size());
    Tape::NodeId logits =
        build_neg_distance_logits(tape, z, protos, cfg.distance);
    Tape::NodeId loss = tape.add(build_ce_from_logits(tape, logits, slots),
                                 build_kl_uniform_from_logits(tape, logits));
    oracle = sgd_step(oracle, tape.backward(loss), 0.05);
  }
  for (const auto& id : oracle.ids()) {
    const Tensor& got = result.params.at(id);
    const Tensor& want = oracle.at(id);
    for (std::size_t i = 0; i < got.size(); ++i)
      REQUIRE(std::abs(got[i] - want[i]) < 1e-3);
  }
}

TEST_CASE("train_base: separable two-class task reaches 95% train accuracy") {
  ModelConfig cfg;
  cfg.input_dim = 16;
  cfg.hidden_widths = {16, 16, 16};
  cfg.embedding_dim = 8;
  Rng rng(9);
  Batch data = two_class_gaussian(16, 25, 0.15, rng);
  ParamSet params = init_model_params(cfg, rng);

  NoiseSpec spec;
  spec.bound = 0.01;
  spec.trials = 2;
  spec.target_layers = 2;
  Rng train_rng(10);
  BaseTrainResult result =
      train_base(cfg, params, data, spec, LrSchedule::step_at(0.1, 0.1, 30), 50,
                 data.size(), 1.0, train_rng);

  PrototypeTable table = compute_prototypes(cfg, result.params, data);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    Tensor z = embed(cfg, result.params, data.features.row(i));
    if (predict(table, z, cfg.distance) == data.labels[i]) ++correct;
  }
  REQUIRE(static_cast<double>(correct) / static_cast<double>(data.size()) >=
          0.95);

  // anchor box carries the configured bound
  REQUIRE(result.region.bound == 0.01);
  REQUIRE_FALSE(result.region.empty());
  // trace length bookkeeping: one entry per update
  REQUIRE(result.diagnostics.steps.size() == 50 * 1);
}

TEST_CASE("train_base: update direction is the mean of the M trial gradients") {
  ModelConfig cfg = small_config();
  Rng rng(11);
  Batch data = two_class_gaussian(4, 4, 0.3, rng);
  ParamSet params = init_model_params(cfg, rng);

  NoiseSpec spec;
  spec.bound = 0.02;
  spec.trials = 3;
  spec.target_layers = 2;
  double lr = 0.1;

  // replay: consume the rng exactly as train_base does for one update
  std::uint64_t seed = derive_seed(12, {0});
  Rng replay(seed);
  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  replay.shuffle(order);
  Batch batch;
  batch.features = Tensor({data.size(), data.features.cols()});
  for (std::size_t i = 0; i < data.size(); ++i) {
    for (std::size_t d = 0; d < data.features.cols(); ++d)
      batch.features.at(i, d) = data.features.at(order[i], d);
    batch.labels.push_back(data.labels[order[i]]);
  }
  std::vector<int> classes = distinct_labels(batch.labels);
  std::vector<std::size_t> slots = label_slots(batch.labels, classes);
  Tensor reference = compute_prototypes(cfg, params, batch).matrix();
  GradMap total;
  for (std::size_t j = 0; j < spec.trials; ++j) {
    ParamSet perturbed =
        apply_noise(params, sample_noise(spec, cfg, params, replay));
    Tape tape(perturbed);
    Tape::NodeId loss = build_base_loss(tape, cfg, batch.features, slots,
                                        classes.size(), reference, 1.0);
    accumulate_grads(total, tape.backward(loss));
  }
  GradMap mean = scale_grads(std::move(total), 1.0 / 3.0);
  ParamSet expected = sgd_step(params, mean, lr);

  Rng train_rng(seed);
  BaseTrainResult result = train_base(cfg, params, data, spec,
                                      LrSchedule::constant(lr), 1, data.size(),
                                      1.0, train_rng);
  for (const auto& id : expected.ids()) {
    const Tensor& got = result.params.at(id);
    const Tensor& want = expected.at(id);
    for (std::size_t i = 0; i < got.size(); ++i)
      REQUIRE(std::abs(got[i] - want[i]) <= 1e-12);
  }
}

TEST_CASE("flatness probe: trained anchor is flatter than a random point") {
  ModelConfig cfg;
  cfg.input_dim = 2;
  cfg.hidden_widths = {4};
  cfg.embedding_dim = 2;
  Rng rng(13);
  Batch data = two_class_gaussian(2, 10, 0.2, rng);
  ParamSet params = init_model_params(cfg, rng);

  NoiseSpec spec;
  spec.bound = 0.01;
  spec.trials = 2;
  spec.target_layers = 1;
  Rng train_rng(14);
  BaseTrainResult result =
      train_base(cfg, params, data, spec, LrSchedule::step_at(0.1, 0.1, 35), 60,
                 data.size(), 1.0, train_rng);

  Rng probe_rng(15);
  double at_anchor =
      flatness_probe(cfg, result.params, data, spec, 20, probe_rng);
  Rng random_rng(16);
  ParamSet random_point = init_model_params(cfg, random_rng);
  double at_random =
      flatness_probe(cfg, random_point, data, spec, 20, random_rng);
  REQUIRE(std::isfinite(at_anchor));
  REQUIRE(at_anchor < 10.0 * at_random);
}

TEST_CASE("gradient_norm_trace: constant loss, decay, bookkeeping") {
  SECTION("constant objective gives an all-zero trace") {
    ParamSet p;
    p.insert("theta", Tensor::vector({1.0, 2.0}), ParamGroup::classifier_head);
    LossGradFn constant = [](const ParamSet& ps) {
      GradMap g;
      g.emplace("theta", Tensor::zeros(ps.at("theta").shape()));
      return std::make_pair(3.0, g);
    };
    ParamSet work = p;
    TrainDiagnostics diag =
        sgd_trajectory(work, constant, LrSchedule::constant(0.1), 25);
    for (double v : gradient_norm_trace(diag)) REQUIRE(v == 0.0);
  }

  SECTION("convex quadratic with decaying schedule contracts the trace") {
    ParamSet p;
    p.insert("theta", Tensor::vector({2.0, -1.5, 0.5}),
             ParamGroup::classifier_head);
    GraphFn quad = [](Tape& t, Tape::NodeId) {
      return t.sum_all(t.square(t.param("theta")));
    };
    LossGradFn fn = [&](const ParamSet& ps) {
      Tape tape(ps);
      Tape::NodeId loss = quad(tape, 0);
      double v = tape.scalar(loss);
      return std::make_pair(v, tape.backward(loss));
    };
    ParamSet work = p;
    TrainDiagnostics diag =
        sgd_trajectory(work, fn, LrSchedule::harmonic(0.5), 2000);
    std::vector<double> trace = gradient_norm_trace(diag);
    REQUIRE(trace.back() < 0.1 * trace.front());
  }
}

TEST_CASE("check_lr_schedule: harmonic, constant and square decay") {
  SECTION("1/(k+1) satisfies both conditions at K = 1e6") {
    ScheduleReport r = check_lr_schedule(LrSchedule::harmonic(1.0), 1000000);
    REQUIRE(r.s1_diverges);
    REQUIRE(r.s2_converges);
    REQUIRE(r.assumption_ok);
    REQUIRE(std::abs(r.s1 - std::log(1e6)) < 1.0);  // S1 ~ ln K
    REQUIRE(r.s2 < 1.6449340668482264);             // pi^2/6
    REQUIRE(r.s1_growth == "logarithmic");
  }

  SECTION("constant lr violates the squared-sum condition") {
    ScheduleReport r = check_lr_schedule(LrSchedule::constant(0.1), 100000);
    REQUIRE(r.s1_diverges);
    REQUIRE_FALSE(r.s2_converges);
    REQUIRE_FALSE(r.assumption_ok);
    REQUIRE(r.s1_growth == "linear");
  }

  SECTION("1/(k+1)^2 violates the sum-divergence condition") {
    ScheduleReport r = check_lr_schedule(LrSchedule::harmonic(1.0, 2.0), 1000000);
    REQUIRE_FALSE(r.s1_diverges);
    REQUIRE_FALSE(r.assumption_ok);
    REQUIRE(r.s1_growth == "bounded");
  }
}
