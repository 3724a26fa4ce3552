#pragma once

#include <array>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "flower/autodiff.hpp"
#include "flower/model.hpp"
#include "flower/protonet.hpp"
#include "flower/rng.hpp"
#include "flower/tensor.hpp"

namespace flower {

/// Enclosing ball of one class in embedding space: centroid plus maximum
/// distance. Every sample the ball was fitted on lies inside.
struct ClassBall {
  int class_id = 0;
  Tensor center;
  double radius = 0.0;
};

/// Centroid-anchored enclosing ball: center = mean, radius = max distance
/// to the mean. Encloses all points and is at most twice the optimal
/// enclosing radius (any point is within one diameter of the centroid).
inline ClassBall fit_ball(int class_id, const Tensor& points) {
  FLOWER_CHECK(points.rank() == 2 && points.rows() > 0,
               "fit_ball: need a non-empty [n,D] point set");
  std::size_t n = points.rows(), dim = points.cols();
  Tensor center({dim});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t d = 0; d < dim; ++d) center[d] += points.at(i, d);
  for (std::size_t d = 0; d < dim; ++d) center[d] /= static_cast<double>(n);
  double radius = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    radius = std::max(radius, euclidean_distance(points.row(i), center));
  return ClassBall{class_id, std::move(center), radius};
}

/// Synthetic point z = C + u^(1/D) * sigma * phi/||phi||, uniformly inside
/// the ball when u ~ U[0,1] and phi is isotropic. A zero direction vector
/// is redrawn through `redraw` (up to 16 attempts) when provided.
inline Tensor sample_in_ball(const ClassBall& ball, double u, Tensor phi,
                             const std::function<Tensor()>& redraw = nullptr) {
  FLOWER_CHECK(u >= 0.0 && u <= 1.0, "sample_in_ball: u must lie in [0,1]");
  FLOWER_CHECK(phi.size() == ball.center.size(),
               "sample_in_ball: direction dimension mismatch");
  double norm = l2_norm(phi);
  int attempts = 0;
  while (norm == 0.0) {
    FLOWER_CHECK(redraw != nullptr,
                 "sample_in_ball: zero direction vector and no redraw source");
    FLOWER_CHECK(++attempts <= 16,
                 "sample_in_ball: direction vector still zero after 16 redraws");
    phi = redraw();
    FLOWER_CHECK(phi.size() == ball.center.size(),
                 "sample_in_ball: redraw dimension mismatch");
    norm = l2_norm(phi);
  }
  double dim = static_cast<double>(ball.center.size());
  double shift = std::pow(u, 1.0 / dim) * ball.radius / norm;
  Tensor out = ball.center;
  for (std::size_t d = 0; d < out.size(); ++d) out[d] += shift * phi[d];
  return out;
}

/// Ball-generator settings: synthetic count per class, hinge margin and
/// weight, and the three layer widths of the transformation module (the
/// last width must equal the embedding dimension).
struct BallGenConfig {
  std::size_t synthetic_per_class = 25;
  double margin = 1.0;
  double lambda2 = 1.0;
  std::array<std::size_t, 3> transform_widths = {16, 16, 16};
  bool residual = true;

  void validate(std::size_t embedding_dim) const {
    FLOWER_CHECK(margin >= 0.0, "BallGenConfig: margin must be >= 0");
    FLOWER_CHECK(lambda2 >= 0.0, "BallGenConfig: lambda2 must be >= 0");
    for (std::size_t w : transform_widths)
      FLOWER_CHECK(w >= 1, "BallGenConfig: transform widths must be >= 1");
    FLOWER_CHECK(transform_widths[2] == embedding_dim,
                 "BallGenConfig: final transform width must equal the "
                 "embedding dimension");
  }
};

inline std::string tf_weight_id(std::size_t layer) {
  return "tf." + std::to_string(layer) + ".w";
}
inline std::string tf_bias_id(std::size_t layer) {
  return "tf." + std::to_string(layer) + ".b";
}

/// Adds the three-layer transformation module to the parameter set.
/// Near-identity start: the final layer is initialised at ~1e-8 scale so
/// the residual pass-through dominates until training moves it.
inline void add_transform_params(ParamSet& params, const BallGenConfig& cfg,
                                 std::size_t embedding_dim, Rng& rng) {
  cfg.validate(embedding_dim);
  std::size_t in = embedding_dim;
  for (std::size_t l = 0; l < 3; ++l) {
    std::size_t out = cfg.transform_widths[l];
    bool final_layer = l == 2;
    double w_scale =
        final_layer ? 1e-8 : std::sqrt(2.0 / static_cast<double>(in));
    double b_range = final_layer ? 0.0 : 1.0 / std::sqrt(static_cast<double>(in));
    params.insert(tf_weight_id(l), rng.normal_tensor({in, out}, w_scale),
                  ParamGroup::transformation);
    params.insert(tf_bias_id(l),
                  b_range > 0.0 ? rng.uniform_tensor({out}, -b_range, b_range)
                                : Tensor::zeros({out}),
                  ParamGroup::transformation);
    in = out;
  }
}

/// Transformation graph over a [n,D] node of raw synthetic samples.
inline Tape::NodeId build_transform(Tape& tape, const BallGenConfig& cfg,
                                    Tape::NodeId z) {
  Tape::NodeId h = z;
  for (std::size_t l = 0; l < 3; ++l) {
    h = tape.add_row_bias(tape.matmul(h, tape.param(tf_weight_id(l))),
                          tape.param(tf_bias_id(l)));
    if (l < 2) h = tape.relu(h);
  }
  return cfg.residual ? tape.add(z, h) : h;
}

/// Value-level transformation of a [n,D] batch (or one vector).
inline Tensor transform(const BallGenConfig& cfg, const ParamSet& params,
                        const Tensor& z) {
  Tensor batch = as_batch(z);
  Tape tape(params);
  Tape::NodeId out =
      build_transform(tape, cfg, tape.constant(batch, "synthetic"));
  Tensor v = tape.value(out);
  if (z.rank() == 1) return v.row(0);
  return v;
}

namespace detail {
inline std::vector<std::size_t> ball_slots(const std::vector<int>& labels,
                                           const std::vector<ClassBall>& balls) {
  std::map<int, std::size_t> index;
  for (std::size_t b = 0; b < balls.size(); ++b)
    index.emplace(balls[b].class_id, b);
  FLOWER_CHECK(index.size() == balls.size(),
               "ball_loss: duplicate class id among balls");
  std::vector<std::size_t> slots;
  slots.reserve(labels.size());
  for (int l : labels) {
    auto it = index.find(l);
    FLOWER_CHECK(it != index.end(), "ball_loss: no ball for class " +
                                        std::to_string(l));
    slots.push_back(it->second);
  }
  return slots;
}

inline Tensor ball_centers_matrix(const std::vector<ClassBall>& balls) {
  FLOWER_CHECK(!balls.empty(), "ball centers: no balls");
  Tensor m({balls.size(), balls[0].center.size()});
  for (std::size_t b = 0; b < balls.size(); ++b) {
    FLOWER_CHECK(balls[b].center.size() == m.cols(),
                 "ball centers: dimension mismatch");
    for (std::size_t d = 0; d < m.cols(); ++d)
      m.at(b, d) = balls[b].center[d];
  }
  return m;
}
}  // namespace detail

/// Triplet-style hinge over a [n,D] sample node: for each sample of class i
/// and every other class j, max{0, d(s,C_i) + margin - d(s,C_j)}, summed
/// and scaled by lambda2. Centers enter as constants.
inline Tape::NodeId build_ball_loss(Tape& tape, Tape::NodeId samples,
                                    const std::vector<int>& labels,
                                    const std::vector<ClassBall>& balls,
                                    double margin, double lambda2,
                                    Distance mode) {
  std::vector<std::size_t> slots = detail::ball_slots(labels, balls);
  Tape::NodeId centers =
      tape.constant(detail::ball_centers_matrix(balls), "ball_centers");
  Tape::NodeId sq = tape.pairwise_sqdist(samples, centers);
  Tape::NodeId dist = mode == Distance::euclidean ? tape.sqrt(sq) : sq;
  Tape::NodeId own = tape.pick_rows(dist, slots);
  Tape::NodeId hinge = tape.relu(tape.add_scalar(
      tape.sub(tape.col_broadcast(own, balls.size()), dist), margin));
  Tensor mask({labels.size(), balls.size()});
  for (std::size_t i = 0; i < labels.size(); ++i)
    for (std::size_t b = 0; b < balls.size(); ++b)
      mask.at(i, b) = b == slots[i] ? 0.0 : 1.0;
  Tape::NodeId masked = tape.mul(hinge, tape.constant(mask, "negative_mask"));
  return tape.scale(tape.sum_all(masked), lambda2);
}

/// Scalar ball loss over labelled samples in embedding space. With a single
/// class there are no negatives: returns 0 and raises the warning flag.
inline double ball_loss(const Batch& samples, const std::vector<ClassBall>& balls,
                        double margin, double lambda2, Distance mode,
                        bool* single_class_warning = nullptr) {
  samples.validate();
  if (single_class_warning) *single_class_warning = false;
  if (balls.size() < 2) {
    if (single_class_warning) *single_class_warning = true;
    return 0.0;
  }
  ParamSet none;
  Tape tape(none);
  Tape::NodeId node =
      build_ball_loss(tape, tape.constant(samples.features, "samples"),
                      samples.labels, balls, margin, lambda2, mode);
  return tape.scalar(node);
}

/// Raw synthetic draws for one session epoch: per class, the fitted ball
/// plus S pre-transform samples from it (embeddings under the current
/// parameters). Samples are kept as a row list so S = 0 stays well-formed.
struct SyntheticDraw {
  std::vector<ClassBall> balls;
  std::vector<int> labels;
  std::vector<Tensor> samples;

  bool empty() const { return samples.empty(); }

  Tensor matrix() const {
    FLOWER_CHECK(!samples.empty(), "SyntheticDraw: no samples to stack");
    Tensor m({samples.size(), samples[0].size()});
    for (std::size_t i = 0; i < samples.size(); ++i)
      for (std::size_t d = 0; d < samples[i].size(); ++d)
        m.at(i, d) = samples[i][d];
    return m;
  }
};

inline SyntheticDraw generate_synthetic(const ModelConfig& cfg,
                                        const ParamSet& params,
                                        const BallGenConfig& gen,
                                        const Batch& session_data, Rng& rng) {
  session_data.validate();
  FLOWER_CHECK(session_data.size() > 0, "generate_synthetic: empty session");
  // balls live in the extractor's feature space; the head maps synthetic
  // samples onward to prototype space during training
  Tensor z = extract_features(cfg, params, session_data.features);
  std::vector<int> classes = distinct_labels(session_data.labels);

  SyntheticDraw draw;
  std::size_t dim = z.cols();
  for (int c : classes) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < session_data.size(); ++i)
      if (session_data.labels[i] == c) members.push_back(i);
    Tensor pts({members.size(), dim});
    for (std::size_t m = 0; m < members.size(); ++m)
      for (std::size_t d = 0; d < dim; ++d)
        pts.at(m, d) = z.at(members[m], d);
    ClassBall ball = fit_ball(c, pts);
    for (std::size_t s = 0; s < gen.synthetic_per_class; ++s) {
      double u = rng.uniform();
      Tensor phi = rng.normal_tensor({dim});
      draw.samples.push_back(
          sample_in_ball(ball, u, std::move(phi),
                         [&rng, dim]() { return rng.normal_tensor({dim}); }));
      draw.labels.push_back(c);
    }
    draw.balls.push_back(std::move(ball));
  }
  return draw;
}

/// Feature-space set for one session epoch: real extractor features plus S
/// transformed synthetic samples per class, each labelled with its class.
struct AugmentedSet {
  Batch set;
  std::vector<bool> is_synthetic;
  std::vector<ClassBall> balls;
};

inline AugmentedSet augment_session(const ModelConfig& cfg,
                                    const ParamSet& params,
                                    const BallGenConfig& gen,
                                    const Batch& session_data, Rng& rng) {
  gen.validate(cfg.feature_dim());
  Tensor real = extract_features(cfg, params, session_data.features);
  SyntheticDraw draw = generate_synthetic(cfg, params, gen, session_data, rng);

  AugmentedSet out;
  out.balls = std::move(draw.balls);
  std::size_t n_real = real.rows();
  std::size_t n_syn = draw.labels.size();
  out.set.features = Tensor({n_real + n_syn, real.cols()});
  for (std::size_t i = 0; i < n_real; ++i) {
    for (std::size_t d = 0; d < real.cols(); ++d)
      out.set.features.at(i, d) = real.at(i, d);
    out.set.labels.push_back(session_data.labels[i]);
    out.is_synthetic.push_back(false);
  }
  if (n_syn > 0) {
    Tensor transformed = transform(gen, params, draw.matrix());
    for (std::size_t i = 0; i < n_syn; ++i) {
      for (std::size_t d = 0; d < real.cols(); ++d)
        out.set.features.at(n_real + i, d) = transformed.at(i, d);
      out.set.labels.push_back(draw.labels[i]);
      out.is_synthetic.push_back(true);
    }
  }
  return out;
}

}  // namespace flower
