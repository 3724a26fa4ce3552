#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "flower/autodiff.hpp"
#include "flower/rng.hpp"
#include "flower/tensor.hpp"

namespace flower {

enum class Distance { euclidean, squared_euclidean };

/// Architecture of the prototypical network: an MLP feature extractor
/// (ReLU after every hidden layer) followed by a linear head that maps
/// into the embedding space where prototypes and distances live.
struct ModelConfig {
  std::size_t input_dim = 16;
  std::vector<std::size_t> hidden_widths = {32, 32, 32};
  std::size_t embedding_dim = 16;
  Distance distance = Distance::euclidean;

  void validate() const {
    FLOWER_CHECK(input_dim >= 1, "ModelConfig: input_dim must be >= 1");
    FLOWER_CHECK(embedding_dim >= 1, "ModelConfig: embedding_dim must be >= 1");
    for (std::size_t w : hidden_widths)
      FLOWER_CHECK(w >= 1, "ModelConfig: hidden widths must be >= 1");
  }

  std::size_t feature_layer_count() const { return hidden_widths.size(); }

  /// Dimension of the extractor output (the space the ball generator
  /// works in). Falls back to the input when there are no hidden layers.
  std::size_t feature_dim() const {
    return hidden_widths.empty() ? input_dim : hidden_widths.back();
  }
};

inline std::string fe_weight_id(std::size_t layer) {
  return "fe." + std::to_string(layer) + ".w";
}
inline std::string fe_bias_id(std::size_t layer) {
  return "fe." + std::to_string(layer) + ".b";
}

/// He-style weights; biases uniform in +-1/sqrt(fan_in). Non-zero biases
/// keep ReLU pre-activations off the exact kink, where finite-difference
/// probes are ill-defined.
inline ParamSet init_model_params(const ModelConfig& cfg, Rng& rng) {
  cfg.validate();
  ParamSet params;
  std::size_t in = cfg.input_dim;
  for (std::size_t l = 0; l < cfg.hidden_widths.size(); ++l) {
    std::size_t out = cfg.hidden_widths[l];
    double scale = std::sqrt(2.0 / static_cast<double>(in));
    double bias_range = 1.0 / std::sqrt(static_cast<double>(in));
    params.insert(fe_weight_id(l), rng.normal_tensor({in, out}, scale),
                  ParamGroup::feature_extractor);
    params.insert(fe_bias_id(l),
                  rng.uniform_tensor({out}, -bias_range, bias_range),
                  ParamGroup::feature_extractor);
    in = out;
  }
  double head_scale = std::sqrt(1.0 / static_cast<double>(in));
  params.insert("head.w", rng.normal_tensor({in, cfg.embedding_dim}, head_scale),
                ParamGroup::classifier_head);
  params.insert("head.b",
                rng.uniform_tensor({cfg.embedding_dim}, -head_scale, head_scale),
                ParamGroup::classifier_head);
  return params;
}

/// Extractor-only graph: [n, input_dim] -> [n, feature_dim].
inline Tape::NodeId build_features(Tape& tape, const ModelConfig& cfg,
                                   Tape::NodeId x) {
  Tape::NodeId h = x;
  for (std::size_t l = 0; l < cfg.hidden_widths.size(); ++l) {
    h = tape.add_row_bias(tape.matmul(h, tape.param(fe_weight_id(l))),
                          tape.param(fe_bias_id(l)));
    h = tape.relu(h);
  }
  return h;
}

/// Head graph: [n, feature_dim] -> [n, embedding_dim].
inline Tape::NodeId build_head(Tape& tape, Tape::NodeId features) {
  return tape.add_row_bias(tape.matmul(features, tape.param("head.w")),
                           tape.param("head.b"));
}

/// Builds the embedding graph z = head(extractor(x)) for a batch node
/// of shape [n, input_dim]; returns the [n, embedding_dim] node.
inline Tape::NodeId build_embedding(Tape& tape, const ModelConfig& cfg,
                                    Tape::NodeId x) {
  return build_head(tape, build_features(tape, cfg, x));
}

/// Promotes a single sample to a one-row batch.
inline Tensor as_batch(const Tensor& x) {
  if (x.rank() == 2) return x;
  return Tensor({1, x.size()}, x.raw());
}

/// Embeds a batch [n, input_dim] (or a single vector) into embedding space.
inline Tensor embed(const ModelConfig& cfg, const ParamSet& params,
                    const Tensor& x) {
  Tensor batch = as_batch(x);
  FLOWER_CHECK(batch.cols() == cfg.input_dim,
               "embed: input has dimension " + std::to_string(batch.cols()) +
                   ", model expects " + std::to_string(cfg.input_dim));
  Tape tape(params);
  Tape::NodeId out = build_embedding(tape, cfg, tape.constant(batch, "input"));
  Tensor z = tape.value(out);
  if (x.rank() == 1) return z.row(0);
  return z;
}

/// Extractor output for a batch [n, input_dim] (or a single vector).
inline Tensor extract_features(const ModelConfig& cfg, const ParamSet& params,
                               const Tensor& x) {
  Tensor batch = as_batch(x);
  FLOWER_CHECK(batch.cols() == cfg.input_dim,
               "extract_features: input has dimension " +
                   std::to_string(batch.cols()) + ", model expects " +
                   std::to_string(cfg.input_dim));
  Tape tape(params);
  Tape::NodeId out = build_features(tape, cfg, tape.constant(batch, "input"));
  Tensor f = tape.value(out);
  if (x.rank() == 1) return f.row(0);
  return f;
}

}  // namespace flower
