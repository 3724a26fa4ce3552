#pragma once

#include <map>
#include <string>

#include "flower/autodiff.hpp"
#include "flower/model.hpp"
#include "flower/rng.hpp"
#include "flower/tensor.hpp"

namespace flower {

/// Bounded perturbation applied to the tails of the feature extractor when
/// probing for a flat-wide region. Every sampled component lies in
/// [-bound, +bound].
struct NoiseSpec {
  enum class Mode { uniform, discrete_beta };

  double bound = 0.01;
  Mode mode = Mode::uniform;
  std::size_t target_layers = 2;  // suffix of feature-extractor layers
  std::size_t trials = 2;         // M perturbation trials per update

  // discrete_beta carries its parameters through the config but has no
  // defined sampling semantics here; see sample_noise.
  double beta_low = 0.1;
  double beta_high = 5.0;
  double reduction_factor = 4.0;

  void validate() const {
    FLOWER_CHECK(bound > 0.0, "NoiseSpec: bound must be positive");
    FLOWER_CHECK(trials >= 1, "NoiseSpec: trials must be >= 1");
  }
};

using NoiseMap = std::map<std::string, Tensor>;

/// Samples one noise draw for the weight tensors of the last
/// `target_layers` feature-extractor layers. Biases and all other layers
/// receive no entry. Deterministic given the rng state.
inline NoiseMap sample_noise(const NoiseSpec& spec, const ModelConfig& cfg,
                             const ParamSet& params, Rng& rng) {
  spec.validate();
  std::size_t n_layers = cfg.feature_layer_count();
  FLOWER_CHECK(spec.target_layers <= n_layers,
               "NoiseSpec: target_layers exceeds feature-extractor depth");
  FLOWER_CHECK(spec.mode == NoiseSpec::Mode::uniform,
               "NoiseSpec: discrete-beta sampling is not defined; use uniform");
  NoiseMap noise;
  std::size_t first = n_layers - spec.target_layers;
  for (std::size_t l = first; l < n_layers; ++l) {
    const Tensor& w = params.at(fe_weight_id(l));
    noise.emplace(fe_weight_id(l),
                  rng.uniform_tensor(w.shape(), -spec.bound, spec.bound));
  }
  return noise;
}

/// Perturbed copy of the parameters; the input set is left untouched.
inline ParamSet apply_noise(const ParamSet& params, const NoiseMap& noise) {
  ParamSet out = params;
  for (const auto& [id, eps] : noise) {
    Tensor& p = out.mutable_at(id);
    FLOWER_CHECK(p.same_shape(eps), "apply_noise: shape mismatch for " + id);
    FLOWER_CHECK(params.group(id) == ParamGroup::feature_extractor,
                 "apply_noise: noise must target the feature extractor only");
    for (std::size_t i = 0; i < p.size(); ++i) p[i] += eps[i];
  }
  return out;
}

}  // namespace flower
