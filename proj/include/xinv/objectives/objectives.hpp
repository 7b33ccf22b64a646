#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "xinv/autodiff/graph.hpp"
#include "xinv/autodiff/tensor.hpp"
#include "xinv/model/model.hpp"

namespace xinv {

/// Probability clamp applied inside both losses.
inline constexpr double kProbabilityEpsilon = 1e-7;

/// Mean binary cross entropy, -[y log p + (1-y) log(1-p)], over an N×1 batch.
/// Labels must be exactly 0 or 1.
Tensor bce_loss(Graph& g, const Tensor& probabilities, const Tensor& labels);

/// Mean over the batch of the summed per-source binary cross entropy between
/// N×S sigmoid scores and one-hot rows.
Tensor source_ce_loss(Graph& g, const Tensor& scores, const Tensor& one_hot);

struct MinMaxObjectives {
  Tensor extractor;      // L_p - lambda * L_s, minimized over θ_e, θ_c
  Tensor discriminator;  // L_s, minimized over θ_d
};

MinMaxObjectives minmax_objectives(Graph& g, const Tensor& disease_loss,
                                   const Tensor& source_loss, double lambda);

struct SgdConfig {
  double learning_rate = 0.05;
  double momentum = 0.9;
};

/**
 * SGD with heavy-ball momentum: v ← βv + g; θ ← θ − ηv.
 *
 * Velocity buffers are keyed by parameter name and created on first use.
 * step() does not clear gradients; call zero_grads() afterwards.
 */
class Sgd {
 public:
  explicit Sgd(SgdConfig config = {});

  void step(std::span<const NamedTensor> params);

  const SgdConfig& config() const noexcept { return config_; }
  const std::map<std::string, std::vector<double>>& velocity() const noexcept { return velocity_; }

 private:
  SgdConfig config_;
  std::map<std::string, std::vector<double>> velocity_;
};

void zero_grads(std::span<const NamedTensor> params);

}  // namespace xinv
