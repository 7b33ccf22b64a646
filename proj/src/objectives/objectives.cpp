#include "xinv/objectives/objectives.hpp"

#include <algorithm>
#include <cmath>

#include "xinv/autodiff/ops.hpp"
#include "xinv/error.hpp"

namespace xinv {

namespace {

constexpr double kLo = kProbabilityEpsilon;
constexpr double kHi = 1.0 - kProbabilityEpsilon;

void check_binary(std::span<const double> values, std::string_view what) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (values[i] != 0.0 && values[i] != 1.0) {
      throw ValidationError(std::string(what) + ": entry " + std::to_string(i) +
                            " is " + std::to_string(values[i]) + ", expected 0 or 1");
    }
  }
}

double clamp_p(double p) { return std::clamp(p, kLo, kHi); }

// Summed binary cross entropy of clamped probabilities.
double binary_terms(std::span<const double> p, std::span<const double> y) {
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double q = clamp_p(p[i]);
    acc -= y[i] * std::log(q) + (1.0 - y[i]) * std::log(1.0 - q);
  }
  return acc;
}

Tensor mean_bce_node(Graph& g, std::string_view label, const Tensor& probabilities,
                     const Tensor& targets, double batch) {
  auto loss = Tensor::scalar(binary_terms(probabilities.data(), targets.data()) / batch);
  return g.record(OpKind::Custom, label, {probabilities}, loss, [probabilities, targets, loss, batch] {
    if (!probabilities.requires_grad()) return;
    // Clamped entries have zero derivative.
    const double go = loss.grad()[0] / batch;
    auto gp = grad_buffer(probabilities);
    auto p = probabilities.data();
    auto y = targets.data();
    for (std::size_t i = 0; i < gp.size(); ++i) {
      if (p[i] < kLo || p[i] > kHi) continue;
      gp[i] += go * (-y[i] / p[i] + (1.0 - y[i]) / (1.0 - p[i]));
    }
  });
}

}  // namespace

Tensor bce_loss(Graph& g, const Tensor& probabilities, const Tensor& labels) {
  if (probabilities.rank() != 2 || probabilities.dim(1) != 1) {
    throw ShapeError("bce_loss: probabilities must be N×1, got " + to_string(probabilities.shape()));
  }
  if (labels.shape() != probabilities.shape()) {
    throw ShapeError("bce_loss: labels shape " + to_string(labels.shape()) +
                     " does not match probabilities " + to_string(probabilities.shape()));
  }
  check_binary(labels.data(), "bce_loss label");
  return mean_bce_node(g, "bce_loss", probabilities, labels,
                       static_cast<double>(probabilities.dim(0)));
}

Tensor source_ce_loss(Graph& g, const Tensor& scores, const Tensor& one_hot) {
  if (scores.rank() != 2) {
    throw ShapeError("source_ce_loss: scores must be N×S, got " + to_string(scores.shape()));
  }
  if (one_hot.shape() != scores.shape()) {
    throw ShapeError("source_ce_loss: one-hot shape " + to_string(one_hot.shape()) +
                     " does not match scores " + to_string(scores.shape()));
  }
  check_binary(one_hot.data(), "source_ce_loss one-hot");
  const auto n = scores.dim(0), s = scores.dim(1);
  auto oh = one_hot.data();
  for (std::size_t row = 0; row < n; ++row) {
    double ones = 0.0;
    for (std::size_t j = 0; j < s; ++j) ones += oh[row * s + j];
    if (ones != 1.0) {
      throw ValidationError("source_ce_loss: row " + std::to_string(row) + " is not one-hot");
    }
  }
  return mean_bce_node(g, "source_ce_loss", scores, one_hot, static_cast<double>(n));
}

MinMaxObjectives minmax_objectives(Graph& g, const Tensor& disease_loss,
                                   const Tensor& source_loss, double lambda) {
  if (!std::isfinite(lambda) || lambda < 0.0) {
    throw DomainError("minmax_objectives: lambda must be finite and >= 0");
  }
  auto extractor = ops::add(g, disease_loss, ops::scale(g, source_loss, -lambda));
  return {extractor, source_loss};
}

Sgd::Sgd(SgdConfig config) : config_(config) {
  if (!(config_.learning_rate > 0.0)) throw ConfigError("sgd: learning rate must be > 0");
  if (!(config_.momentum >= 0.0 && config_.momentum < 1.0)) {
    throw ConfigError("sgd: momentum must lie in [0, 1)");
  }
}

void Sgd::step(std::span<const NamedTensor> params) {
  for (const auto& p : params) {
    if (!p.tensor.has_grad()) throw Error("sgd_step: parameter " + p.name + " has no gradient");
  }
  for (const auto& p : params) {
    auto [it, inserted] = velocity_.try_emplace(p.name, p.tensor.size(), 0.0);
    auto& v = it->second;
    if (v.size() != p.tensor.size()) {
      throw ShapeError("sgd_step: velocity for " + p.name + " has the wrong size");
    }
    Tensor handle = p.tensor;
    auto theta = handle.data();
    auto grad = p.tensor.grad();
    for (std::size_t i = 0; i < v.size(); ++i) {
      v[i] = config_.momentum * v[i] + grad[i];
      theta[i] -= config_.learning_rate * v[i];
    }
  }
}

void zero_grads(std::span<const NamedTensor> params) {
  for (const auto& p : params) {
    Tensor handle = p.tensor;
    handle.zero_grad();
  }
}

}  // namespace xinv
