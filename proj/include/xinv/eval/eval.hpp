#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "xinv/datapipe/manifest.hpp"
#include "xinv/model/model.hpp"

namespace xinv {

struct ScoredSet {
  std::vector<double> scores;
  std::vector<int> labels;

  std::size_t positives() const;
  std::size_t negatives() const;
};

/// Mann–Whitney AUC with half credit for exact score ties. Computed in
/// integer half-pair units, so the result is exact up to the final division.
/// Throws ValidationError when only one class is present.
double auc_roc(const ScoredSet& set);

/// Disease probabilities for every example, in dataset order. Evaluates in
/// fixed-size batches; parameters are not modified.
ScoredSet evaluate(const ModelParams& params, const Dataset& data, std::size_t batch_size = 256);

/// Fraction of examples whose highest discriminator score is their own
/// source. `data` sources must index the discriminator's outputs.
double discriminator_accuracy(const ModelParams& params, const Dataset& data,
                              std::size_t batch_size = 256);

struct FoldResult {
  std::string held_out;
  std::string mode;
  double auc_in_source = 0.0;
  double auc_out_of_source = 0.0;
  double gap() const { return auc_in_source - auc_out_of_source; }
};

/// Fold rows in the order they were added.
struct EvalReport {
  std::vector<FoldResult> folds;

  nlohmann::json to_json() const;
  static EvalReport from_json(const nlohmann::json& j);

  /// Aligned text table: one row per held-out source, one in/out column pair
  /// per mode (baseline first). Values rounded to two decimals.
  std::string to_table() const;
};

}  // namespace xinv
