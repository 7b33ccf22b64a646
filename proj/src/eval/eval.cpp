#include "xinv/eval/eval.hpp"

#include <algorithm>
#include <cstdint>
#include <iomanip>
#include <map>
#include <numeric>
#include <sstream>

#include "xinv/error.hpp"

namespace xinv {

std::size_t ScoredSet::positives() const {
  return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
}

std::size_t ScoredSet::negatives() const {
  return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 0));
}

double auc_roc(const ScoredSet& set) {
  if (set.scores.size() != set.labels.size()) {
    throw ValidationError("auc_roc: scores and labels differ in length");
  }
  for (int y : set.labels) {
    if (y != 0 && y != 1) throw ValidationError("auc_roc: labels must be 0 or 1");
  }
  const auto pos = set.positives(), neg = set.negatives();
  if (pos == 0 || neg == 0) throw ValidationError("AUC undefined: need both classes");

  std::vector<std::size_t> order(set.scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return set.scores[a] < set.scores[b]; });

  // Walk groups of equal score in ascending order. Each positive earns two
  // half-units per lower-scored negative and one per tied negative.
  std::uint64_t half_units = 0;
  std::uint64_t negatives_below = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    std::uint64_t group_pos = 0, group_neg = 0;
    while (j < order.size() && set.scores[order[j]] == set.scores[order[i]]) {
      (set.labels[order[j]] == 1 ? group_pos : group_neg) += 1;
      ++j;
    }
    half_units += group_pos * (2 * negatives_below + group_neg);
    negatives_below += group_neg;
    i = j;
  }
  return static_cast<double>(half_units) / (2.0 * static_cast<double>(pos) * static_cast<double>(neg));
}

namespace {

template <typename Fn>
void for_each_batch(const Dataset& data, std::size_t batch_size, Fn fn) {
  if (data.examples.empty()) throw ValidationError("evaluate: empty dataset");
  if (batch_size == 0) throw ConfigError("evaluate: batch size must be positive");
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    const auto end = std::min(data.size(), start + batch_size);
    std::vector<std::size_t> idx(end - start);
    std::iota(idx.begin(), idx.end(), start);
    fn(idx);
  }
}

}  // namespace

ScoredSet evaluate(const ModelParams& params, const Dataset& data, std::size_t batch_size) {
  ScoredSet out;
  out.scores.reserve(data.size());
  out.labels.reserve(data.size());
  for_each_batch(data, batch_size, [&](const std::vector<std::size_t>& idx) {
    Graph g = Graph::inference();
    auto probs = classify(g, params, extract(g, params, stack_images(data, idx)));
    for (std::size_t i = 0; i < idx.size(); ++i) {
      out.scores.push_back(probs.data()[i]);
      out.labels.push_back(data.examples[idx[i]].label);
    }
  });
  return out;
}

double discriminator_accuracy(const ModelParams& params, const Dataset& data,
                              std::size_t batch_size) {
  if (!params.discriminator) throw ConfigError("discriminator_accuracy: model has no discriminator");
  const auto s = params.discriminator->sources();
  std::size_t correct = 0;
  for_each_batch(data, batch_size, [&](const std::vector<std::size_t>& idx) {
    Graph g = Graph::inference();
    auto scores = discriminate(g, params, extract(g, params, stack_images(data, idx)));
    auto d = scores.data();
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const auto row = d.subspan(i * s, s);
      const auto best = static_cast<std::size_t>(
          std::distance(row.begin(), std::max_element(row.begin(), row.end())));
      if (best == data.examples[idx[i]].source) ++correct;
    }
  });
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json folds_json = nlohmann::json::array();
  for (const auto& f : folds) {
    folds_json.push_back({{"held_out", f.held_out},
                          {"mode", f.mode},
                          {"auc_in_source", f.auc_in_source},
                          {"auc_out_of_source", f.auc_out_of_source},
                          {"gap", f.gap()}});
  }
  return {{"folds", folds_json}};
}

EvalReport EvalReport::from_json(const nlohmann::json& j) {
  EvalReport r;
  for (const auto& f : j.at("folds")) {
    r.folds.push_back({f.at("held_out").get<std::string>(), f.at("mode").get<std::string>(),
                       f.at("auc_in_source").get<double>(), f.at("auc_out_of_source").get<double>()});
  }
  return r;
}

std::string EvalReport::to_table() const {
  std::vector<std::string> rows, modes;
  std::map<std::pair<std::string, std::string>, const FoldResult*> cell;
  for (const auto& f : folds) {
    if (std::find(rows.begin(), rows.end(), f.held_out) == rows.end()) rows.push_back(f.held_out);
    if (std::find(modes.begin(), modes.end(), f.mode) == modes.end()) modes.push_back(f.mode);
    cell[{f.held_out, f.mode}] = &f;
  }
  std::stable_partition(modes.begin(), modes.end(), [](const std::string& m) { return m == "baseline"; });

  std::size_t first_width = std::string("Leave out").size();
  for (const auto& r : rows) first_width = std::max(first_width, r.size());
  constexpr int kCol = 10;
  const int mode_width = 2 * kCol + 3;

  std::ostringstream os;
  os << std::left << std::setw(static_cast<int>(first_width)) << "" ;
  for (const auto& m : modes) os << " | " << std::setw(mode_width) << m;
  os << '\n' << std::setw(static_cast<int>(first_width)) << "Leave out";
  for (std::size_t i = 0; i < modes.size(); ++i) {
    os << " | " << std::setw(kCol) << "in-source" << " | " << std::setw(kCol) << "out-source";
  }
  os << '\n' << std::string(first_width, '-');
  for (std::size_t i = 0; i < modes.size(); ++i) os << "-+-" << std::string(mode_width, '-');
  os << '\n';
  os << std::fixed << std::setprecision(2);
  for (const auto& r : rows) {
    os << std::setw(static_cast<int>(first_width)) << r;
    for (const auto& m : modes) {
      auto it = cell.find({r, m});
      if (it == cell.end()) {
        os << " | " << std::setw(kCol) << "-" << " | " << std::setw(kCol) << "-";
      } else {
        os << " | " << std::setw(kCol) << it->second->auc_in_source << " | " << std::setw(kCol)
           << it->second->auc_out_of_source;
      }
    }
    os << '\n';
  }
  return os.str();
}

}  // namespace xinv
