#include "xinv/training/training.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <fstream>
#include <mutex>
#include <thread>

#include <spdlog/spdlog.h>

#include "xinv/autodiff/ops.hpp"
#include "xinv/error.hpp"

namespace xinv {

std::string_view mode_name(Mode mode) {
  switch (mode) {
    case Mode::Baseline: return "baseline";
    case Mode::GradReversal: return "grad_reversal";
    case Mode::Alternating: return "alternating";
  }
  return "unknown";
}

Mode parse_mode(std::string_view name) {
  for (auto m : {Mode::Baseline, Mode::GradReversal, Mode::Alternating}) {
    if (mode_name(m) == name) return m;
  }
  throw ConfigError("unknown mode '" + std::string(name) +
                    "' (expected baseline, grad_reversal or alternating)");
}

void TrainConfig::validate() const {
  if (!std::isfinite(lambda) || lambda < 0) throw ConfigError("lambda must be finite and >= 0");
  if (d_steps < 1) throw ConfigError("d_steps must be >= 1");
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  if (!(learning_rate > 0)) throw ConfigError("learning rate must be > 0");
  if (!(momentum >= 0 && momentum < 1)) throw ConfigError("momentum must lie in [0, 1)");
}

nlohmann::json TrainConfig::to_json() const {
  return {{"lambda", lambda},
          {"mode", mode_name(mode)},
          {"d_steps", d_steps},
          {"epochs", epochs},
          {"batch_size", batch_size},
          {"lr", learning_rate},
          {"momentum", momentum},
          {"seed", seed},
          {"held_out", held_out}};
}

nlohmann::json EpochStats::to_json() const {
  nlohmann::json j = nlohmann::json::object();
  j["epoch"] = epoch;
  j["L_p"] = loss_p;
  j["L_s"] = loss_s ? nlohmann::json(*loss_s) : nlohmann::json(nullptr);
  j["disc_acc"] = disc_acc ? nlohmann::json(*disc_acc) : nlohmann::json(nullptr);
  j["train_acc"] = train_acc;
  return j;
}

std::string RunRecord::to_jsonl() const {
  std::string out;
  for (const auto& e : epochs) out += e.to_json().dump() + "\n";
  return out;
}

MiniBatch make_batch(const Dataset& data, const Batch& indices) {
  MiniBatch b;
  b.images = stack_images(data, indices);
  b.labels = Tensor({indices.size(), 1});
  auto y = b.labels.data();
  b.source_index.reserve(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const auto& ex = data.examples[indices[i]];
    y[i] = ex.label;
    b.source_index.push_back(ex.source);
  }
  b.sources = one_hot(b.source_index, data.source_count());
  return b;
}

namespace {

std::vector<NamedTensor> concat(std::vector<NamedTensor> a, const std::vector<NamedTensor>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

std::size_t count_disease_correct(const Tensor& probs, const Tensor& labels) {
  std::size_t correct = 0;
  auto p = probs.data();
  auto y = labels.data();
  for (std::size_t i = 0; i < p.size(); ++i) {
    if ((p[i] > 0.5 ? 1.0 : 0.0) == y[i]) ++correct;
  }
  return correct;
}

std::size_t count_source_correct(const Tensor& scores, const std::vector<std::size_t>& truth) {
  const auto s = scores.dim(1);
  auto d = scores.data();
  std::size_t correct = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const auto row = d.subspan(i * s, s);
    const auto best = static_cast<std::size_t>(
        std::distance(row.begin(), std::max_element(row.begin(), row.end())));
    if (best == truth[i]) ++correct;
  }
  return correct;
}

ModelParams initial_params(const TrainConfig& config, std::size_t sources) {
  config.validate();
  if (config.mode != Mode::Baseline && sources < 2) {
    throw ConfigError("adversarial mode '" + std::string(mode_name(config.mode)) +
                      "' needs at least 2 training sources, got " + std::to_string(sources));
  }
  if (sources == 0) throw ConfigError("no training sources");
  return ModelParams::init(config.seed, config.mode == Mode::Baseline ? 0 : sources);
}

}  // namespace

Trainer::Trainer(TrainConfig config, std::size_t sources)
    : config_(std::move(config)),
      params_(initial_params(config_, sources)),
      optimizer_({config_.learning_rate, config_.momentum}) {}

Trainer::Trainer(TrainConfig config, ModelParams initial)
    : config_(std::move(config)),
      params_(std::move(initial)),
      optimizer_({config_.learning_rate, config_.momentum}) {
  config_.validate();
  if (config_.mode != Mode::Baseline && !params_.discriminator) {
    throw ConfigError("adversarial training needs a discriminator");
  }
}

StepStats Trainer::step(const MiniBatch& batch) {
  switch (config_.mode) {
    case Mode::Baseline: return step_baseline(batch);
    case Mode::GradReversal: return step_grad_reversal(batch);
    case Mode::Alternating: return step_alternating(batch);
  }
  throw ConfigError("unknown training mode");
}

StepStats Trainer::step_baseline(const MiniBatch& batch) {
  Graph g;
  auto probs = classify(g, params_, extract(g, params_, batch.images));
  auto loss_p = bce_loss(g, probs, batch.labels);
  g.backward(loss_p);

  const auto active = concat(params_.extractor_params(), params_.classifier_params());
  optimizer_.step(active);
  zero_grads(active);

  StepStats stats;
  stats.loss_p = loss_p.item();
  stats.disease_correct = count_disease_correct(probs, batch.labels);
  stats.examples = batch.labels.dim(0);
  return stats;
}

StepStats Trainer::step_grad_reversal(const MiniBatch& batch) {
  Graph g;
  auto features = extract(g, params_, batch.images);
  auto probs = classify(g, params_, features);
  auto loss_p = bce_loss(g, probs, batch.labels);
  auto scores = discriminate(g, params_, ops::gradient_reversal(g, features, config_.lambda));
  auto loss_s = source_ce_loss(g, scores, batch.sources);
  // The reversal node supplies the -lambda on the extractor path, so a plain
  // sum trains θ_d to minimise L_s and θ_e to minimise L_p - lambda L_s.
  g.backward(ops::add(g, loss_p, loss_s));

  const auto all = params_.named();
  optimizer_.step(all);
  zero_grads(all);

  StepStats stats;
  stats.loss_p = loss_p.item();
  stats.loss_s = loss_s.item();
  stats.disease_correct = count_disease_correct(probs, batch.labels);
  stats.source_correct = count_source_correct(scores, batch.source_index);
  stats.examples = batch.labels.dim(0);
  return stats;
}

double Trainer::discriminator_update(const MiniBatch& batch, StepStats* stats) {
  Graph frozen = Graph::inference();
  auto features = extract(frozen, params_, batch.images);

  Graph g;
  auto scores = discriminate(g, params_, features);
  auto loss_s = source_ce_loss(g, scores, batch.sources);
  g.backward(loss_s);
  const auto active = params_.discriminator_params();
  optimizer_.step(active);
  zero_grads(active);
  if (stats) stats->source_correct = count_source_correct(scores, batch.source_index);
  return loss_s.item();
}

void Trainer::extractor_update(const MiniBatch& batch, StepStats& stats) {
  Graph g;
  auto features = extract(g, params_, batch.images);
  auto probs = classify(g, params_, features);
  auto loss_p = bce_loss(g, probs, batch.labels);
  auto scores = discriminate(g, params_, features);
  auto loss_s = source_ce_loss(g, scores, batch.sources);
  auto objectives = minmax_objectives(g, loss_p, loss_s, config_.lambda);
  g.backward(objectives.extractor);

  const auto active = concat(params_.extractor_params(), params_.classifier_params());
  optimizer_.step(active);
  zero_grads(params_.named());

  stats.loss_p = loss_p.item();
  stats.loss_s = loss_s.item();
  stats.disease_correct = count_disease_correct(probs, batch.labels);
  stats.source_correct = count_source_correct(scores, batch.source_index);
}

StepStats Trainer::step_alternating(const MiniBatch& batch) {
  StepStats stats;
  stats.examples = batch.labels.dim(0);
  if (config_.defer_discriminator) {
    extractor_update(batch, stats);
    for (int k = 0; k < config_.d_steps; ++k) discriminator_update(batch, nullptr);
  } else {
    for (int k = 0; k < config_.d_steps; ++k) discriminator_update(batch, nullptr);
    extractor_update(batch, stats);
  }
  return stats;
}

TrainResult train(const TrainConfig& config, const Dataset& data, const EpochCallback& on_epoch) {
  if (data.examples.empty()) throw ConfigError("train: empty training set");
  Trainer trainer(config, data.source_count());

  std::vector<std::size_t> record_sources;
  record_sources.reserve(data.size());
  for (const auto& ex : data.examples) record_sources.push_back(ex.source);
  // Independent of the initialisation stream.
  BalancedStream stream(std::move(record_sources), data.source_count(), config.batch_size,
                        config.seed + 0x5bd1e995ULL);

  RunRecord record;
  record.config = config;
  const bool adversarial = config.mode != Mode::Baseline;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    double sum_p = 0, sum_s = 0;
    std::size_t seen = 0, disease_correct = 0, source_correct = 0;
    for (const auto& indices : stream.next_epoch()) {
      const auto stats = trainer.step(make_batch(data, indices));
      const auto n = static_cast<double>(stats.examples);
      sum_p += stats.loss_p * n;
      sum_s += stats.loss_s * n;
      seen += stats.examples;
      disease_correct += stats.disease_correct;
      source_correct += stats.source_correct;
    }
    EpochStats e;
    e.epoch = epoch;
    e.loss_p = sum_p / static_cast<double>(seen);
    e.train_acc = static_cast<double>(disease_correct) / static_cast<double>(seen);
    if (adversarial) {
      e.loss_s = sum_s / static_cast<double>(seen);
      e.disc_acc = static_cast<double>(source_correct) / static_cast<double>(seen);
    }
    spdlog::debug("[{}] epoch {} L_p={:.4f} L_s={:.4f} disc_acc={:.3f} train_acc={:.3f}",
                  mode_name(config.mode), epoch, e.loss_p, e.loss_s.value_or(0.0),
                  e.disc_acc.value_or(0.0), e.train_acc);
    record.epochs.push_back(e);
    if (on_epoch) on_epoch(e);
  }
  return {trainer.params().clone(), std::move(record)};
}

namespace {

struct FoldTask {
  std::size_t fold;  // index of the held-out source in the source list
  std::string held_out;
  Mode mode;
};

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace

LooResult run_leave_one_out(const LooConfig& config, const Manifest& train_manifest,
                            const Manifest& test_manifest) {
  config.train.validate();
  const auto& all_sources = train_manifest.sources();
  if (all_sources.size() < 3 && config.train.mode != Mode::Baseline) {
    throw ConfigError("leave-one-out needs at least 3 sources, got " +
                      std::to_string(all_sources.size()));
  }
  if (all_sources.size() < 2) throw ConfigError("leave-one-out needs at least 2 sources");
  for (const auto& s : all_sources) {
    if (!test_manifest.source_index(s)) throw ConfigError("missing test split for source '" + s + "'");
  }

  const auto held_out = config.held_out.empty() ? all_sources : config.held_out;
  std::vector<FoldTask> tasks;
  for (const auto& h : held_out) {
    const auto idx = train_manifest.source_index(h);
    if (!idx) throw ConfigError("held-out source '" + h + "' not in the training manifest");
    if (config.include_baseline && config.train.mode != Mode::Baseline) {
      tasks.push_back({*idx, h, Mode::Baseline});
    }
    tasks.push_back({*idx, h, config.train.mode});
  }

  spdlog::info("decoding {} training and {} test images", train_manifest.size(), test_manifest.size());
  const Dataset train_all = load_dataset(train_manifest);
  const Dataset test_all = load_dataset(test_manifest);

  auto training_sources = [&](const std::string& h) {
    std::vector<std::string> names;
    for (const auto& s : all_sources)
      if (s != h) names.push_back(s);
    return names;
  };

  std::vector<std::optional<TrainResult>> results(tasks.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;

  auto worker = [&] {
    for (auto i = next++; i < tasks.size(); i = next++) {
      try {
        const auto& task = tasks[i];
        TrainConfig cfg = config.train;
        cfg.mode = task.mode;
        cfg.held_out = task.held_out;
        spdlog::info("fold {} (held out {}): training {}", task.fold, task.held_out, mode_name(task.mode));
        results[i] = train(cfg, subset_sources(train_all, training_sources(task.held_out)));
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };

  const auto jobs = static_cast<std::size_t>(std::max(1, config.jobs));
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t j = 0; j < std::min(jobs, tasks.size()); ++j) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);

  LooResult out;
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    const auto& task = tasks[i];
    auto& result = *results[i];
    const auto in_source = subset_sources(test_all, training_sources(task.held_out));
    const auto out_source = subset_sources(test_all, {task.held_out});
    FoldResult row;
    row.held_out = task.held_out;
    row.mode = std::string(mode_name(task.mode));
    row.auc_in_source = auc_roc(evaluate(result.params, in_source));
    row.auc_out_of_source = auc_roc(evaluate(result.params, out_source));
    out.report.folds.push_back(row);

    if (config.out_dir) {
      const bool proposed = task.mode == config.train.mode;
      const auto stem = "fold" + std::to_string(task.fold) + (proposed ? "" : ".baseline");
      result.record.checkpoint = *config.out_dir / (stem + ".ckpt");
      save_checkpoint(result.record.checkpoint, result.params);
      write_text(*config.out_dir / (stem + ".jsonl"), result.record.to_jsonl());
    }
    out.runs.push_back({task.held_out, task.mode, std::move(result)});
  }
  return out;
}

}  // namespace xinv
