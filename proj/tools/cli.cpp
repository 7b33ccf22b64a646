#include "cli.hpp"

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "xinv/attribution/grad_cam.hpp"
#include "xinv/datapipe/pgm.hpp"
#include "xinv/datapipe/synth.hpp"
#include "xinv/error.hpp"
#include "xinv/eval/eval.hpp"
#include "xinv/training/training.hpp"

namespace xinv::cli {

namespace {

namespace fs = std::filesystem;

void configure_logging() {
  static bool done = false;
  if (!done) {
    auto logger = spdlog::stderr_color_mt("xinv");
    spdlog::set_default_logger(logger);
    done = true;
  }
  spdlog::set_pattern("[%l] %v");
  const char* env = std::getenv("XINV_LOG");
  const std::string name = env ? env : "info";
  auto level = spdlog::level::from_str(name);
  // from_str maps unknown names to off
  if (level == spdlog::level::off && name != "off") level = spdlog::level::info;
  spdlog::set_level(level);
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

// The single line in an output directory that is allowed to vary between runs.
void write_meta(const fs::path& dir, const std::string& command) {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char stamp[32];
  std::strftime(stamp, sizeof(stamp), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
  write_file(dir / "meta.txt", command + " finished_at=" + stamp + "\n");
}

std::map<std::string, std::string> read_key_values(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::map<std::string, std::string> kv;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": expected key=value");
    }
    auto strip = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    kv[strip(line.substr(0, eq))] = strip(line.substr(eq + 1));
  }
  return kv;
}

/// Training flags shared by `train` and `loo`.
struct TrainFlags {
  std::string config_file;
  std::string data;
  std::string out;
  std::string mode = "grad_reversal";
  double lambda = 1.0;
  int d_steps = 1;
  int epochs = 30;
  std::size_t batch = 64;
  double lr = 0.05;
  double momentum = 0.9;
  std::uint64_t seed = 7;
  int jobs = 1;
  std::vector<std::string> held_out;

  std::map<std::string, CLI::Option*> options;

  void add_to(CLI::App& app, bool with_jobs) {
    app.add_option("--config", config_file, "key=value training config file")->check(CLI::ExistingFile);
    app.add_option("--data", data, "directory holding train.csv and test.csv")->required();
    app.add_option("--out", out, "output directory")->required();
    options["mode"] = app.add_option("--mode", mode, "baseline | grad_reversal | alternating")
                          ->check(CLI::IsMember({"baseline", "grad_reversal", "alternating"}));
    options["lambda"] = app.add_option("--lambda", lambda, "adversarial weight");
    options["d_steps"] = app.add_option("--d-steps", d_steps, "discriminator updates per extractor update");
    options["epochs"] = app.add_option("--epochs", epochs);
    options["batch"] = app.add_option("--batch", batch);
    options["lr"] = app.add_option("--lr", lr);
    options["momentum"] = app.add_option("--momentum", momentum);
    options["seed"] = app.add_option("--seed", seed);
    options["held_out"] = app.add_option("--held-out", held_out, "source(s) to leave out")->delimiter(',');
    if (with_jobs) options["jobs"] = app.add_option("--jobs", jobs, "parallel folds");
  }

  bool given(const std::string& key) const {
    auto it = options.find(key);
    return it != options.end() && it->second->count() > 0;
  }

  /// Flags > config file > defaults.
  TrainConfig resolve() {
    if (!config_file.empty()) {
      for (const auto& [key, value] : read_key_values(config_file)) {
        if (given(key)) continue;
        try {
          if (key == "mode") mode = value;
          else if (key == "lambda") lambda = std::stod(value);
          else if (key == "d_steps") d_steps = std::stoi(value);
          else if (key == "epochs") epochs = std::stoi(value);
          else if (key == "batch") batch = std::stoul(value);
          else if (key == "lr") lr = std::stod(value);
          else if (key == "momentum") momentum = std::stod(value);
          else if (key == "seed") seed = std::stoull(value);
          else if (key == "jobs") jobs = std::stoi(value);
          else if (key == "held_out") {
            held_out.clear();
            std::stringstream ss(value);
            std::string item;
            while (std::getline(ss, item, ',')) held_out.push_back(item);
          } else {
            throw ConfigError(config_file + ": unknown key '" + key + "'");
          }
        } catch (const std::logic_error&) {
          throw ConfigError(config_file + ": bad value for '" + key + "': " + value);
        }
      }
    }
    TrainConfig c;
    c.mode = parse_mode(mode);
    c.lambda = lambda;
    c.d_steps = d_steps;
    c.epochs = epochs;
    c.batch_size = batch;
    c.learning_rate = lr;
    c.momentum = momentum;
    c.seed = seed;
    c.validate();
    return c;
  }
};

int cmd_synth(const std::string& spec_file, const std::string& out, std::optional<std::uint64_t> seed) {
  SynthSpec spec = spec_file.empty() ? SynthSpec{} : load_synth_spec(spec_file);
  if (seed) spec.seed = *seed;
  spec.validate();
  spdlog::info("generating {} sources x {} examples per split into {}", spec.sources, spec.n, out);
  synth_generate(spec, out);
  return kExitOk;
}

int cmd_train(TrainFlags& flags) {
  auto config = flags.resolve();
  const fs::path data(flags.data), out(flags.out);
  ensure_dir(out);
  auto manifest = load_manifest(data / "train.csv");
  if (!flags.held_out.empty()) {
    manifest = manifest.filter_sources(flags.held_out, false);
    if (manifest.empty()) throw ConfigError("no training data left after --held-out");
    config.held_out = flags.held_out.front();
  }
  nlohmann::json echo = config.to_json();
  echo["data"] = data.generic_string();
  write_file(out / "config.json", echo.dump(2) + "\n");

  const auto dataset = load_dataset(manifest);
  auto result = train(config, dataset);
  result.record.checkpoint = out / "model.ckpt";
  save_checkpoint(result.record.checkpoint, result.params);
  write_file(out / "run.jsonl", result.record.to_jsonl());
  write_meta(out, "train");
  spdlog::info("wrote {}", result.record.checkpoint.string());
  return kExitOk;
}

int cmd_eval(const std::string& ckpt, const std::string& data_dir,
             const std::vector<std::string>& held_out, const std::string& out) {
  const auto params = load_checkpoint(ckpt);
  const auto test = load_manifest(fs::path(data_dir) / "test.csv");
  const auto data = load_dataset(test);

  EvalReport report;
  FoldResult row;
  row.held_out = held_out.empty() ? "-" : held_out.front();
  row.mode = params.discriminator ? "proposed" : "baseline";
  std::vector<std::string> in_names;
  for (const auto& s : data.sources)
    if (std::find(held_out.begin(), held_out.end(), s) == held_out.end()) in_names.push_back(s);
  if (in_names.empty()) throw ConfigError("every test source is held out");
  row.auc_in_source = auc_roc(evaluate(params, subset_sources(data, in_names)));
  row.auc_out_of_source =
      held_out.empty() ? row.auc_in_source : auc_roc(evaluate(params, subset_sources(data, held_out)));
  report.folds.push_back(row);

  std::cout << report.to_table();
  if (!out.empty()) write_file(out, report.to_json().dump(2) + "\n");
  return kExitOk;
}

int cmd_loo(TrainFlags& flags) {
  LooConfig config;
  config.train = flags.resolve();
  config.held_out = flags.held_out;
  config.jobs = flags.jobs;
  const fs::path data(flags.data), out(flags.out);
  ensure_dir(out);
  config.out_dir = out;

  nlohmann::json echo = config.train.to_json();
  echo.erase("held_out");
  echo["held_out"] = config.held_out;
  echo["data"] = data.generic_string();
  echo["jobs"] = config.jobs;
  write_file(out / "config.json", echo.dump(2) + "\n");

  const auto train_manifest = load_manifest(data / "train.csv");
  const auto test_manifest = load_manifest(data / "test.csv");
  const auto result = run_leave_one_out(config, train_manifest, test_manifest);

  write_file(out / "report.json", result.report.to_json().dump(2) + "\n");
  write_file(out / "report.txt", result.report.to_table());
  write_meta(out, "loo");
  std::cout << result.report.to_table();
  return kExitOk;
}

int cmd_gradcam(const std::string& ckpt, const std::string& image_path, const std::string& out) {
  const auto params = load_checkpoint(ckpt);
  const auto image = decode_image(image_path);
  const auto map = grad_cam(params, image);
  const fs::path out_path(out);
  if (out_path.has_parent_path()) ensure_dir(out_path.parent_path());
  write_pgm(out_path, heatmap_tensor(map));
  auto sibling = [&](const std::string& suffix) {
    return out_path.parent_path() / (out_path.stem().string() + suffix);
  };
  write_pgm(sibling(".composite.pgm"), composite_image(image, map));
  write_file(sibling(".csv"), heatmap_csv(map));
  spdlog::info("wrote {}", out_path.string());
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args) {
  configure_logging();

  CLI::App app{"Source-invariant representation learning toolkit", "xinv"};
  app.require_subcommand(1);

  auto* synth = app.add_subcommand("synth", "generate a synthetic multi-source dataset");
  std::string spec_file, synth_out;
  std::uint64_t synth_seed = 0;
  synth->add_option("--spec", spec_file, "key=value generator spec")->check(CLI::ExistingFile);
  synth->add_option("--out", synth_out, "output directory")->required();
  auto* synth_seed_opt = synth->add_option("--seed", synth_seed, "overrides the spec seed");

  auto* train_cmd = app.add_subcommand("train", "train one model");
  TrainFlags train_flags;
  train_flags.add_to(*train_cmd, false);

  auto* eval_cmd = app.add_subcommand("eval", "score a checkpoint on the test split");
  std::string eval_ckpt, eval_data, eval_out;
  std::vector<std::string> eval_held_out;
  eval_cmd->add_option("--ckpt", eval_ckpt)->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--data", eval_data)->required();
  eval_cmd->add_option("--held-out", eval_held_out)->delimiter(',');
  eval_cmd->add_option("--out", eval_out, "JSON report path");

  auto* loo = app.add_subcommand("loo", "leave-one-source-out experiment");
  TrainFlags loo_flags;
  loo_flags.add_to(*loo, true);

  auto* cam = app.add_subcommand("gradcam", "Grad-CAM heatmap for one image");
  std::string cam_ckpt, cam_image, cam_out;
  cam->add_option("--ckpt", cam_ckpt)->required()->check(CLI::ExistingFile);
  cam->add_option("--image", cam_image)->required()->check(CLI::ExistingFile);
  cam->add_option("--out", cam_out, "heatmap PGM path")->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (synth->parsed()) {
      std::optional<std::uint64_t> seed;
      if (synth_seed_opt->count()) seed = synth_seed;
      return cmd_synth(spec_file, synth_out, seed);
    }
    if (train_cmd->parsed()) return cmd_train(train_flags);
    if (eval_cmd->parsed()) return cmd_eval(eval_ckpt, eval_data, eval_held_out, eval_out);
    if (loo->parsed()) return cmd_loo(loo_flags);
    if (cam->parsed()) return cmd_gradcam(cam_ckpt, cam_image, cam_out);
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace xinv::cli
