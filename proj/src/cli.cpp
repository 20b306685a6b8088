#include "rsnet/cli.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>

#include <CLI11.hpp>

#include "rsnet/analysis.hpp"
#include "rsnet/checkpoint.hpp"
#include "rsnet/config.hpp"
#include "rsnet/rng.hpp"
#include "rsnet/trainer.hpp"

namespace rsn {

namespace {

namespace fs = std::filesystem;

/// One invocation owns its output directory: a .lock file taken with O_EXCL,
/// removed on scope exit.
class DirLock {
 public:
  explicit DirLock(const fs::path& dir) : path_(dir / ".lock") {
    const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd < 0)
      throw std::runtime_error("output directory '" + dir.string() +
                               "' is locked by another invocation (remove " + path_.string() +
                               " if stale)");
    ::close(fd);
  }
  ~DirLock() { ::unlink(path_.c_str()); }
  DirLock(const DirLock&) = delete;
  DirLock& operator=(const DirLock&) = delete;

 private:
  fs::path path_;
};

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream os(path, std::ios::trunc | std::ios::binary);
  if (!os) throw std::runtime_error("cannot write '" + path.string() + "'");
  os << content;
  if (!os.flush()) throw std::runtime_error("failed writing '" + path.string() + "'");
}

std::map<std::string, std::string> gather_config(const std::string& config_path,
                                                 const std::vector<std::string>& sets,
                                                 long long seed) {
  std::map<std::string, std::string> kv;
  if (!config_path.empty()) kv = read_config_file(config_path);
  for (const std::string& s : sets) apply_override(kv, s);
  if (seed >= 0) kv["seed"] = std::to_string(seed);
  return kv;
}

std::unique_ptr<Dataset> open_dataset(const RunConfig& cfg, bool validation) {
  const std::string& spec =
      validation && !cfg.val_dataset.empty() ? cfg.val_dataset : cfg.dataset;
  if (spec == "synthetic") {
    const std::uint64_t tag = validation ? 0x76616cu : 0x747261u;
    return std::make_unique<SyntheticTextureDataset>(validation ? cfg.val_count : cfg.train_count,
                                                     cfg.num_classes, cfg.source_side,
                                                     Rng::mix(cfg.train.seed, tag));
  }
  std::unique_ptr<Dataset> ds;
  if (spec.rfind("folder:", 0) == 0) ds = std::make_unique<FolderDataset>(spec.substr(7));
  else if (spec.rfind("index:", 0) == 0) ds = std::make_unique<IndexDataset>(spec.substr(6));
  else throw ConfigError("dataset spec '" + spec + "' not understood");
  if (ds->num_classes() > cfg.num_classes)
    throw ConfigError("dataset holds " + std::to_string(ds->num_classes()) +
                      " classes but num_classes=" + std::to_string(cfg.num_classes));
  return ds;
}

std::string bank_csv(const SwitchableClassifier& model, const BatchNormBank& bank) {
  std::string out = "# per-layer channel means of one BN bank (resolution " +
                    std::to_string(bank.bound_resolution) + ")\n";
  out += "layer,mean_gamma,mean_beta,mean_mu,mean_sigma\n";
  for (std::size_t l = 0; l < bank.layers.size(); ++l) {
    const BnLayerParams& p = bank.layers[l];
    double g = 0, b = 0, mu = 0, sigma = 0;
    const double n = p.channels();
    for (int c = 0; c < p.channels(); ++c) {
      g += p.gamma[static_cast<std::size_t>(c)] / n;
      b += p.beta[static_cast<std::size_t>(c)] / n;
      mu += p.running_mean[static_cast<std::size_t>(c)] / n;
      sigma += std::sqrt(static_cast<double>(p.running_var[static_cast<std::size_t>(c)])) / n;
    }
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%s,%.9g,%.9g,%.9g,%.9g\n", model.conv_specs[l].name.c_str(), g,
                  b, mu, sigma);
    out += buf;
  }
  return out;
}

int run_train(const std::string& config_path, const std::vector<std::string>& sets, long long seed,
              std::string out_dir) {
  const RunConfig cfg = make_run_config(gather_config(config_path, sets, seed));
  if (out_dir.empty()) out_dir = "runs/" + cfg.name;
  const fs::path out(out_dir);
  fs::create_directories(out / "config");
  fs::create_directories(out / "checkpoints");
  fs::create_directories(out / "metrics");
  fs::create_directories(out / "reports");
  DirLock lock(out);

  write_file(out / "config" / "config.txt", config_snapshot(cfg));
  const std::unique_ptr<Dataset> train_set = open_dataset(cfg, false);
  const std::unique_ptr<Dataset> val_set = open_dataset(cfg, true);
  SwitchableClassifier model = build_model(cfg.arch, cfg.profile(), cfg.num_classes, cfg.train.seed);

  const TrainResult result =
      train(model, *train_set, *val_set, cfg.train, (out / "metrics" / "metrics.csv").string(),
            (out / "checkpoints").string());
  write_file(out / "reports" / "alpha.csv", alpha_csv(report_alpha(model)));

  const EpochMetrics& last = result.epochs.back();
  std::cout << "trained " << cfg.train.epochs << " epochs (" << mode_name(cfg.train.mode) << ")\n";
  for (int i = 0; i < model.profile.size(); ++i)
    std::cout << "top-1 @" << model.profile.at(i) << ": " << last.accuracy[static_cast<std::size_t>(i)]
              << "%\n";
  std::cout << "artifacts in " << out.string() << "\n";
  return 0;
}

int run_eval(const std::string& config_path, const std::vector<std::string>& sets, long long seed,
             const std::string& checkpoint, const std::vector<int>& resolutions,
             std::string out_dir) {
  if (checkpoint.empty()) throw ConfigError("eval needs --checkpoint");
  if (resolutions.empty()) throw ConfigError("eval needs a nonempty --resolutions list");
  const RunConfig cfg = make_run_config(gather_config(config_path, sets, seed));
  SwitchableClassifier model = load_checkpoint(checkpoint);
  const std::unique_ptr<Dataset> eval_set = open_dataset(cfg, true);

  std::string csv = "# per-resolution evaluation of " + checkpoint + "\n";
  csv += "resolution,top1,top5,madds\n";
  std::cout << "resolution  top-1   top-5   MAdds\n";
  for (int r : resolutions) {
    const EvalResult res = evaluate(model, *eval_set, r, cfg.train.normalization, nullptr,
                                    cfg.train.eval_batch);
    const MAddsReport madds = count_madds(model.arch, r, model.num_classes);
    char line[160];
    std::snprintf(line, sizeof(line), "%d,%.2f,%.2f,%llu\n", r, res.top1, res.top5,
                  static_cast<unsigned long long>(madds.total));
    csv += line;
    std::snprintf(line, sizeof(line), "%9d  %5.2f   %5.2f   %llu\n", r, res.top1, res.top5,
                  static_cast<unsigned long long>(madds.total));
    std::cout << line;
  }
  if (out_dir.empty()) out_dir = ".";
  fs::create_directories(out_dir);
  DirLock lock(fs::path(out_dir));
  write_file(fs::path(out_dir) / "eval.csv", csv);
  return 0;
}

int run_analyze(const std::string& config_path, const std::vector<std::string>& sets,
                long long seed, const std::string& checkpoint, const std::string& kind,
                std::string out_dir) {
  if (checkpoint.empty()) throw ConfigError("analyze needs --checkpoint");
  const RunConfig cfg = make_run_config(gather_config(config_path, sets, seed));
  SwitchableClassifier model = load_checkpoint(checkpoint);
  if (out_dir.empty()) out_dir = ".";
  const fs::path out(out_dir);
  fs::create_directories(out);
  DirLock lock(out);

  if (kind == "alpha") {
    write_file(out / "alpha.csv", alpha_csv(report_alpha(model)));
  } else if (kind == "bn-summary") {
    write_file(out / "bn_summary.csv", bn_summary_csv(bn_summary(model)));
  } else if (kind == "disagreement") {
    const std::unique_ptr<Dataset> eval_set = open_dataset(cfg, true);
    std::vector<std::vector<int>> predictions;
    std::vector<int> labels;
    for (int i = 0; i < eval_set->size(); ++i) labels.push_back(eval_set->sample(i).label);
    for (int i = 0; i < model.profile.size(); ++i)
      predictions.push_back(evaluate(model, *eval_set, model.profile.at(i), cfg.train.normalization,
                                     nullptr, cfg.train.eval_batch)
                                .predictions);
    write_file(out / "disagreement.csv",
               disagreement_csv(disagreement_matrix(predictions, labels, model.profile.resolutions)));
  } else if (kind == "gap-cdf") {
    const std::unique_ptr<Dataset> eval_set = open_dataset(cfg, true);
    int r = cfg.cdf_resolution > 0 ? cfg.cdf_resolution : model.profile.max();
    const int index = model.profile.index_of(r);
    if (index < 0) throw ConfigError("cdf_resolution must be a training resolution");
    for (const char* tag : {"train", "test"}) {
      const ActivationCdf cdf =
          gap_activation_cdf(model, *eval_set, index, tag, cfg.train.augmentation,
                             cfg.train.normalization, cfg.train.seed);
      write_file(out / (std::string("gap_cdf_") + tag + ".csv"), activation_cdf_csv(cdf));
    }
  } else {
    throw ConfigError("unknown analysis kind '" + kind +
                      "' (valid: disagreement, alpha, gap-cdf, bn-summary)");
  }
  std::cout << "reports in " << out.string() << "\n";
  return 0;
}

int run_interpolate(const std::string& checkpoint, const std::vector<int>& resolutions,
                    std::string out_dir) {
  if (checkpoint.empty()) throw ConfigError("interpolate-bn needs --checkpoint");
  if (resolutions.empty()) throw ConfigError("interpolate-bn needs --resolutions");
  SwitchableClassifier model = load_checkpoint(checkpoint);
  if (out_dir.empty()) out_dir = ".";
  fs::create_directories(out_dir);
  DirLock lock(fs::path(out_dir));
  for (int r : resolutions) {
    const BatchNormBank bank = interpolate_bn_bank(model, r);
    write_file(fs::path(out_dir) / ("bn_interpolated_" + std::to_string(r) + ".csv"),
               bank_csv(model, bank));
  }
  std::cout << "wrote " << resolutions.size() << " interpolated bank report(s) in " << out_dir << "\n";
  return 0;
}

int run_count_madds(const std::string& config_path, const std::vector<std::string>& sets,
                    const std::vector<int>& resolutions, std::string out_dir) {
  const RunConfig cfg = make_run_config(gather_config(config_path, sets, -1));
  const std::vector<int> rs = resolutions.empty() ? cfg.resolutions : resolutions;
  const ArchDescriptor arch = lookup_arch(cfg.arch);
  std::string all;
  for (int r : rs) {
    const MAddsReport report = count_madds(arch, r, cfg.num_classes);
    all += madds_csv(report);
    std::cout << cfg.arch << " @" << r << ": " << report.total << " MAdds\n";
  }
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    DirLock lock(fs::path(out_dir));
    write_file(fs::path(out_dir) / "madds.csv", all);
  }
  return 0;
}

int run_export(const std::string& checkpoint, std::string out_dir) {
  if (checkpoint.empty()) throw ConfigError("export needs --checkpoint");
  SwitchableClassifier model = load_checkpoint(checkpoint);
  if (out_dir.empty()) out_dir = ".";
  fs::create_directories(out_dir);
  DirLock lock(fs::path(out_dir));
  const std::string stem = fs::path(checkpoint).filename().string();
  save_checkpoint(model, (fs::path(out_dir) / stem).string());
  std::cout << "re-serialized checkpoint at " << (fs::path(out_dir) / stem).string() << "\n";
  return 0;
}

}  // namespace

int cli_main(int argc, const char* const* argv) {
  CLI::App app{"training and inference toolkit for resolution-switchable classifiers"};
  app.require_subcommand(1);

  std::string config_path, out_dir, checkpoint, kind;
  std::vector<std::string> sets;
  std::vector<int> resolutions;
  long long seed = -1;

  auto add_common = [&](CLI::App* cmd, bool with_config) {
    if (with_config) {
      cmd->add_option("--config", config_path, "config file (key=value lines)");
      cmd->add_option("--set", sets, "override a config key, e.g. --set epochs=1")->take_all();
      cmd->add_option("--seed", seed, "override the config seed");
    }
    cmd->add_option("--out", out_dir, "output directory");
  };

  CLI::App* train_cmd = app.add_subcommand("train", "train a model per the config");
  add_common(train_cmd, true);

  CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint at given resolutions");
  add_common(eval_cmd, true);
  eval_cmd->add_option("--checkpoint", checkpoint, "checkpoint stem");
  eval_cmd->add_option("--resolutions", resolutions, "resolutions, e.g. --resolutions 32,24,16")
      ->delimiter(',');

  CLI::App* analyze_cmd = app.add_subcommand("analyze", "produce analysis reports");
  add_common(analyze_cmd, true);
  analyze_cmd->add_option("kind", kind, "disagreement | alpha | gap-cdf | bn-summary")->required();
  analyze_cmd->add_option("--checkpoint", checkpoint, "checkpoint stem");

  CLI::App* interp_cmd = app.add_subcommand("interpolate-bn", "report interpolated BN banks");
  add_common(interp_cmd, false);
  interp_cmd->add_option("--checkpoint", checkpoint, "checkpoint stem");
  interp_cmd->add_option("--resolutions", resolutions, "target resolutions")->delimiter(',');

  CLI::App* madds_cmd = app.add_subcommand("count-madds", "multiply-add accounting");
  add_common(madds_cmd, true);
  madds_cmd->add_option("--resolutions", resolutions, "resolutions (default: config profile)")
      ->delimiter(',');

  CLI::App* export_cmd = app.add_subcommand("export", "re-serialize a checkpoint");
  add_common(export_cmd, false);
  export_cmd->add_option("--checkpoint", checkpoint, "checkpoint stem");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    app.exit(e);
    return 2;
  }

  try {
    if (train_cmd->parsed()) return run_train(config_path, sets, seed, out_dir);
    if (eval_cmd->parsed()) return run_eval(config_path, sets, seed, checkpoint, resolutions, out_dir);
    if (analyze_cmd->parsed()) return run_analyze(config_path, sets, seed, checkpoint, kind, out_dir);
    if (interp_cmd->parsed()) return run_interpolate(checkpoint, resolutions, out_dir);
    if (madds_cmd->parsed()) return run_count_madds(config_path, sets, resolutions, out_dir);
    if (export_cmd->parsed()) return run_export(checkpoint, out_dir);
    std::cerr << "no subcommand given\n";
    return 2;
  } catch (const DivergenceError& e) {
    std::cerr << "training diverged: " << e.what() << "\n";
    return 3;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::out_of_range& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  }
}

}  // namespace rsn
