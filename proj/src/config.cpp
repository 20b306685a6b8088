#include "rsnet/config.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace rsn {

namespace {

const std::vector<std::string> kKeys = {
    "name", "arch", "resolutions", "num_classes", "dataset", "val_dataset", "train_count",
    "val_count", "source_side", "cdf_resolution", "epochs", "batch_size", "base_lr", "momentum",
    "weight_decay", "bn_momentum", "schedule", "milestones", "lr_factor", "mode", "distill_variant",
    "seed", "branches", "single_crop", "enable_cls", "enable_ens", "enable_dis", "area_lo",
    "area_hi", "aspect_lo", "aspect_hi", "hflip_probability", "norm_mean", "norm_std",
    "checkpoint_every", "eval_batch",
};

[[noreturn]] void bad_value(const std::string& key, const std::string& value) {
  throw ConfigError("invalid value '" + value + "' for config key '" + key + "'");
}

int to_int(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const int x = std::stoi(v, &pos);
    if (pos != v.size()) bad_value(key, v);
    return x;
  } catch (const ConfigError&) {
    throw;
  } catch (...) {
    bad_value(key, v);
  }
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double x = std::stod(v, &pos);
    if (pos != v.size()) bad_value(key, v);
    return x;
  } catch (const ConfigError&) {
    throw;
  } catch (...) {
    bad_value(key, v);
  }
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true") return true;
  if (v == "0" || v == "false") return false;
  bad_value(key, v);
}

std::vector<int> to_int_list(const std::string& key, const std::string& v) {
  std::vector<int> out;
  std::stringstream ss(v);
  std::string tok;
  while (std::getline(ss, tok, ',')) out.push_back(to_int(key, tok));
  if (out.empty()) bad_value(key, v);
  return out;
}

void to_float3(const std::string& key, const std::string& v, float out[3]) {
  std::stringstream ss(v);
  std::string tok;
  int i = 0;
  while (std::getline(ss, tok, ',')) {
    if (i >= 3) bad_value(key, v);
    out[i++] = static_cast<float>(to_double(key, tok));
  }
  if (i != 3) bad_value(key, v);
}

std::string fmt(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

std::string join_ints(const std::vector<int>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

TrainMode parse_mode(const std::string& v) {
  if (v == "parallel+mred") return TrainMode::kParallelMred;
  if (v == "parallel-only") return TrainMode::kParallelOnly;
  if (v == "individual") return TrainMode::kIndividual;
  if (v == "shared-bn") return TrainMode::kSharedBn;
  if (v == "multi-crop") return TrainMode::kMultiCrop;
  if (v == "single-resolution") return TrainMode::kSingleResolution;
  throw ConfigError("unknown mode '" + v +
                    "' (valid: parallel+mred, parallel-only, individual, shared-bn, multi-crop, "
                    "single-resolution)");
}

DistillVariant parse_variant(const std::string& v) {
  if (v == "full") return DistillVariant::kFull;
  if (v == "vanilla") return DistillVariant::kVanilla;
  if (v == "no-ensemble-teacher") return DistillVariant::kNoEnsembleTeacher;
  if (v == "highest-only") return DistillVariant::kHighestOnly;
  throw ConfigError("unknown distill_variant '" + v +
                    "' (valid: full, vanilla, no-ensemble-teacher, highest-only)");
}

}  // namespace

std::string mode_name(TrainMode mode) {
  switch (mode) {
    case TrainMode::kParallelMred: return "parallel+mred";
    case TrainMode::kParallelOnly: return "parallel-only";
    case TrainMode::kIndividual: return "individual";
    case TrainMode::kSharedBn: return "shared-bn";
    case TrainMode::kMultiCrop: return "multi-crop";
    case TrainMode::kSingleResolution: return "single-resolution";
  }
  return "?";
}

std::string variant_name(DistillVariant variant) {
  switch (variant) {
    case DistillVariant::kFull: return "full";
    case DistillVariant::kVanilla: return "vanilla";
    case DistillVariant::kNoEnsembleTeacher: return "no-ensemble-teacher";
    case DistillVariant::kHighestOnly: return "highest-only";
  }
  return "?";
}

const std::vector<std::string>& valid_config_keys() { return kKeys; }

std::map<std::string, std::string> read_config_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read config file '" + path + "'");
  std::map<std::string, std::string> kv;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) + " is not key=value: '" + line + "'");
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

void apply_override(std::map<std::string, std::string>& kv, const std::string& assignment) {
  const std::size_t eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ConfigError("override '" + assignment + "' is not key=value");
  kv[assignment.substr(0, eq)] = assignment.substr(eq + 1);
}

RunConfig make_run_config(const std::map<std::string, std::string>& kv) {
  for (const auto& [key, value] : kv) {
    (void)value;
    if (std::find(kKeys.begin(), kKeys.end(), key) == kKeys.end()) {
      std::string msg = "unknown config key '" + key + "'; valid keys:";
      for (const std::string& k : kKeys) msg += " " + k;
      throw ConfigError(msg);
    }
  }
  RunConfig cfg;
  auto get = [&kv](const char* key) -> const std::string* {
    auto it = kv.find(key);
    return it == kv.end() ? nullptr : &it->second;
  };

  if (auto* v = get("name")) cfg.name = *v;
  if (auto* v = get("arch")) cfg.arch = *v;
  if (auto* v = get("resolutions")) cfg.resolutions = to_int_list("resolutions", *v);
  if (auto* v = get("num_classes")) cfg.num_classes = to_int("num_classes", *v);
  if (auto* v = get("dataset")) cfg.dataset = *v;
  if (auto* v = get("val_dataset")) cfg.val_dataset = *v;
  if (auto* v = get("train_count")) cfg.train_count = to_int("train_count", *v);
  if (auto* v = get("val_count")) cfg.val_count = to_int("val_count", *v);
  if (auto* v = get("source_side")) cfg.source_side = to_int("source_side", *v);
  if (auto* v = get("cdf_resolution")) cfg.cdf_resolution = to_int("cdf_resolution", *v);

  TrainConfig& t = cfg.train;
  if (auto* v = get("epochs")) t.epochs = to_int("epochs", *v);
  if (auto* v = get("batch_size")) t.batch_size = to_int("batch_size", *v);
  if (auto* v = get("base_lr")) t.base_lr = to_double("base_lr", *v);
  if (auto* v = get("momentum")) t.momentum = to_double("momentum", *v);
  if (auto* v = get("weight_decay")) t.weight_decay = to_double("weight_decay", *v);
  if (auto* v = get("bn_momentum")) t.bn_momentum = to_double("bn_momentum", *v);
  if (auto* v = get("schedule")) {
    if (*v == "cosine") t.schedule = LrSchedule::kCosine;
    else if (*v == "step") t.schedule = LrSchedule::kStep;
    else throw ConfigError("unknown schedule '" + *v + "' (valid: cosine, step)");
  }
  if (auto* v = get("milestones")) t.milestones = to_int_list("milestones", *v);
  if (auto* v = get("lr_factor")) t.lr_factor = to_double("lr_factor", *v);
  if (auto* v = get("mode")) t.mode = parse_mode(*v);
  if (auto* v = get("distill_variant")) t.distill_variant = parse_variant(*v);
  if (auto* v = get("seed")) {
    try {
      std::size_t pos = 0;
      t.seed = std::stoull(*v, &pos);
      if (pos != v->size()) bad_value("seed", *v);
    } catch (const ConfigError&) {
      throw;
    } catch (...) {
      bad_value("seed", *v);
    }
  }
  if (auto* v = get("branches")) t.branches = to_int("branches", *v);
  if (auto* v = get("single_crop")) t.single_crop = to_bool("single_crop", *v);
  if (auto* v = get("enable_cls")) t.enable_cls = to_bool("enable_cls", *v);
  if (auto* v = get("enable_ens")) t.enable_ens = to_bool("enable_ens", *v);
  if (auto* v = get("enable_dis")) t.enable_dis = to_bool("enable_dis", *v);
  if (auto* v = get("area_lo")) t.augmentation.area_lo = to_double("area_lo", *v);
  if (auto* v = get("area_hi")) t.augmentation.area_hi = to_double("area_hi", *v);
  if (auto* v = get("aspect_lo")) t.augmentation.aspect_lo = to_double("aspect_lo", *v);
  if (auto* v = get("aspect_hi")) t.augmentation.aspect_hi = to_double("aspect_hi", *v);
  if (auto* v = get("hflip_probability")) t.augmentation.hflip_probability = to_double("hflip_probability", *v);
  if (auto* v = get("norm_mean")) to_float3("norm_mean", *v, t.normalization.mean);
  if (auto* v = get("norm_std")) to_float3("norm_std", *v, t.normalization.stddev);
  if (auto* v = get("checkpoint_every")) t.checkpoint_every = to_int("checkpoint_every", *v);
  if (auto* v = get("eval_batch")) t.eval_batch = to_int("eval_batch", *v);

  if (cfg.num_classes < 2) throw ConfigError("num_classes must be at least 2");
  if (cfg.dataset == "synthetic") {
    if (cfg.train_count < 1 || cfg.val_count < 1)
      throw ConfigError("synthetic dataset needs positive train_count/val_count");
    if (cfg.source_side < 8) throw ConfigError("source_side must be at least 8");
  } else if (cfg.dataset.rfind("folder:", 0) != 0 && cfg.dataset.rfind("index:", 0) != 0) {
    throw ConfigError("dataset must be 'synthetic', 'folder:<root>' or 'index:<file>'");
  }
  try {
    const ResolutionProfile profile = cfg.profile();
    cfg.train.validate(profile);
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  return cfg;
}

std::string config_snapshot(const RunConfig& cfg) {
  const TrainConfig& t = cfg.train;
  std::string out;
  out += "name=" + cfg.name + "\n";
  out += "arch=" + cfg.arch + "\n";
  out += "resolutions=" + join_ints(cfg.resolutions) + "\n";
  out += "num_classes=" + std::to_string(cfg.num_classes) + "\n";
  out += "dataset=" + cfg.dataset + "\n";
  if (!cfg.val_dataset.empty()) out += "val_dataset=" + cfg.val_dataset + "\n";
  out += "train_count=" + std::to_string(cfg.train_count) + "\n";
  out += "val_count=" + std::to_string(cfg.val_count) + "\n";
  out += "source_side=" + std::to_string(cfg.source_side) + "\n";
  out += "cdf_resolution=" + std::to_string(cfg.cdf_resolution) + "\n";
  out += "epochs=" + std::to_string(t.epochs) + "\n";
  out += "batch_size=" + std::to_string(t.batch_size) + "\n";
  out += "base_lr=" + fmt(t.base_lr) + "\n";
  out += "momentum=" + fmt(t.momentum) + "\n";
  out += "weight_decay=" + fmt(t.weight_decay) + "\n";
  out += "bn_momentum=" + fmt(t.bn_momentum) + "\n";
  out += std::string("schedule=") + (t.schedule == LrSchedule::kCosine ? "cosine" : "step") + "\n";
  if (!t.milestones.empty()) out += "milestones=" + join_ints(t.milestones) + "\n";
  out += "lr_factor=" + fmt(t.lr_factor) + "\n";
  out += "mode=" + mode_name(t.mode) + "\n";
  out += "distill_variant=" + variant_name(t.distill_variant) + "\n";
  out += "seed=" + std::to_string(t.seed) + "\n";
  out += "branches=" + std::to_string(t.branches) + "\n";
  out += "single_crop=" + std::to_string(t.single_crop ? 1 : 0) + "\n";
  out += "enable_cls=" + std::to_string(t.enable_cls ? 1 : 0) + "\n";
  out += "enable_ens=" + std::to_string(t.enable_ens ? 1 : 0) + "\n";
  out += "enable_dis=" + std::to_string(t.enable_dis ? 1 : 0) + "\n";
  out += "area_lo=" + fmt(t.augmentation.area_lo) + "\n";
  out += "area_hi=" + fmt(t.augmentation.area_hi) + "\n";
  out += "aspect_lo=" + fmt(t.augmentation.aspect_lo) + "\n";
  out += "aspect_hi=" + fmt(t.augmentation.aspect_hi) + "\n";
  out += "hflip_probability=" + fmt(t.augmentation.hflip_probability) + "\n";
  out += "norm_mean=" + fmt(t.normalization.mean[0]) + "," + fmt(t.normalization.mean[1]) + "," +
         fmt(t.normalization.mean[2]) + "\n";
  out += "norm_std=" + fmt(t.normalization.stddev[0]) + "," + fmt(t.normalization.stddev[1]) + "," +
         fmt(t.normalization.stddev[2]) + "\n";
  out += "checkpoint_every=" + std::to_string(t.checkpoint_every) + "\n";
  out += "eval_batch=" + std::to_string(t.eval_batch) + "\n";
  return out;
}

}  // namespace rsn
