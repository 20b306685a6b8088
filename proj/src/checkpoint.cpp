#include "rsnet/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <vector>

namespace rsn {

namespace {

constexpr int kFormatVersion = 1;

void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw std::runtime_error("checkpoint archive truncated");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

std::uint64_t get_u64(std::istream& is) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8)) throw std::runtime_error("checkpoint archive truncated");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

void put_floats(std::ostream& os, const float* data, std::size_t count) {
  if constexpr (std::endian::native == std::endian::little) {
    os.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(count * 4));
  } else {
    for (std::size_t i = 0; i < count; ++i) {
      std::uint32_t u;
      std::memcpy(&u, &data[i], 4);
      put_u32(os, u);
    }
  }
}

void get_floats(std::istream& is, float* data, std::size_t count) {
  if constexpr (std::endian::native == std::endian::little) {
    if (!is.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(count * 4)))
      throw std::runtime_error("checkpoint archive truncated");
  } else {
    for (std::size_t i = 0; i < count; ++i) {
      std::uint32_t u = get_u32(is);
      std::memcpy(&data[i], &u, 4);
    }
  }
}

struct ArrayRef {
  std::string name;
  std::vector<std::uint64_t> dims;
  const float* data;
  std::size_t count;
};

std::vector<std::uint64_t> dims_of(const std::vector<int>& shape) {
  std::vector<std::uint64_t> d;
  for (int s : shape) d.push_back(static_cast<std::uint64_t>(s));
  return d;
}

/// Canonical archive order: shared convs, FC, banks (profile order, layer
/// order), ensemble. Save and load both walk this list.
std::vector<ArrayRef> model_arrays(const SwitchableClassifier& model) {
  std::vector<ArrayRef> out;
  for (std::size_t i = 0; i < model.conv_specs.size(); ++i)
    out.push_back({"shared/" + model.conv_specs[i].name + "/weight", dims_of(model.conv_weights[i].shape),
                   model.conv_weights[i].data.data(), model.conv_weights[i].numel()});
  out.push_back({"shared/fc/weight", dims_of(model.fc_weight.shape), model.fc_weight.data.data(),
                 model.fc_weight.numel()});
  out.push_back({"shared/fc/bias", dims_of(model.fc_bias.shape), model.fc_bias.data.data(),
                 model.fc_bias.numel()});
  for (std::size_t b = 0; b < model.banks.size(); ++b) {
    const BatchNormBank& bank = model.banks[b];
    const std::string res = std::to_string(bank.bound_resolution);
    for (std::size_t l = 0; l < bank.layers.size(); ++l) {
      const std::string base = "bn/" + res + "/" + model.conv_specs[l].name + "/";
      const BnLayerParams& p = bank.layers[l];
      const std::uint64_t ch = static_cast<std::uint64_t>(p.channels());
      out.push_back({base + "gamma", {ch}, p.gamma.data(), p.gamma.size()});
      out.push_back({base + "beta", {ch}, p.beta.data(), p.beta.size()});
      out.push_back({base + "running_mean", {ch}, p.running_mean.data(), p.running_mean.size()});
      out.push_back({base + "running_var", {ch}, p.running_var.data(), p.running_var.size()});
    }
  }
  out.push_back({"ensemble/raw_scores", {model.ensemble.raw_scores.size()},
                 model.ensemble.raw_scores.data(), model.ensemble.raw_scores.size()});
  return out;
}

std::map<std::string, std::string> read_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open checkpoint manifest '" + path + "'");
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("malformed manifest line '" + line + "' in '" + path + "'");
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  for (const char* key : {"format_version", "arch", "num_classes", "resolutions", "array_count"})
    if (!kv.count(key))
      throw std::runtime_error("manifest '" + path + "' is missing key '" + key + "'");
  return kv;
}

}  // namespace

void save_checkpoint(const SwitchableClassifier& model, const std::string& stem) {
  const std::vector<ArrayRef> arrays = model_arrays(model);

  std::ofstream mf(stem + ".manifest", std::ios::trunc);
  if (!mf) throw std::runtime_error("cannot write checkpoint manifest '" + stem + ".manifest'");
  mf << "format_version=" << kFormatVersion << "\n";
  mf << "arch=" << model.arch.id << "\n";
  mf << "num_classes=" << model.num_classes << "\n";
  mf << "resolutions=";
  for (int i = 0; i < model.profile.size(); ++i) mf << (i ? "," : "") << model.profile.at(i);
  mf << "\n";
  mf << "array_count=" << arrays.size() << "\n";
  mf.flush();
  if (!mf) throw std::runtime_error("failed writing checkpoint manifest '" + stem + ".manifest'");

  std::ofstream pf(stem + ".params", std::ios::binary | std::ios::trunc);
  if (!pf) throw std::runtime_error("cannot write checkpoint archive '" + stem + ".params'");
  for (const ArrayRef& a : arrays) {
    put_u32(pf, static_cast<std::uint32_t>(a.name.size()));
    pf.write(a.name.data(), static_cast<std::streamsize>(a.name.size()));
    put_u32(pf, static_cast<std::uint32_t>(a.dims.size()));
    for (std::uint64_t d : a.dims) put_u64(pf, d);
    put_floats(pf, a.data, a.count);
  }
  pf.flush();
  if (!pf) throw std::runtime_error("failed writing checkpoint archive '" + stem + ".params'");
}

SwitchableClassifier load_checkpoint(const std::string& stem) {
  const std::map<std::string, std::string> kv = read_manifest(stem + ".manifest");
  if (std::stoi(kv.at("format_version")) != kFormatVersion)
    throw std::runtime_error("checkpoint format version " + kv.at("format_version") +
                             " unsupported (expected " + std::to_string(kFormatVersion) + ")");
  std::vector<int> resolutions;
  std::stringstream rs(kv.at("resolutions"));
  std::string tok;
  while (std::getline(rs, tok, ',')) resolutions.push_back(std::stoi(tok));
  SwitchableClassifier model = build_model(kv.at("arch"), ResolutionProfile::make(resolutions),
                                           std::stoi(kv.at("num_classes")), 0);

  struct LoadedArray {
    std::vector<std::uint64_t> dims;
    std::vector<float> data;
  };
  std::map<std::string, LoadedArray> loaded;
  {
    std::ifstream pf(stem + ".params", std::ios::binary);
    if (!pf) throw std::runtime_error("cannot open checkpoint archive '" + stem + ".params'");
    while (pf.peek() != std::char_traits<char>::eof()) {
      const std::uint32_t name_len = get_u32(pf);
      if (name_len == 0 || name_len > 4096) throw std::runtime_error("corrupted checkpoint archive: bad name length");
      std::string name(name_len, '\0');
      if (!pf.read(name.data(), name_len)) throw std::runtime_error("checkpoint archive truncated");
      const std::uint32_t ndim = get_u32(pf);
      if (ndim > 8) throw std::runtime_error("corrupted checkpoint archive: bad rank for '" + name + "'");
      LoadedArray arr;
      std::uint64_t count = 1;
      for (std::uint32_t i = 0; i < ndim; ++i) {
        arr.dims.push_back(get_u64(pf));
        count *= arr.dims.back();
      }
      if (count > (1ull << 32)) throw std::runtime_error("corrupted checkpoint archive: oversized array '" + name + "'");
      arr.data.resize(count);
      get_floats(pf, arr.data.data(), count);
      if (!loaded.emplace(std::move(name), std::move(arr)).second)
        throw std::runtime_error("corrupted checkpoint archive: duplicate array");
    }
  }
  if (loaded.size() != std::stoul(kv.at("array_count")))
    throw std::runtime_error("checkpoint manifest/archive inconsistency: manifest declares " +
                             kv.at("array_count") + " arrays, archive holds " +
                             std::to_string(loaded.size()));

  // Branch ensembles (single-resolution training) may carry more raw scores
  // than profile entries; the stored length is authoritative.
  if (auto it = loaded.find("ensemble/raw_scores");
      it != loaded.end() && it->second.data.size() != model.ensemble.raw_scores.size())
    model.ensemble = EnsembleWeights(static_cast<int>(it->second.data.size()));

  const std::vector<ArrayRef> expected = model_arrays(model);
  for (const ArrayRef& a : expected) {
    auto it = loaded.find(a.name);
    if (it == loaded.end()) {
      if (a.name.rfind("bn/", 0) == 0) {
        const std::string res = a.name.substr(3, a.name.find('/', 3) - 3);
        throw std::runtime_error("checkpoint is missing the BN bank for resolution " + res +
                                 " (array '" + a.name + "')");
      }
      throw std::runtime_error("checkpoint is missing array '" + a.name + "'");
    }
    if (it->second.dims != a.dims)
      throw std::runtime_error("checkpoint array '" + a.name + "' has unexpected shape");
    // ArrayRef points into the freshly built model; write through it.
    std::memcpy(const_cast<float*>(a.data), it->second.data.data(), a.count * sizeof(float));
  }
  return model;
}

}  // namespace rsn
