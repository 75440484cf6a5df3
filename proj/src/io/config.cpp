#include "lesiongen/io/config.hpp"

#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "lesiongen/error.hpp"

namespace lesiongen {

const std::vector<KeySpec>& config_schema() {
  using K = KeyType;
  static const std::vector<KeySpec> schema{
      {"seed", K::UInt, "0", "master seed; every stream is derived from it"},
      {"io.data", K::String, "", "dataset root (images/, masks/, tensors/)"},
      {"io.registry", K::String, "", "cluster registry file"},
      {"io.inpainted", K::String, "", "inpaint output directory (for stylize)"},
      {"io.synthetic", K::String, "", "synthetic dataset root for seg-train augmentation"},
      {"io.checkpoint", K::String, "", "segmentation checkpoint (seg-test)"},
      {"io.sets", K::String, "", "eval/report inputs: Tag=dir,Tag=dir"},
      {"data.size", K::Int, "32", "square working resolution"},
      {"toy.count", K::Int, "348", "generated samples"},
      {"toy.shifted", K::Bool, "false", "shifted texture statistics"},
      {"extractor.mode", K::String, "seeded-random-conv", "seeded-random-conv | denoiser-taps"},
      {"extractor.seed", K::UInt, "0", "extractor weight seed"},
      {"cluster.k", K::Int, "4", "number of clusters"},
      {"cluster.max_iter", K::Int, "100", "Lloyd rounds"},
      {"train.iterations", K::Int, "3000", "optimizer steps per model"},
      {"train.batch_size", K::Int, "16", "batch size"},
      {"train.lr", K::Double, "0.0002", "AdamW learning rate"},
      {"train.schedule", K::String, "linear", "linear | cosine"},
      {"train.timesteps", K::Int, "100", "training chain length T"},
      {"train.beta_min", K::Double, "0.001", "linear schedule start"},
      {"train.beta_max", K::Double, "0.2", "linear schedule end"},
      {"train.respaced", K::Int, "50", "respaced chain length"},
      {"train.skip", K::Int, "20", "respaced positions skipped by stylize"},
      {"train.base_channels", K::Int, "16", "denoiser width"},
      {"train.clusters", K::Bool, "true", "train one model per registry cluster"},
      {"train.full", K::Bool, "false", "also train a whole-dataset model"},
      {"inpaint.samples", K::Int, "3", "outputs per source"},
      {"inpaint.jump", K::Int, "10", "RePaint jump length j"},
      {"inpaint.resample", K::Int, "5", "RePaint resample count r"},
      {"inpaint.threshold", K::Double, "0.5", "mask binarization threshold"},
      {"inpaint.radius", K::Int, "-1", "dilation radius; -1 scales 20 px at 256"},
      {"inpaint.full_diff", K::Bool, "false", "use the whole-dataset model"},
      {"inpaint.batch_size", K::Int, "16", "chains per batch"},
      {"inpaint.variance", K::String, "fixed-small", "fixed-small | fixed-large | none"},
      {"inpaint.limit", K::Int, "0", "use only the first N sources (0 = all)"},
      {"style.zecon", K::Double, "500", "ZeCon weight"},
      {"style.vgg", K::Double, "100", "feature MSE weight"},
      {"style.mse", K::Double, "5000", "parsed; used only with style.fold_mse"},
      {"style.sty", K::Double, "10000", "global token distance weight"},
      {"style.l2", K::Double, "10000", "pixel L2 weight"},
      {"style.sem", K::Double, "40000", "semantic acceleration weight"},
      {"style.rng", K::Double, "200", "range penalty weight"},
      {"style.fold_mse", K::Bool, "false", "add style.mse to style.l2"},
      {"style.step_scale", K::Double, "1", "guidance step scale"},
      {"style.clip_norm", K::Double, "10", "per-item gradient norm clip"},
      {"style.temperature", K::Double, "0.07", "ZeCon temperature"},
      {"style.locations", K::Int, "16", "ZeCon locations per layer"},
      {"eval.repeats", K::Int, "3", "repeats per data type"},
      {"eval.ssim_pairs", K::Int, "50", "MS-SSIM pairs per repeat"},
      {"eval.ssim_levels", K::Int, "-1", "-1 = largest that fits"},
      {"seg.epochs", K::Int, "30", "training epochs"},
      {"seg.batch_size", K::Int, "8", "batch size"},
      {"seg.lr", K::Double, "0.003", "AdamW learning rate"},
      {"seg.lr_drop_epoch", K::Int, "10", "epoch of the 10x drop"},
      {"seg.base_channels", K::Int, "8", "SegNet width"},
      {"seg.augment", K::Bool, "true", "geometric augmentation"},
      {"seg.threshold", K::Double, "0.5", "sigmoid threshold"},
      {"seg.tag", K::String, "model", "row label for seg-test results"},
      {"seg.limit", K::Int, "0", "use only the first N real samples (0 = all)"},
      {"aug.alpha", K::Double, "0", "replacement probability (0 = no synthetic data)"},
      {"aug.r", K::Int, "3", "synthetic samples per replacement"},
      {"aug.m", K::Int, "3", "synthetic samples available per real sample"},
      {"aug.mode", K::String, "replace", "replace | add"},
  };
  return schema;
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

std::string canonical(const KeySpec& k, const std::string& raw) {
  const std::string v = trim(raw);
  auto bad = [&](const char* what) { return ValidationError("config key '" + k.name + "': '" + v + "' is not " + what); };
  char* end = nullptr;
  errno = 0;
  switch (k.type) {
    case KeyType::Int: {
      const long long x = std::strtoll(v.c_str(), &end, 10);
      if (v.empty() || *end || errno) throw bad("an integer");
      return std::to_string(x);
    }
    case KeyType::UInt: {
      if (v.empty() || v[0] == '-') throw bad("an unsigned integer");
      const unsigned long long x = std::strtoull(v.c_str(), &end, 10);
      if (*end || errno) throw bad("an unsigned integer");
      return std::to_string(x);
    }
    case KeyType::Double: {
      const double x = std::strtod(v.c_str(), &end);
      if (v.empty() || *end || errno || !std::isfinite(x)) throw bad("a finite number");
      char buf[40];
      std::snprintf(buf, sizeof buf, "%.17g", x);
      return buf;
    }
    case KeyType::Bool:
      if (v == "true" || v == "1" || v == "yes") return "true";
      if (v == "false" || v == "0" || v == "no") return "false";
      throw bad("a boolean");
    case KeyType::String:
      if (v.find('\n') != std::string::npos) throw bad("a single-line string");
      return v;
  }
  return v;
}

}  // namespace

Config::Config() {
  for (const auto& k : config_schema()) values_[k.name] = canonical(k, k.default_value);
}

const KeySpec& Config::spec(const std::string& key) const {
  for (const auto& k : config_schema()) {
    if (k.name == key) return k;
  }
  throw ValidationError("unknown config key '" + key + "'");
}

void Config::set(const std::string& key, const std::string& value) { values_[key] = canonical(spec(key), value); }

bool Config::is_default(const std::string& key) const { return values_.at(key) == canonical(spec(key), spec(key).default_value); }

std::int64_t Config::get_int(const std::string& key) const {
  if (spec(key).type != KeyType::Int) throw ValidationError("config key '" + key + "' is not an integer key");
  return std::stoll(values_.at(key));
}

std::uint64_t Config::get_u64(const std::string& key) const {
  if (spec(key).type != KeyType::UInt) throw ValidationError("config key '" + key + "' is not an unsigned key");
  return std::stoull(values_.at(key));
}

double Config::get_double(const std::string& key) const {
  if (spec(key).type != KeyType::Double) throw ValidationError("config key '" + key + "' is not a number key");
  return std::strtod(values_.at(key).c_str(), nullptr);
}

bool Config::get_bool(const std::string& key) const {
  if (spec(key).type != KeyType::Bool) throw ValidationError("config key '" + key + "' is not a boolean key");
  return values_.at(key) == "true";
}

const std::string& Config::get_string(const std::string& key) const {
  spec(key);
  return values_.at(key);
}

void Config::merge_text(const std::string& text, const std::string& source) {
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ValidationError(source + ":" + std::to_string(lineno) + ": expected 'key = value'");
    try {
      set(trim(t.substr(0, eq)), t.substr(eq + 1));
    } catch (const ValidationError& e) {
      throw ValidationError(source + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

void Config::merge_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ValidationError("cannot read config " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  const std::string text = ss.str();
  if (text.rfind("LESIONGEN-MANIFEST", 0) != 0) {
    merge_text(text, path.string());
    return;
  }
  std::string filtered, line;
  std::istringstream ls(text);
  while (std::getline(ls, line)) {
    if (line.rfind("config.", 0) == 0) filtered += line.substr(7) + "\n";
  }
  merge_text(filtered, path.string());
}

std::string Config::serialize() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
  return out;
}

}  // namespace lesiongen
