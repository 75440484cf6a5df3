#include "cli.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "lesiongen/cluster/cluster.hpp"
#include "lesiongen/diffusion/checkpoint.hpp"
#include "lesiongen/diffusion/sampler.hpp"
#include "lesiongen/diffusion/trainer.hpp"
#include "lesiongen/error.hpp"
#include "lesiongen/hash.hpp"
#include "lesiongen/io/config.hpp"
#include "lesiongen/io/dataset.hpp"
#include "lesiongen/io/manifest.hpp"
#include "lesiongen/io/toydata.hpp"
#include "lesiongen/metrics/metrics.hpp"
#include "lesiongen/repaint/repaint.hpp"
#include "lesiongen/seg/seg.hpp"
#include "lesiongen/style/guidance.hpp"

namespace fs = std::filesystem;

namespace lesiongen {

namespace {

struct Stage {
  Config cfg;
  RunManifest manifest;
  fs::path out;
  std::uint64_t seed = 0;

  void output(const std::vector<std::string>& rel) {
    for (const auto& r : rel) manifest.outputs[r] = "";
  }
  void warn(const std::string& w) {
    std::cerr << "warning: " << w << '\n';
    manifest.warnings.push_back(w);
  }
  std::uint64_t stream(const std::string& name, std::uint64_t index = 0) {
    const std::uint64_t s = derive_seed(seed, name, index);
    manifest.streams[name] = s;
    return s;
  }
  fs::path required_path(const std::string& key) const {
    const std::string& v = cfg.get_string(key);
    if (v.empty()) throw ValidationError("missing required input '" + key + "' (set it with a flag or in the config)");
    return v;
  }
  int get_int(const std::string& key) const { return static_cast<int>(cfg.get_int(key)); }
};

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(s);
  while (std::getline(is, cur, sep)) {
    if (!cur.empty()) out.push_back(cur);
  }
  return out;
}

void write_text(Stage& st, const std::string& rel, const std::string& text) {
  std::ofstream os(st.out / rel, std::ios::binary);
  if (!os) throw IoError("cannot write " + (st.out / rel).string());
  os << text;
  st.output({rel});
}

Dataset open_dataset(Stage& st, const std::string& key, const std::string& name) {
  Dataset ds = load_dataset(st.required_path(key), st.get_int("data.size"));
  st.manifest.inputs[name] = hex64(ds.hash);
  return ds;
}

Tensor take_rows(const Tensor& t, int limit) {
  if (limit <= 0 || limit >= t.dim(0)) return t;
  return batch_slice(t, 0, limit);
}

ExtractorConfig extractor_config(const Stage& st) {
  ExtractorConfig ec;
  ec.mode = parse_extractor_mode(st.cfg.get_string("extractor.mode"));
  ec.seed = st.cfg.get_u64("extractor.seed");
  return ec;
}

FeatureExtractor seeded_extractor(const Stage& st, const char* stage) {
  const ExtractorConfig ec = extractor_config(st);
  if (ec.mode != ExtractorMode::SeededRandomConv) throw ValidationError(std::string(stage) + " supports only extractor.mode = seeded-random-conv");
  return FeatureExtractor(ec);
}

// Registry with checkpoint paths resolved against the registry's directory.
ClusterRegistry open_registry(Stage& st) {
  const fs::path path = st.required_path("io.registry");
  ClusterRegistry reg = load_registry(path);
  st.manifest.inputs["registry"] = file_hash(path);
  const fs::path base = path.parent_path();
  for (auto& [j, p] : reg.checkpoints) {
    if (p.is_relative()) p = base / p;
    st.manifest.inputs["checkpoint." + std::to_string(j)] = file_hash(p);
  }
  if (reg.full_checkpoint && reg.full_checkpoint->is_relative()) reg.full_checkpoint = base / *reg.full_checkpoint;
  if (reg.full_checkpoint) st.manifest.inputs["checkpoint.full"] = file_hash(*reg.full_checkpoint);
  return reg;
}

TrainConfig train_config(const Stage& st) {
  TrainConfig tc;
  tc.iterations = st.get_int("train.iterations");
  tc.batch_size = st.get_int("train.batch_size");
  tc.learning_rate = st.cfg.get_double("train.lr");
  tc.schedule = parse_schedule_kind(st.cfg.get_string("train.schedule"));
  tc.timesteps = st.get_int("train.timesteps");
  tc.beta_min = st.cfg.get_double("train.beta_min");
  tc.beta_max = st.cfg.get_double("train.beta_max");
  tc.respaced_length = st.get_int("train.respaced");
  tc.skip = st.get_int("train.skip");
  tc.base_channels = st.get_int("train.base_channels");
  tc.validate();
  return tc;
}

StyleWeights style_weights(const Stage& st) {
  StyleWeights w;
  w.zecon = st.cfg.get_double("style.zecon");
  w.vgg = st.cfg.get_double("style.vgg");
  w.mse = st.cfg.get_double("style.mse");
  w.sty = st.cfg.get_double("style.sty");
  w.l2 = st.cfg.get_double("style.l2");
  w.sem = st.cfg.get_double("style.sem");
  w.rng = st.cfg.get_double("style.rng");
  w.fold_mse_into_l2 = st.cfg.get_bool("style.fold_mse");
  w.step_scale = st.cfg.get_double("style.step_scale");
  w.clip_norm = st.cfg.get_double("style.clip_norm");
  w.temperature = st.cfg.get_double("style.temperature");
  w.zecon_locations = st.get_int("style.locations");
  w.validate();
  return w;
}

struct JobRow {
  std::string id, source_id;
  int sample = 0, model = -1;
};

std::vector<JobRow> read_jobs(const fs::path& dir) {
  std::ifstream is(dir / "jobs.csv");
  if (!is) throw ValidationError(dir.string() + ": missing jobs.csv (not an inpaint/stylize output)");
  std::vector<JobRow> rows;
  std::string line;
  std::getline(is, line);
  while (std::getline(is, line)) {
    const auto f = split(line, ',');
    if (f.size() != 4) throw ValidationError(dir.string() + "/jobs.csv: malformed row '" + line + "'");
    rows.push_back({f[0], f[1], std::stoi(f[2]), std::stoi(f[3])});
  }
  return rows;
}

std::string jobs_csv(const std::vector<JobRow>& rows) {
  std::string s = "id,source_id,sample,model\n";
  for (const auto& r : rows) s += r.id + "," + r.source_id + "," + std::to_string(r.sample) + "," + std::to_string(r.model) + "\n";
  return s;
}

std::map<std::string, int> index_of(const std::vector<std::string>& ids) {
  std::map<std::string, int> m;
  for (std::size_t i = 0; i < ids.size(); ++i) m[ids[i]] = static_cast<int>(i);
  return m;
}

// ---- stages ----

void cmd_gen_toy_data(Stage& st) {
  ToySpec spec;
  spec.count = st.get_int("toy.count");
  spec.size = st.get_int("data.size");
  spec.shifted = st.cfg.get_bool("toy.shifted");
  st.stream(spec.shifted ? "toy-shifted" : "toy");
  const ToyData data = gen_toy_data(spec, st.seed);
  st.output(save_dataset(data.samples, data.ids, st.out));
  std::cerr << "wrote " << spec.count << " samples to " << st.out << '\n';
}

void cmd_cluster(Stage& st) {
  const Dataset ds = open_dataset(st, "io.data", "data");
  const FeatureExtractor ex = seeded_extractor(st, "cluster");
  const int k = st.get_int("cluster.k");
  st.stream("kmeans");
  const KMeansResult km = kmeans(embed_samples(ds.samples, ex), k, st.seed, st.get_int("cluster.max_iter"));
  if (km.repairs) st.warn(std::to_string(km.repairs) + " empty-cluster repairs during k-means");
  const ClusterRegistry reg = build_registry(ds.ids, km, {});
  save_registry(st.out / "registry.txt", reg);
  write_membership_csv(st.out / "membership.csv", reg);
  st.output({"registry.txt", "membership.csv"});
  for (int j = 0; j < k; ++j) std::cerr << "cluster " << j << ": " << reg.members(j).size() << " samples\n";
}

void cmd_train(Stage& st) {
  const Dataset ds = open_dataset(st, "io.data", "data");
  const TrainConfig base = train_config(st);
  const bool clusters = st.cfg.get_bool("train.clusters");
  const bool full = st.cfg.get_bool("train.full");
  ClusterRegistry reg;
  if (clusters) {
    reg = open_registry(st);
  } else if (!full) {
    throw ValidationError("train: nothing to do (train.clusters and train.full are both false)");
  }
  std::map<int, fs::path> ckpts;
  std::string curves = "model,iteration,loss\n";
  auto run = [&](const std::string& name, const Tensor& data, std::uint64_t seed) {
    TrainConfig tc = base;
    tc.seed = seed;
    DenoiserNet net(DenoiserConfig{4, tc.base_channels, 64, seed});
    const auto curve = train_denoiser(net, data, tc, [&](int it, double loss) {
      if ((it + 1) % 500 == 0) std::cerr << name << " iteration " << it + 1 << " loss " << loss << '\n';
    });
    for (std::size_t i = 0; i < curve.size(); ++i) {
      char buf[64];
      std::snprintf(buf, sizeof buf, "%.9g", curve[i]);
      curves += name + "," + std::to_string(i) + "," + buf + "\n";
    }
    save_checkpoint(st.out / (name + ".ckpt"), net.params(), tc.to_meta());
    st.output({name + ".ckpt"});
  };
  if (clusters) {
    const auto idx = index_of(ds.ids);
    for (int j = 0; j < reg.k; ++j) {
      std::vector<Tensor> rows;
      for (const auto& id : reg.members(j)) {
        const auto it = idx.find(id);
        if (it == idx.end()) throw ValidationError("registry sample '" + id + "' is not in the dataset");
        rows.push_back(batch_slice(ds.samples, it->second, it->second + 1));
      }
      if (rows.empty()) throw ValidationError("cluster " + std::to_string(j) + " has no members");
      run("cluster_" + std::to_string(j), batch_concat(rows), st.stream("train-cluster", static_cast<std::uint64_t>(j)));
      ckpts[j] = "cluster_" + std::to_string(j) + ".ckpt";
    }
  }
  std::optional<fs::path> full_path;
  if (full) {
    run("full", ds.samples, st.stream("train-full"));
    full_path = "full.ckpt";
  }
  reg.checkpoints = ckpts;
  reg.full_checkpoint = full_path;
  save_registry(st.out / "registry.txt", reg);
  st.output({"registry.txt"});
  write_text(st, "loss.csv", curves);
}

void cmd_inpaint(Stage& st) {
  const Dataset ds = open_dataset(st, "io.data", "data");
  const ModelBank bank(open_registry(st));
  GenerationConfig gc;
  gc.samples = st.get_int("inpaint.samples");
  gc.jump = st.get_int("inpaint.jump");
  gc.resample = st.get_int("inpaint.resample");
  gc.threshold = st.cfg.get_double("inpaint.threshold");
  gc.radius = st.get_int("inpaint.radius");
  gc.full_diff = st.cfg.get_bool("inpaint.full_diff");
  gc.batch_size = st.get_int("inpaint.batch_size");
  gc.variance = parse_variance_mode(st.cfg.get_string("inpaint.variance"));
  gc.validate();
  const int limit = st.get_int("inpaint.limit");
  const Tensor sources = take_rows(ds.samples, limit);
  const std::vector<std::string> ids(ds.ids.begin(), ds.ids.begin() + sources.dim(0));
  st.stream("inpaint");
  st.stream("inpaint-model");
  const InpaintResult res = inpaint(bank, sources, gc, st.seed, ids);
  for (const auto& w : res.warnings) st.warn(w);
  std::vector<JobRow> rows;
  std::vector<std::string> out_ids;
  for (const auto& j : res.jobs) {
    const std::string& src = ids[static_cast<std::size_t>(j.source)];
    out_ids.push_back(src + "_s" + std::to_string(j.sample));
    rows.push_back({out_ids.back(), src, j.sample, j.model});
  }
  st.output(save_dataset(res.outputs, out_ids, st.out));
  write_text(st, "jobs.csv", jobs_csv(rows));
}

void cmd_stylize(Stage& st) {
  const Dataset sources = open_dataset(st, "io.data", "data");
  const fs::path in_dir = st.required_path("io.inpainted");
  const Dataset inpainted = load_dataset(in_dir, st.get_int("data.size"));
  st.manifest.inputs["inpainted"] = hex64(inpainted.hash);
  const auto jobs = read_jobs(in_dir);
  const ModelBank bank(open_registry(st));
  const StyleWeights weights = style_weights(st);
  const ExtractorConfig ec = extractor_config(st);
  const auto src_idx = index_of(sources.ids), in_idx = index_of(inpainted.ids);
  st.stream("stylize");
  st.stream("stylize-loss");
  std::vector<Tensor> styled;
  std::vector<JobRow> rows;
  int skipped = 0;
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    const JobRow& j = jobs[i];
    const auto si = src_idx.find(j.source_id);
    const auto ii = in_idx.find(j.id);
    if (si == src_idx.end()) throw ValidationError("stylize: source '" + j.source_id + "' not in " + st.cfg.get_string("io.data"));
    if (ii == in_idx.end()) throw ValidationError("stylize: inpainted sample '" + j.id + "' missing from " + in_dir.string());
    const NoisePredictor& net = j.model < 0 ? bank.full() : bank.model(j.model);
    const RespacedSchedule& sched = bank.schedule(j.model);
    std::optional<FeatureExtractor> ex;
    if (ec.mode == ExtractorMode::DenoiserTaps) {
      const auto* dn = dynamic_cast<const DenoiserNet*>(&net);
      if (!dn) throw ValidationError("denoiser-taps extractor needs a DenoiserNet model");
      ex.emplace(ec, *dn);
    } else {
      ex.emplace(ec);
    }
    StylizeReport report;
    styled.push_back(stylize(net, batch_slice(inpainted.samples, ii->second, ii->second + 1), batch_slice(sources.samples, si->second, si->second + 1),
                             sched, weights, *ex, st.seed, static_cast<int>(i), VarianceMode::FixedSmall, &report));
    skipped += report.skipped_steps;
    rows.push_back({j.id + "_styled", j.source_id, j.sample, j.model});
    if ((i + 1) % 25 == 0) std::cerr << "stylized " << i + 1 << "/" << jobs.size() << '\n';
  }
  if (skipped) st.warn(std::to_string(skipped) + " guided steps skipped on non-finite gradients");
  std::vector<std::string> ids;
  for (const auto& r : rows) ids.push_back(r.id);
  st.output(save_dataset(batch_concat(styled), ids, st.out));
  write_text(st, "jobs.csv", jobs_csv(rows));
}

void cmd_eval(Stage& st) {
  const Dataset ref = open_dataset(st, "io.data", "reference");
  std::map<std::string, Tensor> sets;
  for (const auto& item : split(st.cfg.get_string("io.sets"), ',')) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw ValidationError("io.sets entries must be Tag=dir, got '" + item + "'");
    const std::string tag = item.substr(0, eq);
    const fs::path dir = item.substr(eq + 1);
    if (!fs::exists(dir / "images")) {
      st.warn("data type " + tag + " has no samples at " + dir.string());
      sets[tag] = Tensor();
      continue;
    }
    const Dataset d = load_dataset(dir, st.get_int("data.size"));
    st.manifest.inputs["set." + tag] = hex64(d.hash);
    sets[tag] = d.samples;
  }
  ReportConfig rc;
  rc.repeats = st.get_int("eval.repeats");
  rc.ssim_pairs = st.get_int("eval.ssim_pairs");
  rc.ssim_levels = st.get_int("eval.ssim_levels");
  rc.seed = st.seed;
  const MetricsReport rep = eval_report(sets, ref.samples, seeded_extractor(st, "eval"), rc);
  std::ostringstream csv, table;
  rep.write_csv(csv);
  rep.write_table(table);
  write_text(st, "report.csv", csv.str());
  write_text(st, "report.txt", table.str());
  std::cout << table.str();
}

// Synthetic rows ordered as M per real sample, following the real ids.
Tensor synthetic_for(const fs::path& dir, const std::vector<std::string>& real_ids, int m, int size, Stage& st) {
  const Dataset syn = load_dataset(dir, size);
  st.manifest.inputs["synthetic"] = hex64(syn.hash);
  const auto idx = index_of(syn.ids);
  std::map<std::string, std::vector<std::pair<int, std::string>>> by_source;
  for (const auto& j : read_jobs(dir)) by_source[j.source_id].push_back({j.sample, j.id});
  std::vector<Tensor> rows;
  for (const auto& id : real_ids) {
    auto& list = by_source[id];
    if (static_cast<int>(list.size()) < m) {
      throw ValidationError("synthetic set has " + std::to_string(list.size()) + " samples for '" + id + "', need " + std::to_string(m));
    }
    std::sort(list.begin(), list.end());
    for (int k = 0; k < m; ++k) {
      const int r = idx.at(list[static_cast<std::size_t>(k)].second);
      rows.push_back(batch_slice(syn.samples, r, r + 1));
    }
  }
  return batch_concat(rows);
}

void cmd_seg_train(Stage& st) {
  const Dataset ds = open_dataset(st, "io.data", "data");
  const int limit = st.get_int("seg.limit");
  Tensor data = take_rows(ds.samples, limit);
  const std::vector<std::string> ids(ds.ids.begin(), ds.ids.begin() + data.dim(0));
  AugPlan plan;
  plan.alpha = st.cfg.get_double("aug.alpha");
  plan.r = st.get_int("aug.r");
  plan.m = st.get_int("aug.m");
  plan.mode = parse_aug_mode(st.cfg.get_string("aug.mode"));
  plan.seed = st.stream("augment");
  plan.validate();
  int replaced = 0;
  if (plan.alpha > 0.0) {
    const Tensor synth = synthetic_for(st.required_path("io.synthetic"), ids, plan.m, st.get_int("data.size"), st);
    const AugResult aug = augment_dataset(data, synth, plan);
    data = aug.data;
    replaced = aug.replaced;
  }
  SegTrainConfig tc;
  tc.epochs = st.get_int("seg.epochs");
  tc.batch_size = st.get_int("seg.batch_size");
  tc.learning_rate = st.cfg.get_double("seg.lr");
  tc.lr_drop_epoch = st.get_int("seg.lr_drop_epoch");
  tc.augment = st.cfg.get_bool("seg.augment");
  tc.seed = st.stream("seg-train");
  SegNet net(SegNetConfig{st.get_int("seg.base_channels"), st.stream("segnet-init")});
  const SegTrainResult r = train_seg(net, data, tc);
  save_segnet(st.out / "segnet.ckpt", net);
  st.output({"segnet.ckpt"});
  std::string curve = "epoch,train_loss,val_iou\n";
  for (std::size_t e = 0; e < r.train_loss.size(); ++e) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g\n", e, r.train_loss[e], r.val_iou[e]);
    curve += buf;
  }
  write_text(st, "curve.csv", curve);
  std::cerr << "trained on " << data.dim(0) << " samples (" << replaced << " real replaced), best epoch " << r.best_epoch << '\n';
}

void cmd_seg_test(Stage& st) {
  const fs::path ckpt = st.required_path("io.checkpoint");
  st.manifest.inputs["checkpoint"] = file_hash(ckpt);
  const Dataset ds = open_dataset(st, "io.data", "test");
  const SegEval e = test_seg(ckpt, ds.samples, st.cfg.get_double("seg.threshold"));
  char buf[160];
  std::snprintf(buf, sizeof buf, "%s,%d,%.9g,%.9g\n", st.cfg.get_string("seg.tag").c_str(), ds.samples.dim(0), e.dice, e.iou);
  write_text(st, "seg_metrics.csv", std::string("tag,N,dice,iou\n") + buf);
  std::string per = "id,dice,iou\n";
  for (std::size_t i = 0; i < e.dices.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%s,%.9g,%.9g\n", ds.ids[i].c_str(), e.dices[i], e.ious[i]);
    per += buf;
  }
  write_text(st, "per_sample.csv", per);
  std::cout << "dice " << e.dice << " iou " << e.iou << '\n';
}

void cmd_report(Stage& st) {
  std::string out;
  for (const auto& dir_s : split(st.cfg.get_string("io.sets"), ',')) {
    const fs::path dir = dir_s.substr(dir_s.find('=') == std::string::npos ? 0 : dir_s.find('=') + 1);
    bool any = false;
    for (const char* name : {"report.txt", "seg_metrics.csv"}) {
      const fs::path p = dir / name;
      if (!fs::exists(p)) continue;
      any = true;
      st.manifest.inputs[p.string()] = file_hash(p);
      std::ifstream is(p);
      std::stringstream ss;
      ss << is.rdbuf();
      out += "== " + p.string() + "\n" + ss.str() + "\n";
    }
    if (!any) st.warn(dir.string() + " has no report.txt or seg_metrics.csv");
  }
  if (out.empty()) throw ValidationError("report: no inputs found (set --sets dir1,dir2)");
  write_text(st, "tables.txt", out);
  std::cout << out;
}

}  // namespace

int run_command(const std::vector<std::string>& args) {
  CLI::App app{"Cluster-conditioned diffusion augmentation for lesion segmentation"};
  app.require_subcommand(1);
  std::string config_path, out, seed_s;
  std::vector<std::string> sets;
  std::map<std::string, std::string> flags;
  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "key = value config file or a previous run's manifest.txt");
    sub->add_option("--seed", seed_s, "master seed (u64)");
    sub->add_option("--out", out, "output directory")->required();
    sub->add_option("--set", sets, "override a config key: key=value (repeatable)");
  };
  auto flag = [&](CLI::App* sub, const std::string& name, const std::string& key, const std::string& help) {
    sub->add_option_function<std::string>(name, [&flags, key](const std::string& v) { flags[key] = v; }, help);
  };
  auto bool_flag = [&](CLI::App* sub, const std::string& name, const std::string& key, const std::string& help) {
    sub->add_flag_callback(name, [&flags, key]() { flags[key] = "true"; }, help);
  };

  auto* gen = app.add_subcommand("gen-toy-data", "generate the toy lesion dataset");
  flag(gen, "--count", "toy.count", "number of samples");
  flag(gen, "--size", "data.size", "image size");
  bool_flag(gen, "--shifted", "toy.shifted", "shifted texture statistics");
  auto* clu = app.add_subcommand("cluster", "k-means over image/mask embeddings");
  flag(clu, "--data", "io.data", "dataset root");
  flag(clu, "--k", "cluster.k", "number of clusters");
  auto* tr = app.add_subcommand("train", "train per-cluster (and optionally whole-dataset) denoisers");
  flag(tr, "--data", "io.data", "dataset root");
  flag(tr, "--registry", "io.registry", "registry from the cluster stage");
  flag(tr, "--iterations", "train.iterations", "optimizer steps per model");
  bool_flag(tr, "--full", "train.full", "also train a whole-dataset model");
  auto* inp = app.add_subcommand("inpaint", "RePaint lesion regeneration");
  flag(inp, "--data", "io.data", "source dataset root");
  flag(inp, "--registry", "io.registry", "trained registry");
  flag(inp, "--samples", "inpaint.samples", "outputs per source");
  flag(inp, "--limit", "inpaint.limit", "use only the first N sources");
  bool_flag(inp, "--full-diff", "inpaint.full_diff", "use the whole-dataset model");
  auto* sty = app.add_subcommand("stylize", "loss-guided restyling of inpainted samples");
  flag(sty, "--data", "io.data", "source dataset root");
  flag(sty, "--inpainted", "io.inpainted", "inpaint output directory");
  flag(sty, "--registry", "io.registry", "trained registry");
  auto* ev = app.add_subcommand("eval", "FID / MS-SSIM report");
  flag(ev, "--data", "io.data", "reference (real) dataset");
  flag(ev, "--sets", "io.sets", "Tag=dir,Tag=dir");
  auto* st_ = app.add_subcommand("seg-train", "train the segmentation model");
  flag(st_, "--data", "io.data", "real training set");
  flag(st_, "--synthetic", "io.synthetic", "synthetic set (inpaint/stylize output)");
  flag(st_, "--alpha", "aug.alpha", "replacement probability");
  flag(st_, "--r", "aug.r", "synthetic samples per replacement");
  flag(st_, "--mode", "aug.mode", "replace | add");
  flag(st_, "--limit", "seg.limit", "use only the first N real samples");
  auto* ste = app.add_subcommand("seg-test", "evaluate a segmentation checkpoint");
  flag(ste, "--checkpoint", "io.checkpoint", "segnet.ckpt");
  flag(ste, "--data", "io.data", "test set");
  flag(ste, "--tag", "seg.tag", "row label");
  auto* rep = app.add_subcommand("report", "collect eval and seg-test tables");
  flag(rep, "--sets", "io.sets", "result directories, comma separated");
  for (auto* sub : {gen, clu, tr, inp, sty, ev, st_, ste, rep}) common(sub);

  std::vector<std::string> rev(args.rbegin(), args.rend() - (args.empty() ? 0 : 1));
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 1;
  }
  CLI::App* sub = app.get_subcommands().front();
  const auto t0 = std::chrono::steady_clock::now();
  try {
    Stage st;
    if (!config_path.empty()) st.cfg.merge_file(config_path);
    for (const auto& [k, v] : flags) st.cfg.set(k, v);
    for (const auto& kv : sets) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw ValidationError("--set expects key=value, got '" + kv + "'");
      st.cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (!seed_s.empty()) st.cfg.set("seed", seed_s);
    st.seed = st.cfg.get_u64("seed");
    st.out = out;
    fs::create_directories(st.out);
    st.manifest.command = sub->get_name();
    st.manifest.argv.assign(args.begin() + 1, args.end());
    st.manifest.seed = st.seed;
    st.manifest.config = st.cfg;
    const std::string name = sub->get_name();
    if (name == "gen-toy-data") cmd_gen_toy_data(st);
    else if (name == "cluster") cmd_cluster(st);
    else if (name == "train") cmd_train(st);
    else if (name == "inpaint") cmd_inpaint(st);
    else if (name == "stylize") cmd_stylize(st);
    else if (name == "eval") cmd_eval(st);
    else if (name == "seg-train") cmd_seg_train(st);
    else if (name == "seg-test") cmd_seg_test(st);
    else cmd_report(st);
    st.manifest.wall_clock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    st.manifest.finalize(st.out);
    return 0;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "runtime error: " << e.what() << '\n';
    return 2;
  }
}

}  // namespace lesiongen
