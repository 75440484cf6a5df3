#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "lesiongen/tensor/tensor.hpp"

namespace lesiongen::acceptance {

inline constexpr std::uint64_t kSeed = 20240;

struct Outcome {
  bool pass = false;
  std::string summary;
  std::vector<std::string> details;

  void note(std::string line) { details.push_back(std::move(line)); }
};

/// Artifacts of the default toy run, built once through the CLI.
struct ToyRun {
  std::filesystem::path root;
  Tensor real;       // 348 training samples
  std::vector<std::string> real_ids;
  Tensor test;       // held-out toy samples, different seed
  Tensor diff;       // one inpainted output per real sample
  std::vector<std::string> diff_ids;
  Tensor styled;     // stylized diff
  Tensor noise;      // uniform color noise with the real masks
  Tensor pool_real;  // first kPoolSize real samples
  Tensor pool_styled;  // kPoolSamples styled outputs per pool sample, source-major
  double build_seconds = 0.0;
};

inline constexpr int kPoolSize = 32;
inline constexpr int kPoolSamples = 3;

struct Context {
  std::filesystem::path work;
  bool reuse = false;          // skip CLI stages whose manifest already exists
  int pipeline_iterations = 3000;
  std::vector<std::string> style_overrides;  // key=value pairs passed to the stylize stages

  const ToyRun& toy_run();

 private:
  std::shared_ptr<ToyRun> run_;
};

/// Runs a CLI subcommand with stdout and stderr appended to `log`. Returns the exit code.
int run_cli(std::vector<std::string> args, const std::filesystem::path& log);

Outcome criterion_autodiff(Context& ctx);
Outcome criterion_schedule(Context& ctx);
Outcome criterion_oracle_sampler(Context& ctx);
Outcome criterion_toy_training(Context& ctx);
Outcome criterion_repaint(Context& ctx);
Outcome criterion_styling(Context& ctx);
Outcome criterion_metrics(Context& ctx);
Outcome criterion_pipeline_fid(Context& ctx);
Outcome criterion_seg_ordering(Context& ctx);
Outcome criterion_augmentation(Context& ctx);
Outcome criterion_reproducibility(Context& ctx);

/// Plan enumeration half of the RePaint criterion; adds a detail line.
bool repaint_plan_matches(Outcome& out);

std::string fmt(double v, int precision = 4);
/// Fixed-point seconds, one decimal.
std::string secs(double v);

}  // namespace lesiongen::acceptance
