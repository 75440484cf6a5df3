#include <fstream>
#include <iterator>
#include <set>
#include <sstream>

#include "acceptance.hpp"
#include "lesiongen/io/manifest.hpp"

namespace fs = std::filesystem;

namespace lesiongen::acceptance {

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

std::set<std::string> tree(const fs::path& root) {
  std::set<std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) files.insert(fs::relative(e.path(), root).generic_string());
  }
  return files;
}

// Manifest text without timing and without the argv line, which names the
// config file on a rerun.
std::string comparable_manifest(const fs::path& p) {
  std::istringstream is(manifest_without_timing(p));
  std::string line, out;
  while (std::getline(is, line)) {
    if (line.rfind("argv", 0) != 0) out += line + "\n";
  }
  return out;
}

}  // namespace

Outcome criterion_reproducibility(Context& ctx) {
  const fs::path a = ctx.work / "repro/a", b = ctx.work / "repro/b";
  fs::remove_all(ctx.work / "repro");
  const fs::path log = ctx.work / "repro.log";
  auto A = [&](const char* s) { return (a / s).string(); };
  const std::vector<std::pair<std::string, std::vector<std::string>>> stages = {
      {"toy", {"gen-toy-data", "--count", "24", "--seed", "3"}},
      {"clu", {"cluster", "--data", A("toy"), "--k", "2", "--seed", "4"}},
      {"tr", {"train", "--data", A("toy"), "--registry", A("clu/registry.txt"), "--iterations", "5", "--full", "--seed", "5"}},
      {"inp", {"inpaint", "--data", A("toy"), "--registry", A("tr/registry.txt"), "--samples", "2", "--limit", "3", "--set",
               "inpaint.jump=2", "--set", "inpaint.resample=2", "--seed", "6"}},
      {"sty", {"stylize", "--data", A("toy"), "--inpainted", A("inp"), "--registry", A("tr/registry.txt"), "--seed", "7"}},
      {"ev", {"eval", "--data", A("toy"), "--sets", "Diff=" + A("inp") + ",Styled-Diff=" + A("sty"), "--set", "eval.ssim_pairs=5",
              "--seed", "8"}},
      {"seg", {"seg-train", "--data", A("toy"), "--limit", "3", "--synthetic", A("sty"), "--alpha", "0.5", "--r", "2", "--set", "aug.m=2", "--set",
               "seg.epochs=2", "--seed", "9"}},
      {"st", {"seg-test", "--checkpoint", A("seg/segnet.ckpt"), "--data", A("toy"), "--tag", "Real", "--seed", "10"}},
      {"rep", {"report", "--sets", A("ev") + "," + A("st"), "--seed", "11"}},
  };
  Outcome out;
  int identical = 0;
  for (const auto& [name, args] : stages) {
    std::vector<std::string> first = args;
    first.insert(first.end(), {"--out", (a / name).string()});
    if (run_cli(first, log) != 0) throw std::runtime_error("stage " + name + " failed (see repro.log)");
    const std::vector<std::string> rerun = {args[0], "--config", (a / name / "manifest.txt").string(), "--out", (b / name).string()};
    if (run_cli(rerun, log) != 0) throw std::runtime_error("rerun of " + name + " failed (see repro.log)");

    const auto files_a = tree(a / name), files_b = tree(b / name);
    int differing = files_a == files_b ? 0 : 1;
    for (const auto& f : files_a) {
      if (f != "manifest.txt" && files_b.count(f) && slurp(a / name / f) != slurp(b / name / f)) ++differing;
    }
    const bool manifest_same = comparable_manifest(a / name / "manifest.txt") == comparable_manifest(b / name / "manifest.txt");
    const bool same = differing == 0 && manifest_same;
    identical += same;
    out.note(args[0] + ": " + std::to_string(files_a.size() - 1) + " output files " + (differing ? "DIFFER" : "identical") +
             ", manifest " + (manifest_same ? "identical" : "DIFFERS") + " apart from timing and argv");
  }
  out.pass = identical == static_cast<int>(stages.size());
  out.summary = std::to_string(identical) + "/" + std::to_string(stages.size()) + " stages bit-identical when rerun from their manifest";
  return out;
}

}  // namespace lesiongen::acceptance
