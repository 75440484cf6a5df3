#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "cli.hpp"
#include "lesiongen/cluster/cluster.hpp"
#include "lesiongen/io/dataset.hpp"
#include "lesiongen/io/manifest.hpp"

namespace fs = std::filesystem;
using namespace lesiongen;

namespace {

int run(std::vector<std::string> args) {
  args.insert(args.begin(), "lesiongen");
  return run_command(args);
}

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = fs::temp_directory_path() / "lesiongen_cli_test";
    fs::remove_all(root_);
    fs::create_directories(root_);
    ASSERT_EQ(run({"gen-toy-data", "--count", "24", "--seed", "3", "--out", p("toy")}), 0);
  }
  static void TearDownTestSuite() { fs::remove_all(root_); }
  static std::string p(const std::string& rel) { return (root_ / rel).string(); }
  static fs::path root_;
};

fs::path Cli::root_;

}  // namespace

TEST_F(Cli, ClusterWritesNonEmptyRegistry) {
  ASSERT_EQ(run({"cluster", "--data", p("toy"), "--k", "4", "--seed", "1", "--out", p("clu")}), 0);
  const ClusterRegistry reg = load_registry(p("clu/registry.txt"));
  EXPECT_EQ(reg.k, 4);
  for (int j = 0; j < 4; ++j) EXPECT_FALSE(reg.members(j).empty());
  EXPECT_TRUE(fs::exists(p("clu/membership.csv")));
  EXPECT_TRUE(fs::exists(p("clu/manifest.txt")));
}

TEST_F(Cli, InpaintGivesThreeOutputsPerSource) {
  ASSERT_EQ(run({"cluster", "--data", p("toy"), "--k", "2", "--seed", "1", "--out", p("c2")}), 0);
  ASSERT_EQ(run({"train", "--data", p("toy"), "--registry", p("c2/registry.txt"), "--iterations", "5", "--seed", "1", "--out", p("tr")}), 0);
  ASSERT_EQ(run({"inpaint", "--data", p("toy"), "--registry", p("tr/registry.txt"), "--samples", "3", "--limit", "2", "--set", "inpaint.jump=2",
                 "--set", "inpaint.resample=1", "--seed", "2", "--out", p("inp")}),
            0);
  const Dataset d = load_dataset(p("inp"), 32);
  EXPECT_EQ(d.samples.dim(0), 6);
  int per_source = 0;
  for (const auto& id : d.ids) per_source += id.rfind("toy_00000_s", 0) == 0;
  EXPECT_EQ(per_source, 3);
}

TEST_F(Cli, SameArgvSameManifest) {
  for (const char* out : {"g1", "g2"}) {
    ASSERT_EQ(run({"cluster", "--data", p("toy"), "--k", "3", "--seed", "5", "--out", p("same")}), 0);
    fs::rename(p("same"), p(out));
  }
  EXPECT_EQ(manifest_without_timing(p("g1/manifest.txt")), manifest_without_timing(p("g2/manifest.txt")));
}

TEST_F(Cli, RerunFromManifestReproducesOutputs) {
  ASSERT_EQ(run({"gen-toy-data", "--count", "5", "--shifted", "--seed", "11", "--out", p("shift1")}), 0);
  ASSERT_EQ(run({"gen-toy-data", "--config", p("shift1/manifest.txt"), "--out", p("shift2")}), 0);
  auto outputs = [](const std::string& m) {
    std::string s;
    for (std::istringstream is(manifest_without_timing(m)); std::getline(is, s);) {
      if (s.rfind("output.", 0) == 0) return true;
    }
    return false;
  };
  EXPECT_TRUE(outputs(p("shift1/manifest.txt")));
  std::string a = manifest_without_timing(p("shift1/manifest.txt")), b = manifest_without_timing(p("shift2/manifest.txt"));
  // argv differs (different flags); everything from the config down must match.
  EXPECT_EQ(a.substr(a.find("config.")), b.substr(b.find("config.")));
}

TEST_F(Cli, ExitCodes) {
  EXPECT_EQ(run({"cluster", "--data", p("toy"), "--bogus", "1", "--out", p("x")}), 1);
  EXPECT_EQ(run({"frobnicate", "--out", p("x")}), 1);
  EXPECT_EQ(run({"cluster", "--data", p("missing"), "--out", p("x")}), 1);
  EXPECT_EQ(run({"cluster", "--data", p("toy"), "--set", "cluster.k=zero", "--out", p("x")}), 1);
  EXPECT_EQ(run({"cluster", "--data", p("toy"), "--out", p("x"), "--config", p("no-such.cfg")}), 1);
  fs::create_directories(p("bad/images"));
  fs::create_directories(p("bad/masks"));
  std::ofstream(p("bad/images/a.ppm")) << "P6\n4 4\n255\nxx";
  std::ofstream(p("bad/masks/a.pgm")) << "P5\n4 4\n255\n";
  EXPECT_EQ(run({"cluster", "--data", p("bad"), "--out", p("x")}), 2);
}
