#include <gtest/gtest.h>

#include <cstdio>
#include <fstream>
#include <sstream>

#include "noiseprint/noiseprint.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;
using namespace noiseprint;

namespace {

struct Run {
  int status = -1;
  std::string output;
};

Run run(const std::string& args) {
  const std::string cmd = std::string(NOISEPRINT_CLI) + " --quiet " + args + " 2>&1";
  Run r;
  FILE* p = popen(cmd.c_str(), "r");
  if (!p) return r;
  char buf[4096];
  while (std::size_t n = fread(buf, 1, sizeof buf, p)) r.output.append(buf, n);
  const int st = pclose(p);
  r.status = WIFEXITED(st) ? WEXITSTATUS(st) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

const std::string kSmall =
    " --models 3 --train-models 2 --devices-per-model 2 --images-per-device 6 --n-reference 4 --forged 4"
    " --width 96 --height 96 --region-min 16 --region-max 40";

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = testutil::temp_dir("cli");
    const auto r = run("simulate --out " + (dir_ / "ds").string() + kSmall);
    ASSERT_EQ(r.status, 0) << r.output;
  }
  static fs::path manifest() { return dir_ / "ds" / "manifest.txt"; }
  static fs::path dir_;
};

fs::path Cli::dir_;

}  // namespace

TEST_F(Cli, HelpShowsDefaultsForEverySubcommand) {
  const std::vector<std::pair<std::string, std::string>> expect{
      {"simulate", "--seed UINT [1]"},     {"pretrain", "--iterations"}, {"train", "--iterations"},
      {"estimate", "--n-ref INT [50]"},    {"localize", "--window INT:POSITIVE [64]"},
      {"evaluate", "--roc-points"},        {"bench", "--n-refs"},        {"render", "--out"}};
  for (const auto& [cmd, needle] : expect) {
    const auto r = run(cmd + " --help");
    EXPECT_EQ(r.status, 0) << cmd;
    EXPECT_NE(r.output.find(needle), std::string::npos) << cmd << "\n" << r.output;
    EXPECT_NE(r.output.find("--seed"), std::string::npos) << cmd;
  }
  EXPECT_NE(run("train --help").output.find("--lr FLOAT ["), std::string::npos);
}

TEST_F(Cli, UsageErrorsExitWithTwo) {
  EXPECT_EQ(run("").status, 2);
  EXPECT_EQ(run("simulate --no-such-option").status, 2);
  EXPECT_EQ(run("evaluate").status, 2);
}

TEST_F(Cli, SimulateIsSeedDeterministic) {
  const auto a = dir_ / "sa", b = dir_ / "sb", c = dir_ / "sc";
  ASSERT_EQ(run("simulate --seed 7 --out " + a.string() + kSmall).status, 0);
  ASSERT_EQ(run("simulate --seed 7 --out " + b.string() + kSmall).status, 0);
  ASSERT_EQ(run("simulate --seed 8 --out " + c.string() + kSmall).status, 0);
  EXPECT_EQ(slurp(a / "manifest.txt"), slurp(b / "manifest.txt"));
  EXPECT_TRUE(slurp(a / "forged" / "f000.pgm") == slurp(b / "forged" / "f000.pgm"));
  EXPECT_FALSE(slurp(a / "forged" / "f000.pgm") == slurp(c / "forged" / "f000.pgm"));
}

TEST_F(Cli, RefusesNonEmptyOutputWithoutForce) {
  const auto out = dir_ / "occupied";
  fs::create_directories(out);
  std::ofstream(out / "keep.txt") << "x";
  const auto r = run("simulate --out " + out.string() + kSmall);
  EXPECT_NE(r.status, 0);
  EXPECT_TRUE(fs::exists(out / "keep.txt"));
  EXPECT_EQ(run("--force simulate --out " + out.string() + kSmall).status, 0);
  EXPECT_TRUE(fs::exists(out / "manifest.txt"));
  EXPECT_FALSE(fs::exists(out / "keep.txt"));
}

TEST_F(Cli, ConfigFileAndCommandLinePrecedence) {
  const auto cfg = dir_ / "cfg.toml";
  std::ofstream(cfg) << "[simulate]\nwidth = 80\nheight = 72\n";
  ASSERT_EQ(run("--config " + cfg.string() + " simulate --out " + (dir_ / "c1").string() + kSmall).status, 0);
  // kSmall sets 96x96 on the command line, which beats the file.
  auto m = load_manifest(dir_ / "c1" / "manifest.txt");
  EXPECT_EQ(m.setting("width"), "96");
  std::string without = kSmall;
  without = without.substr(0, without.find(" --width"));
  ASSERT_EQ(run("--config " + cfg.string() + " simulate --out " + (dir_ / "c2").string() + without +
                " --region-min 16 --region-max 30")
                .status,
            0);
  m = load_manifest(dir_ / "c2" / "manifest.txt");
  EXPECT_EQ(m.setting("width"), "80");
  EXPECT_EQ(m.setting("height"), "72");
}

TEST_F(Cli, OutRootPlacesRelativeOutputs) {
  const auto root = dir_ / "root";
  fs::create_directories(root);
  ASSERT_EQ(run("--out-root " + root.string() + " simulate --out rel" + kSmall).status, 0);
  EXPECT_TRUE(fs::exists(root / "rel" / "manifest.txt"));
}

TEST_F(Cli, SizeMismatchNamesBothSizesAndWritesNothing) {
  const auto ref_dir = dir_ / "mismatch_refs";
  ASSERT_EQ(run("estimate --method prnu --n-ref 2 --manifest " + manifest().string() + " --out " + ref_dir.string()).status, 0);
  fs::path ref;
  for (const auto& e : fs::directory_iterator(ref_dir))
    if (e.path().extension() == ".fp") ref = e.path();
  ASSERT_FALSE(ref.empty());
  const auto small = dir_ / "small.pgm";
  write_pgm(small, Plane(64, 80, 0.5f));
  const auto out = dir_ / "mismatch_out";
  const auto r = run("localize --reference " + ref.string() + " --image " + small.string() + " --out " + out.string());
  EXPECT_EQ(r.status, 3) << r.output;
  EXPECT_NE(r.output.find("error: invalid_input"), std::string::npos) << r.output;
  EXPECT_NE(r.output.find("64x80"), std::string::npos) << r.output;
  EXPECT_NE(r.output.find("96x96"), std::string::npos) << r.output;
  EXPECT_FALSE(fs::exists(out));
  EXPECT_FALSE(fs::exists(out.string() + ".partial"));
}

TEST_F(Cli, MissingInputIsReported) {
  const auto r = run("evaluate --manifest " + (dir_ / "nope" / "manifest.txt").string());
  EXPECT_NE(r.status, 0);
  EXPECT_EQ(r.output.rfind("error: ", 0), 0u) << r.output;
}

TEST_F(Cli, PrnuPipelineEvaluateIsRepeatable) {
  const auto refs = dir_ / "prnu_refs", heat = dir_ / "prnu_heat";
  ASSERT_EQ(run("estimate --method prnu --n-ref 4 --manifest " + manifest().string() + " --out " + refs.string()).status, 0);
  const auto loc = run("localize --references " + refs.string() + " --manifest " + manifest().string() + " --window 32 --out " +
                       heat.string() + " --threshold 0");
  ASSERT_EQ(loc.status, 0) << loc.output;
  EXPECT_TRUE(fs::exists(heat / "index.txt"));
  EXPECT_TRUE(fs::exists(heat / "f000_heat.png.meta"));
  EXPECT_TRUE(fs::exists(heat / "f000_decision.pgm"));
  const auto r1 = dir_ / "report1.txt", r2 = dir_ / "report2.txt";
  ASSERT_EQ(run("evaluate --manifest " + manifest().string() + " --heatmaps " + heat.string() + " --out " + r1.string()).status, 0);
  ASSERT_EQ(run("evaluate --manifest " + manifest().string() + " --heatmaps " + heat.string() + " --out " + r2.string()).status, 0);
  const auto text = slurp(r1);
  EXPECT_EQ(text, slurp(r2));
  const auto cells = parse_reports(text);
  ASSERT_EQ(cells.size(), 1u);
  EXPECT_EQ(cells[0].method, "prnu");
  EXPECT_EQ(cells[0].n_reference, 4);
  ASSERT_EQ(run("render --report " + r1.string() + " --out " + (dir_ / "roc.png").string()).status, 0);
  EXPECT_EQ(read_png(dir_ / "roc.png").width, 400);
}

TEST_F(Cli, TrainEstimateLocalizeWithNetwork) {
  const auto w = dir_ / "np.bin", log = dir_ / "log.csv", ck = dir_ / "ck.bin";
  const std::string arch = " --depth 3 --channels 4";
  const auto t = run("train --manifest " + manifest().string() + arch + " --iterations 4 --validate-every 2 --sets 4 --patch 24"
                     " --validation-batches 1 --out " + w.string() + " --log " + log.string() + " --checkpoint " + ck.string());
  ASSERT_EQ(t.status, 0) << t.output;
  EXPECT_TRUE(fs::exists(w));
  EXPECT_TRUE(fs::exists(ck));
  EXPECT_NE(slurp(log).find('\n'), std::string::npos);
  const auto resumed = run("train --manifest " + manifest().string() + arch + " --iterations 2 --validate-every 2 --sets 4"
                           " --patch 24 --validation-batches 1 --resume " + ck.string() + " --out " +
                           (dir_ / "np2.bin").string() + " --log " + (dir_ / "log2.csv").string());
  ASSERT_EQ(resumed.status, 0) << resumed.output;

  const auto refs = dir_ / "np_refs", heat = dir_ / "np_heat";
  ASSERT_EQ(run("estimate --method noiseprint --n-ref 3 --weights " + w.string() + " --manifest " + manifest().string() +
                " --out " + refs.string())
                .status,
            0);
  const auto loc = run("localize --references " + refs.string() + " --weights " + w.string() + " --manifest " +
                       manifest().string() + " --window 32 --out " + heat.string());
  ASSERT_EQ(loc.status, 0) << loc.output;
  const auto r = run("evaluate --manifest " + manifest().string() + " --heatmaps " + heat.string() + " --out " +
                     (dir_ / "np_report.txt").string());
  ASSERT_EQ(r.status, 0) << r.output;
  EXPECT_EQ(parse_reports(slurp(dir_ / "np_report.txt")).at(0).method, "noiseprint");
}

TEST_F(Cli, WrongWeightsAreAFormatError) {
  const auto bad = dir_ / "bad.bin";
  std::ofstream(bad) << "not weights";
  const auto r = run("estimate --method noiseprint --weights " + bad.string() + " --manifest " + manifest().string() +
                     " --out " + (dir_ / "bad_refs").string());
  EXPECT_EQ(r.status, 4) << r.output;
  EXPECT_FALSE(fs::exists(dir_ / "bad_refs"));
}

TEST_F(Cli, BenchWritesOneCellPerMethodAndCount) {
  const auto out = dir_ / "bench.txt";
  const auto r = run("bench --manifest " + manifest().string() + " --methods prnu --n-refs 1 4 --window 32 --out " +
                     out.string() + " --roc-png " + (dir_ / "bench.png").string());
  ASSERT_EQ(r.status, 0) << r.output;
  const auto cells = parse_reports(slurp(out));
  ASSERT_EQ(cells.size(), 2u);
  EXPECT_EQ(cells[0].n_reference, 1);
  EXPECT_EQ(cells[1].n_reference, 4);
  EXPECT_TRUE(fs::exists(dir_ / "bench.png"));
}
