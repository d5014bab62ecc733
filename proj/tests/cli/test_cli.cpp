#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "gem/synthenv.hpp"

namespace fs = std::filesystem;

namespace {

using Row = std::map<std::string, std::string>;

fs::path g_dir;

struct Outcome {
  int code;
  std::string out;
};

Outcome gem(const std::string& args, const std::string& env = "") {
  const fs::path out = g_dir / "last_stdout.txt";
  const std::string cmd = env + " " + GEM_BIN + " " + args + " > " + out.string() + " 2> " + (g_dir / "last_stderr.txt").string();
  const int status = std::system(cmd.c_str());
  std::ifstream in(out);
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1,
          std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>())};
}

std::string p(const std::string& name) { return (g_dir / name).string(); }

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> cells;
  std::string cur;
  bool quoted = false;
  for (char c : line) {
    if (c == '"') quoted = !quoted;
    else if (c == ',' && !quoted) cells.push_back(std::exchange(cur, {}));
    else cur += c;
  }
  cells.push_back(cur);
  return cells;
}

std::vector<Row> parse_csv(const std::string& text) {
  std::istringstream in(text);
  std::vector<std::string> header;
  std::vector<Row> rows;
  for (std::string line; std::getline(in, line);) {
    if (line.empty() || line[0] == '#') continue;
    if (header.empty()) {
      header = split(line);
      continue;
    }
    const auto cells = split(line);
    Row r;
    for (std::size_t i = 0; i < header.size() && i < cells.size(); ++i) r[header[i]] = cells[i];
    rows.push_back(r);
  }
  return rows;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::vector<Row> read_csv(const std::string& path) { return parse_csv(slurp(path)); }

double d(const Row& r, const std::string& k) { return std::stod(r.at(k)); }

// Short training leaves the critics rough enough that the injected noise
// produces measurable support failures.
const std::string kShort = "--steps 1000 --hidden 32,32 --behavior-steps 1000";

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    g_dir = fs::temp_directory_path() / ("gem_cli_" + std::to_string(::getpid()));
    fs::remove_all(g_dir);
    fs::create_directories(g_dir);
    ASSERT_EQ(gem("gen-data --env bandit --n 4000 --seed 2 --out " + p("bandit.bin")).code, 0);
    ASSERT_EQ(gem("train --dataset " + p("bandit.bin") + " --steps 0 --out " + p("zero.ckpt")).code, 0);
    ASSERT_EQ(gem("train --env bandit --seed 1 " + kShort + " --out " + p("short.ckpt")).code, 0);
  }
  static void TearDownTestSuite() { fs::remove_all(g_dir); }
};

TEST_F(Cli, ZeroStepCheckpointIsEvaluable) {
  const Outcome r = gem("eval --checkpoint " + p("zero.ckpt") + " --N 0");
  ASSERT_EQ(r.code, 0);
  const auto rows = parse_csv(r.out);
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_TRUE(std::isfinite(d(rows[0], "score")));
  EXPECT_EQ(d(rows[0], "violation_rate"), 0.0);
  EXPECT_EQ(rows[0].at("episodes"), "50");
}

TEST_F(Cli, AnchorOnlyPolicyIsDeterministic) {
  const auto a = parse_csv(gem("eval --checkpoint " + p("short.ckpt") + " --N 0 --seed 3").out);
  const auto b = parse_csv(gem("eval --checkpoint " + p("short.ckpt") + " --N 0 --seed 4").out);
  ASSERT_EQ(a.size(), 1u);
  ASSERT_EQ(b.size(), 1u);
  EXPECT_NE(a[0].at("config_hash"), "");
  EXPECT_EQ(a[0].at("config_hash"), b[0].at("config_hash"));
}

TEST_F(Cli, SameFlagsAndSeedGiveIdenticalCheckpoints) {
  const std::string flags = " --dataset " + p("bandit.bin") + " --steps 50 --hidden 8,8 --behavior-steps 20 --seed 5";
  ASSERT_EQ(gem("train" + flags + " --out " + p("det1.ckpt")).code, 0);
  ASSERT_EQ(gem("train" + flags + " --out " + p("det2.ckpt")).code, 0);
  EXPECT_EQ(slurp(p("det1.ckpt")), slurp(p("det2.ckpt")));
}

TEST_F(Cli, BanditTrainingLossesTrendDown) {
  const Outcome r = gem("train --env bandit --seed 0 --steps 20000 --hidden 16,16 --out " + p("long.ckpt"));
  ASSERT_EQ(r.code, 0);
  double nll_start = 0, nll_end = 0;
  ASSERT_EQ(std::sscanf(r.out.c_str(), "behavior nll %lf -> %lf", &nll_start, &nll_end), 2) << r.out;
  EXPECT_LT(nll_end, nll_start);

  const auto log = read_csv(p("long.ckpt.log.csv"));
  ASSERT_GE(log.size(), 200u);
  const std::size_t q = log.size() / 4;
  double first = 0, last = 0;
  for (std::size_t i = 0; i < q; ++i) {
    first += d(log[i], "critic_loss") / q;
    last += d(log[log.size() - 1 - i], "critic_loss") / q;
  }
  EXPECT_LT(last, first);
}

TEST_F(Cli, NoPwViolatesMoreThanFullUnderStress) {
  const std::string base = "eval --checkpoint " + p("short.ckpt") + " --N 1024 --critic-noise 0.5";
  const auto full = parse_csv(gem(base + " --variant full").out);
  const auto nopw = parse_csv(gem(base + " --variant no_pw").out);
  ASSERT_EQ(full.size(), 1u);
  ASSERT_EQ(nopw.size(), 1u);
  EXPECT_GT(d(nopw[0], "violation_rate"), d(full[0], "violation_rate"));
}

TEST_F(Cli, SupportModeDoesNotChangeCandidateSets) {
  const std::string base = "eval --checkpoint " + p("short.ckpt") + " --N 64 --seed 8 --episodes 30";
  ASSERT_EQ(gem(base + " --support-mode zscore --trace " + p("z.jsonl")).code, 0);
  ASSERT_EQ(gem(base + " --support-mode raw --trace " + p("r.jsonl")).code, 0);
  std::ifstream z(p("z.jsonl")), r(p("r.jsonl"));
  std::size_t lines = 0;
  for (std::string lz, lr; std::getline(z, lz) && std::getline(r, lr); ++lines) {
    const auto jz = nlohmann::json::parse(lz), jr = nlohmann::json::parse(lr);
    EXPECT_EQ(jz["state"], jr["state"]);
    EXPECT_EQ(jz["candidate_digest"], jr["candidate_digest"]);
  }
  EXPECT_EQ(lines, 30u);
}

TEST_F(Cli, IdenticalConfigAndSeedGiveIdenticalMetrics) {
  const std::string args = "eval --checkpoint " + p("short.ckpt") + " --N 16 --critic-noise 0.5 --seed 2";
  auto a = parse_csv(gem(args).out), b = parse_csv(gem(args).out);
  ASSERT_EQ(a.size(), 1u);
  ASSERT_EQ(b.size(), 1u);
  a[0].erase("steps_per_sec");
  b[0].erase("steps_per_sec");
  EXPECT_EQ(a[0], b[0]);
}

TEST_F(Cli, FlagsOverrideConfigFileOverrideDefaults) {
  std::ofstream(p("cfg.json")) << R"({"episodes": 7, "inference": {"N": 8, "lambda": 0.5}})";
  const auto rows = parse_csv(gem("eval --checkpoint " + p("short.ckpt") + " --config " + p("cfg.json") + " --N 16").out);
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0].at("N"), "16");
  EXPECT_EQ(rows[0].at("lambda"), "0.5");
  EXPECT_EQ(rows[0].at("episodes"), "7");
  EXPECT_EQ(rows[0].at("wp_end"), "0.4");
}

TEST_F(Cli, GemSeedOverridesSeedFlag) {
  const auto rows = parse_csv(gem("eval --checkpoint " + p("short.ckpt") + " --N 4 --seed 1", "GEM_SEED=11").out);
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0].at("seed"), "11");
}

TEST_F(Cli, ExitCodes) {
  EXPECT_EQ(gem("eval --checkpoint " + p("short.ckpt") + " --variant nope").code, 2);
  EXPECT_EQ(gem("ablate --checkpoint " + p("short.ckpt")).code, 2);
  EXPECT_EQ(gem("frobnicate").code, 2);
  EXPECT_EQ(gem("eval --checkpoint " + p("short.ckpt") + " --N 4", "GEM_SEED=abc").code, 2);
  EXPECT_EQ(gem("eval --checkpoint " + p("missing.ckpt")).code, 1);

  gem::OfflineDataset bad = gem::generate_dataset(gem::BimodalBandit(), 500, 1);
  bad.rewards.setConstant(1e300);
  bad.save(p("huge.bin"));
  EXPECT_EQ(gem("train --dataset " + p("huge.bin") + " --steps 20 --hidden 8 --behavior-steps 5 --out " + p("nan.ckpt")).code, 3);
  EXPECT_TRUE(fs::exists(p("nan.ckpt")));
  EXPECT_EQ(gem("eval --checkpoint " + p("nan.ckpt") + " --N 2 --episodes 2").code, 0);
}

TEST_F(Cli, AblateIsEvalWithVariant) {
  const std::string tail = " --checkpoint " + p("short.ckpt") + " --N 8 --variant no_lcb --seed 3";
  auto a = parse_csv(gem("ablate" + tail).out), e = parse_csv(gem("eval" + tail).out);
  ASSERT_EQ(a.size(), 1u);
  a[0].erase("steps_per_sec");
  e[0].erase("steps_per_sec");
  EXPECT_EQ(a[0], e[0]);
}

TEST_F(Cli, SweepCardinalityResumeAndFrontier) {
  const std::string grid = "sweep --env bandit --seeds 0,1,2 --N 1024 --wp-end 0,0.2,0.4,1 --critic-noise 0.5 " + kShort +
                           " --out " + p("sweep/frontier.csv");
  ASSERT_EQ(gem(grid).code, 0);
  const auto rows = read_csv(p("sweep/frontier.csv"));
  ASSERT_EQ(rows.size(), 12u);
  std::map<double, double> viol;
  for (const auto& r : rows) {
    EXPECT_EQ(r.at("status"), "ok");
    viol[d(r, "wp_end")] += d(r, "violation_rate") / 3.0;
  }
  ASSERT_EQ(viol.size(), 4u);
  for (auto it = std::next(viol.begin()); it != viol.end(); ++it) {
    EXPECT_LE(it->second, std::prev(it)->second) << "wp_end " << it->first;
  }
  EXPECT_GT(viol.begin()->second, 0.0);

  // Rerun: nothing is recomputed or appended.
  const std::string before = slurp(p("sweep/frontier.csv"));
  const Outcome again = gem(grid);
  EXPECT_EQ(again.code, 0);
  EXPECT_EQ(slurp(p("sweep/frontier.csv")), before);

  // A budget grid reuses the per-seed checkpoints: 3 budgets x 3 seeds.
  ASSERT_EQ(gem("sweep --env bandit --seeds 0,1,2 --N 1,64,1024 " + kShort + " --workers 2 --out " + p("sweep/n.csv") +
                " --ckpt-dir " + p("sweep/checkpoints"))
                .code,
            0);
  EXPECT_EQ(read_csv(p("sweep/n.csv")).size(), 9u);
}

TEST_F(Cli, SweepRecordsPerCellFailuresAndContinues) {
  const std::string dir = p("sweepfail");
  const std::string grid = "sweep --env bandit --seeds 0,1 --steps 20 --hidden 8 --behavior-steps 5 --episodes 3 "
                           "--dataset-size 200 --out " + dir + "/s.csv";
  ASSERT_EQ(gem(grid + " --N 1").code, 0);
  for (const auto& e : fs::directory_iterator(dir + "/checkpoints"))
    if (e.path().string().find("seed1") != std::string::npos) std::ofstream(e.path()) << "garbage";
  EXPECT_EQ(gem(grid + " --N 2,4").code, 1);
  const auto rows = read_csv(dir + "/s.csv");
  std::size_t ok = 0, failed = 0;
  for (const auto& r : rows) {
    if (r.at("status") == "ok") ++ok;
    if (r.at("status") == "failed") {
      ++failed;
      EXPECT_EQ(r.at("seed"), "1");
      EXPECT_FALSE(r.at("error").empty());
    }
  }
  EXPECT_EQ(ok, 4u);  // two from the first run, two for seed 0 now
  EXPECT_EQ(failed, 2u);
}

TEST_F(Cli, DiagnoseNllGap) {
  const auto k1 = parse_csv(gem("diagnose nll-gap --dataset " + p("bandit.bin") + " --K 1 --fit-steps 200").out);
  ASSERT_EQ(k1.size(), 1u);
  EXPECT_EQ(d(k1[0], "gap"), 0.0);
  const auto k2 = parse_csv(gem("diagnose nll-gap --dataset " + p("bandit.bin") + " --K 2 --fit-steps 1500").out);
  ASSERT_EQ(k2.size(), 1u);
  EXPECT_GT(d(k2[0], "gap"), 0.0);
  const auto ck = parse_csv(gem("diagnose nll-gap --dataset " + p("bandit.bin") + " --checkpoint " + p("short.ckpt")).out);
  ASSERT_EQ(ck.size(), 1u);
  EXPECT_EQ(ck[0].at("K"), "4");
}

TEST_F(Cli, DiagnoseExtremeValueHasEmpiricalAndBound) {
  const auto rows = parse_csv(gem("diagnose extreme-value --N 1,64,1023 --reps 2000").out);
  ASSERT_EQ(rows.size(), 3u);
  for (const auto& r : rows) {
    EXPECT_LE(d(r, "empirical_mean"), d(r, "bound"));
  }
  EXPECT_NEAR(d(rows[2], "bound"), 3.7233, 1e-4);
  EXPECT_EQ(gem("diagnose extreme-value --reps 10").code, 2);
}

TEST_F(Cli, ProfileTable) {
  const auto rows = parse_csv(gem("profile --checkpoint " + p("short.ckpt") + " --N-grid 1,64,2048 --steps 1000").out);
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[2].at("candidate_bytes"), std::to_string(2049 * 2 * 8));
  EXPECT_NEAR(d(rows[2], "candidate_bytes") / 1024.0, 32.0, 0.1);
  EXPECT_LE(d(rows[0], "latency_mean_ms"), 10.0 * d(rows[2], "latency_mean_ms"));
  for (const auto& r : rows) EXPECT_GT(d(r, "model_bytes"), 0.0);
}

TEST_F(Cli, GenDataIsReproducible) {
  ASSERT_EQ(gem("gen-data --env maze --n 500 --seed 4 --out " + p("m1.bin")).code, 0);
  ASSERT_EQ(gem("gen-data --env maze --n 500 --seed 4 --out " + p("m2.bin")).code, 0);
  EXPECT_EQ(slurp(p("m1.bin")), slurp(p("m2.bin")));
  EXPECT_EQ(slurp(p("m1.bin.json")), slurp(p("m2.bin.json")));
}

}  // namespace
