#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include <json.hpp>

namespace fs = std::filesystem;

namespace {

// Runs the CLI with `args` in `dir`, output discarded; returns the exit code.
int run(const fs::path& dir, const std::string& args) {
  const std::string cmd =
      "cd '" + dir.string() + "' && '" + std::string(RGPB_CLI_PATH) + "' " + args + " >out.txt 2>err.txt";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("rgpb_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::size_t count_lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

nlohmann::json without_wall_time(nlohmann::json j) {
  if (j.is_object()) {
    j.erase("wall_time_seconds");
    for (auto& [key, value] : j.items()) value = without_wall_time(value);
  }
  return j;
}

}  // namespace

TEST(Cli, HelpAndUsageErrors) {
  const fs::path dir = fresh_dir("usage");
  EXPECT_EQ(run(dir, "--help"), 0);
  EXPECT_EQ(run(dir, "train --help"), 0);
  EXPECT_EQ(run(dir, "no-such-command"), 2);
  EXPECT_EQ(run(dir, "verify-grad --beta 0"), 2);
  EXPECT_EQ(run(dir, "verify-grad --method bogus"), 2);
  EXPECT_EQ(run(dir, "synth --regime low_eps"), 2);  // --out missing
  EXPECT_EQ(run(dir, "train --data missing.jsonl --out t"), 2);
}

TEST(Cli, VerifyGradWritesOneLinePerMethod) {
  const fs::path dir = fresh_dir("verify");
  ASSERT_EQ(run(dir, "verify-grad --trials 5 --out r"), 0);
  const std::string report = slurp(dir / "r" / "grad_report.jsonl");
  ASSERT_EQ(count_lines(report), 4u);
  std::istringstream lines(report);
  std::string line;
  while (std::getline(lines, line)) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_TRUE(j["pass"].get<bool>()) << line;
    EXPECT_FALSE(j["checks"].empty());
  }
  EXPECT_TRUE(fs::exists(dir / "r" / "manifest.json"));
}

TEST(Cli, LandscapeFigureOneWritesSixSurfaces) {
  const fs::path dir = fresh_dir("fig1");
  ASSERT_EQ(run(dir, "landscape --figure 1 --out f"), 0);
  std::size_t csv = 0;
  for (const auto& e : fs::directory_iterator(dir / "f")) csv += e.path().extension() == ".csv";
  EXPECT_EQ(csv, 6u);
  EXPECT_EQ(count_lines(slurp(dir / "f" / "loss_ul_beta1_f_minus.csv")), 101u);
}

TEST(Cli, ExmateCoefficientIsConstantAlongEpsilon) {
  const fs::path dir = fresh_dir("fig2");
  ASSERT_EQ(run(dir, "landscape --figure 2 --method exmate --points 40 --out f"), 0);
  std::istringstream in(slurp(dir / "f" / "coeff_exmate_beta1.csv"));
  std::string line;
  std::getline(in, line);
  ASSERT_EQ(line, "u,epsilon,coeff,valid");
  std::map<std::string, std::string> coeff_by_u;
  std::size_t valid = 0;
  while (std::getline(in, line)) {
    std::istringstream row(line);
    std::string u, eps, coeff, ok;
    std::getline(row, u, ',');
    std::getline(row, eps, ',');
    std::getline(row, coeff, ',');
    std::getline(row, ok, ',');
    if (ok != "1") continue;
    ++valid;
    const auto [it, inserted] = coeff_by_u.emplace(u, coeff);
    if (!inserted) EXPECT_EQ(it->second, coeff) << "u " << u;
  }
  EXPECT_GT(valid, 0u);
}

TEST(Cli, SynthTrainEvalOnIdenticalPairs) {
  const fs::path dir = fresh_dir("flow");
  ASSERT_EQ(run(dir, "synth --regime low_eps --perturb 0 --n 8 --seed 3 --out d"), 0);
  ASSERT_EQ(run(dir, "train --data d --loss exmate --epochs 3 --out t"), 0);
  ASSERT_EQ(run(dir, "eval --checkpoint t/model.ckpt --data d --out e"), 0);
  const auto metrics = nlohmann::json::parse(slurp(dir / "e" / "metrics.json"));
  EXPECT_EQ(metrics["agility"].get<double>(), 0.0);
  EXPECT_GE(metrics["perplexity"].get<double>(), 1.0);
  EXPECT_EQ(count_lines(slurp(dir / "t" / "metrics.csv")), 5u);  // header + epochs 0..3
}

TEST(Cli, TrainIsIdempotent) {
  const fs::path dir = fresh_dir("idem");
  ASSERT_EQ(run(dir, "synth --regime high_eps --n 16 --seed 2 --out d"), 0);
  ASSERT_EQ(run(dir, "train --data d --schedule mle:2,dpo@0.5:2 --ref frozen_copy --seed 4 --out a"), 0);
  ASSERT_EQ(run(dir, "train --data d --schedule mle:2,dpo@0.5:2 --ref frozen_copy --seed 4 --out b"), 0);
  EXPECT_EQ(slurp(dir / "a" / "metrics.csv"), slurp(dir / "b" / "metrics.csv"));
  EXPECT_EQ(slurp(dir / "a" / "model.ckpt"), slurp(dir / "b" / "model.ckpt"));
  auto ma = without_wall_time(nlohmann::json::parse(slurp(dir / "a" / "manifest.json")));
  auto mb = without_wall_time(nlohmann::json::parse(slurp(dir / "b" / "manifest.json")));
  ma["config"].erase("out");
  mb["config"].erase("out");
  ma.erase("outputs");
  mb.erase("outputs");
  EXPECT_EQ(ma["run"], mb["run"]);
  EXPECT_EQ(ma["config"], mb["config"]);
  EXPECT_NE(slurp(dir / "a" / "metrics.csv").find("# stage 1 begins at epoch 2"), std::string::npos);
}

TEST(Cli, ConfigFileAndPrecedence) {
  const fs::path dir = fresh_dir("config");
  ASSERT_EQ(run(dir, "synth --n 8 --out d"), 0);
  std::ofstream(dir / "run.cfg") << "# comment\nloss=ul\nbeta=0.25\nepochs=2\n";
  ASSERT_EQ(run(dir, "train --config run.cfg --data d --beta 0.5 --out t"), 0);
  const auto m = nlohmann::json::parse(slurp(dir / "t" / "manifest.json"));
  EXPECT_EQ(m["config"]["loss"], "ul");
  EXPECT_EQ(m["config"]["beta"], "0.5");
  EXPECT_EQ(m["config"]["epochs"], "2");
  std::ofstream(dir / "bad.cfg") << "no_such_key=1\n";
  EXPECT_EQ(run(dir, "train --config bad.cfg --data d --out t2"), 2);
}

TEST(Cli, CompareExitReflectsAssertions) {
  const fs::path dir = fresh_dir("compare");
  ASSERT_EQ(run(dir, "compare --regime low_eps --seeds 1 --assert dpo_agility_near_zero --out c"), 0);
  const std::string csv = slurp(dir / "c" / "comparison.csv");
  EXPECT_NE(csv.find("median"), std::string::npos);
  EXPECT_EQ(run(dir, "compare --regime low_eps --seeds 1 --assert no_such_assertion --out c2"), 2);
}
