#include <gtest/gtest.h>

#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include "json.hpp"
#include "otce/otce.hpp"
#include "test_util.hpp"

using nlohmann::json;
using namespace otce;

namespace {

struct CliRun {
  int exit_code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class Cli : public ::testing::Test {
 protected:
  otce::testing::TempDir dir;

  CliRun run(const std::string& args) {
    const auto out = dir / "stdout.txt", err = dir / "stderr.txt";
    const std::string cmd = std::string("\"") + OTCE_CLI_PATH + "\" " + args + " > \"" + out.string() + "\" 2> \"" +
                            err.string() + "\"";
    const int status = std::system(cmd.c_str());
    return CliRun{WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(out), slurp(err)};
  }

  json run_ok(const std::string& args) {
    const auto r = run(args);
    EXPECT_EQ(r.exit_code, 0) << r.err;
    return json::parse(r.out);
  }

  std::string write_set(const FeatureSet& s, const std::string& name) {
    const auto p = dir / name;
    io::write_feature_file(s, p);
    return "\"" + p.string() + "\"";
  }

  std::string write_text(const std::string& text, const std::string& name) {
    std::ofstream(dir / name, std::ios::binary) << text;
    return "\"" + (dir / name).string() + "\"";
  }
};

FeatureSet separated_set(std::uint64_t seed) {
  PhiloxStream rng(seed);
  return FeatureSet(otce::testing::separated_points(12, 1.0), otce::testing::random_labels(12, 3, rng), 3);
}

}  // namespace

TEST_F(Cli, ScoreIdenticalFilesNearZero) {
  const auto f = write_set(separated_set(1), "a.ftrs");
  const auto report = run_ok("score --metric f-otce --source " + f + " --target " + f + " --lambda 1e-3 --max-iter 100000");
  EXPECT_EQ(report["command"], "score");
  EXPECT_NEAR(report["results"]["value"].get<double>(), 0.0, 1e-3);
  EXPECT_EQ(report["tool_version"], kVersion);
  EXPECT_TRUE(report["timing_ms"].contains("score"));
  EXPECT_EQ(report["config"]["lambda"], 1e-3);
}

TEST_F(Cli, JcGammaOneEqualsFOtce) {
  const auto s = write_set(otce::testing::random_set(20, 3, 2, 1), "s.ftrs");
  const auto t = write_set(otce::testing::random_set(15, 3, 3, 2), "t.ftrs");
  const auto f = run_ok("score --metric f-otce --source " + s + " --target " + t);
  const auto jc = run_ok("score --metric jc-otce --gamma 1 --source " + s + " --target " + t);
  EXPECT_EQ(f["results"]["value"].get<double>(), jc["results"]["value"].get<double>());
  EXPECT_EQ(jc["results"]["gamma"], 1.0);
}

TEST_F(Cli, ReportsAreDeterministicModuloTiming) {
  const auto s = write_set(otce::testing::random_set(20, 3, 2, 1), "s.ftrs");
  const auto t = write_set(otce::testing::random_set(15, 3, 3, 2), "t.ftrs");
  auto a = run_ok("score --metric jc-otce --source " + s + " --target " + t);
  auto b = run_ok("score --metric jc-otce --source " + s + " --target " + t);
  a.erase("timing_ms");
  b.erase("timing_ms");
  EXPECT_EQ(a.dump(), b.dump());
}

TEST_F(Cli, NceLengthMismatchExitsTwo) {
  const auto s = write_set(otce::testing::random_set(20, 3, 2, 1), "s.ftrs");
  const auto t = write_set(otce::testing::random_set(15, 3, 2, 2), "t.ftrs");
  const auto r = run("score --metric nce --source " + s + " --target " + t);
  EXPECT_EQ(r.exit_code, 2);
  EXPECT_NE(r.err.find("LengthMismatch"), std::string::npos);
}

TEST_F(Cli, InputErrorsExitTwo) {
  const auto bad = write_text("not an ftrs file at all, definitely not", "bad.ftrs");
  const auto good = write_set(otce::testing::random_set(5, 2, 2, 1), "good.ftrs");
  auto r = run("score --source " + bad + " --target " + good);
  EXPECT_EQ(r.exit_code, 2);
  EXPECT_NE(r.err.find("bad.ftrs"), std::string::npos);
  EXPECT_EQ(run("score --source /nonexistent.ftrs --target " + good).exit_code, 2);
  EXPECT_EQ(run("score --metric bogus --source " + good + " --target " + good).exit_code, 2);
  EXPECT_EQ(run("score --gamma 2 --metric jc-otce --source " + good + " --target " + good).exit_code, 2);
  EXPECT_EQ(run("").exit_code, 2);
}

TEST_F(Cli, ScalingOverflowExitsThree) {
  const auto s = write_set(FeatureSet(Matrix{{0.0}, {1.0}}, Labels{0, 1}, 2), "s.ftrs");
  const auto t = write_set(FeatureSet(Matrix{{5.0}, {6.0}}, Labels{0, 1}, 2), "t.ftrs");
  const auto r = run("score --scaling --lambda 1e-4 --source " + s + " --target " + t);
  EXPECT_EQ(r.exit_code, 3);
  EXPECT_NE(r.err.find("NumericalOverflow"), std::string::npos);
}

TEST_F(Cli, RankPutsTargetItselfFirst) {
  const auto target = separated_set(3);
  std::filesystem::create_directories(dir / "src");
  io::write_feature_file(target, dir / "src" / "self.ftrs");
  io::write_feature_file(FeatureSet(target.features(), Labels(12, 0), 1), dir / "src" / "blind.ftrs");
  PhiloxStream rng(9);
  io::write_feature_file(FeatureSet(otce::testing::random_matrix(12, 2, rng, 3.0), otce::testing::random_labels(12, 2, rng), 2),
                         dir / "src" / "other.ftrs");
  const auto t = write_set(target, "target.ftrs");
  const auto report = run_ok("rank --target " + t + " --sources \"" + (dir / "src").string() + "\" --threads 3");
  const auto& ranking = report["results"]["ranking"];
  ASSERT_EQ(ranking.size(), 3u);
  EXPECT_EQ(ranking[0]["source"], "self.ftrs");
  EXPECT_EQ(ranking[0]["rank"], 1);
  for (std::size_t k = 1; k < ranking.size(); ++k)
    EXPECT_GE(ranking[k - 1]["value"].get<double>(), ranking[k]["value"].get<double>());
}

TEST_F(Cli, RankSingletonAndCorruptFile) {
  std::filesystem::create_directories(dir / "one");
  io::write_feature_file(otce::testing::random_set(6, 2, 2, 1), dir / "one" / "only.ftrs");
  const auto t = write_set(otce::testing::random_set(6, 2, 2, 2), "t.ftrs");
  const auto report = run_ok("rank --target " + t + " --sources \"" + (dir / "one").string() + "\"");
  EXPECT_EQ(report["results"]["ranking"][0]["rank"], 1);

  std::ofstream(dir / "one" / "broken.ftrs") << "FTRS garbage";
  const auto r = run("rank --target " + t + " --sources \"" + (dir / "one").string() + "\"");
  EXPECT_EQ(r.exit_code, 2);
  EXPECT_NE(r.err.find("broken.ftrs"), std::string::npos);
}

TEST_F(Cli, CorrWorkedExamples) {
  const auto worked = write_text("task_id,score,accuracy\na,1,0.1\nb,3,0.2\nc,2,0.3\n", "worked.csv");
  const auto r = run_ok("corr --method both --pairs " + worked);
  EXPECT_EQ(r["results"]["spearman_rho"].get<double>(), 0.5);
  EXPECT_EQ(r["results"]["kendall_tau"].get<double>(), 1.0 / 3.0);

  const auto same = write_text("a,1,0.1\nb,2,0.2\nc,3,0.3\n", "same.csv");
  const auto rev = write_text("a,3,0.1\nb,2,0.2\nc,1,0.3\n", "rev.csv");
  EXPECT_EQ(run_ok("corr --method both --pairs " + same)["results"]["spearman_rho"].get<double>(), 1.0);
  const auto rr = run_ok("corr --method both --pairs " + rev);
  EXPECT_EQ(rr["results"]["spearman_rho"].get<double>(), -1.0);
  EXPECT_EQ(rr["results"]["kendall_tau"].get<double>(), -1.0);
  EXPECT_EQ(run("corr --pairs " + write_text("a,1,\nb,2,0.5\n", "missing.csv")).exit_code, 2);
}

TEST_F(Cli, OptimizeZeroStepsAndZeroRate) {
  synth::SyntheticTaskSpec spec;
  spec.classes = 3;
  spec.dim = 4;
  spec.samples_per_class = 10;
  spec.label_permutation_fraction = 0.3;
  const auto pair = synth::generate_task_pair(spec);
  const auto s = write_set(pair.source, "s.ftrs");
  const auto t = write_set(pair.target, "t.ftrs");
  const auto out = (dir / "out.ftrs").string();
  run_ok("optimize --source " + s + " --target " + t + " --out \"" + out + "\" --steps 0");
  EXPECT_EQ(slurp(out), slurp(dir / "t.ftrs"));

  const auto trace = (dir / "trace.csv").string();
  run_ok("optimize --source " + s + " --target " + t + " --out \"" + out + "\" --steps 4 --lr 0 --trace \"" + trace + "\"");
  std::istringstream lines(slurp(trace));
  std::string line, first_value;
  std::getline(lines, line);
  EXPECT_EQ(line, "step,f_otce,grad_norm");
  int rows = 0;
  while (std::getline(lines, line)) {
    const auto a = line.find(','), b = line.find(',', a + 1);
    const auto value = line.substr(a + 1, b - a - 1);
    if (rows++ == 0) first_value = value;
    EXPECT_EQ(value, first_value);
  }
  EXPECT_EQ(rows, 4);
}

TEST_F(Cli, OptimizeRaisesScoreOnNoisyTask) {
  synth::SyntheticTaskSpec spec;
  spec.classes = 3;
  spec.dim = 4;
  spec.samples_per_class = 20;
  spec.label_permutation_fraction = 0.3;
  spec.domain_shift = 2.0;
  const auto pair = synth::generate_task_pair(spec);
  const auto s = write_set(pair.source, "s.ftrs");
  const auto t = write_set(pair.target, "t.ftrs");
  const auto r = run_ok("optimize --source " + s + " --target " + t + " --out \"" + (dir / "o.ftrs").string() +
                        "\" --steps 200 --lr 1");
  EXPECT_GT(r["results"]["final_f_otce"].get<double>(), r["results"]["initial_f_otce"].get<double>());
}

TEST_F(Cli, SynthIsReproducibleAndValidated) {
  const auto spec = write_text(R"({"classes": 3, "dim": 3, "samples_per_class": 10, "seed": 4})", "spec.json");
  run_ok("synth --spec " + spec + " --out \"" + (dir / "a").string() + "\"");
  run_ok("synth --spec " + spec + " --out \"" + (dir / "b").string() + "\"");
  EXPECT_EQ(slurp(dir / "a" / "source.ftrs"), slurp(dir / "b" / "source.ftrs"));
  EXPECT_EQ(slurp(dir / "a" / "target.ftrs"), slurp(dir / "b" / "target.ftrs"));

  EXPECT_EQ(run("synth --spec " + write_text("{\"classes\": ", "broken.json") + " --out \"" + (dir / "c").string() + "\"")
                .exit_code,
            2);
  EXPECT_EQ(run("synth --spec " + write_text(R"({"classes": 5, "dim": 2})", "infeasible.json") + " --out \"" +
                (dir / "d").string() + "\"")
                .exit_code,
            2);
}

TEST_F(Cli, SynthFullNoiseScoresNearLogC) {
  const auto spec = write_text(
      R"({"classes": 2, "dim": 2, "samples_per_class": 100, "label_permutation_fraction": 1.0, "seed": 1})", "spec.json");
  run_ok("synth --spec " + spec + " --out \"" + (dir / "p").string() + "\"");
  const std::string src = "\"" + (dir / "p" / "source.ftrs").string() + "\"";
  const std::string tgt = "\"" + (dir / "p" / "target.ftrs").string() + "\"";
  const auto r = run_ok("score --source " + src + " --target " + tgt);
  EXPECT_NEAR(r["results"]["value"].get<double>(), -std::log(2.0), 0.1);
}

TEST_F(Cli, SynthSweepWritesManifest) {
  const auto spec = write_text(
      R"({"classes": 2, "dim": 2, "samples_per_class": 5,
          "sweep": {"parameter": "domain_shift", "levels": [0, 1], "seeds": [0, 1, 2]}})",
      "sweep.json");
  const auto r = run_ok("synth --spec " + spec + " --out \"" + (dir / "sw").string() + "\"");
  EXPECT_EQ(r["results"]["pairs"].size(), 6u);
  std::istringstream manifest(slurp(dir / "sw" / "manifest.csv"));
  std::string header;
  std::getline(manifest, header);
  EXPECT_EQ(header, "level,seed,path");
  EXPECT_TRUE(std::filesystem::exists(dir / "sw" / "level1_seed2" / "target.ftrs"));
}

TEST_F(Cli, SynthFig3) {
  run_ok("synth --fig3 --out \"" + (dir / "toy").string() + "\"");
  const auto a = io::read_feature_file(dir / "toy" / "source_a.ftrs");
  EXPECT_EQ(a, synth::make_fig3_toy().source_a.with_name(a.name()));
}

TEST_F(Cli, ConvertCsv) {
  const auto csv = write_text("label,x,y\n0,1.5,2.5\n1,0.0,1.0\n", "in.csv");
  const auto out = (dir / "c.ftrs").string();
  const auto r = run_ok("convert --header --csv " + csv + " --out \"" + out + "\"");
  EXPECT_EQ(r["results"]["n"], 2);
  const auto set = io::read_feature_file(out);
  EXPECT_EQ(set.class_count(), 2u);
  EXPECT_EQ(set.features()(0, 1), 2.5);
  const auto ragged = write_text("0,1,2\n1,1\n", "ragged.csv");
  const auto bad = run("convert --csv " + ragged + " --out \"" + out + "\"");
  EXPECT_EQ(bad.exit_code, 2);
  EXPECT_NE(bad.err.find("RaggedRow"), std::string::npos);
}
