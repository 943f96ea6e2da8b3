#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "senselda/pipeline.hpp"

using namespace senselda;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("senselda_pipeline_" + name);
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

fs::path synthetic_file(const fs::path& dir, double noise, std::size_t n = 30) {
  const auto path = dir / "synthetic.cfg";
  std::ofstream out(path);
  out << "n = " << n << "\nt = 64\nclasses = 3\nnoise = " << noise << "\nseed = 4\n";
  return path;
}

RunConfig small_run(const fs::path& data) {
  RunConfig cfg;
  cfg.data = data.string();
  cfg.p = 8;
  cfg.v = 6;
  cfg.iterations = 150;
  cfg.burn_in = 75;
  cfg.seed = 9;
  return cfg;
}

}  // namespace

TEST(RunConfig, RoundTripsThroughKeyValues) {
  RunConfig cfg;
  cfg.data = "/data/UCI HAR Dataset";
  cfg.p = 25;
  cfg.v = 17;
  cfg.topics = 6;
  cfg.alpha = 0.125;
  cfg.beta = 0.1;
  cfg.sample_lag = 10;
  cfg.seed = 123456789012345ull;
  cfg.mapping = MappingMode::Optimal;
  cfg.remap_on_test = true;
  cfg.kmeans_tolerance = 1e-9;
  std::stringstream ss;
  write_kv(ss, cfg.to_kv());
  const auto back = RunConfig::from_kv(parse_kv(ss, "test"));
  EXPECT_EQ(back.to_kv(), cfg.to_kv());
  EXPECT_EQ(back.alpha, cfg.alpha);
  EXPECT_EQ(back.seed, cfg.seed);

  EXPECT_EQ(RunConfig::from_kv({{"alpha", "auto"}, {"k", "auto"}}).alpha, std::nullopt);
  EXPECT_THROW(RunConfig::from_kv({{"windw", "3"}}), ConfigError);
  EXPECT_THROW(RunConfig::from_kv({{"remap_on_test", "maybe"}}), ConfigError);
  EXPECT_THROW(RunConfig::from_kv({{"p", "-4"}}), ConfigError);
}

TEST(RunConfig, DerivedSeedsDiffer) {
  RunConfig cfg;
  std::set<std::uint64_t> seeds{cfg.codebook_seed(), cfg.lda_seed(), cfg.fold_in_seed(), cfg.fit_seed()};
  EXPECT_EQ(seeds.size(), 4u);
}

TEST(Train, NoiselessSyntheticIsRecoveredPerfectly) {
  const auto dir = scratch("noiseless");
  const auto cfg = small_run(synthetic_file(dir, 0.0));
  const auto o = run_train(cfg, load_dataset(cfg.data, Split::Train));
  ASSERT_TRUE(o.lda.report);
  EXPECT_EQ(o.lda.report->macro_f1, 1.0);
  EXPECT_TRUE(o.lda.mapping->is_bijection(3));
}

TEST(Train, ByteIdenticalOutputs) {
  const auto dir = scratch("bytes");
  const auto cfg = small_run(synthetic_file(dir, 0.3));
  const auto data = load_dataset(cfg.data, Split::Train);
  write_train_outputs(dir / "a", run_train(cfg, data));
  write_train_outputs(dir / "b", run_train(cfg, data));
  for (auto f : {"codebooks.json", "vocab.json", "model.json", "report.json", "confusion.csv", "theta.csv"}) {
    ASSERT_TRUE(fs::exists(dir / "a" / f)) << f;
    EXPECT_EQ(slurp(dir / "a" / f), slurp(dir / "b" / f)) << f;
  }
}

TEST(Train, RunLogReproducesTheRun) {
  const auto dir = scratch("runlog");
  auto cfg = small_run(synthetic_file(dir, 0.3));
  cfg.sample_lag = 5;
  cfg.alpha = 0.7;
  const auto first = run_train(cfg, load_dataset(cfg.data, Split::Train));
  write_train_outputs(dir / "a", first);
  const auto again = RunConfig::from_kv(read_kv_file(dir / "a" / "run.log"));
  const auto second = run_train(again, load_dataset(again.data, Split::Train));
  EXPECT_EQ(second.bundle.model, first.bundle.model);
  EXPECT_EQ(second.lda.theta, first.lda.theta);
}

TEST(Train, ErrorsNameTheStage) {
  const auto dir = scratch("stage");
  auto cfg = small_run(synthetic_file(dir, 0.0, 3));
  cfg.v = 100;  // more characters than subsequences
  try {
    run_train(cfg, load_dataset(cfg.data, Split::Train));
    FAIL() << "expected an error";
  } catch (const DataError& e) {
    EXPECT_EQ(std::string(e.what()).rfind("codebook: ", 0), 0u) << e.what();
  }
}

TEST(Apply, OwnTrainingDataReproducesStoredReport) {
  const auto dir = scratch("idempotent");
  const auto cfg = small_run(synthetic_file(dir, 0.4));
  const auto data = load_dataset(cfg.data, Split::Train);
  write_train_outputs(dir / "bundle", run_train(cfg, data));
  const auto bundle = read_bundle(dir / "bundle");
  ASSERT_TRUE(bundle.report);
  const auto before = slurp(dir / "bundle" / "model.json");
  const auto a = run_apply(bundle, data, bundle.config);
  ASSERT_TRUE(a.result.report);
  EXPECT_EQ(a.result.report->confusion, bundle.report->confusion);
  EXPECT_DOUBLE_EQ(a.result.report->macro_f1, bundle.report->macro_f1);
  EXPECT_EQ(a.corpus.oov_tokens(), 0u);
  EXPECT_EQ(slurp(dir / "bundle" / "model.json"), before);
}

TEST(Apply, TestSplitUsesFrozenMappingAndReportsRemap) {
  const auto dir = scratch("frozen");
  auto cfg = small_run(synthetic_file(dir, 0.4));
  const auto o = run_train(cfg, load_dataset(cfg.data, Split::Train));
  const auto test = load_dataset(cfg.data, Split::Test);
  const auto a = run_apply(o.bundle, test, cfg);
  ASSERT_TRUE(a.result.report && a.result.remapped);
  EXPECT_EQ(a.result.report->mapping, *o.bundle.mapping);
  cfg.remap_on_test = true;
  const auto r = run_apply(o.bundle, test, cfg);
  EXPECT_EQ(r.result.report->mapping, r.result.remapped->mapping);

  write_apply_outputs(dir / "apply", o.bundle, a, cfg);
  const auto j = read_json(dir / "apply" / "report.json");
  EXPECT_TRUE(j.contains("remapped"));
  EXPECT_EQ(j.at("mapping_mode"), "remapped-on-split");
}

TEST(Apply, UnlabeledDataGivesThetaOnly) {
  const auto dir = scratch("unlabeled");
  const auto cfg = small_run(synthetic_file(dir, 0.3));
  const auto o = run_train(cfg, load_dataset(cfg.data, Split::Train));
  auto test = load_dataset(cfg.data, Split::Test);
  for (auto& s : test.sequences) s.label.reset();
  test.classes.clear();
  const auto a = run_apply(o.bundle, test, cfg);
  EXPECT_FALSE(a.result.report);
  EXPECT_EQ(a.result.theta.size(), test.size());
  write_apply_outputs(dir / "apply", o.bundle, a, cfg);
  EXPECT_TRUE(fs::exists(dir / "apply" / "theta.csv"));
  EXPECT_FALSE(fs::exists(dir / "apply" / "report.json"));
}

TEST(Apply, ChannelMismatchIsACompatibilityError) {
  const auto dir = scratch("mismatch");
  const auto cfg = small_run(synthetic_file(dir, 0.3));
  const auto o = run_train(cfg, load_dataset(cfg.data, Split::Train));
  SyntheticConfig acc_only;
  acc_only.channel_keys = {{Sensor::Accelerometer, Axis::X}, {Sensor::Accelerometer, Axis::Y},
                           {Sensor::Accelerometer, Axis::Z}};
  try {
    run_apply(o.bundle, generate_synthetic(acc_only, 1), cfg);
    FAIL() << "expected a compatibility error";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("compatibility"), std::string::npos);
  }
}

TEST(Sweep, SingleCellMatchesTrainPlusApply) {
  const auto dir = scratch("sweep1");
  const auto cfg = small_run(synthetic_file(dir, 0.4));
  const auto train_data = load_dataset(cfg.data, Split::Train);
  const auto test_data = load_dataset(cfg.data, Split::Test);
  const auto rows = run_sweep(cfg, {{8}, {6}, {9}}, train_data, &test_data, dir / "sweep.csv");
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_TRUE(rows[0].error.empty()) << rows[0].error;
  const auto o = run_train(cfg, train_data);
  const auto a = run_apply(o.bundle, test_data, cfg);
  EXPECT_EQ(rows[0].train_f1, o.lda.report->macro_f1);
  EXPECT_EQ(rows[0].test_f1, a.result.report->macro_f1);
  // Values survive the CSV exactly.
  const auto stored = read_sweep_csv(dir / "sweep.csv");
  ASSERT_EQ(stored.size(), 1u);
  EXPECT_EQ(stored[0].train_f1, rows[0].train_f1);
  EXPECT_EQ(stored[0].test_f1, rows[0].test_f1);
}

TEST(Sweep, ResumesAndRecordsFailures) {
  const auto dir = scratch("sweep2");
  const auto cfg = small_run(synthetic_file(dir, 0.4, 12));
  const auto train_data = load_dataset(cfg.data, Split::Train);
  const auto csv = dir / "sweep.csv";
  // p = 80 exceeds the sequence length and fails; the sweep carries on.
  auto rows = run_sweep(cfg, {{8, 80}, {4}, {1}}, train_data, nullptr, csv);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_TRUE(rows[0].error.empty());
  EXPECT_FALSE(rows[1].error.empty());
  const auto first = slurp(csv);

  rows = run_sweep(cfg, {{8, 80}, {4}, {1}}, train_data, nullptr, csv);
  EXPECT_EQ(rows.size(), 2u);
  EXPECT_EQ(slurp(csv), first);

  rows = run_sweep(cfg, {{8, 80}, {4, 5}, {1}}, train_data, nullptr, csv);
  EXPECT_EQ(rows.size(), 4u);
  EXPECT_EQ(slurp(csv).substr(0, first.size()), first);
  EXPECT_EQ(read_sweep_csv(csv).size(), 4u);
  EXPECT_THROW(run_sweep(cfg, {{}, {4}, {1}}, train_data, nullptr, csv), ConfigError);
}

TEST(Ablation, ZeroRemovalEqualsBaseline) {
  const auto dir = scratch("ablate");
  const auto cfg = small_run(synthetic_file(dir, 0.4));
  const auto train_data = load_dataset(cfg.data, Split::Train);
  const auto test_data = load_dataset(cfg.data, Split::Test);
  const auto rows = run_ablation(cfg, train_data, &test_data, {0, 2, 4});
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0].removed, 0u);
  EXPECT_EQ(rows[2].removed, 4u);
  const auto o = run_train(cfg, train_data);
  const auto a = run_apply(o.bundle, test_data, cfg);
  EXPECT_EQ(rows[0].train_f1, o.lda.report->macro_f1);
  EXPECT_EQ(rows[0].test_f1, a.result.report->macro_f1);
  EXPECT_THROW(run_ablation(cfg, train_data, nullptr, {100000}), ConfigError);
}

#ifdef SENSELDA_CLI
namespace {

int run_cli(const std::string& args) {
  const std::string cmd = std::string("\"") + SENSELDA_CLI + "\" " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST(Cli, ExitCodesAndOutputs) {
  const auto dir = scratch("cli");
  const auto data = synthetic_file(dir, 0.3).string();
  const auto out = (dir / "bundle").string();
  const std::string fast = " -p 8 -v 6 --iters 60 --burn-in 30 ";

  EXPECT_EQ(run_cli(""), 1);
  EXPECT_EQ(run_cli("train --bogus"), 1);
  EXPECT_EQ(run_cli("train --data " + data + " --iters 10 --burn-in 10"), 1);
  EXPECT_EQ(run_cli("train --data " + (dir / "absent").string()), 2);

  ASSERT_EQ(run_cli("train --data " + data + fast + "--out " + out), 0);
  for (auto f : {"codebooks.json", "vocab.json", "model.json", "report.json", "theta.csv", "run.log"})
    EXPECT_TRUE(fs::exists(fs::path(out) / f)) << f;

  EXPECT_EQ(run_cli("apply --bundle " + out + " --out " + (dir / "applied").string()), 0);
  EXPECT_TRUE(fs::exists(dir / "applied" / "report.json"));
  EXPECT_EQ(run_cli("apply --bundle " + out + " --out " + out), 1);
  EXPECT_EQ(run_cli("apply --bundle " + (dir / "nothing").string() + " --out " + (dir / "x").string()), 2);

  EXPECT_EQ(run_cli("evaluate --theta " + (dir / "applied" / "theta.csv").string() + " --bundle " + out + " --out " +
                    (dir / "eval").string()),
            0);
  EXPECT_EQ(read_json(dir / "eval" / "report.json").at("confusion"),
            read_json(dir / "applied" / "report.json").at("confusion"));

  EXPECT_EQ(run_cli("train --config " + (fs::path(out) / "run.log").string() + " --out " + (dir / "again").string()), 0);
  EXPECT_EQ(slurp(dir / "again" / "model.json"), slurp(fs::path(out) / "model.json"));

  EXPECT_EQ(run_cli("stats --data " + data + fast + "--out " + (dir / "stats").string()), 0);
  EXPECT_TRUE(fs::exists(dir / "stats" / "word_frequencies.csv"));
  EXPECT_EQ(run_cli("ablate --data " + data + fast + "--n-list 0,1 --out " + (dir / "abl").string()), 0);
  EXPECT_EQ(run_cli("sweep --data " + data + fast + "--p-list 8 --v-list 4,5 --out " + (dir / "sw").string()), 0);
  EXPECT_EQ(read_sweep_csv(dir / "sw" / "sweep.csv").size(), 2u);
}
#endif
