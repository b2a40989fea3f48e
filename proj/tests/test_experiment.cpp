#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "fedcyc/cli.hpp"
#include "fedcyc/experiment.hpp"

using namespace fedcyc;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  auto d = fs::temp_directory_path() / ("fedcyc_test_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream s;
  s << f.rdbuf();
  return s.str();
}

// Small enough to train in well under a second.
ExperimentConfig tiny(RunMode mode = RunMode::federated) {
  ExperimentConfig c;
  c.mode = mode;
  c.task.n_train = 16;
  c.task.n_eval = 4;
  c.generator.base_width = 2;
  c.generator.depth = 1;
  c.discriminator.base_width = 2;
  c.discriminator.depth = 1;
  c.rounds = 3;
  return c;
}

int cli(std::vector<std::string> args, std::string* out_text = nullptr, std::string* err_text = nullptr) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  if (out_text) *out_text = out.str();
  if (err_text) *err_text = err.str();
  return code;
}

}  // namespace

TEST(Config, DefaultsAreTheToyDenoiseSetup) {
  const auto c = parse_config("").config;
  EXPECT_EQ(c.task.kind, TaskKind::denoise);
  EXPECT_EQ(c.task.n_train, 512u);
  EXPECT_DOUBLE_EQ(c.task.noise_sigma, 0.1);
  EXPECT_TRUE(c.generator.residual_skip);
  EXPECT_EQ(c.rounds, 400u);
  EXPECT_DOUBLE_EQ(c.optimizer.beta1, 0.5);
  EXPECT_DOUBLE_EQ(c.optimizer.beta2, 0.999);
  EXPECT_DOUBLE_EQ(c.weights.lambda_cycle, 10.0);
  EXPECT_DOUBLE_EQ(c.weights.lambda_identity, 5.0);
  EXPECT_EQ(c.weights.gan_mode, GanMode::least_squares);
}

TEST(Config, IniRoundTripsEveryField) {
  ExperimentConfig c = tiny(RunMode::switchable_federated);
  c.lr = 0.1 + 0.2;  // needs all 17 digits
  c.optimizer.kind = OptimizerKind::sgd;
  c.aggregation = Aggregation::sum;
  c.transport = TransportKind::tcp;
  c.clients_per_domain = 2;
  c.selected = 3;
  c.weights.gan_mode = GanMode::vanilla;
  c.step_mode = StepMode::objective;
  c.augment = true;
  c.seed = 12345678901234ull;
  c.output_dir = "some/where";
  const std::string text = to_ini(c);
  const auto back = parse_config(text).config;
  EXPECT_EQ(to_ini(back), text);
  EXPECT_EQ(back.lr, c.lr);
  EXPECT_EQ(back.mode, RunMode::switchable_federated);
  EXPECT_EQ(back.variant(), Variant::switchable);
}

TEST(Config, UnknownKeysSectionsAndBadValuesAreRejected) {
  EXPECT_THROW(parse_config("[run]\nbogus = 1\n"), ConfigError);
  EXPECT_THROW(parse_config("[nope]\nseed = 1\n"), ConfigError);
  EXPECT_THROW(parse_config("seed = 1\n"), ConfigError);
  EXPECT_THROW(parse_config("[run]\nseed = -1\n"), ConfigError);
  EXPECT_THROW(parse_config("[optimizer]\nlr = fast\n"), ConfigError);
  EXPECT_THROW(parse_config("[optimizer]\nlr = nan\n"), ConfigError);
  EXPECT_THROW(parse_config("[optimizer]\nlr = -1\n"), ConfigError);
  EXPECT_THROW(parse_config("[optimizer]\nkind = rmsprop\n"), ConfigError);
  EXPECT_THROW(parse_config("[run]\nbatch_size = 0\n"), ConfigError);
  EXPECT_THROW(parse_config("[model]\nresidual_skip = maybe\n"), ConfigError);
  EXPECT_THROW(parse_config("[task]\nnoise_sigma = -0.1\n"), ConfigError);
  EXPECT_THROW(parse_config("[federated]\nclients_per_domain = 2\nselected = 5\n"), ConfigError);
  EXPECT_THROW(parse_config("[run]\nseed = 1\nseed = 2\n"), ConfigError);
  EXPECT_THROW(load_config("/nonexistent/config.ini"), ConfigError);
}

TEST(Config, CentralizedModeIgnoresFederatedKeysWithWarning) {
  const auto loaded = parse_config("[federated]\nclients_per_domain = 3\naggregation = sum\n", RunMode::centralized);
  ASSERT_EQ(loaded.warnings.size(), 2u);
  EXPECT_NE(loaded.warnings[0].find("federated.clients_per_domain"), std::string::npos);
  EXPECT_EQ(loaded.config.clients_per_domain, 1u);
  EXPECT_EQ(loaded.config.aggregation, Aggregation::mean);

  const auto fed = parse_config("[federated]\nclients_per_domain = 3\n", RunMode::federated);
  EXPECT_TRUE(fed.warnings.empty());
  EXPECT_EQ(fed.config.clients_per_domain, 3u);
}

TEST(Config, ModeArgumentOverridesTheFile) {
  EXPECT_EQ(parse_config("[run]\nmode = centralized\n").config.mode, RunMode::centralized);
  EXPECT_EQ(parse_config("[run]\nmode = centralized\n", RunMode::federated).config.mode, RunMode::federated);
  EXPECT_THROW(parse_config("[run]\nmode = sideways\n"), ConfigError);
}

TEST(Config, OutputDirEnvOverride) {
  ExperimentConfig c;
  c.output_dir = "from/config";
  ::unsetenv("FEDCYC_OUTPUT_DIR");
  EXPECT_EQ(output_dir(c), fs::path("from/config"));
  ::setenv("FEDCYC_OUTPUT_DIR", "/tmp/elsewhere", 1);
  EXPECT_EQ(output_dir(c), fs::path("/tmp/elsewhere"));
  ::unsetenv("FEDCYC_OUTPUT_DIR");
}

TEST(Artifacts, GitBlobIdsMatchGit) {
  EXPECT_EQ(git_blob_sha1(""), "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
  EXPECT_EQ(git_blob_sha1("hello\n"), "ce013625030ba8dba906f756967f9e9ca394464a");
  EXPECT_EQ(sha1_hex("abc"), "a9993e364706816aba3e25717850c26c9cd0d89d");
}

TEST(Artifacts, HistoryCsvRoundTrip) {
  const auto c = tiny();
  const auto r = run_experiment(c, build_task(c));
  const auto back = read_history_csv(history_csv(r.history));
  EXPECT_EQ(back.checksum(), r.history.checksum());
  EXPECT_THROW(read_history_csv("header\n1,2,3\n"), ArtifactError);
}

TEST(Artifacts, ParamsRoundTripAndArchitectureCheck) {
  const auto c = tiny(RunMode::switchable_federated);
  const auto r = run_experiment(c, build_task(c));
  const auto bytes = encode_params(r.models, 3);
  const auto back = decode_params(c, bytes);
  ASSERT_EQ(back.groups.size(), r.models.groups.size());
  for (std::size_t i = 0; i < back.groups.size(); ++i) EXPECT_TRUE(bitwise_equal(back.groups[i], r.models.groups[i]));

  auto other = c;
  other.mode = RunMode::federated;
  EXPECT_THROW(decode_params(other, bytes), ArtifactError);
  other = c;
  other.generator.base_width = 3;
  EXPECT_THROW(decode_params(other, bytes), ArtifactError);
}

TEST(Run, WritesAllArtifactsAndReproduces) {
  const auto dir = scratch_dir("run");
  const auto c = tiny();
  const auto r = run_experiment(c, build_task(c));
  write_run(dir, c, r);
  for (const char* f : {kConfigFile, kHistoryFile, kParamsFile, kManifestFile}) EXPECT_TRUE(fs::exists(dir / f)) << f;

  // the written config alone reproduces the run
  const auto again_cfg = load_config(dir / kConfigFile).config;
  const auto again = run_experiment(again_cfg, build_task(again_cfg));
  EXPECT_EQ(again.history.checksum(), r.history.checksum());
  EXPECT_EQ(param_checksum(again.models.groups), param_checksum(r.models.groups));

  const std::string manifest = slurp(dir / kManifestFile);
  EXPECT_NE(manifest.find(git_blob_sha1(slurp(dir / kParamsFile))), std::string::npos);
  EXPECT_NE(manifest.find(sha1_hex(slurp(dir / kConfigFile))), std::string::npos);
}

TEST(Report, UntrainedResidualGeneratorIsNearIdentity) {
  const auto dir = scratch_dir("k0");
  auto c = tiny();
  c.rounds = 0;
  write_run(dir, c, run_experiment(c, build_task(c)));
  const auto e = report_run(dir);
  EXPECT_NEAR(e.output_psnr, e.input_psnr, 0.5);
  EXPECT_GT(e.input_psnr, 19.0);
  EXPECT_LT(e.input_psnr, 21.0);
  EXPECT_EQ(e.samples, 4u);
}

TEST(Report, StyleTaskReportsMmd) {
  const auto dir = scratch_dir("style");
  auto c = tiny();
  c.task.kind = TaskKind::style;
  write_run(dir, c, run_experiment(c, build_task(c)));
  const auto e = report_run(dir);
  EXPECT_EQ(e.kind, TaskKind::style);
  EXPECT_GT(e.input_mmd, 0.0);
  EXPECT_NE(eval_table(e, "federated").find("MMD"), std::string::npos);
}

TEST(Report, MissingParamsNamesThePath) {
  const auto dir = scratch_dir("missing");
  const auto c = tiny();
  write_run(dir, c, run_experiment(c, build_task(c)));
  fs::remove(dir / kParamsFile);
  try {
    report_run(dir);
    FAIL() << "expected ArtifactError";
  } catch (const ArtifactError& e) {
    EXPECT_NE(std::string(e.what()).find((dir / kParamsFile).string()), std::string::npos);
  }
}

TEST(Cli, TrainReportPlotEndToEnd) {
  const auto dir = scratch_dir("cli");
  auto c = tiny();
  c.output_dir = (dir / "run").string();
  std::ofstream(dir / "c.ini") << to_ini(c);
  std::string out, err;
  ASSERT_EQ(cli({"train", (dir / "c.ini").string(), "--mode", "centralized"}, &out, &err), kExitOk) << err;
  EXPECT_NE(out.find("history checksum"), std::string::npos);
  EXPECT_NE(err.find("ignored in centralized mode"), std::string::npos);
  EXPECT_NE(slurp(dir / "run" / kConfigFile).find("mode = centralized"), std::string::npos);

  ASSERT_EQ(cli({"report", (dir / "run").string()}, &out), kExitOk);
  EXPECT_NE(out.find("PSNR"), std::string::npos);
  EXPECT_TRUE(fs::exists(dir / "run" / "metrics.csv"));
  ASSERT_EQ(cli({"plot", (dir / "run").string()}, &out), kExitOk);
  EXPECT_TRUE(fs::exists(dir / "run" / "history.dat"));
}

TEST(Cli, ExitCodes) {
  const auto dir = scratch_dir("codes");
  EXPECT_EQ(cli({}), kExitConfig);
  EXPECT_EQ(cli({"frobnicate"}), kExitConfig);
  EXPECT_EQ(cli({"verify", "--suite", "nonsense"}), kExitConfig);
  EXPECT_EQ(cli({"train", "/nonexistent.ini"}), kExitConfig);
  EXPECT_EQ(cli({"report", (dir / "nothing").string()}), kExitConfig);

  std::ofstream(dir / "bad.ini") << "[run]\nbogus = 1\n";
  EXPECT_EQ(cli({"train", (dir / "bad.ini").string()}), kExitConfig);

  // an absurd SGD step overflows within a few rounds
  auto c = tiny();
  c.optimizer.kind = OptimizerKind::sgd;
  c.lr = 1e30;
  c.output_dir = (dir / "nan").string();
  std::ofstream(dir / "nan.ini") << to_ini(c);
  std::string err;
  EXPECT_EQ(cli({"train", (dir / "nan.ini").string()}, nullptr, &err), kExitNumeric);
  EXPECT_NE(err.find("numeric"), std::string::npos);
}

TEST(Cli, VerifyCodecSuiteEmitsJson) {
  const auto dir = scratch_dir("verify");
  std::string out;
  EXPECT_EQ(cli({"verify", "--suite", "codec", "--json", (dir / "r.json").string()}, &out), kExitOk);
  EXPECT_NE(out.find("\"passed\": true"), std::string::npos);
  EXPECT_EQ(slurp(dir / "r.json"), out);
}

TEST(Cli, BenchShowsSwitchableSavingsAndReferenceRow) {
  std::string out;
  ASSERT_EQ(cli({"bench", "--what", "params"}, &out), kExitOk);
  EXPECT_NE(out.find("69522952"), std::string::npos);
  EXPECT_NE(out.find("35576708"), std::string::npos);
  EXPECT_NE(out.find("0.512"), std::string::npos);
  ASSERT_EQ(cli({"bench", "--what", "bytes"}, &out), kExitOk);
  EXPECT_NE(out.find("20 bytes"), std::string::npos);
}
