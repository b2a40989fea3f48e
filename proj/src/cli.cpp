#include "fedcyc/cli.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <iomanip>
#include <ostream>

#include <CLI11.hpp>

#include "fedcyc/experiment.hpp"
#include "fedcyc/verify.hpp"

namespace fedcyc {

namespace {

// Published parameter totals of the full-size 256px models, for reference only.
constexpr std::uint64_t kReferenceStandardParams = 69'522'952;
constexpr std::uint64_t kReferenceSwitchableParams = 35'576'708;

std::size_t total_params(const CycleModels& m) {
  std::size_t n = 0;
  for (const auto& g : m.groups) n += g.param_count();
  return n;
}

// Bytes one client sends per round in alternating mode: a D-step and a
// G-step message, each with its own header and CRC.
std::size_t round_bytes(const CycleModels& m) {
  std::vector<ParamGroup> d, g;
  for (const auto& grp : m.groups) (is_generator_role(grp.role()) ? g : d).push_back(grp);
  return message_size(d) + message_size(g);
}

void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::binary);
  f << text;
  if (!f) throw ArtifactError("cannot write " + p.string());
}

int cmd_train(const std::string& config_path, const std::string& mode_text, std::ostream& out,
              std::ostream& err) {
  auto mode = parse_run_mode(mode_text);
  auto loaded = load_config(config_path, mode);
  for (const auto& w : loaded.warnings) err << "warning: " << w << "\n";
  const ExperimentConfig& c = loaded.config;
  const auto dir = output_dir(c);

  const auto t0 = std::chrono::steady_clock::now();
  const auto task = build_task(c);
  const auto result = run_experiment(c, task);
  write_run(dir, c, result);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  out << "mode " << run_mode_name(c.mode) << ", " << c.rounds << " rounds in " << std::fixed
      << std::setprecision(1) << secs << " s\n";
  out << "history checksum " << std::hex << std::setw(8) << std::setfill('0') << result.history.checksum()
      << std::dec << std::setfill(' ') << "\n";
  out << "wrote " << dir.string() << "\n";
  return kExitOk;
}

int cmd_verify(const std::string& suite_text, const std::string& json_path, std::ostream& out) {
  const auto report = run_suite(*parse_suite(suite_text));
  const std::string json = report.to_json();
  if (!json_path.empty()) write_text(json_path, json + "\n");
  out << json << "\n";
  return report.passed() ? kExitOk : kExitVerify;
}

int cmd_bench(const std::string& what, const std::string& config_path, std::ostream& out,
              std::ostream& err) {
  ExperimentConfig c;
  if (!config_path.empty()) {
    auto loaded = load_config(config_path);
    for (const auto& w : loaded.warnings) err << "warning: " << w << "\n";
    c = loaded.config;
  }
  const auto standard = build_cycle_models(Variant::standard, c.generator, c.discriminator, c.seed);
  const auto switchable = build_cycle_models(Variant::switchable, c.generator, c.discriminator, c.seed);

  out << std::left << std::setw(26) << "model" << std::right;
  if (what == "params") {
    const double s = static_cast<double>(total_params(standard));
    const double w = static_cast<double>(total_params(switchable));
    out << std::setw(14) << "standard" << std::setw(14) << "switchable" << std::setw(9) << "ratio\n";
    out << std::left << std::setw(26) << "configured" << std::right << std::setw(14) << total_params(standard)
        << std::setw(14) << total_params(switchable) << std::setw(9) << std::fixed << std::setprecision(3)
        << w / s << "\n";
    out << std::left << std::setw(26) << "full-size (reference)" << std::right << std::setw(14)
        << kReferenceStandardParams << std::setw(14) << kReferenceSwitchableParams << std::setw(9)
        << static_cast<double>(kReferenceSwitchableParams) / kReferenceStandardParams << "\n";
    return kExitOk;
  }
  const double s = static_cast<double>(message_size(standard.groups));
  const double w = static_cast<double>(message_size(switchable.groups));
  out << std::setw(14) << "standard" << std::setw(14) << "switchable" << std::setw(9) << "ratio\n";
  out << std::left << std::setw(26) << "one gradient message" << std::right << std::setw(14)
      << message_size(standard.groups) << std::setw(14) << message_size(switchable.groups) << std::setw(9)
      << std::fixed << std::setprecision(3) << w / s << "\n";
  out << std::left << std::setw(26) << "client round (D + G)" << std::right << std::setw(14)
      << round_bytes(standard) << std::setw(14) << round_bytes(switchable) << std::setw(9)
      << static_cast<double>(round_bytes(switchable)) / static_cast<double>(round_bytes(standard)) << "\n";
  out << "header + CRC overhead per message: " << kHeaderBytes + kCrcBytes << " bytes\n";
  return kExitOk;
}

int cmd_report(const std::filesystem::path& dir, std::ostream& out) {
  const auto eval = report_run(dir);
  std::string method = "trained";
  if (std::filesystem::exists(dir / kConfigFile)) {
    std::ifstream f(dir / kConfigFile);
    std::stringstream s;
    s << f.rdbuf();
    method = std::string(run_mode_name(parse_config(s.str()).config.mode));
  }
  write_text(dir / "metrics.csv", eval_csv(eval, method));
  out << eval_table(eval, method);
  return kExitOk;
}

int cmd_plot(const std::filesystem::path& dir, const std::string& out_path, std::ostream& out) {
  const auto path = dir / kHistoryFile;
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ArtifactError("missing " + path.string());
  std::stringstream s;
  s << f.rdbuf();
  const auto target = out_path.empty() ? dir / "history.dat" : std::filesystem::path(out_path);
  write_text(target, plot_data(read_history_csv(s.str())));
  out << "wrote " << target.string() << "\n"
      << "plot with: plot '" << target.string() << "' using 1:3 with lines title 'D-step', '' using 1:4 "
      << "with lines title 'G-step'\n";
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Federated CycleGAN at desk scale"};
  app.require_subcommand(1);

  std::string config_path, mode;  // empty: the config decides
  auto* train = app.add_subcommand("train", "train from a config file and write a run directory");
  train->add_option("config", config_path, "config file")->required();
  train->add_option("--mode", mode, "trainer (overrides [run] mode)")
      ->check(CLI::IsMember({"centralized", "federated", "switchable-federated"}));

  std::string suite, json_path;
  auto* verify = app.add_subcommand("verify", "run a property suite");
  verify->add_option("--suite", suite, "suite name")
      ->required()
      ->check(CLI::IsMember({"decomposition", "gradcheck", "equivalence", "codec"}));
  verify->add_option("--json", json_path, "also write the report here");

  std::string what = "params", bench_config;
  auto* bench = app.add_subcommand("bench", "parameter and message-size comparison");
  bench->add_option("--what", what)->check(CLI::IsMember({"params", "bytes"}));
  bench->add_option("--config", bench_config, "model config (defaults to the toy model)");

  std::string run_dir, plot_out;
  auto* report = app.add_subcommand("report", "evaluate a finished run");
  report->add_option("run_dir", run_dir)->required();
  auto* plot = app.add_subcommand("plot", "gnuplot data from a run's history");
  plot->add_option("run_dir", run_dir)->required();
  plot->add_option("--out", plot_out);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  }

  try {
    if (*train) return cmd_train(config_path, mode, out, err);
    if (*verify) return cmd_verify(suite, json_path, out);
    if (*bench) return cmd_bench(what, bench_config, out, err);
    if (*report) return cmd_report(run_dir, out);
    if (*plot) return cmd_plot(run_dir, plot_out, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const ArtifactError& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const NumericError& e) {
    err << "numeric abort: " << e.what() << "\n";
    return kExitNumeric;
  }
  return kExitConfig;
}

}  // namespace fedcyc
