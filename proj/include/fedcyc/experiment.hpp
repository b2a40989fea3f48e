#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "fedcyc/data.hpp"
#include "fedcyc/fed.hpp"

namespace fedcyc {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Missing or malformed run-directory artifacts.
class ArtifactError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class RunMode { centralized, federated, switchable_federated };

std::string_view run_mode_name(RunMode m);
std::optional<RunMode> parse_run_mode(std::string_view text);

/// Everything a run needs. Defaults are the toy denoise setup.
struct ExperimentConfig {
  RunMode mode = RunMode::federated;
  TaskSpec task{.kind = TaskKind::denoise, .n_train = 512, .n_eval = 32, .noise_sigma = 0.1, .seed = 1};
  ModelConfig generator{.residual_skip = true};
  ModelConfig discriminator;
  LossWeights weights;
  StepMode step_mode = StepMode::alternating;

  // federated-only
  std::size_t clients_per_domain = 1;
  std::size_t selected = 0;  // 0 = all
  Aggregation aggregation = Aggregation::mean;
  TransportKind transport = TransportKind::in_process;
  std::string host = "127.0.0.1";
  std::uint16_t port = 0;

  OptimizerSettings optimizer;
  double lr = 1e-3;
  std::size_t rounds = 400;

  std::size_t batch_size = 4;
  bool augment = false;
  /// Drives data, init, client split, batches and selection.
  std::uint64_t seed = 1;
  std::string output_dir = "runs/latest";

  Variant variant() const;
  TrainConfig train_config() const;
  /// Throws ConfigError.
  void validate() const;
};

struct LoadedConfig {
  ExperimentConfig config;
  std::vector<std::string> warnings;
};

/// Parses sectioned key/value text ([task], [model], [loss], [federated],
/// [optimizer], [run]). Unknown sections or keys and bad values throw
/// ConfigError. `mode` overrides [run] mode when given; centralized runs
/// ignore [federated] keys with a warning.
LoadedConfig parse_config(std::string_view text, std::optional<RunMode> mode = std::nullopt);
LoadedConfig load_config(const std::filesystem::path& path, std::optional<RunMode> mode = std::nullopt);

/// Full config, every key written; parse_config(to_ini(c)) == c.
std::string to_ini(const ExperimentConfig& c);

/// FEDCYC_OUTPUT_DIR when set, else the configured directory.
std::filesystem::path output_dir(const ExperimentConfig& c);

TaskData build_task(const ExperimentConfig& c);

TrainResult run_experiment(const ExperimentConfig& c, const TaskData& task);

/// config.ini, history.csv, params.bin and manifest.json in `dir`.
void write_run(const std::filesystem::path& dir, const ExperimentConfig& c, const TrainResult& r);

inline constexpr const char* kConfigFile = "config.ini";
inline constexpr const char* kHistoryFile = "history.csv";
inline constexpr const char* kParamsFile = "params.bin";
inline constexpr const char* kManifestFile = "manifest.json";

std::string history_csv(const TrainHistory& h);

/// Git blob id: SHA-1 over "blob <size>\0" + bytes, lowercase hex.
std::string git_blob_sha1(std::string_view bytes);
std::string sha1_hex(std::string_view bytes);

/// Parameters as an encoded message (combined step kind, round = rounds run).
std::vector<std::uint8_t> encode_params(const CycleModels& m, std::uint32_t rounds);
/// Rebuilds the architecture from the config and loads `bytes` into it.
CycleModels decode_params(const ExperimentConfig& c, std::span<const std::uint8_t> bytes);

struct EvalSummary {
  TaskKind kind = TaskKind::denoise;
  // denoise: mean over held-out pairs, degraded input vs translated output
  double input_psnr = 0, output_psnr = 0;
  double input_ssim = 0, output_ssim = 0;
  // style: MMD to the target domain before and after translation (Y -> X)
  double input_mmd = 0, output_mmd = 0;
  std::size_t samples = 0;
};

EvalSummary evaluate(const TaskData& task, const CycleModels& models);

/// Loads a run directory and evaluates its final parameters. Throws
/// ArtifactError naming the missing file.
EvalSummary report_run(const std::filesystem::path& dir);

std::string eval_csv(const EvalSummary& e, std::string_view method);
/// Plain-text table with one row per method.
std::string eval_table(const EvalSummary& e, std::string_view method);

/// gnuplot-ready columns: round, lr, d_step_loss, g_step_loss.
std::string plot_data(const TrainHistory& h);
/// Reads history.csv back into per-round records (losses per client kept).
TrainHistory read_history_csv(std::string_view text);

}  // namespace fedcyc
