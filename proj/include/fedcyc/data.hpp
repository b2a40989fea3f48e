#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedcyc/objectives.hpp"
#include "fedcyc/tensor.hpp"

namespace fedcyc {

class DataError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class TaskKind : std::uint8_t { denoise = 0, style = 1 };

std::string_view task_name(TaskKind k);
std::optional<TaskKind> parse_task(std::string_view text);

/// Everything needed to regenerate a dataset bit-exactly.
struct TaskSpec {
  TaskKind kind = TaskKind::denoise;
  std::size_t n_train = 64;  // per domain
  std::size_t n_eval = 32;
  double noise_sigma = 0.1;  // denoise only
  std::uint64_t seed = 1;

  void validate() const;
};

inline constexpr std::size_t kImageSize = 16;

struct DomainDataset {
  Domain domain = Domain::X;
  TaskSpec spec;
  std::vector<Tensor> samples;  // each [1, 16, 16]
};

/// Index-aligned held-out pairs; `degraded[i]` is `clean[i]` plus noise.
struct PairedEvalSet {
  std::vector<Tensor> clean;
  std::vector<Tensor> degraded;
};

struct TaskData {
  DomainDataset x;
  DomainDataset y;
  PairedEvalSet eval;  // empty for style tasks
};

/// Clean procedural image: smooth background ramp plus rectangles and
/// disks, values in [0, 1]. Pure function of (seed, stream, index).
Tensor procedural_image(std::uint64_t seed, std::uint64_t stream, std::uint64_t index);

/// X = clean images, Y = other clean images plus N(0, sigma) noise. X, Y and
/// the eval set come from disjoint image streams, so training is unpaired.
/// sigma = 0 is allowed and makes both domains the same distribution.
TaskData make_denoise_task(std::size_t n_train, std::size_t n_eval, double noise_sigma,
                           std::uint64_t seed);

/// Two palettes over procedural images: X dark and low contrast, Y bright,
/// inverted and high contrast.
TaskData make_style_task(std::size_t n_per_domain, std::uint64_t seed);

TaskData make_task(const TaskSpec& spec);

/// 10 log10(peak^2 / MSE); 99 dB when MSE is 0.
inline constexpr double kPsnrCap = 99.0;
double psnr(const Tensor& a, const Tensor& b, double peak = 1.0);

/// Single-window SSIM over the whole image.
double ssim(const Tensor& a, const Tensor& b, double peak = 1.0);

/// Unbiased RBF-kernel MMD^2, k(u, v) = exp(-|u-v|^2 / (2 h^2)). Without a
/// bandwidth h is the median pairwise distance over the pooled samples.
double mmd(std::span<const Tensor> a, std::span<const Tensor> b,
           std::optional<double> bandwidth = std::nullopt);
double median_bandwidth(std::span<const Tensor> a, std::span<const Tensor> b);

/// Flips every sample of a [N,C,H,W] batch left-right with probability 1/2.
Tensor random_flip(const Tensor& batch, std::mt19937_64& rng);

/// 64-bit content hash of shape and value bits.
std::uint64_t content_hash(const Tensor& t);

void save_dataset(const DomainDataset& d, const std::filesystem::path& path);
DomainDataset load_dataset(const std::filesystem::path& path);

}  // namespace fedcyc
