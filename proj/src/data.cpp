#include "fedcyc/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string_view>

#include "fedcyc/codec.hpp"

namespace fedcyc {

std::string_view task_name(TaskKind k) { return k == TaskKind::denoise ? "denoise" : "style"; }

std::optional<TaskKind> parse_task(std::string_view text) {
  if (text == "denoise") return TaskKind::denoise;
  if (text == "style") return TaskKind::style;
  return std::nullopt;
}

void TaskSpec::validate() const {
  if (n_train == 0) throw DataError("n_train must be at least 1");
  if (kind == TaskKind::denoise && n_eval == 0) throw DataError("n_eval must be at least 1");
  if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) {
    throw DataError("noise_sigma must be finite and non-negative");
  }
}

namespace {

std::mt19937_64 image_rng(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(index),
                    static_cast<std::uint32_t>(index >> 32)};
  return std::mt19937_64(seq);
}

enum Stream : std::uint64_t { stream_x = 1, stream_y = 2, stream_eval = 3, stream_noise = 4 };

Tensor map_values(const Tensor& t, double scale, double offset) {
  std::vector<float> v(t.data().begin(), t.data().end());
  for (auto& x : v) x = static_cast<float>(offset + scale * x);
  return Tensor(t.shape(), std::move(v));
}

Tensor add_noise(const Tensor& t, double sigma, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, sigma);
  std::vector<float> v(t.data().begin(), t.data().end());
  if (sigma > 0)
    for (auto& x : v) x = static_cast<float>(x + n(rng));
  return Tensor(t.shape(), std::move(v));
}

double mean_sq_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("metric inputs differ: " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = double(a[i]) - double(b[i]);
    s += d * d;
  }
  return s / static_cast<double>(a.size());
}

}  // namespace

Tensor procedural_image(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
  constexpr std::size_t n = kImageSize;
  auto rng = image_rng(seed, stream, index);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> img(n * n);

  const double base = 0.1 + 0.2 * u(rng), gx = 0.2 * (u(rng) - 0.5), gy = 0.2 * (u(rng) - 0.5);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      img[i * n + j] = base + gx * (double(j) / (n - 1) - 0.5) + gy * (double(i) / (n - 1) - 0.5);

  const int shapes = 2 + static_cast<int>(rng() % 3);
  for (int s = 0; s < shapes; ++s) {
    const double level = 0.3 + 0.6 * u(rng);
    if (rng() % 2 == 0) {
      const double r0 = u(rng) * n, c0 = u(rng) * n;
      const double h = 3 + u(rng) * 6, w = 3 + u(rng) * 6;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
          if (i >= r0 && i < r0 + h && j >= c0 && j < c0 + w) img[i * n + j] = level;
    } else {
      const double ci = u(rng) * n, cj = u(rng) * n, r = 2 + u(rng) * 4;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          const double di = i - ci, dj = j - cj;
          // soft edge keeps the image smooth-ish
          const double edge = std::clamp(r - std::sqrt(di * di + dj * dj) + 0.5, 0.0, 1.0);
          img[i * n + j] += edge * (level - img[i * n + j]);
        }
    }
  }
  std::vector<float> out(n * n);
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = static_cast<float>(std::clamp(img[k], 0.0, 1.0));
  return Tensor({1, n, n}, std::move(out));
}

TaskData make_denoise_task(std::size_t n_train, std::size_t n_eval, double noise_sigma,
                           std::uint64_t seed) {
  TaskSpec spec{TaskKind::denoise, n_train, n_eval, noise_sigma, seed};
  spec.validate();
  TaskData d;
  d.x = {Domain::X, spec, {}};
  d.y = {Domain::Y, spec, {}};
  auto noise = image_rng(seed, stream_noise, 0);
  for (std::size_t i = 0; i < n_train; ++i) {
    d.x.samples.push_back(procedural_image(seed, stream_x, i));
    d.y.samples.push_back(add_noise(procedural_image(seed, stream_y, i), noise_sigma, noise));
  }
  auto eval_noise = image_rng(seed, stream_noise, 1);
  for (std::size_t i = 0; i < n_eval; ++i) {
    auto clean = procedural_image(seed, stream_eval, i);
    d.eval.degraded.push_back(add_noise(clean, noise_sigma, eval_noise));
    d.eval.clean.push_back(std::move(clean));
  }
  return d;
}

TaskData make_style_task(std::size_t n_per_domain, std::uint64_t seed) {
  TaskSpec spec{TaskKind::style, n_per_domain, 0, 0.0, seed};
  spec.validate();
  TaskData d;
  d.x = {Domain::X, spec, {}};
  d.y = {Domain::Y, spec, {}};
  for (std::size_t i = 0; i < n_per_domain; ++i) {
    d.x.samples.push_back(map_values(procedural_image(seed, stream_x, i), 0.4, 0.0));
    d.y.samples.push_back(map_values(procedural_image(seed, stream_y, i), -0.8, 0.95));
  }
  return d;
}

TaskData make_task(const TaskSpec& spec) {
  spec.validate();
  return spec.kind == TaskKind::denoise
             ? make_denoise_task(spec.n_train, spec.n_eval, spec.noise_sigma, spec.seed)
             : make_style_task(spec.n_train, spec.seed);
}

double psnr(const Tensor& a, const Tensor& b, double peak) {
  if (!(peak > 0)) throw DataError("peak must be positive");
  const double mse = mean_sq_diff(a, b);
  if (mse == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(peak * peak / mse));
}

double ssim(const Tensor& a, const Tensor& b, double peak) {
  mean_sq_diff(a, b);  // shape check
  if (a.rank() < 2 || a.extent(a.rank() - 1) < 8 || a.extent(a.rank() - 2) < 8) {
    throw ShapeError("ssim needs spatial size >= 8, got " + shape_string(a.shape()));
  }
  const double n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double va = 0, vb = 0, cov = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    va += (a[i] - ma) * (a[i] - ma);
    vb += (b[i] - mb) * (b[i] - mb);
    cov += (a[i] - ma) * (b[i] - mb);
  }
  va /= n - 1;
  vb /= n - 1;
  cov /= n - 1;
  const double c1 = (0.01 * peak) * (0.01 * peak), c2 = (0.03 * peak) * (0.03 * peak);
  return ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
}

namespace {

double sq_dist(const Tensor& u, const Tensor& v) {
  if (u.shape() != v.shape()) throw ShapeError("mmd samples differ in shape");
  double s = 0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    const double d = double(u[i]) - double(v[i]);
    s += d * d;
  }
  return s;
}

}  // namespace

double median_bandwidth(std::span<const Tensor> a, std::span<const Tensor> b) {
  std::vector<const Tensor*> pool;
  for (const auto& t : a) pool.push_back(&t);
  for (const auto& t : b) pool.push_back(&t);
  std::vector<double> d;
  for (std::size_t i = 0; i < pool.size(); ++i)
    for (std::size_t j = i + 1; j < pool.size(); ++j) d.push_back(std::sqrt(sq_dist(*pool[i], *pool[j])));
  if (d.empty()) throw DataError("median bandwidth needs at least two samples");
  auto mid = d.begin() + static_cast<std::ptrdiff_t>(d.size() / 2);
  std::nth_element(d.begin(), mid, d.end());
  return *mid > 0 ? *mid : 1.0;
}

double mmd(std::span<const Tensor> a, std::span<const Tensor> b, std::optional<double> bandwidth) {
  if (a.size() < 2 || b.size() < 2) throw DataError("mmd needs at least 2 samples per side");
  const double h = bandwidth ? *bandwidth : median_bandwidth(a, b);
  if (!(h > 0)) throw DataError("mmd bandwidth must be positive");
  const double inv = 1.0 / (2 * h * h);
  auto k = [&](const Tensor& u, const Tensor& v) { return std::exp(-sq_dist(u, v) * inv); };

  double saa = 0, sbb = 0, sab = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = i + 1; j < a.size(); ++j) saa += 2 * k(a[i], a[j]);
  for (std::size_t i = 0; i < b.size(); ++i)
    for (std::size_t j = i + 1; j < b.size(); ++j) sbb += 2 * k(b[i], b[j]);
  for (const auto& u : a)
    for (const auto& v : b) sab += k(u, v);
  const double m = static_cast<double>(a.size()), n = static_cast<double>(b.size());
  return saa / (m * (m - 1)) + sbb / (n * (n - 1)) - 2 * sab / (m * n);
}

Tensor random_flip(const Tensor& batch, std::mt19937_64& rng) {
  if (batch.rank() != 4) throw ShapeError("random_flip expects [N,C,H,W]");
  const std::size_t n = batch.extent(0), rows = batch.extent(1) * batch.extent(2), w = batch.extent(3);
  std::vector<float> v(batch.data().begin(), batch.data().end());
  for (std::size_t s = 0; s < n; ++s) {
    if (rng() % 2 == 0) continue;
    for (std::size_t r = 0; r < rows; ++r) {
      auto row = v.begin() + static_cast<std::ptrdiff_t>((s * rows + r) * w);
      std::reverse(row, row + static_cast<std::ptrdiff_t>(w));
    }
  }
  return Tensor(batch.shape(), std::move(v));
}

std::uint64_t content_hash(const Tensor& t) {
  // FNV-1a over extents and value bits
  std::uint64_t h = 14695981039346656037ull;
  auto mix = [&](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) h = (h ^ b[i]) * 1099511628211ull;
  };
  for (auto e : t.shape()) {
    const std::uint64_t e64 = e;
    mix(&e64, sizeof e64);
  }
  mix(t.data().data(), t.size() * sizeof(float));
  return h;
}

namespace {

constexpr char kDatasetMagic[4] = {'F', 'C', 'D', 'S'};
constexpr std::uint16_t kDatasetVersion = 1;

template <typename U>
void put(std::vector<std::uint8_t>& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

template <typename U>
U get(std::span<const std::uint8_t> in, std::size_t& pos) {
  if (in.size() - pos < sizeof(U)) throw DataError("dataset file truncated");
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(in[pos + i]) << (8 * i);
  pos += sizeof(U);
  return v;
}

}  // namespace

// Layout: magic, version u16, task u8, domain u8, n_train u64, n_eval u64,
// sigma as f64 bits u64, seed u64, count u32, per sample rank u8, extents
// u32, f32 payload; CRC32 of everything before it.
void save_dataset(const DomainDataset& d, const std::filesystem::path& path) {
  std::vector<std::uint8_t> out(std::begin(kDatasetMagic), std::end(kDatasetMagic));
  put<std::uint16_t>(out, kDatasetVersion);
  put<std::uint8_t>(out, static_cast<std::uint8_t>(d.spec.kind));
  put<std::uint8_t>(out, static_cast<std::uint8_t>(d.domain));
  put<std::uint64_t>(out, d.spec.n_train);
  put<std::uint64_t>(out, d.spec.n_eval);
  std::uint64_t sigma_bits;
  std::memcpy(&sigma_bits, &d.spec.noise_sigma, 8);
  put<std::uint64_t>(out, sigma_bits);
  put<std::uint64_t>(out, d.spec.seed);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(d.samples.size()));
  for (const auto& s : d.samples) {
    put<std::uint8_t>(out, static_cast<std::uint8_t>(s.rank()));
    for (auto e : s.shape()) put<std::uint32_t>(out, static_cast<std::uint32_t>(e));
    const auto* p = reinterpret_cast<const std::uint8_t*>(s.data().data());
    out.insert(out.end(), p, p + 4 * s.size());
  }
  put<std::uint32_t>(out, crc32(out));
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write " + path.string());
  f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  if (!f) throw DataError("write failed for " + path.string());
}

DomainDataset load_dataset(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot read " + path.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), {});
  if (bytes.size() < 4 + 2 + 2 + 32 + 4 + 4 || !std::equal(kDatasetMagic, kDatasetMagic + 4, bytes.begin())) {
    throw DataError(path.string() + " is not a dataset file");
  }
  const std::span<const std::uint8_t> all(bytes);
  std::size_t tail = bytes.size() - 4;
  if (crc32(all.first(bytes.size() - 4)) != get<std::uint32_t>(all, tail)) {
    throw DataError(path.string() + ": CRC mismatch");
  }
  const auto body = all.first(bytes.size() - 4);
  std::size_t pos = 4;
  if (get<std::uint16_t>(body, pos) != kDatasetVersion) throw DataError("unknown dataset version");
  DomainDataset d;
  const auto kind = get<std::uint8_t>(body, pos);
  const auto domain = get<std::uint8_t>(body, pos);
  if (kind > 1 || domain > 1) throw DataError("bad dataset header");
  d.spec.kind = static_cast<TaskKind>(kind);
  d.domain = static_cast<Domain>(domain);
  d.spec.n_train = get<std::uint64_t>(body, pos);
  d.spec.n_eval = get<std::uint64_t>(body, pos);
  const auto sigma_bits = get<std::uint64_t>(body, pos);
  std::memcpy(&d.spec.noise_sigma, &sigma_bits, 8);
  d.spec.seed = get<std::uint64_t>(body, pos);
  const auto count = get<std::uint32_t>(body, pos);
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto rank = get<std::uint8_t>(body, pos);
    Shape shape;
    for (std::uint8_t k = 0; k < rank; ++k) shape.push_back(get<std::uint32_t>(body, pos));
    const std::size_t n = element_count(shape);
    if ((body.size() - pos) / 4 < n) throw DataError("dataset file truncated");
    std::vector<float> v(n);
    std::memcpy(v.data(), body.data() + pos, 4 * n);
    pos += 4 * n;
    d.samples.emplace_back(std::move(shape), std::move(v));
  }
  if (pos != body.size()) throw DataError("trailing bytes in dataset file");
  return d;
}

}  // namespace fedcyc
