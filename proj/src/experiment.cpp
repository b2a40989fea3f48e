#include "fedcyc/experiment.hpp"

#include <openssl/sha.h>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

namespace fedcyc {

std::string_view run_mode_name(RunMode m) {
  switch (m) {
    case RunMode::centralized: return "centralized";
    case RunMode::federated: return "federated";
    case RunMode::switchable_federated: return "switchable-federated";
  }
  return "?";
}

std::optional<RunMode> parse_run_mode(std::string_view text) {
  for (RunMode m : {RunMode::centralized, RunMode::federated, RunMode::switchable_federated})
    if (run_mode_name(m) == text) return m;
  return std::nullopt;
}

Variant ExperimentConfig::variant() const {
  return mode == RunMode::switchable_federated ? Variant::switchable : Variant::standard;
}

TrainConfig ExperimentConfig::train_config() const {
  TrainConfig t;
  t.variant = variant();
  t.generator = generator;
  t.discriminator = discriminator;
  t.model_seed = seed;
  t.weights = weights;
  t.rounds = rounds;
  t.lr = lr;
  t.optimizer = optimizer;
  t.step_mode = step_mode;
  t.selection_seed = seed;
  if (mode != RunMode::centralized) {
    t.aggregation = aggregation;
    t.selected = selected;
    t.transport = transport;
    t.host = host;
    t.port = port;
  }
  return t;
}

void ExperimentConfig::validate() const {
  try {
    TaskSpec t = task;
    t.seed = seed;
    t.validate();
    if (batch_size == 0) throw ConfigError("batch_size must be at least 1");
    if (clients_per_domain == 0) throw ConfigError("clients_per_domain must be at least 1");
    if (clients_per_domain > task.n_train) {
      throw ConfigError("clients_per_domain exceeds n_train; some clients would hold no data");
    }
    if (!(optimizer.beta1 >= 0 && optimizer.beta1 < 1) || !(optimizer.beta2 >= 0 && optimizer.beta2 < 1)) {
      throw ConfigError("optimizer betas must lie in [0, 1)");
    }
    if (!(optimizer.epsilon > 0)) throw ConfigError("optimizer epsilon must be positive");
    const std::size_t clients = mode == RunMode::centralized ? 2 : 2 * clients_per_domain;
    train_config().validate(clients);
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

namespace {

std::string fmt(double v) {
  char buf[32];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

template <typename U>
U parse_unsigned(const std::string& key, const std::string& v) {
  U out{};
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || p != v.data() + v.size()) {
    throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  double out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || p != v.data() + v.size() || !std::isfinite(out)) {
    throw ConfigError(key + ": expected a finite number, got '" + v + "'");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

template <typename E>
E parse_enum(const std::string& key, const std::string& v, std::optional<E> (*parse)(std::string_view)) {
  auto e = parse(v);
  if (!e) throw ConfigError(key + ": unknown value '" + v + "'");
  return *e;
}

std::optional<OptimizerKind> parse_opt(std::string_view s) { return parse_optimizer(s); }

struct Field {
  const char* section;
  const char* key;
  std::function<void(ExperimentConfig&, const std::string& full_key, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

#define FC_SIZE(sec, name, member)                                                         \
  Field {                                                                                  \
    sec, name,                                                                             \
        [](ExperimentConfig& c, const std::string& k, const std::string& v) {              \
          c.member = parse_unsigned<std::size_t>(k, v);                                    \
        },                                                                                 \
        [](const ExperimentConfig& c) { return std::to_string(c.member); }                 \
  }
#define FC_REAL(sec, name, member)                                                                  \
  Field {                                                                                           \
    sec, name,                                                                                      \
        [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.member = parse_double(k, v); }, \
        [](const ExperimentConfig& c) { return fmt(c.member); }                                     \
  }
#define FC_BOOL(sec, name, member)                                                                \
  Field {                                                                                         \
    sec, name,                                                                                    \
        [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.member = parse_bool(k, v); }, \
        [](const ExperimentConfig& c) { return std::string(c.member ? "true" : "false"); }        \
  }
#define FC_ENUM(sec, name, member, parser, namer)                                                  \
  Field {                                                                                          \
    sec, name,                                                                                     \
        [](ExperimentConfig& c, const std::string& k, const std::string& v) {                      \
          c.member = parse_enum(k, v, parser);                                                     \
        },                                                                                         \
        [](const ExperimentConfig& c) { return std::string(namer(c.member)); }                     \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> f = {
      FC_ENUM("task", "kind", task.kind, parse_task, task_name),
      FC_SIZE("task", "n_train", task.n_train),
      FC_SIZE("task", "n_eval", task.n_eval),
      FC_REAL("task", "noise_sigma", task.noise_sigma),

      FC_SIZE("model", "generator_width", generator.base_width),
      FC_SIZE("model", "generator_depth", generator.depth),
      FC_BOOL("model", "residual_skip", generator.residual_skip),
      FC_BOOL("model", "tanh_output", generator.tanh_output),
      FC_SIZE("model", "generator_code_hidden", generator.code_hidden),
      FC_SIZE("model", "discriminator_width", discriminator.base_width),
      FC_SIZE("model", "discriminator_depth", discriminator.depth),
      FC_SIZE("model", "discriminator_code_hidden", discriminator.code_hidden),

      FC_ENUM("loss", "gan_mode", weights.gan_mode, parse_gan_mode, gan_mode_name),
      FC_REAL("loss", "lambda_cycle", weights.lambda_cycle),
      FC_REAL("loss", "lambda_identity", weights.lambda_identity),
      FC_ENUM("loss", "step_mode", step_mode, parse_step_mode, step_mode_name),

      FC_SIZE("federated", "clients_per_domain", clients_per_domain),
      FC_SIZE("federated", "selected", selected),
      FC_ENUM("federated", "aggregation", aggregation, parse_aggregation, aggregation_name),
      FC_ENUM("federated", "transport", transport, parse_transport, transport_name),
      Field{"federated", "host",
            [](ExperimentConfig& c, const std::string&, const std::string& v) { c.host = v; },
            [](const ExperimentConfig& c) { return c.host; }},
      Field{"federated", "port",
            [](ExperimentConfig& c, const std::string& k, const std::string& v) {
              c.port = parse_unsigned<std::uint16_t>(k, v);
            },
            [](const ExperimentConfig& c) { return std::to_string(c.port); }},

      FC_ENUM("optimizer", "kind", optimizer.kind, parse_opt, optimizer_name),
      FC_REAL("optimizer", "lr", lr),
      FC_REAL("optimizer", "beta1", optimizer.beta1),
      FC_REAL("optimizer", "beta2", optimizer.beta2),
      FC_REAL("optimizer", "epsilon", optimizer.epsilon),
      FC_SIZE("optimizer", "rounds", rounds),

      FC_ENUM("run", "mode", mode, parse_run_mode, run_mode_name),
      Field{"run", "seed",
            [](ExperimentConfig& c, const std::string& k, const std::string& v) {
              c.seed = parse_unsigned<std::uint64_t>(k, v);
            },
            [](const ExperimentConfig& c) { return std::to_string(c.seed); }},
      FC_SIZE("run", "batch_size", batch_size),
      FC_BOOL("run", "augment", augment),
      Field{"run", "output_dir",
            [](ExperimentConfig& c, const std::string&, const std::string& v) { c.output_dir = v; },
            [](const ExperimentConfig& c) { return c.output_dir; }},
  };
  return f;
}

#undef FC_SIZE
#undef FC_REAL
#undef FC_BOOL
#undef FC_ENUM

const Field* find_field(const std::string& section, const std::string& key) {
  for (const auto& f : fields())
    if (section == f.section && key == f.key) return &f;
  return nullptr;
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw ArtifactError("cannot read " + p.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_file(const std::filesystem::path& p, std::string_view bytes) {
  std::ofstream out(p, std::ios::binary);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ArtifactError("cannot write " + p.string());
}

}  // namespace

LoadedConfig parse_config(std::string_view text, std::optional<RunMode> mode) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    std::istringstream in{std::string(text)};
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("config syntax: ") + e.what());
  }

  LoadedConfig out;
  ExperimentConfig& c = out.config;
  for (const auto& [section, body] : tree) {
    if (body.empty()) throw ConfigError("key '" + section + "' outside a section");
    for (const auto& [key, value] : body) {
      if (!find_field(section, key)) throw ConfigError("unknown key " + section + "." + key);
    }
  }
  // mode decides which keys apply, so it goes first
  if (auto m = tree.get_optional<std::string>("run.mode")) find_field("run", "mode")->set(c, "run.mode", *m);
  if (mode) c.mode = *mode;

  for (const auto& [section, body] : tree) {
    for (const auto& [key, value] : body) {
      const std::string full = section + "." + key;
      if (full == "run.mode") continue;
      if (section == "federated" && c.mode == RunMode::centralized) {
        out.warnings.push_back(full + " is ignored in centralized mode");
        continue;
      }
      find_field(section, key)->set(c, full, value.data());
    }
  }
  c.task.seed = c.seed;
  c.validate();
  return out;
}

LoadedConfig load_config(const std::filesystem::path& path, std::optional<RunMode> mode) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const ArtifactError& e) {
    throw ConfigError(e.what());
  }
  return parse_config(text, mode);
}

std::string to_ini(const ExperimentConfig& c) {
  std::ostringstream s;
  const char* current = nullptr;
  for (const auto& f : fields()) {
    if (!current || std::string_view(current) != f.section) {
      if (current) s << "\n";
      current = f.section;
      s << "[" << current << "]\n";
    }
    s << f.key << " = " << f.get(c) << "\n";
  }
  return s.str();
}

std::filesystem::path output_dir(const ExperimentConfig& c) {
  const char* env = std::getenv("FEDCYC_OUTPUT_DIR");
  return env && *env ? std::filesystem::path(env) : std::filesystem::path(c.output_dir);
}

TaskData build_task(const ExperimentConfig& c) {
  TaskSpec t = c.task;
  t.seed = c.seed;
  return make_task(t);
}

TrainResult run_experiment(const ExperimentConfig& c, const TaskData& task) {
  const TrainConfig cfg = c.train_config();
  if (c.mode == RunMode::centralized) {
    auto [x, y] = whole_domain_sources(task, c.batch_size, c.seed);
    x.augment = y.augment = c.augment;
    return train_centralized(cfg, x, y);
  }
  auto clients = make_clients(task, c.clients_per_domain, c.batch_size, c.seed);
  for (auto& cl : clients) cl.augment = c.augment;
  return train_federated(cfg, clients);
}

std::string sha1_hex(std::string_view bytes) {
  unsigned char digest[SHA_DIGEST_LENGTH];
  SHA1(reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size(), digest);
  std::ostringstream s;
  for (unsigned char b : digest) s << std::hex << std::setw(2) << std::setfill('0') << int{b};
  return s.str();
}

std::string git_blob_sha1(std::string_view bytes) {
  std::string framed = "blob " + std::to_string(bytes.size());
  framed.push_back('\0');
  framed.append(bytes);
  return sha1_hex(framed);
}

std::string history_csv(const TrainHistory& h) {
  std::ostringstream s;
  s << "round,lr,client,selected,domain,loss,adversarial_real,adversarial_fake,cycle,identity,"
       "client_d_step_loss,client_g_step_loss,d_step_loss,g_step_loss,param_checksum\n";
  for (const auto& r : h.rounds) {
    for (const auto& l : r.losses) {
      const auto& t = l.report.terms;
      const bool chosen = std::find(r.selected.begin(), r.selected.end(), l.client) != r.selected.end();
      s << r.round << ',' << fmt(r.lr) << ',' << l.client << ',' << chosen << ',' << domain_name(l.report.domain) << ','
        << fmt(l.report.loss) << ',' << fmt(t.adversarial_real) << ',' << fmt(t.adversarial_fake) << ','
        << fmt(t.cycle) << ',' << fmt(t.identity) << ',' << fmt(l.report.d_step_loss) << ','
        << fmt(l.report.g_step_loss) << ',' << fmt(r.d_step_loss) << ',' << fmt(r.g_step_loss) << ','
        << r.param_checksum << '\n';
    }
  }
  return s.str();
}

TrainHistory read_history_csv(std::string_view text) {
  TrainHistory h;
  std::istringstream in{std::string(text)};
  std::string line;
  std::getline(in, line);  // header
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::istringstream row(line);
    for (std::string cell; std::getline(row, cell, ',');) cols.push_back(cell);
    if (cols.size() != 15) throw ArtifactError("history line " + std::to_string(line_no) + ": expected 15 columns");
    const bool chosen = cols[3] == "1";
    cols.erase(cols.begin() + 3);
    const auto round = parse_unsigned<std::uint32_t>("round", cols[0]);
    if (h.rounds.empty() || h.rounds.back().round != round) {
      RoundRecord r;
      r.round = round;
      r.lr = parse_double("lr", cols[1]);
      r.d_step_loss = parse_double("d_step_loss", cols[11]);
      r.g_step_loss = parse_double("g_step_loss", cols[12]);
      r.param_checksum = parse_unsigned<std::uint32_t>("param_checksum", cols[13]);
      h.rounds.push_back(r);
    }
    ClientLoss l;
    l.client = parse_unsigned<std::uint32_t>("client", cols[2]);
    l.report.domain = cols[3] == "Y" ? Domain::Y : Domain::X;
    l.report.loss = parse_double("loss", cols[4]);
    l.report.terms = {parse_double("adversarial_real", cols[5]), parse_double("adversarial_fake", cols[6]),
                      parse_double("cycle", cols[7]), parse_double("identity", cols[8])};
    l.report.d_step_loss = parse_double("client_d_step_loss", cols[9]);
    l.report.g_step_loss = parse_double("client_g_step_loss", cols[10]);
    if (chosen) h.rounds.back().selected.push_back(l.client);
    h.rounds.back().losses.push_back(l);
  }
  return h;
}

std::vector<std::uint8_t> encode_params(const CycleModels& m, std::uint32_t rounds) {
  GradientMessage msg;
  msg.round = rounds;
  msg.step = StepKind::combined;
  msg.groups = m.groups;
  return encode(msg);
}

CycleModels decode_params(const ExperimentConfig& c, std::span<const std::uint8_t> bytes) {
  auto models = build_cycle_models(c.variant(), c.generator, c.discriminator, c.seed);
  auto msg = decode(bytes);
  if (msg.groups.size() != models.groups.size()) {
    throw ArtifactError("parameter file holds " + std::to_string(msg.groups.size()) + " groups, config implies " +
                        std::to_string(models.groups.size()));
  }
  for (std::size_t i = 0; i < msg.groups.size(); ++i) {
    if (!msg.groups[i].congruent(models.groups[i])) {
      throw ArtifactError("parameter group " + std::string(role_name(msg.groups[i].role())) +
                          " does not match the configured architecture");
    }
  }
  models.groups = std::move(msg.groups);
  return models;
}

void write_run(const std::filesystem::path& dir, const ExperimentConfig& c, const TrainResult& r) {
  std::filesystem::create_directories(dir);
  const std::string config = to_ini(c);
  const std::string history = history_csv(r.history);
  const auto params = encode_params(r.models, static_cast<std::uint32_t>(c.rounds));
  const std::string_view params_view(reinterpret_cast<const char*>(params.data()), params.size());
  write_file(dir / kConfigFile, config);
  write_file(dir / kHistoryFile, history);
  write_file(dir / kParamsFile, params_view);

  nlohmann::json m;
  m["mode"] = std::string(run_mode_name(c.mode));
  m["rounds"] = c.rounds;
  m["config_sha1"] = sha1_hex(config);
  m["config"] = config;
  m["history_checksum"] = r.history.checksum();
  m["param_checksum"] = param_checksum(r.models.groups);
  m["files"] = {{kConfigFile, git_blob_sha1(config)},
                {kHistoryFile, git_blob_sha1(history)},
                {kParamsFile, git_blob_sha1(params_view)}};
  write_file(dir / kManifestFile, m.dump(2) + "\n");
}

EvalSummary evaluate(const TaskData& task, const CycleModels& models) {
  EvalSummary e;
  e.kind = task.x.spec.kind;
  if (e.kind == TaskKind::denoise) {
    const auto& ev = task.eval;
    const auto out = translate_to_x(models, ev.degraded);
    for (std::size_t i = 0; i < out.size(); ++i) {
      e.input_psnr += psnr(ev.degraded[i], ev.clean[i]);
      e.output_psnr += psnr(out[i], ev.clean[i]);
      e.input_ssim += ssim(ev.degraded[i], ev.clean[i]);
      e.output_ssim += ssim(out[i], ev.clean[i]);
    }
    e.samples = out.size();
    const double n = static_cast<double>(out.size());
    e.input_psnr /= n;
    e.output_psnr /= n;
    e.input_ssim /= n;
    e.output_ssim /= n;
  } else {
    const std::size_t n = std::min({task.x.samples.size(), task.y.samples.size(), std::max<std::size_t>(task.x.spec.n_eval, 2)});
    std::span<const Tensor> target(task.x.samples.data(), n), source(task.y.samples.data(), n);
    const auto out = translate_to_x(models, source);
    // one bandwidth for both, so the two numbers are comparable
    const double h = median_bandwidth(target, source);
    e.input_mmd = mmd(target, source, h);
    e.output_mmd = mmd(target, out, h);
    e.samples = n;
  }
  return e;
}

EvalSummary report_run(const std::filesystem::path& dir) {
  for (const char* f : {kConfigFile, kParamsFile}) {
    if (!std::filesystem::exists(dir / f)) throw ArtifactError("missing " + (dir / f).string());
  }
  ExperimentConfig c;
  try {
    c = parse_config(read_file(dir / kConfigFile)).config;
  } catch (const ConfigError& e) {
    throw ArtifactError((dir / kConfigFile).string() + ": " + e.what());
  }
  const std::string raw = read_file(dir / kParamsFile);
  std::vector<std::uint8_t> bytes(raw.begin(), raw.end());
  CycleModels models;
  try {
    models = decode_params(c, bytes);
  } catch (const CodecError& e) {
    throw ArtifactError((dir / kParamsFile).string() + ": " + e.what());
  }
  return evaluate(build_task(c), models);
}

std::string eval_csv(const EvalSummary& e, std::string_view method) {
  std::ostringstream s;
  if (e.kind == TaskKind::denoise) {
    s << "method,samples,input_psnr,output_psnr,input_ssim,output_ssim\n"
      << method << ',' << e.samples << ',' << fmt(e.input_psnr) << ',' << fmt(e.output_psnr) << ','
      << fmt(e.input_ssim) << ',' << fmt(e.output_ssim) << '\n';
  } else {
    s << "method,samples,input_mmd,output_mmd\n"
      << method << ',' << e.samples << ',' << fmt(e.input_mmd) << ',' << fmt(e.output_mmd) << '\n';
  }
  return s.str();
}

std::string eval_table(const EvalSummary& e, std::string_view method) {
  std::ostringstream s;
  s << std::fixed;
  if (e.kind == TaskKind::denoise) {
    s << std::left << std::setw(24) << "Method" << std::right << std::setw(10) << "PSNR" << std::setw(10)
      << "SSIM" << "\n";
    s << std::left << std::setw(24) << "Input" << std::right << std::setprecision(2) << std::setw(10)
      << e.input_psnr << std::setprecision(4) << std::setw(10) << e.input_ssim << "\n";
    s << std::left << std::setw(24) << method << std::right << std::setprecision(2) << std::setw(10)
      << e.output_psnr << std::setprecision(4) << std::setw(10) << e.output_ssim << "\n";
  } else {
    s << std::left << std::setw(24) << "Method" << std::right << std::setw(12) << "MMD" << "\n";
    s << std::setprecision(5);
    s << std::left << std::setw(24) << "Input" << std::right << std::setw(12) << e.input_mmd << "\n";
    s << std::left << std::setw(24) << method << std::right << std::setw(12) << e.output_mmd << "\n";
  }
  return s.str();
}

std::string plot_data(const TrainHistory& h) {
  std::ostringstream s;
  s << "# round lr d_step_loss g_step_loss\n";
  for (const auto& r : h.rounds) {
    s << r.round << ' ' << fmt(r.lr) << ' ' << fmt(r.d_step_loss) << ' ' << fmt(r.g_step_loss) << '\n';
  }
  return s.str();
}

}  // namespace fedcyc
