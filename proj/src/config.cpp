#include "spides/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>

#include "spides/errors.hpp"

namespace spides {

std::vector<double> DataConfig::times() const {
  std::vector<double> out(snapshots);
  for (std::size_t i = 0; i < snapshots; ++i) {
    out[i] = t_start + (t_end - t_start) * static_cast<double>(i) / static_cast<double>(snapshots - 1);
  }
  return out;
}

BasisLibrary PipelineConfig::basis() const {
  return BasisLibrary::parse(data.dim, library.drift_basis, library.diffusion_basis, library.drift_known,
                             library.diffusion_known);
}

namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

[[noreturn]] void bad(const std::string& key, const std::string& why) {
  throw ConfigError("config key '" + key + "': " + why);
}

double to_real(const std::string& key, const std::string& v) {
  double out = 0.0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || !std::isfinite(out)) bad(key, "expected a number, got '" + v + "'");
  return out;
}

std::uint64_t to_unsigned(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) bad(key, "expected a nonnegative integer, got '" + v + "'");
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  bad(key, "expected true or false, got '" + v + "'");
}

std::vector<std::size_t> to_widths(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  std::stringstream in(v);
  std::string item;
  while (std::getline(in, item, ',')) {
    const auto n = to_unsigned(key, trim(item));
    if (n == 0) bad(key, "layer widths must be positive");
    out.push_back(n);
  }
  if (out.empty()) bad(key, "expected at least one hidden width");
  return out;
}

using Setter = std::function<void(PipelineConfig&, const std::string& key, const std::string& value)>;

template <class T>
Setter real(T PipelineConfig::*section, double T::*field) {
  return [=](PipelineConfig& c, const std::string& k, const std::string& v) { (c.*section).*field = to_real(k, v); };
}

template <class T, class U>
Setter count(T PipelineConfig::*section, U T::*field) {
  return [=](PipelineConfig& c, const std::string& k, const std::string& v) {
    (c.*section).*field = static_cast<U>(to_unsigned(k, v));
  };
}

template <class T>
Setter text(T PipelineConfig::*section, std::string T::*field) {
  return [=](PipelineConfig& c, const std::string&, const std::string& v) { (c.*section).*field = v; };
}

const std::map<std::string, Setter>& setters() {
  using P = PipelineConfig;
  static const std::map<std::string, Setter> table = {
      {"data.dim", count(&P::data, &DataConfig::dim)},
      {"data.t_start", real(&P::data, &DataConfig::t_start)},
      {"data.t_end", real(&P::data, &DataConfig::t_end)},
      {"data.snapshots", count(&P::data, &DataConfig::snapshots)},
      {"data.samples", count(&P::data, &DataConfig::samples)},
      {"data.step", real(&P::data, &DataConfig::step)},
      {"data.p0_mean", real(&P::data, &DataConfig::p0_mean)},
      {"data.p0_std", real(&P::data, &DataConfig::p0_std)},
      {"data.drift", text(&P::data, &DataConfig::drift)},
      {"data.diffusion", text(&P::data, &DataConfig::diffusion)},
      {"data.workers", count(&P::data, &DataConfig::workers)},
      {"data.seed", count(&P::data, &DataConfig::seed)},
      {"ot.mode",
       [](P& c, const std::string& k, const std::string& v) {
         if (v != "full" && v != "minibatch") bad(k, "expected full or minibatch, got '" + v + "'");
         c.ot.minibatch = v == "minibatch";
       }},
      {"ot.minibatch_size", count(&P::ot, &OtConfig::minibatch_size)},
      {"ot.seed", count(&P::ot, &OtConfig::seed)},
      {"flow.hidden", [](P& c, const std::string& k, const std::string& v) { c.flow.hidden = to_widths(k, v); }},
      {"flow.sigma", real(&P::flow, &CfmConfig::sigma)},
      {"flow.batch", count(&P::flow, &CfmConfig::batch_size)},
      {"flow.epochs", count(&P::flow, &CfmConfig::epochs)},
      {"flow.lr", real(&P::flow, &CfmConfig::learning_rate)},
      {"flow.lr_decay", real(&P::flow, &CfmConfig::lr_decay)},
      {"flow.seed", count(&P::flow, &CfmConfig::seed)},
      {"score.hidden", [](P& c, const std::string& k, const std::string& v) { c.score.hidden = to_widths(k, v); }},
      {"score.batch", count(&P::score, &ScoreConfig::batch_size)},
      {"score.epochs", count(&P::score, &ScoreConfig::epochs)},
      {"score.lr", real(&P::score, &ScoreConfig::learning_rate)},
      {"score.lr_decay", real(&P::score, &ScoreConfig::lr_decay)},
      {"score.seed", count(&P::score, &ScoreConfig::seed)},
      {"drift.basis", text(&P::library, &LibraryConfig::drift_basis)},
      {"drift.known", text(&P::library, &LibraryConfig::drift_known)},
      {"diffusion.basis", text(&P::library, &LibraryConfig::diffusion_basis)},
      {"diffusion.known", text(&P::library, &LibraryConfig::diffusion_known)},
      {"identify.lambda_kl", [](P& c, const std::string& k, const std::string& v) { c.identify.fit.lambda_kl = to_real(k, v); }},
      {"identify.lambda_sparsity",
       [](P& c, const std::string& k, const std::string& v) { c.identify.fit.lambda_sparsity = to_real(k, v); }},
      {"identify.tau0", [](P& c, const std::string& k, const std::string& v) { c.identify.fit.tau0 = to_real(k, v); }},
      {"identify.lr", [](P& c, const std::string& k, const std::string& v) { c.identify.fit.learning_rate = to_real(k, v); }},
      {"identify.lr_decay", [](P& c, const std::string& k, const std::string& v) { c.identify.fit.lr_decay = to_real(k, v); }},
      {"identify.epochs", [](P& c, const std::string& k, const std::string& v) { c.identify.fit.epochs = to_unsigned(k, v); }},
      {"identify.mc_draws", [](P& c, const std::string& k, const std::string& v) { c.identify.fit.mc_draws = to_unsigned(k, v); }},
      {"identify.batch", [](P& c, const std::string& k, const std::string& v) { c.identify.fit.batch_size = to_unsigned(k, v); }},
      {"identify.seed", [](P& c, const std::string& k, const std::string& v) { c.identify.fit.seed = to_unsigned(k, v); }},
      {"identify.printed_sb_kl",
       [](P& c, const std::string& k, const std::string& v) { c.identify.fit.kl.sb_uses_sa_sigma = to_bool(k, v); }},
      {"identify.threshold", real(&P::identify, &IdentifyConfig::threshold)},
      {"identify.joint", [](P& c, const std::string& k, const std::string& v) { c.identify.joint = to_bool(k, v); }},
      {"identify.quantile_draws", count(&P::identify, &IdentifyConfig::quantile_draws)},
      {"evaluate.flow_step", real(&P::evaluate, &EvaluateConfig::flow_step)},
      {"evaluate.sde_step", real(&P::evaluate, &EvaluateConfig::sde_step)},
      {"evaluate.bins", count(&P::evaluate, &EvaluateConfig::bins)},
      {"evaluate.workers", count(&P::evaluate, &EvaluateConfig::workers)},
      {"evaluate.seed", count(&P::evaluate, &EvaluateConfig::seed)},
      {"io.dataset", text(&P::io, &IoConfig::dataset)},
      {"io.flow_model", text(&P::io, &IoConfig::flow_model)},
      {"io.score_model", text(&P::io, &IoConfig::score_model)},
      {"io.flow_loss", text(&P::io, &IoConfig::flow_loss)},
      {"io.score_loss", text(&P::io, &IoConfig::score_loss)},
      {"io.identify_loss", text(&P::io, &IoConfig::identify_loss)},
      {"io.report", text(&P::io, &IoConfig::report)},
      {"io.coefficients", text(&P::io, &IoConfig::coefficients)},
      {"io.metrics", text(&P::io, &IoConfig::metrics)},
      {"io.density_observed", text(&P::io, &IoConfig::density_observed)},
      {"io.density_flow", text(&P::io, &IoConfig::density_flow)},
      {"io.density_sde", text(&P::io, &IoConfig::density_sde)},
  };
  return table;
}

void require(bool ok, const std::string& key, const std::string& why) {
  if (!ok) bad(key, why);
}

bool is_multiple(double span, double step) {
  const double n = std::round(span / step);
  return n >= 1.0 && std::abs(n * step - span) <= 1e-9 * std::max(1.0, span);
}

}  // namespace

void PipelineConfig::validate() const {
  require(data.dim >= 1, "data.dim", "must be at least 1");
  require(data.t_start >= 0.0, "data.t_start", "must be nonnegative");
  require(data.t_end > 0.0, "data.t_end", "must be positive");
  require(data.t_end > data.t_start, "data.t_end", "must exceed data.t_start");
  require(data.snapshots >= 2, "data.snapshots", "need at least 2 snapshots");
  require(data.samples >= 2, "data.samples", "need at least 2 samples per snapshot");
  require(data.step > 0.0, "data.step", "must be positive");
  require(data.p0_std > 0.0, "data.p0_std", "must be positive");
  require(data.workers >= 1, "data.workers", "must be at least 1");
  require(is_multiple(data.t_end - data.t_start, data.step) &&
              is_multiple((data.t_end - data.t_start) / static_cast<double>(data.snapshots - 1), data.step),
          "data.step", "snapshot spacing must be an integer multiple of the step");
  require(data.t_start == 0.0 || is_multiple(data.t_start, data.step), "data.t_start",
          "must be an integer multiple of data.step");
  require(ot.minibatch_size >= 1, "ot.minibatch_size", "must be positive");
  require(flow.sigma > 0.0, "flow.sigma", "must be positive");
  require(flow.batch_size >= 1, "flow.batch", "must be positive");
  require(flow.epochs >= 1, "flow.epochs", "must be positive");
  require(flow.learning_rate > 0.0, "flow.lr", "must be positive");
  require(flow.lr_decay > 0.0, "flow.lr_decay", "must be positive");
  require(score.lr_decay > 0.0, "score.lr_decay", "must be positive");
  require(identify.fit.lr_decay > 0.0, "identify.lr_decay", "must be positive");
  require(score.batch_size >= 1, "score.batch", "must be positive");
  require(score.epochs >= 1, "score.epochs", "must be positive");
  require(score.learning_rate > 0.0, "score.lr", "must be positive");
  const auto& f = identify.fit;
  require(f.lambda_kl >= 0.0, "identify.lambda_kl", "must be nonnegative");
  require(f.lambda_sparsity > 0.0, "identify.lambda_sparsity", "must be positive");
  require(f.tau0 > 0.0, "identify.tau0", "must be positive");
  require(f.learning_rate > 0.0, "identify.lr", "must be positive");
  require(f.epochs >= 1, "identify.epochs", "must be positive");
  require(f.mc_draws >= 1, "identify.mc_draws", "must be positive");
  require(f.batch_size >= 1, "identify.batch", "must be positive");
  require(identify.threshold >= 0.0, "identify.threshold", "must be nonnegative");
  require(identify.quantile_draws >= 2, "identify.quantile_draws", "must be at least 2");
  require(evaluate.flow_step > 0.0, "evaluate.flow_step", "must be positive");
  require(evaluate.sde_step > 0.0, "evaluate.sde_step", "must be positive");
  require(evaluate.bins >= 1, "evaluate.bins", "must be positive");
  require(evaluate.workers >= 1, "evaluate.workers", "must be at least 1");
  try {
    parse_per_dimension(data.drift, data.dim);
  } catch (const std::exception& e) {
    bad("data.drift", e.what());
  }
  try {
    parse_per_dimension(data.diffusion, data.dim);
  } catch (const std::exception& e) {
    bad("data.diffusion", e.what());
  }
  try {
    basis();
  } catch (const std::exception& e) {
    throw ConfigError(std::string("library configuration (drift.* / diffusion.*): ") + e.what());
  }
}

PipelineConfig parse_config(const std::string& text, const std::string* seed_override) {
  PipelineConfig config;
  std::istringstream in(text);
  std::string line;
  std::size_t number = 0;
  const auto& table = setters();
  while (std::getline(in, line)) {
    ++number;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    const std::string content = trim(line);
    if (content.empty()) continue;
    const auto eq = content.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(number) + ": expected 'section.key = value'");
    }
    const std::string key = trim(std::string_view(content).substr(0, eq));
    const std::string value = trim(std::string_view(content).substr(eq + 1));
    const auto it = table.find(key);
    if (it == table.end()) bad(key, "unknown key");
    it->second(config, key, value);
  }
  if (seed_override) {
    for (const auto& [key, set] : table) {
      if (key.size() > 5 && key.ends_with(".seed")) set(config, "SPIDES_SEED", *seed_override);
    }
  }
  config.validate();
  return config;
}

PipelineConfig load_config(const std::filesystem::path& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw ConfigError("cannot read config file " + path.string());
  std::stringstream buffer;
  buffer << file.rdbuf();
  const char* env = std::getenv("SPIDES_SEED");
  if (env) {
    const std::string seed = env;
    return parse_config(buffer.str(), &seed);
  }
  return parse_config(buffer.str());
}

}  // namespace spides
