#include "ppde/config.h"

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

namespace ppde {

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return {};
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

std::string unquote(const std::string& s) {
  if (s.size() >= 2 && ((s.front() == '"' && s.back() == '"') || (s.front() == '\'' && s.back() == '\'')))
    return s.substr(1, s.size() - 2);
  return s;
}

// Strips a trailing comment that is not inside quotes.
std::string strip_comment(const std::string& line) {
  char quote = 0;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quote) {
      if (c == quote) quote = 0;
    } else if (c == '"' || c == '\'') {
      quote = c;
    } else if (c == '#') {
      return line.substr(0, i);
    }
  }
  return line;
}

class Reader {
 public:
  explicit Reader(std::map<std::string, std::string> kv) : kv_(std::move(kv)) {}

  bool has(const std::string& key) const { return kv_.count(key) != 0; }

  std::string raw(const std::string& key) {
    used_.insert(key);
    auto it = kv_.find(key);
    if (it == kv_.end()) throw ConfigError("missing required config key '" + key + "'", key);
    return it->second;
  }

  std::string str(const std::string& key, const std::string& fallback) {
    return has(key) ? unquote(raw(key)) : fallback;
  }

  std::string required_str(const std::string& key) { return unquote(raw(key)); }

  double num(const std::string& key, double fallback) { return has(key) ? to_double(key, raw(key)) : fallback; }

  long long integer(const std::string& key, long long fallback) {
    return has(key) ? to_int(key, raw(key)) : fallback;
  }

  long long required_int(const std::string& key) { return to_int(key, raw(key)); }

  bool flag(const std::string& key, bool fallback) {
    if (!has(key)) return fallback;
    const auto v = unquote(raw(key));
    if (v == "true" || v == "1" || v == "on") return true;
    if (v == "false" || v == "0" || v == "off") return false;
    throw ConfigError("config key '" + key + "' expects true or false, got '" + v + "'", key);
  }

  std::vector<std::string> list(const std::string& key) {
    std::string v = trim(raw(key));
    if (!v.empty() && v.front() == '[') {
      if (v.back() != ']') throw ConfigError("config key '" + key + "' has an unterminated list", key);
      v = v.substr(1, v.size() - 2);
    }
    std::vector<std::string> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
      item = unquote(trim(item));
      if (!item.empty()) out.push_back(item);
    }
    return out;
  }

  std::vector<double> nums(const std::string& key, std::vector<double> fallback) {
    if (!has(key)) return fallback;
    std::vector<double> out;
    for (const auto& s : list(key)) out.push_back(to_double(key, s));
    return out;
  }

  std::vector<int> ints(const std::string& key, std::vector<int> fallback) {
    if (!has(key)) return fallback;
    std::vector<int> out;
    for (const auto& s : list(key)) out.push_back(static_cast<int>(to_int(key, s)));
    return out;
  }

  void reject_unknown() const {
    for (const auto& [k, v] : kv_)
      if (!used_.count(k)) throw ConfigError("unknown config key '" + k + "'", k);
  }

 private:
  static double to_double(const std::string& key, const std::string& s) {
    try {
      std::size_t pos = 0;
      const double v = std::stod(unquote(s), &pos);
      if (pos == unquote(s).size()) return v;
    } catch (const std::exception&) {
    }
    throw ConfigError("config key '" + key + "' expects a number, got '" + s + "'", key);
  }

  static long long to_int(const std::string& key, const std::string& s) {
    try {
      std::size_t pos = 0;
      const long long v = std::stoll(unquote(s), &pos);
      if (pos == unquote(s).size()) return v;
    } catch (const std::exception&) {
    }
    throw ConfigError("config key '" + key + "' expects an integer, got '" + s + "'", key);
  }

  std::map<std::string, std::string> kv_;
  std::set<std::string> used_;
};

int as_int(long long v, const std::string& key) {
  if (v < -2147483647LL || v > 2147483647LL) throw ConfigError("config key '" + key + "' is out of range", key);
  return static_cast<int>(v);
}

std::uint64_t as_seed(long long v, const std::string& key) {
  if (v < 0) throw ConfigError("config key '" + key + "' must be non-negative", key);
  return static_cast<std::uint64_t>(v);
}

void read_problem(Reader& r, ExperimentConfig& c) {
  c.kind = r.required_str("problem.kind");
  ProblemSpec& p = c.problem;
  if (c.kind == "heat") {
    const int d = as_int(r.integer("problem.dim", 1), "problem.dim");
    p.dynamics = BrownianMotion{d};
    p.rate = r.num("problem.rate", 0.0);
    p.payoff = HeatIntegralSquared{};
    p.grid = GridSpec{r.num("problem.horizon", 1.0), 10, 10};
  } else if (c.kind == "bs_lookback") {
    const int d = as_int(r.integer("problem.dim", 2), "problem.dim");
    const double rate = r.num("problem.rate", 0.05);
    auto vols = r.nums("problem.vols", std::vector<double>(static_cast<std::size_t>(d), 1.0));
    std::vector<double> identity(static_cast<std::size_t>(d * d), 0.0);
    for (int i = 0; i < d; ++i) identity[static_cast<std::size_t>(i * d + i)] = 1.0;
    auto cov = r.nums("problem.covariance", identity);
    try {
      p.dynamics = BlackScholes::with_covariance(d, rate, vols, cov);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("problem dynamics: ") + e.what(), "problem.covariance");
    }
    p.rate = rate;
    p.payoff = Lookback{};
    p.grid = GridSpec{r.num("problem.horizon", 1.0), 10, 10};
  } else if (c.kind == "heston_autocall") {
    Heston h;
    h.mu = r.num("problem.mu", h.mu);
    h.kappa = r.num("problem.kappa", h.kappa);
    h.mean_variance = r.num("problem.mean_variance", h.mean_variance);
    h.vol_of_variance = r.num("problem.vol_of_variance", h.vol_of_variance);
    p.dynamics = h;
    p.rate = h.mu;
    Autocallable a;
    a.barrier = r.num("problem.barrier", a.barrier);
    a.obs_times = r.nums("problem.obs_times", a.obs_times);
    a.coupons = r.nums("problem.coupons", a.coupons);
    a.redemption = r.num("problem.redemption", a.redemption);
    p.payoff = a;
    p.grid = GridSpec{r.num("problem.horizon", 0.5), 12, 10};
  } else {
    throw ConfigError("unknown problem.kind '" + c.kind + "' (heat, bs_lookback, heston_autocall)",
                      "problem.kind");
  }
  p.grid.coarse_steps = as_int(r.integer("problem.coarse_steps", p.grid.coarse_steps), "problem.coarse_steps");
  p.grid.refine = as_int(r.integer("problem.refine", p.grid.refine), "problem.refine");

  const auto d = static_cast<std::size_t>(p.dim());
  const std::string fallback_init = c.kind == "heat" ? "fixed" : "lognormal";
  const std::string init = r.str("problem.init", fallback_init);
  if (init == "fixed") {
    std::vector<double> x0(d, c.kind == "heat" ? 0.0 : 1.0);
    if (c.kind == "heston_autocall") x0 = {1.0, 0.3};
    p.init = FixedInit{r.nums("problem.x0", x0)};
  } else if (init == "lognormal") {
    LognormalInit l;
    l.mu = r.num("problem.init_mu", l.mu);
    l.tau = r.num("problem.init_tau", l.tau);
    l.sigma = r.num("problem.init_sigma", l.sigma);
    std::vector<double> scale;
    if (c.kind == "heston_autocall") scale = {1.0, 0.3};
    l.scale = r.nums("problem.init_scale", scale);
    p.init = l;
  } else {
    throw ConfigError("unknown problem.init '" + init + "' (fixed, lognormal)", "problem.init");
  }
  try {
    p.validate();
  } catch (const std::exception& e) {
    throw ConfigError(std::string("invalid problem: ") + e.what(), "problem");
  }
}

void read_model(Reader& r, ExperimentConfig& c) {
  NrdeConfig& m = c.model;
  m.input_dim = c.problem.dim();
  m.hidden = as_int(r.required_int("model.hidden"), "model.hidden");
  m.embed_dim = as_int(r.integer("model.embed_dim", 0), "model.embed_dim");
  m.time_channel = r.flag("model.time_channel", false);
  m.depth = as_int(r.integer("model.depth", 2), "model.depth");
  const int layers = as_int(r.integer("model.layers", 2), "model.layers");
  const int width = as_int(r.integer("model.width", 30), "model.width");
  if (layers < 0 || width < 1) throw ConfigError("model.layers must be >= 0 and model.width >= 1", "model.layers");
  m.field_hidden.assign(static_cast<std::size_t>(layers), width);
  m.xi_hidden = r.ints("model.xi_hidden", {});
  m.dx_head = r.flag("model.dx_head", c.train.method == Method::M2);
  try {
    m.solver = parse_solver(r.str("model.solver", "midpoint"));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what(), "model.solver");
  }
  m.ode_steps = as_int(r.integer("model.ode_steps", 1), "model.ode_steps");
  try {
    m.validate();
  } catch (const std::exception& e) {
    throw ConfigError(std::string("invalid model: ") + e.what(), "model");
  }
}

void read_train(Reader& r, ExperimentConfig& c) {
  TrainConfig& t = c.train;
  t.epochs = as_int(r.required_int("train.epochs"), "train.epochs");
  t.batch_size = as_int(r.required_int("train.batch_size"), "train.batch_size");
  t.lr = r.num("train.lr", t.lr);
  t.eps = r.num("train.eps", t.eps);
  try {
    t.method = parse_method(r.str("train.method", "m1"));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what(), "train.method");
  }
  t.squared_bracket = r.flag("train.squared_bracket", true);
  if (r.has("train.frozen")) t.frozen_blocks = r.list("train.frozen");
  try {
    t.validate();
  } catch (const std::exception& e) {
    throw ConfigError(std::string("invalid train settings: ") + e.what(), "train");
  }
}

void read_rest(Reader& r, ExperimentConfig& c) {
  EvalSettings& e = c.eval;
  e.n_test = as_int(r.integer("eval.n_test", e.n_test), "eval.n_test");
  e.n_batches = as_int(r.integer("eval.n_batches", e.n_batches), "eval.n_batches");
  e.oracle_sims = as_int(r.integer("eval.oracle_sims", e.oracle_sims), "eval.oracle_sims");
  e.trace_paths = as_int(r.integer("eval.trace_paths", e.trace_paths), "eval.trace_paths");
  e.cache = r.str("eval.cache", "");
  if (e.n_test < 1 || e.n_batches < 1) throw ConfigError("eval.n_test and eval.n_batches must be >= 1", "eval");
  if (e.oracle_sims < 2) throw ConfigError("eval.oracle_sims must be >= 2", "eval.oracle_sims");

  OracleSettings& o = c.oracle;
  o.node = as_int(r.integer("oracle.node", 0), "oracle.node");
  o.n_sims = as_int(r.integer("oracle.n_sims", o.n_sims), "oracle.n_sims");
  o.prefix = r.str("oracle.prefix", "");

  c.simulate_paths = as_int(r.integer("simulate.paths", c.simulate_paths), "simulate.paths");
  c.logsig_depth = as_int(r.integer("logsig.depth", c.logsig_depth), "logsig.depth");
  c.logsig_input = r.str("logsig.input", "");
  c.out_dir = r.str("out_dir", c.out_dir);
  c.threads = as_int(r.integer("threads", 0), "threads");
}

}  // namespace

std::map<std::string, std::string> parse_key_values(const std::string& text) {
  std::map<std::string, std::string> out;
  std::stringstream ss(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    line = trim(strip_comment(line));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError("line " + std::to_string(lineno) + ": malformed section header");
      section = trim(line.substr(1, line.size() - 2));
      if (section.empty()) throw ConfigError("line " + std::to_string(lineno) + ": empty section name");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError("line " + std::to_string(lineno) + ": empty key");
    const std::string full = section.empty() ? key : section + "." + key;
    if (out.count(full)) throw ConfigError("duplicate config key '" + full + "'", full);
    out[full] = trim(line.substr(eq + 1));
  }
  return out;
}

ExperimentConfig parse_config(const std::string& text) {
  Reader r(parse_key_values(text));
  ExperimentConfig c;
  const auto seed = as_seed(r.integer("seed", 0), "seed");
  read_problem(r, c);
  read_train(r, c);
  read_model(r, c);
  read_rest(r, c);
  apply_seed(c, seed);
  if (r.has("model.init_seed")) c.init_seed = as_seed(r.required_int("model.init_seed"), "model.init_seed");
  if (r.has("train.seed")) c.train.seed = as_seed(r.required_int("train.seed"), "train.seed");
  if (r.has("eval.seed")) c.eval.seed = as_seed(r.required_int("eval.seed"), "eval.seed");
  if (r.has("oracle.path_seed"))
    c.oracle.path_seed = as_seed(r.required_int("oracle.path_seed"), "oracle.path_seed");
  r.reject_unknown();
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

void apply_seed(ExperimentConfig& config, std::uint64_t seed) {
  config.init_seed = seed;
  config.train.seed = seed;
  config.eval.seed = seed;
  config.oracle.path_seed = seed;
}

nlohmann::ordered_json config_to_json(const ExperimentConfig& c) {
  using nlohmann::ordered_json;
  const ProblemSpec& p = c.problem;
  ordered_json problem;
  problem["kind"] = c.kind;
  problem["dim"] = p.dim();
  problem["rate"] = p.rate;
  problem["horizon"] = p.grid.horizon;
  problem["coarse_steps"] = p.grid.coarse_steps;
  problem["refine"] = p.grid.refine;
  if (const auto* bs = std::get_if<BlackScholes>(&p.dynamics)) {
    problem["vols"] = bs->vols;
    problem["cholesky"] = bs->cholesky;
  }
  if (const auto* h = std::get_if<Heston>(&p.dynamics)) {
    problem["mu"] = h->mu;
    problem["kappa"] = h->kappa;
    problem["mean_variance"] = h->mean_variance;
    problem["vol_of_variance"] = h->vol_of_variance;
  }
  if (const auto* a = std::get_if<Autocallable>(&p.payoff)) {
    problem["barrier"] = a->barrier;
    problem["obs_times"] = a->obs_times;
    problem["coupons"] = a->coupons;
    problem["redemption"] = a->redemption;
  }
  if (const auto* f = std::get_if<FixedInit>(&p.init)) {
    problem["init"] = "fixed";
    problem["x0"] = f->x0;
  } else {
    const auto& l = std::get<LognormalInit>(p.init);
    problem["init"] = "lognormal";
    problem["init_mu"] = l.mu;
    problem["init_tau"] = l.tau;
    problem["init_sigma"] = l.sigma;
    problem["init_scale"] = l.scale;
  }

  const NrdeConfig& m = c.model;
  ordered_json model;
  model["input_dim"] = m.input_dim;
  model["embed_dim"] = m.embed_dim;
  model["time_channel"] = m.time_channel;
  model["hidden"] = m.hidden;
  model["depth"] = m.depth;
  model["field_hidden"] = m.field_hidden;
  model["xi_hidden"] = m.xi_hidden;
  model["dx_head"] = m.dx_head;
  model["solver"] = solver_name(m.solver);
  model["ode_steps"] = m.ode_steps;
  model["init_seed"] = c.init_seed;

  const TrainConfig& t = c.train;
  ordered_json train;
  train["epochs"] = t.epochs;
  train["batch_size"] = t.batch_size;
  train["lr"] = t.lr;
  train["eps"] = t.eps;
  train["method"] = method_name(t.method);
  train["squared_bracket"] = t.squared_bracket;
  train["frozen"] = t.frozen_blocks;
  train["seed"] = t.seed;

  ordered_json eval;
  eval["n_test"] = c.eval.n_test;
  eval["n_batches"] = c.eval.n_batches;
  eval["oracle_sims"] = c.eval.oracle_sims;
  eval["trace_paths"] = c.eval.trace_paths;
  eval["seed"] = c.eval.seed;
  eval["cache"] = c.eval.cache;

  ordered_json oracle;
  oracle["node"] = c.oracle.node;
  oracle["n_sims"] = c.oracle.n_sims;
  oracle["prefix"] = c.oracle.prefix;
  oracle["path_seed"] = c.oracle.path_seed;

  ordered_json j;
  j["problem"] = problem;
  j["model"] = model;
  j["train"] = train;
  j["eval"] = eval;
  j["oracle"] = oracle;
  j["simulate"] = {{"paths", c.simulate_paths}};
  j["logsig"] = {{"depth", c.logsig_depth}, {"input", c.logsig_input}};
  j["out_dir"] = c.out_dir;
  j["threads"] = c.threads;
  return j;
}

std::string config_hash(const ExperimentConfig& config) {
  auto j = config_to_json(config);
  j.erase("out_dir");
  j.erase("threads");
  const std::string text = j.dump();
  const auto h = fnv1a(std::span<const unsigned char>(reinterpret_cast<const unsigned char*>(text.data()), text.size()));
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace ppde
