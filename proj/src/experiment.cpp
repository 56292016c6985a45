#include "stochdom/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "json.hpp"

namespace stochdom {

using nlohmann::json;
using nlohmann::ordered_json;

std::string to_string(ExperimentKind kind) {
  switch (kind) {
    case ExperimentKind::Portfolio:
      return "portfolio";
    case ExperimentKind::CliffWalk:
      return "cliffwalk";
    case ExperimentKind::Supervised:
      return "supervised";
    case ExperimentKind::Compare:
      return "compare";
  }
  return "unknown";
}

namespace {

std::string format_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

}  // namespace

std::string MethodSpec::label() const {
  return param ? name + "-" + format_number(*param) : name;
}

std::string baseline_method(ExperimentKind kind) {
  return kind == ExperimentKind::CliffWalk ? "reinforce" : "sgd";
}

// ---------------------------------------------------------------------------
// Config parsing

namespace {

// Line of every object key, addressed by JSON pointer. nlohmann does not
// track source positions, so the text is scanned once on the side.
std::map<std::string, int> key_lines(std::string_view text) {
  struct Frame {
    bool object;
    std::string pointer;
    std::string key;
    long index = 0;
    bool expect_key = true;
  };
  std::map<std::string, int> lines;
  std::vector<Frame> stack;
  int line = 1;

  auto child_pointer = [&]() -> std::string {
    if (stack.empty()) return "";
    const Frame& top = stack.back();
    return top.pointer + "/" + (top.object ? top.key : std::to_string(top.index));
  };

  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (c == '\n') {
      ++line;
    } else if (c == '"') {
      std::string s;
      for (++i; i < text.size() && text[i] != '"'; ++i) {
        if (text[i] == '\\' && i + 1 < text.size()) ++i;
        if (text[i] == '\n') ++line;
        s += text[i];
      }
      if (!stack.empty() && stack.back().object && stack.back().expect_key) {
        Frame& top = stack.back();
        top.key = s;
        top.expect_key = false;
        lines.emplace(top.pointer + "/" + s, line);
      }
    } else if (c == '{' || c == '[') {
      Frame f{c == '{', child_pointer(), "", 0, true};
      stack.push_back(std::move(f));
    } else if (c == '}' || c == ']') {
      if (!stack.empty()) stack.pop_back();
    } else if (c == ',') {
      if (!stack.empty()) {
        if (stack.back().object) {
          stack.back().expect_key = true;
        } else {
          ++stack.back().index;
        }
      }
    }
  }
  return lines;
}

int line_of_offset(std::string_view text, std::size_t offset) {
  offset = std::min(offset, text.size());
  return 1 + static_cast<int>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(offset), '\n'));
}

class Section {
 public:
  Section(const json& j, std::string pointer,
          const std::map<std::string, int>& lines)
      : j_(j), pointer_(std::move(pointer)), lines_(lines) {
    if (!j_.is_object()) fail(pointer_, "expected an object");
  }

  [[noreturn]] void fail(const std::string& pointer, const std::string& msg) const {
    const auto it = lines_.find(pointer);
    const std::string where =
        it != lines_.end() ? "line " + std::to_string(it->second) + ": " : "";
    const std::string name = pointer.empty() ? "config" : pointer.substr(1);
    throw ConfigError(where + name + ": " + msg);
  }

  std::string ptr(const std::string& key) const { return pointer_ + "/" + key; }
  bool has(const std::string& key) const { return j_.contains(key); }

  const json& raw(const std::string& key) {
    seen_.insert(key);
    return j_.at(key);
  }

  template <class T>
  T get(const std::string& key, T fallback) {
    if (!has(key)) return fallback;
    return as<T>(key, raw(key));
  }

  template <class T>
  std::optional<T> opt(const std::string& key) {
    if (!has(key) || j_.at(key).is_null()) {
      if (has(key)) seen_.insert(key);
      return std::nullopt;
    }
    return as<T>(key, raw(key));
  }

  template <class T>
  T require(const std::string& key) {
    if (!has(key)) fail(pointer_, "missing required key '" + key + "'");
    return as<T>(key, raw(key));
  }

  Section sub(const std::string& key) {
    return Section(raw(key), ptr(key), lines_);
  }

  template <class T>
  T as(const std::string& key, const json& v) const {
    try {
      if constexpr (std::is_same_v<T, std::uint64_t> || std::is_same_v<T, std::size_t>) {
        if (!v.is_number_unsigned()) fail(ptr(key), "expected a non-negative integer");
      } else if constexpr (std::is_integral_v<T> && !std::is_same_v<T, bool>) {
        if (!v.is_number_integer()) fail(ptr(key), "expected an integer");
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!v.is_number()) fail(ptr(key), "expected a number");
      }
      return v.get<T>();
    } catch (const json::exception& e) {
      fail(ptr(key), std::string("wrong type (") + e.what() + ")");
    }
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) fail(ptr(it.key()), "unknown key");
    }
  }

 private:
  const json& j_;
  std::string pointer_;
  const std::map<std::string, int>& lines_;
  std::set<std::string> seen_;
};

template <class F>
auto guarded(Section& s, const std::string& key, F&& f) {
  try {
    return f();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    s.fail(s.ptr(key), e.what());
  }
}

Cell parse_cell(Section& s, const std::string& key, const json& v) {
  if (!v.is_array() || v.size() != 2 || !v[0].is_number_integer() ||
      !v[1].is_number_integer()) {
    s.fail(s.ptr(key), "expected [row, col]");
  }
  return {v[0].get<int>(), v[1].get<int>()};
}

std::vector<MethodSpec> parse_methods(Section& top) {
  const json& arr = top.raw("methods");
  if (!arr.is_array()) top.fail(top.ptr("methods"), "expected an array");
  std::vector<MethodSpec> out;
  for (std::size_t i = 0; i < arr.size(); ++i) {
    const json& m = arr[i];
    const std::string at = "methods/" + std::to_string(i);
    if (m.is_string()) {
      const auto name = m.get<std::string>();
      if (name != "lsd" && name != "sgd" && name != "reinforce") {
        top.fail("/" + at, "unknown or parameterless use of method '" + name + "'");
      }
      out.push_back({name, std::nullopt});
    } else if (m.is_object() && m.size() == 1) {
      const std::string name = m.begin().key();
      const json& params = m.begin().value();
      if (name != "mean_variance" && name != "cvar_pg") {
        top.fail("/" + at, "unknown method '" + name + "'");
      }
      if (!params.is_array() || params.empty()) {
        top.fail("/" + at + "/" + name, "expected a non-empty list of numbers");
      }
      for (const json& p : params) {
        if (!p.is_number()) top.fail("/" + at + "/" + name, "expected numbers");
        const double v = p.get<double>();
        if (name == "mean_variance" && !(v >= 0.0)) {
          top.fail("/" + at + "/" + name, "lambda must be >= 0");
        }
        if (name == "cvar_pg" && !(v > 0.0 && v <= 1.0)) {
          top.fail("/" + at + "/" + name, "alpha must lie in (0, 1]");
        }
        out.push_back({name, v});
      }
    } else {
      top.fail("/" + at, "expected a method name or {name: [params]}");
    }
  }
  return out;
}

void parse_lsd(Section s, LsdConfig& c) {
  c.order = s.get<int>("order", c.order);
  c.epsilon = s.get<double>("epsilon", c.epsilon);
  c.batch = s.get<std::size_t>("batch", c.batch);
  if (s.has("interval") && s.raw("interval").is_null()) {
    c.interval.reset();
  } else if (s.has("interval")) {
    const json& v = s.raw("interval");
    if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number()) {
      s.fail(s.ptr("interval"), "expected [a, b] or null");
    }
    c.interval = guarded(s, "interval", [&] {
      return Interval(v[0].get<double>(), v[1].get<double>());
    });
  }
  const auto rule = s.get<std::string>("interval_rule", c.interval_rule == IntervalRule::Range ? "range" : "moments");
  if (rule == "moments") {
    c.interval_rule = IntervalRule::Moments;
  } else if (rule == "range") {
    c.interval_rule = IntervalRule::Range;
  } else {
    s.fail(s.ptr("interval_rule"), "expected 'moments' or 'range'");
  }
  c.interval_kappa = s.get<double>("interval_kappa", c.interval_kappa);
  if (auto v = s.opt<long>("t_max")) c.t_max = *v;
  if (auto v = s.opt<double>("c_bound")) c.c_bound = *v;
  c.tbar_max = s.get<long>("tbar_max", c.tbar_max);
  c.step_scale = s.get<double>("step_scale", c.step_scale);
  c.replay = s.get<bool>("replay", c.replay);
  c.replay_capacity = s.get<std::size_t>("replay_capacity", c.replay_capacity);
  c.score_baseline = s.get<bool>("score_baseline", c.score_baseline);
  s.finish();
  guarded(s, "", [&] {
    validate_lsd_config(c);
    return 0;
  });
}

StepSchedule::Kind parse_schedule(Section& s, const std::string& key, StepSchedule::Kind fallback) {
  const auto v = s.get<std::string>(key, fallback == StepSchedule::Kind::Constant ? "constant" : "inv_sqrt");
  if (v == "inv_sqrt") return StepSchedule::Kind::InvSqrt;
  if (v == "constant") return StepSchedule::Kind::Constant;
  s.fail(s.ptr(key), "expected 'inv_sqrt' or 'constant'");
}

void parse_baseline(Section s, SgdConfig& c) {
  c.steps = s.get<std::size_t>("steps", c.steps);
  c.batch = s.get<std::size_t>("batch", c.batch);
  c.schedule.scale = s.get<double>("step_scale", c.schedule.scale);
  c.schedule.kind = parse_schedule(s, "schedule", c.schedule.kind);
  s.finish();
  if (c.batch < 2) s.fail(s.ptr("batch"), "must be >= 2");
  if (!(c.schedule.scale > 0.0)) s.fail(s.ptr("step_scale"), "must be > 0");
}

Eigen::VectorXd to_vector(const std::vector<double>& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

void parse_market(Section s, ExperimentConfig& cfg) {
  MarketSpec& m = cfg.market;
  m.assets = s.get<int>("assets", m.assets);
  m.components = s.get<int>("components", m.components);
  cfg.market_seed = s.opt<std::uint64_t>("seed");
  m.heavy_tail = s.get<bool>("heavy_tail", m.heavy_tail);
  if (s.has("means") || s.has("factors")) {
    const auto means = s.require<std::vector<std::vector<double>>>("means");
    const auto factors =
        s.require<std::vector<std::vector<std::vector<double>>>>("factors");
    m.means.clear();
    m.factors.clear();
    for (const auto& mu : means) m.means.push_back(to_vector(mu));
    for (const auto& f : factors) {
      const auto rows = static_cast<Eigen::Index>(f.size());
      const auto cols = rows ? static_cast<Eigen::Index>(f.front().size()) : 0;
      Eigen::MatrixXd mat(rows, cols);
      for (Eigen::Index r = 0; r < rows; ++r) {
        if (static_cast<Eigen::Index>(f[static_cast<std::size_t>(r)].size()) != cols) {
          s.fail(s.ptr("factors"), "ragged factor matrix");
        }
        for (Eigen::Index c = 0; c < cols; ++c) {
          mat(r, c) = f[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)];
        }
      }
      m.factors.push_back(std::move(mat));
    }
    if (!s.has("components")) m.components = static_cast<int>(m.means.size());
    if (!s.has("assets") && !m.means.empty()) m.assets = static_cast<int>(m.means.front().size());
    m.explicit_components = true;
    guarded(s, "means", [&] {
      validate_market(m);
      return 0;
    });
  }
  const auto simplex = s.get<std::string>("simplex", cfg.simplex == SimplexMap::Softmax ? "softmax" : "projection");
  if (simplex == "softmax") {
    cfg.simplex = SimplexMap::Softmax;
  } else if (simplex == "projection") {
    cfg.simplex = SimplexMap::Projection;
  } else {
    s.fail(s.ptr("simplex"), "expected 'softmax' or 'projection'");
  }
  s.finish();
  if (m.assets < 1 || m.components < 1) s.fail(s.ptr("assets"), "assets and components must be >= 1");
}

void parse_cliff(Section s, CliffSpec& c) {
  c.rows = s.get<int>("rows", c.rows);
  c.cols = s.get<int>("cols", c.cols);
  c.start = s.has("start") ? parse_cell(s, "start", s.raw("start")) : Cell{c.rows - 1, 0};
  c.goal = s.has("goal") ? parse_cell(s, "goal", s.raw("goal")) : Cell{c.rows - 1, c.cols - 1};
  if (s.has("cliff")) {
    const json& v = s.raw("cliff");
    if (!v.is_array()) s.fail(s.ptr("cliff"), "expected a list of [row, col]");
    c.cliff.clear();
    for (const json& cell : v) c.cliff.push_back(parse_cell(s, "cliff", cell));
  } else {
    c.cliff = CliffSpec::default_cliff(c.rows, c.cols);
  }
  c.slip = s.get<double>("slip", c.slip);
  c.gamma = s.get<double>("gamma", c.gamma);
  c.reward_fall = s.get<double>("reward_fall", c.reward_fall);
  c.reward_goal = s.get<double>("reward_goal", c.reward_goal);
  c.horizon = s.get<int>("horizon", c.horizon);
  s.finish();
  guarded(s, "rows", [&] {
    validate_cliff(c);
    return 0;
  });
}

void parse_supervised(Section s, ExperimentConfig& cfg) {
  SupervisedSpec& sp = cfg.supervised;
  sp.dim = s.get<int>("dim", sp.dim);
  sp.samples = s.get<int>("samples", sp.samples);
  const auto noise = s.get<std::string>("noise", sp.noise == NoiseKind::HeavyTail ? "heavy_tail" : "gaussian");
  if (noise == "gaussian") {
    sp.noise = NoiseKind::Gaussian;
  } else if (noise == "heavy_tail") {
    sp.noise = NoiseKind::HeavyTail;
  } else {
    s.fail(s.ptr("noise"), "expected 'gaussian' or 'heavy_tail'");
  }
  sp.noise_scale = s.get<double>("noise_scale", sp.noise_scale);
  const auto task = s.get<std::string>("task", sp.task == SupervisedKind::LogisticClassification ? "classification" : "regression");
  if (task == "regression") {
    sp.task = SupervisedKind::LinearRegression;
  } else if (task == "classification") {
    sp.task = SupervisedKind::LogisticClassification;
  } else {
    s.fail(s.ptr("task"), "expected 'regression' or 'classification'");
  }
  sp.true_theta = s.get<std::vector<double>>("true_theta", sp.true_theta);
  cfg.supervised_seed = s.opt<std::uint64_t>("seed");
  cfg.dataset_file = s.get<std::string>("dataset_file", cfg.dataset_file);
  s.finish();
  if (sp.dim < 1 || sp.samples < 1) s.fail(s.ptr("dim"), "dim and samples must be >= 1");
  if (!sp.true_theta.empty() && static_cast<int>(sp.true_theta.size()) != sp.dim) {
    s.fail(s.ptr("true_theta"), "length must equal dim");
  }
}

void parse_probe(Section s, ExperimentConfig& cfg) {
  ProbeConfig& p = cfg.probe_config;
  cfg.probe = s.get<bool>("enabled", cfg.probe);
  p.random_probes = s.get<int>("random_probes", p.random_probes);
  p.perturb_scale = s.get<double>("perturb_scale", p.perturb_scale);
  p.sgd_probes = s.get<int>("sgd_probes", p.sgd_probes);
  p.sgd.steps = s.get<std::size_t>("sgd_steps", p.sgd.steps);
  p.sgd.batch = s.get<std::size_t>("sgd_batch", p.sgd.batch);
  p.sgd.schedule.scale = s.get<double>("sgd_step_scale", p.sgd.schedule.scale);
  p.sgd.schedule.kind = parse_schedule(s, "sgd_schedule", p.sgd.schedule.kind);
  s.finish();
}

void parse_compare(Section s, CompareSpec& c) {
  c.x_file = s.require<std::string>("x_file");
  c.y_file = s.require<std::string>("y_file");
  c.a = s.require<double>("a");
  c.b = s.require<double>("b");
  c.k = s.get<int>("k", c.k);
  c.tol = s.get<double>("tol", c.tol);
  s.finish();
  if (c.k != 1 && c.k != 2) s.fail(s.ptr("k"), "must be 1 or 2");
  if (!(c.a < c.b)) s.fail(s.ptr("a"), "requires a < b");
}

bool method_allowed(ExperimentKind kind, const std::string& name) {
  switch (kind) {
    case ExperimentKind::Portfolio:
    case ExperimentKind::Supervised:
      return name == "lsd" || name == "sgd" || name == "mean_variance";
    case ExperimentKind::CliffWalk:
      return name == "lsd" || name == "reinforce" || name == "cvar_pg";
    case ExperimentKind::Compare:
      return false;
  }
  return false;
}

}  // namespace

ExperimentConfig parse_config(std::string_view text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError("line " + std::to_string(line_of_offset(text, e.byte)) +
                      ": invalid JSON (" + e.what() + ")");
  }
  const auto lines = key_lines(text);
  Section top(root, "", lines);
  ExperimentConfig cfg;

  cfg.version = top.require<int>("version");
  if (cfg.version != kConfigVersion) {
    top.fail("/version", "unsupported version " + std::to_string(cfg.version));
  }
  const auto kind = top.require<std::string>("experiment");
  if (kind == "portfolio") {
    cfg.kind = ExperimentKind::Portfolio;
  } else if (kind == "cliffwalk") {
    cfg.kind = ExperimentKind::CliffWalk;
  } else if (kind == "supervised") {
    cfg.kind = ExperimentKind::Supervised;
  } else if (kind == "compare") {
    cfg.kind = ExperimentKind::Compare;
  } else {
    top.fail("/experiment", "unknown experiment '" + kind + "'");
  }

  if (cfg.kind == ExperimentKind::CliffWalk) {
    // Returns lie in [-1, 1]; a must sit inside the support of the falls
    // or no check can reach -epsilon / 2.
    cfg.lsd.interval = Interval(-0.3, 0.75);
    cfg.lsd.epsilon = 0.02;
    cfg.lsd.batch = 128;
    cfg.lsd.step_scale = 2.0;
    cfg.lsd.tbar_max = 50;
    cfg.lsd.t_max = 3000;
    cfg.baseline.steps = 4000;
    cfg.baseline.batch = 32;
    cfg.baseline.schedule = {1.0, StepSchedule::Kind::Constant};
  }

  if (top.has("methods")) cfg.methods = parse_methods(top);
  cfg.seeds = top.get<std::vector<std::uint64_t>>("seeds", cfg.seeds);
  if (top.has("lsd")) parse_lsd(top.sub("lsd"), cfg.lsd);
  if (top.has("baseline")) parse_baseline(top.sub("baseline"), cfg.baseline);
  if (top.has("market")) parse_market(top.sub("market"), cfg);
  if (top.has("cliff")) parse_cliff(top.sub("cliff"), cfg.cliff);
  if (top.has("supervised")) parse_supervised(top.sub("supervised"), cfg);
  if (top.has("probe")) parse_probe(top.sub("probe"), cfg);
  if (top.has("compare")) parse_compare(top.sub("compare"), cfg.compare);
  cfg.eval_batch = top.get<std::size_t>("eval_batch", cfg.eval_batch);
  cfg.hist_bins = top.get<int>("hist_bins", cfg.hist_bins);
  cfg.rollout_episodes = top.get<std::size_t>("rollout_episodes", cfg.rollout_episodes);
  cfg.output_dir = top.get<std::string>("output_dir", cfg.output_dir);
  top.finish();

  if (cfg.hist_bins < 1) top.fail("/hist_bins", "must be >= 1");
  if (cfg.kind == ExperimentKind::Compare) {
    if (!top.has("compare")) top.fail("", "compare experiment needs a 'compare' section");
    return cfg;
  }
  if (cfg.methods.empty()) top.fail("/methods", "at least one method is required");
  if (cfg.seeds.empty()) top.fail("/seeds", "at least one seed is required");
  for (std::size_t i = 0; i < cfg.methods.size(); ++i) {
    if (!method_allowed(cfg.kind, cfg.methods[i].name)) {
      top.fail("/methods", "method '" + cfg.methods[i].name +
                               "' does not apply to experiment '" + kind + "'");
    }
  }
  if (cfg.kind == ExperimentKind::Portfolio && top.has("cliff")) {
    top.fail("/cliff", "spec does not match experiment 'portfolio'");
  }
  if (cfg.kind == ExperimentKind::CliffWalk && (top.has("market") || top.has("supervised"))) {
    top.fail(top.has("market") ? "/market" : "/supervised",
             "spec does not match experiment 'cliffwalk'");
  }
  if (cfg.kind == ExperimentKind::Supervised && (top.has("market") || top.has("cliff"))) {
    top.fail(top.has("market") ? "/market" : "/cliff",
             "spec does not match experiment 'supervised'");
  }
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse_config(ss.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

std::string dump_config(const ExperimentConfig& cfg) {
  ordered_json j;
  j["version"] = cfg.version;
  j["experiment"] = to_string(cfg.kind);
  if (cfg.kind == ExperimentKind::Compare) {
    const CompareSpec& c = cfg.compare;
    j["compare"] = {{"x_file", c.x_file}, {"y_file", c.y_file}, {"a", c.a},
                    {"b", c.b}, {"k", c.k}, {"tol", c.tol}};
    j["output_dir"] = cfg.output_dir;
    return j.dump(2) + "\n";
  }

  ordered_json methods = ordered_json::array();
  for (std::size_t i = 0; i < cfg.methods.size();) {
    const MethodSpec& m = cfg.methods[i];
    if (!m.param) {
      methods.push_back(m.name);
      ++i;
      continue;
    }
    ordered_json params = ordered_json::array();
    std::size_t k = i;
    for (; k < cfg.methods.size() && cfg.methods[k].name == m.name && cfg.methods[k].param; ++k) {
      params.push_back(*cfg.methods[k].param);
    }
    methods.push_back({{m.name, params}});
    i = k;
  }
  j["methods"] = methods;
  j["seeds"] = cfg.seeds;

  const LsdConfig& l = cfg.lsd;
  ordered_json lsd;
  lsd["order"] = l.order;
  lsd["epsilon"] = l.epsilon;
  lsd["batch"] = l.batch;
  lsd["interval"] = l.interval ? ordered_json::array({l.interval->a(), l.interval->b()})
                               : ordered_json(nullptr);
  lsd["interval_rule"] = l.interval_rule == IntervalRule::Range ? "range" : "moments";
  lsd["interval_kappa"] = l.interval_kappa;
  lsd["t_max"] = l.t_max ? ordered_json(*l.t_max) : ordered_json(nullptr);
  lsd["c_bound"] = l.c_bound ? ordered_json(*l.c_bound) : ordered_json(nullptr);
  lsd["tbar_max"] = l.tbar_max;
  lsd["step_scale"] = l.step_scale;
  lsd["replay"] = l.replay;
  lsd["replay_capacity"] = l.replay_capacity;
  lsd["score_baseline"] = l.score_baseline;
  j["lsd"] = lsd;

  j["baseline"] = {
      {"steps", cfg.baseline.steps},
      {"batch", cfg.baseline.batch},
      {"step_scale", cfg.baseline.schedule.scale},
      {"schedule", cfg.baseline.schedule.kind == StepSchedule::Kind::Constant ? "constant" : "inv_sqrt"}};

  if (cfg.kind == ExperimentKind::Portfolio) {
    const MarketSpec& m = cfg.market;
    ordered_json market;
    market["assets"] = m.assets;
    market["components"] = m.components;
    market["seed"] = cfg.market_seed ? ordered_json(*cfg.market_seed) : ordered_json(nullptr);
    market["heavy_tail"] = m.heavy_tail;
    if (m.explicit_components) {
      ordered_json means = ordered_json::array();
      for (const auto& mu : m.means) means.push_back(std::vector<double>(mu.data(), mu.data() + mu.size()));
      ordered_json factors = ordered_json::array();
      for (const auto& f : m.factors) {
        ordered_json rows = ordered_json::array();
        for (Eigen::Index r = 0; r < f.rows(); ++r) {
          std::vector<double> row(static_cast<std::size_t>(f.cols()));
          for (Eigen::Index c = 0; c < f.cols(); ++c) row[static_cast<std::size_t>(c)] = f(r, c);
          rows.push_back(row);
        }
        factors.push_back(rows);
      }
      market["means"] = means;
      market["factors"] = factors;
    }
    market["simplex"] = cfg.simplex == SimplexMap::Softmax ? "softmax" : "projection";
    j["market"] = market;
  } else if (cfg.kind == ExperimentKind::CliffWalk) {
    const CliffSpec& c = cfg.cliff;
    ordered_json cliff = ordered_json::array();
    for (const Cell& cell : c.cliff) cliff.push_back({cell.row, cell.col});
    j["cliff"] = {{"rows", c.rows},
                  {"cols", c.cols},
                  {"start", {c.start.row, c.start.col}},
                  {"goal", {c.goal.row, c.goal.col}},
                  {"cliff", cliff},
                  {"slip", c.slip},
                  {"gamma", c.gamma},
                  {"reward_fall", c.reward_fall},
                  {"reward_goal", c.reward_goal},
                  {"horizon", c.horizon}};
  } else {
    const SupervisedSpec& s = cfg.supervised;
    ordered_json sup;
    sup["dim"] = s.dim;
    sup["samples"] = s.samples;
    sup["noise"] = s.noise == NoiseKind::HeavyTail ? "heavy_tail" : "gaussian";
    sup["noise_scale"] = s.noise_scale;
    sup["task"] = s.task == SupervisedKind::LinearRegression ? "regression" : "classification";
    if (!s.true_theta.empty()) sup["true_theta"] = s.true_theta;
    sup["seed"] = cfg.supervised_seed ? ordered_json(*cfg.supervised_seed) : ordered_json(nullptr);
    if (!cfg.dataset_file.empty()) sup["dataset_file"] = cfg.dataset_file;
    j["supervised"] = sup;
  }

  const ProbeConfig& p = cfg.probe_config;
  j["probe"] = {{"enabled", cfg.probe},
                {"random_probes", p.random_probes},
                {"perturb_scale", p.perturb_scale},
                {"sgd_probes", p.sgd_probes},
                {"sgd_steps", p.sgd.steps},
                {"sgd_batch", p.sgd.batch},
                {"sgd_step_scale", p.sgd.schedule.scale},
                {"sgd_schedule", p.sgd.schedule.kind == StepSchedule::Kind::Constant ? "constant" : "inv_sqrt"}};
  j["eval_batch"] = cfg.eval_size();
  j["hist_bins"] = cfg.hist_bins;
  j["rollout_episodes"] = cfg.rollout_episodes;
  j["output_dir"] = cfg.output_dir;
  return j.dump(2) + "\n";
}

std::int64_t seed_offset_from_env() {
  const char* raw = std::getenv("STOCHDOM_SEED_OFFSET");
  if (!raw || !*raw) return 0;
  char* end = nullptr;
  errno = 0;
  const long long v = std::strtoll(raw, &end, 10);
  if (errno != 0 || *end != '\0') {
    throw ConfigError(std::string("STOCHDOM_SEED_OFFSET is not an integer: ") + raw);
  }
  return v;
}

// ---------------------------------------------------------------------------
// Runs

namespace {

struct PathwiseSetup {
  std::shared_ptr<const PathwiseModel> model;
  std::shared_ptr<const SupervisedSpec> supervised;  // set for generated data
};

PathwiseSetup make_pathwise(const ExperimentConfig& cfg, std::uint64_t seed) {
  PathwiseSetup out;
  if (cfg.kind == ExperimentKind::Portfolio) {
    MarketSpec m = cfg.market;
    m.seed = cfg.market_seed.value_or(seed);
    auto market = std::make_shared<MixtureMarket>(resolve_market(std::move(m)));
    out.model = std::make_shared<PortfolioModel>(market, cfg.simplex);
    return out;
  }
  SupervisedSpec spec = cfg.supervised;
  spec.seed = cfg.supervised_seed.value_or(seed);
  spec = resolve_supervised(spec);
  std::shared_ptr<const Dataset> data;
  if (cfg.dataset_file.empty()) {
    data = std::make_shared<Dataset>(make_dataset(spec));
    out.supervised = std::make_shared<SupervisedSpec>(spec);
  } else {
    std::ifstream in(cfg.dataset_file);
    if (!in) throw std::runtime_error("cannot open dataset " + cfg.dataset_file);
    data = std::make_shared<Dataset>(read_dataset_csv(in));
  }
  out.model = std::make_shared<SupervisedModel>(spec.task, data);
  return out;
}

}  // namespace

RunResult execute_run(const ExperimentConfig& cfg, const MethodSpec& method,
                      std::uint64_t seed) {
  RunResult run;
  run.method = method;
  run.seed = seed;
  const std::size_t eval_n = cfg.eval_size();
  Rng eval_rng = make_rng(seed, stable_hash("eval"));

  LsdConfig lsd = cfg.lsd;
  lsd.seed = seed;
  SgdConfig base = cfg.baseline;
  base.seed = seed;

  if (cfg.kind == ExperimentKind::CliffWalk) {
    const CliffWalk env(cfg.cliff);
    const int s = env.num_states();
    const int a = env.num_actions();
    if (method.name == "lsd") {
      LsdResult res = lsd_pg(s, a, env, lsd);
      run.theta = std::move(res.theta);
      run.lsd_trace = std::move(res.trace);
    } else if (method.name == "reinforce") {
      run.theta = reinforce_fit(s, a, env, base, &run.steps);
    } else if (method.name == "cvar_pg") {
      run.theta = cvar_pg_fit(s, a, env, *method.param, base, &run.steps);
    } else {
      throw ConfigError("method " + method.name + " does not apply to cliffwalk");
    }
    std::vector<Trajectory> episodes;
    const OutcomeBatch batch =
        sample_episodes(TabularPolicy(s, a, run.theta), env, eval_n, eval_rng, &episodes);
    run.eval = batch.values;
    episodes.resize(std::min(episodes.size(), cfg.rollout_episodes));
    run.episodes = std::move(episodes);
    return run;
  }

  if (cfg.kind == ExperimentKind::Compare) {
    throw ConfigError("compare experiments have no runs");
  }

  const PathwiseSetup setup = make_pathwise(cfg, seed);
  const PathwiseModel& model = *setup.model;
  if (method.name == "lsd") {
    LsdResult res = lsd_fit(model, lsd);
    run.theta = std::move(res.theta);
    if (cfg.probe && res.trace.reason == Termination::Certified) {
      ProbeConfig pc = cfg.probe_config;
      pc.seed = seed;
      run.probe = probe_certificate(model, run.theta, res.trace, pc);
    }
    run.lsd_trace = std::move(res.trace);
  } else if (method.name == "sgd") {
    run.theta = sgd_erm_fit(model, base, &run.steps);
  } else if (method.name == "mean_variance") {
    run.theta = mean_variance_fit(model, *method.param, base, &run.steps);
  } else {
    throw ConfigError("method " + method.name + " does not apply to " + to_string(cfg.kind));
  }

  if (setup.supervised) {
    const auto heldout = std::make_shared<Dataset>(supervised_sample(*setup.supervised, eval_n, eval_rng));
    const SupervisedModel eval_model(setup.supervised->task, heldout);
    std::vector<std::size_t> rows(heldout->size());
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
    run.eval = eval_model.evaluate(run.theta, rows).values;
  } else {
    run.eval = model.sample_outcomes(run.theta, eval_n, eval_rng).values;
  }
  return run;
}

namespace {

ordered_json report_json(const MetricReport& r) {
  ordered_json j;
  j["mean"] = r.mean;
  j["variance"] = r.variance;
  j["std"] = r.std;
  j["sharpe"] = r.sharpe ? ordered_json(*r.sharpe) : ordered_json(nullptr);
  j["mad"] = r.mad;
  j["semidev1"] = r.semidev1;
  for (const auto& [k, v] : r.cvar) j[k] = v;
  for (const auto& [k, v] : r.dro) j[k] = v;
  return j;
}

Checkpoint make_checkpoint(const ExperimentConfig& cfg, const RunResult& run) {
  Checkpoint c;
  c.theta = run.theta;
  const auto d = static_cast<std::size_t>(run.theta.size());
  switch (cfg.kind) {
    case ExperimentKind::Portfolio:
      c.kind = cfg.simplex == SimplexMap::Softmax ? "portfolio_softmax" : "portfolio_simplex";
      c.dims = {d};
      break;
    case ExperimentKind::CliffWalk:
      c.kind = "tabular_policy";
      c.dims = {d / 4, 4};
      break;
    default:
      c.kind = cfg.supervised.task == SupervisedKind::LinearRegression
                   ? "linear_regression"
                   : "logistic_classification";
      c.dims = {d};
  }
  return c;
}

}  // namespace

std::string metrics_json(const ExperimentConfig& cfg, const RunResult& run) {
  ordered_json j;
  j["experiment"] = to_string(cfg.kind);
  j["method"] = run.method.name;
  j["param"] = run.method.param ? ordered_json(*run.method.param) : ordered_json(nullptr);
  j["label"] = run.method.label();
  j["seed"] = run.seed;
  j["eval_size"] = run.eval.size();
  const ordered_json report = report_json(metric_report(run.eval));
  for (const auto& [k, v] : report.items()) j[k] = v;
  if (cfg.kind == ExperimentKind::CliffWalk) {
    const auto neg = std::count_if(run.eval.begin(), run.eval.end(), [](double x) { return x < 0.0; });
    j["p_negative"] = static_cast<double>(neg) / static_cast<double>(run.eval.size());
  }
  if (cfg.kind == ExperimentKind::Portfolio) {
    const Eigen::VectorXd w = cfg.simplex == SimplexMap::Softmax ? softmax(run.theta) : run.theta;
    j["weights"] = std::vector<double>(w.data(), w.data() + w.size());
  }
  if (run.lsd_trace) {
    const LsdTrace& t = *run.lsd_trace;
    j["lsd"] = {{"termination", to_string(t.reason)},
                {"outer_updates", t.updates.size()},
                {"inner_iterations", t.records.size()},
                {"interval", {t.interval.a(), t.interval.b()}},
                {"epsilon", t.epsilon},
                {"c_bound", t.c_bound},
                {"t_max", t.t_max},
                {"tbar_max", t.tbar_max}};
  }
  if (run.probe) {
    j["probe"] = {{"passed", run.probe->passed},
                  {"min_gap", run.probe->min_gap},
                  {"random_gaps", run.probe->random_gaps},
                  {"sgd_gaps", run.probe->sgd_gaps}};
  }
  return j.dump(2) + "\n";
}

void write_atomic(const std::filesystem::path& path, std::string_view content) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw std::runtime_error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::string histogram_csv(std::span<const double> values, int bins) {
  if (values.empty()) throw std::invalid_argument("empty batch");
  if (bins < 1) throw std::invalid_argument("bins must be >= 1");
  auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
  double lo = *lo_it;
  double hi = *hi_it;
  if (lo == hi) {
    lo -= 0.5;
    hi += 0.5;
  }
  const double width = (hi - lo) / bins;
  std::vector<std::size_t> counts(static_cast<std::size_t>(bins), 0);
  for (double v : values) {
    auto b = static_cast<long>(std::floor((v - lo) / width));
    b = std::clamp<long>(b, 0, bins - 1);
    ++counts[static_cast<std::size_t>(b)];
  }
  std::ostringstream out;
  out << std::setprecision(17) << "bin_left,bin_right,count\n";
  for (int b = 0; b < bins; ++b) {
    const double left = lo + b * width;
    const double right = b + 1 == bins ? hi : lo + (b + 1) * width;
    out << left << ',' << right << ',' << counts[static_cast<std::size_t>(b)] << '\n';
  }
  return out.str();
}

std::string f2_curve_csv(std::span<const double> method,
                         std::span<const double> baseline,
                         const Interval& interval) {
  const EmpiricalCdf cdf = build_empirical_cdf(method, baseline, interval);
  std::ostringstream out;
  out << std::setprecision(17) << "eta,f2_method,f2_baseline\n";
  for (std::size_t i = 0; i < cdf.size(); ++i) {
    out << cdf.grid[i] << ',' << cdf.f2_x[i] << ',' << cdf.f2_y[i] << '\n';
  }
  return out.str();
}

void run_experiment(const ExperimentConfig& cfg, const RunOptions& options) {
  if (cfg.kind == ExperimentKind::Compare) {
    const CompareSpec& c = cfg.compare;
    auto read = [](const std::string& file) {
      std::ifstream in(file);
      if (!in) throw ConfigError("cannot open " + file);
      return read_samples(in, file);
    };
    const auto xs = read(c.x_file);
    const auto ys = read(c.y_file);
    const CompareReport report = compare_samples(xs, ys, Interval(c.a, c.b), c.k, c.tol);
    const std::filesystem::path dir = options.out_dir.value_or(cfg.output_dir);
    std::filesystem::create_directories(dir);
    write_atomic(dir / "compare.json", compare_report_json(report));
    if (options.log) print_compare_report(*options.log, report);
    return;
  }

  const std::int64_t offset = seed_offset_from_env();
  const std::filesystem::path dir = options.out_dir.value_or(cfg.output_dir);
  std::filesystem::create_directories(dir);

  struct Task {
    MethodSpec method;
    std::uint64_t seed;
  };
  std::vector<Task> tasks;
  for (const MethodSpec& m : cfg.methods) {
    for (std::uint64_t s : cfg.seeds) {
      tasks.push_back({m, s + static_cast<std::uint64_t>(offset)});
    }
  }

  std::vector<std::optional<RunResult>> results(tasks.size());
  std::vector<std::string> errors(tasks.size());
  std::atomic<std::size_t> next{0};
  std::mutex log_mutex;

  auto stem = [](const Task& t) { return t.method.label() + "_" + std::to_string(t.seed); };

  auto worker = [&] {
    for (std::size_t i = next++; i < tasks.size(); i = next++) {
      const Task& task = tasks[i];
      try {
        RunResult run = execute_run(cfg, task.method, task.seed);
        const std::string id = stem(task);
        write_atomic(dir / ("metrics_" + id + ".json"), metrics_json(cfg, run));
        std::ostringstream trace;
        if (run.lsd_trace) {
          write_trace_ndjson(trace, *run.lsd_trace);
        } else {
          write_steps_ndjson(trace, run.steps);
        }
        write_atomic(dir / ("trace_" + id + ".ndjson"), trace.str());
        write_atomic(dir / ("hist_" + id + ".csv"), histogram_csv(run.eval, cfg.hist_bins));
        write_atomic(dir / ("checkpoint_" + id + ".json"),
                     checkpoint_to_json(make_checkpoint(cfg, run)) + "\n");
        if (!run.episodes.empty()) {
          std::ostringstream rollouts;
          write_rollouts_csv(rollouts, run.episodes);
          write_atomic(dir / ("rollouts_" + id + ".csv"), rollouts.str());
        }
        if (options.log) {
          std::lock_guard lock(log_mutex);
          *options.log << "run " << task.method.label() << " seed " << task.seed << ": done";
          if (run.lsd_trace) {
            *options.log << " (" << to_string(run.lsd_trace->reason) << ", "
                         << run.lsd_trace->updates.size() << " updates)";
          }
          *options.log << '\n';
        }
        results[i] = std::move(run);
      } catch (const std::exception& e) {
        errors[i] = std::string("run ") + task.method.label() + " seed " +
                    std::to_string(task.seed) + " failed: " + e.what();
      }
    }
  };

  const int jobs = std::max(1, options.jobs);
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int j = 0; j < jobs; ++j) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (const std::string& e : errors) {
    if (!e.empty()) throw std::runtime_error(e);
  }

  // F2 curves against the risk-neutral baseline of the same seed.
  const std::string base_name = baseline_method(cfg.kind);
  std::map<std::uint64_t, const RunResult*> baseline_of;
  std::map<std::uint64_t, Interval> interval_of;
  for (const auto& r : results) {
    if (r->method.name == base_name && !r->method.param) baseline_of.emplace(r->seed, &*r);
    if (r->lsd_trace) interval_of.emplace(r->seed, r->lsd_trace->interval);
  }
  ordered_json runs = ordered_json::array();
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    const RunResult& r = *results[i];
    const std::string id = stem(tasks[i]);
    ordered_json entry;
    entry["label"] = r.method.label();
    entry["method"] = r.method.name;
    entry["seed"] = r.seed;
    entry["metrics"] = "metrics_" + id + ".json";
    entry["trace"] = "trace_" + id + ".ndjson";
    entry["hist"] = "hist_" + id + ".csv";
    entry["checkpoint"] = "checkpoint_" + id + ".json";
    const auto base = baseline_of.find(r.seed);
    if (base != baseline_of.end()) {
      Interval iv = cfg.lsd.interval.value_or(Interval(0.0, 1.0));
      if (auto it = interval_of.find(r.seed); it != interval_of.end()) {
        iv = it->second;
      } else if (!cfg.lsd.interval) {
        std::vector<double> pooled(r.eval);
        pooled.insert(pooled.end(), base->second->eval.begin(), base->second->eval.end());
        LsdConfig range_rule;
        range_rule.interval_rule = IntervalRule::Range;
        iv = resolve_interval(range_rule, pooled);
      }
      write_atomic(dir / ("f2_" + id + ".csv"), f2_curve_csv(r.eval, base->second->eval, iv));
      entry["f2"] = "f2_" + id + ".csv";
    } else {
      entry["f2"] = nullptr;
    }
    runs.push_back(entry);
  }

  // Aggregate across seeds: mean and sample std of every scalar metric.
  ordered_json aggregate;
  std::vector<std::string> order;
  std::map<std::string, std::map<std::string, std::vector<double>>> values;
  std::vector<std::string> metric_order;
  for (const auto& r : results) {
    const std::string label = r->method.label();
    if (!values.count(label)) order.push_back(label);
    const ordered_json rep = report_json(metric_report(r->eval));
    for (const auto& [k, v] : rep.items()) {
      if (!v.is_number()) continue;
      if (std::find(metric_order.begin(), metric_order.end(), k) == metric_order.end()) {
        metric_order.push_back(k);
      }
      values[label][k].push_back(v.get<double>());
    }
  }
  for (const std::string& label : order) {
    ordered_json m;
    for (const std::string& k : metric_order) {
      const auto it = values[label].find(k);
      if (it == values[label].end()) continue;
      const std::vector<double>& v = it->second;
      m[k] = {{"mean", mean(v)}, {"std", std::sqrt(variance(v))}};
    }
    aggregate[label] = m;
  }

  ordered_json summary;
  summary["experiment"] = to_string(cfg.kind);
  summary["version"] = cfg.version;
  summary["seed_offset"] = offset;
  summary["baseline"] = base_name;
  summary["runs"] = runs;
  summary["aggregate"] = aggregate;
  write_atomic(dir / "summary.json", summary.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Compare

std::vector<double> read_samples(std::istream& in, const std::string& name) {
  std::vector<double> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    const char* begin = line.c_str() + first;
    char* end = nullptr;
    const double v = std::strtod(begin, &end);
    while (*end == ' ' || *end == '\t' || *end == '\r') ++end;
    if (end == begin || *end != '\0' || !std::isfinite(v)) {
      throw ConfigError(name + ": line " + std::to_string(line_no) +
                        ": cannot parse '" + line + "' as a number");
    }
    out.push_back(v);
  }
  if (out.empty()) throw ConfigError(name + ": no samples");
  return out;
}

CompareReport compare_samples(std::span<const double> xs,
                              std::span<const double> ys,
                              const Interval& interval, int k, double tol) {
  CompareReport r;
  r.k = k;
  r.interval = interval;
  r.tol = tol;
  const DominanceGap xy = dominance_gap(k, xs, ys, interval);
  const DominanceGap yx = dominance_gap(k, ys, xs, interval);
  r.gap_xy = xy.value;
  r.gap_yx = yx.value;
  r.argmax_xy = xy.argmax_eta;
  r.argmax_yx = yx.argmax_eta;
  const bool x_ok = r.gap_xy <= tol;
  const bool y_ok = r.gap_yx <= tol;
  if (x_ok && y_ok) {
    r.verdict = "indistinguishable";
  } else if (x_ok) {
    r.verdict = "X-dominates";
  } else if (y_ok) {
    r.verdict = "Y-dominates";
  } else {
    r.verdict = "incomparable";
  }
  return r;
}

std::string compare_report_json(const CompareReport& r) {
  ordered_json j;
  j["k"] = r.k;
  j["interval"] = {r.interval.a(), r.interval.b()};
  j["tol"] = r.tol;
  j["omega_xy"] = r.gap_xy;
  j["omega_yx"] = r.gap_yx;
  j["argmax_xy"] = r.argmax_xy;
  j["argmax_yx"] = r.argmax_yx;
  j["verdict"] = r.verdict;
  return j.dump(2) + "\n";
}

void print_compare_report(std::ostream& out, const CompareReport& r) {
  auto list = [](const std::vector<double>& v) {
    std::ostringstream s;
    s << std::setprecision(10);
    const std::size_t shown = std::min<std::size_t>(v.size(), 8);
    for (std::size_t i = 0; i < shown; ++i) s << (i ? " " : "") << v[i];
    if (v.size() > shown) s << " ... (" << v.size() << " points)";
    return s.str();
  };
  out << std::setprecision(10);
  out << "order k           " << r.k << '\n'
      << "interval          [" << r.interval.a() << ", " << r.interval.b() << "]\n"
      << "omega(X, Y)       " << r.gap_xy << '\n'
      << "omega(Y, X)       " << r.gap_yx << '\n'
      << "argmax eta (X, Y) " << list(r.argmax_xy) << '\n'
      << "argmax eta (Y, X) " << list(r.argmax_yx) << '\n'
      << "verdict           " << r.verdict << '\n';
}

}  // namespace stochdom
