#include "hjbctl/experiment.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <set>
#include <sstream>

#include "hjbctl/parallel.hpp"

namespace hjbctl {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(Method m) {
  switch (m) {
    case Method::kHjb: return "hjb";
    case Method::kPpo: return "ppo";
    case Method::kTd3: return "td3";
    case Method::kBaseline: return "baseline";
  }
  return "?";
}

Method parse_method(const std::string& name) {
  if (name == "hjb") return Method::kHjb;
  if (name == "ppo") return Method::kPpo;
  if (name == "td3") return Method::kTd3;
  if (name == "baseline") return Method::kBaseline;
  throw ConfigError("unknown method '" + name + "' (hjb, ppo, td3, baseline)");
}

std::vector<ProblemParams> ExperimentConfig::validation_set() const {
  std::vector<ProblemParams> all = validation_params(problem.setup);
  if (validation_indices.empty()) return all;
  std::vector<ProblemParams> out;
  for (std::size_t i : validation_indices) {
    if (i >= all.size()) {
      throw ConfigError("validation index " + std::to_string(i) + " out of range (" +
                        std::to_string(all.size()) + " problems)");
    }
    out.push_back(all[i]);
  }
  return out;
}

namespace {

// Reads fields of one JSON object, keeping the default for missing keys and
// rejecting keys nobody asked for.
class Section {
 public:
  Section(const json& j, std::string path) : path_(std::move(path)) {
    if (!j.is_null() && !j.is_object()) throw ConfigError(where() + " must be an object");
    if (j.is_object()) j_ = j;
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key) || j_[key].is_null()) return;
    try {
      out = j_[key].get<T>();
    } catch (const json::exception&) {
      throw ConfigError("config field " + where() + key + " has the wrong type");
    }
  }

  template <typename T, std::size_t K>
  void get_array(const char* key, std::array<T, K>& out) {
    std::vector<T> v(out.begin(), out.end());
    get(key, v);
    if (v.size() != K) {
      throw ConfigError("config field " + where() + key + " needs " + std::to_string(K) + " entries");
    }
    std::copy(v.begin(), v.end(), out.begin());
  }

  json sub(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? j_[key] : json();
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError("unknown config field " + where() + it.key());
    }
  }

 private:
  std::string where() const { return path_.empty() ? "" : path_ + "."; }

  json j_ = json::object();
  std::string path_;
  std::set<std::string> seen_;
};

void read_problem(Section& s, ProblemConfig& p) {
  s.get("n", p.n);
  s.get("steps", p.steps);
  s.get("ds", p.ds);
  s.get("horizon", p.horizon);
  s.get("kappa", p.kappa);
  s.get("c", p.c);
  s.get("sigma_s", p.sigma_s);
  s.get("rho", p.rho);
  s.get("alpha0", p.alpha0);
  s.get("velocity_scale", p.velocity_scale);
  s.get("streamline_diffusion", p.streamline_diffusion);
  s.get("inflow_boundary", p.inflow_boundary);
  s.finish();
  if (p.n < 2) throw ConfigError("problem.n must be at least 2");
  if (p.steps == 0 || !(p.ds > 0.0)) throw ConfigError("problem.steps and problem.ds must be positive");
  if (!(p.kappa >= 0.0) || !(p.sigma_s > 0.0)) throw ConfigError("problem.kappa/sigma_s out of range");
}

void read_hjb(Section& s, HjbConfig& h, ValueNetworkInit& net) {
  std::array<double, 3> beta{h.beta.beta1, h.beta.beta2, h.beta.beta3};
  s.get_array("beta", beta);
  h.beta = HjbWeights{beta[0], beta[1], beta[2]};
  s.get("lr0", h.lr0);
  s.get("decay", h.decay);
  s.get("lr_floor", h.lr_floor);
  s.get("batch", h.batch);
  s.get("pool", h.pool);
  s.get("iterations", h.iterations);
  s.get("validate_every", h.validate_every);
  s.get("mass_scaled_input", h.mass_scaled_input);
  s.get("max_solves", h.max_solves);
  s.get("width", net.width);
  s.get("depth", net.depth);
  s.get("init_scale", net.scale);
  s.finish();
  if (h.lr_floor > h.lr0) throw ConfigError("hjb.lr_floor exceeds hjb.lr0");
  if (h.batch == 0 || h.batch > h.pool) throw ConfigError("hjb: need 1 <= batch <= pool");
  if (net.width == 0) throw ConfigError("hjb.width must be positive");
}

void read_rl(Section& s, rl::RlConfig& r) {
  s.get("lr0", r.lr0);
  s.get("decay", r.decay);
  s.get("lr_floor", r.lr_floor);
  s.get("envs", r.envs);
  s.get("pool", r.pool);
  s.get("gamma", r.gamma);
  s.get("ema_rate", r.ema_rate);
  s.get("max_solves", r.max_solves);
  s.get("validate_every_solves", r.validate_every_solves);
  s.get_array("conv", r.conv);
  s.get_array("dense", r.dense);
  s.get("epochs", r.epochs);
  s.get("minibatch", r.minibatch);
  s.get("clip", r.clip);
  s.get("gae_lambda", r.gae_lambda);
  s.get("critic_weight", r.critic_weight);
  s.get("target_kl", r.target_kl);
  s.get("init_log_var", r.init_log_var);
  s.get("td3_batch", r.td3_batch);
  s.get("td3_delay", r.td3_delay);
  s.get("td3_target_noise", r.td3_target_noise);
  s.get("td3_noise_clip", r.td3_noise_clip);
  s.get("td3_tau", r.td3_tau);
  s.get("td3_explore_noise", r.td3_explore_noise);
  s.get("td3_max_action", r.td3_max_action);
  s.get("td3_reward_scale", r.td3_reward_scale);
  s.get("td3_warmup", r.td3_warmup);
  s.get("td3_warmup_std", r.td3_warmup_std);
  s.get("td3_updates_per_transition", r.td3_updates_per_transition);
  s.get("replay_capacity", r.replay_capacity);
  s.finish();
  r.validate();
}

void read_baseline(Section& s, BaselineOptions& b) {
  s.get("max_iter", b.lbfgs.max_iter);
  s.get("tol", b.lbfgs.tol);
  s.get("memory", b.lbfgs.memory);
  s.get("max_fallbacks", b.lbfgs.max_fallbacks);
  s.get("restarts", b.restarts);
  s.finish();
  if (b.lbfgs.memory == 0) throw ConfigError("baseline.memory must be positive");
}

json params_json(const std::vector<ProblemParams>& ps) {
  json a = json::array();
  for (const auto& p : ps) a.push_back({p.x1, p.x2, p.v});
  return a;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw Error("cannot open " + path.string());
  os << text;
  if (!os) throw Error("write failed for " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

std::string csv_comment(const ExperimentConfig& c) {
  std::ostringstream os;
  os << "method=" << to_string(c.method) << " setup=" << to_string(c.problem.setup)
     << " n=" << c.problem.n << " steps=" << c.problem.steps << " seed=" << c.seed
     << "; pde_solves counts forward implicit-Euler solves spent on training,"
        " validation rollouts are not counted";
  return os.str();
}

// Open-loop replay: control i is applied on [i ds, (i+1) ds).
Policy open_loop(std::vector<double> controls, double ds) {
  return [u = std::move(controls), ds](const FemSystem&, double s, const State&) {
    const std::size_t n = u.size() / 2;
    std::size_t i = static_cast<std::size_t>(std::llround(s / ds));
    i = std::min(i, n - 1);
    return std::array<double, 2>{u[2 * i], u[2 * i + 1]};
  };
}

std::vector<std::vector<double>> read_controls(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open " + path.string());
  std::vector<std::vector<double>> rows;
  std::string line;
  std::getline(is, line);  // header
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<double> r;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) r.push_back(std::stod(cell));
    rows.push_back(std::move(r));
  }
  return rows;
}

RunSummary run_baseline(const ExperimentConfig& config, const fs::path& out,
                        const std::string& cache_path,
                        const std::vector<FemSystemPtr>& systems) {
  std::vector<BaselineCacheEntry> cache;
  if (!cache_path.empty() && fs::exists(cache_path)) cache = read_baseline_cache(cache_path);

  BaselineOptions opts = config.baseline;
  opts.seed = config.seed;
  const std::size_t k = systems.size();
  std::vector<BaselineCacheEntry> entries(k);
  std::vector<std::vector<double>> controls(k);
  // Cached entries carry no controls, so every instance is solved here; the
  // cache only spares other commands (compare) from re-solving.
  parallel_for(k, [&](std::size_t i) {
    BaselineResult r = solve_instance(*systems[i], opts);
    BaselineCacheEntry& e = entries[i];
    e.params = systems[i]->params();
    e.n = config.problem.n;
    e.steps = config.problem.steps;
    e.J = r.J;
    e.iterations = r.best.iterations;
    e.grad_inf = r.best.grad_inf;
    e.wall_seconds = r.wall_seconds;
    e.converged = r.best.converged;
    controls[i] = std::move(r.controls);
  });

  write_baseline_cache((out / "baseline.csv").string(), entries);
  {
    std::ofstream os(out / "controls.csv", std::ios::trunc);
    if (!os) throw Error("cannot open " + (out / "controls.csv").string());
    os << std::setprecision(17);
    for (std::size_t i = 0; i < config.problem.steps; ++i) {
      os << (i ? "," : "") << "u1_" << i << ",u2_" << i;
    }
    os << '\n';
    for (const auto& u : controls) {
      for (std::size_t j = 0; j < u.size(); ++j) os << (j ? "," : "") << u[j];
      os << '\n';
    }
  }
  if (!cache_path.empty()) {
    for (const auto& e : entries) {
      auto it = std::find_if(cache.begin(), cache.end(), [&](const BaselineCacheEntry& c) {
        return c.params == e.params && c.n == e.n && c.steps == e.steps;
      });
      if (it == cache.end()) cache.push_back(e); else *it = e;
    }
    write_baseline_cache(cache_path, cache);
  }

  RunSummary s;
  s.method = Method::kBaseline;
  for (const auto& e : entries) s.final_J.push_back(e.J);
  s.final_mean_J = std::accumulate(s.final_J.begin(), s.final_J.end(), 0.0) / static_cast<double>(k);
  s.validations = 1;
  return s;
}

}  // namespace

ExperimentConfig parse_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text.empty() ? std::string("{}") : json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  Section top(j, "");
  ExperimentConfig c;
  std::string setup = "horizontal", method = "hjb";
  top.get("setup", setup);
  top.get("method", method);
  top.get("seed", c.seed);
  top.get("validation_indices", c.validation_indices);
  c.method = parse_method(method);
  c.problem = ProblemConfig::defaults(parse_setup(setup));
  Section problem(top.sub("problem"), "problem");
  read_problem(problem, c.problem);
  Section hjb(top.sub("hjb"), "hjb");
  read_hjb(hjb, c.hjb, c.net);
  Section r(top.sub("rl"), "rl");
  read_rl(r, c.rl);
  Section b(top.sub("baseline"), "baseline");
  read_baseline(b, c.baseline);
  top.finish();
  c.validation_set();  // range check
  c.hjb.seed = c.net.seed = c.rl.seed = c.baseline.seed = c.seed;
  return c;
}

std::string config_to_json(const ExperimentConfig& c) {
  const ProblemConfig& p = c.problem;
  const rl::RlConfig& r = c.rl;
  json j;
  j["setup"] = to_string(p.setup);
  j["method"] = to_string(c.method);
  j["seed"] = c.seed;
  j["validation_indices"] = c.validation_indices;
  j["problem"] = {{"n", p.n}, {"steps", p.steps}, {"ds", p.ds}, {"horizon", p.horizon},
                  {"kappa", p.kappa}, {"c", p.c}, {"sigma_s", p.sigma_s}, {"rho", p.rho},
                  {"alpha0", p.alpha0}, {"velocity_scale", p.velocity_scale},
                  {"streamline_diffusion", p.streamline_diffusion},
                  {"inflow_boundary", p.inflow_boundary}};
  j["hjb"] = {{"beta", {c.hjb.beta.beta1, c.hjb.beta.beta2, c.hjb.beta.beta3}},
              {"lr0", c.hjb.lr0}, {"decay", c.hjb.decay}, {"lr_floor", c.hjb.lr_floor},
              {"batch", c.hjb.batch}, {"pool", c.hjb.pool}, {"iterations", c.hjb.iterations},
              {"validate_every", c.hjb.validate_every},
              {"mass_scaled_input", c.hjb.mass_scaled_input}, {"max_solves", c.hjb.max_solves},
              {"width", c.net.width}, {"depth", c.net.depth}, {"init_scale", c.net.scale}};
  j["rl"] = {{"lr0", r.lr0}, {"decay", r.decay}, {"lr_floor", r.lr_floor}, {"envs", r.envs},
             {"pool", r.pool}, {"gamma", r.gamma}, {"ema_rate", r.ema_rate},
             {"max_solves", r.max_solves}, {"validate_every_solves", r.validate_every_solves},
             {"conv", r.conv}, {"dense", r.dense}, {"epochs", r.epochs},
             {"minibatch", r.minibatch}, {"clip", r.clip}, {"gae_lambda", r.gae_lambda},
             {"critic_weight", r.critic_weight}, {"target_kl", r.target_kl},
             {"init_log_var", r.init_log_var}, {"td3_batch", r.td3_batch},
             {"td3_delay", r.td3_delay}, {"td3_target_noise", r.td3_target_noise},
             {"td3_noise_clip", r.td3_noise_clip}, {"td3_tau", r.td3_tau},
             {"td3_explore_noise", r.td3_explore_noise}, {"td3_max_action", r.td3_max_action},
             {"td3_reward_scale", r.td3_reward_scale}, {"td3_warmup", r.td3_warmup},
             {"td3_warmup_std", r.td3_warmup_std},
             {"td3_updates_per_transition", r.td3_updates_per_transition},
             {"replay_capacity", r.replay_capacity}};
  j["baseline"] = {{"max_iter", c.baseline.lbfgs.max_iter}, {"tol", c.baseline.lbfgs.tol},
                   {"memory", c.baseline.lbfgs.memory},
                   {"max_fallbacks", c.baseline.lbfgs.max_fallbacks},
                   {"restarts", c.baseline.restarts}};
  return j.dump(2) + "\n";
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_config(ss.str());
}

std::string apply_override(const std::string& json_text, const std::string& key,
                           const std::string& value) {
  json j;
  try {
    j = json::parse(json_text.empty() ? std::string("{}") : json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (key.empty()) throw ConfigError("empty override key");
  json v;
  try {
    v = json::parse(value);
  } catch (const json::parse_error&) {
    v = value;
  }
  json* node = &j;
  std::stringstream ss(key);
  std::vector<std::string> parts;
  for (std::string part; std::getline(ss, part, '.');) parts.push_back(part);
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
    json& next = (*node)[parts[i]];
    if (next.is_null()) next = json::object();
    if (!next.is_object()) throw ConfigError("override " + key + ": " + parts[i] + " is not an object");
    node = &next;
  }
  (*node)[parts.back()] = v;
  return j.dump(2);
}

RunSummary run_experiment(const ExperimentConfig& config, const std::string& out_dir,
                          const std::string& cache_path) {
  const auto t0 = std::chrono::steady_clock::now();
  const fs::path out(out_dir);
  fs::create_directories(out);
  write_text(out / "config.json", config_to_json(config));

  const std::vector<ProblemParams> vparams = config.validation_set();
  const std::vector<FemSystemPtr> validation = assemble_all(config.problem, vparams);
  const std::uint64_t solves_before = pde_solve_counter().load();

  RunSummary s;
  s.method = config.method;
  std::vector<MetricsRow> rows;
  if (config.method == Method::kBaseline) {
    s = run_baseline(config, out, cache_path, validation);
    s.pde_solves = pde_solve_counter().load() - solves_before;
  } else {
    const fs::path model = out / "model.bin";
    std::vector<std::string> losses;
    if (config.method == Method::kHjb) losses = hjb_loss_names();
    else if (config.method == Method::kPpo) losses = rl::ppo_loss_names();
    else losses = rl::td3_loss_names();
    MetricsCsv csv((out / "metrics.csv").string(), csv_comment(config), validation.size(), losses);

    if (config.method == Method::kHjb) {
      HjbTrainer trainer(config.hjb, config.problem, config.net);
      const ValueNetwork* current = nullptr;
      auto sink = [&](const MetricsRow& row) {
        csv.append(row);
        if (current) current->save(model.string());
      };
      auto on_iter = [&](const HjbIterationStats&, const ValueNetwork& net) { current = &net; };
      HjbTrainResult r = trainer.train(validation, sink, on_iter);
      r.net.save(model.string());
      rows = std::move(r.validation);
      s.pde_solves = r.pde_solves;
    } else if (config.method == Method::kPpo) {
      rl::PpoTrainer trainer(config.rl, config.problem);
      auto sink = [&](const MetricsRow& row) {
        csv.append(row);
        trainer.agent().save(model.string());
      };
      rl::RlTrainResult r = trainer.train(validation, sink);
      trainer.agent().save(model.string());
      rows = std::move(r.validation);
      s.pde_solves = r.pde_solves;
    } else {
      rl::Td3Trainer trainer(config.rl, config.problem);
      auto sink = [&](const MetricsRow& row) {
        csv.append(row);
        trainer.agent().save(model.string());
      };
      rl::RlTrainResult r = trainer.train(validation, sink);
      trainer.agent().save(model.string());
      rows = std::move(r.validation);
      s.pde_solves = r.pde_solves;
    }
    s.final_mean_J = rows.back().mean_val_J;
    s.final_J = rows.back().val_J;
    s.validations = rows.size();
  }
  s.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  json sj;
  sj["method"] = to_string(s.method);
  sj["setup"] = to_string(config.problem.setup);
  sj["seed"] = config.seed;
  sj["pde_solves"] = s.pde_solves;
  sj["final_mean_J"] = s.final_mean_J;
  sj["final_J"] = s.final_J;
  sj["validation"] = params_json(vparams);
  sj["validations"] = s.validations;
  sj["wall_seconds"] = s.wall_seconds;
  write_text(out / "summary.json", sj.dump(2) + "\n");
  return s;
}

RunData load_run(const std::string& run_dir) {
  const fs::path dir(run_dir);
  RunData d;
  d.name = dir.filename().empty() ? dir.parent_path().filename().string() : dir.filename().string();
  d.config = parse_config(read_text(dir / "config.json"));
  if (d.config.method == Method::kBaseline) {
    throw ConfigError(run_dir + " is a baseline run; pass it with --baseline");
  }
  d.metrics = read_metrics_csv((dir / "metrics.csv").string());
  if (d.metrics.rows.empty()) throw Error(run_dir + "/metrics.csv has no rows");
  return d;
}

std::vector<ComparisonRow> compare_runs(const std::vector<RunData>& runs,
                                        const std::vector<Threshold>& thresholds,
                                        const std::vector<BaselineCacheEntry>& baseline) {
  if (runs.empty()) throw ConfigError("compare: no runs");
  const ExperimentConfig& ref = runs.front().config;
  const std::vector<ProblemParams> vset = ref.validation_set();
  for (const auto& r : runs) {
    const ExperimentConfig& c = r.config;
    if (c.problem.setup != ref.problem.setup || c.problem.n != ref.problem.n ||
        c.problem.steps != ref.problem.steps || c.validation_set() != vset ||
        r.metrics.validation_count != vset.size()) {
      throw ConfigError("compare: run " + r.name + " uses an incompatible validation set");
    }
  }

  std::optional<double> base_mean;
  double acc = 0.0;
  bool complete = !vset.empty();
  for (const auto& y : vset) {
    auto e = find_baseline(baseline, y, ref.problem.n, ref.problem.steps);
    if (!e) { complete = false; break; }
    acc += e->J;
  }
  if (complete) base_mean = acc / static_cast<double>(vset.size());

  std::vector<ComparisonRow> out;
  for (const auto& r : runs) {
    const MetricsRow& last = r.metrics.rows.back();
    for (const auto& t : thresholds) {
      ComparisonRow row;
      row.run = r.name;
      row.method = r.config.method;
      row.seed = r.config.seed;
      if (t.relative) {
        if (!base_mean) throw ConfigError("compare: relative threshold needs a complete baseline");
        row.threshold = t.value * *base_mean;
      } else {
        row.threshold = t.value;
      }
      for (const auto& m : r.metrics.rows) {
        if (m.mean_val_J <= row.threshold) {
          row.solves_to_threshold = m.pde_solves;
          break;
        }
      }
      row.final_pde_solves = last.pde_solves;
      row.final_mean_J = last.mean_val_J;
      row.baseline_mean_J = base_mean;
      if (base_mean) row.suboptimality = suboptimality(last.mean_val_J, *base_mean);
      out.push_back(row);
    }
  }
  return out;
}

std::string comparison_csv(const std::vector<ComparisonRow>& rows) {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "run,method,seed,threshold,solves_to_threshold,final_pde_solves,final_mean_J,"
        "baseline_mean_J,suboptimality\n";
  for (const auto& r : rows) {
    os << r.run << ',' << to_string(r.method) << ',' << r.seed << ',' << r.threshold << ',';
    if (r.solves_to_threshold) os << *r.solves_to_threshold; else os << "not reached";
    os << ',' << r.final_pde_solves << ',' << r.final_mean_J << ',';
    if (r.baseline_mean_J) os << *r.baseline_mean_J; else os << "n/a";
    os << ',';
    if (r.suboptimality) os << *r.suboptimality; else os << "n/a";
    os << '\n';
  }
  return os.str();
}

void write_comparison_csv(const std::vector<ComparisonRow>& rows, const std::string& path) {
  write_text(path, comparison_csv(rows));
}

Policy load_policy(const std::string& run_dir, std::size_t problem) {
  const fs::path dir(run_dir);
  const ExperimentConfig c = parse_config(read_text(dir / "config.json"));
  const std::string model = (dir / "model.bin").string();
  switch (c.method) {
    case Method::kHjb:
      return feedback_policy(ValueNetwork::load(model));
    case Method::kPpo: {
      rl::PpoAgent a = rl::PpoAgent::load(model);
      return rl::mean_policy(a.actor.net, a.normalizer);
    }
    case Method::kTd3: {
      rl::Td3Agent a = rl::Td3Agent::load(model);
      return rl::mean_policy(a.actor, a.normalizer, c.rl.td3_max_action);
    }
    case Method::kBaseline: {
      auto rows = read_controls(dir / "controls.csv");
      if (problem >= rows.size()) throw ConfigError("problem index out of range for " + run_dir);
      if (rows[problem].size() != 2 * c.problem.steps) throw Error("controls.csv: wrong row length");
      return open_loop(rows[problem], c.problem.ds);
    }
  }
  throw Error("load_policy: unknown method");
}

std::vector<EvaluationRow> evaluate_run(const std::string& run_dir) {
  const ExperimentConfig c = parse_config(read_text(fs::path(run_dir) / "config.json"));
  const std::vector<ProblemParams> vparams = c.validation_set();
  const std::vector<FemSystemPtr> systems = assemble_all(c.problem, vparams);
  std::vector<double> J;
  if (c.method == Method::kBaseline) {
    J.resize(systems.size());
    for (std::size_t i = 0; i < systems.size(); ++i) {
      UncountedSolves quiet;
      J[i] = rollout(*systems[i], load_policy(run_dir, i)).objective;
    }
  } else {
    J = evaluate_policy(systems, load_policy(run_dir));
  }
  std::vector<EvaluationRow> out;
  for (std::size_t i = 0; i < vparams.size(); ++i) out.push_back({vparams[i], J[i]});
  return out;
}

void write_evaluation_csv(const std::vector<EvaluationRow>& rows, const std::string& path) {
  std::ostringstream os;
  os << std::setprecision(17) << "setup,x1,x2,v,J\n";
  for (const auto& r : rows) {
    os << to_string(r.params.setup) << ',' << r.params.x1 << ',' << r.params.x2 << ','
       << r.params.v << ',' << r.J << '\n';
  }
  write_text(path, os.str());
}

double dump_episode(const std::string& run_dir, std::size_t problem, const std::string& prefix,
                    bool zero_control) {
  const ExperimentConfig c = parse_config(read_text(fs::path(run_dir) / "config.json"));
  const std::vector<ProblemParams> vparams = c.validation_set();
  if (problem >= vparams.size()) {
    throw ConfigError("problem index " + std::to_string(problem) + " out of range (" +
                      std::to_string(vparams.size()) + " validation problems)");
  }
  FemSystemPtr sys = FemSystem::assemble(c.problem, vparams[problem]);
  Policy policy = zero_control
                      ? Policy([](const FemSystem&, double, const State&) {
                          return std::array<double, 2>{0.0, 0.0};
                        })
                      : load_policy(run_dir, problem);
  UncountedSolves quiet;
  EpisodeRecord ep = rollout(*sys, policy);
  const fs::path p(prefix);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  write_episode_csv(ep, prefix + ".csv");
  write_grid_snapshots(ep, sys->grid(), prefix + ".grid");
  return ep.objective;
}

}  // namespace hjbctl
