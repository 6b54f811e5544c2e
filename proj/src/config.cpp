#include "mbpars/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace mbpars {

namespace {

using nlohmann::json;

void require_keys(const json& j, const std::string& where,
                  const std::set<std::string>& allowed) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [key, value] : j.items()) {
    if (!allowed.count(key)) {
      throw ConfigError(where + ": unknown key '" + key + "'");
    }
  }
}

template <typename T>
void maybe(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

Task parse_task(const json& j, const std::string& where) {
  require_keys(j, where,
               {"load_scale", "fault_bus", "fault_start", "fault_duration"});
  Task t;
  maybe(j, "load_scale", t.load_scale);
  maybe(j, "fault_bus", t.fault_bus);
  maybe(j, "fault_start", t.fault_start);
  maybe(j, "fault_duration", t.fault_duration);
  return t;
}

}  // namespace

ParsConfig ExperimentConfig::effective_pars() const {
  ParsConfig p = pars;
  if (use_imitation) {
    p.step_size = pars_pair.alpha_with_il;
    p.noise_std = pars_pair.nu_with_il;
    p.decay_rate = pars_pair.epsilon_with_il;
  } else {
    p.step_size = pars_pair.alpha;
    p.noise_std = pars_pair.nu;
    p.decay_rate = pars_pair.epsilon;
  }
  p.seed = seed;
  p.workers = workers;
  return p;
}

ExperimentConfig parse_config_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const std::exception& e) {
    throw ConfigError(std::string("config parse failure: ") + e.what());
  }

  require_keys(j, "config",
               {"seed", "out_dir", "backend", "use_imitation", "workers",
                "grid", "tasks", "dataset", "surrogate", "policy", "reward",
                "pars", "compare", "uvls"});
  ExperimentConfig c;
  maybe(j, "seed", c.seed);
  maybe(j, "out_dir", c.out_dir);
  maybe(j, "backend", c.backend);
  maybe(j, "use_imitation", c.use_imitation);
  maybe(j, "workers", c.workers);
  if (c.backend != "model_based" && c.backend != "model_free") {
    throw ConfigError("config: backend must be model_based or model_free");
  }
  if (c.workers < 1) throw ConfigError("config: workers must be >= 1");

  if (j.contains("grid")) {
    const json& g = j["grid"];
    require_keys(g, "grid",
                 {"n_buses", "controlled", "topology", "w1", "w2", "v0",
                  "load_weight", "v_stall", "v_rec", "beta", "lambda",
                  "fault_depth", "kappa", "s0"});
    maybe(g, "n_buses", c.grid.n_buses);
    maybe(g, "controlled", c.grid.controlled);
    maybe(g, "topology", c.grid.topology);
    maybe(g, "w1", c.grid.w1);
    maybe(g, "w2", c.grid.w2);
    maybe(g, "v0", c.grid.v0);
    maybe(g, "load_weight", c.grid.load_weight);
    maybe(g, "v_stall", c.grid.v_stall);
    maybe(g, "v_rec", c.grid.v_rec);
    maybe(g, "beta", c.grid.stall_growth);
    maybe(g, "lambda", c.grid.stall_decay);
    maybe(g, "fault_depth", c.grid.fault_depth);
    maybe(g, "kappa", c.grid.prox_decay);
    maybe(g, "s0", c.grid.stall_seed);
  }

  if (j.contains("tasks")) {
    const json& t = j["tasks"];
    require_keys(t, "tasks", {"preset", "train", "test"});
    std::string preset = "default";
    maybe(t, "preset", preset);
    if (preset != "default" && preset != "explicit") {
      throw ConfigError("tasks: preset must be default or explicit");
    }
    if (t.contains("train")) {
      for (const auto& tt : t["train"]) {
        c.train_tasks.push_back(parse_task(tt, "tasks.train"));
      }
    }
    if (t.contains("test")) {
      for (const auto& tt : t["test"]) {
        c.test_tasks.push_back(parse_task(tt, "tasks.test"));
      }
    }
    if (preset == "explicit" && c.train_tasks.empty()) {
      throw ConfigError("tasks: explicit preset needs a train list");
    }
  }

  if (j.contains("dataset")) {
    const json& d = j["dataset"];
    require_keys(d, "dataset", {"episodes_per_task", "noise_std", "M"});
    maybe(d, "episodes_per_task", c.dataset.episodes_per_task);
    maybe(d, "noise_std", c.dataset.noise_std);
    maybe(d, "M", c.dataset.horizon);
    if (c.dataset.horizon < 1) throw ConfigError("dataset: M must be >= 1");
  }

  if (j.contains("surrogate")) {
    const json& s = j["surrogate"];
    require_keys(s, "surrogate",
                 {"hidden", "delta_max", "epochs", "retrain_epochs", "UF",
                  "lr", "batch_size", "optimizer", "offline_mix_frac",
                  "guard_factor"});
    maybe(s, "hidden", c.surrogate.hidden);
    maybe(s, "delta_max", c.surrogate.delta_max);
    maybe(s, "epochs", c.surrogate.train.epochs);
    maybe(s, "retrain_epochs", c.surrogate.train.retrain_epochs);
    maybe(s, "UF", c.pars.update_frequency);
    maybe(s, "lr", c.surrogate.train.lr);
    maybe(s, "batch_size", c.surrogate.train.batch_size);
    maybe(s, "optimizer", c.surrogate.train.optimizer);
    maybe(s, "offline_mix_frac", c.surrogate.train.offline_mix_frac);
    maybe(s, "guard_factor", c.surrogate.train.guard_factor);
  }

  if (j.contains("policy")) {
    const json& p = j["policy"];
    require_keys(p, "policy",
                 {"hidden", "bc_epochs", "bc_lr", "bc_batch_episodes",
                  "tbptt", "bc_optimizer"});
    maybe(p, "hidden", c.policy.hidden);
    maybe(p, "bc_epochs", c.policy.imitation.epochs);
    maybe(p, "bc_lr", c.policy.imitation.lr);
    maybe(p, "bc_batch_episodes", c.policy.imitation.batch_episodes);
    maybe(p, "tbptt", c.policy.imitation.tbptt_len);
    maybe(p, "bc_optimizer", c.policy.imitation.optimizer);
  }

  if (j.contains("reward")) {
    const json& r = j["reward"];
    require_keys(r, "reward", {"R", "c1", "c2", "c3", "d", "tau", "p_eps"});
    maybe(r, "R", c.reward.failure_penalty);
    maybe(r, "c1", c.reward.c1);
    maybe(r, "c2", c.reward.c2);
    maybe(r, "c3", c.reward.c3);
    maybe(r, "d", c.reward.dead_band);
    maybe(r, "tau", c.reward.soft_tau);
    maybe(r, "p_eps", c.reward.p_eps);
    if (c.reward.failure_penalty <= 0.0 || c.reward.dead_band <= 0.0 ||
        c.reward.soft_tau <= 0.0 || c.reward.c1 <= 0.0 ||
        c.reward.c2 <= 0.0 || c.reward.c3 <= 0.0) {
      throw ConfigError("reward: R, c1, c2, c3, d, tau must be positive");
    }
  }

  if (j.contains("pars")) {
    const json& p = j["pars"];
    require_keys(p, "pars",
                 {"N", "b", "m", "alpha", "nu", "epsilon", "alpha_with_il",
                  "nu_with_il", "epsilon_with_il", "H", "p_tasks", "gamma",
                  "checkpoint_every", "patience", "min_delta_frac"});
    maybe(p, "N", c.pars.num_directions);
    maybe(p, "b", c.pars.top_directions);
    maybe(p, "m", c.pars.rollouts_per_direction);
    maybe(p, "alpha", c.pars_pair.alpha);
    maybe(p, "nu", c.pars_pair.nu);
    maybe(p, "epsilon", c.pars_pair.epsilon);
    maybe(p, "alpha_with_il", c.pars_pair.alpha_with_il);
    maybe(p, "nu_with_il", c.pars_pair.nu_with_il);
    maybe(p, "epsilon_with_il", c.pars_pair.epsilon_with_il);
    maybe(p, "H", c.pars.iterations);
    maybe(p, "p_tasks", c.pars.tasks_per_eval);
    maybe(p, "gamma", c.pars.gamma);
    maybe(p, "checkpoint_every", c.pars.checkpoint_every);
    maybe(p, "patience", c.pars.plateau_patience);
    maybe(p, "min_delta_frac", c.pars.plateau_min_delta_frac);
    if (c.pars.top_directions < 1 ||
        c.pars.top_directions > c.pars.num_directions) {
      throw ConfigError("pars: need 1 <= b <= N");
    }
    if (c.pars.gamma <= 0.0 || c.pars.gamma > 1.0) {
      throw ConfigError("pars: gamma outside (0, 1]");
    }
  }

  if (j.contains("compare")) {
    const json& cj = j["compare"];
    require_keys(cj, "compare", {"threshold_frac"});
    maybe(cj, "threshold_frac", c.compare_threshold_frac);
  }

  if (j.contains("uvls")) {
    const json& u = j["uvls"];
    require_keys(u, "uvls", {"trigger_v", "dwell_s", "shed_step"});
    maybe(u, "trigger_v", c.uvls.trigger_v);
    maybe(u, "dwell_s", c.uvls.dwell_s);
    maybe(u, "shed_step", c.uvls.shed_step);
    if (c.uvls.shed_step < kActionLo || c.uvls.shed_step > kActionHi) {
      throw ConfigError("uvls: shed_step outside action bounds");
    }
    if (c.uvls.dwell_s < kControlDt) {
      throw ConfigError("uvls: dwell must cover at least one control step");
    }
  }

  // Cross-module consistency: building the grid validates its invariants,
  // and the task lists must fit the grid.
  GridModel grid;
  try {
    grid = build_grid(c.grid);
  } catch (const std::exception& e) {
    throw ConfigError(std::string("grid: ") + e.what());
  }
  if (c.train_tasks.empty()) {
    auto [train, test] = default_task_sets(grid);
    c.train_tasks = std::move(train);
    if (c.test_tasks.empty()) c.test_tasks = std::move(test);
  }
  try {
    for (const Task& t : c.train_tasks) validate_task(t, grid);
    for (const Task& t : c.test_tasks) validate_task(t, grid);
  } catch (const std::exception& e) {
    throw ConfigError(std::string("tasks: ") + e.what());
  }
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_json(ss.str());
}

std::string serialize_config(const ExperimentConfig& c) {
  json tasks_train = json::array();
  for (const Task& t : c.train_tasks) {
    tasks_train.push_back({{"load_scale", t.load_scale},
                           {"fault_bus", t.fault_bus},
                           {"fault_start", t.fault_start},
                           {"fault_duration", t.fault_duration}});
  }
  json tasks_test = json::array();
  for (const Task& t : c.test_tasks) {
    tasks_test.push_back({{"load_scale", t.load_scale},
                          {"fault_bus", t.fault_bus},
                          {"fault_start", t.fault_start},
                          {"fault_duration", t.fault_duration}});
  }
  const json j = {
      {"seed", c.seed},
      {"backend", c.backend},
      {"use_imitation", c.use_imitation},
      {"grid",
       {{"n_buses", c.grid.n_buses},
        {"controlled", c.grid.controlled},
        {"topology", c.grid.topology},
        {"w1", c.grid.w1},
        {"w2", c.grid.w2},
        {"v0", c.grid.v0},
        {"load_weight", c.grid.load_weight},
        {"v_stall", c.grid.v_stall},
        {"v_rec", c.grid.v_rec},
        {"beta", c.grid.stall_growth},
        {"lambda", c.grid.stall_decay},
        {"fault_depth", c.grid.fault_depth},
        {"kappa", c.grid.prox_decay},
        {"s0", c.grid.stall_seed}}},
      {"tasks", {{"train", tasks_train}, {"test", tasks_test}}},
      {"dataset",
       {{"episodes_per_task", c.dataset.episodes_per_task},
        {"noise_std", c.dataset.noise_std},
        {"M", c.dataset.horizon}}},
      {"surrogate",
       {{"hidden", c.surrogate.hidden},
        {"delta_max", c.surrogate.delta_max},
        {"epochs", c.surrogate.train.epochs},
        {"retrain_epochs", c.surrogate.train.retrain_epochs},
        {"UF", c.pars.update_frequency},
        {"lr", c.surrogate.train.lr},
        {"batch_size", c.surrogate.train.batch_size},
        {"optimizer", c.surrogate.train.optimizer},
        {"offline_mix_frac", c.surrogate.train.offline_mix_frac}}},
      {"policy",
       {{"hidden", c.policy.hidden},
        {"bc_epochs", c.policy.imitation.epochs},
        {"bc_lr", c.policy.imitation.lr},
        {"bc_batch_episodes", c.policy.imitation.batch_episodes},
        {"tbptt", c.policy.imitation.tbptt_len},
        {"bc_optimizer", c.policy.imitation.optimizer}}},
      {"reward",
       {{"R", c.reward.failure_penalty},
        {"c1", c.reward.c1},
        {"c2", c.reward.c2},
        {"c3", c.reward.c3},
        {"d", c.reward.dead_band},
        {"tau", c.reward.soft_tau},
        {"p_eps", c.reward.p_eps}}},
      {"pars",
       {{"N", c.pars.num_directions},
        {"b", c.pars.top_directions},
        {"m", c.pars.rollouts_per_direction},
        {"alpha", c.pars_pair.alpha},
        {"nu", c.pars_pair.nu},
        {"epsilon", c.pars_pair.epsilon},
        {"alpha_with_il", c.pars_pair.alpha_with_il},
        {"nu_with_il", c.pars_pair.nu_with_il},
        {"epsilon_with_il", c.pars_pair.epsilon_with_il},
        {"H", c.pars.iterations},
        {"p_tasks", c.pars.tasks_per_eval},
        {"gamma", c.pars.gamma}}},
      {"uvls",
       {{"trigger_v", c.uvls.trigger_v},
        {"dwell_s", c.uvls.dwell_s},
        {"shed_step", c.uvls.shed_step}}},
      {"compare", {{"threshold_frac", c.compare_threshold_frac}}},
  };
  return j.dump();
}

std::string config_hash(const ExperimentConfig& config) {
  const std::string s = serialize_config(config);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace mbpars
