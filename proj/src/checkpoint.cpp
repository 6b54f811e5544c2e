#include "mbpars/checkpoint.hpp"

#include <fstream>

#include "json.hpp"

namespace mbpars {

namespace {

nlohmann::json vec_to_json(const Vec& v) {
  nlohmann::json a = nlohmann::json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

Vec json_to_vec(const nlohmann::json& a) {
  Vec v(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) v[i] = a[i].get<double>();
  return v;
}

nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  nlohmann::json j;
  in >> j;
  return j;
}

void write_json_file(const std::string& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << j.dump() << "\n";
}

}  // namespace

void save_surrogate(const std::string& path, const SurrogateCheckpoint& ckpt) {
  const SurrogateModel& m = ckpt.model;
  nlohmann::json j = {
      {"schema", "mbpars.surrogate.v1"},
      {"sizes", m.net.sizes},
      {"delta_max", m.delta_max},
      {"M", m.horizon},
      {"n_buses", m.n_buses},
      {"n_controlled", m.n_controlled},
      {"control_dt", m.control_dt},
      {"params", vec_to_json(flatten(m.net))},
      {"train_wall_seconds", ckpt.train_wall_seconds},
      {"val_loss", ckpt.val_loss},
      {"config_hash", ckpt.config_hash},
  };
  write_json_file(path, j);
}

SurrogateCheckpoint load_surrogate(const std::string& path) {
  const nlohmann::json j = read_json_file(path);
  if (j.value("schema", "") != "mbpars.surrogate.v1") {
    throw std::runtime_error("unsupported surrogate checkpoint: " + path);
  }
  SurrogateCheckpoint ckpt;
  const auto sizes = j.at("sizes").get<std::vector<int>>();
  const std::vector<int> hidden(sizes.begin() + 1, sizes.end() - 1);
  ckpt.model = make_surrogate(
      j.at("n_buses").get<int>(), j.at("n_controlled").get<int>(), hidden,
      j.at("M").get<int>(), j.at("delta_max").get<double>(), 0);
  ckpt.model.control_dt = j.value("control_dt", kControlDt);
  unflatten(ckpt.model.net, json_to_vec(j.at("params")));
  ckpt.train_wall_seconds = j.value("train_wall_seconds", 0.0);
  ckpt.val_loss = j.value("val_loss", 0.0);
  ckpt.config_hash = j.value("config_hash", "");
  return ckpt;
}

void save_policy(const std::string& path, const PolicyCheckpoint& ckpt) {
  nlohmann::json j = {
      {"schema", "mbpars.policy.v1"},
      {"input_dim", ckpt.policy.input_dim},
      {"hidden_dim", ckpt.policy.hidden_dim},
      {"output_dim", ckpt.policy.output_dim},
      {"head_lo", ckpt.policy.head_lo},
      {"head_hi", ckpt.policy.head_hi},
      {"params", vec_to_json(flatten(ckpt.policy))},
      {"stats_count", ckpt.stats.count()},
      {"stats_mean", vec_to_json(ckpt.stats.raw_mean())},
      {"stats_m2", vec_to_json(ckpt.stats.raw_m2())},
      {"train_wall_seconds", ckpt.train_wall_seconds},
      {"config_hash", ckpt.config_hash},
  };
  write_json_file(path, j);
}

PolicyCheckpoint load_policy(const std::string& path) {
  const nlohmann::json j = read_json_file(path);
  if (j.value("schema", "") != "mbpars.policy.v1") {
    throw std::runtime_error("unsupported policy checkpoint: " + path);
  }
  PolicyCheckpoint ckpt;
  Rng rng(0);
  ckpt.policy =
      make_lstm_policy(j.at("input_dim").get<int>(),
                       j.at("hidden_dim").get<int>(),
                       j.at("output_dim").get<int>(), rng);
  ckpt.policy.head_lo = j.value("head_lo", kActionLo);
  ckpt.policy.head_hi = j.value("head_hi", kActionHi);
  unflatten(ckpt.policy, json_to_vec(j.at("params")));
  ckpt.stats = RunningStats::from_raw(j.at("stats_count").get<long long>(),
                                      json_to_vec(j.at("stats_mean")),
                                      json_to_vec(j.at("stats_m2")));
  ckpt.train_wall_seconds = j.value("train_wall_seconds", 0.0);
  ckpt.config_hash = j.value("config_hash", "");
  return ckpt;
}

}  // namespace mbpars
