#include "mbpars/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <stdexcept>

#include "mbpars/rng.hpp"
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

}  // namespace

std::vector<MultiStepTuple> make_multistep(const Trajectory& traj,
                                           int horizon) {
  if (horizon < 1) {
    throw std::invalid_argument("make_multistep: horizon must be >= 1");
  }
  std::vector<MultiStepTuple> tuples;
  const int n_states = static_cast<int>(traj.states.size());
  if (n_states < horizon + 1) return tuples;
  if (traj.actions.size() + 1 < traj.states.size()) {
    throw std::invalid_argument("make_multistep: missing actions");
  }
  tuples.reserve(n_states - horizon);
  for (int t = 0; t + horizon < n_states; ++t) {
    MultiStepTuple tup;
    tup.states.assign(traj.states.begin() + t,
                      traj.states.begin() + t + horizon + 1);
    tup.actions.assign(traj.actions.begin() + t,
                       traj.actions.begin() + t + horizon);
    tup.context = traj.context.at(t);
    tup.episode_id = traj.episode_id;
    tup.t0 = t;
    tuples.push_back(std::move(tup));
  }
  return tuples;
}

std::vector<Trajectory> reconstruct_trajectories(const MultiStepDataset& data) {
  std::map<int, std::vector<const MultiStepTuple*>> by_episode;
  for (const auto& tup : data.tuples) by_episode[tup.episode_id].push_back(&tup);

  std::vector<Trajectory> out;
  out.reserve(by_episode.size());
  const int m = data.horizon;
  for (auto& [episode_id, tuples] : by_episode) {
    std::sort(tuples.begin(), tuples.end(),
              [](const auto* a, const auto* b) { return a->t0 < b->t0; });
    Trajectory traj;
    traj.episode_id = episode_id;
    for (std::size_t i = 0; i < tuples.size(); ++i) {
      const MultiStepTuple& tup = *tuples[i];
      if (tup.t0 != static_cast<int>(i)) {
        throw std::invalid_argument(
            "reconstruct_trajectories: tuples do not tile the episode");
      }
      traj.states.push_back(tup.states[0]);
      traj.actions.push_back(tup.actions[0]);
      traj.context.push_back(tup.context);
    }
    // Tail of the last window. Only the time-offset component of the context
    // moves within an episode.
    const MultiStepTuple& last = *tuples.back();
    for (int k = 1; k <= m; ++k) {
      traj.states.push_back(last.states[k]);
      if (k < m) traj.actions.push_back(last.actions[k]);
      Eigen::Vector4d ctx = last.context;
      ctx[3] += k * kControlDt;
      traj.context.push_back(ctx);
    }
    out.push_back(std::move(traj));
  }
  return out;
}

MultiStepDataset mix(const MultiStepDataset& online,
                     const MultiStepDataset& offline, double offline_frac,
                     std::uint64_t seed) {
  if (offline_frac < 0.0 || offline_frac > 1.0) {
    throw std::invalid_argument("mix: offline_frac outside [0,1]");
  }
  if (!online.empty() && !offline.empty()) {
    if (online.state_dim() != offline.state_dim() ||
        online.action_dim() != offline.action_dim() ||
        online.horizon != offline.horizon) {
      throw std::invalid_argument("mix: dataset shapes do not match");
    }
  }
  MultiStepDataset out;
  out.horizon = online.empty() ? offline.horizon : online.horizon;
  out.provenance = Provenance::kOnline;
  out.tuples = online.tuples;

  Rng rng(derive_seed(seed, 0x6d69786dULL));
  std::vector<std::size_t> idx(offline.size());
  std::iota(idx.begin(), idx.end(), 0);
  rng.shuffle(idx);
  const auto take = static_cast<std::size_t>(
      std::llround(offline_frac * static_cast<double>(offline.size())));
  for (std::size_t i = 0; i < take; ++i) {
    out.tuples.push_back(offline.tuples[idx[i]]);
  }
  rng.shuffle(out.tuples);
  return out;
}

void RunningStats::update(const Vec& obs) {
  if (obs.size() != mean_.size()) {
    throw std::invalid_argument("RunningStats: dimension mismatch");
  }
  ++count_;
  const Vec delta = obs - mean_;
  mean_ += delta / static_cast<double>(count_);
  m2_ += delta.cwiseProduct(obs - mean_);
}

void RunningStats::merge(const RunningStats& other) {
  if (other.count_ == 0) return;
  if (count_ == 0) {
    *this = other;
    return;
  }
  if (other.mean_.size() != mean_.size()) {
    throw std::invalid_argument("RunningStats: dimension mismatch");
  }
  const double na = static_cast<double>(count_);
  const double nb = static_cast<double>(other.count_);
  const double n = na + nb;
  const Vec delta = other.mean_ - mean_;
  mean_ += delta * (nb / n);
  m2_ += other.m2_ + delta.cwiseProduct(delta) * (na * nb / n);
  count_ += other.count_;
}

Vec RunningStats::mean() const { return mean_; }

Vec RunningStats::stddev() const {
  if (count_ == 0) return Vec::Ones(mean_.size());
  return (m2_ / static_cast<double>(count_))
      .cwiseSqrt()
      .cwiseMax(kSigmaFloor);
}

Vec RunningStats::normalize(const Vec& obs) const {
  if (obs.size() != mean_.size()) {
    throw std::invalid_argument("RunningStats: dimension mismatch");
  }
  return (obs - mean_).cwiseQuotient(stddev());
}

RunningStats RunningStats::from_raw(long long count, Vec mean, Vec m2) {
  RunningStats s(static_cast<int>(mean.size()));
  s.count_ = count;
  s.mean_ = std::move(mean);
  s.m2_ = std::move(m2);
  return s;
}

void save_dataset_jsonl(const std::string& path, const MultiStepDataset& data,
                        const std::string& config_hash) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  nlohmann::json header = {
      {"schema", "mbpars.dataset.v1"},
      {"M", data.horizon},
      {"state_dim", data.state_dim()},
      {"action_dim", data.action_dim()},
      {"provenance",
       data.provenance == Provenance::kOffline ? "offline" : "online"},
      {"count", data.size()},
  };
  if (!config_hash.empty()) header["config_hash"] = config_hash;
  out << header.dump() << "\n";
  for (const auto& tup : data.tuples) {
    nlohmann::json states = nlohmann::json::array();
    for (const auto& s : tup.states) states.push_back(vec_to_json(s));
    nlohmann::json actions = nlohmann::json::array();
    for (const auto& a : tup.actions) actions.push_back(vec_to_json(a));
    nlohmann::json line = {
        {"e", tup.episode_id}, {"t", tup.t0},          {"s", states},
        {"a", actions},        {"c", vec_to_json(tup.context)},
    };
    out << line.dump() << "\n";
  }
}

MultiStepDataset load_dataset_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) {
    throw std::runtime_error("dataset file is empty: " + path);
  }
  const nlohmann::json header = nlohmann::json::parse(line);
  if (header.value("schema", "") != "mbpars.dataset.v1") {
    throw std::runtime_error("unsupported dataset schema in " + path);
  }
  MultiStepDataset data;
  data.horizon = header.at("M").get<int>();
  data.provenance = header.value("provenance", "offline") == "online"
                        ? Provenance::kOnline
                        : Provenance::kOffline;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const nlohmann::json j = nlohmann::json::parse(line);
    MultiStepTuple tup;
    tup.episode_id = j.at("e").get<int>();
    tup.t0 = j.at("t").get<int>();
    for (const auto& s : j.at("s")) tup.states.push_back(json_to_vec(s));
    for (const auto& a : j.at("a")) tup.actions.push_back(json_to_vec(a));
    const Vec c = json_to_vec(j.at("c"));
    tup.context = Eigen::Vector4d(c[0], c[1], c[2], c[3]);
    data.tuples.push_back(std::move(tup));
  }
  return data;
}

void export_dataset_csv(const std::string& path, const MultiStepDataset& data) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  const int sd = data.state_dim();
  const int ad = data.action_dim();
  out << "episode,t0";
  for (int k = 0; k <= data.horizon; ++k) {
    for (int d = 0; d < sd; ++d) out << ",s" << k << "_" << d;
  }
  for (int k = 0; k < data.horizon; ++k) {
    for (int d = 0; d < ad; ++d) out << ",a" << k << "_" << d;
  }
  for (int d = 0; d < 4; ++d) out << ",ctx_" << d;
  out << "\n";
  out.precision(17);
  for (const auto& tup : data.tuples) {
    out << tup.episode_id << "," << tup.t0;
    for (const auto& s : tup.states) {
      for (Eigen::Index d = 0; d < s.size(); ++d) out << "," << s[d];
    }
    for (const auto& a : tup.actions) {
      for (Eigen::Index d = 0; d < a.size(); ++d) out << "," << a[d];
    }
    for (int d = 0; d < 4; ++d) out << "," << tup.context[d];
    out << "\n";
  }
}

}  // namespace mbpars
