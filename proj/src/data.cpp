#include "utr/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace utr {

using nlohmann::json;

std::vector<double> compute_rtg(const std::vector<double>& rewards) {
  if (rewards.empty()) throw std::invalid_argument("compute_rtg: empty reward sequence");
  std::vector<double> rtg(rewards.size());
  double acc = 0.0;
  for (size_t i = rewards.size(); i-- > 0;) {
    acc += rewards[i];
    rtg[i] = acc;
  }
  return rtg;
}

std::vector<MixComponent> parse_mix(const std::string& text) {
  std::vector<MixComponent> mix;
  size_t pos = 0;
  while (pos < text.size()) {
    size_t comma = text.find(',', pos);
    if (comma == std::string::npos) comma = text.size();
    const std::string item = text.substr(pos, comma - pos);
    const size_t colon = item.find(':');
    if (colon == std::string::npos) {
      throw std::invalid_argument("mix: expected tier:weight, got '" + item + "'");
    }
    MixComponent c;
    c.tier = item.substr(0, colon);
    c.weight = std::stod(item.substr(colon + 1));
    mix.push_back(std::move(c));
    pos = comma + 1;
  }
  if (mix.empty()) throw std::invalid_argument("mix: no components given");
  double total = 0.0;
  for (const auto& c : mix) {
    if (c.weight < 0.0) throw std::invalid_argument("mix: negative weight for tier " + c.tier);
    total += c.weight;
  }
  if (std::fabs(total - 1.0) > 1e-9) {
    throw std::invalid_argument("mix: weights must sum to 1, got " + std::to_string(total));
  }
  return mix;
}

Dataset generate_dataset(const EnvSpec& env_spec, const std::vector<MixComponent>& mix,
                         int64_t n_episodes, uint64_t seed) {
  if (mix.empty()) throw std::invalid_argument("generate_dataset: empty policy mixture");
  double total = 0.0;
  for (const auto& c : mix) total += c.weight;
  if (std::fabs(total - 1.0) > 1e-9) {
    throw std::invalid_argument("generate_dataset: mixture weights must sum to 1");
  }
  if (n_episodes < 1) throw std::invalid_argument("generate_dataset: n_episodes must be >= 1");

  std::vector<Policy> policies;
  std::string mix_text;
  for (const auto& c : mix) {
    policies.push_back(make_tier_policy(env_spec, c.tier));
    if (!mix_text.empty()) mix_text += ",";
    mix_text += c.tier + ":" + std::to_string(c.weight);
  }

  Dataset ds;
  auto probe = env_spec.make();
  const int64_t d_s = probe->state_dim();
  const int64_t d_a = probe->action_dim();

  Rng rng(seed);
  ds.episodes.reserve(static_cast<size_t>(n_episodes));
  for (int64_t e = 0; e < n_episodes; ++e) {
    // tier draw, then the episode rollout, all from one stream
    const double u = rng.uniform();
    size_t tier_idx = 0;
    double acc = 0.0;
    for (size_t i = 0; i < mix.size(); ++i) {
      acc += mix[i].weight;
      if (u < acc || i + 1 == mix.size()) {
        tier_idx = i;
        break;
      }
    }
    auto env = env_spec.make();
    std::vector<double> state = env->reset(rng);
    Trajectory tr;
    std::vector<double> states_flat, actions_flat;
    for (int64_t t = 0;; ++t) {
      const std::vector<double> action = policies[tier_idx](state, t, rng);
      const StepResult r = env->step(action);
      states_flat.insert(states_flat.end(), state.begin(), state.end());
      actions_flat.insert(actions_flat.end(), action.begin(), action.end());
      tr.rewards.push_back(r.reward);
      state = r.state;
      if (r.done) break;
    }
    const int64_t len = static_cast<int64_t>(tr.rewards.size());
    tr.states = Array{{len, d_s}, std::move(states_flat)};
    tr.actions = Array{{len, d_a}, std::move(actions_flat)};
    tr.rtg = compute_rtg(tr.rewards);
    ds.episodes.push_back(std::move(tr));
    ds.episode_tiers.push_back(static_cast<int64_t>(tier_idx));
  }

  DatasetManifest& m = ds.manifest;
  m.env = env_spec;
  m.n_episodes = n_episodes;
  m.t_max = probe->horizon();
  m.state_dim = d_s;
  m.action_dim = d_a;
  m.discrete_actions = probe->discrete_actions();
  m.mix = mix_text;
  m.seed = seed;
  m.state_stats = compute_state_stats(ds);
  m.action_stats = compute_action_stats(ds);
  return ds;
}

namespace {

DimStats stats_over(const std::vector<Trajectory>& eps, bool states, int64_t dim) {
  DimStats st;
  st.mean.assign(static_cast<size_t>(dim), 0.0);
  st.std.assign(static_cast<size_t>(dim), 0.0);
  int64_t count = 0;
  for (const Trajectory& tr : eps) {
    const Array& arr = states ? tr.states : tr.actions;
    const int64_t len = tr.length();
    for (int64_t t = 0; t < len; ++t)
      for (int64_t j = 0; j < dim; ++j) st.mean[static_cast<size_t>(j)] += arr.data[t * dim + j];
    count += len;
  }
  if (count == 0) throw std::runtime_error("stats: empty dataset");
  for (auto& v : st.mean) v /= static_cast<double>(count);
  for (const Trajectory& tr : eps) {
    const Array& arr = states ? tr.states : tr.actions;
    const int64_t len = tr.length();
    for (int64_t t = 0; t < len; ++t)
      for (int64_t j = 0; j < dim; ++j) {
        const double c = arr.data[t * dim + j] - st.mean[static_cast<size_t>(j)];
        st.std[static_cast<size_t>(j)] += c * c;
      }
  }
  for (auto& v : st.std) v = std::sqrt(v / static_cast<double>(count));
  return st;
}

}  // namespace

DimStats compute_state_stats(const Dataset& ds) {
  return stats_over(ds.episodes, true, ds.manifest.state_dim != 0
                                           ? ds.manifest.state_dim
                                           : ds.episodes.front().states.shape[1]);
}

DimStats compute_action_stats(const Dataset& ds) {
  return stats_over(ds.episodes, false, ds.manifest.action_dim != 0
                                            ? ds.manifest.action_dim
                                            : ds.episodes.front().actions.shape[1]);
}

void normalize_dataset(Dataset& ds) {
  DatasetManifest& m = ds.manifest;
  if (m.normalized) throw std::invalid_argument("normalize_dataset: already normalized");
  constexpr double kStdFloor = 1e-12;

  const DimStats s_stats = compute_state_stats(ds);
  const DimStats a_stats = compute_action_stats(ds);

  m.norm_state = s_stats;
  m.state_unscaled_dims.clear();
  for (int64_t j = 0; j < m.state_dim; ++j) {
    if (s_stats.std[static_cast<size_t>(j)] < kStdFloor) m.state_unscaled_dims.push_back(j);
  }
  auto apply = [&](Array& arr, const DimStats& st, const std::vector<int64_t>& frozen,
                   int64_t dim) {
    const int64_t rows = arr.shape[0];
    for (int64_t t = 0; t < rows; ++t)
      for (int64_t j = 0; j < dim; ++j) {
        if (std::find(frozen.begin(), frozen.end(), j) != frozen.end()) continue;
        double& v = arr.data[t * dim + j];
        v = (v - st.mean[static_cast<size_t>(j)]) / st.std[static_cast<size_t>(j)];
      }
  };
  for (Trajectory& tr : ds.episodes) apply(tr.states, s_stats, m.state_unscaled_dims, m.state_dim);

  m.action_unscaled_dims.clear();
  if (!m.discrete_actions) {
    m.norm_action = a_stats;
    for (int64_t j = 0; j < m.action_dim; ++j) {
      if (a_stats.std[static_cast<size_t>(j)] < kStdFloor) m.action_unscaled_dims.push_back(j);
    }
    for (Trajectory& tr : ds.episodes)
      apply(tr.actions, a_stats, m.action_unscaled_dims, m.action_dim);
  }

  m.normalized = true;
  m.state_stats = compute_state_stats(ds);
  m.action_stats = compute_action_stats(ds);
}

std::vector<double> normalize_state(const DatasetManifest& m, const std::vector<double>& state) {
  if (!m.normalized) return state;
  std::vector<double> out = state;
  for (int64_t j = 0; j < m.state_dim; ++j) {
    if (std::find(m.state_unscaled_dims.begin(), m.state_unscaled_dims.end(), j) !=
        m.state_unscaled_dims.end()) {
      continue;
    }
    out[static_cast<size_t>(j)] =
        (out[static_cast<size_t>(j)] - m.norm_state.mean[static_cast<size_t>(j)]) /
        m.norm_state.std[static_cast<size_t>(j)];
  }
  return out;
}

std::vector<double> denormalize_action(const DatasetManifest& m, const std::vector<double>& action) {
  if (!m.normalized || m.discrete_actions) return action;
  std::vector<double> out = action;
  for (int64_t j = 0; j < m.action_dim; ++j) {
    if (std::find(m.action_unscaled_dims.begin(), m.action_unscaled_dims.end(), j) !=
        m.action_unscaled_dims.end()) {
      continue;
    }
    out[static_cast<size_t>(j)] = out[static_cast<size_t>(j)] *
                                      m.norm_action.std[static_cast<size_t>(j)] +
                                  m.norm_action.mean[static_cast<size_t>(j)];
  }
  return out;
}

double mean_return(const Dataset& ds) {
  double total = 0.0;
  for (const Trajectory& tr : ds.episodes) total += tr.rtg.empty() ? 0.0 : tr.rtg[0];
  return total / static_cast<double>(ds.episodes.size());
}

// --- serialization ------------------------------------------------------------

namespace {

json stats_to_json(const DimStats& st) {
  return json{{"mean", st.mean}, {"std", st.std}};
}

DimStats stats_from_json(const json& j) {
  DimStats st;
  st.mean = j.at("mean").get<std::vector<double>>();
  st.std = j.at("std").get<std::vector<double>>();
  return st;
}

void write_u32_le(std::ostream& os, uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t read_u32_le(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
  return v;
}

void write_f64_le(std::ostream& os, const double* p, size_t n) {
  for (size_t i = 0; i < n; ++i) {
    uint64_t bits = 0;
    std::memcpy(&bits, p + i, sizeof(bits));
    unsigned char b[8];
    for (int j = 0; j < 8; ++j) b[j] = static_cast<unsigned char>((bits >> (8 * j)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 8);
  }
}

void read_f64_le(std::istream& is, double* p, size_t n) {
  std::vector<unsigned char> buf(n * 8);
  is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  for (size_t i = 0; i < n; ++i) {
    uint64_t bits = 0;
    for (int j = 0; j < 8; ++j) bits |= static_cast<uint64_t>(buf[i * 8 + j]) << (8 * j);
    std::memcpy(p + i, &bits, sizeof(double));
  }
}

}  // namespace

void write_dataset(const std::string& dir, const Dataset& ds) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  const DatasetManifest& m = ds.manifest;

  json j;
  j["format_version"] = m.format_version;
  j["env"] = {{"kind", m.env.kind},
              {"n_states", m.env.n_states},
              {"horizon", m.env.horizon},
              {"d_s", m.env.d_s},
              {"d_a", m.env.d_a}};
  j["n_episodes"] = m.n_episodes;
  j["t_max"] = m.t_max;
  j["state_dim"] = m.state_dim;
  j["action_dim"] = m.action_dim;
  j["discrete_actions"] = m.discrete_actions;
  j["mix"] = m.mix;
  j["seed"] = m.seed;
  j["state_stats"] = stats_to_json(m.state_stats);
  j["action_stats"] = stats_to_json(m.action_stats);
  j["normalized"] = m.normalized;
  if (m.normalized) {
    j["norm_state"] = stats_to_json(m.norm_state);
    j["state_unscaled_dims"] = m.state_unscaled_dims;
    if (!m.discrete_actions) {
      j["norm_action"] = stats_to_json(m.norm_action);
      j["action_unscaled_dims"] = m.action_unscaled_dims;
    }
  }
  {
    std::ofstream os(fs::path(dir) / "manifest.json", std::ios::trunc);
    if (!os) throw std::runtime_error("write_dataset: cannot write manifest in " + dir);
    os << j.dump(2) << "\n";
  }
  {
    std::ofstream os(fs::path(dir) / "trajectories.bin", std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("write_dataset: cannot write trajectories in " + dir);
    for (const Trajectory& tr : ds.episodes) {
      write_u32_le(os, static_cast<uint32_t>(tr.length()));
      write_f64_le(os, tr.states.data.data(), tr.states.data.size());
      write_f64_le(os, tr.actions.data.data(), tr.actions.data.size());
      write_f64_le(os, tr.rewards.data(), tr.rewards.size());
    }
    if (!os) throw std::runtime_error("write_dataset: write failed in " + dir);
  }
}

Dataset read_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  std::ifstream ms(fs::path(dir) / "manifest.json");
  if (!ms) throw std::runtime_error("read_dataset: no manifest.json in " + dir);
  json j = json::parse(ms);

  Dataset ds;
  DatasetManifest& m = ds.manifest;
  m.format_version = j.at("format_version").get<int64_t>();
  const json& je = j.at("env");
  m.env.kind = je.at("kind").get<std::string>();
  m.env.n_states = je.at("n_states").get<int64_t>();
  m.env.horizon = je.at("horizon").get<int64_t>();
  m.env.d_s = je.at("d_s").get<int64_t>();
  m.env.d_a = je.at("d_a").get<int64_t>();
  m.n_episodes = j.at("n_episodes").get<int64_t>();
  m.t_max = j.at("t_max").get<int64_t>();
  m.state_dim = j.at("state_dim").get<int64_t>();
  m.action_dim = j.at("action_dim").get<int64_t>();
  m.discrete_actions = j.at("discrete_actions").get<bool>();
  m.mix = j.at("mix").get<std::string>();
  m.seed = j.at("seed").get<uint64_t>();
  m.state_stats = stats_from_json(j.at("state_stats"));
  m.action_stats = stats_from_json(j.at("action_stats"));
  m.normalized = j.at("normalized").get<bool>();
  if (m.normalized) {
    m.norm_state = stats_from_json(j.at("norm_state"));
    m.state_unscaled_dims = j.at("state_unscaled_dims").get<std::vector<int64_t>>();
    if (!m.discrete_actions) {
      m.norm_action = stats_from_json(j.at("norm_action"));
      m.action_unscaled_dims = j.at("action_unscaled_dims").get<std::vector<int64_t>>();
    }
  }

  std::ifstream bs(fs::path(dir) / "trajectories.bin", std::ios::binary);
  if (!bs) throw std::runtime_error("read_dataset: no trajectories.bin in " + dir);
  ds.episodes.reserve(static_cast<size_t>(m.n_episodes));
  for (int64_t e = 0; e < m.n_episodes; ++e) {
    const int64_t len = read_u32_le(bs);
    Trajectory tr;
    tr.states = Array{{len, m.state_dim}, std::vector<double>(static_cast<size_t>(len * m.state_dim))};
    tr.actions =
        Array{{len, m.action_dim}, std::vector<double>(static_cast<size_t>(len * m.action_dim))};
    tr.rewards.resize(static_cast<size_t>(len));
    read_f64_le(bs, tr.states.data.data(), tr.states.data.size());
    read_f64_le(bs, tr.actions.data.data(), tr.actions.data.size());
    read_f64_le(bs, tr.rewards.data(), tr.rewards.size());
    if (!bs) throw std::runtime_error("read_dataset: truncated trajectories.bin in " + dir);
    tr.rtg = compute_rtg(tr.rewards);
    ds.episodes.push_back(std::move(tr));
  }
  return ds;
}

}  // namespace utr
