#pragma once

#include <string>
#include <vector>

#include "utr/checkpoint.hpp"
#include "utr/envs.hpp"

namespace utr {

// One episode. rtg[t] = sum of rewards from t to the end (undiscounted); it
// is derived, not stored on disk.
struct Trajectory {
  Array states;   // [T, d_s]
  Array actions;  // [T, d_a]
  std::vector<double> rewards;
  std::vector<double> rtg;

  int64_t length() const { return static_cast<int64_t>(rewards.size()); }
};

std::vector<double> compute_rtg(const std::vector<double>& rewards);

struct DimStats {
  std::vector<double> mean;
  std::vector<double> std;
};

struct DatasetManifest {
  int64_t format_version = 1;
  EnvSpec env;
  int64_t n_episodes = 0;
  int64_t t_max = 0;
  int64_t state_dim = 0;
  int64_t action_dim = 0;
  bool discrete_actions = false;
  std::string mix;  // e.g. "expert:0.5,random:0.5"
  uint64_t seed = 0;
  // statistics of the trajectories as stored (always recomputable from them)
  DimStats state_stats;
  DimStats action_stats;
  // set when normalize() has been applied: the transform that was used,
  // needed to map env observations at evaluation time
  bool normalized = false;
  DimStats norm_state;
  DimStats norm_action;
  std::vector<int64_t> state_unscaled_dims;  // zero-variance dims left alone
  std::vector<int64_t> action_unscaled_dims;
};

struct Dataset {
  DatasetManifest manifest;
  std::vector<Trajectory> episodes;
  // which mixture component produced each episode; generation-time only,
  // not serialized
  std::vector<int64_t> episode_tiers;
};

struct MixComponent {
  std::string tier;
  double weight = 0.0;
};

std::vector<MixComponent> parse_mix(const std::string& text);

// Samples n_episodes from the tier mixture; deterministic in seed.
Dataset generate_dataset(const EnvSpec& env, const std::vector<MixComponent>& mix,
                         int64_t n_episodes, uint64_t seed);

// Z-scores states (and continuous actions). Zero-variance dims (std < 1e-12)
// pass through unscaled and are recorded in the manifest. Errors if already
// normalized.
void normalize_dataset(Dataset& ds);

// Maps a raw env observation / recovers a raw action using the manifest's
// normalization transform (identity when not normalized).
std::vector<double> normalize_state(const DatasetManifest& m, const std::vector<double>& state);
std::vector<double> denormalize_action(const DatasetManifest& m, const std::vector<double>& action);

// Directory layout: <dir>/manifest.json (UTF-8) + <dir>/trajectories.bin
// (little-endian, per episode: u32 T, f64 states[T*d_s] row-major,
// f64 actions[T*d_a], f64 rewards[T]).
void write_dataset(const std::string& dir, const Dataset& ds);
Dataset read_dataset(const std::string& dir);

// Mean per-dimension statistics over all steps of all episodes.
DimStats compute_state_stats(const Dataset& ds);
DimStats compute_action_stats(const Dataset& ds);

double mean_return(const Dataset& ds);

}  // namespace utr
