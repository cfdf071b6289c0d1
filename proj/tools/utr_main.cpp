// Command-line front end: dataset generation, training, evaluation and the
// complexity/Rademacher analysis, all reproducible from (flags, seed).

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "utr/analysis.hpp"
#include "utr/data.hpp"
#include "utr/train.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;

void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << text;
}

// Every command persists its effective configuration next to its outputs so
// any reported number can be reproduced from the directory alone.
void persist_resolved_config(CLI::App* cmd, const std::string& out_dir) {
  write_text(fs::path(out_dir) / "resolved_config.txt",
             cmd->config_to_str(true, false));
}

struct GenDataArgs {
  std::string env = "chain";
  int64_t n_episodes = 500;
  std::string mix = "expert:0.5,random:0.5";
  uint64_t seed = 7;
  std::string out;
  int64_t chain_states = 8;
  int64_t horizon = 10;
  bool no_normalize = false;
};

int run_gen_data(const GenDataArgs& args) {
  utr::EnvSpec spec;
  spec.kind = args.env;
  spec.n_states = args.chain_states;
  spec.horizon = args.horizon;

  const auto mix = utr::parse_mix(args.mix);
  utr::Dataset ds = utr::generate_dataset(spec, mix, args.n_episodes, args.seed);

  // per-tier mean returns for the summary line
  std::vector<double> tier_total(mix.size(), 0.0);
  std::vector<int64_t> tier_count(mix.size(), 0);
  for (size_t e = 0; e < ds.episodes.size(); ++e) {
    const size_t tier = static_cast<size_t>(ds.episode_tiers[e]);
    tier_total[tier] += ds.episodes[e].rtg.empty() ? 0.0 : ds.episodes[e].rtg[0];
    tier_count[tier] += 1;
  }

  if (!args.no_normalize) utr::normalize_dataset(ds);
  utr::write_dataset(args.out, ds);

  std::cout << "wrote " << ds.episodes.size() << " episodes to " << args.out << "\n";
  for (size_t i = 0; i < mix.size(); ++i) {
    const double mean =
        tier_count[i] > 0 ? tier_total[i] / static_cast<double>(tier_count[i]) : 0.0;
    std::cout << "tier " << mix[i].tier << ": " << tier_count[i] << " episodes, mean return "
              << mean << "\n";
  }
  return 0;
}

struct TrainArgs {
  std::string model = "udc";
  std::string data;
  std::string out;
  std::string resume;
  int64_t steps = 2000;
  int64_t batch = 64;
  double lr = 1e-4;
  int64_t warmup = 100;
  double clip = 0.25;
  int64_t context_len = 16;
  int64_t embed_dim = 64;
  int64_t depth = 3;
  int64_t heads = 4;
  int64_t kernel = 4;
  int64_t expand = 0;
  int64_t return_dim = 32;
  uint64_t seed = 0;
  int64_t eval_interval = 0;
  int64_t threads = 0;
};

utr::ModelConfig model_config_for(const TrainArgs& args, const utr::DatasetManifest& manifest) {
  utr::ModelConfig cfg;
  cfg.kind = utr::model_kind_from_name(args.model);
  cfg.context_len = args.context_len;
  cfg.embed_dim = args.embed_dim;
  cfg.depth = args.depth;
  cfg.n_heads = args.heads;
  cfg.kernel_size = args.kernel;
  cfg.expand_dim = args.expand;
  cfg.return_dim = args.return_dim;
  cfg.state_dim = manifest.state_dim;
  cfg.action_dim = manifest.action_dim;
  cfg.action_space = utr::ActionSpace{manifest.discrete_actions, manifest.action_dim};
  cfg.t_max = manifest.t_max;
  cfg.validate();
  return cfg;
}

int run_train(const TrainArgs& args) {
  const utr::Dataset ds = utr::read_dataset(args.data);

  utr::TrainConfig tc;
  tc.batch_size = args.batch;
  tc.steps = args.steps;
  tc.lr = args.lr;
  tc.warmup_steps = args.warmup;
  tc.grad_clip = args.clip;
  tc.context_len = args.context_len;
  tc.seed = args.seed;
  tc.eval_interval = args.eval_interval;
  tc.threads = args.threads;

  utr::PolicyModel model = args.resume.empty()
                               ? utr::PolicyModel(model_config_for(args, ds.manifest), args.seed)
                               : utr::PolicyModel::load_file(args.resume);
  if (!args.resume.empty() && utr::model_kind_name(model.config().kind) != args.model) {
    throw std::invalid_argument("--resume checkpoint is a " +
                                utr::model_kind_name(model.config().kind) + " model, not " +
                                args.model);
  }

  const utr::TrainResult result = utr::train(model, ds, tc, args.out, args.resume);
  if (result.aborted) {
    std::cerr << "training aborted: " << result.abort_reason << "\n";
    if (!result.final_checkpoint.empty()) {
      std::cerr << "last good checkpoint: " << result.final_checkpoint << "\n";
    }
    return kExitRuntime;
  }
  std::cout << "trained " << result.completed_steps << " steps";
  if (!result.metrics.empty()) std::cout << ", final loss " << result.metrics.back().loss;
  std::cout << "\ncheckpoint: " << result.final_checkpoint << "\n";
  return 0;
}

struct EvalArgs {
  std::string ckpt;
  std::string data;
  std::string out;
  std::string targets = "0.5,0.75,1.0,1.25,1.5,2.0";
  int64_t n_eval = 20;
  uint64_t seed = 0;
};

std::vector<double> parse_multipliers(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(std::stod(item));
  }
  if (out.empty()) throw std::invalid_argument("--targets: no multipliers given");
  return out;
}

int run_eval(const EvalArgs& args) {
  const utr::Dataset ds = utr::read_dataset(args.data);
  const utr::PolicyModel model = utr::PolicyModel::load_file(args.ckpt);
  const utr::EvalReport report = utr::evaluate(model, ds.manifest.env, ds.manifest,
                                               parse_multipliers(args.targets), args.n_eval,
                                               args.seed);
  write_text(fs::path(args.out) / "eval.csv", report.to_csv());
  for (size_t i = 0; i < report.multipliers.size(); ++i) {
    std::cout << "target x" << report.multipliers[i] << ": mean return "
              << report.mean_returns[i] << ", score " << report.norm_scores[i] << "\n";
  }
  std::cout << "best score " << report.best_score << " (target x"
            << report.multipliers[report.best_index] << "), " << report.wall_seconds << "s\n";
  return 0;
}

struct AnalyzeArgs {
  std::string compare;
  bool rademacher = false;
  std::string out;
  int64_t context_len = 16;
  int64_t embed_dim = 64;
  int64_t depth = 3;
  int64_t heads = 4;
  int64_t kernel = 4;
  int64_t expand = 0;
  int64_t return_dim = 32;
  int64_t d_s = 8;
  int64_t d_a = 2;
  int64_t batch = 64;
  int64_t bench_steps = 500;
  int64_t bench_runs = 3;
  bool no_time = false;
  int64_t threads = 0;
  double rho = 0.0;
  double s = 1.0 / 3.0;
  int64_t n_samples = 100000;
  int64_t dim = 16;
  int64_t draws = 200;
  double norm_budget = 1.0;
  uint64_t seed = 1;
};

int run_analyze(const AnalyzeArgs& args) {
  if (args.compare.empty() && !args.rademacher) {
    throw CLI::ValidationError("analyze", "pass --compare and/or --rademacher");
  }
  if (!args.compare.empty()) {
    std::vector<utr::ModelKind> kinds;
    std::stringstream ss(args.compare);
    std::string item;
    while (std::getline(ss, item, ',')) kinds.push_back(utr::model_kind_from_name(item));

    utr::ModelConfig base;
    base.context_len = args.context_len;
    base.embed_dim = args.embed_dim;
    base.depth = args.depth;
    base.n_heads = args.heads;
    base.kernel_size = args.kernel;
    base.expand_dim = args.expand;
    base.return_dim = args.return_dim;
    base.state_dim = args.d_s;
    base.action_dim = args.d_a;
    base.action_space = utr::ActionSpace{false, args.d_a};
    base.t_max = std::max<int64_t>(args.context_len, 64);

    utr::BenchSpec bench;
    bench.steps = args.bench_steps;
    bench.batch = args.batch;
    bench.runs = args.bench_runs;
    bench.seed = args.seed;
    bench.threads = args.threads;

    const utr::ComplexityReport report =
        utr::build_complexity_report(base, kinds, bench, !args.no_time);
    const std::string csv = report.to_csv();
    write_text(fs::path(args.out) / "complexity.csv", csv);
    std::cout << csv;
  }
  if (args.rademacher) {
    const utr::RademacherRow row = utr::rademacher_experiment(
        args.rho, args.s, args.n_samples, args.dim, args.norm_budget, args.draws, args.seed);
    const std::string csv = utr::rademacher_rows_to_csv({row});
    write_text(fs::path(args.out) / "rademacher.csv", csv);
    std::cout << csv;
  }
  return 0;
}

// Plain-text key=value configs. Values already set on the command line win;
// unknown keys fail fast.
void apply_config_file(CLI::App* cmd, const std::string& path) {
  std::ifstream is(path);
  if (!is) throw CLI::ValidationError("--config", "cannot read " + path);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw CLI::ValidationError(
          "--config", path + ":" + std::to_string(lineno) + ": expected key=value");
    }
    const std::string key = line.substr(0, eq);
    const std::string value = line.substr(eq + 1);
    CLI::Option* opt = cmd->get_option_no_throw("--" + key);
    if (opt == nullptr) {
      throw CLI::ValidationError("--config", "unknown key '" + key + "' in " + path);
    }
    if (opt->count() > 0) continue;  // explicit flag wins
    opt->add_result(value);
    opt->run_callback();
  }
}

void add_config_support(CLI::App* cmd, std::string* config_path) {
  cmd->add_option("--config", *config_path, "key=value file; explicit flags win");
  cmd->parse_complete_callback([cmd, config_path] {
    if (!config_path->empty()) apply_config_file(cmd, *config_path);
  });
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"unified-token decision models: data, training, evaluation, analysis"};
  app.require_subcommand(1);

  GenDataArgs gen;
  std::string gen_config;
  CLI::App* gen_cmd = app.add_subcommand("gen-data", "generate a synthetic offline RL dataset");
  gen_cmd->add_option("--env", gen.env, "environment kind: chain | linear")
      ->check(CLI::IsMember({"chain", "linear"}));
  gen_cmd->add_option("--n", gen.n_episodes, "number of episodes");
  gen_cmd->add_option("--mix", gen.mix, "behavior mixture, e.g. expert:0.5,random:0.5");
  gen_cmd->add_option("--seed", gen.seed, "generation seed");
  gen_cmd->add_option("--out", gen.out, "output directory")->required();
  gen_cmd->add_option("--chain-states", gen.chain_states, "chain length (chain env)");
  gen_cmd->add_option("--horizon", gen.horizon, "episode horizon");
  gen_cmd->add_flag("--no-normalize", gen.no_normalize, "skip state/action z-scoring");
  add_config_support(gen_cmd, &gen_config);

  TrainArgs tr;
  std::string tr_config;
  CLI::App* train_cmd = app.add_subcommand("train", "train a policy on a dataset");
  train_cmd->add_option("--model", tr.model, "dt | udt | udc")
      ->check(CLI::IsMember({"dt", "udt", "udc"}));
  train_cmd->add_option("--data", tr.data, "dataset directory")->required();
  train_cmd->add_option("--out", tr.out, "output directory")->required();
  train_cmd->add_option("--resume", tr.resume, "checkpoint to continue from");
  train_cmd->add_option("--steps", tr.steps, "training steps");
  train_cmd->add_option("--batch", tr.batch, "batch size");
  train_cmd->add_option("--lr", tr.lr, "learning rate");
  train_cmd->add_option("--warmup", tr.warmup, "linear warmup steps");
  train_cmd->add_option("--clip", tr.clip, "gradient norm clip");
  train_cmd->add_option("--L", tr.context_len, "context length");
  train_cmd->add_option("--D", tr.embed_dim, "embedding width");
  train_cmd->add_option("--depth", tr.depth, "number of blocks");
  train_cmd->add_option("--heads", tr.heads, "attention heads");
  train_cmd->add_option("--kernel", tr.kernel, "conv kernel size (udc)");
  train_cmd->add_option("--expand", tr.expand, "conv inner width (udc), 0 = 2*D");
  train_cmd->add_option("--d-r", tr.return_dim, "return embedding width");
  train_cmd->add_option("--seed", tr.seed, "training seed");
  train_cmd->add_option("--eval-interval", tr.eval_interval, "checkpoint every N steps");
  train_cmd->add_option("--threads", tr.threads, "worker threads, 0 = hardware");
  add_config_support(train_cmd, &tr_config);

  EvalArgs ev;
  std::string ev_config;
  CLI::App* eval_cmd = app.add_subcommand("eval", "roll out a checkpoint across RTG targets");
  eval_cmd->add_option("--ckpt", ev.ckpt, "model checkpoint")->required();
  eval_cmd->add_option("--data", ev.data, "dataset directory (env + normalization)")->required();
  eval_cmd->add_option("--out", ev.out, "output directory")->required();
  eval_cmd->add_option("--targets", ev.targets, "comma-separated RTG multipliers");
  eval_cmd->add_option("--n-eval", ev.n_eval, "rollouts per target");
  eval_cmd->add_option("--seed", ev.seed, "evaluation seed");
  add_config_support(eval_cmd, &ev_config);

  AnalyzeArgs an;
  std::string an_config;
  CLI::App* an_cmd = app.add_subcommand("analyze", "complexity table and trace-bound experiment");
  an_cmd->add_option("--compare", an.compare, "model kinds for the complexity table, e.g. dt,udt,udc");
  an_cmd->add_flag("--rademacher", an.rademacher, "run the trace-bound experiment");
  an_cmd->add_option("--out", an.out, "output directory")->required();
  an_cmd->add_option("--L", an.context_len, "context length");
  an_cmd->add_option("--D", an.embed_dim, "embedding width");
  an_cmd->add_option("--depth", an.depth, "number of blocks");
  an_cmd->add_option("--heads", an.heads, "attention heads");
  an_cmd->add_option("--kernel", an.kernel, "conv kernel size");
  an_cmd->add_option("--expand", an.expand, "conv inner width, 0 = 2*D");
  an_cmd->add_option("--d-r", an.return_dim, "return embedding width");
  an_cmd->add_option("--d-s", an.d_s, "state width");
  an_cmd->add_option("--d-a", an.d_a, "action width");
  an_cmd->add_option("--batch", an.batch, "sequences per training step");
  an_cmd->add_option("--bench-steps", an.bench_steps, "timed steps per run");
  an_cmd->add_option("--bench-runs", an.bench_runs, "timing runs (median reported)");
  an_cmd->add_flag("--no-time", an.no_time, "skip wall-clock timing");
  an_cmd->add_option("--threads", an.threads, "worker threads, 0 = hardware");
  an_cmd->add_option("--rho", an.rho, "pairwise block correlation");
  an_cmd->add_option("--s", an.s, "weight concentration |w|^2, in [1/3, 1]");
  an_cmd->add_option("--n", an.n_samples, "sample count for the experiment");
  an_cmd->add_option("--d", an.dim, "per-block dimension");
  an_cmd->add_option("--m", an.draws, "Monte-Carlo sign draws");
  an_cmd->add_option("--B", an.norm_budget, "predictor norm budget");
  an_cmd->add_option("--seed", an.seed, "experiment seed");
  add_config_support(an_cmd, &an_config);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    int rc = 0;
    if (gen_cmd->parsed()) {
      rc = run_gen_data(gen);
      if (rc == 0) persist_resolved_config(gen_cmd, gen.out);
    } else if (train_cmd->parsed()) {
      rc = run_train(tr);
      if (rc == 0) persist_resolved_config(train_cmd, tr.out);
    } else if (eval_cmd->parsed()) {
      rc = run_eval(ev);
      if (rc == 0) persist_resolved_config(eval_cmd, ev.out);
    } else if (an_cmd->parsed()) {
      rc = run_analyze(an);
      if (rc == 0) persist_resolved_config(an_cmd, an.out);
    }
    return rc;
  } catch (const CLI::Error& e) {
    std::cerr << e.what() << "\n";
    return kExitUsage;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}
