// Acceptance suite: one pass/fail line per criterion, nonzero exit on any
// failure. Heavy criteria print progress as they go.

#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <algorithm>
#include <sstream>
#include <vector>

#include "utr/analysis.hpp"
#include "utr/data.hpp"
#include "utr/train.hpp"

using namespace utr;
namespace fs = std::filesystem;

namespace {

struct Criterion {
  int number;
  std::string name;
  std::function<void(std::ostream&)> run;  // throws on failure
};

struct Failure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void require(bool ok, const std::string& what) {
  if (!ok) throw Failure(what);
}

std::string slurp(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
}

fs::path work_dir() {
  const fs::path dir = fs::temp_directory_path() / "utr_acceptance";
  fs::create_directories(dir);
  return dir;
}

ModelConfig chain_model_config(ModelKind kind, const DatasetManifest& m, int64_t context_len,
                               int64_t embed_dim = 64, int64_t depth = 3) {
  ModelConfig cfg;
  cfg.kind = kind;
  cfg.context_len = context_len;
  cfg.embed_dim = embed_dim;
  cfg.depth = depth;
  cfg.n_heads = 4;
  cfg.kernel_size = 4;
  cfg.return_dim = 32;
  cfg.state_dim = m.state_dim;
  cfg.action_dim = m.action_dim;
  cfg.action_space = ActionSpace{m.discrete_actions, m.action_dim};
  cfg.t_max = m.t_max;
  return cfg;
}

ModelConfig synthetic_config(ModelKind kind, int64_t L = 16, int64_t D = 64, int64_t depth = 3) {
  ModelConfig cfg;
  cfg.kind = kind;
  cfg.context_len = L;
  cfg.embed_dim = D;
  cfg.depth = depth;
  cfg.n_heads = 4;
  cfg.kernel_size = 4;
  cfg.return_dim = 32;
  cfg.state_dim = 8;
  cfg.action_dim = 2;
  cfg.action_space = ActionSpace{false, 2};
  cfg.t_max = 64;
  return cfg;
}

// shared chain dataset for criteria 8..10
Dataset& chain_dataset() {
  static Dataset ds = [] {
    EnvSpec spec;
    spec.kind = "chain";
    spec.n_states = 8;
    spec.horizon = 10;
    Dataset d = generate_dataset(spec, parse_mix("expert:0.5,random:0.5"), 500, 7);
    normalize_dataset(d);
    return d;
  }();
  return ds;
}

// --- criterion 1: sequence-length law ---------------------------------------

void criterion_sequence_length(std::ostream&) {
  Rng rng(1);
  auto unified = UnifiedEncoderParams::init(32, 8, 2, 64, 64, rng);
  auto separated = SeparatedEncoderParams::init(8, 2, 64, 64, rng);
  for (int64_t len : {1, 4, 16, 64}) {
    Tape tape;
    NoGradGuard guard(tape);
    Tensor rtg = Tensor::randn({len, 1}, rng, 1.0);
    Tensor states = Tensor::randn({len, 8}, rng, 1.0);
    Tensor actions = Tensor::randn({len, 2}, rng, 1.0);
    std::vector<int64_t> ts(static_cast<size_t>(len));
    for (int64_t t = 0; t < len; ++t) ts[static_cast<size_t>(t)] = t;
    const TokenSequence u = encode_unified(tape, rtg, states, actions, ts, unified);
    const TokenSequence s = encode_separated(tape, rtg, states, actions, ts, separated);
    require(u.tokens.dim(0) == len, "unified length != L at L=" + std::to_string(len));
    require(s.tokens.dim(0) == 3 * u.tokens.dim(0),
            "separated length != 3x unified at L=" + std::to_string(len));
  }
}

// --- criterion 2: attention-cost ratio ---------------------------------------

void criterion_attention_ratio(std::ostream&) {
  for (int64_t L : {1, 4, 16, 64}) {
    for (int64_t D : {16, 64}) {
      for (int64_t depth : {1, 3}) {
        const double dt = count_flops(synthetic_config(ModelKind::DT, L, D, depth)).attn_scores;
        const double udt = count_flops(synthetic_config(ModelKind::UDT, L, D, depth)).attn_scores;
        require(dt / udt == 9.0, "attention-score FLOP ratio != 9.0 exactly");
      }
    }
  }
}

// --- criterion 3: table direction at desk scale -------------------------------

void criterion_table_direction(std::ostream& log) {
  const int64_t batch = 64;
  const double dt_flops = count_flops(synthetic_config(ModelKind::DT)).total() * batch;
  const double udt_flops = count_flops(synthetic_config(ModelKind::UDT)).total() * batch;
  const double udc_flops = count_flops(synthetic_config(ModelKind::UDC)).total() * batch;
  require(udt_flops <= 0.5 * dt_flops, "count_flops(UDT) > 0.5 * count_flops(DT)");
  require(udc_flops <= 0.5 * dt_flops, "count_flops(UDC) > 0.5 * count_flops(DT)");
  log << "    flops/batch: dt " << dt_flops << ", udt " << udt_flops << " ("
      << (1.0 - udt_flops / dt_flops) * 100.0 << "% lower), udc " << udc_flops << " ("
      << (1.0 - udc_flops / dt_flops) * 100.0 << "% lower)\n";

  BenchSpec bench;
  bench.steps = 500;
  bench.batch = batch;
  bench.runs = 3;
  bench.warmup = 10;
  bench.seed = 2;
  double seconds[3] = {0, 0, 0};
  const ModelKind kinds[3] = {ModelKind::UDC, ModelKind::UDT, ModelKind::DT};
  for (int i = 0; i < 3; ++i) {
    seconds[i] = bench_train_seconds(synthetic_config(kinds[i]), bench);
    log << "    500-step time " << model_kind_name(kinds[i]) << ": " << seconds[i]
        << "s (median of 3)\n";
    log.flush();
  }
  require(seconds[0] < seconds[1], "time(UDC) >= time(UDT)");
  require(seconds[1] < seconds[2], "time(UDT) >= time(DT)");
}

// --- criterion 4: Theorem-2 trace bounds --------------------------------------

void criterion_trace_bounds(std::ostream& log) {
  Rng rng(11);
  for (int i = 0; i < 100; ++i) {
    const double rho = rng.uniform();
    const double s = 1.0 / 3.0 + (2.0 / 3.0) * rng.uniform();
    const CovSpec spec = CovSpec::from_rho_s(1.0 + 4.0 * rng.uniform(), rho, s);
    const double merged = trace_bound_merged(spec);
    const double separated = trace_bound_separated(spec);
    require(merged <= separated, "trace_bound_merged > trace_bound_separated");
    if (rho < 1.0 || s < 1.0) {
      require(merged < separated, "bound not strict for rho<1 or s<1");
    }
  }

  const int64_t n = 100000, d = 8;
  for (double rho : {0.0, 0.3, 0.6}) {
    for (double s : {1.0 / 3.0, 0.7}) {
      const CovSpec spec = CovSpec::from_rho_s(static_cast<double>(d), rho, s);
      Rng block_rng(static_cast<uint64_t>(1000 + rho * 100 + s * 10));
      const BlockSamples blocks = sample_correlated_blocks(n, d, rho, block_rng);
      const MergedSeparated built =
          build_merged_and_separated_samples(blocks.u1, blocks.u2, blocks.u3, spec.weights);
      require(built.trace_merged <= 1.05 * trace_bound_merged(spec),
              "empirical merged trace violates the bound by more than 5%");
      require(built.trace_separated <= 1.05 * trace_bound_separated(spec),
              "empirical separated trace violates the bound by more than 5%");
    }
  }

  for (double rho : {0.0, 0.3, 0.6}) {
    const CovSpec spec = CovSpec::from_rho_s(static_cast<double>(d), rho, 1.0 / 3.0);
    Rng exp_rng(static_cast<uint64_t>(7000 + rho * 10));
    const BlockSamples blocks = sample_correlated_blocks(n, d, rho, exp_rng);
    const MergedSeparated built =
        build_merged_and_separated_samples(blocks.u1, blocks.u2, blocks.u3, spec.weights);
    RademacherQuery query{1.0, 200};
    const RademacherEstimate merged = empirical_rademacher_linear(built.merged, query, exp_rng);
    const RademacherEstimate separated =
        empirical_rademacher_linear(built.separated, query, exp_rng);
    const double slack = 3.0 * std::sqrt(merged.stderr_value * merged.stderr_value +
                                         separated.stderr_value * separated.stderr_value);
    log << "    rho " << rho << ": emp merged " << merged.value << " vs separated "
        << separated.value << " (3-sigma slack " << slack << ")\n";
    require(merged.value <= separated.value + slack,
            "empirical Rademacher of merged exceeds separated by over 3 stderr");
  }
}

// --- criterion 5: ratio-bound spot values -------------------------------------

void criterion_ratio_spot_values(std::ostream&) {
  require(rademacher_ratio_bound(CovSpec::from_rho_s(1.0, 0.0, 1.0 / 3.0)) == 1.0 / 3.0,
          "ratio bound at (rho=0, s=1/3) is not exactly 1/3");
  for (double s : {1.0 / 3.0, 0.4, 0.75, 1.0}) {
    const double v = rademacher_ratio_bound(CovSpec::from_rho_s(1.0, 1.0, s));
    require(std::fabs(v - 1.0 / std::sqrt(3.0)) < 1e-12,
            "ratio bound at rho=1 is not 1/sqrt(3) within 1e-12");
  }
}

// --- criterion 6: gradient correctness ---------------------------------------

void criterion_gradients(std::ostream& log) {
  Rng data_rng(21);
  for (ModelKind kind : {ModelKind::DT, ModelKind::UDT, ModelKind::UDC}) {
    ModelConfig cfg = synthetic_config(kind, 4, 16, 2);
    cfg.n_heads = 2;
    cfg.return_dim = 8;
    cfg.state_dim = 3;
    cfg.action_dim = 2;
    cfg.action_space = ActionSpace{false, 2};
    cfg.t_max = 8;
    PolicyModel model(cfg, 5);

    // a small batch of windows; loss = batch mean
    const int64_t batch = 3;
    std::vector<Array> rtgs, states, actions;
    std::vector<std::vector<int64_t>> steps;
    std::vector<std::vector<double>> masks;
    for (int64_t b = 0; b < batch; ++b) {
      Array r{{4, 1}, std::vector<double>(4)};
      Array st{{4, 3}, std::vector<double>(12)};
      Array ac{{4, 2}, std::vector<double>(8)};
      for (auto& v : r.data) v = data_rng.normal();
      for (auto& v : st.data) v = data_rng.normal();
      for (auto& v : ac.data) v = data_rng.normal();
      rtgs.push_back(r);
      states.push_back(st);
      actions.push_back(ac);
      steps.push_back({0, 1, 2, 3});
      masks.push_back({1.0, 1.0, 1.0, 1.0});
    }

    auto make_loss = [&](Tape& t) {
      Tensor total;
      for (int64_t b = 0; b < batch; ++b) {
        Tensor preds = model.forward(t, rtgs[b], states[b], actions[b], steps[b]);
        Tensor piece = scale(t, model.loss(t, preds, actions[b], masks[b]),
                             1.0 / static_cast<double>(batch));
        total = b == 0 ? piece : add(t, total, piece);
      }
      return total;
    };

    // reverse-mode gradients
    for (auto& p : model.params()) p.value.zero_grad();
    Tape tape;
    Tensor loss = make_loss(tape);
    tape.backward(loss);
    std::vector<std::vector<double>> ad;
    auto params = model.params();
    for (auto& p : params) {
      if (p.value.has_grad()) {
        ad.emplace_back(p.value.grad(), p.value.grad() + p.value.numel());
      } else {
        ad.emplace_back(static_cast<size_t>(p.value.numel()), 0.0);
      }
      p.value.zero_grad();
    }

    auto eval = [&] {
      Tape t;
      NoGradGuard guard(t);
      return make_loss(t).value();
    };
    const double h = 1e-5;
    double max_rel = 0.0;
    int64_t checked = 0;
    for (size_t pi = 0; pi < params.size(); ++pi) {
      double* data = params[pi].value.data();
      for (int64_t i = 0; i < params[pi].value.numel(); ++i) {
        const double saved = data[i];
        data[i] = saved + h;
        const double fp = eval();
        data[i] = saved - h;
        const double fm = eval();
        data[i] = saved;
        const double fd = (fp - fm) / (2.0 * h);
        const double adv = ad[pi][static_cast<size_t>(i)];
        const double rel = std::fabs(adv - fd) / std::max({1.0, std::fabs(adv), std::fabs(fd)});
        max_rel = std::max(max_rel, rel);
        ++checked;
      }
    }
    log << "    " << model_kind_name(kind) << ": " << checked
        << " parameters checked, max rel err " << max_rel << "\n";
    log.flush();
    require(max_rel < 1e-4, model_kind_name(kind) + " gradient rel err >= 1e-4");
  }
}

// --- criterion 7: causality suite ---------------------------------------------

void criterion_causality(std::ostream&) {
  Rng rng(31);
  for (ModelKind kind : {ModelKind::DT, ModelKind::UDT, ModelKind::UDC}) {
    for (int m = 0; m < 20; ++m) {
      ModelConfig cfg = synthetic_config(kind, 6, 16, 1 + m % 3);
      cfg.n_heads = (m % 2) ? 2 : 4;
      cfg.kernel_size = 1 + m % 5;
      cfg.state_dim = 2 + m % 3;
      cfg.action_dim = 1 + m % 2;
      cfg.action_space = ActionSpace{false, cfg.action_dim};
      cfg.t_max = 8;
      PolicyModel model(cfg, 100 + static_cast<uint64_t>(m));

      Array rtg{{6, 1}, std::vector<double>(6)};
      Array states{{6, cfg.state_dim}, std::vector<double>(static_cast<size_t>(6 * cfg.state_dim))};
      Array actions{{6, cfg.action_dim},
                    std::vector<double>(static_cast<size_t>(6 * cfg.action_dim))};
      for (auto& v : rtg.data) v = rng.normal();
      for (auto& v : states.data) v = rng.normal();
      for (auto& v : actions.data) v = rng.normal();
      const std::vector<int64_t> ts{0, 1, 2, 3, 4, 5};

      Tape tape;
      NoGradGuard guard(tape);
      Tensor base = model.forward(tape, rtg, states, actions, ts).detached_copy();

      const int64_t probe = static_cast<int64_t>(rng.uniform_int(5));
      Array rtg2 = rtg, states2 = states, actions2 = actions;
      for (int64_t t = probe + 1; t < 6; ++t) {
        rtg2.data[static_cast<size_t>(t)] += 1.0 + rng.normal();
        for (int64_t j = 0; j < cfg.state_dim; ++j)
          states2.data[t * cfg.state_dim + j] += 1.0 + rng.normal();
        for (int64_t j = 0; j < cfg.action_dim; ++j)
          actions2.data[t * cfg.action_dim + j] += 1.0 + rng.normal();
      }
      Tensor perturbed = model.forward(tape, rtg2, states2, actions2, ts);
      for (int64_t t = 0; t <= probe; ++t) {
        for (int64_t j = 0; j < perturbed.dim(1); ++j) {
          require(perturbed.at(t, j) == base.at(t, j),
                  model_kind_name(kind) + " prediction at step " + std::to_string(t) +
                      " changed under a future perturbation");
        }
      }
    }
  }
}

// --- criterion 8: end-to-end learning ------------------------------------------

void criterion_end_to_end(std::ostream& log) {
  Dataset& ds = chain_dataset();
  // L = t_max = 10: the context may not exceed the episode horizon
  const int64_t L = ds.manifest.t_max;
  for (ModelKind kind : {ModelKind::UDC, ModelKind::UDT, ModelKind::DT}) {
    PolicyModel model(chain_model_config(kind, ds.manifest, L), 1);
    TrainConfig tc;
    tc.batch_size = 64;
    tc.steps = 2000;
    tc.lr = 1e-4;
    tc.warmup_steps = 100;
    tc.grad_clip = 0.25;
    tc.context_len = L;
    tc.seed = 1;
    const auto t0 = std::chrono::steady_clock::now();
    const TrainResult result = train(model, ds, tc, "");
    require(!result.aborted, model_kind_name(kind) + " training aborted: " + result.abort_reason);
    const EvalReport report =
        evaluate(model, ds.manifest.env, ds.manifest, default_rtg_multipliers(), 20, 5);
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    log << "    " << model_kind_name(kind) << ": best score " << report.best_score << " ("
        << secs << "s train+eval, final loss " << result.metrics.back().loss << ")\n";
    log.flush();
    require(report.best_score >= 80.0,
            model_kind_name(kind) + " best normalized score below 80");
  }
}

// --- criterion 9: determinism and persistence -----------------------------------

std::string drop_wall_ms(const std::string& csv) {
  std::string out;
  std::istringstream is(csv);
  std::string line;
  while (std::getline(is, line)) {
    const size_t last = line.rfind(',');
    out += line.substr(0, last);
    out += '\n';
  }
  return out;
}

void criterion_determinism(std::ostream&) {
  Dataset& ds = chain_dataset();
  auto run_once = [&](const fs::path& dir) {
    fs::remove_all(dir);
    PolicyModel model(chain_model_config(ModelKind::UDC, ds.manifest, 8, 32, 1), 3);
    TrainConfig tc;
    tc.batch_size = 16;
    tc.steps = 40;
    tc.lr = 3e-4;
    tc.context_len = 8;
    tc.seed = 17;
    train(model, ds, tc, dir.string());
  };
  const fs::path dir_a = work_dir() / "det_a";
  const fs::path dir_b = work_dir() / "det_b";
  run_once(dir_a);
  run_once(dir_b);
  const std::string csv_a = slurp(dir_a / "metrics.csv");
  const std::string csv_b = slurp(dir_b / "metrics.csv");
  // wall_ms is physical time and necessarily varies; all computed columns
  // must agree to the bit
  require(drop_wall_ms(csv_a) == drop_wall_ms(csv_b),
          "metrics differ between identically seeded runs");

  // checkpoint round-trip byte-identity
  const Checkpoint ckpt = load_checkpoint((dir_a / "model.ckpt").string());
  std::vector<NamedParam> entries;
  for (const auto& [name, arr] : ckpt.entries) entries.push_back({name, Tensor::leaf(arr.shape, arr.data)});
  const fs::path resaved = work_dir() / "det_resaved.ckpt";
  save_checkpoint(resaved.string(), entries, ckpt.config_text);
  require(slurp(dir_a / "model.ckpt") == slurp(resaved),
          "checkpoint save -> load -> save changed bytes");

  // dataset round-trip byte-identity
  const fs::path ds_a = work_dir() / "ds_a";
  const fs::path ds_b = work_dir() / "ds_b";
  fs::remove_all(ds_a);
  fs::remove_all(ds_b);
  write_dataset(ds_a.string(), ds);
  write_dataset(ds_b.string(), read_dataset(ds_a.string()));
  require(slurp(ds_a / "manifest.json") == slurp(ds_b / "manifest.json"),
          "manifest bytes changed across a read/write cycle");
  require(slurp(ds_a / "trajectories.bin") == slurp(ds_b / "trajectories.bin"),
          "trajectory bytes changed across a read/write cycle");
}

// --- criterion 10: shifted-action base case --------------------------------------

void criterion_shift_base_case(std::ostream&) {
  Dataset& ds = chain_dataset();
  Rng rng(41);
  Tape tape;
  NoGradGuard guard(tape);
  for (int rep = 0; rep < 50; ++rep) {
    const Batch batch = sample_batch(ds, 8, 16, rng);
    for (const SequenceSample& s : batch) {
      Tensor actions = Tensor::leaf(s.actions.shape, s.actions.data);
      Tensor shifted = shift_actions(tape, actions);
      for (int64_t j = 0; j < shifted.dim(1); ++j) {
        require(shifted.at(0, j) == 0.0, "first shifted action is not the zero vector");
      }
    }
  }
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<Criterion> criteria{
      {1, "sequence-length law (separated == 3x unified)", criterion_sequence_length},
      {2, "attention-score FLOP ratio DT/UDT == 9.0 exactly", criterion_attention_ratio},
      {3, "table direction: >=50% FLOP cut and UDC < UDT < DT training time",
       criterion_table_direction},
      {4, "trace bounds: merged <= separated, empirical traces and estimates agree",
       criterion_trace_bounds},
      {5, "ratio-bound spot values (1/3 exact, 1/sqrt(3) at rho=1)", criterion_ratio_spot_values},
      {6, "finite-difference gradient check across all three model kinds", criterion_gradients},
      {7, "strict causality for 20 random models per kind", criterion_causality},
      {8, "end-to-end learning: best normalized score >= 80 for UDC, UDT and DT",
       criterion_end_to_end},
      {9, "determinism of metrics, checkpoint and dataset byte round-trips",
       criterion_determinism},
      {10, "first shifted action is the zero vector in every sampled batch",
       criterion_shift_base_case},
  };

  std::vector<int> selected;
  for (int i = 1; i < argc; ++i) selected.push_back(std::atoi(argv[i]));

  int failures = 0;
  for (const Criterion& criterion : criteria) {
    if (!selected.empty() &&
        std::find(selected.begin(), selected.end(), criterion.number) == selected.end()) {
      continue;
    }
    const auto t0 = std::chrono::steady_clock::now();
    try {
      criterion.run(std::cout);
      const double secs =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      std::cout << "[PASS] criterion " << criterion.number << ": " << criterion.name << " ("
                << secs << "s)" << std::endl;
    } catch (const std::exception& e) {
      const double secs =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      std::cout << "[FAIL] criterion " << criterion.number << ": " << criterion.name << " ("
                << secs << "s): " << e.what() << std::endl;
      ++failures;
    }
  }
  if (failures == 0) {
    std::cout << "all criteria passed" << std::endl;
  } else {
    std::cout << failures << " criteria failed" << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
