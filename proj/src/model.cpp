#include "utr/model.hpp"

#include <algorithm>
#include <iterator>
#include <sstream>
#include <stdexcept>

namespace utr {

std::string model_kind_name(ModelKind kind) {
  switch (kind) {
    case ModelKind::DT: return "dt";
    case ModelKind::UDT: return "udt";
    case ModelKind::UDC: return "udc";
  }
  return "?";
}

ModelKind model_kind_from_name(const std::string& name) {
  if (name == "dt") return ModelKind::DT;
  if (name == "udt") return ModelKind::UDT;
  if (name == "udc") return ModelKind::UDC;
  throw std::invalid_argument("unknown model kind '" + name + "' (expected dt, udt or udc)");
}

void ModelConfig::validate() const {
  if (context_len < 1 || embed_dim < 1 || depth < 0 || state_dim < 1 || action_dim < 1 ||
      return_dim < 1 || t_max < 1) {
    throw std::invalid_argument("ModelConfig: dims must be positive");
  }
  if (attention_backbone() && (n_heads < 1 || embed_dim % n_heads != 0)) {
    throw std::invalid_argument("ModelConfig: embed_dim " + std::to_string(embed_dim) +
                                " not divisible by n_heads " + std::to_string(n_heads));
  }
  if (kind == ModelKind::UDC && kernel_size < 1) {
    throw std::invalid_argument("ModelConfig: kernel_size must be >= 1");
  }
  if (action_space.dim != action_dim) {
    throw std::invalid_argument("ModelConfig: action_dim must equal action_space.dim");
  }
}

std::string ModelConfig::to_config_text() const {
  std::ostringstream os;
  os << "kind=" << model_kind_name(kind) << "\n";
  os << "context_len=" << context_len << "\n";
  os << "embed_dim=" << embed_dim << "\n";
  os << "depth=" << depth << "\n";
  os << "n_heads=" << n_heads << "\n";
  os << "kernel_size=" << kernel_size << "\n";
  os << "expand_dim=" << expand_dim << "\n";
  os << "return_dim=" << return_dim << "\n";
  os << "state_dim=" << state_dim << "\n";
  os << "action_dim=" << action_dim << "\n";
  os << "action_space=" << (action_space.discrete ? "discrete" : "continuous") << ":"
     << action_space.dim << "\n";
  os << "t_max=" << t_max << "\n";
  return os.str();
}

ModelConfig ModelConfig::from_config_text(const std::string& text) {
  ModelConfig cfg;
  std::istringstream is(text);
  std::string line;
  auto to_i64 = [](const std::string& v) { return static_cast<int64_t>(std::stoll(v)); };
  while (std::getline(is, line)) {
    const size_t eq = line.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = line.substr(0, eq);
    const std::string val = line.substr(eq + 1);
    if (key == "kind") cfg.kind = model_kind_from_name(val);
    else if (key == "context_len") cfg.context_len = to_i64(val);
    else if (key == "embed_dim") cfg.embed_dim = to_i64(val);
    else if (key == "depth") cfg.depth = to_i64(val);
    else if (key == "n_heads") cfg.n_heads = to_i64(val);
    else if (key == "kernel_size") cfg.kernel_size = to_i64(val);
    else if (key == "expand_dim") cfg.expand_dim = to_i64(val);
    else if (key == "return_dim") cfg.return_dim = to_i64(val);
    else if (key == "state_dim") cfg.state_dim = to_i64(val);
    else if (key == "action_dim") cfg.action_dim = to_i64(val);
    else if (key == "t_max") cfg.t_max = to_i64(val);
    else if (key == "action_space") {
      const size_t colon = val.find(':');
      if (colon == std::string::npos) {
        throw std::invalid_argument("bad action_space value: " + val);
      }
      cfg.action_space.discrete = val.substr(0, colon) == "discrete";
      cfg.action_space.dim = to_i64(val.substr(colon + 1));
    }
    // unknown keys belong to other writers (train state); ignore
  }
  cfg.validate();
  return cfg;
}

PolicyModel::PolicyModel(ModelConfig config, Uninit) : config_(std::move(config)) {
  config_.validate();
}

PolicyModel::PolicyModel(ModelConfig config, uint64_t init_seed)
    : PolicyModel(std::move(config), Uninit{}) {
  Rng rng(init_seed);
  if (config_.unified()) {
    unified_tok_ = std::make_unique<UnifiedEncoderParams>(
        UnifiedEncoderParams::init(config_.return_dim, config_.state_dim, config_.action_dim,
                                   config_.embed_dim, config_.t_max, rng));
  } else {
    separated_tok_ = std::make_unique<SeparatedEncoderParams>(SeparatedEncoderParams::init(
        config_.state_dim, config_.action_dim, config_.embed_dim, config_.t_max, rng));
  }
  blocks_.reserve(static_cast<size_t>(config_.depth));
  for (int64_t i = 0; i < config_.depth; ++i) {
    if (config_.attention_backbone()) {
      blocks_.push_back(AttentionBlockParams::init(config_.embed_dim, config_.n_heads, rng));
    } else {
      blocks_.push_back(
          GatedConvBlockParams::init(config_.embed_dim, config_.d_e(), config_.kernel_size, rng));
    }
  }
  head_w = Tensor::randn({config_.embed_dim, config_.head_out_dim()}, rng, 0.02, true);
  head_b = Tensor::zeros({config_.head_out_dim()}, true);
}

Tensor PolicyModel::forward(Tape& tape, const Array& rtg, const Array& states,
                            const Array& actions, const std::vector<int64_t>& timesteps) const {
  const int64_t len = static_cast<int64_t>(timesteps.size());
  if (len < 1) throw std::invalid_argument("forward: empty window");
  if (len > config_.context_len) {
    throw std::invalid_argument("forward: window length " + std::to_string(len) +
                                " exceeds model context " + std::to_string(config_.context_len));
  }
  Tensor rtg_t = Tensor::leaf(rtg.shape, rtg.data);
  Tensor states_t = Tensor::leaf(states.shape, states.data);
  Tensor actions_t = Tensor::leaf(actions.shape, actions.data);

  TokenSequence seq;
  if (config_.unified()) {
    seq = encode_unified(tape, rtg_t, states_t, actions_t, timesteps, *unified_tok_);
  } else {
    seq = encode_separated(tape, rtg_t, states_t, actions_t, timesteps, *separated_tok_);
  }
  Tensor mixed = run_stack(tape, seq.tokens, blocks_);
  Tensor read = gather_rows(tape, mixed, seq.action_positions);
  return add(tape, matmul(tape, read, head_w), head_b);
}

Tensor PolicyModel::loss(Tape& tape, const Tensor& predictions, const Array& target_actions,
                         const std::vector<double>& mask) const {
  const int64_t len = predictions.dim(0);
  if (config_.action_space.discrete) {
    const int64_t n = config_.action_space.dim;
    double count = 0.0;
    for (double m : mask) count += m;
    if (count <= 0.0) throw std::invalid_argument("loss: all steps masked out");
    std::vector<int64_t> targets(static_cast<size_t>(len));
    std::vector<double> weights(static_cast<size_t>(len));
    for (int64_t t = 0; t < len; ++t) {
      const double* row = target_actions.data.data() + t * n;
      targets[static_cast<size_t>(t)] =
          std::distance(row, std::max_element(row, row + n));
      weights[static_cast<size_t>(t)] = mask[static_cast<size_t>(t)] / count;
    }
    return cross_entropy_rows(tape, predictions, targets, weights);
  }
  Tensor target = Tensor::leaf(target_actions.shape, target_actions.data);
  return masked_mse(tape, predictions, target, mask);
}

std::vector<NamedParam> PolicyModel::params() {
  std::vector<NamedParam> out;
  if (unified_tok_) unified_tok_->collect_params("tok", out);
  if (separated_tok_) separated_tok_->collect_params("tok", out);
  for (size_t i = 0; i < blocks_.size(); ++i) {
    const std::string prefix = "block" + std::to_string(i);
    std::visit([&](auto& b) { b.collect_params(prefix, out); }, blocks_[i]);
  }
  out.push_back({"head.w", head_w});
  out.push_back({"head.b", head_b});
  return out;
}

std::vector<NamedParam> PolicyModel::params() const {
  return const_cast<PolicyModel*>(this)->params();
}

int64_t PolicyModel::count_params() const {
  int64_t total = 0;
  for (const NamedParam& p : params()) total += p.value.numel();
  return total;
}

void PolicyModel::save(const std::string& path, const std::string& extra_config) const {
  std::string config_text = config_.to_config_text();
  config_text += extra_config;
  save_checkpoint(path, params(), config_text);
}

PolicyModel PolicyModel::load_file(const std::string& path) {
  return from_checkpoint(load_checkpoint(path));
}

PolicyModel PolicyModel::from_checkpoint(const Checkpoint& ckpt) {
  ModelConfig cfg = ModelConfig::from_config_text(ckpt.config_text);
  PolicyModel model(cfg, /*init_seed=*/0);
  for (NamedParam& p : model.params()) {
    const Array* arr = ckpt.find(p.name);
    if (arr == nullptr) {
      throw std::runtime_error("checkpoint missing parameter '" + p.name + "'");
    }
    if (arr->shape != p.value.shape()) {
      throw std::runtime_error("checkpoint parameter '" + p.name + "' has shape " +
                               shape_str(arr->shape) + ", expected " + shape_str(p.value.shape()));
    }
    std::copy(arr->data.begin(), arr->data.end(), p.value.data());
  }
  return model;
}

PolicyModel PolicyModel::grad_isolated_clone() const {
  PolicyModel clone(config_, Uninit{});
  auto alias = [](const Tensor& t) { return t.grad_isolated_alias(); };
  if (unified_tok_) {
    auto& src = *unified_tok_;
    clone.unified_tok_ = std::make_unique<UnifiedEncoderParams>(UnifiedEncoderParams{
        alias(src.w_r), alias(src.b_r), alias(src.w_f), alias(src.b_f),
        alias(src.timestep_embed), alias(src.ln_gain), alias(src.ln_bias)});
  }
  if (separated_tok_) {
    auto& src = *separated_tok_;
    clone.separated_tok_ = std::make_unique<SeparatedEncoderParams>(SeparatedEncoderParams{
        alias(src.w_r), alias(src.b_r), alias(src.w_s), alias(src.b_s), alias(src.w_a),
        alias(src.b_a), alias(src.timestep_embed), alias(src.ln_gain), alias(src.ln_bias)});
  }
  clone.blocks_.reserve(blocks_.size());
  for (const BlockParams& b : blocks_) {
    if (const auto* attn = std::get_if<AttentionBlockParams>(&b)) {
      AttentionBlockParams c;
      c.ln1_gain = alias(attn->ln1_gain);
      c.ln1_bias = alias(attn->ln1_bias);
      c.w_q = alias(attn->w_q);
      c.b_q = alias(attn->b_q);
      c.w_k = alias(attn->w_k);
      c.b_k = alias(attn->b_k);
      c.w_v = alias(attn->w_v);
      c.b_v = alias(attn->b_v);
      c.w_o = alias(attn->w_o);
      c.b_o = alias(attn->b_o);
      c.ln2_gain = alias(attn->ln2_gain);
      c.ln2_bias = alias(attn->ln2_bias);
      c.w_ff1 = alias(attn->w_ff1);
      c.b_ff1 = alias(attn->b_ff1);
      c.w_ff2 = alias(attn->w_ff2);
      c.b_ff2 = alias(attn->b_ff2);
      c.n_heads = attn->n_heads;
      clone.blocks_.push_back(std::move(c));
    } else {
      const auto& conv = std::get<GatedConvBlockParams>(b);
      GatedConvBlockParams c;
      c.ln_gain = alias(conv.ln_gain);
      c.ln_bias = alias(conv.ln_bias);
      c.w_in = alias(conv.w_in);
      c.b_in = alias(conv.b_in);
      c.kernels = alias(conv.kernels);
      c.conv_bias = alias(conv.conv_bias);
      c.w_o = alias(conv.w_o);
      c.b_o = alias(conv.b_o);
      clone.blocks_.push_back(std::move(c));
    }
  }
  clone.head_w = alias(head_w);
  clone.head_b = alias(head_b);
  return clone;
}

}  // namespace utr
