#pragma once

#include <memory>
#include <string>
#include <vector>

#include "utr/blocks.hpp"
#include "utr/checkpoint.hpp"
#include "utr/tokenizer.hpp"

namespace utr {

enum class ModelKind { DT, UDT, UDC };

std::string model_kind_name(ModelKind kind);
ModelKind model_kind_from_name(const std::string& name);

struct ActionSpace {
  bool discrete = false;
  // continuous: action vector width; discrete: number of actions (inputs are
  // one-hot of this width, head emits this many logits)
  int64_t dim = 1;
};

struct ModelConfig {
  ModelKind kind = ModelKind::UDC;
  int64_t context_len = 16;
  int64_t embed_dim = 64;
  int64_t depth = 3;
  int64_t n_heads = 4;     // attention backbones
  int64_t kernel_size = 4; // UDC
  int64_t expand_dim = 0;  // UDC inner width d_e; 0 means 2*embed_dim
  int64_t return_dim = 32; // d_r of the gated return embedding
  int64_t state_dim = 1;
  int64_t action_dim = 1;  // input representation width (== action_space.dim)
  ActionSpace action_space;
  int64_t t_max = 64;

  void validate() const;
  bool unified() const { return kind != ModelKind::DT; }
  bool attention_backbone() const { return kind != ModelKind::UDC; }
  int64_t d_e() const { return expand_dim > 0 ? expand_dim : 2 * embed_dim; }
  int64_t head_out_dim() const { return action_space.dim; }
  // token count the mixer actually sees for a window of length L
  int64_t effective_seq_len() const { return unified() ? context_len : 3 * context_len; }

  std::string to_config_text() const;
  static ModelConfig from_config_text(const std::string& text);
};

// Tokenizer + mixer stack + linear action head, one of three kinds:
//   UDT: unified tokens + attention blocks
//   UDC: unified tokens + gated conv blocks
//   DT:  separated (R,s,a) tokens + attention blocks
class PolicyModel {
 public:
  PolicyModel(ModelConfig config, uint64_t init_seed);

  // One sequence window. Inputs shorter than context_len are accepted
  // (callers left-pad for training); longer ones are a usage error.
  // Returns [len, head_out_dim] predictions, one per step.
  Tensor forward(Tape& tape, const Array& rtg, const Array& states, const Array& actions,
                 const std::vector<int64_t>& timesteps) const;

  // Continuous: masked mean squared error. Discrete: masked mean cross
  // entropy (targets = argmax of the one-hot action rows).
  Tensor loss(Tape& tape, const Tensor& predictions, const Array& target_actions,
              const std::vector<double>& mask) const;

  const ModelConfig& config() const { return config_; }
  std::vector<NamedParam> params();
  std::vector<NamedParam> params() const;
  int64_t count_params() const;

  void save(const std::string& path, const std::string& extra_config = "") const;
  static PolicyModel load_file(const std::string& path);
  static PolicyModel from_checkpoint(const Checkpoint& ckpt);

  // Shares parameter values with this model but owns separate grad buffers;
  // used by data-parallel training workers.
  PolicyModel grad_isolated_clone() const;

 private:
  struct Uninit {};
  PolicyModel(ModelConfig config, Uninit);

  ModelConfig config_;
  std::unique_ptr<UnifiedEncoderParams> unified_tok_;
  std::unique_ptr<SeparatedEncoderParams> separated_tok_;
  std::vector<BlockParams> blocks_;
  Tensor head_w, head_b;
};

}  // namespace utr
