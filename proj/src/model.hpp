#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rng.hpp"
#include "tensor.hpp"

namespace canmt {

struct ModelConfig {
  int layers_enc = 2;
  int layers_dec = 2;
  int layers_est = 2;
  int model_dim = 64;
  int heads = 4;
  int ffn_dim = 128;
  int32_t src_vocab_size = 0;
  int32_t tgt_vocab_size = 0;
  int max_len = 64;
  double dropout_rate = 0.1;
  double label_smoothing = 0.1;
  bool share_embeddings = false;

  void validate() const;
  /// Trainable parameter count (the sinusoidal position tables are not
  /// learned and not counted).
  int64_t parameter_count() const;

  /// Canonical key=value text, one pair per line, fixed order. Used both by
  /// the checkpoint header and the train-config parser.
  std::string to_kv_text() const;
  static ModelConfig from_kv_text(const std::string& text);

  bool operator==(const ModelConfig&) const = default;
};

/// Named parameter tensors. The decoder entries are shared by both streams
/// by construction: there is exactly one tensor per decoder weight and both
/// streams resolve it through the same name.
class ParameterStore {
 public:
  ParameterStore() = default;

  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  bool contains(const std::string& name) const { return params_.count(name) != 0; }
  void insert(const std::string& name, Tensor t);

  /// Names in sorted order (iteration order is deterministic).
  std::vector<std::string> names() const;
  /// Names of trainable tensors only.
  std::vector<std::string> trainable_names() const;
  int64_t trainable_parameter_count() const;

  const std::map<std::string, Tensor>& entries() const { return params_; }

  void zero_all_grads();

 private:
  std::map<std::string, Tensor> params_;
};

/// Xavier-uniform weights, zero biases, unit layer-norm gains; deterministic
/// per (config, seed). Also places the non-learned sinusoidal position table
/// under "pos_table".
ParameterStore init_parameters(const ModelConfig& config, uint64_t seed);

struct AttentionMask {
  enum class Kind { Causal, Full };
  Kind kind = Kind::Full;
  // allowed(query i, key j) = (kind permits (i, j)) && key_real[j]
  std::vector<uint8_t> key_real;

  std::vector<uint8_t> materialize(int64_t query_len) const;
};

/// Dropout context threaded through the forward passes. Inactive by default
/// (inference); training and D-TP passes activate it.
struct DropoutCtx {
  bool enabled = false;
  double rate = 0.0;
  Rng* rng = nullptr;
};

// All model operations are pure functions of (params, inputs) when dropout
// is off. Sequences carry BOS/EOS and may carry trailing PADs; `*_real`
// flags mark real positions (1) versus padding (0).

/// Transformer encoder: C_X of shape [len(src_ids), d].
Tensor encode(const ParameterStore& params, const ModelConfig& cfg, std::span<const int32_t> src_ids,
              std::span<const uint8_t> src_real, const DropoutCtx& dropout_ctx = {});

/// Translation stream: causal self-attention, cross-attention to C_X,
/// projection to the target vocabulary. tgt_in must begin with BOS.
Tensor decode_translation(const ParameterStore& params, const ModelConfig& cfg,
                          std::span<const int32_t> tgt_in, std::span<const uint8_t> tgt_real,
                          const Tensor& c_x, std::span<const uint8_t> src_real,
                          const DropoutCtx& dropout_ctx = {});

/// Reconstruction stream: full (non-causal) self-attention over the target,
/// no cross-attention anywhere in the signature or the computation. Returns
/// the last-layer states C_Y of shape [len(tgt_ids), d].
Tensor decode_reconstruction(const ParameterStore& params, const ModelConfig& cfg,
                             std::span<const int32_t> tgt_ids, std::span<const uint8_t> tgt_real,
                             const DropoutCtx& dropout_ctx = {});

/// Self-estimator: causal self-attention over the shifted source,
/// cross-attention to C_Y, projection to the source vocabulary.
Tensor estimate(const ParameterStore& params, const ModelConfig& cfg, std::span<const int32_t> src_in,
                std::span<const uint8_t> src_real, const Tensor& c_y,
                std::span<const uint8_t> tgt_real, const DropoutCtx& dropout_ctx = {});

struct JointBatch {
  // Rectangular ids with BOS/EOS and PAD tails, plus real-position flags.
  std::vector<std::vector<int32_t>> src_ids;
  std::vector<std::vector<int32_t>> tgt_ids;
  std::vector<std::vector<uint8_t>> src_real;
  std::vector<std::vector<uint8_t>> tgt_real;
};

struct JointLoss {
  Tensor forward_loss;         // token-mean label-smoothed CE, translation
  Tensor reconstruction_loss;  // token-mean label-smoothed CE, estimator
  int64_t target_tokens = 0;
  int64_t source_tokens = 0;
};

/// Teacher-forced joint objective over one padded batch: the translation
/// stream predicts Y from X, the estimator predicts X from the
/// reconstruction states of the ground-truth Y. Total loss is the plain sum
/// of the two components.
JointLoss joint_forward(const ParameterStore& params, const ModelConfig& cfg, const JointBatch& batch,
                        double label_smoothing, const DropoutCtx& dropout_ctx = {});

// Decoder-side views used by scoring and search.

/// Per-step target-vocabulary logits for a prefix (BOS-led, no EOS yet).
Tensor translation_logits_full(const ParameterStore& params, const ModelConfig& cfg,
                               std::span<const int32_t> tgt_prefix, const Tensor& c_x,
                               std::span<const uint8_t> src_real, const DropoutCtx& dropout_ctx = {});

}  // namespace canmt
