#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "checkpoint.hpp"
#include "corpus.hpp"
#include "model.hpp"

namespace canmt {

struct TrainConfig {
  double lr_factor = 2.0;
  int warmup_steps = 400;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.98;
  double adam_eps = 1e-9;
  int64_t max_tokens = 2000;
  int64_t max_steps = 1000;
  int64_t checkpoint_every = 200;
  uint64_t seed = 1;
  double label_smoothing = 0.1;
  double dropout_rate = 0.1;
  bool forward_only = false;  // plain encoder-decoder baseline: trains on the
                              // translation loss alone

  void validate() const;
  std::string to_kv_text() const;
};

/// Inverse-square-root warmup schedule:
/// factor * d^-0.5 * min(step^-0.5, step * warmup^-1.5). step >= 1.
double lr_at(int64_t step, int model_dim, int warmup_steps, double factor);

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
};

struct TrainState {
  int64_t step = 0;
  std::map<std::string, AdamState> moments;
  Rng rng{0};
  std::vector<double> loss_history;  // forward + reconstruction per step
};

/// One bias-corrected Adam update over every trainable tensor in the store.
/// Tensors without a gradient slot are an error; call after backward().
void adam_step(ParameterStore& params, TrainState& state, const TrainConfig& cfg, double lr);

struct LossPoint {
  int64_t step = 0;
  double lr = 0.0;
  double loss_fwd = 0.0;
  double loss_rec = 0.0;
};

struct TrainResult {
  Checkpoint final_checkpoint;
  std::vector<Checkpoint> checkpoints;  // periodic snapshots, final included
  std::vector<LossPoint> curve;
};

/// Joint training of forward translation and backward reconstruction over
/// token-bucketed batches. Deterministic per (corpus, configs, seed). When
/// out_dir is non-empty, writes ckpt-<step>.bin / ckpt-final.bin and
/// loss.csv (`step,lr,loss_fwd,loss_rec`) there.
TrainResult train(const ParallelCorpus& corpus, const Vocabulary& src_vocab, const Vocabulary& tgt_vocab,
                  const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                  const std::string& out_dir = "");

void save_loss_curve(const std::vector<LossPoint>& curve, const std::string& path);

}  // namespace canmt
