#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "beam.hpp"
#include "model.hpp"

namespace canmt {

/// Translation plus its self-estimated quality. All sequences here are
/// surface token ids (no BOS/EOS). Scores are natural-log quantities.
struct ScoredTranslation {
  std::vector<int32_t> hypothesis;
  double model_score = 0.0;  // length-penalized beam score
  double quality = 0.0;      // Q in (-inf, 0]
};

/// Mean log-probability of `targets` under per-step logits; pad targets are
/// excluded from the mean. The shared kernel behind Q and TP.
double mean_target_log_prob(const Tensor& logits, std::span<const int32_t> targets, int32_t pad_id);

/// Reconstruction-based self-estimated quality: runs the hypothesis through
/// the reconstruction stream, force-decodes the source through the
/// self-estimator, and averages source-token log-probabilities (EOS counted,
/// BOS not predicted, pads excluded). Dropout off. pad_src/pad_tgt extend the
/// sequences with PADs, which must not change the score.
double quality_score(const ParameterStore& params, const ModelConfig& cfg,
                     std::span<const int32_t> src_surface, std::span<const int32_t> hyp_surface,
                     int64_t pad_src = 0, int64_t pad_tgt = 0);

struct QualityDetail {
  double q = 0.0;
  Tensor c_y;  // reconstruction-stream states fed to the estimator
};
QualityDetail quality_score_detail(const ParameterStore& params, const ModelConfig& cfg,
                                   std::span<const int32_t> src_surface,
                                   std::span<const int32_t> hyp_surface, int64_t pad_src = 0,
                                   int64_t pad_tgt = 0);

/// Length-normalized translation probability of the hypothesis under forced
/// decoding of the translation stream. The dropout context is off for plain
/// TP and active during D-TP passes.
double tp_score(const ParameterStore& params, const ModelConfig& cfg, std::span<const int32_t> src_surface,
                std::span<const int32_t> hyp_surface, const DropoutCtx& dropout_ctx = {});

/// Monte Carlo dropout TP: mean of `passes` stochastic tp_score evaluations,
/// one RNG sub-stream per pass derived from `seed`. rate 0 reduces every
/// pass to plain TP, so it returns that value exactly.
double dtp_score(const ParameterStore& params, const ModelConfig& cfg, std::span<const int32_t> src_surface,
                 std::span<const int32_t> hyp_surface, int passes, double rate, uint64_t seed);

/// Round-trip baseline: beam-decodes the hypothesis through an independently
/// trained backward (target->source) model and reports sentence BLEU of the
/// reconstruction against the original source.
double rtt_sentbleu(const ParameterStore& backward_params, const ModelConfig& backward_cfg,
                    std::span<const int32_t> src_surface, std::span<const int32_t> hyp_surface,
                    const BeamConfig& beam_cfg);

/// Beam-translate then self-score: Y' = top beam hypothesis,
/// Q = quality_score(X, Y'). The reconstruction stream consumes the
/// generated hypothesis, never a reference.
ScoredTranslation translate_and_score(const ParameterStore& params, const ModelConfig& cfg,
                                      std::span<const int32_t> src_surface, const BeamConfig& beam_cfg);

}  // namespace canmt
