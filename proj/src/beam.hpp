#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "model.hpp"

namespace canmt {

struct BeamConfig {
  int beam_size = 4;
  double length_penalty = 0.6;  // GNMT divisor ((5+|Y|)/6)^alpha
  int max_len = 0;              // generated tokens incl. EOS; 0 = model max_len - 1

  void validate() const;
};

struct BeamHypothesis {
  std::vector<int32_t> ids;  // surface tokens, no BOS/EOS
  double raw_log_prob = 0.0;
  double score = 0.0;  // raw_log_prob / lp(len), the ranking key
  int finished_at = 0;  // completion step, used for tie-breaking
};

/// Scores one decoding step: log-probabilities over the next token given a
/// BOS-led prefix. Implemented by the translation stream for decoding and by
/// hand-built tables in tests.
class StepScorer {
 public:
  virtual ~StepScorer() = default;
  virtual int32_t vocab_size() const = 0;
  virtual std::vector<double> next_log_probs(std::span<const int32_t> prefix) = 0;
};

/// Length penalty ((5+len)/6)^alpha with len counting generated tokens
/// including EOS.
double length_penalty_divisor(int64_t len, double alpha);

/// Standard beam search. Every step, hypotheses that propose EOS move to the
/// finished pool and the best beam_size non-EOS continuations stay live; the
/// search stops once the pool holds beam_size hypotheses or the length cap
/// forces EOS. Finished hypotheses are ranked by penalized score, ties broken
/// by earlier completion then lexicographic ids. Always returns at least one
/// hypothesis. PAD and BOS are never proposed.
std::vector<BeamHypothesis> beam_search(StepScorer& scorer, const BeamConfig& cfg);

/// Translation-stream scorer over an encoded source.
class TranslationScorer : public StepScorer {
 public:
  TranslationScorer(const ParameterStore& params, const ModelConfig& cfg,
                    std::span<const int32_t> src_surface_ids);

  int32_t vocab_size() const override { return cfg_.tgt_vocab_size; }
  std::vector<double> next_log_probs(std::span<const int32_t> prefix) override;

 private:
  const ParameterStore& params_;
  const ModelConfig& cfg_;
  Tensor c_x_;
  std::vector<uint8_t> src_real_;
};

/// Beam-decodes one source sentence; hypotheses come back as surface ids.
std::vector<BeamHypothesis> beam_decode(const ParameterStore& params, const ModelConfig& cfg,
                                        std::span<const int32_t> src_surface_ids, const BeamConfig& beam_cfg);

}  // namespace canmt
