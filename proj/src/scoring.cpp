#include "scoring.hpp"

#include <string>

#include "error.hpp"
#include "metrics.hpp"
#include "vocab.hpp"

namespace canmt {

namespace {

struct PaddedSeq {
  std::vector<int32_t> ids;       // BOS surface... EOS PAD*
  std::vector<uint8_t> real;
  std::vector<int32_t> shift_in;  // ids without the last position
  std::vector<int32_t> shift_out; // ids without BOS; PADs stay PAD
};

PaddedSeq make_padded(std::span<const int32_t> surface, int64_t pad_to, const char* what,
                      bool allow_empty = false) {
  if (surface.empty() && !allow_empty) {
    fail(ErrorCode::InvalidArgument, std::string(what) + ": empty sequence");
  }
  PaddedSeq s;
  s.ids.reserve(surface.size() + 2);
  s.ids.push_back(Vocabulary::kBos);
  s.ids.insert(s.ids.end(), surface.begin(), surface.end());
  s.ids.push_back(Vocabulary::kEos);
  s.real.assign(s.ids.size(), 1);
  while (static_cast<int64_t>(s.ids.size()) < pad_to) {
    s.ids.push_back(Vocabulary::kPad);
    s.real.push_back(0);
  }
  s.shift_in.assign(s.ids.begin(), s.ids.end() - 1);
  s.shift_out.assign(s.ids.begin() + 1, s.ids.end());
  return s;
}

std::vector<std::string> ids_to_strings(std::span<const int32_t> ids) {
  std::vector<std::string> out;
  out.reserve(ids.size());
  for (int32_t id : ids) out.push_back(std::to_string(id));
  return out;
}

}  // namespace

double mean_target_log_prob(const Tensor& logits, std::span<const int32_t> targets, int32_t pad_id) {
  if (logits.rank() != 2 || static_cast<int64_t>(targets.size()) != logits.dim(0)) {
    fail(ErrorCode::ShapeMismatch, "mean_target_log_prob: targets do not align with logits");
  }
  Tensor lsm = log_softmax(logits, 1);
  int64_t v = lsm.dim(1);
  double total = 0.0;
  int64_t count = 0;
  for (int64_t t = 0; t < lsm.dim(0); ++t) {
    int32_t target = targets[static_cast<size_t>(t)];
    if (target == pad_id) continue;
    if (target < 0 || target >= v) {
      fail(ErrorCode::InvalidArgument, "mean_target_log_prob: target id out of vocabulary");
    }
    total += lsm.values()[static_cast<size_t>(t * v + target)];
    ++count;
  }
  if (count == 0) fail(ErrorCode::InvalidArgument, "mean_target_log_prob: no real targets");
  return total / static_cast<double>(count);
}

namespace {

QualityDetail quality_detail_impl(const ParameterStore& params, const ModelConfig& cfg,
                                  std::span<const int32_t> src_surface,
                                  std::span<const int32_t> hyp_surface, int64_t pad_src,
                                  int64_t pad_tgt, bool allow_empty_hyp) {
  PaddedSeq src = make_padded(src_surface, pad_src, "quality_score source");
  // An empty hypothesis still carries BOS/EOS states for the estimator.
  PaddedSeq hyp = make_padded(hyp_surface, pad_tgt, "quality_score hypothesis", allow_empty_hyp);

  QualityDetail detail;
  detail.c_y = decode_reconstruction(params, cfg, hyp.ids, hyp.real);
  Tensor logits = estimate(params, cfg, src.shift_in,
                           std::span<const uint8_t>(src.real.data(), src.shift_in.size()), detail.c_y,
                           hyp.real);
  detail.q = mean_target_log_prob(logits, src.shift_out, Vocabulary::kPad);
  return detail;
}

}  // namespace

QualityDetail quality_score_detail(const ParameterStore& params, const ModelConfig& cfg,
                                   std::span<const int32_t> src_surface,
                                   std::span<const int32_t> hyp_surface, int64_t pad_src,
                                   int64_t pad_tgt) {
  return quality_detail_impl(params, cfg, src_surface, hyp_surface, pad_src, pad_tgt, false);
}

double quality_score(const ParameterStore& params, const ModelConfig& cfg,
                     std::span<const int32_t> src_surface, std::span<const int32_t> hyp_surface,
                     int64_t pad_src, int64_t pad_tgt) {
  return quality_score_detail(params, cfg, src_surface, hyp_surface, pad_src, pad_tgt).q;
}

double tp_score(const ParameterStore& params, const ModelConfig& cfg, std::span<const int32_t> src_surface,
                std::span<const int32_t> hyp_surface, const DropoutCtx& dc) {
  PaddedSeq src = make_padded(src_surface, 0, "tp_score source");
  PaddedSeq hyp = make_padded(hyp_surface, 0, "tp_score hypothesis");
  Tensor c_x = encode(params, cfg, src.ids, src.real, dc);
  Tensor logits = decode_translation(params, cfg, hyp.shift_in,
                                     std::span<const uint8_t>(hyp.real.data(), hyp.shift_in.size()), c_x,
                                     src.real, dc);
  return mean_target_log_prob(logits, hyp.shift_out, Vocabulary::kPad);
}

double dtp_score(const ParameterStore& params, const ModelConfig& cfg, std::span<const int32_t> src_surface,
                 std::span<const int32_t> hyp_surface, int passes, double rate, uint64_t seed) {
  if (passes < 1) fail(ErrorCode::InvalidArgument, "dtp_score: need at least one pass");
  if (rate < 0.0 || rate >= 1.0) fail(ErrorCode::InvalidArgument, "dtp_score: rate must be in [0, 1)");
  if (rate == 0.0) return tp_score(params, cfg, src_surface, hyp_surface);
  Rng base(seed);
  double total = 0.0;
  for (int p = 0; p < passes; ++p) {
    Rng pass_rng = base.split(static_cast<uint64_t>(p) + 1);
    DropoutCtx dc;
    dc.enabled = true;
    dc.rate = rate;
    dc.rng = &pass_rng;
    total += tp_score(params, cfg, src_surface, hyp_surface, dc);
  }
  return total / static_cast<double>(passes);
}

double rtt_sentbleu(const ParameterStore& backward_params, const ModelConfig& backward_cfg,
                    std::span<const int32_t> src_surface, std::span<const int32_t> hyp_surface,
                    const BeamConfig& beam_cfg) {
  if (src_surface.empty() || hyp_surface.empty()) {
    fail(ErrorCode::InvalidArgument, "rtt_sentbleu: empty input");
  }
  std::vector<BeamHypothesis> hyps = beam_decode(backward_params, backward_cfg, hyp_surface, beam_cfg);
  std::vector<std::string> reconstruction = ids_to_strings(hyps.front().ids);
  std::vector<std::string> original = ids_to_strings(src_surface);
  return sentence_bleu(reconstruction, original);
}

ScoredTranslation translate_and_score(const ParameterStore& params, const ModelConfig& cfg,
                                      std::span<const int32_t> src_surface, const BeamConfig& beam_cfg) {
  std::vector<BeamHypothesis> hyps = beam_decode(params, cfg, src_surface, beam_cfg);
  const BeamHypothesis& best = hyps.front();
  ScoredTranslation out;
  out.hypothesis = best.ids;
  out.model_score = best.score;
  out.quality = quality_detail_impl(params, cfg, src_surface, out.hypothesis, 0, 0, true).q;
  return out;
}

}  // namespace canmt
