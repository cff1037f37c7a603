#include "beam.hpp"

#include <algorithm>
#include <cmath>

#include "error.hpp"
#include "vocab.hpp"

namespace canmt {

void BeamConfig::validate() const {
  if (beam_size < 1) fail(ErrorCode::InvalidArgument, "beam config: beam_size must be >= 1");
  if (length_penalty < 0.0) fail(ErrorCode::InvalidArgument, "beam config: length penalty must be >= 0");
  if (max_len < 0) fail(ErrorCode::InvalidArgument, "beam config: max_len must be >= 0");
}

double length_penalty_divisor(int64_t len, double alpha) {
  return std::pow((5.0 + static_cast<double>(len)) / 6.0, alpha);
}

namespace {

struct LiveBeam {
  std::vector<int32_t> prefix;  // BOS-led
  double log_prob = 0.0;
};

bool better_hypothesis(const BeamHypothesis& a, const BeamHypothesis& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.finished_at != b.finished_at) return a.finished_at < b.finished_at;
  return a.ids < b.ids;
}

}  // namespace

std::vector<BeamHypothesis> beam_search(StepScorer& scorer, const BeamConfig& cfg) {
  cfg.validate();
  if (cfg.max_len < 1) fail(ErrorCode::InvalidArgument, "beam_search: max_len must be resolved to >= 1");
  int32_t vocab = scorer.vocab_size();

  std::vector<LiveBeam> live;
  live.push_back({{Vocabulary::kBos}, 0.0});
  std::vector<BeamHypothesis> finished;

  auto finish = [&](const LiveBeam& beam, double eos_log_prob, int step) {
    BeamHypothesis hyp;
    hyp.ids.assign(beam.prefix.begin() + 1, beam.prefix.end());
    hyp.raw_log_prob = beam.log_prob + eos_log_prob;
    hyp.finished_at = step;
    hyp.score = hyp.raw_log_prob / length_penalty_divisor(step, cfg.length_penalty);
    finished.push_back(std::move(hyp));
  };

  for (int step = 1; step <= cfg.max_len && !live.empty(); ++step) {
    std::vector<std::vector<double>> rows;
    rows.reserve(live.size());
    for (const LiveBeam& beam : live) rows.push_back(scorer.next_log_probs(beam.prefix));

    if (step == cfg.max_len) {
      for (size_t b = 0; b < live.size(); ++b) finish(live[b], rows[b][Vocabulary::kEos], step);
      break;
    }

    struct Candidate {
      double log_prob;
      size_t beam;
      int32_t token;
    };
    std::vector<Candidate> expansions;
    expansions.reserve(live.size() * static_cast<size_t>(vocab));
    for (size_t b = 0; b < live.size(); ++b) {
      for (int32_t v = 0; v < vocab; ++v) {
        if (v == Vocabulary::kPad || v == Vocabulary::kBos) continue;
        expansions.push_back({live[b].log_prob + rows[b][static_cast<size_t>(v)], b, v});
      }
    }
    std::sort(expansions.begin(), expansions.end(), [](const Candidate& a, const Candidate& b) {
      if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
      if (a.token != b.token) return a.token < b.token;
      return a.beam < b.beam;
    });

    // An EOS candidate finishes only when it ranks inside the beam; live
    // slots refill with the best non-EOS continuations.
    std::vector<LiveBeam> next;
    next.reserve(static_cast<size_t>(cfg.beam_size));
    for (size_t i = 0; i < expansions.size(); ++i) {
      bool within_beam_rank = i < static_cast<size_t>(cfg.beam_size);
      const Candidate& cand = expansions[i];
      if (cand.token == Vocabulary::kEos) {
        if (within_beam_rank) finish(live[cand.beam], rows[cand.beam][Vocabulary::kEos], step);
      } else if (static_cast<int>(next.size()) < cfg.beam_size) {
        LiveBeam nb;
        nb.prefix = live[cand.beam].prefix;
        nb.prefix.push_back(cand.token);
        nb.log_prob = cand.log_prob;
        next.push_back(std::move(nb));
      }
      if (!within_beam_rank && static_cast<int>(next.size()) >= cfg.beam_size) break;
    }
    live = std::move(next);
    if (static_cast<int>(finished.size()) >= cfg.beam_size) break;
  }

  if (finished.empty()) fail(ErrorCode::InvalidArgument, "beam_search: no hypothesis produced");
  std::sort(finished.begin(), finished.end(), better_hypothesis);
  return finished;
}

TranslationScorer::TranslationScorer(const ParameterStore& params, const ModelConfig& cfg,
                                     std::span<const int32_t> src_surface_ids)
    : params_(params), cfg_(cfg) {
  if (src_surface_ids.empty()) fail(ErrorCode::InvalidArgument, "beam_decode: empty source");
  std::vector<int32_t> src_full;
  src_full.reserve(src_surface_ids.size() + 2);
  src_full.push_back(Vocabulary::kBos);
  src_full.insert(src_full.end(), src_surface_ids.begin(), src_surface_ids.end());
  src_full.push_back(Vocabulary::kEos);
  src_real_.assign(src_full.size(), 1);
  c_x_ = encode(params_, cfg_, src_full, src_real_);
}

std::vector<double> TranslationScorer::next_log_probs(std::span<const int32_t> prefix) {
  Tensor logits = translation_logits_full(params_, cfg_, prefix, c_x_, src_real_);
  Tensor lsm = log_softmax(logits, 1);
  int64_t last = lsm.dim(0) - 1;
  const double* row = lsm.values().data() + last * lsm.dim(1);
  return std::vector<double>(row, row + lsm.dim(1));
}

std::vector<BeamHypothesis> beam_decode(const ParameterStore& params, const ModelConfig& cfg,
                                        std::span<const int32_t> src_surface_ids,
                                        const BeamConfig& beam_cfg) {
  BeamConfig resolved = beam_cfg;
  if (resolved.max_len == 0) resolved.max_len = cfg.max_len - 1;
  // The BOS-led prefix must stay within the model's position table.
  resolved.max_len = std::min(resolved.max_len, cfg.max_len - 1);
  TranslationScorer scorer(params, cfg, src_surface_ids);
  return beam_search(scorer, resolved);
}

}  // namespace canmt
