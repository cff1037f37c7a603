#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "rng.hpp"

namespace canmt {

/// Sample Pearson correlation. Throws ErrorCode::InvalidArgument when
/// n < 2 or either series has zero variance (never silently 0).
double pearson(std::span<const double> x, std::span<const double> y);

/// Spearman rank correlation with averaged ranks on ties.
double spearman(std::span<const double> x, std::span<const double> y);

/// Average ranks (1-based, ties averaged).
std::vector<double> average_ranks(std::span<const double> x);

/// Token-level Levenshtein distance with unit edit costs.
int64_t edit_distance(std::span<const std::string> a, std::span<const std::string> b);

/// Sentence BLEU in [0, 100]: n-grams up to 4, orders the hypothesis is too
/// short for are dropped from the geometric mean, the i-th zero-match order
/// is smoothed to a 1/2^i count, brevity penalty exp(1 - |ref|/|hyp|) when
/// the hypothesis is shorter. Empty hypothesis scores 0.
double sentence_bleu(std::span<const std::string> hyp, std::span<const std::string> ref);

/// Corpus BLEU over aligned hypothesis/reference lists with the same
/// smoothing rules applied to the pooled counts.
double corpus_bleu(const std::vector<std::vector<std::string>>& hyps,
                   const std::vector<std::vector<std::string>>& refs);

/// Normalized quality-drift sampling weights for target level I over levels
/// 1..4: weight(k) proportional to 1/(|I-k|+1).
std::vector<double> quality_level_weights(int target_level);

/// Draws n item indices with replacement: level by quality_level_weights,
/// then uniform within the level. `level_items[k]` holds the item indices of
/// level k+1; every level must be non-empty.
std::vector<size_t> quality_biased_sample(const std::vector<std::vector<size_t>>& level_items,
                                          int target_level, int64_t n, uint64_t seed);

/// Z-normalizes both series over their shared index (subtract mean, divide
/// by sample standard deviation) and returns the elementwise sum.
std::vector<double> znorm_combine(std::span<const double> a, std::span<const double> b);

struct BinRow {
  double mean_pred = 0.0;
  double mean_oracle = 0.0;
  int64_t count = 0;
};

/// Sorts by predicted score ascending and splits into `bins` contiguous
/// near-equal groups (remainder spread to the earliest bins).
std::vector<BinRow> bin_report(std::span<const double> pred, std::span<const double> oracle, int bins = 5);

}  // namespace canmt
