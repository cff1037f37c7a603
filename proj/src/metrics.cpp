#include "metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "error.hpp"

namespace canmt {

namespace {

struct Moments {
  double mean = 0.0;
  double sq_dev = 0.0;  // sum of squared deviations
};

Moments moments(std::span<const double> x) {
  Moments m;
  for (double v : x) m.mean += v;
  m.mean /= static_cast<double>(x.size());
  for (double v : x) m.sq_dev += (v - m.mean) * (v - m.mean);
  return m;
}

void require_aligned(const char* op, std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) {
    fail(ErrorCode::InvalidArgument, std::string(op) + ": series lengths differ (" +
                                         std::to_string(x.size()) + " vs " + std::to_string(y.size()) + ")");
  }
  if (x.size() < 2) fail(ErrorCode::InvalidArgument, std::string(op) + ": need at least 2 points");
}

}  // namespace

double pearson(std::span<const double> x, std::span<const double> y) {
  require_aligned("pearson", x, y);
  Moments mx = moments(x);
  Moments my = moments(y);
  if (mx.sq_dev == 0.0 || my.sq_dev == 0.0) {
    fail(ErrorCode::InvalidArgument, "pearson: zero variance makes the correlation undefined");
  }
  double cov = 0.0;
  for (size_t i = 0; i < x.size(); ++i) cov += (x[i] - mx.mean) * (y[i] - my.mean);
  return cov / std::sqrt(mx.sq_dev * my.sq_dev);
}

std::vector<double> average_ranks(std::span<const double> x) {
  std::vector<size_t> order(x.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) { return x[a] < x[b]; });
  std::vector<double> ranks(x.size());
  size_t i = 0;
  while (i < order.size()) {
    size_t j = i;
    while (j + 1 < order.size() && x[order[j + 1]] == x[order[i]]) ++j;
    double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
    i = j + 1;
  }
  return ranks;
}

double spearman(std::span<const double> x, std::span<const double> y) {
  require_aligned("spearman", x, y);
  std::vector<double> rx = average_ranks(x);
  std::vector<double> ry = average_ranks(y);
  return pearson(rx, ry);
}

int64_t edit_distance(std::span<const std::string> a, std::span<const std::string> b) {
  size_t n = a.size(), m = b.size();
  if (n == 0) return static_cast<int64_t>(m);
  if (m == 0) return static_cast<int64_t>(n);
  std::vector<int64_t> prev(m + 1), cur(m + 1);
  std::iota(prev.begin(), prev.end(), 0);
  for (size_t i = 1; i <= n; ++i) {
    cur[0] = static_cast<int64_t>(i);
    for (size_t j = 1; j <= m; ++j) {
      int64_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

namespace {

constexpr int kMaxOrder = 4;

struct NgramCounts {
  // matches[n-1], totals[n-1] for n-gram order n
  int64_t matches[kMaxOrder] = {0, 0, 0, 0};
  int64_t totals[kMaxOrder] = {0, 0, 0, 0};
  int64_t hyp_len = 0;
  int64_t ref_len = 0;
};

void accumulate_ngrams(std::span<const std::string> hyp, std::span<const std::string> ref, NgramCounts* c) {
  c->hyp_len += static_cast<int64_t>(hyp.size());
  c->ref_len += static_cast<int64_t>(ref.size());
  for (int n = 1; n <= kMaxOrder; ++n) {
    if (static_cast<int64_t>(hyp.size()) < n) continue;
    std::map<std::vector<std::string>, int64_t> ref_grams;
    for (size_t i = 0; i + static_cast<size_t>(n) <= ref.size(); ++i) {
      ++ref_grams[std::vector<std::string>(ref.begin() + static_cast<std::ptrdiff_t>(i),
                                           ref.begin() + static_cast<std::ptrdiff_t>(i) + n)];
    }
    for (size_t i = 0; i + static_cast<size_t>(n) <= hyp.size(); ++i) {
      std::vector<std::string> gram(hyp.begin() + static_cast<std::ptrdiff_t>(i),
                                    hyp.begin() + static_cast<std::ptrdiff_t>(i) + n);
      ++c->totals[n - 1];
      auto it = ref_grams.find(gram);
      if (it != ref_grams.end() && it->second > 0) {
        --it->second;
        ++c->matches[n - 1];
      }
    }
  }
}

double bleu_from_counts(const NgramCounts& c) {
  if (c.hyp_len == 0) return 0.0;
  double log_sum = 0.0;
  int effective_orders = 0;
  double smooth = 1.0;
  for (int n = 1; n <= kMaxOrder; ++n) {
    if (c.totals[n - 1] == 0) continue;  // hypothesis shorter than n everywhere
    ++effective_orders;
    double p;
    if (c.matches[n - 1] > 0) {
      p = static_cast<double>(c.matches[n - 1]) / static_cast<double>(c.totals[n - 1]);
    } else {
      smooth *= 2.0;  // i-th zero-match order counts as 1/2^i
      p = 1.0 / (smooth * static_cast<double>(c.totals[n - 1]));
    }
    log_sum += std::log(p);
  }
  if (effective_orders == 0) return 0.0;
  double bp = 1.0;
  if (c.hyp_len < c.ref_len) {
    bp = std::exp(1.0 - static_cast<double>(c.ref_len) / static_cast<double>(c.hyp_len));
  }
  return 100.0 * bp * std::exp(log_sum / static_cast<double>(effective_orders));
}

}  // namespace

double sentence_bleu(std::span<const std::string> hyp, std::span<const std::string> ref) {
  NgramCounts c;
  accumulate_ngrams(hyp, ref, &c);
  return bleu_from_counts(c);
}

double corpus_bleu(const std::vector<std::vector<std::string>>& hyps,
                   const std::vector<std::vector<std::string>>& refs) {
  if (hyps.size() != refs.size()) {
    fail(ErrorCode::InvalidArgument, "corpus_bleu: hypothesis/reference counts differ");
  }
  if (hyps.empty()) fail(ErrorCode::InvalidArgument, "corpus_bleu: empty corpus");
  NgramCounts c;
  for (size_t i = 0; i < hyps.size(); ++i) accumulate_ngrams(hyps[i], refs[i], &c);
  return bleu_from_counts(c);
}

std::vector<double> quality_level_weights(int target_level) {
  if (target_level < 1 || target_level > 4) {
    fail(ErrorCode::InvalidArgument, "quality_level_weights: target level must be in 1..4");
  }
  std::vector<double> w(4);
  double total = 0.0;
  for (int k = 1; k <= 4; ++k) {
    w[static_cast<size_t>(k - 1)] = 1.0 / static_cast<double>(std::abs(target_level - k) + 1);
    total += w[static_cast<size_t>(k - 1)];
  }
  for (double& v : w) v /= total;
  return w;
}

std::vector<size_t> quality_biased_sample(const std::vector<std::vector<size_t>>& level_items,
                                          int target_level, int64_t n, uint64_t seed) {
  if (level_items.size() != 4) {
    fail(ErrorCode::InvalidArgument, "quality_biased_sample: expected 4 quality levels");
  }
  for (size_t k = 0; k < 4; ++k) {
    if (level_items[k].empty()) {
      fail(ErrorCode::InvalidArgument, "quality_biased_sample: level " + std::to_string(k + 1) + " is empty");
    }
  }
  if (n < 1) fail(ErrorCode::InvalidArgument, "quality_biased_sample: n must be positive");
  std::vector<double> w = quality_level_weights(target_level);
  double cum[4];
  double acc = 0.0;
  for (size_t k = 0; k < 4; ++k) {
    acc += w[k];
    cum[k] = acc;
  }
  cum[3] = 1.0;
  std::vector<size_t> out;
  out.reserve(static_cast<size_t>(n));
  Rng rng(seed);
  for (int64_t i = 0; i < n; ++i) {
    double u = rng.next_double();
    size_t level = 0;
    while (level < 3 && u >= cum[level]) ++level;
    const auto& items = level_items[level];
    out.push_back(items[static_cast<size_t>(rng.next_below(items.size()))]);
  }
  return out;
}

std::vector<double> znorm_combine(std::span<const double> a, std::span<const double> b) {
  require_aligned("znorm_combine", a, b);
  Moments ma = moments(a);
  Moments mb = moments(b);
  if (ma.sq_dev == 0.0 || mb.sq_dev == 0.0) {
    fail(ErrorCode::InvalidArgument, "znorm_combine: zero variance in an input series");
  }
  double sa = std::sqrt(ma.sq_dev / static_cast<double>(a.size() - 1));
  double sb = std::sqrt(mb.sq_dev / static_cast<double>(b.size() - 1));
  std::vector<double> out(a.size());
  for (size_t i = 0; i < a.size(); ++i) {
    out[i] = (a[i] - ma.mean) / sa + (b[i] - mb.mean) / sb;
  }
  return out;
}

std::vector<BinRow> bin_report(std::span<const double> pred, std::span<const double> oracle, int bins) {
  if (pred.size() != oracle.size()) {
    fail(ErrorCode::InvalidArgument, "bin_report: series lengths differ");
  }
  if (bins < 1) fail(ErrorCode::InvalidArgument, "bin_report: bins must be positive");
  if (static_cast<int64_t>(pred.size()) < bins) {
    fail(ErrorCode::InvalidArgument, "bin_report: fewer items than bins");
  }
  std::vector<size_t> order(pred.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) { return pred[a] < pred[b]; });

  int64_t n = static_cast<int64_t>(pred.size());
  int64_t base = n / bins;
  int64_t remainder = n % bins;
  std::vector<BinRow> rows;
  rows.reserve(static_cast<size_t>(bins));
  size_t pos = 0;
  for (int b = 0; b < bins; ++b) {
    int64_t count = base + (b < remainder ? 1 : 0);
    BinRow row;
    row.count = count;
    for (int64_t i = 0; i < count; ++i, ++pos) {
      row.mean_pred += pred[order[pos]];
      row.mean_oracle += oracle[order[pos]];
    }
    row.mean_pred /= static_cast<double>(count);
    row.mean_oracle /= static_cast<double>(count);
    rows.push_back(row);
  }
  return rows;
}

}  // namespace canmt
