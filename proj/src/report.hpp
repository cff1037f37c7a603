#pragma once

#include <optional>
#include <string>
#include <vector>

#include "checkpoint.hpp"
#include "corpus.hpp"
#include "metrics.hpp"
#include "scoring.hpp"

namespace canmt {

struct EvalOptions {
  std::vector<std::string> methods{"canmt-q"};
  int dtp_passes = 30;
  double dtp_rate = 0.1;
  uint64_t seed = 7;
  BeamConfig rtt_beam{};  // beam 4, length penalty 0.6
  int bins = 5;
};

struct MethodReport {
  std::string method;
  int64_t n = 0;
  bool constant_oracle = false;  // degenerate suite: correlation undefined
  bool constant_pred = false;
  std::optional<double> pearson_vs_oracle;
  std::optional<double> spearman_vs_oracle;
  std::vector<BinRow> bins;           // mean oracle in oracle_norm units
  std::vector<double> scores;         // aligned to the degraded set
};

struct CombinationReport {
  std::string method_a;
  std::string method_b;
  std::optional<double> pearson_vs_oracle;
  bool degenerate = false;  // zero-variance input or constant oracle
};

struct EvaluationReport {
  int64_t n = 0;
  std::vector<MethodReport> methods;
  std::vector<CombinationReport> combinations;
};

/// Scores every item of the degraded set with each requested method
/// (canmt-q, tp, dtp, rtt, sentbleu), correlates against the edit-distance
/// oracle, bins against oracle_norm, and z-norm-combines method pairs.
/// `backward` is required iff "rtt" is requested.
EvaluationReport evaluate_degraded_set(const Checkpoint& model, const Vocabulary& src_vocab,
                                       const Vocabulary& tgt_vocab, const DegradedSet& set,
                                       const EvalOptions& opts, const Checkpoint* backward = nullptr);

void write_report_json(const EvaluationReport& report, const std::string& path);
/// Plot-ready mirrors: <prefix>.csv (method summary) and <prefix>-bins.csv.
void write_report_csv(const EvaluationReport& report, const std::string& prefix);

/// Hypothesis/score TSV: id, source, hypothesis, score (natural-log units;
/// BLEU rows are in [0,100]).
void write_scores_tsv(const DegradedSet& set, const std::vector<double>& scores, const std::string& path);

struct ScoreRow {
  int64_t id = 0;
  std::string source;
  std::string hypothesis;
  double score = 0.0;
};
std::vector<ScoreRow> load_scores_tsv(const std::string& path);
void write_score_rows(const std::vector<ScoreRow>& rows, const std::string& path);

/// Z-normalized sum of two aligned score files (matched by id).
std::vector<ScoreRow> combine_score_files(const std::string& path_a, const std::string& path_b);

/// Quality levels 1..4 for degraded items by quartiles of oracle_norm.
std::vector<int> levels_by_oracle_quartiles(const DegradedSet& set);

}  // namespace canmt
