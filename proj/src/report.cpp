#include "report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <json.hpp>
#include <map>

#include "error.hpp"

namespace canmt {

namespace {

std::string join_tokens(const TokenSeq& tokens) {
  std::string out;
  for (size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += tokens[i];
  }
  return out;
}

std::vector<int32_t> surface_ids(const Vocabulary& vocab, const TokenSeq& tokens) {
  std::vector<int32_t> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(vocab.id_of(t));
  return ids;
}

bool is_constant(std::span<const double> x) {
  for (double v : x) {
    if (v != x[0]) return false;
  }
  return true;
}

std::string canonical_method(const std::string& name) {
  if (name == "canmt-q" || name == "q") return "canmt-q";
  if (name == "tp") return "tp";
  if (name == "dtp") return "dtp";
  if (name == "rtt") return "rtt";
  if (name == "sentbleu" || name == "sentbleu-vs-ref") return "sentbleu";
  fail(ErrorCode::InvalidArgument, "unknown scoring method '" + name + "'");
}

}  // namespace

std::vector<int> levels_by_oracle_quartiles(const DegradedSet& set) {
  std::vector<double> sorted;
  sorted.reserve(set.size());
  for (const auto& d : set) sorted.push_back(d.oracle_norm);
  std::sort(sorted.begin(), sorted.end());
  auto quantile = [&](double q) {
    size_t idx = static_cast<size_t>(q * static_cast<double>(sorted.size() - 1));
    return sorted[idx];
  };
  double q1 = quantile(0.25), q2 = quantile(0.5), q3 = quantile(0.75);
  std::vector<int> levels;
  levels.reserve(set.size());
  for (const auto& d : set) {
    int level = d.oracle_norm <= q1 ? 1 : d.oracle_norm <= q2 ? 2 : d.oracle_norm <= q3 ? 3 : 4;
    levels.push_back(level);
  }
  return levels;
}

EvaluationReport evaluate_degraded_set(const Checkpoint& model, const Vocabulary& src_vocab,
                                       const Vocabulary& tgt_vocab, const DegradedSet& set,
                                       const EvalOptions& opts, const Checkpoint* backward) {
  if (set.empty()) fail(ErrorCode::InvalidArgument, "evaluate: empty degraded set");
  verify_fingerprints(model, src_vocab.fingerprint(), tgt_vocab.fingerprint());

  EvaluationReport report;
  report.n = static_cast<int64_t>(set.size());

  std::vector<double> oracle;
  std::vector<double> oracle_norm;
  oracle.reserve(set.size());
  for (const auto& d : set) {
    oracle.push_back(d.oracle);
    oracle_norm.push_back(d.oracle_norm);
  }
  bool oracle_const = is_constant(oracle);

  for (const std::string& raw_name : opts.methods) {
    std::string method = canonical_method(raw_name);
    if (method == "rtt" && backward == nullptr) {
      fail(ErrorCode::InvalidArgument, "method 'rtt' requires a backward model checkpoint");
    }
    if (method == "rtt") {
      // The backward model translates target-language text back to source.
      verify_fingerprints(*backward, tgt_vocab.fingerprint(), src_vocab.fingerprint());
    }

    MethodReport mr;
    mr.method = method;
    mr.n = report.n;
    mr.scores.reserve(set.size());
    for (const auto& item : set) {
      std::vector<int32_t> src = surface_ids(src_vocab, item.source);
      std::vector<int32_t> hyp = surface_ids(tgt_vocab, item.hypothesis);
      double score = 0.0;
      if (method == "canmt-q") {
        score = quality_score(model.params, model.config, src, hyp);
      } else if (method == "tp") {
        score = tp_score(model.params, model.config, src, hyp);
      } else if (method == "dtp") {
        uint64_t item_seed = Rng(opts.seed).split(static_cast<uint64_t>(item.id) + 1).next_u64();
        score = dtp_score(model.params, model.config, src, hyp, opts.dtp_passes, opts.dtp_rate, item_seed);
      } else if (method == "rtt") {
        score = rtt_sentbleu(backward->params, backward->config, src, hyp, opts.rtt_beam);
      } else {  // sentbleu vs reference
        score = sentence_bleu(item.hypothesis, item.reference);
      }
      mr.scores.push_back(score);
    }

    mr.constant_oracle = oracle_const;
    mr.constant_pred = is_constant(mr.scores);
    if (!mr.constant_oracle && !mr.constant_pred) {
      mr.pearson_vs_oracle = pearson(mr.scores, oracle);
      mr.spearman_vs_oracle = spearman(mr.scores, oracle);
    }
    if (report.n >= opts.bins) {
      mr.bins = bin_report(mr.scores, oracle_norm, opts.bins);
    }
    report.methods.push_back(std::move(mr));
  }

  for (size_t a = 0; a < report.methods.size(); ++a) {
    for (size_t b = a + 1; b < report.methods.size(); ++b) {
      CombinationReport cr;
      cr.method_a = report.methods[a].method;
      cr.method_b = report.methods[b].method;
      if (oracle_const || report.methods[a].constant_pred || report.methods[b].constant_pred) {
        cr.degenerate = true;
      } else {
        std::vector<double> combined = znorm_combine(report.methods[a].scores, report.methods[b].scores);
        if (is_constant(combined)) {
          cr.degenerate = true;
        } else {
          cr.pearson_vs_oracle = pearson(combined, oracle);
        }
      }
      report.combinations.push_back(std::move(cr));
    }
  }
  return report;
}

namespace {

nlohmann::ordered_json method_to_json(const MethodReport& mr) {
  nlohmann::ordered_json j;
  j["method"] = mr.method;
  j["n"] = mr.n;
  j["constant_oracle"] = mr.constant_oracle;
  j["constant_pred"] = mr.constant_pred;
  j["pearson"] = mr.pearson_vs_oracle.has_value() ? nlohmann::ordered_json(*mr.pearson_vs_oracle)
                                                  : nlohmann::ordered_json(nullptr);
  j["spearman"] = mr.spearman_vs_oracle.has_value() ? nlohmann::ordered_json(*mr.spearman_vs_oracle)
                                                    : nlohmann::ordered_json(nullptr);
  j["bins"] = nlohmann::ordered_json::array();
  for (const BinRow& row : mr.bins) {
    j["bins"].push_back({{"mean_pred", row.mean_pred}, {"mean_oracle", row.mean_oracle}, {"count", row.count}});
  }
  return j;
}

}  // namespace

void write_report_json(const EvaluationReport& report, const std::string& path) {
  nlohmann::ordered_json j;
  j["n"] = report.n;
  j["methods"] = nlohmann::ordered_json::array();
  for (const MethodReport& mr : report.methods) j["methods"].push_back(method_to_json(mr));
  j["combinations"] = nlohmann::ordered_json::array();
  for (const CombinationReport& cr : report.combinations) {
    nlohmann::ordered_json c;
    c["methods"] = {cr.method_a, cr.method_b};
    c["degenerate"] = cr.degenerate;
    c["pearson"] = cr.pearson_vs_oracle.has_value() ? nlohmann::ordered_json(*cr.pearson_vs_oracle)
                                                    : nlohmann::ordered_json(nullptr);
    j["combinations"].push_back(c);
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::Io, "cannot open report for writing: " + path);
  out << j.dump(2) << "\n";
  if (!out) fail(ErrorCode::Io, "failed writing report: " + path);
}

void write_report_csv(const EvaluationReport& report, const std::string& prefix) {
  {
    std::ofstream out(prefix + ".csv", std::ios::binary);
    if (!out) fail(ErrorCode::Io, "cannot open report CSV for writing: " + prefix + ".csv");
    out << "method,n,pearson,spearman,constant_oracle,constant_pred\n";
    char buf[160];
    for (const MethodReport& mr : report.methods) {
      std::snprintf(buf, sizeof(buf), "%s,%lld,%.9g,%.9g,%d,%d\n", mr.method.c_str(),
                    static_cast<long long>(mr.n), mr.pearson_vs_oracle.value_or(std::nan("")),
                    mr.spearman_vs_oracle.value_or(std::nan("")), mr.constant_oracle ? 1 : 0,
                    mr.constant_pred ? 1 : 0);
      out << buf;
    }
  }
  {
    std::ofstream out(prefix + "-bins.csv", std::ios::binary);
    if (!out) fail(ErrorCode::Io, "cannot open bins CSV for writing: " + prefix + "-bins.csv");
    out << "method,bin,mean_pred,mean_oracle,count\n";
    char buf[160];
    for (const MethodReport& mr : report.methods) {
      for (size_t b = 0; b < mr.bins.size(); ++b) {
        std::snprintf(buf, sizeof(buf), "%s,%zu,%.9g,%.9g,%lld\n", mr.method.c_str(), b + 1,
                      mr.bins[b].mean_pred, mr.bins[b].mean_oracle, static_cast<long long>(mr.bins[b].count));
        out << buf;
      }
    }
  }
}

void write_scores_tsv(const DegradedSet& set, const std::vector<double>& scores, const std::string& path) {
  if (set.size() != scores.size()) fail(ErrorCode::InvalidArgument, "write_scores_tsv: size mismatch");
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::Io, "cannot open scores file for writing: " + path);
  char buf[48];
  for (size_t i = 0; i < set.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%.9g", scores[i]);
    out << set[i].id << '\t' << join_tokens(set[i].source) << '\t' << join_tokens(set[i].hypothesis)
        << '\t' << buf << '\n';
  }
  if (!out) fail(ErrorCode::Io, "failed writing scores file: " + path);
}

std::vector<ScoreRow> load_scores_tsv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::Io, "cannot open scores file: " + path);
  std::vector<ScoreRow> rows;
  std::string line;
  int64_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cols;
    size_t start = 0;
    while (true) {
      size_t tab = line.find('\t', start);
      cols.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    if (cols.size() != 4) {
      fail(ErrorCode::Format, path + ":" + std::to_string(line_no) + ": expected 4 TSV columns");
    }
    ScoreRow row;
    try {
      row.id = std::stoll(cols[0]);
      row.score = std::stod(cols[3]);
    } catch (const std::exception&) {
      fail(ErrorCode::Format, path + ":" + std::to_string(line_no) + ": bad numeric field");
    }
    row.source = cols[1];
    row.hypothesis = cols[2];
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_score_rows(const std::vector<ScoreRow>& rows, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::Io, "cannot open scores file for writing: " + path);
  char buf[48];
  for (const ScoreRow& row : rows) {
    std::snprintf(buf, sizeof(buf), "%.9g", row.score);
    out << row.id << '\t' << row.source << '\t' << row.hypothesis << '\t' << buf << '\n';
  }
  if (!out) fail(ErrorCode::Io, "failed writing scores file: " + path);
}

std::vector<ScoreRow> combine_score_files(const std::string& path_a, const std::string& path_b) {
  std::vector<ScoreRow> a = load_scores_tsv(path_a);
  std::vector<ScoreRow> b = load_scores_tsv(path_b);
  std::map<int64_t, double> b_by_id;
  for (const ScoreRow& row : b) b_by_id[row.id] = row.score;
  std::vector<ScoreRow> joined;
  std::vector<double> xa, xb;
  for (const ScoreRow& row : a) {
    auto it = b_by_id.find(row.id);
    if (it == b_by_id.end()) continue;
    joined.push_back(row);
    xa.push_back(row.score);
    xb.push_back(it->second);
  }
  if (joined.size() < 2) {
    fail(ErrorCode::InvalidArgument, "combine: fewer than 2 shared ids between score files");
  }
  std::vector<double> combined = znorm_combine(xa, xb);
  for (size_t i = 0; i < joined.size(); ++i) joined[i].score = combined[i];
  return joined;
}

}  // namespace canmt
