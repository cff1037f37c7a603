#include "corpus.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "error.hpp"
#include "metrics.hpp"

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

TokenSeq split_tokens(const std::string& text) {
  TokenSeq tokens;
  std::istringstream in(text);
  std::string tok;
  while (in >> tok) tokens.push_back(tok);
  return tokens;
}

std::string content_token(const char* prefix, int i) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%s%02d", prefix, i);
  return buf;
}

uint64_t fnv1a_str(uint64_t h, const std::string& s) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

std::vector<int> cipher_permutation(const SyntheticSpec& spec, uint64_t seed) {
  std::vector<int> pi(static_cast<size_t>(spec.content_tokens));
  std::iota(pi.begin(), pi.end(), 0);
  // Fisher-Yates on a dedicated sub-stream so the map is independent of n.
  Rng rng = Rng(seed).split(0x706921ULL);
  for (int i = spec.content_tokens - 1; i > 0; --i) {
    int j = static_cast<int>(rng.next_below(static_cast<uint64_t>(i + 1)));
    std::swap(pi[static_cast<size_t>(i)], pi[static_cast<size_t>(j)]);
  }
  return pi;
}

ParallelCorpus gen_synthetic(const SyntheticSpec& spec, int64_t n, uint64_t seed) {
  if (n <= 0) fail(ErrorCode::InvalidArgument, "gen_synthetic: n must be positive");
  if (spec.task != "cipher-reverse" && spec.task != "cipher-only" && spec.task != "copy") {
    fail(ErrorCode::InvalidArgument, "gen_synthetic: unknown task '" + spec.task + "'");
  }
  if (spec.min_len < 1 || spec.max_len < spec.min_len) {
    fail(ErrorCode::InvalidArgument, "gen_synthetic: bad length range");
  }
  std::vector<int> pi = cipher_permutation(spec, seed);

  ParallelCorpus corpus;
  corpus.provenance = spec.task + " seed=" + std::to_string(seed);
  corpus.pairs.reserve(static_cast<size_t>(n));
  Rng base(seed);
  for (int64_t i = 0; i < n; ++i) {
    Rng item = base.split(static_cast<uint64_t>(i) + 1);
    int len = static_cast<int>(item.uniform_int(spec.min_len, spec.max_len));
    SentencePair pair;
    pair.source.reserve(static_cast<size_t>(len));
    pair.target.reserve(static_cast<size_t>(len));
    std::vector<int> src_idx(static_cast<size_t>(len));
    for (int j = 0; j < len; ++j) {
      src_idx[static_cast<size_t>(j)] = static_cast<int>(item.next_below(static_cast<uint64_t>(spec.content_tokens)));
      pair.source.push_back(content_token("s", src_idx[static_cast<size_t>(j)]));
    }
    if (spec.task == "copy") {
      pair.target = pair.source;
    } else {
      for (int j = 0; j < len; ++j) pair.target.push_back(content_token("t", pi[static_cast<size_t>(src_idx[static_cast<size_t>(j)])]));
      if (spec.task == "cipher-reverse") std::reverse(pair.target.begin(), pair.target.end());
    }
    corpus.pairs.push_back(std::move(pair));
  }
  return corpus;
}

Vocabulary build_vocab(const ParallelCorpus& corpus, CorpusSide side) {
  if (corpus.pairs.empty()) fail(ErrorCode::InvalidArgument, "build_vocab: empty corpus");
  std::map<std::string, int64_t> freq;
  for (const auto& pair : corpus.pairs) {
    const TokenSeq& seq = side == CorpusSide::Source ? pair.source : pair.target;
    for (const auto& t : seq) ++freq[t];
  }
  std::vector<std::pair<std::string, int64_t>> entries(freq.begin(), freq.end());
  std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  std::vector<std::string> tokens;
  tokens.reserve(entries.size());
  for (auto& e : entries) tokens.push_back(std::move(e.first));
  return Vocabulary(std::move(tokens));
}

TokenSeq degrade(const TokenSeq& reference, int k, const Vocabulary& vocab, Rng& rng) {
  if (k < 0) fail(ErrorCode::InvalidArgument, "degrade: k must be non-negative");
  std::vector<int32_t> content = vocab.content_ids();
  if (content.empty()) fail(ErrorCode::InvalidArgument, "degrade: vocabulary has no content tokens");
  TokenSeq hyp = reference;
  for (int e = 0; e < k; ++e) {
    uint64_t kind = rng.next_below(3);
    if (kind == 0) {  // substitute
      size_t pos = static_cast<size_t>(rng.next_below(hyp.size()));
      hyp[pos] = vocab.token_of(content[static_cast<size_t>(rng.next_below(content.size()))]);
    } else if (kind == 1) {  // delete
      if (hyp.size() <= 1) continue;
      size_t pos = static_cast<size_t>(rng.next_below(hyp.size()));
      hyp.erase(hyp.begin() + static_cast<std::ptrdiff_t>(pos));
    } else {  // insert
      size_t pos = static_cast<size_t>(rng.next_below(hyp.size() + 1));
      hyp.insert(hyp.begin() + static_cast<std::ptrdiff_t>(pos),
                 vocab.token_of(content[static_cast<size_t>(rng.next_below(content.size()))]));
    }
  }
  return hyp;
}

DegradedSet build_degraded_set(const ParallelCorpus& corpus, int k_min, int k_max,
                               const Vocabulary& target_vocab, uint64_t seed, int64_t max_items) {
  if (k_min < 0 || k_max < k_min) fail(ErrorCode::InvalidArgument, "build_degraded_set: bad k range");
  int64_t n = static_cast<int64_t>(corpus.pairs.size());
  if (max_items >= 0) n = std::min(n, max_items);
  DegradedSet set;
  set.reserve(static_cast<size_t>(n));
  Rng base(seed);
  for (int64_t i = 0; i < n; ++i) {
    Rng item = base.split(static_cast<uint64_t>(i) + 1);
    DegradedItem d;
    d.id = i;
    d.source = corpus.pairs[static_cast<size_t>(i)].source;
    d.reference = corpus.pairs[static_cast<size_t>(i)].target;
    d.k = static_cast<int>(item.uniform_int(k_min, k_max));
    d.hypothesis = degrade(d.reference, d.k, target_vocab, item);
    int64_t dist = edit_distance(d.hypothesis, d.reference);
    d.oracle = -static_cast<double>(dist);
    int64_t longer = std::max(d.hypothesis.size(), d.reference.size());
    d.oracle_norm = longer == 0 ? 1.0 : 1.0 - static_cast<double>(dist) / static_cast<double>(longer);
    set.push_back(std::move(d));
  }
  return set;
}

void save_corpus(const ParallelCorpus& corpus, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::Io, "cannot open corpus file for writing: " + path);
  for (const auto& pair : corpus.pairs) {
    out << join_tokens(pair.source) << '\t' << join_tokens(pair.target) << '\n';
  }
  if (!out) fail(ErrorCode::Io, "failed writing corpus file: " + path);
}

ParallelCorpus load_corpus(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::Io, "cannot open corpus file: " + path);
  ParallelCorpus corpus;
  corpus.provenance = "file:" + path;
  std::string line;
  int64_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    size_t tab = line.find('\t');
    if (tab == std::string::npos) {
      fail(ErrorCode::Format, path + ":" + std::to_string(line_no) + ": missing TAB separator");
    }
    SentencePair pair;
    pair.source = split_tokens(line.substr(0, tab));
    pair.target = split_tokens(line.substr(tab + 1));
    if (pair.source.empty() || pair.target.empty()) {
      fail(ErrorCode::Format, path + ":" + std::to_string(line_no) + ": empty side in pair");
    }
    corpus.pairs.push_back(std::move(pair));
  }
  return corpus;
}

uint64_t corpus_fingerprint(const ParallelCorpus& corpus) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& pair : corpus.pairs) {
    h = fnv1a_str(h, join_tokens(pair.source));
    h = fnv1a_str(h, "\t");
    h = fnv1a_str(h, join_tokens(pair.target));
    h = fnv1a_str(h, "\n");
  }
  return h;
}

void save_degraded_set(const DegradedSet& set, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::Io, "cannot open degraded-set file for writing: " + path);
  char buf[64];
  for (const auto& d : set) {
    std::snprintf(buf, sizeof(buf), "%.9g", d.oracle_norm);
    out << d.id << '\t' << join_tokens(d.source) << '\t' << join_tokens(d.reference) << '\t'
        << join_tokens(d.hypothesis) << '\t' << d.k << '\t' << static_cast<int64_t>(d.oracle) << '\t'
        << buf << '\n';
  }
  if (!out) fail(ErrorCode::Io, "failed writing degraded-set file: " + path);
}

DegradedSet load_degraded_set(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::Io, "cannot open degraded-set file: " + path);
  DegradedSet set;
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
    if (cols.size() != 7) {
      fail(ErrorCode::Format, path + ":" + std::to_string(line_no) + ": expected 7 TSV columns, got " +
                                  std::to_string(cols.size()));
    }
    DegradedItem d;
    try {
      d.id = std::stoll(cols[0]);
      d.k = std::stoi(cols[4]);
      d.oracle = std::stod(cols[5]);
      d.oracle_norm = std::stod(cols[6]);
    } catch (const std::exception&) {
      fail(ErrorCode::Format, path + ":" + std::to_string(line_no) + ": bad numeric field");
    }
    d.source = split_tokens(cols[1]);
    d.reference = split_tokens(cols[2]);
    d.hypothesis = split_tokens(cols[3]);
    set.push_back(std::move(d));
  }
  return set;
}

std::vector<EncodedPair> encode_corpus(const ParallelCorpus& corpus, const Vocabulary& src_vocab,
                                       const Vocabulary& tgt_vocab) {
  std::vector<EncodedPair> out;
  out.reserve(corpus.pairs.size());
  for (const auto& pair : corpus.pairs) {
    out.push_back({src_vocab.encode(pair.source), tgt_vocab.encode(pair.target)});
  }
  return out;
}

std::vector<Batch> batchify(const std::vector<EncodedPair>& pairs, int64_t max_tokens, uint64_t seed) {
  if (pairs.empty()) fail(ErrorCode::InvalidArgument, "batchify: empty pair list");
  std::vector<size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng = Rng(seed).split(0xba7c4ULL);
  for (size_t i = order.size() - 1; i > 0; --i) {
    size_t j = static_cast<size_t>(rng.next_below(i + 1));
    std::swap(order[i], order[j]);
  }
  auto pair_tokens = [&](size_t idx) {
    return static_cast<int64_t>(pairs[idx].source.size() + pairs[idx].target.size());
  };
  // Stable sort keeps the shuffled order within equal lengths, so batch
  // composition varies with the seed while staying deterministic.
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    return pair_tokens(a) > pair_tokens(b);
  });

  std::vector<std::vector<size_t>> groups;
  int64_t budget_used = 0;
  for (size_t idx : order) {
    int64_t cost = pair_tokens(idx);
    if (cost > max_tokens) {
      fail(ErrorCode::InvalidArgument, "batchify: pair of " + std::to_string(cost) +
                                           " tokens exceeds max_tokens=" + std::to_string(max_tokens));
    }
    if (groups.empty() || budget_used + cost > max_tokens) {
      groups.emplace_back();
      budget_used = 0;
    }
    groups.back().push_back(idx);
    budget_used += cost;
  }
  for (size_t i = groups.size() - 1; i > 0; --i) {
    size_t j = static_cast<size_t>(rng.next_below(i + 1));
    std::swap(groups[i], groups[j]);
  }

  std::vector<Batch> batches;
  batches.reserve(groups.size());
  for (const auto& group : groups) {
    Batch b;
    size_t max_src = 0, max_tgt = 0;
    for (size_t idx : group) {
      max_src = std::max(max_src, pairs[idx].source.size());
      max_tgt = std::max(max_tgt, pairs[idx].target.size());
    }
    for (size_t idx : group) {
      std::vector<int32_t> s = pairs[idx].source;
      std::vector<int32_t> t = pairs[idx].target;
      std::vector<uint8_t> sm(max_src, 0), tm(max_tgt, 0);
      std::fill_n(sm.begin(), s.size(), uint8_t{1});
      std::fill_n(tm.begin(), t.size(), uint8_t{1});
      b.real_tokens += static_cast<int64_t>(s.size() + t.size());
      s.resize(max_src, Vocabulary::kPad);
      t.resize(max_tgt, Vocabulary::kPad);
      b.src_ids.push_back(std::move(s));
      b.tgt_ids.push_back(std::move(t));
      b.src_real.push_back(std::move(sm));
      b.tgt_real.push_back(std::move(tm));
    }
    batches.push_back(std::move(b));
  }
  return batches;
}

}  // namespace canmt
