#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "rng.hpp"
#include "vocab.hpp"

namespace canmt {

using TokenSeq = std::vector<std::string>;

struct SentencePair {
  TokenSeq source;
  TokenSeq target;
};

struct ParallelCorpus {
  std::vector<SentencePair> pairs;
  std::string provenance;  // e.g. "cipher-reverse seed=7"
};

/// Synthetic reversible-translation task family. All tasks draw source
/// sentences uniformly over 40 content tokens with length U[5,15].
///   cipher-reverse: target = reverse(pi(source)), disjoint target vocabulary
///   cipher-only:    target = pi(source)
///   copy:           target = source (shared surface forms)
struct SyntheticSpec {
  std::string task = "cipher-reverse";
  int content_tokens = 40;
  int min_len = 5;
  int max_len = 15;
};

ParallelCorpus gen_synthetic(const SyntheticSpec& spec, int64_t n, uint64_t seed);

/// The cipher permutation used by a (spec, seed) pair: entry i gives the
/// target token index of source token i.
std::vector<int> cipher_permutation(const SyntheticSpec& spec, uint64_t seed);

/// Frequency-then-lexicographic vocabulary over one side of a corpus.
enum class CorpusSide { Source, Target };
Vocabulary build_vocab(const ParallelCorpus& corpus, CorpusSide side);

/// Applies k random edits (substitute / delete / insert, uniform choice and
/// position, in-vocabulary replacement tokens). Never empties the sequence:
/// a delete at length 1 is skipped.
TokenSeq degrade(const TokenSeq& reference, int k, const Vocabulary& vocab, Rng& rng);

struct DegradedItem {
  int64_t id = 0;
  TokenSeq source;
  TokenSeq reference;
  TokenSeq hypothesis;
  int k = 0;             // edits applied
  double oracle = 0.0;   // negative token-level edit distance hyp<->ref
  double oracle_norm = 1.0;  // 1 - dist / max(|hyp|, |ref|)
};

using DegradedSet = std::vector<DegradedItem>;

/// Builds a degraded evaluation suite from (source, reference) pairs.
/// Item i gets k drawn uniformly from [k_min, k_max] on a per-item stream.
DegradedSet build_degraded_set(const ParallelCorpus& corpus, int k_min, int k_max,
                               const Vocabulary& target_vocab, uint64_t seed,
                               int64_t max_items = -1);

// ---- file formats ----

/// One pair per line, single TAB between space-joined source and target.
void save_corpus(const ParallelCorpus& corpus, const std::string& path);
ParallelCorpus load_corpus(const std::string& path);
uint64_t corpus_fingerprint(const ParallelCorpus& corpus);

/// TSV: id, src, ref, hyp, k, oracle, oracle_norm.
void save_degraded_set(const DegradedSet& set, const std::string& path);
DegradedSet load_degraded_set(const std::string& path);

// ---- batching ----

struct EncodedPair {
  std::vector<int32_t> source;  // BOS ... EOS
  std::vector<int32_t> target;
};

struct Batch {
  // Rectangular id matrices, PAD-filled past each sequence's EOS.
  std::vector<std::vector<int32_t>> src_ids;
  std::vector<std::vector<int32_t>> tgt_ids;
  std::vector<std::vector<uint8_t>> src_real;  // 1 = real token, 0 = pad
  std::vector<std::vector<uint8_t>> tgt_real;
  int64_t real_tokens = 0;  // source + target, BOS/EOS included
};

std::vector<EncodedPair> encode_corpus(const ParallelCorpus& corpus, const Vocabulary& src_vocab,
                                       const Vocabulary& tgt_vocab);

/// Length-bucketed, rectangular-padded batches. Each batch holds at most
/// max_tokens real tokens (both sides, BOS/EOS included); a single pair over
/// budget is an error. Pair order is shuffled per seed, then bucketed by
/// length; batch order is shuffled per seed too.
std::vector<Batch> batchify(const std::vector<EncodedPair>& pairs, int64_t max_tokens, uint64_t seed);

}  // namespace canmt
