#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "model.hpp"

namespace canmt {

/// Model snapshot plus the fingerprints of the corpus/vocabularies it was
/// trained with. The file format is self-describing: an ASCII key=value
/// header (format version, element width, step, fingerprints, model config)
/// followed by per-tensor records (name, rank, little-endian 64-bit extents,
/// little-endian IEEE-754 elements of the declared width).
struct Checkpoint {
  ModelConfig config;
  ParameterStore params;
  int64_t step = 0;
  uint64_t src_vocab_fp = 0;
  uint64_t tgt_vocab_fp = 0;
  uint64_t corpus_fp = 0;
};

/// elem_width is 8 (double, lossless) or 4 (float32, rounds at storage).
void save_checkpoint(const Checkpoint& ckpt, const std::string& path, int elem_width = 8);
Checkpoint load_checkpoint(const std::string& path);

/// Errors unless the checkpoint was built against the given vocabularies.
void verify_fingerprints(const Checkpoint& ckpt, uint64_t src_vocab_fp, uint64_t tgt_vocab_fp);

/// Elementwise arithmetic mean of k snapshots with identical configs and
/// name-sets. Per coordinate the addends are summed in sorted order, so the
/// result is exactly invariant under permutation of the list and averaging
/// k identical stores reproduces them bit-for-bit.
ParameterStore average_checkpoints(const std::vector<const Checkpoint*>& ckpts);

}  // namespace canmt
