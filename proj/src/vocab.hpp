#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace canmt {

/// Token/id bijection with fixed special ids. Non-special tokens are
/// assigned ids by (frequency desc, token asc), starting at 4.
class Vocabulary {
 public:
  static constexpr int32_t kPad = 0;
  static constexpr int32_t kBos = 1;
  static constexpr int32_t kEos = 2;
  static constexpr int32_t kUnk = 3;
  static constexpr int32_t kNumSpecials = 4;

  Vocabulary() = default;
  explicit Vocabulary(std::vector<std::string> tokens_by_rank);

  int32_t size() const { return static_cast<int32_t>(tokens_.size()); }

  /// Id for a token; UNK when absent.
  int32_t id_of(const std::string& token) const;
  /// Surface form for an id; throws on out-of-range ids.
  const std::string& token_of(int32_t id) const;

  /// [BOS, ids..., EOS]; unknown tokens map to UNK.
  std::vector<int32_t> encode(std::span<const std::string> tokens) const;
  /// Strips BOS/EOS/PAD; UNK decodes to its surface form.
  std::vector<std::string> decode(std::span<const int32_t> ids) const;

  void save(const std::string& path) const;
  static Vocabulary load(const std::string& path);

  /// FNV-1a over the ordered token list, for checkpoint compatibility checks.
  uint64_t fingerprint() const;

  /// Non-special token ids (for degradation sampling).
  std::vector<int32_t> content_ids() const;

 private:
  std::vector<std::string> tokens_;  // index = id
  std::unordered_map<std::string, int32_t> index_;
};

}  // namespace canmt
