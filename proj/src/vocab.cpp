#include "vocab.hpp"

#include <fstream>

#include "error.hpp"

namespace canmt {

namespace {
const char* kSpecialSurface[] = {"<pad>", "<bos>", "<eos>", "<unk>"};

uint64_t fnv1a(uint64_t h, const void* data, size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}
}  // namespace

Vocabulary::Vocabulary(std::vector<std::string> tokens_by_rank) {
  tokens_.reserve(tokens_by_rank.size() + kNumSpecials);
  for (int32_t s = 0; s < kNumSpecials; ++s) tokens_.push_back(kSpecialSurface[s]);
  for (auto& t : tokens_by_rank) {
    if (t.empty()) fail(ErrorCode::InvalidArgument, "empty token in vocabulary");
    tokens_.push_back(std::move(t));
  }
  for (int32_t i = 0; i < static_cast<int32_t>(tokens_.size()); ++i) {
    auto [it, inserted] = index_.emplace(tokens_[static_cast<size_t>(i)], i);
    if (!inserted) fail(ErrorCode::InvalidArgument, "duplicate token in vocabulary: " + tokens_[static_cast<size_t>(i)]);
  }
}

int32_t Vocabulary::id_of(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token_of(int32_t id) const {
  if (id < 0 || id >= size()) {
    fail(ErrorCode::InvalidArgument, "token id " + std::to_string(id) + " out of range for vocabulary of size " +
                                         std::to_string(size()));
  }
  return tokens_[static_cast<size_t>(id)];
}

std::vector<int32_t> Vocabulary::encode(std::span<const std::string> tokens) const {
  std::vector<int32_t> ids;
  ids.reserve(tokens.size() + 2);
  ids.push_back(kBos);
  for (const auto& t : tokens) ids.push_back(id_of(t));
  ids.push_back(kEos);
  return ids;
}

std::vector<std::string> Vocabulary::decode(std::span<const int32_t> ids) const {
  std::vector<std::string> tokens;
  tokens.reserve(ids.size());
  for (int32_t id : ids) {
    if (id == kBos || id == kEos || id == kPad) continue;
    tokens.push_back(token_of(id));
  }
  return tokens;
}

void Vocabulary::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::Io, "cannot open vocabulary file for writing: " + path);
  for (int32_t i = kNumSpecials; i < size(); ++i) out << tokens_[static_cast<size_t>(i)] << "\n";
  if (!out) fail(ErrorCode::Io, "failed writing vocabulary file: " + path);
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::Io, "cannot open vocabulary file: " + path);
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) fail(ErrorCode::Format, "empty line in vocabulary file: " + path);
    tokens.push_back(line);
  }
  return Vocabulary(std::move(tokens));
}

uint64_t Vocabulary::fingerprint() const {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& t : tokens_) {
    h = fnv1a(h, t.data(), t.size());
    h = fnv1a(h, "\n", 1);
  }
  return h;
}

std::vector<int32_t> Vocabulary::content_ids() const {
  std::vector<int32_t> ids;
  for (int32_t i = kNumSpecials; i < size(); ++i) ids.push_back(i);
  return ids;
}

}  // namespace canmt
