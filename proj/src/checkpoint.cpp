#include "checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cinttypes>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "error.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

namespace canmt {

namespace {

constexpr char kMagic[8] = {'C', 'A', 'N', 'M', 'T', 'C', 'P', '1'};
constexpr uint32_t kFormatVersion = 1;

std::string hex64(uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016" PRIx64, v);
  return buf;
}

uint64_t parse_hex64(const std::string& s) {
  uint64_t v = 0;
  if (std::sscanf(s.c_str(), "%" SCNx64, &v) != 1) {
    fail(ErrorCode::Format, "checkpoint: bad fingerprint field '" + s + "'");
  }
  return v;
}

template <typename T>
void write_pod(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
void read_pod(std::istream& in, T* v, const std::string& path) {
  in.read(reinterpret_cast<char*>(v), sizeof(T));
  if (!in) fail(ErrorCode::Format, "corrupt checkpoint (truncated): " + path);
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path, int elem_width) {
  if (elem_width != 4 && elem_width != 8) {
    fail(ErrorCode::InvalidArgument, "checkpoint: element width must be 4 or 8");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::Io, "cannot open checkpoint for writing: " + path);

  std::string header;
  header += "format_version=" + std::to_string(kFormatVersion) + "\n";
  header += "elem_width=" + std::to_string(elem_width) + "\n";
  header += "step=" + std::to_string(ckpt.step) + "\n";
  header += "src_vocab_fp=" + hex64(ckpt.src_vocab_fp) + "\n";
  header += "tgt_vocab_fp=" + hex64(ckpt.tgt_vocab_fp) + "\n";
  header += "corpus_fp=" + hex64(ckpt.corpus_fp) + "\n";
  header += ckpt.config.to_kv_text();

  out.write(kMagic, sizeof(kMagic));
  write_pod(out, static_cast<uint32_t>(header.size()));
  out.write(header.data(), static_cast<std::streamsize>(header.size()));

  const auto& entries = ckpt.params.entries();
  write_pod(out, static_cast<uint64_t>(entries.size()));
  for (const auto& [name, tensor] : entries) {
    write_pod(out, static_cast<uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_pod(out, static_cast<uint32_t>(tensor.rank()));
    for (int64_t ext : tensor.shape()) write_pod(out, ext);
    if (elem_width == 8) {
      out.write(reinterpret_cast<const char*>(tensor.values().data()),
                static_cast<std::streamsize>(tensor.size() * 8));
    } else {
      for (double v : tensor.values()) write_pod(out, static_cast<float>(v));
    }
  }
  if (!out) fail(ErrorCode::Io, "failed writing checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::Io, "cannot open checkpoint: " + path);

  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    fail(ErrorCode::Format, "corrupt checkpoint (bad magic): " + path);
  }
  uint32_t header_len = 0;
  read_pod(in, &header_len, path);
  std::string header(header_len, '\0');
  in.read(header.data(), header_len);
  if (!in) fail(ErrorCode::Format, "corrupt checkpoint (truncated header): " + path);

  Checkpoint ckpt;
  int elem_width = 0;
  std::string config_text;
  std::istringstream hin(header);
  std::string line;
  while (std::getline(hin, line)) {
    size_t eq = line.find('=');
    if (eq == std::string::npos) fail(ErrorCode::Format, "checkpoint: bad header line '" + line + "'");
    std::string key = line.substr(0, eq);
    std::string value = line.substr(eq + 1);
    if (key == "format_version") {
      if (std::stoul(value) != kFormatVersion) {
        fail(ErrorCode::Format, "checkpoint: unsupported format version " + value);
      }
    } else if (key == "elem_width") {
      elem_width = std::stoi(value);
    } else if (key == "step") {
      ckpt.step = std::stoll(value);
    } else if (key == "src_vocab_fp") {
      ckpt.src_vocab_fp = parse_hex64(value);
    } else if (key == "tgt_vocab_fp") {
      ckpt.tgt_vocab_fp = parse_hex64(value);
    } else if (key == "corpus_fp") {
      ckpt.corpus_fp = parse_hex64(value);
    } else {
      config_text += line + "\n";
    }
  }
  if (elem_width != 4 && elem_width != 8) {
    fail(ErrorCode::Format, "checkpoint: missing or bad elem_width");
  }
  ckpt.config = ModelConfig::from_kv_text(config_text);
  ckpt.config.validate();

  uint64_t n_tensors = 0;
  read_pod(in, &n_tensors, path);
  for (uint64_t t = 0; t < n_tensors; ++t) {
    uint32_t name_len = 0;
    read_pod(in, &name_len, path);
    if (name_len == 0 || name_len > 4096) fail(ErrorCode::Format, "corrupt checkpoint (tensor name): " + path);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    if (!in) fail(ErrorCode::Format, "corrupt checkpoint (truncated): " + path);
    uint32_t rank = 0;
    read_pod(in, &rank, path);
    if (rank > 8) fail(ErrorCode::Format, "corrupt checkpoint (tensor rank): " + path);
    Shape shape(rank);
    for (uint32_t r = 0; r < rank; ++r) read_pod(in, &shape[r], path);
    int64_t n = shape_numel(shape);
    if (n <= 0) fail(ErrorCode::Format, "corrupt checkpoint (tensor extents): " + path);
    std::vector<double> values(static_cast<size_t>(n));
    if (elem_width == 8) {
      in.read(reinterpret_cast<char*>(values.data()), n * 8);
      if (!in) fail(ErrorCode::Format, "corrupt checkpoint (truncated): " + path);
    } else {
      for (int64_t i = 0; i < n; ++i) {
        float f = 0.0f;
        read_pod(in, &f, path);
        values[static_cast<size_t>(i)] = static_cast<double>(f);
      }
    }
    bool trainable = name != "pos_table";
    ckpt.params.insert(name, Tensor::from_values(std::move(shape), std::move(values), trainable));
  }
  if (ckpt.params.trainable_parameter_count() != ckpt.config.parameter_count()) {
    fail(ErrorCode::Format, "checkpoint: tensor census does not match its config: " + path);
  }
  return ckpt;
}

void verify_fingerprints(const Checkpoint& ckpt, uint64_t src_vocab_fp, uint64_t tgt_vocab_fp) {
  if (ckpt.src_vocab_fp != src_vocab_fp || ckpt.tgt_vocab_fp != tgt_vocab_fp) {
    fail(ErrorCode::Mismatch, "checkpoint vocabulary fingerprints do not match the supplied vocabularies");
  }
}

ParameterStore average_checkpoints(const std::vector<const Checkpoint*>& ckpts) {
  if (ckpts.empty()) fail(ErrorCode::InvalidArgument, "average_checkpoints: empty list");
  const Checkpoint& first = *ckpts[0];
  for (const Checkpoint* c : ckpts) {
    if (!(c->config == first.config)) {
      fail(ErrorCode::Mismatch, "average_checkpoints: model configs differ");
    }
    if (c->params.names() != first.params.names()) {
      fail(ErrorCode::Mismatch, "average_checkpoints: parameter name-sets differ");
    }
  }
  size_t k = ckpts.size();
  ParameterStore out;
  std::vector<double> addends(k);
  for (const auto& [name, tensor] : first.params.entries()) {
    std::vector<double> mean(static_cast<size_t>(tensor.size()));
    for (int64_t i = 0; i < tensor.size(); ++i) {
      for (size_t c = 0; c < k; ++c) addends[c] = ckpts[c]->params.at(name).values()[static_cast<size_t>(i)];
      std::sort(addends.begin(), addends.end());
      double base = addends[0];
      double dev = 0.0;
      for (double a : addends) dev += a - base;
      mean[static_cast<size_t>(i)] = base + dev / static_cast<double>(k);
    }
    out.insert(name, Tensor::from_values(tensor.shape(), std::move(mean), tensor.requires_grad()));
  }
  return out;
}

}  // namespace canmt
