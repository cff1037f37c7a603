#include "model.hpp"

#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "error.hpp"
#include "vocab.hpp"

namespace canmt {

namespace {

std::string kv_line(const char* key, const std::string& value) {
  return std::string(key) + "=" + value + "\n";
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

uint64_t name_hash(const std::string& s) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

void ModelConfig::validate() const {
  if (layers_enc < 1 || layers_dec < 1 || layers_est < 1) {
    fail(ErrorCode::InvalidArgument, "model config: layer counts must be positive");
  }
  if (model_dim < 1 || ffn_dim < 1 || heads < 1) {
    fail(ErrorCode::InvalidArgument, "model config: dimensions must be positive");
  }
  if (model_dim % heads != 0) {
    fail(ErrorCode::InvalidArgument, "model config: model_dim " + std::to_string(model_dim) +
                                         " not divisible by heads " + std::to_string(heads));
  }
  if (src_vocab_size <= Vocabulary::kNumSpecials || tgt_vocab_size <= Vocabulary::kNumSpecials) {
    fail(ErrorCode::InvalidArgument, "model config: vocabulary sizes must exceed the special-token count");
  }
  if (max_len < 3) fail(ErrorCode::InvalidArgument, "model config: max_len too small");
  if (dropout_rate < 0.0 || dropout_rate >= 1.0) {
    fail(ErrorCode::InvalidArgument, "model config: dropout_rate must be in [0, 1)");
  }
  if (label_smoothing < 0.0 || label_smoothing >= 1.0) {
    fail(ErrorCode::InvalidArgument, "model config: label_smoothing must be in [0, 1)");
  }
  if (share_embeddings && src_vocab_size != tgt_vocab_size) {
    fail(ErrorCode::InvalidArgument, "model config: share_embeddings requires equal vocabulary sizes");
  }
}

int64_t ModelConfig::parameter_count() const {
  int64_t d = model_dim;
  int64_t attn = 4 * (d * d + d);
  int64_t ln = 2 * d;
  int64_t ffn = d * ffn_dim + ffn_dim + ffn_dim * d + d;
  int64_t enc_layer = attn + 2 * ln + ffn;
  int64_t dec_layer = 2 * attn + 3 * ln + ffn;
  int64_t total = layers_enc * enc_layer + layers_dec * dec_layer + layers_est * dec_layer + 3 * ln;
  if (share_embeddings) {
    total += static_cast<int64_t>(src_vocab_size) * d;  // one table, tied projections
  } else {
    total += static_cast<int64_t>(src_vocab_size) * d + static_cast<int64_t>(tgt_vocab_size) * d;
    total += static_cast<int64_t>(src_vocab_size) * d + static_cast<int64_t>(tgt_vocab_size) * d;
  }
  return total;
}

std::string ModelConfig::to_kv_text() const {
  std::string out;
  out += kv_line("layers_enc", std::to_string(layers_enc));
  out += kv_line("layers_dec", std::to_string(layers_dec));
  out += kv_line("layers_est", std::to_string(layers_est));
  out += kv_line("model_dim", std::to_string(model_dim));
  out += kv_line("heads", std::to_string(heads));
  out += kv_line("ffn_dim", std::to_string(ffn_dim));
  out += kv_line("src_vocab_size", std::to_string(src_vocab_size));
  out += kv_line("tgt_vocab_size", std::to_string(tgt_vocab_size));
  out += kv_line("max_len", std::to_string(max_len));
  out += kv_line("dropout_rate", fmt_double(dropout_rate));
  out += kv_line("label_smoothing", fmt_double(label_smoothing));
  out += kv_line("share_embeddings", share_embeddings ? "1" : "0");
  return out;
}

ModelConfig ModelConfig::from_kv_text(const std::string& text) {
  ModelConfig cfg;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    size_t eq = line.find('=');
    if (eq == std::string::npos) fail(ErrorCode::Format, "model config: bad line '" + line + "'");
    std::string key = line.substr(0, eq);
    std::string value = line.substr(eq + 1);
    try {
      if (key == "layers_enc") cfg.layers_enc = std::stoi(value);
      else if (key == "layers_dec") cfg.layers_dec = std::stoi(value);
      else if (key == "layers_est") cfg.layers_est = std::stoi(value);
      else if (key == "model_dim") cfg.model_dim = std::stoi(value);
      else if (key == "heads") cfg.heads = std::stoi(value);
      else if (key == "ffn_dim") cfg.ffn_dim = std::stoi(value);
      else if (key == "src_vocab_size") cfg.src_vocab_size = std::stoi(value);
      else if (key == "tgt_vocab_size") cfg.tgt_vocab_size = std::stoi(value);
      else if (key == "max_len") cfg.max_len = std::stoi(value);
      else if (key == "dropout_rate") cfg.dropout_rate = std::stod(value);
      else if (key == "label_smoothing") cfg.label_smoothing = std::stod(value);
      else if (key == "share_embeddings") cfg.share_embeddings = value != "0";
      else fail(ErrorCode::Format, "model config: unknown key '" + key + "'");
    } catch (const Error&) {
      throw;
    } catch (const std::exception&) {
      fail(ErrorCode::Format, "model config: bad value for '" + key + "'");
    }
  }
  return cfg;
}

Tensor& ParameterStore::at(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) fail(ErrorCode::InvalidArgument, "parameter store: no tensor named '" + name + "'");
  return it->second;
}

const Tensor& ParameterStore::at(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) fail(ErrorCode::InvalidArgument, "parameter store: no tensor named '" + name + "'");
  return it->second;
}

void ParameterStore::insert(const std::string& name, Tensor t) {
  auto [it, inserted] = params_.emplace(name, std::move(t));
  if (!inserted) fail(ErrorCode::InvalidArgument, "parameter store: duplicate tensor name '" + name + "'");
}

std::vector<std::string> ParameterStore::names() const {
  std::vector<std::string> out;
  out.reserve(params_.size());
  for (const auto& [name, t] : params_) out.push_back(name);
  return out;
}

std::vector<std::string> ParameterStore::trainable_names() const {
  std::vector<std::string> out;
  for (const auto& [name, t] : params_) {
    if (t.requires_grad()) out.push_back(name);
  }
  return out;
}

int64_t ParameterStore::trainable_parameter_count() const {
  int64_t n = 0;
  for (const auto& [name, t] : params_) {
    if (t.requires_grad()) n += t.size();
  }
  return n;
}

void ParameterStore::zero_all_grads() {
  for (auto& [name, t] : params_) t.zero_grad();
}

namespace {

Tensor xavier_uniform(Shape shape, Rng rng) {
  double fan_in = static_cast<double>(shape[0]);
  double fan_out = static_cast<double>(shape[1]);
  double limit = std::sqrt(6.0 / (fan_in + fan_out));
  int64_t n = shape_numel(shape);
  std::vector<double> values(static_cast<size_t>(n));
  for (double& v : values) v = (2.0 * rng.next_double() - 1.0) * limit;
  return Tensor::from_values(std::move(shape), std::move(values), true);
}

void add_attention_block(ParameterStore* store, const std::string& prefix, int d, uint64_t seed) {
  for (const char* part : {"wq", "wk", "wv", "wo"}) {
    std::string name = prefix + "." + part;
    store->insert(name, xavier_uniform({d, d}, Rng(seed).split(name_hash(name))));
  }
  for (const char* part : {"bq", "bk", "bv", "bo"}) {
    store->insert(prefix + "." + part, Tensor::zeros({d}, true));
  }
}

void add_layer_norm(ParameterStore* store, const std::string& prefix, int d) {
  store->insert(prefix + ".gain", Tensor::full({d}, 1.0, true));
  store->insert(prefix + ".bias", Tensor::zeros({d}, true));
}

void add_ffn(ParameterStore* store, const std::string& prefix, int d, int ffn, uint64_t seed) {
  std::string w1 = prefix + ".w1";
  std::string w2 = prefix + ".w2";
  store->insert(w1, xavier_uniform({d, ffn}, Rng(seed).split(name_hash(w1))));
  store->insert(prefix + ".b1", Tensor::zeros({ffn}, true));
  store->insert(w2, xavier_uniform({ffn, d}, Rng(seed).split(name_hash(w2))));
  store->insert(prefix + ".b2", Tensor::zeros({d}, true));
}

std::string src_embed_name(const ModelConfig& cfg) { return cfg.share_embeddings ? "embed" : "src_embed"; }
std::string tgt_embed_name(const ModelConfig& cfg) { return cfg.share_embeddings ? "embed" : "tgt_embed"; }
std::string out_src_name(const ModelConfig& cfg) { return cfg.share_embeddings ? "embed" : "out_proj_src"; }
std::string out_tgt_name(const ModelConfig& cfg) { return cfg.share_embeddings ? "embed" : "out_proj_tgt"; }

}  // namespace

ParameterStore init_parameters(const ModelConfig& config, uint64_t seed) {
  config.validate();
  ParameterStore store;
  int d = config.model_dim;

  if (config.share_embeddings) {
    store.insert("embed", xavier_uniform({config.src_vocab_size, d}, Rng(seed).split(name_hash("embed"))));
  } else {
    store.insert("src_embed",
                 xavier_uniform({config.src_vocab_size, d}, Rng(seed).split(name_hash("src_embed"))));
    store.insert("tgt_embed",
                 xavier_uniform({config.tgt_vocab_size, d}, Rng(seed).split(name_hash("tgt_embed"))));
    store.insert("out_proj_src",
                 xavier_uniform({config.src_vocab_size, d}, Rng(seed).split(name_hash("out_proj_src"))));
    store.insert("out_proj_tgt",
                 xavier_uniform({config.tgt_vocab_size, d}, Rng(seed).split(name_hash("out_proj_tgt"))));
  }

  for (int i = 0; i < config.layers_enc; ++i) {
    std::string p = "enc.l" + std::to_string(i);
    add_attention_block(&store, p + ".self", d, seed);
    add_layer_norm(&store, p + ".ln1", d);
    add_ffn(&store, p + ".ffn", d, config.ffn_dim, seed);
    add_layer_norm(&store, p + ".ln2", d);
  }
  add_layer_norm(&store, "enc.ln", d);

  for (const char* stack : {"dec", "est"}) {
    int layers = stack[0] == 'd' ? config.layers_dec : config.layers_est;
    for (int i = 0; i < layers; ++i) {
      std::string p = std::string(stack) + ".l" + std::to_string(i);
      add_attention_block(&store, p + ".self", d, seed);
      add_layer_norm(&store, p + ".ln1", d);
      add_attention_block(&store, p + ".cross", d, seed);
      add_layer_norm(&store, p + ".ln2", d);
      add_ffn(&store, p + ".ffn", d, config.ffn_dim, seed);
      add_layer_norm(&store, p + ".ln3", d);
    }
    add_layer_norm(&store, std::string(stack) + ".ln", d);
  }

  // Sinusoidal position table; not learned.
  std::vector<double> pe(static_cast<size_t>(config.max_len) * static_cast<size_t>(d));
  for (int pos = 0; pos < config.max_len; ++pos) {
    for (int j = 0; j < d; j += 2) {
      double angle = static_cast<double>(pos) / std::pow(10000.0, static_cast<double>(j) / static_cast<double>(d));
      pe[static_cast<size_t>(pos * d + j)] = std::sin(angle);
      if (j + 1 < d) pe[static_cast<size_t>(pos * d + j + 1)] = std::cos(angle);
    }
  }
  store.insert("pos_table", Tensor::from_values({config.max_len, d}, std::move(pe), false));

  if (store.trainable_parameter_count() != config.parameter_count()) {
    fail(ErrorCode::InvalidArgument, "parameter census mismatch: built " +
                                         std::to_string(store.trainable_parameter_count()) + ", formula " +
                                         std::to_string(config.parameter_count()));
  }
  return store;
}

std::vector<uint8_t> AttentionMask::materialize(int64_t query_len) const {
  int64_t key_len = static_cast<int64_t>(key_real.size());
  std::vector<uint8_t> allowed(static_cast<size_t>(query_len * key_len), 0);
  for (int64_t i = 0; i < query_len; ++i) {
    int64_t max_j = kind == Kind::Causal ? i : key_len - 1;
    for (int64_t j = 0; j <= max_j && j < key_len; ++j) {
      allowed[static_cast<size_t>(i * key_len + j)] = key_real[static_cast<size_t>(j)];
    }
  }
  return allowed;
}

namespace {

Tensor apply_dropout(const Tensor& x, const DropoutCtx& ctx) {
  if (!ctx.enabled || ctx.rate == 0.0) return x;
  return dropout(x, ctx.rate, *ctx.rng, true);
}

Tensor attention(const ParameterStore& params, const std::string& prefix, const Tensor& queries,
                 const Tensor& keys_values, const std::vector<uint8_t>& allowed, int heads) {
  int64_t d = queries.dim(1);
  int64_t d_head = d / heads;
  Tensor q = add_rows(matmul(queries, params.at(prefix + ".wq")), params.at(prefix + ".bq"));
  Tensor k = add_rows(matmul(keys_values, params.at(prefix + ".wk")), params.at(prefix + ".bk"));
  Tensor v = add_rows(matmul(keys_values, params.at(prefix + ".wv")), params.at(prefix + ".bv"));
  double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(d_head));
  std::vector<Tensor> contexts;
  contexts.reserve(static_cast<size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    Tensor qh = slice_cols(q, h * d_head, d_head);
    Tensor kh = slice_cols(k, h * d_head, d_head);
    Tensor vh = slice_cols(v, h * d_head, d_head);
    Tensor scores = scale(matmul(qh, transpose(kh)), inv_sqrt);
    Tensor probs = masked_softmax_rows(scores, allowed);
    contexts.push_back(matmul(probs, vh));
  }
  Tensor ctx = concat_cols(contexts);
  return add_rows(matmul(ctx, params.at(prefix + ".wo")), params.at(prefix + ".bo"));
}

Tensor feed_forward(const ParameterStore& params, const std::string& prefix, const Tensor& x) {
  Tensor h = relu(add_rows(matmul(x, params.at(prefix + ".w1")), params.at(prefix + ".b1")));
  return add_rows(matmul(h, params.at(prefix + ".w2")), params.at(prefix + ".b2"));
}

Tensor norm(const ParameterStore& params, const std::string& prefix, const Tensor& x) {
  return layer_norm(x, params.at(prefix + ".gain"), params.at(prefix + ".bias"), 1e-6);
}

Tensor embed_sequence(const ParameterStore& params, const ModelConfig& cfg, const std::string& table,
                      std::span<const int32_t> ids, const DropoutCtx& dc) {
  if (ids.empty()) fail(ErrorCode::InvalidArgument, "empty input sequence");
  if (static_cast<int>(ids.size()) > cfg.max_len) {
    fail(ErrorCode::InvalidArgument, "input of length " + std::to_string(ids.size()) +
                                         " exceeds max_len " + std::to_string(cfg.max_len));
  }
  Tensor e = embedding_lookup(params.at(table), ids);
  e = scale(e, std::sqrt(static_cast<double>(cfg.model_dim)));
  e = add(e, slice_rows(params.at("pos_table"), 0, static_cast<int64_t>(ids.size())));
  return apply_dropout(e, dc);
}

void require_flags(const char* op, std::span<const int32_t> ids, std::span<const uint8_t> real) {
  if (ids.size() != real.size()) {
    fail(ErrorCode::InvalidArgument, std::string(op) + ": ids and real-position flags differ in length");
  }
}

std::vector<uint8_t> to_vec(std::span<const uint8_t> s) { return std::vector<uint8_t>(s.begin(), s.end()); }

}  // namespace

Tensor encode(const ParameterStore& params, const ModelConfig& cfg, std::span<const int32_t> src_ids,
              std::span<const uint8_t> src_real, const DropoutCtx& dc) {
  require_flags("encode", src_ids, src_real);
  Tensor x = embed_sequence(params, cfg, src_embed_name(cfg), src_ids, dc);
  AttentionMask self_mask{AttentionMask::Kind::Full, to_vec(src_real)};
  std::vector<uint8_t> allowed = self_mask.materialize(static_cast<int64_t>(src_ids.size()));
  for (int i = 0; i < cfg.layers_enc; ++i) {
    std::string p = "enc.l" + std::to_string(i);
    Tensor q = norm(params, p + ".ln1", x);
    x = add(x, apply_dropout(attention(params, p + ".self", q, q, allowed, cfg.heads), dc));
    x = add(x, apply_dropout(feed_forward(params, p + ".ffn", norm(params, p + ".ln2", x)), dc));
  }
  return norm(params, "enc.ln", x);
}

namespace {

// Shared decoder stack walker. `cross` is nullopt for the reconstruction
// stream, which skips the cross-attention sub-layer entirely.
struct CrossCtx {
  const Tensor* memory;
  std::vector<uint8_t> allowed;
};

Tensor decoder_stack(const ParameterStore& params, const ModelConfig& cfg, const char* stack, int layers,
                     Tensor x, const std::vector<uint8_t>& self_allowed, const std::optional<CrossCtx>& cross,
                     const DropoutCtx& dc) {
  for (int i = 0; i < layers; ++i) {
    std::string p = std::string(stack) + ".l" + std::to_string(i);
    Tensor q = norm(params, p + ".ln1", x);
    x = add(x, apply_dropout(attention(params, p + ".self", q, q, self_allowed, cfg.heads), dc));
    if (cross.has_value()) {
      x = add(x, apply_dropout(attention(params, p + ".cross", norm(params, p + ".ln2", x), *cross->memory,
                                         cross->allowed, cfg.heads),
                               dc));
    }
    x = add(x, apply_dropout(feed_forward(params, p + ".ffn", norm(params, p + ".ln3", x)), dc));
  }
  return norm(params, std::string(stack) + ".ln", x);
}

}  // namespace

Tensor decode_translation(const ParameterStore& params, const ModelConfig& cfg,
                          std::span<const int32_t> tgt_in, std::span<const uint8_t> tgt_real,
                          const Tensor& c_x, std::span<const uint8_t> src_real, const DropoutCtx& dc) {
  require_flags("decode_translation", tgt_in, tgt_real);
  if (tgt_in[0] != Vocabulary::kBos) {
    fail(ErrorCode::InvalidArgument, "decode_translation: input must begin with BOS");
  }
  if (c_x.rank() != 2 || c_x.dim(0) != static_cast<int64_t>(src_real.size())) {
    fail(ErrorCode::ShapeMismatch, "decode_translation: C_X rows do not match source flags");
  }
  Tensor x = embed_sequence(params, cfg, tgt_embed_name(cfg), tgt_in, dc);
  AttentionMask self_mask{AttentionMask::Kind::Causal, to_vec(tgt_real)};
  AttentionMask cross_mask{AttentionMask::Kind::Full, to_vec(src_real)};
  CrossCtx cross{&c_x, cross_mask.materialize(static_cast<int64_t>(tgt_in.size()))};
  x = decoder_stack(params, cfg, "dec", cfg.layers_dec, std::move(x),
                    self_mask.materialize(static_cast<int64_t>(tgt_in.size())), CrossCtx(cross), dc);
  return matmul(x, transpose(params.at(out_tgt_name(cfg))));
}

Tensor decode_reconstruction(const ParameterStore& params, const ModelConfig& cfg,
                             std::span<const int32_t> tgt_ids, std::span<const uint8_t> tgt_real,
                             const DropoutCtx& dc) {
  require_flags("decode_reconstruction", tgt_ids, tgt_real);
  Tensor x = embed_sequence(params, cfg, tgt_embed_name(cfg), tgt_ids, dc);
  AttentionMask self_mask{AttentionMask::Kind::Full, to_vec(tgt_real)};
  return decoder_stack(params, cfg, "dec", cfg.layers_dec, std::move(x),
                       self_mask.materialize(static_cast<int64_t>(tgt_ids.size())), std::nullopt, dc);
}

Tensor estimate(const ParameterStore& params, const ModelConfig& cfg, std::span<const int32_t> src_in,
                std::span<const uint8_t> src_real, const Tensor& c_y, std::span<const uint8_t> tgt_real,
                const DropoutCtx& dc) {
  require_flags("estimate", src_in, src_real);
  if (src_in[0] != Vocabulary::kBos) {
    fail(ErrorCode::InvalidArgument, "estimate: input must begin with BOS");
  }
  if (c_y.rank() != 2 || c_y.dim(0) != static_cast<int64_t>(tgt_real.size())) {
    fail(ErrorCode::ShapeMismatch, "estimate: C_Y rows do not match target flags");
  }
  Tensor x = embed_sequence(params, cfg, src_embed_name(cfg), src_in, dc);
  AttentionMask self_mask{AttentionMask::Kind::Causal, to_vec(src_real)};
  AttentionMask cross_mask{AttentionMask::Kind::Full, to_vec(tgt_real)};
  CrossCtx cross{&c_y, cross_mask.materialize(static_cast<int64_t>(src_in.size()))};
  x = decoder_stack(params, cfg, "est", cfg.layers_est, std::move(x),
                    self_mask.materialize(static_cast<int64_t>(src_in.size())), CrossCtx(cross), dc);
  return matmul(x, transpose(params.at(out_src_name(cfg))));
}

Tensor translation_logits_full(const ParameterStore& params, const ModelConfig& cfg,
                               std::span<const int32_t> tgt_prefix, const Tensor& c_x,
                               std::span<const uint8_t> src_real, const DropoutCtx& dc) {
  std::vector<uint8_t> real(tgt_prefix.size(), 1);
  return decode_translation(params, cfg, tgt_prefix, real, c_x, src_real, dc);
}

JointLoss joint_forward(const ParameterStore& params, const ModelConfig& cfg, const JointBatch& batch,
                        double label_smoothing, const DropoutCtx& dc) {
  size_t n = batch.src_ids.size();
  if (n == 0) fail(ErrorCode::InvalidArgument, "joint_forward: empty batch");
  if (batch.tgt_ids.size() != n || batch.src_real.size() != n || batch.tgt_real.size() != n) {
    fail(ErrorCode::InvalidArgument, "joint_forward: ragged batch fields");
  }

  Tensor fwd_sum;
  Tensor rec_sum;
  int64_t fwd_tokens = 0;
  int64_t rec_tokens = 0;
  for (size_t item = 0; item < n; ++item) {
    const auto& src = batch.src_ids[item];
    const auto& tgt = batch.tgt_ids[item];
    std::span<const uint8_t> src_real(batch.src_real[item]);
    std::span<const uint8_t> tgt_real(batch.tgt_real[item]);

    // Teacher forcing: inputs drop the final position, targets drop BOS.
    std::span<const int32_t> tgt_in(tgt.data(), tgt.size() - 1);
    std::span<const int32_t> tgt_out(tgt.data() + 1, tgt.size() - 1);
    std::span<const int32_t> src_in(src.data(), src.size() - 1);
    std::span<const int32_t> src_out(src.data() + 1, src.size() - 1);

    Tensor c_x = encode(params, cfg, src, src_real, dc);
    Tensor logits_fwd =
        decode_translation(params, cfg, tgt_in, tgt_real.subspan(0, tgt_in.size()), c_x, src_real, dc);
    int64_t count = 0;
    Tensor fwd = label_smoothed_ce_sum(logits_fwd, tgt_out, label_smoothing, Vocabulary::kPad, &count);
    fwd_tokens += count;
    fwd_sum = fwd_sum.defined() ? add(fwd_sum, fwd) : fwd;

    Tensor c_y = decode_reconstruction(params, cfg, tgt, tgt_real, dc);
    Tensor logits_rec = estimate(params, cfg, src_in, src_real.subspan(0, src_in.size()), c_y, tgt_real, dc);
    Tensor rec = label_smoothed_ce_sum(logits_rec, src_out, label_smoothing, Vocabulary::kPad, &count);
    rec_tokens += count;
    rec_sum = rec_sum.defined() ? add(rec_sum, rec) : rec;
  }

  JointLoss loss;
  loss.forward_loss = scale(fwd_sum, 1.0 / static_cast<double>(fwd_tokens));
  loss.reconstruction_loss = scale(rec_sum, 1.0 / static_cast<double>(rec_tokens));
  loss.target_tokens = fwd_tokens;
  loss.source_tokens = rec_tokens;
  return loss;
}

}  // namespace canmt
