#include "train.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "error.hpp"

namespace canmt {

void TrainConfig::validate() const {
  if (warmup_steps < 1) fail(ErrorCode::InvalidArgument, "train config: warmup_steps must be >= 1");
  if (lr_factor <= 0.0) fail(ErrorCode::InvalidArgument, "train config: lr_factor must be positive");
  if (adam_beta1 < 0.0 || adam_beta1 >= 1.0 || adam_beta2 < 0.0 || adam_beta2 >= 1.0) {
    fail(ErrorCode::InvalidArgument, "train config: Adam betas must be in [0, 1)");
  }
  if (adam_eps <= 0.0) fail(ErrorCode::InvalidArgument, "train config: Adam eps must be positive");
  if (max_tokens < 1) fail(ErrorCode::InvalidArgument, "train config: max_tokens must be positive");
  if (max_steps < 0) fail(ErrorCode::InvalidArgument, "train config: max_steps must be non-negative");
  if (checkpoint_every < 1) fail(ErrorCode::InvalidArgument, "train config: checkpoint_every must be >= 1");
  if (label_smoothing < 0.0 || label_smoothing >= 1.0) {
    fail(ErrorCode::InvalidArgument, "train config: label_smoothing must be in [0, 1)");
  }
  if (dropout_rate < 0.0 || dropout_rate >= 1.0) {
    fail(ErrorCode::InvalidArgument, "train config: dropout_rate must be in [0, 1)");
  }
}

std::string TrainConfig::to_kv_text() const {
  char buf[64];
  std::string out;
  auto add = [&out, &buf](const char* key, const std::string& v) {
    out += std::string(key) + "=" + v + "\n";
  };
  auto addf = [&](const char* key, double v) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    add(key, buf);
  };
  addf("lr_factor", lr_factor);
  add("warmup_steps", std::to_string(warmup_steps));
  addf("adam_beta1", adam_beta1);
  addf("adam_beta2", adam_beta2);
  addf("adam_eps", adam_eps);
  add("max_tokens", std::to_string(max_tokens));
  add("max_steps", std::to_string(max_steps));
  add("checkpoint_every", std::to_string(checkpoint_every));
  add("seed", std::to_string(seed));
  addf("label_smoothing", label_smoothing);
  addf("dropout_rate", dropout_rate);
  add("forward_only", forward_only ? "1" : "0");
  return out;
}

double lr_at(int64_t step, int model_dim, int warmup_steps, double factor) {
  if (step < 1) fail(ErrorCode::InvalidArgument, "lr_at: step must be >= 1");
  if (warmup_steps < 1) fail(ErrorCode::InvalidArgument, "lr_at: warmup must be >= 1");
  double s = static_cast<double>(step);
  double w = static_cast<double>(warmup_steps);
  return factor * std::pow(static_cast<double>(model_dim), -0.5) *
         std::min(std::pow(s, -0.5), s * std::pow(w, -1.5));
}

void adam_step(ParameterStore& params, TrainState& state, const TrainConfig& cfg, double lr) {
  ++state.step;
  double t = static_cast<double>(state.step);
  double bc1 = 1.0 - std::pow(cfg.adam_beta1, t);
  double bc2 = 1.0 - std::pow(cfg.adam_beta2, t);
  for (const std::string& name : params.trainable_names()) {
    Tensor& p = params.at(name);
    if (!p.has_grad()) fail(ErrorCode::InvalidArgument, "adam_step: missing gradient for '" + name + "'");
    auto g = p.grad();
    AdamState& adam = state.moments[name];
    if (adam.m.empty()) {
      adam.m.assign(g.size(), 0.0);
      adam.v.assign(g.size(), 0.0);
    }
    auto values = p.mutable_values();
    for (size_t i = 0; i < g.size(); ++i) {
      adam.m[i] = cfg.adam_beta1 * adam.m[i] + (1.0 - cfg.adam_beta1) * g[i];
      adam.v[i] = cfg.adam_beta2 * adam.v[i] + (1.0 - cfg.adam_beta2) * g[i] * g[i];
      double m_hat = adam.m[i] / bc1;
      double v_hat = adam.v[i] / bc2;
      values[i] -= lr * m_hat / (std::sqrt(v_hat) + cfg.adam_eps);
    }
  }
}

namespace {

ParameterStore deep_copy(const ParameterStore& params) {
  ParameterStore out;
  for (const auto& [name, t] : params.entries()) {
    out.insert(name, Tensor::from_values(t.shape(), std::vector<double>(t.values().begin(), t.values().end()),
                                         t.requires_grad()));
  }
  return out;
}

// Translation-only objective for the plain encoder-decoder baseline.
Tensor forward_loss_only(const ParameterStore& params, const ModelConfig& cfg, const JointBatch& batch,
                         double label_smoothing, const DropoutCtx& dc, double* loss_value) {
  Tensor total;
  int64_t tokens = 0;
  for (size_t item = 0; item < batch.src_ids.size(); ++item) {
    const auto& src = batch.src_ids[item];
    const auto& tgt = batch.tgt_ids[item];
    std::span<const uint8_t> src_real(batch.src_real[item]);
    std::span<const uint8_t> tgt_real(batch.tgt_real[item]);
    std::span<const int32_t> tgt_in(tgt.data(), tgt.size() - 1);
    std::span<const int32_t> tgt_out(tgt.data() + 1, tgt.size() - 1);
    Tensor c_x = encode(params, cfg, src, src_real, dc);
    Tensor logits = decode_translation(params, cfg, tgt_in, tgt_real.subspan(0, tgt_in.size()), c_x, src_real, dc);
    int64_t count = 0;
    Tensor l = label_smoothed_ce_sum(logits, tgt_out, label_smoothing, Vocabulary::kPad, &count);
    tokens += count;
    total = total.defined() ? add(total, l) : l;
  }
  Tensor mean = scale(total, 1.0 / static_cast<double>(tokens));
  *loss_value = mean.value();
  return mean;
}

JointBatch to_joint_batch(const Batch& b) {
  return JointBatch{b.src_ids, b.tgt_ids, b.src_real, b.tgt_real};
}

}  // namespace

TrainResult train(const ParallelCorpus& corpus, const Vocabulary& src_vocab, const Vocabulary& tgt_vocab,
                  const ModelConfig& model_cfg, const TrainConfig& train_cfg, const std::string& out_dir) {
  model_cfg.validate();
  train_cfg.validate();
  if (corpus.pairs.empty()) fail(ErrorCode::InvalidArgument, "train: empty corpus");

  std::vector<EncodedPair> encoded = encode_corpus(corpus, src_vocab, tgt_vocab);
  for (const auto& pair : encoded) {
    int64_t longest = static_cast<int64_t>(std::max(pair.source.size(), pair.target.size()));
    if (longest > model_cfg.max_len) {
      fail(ErrorCode::InvalidArgument, "train: corpus sentence of length " + std::to_string(longest) +
                                           " exceeds model max_len " + std::to_string(model_cfg.max_len));
    }
  }

  ParameterStore params = init_parameters(model_cfg, train_cfg.seed);
  TrainState state;
  state.rng = Rng(train_cfg.seed).split(0xd7071ULL);

  Checkpoint stamp;
  stamp.config = model_cfg;
  stamp.src_vocab_fp = src_vocab.fingerprint();
  stamp.tgt_vocab_fp = tgt_vocab.fingerprint();
  stamp.corpus_fp = corpus_fingerprint(corpus);

  TrainResult result;
  auto snapshot = [&](int64_t step) {
    Checkpoint ckpt;
    ckpt.config = stamp.config;
    ckpt.src_vocab_fp = stamp.src_vocab_fp;
    ckpt.tgt_vocab_fp = stamp.tgt_vocab_fp;
    ckpt.corpus_fp = stamp.corpus_fp;
    ckpt.step = step;
    ckpt.params = deep_copy(params);
    return ckpt;
  };

  if (train_cfg.max_steps == 0) {
    result.final_checkpoint = snapshot(0);
    result.checkpoints.push_back(snapshot(0));
  } else {
    int64_t step = 0;
    uint64_t epoch = 0;
    std::vector<Batch> batches;
    size_t batch_idx = 0;
    while (step < train_cfg.max_steps) {
      if (batch_idx >= batches.size()) {
        // Fresh shuffle every epoch, still fully determined by the seed.
        batches = batchify(encoded, train_cfg.max_tokens, train_cfg.seed + 0x9e37 * epoch);
        batch_idx = 0;
        ++epoch;
      }
      const Batch& batch = batches[batch_idx++];
      ++step;

      Rng step_rng = state.rng.split(static_cast<uint64_t>(step));
      DropoutCtx dc;
      dc.enabled = train_cfg.dropout_rate > 0.0;
      dc.rate = train_cfg.dropout_rate;
      dc.rng = &step_rng;

      Tape tape;
      double loss_fwd = 0.0;
      double loss_rec = 0.0;
      {
        TapeScope scope(tape);
        Tensor objective;
        if (train_cfg.forward_only) {
          objective = forward_loss_only(params, model_cfg, to_joint_batch(batch),
                                        train_cfg.label_smoothing, dc, &loss_fwd);
        } else {
          JointLoss joint = joint_forward(params, model_cfg, to_joint_batch(batch),
                                          train_cfg.label_smoothing, dc);
          loss_fwd = joint.forward_loss.value();
          loss_rec = joint.reconstruction_loss.value();
          objective = add(joint.forward_loss, joint.reconstruction_loss);
        }
        backward(tape, objective);
      }

      double lr = lr_at(step, model_cfg.model_dim, train_cfg.warmup_steps, train_cfg.lr_factor);
      adam_step(params, state, train_cfg, lr);
      params.zero_all_grads();

      state.loss_history.push_back(loss_fwd + loss_rec);
      result.curve.push_back({step, lr, loss_fwd, loss_rec});

      if (step % train_cfg.checkpoint_every == 0 && step < train_cfg.max_steps) {
        result.checkpoints.push_back(snapshot(step));
      }
    }
    result.final_checkpoint = snapshot(step);
    result.checkpoints.push_back(snapshot(step));
  }

  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    for (const Checkpoint& ckpt : result.checkpoints) {
      char name[64];
      std::snprintf(name, sizeof(name), "ckpt-%06lld.bin", static_cast<long long>(ckpt.step));
      save_checkpoint(ckpt, out_dir + "/" + name);
    }
    save_checkpoint(result.final_checkpoint, out_dir + "/ckpt-final.bin");
    save_loss_curve(result.curve, out_dir + "/loss.csv");
  }
  return result;
}

void save_loss_curve(const std::vector<LossPoint>& curve, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::Io, "cannot open loss curve for writing: " + path);
  out << "step,lr,loss_fwd,loss_rec\n";
  char buf[128];
  for (const LossPoint& p : curve) {
    std::snprintf(buf, sizeof(buf), "%lld,%.9g,%.9g,%.9g\n", static_cast<long long>(p.step), p.lr,
                  p.loss_fwd, p.loss_rec);
    out << buf;
  }
  if (!out) fail(ErrorCode::Io, "failed writing loss curve: " + path);
}

}  // namespace canmt
