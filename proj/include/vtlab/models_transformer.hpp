// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <string>
#include <vector>

#include "vtlab/decode.hpp"
#include "vtlab/optim.hpp"
#include "vtlab/rng.hpp"
#include "vtlab/tensor.hpp"
#include "vtlab/vocab.hpp"

namespace vtlab {

// Transformer encoder-decoder. The same stack serves two families: trained
// from scratch (the transformer baseline) or fine-tuned from a masked-LM
// pretrained encoder with separate encoder/decoder learning-rate schedules.

struct TransformerConfig {
  int vocab_size = 0;
  int d_model = 256;
  int n_heads = 4;
  int ffn_dim = 1024;
  int enc_layers = 4;
  int dec_layers = 4;
  int dec_d_model = 0;  // 0: same width as the encoder; otherwise a learned
                        // linear bridge projects encoder output
  int max_positions = 64;
  double dropout = 0.1;
  double init_std = 0.02;

  int decoder_width() const { return dec_d_model > 0 ? dec_d_model : d_model; }
};

// Residual multi-head attention + LN, then residual FFN + LN. Decoder
// layers additionally cross-attend to the encoder output between the two.
template <typename S>
struct TransformerLayerT {
  TensorT<S> wq, wk, wv, wo, bq, bk, bv, bo;
  TensorT<S> ffn_w1, ffn_b1, ffn_w2, ffn_b2;
  TensorT<S> ln1_g, ln1_b, ln2_g, ln2_b;
  bool has_cross = false;
  TensorT<S> cwq, cwk, cwv, cwo, cbq, cbk, cbv, cbo;  // cross-attention
  TensorT<S> ln3_g, ln3_b;
  int cross_kv_dim = 0;

  static TransformerLayerT init(int width, int ffn_dim, bool cross, int cross_kv_dim,
                                double stddev, Rng& rng) {
    TransformerLayerT layer;
    const auto d = static_cast<size_t>(width);
    const auto f = static_cast<size_t>(ffn_dim);
    auto mat = [&](size_t r, size_t c) { return TensorT<S>::randn({r, c}, rng, stddev, true); };
    auto vec0 = [&](size_t n) { return TensorT<S>::zeros({n}, true); };
    auto vec1 = [&](size_t n) { return TensorT<S>::ones({n}, true); };
    layer.wq = mat(d, d);
    layer.wk = mat(d, d);
    layer.wv = mat(d, d);
    layer.wo = mat(d, d);
    layer.bq = vec0(d);
    layer.bk = vec0(d);
    layer.bv = vec0(d);
    layer.bo = vec0(d);
    layer.ffn_w1 = mat(d, f);
    layer.ffn_b1 = vec0(f);
    layer.ffn_w2 = mat(f, d);
    layer.ffn_b2 = vec0(d);
    layer.ln1_g = vec1(d);
    layer.ln1_b = vec0(d);
    layer.ln2_g = vec1(d);
    layer.ln2_b = vec0(d);
    layer.has_cross = cross;
    if (cross) {
      const auto kd = static_cast<size_t>(cross_kv_dim);
      layer.cross_kv_dim = cross_kv_dim;
      layer.cwq = mat(d, d);
      layer.cwk = mat(kd, d);
      layer.cwv = mat(kd, d);
      layer.cwo = mat(d, d);
      layer.cbq = vec0(d);
      layer.cbk = vec0(d);
      layer.cbv = vec0(d);
      layer.cbo = vec0(d);
      layer.ln3_g = vec1(d);
      layer.ln3_b = vec0(d);
    }
    return layer;
  }

  struct Context {
    size_t batch = 0, t = 0, heads = 0;
    bool causal = false;
    const std::vector<int>* key_lens = nullptr;  // self-attention key mask
    // cross-attention context (decoder layers)
    const TensorT<S>* memory = nullptr;  // [batch*mem_t, kv_dim]
    size_t mem_t = 0;
    const std::vector<int>* mem_lens = nullptr;
    bool training = false;
    double dropout = 0.0;
    Rng* rng = nullptr;
    std::vector<S>* cross_attn_capture = nullptr;
  };

  TensorT<S> forward(const TensorT<S>& x, const Context& ctx) const {
    if (x.cols() != wq.rows()) {
      throw ContractError("transformer_layer: width mismatch, input " + shape_str(x.shape()));
    }
    auto drop = [&](const TensorT<S>& t) {
      return ctx.training && ctx.rng ? dropout(t, ctx.dropout, *ctx.rng, true) : t;
    };
    TensorT<S> q = add_rowvec(matmul(x, wq), bq);
    TensorT<S> k = add_rowvec(matmul(x, wk), bk);
    TensorT<S> v = add_rowvec(matmul(x, wv), bv);
    TensorT<S> attn = multi_head_attention(q, k, v, ctx.batch, ctx.t, ctx.t, ctx.heads,
                                           ctx.causal, ctx.key_lens);
    TensorT<S> h = layer_norm(add(x, drop(add_rowvec(matmul(attn, wo), bo))), ln1_g, ln1_b);
    if (has_cross) {
      TensorT<S> cq = add_rowvec(matmul(h, cwq), cbq);
      TensorT<S> ck = add_rowvec(matmul(*ctx.memory, cwk), cbk);
      TensorT<S> cv = add_rowvec(matmul(*ctx.memory, cwv), cbv);
      TensorT<S> cross = multi_head_attention(cq, ck, cv, ctx.batch, ctx.t, ctx.mem_t, ctx.heads,
                                              false, ctx.mem_lens, ctx.cross_attn_capture);
      h = layer_norm(add(h, drop(add_rowvec(matmul(cross, cwo), cbo))), ln3_g, ln3_b);
    }
    TensorT<S> ffn = add_rowvec(
        matmul(relu(add_rowvec(matmul(h, ffn_w1), ffn_b1)), ffn_w2), ffn_b2);
    return layer_norm(add(h, drop(ffn)), ln2_g, ln2_b);
  }
};

// Encoder input ids with [CLS] prepended and [SEP] appended; overlong
// inputs are truncated to fit max_positions.
struct InputRepresentation {
  std::vector<int> ids;
  bool truncated = false;
};

InputRepresentation prepare_encoder_ids(const std::vector<int>& raw_ids, int max_positions);

// Masked-LM batch: 15% of real positions selected; of those 80% become
// MASK, 10% a random token, 10% stay. Only selected positions carry a
// target and contribute to the loss.
struct PretrainBatch {
  size_t batch = 0, seq_len = 0;
  std::vector<int> ids;      // [B*T], masking applied
  std::vector<int> targets;  // [B*T], -1 everywhere but selected positions
  std::vector<int> lengths;  // [B]
  size_t selected = 0;
};

PretrainBatch make_mlm_batch(const std::vector<std::vector<int>>& encoder_ids, int vocab_size,
                             Rng& rng, double mask_rate = 0.15);

// Teacher-forcing batch for fine-tuning.
struct TransformerBatch {
  size_t batch = 0, src_len = 0, tgt_len = 0;
  std::vector<int> src;          // [B*src_len], CLS/SEP framed, PAD padded
  std::vector<int> src_lengths;  // [B]
  std::vector<int> tgt_in;       // [B*tgt_len], BOS-prefixed
  std::vector<int> tgt_out;      // [B*tgt_len], EOS-suffixed, -1 on padding
};

TransformerBatch make_transformer_batch(const std::vector<std::vector<int>>& src_ids,
                                        const std::vector<std::vector<int>>& tgt_ids,
                                        int max_positions, int max_target_len,
                                        size_t* truncated_count = nullptr);

template <typename S>
struct TransformerModelT {
  TransformerConfig config;
  // encoder input representation: x_i = E_token + E_pos + E_A
  TensorT<S> tok_emb, pos_emb, seg_emb;
  std::vector<TransformerLayerT<S>> encoder;
  TensorT<S> mlm_w, mlm_b;  // masked-LM head
  // decoder
  TensorT<S> dec_tok_emb, dec_pos_emb;
  std::vector<TransformerLayerT<S>> decoder;
  TensorT<S> bridge_w, bridge_b;  // present only when widths differ
  TensorT<S> out_w, out_b;

  static TransformerModelT init(const TransformerConfig& cfg, Rng& rng) {
    TransformerModelT m;
    m.config = cfg;
    const auto V = static_cast<size_t>(cfg.vocab_size);
    const auto d = static_cast<size_t>(cfg.d_model);
    const auto dd = static_cast<size_t>(cfg.decoder_width());
    const auto P = static_cast<size_t>(cfg.max_positions);
    const double sd = cfg.init_std;
    m.tok_emb = TensorT<S>::randn({V, d}, rng, sd, true);
    m.pos_emb = TensorT<S>::randn({P, d}, rng, sd, true);
    m.seg_emb = TensorT<S>::randn({2, d}, rng, sd, true);
    for (int i = 0; i < cfg.enc_layers; ++i) {
      m.encoder.push_back(
          TransformerLayerT<S>::init(cfg.d_model, cfg.ffn_dim, false, 0, sd, rng));
    }
    m.mlm_w = TensorT<S>::randn({d, V}, rng, sd, true);
    m.mlm_b = TensorT<S>::zeros({V}, true);
    m.dec_tok_emb = TensorT<S>::randn({V, dd}, rng, sd, true);
    m.dec_pos_emb = TensorT<S>::randn({P, dd}, rng, sd, true);
    for (int i = 0; i < cfg.dec_layers; ++i) {
      m.decoder.push_back(TransformerLayerT<S>::init(cfg.decoder_width(), cfg.ffn_dim, true,
                                                     cfg.decoder_width(), sd, rng));
    }
    if (cfg.decoder_width() != cfg.d_model) {
      m.bridge_w = TensorT<S>::randn({d, dd}, rng, sd, true);
      m.bridge_b = TensorT<S>::zeros({dd}, true);
    }
    m.out_w = TensorT<S>::randn({dd, V}, rng, sd, true);
    m.out_b = TensorT<S>::zeros({V}, true);
    return m;
  }

  bool has_bridge() const { return config.decoder_width() != config.d_model; }

  std::vector<std::pair<std::string, TensorT<S>>> named_parameters() {
    std::vector<std::pair<std::string, TensorT<S>>> out = {
        {"enc.tok_emb", tok_emb}, {"enc.pos_emb", pos_emb}, {"enc.seg_emb", seg_emb}};
    auto add_layer = [&out](const std::string& prefix, TransformerLayerT<S>& layer) {
      out.emplace_back(prefix + ".wq", layer.wq);
      out.emplace_back(prefix + ".wk", layer.wk);
      out.emplace_back(prefix + ".wv", layer.wv);
      out.emplace_back(prefix + ".wo", layer.wo);
      out.emplace_back(prefix + ".bq", layer.bq);
      out.emplace_back(prefix + ".bk", layer.bk);
      out.emplace_back(prefix + ".bv", layer.bv);
      out.emplace_back(prefix + ".bo", layer.bo);
      out.emplace_back(prefix + ".ffn_w1", layer.ffn_w1);
      out.emplace_back(prefix + ".ffn_b1", layer.ffn_b1);
      out.emplace_back(prefix + ".ffn_w2", layer.ffn_w2);
      out.emplace_back(prefix + ".ffn_b2", layer.ffn_b2);
      out.emplace_back(prefix + ".ln1_g", layer.ln1_g);
      out.emplace_back(prefix + ".ln1_b", layer.ln1_b);
      out.emplace_back(prefix + ".ln2_g", layer.ln2_g);
      out.emplace_back(prefix + ".ln2_b", layer.ln2_b);
      if (layer.has_cross) {
        out.emplace_back(prefix + ".cwq", layer.cwq);
        out.emplace_back(prefix + ".cwk", layer.cwk);
        out.emplace_back(prefix + ".cwv", layer.cwv);
        out.emplace_back(prefix + ".cwo", layer.cwo);
        out.emplace_back(prefix + ".cbq", layer.cbq);
        out.emplace_back(prefix + ".cbk", layer.cbk);
        out.emplace_back(prefix + ".cbv", layer.cbv);
        out.emplace_back(prefix + ".cbo", layer.cbo);
        out.emplace_back(prefix + ".ln3_g", layer.ln3_g);
        out.emplace_back(prefix + ".ln3_b", layer.ln3_b);
      }
    };
    for (size_t i = 0; i < encoder.size(); ++i) add_layer("enc.layer" + std::to_string(i), encoder[i]);
    out.emplace_back("enc.mlm_w", mlm_w);
    out.emplace_back("enc.mlm_b", mlm_b);
    out.emplace_back("dec.tok_emb", dec_tok_emb);
    out.emplace_back("dec.pos_emb", dec_pos_emb);
    for (size_t i = 0; i < decoder.size(); ++i) add_layer("dec.layer" + std::to_string(i), decoder[i]);
    if (has_bridge()) {
      out.emplace_back("dec.bridge_w", bridge_w);
      out.emplace_back("dec.bridge_b", bridge_b);
    }
    out.emplace_back("dec.out_w", out_w);
    out.emplace_back("dec.out_b", out_b);
    return out;
  }

  // x_i = E_token + E_pos + E_A over a padded batch.
  TensorT<S> embed_encoder(const std::vector<int>& ids, size_t batch, size_t t) const {
    if (t > static_cast<size_t>(config.max_positions)) {
      throw ContractError("embed_encoder: sequence exceeds max positions");
    }
    std::vector<int> pos(batch * t), seg(batch * t, 0);
    for (size_t b = 0; b < batch; ++b)
      for (size_t i = 0; i < t; ++i) pos[b * t + i] = static_cast<int>(i);
    return add(add(gather_rows(tok_emb, ids), gather_rows(pos_emb, pos)),
               gather_rows(seg_emb, seg));
  }

  TensorT<S> encode(const std::vector<int>& ids, size_t batch, size_t t,
                    const std::vector<int>& lengths, bool training = false,
                    Rng* rng = nullptr) const {
    TensorT<S> h = embed_encoder(ids, batch, t);
    typename TransformerLayerT<S>::Context ctx;
    ctx.batch = batch;
    ctx.t = t;
    ctx.heads = static_cast<size_t>(config.n_heads);
    ctx.causal = false;
    ctx.key_lens = &lengths;
    ctx.training = training;
    ctx.dropout = config.dropout;
    ctx.rng = rng;
    for (const auto& layer : encoder) h = layer.forward(h, ctx);
    return h;
  }

  TensorT<S> bridge(const TensorT<S>& enc_out) const {
    if (!has_bridge()) return enc_out;
    return add_rowvec(matmul(enc_out, bridge_w), bridge_b);
  }

  TensorT<S> embed_decoder(const std::vector<int>& ids, size_t batch, size_t t) const {
    std::vector<int> pos(batch * t);
    for (size_t b = 0; b < batch; ++b)
      for (size_t i = 0; i < t; ++i) pos[b * t + i] = static_cast<int>(i);
    return add(gather_rows(dec_tok_emb, ids), gather_rows(dec_pos_emb, pos));
  }

  // Causal decoder over teacher-forced inputs; returns hidden states.
  TensorT<S> decode(const std::vector<int>& tgt_in, size_t batch, size_t t,
                    const TensorT<S>& memory, size_t mem_t, const std::vector<int>& mem_lens,
                    bool training = false, Rng* rng = nullptr,
                    std::vector<S>* cross_attn_capture = nullptr) const {
    TensorT<S> h = embed_decoder(tgt_in, batch, t);
    typename TransformerLayerT<S>::Context ctx;
    ctx.batch = batch;
    ctx.t = t;
    ctx.heads = static_cast<size_t>(config.n_heads);
    ctx.causal = true;
    ctx.key_lens = nullptr;
    ctx.memory = &memory;
    ctx.mem_t = mem_t;
    ctx.mem_lens = &mem_lens;
    ctx.training = training;
    ctx.dropout = config.dropout;
    ctx.rng = rng;
    for (size_t i = 0; i < decoder.size(); ++i) {
      ctx.cross_attn_capture = i + 1 == decoder.size() ? cross_attn_capture : nullptr;
      h = decoder[i].forward(h, ctx);
    }
    return h;
  }

  TensorT<S> output_distribution(const TensorT<S>& dec_hidden) const {
    return softmax(add_rowvec(matmul(dec_hidden, out_w), out_b));
  }

  struct LossParts {
    TensorT<S> nll_sum;
    long tokens = 0;
  };

  // Teacher-forced NLL over a batch (Eq. 4 applied per target position).
  LossParts forward_loss(const TransformerBatch& batch, bool training, Rng* rng) const {
    TensorT<S> enc_out = encode(batch.src, batch.batch, batch.src_len, batch.src_lengths,
                                training, rng);
    TensorT<S> memory = bridge(enc_out);
    TensorT<S> dec_hidden = decode(batch.tgt_in, batch.batch, batch.tgt_len, memory,
                                   batch.src_len, batch.src_lengths, training, rng);
    TensorT<S> probs = output_distribution(dec_hidden);
    LossParts parts;
    parts.nll_sum = nll_rows(probs, batch.tgt_out);
    for (int t : batch.tgt_out) parts.tokens += t >= 0 ? 1 : 0;
    return parts;
  }

  // Cross-entropy over the selected positions only.
  LossParts mlm_loss(const PretrainBatch& batch, bool training, Rng* rng) const {
    if (batch.selected == 0) throw ContractError("mlm_loss: batch has no selected positions");
    TensorT<S> h = encode(batch.ids, batch.batch, batch.seq_len, batch.lengths, training, rng);
    std::vector<int> rows;
    std::vector<int> targets;
    for (size_t i = 0; i < batch.targets.size(); ++i) {
      if (batch.targets[i] >= 0) {
        rows.push_back(static_cast<int>(i));
        targets.push_back(batch.targets[i]);
      }
    }
    TensorT<S> selected = gather_rows(h, rows);
    TensorT<S> probs = softmax(add_rowvec(matmul(selected, mlm_w), mlm_b));
    LossParts parts;
    parts.nll_sum = nll_rows(probs, targets);
    parts.tokens = static_cast<long>(targets.size());
    return parts;
  }

  // Next-token distribution for (src, prefix); the reference path used by
  // tests and the greedy oracle.
  TensorT<S> forward_next(const std::vector<int>& src_with_specials,
                          const std::vector<int>& tgt_prefix,
                          std::vector<S>* cross_attn_capture = nullptr) const {
    const size_t ts = src_with_specials.size();
    std::vector<int> lens = {static_cast<int>(ts)};
    TensorT<S> memory = bridge(encode(src_with_specials, 1, ts, lens));
    std::vector<int> dec_in;
    dec_in.push_back(kBosId);
    for (int t : tgt_prefix) dec_in.push_back(t);
    TensorT<S> hidden = decode(dec_in, 1, dec_in.size(), memory, ts, lens, false, nullptr,
                               cross_attn_capture);
    TensorT<S> last = gather_rows(hidden, {static_cast<int>(dec_in.size()) - 1});
    return output_distribution(last);
  }
};

using TransformerModel = TransformerModelT<float>;

// Incremental decoding session with per-layer KV caches stored as immutable
// parent chains so beam branches can share prefixes.
class TransformerScorer : public SequenceScorer {
 public:
  TransformerScorer(const TransformerModel& model, const std::vector<int>& src_ids_raw);

  int eos_id() const override { return kEosId; }
  Step begin() override;
  Step advance(int state, int token) override;

  bool input_truncated() const { return truncated_; }

 private:
  struct CacheEntry {
    int parent = -1;
    int depth = 0;  // number of tokens consumed so far
    // per decoder layer: one new self-attention K row and V row
    std::vector<std::vector<float>> k_rows, v_rows;
  };
  Step step_from(int parent_state, int token);

  const TransformerModel& model_;
  bool truncated_ = false;
  size_t src_len_ = 0;
  Eigen::MatrixXf memory_;  // bridged encoder output [src_len, dec_d]
  // precomputed cross-attention keys/values per layer [src_len, d]
  std::vector<Eigen::MatrixXf> cross_k_, cross_v_;
  std::vector<CacheEntry> states_;
};

}  // namespace vtlab
