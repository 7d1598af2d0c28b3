// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "vtlab/corpus.hpp"
#include "vtlab/decode.hpp"
#include "vtlab/optim.hpp"
#include "vtlab/tensor.hpp"
#include "vtlab/vocab.hpp"

namespace vtlab {

// Recurrent baselines: LSTM seq2seq with additive attention, and the
// pointer-generator variant mixing vocabulary generation with copying from
// the source, optionally trained with a coverage penalty.

struct RecurrentConfig {
  int vocab_size = 0;
  int embed_dim = 128;
  int hidden_dim = 128;
  bool pointer = false;
  double coverage_weight = 1.0;  // lambda on the coverage loss when enabled
  double init_std = 0.05;
};

template <typename S>
struct LstmCellT {
  TensorT<S> w_x;  // [in, 4h]
  TensorT<S> w_h;  // [h, 4h]
  TensorT<S> b;    // [4h]

  static LstmCellT init(int in_dim, int hidden, double stddev, Rng& rng) {
    LstmCellT cell;
    cell.w_x = TensorT<S>::randn({static_cast<size_t>(in_dim), static_cast<size_t>(4 * hidden)},
                                 rng, stddev, true);
    cell.w_h = TensorT<S>::randn({static_cast<size_t>(hidden), static_cast<size_t>(4 * hidden)},
                                 rng, stddev, true);
    cell.b = TensorT<S>::zeros({static_cast<size_t>(4 * hidden)}, true);
    // forget-gate bias starts positive so early training keeps state
    for (int i = hidden; i < 2 * hidden; ++i) cell.b.at(static_cast<size_t>(i)) = S(1);
    return cell;
  }

  // (x [B,in], h [B,h], c [B,h]) -> (h', c')
  std::pair<TensorT<S>, TensorT<S>> forward(const TensorT<S>& x, const TensorT<S>& h,
                                            const TensorT<S>& c) const {
    const size_t hidden = h.cols();
    TensorT<S> z = add_rowvec(add(matmul(x, w_x), matmul(h, w_h)), b);
    TensorT<S> gi = sigmoid(slice_cols(z, 0, hidden));
    TensorT<S> gf = sigmoid(slice_cols(z, hidden, hidden));
    TensorT<S> gg = tanh_op(slice_cols(z, 2 * hidden, hidden));
    TensorT<S> go = sigmoid(slice_cols(z, 3 * hidden, hidden));
    TensorT<S> c_next = add(mul(gf, c), mul(gi, gg));
    TensorT<S> h_next = mul(go, tanh_op(c_next));
    return {h_next, c_next};
  }
};

// One hidden vector per source position plus the final state; lengths keep
// track of padding inside the batch.
template <typename S>
struct RecurrentEncoderStateT {
  std::vector<TensorT<S>> hidden;    // n tensors of [B,h]
  std::vector<TensorT<S>> att_proj;  // W_h h_i, precomputed per position
  TensorT<S> final_h, final_c;       // [B,h]
  std::vector<int> lengths;

  size_t src_len() const { return hidden.size(); }
};

template <typename S>
struct AttentionOutputT {
  TensorT<S> weights;  // [B,n], rows sum to 1
  TensorT<S> context;  // [B,h]
};

// Running sum of attention distributions over past decode steps.
template <typename S>
struct CoverageStateT {
  TensorT<S> sum;  // [B,n], starts at zero

  static CoverageStateT zeros(size_t batch, size_t src_len) {
    CoverageStateT s;
    s.sum = TensorT<S>::zeros({batch, src_len});
    return s;
  }
  void accumulate(const TensorT<S>& attn_weights) { sum = add(sum, attn_weights); }
};

// Sum_i min(a_i, c_i); non-negative, zero at the first decode step.
template <typename S>
TensorT<S> coverage_loss(const TensorT<S>& attn_weights, const CoverageStateT<S>& cov) {
  detail::check_same_shape(attn_weights, cov.sum, "coverage_loss");
  return sum(min_elem(attn_weights, cov.sum));
}

// Padded batch with pointer-style extended-vocabulary bookkeeping. Source
// OOV tokens get temporary ids vocab_size..vocab_size+n_oov-1, valid only
// within the batch.
struct RecurrentBatch {
  size_t batch = 0;
  size_t src_len = 0;  // padded
  size_t tgt_len = 0;  // padded, length of tgt_in/tgt_out
  std::vector<int> src;             // [B*src_len], PAD padded, OOV -> UNK
  std::vector<int> src_extended;    // [B*src_len], OOV -> extended ids
  std::vector<int> src_lengths;     // [B]
  std::vector<int> tgt_in;          // [B*tgt_len], BOS-prefixed, PAD padded
  std::vector<int> tgt_out;         // [B*tgt_len], EOS-suffixed, -1 on padding
  std::vector<int> tgt_out_extended;  // targets in extended ids (copyable OOVs)
  std::vector<std::string> oov_words;  // extended id i+V -> word
  size_t extended_size = 0;
};

RecurrentBatch make_recurrent_batch(const std::vector<TitlePair>& pairs,
                                    const Vocabulary& vocab, bool use_metadata_augment);

template <typename S>
struct RecurrentModelT {
  RecurrentConfig config;
  TensorT<S> embedding;  // [V,e], shared by encoder and decoder
  LstmCellT<S> encoder_cell, decoder_cell;
  TensorT<S> attn_w_h, attn_w_s, attn_b, attn_v;
  TensorT<S> init_w_h, init_b_h, init_w_c, init_b_c;
  TensorT<S> out_w1, out_b1, out_w2, out_b2;
  TensorT<S> ptr_w_hstar, ptr_w_s, ptr_w_x, ptr_b;

  static RecurrentModelT init(const RecurrentConfig& cfg, Rng& rng) {
    RecurrentModelT m;
    m.config = cfg;
    const auto V = static_cast<size_t>(cfg.vocab_size);
    const auto E = static_cast<size_t>(cfg.embed_dim);
    const auto H = static_cast<size_t>(cfg.hidden_dim);
    const double sd = cfg.init_std;
    m.embedding = TensorT<S>::randn({V, E}, rng, sd, true);
    m.encoder_cell = LstmCellT<S>::init(cfg.embed_dim, cfg.hidden_dim, sd, rng);
    m.decoder_cell = LstmCellT<S>::init(cfg.embed_dim, cfg.hidden_dim, sd, rng);
    m.attn_w_h = TensorT<S>::randn({H, H}, rng, sd, true);
    m.attn_w_s = TensorT<S>::randn({H, H}, rng, sd, true);
    m.attn_b = TensorT<S>::zeros({H}, true);
    m.attn_v = TensorT<S>::randn({H, 1}, rng, sd, true);
    m.init_w_h = TensorT<S>::randn({H, H}, rng, sd, true);
    m.init_b_h = TensorT<S>::zeros({H}, true);
    m.init_w_c = TensorT<S>::randn({H, H}, rng, sd, true);
    m.init_b_c = TensorT<S>::zeros({H}, true);
    m.out_w1 = TensorT<S>::randn({2 * H, H}, rng, sd, true);
    m.out_b1 = TensorT<S>::zeros({H}, true);
    m.out_w2 = TensorT<S>::randn({H, V}, rng, sd, true);
    m.out_b2 = TensorT<S>::zeros({V}, true);
    if (cfg.pointer) {
      m.ptr_w_hstar = TensorT<S>::randn({H, 1}, rng, sd, true);
      m.ptr_w_s = TensorT<S>::randn({H, 1}, rng, sd, true);
      m.ptr_w_x = TensorT<S>::randn({E, 1}, rng, sd, true);
      m.ptr_b = TensorT<S>::zeros({1}, true);
    }
    return m;
  }

  std::vector<std::pair<std::string, TensorT<S>>> named_parameters() {
    std::vector<std::pair<std::string, TensorT<S>>> out = {
        {"embedding", embedding},
        {"encoder.w_x", encoder_cell.w_x},
        {"encoder.w_h", encoder_cell.w_h},
        {"encoder.b", encoder_cell.b},
        {"decoder.w_x", decoder_cell.w_x},
        {"decoder.w_h", decoder_cell.w_h},
        {"decoder.b", decoder_cell.b},
        {"attn.w_h", attn_w_h},
        {"attn.w_s", attn_w_s},
        {"attn.b", attn_b},
        {"attn.v", attn_v},
        {"init.w_h", init_w_h},
        {"init.b_h", init_b_h},
        {"init.w_c", init_w_c},
        {"init.b_c", init_b_c},
        {"out.w1", out_w1},
        {"out.b1", out_b1},
        {"out.w2", out_w2},
        {"out.b2", out_b2},
    };
    if (config.pointer) {
      out.emplace_back("ptr.w_hstar", ptr_w_hstar);
      out.emplace_back("ptr.w_s", ptr_w_s);
      out.emplace_back("ptr.w_x", ptr_w_x);
      out.emplace_back("ptr.b", ptr_b);
    }
    return out;
  }

  // Runs the LSTM over embedded tokens; one hidden state per position.
  // Per-example update masks freeze the state past each true length, so the
  // final state belongs to the last real token.
  RecurrentEncoderStateT<S> encode(const std::vector<int>& src, size_t batch, size_t src_len,
                                   const std::vector<int>& lengths) const {
    if (src_len == 0 || batch == 0) throw ContractError("encode: empty input");
    RecurrentEncoderStateT<S> state;
    state.lengths = lengths;
    const auto H = static_cast<size_t>(config.hidden_dim);
    TensorT<S> h = TensorT<S>::zeros({batch, H});
    TensorT<S> c = TensorT<S>::zeros({batch, H});
    for (size_t t = 0; t < src_len; ++t) {
      std::vector<int> ids(batch);
      TensorT<S> update_mask({batch, 1});
      for (size_t b = 0; b < batch; ++b) {
        ids[b] = src[b * src_len + t];
        update_mask.at(b) = t < static_cast<size_t>(lengths[b]) ? S(1) : S(0);
      }
      TensorT<S> keep_mask = add_scalar(scale(update_mask, S(-1)), S(1));
      TensorT<S> x = gather_rows(embedding, ids);
      auto [h_new, c_new] = encoder_cell.forward(x, h, c);
      h = add(mul_colvec(h_new, update_mask), mul_colvec(h, keep_mask));
      c = add(mul_colvec(c_new, update_mask), mul_colvec(c, keep_mask));
      state.hidden.push_back(h);
      state.att_proj.push_back(matmul(h, attn_w_h));
    }
    state.final_h = h;
    state.final_c = c;
    return state;
  }

  // Decoder start state: linear projection of the final encoder state.
  std::pair<TensorT<S>, TensorT<S>> decoder_init(const RecurrentEncoderStateT<S>& enc) const {
    TensorT<S> s0 = add_rowvec(matmul(enc.final_h, init_w_h), init_b_h);
    TensorT<S> c0 = add_rowvec(matmul(enc.final_c, init_w_c), init_b_c);
    return {s0, c0};
  }

  // e_i = v . tanh(W_h h_i + W_s s_t + b); a = softmax(e); context = sum a_i h_i.
  // Padded source positions are masked out of the softmax.
  AttentionOutputT<S> attend(const RecurrentEncoderStateT<S>& enc, const TensorT<S>& s_t) const {
    const size_t n = enc.src_len();
    const size_t batch = s_t.rows();
    TensorT<S> query = matmul(s_t, attn_w_s);
    std::vector<TensorT<S>> scores;
    scores.reserve(n);
    for (size_t i = 0; i < n; ++i) {
      TensorT<S> e = matmul(tanh_op(add_rowvec(add(enc.att_proj[i], query), attn_b)), attn_v);
      scores.push_back(e);
    }
    TensorT<S> e_all = concat_cols(scores);
    TensorT<S> mask({batch, n});
    for (size_t b = 0; b < batch; ++b)
      for (size_t i = 0; i < n; ++i)
        mask.at2(b, i) = i < static_cast<size_t>(enc.lengths[b]) ? S(0) : S(-1e9);
    AttentionOutputT<S> out;
    out.weights = softmax(add(e_all, mask));
    TensorT<S> context;
    for (size_t i = 0; i < n; ++i) {
      TensorT<S> piece = mul_colvec(enc.hidden[i], slice_col(out.weights, i));
      context = i == 0 ? piece : add(context, piece);
    }
    out.context = context;
    return out;
  }

  // [s_t ; h*_t] through two linear layers to the vocabulary distribution.
  TensorT<S> vocab_distribution(const TensorT<S>& s_t, const TensorT<S>& context) const {
    TensorT<S> hidden = add_rowvec(matmul(concat_cols<S>({s_t, context}), out_w1), out_b1);
    TensorT<S> logits = add_rowvec(matmul(hidden, out_w2), out_b2);
    return softmax(logits);
  }

  // p_gen = sigma(w_h* . h*_t + w_s . s_t + w_x . x_t + b_ptr)
  TensorT<S> generation_probability(const TensorT<S>& x_t, const TensorT<S>& s_t,
                                    const TensorT<S>& context) const {
    TensorT<S> z = add(add(matmul(context, ptr_w_hstar), matmul(s_t, ptr_w_s)),
                       matmul(x_t, ptr_w_x));
    return sigmoid(add_rowvec(z, ptr_b));
  }

  // P(w) = p_gen * P_vocab(w) + (1 - p_gen) * sum_{i: w_i = w} a_i over the
  // extended vocabulary. forced_p_gen substitutes a constant gate, used by
  // the limit tests.
  TensorT<S> extended_distribution(const TensorT<S>& p_vocab, const TensorT<S>& p_gen,
                                   const TensorT<S>& attn_weights,
                                   const std::vector<int>& src_extended, size_t extended_size,
                                   std::optional<double> forced_p_gen = std::nullopt) const {
    const size_t batch = p_vocab.rows();
    const size_t v = p_vocab.cols();
    TensorT<S> gate = p_gen;
    if (forced_p_gen) {
      gate = TensorT<S>::full({batch, 1}, static_cast<S>(*forced_p_gen));
    }
    TensorT<S> inv_gate = add_scalar(scale(gate, S(-1)), S(1));
    TensorT<S> gen_part = mul_colvec(p_vocab, gate);
    if (extended_size > v) {
      TensorT<S> pad = TensorT<S>::zeros({batch, extended_size - v});
      gen_part = concat_cols<S>({gen_part, pad});
    }
    TensorT<S> copy_src = mul_colvec(attn_weights, inv_gate);
    TensorT<S> copy_part = scatter_add_cols(copy_src, src_extended, extended_size);
    return add(gen_part, copy_part);
  }

  // Teacher-forced loss over a batch. Returns the summed NLL, summed
  // coverage loss, and the number of real target tokens.
  struct LossParts {
    TensorT<S> nll_sum;
    TensorT<S> coverage_sum;  // zero tensor when coverage is off
    long tokens = 0;
  };

  LossParts forward_loss(const RecurrentBatch& batch, bool with_coverage) const {
    RecurrentEncoderStateT<S> enc = encode(batch.src, batch.batch, batch.src_len,
                                           batch.src_lengths);
    auto [s, c] = decoder_init(enc);
    CoverageStateT<S> cov = CoverageStateT<S>::zeros(batch.batch, batch.src_len);
    LossParts parts;
    parts.nll_sum = TensorT<S>::zeros({1});
    parts.coverage_sum = TensorT<S>::zeros({1});
    for (size_t t = 0; t < batch.tgt_len; ++t) {
      std::vector<int> in_ids(batch.batch);
      std::vector<int> targets(batch.batch);
      TensorT<S> step_mask({batch.batch, 1});
      for (size_t b = 0; b < batch.batch; ++b) {
        in_ids[b] = batch.tgt_in[b * batch.tgt_len + t];
        const int target = config.pointer ? batch.tgt_out_extended[b * batch.tgt_len + t]
                                          : batch.tgt_out[b * batch.tgt_len + t];
        targets[b] = target;
        step_mask.at(b) = target >= 0 ? S(1) : S(0);
        if (target >= 0) parts.tokens += 1;
      }
      TensorT<S> x = gather_rows(embedding, in_ids);
      auto [s_next, c_next] = decoder_cell.forward(x, s, c);
      s = s_next;
      c = c_next;
      AttentionOutputT<S> attn = attend(enc, s);
      TensorT<S> p_vocab = vocab_distribution(s, attn.context);
      TensorT<S> dist;
      if (config.pointer) {
        TensorT<S> p_gen = generation_probability(x, s, attn.context);
        dist = extended_distribution(p_vocab, p_gen, attn.weights, batch.src_extended,
                                     batch.extended_size);
      } else {
        dist = p_vocab;
      }
      parts.nll_sum = add(parts.nll_sum, nll_rows(dist, targets));
      if (with_coverage) {
        TensorT<S> per_elem = min_elem(attn.weights, cov.sum);
        parts.coverage_sum = add(parts.coverage_sum, sum(mul_colvec(per_elem, step_mask)));
        cov.accumulate(attn.weights);
      }
    }
    return parts;
  }
};

using RecurrentModel = RecurrentModelT<float>;

// Incremental float-precision inference session implementing the beam
// search scorer interface. Pointer models score over the extended
// vocabulary; extended ids feed back in as UNK.
class RecurrentScorer : public SequenceScorer {
 public:
  RecurrentScorer(const RecurrentModel& model, const std::vector<std::string>& src_tokens,
                  const Vocabulary& vocab);

  int eos_id() const override { return kEosId; }
  Step begin() override;
  Step advance(int state, int token) override;

  // Maps decoded ids (possibly extended) back to words.
  std::string token_text(int id) const;
  size_t output_size() const { return output_size_; }

 private:
  struct State {
    std::vector<float> h, c;
  };
  Step step_from(const State& state, int prev_token);
  std::vector<float> distribution(const State& state, int prev_token, State& next) const;

  const RecurrentModel& model_;
  const Vocabulary& vocab_;
  std::vector<int> src_ids_;
  std::vector<int> src_extended_;
  std::vector<std::string> oov_words_;
  size_t output_size_ = 0;
  Eigen::MatrixXf enc_hidden_;   // [n, h]
  Eigen::MatrixXf enc_proj_;     // [n, h] = H * W_h
  std::vector<float> init_h_, init_c_;
  std::vector<State> states_;
};

}  // namespace vtlab
