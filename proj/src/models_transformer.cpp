// SPDX-License-Identifier: Apache-2.0
#include "vtlab/models_transformer.hpp"

#include <cmath>

namespace vtlab {

namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Eigen::Map<const RowMat> as_mat(const Tensor& t) {
  return {t.data().data(), static_cast<Eigen::Index>(t.rows()),
          static_cast<Eigen::Index>(t.cols())};
}

Eigen::Map<const Eigen::VectorXf> as_vec(const Tensor& t) {
  return {t.data().data(), static_cast<Eigen::Index>(t.size())};
}

Eigen::VectorXf layer_norm_vec(const Eigen::VectorXf& x, const Tensor& gain, const Tensor& bias) {
  const float mu = x.mean();
  const float var = (x.array() - mu).square().mean();
  const float inv = 1.0f / std::sqrt(var + 1e-6f);
  Eigen::VectorXf out = (x.array() - mu) * inv;
  return (out.array() * as_vec(gain).array() + as_vec(bias).array()).matrix();
}

}  // namespace

InputRepresentation prepare_encoder_ids(const std::vector<int>& raw_ids, int max_positions) {
  InputRepresentation rep;
  const size_t budget = static_cast<size_t>(max_positions) - 2;  // CLS and SEP
  rep.ids.push_back(kClsId);
  for (size_t i = 0; i < raw_ids.size(); ++i) {
    if (i >= budget) {
      rep.truncated = true;
      break;
    }
    rep.ids.push_back(raw_ids[i]);
  }
  rep.ids.push_back(kSepId);
  return rep;
}

PretrainBatch make_mlm_batch(const std::vector<std::vector<int>>& encoder_ids, int vocab_size,
                             Rng& rng, double mask_rate) {
  if (encoder_ids.empty()) throw ContractError("make_mlm_batch: empty batch");
  PretrainBatch batch;
  batch.batch = encoder_ids.size();
  for (const auto& ids : encoder_ids) batch.seq_len = std::max(batch.seq_len, ids.size());
  batch.ids.assign(batch.batch * batch.seq_len, kPadId);
  batch.targets.assign(batch.batch * batch.seq_len, -1);
  for (size_t b = 0; b < batch.batch; ++b) {
    const auto& ids = encoder_ids[b];
    batch.lengths.push_back(static_cast<int>(ids.size()));
    for (size_t i = 0; i < ids.size(); ++i) {
      const size_t at = b * batch.seq_len + i;
      batch.ids[at] = ids[i];
      if (ids[i] < kNumSpecials) continue;
      if (rng.uniform01() >= mask_rate) continue;
      batch.targets[at] = ids[i];
      batch.selected += 1;
      const double r = rng.uniform01();
      if (r < 0.8) {
        batch.ids[at] = kMaskId;
      } else if (r < 0.9) {
        batch.ids[at] =
            kNumSpecials + static_cast<int>(rng.uniform_index(
                               static_cast<size_t>(vocab_size - kNumSpecials)));
      }  // else: keep the original token
    }
  }
  return batch;
}

TransformerBatch make_transformer_batch(const std::vector<std::vector<int>>& src_ids,
                                        const std::vector<std::vector<int>>& tgt_ids,
                                        int max_positions, int max_target_len,
                                        size_t* truncated_count) {
  if (src_ids.empty() || src_ids.size() != tgt_ids.size()) {
    throw ContractError("make_transformer_batch: need matching non-empty src/tgt");
  }
  TransformerBatch batch;
  batch.batch = src_ids.size();
  std::vector<InputRepresentation> reps;
  for (const auto& ids : src_ids) {
    reps.push_back(prepare_encoder_ids(ids, max_positions));
    if (reps.back().truncated && truncated_count) ++*truncated_count;
    batch.src_len = std::max(batch.src_len, reps.back().ids.size());
  }
  const size_t tgt_budget = static_cast<size_t>(std::min(max_target_len, max_positions - 1));
  std::vector<std::vector<int>> tgts;
  for (const auto& ids : tgt_ids) {
    std::vector<int> t = ids;
    if (t.size() > tgt_budget) {
      t.resize(tgt_budget);
      if (truncated_count) ++*truncated_count;
    }
    tgts.push_back(std::move(t));
    batch.tgt_len = std::max(batch.tgt_len, tgts.back().size() + 1);
  }
  batch.src.assign(batch.batch * batch.src_len, kPadId);
  batch.tgt_in.assign(batch.batch * batch.tgt_len, kPadId);
  batch.tgt_out.assign(batch.batch * batch.tgt_len, -1);
  for (size_t b = 0; b < batch.batch; ++b) {
    batch.src_lengths.push_back(static_cast<int>(reps[b].ids.size()));
    for (size_t i = 0; i < reps[b].ids.size(); ++i)
      batch.src[b * batch.src_len + i] = reps[b].ids[i];
    batch.tgt_in[b * batch.tgt_len] = kBosId;
    for (size_t i = 0; i < tgts[b].size(); ++i) {
      if (i + 1 < batch.tgt_len) batch.tgt_in[b * batch.tgt_len + i + 1] = tgts[b][i];
      batch.tgt_out[b * batch.tgt_len + i] = tgts[b][i];
    }
    batch.tgt_out[b * batch.tgt_len + tgts[b].size()] = kEosId;
  }
  return batch;
}

TransformerScorer::TransformerScorer(const TransformerModel& model,
                                     const std::vector<int>& src_ids_raw)
    : model_(model) {
  const InputRepresentation rep = prepare_encoder_ids(src_ids_raw, model.config.max_positions);
  truncated_ = rep.truncated;
  src_len_ = rep.ids.size();
  std::vector<int> lens = {static_cast<int>(src_len_)};
  Tensor memory = model.bridge(model.encode(rep.ids, 1, src_len_, lens));
  const int dd = model.config.decoder_width();
  memory_.resize(static_cast<Eigen::Index>(src_len_), dd);
  for (size_t i = 0; i < src_len_; ++i)
    for (int j = 0; j < dd; ++j) memory_(static_cast<Eigen::Index>(i), j) = memory.at2(i, j);
  for (const auto& layer : model.decoder) {
    cross_k_.push_back((memory_ * as_mat(layer.cwk)).rowwise() +
                       as_vec(layer.cbk).transpose());
    cross_v_.push_back((memory_ * as_mat(layer.cwv)).rowwise() +
                       as_vec(layer.cbv).transpose());
  }
}

TransformerScorer::Step TransformerScorer::begin() { return step_from(-1, kBosId); }

TransformerScorer::Step TransformerScorer::advance(int state, int token) {
  return step_from(state, token);
}

TransformerScorer::Step TransformerScorer::step_from(int parent_state, int token) {
  const int dd = model_.config.decoder_width();
  const int heads = model_.config.n_heads;
  const int hd = dd / heads;
  const int pos = parent_state < 0 ? 0 : states_[static_cast<size_t>(parent_state)].depth;
  if (pos >= model_.config.max_positions) {
    throw ContractError("transformer scorer: decoded past max positions");
  }

  // ancestor chain, oldest first
  std::vector<int> chain;
  for (int s = parent_state; s >= 0; s = states_[static_cast<size_t>(s)].parent)
    chain.push_back(s);
  std::reverse(chain.begin(), chain.end());

  Eigen::VectorXf x = as_mat(model_.dec_tok_emb).row(token).transpose() +
                      as_mat(model_.dec_pos_emb).row(pos).transpose();

  CacheEntry entry;
  entry.parent = parent_state;
  entry.depth = pos + 1;
  entry.k_rows.resize(model_.decoder.size());
  entry.v_rows.resize(model_.decoder.size());

  const float inv_sqrt = 1.0f / std::sqrt(static_cast<float>(hd));
  for (size_t li = 0; li < model_.decoder.size(); ++li) {
    const auto& layer = model_.decoder[li];
    const Eigen::VectorXf q = as_mat(layer.wq).transpose() * x + as_vec(layer.bq);
    const Eigen::VectorXf k = as_mat(layer.wk).transpose() * x + as_vec(layer.bk);
    const Eigen::VectorXf v = as_mat(layer.wv).transpose() * x + as_vec(layer.bv);
    entry.k_rows[li].assign(k.data(), k.data() + dd);
    entry.v_rows[li].assign(v.data(), v.data() + dd);

    // self-attention over the cached prefix plus the current position
    const int t = pos + 1;
    RowMat keys(t, dd), values(t, dd);
    for (int j = 0; j < pos; ++j) {
      const CacheEntry& anc = states_[static_cast<size_t>(chain[static_cast<size_t>(j)])];
      keys.row(j) = Eigen::Map<const Eigen::VectorXf>(anc.k_rows[li].data(), dd).transpose();
      values.row(j) = Eigen::Map<const Eigen::VectorXf>(anc.v_rows[li].data(), dd).transpose();
    }
    keys.row(pos) = k.transpose();
    values.row(pos) = v.transpose();

    Eigen::VectorXf attn_out(dd);
    for (int h = 0; h < heads; ++h) {
      const auto qh = q.segment(h * hd, hd);
      Eigen::VectorXf scores = keys.middleCols(h * hd, hd) * qh * inv_sqrt;
      const float mx = scores.maxCoeff();
      Eigen::VectorXf a = (scores.array() - mx).exp();
      a /= a.sum();
      attn_out.segment(h * hd, hd) = values.middleCols(h * hd, hd).transpose() * a;
    }
    Eigen::VectorXf h1 = layer_norm_vec(
        x + as_mat(layer.wo).transpose() * attn_out + as_vec(layer.bo), layer.ln1_g,
        layer.ln1_b);

    // cross-attention against the precomputed encoder keys/values
    const Eigen::VectorXf cq = as_mat(layer.cwq).transpose() * h1 + as_vec(layer.cbq);
    Eigen::VectorXf cross_out(dd);
    for (int h = 0; h < heads; ++h) {
      const auto qh = cq.segment(h * hd, hd);
      Eigen::VectorXf scores = cross_k_[li].middleCols(h * hd, hd) * qh * inv_sqrt;
      const float mx = scores.maxCoeff();
      Eigen::VectorXf a = (scores.array() - mx).exp();
      a /= a.sum();
      cross_out.segment(h * hd, hd) = cross_v_[li].middleCols(h * hd, hd).transpose() * a;
    }
    Eigen::VectorXf h2 = layer_norm_vec(
        h1 + as_mat(layer.cwo).transpose() * cross_out + as_vec(layer.cbo), layer.ln3_g,
        layer.ln3_b);

    const Eigen::VectorXf mid =
        (as_mat(layer.ffn_w1).transpose() * h2 + as_vec(layer.ffn_b1)).cwiseMax(0.0f);
    const Eigen::VectorXf ffn = as_mat(layer.ffn_w2).transpose() * mid + as_vec(layer.ffn_b2);
    x = layer_norm_vec(h2 + ffn, layer.ln2_g, layer.ln2_b);
  }

  Eigen::VectorXf logits = as_mat(model_.out_w).transpose() * x + as_vec(model_.out_b);
  const float mx = logits.maxCoeff();
  Eigen::VectorXf probs = (logits.array() - mx).exp();
  probs /= probs.sum();

  Step step;
  step.log_probs.resize(static_cast<size_t>(model_.config.vocab_size));
  for (int i = 0; i < model_.config.vocab_size; ++i) {
    step.log_probs[static_cast<size_t>(i)] =
        std::log(std::max(probs[i], static_cast<float>(kLogFloor)));
  }
  states_.push_back(std::move(entry));
  step.state = static_cast<int>(states_.size()) - 1;
  return step;
}

}  // namespace vtlab
