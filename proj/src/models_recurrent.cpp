// SPDX-License-Identifier: Apache-2.0
#include "vtlab/models_recurrent.hpp"

#include <cmath>

namespace vtlab {

namespace {

Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> as_mat(
    const Tensor& t) {
  return {t.data().data(), static_cast<Eigen::Index>(t.rows()),
          static_cast<Eigen::Index>(t.cols())};
}

Eigen::Map<const Eigen::VectorXf> as_vec(const Tensor& t) {
  return {t.data().data(), static_cast<Eigen::Index>(t.size())};
}

float sigmoid_f(float x) {
  if (x >= 0.0f) return 1.0f / (1.0f + std::exp(-x));
  const float e = std::exp(x);
  return e / (1.0f + e);
}

}  // namespace

RecurrentBatch make_recurrent_batch(const std::vector<TitlePair>& pairs,
                                    const Vocabulary& vocab, bool use_metadata_augment) {
  if (pairs.empty()) throw ContractError("make_recurrent_batch: empty batch");
  RecurrentBatch batch;
  batch.batch = pairs.size();
  std::vector<std::vector<std::string>> srcs, tgts;
  for (const auto& pair : pairs) {
    srcs.push_back(
        normalize_tokens(use_metadata_augment ? augment_metadata(pair) : pair.web));
    tgts.push_back(normalize_tokens(pair.voice));
    batch.src_len = std::max(batch.src_len, srcs.back().size());
    batch.tgt_len = std::max(batch.tgt_len, tgts.back().size() + 1);  // +1 for EOS
  }
  batch.src_len = std::max<size_t>(batch.src_len, 1);

  std::map<std::string, int> oov_ids;  // per-batch temporary ids
  const auto extended_id = [&](const std::string& word) {
    const int known = vocab.id(word);
    if (known != kUnkId) return known;
    auto it = oov_ids.find(word);
    if (it != oov_ids.end()) return it->second;
    const int id = vocab.size() + static_cast<int>(batch.oov_words.size());
    oov_ids.emplace(word, id);
    batch.oov_words.push_back(word);
    return id;
  };

  batch.src.assign(batch.batch * batch.src_len, kPadId);
  batch.src_extended.assign(batch.batch * batch.src_len, kPadId);
  batch.tgt_in.assign(batch.batch * batch.tgt_len, kPadId);
  batch.tgt_out.assign(batch.batch * batch.tgt_len, -1);
  batch.tgt_out_extended.assign(batch.batch * batch.tgt_len, -1);
  for (size_t b = 0; b < batch.batch; ++b) {
    const auto& src = srcs[b];
    batch.src_lengths.push_back(static_cast<int>(std::max<size_t>(src.size(), 1)));
    for (size_t i = 0; i < src.size(); ++i) {
      batch.src[b * batch.src_len + i] = vocab.id(src[i]);
      batch.src_extended[b * batch.src_len + i] = extended_id(src[i]);
    }
    const auto& tgt = tgts[b];
    batch.tgt_in[b * batch.tgt_len] = kBosId;
    for (size_t i = 0; i < tgt.size(); ++i) {
      const int id = vocab.id(tgt[i]);
      if (i + 1 < batch.tgt_len) batch.tgt_in[b * batch.tgt_len + i + 1] = id;
      batch.tgt_out[b * batch.tgt_len + i] = id;
      // A target OOV is copyable when it occurs in this example's source.
      int ext = id;
      if (id == kUnkId) {
        auto it = oov_ids.find(tgt[i]);
        if (it != oov_ids.end()) {
          bool in_src = false;
          for (size_t j = 0; j < src.size() && !in_src; ++j) in_src = src[j] == tgt[i];
          if (in_src) ext = it->second;
        }
      }
      batch.tgt_out_extended[b * batch.tgt_len + i] = ext;
    }
    batch.tgt_out[b * batch.tgt_len + tgt.size()] = kEosId;
    batch.tgt_out_extended[b * batch.tgt_len + tgt.size()] = kEosId;
  }
  batch.extended_size = static_cast<size_t>(vocab.size()) + batch.oov_words.size();
  return batch;
}

RecurrentScorer::RecurrentScorer(const RecurrentModel& model,
                                 const std::vector<std::string>& src_tokens,
                                 const Vocabulary& vocab)
    : model_(model), vocab_(vocab) {
  const auto tokens = normalize_tokens(src_tokens);
  std::map<std::string, int> oov_ids;
  for (const auto& word : tokens) {
    const int id = vocab.id(word);
    src_ids_.push_back(id);
    if (id == kUnkId && model_.config.pointer) {
      auto it = oov_ids.find(word);
      int ext;
      if (it == oov_ids.end()) {
        ext = vocab.size() + static_cast<int>(oov_words_.size());
        oov_ids.emplace(word, ext);
        oov_words_.push_back(word);
      } else {
        ext = it->second;
      }
      src_extended_.push_back(ext);
    } else {
      src_extended_.push_back(id);
    }
  }
  if (src_ids_.empty()) {
    src_ids_.push_back(kUnkId);
    src_extended_.push_back(kUnkId);
  }
  output_size_ = static_cast<size_t>(vocab.size()) + oov_words_.size();

  const int n = static_cast<int>(src_ids_.size());
  const int hidden = model_.config.hidden_dim;
  const auto emb = as_mat(model_.embedding);
  const auto wx = as_mat(model_.encoder_cell.w_x);
  const auto wh = as_mat(model_.encoder_cell.w_h);
  const auto bias = as_vec(model_.encoder_cell.b);
  Eigen::VectorXf h = Eigen::VectorXf::Zero(hidden);
  Eigen::VectorXf c = Eigen::VectorXf::Zero(hidden);
  enc_hidden_.resize(n, hidden);
  for (int t = 0; t < n; ++t) {
    const Eigen::VectorXf x = emb.row(src_ids_[static_cast<size_t>(t)]).transpose();
    Eigen::VectorXf z = wx.transpose() * x + wh.transpose() * h + bias;
    for (int j = 0; j < hidden; ++j) {
      const float gi = sigmoid_f(z[j]);
      const float gf = sigmoid_f(z[hidden + j]);
      const float gg = std::tanh(z[2 * hidden + j]);
      const float go = sigmoid_f(z[3 * hidden + j]);
      c[j] = gf * c[j] + gi * gg;
      h[j] = go * std::tanh(c[j]);
    }
    enc_hidden_.row(t) = h.transpose();
  }
  enc_proj_ = enc_hidden_ * as_mat(model_.attn_w_h);

  const Eigen::VectorXf s0 =
      as_mat(model_.init_w_h).transpose() * h + as_vec(model_.init_b_h);
  const Eigen::VectorXf c0 =
      as_mat(model_.init_w_c).transpose() * c + as_vec(model_.init_b_c);
  init_h_.assign(s0.data(), s0.data() + hidden);
  init_c_.assign(c0.data(), c0.data() + hidden);
}

RecurrentScorer::Step RecurrentScorer::begin() {
  State init{init_h_, init_c_};
  return step_from(init, kBosId);
}

RecurrentScorer::Step RecurrentScorer::advance(int state, int token) {
  return step_from(states_[static_cast<size_t>(state)], token);
}

RecurrentScorer::Step RecurrentScorer::step_from(const State& state, int prev_token) {
  State next;
  Step step;
  step.log_probs = distribution(state, prev_token, next);
  states_.push_back(std::move(next));
  step.state = static_cast<int>(states_.size()) - 1;
  return step;
}

std::vector<float> RecurrentScorer::distribution(const State& state, int prev_token,
                                                 State& next) const {
  const int hidden = model_.config.hidden_dim;
  const int vocab_size = model_.config.vocab_size;
  // Extended (copied-OOV) ids feed back into the decoder as UNK.
  const int in_token = prev_token >= vocab_size ? kUnkId : prev_token;
  const auto emb = as_mat(model_.embedding);
  const Eigen::VectorXf x = emb.row(in_token).transpose();
  Eigen::Map<const Eigen::VectorXf> h_prev(state.h.data(), hidden);
  Eigen::Map<const Eigen::VectorXf> c_prev(state.c.data(), hidden);

  Eigen::VectorXf z = as_mat(model_.decoder_cell.w_x).transpose() * x +
                      as_mat(model_.decoder_cell.w_h).transpose() * h_prev +
                      as_vec(model_.decoder_cell.b);
  Eigen::VectorXf h(hidden), c(hidden);
  for (int j = 0; j < hidden; ++j) {
    const float gi = sigmoid_f(z[j]);
    const float gf = sigmoid_f(z[hidden + j]);
    const float gg = std::tanh(z[2 * hidden + j]);
    const float go = sigmoid_f(z[3 * hidden + j]);
    c[j] = gf * c_prev[j] + gi * gg;
    h[j] = go * std::tanh(c[j]);
  }
  next.h.assign(h.data(), h.data() + hidden);
  next.c.assign(c.data(), c.data() + hidden);

  // attention
  const int n = static_cast<int>(enc_hidden_.rows());
  const Eigen::VectorXf query = as_mat(model_.attn_w_s).transpose() * h;
  const auto attn_v = as_vec(model_.attn_v);
  const auto attn_b = as_vec(model_.attn_b);
  Eigen::VectorXf scores(n);
  for (int i = 0; i < n; ++i) {
    Eigen::VectorXf pre = enc_proj_.row(i).transpose() + query + attn_b;
    scores[i] = attn_v.dot(pre.array().tanh().matrix());
  }
  const float mx = scores.maxCoeff();
  Eigen::VectorXf attn = (scores.array() - mx).exp();
  attn /= attn.sum();
  const Eigen::VectorXf context = enc_hidden_.transpose() * attn;

  Eigen::VectorXf cat(2 * hidden);
  cat << h, context;
  const Eigen::VectorXf out_hidden =
      as_mat(model_.out_w1).transpose() * cat + as_vec(model_.out_b1);
  Eigen::VectorXf logits =
      as_mat(model_.out_w2).transpose() * out_hidden + as_vec(model_.out_b2);
  const float lmax = logits.maxCoeff();
  Eigen::VectorXf probs = (logits.array() - lmax).exp();
  probs /= probs.sum();

  std::vector<float> out(output_size_, 0.0f);
  if (model_.config.pointer) {
    const float p_gen = sigmoid_f(as_vec(model_.ptr_w_hstar).dot(context) +
                                  as_vec(model_.ptr_w_s).dot(h) +
                                  as_vec(model_.ptr_w_x).dot(x) + model_.ptr_b.at(0));
    for (int i = 0; i < vocab_size; ++i) out[static_cast<size_t>(i)] = p_gen * probs[i];
    for (size_t i = 0; i < src_extended_.size(); ++i) {
      out[static_cast<size_t>(src_extended_[i])] += (1.0f - p_gen) * attn[static_cast<int>(i)];
    }
  } else {
    for (int i = 0; i < vocab_size; ++i) out[static_cast<size_t>(i)] = probs[i];
  }
  for (auto& p : out) p = std::log(std::max(p, static_cast<float>(kLogFloor)));
  return out;
}

std::string RecurrentScorer::token_text(int id) const {
  if (id < vocab_.size()) return vocab_.token(id);
  const size_t i = static_cast<size_t>(id - vocab_.size());
  if (i < oov_words_.size()) return oov_words_[i];
  throw std::out_of_range("token_text: id beyond extended vocabulary");
}

}  // namespace vtlab
