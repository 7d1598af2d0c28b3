// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <set>
#include <tuple>

#include "vtlab/decode.hpp"
#include "vtlab/rng.hpp"
#include "vtlab/vocab.hpp"

using namespace vtlab;

namespace {

// Toy scorer with a fixed log-prob table per context hash; deterministic and
// stateless beyond the consumed-token count. sharpness scales the logits:
// higher values give the peaked distributions trained models produce.
class TableScorer : public SequenceScorer {
 public:
  TableScorer(int vocab, uint64_t seed, double eos_boost = 0.0, double sharpness = 1.0)
      : vocab_(vocab), seed_(seed), eos_boost_(eos_boost), sharpness_(sharpness) {}

  int eos_id() const override { return kEosId; }

  Step begin() override { return make_step(0, kBosId); }
  Step advance(int state, int token) override {
    const History& h = history_[static_cast<size_t>(state)];
    return make_step(h.hash * 1099511628211ULL ^ static_cast<uint64_t>(token + 1), token);
  }

 private:
  struct History {
    uint64_t hash;
  };
  Step make_step(uint64_t context_hash, int last_token) {
    Rng rng(seed_ ^ context_hash ^ static_cast<uint64_t>(last_token * 2654435761u));
    std::vector<float> logits(static_cast<size_t>(vocab_));
    for (auto& v : logits) v = static_cast<float>(rng.uniform(-3.0, 3.0) * sharpness_);
    logits[kEosId] += static_cast<float>(eos_boost_);
    logits[kPadId] = -30.0f;
    float mx = logits[0];
    for (float v : logits) mx = std::max(mx, v);
    double z = 0.0;
    for (float v : logits) z += std::exp(static_cast<double>(v - mx));
    Step step;
    step.log_probs.resize(logits.size());
    for (size_t i = 0; i < logits.size(); ++i) {
      step.log_probs[i] =
          static_cast<float>(static_cast<double>(logits[i] - mx) - std::log(z));
    }
    history_.push_back({context_hash});
    step.state = static_cast<int>(history_.size()) - 1;
    return step;
  }

  int vocab_;
  uint64_t seed_;
  double eos_boost_;
  double sharpness_;
  std::vector<History> history_;
};

// Always ranks EOS first.
class EosFirstScorer : public SequenceScorer {
 public:
  explicit EosFirstScorer(int vocab) : vocab_(vocab) {}
  int eos_id() const override { return kEosId; }
  Step begin() override { return make_step(); }
  Step advance(int, int) override { return make_step(); }

 private:
  Step make_step() {
    Step step;
    step.log_probs.assign(static_cast<size_t>(vocab_), -5.0f);
    step.log_probs[kEosId] = -0.1f;
    step.log_probs[10] = -1.0f;
    step.log_probs[11] = -1.5f;
    step.log_probs[12] = -2.0f;
    step.log_probs[13] = -2.5f;
    step.state = counter_++;
    return step;
  }
  int vocab_;
  int counter_ = 0;
};

// Never emits EOS.
class NoEosScorer : public SequenceScorer {
 public:
  explicit NoEosScorer(int vocab) : vocab_(vocab) {}
  int eos_id() const override { return kEosId; }
  Step begin() override { return make_step(0); }
  Step advance(int state, int token) override { return make_step(state * 31 + token); }

 private:
  Step make_step(int salt) {
    Rng rng(static_cast<uint64_t>(salt) + 99);
    Step step;
    step.log_probs.assign(static_cast<size_t>(vocab_), 0.0f);
    for (auto& v : step.log_probs) v = static_cast<float>(rng.uniform(-4.0, -0.5));
    step.log_probs[kEosId] = -std::numeric_limits<float>::infinity();
    step.state = counter_++;
    return step;
  }
  int vocab_;
  int counter_ = 0;
};

}  // namespace

TEST_CASE("creates_repeat_trigram examples") {
  BeamHypothesis hyp;
  hyp.tokens = {7, 8, 9, 7, 8};
  // trigram set built the way beam_search builds it
  auto rebuild = [](BeamHypothesis& h) {
    h.trigrams.clear();
    for (size_t i = 0; i + 2 < h.tokens.size(); ++i) {
      const uint64_t key = (static_cast<uint64_t>(h.tokens[i]) << 42) |
                           (static_cast<uint64_t>(h.tokens[i + 1]) << 21) |
                           static_cast<uint64_t>(h.tokens[i + 2]);
      h.trigrams.insert(key);
    }
  };
  rebuild(hyp);
  CHECK(creates_repeat_trigram(hyp, 9));
  CHECK(!creates_repeat_trigram(hyp, 10));

  BeamHypothesis tiny;
  tiny.tokens = {4};
  CHECK(!creates_repeat_trigram(tiny, 4));
  tiny.tokens = {};
  CHECK(!creates_repeat_trigram(tiny, 4));
}

TEST_CASE("trigram detector agrees with brute-force substring scan") {
  Rng rng(2024);
  for (int trial = 0; trial < 10000; ++trial) {
    BeamHypothesis hyp;
    const size_t len = rng.uniform_index(12);
    for (size_t i = 0; i < len; ++i) hyp.tokens.push_back(static_cast<int>(rng.uniform_index(4)));
    for (size_t i = 0; i + 2 < hyp.tokens.size(); ++i) {
      const uint64_t key = (static_cast<uint64_t>(hyp.tokens[i]) << 42) |
                           (static_cast<uint64_t>(hyp.tokens[i + 1]) << 21) |
                           static_cast<uint64_t>(hyp.tokens[i + 2]);
      hyp.trigrams.insert(key);
    }
    const int candidate = static_cast<int>(rng.uniform_index(4));
    bool brute = false;
    if (hyp.tokens.size() >= 2) {
      std::vector<int> ext = hyp.tokens;
      ext.push_back(candidate);
      const size_t n = ext.size();
      for (size_t i = 0; i + 3 < n; ++i) {
        if (ext[i] == ext[n - 3] && ext[i + 1] == ext[n - 2] && ext[i + 2] == ext[n - 1]) {
          brute = true;
          break;
        }
      }
    }
    CHECK(creates_repeat_trigram(hyp, candidate) == brute);
  }
}

TEST_CASE("length_penalized_score") {
  CHECK(length_penalized_score(-7.5, 3, 0.0) == doctest::Approx(-7.5));
  CHECK(length_penalized_score(-10.0, 10, 1.0) == doctest::Approx(-1.0));
  CHECK_THROWS_AS(length_penalized_score(-1.0, 0, 0.95), ContractError);

  SUBCASE("equal logp: longer hypotheses score higher for any alpha > 0") {
    for (double alpha : {0.25, 0.5, 0.95, 1.0, 2.0}) {
      const double short_score = length_penalized_score(-6.0, 4, alpha);
      const double long_score = length_penalized_score(-6.0, 9, alpha);
      CHECK(long_score > short_score);
    }
  }
}

TEST_CASE("beam_size 1 equals the greedy oracle exactly") {
  for (uint64_t seed = 1; seed <= 25; ++seed) {
    TableScorer beam_model(24, seed, 1.2);
    TableScorer greedy_model(24, seed, 1.2);
    DecodeConfig cfg;
    cfg.beam_size = 1;
    cfg.min_len = 2;
    cfg.max_len = 12;
    const DecodeResult beam = beam_search(beam_model, cfg);
    const DecodeResult greedy = greedy_decode(greedy_model, cfg);
    CHECK(beam.tokens == greedy.tokens);
    CHECK(beam.log_prob == doctest::Approx(greedy.log_prob).epsilon(1e-9));
  }
}

TEST_CASE("a model that always ranks EOS first emits exactly min_len tokens") {
  EosFirstScorer scorer(20);
  DecodeConfig cfg;  // defaults: min 4
  const DecodeResult result = beam_search(scorer, cfg);
  CHECK(result.tokens.size() == 4);
  CHECK(!result.fallback_alive);
}

TEST_CASE("a model that never emits EOS truncates at max_len") {
  NoEosScorer scorer(16);
  DecodeConfig cfg;  // defaults: max 50
  const DecodeResult result = beam_search(scorer, cfg);
  CHECK(result.tokens.size() == 50);
}

TEST_CASE("decoded outputs respect length bounds and trigram blocking") {
  for (uint64_t seed = 100; seed < 160; ++seed) {
    TableScorer scorer(12, seed, 0.5);  // tiny vocab provokes repeats
    DecodeConfig cfg;
    cfg.beam_size = 4;
    cfg.min_len = 4;
    cfg.max_len = 18;
    const DecodeResult result = beam_search(scorer, cfg);
    CHECK(result.tokens.size() >= 4);
    CHECK(result.tokens.size() <= 18);
    // no repeated trigrams anywhere in the output
    std::set<std::tuple<int, int, int>> seen;
    bool repeat = false;
    for (size_t i = 0; i + 2 < result.tokens.size(); ++i) {
      const auto tri = std::make_tuple(result.tokens[i], result.tokens[i + 1],
                                       result.tokens[i + 2]);
      if (!seen.insert(tri).second) repeat = true;
    }
    CHECK(!repeat);
  }
}

namespace {

// Margin-separated model: each context has one dominant continuation, the
// regime trained template models operate in.
class MarginScorer : public SequenceScorer {
 public:
  MarginScorer(int vocab, uint64_t seed, double margin)
      : vocab_(vocab), seed_(seed), margin_(margin) {}
  int eos_id() const override { return kEosId; }
  Step begin() override { return make_step(0); }
  Step advance(int state, int token) override {
    return make_step(hash_[static_cast<size_t>(state)] * 6364136223846793005ULL +
                     static_cast<uint64_t>(token + 1));
  }

 private:
  Step make_step(uint64_t ctx) {
    Rng rng(seed_ ^ ctx);
    std::vector<double> logits(static_cast<size_t>(vocab_));
    for (auto& v : logits) v = rng.uniform(-1.0, 1.0);
    const size_t top = kNumSpecials + rng.uniform_index(static_cast<size_t>(vocab_) -
                                                        kNumSpecials);
    logits[top] += margin_;
    if (rng.uniform01() < 0.2) logits[kEosId] = logits[top] + 1.0;  // clear stop signal
    double mx = logits[0];
    for (double v : logits) mx = std::max(mx, v);
    double z = 0.0;
    for (double v : logits) z += std::exp(v - mx);
    Step step;
    step.log_probs.resize(logits.size());
    for (size_t i = 0; i < logits.size(); ++i)
      step.log_probs[i] = static_cast<float>(logits[i] - mx - std::log(z));
    hash_.push_back(ctx);
    step.state = static_cast<int>(hash_.size()) - 1;
    return step;
  }
  int vocab_;
  uint64_t seed_;
  double margin_;
  std::vector<uint64_t> hash_;
};

}  // namespace

TEST_CASE("increasing beam size does not lower the returned score") {
  // Exact monotone-improvement on margin-separated models. (For adversarial
  // near-uniform tables the property cannot hold for any standard beam
  // pruning; see the adversarial regression bound below.)
  for (uint64_t seed = 300; seed < 360; ++seed) {
    DecodeConfig cfg;
    cfg.min_len = 2;
    cfg.max_len = 14;
    double prev = -std::numeric_limits<double>::infinity();
    for (int beam : {1, 2, 4, 8}) {
      MarginScorer scorer(18, seed, 6.0);
      cfg.beam_size = beam;
      const DecodeResult result = beam_search(scorer, cfg);
      CHECK(result.score >= prev - 1e-12);
      prev = result.score;
    }
  }
}

TEST_CASE("monotone improvement holds for nearly all peaked random models") {
  int violations = 0;
  for (uint64_t seed = 1; seed <= 200; ++seed) {
    DecodeConfig cfg;
    cfg.min_len = 2;
    cfg.max_len = 14;
    double prev = -std::numeric_limits<double>::infinity();
    for (int beam : {1, 2, 4, 8}) {
      TableScorer scorer(18, seed, 4.0, 6.0);
      cfg.beam_size = beam;
      const DecodeResult result = beam_search(scorer, cfg);
      if (result.score < prev - 1e-12) {
        ++violations;
        break;
      }
      prev = result.score;
    }
  }
  CHECK(violations <= 6);  // inherent beam-pruning counterexamples, not regressions
}

TEST_CASE("decode config validation") {
  DecodeConfig bad;
  bad.min_len = 10;
  bad.max_len = 5;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  DecodeConfig zero;
  zero.beam_size = 0;
  CHECK_THROWS_AS(zero.validate(), ConfigError);
  CHECK(transformer_decode_preset().beam_size == 5);
  CHECK(transformer_decode_preset().min_len == 4);
  CHECK(transformer_decode_preset().alpha == doctest::Approx(0.95));
  CHECK(recurrent_decode_preset().beam_size == 4);
  CHECK(recurrent_decode_preset().min_len == 5);
}
