// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <unordered_set>
#include <vector>

#include "vtlab/errors.hpp"

namespace vtlab {

struct DecodeConfig {
  int beam_size = 5;
  double alpha = 0.95;
  int min_len = 4;
  int max_len = 50;
  bool block_trigrams = true;

  void validate() const {
    if (beam_size < 1) throw ConfigError("decode: beam_size must be >= 1");
    if (min_len < 1 || min_len >= max_len)
      throw ConfigError("decode: need 1 <= min_len < max_len");
  }
};

// Per-family presets: the transformer families decode with beam 5 / min 4,
// the recurrent baselines with beam 4 / min 5.
inline DecodeConfig transformer_decode_preset() { return DecodeConfig{5, 0.95, 4, 50, true}; }
inline DecodeConfig recurrent_decode_preset() { return DecodeConfig{4, 0.95, 5, 50, true}; }

// Incremental per-example scoring interface the beam search drives. States
// are opaque handles owned by the scorer; begin() positions the sequence
// after BOS, advance() consumes one more token. Both return log-probis over
// the output id space (which may extend past the base vocabulary for
// pointer models).
class SequenceScorer {
 public:
  struct Step {
    int state = -1;
    std::vector<float> log_probs;
  };

  virtual ~SequenceScorer() = default;
  virtual int eos_id() const = 0;
  virtual Step begin() = 0;
  virtual Step advance(int state, int token) = 0;
};

struct BeamHypothesis {
  std::vector<int> tokens;  // content tokens, no BOS/EOS
  double log_prob = 0.0;
  bool finished = false;
  std::unordered_set<uint64_t> trigrams;
  int state = -1;
  std::vector<float> next_log_probs;
};

// True iff appending candidate_id forms a trigram that already occurs in
// the hypothesis.
bool creates_repeat_trigram(const BeamHypothesis& hyp, int candidate_id);

// logp / length^alpha.
double length_penalized_score(double logp, size_t length, double alpha);

struct DecodeResult {
  std::vector<int> tokens;
  double log_prob = 0.0;
  double score = 0.0;
  bool fallback_alive = false;  // no finished hypothesis; best alive returned
};

DecodeResult beam_search(SequenceScorer& scorer, const DecodeConfig& cfg);

// Step-by-step argmax under the same masks; the beam_size=1 reference.
DecodeResult greedy_decode(SequenceScorer& scorer, const DecodeConfig& cfg);

}  // namespace vtlab
