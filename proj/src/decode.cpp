// SPDX-License-Identifier: Apache-2.0
#include "vtlab/decode.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace vtlab {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

uint64_t pack_trigram(int a, int b, int c) {
  return (static_cast<uint64_t>(static_cast<uint32_t>(a)) << 42) |
         (static_cast<uint64_t>(static_cast<uint32_t>(b)) << 21) |
         static_cast<uint64_t>(static_cast<uint32_t>(c));
}

BeamHypothesis extend(const BeamHypothesis& hyp, int token, double token_logp) {
  BeamHypothesis out;
  out.tokens = hyp.tokens;
  out.tokens.push_back(token);
  out.log_prob = hyp.log_prob + token_logp;
  out.trigrams = hyp.trigrams;
  if (out.tokens.size() >= 3) {
    const size_t n = out.tokens.size();
    out.trigrams.insert(pack_trigram(out.tokens[n - 3], out.tokens[n - 2], out.tokens[n - 1]));
  }
  return out;
}

}  // namespace

bool creates_repeat_trigram(const BeamHypothesis& hyp, int candidate_id) {
  if (hyp.tokens.size() < 2) return false;
  const size_t n = hyp.tokens.size();
  return hyp.trigrams.count(pack_trigram(hyp.tokens[n - 2], hyp.tokens[n - 1], candidate_id)) > 0;
}

double length_penalized_score(double logp, size_t length, double alpha) {
  if (length < 1) throw ContractError("length_penalized_score: length must be >= 1");
  return logp / std::pow(static_cast<double>(length), alpha);
}

DecodeResult beam_search(SequenceScorer& scorer, const DecodeConfig& cfg) {
  cfg.validate();
  const int eos = scorer.eos_id();

  std::vector<BeamHypothesis> alive;
  {
    BeamHypothesis root;
    auto step = scorer.begin();
    root.state = step.state;
    root.next_log_probs = std::move(step.log_probs);
    alive.push_back(std::move(root));
  }

  std::vector<BeamHypothesis> finished;
  auto finished_score = [&](const BeamHypothesis& h) {
    return length_penalized_score(h.log_prob, h.tokens.size(), cfg.alpha);
  };

  while (!alive.empty()) {
    // Candidate expansions: (cumulative logp, hyp index, token).
    struct Candidate {
      double logp;
      size_t hyp;
      int token;
    };
    std::vector<Candidate> candidates;
    for (size_t hi = 0; hi < alive.size(); ++hi) {
      const BeamHypothesis& hyp = alive[hi];
      const auto& lp = hyp.next_log_probs;
      const int len = static_cast<int>(hyp.tokens.size());
      if (len >= cfg.max_len) {
        // forced EOS at max length
        candidates.push_back({hyp.log_prob + static_cast<double>(lp[static_cast<size_t>(eos)]),
                              hi, eos});
        continue;
      }
      for (size_t t = 0; t < lp.size(); ++t) {
        const int token = static_cast<int>(t);
        if (token == eos && len < cfg.min_len) continue;  // EOS masked to 0
        if (cfg.block_trigrams && token != eos &&
            creates_repeat_trigram(hyp, token)) {
          continue;  // expansion would repeat a trigram: score -inf
        }
        const double logp = static_cast<double>(lp[t]);
        if (std::isinf(logp) && logp < 0) continue;
        candidates.push_back({hyp.log_prob + logp, hi, token});
      }
    }
    if (candidates.empty()) break;

    const size_t keep = std::min(candidates.size(), static_cast<size_t>(cfg.beam_size));
    std::partial_sort(candidates.begin(), candidates.begin() + static_cast<long>(keep),
                      candidates.end(), [](const Candidate& a, const Candidate& b) {
                        if (a.logp != b.logp) return a.logp > b.logp;
                        if (a.hyp != b.hyp) return a.hyp < b.hyp;
                        return a.token < b.token;
                      });

    std::vector<BeamHypothesis> next_alive;
    for (size_t i = 0; i < keep; ++i) {
      const Candidate& cand = candidates[i];
      const BeamHypothesis& hyp = alive[cand.hyp];
      if (cand.token == eos) {
        BeamHypothesis done;
        done.tokens = hyp.tokens;
        done.log_prob = cand.logp;
        done.finished = true;
        finished.push_back(std::move(done));
      } else {
        BeamHypothesis ext =
            extend(hyp, cand.token, cand.logp - hyp.log_prob);
        auto step = scorer.advance(hyp.state, cand.token);
        ext.state = step.state;
        ext.next_log_probs = std::move(step.log_probs);
        next_alive.push_back(std::move(ext));
      }
    }
    alive = std::move(next_alive);

    // Stop once no alive hypothesis can still beat the best finished score:
    // log-probs only decrease, so logp / max_len^alpha bounds the future.
    if (!finished.empty() && !alive.empty()) {
      double best_fin = kNegInf;
      for (const auto& h : finished) best_fin = std::max(best_fin, finished_score(h));
      double best_bound = kNegInf;
      for (const auto& h : alive) {
        const double bound =
            h.log_prob <= 0.0
                ? h.log_prob / std::pow(static_cast<double>(cfg.max_len), cfg.alpha)
                : h.log_prob / std::pow(static_cast<double>(cfg.min_len), cfg.alpha);
        best_bound = std::max(best_bound, bound);
      }
      if (best_fin >= best_bound) break;
    }
  }

  DecodeResult result;
  if (!finished.empty()) {
    size_t best = 0;
    double best_score = kNegInf;
    for (size_t i = 0; i < finished.size(); ++i) {
      const double s = finished_score(finished[i]);
      if (s > best_score) {
        best_score = s;
        best = i;
      }
    }
    result.tokens = finished[best].tokens;
    result.log_prob = finished[best].log_prob;
    result.score = best_score;
  } else if (!alive.empty()) {
    // Beam exhausted with nothing finished; return the best alive, flagged.
    size_t best = 0;
    double best_score = kNegInf;
    for (size_t i = 0; i < alive.size(); ++i) {
      const double s = alive[i].tokens.empty()
                           ? kNegInf
                           : length_penalized_score(alive[i].log_prob, alive[i].tokens.size(),
                                                    cfg.alpha);
      if (s > best_score) {
        best_score = s;
        best = i;
      }
    }
    result.tokens = alive[best].tokens;
    result.log_prob = alive[best].log_prob;
    result.score = best_score;
    result.fallback_alive = true;
  } else {
    result.fallback_alive = true;
  }
  return result;
}

DecodeResult greedy_decode(SequenceScorer& scorer, const DecodeConfig& cfg) {
  cfg.validate();
  const int eos = scorer.eos_id();
  BeamHypothesis hyp;
  auto step = scorer.begin();
  hyp.state = step.state;
  hyp.next_log_probs = std::move(step.log_probs);
  DecodeResult result;
  while (true) {
    const auto& lp = hyp.next_log_probs;
    const int len = static_cast<int>(hyp.tokens.size());
    int best = -1;
    double best_lp = kNegInf;
    if (len >= cfg.max_len) {
      best = eos;
      best_lp = static_cast<double>(lp[static_cast<size_t>(eos)]);
    } else {
      for (size_t t = 0; t < lp.size(); ++t) {
        const int token = static_cast<int>(t);
        if (token == eos && len < cfg.min_len) continue;
        if (cfg.block_trigrams && token != eos && creates_repeat_trigram(hyp, token)) continue;
        const double l = static_cast<double>(lp[t]);
        if (std::isinf(l) && l < 0) continue;
        if (l > best_lp) {
          best_lp = l;
          best = token;
        }
      }
    }
    if (best < 0) {
      result.fallback_alive = true;
      break;
    }
    if (best == eos) {
      result.log_prob = hyp.log_prob + best_lp;
      break;
    }
    BeamHypothesis ext = extend(hyp, best, best_lp);
    auto next = scorer.advance(hyp.state, best);
    ext.state = next.state;
    ext.next_log_probs = std::move(next.log_probs);
    hyp = std::move(ext);
  }
  result.tokens = hyp.tokens;
  if (result.fallback_alive) result.log_prob = hyp.log_prob;
  result.score = result.tokens.empty()
                     ? kNegInf
                     : length_penalized_score(result.log_prob, result.tokens.size(), cfg.alpha);
  return result;
}

}  // namespace vtlab
