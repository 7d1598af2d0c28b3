// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "vtlab/vocab.hpp"

namespace vtlab {

// Byte-level BPE with a wordpiece-style continuation marker ("##" on every
// non-initial piece). The base inventory covers all 256 byte values, so any
// word decomposes into at least one piece and encoding never produces UNK;
// decode(encode(s)) == s for whitespace-normalized s.
class SubwordModel {
 public:
  static constexpr const char* kMarker = "##";

  // Learns merges from word frequencies until the piece vocabulary reaches
  // target_vocab_size or no pair occurs at least twice.
  static SubwordModel train(const std::vector<std::vector<std::string>>& token_seqs,
                            int target_vocab_size);

  std::vector<std::string> encode_word(const std::string& word) const;
  std::vector<int> encode(const std::string& text) const;
  std::string decode(const std::vector<int>& ids) const;

  const Vocabulary& vocab() const { return vocab_; }
  size_t merge_count() const { return merges_.size(); }

  void save(const std::string& path) const;
  static SubwordModel load(const std::string& path);

 private:
  SubwordModel() = default;
  void build_base();
  void index_merges();

  Vocabulary vocab_;                                   // specials + pieces
  std::vector<std::pair<std::string, std::string>> merges_;  // in priority order
  std::unordered_map<std::string, int> merge_rank_;    // "x y" -> rank
};

}  // namespace vtlab
