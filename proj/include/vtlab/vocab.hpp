// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <unordered_map>
#include <vector>

namespace vtlab {

// Reserved special token ids, fixed across every vocabulary.
enum SpecialId : int {
  kPadId = 0,
  kUnkId = 1,
  kBosId = 2,
  kEosId = 3,
  kClsId = 4,
  kSepId = 5,
  kMaskId = 6,
};
constexpr int kNumSpecials = 7;

const char* special_token(int id);

// Bidirectional token<->id map with the reserved specials at fixed ids.
class Vocabulary {
 public:
  Vocabulary();

  // Adds a token if absent; returns its id either way.
  int add(const std::string& token);

  int id(const std::string& token) const;        // kUnkId when unknown
  bool contains(const std::string& token) const;
  const std::string& token(int id) const;        // throws on out-of-range
  int size() const { return static_cast<int>(id_to_token_.size()); }

  std::vector<int> encode(const std::vector<std::string>& tokens) const;
  std::vector<std::string> decode(const std::vector<int>& ids) const;

  void save(const std::string& path) const;
  static Vocabulary load(const std::string& path);

 private:
  std::unordered_map<std::string, int> token_to_id_;
  std::vector<std::string> id_to_token_;
};

// Frequency-thresholded vocabulary over whitespace tokens. Tokens seen
// fewer than min_freq times map to UNK.
Vocabulary build_vocab(const std::vector<std::vector<std::string>>& token_seqs, int min_freq);

}  // namespace vtlab
