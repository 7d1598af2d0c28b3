// SPDX-License-Identifier: Apache-2.0
#include "vtlab/vocab.hpp"

#include <fstream>
#include <map>

#include "vtlab/errors.hpp"

namespace vtlab {

namespace {
const char* kSpecials[kNumSpecials] = {"<PAD>", "<UNK>", "<BOS>", "<EOS>",
                                       "<CLS>", "<SEP>", "<MASK>"};
}

const char* special_token(int id) {
  if (id < 0 || id >= kNumSpecials) throw ContractError("special_token: bad id");
  return kSpecials[id];
}

Vocabulary::Vocabulary() {
  for (int i = 0; i < kNumSpecials; ++i) add(kSpecials[i]);
}

int Vocabulary::add(const std::string& token) {
  auto it = token_to_id_.find(token);
  if (it != token_to_id_.end()) return it->second;
  const int id = static_cast<int>(id_to_token_.size());
  token_to_id_.emplace(token, id);
  id_to_token_.push_back(token);
  return id;
}

int Vocabulary::id(const std::string& token) const {
  auto it = token_to_id_.find(token);
  return it == token_to_id_.end() ? kUnkId : it->second;
}

bool Vocabulary::contains(const std::string& token) const {
  return token_to_id_.count(token) > 0;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || id >= size()) {
    throw std::out_of_range("vocabulary: id " + std::to_string(id) + " out of range");
  }
  return id_to_token_[static_cast<size_t>(id)];
}

std::vector<int> Vocabulary::encode(const std::vector<std::string>& tokens) const {
  std::vector<int> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(id(t));
  return ids;
}

std::vector<std::string> Vocabulary::decode(const std::vector<int>& ids) const {
  std::vector<std::string> tokens;
  tokens.reserve(ids.size());
  for (int i : ids) tokens.push_back(token(i));
  return tokens;
}

void Vocabulary::save(const std::string& path) const {
  std::ofstream os(path);
  if (!os) throw DataError("vocabulary: cannot write " + path);
  os << "vtlab-vocab v1\n";
  for (const auto& t : id_to_token_) os << t << "\n";
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("vocabulary: cannot open " + path);
  std::string line;
  if (!std::getline(is, line) || line != "vtlab-vocab v1") {
    throw DataError("vocabulary: bad header in " + path);
  }
  Vocabulary vocab;
  int idx = 0;
  while (std::getline(is, line)) {
    if (idx < kNumSpecials) {
      if (line != kSpecials[idx]) throw DataError("vocabulary: specials corrupted in " + path);
    } else {
      vocab.add(line);
    }
    ++idx;
  }
  if (idx < kNumSpecials) throw DataError("vocabulary: truncated file " + path);
  return vocab;
}

Vocabulary build_vocab(const std::vector<std::vector<std::string>>& token_seqs, int min_freq) {
  if (token_seqs.empty()) throw ConfigError("build_vocab: empty corpus");
  // Ordered map keeps ids independent of hash iteration order.
  std::map<std::string, int> freq;
  for (const auto& seq : token_seqs)
    for (const auto& t : seq) freq[t]++;
  Vocabulary vocab;
  for (const auto& [token, count] : freq) {
    if (count >= min_freq) vocab.add(token);
  }
  return vocab;
}

}  // namespace vtlab
