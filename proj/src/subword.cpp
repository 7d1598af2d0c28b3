// SPDX-License-Identifier: Apache-2.0
#include "vtlab/subword.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "vtlab/errors.hpp"

namespace vtlab {

namespace {

std::string strip_marker(const std::string& piece) {
  if (piece.rfind(SubwordModel::kMarker, 0) == 0) return piece.substr(2);
  return piece;
}

std::string merge_symbols(const std::string& left, const std::string& right) {
  return left + strip_marker(right);
}

std::vector<std::string> word_to_base(const std::string& word) {
  std::vector<std::string> syms;
  syms.reserve(word.size());
  for (size_t i = 0; i < word.size(); ++i) {
    std::string s(1, word[i]);
    if (i > 0) s = std::string(SubwordModel::kMarker) + s;
    syms.push_back(std::move(s));
  }
  return syms;
}

std::string escape_piece(const std::string& piece) {
  std::string out;
  for (unsigned char c : piece) {
    if (c >= 33 && c <= 126 && c != '\\') {
      out.push_back(static_cast<char>(c));
    } else {
      char buf[8];
      std::snprintf(buf, sizeof buf, "\\x%02x", c);
      out += buf;
    }
  }
  return out;
}

std::string unescape_piece(const std::string& text) {
  std::string out;
  for (size_t i = 0; i < text.size();) {
    if (text[i] == '\\' && i + 3 < text.size() && text[i + 1] == 'x') {
      out.push_back(static_cast<char>(std::stoi(text.substr(i + 2, 2), nullptr, 16)));
      i += 4;
    } else {
      out.push_back(text[i]);
      ++i;
    }
  }
  return out;
}

std::vector<std::string> split_ws(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream is(text);
  std::string w;
  while (is >> w) out.push_back(w);
  return out;
}

}  // namespace

void SubwordModel::build_base() {
  for (int c = 0; c < 256; ++c) {
    const std::string ch(1, static_cast<char>(c));
    vocab_.add(ch);
    vocab_.add(std::string(kMarker) + ch);
  }
}

void SubwordModel::index_merges() {
  merge_rank_.clear();
  for (size_t i = 0; i < merges_.size(); ++i) {
    merge_rank_[merges_[i].first + " " + merges_[i].second] = static_cast<int>(i);
  }
}

SubwordModel SubwordModel::train(const std::vector<std::vector<std::string>>& token_seqs,
                                 int target_vocab_size) {
  SubwordModel model;
  model.build_base();

  // Word frequencies; ordered map keeps training deterministic.
  std::map<std::string, int64_t> word_freq;
  for (const auto& seq : token_seqs)
    for (const auto& w : seq)
      if (!w.empty()) word_freq[w]++;

  std::vector<std::vector<std::string>> words;
  std::vector<int64_t> freqs;
  for (const auto& [w, f] : word_freq) {
    words.push_back(word_to_base(w));
    freqs.push_back(f);
  }

  while (model.vocab_.size() < target_vocab_size) {
    std::map<std::pair<std::string, std::string>, int64_t> pair_freq;
    for (size_t wi = 0; wi < words.size(); ++wi) {
      const auto& syms = words[wi];
      for (size_t i = 0; i + 1 < syms.size(); ++i) {
        pair_freq[{syms[i], syms[i + 1]}] += freqs[wi];
      }
    }
    if (pair_freq.empty()) break;
    auto best = pair_freq.begin();
    for (auto it = pair_freq.begin(); it != pair_freq.end(); ++it) {
      if (it->second > best->second) best = it;  // ties resolve to first key order
    }
    if (best->second < 2) break;
    const auto [left, right] = best->first;
    const std::string merged = merge_symbols(left, right);
    model.merges_.emplace_back(left, right);
    model.vocab_.add(merged);
    for (auto& syms : words) {
      for (size_t i = 0; i + 1 < syms.size();) {
        if (syms[i] == left && syms[i + 1] == right) {
          syms[i] = merged;
          syms.erase(syms.begin() + static_cast<long>(i) + 1);
        } else {
          ++i;
        }
      }
    }
  }
  model.index_merges();
  return model;
}

std::vector<std::string> SubwordModel::encode_word(const std::string& word) const {
  std::vector<std::string> syms = word_to_base(word);
  while (syms.size() > 1) {
    int best_rank = -1;
    size_t best_pos = 0;
    for (size_t i = 0; i + 1 < syms.size(); ++i) {
      auto it = merge_rank_.find(syms[i] + " " + syms[i + 1]);
      if (it != merge_rank_.end() && (best_rank < 0 || it->second < best_rank)) {
        best_rank = it->second;
        best_pos = i;
      }
    }
    if (best_rank < 0) break;
    syms[best_pos] = merge_symbols(syms[best_pos], syms[best_pos + 1]);
    syms.erase(syms.begin() + static_cast<long>(best_pos) + 1);
  }
  return syms;
}

std::vector<int> SubwordModel::encode(const std::string& text) const {
  std::vector<int> ids;
  for (const auto& word : split_ws(text)) {
    for (const auto& piece : encode_word(word)) {
      ids.push_back(vocab_.id(piece));
    }
  }
  return ids;
}

std::string SubwordModel::decode(const std::vector<int>& ids) const {
  std::string out;
  for (int id : ids) {
    if (id < kNumSpecials) continue;
    const std::string& piece = vocab_.token(id);
    const bool continuation = piece.rfind(kMarker, 0) == 0;
    if (!continuation && !out.empty()) out.push_back(' ');
    out += strip_marker(piece);
  }
  return out;
}

void SubwordModel::save(const std::string& path) const {
  std::ofstream os(path);
  if (!os) throw DataError("subword: cannot write " + path);
  os << "vtlab-subword v1\n";
  os << "pieces " << (vocab_.size() - kNumSpecials) << "\n";
  for (int i = kNumSpecials; i < vocab_.size(); ++i) os << escape_piece(vocab_.token(i)) << "\n";
  os << "merges " << merges_.size() << "\n";
  for (const auto& [l, r] : merges_) os << escape_piece(l) << " " << escape_piece(r) << "\n";
}

SubwordModel SubwordModel::load(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("subword: cannot open " + path);
  std::string line;
  if (!std::getline(is, line) || line != "vtlab-subword v1") {
    throw DataError("subword: bad header in " + path);
  }
  SubwordModel model;
  std::string tag;
  size_t count = 0;
  is >> tag >> count;
  if (tag != "pieces") throw DataError("subword: expected piece count in " + path);
  std::getline(is, line);
  for (size_t i = 0; i < count; ++i) {
    if (!std::getline(is, line)) throw DataError("subword: truncated pieces in " + path);
    model.vocab_.add(unescape_piece(line));
  }
  is >> tag >> count;
  if (tag != "merges") throw DataError("subword: expected merge count in " + path);
  std::getline(is, line);
  for (size_t i = 0; i < count; ++i) {
    if (!std::getline(is, line)) throw DataError("subword: truncated merges in " + path);
    const size_t sp = line.find(' ');
    if (sp == std::string::npos) throw DataError("subword: malformed merge line in " + path);
    model.merges_.emplace_back(unescape_piece(line.substr(0, sp)),
                               unescape_piece(line.substr(sp + 1)));
  }
  model.index_merges();
  return model;
}

}  // namespace vtlab
