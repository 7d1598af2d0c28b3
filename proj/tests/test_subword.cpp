// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <filesystem>

#include "vtlab/corpus.hpp"
#include "vtlab/subword.hpp"

using namespace vtlab;

namespace {

SubwordModel trained_model(int vocab_size = 1200) {
  GeneratorConfig config;
  config.size = 600;
  config.seed = 17;
  const auto pairs = generate_corpus(config);
  std::vector<std::vector<std::string>> seqs;
  for (const auto& p : pairs) {
    seqs.push_back(normalize_tokens(p.web));
    seqs.push_back(p.voice);
  }
  return SubwordModel::train(seqs, vocab_size);
}

}  // namespace

TEST_CASE("frequent training words become single pieces") {
  SubwordModel model = trained_model();
  // template words occur in nearly every title
  CHECK(model.encode_word("of").size() == 1);
  CHECK(model.encode_word("ounce").size() == 1);
  CHECK(model.encode_word("pound").size() == 1);
}

TEST_CASE("novel words decompose into pieces and round-trip, never UNK") {
  SubwordModel model = trained_model();
  const auto pieces = model.encode_word("zorblax");
  CHECK(pieces.size() > 1);
  const auto ids = model.encode("zorblax");
  for (int id : ids) CHECK(id != kUnkId);
  CHECK(model.decode(ids) == "zorblax");
}

TEST_CASE("empty string encodes to the empty sequence") {
  SubwordModel model = trained_model();
  CHECK(model.encode("").empty());
  CHECK(model.encode("   ").empty());
}

TEST_CASE("subword round-trip over generated titles") {
  SubwordModel model = trained_model();
  GeneratorConfig config;
  config.size = 300;
  config.seed = 99;  // different seed than training: includes unseen combos
  for (const auto& pair : generate_corpus(config)) {
    std::string voice;
    for (size_t i = 0; i < pair.voice.size(); ++i) {
      if (i) voice.push_back(' ');
      voice += pair.voice[i];
    }
    CHECK(model.decode(model.encode(voice)) == voice);
  }
}

TEST_CASE("round-trip holds for arbitrary whitespace-normalized byte strings") {
  SubwordModel model = trained_model(300);  // few merges: exercises base bytes
  Rng rng(1234);
  for (int trial = 0; trial < 200; ++trial) {
    std::string s;
    const size_t words = 1 + rng.uniform_index(5);
    for (size_t w = 0; w < words; ++w) {
      if (w) s.push_back(' ');
      const size_t len = 1 + rng.uniform_index(10);
      for (size_t i = 0; i < len; ++i) {
        char c; // any non-space byte
        do {
          c = static_cast<char>(rng.uniform_index(256));
        } while (c == ' ' || c == '\t' || c == '\n' || c == '\v' || c == '\f' || c == '\r' ||
                 c == '\0');
        s.push_back(c);
      }
    }
    CHECK(model.decode(model.encode(s)) == s);
  }
}

TEST_CASE("subword model persists and reloads identically") {
  SubwordModel model = trained_model();
  const auto path = (std::filesystem::temp_directory_path() / "vtlab_subword.txt").string();
  model.save(path);
  SubwordModel back = SubwordModel::load(path);
  CHECK(back.vocab().size() == model.vocab().size());
  CHECK(back.merge_count() == model.merge_count());
  const std::string text = "an 8 ounce bag of wonderful roasted pistachios";
  CHECK(back.encode(text) == model.encode(text));
  CHECK(back.decode(back.encode(text)) == text);
  std::filesystem::remove(path);
}
