// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>

#include "vtlab/corpus.hpp"
#include "vtlab/errors.hpp"
#include "vtlab/vocab.hpp"

using namespace vtlab;

namespace {
std::string join(const std::vector<std::string>& tokens) {
  std::string out;
  for (size_t i = 0; i < tokens.size(); ++i) {
    if (i) out.push_back(' ');
    out += tokens[i];
  }
  return out;
}
}  // namespace

TEST_CASE("voice rendering of the pistachio record") {
  ProductRecord record;
  record.form = VoiceForm::kQtyContainer;
  record.qty = "8 oz";
  record.container = "bag";
  record.brand = "Wonderful Roasted & Salted Pistachios";
  CHECK(join(render_voice(record)) == "an 8 ounce bag of wonderful roasted and salted pistachios");
}

TEST_CASE("voice rendering of the white-onion record") {
  ProductRecord record;
  record.form = VoiceForm::kQtyContainer;
  record.qty = "2 lbs";
  record.container = "bag";
  record.name = "white onions";
  CHECK(join(render_voice(record)) == "a 2 pound bag of white onions");
}

TEST_CASE("article selection follows phonetic onset") {
  CHECK(article_for("8") == "an");
  CHECK(article_for("8.5") == "an");
  CHECK(article_for("80") == "an");
  CHECK(article_for("11") == "an");
  CHECK(article_for("18") == "an");
  CHECK(article_for("2") == "a");
  CHECK(article_for("0.5") == "a");
  CHECK(article_for("110") == "a");
  CHECK(article_for("organic") == "an");
  CHECK(article_for("bag") == "a");
}

TEST_CASE("unit lexicon expands the documented abbreviations") {
  CHECK(expand_unit("oz") == "ounce");
  CHECK(expand_unit("oz.") == "ounce");
  CHECK(expand_unit("lbs") == "pound");
  CHECK(expand_unit("lb") == "pound");
  CHECK(expand_unit("ct") == "count");
  CHECK(expand_unit("L") == "liter");
  CHECK(expand_unit("fl oz") == "fluid ounce");
  CHECK(expand_unit("pk") == "pack");
  CHECK_THROWS_AS(expand_unit("furlong"), ConfigError);
}

TEST_CASE("range quantities speak as 'to'") {
  ProductRecord record;
  record.form = VoiceForm::kQtyContainer;
  record.qty = "3.1 - 5.1 lbs";
  record.container = "tray";
  record.name = "pork steaks";
  CHECK(join(render_voice(record)) == "a 3.1 to 5.1 pound tray of pork steaks");
}

TEST_CASE("generator requires attribute tables") {
  Rng rng(1);
  TemplateWeights weights;
  AttributeTables empty;
  CHECK_THROWS_AS(sample_record(rng, weights, empty), ConfigError);
}

TEST_CASE("generate_pair is deterministic per seed") {
  GeneratorConfig config;
  config.tables = AttributeTables::defaults();
  const TitlePair a = generate_pair(987, config.weights, config.tables, config);
  const TitlePair b = generate_pair(987, config.weights, config.tables, config);
  CHECK(a.web == b.web);
  CHECK(a.voice == b.voice);
  CHECK(a.meta == b.meta);
  const TitlePair c = generate_pair(988, config.weights, config.tables, config);
  CHECK(a.web != c.web);  // overwhelmingly likely
}

TEST_CASE("10k sampled pairs hit the target length statistics") {
  GeneratorConfig config;
  config.size = 10000;
  config.seed = 40;
  const auto pairs = generate_corpus(config);
  const CorpusStats stats = corpus_stats(pairs);
  CHECK(stats.mean_web_len > 15.34 - 2.0);
  CHECK(stats.mean_web_len < 15.34 + 2.0);
  CHECK(stats.mean_voice_len > 11.39 - 2.0);
  CHECK(stats.mean_voice_len < 11.39 + 2.0);
}

TEST_CASE("every generated voice title matches a documented grammar") {
  GeneratorConfig config;
  config.size = 2000;
  config.seed = 11;
  for (const auto& pair : generate_corpus(config)) {
    CAPTURE(join(pair.voice));
    CHECK(matches_voice_grammar(pair.voice));
  }
}

TEST_CASE("quantity fidelity: voice numbers come from the record") {
  GeneratorConfig config;
  config.size = 2000;
  config.seed = 23;
  const auto is_num = [](const std::string& t) {
    return !t.empty() && (std::isdigit(static_cast<unsigned char>(t[0])));
  };
  for (const auto& pair : generate_corpus(config)) {
    // every numeric token in voice appears in web + meta
    std::set<std::string> source_nums;
    const auto web_aug = augment_metadata(pair);
    for (const auto& t : normalize_tokens(web_aug))
      if (is_num(t)) source_nums.insert(t);
    for (const auto& t : pair.voice) {
      if (is_num(t)) {
        CAPTURE(join(pair.voice));
        CAPTURE(join(web_aug));
        CHECK(source_nums.count(t) > 0);
      }
    }
  }
}

TEST_CASE("augment_metadata appends missing attributes and is idempotent") {
  TitlePair pair;
  pair.web = {"Eggs", "12", "ct"};
  pair.meta["brand"] = "great value";
  const auto once = augment_metadata(pair);
  CHECK(once == std::vector<std::string>{"Eggs", "12", "ct", "great", "value"});

  TitlePair again;
  again.web = once;
  again.meta = pair.meta;
  CHECK(augment_metadata(again) == once);

  SUBCASE("empty meta is the identity") {
    TitlePair plain;
    plain.web = {"Some", "Thing"};
    CHECK(augment_metadata(plain) == plain.web);
  }
  SUBCASE("attribute already present is not duplicated") {
    TitlePair has;
    has.web = {"Great", "Value", "Eggs"};
    has.meta["brand"] = "great value";
    CHECK(augment_metadata(has) == has.web);
  }
}

TEST_CASE("build_vocab respects the frequency threshold") {
  std::vector<std::vector<std::string>> corpus = {{"a", "a", "b"}};
  Vocabulary vocab = build_vocab(corpus, 2);
  CHECK(vocab.contains("a"));
  CHECK(!vocab.contains("b"));
  CHECK(vocab.id("b") == kUnkId);

  Vocabulary all = build_vocab(corpus, 1);
  CHECK(all.contains("a"));
  CHECK(all.contains("b"));

  CHECK_THROWS_AS(build_vocab({}, 1), ConfigError);
}

TEST_CASE("vocabulary encode/decode round-trips in-vocab sentences") {
  Rng rng(5);
  GeneratorConfig config;
  config.size = 400;
  config.seed = 5;
  const auto pairs = generate_corpus(config);
  std::vector<std::vector<std::string>> seqs;
  for (const auto& p : pairs) seqs.push_back(p.voice);
  Vocabulary vocab = build_vocab(seqs, 1);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto& sent = pairs[rng.uniform_index(pairs.size())].voice;
    CHECK(vocab.decode(vocab.encode(sent)) == sent);
  }
}

TEST_CASE("vocabulary specials occupy fixed ids and survive reload") {
  Vocabulary vocab;
  CHECK(vocab.id("<PAD>") == kPadId);
  CHECK(vocab.id("<UNK>") == kUnkId);
  CHECK(vocab.id("<BOS>") == kBosId);
  CHECK(vocab.id("<EOS>") == kEosId);
  CHECK(vocab.id("<CLS>") == kClsId);
  CHECK(vocab.id("<SEP>") == kSepId);
  CHECK(vocab.id("<MASK>") == kMaskId);
  vocab.add("pistachios");
  const auto path = (std::filesystem::temp_directory_path() / "vtlab_vocab.txt").string();
  vocab.save(path);
  Vocabulary back = Vocabulary::load(path);
  CHECK(back.size() == vocab.size());
  CHECK(back.id("pistachios") == vocab.id("pistachios"));
  std::filesystem::remove(path);
}

TEST_CASE("split_corpus reproduces the published split shape") {
  std::vector<TitlePair> pairs(19269);
  for (size_t i = 0; i < pairs.size(); ++i) {
    pairs[i].web = {"w" + std::to_string(i)};
    pairs[i].voice = {"v" + std::to_string(i)};
  }
  const CorpusSplit split = split_corpus(pairs, 3);
  CHECK(split.train.size() == 13874);
  CHECK(split.val.size() == 1926);
  CHECK(split.test.size() == 3469);

  SUBCASE("size 100 gives 72/10/18") {
    std::vector<TitlePair> small(pairs.begin(), pairs.begin() + 100);
    const CorpusSplit s = split_corpus(small, 3);
    CHECK(s.train.size() == 72);
    CHECK(s.val.size() == 10);
    CHECK(s.test.size() == 18);
  }
  SUBCASE("same seed twice gives identical splits") {
    const CorpusSplit again = split_corpus(pairs, 3);
    CHECK(again.train[0].web == split.train[0].web);
    CHECK(again.test[100].web == split.test[100].web);
  }
  SUBCASE("union of splits equals the input multiset") {
    std::multiset<std::string> in, out;
    for (const auto& p : pairs) in.insert(p.web[0]);
    for (const auto& p : split.train) out.insert(p.web[0]);
    for (const auto& p : split.val) out.insert(p.web[0]);
    for (const auto& p : split.test) out.insert(p.web[0]);
    CHECK(in == out);
  }
  SUBCASE("fewer than 10 pairs is a configuration error") {
    std::vector<TitlePair> tiny(pairs.begin(), pairs.begin() + 9);
    CHECK_THROWS_AS(split_corpus(tiny, 1), ConfigError);
  }
}

TEST_CASE("jsonl round-trip preserves pairs") {
  GeneratorConfig config;
  config.size = 50;
  config.seed = 9;
  const auto pairs = generate_corpus(config);
  const auto path = (std::filesystem::temp_directory_path() / "vtlab_corpus.jsonl").string();
  save_jsonl(path, pairs);
  const auto back = load_jsonl(path);
  REQUIRE(back.size() == pairs.size());
  for (size_t i = 0; i < pairs.size(); ++i) {
    CHECK(back[i].web == pairs[i].web);
    CHECK(back[i].voice == pairs[i].voice);
    CHECK(back[i].meta == pairs[i].meta);
  }
  std::filesystem::remove(path);
}

TEST_CASE("generator determinism: same seed, identical corpus") {
  GeneratorConfig config;
  config.size = 200;
  config.seed = 77;
  const auto a = generate_corpus(config);
  const auto b = generate_corpus(config);
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].web == b[i].web);
    CHECK(a[i].voice == b[i].voice);
  }
}

TEST_CASE("kv config files parse and feed the generator") {
  namespace fs = std::filesystem;
  const auto dir = fs::temp_directory_path() / "vtlab_cfg";
  fs::create_directories(dir);
  {
    std::ofstream os(dir / "gen.cfg");
    os << "# generator settings\n";
    os << "seed = 123\n";
    os << "size = 64\n";
    os << "weight_each = 0.5\n";
  }
  const GeneratorConfig config = generator_config_from_file((dir / "gen.cfg").string());
  CHECK(config.seed == 123);
  CHECK(config.size == 64);
  CHECK(config.weights.each == doctest::Approx(0.5));
  CHECK_THROWS_AS(parse_kv_file((dir / "absent.cfg").string()), ConfigError);
  fs::remove_all(dir);
}
