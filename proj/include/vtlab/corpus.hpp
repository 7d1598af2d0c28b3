// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <map>
#include <string>
#include <vector>

#include "vtlab/rng.hpp"

namespace vtlab {

// One training example: terse web title tokens and the grammatical spoken
// voice title tokens, plus optional product metadata.
struct TitlePair {
  std::vector<std::string> web;
  std::vector<std::string> voice;
  std::map<std::string, std::string> meta;  // brand, container, size
};

// Voice title templates. Every generated voice title is the deterministic
// rendering of a ProductRecord through one of these.
enum class VoiceForm {
  kQtyContainer,   // "an 8 ounce bag of wonderful roasted and salted pistachios"
  kCountContainer, // "a 6 count carton of great value large grade aa eggs"
  kPackOf,         // "a pack of 6 hostess donettes frosted mini donuts"
  kCountPack,      // "a 6 pack of 0.5 liter diet soda"
  kPlainContainer, // "a pack of paas magical color cup egg decorating kit"
  kEach,           // "garlic sold individually"
};

// A sampled product. qty carries the web-style surface form, value plus
// abbreviated unit ("8 oz", "2 lbs", "3.1 - 5.1 lbs", "0.5 L").
struct ProductRecord {
  VoiceForm form = VoiceForm::kQtyContainer;
  std::string qty;
  std::string count;
  std::string container;
  std::string brand;
  std::string name;
};

struct AttributeTables {
  std::vector<std::string> brands;
  std::vector<std::string> adjectives;
  std::vector<std::string> nouns;
  std::vector<std::string> containers;
  std::vector<std::string> fillers;  // marketing noise used only in web titles
  static AttributeTables defaults();
};

struct TemplateWeights {
  double qty_container = 0.40;
  double count_container = 0.12;
  double pack_of = 0.12;
  double count_pack = 0.08;
  double plain_container = 0.20;
  double each = 0.08;
};

struct GeneratorConfig {
  uint64_t seed = 1;
  size_t size = 19269;
  TemplateWeights weights;
  AttributeTables tables = AttributeTables::defaults();
  // Web-noise probabilities.
  double p_drop_brand_to_meta = 0.20;
  double p_drop_container_to_meta = 0.25;
  double p_duplicate_suffix = 0.75;
  double p_filler = 0.55;
  double p_unit_period = 0.4;
  double p_comma = 0.5;
  double p_meta_redundant = 0.25;
};

// Expands an abbreviated unit to its spoken singular form ("oz" -> "ounce").
// Throws ConfigError for unknown units.
std::string expand_unit(const std::string& abbr);

// "a" or "an" chosen by the phonetic onset of the first spoken word;
// vowel-onset quantities ("8", "11", "18.5") take "an".
std::string article_for(const std::string& first_word);

// Deterministic rule-based voice rendering of a record (lowercase).
std::vector<std::string> render_voice(const ProductRecord& record);

ProductRecord sample_record(Rng& rng, const TemplateWeights& weights,
                            const AttributeTables& tables);

// One pair: voice is the deterministic rendering, web a noisy abbreviated
// rendering of the same record. Deterministic given the seed.
TitlePair generate_pair(uint64_t rng_seed, const TemplateWeights& weights,
                        const AttributeTables& tables, const GeneratorConfig& noise);

std::vector<TitlePair> generate_corpus(const GeneratorConfig& config);

// Web tokens with brand/container/size appended when present in meta and
// absent from the web text; idempotent.
std::vector<std::string> augment_metadata(const TitlePair& pair);

// Random 72/10/18 partition (13874:1926:3469 normalized); deterministic
// given seed, disjoint and exhaustive. Throws ConfigError below 10 pairs.
struct CorpusSplit {
  std::vector<TitlePair> train, val, test;
};
CorpusSplit split_corpus(const std::vector<TitlePair>& pairs, uint64_t seed);

// JSONL persistence: one {"web": ..., "voice": ..., "meta": {...}} per line.
void save_jsonl(const std::string& path, const std::vector<TitlePair>& pairs);
std::vector<TitlePair> load_jsonl(const std::string& path);

struct CorpusStats {
  double mean_web_len = 0.0;
  double mean_voice_len = 0.0;
  double mean_unique_web = 0.0;
  double mean_unique_voice = 0.0;
  size_t count = 0;
};
CorpusStats corpus_stats(const std::vector<TitlePair>& pairs);

// True iff the tokens match one of the voice grammars above.
bool matches_voice_grammar(const std::vector<std::string>& voice);

// Model-side normalization: lowercase, punctuation stripped except between
// digits. Matches the metric tokenizer so copied tokens align with targets.
std::vector<std::string> normalize_tokens(const std::vector<std::string>& tokens);

// Plain key-value config files ("key = value", '#' comments).
std::map<std::string, std::string> parse_kv_file(const std::string& path);
GeneratorConfig generator_config_from_file(const std::string& path);

}  // namespace vtlab
