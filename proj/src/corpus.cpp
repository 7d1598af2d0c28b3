// SPDX-License-Identifier: Apache-2.0
#include "vtlab/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "vtlab/errors.hpp"

namespace vtlab {

namespace {

std::vector<std::string> tokenize_ws(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream is(text);
  std::string w;
  while (is >> w) out.push_back(w);
  return out;
}

std::string join(const std::vector<std::string>& tokens) {
  std::string out;
  for (size_t i = 0; i < tokens.size(); ++i) {
    if (i) out.push_back(' ');
    out += tokens[i];
  }
  return out;
}

std::string lower(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

std::string title_case(const std::string& word) {
  std::string out = word;
  if (!out.empty()) out[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(out[0])));
  return out;
}

bool is_number(const std::string& s) {
  if (s.empty()) return false;
  bool digit = false, dot = false;
  for (char c : s) {
    if (std::isdigit(static_cast<unsigned char>(c))) {
      digit = true;
    } else if (c == '.' && !dot) {
      dot = true;
    } else {
      return false;
    }
  }
  return digit;
}

// Voice text is lowercase words and numbers; "&" speaks as "and",
// punctuation is dropped except decimal points inside numbers.
std::vector<std::string> clean_voice_tokens(const std::string& text) {
  std::vector<std::string> out;
  for (const auto& raw : tokenize_ws(text)) {
    if (raw == "&") {
      out.push_back("and");
      continue;
    }
    std::string t;
    for (size_t i = 0; i < raw.size(); ++i) {
      const char c = raw[i];
      if (std::isalnum(static_cast<unsigned char>(c))) {
        t.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
      } else if (c == '.' && i > 0 && i + 1 < raw.size() &&
                 std::isdigit(static_cast<unsigned char>(raw[i - 1])) &&
                 std::isdigit(static_cast<unsigned char>(raw[i + 1]))) {
        t.push_back('.');
      }
    }
    if (!t.empty()) out.push_back(t);
  }
  return out;
}

struct ParsedQty {
  std::vector<std::string> value_tokens;  // "8" or "3.1","to","5.1"
  std::string unit_abbr;                  // may be empty
};

// "8 oz" / "2 lbs" / "3.1 - 5.1 lbs" / "0.5 L" / "6" -> value tokens + unit.
ParsedQty parse_qty(const std::string& qty) {
  ParsedQty parsed;
  std::vector<std::string> unit_words;
  for (const auto& raw : tokenize_ws(qty)) {
    std::string t = raw;
    while (!t.empty() && (t.back() == '.' || t.back() == ',')) t.pop_back();
    if (is_number(t)) {
      if (!parsed.value_tokens.empty()) parsed.value_tokens.push_back("to");
      parsed.value_tokens.push_back(t);
    } else if (t == "-" || lower(t) == "to") {
      continue;  // the "to" is inserted next to the second number
    } else if (!t.empty()) {
      unit_words.push_back(lower(t));
    }
  }
  parsed.unit_abbr = join(unit_words);
  return parsed;
}

}  // namespace

std::string expand_unit(const std::string& abbr) {
  const std::string a = lower(abbr);
  if (a == "oz" || a == "oz.") return "ounce";
  if (a == "lb" || a == "lbs" || a == "lb." || a == "lbs.") return "pound";
  if (a == "ct" || a == "ct.") return "count";
  if (a == "l") return "liter";
  if (a == "fl oz" || a == "fl. oz." || a == "fl oz.") return "fluid ounce";
  if (a == "pk" || a == "pk.") return "pack";
  throw ConfigError("expand_unit: unknown unit abbreviation '" + abbr + "'");
}

std::string article_for(const std::string& first_word) {
  if (first_word.empty()) return "a";
  if (std::isdigit(static_cast<unsigned char>(first_word[0]))) {
    // Spoken onset of the leading number: eight/eighty/eight hundred,
    // eleven, eighteen are the vowel-onset cases in this domain.
    std::string intpart;
    for (char c : first_word) {
      if (!std::isdigit(static_cast<unsigned char>(c))) break;
      intpart.push_back(c);
    }
    if (!intpart.empty() && intpart[0] == '8') return "an";
    if (intpart == "11" || intpart == "18") return "an";
    return "a";
  }
  const char c = static_cast<char>(std::tolower(static_cast<unsigned char>(first_word[0])));
  return (c == 'a' || c == 'e' || c == 'i' || c == 'o' || c == 'u') ? "an" : "a";
}

std::vector<std::string> render_voice(const ProductRecord& record) {
  std::vector<std::string> out;
  const auto product = clean_voice_tokens(record.brand + " " + record.name);
  auto append = [&out](const std::vector<std::string>& tokens) {
    out.insert(out.end(), tokens.begin(), tokens.end());
  };
  auto append_str = [&out](const std::string& text) {
    for (const auto& t : clean_voice_tokens(text)) out.push_back(t);
  };
  switch (record.form) {
    case VoiceForm::kQtyContainer: {
      const ParsedQty q = parse_qty(record.qty);
      if (q.value_tokens.empty()) throw ConfigError("render_voice: quantity required");
      out.push_back(article_for(q.value_tokens[0]));
      append(q.value_tokens);
      if (!q.unit_abbr.empty()) append_str(expand_unit(q.unit_abbr));
      append_str(record.container);
      out.push_back("of");
      append(product);
      break;
    }
    case VoiceForm::kCountContainer: {
      out.push_back(article_for(record.count));
      out.push_back(record.count);
      out.push_back("count");
      append_str(record.container);
      out.push_back("of");
      append(product);
      break;
    }
    case VoiceForm::kPackOf: {
      out.push_back("a");
      out.push_back("pack");
      out.push_back("of");
      out.push_back(record.count);
      append(product);
      break;
    }
    case VoiceForm::kCountPack: {
      const ParsedQty q = parse_qty(record.qty);
      out.push_back(article_for(record.count));
      out.push_back(record.count);
      out.push_back("pack");
      out.push_back("of");
      append(q.value_tokens);
      if (!q.unit_abbr.empty()) append_str(expand_unit(q.unit_abbr));
      append(product);
      break;
    }
    case VoiceForm::kPlainContainer: {
      out.push_back(article_for(record.container));
      append_str(record.container);
      out.push_back("of");
      append(product);
      break;
    }
    case VoiceForm::kEach: {
      append(product);
      out.push_back("sold");
      out.push_back("individually");
      break;
    }
  }
  return out;
}

AttributeTables AttributeTables::defaults() {
  AttributeTables t;
  t.brands = {
      "great value",    "lucky charms",   "wonderful",       "el monterey",
      "hostess",        "yoo hoo",        "paas",            "harvestland",
      "sunny acres",    "blue ridge",     "golden barn",     "silver creek",
      "happy farms",    "prairie best",   "ocean crest",     "maple hollow",
      "crispy kitchen", "garden row",     "red barn",        "morning star",
      "valley fresh",   "northwind",      "stonebrook",      "clover field",
      "hilltop",        "riverbend",      "amber waves",     "iron skillet",
      "cedar grove",    "twin pines",     "daisy lane",      "king harvest",
      "old mill",       "bright day",     "snowy peak",      "green meadow",
      "aunt mable farms", "three river trading", "blue sky pantry", "first pick orchard",
  };
  t.adjectives = {
      "roasted",     "salted",   "unsalted",  "organic",  "frozen",   "fresh",
      "gluten free", "diet",     "whole",     "premium",  "classic",  "original",
      "sweet",       "spicy",    "smoked",    "creamy",   "crunchy",  "low fat",
      "sugar free",  "natural",  "sliced",    "ground",   "baked",    "mini",
      "large",       "extra sharp", "honey",  "dark",     "wild",     "golden",
  };
  t.nouns = {
      "pistachios",      "white onions",    "breakfast cereal", "cheese burritos",
      "chocolate milk",  "eggs",            "mini donuts",      "pork steaks",
      "chicken breast",  "baby carrots",    "apple juice",      "peanut butter",
      "potato chips",    "tomato soup",     "string cheese",    "orange soda",
      "trail mix",       "granola bars",    "green beans",      "vanilla yogurt",
      "oat cookies",     "corn tortillas",  "black beans",      "rice crackers",
      "veggie blend",    "fruit snacks",    "almond butter",    "pasta sauce",
      "maple syrup",     "garlic bulbs",    "lemonade",         "iced tea",
      "popcorn kernels", "sunflower seeds", "wheat bread",      "dinner rolls",
  };
  t.containers = {"bag", "box", "carton", "pack", "tray", "bottle", "can", "jar", "tub", "case"};
  t.fillers = {"premium", "family size", "value pack", "new", "fresh pick", "everyday"};
  return t;
}

ProductRecord sample_record(Rng& rng, const TemplateWeights& weights,
                            const AttributeTables& tables) {
  if (tables.brands.empty() || tables.adjectives.empty() || tables.nouns.empty() ||
      tables.containers.empty()) {
    throw ConfigError("sample_record: empty attribute table");
  }
  ProductRecord record;
  const std::vector<double> w = {weights.qty_container, weights.count_container,
                                 weights.pack_of,       weights.count_pack,
                                 weights.plain_container, weights.each};
  record.form = static_cast<VoiceForm>(rng.weighted_index(w));

  // name: a few adjectives plus a product noun
  std::vector<std::string> name_words;
  const size_t n_adj = 1 + rng.uniform_index(3);  // 1..3
  for (size_t i = 0; i < n_adj; ++i) {
    const auto& adj = tables.adjectives[rng.uniform_index(tables.adjectives.size())];
    if (std::find(name_words.begin(), name_words.end(), adj) == name_words.end()) {
      name_words.push_back(adj);
    }
  }
  name_words.push_back(tables.nouns[rng.uniform_index(tables.nouns.size())]);
  record.name = join(name_words);
  if (rng.bernoulli(0.85)) record.brand = tables.brands[rng.uniform_index(tables.brands.size())];
  record.container = tables.containers[rng.uniform_index(tables.containers.size())];

  auto sample_value = [&rng]() {
    if (rng.bernoulli(0.45)) {
      std::ostringstream os;
      os << (1 + rng.uniform_index(40)) << '.' << (1 + rng.uniform_index(9));
      return os.str();
    }
    return std::to_string(1 + rng.uniform_index(40));
  };
  const char* kWeightUnits[] = {"oz", "lbs", "oz", "oz", "lbs", "fl oz"};
  switch (record.form) {
    case VoiceForm::kQtyContainer: {
      std::string unit = kWeightUnits[rng.uniform_index(6)];
      if (rng.bernoulli(0.12)) {
        const std::string a = sample_value(), b = sample_value();
        record.qty = a + " - " + b + " " + unit;
      } else {
        record.qty = sample_value() + " " + unit;
      }
      break;
    }
    case VoiceForm::kCountContainer:
    case VoiceForm::kPackOf:
      record.count = std::to_string(2 + rng.uniform_index(23));
      break;
    case VoiceForm::kCountPack:
      record.count = std::to_string(2 + rng.uniform_index(11));
      record.qty = sample_value() + " " + (rng.bernoulli(0.5) ? "L" : "fl oz");
      break;
    case VoiceForm::kPlainContainer:
    case VoiceForm::kEach:
      break;
  }
  return record;
}

TitlePair generate_pair(uint64_t rng_seed, const TemplateWeights& weights,
                        const AttributeTables& tables, const GeneratorConfig& noise) {
  Rng rng(rng_seed);
  const ProductRecord record = sample_record(rng, weights, tables);
  TitlePair pair;
  pair.voice = render_voice(record);

  // Web title: cased, abbreviated, noisy rendering of the same record.
  const bool drop_brand = !record.brand.empty() && rng.bernoulli(noise.p_drop_brand_to_meta);
  const bool drop_container =
      !record.container.empty() && rng.bernoulli(noise.p_drop_container_to_meta);
  std::vector<std::string> product_words;
  if (!drop_brand)
    for (const auto& w : tokenize_ws(record.brand)) product_words.push_back(title_case(w));
  for (const auto& w : tokenize_ws(record.name)) product_words.push_back(title_case(w));
  for (size_t i = 0; i < product_words.size(); ++i) {
    if (lower(product_words[i]) == "and" && rng.bernoulli(0.6)) product_words[i] = "&";
  }

  std::vector<std::string> web = product_words;
  if (rng.bernoulli(noise.p_comma) && !web.empty()) web.back() += ",";

  if (!record.qty.empty()) {
    ParsedQty q = parse_qty(record.qty);
    for (size_t i = 0; i < q.value_tokens.size(); ++i) {
      if (q.value_tokens[i] == "to") {
        web.push_back("-");
      } else {
        web.push_back(q.value_tokens[i]);
      }
    }
    if (!q.unit_abbr.empty()) {
      std::string abbr = q.unit_abbr;
      if (rng.bernoulli(noise.p_unit_period)) abbr += ".";
      for (const auto& t : tokenize_ws(abbr)) web.push_back(t);
    }
  }
  if (!record.count.empty()) {
    web.push_back(record.count);
    web.push_back(record.form == VoiceForm::kCountPack ? "pk" : "ct");
    if (rng.bernoulli(0.4)) {
      // count-form titles often carry a weight too ("6 ct, 3 oz")
      web.back() += ",";
      web.push_back(std::to_string(1 + rng.uniform_index(30)));
      web.push_back("oz");
    }
  }
  if (!drop_container && !record.container.empty() && rng.bernoulli(0.6)) {
    web.push_back(title_case(record.container));
  }
  if (rng.bernoulli(noise.p_filler)) {
    for (const auto& t : tokenize_ws(tables.fillers[rng.uniform_index(tables.fillers.size())]))
      web.push_back(rng.bernoulli(0.5) ? title_case(t) : t);
    if (rng.bernoulli(0.35)) {
      for (const auto& t :
           tokenize_ws(tables.fillers[rng.uniform_index(tables.fillers.size())]))
        web.push_back(rng.bernoulli(0.5) ? title_case(t) : t);
    }
  }
  if (rng.bernoulli(noise.p_duplicate_suffix)) {
    // the duplicated-fragment noise pattern: "... a box Lucky Charms Gluten Free"
    web.push_back("a");
    if (!record.container.empty()) web.push_back(lower(record.container));
    std::vector<std::string> frag;
    for (const auto& w : tokenize_ws(record.brand + " " + record.name)) frag.push_back(w);
    const size_t take = std::min<size_t>(frag.size(), 3 + rng.uniform_index(5));
    for (size_t i = 0; i < take; ++i)
      web.push_back(rng.bernoulli(0.6) ? title_case(frag[i]) : lower(frag[i]));
  }
  pair.web = web;

  if (drop_brand || (!record.brand.empty() && rng.bernoulli(noise.p_meta_redundant))) {
    pair.meta["brand"] = lower(record.brand);
  }
  if (drop_container ||
      (!record.container.empty() && rng.bernoulli(noise.p_meta_redundant))) {
    pair.meta["container"] = lower(record.container);
  }
  if (!record.qty.empty() && rng.bernoulli(noise.p_meta_redundant)) {
    pair.meta["size"] = lower(record.qty);
  }
  return pair;
}

std::vector<TitlePair> generate_corpus(const GeneratorConfig& config) {
  Rng base(config.seed);
  std::vector<TitlePair> pairs;
  pairs.reserve(config.size);
  for (size_t i = 0; i < config.size; ++i) {
    const uint64_t pair_seed = base.derive(i).seed();
    pairs.push_back(generate_pair(pair_seed, config.weights, config.tables, config));
  }
  return pairs;
}

namespace {

bool contains_phrase(const std::vector<std::string>& haystack_lower,
                     const std::vector<std::string>& phrase) {
  if (phrase.empty()) return true;
  if (phrase.size() > haystack_lower.size()) return false;
  for (size_t i = 0; i + phrase.size() <= haystack_lower.size(); ++i) {
    bool ok = true;
    for (size_t j = 0; j < phrase.size(); ++j) {
      if (haystack_lower[i + j] != phrase[j]) {
        ok = false;
        break;
      }
    }
    if (ok) return true;
  }
  return false;
}

}  // namespace

std::vector<std::string> augment_metadata(const TitlePair& pair) {
  std::vector<std::string> out = pair.web;
  std::vector<std::string> web_lower;
  web_lower.reserve(out.size());
  for (const auto& t : pair.web) web_lower.push_back(clean_voice_tokens(t).empty()
                                                         ? lower(t)
                                                         : clean_voice_tokens(t)[0]);
  for (const char* key : {"brand", "container", "size"}) {
    auto it = pair.meta.find(key);
    if (it == pair.meta.end()) continue;
    const auto phrase = clean_voice_tokens(it->second);
    if (phrase.empty() || contains_phrase(web_lower, phrase)) continue;
    for (const auto& t : phrase) {
      out.push_back(t);
      web_lower.push_back(t);
    }
  }
  return out;
}

CorpusSplit split_corpus(const std::vector<TitlePair>& pairs, uint64_t seed) {
  if (pairs.size() < 10) throw ConfigError("split_corpus: need at least 10 pairs");
  const double n = static_cast<double>(pairs.size());
  const size_t n_train = static_cast<size_t>(std::llround(n * 13874.0 / 19269.0));
  const size_t n_val = static_cast<size_t>(std::llround(n * 1926.0 / 19269.0));
  std::vector<size_t> order(pairs.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(order);
  CorpusSplit split;
  for (size_t i = 0; i < order.size(); ++i) {
    const TitlePair& p = pairs[order[i]];
    if (i < n_train) {
      split.train.push_back(p);
    } else if (i < n_train + n_val) {
      split.val.push_back(p);
    } else {
      split.test.push_back(p);
    }
  }
  return split;
}

void save_jsonl(const std::string& path, const std::vector<TitlePair>& pairs) {
  std::ofstream os(path);
  if (!os) throw DataError("corpus: cannot write " + path);
  for (const auto& pair : pairs) {
    nlohmann::json j;
    j["web"] = join(pair.web);
    j["voice"] = join(pair.voice);
    j["meta"] = nlohmann::json::object();
    for (const auto& [k, v] : pair.meta) j["meta"][k] = v;
    os << j.dump() << "\n";
  }
}

std::vector<TitlePair> load_jsonl(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("corpus: cannot open " + path);
  std::vector<TitlePair> pairs;
  std::string line;
  size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw DataError("corpus: bad JSON at " + path + ":" + std::to_string(lineno) + ": " +
                      e.what());
    }
    TitlePair pair;
    pair.web = tokenize_ws(j.value("web", ""));
    pair.voice = tokenize_ws(j.value("voice", ""));
    if (j.contains("meta")) {
      for (auto it = j["meta"].begin(); it != j["meta"].end(); ++it) {
        pair.meta[it.key()] = it.value().get<std::string>();
      }
    }
    pairs.push_back(std::move(pair));
  }
  return pairs;
}

CorpusStats corpus_stats(const std::vector<TitlePair>& pairs) {
  CorpusStats stats;
  stats.count = pairs.size();
  if (pairs.empty()) return stats;
  for (const auto& p : pairs) {
    stats.mean_web_len += static_cast<double>(p.web.size());
    stats.mean_voice_len += static_cast<double>(p.voice.size());
    std::vector<std::string> uw = p.web, uv = p.voice;
    std::sort(uw.begin(), uw.end());
    uw.erase(std::unique(uw.begin(), uw.end()), uw.end());
    std::sort(uv.begin(), uv.end());
    uv.erase(std::unique(uv.begin(), uv.end()), uv.end());
    stats.mean_unique_web += static_cast<double>(uw.size());
    stats.mean_unique_voice += static_cast<double>(uv.size());
  }
  const double n = static_cast<double>(pairs.size());
  stats.mean_web_len /= n;
  stats.mean_voice_len /= n;
  stats.mean_unique_web /= n;
  stats.mean_unique_voice /= n;
  return stats;
}

bool matches_voice_grammar(const std::vector<std::string>& voice) {
  if (voice.empty()) return false;
  const auto is_word = [](const std::string& t) {
    if (t.empty()) return false;
    for (char c : t)
      if (!std::islower(static_cast<unsigned char>(c)) &&
          !std::isdigit(static_cast<unsigned char>(c)))
        return false;
    return true;
  };
  const auto all_words = [&](size_t from) {
    if (from >= voice.size()) return false;
    for (size_t i = from; i < voice.size(); ++i)
      if (!is_word(voice[i]) && !is_number(voice[i])) return false;
    return true;
  };
  const auto is_unit = [](const std::string& t) {
    return t == "ounce" || t == "pound" || t == "liter" || t == "count" || t == "pack";
  };
  const size_t n = voice.size();

  // "<name...> sold individually"
  if (n >= 3 && voice[n - 2] == "sold" && voice[n - 1] == "individually") return true;
  if (voice[0] != "a" && voice[0] != "an") return false;

  // "a pack of N <name...>"
  if (n >= 5 && voice[1] == "pack" && voice[2] == "of" && is_number(voice[3]))
    return all_words(4);
  // "a N count <container> of <name...>"
  if (n >= 6 && is_number(voice[1]) && voice[2] == "count" && voice[4] == "of")
    return all_words(5);
  // "a N pack of V <unit> <name...>"
  if (n >= 7 && is_number(voice[1]) && voice[2] == "pack" && voice[3] == "of" &&
      is_number(voice[4])) {
    size_t k = 5;
    if (voice[k] == "fluid") ++k;
    if (k < n && is_unit(voice[k])) return all_words(k + 1);
    return false;
  }
  if (is_number(voice[1])) {
    // "a V [to V] <unit> <container> of <name...>"
    size_t k = 2;
    if (k + 1 < n && voice[k] == "to" && is_number(voice[k + 1])) k += 2;
    if (k < n && voice[k] == "fluid") ++k;
    if (k >= n || !is_unit(voice[k])) return false;
    ++k;
    if (k + 1 >= n || !is_word(voice[k]) || voice[k + 1] != "of") return false;
    return all_words(k + 2);
  }
  // "a <container> of <name...>"
  if (n >= 4 && is_word(voice[1]) && voice[2] == "of") return all_words(3);
  return false;
}

std::vector<std::string> normalize_tokens(const std::vector<std::string>& tokens) {
  return clean_voice_tokens(join(tokens));
}

std::map<std::string, std::string> parse_kv_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("config: cannot open " + path);
  std::map<std::string, std::string> kv;
  std::string line;
  size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    const auto trim = [](std::string s) {
      const auto notspace = [](unsigned char c) { return !std::isspace(c); };
      s.erase(s.begin(), std::find_if(s.begin(), s.end(), notspace));
      s.erase(std::find_if(s.rbegin(), s.rend(), notspace).base(), s.end());
      return s;
    };
    line = trim(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config: expected key = value at " + path + ":" +
                        std::to_string(lineno));
    }
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return kv;
}

namespace {

std::vector<std::string> load_table_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("config: cannot open attribute table " + path);
  std::vector<std::string> entries;
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty() && line[0] != '#') entries.push_back(line);
  }
  return entries;
}

}  // namespace

GeneratorConfig generator_config_from_file(const std::string& path) {
  GeneratorConfig config;
  config.tables = AttributeTables::defaults();
  const auto kv = parse_kv_file(path);
  const auto get_d = [&kv](const char* key, double& out) {
    auto it = kv.find(key);
    if (it != kv.end()) out = std::stod(it->second);
  };
  auto it = kv.find("seed");
  if (it != kv.end()) config.seed = std::stoull(it->second);
  it = kv.find("size");
  if (it != kv.end()) config.size = std::stoull(it->second);
  get_d("weight_qty_container", config.weights.qty_container);
  get_d("weight_count_container", config.weights.count_container);
  get_d("weight_pack_of", config.weights.pack_of);
  get_d("weight_count_pack", config.weights.count_pack);
  get_d("weight_plain_container", config.weights.plain_container);
  get_d("weight_each", config.weights.each);
  get_d("p_drop_brand_to_meta", config.p_drop_brand_to_meta);
  get_d("p_drop_container_to_meta", config.p_drop_container_to_meta);
  get_d("p_duplicate_suffix", config.p_duplicate_suffix);
  get_d("p_filler", config.p_filler);
  get_d("p_unit_period", config.p_unit_period);
  get_d("p_comma", config.p_comma);
  get_d("p_meta_redundant", config.p_meta_redundant);
  it = kv.find("brands_path");
  if (it != kv.end()) config.tables.brands = load_table_file(it->second);
  it = kv.find("adjectives_path");
  if (it != kv.end()) config.tables.adjectives = load_table_file(it->second);
  it = kv.find("nouns_path");
  if (it != kv.end()) config.tables.nouns = load_table_file(it->second);
  it = kv.find("containers_path");
  if (it != kv.end()) config.tables.containers = load_table_file(it->second);
  return config;
}

}  // namespace vtlab
