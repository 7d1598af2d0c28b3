// SPDX-License-Identifier: Apache-2.0
#include "vtlab/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include <json.hpp>

#include "vtlab/errors.hpp"

namespace vtlab {

std::vector<std::string> metric_tokenize(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream is(text);
  std::string raw;
  while (is >> raw) {
    std::string t;
    for (size_t i = 0; i < raw.size(); ++i) {
      const unsigned char c = static_cast<unsigned char>(raw[i]);
      if (std::isalnum(c)) {
        t.push_back(static_cast<char>(std::tolower(c)));
      } else if (i > 0 && i + 1 < raw.size() &&
                 std::isdigit(static_cast<unsigned char>(raw[i - 1])) &&
                 std::isdigit(static_cast<unsigned char>(raw[i + 1]))) {
        t.push_back(raw[i]);  // punctuation inside a numeral, e.g. "20.5"
      }
    }
    if (!t.empty()) out.push_back(t);
  }
  return out;
}

namespace {

double f1_of(double p, double r) { return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0; }

std::map<std::vector<std::string>, long> ngram_counts(const std::vector<std::string>& tokens,
                                                      int n) {
  std::map<std::vector<std::string>, long> counts;
  if (static_cast<int>(tokens.size()) < n) return counts;
  for (size_t i = 0; i + static_cast<size_t>(n) <= tokens.size(); ++i) {
    counts[std::vector<std::string>(tokens.begin() + static_cast<long>(i),
                                    tokens.begin() + static_cast<long>(i) + n)]++;
  }
  return counts;
}

}  // namespace

RougeScore rouge_n(const std::vector<std::string>& candidate,
                   const std::vector<std::string>& reference, int n) {
  if (n != 1 && n != 2) throw ContractError("rouge_n: n must be 1 or 2");
  RougeScore score;
  const auto cand = ngram_counts(candidate, n);
  const auto ref = ngram_counts(reference, n);
  for (const auto& [g, c] : cand) score.candidate_total += c;
  for (const auto& [g, c] : ref) score.reference_total += c;
  if (score.candidate_total == 0 || score.reference_total == 0) {
    score.flagged = true;
    return score;
  }
  for (const auto& [gram, count] : cand) {
    auto it = ref.find(gram);
    if (it != ref.end()) score.overlap += std::min(count, it->second);
  }
  score.precision = static_cast<double>(score.overlap) / static_cast<double>(score.candidate_total);
  score.recall = static_cast<double>(score.overlap) / static_cast<double>(score.reference_total);
  score.f1 = f1_of(score.precision, score.recall);
  return score;
}

RougeScore rouge_l(const std::vector<std::string>& candidate,
                   const std::vector<std::string>& reference) {
  RougeScore score;
  score.candidate_total = static_cast<long>(candidate.size());
  score.reference_total = static_cast<long>(reference.size());
  if (candidate.empty() || reference.empty()) {
    score.flagged = true;
    return score;
  }
  const size_t m = candidate.size(), n = reference.size();
  std::vector<long> prev(n + 1, 0), cur(n + 1, 0);
  for (size_t i = 1; i <= m; ++i) {
    for (size_t j = 1; j <= n; ++j) {
      if (candidate[i - 1] == reference[j - 1]) {
        cur[j] = prev[j - 1] + 1;
      } else {
        cur[j] = std::max(prev[j], cur[j - 1]);
      }
    }
    std::swap(prev, cur);
  }
  score.overlap = prev[n];
  score.precision = static_cast<double>(score.overlap) / static_cast<double>(m);
  score.recall = static_cast<double>(score.overlap) / static_cast<double>(n);
  score.f1 = f1_of(score.precision, score.recall);
  return score;
}

long duplicate_unigrams(const std::vector<std::string>& candidate) {
  std::map<std::string, long> counts;
  for (const auto& t : candidate) counts[t]++;
  long dup = 0;
  for (const auto& [t, c] : counts) dup += std::max(0L, c - 1);
  return dup;
}

long duplicate_unigrams_vs_reference(const std::vector<std::string>& candidate,
                                     const std::vector<std::string>& reference) {
  std::map<std::string, long> cand, ref;
  for (const auto& t : candidate) cand[t]++;
  for (const auto& t : reference) ref[t]++;
  long dup = 0;
  for (const auto& [t, c] : cand) {
    auto it = ref.find(t);
    const long allowed = std::max(1L, it == ref.end() ? 0L : it->second);
    dup += std::max(0L, c - allowed);
  }
  return dup;
}

ExampleEval evaluate_example(const std::string& candidate, const std::string& reference) {
  ExampleEval ev;
  const auto cand = metric_tokenize(candidate);
  const auto ref = metric_tokenize(reference);
  ev.r1 = rouge_n(cand, ref, 1);
  ev.r2 = rouge_n(cand, ref, 2);
  ev.rl = rouge_l(cand, ref);
  ev.duplicates = duplicate_unigrams(cand);
  ev.duplicates_vs_reference = duplicate_unigrams_vs_reference(cand, ref);
  ev.flagged = ev.r1.flagged || ev.rl.flagged;
  return ev;
}

EvalReport evaluate_corpus(const std::string& decode_output_path,
                           const std::string& reports_path, const std::string& label) {
  std::ifstream is(decode_output_path);
  if (!is) throw DataError("evaluate: cannot open " + decode_output_path);
  EvalReport report;
  report.label = label;
  std::string line;
  size_t total_records = 0;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception&) {
      ++total_records;
      ++report.skipped;
      continue;
    }
    if (j.contains("header")) continue;  // decode output header line
    ++total_records;
    if (!j.contains("predicted_voice") || !j.contains("reference_voice") ||
        !j["predicted_voice"].is_string() || !j["reference_voice"].is_string()) {
      ++report.skipped;
      continue;
    }
    report.per_example.push_back(evaluate_example(j["predicted_voice"].get<std::string>(),
                                                  j["reference_voice"].get<std::string>()));
  }
  if (total_records == 0) throw DataError("evaluate: no records in " + decode_output_path);
  if (report.skipped * 100 > total_records) {
    throw DataError("evaluate: " + std::to_string(report.skipped) + "/" +
                    std::to_string(total_records) + " malformed records (>1%)");
  }
  report.examples = report.per_example.size();
  for (const auto& ev : report.per_example) {
    report.mean_r1 += ev.r1.f1;
    report.mean_r2 += ev.r2.f1;
    report.mean_rl += ev.rl.f1;
    report.mean_duplicates += static_cast<double>(ev.duplicates);
    report.mean_duplicates_vs_reference += static_cast<double>(ev.duplicates_vs_reference);
  }
  if (report.examples > 0) {
    const double n = static_cast<double>(report.examples);
    report.mean_r1 /= n;
    report.mean_r2 /= n;
    report.mean_rl /= n;
    report.mean_duplicates /= n;
    report.mean_duplicates_vs_reference /= n;
  }
  if (!reports_path.empty()) {
    std::ofstream os(reports_path);
    if (!os) throw DataError("evaluate: cannot write " + reports_path);
    os << report_to_json(report) << "\n";
  }
  return report;
}

std::string report_to_json(const EvalReport& report, bool include_examples) {
  nlohmann::json j;
  j["label"] = report.label;
  j["examples"] = report.examples;
  j["skipped"] = report.skipped;
  j["rouge1_f1"] = report.mean_r1;
  j["rouge2_f1"] = report.mean_r2;
  j["rougeL_f1"] = report.mean_rl;
  j["avg_duplicate_unigrams"] = report.mean_duplicates;
  j["avg_duplicate_unigrams_vs_reference"] = report.mean_duplicates_vs_reference;
  if (include_examples) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& ev : report.per_example) {
      arr.push_back({{"r1", ev.r1.f1},
                     {"r2", ev.r2.f1},
                     {"rl", ev.rl.f1},
                     {"duplicates", ev.duplicates},
                     {"duplicates_vs_reference", ev.duplicates_vs_reference},
                     {"flagged", ev.flagged}});
    }
    j["per_example"] = std::move(arr);
  }
  return j.dump(2);
}

std::string report_table(const std::vector<EvalReport>& reports) {
  std::ostringstream os;
  os << std::left << std::setw(22) << "Method" << std::right << std::setw(9) << "R-1"
     << std::setw(9) << "R-2" << std::setw(9) << "R-L" << std::setw(14) << "avg. # dup"
     << "\n";
  os << std::string(63, '-') << "\n";
  for (const auto& r : reports) {
    os << std::left << std::setw(22) << (r.label.empty() ? "(unnamed)" : r.label) << std::right
       << std::fixed << std::setprecision(4) << std::setw(9) << r.mean_r1 << std::setw(9)
       << r.mean_r2 << std::setw(9) << r.mean_rl << std::setw(14) << std::setprecision(6)
       << r.mean_duplicates << "\n";
  }
  return os.str();
}

}  // namespace vtlab
