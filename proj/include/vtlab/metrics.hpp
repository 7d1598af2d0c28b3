// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

namespace vtlab {

struct RougeScore {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  // raw counts behind the ratios, for exact-match checks
  long overlap = 0;       // clipped n-gram overlap, or LCS length for rouge_l
  long candidate_total = 0;
  long reference_total = 0;
  bool flagged = false;   // empty candidate or reference
};

// Metric tokenization: lowercase, whitespace split, punctuation stripped
// except between digits ("20.5" stays whole).
std::vector<std::string> metric_tokenize(const std::string& text);

// Clipped n-gram overlap F1, n in {1,2}; precision over candidate n-grams,
// recall over reference n-grams.
RougeScore rouge_n(const std::vector<std::string>& candidate,
                   const std::vector<std::string>& reference, int n);

// Longest-common-subsequence F1.
RougeScore rouge_l(const std::vector<std::string>& candidate,
                   const std::vector<std::string>& reference);

// Sum over distinct tokens of max(0, count - 1), on the candidate alone.
long duplicate_unigrams(const std::vector<std::string>& candidate);

// Reference-relative variant: repetitions in the candidate beyond both a
// single use and the reference's own count of that token.
long duplicate_unigrams_vs_reference(const std::vector<std::string>& candidate,
                                     const std::vector<std::string>& reference);

struct ExampleEval {
  RougeScore r1, r2, rl;
  long duplicates = 0;
  long duplicates_vs_reference = 0;
  bool flagged = false;
};

ExampleEval evaluate_example(const std::string& candidate, const std::string& reference);

struct EvalReport {
  std::string label;
  double mean_r1 = 0.0, mean_r2 = 0.0, mean_rl = 0.0;
  double mean_duplicates = 0.0;
  double mean_duplicates_vs_reference = 0.0;
  size_t examples = 0;
  size_t skipped = 0;
  std::vector<ExampleEval> per_example;
};

// Corpus evaluation over a decode-output JSONL file. Malformed records are
// skipped and counted; more than 1% skipped fails the run. Writes the
// machine-readable report to reports_path when non-empty.
EvalReport evaluate_corpus(const std::string& decode_output_path,
                           const std::string& reports_path, const std::string& label = "");

std::string report_to_json(const EvalReport& report, bool include_examples = true);

// Aligned text table over one or many model runs, one row per report.
std::string report_table(const std::vector<EvalReport>& reports);

}  // namespace vtlab
