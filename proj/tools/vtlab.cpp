// SPDX-License-Identifier: Apache-2.0
//
// vtlab: generate / pretrain / train / decode / evaluate / compare for the
// web-title -> voice-title summarization lab.

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "vtlab/checkpoint.hpp"
#include "vtlab/corpus.hpp"
#include "vtlab/errors.hpp"
#include "vtlab/metrics.hpp"
#include "vtlab/train.hpp"

namespace fs = std::filesystem;
using namespace vtlab;

namespace {

int log_level() {
  const char* env = std::getenv("VTLAB_LOG");
  if (!env) return 1;
  const std::string v = env;
  if (v == "debug") return 2;
  if (v == "warn" || v == "error" || v == "quiet") return 0;
  return 1;
}

void info(const std::string& msg) {
  if (log_level() >= 1) std::cout << msg << "\n";
}

std::string default_run_dir(const std::string& family, uint64_t seed) {
  const auto now = std::chrono::system_clock::now();
  const std::time_t tt = std::chrono::system_clock::to_time_t(now);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y%m%d-%H%M%S", std::localtime(&tt));
  return "runs/" + std::string(buf) + "-seed" + std::to_string(seed) + "-" + family;
}

void add_run_options(CLI::App* cmd, RunConfig& config, std::string& family_str,
                     std::string& run_dir, bool& paper_preset) {
  cmd->add_option("--family", family_str,
                  "seq2seq | ptrnet | ptrnet-coverage | transformer | pretrained-abs");
  cmd->add_option("--corpus", config.corpus_dir, "corpus directory with {train,val,test}.jsonl")
      ->required();
  cmd->add_option("--run-dir", run_dir, "output directory (default runs/<timestamp>-<seed>)");
  cmd->add_option("--batch-size", config.batch_size);
  cmd->add_option("--steps", config.total_steps);
  cmd->add_option("--checkpoint-interval", config.checkpoint_interval);
  cmd->add_option("--seed", config.seed);
  cmd->add_option("--val-batches", config.val_batches,
                  "validation batches per checkpoint (0 = full split)");
  cmd->add_option("--enc-lr", config.enc_base_lr);
  cmd->add_option("--dec-lr", config.dec_base_lr);
  cmd->add_option("--enc-warmup", config.enc_warmup);
  cmd->add_option("--dec-warmup", config.dec_warmup);
  cmd->add_option("--recurrent-lr", config.recurrent_lr);
  cmd->add_option("--grad-clip", config.grad_clip);
  cmd->add_option("--min-word-freq", config.min_word_freq);
  cmd->add_option("--subword-vocab", config.subword_vocab);
  cmd->add_option("--coverage-weight", config.coverage_weight);
  cmd->add_option("--coverage-phase-split", config.coverage_phase_split);
  cmd->add_option("--hidden-dim", config.recurrent.hidden_dim);
  cmd->add_option("--embed-dim", config.recurrent.embed_dim);
  cmd->add_option("--d-model", config.transformer.d_model);
  cmd->add_option("--n-heads", config.transformer.n_heads);
  cmd->add_option("--ffn-dim", config.transformer.ffn_dim);
  cmd->add_option("--enc-layers", config.transformer.enc_layers);
  cmd->add_option("--dec-layers", config.transformer.dec_layers);
  cmd->add_option("--dec-d-model", config.transformer.dec_d_model);
  cmd->add_option("--max-positions", config.transformer.max_positions);
  cmd->add_option("--dropout", config.transformer.dropout);
  cmd->add_flag("--paper-preset", paper_preset,
                "batch 256, 35000 steps, checkpoints every 2000, warmups 20000/10000");
  cmd->add_flag("--no-metadata-augment", [&config](size_t) {
    config.use_metadata_augment = false;
  });
  cmd->set_config("--config", "", "plain key-value config file; flags win");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"voice-title summarization lab"};
  app.require_subcommand(1);

  // ---- generate ----
  auto* gen = app.add_subcommand("generate", "write a synthetic corpus as JSONL splits");
  std::string gen_out = "corpus";
  std::string gen_config_file;
  size_t gen_size = 19269;
  uint64_t gen_seed = 1;
  bool size_given = false, seed_given = false;
  gen->add_option("--out", gen_out, "output directory");
  gen->add_option("--generator-config", gen_config_file, "key-value generator config");
  gen->add_option("--size", gen_size)->each([&](const std::string&) { size_given = true; });
  gen->add_option("--seed", gen_seed)->each([&](const std::string&) { seed_given = true; });

  // ---- pretrain / train ----
  RunConfig pre_cfg;
  std::string pre_family = "transformer";
  std::string pre_run_dir;
  bool pre_paper = false;
  auto* pre = app.add_subcommand("pretrain", "masked-LM pretraining of the encoder");
  add_run_options(pre, pre_cfg, pre_family, pre_run_dir, pre_paper);

  RunConfig train_cfg;
  std::string train_family_str = "transformer";
  std::string train_run_dir, resume_from;
  bool train_paper = false;
  auto* train = app.add_subcommand("train", "train one model family with checkpoint selection");
  add_run_options(train, train_cfg, train_family_str, train_run_dir, train_paper);
  train->add_option("--encoder-checkpoint", train_cfg.encoder_checkpoint,
                    "mlm-encoder checkpoint (pretrained-abs)");
  train->add_option("--resume", resume_from, "continue from one of this run's checkpoints");

  // ---- decode ----
  RunConfig dec_cfg;
  std::string dec_family = "transformer";
  std::string dec_checkpoint, dec_out = "decode.jsonl";
  int dec_threads = 0;
  DecodeConfig dec_override;
  bool has_override = false;
  auto* dec = app.add_subcommand("decode", "beam-decode the test split");
  dec->add_option("--family", dec_family)->required();
  dec->add_option("--corpus", dec_cfg.corpus_dir)->required();
  dec->add_option("--checkpoint", dec_checkpoint)->required();
  dec->add_option("--out", dec_out);
  dec->add_option("--threads", dec_threads);
  dec->add_option("--seed", dec_cfg.seed);
  dec->add_option("--hidden-dim", dec_cfg.recurrent.hidden_dim);
  dec->add_option("--embed-dim", dec_cfg.recurrent.embed_dim);
  dec->add_option("--d-model", dec_cfg.transformer.d_model);
  dec->add_option("--n-heads", dec_cfg.transformer.n_heads);
  dec->add_option("--ffn-dim", dec_cfg.transformer.ffn_dim);
  dec->add_option("--enc-layers", dec_cfg.transformer.enc_layers);
  dec->add_option("--dec-layers", dec_cfg.transformer.dec_layers);
  dec->add_option("--dec-d-model", dec_cfg.transformer.dec_d_model);
  dec->add_option("--max-positions", dec_cfg.transformer.max_positions);
  dec->add_option("--beam-size", dec_override.beam_size)
      ->each([&](const std::string&) { has_override = true; });
  dec->add_option("--alpha", dec_override.alpha)
      ->each([&](const std::string&) { has_override = true; });
  dec->add_option("--min-len", dec_override.min_len)
      ->each([&](const std::string&) { has_override = true; });
  dec->add_option("--max-len", dec_override.max_len)
      ->each([&](const std::string&) { has_override = true; });
  dec->add_flag("--no-trigram-blocking", [&](size_t) {
    dec_override.block_trigrams = false;
    has_override = true;
  });

  // ---- evaluate / compare ----
  auto* eval = app.add_subcommand("evaluate", "ROUGE + duplicate-unigram report");
  std::vector<std::string> eval_inputs;
  std::vector<std::string> eval_labels;
  std::string eval_report_dir = ".";
  eval->add_option("--decode-output", eval_inputs, "decode JSONL file(s)")->required();
  eval->add_option("--label", eval_labels, "label per input (defaults to file stem)");
  eval->add_option("--report-dir", eval_report_dir, "where report JSON files go");

  auto* cmp = app.add_subcommand("compare", "side-by-side table from report JSON files");
  std::vector<std::string> cmp_reports;
  cmp->add_option("--reports", cmp_reports)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (gen->parsed()) {
      GeneratorConfig config;
      config.tables = AttributeTables::defaults();
      if (!gen_config_file.empty()) config = generator_config_from_file(gen_config_file);
      if (size_given) config.size = gen_size;
      if (seed_given) config.seed = gen_seed;
      fs::create_directories(gen_out);
      info("generating " + std::to_string(config.size) + " pairs (seed " +
           std::to_string(config.seed) + ")");
      const auto pairs = generate_corpus(config);
      const CorpusSplit split = split_corpus(pairs, config.seed);
      save_jsonl(gen_out + "/train.jsonl", split.train);
      save_jsonl(gen_out + "/val.jsonl", split.val);
      save_jsonl(gen_out + "/test.jsonl", split.test);
      const CorpusStats stats = corpus_stats(pairs);
      std::printf("split sizes: train %zu / val %zu / test %zu\n", split.train.size(),
                  split.val.size(), split.test.size());
      std::printf("avg. web title length   %.4f\n", stats.mean_web_len);
      std::printf("avg. voice title length %.4f\n", stats.mean_voice_len);
      std::printf("avg. unique web tokens  %.4f\n", stats.mean_unique_web);
      std::printf("avg. unique voice tokens %.4f\n", stats.mean_unique_voice);
    } else if (pre->parsed()) {
      pre_cfg.family = ModelFamily::kTransformer;
      if (pre_paper) apply_paper_preset(pre_cfg);
      pre_cfg.run_dir = pre_run_dir.empty() ? default_run_dir("mlm-encoder", pre_cfg.seed)
                                            : pre_run_dir;
      const TrainResult result = pretrain_encoder(pre_cfg);
      info("best checkpoint: " + result.best_checkpoint + " (val loss " +
           std::to_string(result.ledger.best.val_loss) + ")");
      std::cout << result.best_checkpoint << "\n";
    } else if (train->parsed()) {
      train_cfg.family = parse_family(train_family_str);
      if (train_paper) apply_paper_preset(train_cfg);
      train_cfg.run_dir = train_run_dir.empty()
                              ? default_run_dir(family_name(train_cfg.family), train_cfg.seed)
                              : train_run_dir;
      const TrainResult result = vtlab::train_family(train_cfg, resume_from);
      info("best checkpoint: " + result.best_checkpoint + " (val loss " +
           std::to_string(result.ledger.best.val_loss) + ")");
      std::cout << result.best_checkpoint << "\n";
    } else if (dec->parsed()) {
      dec_cfg.family = parse_family(dec_family);
      if (has_override) dec_cfg.decode_override = dec_override;
      const DecodeSummary summary = decode_corpus(dec_cfg, dec_checkpoint, dec_out, dec_threads);
      info("decoded " + std::to_string(summary.examples) + " examples (" +
           std::to_string(summary.fallback) + " fallback) -> " + summary.output_path);
    } else if (eval->parsed()) {
      std::vector<EvalReport> reports;
      for (size_t i = 0; i < eval_inputs.size(); ++i) {
        const std::string label = i < eval_labels.size()
                                      ? eval_labels[i]
                                      : fs::path(eval_inputs[i]).stem().string();
        const std::string report_path =
            (fs::path(eval_report_dir) / (label + "_report.json")).string();
        fs::create_directories(eval_report_dir);
        reports.push_back(evaluate_corpus(eval_inputs[i], report_path, label));
      }
      std::cout << report_table(reports);
    } else if (cmp->parsed()) {
      std::vector<EvalReport> reports;
      for (const auto& path : cmp_reports) {
        std::ifstream is(path);
        if (!is) throw DataError("compare: cannot open " + path);
        nlohmann::json j;
        is >> j;
        EvalReport r;
        r.label = j.value("label", fs::path(path).stem().string());
        r.mean_r1 = j.value("rouge1_f1", 0.0);
        r.mean_r2 = j.value("rouge2_f1", 0.0);
        r.mean_rl = j.value("rougeL_f1", 0.0);
        r.mean_duplicates = j.value("avg_duplicate_unigrams", 0.0);
        r.examples = j.value("examples", size_t{0});
        reports.push_back(std::move(r));
      }
      std::cout << report_table(reports);
    }
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return 2;
  } catch (const ContractError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
