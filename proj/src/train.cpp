// SPDX-License-Identifier: Apache-2.0
#include "vtlab/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <future>
#include <iostream>
#include <thread>

#include <json.hpp>

#include "vtlab/checkpoint.hpp"
#include "vtlab/errors.hpp"
#include "vtlab/subword.hpp"

namespace vtlab {

namespace fs = std::filesystem;

ModelFamily parse_family(const std::string& name) {
  if (name == "seq2seq") return ModelFamily::kSeq2Seq;
  if (name == "ptrnet") return ModelFamily::kPtrNet;
  if (name == "ptrnet-coverage") return ModelFamily::kPtrNetCoverage;
  if (name == "transformer") return ModelFamily::kTransformer;
  if (name == "pretrained-abs") return ModelFamily::kPretrainedAbs;
  throw ConfigError("unknown model family '" + name +
                    "' (expected seq2seq | ptrnet | ptrnet-coverage | transformer | "
                    "pretrained-abs)");
}

std::string family_name(ModelFamily family) {
  switch (family) {
    case ModelFamily::kSeq2Seq: return "seq2seq";
    case ModelFamily::kPtrNet: return "ptrnet";
    case ModelFamily::kPtrNetCoverage: return "ptrnet-coverage";
    case ModelFamily::kTransformer: return "transformer";
    case ModelFamily::kPretrainedAbs: return "pretrained-abs";
  }
  throw ContractError("family_name: bad enum");
}

bool family_is_recurrent(ModelFamily family) {
  return family == ModelFamily::kSeq2Seq || family == ModelFamily::kPtrNet ||
         family == ModelFamily::kPtrNetCoverage;
}

DecodeConfig decode_preset(ModelFamily family) {
  return family_is_recurrent(family) ? recurrent_decode_preset() : transformer_decode_preset();
}

void RunConfig::validate() const {
  if (batch_size < 1) throw ConfigError("config: batch_size must be >= 1");
  if (total_steps < 1) throw ConfigError("config: total_steps must be >= 1");
  // A checkpoint must land exactly on the final step. Intervals that divide
  // evenly satisfy this on their own; otherwise the final step is
  // checkpointed in addition to the interval multiples (the full-scale
  // preset needs this: 35,000 is not a multiple of 2,000).
  if (checkpoint_interval < 1 || checkpoint_interval > total_steps) {
    throw ConfigError("config: checkpoint_interval must be in [1, total_steps]");
  }
  if (family == ModelFamily::kPretrainedAbs && encoder_checkpoint.empty()) {
    throw ConfigError("config: pretrained-abs requires an encoder checkpoint");
  }
  if (decode_override) decode_override->validate();
}

bool checkpoint_due(int64_t step, const RunConfig& config) {
  return step % config.checkpoint_interval == 0 || step == config.total_steps;
}

void apply_paper_preset(RunConfig& config) {
  config.batch_size = 256;
  config.total_steps = 35000;
  config.checkpoint_interval = 2000;
  config.enc_warmup = 20000;
  config.dec_warmup = 10000;
}

void RunLedger::save(const std::string& path) const {
  nlohmann::json j;
  j["family"] = family;
  j["seed"] = seed;
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& c : checkpoints) {
    arr.push_back({{"step", c.step}, {"val_loss", c.val_loss}, {"path", c.path}});
  }
  j["checkpoints"] = std::move(arr);
  j["best"] = {{"step", best.step}, {"val_loss", best.val_loss}, {"path", best.path}};
  if (phase1_best) {
    j["phase1_best"] = {{"step", phase1_best->step},
                        {"val_loss", phase1_best->val_loss},
                        {"path", phase1_best->path}};
  }
  j["skipped_batches"] = skipped_batches;
  j["truncated_inputs"] = truncated_inputs;
  j["wall_seconds"] = wall_seconds;
  if (!config_snapshot.empty()) j["config"] = nlohmann::json::parse(config_snapshot);
  std::ofstream os(path);
  if (!os) throw DataError("ledger: cannot write " + path);
  os << j.dump(2) << "\n";
}

namespace {

std::string config_to_json(const RunConfig& c) {
  nlohmann::json j;
  j["family"] = family_name(c.family);
  j["corpus_dir"] = c.corpus_dir;
  j["run_dir"] = c.run_dir;
  j["encoder_checkpoint"] = c.encoder_checkpoint;
  j["batch_size"] = c.batch_size;
  j["total_steps"] = c.total_steps;
  j["checkpoint_interval"] = c.checkpoint_interval;
  j["seed"] = c.seed;
  j["val_batches"] = c.val_batches;
  j["enc_base_lr"] = c.enc_base_lr;
  j["dec_base_lr"] = c.dec_base_lr;
  j["enc_warmup"] = c.enc_warmup;
  j["dec_warmup"] = c.dec_warmup;
  j["recurrent_lr"] = c.recurrent_lr;
  j["grad_clip"] = c.grad_clip;
  j["min_word_freq"] = c.min_word_freq;
  j["subword_vocab"] = c.subword_vocab;
  j["use_metadata_augment"] = c.use_metadata_augment;
  j["coverage_weight"] = c.coverage_weight;
  j["coverage_phase_split"] = c.coverage_phase_split;
  j["recurrent"] = {{"embed_dim", c.recurrent.embed_dim},
                    {"hidden_dim", c.recurrent.hidden_dim}};
  j["transformer"] = {{"d_model", c.transformer.d_model},
                      {"n_heads", c.transformer.n_heads},
                      {"ffn_dim", c.transformer.ffn_dim},
                      {"enc_layers", c.transformer.enc_layers},
                      {"dec_layers", c.transformer.dec_layers},
                      {"dec_d_model", c.transformer.dec_d_model},
                      {"max_positions", c.transformer.max_positions},
                      {"dropout", c.transformer.dropout}};
  return j.dump();
}

struct LoadedCorpus {
  std::vector<TitlePair> train, val, test;
};

LoadedCorpus load_corpus_dir(const std::string& dir) {
  LoadedCorpus corpus;
  corpus.train = load_jsonl(dir + "/train.jsonl");
  corpus.val = load_jsonl(dir + "/val.jsonl");
  corpus.test = load_jsonl(dir + "/test.jsonl");
  if (corpus.train.empty()) throw DataError("corpus: empty training split in " + dir);
  return corpus;
}

std::vector<std::vector<std::string>> vocab_sequences(const std::vector<TitlePair>& pairs,
                                                      bool augment) {
  std::vector<std::vector<std::string>> seqs;
  seqs.reserve(pairs.size() * 2);
  for (const auto& pair : pairs) {
    seqs.push_back(normalize_tokens(augment ? augment_metadata(pair) : pair.web));
    seqs.push_back(normalize_tokens(pair.voice));
  }
  return seqs;
}

std::string join_tokens(const std::vector<std::string>& tokens) {
  std::string out;
  for (size_t i = 0; i < tokens.size(); ++i) {
    if (i) out.push_back(' ');
    out += tokens[i];
  }
  return out;
}

std::string src_text_of(const TitlePair& pair, bool augment) {
  return join_tokens(normalize_tokens(augment ? augment_metadata(pair) : pair.web));
}

// Batch indices at a given step: sampled with replacement, then ordered by
// source length to keep padding small. Fully determined by (seed, step).
std::vector<size_t> sample_batch_indices(uint64_t seed, int64_t step, size_t corpus_size,
                                         int batch_size,
                                         const std::vector<size_t>& lengths) {
  Rng rng = Rng(seed).derive(static_cast<uint64_t>(step));
  std::vector<size_t> idx(static_cast<size_t>(batch_size));
  for (auto& i : idx) i = rng.uniform_index(corpus_size);
  std::sort(idx.begin(), idx.end(), [&](size_t a, size_t b) {
    if (lengths[a] != lengths[b]) return lengths[a] > lengths[b];
    return a < b;
  });
  return idx;
}

std::string checkpoint_path(const std::string& run_dir, int64_t step) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "ckpt_%06lld.vtl", static_cast<long long>(step));
  return run_dir + "/" + buf;
}

// Merge per-group optimizer moments into one checkpoint-aligned state.
// Parameters outside every group carry zero moments.
AdamState merge_adam(const NamedParams& params, const std::vector<Adam*>& groups,
                     const std::vector<std::vector<std::string>>& group_names) {
  AdamState merged;
  std::map<std::string, std::pair<const std::vector<float>*, const std::vector<float>*>> moments;
  int64_t step = 0;
  for (size_t g = 0; g < groups.size(); ++g) {
    const auto& state = groups[g]->state();
    step = std::max(step, state.step);
    merged.beta1 = state.beta1;
    merged.beta2 = state.beta2;
    merged.epsilon = state.epsilon;
    for (size_t i = 0; i < group_names[g].size(); ++i) {
      moments[group_names[g][i]] = {&state.first_moment[i], &state.second_moment[i]};
    }
  }
  merged.step = step;
  for (const auto& [name, tensor] : params) {
    auto it = moments.find(name);
    if (it == moments.end()) {
      merged.first_moment.emplace_back(tensor.size(), 0.0f);
      merged.second_moment.emplace_back(tensor.size(), 0.0f);
    } else {
      merged.first_moment.push_back(*it->second.first);
      merged.second_moment.push_back(*it->second.second);
    }
  }
  return merged;
}

void restore_adam(const Checkpoint& ckpt, const NamedParams& params, Adam& group,
                  const std::vector<std::string>& names) {
  if (!ckpt.adam) return;
  std::map<std::string, size_t> order;
  for (size_t i = 0; i < ckpt.order.size(); ++i) order[ckpt.order[i]] = i;
  auto& state = group.state();
  state.step = ckpt.adam->step;
  state.beta1 = ckpt.adam->beta1;
  state.beta2 = ckpt.adam->beta2;
  state.epsilon = ckpt.adam->epsilon;
  for (size_t i = 0; i < names.size(); ++i) {
    auto it = order.find(names[i]);
    if (it == order.end()) continue;
    state.first_moment[i] = ckpt.adam->first_moment[it->second];
    state.second_moment[i] = ckpt.adam->second_moment[it->second];
  }
  (void)params;
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create directory " + dir + ": " + ec.message());
}

double finite_or_throw(double loss, int64_t step, const std::string& last_ckpt) {
  if (!std::isfinite(loss)) {
    throw NumericError("non-finite loss at step " + std::to_string(step) +
                       (last_ckpt.empty() ? " (no checkpoint yet)"
                                          : "; last good checkpoint: " + last_ckpt));
  }
  return loss;
}

int resolve_threads(int requested) {
  if (requested > 0) return requested;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

}  // namespace

TrainResult train_family(const RunConfig& config_in, const std::string& resume_from) {
  RunConfig config = config_in;
  config.validate();
  ensure_dir(config.run_dir);
  const auto t_start = std::chrono::steady_clock::now();
  LoadedCorpus corpus = load_corpus_dir(config.corpus_dir);

  RunLedger ledger;
  ledger.family = family_name(config.family);
  ledger.seed = config.seed;
  ledger.config_snapshot = config_to_json(config);
  TrainResult result;

  if (family_is_recurrent(config.family)) {
    Vocabulary vocab =
        build_vocab(vocab_sequences(corpus.train, config.use_metadata_augment),
                    config.min_word_freq);
    vocab.save(config.run_dir + "/vocab.txt");
    config.recurrent.vocab_size = vocab.size();
    config.recurrent.pointer = config.family != ModelFamily::kSeq2Seq;
    config.recurrent.coverage_weight = config.coverage_weight;

    Rng init_rng(config.seed);
    RecurrentModel model = RecurrentModel::init(config.recurrent, init_rng);
    auto named = model.named_parameters();
    std::vector<Tensor> params;
    std::vector<std::string> names;
    for (auto& [n, t] : named) {
      names.push_back(n);
      params.push_back(t);
    }
    Adam adam(params);

    int64_t start_step = 0;
    if (!resume_from.empty()) {
      Checkpoint ckpt = load_checkpoint(resume_from);
      if (ckpt.family != ledger.family) {
        throw ConfigError("resume: checkpoint family '" + ckpt.family + "' != config family '" +
                          ledger.family + "'");
      }
      load_into(ckpt, named, true);
      restore_adam(ckpt, named, adam, names);
      start_step = ckpt.step;
    }

    const bool two_phase = config.family == ModelFamily::kPtrNetCoverage;
    const int64_t phase1_end =
        two_phase ? static_cast<int64_t>(std::llround(config.coverage_phase_split *
                                                      config.total_steps))
                  : 0;

    std::vector<size_t> lengths(corpus.train.size());
    for (size_t i = 0; i < lengths.size(); ++i) lengths[i] = corpus.train[i].web.size();

    auto val_loss_fn = [&](bool with_coverage) {
      const size_t bs = static_cast<size_t>(config.batch_size);
      const size_t limit =
          config.val_batches > 0 ? std::min(corpus.val.size(), bs * config.val_batches)
                                 : corpus.val.size();
      double nll = 0.0, cov = 0.0;
      long tokens = 0;
      for (size_t at = 0; at < limit; at += bs) {
        const size_t end = std::min(limit, at + bs);
        std::vector<TitlePair> pairs(corpus.val.begin() + static_cast<long>(at),
                                     corpus.val.begin() + static_cast<long>(end));
        RecurrentBatch batch = make_recurrent_batch(pairs, vocab, config.use_metadata_augment);
        auto parts = model.forward_loss(batch, with_coverage);
        nll += static_cast<double>(parts.nll_sum.item());
        if (with_coverage) cov += static_cast<double>(parts.coverage_sum.item());
        tokens += parts.tokens;
      }
      if (tokens == 0) return 0.0;
      return (nll + config.coverage_weight * cov) / static_cast<double>(tokens);
    };

    std::string last_ckpt;
    for (int64_t step = start_step + 1; step <= config.total_steps; ++step) {
      const bool with_coverage = two_phase && step > phase1_end;
      const auto idx = sample_batch_indices(config.seed, step, corpus.train.size(),
                                            config.batch_size, lengths);
      std::vector<TitlePair> pairs;
      pairs.reserve(idx.size());
      for (size_t i : idx) pairs.push_back(corpus.train[i]);
      RecurrentBatch batch = make_recurrent_batch(pairs, vocab, config.use_metadata_augment);
      auto parts = model.forward_loss(batch, with_coverage);
      Tensor loss = scale(parts.nll_sum, 1.0f / static_cast<float>(parts.tokens));
      if (with_coverage) {
        loss = add(loss, scale(parts.coverage_sum, static_cast<float>(config.coverage_weight) /
                                                       static_cast<float>(parts.tokens)));
      }
      finite_or_throw(loss.item(), step, last_ckpt);
      loss.backward();
      adam.clip_grad_norm(config.grad_clip);
      adam.step(config.recurrent_lr);
      ledger.lr_trace.emplace_back(config.recurrent_lr, config.recurrent_lr);

      if (checkpoint_due(step, config)) {
        const double vl = val_loss_fn(with_coverage);
        const std::string path = checkpoint_path(config.run_dir, step);
        const AdamState merged = merge_adam(named, {&adam}, {names});
        save_checkpoint(path, ledger.family, step, named, &merged);
        ledger.checkpoints.push_back({step, vl, path});
        last_ckpt = path;
      }
      // Phase boundary: warm-start phase 2 from the best phase-1 checkpoint.
      if (two_phase && step == phase1_end && !ledger.checkpoints.empty()) {
        const CheckpointRecord* best1 = &ledger.checkpoints[0];
        for (const auto& c : ledger.checkpoints)
          if (c.val_loss < best1->val_loss) best1 = &c;
        ledger.phase1_best = *best1;
        Checkpoint ckpt = load_checkpoint(best1->path);
        load_into(ckpt, named, true);
        restore_adam(ckpt, named, adam, names);
      }
    }

    // Best on validation, ties to the earliest; coverage runs select within
    // phase 2 (the coverage-trained model is the product).
    const int64_t select_from = two_phase ? phase1_end + 1 : 1;
    const CheckpointRecord* best = nullptr;
    for (const auto& c : ledger.checkpoints) {
      if (c.step < select_from) continue;
      if (!best || c.val_loss < best->val_loss) best = &c;
    }
    if (!best) throw ConfigError("train: no checkpoints recorded (interval > total steps?)");
    ledger.best = *best;
    result.best_checkpoint = best->path;
  } else {
    // transformer families
    SubwordModel subword = [&]() {
      if (config.family == ModelFamily::kPretrainedAbs) {
        const fs::path enc_dir = fs::path(config.encoder_checkpoint).parent_path();
        return SubwordModel::load((enc_dir / "subword.txt").string());
      }
      return SubwordModel::train(vocab_sequences(corpus.train, config.use_metadata_augment),
                                 config.subword_vocab);
    }();
    subword.save(config.run_dir + "/subword.txt");
    config.transformer.vocab_size = subword.vocab().size();

    Rng init_rng(config.seed);
    TransformerModel model = TransformerModel::init(config.transformer, init_rng);
    auto named = model.named_parameters();

    if (config.family == ModelFamily::kPretrainedAbs) {
      Checkpoint enc_ckpt = load_checkpoint(config.encoder_checkpoint);
      if (enc_ckpt.family != "mlm-encoder") {
        throw ConfigError("pretrained-abs: encoder checkpoint has family '" + enc_ckpt.family +
                          "', expected 'mlm-encoder'");
      }
      NamedParams enc_params;
      for (auto& [n, t] : named) {
        if (n.rfind("enc.", 0) == 0) enc_params.emplace_back(n, t);
      }
      load_into(enc_ckpt, enc_params, true);
    }

    // Optimizer groups: the encoder stack and input embeddings follow the
    // encoder schedule; decoder, bridge, and output head follow the decoder
    // schedule. The MLM head takes no gradient during fine-tuning.
    std::vector<Tensor> enc_params, dec_params;
    std::vector<std::string> enc_names, dec_names;
    for (auto& [n, t] : named) {
      if (n.rfind("enc.mlm", 0) == 0) continue;
      if (n.rfind("enc.", 0) == 0) {
        enc_params.push_back(t);
        enc_names.push_back(n);
      } else {
        dec_params.push_back(t);
        dec_names.push_back(n);
      }
    }
    Adam enc_adam(enc_params), dec_adam(dec_params);
    const LrSchedule enc_sched{config.enc_base_lr, config.enc_warmup};
    const LrSchedule dec_sched{config.dec_base_lr, config.dec_warmup};

    int64_t start_step = 0;
    if (!resume_from.empty()) {
      Checkpoint ckpt = load_checkpoint(resume_from);
      if (ckpt.family != ledger.family) {
        throw ConfigError("resume: checkpoint family '" + ckpt.family + "' != config family '" +
                          ledger.family + "'");
      }
      load_into(ckpt, named, true);
      restore_adam(ckpt, named, enc_adam, enc_names);
      restore_adam(ckpt, named, dec_adam, dec_names);
      enc_adam.state().step = ckpt.step;
      dec_adam.state().step = ckpt.step;
      start_step = ckpt.step;
    }

    // Pre-encode both sides of every split once.
    auto encode_pairs = [&](const std::vector<TitlePair>& pairs) {
      std::pair<std::vector<std::vector<int>>, std::vector<std::vector<int>>> out;
      for (const auto& pair : pairs) {
        out.first.push_back(subword.encode(src_text_of(pair, config.use_metadata_augment)));
        out.second.push_back(subword.encode(join_tokens(normalize_tokens(pair.voice))));
      }
      return out;
    };
    auto [train_src, train_tgt] = encode_pairs(corpus.train);
    auto [val_src, val_tgt] = encode_pairs(corpus.val);

    std::vector<size_t> lengths(train_src.size());
    for (size_t i = 0; i < lengths.size(); ++i) lengths[i] = train_src[i].size();

    const int max_tgt = config.transformer.max_positions - 2;

    auto val_loss_fn = [&]() {
      const size_t bs = static_cast<size_t>(config.batch_size);
      const size_t limit = config.val_batches > 0
                               ? std::min(val_src.size(), bs * config.val_batches)
                               : val_src.size();
      double nll = 0.0;
      long tokens = 0;
      for (size_t at = 0; at < limit; at += bs) {
        const size_t end = std::min(limit, at + bs);
        std::vector<std::vector<int>> src(val_src.begin() + static_cast<long>(at),
                                          val_src.begin() + static_cast<long>(end));
        std::vector<std::vector<int>> tgt(val_tgt.begin() + static_cast<long>(at),
                                          val_tgt.begin() + static_cast<long>(end));
        TransformerBatch batch = make_transformer_batch(
            src, tgt, config.transformer.max_positions, max_tgt, nullptr);
        auto parts = model.forward_loss(batch, false, nullptr);
        nll += static_cast<double>(parts.nll_sum.item());
        tokens += parts.tokens;
      }
      return tokens == 0 ? 0.0 : nll / static_cast<double>(tokens);
    };

    std::string last_ckpt;
    for (int64_t step = start_step + 1; step <= config.total_steps; ++step) {
      const auto idx = sample_batch_indices(config.seed, step, train_src.size(),
                                            config.batch_size, lengths);
      std::vector<std::vector<int>> src, tgt;
      src.reserve(idx.size());
      for (size_t i : idx) {
        src.push_back(train_src[i]);
        tgt.push_back(train_tgt[i]);
      }
      TransformerBatch batch = make_transformer_batch(src, tgt, config.transformer.max_positions,
                                                      max_tgt, &ledger.truncated_inputs);
      Rng drop_rng = Rng(config.seed ^ 0x5eedd20ffULL).derive(static_cast<uint64_t>(step));
      auto parts = model.forward_loss(batch, true, &drop_rng);
      Tensor loss = scale(parts.nll_sum, 1.0f / static_cast<float>(parts.tokens));
      finite_or_throw(loss.item(), step, last_ckpt);
      loss.backward();
      enc_adam.clip_grad_norm(config.grad_clip);
      dec_adam.clip_grad_norm(config.grad_clip);
      const double lr_e = schedule_lr(enc_sched, step);
      const double lr_d = schedule_lr(dec_sched, step);
      enc_adam.step(lr_e);
      dec_adam.step(lr_d);
      ledger.lr_trace.emplace_back(lr_e, lr_d);

      if (checkpoint_due(step, config)) {
        const double vl = val_loss_fn();
        const std::string path = checkpoint_path(config.run_dir, step);
        const AdamState merged =
            merge_adam(named, {&enc_adam, &dec_adam}, {enc_names, dec_names});
        save_checkpoint(path, ledger.family, step, named, &merged);
        ledger.checkpoints.push_back({step, vl, path});
        last_ckpt = path;
      }
    }
    const CheckpointRecord* best = nullptr;
    for (const auto& c : ledger.checkpoints) {
      if (!best || c.val_loss < best->val_loss) best = &c;
    }
    if (!best) throw ConfigError("train: no checkpoints recorded (interval > total steps?)");
    ledger.best = *best;
    result.best_checkpoint = best->path;
  }

  ledger.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  ledger.save(config.run_dir + "/ledger.json");
  result.ledger = std::move(ledger);
  return result;
}

TrainResult pretrain_encoder(const RunConfig& config_in) {
  RunConfig config = config_in;
  config.validate();
  ensure_dir(config.run_dir);
  const auto t_start = std::chrono::steady_clock::now();
  LoadedCorpus corpus = load_corpus_dir(config.corpus_dir);

  SubwordModel subword = SubwordModel::train(
      vocab_sequences(corpus.train, config.use_metadata_augment), config.subword_vocab);
  subword.save(config.run_dir + "/subword.txt");
  config.transformer.vocab_size = subword.vocab().size();

  Rng init_rng(config.seed);
  TransformerModel model = TransformerModel::init(config.transformer, init_rng);
  auto all_named = model.named_parameters();
  NamedParams named;  // encoder side only
  std::vector<Tensor> params;
  std::vector<std::string> names;
  for (auto& [n, t] : all_named) {
    if (n.rfind("enc.", 0) != 0) continue;
    named.emplace_back(n, t);
    names.push_back(n);
    params.push_back(t);
  }
  Adam adam(params);
  const LrSchedule sched{config.enc_base_lr, config.enc_warmup};

  // Pretraining sentences: augmented web titles and voice titles, framed.
  auto frame = [&](const std::string& text) {
    return prepare_encoder_ids(subword.encode(text), config.transformer.max_positions).ids;
  };
  std::vector<std::vector<int>> sentences;
  for (const auto& pair : corpus.train) {
    sentences.push_back(frame(src_text_of(pair, config.use_metadata_augment)));
    sentences.push_back(frame(join_tokens(normalize_tokens(pair.voice))));
  }
  std::vector<std::vector<int>> val_sentences;
  for (const auto& pair : corpus.val) {
    val_sentences.push_back(frame(src_text_of(pair, config.use_metadata_augment)));
    val_sentences.push_back(frame(join_tokens(normalize_tokens(pair.voice))));
  }

  RunLedger ledger;
  ledger.family = "mlm-encoder";
  ledger.seed = config.seed;
  ledger.config_snapshot = config_to_json(config);

  std::vector<size_t> lengths(sentences.size());
  for (size_t i = 0; i < lengths.size(); ++i) lengths[i] = sentences[i].size();

  auto val_loss_fn = [&]() {
    const size_t bs = static_cast<size_t>(config.batch_size);
    const size_t limit = config.val_batches > 0
                             ? std::min(val_sentences.size(), bs * config.val_batches)
                             : val_sentences.size();
    double nll = 0.0;
    long tokens = 0;
    for (size_t at = 0; at < limit; at += bs) {
      const size_t end = std::min(limit, at + bs);
      std::vector<std::vector<int>> ids(val_sentences.begin() + static_cast<long>(at),
                                        val_sentences.begin() + static_cast<long>(end));
      Rng mask_rng = Rng(config.seed ^ 0xa1ULL).derive(at);
      PretrainBatch batch =
          make_mlm_batch(ids, config.transformer.vocab_size, mask_rng);
      if (batch.selected == 0) continue;
      auto parts = model.mlm_loss(batch, false, nullptr);
      nll += static_cast<double>(parts.nll_sum.item());
      tokens += parts.tokens;
    }
    return tokens == 0 ? 0.0 : nll / static_cast<double>(tokens);
  };

  std::string last_ckpt;
  for (int64_t step = 1; step <= config.total_steps; ++step) {
    const auto idx = sample_batch_indices(config.seed, step, sentences.size(),
                                          config.batch_size, lengths);
    std::vector<std::vector<int>> ids;
    ids.reserve(idx.size());
    for (size_t i : idx) ids.push_back(sentences[i]);
    Rng mask_rng = Rng(config.seed ^ 0x313aULL).derive(static_cast<uint64_t>(step));
    PretrainBatch batch = make_mlm_batch(ids, config.transformer.vocab_size, mask_rng);
    if (batch.selected == 0) {
      ++ledger.skipped_batches;  // counted in the run log, no update
      continue;
    }
    Rng drop_rng = Rng(config.seed ^ 0xd20ULL).derive(static_cast<uint64_t>(step));
    auto parts = model.mlm_loss(batch, true, &drop_rng);
    Tensor loss = scale(parts.nll_sum, 1.0f / static_cast<float>(parts.tokens));
    finite_or_throw(loss.item(), step, last_ckpt);
    loss.backward();
    adam.clip_grad_norm(config.grad_clip);
    const double lr = schedule_lr(sched, step);
    adam.step(lr);
    ledger.lr_trace.emplace_back(lr, 0.0);

    if (checkpoint_due(step, config)) {
      const double vl = val_loss_fn();
      const std::string path = checkpoint_path(config.run_dir, step);
      const AdamState merged = merge_adam(named, {&adam}, {names});
      save_checkpoint(path, "mlm-encoder", step, named, &merged);
      ledger.checkpoints.push_back({step, vl, path});
      last_ckpt = path;
    }
  }
  const CheckpointRecord* best = nullptr;
  for (const auto& c : ledger.checkpoints) {
    if (!best || c.val_loss < best->val_loss) best = &c;
  }
  if (!best) throw ConfigError("pretrain: no checkpoints recorded");
  ledger.best = *best;
  ledger.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  ledger.save(config.run_dir + "/ledger.json");
  return {ledger, best->path};
}

DecodeSummary decode_corpus(const RunConfig& config, const std::string& checkpoint_path_in,
                            const std::string& output_path, int num_threads) {
  Checkpoint ckpt = load_checkpoint(checkpoint_path_in);
  const std::string expected = family_name(config.family);
  if (ckpt.family != expected) {
    throw ConfigError("decode: checkpoint family '" + ckpt.family + "' does not match '" +
                      expected + "'");
  }
  LoadedCorpus corpus = load_corpus_dir(config.corpus_dir);
  const fs::path run_dir = fs::path(checkpoint_path_in).parent_path();
  DecodeConfig dcfg = config.decode_override ? *config.decode_override
                                             : decode_preset(config.family);
  dcfg.validate();

  std::ofstream os(output_path);
  if (!os) throw DataError("decode: cannot write " + output_path);
  nlohmann::json header;
  header["header"] = {{"family", expected},
                      {"beam_size", dcfg.beam_size},
                      {"alpha", dcfg.alpha},
                      {"min_len", dcfg.min_len},
                      {"max_len", dcfg.max_len},
                      {"block_trigrams", dcfg.block_trigrams},
                      {"checkpoint", fs::path(checkpoint_path_in).filename().string()}};
  os << header.dump() << "\n";

  DecodeSummary summary;
  summary.output_path = output_path;
  if (corpus.test.empty()) return summary;

  struct Row {
    std::string predicted;
    double score = 0.0;
    bool fallback = false;
  };
  std::vector<Row> rows(corpus.test.size());

  const int threads = std::min<int>(resolve_threads(num_threads),
                                    static_cast<int>(corpus.test.size()));

  if (family_is_recurrent(config.family)) {
    Vocabulary vocab = Vocabulary::load((run_dir / "vocab.txt").string());
    RunConfig cfg = config;
    cfg.recurrent.vocab_size = vocab.size();
    cfg.recurrent.pointer = config.family != ModelFamily::kSeq2Seq;
    Rng init_rng(config.seed);
    RecurrentModel model = RecurrentModel::init(cfg.recurrent, init_rng);
    auto named = model.named_parameters();
    load_into(ckpt, named, true);

    auto worker = [&](size_t lo, size_t hi) {
      for (size_t i = lo; i < hi; ++i) {
        RecurrentScorer scorer(model, corpus.test[i].web, vocab);
        DecodeResult res = beam_search(scorer, dcfg);
        std::string text;
        for (int id : res.tokens) {
          if (id < kNumSpecials && id != kUnkId) continue;
          if (!text.empty()) text.push_back(' ');
          text += id == kUnkId ? "<UNK>" : scorer.token_text(id);
        }
        rows[i] = {text, res.score, res.fallback_alive};
      }
    };
    std::vector<std::future<void>> futs;
    const size_t chunk = (rows.size() + static_cast<size_t>(threads) - 1) /
                         static_cast<size_t>(threads);
    for (int t = 0; t < threads; ++t) {
      const size_t lo = static_cast<size_t>(t) * chunk;
      const size_t hi = std::min(rows.size(), lo + chunk);
      if (lo < hi) futs.push_back(std::async(std::launch::async, worker, lo, hi));
    }
    for (auto& f : futs) f.get();
  } else {
    SubwordModel subword = SubwordModel::load((run_dir / "subword.txt").string());
    RunConfig cfg = config;
    cfg.transformer.vocab_size = subword.vocab().size();
    Rng init_rng(config.seed);
    TransformerModel model = TransformerModel::init(cfg.transformer, init_rng);
    auto named = model.named_parameters();
    load_into(ckpt, named, true);

    auto worker = [&](size_t lo, size_t hi) {
      for (size_t i = lo; i < hi; ++i) {
        const std::vector<int> src_ids =
            subword.encode(src_text_of(corpus.test[i], config.use_metadata_augment));
        TransformerScorer scorer(model, src_ids);
        DecodeResult res = beam_search(scorer, dcfg);
        rows[i] = {subword.decode(res.tokens), res.score, res.fallback_alive};
      }
    };
    std::vector<std::future<void>> futs;
    const size_t chunk = (rows.size() + static_cast<size_t>(threads) - 1) /
                         static_cast<size_t>(threads);
    for (int t = 0; t < threads; ++t) {
      const size_t lo = static_cast<size_t>(t) * chunk;
      const size_t hi = std::min(rows.size(), lo + chunk);
      if (lo < hi) futs.push_back(std::async(std::launch::async, worker, lo, hi));
    }
    for (auto& f : futs) f.get();
  }

  for (size_t i = 0; i < rows.size(); ++i) {
    nlohmann::json j;
    j["web"] = join_tokens(corpus.test[i].web);
    j["reference_voice"] = join_tokens(normalize_tokens(corpus.test[i].voice));
    j["predicted_voice"] = rows[i].predicted;
    j["score"] = rows[i].score;
    j["flags"] = {{"fallback_alive", rows[i].fallback}};
    os << j.dump() << "\n";
    if (rows[i].fallback) ++summary.fallback;
    ++summary.examples;
  }
  return summary;
}

MlmProbe probe_mlm_accuracy(const RunConfig& config, const std::string& checkpoint_path_in,
                            size_t num_batches) {
  Checkpoint ckpt = load_checkpoint(checkpoint_path_in);
  if (ckpt.family != "mlm-encoder") {
    throw ConfigError("probe: expected an mlm-encoder checkpoint");
  }
  const fs::path run_dir = fs::path(checkpoint_path_in).parent_path();
  SubwordModel subword = SubwordModel::load((run_dir / "subword.txt").string());
  RunConfig cfg = config;
  cfg.transformer.vocab_size = subword.vocab().size();
  Rng init_rng(config.seed);
  TransformerModel model = TransformerModel::init(cfg.transformer, init_rng);
  NamedParams enc_named;
  for (auto& [n, t] : model.named_parameters()) {
    if (n.rfind("enc.", 0) == 0) enc_named.emplace_back(n, t);
  }
  load_into(ckpt, enc_named, true);

  LoadedCorpus corpus = load_corpus_dir(config.corpus_dir);
  std::vector<std::vector<int>> sentences;
  for (const auto& pair : corpus.val) {
    sentences.push_back(prepare_encoder_ids(
        subword.encode(src_text_of(pair, config.use_metadata_augment)),
        config.transformer.max_positions).ids);
    sentences.push_back(prepare_encoder_ids(
        subword.encode(join_tokens(normalize_tokens(pair.voice))),
        config.transformer.max_positions).ids);
  }

  size_t correct = 0, total = 0;
  std::map<int, size_t> target_freq;
  const size_t bs = static_cast<size_t>(config.batch_size);
  for (size_t b = 0; b < num_batches; ++b) {
    const size_t at = b * bs;
    if (at >= sentences.size()) break;
    const size_t end = std::min(sentences.size(), at + bs);
    std::vector<std::vector<int>> ids(sentences.begin() + static_cast<long>(at),
                                      sentences.begin() + static_cast<long>(end));
    Rng mask_rng = Rng(config.seed ^ 0x9a0bULL).derive(b);
    PretrainBatch batch = make_mlm_batch(ids, cfg.transformer.vocab_size, mask_rng);
    if (batch.selected == 0) continue;
    Tensor h = model.encode(batch.ids, batch.batch, batch.seq_len, batch.lengths);
    std::vector<int> row_ids;
    std::vector<int> targets;
    for (size_t i = 0; i < batch.targets.size(); ++i) {
      if (batch.targets[i] >= 0) {
        row_ids.push_back(static_cast<int>(i));
        targets.push_back(batch.targets[i]);
      }
    }
    Tensor probs = softmax(add_rowvec(matmul(gather_rows(h, row_ids), model.mlm_w), model.mlm_b));
    for (size_t r = 0; r < targets.size(); ++r) {
      int argmax = 0;
      float best = probs.at2(r, 0);
      for (int v = 1; v < cfg.transformer.vocab_size; ++v) {
        if (probs.at2(r, static_cast<size_t>(v)) > best) {
          best = probs.at2(r, static_cast<size_t>(v));
          argmax = v;
        }
      }
      correct += argmax == targets[r] ? 1 : 0;
      target_freq[targets[r]] += 1;
      ++total;
    }
  }
  MlmProbe probe;
  if (total > 0) {
    size_t majority = 0;
    for (const auto& [t, c] : target_freq) majority = std::max(majority, c);
    probe.accuracy = static_cast<double>(correct) / static_cast<double>(total);
    probe.majority_baseline = static_cast<double>(majority) / static_cast<double>(total);
  }
  return probe;
}

}  // namespace vtlab
