// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "vtlab/corpus.hpp"
#include "vtlab/decode.hpp"
#include "vtlab/models_recurrent.hpp"
#include "vtlab/models_transformer.hpp"
#include "vtlab/optim.hpp"

namespace vtlab {

enum class ModelFamily {
  kSeq2Seq,
  kPtrNet,
  kPtrNetCoverage,
  kTransformer,
  kPretrainedAbs,
};

ModelFamily parse_family(const std::string& name);
std::string family_name(ModelFamily family);
bool family_is_recurrent(ModelFamily family);
DecodeConfig decode_preset(ModelFamily family);

struct RunConfig {
  ModelFamily family = ModelFamily::kTransformer;
  std::string corpus_dir;          // train.jsonl / val.jsonl / test.jsonl
  std::string run_dir;             // checkpoints, vocab, ledger
  std::string encoder_checkpoint;  // pretrained-abs: MLM encoder to load

  int batch_size = 32;
  int total_steps = 3000;
  int checkpoint_interval = 200;
  uint64_t seed = 1;
  int val_batches = 16;  // 0: full validation split at each checkpoint

  // transformer schedules (Eq.-style warmup/decay per group)
  double enc_base_lr = 2e-3;
  double dec_base_lr = 0.2;
  int enc_warmup = 2000;
  int dec_warmup = 1000;
  // recurrent families train with constant-lr Adam
  double recurrent_lr = 1e-3;
  double grad_clip = 2.0;

  int min_word_freq = 2;    // recurrent word vocabulary
  int subword_vocab = 4000; // transformer subword inventory
  bool use_metadata_augment = true;

  double coverage_weight = 1.0;
  double coverage_phase_split = 0.5;  // fraction of steps before coverage kicks in

  RecurrentConfig recurrent;      // vocab_size filled at train time
  TransformerConfig transformer;  // vocab_size filled at train time

  std::optional<DecodeConfig> decode_override;

  void validate() const;
};

// Full-scale settings from the reference setup: batch 256, 35,000 steps,
// checkpoints every 2,000, warmups 20,000/10,000.
void apply_paper_preset(RunConfig& config);

struct CheckpointRecord {
  int64_t step = 0;
  double val_loss = 0.0;
  std::string path;
};

struct RunLedger {
  std::string family;
  uint64_t seed = 0;
  std::vector<CheckpointRecord> checkpoints;
  CheckpointRecord best;
  std::optional<CheckpointRecord> phase1_best;  // ptrnet-coverage two-phase flow
  size_t skipped_batches = 0;   // MLM batches with zero selected positions
  size_t truncated_inputs = 0;  // encoder inputs cut to max positions
  double wall_seconds = 0.0;
  std::vector<std::pair<double, double>> lr_trace;  // (enc, dec) per step
  std::string config_snapshot;

  void save(const std::string& path) const;
};

struct TrainResult {
  RunLedger ledger;
  std::string best_checkpoint;
};

// Trains the configured family on corpus_dir, saving checkpoints and the
// ledger under run_dir; returns the validation-selected best checkpoint.
// resume_from continues a run from one of its own checkpoints.
TrainResult train_family(const RunConfig& config, const std::string& resume_from = "");

// Masked-LM pretraining of the encoder; checkpoints carry only enc.* tensors
// under the "mlm-encoder" family tag.
TrainResult pretrain_encoder(const RunConfig& config);

// Decodes the test split with the checkpoint's family preset and writes
// decode JSONL (header line then one record per example).
struct DecodeSummary {
  size_t examples = 0;
  size_t fallback = 0;
  std::string output_path;
};
DecodeSummary decode_corpus(const RunConfig& config, const std::string& checkpoint_path,
                            const std::string& output_path, int num_threads = 0);

// Held-out masked-token accuracy of an MLM encoder checkpoint against the
// majority-token baseline.
struct MlmProbe {
  double accuracy = 0.0;
  double majority_baseline = 0.0;
};
MlmProbe probe_mlm_accuracy(const RunConfig& config, const std::string& checkpoint_path,
                            size_t num_batches = 16);

}  // namespace vtlab
