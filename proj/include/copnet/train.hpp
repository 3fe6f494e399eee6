#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "copnet/dataset.hpp"
#include "copnet/model.hpp"

namespace copnet {

enum class ModelKind { kCop, kMonolith, kBrokenCausal };

std::string model_kind_name(ModelKind kind);
ModelKind model_kind_from_name(const std::string& name);  // ConfigError on unknown

// One of the trainable architectures behind a common parameter surface.
struct AnyModel {
  ModelKind kind = ModelKind::kCop;
  std::optional<CopModel> cop;        // kCop / kBrokenCausal
  std::optional<MonolithModel> mono;  // kMonolith

  std::vector<NamedParam> parameters() const;
  const CopConfig& config() const;
};

AnyModel init_model(ModelKind kind, const CopConfig& cfg, std::uint64_t seed);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Bias-corrected Adam over a fixed parameter list. Accumulator order follows
// the parameter list; a TrainError names the offending tensor if a gradient
// turns non-finite.
class AdamState {
 public:
  AdamState() = default;
  AdamState(const AdamConfig& cfg, const std::vector<NamedParam>& params);

  void step(std::vector<NamedParam>& params);

  std::int64_t step_count() const { return t_; }
  const AdamConfig& config() const { return cfg_; }

  // Accumulators as named tensors ("adam/m/<param>", "adam/v/<param>") for
  // checkpointing; restore() is the inverse.
  std::vector<NamedParam> state_tensors(const std::vector<NamedParam>& params) const;
  void restore(const std::vector<NamedParam>& params,
               const std::vector<NamedParam>& state, std::int64_t step_count);

 private:
  AdamConfig cfg_;
  std::int64_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

struct TrainConfig {
  CopConfig model;
  ModelKind kind = ModelKind::kCop;
  int epochs = 30;
  int batch = 128;
  std::uint64_t seed = 1;
  AdamConfig adam;
  std::string dataset_dir;   // gen-data output: train.jsonl/test.jsonl/meta.json
  std::string out_dir;       // receives checkpoint.copv, checkpoint_best.copv, train_log.csv
  std::string resume_from;   // optional checkpoint to continue from

  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
  void validate() const;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_acc = 0.0;
  std::vector<double> per_type_acc;
};

struct TrainResult {
  AnyModel model;
  std::vector<EpochRecord> log;
  int best_epoch = 0;
  double best_val_acc = 0.0;
  std::string checkpoint_path;
  std::string best_checkpoint_path;
  std::string log_path;
};

// Mean training loss of one batch under the model's own loss:
// the three-part pathway loss for cop/broken, plain cross-entropy for the
// monolith. rng feeds the per-sample gate noise (cop kinds, training mode).
Tensor model_train_loss(const AnyModel& model, const Tensor& q_batch,
                        const Tensor& v_batch, const std::vector<int>& targets,
                        RngState* rng);

// Deterministic inference predictions, one per row.
std::vector<int> model_predict(const AnyModel& model, const Tensor& q_batch,
                               const Tensor& v_batch);

// Seeded mini-batch training with per-epoch validation on the dataset's test
// split, final + best-validation checkpoints and a CSV epoch log. Fully
// reproducible from (seed, config, dataset).
TrainResult train(const TrainConfig& config);

// In-memory variant used by sweeps/tests: same loop, no files written unless
// out_dir is non-empty.
TrainResult train(const TrainConfig& config, const Dataset& dataset);

// Rebuild a model (and optionally the optimizer) from a checkpoint.
AnyModel model_from_checkpoint(const struct Checkpoint& ckpt);

}  // namespace copnet
