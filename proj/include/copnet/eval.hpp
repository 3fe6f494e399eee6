#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "copnet/dataset.hpp"
#include "copnet/model.hpp"
#include "copnet/train.hpp"

namespace copnet {

// How a trace is turned into an answer score. The EXCL variants drop one term
// from the combination rule; RAND_ROUTE and BROKEN_X change the routing or
// the model upstream and score as Z_FINAL.
enum class ScoreVariant {
  kZFinal,
  kZ11Only,
  kZ10Only,
  kZUOnly,
  kExclZ11,
  kExclZ10,
  kExclZU,
  kRandRoute,
  kBrokenX,
};

std::string variant_name(ScoreVariant v);
ScoreVariant variant_from_name(const std::string& name);  // ConfigError, lists names
const std::vector<ScoreVariant>& all_variants();

Tensor score(const ForwardTrace& trace, ScoreVariant variant);

struct EvalReport {
  std::string variant;
  double overall = 0.0;
  std::vector<double> per_type;
  std::vector<std::int64_t> per_type_counts;
  // Distribution of predicted answers per question type, each summing to 1.
  std::vector<std::vector<double>> predicted_dist;
  std::string config_fingerprint;
};

// Accuracy of predict(score(trace, variant)) over the samples; deterministic
// inference routing except for kRandRoute, which draws uniform one-hot
// selections from `seed`.
EvalReport evaluate(const AnyModel& model, const std::vector<Sample>& samples,
                    const DatasetMeta& meta, ScoreVariant variant,
                    std::uint64_t seed = 0);

EvalReport random_routing_eval(const AnyModel& model,
                               const std::vector<Sample>& samples,
                               const DatasetMeta& meta, std::uint64_t seed);

// Deterministic inference predictions for every sample, in order.
std::vector<int> model_predictions(const AnyModel& model,
                                   const std::vector<Sample>& samples);

struct RoutingStats {
  int n1 = 0;
  int n2 = 0;
  // One flattened n1 x n2 matrix per question type; entries sum to 1.
  std::vector<std::vector<double>> per_type;
  std::vector<std::int64_t> per_type_counts;
};

// Proportion of (interpreting expert, answering-expert-on-i_mul) selections
// per question type under deterministic inference routing.
RoutingStats routing_stats(const AnyModel& model, const std::vector<Sample>& samples,
                           const DatasetMeta& meta);

struct AnswerDistribution {
  std::vector<double> train_dist;
  std::vector<double> test_dist;
  std::vector<double> predicted_dist;
};

AnswerDistribution answer_distribution(const AnyModel& model,
                                       const std::vector<Sample>& train_samples,
                                       const std::vector<Sample>& test_samples,
                                       const DatasetMeta& meta, int q_type);

// Distribution of prediction values restricted to samples of one type.
std::vector<double> prediction_distribution(const std::vector<int>& predictions,
                                            const std::vector<Sample>& samples,
                                            int q_type, int vocab);

// --- sweep harness ------------------------------------------------------------

struct SweepCell {
  int n1 = 0, n2 = 0, h1 = 0, h2 = 0;
  std::vector<double> accs;  // one per seed
  double mean = 0.0;
  double stderr_mean = 0.0;
};

// Trains each (n1, n2) pair at every seed with the expert hidden sizes refit
// so each stage keeps the reference parameter budget, then reports test
// accuracy mean +/- standard error.
std::vector<SweepCell> expert_grid_sweep(const TrainConfig& base,
                                         const Dataset& dataset,
                                         const std::vector<std::pair<int, int>>& pairs,
                                         const std::vector<std::uint64_t>& seeds);

struct KhotCell {
  int k = 0;
  std::vector<double> accs;
  double mean = 0.0;
  double stderr_mean = 0.0;
};

// Trains and evaluates with k experts active in both stages (training and
// inference alike).
std::vector<KhotCell> khot_sweep(const TrainConfig& base, const Dataset& dataset,
                                 const std::vector<int>& ks,
                                 const std::vector<std::uint64_t>& seeds);

double mean_of(const std::vector<double>& xs);
double stderr_of(const std::vector<double>& xs);

}  // namespace copnet
