#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace copnet {

// Answer-prior specification inducing the train/test distribution shift.
// Answers (global ids in [0, vocab)) are partitioned into per-type subsets;
// each split draws a type's answer from that split's prior over the subset.
// bias_strength = 0 makes both priors uniform per type.
struct BiasSpec {
  int num_types = 0;
  std::vector<std::vector<int>> answers_per_type;
  std::vector<std::vector<double>> train_prior;
  std::vector<std::vector<double>> test_prior;
  double bias_strength = 0.0;
  double noise_sigma = 0.1;

  void validate(int vocab) const;  // throws DataError
};

// Canonical spec: answers split into contiguous near-even blocks; each prior
// is beta * point-mass + (1-beta) * uniform, with the train and test mass on
// different answers of each type.
BiasSpec default_bias_spec(int num_types, int vocab, double beta, double noise_sigma);

// One synthetic QA instance. The latent concepts (c_q, c_v) jointly determine
// the answer through the additive-modular rule; they are kept for oracle
// checks and routing analysis.
struct Sample {
  int q_type = 0;
  int c_q = 0;
  int c_v = 0;
  int answer = 0;
  std::vector<double> q_feat;
  std::vector<double> v_feat;
};

struct DataDims {
  int d_q = 32;
  int d_v = 32;
  int num_concepts = 10;
};

struct DatasetMeta {
  std::uint64_t seed = 0;
  DataDims dims;
  int vocab = 0;
  BiasSpec spec;
  std::vector<double> type_emb;       // [num_types, d_q] flattened
  std::vector<double> concept_q_emb;  // [num_concepts, d_q]
  std::vector<double> concept_v_emb;  // [num_concepts, d_v]
  int n_train = 0;
  int n_test = 0;
};

struct Dataset {
  std::vector<Sample> train;
  std::vector<Sample> test;
  DatasetMeta meta;
};

// Global answer id for (type, c_q, c_v): the type's answer subset indexed by
// (c_q + c_v) mod subset size. Recoverable only from both latents.
int answer_rule(const BiasSpec& spec, int q_type, int c_q, int c_v);

// Draws each sample by type -> answer (from the split prior) -> latent pair
// uniform over the answer's preimage under the rule. Features are embedding
// sums plus Gaussian noise. Bit-reproducible per seed.
Dataset generate_dataset(const BiasSpec& spec, const DataDims& dims, int n_train,
                         int n_test, std::uint64_t seed);

// Directory layout: train.jsonl, test.jsonl, meta.json.
void save_dataset(const std::string& dir, const Dataset& dataset);
Dataset load_dataset(const std::string& dir);

// Lower-level file forms.
void save_samples(const std::string& path, const std::vector<Sample>& samples);
std::vector<Sample> load_samples(const std::string& path, const DatasetMeta& meta);
void save_meta(const std::string& path, const DatasetMeta& meta);
DatasetMeta load_meta(const std::string& path);

// Empirical answer distribution (length vocab) of one question type;
// ContractError when the type has no samples.
std::vector<double> answer_prior(const std::vector<Sample>& samples, int q_type,
                                 int vocab);

// Half the L1 distance between two categorical distributions.
double tv_distance(const std::vector<double>& p, const std::vector<double>& q);

}  // namespace copnet
