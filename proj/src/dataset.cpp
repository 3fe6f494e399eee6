#include "copnet/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "copnet/common.hpp"
#include "copnet/io.hpp"
#include "copnet/rng.hpp"

namespace copnet {

using nlohmann::json;

namespace {

void check_prior(const std::vector<double>& p, int expected, const std::string& what) {
  if (static_cast<int>(p.size()) != expected)
    throw DataError(what + ": expected " + std::to_string(expected) +
                    " entries, got " + std::to_string(p.size()));
  double s = 0.0;
  for (double v : p) {
    if (v < 0.0) throw DataError(what + ": negative probability");
    s += v;
  }
  if (std::fabs(s - 1.0) > 1e-9)
    throw DataError(what + ": probabilities sum to " + format_double(s));
}

int categorical(const std::vector<double>& p, double u) {
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    acc += p[i];
    if (u < acc) return static_cast<int>(i);
  }
  return static_cast<int>(p.size()) - 1;
}

std::vector<double> draw_normals(RngState& rng, std::size_t count) {
  std::vector<double> out(count);
  for (double& v : out) v = rng.normal();
  return out;
}

}  // namespace

void BiasSpec::validate(int vocab) const {
  if (num_types < 1) throw DataError("bias spec: num_types must be at least 1");
  if (bias_strength < 0.0 || bias_strength > 1.0)
    throw DataError("bias spec: bias_strength must lie in [0,1]");
  if (noise_sigma < 0.0) throw DataError("bias spec: noise_sigma must be nonnegative");
  if (static_cast<int>(answers_per_type.size()) != num_types ||
      static_cast<int>(train_prior.size()) != num_types ||
      static_cast<int>(test_prior.size()) != num_types)
    throw DataError("bias spec: per-type lists must have num_types entries");

  std::vector<bool> seen(static_cast<std::size_t>(vocab), false);
  for (int t = 0; t < num_types; ++t) {
    const auto& answers = answers_per_type[t];
    if (answers.empty())
      throw DataError("bias spec: type " + std::to_string(t) + " has no answers");
    for (int a : answers) {
      if (a < 0 || a >= vocab)
        throw DataError("bias spec: answer id " + std::to_string(a) +
                        " outside [0," + std::to_string(vocab) + ")");
      if (seen[a])
        throw DataError("bias spec: answer id " + std::to_string(a) +
                        " assigned to two types");
      seen[a] = true;
    }
    const std::string label = "type " + std::to_string(t);
    check_prior(train_prior[t], static_cast<int>(answers.size()), label + " train prior");
    check_prior(test_prior[t], static_cast<int>(answers.size()), label + " test prior");
    if (bias_strength == 0.0) {
      const double uniform = 1.0 / static_cast<double>(answers.size());
      for (std::size_t i = 0; i < answers.size(); ++i)
        if (std::fabs(train_prior[t][i] - uniform) > 1e-9 ||
            std::fabs(test_prior[t][i] - uniform) > 1e-9)
          throw DataError("bias spec: zero bias strength requires uniform priors");
    }
  }
}

BiasSpec default_bias_spec(int num_types, int vocab, double beta, double noise_sigma) {
  if (num_types < 1 || vocab < num_types)
    throw DataError("default bias spec: need vocab >= num_types >= 1");
  BiasSpec spec;
  spec.num_types = num_types;
  spec.bias_strength = beta;
  spec.noise_sigma = noise_sigma;
  int next = 0;
  for (int t = 0; t < num_types; ++t) {
    const int size = vocab / num_types + (t < vocab % num_types ? 1 : 0);
    std::vector<int> answers(size);
    for (int i = 0; i < size; ++i) answers[i] = next++;
    const double uniform = (1.0 - beta) / size;
    std::vector<double> train(size, uniform);
    std::vector<double> test(size, uniform);
    train[0] += beta;              // train mass concentrates here
    test[1 % size] += beta;        // test mass moves to a different answer
    spec.answers_per_type.push_back(std::move(answers));
    spec.train_prior.push_back(std::move(train));
    spec.test_prior.push_back(std::move(test));
  }
  return spec;
}

int answer_rule(const BiasSpec& spec, int q_type, int c_q, int c_v) {
  if (q_type < 0 || q_type >= spec.num_types)
    throw IndexError("answer_rule: type " + std::to_string(q_type) + " out of range");
  if (c_q < 0 || c_v < 0) throw IndexError("answer_rule: negative concept index");
  const auto& answers = spec.answers_per_type[q_type];
  return answers[(c_q + c_v) % static_cast<int>(answers.size())];
}

namespace {

// Latent pairs per (type, local answer index).
std::vector<std::vector<std::vector<std::pair<int, int>>>> build_preimages(
    const BiasSpec& spec, int num_concepts) {
  std::vector<std::vector<std::vector<std::pair<int, int>>>> pre(spec.num_types);
  for (int t = 0; t < spec.num_types; ++t) {
    const int n_answers = static_cast<int>(spec.answers_per_type[t].size());
    pre[t].resize(n_answers);
    for (int cq = 0; cq < num_concepts; ++cq)
      for (int cv = 0; cv < num_concepts; ++cv)
        pre[t][(cq + cv) % n_answers].push_back({cq, cv});
  }
  return pre;
}

std::vector<Sample> draw_split(const BiasSpec& spec, const DataDims& dims,
                               const DatasetMeta& meta,
                               const std::vector<std::vector<std::vector<std::pair<int, int>>>>& pre,
                               const std::vector<std::vector<double>>& priors,
                               int count, RngState rng) {
  for (int t = 0; t < spec.num_types; ++t)
    for (std::size_t a = 0; a < priors[t].size(); ++a)
      if (priors[t][a] > 0.0 && pre[t][a].empty())
        throw DataError("generate_dataset: empty latent preimage for type " +
                        std::to_string(t) + ", answer " +
                        std::to_string(spec.answers_per_type[t][a]));

  std::vector<Sample> samples;
  samples.reserve(count);
  const double sigma = spec.noise_sigma;
  for (int i = 0; i < count; ++i) {
    Sample s;
    s.q_type = static_cast<int>(rng.uniform_int(spec.num_types));
    const int local = categorical(priors[s.q_type], rng.uniform());
    const auto& pairs = pre[s.q_type][local];
    const auto& [cq, cv] = pairs[rng.uniform_int(pairs.size())];
    s.c_q = cq;
    s.c_v = cv;
    s.answer = spec.answers_per_type[s.q_type][local];
    s.q_feat.resize(dims.d_q);
    for (int j = 0; j < dims.d_q; ++j)
      s.q_feat[j] = meta.type_emb[static_cast<std::size_t>(s.q_type) * dims.d_q + j] +
                    meta.concept_q_emb[static_cast<std::size_t>(cq) * dims.d_q + j] +
                    sigma * rng.normal();
    s.v_feat.resize(dims.d_v);
    for (int j = 0; j < dims.d_v; ++j)
      s.v_feat[j] = meta.concept_v_emb[static_cast<std::size_t>(cv) * dims.d_v + j] +
                    sigma * rng.normal();
    samples.push_back(std::move(s));
  }
  return samples;
}

}  // namespace

Dataset generate_dataset(const BiasSpec& spec, const DataDims& dims, int n_train,
                         int n_test, std::uint64_t seed) {
  if (n_train < 1 || n_test < 1)
    throw DataError("generate_dataset: split sizes must be positive");
  if (dims.d_q < 1 || dims.d_v < 1 || dims.num_concepts < 1)
    throw DataError("generate_dataset: dimensions must be positive");
  int vocab = 0;
  for (const auto& answers : spec.answers_per_type)
    for (int a : answers) vocab = std::max(vocab, a + 1);
  spec.validate(vocab);

  Dataset ds;
  ds.meta.seed = seed;
  ds.meta.dims = dims;
  ds.meta.vocab = vocab;
  ds.meta.spec = spec;
  ds.meta.n_train = n_train;
  ds.meta.n_test = n_test;

  RngState root(seed);
  RngState emb = root.split("embeddings");
  ds.meta.type_emb = draw_normals(emb, static_cast<std::size_t>(spec.num_types) * dims.d_q);
  ds.meta.concept_q_emb =
      draw_normals(emb, static_cast<std::size_t>(dims.num_concepts) * dims.d_q);
  ds.meta.concept_v_emb =
      draw_normals(emb, static_cast<std::size_t>(dims.num_concepts) * dims.d_v);

  const auto pre = build_preimages(spec, dims.num_concepts);
  ds.train = draw_split(spec, dims, ds.meta, pre, spec.train_prior, n_train,
                        root.split("train-samples"));
  ds.test = draw_split(spec, dims, ds.meta, pre, spec.test_prior, n_test,
                       root.split("test-samples"));
  return ds;
}

// --- serialization -----------------------------------------------------------

namespace {

void append_double_array(std::string& out, const std::vector<double>& v) {
  out += '[';
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    out += format_double(v[i]);
  }
  out += ']';
}

int require_int(const json& j, const char* key, int line) {
  if (!j.contains(key) || !j[key].is_number_integer())
    throw ParseError("line " + std::to_string(line) + ": missing integer field \"" +
                     key + "\"");
  return j[key].get<int>();
}

std::vector<double> require_doubles(const json& j, const char* key, int line) {
  if (!j.contains(key) || !j[key].is_array())
    throw ParseError("line " + std::to_string(line) + ": missing array field \"" +
                     key + "\"");
  std::vector<double> out;
  out.reserve(j[key].size());
  for (const auto& e : j[key]) {
    if (!e.is_number())
      throw ParseError("line " + std::to_string(line) + ": non-numeric entry in \"" +
                       key + "\"");
    out.push_back(e.get<double>());
  }
  return out;
}

}  // namespace

void save_samples(const std::string& path, const std::vector<Sample>& samples) {
  std::string out;
  out.reserve(samples.size() * 64);
  for (const Sample& s : samples) {
    out += "{\"t\":" + std::to_string(s.q_type);
    out += ",\"cq\":" + std::to_string(s.c_q);
    out += ",\"cv\":" + std::to_string(s.c_v);
    out += ",\"a\":" + std::to_string(s.answer);
    out += ",\"q\":";
    append_double_array(out, s.q_feat);
    out += ",\"v\":";
    append_double_array(out, s.v_feat);
    out += "}\n";
  }
  write_file_atomic(path, out);
}

std::vector<Sample> load_samples(const std::string& path, const DatasetMeta& meta) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::vector<Sample> samples;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(path + ": line " + std::to_string(line_no) + ": " + e.what());
    }
    Sample s;
    s.q_type = require_int(j, "t", line_no);
    s.c_q = require_int(j, "cq", line_no);
    s.c_v = require_int(j, "cv", line_no);
    s.answer = require_int(j, "a", line_no);
    s.q_feat = require_doubles(j, "q", line_no);
    s.v_feat = require_doubles(j, "v", line_no);
    if (static_cast<int>(s.q_feat.size()) != meta.dims.d_q ||
        static_cast<int>(s.v_feat.size()) != meta.dims.d_v)
      throw DataError(path + ": line " + std::to_string(line_no) +
                      ": feature lengths (" + std::to_string(s.q_feat.size()) + "," +
                      std::to_string(s.v_feat.size()) + ") do not match meta dims (" +
                      std::to_string(meta.dims.d_q) + "," +
                      std::to_string(meta.dims.d_v) + ")");
    if (s.q_type < 0 || s.q_type >= meta.spec.num_types)
      throw DataError(path + ": line " + std::to_string(line_no) +
                      ": type out of range");
    if (s.answer != answer_rule(meta.spec, s.q_type, s.c_q, s.c_v))
      throw DataError(path + ": line " + std::to_string(line_no) +
                      ": answer does not match the latent rule");
    samples.push_back(std::move(s));
  }
  return samples;
}

void save_meta(const std::string& path, const DatasetMeta& meta) {
  json j;
  j["seed"] = meta.seed;
  j["dims"] = {{"d_q", meta.dims.d_q},
               {"d_v", meta.dims.d_v},
               {"num_concepts", meta.dims.num_concepts}};
  j["vocab"] = meta.vocab;
  j["bias_spec"] = {{"num_types", meta.spec.num_types},
                    {"answers_per_type", meta.spec.answers_per_type},
                    {"train_prior", meta.spec.train_prior},
                    {"test_prior", meta.spec.test_prior},
                    {"bias_strength", meta.spec.bias_strength},
                    {"noise_sigma", meta.spec.noise_sigma}};
  j["type_emb"] = meta.type_emb;
  j["concept_q_emb"] = meta.concept_q_emb;
  j["concept_v_emb"] = meta.concept_v_emb;
  j["n_train"] = meta.n_train;
  j["n_test"] = meta.n_test;
  write_file_atomic(path, j.dump(2) + "\n");
}

DatasetMeta load_meta(const std::string& path) {
  json j;
  try {
    j = json::parse(read_text_file(path));
  } catch (const json::parse_error& e) {
    throw ParseError(path + ": " + e.what());
  }
  DatasetMeta meta;
  try {
    meta.seed = j.at("seed").get<std::uint64_t>();
    meta.dims.d_q = j.at("dims").at("d_q").get<int>();
    meta.dims.d_v = j.at("dims").at("d_v").get<int>();
    meta.dims.num_concepts = j.at("dims").at("num_concepts").get<int>();
    meta.vocab = j.at("vocab").get<int>();
    const json& b = j.at("bias_spec");
    meta.spec.num_types = b.at("num_types").get<int>();
    meta.spec.answers_per_type = b.at("answers_per_type").get<std::vector<std::vector<int>>>();
    meta.spec.train_prior = b.at("train_prior").get<std::vector<std::vector<double>>>();
    meta.spec.test_prior = b.at("test_prior").get<std::vector<std::vector<double>>>();
    meta.spec.bias_strength = b.at("bias_strength").get<double>();
    meta.spec.noise_sigma = b.at("noise_sigma").get<double>();
    meta.type_emb = j.at("type_emb").get<std::vector<double>>();
    meta.concept_q_emb = j.at("concept_q_emb").get<std::vector<double>>();
    meta.concept_v_emb = j.at("concept_v_emb").get<std::vector<double>>();
    meta.n_train = j.at("n_train").get<int>();
    meta.n_test = j.at("n_test").get<int>();
  } catch (const json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
  meta.spec.validate(meta.vocab);
  return meta;
}

void save_dataset(const std::string& dir, const Dataset& dataset) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  save_meta((fs::path(dir) / "meta.json").string(), dataset.meta);
  save_samples((fs::path(dir) / "train.jsonl").string(), dataset.train);
  save_samples((fs::path(dir) / "test.jsonl").string(), dataset.test);
}

Dataset load_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  Dataset ds;
  ds.meta = load_meta((fs::path(dir) / "meta.json").string());
  ds.train = load_samples((fs::path(dir) / "train.jsonl").string(), ds.meta);
  ds.test = load_samples((fs::path(dir) / "test.jsonl").string(), ds.meta);
  return ds;
}

std::vector<double> answer_prior(const std::vector<Sample>& samples, int q_type,
                                 int vocab) {
  std::vector<double> dist(static_cast<std::size_t>(vocab), 0.0);
  std::int64_t count = 0;
  for (const Sample& s : samples) {
    if (s.q_type != q_type) continue;
    if (s.answer < 0 || s.answer >= vocab)
      throw IndexError("answer_prior: answer id out of range");
    dist[s.answer] += 1.0;
    ++count;
  }
  if (count == 0)
    throw ContractError("answer_prior: no samples of type " + std::to_string(q_type));
  for (double& v : dist) v /= static_cast<double>(count);
  return dist;
}

double tv_distance(const std::vector<double>& p, const std::vector<double>& q) {
  if (p.size() != q.size()) throw ShapeError("tv_distance: length mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) acc += std::fabs(p[i] - q[i]);
  return 0.5 * acc;
}

}  // namespace copnet
