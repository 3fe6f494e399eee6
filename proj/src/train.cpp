#include "copnet/train.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "copnet/checkpoint.hpp"
#include "copnet/common.hpp"
#include "copnet/io.hpp"

namespace copnet {

using nlohmann::json;
namespace fs = std::filesystem;

std::string model_kind_name(ModelKind kind) {
  switch (kind) {
    case ModelKind::kCop: return "cop";
    case ModelKind::kMonolith: return "monolith";
    case ModelKind::kBrokenCausal: return "broken";
  }
  throw ContractError("model_kind_name: invalid kind");
}

ModelKind model_kind_from_name(const std::string& name) {
  if (name == "cop") return ModelKind::kCop;
  if (name == "monolith") return ModelKind::kMonolith;
  if (name == "broken") return ModelKind::kBrokenCausal;
  throw ConfigError("unknown model kind \"" + name +
                    "\" (valid: cop, monolith, broken)");
}

std::vector<NamedParam> AnyModel::parameters() const {
  if (kind == ModelKind::kMonolith) return mono->parameters();
  return cop->parameters();
}

const CopConfig& AnyModel::config() const {
  if (kind == ModelKind::kMonolith) return mono->cfg;
  return cop->cfg;
}

AnyModel init_model(ModelKind kind, const CopConfig& cfg, std::uint64_t seed) {
  AnyModel m;
  m.kind = kind;
  if (kind == ModelKind::kMonolith) {
    m.mono = init_monolith_model(cfg, seed);
  } else {
    m.cop = init_cop_model(cfg, seed, kind == ModelKind::kBrokenCausal);
  }
  return m;
}

// --- Adam --------------------------------------------------------------------

AdamState::AdamState(const AdamConfig& cfg, const std::vector<NamedParam>& params)
    : cfg_(cfg) {
  m_.reserve(params.size());
  v_.reserve(params.size());
  for (const NamedParam& np : params) {
    m_.emplace_back(np.tensor.values().size(), 0.0);
    v_.emplace_back(np.tensor.values().size(), 0.0);
  }
}

void AdamState::step(std::vector<NamedParam>& params) {
  if (params.size() != m_.size())
    throw ContractError("adam: parameter list does not match optimizer state");
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& vals = params[i].tensor.mutable_values();
    auto& m = m_[i];
    auto& v = v_[i];
    const bool has_grad = params[i].tensor.has_grad();
    const std::vector<double>* g = has_grad ? &params[i].tensor.grad() : nullptr;
    for (std::size_t j = 0; j < vals.size(); ++j) {
      const double gj = g ? (*g)[j] : 0.0;
      if (!std::isfinite(gj))
        throw TrainError("non-finite gradient in tensor \"" + params[i].name +
                         "\" at step " + std::to_string(t_));
      m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * gj;
      v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * gj * gj;
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      vals[j] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }
}

std::vector<NamedParam> AdamState::state_tensors(
    const std::vector<NamedParam>& params) const {
  std::vector<NamedParam> out;
  out.reserve(2 * params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    out.push_back({"adam/m/" + params[i].name,
                   Tensor::from(params[i].tensor.shape(), m_[i])});
    out.push_back({"adam/v/" + params[i].name,
                   Tensor::from(params[i].tensor.shape(), v_[i])});
  }
  return out;
}

void AdamState::restore(const std::vector<NamedParam>& params,
                        const std::vector<NamedParam>& state,
                        std::int64_t step_count) {
  m_.assign(params.size(), {});
  v_.assign(params.size(), {});
  t_ = step_count;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const std::string mn = "adam/m/" + params[i].name;
    const std::string vn = "adam/v/" + params[i].name;
    bool found_m = false, found_v = false;
    for (const NamedParam& s : state) {
      if (s.name == mn) {
        m_[i] = s.tensor.values();
        found_m = true;
      } else if (s.name == vn) {
        v_[i] = s.tensor.values();
        found_v = true;
      }
    }
    if (!found_m || !found_v)
      throw FormatError("checkpoint lacks optimizer state for \"" +
                        params[i].name + "\"");
    if (m_[i].size() != params[i].tensor.values().size())
      throw FormatError("optimizer state shape mismatch for \"" +
                        params[i].name + "\"");
  }
}

// --- config ------------------------------------------------------------------

json TrainConfig::to_json() const {
  return json{
      {"model",
       {{"d_q", model.d_q},
        {"d_v", model.d_v},
        {"d_i", model.d_i},
        {"vocab", model.vocab},
        {"n1", model.n1},
        {"n2", model.n2},
        {"h1", model.h1},
        {"h2", model.h2},
        {"ref_h1", model.ref_h1},
        {"ref_h2", model.ref_h2},
        {"temperature", model.temperature},
        {"loss_kind", "cross_entropy"},
        {"stop_gradient_branches", model.stop_gradient_branches},
        {"k_select", model.k_select}}},
      {"kind", model_kind_name(kind)},
      {"epochs", epochs},
      {"batch", batch},
      {"seed", seed},
      {"adam",
       {{"lr", adam.lr}, {"beta1", adam.beta1}, {"beta2", adam.beta2}, {"eps", adam.eps}}},
      {"dataset_dir", dataset_dir},
      {"out_dir", out_dir},
      {"resume_from", resume_from}};
}

TrainConfig TrainConfig::from_json(const json& j) {
  TrainConfig c;
  const json m = j.value("model", json::object());
  c.model.d_q = m.value("d_q", c.model.d_q);
  c.model.d_v = m.value("d_v", c.model.d_v);
  c.model.d_i = m.value("d_i", c.model.d_i);
  c.model.vocab = m.value("vocab", c.model.vocab);
  c.model.n1 = m.value("n1", c.model.n1);
  c.model.n2 = m.value("n2", c.model.n2);
  c.model.h1 = m.value("h1", c.model.h1);
  c.model.h2 = m.value("h2", c.model.h2);
  c.model.ref_h1 = m.value("ref_h1", c.model.ref_h1);
  c.model.ref_h2 = m.value("ref_h2", c.model.ref_h2);
  c.model.temperature = m.value("temperature", c.model.temperature);
  c.model.stop_gradient_branches =
      m.value("stop_gradient_branches", c.model.stop_gradient_branches);
  c.model.k_select = m.value("k_select", c.model.k_select);
  if (m.value("loss_kind", std::string("cross_entropy")) != "cross_entropy")
    throw ConfigError("unsupported loss_kind (only cross_entropy)");
  c.kind = model_kind_from_name(j.value("kind", std::string("cop")));
  c.epochs = j.value("epochs", c.epochs);
  c.batch = j.value("batch", c.batch);
  c.seed = j.value("seed", c.seed);
  const json a = j.value("adam", json::object());
  c.adam.lr = a.value("lr", c.adam.lr);
  c.adam.beta1 = a.value("beta1", c.adam.beta1);
  c.adam.beta2 = a.value("beta2", c.adam.beta2);
  c.adam.eps = a.value("eps", c.adam.eps);
  c.dataset_dir = j.value("dataset_dir", c.dataset_dir);
  c.out_dir = j.value("out_dir", c.out_dir);
  c.resume_from = j.value("resume_from", c.resume_from);
  return c;
}

void TrainConfig::validate() const {
  model.validate();
  if (epochs < 1) throw ConfigError("epochs must be at least 1");
  if (batch < 1) throw ConfigError("batch must be at least 1");
  if (adam.lr <= 0.0) throw ConfigError("learning rate must be positive");
}

// --- forward dispatch ----------------------------------------------------------

namespace {

ForwardTrace model_trace(const AnyModel& model, const Tensor& q, const Tensor& v,
                         RngState* rng, RoutingMode mode) {
  if (model.kind == ModelKind::kBrokenCausal)
    return broken_causal_forward(*model.cop, q, v, rng, mode);
  return cop_forward(*model.cop, q, v, rng, mode);
}

Tensor rows_tensor(const std::vector<Sample>& samples, const std::vector<int>& order,
                   int from, int to, bool question) {
  const int dim = static_cast<int>(
      question ? samples[order[from]].q_feat.size() : samples[order[from]].v_feat.size());
  std::vector<double> flat(static_cast<std::size_t>(to - from) * dim);
  for (int i = from; i < to; ++i) {
    const Sample& s = samples[order[i]];
    const auto& feat = question ? s.q_feat : s.v_feat;
    std::copy(feat.begin(), feat.end(), flat.begin() + static_cast<std::size_t>(i - from) * dim);
  }
  return Tensor::from({to - from, dim}, std::move(flat));
}

struct SplitAccuracy {
  double overall = 0.0;
  std::vector<double> per_type;
  std::vector<std::int64_t> per_type_counts;
};

SplitAccuracy validation_accuracy(const AnyModel& model,
                                  const std::vector<Sample>& samples, int num_types) {
  SplitAccuracy acc;
  acc.per_type.assign(num_types, 0.0);
  acc.per_type_counts.assign(num_types, 0);
  std::vector<std::int64_t> correct(num_types, 0);
  const int n = static_cast<int>(samples.size());
  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;
  const int chunk = 1024;
  std::int64_t total_correct = 0;
  for (int from = 0; from < n; from += chunk) {
    const int to = std::min(n, from + chunk);
    Tensor qb = rows_tensor(samples, order, from, to, true);
    Tensor vb = rows_tensor(samples, order, from, to, false);
    const std::vector<int> pred = model_predict(model, qb, vb);
    for (int i = from; i < to; ++i) {
      const Sample& s = samples[i];
      acc.per_type_counts[s.q_type]++;
      if (pred[i - from] == s.answer) {
        correct[s.q_type]++;
        ++total_correct;
      }
    }
  }
  for (int t = 0; t < num_types; ++t)
    acc.per_type[t] = acc.per_type_counts[t] > 0
                          ? static_cast<double>(correct[t]) / acc.per_type_counts[t]
                          : 0.0;
  acc.overall = n > 0 ? static_cast<double>(total_correct) / n : 0.0;
  return acc;
}

std::string log_csv(const std::vector<EpochRecord>& log, int num_types) {
  std::string out = "epoch,train_loss,val_acc_overall";
  for (int t = 0; t < num_types; ++t) out += ",val_acc_type" + std::to_string(t);
  out += "\n";
  for (const EpochRecord& r : log) {
    out += std::to_string(r.epoch) + "," + format_double(r.train_loss) + "," +
           format_double(r.val_acc);
    for (double a : r.per_type_acc) out += "," + format_double(a);
    out += "\n";
  }
  return out;
}

Checkpoint make_checkpoint(const TrainConfig& config, const AnyModel& model,
                           const AdamState* adam, int completed_epochs) {
  Checkpoint ckpt;
  ckpt.model_kind = model_kind_name(model.kind);
  ckpt.config = config.to_json();
  ckpt.seed = config.seed;
  ckpt.completed_epochs = completed_epochs;
  ckpt.tensors = model.parameters();
  if (adam) {
    ckpt.adam_step = adam->step_count();
    const auto state = adam->state_tensors(model.parameters());
    ckpt.tensors.insert(ckpt.tensors.end(), state.begin(), state.end());
  }
  return ckpt;
}

}  // namespace

Tensor model_train_loss(const AnyModel& model, const Tensor& q_batch,
                        const Tensor& v_batch, const std::vector<int>& targets,
                        RngState* rng) {
  if (model.kind == ModelKind::kMonolith)
    return ce_mean(monolithic_forward(*model.mono, q_batch, v_batch), targets);
  ForwardTrace trace = model_trace(model, q_batch, v_batch, rng, RoutingMode::kTrain);
  return cop_loss_batch(trace, targets).total;
}

std::vector<int> model_predict(const AnyModel& model, const Tensor& q_batch,
                               const Tensor& v_batch) {
  if (model.kind == ModelKind::kMonolith)
    return predict_rows(monolithic_forward(*model.mono, q_batch, v_batch));
  ForwardTrace trace =
      model_trace(model, q_batch, v_batch, nullptr, RoutingMode::kInference);
  return predict_rows(finalize(trace));
}

AnyModel model_from_checkpoint(const Checkpoint& ckpt) {
  const TrainConfig cfg = TrainConfig::from_json(ckpt.config);
  AnyModel model = init_model(model_kind_from_name(ckpt.model_kind), cfg.model, ckpt.seed);
  auto params = model.parameters();
  for (auto& np : params) {
    const NamedParam* found = nullptr;
    for (const NamedParam& t : ckpt.tensors)
      if (t.name == np.name) {
        found = &t;
        break;
      }
    if (!found) throw FormatError("checkpoint lacks tensor \"" + np.name + "\"");
    if (found->tensor.shape() != np.tensor.shape())
      throw FormatError("checkpoint tensor \"" + np.name + "\" has shape " +
                        shape_str(found->tensor.shape()) + ", expected " +
                        shape_str(np.tensor.shape()));
    np.tensor.mutable_values() = found->tensor.values();
  }
  return model;
}

TrainResult train(const TrainConfig& config) {
  config.validate();
  return train(config, load_dataset(config.dataset_dir));
}

TrainResult train(const TrainConfig& config, const Dataset& dataset) {
  config.validate();
  const DatasetMeta& meta = dataset.meta;
  if (meta.dims.d_q != config.model.d_q || meta.dims.d_v != config.model.d_v)
    throw ConfigError("dataset dims (" + std::to_string(meta.dims.d_q) + "," +
                      std::to_string(meta.dims.d_v) + ") do not match model dims (" +
                      std::to_string(config.model.d_q) + "," +
                      std::to_string(config.model.d_v) + ")");
  if (meta.vocab != config.model.vocab)
    throw ConfigError("dataset vocab " + std::to_string(meta.vocab) +
                      " does not match model vocab " +
                      std::to_string(config.model.vocab));

  const std::vector<Sample>& train_set = dataset.train;
  const std::vector<Sample>& val_set = dataset.test;
  const int n = static_cast<int>(train_set.size());
  const int num_types = meta.spec.num_types;

  TrainResult result;
  int start_epoch = 0;
  AdamState adam;
  if (!config.resume_from.empty()) {
    const Checkpoint ckpt = load_checkpoint(config.resume_from);
    const TrainConfig saved = TrainConfig::from_json(ckpt.config);
    if (config_fingerprint(saved.to_json()["model"]) !=
            config_fingerprint(config.to_json()["model"]) ||
        saved.kind != config.kind || saved.seed != config.seed ||
        saved.batch != config.batch)
      throw ConfigError("resume checkpoint was trained under a different config");
    result.model = model_from_checkpoint(ckpt);
    auto params = result.model.parameters();
    adam = AdamState(config.adam, params);
    adam.restore(params, ckpt.tensors, ckpt.adam_step);
    start_epoch = ckpt.completed_epochs;
  } else {
    result.model = init_model(config.kind, config.model, config.seed);
    adam = AdamState(config.adam, result.model.parameters());
  }

  auto params = result.model.parameters();
  RngState root(config.seed);
  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;

  auto epoch_loss_no_update = [&](RngState gate) {
    double loss_sum = 0.0;
    for (int from = 0; from < n; from += config.batch) {
      const int to = std::min(n, from + config.batch);
      Tensor qb = rows_tensor(train_set, order, from, to, true);
      Tensor vb = rows_tensor(train_set, order, from, to, false);
      std::vector<int> targets(to - from);
      for (int i = from; i < to; ++i) targets[i - from] = train_set[order[i]].answer;
      loss_sum +=
          model_train_loss(result.model, qb, vb, targets, &gate).value() * (to - from);
    }
    return loss_sum / n;
  };

  auto record_epoch = [&](int epoch, double train_loss) {
    const SplitAccuracy val = validation_accuracy(result.model, val_set, num_types);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = train_loss;
    rec.val_acc = val.overall;
    rec.per_type_acc = val.per_type;
    result.log.push_back(rec);
    return val.overall;
  };

  std::vector<std::vector<double>> best_values;
  auto snapshot_if_best = [&](double val_acc, int epoch) {
    if (best_values.empty() || val_acc > result.best_val_acc) {
      result.best_val_acc = val_acc;
      result.best_epoch = epoch;
      best_values.clear();
      for (const auto& np : params) best_values.push_back(np.tensor.values());
    }
  };

  if (start_epoch == 0) {
    // Pre-training state: loss with the epoch-0 noise stream, no updates.
    const double loss0 = epoch_loss_no_update(root.split("gumbel", 0));
    snapshot_if_best(record_epoch(0, loss0), 0);
  }

  for (int epoch = start_epoch + 1; epoch <= config.epochs; ++epoch) {
    RngState shuffle = root.split("shuffle", static_cast<std::uint64_t>(epoch));
    for (int i = n - 1; i > 0; --i) {
      const int j = static_cast<int>(shuffle.uniform_int(static_cast<std::uint64_t>(i + 1)));
      std::swap(order[i], order[j]);
    }
    RngState gate = root.split("gumbel", static_cast<std::uint64_t>(epoch));
    double loss_sum = 0.0;
    for (int from = 0; from < n; from += config.batch) {
      const int to = std::min(n, from + config.batch);
      Tensor qb = rows_tensor(train_set, order, from, to, true);
      Tensor vb = rows_tensor(train_set, order, from, to, false);
      std::vector<int> targets(to - from);
      for (int i = from; i < to; ++i) targets[i - from] = train_set[order[i]].answer;

      for (auto& np : params) np.tensor.zero_grad();
      Tensor loss = model_train_loss(result.model, qb, vb, targets, &gate);
      backward(loss);
      adam.step(params);
      loss_sum += loss.value() * (to - from);
    }
    snapshot_if_best(record_epoch(epoch, loss_sum / n), epoch);
  }

  if (best_values.empty()) snapshot_if_best(record_epoch(config.epochs, 0.0), config.epochs);

  if (!config.out_dir.empty()) {
    fs::create_directories(config.out_dir);
    result.checkpoint_path = (fs::path(config.out_dir) / "checkpoint.copv").string();
    save_checkpoint(result.checkpoint_path,
                    make_checkpoint(config, result.model, &adam, config.epochs));

    // Best-validation snapshot, saved without optimizer state.
    AnyModel best = init_model(config.kind, config.model, config.seed);
    auto best_params = best.parameters();
    for (std::size_t i = 0; i < best_params.size(); ++i)
      best_params[i].tensor.mutable_values() = best_values[i];
    result.best_checkpoint_path =
        (fs::path(config.out_dir) / "checkpoint_best.copv").string();
    save_checkpoint(result.best_checkpoint_path,
                    make_checkpoint(config, best, nullptr, result.best_epoch));

    result.log_path = (fs::path(config.out_dir) / "train_log.csv").string();
    write_file_atomic(result.log_path, log_csv(result.log, num_types));
  }
  return result;
}

}  // namespace copnet
