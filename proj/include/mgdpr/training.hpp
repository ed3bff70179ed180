#pragma once

// Objective, optimizer, training loop and evaluation.

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "mgdpr/autodiff.hpp"
#include "mgdpr/error.hpp"
#include "mgdpr/graph_generation.hpp"
#include "mgdpr/market_data.hpp"
#include "mgdpr/metrics.hpp"
#include "mgdpr/model.hpp"

namespace mgdpr {

struct TrainConfig {
  double learning_rate = 2.5e-4;
  std::size_t epochs = 900;
  std::size_t batch_size = 0;  // 0: every training day in one step
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t seed = 0;
};

// Everything one forward pass needs for one trading day.
struct Example {
  std::size_t end_day = 0;
  Tensor features;                 // relations x stocks x window
  std::vector<Tensor> adjacency;   // one N x N matrix per relation
  std::vector<int> labels;         // per stock
};

inline Example make_example(const WindowSample& sample, const MultiRelAdjacency& graphs, bool normalized) {
  return {sample.end_day, sample.features, graphs.select(normalized), sample.labels};
}

// Graphs built on the fly from each sample's raw window.
inline std::vector<Example> make_examples(const std::vector<WindowSample>& samples, bool normalized) {
  std::vector<Example> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(make_example(s, build_sample_graphs(s.raw, s.end_day), normalized));
  return out;
}

// ---- objective --------------------------------------------------------------

struct Objective {
  ad::Var loss;
  double cross_entropy = 0.0;
  double constraint = 0.0;
};

// sum over layers and relations of (sum_k gamma - 1). Identically zero under
// the softmax parametrization up to rounding.
inline ad::Var constraint_term(ad::Tape& tape, const std::vector<ad::Var>& gammas) {
  if (gammas.empty()) return ad::Var::constant(Tensor::scalar(0.0));
  ad::Var total;
  double rows = 0.0;
  for (const auto& g : gammas) {
    auto s = tape.sum(g);
    total = total.valid() ? tape.add(total, s) : s;
    rows += static_cast<double>(g.shape()[0]);
  }
  return tape.add(total, ad::Var::constant(Tensor::scalar(-rows)));
}

// Mean cross-entropy of one day's N x 2 logits, scaled by `weight`.
inline ad::Var cross_entropy(ad::Tape& tape, const ad::Var& logits, const std::vector<int>& labels, double weight = 1.0) {
  const std::size_t N = logits.shape()[0];
  if (logits.shape() != Shape{N, 2} || labels.size() != N) {
    throw DimensionError("cross_entropy: logits " + shape_str(logits.shape()) + " for " + std::to_string(labels.size()) +
                         " labels");
  }
  Tensor onehot(Shape{N, 2}, 0.0);
  for (std::size_t i = 0; i < N; ++i) {
    if (labels[i] != 0 && labels[i] != 1) throw DataError("label " + std::to_string(labels[i]) + " is not 0 or 1");
    onehot.at(i, static_cast<std::size_t>(labels[i])) = 1.0;
  }
  auto picked = tape.sum(tape.hadamard(tape.log_softmax(logits, 1), ad::Var::constant(std::move(onehot))));
  return tape.scale(picked, -weight / static_cast<double>(N));
}

// (1/B) sum_t CE(logits_t, labels_t) + constraint term.
inline Objective objective(ad::Tape& tape, const std::vector<ad::Var>& logits, const std::vector<std::vector<int>>& labels,
                           const std::vector<ad::Var>& gammas) {
  if (logits.empty() || logits.size() != labels.size()) {
    throw UsageError("objective: " + std::to_string(logits.size()) + " logit sets for " + std::to_string(labels.size()) +
                     " label sets");
  }
  const double weight = 1.0 / static_cast<double>(logits.size());
  ad::Var ce;
  for (std::size_t t = 0; t < logits.size(); ++t) {
    auto term = cross_entropy(tape, logits[t], labels[t], weight);
    ce = ce.valid() ? tape.add(ce, term) : term;
  }
  auto penalty = constraint_term(tape, gammas);
  Objective out;
  out.cross_entropy = ce.value()[0];
  out.constraint = penalty.value()[0];
  out.loss = tape.add(ce, penalty);
  return out;
}

// ---- optimizer --------------------------------------------------------------

class Adam {
 public:
  Adam(std::vector<ad::Var> params, const TrainConfig& cfg)
      : params_(std::move(params)), lr_(cfg.learning_rate), beta1_(cfg.beta1), beta2_(cfg.beta2), eps_(cfg.epsilon) {
    for (const auto& p : params_) {
      m_.emplace_back(p.shape(), 0.0);
      v_.emplace_back(p.shape(), 0.0);
    }
  }

  void step() {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      if (!params_[i].has_grad()) continue;
      const Tensor g = params_[i].grad();
      auto w = params_[i].mutable_values();
      auto m = m_[i].values();
      auto v = v_[i].values();
      for (std::size_t j = 0; j < w.size(); ++j) {
        m[j] = beta1_ * m[j] + (1.0 - beta1_) * g[j];
        v[j] = beta2_ * v[j] + (1.0 - beta2_) * g[j] * g[j];
        w[j] -= lr_ * (m[j] / c1) / (std::sqrt(v[j] / c2) + eps_);
      }
    }
  }

  std::size_t steps() const { return t_; }

 private:
  std::vector<ad::Var> params_;
  std::vector<Tensor> m_, v_;
  double lr_, beta1_, beta2_, eps_;
  std::size_t t_ = 0;
};

// ---- evaluation -------------------------------------------------------------

inline std::vector<int> predict(const Tensor& logits) {
  std::vector<int> out(logits.dim(0));
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = logits.at(i, 1) > logits.at(i, 0) ? 1 : 0;
  return out;
}

struct MetricsReport {
  double accuracy = 0.0;
  double mcc = 0.0;
  double f1 = 0.0;
  Confusion confusion;
  std::size_t days = 0;
  std::size_t stocks = 0;
};

inline MetricsReport report_from(const Confusion& c, std::size_t days, std::size_t stocks) {
  return {accuracy(c), mcc(c), f1(c), c, days, stocks};
}

inline MetricsReport evaluate(const MgdprModel& model, const std::vector<Example>& examples) {
  if (examples.empty()) throw UsageError("evaluate: no samples to evaluate");
  Confusion c;
  for (const auto& ex : examples) {
    ad::Tape tape(false);
    c += confusion(predict(model.forward(tape, ex.features, ex.adjacency).value()), ex.labels);
  }
  return report_from(c, examples.size(), model.config().num_stocks);
}

// ---- training loop ----------------------------------------------------------

struct EpochRecord {
  std::size_t epoch = 0;
  double loss = 0.0;        // objective before this epoch's update(s)
  double train_accuracy = 0.0;
  double val_accuracy = std::numeric_limits<double>::quiet_NaN();
  double constraint = 0.0;
};

struct TrainResult {
  std::vector<Tensor> best_params;
  std::size_t best_epoch = 0;
  double best_val_accuracy = std::numeric_limits<double>::quiet_NaN();
  std::vector<EpochRecord> trace;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

// Adam over `epochs` passes. The parameters with the best validation accuracy
// (initial parameters included, first maximum wins) are kept and loaded into
// the model on return; without validation data the final parameters are kept.
inline TrainResult train(MgdprModel& model, const std::vector<Example>& train_set, const std::vector<Example>& val_set,
                         const TrainConfig& cfg, const EpochCallback& on_epoch = {}) {
  if (train_set.empty() && cfg.epochs > 0) throw UsageError("train: no training samples");
  auto params = model.params().all();
  Adam opt(params, cfg);
  TrainResult result;
  result.best_params = model.params().snapshot();
  if (!val_set.empty()) result.best_val_accuracy = evaluate(model, val_set).accuracy;

  const std::size_t batch = cfg.batch_size == 0 ? train_set.size() : cfg.batch_size;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    EpochRecord rec;
    rec.epoch = epoch;
    Confusion seen;
    try {
      for (std::size_t start = 0; start < train_set.size(); start += batch) {
        const std::size_t end = std::min(train_set.size(), start + batch);
        const double weight = 1.0 / static_cast<double>(end - start);
        model.params().zero_grad();
        {
          // constraint term, once per step
          ad::Tape tape;
          auto penalty = constraint_term(tape, model.gammas(tape));
          rec.constraint = penalty.value()[0];
          rec.loss += penalty.value()[0];
          tape.backward(penalty);
        }
        for (std::size_t i = start; i < end; ++i) {
          ad::Tape tape;
          auto logits = model.forward(tape, train_set[i].features, train_set[i].adjacency);
          seen += confusion(predict(logits.value()), train_set[i].labels);
          auto loss = cross_entropy(tape, logits, train_set[i].labels, weight);
          rec.loss += loss.value()[0] * static_cast<double>(end - start) / static_cast<double>(train_set.size());
          tape.backward(loss);
        }
        opt.step();
      }
    } catch (const NumericError& e) {
      throw DivergenceError("training diverged at epoch " + std::to_string(epoch) + " with learning rate " +
                            io::format_short(cfg.learning_rate) + ": " + e.what());
    }
    if (!std::isfinite(rec.loss)) {
      throw DivergenceError("training diverged at epoch " + std::to_string(epoch) + " with learning rate " +
                            io::format_short(cfg.learning_rate) + ": loss is not finite");
    }
    rec.train_accuracy = accuracy(seen);
    if (!val_set.empty()) {
      try {
        rec.val_accuracy = evaluate(model, val_set).accuracy;
      } catch (const NumericError& e) {
        throw DivergenceError("validation diverged at epoch " + std::to_string(epoch) + " with learning rate " +
                              io::format_short(cfg.learning_rate) + ": " + e.what());
      }
      if (rec.val_accuracy > result.best_val_accuracy) {
        result.best_val_accuracy = rec.val_accuracy;
        result.best_epoch = epoch;
        result.best_params = model.params().snapshot();
      }
    }
    result.trace.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  if (val_set.empty()) {
    result.best_params = model.params().snapshot();
    result.best_epoch = cfg.epochs;
  }
  model.params().restore(result.best_params);
  return result;
}

}  // namespace mgdpr
