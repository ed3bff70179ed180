#pragma once

// Multi-relational graph diffusion with parallel retention.
//
// Hidden states are kept as (N * tau) x d matrices, stock-major: row
// n * tau + o holds stock n at window position o. Diffusion mixes the stock
// axis independently for every window position; retention mixes the window
// axis independently for every stock.
//
// Per layer l:
//   S_r   = (sum_k gamma_{r,k} T_{r,k}) .* A_r
//   H_l   = act(conv1x1([S_r H_{l-1} W_r]_r))
//   eta   = groupnorm(((Q K^T / sqrt(d)) .* D) V),  Q,K,V = H_l W_{Q,K,V}
//   H'_l  = act([eta || H'_{l-1} W1 + b1] W2 + b2)
// gamma is a softmax over k and every T_{r,k} a column softmax, so the
// simplex and column-stochastic constraints hold by construction.

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "mgdpr/autodiff.hpp"
#include "mgdpr/error.hpp"
#include "mgdpr/graph_generation.hpp"
#include "mgdpr/market_data.hpp"
#include "mgdpr/tensor.hpp"

namespace mgdpr {

struct ModelConfig {
  std::size_t num_stocks = 0;
  std::size_t window = 21;
  std::size_t num_relations = kNumIndicators;
  std::size_t num_layers = 8;
  std::size_t expansion_steps = 7;
  std::size_t embed_dim = 256;
  double decay = 1.27;
  std::size_t num_groups = 1;
  double activation_slope = 0.01;
  bool normalized_adjacency = true;

  void validate() const {
    auto positive = [](std::size_t v, const char* name) {
      if (v == 0) throw ConfigError(std::string("model.") + name + " must be positive");
    };
    positive(num_stocks, "num_stocks");
    positive(window, "window");
    positive(num_relations, "num_relations");
    positive(expansion_steps, "expansion_steps");
    positive(embed_dim, "embed_dim");
    positive(num_groups, "num_groups");
    if (embed_dim % num_groups != 0) {
      throw ConfigError("model.embed_dim (" + std::to_string(embed_dim) + ") is not divisible by model.num_groups (" +
                        std::to_string(num_groups) + ")");
    }
    if (!(decay > 0.0)) throw ConfigError("model.decay must be positive");
  }
};

struct DiffusionLayerParams {
  ad::Var raw_gamma;                  // R x K
  ad::Var raw_transition;             // R x K x N x N
  std::vector<ad::Var> relation_maps; // R maps, each d x d
  ad::Var conv_weight;                // R
  ad::Var conv_bias;                  // 1
};

struct RetentionParams {
  ad::Var w_q, w_k, w_v;  // d x d
  ad::Var w1, b1;         // d x d, d
  ad::Var w2, b2;         // 2d x d, d
};

struct ModelParams {
  ad::Var embed_w, embed_b;  // R x d, d
  std::vector<DiffusionLayerParams> diffusion;
  std::vector<RetentionParams> retention;
  ad::Var readout_w1, readout_b1;  // d x d, d
  ad::Var readout_w2, readout_b2;  // d x 2, 2

  // Every learnable tensor with a stable name, in a fixed order.
  std::vector<std::pair<std::string, ad::Var>> named() const {
    std::vector<std::pair<std::string, ad::Var>> out;
    out.emplace_back("embed.weight", embed_w);
    out.emplace_back("embed.bias", embed_b);
    for (std::size_t l = 0; l < diffusion.size(); ++l) {
      const std::string p = "layers." + std::to_string(l) + ".";
      const auto& d = diffusion[l];
      out.emplace_back(p + "diffusion.raw_gamma", d.raw_gamma);
      out.emplace_back(p + "diffusion.raw_transition", d.raw_transition);
      for (std::size_t r = 0; r < d.relation_maps.size(); ++r) {
        out.emplace_back(p + "diffusion.relation_map." + std::to_string(r), d.relation_maps[r]);
      }
      out.emplace_back(p + "diffusion.conv_weight", d.conv_weight);
      out.emplace_back(p + "diffusion.conv_bias", d.conv_bias);
      const auto& t = retention[l];
      out.emplace_back(p + "retention.w_q", t.w_q);
      out.emplace_back(p + "retention.w_k", t.w_k);
      out.emplace_back(p + "retention.w_v", t.w_v);
      out.emplace_back(p + "update.w1", t.w1);
      out.emplace_back(p + "update.b1", t.b1);
      out.emplace_back(p + "update.w2", t.w2);
      out.emplace_back(p + "update.b2", t.b2);
    }
    out.emplace_back("readout.w1", readout_w1);
    out.emplace_back("readout.b1", readout_b1);
    out.emplace_back("readout.w2", readout_w2);
    out.emplace_back("readout.b2", readout_b2);
    return out;
  }

  std::vector<ad::Var> all() const {
    std::vector<ad::Var> out;
    for (auto& [name, v] : named()) out.push_back(v);
    return out;
  }

  // Deep copy of the current values.
  std::vector<Tensor> snapshot() const {
    std::vector<Tensor> out;
    for (auto& [name, v] : named()) out.push_back(v.value());
    return out;
  }

  void restore(const std::vector<Tensor>& values) {
    auto vars = all();
    if (values.size() != vars.size()) throw UsageError("restore: parameter count mismatch");
    for (std::size_t i = 0; i < vars.size(); ++i) vars[i].assign(values[i]);
  }

  void zero_grad() {
    for (auto& v : all()) v.zero_grad();
  }
};

// Glorot-uniform weights, zero biases, zero raw mixing parameters (uniform
// gamma and uniform transitions) and an averaging channel mix.
inline ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  auto glorot = [&rng](std::size_t fan_in, std::size_t fan_out) {
    const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> u(-a, a);
    Tensor t(Shape{fan_in, fan_out}, 0.0);
    for (double& v : t.values()) v = u(rng);
    return ad::Var::parameter(std::move(t));
  };
  auto zeros = [](Shape s) { return ad::Var::parameter(Tensor(std::move(s), 0.0)); };
  const std::size_t R = cfg.num_relations, K = cfg.expansion_steps, N = cfg.num_stocks, d = cfg.embed_dim;

  ModelParams p;
  p.embed_w = glorot(R, d);
  p.embed_b = zeros({d});
  for (std::size_t l = 0; l < cfg.num_layers; ++l) {
    DiffusionLayerParams dl;
    dl.raw_gamma = zeros({R, K});
    dl.raw_transition = zeros({R, K, N, N});
    for (std::size_t r = 0; r < R; ++r) dl.relation_maps.push_back(glorot(d, d));
    dl.conv_weight = ad::Var::parameter(Tensor(Shape{R}, 1.0 / static_cast<double>(R)));
    dl.conv_bias = zeros({1});
    p.diffusion.push_back(std::move(dl));

    RetentionParams rp;
    rp.w_q = glorot(d, d);
    rp.w_k = glorot(d, d);
    rp.w_v = glorot(d, d);
    rp.w1 = glorot(d, d);
    rp.b1 = zeros({d});
    rp.w2 = glorot(2 * d, d);
    rp.b2 = zeros({d});
    p.retention.push_back(std::move(rp));
  }
  p.readout_w1 = glorot(d, d);
  p.readout_b1 = zeros({d});
  p.readout_w2 = glorot(d, 2);
  p.readout_b2 = zeros({2});
  return p;
}

// ---- building blocks ------------------------------------------------------

// Softmax over the expansion axis: each row of the (R x K) result sums to 1.
inline ad::Var materialize_gamma(ad::Tape& tape, const ad::Var& raw_gamma) { return tape.softmax(raw_gamma, 1); }

// Column softmax of every (R, k) slice of an R x K x N x N tensor.
inline ad::Var materialize_transition(ad::Tape& tape, const ad::Var& raw_transition) {
  return tape.softmax(raw_transition, 2);
}

// (sum_k gamma[k] T[k]) .* A for one relation; gamma has K entries, T is K x N x N.
inline ad::Var diffusion_matrix(ad::Tape& tape, const ad::Var& gamma, const ad::Var& transitions,
                                const ad::Var& adjacency) {
  const Shape& ts = transitions.shape();
  if (ts.size() != 3 || gamma.value().size() != ts[0] || adjacency.shape() != Shape{ts[1], ts[2]}) {
    throw DimensionError("diffusion_matrix: gamma " + shape_str(gamma.shape()) + ", transitions " + shape_str(ts) +
                         " and adjacency " + shape_str(adjacency.shape()) + " do not agree");
  }
  const std::size_t K = ts[0], N = ts[1];
  auto mix = tape.matmul(tape.reshape(gamma, {1, K}), tape.reshape(transitions, {K, N * N}));
  return tape.hadamard(tape.reshape(mix, {N, N}), adjacency);
}

// D[i][j] = decay^(i-j) for i >= j, 0 above the diagonal.
inline Tensor decay_mask(std::size_t window, double decay) {
  if (!(decay > 0.0)) throw ConfigError("decay coefficient must be positive, got " + io::format_double(decay));
  Tensor d(Shape{window, window}, 0.0);
  for (std::size_t i = 0; i < window; ++i) {
    for (std::size_t j = 0; j <= i; ++j) d.at(i, j) = std::pow(decay, static_cast<double>(i - j));
  }
  return d;
}

// The mask repeated once per stock, for the batched score product.
inline Tensor tiled_decay_mask(std::size_t stocks, std::size_t window, double decay) {
  const Tensor d = decay_mask(window, decay);
  Tensor out(Shape{stocks, window, window}, 0.0);
  for (std::size_t n = 0; n < stocks; ++n) {
    std::copy(d.values().begin(), d.values().end(), out.values().begin() + static_cast<std::ptrdiff_t>(n * window * window));
  }
  return out;
}

struct LayerShape {
  std::size_t stocks, window, dim;
};

// One diffusion step. `hidden` is (N*tau) x d_in, `diffusion` holds one N x N
// matrix per relation; returns (N*tau) x d_out.
inline ad::Var diffuse_layer(ad::Tape& tape, const ad::Var& hidden, const std::vector<ad::Var>& diffusion,
                             const DiffusionLayerParams& params, const LayerShape& shape, double slope) {
  for (const auto& s : diffusion) {
    if (!s.valid()) throw UsageError("diffuse_layer: diffusion matrices have not been materialized");
  }
  if (diffusion.size() != params.relation_maps.size()) {
    throw DimensionError("diffuse_layer: " + std::to_string(diffusion.size()) + " diffusion matrices for " +
                         std::to_string(params.relation_maps.size()) + " relations");
  }
  if (hidden.shape() != Shape{shape.stocks * shape.window, shape.dim}) {
    throw DimensionError("diffuse_layer: hidden state " + shape_str(hidden.shape()) + " does not match (" +
                         std::to_string(shape.stocks) + "*" + std::to_string(shape.window) + ")x" +
                         std::to_string(shape.dim));
  }
  const auto by_stock = tape.reshape(hidden, {shape.stocks, shape.window * shape.dim});
  std::vector<ad::Var> channels;
  for (std::size_t r = 0; r < diffusion.size(); ++r) {
    auto mixed = tape.reshape(tape.matmul(diffusion[r], by_stock), {shape.stocks * shape.window, shape.dim});
    channels.push_back(tape.matmul(mixed, params.relation_maps[r]));
  }
  return tape.leaky_relu(tape.channel_mix(channels, params.conv_weight, params.conv_bias), slope);
}

// Parallel retention applied to every stock's window independently.
// `z` is (N*tau) x d and `mask` the tiled N x tau x tau decay mask.
inline ad::Var parallel_retention(ad::Tape& tape, const ad::Var& z, const RetentionParams& params, const ad::Var& mask,
                                  std::size_t num_groups) {
  const std::size_t stocks = mask.shape()[0], window = mask.shape()[1];
  const std::size_t d = z.shape()[1];
  if (z.shape()[0] != stocks * window) {
    throw DimensionError("parallel_retention: input " + shape_str(z.shape()) + " does not match mask " +
                         shape_str(mask.shape()));
  }
  const Shape per_stock{stocks, window, d};
  auto q = tape.reshape(tape.matmul(z, params.w_q), per_stock);
  auto k = tape.reshape(tape.matmul(z, params.w_k), per_stock);
  auto v = tape.reshape(tape.matmul(z, params.w_v), per_stock);
  auto scores = tape.scale(tape.bmm(q, tape.transpose(k)), 1.0 / std::sqrt(static_cast<double>(d)));
  auto retained = tape.bmm(tape.hadamard(scores, mask), v);
  return tape.group_normalize(tape.reshape(retained, {stocks * window, d}), num_groups);
}

inline ad::Var layer_update(ad::Tape& tape, const ad::Var& diffused, const ad::Var& previous,
                            const RetentionParams& params, const ad::Var& mask, std::size_t num_groups, double slope) {
  if (diffused.shape() != previous.shape()) {
    throw DimensionError("layer_update: shapes " + shape_str(diffused.shape()) + " and " + shape_str(previous.shape()) +
                         " differ");
  }
  auto eta = parallel_retention(tape, diffused, params, mask, num_groups);
  auto carried = tape.add_rowwise(tape.matmul(previous, params.w1), params.b1);
  auto joined = tape.concat(eta, carried, 1);
  return tape.leaky_relu(tape.add_rowwise(tape.matmul(joined, params.w2), params.b2), slope);
}

// Stock-major (N*tau) x R matrix of one window's features (R x N x tau).
inline Tensor stock_major_features(const Tensor& features) {
  if (features.rank() != 3) throw DimensionError("features must be relations x stocks x window");
  const std::size_t R = features.dim(0), N = features.dim(1), tau = features.dim(2);
  Tensor x(Shape{N * tau, R}, 0.0);
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t o = 0; o < tau; ++o) x.at(n * tau + o, r) = features.at(r, n, o);
  return x;
}

// Per-position linear embedding of the R indicator values; H'_0 = H_0.
inline ad::Var init_state(ad::Tape& tape, const Tensor& features, const ModelParams& params) {
  auto x = ad::Var::constant(stock_major_features(features));
  return tape.add_rowwise(tape.matmul(x, params.embed_w), params.embed_b);
}

// Mean over the window, then a two-layer MLP: N x 2 logits.
inline ad::Var readout(ad::Tape& tape, const ad::Var& state, const ModelParams& params, std::size_t stocks,
                       std::size_t window, double slope) {
  const std::size_t d = state.shape()[1];
  auto pooled = tape.mean(tape.reshape(state, {stocks, window, d}), 1);
  auto hidden = tape.leaky_relu(tape.add_rowwise(tape.matmul(pooled, params.readout_w1), params.readout_b1), slope);
  return tape.add_rowwise(tape.matmul(hidden, params.readout_w2), params.readout_b2);
}

// ---- the full network -----------------------------------------------------

class MgdprModel {
 public:
  MgdprModel(ModelConfig config, ModelParams params)
      : config_(std::move(config)), params_(std::move(params)) {
    config_.validate();
    mask_ = ad::Var::constant(tiled_decay_mask(config_.num_stocks, config_.window, config_.decay));
    if (params_.diffusion.size() != config_.num_layers || params_.retention.size() != config_.num_layers) {
      throw ConfigError("parameter set has " + std::to_string(params_.diffusion.size()) + " layers, config expects " +
                        std::to_string(config_.num_layers));
    }
  }

  MgdprModel(ModelConfig config, std::uint64_t seed) : MgdprModel(config, init_params(config, seed)) {}

  const ModelConfig& config() const { return config_; }
  ModelParams& params() { return params_; }
  const ModelParams& params() const { return params_; }

  // Materialized gamma (R x K) of every layer.
  std::vector<ad::Var> gammas(ad::Tape& tape) const {
    std::vector<ad::Var> out;
    for (const auto& dl : params_.diffusion) out.push_back(materialize_gamma(tape, dl.raw_gamma));
    return out;
  }

  // `adjacency` is one N x N matrix per relation.
  ad::Var forward(ad::Tape& tape, const Tensor& features, const std::vector<Tensor>& adjacency) const {
    const std::size_t N = config_.num_stocks, tau = config_.window, R = config_.num_relations;
    if (features.shape() != Shape{R, N, tau}) {
      throw DimensionError("forward: features " + shape_str(features.shape()) + " do not match config (" +
                           std::to_string(R) + "x" + std::to_string(N) + "x" + std::to_string(tau) + ")");
    }
    if (adjacency.size() != R) {
      throw DimensionError("forward: " + std::to_string(adjacency.size()) + " adjacency matrices for " +
                           std::to_string(R) + " relations");
    }
    std::vector<ad::Var> adj;
    for (const auto& a : adjacency) {
      if (a.shape() != Shape{N, N}) throw DimensionError("forward: adjacency " + shape_str(a.shape()) + " is not NxN");
      adj.push_back(ad::Var::constant(a));
    }
    const LayerShape shape{N, tau, config_.embed_dim};
    ad::Var hidden = init_state(tape, features, params_);
    ad::Var retained = hidden;
    for (std::size_t l = 0; l < config_.num_layers; ++l) {
      const auto& dl = params_.diffusion[l];
      auto gamma = materialize_gamma(tape, dl.raw_gamma);
      auto transitions = materialize_transition(tape, dl.raw_transition);
      std::vector<ad::Var> diffusion;
      for (std::size_t r = 0; r < R; ++r) {
        diffusion.push_back(diffusion_matrix(tape, tape.select(gamma, r), tape.select(transitions, r), adj[r]));
      }
      hidden = diffuse_layer(tape, hidden, diffusion, dl, shape, config_.activation_slope);
      retained = layer_update(tape, hidden, retained, params_.retention[l], mask_, config_.num_groups,
                              config_.activation_slope);
    }
    return readout(tape, retained, params_, N, tau, config_.activation_slope);
  }

  ad::Var forward(ad::Tape& tape, const WindowSample& sample, const MultiRelAdjacency& graphs) const {
    return forward(tape, sample.features, graphs.select(config_.normalized_adjacency));
  }

 private:
  ModelConfig config_;
  ModelParams params_;
  ad::Var mask_;
};

}  // namespace mgdpr
