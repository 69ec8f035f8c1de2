#pragma once

// Stage II representation learning.
//
// A two-layer head maps a raw utterance vector x to
//   E(x)   = tanh(W1 x + b1)
//   Emb(x) = W2 E(x) + b2
// and is trained on quadruplets (anchor, same intent, same domain but
// different intent, different domain) with
//   loss = [m1 + d_i - d_j]+ + alpha [m2 + d_i - d_k]+ + beta [m3 + d_j - d_k]+
// where d_* is the one-minus-cosine distance between E(anchor) and E(other).
// Clustering later measures euclidean distance in Emb space.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "nid/adam.hpp"
#include "nid/corpus.hpp"
#include "nid/detail/encoding.hpp"
#include "nid/error.hpp"
#include "nid/matrix.hpp"

namespace nid::metric {

struct EncoderNet {
  Matrix w1;               // h x D
  std::vector<double> b1;  // h
  Matrix w2;               // e x h
  std::vector<double> b2;  // e

  std::size_t input_dim() const noexcept { return w1.cols(); }
  std::size_t hidden_dim() const noexcept { return w1.rows(); }
  std::size_t output_dim() const noexcept { return w2.rows(); }

  bool all_finite() const noexcept {
    auto finite = [](const std::vector<double>& v) {
      return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
    };
    return w1.all_finite() && w2.all_finite() && finite(b1) && finite(b2);
  }

  friend bool operator==(const EncoderNet&, const EncoderNet&) = default;
};

inline EncoderNet zero_net(std::size_t input, std::size_t hidden, std::size_t output) {
  return {Matrix(hidden, input), std::vector<double>(hidden, 0.0), Matrix(output, hidden),
          std::vector<double>(output, 0.0)};
}

// Xavier-uniform weights, zero biases.
inline EncoderNet xavier_net(std::size_t input, std::size_t hidden, std::size_t output,
                             std::uint64_t seed) {
  if (input == 0 || hidden == 0 || output == 0) {
    throw ConfigError("encoder: all layer sizes must be >= 1");
  }
  EncoderNet net = zero_net(input, hidden, output);
  std::mt19937_64 rng(seed);
  auto fill = [&rng](Matrix& m) {
    const double a = std::sqrt(6.0 / static_cast<double>(m.rows() + m.cols()));
    std::uniform_real_distribution<double> dist(-a, a);
    for (double& v : m.storage()) v = dist(rng);
  };
  fill(net.w1);
  fill(net.w2);
  return net;
}

struct Activations {
  std::vector<double> e;    // hidden, post-tanh
  std::vector<double> emb;  // output
};

inline Activations forward(const EncoderNet& net, std::span<const double> x) {
  if (x.size() != net.input_dim()) {
    throw DataError("encoder: input dimension " + std::to_string(x.size()) + " != " +
                    std::to_string(net.input_dim()));
  }
  Activations a;
  a.e.resize(net.hidden_dim());
  affine(net.w1, x, net.b1, a.e);
  for (double& v : a.e) v = std::tanh(v);
  a.emb.resize(net.output_dim());
  affine(net.w2, a.e, net.b2, a.emb);
  return a;
}

// 1 - cos(u, v). A zero vector on either side gives 1.
inline double cosine_distance(std::span<const double> u, std::span<const double> v) noexcept {
  const double nu = norm(u);
  const double nv = norm(v);
  if (nu == 0.0 || nv == 0.0) return 1.0;
  return 1.0 - dot(u, v) / (nu * nv);
}

// Adds scale * d(cosine_distance)/du to gu and the same for v. Degenerate
// (zero-norm) arguments contribute nothing.
inline void add_cosine_distance_grad(std::span<const double> u, std::span<const double> v,
                                     double scale, std::span<double> gu, std::span<double> gv) {
  const double nu = norm(u);
  const double nv = norm(v);
  if (nu == 0.0 || nv == 0.0 || scale == 0.0) return;
  const double inv = 1.0 / (nu * nv);
  const double cos = dot(u, v) * inv;
  const double su = cos / (nu * nu);
  const double sv = cos / (nv * nv);
  for (std::size_t i = 0; i < u.size(); ++i) {
    gu[i] -= scale * (v[i] * inv - su * u[i]);
    gv[i] -= scale * (u[i] * inv - sv * v[i]);
  }
}

struct LossConfig {
  double m1 = 0.05;
  double m2 = 0.05;
  double m3 = 0.05;
  double alpha = 1.0;
  double beta = 1.0;

  void validate() const {
    if (m1 < 0 || m2 < 0 || m3 < 0) throw ConfigError("loss: margins must be >= 0");
    if (alpha < 0 || beta < 0) throw ConfigError("loss: alpha and beta must be >= 0");
  }
};

// Row indices into a labeled view.
struct Quadruplet {
  std::size_t anchor;
  std::size_t same_intent;
  std::size_t same_domain;  // same domain, different intent
  std::size_t diff_domain;

  friend bool operator==(const Quadruplet&, const Quadruplet&) = default;
};

struct QuadDistances {
  double di;  // anchor vs same intent
  double dj;  // anchor vs same domain, different intent
  double dk;  // anchor vs different domain
};

inline double hinge_loss(const QuadDistances& d, const LossConfig& cfg) noexcept {
  return std::max(0.0, cfg.m1 + d.di - d.dj) + cfg.alpha * std::max(0.0, cfg.m2 + d.di - d.dk) +
         cfg.beta * std::max(0.0, cfg.m3 + d.dj - d.dk);
}

inline double quadruplet_loss(const EncoderNet& net, const Matrix& x, const Quadruplet& q,
                              const LossConfig& cfg) {
  const auto a = forward(net, x.row(q.anchor));
  const auto i = forward(net, x.row(q.same_intent));
  const auto j = forward(net, x.row(q.same_domain));
  const auto k = forward(net, x.row(q.diff_domain));
  return hinge_loss({cosine_distance(a.e, i.e), cosine_distance(a.e, j.e), cosine_distance(a.e, k.e)},
                    cfg);
}

inline double mean_loss(const EncoderNet& net, const Matrix& x, std::span<const Quadruplet> batch,
                        const LossConfig& cfg) {
  if (batch.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& q : batch) sum += quadruplet_loss(net, x, q, cfg);
  return sum / static_cast<double>(batch.size());
}

struct NetGradient {
  Matrix w1;
  std::vector<double> b1;
  Matrix w2;
  std::vector<double> b2;
};

// Exact gradient of the mean batch loss. Returns the mean loss. Each distinct
// row in the batch is forwarded and back-propagated once.
inline double loss_gradients(const EncoderNet& net, const Matrix& x,
                             std::span<const Quadruplet> batch, const LossConfig& cfg,
                             NetGradient& grad) {
  if (batch.empty()) throw DataError("loss_gradients: empty batch");
  const std::size_t h = net.hidden_dim();
  grad.w1 = Matrix(h, net.input_dim());
  grad.b1.assign(h, 0.0);
  grad.w2 = Matrix(net.output_dim(), h);
  grad.b2.assign(net.output_dim(), 0.0);

  std::unordered_map<std::size_t, std::size_t> slot;
  std::vector<std::size_t> rows;
  for (const auto& q : batch) {
    for (std::size_t r : {q.anchor, q.same_intent, q.same_domain, q.diff_domain}) {
      if (slot.emplace(r, rows.size()).second) rows.push_back(r);
    }
  }
  Matrix e(rows.size(), h);
  for (std::size_t s = 0; s < rows.size(); ++s) {
    const auto x_row = x.row(rows[s]);
    if (x_row.size() != net.input_dim()) throw DataError("loss_gradients: dimension mismatch");
    auto e_row = e.row(s);
    affine(net.w1, x_row, net.b1, e_row);
    for (double& v : e_row) v = std::tanh(v);
  }

  Matrix ge(rows.size(), h);
  const double inv_m = 1.0 / static_cast<double>(batch.size());
  double total = 0.0;
  for (const auto& q : batch) {
    const std::size_t sa = slot[q.anchor], si = slot[q.same_intent], sj = slot[q.same_domain],
                      sk = slot[q.diff_domain];
    const QuadDistances d{cosine_distance(e.row(sa), e.row(si)),
                          cosine_distance(e.row(sa), e.row(sj)),
                          cosine_distance(e.row(sa), e.row(sk))};
    total += hinge_loss(d, cfg);
    // Subgradient 0 at each kink.
    const bool h1 = cfg.m1 + d.di - d.dj > 0.0;
    const bool h2 = cfg.m2 + d.di - d.dk > 0.0;
    const bool h3 = cfg.m3 + d.dj - d.dk > 0.0;
    const double g_di = (h1 ? 1.0 : 0.0) + (h2 ? cfg.alpha : 0.0);
    const double g_dj = (h1 ? -1.0 : 0.0) + (h3 ? cfg.beta : 0.0);
    const double g_dk = (h2 ? -cfg.alpha : 0.0) + (h3 ? -cfg.beta : 0.0);
    add_cosine_distance_grad(e.row(sa), e.row(si), g_di * inv_m, ge.row(sa), ge.row(si));
    add_cosine_distance_grad(e.row(sa), e.row(sj), g_dj * inv_m, ge.row(sa), ge.row(sj));
    add_cosine_distance_grad(e.row(sa), e.row(sk), g_dk * inv_m, ge.row(sa), ge.row(sk));
  }

  // Back through tanh and the first layer. Emb does not enter the loss, so
  // the second layer's gradient stays zero.
  for (std::size_t s = 0; s < rows.size(); ++s) {
    const auto x_row = x.row(rows[s]);
    const auto e_row = e.row(s);
    const auto g_row = ge.row(s);
    for (std::size_t u = 0; u < h; ++u) {
      const double g_pre = g_row[u] * (1.0 - e_row[u] * e_row[u]);
      if (g_pre == 0.0) continue;
      grad.b1[u] += g_pre;
      auto gw = grad.w1.row(u);
      for (std::size_t c = 0; c < x_row.size(); ++c) gw[c] += g_pre * x_row[c];
    }
  }
  return total * inv_m;
}

struct QuadrupletSample {
  std::vector<Quadruplet> quadruplets;
  std::size_t skipped_anchors = 0;  // anchors lacking one of the three categories
};

// Draws `per_anchor` quadruplets for every anchor in `seen`, each companion
// uniformly from its category.
inline QuadrupletSample sample_quadruplets(const View& seen, std::size_t per_anchor,
                                           std::uint64_t seed) {
  const std::size_t n = seen.size();
  for (std::size_t r = 0; r < n; ++r) {
    if (!seen.intents[r] || !seen.domains[r]) {
      throw DataError("quadruplets: utterance '" + seen.ids[r] + "' lacks intent or domain");
    }
  }
  // Rows grouped by domain, and within each domain by intent.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return std::tie(*seen.domains[a], *seen.intents[a]) < std::tie(*seen.domains[b], *seen.intents[b]);
  });
  std::map<std::string, std::pair<std::size_t, std::size_t>> domain_block;
  std::map<std::pair<std::string, std::string>, std::pair<std::size_t, std::size_t>> intent_block;
  for (std::size_t p = 0; p < n; ++p) {
    const std::size_t r = order[p];
    auto [dit, dnew] = domain_block.try_emplace(*seen.domains[r], p, p);
    dit->second.second = p + 1;
    auto [iit, inew] = intent_block.try_emplace({*seen.domains[r], *seen.intents[r]}, p, p);
    iit->second.second = p + 1;
  }

  std::mt19937_64 rng(seed);
  auto pick = [&rng](std::size_t count) {
    return std::uniform_int_distribution<std::size_t>(0, count - 1)(rng);
  };

  QuadrupletSample out;
  for (std::size_t a = 0; a < n; ++a) {
    const auto [dlo, dhi] = domain_block.at(*seen.domains[a]);
    const auto [ilo, ihi] = intent_block.at({*seen.domains[a], *seen.intents[a]});
    const std::size_t n_same_intent = ihi - ilo - 1;
    const std::size_t n_same_domain = (dhi - dlo) - (ihi - ilo);
    const std::size_t n_diff_domain = n - (dhi - dlo);
    if (n_same_intent == 0 || n_same_domain == 0 || n_diff_domain == 0) {
      ++out.skipped_anchors;
      continue;
    }
    for (std::size_t t = 0; t < per_anchor; ++t) {
      Quadruplet q{};
      q.anchor = a;
      // Same intent, excluding the anchor itself.
      do {
        q.same_intent = order[ilo + pick(ihi - ilo)];
      } while (q.same_intent == a);
      std::size_t u = pick(n_same_domain);
      q.same_domain = order[u < ilo - dlo ? dlo + u : dlo + u + (ihi - ilo)];
      u = pick(n_diff_domain);
      q.diff_domain = order[u < dlo ? u : u + (dhi - dlo)];
      out.quadruplets.push_back(q);
    }
  }
  if (out.quadruplets.empty()) {
    throw DataError(
        "quadruplets: no valid quadruplet (need >= 2 domains and >= 2 intents within a domain, "
        "each with >= 2 utterances)");
  }
  return out;
}

struct MetricTrainConfig {
  double learning_rate = 1e-3;
  std::size_t batch_quadruplets = 64;
  std::size_t epochs = 15;
  std::size_t per_anchor = 2;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  std::uint64_t rng_seed = 0;
  std::size_t hidden = 256;
  std::size_t output = 128;

  void validate() const {
    if (!(learning_rate > 0.0)) throw ConfigError("metric: learning_rate must be > 0");
    if (batch_quadruplets < 1) throw ConfigError("metric: batch size M must be >= 1");
    if (per_anchor < 1) throw ConfigError("metric: per_anchor must be >= 1");
    if (hidden < 1 || output < 1) throw ConfigError("metric: layer sizes must be >= 1");
  }
};

struct MetricFit {
  EncoderNet net;
  std::vector<double> loss_history;  // mean batch loss per epoch
  double initial_loss = 0.0;         // first-epoch sample under the initial net
  double final_loss = 0.0;           // same sample under the trained net
  std::size_t skipped_anchors = 0;
};

inline MetricFit train_metric(const View& seen, const LossConfig& loss_cfg,
                              const MetricTrainConfig& cfg) {
  loss_cfg.validate();
  cfg.validate();
  if (seen.empty()) throw DataError("metric: no seen utterances");
  MetricFit fit;
  fit.net = xavier_net(seen.x.cols(), cfg.hidden, cfg.output, cfg.rng_seed);

  // Each epoch draws a fresh sample from its own stream.
  auto epoch_seed = [&](std::size_t epoch) {
    return cfg.rng_seed ^ (0x9E3779B97F4A7C15ULL * (epoch + 1));
  };
  const auto reference = sample_quadruplets(seen, cfg.per_anchor, epoch_seed(0));
  fit.skipped_anchors = reference.skipped_anchors;
  fit.initial_loss = mean_loss(fit.net, seen.x, reference.quadruplets, loss_cfg);

  Adam adam({cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2});
  std::mt19937_64 shuffle_rng(cfg.rng_seed + 1);
  NetGradient grad;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    auto sample = epoch == 0 ? reference : sample_quadruplets(seen, cfg.per_anchor, epoch_seed(epoch));
    auto& quads = sample.quadruplets;
    std::shuffle(quads.begin(), quads.end(), shuffle_rng);
    double sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < quads.size(); start += cfg.batch_quadruplets) {
      const std::size_t end = std::min(quads.size(), start + cfg.batch_quadruplets);
      const std::span<const Quadruplet> batch(quads.data() + start, end - start);
      const double loss = loss_gradients(fit.net, seen.x, batch, loss_cfg, grad);
      if (!std::isfinite(loss)) {
        throw NumericError("metric: non-finite loss in epoch " + std::to_string(epoch + 1) +
                           ", batch " + std::to_string(batches + 1));
      }
      const std::span<double> params[] = {fit.net.w1.flat(), fit.net.b1, fit.net.w2.flat(),
                                          fit.net.b2};
      const std::span<const double> grads[] = {grad.w1.flat(), grad.b1, grad.w2.flat(), grad.b2};
      adam.step(params, grads);
      if (!fit.net.all_finite()) {
        throw NumericError("metric: non-finite weights in epoch " + std::to_string(epoch + 1) +
                           ", batch " + std::to_string(batches + 1));
      }
      sum += loss;
      ++batches;
    }
    fit.loss_history.push_back(sum / static_cast<double>(batches));
  }
  fit.final_loss = mean_loss(fit.net, seen.x, reference.quadruplets, loss_cfg);
  return fit;
}

inline EmbeddingSet embed_all(const EncoderNet& net, const EmbeddingSet& raw) {
  EmbeddingSet out;
  out.ids = raw.ids;
  out.space = SpaceTag::Emb;
  out.matrix = Matrix(raw.size(), net.output_dim());
  if (raw.empty()) return out;
  if (raw.dim() != net.input_dim()) {
    throw DataError("embed_all: input dimension " + std::to_string(raw.dim()) + " != " +
                    std::to_string(net.input_dim()));
  }
  for (std::size_t r = 0; r < raw.size(); ++r) {
    const auto a = forward(net, raw.matrix.row(r));
    std::copy(a.emb.begin(), a.emb.end(), out.matrix.row(r).begin());
  }
  return out;
}

inline nlohmann::json to_json(const EncoderNet& net) {
  return {{"input_dim", net.input_dim()},
          {"hidden_dim", net.hidden_dim()},
          {"output_dim", net.output_dim()},
          {"activation", "tanh"},
          {"W1", detail::encode_f64(net.w1.flat())},
          {"b1", detail::encode_f64(net.b1)},
          {"W2", detail::encode_f64(net.w2.flat())},
          {"b2", detail::encode_f64(net.b2)}};
}

inline EncoderNet net_from_json(const nlohmann::json& j) {
  try {
    const auto d = j.at("input_dim").get<std::size_t>();
    const auto h = j.at("hidden_dim").get<std::size_t>();
    const auto e = j.at("output_dim").get<std::size_t>();
    if (d == 0 || h == 0 || e == 0) throw DataError("encoder: zero layer size");
    EncoderNet net = zero_net(d, h, e);
    net.w1.storage() = detail::decode_f64(j.at("W1").get<std::string>(), h * d);
    net.b1 = detail::decode_f64(j.at("b1").get<std::string>(), h);
    net.w2.storage() = detail::decode_f64(j.at("W2").get<std::string>(), e * h);
    net.b2 = detail::decode_f64(j.at("b2").get<std::string>(), e);
    if (!net.all_finite()) throw DataError("encoder: non-finite weights");
    return net;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("encoder: ") + e.what());
  }
}

}  // namespace nid::metric
