#pragma once

// Stage I: flag unlabeled utterances whose intent is not one of the seen
// intents.
//
// A linear softmax head is trained over the seen intents plus either one
// catch-all "unseen" class fed by OOD utterances, or one class per labeled
// OOD intent. An utterance is novel if its argmax is an unseen class, or if
// its probability for every seen class falls below that class's DOC
// threshold.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "nid/adam.hpp"
#include "nid/corpus.hpp"
#include "nid/detail/encoding.hpp"
#include "nid/error.hpp"
#include "nid/matrix.hpp"

namespace nid::detector {

// one_unseen: K = S + 1.  m_unseen: K = S + m, one class per OOD intent.
// seen_only: K = S, used when no OOD data exists; detection then relies on
// the DOC thresholds alone.
enum class HeadMode { one_unseen, m_unseen, seen_only };

inline std::string_view to_string(HeadMode m) noexcept {
  switch (m) {
    case HeadMode::one_unseen: return "one_unseen";
    case HeadMode::m_unseen: return "m_unseen";
    case HeadMode::seen_only: return "seen_only";
  }
  return "?";
}

inline HeadMode parse_head_mode(std::string_view s) {
  if (s == "one_unseen") return HeadMode::one_unseen;
  if (s == "m_unseen") return HeadMode::m_unseen;
  if (s == "seen_only") return HeadMode::seen_only;
  throw ConfigError("unknown detector mode '" + std::string(s) + "'");
}

inline constexpr std::string_view kUnseenClass = "__unseen__";

struct SoftmaxHead {
  Matrix weights;             // K x D
  std::vector<double> bias;   // K
  std::vector<std::string> classes;  // seen intents first
  std::size_t seen_count = 0;
  HeadMode mode = HeadMode::one_unseen;

  std::size_t num_classes() const noexcept { return classes.size(); }
  std::size_t dim() const noexcept { return weights.cols(); }
  bool is_seen(std::size_t k) const noexcept { return k < seen_count; }
};

struct DocThresholds {
  std::vector<double> t;  // one per seen class
  double risk_factor = 3.0;
};

enum class Optimizer { adam, sgd };

struct TrainConfig {
  double learning_rate = 0.1;
  std::size_t batch_size = 64;
  std::size_t epochs = 8;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double l2_weight = 0.0;
  std::uint64_t rng_seed = 0;
  // Weight each class by N / (K * n_class) in the loss.
  bool balance_classes = false;
  Optimizer optimizer = Optimizer::adam;

  void validate() const {
    if (!(learning_rate > 0.0)) throw ConfigError("detector: learning_rate must be > 0");
    if (batch_size < 1) throw ConfigError("detector: batch_size must be >= 1");
    if (epochs < 1) throw ConfigError("detector: epochs must be >= 1");
    if (l2_weight < 0.0) throw ConfigError("detector: l2_weight must be >= 0");
  }
};

// Row-major softmax with max subtraction.
inline std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> p(logits.begin(), logits.end());
  if (p.empty()) return p;
  const double mx = *std::max_element(p.begin(), p.end());
  double sum = 0.0;
  for (double& v : p) {
    v = std::exp(v - mx);
    sum += v;
  }
  for (double& v : p) v /= sum;
  return p;
}

inline std::vector<double> logits(const SoftmaxHead& head, std::span<const double> x) {
  if (x.size() != head.dim()) {
    throw DataError("detector: input dimension " + std::to_string(x.size()) + " != head dimension " +
                    std::to_string(head.dim()));
  }
  std::vector<double> z(head.num_classes());
  affine(head.weights, x, head.bias, z);
  return z;
}

inline std::vector<double> predict_proba(const SoftmaxHead& head, std::span<const double> x) {
  return softmax(logits(head, x));
}

// Labeled training matrix: rows of x with class targets and per-row weights.
struct Examples {
  const Matrix* x = nullptr;
  std::vector<std::size_t> targets;
  std::vector<double> weights;
};

struct HeadGradient {
  Matrix weights;
  std::vector<double> bias;
};

// Weighted mean cross-entropy over `rows` (plus 0.5 * l2 * |W|^2). When `grad`
// is non-null it receives the exact gradient of that value.
inline double cross_entropy(const SoftmaxHead& head, const Examples& ex,
                            std::span<const std::size_t> rows, double l2_weight,
                            HeadGradient* grad = nullptr) {
  const std::size_t k = head.num_classes();
  const std::size_t d = head.dim();
  if (grad) {
    grad->weights = Matrix(k, d);
    grad->bias.assign(k, 0.0);
  }
  double loss = 0.0;
  const double inv_n = rows.empty() ? 0.0 : 1.0 / static_cast<double>(rows.size());
  for (std::size_t r : rows) {
    const auto x = ex.x->row(r);
    const auto p = predict_proba(head, x);
    const std::size_t y = ex.targets[r];
    const double w = ex.weights[r] * inv_n;
    loss -= w * std::log(std::max(p[y], std::numeric_limits<double>::min()));
    if (!grad) continue;
    for (std::size_t c = 0; c < k; ++c) {
      const double delta = w * (p[c] - (c == y ? 1.0 : 0.0));
      grad->bias[c] += delta;
      auto gw = grad->weights.row(c);
      for (std::size_t j = 0; j < d; ++j) gw[j] += delta * x[j];
    }
  }
  if (l2_weight > 0.0) {
    const auto& w = head.weights.storage();
    loss += 0.5 * l2_weight * dot(w, w);
    if (grad) {
      auto& g = grad->weights.storage();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += l2_weight * w[i];
    }
  }
  return loss;
}

struct FitResult {
  SoftmaxHead head;
  std::vector<double> loss_history;  // mean training loss after each epoch
};

// Builds the class list and targets for a training run. Exposed for tests.
inline std::pair<SoftmaxHead, Examples> prepare_training(const View& seen, const View& ood,
                                                         HeadMode mode, Matrix& x_out) {
  if (seen.empty()) throw DataError("detector: no seen training utterances");
  if (mode == HeadMode::one_unseen && ood.empty()) mode = HeadMode::seen_only;
  if (mode == HeadMode::m_unseen) {
    if (ood.empty()) throw ConfigError("detector: m_unseen mode requires OOD utterances");
    for (std::size_t r = 0; r < ood.size(); ++r) {
      if (!ood.intents[r]) {
        throw ConfigError("detector: m_unseen mode requires intent labels on OOD utterance '" +
                          ood.ids[r] + "'");
      }
    }
  }

  std::map<std::string, std::size_t> seen_index;
  for (const auto& i : seen.intents) {
    if (!i) throw DataError("detector: seen utterance without intent");
    seen_index.emplace(*i, 0);
  }
  std::map<std::string, std::size_t> ood_index;
  if (mode == HeadMode::m_unseen) {
    for (const auto& i : ood.intents) ood_index.emplace(*i, 0);
  }

  SoftmaxHead head;
  head.mode = mode;
  for (auto& [label, idx] : seen_index) {
    idx = head.classes.size();
    head.classes.push_back(label);
  }
  head.seen_count = head.classes.size();
  if (mode == HeadMode::one_unseen) head.classes.emplace_back(kUnseenClass);
  for (auto& [label, idx] : ood_index) {
    if (seen_index.count(label)) {
      throw DataError("detector: OOD intent '" + label + "' overlaps a seen intent");
    }
    idx = head.classes.size();
    head.classes.push_back(label);
  }
  const std::size_t k = head.classes.size();
  if (k < 2) {
    throw DataError("detector: need at least 2 classes, have " + std::to_string(k));
  }

  const bool use_ood = mode != HeadMode::seen_only;
  x_out = seen.x;
  Examples ex;
  for (const auto& i : seen.intents) ex.targets.push_back(seen_index.at(*i));
  if (use_ood) {
    for (std::size_t r = 0; r < ood.size(); ++r) {
      x_out.append_row(ood.x.row(r));
      ex.targets.push_back(mode == HeadMode::one_unseen ? head.seen_count
                                                        : ood_index.at(*ood.intents[r]));
    }
  }
  ex.x = &x_out;
  ex.weights.assign(ex.targets.size(), 1.0);

  head.weights = Matrix(k, x_out.cols());
  head.bias.assign(k, 0.0);
  return {std::move(head), std::move(ex)};
}

inline void apply_class_balance(Examples& ex, std::size_t num_classes) {
  std::vector<std::size_t> counts(num_classes, 0);
  for (std::size_t y : ex.targets) ++counts[y];
  const double n = static_cast<double>(ex.targets.size());
  for (std::size_t r = 0; r < ex.targets.size(); ++r) {
    ex.weights[r] = n / (static_cast<double>(num_classes) * counts[ex.targets[r]]);
  }
}

// Mini-batch training of a zero-initialized head. Deterministic given the seed.
inline FitResult train_softmax(const View& seen, const View& ood, HeadMode mode,
                               const TrainConfig& cfg) {
  cfg.validate();
  Matrix x;
  auto [head, ex] = prepare_training(seen, ood, mode, x);
  const std::size_t k = head.num_classes();
  {
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t y : ex.targets) ++counts[y];
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] == 0) throw DataError("detector: class '" + head.classes[c] + "' has no examples");
    }
  }
  if (cfg.balance_classes) apply_class_balance(ex, k);

  std::mt19937_64 rng(cfg.rng_seed);
  std::vector<std::size_t> order(ex.targets.size());
  std::iota(order.begin(), order.end(), 0);
  Adam adam({cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2});
  FitResult result;
  HeadGradient grad;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      const std::span<const std::size_t> batch(order.data() + start, end - start);
      const double loss = cross_entropy(head, ex, batch, cfg.l2_weight, &grad);
      if (!std::isfinite(loss)) {
        throw NumericError("detector: non-finite loss in epoch " + std::to_string(epoch + 1));
      }
      const std::span<double> params[] = {head.weights.flat(), head.bias};
      const std::span<const double> grads[] = {grad.weights.flat(), grad.bias};
      if (cfg.optimizer == Optimizer::adam) {
        adam.step(params, grads);
      } else {
        sgd_step(params, grads, cfg.learning_rate);
      }
    }
    const double epoch_loss = cross_entropy(head, ex, order, cfg.l2_weight);
    if (!std::isfinite(epoch_loss) || !head.weights.all_finite()) {
      throw NumericError("detector: non-finite loss in epoch " + std::to_string(epoch + 1));
    }
    result.loss_history.push_back(epoch_loss);
  }
  result.head = std::move(head);
  return result;
}

// DOC threshold for one class from the probabilities its own training rows
// received. Each p is mirrored to 2 - p; the std of the combined set about
// 1 gives sigma, and t = max(0.5, 1 - k * sigma).
inline double doc_threshold(std::span<const double> own_probs, double risk_factor) {
  if (own_probs.empty()) throw DataError("DOC threshold: class has no training rows");
  double ss = 0.0;
  for (double p : own_probs) ss += 2.0 * (1.0 - p) * (1.0 - p);
  const double sigma = std::sqrt(ss / (2.0 * static_cast<double>(own_probs.size())));
  return std::clamp(1.0 - risk_factor * sigma, 0.5, 1.0);
}

inline DocThresholds fit_doc_thresholds(const SoftmaxHead& head, const View& seen,
                                        double risk_factor = 3.0) {
  if (risk_factor < 0.0) throw ConfigError("DOC risk factor must be >= 0");
  std::map<std::string, std::size_t> index;
  for (std::size_t c = 0; c < head.seen_count; ++c) index.emplace(head.classes[c], c);
  std::vector<std::vector<double>> own(head.seen_count);
  for (std::size_t r = 0; r < seen.size(); ++r) {
    if (!seen.intents[r]) continue;
    auto it = index.find(*seen.intents[r]);
    if (it == index.end()) continue;
    own[it->second].push_back(predict_proba(head, seen.x.row(r))[it->second]);
  }
  DocThresholds thr;
  thr.risk_factor = risk_factor;
  for (std::size_t c = 0; c < head.seen_count; ++c) {
    if (own[c].empty()) {
      throw DataError("DOC threshold: seen class '" + head.classes[c] + "' has no training rows");
    }
    thr.t.push_back(doc_threshold(own[c], risk_factor));
  }
  return thr;
}

struct Verdict {
  bool novel = false;
  std::size_t argmax = 0;  // predicted class index (seen class when !novel)
};

// Decision from a probability vector: unseen argmax, then all-below-threshold.
inline Verdict decide(const SoftmaxHead& head, const DocThresholds& thr,
                      std::span<const double> probs) {
  Verdict v;
  v.argmax = static_cast<std::size_t>(std::max_element(probs.begin(), probs.end()) - probs.begin());
  if (!head.is_seen(v.argmax)) {
    v.novel = true;
    return v;
  }
  bool all_below = true;
  for (std::size_t c = 0; c < head.seen_count; ++c) {
    if (probs[c] >= thr.t[c]) {
      all_below = false;
      break;
    }
  }
  v.novel = all_below;
  return v;
}

inline Verdict detect_novel(const SoftmaxHead& head, const DocThresholds& thr,
                            std::span<const double> x) {
  return decide(head, thr, predict_proba(head, x));
}

struct Detection {
  std::vector<bool> novel;  // aligned with the input view
  std::vector<std::string> novel_ids;
  std::vector<std::pair<std::string, std::string>> seen;  // id -> predicted intent
};

inline Detection detect_all(const SoftmaxHead& head, const DocThresholds& thr, const View& pool) {
  Detection out;
  out.novel.reserve(pool.size());
  for (std::size_t r = 0; r < pool.size(); ++r) {
    const auto v = detect_novel(head, thr, pool.x.row(r));
    out.novel.push_back(v.novel);
    if (v.novel) {
      out.novel_ids.push_back(pool.ids[r]);
    } else {
      out.seen.emplace_back(pool.ids[r], head.classes[v.argmax]);
    }
  }
  return out;
}

inline nlohmann::json to_json(const SoftmaxHead& head, const DocThresholds& thr) {
  nlohmann::json j;
  j["classes"] = head.classes;
  j["seen_count"] = head.seen_count;
  j["mode"] = std::string(to_string(head.mode));
  j["dim"] = head.dim();
  j["W"] = detail::encode_f64(head.weights.flat());
  j["b"] = detail::encode_f64(head.bias);
  j["thresholds"] = {{"risk_factor", thr.risk_factor}, {"t", detail::encode_f64(thr.t)}};
  return j;
}

inline std::pair<SoftmaxHead, DocThresholds> head_from_json(const nlohmann::json& j) {
  try {
    SoftmaxHead head;
    head.classes = j.at("classes").get<std::vector<std::string>>();
    head.seen_count = j.at("seen_count").get<std::size_t>();
    head.mode = parse_head_mode(j.at("mode").get<std::string>());
    const auto dim = j.at("dim").get<std::size_t>();
    const std::size_t k = head.classes.size();
    if (head.seen_count > k) throw DataError("head: seen_count exceeds class count");
    head.weights = Matrix(k, dim);
    head.weights.storage() = detail::decode_f64(j.at("W").get<std::string>(), k * dim);
    head.bias = detail::decode_f64(j.at("b").get<std::string>(), k);
    if (!head.weights.all_finite()) throw DataError("head: non-finite weights");
    DocThresholds thr;
    thr.risk_factor = j.at("thresholds").at("risk_factor").get<double>();
    thr.t = detail::decode_f64(j.at("thresholds").at("t").get<std::string>(), head.seen_count);
    return {std::move(head), std::move(thr)};
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("head: ") + e.what());
  }
}

}  // namespace nid::detector
