#pragma once

// Clustering and detection quality measures.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "nid/error.hpp"
#include "nid/hier_cluster.hpp"

namespace nid::metrics {

enum class EntropyMean { arithmetic, geometric };

inline EntropyMean parse_entropy_mean(std::string_view s) {
  if (s == "arithmetic") return EntropyMean::arithmetic;
  if (s == "geometric") return EntropyMean::geometric;
  throw ConfigError("unknown NMI normalization '" + std::string(s) + "'");
}

// I(pred; truth) / mean(H(pred), H(truth)), natural logs. Defined as 1 when
// both entropies are 0.
template <typename A, typename B>
double nmi(std::span<const A> pred, std::span<const B> truth,
           EntropyMean mean = EntropyMean::arithmetic) {
  if (pred.size() != truth.size()) throw DataError("NMI: size mismatch");
  if (pred.empty()) throw DataError("NMI: nothing to evaluate");
  const double n = static_cast<double>(pred.size());
  std::map<std::pair<A, B>, double> joint;
  std::map<A, double> pa;
  std::map<B, double> pb;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    joint[{pred[i], truth[i]}] += 1.0;
    pa[pred[i]] += 1.0;
    pb[truth[i]] += 1.0;
  }
  auto entropy = [n](const auto& counts) {
    double h = 0.0;
    for (const auto& [key, c] : counts) h -= (c / n) * std::log(c / n);
    return h;
  };
  const double ha = entropy(pa);
  const double hb = entropy(pb);
  double mi = 0.0;
  for (const auto& [key, c] : joint) {
    mi += (c / n) * std::log(c * n / (pa[key.first] * pb[key.second]));
  }
  const double denom = mean == EntropyMean::arithmetic ? 0.5 * (ha + hb) : std::sqrt(ha * hb);
  if (ha == 0.0 && hb == 0.0) return 1.0;
  if (denom == 0.0) return 0.0;
  return std::clamp(mi / denom, 0.0, 1.0);
}

// Fraction of items that belong to their cluster's majority class.
template <typename Label>
double purity(std::span<const std::size_t> pred, std::span<const Label> truth) {
  if (pred.size() != truth.size()) throw DataError("purity: size mismatch");
  if (pred.empty()) throw DataError("purity: nothing to evaluate");
  std::map<std::size_t, std::map<Label, std::size_t>> table;
  for (std::size_t i = 0; i < pred.size(); ++i) ++table[pred[i]][truth[i]];
  std::size_t hits = 0;
  for (const auto& [cluster, counts] : table) {
    std::size_t best = 0;
    for (const auto& [label, c] : counts) best = std::max(best, c);
    hits += best;
  }
  return static_cast<double>(hits) / static_cast<double>(pred.size());
}

// Binary F1 with "novel" as the positive class; 0 when there are no true
// positives.
inline double detection_f1(const std::vector<bool>& predicted, const std::vector<bool>& truth) {
  if (predicted.size() != truth.size()) throw DataError("detection F1: size mismatch");
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (predicted[i] && truth[i]) ++tp;
    else if (predicted[i]) ++fp;
    else if (truth[i]) ++fn;
  }
  if (tp == 0) return 0.0;
  return static_cast<double>(2 * tp) / static_cast<double>(2 * tp + fp + fn);
}

struct MetricsReport {
  std::size_t n_clusters_found = 0;
  std::optional<std::size_t> n_clusters_truth;
  std::optional<double> nmi;
  std::optional<double> purity;
  std::optional<double> pairwise_f1;
  std::optional<double> detection_f1;
  std::map<std::string, double> timings_ms;
};

// Metrics for one clustering. Without truth only the cluster count is set.
inline MetricsReport build_report(const cluster::Clustering& pred,
                                  const std::optional<std::vector<std::string>>& truth,
                                  EntropyMean mean = EntropyMean::arithmetic) {
  if (pred.size() == 0) throw DataError("nothing to evaluate");
  MetricsReport r;
  r.n_clusters_found = pred.k;
  if (!truth) return r;
  if (truth->size() != pred.size()) throw DataError("report: truth labels do not cover the clustering");
  const std::span<const std::size_t> a = pred.assignment;
  const std::span<const std::string> t = *truth;
  r.n_clusters_truth = std::set<std::string>(t.begin(), t.end()).size();
  r.nmi = nmi(a, t, mean);
  r.purity = purity(a, t);
  r.pairwise_f1 = cluster::pairwise_f1(a, t);
  return r;
}

inline nlohmann::json to_json(const MetricsReport& r) {
  auto opt = [](const auto& v) -> nlohmann::json {
    if (v) return *v;
    return nullptr;
  };
  return {{"n_clusters_found", r.n_clusters_found},
          {"n_clusters_truth", opt(r.n_clusters_truth)},
          {"nmi", opt(r.nmi)},
          {"purity", opt(r.purity)},
          {"pairwise_f1", opt(r.pairwise_f1)},
          {"detection_f1", opt(r.detection_f1)}};
}

// "#int. | GT | NMI | Pur. | F1" style row set.
inline std::string format_table(const std::vector<std::pair<std::string, MetricsReport>>& rows) {
  auto num = [](const std::optional<double>& v) {
    if (!v) return std::string("-");
    std::ostringstream s;
    s.setf(std::ios::fixed);
    s.precision(4);
    s << *v;
    return s.str();
  };
  std::ostringstream out;
  out << "level      #found  GT      NMI     Pur.    F1\n";
  for (const auto& [name, r] : rows) {
    out << name;
    for (std::size_t pad = name.size(); pad < 11; ++pad) out << ' ';
    std::string found = std::to_string(r.n_clusters_found);
    std::string gt = r.n_clusters_truth ? std::to_string(*r.n_clusters_truth) : "-";
    found.resize(8, ' ');
    gt.resize(8, ' ');
    out << found << gt << num(r.nmi) << "  " << num(r.purity) << "  " << num(r.pairwise_f1) << '\n';
  }
  return out.str();
}

}  // namespace nid::metrics
