#pragma once

// Complete-linkage agglomerative clustering, flat cuts, threshold transfer
// from labeled data, and must-link / cannot-link distance editing.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <thread>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "nid/corpus.hpp"
#include "nid/error.hpp"
#include "nid/matrix.hpp"

namespace nid::cluster {

// Condensed upper-triangular distance storage.
class DistanceMatrix {
 public:
  DistanceMatrix() = default;
  explicit DistanceMatrix(std::size_t n, double fill = 0.0)
      : n_(n), values_(n < 2 ? 0 : n * (n - 1) / 2, fill) {}

  std::size_t n() const noexcept { return n_; }
  std::span<const double> condensed() const noexcept { return values_; }
  std::span<double> condensed() noexcept { return values_; }

  static std::size_t index(std::size_t n, std::size_t i, std::size_t j) noexcept {
    if (i > j) std::swap(i, j);
    return n * i - i * (i + 1) / 2 + (j - i - 1);
  }

  double operator()(std::size_t i, std::size_t j) const noexcept {
    return i == j ? 0.0 : values_[index(n_, i, j)];
  }
  void set(std::size_t i, std::size_t j, double v) noexcept { values_[index(n_, i, j)] = v; }

  double max_entry() const noexcept {
    return values_.empty() ? 0.0 : *std::max_element(values_.begin(), values_.end());
  }

 private:
  std::size_t n_ = 0;
  std::vector<double> values_;
};

// Euclidean distances between all rows, computed in row blocks on up to
// `threads` workers. Every entry is computed independently, so the result
// does not depend on the thread count.
inline DistanceMatrix pairwise_distances(const Matrix& points, unsigned threads = 0) {
  const std::size_t n = points.rows();
  DistanceMatrix dm(n);
  if (n < 2) return dm;
  auto work = [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) dm.set(i, j, euclidean(points.row(i), points.row(j)));
    }
  };
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  if (threads == 1 || n < 256) {
    work(0, n);
  } else {
    // Interleave rows so the triangular workload is balanced.
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < threads; ++t) {
      pool.emplace_back([&, t] {
        for (std::size_t i = t; i < n; i += threads) work(i, i + 1);
      });
    }
    for (auto& th : pool) th.join();
  }
  for (double v : dm.condensed()) {
    if (!std::isfinite(v)) throw DataError("pairwise distances: non-finite result");
  }
  return dm;
}

inline DistanceMatrix pairwise_distances(const EmbeddingSet& embs, unsigned threads = 0) {
  if (embs.size() < 2) throw DataError("pairwise distances: need at least 2 items");
  return pairwise_distances(embs.matrix, threads);
}

// One agglomeration step. Leaves are 0..n-1; the i-th merge creates node n+i.
struct Merge {
  std::size_t left;   // older (smaller) node id
  std::size_t right;  // younger node id
  double height;

  friend bool operator==(const Merge&, const Merge&) = default;
};

struct Dendrogram {
  std::size_t leaves = 0;
  std::vector<Merge> merges;  // n - 1 entries, heights non-decreasing
};

// Complete linkage. At each step merges the pair with the smallest maximum
// inter-member distance; ties go to the pair with the smaller older id, then
// the smaller younger id.
//
// Each active cluster keeps its nearest partner among clusters with a larger
// id. A merge creates the largest id so far, so existing partners only need
// a rescan when they pointed at one of the two merged clusters.
inline Dendrogram complete_linkage(const DistanceMatrix& dm) {
  const std::size_t n = dm.n();
  if (n < 2) throw DataError("complete linkage: need at least 2 items");
  constexpr double kInf = std::numeric_limits<double>::infinity();
  constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();

  // Working distances indexed by slot; a merged cluster reuses the slot of
  // its younger member.
  std::vector<double> d(dm.condensed().begin(), dm.condensed().end());
  auto at = [&](std::size_t a, std::size_t b) -> double& { return d[DistanceMatrix::index(n, a, b)]; };

  std::vector<std::size_t> id(n);  // slot -> node id
  std::iota(id.begin(), id.end(), 0);
  std::vector<std::size_t> active(n);  // active slots, ascending by node id
  std::iota(active.begin(), active.end(), 0);
  std::vector<double> nn_dist(n, kInf);
  std::vector<std::size_t> nn_slot(n, kNone);

  // Active slots are kept sorted by node id, so "larger id" = later position.
  auto rescan = [&](std::size_t pos) {
    const std::size_t s = active[pos];
    nn_dist[s] = kInf;
    nn_slot[s] = kNone;
    for (std::size_t q = pos + 1; q < active.size(); ++q) {
      const double v = at(s, active[q]);
      if (v < nn_dist[s]) {
        nn_dist[s] = v;
        nn_slot[s] = active[q];
      }
    }
  };
  for (std::size_t p = 0; p < n; ++p) rescan(p);

  Dendrogram out;
  out.leaves = n;
  out.merges.reserve(n - 1);
  std::size_t next_id = n;
  while (active.size() > 1) {
    // Global minimum; scanning positions in id order resolves ties to the
    // smaller older id, and each nn entry already holds the smaller younger id.
    std::size_t best_pos = kNone;
    for (std::size_t p = 0; p + 1 < active.size(); ++p) {
      const std::size_t s = active[p];
      if (best_pos == kNone || nn_dist[s] < nn_dist[active[best_pos]]) best_pos = p;
    }
    const std::size_t sa = active[best_pos];
    const std::size_t sb = nn_slot[sa];
    const double height = nn_dist[sa];
    out.merges.push_back({id[sa], id[sb], height});

    // New cluster lives in slot sb with the newest id; move it to the end.
    const std::size_t pos_b =
        static_cast<std::size_t>(std::find(active.begin(), active.end(), sb) - active.begin());
    active.erase(active.begin() + static_cast<std::ptrdiff_t>(pos_b));
    active.erase(active.begin() + static_cast<std::ptrdiff_t>(best_pos));
    for (std::size_t s : active) at(sb, s) = std::max(at(sa, s), at(sb, s));
    id[sb] = next_id++;
    active.push_back(sb);
    nn_dist[sb] = kInf;
    nn_slot[sb] = kNone;

    for (std::size_t p = 0; p + 1 < active.size(); ++p) {
      const std::size_t s = active[p];
      if (nn_slot[s] == sa || nn_slot[s] == sb) {
        rescan(p);
      } else if (at(s, sb) < nn_dist[s]) {
        nn_dist[s] = at(s, sb);
        nn_slot[s] = sb;
      }
    }
  }
  return out;
}

// Flat assignment. Cluster indices are dense and numbered in order of each
// cluster's smallest item index.
struct Clustering {
  std::vector<std::size_t> assignment;
  std::size_t k = 0;

  std::size_t size() const noexcept { return assignment.size(); }

  std::vector<std::vector<std::size_t>> members() const {
    std::vector<std::vector<std::size_t>> out(k);
    for (std::size_t i = 0; i < assignment.size(); ++i) out[assignment[i]].push_back(i);
    return out;
  }
};

// Renumbers arbitrary component labels into the canonical dense form.
inline Clustering canonical_clustering(std::span<const std::size_t> labels) {
  Clustering c;
  c.assignment.resize(labels.size());
  std::unordered_map<std::size_t, std::size_t> remap;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    auto [it, inserted] = remap.try_emplace(labels[i], remap.size());
    c.assignment[i] = it->second;
  }
  c.k = remap.size();
  return c;
}

namespace detail {

struct DisjointSet {
  std::vector<std::size_t> parent;
  explicit DisjointSet(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  std::size_t find(std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  }
  void unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a != b) parent[std::max(a, b)] = std::min(a, b);
  }
};

}  // namespace detail

// Applies every merge with height <= delta.
inline Clustering cut(const Dendrogram& dendro, double delta) {
  if (delta < 0.0 || std::isnan(delta)) throw ConfigError("cut: threshold must be >= 0");
  const std::size_t n = dendro.leaves;
  // node id -> representative leaf
  std::vector<std::size_t> rep(n + dendro.merges.size());
  std::iota(rep.begin(), rep.begin() + static_cast<std::ptrdiff_t>(n), 0);
  detail::DisjointSet ds(n);
  for (std::size_t m = 0; m < dendro.merges.size(); ++m) {
    const auto& mg = dendro.merges[m];
    rep[n + m] = rep[mg.left];
    if (mg.height <= delta) ds.unite(rep[mg.left], rep[mg.right]);
  }
  std::vector<std::size_t> roots(n);
  for (std::size_t i = 0; i < n; ++i) roots[i] = ds.find(i);
  return canonical_clustering(roots);
}

// Pair-counting F1 of a clustering against labels. 0 when either side has no
// positive pairs.
template <typename Label>
double pairwise_f1(std::span<const std::size_t> assignment, std::span<const Label> labels) {
  if (assignment.size() != labels.size()) throw DataError("pairwise F1: size mismatch");
  std::map<std::pair<std::size_t, Label>, std::uint64_t> cell;
  std::map<std::size_t, std::uint64_t> per_cluster;
  std::map<Label, std::uint64_t> per_label;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    ++cell[{assignment[i], labels[i]}];
    ++per_cluster[assignment[i]];
    ++per_label[labels[i]];
  }
  auto pairs = [](std::uint64_t c) { return c * (c - 1) / 2; };
  std::uint64_t tp = 0, predicted = 0, truth = 0;
  for (const auto& [key, c] : cell) tp += pairs(c);
  for (const auto& [key, c] : per_cluster) predicted += pairs(c);
  for (const auto& [key, c] : per_label) truth += pairs(c);
  if (predicted == 0 || truth == 0 || tp == 0) return 0.0;
  // 2PR / (P + R) as one integer ratio, so exact values stay exact.
  return static_cast<double>(2 * tp) / static_cast<double>(predicted + truth);
}

// BCubed F1: per-item precision and recall, averaged.
template <typename Label>
double bcubed_f1(std::span<const std::size_t> assignment, std::span<const Label> labels) {
  if (assignment.size() != labels.size()) throw DataError("BCubed F1: size mismatch");
  if (labels.empty()) return 0.0;
  std::map<std::pair<std::size_t, Label>, double> cell;
  std::map<std::size_t, double> per_cluster;
  std::map<Label, double> per_label;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    cell[{assignment[i], labels[i]}] += 1.0;
    per_cluster[assignment[i]] += 1.0;
    per_label[labels[i]] += 1.0;
  }
  double p = 0.0, r = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double c = cell[{assignment[i], labels[i]}];
    p += c / per_cluster[assignment[i]];
    r += c / per_label[labels[i]];
  }
  p /= static_cast<double>(labels.size());
  r /= static_cast<double>(labels.size());
  return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r);
}

enum class F1Variant { pairwise, bcubed };

inline F1Variant parse_f1_variant(std::string_view s) {
  if (s == "pairwise") return F1Variant::pairwise;
  if (s == "bcubed") return F1Variant::bcubed;
  throw ConfigError("unknown F1 variant '" + std::string(s) + "'");
}

inline std::string_view to_string(F1Variant v) noexcept {
  return v == F1Variant::pairwise ? "pairwise" : "bcubed";
}

template <typename Label>
double clustering_f1(F1Variant variant, std::span<const std::size_t> assignment,
                     std::span<const Label> labels) {
  return variant == F1Variant::pairwise ? pairwise_f1(assignment, labels)
                                        : bcubed_f1(assignment, labels);
}

struct ThresholdChoice {
  double delta = 0.0;
  double f1 = 0.0;
  std::size_t clusters = 0;  // clusters on the labeled data at delta
};

// Candidate thresholds: 0 and every merge height. Returns the one with the
// best F1; ties keep the smallest threshold.
template <typename Label>
ThresholdChoice best_cut(const Dendrogram& dendro, std::span<const Label> labels,
                         F1Variant variant = F1Variant::pairwise) {
  std::vector<double> candidates{0.0};
  for (const auto& m : dendro.merges) {
    if (m.height != candidates.back() && m.height > 0.0) candidates.push_back(m.height);
  }
  ThresholdChoice best{0.0, -1.0, 0};
  for (double delta : candidates) {
    const auto c = cut(dendro, delta);
    const double f1 = clustering_f1<Label>(variant, c.assignment, labels);
    if (f1 > best.f1) best = {delta, f1, c.k};
  }
  return best;
}

// Learns the cut height on labeled points that best reproduces their labels.
template <typename Label>
ThresholdChoice transfer_threshold(const Matrix& points, std::span<const Label> labels,
                                   F1Variant variant = F1Variant::pairwise) {
  if (points.rows() != labels.size()) throw DataError("threshold transfer: size mismatch");
  if (std::set<Label>(labels.begin(), labels.end()).size() < 2) {
    throw DataError("threshold transfer: need at least 2 distinct labels");
  }
  return best_cut(complete_linkage(pairwise_distances(points)), labels, variant);
}

using IdPair = std::pair<std::string, std::string>;

struct ConstraintSet {
  std::vector<IdPair> must_link;
  std::vector<IdPair> cannot_link;

  std::size_t size() const noexcept { return must_link.size() + cannot_link.size(); }
};

// Keeps only pairs whose ids both occur in `ids`.
inline ConstraintSet restrict_to(const ConstraintSet& cs, std::span<const std::string> ids) {
  std::set<std::string_view> known(ids.begin(), ids.end());
  auto keep = [&](const IdPair& p) { return known.count(p.first) && known.count(p.second); };
  ConstraintSet out;
  std::copy_if(cs.must_link.begin(), cs.must_link.end(), std::back_inserter(out.must_link), keep);
  std::copy_if(cs.cannot_link.begin(), cs.cannot_link.end(), std::back_inserter(out.cannot_link),
               keep);
  return out;
}

// Throws DataError unless the set is consistent with `ids`: known ids, no
// self pairs, no pair in both lists, and no cannot-link pair joined by the
// transitive closure of must-link.
inline void validate_constraints(const ConstraintSet& cs, std::span<const std::string> ids) {
  std::unordered_map<std::string_view, std::size_t> index;
  for (std::size_t i = 0; i < ids.size(); ++i) index.emplace(ids[i], i);
  auto lookup = [&](const IdPair& p, const char* kind) {
    auto a = index.find(p.first);
    auto b = index.find(p.second);
    if (a == index.end() || b == index.end()) {
      throw DataError(std::string(kind) + " constraint references unknown id ('" + p.first +
                      "', '" + p.second + "')");
    }
    if (a->second == b->second) {
      throw DataError(std::string(kind) + " constraint pairs '" + p.first + "' with itself");
    }
    return std::minmax(a->second, b->second);
  };
  std::set<std::pair<std::size_t, std::size_t>> ml;
  detail::DisjointSet groups(ids.size());
  for (const auto& p : cs.must_link) {
    const auto key = lookup(p, "must-link");
    ml.insert(key);
    groups.unite(key.first, key.second);
  }
  for (const auto& p : cs.cannot_link) {
    const auto key = lookup(p, "cannot-link");
    if (ml.count(key)) {
      throw DataError("pair ('" + p.first + "', '" + p.second +
                      "') is both must-link and cannot-link");
    }
    if (groups.find(key.first) == groups.find(key.second)) {
      throw DataError("cannot-link pair ('" + p.first + "', '" + p.second +
                      "') is connected through must-link constraints");
    }
  }
}

// Must-link pairs become 0; cannot-link pairs become 10x the largest entry
// of the unedited matrix (1.0 if that is 0).
inline DistanceMatrix apply_constraints(const DistanceMatrix& dm, const ConstraintSet& cs,
                                        std::span<const std::string> ids) {
  if (ids.size() != dm.n()) throw DataError("constraints: id count does not match matrix");
  validate_constraints(cs, ids);
  std::unordered_map<std::string_view, std::size_t> index;
  for (std::size_t i = 0; i < ids.size(); ++i) index.emplace(ids[i], i);
  const double mx = dm.max_entry();
  const double far = mx > 0.0 ? 10.0 * mx : 1.0;
  DistanceMatrix out = dm;
  for (const auto& [a, b] : cs.must_link) out.set(index.at(a), index.at(b), 0.0);
  for (const auto& [a, b] : cs.cannot_link) out.set(index.at(a), index.at(b), far);
  return out;
}

// Clusters the given points at a fixed threshold, optionally after applying
// constraints (pairs outside `embs` are ignored).
inline Clustering cluster_novel(const EmbeddingSet& embs, double delta,
                                const ConstraintSet* constraints = nullptr) {
  if (embs.empty()) throw DataError("cluster_novel: no items");
  if (embs.size() == 1) return Clustering{{0}, 1};
  auto dm = pairwise_distances(embs);
  if (constraints) dm = apply_constraints(dm, restrict_to(*constraints, embs.ids), embs.ids);
  return cut(complete_linkage(dm), delta);
}

inline nlohmann::json to_json(const Clustering& c, std::span<const std::string> ids) {
  nlohmann::json assignment = nlohmann::json::object();
  for (std::size_t i = 0; i < ids.size(); ++i) assignment[ids[i]] = c.assignment[i];
  return {{"k", c.k}, {"assignment", assignment}};
}

// Reads a clustering for the given id order.
inline Clustering clustering_from_json(const nlohmann::json& j, std::span<const std::string> ids) {
  try {
    Clustering c;
    c.k = j.at("k").get<std::size_t>();
    const auto& a = j.at("assignment");
    if (a.size() != ids.size()) throw DataError("clustering: assignment size mismatch");
    for (const auto& id : ids) {
      const auto v = a.at(id).get<std::size_t>();
      if (v >= c.k) throw DataError("clustering: cluster index out of range for '" + id + "'");
      c.assignment.push_back(v);
    }
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("clustering: ") + e.what());
  }
}

inline nlohmann::json to_json(const Dendrogram& d) {
  nlohmann::json merges = nlohmann::json::array();
  for (const auto& m : d.merges) merges.push_back({m.left, m.right, m.height});
  return {{"leaves", d.leaves}, {"merges", merges}};
}

inline ConstraintSet constraints_from_json(const nlohmann::json& j) {
  try {
    ConstraintSet cs;
    auto read = [&](const char* key, std::vector<IdPair>& out) {
      if (!j.contains(key)) return;
      for (const auto& p : j.at(key)) {
        if (!p.is_array() || p.size() != 2) throw DataError(std::string(key) + ": expected [id, id]");
        out.emplace_back(p[0].get<std::string>(), p[1].get<std::string>());
      }
    };
    read("must_link", cs.must_link);
    read("cannot_link", cs.cannot_link);
    return cs;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("constraints: ") + e.what());
  }
}

inline nlohmann::json to_json(const ConstraintSet& cs) {
  auto pairs = [](const std::vector<IdPair>& v) {
    nlohmann::json a = nlohmann::json::array();
    for (const auto& [x, y] : v) a.push_back({x, y});
    return a;
  };
  return {{"must_link", pairs(cs.must_link)}, {"cannot_link", pairs(cs.cannot_link)}};
}

}  // namespace nid::cluster
