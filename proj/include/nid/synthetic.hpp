#pragma once

// Synthetic corpora: Gaussian blobs grouped into intents and domains, with
// seen, OOD and novel parts. Unlabeled utterances carry their true labels so
// runs can be scored.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "nid/corpus.hpp"
#include "nid/error.hpp"
#include "nid/hier_cluster.hpp"
#include "nid/matrix.hpp"

namespace nid::synthetic {

struct SyntheticSpec {
  std::size_t dim = 16;
  std::size_t seen_domains = 2;
  std::size_t seen_intents_per_domain = 3;
  std::size_t novel_domains = 2;
  std::size_t novel_intents_per_domain = 2;
  std::size_t ood_domains = 4;
  std::size_t ood_intents_per_domain = 3;

  std::size_t train_per_intent = 30;
  std::size_t validation_per_intent = 0;
  std::size_t ood_per_intent = 30;
  std::size_t unlabeled_seen_per_intent = 15;
  std::size_t unlabeled_novel_per_intent = 30;

  double sigma = 0.05;           // per-coordinate blob std
  // When above sigma, each intent draws its own std uniformly from
  // [sigma, sigma_max].
  double sigma_max = 0.0;
  double domain_radius = 3.0;    // norm of domain offsets from the origin
  double intent_spacing = 1.5;   // distance between intent centers of one domain
  double min_center_distance = 1.0;
  bool label_ood = true;         // OOD rows carry their intent labels
  std::uint64_t seed = 0;
};

// Neighbouring intents with unequal spreads: a threshold learned on the seen
// part both merges and splits novel intents, so pairwise supervision matters.
inline SyntheticSpec overlap_spec(std::uint64_t seed) {
  SyntheticSpec spec;
  spec.sigma = 0.05;
  spec.sigma_max = 0.3;
  spec.intent_spacing = 1.0;
  spec.min_center_distance = 0.9;
  spec.seed = seed;
  return spec;
}

struct IntentInfo {
  std::string intent;
  std::string domain;
  std::vector<double> center;
  double sigma = 0.0;
};

struct SyntheticCorpus {
  std::vector<Utterance> utterances;
  EmbeddingSet embeddings;
  std::vector<IntentInfo> seen, novel, ood;
};

namespace detail {

inline std::vector<double> random_direction(std::mt19937_64& rng, std::size_t dim, double radius) {
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<double> v(dim);
  for (double& x : v) x = g(rng);
  const double n = norm(v);
  for (double& x : v) x *= radius / n;
  return v;
}

// Random unit vector orthogonal to every vector in `basis` (orthonormal).
inline std::vector<double> orthogonal_direction(std::mt19937_64& rng, std::size_t dim,
                                                const std::vector<std::vector<double>>& basis) {
  for (;;) {
    auto v = random_direction(rng, dim, 1.0);
    for (const auto& b : basis) {
      const double p = dot(v, b);
      for (std::size_t j = 0; j < dim; ++j) v[j] -= p * b[j];
    }
    const double n = norm(v);
    if (n < 1e-6) continue;
    for (double& x : v) x /= n;
    return v;
  }
}

}  // namespace detail

inline SyntheticCorpus generate(const SyntheticSpec& spec) {
  if (spec.dim == 0) throw ConfigError("synthetic: dim must be >= 1");
  if (spec.domain_radius <= 0.0) throw ConfigError("synthetic: domain_radius must be positive");
  const std::size_t widest = std::max({spec.seen_intents_per_domain, spec.novel_intents_per_domain,
                                       spec.ood_intents_per_domain});
  if (widest + 1 > spec.dim) throw ConfigError("synthetic: dim too small for the intents per domain");
  std::mt19937_64 rng(spec.seed);

  SyntheticCorpus out;
  auto make_group = [&](const std::string& kind, std::size_t domains, std::size_t per_domain,
                        std::vector<IntentInfo>& dst) {
    for (std::size_t d = 0; d < domains; ++d) {
      const auto dc = detail::random_direction(rng, spec.dim, spec.domain_radius);
      // Mutually orthogonal offsets of equal norm put the intents of a domain
      // on a regular simplex with edge intent_spacing.
      std::vector<std::vector<double>> basis{dc};
      for (double& x : basis.front()) x /= spec.domain_radius;
      for (std::size_t i = 0; i < per_domain; ++i) {
        basis.push_back(detail::orthogonal_direction(rng, spec.dim, basis));
        std::vector<double> c(spec.dim);
        for (std::size_t j = 0; j < spec.dim; ++j) {
          c[j] = dc[j] + basis.back()[j] * spec.intent_spacing / std::sqrt(2.0);
        }
        dst.push_back({kind + "_intent_" + std::to_string(d) + "_" + std::to_string(i),
                       kind + "_domain_" + std::to_string(d), std::move(c)});
      }
    }
  };
  // Resample the layout until every pair of blob centers is far enough apart.
  for (int attempt = 0;; ++attempt) {
    if (attempt == 1000) throw ConfigError("synthetic: cannot satisfy min_center_distance");
    out.seen.clear();
    out.novel.clear();
    out.ood.clear();
    make_group("seen", spec.seen_domains, spec.seen_intents_per_domain, out.seen);
    make_group("novel", spec.novel_domains, spec.novel_intents_per_domain, out.novel);
    make_group("ood", spec.ood_domains, spec.ood_intents_per_domain, out.ood);
    std::vector<const IntentInfo*> all;
    for (auto* g : {&out.seen, &out.novel, &out.ood}) {
      for (const auto& i : *g) all.push_back(&i);
    }
    bool ok = true;
    for (std::size_t a = 0; a < all.size() && ok; ++a) {
      for (std::size_t b = a + 1; b < all.size() && ok; ++b) {
        ok = euclidean(all[a]->center, all[b]->center) >= spec.min_center_distance;
      }
    }
    if (ok) break;
  }
  if (spec.sigma_max > spec.sigma) {
    std::uniform_real_distribution<double> spread(spec.sigma, spec.sigma_max);
    for (auto* g : {&out.seen, &out.novel, &out.ood}) {
      for (auto& i : *g) i.sigma = spread(rng);
    }
  } else {
    for (auto* g : {&out.seen, &out.novel, &out.ood}) {
      for (auto& i : *g) i.sigma = spec.sigma;
    }
  }

  std::normal_distribution<double> noise(0.0, 1.0);
  std::vector<Utterance> labeled;
  std::vector<std::vector<double>> labeled_rows;
  std::vector<Utterance> pool;
  std::vector<std::vector<double>> pool_rows;
  auto emit = [&](const IntentInfo& info, std::size_t count, Split split, bool keep_labels,
                  const std::string& tag, std::vector<Utterance>& dst,
                  std::vector<std::vector<double>>& rows) {
    for (std::size_t k = 0; k < count; ++k) {
      Utterance u;
      u.id = info.intent + "-" + tag + "-" + std::to_string(k);
      u.split = split;
      if (keep_labels) {
        u.intent = info.intent;
        u.domain = info.domain;
      }
      std::vector<double> x = info.center;
      for (double& v : x) v += info.sigma * noise(rng);
      dst.push_back(std::move(u));
      rows.push_back(std::move(x));
    }
  };
  for (const auto& i : out.seen) {
    emit(i, spec.train_per_intent, Split::train_seen, true, "train", labeled, labeled_rows);
    emit(i, spec.validation_per_intent, Split::validation, true, "val", labeled, labeled_rows);
  }
  for (const auto& i : out.ood) {
    emit(i, spec.ood_per_intent, Split::ood, spec.label_ood, "ood", labeled, labeled_rows);
  }
  for (const auto& i : out.seen) {
    emit(i, spec.unlabeled_seen_per_intent, Split::unlabeled, true, "pool", pool, pool_rows);
  }
  for (const auto& i : out.novel) {
    emit(i, spec.unlabeled_novel_per_intent, Split::unlabeled, true, "pool", pool, pool_rows);
  }
  // Unlabeled rows in random order.
  std::vector<std::size_t> order(pool.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  for (std::size_t p : order) {
    labeled.push_back(std::move(pool[p]));
    labeled_rows.push_back(std::move(pool_rows[p]));
  }

  out.embeddings.matrix = Matrix(0, spec.dim);
  for (std::size_t r = 0; r < labeled.size(); ++r) {
    out.embeddings.ids.push_back(labeled[r].id);
    out.embeddings.matrix.append_row(labeled_rows[r]);
  }
  out.utterances = std::move(labeled);
  return out;
}

// `groups` must-link groups of `group_size` same-label items and `groups`
// cannot-link groups of `group_size` items with pairwise distinct labels.
// Every pair inside a group is constrained.
inline cluster::ConstraintSet sample_constraints(std::span<const std::string> ids,
                                                 std::span<const std::string> labels,
                                                 std::size_t groups, std::size_t group_size,
                                                 std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::map<std::string, std::vector<std::size_t>> by_label;
  for (std::size_t i = 0; i < labels.size(); ++i) by_label[labels[i]].push_back(i);
  std::vector<std::string> names;
  for (const auto& [name, members] : by_label) names.push_back(name);

  std::set<std::size_t> used;
  cluster::ConstraintSet cs;
  auto take = [&](const std::string& label) -> std::optional<std::size_t> {
    std::vector<std::size_t> free;
    for (std::size_t i : by_label[label]) {
      if (!used.count(i)) free.push_back(i);
    }
    if (free.empty()) return std::nullopt;
    const std::size_t pick = free[std::uniform_int_distribution<std::size_t>(0, free.size() - 1)(rng)];
    used.insert(pick);
    return pick;
  };
  auto link_all = [&](const std::vector<std::size_t>& g, std::vector<cluster::IdPair>& dst) {
    for (std::size_t a = 0; a < g.size(); ++a) {
      for (std::size_t b = a + 1; b < g.size(); ++b) dst.emplace_back(ids[g[a]], ids[g[b]]);
    }
  };
  for (std::size_t g = 0; g < groups; ++g) {
    std::vector<std::string> eligible;
    for (const auto& name : names) {
      std::size_t free = 0;
      for (std::size_t i : by_label[name]) free += !used.count(i);
      if (free >= group_size) eligible.push_back(name);
    }
    if (eligible.empty()) break;
    const auto& label = eligible[std::uniform_int_distribution<std::size_t>(0, eligible.size() - 1)(rng)];
    std::vector<std::size_t> members;
    for (std::size_t k = 0; k < group_size; ++k) members.push_back(*take(label));
    link_all(members, cs.must_link);
  }
  for (std::size_t g = 0; g < groups && names.size() >= group_size; ++g) {
    auto shuffled = names;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    std::vector<std::size_t> members;
    for (const auto& name : shuffled) {
      if (members.size() == group_size) break;
      if (auto i = take(name)) members.push_back(*i);
    }
    if (members.size() == group_size) link_all(members, cs.cannot_link);
  }
  return cs;
}

}  // namespace nid::synthetic
