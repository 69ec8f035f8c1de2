#pragma once

// Stage III: group discovered intent clusters into domains.
//
// Seen clusters get the majority domain of their members. A domain-level
// threshold is learned on seen cluster centroids against those domains and
// then used to cut the complete-linkage tree over novel cluster centroids.

#include <algorithm>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "nid/error.hpp"
#include "nid/hier_cluster.hpp"
#include "nid/matrix.hpp"

namespace nid::taxonomy {

enum class Provenance { seen, novel };

inline std::string_view to_string(Provenance p) noexcept {
  return p == Provenance::seen ? "seen" : "novel";
}

struct IntentCluster {
  std::string id;
  std::vector<std::string> members;
  std::vector<double> centroid;
  Provenance provenance = Provenance::novel;
  std::optional<std::string> domain;
};

struct Domain {
  std::string id;
  Provenance provenance = Provenance::novel;
  std::vector<IntentCluster> intents;
};

struct Taxonomy {
  std::vector<Domain> domains;

  std::size_t count(Provenance p) const noexcept {
    return static_cast<std::size_t>(std::count_if(
        domains.begin(), domains.end(), [p](const Domain& d) { return d.provenance == p; }));
  }
  std::size_t intent_count(Provenance p) const noexcept {
    std::size_t n = 0;
    for (const auto& d : domains) {
      for (const auto& i : d.intents) n += i.provenance == p;
    }
    return n;
  }
};

// Mean of member rows for each cluster of `c` over `points`.
inline Matrix compute_centroids(const cluster::Clustering& c, const Matrix& points) {
  if (c.size() != points.rows()) throw DataError("centroids: clustering does not cover the points");
  Matrix out(c.k, points.cols());
  std::vector<std::size_t> counts(c.k, 0);
  for (std::size_t i = 0; i < c.size(); ++i) {
    auto dst = out.row(c.assignment[i]);
    const auto src = points.row(i);
    for (std::size_t j = 0; j < src.size(); ++j) dst[j] += src[j];
    ++counts[c.assignment[i]];
  }
  for (std::size_t k = 0; k < c.k; ++k) {
    if (counts[k] == 0) throw DataError("centroids: cluster " + std::to_string(k) + " is empty");
    for (double& v : out.row(k)) v /= static_cast<double>(counts[k]);
  }
  return out;
}

// Modal label; ties go to the lexicographically smallest.
inline std::string majority_label(const std::vector<std::string>& labels) {
  if (labels.empty()) throw DataError("majority label of an empty set");
  std::map<std::string, std::size_t> counts;
  for (const auto& l : labels) ++counts[l];
  auto best = counts.begin();
  for (auto it = counts.begin(); it != counts.end(); ++it) {
    if (it->second > best->second) best = it;
  }
  return best->first;
}

// Builds one IntentCluster per cluster with the given provenance. Ids are
// "<prefix>-<k>".
inline std::vector<IntentCluster> make_intent_clusters(const cluster::Clustering& c,
                                                       std::span<const std::string> ids,
                                                       const Matrix& points, Provenance provenance,
                                                       const std::string& prefix) {
  const auto centroids = compute_centroids(c, points);
  std::vector<IntentCluster> out(c.k);
  for (std::size_t k = 0; k < c.k; ++k) {
    out[k].id = prefix + "-" + std::to_string(k);
    out[k].provenance = provenance;
    out[k].centroid.assign(centroids.row(k).begin(), centroids.row(k).end());
  }
  for (std::size_t i = 0; i < c.size(); ++i) out[c.assignment[i]].members.push_back(ids[i]);
  return out;
}

// Seen clusters labeled with the majority domain of their members.
inline std::vector<IntentCluster> label_seen_clusters(
    const cluster::Clustering& c, std::span<const std::string> ids,
    std::span<const std::optional<std::string>> domains, const Matrix& points) {
  auto clusters = make_intent_clusters(c, ids, points, Provenance::seen, "seen-intent");
  std::vector<std::vector<std::string>> member_domains(c.k);
  for (std::size_t i = 0; i < c.size(); ++i) {
    if (!domains[i]) throw DataError("seen utterance '" + ids[i] + "' has no domain label");
    member_domains[c.assignment[i]].push_back(*domains[i]);
  }
  for (std::size_t k = 0; k < c.k; ++k) clusters[k].domain = majority_label(member_domains[k]);
  return clusters;
}

inline Matrix stack_centroids(const std::vector<IntentCluster>& clusters) {
  Matrix m;
  for (const auto& c : clusters) m.append_row(c.centroid);
  return m;
}

// Domain-level threshold learned on seen centroids.
inline cluster::ThresholdChoice transfer_domain_threshold(
    const std::vector<IntentCluster>& seen, cluster::F1Variant variant = cluster::F1Variant::pairwise) {
  std::vector<std::string> labels;
  for (const auto& c : seen) {
    if (!c.domain) throw DataError("domain threshold: seen cluster '" + c.id + "' has no domain");
    labels.push_back(*c.domain);
  }
  if (std::set<std::string>(labels.begin(), labels.end()).size() < 2) {
    throw DataError("domain threshold: need at least 2 seen domains");
  }
  return cluster::transfer_threshold<std::string>(stack_centroids(seen), labels, variant);
}

// Groups novel intent clusters into novel domains by cutting their
// centroid tree at delta. Domains are numbered by their smallest member
// cluster index.
inline std::vector<Domain> link_domains(const std::vector<IntentCluster>& novel, double delta) {
  if (novel.empty()) throw DataError("link_domains: no novel intent clusters");
  cluster::Clustering groups;
  if (novel.size() == 1) {
    groups = {{0}, 1};
  } else {
    const auto dm = cluster::pairwise_distances(stack_centroids(novel));
    groups = cluster::cut(cluster::complete_linkage(dm), delta);
  }
  std::vector<Domain> out(groups.k);
  for (std::size_t g = 0; g < groups.k; ++g) {
    out[g].id = "novel-domain-" + std::to_string(g);
    out[g].provenance = Provenance::novel;
  }
  for (std::size_t i = 0; i < novel.size(); ++i) {
    auto ic = novel[i];
    ic.domain = out[groups.assignment[i]].id;
    out[groups.assignment[i]].intents.push_back(std::move(ic));
  }
  return out;
}

// Seen clusters grouped under their labeled domains.
inline std::vector<Domain> seen_domains(const std::vector<IntentCluster>& seen) {
  std::map<std::string, Domain> by_name;
  for (const auto& c : seen) {
    auto& d = by_name[*c.domain];
    d.id = *c.domain;
    d.provenance = Provenance::seen;
    d.intents.push_back(c);
  }
  std::vector<Domain> out;
  for (auto& [name, d] : by_name) out.push_back(std::move(d));
  return out;
}

// Seen and novel centroids clustered together at delta. Novel clusters that
// share a group with seen clusters join that group's majority seen domain;
// the rest form novel domains.
inline Taxonomy link_jointly(const std::vector<IntentCluster>& seen,
                             const std::vector<IntentCluster>& novel, double delta) {
  Taxonomy tax;
  tax.domains = seen_domains(seen);
  if (novel.empty()) return tax;
  std::vector<IntentCluster> all = seen;
  all.insert(all.end(), novel.begin(), novel.end());
  const auto groups = all.size() == 1
                          ? cluster::Clustering{{0}, 1}
                          : cluster::cut(cluster::complete_linkage(
                                             cluster::pairwise_distances(stack_centroids(all))),
                                         delta);
  std::vector<std::vector<std::string>> seen_in_group(groups.k);
  for (std::size_t i = 0; i < seen.size(); ++i) {
    seen_in_group[groups.assignment[i]].push_back(*seen[i].domain);
  }
  std::map<std::size_t, std::size_t> novel_group_domain;
  std::vector<Domain> fresh;
  for (std::size_t i = 0; i < novel.size(); ++i) {
    const std::size_t g = groups.assignment[seen.size() + i];
    auto ic = novel[i];
    if (!seen_in_group[g].empty()) {
      const auto name = majority_label(seen_in_group[g]);
      ic.domain = name;
      for (auto& d : tax.domains) {
        if (d.id == name) d.intents.push_back(std::move(ic));
      }
      continue;
    }
    auto [it, inserted] = novel_group_domain.try_emplace(g, fresh.size());
    if (inserted) {
      fresh.push_back({"novel-domain-" + std::to_string(fresh.size()), Provenance::novel, {}});
    }
    ic.domain = fresh[it->second].id;
    fresh[it->second].intents.push_back(std::move(ic));
  }
  tax.domains.insert(tax.domains.end(), fresh.begin(), fresh.end());
  return tax;
}

inline Taxonomy build_taxonomy(const std::vector<IntentCluster>& seen,
                               const std::vector<IntentCluster>& novel, double delta) {
  Taxonomy tax;
  tax.domains = seen_domains(seen);
  if (!novel.empty()) {
    auto fresh = link_domains(novel, delta);
    tax.domains.insert(tax.domains.end(), fresh.begin(), fresh.end());
  }
  return tax;
}

inline nlohmann::json to_json(const Taxonomy& tax, bool with_centroids) {
  nlohmann::json domains = nlohmann::json::array();
  for (const auto& d : tax.domains) {
    nlohmann::json intents = nlohmann::json::array();
    for (const auto& i : d.intents) {
      nlohmann::json ij = {{"id", i.id},
                           {"provenance", std::string(to_string(i.provenance))},
                           {"member_ids", i.members}};
      if (with_centroids) ij["centroid"] = i.centroid;
      intents.push_back(std::move(ij));
    }
    domains.push_back(
        {{"id", d.id}, {"provenance", std::string(to_string(d.provenance))}, {"intents", intents}});
  }
  return {{"domains", domains},
          {"counts",
           {{"seen_domains", tax.count(Provenance::seen)},
            {"novel_domains", tax.count(Provenance::novel)},
            {"novel_intents", tax.intent_count(Provenance::novel)}}}};
}

}  // namespace nid::taxonomy
