#include <gtest/gtest.h>

#include <limits>
#include <set>
#include <random>

#include "nid/taxonomy.hpp"

using namespace nid;
using namespace nid::taxonomy;

namespace {

IntentCluster at(std::string id, std::vector<double> centroid, std::optional<std::string> domain = {},
                 Provenance p = Provenance::novel) {
  return {std::move(id), {}, std::move(centroid), p, std::move(domain)};
}

}  // namespace

TEST(Majority, ModeAndTies) {
  EXPECT_EQ(majority_label({"b", "a", "b"}), "b");
  EXPECT_EQ(majority_label({"b", "a"}), "a");
  EXPECT_THROW(majority_label({}), DataError);
}

TEST(Centroids, MeanOfMembers) {
  Matrix p;
  for (auto r : {std::vector<double>{0, 0}, {2, 4}, {10, 10}}) p.append_row(r);
  const auto c = compute_centroids({{0, 0, 1}, 2}, p);
  EXPECT_EQ(c(0, 0), 1.0);
  EXPECT_EQ(c(0, 1), 2.0);
  EXPECT_EQ(c(1, 0), 10.0);
  EXPECT_THROW(compute_centroids({{0, 0, 2}, 3}, p), DataError);  // cluster 1 is empty
}

TEST(SeenClusters, MajorityDomain) {
  Matrix p(3, 1);
  const std::vector<std::string> ids{"a", "b", "c"};
  const std::vector<std::optional<std::string>> doms{"X", "Y", "X"};
  const auto cs = label_seen_clusters({{0, 0, 0}, 1}, ids, doms, p);
  ASSERT_EQ(cs.size(), 1u);
  EXPECT_EQ(*cs[0].domain, "X");
  EXPECT_EQ(cs[0].members, ids);
  EXPECT_EQ(cs[0].provenance, Provenance::seen);
}

TEST(DomainThreshold, TwoCentroidsGiveZero) {
  const std::vector<IntentCluster> seen{at("s0", {0, 0}, "A", Provenance::seen),
                                        at("s1", {5, 0}, "B", Provenance::seen)};
  const auto ch = transfer_domain_threshold(seen);
  EXPECT_EQ(ch.delta, 0.0);
  EXPECT_EQ(ch.f1, 0.0);
}

TEST(DomainThreshold, LearnsWithinDomainSpread) {
  const std::vector<IntentCluster> seen{
      at("s0", {0, 0}, "A", Provenance::seen), at("s1", {1, 0}, "A", Provenance::seen),
      at("s2", {9, 0}, "B", Provenance::seen), at("s3", {9, 1.5}, "B", Provenance::seen)};
  const auto ch = transfer_domain_threshold(seen);
  EXPECT_EQ(ch.delta, 1.5);
  EXPECT_EQ(ch.f1, 1.0);
}

TEST(DomainThreshold, OneDomainIsAnError) {
  const std::vector<IntentCluster> seen{at("s0", {0}, "A", Provenance::seen),
                                        at("s1", {1}, "A", Provenance::seen)};
  EXPECT_THROW(transfer_domain_threshold(seen), DataError);
}

TEST(LinkDomains, GroupsNearbyCentroids) {
  const std::vector<IntentCluster> novel{at("n0", {0, 0}), at("n1", {20, 0}), at("n2", {0, 1}),
                                         at("n3", {20, 1})};
  const auto d = link_domains(novel, 1.5);
  ASSERT_EQ(d.size(), 2u);
  EXPECT_EQ(d[0].intents.size(), 2u);
  EXPECT_EQ(d[0].intents[1].id, "n2");
  EXPECT_EQ(*d[0].intents[0].domain, "novel-domain-0");
  EXPECT_EQ(link_domains(novel, std::numeric_limits<double>::infinity()).size(), 1u);
  EXPECT_EQ(link_domains({novel[0]}, 0.0).size(), 1u);
  EXPECT_THROW(link_domains({}, 1.0), DataError);
}

TEST(LinkDomains, PartitionsTheNovelClusters) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> g;
  std::vector<IntentCluster> novel;
  for (int i = 0; i < 25; ++i) novel.push_back(at("n" + std::to_string(i), {g(rng), g(rng)}));
  for (double delta : {0.0, 0.5, 1.0, 3.0}) {
    std::multiset<std::string> seen_ids;
    for (const auto& d : link_domains(novel, delta)) {
      EXPECT_FALSE(d.intents.empty());
      for (const auto& i : d.intents) seen_ids.insert(i.id);
    }
    EXPECT_EQ(seen_ids.size(), novel.size());
    EXPECT_EQ(std::set<std::string>(seen_ids.begin(), seen_ids.end()).size(), novel.size());
  }
}

TEST(BuildTaxonomy, SeenThenNovel) {
  const std::vector<IntentCluster> seen{at("s0", {0}, "B", Provenance::seen),
                                        at("s1", {1}, "A", Provenance::seen),
                                        at("s2", {2}, "B", Provenance::seen)};
  const std::vector<IntentCluster> novel{at("n0", {50}), at("n1", {80})};
  const auto tax = build_taxonomy(seen, novel, 5.0);
  EXPECT_EQ(tax.count(Provenance::seen), 2u);
  EXPECT_EQ(tax.count(Provenance::novel), 2u);
  EXPECT_EQ(tax.intent_count(Provenance::novel), 2u);
  EXPECT_EQ(tax.domains[0].id, "A");
  const auto j = to_json(tax, false);
  EXPECT_EQ(j["counts"]["novel_domains"], 2);
  EXPECT_FALSE(j["domains"][0]["intents"][0].contains("centroid"));
  EXPECT_TRUE(to_json(tax, true)["domains"][0]["intents"][0].contains("centroid"));
  EXPECT_EQ(build_taxonomy(seen, {}, 5.0).count(Provenance::novel), 0u);
}

TEST(LinkJointly, NovelNearSeenJoinsItsDomain) {
  const std::vector<IntentCluster> seen{at("s0", {0}, "A", Provenance::seen),
                                        at("s1", {10}, "B", Provenance::seen)};
  const std::vector<IntentCluster> novel{at("n0", {0.5}), at("n1", {40})};
  const auto tax = link_jointly(seen, novel, 1.0);
  EXPECT_EQ(tax.count(Provenance::novel), 1u);
  EXPECT_EQ(tax.domains[0].intents.size(), 2u);
  EXPECT_EQ(*tax.domains[0].intents[1].domain, "A");
}
