#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

#include "nid/hier_cluster.hpp"
#include "oracles.hpp"

using namespace nid;
using namespace nid::cluster;

namespace {

Matrix points(std::initializer_list<std::vector<double>> rows) {
  Matrix m;
  for (const auto& r : rows) m.append_row(r);
  return m;
}

Matrix random_points(std::size_t n, std::size_t dim, std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  Matrix m(n, dim);
  for (double& v : m.storage()) v = g(rng);
  return m;
}

EmbeddingSet line_set(std::vector<double> xs) {
  EmbeddingSet s;
  s.matrix = Matrix(0, 1);
  for (std::size_t i = 0; i < xs.size(); ++i) {
    s.ids.push_back("p" + std::to_string(i));
    s.matrix.append_row(std::vector<double>{xs[i]});
  }
  return s;
}

}  // namespace

TEST(Distances, Examples) {
  const auto dm = pairwise_distances(points({{0, 0}, {3, 4}}));
  EXPECT_EQ(dm(0, 1), 5.0);
  EXPECT_EQ(dm(1, 0), 5.0);
  EXPECT_EQ(dm(1, 1), 0.0);
  EXPECT_EQ(pairwise_distances(points({{2, 2}, {2, 2}}))(0, 1), 0.0);
  const auto line = pairwise_distances(points({{0}, {1}, {10}}));
  EXPECT_EQ(line(0, 1), 1.0);
  EXPECT_EQ(line(0, 2), 10.0);
  EXPECT_EQ(line(1, 2), 9.0);
  EXPECT_THROW(pairwise_distances(line_set({1.0})), DataError);
}

TEST(Distances, ThreadCountDoesNotMatter) {
  std::mt19937_64 rng(1);
  const auto p = random_points(300, 5, rng);
  const auto a = pairwise_distances(p, 1);
  const auto b = pairwise_distances(p, 4);
  EXPECT_TRUE(std::equal(a.condensed().begin(), a.condensed().end(), b.condensed().begin()));
}

TEST(Linkage, ThreePointsOnALine) {
  const auto d = complete_linkage(pairwise_distances(points({{0}, {1}, {10}})));
  ASSERT_EQ(d.merges.size(), 2u);
  EXPECT_EQ(d.merges[0], (Merge{0, 1, 1.0}));
  EXPECT_EQ(d.merges[1], (Merge{2, 3, 10.0}));
}

TEST(Linkage, TwoPoints) {
  const auto d = complete_linkage(pairwise_distances(points({{0, 0}, {0, 2}})));
  ASSERT_EQ(d.merges.size(), 1u);
  EXPECT_EQ(d.merges[0].height, 2.0);
  EXPECT_THROW(complete_linkage(DistanceMatrix(1)), DataError);
}

TEST(Linkage, MatchesBruteForce) {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 2 + rng() % 40;
    const auto dm = pairwise_distances(random_points(n, 3, rng));
    const auto fast = complete_linkage(dm);
    EXPECT_EQ(fast.merges, oracle::brute_force_linkage(dm)) << "n=" << n;
  }
}

TEST(Linkage, TiesFollowIdOrder) {
  // All four points equidistant: merges pair the smallest ids first.
  DistanceMatrix dm(4, 1.0);
  const auto d = complete_linkage(dm);
  EXPECT_EQ(d.merges[0], (Merge{0, 1, 1.0}));
  EXPECT_EQ(d.merges, oracle::brute_force_linkage(dm));
}

TEST(Linkage, HeightsNonDecreasing) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    const auto d = complete_linkage(pairwise_distances(random_points(50, 4, rng)));
    for (std::size_t i = 1; i < d.merges.size(); ++i) {
      EXPECT_LE(d.merges[i - 1].height, d.merges[i].height);
    }
  }
}

TEST(Cut, Examples) {
  const auto d = complete_linkage(pairwise_distances(points({{0}, {1}, {10}})));
  const auto c = cut(d, 5.0);
  EXPECT_EQ(c.k, 2u);
  EXPECT_EQ(c.assignment, (std::vector<std::size_t>{0, 0, 1}));
  EXPECT_EQ(cut(d, 0.0).k, 3u);
  EXPECT_EQ(cut(d, std::numeric_limits<double>::infinity()).k, 1u);
  EXPECT_EQ(cut(d, 1.0).k, 2u);  // a merge at exactly delta is applied
  EXPECT_THROW(cut(d, -1.0), ConfigError);
}

TEST(Cut, MonotoneInThreshold) {
  std::mt19937_64 rng(4);
  const auto d = complete_linkage(pairwise_distances(random_points(60, 3, rng)));
  std::size_t prev = 61;
  for (double delta = 0.0; delta < 8.0; delta += 0.25) {
    const auto c = cut(d, delta);
    EXPECT_LE(c.k, prev);
    prev = c.k;
  }
}

TEST(Cut, ClustersRespectDiameter) {
  std::mt19937_64 rng(5);
  const auto p = random_points(40, 2, rng);
  const auto dm = pairwise_distances(p);
  const auto d = complete_linkage(dm);
  for (double delta : {0.5, 1.0, 2.0}) {
    const auto c = cut(d, delta);
    for (std::size_t i = 0; i < c.size(); ++i) {
      for (std::size_t j = i + 1; j < c.size(); ++j) {
        if (c.assignment[i] == c.assignment[j]) {
          EXPECT_LE(dm(i, j), delta);
        }
      }
    }
  }
}

TEST(PairwiseF1, Examples) {
  // {a,a,b},{b}: TP 1, FP 2, FN 1.
  const std::vector<std::size_t> two{0, 0, 0, 1};
  const std::vector<std::string> abab{"a", "a", "b", "b"};
  EXPECT_EQ(pairwise_f1<std::string>(two, abab), 0.4);
  const std::vector<std::size_t> pred{0, 0, 1, 1, 1};
  const std::vector<std::string> truth{"a", "a", "a", "b", "b"};
  // TP 2, predicted 4, truth 4.
  EXPECT_DOUBLE_EQ(pairwise_f1<std::string>(pred, truth), 0.5);
  const std::vector<std::size_t> singletons{0, 1, 2, 3, 4};
  EXPECT_EQ(pairwise_f1<std::string>(singletons, truth), 0.0);
  const std::vector<std::size_t> mixed{0, 1, 0, 1};
  const std::vector<int> labels{0, 0, 1, 1};
  EXPECT_EQ(pairwise_f1<int>(mixed, labels), 0.0);
  const std::vector<std::size_t> merged{0, 0, 0, 0};
  // TP 2, predicted 6, truth 2.
  EXPECT_EQ(pairwise_f1<int>(merged, labels), 0.5);
}

TEST(PairwiseF1, OneExactlyForMatchingPartitions) {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::size_t> a(12);
    std::vector<int> b(12);
    for (auto& v : a) v = rng() % 3;
    for (std::size_t i = 0; i < a.size(); ++i) b[i] = static_cast<int>(a[i]) * 7 + 1;  // relabeled
    if (std::set<std::size_t>(a.begin(), a.end()).size() == a.size()) continue;
    EXPECT_EQ(pairwise_f1<int>(a, b), 1.0);
    b[rng() % 12] = 99;  // perturb
    const double f = pairwise_f1<int>(a, b);
    const bool same = canonical_clustering(a).assignment ==
                      canonical_clustering(std::vector<std::size_t>(b.begin(), b.end())).assignment;
    if (!same) {
      EXPECT_LT(f, 1.0);
    }
  }
}

TEST(BestCut, TransferOnTwoGroups) {
  // Groups {0, 0.5} and {5, 6}: best cut sits at the larger within-group height.
  const std::vector<std::string> labels{"a", "a", "b", "b"};
  const auto ch = transfer_threshold<std::string>(points({{0}, {0.5}, {5}, {6}}), labels);
  EXPECT_EQ(ch.delta, 1.0);
  EXPECT_EQ(ch.f1, 1.0);
  EXPECT_EQ(ch.clusters, 2u);
}

TEST(BestCut, TiesKeepSmallestThreshold) {
  const std::vector<std::string> labels{"a", "b", "c"};
  // Every non-zero cut merges different labels; F1 is 0 throughout, so delta 0 wins.
  const auto ch = transfer_threshold<std::string>(points({{0}, {1}, {3}}), labels);
  EXPECT_EQ(ch.delta, 0.0);
}

TEST(BestCut, SingleLabelIsAnError) {
  const std::vector<std::string> labels{"a", "a"};
  EXPECT_THROW(transfer_threshold<std::string>(points({{0}, {1}}), labels), DataError);
}

TEST(Constraints, EditValues) {
  const auto dm = pairwise_distances(points({{0}, {1}, {7}}));
  const std::vector<std::string> ids{"x", "y", "z"};
  ConstraintSet cs;
  cs.must_link = {{"x", "z"}};
  cs.cannot_link = {{"y", "x"}};
  const auto edited = apply_constraints(dm, cs, ids);
  EXPECT_EQ(edited(0, 2), 0.0);
  EXPECT_EQ(edited(2, 0), 0.0);
  EXPECT_EQ(edited(0, 1), 70.0);
  EXPECT_EQ(edited(1, 2), 6.0);
  EXPECT_EQ(apply_constraints(DistanceMatrix(2, 0.0), {{}, {{"x", "y"}}},
                              std::vector<std::string>{"x", "y"})(0, 1),
            1.0);
}

TEST(Constraints, Conflicts) {
  const std::vector<std::string> ids{"a", "b", "c"};
  EXPECT_THROW(validate_constraints({{{"a", "b"}}, {{"b", "a"}}}, ids), DataError);
  EXPECT_THROW(validate_constraints({{{"a", "b"}, {"b", "c"}}, {{"a", "c"}}}, ids), DataError);
  EXPECT_THROW(validate_constraints({{{"a", "a"}}, {}}, ids), DataError);
  EXPECT_THROW(validate_constraints({{{"a", "q"}}, {}}, ids), DataError);
  EXPECT_NO_THROW(validate_constraints({{{"a", "b"}}, {{"a", "c"}}}, ids));
}

TEST(Constraints, RestrictDropsUnknownIds) {
  const std::vector<std::string> ids{"a", "b"};
  const ConstraintSet cs{{{"a", "b"}, {"a", "zz"}}, {{"zz", "b"}}};
  const auto r = restrict_to(cs, ids);
  EXPECT_EQ(r.must_link.size(), 1u);
  EXPECT_TRUE(r.cannot_link.empty());
}

TEST(ClusterNovel, ConstraintsChangeTheCut) {
  const auto set = line_set({0, 1, 2, 10});
  EXPECT_EQ(cluster_novel(set, 2.0).k, 2u);
  ConstraintSet cl{{}, {{"p0", "p2"}}};
  // p0 and p2 can no longer share a cluster.
  const auto split = cluster_novel(set, 2.0, &cl);
  EXPECT_NE(split.assignment[0], split.assignment[2]);
  ConstraintSet ml{{{"p2", "p3"}}, {}};
  const auto joined = cluster_novel(set, 2.0, &ml);
  EXPECT_EQ(joined.assignment[2], joined.assignment[3]);
  ConstraintSet outside{{{"p0", "other"}}, {}};
  EXPECT_EQ(cluster_novel(set, 2.0, &outside).assignment, cluster_novel(set, 2.0).assignment);
}

TEST(ClusterNovel, DegenerateSizes) {
  EXPECT_THROW(cluster_novel(EmbeddingSet{}, 1.0), DataError);
  const auto one = cluster_novel(line_set({3.0}), 1.0);
  EXPECT_EQ(one.k, 1u);
  EXPECT_EQ(one.assignment, std::vector<std::size_t>{0});
}

TEST(Json, RoundTrips) {
  const std::vector<std::string> ids{"u", "v", "w"};
  const Clustering c{{0, 1, 0}, 2};
  EXPECT_EQ(clustering_from_json(to_json(c, ids), ids).assignment, c.assignment);
  const ConstraintSet cs{{{"u", "v"}}, {{"v", "w"}}};
  const auto back = constraints_from_json(to_json(cs));
  EXPECT_EQ(back.must_link, cs.must_link);
  EXPECT_EQ(back.cannot_link, cs.cannot_link);
  EXPECT_THROW(constraints_from_json(nlohmann::json::parse(R"({"must_link":[["a"]]})")), DataError);
}
