#include "doctest.h"

#include "kafuse/eval.hpp"
#include "oracles.hpp"

#include <random>

using namespace kafuse;

namespace {

LabelVector labels(std::initializer_list<int> v) {
  LabelVector y(static_cast<Index>(v.size()));
  Index i = 0;
  for (int e : v) y(i++) = e;
  return y;
}

std::vector<int> to_std(const LabelVector& y) { return {y.data(), y.data() + y.size()}; }

Matrix blobs(Index per, std::uint64_t seed, LabelVector* truth) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0, 0.1);
  const double centres[3][2] = {{0, 0}, {5, 0}, {0, 5}};
  Matrix x(2, 3 * per);
  truth->resize(3 * per);
  for (Index c = 0; c < 3; ++c)
    for (Index i = 0; i < per; ++i) {
      const Index col = c * per + i;
      x(0, col) = centres[c][0] + nd(rng);
      x(1, col) = centres[c][1] + nd(rng);
      (*truth)(col) = static_cast<int>(c) + 1;
    }
  return x;
}

}  // namespace

TEST_CASE("accuracy examples") {
  CHECK(accuracy(labels({1, 1, 2, 2}), labels({2, 2, 1, 1})) == 1.0);
  CHECK(accuracy(labels({1, 1, 2, 2}), labels({1, 2, 1, 2})) == 0.5);
  CHECK(accuracy(labels({1, 2, 3}), labels({1, 1, 1})) == doctest::Approx(1.0 / 3.0));
  CHECK(accuracy(labels({1, 1, 1}), labels({1, 2, 3})) == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("nmi examples") {
  CHECK(nmi(labels({1, 1, 2, 2}), labels({7, 7, 3, 3})) == 1.0);
  CHECK(nmi(labels({1, 1, 2, 2}), labels({1, 2, 1, 2})) == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(nmi(labels({1, 1, 1}), labels({1, 2, 3})) == 0.0);
  CHECK(nmi(labels({4, 4}), labels({9, 9})) == 1.0);
}

TEST_CASE("accuracy and nmi agree with brute force over all small partitions") {
  for (int n : {3, 4, 5}) {
    const auto parts = oracle::partitions(n);
    for (const auto& a : parts)
      for (const auto& b : parts) {
        LabelVector ya = Eigen::Map<const LabelVector>(a.data(), n);
        LabelVector yb = Eigen::Map<const LabelVector>(b.data(), n);
        CHECK(accuracy(ya, yb) == doctest::Approx(oracle::brute_accuracy(a, b)).epsilon(1e-15));
        CHECK(nmi(ya, yb) == doctest::Approx(oracle::brute_nmi(a, b)).epsilon(1e-12));
        CHECK(nmi(ya, yb) == doctest::Approx(nmi(yb, ya)).epsilon(1e-15));
      }
  }
}

TEST_CASE("label vectors of different length are rejected") {
  CHECK_THROWS_AS(accuracy(labels({1, 2}), labels({1, 2, 3})), InputError);
  CHECK_THROWS_AS(nmi(labels({1, 2}), labels({1})), InputError);
}

TEST_CASE("assignment on a small matrix") {
  Matrix w(3, 3);
  w << 1, 9, 2,  //
      8, 1, 1,   //
      2, 2, 7;
  const auto m = max_weight_assignment(w);
  CHECK(m == std::vector<Index>{1, 0, 2});
}

TEST_CASE("kmeans recovers separated blobs") {
  LabelVector truth;
  const Matrix x = blobs(20, 1, &truth);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto res = kmeans(x, 3, seed);
    CHECK(accuracy(truth, res.assignment) == 1.0);
    CHECK(res.assignment.minCoeff() == 1);
    CHECK(res.assignment.maxCoeff() == 3);
  }
  CHECK(kmeans(x, 3, 4).assignment == kmeans(x, 3, 4).assignment);
}

TEST_CASE("kmeans with as many clusters as points") {
  Matrix x(1, 4);
  x << 0, 0.1, 0.2, 1;
  const auto res = kmeans(x, 4, 0);
  std::vector<int> seen = to_std(res.assignment);
  std::sort(seen.begin(), seen.end());
  CHECK(seen == std::vector<int>{1, 2, 3, 4});
  CHECK_THROWS_AS(kmeans(x, 5, 0), ConfigError);
  CHECK_THROWS_AS(kmeans(x, 0, 0), ConfigError);
}

TEST_CASE("selected feature count") {
  CHECK(selected_count(10, 0.3) == 3);
  CHECK(selected_count(10, 1.0) == 10);
  CHECK(selected_count(10, 0.01) == 1);
  CHECK_THROWS_AS(selected_count(10, 0.0), ConfigError);
  CHECK_THROWS_AS(selected_count(10, 1.5), ConfigError);
}

TEST_CASE("evaluate_selection") {
  LabelVector truth;
  const Matrix x = blobs(10, 2, &truth);
  MultiViewDataset ds;
  Matrix v0(2, 30);
  v0.row(0) = x.row(0);
  v0.row(1) = Eigen::RowVectorXd::Random(30) * 0.01;
  ds.views.push_back({"a", v0});
  ds.views.push_back({"b", x.row(1)});
  ds.labels = truth;
  ds.class_count = 3;
  const FeatureRanking ranking{{0, 0, 1.0}, {1, 0, 0.9}, {0, 1, 0.1}};

  const auto one = evaluate_selection(ds, ranking, 0.7, 1, 0);
  CHECK(one.acc_std == 0.0);
  CHECK(one.nmi_std == 0.0);
  CHECK(one.selected.size() == 2);
  CHECK(one.acc_mean == 100.0);

  const auto serial = evaluate_selection(ds, ranking, 1.0, 6, 3, 1);
  const auto threaded = evaluate_selection(ds, ranking, 1.0, 6, 3, 4);
  CHECK(serial.acc_mean == threaded.acc_mean);
  CHECK(serial.nmi_std == threaded.nmi_std);

  CHECK_THROWS_AS(evaluate_selection(ds, ranking, 0.5, 0, 0), ConfigError);
  CHECK_THROWS_AS(evaluate_selection(ds, FeatureRanking{{0, 0, 1.0}}, 0.5, 1, 0), ConfigError);
  MultiViewDataset unlabeled = ds;
  unlabeled.labels.reset();
  CHECK_THROWS_AS(evaluate_selection(unlabeled, ranking, 0.5, 1, 0), InputError);
}

TEST_CASE("stack_features keeps ranking order") {
  MultiViewDataset ds;
  ds.views.push_back({"a", Matrix::Random(2, 5)});
  ds.views.push_back({"b", Matrix::Random(3, 5)});
  const Matrix s = stack_features(ds, {{1, 2, 0}, {0, 0, 0}});
  CHECK(s.row(0) == ds.views[1].data.row(2));
  CHECK(s.row(1) == ds.views[0].data.row(0));
}
