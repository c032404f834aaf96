#include "doctest.h"

#include "hstack/core.hpp"

#include <random>

using namespace hstack;

namespace {

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

}  // namespace

TEST_CASE("softmax_weights examples") {
  const Vector w1 = softmax_weights(vec({0.0}));
  CHECK(w1(0) == doctest::Approx(0.5));
  CHECK(w1(1) == doctest::Approx(0.5));

  const Vector w2 = softmax_weights(vec({std::log(2.0), 0.0}));
  CHECK(w2(0) == doctest::Approx(0.5));
  CHECK(w2(1) == doctest::Approx(0.25));
  CHECK(w2(2) == doctest::Approx(0.25));

  const Vector w3 = softmax_weights(vec({1000.0}));
  CHECK(std::isfinite(w3(0)));
  CHECK(std::isfinite(w3(1)));
  CHECK(w3(0) == doctest::Approx(1.0));
  CHECK(w3(1) >= 0.0);
  CHECK(w3(1) < 1e-300);

  const Vector w4 = softmax_weights(vec({-1000.0, -1000.0}));
  CHECK(w4(2) == doctest::Approx(1.0));
}

TEST_CASE("softmax_weights lies on the simplex for |alpha| <= 700") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-700.0, 700.0);
  std::uniform_int_distribution<int> km1(1, 6);
  for (int rep = 0; rep < 2000; ++rep) {
    Vector a(km1(rng));
    for (Eigen::Index k = 0; k < a.size(); ++k) a(k) = u(rng);
    const Vector w = softmax_weights(a);
    REQUIRE(w.allFinite());
    CHECK((w.array() >= 0.0).all());
    CHECK(std::abs(w.sum() - 1.0) < 1e-12);
  }
}

TEST_CASE("softmax_weights matches the naive formula") {
  const Vector a = vec({0.3, -1.2, 2.0});
  const Vector w = softmax_weights(a);
  Vector full(4);
  full << a, 0.0;
  const Vector e = full.array().exp();
  CHECK((w - e / e.sum()).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("log_sum_exp and combine_log_density") {
  CHECK(log_sum_exp(vec({0.0, 0.0})) == doctest::Approx(std::log(2.0)));
  CHECK(log_sum_exp(vec({1000.0, 1000.0})) == doctest::Approx(1000.0 + std::log(2.0)));
  CHECK(log_sum_exp(Vector()) == -std::numeric_limits<double>::infinity());
  const double ninf = -std::numeric_limits<double>::infinity();
  CHECK(log_sum_exp(vec({ninf, ninf})) == ninf);

  // Zero weights drop their component even when its density is -inf.
  CHECK(combine_log_density(vec({1.0, 0.0}), vec({-2.0, ninf})) == doctest::Approx(-2.0));
  CHECK(combine_log_density(vec({0.5, 0.5}), vec({std::log(0.2), std::log(0.6)})) ==
        doctest::Approx(std::log(0.4)));
}

TEST_CASE("is_simplex") {
  Matrix w(2, 3);
  w << 0.2, 0.3, 0.5, 1.0, 0.0, 0.0;
  CHECK(is_simplex(w));
  w(0, 0) = 0.21;
  CHECK_FALSE(is_simplex(w));
  w(0, 0) = -0.1;
  w(0, 2) = 0.8;
  CHECK_FALSE(is_simplex(w));
  CHECK(is_simplex(Matrix::Constant(1, 4, 0.25)));
}

TEST_CASE("rectify_features on x = (1, 2, 3)") {
  Matrix x(3, 1);
  x << 1.0, 2.0, 3.0;
  const FeatureSet fs = rectify_features(x);
  REQUIRE(fs.features.rows() == 3);
  REQUIRE(fs.features.cols() == 2);
  CHECK(fs.medians(0) == doctest::Approx(2.0));
  Matrix expect(3, 2);
  expect << 0.0, 1.0, 0.0, 0.0, 1.0, 0.0;
  CHECK((fs.features - expect).cwiseAbs().maxCoeff() == 0.0);
  CHECK_FALSE(fs.constant_column[0]);
  CHECK_FALSE(fs.constant_column[1]);
}

TEST_CASE("rectified columns have disjoint support and reconstruct x") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> z;
  Matrix x(101, 3);
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    for (Eigen::Index j = 0; j < x.cols(); ++j) x(i, j) = z(rng);
  const FeatureSet fs = rectify_features(x);
  for (Eigen::Index j = 0; j < 3; ++j)
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      const double pos = fs.features(i, 2 * j), neg = fs.features(i, 2 * j + 1);
      CHECK(pos >= 0.0);
      CHECK(neg >= 0.0);
      CHECK(pos * neg == 0.0);
      CHECK(pos - neg == doctest::Approx(x(i, j) - fs.medians(j)));
    }
}

TEST_CASE("rectify_features flags constant columns and reuses training centres") {
  Matrix x(4, 2);
  x << 5.0, 1.0, 5.0, 2.0, 5.0, 3.0, 5.0, 4.0;
  RectifyOptions std_opts;
  std_opts.standardize = true;
  const FeatureSet fs = rectify_features(x, std_opts);
  CHECK(fs.constant_column[0]);
  CHECK(fs.constant_column[1]);
  CHECK_FALSE(fs.constant_column[2]);
  CHECK(fs.standardized);
  CHECK(fs.features.allFinite());

  Matrix xnew(1, 2);
  xnew << 6.0, 10.0;
  RectifyOptions reuse;
  reuse.medians = fs.medians;
  reuse.scales = fs.scales;
  const FeatureSet fnew = rectify_features(xnew, reuse);
  CHECK(fnew.features(0, 0) == doctest::Approx(1.0 / fs.scales(0)));
  CHECK(fnew.features(0, 2) == doctest::Approx((10.0 - fs.medians(1)) / fs.scales(2)));

  RectifyOptions bad;
  bad.medians = Vector::Zero(3);
  CHECK_THROWS_AS(rectify_features(xnew, bad), ValidationError);
}

TEST_CASE("validate reports dimension mismatches with both sizes") {
  const LpdMatrix lpd(Matrix::Zero(10, 2));
  FeatureSet feats;
  feats.features = Matrix::Zero(9, 1);
  try {
    validate(lpd, feats);
    FAIL("expected a ValidationError");
  } catch (const ValidationError& e) {
    CHECK(e.code() == "dimension_mismatch");
    const std::string msg = e.what();
    CHECK(msg.find("10") != std::string::npos);
    CHECK(msg.find("9") != std::string::npos);
  }
}

TEST_CASE("validate reports non-finite entries with their location") {
  Matrix v = Matrix::Zero(4, 3);
  v(2, 1) = std::numeric_limits<double>::infinity();
  try {
    validate_lpd(LpdMatrix(v));
    FAIL("expected a ValidationError");
  } catch (const ValidationError& e) {
    CHECK(e.code() == "non_finite");
    const std::string msg = e.what();
    CHECK(msg.find("3") != std::string::npos);
    CHECK(msg.find("2") != std::string::npos);
  }
  CHECK_THROWS_AS(validate_lpd(LpdMatrix(Matrix(0, 2))), ValidationError);

  FeatureSet feats;
  feats.features = Matrix::Zero(4, 1);
  feats.features(1, 0) = std::nan("");
  CHECK_THROWS_AS(validate(LpdMatrix(Matrix::Zero(4, 2)), feats), ValidationError);
}

TEST_CASE("validate relabels cells and is idempotent") {
  FeatureSet feats = make_cell_features({30, 10, 30, 20, 10});
  CHECK(feats.num_cells() == 3);
  CHECK(feats.cell_labels == std::vector<long>{10, 20, 30});
  CHECK(feats.cells(0) == 2);
  CHECK(feats.cells(1) == 0);

  // Drop the only observation of label 20 so that label disappears.
  FeatureSet sub;
  sub.cells.resize(4);
  sub.cells << feats.cells(0), feats.cells(1), feats.cells(2), feats.cells(4);
  sub.cell_labels = feats.cell_labels;
  const LpdMatrix lpd(Matrix::Zero(4, 2));
  const auto [l1, f1] = validate(lpd, sub);
  CHECK(f1.num_cells() == 2);
  CHECK(f1.cell_labels == std::vector<long>{10, 30});
  CHECK(f1.cells(0) == 1);
  CHECK(f1.cells(1) == 0);

  const auto [l2, f2] = validate(l1, f1);
  CHECK(f2.cell_labels == f1.cell_labels);
  CHECK((f2.cells.array() == f1.cells.array()).all());
  CHECK(l2.values == l1.values);

  sub.cells(0) = 7;
  CHECK_THROWS_AS(validate(lpd, sub), ValidationError);
}

TEST_CASE("validate fills an empty feature set") {
  const LpdMatrix lpd(Matrix::Zero(5, 2));
  const auto [l, f] = validate(lpd, FeatureSet{});
  CHECK(f.n() == 5);
  CHECK(f.num_features() == 0);
  CHECK(make_empty_features(5).n() == 5);
}

TEST_CASE("design_matrix stacks one-hot cells and features") {
  FeatureSet feats = make_cell_features({0, 1, 1});
  feats.features = Matrix(3, 1);
  feats.features << 0.5, -1.0, 2.0;
  const Matrix X = design_matrix(feats);
  Matrix expect(3, 3);
  expect << 1, 0, 0.5, 0, 1, -1.0, 0, 1, 2.0;
  CHECK(X == expect);
}

TEST_CASE("MixtureLikelihood gradient and Hessian match finite differences") {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> z;
  const Eigen::Index n = 6, K = 3;
  Matrix lpd(n, K), eta(n, K - 1);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index k = 0; k < K; ++k) lpd(i, k) = z(rng) - 50.0 * (i == 2);
    for (Eigen::Index k = 0; k + 1 < K; ++k) eta(i, k) = z(rng);
  }
  Vector pi(n);
  for (Eigen::Index i = 0; i < n; ++i) pi(i) = 0.5 + 0.1 * static_cast<double>(i);
  const MixtureLikelihood lik(lpd, pi);

  double direct = 0.0;
  for (Eigen::Index i = 0; i < n; ++i)
    direct += pi(i) * combine_log_density(softmax_weights(Vector(eta.row(i).transpose())),
                                          Vector(lpd.row(i).transpose()));
  CHECK(lik.value(eta) == doctest::Approx(direct).epsilon(1e-12));

  Matrix grad;
  lik.value_and_gradient(eta, grad);
  const double h = 1e-6;
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index k = 0; k + 1 < K; ++k) {
      Matrix up = eta, dn = eta;
      up(i, k) += h;
      dn(i, k) -= h;
      const double fd = (lik.value(up) - lik.value(dn)) / (2 * h);
      CHECK(grad(i, k) == doctest::Approx(fd).epsilon(1e-6));
    }

  for (Eigen::Index i = 0; i < n; ++i) {
    const Matrix H = lik.row_hessian(eta, i);
    for (Eigen::Index k = 0; k + 1 < K; ++k) {
      Matrix up = eta, dn = eta, gu, gd;
      up(i, k) += h;
      dn(i, k) -= h;
      lik.value_and_gradient(up, gu);
      lik.value_and_gradient(dn, gd);
      for (Eigen::Index l = 0; l + 1 < K; ++l)
        CHECK(H(l, k) == doctest::Approx((gu(i, l) - gd(i, l)) / (2 * h)).epsilon(1e-5).scale(1e-8));
    }
  }
}

TEST_CASE("stream_seed separates streams") {
  CHECK(stream_seed(1, 0) != stream_seed(1, 1));
  CHECK(stream_seed(1, 0) != stream_seed(2, 0));
  CHECK(stream_seed(5, 3) == stream_seed(5, 3));
}
