#include "helpers.hpp"

#include "usdrl/error.hpp"
#include "usdrl/fdloss.hpp"
#include "usdrl/gradcheck.hpp"

#include <doctest.h>

#include <sstream>

using namespace usdrl;
using testing::from_rows;
using testing::gaussian;
using testing::rel_diff;
using testing::to_nested;

namespace {

std::vector<oracle::Mat> nested(const std::vector<Matrix>& views) {
  std::vector<oracle::Mat> out;
  for (const auto& v : views) out.push_back(to_nested(v));
  return out;
}

std::vector<Matrix> random_views(int k, int n, int d, std::uint64_t seed, double scale = 1.0) {
  std::vector<Matrix> v;
  for (int a = 0; a < k; ++a) v.push_back(gaussian(n, d, seed * 31 + std::uint64_t(a), scale));
  return v;
}

oracle::Weights weights_of(const LossConfig& c) {
  oracle::Weights w;
  w.kappa = c.kappa;
  w.eta = c.eta;
  w.mu = c.mu;
  w.lambda = c.lambda;
  w.gamma = c.gamma;
  w.eps = c.epsilon;
  w.tau = c.tau;
  w.mse = c.similarity == "mse";
  return w;
}

std::vector<double> addends(const DomainLoss& d) {
  return {d.similarity, d.invariance, d.variance, d.autocov, d.xcorr, d.total};
}

Matrix permute_rows(const Matrix& m, const std::vector<int>& perm) {
  Matrix out(m.rows(), m.cols());
  for (std::size_t i = 0; i < perm.size(); ++i) out.row(Eigen::Index(i)) = m.row(perm[i]);
  return out;
}

// Four samples, two orthogonal zero-mean columns of population std s.
Matrix hadamard_batch(double s) { return s * from_rows({{1, 1}, {1, -1}, {-1, 1}, {-1, -1}}); }

}  // namespace

TEST_SUITE("fdloss") {
  TEST_CASE("standardize_columns examples") {
    CHECK(standardize_columns(from_rows({{1}, {3}})).isApprox(from_rows({{-1}, {1}}), 1e-7));
    CHECK(standardize_columns(Matrix::Constant(5, 2, 3.0)).isZero(0.0));
    const Matrix z = standardize_columns(gaussian(9, 3, 1));
    CHECK(standardize_columns(z).isApprox(z, 1e-6));
    CHECK(z.colwise().mean().norm() < 1e-12);
    CHECK_THROWS_AS(standardize_columns(Matrix::Ones(1, 3)), BatchSizeError);
  }

  TEST_CASE("consistency examples") {
    LossConfig c;
    c.kappa = 1.0;
    c.eta = 1.0;
    const Matrix z = gaussian(6, 3, 2);
    auto same = fd_loss({z, z}, c);
    CHECK(same.similarity == doctest::Approx(0.0));
    CHECK(same.invariance == doctest::Approx(0.0).epsilon(1e-6));

    // Z_b = -Z_a: each ordered pair contributes 2D, and (1/K) of two pairs is 2D.
    auto anti = fd_loss({z, Matrix(-z)}, c);
    CHECK(anti.invariance == doctest::Approx(2.0 * 3).epsilon(1e-6));

    auto tiny = fd_loss({from_rows({{0}, {2}}), from_rows({{0}, {2}})}, c);
    CHECK(tiny.similarity == 0.0);
    CHECK(tiny.invariance == doctest::Approx(0.0).epsilon(1e-6));
  }

  TEST_CASE("variance term examples") {
    CHECK(variance_term(Matrix::Zero(4, 3), 1.0, 0.0) == doctest::Approx(1.0));
    CHECK(variance_term(from_rows({{-2}, {2}}), 1.0, 0.0) == doctest::Approx(0.0));
    CHECK(variance_term(from_rows({{0, 0}, {1, 2}}), 1.0, 0.0) == doctest::Approx(0.25));
  }

  TEST_CASE("autocov term examples") {
    CHECK(autocov_term(hadamard_batch(1.0)) == doctest::Approx(0.0));
    CHECK(autocov_term(from_rows({{1, 1}, {-1, -1}})) == doctest::Approx(4.0));
    Matrix single = Matrix::Zero(5, 3);
    single.col(1) = gaussian(5, 1, 3);
    CHECK(autocov_term(single) == doctest::Approx(0.0));
  }

  TEST_CASE("xcorr term examples") {
    const Matrix a = hadamard_batch(1.0);
    CHECK(xcorr_term(a, a) == doctest::Approx(0.0));
    Matrix swapped(4, 2);
    swapped.col(0) = a.col(1);
    swapped.col(1) = a.col(0);
    CHECK(xcorr_term(a, swapped) == doctest::Approx(2.0).epsilon(1e-6));
    CHECK(xcorr_term(gaussian(5, 1, 4), gaussian(5, 1, 5)) == 0.0);
    CHECK_THROWS_AS(xcorr_term(a, Matrix::Ones(4, 3)), ShapeError);
  }

  TEST_CASE("separability examples") {
    LossConfig c;
    const Matrix a = hadamard_batch(2.0);
    auto zero = fd_loss({a, a}, c);
    CHECK(zero.variance == 0.0);
    CHECK(zero.autocov == doctest::Approx(0.0));
    CHECK(zero.xcorr == doctest::Approx(0.0));

    const auto views = random_views(3, 7, 4, 6);
    LossConfig no_xc = c;
    no_xc.lambda = 0.0;
    double expected = 0;
    for (const auto& v : views) expected += c.mu * variance_term(v, c.gamma, c.epsilon) + autocov_term(v);
    auto d = fd_loss(views, no_xc);
    CHECK(d.variance + d.autocov == doctest::Approx(expected).epsilon(1e-12));
    CHECK(d.xcorr == 0.0);

    const double pairs = xcorr_term(views[0], views[1]) + xcorr_term(views[0], views[2]) + xcorr_term(views[1], views[2]);
    CHECK(fd_loss(views, c).xcorr == doctest::Approx(c.lambda * pairs).epsilon(1e-12));
  }

  TEST_CASE("collapsed batch is penalized by invariance and variance") {
    LossConfig c;
    for (int k : {2, 3}) {
      CAPTURE(k);
      std::vector<Matrix> views(std::size_t(k), gaussian(1, 5, 7).replicate(6, 1));
      const auto d = fd_loss(views, c);
      const double oracle_value = oracle::fd_loss(nested(views), weights_of(c));
      const double closed_form = c.eta * (k - 1) * 5 + k * c.mu * (c.gamma - std::sqrt(c.epsilon));
      CHECK(d.total == doctest::Approx(oracle_value).epsilon(1e-9));
      CHECK(d.total == doctest::Approx(closed_form).epsilon(1e-9));
      CHECK(d.similarity == doctest::Approx(0.0));
      CHECK(d.invariance == doctest::Approx(c.eta * (k - 1) * 5));
      CHECK(d.total > 0.0);
    }
  }

  TEST_CASE("all-zero weights give zero loss") {
    LossConfig c;
    c.kappa = c.eta = c.mu = c.lambda = 0.0;
    const auto d = fd_loss(random_views(2, 5, 3, 8), c);
    // The auto-covariance term carries no weight of its own.
    CHECK(d.total == doctest::Approx(d.autocov));
    CHECK(d.similarity == 0.0);
    CHECK(d.invariance == 0.0);
    CHECK(d.variance == 0.0);
    CHECK(d.xcorr == 0.0);
    const Matrix a = hadamard_batch(1.0);
    CHECK(fd_loss({a, a}, c).total == doctest::Approx(0.0));
  }

  TEST_CASE("every term matches the oracle on random batches") {
    for (int trial = 0; trial < 20; ++trial) {
      CAPTURE(trial);
      LossConfig c;
      c.similarity = trial % 2 == 0 ? "mse" : "l2";
      const int k = 2 + trial % 3;
      const auto views = random_views(k, 3 + trial % 6, 1 + trial % 5, 100 + std::uint64_t(trial), 0.2 + 0.3 * (trial % 4));
      const auto nv = nested(views);
      const auto w = weights_of(c);
      const auto d = fd_loss(views, c);
      CHECK(rel_diff(d.similarity, c.kappa * oracle::similarity(nv, w.mse)) < 1e-10);
      CHECK(rel_diff(d.invariance, c.eta * oracle::invariance(nv)) < 1e-9);
      double var = 0, ac = 0, xc = 0;
      for (std::size_t a = 0; a < nv.size(); ++a) {
        var += c.mu * oracle::variance(nv[a], c.gamma, c.epsilon);
        ac += oracle::autocov(nv[a]);
        for (std::size_t b = a + 1; b < nv.size(); ++b) xc += c.lambda * oracle::xcorr(nv[a], nv[b]);
      }
      CHECK(rel_diff(d.variance, var) < 1e-10);
      CHECK(rel_diff(d.autocov, ac) < 1e-10);
      CHECK(rel_diff(d.xcorr, xc) < 1e-9);
      CHECK(rel_diff(d.total, oracle::fd_loss(nv, w)) < 1e-10);
    }
  }

  TEST_CASE("similarity variants differ as defined") {
    // One sample, one dimension: z_a = 0, z_b = 2, mean 1.
    // mse: ((0-1)^2 + (2-1)^2) / 2 = 1. l2: (|0-1| + |2-1|) / 2 = 1.
    // Two dimensions with offset 1 each: mse stays 1, l2 becomes sqrt(2).
    LossConfig c;
    c.kappa = 1.0;
    c.eta = c.mu = c.lambda = 0.0;
    const Matrix za = from_rows({{0, 0}, {5, 5}}), zb = from_rows({{2, 2}, {7, 7}});
    CHECK(fd_loss({za, zb}, c).similarity == doctest::Approx(1.0));
    c.similarity = "l2";
    CHECK(fd_loss({za, zb}, c).similarity == doctest::Approx(std::sqrt(2.0)));
    c.similarity = "cosine";
    CHECK_THROWS_AS(fd_loss({za, zb}, c), ConfigError);
  }

  TEST_CASE("total loss composes the domains") {
    LossConfig c;
    const auto inst = random_views(2, 6, 4, 9), spat = random_views(2, 6, 3, 10), temp = random_views(2, 6, 3, 11);
    const auto b = total_loss(inst, spat, temp, c);
    CHECK(rel_diff(b.total, b.instance.total + c.tau * (b.spatial.total + b.temporal.total)) < 1e-12);
    for (const auto* d : {&b.instance, &b.spatial, &b.temporal}) {
      CHECK(rel_diff(d->total, d->similarity + d->invariance + d->variance + d->autocov + d->xcorr) < 1e-12);
    }
    CHECK(rel_diff(b.total, oracle::total_loss(nested(inst), nested(spat), nested(temp), weights_of(c))) < 1e-10);

    LossConfig no_tau = c;
    no_tau.tau = 0.0;
    CHECK(total_loss(inst, spat, temp, no_tau).total == doctest::Approx(b.instance.total).epsilon(1e-12));
    const auto sym = total_loss(inst, spat, spat, c);
    CHECK(sym.spatial.total == sym.temporal.total);
    CHECK(&b[Domain::kSpatial] == &b.spatial);

    CHECK_THROWS_AS(total_loss(inst, random_views(3, 6, 3, 12), temp, c), ArgumentError);
    CHECK_THROWS_AS(total_loss(inst, random_views(2, 5, 3, 12), temp, c), ShapeError);
  }

  TEST_CASE("input errors") {
    LossConfig c;
    CHECK_THROWS_AS(fd_loss({gaussian(4, 2, 1)}, c), ArgumentError);
    CHECK_THROWS_AS(fd_loss({gaussian(4, 2, 1), gaussian(4, 3, 2)}, c), ShapeError);
    CHECK_THROWS_AS(fd_loss({gaussian(1, 2, 1), gaussian(1, 2, 2)}, c), BatchSizeError);
  }

  TEST_CASE("every term is non-negative on arbitrary inputs") {
    for (int trial = 0; trial < 50; ++trial) {
      LossConfig c;
      c.similarity = trial % 2 ? "l2" : "mse";
      const auto views = random_views(2 + trial % 2, 2 + trial % 7, 1 + trial % 4, 500 + std::uint64_t(trial),
                                      trial % 5 == 0 ? 1e-3 : 3.0);
      for (double v : addends(fd_loss(views, c))) REQUIRE(v >= 0.0);
    }
  }

  TEST_CASE("jointly permuting batch rows leaves every term unchanged") {
    LossConfig c;
    auto views = random_views(3, 8, 4, 13);
    const std::vector<int> perm{3, 7, 0, 5, 1, 6, 2, 4};
    std::vector<Matrix> shuffled;
    for (const auto& v : views) shuffled.push_back(permute_rows(v, perm));
    const auto a = addends(fd_loss(views, c)), b = addends(fd_loss(shuffled, c));
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(rel_diff(a[i], b[i]) < 1e-6);
  }

  TEST_CASE("invariance and xcorr ignore per-column affine maps") {
    LossConfig c;
    auto views = random_views(2, 10, 3, 14);
    const auto before = fd_loss(views, c);
    const double xc = xcorr_term(views[0], views[1]);
    RowVector scale(3), shift(3);
    scale << 0.5, 3.0, 11.0;
    shift << -2.0, 0.25, 7.0;
    views[1] = (views[1].array().rowwise() * scale.array()).rowwise() + shift.array();
    const auto after = fd_loss(views, c);
    CHECK(rel_diff(before.invariance, after.invariance) < 1e-6);
    CHECK(rel_diff(xc, xcorr_term(views[0], views[1])) < 1e-6);
  }

  TEST_CASE("zeroing a weight removes exactly its addend") {
    const auto views = random_views(2, 7, 3, 15);
    const LossConfig base;
    const auto full = fd_loss(views, base);
    struct Case {
      double LossConfig::*weight;
      double DomainLoss::*term;
    };
    for (const Case& k : {Case{&LossConfig::kappa, &DomainLoss::similarity}, Case{&LossConfig::eta, &DomainLoss::invariance},
                          Case{&LossConfig::mu, &DomainLoss::variance}, Case{&LossConfig::lambda, &DomainLoss::xcorr}}) {
      LossConfig c = base;
      c.*(k.weight) = 0.0;
      const auto d = fd_loss(views, c);
      CHECK(d.*(k.term) == 0.0);
      CHECK(rel_diff(d.total, full.total - full.*(k.term)) < 1e-12);
    }
  }

  TEST_CASE("orthonormal identical views reach zero loss") {
    LossConfig c;
    const Matrix a = hadamard_batch(1.0);
    const auto inst = std::vector<Matrix>{a, a};
    const auto b = total_loss(inst, inst, inst, c);
    CHECK(b.total == doctest::Approx(0.0).epsilon(1e-6));
    CHECK(b.total < 1e-6);
  }

  TEST_CASE("loss records are line oriented") {
    LossConfig c;
    const auto views = random_views(2, 4, 2, 16);
    std::ostringstream out;
    write_loss_record(out, 12, total_loss(views, views, views, c));
    std::istringstream in(out.str());
    std::string line;
    int n = 0;
    while (std::getline(in, line)) {
      CHECK(line.rfind("step=12 domain=", 0) == 0);
      CHECK(line.find(" term=") != std::string::npos);
      CHECK(line.find(" value=") != std::string::npos);
      ++n;
    }
    CHECK(n >= 3 * 6);
  }

  TEST_CASE("loss gradients match finite differences") {
    const auto r = gradient_check("total_loss");
    INFO(r.to_string());
    CHECK(r.passed());
  }
}
