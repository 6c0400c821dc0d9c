#include <doctest.h>

#include <Eigen/Eigenvalues>
#include <Eigen/QR>
#include <random>

#include "gridpost/errors.hpp"
#include "gridpost/pca.hpp"
#include "support.hpp"

using namespace gridpost;

namespace {

// sin of the largest principal angle between the row spaces of a and b
double subspace_sin(const RowMat<double>& a, const RowMat<double>& b) {
  const Eigen::MatrixXd qa = a.transpose(), qb = b.transpose();
  const Eigen::MatrixXd resid = qa - qb * (qb.transpose() * qa);
  return Eigen::JacobiSVD<Eigen::MatrixXd>(resid).singularValues()(0);
}

RowMat<double> random_matrix(Index n, Index d, std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  RowMat<double> m(n, d);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
  return m;
}

}  // namespace

TEST_CASE("pca_fit matches a frozen covariance eigendecomposition") {
  RowMat<double> x(6, 4);
  x << 2, 0, 1, 5, 1, 3, -2, 4, 0, 1, 1, 1, 4, -1, 2, 0, 3, 2, 0, 2, -1, 1, 3, 3;
  const PcaModel m = pca_fit(x, 3);
  const double eig[] = {4.86405432702293, 3.202247027985645, 1.7145320958007302, 0.19138877141291993};
  const double vec[3][4] = {{-0.3978933160234696, 0.48642521017651974, -0.4725412400991844, 0.6178804094435266},
                            {0.769822972320605, 0.13870033439538282, -0.6171217998920289, -0.08541365595793653},
                            {0.3634388123930598, -0.4524169652855723, 0.24415398349669934, 0.7769298240580094}};
  for (int k = 0; k < 3; ++k) {
    CHECK(m.eigenvalues[k] == doctest::Approx(eig[k]).epsilon(1e-12));
    for (int j = 0; j < 4; ++j) CHECK(m.components(k, j) == doctest::Approx(vec[k][j]).epsilon(1e-8));
  }
  CHECK(m.tail_variance() == doctest::Approx(eig[3]).epsilon(1e-10));
  CHECK(pca_reconstruction_mse(m, x) == doctest::Approx(eig[3] / 4).epsilon(1e-10));
  CHECK(m.mean[0] == doctest::Approx(1.5));
}

TEST_CASE("pca_fit against a dense eigen-solver on random matrices") {
  std::mt19937_64 rng(30);
  for (int rep = 0; rep < 20; ++rep) {
    const RowMat<double> x = random_matrix(8, 6, rng);
    const Eigen::MatrixXd c = x.rowwise() - x.colwise().mean();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(c.transpose() * c / 8.0);
    for (Index h = 1; h <= 5; ++h) {
      const PcaModel m = pca_fit(x, h);
      const RowMat<double> top = es.eigenvectors().rightCols(h).rowwise().reverse().transpose();
      CHECK(std::asin(std::min(1.0, subspace_sin(m.components, top))) < 1e-6);
      const double tail = es.eigenvalues().head(6 - h).sum();
      CHECK(pca_reconstruction_mse(m, x) == doctest::Approx(tail / 6).epsilon(1e-8).scale(1));
      CHECK((m.components * m.components.transpose() - RowMat<double>::Identity(h, h)).cwiseAbs().maxCoeff() < 1e-8);
      for (Index k = 1; k < h; ++k) CHECK(m.eigenvalues[k] <= m.eigenvalues[k - 1]);
      for (Index k = 0; k < h; ++k) {
        Index arg = 0;
        m.components.row(k).cwiseAbs().maxCoeff(&arg);
        CHECK(m.components(k, arg) > 0);
      }
    }
  }
}

TEST_CASE("pca exact recovery") {
  SUBCASE("points on a line") {
    RowMat<double> x(5, 3);
    const Eigen::RowVector3d dir(1, -2, 0.5), base(3, 1, -1);
    for (int i = 0; i < 5; ++i) x.row(i) = base + (i * 0.7 - 1.0) * dir;
    const PcaModel m = pca_fit(x, 1);
    CHECK(pca_reconstruction_mse(m, x) < 1e-28);
  }
  SUBCASE("h equals the rank") {
    std::mt19937_64 rng(5);
    const RowMat<double> x = random_matrix(10, 3, rng) * random_matrix(3, 50, rng);
    const PcaModel m = pca_fit(x, 3);
    CHECK(pca_reconstruction_mse(m, x) < 1e-10);
  }
}

TEST_CASE("pca encode and decode") {
  std::mt19937_64 rng(12);
  const RowMat<double> x = random_matrix(30, 20, rng);
  const PcaModel m = pca_fit(x, 4);

  CHECK(pca_encode(m, m.mean).cwiseAbs().maxCoeff() == 0.0);
  CHECK((pca_decode(m, Vec<double>::Zero(4)) - m.mean).cwiseAbs().maxCoeff() == 0.0);
  for (Index k = 0; k < 4; ++k) {
    const Vec<double> xk = m.mean + 2.5 * m.components.row(k).transpose();
    Vec<double> e = Vec<double>::Zero(4);
    e[k] = 2.5;
    CHECK((pca_encode(m, xk) - e).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((pca_decode(m, e) - xk).cwiseAbs().maxCoeff() < 1e-12);
  }
  for (int i = 0; i < 10; ++i) {
    const Vec<double> v = random_matrix(20, 1, rng);
    const Vec<double> code = pca_encode(m, v);
    CHECK((pca_encode(m, pca_decode(m, code)) - code).cwiseAbs().maxCoeff() < 1e-10);
    const Vec<double> c = random_matrix(4, 1, rng);
    const Vec<double> r = pca_decode(m, c);
    CHECK((pca_decode(m, pca_encode(m, r)) - r).cwiseAbs().maxCoeff() < 1e-10);
  }
  CHECK_THROWS_AS(pca_encode(m, Vec<double>::Zero(19)), DimensionError);
  CHECK_THROWS_AS(pca_decode(m, Vec<double>::Zero(5)), DimensionError);
}

TEST_CASE("pca reconstruction error properties") {
  std::mt19937_64 rng(44);
  // smooth-ish data with a decaying spectrum
  RowMat<double> x = random_matrix(40, 60, rng);
  for (Index j = 0; j < x.cols(); ++j) x.col(j) *= std::exp(-0.05 * static_cast<double>(j));

  double prev = std::numeric_limits<double>::infinity();
  for (Index h = 1; h <= 20; ++h) {
    const PcaModel m = pca_fit(x, h);
    const double mse = pca_reconstruction_mse(m, x);
    CHECK(mse < prev);
    CHECK(mse == doctest::Approx(m.tail_variance() / 60).epsilon(1e-8));
    prev = mse;

    if (h == 5) {
      const RowMat<double> c = x.rowwise() - m.mean.transpose();
      for (int rep = 0; rep < 20; ++rep) {
        const Eigen::MatrixXd q = Eigen::HouseholderQR<Eigen::MatrixXd>(random_matrix(60, 5, rng)).householderQ() *
                                  Eigen::MatrixXd::Identity(60, 5);
        const double rnd = (c - c * q * q.transpose()).squaredNorm() / static_cast<double>(c.size());
        CHECK(mse <= rnd);
      }
    }
  }
}

TEST_CASE("pca_fit errors") {
  std::mt19937_64 rng(1);
  const RowMat<double> x = random_matrix(5, 3, rng);
  CHECK_THROWS_AS(pca_fit(x, 0), ConfigError);
  CHECK_THROWS_AS(pca_fit(x, 5), ConfigError);
  CHECK_THROWS_AS(pca_fit(random_matrix(10, 3, rng), 4), ConfigError);
}
