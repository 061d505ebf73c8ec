#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <vector>

#include "penlang/noise.hpp"
#include "penlang/random.hpp"

using penlang::ArgosError;
using penlang::GaussianError;
using penlang::MeasurementModel;
using penlang::Observation;
using penlang::ObservationSeries;
using penlang::RandomStream;
using penlang::StudentError;
using penlang::Vec2;

namespace {

// 2D Simpson quadrature of exp(log_density) over [x0,x1]x[y0,y1].
double box_mass(const MeasurementModel& model, double x0, double x1, double y0,
                double y1, int n) {
  if (n % 2 != 0) ++n;
  const double hx = (x1 - x0) / n, hy = (y1 - y0) / n;
  auto w1 = [n](int i) {
    if (i == 0 || i == n) return 1.0;
    return i % 2 == 1 ? 4.0 : 2.0;
  };
  double total = 0.0;
  for (int i = 0; i <= n; ++i)
    for (int j = 0; j <= n; ++j)
      total += w1(i) * w1(j) *
               std::exp(penlang::log_density(
                   model, Vec2(x0 + i * hx, y0 + j * hy)));
  return total * hx * hy / 9.0;
}

// chi-square goodness of fit on a 4x4 cell grid inside [-10s, 10s]^2,
// conditioning both sides on the box.  0.1% critical value, 15 dof: 37.70.
void check_samples_match_density(const MeasurementModel& model, double sigma,
                                 std::uint64_t seed) {
  const double edges[5] = {-10.0 * sigma, -sigma, 0.0, sigma, 10.0 * sigma};
  double p[4][4];
  double mass = 0.0;
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) {
      p[i][j] = box_mass(model, edges[i], edges[i + 1], edges[j], edges[j + 1],
                         i == 0 || i == 3 ? 60 : 20);
      mass += p[i][j];
    }
  RandomStream rng(seed);
  const int n = 100000;
  int counts[4][4] = {};
  int kept = 0;
  for (int s = 0; s < n; ++s) {
    const Vec2 e = penlang::sample_error(model, rng);
    int ci = -1, cj = -1;
    for (int i = 0; i < 4; ++i) {
      if (e[0] >= edges[i] && e[0] < edges[i + 1]) ci = i;
      if (e[1] >= edges[i] && e[1] < edges[i + 1]) cj = i;
    }
    if (ci < 0 || cj < 0) continue;  // outside the box, excluded both sides
    ++counts[ci][cj];
    ++kept;
  }
  CHECK(kept > n * 0.98);
  double chi2 = 0.0;
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) {
      const double expected = kept * p[i][j] / mass;
      chi2 += (counts[i][j] - expected) * (counts[i][j] - expected) / expected;
    }
  CHECK(chi2 < 37.70);
}

double log_bivariate_t(const Vec2& r, double dof, const penlang::Mat2& scale) {
  const double q = r.dot(scale.inverse() * r);
  return std::lgamma((dof + 2.0) / 2.0) - std::lgamma(dof / 2.0) -
         std::log(dof * M_PI) - 0.5 * std::log(scale.determinant()) -
         0.5 * (dof + 2.0) * std::log1p(q / dof);
}

}  // namespace

TEST_CASE("parameter validation") {
  CHECK_NOTHROW(penlang::validate(GaussianError{0.2}));
  CHECK_THROWS_AS(penlang::validate(GaussianError{0.0}), std::invalid_argument);
  CHECK_THROWS_AS(penlang::validate(StudentError{0.2, 2.0}),
                  std::invalid_argument);
  CHECK_THROWS_AS(penlang::validate(ArgosError{0.2, 3.0, 1.2, 0.4, 0.5}),
                  std::invalid_argument);
  CHECK_THROWS_AS(penlang::validate(ArgosError{0.2, 3.0, 0.9, 2.0, 0.5}),
                  std::invalid_argument);  // rho sqrt a > 1
  CHECK_THROWS_AS(penlang::validate(ArgosError{0.2, 3.0, 0.7, 0.4, 1.5}),
                  std::invalid_argument);
  CHECK_NOTHROW(penlang::validate(ArgosError{0.2, 3.0, 0.7, 0.4, 0.5}));
}

TEST_CASE("gaussian sampling std per axis") {
  RandomStream rng(83);
  const MeasurementModel model = GaussianError{0.2};
  const int n = 100000;
  double s2x = 0, s2y = 0;
  for (int i = 0; i < n; ++i) {
    const Vec2 e = penlang::sample_error(model, rng);
    s2x += e[0] * e[0];
    s2y += e[1] * e[1];
  }
  CHECK(std::sqrt(s2x / n) == doctest::Approx(0.2).epsilon(0.02));
  CHECK(std::sqrt(s2y / n) == doctest::Approx(0.2).epsilon(0.02));
}

TEST_CASE("student sampling std is inflated by sqrt(d/(d-2))") {
  RandomStream rng(89);
  const MeasurementModel model = StudentError{0.2, 3.0};
  const int n = 100000;
  double s2x = 0, s2y = 0;
  for (int i = 0; i < n; ++i) {
    const Vec2 e = penlang::sample_error(model, rng);
    s2x += e[0] * e[0];
    s2y += e[1] * e[1];
  }
  const double expect = 0.2 * std::sqrt(3.0);
  CHECK(std::sqrt(s2x / n) == doctest::Approx(expect).epsilon(0.05));
  CHECK(std::sqrt(s2y / n) == doctest::Approx(expect).epsilon(0.05));
}

TEST_CASE("argos branches carry mirrored correlations") {
  RandomStream rng(97);
  const ArgosError argos{0.2, 5.0, 0.7, 0.4, 0.5};
  const MeasurementModel model = argos;
  const int n = 200000;
  double sxy[2] = {0, 0}, sxx[2] = {0, 0}, syy[2] = {0, 0};
  int count[2] = {0, 0};
  double all_xy = 0, all_xx = 0, all_yy = 0;
  for (int i = 0; i < n; ++i) {
    int branch = -1;
    const Vec2 e = penlang::sample_error(model, rng, &branch);
    REQUIRE((branch == 0 || branch == 1));
    ++count[branch];
    sxy[branch] += e[0] * e[1];
    sxx[branch] += e[0] * e[0];
    syy[branch] += e[1] * e[1];
    all_xy += e[0] * e[1];
    all_xx += e[0] * e[0];
    all_yy += e[1] * e[1];
  }
  const double target = 0.7 * std::sqrt(0.4);  // rho sqrt a ~ 0.4427
  for (int b = 0; b < 2; ++b) {
    CHECK(count[b] > static_cast<int>(0.45 * n));
    const double corr = sxy[b] / std::sqrt(sxx[b] * syy[b]);
    CHECK(corr == doctest::Approx(b == 0 ? target : -target).epsilon(0.25));
  }
  CHECK(std::abs(all_xy / std::sqrt(all_xx * all_yy)) < 0.05);

  // degenerate mix weights pin the branch
  int branch = -1;
  ArgosError sure = argos;
  sure.mix_weight = 1.0;
  for (int i = 0; i < 50; ++i) {
    penlang::sample_error(MeasurementModel(sure), rng, &branch);
    CHECK(branch == 0);
  }
  sure.mix_weight = 0.0;
  for (int i = 0; i < 50; ++i) {
    penlang::sample_error(MeasurementModel(sure), rng, &branch);
    CHECK(branch == 1);
  }
}

TEST_CASE("log density closed-form anchors") {
  CHECK(penlang::log_density(GaussianError{1.0}, Vec2(0.0, 0.0)) ==
        doctest::Approx(-std::log(2.0 * M_PI)).epsilon(1e-12));

  // product of two univariate t3 scaled by 0.2; t3 density at 0 is
  // 2 / (pi sqrt 3)
  const double t3_at_zero = 2.0 / (M_PI * std::sqrt(3.0));
  CHECK(penlang::log_density(StudentError{0.2, 3.0}, Vec2(0.0, 0.0)) ==
        doctest::Approx(2.0 * std::log(t3_at_zero / 0.2)).epsilon(1e-12));

  const ArgosError pure{0.2, 3.0, 0.7, 0.4, 1.0};
  RandomStream rng(101);
  for (int i = 0; i < 10; ++i) {
    const Vec2 r(rng.normal() * 0.4, rng.normal() * 0.4);
    CHECK(penlang::log_density(pure, r) ==
          doctest::Approx(log_bivariate_t(r, 3.0, pure.scale()))
              .epsilon(1e-12));
  }

  CHECK_THROWS_AS(
      penlang::log_density(GaussianError{1.0}, Vec2(std::nan(""), 0.0)),
      std::invalid_argument);
}

TEST_CASE("densities integrate to one") {
  const double s = 0.2;
  CHECK(box_mass(GaussianError{s}, -10 * s, 10 * s, -10 * s, 10 * s, 120) ==
        doctest::Approx(1.0).epsilon(0.01));
  CHECK(box_mass(StudentError{s, 3.0}, -10 * s, 10 * s, -10 * s, 10 * s, 120) ==
        doctest::Approx(1.0).epsilon(0.01));
  CHECK(box_mass(ArgosError{s, 3.0, 0.7, 0.4, 0.5}, -10 * s, 10 * s, -10 * s,
                 10 * s, 120) == doctest::Approx(1.0).epsilon(0.01));
}

TEST_CASE("samples and densities agree (goodness of fit)") {
  check_samples_match_density(GaussianError{0.2}, 0.2, 103);
  check_samples_match_density(StudentError{0.2, 3.0}, 0.2, 107);
  check_samples_match_density(ArgosError{0.2, 3.0, 0.7, 0.4, 0.5}, 0.2, 109);
}

TEST_CASE("argos density depends only on rho sqrt a") {
  const ArgosError base{0.2, 3.0, 0.7, 0.4, 0.5};
  const double k = 1.7;
  const ArgosError repar{0.2, 3.0, 0.7 * k, 0.4 / (k * k), 0.5};
  RandomStream rng(113);
  for (int i = 0; i < 20; ++i) {
    const Vec2 r(rng.normal() * 0.5, rng.normal() * 0.5);
    CHECK(penlang::log_density(base, r) ==
          doctest::Approx(penlang::log_density(repar, r)).epsilon(1e-12));
  }
}

TEST_CASE("moment matching") {
  const auto g = penlang::moment_match(GaussianError{0.2});
  REQUIRE(g.size() == 1);
  CHECK(g[0].weight == 1.0);
  CHECK(g[0].cov.isApprox(0.04 * penlang::Mat2::Identity()));

  const auto st = penlang::moment_match(StudentError{0.2, 3.0});
  REQUIRE(st.size() == 1);
  CHECK(st[0].cov.isApprox(0.12 * penlang::Mat2::Identity()));

  const ArgosError argos{0.2, 3.0, 0.7, 0.4, 0.5};
  const auto am = penlang::moment_match(argos);
  REQUIRE(am.size() == 2);
  CHECK(am[0].weight == doctest::Approx(0.5));
  CHECK(am[1].weight == doctest::Approx(0.5));
  CHECK(am[0].cov.trace() == doctest::Approx(2.0 * 0.12));
  CHECK(am[1].cov.trace() == doctest::Approx(2.0 * 0.12));
  CHECK(am[0].cov(0, 1) == doctest::Approx(3.0 * 0.04 * 0.7 * std::sqrt(0.4)));
  CHECK(am[1].cov(0, 1) == doctest::Approx(-am[0].cov(0, 1)));

  // matched covariance really matches the sampling covariance
  RandomStream rng(127);
  const int n = 400000;
  double sxx = 0;
  for (int i = 0; i < n; ++i) {
    const Vec2 e = penlang::sample_error(MeasurementModel(argos), rng);
    sxx += e[0] * e[0];
  }
  const double matched_xx =
      am[0].weight * am[0].cov(0, 0) + am[1].weight * am[1].cov(0, 0);
  CHECK(sxx / n == doctest::Approx(matched_xx).epsilon(0.1));
}

TEST_CASE("observation file round trip") {
  const auto dir = std::filesystem::temp_directory_path() / "penlang_noise";
  std::filesystem::create_directories(dir);
  const auto file = dir / "obs.csv";
  ObservationSeries series;
  for (int i = 0; i < 5; ++i)
    series.push_back(
        {i / 60.0, Vec2(25.0 + 0.1 * i, 5.0 - 0.01 * i * i)});
  penlang::write_observations(file, series);
  const ObservationSeries back = penlang::read_observations(file);
  REQUIRE(back.size() == series.size());
  for (std::size_t i = 0; i < series.size(); ++i) {
    CHECK(back[i].t_hours == series[i].t_hours);
    CHECK(back[i].position == series[i].position);
  }
  CHECK_THROWS(penlang::read_observations(dir / "missing.csv"));
}
