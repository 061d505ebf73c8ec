#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <vector>

#include "penlang/dynamics.hpp"
#include "penlang/random.hpp"

using penlang::Mat2;
using penlang::Mat4;
using penlang::MovementParams;
using penlang::PolygonDomain;
using penlang::PotentialComponent;
using penlang::PotentialSpec;
using penlang::RandomStream;
using penlang::Scheme;
using penlang::SdeModel;
using penlang::StateVector;
using penlang::StepContext;
using penlang::StepContextCache;
using penlang::Trajectory;
using penlang::Vec2;
using penlang::Vec4;

namespace {

PotentialSpec study_potential() {
  PotentialComponent a, b;
  a.alpha = 70.0;
  a.center = {25.0, 5.0};
  a.precision << 1.0 / 9.0, 1.0 / 40.0, 1.0 / 40.0, 1.0 / 4.0;
  b.alpha = 50.0;
  b.center = {35.0, 15.0};
  b.precision << 1.0 / 36.0, -1.0 / 100.0, -1.0 / 100.0, 1.0 / 100.0;
  return PotentialSpec({a, b});
}

PolygonDomain study_domain() {
  return PolygonDomain::load(std::filesystem::path(PENLANG_SOURCE_DIR) /
                             "data/domain.poly");
}

SdeModel study_model(double lambda) {
  SdeModel model;
  model.movement = {1.0, 5.0, 0.1};
  model.potential = study_potential();
  model.domain = study_domain();
  model.lambda = lambda;
  return model;
}

SdeModel flat_model() {
  SdeModel model;
  model.movement = {1.0, 5.0, 0.1};
  return model;
}

SdeModel noiseless(SdeModel model) {
  model.movement.nu = 1e-300;  // diffusion ~ 0, parameters stay valid
  return model;
}

Vec4 pack(double x1, double x2, double v1, double v2) {
  Vec4 u;
  u << x1, x2, v1, v2;
  return u;
}

}  // namespace

TEST_CASE("model validation") {
  CHECK_NOTHROW(penlang::validate(study_model(0.001)));
  SdeModel bad = study_model(0.0);
  CHECK_THROWS_AS(penlang::validate(bad), std::invalid_argument);
  bad.lambda = std::nan("");
  CHECK_THROWS_AS(penlang::validate(bad), std::invalid_argument);
  SdeModel unpen = study_model(std::numeric_limits<double>::infinity());
  CHECK_NOTHROW(penlang::validate(unpen));
  CHECK_FALSE(unpen.penalty_active());
}

TEST_CASE("residual drift vanishes at equilibria") {
  const SdeModel flat = flat_model();
  CHECK(penlang::residual_velocity_drift(flat, std::nullopt, {3.0, 4.0}) ==
        Vec2(0.0, 0.0));

  PotentialComponent c;
  c.alpha = 5.0;
  c.center = {1.0, 1.0};
  c.precision = Mat2::Identity();
  SdeModel single = flat_model();
  single.potential = PotentialSpec({c});
  CHECK(penlang::residual_velocity_drift(single, 0, c.center).norm() == 0.0);
}

TEST_CASE("residual drift reassembles the full gradient") {
  const SdeModel model = study_model(0.001);
  RandomStream rng(131);
  for (int i = 0; i < 50; ++i) {
    const Vec2 x(18.0 + 24.0 * rng.uniform(), -2.0 + 24.0 * rng.uniform());
    for (std::size_t l = 0; l < 2; ++l) {
      const auto& c = model.potential.component(l);
      const Vec2 linear =
          2.0 * c.alpha * (c.precision * (x - c.center));
      const Vec2 g = penlang::residual_velocity_drift(model, l, x);
      const Vec2 full = model.potential.gradient(x) + model.penalty(x);
      CHECK((g + linear - full).norm() < 1e-10 * (1.0 + full.norm()));
    }
  }
}

TEST_CASE("packed residual drift has zero position rows") {
  const SdeModel model = study_model(0.001);
  RandomStream rng(137);
  for (int i = 0; i < 30; ++i) {
    const Vec4 u = pack(60.0 * rng.uniform() - 5.0, 40.0 * rng.uniform() - 10.0,
                        rng.normal(), rng.normal());
    const Vec4 g = penlang::residual_drift(model, 0, u);
    CHECK(g[0] == 0.0);
    CHECK(g[1] == 0.0);
  }
}

TEST_CASE("residual jacobian matches finite differences") {
  const SdeModel model = study_model(0.01);
  RandomStream rng(139);
  int checked = 0;
  while (checked < 40) {
    const Vec2 x(60.0 * rng.uniform() - 5.0, 40.0 * rng.uniform() - 10.0);
    // keep away from projection kinks (vertex shadows) where the penalty is
    // not differentiable
    if (!model.domain->contains(x) && model.domain->project(x).clamped)
      continue;
    const double step = 1e-6;
    Mat2 fd;
    bool kink = false;
    for (int c = 0; c < 2; ++c) {
      Vec2 hi = x, lo = x;
      hi[c] += step;
      lo[c] -= step;
      if (model.domain->contains(hi) != model.domain->contains(lo)) {
        kink = true;
        break;
      }
      fd.col(c) = (penlang::residual_velocity_drift(model, 0, hi) -
                   penlang::residual_velocity_drift(model, 0, lo)) /
                  (2.0 * step);
    }
    if (kink) continue;
    const Mat2 an = penlang::residual_velocity_jacobian(model, 0, x);
    CHECK((an - fd).cwiseAbs().maxCoeff() < 1e-4 * (1.0 + an.norm()));
    ++checked;
  }
}

TEST_CASE("ode flow moves only velocity") {
  const SdeModel model = study_model(0.001);
  const Vec4 u = pack(30.0, 10.0, 2.0, -1.0);
  const double h = 1.0 / 60.0;
  const Vec4 out = penlang::ode_flow(model, 0, u, h);
  CHECK(out.head<2>() == u.head<2>());
  const Vec2 g = penlang::residual_velocity_drift(model, 0, u.head<2>());
  CHECK((out.tail<2>() - (u.tail<2>() - h * g)).norm() < 1e-15);
  CHECK(penlang::ode_flow(model, 0, u, 0.0) == u);
  CHECK(penlang::ode_flow(flat_model(), std::nullopt, u, h) == u);
}

TEST_CASE("step context is consistent with its pieces") {
  const SdeModel model = study_model(0.001);
  const double h = 1.0 / 60.0;
  const StepContext ctx = penlang::make_step_context(model, 0, h);
  CHECK(ctx.exp_drift.isApprox(penlang::matrix_exponential(ctx.drift * h)));
  CHECK(ctx.fixed_point.head<2>()
            .isApprox(model.potential.component(0).center));
  CHECK(ctx.fixed_point.tail<2>() == Vec2(0.0, 0.0));
  CHECK((ctx.cov_factor * ctx.cov_factor.transpose() - ctx.cov)
            .cwiseAbs()
            .maxCoeff() < 1e-12 * (1.0 + ctx.cov.trace()));

  const StepContextCache cache(model, h);
  CHECK(cache.at(0).exp_drift == penlang::make_step_context(model, 0, h).exp_drift);
  CHECK(cache.at(1).center == 1);
  CHECK_FALSE(cache.at(std::nullopt).center.has_value());
  CHECK(cache.at(std::nullopt).cov_via_quadrature);
}

TEST_CASE("ou flow fixed point and flat closed form") {
  const SdeModel quiet = noiseless(study_model(0.001));
  const double h = 1.0 / 60.0;
  const StepContext ctx = penlang::make_step_context(quiet, 0, h);
  const Vec4 u_star = ctx.fixed_point;
  CHECK((penlang::ou_flow(ctx, u_star, Vec4::Zero()) - u_star).norm() < 1e-12);

  const SdeModel flat = noiseless(flat_model());
  const StepContext fctx = penlang::make_step_context(flat, std::nullopt, h);
  const Vec4 u = pack(1.0, 2.0, 3.0, -4.0);
  const Vec4 out = penlang::ou_flow(fctx, u, Vec4::Zero());
  const double c = 1.0, w = 0.1;
  Mat2 rot;
  rot << std::cos(w * h), std::sin(w * h), -std::sin(w * h), std::cos(w * h);
  const Vec2 v_expect = std::exp(-c * h) * rot * u.tail<2>();
  CHECK((out.tail<2>() - v_expect).norm() < 1e-12);
}

TEST_CASE("ou flow moments match the context") {
  const SdeModel model = study_model(0.001);
  const double h = 1.0 / 30.0;
  const StepContext ctx = penlang::make_step_context(model, 1, h);
  const Vec4 u = pack(34.0, 14.0, 1.0, 1.0);
  const Vec4 mean_expect =
      ctx.exp_drift * (u - ctx.fixed_point) + ctx.fixed_point;

  RandomStream rng(149);
  const int n = 10000;
  Vec4 sum = Vec4::Zero();
  Mat4 outer = Mat4::Zero();
  for (int i = 0; i < n; ++i) {
    const Vec4 x = penlang::ou_flow(ctx, u, rng);
    sum += x;
    outer += (x - mean_expect) * (x - mean_expect).transpose();
  }
  const Vec4 mean = sum / n;
  const Mat4 cov = outer / n;
  for (int r = 0; r < 4; ++r) {
    const double se = std::sqrt(ctx.cov(r, r) / n);
    CHECK(std::abs(mean[r] - mean_expect[r]) < 3.0 * se + 1e-12);
  }
  CHECK((cov - ctx.cov).norm() < 0.05 * ctx.cov.norm());
}

TEST_CASE("splitting steps collapse to the linear flow when g vanishes") {
  const SdeModel flat = flat_model();
  const double h = 1.0 / 60.0;
  const StepContext ctx = penlang::make_step_context(flat, std::nullopt, h);
  const Vec4 u = pack(0.5, -0.25, 4.0, 2.0);
  RandomStream rng(151);
  for (int i = 0; i < 20; ++i) {
    const Vec4 eta = penlang::draw_step_noise(ctx, rng);
    const Vec4 base = penlang::ou_flow(ctx, u, eta);
    const Vec4 lt = penlang::lie_trotter_step(flat, ctx, u, eta);
    const auto st = penlang::strang_step(flat, ctx, u, eta);
    CHECK(lt == base);
    CHECK(st.state == base);   // exact: subtracting h*0 preserves bits
    CHECK(st.intermediate == base);
  }
}

TEST_CASE("noiseless linear case reproduces the matrix exponential flow") {
  const SdeModel quiet = noiseless(flat_model());
  const double h = 1.0 / 60.0;
  const int n = 40;
  const StepContext ctx = penlang::make_step_context(quiet, std::nullopt, h);
  Vec4 u = pack(2.0, -1.0, 1.5, 0.5);
  const Vec4 u0 = u;
  for (int i = 0; i < n; ++i)
    u = penlang::lie_trotter_step(quiet, ctx, u, Vec4::Zero());
  const Vec4 direct =
      penlang::matrix_exponential(ctx.drift * (n * h)) * u0;
  CHECK((u - direct).norm() < 1e-10);
}

TEST_CASE("interior well center is a fixed point of both schemes") {
  PotentialComponent c;
  c.alpha = 70.0;
  c.center = {25.0, 5.0};
  c.precision << 1.0 / 9.0, 1.0 / 40.0, 1.0 / 40.0, 1.0 / 4.0;
  SdeModel model = noiseless(flat_model());
  model.potential = PotentialSpec({c});
  model.domain = study_domain();
  model.lambda = 0.001;
  const double h = 1.0 / 3600.0;
  const StepContext ctx = penlang::make_step_context(model, 0, h);
  Vec4 u = pack(25.0, 5.0, 0.0, 0.0);
  for (int i = 0; i < 100; ++i) {
    const Vec4 lt = penlang::lie_trotter_step(model, ctx, u, Vec4::Zero());
    CHECK((lt - u).cwiseAbs().maxCoeff() < 1e-12);
    const auto st = penlang::strang_step(model, ctx, u, Vec4::Zero());
    CHECK((st.state - u).cwiseAbs().maxCoeff() < 1e-12);
    u = lt;
  }
}

TEST_CASE("strang is at least as accurate as lie-trotter when noiseless") {
  const SdeModel quiet = noiseless(study_model(0.001));
  const StateVector u0{{30.0, 10.0}, {3.0, -2.0}};
  const double t_end = 0.5;
  RandomStream quiet_rng(1);

  auto end_state = [&](Scheme scheme, double h) {
    const auto n = static_cast<std::size_t>(std::llround(t_end / h));
    RandomStream rng(1);
    const Trajectory traj =
        penlang::simulate_trajectory(quiet, u0, h, n, scheme, rng);
    return traj.back().state.packed();
  };
  const Vec4 ref = end_state(Scheme::Strang, 1.0 / 60.0 / 64.0);
  const double err_lt = (end_state(Scheme::LieTrotter, 1.0 / 60.0) - ref).norm();
  const double err_st = (end_state(Scheme::Strang, 1.0 / 60.0) - ref).norm();
  CHECK(err_st <= err_lt);
  (void)quiet_rng;
}

TEST_CASE("strang intermediate position is the reported marginal") {
  // The position after a Strang step only passes through the linear flow,
  // so X equals the intermediate X and is Gaussian around the linear mean.
  const SdeModel model = study_model(0.001);
  const double h = 1.0 / 30.0;
  const StepContext ctx = penlang::make_step_context(model, 0, h);
  const Vec4 u = pack(27.0, 7.0, -1.0, 2.0);
  const Vec4 pre = penlang::ode_flow(model, 0, u, h / 2.0);
  const Vec4 mean_expect =
      ctx.exp_drift * (pre - ctx.fixed_point) + ctx.fixed_point;

  RandomStream rng(157);
  const int n = 10000;
  Vec2 sum = Vec2::Zero();
  for (int i = 0; i < n; ++i) {
    const auto st = penlang::strang_step(model, ctx, u, rng);
    CHECK(st.state.head<2>() == st.intermediate.head<2>());
    sum += st.state.head<2>();
  }
  const Vec2 mean = sum / n;
  for (int r = 0; r < 2; ++r) {
    const double se = std::sqrt(ctx.cov(r, r) / n);
    CHECK(std::abs(mean[r] - mean_expect[r]) < 3.0 * se + 1e-12);
  }
}

TEST_CASE("simulate_trajectory basics") {
  const SdeModel model = study_model(0.001);
  const StateVector u0{{25.0, 5.0}, {0.0, 0.0}};
  RandomStream rng(163);
  const Trajectory none =
      penlang::simulate_trajectory(model, u0, 1.0 / 3600.0, 0,
                                   Scheme::LieTrotter, rng);
  REQUIRE(none.size() == 1);
  CHECK(none[0].state.position == u0.position);

  RandomStream a(7), b(7);
  const Trajectory ta = penlang::simulate_trajectory(
      model, u0, 1.0 / 3600.0, 500, Scheme::Strang, a);
  const Trajectory tb = penlang::simulate_trajectory(
      model, u0, 1.0 / 3600.0, 500, Scheme::Strang, b);
  REQUIRE(ta.size() == 501);
  for (std::size_t i = 0; i < ta.size(); ++i) {
    CHECK(ta[i].state.packed() == tb[i].state.packed());
    CHECK(ta[i].t_hours == doctest::Approx((double)i / 3600.0).epsilon(1e-12));
  }
}

TEST_CASE("divergence aborts with a step index") {
  SdeModel model = flat_model();
  model.domain = PolygonDomain::from_vertices(
      {{0.0, 0.0}, {1.0, 0.0}, {1.0, 1.0}, {0.0, 1.0}});
  model.lambda = 1e-300;
  const StateVector far{{2.0, 2.0}, {0.0, 0.0}};
  RandomStream rng(167);
  CHECK_THROWS_WITH_AS(
      penlang::simulate_trajectory(model, far, 1.0, 50, Scheme::LieTrotter,
                                   rng),
      doctest::Contains("diverged"), std::runtime_error);
}

TEST_CASE("subsample keeps every factor-th state") {
  Trajectory traj;
  for (int i = 0; i <= 3600; ++i)
    traj.push_back({i / 3600.0, StateVector{{(double)i, 0.0}, {0.0, 0.0}}});

  CHECK(penlang::subsample(traj, 1).size() == traj.size());

  const Trajectory minute = penlang::subsample(traj, 60);
  REQUIRE(minute.size() == 61);
  CHECK(minute[0].state.position[0] == 0.0);
  CHECK(minute[1].state.position[0] == 60.0);
  CHECK(minute[1].t_hours == doctest::Approx(1.0 / 60.0));

  const Trajectory twenty = penlang::subsample(traj, 1200);
  REQUIRE(twenty.size() == 4);
  CHECK(twenty.back().state.position[0] == 3600.0);

  CHECK_THROWS_AS(penlang::subsample(traj, 0), std::invalid_argument);
  CHECK_THROWS_AS(penlang::subsample(traj, 7), std::invalid_argument);
}

TEST_CASE("trajectory file round trip") {
  const auto dir = std::filesystem::temp_directory_path() / "penlang_dyn";
  std::filesystem::create_directories(dir);
  const auto file = dir / "traj.csv";
  Trajectory traj;
  for (int i = 0; i < 7; ++i)
    traj.push_back({i / 60.0,
                    StateVector{{25.0 + 0.3 * i, 5.0 - 0.2 * i},
                                {1.0 + 0.01 * i, -2.0}}});
  penlang::write_trajectory(file, traj);
  const Trajectory back = penlang::read_trajectory(file);
  REQUIRE(back.size() == traj.size());
  for (std::size_t i = 0; i < traj.size(); ++i) {
    CHECK(back[i].t_hours == traj[i].t_hours);
    CHECK(back[i].state.packed() == traj[i].state.packed());
  }
}
