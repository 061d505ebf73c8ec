#include "penlang/dynamics.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

namespace penlang {

void validate(const SdeModel& model) {
  validate(model.movement);
  if (std::isnan(model.lambda) || model.lambda <= 0.0)
    throw std::invalid_argument("penalty scale lambda must be > 0 (or +inf)");
}

Vec2 residual_velocity_drift(const SdeModel& model,
                             std::optional<std::size_t> center, const Vec2& x) {
  Vec2 g = model.potential.gradient(x, center) + model.penalty(x);
  if (center) {
    const PotentialComponent& well = model.potential.component(*center);
    g += 2.0 * well.alpha * (model.potential.kernel(x, *center) - 1.0) *
         (well.precision * (x - well.center));
  }
  return g;
}

Vec4 residual_drift(const SdeModel& model, std::optional<std::size_t> center,
                    const Vec4& u) {
  Vec4 g = Vec4::Zero();
  g.tail<2>() = residual_velocity_drift(model, center, u.head<2>());
  return g;
}

Mat2 residual_velocity_jacobian(const SdeModel& model,
                                std::optional<std::size_t> center,
                                const Vec2& x) {
  Mat2 d = model.potential.hessian(x, center) + model.penalty_jacobian(x);
  if (center) {
    const PotentialComponent& well = model.potential.component(*center);
    const double e = model.potential.kernel(x, *center);
    const Vec2 br = well.precision * (x - well.center);
    d += 2.0 * well.alpha *
         ((e - 1.0) * well.precision - 2.0 * e * br * br.transpose());
  }
  return d;
}

Vec4 ode_flow(const SdeModel& model, std::optional<std::size_t> center,
              const Vec4& u, double h) {
  return u - h * residual_drift(model, center, u);
}

StepContext make_step_context(const SdeModel& model,
                              std::optional<std::size_t> center, double h) {
  validate(model);
  if (!(h > 0.0)) throw std::invalid_argument("step length must be > 0");
  StepContext ctx;
  ctx.center = center;
  ctx.step = h;
  if (center)
    ctx.fixed_point.head<2>() = model.potential.component(*center).center;
  const DriftMatrix drift =
      DriftMatrix::make(model.movement, model.potential, center);
  const NoiseMatrix noise = NoiseMatrix::make(model.movement);
  ctx.drift = drift.value;
  ctx.exp_drift = matrix_exponential(drift.value * h);
  const OuCovariance cov = ou_covariance(drift, noise, h);
  ctx.cov = cov.value;
  ctx.cov_via_quadrature = cov.via_quadrature;
  ctx.cov_factor = mvn_factor(ctx.cov);
  return ctx;
}

StepContextCache::StepContextCache(const SdeModel& model, double h) : step_(h) {
  const std::size_t wells = model.potential.size();
  contexts_.reserve(wells + 1);
  for (std::size_t l = 0; l < wells; ++l)
    contexts_.push_back(make_step_context(model, l, h));
  contexts_.push_back(make_step_context(model, std::nullopt, h));
}

const StepContext& StepContextCache::at(
    std::optional<std::size_t> center) const {
  if (!center) return contexts_.back();
  if (*center + 1 >= contexts_.size())
    throw std::out_of_range("no step context for this well index");
  return contexts_[*center];
}

Vec4 draw_step_noise(const StepContext& ctx, RandomStream& rng) {
  Vec4 z;
  for (int i = 0; i < 4; ++i) z(i) = rng.normal();
  return ctx.cov_factor * z;
}

Vec4 ou_flow(const StepContext& ctx, const Vec4& u, const Vec4& eta) {
  return ctx.exp_drift * (u - ctx.fixed_point) + ctx.fixed_point + eta;
}

Vec4 ou_flow(const StepContext& ctx, const Vec4& u, RandomStream& rng) {
  return ou_flow(ctx, u, draw_step_noise(ctx, rng));
}

Vec4 lie_trotter_step(const SdeModel& model, const StepContext& ctx,
                      const Vec4& u, const Vec4& eta) {
  return ou_flow(ctx, ode_flow(model, ctx.center, u, ctx.step), eta);
}

Vec4 lie_trotter_step(const SdeModel& model, const StepContext& ctx,
                      const Vec4& u, RandomStream& rng) {
  return lie_trotter_step(model, ctx, u, draw_step_noise(ctx, rng));
}

StrangStep strang_step(const SdeModel& model, const StepContext& ctx,
                       const Vec4& u, const Vec4& eta) {
  const double half = 0.5 * ctx.step;
  const Vec4 u_half = ode_flow(model, ctx.center, u, half);
  StrangStep out;
  out.intermediate = ou_flow(ctx, u_half, eta);
  out.state = ode_flow(model, ctx.center, out.intermediate, half);
  return out;
}

StrangStep strang_step(const SdeModel& model, const StepContext& ctx,
                       const Vec4& u, RandomStream& rng) {
  return strang_step(model, ctx, u, draw_step_noise(ctx, rng));
}

Trajectory simulate_trajectory(const SdeModel& model, const StateVector& u0,
                               double h, std::size_t n_steps, Scheme scheme,
                               RandomStream& rng) {
  validate(model);
  if (!u0.finite())
    throw std::invalid_argument("initial state is not finite");
  const StepContextCache cache(model, h);
  Trajectory traj;
  traj.reserve(n_steps + 1);
  traj.push_back({0.0, u0});
  Vec4 u = u0.packed();
  for (std::size_t k = 0; k < n_steps; ++k) {
    const StepContext& ctx =
        cache.at(model.potential.select_center(u.head<2>()));
    u = scheme == Scheme::LieTrotter ? lie_trotter_step(model, ctx, u, rng)
                                     : strang_step(model, ctx, u, rng).state;
    if (!u.allFinite())
      throw std::runtime_error("simulation diverged at step " +
                               std::to_string(k + 1));
    traj.push_back({static_cast<double>(k + 1) * h, StateVector::unpack(u)});
  }
  return traj;
}

Trajectory subsample(const Trajectory& traj, std::size_t factor) {
  if (factor < 1) throw std::invalid_argument("subsample factor must be >= 1");
  if (traj.empty()) throw std::invalid_argument("cannot subsample empty trajectory");
  if ((traj.size() - 1) % factor != 0)
    throw std::invalid_argument("subsample factor must divide the step count");
  Trajectory out;
  out.reserve((traj.size() - 1) / factor + 1);
  for (std::size_t i = 0; i < traj.size(); i += factor) out.push_back(traj[i]);
  return out;
}

void write_trajectory(const std::filesystem::path& file, const Trajectory& traj) {
  std::ofstream out(file);
  if (!out)
    throw std::runtime_error("cannot write trajectory file: " + file.string());
  out.precision(17);
  out << "t_hours,x1_km,x2_km,v1_kmh,v2_kmh\n";
  for (const TrajectoryPoint& p : traj)
    out << p.t_hours << "," << p.state.position.x() << ","
        << p.state.position.y() << "," << p.state.velocity.x() << ","
        << p.state.velocity.y() << "\n";
}

Trajectory read_trajectory(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in)
    throw std::runtime_error("cannot open trajectory file: " + file.string());
  std::string line;
  if (!std::getline(in, line) || line.rfind("t_hours", 0) != 0)
    throw std::runtime_error(file.string() + ": missing trajectory header");
  Trajectory traj;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream fields(line);
    TrajectoryPoint p;
    char c[4] = {};
    if (!(fields >> p.t_hours >> c[0] >> p.state.position.x() >> c[1] >>
          p.state.position.y() >> c[2] >> p.state.velocity.x() >> c[3] >>
          p.state.velocity.y()) ||
        c[0] != ',' || c[1] != ',' || c[2] != ',' || c[3] != ',')
      throw std::runtime_error(file.string() + ":" + std::to_string(line_no) +
                               ": malformed trajectory row");
    traj.push_back(p);
  }
  return traj;
}

}  // namespace penlang
