#include "penlang/noise.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "penlang/numeric.hpp"

namespace penlang {
namespace {

constexpr double kPi = 3.141592653589793238462643383279502884;

// log density of a univariate location-scale t at residual u, scale s.
double log_t1(double u, double dof, double s) {
  const double z = u / s;
  return std::lgamma(0.5 * (dof + 1.0)) - std::lgamma(0.5 * dof) -
         0.5 * std::log(dof * kPi) - std::log(s) -
         0.5 * (dof + 1.0) * std::log1p(z * z / dof);
}

// log density of a bivariate t with scale matrix `scale` at residual r.
double log_t2(const Vec2& r, double dof, const Mat2& scale) {
  const double det = scale.determinant();
  const double q = r.dot(scale.inverse() * r);
  return std::lgamma(0.5 * (dof + 2.0)) - std::lgamma(0.5 * dof) -
         std::log(dof * kPi) - 0.5 * std::log(det) -
         0.5 * (dof + 2.0) * std::log1p(q / dof);
}

// Draw from a bivariate t via the Gaussian scale mixture sqrt(d/chi2_d) N(0, S).
Vec2 sample_t2(double dof, const Mat2& scale, RandomStream& rng) {
  // S = sigma^2 [[1, r], [r, 1]] has Cholesky factor sigma [[1, 0], [r, sqrt(1-r^2)]].
  const double sigma = std::sqrt(scale(0, 0));
  const double r = scale(0, 1) / scale(0, 0);
  const double z1 = rng.normal();
  const double z2 = rng.normal();
  const Vec2 g(sigma * z1, sigma * (r * z1 + std::sqrt(1.0 - r * r) * z2));
  return std::sqrt(dof / rng.chi_squared(dof)) * g;
}

}  // namespace

Mat2 ArgosError::scale() const {
  const double off = rho * std::sqrt(anisotropy);
  Mat2 s;
  s << 1.0, off, off, 1.0;
  return sigma_obs * sigma_obs * s;
}

Mat2 ArgosError::scale_mirror() const {
  const double off = -rho * std::sqrt(anisotropy);
  Mat2 s;
  s << 1.0, off, off, 1.0;
  return sigma_obs * sigma_obs * s;
}

void validate(const MeasurementModel& model) {
  std::visit(
      [](const auto& m) {
        using T = std::decay_t<decltype(m)>;
        if (!(m.sigma_obs > 0.0))
          throw std::invalid_argument("observation scale must be > 0");
        if constexpr (!std::is_same_v<T, GaussianError>) {
          if (!(m.dof > 2.0))
            throw std::invalid_argument(
                "degrees of freedom must exceed 2 for finite variance");
        }
        if constexpr (std::is_same_v<T, ArgosError>) {
          if (!(m.rho > -1.0 && m.rho < 1.0))
            throw std::invalid_argument("correlation must lie in (-1, 1)");
          if (!(m.anisotropy > 0.0))
            throw std::invalid_argument("anisotropy must be > 0");
          if (!(std::abs(m.rho * std::sqrt(m.anisotropy)) < 1.0))
            throw std::invalid_argument(
                "rho * sqrt(anisotropy) must have magnitude below 1");
          if (!(m.mix_weight >= 0.0 && m.mix_weight <= 1.0))
            throw std::invalid_argument("mixture weight must lie in [0, 1]");
        }
      },
      model);
}

Vec2 sample_error(const MeasurementModel& model, RandomStream& rng,
                  int* branch) {
  if (branch) *branch = 0;
  if (const auto* g = std::get_if<GaussianError>(&model))
    return g->sigma_obs * Vec2(rng.normal(), rng.normal());
  if (const auto* s = std::get_if<StudentError>(&model)) {
    // Independent univariate t draws per axis, each with its own mixing chi2.
    const double t1 =
        rng.normal() * std::sqrt(s->dof / rng.chi_squared(s->dof));
    const double t2 =
        rng.normal() * std::sqrt(s->dof / rng.chi_squared(s->dof));
    return s->sigma_obs * Vec2(t1, t2);
  }
  const auto& a = std::get<ArgosError>(model);
  const bool first = rng.uniform() < a.mix_weight;
  if (branch) *branch = first ? 0 : 1;
  return sample_t2(a.dof, first ? a.scale() : a.scale_mirror(), rng);
}

double log_density(const MeasurementModel& model, const Vec2& residual) {
  if (!residual.allFinite())
    throw std::invalid_argument("observation residual is not finite");
  if (const auto* g = std::get_if<GaussianError>(&model)) {
    const double s2 = g->sigma_obs * g->sigma_obs;
    return -std::log(2.0 * kPi) - std::log(s2) -
           0.5 * residual.squaredNorm() / s2;
  }
  if (const auto* s = std::get_if<StudentError>(&model))
    return log_t1(residual.x(), s->dof, s->sigma_obs) +
           log_t1(residual.y(), s->dof, s->sigma_obs);
  const auto& a = std::get<ArgosError>(model);
  const double first = std::log(a.mix_weight) +
                       log_t2(residual, a.dof, a.scale());
  const double second = std::log1p(-a.mix_weight) +
                        log_t2(residual, a.dof, a.scale_mirror());
  return log_sum_exp(first, second);
}

std::vector<GaussianComponent> moment_match(const MeasurementModel& model) {
  validate(model);
  if (const auto* g = std::get_if<GaussianError>(&model)) {
    const double s2 = g->sigma_obs * g->sigma_obs;
    return {{1.0, s2 * Mat2::Identity()}};
  }
  if (const auto* s = std::get_if<StudentError>(&model)) {
    const double v = s->sigma_obs * s->sigma_obs * s->dof / (s->dof - 2.0);
    return {{1.0, v * Mat2::Identity()}};
  }
  const auto& a = std::get<ArgosError>(model);
  const double inflate = a.dof / (a.dof - 2.0);
  return {{a.mix_weight, inflate * a.scale()},
          {1.0 - a.mix_weight, inflate * a.scale_mirror()}};
}

void write_observations(const std::filesystem::path& file,
                        const ObservationSeries& series) {
  std::ofstream out(file);
  if (!out)
    throw std::runtime_error("cannot write observation file: " + file.string());
  out.precision(17);
  out << "t_hours,y1_km,y2_km\n";
  for (const Observation& o : series)
    out << o.t_hours << "," << o.position.x() << "," << o.position.y() << "\n";
}

ObservationSeries read_observations(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in)
    throw std::runtime_error("cannot open observation file: " + file.string());
  std::string line;
  if (!std::getline(in, line) || line.rfind("t_hours", 0) != 0)
    throw std::runtime_error(file.string() + ": missing observation header");
  ObservationSeries series;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream fields(line);
    Observation o;
    char c1 = 0, c2 = 0;
    if (!(fields >> o.t_hours >> c1 >> o.position.x() >> c2 >> o.position.y()) ||
        c1 != ',' || c2 != ',')
      throw std::runtime_error(file.string() + ":" + std::to_string(line_no) +
                               ": malformed observation row");
    series.push_back(o);
  }
  return series;
}

}  // namespace penlang
