#include "penlang/filters.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include "penlang/numeric.hpp"

namespace penlang {
namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112353;
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_normal2(const Vec2& r, const Mat2& precision, double logdet) {
  return -kLog2Pi - 0.5 * logdet - 0.5 * r.dot(precision * r);
}

double log_normal4(const Vec4& r, const Mat4& precision, double logdet) {
  return -2.0 * kLog2Pi - 0.5 * logdet - 0.5 * r.dot(precision * r);
}

template <typename Mat>
Mat jittered(const Mat& m) {
  return m + 1e-12 * m.trace() * Mat::Identity();
}

template <typename Mat>
double logdet_pd(const Mat& m) {
  const Eigen::LLT<Mat> llt(m);
  if (llt.info() != Eigen::Success)
    throw std::invalid_argument("matrix is not positive definite");
  return 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
}

// Single-Gaussian observation covariance for the Kalman-type filters; the
// mixture model collapses to its isotropic matched variance.
Mat2 gaussianized_obs_cov(const MeasurementModel& model) {
  return std::visit(
      [](const auto& m) -> Mat2 {
        using T = std::decay_t<decltype(m)>;
        double v = m.sigma_obs * m.sigma_obs;
        if constexpr (!std::is_same_v<T, GaussianError>)
          v *= m.dof / (m.dof - 2.0);
        return v * Mat2::Identity();
      },
      model);
}

// Overall covariance of the moment-matched mixture, for initialization.
Mat2 matched_total_cov(const MeasurementModel& model) {
  Mat2 cov = Mat2::Zero();
  for (const GaussianComponent& c : moment_match(model)) cov += c.weight * c.cov;
  return cov;
}

void check_observations(const ObservationSeries& obs, double h) {
  if (obs.empty()) throw std::invalid_argument("no observations");
  if (!(h > 0.0)) throw std::invalid_argument("observation step must be > 0");
  for (std::size_t k = 0; k < obs.size(); ++k) {
    if (!obs[k].position.allFinite() || !std::isfinite(obs[k].t_hours))
      throw std::invalid_argument("non-finite observation at index " +
                                  std::to_string(k));
    if (k > 0 &&
        std::abs(obs[k].t_hours - obs[k - 1].t_hours - h) >
            1e-6 * std::max(1.0, h))
      throw std::invalid_argument("observations are not spaced by the step");
  }
}

// Symmetrize; if any eigenvalue is negative, clamp the spectrum and count it.
template <typename Mat>
void repair_psd(Mat& m, int& repairs) {
  m = (0.5 * (m + m.transpose())).eval();
  Eigen::SelfAdjointEigenSolver<Mat> eig(m);
  if (eig.eigenvalues().minCoeff() >= 0.0) return;
  ++repairs;
  m = eig.eigenvectors() * eig.eigenvalues().cwiseMax(0.0).asDiagonal() *
      eig.eigenvectors().transpose();
}

SdeModel effective_model(const SdeModel& model, const FilterConfig& cfg) {
  SdeModel m = model;
  if (!cfg.penalized) m.lambda = std::numeric_limits<double>::infinity();
  return m;
}

}  // namespace

void validate(const FilterConfig& cfg) {
  validate(cfg.model);
  if (cfg.algorithm == FilterAlgorithm::Particle && cfg.particle_count < 2)
    throw std::invalid_argument("particle filter needs at least 2 particles");
  if (cfg.initial_velocity_sd && !(*cfg.initial_velocity_sd > 0.0))
    throw std::invalid_argument("initial velocity scale must be > 0");
}

FilterOutput run_gaussian_filter(const ObservationSeries& observations,
                                 const FilterConfig& cfg,
                                 const SdeModel& model_in, double h) {
  validate(cfg);
  if (cfg.algorithm == FilterAlgorithm::Particle)
    throw std::invalid_argument("particle config passed to Gaussian filter");
  check_observations(observations, h);
  const SdeModel model = effective_model(model_in, cfg);
  validate(model);

  const Mat2 obs_cov = gaussianized_obs_cov(cfg.model);
  const bool extended = cfg.algorithm == FilterAlgorithm::ExtendedKalman;
  const double vel_sd =
      cfg.initial_velocity_sd.value_or(model.movement.nu);

  FilterOutput out;
  out.steps.reserve(observations.size());

  Vec4 mean = Vec4::Zero();
  mean.head<2>() = observations.front().position;
  Mat4 cov = Mat4::Zero();
  cov.topLeftCorner<2, 2>() = matched_total_cov(cfg.model);
  cov.bottomRightCorner<2, 2>() = vel_sd * vel_sd * Mat2::Identity();
  out.steps.push_back({observations.front().t_hours, mean, cov, {}, {}});

  const StepContextCache cache(model, h);
  for (std::size_t k = 1; k < observations.size(); ++k) {
    const std::optional<std::size_t> center =
        model.potential.select_center(mean.head<2>());
    const StepContext& ctx = cache.at(center);

    // Prediction: the linear flow applied to the residual-ODE step.
    const Vec4 pred_mean =
        ou_flow(ctx, ode_flow(model, center, mean, h), Vec4::Zero());
    Mat4 pred_cov =
        ctx.exp_drift * cov * ctx.exp_drift.transpose() + ctx.cov;
    if (extended) {
      Mat4 g4 = Mat4::Zero();
      g4.bottomLeftCorner<2, 2>() =
          residual_velocity_jacobian(model, center, mean.head<2>());
      const Mat4 eg = ctx.exp_drift * g4;
      pred_cov += h * h * eg * cov * eg.transpose();
    }
    repair_psd(pred_cov, out.psd_repairs);

    // Correction with observed position.
    Mat2 innovation_cov = pred_cov.topLeftCorner<2, 2>() + obs_cov;
    innovation_cov = (0.5 * (innovation_cov + innovation_cov.transpose())).eval();
    Mat2 innovation_inv;
    {
      const Eigen::SelfAdjointEigenSolver<Mat2> eig(innovation_cov);
      if (eig.eigenvalues().minCoeff() <= 0.0) {
        ++out.psd_repairs;
        const double floor =
            1e-12 * std::max(1.0, std::abs(innovation_cov.trace()));
        const Vec2 lam = eig.eigenvalues().cwiseMax(floor);
        innovation_inv = eig.eigenvectors() *
                         lam.cwiseInverse().asDiagonal() *
                         eig.eigenvectors().transpose();
      } else {
        innovation_inv = innovation_cov.inverse();
      }
    }
    const Eigen::Matrix<double, 4, 2> gain =
        pred_cov.leftCols<2>() * innovation_inv;
    mean = pred_mean +
           gain * (observations[k].position - pred_mean.head<2>());
    cov = pred_cov - gain * pred_cov.topRows<2>();
    repair_psd(cov, out.psd_repairs);

    out.steps.push_back({observations[k].t_hours, mean, cov, {}, {}});
  }
  return out;
}

Vec4 GaussianMixtureProposal::sample(RandomStream& rng) const {
  std::size_t pick = 0;
  if (components.size() > 1) {
    const double u = rng.uniform();
    double acc = 0.0;
    for (std::size_t i = 0; i < components.size(); ++i) {
      acc += std::exp(components[i].log_weight);
      if (u < acc || i + 1 == components.size()) {
        pick = i;
        break;
      }
    }
  }
  Vec4 z;
  for (int i = 0; i < 4; ++i) z(i) = rng.normal();
  return components[pick].mean + components[pick].factor * z;
}

double GaussianMixtureProposal::log_density(const Vec4& u) const {
  double acc = kNegInf;
  for (const Component& c : components)
    acc = log_sum_exp(
        acc, c.log_weight + log_normal4(u - c.mean, c.precision, c.logdet));
  return acc;
}

Vec2 PositionMixtureProposal::sample(RandomStream& rng) const {
  std::size_t pick = 0;
  if (components.size() > 1) {
    const double u = rng.uniform();
    double acc = 0.0;
    for (std::size_t i = 0; i < components.size(); ++i) {
      acc += std::exp(components[i].log_weight);
      if (u < acc || i + 1 == components.size()) {
        pick = i;
        break;
      }
    }
  }
  const Vec2 z(rng.normal(), rng.normal());
  return components[pick].mean + components[pick].factor * z;
}

double PositionMixtureProposal::log_density(const Vec2& x) const {
  double acc = kNegInf;
  for (const Component& c : components)
    acc = log_sum_exp(
        acc, c.log_weight + log_normal2(x - c.mean, c.precision, c.logdet));
  return acc;
}

Vec2 StrangProposal::velocity_mean(const SdeModel& model,
                                   std::optional<std::size_t> center,
                                   const Vec2& x) const {
  return pre_correction_mean.tail<2>() +
         cond_gain * (x - pre_correction_mean.head<2>()) -
         half_step * residual_velocity_drift(model, center, x);
}

Vec2 StrangProposal::sample_velocity(const SdeModel& model,
                                     std::optional<std::size_t> center,
                                     const Vec2& x, RandomStream& rng) const {
  const Vec2 z(rng.normal(), rng.normal());
  return velocity_mean(model, center, x) + cond_factor * z;
}

ProposalKit::ProposalKit(const SdeModel& model,
                         const MeasurementModel& obs_model, double h)
    : model_(model), cache_(model, h) {
  validate(obs_model);
  const std::vector<GaussianComponent> matched = moment_match(obs_model);
  const std::size_t slots = model_.potential.size() + 1;
  centers_.resize(slots);
  for (std::size_t s = 0; s < slots; ++s) {
    const std::optional<std::size_t> center =
        s + 1 < slots ? std::optional<std::size_t>(s) : std::nullopt;
    const StepContext& ctx = cache_.at(center);
    if (ctx.cov.trace() <= 0.0)
      throw std::invalid_argument(
          "particle proposals need positive process noise");
    CenterCache& cc = centers_[s];
    const Mat4 q = jittered(ctx.cov);
    cc.cov_inv = q.inverse();
    cc.cov_logdet = logdet_pd(q);
    const Mat2 qxx = q.topLeftCorner<2, 2>();
    cc.qxx_inv = qxx.inverse();
    cc.qxx_logdet = logdet_pd(qxx);
    cc.cond_gain = q.bottomLeftCorner<2, 2>() * cc.qxx_inv;
    Mat2 cond = q.bottomRightCorner<2, 2>() -
                cc.cond_gain * q.topRightCorner<2, 2>();
    cond = jittered(Mat2(0.5 * (cond + cond.transpose())));
    cc.cond_cov = cond;
    cc.cond_factor = mvn_factor(cond);
    cc.cond_logdet = logdet_pd(cond);

    for (const GaussianComponent& comp : matched) {
      const Mat2 obs_prec = comp.cov.inverse();
      CenterCache::LtComponent lt;
      lt.log_weight = std::log(comp.weight);
      lt.precision = cc.cov_inv;
      lt.precision.topLeftCorner<2, 2>() += obs_prec;
      lt.cov = lt.precision.inverse();
      lt.cov = 0.5 * (lt.cov + lt.cov.transpose()).eval();
      lt.factor = mvn_factor(lt.cov);
      lt.logdet = logdet_pd(lt.cov);
      lt.from_prior = lt.cov * cc.cov_inv;
      lt.from_obs = lt.cov.leftCols<2>() * obs_prec;
      cc.lt.push_back(lt);

      CenterCache::StrangComponent st;
      st.log_weight = std::log(comp.weight);
      st.precision = cc.qxx_inv + obs_prec;
      st.cov = st.precision.inverse();
      st.cov = 0.5 * (st.cov + st.cov.transpose()).eval();
      st.factor = mvn_factor(st.cov);
      st.logdet = logdet_pd(st.cov);
      st.from_prior = st.cov * cc.qxx_inv;
      st.from_obs = st.cov * obs_prec;
      cc.strang.push_back(st);
    }
  }
}

const ProposalKit::CenterCache& ProposalKit::cache_for(
    std::optional<std::size_t> center) const {
  return center ? centers_.at(*center) : centers_.back();
}

Vec4 ProposalKit::lt_mean(const Vec4& u_prev) const {
  const std::optional<std::size_t> center = center_for(u_prev.head<2>());
  const StepContext& ctx = cache_.at(center);
  return ou_flow(ctx, ode_flow(model_, center, u_prev, ctx.step), Vec4::Zero());
}

Vec4 ProposalKit::strang_mean(const Vec4& u_prev) const {
  const std::optional<std::size_t> center = center_for(u_prev.head<2>());
  const StepContext& ctx = cache_.at(center);
  return ou_flow(ctx, ode_flow(model_, center, u_prev, 0.5 * ctx.step),
                 Vec4::Zero());
}

GaussianMixtureProposal ProposalKit::lt_proposal(const Vec4& u_prev,
                                                 const Vec2& y) const {
  const std::optional<std::size_t> center = center_for(u_prev.head<2>());
  const CenterCache& cc = cache_for(center);
  const StepContext& ctx = cache_.at(center);
  const Vec4 mu =
      ou_flow(ctx, ode_flow(model_, center, u_prev, ctx.step), Vec4::Zero());
  GaussianMixtureProposal proposal;
  proposal.components.reserve(cc.lt.size());
  for (const CenterCache::LtComponent& ltc : cc.lt) {
    GaussianMixtureProposal::Component c;
    c.log_weight = ltc.log_weight;
    c.mean = ltc.from_prior * mu + ltc.from_obs * y;
    c.cov = ltc.cov;
    c.precision = ltc.precision;
    c.factor = ltc.factor;
    c.logdet = ltc.logdet;
    proposal.components.push_back(c);
  }
  return proposal;
}

StrangProposal ProposalKit::strang_proposal(const Vec4& u_prev,
                                            const Vec2& y) const {
  const std::optional<std::size_t> center = center_for(u_prev.head<2>());
  const CenterCache& cc = cache_for(center);
  const StepContext& ctx = cache_.at(center);
  const Vec4 m =
      ou_flow(ctx, ode_flow(model_, center, u_prev, 0.5 * ctx.step),
              Vec4::Zero());
  StrangProposal proposal;
  proposal.pre_correction_mean = m;
  proposal.half_step = 0.5 * ctx.step;
  proposal.cond_gain = cc.cond_gain;
  proposal.cond_cov = cc.cond_cov;
  proposal.cond_factor = cc.cond_factor;
  proposal.cond_logdet = cc.cond_logdet;
  proposal.position.components.reserve(cc.strang.size());
  for (const CenterCache::StrangComponent& st : cc.strang) {
    PositionMixtureProposal::Component c;
    c.log_weight = st.log_weight;
    c.mean = st.from_prior * m.head<2>() + st.from_obs * y;
    c.cov = st.cov;
    c.precision = st.precision;
    c.factor = st.factor;
    c.logdet = st.logdet;
    proposal.position.components.push_back(c);
  }
  return proposal;
}

double ProposalKit::log_lt_transition(const Vec4& u, const Vec4& u_prev) const {
  const std::optional<std::size_t> center = center_for(u_prev.head<2>());
  const CenterCache& cc = cache_for(center);
  const StepContext& ctx = cache_.at(center);
  const Vec4 mu =
      ou_flow(ctx, ode_flow(model_, center, u_prev, ctx.step), Vec4::Zero());
  return log_normal4(u - mu, cc.cov_inv, cc.cov_logdet);
}

double ProposalKit::log_strang_position_transition(const Vec2& x,
                                                   const Vec4& u_prev) const {
  const std::optional<std::size_t> center = center_for(u_prev.head<2>());
  const CenterCache& cc = cache_for(center);
  const StepContext& ctx = cache_.at(center);
  const Vec4 m =
      ou_flow(ctx, ode_flow(model_, center, u_prev, 0.5 * ctx.step),
              Vec4::Zero());
  return log_normal2(x - m.head<2>(), cc.qxx_inv, cc.qxx_logdet);
}

std::vector<std::size_t> systematic_resample(const std::vector<double>& weights,
                                             RandomStream& rng) {
  const std::size_t n = weights.size();
  if (n == 0) throw std::invalid_argument("empty weight vector");
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0)) throw std::invalid_argument("negative weight");
    total += w;
  }
  if (!(total > 0.0)) throw std::invalid_argument("all weights are zero");
  std::vector<std::size_t> ancestors(n);
  const double start = rng.uniform() * total / static_cast<double>(n);
  double cumulative = weights[0];
  std::size_t j = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double point =
        start + total * static_cast<double>(i) / static_cast<double>(n);
    while (cumulative < point && j + 1 < n) cumulative += weights[++j];
    ancestors[i] = j;
  }
  return ancestors;
}

double effective_sample_size(const std::vector<double>& weights) {
  double sum = 0.0, sum2 = 0.0;
  for (double w : weights) {
    sum += w;
    sum2 += w * w;
  }
  if (!(sum2 > 0.0)) return 0.0;
  return sum * sum / sum2;
}

FilterOutput run_particle_filter(const ObservationSeries& observations,
                                 const FilterConfig& cfg,
                                 const SdeModel& model_in, double h,
                                 RandomStream& rng) {
  validate(cfg);
  if (cfg.algorithm != FilterAlgorithm::Particle)
    throw std::invalid_argument("non-particle config passed to particle filter");
  check_observations(observations, h);
  const SdeModel model = effective_model(model_in, cfg);
  validate(model);
  const ProposalKit kit(model, cfg.model, h);
  const std::size_t n_particles = cfg.particle_count;
  const double log_k = std::log(static_cast<double>(n_particles));
  const double vel_sd = cfg.initial_velocity_sd.value_or(model.movement.nu);
  const std::vector<GaussianComponent> matched = moment_match(cfg.model);

  FilterOutput out;
  out.steps.reserve(observations.size());

  // Initial cloud around the first observation.  The proposal equals the
  // initial law of the Gaussian filters (positions around y0 with the
  // moment-matched covariance, velocities at the speed-scale prior), so the
  // importance weights start uniform; weighting by the likelihood here would
  // count y0 twice and bias the early posterior.
  std::vector<Vec4> states(n_particles);
  std::vector<double> log_w(n_particles);
  {
    const Vec2 y0 = observations.front().position;
    std::vector<Mat2> factors;
    factors.reserve(matched.size());
    for (const GaussianComponent& c : matched)
      factors.push_back(Mat2(mvn_factor(c.cov)));
    for (std::size_t i = 0; i < n_particles; ++i) {
      std::size_t pick = 0;
      if (matched.size() > 1) {
        const double u = rng.uniform();
        double acc = 0.0;
        for (std::size_t c = 0; c < matched.size(); ++c) {
          acc += matched[c].weight;
          if (u < acc || c + 1 == matched.size()) {
            pick = c;
            break;
          }
        }
      }
      Vec4 u;
      u.head<2>() = y0 + factors[pick] * Vec2(rng.normal(), rng.normal());
      u.tail<2>() = vel_sd * Vec2(rng.normal(), rng.normal());
      states[i] = u;
      log_w[i] = 0.0;
    }
  }

  std::vector<double> norm_w(n_particles);
  std::vector<Vec4> next_states(n_particles);
  std::vector<double> log_inc(n_particles);

  auto emit = [&](double t, std::optional<double> evidence_inc,
                  std::size_t step_index) {
    const double total = log_sum_exp(log_w);
    if (total == kNegInf)
      throw FilterError("all particle weights vanished", step_index);
    for (std::size_t i = 0; i < n_particles; ++i)
      norm_w[i] = std::exp(log_w[i] - total);
    Vec4 mean = Vec4::Zero();
    for (std::size_t i = 0; i < n_particles; ++i)
      mean += norm_w[i] * states[i];
    Mat4 cov = Mat4::Zero();
    for (std::size_t i = 0; i < n_particles; ++i) {
      const Vec4 d = states[i] - mean;
      cov += norm_w[i] * d * d.transpose();
    }
    out.steps.push_back(
        {t, mean, cov, effective_sample_size(norm_w), evidence_inc});
  };

  emit(observations.front().t_hours, std::nullopt, 0);

  std::vector<std::size_t> ancestors(n_particles);
  for (std::size_t k = 1; k < observations.size(); ++k) {
    const Vec2& y = observations[k].position;

    const bool resample =
        cfg.resampling == ResamplingPolicy::EveryStep ||
        effective_sample_size(norm_w) <
            0.5 * static_cast<double>(n_particles);
    if (resample) {
      ancestors = systematic_resample(norm_w, rng);
      ++out.resamples;
    } else {
      for (std::size_t i = 0; i < n_particles; ++i) ancestors[i] = i;
    }

    for (std::size_t i = 0; i < n_particles; ++i) {
      const Vec4& u_prev = states[ancestors[i]];
      const std::optional<std::size_t> center =
          kit.center_for(u_prev.head<2>());
      Vec4 u;
      double log_ratio;  // log p_transition - log q, scheme-specific
      if (cfg.scheme == Scheme::LieTrotter) {
        const GaussianMixtureProposal q = kit.lt_proposal(u_prev, y);
        u = q.sample(rng);
        log_ratio = kit.log_lt_transition(u, u_prev) - q.log_density(u);
      } else {
        const StrangProposal q = kit.strang_proposal(u_prev, y);
        const Vec2 x = q.position.sample(rng);
        u.head<2>() = x;
        u.tail<2>() = q.sample_velocity(model, center, x, rng);
        log_ratio = kit.log_strang_position_transition(x, u_prev) -
                    q.position.log_density(x);
      }
      double lw = log_density(cfg.model, y - u.head<2>()) + log_ratio;
      if (cfg.hard_constraint_weights && model.domain &&
          !model.domain->contains(u.head<2>()))
        lw = kNegInf;
      next_states[i] = u;
      log_inc[i] = lw;
    }

    double evidence_inc;
    if (resample) {
      evidence_inc = log_sum_exp(log_inc) - log_k;
      log_w = log_inc;
    } else {
      for (std::size_t i = 0; i < n_particles; ++i)
        log_inc[i] += std::log(norm_w[i]);
      evidence_inc = log_sum_exp(log_inc);
      log_w = log_inc;
    }
    states.swap(next_states);
    emit(observations[k].t_hours, evidence_inc, k);
  }
  return out;
}

FilterOutput run_filter(const ObservationSeries& observations,
                        const FilterConfig& cfg, const SdeModel& model,
                        double h, RandomStream& rng) {
  if (cfg.algorithm == FilterAlgorithm::Particle)
    return run_particle_filter(observations, cfg, model, h, rng);
  return run_gaussian_filter(observations, cfg, model, h);
}

void write_filter_output(const std::filesystem::path& file,
                         const FilterOutput& output) {
  std::ofstream out(file);
  if (!out)
    throw std::runtime_error("cannot write filter output: " + file.string());
  out.precision(17);
  out << "t_hours,mean_x1,mean_x2,mean_v1,mean_v2,ess\n";
  for (const StepEstimate& s : output.steps) {
    out << s.t_hours << "," << s.mean(0) << "," << s.mean(1) << ","
        << s.mean(2) << "," << s.mean(3) << ",";
    if (s.ess) out << *s.ess;
    out << "\n";
  }
}

void write_filter_covariances(const std::filesystem::path& file,
                              const FilterOutput& output) {
  std::ofstream out(file);
  if (!out)
    throw std::runtime_error("cannot write covariance file: " + file.string());
  out.precision(17);
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c)
      out << "r" << r << "c" << c << (r == 3 && c == 3 ? "\n" : ",");
  for (const StepEstimate& s : output.steps) {
    const Mat4 cov = s.covariance.value_or(Mat4::Zero());
    for (int r = 0; r < 4; ++r)
      for (int c = 0; c < 4; ++c)
        out << cov(r, c) << (r == 3 && c == 3 ? "\n" : ",");
  }
}

}  // namespace penlang
