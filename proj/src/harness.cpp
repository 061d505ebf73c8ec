#include "penlang/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <json.hpp>

namespace penlang {
namespace {

using nlohmann::json;

void check_keys(const json& obj, std::initializer_list<const char*> allowed,
                const std::string& where) {
  for (const auto& item : obj.items()) {
    bool known = false;
    for (const char* key : allowed)
      if (item.key() == key) {
        known = true;
        break;
      }
    if (!known)
      throw std::runtime_error("unknown key '" + item.key() + "' in " + where);
  }
}

Vec2 parse_vec2(const json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 2)
    throw std::runtime_error(where + " must be an array of 2 numbers");
  return {j[0].get<double>(), j[1].get<double>()};
}

Scheme parse_scheme(const std::string& name, const std::string& where) {
  if (name == "lie_trotter") return Scheme::LieTrotter;
  if (name == "strang") return Scheme::Strang;
  throw std::runtime_error(where + ": unknown scheme '" + name +
                           "' (expected lie_trotter or strang)");
}

MeasurementModel parse_noise(const json& j) {
  const std::string type = j.value("type", "gaussian");
  if (type == "gaussian") {
    check_keys(j, {"type", "sigma"}, "noise");
    return GaussianError{j.value("sigma", 0.2)};
  }
  if (type == "student") {
    check_keys(j, {"type", "sigma", "dof"}, "noise");
    return StudentError{j.value("sigma", 0.2), j.value("dof", 3.0)};
  }
  if (type == "argos") {
    check_keys(j, {"type", "sigma", "dof", "rho", "anisotropy", "mix_weight"},
               "noise");
    return ArgosError{j.value("sigma", 0.2), j.value("dof", 3.0),
                      j.value("rho", 0.7), j.value("anisotropy", 0.4),
                      j.value("mix_weight", 0.5)};
  }
  throw std::runtime_error("unknown noise.type \"" + type +
                           "\"; expected gaussian, student or argos");
}

std::string format_interval(double minutes) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", minutes);
  return buf;
}

std::string sanitize(const std::string& text) {
  std::string out = text;
  for (char& c : out)
    if (c == ',' || c == '\n' || c == '\r') c = ';';
  return out;
}

}  // namespace

double LambdaRule::lambda_for(double h_sim) const {
  return scale * std::pow(h_sim, exponent);
}

FilterEntry parse_method(const std::string& method) {
  FilterEntry e;
  e.method = method;
  std::string base = method;
  if (base.size() > 4 && base.substr(base.size() - 4) == "_pen") {
    e.penalized = true;
    base = base.substr(0, base.size() - 4);
  }
  if (base == "kf") {
    e.algorithm = FilterAlgorithm::Kalman;
  } else if (base == "ekf") {
    e.algorithm = FilterAlgorithm::ExtendedKalman;
  } else if (base == "pf_lt") {
    e.algorithm = FilterAlgorithm::Particle;
    e.scheme = Scheme::LieTrotter;
  } else if (base == "pf_strang") {
    e.algorithm = FilterAlgorithm::Particle;
    e.scheme = Scheme::Strang;
  } else {
    throw std::invalid_argument(
        "unknown filter method '" + method +
        "' (expected kf, ekf, pf_lt or pf_strang, optionally with _pen)");
  }
  return e;
}

SdeModel ExperimentConfig::sde_model() const {
  return SdeModel{movement, potential, domain, lambda()};
}

StateVector ExperimentConfig::resolved_initial_state() const {
  if (initial_state) return *initial_state;
  StateVector u0;
  if (!potential.flat()) u0.position = potential.component(0).center;
  return u0;
}

FilterConfig ExperimentConfig::filter_config(const FilterEntry& entry) const {
  FilterConfig cfg;
  cfg.algorithm = entry.algorithm;
  cfg.scheme = entry.scheme;
  cfg.penalized = entry.penalized;
  cfg.model = noise;
  cfg.particle_count = entry.particles.value_or(particles);
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw std::runtime_error("cannot open config file: " + file.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw std::runtime_error(file.string() + ": " + e.what());
  }
  check_keys(j,
             {"seed", "replicates", "t_hours", "sim_step_seconds",
              "intervals_minutes", "sim_scheme", "movement", "potential",
              "domain", "lambda", "noise", "filters", "particles",
              "initial_state", "workers", "output", "store_fine_truth"},
             "config");

  ExperimentConfig cfg;
  cfg.seed = j.value("seed", std::uint64_t{1});
  cfg.replicates = j.value("replicates", std::size_t{20});
  cfg.t_hours = j.value("t_hours", 12.0);
  cfg.sim_step_seconds = j.value("sim_step_seconds", 1.0);
  if (j.contains("intervals_minutes"))
    cfg.intervals_minutes = j["intervals_minutes"].get<std::vector<double>>();
  if (j.contains("sim_scheme"))
    cfg.sim_scheme = parse_scheme(j["sim_scheme"].get<std::string>(),
                                  "sim_scheme");
  if (j.contains("movement")) {
    const json& m = j["movement"];
    check_keys(m, {"tau", "nu", "omega"}, "movement");
    cfg.movement = {m.value("tau", 1.0), m.value("nu", 5.0),
                    m.value("omega", 0.1)};
  }
  if (j.contains("potential")) {
    std::vector<PotentialComponent> comps;
    for (const json& c : j["potential"]) {
      check_keys(c, {"alpha", "center", "precision"}, "potential component");
      PotentialComponent pc;
      pc.alpha = c.value("alpha", 1.0);
      pc.center = parse_vec2(c.at("center"), "potential center");
      const json& b = c.at("precision");
      if (!b.is_array() || b.size() != 3)
        throw std::runtime_error(
            "potential precision must be [b11, b12, b22]");
      pc.precision << b[0].get<double>(), b[1].get<double>(),
          b[1].get<double>(), b[2].get<double>();
      comps.push_back(pc);
    }
    cfg.potential = PotentialSpec(std::move(comps));
  }
  if (j.contains("domain")) {
    const std::filesystem::path p = j["domain"].get<std::string>();
    cfg.domain = PolygonDomain::load(
        p.is_absolute() ? p : file.parent_path() / p);
  }
  if (j.contains("lambda")) {
    const json& l = j["lambda"];
    check_keys(l, {"scale", "exponent"}, "lambda");
    cfg.lambda_rule = {l.value("scale", 1.0), l.value("exponent", 0.8)};
  }
  if (j.contains("noise")) cfg.noise = parse_noise(j["noise"]);
  if (j.contains("filters")) {
    for (const json& f : j["filters"]) {
      check_keys(f, {"method", "particles"}, "filter entry");
      FilterEntry e = parse_method(f.at("method").get<std::string>());
      if (f.contains("particles"))
        e.particles = f["particles"].get<std::size_t>();
      cfg.filters.push_back(std::move(e));
    }
  }
  cfg.particles = j.value("particles", std::size_t{500});
  if (j.contains("initial_state")) {
    const json& u = j["initial_state"];
    if (!u.is_array() || u.size() != 4)
      throw std::runtime_error("initial_state must be [x1, x2, v1, v2]");
    StateVector s;
    s.position = {u[0].get<double>(), u[1].get<double>()};
    s.velocity = {u[2].get<double>(), u[3].get<double>()};
    cfg.initial_state = s;
  }
  cfg.workers = j.value("workers", std::size_t{1});
  if (j.contains("output"))
    cfg.output_dir = std::filesystem::path(j["output"].get<std::string>());
  cfg.store_fine_truth = j.value("store_fine_truth", false);
  validate(cfg);
  return cfg;
}

void validate(const ExperimentConfig& config) {
  validate(config.movement);
  validate(config.noise);
  if (config.replicates < 1)
    throw std::invalid_argument("need at least one replicate");
  if (!(config.t_hours > 0.0))
    throw std::invalid_argument("t_hours must be > 0");
  if (!(config.sim_step_seconds > 0.0))
    throw std::invalid_argument("sim_step_seconds must be > 0");
  if (config.workers < 1)
    throw std::invalid_argument("workers must be >= 1");
  if (!(config.lambda_rule.scale > 0.0) ||
      !std::isfinite(config.lambda_rule.exponent))
    throw std::invalid_argument("invalid lambda rule");
  if (config.particles < 2)
    throw std::invalid_argument("particle default must be >= 2");
  if (config.initial_state && !config.initial_state->finite())
    throw std::invalid_argument("initial_state must be finite");
  const double steps_total = config.t_hours * 3600.0 / config.sim_step_seconds;
  if (std::abs(steps_total - std::round(steps_total)) > 1e-9 * steps_total)
    throw std::invalid_argument(
        "sim_step_seconds must divide the horizon exactly");
  if (config.intervals_minutes.empty())
    throw std::invalid_argument("need at least one sampling interval");
  for (double m : config.intervals_minutes) {
    if (!(m > 0.0)) throw std::invalid_argument("intervals must be > 0");
    const double factor = m * 60.0 / config.sim_step_seconds;
    if (std::abs(factor - std::round(factor)) > 1e-9 * factor)
      throw std::invalid_argument(
          "sim_step_seconds must divide every interval exactly");
    const double count = steps_total / factor;
    if (std::abs(count - std::round(count)) > 1e-9 * std::max(1.0, count))
      throw std::invalid_argument(
          "every interval must divide the horizon exactly");
  }
  for (const FilterEntry& e : config.filters) {
    if (e.algorithm == FilterAlgorithm::Particle &&
        e.particles.value_or(config.particles) < 2)
      throw std::invalid_argument("particle filters need >= 2 particles");
  }
}

Scores score_positions(const Trajectory& truth,
                       const std::vector<Vec2>& positions) {
  if (truth.size() != positions.size() || truth.empty())
    throw std::invalid_argument("scoring needs equal nonempty sequences");
  Scores s;
  double sum = 0.0;
  for (std::size_t k = 0; k < truth.size(); ++k) {
    const double err = (truth[k].state.position - positions[k]).norm();
    sum += err;
    s.max_error_km = std::max(s.max_error_km, err);
  }
  s.rmse_km = sum / static_cast<double>(truth.size());
  return s;
}

Scores score(const Trajectory& truth, const FilterOutput& estimates) {
  if (truth.size() != estimates.steps.size())
    throw std::invalid_argument("scoring needs aligned sequences");
  std::vector<Vec2> positions;
  positions.reserve(truth.size());
  for (std::size_t k = 0; k < truth.size(); ++k) {
    if (std::abs(truth[k].t_hours - estimates.steps[k].t_hours) >
        1e-7 * std::max(1.0, std::abs(truth[k].t_hours)))
      throw std::invalid_argument("scoring needs aligned timestamps");
    positions.push_back(estimates.steps[k].mean.head<2>());
  }
  return score_positions(truth, positions);
}

ObservationSeries add_noise(const Trajectory& traj,
                            const MeasurementModel& model, RandomStream& rng) {
  if (traj.empty()) throw std::invalid_argument("empty trajectory");
  validate(model);
  ObservationSeries obs;
  obs.reserve(traj.size());
  for (const TrajectoryPoint& p : traj)
    obs.push_back(
        {p.t_hours, p.state.position + sample_error(model, rng)});
  return obs;
}

double outside_fraction(const std::vector<Vec2>& positions,
                        const std::optional<PolygonDomain>& domain) {
  if (!domain || positions.empty()) return 0.0;
  std::size_t outside = 0;
  for (const Vec2& x : positions)
    if (!domain->contains(x)) ++outside;
  return static_cast<double>(outside) / static_cast<double>(positions.size());
}

std::vector<SummaryRow> summarize(const std::vector<MetricsRow>& rows) {
  std::vector<SummaryRow> summary;
  for (const MetricsRow& row : rows) {
    SummaryRow* slot = nullptr;
    for (SummaryRow& s : summary)
      if (s.method == row.method &&
          s.interval_minutes == row.interval_minutes) {
        slot = &s;
        break;
      }
    if (!slot) {
      summary.push_back({row.method, row.interval_minutes, 0, 0, 0.0, 0.0});
      slot = &summary.back();
    }
    if (row.failed) {
      ++slot->failures;
      continue;
    }
    ++slot->count;
    slot->mean_rmse_km += row.rmse_km.value_or(0.0);
    slot->mean_max_error_km += row.max_error_km.value_or(0.0);
  }
  for (SummaryRow& s : summary) {
    if (s.count == 0) continue;
    s.mean_rmse_km /= static_cast<double>(s.count);
    s.mean_max_error_km /= static_cast<double>(s.count);
  }
  return summary;
}

namespace {

std::vector<MetricsRow> run_replicate(const ExperimentConfig& config,
                                      std::size_t replicate) {
  const SdeModel model = config.sde_model();
  const double h_sim = config.sim_step_hours();
  const auto n_steps = static_cast<std::size_t>(
      std::llround(config.t_hours * 3600.0 / config.sim_step_seconds));
  RandomStream sim_rng = RandomStream::derive(config.seed, {1, replicate});
  const Trajectory truth =
      simulate_trajectory(model, config.resolved_initial_state(), h_sim,
                          n_steps, config.sim_scheme, sim_rng);

  std::optional<std::filesystem::path> rep_dir;
  if (config.output_dir) {
    char name[32];
    std::snprintf(name, sizeof(name), "rep_%03zu", replicate);
    rep_dir = *config.output_dir / name;
    std::filesystem::create_directories(*rep_dir);
    if (config.store_fine_truth)
      write_trajectory(*rep_dir / "truth_fine.csv", truth);
  }

  std::vector<MetricsRow> rows;
  for (std::size_t i = 0; i < config.intervals_minutes.size(); ++i) {
    const double interval = config.intervals_minutes[i];
    const auto factor = static_cast<std::size_t>(
        std::llround(interval * 60.0 / config.sim_step_seconds));
    const Trajectory truth_i = subsample(truth, factor);
    const double h_obs = static_cast<double>(factor) * h_sim;
    RandomStream obs_rng =
        RandomStream::derive(config.seed, {2, replicate, i});
    const ObservationSeries obs = add_noise(truth_i, config.noise, obs_rng);

    std::vector<Vec2> obs_positions;
    obs_positions.reserve(obs.size());
    for (const Observation& o : obs) obs_positions.push_back(o.position);

    MetricsRow before;
    before.method = "before";
    before.interval_minutes = interval;
    before.replicate = replicate;
    const Scores before_scores = score_positions(truth_i, obs_positions);
    before.rmse_km = before_scores.rmse_km;
    before.max_error_km = before_scores.max_error_km;
    before.outside_fraction = outside_fraction(obs_positions, config.domain);
    rows.push_back(before);

    if (rep_dir) {
      const std::string tag = format_interval(interval) + "min";
      write_trajectory(*rep_dir / ("truth_" + tag + ".csv"), truth_i);
      write_observations(*rep_dir / ("obs_" + tag + ".csv"), obs);
    }

    for (std::size_t f = 0; f < config.filters.size(); ++f) {
      const FilterEntry& entry = config.filters[f];
      MetricsRow row;
      row.method = entry.method;
      row.interval_minutes = interval;
      row.replicate = replicate;
      RandomStream filter_rng =
          RandomStream::derive(config.seed, {3, replicate, i, f});
      const auto t0 = std::chrono::steady_clock::now();
      try {
        const FilterOutput output = run_filter(
            obs, config.filter_config(entry), model, h_obs, filter_rng);
        const Scores s = score(truth_i, output);
        row.rmse_km = s.rmse_km;
        row.max_error_km = s.max_error_km;
        std::vector<Vec2> means;
        means.reserve(output.steps.size());
        for (const StepEstimate& e : output.steps)
          means.push_back(e.mean.head<2>());
        row.outside_fraction = outside_fraction(means, config.domain);
        if (rep_dir) {
          const std::string tag = format_interval(interval) + "min";
          const std::string stem = "est_" + entry.method + "_" + tag;
          write_filter_output(*rep_dir / (stem + ".csv"), output);
          if (entry.algorithm != FilterAlgorithm::Particle)
            write_filter_covariances(*rep_dir / (stem + "_cov.csv"), output);
        }
      } catch (const std::exception& e) {
        row.failed = true;
        row.reason = e.what();
      }
      row.wall_time_s =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
              .count();
      rows.push_back(row);
    }
  }
  return rows;
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& config) {
  validate(config);
  if (config.output_dir)
    std::filesystem::create_directories(*config.output_dir);

  std::vector<std::vector<MetricsRow>> per_replicate(config.replicates);
  const std::size_t workers = std::min(config.workers, config.replicates);
  if (workers <= 1) {
    for (std::size_t r = 0; r < config.replicates; ++r)
      per_replicate[r] = run_replicate(config, r);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w)
      pool.emplace_back([&] {
        for (;;) {
          const std::size_t r = next.fetch_add(1);
          if (r >= config.replicates) return;
          per_replicate[r] = run_replicate(config, r);
        }
      });
    for (std::thread& t : pool) t.join();
  }

  ExperimentResult result;
  for (const std::vector<MetricsRow>& rows : per_replicate)
    result.rows.insert(result.rows.end(), rows.begin(), rows.end());
  result.summary = summarize(result.rows);

  if (config.output_dir) {
    write_metrics(*config.output_dir / "metrics.csv", result.rows);
    write_timings(*config.output_dir / "timings.csv", result.rows);
    write_summary(*config.output_dir / "summary.csv", result.summary);
    nlohmann::json manifest;
    manifest["seed"] = config.seed;
    manifest["replicates"] = config.replicates;
    manifest["t_hours"] = config.t_hours;
    manifest["sim_step_seconds"] = config.sim_step_seconds;
    manifest["intervals_minutes"] = config.intervals_minutes;
    manifest["lambda"] = config.lambda();
    std::ofstream mf(*config.output_dir / "run_manifest.json");
    mf << manifest.dump(2) << "\n";
  }
  return result;
}

void write_metrics(const std::filesystem::path& file,
                   const std::vector<MetricsRow>& rows) {
  std::ofstream out(file);
  if (!out) throw std::runtime_error("cannot write metrics: " + file.string());
  out.precision(17);
  out << "method,interval_min,replicate,rmse_km,max_error_km,"
         "outside_fraction,failed,reason\n";
  for (const MetricsRow& r : rows) {
    out << r.method << "," << r.interval_minutes << "," << r.replicate << ",";
    if (r.rmse_km) out << *r.rmse_km;
    out << ",";
    if (r.max_error_km) out << *r.max_error_km;
    out << "," << r.outside_fraction << "," << (r.failed ? 1 : 0) << ","
        << sanitize(r.reason) << "\n";
  }
}

void write_timings(const std::filesystem::path& file,
                   const std::vector<MetricsRow>& rows) {
  std::ofstream out(file);
  if (!out) throw std::runtime_error("cannot write timings: " + file.string());
  out.precision(6);
  out << "method,interval_min,replicate,wall_s\n";
  for (const MetricsRow& r : rows)
    out << r.method << "," << r.interval_minutes << "," << r.replicate << ","
        << r.wall_time_s << "\n";
}

void write_summary(const std::filesystem::path& file,
                   const std::vector<SummaryRow>& rows) {
  std::ofstream out(file);
  if (!out) throw std::runtime_error("cannot write summary: " + file.string());
  out.precision(17);
  out << "method,interval_min,count,failures,mean_rmse_km,"
         "mean_max_error_km\n";
  for (const SummaryRow& s : rows)
    out << s.method << "," << s.interval_minutes << "," << s.count << ","
        << s.failures << "," << s.mean_rmse_km << "," << s.mean_max_error_km
        << "\n";
}

std::vector<MetricsRow> read_metrics(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw std::runtime_error("cannot open metrics: " + file.string());
  std::string line;
  if (!std::getline(in, line) || line.rfind("method,", 0) != 0)
    throw std::runtime_error(file.string() + ": missing metrics header");
  std::vector<MetricsRow> rows;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::vector<std::string> fields;
    std::string field;
    std::istringstream ss(line);
    while (std::getline(ss, field, ',')) fields.push_back(field);
    while (fields.size() < 8) fields.emplace_back();
    MetricsRow r;
    r.method = fields[0];
    r.interval_minutes = std::stod(fields[1]);
    r.replicate = static_cast<std::size_t>(std::stoul(fields[2]));
    if (!fields[3].empty()) r.rmse_km = std::stod(fields[3]);
    if (!fields[4].empty()) r.max_error_km = std::stod(fields[4]);
    r.outside_fraction = std::stod(fields[5]);
    r.failed = fields[6] == "1";
    r.reason = fields[7];
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace penlang
