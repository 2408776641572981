#include "alab/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "alab/merit.hpp"

namespace alab {

double mean_row_distance(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw std::invalid_argument("mean_row_distance: shape mismatch");
  if (a.rows() == 0) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < a.rows(); ++i) total += dist2(a.row(i), b.row(i));
  return total / static_cast<double>(a.rows());
}

io::json to_json(const TrajectoryPoint& p) {
  return {{"epoch", p.epoch},
          {"fitting_error", p.fitting_error},
          {"total_error", p.total_error},
          {"val_merit", p.val_merit}};
}

Decomposition trace_error_decomposition(const ProblemFamily& family, const Matrix& xs, const Matrix& labels,
                                        const Matrix& oracle_labels, const Matrix& val_xs, const Stage2Plan& plan,
                                        const Architecture& arch, std::uint64_t seed, const MeritConfig& merit) {
  const std::size_t m = oracle_labels.rows();
  if (m == 0 || m > xs.rows() || oracle_labels.cols() != labels.cols()) {
    throw std::invalid_argument("trace_error_decomposition: oracle labels must cover the first rows of the dataset (" +
                                std::to_string(m) + " rows for " + std::to_string(xs.rows()) + " inputs)");
  }
  std::vector<std::size_t> subset(m);
  for (std::size_t i = 0; i < m; ++i) subset[i] = i;
  const Matrix diag_xs = gather_rows(xs, subset);
  const Matrix diag_labels = gather_rows(labels, subset);

  Decomposition d;
  d.delta_proxy = mean_row_distance(diag_labels, oracle_labels);
  auto record = [&](std::size_t epoch, const Network& net) {
    TrajectoryPoint p;
    p.epoch = epoch;
    Matrix pred = forward(net, diag_xs);
    p.fitting_error = mean_row_distance(pred, diag_labels);
    p.total_error = mean_row_distance(pred, oracle_labels);
    p.val_merit = evaluate_model(family, net, val_xs, {}, merit).mean_merit;
    d.max_triangle_slack = std::max(d.max_triangle_slack, p.total_error - p.fitting_error - d.delta_proxy);
    if (p.total_error > p.fitting_error + d.delta_proxy + 1e-9) {
      throw std::logic_error("trace_error_decomposition: triangle inequality fails at epoch " + std::to_string(epoch));
    }
    d.points.push_back(p);
    d.predictions.push_back(std::move(pred));
  };

  const Network init = init_network(arch, seed);
  record(0, init);
  PretrainResult pre = pretrain_with_merit_stop(family, xs, labels, val_xs, plan, arch, seed, merit, &init, record);
  d.best_merit_epoch = pre.best_epoch;
  d.d_perp = effective_target_gap(d.predictions, oracle_labels);
  return d;
}

double effective_target_gap(std::span<const Matrix> predictions, const Matrix& oracle_labels) {
  if (predictions.empty()) throw std::invalid_argument("effective_target_gap: no predictions");
  const std::size_t m = oracle_labels.rows();
  if (m == 0) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& p : predictions) {
      if (p.rows() != m || p.cols() != oracle_labels.cols()) {
        throw std::invalid_argument("effective_target_gap: prediction shape does not match the oracle labels");
      }
      best = std::min(best, dist2(p.row(i), oracle_labels.row(i)));
    }
    total += best;
  }
  return total / static_cast<double>(m);
}

// ---------------------------------------------------------------------------
// Basin-radius probe

Network perturb_to_displacement(const Network& reference, const Matrix& xs, double radius, std::uint64_t seed,
                                double* scale, double* displacement) {
  if (!(radius >= 0.0)) throw std::invalid_argument("perturb_to_displacement: radius must be >= 0");
  if (scale) *scale = 0.0;
  if (displacement) *displacement = 0.0;
  if (radius == 0.0) return reference;

  Rng rng = make_rng(seed, Stream::perturbation);
  Vector dir(reference.param_count());
  for (auto& v : dir) v = standard_normal(rng);
  const Matrix base = forward(reference, xs);
  const auto theta = reference.params();

  Network trial = reference;
  auto displaced = [&](double s) {
    auto t = trial.mutable_params();
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = theta[i] + s * dir[i];
    return mean_row_distance(forward(trial, xs), base);
  };

  double lo = 0.0, hi = 1e-6;
  double d_hi = displaced(hi);
  for (int k = 0; k < 200 && d_hi < radius; ++k) {
    lo = hi;
    hi *= 2.0;
    d_hi = displaced(hi);
  }
  if (d_hi < radius) throw std::runtime_error("perturb_to_displacement: cannot reach the requested displacement");
  double s = hi, d = d_hi;
  for (int k = 0; k < 200 && std::abs(d - radius) > 1e-6 * radius; ++k) {
    s = 0.5 * (lo + hi);
    d = displaced(s);
    (d < radius ? lo : hi) = s;
  }
  d = displaced(s);
  if (scale) *scale = s;
  if (displacement) *displacement = d;
  return trial;
}

BasinProbe probe_basin_radius(const ProblemFamily& family, const Network& reference, const Matrix& train_xs,
                              const Matrix& val_xs, const Stage3Plan& plan, const BasinProbeConfig& cfg,
                              const MeritConfig& merit) {
  if (cfg.seeds.empty()) throw std::invalid_argument("probe_basin_radius: need at least one seed");
  if (!(cfg.tol >= 0.0)) throw std::invalid_argument("probe_basin_radius: tol must be >= 0");
  std::vector<double> radii = cfg.radii;
  std::sort(radii.begin(), radii.end());
  for (double r : radii) {
    if (!(r >= 0.0)) throw std::invalid_argument("probe_basin_radius: radii must be >= 0");
  }

  const std::size_t S = cfg.seeds.size();
  auto final_merit = [&](const Network& init, std::uint64_t seed) {
    return run_ssl(family, init, train_xs, val_xs, plan, seed, merit).log.back().val.mean_merit;
  };
  auto succeeds = [&](double m, std::size_t s, const BasinProbe& p) {
    const double ref = p.reference_merits[s];
    return m <= ref + cfg.tol * std::abs(ref);
  };

  BasinProbe probe;
  probe.reference_merits.resize(S);
  for (std::size_t s = 0; s < S; ++s) probe.reference_merits[s] = final_merit(reference, cfg.seeds[s]);

  for (double r : radii) {
    BasinRow row;
    row.radius = r;
    row.trials = S;
    row.scales.resize(S);
    row.displacements.resize(S);
    row.final_merits.resize(S);
    for (std::size_t s = 0; s < S; ++s) {
      if (r == 0.0) {
        row.final_merits[s] = probe.reference_merits[s];
      } else {
        const Network start =
            perturb_to_displacement(reference, val_xs, r, cfg.seeds[s], &row.scales[s], &row.displacements[s]);
        row.final_merits[s] = final_merit(start, cfg.seeds[s]);
      }
      if (succeeds(row.final_merits[s], s, probe)) ++row.successes;
    }
    row.raw_rate = static_cast<double>(row.successes) / static_cast<double>(S);
    row.smoothed_rate = probe.rows.empty() ? row.raw_rate : std::min(row.raw_rate, probe.rows.back().smoothed_rate);
    if (row.smoothed_rate >= cfg.threshold) probe.admissible_radius = r;
    probe.rows.push_back(std::move(row));
  }

  if (cfg.cold_control) {
    std::size_t ok = 0;
    for (std::size_t s = 0; s < S; ++s) {
      probe.cold_merits.push_back(final_merit(init_network(reference.arch(), cfg.seeds[s]), cfg.seeds[s]));
      if (succeeds(probe.cold_merits.back(), s, probe)) ++ok;
    }
    probe.cold_rate = static_cast<double>(ok) / static_cast<double>(S);
  }
  return probe;
}

io::json to_json(const BasinProbe& probe) {
  io::json rows = io::json::array();
  for (const auto& r : probe.rows) {
    rows.push_back({{"radius", r.radius},
                    {"scales", r.scales},
                    {"displacements", r.displacements},
                    {"final_merits", r.final_merits},
                    {"successes", r.successes},
                    {"trials", r.trials},
                    {"raw_rate", r.raw_rate},
                    {"smoothed_rate", r.smoothed_rate}});
  }
  io::json j = {{"reference", "oracle solver tier"},
                {"reference_merits", probe.reference_merits},
                {"rows", rows},
                {"admissible_radius", probe.admissible_radius}};
  if (probe.cold_rate) {
    j["cold_rate"] = *probe.cold_rate;
    j["cold_merits"] = probe.cold_merits;
  }
  return j;
}

// ---------------------------------------------------------------------------
// Label-count scaling

LogLogFit fit_log_log(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size() || xs.size() < 2) throw std::invalid_argument("fit_log_log: need >= 2 paired points");
  const std::size_t n = xs.size();
  std::vector<double> lx(n), ly(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!(xs[i] > 0.0) || !(ys[i] > 0.0)) throw std::invalid_argument("fit_log_log: values must be positive");
    lx[i] = std::log(xs[i]);
    ly[i] = std::log(ys[i]);
  }
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += lx[i];
    my += ly[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxx += (lx[i] - mx) * (lx[i] - mx);
    sxy += (lx[i] - mx) * (ly[i] - my);
    syy += (ly[i] - my) * (ly[i] - my);
  }
  if (sxx == 0.0) throw std::invalid_argument("fit_log_log: x values must not all be equal");
  LogLogFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  double sse = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double e = ly[i] - (f.intercept + f.slope * lx[i]);
    sse += e * e;
  }
  f.r2 = syy > 0.0 ? 1.0 - sse / syy : 1.0;
  return f;
}

Elbow detect_elbow(std::span<const double> counts, std::span<const double> values) {
  if (counts.size() != values.size() || counts.size() < 3) {
    throw std::invalid_argument("detect_elbow: need >= 3 paired points");
  }
  const std::size_t n = counts.size();
  const double x0 = std::log(counts.front()), x1 = std::log(counts.back());
  const double y0 = values.front(), y1 = values.back();
  Elbow e;
  if (x1 <= x0 || y0 == y1) return e;
  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) {
    const double t = (std::log(counts[i]) - x0) / (x1 - x0);
    const double yn = (values[i] - y1) / (y0 - y1);  // 1 at the first point, 0 at the last
    const double gap = (1.0 - t) - yn;               // chord minus curve
    if (gap > best) {
      best = gap;
      e.index = i;
    }
  }
  e.drop_before = values.front() - values[e.index];
  e.change_after = std::abs(values[e.index] - values.back());
  e.drop_then_plateau = y0 > y1 && e.index > 0 && e.index + 1 < n && e.drop_before > 2.0 * e.change_after;
  return e;
}

ScalingFit fit_sample_scaling(const ProblemFamily& family, const ScalingRequest& req) {
  const auto& counts = req.sample_counts;
  if (counts.size() < 3) throw std::invalid_argument("fit_sample_scaling: need >= 3 sample counts");
  for (std::size_t i = 0; i < counts.size(); ++i) {
    if (counts[i] == 0) throw std::invalid_argument("fit_sample_scaling: sample counts must be >= 1");
    if (i > 0 && counts[i] < counts[i - 1]) {
      throw std::invalid_argument("fit_sample_scaling: sample counts must be nondecreasing");
    }
  }
  if (req.seeds.empty()) throw std::invalid_argument("fit_sample_scaling: need at least one seed");
  if (req.probe_xs.rows() == 0 || req.probe_oracle.rows() != req.probe_xs.rows()) {
    throw std::invalid_argument("fit_sample_scaling: probe set and its oracle labels must match and be nonempty");
  }
  const std::size_t n_max = counts.back();
  const std::size_t pool = req.n_inputs > 0 ? req.n_inputs : n_max;

  ScalingFit fit;
  fit.sample_counts = counts;
  for (const std::uint64_t seed : req.seeds) {
    const Dataset full = build_dataset(family, n_max, req.budget, seed);
    if (full.size() != n_max) throw std::runtime_error("fit_sample_scaling: label generation skipped instances");
    const Matrix ssl_xs = sample_parameters(family, seed, pool);
    for (const std::size_t n : counts) {
      const Dataset ds = take_prefix(full, n);
      PretrainResult pre =
          pretrain_with_merit_stop(family, ds.xs, ds.ys, req.val_xs, req.stage2, req.arch, seed, req.merit);
      ScalingRun run;
      run.n_samples = n;
      run.seed = seed;
      run.best_epoch = pre.best_epoch;
      run.total_error = mean_row_distance(forward(pre.best, req.probe_xs), req.probe_oracle);
      run.warm_merit = evaluate_model(family, pre.best, req.eval_xs, {}, req.merit).mean_merit;
      run.final_merit = run.warm_merit;
      if (req.stage3) {
        SslResult ssl = run_ssl(family, pre.best, ssl_xs, req.val_xs, *req.stage3, seed, req.merit);
        run.final_merit = evaluate_model(family, ssl.final_net, req.eval_xs, req.stage3->head(), req.merit).mean_merit;
      }
      fit.runs.push_back(run);
    }
  }

  const double S = static_cast<double>(req.seeds.size());
  for (std::size_t c = 0; c < counts.size(); ++c) {
    double err = 0.0, merit_sum = 0.0;
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (std::size_t s = 0; s < req.seeds.size(); ++s) {
      const ScalingRun& r = fit.runs[s * counts.size() + c];
      err += r.total_error;
      merit_sum += r.final_merit;
      lo = std::min(lo, r.final_merit);
      hi = std::max(hi, r.final_merit);
    }
    fit.achieved_errors.push_back(err / S);
    fit.mean_merits.push_back(merit_sum / S);
    fit.min_merits.push_back(lo);
    fit.max_merits.push_back(hi);
  }
  std::vector<double> xs(counts.begin(), counts.end());
  const LogLogFit f = fit_log_log(xs, fit.achieved_errors);
  fit.fitted_slope = f.slope;
  fit.fit_r2 = f.r2;
  fit.elbow = detect_elbow(xs, fit.mean_merits);
  return fit;
}

io::json to_json(const ScalingFit& fit) {
  io::json runs = io::json::array();
  for (const auto& r : fit.runs) {
    runs.push_back({{"n_samples", r.n_samples},
                    {"seed", r.seed},
                    {"total_error", r.total_error},
                    {"warm_merit", r.warm_merit},
                    {"final_merit", r.final_merit},
                    {"best_epoch", r.best_epoch}});
  }
  return {{"reference", "oracle solver tier"},
          {"sample_counts", fit.sample_counts},
          {"achieved_errors", fit.achieved_errors},
          {"mean_merits", fit.mean_merits},
          {"min_merits", fit.min_merits},
          {"max_merits", fit.max_merits},
          {"fitted_slope", fit.fitted_slope},
          {"fit_r2", fit.fit_r2},
          {"elbow",
           {{"index", fit.elbow.index},
            {"n_samples", fit.sample_counts.at(fit.elbow.index)},
            {"drop_before", fit.elbow.drop_before},
            {"change_after", fit.elbow.change_after},
            {"drop_then_plateau", fit.elbow.drop_then_plateau}}},
          {"runs", runs}};
}

std::string scaling_csv(const ScalingFit& fit) {
  std::string out = "n_samples,mean_total_error,mean_merit,min_merit,max_merit\n";
  for (std::size_t i = 0; i < fit.sample_counts.size(); ++i) {
    out += std::to_string(fit.sample_counts[i]) + "," + io::fmt_real(fit.achieved_errors[i]) + "," +
           io::fmt_real(fit.mean_merits[i]) + "," + io::fmt_real(fit.min_merits[i]) + "," +
           io::fmt_real(fit.max_merits[i]) + "\n";
  }
  return out;
}

}  // namespace alab
