#include "alab/merit.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace alab {

void CompensatedSum::add(double v) {
  const double t = sum_ + v;
  if (std::abs(sum_) >= std::abs(v)) {
    comp_ += (sum_ - t) + v;
  } else {
    comp_ += (v - t) + sum_;
  }
  sum_ = t;
}

SolutionStats solution_stats(const ProblemFamily& family, std::span<const double> y,
                             std::span<const double> x, const MeritConfig& cfg) {
  if (!(cfg.rho > 0.0)) throw std::invalid_argument("merit: rho must be positive");
  const ConstraintResidual r = residuals(family, y, x);
  SolutionStats s;
  s.objective = objective(family, y);
  for (double e : r.eq) s.eq_l1 += std::abs(e);
  for (std::size_t i = 0; i < family.n_ineq_rows(); ++i) s.ineq_l1 += r.stacked[i];
  for (double c : r.stacked) s.residual_sq += c * c;
  s.merit = s.objective + cfg.rho * s.residual_sq;
  return s;
}

double merit(const ProblemFamily& family, std::span<const double> y, std::span<const double> x,
             const MeritConfig& cfg) {
  return solution_stats(family, y, x, cfg).merit;
}

MeritReport aggregate(std::span<const SolutionStats> stats) {
  if (stats.empty()) throw std::invalid_argument("aggregate: empty batch");
  CompensatedSum obj, eq, ineq, mer;
  MeritReport r;
  r.max_objective = r.max_merit = -std::numeric_limits<double>::infinity();
  for (const auto& s : stats) {
    obj.add(s.objective);
    eq.add(s.eq_l1);
    ineq.add(s.ineq_l1);
    mer.add(s.merit);
    r.max_objective = std::max(r.max_objective, s.objective);
    r.max_eq_l1 = std::max(r.max_eq_l1, s.eq_l1);
    r.max_ineq_l1 = std::max(r.max_ineq_l1, s.ineq_l1);
    r.max_merit = std::max(r.max_merit, s.merit);
  }
  const double n = static_cast<double>(stats.size());
  r.n_instances = stats.size();
  r.mean_objective = obj.value() / n;
  r.mean_eq_l1 = eq.value() / n;
  r.mean_ineq_l1 = ineq.value() / n;
  r.mean_merit = mer.value() / n;
  // A mean can exceed the max by an ulp when all entries are equal.
  r.max_objective = std::max(r.max_objective, r.mean_objective);
  r.max_eq_l1 = std::max(r.max_eq_l1, r.mean_eq_l1);
  r.max_ineq_l1 = std::max(r.max_ineq_l1, r.mean_ineq_l1);
  r.max_merit = std::max(r.max_merit, r.mean_merit);
  return r;
}

MeritReport evaluate_solutions(const ProblemFamily& family, const Matrix& ys, const Matrix& xs,
                               const MeritConfig& cfg) {
  if (ys.rows() != xs.rows()) throw std::invalid_argument("evaluate_solutions: row count mismatch");
  std::vector<SolutionStats> stats(ys.rows());
  for (std::size_t i = 0; i < ys.rows(); ++i) stats[i] = solution_stats(family, ys.row(i), xs.row(i), cfg);
  return aggregate(stats);
}

std::string merit_csv_header() {
  return "run,n_instances,mean_objective,max_objective,mean_eq_l1,max_eq_l1,mean_ineq_l1,max_ineq_l1,"
         "mean_merit,max_merit";
}

std::string merit_csv_row(const std::string& label, const MeritReport& r) {
  using io::fmt_real;
  return label + "," + std::to_string(r.n_instances) + "," + fmt_real(r.mean_objective) + "," +
         fmt_real(r.max_objective) + "," + fmt_real(r.mean_eq_l1) + "," + fmt_real(r.max_eq_l1) + "," +
         fmt_real(r.mean_ineq_l1) + "," + fmt_real(r.max_ineq_l1) + "," + fmt_real(r.mean_merit) + "," +
         fmt_real(r.max_merit);
}

io::json to_json(const MeritReport& r) {
  return {{"n_instances", r.n_instances},   {"mean_objective", r.mean_objective},
          {"max_objective", r.max_objective}, {"mean_eq_l1", r.mean_eq_l1},
          {"max_eq_l1", r.max_eq_l1},       {"mean_ineq_l1", r.mean_ineq_l1},
          {"max_ineq_l1", r.max_ineq_l1},   {"mean_merit", r.mean_merit},
          {"max_merit", r.max_merit}};
}

MeritReport merit_report_from_json(const io::json& j) {
  MeritReport r;
  r.n_instances = j.at("n_instances").get<std::size_t>();
  r.mean_objective = j.at("mean_objective").get<double>();
  r.max_objective = j.at("max_objective").get<double>();
  r.mean_eq_l1 = j.at("mean_eq_l1").get<double>();
  r.max_eq_l1 = j.at("max_eq_l1").get<double>();
  r.mean_ineq_l1 = j.at("mean_ineq_l1").get<double>();
  r.max_ineq_l1 = j.at("max_ineq_l1").get<double>();
  r.mean_merit = j.at("mean_merit").get<double>();
  r.max_merit = j.at("max_merit").get<double>();
  return r;
}

}  // namespace alab
