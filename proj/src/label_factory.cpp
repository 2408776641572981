#include "alab/label_factory.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <stdexcept>

#include "alab/kernels.hpp"
#include "alab/parallel.hpp"
#include "alab/rng.hpp"

namespace alab {

void SolverBudget::validate() const {
  auto fail = [](const char* field, const char* why) {
    throw std::invalid_argument(std::string("budget.") + field + ": " + why);
  };
  if (max_outer < 1) fail("max_outer", "must be >= 1");
  if (max_inner < 1) fail("max_inner", "must be >= 1");
  if (!(tol >= 0.0)) fail("tol", "must be >= 0");
  if (!(rho_init > 0.0)) fail("rho_init", "must be > 0");
  if (!(rho_growth > 1.0)) fail("rho_growth", "must be > 1");
  if (!(rho_max >= rho_init)) fail("rho_max", "must be >= rho_init");
  if (!(step_size > 0.0)) fail("step_size", "must be > 0");
}

SolverBudget tier_budget(BudgetTier tier) {
  SolverBudget b;
  b.id = tier_name(tier);
  switch (tier) {
    case BudgetTier::cheap:
      b.max_outer = 1;
      b.max_inner = 5;
      break;
    case BudgetTier::low:
      b.max_outer = 2;
      b.max_inner = 20;
      break;
    case BudgetTier::mid:
      b.max_outer = 4;
      b.max_inner = 60;
      break;
    case BudgetTier::high:
      b.max_outer = 8;
      b.max_inner = 150;
      b.mode = SolverMode::augmented_lagrangian;
      break;
    case BudgetTier::oracle:
      b.max_outer = 30;
      b.max_inner = 500;
      b.mode = SolverMode::augmented_lagrangian;
      break;
  }
  return b;
}

BudgetTier parse_tier(const std::string& name) {
  for (auto t : kAllTiers) {
    if (tier_name(t) == name) return t;
  }
  throw std::invalid_argument("unknown budget tier '" + name + "' (expected cheap|low|mid|high|oracle)");
}

std::string tier_name(BudgetTier tier) {
  switch (tier) {
    case BudgetTier::cheap:
      return "cheap";
    case BudgetTier::low:
      return "low";
    case BudgetTier::mid:
      return "mid";
    case BudgetTier::high:
      return "high";
    case BudgetTier::oracle:
      return "oracle";
  }
  return "unknown";
}

namespace {

// Augmented Lagrangian with penalty convention ρ‖c‖²:
//   f + Σ_eq (μ h + ρ h²) + Σ_ineq (max(0, μ + 2ρ g)² - μ²) / (4ρ)
// With all μ = 0 this is exactly the quadratic penalty f + ρ‖c‖².
class PenaltyObjective {
 public:
  PenaltyObjective(const ProblemFamily& f, std::span<const double> x) : f_(f), x_(x) {
    mu_ineq_.assign(f.n_ineq_rows(), 0.0);
    mu_eq_.assign(f.n_eq(), 0.0);
  }

  double value(std::span<const double> y) const {
    const ConstraintResidual r = residuals(f_, y, x_);
    double v = objective(f_, y);
    for (std::size_t j = 0; j < r.eq.size(); ++j) v += mu_eq_[j] * r.eq[j] + rho_ * r.eq[j] * r.eq[j];
    for (std::size_t i = 0; i < r.ineq.size(); ++i) {
      const double s = std::max(0.0, mu_ineq_[i] + 2.0 * rho_ * r.ineq[i]);
      v += (s * s - mu_ineq_[i] * mu_ineq_[i]) / (4.0 * rho_);
    }
    return v;
  }

  Vector gradient(std::span<const double> y) const {
    const ConstraintResidual r = residuals(f_, y, x_);
    Vector w_ineq(r.ineq.size()), w_eq(r.eq.size());
    for (std::size_t i = 0; i < r.ineq.size(); ++i) w_ineq[i] = std::max(0.0, mu_ineq_[i] + 2.0 * rho_ * r.ineq[i]);
    for (std::size_t j = 0; j < r.eq.size(); ++j) w_eq[j] = mu_eq_[j] + 2.0 * rho_ * r.eq[j];
    Vector g = constraint_jacobian_vec(f_, y, w_ineq, w_eq);
    const Vector gf = objective_grad(f_, y);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += gf[i];
    return g;
  }

  void update_duals(std::span<const double> y) {
    const ConstraintResidual r = residuals(f_, y, x_);
    for (std::size_t i = 0; i < r.ineq.size(); ++i) mu_ineq_[i] = std::max(0.0, mu_ineq_[i] + 2.0 * rho_ * r.ineq[i]);
    for (std::size_t j = 0; j < r.eq.size(); ++j) mu_eq_[j] += 2.0 * rho_ * r.eq[j];
  }

  void set_rho(double rho) { rho_ = rho; }

 private:
  const ProblemFamily& f_;
  std::span<const double> x_;
  double rho_ = 1.0;
  Vector mu_ineq_;
  Vector mu_eq_;
};

double max_abs(std::span<const double> v) {
  double m = 0.0;
  for (double e : v) m = std::max(m, std::abs(e));
  return m;
}

bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double e) { return std::isfinite(e); });
}

LabelRecord make_record(const ProblemFamily& f, std::span<const double> x, Vector y, const SolverBudget& budget,
                        const SolveOptions& opt, std::size_t iters, bool converged) {
  LabelRecord rec;
  rec.x.assign(x.begin(), x.end());
  const SolutionStats s = solution_stats(f, y, x, opt.eval);
  rec.objective = s.objective;
  rec.eq_l1 = s.eq_l1;
  rec.ineq_l1 = s.ineq_l1;
  rec.merit_at_eval_rho = s.merit;
  rec.max_residual = max_abs(residuals(f, y, x).stacked);
  rec.y_hat = std::move(y);
  rec.iters_used = iters;
  rec.converged = converged;
  rec.budget_id = budget.id;
  return rec;
}

}  // namespace

LabelRecord solve_instance(const ProblemFamily& f, std::span<const double> x, const SolverBudget& budget,
                           std::uint64_t seed, const SolveOptions& opt) {
  budget.validate();
  if (x.size() != f.n_eq()) throw std::invalid_argument("solve_instance: parameter has wrong length");
  const std::size_t n = f.n();

  Vector y = f.anchor;
  if (opt.init_noise > 0.0) {
    Rng rng(seed);
    for (auto& v : y) v += opt.init_noise * standard_normal(rng);
  }
  if (max_abs(residuals(f, y, x).stacked) <= budget.tol) {
    return make_record(f, x, std::move(y), budget, opt, 0, true);
  }

  PenaltyObjective obj(f, x);
  double rho = budget.rho_init;
  double step = budget.step_size;
  std::size_t iters = 0;
  bool converged = false;
  Vector trial(n);

  for (std::size_t outer = 0; outer < budget.max_outer && !converged; ++outer) {
    obj.set_rho(rho);
    double value = obj.value(y);
    bool have_cache = false;
    Vector g_cache;
    for (std::size_t inner = 0; inner < budget.max_inner; ++inner) {
      const Vector g = have_cache ? g_cache : obj.gradient(y);
      if (!all_finite(g)) throw std::runtime_error("solve_instance: non-finite gradient");
      if (max_abs(g) <= opt.grad_tol) break;
      const double gg = kernels::dot(g.data(), g.data(), n);
      double t = step;
      double trial_value = 0.0;
      bool accepted = false;
      while (t > 1e-300) {
        for (std::size_t i = 0; i < n; ++i) trial[i] = y[i] - t * g[i];
        trial_value = obj.value(trial);
        if (trial_value <= value - opt.armijo_slope * t * gg) {
          accepted = true;
          break;
        }
        t *= opt.armijo_shrink;
      }
      if (!accepted) break;
      y.swap(trial);
      value = trial_value;
      ++iters;
      if (!all_finite(y) || !std::isfinite(value)) throw std::runtime_error("solve_instance: non-finite iterate");
      // Next trial step: Barzilai-Borwein estimate s's / s'Δg when it is
      // positive, otherwise double the accepted step.
      const Vector g_new = obj.gradient(y);
      double ss = 0.0, sy = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double s = -t * g[i];
        ss += s * s;
        sy += s * (g_new[i] - g[i]);
      }
      step = sy > 0.0 ? std::clamp(ss / sy, 1e-12, 1e6) : 2.0 * t;
      g_cache = g_new;
      have_cache = true;
    }
    if (budget.mode == SolverMode::augmented_lagrangian) obj.update_duals(y);
    converged = max_abs(residuals(f, y, x).stacked) <= budget.tol;
    rho = std::min(rho * budget.rho_growth, budget.rho_max);
  }
  return make_record(f, x, std::move(y), budget, opt, iters, converged);
}

DatasetSummary summarize(std::span<const LabelRecord> records, std::size_t requested) {
  DatasetSummary s;
  s.requested = requested;
  s.produced = records.size();
  s.skipped = requested - records.size();
  if (records.empty()) return s;
  CompensatedSum obj, eq, ineq, mer, iters;
  std::size_t ok = 0;
  std::vector<double> merits;
  merits.reserve(records.size());
  for (const auto& r : records) {
    obj.add(r.objective);
    eq.add(r.eq_l1);
    ineq.add(r.ineq_l1);
    mer.add(r.merit_at_eval_rho);
    iters.add(static_cast<double>(r.iters_used));
    ok += r.converged ? 1 : 0;
    merits.push_back(r.merit_at_eval_rho);
  }
  const double n = static_cast<double>(records.size());
  s.mean_objective = obj.value() / n;
  s.mean_eq_l1 = eq.value() / n;
  s.mean_ineq_l1 = ineq.value() / n;
  s.mean_merit = mer.value() / n;
  s.mean_iters = iters.value() / n;
  s.success_rate = static_cast<double>(ok) / static_cast<double>(requested);
  std::sort(merits.begin(), merits.end());
  const std::size_t mid = merits.size() / 2;
  s.median_merit = merits.size() % 2 ? merits[mid] : 0.5 * (merits[mid - 1] + merits[mid]);
  return s;
}

namespace {

std::vector<LabelRecord> solve_all(const ProblemFamily& f, const Matrix& xs, const SolverBudget& budget,
                                   std::uint64_t seed, std::uint64_t first_index, const SolveOptions& opt,
                                   std::size_t& skipped) {
  budget.validate();
  std::vector<std::optional<LabelRecord>> slots(xs.rows());
  parallel_for(xs.rows(), [&](std::size_t i) {
    try {
      slots[i] = solve_instance(f, xs.row(i), budget, derive_seed(seed, Stream::label_init, first_index + i), opt);
    } catch (const std::runtime_error&) {
      slots[i].reset();
    }
  });
  std::vector<LabelRecord> out;
  out.reserve(slots.size());
  skipped = 0;
  for (auto& s : slots) {
    if (s) {
      out.push_back(std::move(*s));
    } else {
      ++skipped;
    }
  }
  return out;
}

}  // namespace

Dataset build_dataset(const ProblemFamily& f, std::size_t n_samples, const SolverBudget& budget, std::uint64_t seed,
                      std::uint64_t first_index, const SolveOptions& opt) {
  if (n_samples < 1) throw std::invalid_argument("build_dataset: n_samples must be >= 1");
  const auto start = std::chrono::steady_clock::now();
  const Matrix xs = sample_parameters(f, seed, n_samples, first_index);
  std::size_t skipped = 0;
  Dataset ds;
  ds.records = solve_all(f, xs, budget, seed, first_index, opt, skipped);
  ds.budget = budget;
  ds.seed = seed;
  ds.first_index = first_index;
  ds.xs = Matrix(ds.records.size(), f.n_eq());
  ds.ys = Matrix(ds.records.size(), f.n());
  for (std::size_t i = 0; i < ds.records.size(); ++i) {
    std::copy(ds.records[i].x.begin(), ds.records[i].x.end(), ds.xs.row(i).begin());
    std::copy(ds.records[i].y_hat.begin(), ds.records[i].y_hat.end(), ds.ys.row(i).begin());
  }
  ds.summary = summarize(ds.records, n_samples);
  ds.summary.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return ds;
}

std::vector<LabelRecord> oracle_solutions(const ProblemFamily& f, const Matrix& xs, const SolverBudget& oracle_budget,
                                          std::uint64_t seed, const SolveOptions& opt) {
  std::size_t skipped = 0;
  auto recs = solve_all(f, xs, oracle_budget, seed, 0, opt, skipped);
  if (skipped) throw std::runtime_error("oracle_solutions: " + std::to_string(skipped) + " instances diverged");
  for (auto& r : recs) r.oracle = true;
  return recs;
}

Dataset take_prefix(const Dataset& ds, std::size_t count) {
  if (count > ds.size()) throw std::invalid_argument("take_prefix: dataset has fewer samples than requested");
  Dataset out;
  out.budget = ds.budget;
  out.seed = ds.seed;
  out.first_index = ds.first_index;
  out.records.assign(ds.records.begin(), ds.records.begin() + static_cast<std::ptrdiff_t>(count));
  std::vector<std::size_t> idx(count);
  for (std::size_t i = 0; i < count; ++i) idx[i] = i;
  out.xs = gather_rows(ds.xs, idx);
  out.ys = gather_rows(ds.ys, idx);
  out.summary = summarize(out.records, count);
  return out;
}

// ---------------------------------------------------------------------------
// ds-v1

io::json to_json(const SolverBudget& b) {
  return {{"id", b.id},
          {"max_outer", b.max_outer},
          {"max_inner", b.max_inner},
          {"tol", b.tol},
          {"rho_init", b.rho_init},
          {"rho_growth", b.rho_growth},
          {"rho_max", b.rho_max},
          {"step_size", b.step_size},
          {"mode", b.mode == SolverMode::augmented_lagrangian ? "augmented_lagrangian" : "quadratic_penalty"}};
}

SolverBudget budget_from_json(const io::json& j) {
  SolverBudget b;
  b.id = j.at("id").get<std::string>();
  b.max_outer = j.at("max_outer").get<std::size_t>();
  b.max_inner = j.at("max_inner").get<std::size_t>();
  b.tol = j.at("tol").get<double>();
  b.rho_init = j.at("rho_init").get<double>();
  b.rho_growth = j.at("rho_growth").get<double>();
  b.rho_max = j.at("rho_max").get<double>();
  b.step_size = j.at("step_size").get<double>();
  const auto mode = j.at("mode").get<std::string>();
  if (mode == "augmented_lagrangian") {
    b.mode = SolverMode::augmented_lagrangian;
  } else if (mode == "quadratic_penalty") {
    b.mode = SolverMode::quadratic_penalty;
  } else {
    throw std::invalid_argument("budget.mode: unknown solver mode '" + mode + "'");
  }
  b.validate();
  return b;
}

io::json to_json(const DatasetSummary& s) {
  return {{"requested", s.requested},         {"produced", s.produced},
          {"skipped", s.skipped},             {"mean_objective", s.mean_objective},
          {"mean_eq_l1", s.mean_eq_l1},       {"mean_ineq_l1", s.mean_ineq_l1},
          {"mean_merit", s.mean_merit},       {"median_merit", s.median_merit},
          {"success_rate", s.success_rate},   {"mean_iters", s.mean_iters}};
}

void save_dataset(const Dataset& ds, const std::filesystem::path& dir, const std::filesystem::path& family_manifest) {
  io::BlobWriter blob;
  blob.add("x", ds.xs.storage(), {ds.xs.rows(), ds.xs.cols()});
  blob.add("y_hat", ds.ys.storage(), {ds.ys.rows(), ds.ys.cols()});

  io::NdjsonLog records;
  for (std::size_t i = 0; i < ds.records.size(); ++i) {
    const auto& r = ds.records[i];
    records.append({{"index", i},
                    {"objective", r.objective},
                    {"eq_l1", r.eq_l1},
                    {"ineq_l1", r.ineq_l1},
                    {"merit", r.merit_at_eval_rho},
                    {"max_residual", r.max_residual},
                    {"iters", r.iters_used},
                    {"converged", r.converged},
                    {"oracle", r.oracle},
                    {"budget_id", r.budget_id}});
  }

  io::json m;
  m["format"] = "ds-v1";
  const auto family_rel = std::filesystem::absolute(family_manifest)
                              .lexically_normal()
                              .lexically_relative(std::filesystem::absolute(dir).lexically_normal());
  m["family"] = {{"path", family_rel.string()},
                 {"sha256", io::sha256_file(family_manifest)},
                 {"fingerprint", family_fingerprint(load_family(family_manifest))}};
  m["budget"] = to_json(ds.budget);
  m["seed"] = ds.seed;
  m["first_index"] = ds.first_index;
  m["count"] = ds.size();
  m["dims"] = {{"x", ds.xs.cols()}, {"y", ds.ys.cols()}};
  m["summary"] = to_json(ds.summary);
  m["records"] = "records.ndjson";
  m["blob"] = blob.manifest("dataset.bin");

  std::filesystem::create_directories(dir);
  io::write_file_atomic(dir / "dataset.bin", blob.bytes());
  records.write(dir / "records.ndjson");
  io::write_json(dir / "dataset.json", m);
  io::write_json(dir / "timing.json", {{"wall_seconds", ds.summary.wall_seconds}});
}

Dataset load_dataset(const std::filesystem::path& dir, const ProblemFamily& f) {
  const io::json m = io::read_json(dir / "dataset.json");
  if (m.value("format", "") != "ds-v1") throw io::FormatError((dir / "dataset.json").string() + ": expected ds-v1");
  Dataset ds;
  try {
    ds.budget = budget_from_json(m.at("budget"));
    ds.seed = m.at("seed").get<std::uint64_t>();
    ds.first_index = m.at("first_index").get<std::uint64_t>();
    const auto count = m.at("count").get<std::size_t>();
    if (m.at("family").at("fingerprint").get<std::string>() != family_fingerprint(f)) {
      throw io::FormatError((dir / "dataset.json").string() + ": dataset was generated for a different family");
    }
    if (m.at("dims").at("x").get<std::size_t>() != f.n_eq() || m.at("dims").at("y").get<std::size_t>() != f.n()) {
      throw io::FormatError((dir / "dataset.json").string() + ": dimensions do not match the family");
    }
    io::BlobReader blob(dir, m.at("blob"));
    ds.xs = Matrix(count, f.n_eq(), blob.get("x", count * f.n_eq()));
    ds.ys = Matrix(count, f.n(), blob.get("y_hat", count * f.n()));
    const auto recs = io::read_ndjson(dir / m.at("records").get<std::string>());
    if (recs.size() != count) throw io::FormatError((dir / "records.ndjson").string() + ": record count mismatch");
    ds.records.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
      auto& r = ds.records[i];
      const auto& j = recs[i];
      r.x.assign(ds.xs.row(i).begin(), ds.xs.row(i).end());
      r.y_hat.assign(ds.ys.row(i).begin(), ds.ys.row(i).end());
      r.objective = j.at("objective").get<double>();
      r.eq_l1 = j.at("eq_l1").get<double>();
      r.ineq_l1 = j.at("ineq_l1").get<double>();
      r.merit_at_eval_rho = j.at("merit").get<double>();
      r.max_residual = j.at("max_residual").get<double>();
      r.iters_used = j.at("iters").get<std::size_t>();
      r.converged = j.at("converged").get<bool>();
      r.oracle = j.at("oracle").get<bool>();
      r.budget_id = j.at("budget_id").get<std::string>();
    }
    ds.summary = summarize(ds.records, m.at("summary").at("requested").get<std::size_t>());
    const auto timing = dir / "timing.json";
    if (std::filesystem::exists(timing)) ds.summary.wall_seconds = io::read_json(timing).value("wall_seconds", 0.0);
  } catch (const io::json::exception& e) {
    throw io::FormatError((dir / "dataset.json").string() + ": " + e.what());
  }
  return ds;
}

}  // namespace alab
