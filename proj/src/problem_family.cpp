#include "alab/problem_family.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>
#include <string>

#include "alab/io.hpp"
#include "alab/kernels.hpp"
#include "alab/rng.hpp"

namespace alab {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Eigen::Map<const RowMat> view(const Matrix& m) {
  return {m.data(), static_cast<Eigen::Index>(m.rows()), static_cast<Eigen::Index>(m.cols())};
}

Matrix from_eigen(const RowMat& e) {
  Matrix out(static_cast<std::size_t>(e.rows()), static_cast<std::size_t>(e.cols()));
  Eigen::Map<RowMat>(out.data(), e.rows(), e.cols()) = e;
  return out;
}

void check_len(std::span<const double> v, std::size_t n, const char* what) {
  if (v.size() != n) {
    throw std::invalid_argument(std::string(what) + ": expected length " + std::to_string(n) + ", got " +
                                std::to_string(v.size()));
  }
}

RowMat completion_block(const ProblemFamily& f) {
  RowMat block(f.n_eq(), f.n_eq());
  for (std::size_t r = 0; r < f.n_eq(); ++r) {
    for (std::size_t j = 0; j < f.n_eq(); ++j) block(r, j) = f.A(r, f.completed_idx[j]);
  }
  return block;
}

double condition_number(const RowMat& m) {
  Eigen::JacobiSVD<RowMat> svd(m);
  const auto& s = svd.singularValues();
  if (s.size() == 0 || s(s.size() - 1) <= 0.0) return std::numeric_limits<double>::infinity();
  return s(0) / s(s.size() - 1);
}

// u_i = G_i cos(y) + h_i
void soc_inner(const SocBlock& b, std::span<const double> cos_y, Vector& u) {
  const std::size_t k = b.G.rows();
  u.resize(k);
  kernels::affine(u.data(), b.G.data(), b.h.data(), cos_y.data(), k, b.G.cols());
}

}  // namespace

void prepare_derived(ProblemFamily& f) {
  const std::size_t n = f.n();
  const std::size_t m = f.n_eq();
  if (f.free_idx.size() + f.completed_idx.size() != n || f.completed_idx.size() != m) {
    throw std::invalid_argument("prepare_derived: index split does not cover the decision vector");
  }
  const RowMat block = completion_block(f);
  f.completion_cond = condition_number(block);
  Eigen::FullPivLU<RowMat> lu(block);
  if (!lu.isInvertible()) throw std::runtime_error("prepare_derived: completion block is singular");
  const RowMat inv = lu.inverse();
  RowMat part(m, f.n_free());
  for (std::size_t r = 0; r < m; ++r) {
    for (std::size_t j = 0; j < f.n_free(); ++j) part(r, j) = f.A(r, f.free_idx[j]);
  }
  f.completion_inv = from_eigen(inv);
  f.completion_map = from_eigen(inv * part);

  const auto a = view(f.A);
  const RowMat aat = a * a.transpose();
  const RowMat solved = aat.ldlt().solve(a);  // (AAᵀ)^-1 A
  RowMat proj = RowMat::Identity(n, n) - a.transpose() * solved;
  proj = 0.5 * (proj + proj.transpose()).eval();
  f.nullspace_projector = from_eigen(proj);
}

ProblemFamily generate_family(const FamilyDims& dims, std::uint64_t seed, const GeneratorOptions& opt) {
  if (!(dims.n_eq > 0 && dims.n_eq < dims.n)) {
    throw std::invalid_argument("generate_family: need 0 < n_eq < n");
  }
  if (dims.k < 1) throw std::invalid_argument("generate_family: cone dimension k must be >= 1");
  if (!(opt.lower < opt.upper) || opt.upper - opt.lower <= 2 * opt.margin) {
    throw std::invalid_argument("generate_family: box too narrow for the anchor margin");
  }

  const std::size_t n = dims.n;
  ProblemFamily f;
  f.dims = dims;
  f.seed = seed;
  f.options = opt;
  f.lambda_reg = opt.lambda_reg;
  Rng rng = make_rng(seed, Stream::family);

  {
    RowMat F(n, n);
    for (Eigen::Index i = 0; i < F.size(); ++i) F.data()[i] = standard_normal(rng);
    RowMat q = F.transpose() * F / static_cast<double>(n);
    q = 0.5 * (q + q.transpose()).eval();
    f.Q = from_eigen(q);
  }
  f.p.resize(n);
  for (auto& v : f.p) v = standard_normal(rng);

  for (std::size_t i = 0; i < n - dims.n_eq; ++i) f.free_idx.push_back(i);
  for (std::size_t i = n - dims.n_eq; i < n; ++i) f.completed_idx.push_back(i);

  bool accepted = false;
  for (int attempt = 0; attempt < opt.max_attempts && !accepted; ++attempt) {
    f.A = Matrix(dims.n_eq, n);
    for (auto& v : f.A.storage()) v = standard_normal(rng);
    const double cond = condition_number(completion_block(f));
    accepted = std::isfinite(cond) && cond < opt.completion_cond_cap;
  }
  if (!accepted) {
    throw std::runtime_error("generate_family: no completion block with condition number below " +
                             std::to_string(opt.completion_cond_cap) + " after " +
                             std::to_string(opt.max_attempts) + " attempts");
  }

  const double g_scale = 1.0 / std::sqrt(static_cast<double>(n));
  f.soc.resize(dims.n_ineq);
  for (auto& b : f.soc) {
    b.G = Matrix(dims.k, n);
    for (auto& v : b.G.storage()) v = standard_normal(rng) * g_scale;
    b.h.resize(dims.k);
    for (auto& v : b.h) v = standard_normal(rng);
    b.c.resize(n);
    for (auto& v : b.c) v = standard_normal(rng);
  }

  f.lower.assign(n, opt.lower);
  f.upper.assign(n, opt.upper);
  f.anchor.resize(n);
  for (std::size_t i = 0; i < n; ++i) f.anchor[i] = uniform(rng, opt.lower + opt.margin, opt.upper - opt.margin);

  Vector cos_y(n), u;
  for (std::size_t i = 0; i < n; ++i) cos_y[i] = std::cos(f.anchor[i]);
  for (auto& b : f.soc) {
    soc_inner(b, cos_y, u);
    b.d = norm2(u) - kernels::dot(b.c.data(), f.anchor.data(), n) + opt.margin;
  }

  prepare_derived(f);
  return f;
}

double objective(const ProblemFamily& f, std::span<const double> y) {
  check_len(y, f.n(), "objective");
  const std::size_t n = f.n();
  Vector qy(n);
  kernels::affine(qy.data(), f.Q.data(), nullptr, y.data(), n, n);
  double quad = 0.0, sinus = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    quad += y[i] * qy[i];
    sinus += f.p[i] * std::sin(y[i]);
  }
  return 0.5 * quad + sinus + f.lambda_reg * norm2(y);
}

Vector objective_grad(const ProblemFamily& f, std::span<const double> y) {
  check_len(y, f.n(), "objective_grad");
  const std::size_t n = f.n();
  Vector g(n);
  kernels::affine(g.data(), f.Q.data(), nullptr, y.data(), n, n);
  const double ny = norm2(y);
  const double scale = ny < kNormEpsilon ? 0.0 : f.lambda_reg / ny;
  for (std::size_t i = 0; i < n; ++i) g[i] += f.p[i] * std::cos(y[i]) + scale * y[i];
  return g;
}

ConstraintResidual residuals(const ProblemFamily& f, std::span<const double> y, std::span<const double> x) {
  check_len(y, f.n(), "residuals(y)");
  check_len(x, f.n_eq(), "residuals(x)");
  const std::size_t n = f.n();
  ConstraintResidual r;
  r.ineq.resize(f.n_ineq_rows());
  Vector cos_y(n), u;
  for (std::size_t i = 0; i < n; ++i) cos_y[i] = std::cos(y[i]);
  for (std::size_t i = 0; i < f.n_soc(); ++i) {
    const auto& b = f.soc[i];
    soc_inner(b, cos_y, u);
    r.ineq[i] = norm2(u) - kernels::dot(b.c.data(), y.data(), n) - b.d;
  }
  for (std::size_t i = 0; i < n; ++i) {
    r.ineq[f.n_soc() + i] = f.lower[i] - y[i];
    r.ineq[f.n_soc() + n + i] = y[i] - f.upper[i];
  }
  r.eq.resize(f.n_eq());
  kernels::affine(r.eq.data(), f.A.data(), nullptr, y.data(), f.n_eq(), n);
  for (std::size_t j = 0; j < f.n_eq(); ++j) r.eq[j] -= x[j];

  r.stacked.resize(f.n_stacked());
  for (std::size_t i = 0; i < r.ineq.size(); ++i) r.stacked[i] = r.ineq[i] > 0.0 ? r.ineq[i] : 0.0;
  std::copy(r.eq.begin(), r.eq.end(), r.stacked.begin() + static_cast<std::ptrdiff_t>(r.ineq.size()));
  return r;
}

namespace {

// Accumulates w * ∇g_soc(y) into out, where g_soc = ‖G cos y + h‖ - cᵀy - d.
void add_soc_grad(const SocBlock& b, std::span<const double> y, std::span<const double> sin_y,
                  const Vector& u, double w, std::span<double> out) {
  const std::size_t n = y.size();
  const double nu = norm2(u);
  if (nu >= kNormEpsilon) {
    // -diag(sin y) Gᵀ u / ‖u‖
    Vector gtu(n, 0.0);
    for (std::size_t r = 0; r < b.G.rows(); ++r) kernels::axpy(gtu.data(), b.G.row(r).data(), u[r], n);
    const double s = w / nu;
    for (std::size_t i = 0; i < n; ++i) out[i] -= s * sin_y[i] * gtu[i];
  }
  kernels::axpy(out.data(), b.c.data(), -w, n);
}

}  // namespace

Vector constraint_jacobian_vec(const ProblemFamily& f, std::span<const double> y,
                               std::span<const double> w_ineq, std::span<const double> w_eq) {
  check_len(y, f.n(), "constraint_jacobian_vec(y)");
  check_len(w_ineq, f.n_ineq_rows(), "constraint_jacobian_vec(w_ineq)");
  check_len(w_eq, f.n_eq(), "constraint_jacobian_vec(w_eq)");
  const std::size_t n = f.n();
  Vector out(n, 0.0);
  Vector cos_y(n), sin_y(n), u;
  for (std::size_t i = 0; i < n; ++i) {
    cos_y[i] = std::cos(y[i]);
    sin_y[i] = std::sin(y[i]);
  }
  for (std::size_t i = 0; i < f.n_soc(); ++i) {
    if (w_ineq[i] == 0.0) continue;
    soc_inner(f.soc[i], cos_y, u);
    add_soc_grad(f.soc[i], y, sin_y, u, w_ineq[i], out);
  }
  for (std::size_t i = 0; i < n; ++i) out[i] += w_ineq[f.n_soc() + n + i] - w_ineq[f.n_soc() + i];
  for (std::size_t j = 0; j < f.n_eq(); ++j) {
    if (w_eq[j] != 0.0) kernels::axpy(out.data(), f.A.row(j).data(), w_eq[j], n);
  }
  return out;
}

Vector residual_jacobian_vec(const ProblemFamily& f, std::span<const double> y, std::span<const double> x,
                             std::span<const double> v) {
  check_len(v, f.n_stacked(), "residual_jacobian_vec(v)");
  const ConstraintResidual r = residuals(f, y, x);
  const std::size_t ni = f.n_ineq_rows();
  Vector w_ineq(ni);
  for (std::size_t i = 0; i < ni; ++i) w_ineq[i] = r.ineq[i] > 0.0 ? v[i] : 0.0;
  return constraint_jacobian_vec(f, y, w_ineq, v.subspan(ni));
}

double violation_energy(const ProblemFamily& f, std::span<const double> y, std::span<const double> x,
                        double w_eq, double w_ineq, std::span<double> grad_out) {
  const ConstraintResidual r = residuals(f, y, x);
  const std::size_t ni = f.n_ineq_rows();
  double e_ineq = 0.0, e_eq = 0.0;
  for (std::size_t i = 0; i < ni; ++i) e_ineq += r.stacked[i] * r.stacked[i];
  for (double e : r.eq) e_eq += e * e;
  if (!grad_out.empty()) {
    check_len(grad_out, f.n(), "violation_energy(grad)");
    Vector v(r.stacked.size());
    for (std::size_t i = 0; i < ni; ++i) v[i] = 2.0 * w_ineq * r.stacked[i];
    for (std::size_t j = 0; j < f.n_eq(); ++j) v[ni + j] = 2.0 * w_eq * r.eq[j];
    const Vector g = residual_jacobian_vec(f, y, x, v);
    std::copy(g.begin(), g.end(), grad_out.begin());
  }
  return w_ineq * e_ineq + w_eq * e_eq;
}

double ineq_energy(const ProblemFamily& f, std::span<const double> y, std::span<double> grad_out) {
  // The equality block is irrelevant here; evaluate it against A y itself.
  Vector ay(f.n_eq());
  kernels::affine(ay.data(), f.A.data(), nullptr, y.data(), f.n_eq(), f.n());
  const ConstraintResidual r = residuals(f, y, ay);
  double e = 0.0;
  for (std::size_t i = 0; i < f.n_ineq_rows(); ++i) e += r.stacked[i] * r.stacked[i];
  if (!grad_out.empty()) {
    check_len(grad_out, f.n(), "ineq_energy(grad)");
    Vector v(f.n_stacked(), 0.0);
    std::copy(r.stacked.begin(), r.stacked.begin() + static_cast<std::ptrdiff_t>(f.n_ineq_rows()), v.begin());
    const Vector g = residual_jacobian_vec(f, y, ay, v);
    std::copy(g.begin(), g.end(), grad_out.begin());
  }
  return 0.5 * e;
}

Vector ineq_energy_hvp(const ProblemFamily& f, std::span<const double> y, std::span<const double> v) {
  check_len(y, f.n(), "ineq_energy_hvp(y)");
  check_len(v, f.n(), "ineq_energy_hvp(v)");
  const std::size_t n = f.n();
  Vector ay(f.n_eq());
  kernels::affine(ay.data(), f.A.data(), nullptr, y.data(), f.n_eq(), n);
  const ConstraintResidual r = residuals(f, y, ay);
  Vector out(n, 0.0);

  // Box rows: ∇g = ∓e_i, Hessian of g vanishes.
  for (std::size_t i = 0; i < n; ++i) {
    if (r.ineq[f.n_soc() + i] > 0.0) out[i] += v[i];
    if (r.ineq[f.n_soc() + n + i] > 0.0) out[i] += v[i];
  }

  Vector cos_y(n), sin_y(n), u, grad(n), jv, gtw(n);
  for (std::size_t i = 0; i < n; ++i) {
    cos_y[i] = std::cos(y[i]);
    sin_y[i] = std::sin(y[i]);
  }
  for (std::size_t s = 0; s < f.n_soc(); ++s) {
    const double gval = r.ineq[s];
    if (!(gval > 0.0)) continue;
    const auto& b = f.soc[s];
    const std::size_t k = b.G.rows();
    soc_inner(b, cos_y, u);
    std::fill(grad.begin(), grad.end(), 0.0);
    add_soc_grad(b, y, sin_y, u, 1.0, grad);
    // ∇g ∇gᵀ v
    kernels::axpy(out.data(), grad.data(), kernels::dot(grad.data(), v.data(), n), n);

    const double nu = norm2(u);
    if (nu < kNormEpsilon) continue;
    // J = ∂u/∂y = G diag(-sin y).  Hessian of ‖u(y)‖:
    //   Jᵀ (I/‖u‖ - u uᵀ/‖u‖³) J  +  diag(-cos y ⊙ Gᵀu) / ‖u‖
    Vector sv(n);
    for (std::size_t i = 0; i < n; ++i) sv[i] = -sin_y[i] * v[i];
    jv.assign(k, 0.0);
    kernels::affine(jv.data(), b.G.data(), nullptr, sv.data(), k, n);
    const double ujv = kernels::dot(u.data(), jv.data(), k);
    Vector w(k);
    for (std::size_t l = 0; l < k; ++l) w[l] = jv[l] / nu - u[l] * ujv / (nu * nu * nu);
    std::fill(gtw.begin(), gtw.end(), 0.0);
    for (std::size_t l = 0; l < k; ++l) kernels::axpy(gtw.data(), b.G.row(l).data(), w[l], n);
    Vector gtu(n, 0.0);
    for (std::size_t l = 0; l < k; ++l) kernels::axpy(gtu.data(), b.G.row(l).data(), u[l], n);
    for (std::size_t i = 0; i < n; ++i) {
      const double hv = -sin_y[i] * gtw[i] - cos_y[i] * gtu[i] / nu * v[i];
      out[i] += gval * hv;
    }
  }
  return out;
}

Vector anchor_parameter(const ProblemFamily& f) {
  Vector x(f.n_eq());
  kernels::affine(x.data(), f.A.data(), nullptr, f.anchor.data(), f.n_eq(), f.n());
  return x;
}

Vector sample_parameter(const ProblemFamily& f, std::uint64_t seed, std::uint64_t index) {
  Rng rng = make_rng(seed, Stream::parameters, index);
  Vector x = anchor_parameter(f);
  const double w = f.options.param_halfwidth;
  for (auto& v : x) v += uniform(rng, -w, w);
  return x;
}

Matrix sample_parameters(const ProblemFamily& f, std::uint64_t seed, std::size_t count,
                         std::uint64_t first_index) {
  Matrix xs(count, f.n_eq());
  for (std::size_t i = 0; i < count; ++i) {
    const Vector x = sample_parameter(f, seed, first_index + i);
    std::copy(x.begin(), x.end(), xs.row(i).begin());
  }
  return xs;
}

// ---------------------------------------------------------------------------
// pf-v1

namespace {

io::BlobWriter family_blob(const ProblemFamily& f) {
  const std::size_t n = f.n(), k = f.dims.k, ni = f.n_soc();
  io::BlobWriter blob;
  blob.add("Q", f.Q.storage(), {n, n});
  blob.add("p", f.p, {n});
  blob.add("A", f.A.storage(), {f.n_eq(), n});
  Vector G, h, c, d;
  for (const auto& b : f.soc) {
    G.insert(G.end(), b.G.storage().begin(), b.G.storage().end());
    h.insert(h.end(), b.h.begin(), b.h.end());
    c.insert(c.end(), b.c.begin(), b.c.end());
    d.push_back(b.d);
  }
  blob.add("G", G, {ni, k, n});
  blob.add("h", h, {ni, k});
  blob.add("c", c, {ni, n});
  blob.add("d", d, {ni});
  blob.add("L", f.lower, {n});
  blob.add("U", f.upper, {n});
  return blob;
}

}  // namespace

std::string family_fingerprint(const ProblemFamily& f) {
  io::BlobWriter blob = family_blob(f);
  blob.add("anchor", f.anchor, {f.n()});
  blob.add("lambda_reg", std::span<const double>(&f.lambda_reg, 1), {1});
  return io::sha256_hex(blob.bytes());
}

void save_family(const ProblemFamily& f, const std::filesystem::path& manifest_path) {
  const std::size_t n = f.n(), k = f.dims.k, ni = f.n_soc();
  const io::BlobWriter blob = family_blob(f);

  const std::string blob_name = manifest_path.stem().string() + ".bin";
  io::json m;
  m["format"] = "pf-v1";
  m["dims"] = {{"n", n}, {"n_eq", f.n_eq()}, {"n_ineq", ni}, {"k", k}};
  m["seed"] = f.seed;
  m["lambda_reg"] = f.lambda_reg;
  m["generator"] = {{"lower", f.options.lower},
                    {"upper", f.options.upper},
                    {"margin", f.options.margin},
                    {"param_halfwidth", f.options.param_halfwidth},
                    {"completion_cond_cap", f.options.completion_cond_cap},
                    {"max_attempts", f.options.max_attempts}};
  m["anchor"] = io::to_json(f.anchor);
  m["partition"] = {{"free", f.free_idx}, {"completed", f.completed_idx}};
  m["residual_order"] = "soc, lower-bound, upper-bound, equality";
  m["blob"] = blob.manifest(blob_name);

  const auto dir = manifest_path.parent_path();
  io::write_file_atomic(dir / blob_name, blob.bytes());
  io::write_json(manifest_path, m);
}

ProblemFamily load_family(const std::filesystem::path& manifest_path) {
  const io::json m = io::read_json(manifest_path);
  if (m.value("format", "") != "pf-v1") {
    throw io::FormatError(manifest_path.string() + ": expected format pf-v1");
  }
  ProblemFamily f;
  try {
    const auto& dm = m.at("dims");
    f.dims = {dm.at("n").get<std::size_t>(), dm.at("n_eq").get<std::size_t>(),
              dm.at("n_ineq").get<std::size_t>(), dm.at("k").get<std::size_t>()};
    f.seed = m.at("seed").get<std::uint64_t>();
    f.lambda_reg = m.at("lambda_reg").get<double>();
    const auto& g = m.at("generator");
    f.options.lambda_reg = f.lambda_reg;
    f.options.lower = g.at("lower").get<double>();
    f.options.upper = g.at("upper").get<double>();
    f.options.margin = g.at("margin").get<double>();
    f.options.param_halfwidth = g.at("param_halfwidth").get<double>();
    f.options.completion_cond_cap = g.at("completion_cond_cap").get<double>();
    f.options.max_attempts = g.at("max_attempts").get<int>();
    f.anchor = io::vector_from_json(m.at("anchor"), "anchor");
    f.free_idx = m.at("partition").at("free").get<std::vector<std::size_t>>();
    f.completed_idx = m.at("partition").at("completed").get<std::vector<std::size_t>>();
  } catch (const io::json::exception& e) {
    throw io::FormatError(manifest_path.string() + ": " + e.what());
  }
  const std::size_t n = f.n(), k = f.dims.k, ni = f.n_soc();
  if (f.anchor.size() != n) throw io::FormatError(manifest_path.string() + ": anchor length mismatch");

  io::BlobReader blob(manifest_path.parent_path(), m.at("blob"));
  f.Q = Matrix(n, n, blob.get("Q", n * n));
  f.p = blob.get("p", n);
  f.A = Matrix(f.n_eq(), n, blob.get("A", f.n_eq() * n));
  const Vector G = blob.get("G", ni * k * n), h = blob.get("h", ni * k), c = blob.get("c", ni * n),
               d = blob.get("d", ni);
  f.soc.resize(ni);
  for (std::size_t i = 0; i < ni; ++i) {
    auto& b = f.soc[i];
    b.G = Matrix(k, n, Vector(G.begin() + static_cast<std::ptrdiff_t>(i * k * n),
                              G.begin() + static_cast<std::ptrdiff_t>((i + 1) * k * n)));
    b.h.assign(h.begin() + static_cast<std::ptrdiff_t>(i * k), h.begin() + static_cast<std::ptrdiff_t>((i + 1) * k));
    b.c.assign(c.begin() + static_cast<std::ptrdiff_t>(i * n), c.begin() + static_cast<std::ptrdiff_t>((i + 1) * n));
    b.d = d[i];
  }
  f.lower = blob.get("L", n);
  f.upper = blob.get("U", n);
  prepare_derived(f);
  return f;
}

}  // namespace alab
