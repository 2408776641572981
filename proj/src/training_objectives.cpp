#include "alab/training_objectives.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "alab/kernels.hpp"
#include "alab/merit.hpp"

namespace alab {

void LossWeights::validate() const {
  auto nonneg = [](double v, const char* name) {
    if (!(v >= 0.0)) throw std::invalid_argument(std::string("weights.") + name + ": must be >= 0");
  };
  nonneg(lambda_obj, "lambda_obj");
  nonneg(lambda_eq, "lambda_eq");
  nonneg(lambda_ineq, "lambda_ineq");
  nonneg(lambda_sup, "lambda_sup");
  if (!(huber_delta > 0.0)) throw std::invalid_argument("weights.huber_delta: must be > 0");
  if (adaptive) {
    if (!(adaptive->rate > 1.0)) throw std::invalid_argument("weights.adaptive.rate: must be > 1");
    if (!(adaptive->eq_cap >= lambda_eq)) throw std::invalid_argument("weights.adaptive.eq_cap: below lambda_eq");
    if (!(adaptive->ineq_cap >= lambda_ineq)) {
      throw std::invalid_argument("weights.adaptive.ineq_cap: below lambda_ineq");
    }
    if (adaptive->patience < 1) throw std::invalid_argument("weights.adaptive.patience: must be >= 1");
  }
}

void Dc3Config::validate() const {
  if (!(correction_lr > 0.0)) throw std::invalid_argument("dc3.correction_lr: must be > 0");
}

io::json to_json(const LossWeights& w) {
  io::json j = {{"lambda_obj", w.lambda_obj},
                {"lambda_eq", w.lambda_eq},
                {"lambda_ineq", w.lambda_ineq},
                {"lambda_sup", w.lambda_sup},
                {"huber_delta", w.huber_delta}};
  if (w.adaptive) {
    j["adaptive"] = {{"rate", w.adaptive->rate},
                     {"eq_cap", w.adaptive->eq_cap},
                     {"ineq_cap", w.adaptive->ineq_cap},
                     {"patience", w.adaptive->patience}};
  }
  return j;
}

LossWeights loss_weights_from_json(const io::json& j) {
  LossWeights w;
  w.lambda_obj = j.at("lambda_obj").get<double>();
  w.lambda_eq = j.at("lambda_eq").get<double>();
  w.lambda_ineq = j.at("lambda_ineq").get<double>();
  w.lambda_sup = j.at("lambda_sup").get<double>();
  w.huber_delta = j.at("huber_delta").get<double>();
  if (j.contains("adaptive") && !j.at("adaptive").is_null()) {
    const auto& a = j.at("adaptive");
    w.adaptive = AdaptiveSchedule{a.at("rate").get<double>(), a.at("eq_cap").get<double>(),
                                  a.at("ineq_cap").get<double>(), a.at("patience").get<std::size_t>()};
  }
  w.validate();
  return w;
}

io::json to_json(const Dc3Config& c) {
  return {{"correction_steps", c.correction_steps}, {"correction_lr", c.correction_lr}};
}

Dc3Config dc3_from_json(const io::json& j) {
  Dc3Config c{j.at("correction_steps").get<std::size_t>(), j.at("correction_lr").get<double>()};
  c.validate();
  return c;
}

double huber(double r, double delta) {
  const double a = std::abs(r);
  return a <= delta ? 0.5 * r * r : delta * (a - 0.5 * delta);
}

double huber_grad(double r, double delta) {
  if (std::abs(r) <= delta) return r;
  return r > 0.0 ? delta : -delta;
}

// ---------------------------------------------------------------------------
// Output-space terms

double self_supervised_term(const ProblemFamily& f, std::span<const double> y, std::span<const double> x,
                            const LossWeights& w, std::span<double> grad) {
  Vector g(f.n());
  double v = violation_energy(f, y, x, w.lambda_eq, w.lambda_ineq, g);
  kernels::axpy(grad.data(), g.data(), 1.0, f.n());
  if (w.lambda_obj != 0.0) {
    v += w.lambda_obj * objective(f, y);
    const Vector go = objective_grad(f, y);
    kernels::axpy(grad.data(), go.data(), w.lambda_obj, f.n());
  }
  return v;
}

namespace {

double huber_term(std::span<const double> y, std::span<const double> label, const LossWeights& w,
                  std::span<double> grad) {
  if (w.lambda_sup == 0.0) return 0.0;
  double v = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double r = y[i] - label[i];
    v += huber(r, w.huber_delta);
    grad[i] += w.lambda_sup * huber_grad(r, w.huber_delta);
  }
  return w.lambda_sup * v;
}

void check_batch(const Matrix& xs, const ProblemFamily& f, const char* who) {
  if (xs.rows() == 0) throw std::invalid_argument(std::string(who) + ": empty batch");
  if (xs.cols() != f.n_eq()) throw std::invalid_argument(std::string(who) + ": parameter width mismatch");
}

void check_net(const Network& net, const ProblemFamily& f, const char* who) {
  if (net.arch().input_dim() != f.n_eq() || net.arch().output_dim() != f.n()) {
    throw std::invalid_argument(std::string(who) + ": network does not map n_eq -> n for this family");
  }
}

// Runs the forward pass, applies `term(b, y_b, grad_b)` per sample, scales by
// 1/batch and backpropagates.
template <class Term>
LossResult batch_loss(const Network& net, const Matrix& xs, const PassOptions& pass, Term&& term) {
  ForwardCache cache;
  const Matrix ys = forward(net, xs, pass.mode, pass.rng, &cache);
  const std::size_t batch = xs.rows();
  const double scale = 1.0 / static_cast<double>(batch);
  Matrix out_grad(batch, ys.cols());
  CompensatedSum total;
  for (std::size_t b = 0; b < batch; ++b) {
    auto g = out_grad.row(b);
    total.add(term(b, ys.row(b), g));
    for (double& e : g) e *= scale;
  }
  LossResult r;
  r.loss = total.value() * scale;
  r.grad = backward(net, cache, out_grad);
  return r;
}

}  // namespace

double supervised_term(const ProblemFamily& f, std::span<const double> y, std::span<const double> label,
                       std::span<const double> x, const LossWeights& w, std::span<double> grad) {
  return huber_term(y, label, w, grad) + self_supervised_term(f, y, x, w, grad);
}

LossResult sl_loss_and_grad(const ProblemFamily& f, const Network& net, const Matrix& xs, const Matrix& labels,
                            const LossWeights& w, const PassOptions& pass) {
  check_batch(xs, f, "sl_loss");
  check_net(net, f, "sl_loss");
  if (labels.rows() != xs.rows() || labels.cols() != f.n()) {
    throw std::invalid_argument("sl_loss: labels do not match the batch / family dimensions");
  }
  return batch_loss(net, xs, pass, [&](std::size_t b, std::span<const double> y, std::span<double> g) {
    return supervised_term(f, y, labels.row(b), xs.row(b), w, g);
  });
}

LossResult ssl_penalty_loss_and_grad(const ProblemFamily& f, const Network& net, const Matrix& xs,
                                     const LossWeights& w, const PassOptions& pass) {
  check_batch(xs, f, "ssl_penalty_loss");
  check_net(net, f, "ssl_penalty_loss");
  return batch_loss(net, xs, pass, [&](std::size_t b, std::span<const double> y, std::span<double> g) {
    return self_supervised_term(f, y, xs.row(b), w, g);
  });
}

LossWeights adaptive_update(const LossWeights& w, std::span<const double> history) {
  if (history.empty()) throw std::invalid_argument("adaptive_update: empty history");
  if (!w.adaptive) return w;
  const std::size_t patience = w.adaptive->patience;
  if (history.size() <= patience) return w;
  const auto split = history.end() - static_cast<std::ptrdiff_t>(patience);
  const double best_before = *std::min_element(history.begin(), split);
  const double best_recent = *std::min_element(split, history.end());
  if (best_recent < best_before) return w;
  LossWeights out = w;
  out.lambda_eq = std::min(w.lambda_eq * w.adaptive->rate, w.adaptive->eq_cap);
  out.lambda_ineq = std::min(w.lambda_ineq * w.adaptive->rate, w.adaptive->ineq_cap);
  return out;
}

// ---------------------------------------------------------------------------
// DC3

Dc3Trace dc3_forward(const ProblemFamily& f, std::span<const double> partial, std::span<const double> x,
                     const Dc3Config& cfg) {
  if (partial.size() != f.n_free()) throw std::invalid_argument("dc3_forward: partial has wrong length");
  if (x.size() != f.n_eq()) throw std::invalid_argument("dc3_forward: parameter has wrong length");
  const std::size_t n = f.n(), m = f.n_eq(), nf = f.n_free();

  Vector y(n, 0.0);
  for (std::size_t i = 0; i < nf; ++i) y[f.free_idx[i]] = partial[i];
  // y_comp = A_comp^-1 x - A_comp^-1 A_free y_free, then one refinement pass
  // against the true residual (exact arithmetic leaves it unchanged).
  Vector rhs(m);
  kernels::affine(rhs.data(), f.completion_map.data(), nullptr, partial.data(), m, nf);
  Vector base(m);
  kernels::affine(base.data(), f.completion_inv.data(), nullptr, x.data(), m, m);
  for (std::size_t j = 0; j < m; ++j) y[f.completed_idx[j]] = base[j] - rhs[j];
  Vector ay(m), corr(m);
  kernels::affine(ay.data(), f.A.data(), nullptr, y.data(), m, n);
  for (std::size_t j = 0; j < m; ++j) ay[j] = x[j] - ay[j];
  kernels::affine(corr.data(), f.completion_inv.data(), nullptr, ay.data(), m, m);
  for (std::size_t j = 0; j < m; ++j) y[f.completed_idx[j]] += corr[j];

  Dc3Trace t;
  t.x.assign(x.begin(), x.end());
  t.iterates.reserve(cfg.correction_steps + 1);
  t.iterates.push_back(y);
  Vector grad(n), step(n);
  for (std::size_t s = 0; s < cfg.correction_steps; ++s) {
    ineq_energy(f, y, grad);
    kernels::affine(step.data(), f.nullspace_projector.data(), nullptr, grad.data(), n, n);
    kernels::axpy(y.data(), step.data(), -cfg.correction_lr, n);
    t.iterates.push_back(y);
  }
  return t;
}

Vector dc3_backward(const ProblemFamily& f, const Dc3Trace& trace, std::span<const double> output_grad,
                    const Dc3Config& cfg) {
  const std::size_t n = f.n(), m = f.n_eq(), nf = f.n_free();
  if (trace.iterates.size() != cfg.correction_steps + 1) {
    throw std::logic_error("dc3_backward: trace does not match the correction step count");
  }
  if (output_grad.size() != n) throw std::invalid_argument("dc3_backward: output gradient has wrong length");

  // Through y_{t+1} = y_t - η P ∇φ(y_t):  ȳ_t = ȳ_{t+1} - η ∇²φ(y_t) P ȳ_{t+1}.
  Vector g(output_grad.begin(), output_grad.end()), pg(n);
  for (std::size_t s = cfg.correction_steps; s-- > 0;) {
    kernels::affine(pg.data(), f.nullspace_projector.data(), nullptr, g.data(), n, n);
    const Vector hv = ineq_energy_hvp(f, trace.iterates[s], pg);
    kernels::axpy(g.data(), hv.data(), -cfg.correction_lr, n);
  }

  // Through the completion: ∂y_comp/∂y_free = -completion_map.
  Vector out(nf);
  for (std::size_t i = 0; i < nf; ++i) out[i] = g[f.free_idx[i]];
  for (std::size_t j = 0; j < m; ++j) {
    const double gc = g[f.completed_idx[j]];
    if (gc != 0.0) kernels::axpy(out.data(), f.completion_map.row(j).data(), -gc, nf);
  }
  return out;
}

LossResult dc3_loss_and_grad(const ProblemFamily& f, const Network& net, const Matrix& xs, const LossWeights& w,
                             const Dc3Config& cfg, const PassOptions& pass) {
  check_batch(xs, f, "dc3_loss");
  check_net(net, f, "dc3_loss");
  cfg.validate();
  const std::size_t n = f.n(), nf = f.n_free();
  Vector partial(nf), gy(n);
  return batch_loss(net, xs, pass, [&](std::size_t b, std::span<const double> raw, std::span<double> g) {
    for (std::size_t i = 0; i < nf; ++i) partial[i] = raw[f.free_idx[i]];
    const Dc3Trace t = dc3_forward(f, partial, xs.row(b), cfg);
    std::fill(gy.begin(), gy.end(), 0.0);
    const double v = self_supervised_term(f, t.output(), xs.row(b), w, gy);
    const Vector gp = dc3_backward(f, t, gy, cfg);
    for (std::size_t i = 0; i < nf; ++i) g[f.free_idx[i]] += gp[i];
    return v;
  });
}

// ---------------------------------------------------------------------------
// Variants

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::hybrid:
      return "hybrid";
    case Variant::semi_supervised:
      return "semi_supervised";
    case Variant::warmstart_feasibility_only:
      return "warmstart_feasibility_only";
    case Variant::warmstart_obj_plus_feasibility:
      return "warmstart_obj_plus_feasibility";
  }
  return "unknown";
}

Variant parse_variant(const std::string& s) {
  for (auto v : {Variant::hybrid, Variant::semi_supervised, Variant::warmstart_feasibility_only,
                 Variant::warmstart_obj_plus_feasibility}) {
    if (variant_name(v) == s) return v;
  }
  throw std::invalid_argument("unknown variant '" + s + "'");
}

LossResult variant_losses(const ProblemFamily& f, const Network& net, const Matrix& labeled_xs, const Matrix& labels,
                          const Matrix& unlabeled_xs, const LossWeights& w, Variant variant, const PassOptions& pass) {
  switch (variant) {
    case Variant::hybrid: {
      check_batch(labeled_xs, f, "variant_losses(hybrid)");
      check_net(net, f, "variant_losses(hybrid)");
      if (labels.rows() != labeled_xs.rows() || labels.cols() != f.n()) {
        throw std::invalid_argument("variant_losses(hybrid): labels do not match the batch");
      }
      return batch_loss(net, labeled_xs, pass, [&](std::size_t b, std::span<const double> y, std::span<double> g) {
        const double v = self_supervised_term(f, y, labeled_xs.row(b), w, g);
        return huber_term(y, labels.row(b), w, g) + v;
      });
    }
    case Variant::semi_supervised: {
      if (labeled_xs.rows() == 0) throw std::invalid_argument("variant_losses(semi_supervised): empty labeled batch");
      LossResult r = sl_loss_and_grad(f, net, labeled_xs, labels, w, pass);
      if (unlabeled_xs.rows() > 0) {
        const LossResult u = ssl_penalty_loss_and_grad(f, net, unlabeled_xs, w, pass);
        r.loss += u.loss;
        kernels::axpy(r.grad.data(), u.grad.data(), 1.0, r.grad.size());
      }
      return r;
    }
    case Variant::warmstart_feasibility_only:
    case Variant::warmstart_obj_plus_feasibility: {
      LossWeights ww = w;
      if (variant == Variant::warmstart_feasibility_only) ww.lambda_obj = 0.0;
      const Matrix& xs = unlabeled_xs.rows() > 0 ? unlabeled_xs : labeled_xs;
      return ssl_penalty_loss_and_grad(f, net, xs, ww, pass);
    }
  }
  throw std::logic_error("variant_losses: unhandled variant");
}

// ---------------------------------------------------------------------------
// Heads

io::json to_json(const HeadConfig& h) {
  io::json j = {{"kind", h.kind == Head::dc3 ? "dc3" : "direct"}};
  if (h.kind == Head::dc3) j["dc3"] = to_json(h.dc3);
  return j;
}

HeadConfig head_from_json(const io::json& j) {
  HeadConfig h;
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "dc3") {
    h.kind = Head::dc3;
    h.dc3 = dc3_from_json(j.at("dc3"));
  } else if (kind != "direct") {
    throw std::invalid_argument("head.kind: unknown head '" + kind + "' (expected direct|dc3)");
  }
  return h;
}

Matrix predict(const ProblemFamily& f, const Network& net, const Matrix& xs, const HeadConfig& head) {
  check_net(net, f, "predict");
  Matrix ys = forward(net, xs, Mode::infer);
  if (head.kind == Head::direct) return ys;
  Vector partial(f.n_free());
  for (std::size_t b = 0; b < ys.rows(); ++b) {
    auto row = ys.row(b);
    for (std::size_t i = 0; i < partial.size(); ++i) partial[i] = row[f.free_idx[i]];
    const Dc3Trace t = dc3_forward(f, partial, xs.row(b), head.dc3);
    std::copy(t.output().begin(), t.output().end(), row.begin());
  }
  return ys;
}

}  // namespace alab
