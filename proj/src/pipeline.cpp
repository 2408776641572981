#include "alab/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <iomanip>
#include <set>
#include <sstream>
#include <stdexcept>

#include "alab/kernels.hpp"

namespace alab {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Plan pieces

AdamwConfig LrProfile::adamw(std::size_t total_steps) const {
  AdamwConfig c;
  c.base_lr = lr;
  c.lr_min = lr_min;
  c.total_steps = std::max<std::size_t>(total_steps, 1);
  c.warmup_steps = static_cast<std::size_t>(std::llround(warmup_fraction * static_cast<double>(c.total_steps)));
  c.warmup_steps = std::min(c.warmup_steps, c.total_steps);
  c.weight_decay = weight_decay;
  c.beta1 = beta1;
  c.beta2 = beta2;
  return c;
}

Architecture NetworkSpec::resolve(const ProblemFamily& family) const {
  Architecture a = mlp(family.n_eq(), depth, width, family.n(), activation, dropout);
  a.output = output;
  if (output == OutputTransform::box_squash) {
    a.lower = family.lower;
    a.upper = family.upper;
  }
  if (standardize_inputs) {
    // Parameters are A y0 + U[-w, w]: centre on A y0 and scale to unit variance.
    a.input_shift = anchor_parameter(family);
    a.input_scale.assign(family.n_eq(), std::sqrt(3.0) / family.options.param_halfwidth);
  }
  if (anchor_outputs) {
    // A zero last layer then predicts the anchor y0.
    a.output_shift = family.anchor;
    if (output == OutputTransform::box_squash) {
      for (std::size_t i = 0; i < a.output_shift.size(); ++i) {
        const double u = (family.anchor[i] - family.lower[i]) / (family.upper[i] - family.lower[i]);
        a.output_shift[i] = std::log(u / (1.0 - u));
      }
    }
  }
  a.validate();
  return a;
}

std::string method_name(SslMethod m) {
  switch (m) {
    case SslMethod::penalty:
      return "penalty";
    case SslMethod::adaptive_penalty:
      return "adaptive_penalty";
    case SslMethod::dc3:
      return "dc3";
  }
  return "unknown";
}

SslMethod parse_method(const std::string& s) {
  if (s == "penalty") return SslMethod::penalty;
  if (s == "adaptive_penalty") return SslMethod::adaptive_penalty;
  if (s == "dc3") return SslMethod::dc3;
  throw std::invalid_argument("unknown method '" + s + "' (expected penalty|adaptive_penalty|dc3)");
}

LossWeights method_weights(SslMethod m) {
  LossWeights w;
  w.lambda_sup = 0.0;
  switch (m) {
    case SslMethod::penalty:
      w.lambda_obj = 1.0;
      w.lambda_eq = 10.0;
      w.lambda_ineq = 10.0;
      break;
    case SslMethod::adaptive_penalty:
      w.lambda_obj = 1.0;
      w.lambda_eq = 10.0;
      w.lambda_ineq = 10.0;
      w.adaptive = AdaptiveSchedule{};
      break;
    case SslMethod::dc3:
      w.lambda_obj = 1.0;
      w.lambda_eq = 1.0;
      w.lambda_ineq = 10.0;
      break;
  }
  return w;
}

LossWeights supervised_weights() {
  LossWeights w;
  w.lambda_obj = 0.1;
  w.lambda_eq = 10.0;
  w.lambda_ineq = 10.0;
  w.lambda_sup = 100.0;
  return w;
}

HeadConfig Stage3Plan::head() const {
  HeadConfig h;
  if (method == SslMethod::dc3) {
    h.kind = Head::dc3;
    h.dc3 = dc3;
  }
  return h;
}

void StagePlan::validate() const {
  auto fail = [](const std::string& path, const std::string& why) { throw ConfigError("plan." + path + ": " + why); };
  if (seeds.empty()) fail("seeds", "must be nonempty");
  if (network.width == 0) fail("network.width", "must be >= 1");
  if (!(network.dropout >= 0.0 && network.dropout < 1.0)) fail("network.dropout", "must lie in [0, 1)");
  if (!(merit.rho > 0.0)) fail("merit.rho", "must be > 0");
  if (n_val == 0) fail("n_val", "must be >= 1");
  if (n_test == 0) fail("n_test", "must be >= 1");
  if (!family.path) {
    if (family.dims.n == 0 || family.dims.n_eq == 0 || family.dims.n_eq >= family.dims.n) {
      fail("family", "need 0 < n_eq < n");
    }
  }
  if (stage1.enabled && !stage1.dataset && stage1.n_samples == 0) fail("stage1.n_samples", "must be >= 1");
  try {
    stage1.budget.validate();
  } catch (const std::invalid_argument& e) {
    fail("stage1", e.what());
  }
  if (stage2.enabled) {
    if (stage2.epochs_max == 0) fail("stage2.epochs_max", "must be >= 1");
    if (stage2.eval_every == 0 || stage2.eval_every > stage2.epochs_max) {
      fail("stage2.eval_every", "must lie in [1, epochs_max]");
    }
    if (stage2.batch_size == 0) fail("stage2.batch_size", "must be >= 1");
    if (!stage1.enabled && !stage1.dataset) fail("stage2", "needs a dataset (enable stage1 or set stage1.dataset)");
  }
  if (stage3.enabled) {
    if (stage3.eval_every == 0) fail("stage3.eval_every", "must be >= 1");
    if (stage3.batch_size == 0) fail("stage3.batch_size", "must be >= 1");
  }
  try {
    stage2.weights.validate();
    stage3.weights.validate();
    stage3.dc3.validate();
    stage2.lr.adamw(1).validate();
    stage3.lr.adamw(1).validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("plan: ") + e.what());
  }
}

namespace {

LrProfile parse_lr(ConfigObject c, const LrProfile& d) {
  LrProfile p;
  p.lr = c.get<double>("lr", d.lr);
  p.lr_min = c.get<double>("lr_min", d.lr_min);
  p.warmup_fraction = c.get<double>("warmup_fraction", d.warmup_fraction);
  p.weight_decay = c.get<double>("weight_decay", d.weight_decay);
  p.beta1 = c.get<double>("beta1", d.beta1);
  p.beta2 = c.get<double>("beta2", d.beta2);
  c.finish();
  if (!(p.lr > 0.0)) c.fail("lr", "must be > 0");
  if (!(p.lr_min >= 0.0 && p.lr_min <= p.lr)) c.fail("lr_min", "must lie in [0, lr]");
  if (!(p.warmup_fraction >= 0.0 && p.warmup_fraction <= 1.0)) c.fail("warmup_fraction", "must lie in [0, 1]");
  if (!(p.beta1 >= 0.0 && p.beta1 < 1.0)) c.fail("beta1", "must lie in [0, 1)");
  if (!(p.beta2 >= 0.0 && p.beta2 < 1.0)) c.fail("beta2", "must lie in [0, 1)");
  if (!(p.weight_decay >= 0.0)) c.fail("weight_decay", "must be >= 0");
  return p;
}

io::json lr_json(const LrProfile& p) {
  return {{"lr", p.lr},
          {"lr_min", p.lr_min},
          {"warmup_fraction", p.warmup_fraction},
          {"weight_decay", p.weight_decay},
          {"beta1", p.beta1},
          {"beta2", p.beta2}};
}

LossWeights parse_weights(ConfigObject c, const LossWeights& d) {
  LossWeights w = d;
  w.lambda_obj = c.get<double>("lambda_obj", d.lambda_obj);
  w.lambda_eq = c.get<double>("lambda_eq", d.lambda_eq);
  w.lambda_ineq = c.get<double>("lambda_ineq", d.lambda_ineq);
  w.lambda_sup = c.get<double>("lambda_sup", d.lambda_sup);
  w.huber_delta = c.get<double>("huber_delta", d.huber_delta);
  if (c.has("adaptive")) {
    const AdaptiveSchedule base = d.adaptive.value_or(AdaptiveSchedule{});
    ConfigObject a = c.object("adaptive");
    w.adaptive = AdaptiveSchedule{a.get<double>("rate", base.rate), a.get<double>("eq_cap", base.eq_cap),
                                  a.get<double>("ineq_cap", base.ineq_cap),
                                  a.get<std::size_t>("patience", base.patience)};
    a.finish();
  } else if (c.present("adaptive")) {
    c.raw("adaptive");  // explicit null disables the schedule
    w.adaptive.reset();
  }
  c.finish();
  try {
    w.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(c.path() + ": " + e.what());
  }
  return w;
}

std::optional<fs::path> resolve_path(const std::optional<std::string>& p, const fs::path& base) {
  if (!p) return std::nullopt;
  fs::path path(*p);
  if (path.is_relative()) path = base / path;
  return path.lexically_normal();
}

}  // namespace

StagePlan parse_plan(const io::json& doc, const fs::path& base_dir) {
  ConfigObject root(doc, "plan");
  const auto schema = root.get<std::string>("schema", "");
  if (schema != "plan-v1") throw ConfigError("plan.schema: expected \"plan-v1\", got \"" + schema + "\"");
  StagePlan p;
  p.name = root.get<std::string>("name", p.name);

  {
    ConfigObject c = root.object("family");
    p.family.path = resolve_path(c.optional<std::string>("path"), base_dir);
    p.family.dims.n = c.get<std::size_t>("n", p.family.dims.n);
    p.family.dims.n_eq = c.get<std::size_t>("n_eq", p.family.dims.n_eq);
    p.family.dims.n_ineq = c.get<std::size_t>("n_ineq", p.family.dims.n_ineq);
    p.family.dims.k = c.get<std::size_t>("k", p.family.dims.k);
    p.family.seed = c.get<std::uint64_t>("seed", p.family.seed);
    c.finish();
  }
  {
    ConfigObject c = root.object("network");
    p.network.depth = c.get<std::size_t>("depth", p.network.depth);
    p.network.width = c.get<std::size_t>("width", p.network.width);
    try {
      p.network.activation = parse_activation(c.get<std::string>("activation", "relu"));
    } catch (const std::invalid_argument& e) {
      c.fail("activation", e.what());
    }
    p.network.dropout = c.get<double>("dropout", p.network.dropout);
    try {
      p.network.output = parse_output_transform(c.get<std::string>("output_transform", "identity"));
    } catch (const std::invalid_argument& e) {
      c.fail("output_transform", e.what());
    }
    p.network.standardize_inputs = c.get<bool>("standardize_inputs", true);
    p.network.anchor_outputs = c.get<bool>("anchor_outputs", true);
    c.finish();
  }
  {
    ConfigObject c = root.object("stage1");
    p.stage1.enabled = c.get<bool>("enabled", true);
    p.stage1.dataset = resolve_path(c.optional<std::string>("dataset"), base_dir);
    p.stage1.n_samples = c.get<std::size_t>("n_samples", p.stage1.n_samples);
    const bool has_tier = c.has("tier"), has_budget = c.has("budget");
    if (has_tier && has_budget) c.fail("budget", "give either tier or budget, not both");
    if (has_budget) {
      try {
        p.stage1.budget = budget_from_json(c.raw("budget"));
      } catch (const std::exception& e) {
        c.fail("budget", e.what());
      }
    } else {
      const auto tier = c.get<std::string>("tier", "cheap");
      try {
        p.stage1.budget = tier_budget(parse_tier(tier));
      } catch (const std::invalid_argument& e) {
        c.fail("tier", e.what());
      }
    }
    c.finish();
  }
  {
    ConfigObject c = root.object("stage2");
    auto& s = p.stage2;
    s.enabled = c.get<bool>("enabled", true);
    s.epochs_max = c.get<std::size_t>("epochs_max", s.epochs_max);
    s.eval_every = c.get<std::size_t>("eval_every", s.eval_every);
    s.patience = c.get<std::size_t>("patience", s.patience);
    s.batch_size = c.get<std::size_t>("batch_size", s.batch_size);
    s.weights = parse_weights(c.object("weights"), supervised_weights());
    s.lr = parse_lr(c.object("lr"), LrProfile{});
    c.finish();
  }
  {
    ConfigObject c = root.object("stage3");
    auto& s = p.stage3;
    s.enabled = c.get<bool>("enabled", true);
    try {
      s.method = parse_method(c.get<std::string>("method", "penalty"));
    } catch (const std::invalid_argument& e) {
      c.fail("method", e.what());
    }
    s.epochs = c.get<std::size_t>("epochs", s.epochs);
    s.eval_every = c.get<std::size_t>("eval_every", s.eval_every);
    s.batch_size = c.get<std::size_t>("batch_size", s.batch_size);
    s.n_inputs = c.get<std::size_t>("n_inputs", s.n_inputs);
    s.weights = parse_weights(c.object("weights"), method_weights(s.method));
    {
      ConfigObject d = c.object("dc3");
      s.dc3.correction_steps = d.get<std::size_t>("correction_steps", s.dc3.correction_steps);
      s.dc3.correction_lr = d.get<double>("correction_lr", s.dc3.correction_lr);
      d.finish();
    }
    LrProfile lr_default;
    if (s.method == SslMethod::dc3) lr_default.lr = 5e-4;
    s.lr = parse_lr(c.object("lr"), lr_default);
    c.finish();
  }
  p.seeds = root.get<std::vector<std::uint64_t>>("seeds", p.seeds);
  {
    ConfigObject c = root.object("merit");
    p.merit.rho = c.get<double>("rho", p.merit.rho);
    c.finish();
  }
  p.data_seed = root.get<std::uint64_t>("data_seed", p.data_seed);
  p.n_val = root.get<std::size_t>("n_val", p.n_val);
  p.n_test = root.get<std::size_t>("n_test", p.n_test);
  root.finish();
  p.validate();
  return p;
}

StagePlan load_plan(const fs::path& path) {
  io::json doc;
  try {
    doc = io::read_json(path);
  } catch (const std::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  try {
    return parse_plan(doc, path.has_parent_path() ? path.parent_path() : fs::path("."));
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

io::json to_json(const StagePlan& p) {
  io::json j;
  j["schema"] = "plan-v1";
  j["name"] = p.name;
  if (p.family.path) {
    j["family"] = {{"path", p.family.path->string()}};
  } else {
    j["family"] = {{"n", p.family.dims.n},
                   {"n_eq", p.family.dims.n_eq},
                   {"n_ineq", p.family.dims.n_ineq},
                   {"k", p.family.dims.k},
                   {"seed", p.family.seed}};
  }
  j["network"] = {{"depth", p.network.depth},
                  {"width", p.network.width},
                  {"activation", activation_name(p.network.activation)},
                  {"dropout", p.network.dropout},
                  {"output_transform", output_transform_name(p.network.output)},
                  {"standardize_inputs", p.network.standardize_inputs},
                  {"anchor_outputs", p.network.anchor_outputs}};
  j["stage1"] = {{"enabled", p.stage1.enabled},
                 {"n_samples", p.stage1.n_samples},
                 {"budget", to_json(p.stage1.budget)}};
  if (p.stage1.dataset) j["stage1"]["dataset"] = p.stage1.dataset->string();
  j["stage2"] = {{"enabled", p.stage2.enabled},
                 {"epochs_max", p.stage2.epochs_max},
                 {"eval_every", p.stage2.eval_every},
                 {"patience", p.stage2.patience},
                 {"batch_size", p.stage2.batch_size},
                 {"weights", to_json(p.stage2.weights)},
                 {"lr", lr_json(p.stage2.lr)}};
  io::json w3 = to_json(p.stage3.weights);
  if (!p.stage3.weights.adaptive) w3["adaptive"] = nullptr;
  io::json w2 = to_json(p.stage2.weights);
  if (!p.stage2.weights.adaptive) w2["adaptive"] = nullptr;
  j["stage2"]["weights"] = w2;
  j["stage3"] = {{"enabled", p.stage3.enabled},
                 {"method", method_name(p.stage3.method)},
                 {"epochs", p.stage3.epochs},
                 {"eval_every", p.stage3.eval_every},
                 {"batch_size", p.stage3.batch_size},
                 {"n_inputs", p.stage3.n_inputs},
                 {"weights", w3},
                 {"dc3", to_json(p.stage3.dc3)},
                 {"lr", lr_json(p.stage3.lr)}};
  j["seeds"] = p.seeds;
  j["merit"] = {{"rho", p.merit.rho}};
  j["data_seed"] = p.data_seed;
  j["n_val"] = p.n_val;
  j["n_test"] = p.n_test;
  return j;
}

// ---------------------------------------------------------------------------
// Training loops

io::json to_json(const EvalPoint& p) {
  return {{"epoch", p.epoch},
          {"train_loss", p.train_loss},
          {"val_mean_merit", p.val.mean_merit},
          {"val_mean_objective", p.val.mean_objective},
          {"val_mean_eq_l1", p.val.mean_eq_l1},
          {"val_mean_ineq_l1", p.val.mean_ineq_l1},
          {"val_max_merit", p.val.max_merit},
          {"lambda_eq", p.lambda_eq},
          {"lambda_ineq", p.lambda_ineq}};
}

MeritReport evaluate_model(const ProblemFamily& family, const Network& net, const Matrix& xs, const HeadConfig& head,
                           const MeritConfig& merit) {
  return evaluate_solutions(family, predict(family, net, xs, head), xs, merit);
}

namespace {

std::vector<std::size_t> permutation(Rng& rng, std::size_t n) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  for (std::size_t i = n; i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng() % i);
    std::swap(idx[i - 1], idx[j]);
  }
  return idx;
}

std::size_t batches_per_epoch(std::size_t n, std::size_t batch) { return (n + batch - 1) / batch; }

void check_disjoint(const Matrix& a, const Matrix& b) {
  std::set<std::vector<double>> rows;
  for (std::size_t i = 0; i < a.rows(); ++i) rows.emplace(a.row(i).begin(), a.row(i).end());
  for (std::size_t i = 0; i < b.rows(); ++i) {
    if (rows.count(std::vector<double>(b.row(i).begin(), b.row(i).end()))) {
      throw std::invalid_argument("validation parameters overlap the training parameters");
    }
  }
}

// One epoch of minibatch training; `step` computes the loss on a batch of row
// indices. Returns the sample-weighted mean loss.
template <class Step>
double run_epoch(Network& net, OptimizerState& opt, std::size_t n, std::size_t batch, Rng& shuffle, Step&& step,
                 std::size_t epoch) {
  const auto order = permutation(shuffle, n);
  double total = 0.0;
  for (std::size_t start = 0; start < n; start += batch) {
    const std::size_t end = std::min(n, start + batch);
    std::span<const std::size_t> idx(order.data() + start, end - start);
    LossResult r = step(idx);
    if (!std::isfinite(r.loss) ||
        !std::all_of(r.grad.begin(), r.grad.end(), [](double g) { return std::isfinite(g); })) {
      throw std::runtime_error("non-finite training loss at epoch " + std::to_string(epoch) + ", batch starting " +
                               std::to_string(start) + " (loss " + std::to_string(r.loss) + ")");
    }
    total += r.loss * static_cast<double>(end - start);
    adamw_step(net, r.grad, opt);
  }
  return total / static_cast<double>(n);
}

}  // namespace

PretrainResult pretrain_with_merit_stop(const ProblemFamily& family, const Matrix& train_xs, const Matrix& labels,
                                        const Matrix& val_xs, const Stage2Plan& plan, const Architecture& arch,
                                        std::uint64_t seed, const MeritConfig& merit, const Network* init,
                                        const EvalHook& hook) {
  if (train_xs.rows() == 0) throw std::invalid_argument("pretrain: empty dataset");
  if (labels.rows() != train_xs.rows()) throw std::invalid_argument("pretrain: labels do not match inputs");
  if (plan.eval_every == 0 || plan.epochs_max == 0) throw std::invalid_argument("pretrain: epochs and eval_every >= 1");
  check_disjoint(train_xs, val_xs);
  Network net = init ? *init : init_network(arch, seed);
  const std::size_t n = train_xs.rows();
  OptimizerState opt = make_optimizer(net, plan.lr.adamw(plan.epochs_max * batches_per_epoch(n, plan.batch_size)));
  Rng shuffle = make_rng(seed, Stream::shuffle, 2);
  Rng dropout = make_rng(seed, Stream::dropout, 2);
  const PassOptions pass{Mode::train, &dropout};

  PretrainResult res;
  res.best_merit = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;
  for (std::size_t epoch = 1; epoch <= plan.epochs_max; ++epoch) {
    const double loss = run_epoch(
        net, opt, n, plan.batch_size, shuffle,
        [&](std::span<const std::size_t> idx) {
          return sl_loss_and_grad(family, net, gather_rows(train_xs, idx), gather_rows(labels, idx), plan.weights,
                                  pass);
        },
        epoch);
    res.epochs_run = epoch;
    if (epoch % plan.eval_every != 0 && epoch != plan.epochs_max) continue;
    EvalPoint pt;
    pt.epoch = epoch;
    pt.train_loss = loss;
    pt.val = evaluate_model(family, net, val_xs, {}, merit);
    pt.lambda_eq = plan.weights.lambda_eq;
    pt.lambda_ineq = plan.weights.lambda_ineq;
    if (!std::isfinite(pt.val.mean_merit)) {
      throw std::runtime_error("non-finite validation merit at epoch " + std::to_string(epoch));
    }
    res.log.push_back(pt);
    if (hook) hook(epoch, net);
    if (pt.val.mean_merit < res.best_merit) {
      res.best_merit = pt.val.mean_merit;
      res.best_epoch = epoch;
      res.best = net;
      since_best = 0;
    } else if (plan.patience > 0 && ++since_best >= plan.patience) {
      res.stopped_early = epoch < plan.epochs_max;
      break;
    }
  }
  res.final_net = net;
  return res;
}

SslResult run_ssl(const ProblemFamily& family, const Network& init, const Matrix& train_xs, const Matrix& val_xs,
                  const Stage3Plan& plan, std::uint64_t seed, const MeritConfig& merit, const EvalHook& hook) {
  if (plan.eval_every == 0) throw std::invalid_argument("run_ssl: eval_every must be >= 1");
  if (plan.epochs > 0 && train_xs.rows() == 0) throw std::invalid_argument("run_ssl: empty training set");
  check_disjoint(train_xs, val_xs);
  plan.weights.validate();
  const HeadConfig head = plan.head();
  Network net = init;
  const std::size_t n = train_xs.rows();
  OptimizerState opt =
      make_optimizer(net, plan.lr.adamw(plan.epochs * batches_per_epoch(std::max<std::size_t>(n, 1), plan.batch_size)));
  Rng shuffle = make_rng(seed, Stream::shuffle, 3);
  Rng dropout = make_rng(seed, Stream::dropout, 3);
  const PassOptions pass{Mode::train, &dropout};

  SslResult res;
  LossWeights w = plan.weights;
  std::vector<double> violation_history;
  auto evaluate = [&](std::size_t epoch, double loss) {
    EvalPoint pt;
    pt.epoch = epoch;
    pt.train_loss = loss;
    pt.val = evaluate_model(family, net, val_xs, head, merit);
    pt.lambda_eq = w.lambda_eq;
    pt.lambda_ineq = w.lambda_ineq;
    if (!std::isfinite(pt.val.mean_merit)) {
      throw std::runtime_error("non-finite validation merit at epoch " + std::to_string(epoch));
    }
    res.log.push_back(pt);
    if (hook) hook(epoch, net);
    if (res.log.size() == 1 || pt.val.mean_merit < res.best_merit) {
      res.best_merit = pt.val.mean_merit;
      res.best_epoch = epoch;
      res.best = net;
    }
    if (w.adaptive) {
      violation_history.push_back(pt.val.mean_eq_l1 + pt.val.mean_ineq_l1);
      const LossWeights next = adaptive_update(w, violation_history);
      if (next.lambda_eq != w.lambda_eq || next.lambda_ineq != w.lambda_ineq) violation_history.clear();
      w = next;
    }
  };

  evaluate(0, 0.0);
  for (std::size_t epoch = 1; epoch <= plan.epochs; ++epoch) {
    const double loss = run_epoch(
        net, opt, n, plan.batch_size, shuffle,
        [&](std::span<const std::size_t> idx) {
          const Matrix xb = gather_rows(train_xs, idx);
          if (plan.method == SslMethod::dc3) return dc3_loss_and_grad(family, net, xb, w, plan.dc3, pass);
          return ssl_penalty_loss_and_grad(family, net, xb, w, pass);
        },
        epoch);
    if (epoch % plan.eval_every == 0 || epoch == plan.epochs) evaluate(epoch, loss);
  }
  res.final_net = net;
  res.final_weights = w;
  return res;
}

// ---------------------------------------------------------------------------
// Ledger

io::json to_json(const TimeLedger& t) {
  return {{"generation_s", t.generation_s},
          {"supervised_s", t.supervised_s},
          {"self_supervised_s", t.self_supervised_s},
          {"total_s", t.total_s}};
}

TimeLedger time_ledger_from_json(const io::json& j) {
  TimeLedger t;
  t.generation_s = j.at("generation_s").get<double>();
  t.supervised_s = j.at("supervised_s").get<double>();
  t.self_supervised_s = j.at("self_supervised_s").get<double>();
  t.total_s = j.at("total_s").get<double>();
  return t;
}

std::string ledger_csv_header() { return "run,generation_s,supervised_s,self_supervised_s,total_s"; }

std::string ledger_csv_row(const std::string& label, const TimeLedger& t) {
  return label + "," + io::fmt_real(t.generation_s) + "," + io::fmt_real(t.supervised_s) + "," +
         io::fmt_real(t.self_supervised_s) + "," + io::fmt_real(t.total_s);
}

// ---------------------------------------------------------------------------
// Whole runs

namespace {

constexpr std::uint64_t kValidationOffset = 1'000'000'000ULL;
constexpr std::uint64_t kTestOffset = 2'000'000'000ULL;

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void write_log(const fs::path& path, const std::vector<EvalPoint>& log) {
  io::NdjsonLog out;
  for (const auto& p : log) out.append(to_json(p));
  out.write(path);
}

}  // namespace

Matrix validation_parameters(const ProblemFamily& family, const StagePlan& plan) {
  return sample_parameters(family, plan.data_seed, plan.n_val, kValidationOffset);
}

Matrix test_parameters(const ProblemFamily& family, const StagePlan& plan) {
  return sample_parameters(family, plan.data_seed, plan.n_test, kTestOffset);
}

ProblemFamily resolve_family(const StagePlan& plan) {
  if (plan.family.path) return load_family(*plan.family.path);
  return generate_family(plan.family.dims, plan.family.seed);
}

PipelineResult run_pipeline(const StagePlan& plan, const fs::path& out) {
  plan.validate();
  fs::create_directories(out);
  const io::json resolved = to_json(plan);
  io::write_json(out / "plan.json", resolved);

  const ProblemFamily family = resolve_family(plan);
  fs::path family_path;
  if (plan.family.path) {
    family_path = *plan.family.path;
  } else {
    family_path = out / "family.json";
    save_family(family, family_path);
  }
  const Matrix val_xs = validation_parameters(family, plan);
  const Matrix test_xs = test_parameters(family, plan);
  const Architecture arch = plan.network.resolve(family);
  const HeadConfig head = plan.stage3.head();

  PipelineResult result;
  result.dir = out;
  std::string report_csv = merit_csv_header() + "\n";
  std::string ledger_csv = ledger_csv_header() + "\n";

  for (const std::uint64_t seed : plan.seeds) {
    const fs::path dir = out / ("seed-" + std::to_string(seed));
    fs::create_directories(dir);
    SeedOutcome outcome;
    outcome.seed = seed;
    TimeLedger& ledger = outcome.ledger;
    io::json status = {{"seed", seed}};
    try {
      // Stage 1
      std::optional<Dataset> data;
      if (plan.stage1.dataset) {
        data = load_dataset(*plan.stage1.dataset, family);
      } else if (plan.stage1.enabled) {
        const auto t0 = std::chrono::steady_clock::now();
        data = build_dataset(family, plan.stage1.n_samples, plan.stage1.budget, seed);
        save_dataset(*data, dir / "dataset", family_path);
        ledger.generation_s = seconds_since(t0);
      }

      // Stage 2
      Network init = init_network(arch, seed);
      if (plan.stage2.enabled) {
        const auto t0 = std::chrono::steady_clock::now();
        PretrainResult pre = pretrain_with_merit_stop(family, data->xs, data->ys, val_xs, plan.stage2, arch, seed,
                                                      plan.merit);
        ledger.supervised_s = seconds_since(t0);
        write_log(dir / "pretrain.ndjson", pre.log);
        save_checkpoint({pre.best, std::nullopt, {{"stage", "pretrain_best"}, {"epoch", pre.best_epoch},
                                                  {"head", to_json(HeadConfig{})}}},
                        dir / "pretrain_best.json");
        outcome.pretrain_best_epoch = pre.best_epoch;
        status["pretrain"] = {{"best_epoch", pre.best_epoch},
                              {"best_val_merit", pre.best_merit},
                              {"epochs_run", pre.epochs_run},
                              {"stopped_early", pre.stopped_early}};
        init = pre.best;
      }

      // Stage 3
      Network final_net = init, best = init;
      if (plan.stage3.enabled) {
        const Matrix train_xs = plan.stage3.n_inputs > 0 ? sample_parameters(family, seed, plan.stage3.n_inputs)
                                : data ? data->xs
                                       : sample_parameters(family, seed, plan.stage1.n_samples);
        const auto t0 = std::chrono::steady_clock::now();
        SslResult ssl = run_ssl(family, init, train_xs, val_xs, plan.stage3, seed, plan.merit);
        ledger.self_supervised_s = seconds_since(t0);
        write_log(dir / "ssl.ndjson", ssl.log);
        final_net = ssl.final_net;
        best = ssl.best;
        outcome.ssl_best_epoch = ssl.best_epoch;
        status["ssl"] = {{"best_epoch", ssl.best_epoch},
                         {"best_val_merit", ssl.best_merit},
                         {"final_lambda_eq", ssl.final_weights.lambda_eq},
                         {"final_lambda_ineq", ssl.final_weights.lambda_ineq}};
      }
      const io::json head_json = to_json(plan.stage3.enabled ? head : HeadConfig{});
      save_checkpoint({final_net, std::nullopt, {{"stage", "final"}, {"head", head_json}}}, dir / "final.json");
      save_checkpoint({best, std::nullopt, {{"stage", "best"}, {"head", head_json}}}, dir / "best.json");

      const HeadConfig eval_head = plan.stage3.enabled ? head : HeadConfig{};
      outcome.test_final = evaluate_model(family, final_net, test_xs, eval_head, plan.merit);
      outcome.test_best = evaluate_model(family, best, test_xs, eval_head, plan.merit);
      outcome.ok = true;
      status["ok"] = true;
      status["test_final"] = to_json(outcome.test_final);
      status["test_best"] = to_json(outcome.test_best);
      report_csv += merit_csv_row(plan.name + "/seed-" + std::to_string(seed), outcome.test_final) + "\n";
    } catch (const std::exception& e) {
      outcome.ok = false;
      outcome.error = e.what();
      status["ok"] = false;
      status["error"] = e.what();
    }
    ledger.finalize();
    io::write_json(dir / "report.json", status);
    io::write_json(dir / "ledger.json", to_json(ledger));
    ledger_csv += ledger_csv_row(plan.name + "/seed-" + std::to_string(seed), ledger) + "\n";
    result.seeds.push_back(std::move(outcome));
  }
  io::write_file_atomic(out / "report.csv", report_csv);
  io::write_file_atomic(out / "ledger.csv", ledger_csv);
  io::write_json(out / "manifest.json", build_run_manifest(out, resolved, plan.seeds));
  return result;
}

// ---------------------------------------------------------------------------
// Run manifest

io::json build_run_manifest(const fs::path& dir, const io::json& resolved_config,
                            const std::vector<std::uint64_t>& seeds) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), dir);
    if (rel == "manifest.json") continue;
    files.push_back(rel);
  }
  std::sort(files.begin(), files.end());
  io::json artifacts = io::json::array();
  for (const auto& rel : files) {
    artifacts.push_back({{"path", rel.generic_string()}, {"sha256", io::sha256_file(dir / rel)}});
  }
  io::json m;
  m["format"] = "run-v1";
  m["tool_version"] = kToolVersion;
  m["config"] = resolved_config;
  m["seeds"] = seeds;
  m["kernels"] = std::string(kernels::isa_name(kernels::active_isa()));
  m["artifacts"] = artifacts;
  if (fs::exists(dir / "family.json")) {
    m["family"] = {{"path", "family.json"}, {"sha256", io::sha256_file(dir / "family.json")}};
  } else if (resolved_config.contains("family") && resolved_config["family"].contains("path")) {
    const fs::path fp = resolved_config["family"]["path"].get<std::string>();
    m["family"] = {{"path", fp.string()}, {"sha256", io::sha256_file(fp)}};
  }
  if (resolved_config.contains("stage1") && resolved_config["stage1"].contains("dataset") &&
      resolved_config["stage1"]["dataset"].is_string()) {
    const fs::path dp = resolved_config["stage1"]["dataset"].get<std::string>();
    io::json files = io::json::array();
    for (const char* name : {"dataset.json", "dataset.bin", "records.ndjson"}) {
      files.push_back({{"path", (dp / name).string()}, {"sha256", io::sha256_file(dp / name)}});
    }
    m["dataset"] = files;
  }
  const std::time_t now = std::time(nullptr);
  std::ostringstream ts;
  ts << std::put_time(std::gmtime(&now), "%Y-%m-%dT%H:%M:%SZ");
  m["created"] = ts.str();
  return m;
}

void verify_run_manifest(const fs::path& dir) {
  const io::json m = io::read_json(dir / "manifest.json");
  for (const auto& a : m.at("artifacts")) {
    const fs::path p = dir / a.at("path").get<std::string>();
    if (!fs::exists(p)) throw io::FormatError(p.string() + ": listed in the run manifest but missing");
    if (io::sha256_file(p) != a.at("sha256").get<std::string>()) {
      throw io::FormatError(p.string() + ": hash does not match the run manifest");
    }
  }
  if (m.contains("dataset")) {
    for (const auto& a : m.at("dataset")) {
      const fs::path p = a.at("path").get<std::string>();
      if (!fs::exists(p) || io::sha256_file(p) != a.at("sha256").get<std::string>()) {
        throw io::FormatError(p.string() + ": dataset file missing or changed since the run");
      }
    }
  }
  if (m.contains("family")) {
    fs::path fp = m["family"]["path"].get<std::string>();
    if (fp.is_relative() && !fs::exists(fp)) fp = dir / fp;
    if (!fs::exists(fp) || io::sha256_file(fp) != m["family"]["sha256"].get<std::string>()) {
      throw io::FormatError(fp.string() + ": family file missing or changed since the run");
    }
  }
}

}  // namespace alab
