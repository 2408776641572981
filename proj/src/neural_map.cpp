#include "alab/neural_map.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "alab/kernels.hpp"

namespace alab {

std::string activation_name(Activation a) {
  switch (a) {
    case Activation::relu:
      return "relu";
    case Activation::silu:
      return "silu";
    case Activation::tanh:
      return "tanh";
  }
  return "unknown";
}

Activation parse_activation(const std::string& s) {
  if (s == "relu") return Activation::relu;
  if (s == "silu") return Activation::silu;
  if (s == "tanh") return Activation::tanh;
  throw std::invalid_argument("unknown activation '" + s + "' (expected relu|silu|tanh)");
}

std::string output_transform_name(OutputTransform t) {
  return t == OutputTransform::box_squash ? "box_squash" : "identity";
}

OutputTransform parse_output_transform(const std::string& s) {
  if (s == "identity") return OutputTransform::identity;
  if (s == "box_squash") return OutputTransform::box_squash;
  throw std::invalid_argument("unknown output transform '" + s + "' (expected identity|box_squash)");
}

void Architecture::validate() const {
  if (layer_sizes.size() < 2) throw std::invalid_argument("architecture: need at least input and output sizes");
  for (auto s : layer_sizes) {
    if (s == 0) throw std::invalid_argument("architecture: layer sizes must be positive");
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) throw std::invalid_argument("architecture: dropout must lie in [0, 1)");
  if (input_shift.size() != input_scale.size() || (!input_shift.empty() && input_shift.size() != input_dim())) {
    throw std::invalid_argument("architecture: input standardization must be empty or of input width");
  }
  if (!output_shift.empty() && output_shift.size() != output_dim()) {
    throw std::invalid_argument("architecture: output shift must be empty or of output width");
  }
  if (output == OutputTransform::box_squash) {
    if (lower.size() != output_dim() || upper.size() != output_dim()) {
      throw std::invalid_argument("architecture: box_squash needs lower/upper of output width");
    }
    for (std::size_t i = 0; i < lower.size(); ++i) {
      if (!(lower[i] < upper[i])) throw std::invalid_argument("architecture: box_squash needs lower < upper");
    }
  }
}

Architecture mlp(std::size_t in, std::size_t depth, std::size_t width, std::size_t out, Activation activation,
                 double dropout) {
  Architecture a;
  a.layer_sizes.push_back(in);
  for (std::size_t i = 0; i < depth; ++i) a.layer_sizes.push_back(width);
  a.layer_sizes.push_back(out);
  a.activation = activation;
  a.dropout = dropout;
  return a;
}

Network::Network(Architecture arch) : arch_(std::move(arch)) {
  arch_.validate();
  std::size_t off = 0;
  for (std::size_t l = 0; l < arch_.n_layers(); ++l) {
    w_off_.push_back(off);
    off += arch_.layer_sizes[l] * arch_.layer_sizes[l + 1];
    b_off_.push_back(off);
    off += arch_.layer_sizes[l + 1];
  }
  theta_.assign(off, 0.0);
}

void Network::set_params(std::span<const double> theta) {
  if (theta.size() != theta_.size()) throw std::invalid_argument("Network::set_params: wrong parameter count");
  std::copy(theta.begin(), theta.end(), theta_.begin());
  ++version_;
}

Network init_network(const Architecture& arch, std::uint64_t seed) {
  Network net(arch);
  Rng rng = make_rng(seed, Stream::network_init);
  auto theta = net.mutable_params();
  for (std::size_t l = 0; l < arch.n_layers(); ++l) {
    const std::size_t in = arch.layer_sizes[l], out = arch.layer_sizes[l + 1];
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    for (std::size_t i = 0; i < in * out; ++i) theta[net.weight_offset(l) + i] = uniform(rng, -bound, bound);
    for (std::size_t i = 0; i < out; ++i) theta[net.bias_offset(l) + i] = uniform(rng, -bound, bound);
  }
  return net;
}

namespace {

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

void activate(Activation a, double* out, const double* in, std::size_t n) {
  switch (a) {
    case Activation::relu:
      kernels::relu_forward(out, in, n);
      return;
    case Activation::silu:
      for (std::size_t i = 0; i < n; ++i) out[i] = in[i] * sigmoid(in[i]);
      return;
    case Activation::tanh:
      for (std::size_t i = 0; i < n; ++i) out[i] = std::tanh(in[i]);
      return;
  }
}

// grad ← grad ⊙ act'(pre)
void activate_backward(Activation a, double* grad, const double* pre, std::size_t n) {
  switch (a) {
    case Activation::relu:
      kernels::relu_backward(grad, pre, n);
      return;
    case Activation::silu:
      for (std::size_t i = 0; i < n; ++i) {
        const double s = sigmoid(pre[i]);
        grad[i] *= s * (1.0 + pre[i] * (1.0 - s));
      }
      return;
    case Activation::tanh:
      for (std::size_t i = 0; i < n; ++i) {
        const double t = std::tanh(pre[i]);
        grad[i] *= 1.0 - t * t;
      }
      return;
  }
}

}  // namespace

Matrix forward(const Network& net, const Matrix& xs, Mode mode, Rng* rng, ForwardCache* cache) {
  const Architecture& arch = net.arch();
  if (xs.cols() != arch.input_dim()) {
    throw std::invalid_argument("forward: input width " + std::to_string(xs.cols()) + " does not match network input " +
                                std::to_string(arch.input_dim()));
  }
  const bool dropout = mode == Mode::train && arch.dropout > 0.0;
  if (dropout && rng == nullptr) throw std::invalid_argument("forward: train-mode dropout needs an rng");
  const std::size_t batch = xs.rows();
  const auto theta = net.params();
  const double keep_scale = dropout ? 1.0 / (1.0 - arch.dropout) : 1.0;

  if (cache) {
    cache->net = &net;
    cache->version = net.version();
    cache->inputs.clear();
    cache->pre.clear();
    cache->masks.clear();
  }

  Matrix a = xs;
  if (!arch.input_shift.empty()) {
    for (std::size_t b = 0; b < batch; ++b) {
      auto r = a.row(b);
      for (std::size_t i = 0; i < r.size(); ++i) r[i] = (r[i] - arch.input_shift[i]) * arch.input_scale[i];
    }
  }
  for (std::size_t l = 0; l < arch.n_layers(); ++l) {
    const std::size_t in = arch.layer_sizes[l], out = arch.layer_sizes[l + 1];
    const bool hidden = l + 1 < arch.n_layers();
    Matrix z(batch, out);
    for (std::size_t b = 0; b < batch; ++b) {
      kernels::affine(z.row(b).data(), theta.data() + net.weight_offset(l), theta.data() + net.bias_offset(l),
                      a.row(b).data(), out, in);
    }
    if (cache) cache->inputs.push_back(a);
    if (!hidden) {
      if (!arch.output_shift.empty()) {
        for (std::size_t b = 0; b < batch; ++b) {
          auto r = z.row(b);
          for (std::size_t i = 0; i < out; ++i) r[i] += arch.output_shift[i];
        }
      }
      if (cache) cache->pre.push_back(z);
      a = std::move(z);
      break;
    }
    Matrix h(batch, out);
    for (std::size_t b = 0; b < batch; ++b) activate(arch.activation, h.row(b).data(), z.row(b).data(), out);
    if (dropout) {
      Matrix mask(batch, out);
      for (std::size_t i = 0; i < mask.size(); ++i) {
        mask.data()[i] = uniform(*rng, 0.0, 1.0) < arch.dropout ? 0.0 : keep_scale;
        h.data()[i] *= mask.data()[i];
      }
      if (cache) cache->masks.push_back(std::move(mask));
    } else if (cache) {
      cache->masks.emplace_back();
    }
    if (cache) cache->pre.push_back(std::move(z));
    a = std::move(h);
  }

  if (arch.output == OutputTransform::box_squash) {
    for (std::size_t b = 0; b < batch; ++b) {
      auto r = a.row(b);
      for (std::size_t i = 0; i < r.size(); ++i) r[i] = arch.lower[i] + (arch.upper[i] - arch.lower[i]) * sigmoid(r[i]);
    }
  }
  return a;
}

Vector backward(const Network& net, const ForwardCache& cache, const Matrix& output_grad) {
  if (cache.net != &net || cache.version != net.version()) {
    throw std::logic_error("backward: forward cache is stale (network changed since the forward pass)");
  }
  const Architecture& arch = net.arch();
  const std::size_t L = arch.n_layers();
  if (cache.pre.size() != L) throw std::logic_error("backward: forward cache is incomplete");
  const std::size_t batch = cache.pre.back().rows();
  if (output_grad.rows() != batch || output_grad.cols() != arch.output_dim()) {
    throw std::invalid_argument("backward: output gradient shape does not match the cached batch");
  }
  const auto theta = net.params();
  Vector grad(net.param_count(), 0.0);

  Matrix delta = output_grad;
  if (arch.output == OutputTransform::box_squash) {
    const Matrix& z = cache.pre.back();
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t i = 0; i < z.cols(); ++i) {
        const double s = sigmoid(z(b, i));
        delta(b, i) *= (arch.upper[i] - arch.lower[i]) * s * (1.0 - s);
      }
    }
  }

  for (std::size_t l = L; l-- > 0;) {
    const std::size_t in = arch.layer_sizes[l], out = arch.layer_sizes[l + 1];
    const Matrix& a_in = cache.inputs[l];
    double* gw = grad.data() + net.weight_offset(l);
    double* gb = grad.data() + net.bias_offset(l);
    for (std::size_t b = 0; b < batch; ++b) {
      const double* d = delta.row(b).data();
      for (std::size_t r = 0; r < out; ++r) {
        if (d[r] == 0.0) continue;
        kernels::axpy(gw + r * in, a_in.row(b).data(), d[r], in);
        gb[r] += d[r];
      }
    }
    if (l == 0) break;
    Matrix prev(batch, in);
    const double* w = theta.data() + net.weight_offset(l);
    for (std::size_t b = 0; b < batch; ++b) {
      const double* d = delta.row(b).data();
      double* p = prev.row(b).data();
      for (std::size_t r = 0; r < out; ++r) {
        if (d[r] != 0.0) kernels::axpy(p, w + r * in, d[r], in);
      }
    }
    const Matrix& mask = cache.masks[l - 1];
    if (!mask.empty()) {
      for (std::size_t i = 0; i < prev.size(); ++i) prev.data()[i] *= mask.data()[i];
    }
    for (std::size_t b = 0; b < batch; ++b) {
      activate_backward(arch.activation, prev.row(b).data(), cache.pre[l - 1].row(b).data(), in);
    }
    delta = std::move(prev);
  }
  return grad;
}

// ---------------------------------------------------------------------------
// AdamW

void AdamwConfig::validate() const {
  if (!(base_lr > 0.0)) throw std::invalid_argument("optimizer.lr: must be > 0");
  if (!(lr_min >= 0.0 && lr_min <= base_lr)) throw std::invalid_argument("optimizer.lr_min: must lie in [0, lr]");
  if (total_steps < 1) throw std::invalid_argument("optimizer.total_steps: must be >= 1");
  if (warmup_steps > total_steps) throw std::invalid_argument("optimizer.warmup_steps: exceeds total_steps");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) throw std::invalid_argument("optimizer.beta1: must lie in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) throw std::invalid_argument("optimizer.beta2: must lie in [0, 1)");
  if (!(eps > 0.0)) throw std::invalid_argument("optimizer.eps: must be > 0");
  if (!(weight_decay >= 0.0)) throw std::invalid_argument("optimizer.weight_decay: must be >= 0");
}

OptimizerState make_optimizer(const Network& net, const AdamwConfig& cfg) {
  cfg.validate();
  OptimizerState s;
  s.cfg = cfg;
  s.m.assign(net.param_count(), 0.0);
  s.v.assign(net.param_count(), 0.0);
  return s;
}

double scheduled_lr(const AdamwConfig& cfg, std::size_t step) {
  if (step <= cfg.warmup_steps) {
    if (cfg.warmup_steps == 0) return cfg.base_lr;
    return cfg.base_lr * static_cast<double>(step) / static_cast<double>(cfg.warmup_steps);
  }
  if (step >= cfg.total_steps) return cfg.lr_min;
  const double progress = static_cast<double>(step - cfg.warmup_steps) /
                          static_cast<double>(cfg.total_steps - cfg.warmup_steps);
  return cfg.lr_min + 0.5 * (cfg.base_lr - cfg.lr_min) * (1.0 + std::cos(std::numbers::pi * progress));
}

void adamw_step(Network& net, std::span<const double> grads, OptimizerState& opt) {
  if (grads.size() != net.param_count() || opt.m.size() != net.param_count() || opt.v.size() != net.param_count()) {
    throw std::invalid_argument("adamw_step: gradient or moment size does not match the network");
  }
  if (opt.step >= opt.cfg.total_steps) throw std::logic_error("adamw_step: schedule exhausted (step > total_steps)");
  ++opt.step;
  kernels::AdamwCoeffs c;
  c.lr = scheduled_lr(opt.cfg, opt.step);
  c.beta1 = opt.cfg.beta1;
  c.beta2 = opt.cfg.beta2;
  c.eps = opt.cfg.eps;
  c.weight_decay = opt.cfg.weight_decay;
  const double t = static_cast<double>(opt.step);
  c.bias_correction1 = 1.0 - std::pow(opt.cfg.beta1, t);
  c.bias_correction2 = 1.0 - std::pow(opt.cfg.beta2, t);
  auto theta = net.mutable_params();
  kernels::adamw_update(theta.data(), opt.m.data(), opt.v.data(), grads.data(), theta.size(), c);
}

// ---------------------------------------------------------------------------
// ckpt-v1

io::json to_json(const Architecture& a) {
  io::json j = {{"layer_sizes", a.layer_sizes},
                {"activation", activation_name(a.activation)},
                {"dropout", a.dropout},
                {"output_transform", output_transform_name(a.output)}};
  if (a.output == OutputTransform::box_squash) {
    j["lower"] = io::to_json(a.lower);
    j["upper"] = io::to_json(a.upper);
  }
  if (!a.input_shift.empty()) {
    j["input_shift"] = io::to_json(a.input_shift);
    j["input_scale"] = io::to_json(a.input_scale);
  }
  if (!a.output_shift.empty()) j["output_shift"] = io::to_json(a.output_shift);
  return j;
}

Architecture architecture_from_json(const io::json& j) {
  Architecture a;
  a.layer_sizes = j.at("layer_sizes").get<std::vector<std::size_t>>();
  a.activation = parse_activation(j.at("activation").get<std::string>());
  a.dropout = j.at("dropout").get<double>();
  a.output = parse_output_transform(j.at("output_transform").get<std::string>());
  if (a.output == OutputTransform::box_squash) {
    a.lower = io::vector_from_json(j.at("lower"), "lower");
    a.upper = io::vector_from_json(j.at("upper"), "upper");
  }
  if (j.contains("input_shift")) {
    a.input_shift = io::vector_from_json(j.at("input_shift"), "input_shift");
    a.input_scale = io::vector_from_json(j.at("input_scale"), "input_scale");
  }
  if (j.contains("output_shift")) a.output_shift = io::vector_from_json(j.at("output_shift"), "output_shift");
  a.validate();
  return a;
}

io::json to_json(const AdamwConfig& c) {
  return {{"lr", c.base_lr},         {"lr_min", c.lr_min}, {"warmup_steps", c.warmup_steps},
          {"total_steps", c.total_steps}, {"beta1", c.beta1},   {"beta2", c.beta2},
          {"eps", c.eps},            {"weight_decay", c.weight_decay}};
}

AdamwConfig adamw_from_json(const io::json& j) {
  AdamwConfig c;
  c.base_lr = j.at("lr").get<double>();
  c.lr_min = j.at("lr_min").get<double>();
  c.warmup_steps = j.at("warmup_steps").get<std::size_t>();
  c.total_steps = j.at("total_steps").get<std::size_t>();
  c.beta1 = j.at("beta1").get<double>();
  c.beta2 = j.at("beta2").get<double>();
  c.eps = j.at("eps").get<double>();
  c.weight_decay = j.at("weight_decay").get<double>();
  c.validate();
  return c;
}

namespace {

std::filesystem::path blob_path(const std::filesystem::path& path) {
  auto p = path;
  p.replace_extension(".bin");
  return p;
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  io::BlobWriter blob;
  const std::size_t count = ckpt.net.param_count();
  blob.add("theta", ckpt.net.params(), {count});
  io::json header;
  header["format"] = "ckpt-v1";
  header["architecture"] = to_json(ckpt.net.arch());
  header["param_count"] = count;
  if (ckpt.opt) {
    blob.add("adam_m", ckpt.opt->m, {count});
    blob.add("adam_v", ckpt.opt->v, {count});
    header["optimizer"] = {{"step", ckpt.opt->step}, {"schedule", to_json(ckpt.opt->cfg)}};
  }
  header["meta"] = ckpt.meta;
  const auto bin = blob_path(path);
  header["blob"] = blob.manifest(bin.filename().string());
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  io::write_file_atomic(bin, blob.bytes());
  io::write_json(path, header);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const io::json h = io::read_json(path);
  if (h.value("format", "") != "ckpt-v1") throw io::FormatError(path.string() + ": expected ckpt-v1");
  try {
    Checkpoint ckpt;
    ckpt.net = Network(architecture_from_json(h.at("architecture")));
    const std::size_t count = h.at("param_count").get<std::size_t>();
    if (count != ckpt.net.param_count()) throw io::FormatError(path.string() + ": parameter count mismatch");
    const auto dir = path.has_parent_path() ? path.parent_path() : std::filesystem::path(".");
    io::BlobReader blob(dir, h.at("blob"));
    ckpt.net.set_params(blob.get("theta", count));
    if (h.contains("optimizer")) {
      OptimizerState opt;
      opt.cfg = adamw_from_json(h.at("optimizer").at("schedule"));
      opt.step = h.at("optimizer").at("step").get<std::size_t>();
      opt.m = blob.get("adam_m", count);
      opt.v = blob.get("adam_v", count);
      ckpt.opt = std::move(opt);
    }
    ckpt.meta = h.value("meta", io::json::object());
    return ckpt;
  } catch (const io::json::exception& e) {
    throw io::FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace alab
