#pragma once

// Fully connected surrogate network with exact reverse-mode gradients, AdamW
// with a warmup + cosine learning-rate schedule, and the ckpt-v1 checkpoint.
//
// Parameters live in one flat vector θ, layer by layer: W_l (out x in,
// row-major) followed by b_l. Optimizer moments and gradients use the same
// layout.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "alab/io.hpp"
#include "alab/rng.hpp"
#include "alab/tensor.hpp"

namespace alab {

enum class Activation { relu, silu, tanh };
enum class OutputTransform { identity, box_squash };
enum class Mode { train, infer };

std::string activation_name(Activation a);
Activation parse_activation(const std::string& s);
std::string output_transform_name(OutputTransform t);
OutputTransform parse_output_transform(const std::string& s);

struct Architecture {
  std::vector<std::size_t> layer_sizes;  // input, hidden..., output
  Activation activation = Activation::relu;
  double dropout = 0.0;                  // applied after every hidden activation
  OutputTransform output = OutputTransform::identity;
  Vector lower;                          // box_squash bounds, one per output
  Vector upper;
  Vector input_shift;                    // optional fixed standardization
  Vector input_scale;                    // x' = (x - shift) * scale
  Vector output_shift;                   // optional constant added to the last layer

  std::size_t n_layers() const { return layer_sizes.size() - 1; }
  std::size_t input_dim() const { return layer_sizes.front(); }
  std::size_t output_dim() const { return layer_sizes.back(); }
  /// Throws std::invalid_argument on inconsistent sizes or bounds.
  void validate() const;
  friend bool operator==(const Architecture&, const Architecture&) = default;
};

/// Input width, `depth` hidden layers of `width`, output width.
Architecture mlp(std::size_t in, std::size_t depth, std::size_t width, std::size_t out,
                 Activation activation = Activation::relu, double dropout = 0.0);

class Network {
 public:
  Network() = default;
  explicit Network(Architecture arch);

  const Architecture& arch() const { return arch_; }
  std::size_t param_count() const { return theta_.size(); }
  std::size_t weight_offset(std::size_t layer) const { return w_off_[layer]; }
  std::size_t bias_offset(std::size_t layer) const { return b_off_[layer]; }

  std::span<const double> params() const { return theta_; }
  /// Mutable access; invalidates every forward cache taken before.
  std::span<double> mutable_params() {
    ++version_;
    return theta_;
  }
  void set_params(std::span<const double> theta);
  std::uint64_t version() const { return version_; }

 private:
  Architecture arch_;
  Vector theta_;
  std::vector<std::size_t> w_off_, b_off_;
  std::uint64_t version_ = 0;
};

/// Weights and biases ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)) from the
/// network_init stream of `seed`.
Network init_network(const Architecture& arch, std::uint64_t seed);

struct ForwardCache {
  const Network* net = nullptr;
  std::uint64_t version = 0;
  std::vector<Matrix> inputs;  // input of each layer (post activation + dropout)
  std::vector<Matrix> pre;     // pre-activation of each layer
  std::vector<Matrix> masks;   // dropout scale per hidden layer (empty if none)
};

/// Predictions for each row of `xs`. Train mode applies inverted dropout drawn
/// from `rng` (required when dropout > 0); infer mode is deterministic.
Matrix forward(const Network& net, const Matrix& xs, Mode mode = Mode::infer, Rng* rng = nullptr,
               ForwardCache* cache = nullptr);

/// Gradient of Σ_b <output_grad_b, π(x_b)> w.r.t. θ. Throws std::logic_error
/// if the network changed since `cache` was filled.
Vector backward(const Network& net, const ForwardCache& cache, const Matrix& output_grad);

struct AdamwConfig {
  double base_lr = 1e-3;
  double lr_min = 0.0;
  std::size_t warmup_steps = 0;
  std::size_t total_steps = 1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-3;

  void validate() const;
};

struct OptimizerState {
  AdamwConfig cfg;
  Vector m, v;
  std::size_t step = 0;  // updates taken so far
};

OptimizerState make_optimizer(const Network& net, const AdamwConfig& cfg);

/// Learning rate of update number `step` (1-based): linear ramp reaching
/// base_lr at warmup_steps, then cosine decay reaching lr_min at total_steps.
double scheduled_lr(const AdamwConfig& cfg, std::size_t step);

/// One AdamW update with decoupled weight decay. Throws std::logic_error past
/// total_steps.
void adamw_step(Network& net, std::span<const double> grads, OptimizerState& opt);

// ckpt-v1: <path> is a JSON header, <path with .bin> the f64 blob of θ and,
// when present, the optimizer moments. `meta` carries caller data verbatim.
struct Checkpoint {
  Network net;
  std::optional<OptimizerState> opt;
  io::json meta = io::json::object();
};

io::json to_json(const Architecture& a);
Architecture architecture_from_json(const io::json& j);
io::json to_json(const AdamwConfig& c);
AdamwConfig adamw_from_json(const io::json& j);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace alab
