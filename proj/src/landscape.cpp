#include "alab/landscape.hpp"

#include <cmath>
#include <stdexcept>

#include "alab/parallel.hpp"

namespace alab {

namespace fs = std::filesystem;

std::string metric_name(LandscapeMetric m) { return m == LandscapeMetric::merit ? "merit" : "train_loss"; }

LandscapeMetric parse_metric(const std::string& s) {
  if (s == "merit") return LandscapeMetric::merit;
  if (s == "train_loss") return LandscapeMetric::train_loss;
  throw std::invalid_argument("unknown metric '" + s + "' (expected merit|train_loss)");
}

double evaluate_metric(const ProblemFamily& family, const Network& net, const Matrix& xs, const MetricSpec& spec) {
  const Matrix ys = predict(family, net, xs, spec.head);
  if (spec.metric == LandscapeMetric::merit) return evaluate_solutions(family, ys, xs, spec.merit).mean_merit;
  if (xs.rows() == 0) return 0.0;
  Vector scratch(family.n());
  double total = 0.0;
  for (std::size_t b = 0; b < xs.rows(); ++b) total += self_supervised_term(family, ys.row(b), xs.row(b), spec.weights, scratch);
  return total / static_cast<double>(xs.rows());
}

namespace {

std::vector<double> uniform_axis(double lo, double hi, std::size_t n) {
  std::vector<double> a(n);
  for (std::size_t i = 0; i < n; ++i) a[i] = lo + (hi - lo) * (static_cast<double>(i) / static_cast<double>(n - 1));
  a.back() = hi;
  return a;
}

void check_endpoint(double grid_value, double direct, const char* where) {
  if (!(std::abs(grid_value - direct) <= 1e-12 * std::max(1.0, std::abs(direct)))) {
    throw std::logic_error(std::string("landscape: ") + where + " value differs from direct evaluation");
  }
}

io::json spec_meta(const MetricSpec& spec) {
  io::json j = {{"metric", metric_name(spec.metric)}, {"head", to_json(spec.head)}};
  if (spec.metric == LandscapeMetric::merit) {
    j["rho"] = spec.merit.rho;
  } else {
    j["weights"] = to_json(spec.weights);
  }
  return j;
}

}  // namespace

LandscapeGrid interpolate_1d(const ProblemFamily& family, const Network& a, const Network& b, const Matrix& xs,
                             const MetricSpec& spec, std::size_t n_points) {
  if (!(a.arch() == b.arch())) throw std::invalid_argument("interpolate_1d: architectures differ");
  if (n_points < 2) throw std::invalid_argument("interpolate_1d: need n_points >= 2");
  LandscapeGrid g;
  g.metric = spec.metric;
  g.alphas = uniform_axis(0.0, 1.0, n_points);
  g.values = Matrix(n_points, 1);
  const auto ta = a.params(), tb = b.params();
  parallel_for(n_points, [&](std::size_t i) {
    const double alpha = g.alphas[i];
    Network net(a.arch());
    Vector theta(ta.size());
    for (std::size_t k = 0; k < theta.size(); ++k) theta[k] = (1.0 - alpha) * ta[k] + alpha * tb[k];
    net.set_params(theta);
    g.values(i, 0) = evaluate_metric(family, net, xs, spec);
  });
  check_endpoint(g.values(0, 0), evaluate_metric(family, a, xs, spec), "alpha = 0");
  check_endpoint(g.values(n_points - 1, 0), evaluate_metric(family, b, xs, spec), "alpha = 1");
  g.meta = spec_meta(spec);
  g.meta["kind"] = "interpolation";
  return g;
}

PlaneDirections filter_normalized_directions(const Network& center, std::uint64_t seed) {
  const Architecture& arch = center.arch();
  const auto theta = center.params();
  Rng rng = make_rng(seed, Stream::landscape);
  PlaneDirections p;
  p.d1.assign(theta.size(), 0.0);
  p.d2.assign(theta.size(), 0.0);
  for (Vector* d : {&p.d1, &p.d2}) {
    for (std::size_t l = 0; l < arch.n_layers(); ++l) {
      const std::size_t in = arch.layer_sizes[l], out = arch.layer_sizes[l + 1];
      const std::size_t off = center.weight_offset(l);
      double layer_norm = 0.0;
      for (std::size_t k = 0; k < in * out; ++k) layer_norm += theta[off + k] * theta[off + k];
      if (layer_norm == 0.0) {
        throw std::invalid_argument("filter_normalized_directions: weight matrix of layer " + std::to_string(l) +
                                    " is zero");
      }
      for (std::size_t r = 0; r < out; ++r) {
        double* row = d->data() + off + r * in;
        for (std::size_t c = 0; c < in; ++c) row[c] = standard_normal(rng);
        const double dn = norm2({row, in});
        const double tn = norm2(theta.subspan(off + r * in, in));
        const double s = dn > 0.0 ? tn / dn : 0.0;
        for (std::size_t c = 0; c < in; ++c) row[c] *= s;
      }
    }
  }
  double d11 = 0.0, d12 = 0.0;
  for (std::size_t k = 0; k < p.d1.size(); ++k) {
    d11 += p.d1[k] * p.d1[k];
    d12 += p.d1[k] * p.d2[k];
  }
  const double c = d12 / d11;
  for (std::size_t k = 0; k < p.d2.size(); ++k) p.d2[k] -= c * p.d1[k];
  return p;
}

LandscapeGrid random_plane_2d(const ProblemFamily& family, const Network& center, const Matrix& xs,
                              const MetricSpec& spec, double extent, std::size_t n_grid, std::uint64_t seed) {
  if (n_grid < 3) throw std::invalid_argument("random_plane_2d: need n_grid >= 3");
  if (!(extent > 0.0)) throw std::invalid_argument("random_plane_2d: extent must be > 0");
  const PlaneDirections dir = filter_normalized_directions(center, seed);
  LandscapeGrid g;
  g.metric = spec.metric;
  g.alphas = uniform_axis(-extent, extent, n_grid);
  g.betas = g.alphas;
  g.values = Matrix(n_grid, n_grid);
  const auto theta = center.params();
  parallel_for(n_grid * n_grid, [&](std::size_t idx) {
    const std::size_t i = idx / n_grid, j = idx % n_grid;
    const double alpha = g.alphas[i], beta = g.betas[j];
    Network net(center.arch());
    Vector t(theta.size());
    for (std::size_t k = 0; k < t.size(); ++k) t[k] = theta[k] + alpha * dir.d1[k] + beta * dir.d2[k];
    net.set_params(t);
    g.values(i, j) = evaluate_metric(family, net, xs, spec);
  });
  if (n_grid % 2 == 1) {
    const std::size_t mid = n_grid / 2;
    check_endpoint(g.values(mid, mid), evaluate_metric(family, center, xs, spec), "center");
  }
  double d11 = 0.0, d22 = 0.0, d12 = 0.0;
  for (std::size_t k = 0; k < dir.d1.size(); ++k) {
    d11 += dir.d1[k] * dir.d1[k];
    d22 += dir.d2[k] * dir.d2[k];
    d12 += dir.d1[k] * dir.d2[k];
  }
  g.meta = spec_meta(spec);
  g.meta["kind"] = "plane";
  g.meta["seed"] = seed;
  g.meta["extent"] = extent;
  g.meta["normalization"] = "per weight row to the center's row norm; biases excluded; d2 orthogonalized against d1";
  g.meta["direction_cosine"] = d12 / std::sqrt(d11 * d22);
  return g;
}

Matrix landscape_parameters(const ProblemFamily& family, std::uint64_t data_seed, std::size_t count) {
  return sample_parameters(family, data_seed, count, 4'000'000'000ULL);
}

std::size_t count_interior_strict_maxima(std::span<const double> v) {
  std::size_t count = 0;
  for (std::size_t i = 1; i + 1 < v.size(); ++i) {
    if (v[i] > v[i - 1] && v[i] > v[i + 1]) ++count;
  }
  return count;
}

std::string grid_csv(const LandscapeGrid& g) {
  std::string out = g.is_plane() ? "alpha,beta,value\n" : "alpha,value\n";
  for (std::size_t i = 0; i < g.alphas.size(); ++i) {
    if (!g.is_plane()) {
      out += io::fmt_real(g.alphas[i]) + "," + io::fmt_real(g.values(i, 0)) + "\n";
      continue;
    }
    for (std::size_t j = 0; j < g.betas.size(); ++j) {
      out += io::fmt_real(g.alphas[i]) + "," + io::fmt_real(g.betas[j]) + "," + io::fmt_real(g.values(i, j)) + "\n";
    }
  }
  return out;
}

void write_grid(const LandscapeGrid& grid, const fs::path& csv_path) {
  if (csv_path.has_parent_path()) fs::create_directories(csv_path.parent_path());
  io::write_file_atomic(csv_path, grid_csv(grid));
  io::json meta = grid.meta;
  meta["metric"] = metric_name(grid.metric);
  io::write_json(fs::path(csv_path).replace_extension(".json"), meta);
}

LandscapeGrid read_grid(const fs::path& csv_path) {
  const io::CsvTable t = io::read_csv(csv_path);
  LandscapeGrid g;
  const bool plane = t.header.size() == 3;
  if (t.rows.empty() || (t.header.size() != 2 && !plane)) throw io::FormatError(csv_path.string() + ": not a grid");
  auto num = [&](const std::string& s) { return std::stod(s); };
  if (!plane) {
    g.values = Matrix(t.rows.size(), 1);
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
      g.alphas.push_back(num(t.rows[i][0]));
      g.values(i, 0) = num(t.rows[i][1]);
    }
  } else {
    const std::size_t n = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(t.rows.size()))));
    if (n * n != t.rows.size()) throw io::FormatError(csv_path.string() + ": plane grid is not square");
    g.values = Matrix(n, n);
    for (std::size_t i = 0; i < n; ++i) {
      g.alphas.push_back(num(t.rows[i * n][0]));
      g.betas.push_back(num(t.rows[i][1]));
      for (std::size_t j = 0; j < n; ++j) g.values(i, j) = num(t.rows[i * n + j][2]);
    }
  }
  const fs::path meta = fs::path(csv_path).replace_extension(".json");
  if (fs::exists(meta)) {
    g.meta = io::read_json(meta);
    if (g.meta.contains("metric")) g.metric = parse_metric(g.meta.at("metric").get<std::string>());
  }
  return g;
}

}  // namespace alab
