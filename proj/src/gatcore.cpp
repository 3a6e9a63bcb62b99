#include "topodef/gatcore.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "topodef/rng.hpp"

namespace topodef::gat {

namespace {

double leaky(double z) { return z > 0.0 ? z : kLeakySlope * z; }
double leaky_grad(double z) { return z > 0.0 ? 1.0 : kLeakySlope; }

void expect_shape(const Matrix& m, std::size_t rows, std::size_t cols, std::string_view name) {
  if (m.rows() != rows || m.cols() != cols)
    throw std::invalid_argument(std::string(name) + ": expected " + std::to_string(rows) + "x" + std::to_string(cols) +
                                ", got " + std::to_string(m.rows()) + "x" + std::to_string(m.cols()));
}

void check_inputs(const GatLayerParams& p, const DirectedGraphBatch& g, const Matrix& x) {
  p.check_shapes();
  const auto& d = p.dims;
  expect_shape(x, static_cast<std::size_t>(g.num_nodes), static_cast<std::size_t>(d.d_in), "node features");
  if (g.neighbor_features.cols() != static_cast<std::size_t>(d.d_e) && !g.neighbors.empty())
    throw std::invalid_argument("edge feature dimension mismatch");
  if (g.global.size() != static_cast<std::size_t>(d.d_g)) throw std::invalid_argument("global feature dimension mismatch");
}

// out += xᵀ · d, for x (n×k) and d (n×m) producing k×m.
void add_outer(Matrix& out, const Matrix& x, const Matrix& d) {
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t i = 0; i < x.cols(); ++i) {
      const double xi = x(r, i);
      if (xi == 0.0) continue;
      for (std::size_t j = 0; j < d.cols(); ++j) out(i, j) += xi * d(r, j);
    }
}

// dx += d · wᵀ, for d (n×m) and w (k×m).
void add_back(Matrix& dx, const Matrix& d, const Matrix& w) {
  for (std::size_t r = 0; r < d.rows(); ++r)
    for (std::size_t i = 0; i < w.rows(); ++i) {
      double acc = 0.0;
      for (std::size_t j = 0; j < w.cols(); ++j) acc += d(r, j) * w(i, j);
      dx(r, i) += acc;
    }
}

}  // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) throw std::invalid_argument("Matrix: data length does not match shape");
}

void Matrix::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Matrix::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Matrix matmul(const Matrix& x, const Matrix& w) {
  if (x.cols() != w.rows()) throw std::invalid_argument("matmul: inner dimensions differ");
  Matrix out(x.rows(), w.cols());
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t k = 0; k < x.cols(); ++k) {
      const double xv = x(r, k);
      for (std::size_t c = 0; c < w.cols(); ++c) out(r, c) += xv * w(k, c);
    }
  return out;
}

std::string_view to_string(Neighborhood n) {
  switch (n) {
    case Neighborhood::In: return "in";
    case Neighborhood::Out: return "out";
    case Neighborhood::Both: return "both";
  }
  return "?";
}

Neighborhood neighborhood_from_string(std::string_view s) {
  if (s == "in") return Neighborhood::In;
  if (s == "out") return Neighborhood::Out;
  if (s == "both") return Neighborhood::Both;
  throw std::invalid_argument("unknown neighborhood '" + std::string(s) + "'");
}

GatLayerParams GatLayerParams::zeros(const GatDims& d) {
  GatLayerParams p;
  p.dims = d;
  const auto in = static_cast<std::size_t>(d.d_in), out = static_cast<std::size_t>(d.d_out),
             att = static_cast<std::size_t>(d.d_a);
  p.a = Matrix(att, 1);
  p.W_u = Matrix(in, att);
  p.W_v = Matrix(in, att);
  p.W_e = Matrix(static_cast<std::size_t>(d.d_e), att);
  p.W_g = Matrix(static_cast<std::size_t>(d.d_g), att);
  p.W_s = Matrix(in, out);
  p.W_t = Matrix(in, out);
  return p;
}

void GatLayerParams::check_shapes() const {
  const auto in = static_cast<std::size_t>(dims.d_in), out = static_cast<std::size_t>(dims.d_out),
             att = static_cast<std::size_t>(dims.d_a);
  expect_shape(a, att, 1, "a");
  expect_shape(W_u, in, att, "W_u");
  expect_shape(W_v, in, att, "W_v");
  expect_shape(W_e, static_cast<std::size_t>(dims.d_e), att, "W_e");
  expect_shape(W_g, static_cast<std::size_t>(dims.d_g), att, "W_g");
  expect_shape(W_s, in, out, "W_s");
  expect_shape(W_t, in, out, "W_t");
}

std::size_t GatLayerParams::parameter_count() const {
  std::size_t n = 0;
  for_each([&](std::string_view, const Matrix& m) { n += m.size(); });
  return n;
}

DirectedGraphBatch DirectedGraphBatch::build(Matrix nodes, std::vector<std::pair<int, int>> edges, Matrix edge_features,
                                             std::vector<double> global, Neighborhood direction) {
  DirectedGraphBatch g;
  g.num_nodes = static_cast<int>(nodes.rows());
  g.nodes = std::move(nodes);
  g.edges = std::move(edges);
  g.edge_features = std::move(edge_features);
  g.global = std::move(global);
  g.direction = direction;
  if (g.edge_features.rows() != g.edges.size()) throw std::invalid_argument("edge feature rows must match edge count");
  const std::size_t de = g.edge_features.cols();

  // (owner, neighbour, edge index) triples, then grouped.
  struct Incidence {
    int owner, nbr;
    std::size_t edge;
    bool operator<(const Incidence& o) const {
      return owner != o.owner ? owner < o.owner : nbr != o.nbr ? nbr < o.nbr : edge < o.edge;
    }
  };
  std::vector<Incidence> inc;
  inc.reserve(g.edges.size() * (direction == Neighborhood::Both ? 2 : 1));
  for (std::size_t e = 0; e < g.edges.size(); ++e) {
    const auto [s, t] = g.edges[e];
    if (s < 0 || t < 0 || s >= g.num_nodes || t >= g.num_nodes)
      throw std::out_of_range("edge (" + std::to_string(s) + "," + std::to_string(t) + ") references a missing node");
    if (s == t) continue;
    if (direction != Neighborhood::Out) inc.push_back({t, s, e});
    if (direction != Neighborhood::In) inc.push_back({s, t, e});
  }
  std::sort(inc.begin(), inc.end());

  g.offsets.assign(static_cast<std::size_t>(g.num_nodes) + 1, 0);
  std::vector<double> feats;
  for (std::size_t i = 0; i < inc.size();) {
    std::size_t j = i;
    const std::size_t base = feats.size();
    feats.resize(base + de, 0.0);
    while (j < inc.size() && inc[j].owner == inc[i].owner && inc[j].nbr == inc[i].nbr) {
      for (std::size_t k = 0; k < de; ++k) feats[base + k] += g.edge_features(inc[j].edge, k);
      ++j;
    }
    g.neighbors.push_back(inc[i].nbr);
    ++g.offsets[static_cast<std::size_t>(inc[i].owner) + 1];
    i = j;
  }
  for (std::size_t u = 0; u < static_cast<std::size_t>(g.num_nodes); ++u) g.offsets[u + 1] += g.offsets[u];
  g.neighbor_features = Matrix(g.neighbors.size(), de, std::move(feats));
  return g;
}

double canonical_sum(std::span<double> values) {
  std::sort(values.begin(), values.end());
  double s = 0.0;
  for (double v : values) s += v;
  return s;
}

AttentionScores attention_scores(const GatLayerParams& p, const DirectedGraphBatch& g, const Matrix& x) {
  check_inputs(p, g, x);
  const auto att = static_cast<std::size_t>(p.dims.d_a);
  const auto de = static_cast<std::size_t>(p.dims.d_e);
  const std::size_t n = static_cast<std::size_t>(g.num_nodes);

  const Matrix pu = matmul(x, p.W_u);
  const Matrix pv = matmul(x, p.W_v);
  std::vector<double> gproj(att, 0.0);
  for (std::size_t r = 0; r < g.global.size(); ++r)
    for (std::size_t j = 0; j < att; ++j) gproj[j] += g.global[r] * p.W_g(r, j);

  AttentionScores s;
  s.support_offsets.resize(n + 1);
  for (std::size_t u = 0; u <= n; ++u) s.support_offsets[u] = g.offsets[u] + static_cast<int>(u);
  const std::size_t entries = static_cast<std::size_t>(s.support_offsets[n]);
  s.source.resize(entries);
  s.pre_activation = Matrix(entries, att);
  s.eta.resize(entries);

  for (std::size_t u = 0; u < n; ++u) {
    const std::size_t first = static_cast<std::size_t>(s.support_offsets[u]);
    const int deg = g.degree(static_cast<int>(u));
    for (int j = 0; j <= deg; ++j) {
      const std::size_t k = first + static_cast<std::size_t>(j);
      const bool self = j == 0;
      const std::size_t nbr_entry = self ? 0 : static_cast<std::size_t>(g.offsets[u] + j - 1);
      const std::size_t v = self ? u : static_cast<std::size_t>(g.neighbors[nbr_entry]);
      s.source[k] = static_cast<int>(v);
      double eta = 0.0;
      for (std::size_t c = 0; c < att; ++c) {
        double z = pu(u, c) + pv(v, c);
        if (!self)
          for (std::size_t e = 0; e < de; ++e) z += g.neighbor_features(nbr_entry, e) * p.W_e(e, c);
        z += gproj[c];
        s.pre_activation(k, c) = z;
        eta += p.a(c, 0) * leaky(z);
      }
      s.eta[k] = eta;
    }
  }
  return s;
}

std::vector<double> attention_softmax(const AttentionScores& scores, int num_nodes) {
  std::vector<double> alpha(scores.eta.size());
  std::vector<double> buf;
  for (std::size_t u = 0; u < static_cast<std::size_t>(num_nodes); ++u) {
    const auto first = static_cast<std::size_t>(scores.support_offsets[u]);
    const auto last = static_cast<std::size_t>(scores.support_offsets[u + 1]);
    double mx = scores.eta[first];
    for (std::size_t k = first; k < last; ++k) mx = std::max(mx, scores.eta[k]);
    buf.clear();
    for (std::size_t k = first; k < last; ++k) {
      alpha[k] = std::exp(scores.eta[k] - mx);
      buf.push_back(alpha[k]);
    }
    const double z = canonical_sum(buf);
    for (std::size_t k = first; k < last; ++k) alpha[k] /= z;
  }
  return alpha;
}

std::pair<Matrix, LayerCache> gat_layer_forward(const GatLayerParams& p, const DirectedGraphBatch& g) {
  return gat_layer_forward(p, g, g.nodes);
}

std::pair<Matrix, LayerCache> gat_layer_forward(const GatLayerParams& p, const DirectedGraphBatch& g, const Matrix& x) {
  LayerCache cache;
  cache.scores = attention_scores(p, g, x);
  cache.alpha = attention_softmax(cache.scores, g.num_nodes);
  cache.input = x;
  cache.self_proj = matmul(x, p.W_s);
  cache.nbr_proj = matmul(x, p.W_t);

  const std::size_t n = static_cast<std::size_t>(g.num_nodes);
  const std::size_t dout = static_cast<std::size_t>(p.dims.d_out);
  Matrix out(n, dout);
  std::vector<double> buf;
  for (std::size_t u = 0; u < n; ++u) {
    const auto first = static_cast<std::size_t>(cache.scores.support_offsets[u]);
    const auto last = static_cast<std::size_t>(cache.scores.support_offsets[u + 1]);
    for (std::size_t c = 0; c < dout; ++c) {
      buf.clear();
      buf.push_back(cache.alpha[first] * cache.self_proj(u, c));
      for (std::size_t k = first + 1; k < last; ++k)
        buf.push_back(cache.alpha[k] * cache.nbr_proj(static_cast<std::size_t>(cache.scores.source[k]), c));
      out(u, c) = canonical_sum(buf);
    }
  }
  return {std::move(out), std::move(cache)};
}

LayerBackward gat_layer_backward(const GatLayerParams& p, const DirectedGraphBatch& g, const LayerCache& cache,
                                 const Matrix& upstream) {
  const std::size_t n = static_cast<std::size_t>(g.num_nodes);
  const std::size_t dout = static_cast<std::size_t>(p.dims.d_out);
  const std::size_t att = static_cast<std::size_t>(p.dims.d_a);
  const std::size_t de = static_cast<std::size_t>(p.dims.d_e);
  if (cache.input.rows() != n || cache.scores.support_offsets.size() != n + 1 ||
      static_cast<std::size_t>(cache.scores.support_offsets[n]) != g.neighbors.size() + n)
    throw std::invalid_argument("gat_layer_backward: cache does not match graph");
  expect_shape(upstream, n, dout, "upstream");

  LayerBackward r{GatLayerParams::zeros(p.dims), Matrix(n, static_cast<std::size_t>(p.dims.d_in))};
  GatLayerGrads& gr = r.grads;
  const auto& off = cache.scores.support_offsets;
  const auto& src = cache.scores.source;
  const std::size_t entries = cache.alpha.size();

  // Aggregation: out_u = α_uu x_u W_s + Σ α_uv x_v W_t.
  Matrix d_self(n, dout), d_nbr(n, dout);
  std::vector<double> d_alpha(entries, 0.0);
  for (std::size_t u = 0; u < n; ++u) {
    const auto first = static_cast<std::size_t>(off[u]);
    const auto last = static_cast<std::size_t>(off[u + 1]);
    for (std::size_t k = first; k < last; ++k) {
      const bool self = k == first;
      const auto v = static_cast<std::size_t>(src[k]);
      const Matrix& proj = self ? cache.self_proj : cache.nbr_proj;
      Matrix& dproj = self ? d_self : d_nbr;
      double da = 0.0;
      for (std::size_t c = 0; c < dout; ++c) {
        da += upstream(u, c) * proj(v, c);
        dproj(v, c) += cache.alpha[k] * upstream(u, c);
      }
      d_alpha[k] = da;
    }
  }
  add_outer(gr.W_s, cache.input, d_self);
  add_outer(gr.W_t, cache.input, d_nbr);
  add_back(r.d_input, d_self, p.W_s);
  add_back(r.d_input, d_nbr, p.W_t);

  // Softmax, then the score MLP.
  Matrix d_pu(n, att), d_pv(n, att);
  std::vector<double> d_g(att, 0.0);
  for (std::size_t u = 0; u < n; ++u) {
    const auto first = static_cast<std::size_t>(off[u]);
    const auto last = static_cast<std::size_t>(off[u + 1]);
    double dot = 0.0;
    for (std::size_t k = first; k < last; ++k) dot += cache.alpha[k] * d_alpha[k];
    for (std::size_t k = first; k < last; ++k) {
      const double d_eta = cache.alpha[k] * (d_alpha[k] - dot);
      if (d_eta == 0.0) continue;
      const bool self = k == first;
      const auto v = static_cast<std::size_t>(src[k]);
      const std::size_t nbr_entry = self ? 0 : static_cast<std::size_t>(g.offsets[u]) + (k - first - 1);
      for (std::size_t c = 0; c < att; ++c) {
        const double z = cache.scores.pre_activation(k, c);
        gr.a(c, 0) += d_eta * leaky(z);
        const double dz = d_eta * p.a(c, 0) * leaky_grad(z);
        d_pu(u, c) += dz;
        d_pv(v, c) += dz;
        d_g[c] += dz;
        if (!self)
          for (std::size_t e = 0; e < de; ++e) gr.W_e(e, c) += g.neighbor_features(nbr_entry, e) * dz;
      }
    }
  }
  add_outer(gr.W_u, cache.input, d_pu);
  add_outer(gr.W_v, cache.input, d_pv);
  add_back(r.d_input, d_pu, p.W_u);
  add_back(r.d_input, d_pv, p.W_v);
  for (std::size_t i = 0; i < g.global.size(); ++i)
    for (std::size_t c = 0; c < att; ++c) gr.W_g(i, c) += g.global[i] * d_g[c];
  return r;
}

GatLayerParams init_params(const GatDims& dims, std::uint64_t seed) {
  GatLayerParams p = GatLayerParams::zeros(dims);
  Rng rng(derive_seed(seed, {0x6A7}));
  p.for_each([&](std::string_view, Matrix& m) {
    // `a` is a column vector scoring d_a hidden units into one scalar.
    const double fan_in = static_cast<double>(m.rows());
    const double fan_out = static_cast<double>(m.cols());
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    for (double& v : m.data()) v = (2.0 * rng.uniform() - 1.0) * limit;
  });
  return p;
}

GradCheckResult finite_diff_check(const std::function<double(std::span<const double>)>& loss,
                                  std::span<const double> params, std::span<const double> analytic, double step) {
  if (params.size() != analytic.size()) throw std::invalid_argument("finite_diff_check: size mismatch");
  GradCheckResult r;
  std::vector<double> theta(params.begin(), params.end());
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double orig = theta[i];
    theta[i] = orig + step;
    const double up = loss(theta);
    theta[i] = orig - step;
    const double down = loss(theta);
    theta[i] = orig;
    const double numeric = (up - down) / (2.0 * step);
    double err = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i]));
    if (std::isnan(err)) err = std::numeric_limits<double>::infinity();
    if (i == 0 || err > r.max_rel_error) r = {err, i, analytic[i], numeric};
  }
  return r;
}

}  // namespace topodef::gat
