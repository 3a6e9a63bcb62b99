#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

namespace topodef::gat {

/// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0) : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  void fill(double v);
  bool all_finite() const;
  bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// x (n×k) times w (k×m).
Matrix matmul(const Matrix& x, const Matrix& w);

/// Which incident edges form a node's neighbourhood.
///   In:   N(u) = {v | (v,u) in E}, edge feature e_vu
///   Out:  N(u) = {v | (u,v) in E}, edge feature e_uv
///   Both: union; a pair present in both directions sums the two features
enum class Neighborhood { In, Out, Both };

std::string_view to_string(Neighborhood n);
Neighborhood neighborhood_from_string(std::string_view s);

inline constexpr double kLeakySlope = 0.2;

struct GatDims {
  int d_in = 3;
  int d_out = 3;
  int d_a = 8;
  int d_e = 1;
  int d_g = 3;

  bool operator==(const GatDims&) const = default;
};

struct GatLayerParams {
  GatDims dims;
  Matrix a;    // d_a × 1
  Matrix W_u;  // d_in × d_a
  Matrix W_v;  // d_in × d_a
  Matrix W_e;  // d_e × d_a
  Matrix W_g;  // d_g × d_a
  Matrix W_s;  // d_in × d_out
  Matrix W_t;  // d_in × d_out

  static GatLayerParams zeros(const GatDims& dims);

  /// Visits (name, tensor) in a fixed order.
  template <typename F>
  void for_each(F&& f) {
    f("a", a); f("W_u", W_u); f("W_v", W_v); f("W_e", W_e); f("W_g", W_g); f("W_s", W_s); f("W_t", W_t);
  }
  template <typename F>
  void for_each(F&& f) const {
    f("a", a); f("W_u", W_u); f("W_v", W_v); f("W_e", W_e); f("W_g", W_g); f("W_s", W_s); f("W_t", W_t);
  }

  /// Throws std::invalid_argument if any tensor disagrees with `dims`.
  void check_shapes() const;
  std::size_t parameter_count() const;

  bool operator==(const GatLayerParams&) const = default;
};

/// Gradient of a scalar w.r.t. every tensor of a layer; same shapes.
using GatLayerGrads = GatLayerParams;

/// Graph plus per-node neighbourhoods in CSR form. Neighbours of each node
/// are sorted by index; self-loops in the edge list are ignored because the
/// node itself is always part of its attention support.
struct DirectedGraphBatch {
  int num_nodes = 0;
  Matrix nodes;                            // N × d_in
  std::vector<std::pair<int, int>> edges;  // (source, target)
  Matrix edge_features;                    // |E| × d_e
  std::vector<double> global;              // d_g
  Neighborhood direction = Neighborhood::In;

  std::vector<int> offsets;    // N + 1
  std::vector<int> neighbors;  // concatenated N(u)
  Matrix neighbor_features;    // one row per neighbor entry

  static DirectedGraphBatch build(Matrix nodes, std::vector<std::pair<int, int>> edges, Matrix edge_features,
                                  std::vector<double> global, Neighborhood direction = Neighborhood::In);

  int degree(int u) const { return offsets[static_cast<std::size_t>(u) + 1] - offsets[static_cast<std::size_t>(u)]; }
  int edge_dim() const { return static_cast<int>(edge_features.cols()); }
};

/// Attention support of every node: itself first, then its neighbours.
/// Entry j of node u lives at support_offsets[u] + j.
struct AttentionScores {
  std::vector<int> support_offsets;  // N + 1
  std::vector<int> source;           // node whose features the entry projects
  Matrix pre_activation;             // entries × d_a
  std::vector<double> eta;
};

struct LayerCache {
  Matrix input;       // N × d_in
  Matrix self_proj;   // input · W_s
  Matrix nbr_proj;    // input · W_t
  AttentionScores scores;
  std::vector<double> alpha;
};

/// η(u,v) = aᵀ LeakyReLU(W_u x_u + W_v x_v + W_e e_vu + W_g g), self pairs
/// with a zero edge feature.
AttentionScores attention_scores(const GatLayerParams& p, const DirectedGraphBatch& g, const Matrix& x);

/// Max-subtracted softmax of η over each node's support.
std::vector<double> attention_softmax(const AttentionScores& scores, int num_nodes);

/// x'_u = α_uu W_s x_u + Σ_v α_uv W_t x_v. Per-node sums are reduced in
/// ascending value order so results do not depend on node labelling.
std::pair<Matrix, LayerCache> gat_layer_forward(const GatLayerParams& p, const DirectedGraphBatch& g, const Matrix& x);
std::pair<Matrix, LayerCache> gat_layer_forward(const GatLayerParams& p, const DirectedGraphBatch& g);

struct LayerBackward {
  GatLayerGrads grads;
  Matrix d_input;  // N × d_in
};

/// Reverse-mode pass for ⟨upstream, output⟩. LeakyReLU'(0) is taken as the
/// negative slope.
LayerBackward gat_layer_backward(const GatLayerParams& p, const DirectedGraphBatch& g, const LayerCache& cache,
                                 const Matrix& upstream);

/// Glorot-uniform initialisation, ±sqrt(6 / (fan_in + fan_out)) per tensor.
GatLayerParams init_params(const GatDims& dims, std::uint64_t seed);

/// Sum with addends visited in ascending order; reorders `values`.
double canonical_sum(std::span<double> values);

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

/// Central differences per coordinate; relative error |a - n| / max(1, |a|).
GradCheckResult finite_diff_check(const std::function<double(std::span<const double>)>& loss,
                                  std::span<const double> params, std::span<const double> analytic,
                                  double step = 1e-5);

}  // namespace topodef::gat
