// SPDX-License-Identifier: Apache-2.0
#pragma once

// Minimal reverse-mode differentiation over dense double matrices.
//
// A Tape owns every intermediate value of one forward pass. Ops append nodes
// in topological order, so backward() is a single reverse sweep. Nodes built
// only from constants carry no backward closure and cost nothing on the way
// back. Row vectors are 1 x n matrices throughout.

#include <deque>
#include <functional>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace genclip::ad {

using Mat = Eigen::MatrixXd;

class Tape;

struct Var {
  Tape* tape = nullptr;
  int id = -1;

  const Mat& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  bool valid() const { return tape != nullptr && id >= 0; }
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, const Mat& grad_out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Mat value);
  /// Leaf whose gradient is collected by backward().
  Var parameter(Mat value);
  /// Appends an op result. `backward` is dropped when no input needs a gradient.
  Var record(Mat value, bool needs_grad, Backward backward);

  const Mat& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  bool needs_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].needs_grad; }
  bool needs_grad(Var v) const { return needs_grad(v.id); }

  /// Seeds d(root)/d(root) = 1 and propagates. Root must be 1 x 1.
  void backward(Var root);
  /// Gradient of the last backward() root with respect to `v` (zeros if unreached).
  Mat grad(Var v) const;

  /// Used by op implementations while propagating.
  void accumulate(int id, const Mat& g);
  template <typename Expr>
  void accumulate_block(int id, Eigen::Index row, Eigen::Index col, const Expr& g) {
    auto& n = ensure_grad(id);
    n.grad.block(row, col, g.rows(), g.cols()) += g;
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Mat value;
    Mat grad;
    bool needs_grad = false;
    Backward backward;
  };
  Node& ensure_grad(int id);

  std::deque<Node> nodes_;
};

inline const Mat& Var::value() const { return tape->value(id); }

// Linear algebra
Var matmul(Var a, Var b);
/// a * b^T
Var matmul_nt(Var a, Var b);
/// a * rhs with a constant right operand. `rhs` must outlive the tape.
Var matmul(Var a, const Mat& rhs);

Var add(Var a, Var b);
/// Adds the 1 x c row to every row of the n x c matrix.
Var add_row(Var a, Var row);
Var scale(Var a, double s);
Var tanh(Var a);

// Structure
Var mean_rows(Var a);
Var rows(Var a, Eigen::Index start, Eigen::Index count);
Var vstack(std::span<const Var> parts);
/// Copy of `a` with row `index` replaced by the 1 x c `row`.
Var replace_row(Var a, Eigen::Index index, Var row);
Var normalize_rows(Var a, double eps = 1e-12);
Var sum(std::span<const Var> scalars);

// Image-space ops
/// Grid of (in_h*in_w) x channels, rows in row-major pixel order, resampled to
/// (out_h*out_w) x channels with half-pixel-center bilinear interpolation.
Var upsample_bilinear(Var grid, int in_h, int in_w, int out_h, int out_w);
/// Per-row softmax over a 2-column (normal, abnormal) matrix, returning the
/// abnormal column as n x 1.
Var softmax2_abnormal(Var logits);

}  // namespace genclip::ad
