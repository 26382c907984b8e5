// SPDX-License-Identifier: Apache-2.0
#include "genclip/autodiff.hpp"

#include <cmath>
#include <string>

#include "genclip/error.hpp"
#include "genclip/image.hpp"

namespace genclip::ad {

namespace {

void require(bool ok, const char* op, const std::string& what) {
  if (!ok) throw ShapeError(std::string(op) + ": " + what);
}

std::string shape_str(const Mat& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

}  // namespace

Var Tape::constant(Mat value) { return record(std::move(value), false, nullptr); }

Var Tape::parameter(Mat value) {
  Node n;
  n.value = std::move(value);
  n.needs_grad = true;
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int>(nodes_.size() - 1)};
}

Var Tape::record(Mat value, bool needs_grad, Backward backward) {
  Node n;
  n.value = std::move(value);
  n.needs_grad = needs_grad;
  if (needs_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int>(nodes_.size() - 1)};
}

Tape::Node& Tape::ensure_grad(int id) {
  auto& n = nodes_[static_cast<std::size_t>(id)];
  if (n.grad.size() == 0) n.grad = Mat::Zero(n.value.rows(), n.value.cols());
  return n;
}

void Tape::accumulate(int id, const Mat& g) {
  if (!needs_grad(id)) return;
  ensure_grad(id).grad += g;
}

void Tape::backward(Var root) {
  require(root.tape == this, "backward", "root belongs to another tape");
  require(value(root.id).size() == 1, "backward", "root must be scalar, got " + shape_str(value(root.id)));
  for (auto& n : nodes_) n.grad.resize(0, 0);
  ensure_grad(root.id).grad(0, 0) = 1.0;
  for (int id = root.id; id >= 0; --id) {
    auto& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.backward || n.grad.size() == 0) continue;
    n.backward(*this, n.grad);
  }
}

Mat Tape::grad(Var v) const {
  const auto& n = nodes_[static_cast<std::size_t>(v.id)];
  if (n.grad.size() == 0) return Mat::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

Var matmul(Var a, Var b) {
  Tape& t = *a.tape;
  require(a.cols() == b.rows(), "matmul", shape_str(a.value()) + " * " + shape_str(b.value()));
  const int ia = a.id, ib = b.id;
  return t.record(a.value() * b.value(), t.needs_grad(ia) || t.needs_grad(ib), [ia, ib](Tape& tp, const Mat& g) {
    if (tp.needs_grad(ia)) tp.accumulate(ia, g * tp.value(ib).transpose());
    if (tp.needs_grad(ib)) tp.accumulate(ib, tp.value(ia).transpose() * g);
  });
}

Var matmul_nt(Var a, Var b) {
  Tape& t = *a.tape;
  require(a.cols() == b.cols(), "matmul_nt", shape_str(a.value()) + " * (" + shape_str(b.value()) + ")^T");
  const int ia = a.id, ib = b.id;
  return t.record(a.value() * b.value().transpose(), t.needs_grad(ia) || t.needs_grad(ib),
                  [ia, ib](Tape& tp, const Mat& g) {
                    if (tp.needs_grad(ia)) tp.accumulate(ia, g * tp.value(ib));
                    if (tp.needs_grad(ib)) tp.accumulate(ib, g.transpose() * tp.value(ia));
                  });
}

Var matmul(Var a, const Mat& rhs) {
  Tape& t = *a.tape;
  require(a.cols() == rhs.rows(), "matmul", shape_str(a.value()) + " * " + shape_str(rhs));
  const int ia = a.id;
  const Mat* r = &rhs;
  return t.record(a.value() * rhs, t.needs_grad(ia),
                  [ia, r](Tape& tp, const Mat& g) { tp.accumulate(ia, g * r->transpose()); });
}

Var add(Var a, Var b) {
  Tape& t = *a.tape;
  require(a.rows() == b.rows() && a.cols() == b.cols(), "add", shape_str(a.value()) + " + " + shape_str(b.value()));
  const int ia = a.id, ib = b.id;
  return t.record(a.value() + b.value(), t.needs_grad(ia) || t.needs_grad(ib), [ia, ib](Tape& tp, const Mat& g) {
    tp.accumulate(ia, g);
    tp.accumulate(ib, g);
  });
}

Var add_row(Var a, Var row) {
  Tape& t = *a.tape;
  require(row.rows() == 1 && row.cols() == a.cols(), "add_row", shape_str(a.value()) + " + " + shape_str(row.value()));
  const int ia = a.id, ir = row.id;
  Mat out = a.value().rowwise() + row.value().row(0);
  return t.record(std::move(out), t.needs_grad(ia) || t.needs_grad(ir), [ia, ir](Tape& tp, const Mat& g) {
    tp.accumulate(ia, g);
    if (tp.needs_grad(ir)) tp.accumulate(ir, g.colwise().sum());
  });
}

Var scale(Var a, double s) {
  Tape& t = *a.tape;
  const int ia = a.id;
  return t.record(a.value() * s, t.needs_grad(ia), [ia, s](Tape& tp, const Mat& g) { tp.accumulate(ia, g * s); });
}

Var tanh(Var a) {
  Tape& t = *a.tape;
  const int ia = a.id;
  const int self = static_cast<int>(t.size());
  return t.record(a.value().array().tanh().matrix(), t.needs_grad(ia), [ia, self](Tape& tp, const Mat& g) {
    const Mat& y = tp.value(self);
    tp.accumulate(ia, (g.array() * (1.0 - y.array().square())).matrix());
  });
}

Var mean_rows(Var a) {
  Tape& t = *a.tape;
  require(a.rows() > 0, "mean_rows", "empty input");
  const int ia = a.id;
  const Eigen::Index n = a.rows();
  Mat out = a.value().colwise().mean();
  return t.record(std::move(out), t.needs_grad(ia), [ia, n](Tape& tp, const Mat& g) {
    tp.accumulate(ia, g.replicate(n, 1) / static_cast<double>(n));
  });
}

Var rows(Var a, Eigen::Index start, Eigen::Index count) {
  Tape& t = *a.tape;
  require(start >= 0 && count >= 0 && start + count <= a.rows(), "rows",
          "range [" + std::to_string(start) + ", " + std::to_string(start + count) + ") of " + shape_str(a.value()));
  const int ia = a.id;
  Mat out = a.value().middleRows(start, count);
  return t.record(std::move(out), t.needs_grad(ia), [ia, start](Tape& tp, const Mat& g) {
    if (tp.needs_grad(ia)) tp.accumulate_block(ia, start, 0, g);
  });
}

Var vstack(std::span<const Var> parts) {
  require(!parts.empty(), "vstack", "no inputs");
  Tape& t = *parts.front().tape;
  const Eigen::Index cols = parts.front().cols();
  Eigen::Index total = 0;
  bool needs = false;
  std::vector<int> ids;
  std::vector<Eigen::Index> offsets;
  for (const auto& p : parts) {
    require(p.cols() == cols, "vstack", "column mismatch " + shape_str(p.value()));
    offsets.push_back(total);
    total += p.rows();
    ids.push_back(p.id);
    needs = needs || t.needs_grad(p.id);
  }
  Mat out(total, cols);
  for (std::size_t k = 0; k < parts.size(); ++k) out.middleRows(offsets[k], parts[k].rows()) = parts[k].value();
  return t.record(std::move(out), needs, [ids, offsets](Tape& tp, const Mat& g) {
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (!tp.needs_grad(ids[k])) continue;
      tp.accumulate(ids[k], g.middleRows(offsets[k], tp.value(ids[k]).rows()));
    }
  });
}

Var replace_row(Var a, Eigen::Index index, Var row) {
  Tape& t = *a.tape;
  require(index >= 0 && index < a.rows(), "replace_row", "row " + std::to_string(index) + " of " + shape_str(a.value()));
  require(row.rows() == 1 && row.cols() == a.cols(), "replace_row", "row shape " + shape_str(row.value()));
  const int ia = a.id, ir = row.id;
  Mat out = a.value();
  out.row(index) = row.value().row(0);
  return t.record(std::move(out), t.needs_grad(ia) || t.needs_grad(ir), [ia, ir, index](Tape& tp, const Mat& g) {
    if (tp.needs_grad(ia)) {
      Mat ga = g;
      ga.row(index).setZero();
      tp.accumulate(ia, ga);
    }
    if (tp.needs_grad(ir)) tp.accumulate(ir, g.row(index));
  });
}

Var normalize_rows(Var a, double eps) {
  Tape& t = *a.tape;
  const int ia = a.id;
  const Mat& x = a.value();
  Eigen::VectorXd norms = x.rowwise().norm().cwiseMax(eps);
  Mat out = x.array().colwise() / norms.array();
  const int self = static_cast<int>(t.size());
  return t.record(std::move(out), t.needs_grad(ia), [ia, self, norms](Tape& tp, const Mat& g) {
    // d(x/|x|) = (g - y (y.g)) / |x|
    const Mat& y = tp.value(self);
    Eigen::VectorXd dots = (y.array() * g.array()).rowwise().sum();
    Mat gx = (g - (y.array().colwise() * dots.array()).matrix()).array().colwise() / norms.array();
    tp.accumulate(ia, gx);
  });
}

Var sum(std::span<const Var> scalars) {
  require(!scalars.empty(), "sum", "no inputs");
  Tape& t = *scalars.front().tape;
  double total = 0.0;
  bool needs = false;
  std::vector<int> ids;
  for (const auto& s : scalars) {
    require(s.value().size() == 1, "sum", "non-scalar input " + shape_str(s.value()));
    total += s.value()(0, 0);
    needs = needs || t.needs_grad(s.id);
    ids.push_back(s.id);
  }
  Mat out(1, 1);
  out(0, 0) = total;
  return t.record(std::move(out), needs, [ids](Tape& tp, const Mat& g) {
    for (int id : ids) tp.accumulate(id, g);
  });
}

Var upsample_bilinear(Var grid, int in_h, int in_w, int out_h, int out_w) {
  Tape& t = *grid.tape;
  require(grid.rows() == static_cast<Eigen::Index>(in_h) * in_w, "upsample_bilinear",
          "grid " + shape_str(grid.value()) + " does not match " + std::to_string(in_h) + "x" + std::to_string(in_w));
  const int ia = grid.id;
  const Eigen::Index ch = grid.cols();
  const auto ty = bilinear_taps(in_h, out_h);
  const auto tx = bilinear_taps(in_w, out_w);
  const Mat& x = grid.value();
  Mat out(static_cast<Eigen::Index>(out_h) * out_w, ch);
  for (int y = 0; y < out_h; ++y) {
    const int y0 = ty.lo[y], y1 = ty.hi[y];
    const double fy = ty.frac[y];
    for (int xx = 0; xx < out_w; ++xx) {
      const int x0 = tx.lo[xx], x1 = tx.hi[xx];
      const double fx = tx.frac[xx];
      const double w00 = (1 - fy) * (1 - fx), w01 = (1 - fy) * fx, w10 = fy * (1 - fx), w11 = fy * fx;
      out.row(static_cast<Eigen::Index>(y) * out_w + xx) =
          w00 * x.row(y0 * in_w + x0) + w01 * x.row(y0 * in_w + x1) + w10 * x.row(y1 * in_w + x0) +
          w11 * x.row(y1 * in_w + x1);
    }
  }
  return t.record(std::move(out), t.needs_grad(ia), [ia, in_h, in_w, out_h, out_w, ty, tx, ch](Tape& tp, const Mat& g) {
    Mat gx = Mat::Zero(static_cast<Eigen::Index>(in_h) * in_w, ch);
    for (int y = 0; y < out_h; ++y) {
      const int y0 = ty.lo[y], y1 = ty.hi[y];
      const double fy = ty.frac[y];
      for (int xx = 0; xx < out_w; ++xx) {
        const int x0 = tx.lo[xx], x1 = tx.hi[xx];
        const double fx = tx.frac[xx];
        const auto go = g.row(static_cast<Eigen::Index>(y) * out_w + xx);
        gx.row(y0 * in_w + x0) += (1 - fy) * (1 - fx) * go;
        gx.row(y0 * in_w + x1) += (1 - fy) * fx * go;
        gx.row(y1 * in_w + x0) += fy * (1 - fx) * go;
        gx.row(y1 * in_w + x1) += fy * fx * go;
      }
    }
    tp.accumulate(ia, gx);
  });
}

Var softmax2_abnormal(Var logits) {
  Tape& t = *logits.tape;
  require(logits.cols() == 2, "softmax2_abnormal", "expected n x 2, got " + shape_str(logits.value()));
  const int ia = logits.id;
  const Mat& l = logits.value();
  Mat out(l.rows(), 1);
  for (Eigen::Index i = 0; i < l.rows(); ++i) {
    // exp(a) / (exp(n) + exp(a)) evaluated stably
    const double d = l(i, 1) - l(i, 0);
    out(i, 0) = d >= 0 ? 1.0 / (1.0 + std::exp(-d)) : std::exp(d) / (1.0 + std::exp(d));
  }
  const int self = static_cast<int>(t.size());
  return t.record(std::move(out), t.needs_grad(ia), [ia, self](Tape& tp, const Mat& g) {
    const Mat& p = tp.value(self);
    Mat gl(p.rows(), 2);
    const Eigen::ArrayXd dp = g.col(0).array() * p.col(0).array() * (1.0 - p.col(0).array());
    gl.col(0) = -dp.matrix();
    gl.col(1) = dp.matrix();
    tp.accumulate(ia, gl);
  });
}

}  // namespace genclip::ad
