#pragma once

#include <functional>
#include <span>
#include <vector>

#include "unicl/tensor.hpp"

namespace unicl::ad {

class Tape;

// Handle to a node on a Tape. Cheap to copy; owns nothing.
struct Var {
  Tape* tape = nullptr;
  int idx = -1;
  bool valid() const { return tape != nullptr && idx >= 0; }
};

// Reverse-mode tape over dense matrices. Nodes are created in topological
// order by construction, so backward() is a single reverse sweep. One tape
// serves one forward/backward pass; throw it away afterwards.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Mat value);
  Var leaf_col(const Vec& value);
  Var scalar(double v);

  const Mat& value(Var v) const;
  const Mat& grad(Var v) const;

  // Elementwise.
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, double s);
  Var neg(Var a) { return scale(a, -1.0); }
  Var log(Var a);
  Var exp(Var a);
  Var abs(Var a);
  Var gelu(Var a);
  Var clamp_min(Var a, double floor);

  // Scalar-node arithmetic; s must be 1x1.
  Var mul_by_scalar(Var a, Var s);
  Var div_by_scalar(Var a, Var s);

  // Linear algebra.
  Var matmul(Var a, Var b);
  Var matmul_nt(Var a, Var b);  // a * b^T

  // Reductions and shape surgery.
  Var sum(Var a);
  Var mean_rows(Var a);
  Var slice_rows(Var a, std::size_t r0, std::size_t r1);
  Var slice_cols(Var a, std::size_t c0, std::size_t c1);
  Var concat_rows(std::span<const Var> parts);
  Var concat_cols(std::span<const Var> parts);
  Var add_rowvec(Var m, Var v);
  Var stack_row(std::span<const Var> ms, std::size_t row);
  Var maxpool_rows2(Var a);
  Var diag(Var a);

  // Nonlinear blocks.
  Var softmax_all(Var a, double temp);
  Var softmax_rows(Var a, const Mat* keep_mask);
  Var lse_rows(Var a, const Mat& keep_mask);
  Var layer_norm_rows(Var x, Var gain, Var bias, double eps);
  Var normalize_rows(Var a, double eps);
  Var rfft_amp(Var x);

  // Seeds root (must be 1x1) with gradient one and sweeps the tape.
  void backward(Var root);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Mat value;
    Mat grad;
    std::function<void(Tape&)> back;
  };

  Var push(Mat value, std::function<void(Tape&)> back = {});
  Mat& g(int idx) { return nodes_[idx].grad; }
  const Mat& v(int idx) const { return nodes_[idx].value; }
  void check(Var a) const;

  std::vector<Node> nodes_;
};

}  // namespace unicl::ad
