#include "unicl/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include "unicl/errors.hpp"
#include "unicl/fft.hpp"

namespace unicl::ad {

namespace {
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluK = 0.044715;
}  // namespace

Var Tape::push(Mat value, std::function<void(Tape&)> back) {
  Node n;
  n.grad = Mat(value.rows(), value.cols());
  n.value = std::move(value);
  n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

void Tape::check(Var a) const {
  if (a.tape != this || a.idx < 0 || a.idx >= static_cast<int>(nodes_.size()))
    throw ValidationError("autodiff: var does not belong to this tape");
}

Var Tape::leaf(Mat value) { return push(std::move(value)); }

Var Tape::leaf_col(const Vec& value) { return push(Mat::col(value)); }

Var Tape::scalar(double v0) {
  Mat m(1, 1);
  m[0] = v0;
  return push(std::move(m));
}

const Mat& Tape::value(Var var) const {
  check(var);
  return nodes_[var.idx].value;
}

const Mat& Tape::grad(Var var) const {
  check(var);
  return nodes_[var.idx].grad;
}

void Tape::backward(Var root) {
  check(root);
  if (v(root.idx).size() != 1)
    throw ValidationError("backward: root must be a scalar node");
  g(root.idx)[0] = 1.0;
  for (int i = root.idx; i >= 0; --i) {
    if (nodes_[i].back) nodes_[i].back(*this);
  }
}

Var Tape::add(Var a, Var b) {
  check(a);
  check(b);
  if (!v(a.idx).same_shape(v(b.idx))) throw DimensionError("add: shape mismatch");
  Mat out = v(a.idx);
  const Mat& bv = v(b.idx);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  Var o = push(std::move(out));
  nodes_[o.idx].back = [ai = a.idx, bi = b.idx, oi = o.idx](Tape& t) {
    const Mat& go = t.g(oi);
    Mat& ga = t.g(ai);
    Mat& gb = t.g(bi);
    for (std::size_t i = 0; i < go.size(); ++i) {
      ga[i] += go[i];
      gb[i] += go[i];
    }
  };
  return o;
}

Var Tape::sub(Var a, Var b) {
  check(a);
  check(b);
  if (!v(a.idx).same_shape(v(b.idx))) throw DimensionError("sub: shape mismatch");
  Mat out = v(a.idx);
  const Mat& bv = v(b.idx);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  Var o = push(std::move(out));
  nodes_[o.idx].back = [ai = a.idx, bi = b.idx, oi = o.idx](Tape& t) {
    const Mat& go = t.g(oi);
    Mat& ga = t.g(ai);
    Mat& gb = t.g(bi);
    for (std::size_t i = 0; i < go.size(); ++i) {
      ga[i] += go[i];
      gb[i] -= go[i];
    }
  };
  return o;
}

Var Tape::mul(Var a, Var b) {
  check(a);
  check(b);
  if (!v(a.idx).same_shape(v(b.idx))) throw DimensionError("mul: shape mismatch");
  Mat out = v(a.idx);
  const Mat& bv = v(b.idx);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  Var o = push(std::move(out));
  nodes_[o.idx].back = [ai = a.idx, bi = b.idx, oi = o.idx](Tape& t) {
    const Mat& go = t.g(oi);
    const Mat& av = t.v(ai);
    const Mat& bv2 = t.v(bi);
    Mat& ga = t.g(ai);
    Mat& gb = t.g(bi);
    for (std::size_t i = 0; i < go.size(); ++i) {
      ga[i] += go[i] * bv2[i];
      gb[i] += go[i] * av[i];
    }
  };
  return o;
}

Var Tape::scale(Var a, double s) {
  check(a);
  Mat out = v(a.idx);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= s;
  Var o = push(std::move(out));
  nodes_[o.idx].back = [ai = a.idx, oi = o.idx, s](Tape& t) {
    const Mat& go = t.g(oi);
    Mat& ga = t.g(ai);
    for (std::size_t i = 0; i < go.size(); ++i) ga[i] += s * go[i];
  };
  return o;
}

Var Tape::log(Var a) {
  check(a);
  Mat out = v(a.idx);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(out[i]);
  Var o = push(std::move(out));
  nodes_[o.idx].back = [ai = a.idx, oi = o.idx](Tape& t) {
    const Mat& go = t.g(oi);
    const Mat& av = t.v(ai);
    Mat& ga = t.g(ai);
    for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] / av[i];
  };
  return o;
}

Var Tape::exp(Var a) {
  check(a);
  Mat out = v(a.idx);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(out[i]);
  Var o = push(std::move(out));
  nodes_[o.idx].back = [ai = a.idx, oi = o.idx](Tape& t) {
    const Mat& go = t.g(oi);
    const Mat& ov = t.v(oi);
    Mat& ga = t.g(ai);
    for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * ov[i];
  };
  return o;
}

Var Tape::abs(Var a) {
  check(a);
  Mat out = v(a.idx);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::fabs(out[i]);
  Var o = push(std::move(out));
  nodes_[o.idx].back = [ai = a.idx, oi = o.idx](Tape& t) {
    const Mat& go = t.g(oi);
    const Mat& av = t.v(ai);
    Mat& ga = t.g(ai);
    for (std::size_t i = 0; i < go.size(); ++i) {
      const double s = av[i] > 0.0 ? 1.0 : (av[i] < 0.0 ? -1.0 : 0.0);
      ga[i] += s * go[i];
    }
  };
  return o;
}

Var Tape::gelu(Var a) {
  check(a);
  Mat out = v(a.idx);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x = out[i];
    const double u = kGeluC * (x + kGeluK * x * x * x);
    out[i] = 0.5 * x * (1.0 + std::tanh(u));
  }
  Var o = push(std::move(out));
  nodes_[o.idx].back = [ai = a.idx, oi = o.idx](Tape& t) {
    const Mat& go = t.g(oi);
    const Mat& av = t.v(ai);
    Mat& ga = t.g(ai);
    for (std::size_t i = 0; i < go.size(); ++i) {
      const double x = av[i];
      const double u = kGeluC * (x + kGeluK * x * x * x);
      const double th = std::tanh(u);
      const double sech2 = 1.0 - th * th;
      const double du = kGeluC * (1.0 + 3.0 * kGeluK * x * x);
      ga[i] += go[i] * (0.5 * (1.0 + th) + 0.5 * x * sech2 * du);
    }
  };
  return o;
}

Var Tape::clamp_min(Var a, double floor) {
  check(a);
  Mat out = v(a.idx);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(out[i], floor);
  Var o = push(std::move(out));
  nodes_[o.idx].back = [ai = a.idx, oi = o.idx, floor](Tape& t) {
    const Mat& go = t.g(oi);
    const Mat& av = t.v(ai);
    Mat& ga = t.g(ai);
    for (std::size_t i = 0; i < go.size(); ++i)
      if (av[i] > floor) ga[i] += go[i];
  };
  return o;
}

Var Tape::mul_by_scalar(Var a, Var s) {
  check(a);
  check(s);
  if (v(s.idx).size() != 1) throw DimensionError("mul_by_scalar: s must be 1x1");
  const double sv = v(s.idx)[0];
  Mat out = v(a.idx);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= sv;
  Var o = push(std::move(out));
  nodes_[o.idx].back = [ai = a.idx, si = s.idx, oi = o.idx](Tape& t) {
    const Mat& go = t.g(oi);
    const Mat& av = t.v(ai);
    const double sv2 = t.v(si)[0];
    Mat& ga = t.g(ai);
    Mat& gs = t.g(si);
    double acc = 0.0;
    for (std::size_t i = 0; i < go.size(); ++i) {
      ga[i] += sv2 * go[i];
      acc += go[i] * av[i];
    }
    gs[0] += acc;
  };
  return o;
}

Var Tape::div_by_scalar(Var a, Var s) {
  check(a);
  check(s);
  if (v(s.idx).size() != 1) throw DimensionError("div_by_scalar: s must be 1x1");
  const double sv = v(s.idx)[0];
  Mat out = v(a.idx);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] /= sv;
  Var o = push(std::move(out));
  nodes_[o.idx].back = [ai = a.idx, si = s.idx, oi = o.idx](Tape& t) {
    const Mat& go = t.g(oi);
    const Mat& ov = t.v(oi);
    const double sv2 = t.v(si)[0];
    Mat& ga = t.g(ai);
    Mat& gs = t.g(si);
    double acc = 0.0;
    for (std::size_t i = 0; i < go.size(); ++i) {
      ga[i] += go[i] / sv2;
      acc += go[i] * ov[i];
    }
    gs[0] -= acc / sv2;
  };
  return o;
}

Var Tape::matmul(Var a, Var b) {
  check(a);
  check(b);
  Mat out = unicl::matmul(v(a.idx), v(b.idx));
  Var o = push(std::move(out));
  nodes_[o.idx].back = [ai = a.idx, bi = b.idx, oi = o.idx](Tape& t) {
    const Mat& go = t.g(oi);
    const Mat& av = t.v(ai);
    const Mat& bv = t.v(bi);
    Mat& ga = t.g(ai);
    Mat& gb = t.g(bi);
    // dA += dC * B^T
    for (std::size_t i = 0; i < av.rows(); ++i)
      for (std::size_t k = 0; k < av.cols(); ++k) {
        double s = 0.0;
        for (std::size_t j = 0; j < bv.cols(); ++j) s += go(i, j) * bv(k, j);
        ga(i, k) += s;
      }
    // dB += A^T * dC
    for (std::size_t k = 0; k < bv.rows(); ++k)
      for (std::size_t j = 0; j < bv.cols(); ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < av.rows(); ++i) s += av(i, k) * go(i, j);
        gb(k, j) += s;
      }
  };
  return o;
}

Var Tape::matmul_nt(Var a, Var b) {
  check(a);
  check(b);
  Mat out = unicl::matmul_nt(v(a.idx), v(b.idx));
  Var o = push(std::move(out));
  nodes_[o.idx].back = [ai = a.idx, bi = b.idx, oi = o.idx](Tape& t) {
    const Mat& go = t.g(oi);
    const Mat& av = t.v(ai);
    const Mat& bv = t.v(bi);
    Mat& ga = t.g(ai);
    Mat& gb = t.g(bi);
    // C = A * B^T, dA += dC * B, dB += dC^T * A
    for (std::size_t i = 0; i < av.rows(); ++i)
      for (std::size_t k = 0; k < av.cols(); ++k) {
        double s = 0.0;
        for (std::size_t j = 0; j < bv.rows(); ++j) s += go(i, j) * bv(j, k);
        ga(i, k) += s;
      }
    for (std::size_t j = 0; j < bv.rows(); ++j)
      for (std::size_t k = 0; k < bv.cols(); ++k) {
        double s = 0.0;
        for (std::size_t i = 0; i < av.rows(); ++i) s += go(i, j) * av(i, k);
        gb(j, k) += s;
      }
  };
  return o;
}

Var Tape::sum(Var a) {
  check(a);
  double s = 0.0;
  const Mat& av = v(a.idx);
  for (std::size_t i = 0; i < av.size(); ++i) s += av[i];
  Mat out(1, 1);
  out[0] = s;
  Var o = push(std::move(out));
  nodes_[o.idx].back = [ai = a.idx, oi = o.idx](Tape& t) {
    const double go = t.g(oi)[0];
    Mat& ga = t.g(ai);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += go;
  };
  return o;
}

Var Tape::mean_rows(Var a) {
  check(a);
  const Mat& av = v(a.idx);
  Mat out(1, av.cols());
  for (std::size_t j = 0; j < av.cols(); ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < av.rows(); ++i) s += av(i, j);
    out(0, j) = s / static_cast<double>(av.rows());
  }
  Var o = push(std::move(out));
  nodes_[o.idx].back = [ai = a.idx, oi = o.idx](Tape& t) {
    const Mat& go = t.g(oi);
    Mat& ga = t.g(ai);
    const double inv = 1.0 / static_cast<double>(ga.rows());
    for (std::size_t i = 0; i < ga.rows(); ++i)
      for (std::size_t j = 0; j < ga.cols(); ++j) ga(i, j) += go(0, j) * inv;
  };
  return o;
}

Var Tape::slice_rows(Var a, std::size_t r0, std::size_t r1) {
  check(a);
  const Mat& av = v(a.idx);
  if (r1 > av.rows() || r0 > r1) throw DimensionError("slice_rows: bad range");
  Mat out(r1 - r0, av.cols());
  for (std::size_t i = r0; i < r1; ++i)
    for (std::size_t j = 0; j < av.cols(); ++j) out(i - r0, j) = av(i, j);
  Var o = push(std::move(out));
  nodes_[o.idx].back = [ai = a.idx, oi = o.idx, r0](Tape& t) {
    const Mat& go = t.g(oi);
    Mat& ga = t.g(ai);
    for (std::size_t i = 0; i < go.rows(); ++i)
      for (std::size_t j = 0; j < go.cols(); ++j) ga(i + r0, j) += go(i, j);
  };
  return o;
}

Var Tape::slice_cols(Var a, std::size_t c0, std::size_t c1) {
  check(a);
  const Mat& av = v(a.idx);
  if (c1 > av.cols() || c0 > c1) throw DimensionError("slice_cols: bad range");
  Mat out(av.rows(), c1 - c0);
  for (std::size_t i = 0; i < av.rows(); ++i)
    for (std::size_t j = c0; j < c1; ++j) out(i, j - c0) = av(i, j);
  Var o = push(std::move(out));
  nodes_[o.idx].back = [ai = a.idx, oi = o.idx, c0](Tape& t) {
    const Mat& go = t.g(oi);
    Mat& ga = t.g(ai);
    for (std::size_t i = 0; i < go.rows(); ++i)
      for (std::size_t j = 0; j < go.cols(); ++j) ga(i, j + c0) += go(i, j);
  };
  return o;
}

Var Tape::concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_rows: empty");
  std::size_t rows = 0;
  const std::size_t cols = v(parts[0].idx).cols();
  for (Var p : parts) {
    check(p);
    if (v(p.idx).cols() != cols) throw DimensionError("concat_rows: cols differ");
    rows += v(p.idx).rows();
  }
  Mat out(rows, cols);
  std::vector<int> idxs;
  std::size_t r = 0;
  for (Var p : parts) {
    const Mat& pv = v(p.idx);
    for (std::size_t i = 0; i < pv.rows(); ++i)
      for (std::size_t j = 0; j < cols; ++j) out(r + i, j) = pv(i, j);
    r += pv.rows();
    idxs.push_back(p.idx);
  }
  Var o = push(std::move(out));
  nodes_[o.idx].back = [idxs, oi = o.idx](Tape& t) {
    const Mat& go = t.g(oi);
    std::size_t r2 = 0;
    for (int pi : idxs) {
      Mat& gp = t.g(pi);
      for (std::size_t i = 0; i < gp.rows(); ++i)
        for (std::size_t j = 0; j < gp.cols(); ++j) gp(i, j) += go(r2 + i, j);
      r2 += gp.rows();
    }
  };
  return o;
}

Var Tape::concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_cols: empty");
  std::size_t cols = 0;
  const std::size_t rows = v(parts[0].idx).rows();
  for (Var p : parts) {
    check(p);
    if (v(p.idx).rows() != rows) throw DimensionError("concat_cols: rows differ");
    cols += v(p.idx).cols();
  }
  Mat out(rows, cols);
  std::vector<int> idxs;
  std::size_t c = 0;
  for (Var p : parts) {
    const Mat& pv = v(p.idx);
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < pv.cols(); ++j) out(i, c + j) = pv(i, j);
    c += pv.cols();
    idxs.push_back(p.idx);
  }
  Var o = push(std::move(out));
  nodes_[o.idx].back = [idxs, oi = o.idx](Tape& t) {
    const Mat& go = t.g(oi);
    std::size_t c2 = 0;
    for (int pi : idxs) {
      Mat& gp = t.g(pi);
      for (std::size_t i = 0; i < gp.rows(); ++i)
        for (std::size_t j = 0; j < gp.cols(); ++j) gp(i, j) += go(i, c2 + j);
      c2 += gp.cols();
    }
  };
  return o;
}

Var Tape::add_rowvec(Var m, Var vv) {
  check(m);
  check(vv);
  const Mat& mv = v(m.idx);
  const Mat& bv = v(vv.idx);
  if (bv.size() != mv.cols()) throw DimensionError("add_rowvec: length mismatch");
  Mat out = mv;
  for (std::size_t i = 0; i < mv.rows(); ++i)
    for (std::size_t j = 0; j < mv.cols(); ++j) out(i, j) += bv[j];
  Var o = push(std::move(out));
  nodes_[o.idx].back = [mi = m.idx, vi = vv.idx, oi = o.idx](Tape& t) {
    const Mat& go = t.g(oi);
    Mat& gm = t.g(mi);
    Mat& gv = t.g(vi);
    for (std::size_t i = 0; i < go.rows(); ++i)
      for (std::size_t j = 0; j < go.cols(); ++j) {
        gm(i, j) += go(i, j);
        gv[j] += go(i, j);
      }
  };
  return o;
}

Var Tape::stack_row(std::span<const Var> ms, std::size_t row) {
  if (ms.empty()) throw DimensionError("stack_row: empty");
  const std::size_t cols = v(ms[0].idx).cols();
  Mat out(ms.size(), cols);
  std::vector<int> idxs;
  for (std::size_t i = 0; i < ms.size(); ++i) {
    check(ms[i]);
    const Mat& mv = v(ms[i].idx);
    if (row >= mv.rows() || mv.cols() != cols)
      throw DimensionError("stack_row: shape mismatch");
    for (std::size_t j = 0; j < cols; ++j) out(i, j) = mv(row, j);
    idxs.push_back(ms[i].idx);
  }
  Var o = push(std::move(out));
  nodes_[o.idx].back = [idxs, row, oi = o.idx](Tape& t) {
    const Mat& go = t.g(oi);
    for (std::size_t i = 0; i < idxs.size(); ++i) {
      Mat& gm = t.g(idxs[i]);
      for (std::size_t j = 0; j < go.cols(); ++j) gm(row, j) += go(i, j);
    }
  };
  return o;
}

Var Tape::maxpool_rows2(Var a) {
  check(a);
  const Mat& av = v(a.idx);
  const std::size_t out_rows = (av.rows() + 1) / 2;
  Mat out(out_rows, av.cols());
  std::vector<std::uint8_t> take_second(out_rows * av.cols(), 0);
  for (std::size_t r = 0; r < out_rows; ++r) {
    const std::size_t i0 = 2 * r;
    const std::size_t i1 = std::min(2 * r + 1, av.rows() - 1);
    for (std::size_t j = 0; j < av.cols(); ++j) {
      const double x0 = av(i0, j);
      const double x1 = av(i1, j);
      if (i1 != i0 && x1 > x0) {
        out(r, j) = x1;
        take_second[r * av.cols() + j] = 1;
      } else {
        out(r, j) = x0;
      }
    }
  }
  Var o = push(std::move(out));
  nodes_[o.idx].back = [ai = a.idx, oi = o.idx, take_second](Tape& t) {
    const Mat& go = t.g(oi);
    Mat& ga = t.g(ai);
    for (std::size_t r = 0; r < go.rows(); ++r)
      for (std::size_t j = 0; j < go.cols(); ++j) {
        const std::size_t src =
            take_second[r * go.cols() + j] ? 2 * r + 1 : 2 * r;
        ga(src, j) += go(r, j);
      }
  };
  return o;
}

Var Tape::diag(Var a) {
  check(a);
  const Mat& av = v(a.idx);
  if (av.rows() != av.cols()) throw DimensionError("diag: matrix not square");
  Mat out(av.rows(), 1);
  for (std::size_t i = 0; i < av.rows(); ++i) out[i] = av(i, i);
  Var o = push(std::move(out));
  nodes_[o.idx].back = [ai = a.idx, oi = o.idx](Tape& t) {
    const Mat& go = t.g(oi);
    Mat& ga = t.g(ai);
    for (std::size_t i = 0; i < go.size(); ++i) ga(i, i) += go[i];
  };
  return o;
}

Var Tape::softmax_all(Var a, double temp) {
  check(a);
  const Mat& av = v(a.idx);
  Mat out(av.rows(), av.cols());
  double mx = -1e300;
  for (std::size_t i = 0; i < av.size(); ++i) mx = std::max(mx, av[i] / temp);
  double sum = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) {
    out[i] = std::exp(av[i] / temp - mx);
    sum += out[i];
  }
  for (std::size_t i = 0; i < out.size(); ++i) out[i] /= sum;
  Var o = push(std::move(out));
  nodes_[o.idx].back = [ai = a.idx, oi = o.idx, temp](Tape& t) {
    const Mat& go = t.g(oi);
    const Mat& s = t.v(oi);
    Mat& ga = t.g(ai);
    double dot = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) dot += go[i] * s[i];
    for (std::size_t i = 0; i < s.size(); ++i)
      ga[i] += s[i] * (go[i] - dot) / temp;
  };
  return o;
}

Var Tape::softmax_rows(Var a, const Mat* keep_mask) {
  check(a);
  const Mat& av = v(a.idx);
  Mat mask = keep_mask ? *keep_mask : Mat(av.rows(), av.cols(), 1.0);
  if (!mask.same_shape(av)) throw DimensionError("softmax_rows: mask shape");
  Mat out(av.rows(), av.cols());
  for (std::size_t i = 0; i < av.rows(); ++i) {
    double mx = -1e300;
    for (std::size_t j = 0; j < av.cols(); ++j)
      if (mask(i, j) != 0.0) mx = std::max(mx, av(i, j));
    double sum = 0.0;
    for (std::size_t j = 0; j < av.cols(); ++j) {
      if (mask(i, j) != 0.0) {
        out(i, j) = std::exp(av(i, j) - mx);
        sum += out(i, j);
      }
    }
    for (std::size_t j = 0; j < av.cols(); ++j)
      if (mask(i, j) != 0.0) out(i, j) /= sum;
  }
  Var o = push(std::move(out));
  nodes_[o.idx].back = [ai = a.idx, oi = o.idx](Tape& t) {
    const Mat& go = t.g(oi);
    const Mat& s = t.v(oi);
    Mat& ga = t.g(ai);
    for (std::size_t i = 0; i < s.rows(); ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < s.cols(); ++j) dot += go(i, j) * s(i, j);
      for (std::size_t j = 0; j < s.cols(); ++j)
        ga(i, j) += s(i, j) * (go(i, j) - dot);
    }
  };
  return o;
}

Var Tape::lse_rows(Var a, const Mat& keep_mask) {
  check(a);
  const Mat& av = v(a.idx);
  if (!keep_mask.same_shape(av)) throw DimensionError("lse_rows: mask shape");
  Mat out(av.rows(), 1);
  Mat soft(av.rows(), av.cols());
  for (std::size_t i = 0; i < av.rows(); ++i) {
    double mx = -1e300;
    bool any = false;
    for (std::size_t j = 0; j < av.cols(); ++j)
      if (keep_mask(i, j) != 0.0) {
        mx = std::max(mx, av(i, j));
        any = true;
      }
    if (!any) throw NumericError("lse_rows: empty row mask");
    double sum = 0.0;
    for (std::size_t j = 0; j < av.cols(); ++j)
      if (keep_mask(i, j) != 0.0) {
        soft(i, j) = std::exp(av(i, j) - mx);
        sum += soft(i, j);
      }
    for (std::size_t j = 0; j < av.cols(); ++j)
      if (keep_mask(i, j) != 0.0) soft(i, j) /= sum;
    out[i] = mx + std::log(sum);
  }
  Var o = push(std::move(out));
  nodes_[o.idx].back = [ai = a.idx, oi = o.idx, soft](Tape& t) {
    const Mat& go = t.g(oi);
    Mat& ga = t.g(ai);
    for (std::size_t i = 0; i < ga.rows(); ++i)
      for (std::size_t j = 0; j < ga.cols(); ++j)
        ga(i, j) += go[i] * soft(i, j);
  };
  return o;
}

Var Tape::layer_norm_rows(Var x, Var gain, Var bias, double eps) {
  check(x);
  check(gain);
  check(bias);
  const Mat& xv = v(x.idx);
  const Mat& gv = v(gain.idx);
  const Mat& bv = v(bias.idx);
  const std::size_t d = xv.cols();
  if (gv.size() != d || bv.size() != d)
    throw DimensionError("layer_norm_rows: gain/bias length mismatch");
  Mat out(xv.rows(), d);
  Mat xhat(xv.rows(), d);
  Vec inv_std(xv.rows());
  for (std::size_t i = 0; i < xv.rows(); ++i) {
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += xv(i, j);
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double c = xv(i, j) - mean;
      var += c * c;
    }
    var /= static_cast<double>(d);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      xhat(i, j) = (xv(i, j) - mean) * inv_std[i];
      out(i, j) = gv[j] * xhat(i, j) + bv[j];
    }
  }
  Var o = push(std::move(out));
  nodes_[o.idx].back = [xi = x.idx, gi = gain.idx, bi = bias.idx, oi = o.idx,
                        xhat, inv_std](Tape& t) {
    const Mat& go = t.g(oi);
    const Mat& gv2 = t.v(gi);
    Mat& gx = t.g(xi);
    Mat& gg = t.g(gi);
    Mat& gb = t.g(bi);
    const std::size_t d = go.cols();
    for (std::size_t i = 0; i < go.rows(); ++i) {
      double sum_dxhat = 0.0;
      double sum_dxhat_xhat = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        const double dxhat = go(i, j) * gv2[j];
        sum_dxhat += dxhat;
        sum_dxhat_xhat += dxhat * xhat(i, j);
        gg[j] += go(i, j) * xhat(i, j);
        gb[j] += go(i, j);
      }
      const double invd = 1.0 / static_cast<double>(d);
      for (std::size_t j = 0; j < d; ++j) {
        const double dxhat = go(i, j) * gv2[j];
        gx(i, j) += inv_std[i] *
                    (dxhat - invd * sum_dxhat - invd * xhat(i, j) * sum_dxhat_xhat);
      }
    }
  };
  return o;
}

Var Tape::normalize_rows(Var a, double eps) {
  check(a);
  const Mat& av = v(a.idx);
  Mat out(av.rows(), av.cols());
  Vec norms(av.rows());
  for (std::size_t i = 0; i < av.rows(); ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < av.cols(); ++j) s += av(i, j) * av(i, j);
    norms[i] = std::sqrt(s + eps);
    for (std::size_t j = 0; j < av.cols(); ++j) out(i, j) = av(i, j) / norms[i];
  }
  Var o = push(std::move(out));
  nodes_[o.idx].back = [ai = a.idx, oi = o.idx, norms](Tape& t) {
    const Mat& go = t.g(oi);
    const Mat& av2 = t.v(ai);
    Mat& ga = t.g(ai);
    for (std::size_t i = 0; i < av2.rows(); ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < av2.cols(); ++j) dot += go(i, j) * av2(i, j);
      const double n = norms[i];
      const double n3 = n * n * n;
      for (std::size_t j = 0; j < av2.cols(); ++j)
        ga(i, j) += go(i, j) / n - av2(i, j) * dot / n3;
    }
  };
  return o;
}

Var Tape::rfft_amp(Var x) {
  check(x);
  const Mat& xv = v(x.idx);
  if (xv.cols() != 1 || xv.rows() < 2)
    throw DimensionError("rfft_amp: expects a column vector, T >= 2");
  const std::size_t n = xv.rows();
  const std::size_t half = n / 2;
  fft::Cvec spec = fft::dft_real(xv.span());
  Mat out(half, 1);
  for (std::size_t k = 1; k <= half; ++k) out[k - 1] = std::abs(spec[k]);
  Var o = push(std::move(out));
  // d|X_k|/dx_t = (Re_k cos(2 pi k t / n) - Im_k sin(2 pi k t / n)) / |X_k|;
  // the weighted sum over k is the real part of an unnormalized inverse DFT.
  nodes_[o.idx].back = [xi = x.idx, oi = o.idx, spec, n, half](Tape& t) {
    const Mat& go = t.g(oi);
    Mat& gx = t.g(xi);
    fft::Cvec c(n, {0.0, 0.0});
    for (std::size_t k = 1; k <= half; ++k) {
      const double amp = std::abs(spec[k]);
      if (amp <= 0.0) continue;
      c[k] = go[k - 1] / amp * spec[k];
    }
    const fft::Cvec back = fft::idft_unnormalized(c);
    for (std::size_t tt = 0; tt < n; ++tt) gx[tt] += back[tt].real();
  };
  return o;
}

}  // namespace unicl::ad
