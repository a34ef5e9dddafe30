#include "sipfuse/ops.hpp"

#include "sipfuse/errors.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <memory>
#include <string>

namespace sipfuse::ops {

namespace {

std::string shape_str(Index r, Index c) { return std::to_string(r) + "x" + std::to_string(c); }

template <typename Scalar>
void zero_invalid_rows(Mat<Scalar>& m, const Mask& mask) {
  for (Index t = 0; t < m.rows(); ++t) {
    if (mask[static_cast<std::size_t>(t)] == 0) m.row(t).setZero();
  }
}

template <typename Scalar>
Mat<Scalar> masked_copy(const Mat<Scalar>& m, const Mask& mask) {
  Mat<Scalar> out = m;
  zero_invalid_rows(out, mask);
  return out;
}

template <typename Scalar>
void require_rows(const Tape<Scalar>& tape, const SeqVar& x, const char* op) {
  if (tape.value(x.values).rows() != x.length()) {
    throw DimensionError(std::string(op) + ": mask length does not match frame count");
  }
}

Index ceil_div(Index a, Index b) { return (a + b - 1) / b; }

// a * w over the first `extent` rows only; later rows are zero. Keeps the
// valid rows bit-identical however much trailing padding `a` carries.
template <typename Scalar>
Mat<Scalar> prefix_product(const Mat<Scalar>& a, const Mat<Scalar>& w, Index extent) {
  Mat<Scalar> out = Mat<Scalar>::Zero(a.rows(), w.cols());
  if (extent > 0) out.topRows(extent).noalias() = a.topRows(extent) * w;
  return out;
}

}  // namespace

template <typename Scalar>
SeqVar constant_seq(Tape<Scalar>& tape, const MaskedSeq<Scalar>& seq) {
  return SeqVar{tape.constant(masked_copy(seq.values, seq.mask)), seq.mask, seq.frame_rate_hz};
}

template <typename Scalar>
MaskedSeq<Scalar> to_masked(const Tape<Scalar>& tape, const SeqVar& seq) {
  return MaskedSeq<Scalar>{masked_copy(tape.value(seq.values), seq.mask), seq.mask, seq.frame_rate_hz};
}

// ---------------------------------------------------------------------------
// Dense primitives

template <typename Scalar>
Var matmul(Tape<Scalar>& tape, Var a, Var b) {
  const auto& av = tape.value(a);
  const auto& bv = tape.value(b);
  if (av.cols() != bv.rows()) {
    throw DimensionError("matmul: " + shape_str(av.rows(), av.cols()) + " * " +
                         shape_str(bv.rows(), bv.cols()));
  }
  Mat<Scalar> out = av * bv;
  return tape.emit(std::move(out), {a, b}, [a, b](Tape<Scalar>& t, Var self) {
    const auto& g = t.grad(self);
    if (t.requires_grad(a)) t.accumulate(a, g * t.value(b).transpose());
    if (t.requires_grad(b)) t.accumulate(b, t.value(a).transpose() * g);
  });
}

template <typename Scalar>
Var matmul_nt(Tape<Scalar>& tape, Var a, Var b) {
  const auto& av = tape.value(a);
  const auto& bv = tape.value(b);
  if (av.cols() != bv.cols()) {
    throw DimensionError("matmul_nt: " + shape_str(av.rows(), av.cols()) + " * (" +
                         shape_str(bv.rows(), bv.cols()) + ")^T");
  }
  Mat<Scalar> out = av * bv.transpose();
  return tape.emit(std::move(out), {a, b}, [a, b](Tape<Scalar>& t, Var self) {
    const auto& g = t.grad(self);
    if (t.requires_grad(a)) t.accumulate(a, g * t.value(b));
    if (t.requires_grad(b)) t.accumulate(b, g.transpose() * t.value(a));
  });
}

template <typename Scalar>
Var add(Tape<Scalar>& tape, Var a, Var b) {
  const auto& av = tape.value(a);
  const auto& bv = tape.value(b);
  if (av.rows() != bv.rows() || av.cols() != bv.cols()) {
    throw DimensionError("add: " + shape_str(av.rows(), av.cols()) + " vs " +
                         shape_str(bv.rows(), bv.cols()));
  }
  Mat<Scalar> out = av + bv;
  return tape.emit(std::move(out), {a, b}, [a, b](Tape<Scalar>& t, Var self) {
    const auto& g = t.grad(self);
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

template <typename Scalar>
Var add_row(Tape<Scalar>& tape, Var x, Var bias) {
  const auto& xv = tape.value(x);
  const auto& bv = tape.value(bias);
  if (bv.rows() != 1 || bv.cols() != xv.cols()) {
    throw DimensionError("add_row: bias " + shape_str(bv.rows(), bv.cols()) + " for input " +
                         shape_str(xv.rows(), xv.cols()));
  }
  Mat<Scalar> out = xv.rowwise() + bv.row(0);
  return tape.emit(std::move(out), {x, bias}, [x, bias](Tape<Scalar>& t, Var self) {
    const auto& g = t.grad(self);
    t.accumulate(x, g);
    if (t.requires_grad(bias)) t.accumulate(bias, g.colwise().sum());
  });
}

template <typename Scalar>
Var scale(Tape<Scalar>& tape, Var x, Scalar factor) {
  Mat<Scalar> out = tape.value(x) * factor;
  return tape.emit(std::move(out), {x}, [x, factor](Tape<Scalar>& t, Var self) {
    t.accumulate(x, t.grad(self) * factor);
  });
}

template <typename Scalar>
Var add_scalar(Tape<Scalar>& tape, Var x, Scalar offset) {
  Mat<Scalar> out = tape.value(x).array() + offset;
  return tape.emit(std::move(out), {x}, [x](Tape<Scalar>& t, Var self) { t.accumulate(x, t.grad(self)); });
}

template <typename Scalar>
Var tanh(Tape<Scalar>& tape, Var x) {
  Mat<Scalar> out = tape.value(x).array().tanh();
  return tape.emit(std::move(out), {x}, [x](Tape<Scalar>& t, Var self) {
    const auto& y = t.value(self);
    t.accumulate(x, (t.grad(self).array() * (Scalar(1) - y.array().square())).matrix());
  });
}

template <typename Scalar>
Var sigmoid(Tape<Scalar>& tape, Var x) {
  Mat<Scalar> out = (Scalar(1) + (-tape.value(x).array()).exp()).inverse();
  return tape.emit(std::move(out), {x}, [x](Tape<Scalar>& t, Var self) {
    const auto& y = t.value(self);
    t.accumulate(x, (t.grad(self).array() * y.array() * (Scalar(1) - y.array())).matrix());
  });
}

template <typename Scalar>
Var relu(Tape<Scalar>& tape, Var x) {
  Mat<Scalar> out = tape.value(x).cwiseMax(Scalar(0));
  return tape.emit(std::move(out), {x}, [x](Tape<Scalar>& t, Var self) {
    const auto& xv = t.value(x);
    t.accumulate(x, (t.grad(self).array() * (xv.array() > Scalar(0)).template cast<Scalar>()).matrix());
  });
}

template <typename Scalar>
Var square(Tape<Scalar>& tape, Var x) {
  Mat<Scalar> out = tape.value(x).array().square();
  return tape.emit(std::move(out), {x}, [x](Tape<Scalar>& t, Var self) {
    t.accumulate(x, (t.grad(self).array() * Scalar(2) * t.value(x).array()).matrix());
  });
}

template <typename Scalar>
Var sum(Tape<Scalar>& tape, Var x) {
  Mat<Scalar> out(1, 1);
  out(0, 0) = tape.value(x).sum();
  return tape.emit(std::move(out), {x}, [x](Tape<Scalar>& t, Var self) {
    const auto& xv = t.value(x);
    t.accumulate(x, Mat<Scalar>::Constant(xv.rows(), xv.cols(), t.grad(self)(0, 0)));
  });
}

template <typename Scalar>
Var concat_cols(Tape<Scalar>& tape, Var a, Var b) {
  const auto& av = tape.value(a);
  const auto& bv = tape.value(b);
  if (av.rows() != bv.rows()) {
    throw DimensionError("concat_cols: row counts " + std::to_string(av.rows()) + " and " +
                         std::to_string(bv.rows()));
  }
  Mat<Scalar> out(av.rows(), av.cols() + bv.cols());
  out << av, bv;
  const Index ca = av.cols();
  const Index cb = bv.cols();
  return tape.emit(std::move(out), {a, b}, [a, b, ca, cb](Tape<Scalar>& t, Var self) {
    const auto& g = t.grad(self);
    if (t.requires_grad(a)) t.accumulate(a, g.leftCols(ca));
    if (t.requires_grad(b)) t.accumulate(b, g.rightCols(cb));
  });
}

template <typename Scalar>
Var select_row(Tape<Scalar>& tape, Var x, Index index) {
  const auto& xv = tape.value(x);
  if (index < 0 || index >= xv.rows()) {
    throw ArgumentError("select_row: index " + std::to_string(index) + " out of " +
                        std::to_string(xv.rows()) + " rows");
  }
  Mat<Scalar> out = xv.row(index);
  return tape.emit(std::move(out), {x}, [x, index](Tape<Scalar>& t, Var self) {
    const auto& xv2 = t.value(x);
    Mat<Scalar> d = Mat<Scalar>::Zero(xv2.rows(), xv2.cols());
    d.row(index) = t.grad(self);
    t.accumulate(x, d);
  });
}

template <typename Scalar>
Var mask_rows(Tape<Scalar>& tape, Var x, const Mask& mask) {
  const auto& xv = tape.value(x);
  if (static_cast<Index>(mask.size()) != xv.rows()) {
    throw DimensionError("mask_rows: mask length does not match row count");
  }
  Mat<Scalar> out = masked_copy(xv, mask);
  return tape.emit(std::move(out), {x}, [x, mask](Tape<Scalar>& t, Var self) {
    t.accumulate(x, masked_copy(t.grad(self), mask));
  });
}

template <typename Scalar>
Var weighted_sum(Tape<Scalar>& tape, Var alpha, Var f) {
  const auto& av = tape.value(alpha);
  const auto& fv = tape.value(f);
  if (av.cols() != 1 || av.rows() != fv.rows()) {
    throw DimensionError("weighted_sum: weights " + shape_str(av.rows(), av.cols()) + " for frames " +
                         shape_str(fv.rows(), fv.cols()));
  }
  Mat<Scalar> out = av.transpose() * fv;
  return tape.emit(std::move(out), {alpha, f}, [alpha, f](Tape<Scalar>& t, Var self) {
    const auto& g = t.grad(self);  // 1 x d
    if (t.requires_grad(alpha)) t.accumulate(alpha, t.value(f) * g.transpose());
    if (t.requires_grad(f)) t.accumulate(f, t.value(alpha) * g);
  });
}

// ---------------------------------------------------------------------------
// Masked sequence operations

template <typename Scalar>
Var linear(Tape<Scalar>& tape, Var x, Var weight, Var bias) {
  return add_row(tape, matmul(tape, x, weight), bias);
}

template <typename Scalar>
SeqVar linear(Tape<Scalar>& tape, const SeqVar& x, Var weight, Var bias) {
  require_rows(tape, x, "linear");
  const auto& xv = tape.value(x.values);
  const auto& wv = tape.value(weight);
  const auto& bv = tape.value(bias);
  if (xv.cols() != wv.rows()) {
    throw DimensionError("linear: input width " + std::to_string(xv.cols()) + " vs weight " +
                         shape_str(wv.rows(), wv.cols()));
  }
  if (bv.rows() != 1 || bv.cols() != wv.cols()) {
    throw DimensionError("linear: bias " + shape_str(bv.rows(), bv.cols()) + " for output width " +
                         std::to_string(wv.cols()));
  }
  Mat<Scalar> out = prefix_product<Scalar>(xv, wv, mask_extent(x.mask));
  out.rowwise() += bv.row(0);
  zero_invalid_rows(out, x.mask);
  const Var xin = x.values;
  const Mask mask = x.mask;
  Var y = tape.emit(std::move(out), {xin, weight, bias}, [xin, weight, bias, mask](Tape<Scalar>& t, Var self) {
    const Mat<Scalar> g = masked_copy(t.grad(self), mask);
    if (t.requires_grad(xin)) t.accumulate(xin, g * t.value(weight).transpose());
    if (t.requires_grad(weight)) t.accumulate(weight, t.value(xin).transpose() * g);
    if (t.requires_grad(bias)) t.accumulate(bias, g.colwise().sum());
  });
  return SeqVar{y, x.mask, x.frame_rate_hz};
}

template <typename Scalar>
SeqVar conv1d(Tape<Scalar>& tape, const SeqVar& x, Var kernel, Var bias, int stride) {
  require_rows(tape, x, "conv1d");
  if (stride < 1) throw ArgumentError("conv1d: stride must be >= 1, got " + std::to_string(stride));
  const auto& xv = tape.value(x.values);
  const auto& kv = tape.value(kernel);
  const auto& bv = tape.value(bias);
  const Index d_in = xv.cols();
  if (d_in < 1 || kv.rows() % d_in != 0 || kv.rows() == 0) {
    throw DimensionError("conv1d: kernel rows " + std::to_string(kv.rows()) +
                         " not a multiple of input width " + std::to_string(d_in));
  }
  const Index k = kv.rows() / d_in;
  const Index d_out = kv.cols();
  if (bv.rows() != 1 || bv.cols() != d_out) throw DimensionError("conv1d: bias width mismatch");
  const Index t_in = x.length();
  const Index t_out = t_in < k ? 0 : (t_in - k) / stride + 1;

  auto cols = std::make_shared<Mat<Scalar>>(Mat<Scalar>::Zero(t_out, k * d_in));
  Mask out_mask(static_cast<std::size_t>(t_out), 0);
  for (Index t = 0; t < t_out; ++t) {
    for (Index j = 0; j < k; ++j) {
      const Index src = t * stride + j;
      if (x.mask[static_cast<std::size_t>(src)] != 0) {
        cols->row(t).segment(j * d_in, d_in) = xv.row(src);
        out_mask[static_cast<std::size_t>(t)] = 1;
      }
    }
  }
  Mat<Scalar> out = Mat<Scalar>::Zero(t_out, d_out);
  if (t_out > 0) {
    out = prefix_product<Scalar>(*cols, kv, mask_extent(out_mask));
    out.rowwise() += bv.row(0);
    zero_invalid_rows(out, out_mask);
  }
  const Var xin = x.values;
  const Mask in_mask = x.mask;
  Var y = tape.emit(std::move(out), {xin, kernel, bias},
                    [xin, kernel, bias, cols, out_mask, in_mask, k, d_in, stride](Tape<Scalar>& t, Var self) {
                      const Mat<Scalar> g = masked_copy(t.grad(self), out_mask);
                      if (t.requires_grad(kernel)) t.accumulate(kernel, cols->transpose() * g);
                      if (t.requires_grad(bias)) t.accumulate(bias, g.colwise().sum());
                      if (t.requires_grad(xin)) {
                        const Mat<Scalar> dcols = g * t.value(kernel).transpose();
                        Mat<Scalar> dx = Mat<Scalar>::Zero(static_cast<Index>(in_mask.size()), d_in);
                        for (Index r = 0; r < dcols.rows(); ++r) {
                          for (Index j = 0; j < k; ++j) {
                            const Index src = r * stride + j;
                            if (in_mask[static_cast<std::size_t>(src)] != 0) {
                              dx.row(src) += dcols.row(r).segment(j * d_in, d_in);
                            }
                          }
                        }
                        t.accumulate(xin, dx);
                      }
                    });
  return SeqVar{y, std::move(out_mask), x.frame_rate_hz / stride};
}

template <typename Scalar>
SeqVar conv1d_same(Tape<Scalar>& tape, const SeqVar& x, Var kernel, Var bias) {
  require_rows(tape, x, "conv1d_same");
  const auto& xv = tape.value(x.values);
  const auto& kv = tape.value(kernel);
  const auto& bv = tape.value(bias);
  const Index d_in = xv.cols();
  if (d_in < 1 || kv.rows() % d_in != 0 || kv.rows() == 0) {
    throw DimensionError("conv1d_same: kernel rows not a multiple of input width");
  }
  const Index k = kv.rows() / d_in;
  if (k % 2 == 0) throw ArgumentError("conv1d_same: kernel size must be odd");
  const Index d_out = kv.cols();
  if (bv.rows() != 1 || bv.cols() != d_out) throw DimensionError("conv1d_same: bias width mismatch");
  const Index half = k / 2;
  const Index len = x.length();

  auto cols = std::make_shared<Mat<Scalar>>(Mat<Scalar>::Zero(len, k * d_in));
  for (Index t = 0; t < len; ++t) {
    if (x.mask[static_cast<std::size_t>(t)] == 0) continue;
    for (Index j = 0; j < k; ++j) {
      const Index src = t - half + j;
      if (src >= 0 && src < len && x.mask[static_cast<std::size_t>(src)] != 0) {
        cols->row(t).segment(j * d_in, d_in) = xv.row(src);
      }
    }
  }
  Mat<Scalar> out = prefix_product<Scalar>(*cols, kv, mask_extent(x.mask));
  out.rowwise() += bv.row(0);
  zero_invalid_rows(out, x.mask);
  const Var xin = x.values;
  const Mask mask = x.mask;
  Var y = tape.emit(std::move(out), {xin, kernel, bias},
                    [xin, kernel, bias, cols, mask, k, d_in, half](Tape<Scalar>& t, Var self) {
                      const Mat<Scalar> g = masked_copy(t.grad(self), mask);
                      if (t.requires_grad(kernel)) t.accumulate(kernel, cols->transpose() * g);
                      if (t.requires_grad(bias)) t.accumulate(bias, g.colwise().sum());
                      if (t.requires_grad(xin)) {
                        const Mat<Scalar> dcols = g * t.value(kernel).transpose();
                        const Index len2 = static_cast<Index>(mask.size());
                        Mat<Scalar> dx = Mat<Scalar>::Zero(len2, d_in);
                        for (Index r = 0; r < len2; ++r) {
                          if (mask[static_cast<std::size_t>(r)] == 0) continue;
                          for (Index j = 0; j < k; ++j) {
                            const Index src = r - half + j;
                            if (src >= 0 && src < len2 && mask[static_cast<std::size_t>(src)] != 0) {
                              dx.row(src) += dcols.row(r).segment(j * d_in, d_in);
                            }
                          }
                        }
                        t.accumulate(xin, dx);
                      }
                    });
  return SeqVar{y, x.mask, x.frame_rate_hz};
}

template <typename Scalar>
SeqVar tconv1d(Tape<Scalar>& tape, const SeqVar& x, Var kernel, Var bias, int stride) {
  require_rows(tape, x, "tconv1d");
  if (stride < 1) throw ArgumentError("tconv1d: stride must be >= 1, got " + std::to_string(stride));
  const auto& xv = tape.value(x.values);
  const auto& kv = tape.value(kernel);
  const auto& bv = tape.value(bias);
  const Index d_in = xv.cols();
  if (d_in < 1 || kv.rows() % d_in != 0 || kv.rows() == 0) {
    throw DimensionError("tconv1d: kernel rows not a multiple of input width");
  }
  const Index k = kv.rows() / d_in;
  const Index d_out = kv.cols();
  if (bv.rows() != 1 || bv.cols() != d_out) throw DimensionError("tconv1d: bias width mismatch");
  const Index t_in = x.length();
  const Index t_out = t_in == 0 ? 0 : (t_in - 1) * stride + k;

  // Tap-major reshaping: kcat = [K_0 | K_1 | ... | K_{k-1}], d_in x (k*d_out).
  Mat<Scalar> kcat(d_in, k * d_out);
  for (Index j = 0; j < k; ++j) kcat.middleCols(j * d_out, d_out) = kv.middleRows(j * d_in, d_in);
  const Mat<Scalar> xm = masked_copy(xv, x.mask);
  const Mat<Scalar> z = prefix_product<Scalar>(xm, kcat, mask_extent(x.mask));

  Mat<Scalar> out = Mat<Scalar>::Zero(t_out, d_out);
  Mask out_mask(static_cast<std::size_t>(t_out), 0);
  for (Index t = 0; t < t_in; ++t) {
    if (x.mask[static_cast<std::size_t>(t)] == 0) continue;
    for (Index j = 0; j < k; ++j) {
      out.row(t * stride + j) += z.row(t).segment(j * d_out, d_out);
      out_mask[static_cast<std::size_t>(t * stride + j)] = 1;
    }
  }
  if (t_out > 0) {
    out.rowwise() += bv.row(0);
    zero_invalid_rows(out, out_mask);
  }
  const Var xin = x.values;
  const Mask in_mask = x.mask;
  Var y = tape.emit(std::move(out), {xin, kernel, bias},
                    [xin, kernel, bias, out_mask, in_mask, k, d_in, d_out, stride](Tape<Scalar>& t, Var self) {
                      const Mat<Scalar> g = masked_copy(t.grad(self), out_mask);
                      const Index n_in = static_cast<Index>(in_mask.size());
                      Mat<Scalar> dz = Mat<Scalar>::Zero(n_in, k * d_out);
                      for (Index r = 0; r < n_in; ++r) {
                        if (in_mask[static_cast<std::size_t>(r)] == 0) continue;
                        for (Index j = 0; j < k; ++j) dz.row(r).segment(j * d_out, d_out) = g.row(r * stride + j);
                      }
                      if (t.requires_grad(bias)) t.accumulate(bias, g.colwise().sum());
                      const auto& kv2 = t.value(kernel);
                      if (t.requires_grad(kernel)) {
                        const Mat<Scalar> xm2 = masked_copy(t.value(xin), in_mask);
                        const Mat<Scalar> dkcat = xm2.transpose() * dz;
                        Mat<Scalar> dk(k * d_in, d_out);
                        for (Index j = 0; j < k; ++j) dk.middleRows(j * d_in, d_in) = dkcat.middleCols(j * d_out, d_out);
                        t.accumulate(kernel, dk);
                      }
                      if (t.requires_grad(xin)) {
                        Mat<Scalar> kcat2(d_in, k * d_out);
                        for (Index j = 0; j < k; ++j) kcat2.middleCols(j * d_out, d_out) = kv2.middleRows(j * d_in, d_in);
                        Mat<Scalar> dx = dz * kcat2.transpose();
                        zero_invalid_rows(dx, in_mask);
                        t.accumulate(xin, dx);
                      }
                    });
  return SeqVar{y, std::move(out_mask), x.frame_rate_hz * stride};
}

template <typename Scalar>
SeqVar masked_avg_downsample(Tape<Scalar>& tape, const SeqVar& x, int factor) {
  require_rows(tape, x, "masked_avg_downsample");
  if (factor < 1) throw ArgumentError("masked_avg_downsample: factor must be >= 1");
  const auto& xv = tape.value(x.values);
  const Index t_in = x.length();
  const Index t_out = ceil_div(t_in, factor);
  Mat<Scalar> out = Mat<Scalar>::Zero(t_out, xv.cols());
  Mask out_mask(static_cast<std::size_t>(t_out), 0);
  auto counts = std::make_shared<std::vector<Index>>(static_cast<std::size_t>(t_out), 0);
  for (Index t = 0; t < t_out; ++t) {
    const Index end = std::min(t_in, (t + 1) * factor);
    Index n = 0;
    for (Index s = t * factor; s < end; ++s) {
      if (x.mask[static_cast<std::size_t>(s)] != 0) {
        out.row(t) += xv.row(s);
        ++n;
      }
    }
    (*counts)[static_cast<std::size_t>(t)] = n;
    if (n > 0) {
      out.row(t) /= static_cast<Scalar>(n);
      out_mask[static_cast<std::size_t>(t)] = 1;
    }
  }
  const Var xin = x.values;
  const Mask in_mask = x.mask;
  Var y = tape.emit(std::move(out), {xin}, [xin, in_mask, counts, factor](Tape<Scalar>& t, Var self) {
    const auto& g = t.grad(self);
    const Index n_in = static_cast<Index>(in_mask.size());
    Mat<Scalar> dx = Mat<Scalar>::Zero(n_in, g.cols());
    for (Index s = 0; s < n_in; ++s) {
      if (in_mask[static_cast<std::size_t>(s)] == 0) continue;
      const Index o = s / factor;
      dx.row(s) = g.row(o) / static_cast<Scalar>((*counts)[static_cast<std::size_t>(o)]);
    }
    t.accumulate(xin, dx);
  });
  return SeqVar{y, std::move(out_mask), x.frame_rate_hz / factor};
}

namespace {

// Sparse row-mixing matrix application: out_t = sum_k w_k * x_{src_k}.
struct RowMix {
  std::vector<std::vector<std::pair<Index, double>>> taps;  // per output row
};

template <typename Scalar>
SeqVar apply_row_mix(Tape<Scalar>& tape, const SeqVar& x, RowMix mix, Mask out_mask, double rate) {
  const auto& xv = tape.value(x.values);
  const Index t_out = static_cast<Index>(mix.taps.size());
  Mat<Scalar> out = Mat<Scalar>::Zero(t_out, xv.cols());
  for (Index t = 0; t < t_out; ++t) {
    for (const auto& [src, w] : mix.taps[static_cast<std::size_t>(t)]) out.row(t) += static_cast<Scalar>(w) * xv.row(src);
  }
  const Var xin = x.values;
  const Index n_in = x.length();
  auto shared = std::make_shared<RowMix>(std::move(mix));
  Var y = tape.emit(std::move(out), {xin}, [xin, n_in, shared](Tape<Scalar>& t, Var self) {
    const auto& g = t.grad(self);
    Mat<Scalar> dx = Mat<Scalar>::Zero(n_in, g.cols());
    for (std::size_t r = 0; r < shared->taps.size(); ++r) {
      for (const auto& [src, w] : shared->taps[r]) dx.row(src) += static_cast<Scalar>(w) * g.row(static_cast<Index>(r));
    }
    t.accumulate(xin, dx);
  });
  return SeqVar{y, std::move(out_mask), rate};
}

}  // namespace

template <typename Scalar>
SeqVar adaptive_resize(Tape<Scalar>& tape, const SeqVar& x, Index target_length, Index source_extent,
                       Index target_extent) {
  require_rows(tape, x, "adaptive_resize");
  if (target_length < 1) throw ArgumentError("adaptive_resize: target length must be >= 1");
  const Index src_len = source_extent < 0 ? x.length() : std::min(source_extent, x.length());
  const Index tgt_len = target_extent < 0 ? target_length : std::min(target_extent, target_length);

  RowMix mix;
  mix.taps.resize(static_cast<std::size_t>(target_length));
  Mask out_mask(static_cast<std::size_t>(target_length), 0);
  if (src_len > 0) {
    for (Index t = 0; t < tgt_len; ++t) {
      const Index start = (t * src_len) / tgt_len;
      const Index end = std::min(src_len, std::max(start + 1, ((t + 1) * src_len) / tgt_len));
      std::vector<Index> valid;
      for (Index s = start; s < end; ++s) {
        if (x.mask[static_cast<std::size_t>(s)] != 0) valid.push_back(s);
      }
      if (valid.empty()) continue;
      out_mask[static_cast<std::size_t>(t)] = 1;
      const double w = 1.0 / static_cast<double>(valid.size());
      for (Index s : valid) mix.taps[static_cast<std::size_t>(t)].emplace_back(s, w);
    }
  }
  const double rate = (src_len > 0 && tgt_len > 0)
                          ? x.frame_rate_hz * static_cast<double>(tgt_len) / static_cast<double>(src_len)
                          : x.frame_rate_hz;
  return apply_row_mix(tape, x, std::move(mix), std::move(out_mask), rate);
}

template <typename Scalar>
SeqVar linear_interp_upsample(Tape<Scalar>& tape, const SeqVar& x, Index target_length, Index source_extent,
                              Index target_extent) {
  require_rows(tape, x, "linear_interp_upsample");
  if (x.length() == 0) throw ArgumentError("linear_interp_upsample: empty input");
  if (target_length < x.length()) {
    throw ArgumentError("linear_interp_upsample: target length " + std::to_string(target_length) +
                        " shorter than input " + std::to_string(x.length()));
  }
  const Index src_len = source_extent < 0 ? x.length() : std::min(source_extent, x.length());
  const Index tgt_len = target_extent < 0 ? target_length : std::min(target_extent, target_length);
  if (src_len == 0) throw ArgumentError("linear_interp_upsample: no valid input frames");

  const double step = tgt_len > 1 ? static_cast<double>(src_len - 1) / static_cast<double>(tgt_len - 1) : 0.0;
  RowMix mix;
  mix.taps.resize(static_cast<std::size_t>(target_length));
  Mask out_mask(static_cast<std::size_t>(target_length), 0);
  for (Index t = 0; t < tgt_len; ++t) {
    const double pos = static_cast<double>(t) * step;
    Index i0 = std::min(static_cast<Index>(std::floor(pos)), src_len - 1);
    const double frac = pos - static_cast<double>(i0);
    const Index i1 = std::min(i0 + 1, src_len - 1);
    const bool v0 = x.mask[static_cast<std::size_t>(i0)] != 0;
    const bool v1 = x.mask[static_cast<std::size_t>(i1)] != 0;
    auto& taps = mix.taps[static_cast<std::size_t>(t)];
    if (frac == 0.0 || i1 == i0) {
      if (v0) taps.emplace_back(i0, 1.0);
    } else if (v0 && v1) {
      taps.emplace_back(i0, 1.0 - frac);
      taps.emplace_back(i1, frac);
    } else if (v0) {
      taps.emplace_back(i0, 1.0);
    } else if (v1) {
      taps.emplace_back(i1, 1.0);
    }
    if (!taps.empty()) out_mask[static_cast<std::size_t>(t)] = 1;
  }
  const double rate = x.frame_rate_hz * static_cast<double>(tgt_len) / static_cast<double>(src_len);
  return apply_row_mix(tape, x, std::move(mix), std::move(out_mask), rate);
}

namespace {

template <typename Scalar>
void softmax_column(const Eigen::Ref<const Mat<Scalar>>& e, const Mask& mask, Eigen::Ref<Mat<Scalar>> out) {
  Scalar mx = -std::numeric_limits<Scalar>::infinity();
  for (Index t = 0; t < e.rows(); ++t) {
    if (mask[static_cast<std::size_t>(t)] != 0) mx = std::max(mx, e(t, 0));
  }
  Scalar z = 0;
  for (Index t = 0; t < e.rows(); ++t) {
    if (mask[static_cast<std::size_t>(t)] != 0) {
      out(t, 0) = std::exp(e(t, 0) - mx);
      z += out(t, 0);
    } else {
      out(t, 0) = 0;
    }
  }
  out /= z;
}

}  // namespace

template <typename Scalar>
Var masked_softmax(Tape<Scalar>& tape, Var scores, const Mask& mask) {
  const auto& ev = tape.value(scores);
  if (ev.cols() != 1 || ev.rows() != static_cast<Index>(mask.size())) {
    throw DimensionError("masked_softmax: expected a " + std::to_string(mask.size()) + "x1 score vector");
  }
  if (mask_valid_count(mask) == 0) throw NumericError("empty attention support");
  if (!ev.allFinite()) throw NumericError("masked_softmax: non-finite scores");
  Mat<Scalar> out(ev.rows(), 1);
  softmax_column<Scalar>(ev, mask, out);
  return tape.emit(std::move(out), {scores}, [scores](Tape<Scalar>& t, Var self) {
    const auto& a = t.value(self);
    const auto& g = t.grad(self);
    const Scalar dot = (a.array() * g.array()).sum();
    t.accumulate(scores, (a.array() * (g.array() - dot)).matrix());
  });
}

template <typename Scalar>
Var masked_row_softmax(Tape<Scalar>& tape, Var scores, const Mask& key_mask) {
  const auto& sv = tape.value(scores);
  if (sv.cols() != static_cast<Index>(key_mask.size())) {
    throw DimensionError("masked_row_softmax: key mask length does not match score columns");
  }
  if (mask_valid_count(key_mask) == 0) throw NumericError("empty attention support");
  if (!sv.allFinite()) throw NumericError("masked_row_softmax: non-finite scores");
  Mat<Scalar> out(sv.rows(), sv.cols());
  const Mat<Scalar> st = sv.transpose();
  Mat<Scalar> col(sv.cols(), 1);
  for (Index r = 0; r < sv.rows(); ++r) {
    softmax_column<Scalar>(st.col(r), key_mask, col);
    out.row(r) = col.transpose();
  }
  return tape.emit(std::move(out), {scores}, [scores](Tape<Scalar>& t, Var self) {
    const auto& a = t.value(self);
    const auto& g = t.grad(self);
    const Mat<Scalar> dots = (a.array() * g.array()).rowwise().sum();
    Mat<Scalar> d = (a.array() * (g.colwise() - dots.col(0)).array()).matrix();
    t.accumulate(scores, d);
  });
}

namespace {

template <typename Scalar>
struct LstmCache {
  // Per processed (valid) step, in processing order; one column per step.
  std::vector<Index> steps;
  Mat<Scalar> gates;   // 4h x n_steps, post-activation
  Mat<Scalar> tanh_c;  // h x n_steps
  Mat<Scalar> h_prev;  // h x n_steps
  Mat<Scalar> c_prev;  // h x n_steps
};

template <typename Scalar>
void lstm_forward(const Mat<Scalar>& x, const Mask& mask, const Mat<Scalar>& w_ih, const Mat<Scalar>& w_hh,
                  const Mat<Scalar>& b, bool reverse, Eigen::Ref<Mat<Scalar>> out, LstmCache<Scalar>& cache) {
  using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  const Index len = x.rows();
  const Index h = w_hh.rows();
  for (Index i = 0; i < len; ++i) {
    const Index t = reverse ? len - 1 - i : i;
    if (mask[static_cast<std::size_t>(t)] != 0) cache.steps.push_back(t);
  }
  const Index n = static_cast<Index>(cache.steps.size());
  const Index extent = mask_extent(mask);
  Mat<Scalar> zin = w_ih.transpose() * x.topRows(extent).transpose();  // 4h x extent
  zin.colwise() += b.transpose().col(0);
  const Mat<Scalar> w_hh_t = w_hh.transpose();  // 4h x h
  cache.gates.resize(4 * h, n);
  cache.tanh_c.resize(h, n);
  cache.h_prev.resize(h, n);
  cache.c_prev.resize(h, n);
  Vec hs = Vec::Zero(h);
  Vec cs = Vec::Zero(h);
  Vec z(4 * h);
  for (Index s = 0; s < n; ++s) {
    const Index t = cache.steps[static_cast<std::size_t>(s)];
    z.noalias() = w_hh_t * hs;
    z += zin.col(t);
    auto a = z.array();
    a.head(2 * h) = Scalar(1) / (Scalar(1) + (-a.head(2 * h)).exp());
    a.segment(2 * h, h) = a.segment(2 * h, h).tanh();
    a.tail(h) = Scalar(1) / (Scalar(1) + (-a.tail(h)).exp());
    cache.h_prev.col(s) = hs;
    cache.c_prev.col(s) = cs;
    cs = a.segment(h, h) * cs.array() + a.head(h) * a.segment(2 * h, h);
    cache.tanh_c.col(s) = cs.array().tanh();
    hs = a.tail(h) * cache.tanh_c.col(s).array();
    cache.gates.col(s) = z;
    out.row(t) = hs.transpose();
  }
}

// Accumulates parameter grads and returns d(input rows) for one direction.
template <typename Scalar>
void lstm_backward(const Mat<Scalar>& x, const Mat<Scalar>& gout, const Mat<Scalar>& w_ih, const Mat<Scalar>& w_hh,
                   const LstmCache<Scalar>& cache, Mat<Scalar>& dx, Mat<Scalar>& dw_ih, Mat<Scalar>& dw_hh,
                   Mat<Scalar>& db) {
  using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  const Index h = w_hh.rows();
  const Index n = static_cast<Index>(cache.steps.size());
  const Mat<Scalar> gout_t = gout.transpose();  // h x len
  Mat<Scalar> dz_all = Mat<Scalar>::Zero(4 * h, x.rows());
  Mat<Scalar> dz_steps(4 * h, n);
  Vec dh_next = Vec::Zero(h);
  Vec dc_next = Vec::Zero(h);
  Vec dh(h);
  Vec dc(h);
  for (Index s = n; s-- > 0;) {
    const Index t = cache.steps[static_cast<std::size_t>(s)];
    const auto gates = cache.gates.col(s).array();
    const auto gi = gates.head(h);
    const auto gf = gates.segment(h, h);
    const auto gg = gates.segment(2 * h, h);
    const auto go = gates.tail(h);
    const auto tc = cache.tanh_c.col(s).array();
    dh = gout_t.col(t) + dh_next;
    dc = (dh.array() * go * (Scalar(1) - tc.square())).matrix() + dc_next;
    auto dz = dz_steps.col(s).array();
    dz.head(h) = dc.array() * gg * gi * (Scalar(1) - gi);
    dz.segment(h, h) = dc.array() * cache.c_prev.col(s).array() * gf * (Scalar(1) - gf);
    dz.segment(2 * h, h) = dc.array() * gi * (Scalar(1) - gg.square());
    dz.tail(h) = dh.array() * tc * go * (Scalar(1) - go);
    dc_next = (dc.array() * gf).matrix();
    dh_next.noalias() = w_hh * dz_steps.col(s);
    dz_all.col(t) = dz_steps.col(s);
  }
  dw_hh.noalias() = cache.h_prev * dz_steps.transpose();
  dw_ih.noalias() = x.transpose() * dz_all.transpose();
  db = dz_all.rowwise().sum().transpose();
  dx.noalias() += dz_all.transpose() * w_ih.transpose();
}

}  // namespace

template <typename Scalar>
SeqVar bilstm(Tape<Scalar>& tape, const SeqVar& x, const BiLstmParams& p) {
  require_rows(tape, x, "bilstm");
  const Mat<Scalar> xv = masked_copy(tape.value(x.values), x.mask);
  const LstmDirection dirs[2] = {p.forward, p.backward};
  Index h = -1;
  for (const auto& d : dirs) {
    const auto& wi = tape.value(d.w_ih);
    const auto& wh = tape.value(d.w_hh);
    const auto& b = tape.value(d.bias);
    const Index hd = wh.rows();
    if (wi.rows() != xv.cols() || wi.cols() != 4 * hd || wh.cols() != 4 * hd || b.rows() != 1 || b.cols() != 4 * hd) {
      throw DimensionError("bilstm: parameter shapes inconsistent with input width " + std::to_string(xv.cols()));
    }
    if (h >= 0 && h != hd) throw DimensionError("bilstm: directions disagree on hidden size");
    h = hd;
  }
  const Index len = x.length();
  Mat<Scalar> out = Mat<Scalar>::Zero(len, 2 * h);
  auto caches = std::make_shared<std::array<LstmCache<Scalar>, 2>>();
  lstm_forward<Scalar>(xv, x.mask, tape.value(p.forward.w_ih), tape.value(p.forward.w_hh), tape.value(p.forward.bias),
                       false, out.leftCols(h), (*caches)[0]);
  lstm_forward<Scalar>(xv, x.mask, tape.value(p.backward.w_ih), tape.value(p.backward.w_hh),
                       tape.value(p.backward.bias), true, out.rightCols(h), (*caches)[1]);

  const Var xin = x.values;
  const Mask mask = x.mask;
  std::vector<Var> inputs = {xin,
                             p.forward.w_ih,
                             p.forward.w_hh,
                             p.forward.bias,
                             p.backward.w_ih,
                             p.backward.w_hh,
                             p.backward.bias};
  Var y = tape.emit(std::move(out), inputs, [xin, mask, p, caches, h](Tape<Scalar>& t, Var self) {
    const Mat<Scalar> g = masked_copy(t.grad(self), mask);
    const Mat<Scalar> xv2 = masked_copy(t.value(xin), mask);
    Mat<Scalar> dx = Mat<Scalar>::Zero(xv2.rows(), xv2.cols());
    const LstmDirection dirs2[2] = {p.forward, p.backward};
    for (int d = 0; d < 2; ++d) {
      Mat<Scalar> dw_ih, dw_hh, db;
      const Mat<Scalar> gd = d == 0 ? Mat<Scalar>(g.leftCols(h)) : Mat<Scalar>(g.rightCols(h));
      lstm_backward<Scalar>(xv2, gd, t.value(dirs2[d].w_ih), t.value(dirs2[d].w_hh), (*caches)[static_cast<std::size_t>(d)], dx,
                            dw_ih, dw_hh, db);
      t.accumulate(dirs2[d].w_ih, dw_ih);
      t.accumulate(dirs2[d].w_hh, dw_hh);
      t.accumulate(dirs2[d].bias, db);
    }
    zero_invalid_rows(dx, mask);
    t.accumulate(xin, dx);
  });
  return SeqVar{y, x.mask, x.frame_rate_hz};
}

namespace {

template <typename Scalar>
Var top_rows(Tape<Scalar>& tape, Var x, Index rows) {
  const auto& xv = tape.value(x);
  if (rows == xv.rows()) return x;
  Mat<Scalar> out = xv.topRows(rows);
  return tape.emit(std::move(out), {x}, [x](Tape<Scalar>& t, Var self) {
    const auto& g = t.grad(self);
    Mat<Scalar> dx = Mat<Scalar>::Zero(t.value(x).rows(), g.cols());
    dx.topRows(g.rows()) = g;
    t.accumulate(x, dx);
  });
}

}  // namespace

template <typename Scalar>
Var attention_pool(Tape<Scalar>& tape, const SeqVar& f, Var attn_weight, Var attn_vector) {
  require_rows(tape, f, "attention_pool");
  if (f.length() == 0 || mask_valid_count(f.mask) == 0) throw NumericError("empty attention support");
  // Pool over the valid prefix so trailing padding cannot alter the result.
  const Index extent = mask_extent(f.mask);
  const Mask mask(f.mask.begin(), f.mask.begin() + extent);
  const Var feats = mask_rows(tape, top_rows(tape, f.values, extent), mask);
  const Var hidden = tanh(tape, matmul(tape, feats, attn_weight));
  const Var scores = matmul(tape, hidden, attn_vector);
  const Var alpha = masked_softmax(tape, scores, mask);
  return weighted_sum(tape, alpha, feats);
}

template <typename Scalar>
SeqVar temporal_shift(Tape<Scalar>& tape, const SeqVar& x, Index delta) {
  require_rows(tape, x, "temporal_shift");
  const auto& xv = tape.value(x.values);
  const Index len = x.length();
  Mat<Scalar> out = Mat<Scalar>::Zero(len, xv.cols());
  Mask out_mask(static_cast<std::size_t>(len), 0);
  for (Index t = 0; t < len; ++t) {
    const Index src = t - delta;
    if (src >= 0 && src < len && x.mask[static_cast<std::size_t>(src)] != 0) {
      out.row(t) = xv.row(src);
      out_mask[static_cast<std::size_t>(t)] = 1;
    }
  }
  const Var xin = x.values;
  Var y = tape.emit(std::move(out), {xin}, [xin, out_mask, delta](Tape<Scalar>& t, Var self) {
    const auto& g = t.grad(self);
    Mat<Scalar> dx = Mat<Scalar>::Zero(g.rows(), g.cols());
    for (Index r = 0; r < g.rows(); ++r) {
      if (out_mask[static_cast<std::size_t>(r)] != 0) dx.row(r - delta) = g.row(r);
    }
    t.accumulate(xin, dx);
  });
  return SeqVar{y, std::move(out_mask), x.frame_rate_hz};
}

template <typename Scalar>
SeqVar concat_features(Tape<Scalar>& tape, const SeqVar& a, const SeqVar& b, const Mask& mask) {
  if (a.length() != b.length() || static_cast<Index>(mask.size()) != a.length()) {
    throw DimensionError("concat_features: lengths " + std::to_string(a.length()) + " and " +
                         std::to_string(b.length()) + " differ");
  }
  const Var joined = concat_cols(tape, a.values, b.values);
  return SeqVar{mask_rows(tape, joined, mask), mask, a.frame_rate_hz};
}

template <typename Scalar>
SeqVar pad_to(Tape<Scalar>& tape, const SeqVar& x, Index length) {
  require_rows(tape, x, "pad_to");
  if (length <= x.length()) return x;
  const auto& xv = tape.value(x.values);
  const Index n = x.length();
  Mat<Scalar> out = Mat<Scalar>::Zero(length, xv.cols());
  out.topRows(n) = xv;
  Mask mask = x.mask;
  mask.resize(static_cast<std::size_t>(length), 0);
  const Var xin = x.values;
  Var y = tape.emit(std::move(out), {xin}, [xin, n](Tape<Scalar>& t, Var self) {
    t.accumulate(xin, t.grad(self).topRows(n));
  });
  return SeqVar{y, std::move(mask), x.frame_rate_hz};
}

#define SIPFUSE_INSTANTIATE_OPS(S)                                                                      \
  template SeqVar constant_seq<S>(Tape<S>&, const MaskedSeq<S>&);                                       \
  template MaskedSeq<S> to_masked<S>(const Tape<S>&, const SeqVar&);                                    \
  template Var matmul<S>(Tape<S>&, Var, Var);                                                           \
  template Var matmul_nt<S>(Tape<S>&, Var, Var);                                                        \
  template Var add<S>(Tape<S>&, Var, Var);                                                              \
  template Var add_row<S>(Tape<S>&, Var, Var);                                                          \
  template Var scale<S>(Tape<S>&, Var, S);                                                              \
  template Var add_scalar<S>(Tape<S>&, Var, S);                                                         \
  template Var tanh<S>(Tape<S>&, Var);                                                                  \
  template Var sigmoid<S>(Tape<S>&, Var);                                                               \
  template Var relu<S>(Tape<S>&, Var);                                                                  \
  template Var square<S>(Tape<S>&, Var);                                                                \
  template Var sum<S>(Tape<S>&, Var);                                                                   \
  template Var concat_cols<S>(Tape<S>&, Var, Var);                                                      \
  template Var select_row<S>(Tape<S>&, Var, Index);                                                     \
  template Var mask_rows<S>(Tape<S>&, Var, const Mask&);                                                \
  template Var weighted_sum<S>(Tape<S>&, Var, Var);                                                     \
  template Var linear<S>(Tape<S>&, Var, Var, Var);                                                      \
  template SeqVar linear<S>(Tape<S>&, const SeqVar&, Var, Var);                                         \
  template SeqVar conv1d<S>(Tape<S>&, const SeqVar&, Var, Var, int);                                    \
  template SeqVar conv1d_same<S>(Tape<S>&, const SeqVar&, Var, Var);                                    \
  template SeqVar tconv1d<S>(Tape<S>&, const SeqVar&, Var, Var, int);                                   \
  template SeqVar masked_avg_downsample<S>(Tape<S>&, const SeqVar&, int);                               \
  template SeqVar adaptive_resize<S>(Tape<S>&, const SeqVar&, Index, Index, Index);                     \
  template SeqVar linear_interp_upsample<S>(Tape<S>&, const SeqVar&, Index, Index, Index);              \
  template Var masked_softmax<S>(Tape<S>&, Var, const Mask&);                                           \
  template Var masked_row_softmax<S>(Tape<S>&, Var, const Mask&);                                       \
  template SeqVar bilstm<S>(Tape<S>&, const SeqVar&, const BiLstmParams&);                              \
  template Var attention_pool<S>(Tape<S>&, const SeqVar&, Var, Var);                                    \
  template SeqVar temporal_shift<S>(Tape<S>&, const SeqVar&, Index);                                    \
  template SeqVar concat_features<S>(Tape<S>&, const SeqVar&, const SeqVar&, const Mask&);              \
  template SeqVar pad_to<S>(Tape<S>&, const SeqVar&, Index);

SIPFUSE_INSTANTIATE_OPS(float)
SIPFUSE_INSTANTIATE_OPS(double)

#undef SIPFUSE_INSTANTIATE_OPS

}  // namespace sipfuse::ops
