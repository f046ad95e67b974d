#include "mrb/ad/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "mrb/error.hpp"

namespace mrb::ad {

namespace {

Tape& tape_of(Var a) {
  if (!a.valid()) throw Error("operation on an unbound Var");
  return *a.tape();
}

Tape& tape_of(Var a, Var b) {
  Tape& t = tape_of(a);
  if (b.tape() != &t) throw Error("operands live on different tapes");
  return t;
}

Tensor zeros_like(const Tensor& t) { return Tensor(t.shape(), std::vector<double>(t.size(), 0.0)); }

enum class Broadcast { kSame, kScalar, kRow, kColumn };

Broadcast classify(const Tensor& a, const Tensor& b, const char* op) {
  if (a.rows() == b.rows() && a.cols() == b.cols()) return Broadcast::kSame;
  if (b.size() == 1) return Broadcast::kScalar;
  if (b.rows() == 1 && b.cols() == a.cols()) return Broadcast::kRow;
  if (b.cols() == 1 && b.rows() == a.rows()) return Broadcast::kColumn;
  throw ShapeError(std::string(op) + ": cannot broadcast " + b.shape_string() + " onto " +
                   a.shape_string());
}

std::size_t broadcast_index(Broadcast mode, std::size_t r, std::size_t c, std::size_t cols) {
  switch (mode) {
    case Broadcast::kSame:
      return r * cols + c;
    case Broadcast::kScalar:
      return 0;
    case Broadcast::kRow:
      return c;
    case Broadcast::kColumn:
      return r;
  }
  return 0;
}

// Sums an a-shaped gradient down to the broadcast operand's shape.
Tensor reduce_broadcast(const Tensor& g, const Tensor& b, Broadcast mode) {
  if (mode == Broadcast::kSame) return g;
  Tensor out = zeros_like(b);
  const std::size_t rows = g.rows();
  const std::size_t cols = g.cols();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out[broadcast_index(mode, r, c, cols)] += g(r, c);
  }
  return out;
}

void check_finite(const Tensor& t, const char* op) {
  if (!t.all_finite()) throw NumericError(std::string(op) + ": non-finite input");
}

}  // namespace

namespace kernels {

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: " + a.shape_string() + " x " + b.shape_string());
  }
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  Tensor out(n, m);
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* po = out.data().data();
  for (std::size_t i = 0; i < n; ++i) {
    double* orow = po + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = pa[i * k + p];
      const double* brow = pb + p * m;
      for (std::size_t j = 0; j < m; ++j) orow[j] += av * brow[j];
    }
  }
  return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.cols()) {
    throw ShapeError("matmul_nt: " + a.shape_string() + " x " + b.shape_string() + "^T");
  }
  const std::size_t n = a.rows(), k = a.cols(), m = b.rows();
  Tensor out(n, m);
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  for (std::size_t i = 0; i < n; ++i) {
    const double* arow = pa + i * k;
    for (std::size_t j = 0; j < m; ++j) {
      const double* brow = pb + j * k;
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      out(i, j) = acc;
    }
  }
  return out;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows()) {
    throw ShapeError("matmul_tn: " + a.shape_string() + "^T x " + b.shape_string());
  }
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  Tensor out(k, m);
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* po = out.data().data();
  for (std::size_t i = 0; i < n; ++i) {
    const double* brow = pb + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = pa[i * k + p];
      double* orow = po + p * m;
      for (std::size_t j = 0; j < m; ++j) orow[j] += av * brow[j];
    }
  }
  return out;
}

Tensor softmax_rows(const Tensor& a) {
  check_finite(a, "softmax_rows");
  Tensor out(a.rows(), a.cols());
  for (std::size_t r = 0; r < a.rows(); ++r) {
    auto in = a.row_span(r);
    auto o = out.row_span(r);
    const double mx = *std::max_element(in.begin(), in.end());
    double total = 0.0;
    for (std::size_t c = 0; c < in.size(); ++c) {
      o[c] = std::exp(in[c] - mx);
      total += o[c];
    }
    for (double& x : o) x /= total;
  }
  return out;
}

}  // namespace kernels

Var matmul(Var a, Var b) {
  Tape& t = tape_of(a, b);
  Tensor out = kernels::matmul(a.value(), b.value());
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(std::move(out), {ia, ib}, [ia, ib](Tape& tp, const Tensor& g) {
    if (tp.requires_grad(ia)) tp.accumulate(ia, kernels::matmul_nt(g, tp.value(ib)));
    if (tp.requires_grad(ib)) tp.accumulate(ib, kernels::matmul_tn(tp.value(ia), g));
  });
}

Var transpose(Var a) {
  Tape& t = tape_of(a);
  const Tensor& v = a.value();
  Tensor out(v.cols(), v.rows());
  for (std::size_t r = 0; r < v.rows(); ++r)
    for (std::size_t c = 0; c < v.cols(); ++c) out(c, r) = v(r, c);
  const std::size_t ia = a.id();
  return t.record(std::move(out), {ia}, [ia](Tape& tp, const Tensor& g) {
    Tensor gt(g.cols(), g.rows());
    for (std::size_t r = 0; r < g.rows(); ++r)
      for (std::size_t c = 0; c < g.cols(); ++c) gt(c, r) = g(r, c);
    tp.accumulate(ia, gt);
  });
}

Var add(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const Tensor& va = a.value();
  const Tensor& vb = b.value();
  const Broadcast mode = classify(va, vb, "add");
  Tensor out = va;
  const std::size_t cols = va.cols();
  for (std::size_t r = 0; r < va.rows(); ++r)
    for (std::size_t c = 0; c < cols; ++c) out(r, c) += vb[broadcast_index(mode, r, c, cols)];
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(std::move(out), {ia, ib}, [ia, ib, mode](Tape& tp, const Tensor& g) {
    tp.accumulate(ia, g);
    if (tp.requires_grad(ib)) tp.accumulate(ib, reduce_broadcast(g, tp.value(ib), mode));
  });
}

Var sub(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const Tensor& va = a.value();
  const Tensor& vb = b.value();
  const Broadcast mode = classify(va, vb, "sub");
  Tensor out = va;
  const std::size_t cols = va.cols();
  for (std::size_t r = 0; r < va.rows(); ++r)
    for (std::size_t c = 0; c < cols; ++c) out(r, c) -= vb[broadcast_index(mode, r, c, cols)];
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(std::move(out), {ia, ib}, [ia, ib, mode](Tape& tp, const Tensor& g) {
    tp.accumulate(ia, g);
    if (tp.requires_grad(ib)) {
      Tensor gb = reduce_broadcast(g, tp.value(ib), mode);
      for (double& x : gb.data()) x = -x;
      tp.accumulate(ib, gb);
    }
  });
}

Var mul(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const Tensor& va = a.value();
  const Tensor& vb = b.value();
  const Broadcast mode = classify(va, vb, "mul");
  Tensor out = va;
  const std::size_t cols = va.cols();
  for (std::size_t r = 0; r < va.rows(); ++r)
    for (std::size_t c = 0; c < cols; ++c) out(r, c) *= vb[broadcast_index(mode, r, c, cols)];
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(std::move(out), {ia, ib}, [ia, ib, mode](Tape& tp, const Tensor& g) {
    const Tensor& xa = tp.value(ia);
    const Tensor& xb = tp.value(ib);
    const std::size_t cols = xa.cols();
    if (tp.requires_grad(ia)) {
      Tensor ga = g;
      for (std::size_t r = 0; r < xa.rows(); ++r)
        for (std::size_t c = 0; c < cols; ++c) ga(r, c) *= xb[broadcast_index(mode, r, c, cols)];
      tp.accumulate(ia, ga);
    }
    if (tp.requires_grad(ib)) {
      Tensor gb = g;
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] *= xa[i];
      tp.accumulate(ib, reduce_broadcast(gb, xb, mode));
    }
  });
}

Var scale(Var a, double factor) {
  Tape& t = tape_of(a);
  Tensor out = a.value();
  for (double& x : out.data()) x *= factor;
  const std::size_t ia = a.id();
  return t.record(std::move(out), {ia}, [ia, factor](Tape& tp, const Tensor& g) {
    Tensor ga = g;
    for (double& x : ga.data()) x *= factor;
    tp.accumulate(ia, ga);
  });
}

Var add_scalar(Var a, double offset) {
  Tape& t = tape_of(a);
  Tensor out = a.value();
  for (double& x : out.data()) x += offset;
  const std::size_t ia = a.id();
  return t.record(std::move(out), {ia}, [ia](Tape& tp, const Tensor& g) { tp.accumulate(ia, g); });
}

Var affine(Var x, Var weight, Var bias) {
  if (bias.rows() != 1 || bias.cols() != weight.cols()) {
    throw ShapeError("affine: bias " + bias.value().shape_string() + " for weight " +
                     weight.value().shape_string());
  }
  return add(matmul(x, weight), bias);
}

Var tanh(Var a) {
  Tape& t = tape_of(a);
  Tensor out = a.value();
  for (double& x : out.data()) x = std::tanh(x);
  const std::size_t ia = a.id();
  const std::size_t self = t.size();
  return t.record(std::move(out), {ia}, [ia, self](Tape& tp, const Tensor& g) {
    const Tensor& y = tp.value(self);
    Tensor ga = g;
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] *= 1.0 - y[i] * y[i];
    tp.accumulate(ia, ga);
  });
}

Var gelu(Var a) {
  Tape& t = tape_of(a);
  Tensor out = a.value();
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  for (double& x : out.data()) x = 0.5 * x * (1.0 + std::erf(x * kInvSqrt2));
  const std::size_t ia = a.id();
  return t.record(std::move(out), {ia}, [ia](Tape& tp, const Tensor& g) {
    constexpr double kInvSqrt2 = 0.70710678118654752440;
    const double kInvSqrt2Pi = 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
    const Tensor& x = tp.value(ia);
    Tensor ga = g;
    for (std::size_t i = 0; i < ga.size(); ++i) {
      const double cdf = 0.5 * (1.0 + std::erf(x[i] * kInvSqrt2));
      const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x[i] * x[i]);
      ga[i] *= cdf + x[i] * pdf;
    }
    tp.accumulate(ia, ga);
  });
}

Var exp(Var a) {
  Tape& t = tape_of(a);
  Tensor out = a.value();
  for (double& x : out.data()) x = std::exp(x);
  if (!out.all_finite()) throw NumericError("exp: overflow");
  const std::size_t ia = a.id();
  const std::size_t self = t.size();
  return t.record(std::move(out), {ia}, [ia, self](Tape& tp, const Tensor& g) {
    const Tensor& y = tp.value(self);
    Tensor ga = g;
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] *= y[i];
    tp.accumulate(ia, ga);
  });
}

Var log(Var a) {
  Tape& t = tape_of(a);
  Tensor out = a.value();
  for (double& x : out.data()) {
    if (!(x > 0.0)) throw NumericError("log: non-positive input " + std::to_string(x));
    x = std::log(x);
  }
  const std::size_t ia = a.id();
  return t.record(std::move(out), {ia}, [ia](Tape& tp, const Tensor& g) {
    const Tensor& x = tp.value(ia);
    Tensor ga = g;
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] /= x[i];
    tp.accumulate(ia, ga);
  });
}

Var softmax_rows(Var a) {
  Tape& t = tape_of(a);
  Tensor out = kernels::softmax_rows(a.value());
  const std::size_t ia = a.id();
  const std::size_t self = t.size();
  return t.record(std::move(out), {ia}, [ia, self](Tape& tp, const Tensor& g) {
    const Tensor& p = tp.value(self);
    Tensor ga(p.rows(), p.cols());
    for (std::size_t r = 0; r < p.rows(); ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < p.cols(); ++c) dot += g(r, c) * p(r, c);
      for (std::size_t c = 0; c < p.cols(); ++c) ga(r, c) = p(r, c) * (g(r, c) - dot);
    }
    tp.accumulate(ia, ga);
  });
}

Var l2_normalize_rows(Var a) {
  Tape& t = tape_of(a);
  const Tensor& v = a.value();
  Tensor out = v;
  std::vector<double> norms(v.rows());
  for (std::size_t r = 0; r < v.rows(); ++r) {
    double ss = 0.0;
    for (double x : v.row_span(r)) ss += x * x;
    const double n = std::sqrt(ss);
    if (!(n > 0.0) || !std::isfinite(n)) {
      throw NumericError("l2_normalize_rows: row " + std::to_string(r) + " has zero norm");
    }
    norms[r] = n;
    for (double& x : out.row_span(r)) x /= n;
  }
  const std::size_t ia = a.id();
  const std::size_t self = t.size();
  return t.record(std::move(out), {ia},
                  [ia, self, norms = std::move(norms)](Tape& tp, const Tensor& g) {
                    const Tensor& y = tp.value(self);
                    Tensor ga(y.rows(), y.cols());
                    for (std::size_t r = 0; r < y.rows(); ++r) {
                      double dot = 0.0;
                      for (std::size_t c = 0; c < y.cols(); ++c) dot += y(r, c) * g(r, c);
                      for (std::size_t c = 0; c < y.cols(); ++c)
                        ga(r, c) = (g(r, c) - y(r, c) * dot) / norms[r];
                    }
                    tp.accumulate(ia, ga);
                  });
}

Var sum(Var a) {
  Tape& t = tape_of(a);
  double total = 0.0;
  for (double x : a.value().data()) total += x;
  const std::size_t ia = a.id();
  return t.record(Tensor::scalar(total), {ia}, [ia](Tape& tp, const Tensor& g) {
    const Tensor& x = tp.value(ia);
    tp.accumulate(ia, Tensor(x.shape(), std::vector<double>(x.size(), g[0])));
  });
}

Var mean(Var a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

Var mean_rows(Var a) {
  Tape& t = tape_of(a);
  const Tensor& v = a.value();
  Tensor out(1, v.cols());
  for (std::size_t r = 0; r < v.rows(); ++r)
    for (std::size_t c = 0; c < v.cols(); ++c) out[c] += v(r, c);
  const double inv = 1.0 / static_cast<double>(v.rows());
  for (double& x : out.data()) x *= inv;
  const std::size_t ia = a.id();
  return t.record(std::move(out), {ia}, [ia, inv](Tape& tp, const Tensor& g) {
    const Tensor& x = tp.value(ia);
    Tensor ga(x.rows(), x.cols());
    for (std::size_t r = 0; r < x.rows(); ++r)
      for (std::size_t c = 0; c < x.cols(); ++c) ga(r, c) = g[c] * inv;
    tp.accumulate(ia, ga);
  });
}

Var segment_mean_rows(Var a, std::span<const std::size_t> lengths) {
  Tape& t = tape_of(a);
  const Tensor& v = a.value();
  std::size_t total = 0;
  for (std::size_t n : lengths) {
    if (n == 0) throw ShapeError("segment_mean_rows: empty segment");
    total += n;
  }
  if (total != v.rows() || lengths.empty()) {
    throw ShapeError("segment_mean_rows: segments cover " + std::to_string(total) + " of " +
                     std::to_string(v.rows()) + " rows");
  }
  const std::size_t cols = v.cols();
  Tensor out(lengths.size(), cols);
  std::size_t row = 0;
  for (std::size_t s = 0; s < lengths.size(); ++s) {
    auto o = out.row_span(s);
    for (std::size_t k = 0; k < lengths[s]; ++k, ++row) {
      auto in = v.row_span(row);
      for (std::size_t c = 0; c < cols; ++c) o[c] += in[c];
    }
    const double inv = 1.0 / static_cast<double>(lengths[s]);
    for (double& x : o) x *= inv;
  }
  const std::size_t ia = a.id();
  std::vector<std::size_t> lens(lengths.begin(), lengths.end());
  return t.record(std::move(out), {ia}, [ia, lens = std::move(lens)](Tape& tp, const Tensor& g) {
    const Tensor& x = tp.value(ia);
    Tensor ga(x.rows(), x.cols());
    std::size_t row = 0;
    for (std::size_t s = 0; s < lens.size(); ++s) {
      const double inv = 1.0 / static_cast<double>(lens[s]);
      for (std::size_t k = 0; k < lens[s]; ++k, ++row)
        for (std::size_t c = 0; c < x.cols(); ++c) ga(row, c) = g(s, c) * inv;
    }
    tp.accumulate(ia, ga);
  });
}

Var gather_rows(Var a, std::span<const std::size_t> indices) {
  Tape& t = tape_of(a);
  const Tensor& v = a.value();
  if (indices.empty()) throw ShapeError("gather_rows: empty index list");
  const std::size_t cols = v.cols();
  Tensor out(indices.size(), cols);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= v.rows()) {
      throw ShapeError("gather_rows: index " + std::to_string(indices[i]) + " out of range " +
                       std::to_string(v.rows()));
    }
    std::copy_n(v.row_span(indices[i]).begin(), cols, out.row_span(i).begin());
  }
  const std::size_t ia = a.id();
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  return t.record(std::move(out), {ia}, [ia, idx = std::move(idx)](Tape& tp, const Tensor& g) {
    Tensor& ga = tp.grad_buffer(ia);
    const std::size_t cols = g.cols();
    for (std::size_t i = 0; i < idx.size(); ++i) {
      auto dst = ga.row_span(idx[i]);
      auto src = g.row_span(i);
      for (std::size_t c = 0; c < cols; ++c) dst[c] += src[c];
    }
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  Tape& t = tape_of(parts[0]);
  const std::size_t rows = parts[0].rows();
  std::size_t cols = 0;
  std::vector<std::size_t> ids;
  std::vector<std::size_t> widths;
  for (const Var& p : parts) {
    tape_of(parts[0], p);
    if (p.rows() != rows) throw ShapeError("concat_cols: row count mismatch");
    cols += p.cols();
    ids.push_back(p.id());
    widths.push_back(p.cols());
  }
  Tensor out(rows, cols);
  std::size_t offset = 0;
  for (const Var& p : parts) {
    const Tensor& v = p.value();
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(v.row_span(r).begin(), v.cols(), out.row_span(r).begin() + offset);
    offset += v.cols();
  }
  return t.record(std::move(out), ids, [ids, widths](Tape& tp, const Tensor& g) {
    std::size_t offset = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (tp.requires_grad(ids[k])) {
        Tensor gk(g.rows(), widths[k]);
        for (std::size_t r = 0; r < g.rows(); ++r)
          std::copy_n(g.row_span(r).begin() + offset, widths[k], gk.row_span(r).begin());
        tp.accumulate(ids[k], gk);
      }
      offset += widths[k];
    }
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  Tape& t = tape_of(parts[0]);
  const std::size_t cols = parts[0].cols();
  std::vector<double> data;
  std::vector<std::size_t> ids;
  std::size_t rows = 0;
  for (const Var& p : parts) {
    tape_of(parts[0], p);
    if (p.cols() != cols) throw ShapeError("concat_rows: column count mismatch");
    const auto d = p.value().data();
    data.insert(data.end(), d.begin(), d.end());
    rows += p.rows();
    ids.push_back(p.id());
  }
  return t.record(Tensor({rows, cols}, std::move(data)), ids, [ids](Tape& tp, const Tensor& g) {
    std::size_t offset = 0;
    for (std::size_t id : ids) {
      const std::size_t n = tp.value(id).size();
      if (tp.requires_grad(id)) {
        Tensor gk(tp.value(id).shape(),
                  std::vector<double>(g.data().begin() + static_cast<std::ptrdiff_t>(offset),
                                      g.data().begin() + static_cast<std::ptrdiff_t>(offset + n)));
        tp.accumulate(id, gk);
      }
      offset += n;
    }
  });
}

BlockAttention block_attention(Var q, Var k, Var v, std::span<const std::size_t> q_rows,
                               std::span<const std::size_t> kv_rows, double scale) {
  Tape& t = tape_of(q, k);
  tape_of(q, v);
  const Tensor& qv = q.value();
  const Tensor& kv = k.value();
  const Tensor& vv = v.value();
  if (q_rows.size() != kv_rows.size() || q_rows.empty()) {
    throw ShapeError("block_attention: block lists differ in length or are empty");
  }
  if (qv.cols() != kv.cols()) throw ShapeError("block_attention: query/key width mismatch");
  if (kv.rows() != vv.rows()) throw ShapeError("block_attention: key/value row mismatch");
  std::size_t nq = 0, nk = 0, widest = 0;
  for (std::size_t b = 0; b < q_rows.size(); ++b) {
    if (q_rows[b] == 0 || kv_rows[b] == 0) throw ShapeError("block_attention: empty block");
    nq += q_rows[b];
    nk += kv_rows[b];
    widest = std::max(widest, kv_rows[b]);
  }
  if (nq != qv.rows() || nk != kv.rows()) {
    throw ShapeError("block_attention: blocks cover " + std::to_string(nq) + "x" +
                     std::to_string(nk) + " rows, inputs have " + std::to_string(qv.rows()) +
                     "x" + std::to_string(kv.rows()));
  }
  check_finite(qv, "block_attention");
  check_finite(kv, "block_attention");
  const std::size_t dk = qv.cols();
  const std::size_t dv = vv.cols();
  Tensor weights(nq, widest);
  Tensor out(nq, dv);
  std::vector<double> scores(widest);
  for (std::size_t b = 0, r0 = 0, k0 = 0; b < q_rows.size(); r0 += q_rows[b], k0 += kv_rows[b], ++b) {
    const std::size_t m = kv_rows[b];
    for (std::size_t r = r0; r < r0 + q_rows[b]; ++r) {
      const auto qr = qv.row_span(r);
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < m; ++j) {
        const auto kr = kv.row_span(k0 + j);
        double dot = 0.0;
        for (std::size_t c = 0; c < dk; ++c) dot += qr[c] * kr[c];
        scores[j] = dot * scale;
        mx = std::max(mx, scores[j]);
      }
      double total = 0.0;
      for (std::size_t j = 0; j < m; ++j) {
        scores[j] = std::exp(scores[j] - mx);
        total += scores[j];
      }
      auto o = out.row_span(r);
      for (std::size_t j = 0; j < m; ++j) {
        const double p = scores[j] / total;
        weights(r, j) = p;
        const auto vr = vv.row_span(k0 + j);
        for (std::size_t c = 0; c < dv; ++c) o[c] += p * vr[c];
      }
    }
  }
  const std::size_t iq = q.id(), ik = k.id(), iv = v.id();
  std::vector<std::size_t> qb(q_rows.begin(), q_rows.end()), kb(kv_rows.begin(), kv_rows.end());
  Var output = t.record(
      std::move(out), {iq, ik, iv},
      [iq, ik, iv, qb = std::move(qb), kb = std::move(kb), w = weights, scale](Tape& tp,
                                                                               const Tensor& g) {
        const Tensor& qv = tp.value(iq);
        const Tensor& kv = tp.value(ik);
        const Tensor& vv = tp.value(iv);
        const std::size_t dk = qv.cols();
        const std::size_t dv = vv.cols();
        Tensor gq(qv.rows(), dk), gk(kv.rows(), dk), gv(vv.rows(), dv);
        std::vector<double> ds(w.cols());
        for (std::size_t b = 0, r0 = 0, k0 = 0; b < qb.size(); r0 += qb[b], k0 += kb[b], ++b) {
          const std::size_t m = kb[b];
          for (std::size_t r = r0; r < r0 + qb[b]; ++r) {
            const auto gr = g.row_span(r);
            double dot = 0.0;
            for (std::size_t j = 0; j < m; ++j) {
              const auto vr = vv.row_span(k0 + j);
              double dp = 0.0;
              for (std::size_t c = 0; c < dv; ++c) dp += gr[c] * vr[c];
              ds[j] = dp;
              dot += dp * w(r, j);
            }
            const auto qr = qv.row_span(r);
            auto gqr = gq.row_span(r);
            for (std::size_t j = 0; j < m; ++j) {
              const double p = w(r, j);
              auto gvr = gv.row_span(k0 + j);
              for (std::size_t c = 0; c < dv; ++c) gvr[c] += p * gr[c];
              const double s = p * (ds[j] - dot) * scale;
              const auto kr = kv.row_span(k0 + j);
              auto gkr = gk.row_span(k0 + j);
              for (std::size_t c = 0; c < dk; ++c) {
                gqr[c] += s * kr[c];
                gkr[c] += s * qr[c];
              }
            }
          }
        }
        if (tp.requires_grad(iq)) tp.accumulate(iq, gq);
        if (tp.requires_grad(ik)) tp.accumulate(ik, gk);
        if (tp.requires_grad(iv)) tp.accumulate(iv, gv);
      });
  return {output, std::move(weights)};
}

}  // namespace mrb::ad
