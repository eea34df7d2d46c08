#include "msgt/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace msgt {

namespace {

void require_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2)
    throw std::invalid_argument(std::string(op) + ": expected rank-2 tensor, got " + t.shape_string());
}

std::size_t broadcast_dim(std::size_t a, std::size_t b, const char* op) {
  if (a == b || b == 1) return a;
  if (a == 1) return b;
  throw std::invalid_argument(std::string(op) + ": incompatible dimensions " + std::to_string(a) +
                              " and " + std::to_string(b));
}

inline std::size_t bindex(const Tensor& t, std::size_t r, std::size_t c) {
  const std::size_t tr = t.shape()[0] == 1 ? 0 : r;
  const std::size_t tc = t.shape()[1] == 1 ? 0 : c;
  return tr * t.shape()[1] + tc;
}

// Sums g (rows x cols) down to the (possibly broadcast) shape of target.
Tensor reduce_to(const Tensor& g, const Tensor& target) {
  if (g.same_shape(target)) return g;
  Tensor out(target.shape(), 0.0);
  for (std::size_t r = 0; r < g.rows(); ++r)
    for (std::size_t c = 0; c < g.cols(); ++c) out[bindex(out, r, c)] += g(r, c);
  return out;
}

template <typename F>
Tensor broadcast_apply(const Tensor& a, const Tensor& b, const char* op, F f) {
  require_rank2(a, op);
  require_rank2(b, op);
  const std::size_t rows = broadcast_dim(a.rows(), b.rows(), op);
  const std::size_t cols = broadcast_dim(a.cols(), b.cols(), op);
  Tensor out = Tensor::matrix(rows, cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out(r, c) = f(a[bindex(a, r, c)], b[bindex(b, r, c)]);
  return out;
}

template <typename F>
Tensor map_values(const Tensor& a, F f) {
  Tensor out(a.shape(), 0.0);
  auto src = a.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = f(src[i]);
  return out;
}

// Unary op whose derivative depends only on (input, output).
template <typename F, typename D>
Var unary(const char* name, Var a, F f, D df) {
  Tensor out = map_values(a.value(), f);
  const std::size_t ia = a.id();
  return a.tape().record(name, std::move(out), {a}, [ia, df](Tape& t, const Tensor& g, const Tensor& y) {
    const Tensor& x = t.value(ia);
    Tensor gi(x.shape(), 0.0);
    for (std::size_t i = 0; i < x.numel(); ++i) gi[i] = g[i] * df(x[i], y[i]);
    t.accumulate(ia, gi);
  });
}

Tensor transpose_value(const Tensor& a) {
  Tensor out = Tensor::matrix(a.cols(), a.rows());
  for (std::size_t r = 0; r < a.rows(); ++r)
    for (std::size_t c = 0; c < a.cols(); ++c) out(c, r) = a(r, c);
  return out;
}

}  // namespace

double sigmoid(double x) noexcept {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  if (a.cols() != b.rows())
    throw std::invalid_argument("matmul: shape mismatch " + a.shape_string() + " x " + b.shape_string());
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  Tensor out = Tensor::matrix(n, m);
  for (std::size_t i = 0; i < n; ++i) {
    auto orow = out.row_span(i);
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a(i, p);
      if (av == 0.0) continue;
      auto brow = b.row_span(p);
      for (std::size_t j = 0; j < m; ++j) orow[j] += av * brow[j];
    }
  }
  return out;
}

Tensor softmax_rows(const Tensor& m) {
  require_rank2(m, "softmax_rows");
  if (!m.all_finite()) throw std::domain_error("non-finite logits");
  Tensor out(m.shape(), 0.0);
  for (std::size_t r = 0; r < m.rows(); ++r) {
    auto in = m.row_span(r);
    auto o = out.row_span(r);
    const double mx = *std::max_element(in.begin(), in.end());
    double total = 0.0;
    for (std::size_t c = 0; c < in.size(); ++c) {
      o[c] = std::exp(in[c] - mx);
      total += o[c];
    }
    for (auto& v : o) v /= total;
  }
  return out;
}

Var add(Var a, Var b) {
  Tensor out = broadcast_apply(a.value(), b.value(), "add", [](double x, double y) { return x + y; });
  const auto ia = a.id(), ib = b.id();
  return a.tape().record("add", std::move(out), {a, b}, [ia, ib](Tape& t, const Tensor& g, const Tensor&) {
    t.accumulate(ia, reduce_to(g, t.value(ia)));
    t.accumulate(ib, reduce_to(g, t.value(ib)));
  });
}

Var sub(Var a, Var b) {
  Tensor out = broadcast_apply(a.value(), b.value(), "sub", [](double x, double y) { return x - y; });
  const auto ia = a.id(), ib = b.id();
  return a.tape().record("sub", std::move(out), {a, b}, [ia, ib](Tape& t, const Tensor& g, const Tensor&) {
    t.accumulate(ia, reduce_to(g, t.value(ia)));
    Tensor neg = g;
    for (auto& v : neg.data()) v = -v;
    t.accumulate(ib, reduce_to(neg, t.value(ib)));
  });
}

Var mul(Var a, Var b) {
  Tensor out = broadcast_apply(a.value(), b.value(), "mul", [](double x, double y) { return x * y; });
  const auto ia = a.id(), ib = b.id();
  return a.tape().record("mul", std::move(out), {a, b}, [ia, ib](Tape& t, const Tensor& g, const Tensor&) {
    const Tensor& av = t.value(ia);
    const Tensor& bv = t.value(ib);
    if (t.requires_grad(ia)) {
      Tensor ga(g.shape(), 0.0);
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t c = 0; c < g.cols(); ++c) ga(r, c) = g(r, c) * bv[bindex(bv, r, c)];
      t.accumulate(ia, reduce_to(ga, av));
    }
    if (t.requires_grad(ib)) {
      Tensor gb(g.shape(), 0.0);
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t c = 0; c < g.cols(); ++c) gb(r, c) = g(r, c) * av[bindex(av, r, c)];
      t.accumulate(ib, reduce_to(gb, bv));
    }
  });
}

Var scale(Var a, double factor) {
  Tensor out = map_values(a.value(), [factor](double x) { return x * factor; });
  const auto ia = a.id();
  return a.tape().record("scale", std::move(out), {a}, [ia, factor](Tape& t, const Tensor& g, const Tensor&) {
    t.accumulate(ia, map_values(g, [factor](double x) { return x * factor; }));
  });
}

Var add_scalar(Var a, double c) {
  Tensor out = map_values(a.value(), [c](double x) { return x + c; });
  const auto ia = a.id();
  return a.tape().record("add_scalar", std::move(out), {a},
                         [ia](Tape& t, const Tensor& g, const Tensor&) { t.accumulate(ia, g); });
}

Var matmul(Var a, Var b) {
  Tensor out = matmul(a.value(), b.value());
  const auto ia = a.id(), ib = b.id();
  return a.tape().record("matmul", std::move(out), {a, b}, [ia, ib](Tape& t, const Tensor& g, const Tensor&) {
    if (t.requires_grad(ia)) t.accumulate(ia, matmul(g, transpose_value(t.value(ib))));
    if (t.requires_grad(ib)) t.accumulate(ib, matmul(transpose_value(t.value(ia)), g));
  });
}

Var transpose(Var a) {
  require_rank2(a.value(), "transpose");
  const auto ia = a.id();
  return a.tape().record("transpose", transpose_value(a.value()), {a},
                         [ia](Tape& t, const Tensor& g, const Tensor&) { t.accumulate(ia, transpose_value(g)); });
}

Var sigmoid(Var a) {
  return unary(
      "sigmoid", a, [](double x) { return sigmoid(x); },
      [](double, double y) { return y * (1.0 - y); });
}

Var gelu(Var a) {
  // tanh approximation
  constexpr double k = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double c = 0.044715;
  return unary(
      "gelu", a,
      [](double x) { return 0.5 * x * (1.0 + std::tanh(k * (x + c * x * x * x))); },
      [](double x, double) {
        const double u = k * (x + c * x * x * x);
        const double th = std::tanh(u);
        const double du = k * (1.0 + 3.0 * c * x * x);
        return 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du;
      });
}

Var relu(Var a) {
  return unary(
      "relu", a, [](double x) { return x > 0 ? x : 0.0; },
      [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

Var square(Var a) {
  return unary(
      "square", a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var abs(Var a) {
  return unary(
      "abs", a, [](double x) { return std::fabs(x); },
      [](double x, double) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); });
}

Var logit(Var p, double eps) {
  return unary(
      "logit", p,
      [eps](double x) {
        const double q = std::clamp(x, eps, 1.0 - eps);
        return std::log(q / (1.0 - q));
      },
      [eps](double x, double) {
        if (x < eps || x > 1.0 - eps) return 0.0;
        return 1.0 / (x * (1.0 - x));
      });
}

Var sum(Var a) {
  double total = 0.0;
  for (double v : a.value().data()) total += v;
  const auto ia = a.id();
  return a.tape().record("sum", Tensor::scalar(total), {a}, [ia](Tape& t, const Tensor& g, const Tensor&) {
    t.accumulate(ia, Tensor(t.value(ia).shape(), g[0]));
  });
}

Var mean(Var a) {
  const double n = static_cast<double>(a.value().numel());
  if (n == 0) throw std::invalid_argument("mean of empty tensor");
  double total = 0.0;
  for (double v : a.value().data()) total += v;
  const auto ia = a.id();
  return a.tape().record("mean", Tensor::scalar(total / n), {a}, [ia, n](Tape& t, const Tensor& g, const Tensor&) {
    t.accumulate(ia, Tensor(t.value(ia).shape(), g[0] / n));
  });
}

Var mean_rows(Var a) {
  const Tensor& v = a.value();
  require_rank2(v, "mean_rows");
  if (v.rows() == 0) throw std::invalid_argument("mean_rows of empty matrix");
  Tensor out = Tensor::matrix(1, v.cols());
  for (std::size_t r = 0; r < v.rows(); ++r)
    for (std::size_t c = 0; c < v.cols(); ++c) out(0, c) += v(r, c);
  const double n = static_cast<double>(v.rows());
  for (auto& x : out.data()) x /= n;
  const auto ia = a.id();
  return a.tape().record("mean_rows", std::move(out), {a}, [ia, n](Tape& t, const Tensor& g, const Tensor&) {
    const Tensor& x = t.value(ia);
    Tensor gi(x.shape(), 0.0);
    for (std::size_t r = 0; r < x.rows(); ++r)
      for (std::size_t c = 0; c < x.cols(); ++c) gi(r, c) = g(0, c) / n;
    t.accumulate(ia, gi);
  });
}

Var max_rows(Var a) {
  const Tensor& v = a.value();
  require_rank2(v, "max_rows");
  if (v.rows() == 0) throw std::invalid_argument("max_rows of empty matrix");
  Tensor out = Tensor::matrix(1, v.cols());
  std::vector<std::size_t> arg(v.cols(), 0);
  for (std::size_t c = 0; c < v.cols(); ++c) {
    out(0, c) = v(0, c);
    for (std::size_t r = 1; r < v.rows(); ++r)
      if (v(r, c) > out(0, c)) {
        out(0, c) = v(r, c);
        arg[c] = r;
      }
  }
  const auto ia = a.id();
  return a.tape().record("max_rows", std::move(out), {a}, [ia, arg](Tape& t, const Tensor& g, const Tensor&) {
    Tensor gi(t.value(ia).shape(), 0.0);
    for (std::size_t c = 0; c < arg.size(); ++c) gi(arg[c], c) = g(0, c);
    t.accumulate(ia, gi);
  });
}

Var softmax_rows(Var a) {
  Tensor out = softmax_rows(a.value());
  const auto ia = a.id();
  return a.tape().record("softmax_rows", std::move(out), {a}, [ia](Tape& t, const Tensor& g, const Tensor& y) {
    Tensor gi(y.shape(), 0.0);
    for (std::size_t r = 0; r < y.rows(); ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < y.cols(); ++c) dot += g(r, c) * y(r, c);
      for (std::size_t c = 0; c < y.cols(); ++c) gi(r, c) = y(r, c) * (g(r, c) - dot);
    }
    t.accumulate(ia, gi);
  });
}

Var layer_norm_rows(Var x, Var gamma, Var beta, double eps) {
  const Tensor& xv = x.value();
  require_rank2(xv, "layer_norm_rows");
  const std::size_t n = xv.rows(), m = xv.cols();
  if (gamma.value().numel() != m || beta.value().numel() != m)
    throw std::invalid_argument("layer_norm_rows: gain/bias width mismatch");
  Tensor xhat(xv.shape(), 0.0);
  std::vector<double> inv_std(n);
  for (std::size_t r = 0; r < n; ++r) {
    double mu = 0.0;
    for (std::size_t c = 0; c < m; ++c) mu += xv(r, c);
    mu /= static_cast<double>(m);
    double var = 0.0;
    for (std::size_t c = 0; c < m; ++c) var += (xv(r, c) - mu) * (xv(r, c) - mu);
    var /= static_cast<double>(m);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < m; ++c) xhat(r, c) = (xv(r, c) - mu) * inv_std[r];
  }
  const Tensor& gv = gamma.value();
  const Tensor& bv = beta.value();
  Tensor out(xv.shape(), 0.0);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < m; ++c) out(r, c) = xhat(r, c) * gv[c] + bv[c];

  const auto ix = x.id(), ig = gamma.id(), ib = beta.id();
  return x.tape().record(
      "layer_norm", std::move(out), {x, gamma, beta},
      [ix, ig, ib, xhat, inv_std, n, m](Tape& t, const Tensor& g, const Tensor&) {
        const Tensor& gv = t.value(ig);
        if (t.requires_grad(ig) || t.requires_grad(ib)) {
          Tensor gg(t.value(ig).shape(), 0.0);
          Tensor gb(t.value(ib).shape(), 0.0);
          for (std::size_t r = 0; r < n; ++r)
            for (std::size_t c = 0; c < m; ++c) {
              gg[c] += g(r, c) * xhat(r, c);
              gb[c] += g(r, c);
            }
          t.accumulate(ig, gg);
          t.accumulate(ib, gb);
        }
        if (!t.requires_grad(ix)) return;
        Tensor gx = Tensor::matrix(n, m);
        const double md = static_cast<double>(m);
        for (std::size_t r = 0; r < n; ++r) {
          double sum_d = 0.0, sum_dx = 0.0;
          for (std::size_t c = 0; c < m; ++c) {
            const double d = g(r, c) * gv[c];
            sum_d += d;
            sum_dx += d * xhat(r, c);
          }
          for (std::size_t c = 0; c < m; ++c) {
            const double d = g(r, c) * gv[c];
            gx(r, c) = inv_std[r] * (d - sum_d / md - xhat(r, c) * sum_dx / md);
          }
        }
        t.accumulate(ix, gx);
      });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols of nothing");
  const std::size_t n = parts[0].rows();
  std::size_t total = 0;
  std::vector<std::size_t> widths;
  for (const auto& p : parts) {
    if (p.rows() != n) throw std::invalid_argument("concat_cols: row-count mismatch");
    widths.push_back(p.cols());
    total += p.cols();
  }
  Tensor out = Tensor::matrix(n, total);
  std::size_t off = 0;
  for (const auto& p : parts) {
    const Tensor& v = p.value();
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < v.cols(); ++c) out(r, off + c) = v(r, c);
    off += v.cols();
  }
  std::vector<std::size_t> ids;
  for (const auto& p : parts) ids.push_back(p.id());
  return parts[0].tape().record("concat_cols", std::move(out), parts,
                                [ids, widths, n](Tape& t, const Tensor& g, const Tensor&) {
                                  std::size_t off = 0;
                                  for (std::size_t k = 0; k < ids.size(); ++k) {
                                    Tensor gi = Tensor::matrix(n, widths[k]);
                                    for (std::size_t r = 0; r < n; ++r)
                                      for (std::size_t c = 0; c < widths[k]; ++c)
                                        gi(r, c) = g(r, off + c);
                                    t.accumulate(ids[k], gi);
                                    off += widths[k];
                                  }
                                });
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows of nothing");
  const std::size_t m = parts[0].cols();
  std::vector<double> data;
  std::vector<std::size_t> heights;
  for (const auto& p : parts) {
    if (p.cols() != m) throw std::invalid_argument("concat_rows: column-count mismatch");
    heights.push_back(p.rows());
    data.insert(data.end(), p.value().data().begin(), p.value().data().end());
  }
  const std::size_t n = data.size() / std::max<std::size_t>(m, 1);
  std::vector<std::size_t> ids;
  for (const auto& p : parts) ids.push_back(p.id());
  return parts[0].tape().record("concat_rows", Tensor({n, m}, std::move(data)), parts,
                                [ids, heights, m](Tape& t, const Tensor& g, const Tensor&) {
                                  std::size_t off = 0;
                                  for (std::size_t k = 0; k < ids.size(); ++k) {
                                    Tensor gi = Tensor::matrix(heights[k], m);
                                    std::copy_n(g.data().begin() + off * m, heights[k] * m,
                                                gi.data().begin());
                                    t.accumulate(ids[k], gi);
                                    off += heights[k];
                                  }
                                });
}

Var slice_cols(Var a, std::size_t begin, std::size_t end) {
  const Tensor& v = a.value();
  if (begin > end || end > v.cols()) throw std::invalid_argument("slice_cols: range out of bounds");
  const std::size_t n = v.rows(), w = end - begin;
  Tensor out = Tensor::matrix(n, w);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < w; ++c) out(r, c) = v(r, begin + c);
  const auto ia = a.id();
  return a.tape().record("slice_cols", std::move(out), {a}, [ia, begin, w, n](Tape& t, const Tensor& g, const Tensor&) {
    Tensor gi(t.value(ia).shape(), 0.0);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < w; ++c) gi(r, begin + c) = g(r, c);
    t.accumulate(ia, gi);
  });
}

Var gather_rows(Var a, const std::vector<std::size_t>& rows) {
  const Tensor& v = a.value();
  const std::size_t m = v.cols();
  Tensor out = Tensor::matrix(rows.size(), m);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= v.rows()) throw std::invalid_argument("gather_rows: index out of range");
    for (std::size_t c = 0; c < m; ++c) out(i, c) = v(rows[i], c);
  }
  const auto ia = a.id();
  return a.tape().record("gather_rows", std::move(out), {a}, [ia, rows, m](Tape& t, const Tensor& g, const Tensor&) {
    Tensor gi(t.value(ia).shape(), 0.0);
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (std::size_t c = 0; c < m; ++c) gi(rows[i], c) += g(i, c);
    t.accumulate(ia, gi);
  });
}

Var bucket_gather(Var table, const std::vector<std::size_t>& index, std::size_t n, std::size_t column) {
  const Tensor& tv = table.value();
  if (index.size() != n * n) throw std::invalid_argument("bucket_gather: index grid is not n x n");
  if (column >= tv.cols()) throw std::invalid_argument("bucket_gather: column out of range");
  Tensor out = Tensor::matrix(n, n);
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= tv.rows()) throw std::invalid_argument("bucket_gather: bucket out of range");
    out[i] = tv(index[i], column);
  }
  const auto it = table.id();
  return table.tape().record("bucket_gather", std::move(out), {table},
                             [it, index, column](Tape& t, const Tensor& g, const Tensor&) {
                               Tensor gi(t.value(it).shape(), 0.0);
                               for (std::size_t i = 0; i < index.size(); ++i) gi(index[i], column) += g[i];
                               t.accumulate(it, gi);
                             });
}

Var overwrite(Var a, const std::map<std::size_t, double>& values) {
  Tensor out = a.value();
  for (const auto& [i, v] : values) {
    if (i >= out.numel()) throw std::out_of_range("overwrite index " + std::to_string(i) + " out of range");
    out[i] = v;
  }
  const auto ia = a.id();
  return a.tape().record("overwrite", std::move(out), {a}, [ia, values](Tape& t, const Tensor& g, const Tensor&) {
    Tensor gi = g;
    for (const auto& [i, v] : values) gi[i] = 0.0;
    t.accumulate(ia, gi);
  });
}

Var stop_gradient(Var a) { return a.tape().constant(a.value()); }

Var softmax_cross_entropy(Var logits, std::size_t target) {
  const Tensor& z = logits.value();
  if (z.rows() != 1 || target >= z.cols())
    throw std::invalid_argument("softmax_cross_entropy: expects 1 x C logits and target < C");
  Tensor p = softmax_rows(z);
  const double loss = -std::log(std::max(p(0, target), 1e-300));
  const auto il = logits.id();
  return logits.tape().record("softmax_xent", Tensor::scalar(loss), {logits},
                              [il, p, target](Tape& t, const Tensor& g, const Tensor&) {
                                Tensor gi = p;
                                gi(0, target) -= 1.0;
                                for (auto& v : gi.data()) v *= g[0];
                                t.accumulate(il, gi);
                              });
}

Var bce_with_logits(Var logits, const Tensor& targets) {
  const Tensor& z = logits.value();
  if (!z.same_shape(targets)) throw std::invalid_argument("bce_with_logits: target shape mismatch");
  const double n = static_cast<double>(z.numel());
  double loss = 0.0;
  for (std::size_t i = 0; i < z.numel(); ++i) {
    const double x = z[i];
    // max(x,0) - x*y + log(1 + exp(-|x|))
    loss += std::max(x, 0.0) - x * targets[i] + std::log1p(std::exp(-std::fabs(x)));
  }
  const auto il = logits.id();
  return logits.tape().record("bce_logits", Tensor::scalar(loss / n), {logits},
                              [il, targets, n](Tape& t, const Tensor& g, const Tensor&) {
                                const Tensor& z = t.value(il);
                                Tensor gi(z.shape(), 0.0);
                                for (std::size_t i = 0; i < z.numel(); ++i)
                                  gi[i] = g[0] * (sigmoid(z[i]) - targets[i]) / n;
                                t.accumulate(il, gi);
                              });
}

}  // namespace msgt
