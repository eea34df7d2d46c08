#pragma once

#include <cstddef>
#include <map>
#include <vector>

#include "msgt/tape.hpp"
#include "msgt/tensor.hpp"

namespace msgt {

// Value-level helpers (no tape).
Tensor softmax_rows(const Tensor& m);
Tensor matmul(const Tensor& a, const Tensor& b);
double sigmoid(double x) noexcept;

// Elementwise binary ops broadcast each operand along a dimension of size 1
// (full, 1 x m row, n x 1 column or 1 x 1).
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);

Var scale(Var a, double factor);
Var add_scalar(Var a, double c);
Var matmul(Var a, Var b);
Var transpose(Var a);

Var sigmoid(Var a);
Var gelu(Var a);
Var relu(Var a);
Var square(Var a);
Var abs(Var a);
/// log(p / (1 - p)) with p clipped to [eps, 1 - eps].
Var logit(Var p, double eps = 1e-12);

Var sum(Var a);
Var mean(Var a);
/// Column-wise mean over rows: n x m -> 1 x m.
Var mean_rows(Var a);
/// Column-wise max over rows: n x m -> 1 x m; gradient routed to the first maximum.
Var max_rows(Var a);

/// Row-wise softmax with max subtraction. Throws std::domain_error
/// "non-finite logits" on non-finite input.
Var softmax_rows(Var a);
Var layer_norm_rows(Var x, Var gamma, Var beta, double eps = 1e-5);

Var concat_cols(const std::vector<Var>& parts);
Var concat_rows(const std::vector<Var>& parts);
Var slice_cols(Var a, std::size_t begin, std::size_t end);
Var gather_rows(Var a, const std::vector<std::size_t>& rows);

/// out(i, j) = table(index[i*n + j], column) for an n x n index grid.
Var bucket_gather(Var table, const std::vector<std::size_t>& index, std::size_t n,
                  std::size_t column);

/// Replaces flat positions with constants. Overwritten positions pass no
/// gradient back to a.
Var overwrite(Var a, const std::map<std::size_t, double>& values);
Var stop_gradient(Var a);

/// Mean softmax cross-entropy of a 1 x C logit row against a class index.
Var softmax_cross_entropy(Var logits, std::size_t target);
/// Mean binary cross-entropy with logits over all entries.
Var bce_with_logits(Var logits, const Tensor& targets);

}  // namespace msgt
