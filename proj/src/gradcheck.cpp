#include "msgt/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace msgt {

namespace {

double relative_error(double analytic, double numeric) {
  return std::fabs(analytic - numeric) / std::max(1.0, std::fabs(numeric));
}

}  // namespace

double finite_diff_check(const TensorToScalar& f, const Tensor& x, double eps) {
  if (!(eps > 0)) throw std::invalid_argument("finite_diff_check: eps must be positive");
  Tensor analytic;
  {
    Tape tape;
    Var xv = tape.input(x);
    Var loss = f(tape, xv);
    tape.backward(loss);
    analytic = tape.grad(xv);
  }
  auto eval = [&](const Tensor& at) {
    Tape tape;
    return f(tape, tape.input(at)).value().item();
  };
  double worst = 0.0;
  Tensor probe = x;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + eps;
    const double up = eval(probe);
    probe[i] = orig - eps;
    const double down = eval(probe);
    probe[i] = orig;
    worst = std::max(worst, relative_error(analytic[i], (up - down) / (2.0 * eps)));
  }
  return worst;
}

double finite_diff_check(const ParamsToScalar& f, ParameterStore& params, double eps) {
  if (!(eps > 0)) throw std::invalid_argument("finite_diff_check: eps must be positive");
  params.zero_grad();
  {
    Tape tape;
    tape.backward(f(tape));
  }
  auto eval = [&] {
    Tape tape;
    return f(tape).value().item();
  };
  double worst = 0.0;
  for (auto& p : params) {
    if (!p->trainable) continue;
    const Tensor analytic = p->grad;
    for (std::size_t i = 0; i < p->value.numel(); ++i) {
      const double orig = p->value[i];
      p->value[i] = orig + eps;
      const double up = eval();
      p->value[i] = orig - eps;
      const double down = eval();
      p->value[i] = orig;
      worst = std::max(worst, relative_error(analytic[i], (up - down) / (2.0 * eps)));
    }
  }
  params.zero_grad();
  return worst;
}

}  // namespace msgt
