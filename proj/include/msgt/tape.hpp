#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <deque>
#include <unordered_map>
#include <vector>

#include "msgt/parameter.hpp"
#include "msgt/tensor.hpp"

namespace msgt {

class Tape;

/// Handle to one value recorded on a Tape. Cheap to copy; only valid while
/// its tape is alive.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) noexcept : tape_(tape), id_(id) {}

  const Tensor& value() const;
  Tape& tape() const { return *tape_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Receives the gradient of the loss w.r.t. the op's output and pushes
/// contributions to its inputs via Tape::accumulate.
using BackwardFn = std::function<void(Tape&, const Tensor& out_grad, const Tensor& out_value)>;

struct OpRecord {
  std::string op;
  Tensor value;
  Tensor grad;
  Tensor leaf_grad;  // persistent accumulator for input leaves
  std::vector<std::size_t> inputs;
  BackwardFn backward;
  Parameter* param = nullptr;
  bool requires_grad = false;
  bool leaf = false;
};

/// Ordered record of a forward computation. Inputs always precede their
/// consumers, so backward is a single reverse sweep.
///
/// Gradients accumulate: each backward() call adds into Parameter::grad and
/// into input-leaf gradients. Call Tape::zero_grad / ParameterStore::zero_grad
/// explicitly between steps.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var input(Tensor value);
  Var param(Parameter& p);

  Var record(std::string op, Tensor value, const std::vector<Var>& inputs, BackwardFn fn);

  const Tensor& value(std::size_t id) const { return records_.at(id).value; }
  const OpRecord& record_at(std::size_t id) const { return records_.at(id); }
  bool requires_grad(std::size_t id) const { return records_[id].requires_grad; }
  std::size_t size() const noexcept { return records_.size(); }

  /// Adds g into the gradient buffer of id (no-op when id needs no grad).
  void accumulate(std::size_t id, const Tensor& g);

  void backward(Var loss);
  void zero_grad();

  /// Gradient of the last backward sweep(s) w.r.t. v; zeros when none.
  Tensor grad(Var v) const;

  /// Name of the first op whose output is non-finite, or empty.
  std::string first_non_finite_op() const;

 private:
  std::deque<OpRecord> records_;  // deque so value() references survive growth
  std::unordered_map<const Parameter*, std::size_t> param_ids_;
};

inline void backward(Tape& tape, Var loss) { tape.backward(loss); }

}  // namespace msgt
