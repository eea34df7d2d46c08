#include "msgt/tape.hpp"

#include <stdexcept>

namespace msgt {

namespace {

void add_into(Tensor& dst, const Tensor& src) {
  if (dst.empty() && !src.empty()) {
    dst = src;
    return;
  }
  if (!dst.same_shape(src))
    throw std::logic_error("gradient shape " + src.shape_string() + " does not match " +
                           dst.shape_string());
  auto d = dst.data();
  auto s = src.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

}  // namespace

const Tensor& Var::value() const { return tape_->value(id_); }

Var Tape::constant(Tensor value) {
  OpRecord rec;
  rec.op = "const";
  rec.value = std::move(value);
  rec.leaf = true;
  records_.push_back(std::move(rec));
  return Var(this, records_.size() - 1);
}

Var Tape::input(Tensor value) {
  OpRecord rec;
  rec.op = "input";
  rec.value = std::move(value);
  rec.leaf = true;
  rec.requires_grad = true;
  records_.push_back(std::move(rec));
  return Var(this, records_.size() - 1);
}

Var Tape::param(Parameter& p) {
  if (auto it = param_ids_.find(&p); it != param_ids_.end()) return Var(this, it->second);
  OpRecord rec;
  rec.op = "param:" + p.name;
  rec.value = p.value;
  rec.leaf = true;
  rec.requires_grad = p.trainable;
  rec.param = &p;
  records_.push_back(std::move(rec));
  param_ids_.emplace(&p, records_.size() - 1);
  return Var(this, records_.size() - 1);
}

Var Tape::record(std::string op, Tensor value, const std::vector<Var>& inputs, BackwardFn fn) {
  OpRecord rec;
  rec.op = std::move(op);
  rec.value = std::move(value);
  rec.backward = std::move(fn);
  for (const auto& in : inputs) {
    if (&in.tape() != this) throw std::invalid_argument("op '" + rec.op + "' mixes tapes");
    rec.inputs.push_back(in.id());
    rec.requires_grad = rec.requires_grad || records_[in.id()].requires_grad;
  }
  records_.push_back(std::move(rec));
  return Var(this, records_.size() - 1);
}

void Tape::accumulate(std::size_t id, const Tensor& g) {
  auto& rec = records_.at(id);
  if (!rec.requires_grad) return;
  add_into(rec.grad, g);
}

void Tape::backward(Var loss) {
  if (&loss.tape() != this) throw std::invalid_argument("loss belongs to another tape");
  if (loss.value().numel() != 1)
    throw std::invalid_argument("backward requires a scalar loss, got shape " +
                                loss.value().shape_string());
  for (auto& rec : records_) rec.grad = Tensor();
  if (!records_[loss.id()].requires_grad) return;
  records_[loss.id()].grad = Tensor(loss.value().shape(), 1.0);

  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    auto& rec = records_[i];
    if (!rec.requires_grad || rec.grad.empty()) continue;
    if (rec.leaf) {
      if (rec.param != nullptr)
        add_into(rec.param->grad, rec.grad);
      else
        add_into(rec.leaf_grad, rec.grad);
      continue;
    }
    // The closure may push into earlier records, which never reallocates
    // records_, so holding a reference to this record's grad is safe.
    rec.backward(*this, rec.grad, rec.value);
  }
}

void Tape::zero_grad() {
  for (auto& rec : records_) {
    rec.grad = Tensor();
    rec.leaf_grad = Tensor();
  }
}

Tensor Tape::grad(Var v) const {
  const auto& rec = records_.at(v.id());
  const Tensor& g = rec.leaf && rec.param == nullptr ? rec.leaf_grad : rec.grad;
  if (g.empty()) return Tensor(rec.value.shape(), 0.0);
  return g;
}

std::string Tape::first_non_finite_op() const {
  for (const auto& rec : records_)
    if (!rec.value.all_finite()) return rec.op;
  return {};
}

}  // namespace msgt
