#pragma once

#include <cstddef>
#include <memory>
#include <string>
#include <vector>

#include "msgt/rng.hpp"
#include "msgt/tensor.hpp"

namespace msgt {

/// A named trainable tensor with its gradient accumulator.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  bool trainable = true;

  void zero_grad() { grad = Tensor(value.shape(), 0.0); }
};

/// Owns parameters in registration order. Addresses are stable for the
/// lifetime of the store, so layers hold plain pointers into it.
class ParameterStore {
 public:
  ParameterStore() = default;
  ParameterStore(const ParameterStore&) = delete;
  ParameterStore& operator=(const ParameterStore&) = delete;
  ParameterStore(ParameterStore&&) noexcept = default;
  ParameterStore& operator=(ParameterStore&&) noexcept = default;

  Parameter& add(std::string name, Tensor value);
  Parameter* find(const std::string& name) noexcept;
  const Parameter* find(const std::string& name) const noexcept;
  Parameter& at(const std::string& name);
  const Parameter& at(const std::string& name) const;

  std::size_t size() const noexcept { return params_.size(); }
  std::size_t scalar_count() const noexcept;

  void zero_grad();

  auto begin() noexcept { return params_.begin(); }
  auto end() noexcept { return params_.end(); }
  auto begin() const noexcept { return params_.begin(); }
  auto end() const noexcept { return params_.end(); }

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
};

/// uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) for a fan_in x fan_out weight.
Tensor init_affine_weight(std::size_t fan_in, std::size_t fan_out, Rng& rng);

}  // namespace msgt
