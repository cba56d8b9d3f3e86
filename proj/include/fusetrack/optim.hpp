// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fusetrack/tensor.hpp"

namespace fusetrack {

// Selects the learning rate a parameter trains with.
enum class ParamGroup { backbone, other };

struct Parameter {
  std::string name;
  Tensor value;
  ParamGroup group = ParamGroup::other;
};

// Ordered, name-unique parameter registry. Aliased tensors (same storage) are
// registered once, under the first name.
class ParameterSet {
 public:
  // Returns false when `value` aliases an already-registered tensor.
  bool add(std::string name, Tensor value, ParamGroup group);
  const std::vector<Parameter>& items() const { return items_; }
  std::vector<Parameter>& items() { return items_; }
  const Parameter* find(const std::string& name) const;
  std::size_t size() const { return items_.size(); }
  std::size_t element_count() const;
  void zero_grad();

 private:
  std::vector<Parameter> items_;
};

struct AdamWConfig {
  double lr_backbone = 4e-5;
  double lr_other = 4e-4;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// AdamW with decoupled weight decay and one learning rate per ParamGroup.
class AdamW {
 public:
  AdamW(AdamWConfig config, const ParameterSet& params);

  // Throws ContractError when any parameter lacks a gradient.
  void step(ParameterSet& params);

  const AdamWConfig& config() const { return config_; }
  std::uint64_t step_count() const { return step_count_; }
  // Moment buffers in parameter-registration order.
  std::vector<std::vector<double>>& first_moments() { return m_; }
  std::vector<std::vector<double>>& second_moments() { return v_; }
  const std::vector<std::vector<double>>& first_moments() const { return m_; }
  const std::vector<std::vector<double>>& second_moments() const { return v_; }
  void set_step_count(std::uint64_t n) { step_count_ = n; }
  // Multiplies both group learning rates (schedules).
  void set_lr_scale(double s) { lr_scale_ = s; }
  double lr_scale() const { return lr_scale_; }

 private:
  AdamWConfig config_;
  std::uint64_t step_count_ = 0;
  double lr_scale_ = 1.0;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
};

}  // namespace fusetrack
