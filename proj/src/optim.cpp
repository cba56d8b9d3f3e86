// SPDX-License-Identifier: Apache-2.0

#include "fusetrack/optim.hpp"

#include <algorithm>
#include <cmath>

namespace fusetrack {

bool ParameterSet::add(std::string name, Tensor value, ParamGroup group) {
  for (const auto& p : items_) {
    if (p.value.same_storage(value)) return false;
    if (p.name == name) throw ContractError("duplicate parameter name '" + name + "'");
  }
  value.set_requires_grad(true);
  items_.push_back({std::move(name), std::move(value), group});
  return true;
}

const Parameter* ParameterSet::find(const std::string& name) const {
  auto it = std::find_if(items_.begin(), items_.end(), [&](const Parameter& p) { return p.name == name; });
  return it == items_.end() ? nullptr : &*it;
}

std::size_t ParameterSet::element_count() const {
  std::size_t n = 0;
  for (const auto& p : items_) n += p.value.size();
  return n;
}

void ParameterSet::zero_grad() {
  for (auto& p : items_) p.value.zero_grad();
}

AdamW::AdamW(AdamWConfig config, const ParameterSet& params) : config_(config) {
  for (const auto& p : params.items()) {
    m_.emplace_back(p.value.size(), 0.0);
    v_.emplace_back(p.value.size(), 0.0);
  }
}

void AdamW::step(ParameterSet& params) {
  if (params.size() != m_.size()) throw ContractError("AdamW: parameter set changed since construction");
  for (const auto& p : params.items()) {
    if (!p.value.has_grad()) throw ContractError("AdamW: parameter '" + p.name + "' has no gradient");
  }
  ++step_count_;
  const double t = static_cast<double>(step_count_);
  const double bc1 = 1.0 - std::pow(config_.beta1, t);
  const double bc2 = 1.0 - std::pow(config_.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params.items()[i];
    const double lr = lr_scale_ * (p.group == ParamGroup::backbone ? config_.lr_backbone : config_.lr_other);
    auto w = p.value.mutable_data();
    auto g = p.value.grad();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = config_.beta1 * m[j] + (1.0 - config_.beta1) * g[j];
      v[j] = config_.beta2 * v[j] + (1.0 - config_.beta2) * g[j] * g[j];
      w[j] *= 1.0 - lr * config_.weight_decay;
      w[j] -= lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + config_.epsilon);
    }
  }
}

}  // namespace fusetrack
