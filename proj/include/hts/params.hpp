#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "hts/error.hpp"
#include "hts/rng.hpp"
#include "hts/tensor.hpp"

namespace hts {

// Named trainable arrays plus non-trainable buffers (batch-norm running
// statistics). Names are stable and used as checkpoint keys.
class ParamStore {
 public:
  Tensor& add(const std::string& name, Shape shape, std::vector<double> values) {
    if (params_.count(name)) throw Error("duplicate parameter name '" + name + "'");
    auto [it, inserted] = params_.emplace(name, Tensor::parameter(std::move(shape), std::move(values)));
    return it->second;
  }

  // PyTorch-style default: U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
  Tensor& add_uniform(const std::string& name, Shape shape, std::size_t fan_in, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::vector<double> v(shape_numel(shape));
    for (double& x : v) x = rng.uniform(-bound, bound);
    return add(name, std::move(shape), std::move(v));
  }

  Tensor& add_constant(const std::string& name, Shape shape, double value) {
    const std::size_t n = shape_numel(shape);
    return add(name, std::move(shape), std::vector<double>(n, value));
  }

  std::vector<double>& add_buffer(const std::string& name, std::vector<double> values) {
    auto [it, inserted] = buffers_.emplace(name, std::move(values));
    if (!inserted) throw Error("duplicate buffer name '" + name + "'");
    return it->second;
  }

  const Tensor& param(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw Error("unknown parameter '" + name + "'");
    return it->second;
  }
  Tensor& param(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw Error("unknown parameter '" + name + "'");
    return it->second;
  }
  bool has_param(const std::string& name) const { return params_.count(name) != 0; }

  const std::vector<double>& buffer(const std::string& name) const { return buffers_.at(name); }
  std::vector<double>& buffer(const std::string& name) { return buffers_.at(name); }

  const std::map<std::string, Tensor>& params() const { return params_; }
  std::map<std::string, Tensor>& params() { return params_; }
  const std::map<std::string, std::vector<double>>& buffers() const { return buffers_; }
  std::map<std::string, std::vector<double>>& buffers() { return buffers_; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : params_) n += t.numel();
    return n;
  }

  void zero_grad() {
    for (auto& [name, t] : params_) t.zero_grad();
  }

  // Deep copy: new parameter nodes with identical values.
  ParamStore clone() const {
    ParamStore out;
    for (const auto& [name, t] : params_)
      out.add(name, t.shape(), std::vector<double>(t.data().begin(), t.data().end()));
    out.buffers_ = buffers_;
    return out;
  }

  // FNV-1a over names and raw bytes; used to assert read-only evaluation.
  std::uint64_t fingerprint() const {
    std::uint64_t h = 1469598103934665603ULL;
    auto feed = [&h](const void* p, std::size_t n) {
      const auto* b = static_cast<const unsigned char*>(p);
      for (std::size_t i = 0; i < n; ++i) h = (h ^ b[i]) * 1099511628211ULL;
    };
    for (const auto& [name, t] : params_) {
      feed(name.data(), name.size());
      feed(t.data().data(), t.numel() * sizeof(double));
    }
    for (const auto& [name, b] : buffers_) {
      feed(name.data(), name.size());
      feed(b.data(), b.size() * sizeof(double));
    }
    return h;
  }

 private:
  std::map<std::string, Tensor> params_;
  std::map<std::string, std::vector<double>> buffers_;
};

}  // namespace hts
