#pragma once

#include <string>
#include <vector>

#include "softpose/rng.hpp"
#include "softpose/tensor.hpp"

namespace softpose {

// Persistent trainable buffer. Lives across tapes; each forward pass binds it
// to a fresh leaf and backward results are accumulated into `grad`.
struct Parameter {
  std::string name;
  TensorData data;
  std::vector<double> grad;
  bool trainable = true;
};

// Ordered parameter registry. The order is stable and defines both the
// checkpoint layout and the optimizer state indexing.
class ParameterSet {
 public:
  int add(std::string name, Shape shape, std::vector<double> init, bool trainable = true) {
    Parameter p;
    p.name = std::move(name);
    p.data = TensorData(std::move(shape), std::move(init));
    p.grad.assign(p.data.size(), 0.0);
    p.trainable = trainable;
    params_.push_back(std::move(p));
    return static_cast<int>(params_.size()) - 1;
  }

  int add_trunc_normal(std::string name, Shape shape, double stddev, Rng& rng) {
    std::vector<double> v(numel(shape));
    for (double& w : v) w = rng.truncated_normal(stddev);
    return add(std::move(name), std::move(shape), std::move(v));
  }

  int add_zeros(std::string name, Shape shape, bool trainable = true) {
    return add(std::move(name), shape, std::vector<double>(numel(shape), 0.0), trainable);
  }

  int add_full(std::string name, Shape shape, double fill, bool trainable = true) {
    return add(std::move(name), shape, std::vector<double>(numel(shape), fill), trainable);
  }

  Parameter& at(int idx) { return params_[static_cast<std::size_t>(idx)]; }
  const Parameter& at(int idx) const { return params_[static_cast<std::size_t>(idx)]; }
  std::size_t size() const { return params_.size(); }

  std::vector<Parameter>& all() { return params_; }
  const std::vector<Parameter>& all() const { return params_; }

  // Binds every parameter as a leaf on `tape`. Index i of the result
  // corresponds to parameter i.
  std::vector<Tensor> bind(Tape& tape, bool trainable_grads = true) const {
    std::vector<Tensor> leaves;
    leaves.reserve(params_.size());
    for (const Parameter& p : params_)
      leaves.push_back(tape.leaf(p.data, trainable_grads && p.trainable));
    return leaves;
  }

  void zero_grads() {
    for (Parameter& p : params_) std::fill(p.grad.begin(), p.grad.end(), 0.0);
  }

  // Adds the bound leaves' gradients into the parameter grads.
  void accumulate_grads(const Tape& tape, const std::vector<Tensor>& bound) {
    for (std::size_t i = 0; i < params_.size(); ++i) {
      if (!params_[i].trainable) continue;
      const std::vector<double> g = tape.gradient(bound[i]);
      for (std::size_t j = 0; j < g.size(); ++j) params_[i].grad[j] += g[j];
    }
  }

 private:
  std::vector<Parameter> params_;
};

}  // namespace softpose
