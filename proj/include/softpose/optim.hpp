#pragma once

#include <cmath>
#include <vector>

#include "softpose/params.hpp"
#include "softpose/tensor.hpp"

namespace softpose {

// Training schedule: RMSprop at 0.001 for pose, SGD with Nesterov momentum
// 0.98 at 0.0002 for action, decay by 0.2 on validation plateaus, and a
// fine-tune phase at a tenth of the rate.
struct TrainSchedule {
  enum class Optimizer { kRmsProp, kSgdNesterov };
  Optimizer optimizer = Optimizer::kRmsProp;
  double learning_rate = 0.001;
  double plateau_factor = 0.2;
  int plateau_patience = 3;
  double momentum = 0.98;
  std::size_t batch_size = 24;
  double finetune_rate_divisor = 10.0;

  void validate() const {
    if (learning_rate <= 0.0) throw ValueError("TrainSchedule: learning rate must be positive");
    if (plateau_factor <= 0.0 || plateau_factor >= 1.0)
      throw ValueError("TrainSchedule: plateau factor must lie in (0,1)");
  }
};

// theta -= lr * g / (sqrt(acc) + eps), acc = decay*acc + (1-decay)*g^2.
class RmsProp {
 public:
  explicit RmsProp(double learning_rate, double decay = 0.9, double epsilon = 1e-8)
      : lr_(learning_rate), decay_(decay), eps_(epsilon) {}

  void step(ParameterSet& params) {
    ensure_state(params);
    std::size_t off = 0;
    for (Parameter& p : params.all()) {
      if (!p.trainable) continue;
      for (std::size_t j = 0; j < p.data.size(); ++j) {
        const double g = p.grad[j];
        double& acc = acc_[off + j];
        acc = decay_ * acc + (1.0 - decay_) * g * g;
        p.data.values[j] -= lr_ * g / (std::sqrt(acc) + eps_);
      }
      off += p.data.size();
    }
  }

  double& learning_rate() { return lr_; }

 private:
  void ensure_state(const ParameterSet& params) {
    std::size_t total = 0;
    for (const Parameter& p : params.all())
      if (p.trainable) total += p.data.size();
    if (acc_.size() != total) acc_.assign(total, 0.0);
  }

  double lr_, decay_, eps_;
  std::vector<double> acc_;
};

// v = mu*v + g; theta -= lr * (g + mu*v).
class SgdNesterov {
 public:
  explicit SgdNesterov(double learning_rate, double momentum = 0.98)
      : lr_(learning_rate), mu_(momentum) {}

  void step(ParameterSet& params) {
    ensure_state(params);
    std::size_t off = 0;
    for (Parameter& p : params.all()) {
      if (!p.trainable) continue;
      for (std::size_t j = 0; j < p.data.size(); ++j) {
        const double g = p.grad[j];
        double& v = vel_[off + j];
        v = mu_ * v + g;
        p.data.values[j] -= lr_ * (g + mu_ * v);
      }
      off += p.data.size();
    }
  }

  double& learning_rate() { return lr_; }

 private:
  void ensure_state(const ParameterSet& params) {
    std::size_t total = 0;
    for (const Parameter& p : params.all())
      if (p.trainable) total += p.data.size();
    if (vel_.size() != total) vel_.assign(total, 0.0);
  }

  double lr_, mu_;
  std::vector<double> vel_;
};

// Multiplies the rate by `factor` whenever the best score has not improved
// for `patience` evaluations; never drops below the floor.
class PlateauScheduler {
 public:
  PlateauScheduler(double initial_rate, double factor = 0.2, int patience = 3,
                   bool higher_is_better = true, double floor = 1e-7)
      : rate_(initial_rate), factor_(factor), patience_(patience),
        higher_better_(higher_is_better), floor_(floor) {
    if (factor <= 0.0 || factor >= 1.0)
      throw ValueError("PlateauScheduler: factor must lie in (0,1)");
  }

  // Feed one validation score; returns the (possibly decayed) rate.
  double observe(double score) {
    const bool improved =
        !has_best_ || (higher_better_ ? score > best_ : score < best_);
    if (improved) {
      best_ = score;
      has_best_ = true;
      stall_ = 0;
    } else if (++stall_ >= patience_) {
      rate_ = std::max(rate_ * factor_, floor_);
      stall_ = 0;
    }
    return rate_;
  }

  double rate() const { return rate_; }

 private:
  double rate_, factor_;
  int patience_;
  bool higher_better_;
  double floor_;
  double best_ = 0.0;
  bool has_best_ = false;
  int stall_ = 0;
};

}  // namespace softpose
