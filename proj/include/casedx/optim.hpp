#pragma once

#include <cmath>
#include <map>
#include <numbers>
#include <string>

#include "casedx/nn.hpp"

namespace casedx {

// Linear warmup from zero to the peak rate, then cosine decay to zero.
// Positions are measured in (fractional) epochs.
struct WarmupCosine {
  double peak = 1e-5;
  double warmup_epochs = 5;
  double total_epochs = 100;

  double at(double epoch) const {
    if (epoch <= 0.0) return 0.0;
    if (epoch < warmup_epochs) return peak * epoch / warmup_epochs;
    if (epoch >= total_epochs) return 0.0;
    const double progress = (epoch - warmup_epochs) / (total_epochs - warmup_epochs);
    return peak * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
  }
};

template <class T>
class AdamW {
 public:
  struct Moments {
    Tensor<T> first, second;
  };

  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;

  // Decoupled weight decay is applied to matrices and kernels only, not to
  // biases, norms or 1-D tables.
  void step(ParamStore<T>& params, double lr) {
    ++steps_;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(steps_));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(steps_));
    for (auto& [name, var] : params.entries()) {
      if (!var.requires_grad() || !var.has_grad()) continue;
      auto& st = state_[name];
      if (st.first.size() != var.size()) {
        st.first = Tensor<T>(var.shape());
        st.second = Tensor<T>(var.shape());
      }
      Var<T> v = var;
      Tensor<T>& w = v.mutable_value();
      const Tensor<T>& g = v.grad();
      const bool decay = w.rank() >= 2 && weight_decay > 0.0;
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double gi = g[i];
        const double m = beta1 * st.first[i] + (1.0 - beta1) * gi;
        const double s = beta2 * st.second[i] + (1.0 - beta2) * gi * gi;
        st.first[i] = static_cast<T>(m);
        st.second[i] = static_cast<T>(s);
        double wi = w[i];
        if (decay) wi -= lr * weight_decay * wi;
        wi -= lr * (m / c1) / (std::sqrt(s / c2) + eps);
        w[i] = static_cast<T>(wi);
      }
    }
  }

  long long steps() const noexcept { return steps_; }
  void set_steps(long long s) noexcept { steps_ = s; }
  std::map<std::string, Moments>& state() noexcept { return state_; }
  const std::map<std::string, Moments>& state() const noexcept { return state_; }

 private:
  long long steps_ = 0;
  std::map<std::string, Moments> state_;
};

}  // namespace casedx
