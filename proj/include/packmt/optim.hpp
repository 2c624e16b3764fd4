#pragma once

// Adam with per-parameter moment state, plus the inverse-sqrt learning-rate
// schedule with linear warmup. Updates optionally take a per-element
// trainable mask: masked-out elements are skipped outright, so their bits
// never change.

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "packmt/common.hpp"
#include "packmt/tensor.hpp"

namespace packmt {

struct LrSchedule {
    double lr_max = 3e-4;
    std::int64_t warmup_steps = 4500;
};

// lr(t) = lr_max * min(t / warmup, sqrt(warmup / t)), t counted from 1.
// Linear warmup to the peak at t == warmup, inverse-sqrt decay after.
inline double lr_at(const LrSchedule& sched, std::int64_t step) {
    if (step < 1) throw ContractViolation("lr_at: step must be >= 1");
    const double t = static_cast<double>(step);
    const double w = static_cast<double>(sched.warmup_steps);
    return sched.lr_max * std::min(t / w, std::sqrt(w / t));
}

// Moment buffers and step counter for one parameter tensor.
template <typename T>
struct AdamState {
    std::vector<T> m;
    std::vector<T> v;
    std::int64_t t = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// One bias-corrected Adam update. When `trainable` is non-null it must hold
// one byte per element; elements with a zero byte are not touched at all —
// no moment decay, no read-modify-write — which is what keeps frozen
// parameters bitwise stable across whole training phases.
template <typename T>
void adam_step(Tensor<T>& param, const Tensor<T>& grad, AdamState<T>& state, double lr,
               const std::uint8_t* trainable = nullptr) {
    if (!param.same_shape(grad))
        throw ContractViolation("adam_step: grad shape " + shape_str(grad.shape) + " does not match param " +
                                shape_str(param.shape));
    const std::size_t n = param.data.size();
    if (state.m.empty()) {
        state.m.assign(n, T(0));
        state.v.assign(n, T(0));
    } else if (state.m.size() != n || state.v.size() != n) {
        throw ContractViolation("adam_step: moment state size does not match param");
    }
    state.t += 1;
    const T b1 = static_cast<T>(state.beta1), b2 = static_cast<T>(state.beta2);
    const T bc1 = static_cast<T>(1.0 - std::pow(state.beta1, static_cast<double>(state.t)));
    const T bc2 = static_cast<T>(1.0 - std::pow(state.beta2, static_cast<double>(state.t)));
    const T step_lr = static_cast<T>(lr);
    const T eps = static_cast<T>(state.eps);
    for (std::size_t i = 0; i < n; ++i) {
        if (trainable && !trainable[i]) continue;
        const T g = grad.data[i];
        state.m[i] = b1 * state.m[i] + (T(1) - b1) * g;
        state.v[i] = b2 * state.v[i] + (T(1) - b2) * g * g;
        const T mhat = state.m[i] / bc1;
        const T vhat = state.v[i] / bc2;
        param.data[i] -= step_lr * mhat / (std::sqrt(vhat) + eps);
    }
}

// Optimizer state for a set of named parameters, advancing one shared step
// counter per batch. Constructed fresh at the start of every training
// phase: freezing correctness relies on moments starting at zero so gated
// (zero) gradients never produce an update.
template <typename T>
class Adam {
  public:
    explicit Adam(LrSchedule sched) : sched_(sched) {}

    const LrSchedule& schedule() const { return sched_; }
    std::int64_t steps_taken() const { return step_; }

    // Advances the shared step counter; call once per batch before the
    // per-tensor updates so they all see the same learning rate.
    void begin_step() { ++step_; }

    double current_lr() const { return lr_at(sched_, step_ < 1 ? 1 : step_); }

    void update(const std::string& name, Tensor<T>& param, const Tensor<T>& grad,
                const std::uint8_t* trainable = nullptr) {
        if (step_ < 1) throw ContractViolation("Adam::update: call begin_step first");
        auto& st = states_[name];
        if (st.t != step_ - 1)
            throw ContractViolation("Adam::update: tensor '" + name + "' updated twice in one step");
        adam_step(param, grad, st, lr_at(sched_, step_), trainable);
    }

  private:
    LrSchedule sched_;
    std::int64_t step_ = 0;
    std::map<std::string, AdamState<T>> states_;
};

}  // namespace packmt
