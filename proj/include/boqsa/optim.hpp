#pragma once

#include "boqsa/checkpoint.hpp"

namespace boqsa {

struct AdamOptions {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Adam with bias correction. Moments live beside the parameters they track
/// and are saved as "adam.m.<name>" / "adam.v.<name>".
template <typename T>
class Adam {
public:
    Adam(NamedTensors<T> params, AdamOptions options = {});

    /// Applies one update with learning rate `lr` from the current gradients.
    void step(double lr);
    /// Scales all gradients so their global L2 norm is at most max_norm.
    /// Returns the norm before clipping.
    double clip_grad_norm(double max_norm);
    double grad_norm() const;

    std::uint64_t steps() const { return steps_; }
    void set_steps(std::uint64_t steps) { steps_ = steps; }
    const NamedTensors<T>& params() const { return params_; }

    void save_state(Checkpoint& checkpoint) const;
    void load_state(const Checkpoint& checkpoint);

private:
    NamedTensors<T> params_;
    NamedTensors<T> m_;
    NamedTensors<T> v_;
    AdamOptions options_;
    std::uint64_t steps_ = 0;
};

}  // namespace boqsa
