#include "boqsa/optim.hpp"

#include <cmath>

namespace boqsa {

template <typename T>
Adam<T>::Adam(NamedTensors<T> params, AdamOptions options) : params_(std::move(params)), options_(options) {
    for (const auto& [name, p] : params_) {
        m_.emplace_back(name, Tensor<T>::zeros(p.shape()));
        v_.emplace_back(name, Tensor<T>::zeros(p.shape()));
    }
}

template <typename T>
double Adam<T>::grad_norm() const {
    double sq = 0.0;
    for (const auto& [name, p] : params_) {
        for (T g : p.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
    }
    return std::sqrt(sq);
}

template <typename T>
double Adam<T>::clip_grad_norm(double max_norm) {
    const double norm = grad_norm();
    if (norm > max_norm && norm > 0.0) {
        const T scale = static_cast<T>(max_norm / norm);
        for (auto& [name, p] : params_) {
            for (T& g : p.mutable_grad()) g *= scale;
        }
    }
    return norm;
}

template <typename T>
void Adam<T>::step(double lr) {
    ++steps_;
    const T b1 = static_cast<T>(options_.beta1), b2 = static_cast<T>(options_.beta2);
    const double t = static_cast<double>(steps_);
    const T step_size = static_cast<T>(lr / (1.0 - std::pow(options_.beta1, t)));
    const T v_correction = static_cast<T>(1.0 / std::sqrt(1.0 - std::pow(options_.beta2, t)));
    const T eps = static_cast<T>(options_.eps);
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Tensor<T>& p = params_[i].second;
        const auto g = p.grad();
        auto w = p.mutable_data();
        auto m = m_[i].second.mutable_data();
        auto v = v_[i].second.mutable_data();
        for (std::size_t j = 0; j < w.size(); ++j) {
            m[j] = b1 * m[j] + (T{1} - b1) * g[j];
            v[j] = b2 * v[j] + (T{1} - b2) * g[j] * g[j];
            w[j] -= step_size * m[j] / (std::sqrt(v[j]) * v_correction + eps);
        }
    }
}

template <typename T>
void Adam<T>::save_state(Checkpoint& checkpoint) const {
    store_tensors(checkpoint, m_, "adam.m.");
    store_tensors(checkpoint, v_, "adam.v.");
}

template <typename T>
void Adam<T>::load_state(const Checkpoint& checkpoint) {
    restore_tensors(checkpoint, m_, "adam.m.");
    restore_tensors(checkpoint, v_, "adam.v.");
    steps_ = checkpoint.step;
}

template class Adam<float>;
template class Adam<double>;

}  // namespace boqsa
