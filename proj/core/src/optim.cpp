#include "gridse/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace gridse::ad {

void adam_step(std::span<double> param, std::span<const double> grad, AdamState& state,
               const AdamConfig& config) {
    if (config.lr <= 0.0) throw std::invalid_argument("adam_step: learning rate must be > 0");
    if (param.size() != grad.size()) throw std::invalid_argument("adam_step: param/grad size mismatch");
    if (state.m.empty()) {
        state.m.assign(param.size(), 0.0);
        state.v.assign(param.size(), 0.0);
    }
    if (state.m.size() != param.size())
        throw std::invalid_argument("adam_step: optimizer state size mismatch");

    ++state.step;
    const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < param.size(); ++i) {
        state.m[i] = config.beta1 * state.m[i] + (1.0 - config.beta1) * grad[i];
        state.v[i] = config.beta2 * state.v[i] + (1.0 - config.beta2) * grad[i] * grad[i];
        const double m_hat = state.m[i] / bc1;
        const double v_hat = state.v[i] / bc2;
        param[i] -= config.lr * m_hat / (std::sqrt(v_hat) + config.epsilon);
    }
}

}  // namespace gridse::ad
