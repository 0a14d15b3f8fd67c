#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace gridse::ad {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

/// Per-parameter moment estimates. Buffers are allocated on first use.
struct AdamState {
    std::vector<double> m;
    std::vector<double> v;
    std::int64_t step = 0;
};

/// One adaptive-moment update with bias correction, in place.
/// Throws std::invalid_argument on lr <= 0 or shape mismatch.
void adam_step(std::span<double> param, std::span<const double> grad, AdamState& state,
               const AdamConfig& config);

}  // namespace gridse::ad
