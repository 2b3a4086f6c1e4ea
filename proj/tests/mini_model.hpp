#pragma once

// Tiny two-bottleneck model used across the tests: same data path as the
// full network but sized for millisecond forwards and finite differences.

#include <random>

#include "csisense/ghostnet.hpp"

namespace csisense::testing {

inline BranchyModel make_mini_model(uint32_t seed = 0) {
    std::mt19937 rng{seed};
    BranchyModel m;
    m.trunk.push_back(std::make_shared<ConvBnAct>(3, 8, 3, 2, 1, false, true, rng));
    m.trunk.push_back(std::make_shared<GhostBottleneck>(8, 16, 8, 3, 1, false, rng));
    m.trunk.push_back(std::make_shared<GhostBottleneck>(8, 24, 12, 3, 2, true, rng));
    m.trunk.push_back(std::make_shared<ConvBnAct>(12, 16, 1, 1, 0, false, true, rng));
    m.branch_index = 2;  // tap after the first bottleneck
    m.early_head = std::make_shared<ConvBnAct>(8, 8, 3, 1, 1, true, true, rng);
    m.early_fc_w = Tensor::randn({3, 8}, rng, 0.3f, true);
    m.early_fc_b = Tensor::zeros({3}, true);
    m.final_head = std::make_shared<Conv2d>(16, 20, 1, 1, 0, false, rng);
    m.final_fc_w = Tensor::randn({5, 20}, rng, 0.3f, true);
    m.final_fc_b = Tensor::zeros({5}, true);
    m.config.width_multiplier = 0.0f;  // hand-built, not from the stage table
    m.config.branch_after_bottleneck = 1;
    m.config.seed = seed;
    return m;
}

}  // namespace csisense::testing
