#pragma once

#include <vector>

#include "procver/autodiff.hpp"

namespace procver {

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01; // decoupled, applied as p -= lr*wd*p
};

// Adam moments for one parameter set. Slot i tracks params[i]; order must not
// change between steps (and is preserved across checkpoint save/load).
struct AdamState {
    AdamConfig config;
    std::vector<Tensor> m;
    std::vector<Tensor> v;
    std::size_t step_count = 0;

    explicit AdamState(AdamConfig c = {}) : config(c) {}

    // Allocates zero moments matching the parameter shapes.
    void init(const std::vector<Parameter*>& params);

    // One update from the gradients currently held in the parameters.
    // Bias-corrected moments; weight decay is decoupled from the gradient.
    void step(const std::vector<Parameter*>& params, double lr);
};

// Cosine annealing from base_lr at step 0 down to 0 at total_steps.
double cosine_lr(std::size_t step, std::size_t total_steps, double base_lr);

// Scales all gradients so their global l2 norm is at most max_norm.
// Returns the pre-clip norm.
double clip_global_norm(const std::vector<Parameter*>& params, double max_norm);

} // namespace procver
