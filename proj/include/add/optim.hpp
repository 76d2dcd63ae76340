#pragma once
// Bias-corrected Adam with optional decoupled weight decay (AdamW) and a
// global-norm gradient clipper.
#include <cstdint>
#include <string>
#include <vector>

#include "add/tensor.hpp"

namespace add {

struct OptState {
    std::vector<Tensor> m; // first moments, one per parameter tensor
    std::vector<Tensor> v; // second moments
    int64_t step = 0;
    float lr = 1e-4f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps_opt = 1e-8f;
    float weight_decay = 0.0f; // 0 -> plain Adam

    static OptState make(const std::vector<Tensor>& params, float lr, float weight_decay = 0.0f,
                         float beta1 = 0.9f, float beta2 = 0.999f, float eps_opt = 1e-8f);
};

// One update over the whole parameter list. AdamW decay p <- p*(1 - lr*wd)
// is applied before the moment update. Non-finite gradients are a contract
// violation, reported with the parameter's name (or index if names omitted).
void optimizer_step(std::vector<Tensor>& params, const std::vector<Tensor>& grads, OptState& state,
                    const std::vector<std::string>& names = {});

// scales grads in place so their global L2 norm is at most max_norm;
// returns the pre-clip norm
float clip_grad_norm(std::vector<Tensor>& grads, float max_norm);

} // namespace add
