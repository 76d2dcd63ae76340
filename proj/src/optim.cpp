#include "add/optim.hpp"

#include <cmath>

namespace add {

OptState OptState::make(const std::vector<Tensor>& params, float lr, float weight_decay,
                        float beta1, float beta2, float eps_opt) {
    OptState s;
    s.lr = lr;
    s.weight_decay = weight_decay;
    s.beta1 = beta1;
    s.beta2 = beta2;
    s.eps_opt = eps_opt;
    for (const Tensor& p : params) {
        s.m.push_back(Tensor::zeros(p.shape));
        s.v.push_back(Tensor::zeros(p.shape));
    }
    return s;
}

void optimizer_step(std::vector<Tensor>& params, const std::vector<Tensor>& grads, OptState& state,
                    const std::vector<std::string>& names) {
    require(params.size() == grads.size(), "optimizer_step: params/grads count mismatch");
    require(params.size() == state.m.size(), "optimizer_step: state does not match parameter list");
    state.step += 1;
    const double bc1 = 1.0 - std::pow(static_cast<double>(state.beta1), static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(static_cast<double>(state.beta2), static_cast<double>(state.step));
    for (size_t pi = 0; pi < params.size(); ++pi) {
        Tensor& p = params[pi];
        const Tensor& g = grads[pi];
        require(p.same_shape(g), "optimizer_step: gradient shape mismatch on parameter " +
                                     (pi < names.size() ? names[pi] : std::to_string(pi)));
        Tensor& m = state.m[pi];
        Tensor& v = state.v[pi];
        for (int64_t i = 0; i < p.numel(); ++i) {
            const float gi = g.data[i];
            if (!std::isfinite(gi))
                throw contract_error("optimizer_step: non-finite gradient on parameter " +
                                     (pi < names.size() ? names[pi] : std::to_string(pi)));
            if (state.weight_decay != 0.0f)
                p.data[i] *= (1.0f - state.lr * state.weight_decay);
            m.data[i] = state.beta1 * m.data[i] + (1.0f - state.beta1) * gi;
            v.data[i] = state.beta2 * v.data[i] + (1.0f - state.beta2) * gi * gi;
            const double mhat = m.data[i] / bc1;
            const double vhat = v.data[i] / bc2;
            p.data[i] -= static_cast<float>(state.lr * mhat / (std::sqrt(vhat) + state.eps_opt));
        }
    }
}

float clip_grad_norm(std::vector<Tensor>& grads, float max_norm) {
    require(max_norm > 0.0f, "clip_grad_norm: max_norm must be positive");
    double sq = 0.0;
    for (const Tensor& g : grads)
        for (float x : g.data) sq += static_cast<double>(x) * x;
    const float norm = static_cast<float>(std::sqrt(sq));
    if (norm > max_norm) {
        const float s = max_norm / norm;
        for (Tensor& g : grads)
            for (float& x : g.data) x *= s;
    }
    return norm;
}

} // namespace add
