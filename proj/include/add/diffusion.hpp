#pragma once
// Forward noising process, score-matching training of the environment
// generator, and the DDIM / reverse-SDE samplers with a pluggable guidance
// hook. Batches are [rows, dim]; a single-row tensor is one sample.
#include <cstdint>
#include <functional>
#include <optional>
#include <utility>
#include <vector>

#include "add/nn.hpp"
#include "add/schedule.hpp"
#include "add/tensor.hpp"

namespace add {

// noise-prediction network; the score is recovered via eps_to_score.
// The prediction head combines an analytic input skip with the MLP residual:
// eps_hat = sqrt(1-abar_t) * theta_t + sqrt(abar_t) * mlp(theta_t, t),
// so the network only has to learn a bounded correction at every t.
struct ScoreModel {
    MlpSpec spec;
    MlpParams params;
    NoiseSchedule sched;
    int theta_dim = 0;

    void validate() const;
    // predicted noise for a batch at a single time t
    Tensor eps(const Tensor& theta_t, int t) const;
};

// gradient of a guidance scalar with respect to theta_t, plus its weight.
// An empty callable means "no guidance".
struct GuidanceFn {
    std::function<Tensor(const Tensor& theta_t, int t)> grad;
    float omega = 0.0f;
};

// optional per-step sampler record for debugging and verification
struct SampleTrace {
    struct Step {
        int t;
        Tensor theta;
        Tensor eps_hat;
    };
    uint64_t seed = 0;
    std::vector<Step> steps; // strictly decreasing in t
};

Tensor forward_marginal(const Tensor& theta0, int t, const Tensor& eps, const NoiseSchedule& sched);
Tensor forward_step(const Tensor& theta_prev, int t, const Tensor& z, const NoiseSchedule& sched);
Tensor eps_to_score(const Tensor& eps_hat, int t, const NoiseSchedule& sched);

// mean over the batch of the per-sample squared noise-prediction error,
// recorded on the tape so it differentiates w.r.t. the model parameters
Tape::NodeId score_match_loss(Tape& tape, const MlpSpec& spec,
                              const std::vector<Tape::NodeId>& param_ids, const Tensor& theta0,
                              const std::vector<int>& ts, const Tensor& eps,
                              const NoiseSchedule& sched);

// convenience evaluation of the same loss without gradients
float score_match_loss_value(const ScoreModel& model, const Tensor& theta0,
                             const std::vector<int>& ts, const Tensor& eps);

struct GenTrainHyper {
    int steps = 20000;
    int batch = 128;
    float lr = 1e-4f;
    float weight_decay = 0.05f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps_opt = 1e-8f;
    uint64_t seed = 0;
    int log_every = 200;
};

// AdamW training on a dataset of clean samples, one row each. When bounds
// are given every dataset value must lie inside them.
ScoreModel train_generator(const Tensor& dataset, const MlpSpec& spec, const NoiseSchedule& sched,
                           const GenTrainHyper& hyper,
                           std::vector<std::pair<int, float>>* loss_log = nullptr,
                           std::optional<std::pair<float, float>> bounds = std::nullopt);

// single reverse step t -> t-1
Tensor ddim_step(const Tensor& theta_t, int t, const Tensor& eps_hat, const NoiseSchedule& sched);
// general reverse jump t -> s (0 <= s < t); s = 0 lands on the data estimate
Tensor ddim_jump(const Tensor& theta_t, int t, int s, const Tensor& eps_hat,
                 const NoiseSchedule& sched);

// classifier-style correction in noise space
Tensor guided_eps(const Tensor& eps_model, const Tensor& g, float omega, int t,
                  const NoiseSchedule& sched);

// Euler-Maruyama reverse step, the stochastic cross-check sampler
Tensor sde_reverse_step(const Tensor& theta_t, int t, const Tensor& score, const Tensor& z,
                        const NoiseSchedule& sched);

// exact noise-prediction for data ~ N(mu0, sigma0^2 I); mu0 broadcasts
// across batch rows
Tensor analytic_gaussian_eps(const Tensor& theta_t, int t, const NoiseSchedule& sched,
                             const Tensor& mu0, float sigma0);

using EpsFn = std::function<Tensor(const Tensor& theta_t, int t)>;

// DDIM sampling over the decimated timestep subsequence {T, T-T/T', ..., T/T'}
// with a final jump to the data estimate. Guidance, when present, shifts the
// predicted noise at every step. batch == 0 yields an empty tensor.
Tensor sample(const EpsFn& eps_fn, const NoiseSchedule& sched, int theta_dim, int T_prime,
              const GuidanceFn* guidance, int batch, uint64_t seed,
              std::optional<std::pair<float, float>> clamp_bounds = std::nullopt,
              SampleTrace* trace = nullptr);

Tensor sample(const ScoreModel& model, int T_prime, const GuidanceFn* guidance, int batch,
              uint64_t seed, std::optional<std::pair<float, float>> clamp_bounds = std::nullopt,
              SampleTrace* trace = nullptr);

} // namespace add
