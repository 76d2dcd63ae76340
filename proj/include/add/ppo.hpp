#pragma once
// PPO learner: categorical policy and scalar value nets over maze
// observations, rollout collection, generalized advantage estimation, and
// the clipped-surrogate update. Greedy evaluation for transfer reporting.
#include <cstdint>
#include <vector>

#include "add/maze.hpp"
#include "add/nn.hpp"
#include "add/optim.hpp"

namespace add {

inline constexpr int kActionCount = 3;

struct PolicyModel {
    MlpSpec spec;
    MlpParams params;
    void validate() const;
};

struct ValueModel {
    MlpSpec spec;
    MlpParams params;
    void validate() const;
};

PolicyModel make_policy(const MlpSpec& spec, uint64_t seed);
ValueModel make_value(const MlpSpec& spec, uint64_t seed);

// plain forwards for sampling/evaluation
Tensor policy_logits(const PolicyModel& policy, const Tensor& obs);
Tensor value_of(const ValueModel& value, const Tensor& obs);

// row-wise log softmax over a plain logits matrix
Tensor log_probs_from_logits(const Tensor& logits);

struct EpisodeRecord {
    int env_id = 0;
    float episodic_return = 0.0f; // exact sum of rewards in the episode
    int length = 0;
};

// time-major rollout over a fixed env batch: flat index = step*num_envs + env
struct RolloutBatch {
    int num_envs = 0;
    int steps = 0;
    int obs_width = 0;
    std::vector<float> obs;      // [steps*num_envs*obs_width]
    std::vector<int> actions;    // [steps*num_envs]
    std::vector<float> logp;     // behavior log-probabilities of taken actions
    std::vector<float> rewards;
    std::vector<uint8_t> dones;
    std::vector<float> values;          // V(s_t) under the collecting value net
    std::vector<float> bootstrap;       // V of each env's state after the last step
    std::vector<EpisodeRecord> episodes; // episodes completed inside the rollout

    int64_t size() const { return static_cast<int64_t>(steps) * num_envs; }
};

struct PpoHyper {
    float gamma = 0.995f;
    float lambda = 0.95f;
    int rollout_steps = 128;
    int epochs = 5;
    int minibatches = 1;
    float clip = 0.2f;
    float entropy_coef = 0.0f;
    float value_coef = 0.5f;
    float max_grad_norm = 0.5f;
    float lr = 1e-4f;
    int workers = 8; // parallel env instances
    uint64_t seed = 0; // minibatch shuffling stream

    void validate() const;
};

// samples the stochastic policy for `steps` steps across the env batch;
// finished episodes are reset in place and tagged with their env id.
// All envs must be freshly reset so recorded returns are whole-episode sums.
RolloutBatch collect(std::vector<MazeEnv>& envs, const PolicyModel& policy,
                     const ValueModel& value, int steps, uint64_t seed);

struct GaeResult {
    std::vector<float> advantages; // normalized to mean 0, std 1
    std::vector<float> targets;    // advantage + value, pre-normalization
};

GaeResult gae(const RolloutBatch& batch, float gamma, float lambda);

// one update's loss statistics, measured at the pre-step parameters
struct PpoStats {
    float policy_loss = 0.0f;
    float value_loss = 0.0f;
    float entropy = 0.0f;
    float approx_kl = 0.0f;
    float clip_fraction = 0.0f;
    float policy_grad_norm = 0.0f; // pre-clip global norm
    float value_grad_norm = 0.0f;
};

// clipped-surrogate PPO over the batch; returns one stats row per
// epoch x minibatch update in execution order
std::vector<PpoStats> ppo_update(PolicyModel& policy, ValueModel& value,
                                 const RolloutBatch& batch, const PpoHyper& hyper,
                                 OptState& policy_opt, OptState& value_opt);

struct EvalResult {
    float solved_rate = 0.0f; // fraction of episodes with positive reward
    float mean_return = 0.0f;
};

// greedy argmax evaluation, one result per suite env, deterministic
std::vector<EvalResult> evaluate(const PolicyModel& policy, const std::vector<MazeEnv>& suite,
                                 int episodes, uint64_t seed);

} // namespace add
