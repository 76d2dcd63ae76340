#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "add/checkpoint.hpp"
#include "add/config.hpp"
#include "add/critic.hpp"
#include "add/diffusion.hpp"
#include "add/maze.hpp"
#include "add/ppo.hpp"

namespace add {

// canonical metrics.csv header; eval columns stay blank on curriculum rows
// and vice versa
extern const char* const kCsvHeader;

struct CurriculumRow {
    int64_t epoch = 0;
    std::string method;
    uint64_t seed = 0;
    bool is_eval = false;

    // curriculum-row fields
    float mean_regret = 0.0f;
    float max_regret = 0.0f;
    float mean_blocks = 0.0f;
    float mean_shortest_path = 0.0f;
    bool has_shortest = false; // false when no env in the batch is solvable
    float solvable_frac = 0.0f;
    float mean_return = 0.0f;
    bool has_return = false; // false when no episode completed

    // eval-row fields
    std::string eval_env;
    float solved_rate = 0.0f;

    std::string csv() const;
};

struct TrainState {
    RunConfig cfg;
    ScoreModel gen;
    CriticModel critic;
    PolicyModel policy;
    ValueModel value;
    OptState critic_opt;
    OptState policy_opt;
    OptState value_opt;
    CriticBuffer buffer{1};
    int64_t epoch = 0;           // completed curriculum epochs
    uint64_t guidance_evals = 0; // critic-gradient batches requested by guided sampling
};

// fresh critic/policy/value around an already-trained generator
TrainState make_state(const RunConfig& cfg, ScoreModel gen);

struct PretrainResult {
    Tensor dataset; // [pretrain.size, theta_dim] clean env parameters
    ScoreModel gen;
    std::vector<std::pair<int, float>> loss_log;
};

// dataset of random env parameters + denoiser trained on it
PretrainResult pretrain(const RunConfig& cfg);

// load gen.ckpt from the run directory, or pretrain and persist dataset.bin,
// gen.ckpt, and config.txt there first
ScoreModel ensure_pretrained(const RunConfig& cfg);

// one curriculum epoch: sample envs per cfg.method, patch unsolvables,
// roll out + PPO update, push returns + critic update, emit log rows
// (one curriculum row, plus per-suite-env eval rows on eval epochs)
std::vector<CurriculumRow> train_epoch(TrainState& st);

// full pipeline with checkpoint resume; stop_after_epoch >= 0 simulates an
// interruption after that many epochs (no final checkpoint is written)
void run(const RunConfig& cfg, int stop_after_epoch = -1);

Checkpoint state_to_checkpoint(const TrainState& st);
TrainState state_from_checkpoint(const Checkpoint& ck, const ScoreModel& gen);

// softmax(omega * regret) environment weights, computed through logsumexp
std::vector<float> closed_form_lambda(const std::vector<float>& regrets, float omega);

struct GuidanceVerifyReport {
    std::vector<float> mean; // per-coordinate sample mean
    std::vector<float> var;  // per-coordinate sample variance
};

// guided sampling against the exact Gaussian denoiser must land on
// N(omega * a, I); throws verification_error outside tolerance
GuidanceVerifyReport verify_gaussian_guidance(float omega, const std::vector<float>& a,
                                              int samples, uint64_t seed = 0);

// trains a 1-D generator on Uniform[0,1] and measures total variation
// between guided samples and the tilted density p(x) ∝ exp(omega * x)
float verify_tv(int bins, float omega, int samples, uint64_t seed = 0);

struct GradCheckRow {
    std::string name;
    float worst = 0.0f; // worst relative finite-difference error
};

// finite-difference sweep over every loss family used in training;
// throws verification_error naming the first family out of tolerance
std::vector<GradCheckRow> verify_gradients(int instances = 20, uint64_t seed = 0);

struct GenerateReport {
    Tensor thetas; // [n, theta_dim]
    std::vector<EnvMetrics> env_metrics;
    float mean_blocks = 0.0f;
    float mean_shortest_path = 0.0f; // over solvable envs
    float solvable_frac = 0.0f;
};

// difficulty-conditioned sampling: guide toward the k-th highest return bin
GenerateReport controllable_generate(const ScoreModel& gen, const CriticModel& critic, int k,
                                     int n, uint64_t seed, int T_prime, float omega);

} // namespace add
