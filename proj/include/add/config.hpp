#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "add/critic.hpp"
#include "add/nn.hpp"
#include "add/ppo.hpp"
#include "add/schedule.hpp"

namespace add {

// Complete experiment description. Flat dotted keys, `key = value` lines,
// `#` comments; defaults -> file -> command-line overrides.
struct RunConfig {
    uint64_t seed = 0;
    std::string method = "add"; // add | dr | unguided
    int workers = 1;
    std::string out = "runs";

    int env_n = 7;
    int env_block_budget = 24;

    int diff_t = 1000;
    int diff_t_prime = 50;
    float diff_beta_min = 1e-4f;
    float diff_beta_max = 0.02f;

    int gen_width = 128;
    int gen_depth = 2;
    int gen_temb = 16;

    int64_t pretrain_size = 10000;
    int pretrain_steps = 20000;
    int pretrain_batch = 128;
    float pretrain_lr = 1e-4f;
    float pretrain_weight_decay = 0.05f;

    int support_m = 100;
    float support_v_min = 0.0f;
    float support_v_max = 1.0f;

    float guid_omega = 5.0f;
    float guid_alpha = 0.15f;

    int critic_width = 128;
    int critic_depth = 2;
    int critic_temb = 16;
    float critic_lr = 1e-4f;
    int critic_minibatches = 128;
    int critic_epochs = 5;
    int critic_batch = 64;

    int buffer_capacity = 1600;

    int agent_width = 64;
    int agent_depth = 2;

    float ppo_gamma = 0.995f;
    float ppo_lambda = 0.95f;
    int ppo_rollout_steps = 128;
    int ppo_epochs = 5;
    int ppo_minibatches = 1;
    float ppo_clip = 0.2f;
    float ppo_entropy_coef = 0.0f;
    float ppo_value_coef = 0.5f;
    float ppo_max_grad_norm = 0.5f;
    float ppo_lr = 1e-4f;

    int train_epochs = 200;
    int train_envs_per_epoch = 8;

    int eval_every = 10;
    int eval_episodes = 1;
    int checkpoint_every = 50;

    void validate() const; // contract_error naming the offending key

    int theta_dim() const { return env_n * env_n * 3; }
    int obs_dim() const;

    MlpSpec gen_spec() const;
    MlpSpec critic_spec() const;
    MlpSpec policy_spec() const;
    MlpSpec value_spec() const;
    NoiseSchedule schedule() const;
    ReturnSupport support() const;
    PpoHyper ppo_hyper() const; // seed left at 0; orchestrator fills per epoch
};

// defaults -> file -> overrides; `overrides` entries are `key=value`.
RunConfig parse_config(const std::string& path, const std::vector<std::string>& overrides);
// same precedence, config supplied as text (empty text = pure defaults).
RunConfig parse_config_text(const std::string& text, const std::vector<std::string>& overrides);

// canonical echo: every key, one per line, sorted as declared; parsing it
// back reproduces the same config bit-for-bit.
std::string config_text(const RunConfig& cfg);

// FNV-1a over the canonical text minus the `out` and `seed` lines (an
// experiment's identity is independent of where it is written and which
// seed replicates it).
uint64_t config_hash(const RunConfig& cfg);
std::string run_name(const RunConfig& cfg); // <hash hex16>-s<seed>
std::string run_dir(const RunConfig& cfg);  // out + "/" + run_name

} // namespace add
