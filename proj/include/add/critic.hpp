#pragma once
// Distributional environment critic over noised environment parameters, the
// categorical return machinery (support, projection, CVaR), and the two
// differentiable guidance signals that steer the sampler.
#include <cstdint>
#include <utility>
#include <vector>

#include "add/diffusion.hpp"
#include "add/nn.hpp"
#include "add/optim.hpp"
#include "add/schedule.hpp"
#include "add/tensor.hpp"

namespace add {

struct ReturnSupport {
    int M = 0;
    float v_min = 0.0f;
    float v_max = 0.0f;
    std::vector<float> z; // bin centers, strictly increasing, endpoints included
    float delta = 0.0f;   // projection bin width (v_max - v_min) / M
};

ReturnSupport make_support(int M, float v_min, float v_max);

struct ReturnDistribution {
    ReturnSupport support;
    std::vector<float> p; // length M, non-negative, sums to 1

    float mean() const;
};

// softmax of critic logits (stable, 64-bit accumulation)
ReturnDistribution logits_to_distribution(const std::vector<float>& logits,
                                          const ReturnSupport& support);

// triangular-kernel projection of episodic returns onto the support, with
// renormalization and a nearest-bin fallback when every raw weight is zero.
// Returns are clamped into [v_min, v_max] first.
ReturnDistribution project_returns(const std::vector<float>& returns,
                                   const ReturnSupport& support);

// upper-tail CVaR: scan bins from the highest center down, taking
// w_i = min(p_i, remaining budget) with the budget starting at alpha;
// the result is (1/alpha) * sum w_i z_i
float cvar(const ReturnDistribution& dist, float alpha);

// CVaR_alpha minus the mean; non-negative
float regret_estimate(const ReturnDistribution& dist, float alpha);

// the same tail scan recorded on a tape, vectorized over rows of a
// probability matrix [rows, M]; yields a [rows, 1] node of per-row regret
Tape::NodeId regret_on_tape(Tape& tape, Tape::NodeId probs, const ReturnSupport& support,
                            float alpha);

struct CriticModel {
    MlpSpec spec;
    MlpParams params;
    ReturnSupport support;
    NoiseSchedule sched;
    int theta_dim = 0;

    void validate() const;
    // logits for a batch at one shared time
    Tensor logits(const Tensor& theta_t, int t) const;
    // softmax distribution for a single row
    ReturnDistribution distribution(const Tensor& theta_row, int t) const;
};

enum class GuidanceMode { regret, difficulty };

struct GuidanceConfig {
    float omega = 5.0f;
    float alpha = 0.15f;
    GuidanceMode mode = GuidanceMode::regret;
    int k = 1; // difficulty level: guide toward the k-th highest return bin

    void validate(int M) const;
};

// gradient of the critic's regret estimate with respect to theta_t, one row
// per input row; the full softmax -> CVaR chain is differentiated on a tape
Tensor regret_input_gradient(const CriticModel& model, const Tensor& theta_t, int t,
                             const GuidanceConfig& config);

// gradient of log Pr(return bin = M - k) with respect to theta_t
Tensor difficulty_logprob_grad(const CriticModel& model, const Tensor& theta_t, int t, int k);

// guidance callable for the sampler per the configured mode
GuidanceFn make_guidance(const CriticModel& model, const GuidanceConfig& config);

struct CriticBuffer {
    struct Entry {
        Tensor theta0;          // one flattened parameter row
        std::vector<float> target; // projected return distribution
    };

    explicit CriticBuffer(int capacity);

    void push(const Tensor& theta0, const std::vector<float>& returns,
              const ReturnSupport& support);
    // reinsert an already-projected entry (checkpoint reload)
    void restore(const Tensor& theta0, std::vector<float> target);
    std::vector<Entry> sample(int n, uint64_t seed) const;

    int size() const { return static_cast<int>(entries_.size()); }
    int capacity() const { return capacity_; }
    const Entry& entry(int i) const { return entries_[static_cast<size_t>(i)]; }

  private:
    int capacity_ = 0;
    std::vector<Entry> entries_; // oldest first
};

struct CriticUpdateHyper {
    int minibatches = 128;
    int epochs = 5;
    int batch = 64;
    uint64_t seed = 0;
};

// cross-entropy training on noised buffer entries: each sampled pair draws
// its own t uniform in 1..T and noise through the forward marginal
std::vector<float> critic_update(CriticModel& model, const CriticBuffer& buffer,
                                 const CriticUpdateHyper& hyper, OptState& opt);

} // namespace add
