#include "add/ppo.hpp"

#include <algorithm>
#include <cmath>

#include "add/rng.hpp"

namespace add {

void PolicyModel::validate() const {
    spec.validate();
    require(spec.widths.back() == kActionCount, "policy: output width must be the action count");
    require(spec.temb_width == 0, "policy: no time embedding");
}

void ValueModel::validate() const {
    spec.validate();
    require(spec.widths.back() == 1, "value: output must be scalar");
    require(spec.temb_width == 0, "value: no time embedding");
}

PolicyModel make_policy(const MlpSpec& spec, uint64_t seed) {
    PolicyModel p;
    p.spec = spec;
    p.validate();
    p.params = init_mlp(spec, seed);
    return p;
}

ValueModel make_value(const MlpSpec& spec, uint64_t seed) {
    ValueModel v;
    v.spec = spec;
    v.validate();
    v.params = init_mlp(spec, seed);
    return v;
}

Tensor policy_logits(const PolicyModel& policy, const Tensor& obs) {
    return mlp_eval(policy.spec, policy.params, obs);
}

Tensor value_of(const ValueModel& value, const Tensor& obs) {
    return mlp_eval(value.spec, value.params, obs);
}

Tensor log_probs_from_logits(const Tensor& logits) {
    Tensor out = logits;
    const int64_t n = logits.rows(), k = logits.cols();
    for (int64_t r = 0; r < n; ++r) {
        float hi = logits.at(r, 0);
        for (int64_t c = 1; c < k; ++c) hi = std::max(hi, logits.at(r, c));
        double acc = 0.0;
        for (int64_t c = 0; c < k; ++c) acc += std::exp(static_cast<double>(logits.at(r, c) - hi));
        const float lse = hi + static_cast<float>(std::log(acc));
        for (int64_t c = 0; c < k; ++c) out.at(r, c) = logits.at(r, c) - lse;
    }
    return out;
}

void PpoHyper::validate() const {
    require(gamma > 0.0f && gamma <= 1.0f, "ppo: gamma outside (0,1]");
    require(lambda >= 0.0f && lambda <= 1.0f, "ppo: lambda outside [0,1]");
    require(clip >= 0.0f, "ppo: negative clip range");
    require(rollout_steps >= 1, "ppo: rollout length must be positive");
    require(epochs >= 1 && minibatches >= 1, "ppo: epochs and minibatches must be positive");
    require(lr > 0.0f && max_grad_norm > 0.0f, "ppo: lr and grad-norm cap must be positive");
    require(entropy_coef >= 0.0f && value_coef >= 0.0f, "ppo: negative loss coefficient");
    require(workers >= 1, "ppo: need at least one env worker");
}

namespace {

int sample_categorical(const float* logp, int k, double u) {
    double acc = 0.0;
    for (int a = 0; a < k; ++a) {
        acc += std::exp(static_cast<double>(logp[a]));
        if (u < acc) return a;
    }
    return k - 1;
}

Tensor stack_observations(const std::vector<std::vector<float>>& obs) {
    const int64_t n = static_cast<int64_t>(obs.size());
    const int64_t w = static_cast<int64_t>(obs[0].size());
    Tensor t = Tensor::zeros({n, w});
    for (int64_t r = 0; r < n; ++r)
        std::copy(obs[static_cast<size_t>(r)].begin(), obs[static_cast<size_t>(r)].end(),
                  t.data.begin() + static_cast<size_t>(r * w));
    return t;
}

} // namespace

RolloutBatch collect(std::vector<MazeEnv>& envs, const PolicyModel& policy,
                     const ValueModel& value, int steps, uint64_t seed) {
    require(steps >= 0, "collect: negative step count");
    require(!envs.empty(), "collect: empty env batch");
    const int E = static_cast<int>(envs.size());

    RolloutBatch batch;
    batch.num_envs = E;
    batch.steps = steps;
    batch.obs_width = obs_dim();
    if (steps == 0) return batch;

    std::vector<std::vector<float>> current(static_cast<size_t>(E));
    std::vector<float> ep_return(static_cast<size_t>(E), 0.0f);
    std::vector<int> ep_len(static_cast<size_t>(E), 0);
    for (int e = 0; e < E; ++e) {
        require(!envs[static_cast<size_t>(e)].done && envs[static_cast<size_t>(e)].steps == 0,
                "collect: envs must be freshly reset");
        current[static_cast<size_t>(e)] = reset(envs[static_cast<size_t>(e)]);
    }

    const int64_t n = static_cast<int64_t>(steps) * E;
    batch.obs.resize(static_cast<size_t>(n) * static_cast<size_t>(batch.obs_width));
    batch.actions.resize(static_cast<size_t>(n));
    batch.logp.resize(static_cast<size_t>(n));
    batch.rewards.resize(static_cast<size_t>(n));
    batch.dones.resize(static_cast<size_t>(n));
    batch.values.resize(static_cast<size_t>(n));

    Rng rng(seed);
    for (int s = 0; s < steps; ++s) {
        Tensor obs_t = stack_observations(current);
        Tensor logits = policy_logits(policy, obs_t);
        Tensor logp = log_probs_from_logits(logits);
        Tensor vals = value_of(value, obs_t);

        for (int e = 0; e < E; ++e) {
            const int64_t i = static_cast<int64_t>(s) * E + e;
            const float* row = logp.data.data() + static_cast<size_t>(e) * kActionCount;
            const int a = sample_categorical(row, kActionCount, rng.unit());

            std::copy(current[static_cast<size_t>(e)].begin(), current[static_cast<size_t>(e)].end(),
                      batch.obs.begin() + static_cast<size_t>(i) * static_cast<size_t>(batch.obs_width));
            batch.actions[static_cast<size_t>(i)] = a;
            batch.logp[static_cast<size_t>(i)] = row[a];
            batch.values[static_cast<size_t>(i)] = vals.at(e, 0);

            StepResult r = step(envs[static_cast<size_t>(e)], static_cast<Action>(a));
            batch.rewards[static_cast<size_t>(i)] = r.reward;
            batch.dones[static_cast<size_t>(i)] = r.done ? 1 : 0;
            ep_return[static_cast<size_t>(e)] += r.reward;
            ep_len[static_cast<size_t>(e)] += 1;
            if (r.done) {
                batch.episodes.push_back({e, ep_return[static_cast<size_t>(e)],
                                          ep_len[static_cast<size_t>(e)]});
                ep_return[static_cast<size_t>(e)] = 0.0f;
                ep_len[static_cast<size_t>(e)] = 0;
                current[static_cast<size_t>(e)] = reset(envs[static_cast<size_t>(e)]);
            } else {
                current[static_cast<size_t>(e)] = std::move(r.obs);
            }
        }
    }

    Tensor tail = value_of(value, stack_observations(current));
    batch.bootstrap.resize(static_cast<size_t>(E));
    for (int e = 0; e < E; ++e) batch.bootstrap[static_cast<size_t>(e)] = tail.at(e, 0);
    return batch;
}

GaeResult gae(const RolloutBatch& batch, float gamma, float lambda) {
    const int E = batch.num_envs, S = batch.steps;
    require(batch.bootstrap.size() == static_cast<size_t>(E),
            "gae: missing bootstrap values");
    GaeResult out;
    out.advantages.assign(static_cast<size_t>(batch.size()), 0.0f);
    out.targets.assign(static_cast<size_t>(batch.size()), 0.0f);

    for (int e = 0; e < E; ++e) {
        float acc = 0.0f;
        for (int s = S - 1; s >= 0; --s) {
            const size_t i = static_cast<size_t>(s) * static_cast<size_t>(E) + static_cast<size_t>(e);
            const float cont = batch.dones[i] ? 0.0f : 1.0f;
            const float next_v = s + 1 < S
                                     ? batch.values[i + static_cast<size_t>(E)]
                                     : batch.bootstrap[static_cast<size_t>(e)];
            const float delta = batch.rewards[i] + gamma * next_v * cont - batch.values[i];
            acc = delta + gamma * lambda * cont * acc;
            out.advantages[i] = acc;
            out.targets[i] = acc + batch.values[i];
        }
    }

    double mean = 0.0;
    for (float a : out.advantages) mean += a;
    mean /= static_cast<double>(out.advantages.size());
    double var = 0.0;
    for (float a : out.advantages) var += (a - mean) * (a - mean);
    var /= static_cast<double>(out.advantages.size());
    const float sd = static_cast<float>(std::sqrt(std::max(var, 0.0)));
    for (float& a : out.advantages) a = (a - static_cast<float>(mean)) / (sd + 1e-8f);
    return out;
}

namespace {

struct Subset {
    Tensor obs;
    std::vector<int> actions;
    Tensor old_logp; // [n,1]
    Tensor adv;      // [n,1]
    Tensor targets;  // [n,1]
};

Subset take_rows(const RolloutBatch& batch, const GaeResult& g, const std::vector<int64_t>& rows) {
    const int64_t n = static_cast<int64_t>(rows.size());
    const int64_t w = batch.obs_width;
    Subset s;
    s.obs = Tensor::zeros({n, w});
    s.old_logp = Tensor::zeros({n, 1});
    s.adv = Tensor::zeros({n, 1});
    s.targets = Tensor::zeros({n, 1});
    s.actions.resize(static_cast<size_t>(n));
    for (int64_t r = 0; r < n; ++r) {
        const size_t i = static_cast<size_t>(rows[static_cast<size_t>(r)]);
        std::copy(batch.obs.begin() + static_cast<ptrdiff_t>(i * static_cast<size_t>(w)),
                  batch.obs.begin() + static_cast<ptrdiff_t>((i + 1) * static_cast<size_t>(w)),
                  s.obs.data.begin() + static_cast<size_t>(r * w));
        s.actions[static_cast<size_t>(r)] = batch.actions[i];
        s.old_logp.data[static_cast<size_t>(r)] = batch.logp[i];
        s.adv.data[static_cast<size_t>(r)] = g.advantages[i];
        s.targets.data[static_cast<size_t>(r)] = g.targets[i];
    }
    return s;
}

} // namespace

std::vector<PpoStats> ppo_update(PolicyModel& policy, ValueModel& value,
                                 const RolloutBatch& batch, const PpoHyper& hyper,
                                 OptState& policy_opt, OptState& value_opt) {
    hyper.validate();
    require(batch.size() > 0, "ppo update: empty batch");
    policy.validate();
    value.validate();

    GaeResult g = gae(batch, hyper.gamma, hyper.lambda);
    const int64_t n = batch.size();
    std::vector<int64_t> order(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;

    std::vector<PpoStats> stats;
    Rng shuffle_rng(derive_seed(hyper.seed, "ppo.shuffle"));
    for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
        for (int64_t i = n - 1; i > 0; --i) {
            const int64_t j = static_cast<int64_t>(shuffle_rng.below(static_cast<uint64_t>(i + 1)));
            std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(j)]);
        }
        for (int mb = 0; mb < hyper.minibatches; ++mb) {
            const int64_t lo = n * mb / hyper.minibatches;
            const int64_t hi = n * (mb + 1) / hyper.minibatches;
            if (hi == lo) continue;
            std::vector<int64_t> rows(order.begin() + static_cast<ptrdiff_t>(lo),
                                      order.begin() + static_cast<ptrdiff_t>(hi));
            Subset sub = take_rows(batch, g, rows);
            const int64_t m = hi - lo;
            PpoStats st;

            { // policy step
                Tape t;
                std::vector<Tape::NodeId> pids = params_on_tape(t, policy.params, true);
                Tape::NodeId obs = t.leaf(sub.obs);
                Tape::NodeId logits = mlp_forward(t, policy.spec, pids, obs);
                Tape::NodeId logp_all = t.log_softmax_cols(logits);
                Tape::NodeId logp_taken = t.gather_cols(logp_all, sub.actions);
                Tape::NodeId old_lp = t.leaf(sub.old_logp);
                Tape::NodeId ratio = t.exp_op(t.sub(logp_taken, old_lp));
                Tape::NodeId adv = t.leaf(sub.adv);
                Tape::NodeId surr = t.mul(ratio, adv);
                Tape::NodeId clipped = t.mul(t.clamp_op(ratio, 1.0f - hyper.clip, 1.0f + hyper.clip), adv);
                Tape::NodeId objective = t.mean(t.min2(surr, clipped));
                Tape::NodeId loss = t.scale(objective, -1.0f);
                // entropy bonus: minimize coef * sum_a p log p
                Tape::NodeId neg_entropy =
                    t.mean(t.sum_cols(t.mul(t.exp_op(logp_all), logp_all)));
                if (hyper.entropy_coef != 0.0f)
                    loss = t.add(loss, t.scale(neg_entropy, hyper.entropy_coef));
                t.backward(loss);

                st.policy_loss = t.val(loss).data[0];
                st.entropy = -t.val(neg_entropy).data[0];
                double kl = 0.0;
                int clipped_n = 0;
                const Tensor& ratio_v = t.val(ratio);
                const Tensor& lp_v = t.val(logp_taken);
                for (int64_t r = 0; r < m; ++r) {
                    kl += static_cast<double>(sub.old_logp.data[static_cast<size_t>(r)] -
                                              lp_v.data[static_cast<size_t>(r)]);
                    if (std::fabs(ratio_v.data[static_cast<size_t>(r)] - 1.0f) > hyper.clip)
                        ++clipped_n;
                }
                st.approx_kl = static_cast<float>(kl / static_cast<double>(m));
                st.clip_fraction = static_cast<float>(clipped_n) / static_cast<float>(m);

                std::vector<Tensor> grads = param_grads(t, pids);
                st.policy_grad_norm = clip_grad_norm(grads, hyper.max_grad_norm);
                optimizer_step(policy.params.tensors, grads, policy_opt,
                               param_names("policy", policy.spec));
            }

            { // value step
                Tape t;
                std::vector<Tape::NodeId> vids = params_on_tape(t, value.params, true);
                Tape::NodeId obs = t.leaf(sub.obs);
                Tape::NodeId pred = mlp_forward(t, value.spec, vids, obs);
                Tape::NodeId target = t.leaf(sub.targets);
                Tape::NodeId mse = t.mean(t.square(t.sub(pred, target)));
                Tape::NodeId loss = t.scale(mse, hyper.value_coef);
                t.backward(loss);

                st.value_loss = t.val(mse).data[0];
                std::vector<Tensor> grads = param_grads(t, vids);
                st.value_grad_norm = clip_grad_norm(grads, hyper.max_grad_norm);
                optimizer_step(value.params.tensors, grads, value_opt,
                               param_names("value", value.spec));
            }
            stats.push_back(st);
        }
    }
    return stats;
}

std::vector<EvalResult> evaluate(const PolicyModel& policy, const std::vector<MazeEnv>& suite,
                                 int episodes, uint64_t seed) {
    require(episodes >= 1, "evaluate: need at least one episode per env");
    require(!suite.empty(), "evaluate: empty suite");
    (void)seed; // greedy evaluation is deterministic; seed kept for interface stability

    std::vector<EvalResult> out;
    for (const MazeEnv& proto : suite) {
        int solved = 0;
        double total = 0.0;
        for (int ep = 0; ep < episodes; ++ep) {
            MazeEnv env = proto;
            std::vector<float> obs = reset(env);
            float ep_ret = 0.0f;
            while (!env.done) {
                Tensor row({1, static_cast<int64_t>(obs.size())}, obs);
                Tensor logits = policy_logits(policy, row);
                int a = 0;
                for (int c = 1; c < kActionCount; ++c)
                    if (logits.data[static_cast<size_t>(c)] > logits.data[static_cast<size_t>(a)])
                        a = c;
                StepResult r = step(env, static_cast<Action>(a));
                ep_ret += r.reward;
                obs = std::move(r.obs);
            }
            total += ep_ret;
            solved += ep_ret > 0.0f ? 1 : 0;
        }
        EvalResult res;
        res.solved_rate = static_cast<float>(solved) / static_cast<float>(episodes);
        res.mean_return = static_cast<float>(total / episodes);
        out.push_back(res);
    }
    return out;
}

} // namespace add
