#include "add/critic.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "add/rng.hpp"

namespace add {

ReturnSupport make_support(int M, float v_min, float v_max) {
    require(M >= 2, "support: need at least two bins, got " + std::to_string(M));
    require(v_min < v_max, "support: v_min must be below v_max");
    ReturnSupport s;
    s.M = M;
    s.v_min = v_min;
    s.v_max = v_max;
    s.delta = (v_max - v_min) / static_cast<float>(M);
    s.z.resize(static_cast<size_t>(M));
    for (int i = 0; i < M; ++i)
        s.z[static_cast<size_t>(i)] =
            v_min + static_cast<float>(i) / static_cast<float>(M - 1) * (v_max - v_min);
    return s;
}

float ReturnDistribution::mean() const {
    double acc = 0.0;
    for (size_t i = 0; i < p.size(); ++i) acc += static_cast<double>(p[i]) * support.z[i];
    return static_cast<float>(acc);
}

ReturnDistribution logits_to_distribution(const std::vector<float>& logits,
                                          const ReturnSupport& support) {
    require(static_cast<int>(logits.size()) == support.M, "distribution: logit width != M");
    float hi = logits[0];
    for (float l : logits) {
        require(std::isfinite(l), "distribution: non-finite logit");
        hi = std::max(hi, l);
    }
    ReturnDistribution d;
    d.support = support;
    d.p.resize(logits.size());
    double total = 0.0;
    for (size_t i = 0; i < logits.size(); ++i) {
        d.p[i] = std::exp(logits[i] - hi);
        total += d.p[i];
    }
    for (float& v : d.p) v = static_cast<float>(v / total);
    return d;
}

ReturnDistribution project_returns(const std::vector<float>& returns,
                                   const ReturnSupport& support) {
    require(!returns.empty(), "projection: empty returns");
    const size_t M = static_cast<size_t>(support.M);
    const double K = static_cast<double>(returns.size());
    std::vector<double> w(M, 0.0);
    std::vector<float> clamped(returns.size());
    for (size_t k = 0; k < returns.size(); ++k)
        clamped[k] = std::clamp(returns[k], support.v_min, support.v_max);

    for (float v : clamped)
        for (size_t i = 0; i < M; ++i) {
            const double raw = 1.0 - std::abs(v - support.z[i]) / support.delta;
            w[i] += std::clamp(raw, 0.0, 1.0) / K;
        }

    double total = 0.0;
    for (double x : w) total += x;

    ReturnDistribution d;
    d.support = support;
    d.p.assign(M, 0.0f);
    if (total > 0.0) {
        for (size_t i = 0; i < M; ++i) d.p[i] = static_cast<float>(w[i] / total);
        return d;
    }

    // every raw weight vanished (the projection width is narrower than the
    // support spacing): give each return unit mass on its nearest bin,
    // splitting equally on an exact midpoint tie
    for (float v : clamped) {
        size_t best = 0;
        float best_dist = std::abs(v - support.z[0]);
        for (size_t i = 1; i < M; ++i) {
            const float dist = std::abs(v - support.z[i]);
            if (dist < best_dist) {
                best = i;
                best_dist = dist;
            }
        }
        size_t tie = best;
        for (size_t i = 0; i < M; ++i)
            if (i != best && std::abs(v - support.z[i]) == best_dist) tie = i;
        if (tie != best) {
            d.p[best] += static_cast<float>(0.5 / K);
            d.p[tie] += static_cast<float>(0.5 / K);
        } else {
            d.p[best] += static_cast<float>(1.0 / K);
        }
    }
    return d;
}

float cvar(const ReturnDistribution& dist, float alpha) {
    require(alpha > 0.0f && alpha <= 1.0f, "cvar: alpha out of (0,1]");
    double budget = alpha;
    double acc = 0.0;
    for (int i = dist.support.M - 1; i >= 0; --i) {
        const double w = std::min(static_cast<double>(dist.p[static_cast<size_t>(i)]), budget);
        acc += w * dist.support.z[static_cast<size_t>(i)];
        budget -= w;
    }
    return static_cast<float>(acc / alpha);
}

float regret_estimate(const ReturnDistribution& dist, float alpha) {
    return cvar(dist, alpha) - dist.mean();
}

Tape::NodeId regret_on_tape(Tape& tape, Tape::NodeId probs, const ReturnSupport& support,
                            float alpha) {
    require(alpha > 0.0f && alpha <= 1.0f, "cvar: alpha out of (0,1]");
    const Tensor& p = tape.val(probs);
    require(p.cols() == support.M, "cvar: probability width != M");
    const int64_t rows = p.rows();

    auto col = [&](int i) {
        return tape.gather_cols(probs, std::vector<int>(static_cast<size_t>(rows), i));
    };

    Tape::NodeId budget = tape.leaf(Tensor::full({rows, 1}, alpha), false);
    Tape::NodeId acc = tape.leaf(Tensor::zeros({rows, 1}), false);
    Tape::NodeId mean = tape.leaf(Tensor::zeros({rows, 1}), false);
    for (int i = support.M - 1; i >= 0; --i) {
        Tape::NodeId pi = col(i);
        Tape::NodeId w = tape.min2(pi, budget);
        acc = tape.add(acc, tape.scale(w, support.z[static_cast<size_t>(i)]));
        budget = tape.sub(budget, w);
        mean = tape.add(mean, tape.scale(pi, support.z[static_cast<size_t>(i)]));
    }
    return tape.sub(tape.scale(acc, 1.0f / alpha), mean);
}

void CriticModel::validate() const {
    spec.validate();
    require(theta_dim > 0, "critic: theta dimension must be positive");
    require(spec.widths.front() == theta_dim, "critic: input width != theta dimension");
    require(spec.widths.back() == support.M, "critic: output width != bin count");
}

Tensor CriticModel::logits(const Tensor& theta_t, int t) const {
    std::vector<int> ts(static_cast<size_t>(theta_t.rows()), t);
    return mlp_eval(spec, params, theta_t, ts);
}

ReturnDistribution CriticModel::distribution(const Tensor& theta_row, int t) const {
    Tensor l = logits(theta_row, t);
    require(l.rows() == 1, "critic: distribution expects a single row");
    return logits_to_distribution(l.data, support);
}

void GuidanceConfig::validate(int M) const {
    require(omega >= 0.0f, "guidance: omega must be non-negative");
    require(alpha > 0.0f && alpha <= 1.0f, "guidance: alpha out of (0,1]");
    require(k >= 1 && k <= M, "guidance: difficulty level out of 1..M");
}

namespace {

// shared scaffolding: theta leaf -> critic logits on tape
struct CriticChain {
    Tape tape;
    Tape::NodeId theta = -1;
    Tape::NodeId logits = -1;
};

void build_chain(CriticChain& c, const CriticModel& model, const Tensor& theta_t, int t) {
    model.validate();
    require(theta_t.cols() == model.theta_dim, "guidance: theta width mismatch");
    model.sched.check_t(t);
    c.theta = c.tape.leaf(theta_t, true);
    auto ids = params_on_tape(c.tape, model.params, false);
    std::vector<int> ts(static_cast<size_t>(theta_t.rows()), t);
    c.logits = mlp_forward(c.tape, model.spec, ids, c.theta, ts);
}

Tensor finite_grad_or_throw(Tape& tape, Tape::NodeId loss, Tape::NodeId theta,
                            const char* what) {
    tape.backward(loss);
    Tensor g = tape.grad(theta);
    require(g.all_finite(), std::string(what) + ": non-finite gradient");
    return g;
}

} // namespace

Tensor regret_input_gradient(const CriticModel& model, const Tensor& theta_t, int t,
                             const GuidanceConfig& config) {
    config.validate(model.support.M);
    CriticChain c;
    build_chain(c, model, theta_t, t);
    Tape::NodeId probs = c.tape.exp_op(c.tape.log_softmax_cols(c.logits));
    Tape::NodeId per_row = regret_on_tape(c.tape, probs, model.support, config.alpha);
    return finite_grad_or_throw(c.tape, c.tape.sum(per_row), c.theta, "regret guidance");
}

Tensor difficulty_logprob_grad(const CriticModel& model, const Tensor& theta_t, int t, int k) {
    require(k >= 1 && k <= model.support.M, "guidance: difficulty level out of 1..M");
    CriticChain c;
    build_chain(c, model, theta_t, t);
    Tape::NodeId logp = c.tape.log_softmax_cols(c.logits);
    const int64_t rows = theta_t.rows();
    Tape::NodeId picked = c.tape.gather_cols(
        logp, std::vector<int>(static_cast<size_t>(rows), model.support.M - k));
    return finite_grad_or_throw(c.tape, c.tape.sum(picked), c.theta, "difficulty guidance");
}

GuidanceFn make_guidance(const CriticModel& model, const GuidanceConfig& config) {
    config.validate(model.support.M);
    GuidanceFn fn;
    fn.omega = config.omega;
    if (config.mode == GuidanceMode::regret) {
        fn.grad = [&model, config](const Tensor& theta_t, int t) {
            return regret_input_gradient(model, theta_t, t, config);
        };
    } else {
        fn.grad = [&model, config](const Tensor& theta_t, int t) {
            return difficulty_logprob_grad(model, theta_t, t, config.k);
        };
    }
    return fn;
}

CriticBuffer::CriticBuffer(int capacity) : capacity_(capacity) {
    require(capacity > 0, "buffer: capacity must be positive");
}

void CriticBuffer::push(const Tensor& theta0, const std::vector<float>& returns,
                        const ReturnSupport& support) {
    Entry e;
    e.theta0 = theta0;
    e.target = project_returns(returns, support).p;
    if (static_cast<int>(entries_.size()) == capacity_) entries_.erase(entries_.begin());
    entries_.push_back(std::move(e));
}

void CriticBuffer::restore(const Tensor& theta0, std::vector<float> target) {
    require(!target.empty(), "buffer: restore with empty target");
    Entry e;
    e.theta0 = theta0;
    e.target = std::move(target);
    if (static_cast<int>(entries_.size()) == capacity_) entries_.erase(entries_.begin());
    entries_.push_back(std::move(e));
}

std::vector<CriticBuffer::Entry> CriticBuffer::sample(int n, uint64_t seed) const {
    require(n >= 0, "buffer: negative sample count");
    std::vector<Entry> out;
    if (n == 0) return out;
    require(!entries_.empty(), "buffer: sample from empty buffer");
    Rng rng(seed);
    out.reserve(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i)
        out.push_back(entries_[rng.below(entries_.size())]);
    return out;
}

std::vector<float> critic_update(CriticModel& model, const CriticBuffer& buffer,
                                 const CriticUpdateHyper& hyper, OptState& opt) {
    model.validate();
    require(buffer.size() > 0, "critic update: empty buffer");
    require(hyper.minibatches >= 1 && hyper.batch >= 1, "critic update: batch shape invalid");

    const int d = model.theta_dim;
    const int M = model.support.M;
    std::vector<float> losses;
    for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
        for (int mb = 0; mb < hyper.minibatches; ++mb) {
            Rng rng(derive_seed(hyper.seed, "critic.update." + std::to_string(epoch) + "." +
                                                std::to_string(mb)));
            auto entries = buffer.sample(hyper.batch, rng.next_u64());

            const int64_t B = static_cast<int64_t>(entries.size());
            Tensor noised = Tensor::zeros({B, d});
            Tensor target = Tensor::zeros({B, M});
            std::vector<int> ts(static_cast<size_t>(B));
            for (int64_t r = 0; r < B; ++r) {
                const auto& e = entries[static_cast<size_t>(r)];
                require(e.theta0.numel() == d, "critic update: buffer entry width mismatch");
                const int t = 1 + static_cast<int>(rng.below(static_cast<uint64_t>(model.sched.T)));
                ts[static_cast<size_t>(r)] = t;
                Tensor eps = Tensor::gaussian({1, d}, rng);
                Tensor row({1, d}, e.theta0.data);
                Tensor xt = forward_marginal(row, t, eps, model.sched);
                for (int64_t c = 0; c < d; ++c) noised.at(r, c) = xt.data[static_cast<size_t>(c)];
                for (int64_t c = 0; c < M; ++c)
                    target.at(r, c) = e.target[static_cast<size_t>(c)];
            }

            Tape tape;
            auto ids = params_on_tape(tape, model.params, true);
            Tape::NodeId logp =
                tape.log_softmax_cols(mlp_forward(tape, model.spec, ids, tape.leaf(noised, false), ts));
            Tape::NodeId ce = tape.scale(
                tape.sum(tape.mul(tape.leaf(target, false), logp)), -1.0f / static_cast<float>(B));
            tape.backward(ce);
            losses.push_back(tape.val(ce).data[0]);

            std::vector<Tensor> grads = param_grads(tape, ids);
            optimizer_step(model.params.tensors, grads, opt, param_names("critic", model.spec));
        }
    }
    return losses;
}

} // namespace add
