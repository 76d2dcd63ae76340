#include "add/diffusion.hpp"

#include <cmath>

#include "add/optim.hpp"
#include "add/rng.hpp"

namespace add {

void ScoreModel::validate() const {
    spec.validate();
    require(theta_dim > 0, "score model: theta_dim must be positive");
    require(spec.widths.front() == theta_dim,
            "score model: input width must equal flattened theta width");
    require(spec.widths.back() == theta_dim,
            "score model: output width must equal flattened theta width");
    require(sched.T >= 2, "score model: schedule missing");
}

Tensor ScoreModel::eps(const Tensor& theta_t, int t) const {
    sched.check_t(t);
    // input-skip head: the identity-like part of the noise prediction is
    // analytic, the network only learns the bounded residual — a raw MLP head
    // would have to represent the identity map at high t, which it cannot do
    // below width ~2x the input dimension and learns very slowly above it
    const float ab = sched.alpha_bar_at(t);
    const float sa = std::sqrt(ab);
    const float se = std::sqrt(1.0f - ab);
    Tensor out = mlp_eval(spec, params, theta_t, {t});
    for (int64_t i = 0; i < out.numel(); ++i)
        out.data[static_cast<size_t>(i)] = se * theta_t.data[static_cast<size_t>(i)] +
                                           sa * out.data[static_cast<size_t>(i)];
    return out;
}

Tensor forward_marginal(const Tensor& theta0, int t, const Tensor& eps, const NoiseSchedule& sched) {
    sched.check_t(t);
    require(theta0.same_shape(eps), "forward_marginal: theta0/eps shape mismatch");
    const float ab = sched.alpha_bar_at(t);
    const float sa = std::sqrt(ab);
    const float se = std::sqrt(1.0f - ab);
    Tensor out = Tensor::zeros(theta0.shape);
    for (int64_t i = 0; i < out.numel(); ++i) out.data[i] = sa * theta0.data[i] + se * eps.data[i];
    return out;
}

Tensor forward_step(const Tensor& theta_prev, int t, const Tensor& z, const NoiseSchedule& sched) {
    sched.check_t(t);
    require(theta_prev.same_shape(z), "forward_step: theta/z shape mismatch");
    const float b = sched.beta_at(t);
    const float c = std::sqrt(1.0f - b);
    const float s = std::sqrt(b);
    Tensor out = Tensor::zeros(theta_prev.shape);
    for (int64_t i = 0; i < out.numel(); ++i) out.data[i] = c * theta_prev.data[i] + s * z.data[i];
    return out;
}

Tensor eps_to_score(const Tensor& eps_hat, int t, const NoiseSchedule& sched) {
    sched.check_t(t);
    const float inv = -1.0f / std::sqrt(1.0f - sched.alpha_bar_at(t));
    Tensor out = Tensor::zeros(eps_hat.shape);
    for (int64_t i = 0; i < out.numel(); ++i) out.data[i] = inv * eps_hat.data[i];
    return out;
}

Tape::NodeId score_match_loss(Tape& tape, const MlpSpec& spec,
                              const std::vector<Tape::NodeId>& param_ids, const Tensor& theta0,
                              const std::vector<int>& ts, const Tensor& eps,
                              const NoiseSchedule& sched) {
    const int64_t m = theta0.rows(), d = theta0.cols();
    require(eps.rows() == m && eps.cols() == d, "score_match_loss: eps batch shape mismatch");
    require(static_cast<int64_t>(ts.size()) == m, "score_match_loss: one t per batch row required");
    // noised inputs are constants w.r.t. the model parameters; the loss uses
    // the same input-skip head as ScoreModel::eps, per row since every row
    // carries its own t
    Tensor noised = Tensor::zeros({m, d});
    Tensor skip = Tensor::zeros({m, d});
    Tensor sa_mat = Tensor::zeros({m, d});
    for (int64_t i = 0; i < m; ++i) {
        const int t = ts[static_cast<size_t>(i)];
        sched.check_t(t);
        const float sa = std::sqrt(sched.alpha_bar_at(t));
        const float se = std::sqrt(1.0f - sched.alpha_bar_at(t));
        for (int64_t j = 0; j < d; ++j) {
            noised.at(i, j) = sa * theta0.at(i, j) + se * eps.at(i, j);
            skip.at(i, j) = se * noised.at(i, j);
            sa_mat.at(i, j) = sa;
        }
    }
    Tape::NodeId in = tape.leaf(std::move(noised), false);
    Tape::NodeId net = mlp_forward(tape, spec, param_ids, in, ts);
    Tape::NodeId out = tape.add(tape.leaf(std::move(skip), false),
                                tape.mul(tape.leaf(std::move(sa_mat), false), net));
    Tensor eps_mat({m, d}, eps.data);
    Tape::NodeId diff = tape.sub(tape.leaf(std::move(eps_mat), false), out);
    // per-sample squared-error summed over dims, averaged over the batch
    return tape.scale(tape.sum(tape.square(diff)), 1.0f / static_cast<float>(m));
}

float score_match_loss_value(const ScoreModel& model, const Tensor& theta0,
                             const std::vector<int>& ts, const Tensor& eps) {
    Tape tape;
    std::vector<Tape::NodeId> ids = params_on_tape(tape, model.params, false);
    Tape::NodeId loss = score_match_loss(tape, model.spec, ids, theta0, ts, eps, model.sched);
    return tape.val(loss).data[0];
}

ScoreModel train_generator(const Tensor& dataset, const MlpSpec& spec, const NoiseSchedule& sched,
                           const GenTrainHyper& hyper,
                           std::vector<std::pair<int, float>>* loss_log,
                           std::optional<std::pair<float, float>> bounds) {
    const int64_t count = dataset.rows(), d = dataset.cols();
    require(count >= 1 && dataset.numel() > 0, "train_generator: dataset must be non-empty");
    if (bounds) {
        for (float v : dataset.data)
            require(v >= bounds->first && v <= bounds->second,
                    "train_generator: dataset value outside declared parameter bounds");
    }
    ScoreModel model;
    model.spec = spec;
    model.sched = sched;
    model.theta_dim = static_cast<int>(d);
    model.validate();
    model.params = init_mlp(spec, derive_seed(hyper.seed, "gen.init"));
    OptState opt = OptState::make(model.params.tensors, hyper.lr, hyper.weight_decay, hyper.beta1,
                                  hyper.beta2, hyper.eps_opt);
    Rng rng(derive_seed(hyper.seed, "gen.train"));
    const int b = hyper.batch;
    for (int step = 1; step <= hyper.steps; ++step) {
        Tensor theta0 = Tensor::zeros({b, d});
        std::vector<int> ts(static_cast<size_t>(b));
        Tensor eps = Tensor::zeros({b, d});
        for (int i = 0; i < b; ++i) {
            const int64_t row = static_cast<int64_t>(rng.below(static_cast<uint64_t>(count)));
            for (int64_t j = 0; j < d; ++j) theta0.at(i, j) = dataset.at(row, j);
            ts[static_cast<size_t>(i)] = 1 + static_cast<int>(rng.below(static_cast<uint64_t>(sched.T)));
            for (int64_t j = 0; j < d; ++j) eps.at(i, j) = rng.gaussian();
        }
        Tape tape;
        std::vector<Tape::NodeId> ids = params_on_tape(tape, model.params, true);
        Tape::NodeId loss = score_match_loss(tape, spec, ids, theta0, ts, eps, sched);
        tape.backward(loss);
        std::vector<Tensor> grads = param_grads(tape, ids);
        optimizer_step(model.params.tensors, grads, opt);
        if (loss_log && (step % hyper.log_every == 0 || step == hyper.steps))
            loss_log->emplace_back(step, tape.val(loss).data[0]);
    }
    return model;
}

Tensor ddim_jump(const Tensor& theta_t, int t, int s, const Tensor& eps_hat,
                 const NoiseSchedule& sched) {
    sched.check_t(t);
    require(s >= 0 && s < t, "ddim_jump: target step must satisfy 0 <= s < t");
    require(theta_t.same_shape(eps_hat), "ddim_jump: theta/eps shape mismatch");
    const float ab_t = sched.alpha_bar_at(t);
    const float ab_s = sched.alpha_bar_at(s);
    require(ab_s <= 1.0f && ab_s >= ab_t, "ddim_jump: schedule invalid (alpha_bar not decreasing)");
    const float r = std::sqrt(ab_s / ab_t);
    const float c = r * std::sqrt(1.0f - ab_t) - std::sqrt(1.0f - ab_s);
    Tensor out = Tensor::zeros(theta_t.shape);
    for (int64_t i = 0; i < out.numel(); ++i) out.data[i] = r * theta_t.data[i] - c * eps_hat.data[i];
    return out;
}

Tensor ddim_step(const Tensor& theta_t, int t, const Tensor& eps_hat, const NoiseSchedule& sched) {
    sched.check_t(t);
    const float prev = sched.alpha_bar_at(t) / (1.0f - sched.beta_at(t));
    require(prev <= 1.0f, "ddim_step: schedule invalid, alpha_bar(t)/(1-beta_t) exceeds 1");
    return ddim_jump(theta_t, t, t - 1, eps_hat, sched);
}

Tensor guided_eps(const Tensor& eps_model, const Tensor& g, float omega, int t,
                  const NoiseSchedule& sched) {
    sched.check_t(t);
    require(eps_model.same_shape(g), "guided_eps: eps/gradient shape mismatch");
    if (omega == 0.0f) return eps_model; // exact unguided limit, bit-preserving
    const float c = std::sqrt(1.0f - sched.alpha_bar_at(t)) * omega;
    Tensor out = Tensor::zeros(eps_model.shape);
    for (int64_t i = 0; i < out.numel(); ++i) out.data[i] = eps_model.data[i] - c * g.data[i];
    return out;
}

Tensor sde_reverse_step(const Tensor& theta_t, int t, const Tensor& score, const Tensor& z,
                        const NoiseSchedule& sched) {
    sched.check_t(t);
    require(theta_t.same_shape(score) && theta_t.same_shape(z),
            "sde_reverse_step: shape mismatch");
    const float b = sched.beta_at(t);
    const float sb = std::sqrt(b);
    Tensor out = Tensor::zeros(theta_t.shape);
    for (int64_t i = 0; i < out.numel(); ++i)
        out.data[i] = theta_t.data[i] + b * (0.5f * theta_t.data[i] + score.data[i]) + sb * z.data[i];
    return out;
}

Tensor analytic_gaussian_eps(const Tensor& theta_t, int t, const NoiseSchedule& sched,
                             const Tensor& mu0, float sigma0) {
    sched.check_t(t);
    require(sigma0 > 0.0f, "analytic_gaussian_eps: sigma0 must be positive");
    const int64_t m = theta_t.rows(), d = theta_t.cols();
    require(mu0.numel() == d, "analytic_gaussian_eps: mu0 length must equal dim");
    const float ab = sched.alpha_bar_at(t);
    const float sa = std::sqrt(ab);
    const float num = std::sqrt(1.0f - ab);
    const float den = ab * sigma0 * sigma0 + 1.0f - ab;
    Tensor out = Tensor::zeros(theta_t.shape);
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < d; ++j)
            out.data[static_cast<size_t>(i * d + j)] =
                (theta_t.data[static_cast<size_t>(i * d + j)] - sa * mu0.data[static_cast<size_t>(j)]) *
                num / den;
    return out;
}

Tensor sample(const EpsFn& eps_fn, const NoiseSchedule& sched, int theta_dim, int T_prime,
              const GuidanceFn* guidance, int batch, uint64_t seed,
              std::optional<std::pair<float, float>> clamp_bounds, SampleTrace* trace) {
    require(theta_dim > 0, "sample: theta_dim must be positive");
    require(T_prime >= 1 && T_prime <= sched.T, "sample: need 1 <= T_prime <= T");
    require(sched.T % T_prime == 0,
            "sample: T_prime must divide T for a uniform timestep subsequence");
    require(batch >= 0, "sample: batch must be non-negative");
    if (batch == 0) return Tensor{};
    const int stride = sched.T / T_prime;
    Rng rng(seed);
    Tensor theta = Tensor::gaussian({batch, theta_dim}, rng);
    if (trace) {
        trace->seed = seed;
        trace->steps.clear();
    }
    for (int t = sched.T; t >= stride; t -= stride) {
        Tensor eps_hat = eps_fn(theta, t);
        require(eps_hat.same_shape(theta), "sample: eps callable returned wrong shape");
        if (guidance && guidance->grad) {
            Tensor g = guidance->grad(theta, t);
            require(g.same_shape(theta), "sample: guidance gradient has wrong shape");
            require(g.all_finite(), "sample: guidance gradient is not finite");
            eps_hat = guided_eps(eps_hat, g, guidance->omega, t, sched);
        }
        if (trace) trace->steps.push_back({t, theta, eps_hat});
        theta = ddim_jump(theta, t, t - stride, eps_hat, sched);
    }
    if (clamp_bounds) {
        for (float& v : theta.data)
            v = v < clamp_bounds->first ? clamp_bounds->first
                                        : (v > clamp_bounds->second ? clamp_bounds->second : v);
    }
    return theta;
}

Tensor sample(const ScoreModel& model, int T_prime, const GuidanceFn* guidance, int batch,
              uint64_t seed, std::optional<std::pair<float, float>> clamp_bounds,
              SampleTrace* trace) {
    model.validate();
    EpsFn fn = [&model](const Tensor& th, int t) { return model.eps(th, t); };
    return sample(fn, model.sched, model.theta_dim, T_prime, guidance, batch, seed, clamp_bounds,
                  trace);
}

} // namespace add
