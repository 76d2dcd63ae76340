#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "add/critic.hpp"
#include "add/rng.hpp"

using namespace add;

namespace {

ReturnDistribution dist_of(const std::vector<float>& p, const ReturnSupport& s) {
    ReturnDistribution d;
    d.support = s;
    d.p = p;
    return d;
}

// a small critic whose net is fully specified by hand
CriticModel hand_critic(int d, int M, uint64_t seed, int hidden = 16) {
    CriticModel m;
    m.spec = MlpSpec{{d, hidden, M}, Activation::tanh_, 4};
    m.params = init_mlp(m.spec, seed);
    m.support = make_support(M, 0.0f, 1.0f);
    m.sched = build_schedule(10, 0.01f, 0.05f);
    m.theta_dim = d;
    return m;
}

} // namespace

TEST_CASE("support centers and width follow their defining formulas") {
    ReturnSupport s = make_support(4, 0.0f, 1.0f);
    REQUIRE(s.z.size() == 4);
    CHECK(s.z[0] == doctest::Approx(0.0f));
    CHECK(s.z[1] == doctest::Approx(1.0f / 3.0f));
    CHECK(s.z[2] == doctest::Approx(2.0f / 3.0f));
    CHECK(s.z[3] == doctest::Approx(1.0f));
    CHECK(s.delta == doctest::Approx(0.25f));

    ReturnSupport two = make_support(2, 0.0f, 1.0f);
    CHECK(two.z[0] == 0.0f);
    CHECK(two.z[1] == 1.0f);
    CHECK(two.delta == doctest::Approx(0.5f));

    ReturnSupport paper = make_support(100, 0.0f, 1.0f);
    CHECK(paper.z.front() == 0.0f);
    CHECK(paper.z.back() == 1.0f);
    CHECK(paper.delta == doctest::Approx(0.01f));
    for (size_t i = 1; i < paper.z.size(); ++i) CHECK(paper.z[i] > paper.z[i - 1]);

    CHECK_THROWS_AS(make_support(1, 0.0f, 1.0f), contract_error);
    CHECK_THROWS_AS(make_support(4, 1.0f, 1.0f), contract_error);
    CHECK_THROWS_AS(make_support(4, 2.0f, 1.0f), contract_error);
}

TEST_CASE("softmax of logits behaves as a categorical distribution") {
    ReturnSupport s = make_support(5, 0.0f, 1.0f);
    ReturnDistribution uniform = logits_to_distribution({0, 0, 0, 0, 0}, s);
    for (float p : uniform.p) CHECK(p == doctest::Approx(0.2f).epsilon(1e-6));

    // e^10 against four unit terms: 1/(1 + 4e^-10) = 0.99982
    ReturnDistribution peaked = logits_to_distribution({10, 0, 0, 0, 0}, s);
    CHECK(peaked.p[0] > 0.999f);

    ReturnDistribution a = logits_to_distribution({0.3f, -1.0f, 2.0f, 0.0f, 1.1f}, s);
    ReturnDistribution b = logits_to_distribution({0.3f + 7.0f, -1.0f + 7.0f, 2.0f + 7.0f,
                                                   0.0f + 7.0f, 1.1f + 7.0f},
                                                  s);
    double total = 0.0;
    for (size_t i = 0; i < a.p.size(); ++i) {
        CHECK(a.p[i] == doctest::Approx(b.p[i]).epsilon(1e-6));
        CHECK(a.p[i] > 0.0f);
        total += a.p[i];
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("return projection reproduces its hand-computed cases") {
    ReturnSupport four = make_support(4, 0.0f, 1.0f);
    ReturnDistribution d0 = project_returns({0.0f}, four);
    CHECK(d0.p[0] == doctest::Approx(1.0f));
    CHECK(d0.p[1] == doctest::Approx(0.0f));
    CHECK(d0.p[2] == doctest::Approx(0.0f));
    CHECK(d0.p[3] == doctest::Approx(0.0f));

    ReturnSupport two = make_support(2, 0.0f, 1.0f);
    ReturnDistribution quarter = project_returns({0.25f}, two);
    CHECK(quarter.p[0] == doctest::Approx(1.0f)); // raw (0.5, 0) renormalized
    CHECK(quarter.p[1] == doctest::Approx(0.0f));

    // both distances equal the projection width, so raw weights vanish and
    // the nearest-bin fallback splits the exact midpoint tie
    ReturnDistribution half = project_returns({0.5f}, two);
    CHECK(half.p[0] == doctest::Approx(0.5f));
    CHECK(half.p[1] == doctest::Approx(0.5f));

    CHECK_THROWS_AS(project_returns({}, two), contract_error);

    // out-of-range returns clamp into the support before projecting
    ReturnDistribution high = project_returns({1.7f}, two);
    CHECK(high.p[0] == doctest::Approx(0.0f));
    CHECK(high.p[1] == doctest::Approx(1.0f));
}

TEST_CASE("random projections are normalized and stay near their returns") {
    Rng rng(33);
    for (int trial = 0; trial < 50; ++trial) {
        const int M = 2 + static_cast<int>(rng.below(20));
        ReturnSupport s = make_support(M, 0.0f, 1.0f);
        std::vector<float> returns;
        const int K = 1 + static_cast<int>(rng.below(6));
        for (int k = 0; k < K; ++k) returns.push_back(static_cast<float>(rng.unit()) * 1.4f - 0.2f);
        ReturnDistribution d = project_returns(returns, s);

        double total = 0.0;
        for (float p : d.p) total += p;
        CHECK(total == doctest::Approx(1.0).epsilon(1e-6));

        const float spacing = 1.0f / static_cast<float>(M - 1);
        for (size_t i = 0; i < d.p.size(); ++i) {
            if (d.p[i] <= 0.0f) continue;
            float nearest = 10.0f;
            for (float v : returns) {
                const float cl = std::clamp(v, 0.0f, 1.0f);
                nearest = std::min(nearest, std::abs(cl - s.z[i]));
            }
            CHECK(nearest <= spacing + 1e-6f);
        }
    }
}

TEST_CASE("upper-tail risk scan matches the hand-worked examples") {
    ReturnSupport s = make_support(3, 0.0f, 1.0f);
    ReturnDistribution d = dist_of({0.2f, 0.3f, 0.5f}, s);
    CHECK(cvar(d, 0.5f) == doctest::Approx(1.0f));
    CHECK(cvar(d, 0.8f) == doctest::Approx(0.8125f));
    CHECK(cvar(d, 1.0f) == doctest::Approx(0.65f));
    CHECK(d.mean() == doctest::Approx(0.65f));
    CHECK_THROWS_AS(cvar(d, 0.0f), contract_error);
    CHECK_THROWS_AS(cvar(d, 1.5f), contract_error);
}

TEST_CASE("risk value is monotone in its level and floors at the mean") {
    Rng rng(7);
    for (int trial = 0; trial < 20; ++trial) {
        const int M = 3 + static_cast<int>(rng.below(12));
        ReturnSupport s = make_support(M, 0.0f, 1.0f);
        std::vector<float> logits;
        for (int i = 0; i < M; ++i) logits.push_back(static_cast<float>(rng.gaussian()));
        ReturnDistribution d = logits_to_distribution(logits, s);

        float prev = 2.0f;
        for (float a : {0.05f, 0.1f, 0.25f, 0.5f, 0.75f, 1.0f}) {
            const float c = cvar(d, a);
            CHECK(c <= prev + 1e-6f);
            CHECK(c >= d.mean() - 1e-6f);
            prev = c;
        }
        CHECK(cvar(d, 1.0f) == doctest::Approx(d.mean()).epsilon(1e-6));

        // half the top bin's mass keeps the scan inside that bin
        const float ptop = d.p.back();
        if (ptop > 1e-4f) CHECK(cvar(d, ptop / 2.0f) == doctest::Approx(s.z.back()));
    }
}

TEST_CASE("regret is the tail average minus the mean and never negative") {
    ReturnSupport s = make_support(3, 0.0f, 1.0f);
    ReturnDistribution d = dist_of({0.2f, 0.3f, 0.5f}, s);
    CHECK(regret_estimate(d, 0.5f) == doctest::Approx(0.35f));

    ReturnSupport two = make_support(2, 0.0f, 1.0f);
    CHECK(regret_estimate(dist_of({0.5f, 0.5f}, two), 0.5f) == doctest::Approx(0.5f));

    for (int i = 0; i < 3; ++i) {
        std::vector<float> point(3, 0.0f);
        point[static_cast<size_t>(i)] = 1.0f;
        for (float a : {0.1f, 0.5f, 1.0f})
            CHECK(regret_estimate(dist_of(point, s), a) == doctest::Approx(0.0f));
    }

    Rng rng(13);
    for (int trial = 0; trial < 30; ++trial) {
        std::vector<float> logits;
        for (int i = 0; i < 3; ++i) logits.push_back(static_cast<float>(rng.gaussian()));
        ReturnDistribution r = logits_to_distribution(logits, s);
        const float a = 0.05f + 0.95f * static_cast<float>(rng.unit());
        CHECK(regret_estimate(r, a) >= -1e-6f);
    }
}

TEST_CASE("taped regret agrees with the scalar scan on random batches") {
    Rng rng(41);
    ReturnSupport s = make_support(9, 0.0f, 1.0f);
    Tensor logits = Tensor::gaussian({6, 9}, rng);
    Tape tape;
    Tape::NodeId p = tape.exp_op(tape.log_softmax_cols(tape.leaf(logits, false)));
    Tape::NodeId reg = regret_on_tape(tape, p, s, 0.3f);
    for (int64_t r = 0; r < 6; ++r) {
        std::vector<float> row;
        for (int64_t c = 0; c < 9; ++c) row.push_back(logits.at(r, c));
        ReturnDistribution d = logits_to_distribution(row, s);
        CHECK(tape.val(reg).at(r, 0) == doctest::Approx(regret_estimate(d, 0.3f)).epsilon(1e-5));
    }
}

TEST_CASE("zero-weight critic produces exactly zero guidance gradients") {
    CriticModel m = hand_critic(4, 8, 1);
    for (Tensor& t : m.params.tensors)
        for (float& v : t.data) v = 0.0f;
    Rng rng(2);
    Tensor theta = Tensor::gaussian({3, 4}, rng);
    GuidanceConfig cfg;
    cfg.alpha = 0.25f;
    Tensor g = regret_input_gradient(m, theta, 5, cfg);
    for (float v : g.data) CHECK(v == 0.0f);
    Tensor gd = difficulty_logprob_grad(m, theta, 5, 1);
    for (float v : gd.data) CHECK(v == 0.0f);
}

TEST_CASE("regret guidance gradient passes the finite-difference oracle") {
    CriticModel m = hand_critic(4, 8, 21);
    Rng rng(3);
    Tensor theta = Tensor::gaussian({2, 4}, rng);
    const int t = 4;
    const float alpha = 0.3f;

    auto chain = [&](Tape& tape, Tape::NodeId x) -> Tape::NodeId {
        auto ids = params_on_tape(tape, m.params, false);
        std::vector<int> ts(2, t);
        Tape::NodeId logits = mlp_forward(tape, m.spec, ids, x, ts);
        Tape::NodeId p = tape.exp_op(tape.log_softmax_cols(logits));
        return tape.sum(regret_on_tape(tape, p, m.support, alpha));
    };
    CHECK(finite_diff_check(chain, theta, 5e-3f) <= 1e-3f);

    // the packaged op must return the same gradient the chain produces
    GuidanceConfig cfg;
    cfg.alpha = alpha;
    Tensor got = regret_input_gradient(m, theta, t, cfg);
    Tape tape;
    Tape::NodeId leaf = tape.leaf(theta, true);
    tape.backward(chain(tape, leaf));
    Tensor want = tape.grad(leaf);
    REQUIRE(got.numel() == want.numel());
    for (int64_t i = 0; i < got.numel(); ++i)
        CHECK(got.data[i] == doctest::Approx(want.data[i]).epsilon(1e-6));
}

TEST_CASE("difficulty guidance gradient passes the finite-difference oracle") {
    CriticModel m = hand_critic(3, 6, 9);
    Rng rng(5);
    Tensor theta = Tensor::gaussian({2, 3}, rng);
    const int t = 7;
    const int k = 2;
    auto chain = [&](Tape& tape, Tape::NodeId x) -> Tape::NodeId {
        auto ids = params_on_tape(tape, m.params, false);
        std::vector<int> ts(2, t);
        Tape::NodeId logp = tape.log_softmax_cols(mlp_forward(tape, m.spec, ids, x, ts));
        return tape.sum(tape.gather_cols(logp, {m.support.M - k, m.support.M - k}));
    };
    CHECK(finite_diff_check(chain, theta, 1e-2f) <= 1e-3f);

    CHECK_THROWS_AS(difficulty_logprob_grad(m, theta, t, 0), contract_error);
    CHECK_THROWS_AS(difficulty_logprob_grad(m, theta, t, 7), contract_error);
}

TEST_CASE("difficulty guidance picks the k-th highest bin of a linear critic") {
    // single linear layer, no time embedding: logits = theta . W, so the
    // gradient of log p_{M-k} at uniform logits is W_col - row-average of W
    CriticModel m;
    m.spec = MlpSpec{{2, 3}, Activation::relu, 0};
    m.params.tensors = {Tensor({2, 3}, {1.0f, 0.0f, 2.0f, 0.0f, 1.0f, 0.0f}), Tensor::zeros({3})};
    m.support = make_support(3, 0.0f, 1.0f);
    m.sched = build_schedule(10, 0.01f, 0.05f);
    m.theta_dim = 2;

    Tensor theta = Tensor::zeros({1, 2});
    Tensor g1 = difficulty_logprob_grad(m, theta, 1, 1); // top bin = column 2
    CHECK(g1.at(0, 0) == doctest::Approx(2.0f - 1.0f));
    CHECK(g1.at(0, 1) == doctest::Approx(0.0f - 1.0f / 3.0f));
    Tensor g3 = difficulty_logprob_grad(m, theta, 1, 3); // lowest bin = column 0
    CHECK(g3.at(0, 0) == doctest::Approx(1.0f - 1.0f));
    CHECK(g3.at(0, 1) == doctest::Approx(0.0f - 1.0f / 3.0f));
}

TEST_CASE("guidance gradients ignore constant shifts of the critic logits") {
    CriticModel m = hand_critic(4, 8, 17);
    CriticModel shifted = m;
    for (float& v : shifted.params.tensors.back().data) v += 3.0f; // last-layer bias
    Rng rng(6);
    Tensor theta = Tensor::gaussian({2, 4}, rng);
    GuidanceConfig cfg;
    cfg.alpha = 0.2f;
    Tensor a = regret_input_gradient(m, theta, 3, cfg);
    Tensor b = regret_input_gradient(shifted, theta, 3, cfg);
    for (int64_t i = 0; i < a.numel(); ++i)
        CHECK(a.data[i] == doctest::Approx(b.data[i]).epsilon(1e-5));
    Tensor da = difficulty_logprob_grad(m, theta, 3, 2);
    Tensor db = difficulty_logprob_grad(shifted, theta, 3, 2);
    for (int64_t i = 0; i < da.numel(); ++i)
        CHECK(da.data[i] == doctest::Approx(db.data[i]).epsilon(1e-5));
}

TEST_CASE("guidance gradients stay finite across logit scale sweeps") {
    for (float c : {0.1f, 1.0f, 10.0f}) {
        CriticModel m = hand_critic(4, 8, 23);
        for (float& v : m.params.tensors[2].data) v *= c; // logits-layer weights
        Rng rng(8);
        Tensor theta = Tensor::gaussian({2, 4}, rng);
        GuidanceConfig cfg;
        cfg.alpha = 0.15f;
        Tensor g = regret_input_gradient(m, theta, 2, cfg);
        CHECK(g.all_finite());
        Tensor gd = difficulty_logprob_grad(m, theta, 2, 1);
        CHECK(gd.all_finite());
    }
}

TEST_CASE("buffer evicts oldest entries first and samples uniformly") {
    ReturnSupport s = make_support(4, 0.0f, 1.0f);
    CriticBuffer buf(3);
    for (int i = 0; i < 4; ++i)
        buf.push(Tensor::full({2}, static_cast<float>(i)), {0.5f}, s);
    CHECK(buf.size() == 3);
    CHECK(buf.entry(0).theta0.data[0] == 1.0f); // the 0-valued entry was evicted
    CHECK(buf.entry(2).theta0.data[0] == 3.0f);

    CHECK(buf.sample(0, 1).empty());
    CriticBuffer empty(2);
    CHECK_THROWS_AS(empty.sample(1, 1), contract_error);

    std::vector<int> counts(3, 0);
    auto draws = buf.sample(100000, 99);
    for (const auto& e : draws) counts[static_cast<size_t>(e.theta0.data[0]) - 1]++;
    for (int c : counts)
        CHECK(std::abs(c / 100000.0 - 1.0 / 3.0) < 0.02 / 3.0 + 0.01);
}

TEST_CASE("buffer sampling frequencies are uniform within two percent") {
    ReturnSupport s = make_support(2, 0.0f, 1.0f);
    CriticBuffer buf(3);
    for (int i = 0; i < 3; ++i)
        buf.push(Tensor::full({1}, static_cast<float>(i)), {0.0f}, s);
    std::vector<int> counts(3, 0);
    for (const auto& e : buf.sample(100000, 4242))
        counts[static_cast<size_t>(e.theta0.data[0])]++;
    for (int c : counts) {
        const double freq = c / 100000.0;
        CHECK(freq == doctest::Approx(1.0 / 3.0).epsilon(0.02));
    }
}

TEST_CASE("critic training with zero epochs leaves parameters untouched") {
    CriticModel m = hand_critic(3, 4, 31);
    CriticModel before = m;
    CriticBuffer buf(8);
    buf.push(Tensor::full({3}, 0.5f), {0.7f}, m.support);
    OptState opt = OptState::make(m.params.tensors, 1e-3f);
    CriticUpdateHyper hyper;
    hyper.epochs = 0;
    hyper.minibatches = 4;
    critic_update(m, buf, hyper, opt);
    for (size_t i = 0; i < m.params.tensors.size(); ++i)
        for (int64_t j = 0; j < m.params.tensors[i].numel(); ++j)
            CHECK(m.params.tensors[i].data[j] == before.params.tensors[i].data[j]);
}

TEST_CASE("critic training rejects an empty buffer") {
    CriticModel m = hand_critic(3, 4, 31);
    CriticBuffer buf(8);
    OptState opt = OptState::make(m.params.tensors, 1e-3f);
    CriticUpdateHyper hyper;
    CHECK_THROWS_AS(critic_update(m, buf, hyper, opt), contract_error);
}

TEST_CASE("critic training is deterministic for a fixed seed") {
    auto run = [] {
        CriticModel m = hand_critic(3, 4, 31);
        CriticBuffer buf(8);
        buf.push(Tensor::full({3}, 0.5f), {0.7f}, m.support);
        buf.push(Tensor::full({3}, 0.1f), {0.2f}, m.support);
        OptState opt = OptState::make(m.params.tensors, 1e-3f);
        CriticUpdateHyper hyper;
        hyper.epochs = 2;
        hyper.minibatches = 3;
        hyper.batch = 4;
        hyper.seed = 77;
        critic_update(m, buf, hyper, opt);
        return m;
    };
    CriticModel a = run(), b = run();
    for (size_t i = 0; i < a.params.tensors.size(); ++i)
        for (int64_t j = 0; j < a.params.tensors[i].numel(); ++j)
            CHECK(a.params.tensors[i].data[j] == b.params.tensors[i].data[j]);
}

TEST_CASE("overfitting one buffer entry drives cross-entropy to the target entropy") {
    CriticModel m = hand_critic(3, 8, 15, 32);
    CriticBuffer buf(4);
    Tensor theta0({3}, {0.2f, 0.6f, 0.9f});
    buf.push(theta0, {0.35f}, m.support);

    double target_entropy = 0.0;
    for (float p : buf.entry(0).target)
        if (p > 0.0f) target_entropy -= static_cast<double>(p) * std::log(p);

    OptState opt = OptState::make(m.params.tensors, 3e-3f);
    CriticUpdateHyper hyper;
    hyper.epochs = 1;
    hyper.minibatches = 400;
    hyper.batch = 8;
    hyper.seed = 5;
    std::vector<float> losses = critic_update(m, buf, hyper, opt);

    double tail = 0.0;
    for (size_t i = losses.size() - 50; i < losses.size(); ++i) tail += losses[i];
    tail /= 50.0;
    CHECK(tail >= target_entropy - 1e-4);
    CHECK(tail - target_entropy <= 0.08);
}

TEST_CASE("point-mass targets teach the critic the right bin at low noise") {
    CriticModel m = hand_critic(2, 8, 3, 32);
    CriticBuffer buf(4);
    // support spacing exceeds the projection width, so an exact center is a
    // point mass on its own bin
    const int j = 5;
    Tensor theta0({2}, {0.3f, 0.8f});
    buf.push(theta0, {m.support.z[j]}, m.support);
    CHECK(buf.entry(0).target[j] == doctest::Approx(1.0f));

    OptState opt = OptState::make(m.params.tensors, 3e-3f);
    CriticUpdateHyper hyper;
    hyper.epochs = 1;
    hyper.minibatches = 300;
    hyper.batch = 8;
    hyper.seed = 6;
    critic_update(m, buf, hyper, opt);

    Tensor row({1, 2}, {0.3f, 0.8f});
    Tensor logits = m.logits(row, 1);
    int argmax = 0;
    for (int i = 1; i < 8; ++i)
        if (logits.data[static_cast<size_t>(i)] > logits.data[static_cast<size_t>(argmax)])
            argmax = i;
    CHECK(argmax == j);
}

TEST_CASE("guidance factory wires mode, weight, and gradients together") {
    CriticModel m = hand_critic(4, 8, 11);
    GuidanceConfig cfg;
    cfg.omega = 2.5f;
    cfg.alpha = 0.2f;
    cfg.mode = GuidanceMode::regret;
    GuidanceFn fn = make_guidance(m, cfg);
    CHECK(fn.omega == 2.5f);
    Rng rng(4);
    Tensor theta = Tensor::gaussian({2, 4}, rng);
    Tensor via_fn = fn.grad(theta, 3);
    Tensor direct = regret_input_gradient(m, theta, 3, cfg);
    for (int64_t i = 0; i < via_fn.numel(); ++i) CHECK(via_fn.data[i] == direct.data[i]);

    cfg.mode = GuidanceMode::difficulty;
    cfg.k = 3;
    GuidanceFn dfn = make_guidance(m, cfg);
    Tensor via_d = dfn.grad(theta, 3);
    Tensor direct_d = difficulty_logprob_grad(m, theta, 3, 3);
    for (int64_t i = 0; i < via_d.numel(); ++i) CHECK(via_d.data[i] == direct_d.data[i]);

    GuidanceConfig bad;
    bad.omega = -1.0f;
    CHECK_THROWS_AS(make_guidance(m, bad), contract_error);
}
