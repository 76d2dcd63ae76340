#include "add/orchestrator.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "add/error.hpp"
#include "add/log.hpp"
#include "add/nn.hpp"
#include "add/optim.hpp"
#include "add/rng.hpp"
#include "add/tape.hpp"

namespace add {

namespace {

constexpr float kAdamEps = 1e-5f; // critic + PPO optimizers

std::string fmt_g(float v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.6g", static_cast<double>(v));
    return buf;
}

Tensor row_of(const Tensor& batch, int64_t i) {
    const int64_t d = batch.cols();
    Tensor row = Tensor::zeros({d});
    std::copy(batch.data.begin() + i * d, batch.data.begin() + (i + 1) * d, row.data.begin());
    return row;
}

void set_row(Tensor& batch, int64_t i, const Tensor& row) {
    const int64_t d = batch.cols();
    require(row.numel() == d, "orchestrator: row width mismatch");
    std::copy(row.data.begin(), row.data.end(), batch.data.begin() + i * d);
}

} // namespace

const char* const kCsvHeader =
    "epoch,method,seed,mean_regret,max_regret,mean_blocks,mean_shortest_path,"
    "solvable_frac,mean_return,eval_env,solved_rate";

std::string CurriculumRow::csv() const {
    std::string s =
        std::to_string(epoch) + "," + method + "," + std::to_string(seed) + ",";
    if (is_eval) {
        s += ",,,,,"; // curriculum metric columns stay blank
        s += fmt_g(mean_return) + ",";
        s += eval_env + ",";
        s += fmt_g(solved_rate);
    } else {
        s += fmt_g(mean_regret) + "," + fmt_g(max_regret) + "," + fmt_g(mean_blocks) + ",";
        if (has_shortest) s += fmt_g(mean_shortest_path);
        s += ",";
        s += fmt_g(solvable_frac) + ",";
        if (has_return) s += fmt_g(mean_return);
        s += ",,"; // eval columns stay blank
    }
    return s;
}

TrainState make_state(const RunConfig& cfg, ScoreModel gen) {
    cfg.validate();
    gen.validate();
    require(gen.theta_dim == cfg.theta_dim(),
            "state: generator width does not match env.N");

    TrainState st;
    st.cfg = cfg;
    st.gen = std::move(gen);

    st.critic.spec = cfg.critic_spec();
    st.critic.params = init_mlp(st.critic.spec, derive_seed(cfg.seed, "init.critic"));
    st.critic.support = cfg.support();
    st.critic.sched = cfg.schedule();
    st.critic.theta_dim = cfg.theta_dim();
    st.critic.validate();

    st.policy = make_policy(cfg.policy_spec(), derive_seed(cfg.seed, "init.policy"));
    st.value = make_value(cfg.value_spec(), derive_seed(cfg.seed, "init.value"));

    st.critic_opt =
        OptState::make(st.critic.params.tensors, cfg.critic_lr, 0.0f, 0.9f, 0.999f, kAdamEps);
    st.policy_opt =
        OptState::make(st.policy.params.tensors, cfg.ppo_lr, 0.0f, 0.9f, 0.999f, kAdamEps);
    st.value_opt =
        OptState::make(st.value.params.tensors, cfg.ppo_lr, 0.0f, 0.9f, 0.999f, kAdamEps);

    st.buffer = CriticBuffer(cfg.buffer_capacity);
    return st;
}

PretrainResult pretrain(const RunConfig& cfg) {
    cfg.validate();
    PretrainResult out;
    const int64_t d = cfg.theta_dim();

    Rng data_rng(derive_seed(cfg.seed, "pretrain.data"));
    out.dataset = Tensor::zeros({cfg.pretrain_size, d});
    for (int64_t i = 0; i < cfg.pretrain_size; ++i) {
        const EnvParam p = random_param(cfg.env_n, cfg.env_block_budget, data_rng.next_u64());
        require(p.values.numel() == d, "pretrain: env param width mismatch");
        std::copy(p.values.data.begin(), p.values.data.end(), out.dataset.data.begin() + i * d);
    }

    GenTrainHyper h;
    h.steps = cfg.pretrain_steps;
    h.batch = cfg.pretrain_batch;
    h.lr = cfg.pretrain_lr;
    h.weight_decay = cfg.pretrain_weight_decay;
    h.seed = derive_seed(cfg.seed, "pretrain.train");
    out.gen = train_generator(out.dataset, cfg.gen_spec(), cfg.schedule(), h, &out.loss_log,
                              std::make_pair(0.0f, 1.0f));
    return out;
}

namespace {

void add_net(Checkpoint& ck, const std::string& prefix, const MlpSpec& spec,
             const MlpParams& params) {
    const auto names = param_names(prefix, spec);
    require(names.size() == params.tensors.size(), "checkpoint: parameter count mismatch");
    for (size_t i = 0; i < names.size(); ++i) ck.add(names[i], params.tensors[i]);
}

void load_net(const Checkpoint& ck, const std::string& prefix, const MlpSpec& spec,
              MlpParams& params) {
    const auto names = param_names(prefix, spec);
    require(names.size() == params.tensors.size(), "checkpoint: parameter count mismatch");
    for (size_t i = 0; i < names.size(); ++i) {
        const Tensor& t = ck.need(names[i]);
        if (t.shape != params.tensors[i].shape)
            throw io_error("checkpoint: tensor " + names[i] + " has unexpected shape");
        params.tensors[i] = t;
    }
}

void add_opt(Checkpoint& ck, const std::string& net, const OptState& opt) {
    for (size_t i = 0; i < opt.m.size(); ++i) {
        ck.add("opt." + net + ".m" + std::to_string(i), opt.m[i]);
        ck.add("opt." + net + ".v" + std::to_string(i), opt.v[i]);
    }
    Tensor step = Tensor::zeros({1});
    step.data[0] = static_cast<float>(opt.step);
    ck.add("opt." + net + ".step", step);
}

void load_opt(const Checkpoint& ck, const std::string& net, OptState& opt) {
    for (size_t i = 0; i < opt.m.size(); ++i) {
        const Tensor& m = ck.need("opt." + net + ".m" + std::to_string(i));
        const Tensor& v = ck.need("opt." + net + ".v" + std::to_string(i));
        if (m.shape != opt.m[i].shape || v.shape != opt.v[i].shape)
            throw io_error("checkpoint: optimizer moments for " + net + " have unexpected shape");
        opt.m[i] = m;
        opt.v[i] = v;
    }
    opt.step = static_cast<int64_t>(ck.need("opt." + net + ".step").data[0]);
}

ScoreModel gen_from_checkpoint(const Checkpoint& ck, const RunConfig& cfg) {
    ScoreModel g;
    g.spec = cfg.gen_spec();
    g.sched = cfg.schedule();
    g.theta_dim = cfg.theta_dim();
    g.params = init_mlp(g.spec, 0);
    load_net(ck, "gen", g.spec, g.params);
    g.validate();
    return g;
}

void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw io_error("run: cannot open " + path + " for writing");
    f << text;
    f.flush();
    if (!f) throw io_error("run: failed writing " + path);
}

} // namespace

ScoreModel ensure_pretrained(const RunConfig& cfg) {
    cfg.validate();
    namespace fs = std::filesystem;
    const std::string dir = run_dir(cfg);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw io_error("run: cannot create directory " + dir + ": " + ec.message());

    const std::string gen_path = dir + "/gen.ckpt";
    if (fs::exists(gen_path)) {
        Checkpoint ck = load_checkpoint(gen_path);
        if (ck.get_text("config.text") != config_text(cfg))
            throw contract_error("pretrain: " + gen_path + " was built from a different config");
        log_info("reusing generator %s", gen_path.c_str());
        return gen_from_checkpoint(ck, cfg);
    }

    log_info("pretraining generator: %lld samples, %d steps",
             static_cast<long long>(cfg.pretrain_size), cfg.pretrain_steps);
    PretrainResult pr = pretrain(cfg);
    save_dataset(dir + "/dataset.bin", cfg.env_n, pr.dataset);
    write_text_file(dir + "/config.txt", config_text(cfg));

    Checkpoint ck;
    ck.epoch = 0;
    ck.put_text("config.text", config_text(cfg));
    add_net(ck, "gen", pr.gen.spec, pr.gen.params);
    save_checkpoint(gen_path, ck);
    if (!pr.loss_log.empty())
        log_info("pretrain loss: first %.4f last %.4f", pr.loss_log.front().second,
                 pr.loss_log.back().second);
    return std::move(pr.gen);
}

namespace {

std::vector<CurriculumRow> train_epoch_inner(TrainState& st) {
    const RunConfig& cfg = st.cfg;
    require(st.epoch < cfg.train_epochs, "train: epoch budget exhausted");
    const int64_t e = st.epoch + 1;
    const std::string tag = std::to_string(e);
    const int B = cfg.train_envs_per_epoch;
    const int64_t d = cfg.theta_dim();

    GuidanceConfig gc;
    gc.omega = cfg.guid_omega;
    gc.alpha = cfg.guid_alpha;
    gc.mode = GuidanceMode::regret;
    gc.k = 1;
    GuidanceFn base = make_guidance(st.critic, gc);
    GuidanceFn counted;
    counted.omega = base.omega;
    counted.grad = [&st, inner = base.grad](const Tensor& th, int t) {
        ++st.guidance_evals;
        return inner(th, t);
    };

    auto propose = [&](int n, const std::string& stream) -> Tensor {
        const uint64_t seed = derive_seed(cfg.seed, stream);
        if (cfg.method == "dr") {
            Rng rng(seed);
            Tensor out = Tensor::zeros({n, d});
            for (int64_t i = 0; i < n; ++i) {
                const EnvParam p = random_param(cfg.env_n, cfg.env_block_budget, rng.next_u64());
                set_row(out, i, p.values);
            }
            return out;
        }
        const GuidanceFn* g = cfg.method == "add" ? &counted : nullptr;
        return sample(st.gen, cfg.diff_t_prime, g, n, seed, std::make_pair(0.0f, 1.0f));
    };

    // (1) propose env parameters, (2) patch unsolvables: resample up to 3
    // times, then keep whatever came last
    Tensor thetas = propose(B, "sample." + tag);
    std::vector<MazeEnv> envs;
    envs.reserve(static_cast<size_t>(B));
    int solvable = 0;
    double blocks_sum = 0.0, shortest_sum = 0.0;
    for (int i = 0; i < B; ++i) {
        MazeEnv env = decode(EnvParam::from_flat(row_of(thetas, i), cfg.env_n));
        EnvMetrics m = metrics(env);
        for (int attempt = 1; attempt <= 3 && !m.solvable; ++attempt) {
            Tensor fresh =
                propose(1, "resample." + tag + "." + std::to_string(i) + "." + std::to_string(attempt));
            set_row(thetas, i, row_of(fresh, 0));
            env = decode(EnvParam::from_flat(row_of(thetas, i), cfg.env_n));
            m = metrics(env);
        }
        blocks_sum += m.block_count;
        if (m.solvable) {
            ++solvable;
            shortest_sum += m.shortest_path;
        }
        envs.push_back(std::move(env));
    }

    // regret diagnostics at the least-noised trained time (the critic never
    // sees t = 0)
    double reg_sum = 0.0;
    float reg_max = 0.0f;
    for (int i = 0; i < B; ++i) {
        Tensor row({1, d}, row_of(thetas, i).data);
        const float r = regret_estimate(st.critic.distribution(row, 1), cfg.guid_alpha);
        reg_sum += r;
        reg_max = std::max(reg_max, r);
    }

    // (3) rollouts + PPO update
    RolloutBatch batch = collect(envs, st.policy, st.value, cfg.ppo_rollout_steps,
                                 derive_seed(cfg.seed, "collect." + tag));
    PpoHyper ph = cfg.ppo_hyper();
    ph.seed = derive_seed(cfg.seed, "ppo." + tag);
    ppo_update(st.policy, st.value, batch, ph, st.policy_opt, st.value_opt);

    double return_sum = 0.0;
    for (const auto& ep : batch.episodes) return_sum += ep.episodic_return;

    // (4) feed the critic under every method so regret stays comparable
    std::vector<std::vector<float>> per_env(static_cast<size_t>(B));
    for (const auto& ep : batch.episodes)
        per_env[static_cast<size_t>(ep.env_id)].push_back(ep.episodic_return);
    for (int i = 0; i < B; ++i)
        if (!per_env[static_cast<size_t>(i)].empty())
            st.buffer.push(row_of(thetas, i), per_env[static_cast<size_t>(i)], st.critic.support);
    if (st.buffer.size() > 0) {
        CriticUpdateHyper ch;
        ch.minibatches = cfg.critic_minibatches;
        ch.epochs = cfg.critic_epochs;
        ch.batch = cfg.critic_batch;
        ch.seed = derive_seed(cfg.seed, "critic." + tag);
        critic_update(st.critic, st.buffer, ch, st.critic_opt);
    }

    // (5) log rows
    std::vector<CurriculumRow> rows;
    CurriculumRow row;
    row.epoch = e;
    row.method = cfg.method;
    row.seed = cfg.seed;
    row.mean_regret = static_cast<float>(reg_sum / B);
    row.max_regret = reg_max;
    row.mean_blocks = static_cast<float>(blocks_sum / B);
    row.has_shortest = solvable > 0;
    if (row.has_shortest) row.mean_shortest_path = static_cast<float>(shortest_sum / solvable);
    row.solvable_frac = static_cast<float>(solvable) / static_cast<float>(B);
    row.has_return = !batch.episodes.empty();
    if (row.has_return)
        row.mean_return = static_cast<float>(return_sum / static_cast<double>(batch.episodes.size()));
    rows.push_back(row);

    if (e % cfg.eval_every == 0 || e == cfg.train_epochs) {
        const std::vector<MazeEnv> suite = test_suite(cfg.env_n);
        const std::vector<std::string> names = test_suite_names();
        const std::vector<EvalResult> res =
            evaluate(st.policy, suite, cfg.eval_episodes, derive_seed(cfg.seed, "eval." + tag));
        require(res.size() == names.size(), "train: eval result count mismatch");
        for (size_t j = 0; j < res.size(); ++j) {
            CurriculumRow er;
            er.epoch = e;
            er.method = cfg.method;
            er.seed = cfg.seed;
            er.is_eval = true;
            er.eval_env = names[j];
            er.solved_rate = res[j].solved_rate;
            er.mean_return = res[j].mean_return;
            rows.push_back(er);
        }
        log_info("epoch %lld [%s]: solvable %.2f, mean return %.3f, suite solved %s",
                 static_cast<long long>(e), cfg.method.c_str(), row.solvable_frac,
                 row.mean_return, fmt_g(res[0].solved_rate).c_str());
    }

    st.epoch = e;
    return rows;
}

} // namespace

std::vector<CurriculumRow> train_epoch(TrainState& st) {
    // sub-operation failures propagate with epoch context, keeping their class
    const std::string tag = "epoch " + std::to_string(st.epoch + 1) + ": ";
    try {
        return train_epoch_inner(st);
    } catch (const io_error& ex) {
        throw io_error(tag + ex.what());
    } catch (const verification_error& ex) {
        throw verification_error(tag + ex.what());
    } catch (const contract_error& ex) {
        throw contract_error(tag + ex.what());
    }
}

Checkpoint state_to_checkpoint(const TrainState& st) {
    Checkpoint ck;
    ck.epoch = static_cast<uint64_t>(st.epoch);
    ck.put_text("config.text", config_text(st.cfg));
    add_net(ck, "gen", st.gen.spec, st.gen.params);
    add_net(ck, "critic", st.critic.spec, st.critic.params);
    add_net(ck, "policy", st.policy.spec, st.policy.params);
    add_net(ck, "value", st.value.spec, st.value.params);
    add_opt(ck, "critic", st.critic_opt);
    add_opt(ck, "policy", st.policy_opt);
    add_opt(ck, "value", st.value_opt);

    const int n = st.buffer.size();
    if (n > 0) {
        const int64_t d = st.cfg.theta_dim();
        const int64_t M = st.cfg.support_m;
        Tensor theta0 = Tensor::zeros({n, d});
        Tensor target = Tensor::zeros({n, M});
        for (int i = 0; i < n; ++i) {
            const auto& entry = st.buffer.entry(i);
            require(entry.theta0.numel() == d && static_cast<int64_t>(entry.target.size()) == M,
                    "checkpoint: buffer entry shape mismatch");
            std::copy(entry.theta0.data.begin(), entry.theta0.data.end(),
                      theta0.data.begin() + i * d);
            std::copy(entry.target.begin(), entry.target.end(), target.data.begin() + i * M);
        }
        ck.add("buffer.theta0", theta0);
        ck.add("buffer.target", target);
    }
    return ck;
}

TrainState state_from_checkpoint(const Checkpoint& ck, const ScoreModel& gen) {
    const RunConfig cfg = parse_config_text(ck.get_text("config.text"), {});
    TrainState st = make_state(cfg, gen);
    load_net(ck, "gen", st.gen.spec, st.gen.params);
    load_net(ck, "critic", st.critic.spec, st.critic.params);
    load_net(ck, "policy", st.policy.spec, st.policy.params);
    load_net(ck, "value", st.value.spec, st.value.params);
    load_opt(ck, "critic", st.critic_opt);
    load_opt(ck, "policy", st.policy_opt);
    load_opt(ck, "value", st.value_opt);

    if (const Tensor* theta0 = ck.find("buffer.theta0")) {
        const Tensor& target = ck.need("buffer.target");
        const int64_t d = cfg.theta_dim();
        const int64_t M = cfg.support_m;
        if (theta0->rows() != target.rows() || theta0->cols() != d || target.cols() != M ||
            theta0->rows() > cfg.buffer_capacity)
            throw io_error("checkpoint: buffer tensors have unexpected shape");
        for (int64_t i = 0; i < theta0->rows(); ++i) {
            std::vector<float> tg(target.data.begin() + i * M, target.data.begin() + (i + 1) * M);
            st.buffer.restore(row_of(*theta0, i), std::move(tg));
        }
    }
    st.epoch = static_cast<int64_t>(ck.epoch);
    return st;
}

namespace {

// keep the header plus every row whose epoch is at most keep_epoch; a
// missing file is recreated with just the header
void truncate_csv(const std::string& path, int64_t keep_epoch) {
    namespace fs = std::filesystem;
    std::vector<std::string> kept;
    kept.push_back(kCsvHeader);
    if (fs::exists(path)) {
        std::ifstream in(path);
        if (!in) throw io_error("run: cannot read " + path);
        std::string line;
        bool first = true;
        while (std::getline(in, line)) {
            if (first) {
                first = false;
                if (line != kCsvHeader)
                    throw io_error("run: " + path + " has an unexpected header");
                continue;
            }
            if (line.empty()) continue;
            errno = 0;
            char* end = nullptr;
            const long long ep = std::strtoll(line.c_str(), &end, 10);
            if (errno != 0 || end == line.c_str() || *end != ',')
                throw io_error("run: " + path + " has a malformed row");
            if (ep <= keep_epoch) kept.push_back(line);
        }
    }
    std::string out;
    for (const auto& l : kept) {
        out += l;
        out += "\n";
    }
    write_text_file(path, out);
}

} // namespace

void run(const RunConfig& cfg, int stop_after_epoch) {
    cfg.validate();
    const std::string dir = run_dir(cfg);
    ScoreModel gen = ensure_pretrained(cfg);
    if (cfg.train_epochs == 0) {
        log_info("train.epochs = 0: pretrain artifacts only");
        return;
    }

    const std::string ckpt_path = dir + "/train.ckpt";
    const std::string csv_path = dir + "/metrics.csv";
    namespace fs = std::filesystem;

    TrainState st;
    if (fs::exists(ckpt_path)) {
        st = state_from_checkpoint(load_checkpoint(ckpt_path), gen);
        if (config_text(st.cfg) != config_text(cfg))
            throw contract_error("run: " + ckpt_path + " was built from a different config");
        truncate_csv(csv_path, st.epoch);
        log_info("resuming %s at epoch %lld", dir.c_str(), static_cast<long long>(st.epoch));
    } else {
        st = make_state(cfg, std::move(gen));
        write_text_file(csv_path, std::string(kCsvHeader) + "\n");
    }

    std::ofstream csv(csv_path, std::ios::app);
    if (!csv) throw io_error("run: cannot open " + csv_path + " for appending");

    int64_t last_saved = fs::exists(ckpt_path) ? st.epoch : -1;
    while (st.epoch < cfg.train_epochs) {
        if (stop_after_epoch >= 0 && st.epoch >= stop_after_epoch) {
            log_info("stopping after epoch %lld as requested",
                     static_cast<long long>(st.epoch));
            return; // simulated interruption: no final checkpoint
        }
        const std::vector<CurriculumRow> rows = train_epoch(st);
        for (const auto& r : rows) csv << r.csv() << "\n";
        csv.flush();
        if (!csv) throw io_error("run: failed writing " + csv_path);
        if (st.epoch % cfg.checkpoint_every == 0 || st.epoch == cfg.train_epochs) {
            save_checkpoint(ckpt_path, state_to_checkpoint(st));
            last_saved = st.epoch;
        }
    }
    if (last_saved != st.epoch) save_checkpoint(ckpt_path, state_to_checkpoint(st));
    log_info("run complete: %s", dir.c_str());
}

std::vector<float> closed_form_lambda(const std::vector<float>& regrets, float omega) {
    require(!regrets.empty(), "lambda: regret list must be non-empty");
    require(std::isfinite(omega), "lambda: omega must be finite");
    for (float r : regrets) require(std::isfinite(r), "lambda: regrets must be finite");

    double mx = -1e300;
    for (float r : regrets) mx = std::max(mx, static_cast<double>(omega) * r);
    double lse = 0.0;
    for (float r : regrets) lse += std::exp(static_cast<double>(omega) * r - mx);
    lse = mx + std::log(lse);

    std::vector<float> out(regrets.size());
    for (size_t i = 0; i < regrets.size(); ++i)
        out[i] = static_cast<float>(std::exp(static_cast<double>(omega) * regrets[i] - lse));
    return out;
}

GuidanceVerifyReport verify_gaussian_guidance(float omega, const std::vector<float>& a,
                                              int samples, uint64_t seed) {
    require(!a.empty(), "verify: direction must be non-empty");
    require(samples >= 2, "verify: need at least two samples");
    for (float v : a) require(std::isfinite(v), "verify: direction must be finite");
    require(std::isfinite(omega), "verify: omega must be finite");

    const int64_t d = static_cast<int64_t>(a.size());
    const NoiseSchedule sched = build_schedule(1000, 1e-4f, 0.02f);
    const int t_prime = 200;

    const Tensor mu0 = Tensor::zeros({d});
    EpsFn eps = [&](const Tensor& th, int t) {
        return analytic_gaussian_eps(th, t, sched, mu0, 1.0f);
    };
    // the reward a·θ0 seen through the forward marginal: ∇ E[a·θ0 | θ_t] = √ᾱ_t a
    GuidanceFn g;
    g.omega = omega;
    g.grad = [&](const Tensor& th, int t) {
        const float sa = std::sqrt(sched.alpha_bar_at(t));
        Tensor out = Tensor::zeros(th.shape);
        for (int64_t i = 0; i < th.rows(); ++i)
            for (int64_t j = 0; j < d; ++j)
                out.data[static_cast<size_t>(i * d + j)] = sa * a[static_cast<size_t>(j)];
        return out;
    };

    const Tensor x = sample(eps, sched, static_cast<int>(d), t_prime, &g, samples,
                            derive_seed(seed, "verify.gauss"));

    GuidanceVerifyReport report;
    report.mean.resize(a.size());
    report.var.resize(a.size());
    for (int64_t j = 0; j < d; ++j) {
        double s1 = 0.0, s2 = 0.0;
        for (int64_t i = 0; i < x.rows(); ++i) {
            const double v = x.data[static_cast<size_t>(i * d + j)];
            s1 += v;
            s2 += v * v;
        }
        const double n = static_cast<double>(x.rows());
        const double mean = s1 / n;
        report.mean[static_cast<size_t>(j)] = static_cast<float>(mean);
        report.var[static_cast<size_t>(j)] =
            static_cast<float>((s2 - n * mean * mean) / (n - 1.0));
    }

    for (size_t j = 0; j < a.size(); ++j) {
        const float want = omega * a[j];
        if (std::fabs(report.mean[j] - want) > 0.1f || std::fabs(report.var[j] - 1.0f) > 0.15f) {
            char msg[256];
            std::snprintf(msg, sizeof msg,
                          "guided Gaussian check failed at coordinate %zu: mean %.4f "
                          "(want %.4f +- 0.1), var %.4f (want 1 +- 0.15)",
                          j, static_cast<double>(report.mean[j]), static_cast<double>(want),
                          static_cast<double>(report.var[j]));
            throw verification_error(msg);
        }
    }
    return report;
}

namespace {

// Φ(hi) − Φ(lo) without cancellation in either tail
double phi_interval(double lo, double hi) {
    constexpr double inv_sqrt2 = 0.7071067811865475244;
    if (lo >= 0.0) return 0.5 * (std::erfc(lo * inv_sqrt2) - std::erfc(hi * inv_sqrt2));
    if (hi <= 0.0) return 0.5 * (std::erfc(-hi * inv_sqrt2) - std::erfc(-lo * inv_sqrt2));
    return 0.5 * (std::erf(hi * inv_sqrt2) - std::erf(lo * inv_sqrt2));
}

// d/dθ_t E[θ0 | θ_t] for θ0 ~ Uniform[0,1]: the posterior is a normal with
// location θ_t/√ᾱ and scale √(1−ᾱ)/√ᾱ truncated to [0,1], and the mean's
// derivative is its variance over the squared scale, divided by √ᾱ
float uniform_posterior_mean_grad(float theta, float alpha_bar) {
    constexpr double inv_sqrt_2pi = 0.3989422804014326779;
    const double ab = static_cast<double>(alpha_bar);
    const double sa = std::sqrt(ab);
    const double s = std::sqrt(1.0 - ab) / sa;
    const double mu = static_cast<double>(theta) / sa;
    const double lo = (0.0 - mu) / s, hi = (1.0 - mu) / s;
    const double z = phi_interval(lo, hi);
    if (z < 1e-12) return 0.0f; // posterior pinned at a boundary: flat mean
    const double phi_lo = inv_sqrt_2pi * std::exp(-0.5 * lo * lo);
    const double phi_hi = inv_sqrt_2pi * std::exp(-0.5 * hi * hi);
    const double r = (phi_lo - phi_hi) / z;
    double var_over_s2 = 1.0 + (lo * phi_lo - hi * phi_hi) / z - r * r;
    if (var_over_s2 < 0.0) var_over_s2 = 0.0;
    return static_cast<float>(var_over_s2 / sa);
}

} // namespace

float verify_tv(int bins, float omega, int samples, uint64_t seed) {
    require(bins >= 10, "verify: need at least 10 bins");
    require(samples >= 1, "verify: need at least one sample");
    require(std::isfinite(omega), "verify: omega must be finite");

    const NoiseSchedule sched = build_schedule(1000, 1e-4f, 0.02f);

    // a small denoiser trained on uniform scalars
    Rng data_rng(derive_seed(seed, "tv.data"));
    Tensor data = Tensor::zeros({4096, 1});
    for (float& v : data.data) v = static_cast<float>(data_rng.unit());
    MlpSpec spec;
    spec.widths = {1, 48, 48, 1};
    spec.act = Activation::relu;
    spec.temb_width = 8;
    GenTrainHyper h;
    h.steps = 6000;
    h.batch = 128;
    h.lr = 1e-3f;
    h.weight_decay = 0.0f;
    h.seed = derive_seed(seed, "tv.train");
    const ScoreModel gen =
        train_generator(data, spec, sched, h, nullptr, std::make_pair(0.0f, 1.0f));

    // reward r(θ0) = θ0 seen through the forward marginal
    GuidanceFn g;
    g.omega = omega;
    g.grad = [&sched](const Tensor& th, int t) {
        const float ab = sched.alpha_bar_at(t);
        Tensor out = Tensor::zeros(th.shape);
        for (size_t i = 0; i < th.data.size(); ++i)
            out.data[i] = uniform_posterior_mean_grad(th.data[i], ab);
        return out;
    };

    const Tensor x = sample(gen, 250, &g, samples, derive_seed(seed, "tv.sample"),
                            std::make_pair(0.0f, 1.0f));

    std::vector<double> hist(static_cast<size_t>(bins), 0.0);
    for (float v : x.data) {
        int idx = static_cast<int>(static_cast<double>(v) * bins);
        if (idx >= bins) idx = bins - 1;
        if (idx < 0) idx = 0;
        hist[static_cast<size_t>(idx)] += 1.0;
    }
    for (double& c : hist) c /= static_cast<double>(samples);

    // discretized target density ∝ exp(omega·θ) on [0,1]
    double tv = 0.0;
    const double w = static_cast<double>(omega);
    for (int i = 0; i < bins; ++i) {
        const double a = static_cast<double>(i) / bins;
        const double b = static_cast<double>(i + 1) / bins;
        const double mass =
            w == 0.0 ? 1.0 / bins : (std::exp(w * b) - std::exp(w * a)) / std::expm1(w);
        tv += std::fabs(hist[static_cast<size_t>(i)] - mass);
    }
    return static_cast<float>(0.5 * tv);
}

namespace {

struct GradFamily {
    std::string name;
    float step;
    float tol;
    std::function<float(uint64_t)> worst_of; // one instance -> worst FD error
};

// central-difference sweep with the denominator floor standard for float32
// gradcheck (atol 5e-5 at rtol 1e-3): the quotient's absolute noise is
// ~|f|·eps/h regardless of how small a coordinate's gradient is, so
// near-zero coordinates are judged against the floor, not themselves
float fd_worst_scaled(const TapeFn& f, const Tensor& x, float step) {
    require(step > 0.0f, "fd check: step must be positive");
    Tensor analytic;
    {
        Tape tape;
        Tape::NodeId in = tape.leaf(x, true);
        Tape::NodeId loss = f(tape, in);
        require(tape.val(loss).numel() == 1, "fd check: loss must be scalar");
        tape.backward(loss);
        analytic = tape.grad(in);
    }
    auto value_at = [&f](const Tensor& p) -> double {
        Tape tape;
        Tape::NodeId in = tape.leaf(p, false);
        return tape.val(f(tape, in)).data[0];
    };
    double amax = 0.0;
    for (float v : analytic.data) amax = std::max(amax, static_cast<double>(std::fabs(v)));
    const double floor = 0.05 * std::max(1.0, amax);

    float worst = 0.0f;
    double worst_a = 0.0, worst_n = 0.0;
    Tensor probe = x;
    for (int64_t i = 0; i < x.numel(); ++i) {
        const float orig = probe.data[static_cast<size_t>(i)];
        probe.data[static_cast<size_t>(i)] = orig + step;
        const double fp = value_at(probe);
        probe.data[static_cast<size_t>(i)] = orig - step;
        const double fm = value_at(probe);
        probe.data[static_cast<size_t>(i)] = orig;
        const double numeric = (fp - fm) / (2.0 * static_cast<double>(step));
        const double a = analytic.data[static_cast<size_t>(i)];
        const double denom = std::max({std::fabs(a), std::fabs(numeric), floor});
        const float rel = static_cast<float>(std::fabs(a - numeric) / denom);
        if (rel > worst) {
            worst = rel;
            worst_a = a;
            worst_n = numeric;
        }
    }
    log_debug("fd worst=%.3g amax=%.3g a=%.4g n=%.4g", static_cast<double>(worst), amax,
              worst_a, worst_n);
    return worst;
}

} // namespace

std::vector<GradCheckRow> verify_gradients(int instances, uint64_t seed) {
    require(instances >= 1, "verify: need at least one instance");

    const NoiseSchedule sched = build_schedule(10, 0.02f, 0.2f);

    auto rand_ts = [&sched](Rng& rng, int64_t rows) {
        std::vector<int> ts(static_cast<size_t>(rows));
        for (auto& t : ts) t = 1 + static_cast<int>(rng.below(static_cast<uint64_t>(sched.T)));
        return ts;
    };

    std::vector<GradFamily> families;

    // noise-prediction loss wrt generator parameters; the smooth activation
    // keeps random instances kink-free so central differences stay exact
    families.push_back(
        {"denoise", 1e-2f, 1e-3f, [&, seed](uint64_t inst) {
             Rng rng(derive_seed(seed, "fd.denoise." + std::to_string(inst)));
             MlpSpec spec;
             spec.widths = {2, 6, 2};
             spec.act = Activation::tanh_;
             spec.temb_width = 4;
             MlpParams params = init_mlp(spec, rng.next_u64());
             Tensor theta0 = Tensor::zeros({4, 2});
             for (float& v : theta0.data) v = static_cast<float>(rng.unit());
             const std::vector<int> ts = rand_ts(rng, 4);
             Tensor eps = Tensor::gaussian({4, 2}, rng);
             const Tensor packed = pack_params(params);
             return fd_worst_scaled(
                 [&](Tape& tape, Tape::NodeId x) {
                     auto ids = unpack_params(tape, x, params);
                     return score_match_loss(tape, spec, ids, theta0, ts, eps, sched);
                 },
                 packed, 1e-2f);
         }});

    // categorical cross-entropy wrt critic parameters
    families.push_back(
        {"critic_cross_entropy", 1e-2f, 1e-3f, [&, seed](uint64_t inst) {
             Rng rng(derive_seed(seed, "fd.ce." + std::to_string(inst)));
             const int m = 7;
             MlpSpec spec;
             spec.widths = {3, 8, m};
             spec.act = Activation::tanh_;
             spec.temb_width = 4;
             MlpParams params = init_mlp(spec, rng.next_u64());
             Tensor noised = Tensor::gaussian({5, 3}, rng);
             const std::vector<int> ts = rand_ts(rng, 5);
             Tensor target = Tensor::zeros({5, m});
             for (int64_t r = 0; r < 5; ++r) {
                 double sum = 0.0;
                 for (int64_t c = 0; c < m; ++c) {
                     const float u = static_cast<float>(rng.unit()) + 0.05f;
                     target.at(r, c) = u;
                     sum += u;
                 }
                 for (int64_t c = 0; c < m; ++c)
                     target.at(r, c) = static_cast<float>(target.at(r, c) / sum);
             }
             const Tensor packed = pack_params(params);
             return fd_worst_scaled(
                 [&](Tape& tape, Tape::NodeId x) {
                     auto ids = unpack_params(tape, x, params);
                     Tape::NodeId logp = tape.log_softmax_cols(
                         mlp_forward(tape, spec, ids, tape.leaf(noised, false), ts));
                     Tape::NodeId ce = tape.scale(
                         tape.mean(tape.sum_cols(tape.mul(tape.leaf(target, false), logp))), -1.0f);
                     return ce;
                 },
                 packed, 1e-2f);
         }});

    // CVaR-minus-mean regret wrt the critic's input
    families.push_back(
        {"regret", 5e-3f, 1e-3f, [&, seed](uint64_t inst) {
             Rng rng(derive_seed(seed, "fd.regret." + std::to_string(inst)));
             const int m = 9;
             const ReturnSupport support = make_support(m, 0.0f, 1.0f);
             MlpSpec spec;
             spec.widths = {4, 10, m};
             spec.act = Activation::tanh_;
             spec.temb_width = 4;
             MlpParams params = init_mlp(spec, rng.next_u64());
             const std::vector<int> ts = rand_ts(rng, 3);
             // the tail-budget scan is piecewise in the probabilities (kink
             // where an atom mass equals the remaining budget), so keep
             // sampling inputs until every row clears the boundary — central
             // differences are only meaningful away from the kink
             auto kink_distance = [&](const Tensor& in) {
                 const Tensor logits = mlp_eval(spec, params, in, ts);
                 double worst = 1.0;
                 for (int64_t r = 0; r < logits.rows(); ++r) {
                     double mx = -1e30;
                     for (int i = 0; i < m; ++i)
                         mx = std::max(mx, static_cast<double>(logits.at(r, i)));
                     std::vector<double> p(static_cast<size_t>(m));
                     double z = 0.0;
                     for (int i = 0; i < m; ++i) {
                         p[static_cast<size_t>(i)] =
                             std::exp(static_cast<double>(logits.at(r, i)) - mx);
                         z += p[static_cast<size_t>(i)];
                     }
                     double budget = 0.25;
                     for (int i = m - 1; i >= 0; --i) {
                         const double pi = p[static_cast<size_t>(i)] / z;
                         worst = std::min(worst, std::fabs(pi - budget));
                         if (pi >= budget) break;
                         budget -= pi;
                     }
                 }
                 return worst;
             };
             Tensor input = Tensor::gaussian({3, 4}, rng);
             for (int attempt = 0; attempt < 100 && kink_distance(input) < 0.02; ++attempt)
                 input = Tensor::gaussian({3, 4}, rng);
             require(kink_distance(input) >= 0.02, "fd check: no kink-free input found");
             return fd_worst_scaled(
                 [&](Tape& tape, Tape::NodeId x) {
                     auto ids = params_on_tape(tape, params, false);
                     Tape::NodeId probs =
                         tape.exp_op(tape.log_softmax_cols(mlp_forward(tape, spec, ids, x, ts)));
                     return tape.mean(regret_on_tape(tape, probs, support, 0.25f));
                 },
                 input, 5e-3f);
         }});

    // log-probability of a chosen return bin wrt the critic's input
    families.push_back(
        {"difficulty", 1e-2f, 1e-3f, [&, seed](uint64_t inst) {
             Rng rng(derive_seed(seed, "fd.difficulty." + std::to_string(inst)));
             const int m = 9;
             MlpSpec spec;
             spec.widths = {4, 10, m};
             spec.act = Activation::tanh_;
             spec.temb_width = 4;
             MlpParams params = init_mlp(spec, rng.next_u64());
             const std::vector<int> ts = rand_ts(rng, 3);
             const int k = 1 + static_cast<int>(rng.below(static_cast<uint64_t>(m)));
             Tensor input = Tensor::gaussian({3, 4}, rng);
             return fd_worst_scaled(
                 [&](Tape& tape, Tape::NodeId x) {
                     auto ids = params_on_tape(tape, params, false);
                     Tape::NodeId logp =
                         tape.log_softmax_cols(mlp_forward(tape, spec, ids, x, ts));
                     const std::vector<int> cols(3, m - k);
                     return tape.mean(tape.gather_cols(logp, cols));
                 },
                 input, 1e-2f);
         }});

    // clipped-surrogate policy loss wrt policy parameters, ratios held inside
    // the clip region so the objective is smooth
    families.push_back(
        {"ppo_policy", 1e-2f, 1e-3f, [&, seed](uint64_t inst) {
             Rng rng(derive_seed(seed, "fd.ppo." + std::to_string(inst)));
             MlpSpec spec;
             spec.widths = {4, 8, 3};
             spec.act = Activation::tanh_;
             spec.temb_width = 0;
             MlpParams params = init_mlp(spec, rng.next_u64());
             Tensor obs = Tensor::gaussian({6, 4}, rng);
             std::vector<int> actions(6);
             for (auto& a : actions) a = static_cast<int>(rng.below(3));
             Tensor old_lp = Tensor::zeros({6, 1});
             {
                 Tape t0;
                 auto ids = params_on_tape(t0, params, false);
                 Tape::NodeId lp = t0.gather_cols(
                     t0.log_softmax_cols(mlp_forward(t0, spec, ids, t0.leaf(obs, false))), actions);
                 old_lp = t0.val(lp);
                 for (float& v : old_lp.data)
                     v += 0.05f * (static_cast<float>(rng.unit()) - 0.5f);
             }
             Tensor adv = Tensor::zeros({6, 1});
             for (float& v : adv.data)
                 v = (rng.below(2) == 0 ? 1.0f : -1.0f) * (0.5f + static_cast<float>(rng.unit()));
             const Tensor packed = pack_params(params);
             return fd_worst_scaled(
                 [&](Tape& tape, Tape::NodeId x) {
                     auto ids = unpack_params(tape, x, params);
                     Tape::NodeId logp_all =
                         tape.log_softmax_cols(mlp_forward(tape, spec, ids, tape.leaf(obs, false)));
                     Tape::NodeId lp = tape.gather_cols(logp_all, actions);
                     Tape::NodeId ratio =
                         tape.exp_op(tape.sub(lp, tape.leaf(old_lp, false)));
                     Tape::NodeId adv_id = tape.leaf(adv, false);
                     Tape::NodeId surr = tape.mul(ratio, adv_id);
                     Tape::NodeId clipped =
                         tape.mul(tape.clamp_op(ratio, 0.8f, 1.2f), adv_id);
                     Tape::NodeId loss =
                         tape.scale(tape.mean(tape.min2(surr, clipped)), -1.0f);
                     Tape::NodeId neg_h =
                         tape.mean(tape.sum_cols(tape.mul(tape.exp_op(logp_all), logp_all)));
                     return tape.add(loss, tape.scale(neg_h, 0.01f));
                 },
                 packed, 1e-2f);
         }});

    // value-regression MSE wrt value parameters
    families.push_back(
        {"value_mse", 5e-3f, 1e-3f, [&, seed](uint64_t inst) {
             Rng rng(derive_seed(seed, "fd.value." + std::to_string(inst)));
             MlpSpec spec;
             spec.widths = {4, 8, 1};
             spec.act = Activation::tanh_;
             spec.temb_width = 0;
             MlpParams params = init_mlp(spec, rng.next_u64());
             Tensor obs = Tensor::gaussian({6, 4}, rng);
             Tensor targets = Tensor::gaussian({6, 1}, rng);
             const Tensor packed = pack_params(params);
             return fd_worst_scaled(
                 [&](Tape& tape, Tape::NodeId x) {
                     auto ids = unpack_params(tape, x, params);
                     Tape::NodeId pred = mlp_forward(tape, spec, ids, tape.leaf(obs, false));
                     return tape.mean(tape.square(tape.sub(pred, tape.leaf(targets, false))));
                 },
                 packed, 5e-3f);
         }});

    std::vector<GradCheckRow> rows;
    for (const auto& fam : families) {
        GradCheckRow row;
        row.name = fam.name;
        for (int i = 0; i < instances; ++i)
            row.worst = std::max(row.worst, fam.worst_of(static_cast<uint64_t>(i)));
        log_debug("gradient family %s: worst relative error %.3g", fam.name.c_str(),
                  static_cast<double>(row.worst));
        if (!(row.worst <= fam.tol)) {
            char msg[160];
            std::snprintf(msg, sizeof msg,
                          "gradient check failed for %s: worst relative error %.3g "
                          "exceeds %.3g",
                          fam.name.c_str(), static_cast<double>(row.worst),
                          static_cast<double>(fam.tol));
            throw verification_error(msg);
        }
        rows.push_back(row);
    }
    return rows;
}

GenerateReport controllable_generate(const ScoreModel& gen, const CriticModel& critic, int k,
                                     int n, uint64_t seed, int T_prime, float omega) {
    gen.validate();
    critic.validate();
    require(n >= 0, "generate: count must be non-negative");
    GuidanceConfig gc;
    gc.omega = omega;
    gc.alpha = 0.15f;
    gc.mode = GuidanceMode::difficulty;
    gc.k = k;
    gc.validate(critic.support.M);

    GenerateReport report;
    if (n == 0) return report;

    GuidanceFn g = make_guidance(critic, gc);
    report.thetas =
        sample(gen, T_prime, &g, n, derive_seed(seed, "generate"), std::make_pair(0.0f, 1.0f));

    const int env_n = static_cast<int>(std::lround(std::sqrt(gen.theta_dim / 3.0)));
    require(env_n * env_n * 3 == gen.theta_dim, "generate: model width is not an env grid");
    double blocks = 0.0, shortest = 0.0;
    int solvable = 0;
    for (int i = 0; i < n; ++i) {
        const MazeEnv env = decode(EnvParam::from_flat(row_of(report.thetas, i), env_n));
        const EnvMetrics m = metrics(env);
        report.env_metrics.push_back(m);
        blocks += m.block_count;
        if (m.solvable) {
            ++solvable;
            shortest += m.shortest_path;
        }
    }
    report.mean_blocks = static_cast<float>(blocks / n);
    report.solvable_frac = static_cast<float>(solvable) / static_cast<float>(n);
    if (solvable > 0) report.mean_shortest_path = static_cast<float>(shortest / solvable);
    return report;
}

} // namespace add
