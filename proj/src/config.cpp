#include "add/config.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>

#include "add/error.hpp"
#include "add/maze.hpp"
#include "add/rng.hpp"

namespace add {

namespace {

std::string trim(const std::string& s) {
    size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

std::string fmt_float(float v) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "%.9g", static_cast<double>(v));
    return buf;
}

[[noreturn]] void bad_value(const std::string& key, const std::string& raw) {
    throw contract_error("config: bad value for " + key + ": '" + raw + "'");
}

int64_t parse_int(const std::string& key, const std::string& raw) {
    const std::string v = trim(raw);
    if (v.empty()) bad_value(key, raw);
    errno = 0;
    char* end = nullptr;
    const long long x = std::strtoll(v.c_str(), &end, 10);
    if (errno != 0 || end != v.c_str() + v.size()) bad_value(key, raw);
    return static_cast<int64_t>(x);
}

uint64_t parse_uint(const std::string& key, const std::string& raw) {
    const std::string v = trim(raw);
    if (v.empty() || v[0] == '-') bad_value(key, raw);
    errno = 0;
    char* end = nullptr;
    const unsigned long long x = std::strtoull(v.c_str(), &end, 10);
    if (errno != 0 || end != v.c_str() + v.size()) bad_value(key, raw);
    return static_cast<uint64_t>(x);
}

float parse_float(const std::string& key, const std::string& raw) {
    const std::string v = trim(raw);
    if (v.empty()) bad_value(key, raw);
    errno = 0;
    char* end = nullptr;
    const float x = std::strtof(v.c_str(), &end);
    if (errno != 0 || end != v.c_str() + v.size()) bad_value(key, raw);
    return x;
}

struct KeyEntry {
    const char* key;
    std::function<void(RunConfig&, const std::string&)> set;
    std::function<std::string(const RunConfig&)> get;
};

// one table drives parsing, the canonical echo, and unknown-key rejection.
const std::vector<KeyEntry>& key_table() {
    auto ikey = [](const char* k, int RunConfig::* f, KeyEntry& e) {
        e.key = k;
        e.set = [k, f](RunConfig& c, const std::string& v) {
            const int64_t x = parse_int(k, v);
            if (x < INT32_MIN || x > INT32_MAX) bad_value(k, v);
            c.*f = static_cast<int>(x);
        };
        e.get = [f](const RunConfig& c) { return std::to_string(c.*f); };
    };
    auto fkey = [](const char* k, float RunConfig::* f, KeyEntry& e) {
        e.key = k;
        e.set = [k, f](RunConfig& c, const std::string& v) { c.*f = parse_float(k, v); };
        e.get = [f](const RunConfig& c) { return fmt_float(c.*f); };
    };
    static const std::vector<KeyEntry> table = [&] {
        std::vector<KeyEntry> t;
        auto add_i = [&](const char* k, int RunConfig::* f) {
            KeyEntry e;
            ikey(k, f, e);
            t.push_back(e);
        };
        auto add_f = [&](const char* k, float RunConfig::* f) {
            KeyEntry e;
            fkey(k, f, e);
            t.push_back(e);
        };

        t.push_back({"seed",
                     [](RunConfig& c, const std::string& v) { c.seed = parse_uint("seed", v); },
                     [](const RunConfig& c) { return std::to_string(c.seed); }});
        t.push_back({"method",
                     [](RunConfig& c, const std::string& v) { c.method = trim(v); },
                     [](const RunConfig& c) { return c.method; }});
        add_i("workers", &RunConfig::workers);
        t.push_back({"out",
                     [](RunConfig& c, const std::string& v) { c.out = trim(v); },
                     [](const RunConfig& c) { return c.out; }});

        add_i("env.N", &RunConfig::env_n);
        add_i("env.block_budget", &RunConfig::env_block_budget);

        add_i("diffusion.T", &RunConfig::diff_t);
        add_i("diffusion.T_prime", &RunConfig::diff_t_prime);
        add_f("diffusion.beta_min", &RunConfig::diff_beta_min);
        add_f("diffusion.beta_max", &RunConfig::diff_beta_max);

        add_i("gen.width", &RunConfig::gen_width);
        add_i("gen.depth", &RunConfig::gen_depth);
        add_i("gen.temb", &RunConfig::gen_temb);

        t.push_back({"pretrain.size",
                     [](RunConfig& c, const std::string& v) {
                         const int64_t x = parse_int("pretrain.size", v);
                         c.pretrain_size = x;
                     },
                     [](const RunConfig& c) { return std::to_string(c.pretrain_size); }});
        add_i("pretrain.steps", &RunConfig::pretrain_steps);
        add_i("pretrain.batch", &RunConfig::pretrain_batch);
        add_f("pretrain.lr", &RunConfig::pretrain_lr);
        add_f("pretrain.weight_decay", &RunConfig::pretrain_weight_decay);

        add_i("support.M", &RunConfig::support_m);
        add_f("support.v_min", &RunConfig::support_v_min);
        add_f("support.v_max", &RunConfig::support_v_max);

        add_f("guidance.omega", &RunConfig::guid_omega);
        add_f("guidance.alpha", &RunConfig::guid_alpha);

        add_i("critic.width", &RunConfig::critic_width);
        add_i("critic.depth", &RunConfig::critic_depth);
        add_i("critic.temb", &RunConfig::critic_temb);
        add_f("critic.lr", &RunConfig::critic_lr);
        add_i("critic.minibatches", &RunConfig::critic_minibatches);
        add_i("critic.epochs", &RunConfig::critic_epochs);
        add_i("critic.batch", &RunConfig::critic_batch);

        add_i("buffer.capacity", &RunConfig::buffer_capacity);

        add_i("agent.width", &RunConfig::agent_width);
        add_i("agent.depth", &RunConfig::agent_depth);

        add_f("ppo.gamma", &RunConfig::ppo_gamma);
        add_f("ppo.lambda", &RunConfig::ppo_lambda);
        add_i("ppo.rollout_steps", &RunConfig::ppo_rollout_steps);
        add_i("ppo.epochs", &RunConfig::ppo_epochs);
        add_i("ppo.minibatches", &RunConfig::ppo_minibatches);
        add_f("ppo.clip", &RunConfig::ppo_clip);
        add_f("ppo.entropy_coef", &RunConfig::ppo_entropy_coef);
        add_f("ppo.value_coef", &RunConfig::ppo_value_coef);
        add_f("ppo.max_grad_norm", &RunConfig::ppo_max_grad_norm);
        add_f("ppo.lr", &RunConfig::ppo_lr);

        add_i("train.epochs", &RunConfig::train_epochs);
        add_i("train.envs_per_epoch", &RunConfig::train_envs_per_epoch);

        add_i("eval.every", &RunConfig::eval_every);
        add_i("eval.episodes", &RunConfig::eval_episodes);
        add_i("checkpoint.every", &RunConfig::checkpoint_every);
        return t;
    }();
    return table;
}

const KeyEntry* find_key(const std::string& key) {
    for (const auto& e : key_table())
        if (key == e.key) return &e;
    return nullptr;
}

void apply_line(RunConfig& cfg, const std::string& raw_line, const char* where) {
    std::string line = raw_line;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) return;
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
        throw contract_error(std::string("config: malformed ") + where + " line '" + trim(raw_line) + "' (expected key = value)");
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    const KeyEntry* e = find_key(key);
    if (!e) throw contract_error("config: unknown key '" + key + "'");
    e->set(cfg, val);
}

} // namespace

int RunConfig::obs_dim() const { return add::obs_dim(); }

MlpSpec RunConfig::gen_spec() const {
    MlpSpec s;
    s.widths.push_back(theta_dim());
    for (int i = 0; i < gen_depth; ++i) s.widths.push_back(gen_width);
    s.widths.push_back(theta_dim());
    s.act = Activation::relu;
    s.temb_width = gen_temb;
    return s;
}

MlpSpec RunConfig::critic_spec() const {
    MlpSpec s;
    s.widths.push_back(theta_dim());
    for (int i = 0; i < critic_depth; ++i) s.widths.push_back(critic_width);
    s.widths.push_back(support_m);
    s.act = Activation::tanh_;
    s.temb_width = critic_temb;
    return s;
}

MlpSpec RunConfig::policy_spec() const {
    MlpSpec s;
    s.widths.push_back(obs_dim());
    for (int i = 0; i < agent_depth; ++i) s.widths.push_back(agent_width);
    s.widths.push_back(kActionCount);
    s.act = Activation::tanh_;
    s.temb_width = 0;
    return s;
}

MlpSpec RunConfig::value_spec() const {
    MlpSpec s;
    s.widths.push_back(obs_dim());
    for (int i = 0; i < agent_depth; ++i) s.widths.push_back(agent_width);
    s.widths.push_back(1);
    s.act = Activation::tanh_;
    s.temb_width = 0;
    return s;
}

NoiseSchedule RunConfig::schedule() const {
    return build_schedule(diff_t, diff_beta_min, diff_beta_max);
}

ReturnSupport RunConfig::support() const {
    return make_support(support_m, support_v_min, support_v_max);
}

PpoHyper RunConfig::ppo_hyper() const {
    PpoHyper h;
    h.gamma = ppo_gamma;
    h.lambda = ppo_lambda;
    h.rollout_steps = ppo_rollout_steps;
    h.epochs = ppo_epochs;
    h.minibatches = ppo_minibatches;
    h.clip = ppo_clip;
    h.entropy_coef = ppo_entropy_coef;
    h.value_coef = ppo_value_coef;
    h.max_grad_norm = ppo_max_grad_norm;
    h.lr = ppo_lr;
    h.workers = train_envs_per_epoch;
    h.seed = 0;
    return h;
}

void RunConfig::validate() const {
    auto fail = [](const std::string& key, const std::string& why) {
        throw contract_error("config: " + key + " " + why);
    };
    if (method != "add" && method != "dr" && method != "unguided")
        fail("method", "must be one of add|dr|unguided (got '" + method + "')");
    if (workers < 1) fail("workers", "must be >= 1");

    if (env_n < 5) fail("env.N", "must be >= 5 (got " + std::to_string(env_n) + ")");
    if (env_block_budget < 0 || env_block_budget > env_n * env_n - 2)
        fail("env.block_budget", "must lie in [0, N*N-2]");

    if (diff_t < 1) fail("diffusion.T", "must be >= 1 (got " + std::to_string(diff_t) + ")");
    if (diff_t_prime < 1 || diff_t_prime > diff_t)
        fail("diffusion.T_prime", "must lie in [1, diffusion.T]");
    if (diff_t % diff_t_prime != 0)
        fail("diffusion.T_prime", "must divide diffusion.T evenly");
    if (!(diff_beta_min > 0.0f) || !(diff_beta_min <= diff_beta_max) || !(diff_beta_max < 1.0f))
        fail("diffusion.beta_min", "and diffusion.beta_max must satisfy 0 < min <= max < 1");

    auto net = [&](const char* prefix, int width, int depth, int temb_w, bool timed) {
        if (width < 1) fail(std::string(prefix) + ".width", "must be >= 1");
        if (depth < 1) fail(std::string(prefix) + ".depth", "must be >= 1");
        if (timed && (temb_w < 2 || temb_w % 2 != 0))
            fail(std::string(prefix) + ".temb", "must be even and >= 2");
    };
    net("gen", gen_width, gen_depth, gen_temb, true);
    net("critic", critic_width, critic_depth, critic_temb, true);
    net("agent", agent_width, agent_depth, 0, false);

    if (pretrain_size < 1) fail("pretrain.size", "must be >= 1");
    if (pretrain_steps < 1) fail("pretrain.steps", "must be >= 1");
    if (pretrain_batch < 1) fail("pretrain.batch", "must be >= 1");
    if (!(pretrain_lr > 0.0f)) fail("pretrain.lr", "must be > 0");
    if (pretrain_weight_decay < 0.0f) fail("pretrain.weight_decay", "must be >= 0");

    if (support_m < 2) fail("support.M", "must be >= 2");
    if (!(support_v_min < support_v_max)) fail("support.v_min", "must be < support.v_max");

    if (!(guid_omega >= 0.0f)) fail("guidance.omega", "must be >= 0");
    if (!(guid_alpha > 0.0f && guid_alpha <= 1.0f)) fail("guidance.alpha", "must lie in (0, 1]");

    if (!(critic_lr > 0.0f)) fail("critic.lr", "must be > 0");
    if (critic_minibatches < 1) fail("critic.minibatches", "must be >= 1");
    if (critic_epochs < 1) fail("critic.epochs", "must be >= 1");
    if (critic_batch < 1) fail("critic.batch", "must be >= 1");
    if (buffer_capacity < 1) fail("buffer.capacity", "must be >= 1");

    if (!(ppo_gamma > 0.0f && ppo_gamma <= 1.0f)) fail("ppo.gamma", "must lie in (0, 1]");
    if (!(ppo_lambda >= 0.0f && ppo_lambda <= 1.0f)) fail("ppo.lambda", "must lie in [0, 1]");
    if (ppo_rollout_steps < 1) fail("ppo.rollout_steps", "must be >= 1");
    if (ppo_epochs < 1) fail("ppo.epochs", "must be >= 1");
    if (ppo_minibatches < 1) fail("ppo.minibatches", "must be >= 1");
    if (!(ppo_clip >= 0.0f)) fail("ppo.clip", "must be >= 0");
    if (ppo_entropy_coef < 0.0f) fail("ppo.entropy_coef", "must be >= 0");
    if (!(ppo_value_coef > 0.0f)) fail("ppo.value_coef", "must be > 0");
    if (!(ppo_max_grad_norm > 0.0f)) fail("ppo.max_grad_norm", "must be > 0");
    if (!(ppo_lr > 0.0f)) fail("ppo.lr", "must be > 0");

    if (train_epochs < 0) fail("train.epochs", "must be >= 0");
    if (train_envs_per_epoch < 1) fail("train.envs_per_epoch", "must be >= 1");
    if (eval_every < 1) fail("eval.every", "must be >= 1");
    if (eval_episodes < 1) fail("eval.episodes", "must be >= 1");
    if (checkpoint_every < 1) fail("checkpoint.every", "must be >= 1");
}

RunConfig parse_config_text(const std::string& text, const std::vector<std::string>& overrides) {
    RunConfig cfg;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) apply_line(cfg, line, "file");
    for (const auto& ov : overrides) apply_line(cfg, ov, "override");
    cfg.validate();
    return cfg;
}

RunConfig parse_config(const std::string& path, const std::vector<std::string>& overrides) {
    std::string text;
    if (!path.empty()) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw io_error("config: cannot read " + path);
        std::ostringstream buf;
        buf << in.rdbuf();
        text = buf.str();
    }
    return parse_config_text(text, overrides);
}

std::string config_text(const RunConfig& cfg) {
    std::string out;
    for (const auto& e : key_table()) {
        out += e.key;
        out += " = ";
        out += e.get(cfg);
        out += "\n";
    }
    return out;
}

uint64_t config_hash(const RunConfig& cfg) {
    const std::string text = config_text(cfg);
    std::string ident;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (line.rfind("out = ", 0) == 0 || line.rfind("seed = ", 0) == 0) continue;
        ident += line;
        ident += "\n";
    }
    return fnv1a64(ident);
}

std::string run_name(const RunConfig& cfg) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%016llx-s%llu",
                  static_cast<unsigned long long>(config_hash(cfg)),
                  static_cast<unsigned long long>(cfg.seed));
    return buf;
}

std::string run_dir(const RunConfig& cfg) { return cfg.out + "/" + run_name(cfg); }

} // namespace add
