#include "add/maze.hpp"

#include <algorithm>
#include <cstdio>
#include <deque>
#include <fstream>

#include "add/rng.hpp"

namespace add {

namespace {

constexpr int kDr[4] = {-1, 0, 1, 0}; // north, east, south, west
constexpr int kDc[4] = {0, 1, 0, -1};

int cell_index(int N, int r, int c) { return r * N + c; }

} // namespace

Tensor EnvParam::flat_row() const {
    Tensor row({1, static_cast<int64_t>(N) * N * 3}, values.data);
    return row;
}

EnvParam EnvParam::from_flat(const Tensor& row, int N) {
    require(N >= 2, "env param: grid side too small");
    require(row.numel() == static_cast<int64_t>(N) * N * 3,
            "env param: flat width != N*N*3");
    EnvParam p;
    p.N = N;
    p.values = Tensor({N, N, 3}, row.data);
    return p;
}

EnvParam EnvParam::zeros(int N) {
    require(N >= 2, "env param: grid side too small");
    EnvParam p;
    p.N = N;
    p.values = Tensor::zeros({N, N, 3});
    return p;
}

MazeEnv decode(const EnvParam& param) {
    const int N = param.N;
    require(N >= 2 && param.values.numel() == static_cast<int64_t>(N) * N * 3,
            "decode: malformed env param");
    MazeEnv env;
    env.N = N;
    env.n_max = episode_cap(N);
    env.walls.assign(static_cast<size_t>(N) * N, 0);
    for (int r = 0; r < N; ++r)
        for (int c = 0; c < N; ++c)
            env.walls[static_cast<size_t>(cell_index(N, r, c))] =
                param.at(r, c, 0) >= 0.5f ? 1 : 0;

    // agent: channel-1 argmax, earliest cell in row-major order on ties
    int ar = 0, ac = 0;
    float abest = param.at(0, 0, 1);
    for (int r = 0; r < N; ++r)
        for (int c = 0; c < N; ++c)
            if (param.at(r, c, 1) > abest) {
                abest = param.at(r, c, 1);
                ar = r;
                ac = c;
            }

    // goal: channel-2 argmax excluding the agent cell
    int gr = -1, gc = -1;
    float gbest = 0.0f;
    for (int r = 0; r < N; ++r)
        for (int c = 0; c < N; ++c) {
            if (r == ar && c == ac) continue;
            if (gr < 0 || param.at(r, c, 2) > gbest) {
                gbest = param.at(r, c, 2);
                gr = r;
                gc = c;
            }
        }

    // heading: channel-1 runner-up marks the forward cell when 4-adjacent
    Heading heading = Heading::east;
    int rr = -1, rc = -1;
    float rbest = 0.0f;
    for (int r = 0; r < N; ++r)
        for (int c = 0; c < N; ++c) {
            if (r == ar && c == ac) continue;
            if (rr < 0 || param.at(r, c, 1) > rbest) {
                rbest = param.at(r, c, 1);
                rr = r;
                rc = c;
            }
        }
    if (rr >= 0)
        for (int dir = 0; dir < 4; ++dir)
            if (ar + kDr[dir] == rr && ac + kDc[dir] == rc) {
                heading = static_cast<Heading>(dir);
                break;
            }

    env.agent_r = ar;
    env.agent_c = ac;
    env.goal_r = gr;
    env.goal_c = gc;
    env.heading = heading;
    env.walls[static_cast<size_t>(cell_index(N, ar, ac))] = 0;
    env.walls[static_cast<size_t>(cell_index(N, gr, gc))] = 0;
    env.start_r = ar;
    env.start_c = ac;
    env.start_heading = heading;
    return env;
}

EnvParam encode(const MazeEnv& env) {
    EnvParam p = EnvParam::zeros(env.N);
    for (int r = 0; r < env.N; ++r)
        for (int c = 0; c < env.N; ++c)
            p.at(r, c, 0) = env.walls[static_cast<size_t>(cell_index(env.N, r, c))] ? 1.0f : 0.0f;
    p.at(env.start_r, env.start_c, 0) = 0.0f;
    p.at(env.goal_r, env.goal_c, 0) = 0.0f;
    p.at(env.start_r, env.start_c, 1) = 1.0f;
    const int fr = env.start_r + kDr[static_cast<int>(env.start_heading)];
    const int fc = env.start_c + kDc[static_cast<int>(env.start_heading)];
    if (fr >= 0 && fr < env.N && fc >= 0 && fc < env.N) p.at(fr, fc, 1) = 0.5f;
    p.at(env.goal_r, env.goal_c, 2) = 1.0f;
    return p;
}

EnvParam random_param(int N, int block_budget_max, uint64_t seed) {
    require(N >= 2, "env param: grid side too small");
    require(block_budget_max >= 0 && block_budget_max <= N * N - 2,
            "env param: block budget exceeds usable cells");
    Rng rng(seed);
    EnvParam p = EnvParam::zeros(N);

    const int cells = N * N;
    std::vector<int> order(static_cast<size_t>(cells));
    for (int i = 0; i < cells; ++i) order[static_cast<size_t>(i)] = i;
    // partial Fisher-Yates: first n entries are distinct uniform cells
    const int n = static_cast<int>(rng.below(static_cast<uint64_t>(block_budget_max) + 1));
    for (int i = 0; i < n; ++i) {
        const int j = i + static_cast<int>(rng.below(static_cast<uint64_t>(cells - i)));
        std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(j)]);
        const int cell = order[static_cast<size_t>(i)];
        p.at(cell / N, cell % N, 0) = 1.0f;
    }

    const int agent = static_cast<int>(rng.below(static_cast<uint64_t>(cells)));
    int goal = agent;
    while (goal == agent) goal = static_cast<int>(rng.below(static_cast<uint64_t>(cells)));
    p.at(agent / N, agent % N, 0) = 0.0f;
    p.at(goal / N, goal % N, 0) = 0.0f;
    p.at(agent / N, agent % N, 1) = 1.0f;
    p.at(goal / N, goal % N, 2) = 1.0f;

    const int dir = static_cast<int>(rng.below(4));
    const int fr = agent / N + kDr[dir];
    const int fc = agent % N + kDc[dir];
    if (fr >= 0 && fr < N && fc >= 0 && fc < N && !(fr == agent / N && fc == agent % N))
        p.at(fr, fc, 1) = 0.5f;
    return p;
}

namespace {

std::vector<float> observe(const MazeEnv& env) {
    std::vector<float> obs(static_cast<size_t>(obs_dim()), 0.0f);
    const int half = kObsWindow / 2;
    size_t i = 0;
    for (int dr = -half; dr <= half; ++dr)
        for (int dc = -half; dc <= half; ++dc) {
            const int r = env.agent_r + dr;
            const int c = env.agent_c + dc;
            if (env.wall_at(r, c))
                obs[i + 0] = 1.0f;
            else if (r == env.goal_r && c == env.goal_c)
                obs[i + 2] = 1.0f;
            else
                obs[i + 1] = 1.0f;
            i += 3;
        }
    obs[i + static_cast<size_t>(env.heading)] = 1.0f;
    return obs;
}

} // namespace

std::vector<float> reset(MazeEnv& env) {
    env.agent_r = env.start_r;
    env.agent_c = env.start_c;
    env.heading = env.start_heading;
    env.steps = 0;
    env.done = false;
    return observe(env);
}

StepResult step(MazeEnv& env, Action action) {
    require(!env.done, "env: step after episode end");
    switch (action) {
        case Action::left:
            env.heading = static_cast<Heading>((static_cast<int>(env.heading) + 3) % 4);
            break;
        case Action::right:
            env.heading = static_cast<Heading>((static_cast<int>(env.heading) + 1) % 4);
            break;
        case Action::forward: {
            const int r = env.agent_r + kDr[static_cast<int>(env.heading)];
            const int c = env.agent_c + kDc[static_cast<int>(env.heading)];
            if (!env.wall_at(r, c)) {
                env.agent_r = r;
                env.agent_c = c;
            }
            break;
        }
    }
    env.steps += 1;

    StepResult out;
    if (env.agent_r == env.goal_r && env.agent_c == env.goal_c) {
        out.reward = 1.0f - static_cast<float>(env.steps) / static_cast<float>(env.n_max);
        env.done = true;
    } else if (env.steps >= env.n_max) {
        out.reward = 0.0f;
        env.done = true;
    }
    out.done = env.done;
    out.obs = observe(env);
    return out;
}

EnvMetrics metrics(const MazeEnv& env) {
    EnvMetrics m;
    for (uint8_t w : env.walls) m.block_count += w ? 1 : 0;

    std::vector<int> dist(env.walls.size(), -1);
    std::deque<int> queue;
    const int start = cell_index(env.N, env.agent_r, env.agent_c);
    dist[static_cast<size_t>(start)] = 0;
    queue.push_back(start);
    while (!queue.empty()) {
        const int cur = queue.front();
        queue.pop_front();
        const int r = cur / env.N, c = cur % env.N;
        for (int dir = 0; dir < 4; ++dir) {
            const int nr = r + kDr[dir], nc = c + kDc[dir];
            if (env.wall_at(nr, nc)) continue;
            const int nxt = cell_index(env.N, nr, nc);
            if (dist[static_cast<size_t>(nxt)] >= 0) continue;
            dist[static_cast<size_t>(nxt)] = dist[static_cast<size_t>(cur)] + 1;
            queue.push_back(nxt);
        }
    }
    const int goal = cell_index(env.N, env.goal_r, env.goal_c);
    m.shortest_path = dist[static_cast<size_t>(goal)];
    m.solvable = m.shortest_path >= 0;
    return m;
}

std::string render(const MazeEnv& env) {
    std::string out;
    for (int r = 0; r < env.N; ++r) {
        for (int c = 0; c < env.N; ++c) {
            if (r == env.agent_r && c == env.agent_c)
                out += 'A';
            else if (r == env.goal_r && c == env.goal_c)
                out += 'G';
            else
                out += env.wall_at(r, c) ? '#' : '.';
        }
        out += '\n';
    }
    return out;
}

namespace {

MazeEnv build_env(int N, const std::vector<int>& wall_cells, int ar, int ac, int gr, int gc) {
    EnvParam p = EnvParam::zeros(N);
    for (int cell : wall_cells) p.at(cell / N, cell % N, 0) = 1.0f;
    p.at(ar, ac, 0) = 0.0f;
    p.at(gr, gc, 0) = 0.0f;
    p.at(ar, ac, 1) = 1.0f;
    p.at(gr, gc, 2) = 1.0f;
    return decode(p);
}

MazeEnv empty_room(int N) { return build_env(N, {}, 0, 0, N - 1, N - 1); }

MazeEnv four_rooms(int N) {
    const int mid = N / 2;
    std::vector<int> walls;
    for (int i = 0; i < N; ++i) {
        walls.push_back(cell_index(N, mid, i));
        walls.push_back(cell_index(N, i, mid));
    }
    // one door per arm, off-center
    const int q = mid / 2;
    std::vector<int> doors = {cell_index(N, mid, q), cell_index(N, mid, mid + q + 1),
                              cell_index(N, q, mid), cell_index(N, mid + q + 1, mid)};
    std::vector<int> kept;
    for (int w : walls)
        if (std::find(doors.begin(), doors.end(), w) == doors.end()) kept.push_back(w);
    return build_env(N, kept, 0, 0, N - 1, N - 1);
}

MazeEnv s_corridor(int N) {
    std::vector<int> walls;
    for (int r = 1; r < N; r += 2) {
        const bool gap_right = ((r / 2) % 2) == 0;
        for (int c = 0; c < N; ++c) {
            if (gap_right && c == N - 1) continue;
            if (!gap_right && c == 0) continue;
            walls.push_back(cell_index(N, r, c));
        }
    }
    return build_env(N, walls, 0, 0, N - 1, N - 1);
}

MazeEnv spiral(int N) {
    // concentric rectangular walls at odd rings, one opening each, rotating
    std::vector<int> walls;
    for (int ring = 1; ring <= (N - 1) / 2; ring += 2) {
        const int lo = ring, hi = N - 1 - ring;
        if (lo > hi) break;
        std::vector<int> ring_cells;
        for (int c = lo; c <= hi; ++c) {
            ring_cells.push_back(cell_index(N, lo, c));
            ring_cells.push_back(cell_index(N, hi, c));
        }
        for (int r = lo; r <= hi; ++r) {
            ring_cells.push_back(cell_index(N, r, lo));
            ring_cells.push_back(cell_index(N, r, hi));
        }
        const int gate = (ring / 2) % 2 == 0 ? cell_index(N, lo, (lo + hi) / 2)
                                             : cell_index(N, hi, (lo + hi) / 2);
        for (int cell : ring_cells)
            if (cell != gate) walls.push_back(cell);
    }
    return build_env(N, walls, 0, 0, N / 2, N / 2);
}

MazeEnv dense_random(int N) {
    // fixed seed scan: deterministic per N, takes the first draw that is both
    // dense (walls on at least a third of the cells) and solvable
    for (uint64_t seed = derive_seed(0xD1CEu, "suite.dense"); ; ++seed) {
        EnvParam p = random_param(N, (N * N) / 2, seed);
        MazeEnv env = decode(p);
        EnvMetrics m = metrics(env);
        if (m.block_count * 3 >= N * N && m.solvable && m.shortest_path >= 2) return env;
    }
}

} // namespace

std::vector<MazeEnv> test_suite(int N) {
    require(N >= 5, "test suite: grid side must be at least 5");
    std::vector<MazeEnv> suite = {empty_room(N), four_rooms(N), spiral(N), s_corridor(N),
                                  dense_random(N)};
    for (size_t i = 0; i < suite.size(); ++i) {
        EnvMetrics m = metrics(suite[i]);
        if (!m.solvable)
            throw verification_error("test suite: construction " + test_suite_names()[i] +
                                     " is unsolvable at N=" + std::to_string(N));
    }
    return suite;
}

std::vector<std::string> test_suite_names() {
    return {"empty", "four_rooms", "spiral", "s_corridor", "dense"};
}

void save_dataset(const std::string& path, int N, const Tensor& rows) {
    require(rows.numel() == 0 || rows.cols() == static_cast<int64_t>(N) * N * 3,
            "dataset: row width != N*N*3");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw io_error("dataset: cannot open for write: " + path);
    const uint32_t n32 = static_cast<uint32_t>(N);
    const uint64_t count = static_cast<uint64_t>(rows.numel() == 0 ? 0 : rows.rows());
    out.write(reinterpret_cast<const char*>(&n32), sizeof(n32));
    out.write(reinterpret_cast<const char*>(&count), sizeof(count));
    if (count > 0)
        out.write(reinterpret_cast<const char*>(rows.data.data()),
                  static_cast<std::streamsize>(rows.data.size() * sizeof(float)));
    if (!out) throw io_error("dataset: write failed: " + path);
}

Dataset load_dataset(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("dataset: cannot open for read: " + path);
    uint32_t n32 = 0;
    uint64_t count = 0;
    in.read(reinterpret_cast<char*>(&n32), sizeof(n32));
    in.read(reinterpret_cast<char*>(&count), sizeof(count));
    if (!in) throw io_error("dataset: truncated header: " + path);
    Dataset d;
    d.N = static_cast<int>(n32);
    const int64_t width = static_cast<int64_t>(d.N) * d.N * 3;
    if (count > 0) {
        d.rows = Tensor::zeros({static_cast<int64_t>(count), width});
        in.read(reinterpret_cast<char*>(d.rows.data.data()),
                static_cast<std::streamsize>(d.rows.data.size() * sizeof(float)));
        if (!in) throw io_error("dataset: truncated payload: " + path);
    }
    return d;
}

} // namespace add
