#pragma once
// Maze environment family: continuous parameter tensors decoded into playable
// partially observable grid worlds, a random generator for pre-training data,
// complexity metrics, and the fixed transfer test suite.
#include <cstdint>
#include <string>
#include <vector>

#include "add/error.hpp"
#include "add/tensor.hpp"

namespace add {

// interior grid side, observation window, and episode cap defaults
inline constexpr int kDefaultMazeN = 7;
inline constexpr int kObsWindow = 5;
inline int episode_cap(int N) { return 8 * N; }
// egocentric window one-hot (wall/empty/goal) plus heading one-hot
inline int obs_dim() { return kObsWindow * kObsWindow * 3 + 4; }

// continuous environment parameters: N x N x 3 values in [0,1], channels
// walls / agent start / goal, laid out as (row*N + col)*3 + channel
struct EnvParam {
    int N = 0;
    Tensor values;

    float at(int r, int c, int ch) const {
        return values.data[static_cast<size_t>((r * N + c) * 3 + ch)];
    }
    float& at(int r, int c, int ch) {
        return values.data[static_cast<size_t>((r * N + c) * 3 + ch)];
    }
    // one flattened generator row [1, N*N*3]
    Tensor flat_row() const;
    static EnvParam from_flat(const Tensor& row, int N);
    static EnvParam zeros(int N);
};

enum class Heading { north = 0, east = 1, south = 2, west = 3 };
enum class Action { left = 0, right = 1, forward = 2 };

struct MazeEnv {
    int N = 0;
    std::vector<uint8_t> walls; // row-major interior cells; border is implicit wall
    int agent_r = 0, agent_c = 0;
    Heading heading = Heading::east;
    int goal_r = 0, goal_c = 0;
    int steps = 0;
    int n_max = 0;
    bool done = false;

    // initial pose, restored by reset()
    int start_r = 0, start_c = 0;
    Heading start_heading = Heading::east;

    bool wall_at(int r, int c) const {
        if (r < 0 || r >= N || c < 0 || c >= N) return true; // implicit border
        return walls[static_cast<size_t>(r * N + c)] != 0;
    }
};

struct StepResult {
    std::vector<float> obs;
    float reward = 0.0f;
    bool done = false;
};

struct EnvMetrics {
    int block_count = 0;
    int shortest_path = -1; // -1 when unsolvable
    bool solvable = false;
};

// total decoding of continuous parameters into a playable maze
MazeEnv decode(const EnvParam& param);

// discrete re-encoding of a maze back into parameter space ({0,1} walls,
// unit agent/goal peaks, 0.5 on the agent's forward cell)
EnvParam encode(const MazeEnv& env);

// uniform wall count in 0..block_budget_max over distinct cells, then agent
// and goal at distinct cells overriding walls
EnvParam random_param(int N, int block_budget_max, uint64_t seed);

std::vector<float> reset(MazeEnv& env);
StepResult step(MazeEnv& env, Action action);

EnvMetrics metrics(const MazeEnv& env);

// plain-text rendering: '#' wall, 'A' agent, 'G' goal, '.' empty
std::string render(const MazeEnv& env);

// fixed transfer suite: empty room, four-rooms, spiral, S-corridor, and a
// fixed-seed half-density maze; each verified solvable at build time
std::vector<MazeEnv> test_suite(int N);
std::vector<std::string> test_suite_names();

// flat binary dataset of parameter rows (header: N, count; payload f32 LE)
void save_dataset(const std::string& path, int N, const Tensor& rows);
struct Dataset {
    int N = 0;
    Tensor rows;
};
Dataset load_dataset(const std::string& path);

} // namespace add
