#include "add/schedule.hpp"

namespace add {

NoiseSchedule build_schedule(int T, float beta_start, float beta_end) {
    require(T >= 2, "build_schedule: T must be at least 2");
    require(beta_start > 0.0f && beta_start <= beta_end && beta_end < 1.0f,
            "build_schedule: need 0 < beta_start <= beta_end < 1");
    NoiseSchedule s;
    s.T = T;
    s.beta.resize(static_cast<size_t>(T));
    s.alpha_bar.resize(static_cast<size_t>(T));
    double prod = 1.0;
    for (int t = 0; t < T; ++t) {
        const double frac = T == 1 ? 0.0 : static_cast<double>(t) / (T - 1);
        const double b = beta_start + frac * (static_cast<double>(beta_end) - beta_start);
        s.beta[static_cast<size_t>(t)] = static_cast<float>(b);
        prod *= 1.0 - b;
        s.alpha_bar[static_cast<size_t>(t)] = static_cast<float>(prod);
    }
    return s;
}

} // namespace add
