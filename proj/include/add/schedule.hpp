#pragma once
// Linear variance schedule for the forward noising process and its
// cumulative products.
#include <vector>

#include "add/error.hpp"

namespace add {

struct NoiseSchedule {
    int T = 0;
    std::vector<float> beta;      // beta[t-1] is the step-t variance
    std::vector<float> alpha_bar; // alpha_bar[t-1] is the running product of (1-beta)

    float beta_at(int t) const {
        check_t(t);
        return beta[static_cast<size_t>(t - 1)];
    }
    // defined for t in 0..T with alpha_bar(0) = 1, the no-noise endpoint
    float alpha_bar_at(int t) const {
        require(t >= 0 && t <= T, "schedule: t out of [0,T]");
        return t == 0 ? 1.0f : alpha_bar[static_cast<size_t>(t - 1)];
    }
    void check_t(int t) const {
        require(t >= 1 && t <= T, "schedule: t out of [1,T], got " + std::to_string(t));
    }
};

// beta interpolated linearly over T steps inclusive of both endpoints.
// Note: production schedules should drive alpha_bar(T) well below 0.01 so
// terminal marginals are near standard normal; tiny test schedules (e.g. the
// T=2 example) legitimately do not, so this is not enforced here.
NoiseSchedule build_schedule(int T, float beta_start, float beta_end);

} // namespace add
