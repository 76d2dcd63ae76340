#pragma once
// Error taxonomy mirrored by the CLI exit codes: contract violations (1),
// verification failures (2), and I/O problems (3).
#include <stdexcept>
#include <string>

namespace add {

struct contract_error : std::runtime_error {
    explicit contract_error(const std::string& msg) : std::runtime_error(msg) {}
};

struct verification_error : std::runtime_error {
    explicit verification_error(const std::string& msg) : std::runtime_error(msg) {}
};

struct io_error : std::runtime_error {
    explicit io_error(const std::string& msg) : std::runtime_error(msg) {}
};

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw contract_error(msg);
}

} // namespace add
