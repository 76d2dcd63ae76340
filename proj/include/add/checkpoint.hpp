#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "add/tensor.hpp"

namespace add {

// Binary snapshot: magic "ADDC", u32 version, u64 epoch, then an
// EOF-terminated table of named f32 tensors (u16 name length, name bytes,
// u8 rank, u32 dims, row-major f32 payload). All integers little-endian.
struct Checkpoint {
    uint32_t version = 1;
    uint64_t epoch = 0;
    std::vector<std::pair<std::string, Tensor>> tensors;

    void add(const std::string& name, const Tensor& t);
    const Tensor* find(const std::string& name) const;
    // find + io_error naming the tensor when absent
    const Tensor& need(const std::string& name) const;

    // strings ride along as byte-valued tensors
    void put_text(const std::string& name, const std::string& text);
    std::string get_text(const std::string& name) const;
};

void save_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::string& path);

} // namespace add
