#include "add/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "add/error.hpp"

namespace add {

namespace {

constexpr char kMagic[4] = {'A', 'D', 'D', 'C'};
constexpr uint32_t kVersion = 1;
constexpr int kMaxRank = 8;

void put_u16(std::string& out, uint16_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
}

void put_u32(std::string& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f32(std::string& out, float f) {
    uint32_t bits;
    std::memcpy(&bits, &f, 4);
    put_u32(out, bits);
}

struct Reader {
    const std::string& buf;
    const std::string& path;
    size_t pos = 0;

    bool eof() const { return pos >= buf.size(); }

    void need_bytes(size_t n, const char* what) {
        if (pos + n > buf.size())
            throw io_error("checkpoint: " + path + " truncated at offset " + std::to_string(pos) +
                           " while reading " + what);
    }
    uint16_t u16(const char* what) {
        need_bytes(2, what);
        uint16_t v = static_cast<uint16_t>(static_cast<unsigned char>(buf[pos])) |
                     static_cast<uint16_t>(static_cast<unsigned char>(buf[pos + 1])) << 8;
        pos += 2;
        return v;
    }
    uint32_t u32(const char* what) {
        need_bytes(4, what);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<uint32_t>(static_cast<unsigned char>(buf[pos + static_cast<size_t>(i)])) << (8 * i);
        pos += 4;
        return v;
    }
    uint64_t u64(const char* what) {
        need_bytes(8, what);
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i)
            v |= static_cast<uint64_t>(static_cast<unsigned char>(buf[pos + static_cast<size_t>(i)])) << (8 * i);
        pos += 8;
        return v;
    }
};

} // namespace

void Checkpoint::add(const std::string& name, const Tensor& t) {
    require(!name.empty() && name.size() <= 0xffff, "checkpoint: tensor name length out of range");
    require(!find(name), "checkpoint: duplicate tensor name " + name);
    require(!t.shape.empty() && t.numel() > 0, "checkpoint: tensor " + name + " is empty");
    require(static_cast<int>(t.shape.size()) <= kMaxRank, "checkpoint: tensor " + name + " rank too large");
    tensors.emplace_back(name, t);
}

const Tensor* Checkpoint::find(const std::string& name) const {
    for (const auto& [n, t] : tensors)
        if (n == name) return &t;
    return nullptr;
}

const Tensor& Checkpoint::need(const std::string& name) const {
    const Tensor* t = find(name);
    if (!t) throw io_error("checkpoint: missing tensor " + name);
    return *t;
}

void Checkpoint::put_text(const std::string& name, const std::string& text) {
    require(!text.empty(), "checkpoint: empty text for " + name);
    Tensor t = Tensor::zeros({static_cast<int64_t>(text.size())});
    for (size_t i = 0; i < text.size(); ++i)
        t.data[i] = static_cast<float>(static_cast<unsigned char>(text[i]));
    add(name, t);
}

std::string Checkpoint::get_text(const std::string& name) const {
    const Tensor& t = need(name);
    std::string out;
    out.reserve(static_cast<size_t>(t.numel()));
    for (float f : t.data) {
        const int c = static_cast<int>(f);
        if (c < 0 || c > 255 || static_cast<float>(c) != f)
            throw io_error("checkpoint: tensor " + name + " does not hold text bytes");
        out.push_back(static_cast<char>(c));
    }
    return out;
}

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
    std::string out;
    out.append(kMagic, 4);
    put_u32(out, ck.version);
    put_u64(out, ck.epoch);
    for (const auto& [name, t] : ck.tensors) {
        put_u16(out, static_cast<uint16_t>(name.size()));
        out += name;
        out.push_back(static_cast<char>(t.shape.size()));
        for (int64_t d : t.shape) put_u32(out, static_cast<uint32_t>(d));
        for (float f : t.data) put_f32(out, f);
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw io_error("checkpoint: cannot open " + path + " for writing");
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    f.flush();
    if (!f) throw io_error("checkpoint: failed writing " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw io_error("checkpoint: cannot read " + path);
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

    Reader r{buf, path};
    r.need_bytes(4, "magic");
    if (std::memcmp(buf.data(), kMagic, 4) != 0)
        throw io_error("checkpoint: " + path + " has wrong magic bytes");
    r.pos = 4;

    Checkpoint ck;
    ck.version = r.u32("version");
    if (ck.version != kVersion)
        throw io_error("checkpoint: " + path + " has unsupported version " +
                       std::to_string(ck.version));
    ck.epoch = r.u64("epoch");

    while (!r.eof()) {
        const uint16_t name_len = r.u16("tensor name length");
        if (name_len == 0) throw io_error("checkpoint: " + path + " has empty tensor name");
        r.need_bytes(name_len, "tensor name");
        std::string name = buf.substr(r.pos, name_len);
        r.pos += name_len;

        r.need_bytes(1, "tensor rank");
        const int rank = static_cast<unsigned char>(buf[r.pos++]);
        if (rank < 1 || rank > kMaxRank)
            throw io_error("checkpoint: " + path + " tensor " + name + " has bad rank " +
                           std::to_string(rank));

        std::vector<int64_t> shape;
        int64_t numel = 1;
        for (int i = 0; i < rank; ++i) {
            const uint32_t d = r.u32("tensor dim");
            if (d == 0 || d > (1u << 28))
                throw io_error("checkpoint: " + path + " tensor " + name + " has bad dim");
            shape.push_back(static_cast<int64_t>(d));
            numel *= static_cast<int64_t>(d);
        }
        r.need_bytes(static_cast<size_t>(numel) * 4, "tensor data");

        Tensor t = Tensor::zeros(shape);
        std::memcpy(t.data.data(), buf.data() + r.pos, static_cast<size_t>(numel) * 4);
        r.pos += static_cast<size_t>(numel) * 4;
        ck.add(name, std::move(t));
    }
    return ck;
}

} // namespace add
