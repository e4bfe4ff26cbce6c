#pragma once

// Binary tensor files and checkpoints.
//
// TCT1 record layout (little endian):
//   magic   "TCT1" (4 bytes)
//   dtype   u8: 0 = f32, 1 = f64
//   rank    u8
//   dims    rank x u64
//   payload row-major elements
//   name    u32 length + bytes
//
// Checkpoint layout:
//   magic   "TCC1" (4 bytes)
//   u32 manifest length + manifest JSON bytes
//   u32 tensor count
//   count x TCT1 records
//
// f64 payloads round-trip bit-exactly; f32 payloads are widened on load.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "vtc/tensor.hpp"

namespace vtc {

struct NamedTensor {
    std::string name;
    Shape shape;
    std::vector<double> data;
};

namespace detail {

inline void put_bytes(std::ostream& os, const void* p, std::size_t n) {
    os.write(reinterpret_cast<const char*>(p), std::streamsize(n));
}

template <typename T>
void put_le(std::ostream& os, T v) {
    unsigned char buf[sizeof(T)];
    for (std::size_t i = 0; i < sizeof(T); ++i) buf[i] = (unsigned char)((std::uint64_t(v) >> (8 * i)) & 0xFF);
    put_bytes(os, buf, sizeof(T));
}

inline void put_f64_le(std::ostream& os, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    put_le<std::uint64_t>(os, bits);
}

inline void put_f32_le(std::ostream& os, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_le<std::uint32_t>(os, bits);
}

class Reader {
  public:
    explicit Reader(std::istream& is) : is_(is) {}

    std::size_t offset() const { return off_; }

    void bytes(void* p, std::size_t n, const char* what) {
        is_.read(reinterpret_cast<char*>(p), std::streamsize(n));
        if (std::size_t(is_.gcount()) != n)
            throw std::runtime_error(std::string("tensor file truncated reading ") + what +
                                     " at offset " + std::to_string(off_) + ": expected " +
                                     std::to_string(n) + " bytes, got " +
                                     std::to_string(is_.gcount()));
        off_ += n;
    }

    template <typename T>
    T le(const char* what) {
        unsigned char buf[sizeof(T)];
        bytes(buf, sizeof(T), what);
        std::uint64_t v = 0;
        for (std::size_t i = 0; i < sizeof(T); ++i) v |= std::uint64_t(buf[i]) << (8 * i);
        return T(v);
    }

    double f64(const char* what) {
        std::uint64_t bits = le<std::uint64_t>(what);
        double v;
        std::memcpy(&v, &bits, 8);
        return v;
    }

    float f32(const char* what) {
        std::uint32_t bits = le<std::uint32_t>(what);
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }

  private:
    std::istream& is_;
    std::size_t off_ = 0;
};

inline void write_record(std::ostream& os, const NamedTensor& t, bool as_f32) {
    put_bytes(os, "TCT1", 4);
    put_le<std::uint8_t>(os, as_f32 ? 0 : 1);
    put_le<std::uint8_t>(os, std::uint8_t(t.shape.size()));
    for (std::size_t d : t.shape) put_le<std::uint64_t>(os, d);
    if (as_f32)
        for (double v : t.data) put_f32_le(os, float(v));
    else
        for (double v : t.data) put_f64_le(os, v);
    put_le<std::uint32_t>(os, std::uint32_t(t.name.size()));
    put_bytes(os, t.name.data(), t.name.size());
}

inline NamedTensor read_record(Reader& r) {
    char magic[4];
    std::size_t at = r.offset();
    r.bytes(magic, 4, "magic");
    if (std::memcmp(magic, "TCT1", 4) != 0)
        throw std::runtime_error("bad tensor magic at offset " + std::to_string(at) +
                                 ": expected TCT1");
    auto dtype = r.le<std::uint8_t>("dtype");
    if (dtype > 1)
        throw std::runtime_error("unknown dtype code " + std::to_string(dtype) + " at offset " +
                                 std::to_string(r.offset() - 1));
    auto rank = r.le<std::uint8_t>("rank");
    NamedTensor t;
    t.shape.resize(rank);
    std::size_t n = 1;
    for (std::size_t i = 0; i < rank; ++i) {
        t.shape[i] = std::size_t(r.le<std::uint64_t>("dims"));
        if (t.shape[i] == 0 || (n != 0 && t.shape[i] > (std::size_t(1) << 48) / (n ? n : 1)))
            throw std::runtime_error("tensor dims overflow at offset " +
                                     std::to_string(r.offset()));
        n *= t.shape[i];
    }
    t.data.resize(n);
    if (dtype == 1)
        for (std::size_t i = 0; i < n; ++i) t.data[i] = r.f64("payload");
    else
        for (std::size_t i = 0; i < n; ++i) t.data[i] = double(r.f32("payload"));
    auto name_len = r.le<std::uint32_t>("name length");
    t.name.resize(name_len);
    if (name_len) r.bytes(t.name.data(), name_len, "name");
    return t;
}

}  // namespace detail

inline void save_tensor(const std::string& path, const NamedTensor& t, bool as_f32 = false) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open " + path + " for writing");
    detail::write_record(os, t, as_f32);
    if (!os) throw std::runtime_error("write failed for " + path);
}

inline NamedTensor load_tensor(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open " + path);
    detail::Reader r(is);
    return detail::read_record(r);
}

// A checkpoint is an ordered list of named tensors plus a JSON manifest blob.
struct Checkpoint {
    std::string manifest;  // JSON text, opaque at this layer
    std::vector<NamedTensor> tensors;

    const NamedTensor* find(const std::string& name) const {
        for (const auto& t : tensors)
            if (t.name == name) return &t;
        return nullptr;
    }
};

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open " + path + " for writing");
    detail::put_bytes(os, "TCC1", 4);
    detail::put_le<std::uint32_t>(os, std::uint32_t(ck.manifest.size()));
    detail::put_bytes(os, ck.manifest.data(), ck.manifest.size());
    detail::put_le<std::uint32_t>(os, std::uint32_t(ck.tensors.size()));
    for (const auto& t : ck.tensors) detail::write_record(os, t, false);
    if (!os) throw std::runtime_error("write failed for " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open " + path);
    detail::Reader r(is);
    char magic[4];
    r.bytes(magic, 4, "checkpoint magic");
    if (std::memcmp(magic, "TCC1", 4) != 0)
        throw std::runtime_error("bad checkpoint magic in " + path + ": expected TCC1");
    Checkpoint ck;
    auto mlen = r.le<std::uint32_t>("manifest length");
    ck.manifest.resize(mlen);
    if (mlen) r.bytes(ck.manifest.data(), mlen, "manifest");
    auto count = r.le<std::uint32_t>("tensor count");
    ck.tensors.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) ck.tensors.push_back(detail::read_record(r));
    return ck;
}

}  // namespace vtc
