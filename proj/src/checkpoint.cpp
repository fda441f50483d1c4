#include "retc/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace retc {

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u32(const std::vector<std::uint8_t>& b, std::size_t& i) {
    RETC_CHECK(i + 4 <= b.size(), ErrorKind::Io,
               "checkpoint truncated at byte " + std::to_string(i));
    std::uint32_t v = 0;
    for (int k = 0; k < 4; ++k) v |= static_cast<std::uint32_t>(b[i + k]) << (8 * k);
    i += 4;
    return v;
}

std::uint64_t get_u64(const std::vector<std::uint8_t>& b, std::size_t& i) {
    RETC_CHECK(i + 8 <= b.size(), ErrorKind::Io,
               "checkpoint truncated at byte " + std::to_string(i));
    std::uint64_t v = 0;
    for (int k = 0; k < 8; ++k) v |= static_cast<std::uint64_t>(b[i + k]) << (8 * k);
    i += 8;
    return v;
}

}  // namespace

const std::vector<float>* Checkpoint::find(const std::string& name) const {
    for (const auto& [n, a] : arrays)
        if (n == name) return &a;
    return nullptr;
}

const std::vector<float>& Checkpoint::require(const std::string& name) const {
    const auto* a = find(name);
    RETC_CHECK(a != nullptr, ErrorKind::Io, "checkpoint is missing array '" + name + "'");
    return *a;
}

void Checkpoint::add(const std::string& name, const Tensor& t) {
    std::vector<float> a(t.data.size());
    for (std::size_t i = 0; i < a.size(); ++i) a[i] = static_cast<float>(t.data[i]);
    arrays.emplace_back(name, std::move(a));
}

Tensor Checkpoint::tensor(const std::string& name, std::vector<std::int64_t> shape) const {
    const auto& a = require(name);
    RETC_CHECK(static_cast<std::int64_t>(a.size()) == shape_numel(shape), ErrorKind::Io,
               "checkpoint array '" + name + "' has wrong length");
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < a.size(); ++i) t.data[i] = static_cast<Real>(a[i]);
    return t;
}

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ck) {
    std::vector<std::uint8_t> out;
    const char magic[6] = {'R', 'C', 'K', 'P', 'T', '1'};
    out.insert(out.end(), magic, magic + 6);
    const std::string js = ck.meta.dump();
    put_u32(out, static_cast<std::uint32_t>(js.size()));
    out.insert(out.end(), js.begin(), js.end());
    put_u32(out, static_cast<std::uint32_t>(ck.arrays.size()));
    for (const auto& [name, a] : ck.arrays) {
        put_u32(out, static_cast<std::uint32_t>(name.size()));
        out.insert(out.end(), name.begin(), name.end());
        put_u64(out, static_cast<std::uint64_t>(a.size()));
        const std::size_t start = out.size();
        out.resize(out.size() + a.size() * 4);
        for (std::size_t i = 0; i < a.size(); ++i) {
            std::uint32_t bits;
            std::memcpy(&bits, &a[i], 4);
            for (int k = 0; k < 4; ++k)
                out[start + i * 4 + static_cast<std::size_t>(k)] =
                    static_cast<std::uint8_t>((bits >> (8 * k)) & 0xff);
        }
    }
    return out;
}

Checkpoint deserialize_checkpoint(const std::vector<std::uint8_t>& b) {
    RETC_CHECK(b.size() >= 6 && std::memcmp(b.data(), "RCKPT1", 6) == 0, ErrorKind::Io,
               "not a checkpoint file (bad magic)");
    std::size_t i = 6;
    Checkpoint ck;
    const std::uint32_t jlen = get_u32(b, i);
    RETC_CHECK(i + jlen <= b.size(), ErrorKind::Io,
               "checkpoint truncated at byte " + std::to_string(i));
    try {
        ck.meta = nlohmann::json::parse(b.begin() + static_cast<std::ptrdiff_t>(i),
                                        b.begin() + static_cast<std::ptrdiff_t>(i + jlen));
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::Io, std::string("checkpoint JSON block is invalid: ") + e.what());
    }
    i += jlen;
    const std::uint32_t count = get_u32(b, i);
    ck.arrays.reserve(count);
    for (std::uint32_t ai = 0; ai < count; ++ai) {
        const std::uint32_t nlen = get_u32(b, i);
        RETC_CHECK(i + nlen <= b.size(), ErrorKind::Io,
                   "checkpoint truncated at byte " + std::to_string(i));
        std::string name(b.begin() + static_cast<std::ptrdiff_t>(i),
                         b.begin() + static_cast<std::ptrdiff_t>(i + nlen));
        i += nlen;
        const std::uint64_t alen = get_u64(b, i);
        RETC_CHECK(i + alen * 4 <= b.size(), ErrorKind::Io,
                   "checkpoint truncated at byte " + std::to_string(i));
        std::vector<float> a(alen);
        for (std::uint64_t k = 0; k < alen; ++k) {
            std::uint32_t bits = 0;
            for (int byte = 0; byte < 4; ++byte)
                bits |= static_cast<std::uint32_t>(b[i + k * 4 + static_cast<std::uint64_t>(byte)])
                        << (8 * byte);
            std::memcpy(&a[k], &bits, 4);
        }
        i += alen * 4;
        ck.arrays.emplace_back(std::move(name), std::move(a));
    }
    return ck;
}

void save_checkpoint(const Checkpoint& ck, const std::string& path) {
    const auto bytes = serialize_checkpoint(ck);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    RETC_CHECK(out.good(), ErrorKind::Io, "cannot open checkpoint for writing: " + path);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    RETC_CHECK(out.good(), ErrorKind::Io, "checkpoint write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    RETC_CHECK(in.good(), ErrorKind::Io, "cannot open checkpoint: " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return deserialize_checkpoint(bytes);
}

}  // namespace retc
