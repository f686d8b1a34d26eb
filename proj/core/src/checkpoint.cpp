#include "figclip/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <vector>

#include "figclip/errors.hpp"

namespace figclip {

namespace {

constexpr char kMagic[7] = {'F', 'G', 'C', 'K', 'P', 'T', '1'};

void put_u16(std::string& buf, uint16_t v) {
    buf.push_back(static_cast<char>(v & 0xff));
    buf.push_back(static_cast<char>((v >> 8) & 0xff));
}

void put_u32(std::string& buf, uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f32(std::string& buf, float v) {
    uint32_t bits = std::bit_cast<uint32_t>(v);
    put_u32(buf, bits);
}

class Reader {
public:
    Reader(const std::string& path) : path_(path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw FormatError("cannot open " + path);
        data_.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    }

    void need(size_t n) {
        if (pos_ + n > data_.size()) throw FormatError("truncated file " + path_);
    }

    uint16_t u16() {
        need(2);
        uint16_t v = static_cast<uint8_t>(data_[pos_]) | (static_cast<uint16_t>(static_cast<uint8_t>(data_[pos_ + 1])) << 8);
        pos_ += 2;
        return v;
    }

    uint32_t u32() {
        need(4);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<uint8_t>(data_[pos_ + i])) << (8 * i);
        pos_ += 4;
        return v;
    }

    uint8_t u8() {
        need(1);
        return static_cast<uint8_t>(data_[pos_++]);
    }

    float f32() { return std::bit_cast<float>(u32()); }

    std::string bytes(size_t n) {
        need(n);
        std::string s(data_.data() + pos_, n);
        pos_ += n;
        return s;
    }

    bool at_end() const { return pos_ == data_.size(); }

private:
    std::string path_;
    std::vector<char> data_;
    size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const std::string& path, const std::map<std::string, Tensor>& tensors) {
    std::string buf;
    buf.append(kMagic, sizeof(kMagic));
    if (tensors.size() > std::numeric_limits<uint32_t>::max())
        throw FormatError("too many tensors");
    put_u32(buf, static_cast<uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) {
        if (name.size() > std::numeric_limits<uint16_t>::max())
            throw FormatError("tensor name too long: " + name);
        put_u16(buf, static_cast<uint16_t>(name.size()));
        buf.append(name);
        if (t.ndim() > 255) throw FormatError("tensor rank too large for " + name);
        buf.push_back(static_cast<char>(t.ndim()));
        for (size_t d : t.shape) put_u32(buf, static_cast<uint32_t>(d));
        for (double v : t.data) put_f32(buf, static_cast<float>(v));
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot write " + path);
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw FormatError("write failed for " + path);
}

std::map<std::string, Tensor> load_checkpoint(const std::string& path) {
    Reader r(path);
    std::string magic = r.bytes(sizeof(kMagic));
    if (std::memcmp(magic.data(), kMagic, sizeof(kMagic)) != 0)
        throw FormatError("bad magic in " + path);
    const uint32_t count = r.u32();
    std::map<std::string, Tensor> out;
    for (uint32_t i = 0; i < count; ++i) {
        const uint16_t name_len = r.u16();
        std::string name = r.bytes(name_len);
        const uint8_t ndim = r.u8();
        std::vector<size_t> shape(ndim);
        size_t numel = 1;
        for (uint8_t d = 0; d < ndim; ++d) {
            shape[d] = r.u32();
            numel *= shape[d];
        }
        Tensor t(shape);
        for (size_t j = 0; j < numel; ++j) t.data[j] = static_cast<double>(r.f32());
        if (out.count(name)) throw FormatError("duplicate tensor name " + name + " in " + path);
        out.emplace(std::move(name), std::move(t));
    }
    if (!r.at_end()) throw FormatError("trailing bytes in " + path);
    return out;
}

}  // namespace figclip
