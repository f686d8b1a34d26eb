#include "figclip/embedding_matrix.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "json.hpp"

#include "figclip/errors.hpp"

namespace figclip {

namespace {
constexpr char kMagic[6] = {'F', 'G', 'E', 'M', 'B', '1'};

void put_u32(std::ofstream& out, uint32_t v) {
    char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    out.write(b, 4);
}

uint32_t get_u32(std::ifstream& in, const std::string& path) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4)) throw FormatError("truncated file " + path);
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}
}  // namespace

void EmbeddingMatrix::set_id(size_t row, const std::string& id) {
    if (row >= rows_) throw FormatError("row " + std::to_string(row) + " out of range");
    if (index_.count(id)) throw FormatError("duplicate embedding id " + id);
    if (ids_.size() <= row) ids_.resize(rows_);
    ids_[row] = id;
    index_[id] = row;
}

size_t EmbeddingMatrix::row_of(const std::string& id) const {
    auto it = index_.find(id);
    if (it == index_.end()) throw MissingEmbedding("no embedding row with id " + id);
    return it->second;
}

Tensor EmbeddingMatrix::row_tensor(size_t i) const {
    Tensor t({dim_});
    auto r = row(i);
    for (size_t c = 0; c < dim_; ++c) t.data[c] = static_cast<double>(r[c]);
    return t;
}

Tensor EmbeddingMatrix::row_grid(size_t i, size_t tokens) const {
    if (tokens == 0 || dim_ % tokens != 0)
        throw ShapeError("row of dim " + std::to_string(dim_) + " cannot form " + std::to_string(tokens) + " tokens");
    Tensor t({tokens, dim_ / tokens});
    auto r = row(i);
    for (size_t c = 0; c < dim_; ++c) t.data[c] = static_cast<double>(r[c]);
    return t;
}

void EmbeddingMatrix::append_row(const std::string& id, const std::vector<float>& values) {
    if (rows_ == 0 && dim_ == 0) dim_ = values.size();
    if (values.size() != dim_)
        throw ShapeError("appending row of dim " + std::to_string(values.size()) + " to matrix of dim " +
                         std::to_string(dim_));
    if (index_.count(id)) throw FormatError("duplicate embedding id " + id);
    data_.insert(data_.end(), values.begin(), values.end());
    ids_.push_back(id);
    index_[id] = rows_;
    ++rows_;
}

void EmbeddingMatrix::save(const std::string& path) const {
    if (ids_.size() != rows_) throw FormatError("id count " + std::to_string(ids_.size()) +
                                                " != row count " + std::to_string(rows_));
    for (size_t i = 0; i < ids_.size(); ++i)
        if (ids_[i].empty()) throw FormatError("row " + std::to_string(i) + " has no id");
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot write " + path);
    out.write(kMagic, sizeof(kMagic));
    put_u32(out, static_cast<uint32_t>(rows_));
    put_u32(out, static_cast<uint32_t>(dim_));
    for (float v : data_) {
        uint32_t bits = std::bit_cast<uint32_t>(v);
        char b[4];
        for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((bits >> (8 * i)) & 0xff);
        out.write(b, 4);
    }
    if (!out) throw FormatError("write failed for " + path);

    std::ofstream sc(path + ".ids.jsonl", std::ios::trunc);
    if (!sc) throw FormatError("cannot write " + path + ".ids.jsonl");
    for (size_t i = 0; i < ids_.size(); ++i) {
        nlohmann::json j{{"row", i}, {"id", ids_[i]}};
        sc << j.dump() << "\n";
    }
}

EmbeddingMatrix EmbeddingMatrix::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path);
    char magic[sizeof(kMagic)];
    if (!in.read(magic, sizeof(kMagic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw FormatError("bad magic in " + path);
    EmbeddingMatrix m;
    m.rows_ = get_u32(in, path);
    m.dim_ = get_u32(in, path);
    m.data_.resize(m.rows_ * m.dim_);
    for (size_t i = 0; i < m.data_.size(); ++i) {
        uint32_t bits = get_u32(in, path);
        m.data_[i] = std::bit_cast<float>(bits);
    }
    char extra;
    if (in.read(&extra, 1)) throw FormatError("trailing bytes in " + path);

    std::ifstream sc(path + ".ids.jsonl");
    if (!sc) throw FormatError("missing sidecar " + path + ".ids.jsonl");
    m.ids_.assign(m.rows_, "");
    std::vector<bool> seen(m.rows_, false);
    std::string line;
    size_t count = 0;
    while (std::getline(sc, line)) {
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw FormatError("bad sidecar line in " + path + ".ids.jsonl: " + e.what());
        }
        if (!j.contains("row") || !j.contains("id") || !j["row"].is_number_unsigned() || !j["id"].is_string())
            throw FormatError("bad sidecar record in " + path + ".ids.jsonl");
        size_t row = j["row"].get<size_t>();
        if (row >= m.rows_) throw FormatError("sidecar row " + std::to_string(row) + " out of range");
        if (seen[row]) throw FormatError("duplicate sidecar row " + std::to_string(row));
        seen[row] = true;
        std::string id = j["id"].get<std::string>();
        if (m.index_.count(id)) throw FormatError("duplicate embedding id " + id);
        m.ids_[row] = id;
        m.index_[id] = row;
        ++count;
    }
    if (count != m.rows_)
        throw FormatError("sidecar has " + std::to_string(count) + " ids for " + std::to_string(m.rows_) + " rows");
    return m;
}

}  // namespace figclip
