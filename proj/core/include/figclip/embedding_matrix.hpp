#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "figclip/tensor.hpp"

namespace figclip {

// N x d row-indexed embedding store with a string-ID sidecar. Values are kept
// as f32, matching the on-disk FGEMB1 format, so round-trips are bit-exact:
//   magic "FGEMB1" | u32 N | u32 d | N*d f32 LE
// sidecar <file>.ids.jsonl: one {"row":i,"id":"..."} per line.
class EmbeddingMatrix {
public:
    EmbeddingMatrix() = default;
    EmbeddingMatrix(size_t rows, size_t dim) : rows_(rows), dim_(dim), data_(rows * dim, 0.0f) {}

    size_t rows() const { return rows_; }
    size_t dim() const { return dim_; }

    std::span<const float> row(size_t i) const { return {data_.data() + i * dim_, dim_}; }
    std::span<float> row(size_t i) { return {data_.data() + i * dim_, dim_}; }

    const std::vector<std::string>& ids() const { return ids_; }
    void set_id(size_t row, const std::string& id);
    bool has_id(const std::string& id) const { return index_.count(id) > 0; }
    size_t row_of(const std::string& id) const;  // throws MissingEmbedding

    Tensor row_tensor(size_t i) const;
    // Reshapes row i into [tokens, row_dim/tokens]; used for frame token grids.
    Tensor row_grid(size_t i, size_t tokens) const;

    void append_row(const std::string& id, const std::vector<float>& values);

    void save(const std::string& path) const;
    static EmbeddingMatrix load(const std::string& path);

private:
    size_t rows_ = 0;
    size_t dim_ = 0;
    std::vector<float> data_;
    std::vector<std::string> ids_;
    std::unordered_map<std::string, size_t> index_;
};

}  // namespace figclip
