#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <string>
#include <unordered_map>
#include <vector>

#include "figclip/annotations.hpp"
#include "figclip/embedding_matrix.hpp"
#include "figclip/lora.hpp"
#include "figclip/tape.hpp"

namespace figclip {

struct EncoderDims {
    size_t dim = 64;        // d: embedding dim and transformer width
    size_t input_dim = 64;  // per-token feature dim of a frame grid
    size_t tokens = 16;     // tokens per frame grid
    size_t blocks = 4;
    size_t heads = 4;
    size_t mlp_ratio = 4;
};

// Pre-norm transformer encoder whose parameters live in a ParamStore under
// `<prefix>.`. The image backbone and the optional text transformer use the
// full forward (input proj -> blocks -> final LN -> mean pool -> output proj);
// the video contextualizer reuses forward_blocks on its own assembled
// sequence. All linears are weight-only; q/k/v/o/fc/proj accept adapters.
class TransformerEncoder {
public:
    TransformerEncoder(std::string prefix, EncoderDims dims) : prefix_(std::move(prefix)), dims_(dims) {}

    const std::string& prefix() const { return prefix_; }
    const EncoderDims& dims() const { return dims_; }

    // with_io also registers in_proj / out_proj / ln_f (full-forward users);
    // block-only users (the video contextualizer) skip them.
    void init_params(ParamStore& store, uint64_t seed, bool frozen, bool with_io = true) const;
    std::vector<AdaptableWeight> adaptable_weights() const;

    // Token grid [n, input_dim] -> [dim]; l2-normalized when `normalize`.
    NodeId forward(TapeSession& s, NodeId tokens, const AdapterSet* adapters, bool normalize = true) const;

    // Runs the blocks only on an already-width-`dim` sequence [S, dim].
    NodeId forward_blocks(TapeSession& s, NodeId x, const AdapterSet* adapters) const;

    std::string weight_name(size_t block, const std::string& type) const;

private:
    NodeId attention(TapeSession& s, NodeId x, size_t block, const AdapterSet* adapters) const;

    std::string prefix_;
    EncoderDims dims_;
};

// Frozen deterministic text embedder. Default mode hashes whitespace tokens
// into fixed Gaussian vectors, averages them, applies a frozen random linear
// layer ("text.proj") and l2-normalizes; results are cached by prompt bytes.
// Transformer mode routes token vectors through a LoRA-injectable frozen
// TransformerEncoder under "text." instead (no caching: adapters may train).
class TextEncoder {
public:
    enum class Mode { hash_linear, transformer };

    TextEncoder(Mode mode, EncoderDims dims) : mode_(mode), dims_(dims), tx_("text", dims) {}

    Mode mode() const { return mode_; }
    const EncoderDims& dims() const { return dims_; }

    void init_params(ParamStore& store, uint64_t seed) const;
    std::vector<AdaptableWeight> adaptable_weights() const;

    // Pure (no-tape) path; cached in hash_linear mode.
    Tensor embed(const ParamStore& store, const std::string& text, bool normalize = true) const;

    // Tape path; gradients flow into any text adapters.
    NodeId embed_node(TapeSession& s, const std::string& text, const AdapterSet* adapters,
                      bool normalize = true) const;

    // Token hash vector: fixed function of the token bytes alone.
    static Tensor token_vector(const std::string& token, size_t dim);

    void clear_cache() const;

private:
    Tensor token_average(const std::string& text) const;
    Tensor token_grid(const std::string& text) const;

    Mode mode_;
    EncoderDims dims_;
    TransformerEncoder tx_;
    mutable std::unordered_map<std::string, Tensor> cache_;
    mutable std::shared_mutex cache_mutex_;
};

// Resolves frame refs to token grids: "emb:<row>" handles hit the attached
// dataset-level matrix; anything else is a path to a per-frame FGEMB1 file
// whose rows are the grid.
class FrameSource {
public:
    FrameSource(size_t tokens, size_t input_dim) : tokens_(tokens), input_dim_(input_dim) {}

    void attach_matrix(EmbeddingMatrix m) { matrix_ = std::move(m); }
    bool has_matrix() const { return matrix_.has_value(); }

    Tensor grid(const FrameRef& ref) const;  // [tokens, input_dim]

private:
    size_t tokens_;
    size_t input_dim_;
    std::optional<EmbeddingMatrix> matrix_;
    mutable std::map<std::string, EmbeddingMatrix> file_cache_;
    mutable std::shared_mutex file_mutex_;
};

}  // namespace figclip
