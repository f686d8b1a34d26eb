#pragma once

#include <cstdint>
#include <vector>

#include "figclip/encoders.hpp"
#include "figclip/tape.hpp"

namespace figclip {

// Raw transformer outputs split back by token position. Normalization for
// loss use happens in the losses module.
struct VcOutputNodes {
    NodeId v_hat = 0;                         // [d]
    std::vector<NodeId> e_hat;                // P x [d]
    std::vector<std::vector<NodeId>> f_hat;   // P x T x [d]
};

// Video contextualizer: a trainable transformer encoder over the token
// sequence [v, e_1, f_1^1..f_1^T, ..., e_P, f_P^1..f_P^T]. Learnable video
// and event seed tokens are shared (events are distinguished by position
// embeddings); tokens are augmented additively with type and position
// embeddings and LayerNormed before the blocks. All parameters live under
// "vc.*" and train.
class VideoContextualizer {
public:
    VideoContextualizer(size_t dim, size_t p_max, size_t t_max, size_t blocks = 6, size_t heads = 4)
        : dim_(dim), p_max_(p_max), t_max_(t_max),
          tx_("vc", EncoderDims{dim, dim, 0, blocks, heads, 4}) {}

    size_t dim() const { return dim_; }
    size_t p_max() const { return p_max_; }
    size_t t_max() const { return t_max_; }

    void init_params(ParamStore& store, uint64_t seed) const;

    static size_t sequence_length(size_t events, size_t frames) { return 1 + events * (1 + frames); }

    // frame_embs: P x T nodes, each [dim]. Returns the assembled, augmented,
    // LayerNormed sequence [(1+P(1+T)), dim].
    NodeId assemble_sequence(TapeSession& s, const std::vector<std::vector<NodeId>>& frame_embs) const;

    VcOutputNodes forward(TapeSession& s, const std::vector<std::vector<NodeId>>& frame_embs) const;

private:
    size_t dim_;
    size_t p_max_;
    size_t t_max_;
    TransformerEncoder tx_;
};

}  // namespace figclip
