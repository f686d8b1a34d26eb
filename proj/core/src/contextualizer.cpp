#include "figclip/contextualizer.hpp"

#include "figclip/errors.hpp"
#include "figclip/rng.hpp"

namespace figclip {

void VideoContextualizer::init_params(ParamStore& store, uint64_t seed) const {
    auto gauss = [&](std::vector<size_t> shape, uint64_t stream) {
        Rng rng(derive_seed(seed, 0xacceU, stream));
        return Tensor::gaussian(std::move(shape), 0.02, rng);
    };
    store.add("vc.table.v_token", gauss({dim_}, 1), false);
    store.add("vc.table.e_token", gauss({dim_}, 2), false);
    store.add("vc.table.typ_v", gauss({dim_}, 3), false);
    store.add("vc.table.typ_e", gauss({dim_}, 4), false);
    store.add("vc.table.typ_f", gauss({dim_}, 5), false);
    store.add("vc.table.e_pos", gauss({p_max_, dim_}, 6), false);
    store.add("vc.table.f_pos", gauss({t_max_, dim_}, 7), false);
    store.add("vc.ln_in.gamma", Tensor::full({dim_}, 1.0), false);
    store.add("vc.ln_in.beta", Tensor::zeros({dim_}), false);
    tx_.init_params(store, seed, /*frozen=*/false, /*with_io=*/false);
}

NodeId VideoContextualizer::assemble_sequence(TapeSession& s,
                                              const std::vector<std::vector<NodeId>>& frame_embs) const {
    Tape& t = s.tape();
    const size_t events = frame_embs.size();
    if (events == 0 || events > p_max_)
        throw ShapeError("contextualizer got " + std::to_string(events) + " events, P_max=" +
                         std::to_string(p_max_));
    const size_t frames = frame_embs[0].size();
    if (frames == 0 || frames > t_max_)
        throw ShapeError("contextualizer got " + std::to_string(frames) + " frames/event, T_max=" +
                         std::to_string(t_max_));

    NodeId e_pos = s.param("vc.table.e_pos");
    NodeId f_pos = s.param("vc.table.f_pos");
    NodeId typ_f = s.param("vc.table.typ_f");
    NodeId v_tok = t.add(s.param("vc.table.v_token"), s.param("vc.table.typ_v"));
    NodeId e_base = t.add(s.param("vc.table.e_token"), s.param("vc.table.typ_e"));

    std::vector<NodeId> f_pos_rows(frames);
    for (size_t j = 0; j < frames; ++j) f_pos_rows[j] = t.row(f_pos, j);

    std::vector<NodeId> tokens;
    tokens.reserve(sequence_length(events, frames));
    tokens.push_back(v_tok);
    for (size_t k = 0; k < events; ++k) {
        if (frame_embs[k].size() != frames)
            throw ShapeError("event " + std::to_string(k) + " has " + std::to_string(frame_embs[k].size()) +
                             " frames, expected " + std::to_string(frames));
        NodeId epos_k = t.row(e_pos, k);
        tokens.push_back(t.add(e_base, epos_k));
        NodeId frame_common = t.add(typ_f, epos_k);
        for (size_t j = 0; j < frames; ++j) {
            const Tensor& fv = t.value(frame_embs[k][j]);
            if (fv.ndim() != 1 || fv.shape[0] != dim_)
                throw ShapeError("frame embedding has shape " + Tensor::shape_str(fv.shape) + ", expected [" +
                                 std::to_string(dim_) + "]");
            tokens.push_back(t.add(t.add(frame_embs[k][j], frame_common), f_pos_rows[j]));
        }
    }
    NodeId seq = t.stack_rows(tokens);
    return t.layer_norm(seq, s.param("vc.ln_in.gamma"), s.param("vc.ln_in.beta"));
}

VcOutputNodes VideoContextualizer::forward(TapeSession& s,
                                           const std::vector<std::vector<NodeId>>& frame_embs) const {
    const size_t events = frame_embs.size();
    const size_t frames = events ? frame_embs[0].size() : 0;
    NodeId seq = assemble_sequence(s, frame_embs);
    NodeId out = tx_.forward_blocks(s, seq, nullptr);

    Tape& t = s.tape();
    VcOutputNodes result;
    result.v_hat = t.row(out, 0);
    result.e_hat.reserve(events);
    result.f_hat.resize(events);
    for (size_t k = 0; k < events; ++k) {
        const size_t event_pos = 1 + k * (1 + frames);
        result.e_hat.push_back(t.row(out, event_pos));
        result.f_hat[k].reserve(frames);
        for (size_t j = 0; j < frames; ++j) result.f_hat[k].push_back(t.row(out, event_pos + 1 + j));
    }
    return result;
}

}  // namespace figclip
