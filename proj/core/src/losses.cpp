#include "figclip/losses.hpp"

#include <algorithm>

#include "figclip/errors.hpp"

namespace figclip {

namespace {

// Additive logit mask value for padded hard-negative slots: exp(x - 1e4)
// underflows to zero, so padded columns never enter a denominator.
constexpr double kMaskedLogit = -1e4;

struct HnBlock {
    NodeId rows = 0;       // [N*H, d] zero-padded, or [R, d] in pool mode
    size_t strip_width = 0;  // H in strip mode; 0 => pool mode (all rows for everyone)
    bool any_padding = false;
    std::vector<std::vector<bool>> valid;  // [N][H] in strip mode
};

// Stacks the ragged per-event negative embeddings into a rectangular
// [N*H_max, d] block (strip mode) or a flat pool.
std::optional<HnBlock> build_hn_block(TapeSession& s, const LossBatchInputs& in, const LossWeights& w) {
    if (!w.use_hn) return std::nullopt;
    size_t h_max = 0, total = 0;
    for (const auto& video : in.hn_text)
        for (const auto& event : video) {
            h_max = std::max(h_max, event.size());
            total += event.size();
        }
    if (total == 0) return std::nullopt;

    Tape& t = s.tape();
    HnBlock out;
    if (w.use_extra_negatives) {
        std::vector<NodeId> rows;
        rows.reserve(total);
        for (const auto& video : in.hn_text)
            for (const auto& event : video)
                for (NodeId n : event) rows.push_back(n);
        out.rows = t.stack_rows(rows);
        out.strip_width = 0;
        return out;
    }

    const size_t d = t.value(in.hn_text[0][0].empty() ? in.event_text[0][0] : in.hn_text[0][0][0]).numel();
    NodeId zero = t.constant(Tensor::zeros({d}));
    std::vector<NodeId> rows;
    for (const auto& video : in.hn_text)
        for (const auto& event : video) {
            std::vector<bool> v(h_max, false);
            for (size_t h = 0; h < h_max; ++h) {
                if (h < event.size()) {
                    rows.push_back(event[h]);
                    v[h] = true;
                } else {
                    rows.push_back(zero);
                    out.any_padding = true;
                }
            }
            out.valid.push_back(std::move(v));
        }
    out.rows = t.stack_rows(rows);
    out.strip_width = h_max;
    return out;
}

// loss = mean_i( lse(row) - diag ) for scaled logits [S | E] with positives
// on the diagonal of S.
NodeId one_direction(TapeSession& s, NodeId sim, const std::optional<HnBlock>& hn, NodeId queries,
                     NodeId scale) {
    Tape& t = s.tape();
    NodeId logits = sim;
    if (hn) {
        NodeId extra = hn->strip_width > 0 ? t.rowwise_block_dots(queries, hn->rows, hn->strip_width)
                                           : t.matmul(queries, t.transpose(hn->rows));
        logits = t.concat({sim, extra}, 1);
    }
    NodeId scaled = t.mul_scalar(logits, scale);
    if (hn && hn->any_padding) {
        const Tensor& lv = t.value(scaled);
        Tensor mask(lv.shape);
        const size_t n = lv.shape[0], cols = lv.shape[1], h = hn->strip_width;
        for (size_t i = 0; i < n; ++i)
            for (size_t j = 0; j < h; ++j)
                if (!hn->valid[i][j]) mask.data[i * cols + (cols - h + j)] = kMaskedLogit;
        scaled = t.add(scaled, t.constant(std::move(mask)));
    }
    return info_nce_from_logits(t, scaled);
}

// Symmetric InfoNCE with the HN extension on the visual->text direction (and
// optionally mirrored into the text->visual rows).
NodeId symmetric_info_nce(TapeSession& s, NodeId queries, NodeId keys, const std::optional<HnBlock>& hn,
                          NodeId scale, bool hn_both_directions) {
    Tape& t = s.tape();
    NodeId sim = t.matmul(queries, t.transpose(keys));
    NodeId forward = one_direction(s, sim, hn, queries, scale);
    NodeId backward = one_direction(s, t.transpose(sim), hn_both_directions ? hn : std::nullopt, queries, scale);
    return t.add(forward, backward);
}

NodeId stack_normalized(TapeSession& s, const std::vector<NodeId>& rows, bool normalize) {
    NodeId m = s.tape().stack_rows(rows);
    return normalize ? s.tape().l2_normalize(m, 1) : m;
}

std::vector<NodeId> event_text_rows(const LossBatchInputs& in) {
    std::vector<NodeId> rows;
    for (const auto& video : in.event_text)
        for (NodeId n : video) rows.push_back(n);
    return rows;
}

// Event-level visual query: l2norm(mean_j f_ik^j) per (video, event).
std::vector<NodeId> ce_query_rows(TapeSession& s, const LossBatchInputs& in) {
    Tape& t = s.tape();
    std::vector<NodeId> rows;
    for (const auto& video : in.frame_embs)
        for (const auto& event : video) {
            if (event.empty()) throw ShapeError("event with no frame embeddings");
            rows.push_back(t.mean(t.stack_rows(event), 0));
        }
    return rows;
}

std::vector<NodeId> vce_query_rows(const LossBatchInputs& in) {
    std::vector<NodeId> rows;
    for (const auto& vc : in.vc_out)
        for (NodeId e : vc.e_hat) rows.push_back(e);
    return rows;
}

void require_vc(const LossBatchInputs& in, const char* term) {
    if (in.vc_out.size() != in.frame_embs.size())
        throw TrainError(std::string(term) + " requires contextualizer outputs for every video (have " +
                         std::to_string(in.vc_out.size()) + " of " + std::to_string(in.frame_embs.size()) + ")");
}

}  // namespace

NodeId info_nce_from_logits(Tape& t, NodeId logits) {
    const Tensor& lv = t.value(logits);
    if (lv.ndim() != 2 || lv.shape[1] < lv.shape[0])
        throw ShapeError("info_nce logits must be [N,M] with M >= N, got " + Tensor::shape_str(lv.shape));
    return t.mean_all(t.sub(t.logsumexp_rows(logits), t.diag(logits)));
}

NodeId info_nce(TapeSession& s, NodeId query, NodeId keys, std::optional<NodeId> extra, size_t extra_per_row,
                NodeId scale) {
    Tape& t = s.tape();
    const Tensor& q = t.value(query);
    const Tensor& k = t.value(keys);
    if (q.shape != k.shape || q.ndim() != 2)
        throw ShapeError("info_nce: query " + Tensor::shape_str(q.shape) + " vs keys " + Tensor::shape_str(k.shape));
    NodeId logits = t.matmul(query, t.transpose(keys));
    if (extra) {
        NodeId e = extra_per_row > 0 ? t.rowwise_block_dots(query, *extra, extra_per_row)
                                     : t.matmul(query, t.transpose(*extra));
        logits = t.concat({logits, e}, 1);
    }
    return info_nce_from_logits(t, t.mul_scalar(logits, scale));
}

NodeId build_video_text(Tape& t, const std::vector<NodeId>& event_text_rows, bool normalize) {
    NodeId mean = t.mean(t.stack_rows(event_text_rows), 0);
    return normalize ? t.l2_normalize(mean, 0) : mean;
}

NodeId clip_event_loss(TapeSession& s, const LossBatchInputs& in, const LossWeights& w) {
    NodeId q = stack_normalized(s, ce_query_rows(s, in), in.normalize);
    NodeId k = s.tape().stack_rows(event_text_rows(in));
    return symmetric_info_nce(s, q, k, build_hn_block(s, in, w), in.logit_scale, w.hn_both_directions);
}

NodeId clip_video_loss(TapeSession& s, const LossBatchInputs& in, const LossWeights& w) {
    (void)w;
    Tape& t = s.tape();
    if (in.video_text.size() != in.frame_embs.size()) throw ShapeError("video_text missing for video loss");
    std::vector<NodeId> rows;
    for (const auto& video : in.frame_embs) {
        std::vector<NodeId> frames;
        for (const auto& event : video)
            for (NodeId f : event) frames.push_back(f);
        rows.push_back(t.mean(t.stack_rows(frames), 0));
    }
    NodeId q = stack_normalized(s, rows, in.normalize);
    NodeId k = t.stack_rows(in.video_text);
    return symmetric_info_nce(s, q, k, std::nullopt, in.logit_scale, false);
}

NodeId vc_event_loss(TapeSession& s, const LossBatchInputs& in, const LossWeights& w) {
    require_vc(in, "VC-event loss");
    NodeId q = stack_normalized(s, vce_query_rows(in), in.normalize);
    NodeId k = s.tape().stack_rows(event_text_rows(in));
    return symmetric_info_nce(s, q, k, build_hn_block(s, in, w), in.logit_scale, w.hn_both_directions);
}

NodeId vc_video_loss(TapeSession& s, const LossBatchInputs& in, const LossWeights& w) {
    (void)w;
    require_vc(in, "VC-video loss");
    Tape& t = s.tape();
    if (in.video_text.size() != in.frame_embs.size()) throw ShapeError("video_text missing for video loss");
    std::vector<NodeId> rows;
    for (const auto& vc : in.vc_out) rows.push_back(vc.v_hat);
    NodeId q = stack_normalized(s, rows, in.normalize);
    NodeId k = t.stack_rows(in.video_text);
    return symmetric_info_nce(s, q, k, std::nullopt, in.logit_scale, false);
}

TotalLoss total_loss(TapeSession& s, const LossBatchInputs& in, const LossWeights& w) {
    Tape& t = s.tape();
    TotalLoss out;
    std::optional<NodeId> total;
    auto accumulate = [&](NodeId term, double weight, double* slot) {
        NodeId weighted = weight == 1.0 ? term : t.scale(term, weight);
        *slot = t.value(weighted).data[0];
        total = total ? t.add(*total, weighted) : weighted;
    };

    if (w.enable_ce) accumulate(clip_event_loss(s, in, w), 1.0, &out.report.ce);
    if (w.enable_vce) accumulate(vc_event_loss(s, in, w), 1.0, &out.report.vce);
    if (w.enable_cv) accumulate(clip_video_loss(s, in, w), w.lambda, &out.report.cv);
    if (w.enable_vcv) accumulate(vc_video_loss(s, in, w), w.lambda, &out.report.vcv);
    if (w.act_p) {
        if (in.actp_text.size() != in.frame_embs.size())
            throw ShapeError("act_p enabled but action prompts missing");
        std::vector<NodeId> krows;
        for (const auto& video : in.actp_text)
            for (NodeId n : video) krows.push_back(n);
        NodeId k = t.stack_rows(krows);
        NodeId q = in.vc_out.size() == in.frame_embs.size()
                       ? stack_normalized(s, vce_query_rows(in), in.normalize)
                       : stack_normalized(s, ce_query_rows(s, in), in.normalize);
        accumulate(symmetric_info_nce(s, q, k, std::nullopt, in.logit_scale, false), 1.0, &out.report.actp);
    }

    out.node = total ? *total : t.constant(Tensor::zeros({1}));
    out.report.total = t.value(out.node).data[0];
    return out;
}

}  // namespace figclip
