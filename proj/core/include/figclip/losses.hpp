#pragma once

#include <optional>
#include <vector>

#include "figclip/contextualizer.hpp"
#include "figclip/tape.hpp"

namespace figclip {

struct LossWeights {
    double lambda = 0.25;  // weight of the two video-level terms
    bool enable_ce = true;
    bool enable_cv = true;
    bool enable_vce = true;
    bool enable_vcv = true;
    bool use_hn = true;               // hard negatives in the event-level denominators
    bool use_extra_negatives = false; // every event's HNs enter all events' denominators
    bool act_p = false;               // extra action-only event loss, weight 1
    bool hn_both_directions = false;  // also append HN terms to the text->visual rows
};

// Tape-node batch inputs. Event rows flatten video-major: row = i*P + k, so
// events of one video are contiguous and act as each other's in-batch
// negatives. hn_text may be ragged (events whose role-noun negatives are
// unsatisfiable carry fewer); rows are zero-padded and masked out of the
// softmax. All embedding nodes are [d].
struct LossBatchInputs {
    std::vector<std::vector<std::vector<NodeId>>> frame_embs;  // B x P x T, pre-VC
    std::vector<VcOutputNodes> vc_out;                         // B, empty when the VC is off
    std::vector<std::vector<NodeId>> event_text;               // B x P
    std::vector<NodeId> video_text;                            // B, empty unless video losses run
    std::vector<std::vector<std::vector<NodeId>>> hn_text;     // B x P x H_ik
    std::vector<std::vector<NodeId>> actp_text;                // B x P when act_p
    NodeId logit_scale = 0;                                    // [1]
    bool normalize = true;                                     // l2-normalize loss inputs
};

// Per-step loss report; each field is that term's contribution to the total
// (video terms carry their lambda weight), so the fields sum to total.
struct LossReport {
    double ce = 0.0;
    double cv = 0.0;
    double vce = 0.0;
    double vcv = 0.0;
    double actp = 0.0;
    double total = 0.0;
};

struct TotalLoss {
    NodeId node = 0;  // [1]
    LossReport report;
};

// mean_i( logsumexp(row_i) - logits[i,i] ): InfoNCE over a prebuilt logits
// matrix [N,M], M >= N, positives on the diagonal.
NodeId info_nce_from_logits(Tape& t, NodeId logits);

// One-directional InfoNCE: queries [N,d] against keys [N,d] (row i positive),
// plus H extra per-query negatives as rows [N*H, d] of `extra`. `scale`
// multiplies all similarities.
NodeId info_nce(TapeSession& s, NodeId query, NodeId keys, std::optional<NodeId> extra, size_t extra_per_row,
                NodeId scale);

// t_i = l2norm(mean_k t_ik); event texts are assumed normalized already.
NodeId build_video_text(Tape& t, const std::vector<NodeId>& event_text_rows, bool normalize);

NodeId clip_event_loss(TapeSession& s, const LossBatchInputs& in, const LossWeights& w);
NodeId clip_video_loss(TapeSession& s, const LossBatchInputs& in, const LossWeights& w);
NodeId vc_event_loss(TapeSession& s, const LossBatchInputs& in, const LossWeights& w);
NodeId vc_video_loss(TapeSession& s, const LossBatchInputs& in, const LossWeights& w);

TotalLoss total_loss(TapeSession& s, const LossBatchInputs& in, const LossWeights& w);

}  // namespace figclip
