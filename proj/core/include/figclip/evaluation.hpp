#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "figclip/annotations.hpp"
#include "figclip/embedding_matrix.hpp"
#include "figclip/model.hpp"
#include "figclip/tensor.hpp"

namespace figclip {

struct RetrievalMetrics {
    std::map<size_t, double> recall_at;  // percent
    double mean_rank = 0.0;
    double median_rank = 0.0;  // lower median for even query counts
    std::vector<size_t> ranks;
};

// sim[i][g]: similarity of query i to gallery item g. The true match of
// query i is gallery truth[i] (identity when truth is null, requiring a
// square-or-wider matrix). rank = 1 + #{strictly greater} + #{equal with
// smaller gallery index}; R@k is the percentage of ranks <= k.
RetrievalMetrics retrieval_metrics(const Tensor& sim, const std::vector<size_t>& ks,
                                   const std::vector<size_t>* truth = nullptr);

struct ClassifyMetrics {
    double top1 = 0.0;  // percent
    double top5 = 0.0;
    size_t samples = 0;
};

// Cosine argmax over class prompts; ties broken by class index.
ClassifyMetrics zero_shot_classify(const Tensor& item_embs, const Tensor& class_embs,
                                   const std::vector<size_t>& truth);

// Correct iff cos(item, positive) strictly beats every negative.
bool caption_choice_correct(const Tensor& item, const Tensor& positive, const std::vector<Tensor>& negatives);

struct CaptionCase {
    std::string id;
    std::string item;  // embedding id in the gallery matrix
    std::string positive;
    std::vector<std::string> negatives;
};

// JSONL, one case per line: {"id","item","positive","negatives":[...]}
// An empty negatives array is a FormatError.
std::vector<CaptionCase> load_caption_cases(const std::string& path);

struct CaptionChoiceResult {
    double accuracy = 0.0;  // percent
    size_t cases = 0;
    size_t correct = 0;
};

// ---- matrix helpers ----
Tensor l2_normalize_rows(Tensor m);
Tensor cosine_matrix(const Tensor& queries, const Tensor& gallery);  // rows normalized internally

// ---- model-level encoding (merged/no-grad paths) ----

// Mean-pooled backbone frame embeddings, l2-normalized: the zero-shot
// retrieval representation.
Tensor encode_video_mean(const Model& model, const FrameSource& frames, const VideoAnnotation& video);
Tensor encode_event_mean(const Model& model, const FrameSource& frames, const EventAnnotation& event);

// Contextualizer event outputs for one video (normalized rows [P, d]).
Tensor encode_video_vc_events(const Model& model, const FrameSource& frames, const VideoAnnotation& video,
                              size_t frames_per_event);

// Runs fn(i) for i in [0, n) across `threads` workers (0 = hardware
// concurrency); outputs land in caller-indexed slots so results are
// deterministic regardless of scheduling.
void parallel_for(size_t n, size_t threads, const std::function<void(size_t)>& fn);

}  // namespace figclip
