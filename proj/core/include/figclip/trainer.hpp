#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "figclip/annotations.hpp"
#include "figclip/losses.hpp"
#include "figclip/model.hpp"
#include "figclip/negatives.hpp"
#include "figclip/optim.hpp"

namespace figclip {

// Mirrors the train CLI's JSON config field-for-field; the one source of
// truth for training knobs.
struct TrainConfig {
    size_t batch_videos = 20;  // B
    size_t epochs = 40;
    double lr = 1e-6;
    double lambda = 0.25;
    size_t nvr = 4;  // verb-role hard negatives per event
    size_t nrn = 0;  // role-noun hard negatives per event
    double swap_fraction = 0.5;
    size_t lora_rank = 64;
    std::vector<std::string> lora_targets{"q", "k", "v"};
    bool lora_text = false;
    std::string batch_strategy = "default";  // default | shuffle_events | same_movie
    size_t frames_per_event = 4;             // T
    std::string subsample = "jitter";        // jitter | uniform
    uint64_t seed = 0;
    std::string precision = "f32";  // f32 | f64
    std::string prompt_style = "template";  // template | natural
    bool act_p = false;
    bool extra_negatives = false;
    bool hn_both_directions = false;
    bool static_hn = false;  // pregenerate HNs from dataset-wide pools instead of per-epoch batch pools
    bool normalize = true;
    double fixed_scale = 0.0;
    bool enable_ce = true;
    bool enable_cv = true;
    bool enable_vce = true;
    bool enable_vcv = true;
    // model dims
    size_t dim = 64;
    size_t input_dim = 64;
    size_t frame_tokens = 16;
    size_t backbone_blocks = 4;
    size_t backbone_heads = 4;
    size_t vc_blocks = 6;
    size_t vc_heads = 4;
    double weight_decay = 0.01;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    size_t threads = 0;

    Precision precision_mode() const;
    ModelConfig model_config(const Dataset& ds) const;
    AdamWConfig adamw_config() const;
    LossWeights loss_weights() const;
};

TrainConfig train_config_from_json(const std::string& text, const std::string& origin = "<config>");
TrainConfig load_train_config(const std::string& path);
std::string train_config_to_json(const TrainConfig& cfg);
// Applies one "key=value" override; key must name a TrainConfig field.
void apply_config_override(TrainConfig& cfg, const std::string& assignment);

struct EventRef {
    size_t video = 0;
    size_t event = 0;
};

struct Batch {
    std::vector<size_t> videos;    // default / same_movie
    std::vector<EventRef> events;  // shuffle_events
    bool event_mode = false;
};

// default: shuffled videos chunked into groups of B, events kept together;
// shuffle_events: all events pooled, shuffled, chunked into B*P groups;
// same_movie: movie-grouped fill. Last partial batch is dropped.
std::vector<Batch> make_batches(const Dataset& ds, const std::string& strategy, size_t batch_videos,
                                uint64_t seed);

// uniform: floor((i+0.5)*L/T) quantile picks (repeats when L < T);
// jitter: one seeded pick per uniform bin.
std::vector<size_t> subsample_frames(size_t frame_count, size_t t, const std::string& mode, uint64_t seed);

// Introspection of one assembled batch: flattened event order (the loss-row
// order, so denominator membership is auditable) and per-event HN counts.
struct BatchLayout {
    std::vector<std::pair<std::string, std::string>> event_order;  // (video_id, event_id)
    std::vector<size_t> hn_counts;
};

struct StepRecord {
    size_t step = 0;
    size_t epoch = 0;
    LossReport losses;
};

struct TrainResult {
    std::vector<StepRecord> steps;
    std::vector<double> epoch_mean_total;
    std::string final_checkpoint;
};

class Trainer {
public:
    Trainer(Dataset dataset, std::optional<EmbeddingMatrix> frames, TrainConfig cfg);

    Model& model() { return model_; }
    const Model& model() const { return model_; }
    const TrainConfig& config() const { return cfg_; }
    const Dataset& dataset() const { return dataset_; }
    const FrameSource& frames() const { return frames_; }
    const BatchLayout& last_layout() const { return last_layout_; }

    // Full loop: checkpoints ckpt_epochN.fgckpt (N=0 is the initial state)
    // and trainlog.jsonl under out_dir. Aborts with TrainError on NaN.
    TrainResult run(const std::string& out_dir);

    // One optimizer step on one batch (exposed for tests).
    LossReport train_step(const Batch& batch, size_t epoch, size_t step_index);

    // Mean total loss over the epoch-1 batch split, without updates; frames
    // are subsampled uniformly and HN seeds are fixed, so two calls bracket a
    // training run comparably.
    double eval_total_loss();

    void save_checkpoint_file(const std::string& path) const;
    void load_checkpoint_file(const std::string& path);

    uint64_t completed_epochs() const { return completed_epochs_; }

private:
    LossBatchInputs assemble_batch(TapeSession& s, const Batch& batch, size_t epoch, bool training);
    std::vector<PromptRecord> event_negatives(const EventAnnotation& event,
                                              const std::vector<VerbEntry>& verb_pool,
                                              const std::map<std::string, std::vector<std::string>>& noun_pool,
                                              uint64_t seed);
    std::string event_prompt_text(const EventAnnotation& event) const;

    Dataset dataset_;
    TrainConfig cfg_;
    FrameSource frames_;
    Model model_;
    AdamW optim_;
    BatchLayout last_layout_;
    uint64_t completed_epochs_ = 0;
    size_t global_step_ = 0;
};

}  // namespace figclip
