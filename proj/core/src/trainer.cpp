#include "figclip/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "json.hpp"

#include "figclip/checkpoint.hpp"
#include "figclip/errors.hpp"
#include "figclip/prompting.hpp"
#include "figclip/rng.hpp"

namespace figclip {

using nlohmann::json;

namespace {
constexpr uint64_t kBatchStream = 0xba7cU;
constexpr uint64_t kFrameStream = 0xf7a3U;
constexpr uint64_t kHnStream = 0x48e9U;
constexpr uint64_t kStaticHnStream = 0x57a7U;
}  // namespace

Precision TrainConfig::precision_mode() const {
    if (precision == "f32") return Precision::f32;
    if (precision == "f64") return Precision::f64;
    throw ValidationError("precision must be f32 or f64, got '" + precision + "'");
}

ModelConfig TrainConfig::model_config(const Dataset& ds) const {
    ModelConfig mc;
    mc.backbone = EncoderDims{dim, input_dim, frame_tokens, backbone_blocks, backbone_heads, 4};
    mc.vc_blocks = vc_blocks;
    mc.vc_heads = vc_heads;
    mc.p_max = std::max<size_t>(1, ds.events_per_video);
    mc.t_max = std::max<size_t>(1, frames_per_event);
    mc.vc_enabled = batch_strategy != "shuffle_events";
    mc.lora_targets = std::set<std::string>(lora_targets.begin(), lora_targets.end());
    mc.lora_rank = lora_rank;
    mc.lora_text = lora_text;
    mc.normalize = normalize;
    mc.fixed_scale = fixed_scale;
    mc.seed = seed;
    mc.precision = precision_mode();
    return mc;
}

AdamWConfig TrainConfig::adamw_config() const {
    return AdamWConfig{lr, adam_beta1, adam_beta2, adam_eps, weight_decay};
}

LossWeights TrainConfig::loss_weights() const {
    LossWeights w;
    w.lambda = lambda;
    w.enable_ce = enable_ce;
    w.enable_cv = enable_cv;
    w.enable_vce = enable_vce;
    w.enable_vcv = enable_vcv;
    w.use_hn = nvr + nrn > 0;
    w.use_extra_negatives = extra_negatives;
    w.act_p = act_p;
    w.hn_both_directions = hn_both_directions;
    return w;
}

namespace {

template <typename T>
void read_field(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

TrainConfig train_config_from_json(const std::string& text, const std::string& origin) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw SchemaError(origin + " is not valid JSON: " + e.what());
    }
    if (!j.is_object()) throw SchemaError(origin + ": config must be a JSON object");

    static const std::set<std::string> known{
        "batch_videos", "epochs", "lr", "lambda", "nvr", "nrn", "swap_fraction", "lora_rank",
        "lora_targets", "lora_text", "batch_strategy", "frames_per_event", "subsample", "seed",
        "precision", "prompt_style", "act_p", "extra_negatives", "hn_both_directions", "static_hn",
        "normalize", "fixed_scale", "enable_ce", "enable_cv", "enable_vce", "enable_vcv", "dim",
        "input_dim", "frame_tokens", "backbone_blocks", "backbone_heads", "vc_blocks", "vc_heads",
        "weight_decay", "adam_beta1", "adam_beta2", "adam_eps", "threads"};
    for (const auto& [key, val] : j.items())
        if (!known.count(key)) throw SchemaError(origin + ": unknown config key '" + key + "'");

    TrainConfig c;
    read_field(j, "batch_videos", c.batch_videos);
    read_field(j, "epochs", c.epochs);
    read_field(j, "lr", c.lr);
    read_field(j, "lambda", c.lambda);
    read_field(j, "nvr", c.nvr);
    read_field(j, "nrn", c.nrn);
    read_field(j, "swap_fraction", c.swap_fraction);
    read_field(j, "lora_rank", c.lora_rank);
    read_field(j, "lora_targets", c.lora_targets);
    read_field(j, "lora_text", c.lora_text);
    read_field(j, "batch_strategy", c.batch_strategy);
    read_field(j, "frames_per_event", c.frames_per_event);
    read_field(j, "subsample", c.subsample);
    read_field(j, "seed", c.seed);
    read_field(j, "precision", c.precision);
    read_field(j, "prompt_style", c.prompt_style);
    read_field(j, "act_p", c.act_p);
    read_field(j, "extra_negatives", c.extra_negatives);
    read_field(j, "hn_both_directions", c.hn_both_directions);
    read_field(j, "static_hn", c.static_hn);
    read_field(j, "normalize", c.normalize);
    read_field(j, "fixed_scale", c.fixed_scale);
    read_field(j, "enable_ce", c.enable_ce);
    read_field(j, "enable_cv", c.enable_cv);
    read_field(j, "enable_vce", c.enable_vce);
    read_field(j, "enable_vcv", c.enable_vcv);
    read_field(j, "dim", c.dim);
    read_field(j, "input_dim", c.input_dim);
    read_field(j, "frame_tokens", c.frame_tokens);
    read_field(j, "backbone_blocks", c.backbone_blocks);
    read_field(j, "backbone_heads", c.backbone_heads);
    read_field(j, "vc_blocks", c.vc_blocks);
    read_field(j, "vc_heads", c.vc_heads);
    read_field(j, "weight_decay", c.weight_decay);
    read_field(j, "adam_beta1", c.adam_beta1);
    read_field(j, "adam_beta2", c.adam_beta2);
    read_field(j, "adam_eps", c.adam_eps);
    read_field(j, "threads", c.threads);
    return c;
}

TrainConfig load_train_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return train_config_from_json(text, path);
}

std::string train_config_to_json(const TrainConfig& c) {
    json j;
    j["batch_videos"] = c.batch_videos;
    j["epochs"] = c.epochs;
    j["lr"] = c.lr;
    j["lambda"] = c.lambda;
    j["nvr"] = c.nvr;
    j["nrn"] = c.nrn;
    j["swap_fraction"] = c.swap_fraction;
    j["lora_rank"] = c.lora_rank;
    j["lora_targets"] = c.lora_targets;
    j["lora_text"] = c.lora_text;
    j["batch_strategy"] = c.batch_strategy;
    j["frames_per_event"] = c.frames_per_event;
    j["subsample"] = c.subsample;
    j["seed"] = c.seed;
    j["precision"] = c.precision;
    j["prompt_style"] = c.prompt_style;
    j["act_p"] = c.act_p;
    j["extra_negatives"] = c.extra_negatives;
    j["hn_both_directions"] = c.hn_both_directions;
    j["static_hn"] = c.static_hn;
    j["normalize"] = c.normalize;
    j["fixed_scale"] = c.fixed_scale;
    j["enable_ce"] = c.enable_ce;
    j["enable_cv"] = c.enable_cv;
    j["enable_vce"] = c.enable_vce;
    j["enable_vcv"] = c.enable_vcv;
    j["dim"] = c.dim;
    j["input_dim"] = c.input_dim;
    j["frame_tokens"] = c.frame_tokens;
    j["backbone_blocks"] = c.backbone_blocks;
    j["backbone_heads"] = c.backbone_heads;
    j["vc_blocks"] = c.vc_blocks;
    j["vc_heads"] = c.vc_heads;
    j["weight_decay"] = c.weight_decay;
    j["adam_beta1"] = c.adam_beta1;
    j["adam_beta2"] = c.adam_beta2;
    j["adam_eps"] = c.adam_eps;
    j["threads"] = c.threads;
    return j.dump(2);
}

void apply_config_override(TrainConfig& cfg, const std::string& assignment) {
    const size_t eq = assignment.find('=');
    if (eq == std::string::npos) throw ValidationError("--set expects key=value, got '" + assignment + "'");
    const std::string key = assignment.substr(0, eq);
    const std::string value = assignment.substr(eq + 1);
    json patch;
    if (key == "lora_targets") {
        json arr = json::array();
        std::string item;
        for (char ch : value + ",") {
            if (ch == ',') {
                if (!item.empty()) arr.push_back(item);
                item.clear();
            } else {
                item.push_back(ch);
            }
        }
        patch[key] = std::move(arr);
    } else if (key == "batch_strategy" || key == "subsample" || key == "precision" || key == "prompt_style") {
        patch[key] = value;
    } else {
        json parsed;
        try {
            parsed = json::parse(value);
        } catch (const json::exception&) {
            throw ValidationError("cannot parse value for --set " + key + "=" + value);
        }
        patch[key] = std::move(parsed);
    }
    json full = json::parse(train_config_to_json(cfg));
    full[key] = patch[key];
    try {
        cfg = train_config_from_json(full.dump(), "--set " + key);
    } catch (const SchemaError& e) {
        throw ValidationError(e.what());  // bad arguments, not a bad file
    }
}

std::vector<Batch> make_batches(const Dataset& ds, const std::string& strategy, size_t batch_videos,
                                uint64_t seed) {
    if (ds.videos.empty()) throw EmptyDataset("cannot batch an empty dataset");
    if (batch_videos == 0) throw ValidationError("batch_videos must be >= 1");
    Rng rng(seed);
    std::vector<Batch> out;

    if (strategy == "default" || strategy == "same_movie") {
        std::vector<size_t> order;
        if (strategy == "default") {
            order = rng.permutation(ds.videos.size());
        } else {
            // Group videos by movie, then fill batches movie-by-movie.
            std::vector<std::string> movies;
            std::map<std::string, std::vector<size_t>> by_movie;
            for (size_t i = 0; i < ds.videos.size(); ++i) {
                const std::string& m = ds.videos[i].movie_id;
                if (!by_movie.count(m)) movies.push_back(m);
                by_movie[m].push_back(i);
            }
            rng.shuffle(movies);
            for (const auto& m : movies) {
                std::vector<size_t>& vids = by_movie[m];
                rng.shuffle(vids);
                order.insert(order.end(), vids.begin(), vids.end());
            }
        }
        for (size_t start = 0; start + batch_videos <= order.size(); start += batch_videos) {
            Batch b;
            b.videos.assign(order.begin() + start, order.begin() + start + batch_videos);
            out.push_back(std::move(b));
        }
        return out;
    }

    if (strategy == "shuffle_events") {
        std::vector<EventRef> events;
        for (size_t vi = 0; vi < ds.videos.size(); ++vi)
            for (size_t ei = 0; ei < ds.videos[vi].events.size(); ++ei) events.push_back({vi, ei});
        rng.shuffle(events);
        const size_t group = batch_videos * std::max<size_t>(1, ds.events_per_video);
        for (size_t start = 0; start + group <= events.size(); start += group) {
            Batch b;
            b.event_mode = true;
            b.events.assign(events.begin() + start, events.begin() + start + group);
            out.push_back(std::move(b));
        }
        return out;
    }

    throw ValidationError("unknown batch strategy '" + strategy + "'");
}

std::vector<size_t> subsample_frames(size_t frame_count, size_t t, const std::string& mode, uint64_t seed) {
    if (frame_count == 0) throw ValidationError("event has no frames to subsample");
    if (t == 0) throw ValidationError("frames_per_event must be >= 1");
    std::vector<size_t> out(t);
    if (mode == "uniform") {
        for (size_t i = 0; i < t; ++i)
            out[i] = static_cast<size_t>((2 * i + 1) * frame_count / (2 * t));  // floor((i+0.5)*L/T)
        return out;
    }
    if (mode == "jitter") {
        Rng rng(seed);
        for (size_t i = 0; i < t; ++i) {
            size_t lo = i * frame_count / t;
            size_t hi = std::max(lo + 1, (i + 1) * frame_count / t);
            hi = std::min(hi, frame_count);
            out[i] = lo + static_cast<size_t>(rng.uniform_below(hi - lo));
        }
        return out;
    }
    throw ValidationError("unknown subsample mode '" + mode + "'");
}

// ---- Trainer ----

Trainer::Trainer(Dataset dataset, std::optional<EmbeddingMatrix> frame_matrix, TrainConfig cfg)
    : dataset_(std::move(dataset)),
      cfg_(std::move(cfg)),
      frames_(cfg_.frame_tokens, cfg_.input_dim),
      model_(cfg_.model_config(dataset_)),
      optim_(cfg_.adamw_config(), cfg_.precision_mode()) {
    if (frame_matrix) frames_.attach_matrix(std::move(*frame_matrix));
    if (cfg_.batch_strategy == "shuffle_events") {
        if (cfg_.enable_vce || cfg_.enable_vcv)
            throw TrainError("shuffle_events batches cannot use the contextualizer losses (VC-event/VC-video); "
                             "disable enable_vce and enable_vcv");
        if (cfg_.enable_cv)
            throw TrainError("shuffle_events batches have no whole videos; disable enable_cv");
    }
    if (!(cfg_.swap_fraction > 0.0 && cfg_.swap_fraction < 1.0))
        throw ValidationError("swap_fraction must lie strictly between 0 and 1");
}

std::string Trainer::event_prompt_text(const EventAnnotation& event) const {
    if (cfg_.prompt_style == "natural" && event.natural_prompt) return *event.natural_prompt;
    return render_event_prompt(event).text;
}

std::vector<PromptRecord> Trainer::event_negatives(const EventAnnotation& event,
                                                   const std::vector<VerbEntry>& verb_pool,
                                                   const std::map<std::string, std::vector<std::string>>& noun_pool,
                                                   uint64_t seed) {
    std::vector<PromptRecord> out;
    if (cfg_.nvr > 0) {
        auto vr = make_verb_role_negatives(event, verb_pool, cfg_.nvr, derive_seed(seed, 1));
        out.insert(out.end(), vr.begin(), vr.end());
    }
    if (cfg_.nrn > 0) {
        try {
            auto rn = make_role_noun_negatives(event, noun_pool, cfg_.nrn, cfg_.swap_fraction,
                                               derive_seed(seed, 2));
            out.insert(out.end(), rn.begin(), rn.end());
        } catch (const ValidationError&) {
            // single-role events cannot satisfy "some (not all)"; skip them
        }
    }
    return out;
}

LossBatchInputs Trainer::assemble_batch(TapeSession& s, const Batch& batch, size_t epoch, bool training) {
    LossBatchInputs in;
    in.normalize = cfg_.normalize;
    in.logit_scale = model_.logit_scale_node(s);
    last_layout_ = BatchLayout{};

    const bool want_video_losses = !batch.event_mode && (cfg_.enable_cv || cfg_.enable_vcv);
    const bool want_vc = !batch.event_mode && model_.vc_enabled() &&
                         (cfg_.enable_vce || cfg_.enable_vcv || cfg_.act_p);
    const std::string frame_mode = training ? cfg_.subsample : "uniform";

    // (video index, events in the loss-row order) of this batch
    std::vector<std::pair<size_t, std::vector<size_t>>> groups;
    if (batch.event_mode) {
        for (const EventRef& er : batch.events) groups.push_back({er.video, {er.event}});
    } else {
        for (size_t vi : batch.videos) {
            std::vector<size_t> evs(dataset_.videos[vi].events.size());
            for (size_t k = 0; k < evs.size(); ++k) evs[k] = k;
            groups.push_back({vi, std::move(evs)});
        }
    }

    // Hard-negative pools: the batch's verbs/nouns, or dataset-wide in
    // static mode.
    const bool use_hn = cfg_.nvr + cfg_.nrn > 0;
    std::vector<VerbEntry> verb_pool;
    std::map<std::string, std::vector<std::string>> noun_pool;
    if (use_hn) {
        if (cfg_.static_hn) {
            verb_pool = verb_pool_from_lexicon(dataset_.verb_lexicon);
            noun_pool = noun_pool_from_dataset(dataset_);
        } else {
            std::set<std::string> seen;
            for (const auto& [vi, evs] : groups)
                for (size_t k : evs) {
                    const auto& ev = dataset_.videos[vi].events[k];
                    if (seen.insert(ev.verb).second)
                        verb_pool.push_back({ev.verb, dataset_.verb_lexicon.at(ev.verb)});
                    for (const auto& rp : ev.roles) noun_pool[rp.role].push_back(rp.noun);
                }
        }
    }

    for (const auto& [vi, evs] : groups) {
        const VideoAnnotation& video = dataset_.videos[vi];
        std::vector<std::vector<NodeId>> video_frames;
        std::vector<NodeId> video_event_text;
        std::vector<std::vector<NodeId>> video_hn;
        std::vector<NodeId> video_actp;
        for (size_t k : evs) {
            const EventAnnotation& ev = dataset_.videos[vi].events[k];
            const uint64_t frame_seed = derive_seed(cfg_.seed, kFrameStream, epoch, vi * 1024 + k);
            std::vector<size_t> picks = subsample_frames(ev.frame_refs.size(), cfg_.frames_per_event,
                                                         frame_mode, frame_seed);
            std::vector<NodeId> frame_nodes;
            frame_nodes.reserve(picks.size());
            for (size_t idx : picks) frame_nodes.push_back(model_.encode_frame(s, frames_.grid(ev.frame_refs[idx])));
            video_frames.push_back(std::move(frame_nodes));

            video_event_text.push_back(model_.embed_text_node(s, event_prompt_text(ev)));
            if (cfg_.act_p) video_actp.push_back(model_.embed_text_node(s, render_action_prompt(ev).text));

            std::vector<NodeId> hn_nodes;
            if (use_hn) {
                const size_t global_event = vi * 1024 + k;
                const uint64_t hn_seed = cfg_.static_hn ? derive_seed(cfg_.seed, kStaticHnStream, global_event)
                                                        : derive_seed(cfg_.seed, kHnStream, epoch, global_event);
                for (const auto& rec : event_negatives(ev, verb_pool, noun_pool, hn_seed))
                    hn_nodes.push_back(model_.embed_text_node(s, rec.text));
            }
            last_layout_.event_order.push_back({video.video_id, ev.event_id});
            last_layout_.hn_counts.push_back(hn_nodes.size());
            video_hn.push_back(std::move(hn_nodes));
        }
        if (want_video_losses)
            in.video_text.push_back(build_video_text(s.tape(), video_event_text, cfg_.normalize));
        if (want_vc) in.vc_out.push_back(model_.vc().forward(s, video_frames));
        in.frame_embs.push_back(std::move(video_frames));
        in.event_text.push_back(std::move(video_event_text));
        in.hn_text.push_back(std::move(video_hn));
        if (cfg_.act_p) in.actp_text.push_back(std::move(video_actp));
    }
    return in;
}

LossReport Trainer::train_step(const Batch& batch, size_t epoch, size_t step_index) {
    TapeSession s = model_.session(/*grad_enabled=*/true);
    LossBatchInputs in = assemble_batch(s, batch, epoch, /*training=*/true);
    TotalLoss tl = total_loss(s, in, cfg_.loss_weights());
    if (!std::isfinite(tl.report.total))
        throw TrainError("non-finite loss at step " + std::to_string(step_index));
    s.backward(tl.node);
    s.harvest_grads();
    optim_.step(model_.params());
    model_.clamp_logit_scale();
    return tl.report;
}

double Trainer::eval_total_loss() {
    auto batches = make_batches(dataset_, cfg_.batch_strategy, cfg_.batch_videos,
                                derive_seed(cfg_.seed, kBatchStream, 1));
    if (batches.empty()) throw TrainError("no full batch fits the dataset (batch_videos too large)");
    double acc = 0.0;
    for (const Batch& b : batches) {
        TapeSession s = model_.session(/*grad_enabled=*/false);
        LossBatchInputs in = assemble_batch(s, b, /*epoch=*/0, /*training=*/false);
        TotalLoss tl = total_loss(s, in, cfg_.loss_weights());
        acc += tl.report.total;
    }
    return acc / static_cast<double>(batches.size());
}

void Trainer::save_checkpoint_file(const std::string& path) const {
    auto tensors = model_.params().export_tensors();
    for (auto& [k, t] : optim_.export_state()) tensors.emplace(k, std::move(t));
    Tensor ep({1});
    ep.data[0] = static_cast<double>(completed_epochs_);
    tensors.emplace("train.completed_epochs", std::move(ep));
    save_checkpoint(path, tensors);
}

void Trainer::load_checkpoint_file(const std::string& path) {
    auto tensors = load_checkpoint(path);
    std::map<std::string, Tensor> model_tensors, extra;
    for (auto& [k, t] : tensors) {
        if (k.rfind("optim.", 0) == 0 || k.rfind("train.", 0) == 0)
            extra.emplace(k, std::move(t));
        else
            model_tensors.emplace(k, std::move(t));
    }
    model_.params().import_tensors(model_tensors);
    optim_.import_state(extra, model_.params());
    auto it = extra.find("train.completed_epochs");
    completed_epochs_ = it == extra.end() ? 0 : static_cast<uint64_t>(it->second.data.at(0));
    global_step_ = optim_.step_count();
}

TrainResult Trainer::run(const std::string& out_dir) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    TrainResult result;

    auto ckpt_path = [&](uint64_t epoch) {
        return (fs::path(out_dir) / ("ckpt_epoch" + std::to_string(epoch) + ".fgckpt")).string();
    };

    const bool fresh = completed_epochs_ == 0;
    if (fresh) save_checkpoint_file(ckpt_path(0));
    result.final_checkpoint = ckpt_path(completed_epochs_);

    std::ofstream log(fs::path(out_dir) / "trainlog.jsonl",
                      fresh ? std::ios::trunc : std::ios::app);
    if (!log) throw FormatError("cannot write trainlog.jsonl under " + out_dir);

    for (uint64_t epoch = completed_epochs_ + 1; epoch <= cfg_.epochs; ++epoch) {
        auto batches = make_batches(dataset_, cfg_.batch_strategy, cfg_.batch_videos,
                                    derive_seed(cfg_.seed, kBatchStream, epoch));
        if (batches.empty())
            throw TrainError("no full batch fits the dataset (batch_videos=" +
                             std::to_string(cfg_.batch_videos) + ", videos=" +
                             std::to_string(dataset_.videos.size()) + ")");
        double epoch_total = 0.0;
        for (const Batch& b : batches) {
            ++global_step_;
            LossReport r = train_step(b, epoch, global_step_);
            epoch_total += r.total;
            json line{{"step", global_step_}, {"epoch", epoch}, {"ce", r.ce},   {"cv", r.cv},
                      {"vce", r.vce},         {"vcv", r.vcv},   {"actp", r.actp}, {"total", r.total}};
            log << line.dump() << "\n";
            result.steps.push_back({global_step_, epoch, r});
        }
        result.epoch_mean_total.push_back(epoch_total / static_cast<double>(batches.size()));
        completed_epochs_ = epoch;
        save_checkpoint_file(ckpt_path(epoch));
        result.final_checkpoint = ckpt_path(epoch);
    }
    log.flush();
    return result;
}

}  // namespace figclip
