// figclip: SRL-annotated video-text adaptation pipeline.
//
// Subcommands: gen-prompts, gen-negatives, synth-data, train,
// eval-retrieval, eval-classify, eval-compose, inspect-ckpt.
// Machine-readable output goes to stdout, logs to stderr.
// Exit codes: 0 ok, 1 validation/usage error, 2 I/O or format error.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "json.hpp"

#include "figclip/annotations.hpp"
#include "figclip/checkpoint.hpp"
#include "figclip/embedding_matrix.hpp"
#include "figclip/errors.hpp"
#include "figclip/evaluation.hpp"
#include "figclip/model.hpp"
#include "figclip/negatives.hpp"
#include "figclip/prompting.hpp"
#include "figclip/synthetic.hpp"
#include "figclip/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace figclip;

namespace {

struct CommonTrainArgs {
    std::string config_path;
    std::vector<std::string> overrides;
    std::optional<uint64_t> seed;
};

TrainConfig resolve_config(const CommonTrainArgs& args) {
    TrainConfig cfg;
    if (!args.config_path.empty()) cfg = load_train_config(args.config_path);
    for (const auto& assignment : args.overrides) apply_config_override(cfg, assignment);
    if (args.seed) cfg.seed = *args.seed;
    return cfg;
}

void write_or_print(const std::string& out_path, const std::string& payload) {
    if (!out_path.empty()) {
        std::ofstream out(out_path, std::ios::trunc);
        if (!out) throw FormatError("cannot write " + out_path);
        out << payload;
    }
    std::cout << payload;
}

// Rebuilds the model a checkpoint was trained with and loads its weights.
// The contextualizer table bounds (and whether a VC exists at all) are read
// off the checkpoint so eval commands need no training dataset.
Model model_from_checkpoint(const std::string& ckpt_path, const TrainConfig& cfg, const Dataset& ds) {
    auto tensors = load_checkpoint(ckpt_path);
    ModelConfig mc = cfg.model_config(ds);
    auto e_pos = tensors.find("vc.table.e_pos");
    if (e_pos == tensors.end()) {
        mc.vc_enabled = false;
    } else {
        mc.vc_enabled = true;
        mc.p_max = e_pos->second.shape.at(0);
        mc.t_max = tensors.at("vc.table.f_pos").shape.at(0);
    }
    Model model(mc);
    std::map<std::string, Tensor> model_tensors;
    for (auto& [k, t] : tensors)
        if (k.rfind("optim.", 0) != 0 && k.rfind("train.", 0) != 0) model_tensors.emplace(k, std::move(t));
    model.params().import_tensors(model_tensors);
    return model;
}

json retrieval_to_json(const RetrievalMetrics& m, size_t queries, size_t gallery) {
    json r;
    for (const auto& [k, v] : m.recall_at) r["r_at"][std::to_string(k)] = v;
    r["mean_rank"] = m.mean_rank;
    r["median_rank"] = m.median_rank;
    r["queries"] = queries;
    r["gallery"] = gallery;
    return r;
}

int cmd_gen_prompts(const std::string& annotations, const std::string& out_path, bool action_only,
                    const std::string& style) {
    Dataset ds = load_dataset(annotations);
    std::ofstream out;
    std::ostream* sink = &std::cout;
    if (!out_path.empty()) {
        out.open(out_path, std::ios::trunc);
        if (!out) throw FormatError("cannot write " + out_path);
        sink = &out;
    }
    size_t count = 0;
    for (const auto& video : ds.videos)
        for (const auto& ev : video.events) {
            PromptRecord rec;
            if (action_only) {
                rec = render_action_prompt(ev);
            } else if (style == "natural" && ev.natural_prompt) {
                rec = PromptRecord{*ev.natural_prompt, PromptKind::positive, ev.event_id, {}};
            } else {
                rec = render_event_prompt(ev);
            }
            (*sink) << prompt_record_to_json(rec) << "\n";
            ++count;
        }
    std::cerr << "wrote " << count << " prompt records\n";
    return 0;
}

int cmd_gen_negatives(const std::string& annotations, const std::string& out_path, size_t nvr, size_t nrn,
                      double swap_fraction, uint64_t seed) {
    Dataset ds = load_dataset(annotations);
    auto verb_pool = verb_pool_from_lexicon(ds.verb_lexicon);
    auto noun_pool = noun_pool_from_dataset(ds);
    std::ofstream out;
    std::ostream* sink = &std::cout;
    if (!out_path.empty()) {
        out.open(out_path, std::ios::trunc);
        if (!out) throw FormatError("cannot write " + out_path);
        sink = &out;
    }
    size_t count = 0, skipped = 0, event_index = 0;
    for (const auto& video : ds.videos)
        for (const auto& ev : video.events) {
            const uint64_t ev_seed = derive_seed(seed, 0x6e9U, event_index++);
            if (nvr > 0)
                for (const auto& rec : make_verb_role_negatives(ev, verb_pool, nvr, derive_seed(ev_seed, 1))) {
                    (*sink) << prompt_record_to_json(rec) << "\n";
                    ++count;
                }
            if (nrn > 0) {
                try {
                    for (const auto& rec :
                         make_role_noun_negatives(ev, noun_pool, nrn, swap_fraction, derive_seed(ev_seed, 2))) {
                        (*sink) << prompt_record_to_json(rec) << "\n";
                        ++count;
                    }
                } catch (const ValidationError&) {
                    ++skipped;  // single-role event
                }
            }
        }
    std::cerr << "wrote " << count << " hard negatives (" << skipped << " role-noun skips)\n";
    return 0;
}

int cmd_synth_data(const std::string& out_dir, const CommonTrainArgs& targs, size_t videos, size_t events,
                   size_t frames, double noise, const std::string& split, const std::string& prefix) {
    TrainConfig cfg = resolve_config(targs);
    fs::create_directories(out_dir);

    EncoderDims dims{cfg.dim, cfg.input_dim, cfg.frame_tokens, cfg.backbone_blocks, cfg.backbone_heads, 4};
    ParamStore store;
    TextEncoder text(TextEncoder::Mode::hash_linear, dims);
    text.init_params(store, cfg.seed);

    PlantedConfig pc;
    pc.videos = videos;
    pc.events_per_video = events;
    pc.frames_per_event = frames;
    pc.tokens = cfg.frame_tokens;
    pc.dim = cfg.dim;
    pc.noise = noise;
    pc.split = split;
    pc.id_prefix = prefix;
    PlantedData data = make_planted_data(pc, text, store, cfg.seed);

    const std::string annot = (fs::path(out_dir) / "annotations.json").string();
    const std::string emb = (fs::path(out_dir) / "frames.fgemb").string();
    save_dataset(data.dataset, annot);
    data.frames.save(emb);

    json report{{"annotations", annot}, {"frames", emb},   {"videos", videos},
                {"events_per_video", events}, {"frames_per_event", frames}, {"noise", noise}};
    std::cout << report.dump() << "\n";
    return 0;
}

int cmd_train(const std::string& annotations, const std::string& frames_path, const std::string& out_dir,
              const CommonTrainArgs& targs, const std::string& resume) {
    TrainConfig cfg = resolve_config(targs);
    Dataset ds = load_dataset(annotations);
    std::optional<EmbeddingMatrix> frames;
    if (!frames_path.empty()) frames = EmbeddingMatrix::load(frames_path);
    Trainer trainer(std::move(ds), std::move(frames), cfg);
    if (!resume.empty()) trainer.load_checkpoint_file(resume);
    TrainResult result = trainer.run(out_dir);
    json report{{"final_checkpoint", result.final_checkpoint},
                {"epochs", trainer.completed_epochs()},
                {"steps", result.steps.size()}};
    if (!result.epoch_mean_total.empty()) {
        report["first_epoch_mean_total"] = result.epoch_mean_total.front();
        report["last_epoch_mean_total"] = result.epoch_mean_total.back();
    }
    std::cout << report.dump() << "\n";
    return 0;
}

int cmd_eval_retrieval(const std::string& annotations, const std::string& frames_path,
                       const std::string& ckpt, const std::string& gallery_emb, const std::string& query_emb,
                       const CommonTrainArgs& targs, const std::vector<size_t>& ks,
                       const std::string& out_path) {
    RetrievalMetrics metrics;
    size_t q_count = 0, g_count = 0;
    if (!gallery_emb.empty() || !query_emb.empty()) {
        if (gallery_emb.empty() || query_emb.empty())
            throw ValidationError("precomputed retrieval needs both --gallery-emb and --query-emb");
        EmbeddingMatrix g = EmbeddingMatrix::load(gallery_emb);
        EmbeddingMatrix q = EmbeddingMatrix::load(query_emb);
        Tensor qm({q.rows(), q.dim()}), gm({g.rows(), g.dim()});
        for (size_t r = 0; r < q.rows(); ++r)
            for (size_t c = 0; c < q.dim(); ++c) qm.at2(r, c) = q.row(r)[c];
        for (size_t r = 0; r < g.rows(); ++r)
            for (size_t c = 0; c < g.dim(); ++c) gm.at2(r, c) = g.row(r)[c];
        // query row i matches the gallery row with the same id
        std::vector<size_t> truth;
        for (size_t r = 0; r < q.rows(); ++r) truth.push_back(g.row_of(q.ids()[r]));
        metrics = retrieval_metrics(cosine_matrix(qm, gm), ks, &truth);
        q_count = q.rows();
        g_count = g.rows();
    } else {
        if (ckpt.empty()) throw ValidationError("eval-retrieval needs --ckpt or precomputed embeddings");
        TrainConfig cfg = resolve_config(targs);
        Dataset ds = load_dataset(annotations);
        FrameSource frames(cfg.frame_tokens, cfg.input_dim);
        if (!frames_path.empty()) frames.attach_matrix(EmbeddingMatrix::load(frames_path));
        Model model = model_from_checkpoint(ckpt, cfg, ds);

        const size_t n = ds.videos.size();
        const size_t d = cfg.dim;
        Tensor gallery({n, d}), queries({n, d});
        parallel_for(n, cfg.threads, [&](size_t i) {
            Tensor v = encode_video_mean(model, frames, ds.videos[i]);
            for (size_t c = 0; c < d; ++c) gallery.at2(i, c) = v.data[c];
            // video-level text: mean of normalized event prompts, re-normalized
            Tensor acc({d});
            for (const auto& ev : ds.videos[i].events) {
                Tensor t = model.embed_text(render_event_prompt(ev).text);
                for (size_t c = 0; c < d; ++c) acc.data[c] += t.data[c];
            }
            for (size_t c = 0; c < d; ++c) queries.at2(i, c) = acc.data[c];
        });
        metrics = retrieval_metrics(cosine_matrix(queries, gallery), ks);
        q_count = g_count = n;
    }
    write_or_print(out_path, retrieval_to_json(metrics, q_count, g_count).dump() + "\n");
    return 0;
}

int cmd_eval_classify(const std::string& annotations, const std::string& frames_path, const std::string& ckpt,
                      const CommonTrainArgs& targs, const std::string& out_path) {
    TrainConfig cfg = resolve_config(targs);
    Dataset ds = load_dataset(annotations);
    FrameSource frames(cfg.frame_tokens, cfg.input_dim);
    if (!frames_path.empty()) frames.attach_matrix(EmbeddingMatrix::load(frames_path));
    Model model = model_from_checkpoint(ckpt, cfg, ds);

    // classes: the distinct verbs, prompted with the action-only template
    std::vector<std::string> verbs;
    for (const auto& [verb, roles] : ds.verb_lexicon) verbs.push_back(verb);
    if (verbs.empty()) throw EmptyDataset("no verbs in " + annotations);
    const size_t d = cfg.dim;
    Tensor classes({verbs.size(), d});
    for (size_t c = 0; c < verbs.size(); ++c) {
        EventAnnotation fake;
        fake.verb = verbs[c];
        Tensor t = model.embed_text(render_action_prompt(fake).text);
        for (size_t j = 0; j < d; ++j) classes.at2(c, j) = t.data[j];
    }

    std::vector<size_t> truth;
    std::vector<const EventAnnotation*> events;
    for (const auto& video : ds.videos)
        for (const auto& ev : video.events) {
            events.push_back(&ev);
            truth.push_back(static_cast<size_t>(
                std::find(verbs.begin(), verbs.end(), ev.verb) - verbs.begin()));
        }
    Tensor items({events.size(), d});
    parallel_for(events.size(), cfg.threads, [&](size_t i) {
        Tensor e = encode_event_mean(model, frames, *events[i]);
        for (size_t c = 0; c < d; ++c) items.at2(i, c) = e.data[c];
    });
    ClassifyMetrics m = zero_shot_classify(items, classes, truth);
    json report{{"top1", m.top1}, {"top5", m.top5}, {"samples", m.samples}, {"classes", verbs.size()}};
    write_or_print(out_path, report.dump() + "\n");
    return 0;
}

int cmd_eval_compose(const std::string& emb_path, const std::string& cases_path, const std::string& ckpt,
                     const CommonTrainArgs& targs, const std::string& out_path) {
    auto cases = load_caption_cases(cases_path);
    if (cases.empty()) throw FormatError("no cases in " + cases_path);
    EmbeddingMatrix items = EmbeddingMatrix::load(emb_path);

    TrainConfig cfg = resolve_config(targs);
    if (ckpt.empty()) throw ValidationError("eval-compose needs --ckpt for text embeddings");
    Dataset empty_ds;
    Model model = model_from_checkpoint(ckpt, cfg, empty_ds);

    size_t correct = 0;
    for (const auto& c : cases) {
        Tensor item = items.row_tensor(items.row_of(c.item));
        Tensor pos = model.embed_text(c.positive);
        std::vector<Tensor> negs;
        for (const auto& n : c.negatives) negs.push_back(model.embed_text(n));
        if (caption_choice_correct(item, pos, negs)) ++correct;
    }
    json report{{"accuracy", 100.0 * static_cast<double>(correct) / static_cast<double>(cases.size())},
                {"cases", cases.size()},
                {"correct", correct}};
    write_or_print(out_path, report.dump() + "\n");
    return 0;
}

int cmd_inspect_ckpt(const std::string& ckpt) {
    auto tensors = load_checkpoint(ckpt);
    json out = json::array();
    for (const auto& [name, t] : tensors) {
        double ss = 0.0;
        for (double v : t.data) ss += v * v;
        json entry{{"name", name}, {"shape", t.shape}, {"norm", std::sqrt(ss)}};
        out.push_back(std::move(entry));
    }
    std::cout << out.dump(2) << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"FiGCLIP-style SRL adaptation pipeline"};
    app.require_subcommand(1);

    // gen-prompts
    auto* gp = app.add_subcommand("gen-prompts", "Render event prompts to JSONL");
    std::string gp_annot, gp_out, gp_style = "template";
    bool gp_action = false;
    gp->add_option("--annotations", gp_annot, "annotation JSON file")->required();
    gp->add_option("--out", gp_out, "output JSONL (default stdout)");
    gp->add_option("--style", gp_style, "template|natural")->check(CLI::IsMember({"template", "natural"}));
    gp->add_flag("--action-only", gp_action, "emit action-only prompts instead");

    // gen-negatives
    auto* gn = app.add_subcommand("gen-negatives", "Generate hard-negative prompts to JSONL");
    std::string gn_annot, gn_out;
    size_t gn_nvr = 4, gn_nrn = 0;
    double gn_swap = 0.5;
    uint64_t gn_seed = 0;
    gn->add_option("--annotations", gn_annot)->required();
    gn->add_option("--out", gn_out);
    gn->add_option("--nvr", gn_nvr, "verb-role negatives per event");
    gn->add_option("--nrn", gn_nrn, "role-noun negatives per event");
    gn->add_option("--swap-fraction", gn_swap, "fraction of roles whose nouns swap");
    gn->add_option("--seed", gn_seed);

    auto add_common = [](CLI::App* cmd, CommonTrainArgs& args) {
        cmd->add_option("--config", args.config_path, "train config JSON");
        cmd->add_option("--set", args.overrides, "key=value config override")->take_all();
        cmd->add_option("--seed", args.seed, "override the config seed");
    };

    // synth-data
    auto* sd = app.add_subcommand("synth-data", "Generate planted toy data (annotations + frame features)");
    CommonTrainArgs sd_args;
    std::string sd_out, sd_split = "train", sd_prefix = "v";
    size_t sd_videos = 32, sd_events = 5, sd_frames = 4;
    double sd_noise = 0.1;
    sd->add_option("--out", sd_out, "output directory")->required();
    sd->add_option("--videos", sd_videos);
    sd->add_option("--events", sd_events, "events per video (P)");
    sd->add_option("--frames", sd_frames, "frame refs per event");
    sd->add_option("--noise", sd_noise);
    sd->add_option("--split", sd_split);
    sd->add_option("--prefix", sd_prefix, "video id prefix");
    add_common(sd, sd_args);

    // train
    auto* tr = app.add_subcommand("train", "Post-pretrain on an annotated dataset");
    CommonTrainArgs tr_args;
    std::string tr_annot, tr_frames, tr_out = "runs", tr_resume;
    tr->add_option("--annotations", tr_annot)->required();
    tr->add_option("--frames", tr_frames, "FGEMB1 frame feature matrix");
    tr->add_option("--out", tr_out, "output directory");
    tr->add_option("--resume", tr_resume, "checkpoint to resume from");
    add_common(tr, tr_args);

    // eval-retrieval
    auto* er = app.add_subcommand("eval-retrieval", "Text-to-video retrieval metrics");
    CommonTrainArgs er_args;
    std::string er_annot, er_frames, er_ckpt, er_gallery, er_query, er_out;
    std::vector<size_t> er_ks{1, 5, 10};
    er->add_option("--annotations", er_annot);
    er->add_option("--frames", er_frames);
    er->add_option("--ckpt", er_ckpt);
    er->add_option("--gallery-emb", er_gallery, "precomputed gallery FGEMB1");
    er->add_option("--query-emb", er_query, "precomputed query FGEMB1");
    er->add_option("--ks", er_ks, "recall cutoffs");
    er->add_option("--out", er_out, "also write the JSON report here");
    add_common(er, er_args);

    // eval-classify
    auto* ec = app.add_subcommand("eval-classify", "Zero-shot verb classification over events");
    CommonTrainArgs ec_args;
    std::string ec_annot, ec_frames, ec_ckpt, ec_out;
    ec->add_option("--annotations", ec_annot)->required();
    ec->add_option("--frames", ec_frames);
    ec->add_option("--ckpt", ec_ckpt)->required();
    ec->add_option("--out", ec_out);
    add_common(ec, ec_args);

    // eval-compose
    auto* ep = app.add_subcommand("eval-compose", "Two-caption compositional choice accuracy");
    CommonTrainArgs ep_args;
    std::string ep_emb, ep_cases, ep_ckpt, ep_out;
    ep->add_option("--emb", ep_emb, "item embeddings FGEMB1")->required();
    ep->add_option("--cases", ep_cases, "JSONL case file")->required();
    ep->add_option("--ckpt", ep_ckpt)->required();
    ep->add_option("--out", ep_out);
    add_common(ep, ep_args);

    // inspect-ckpt
    auto* ic = app.add_subcommand("inspect-ckpt", "Dump checkpoint parameter names/shapes/norms as JSON");
    std::string ic_ckpt;
    ic->add_option("--ckpt", ic_ckpt)->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);  // CLI11 prints usage; nonzero on error
    }

    try {
        if (gp->parsed()) return cmd_gen_prompts(gp_annot, gp_out, gp_action, gp_style);
        if (gn->parsed()) return cmd_gen_negatives(gn_annot, gn_out, gn_nvr, gn_nrn, gn_swap, gn_seed);
        if (sd->parsed())
            return cmd_synth_data(sd_out, sd_args, sd_videos, sd_events, sd_frames, sd_noise, sd_split,
                                  sd_prefix);
        if (tr->parsed()) return cmd_train(tr_annot, tr_frames, tr_out, tr_args, tr_resume);
        if (er->parsed())
            return cmd_eval_retrieval(er_annot, er_frames, er_ckpt, er_gallery, er_query, er_args, er_ks,
                                      er_out);
        if (ec->parsed()) return cmd_eval_classify(ec_annot, ec_frames, ec_ckpt, ec_args, ec_out);
        if (ep->parsed()) return cmd_eval_compose(ep_emb, ep_cases, ep_ckpt, ep_args, ep_out);
        if (ic->parsed()) return cmd_inspect_ckpt(ic_ckpt);
    } catch (const SchemaError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const FormatError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
