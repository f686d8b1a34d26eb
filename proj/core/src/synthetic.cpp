#include "figclip/synthetic.hpp"

#include <cstdio>

#include "figclip/errors.hpp"
#include "figclip/prompting.hpp"
#include "figclip/rng.hpp"

namespace figclip {

namespace {

std::string tag(const char* stem, size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%s%02zu", stem, i);
    return buf;
}

}  // namespace

PlantedData make_planted_data(const PlantedConfig& cfg, const TextEncoder& text, const ParamStore& store,
                              uint64_t seed) {
    if (cfg.videos == 0 || cfg.events_per_video == 0 || cfg.frames_per_event == 0)
        throw ValidationError("planted config needs at least one video/event/frame");
    if (text.dims().dim != cfg.dim)
        throw ShapeError("text encoder dim " + std::to_string(text.dims().dim) + " != planted dim " +
                         std::to_string(cfg.dim));

    Rng rng(derive_seed(seed, 0x51a7u));
    PlantedData out;
    out.dataset.split_tag = cfg.split;
    out.frames = EmbeddingMatrix(0, cfg.tokens * cfg.dim);

    const size_t manners = 8, scenes = 8;
    size_t frame_row = 0;
    for (size_t vi = 0; vi < cfg.videos; ++vi) {
        VideoAnnotation video;
        video.video_id = cfg.id_prefix + tag("", vi);
        video.movie_id = cfg.id_prefix + "m" + std::to_string(vi / std::max<size_t>(1, cfg.videos_per_movie));
        for (size_t ek = 0; ek < cfg.events_per_video; ++ek) {
            EventAnnotation ev;
            ev.event_id = video.video_id + "_e" + std::to_string(ek);
            const size_t verb_idx = rng.uniform_below(cfg.verbs);
            ev.verb = tag("verb", verb_idx);
            ev.roles.push_back({tag("agent", verb_idx), tag("noun", rng.uniform_below(cfg.nouns))});
            ev.roles.push_back({tag("patient", verb_idx), tag("noun", rng.uniform_below(cfg.nouns))});
            ev.roles.push_back({"manner", tag("manner", rng.uniform_below(manners))});
            ev.roles.push_back({"scene", tag("scene", rng.uniform_below(scenes))});
            ev.start_s = static_cast<double>(ek) * 2.0;
            ev.end_s = static_cast<double>(ek + 1) * 2.0;

            const std::string prompt = render_event_prompt(ev).text;
            const Tensor target = text.embed(store, prompt, /*normalize=*/true);
            for (size_t fj = 0; fj < cfg.frames_per_event; ++fj) {
                std::vector<float> row(cfg.tokens * cfg.dim);
                for (size_t tk = 0; tk < cfg.tokens; ++tk)
                    for (size_t c = 0; c < cfg.dim; ++c) {
                        double v = target.data[c];
                        if (cfg.noise != 0.0) v += cfg.noise * rng.gaussian();
                        row[tk * cfg.dim + c] = static_cast<float>(v);
                    }
                const std::string frame_id = ev.event_id + "_f" + std::to_string(fj);
                out.frames.append_row(frame_id, row);
                ev.frame_refs.push_back(FrameRef{"emb:" + std::to_string(frame_row)});
                ++frame_row;
            }
            video.events.push_back(std::move(ev));
        }
        out.dataset.videos.push_back(std::move(video));
    }
    validate_dataset(out.dataset);
    return out;
}

Tensor oracle_frame_embedding(const Tensor& grid) {
    if (grid.ndim() != 2) throw ShapeError("oracle expects a token grid, got " + Tensor::shape_str(grid.shape));
    const size_t tokens = grid.shape[0], d = grid.shape[1];
    Tensor out({d});
    for (size_t t = 0; t < tokens; ++t)
        for (size_t c = 0; c < d; ++c) out.data[c] += grid.data[t * d + c];
    for (double& v : out.data) v /= static_cast<double>(tokens);
    return out;
}

}  // namespace figclip
