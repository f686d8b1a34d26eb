#include "figclip/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <thread>

#include "json.hpp"

#include "figclip/errors.hpp"

namespace figclip {

RetrievalMetrics retrieval_metrics(const Tensor& sim, const std::vector<size_t>& ks,
                                   const std::vector<size_t>* truth) {
    if (sim.ndim() != 2) throw ShapeError("similarity matrix must be rank 2, got " + Tensor::shape_str(sim.shape));
    const size_t q = sim.shape[0], g = sim.shape[1];
    if (q == 0 || g == 0) throw ShapeError("empty similarity matrix");
    if (!truth && q > g)
        throw ShapeError("identity ground truth needs cols >= rows, got " + Tensor::shape_str(sim.shape));
    if (truth && truth->size() != q) throw ShapeError("ground-truth index map size mismatch");

    RetrievalMetrics out;
    out.ranks.reserve(q);
    for (size_t i = 0; i < q; ++i) {
        const size_t ti = truth ? (*truth)[i] : i;
        if (ti >= g) throw ShapeError("ground-truth index out of range");
        const double target = sim.at2(i, ti);
        size_t rank = 1;
        for (size_t j = 0; j < g; ++j) {
            if (j == ti) continue;
            const double v = sim.at2(i, j);
            if (v > target || (v == target && j < ti)) ++rank;
        }
        out.ranks.push_back(rank);
    }
    for (size_t k : ks) {
        size_t hits = 0;
        for (size_t r : out.ranks)
            if (r <= k) ++hits;
        out.recall_at[k] = 100.0 * static_cast<double>(hits) / static_cast<double>(q);
    }
    double sum = 0.0;
    for (size_t r : out.ranks) sum += static_cast<double>(r);
    out.mean_rank = sum / static_cast<double>(q);
    std::vector<size_t> sorted = out.ranks;
    std::sort(sorted.begin(), sorted.end());
    out.median_rank = static_cast<double>(sorted[(q - 1) / 2]);
    return out;
}

ClassifyMetrics zero_shot_classify(const Tensor& item_embs, const Tensor& class_embs,
                                   const std::vector<size_t>& truth) {
    Tensor sim = cosine_matrix(item_embs, class_embs);
    const size_t n = sim.shape[0], c = sim.shape[1];
    if (truth.size() != n) throw ShapeError("truth labels size mismatch");
    ClassifyMetrics out;
    out.samples = n;
    size_t top1 = 0, top5 = 0;
    const size_t k5 = std::min<size_t>(5, c);
    for (size_t i = 0; i < n; ++i) {
        if (truth[i] >= c) throw ShapeError("class label out of range");
        std::vector<size_t> order(c);
        for (size_t j = 0; j < c; ++j) order[j] = j;
        std::stable_sort(order.begin(), order.end(),
                         [&](size_t a, size_t b) { return sim.at2(i, a) > sim.at2(i, b); });
        if (order[0] == truth[i]) ++top1;
        for (size_t j = 0; j < k5; ++j)
            if (order[j] == truth[i]) {
                ++top5;
                break;
            }
    }
    out.top1 = 100.0 * static_cast<double>(top1) / static_cast<double>(n);
    out.top5 = 100.0 * static_cast<double>(top5) / static_cast<double>(n);
    return out;
}

namespace {
double cosine(const Tensor& a, const Tensor& b) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (size_t i = 0; i < a.numel(); ++i) {
        dot += a.data[i] * b.data[i];
        na += a.data[i] * a.data[i];
        nb += b.data[i] * b.data[i];
    }
    const double denom = std::sqrt(na) * std::sqrt(nb);
    return denom == 0.0 ? 0.0 : dot / denom;
}
}  // namespace

bool caption_choice_correct(const Tensor& item, const Tensor& positive, const std::vector<Tensor>& negatives) {
    if (negatives.empty()) throw FormatError("caption choice needs at least one negative");
    if (item.numel() != positive.numel())
        throw ShapeError("item dim " + std::to_string(item.numel()) + " vs text dim " +
                         std::to_string(positive.numel()));
    const double pos = cosine(item, positive);
    double best_neg = -2.0;
    for (const auto& n : negatives) best_neg = std::max(best_neg, cosine(item, n));
    return pos > best_neg;  // ties fail
}

std::vector<CaptionCase> load_caption_cases(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open " + path);
    std::vector<CaptionCase> out;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw FormatError(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
        CaptionCase c;
        c.id = j.value("id", std::to_string(lineno));
        if (!j.contains("item") || !j.contains("positive") || !j.contains("negatives"))
            throw FormatError(path + ":" + std::to_string(lineno) + ": case needs item/positive/negatives");
        c.item = j["item"].get<std::string>();
        c.positive = j["positive"].get<std::string>();
        for (const auto& n : j["negatives"]) c.negatives.push_back(n.get<std::string>());
        if (c.negatives.empty())
            throw FormatError(path + ":" + std::to_string(lineno) + ": empty negatives list");
        out.push_back(std::move(c));
    }
    return out;
}

Tensor l2_normalize_rows(Tensor m) {
    const size_t rows = m.shape[0], d = m.shape[1];
    for (size_t r = 0; r < rows; ++r) {
        double ss = 0.0;
        for (size_t c = 0; c < d; ++c) ss += m.data[r * d + c] * m.data[r * d + c];
        const double nrm = std::sqrt(ss);
        if (nrm == 0.0) continue;
        for (size_t c = 0; c < d; ++c) m.data[r * d + c] /= nrm;
    }
    return m;
}

Tensor cosine_matrix(const Tensor& queries, const Tensor& gallery) {
    if (queries.ndim() != 2 || gallery.ndim() != 2 || queries.shape[1] != gallery.shape[1])
        throw ShapeError("cosine_matrix: " + Tensor::shape_str(queries.shape) + " vs " +
                         Tensor::shape_str(gallery.shape));
    Tensor q = l2_normalize_rows(queries);
    Tensor g = l2_normalize_rows(gallery);
    const size_t nq = q.shape[0], ng = g.shape[0], d = q.shape[1];
    Tensor sim({nq, ng});
    for (size_t i = 0; i < nq; ++i)
        for (size_t j = 0; j < ng; ++j) {
            double acc = 0.0;
            for (size_t c = 0; c < d; ++c) acc += q.data[i * d + c] * g.data[j * d + c];
            sim.data[i * ng + j] = acc;
        }
    return sim;
}

Tensor encode_event_mean(const Model& model, const FrameSource& frames, const EventAnnotation& event) {
    const size_t d = model.config().backbone.dim;
    Tensor acc({d});
    for (const auto& ref : event.frame_refs) {
        Tensor emb = model.encode_frame_tensor(frames.grid(ref));
        for (size_t c = 0; c < d; ++c) acc.data[c] += emb.data[c];
    }
    for (double& v : acc.data) v /= static_cast<double>(event.frame_refs.size());
    double ss = 0.0;
    for (double v : acc.data) ss += v * v;
    const double nrm = std::sqrt(ss);
    if (nrm > 0.0)
        for (double& v : acc.data) v /= nrm;
    return acc;
}

Tensor encode_video_mean(const Model& model, const FrameSource& frames, const VideoAnnotation& video) {
    const size_t d = model.config().backbone.dim;
    Tensor acc({d});
    size_t count = 0;
    for (const auto& ev : video.events)
        for (const auto& ref : ev.frame_refs) {
            Tensor emb = model.encode_frame_tensor(frames.grid(ref));
            for (size_t c = 0; c < d; ++c) acc.data[c] += emb.data[c];
            ++count;
        }
    for (double& v : acc.data) v /= static_cast<double>(count);
    double ss = 0.0;
    for (double v : acc.data) ss += v * v;
    const double nrm = std::sqrt(ss);
    if (nrm > 0.0)
        for (double& v : acc.data) v /= nrm;
    return acc;
}

Tensor encode_video_vc_events(const Model& model, const FrameSource& frames, const VideoAnnotation& video,
                              size_t frames_per_event) {
    if (!model.vc_enabled()) throw TrainError("contextualizer outputs requested from a VC-less model");
    ParamStore& store = const_cast<ParamStore&>(model.params());
    TapeSession s(store, model.config().precision, /*grad_enabled=*/false);
    std::vector<std::vector<NodeId>> frame_nodes;
    for (const auto& ev : video.events) {
        std::vector<NodeId> event_nodes;
        for (size_t j = 0; j < std::min(frames_per_event, ev.frame_refs.size()); ++j)
            event_nodes.push_back(model.encode_frame(s, frames.grid(ev.frame_refs[j])));
        while (event_nodes.size() < frames_per_event) event_nodes.push_back(event_nodes.back());
        frame_nodes.push_back(std::move(event_nodes));
    }
    VcOutputNodes out = model.vc().forward(s, frame_nodes);
    const size_t d = model.config().backbone.dim;
    Tensor rows({out.e_hat.size(), d});
    for (size_t k = 0; k < out.e_hat.size(); ++k) {
        const Tensor& e = s.tape().value(out.e_hat[k]);
        for (size_t c = 0; c < d; ++c) rows.data[k * d + c] = e.data[c];
    }
    return model.config().normalize ? l2_normalize_rows(std::move(rows)) : rows;
}

void parallel_for(size_t n, size_t threads, const std::function<void(size_t)>& fn) {
    if (threads == 0) threads = std::max<size_t>(1, std::thread::hardware_concurrency());
    threads = std::min(threads, n);
    if (threads <= 1) {
        for (size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(threads);
    for (size_t t = 0; t < threads; ++t) {
        pool.emplace_back([&, t]() {
            for (size_t i = t; i < n; i += threads) fn(i);
        });
    }
    for (auto& th : pool) th.join();
}

}  // namespace figclip
