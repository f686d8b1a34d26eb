#include <cmath>
#include <vector>

#include "doctest.h"
#include "figclip/losses.hpp"
#include "helpers.hpp"
#include "loss_oracle.hpp"

using namespace figclip;
namespace oracle = loss_oracle;

namespace {

struct ToyBatch {
    size_t b, p, t, d, h;
    std::vector<std::vector<std::vector<oracle::vecd>>> frames;  // B P T
    std::vector<std::vector<oracle::vecd>> event_text;           // B P (unit rows)
    std::vector<std::vector<std::vector<oracle::vecd>>> hn;      // B P H (unit rows)
    std::vector<std::vector<oracle::vecd>> e_hat;                // B P (raw)
    std::vector<oracle::vecd> v_hat;                             // B (raw)
};

ToyBatch make_toy(size_t b, size_t p, size_t t, size_t d, size_t h, uint64_t seed) {
    Rng rng(seed);
    auto vec = [&](bool unit) {
        oracle::vecd v(d);
        for (double& x : v) x = rng.gaussian();
        return unit ? oracle::normalize(v) : v;
    };
    ToyBatch tb{b, p, t, d, h, {}, {}, {}, {}, {}};
    for (size_t i = 0; i < b; ++i) {
        tb.frames.emplace_back();
        tb.event_text.emplace_back();
        tb.hn.emplace_back();
        tb.e_hat.emplace_back();
        for (size_t k = 0; k < p; ++k) {
            tb.frames[i].emplace_back();
            for (size_t j = 0; j < t; ++j) tb.frames[i][k].push_back(vec(true));
            tb.event_text[i].push_back(vec(true));
            tb.hn[i].emplace_back();
            for (size_t n = 0; n < h; ++n) tb.hn[i][k].push_back(vec(true));
            tb.e_hat[i].push_back(vec(false));
        }
        tb.v_hat.push_back(vec(false));
    }
    return tb;
}

// Wires the toy arrays into tape constants, mirroring what the trainer does.
LossBatchInputs wire(TapeSession& s, const ToyBatch& tb, double scale, bool with_hn, bool with_vc,
                     bool with_video) {
    Tape& t = s.tape();
    auto node = [&](const oracle::vecd& v) {
        Tensor x({v.size()});
        x.data = v;
        return t.constant(std::move(x));
    };
    LossBatchInputs in;
    in.logit_scale = t.constant(Tensor({1}, {scale}));
    for (size_t i = 0; i < tb.b; ++i) {
        in.frame_embs.emplace_back();
        in.event_text.emplace_back();
        in.hn_text.emplace_back();
        for (size_t k = 0; k < tb.p; ++k) {
            in.frame_embs[i].emplace_back();
            for (const auto& f : tb.frames[i][k]) in.frame_embs[i].back().push_back(node(f));
            in.event_text[i].push_back(node(tb.event_text[i][k]));
            in.hn_text[i].emplace_back();
            if (with_hn)
                for (const auto& n : tb.hn[i][k]) in.hn_text[i].back().push_back(node(n));
        }
        if (with_vc) {
            VcOutputNodes vc;
            vc.v_hat = node(tb.v_hat[i]);
            for (size_t k = 0; k < tb.p; ++k) vc.e_hat.push_back(node(tb.e_hat[i][k]));
            in.vc_out.push_back(std::move(vc));
        }
        if (with_video) {
            std::vector<NodeId> rows;
            for (size_t k = 0; k < tb.p; ++k) rows.push_back(in.event_text[i][k]);
            in.video_text.push_back(build_video_text(t, rows, true));
        }
    }
    return in;
}

// Oracle views of the four query families.
std::vector<oracle::vecd> oracle_ce_queries(const ToyBatch& tb) {
    std::vector<oracle::vecd> q;
    for (size_t i = 0; i < tb.b; ++i)
        for (size_t k = 0; k < tb.p; ++k) q.push_back(oracle::normalize(oracle::mean_of(tb.frames[i][k])));
    return q;
}

std::vector<oracle::vecd> oracle_event_keys(const ToyBatch& tb) {
    std::vector<oracle::vecd> kk;
    for (size_t i = 0; i < tb.b; ++i)
        for (size_t k = 0; k < tb.p; ++k) kk.push_back(tb.event_text[i][k]);
    return kk;
}

std::vector<std::vector<oracle::vecd>> oracle_extras(const ToyBatch& tb) {
    std::vector<std::vector<oracle::vecd>> e;
    for (size_t i = 0; i < tb.b; ++i)
        for (size_t k = 0; k < tb.p; ++k) e.push_back(tb.hn[i][k]);
    return e;
}

}  // namespace

TEST_CASE("worked 2x2 similarity matrix gives ln(4/3)") {
    Tape t(Precision::f64);
    const double ln3 = std::log(3.0);
    NodeId logits = t.constant(Tensor({2, 2}, {ln3, 0.0, 0.0, ln3}));
    const double loss = t.value(info_nce_from_logits(t, logits)).data[0];
    CHECK(loss == doctest::Approx(std::log(4.0 / 3.0)).epsilon(1e-12));
    CHECK(loss == doctest::Approx(0.28768207245178085).epsilon(1e-12));
}

TEST_CASE("N=1 with no extras is exactly zero") {
    ParamStore store;
    TapeSession s(store, Precision::f64, false);
    Tensor q({1, 4}, {0.5, 0.5, 0.5, 0.5});
    NodeId loss = info_nce(s, s.tape().constant(q), s.tape().constant(q), std::nullopt, 0,
                           s.tape().constant(Tensor({1}, {7.0})));
    CHECK(s.tape().value(loss).data[0] == 0.0);

    ToyBatch tb = make_toy(1, 1, 2, 8, 0, 3);
    TapeSession s2(store, Precision::f64, false);
    LossBatchInputs in = wire(s2, tb, 5.0, false, true, true);
    LossWeights w;
    w.use_hn = false;
    CHECK(s2.tape().value(clip_event_loss(s2, in, w)).data[0] == 0.0);
    CHECK(s2.tape().value(clip_video_loss(s2, in, w)).data[0] == 0.0);
    CHECK(s2.tape().value(vc_event_loss(s2, in, w)).data[0] == 0.0);
    CHECK(s2.tape().value(vc_video_loss(s2, in, w)).data[0] == 0.0);
}

TEST_CASE("a hard negative as similar as the positive strictly increases the loss") {
    ParamStore store;
    ToyBatch tb = make_toy(2, 2, 2, 8, 1, 11);
    // make each event's first HN equal to its positive text
    for (size_t i = 0; i < tb.b; ++i)
        for (size_t k = 0; k < tb.p; ++k) tb.hn[i][k][0] = tb.event_text[i][k];

    LossWeights w;
    TapeSession s1(store, Precision::f64, false);
    double with_hn = s1.tape().value(clip_event_loss(s1, wire(s1, tb, 4.0, true, false, false), w)).data[0];
    TapeSession s2(store, Precision::f64, false);
    LossWeights no_hn = w;
    no_hn.use_hn = false;
    double base = s2.tape().value(clip_event_loss(s2, wire(s2, tb, 4.0, false, false, false), no_hn)).data[0];
    CHECK(with_hn > base);
}

TEST_CASE("all four losses match the loop oracle on random batches") {
    for (uint64_t seed : {1u, 2u, 3u, 4u, 5u}) {
        ToyBatch tb = make_toy(2, 2, 2, 8, 2, seed);
        const double scale = 3.7;
        ParamStore store;
        LossWeights w;

        TapeSession s(store, Precision::f64, false);
        LossBatchInputs in = wire(s, tb, scale, true, true, true);

        // CE with per-event strips
        double ce = s.tape().value(clip_event_loss(s, in, w)).data[0];
        double ce_want = oracle::symmetric_nce(oracle_ce_queries(tb), oracle_event_keys(tb),
                                               oracle_extras(tb), false, scale, false);
        CHECK(ce == doctest::Approx(ce_want).epsilon(1e-6));

        // VCE normalizes the raw e_hat rows
        std::vector<oracle::vecd> vce_q;
        for (size_t i = 0; i < tb.b; ++i)
            for (size_t k = 0; k < tb.p; ++k) vce_q.push_back(oracle::normalize(tb.e_hat[i][k]));
        double vce = s.tape().value(vc_event_loss(s, in, w)).data[0];
        double vce_want =
            oracle::symmetric_nce(vce_q, oracle_event_keys(tb), oracle_extras(tb), false, scale, false);
        CHECK(vce == doctest::Approx(vce_want).epsilon(1e-6));

        // CV: all frames of a video pooled vs the video text
        std::vector<oracle::vecd> cv_q, video_text;
        for (size_t i = 0; i < tb.b; ++i) {
            std::vector<oracle::vecd> all;
            for (size_t k = 0; k < tb.p; ++k)
                for (const auto& f : tb.frames[i][k]) all.push_back(f);
            cv_q.push_back(oracle::normalize(oracle::mean_of(all)));
            video_text.push_back(oracle::normalize(oracle::mean_of(tb.event_text[i])));
        }
        double cv = s.tape().value(clip_video_loss(s, in, w)).data[0];
        double cv_want = oracle::symmetric_nce(cv_q, video_text, {}, false, scale, false);
        CHECK(cv == doctest::Approx(cv_want).epsilon(1e-6));

        // VCV
        std::vector<oracle::vecd> vcv_q;
        for (size_t i = 0; i < tb.b; ++i) vcv_q.push_back(oracle::normalize(tb.v_hat[i]));
        double vcv = s.tape().value(vc_video_loss(s, in, w)).data[0];
        double vcv_want = oracle::symmetric_nce(vcv_q, video_text, {}, false, scale, false);
        CHECK(vcv == doctest::Approx(vcv_want).epsilon(1e-6));

        // extra-negatives mode pools every HN into every denominator
        LossWeights we = w;
        we.use_extra_negatives = true;
        double ce_pool = s.tape().value(clip_event_loss(s, in, we)).data[0];
        double ce_pool_want = oracle::symmetric_nce(oracle_ce_queries(tb), oracle_event_keys(tb),
                                                    oracle_extras(tb), true, scale, false);
        CHECK(ce_pool == doctest::Approx(ce_pool_want).epsilon(1e-6));

        // hn_both_directions mirrors the strips into the text->visual rows
        LossWeights wb = w;
        wb.hn_both_directions = true;
        double ce_both = s.tape().value(clip_event_loss(s, in, wb)).data[0];
        double ce_both_want = oracle::symmetric_nce(oracle_ce_queries(tb), oracle_event_keys(tb),
                                                    oracle_extras(tb), false, scale, true);
        CHECK(ce_both == doctest::Approx(ce_both_want).epsilon(1e-6));

        // total = ce + vce + lambda (cv + vcv)
        TotalLoss tl = total_loss(s, in, w);
        CHECK(tl.report.total ==
              doctest::Approx(ce_want + vce_want + w.lambda * (cv_want + vcv_want)).epsilon(1e-6));
        CHECK(tl.report.ce + tl.report.cv + tl.report.vce + tl.report.vcv + tl.report.actp ==
              doctest::Approx(tl.report.total).epsilon(1e-9));
    }
}

TEST_CASE("ragged hard negatives are masked, not counted") {
    ToyBatch tb = make_toy(2, 1, 1, 8, 2, 77);
    tb.hn[1][0].pop_back();  // second event carries one HN instead of two
    ParamStore store;
    TapeSession s(store, Precision::f64, false);
    LossBatchInputs in = wire(s, tb, 2.0, true, false, false);
    LossWeights w;
    double got = s.tape().value(clip_event_loss(s, in, w)).data[0];
    double want = oracle::symmetric_nce(oracle_ce_queries(tb), oracle_event_keys(tb), oracle_extras(tb),
                                        false, 2.0, false);
    CHECK(got == doctest::Approx(want).epsilon(1e-6));
}

TEST_CASE("symmetric loss is invariant under query/key exchange") {
    ToyBatch tb = make_toy(3, 1, 1, 8, 0, 13);
    ParamStore store;
    LossWeights w;
    w.use_hn = false;
    auto keys_as_frames = [&](const ToyBatch& src) {
        ToyBatch swapped = src;
        for (size_t i = 0; i < src.b; ++i) {
            swapped.frames[i][0] = {src.event_text[i][0]};
            swapped.event_text[i][0] = oracle::normalize(oracle::mean_of(src.frames[i][0]));
        }
        return swapped;
    };
    TapeSession s1(store, Precision::f64, false);
    double a = s1.tape().value(clip_event_loss(s1, wire(s1, tb, 3.0, false, false, false), w)).data[0];
    TapeSession s2(store, Precision::f64, false);
    ToyBatch swapped = keys_as_frames(tb);
    double b = s2.tape().value(clip_event_loss(s2, wire(s2, swapped, 3.0, false, false, false), w)).data[0];
    CHECK(a == doctest::Approx(b).epsilon(1e-9));
}

TEST_CASE("perfect alignment approaches zero loss as the scale grows") {
    ToyBatch tb = make_toy(4, 1, 1, 8, 0, 19);
    for (size_t i = 0; i < tb.b; ++i) tb.frames[i][0] = {tb.event_text[i][0]};  // queries equal keys
    ParamStore store;
    LossWeights w;
    w.use_hn = false;
    double prev = 1e30;
    for (double scale : {1.0, 4.0, 16.0, 64.0}) {
        TapeSession s(store, Precision::f64, false);
        double loss = s.tape().value(clip_event_loss(s, wire(s, tb, scale, false, false, false), w)).data[0];
        CHECK(loss < prev);
        prev = loss;
    }
    CHECK(prev < 1e-6);
}

TEST_CASE("act_p adds a weight-1 event-level term against action prompts") {
    ToyBatch tb = make_toy(2, 2, 1, 8, 0, 23);
    ParamStore store;
    TapeSession s(store, Precision::f64, false);
    LossBatchInputs in = wire(s, tb, 2.5, false, true, true);
    Rng rng(5);
    for (size_t i = 0; i < tb.b; ++i) {
        in.actp_text.emplace_back();
        for (size_t k = 0; k < tb.p; ++k) {
            Tensor v = Tensor::gaussian({8}, 1.0, rng);
            TapeSession* sp = &s;
            NodeId n = sp->tape().l2_normalize(sp->tape().constant(v), 0);
            in.actp_text[i].push_back(n);
        }
    }
    LossWeights w;
    w.use_hn = false;
    LossWeights no_actp = w;
    w.act_p = true;
    TotalLoss with_term = total_loss(s, in, w);
    TotalLoss without = total_loss(s, in, no_actp);
    CHECK(with_term.report.actp > 0.0);
    CHECK(with_term.report.total ==
          doctest::Approx(without.report.total + with_term.report.actp).epsilon(1e-9));
}

TEST_CASE("per-term report carries weighted contributions") {
    ToyBatch tb = make_toy(2, 2, 2, 8, 0, 29);
    ParamStore store;
    TapeSession s(store, Precision::f64, false);
    LossBatchInputs in = wire(s, tb, 3.0, false, true, true);
    LossWeights w;
    w.use_hn = false;
    w.lambda = 0.25;
    TotalLoss tl = total_loss(s, in, w);
    double cv_raw = s.tape().value(clip_video_loss(s, in, w)).data[0];
    CHECK(tl.report.cv == doctest::Approx(0.25 * cv_raw).epsilon(1e-9));

    // disabling CV and VCV reproduces the event-only combination
    LossWeights events_only = w;
    events_only.enable_cv = false;
    events_only.enable_vcv = false;
    TotalLoss eo = total_loss(s, in, events_only);
    CHECK(eo.report.cv == 0.0);
    CHECK(eo.report.vcv == 0.0);
    CHECK(eo.report.total == doctest::Approx(tl.report.ce + tl.report.vce).epsilon(1e-9));
}
