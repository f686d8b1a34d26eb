#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "figclip/annotations.hpp"
#include "figclip/errors.hpp"

using namespace figclip;

namespace {

std::string event_json(const std::string& id, double start, double end, const std::string& verb,
                       const std::string& roles, size_t frames, size_t frame_base) {
    std::string f = "[";
    for (size_t i = 0; i < frames; ++i) {
        if (i) f += ",";
        f += "\"emb:" + std::to_string(frame_base + i) + "\"";
    }
    f += "]";
    return "{\"event_id\":\"" + id + "\",\"start_s\":" + std::to_string(start) +
           ",\"end_s\":" + std::to_string(end) + ",\"verb\":\"" + verb + "\",\"roles\":" + roles +
           ",\"frames\":" + f + "}";
}

std::string one_video_json() {
    std::string roles =
        R"([{"role":"walker","noun":"man"},{"role":"direction","noun":"forward"},{"role":"manner","noun":"slowly"},{"role":"scene","noun":"apartment"}])";
    std::string events;
    for (size_t k = 0; k < 5; ++k) {
        if (k) events += ",";
        events += event_json("v0_e" + std::to_string(k), 2.0 * k, 2.0 * (k + 1), "walk", roles, 4, 4 * k);
    }
    return R"({"figannot_version":1,"split":"train","videos":[{"video_id":"v0","movie_id":"m0","events":[)" +
           events + "]}]}";
}

}  // namespace

TEST_CASE("one video with five events loads with P=5 and 20 frame refs") {
    Dataset ds = parse_dataset_json(one_video_json());
    CHECK(ds.videos.size() == 1);
    CHECK(ds.events_per_video == 5);
    size_t frames = 0;
    for (const auto& ev : ds.videos[0].events) frames += ev.frame_refs.size();
    CHECK(frames == 20);
    CHECK(ds.verb_lexicon.count("walk") == 1);
}

TEST_CASE("empty videos array loads as an empty dataset") {
    Dataset ds = parse_dataset_json(R"({"figannot_version":1,"split":"t","videos":[]})");
    CHECK(ds.videos.empty());
    CHECK(ds.verb_lexicon.empty());
    CHECK(ds.event_count() == 0);
}

TEST_CASE("duplicate role names inside one event are rejected, naming the event") {
    std::string roles = R"([{"role":"walker","noun":"a"},{"role":"walker","noun":"b"}])";
    std::string text =
        R"({"figannot_version":1,"split":"t","videos":[{"video_id":"v0","movie_id":"m0","events":[)" +
        event_json("v0_e0", 0, 2, "walk", roles, 1, 0) + "]}]}";
    CHECK_THROWS_WITH_AS(parse_dataset_json(text), doctest::Contains("v0_e0"), ValidationError);
}

TEST_CASE("schema errors carry a JSON pointer") {
    std::string text = R"({"figannot_version":1,"split":"t","videos":[{"video_id":"v0","movie_id":"m0",)"
                       R"("events":[{"event_id":"e0","start_s":0,"end_s":1,"roles":[],"frames":["f"]}]}]})";
    CHECK_THROWS_WITH_AS(parse_dataset_json(text), doctest::Contains("/videos/0/events/0"), SchemaError);
}

TEST_CASE("wrong version and malformed JSON are schema errors") {
    CHECK_THROWS_AS(parse_dataset_json(R"({"figannot_version":2,"split":"t","videos":[]})"), SchemaError);
    CHECK_THROWS_AS(parse_dataset_json("{nope"), SchemaError);
}

TEST_CASE("invariant violations are validation errors") {
    std::string roles = R"([{"role":"walker","noun":"a"}])";
    SUBCASE("start >= end") {
        std::string text =
            R"({"figannot_version":1,"split":"t","videos":[{"video_id":"v0","movie_id":"m0","events":[)" +
            event_json("e0", 2, 2, "walk", roles, 1, 0) + "]}]}";
        CHECK_THROWS_AS(parse_dataset_json(text), ValidationError);
    }
    SUBCASE("empty verb") {
        std::string text =
            R"({"figannot_version":1,"split":"t","videos":[{"video_id":"v0","movie_id":"m0","events":[)" +
            event_json("e0", 0, 2, "", roles, 1, 0) + "]}]}";
        CHECK_THROWS_AS(parse_dataset_json(text), ValidationError);
    }
    SUBCASE("no frames") {
        std::string text =
            R"({"figannot_version":1,"split":"t","videos":[{"video_id":"v0","movie_id":"m0","events":[)" +
            event_json("e0", 0, 2, "walk", roles, 0, 0) + "]}]}";
        CHECK_THROWS_AS(parse_dataset_json(text), ValidationError);
    }
    SUBCASE("non-contiguous events") {
        std::string text =
            R"({"figannot_version":1,"split":"t","videos":[{"video_id":"v0","movie_id":"m0","events":[)" +
            event_json("e0", 0, 2, "walk", roles, 1, 0) + "," + event_json("e1", 3, 4, "walk", roles, 1, 1) +
            "]}]}";
        CHECK_THROWS_WITH_AS(parse_dataset_json(text), doctest::Contains("contiguous"), ValidationError);
    }
    SUBCASE("duplicate video ids") {
        std::string video = R"({"video_id":"v0","movie_id":"m0","events":[)" +
                            event_json("e0", 0, 2, "walk", roles, 1, 0) + "]}";
        std::string text = R"({"figannot_version":1,"split":"t","videos":[)" + video + "," + video + "]}";
        CHECK_THROWS_AS(parse_dataset_json(text), ValidationError);
    }
}

TEST_CASE("mixed event counts across videos are rejected (P-uniformity)") {
    std::string roles = R"([{"role":"walker","noun":"a"}])";
    std::string v0 = R"({"video_id":"v0","movie_id":"m0","events":[)" +
                     event_json("e0", 0, 2, "walk", roles, 1, 0) + "]}";
    std::string v1 = R"({"video_id":"v1","movie_id":"m0","events":[)" +
                     event_json("e1", 0, 2, "walk", roles, 1, 1) + "," +
                     event_json("e2", 2, 4, "walk", roles, 1, 2) + "]}";
    std::string text = R"({"figannot_version":1,"split":"t","videos":[)" + v0 + "," + v1 + "]}";
    CHECK_THROWS_WITH_AS(parse_dataset_json(text), doctest::Contains("P="), ValidationError);
}

TEST_CASE("role names are lowercased and trimmed on load") {
    std::string roles = R"([{"role":" WaLkEr ","noun":"a"},{"role":"Scene","noun":"b"}])";
    std::string text =
        R"({"figannot_version":1,"split":"t","videos":[{"video_id":"v0","movie_id":"m0","events":[)" +
        event_json("e0", 0, 2, "walk", roles, 1, 0) + "]}]}";
    Dataset ds = parse_dataset_json(text);
    CHECK(ds.videos[0].events[0].roles[0].role == "walker");
    CHECK(ds.videos[0].events[0].roles[1].role == "scene");
}

TEST_CASE("round trip: serialize then re-parse equals the original") {
    Dataset ds = parse_dataset_json(one_video_json());
    Dataset back = parse_dataset_json(dataset_to_json(ds));
    CHECK(datasets_equal(ds, back));

    namespace fs = std::filesystem;
    const std::string path = (fs::temp_directory_path() / "figclip_annot_roundtrip.json").string();
    save_dataset(ds, path);
    Dataset loaded = load_dataset(path);
    CHECK(datasets_equal(ds, loaded));
    fs::remove(path);
}

TEST_CASE("lexicon is the exact closure of observed (verb, role) pairs") {
    std::string ra = R"([{"role":"walker","noun":"a"},{"role":"scene","noun":"b"}])";
    std::string rb = R"([{"role":"direction","noun":"c"},{"role":"walker","noun":"d"}])";
    std::string text =
        R"({"figannot_version":1,"split":"t","videos":[{"video_id":"v0","movie_id":"m0","events":[)" +
        event_json("e0", 0, 2, "walk", ra, 1, 0) + "," + event_json("e1", 2, 4, "walk", rb, 1, 1) + "]}]}";
    Dataset ds = parse_dataset_json(text);
    // union of role sets; walker seen twice ranks first, ties lexicographic
    REQUIRE(ds.verb_lexicon.count("walk") == 1);
    const auto& roles = ds.verb_lexicon.at("walk");
    REQUIRE(roles.size() == 3);
    CHECK(roles[0] == "walker");
    CHECK(roles[1] == "direction");
    CHECK(roles[2] == "scene");
    CHECK(build_verb_lexicon(ds) == ds.verb_lexicon);

    // soundness in both directions
    for (const auto& video : ds.videos)
        for (const auto& ev : video.events)
            for (const auto& rp : ev.roles) {
                const auto& lex = ds.verb_lexicon.at(ev.verb);
                CHECK(std::find(lex.begin(), lex.end(), rp.role) != lex.end());
            }
}

TEST_CASE("single-event corpus yields exactly one lexicon entry") {
    std::string roles = R"([{"role":"walker","noun":"a"}])";
    std::string text =
        R"({"figannot_version":1,"split":"t","videos":[{"video_id":"v0","movie_id":"m0","events":[)" +
        event_json("e0", 0, 2, "walk", roles, 1, 0) + "]}]}";
    CHECK(parse_dataset_json(text).verb_lexicon.size() == 1);
}

TEST_CASE("frame refs parse embedding handles and reject malformed ones") {
    CHECK(FrameRef{"emb:17"}.is_embedding_row());
    CHECK(FrameRef{"emb:17"}.embedding_row() == 17);
    CHECK(!FrameRef{"frames/f0.fgemb"}.is_embedding_row());
    CHECK_THROWS_AS(FrameRef{"emb:x"}.embedding_row(), ValidationError);
    CHECK_THROWS_AS(FrameRef{"path.bin"}.embedding_row(), ValidationError);
}
