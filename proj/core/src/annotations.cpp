#include "figclip/annotations.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "json.hpp"

#include "figclip/errors.hpp"

namespace figclip {

using nlohmann::json;

size_t FrameRef::embedding_row() const {
    if (!is_embedding_row()) throw ValidationError("frame ref is not an embedding handle: " + raw);
    try {
        size_t pos = 0;
        unsigned long long row = std::stoull(raw.substr(4), &pos);
        if (pos != raw.size() - 4) throw std::invalid_argument("trailing");
        return static_cast<size_t>(row);
    } catch (const std::exception&) {
        throw ValidationError("malformed embedding handle: " + raw);
    }
}

size_t Dataset::event_count() const {
    size_t n = 0;
    for (const auto& v : videos) n += v.events.size();
    return n;
}

bool is_common_role(const std::string& role) {
    return role == "direction" || role == "manner" || role == "scene";
}

std::string normalize_role_name(const std::string& role) {
    size_t b = 0, e = role.size();
    while (b < e && std::isspace(static_cast<unsigned char>(role[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(role[e - 1]))) --e;
    std::string out = role.substr(b, e - b);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

namespace {

const json& require(const json& j, const char* key, const std::string& pointer) {
    if (!j.contains(key)) throw SchemaError("missing field at " + pointer + "/" + key);
    return j[key];
}

std::string require_string(const json& j, const char* key, const std::string& pointer) {
    const json& v = require(j, key, pointer);
    if (!v.is_string()) throw SchemaError("expected string at " + pointer + "/" + key);
    return v.get<std::string>();
}

double require_number(const json& j, const char* key, const std::string& pointer) {
    const json& v = require(j, key, pointer);
    if (!v.is_number()) throw SchemaError("expected number at " + pointer + "/" + key);
    return v.get<double>();
}

const json& require_array(const json& j, const char* key, const std::string& pointer) {
    const json& v = require(j, key, pointer);
    if (!v.is_array()) throw SchemaError("expected array at " + pointer + "/" + key);
    return v;
}

}  // namespace

void validate_dataset(Dataset& ds) {
    std::unordered_set<std::string> video_ids;
    ds.events_per_video = ds.videos.empty() ? 0 : ds.videos.front().events.size();
    for (const auto& video : ds.videos) {
        if (video.video_id.empty()) throw ValidationError("video with empty video_id");
        if (!video_ids.insert(video.video_id).second)
            throw ValidationError("duplicate video_id " + video.video_id);
        if (video.events.empty())
            throw ValidationError("video " + video.video_id + " has no events");
        if (video.events.size() != ds.events_per_video)
            throw ValidationError("video " + video.video_id + " has " + std::to_string(video.events.size()) +
                                  " events; dataset requires P=" + std::to_string(ds.events_per_video) +
                                  " uniformly");
        const EventAnnotation* prev = nullptr;
        for (const auto& ev : video.events) {
            const std::string where = "video " + video.video_id + " event " + ev.event_id;
            if (ev.event_id.empty()) throw ValidationError("video " + video.video_id + " has event with empty event_id");
            if (ev.verb.empty()) throw ValidationError(where + ": empty verb");
            if (!(ev.start_s < ev.end_s)) throw ValidationError(where + ": start_s must be < end_s");
            if (ev.frame_refs.empty()) throw ValidationError(where + ": no frame refs");
            std::unordered_set<std::string> role_names;
            for (const auto& rp : ev.roles) {
                if (rp.role.empty()) throw ValidationError(where + ": empty role name");
                if (rp.noun.empty()) throw ValidationError(where + ": empty noun for role " + rp.role);
                if (!role_names.insert(rp.role).second)
                    throw ValidationError(where + ": duplicate role " + rp.role);
            }
            if (prev && ev.start_s != prev->end_s)
                throw ValidationError(where + ": events must be contiguous (starts at " +
                                      std::to_string(ev.start_s) + ", previous ends at " +
                                      std::to_string(prev->end_s) + ")");
            prev = &ev;
        }
    }
    ds.verb_lexicon = build_verb_lexicon(ds);
}

std::map<std::string, std::vector<std::string>> build_verb_lexicon(const Dataset& ds) {
    std::map<std::string, std::map<std::string, size_t>> counts;
    for (const auto& video : ds.videos)
        for (const auto& ev : video.events)
            for (const auto& rp : ev.roles) counts[ev.verb][rp.role]++;
    std::map<std::string, std::vector<std::string>> out;
    for (const auto& [verb, role_counts] : counts) {
        std::vector<std::pair<std::string, size_t>> ordered(role_counts.begin(), role_counts.end());
        std::stable_sort(ordered.begin(), ordered.end(), [](const auto& a, const auto& b) {
            if (a.second != b.second) return a.second > b.second;
            return a.first < b.first;
        });
        auto& roles = out[verb];
        roles.reserve(ordered.size());
        for (const auto& [role, n] : ordered) roles.push_back(role);
    }
    return out;
}

Dataset parse_dataset_json(const std::string& text, const std::string& origin) {
    json root;
    try {
        root = json::parse(text);
    } catch (const json::exception& e) {
        throw SchemaError(origin + " is not valid JSON: " + e.what());
    }
    if (!root.is_object()) throw SchemaError("expected object at /");
    const json& ver = require(root, "figannot_version", "");
    if (!ver.is_number_integer() || ver.get<int>() != 1)
        throw SchemaError("unsupported figannot_version at /figannot_version");

    Dataset ds;
    ds.split_tag = require_string(root, "split", "");
    const json& videos = require_array(root, "videos", "");
    for (size_t vi = 0; vi < videos.size(); ++vi) {
        const std::string vptr = "/videos/" + std::to_string(vi);
        const json& jv = videos[vi];
        if (!jv.is_object()) throw SchemaError("expected object at " + vptr);
        VideoAnnotation video;
        video.video_id = require_string(jv, "video_id", vptr);
        video.movie_id = require_string(jv, "movie_id", vptr);
        const json& events = require_array(jv, "events", vptr);
        for (size_t ei = 0; ei < events.size(); ++ei) {
            const std::string eptr = vptr + "/events/" + std::to_string(ei);
            const json& je = events[ei];
            if (!je.is_object()) throw SchemaError("expected object at " + eptr);
            EventAnnotation ev;
            ev.event_id = require_string(je, "event_id", eptr);
            ev.verb = require_string(je, "verb", eptr);
            ev.start_s = require_number(je, "start_s", eptr);
            ev.end_s = require_number(je, "end_s", eptr);
            const json& roles = require_array(je, "roles", eptr);
            for (size_t ri = 0; ri < roles.size(); ++ri) {
                const std::string rptr = eptr + "/roles/" + std::to_string(ri);
                const json& jr = roles[ri];
                if (!jr.is_object()) throw SchemaError("expected object at " + rptr);
                RolePair rp;
                rp.role = normalize_role_name(require_string(jr, "role", rptr));
                rp.noun = require_string(jr, "noun", rptr);
                ev.roles.push_back(std::move(rp));
            }
            const json& frames = require_array(je, "frames", eptr);
            for (size_t fi = 0; fi < frames.size(); ++fi) {
                if (!frames[fi].is_string())
                    throw SchemaError("expected string at " + eptr + "/frames/" + std::to_string(fi));
                ev.frame_refs.push_back(FrameRef{frames[fi].get<std::string>()});
            }
            if (je.contains("natural_prompt")) {
                if (!je["natural_prompt"].is_string())
                    throw SchemaError("expected string at " + eptr + "/natural_prompt");
                ev.natural_prompt = je["natural_prompt"].get<std::string>();
            }
            video.events.push_back(std::move(ev));
        }
        ds.videos.push_back(std::move(video));
    }
    validate_dataset(ds);
    return ds;
}

Dataset load_dataset(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_dataset_json(ss.str(), path);
}

std::string dataset_to_json(const Dataset& ds) {
    json root;
    root["figannot_version"] = 1;
    root["split"] = ds.split_tag;
    json videos = json::array();
    for (const auto& video : ds.videos) {
        json jv;
        jv["video_id"] = video.video_id;
        jv["movie_id"] = video.movie_id;
        json events = json::array();
        for (const auto& ev : video.events) {
            json je;
            je["event_id"] = ev.event_id;
            je["start_s"] = ev.start_s;
            je["end_s"] = ev.end_s;
            je["verb"] = ev.verb;
            json roles = json::array();
            for (const auto& rp : ev.roles) roles.push_back(json{{"role", rp.role}, {"noun", rp.noun}});
            je["roles"] = std::move(roles);
            json frames = json::array();
            for (const auto& fr : ev.frame_refs) frames.push_back(fr.raw);
            je["frames"] = std::move(frames);
            if (ev.natural_prompt) je["natural_prompt"] = *ev.natural_prompt;
            events.push_back(std::move(je));
        }
        jv["events"] = std::move(events);
        videos.push_back(std::move(jv));
    }
    root["videos"] = std::move(videos);
    return root.dump(2);
}

void save_dataset(const Dataset& ds, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw FormatError("cannot write " + path);
    out << dataset_to_json(ds) << "\n";
}

bool datasets_equal(const Dataset& a, const Dataset& b) {
    if (a.split_tag != b.split_tag || a.videos.size() != b.videos.size()) return false;
    if (a.verb_lexicon != b.verb_lexicon) return false;
    for (size_t i = 0; i < a.videos.size(); ++i) {
        const auto& va = a.videos[i];
        const auto& vb = b.videos[i];
        if (va.video_id != vb.video_id || va.movie_id != vb.movie_id || va.events.size() != vb.events.size())
            return false;
        for (size_t j = 0; j < va.events.size(); ++j) {
            const auto& ea = va.events[j];
            const auto& eb = vb.events[j];
            if (ea.event_id != eb.event_id || ea.verb != eb.verb || ea.start_s != eb.start_s ||
                ea.end_s != eb.end_s || ea.natural_prompt != eb.natural_prompt)
                return false;
            if (ea.roles.size() != eb.roles.size() || ea.frame_refs.size() != eb.frame_refs.size()) return false;
            for (size_t k = 0; k < ea.roles.size(); ++k)
                if (ea.roles[k].role != eb.roles[k].role || ea.roles[k].noun != eb.roles[k].noun) return false;
            for (size_t k = 0; k < ea.frame_refs.size(); ++k)
                if (ea.frame_refs[k].raw != eb.frame_refs[k].raw) return false;
        }
    }
    return true;
}

}  // namespace figclip
