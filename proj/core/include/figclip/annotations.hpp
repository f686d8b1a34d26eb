#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace figclip {

struct RolePair {
    std::string role;  // lowercase-normalized on load
    std::string noun;
};

// A frame reference is either a file path or an "emb:<row>" handle into an
// EmbeddingMatrix; both resolve in the encoders module.
struct FrameRef {
    std::string raw;
    bool is_embedding_row() const { return raw.rfind("emb:", 0) == 0; }
    size_t embedding_row() const;  // throws ValidationError if not emb:<row>
};

struct EventAnnotation {
    std::string event_id;
    std::string verb;
    std::vector<RolePair> roles;  // annotation order, role names unique
    double start_s = 0.0;
    double end_s = 0.0;
    std::vector<FrameRef> frame_refs;
    std::optional<std::string> natural_prompt;  // pass-through, used only when prompt_style=natural
};

struct VideoAnnotation {
    std::string video_id;
    std::string movie_id;
    std::vector<EventAnnotation> events;  // length P, contiguous in time
};

struct Dataset {
    std::vector<VideoAnnotation> videos;
    // verb -> role names ordered by corpus frequency (desc), ties lexicographic.
    // Exactly the closure of (verb, role) pairs present in videos.
    std::map<std::string, std::vector<std::string>> verb_lexicon;
    std::string split_tag;
    size_t events_per_video = 0;  // P; uniform across videos

    size_t event_count() const;
    const EventAnnotation& event(size_t video_idx, size_t event_idx) const {
        return videos[video_idx].events[event_idx];
    }
};

// "direction", "manner", "scene": role names that survive verb replacement
// when building verb-role hard negatives.
bool is_common_role(const std::string& role);

std::string normalize_role_name(const std::string& role);

// Validates a fully constructed dataset and populates verb_lexicon and
// events_per_video. Throws ValidationError naming the offending video/event.
void validate_dataset(Dataset& ds);

// Parses and validates the figannot_version-1 JSON schema.
Dataset load_dataset(const std::string& path);
Dataset parse_dataset_json(const std::string& text, const std::string& origin = "<string>");

std::string dataset_to_json(const Dataset& ds);
void save_dataset(const Dataset& ds, const std::string& path);

// Recomputes the lexicon from events: roles per verb ordered by frequency
// descending, ties broken lexicographically.
std::map<std::string, std::vector<std::string>> build_verb_lexicon(const Dataset& ds);

bool datasets_equal(const Dataset& a, const Dataset& b);

}  // namespace figclip
