#include "figclip/prompting.hpp"

#include <algorithm>

#include "json.hpp"

#include "figclip/errors.hpp"

namespace figclip {

using nlohmann::json;

std::string prompt_kind_name(PromptKind k) {
    switch (k) {
        case PromptKind::positive: return "positive";
        case PromptKind::hn_verb_role: return "hn_verb_role";
        case PromptKind::hn_role_noun: return "hn_role_noun";
        case PromptKind::action_only: return "action_only";
    }
    return "positive";
}

PromptKind prompt_kind_from_name(const std::string& s) {
    if (s == "positive") return PromptKind::positive;
    if (s == "hn_verb_role") return PromptKind::hn_verb_role;
    if (s == "hn_role_noun") return PromptKind::hn_role_noun;
    if (s == "action_only") return PromptKind::action_only;
    throw FormatError("unknown prompt kind: " + s);
}

std::string render_template(const std::string& verb, const std::vector<RolePair>& roles) {
    if (roles.empty()) throw TemplateError("event with verb '" + verb + "' has zero roles");
    std::string out = "In this photo, the action is " + verb + " where, the " + roles[0].role + " is " +
                      roles[0].noun;
    for (size_t i = 1; i + 1 < roles.size(); ++i) out += ", " + roles[i].role + " is " + roles[i].noun;
    if (roles.size() > 1) {
        const RolePair& last = roles.back();
        out += ", and " + last.role + " of the event is " + last.noun;
    }
    out += ".";
    return out;
}

PromptRecord render_event_prompt(const EventAnnotation& event) {
    PromptRecord r;
    r.text = render_template(event.verb, event.roles);
    r.kind = PromptKind::positive;
    r.source_event_id = event.event_id;
    return r;
}

PromptRecord render_action_prompt(const EventAnnotation& event) {
    PromptRecord r;
    r.text = "In this photo, the action is " + event.verb + ".";
    r.kind = PromptKind::action_only;
    r.source_event_id = event.event_id;
    return r;
}

namespace {

// Longest known role r such that s starts with r + sep; returns role length or 0.
size_t match_role(const std::string& s, size_t pos, const std::set<std::string>& known, const std::string& sep) {
    size_t best = 0;
    for (const auto& role : known) {
        if (role.size() <= best) continue;
        if (s.compare(pos, role.size(), role) != 0) continue;
        if (s.compare(pos + role.size(), sep.size(), sep) != 0) continue;
        best = role.size();
    }
    return best;
}

}  // namespace

ParsedPrompt parse_event_prompt(const std::string& text, const std::set<std::string>& known_roles) {
    static const std::string prefix = "In this photo, the action is ";
    if (text.rfind(prefix, 0) != 0 || text.empty() || text.back() != '.')
        throw FormatError("text does not match the event template: " + text);
    const std::string body = text.substr(prefix.size(), text.size() - prefix.size() - 1);

    static const std::string where_marker = " where, the ";
    const size_t wpos = body.find(where_marker);
    ParsedPrompt out;
    if (wpos == std::string::npos) {
        out.verb = body;  // action-only prompt
        return out;
    }
    out.verb = body.substr(0, wpos);
    const std::string rest = body.substr(wpos + where_marker.size());

    static const std::string is_sep = " is ";
    static const std::string final_sep = " of the event is ";

    size_t role_len = match_role(rest, 0, known_roles, is_sep);
    if (role_len == 0) throw FormatError("no known role at start of: " + rest);
    std::string cur_role = rest.substr(0, role_len);
    size_t noun_start = role_len + is_sep.size();

    size_t i = noun_start;
    while (true) {
        size_t comma = rest.find(", ", i);
        if (comma == std::string::npos) break;
        size_t after = comma + 2;
        size_t flen = 0;
        bool is_final = false;
        if (rest.compare(after, 4, "and ") == 0) {
            flen = match_role(rest, after + 4, known_roles, final_sep);
            if (flen > 0) is_final = true;
        }
        if (!is_final) flen = match_role(rest, after, known_roles, is_sep);
        if (flen == 0) {
            i = comma + 2;
            continue;
        }
        out.roles.push_back({cur_role, rest.substr(noun_start, comma - noun_start)});
        if (is_final) {
            cur_role = rest.substr(after + 4, flen);
            noun_start = after + 4 + flen + final_sep.size();
        } else {
            cur_role = rest.substr(after, flen);
            noun_start = after + flen + is_sep.size();
        }
        i = noun_start;
    }
    out.roles.push_back({cur_role, rest.substr(noun_start)});
    return out;
}

std::string prompt_record_to_json(const PromptRecord& r) {
    json j;
    j["text"] = r.text;
    j["kind"] = prompt_kind_name(r.kind);
    j["source_event_id"] = r.source_event_id;
    json log = json::array();
    for (const auto& p : r.perturbation_log)
        log.push_back(json{{"slot", p.slot}, {"old", p.old_value}, {"new", p.new_value}});
    j["perturbation_log"] = std::move(log);
    return j.dump();
}

PromptRecord prompt_record_from_json(const std::string& line) {
    json j;
    try {
        j = json::parse(line);
    } catch (const json::exception& e) {
        throw FormatError(std::string("bad prompt record: ") + e.what());
    }
    PromptRecord r;
    r.text = j.at("text").get<std::string>();
    r.kind = prompt_kind_from_name(j.at("kind").get<std::string>());
    r.source_event_id = j.at("source_event_id").get<std::string>();
    for (const auto& p : j.at("perturbation_log"))
        r.perturbation_log.push_back({p.at("slot").get<std::string>(), p.at("old").get<std::string>(),
                                      p.at("new").get<std::string>()});
    return r;
}

}  // namespace figclip
