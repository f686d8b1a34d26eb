#pragma once

#include <set>
#include <string>
#include <vector>

#include "figclip/annotations.hpp"

namespace figclip {

enum class PromptKind { positive, hn_verb_role, hn_role_noun, action_only };

std::string prompt_kind_name(PromptKind k);
PromptKind prompt_kind_from_name(const std::string& s);

struct Perturbation {
    std::string slot;  // "verb", "role:<old role>", "noun:<role>"
    std::string old_value;
    std::string new_value;
};

struct PromptRecord {
    std::string text;
    PromptKind kind = PromptKind::positive;
    std::string source_event_id;
    std::vector<Perturbation> perturbation_log;  // empty iff positive/action_only
};

// Renders the fixed event template, byte-stable:
//   In this photo, the action is <verb> where, the <r1> is <n1>,
//   <r2> is <n2>, ..., and <rn> of the event is <nn>.
// Single-role events drop the "and ... of the event" clause. Throws
// TemplateError for events with zero roles.
PromptRecord render_event_prompt(const EventAnnotation& event);

// "In this photo, the action is <verb>."
PromptRecord render_action_prompt(const EventAnnotation& event);

// Renders an already-perturbed role list with the same grammar; used by the
// hard-negative generators.
std::string render_template(const std::string& verb, const std::vector<RolePair>& roles);

struct ParsedPrompt {
    std::string verb;
    std::vector<RolePair> roles;
};

// Inverse of render_template. Needs the set of known role names to split
// nouns from role markers; exact recovery holds for nouns that do not embed
// ", <known role> is" patterns.
ParsedPrompt parse_event_prompt(const std::string& text, const std::set<std::string>& known_roles);

std::string prompt_record_to_json(const PromptRecord& r);
PromptRecord prompt_record_from_json(const std::string& line);

}  // namespace figclip
