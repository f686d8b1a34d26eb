#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "figclip/prompting.hpp"

namespace figclip {

// A verb with its role names in lexicon order; the sampling pool entry for
// verb-role hard negatives.
struct VerbEntry {
    std::string verb;
    std::vector<std::string> roles;
};

// Replaces the verb and renames the event's non-common roles positionally to
// the replacement verb's non-common role names (lexicon order). Nouns are
// untouched; common roles (direction/manner/scene) keep their names; surplus
// non-common roles on either side are dropped/omitted. Every change lands in
// `log` when given.
EventAnnotation substitute_verb(const EventAnnotation& event, const VerbEntry& replacement,
                                std::vector<Perturbation>* log = nullptr);

// Replaces the noun of each (role -> new noun) entry; verb and role names are
// untouched.
EventAnnotation apply_noun_swaps(const EventAnnotation& event,
                                 const std::vector<std::pair<std::string, std::string>>& swaps,
                                 std::vector<Perturbation>* log = nullptr);

// n verb-role hard negatives. Replacement verbs are drawn uniformly without
// replacement from the batch pool (excluding the event's own verb), cycling
// with fresh shuffles when n exceeds the pool. Throws PoolExhausted when no
// usable replacement exists.
std::vector<PromptRecord> make_verb_role_negatives(const EventAnnotation& event,
                                                   const std::vector<VerbEntry>& batch_verbs, size_t n,
                                                   uint64_t rng_seed);

// n role-noun hard negatives: ceil(swap_fraction * |roles|) roles (never all)
// get their noun replaced by a different noun from the per-role pool, falling
// back to the any-role pool. Single-role events are rejected with
// ValidationError ("some, not all" is unsatisfiable); an empty distinct pool
// raises PoolExhausted.
std::vector<PromptRecord> make_role_noun_negatives(const EventAnnotation& event,
                                                   const std::map<std::string, std::vector<std::string>>& noun_pool,
                                                   size_t n, double swap_fraction, uint64_t rng_seed);

// Dataset-wide pools, used by the gen-negatives CLI and by static
// pregeneration in the trainer.
std::vector<VerbEntry> verb_pool_from_lexicon(const std::map<std::string, std::vector<std::string>>& lexicon);
std::map<std::string, std::vector<std::string>> noun_pool_from_dataset(const Dataset& ds);

}  // namespace figclip
