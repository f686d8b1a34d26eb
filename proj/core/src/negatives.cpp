#include "figclip/negatives.hpp"

#include <algorithm>

#include "figclip/errors.hpp"
#include "figclip/rng.hpp"

namespace figclip {

EventAnnotation substitute_verb(const EventAnnotation& event, const VerbEntry& replacement,
                                std::vector<Perturbation>* log) {
    EventAnnotation out = event;
    out.roles.clear();
    if (log) log->push_back({"verb", event.verb, replacement.verb});
    out.verb = replacement.verb;

    std::vector<std::string> repl_noncommon;
    for (const auto& r : replacement.roles)
        if (!is_common_role(r)) repl_noncommon.push_back(r);

    size_t j = 0;  // index into the replacement's non-common roles
    for (const auto& rp : event.roles) {
        if (is_common_role(rp.role)) {
            out.roles.push_back(rp);
            continue;
        }
        if (j < repl_noncommon.size()) {
            const std::string& new_role = repl_noncommon[j++];
            if (log && new_role != rp.role) log->push_back({"role:" + rp.role, rp.role, new_role});
            out.roles.push_back({new_role, rp.noun});
        } else {
            if (log) log->push_back({"role:" + rp.role, rp.role, ""});
        }
    }
    return out;
}

EventAnnotation apply_noun_swaps(const EventAnnotation& event,
                                 const std::vector<std::pair<std::string, std::string>>& swaps,
                                 std::vector<Perturbation>* log) {
    EventAnnotation out = event;
    for (const auto& [role, new_noun] : swaps) {
        bool found = false;
        for (auto& rp : out.roles) {
            if (rp.role != role) continue;
            if (log) log->push_back({"noun:" + role, rp.noun, new_noun});
            rp.noun = new_noun;
            found = true;
            break;
        }
        if (!found) throw ValidationError("event " + event.event_id + " has no role " + role);
    }
    return out;
}

std::vector<PromptRecord> make_verb_role_negatives(const EventAnnotation& event,
                                                   const std::vector<VerbEntry>& batch_verbs, size_t n,
                                                   uint64_t rng_seed) {
    std::vector<PromptRecord> out;
    if (n == 0) return out;

    // Dedupe by verb, drop the event's own verb and candidates whose
    // substitution would leave no roles to render.
    std::vector<VerbEntry> pool;
    for (const auto& entry : batch_verbs) {
        if (entry.verb == event.verb) continue;
        bool seen = false;
        for (const auto& p : pool) seen = seen || p.verb == entry.verb;
        if (seen) continue;
        if (substitute_verb(event, entry).roles.empty()) continue;
        pool.push_back(entry);
    }
    if (pool.empty())
        throw PoolExhausted("no replacement verb available for event " + event.event_id + " (verb '" +
                            event.verb + "')");

    Rng rng(rng_seed);
    std::vector<size_t> order;
    size_t cursor = 0;
    for (size_t i = 0; i < n; ++i) {
        if (cursor == order.size()) {
            order = rng.permutation(pool.size());
            cursor = 0;
        }
        const VerbEntry& repl = pool[order[cursor++]];
        PromptRecord r;
        r.kind = PromptKind::hn_verb_role;
        r.source_event_id = event.event_id;
        EventAnnotation hn = substitute_verb(event, repl, &r.perturbation_log);
        r.text = render_template(hn.verb, hn.roles);
        out.push_back(std::move(r));
    }
    return out;
}

std::vector<PromptRecord> make_role_noun_negatives(const EventAnnotation& event,
                                                   const std::map<std::string, std::vector<std::string>>& noun_pool,
                                                   size_t n, double swap_fraction, uint64_t rng_seed) {
    if (!(swap_fraction > 0.0 && swap_fraction < 1.0))
        throw ValidationError("swap_fraction must lie strictly between 0 and 1");
    std::vector<PromptRecord> out;
    if (n == 0) return out;
    if (event.roles.size() < 2)
        throw ValidationError("event " + event.event_id +
                              ": role-noun negatives need at least two roles (some, not all)");

    auto distinct = [](const std::vector<std::string>& v, const std::string& exclude) {
        std::vector<std::string> d;
        for (const auto& s : v) {
            if (s == exclude) continue;
            if (std::find(d.begin(), d.end(), s) == d.end()) d.push_back(s);
        }
        return d;
    };

    std::vector<std::string> any_pool;
    for (const auto& [role, nouns] : noun_pool)
        for (const auto& noun : nouns) any_pool.push_back(noun);

    size_t k = static_cast<size_t>(std::ceil(swap_fraction * static_cast<double>(event.roles.size())));
    k = std::min(k, event.roles.size() - 1);
    k = std::max<size_t>(k, 1);

    Rng rng(rng_seed);
    for (size_t rec = 0; rec < n; ++rec) {
        std::vector<size_t> idx = rng.permutation(event.roles.size());
        idx.resize(k);
        std::sort(idx.begin(), idx.end());

        PromptRecord r;
        r.kind = PromptKind::hn_role_noun;
        r.source_event_id = event.event_id;
        std::vector<std::pair<std::string, std::string>> swaps;
        for (size_t i : idx) {
            const RolePair& rp = event.roles[i];
            std::vector<std::string> cands;
            auto it = noun_pool.find(rp.role);
            if (it != noun_pool.end()) cands = distinct(it->second, rp.noun);
            if (cands.empty()) cands = distinct(any_pool, rp.noun);
            if (cands.empty())
                throw PoolExhausted("no distinct noun anywhere in the pool for event " + event.event_id);
            swaps.emplace_back(rp.role, cands[rng.uniform_below(cands.size())]);
        }
        EventAnnotation hn = apply_noun_swaps(event, swaps, &r.perturbation_log);
        r.text = render_template(hn.verb, hn.roles);
        out.push_back(std::move(r));
    }
    return out;
}

std::vector<VerbEntry> verb_pool_from_lexicon(const std::map<std::string, std::vector<std::string>>& lexicon) {
    std::vector<VerbEntry> out;
    out.reserve(lexicon.size());
    for (const auto& [verb, roles] : lexicon) out.push_back({verb, roles});
    return out;
}

std::map<std::string, std::vector<std::string>> noun_pool_from_dataset(const Dataset& ds) {
    std::map<std::string, std::vector<std::string>> pool;
    for (const auto& video : ds.videos)
        for (const auto& ev : video.events)
            for (const auto& rp : ev.roles) pool[rp.role].push_back(rp.noun);
    return pool;
}

}  // namespace figclip
