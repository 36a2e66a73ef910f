#pragma once

// Random claim streams and a slow, direct restatement of the four acceptance
// rules. The unit tests and the acceptance binary compare the rule engine with
// this on thousands of streams.

#include "codeccap/aggregate.hpp"

#include <algorithm>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

namespace codeccap::testing {

struct ClaimStream {
    std::vector<Claim> claims;
    AttributeLedger anchor_ledger;
    FrameTimes times;
};

inline Claim make_claim(std::size_t id, std::size_t pair, ClaimKind kind, std::string subject, std::string predicate,
                        std::string value) {
    Claim c;
    c.id = id;
    c.record_index = pair;
    c.pair = {pair, pair + 1};
    c.kind = kind;
    c.subject = std::move(subject);
    c.predicate = std::move(predicate);
    c.value = std::move(value);
    c.text = c.subject + " " + c.predicate + " " + c.value;
    c.sentence = c.text;
    return c;
}

/// Small vocabularies so groups, runs, conflicts and ties all occur often.
inline ClaimStream random_stream(std::mt19937_64& rng) {
    static const char* subjects[] = {"ball", "door", "lamp"};
    static const char* directions[] = {"left", "right", "up", "down", "clockwise"};
    static const char* states[] = {"open", "closed", "broken"};
    std::uniform_int_distribution<int> pairs_d(2, 12);
    const int pairs = pairs_d(rng);
    std::uniform_int_distribution<int> count_d(0, 18);
    std::uniform_int_distribution<int> pair_d(0, pairs - 1);
    std::uniform_int_distribution<int> subj_d(0, 2);
    std::uniform_int_distribution<int> dir_d(0, 4);
    std::uniform_int_distribution<int> state_d(0, 2);
    std::uniform_int_distribution<int> kind_d(0, 9);

    ClaimStream s;
    for (int i = 0; i <= pairs; ++i) s.times.push_back(10.0 + i * 0.5);
    for (int subj = 0; subj < 3; ++subj)
        if (kind_d(rng) < 5)
            s.anchor_ledger.set(subjects[subj], "state", {states[state_d(rng)], 10.0, LedgerOrigin::anchor});
    if (kind_d(rng) < 5) s.anchor_ledger.set("ball", "color", {"red", 10.0, LedgerOrigin::anchor});

    std::vector<Claim> raw;
    const int n = count_d(rng);
    for (int i = 0; i < n; ++i) {
        const std::size_t p = static_cast<std::size_t>(pair_d(rng));
        const std::string subj = subjects[subj_d(rng)];
        const int k = kind_d(rng);
        if (k < 4) {
            raw.push_back(make_claim(0, p, ClaimKind::motion, subj, "moves", directions[dir_d(rng)]));
            // runs are more interesting than scattered singles
            if (k < 2 && p + 1 < static_cast<std::size_t>(pairs)) {
                auto again = raw.back();
                again.pair = {p + 1, p + 2};
                again.record_index = p + 1;
                raw.push_back(again);
            }
        } else if (k < 6) {
            raw.push_back(make_claim(0, p, ClaimKind::event, subj, "state", states[state_d(rng)]));
        } else if (k < 7) {
            raw.push_back(make_claim(0, p, ClaimKind::attribute_update, subj, "color", k % 2 ? "blue" : "red"));
        } else if (k < 8) {
            raw.push_back(make_claim(0, p, ClaimKind::event, subj, "occurs", "flash"));
        } else {
            raw.push_back(make_claim(0, p, ClaimKind::observation, subj, "state", states[state_d(rng)]));
        }
    }
    std::stable_sort(raw.begin(), raw.end(), [](const Claim& a, const Claim& b) { return a.pair < b.pair; });
    for (std::size_t i = 0; i < raw.size(); ++i) raw[i].id = i;
    s.claims = std::move(raw);
    return s;
}

// --- oracle -----------------------------------------------------------------------

/// Maximal consecutive runs found by trying every interval.
inline std::vector<EvidenceItem> oracle_continuous(const std::vector<Claim>& claims, const FrameTimes& times) {
    std::vector<EvidenceItem> out;
    std::set<std::tuple<std::string, std::string, std::string>> keys;
    for (const auto& c : claims)
        if (c.kind == ClaimKind::motion) keys.insert({c.subject, c.predicate, c.value});
    const std::size_t pairs = times.size() - 1;
    for (const auto& key : keys) {
        auto has = [&](long p) {
            if (p < 0) return false;
            for (const auto& c : claims)
                if (c.kind == ClaimKind::motion && std::make_tuple(c.subject, c.predicate, c.value) == key &&
                    c.pair.first == static_cast<std::size_t>(p))
                    return true;
            return false;
        };
        for (std::size_t s = 0; s < pairs; ++s) {
            for (std::size_t e = s + 1; e < pairs; ++e) {
                bool all = true;
                for (std::size_t p = s; p <= e; ++p) all = all && has(static_cast<long>(p));
                if (!all || has(static_cast<long>(s) - 1) || has(static_cast<long>(e) + 1)) continue;
                EvidenceItem item;
                item.kind = EvidenceKind::continuous_change;
                std::tie(item.subject, item.predicate, item.value) = key;
                for (std::size_t p = s; p <= e; ++p) item.support_pairs.push_back(p);
                item.support_count = e - s + 1;
                item.start_s = times[s];
                item.end_s = times[e + 1];
                for (const auto& c : claims)
                    if (c.kind == ClaimKind::motion && std::make_tuple(c.subject, c.predicate, c.value) == key &&
                        c.pair.first >= s && c.pair.first <= e)
                        item.claim_ids.push_back(c.id);
                out.push_back(item);
            }
        }
    }
    return out;
}

/// Claim ids of accepted discrete claims, walking the stream in order.
inline std::set<std::size_t> oracle_discrete(const std::vector<Claim>& claims, const AttributeLedger& ledger) {
    auto is_change = [](const Claim& c) { return c.kind == ClaimKind::event || c.kind == ClaimKind::attribute_update; };
    std::vector<Claim> order;
    for (const auto& c : claims)
        if (is_change(c)) order.push_back(c);
    std::stable_sort(order.begin(), order.end(), [](const Claim& a, const Claim& b) {
        return a.pair.first != b.pair.first ? a.pair.first < b.pair.first : a.id < b.id;
    });
    std::set<std::size_t> accepted;
    for (std::size_t i = 0; i < order.size(); ++i) {
        const Claim& c = order[i];
        if (c.predicate == "occurs") {
            accepted.insert(c.id);
            continue;
        }
        // before-state: the anchor, then every earlier accepted change
        std::optional<std::string> before;
        if (auto e = ledger.get(c.subject, c.predicate)) before = e->value;
        for (std::size_t j = 0; j < i; ++j)
            if (accepted.count(order[j].id) && order[j].subject == c.subject && order[j].predicate == c.predicate)
                before = order[j].value;
        if (before && *before == c.value) continue;
        // after-state: a later observation of another value with no change
        // to the attribute in between
        bool contradicted = false;
        for (const auto& o : claims) {
            if (o.kind != ClaimKind::observation || o.subject != c.subject || o.predicate != c.predicate) continue;
            if (o.pair.first <= c.pair.first || o.value == c.value) continue;
            bool between = false;
            for (const auto& x : claims)
                if (is_change(x) && x.subject == c.subject && x.predicate == c.predicate &&
                    x.pair.first > c.pair.first && x.pair.first <= o.pair.first)
                    between = true;
            if (!between) contradicted = true;
        }
        if (!contradicted) accepted.insert(c.id);
    }
    return accepted;
}

inline bool oracle_conflict(const EvidenceItem& a, const EvidenceItem& b) {
    static const std::set<std::pair<std::string, std::string>> opposite{
        {"left", "right"}, {"right", "left"}, {"up", "down"}, {"down", "up"}, {"clockwise", "counterclockwise"},
        {"counterclockwise", "clockwise"}, {"in", "out"}, {"out", "in"}, {"forward", "backward"},
        {"backward", "forward"}, {"open", "closed"}, {"closed", "open"}, {"present", "absent"}, {"absent", "present"}};
    if (a.subject != b.subject || a.predicate != b.predicate) return false;
    const bool ca = a.kind == EvidenceKind::continuous_change;
    const bool cb = b.kind == EvidenceKind::continuous_change;
    if (ca != cb) return false;
    if (ca && !opposite.count({a.value, b.value})) return false;
    if (!ca && (a.predicate == "occurs" || a.value == b.value)) return false;
    return a.start_s < b.end_s && b.start_s < a.end_s;
}

/// Survivors: items with strictly more support than every conflicting item.
inline std::vector<std::size_t> oracle_survivors(const std::vector<EvidenceItem>& items) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < items.size(); ++i) {
        bool wins = true;
        for (std::size_t j = 0; j < items.size(); ++j)
            if (i != j && oracle_conflict(items[i], items[j]) && items[j].support_count >= items[i].support_count)
                wins = false;
        if (wins) out.push_back(i);
    }
    return out;
}

inline std::map<std::pair<std::string, std::string>, std::string> oracle_ledger(
    const AttributeLedger& anchor, const std::vector<EvidenceItem>& accepted) {
    std::map<std::pair<std::string, std::string>, std::string> out;
    for (const auto& [s, attrs] : anchor.entries)
        for (const auto& [a, e] : attrs) out[{s, a}] = e.value;
    std::vector<const EvidenceItem*> ups;
    for (const auto& e : accepted)
        if (e.kind != EvidenceKind::continuous_change && e.predicate != "occurs") ups.push_back(&e);
    std::sort(ups.begin(), ups.end(), [](const EvidenceItem* a, const EvidenceItem* b) {
        return std::make_pair(a->support_pairs.front(), a->claim_ids.front()) <
               std::make_pair(b->support_pairs.front(), b->claim_ids.front());
    });
    for (const auto* e : ups) out[{e->subject, e->predicate}] = e->value;
    return out;
}

inline std::vector<std::vector<std::size_t>> id_sets(const std::vector<EvidenceItem>& items) {
    std::vector<std::vector<std::size_t>> out;
    for (const auto& e : items) out.push_back(e.claim_ids);
    std::sort(out.begin(), out.end());
    return out;
}

/// Runs the engine and the oracle on one stream. Returns an empty string when
/// they agree, otherwise a description of the first difference. `rng` drives
/// the permutation check.
inline std::string compare_with_oracle(const ClaimStream& s, std::mt19937_64& rng) {
    std::ostringstream why;
    // rule 1
    auto cont = accept_continuous(s.claims, s.times);
    auto want_cont = oracle_continuous(s.claims, s.times);
    {
        auto key = [](const EvidenceItem& e) {
            return std::make_tuple(e.subject, e.predicate, e.value, e.support_pairs, e.support_count, e.start_s,
                                   e.end_s, e.claim_ids);
        };
        std::vector<decltype(key(want_cont[0]))> got_k, want_k;
        for (const auto& e : cont.accepted) got_k.push_back(key(e));
        for (const auto& e : want_cont) want_k.push_back(key(e));
        std::sort(got_k.begin(), got_k.end());
        std::sort(want_k.begin(), want_k.end());
        if (got_k != want_k) return "continuous runs differ";
    }
    // rule 2
    auto disc = accept_discrete(s.claims, s.anchor_ledger, s.times);
    std::set<std::size_t> got_disc;
    for (const auto& e : disc.accepted) got_disc.insert(e.claim_ids.front());
    if (got_disc != oracle_discrete(s.claims, s.anchor_ledger)) return "discrete acceptance differs";

    // rule 3
    std::vector<EvidenceItem> cands = cont.accepted;
    cands.insert(cands.end(), disc.accepted.begin(), disc.accepted.end());
    auto resolved = resolve_contradictions(cands);
    std::vector<EvidenceItem> want_kept;
    for (auto i : oracle_survivors(cands)) want_kept.push_back(cands[i]);
    if (id_sets(resolved.accepted) != id_sets(want_kept)) return "contradiction resolution differs";
    auto shuffled = cands;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    if (id_sets(resolve_contradictions(shuffled).accepted) != id_sets(resolved.accepted))
        return "resolution depends on input order";

    // rule 4
    auto ledger = apply_attribute_locking(s.anchor_ledger, resolved.accepted);
    std::map<std::pair<std::string, std::string>, std::string> got_ledger;
    for (const auto& [subj, attrs] : ledger.entries)
        for (const auto& [a, e] : attrs) got_ledger[{subj, a}] = e.value;
    if (got_ledger != oracle_ledger(s.anchor_ledger, resolved.accepted)) return "attribute ledger differs";
    for (const auto& [subj, attrs] : s.anchor_ledger.entries)
        for (const auto& [a, e] : attrs) {
            bool touched = std::any_of(resolved.accepted.begin(), resolved.accepted.end(), [&](const EvidenceItem& x) {
                return !x.continuous() && x.subject == subj && x.predicate == a;
            });
            if (!touched && ledger.get(subj, a) != e) return "untouched anchor attribute changed";
        }

    // conservation: every claim ends up accepted or omitted exactly once
    std::map<std::size_t, int> seen;
    for (const auto& e : resolved.accepted)
        for (auto id : e.claim_ids) ++seen[id];
    for (const auto* om : {&cont.omissions, &disc.omissions, &resolved.omissions})
        for (const auto& o : *om)
            for (auto id : o.claim_ids) ++seen[id];
    for (const auto& c : s.claims) {
        if (seen[c.id] != 1) {
            why << "claim " << c.id << " accounted " << seen[c.id] << " times";
            return why.str();
        }
    }
    return {};
}

} // namespace codeccap::testing
