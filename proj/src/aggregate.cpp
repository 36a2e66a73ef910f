#include "codeccap/aggregate.hpp"

#include "codeccap/anchor_residual.hpp"
#include "codeccap/error.hpp"
#include "codeccap/json_io.hpp"
#include "codeccap/prompts.hpp"
#include "text_util.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <regex>
#include <set>
#include <tuple>

namespace codeccap {

using json_io::Json;

std::string_view to_string(ClaimKind kind) {
    switch (kind) {
    case ClaimKind::motion: return "motion";
    case ClaimKind::event: return "event";
    case ClaimKind::attribute_update: return "attribute_update";
    case ClaimKind::observation: return "observation";
    }
    return "event";
}

ClaimKind claim_kind_from_string(std::string_view name) {
    if (name == "motion") return ClaimKind::motion;
    if (name == "event") return ClaimKind::event;
    if (name == "attribute_update") return ClaimKind::attribute_update;
    if (name == "observation") return ClaimKind::observation;
    throw InputError("unknown claim kind '" + std::string(name) + "'");
}

std::string_view to_string(ExtractorMode mode) {
    return mode == ExtractorMode::backend ? "backend" : "deterministic";
}

std::string_view to_string(EvidenceKind kind) {
    switch (kind) {
    case EvidenceKind::continuous_change: return "continuous_change";
    case EvidenceKind::discrete_event: return "discrete_event";
    case EvidenceKind::attribute_update: return "attribute_update";
    }
    return "discrete_event";
}

std::string_view to_string(SynthesisMode mode) {
    return mode == SynthesisMode::backend ? "backend" : "template";
}

SynthesisMode synthesis_mode_from_string(std::string_view name) {
    if (name == "template") return SynthesisMode::template_mode;
    if (name == "backend") return SynthesisMode::backend;
    throw ConfigError("synthesis mode must be template or backend, got '" + std::string(name) + "'");
}

// --- extraction ---------------------------------------------------------------

namespace {

constexpr auto icase = std::regex::icase | std::regex::ECMAScript;

const std::set<std::string>& clause_verbs() {
    static const std::set<std::string> v{
        "adds",   "removes",    "turns",   "moves",   "slides",  "shifts",  "drifts",    "travels", "walks",
        "runs",   "goes",       "rotates", "spins",   "zooms",   "pans",    "scrolls",   "tilts",   "rises",
        "falls",  "changes",    "switches", "becomes", "appears", "disappears", "opens", "closes",  "shatters",
        "breaks", "enters",     "exits",   "leaves",  "lights",  "stops",   "starts",    "cuts",    "shows",
        "hides",  "is",         "are",     "sits",    "remains", "stays",   "explodes",  "jumps",   "flashes",
        "fades",  "returns",    "gains",   "loses",   "floats",  "stands",  "lies"};
    return v;
}

std::vector<std::string> words_of(std::string_view s) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            if (!cur.empty()) out.push_back(std::move(cur)), cur.clear();
        } else {
            cur += c;
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

std::string strip_punct(std::string s) {
    auto is_p = [](char c) { return c == '.' || c == ',' || c == ';' || c == ':' || c == '!' || c == '?' || c == '"'; };
    while (!s.empty() && is_p(s.back())) s.pop_back();
    std::size_t b = 0;
    while (b < s.size() && s[b] == '"') ++b;
    return s.substr(b);
}

// Lowercase noun phrase without leading article or trailing punctuation.
std::string norm_np(std::string_view s) {
    auto w = words_of(text::lower(s));
    std::size_t b = 0;
    if (!w.empty() && (w[0] == "the" || w[0] == "a" || w[0] == "an")) b = 1;
    std::string out;
    for (std::size_t i = b; i < w.size(); ++i) {
        if (!out.empty()) out += ' ';
        out += w[i];
    }
    return strip_punct(out);
}

bool starts_clause(std::string_view rest) {
    auto w = words_of(text::lower(rest));
    if (w.empty()) return false;
    if (clause_verbs().count(strip_punct(w[0]))) return true;
    if (w[0] == "the" || w[0] == "a" || w[0] == "an") {
        for (std::size_t i = 1; i < w.size() && i <= 4; ++i)
            if (clause_verbs().count(strip_punct(w[i]))) return true;
    }
    return false;
}

bool is_sentence_end(std::string_view text, std::size_t i) {
    const char c = text[i];
    if (c != '.' && c != '!' && c != '?') return false;
    if (i + 1 < text.size() && !std::isspace(static_cast<unsigned char>(text[i + 1])) && text[i + 1] != '"')
        return false;
    if (c == '.') {
        // Initials ("T. McCloud") and dotted abbreviations ("U.S.") do not end a sentence.
        std::size_t b = i;
        while (b > 0 && !std::isspace(static_cast<unsigned char>(text[b - 1]))) --b;
        auto word = text.substr(b, i - b);
        if (word.size() == 1 && std::isupper(static_cast<unsigned char>(word[0]))) return false;
        if (word.find('.') != std::string_view::npos) return false;
        if (word == "Mr" || word == "Mrs" || word == "Dr" || word == "St" || word == "Ms") return false;
    }
    std::size_t j = i + 1;
    while (j < text.size() && (std::isspace(static_cast<unsigned char>(text[j])) || text[j] == '"')) ++j;
    return j >= text.size() || !std::islower(static_cast<unsigned char>(text[j]));
}

std::vector<std::string> split_sentences(std::string_view text) {
    std::vector<std::string> out;
    std::size_t start = 0;
    for (std::size_t i = 0; i < text.size(); ++i) {
        if (!is_sentence_end(text, i)) continue;
        std::size_t end = i + 1;
        if (end < text.size() && text[end] == '"') ++end;
        auto s = text::trim(text.substr(start, end - start));
        if (!s.empty()) out.emplace_back(s);
        start = end;
    }
    auto tail = text::trim(text.substr(std::min(start, text.size())));
    if (!tail.empty()) out.emplace_back(tail);
    return out;
}

std::vector<std::string> split_clauses(std::string_view sentence) {
    std::string s(sentence);
    while (!s.empty() && (s.back() == '.' || s.back() == '!' || s.back() == '?')) s.pop_back();
    static const std::regex sep(R"((,\s*and\s+then\s+|,\s*then\s+|;\s*|\s+and\s+then\s+|,\s*and\s+|\s+and\s+|\s+then\s+))",
                                icase);
    std::vector<std::string> out;
    std::size_t start = 0;
    auto begin = std::sregex_iterator(s.begin(), s.end(), sep);
    for (auto it = begin; it != std::sregex_iterator(); ++it) {
        const auto pos = static_cast<std::size_t>(it->position());
        const auto len = static_cast<std::size_t>(it->length());
        const std::string m = text::lower(it->str());
        const bool is_then = m.find("then") != std::string::npos;
        const bool is_semi = m.find(';') != std::string::npos;
        const std::string rest = s.substr(pos + len);
        if (!is_then && !is_semi && !starts_clause(rest)) continue;
        if (is_then && !starts_clause(rest) && text::lower(rest).rfind("to ", 0) != 0) continue;
        out.emplace_back(text::trim(std::string_view(s).substr(start, pos - start)));
        start = pos + len;
    }
    out.emplace_back(text::trim(std::string_view(s).substr(start)));
    out.erase(std::remove_if(out.begin(), out.end(), [](const std::string& c) { return c.empty(); }), out.end());
    return out;
}

const std::set<std::string>& color_words() {
    static const std::set<std::string> c{"red",    "green", "blue", "yellow", "orange", "purple", "pink",
                                         "black",  "white", "gray", "grey",   "brown",  "silver", "gold",
                                         "cyan",   "magenta", "violet"};
    return c;
}

// Attribute a value belongs to, and the value in canonical form.
std::pair<std::string, std::string> classify_value(const std::string& value, const std::string& fallback) {
    if (color_words().count(value)) return {"color", value};
    if (value == "on" || value == "off" || value == "lit") return {"power", value == "lit" ? "on" : value};
    if (value == "visible" || value == "present" || value == "shown") return {"presence", "present"};
    if (value == "gone" || value == "absent" || value == "missing" || value == "hidden") return {"presence", "absent"};
    static const std::set<std::string> states{"intact", "shattered", "broken", "open", "closed", "exploded",
                                              "stopped", "moving", "empty", "full", "blank"};
    if (states.count(value)) return {"state", value};
    return {fallback, value};
}

std::string canonical_motion_verb(const std::string& v) {
    if (v == "rotates" || v == "spins" || v == "turns") return "rotates";
    if (v == "zooms" || v == "pans" || v == "scrolls" || v == "tilts") return v;
    return "moves";
}

std::string canonical_direction(std::string d) {
    d = text::lower(d);
    if (d == "upward" || d == "upwards") return "up";
    if (d == "downward" || d == "downwards") return "down";
    if (d == "counter-clockwise" || d == "anticlockwise") return "counterclockwise";
    if (d == "forwards") return "forward";
    if (d == "backwards") return "backward";
    return d;
}

bool is_pronoun(const std::string& s) { return s.empty() || s == "it" || s == "they" || s == "he" || s == "she"; }

struct ClauseResult {
    ClaimKind kind;
    std::string subject;
    std::string predicate;
    std::string value;
};

ClauseResult parse_clause(const std::string& clause, const std::string& prev_subject, const std::string& on_subject) {
    static const std::regex cut_re(R"(^(?:(?:the\s+)?(?:camera|video|view|shot|scene)\s+)?cuts?\s+(?:back\s+)?to\s+(.+)$)",
                                   icase);
    static const std::regex motion_re(
        R"(^(.*?)\s*\b(moves|slides|shifts|drifts|travels|walks|runs|goes|floats|jumps|rises|falls|rotates|spins|turns|zooms|pans|scrolls|tilts)\s+(?:(?:to|toward|towards|into)\s+(?:the\s+)?)?(upper-left|upper-center|upper-right|middle-left|middle-right|lower-left|lower-center|lower-right|center|left|right|upwards|upward|up|downwards|downward|down|counter-clockwise|counterclockwise|anticlockwise|clockwise|forwards|forward|backwards|backward|in|out)\b.*$)",
        icase);
    static const std::regex event_re(
        R"(^(.*?)\s*\b(shatters|breaks|opens|closes|disappears|appears|enters|exits|leaves|explodes|lights up|turns on|turns off|stops|starts)\b.*$)",
        icase);
    static const std::regex change_re(R"(^(.+?)\s+(?:changes|switches)\s+(?:from\s+.+?\s+)?to\s+(.+)$)", icase);
    static const std::regex become_re(
        R"(^(.+?)\s+(?:becomes|is now|turns into|is replaced by|gets replaced by)\s+(.+)$)", icase);
    static const std::regex turns_re(R"(^(.*?)\s*\bturns\s+(.+)$)", icase);
    static const std::regex add_re(R"(^(.*?)\s*\b(adds|removes|shows|hides|gains|loses)\s+(.+)$)", icase);
    static const std::regex obs_re(
        R"(^(.+?)\s+(?:is|are|sits|stays|remains|stands|lies|looks)\s+(?:still\s+)?(.+)$)", icase);

    auto subject_or = [&](const std::string& raw) {
        auto s = norm_np(raw);
        if (!is_pronoun(s)) return s;
        return prev_subject.empty() ? std::string("scene") : prev_subject;
    };

    std::smatch m;
    if (std::regex_match(clause, m, cut_re)) return {ClaimKind::attribute_update, "shot", "view", norm_np(m[1].str())};
    if (std::regex_match(clause, m, motion_re)) {
        const auto verb = text::lower(m[2].str());
        return {ClaimKind::motion, subject_or(m[1].str()), canonical_motion_verb(verb),
                canonical_direction(m[3].str())};
    }
    if (std::regex_match(clause, m, event_re)) {
        const auto verb = text::lower(m[2].str());
        static const std::map<std::string, std::pair<std::string, std::string>> table{
            {"shatters", {"state", "shattered"}}, {"breaks", {"state", "broken"}},   {"opens", {"state", "open"}},
            {"closes", {"state", "closed"}},      {"appears", {"presence", "present"}}, {"enters", {"presence", "present"}},
            {"disappears", {"presence", "absent"}}, {"exits", {"presence", "absent"}}, {"leaves", {"presence", "absent"}},
            {"explodes", {"state", "exploded"}},  {"lights up", {"power", "on"}},    {"turns on", {"power", "on"}},
            {"turns off", {"power", "off"}},      {"stops", {"state", "stopped"}},   {"starts", {"state", "moving"}}};
        const auto& [attr, val] = table.at(verb);
        return {ClaimKind::event, subject_or(m[1].str()), attr, val};
    }
    if (std::regex_match(clause, m, change_re) || std::regex_match(clause, m, become_re)) {
        auto value = norm_np(m[2].str());
        auto [attr, v] = classify_value(value, "content");
        return {ClaimKind::attribute_update, subject_or(m[1].str()), attr, v};
    }
    if (std::regex_match(clause, m, turns_re)) {
        auto rest = words_of(m[2].str());
        auto value = norm_np(rest.back());
        std::string subject;
        if (rest.size() >= 2) {
            std::string np;
            for (std::size_t i = 0; i + 1 < rest.size(); ++i) np += (np.empty() ? "" : " ") + rest[i];
            subject = norm_np(np);
        } else {
            subject = subject_or(m[1].str());
        }
        auto [attr, v] = classify_value(value, "state");
        return {ClaimKind::attribute_update, subject, attr, v};
    }
    if (std::regex_match(clause, m, add_re)) {
        const auto verb = text::lower(m[2].str());
        const bool present = verb == "adds" || verb == "shows" || verb == "gains";
        std::string subject = norm_np(m[1].str());
        if (is_pronoun(subject)) subject = !on_subject.empty() ? on_subject : (prev_subject.empty() ? "scene" : prev_subject);
        return {ClaimKind::event, subject, norm_np(m[3].str()), present ? "present" : "absent"};
    }
    if (std::regex_match(clause, m, obs_re)) {
        auto value = norm_np(m[2].str());
        if (words_of(value).size() <= 3) {
            auto [attr, v] = classify_value(value, "state");
            return {ClaimKind::observation, subject_or(m[1].str()), attr, v};
        }
    }
    return {ClaimKind::event, prev_subject.empty() ? std::string("scene") : prev_subject, "occurs", norm_np(clause)};
}

std::string on_subject_of(const std::string& sentence) {
    static const std::regex on_re(R"(\b(?:on|over)\s+(?:the\s+|a\s+|an\s+)?([A-Za-z][\w-]*))", icase);
    std::smatch m;
    if (std::regex_search(sentence, m, on_re)) return text::lower(m[1].str());
    return {};
}

} // namespace

std::vector<std::string> sentences_of(std::string_view text) { return split_sentences(text); }

std::vector<Claim> extract_text_claims(std::string_view text, FramePair pair, std::size_t record_index) {
    std::vector<Claim> out;
    if (text::trim(text) == kNoVisibleChange) return out;
    const auto sentences = split_sentences(text);
    for (std::size_t si = 0; si < sentences.size(); ++si) {
        const auto& sentence = sentences[si];
        const auto on_subject = on_subject_of(sentence);
        std::string prev_subject;
        std::string prev_verb;
        for (auto clause : split_clauses(sentence)) {
            // "Cuts to X, then to Y": the second clause inherits the verb.
            if (prev_verb == "cuts" && text::lower(clause).rfind("to ", 0) == 0) clause = "cuts " + clause;
            auto r = parse_clause(clause, prev_subject, on_subject);
            Claim c;
            c.id = out.size();
            c.record_index = record_index;
            c.pair = pair;
            c.kind = r.kind;
            c.subject = r.subject;
            c.predicate = r.predicate;
            c.value = r.value;
            c.text = clause;
            c.sentence = sentence;
            c.sentence_index = si;
            out.push_back(std::move(c));
            prev_subject = r.subject;
            prev_verb = (r.subject == "shot" && r.predicate == "view") ? "cuts" : "";
        }
    }
    return out;
}

ClaimSet extract_claims(const std::vector<ResidualRecord>& residuals) {
    ClaimSet set;
    for (std::size_t r = 0; r < residuals.size(); ++r) {
        for (auto& c : extract_text_claims(residuals[r].delta_caption, residuals[r].frame_pair, r)) {
            c.id = set.claims.size();
            set.claims.push_back(std::move(c));
        }
    }
    return set;
}

namespace {

std::optional<Json> find_json_array(const std::string& text) {
    auto try_parse = [](std::string_view s) -> std::optional<Json> {
        try {
            auto j = Json::parse(s);
            if (j.is_array()) return j;
        } catch (const nlohmann::json::parse_error&) {
        }
        return std::nullopt;
    };
    if (auto j = try_parse(text::trim(text))) return j;
    auto b = text.find('[');
    auto e = text.rfind(']');
    if (b != std::string::npos && e != std::string::npos && e > b) return try_parse(std::string_view(text).substr(b, e - b + 1));
    return std::nullopt;
}

} // namespace

ClaimSet extract_claims(const std::vector<ResidualRecord>& residuals, ModelBackend& backend) {
    std::string records;
    for (std::size_t r = 0; r < residuals.size(); ++r) {
        if (residuals[r].is_no_change()) continue;
        records += std::to_string(r + 1) + ". " + residuals[r].delta_caption + "\n";
    }
    if (records.empty()) {
        ClaimSet empty;
        empty.mode = ExtractorMode::backend;
        return empty;
    }
    records.pop_back();
    ModelRequest req;
    req.role = ModelRole::text_reason;
    req.prompt = text::render(prompt_template("claims"), [&](std::string_view key) -> std::string {
        if (key == "records") return records;
        throw InputError("claims prompt has unknown placeholder '" + std::string(key) + "'");
    });

    auto fallback = [&](const std::string& why) {
        ClaimSet set = extract_claims(residuals);
        set.mode = ExtractorMode::deterministic;
        set.fallback = true;
        set.warning = "backend claim extraction failed (" + why + "); used the pattern extractor";
        return set;
    };

    std::optional<Json> arr;
    try {
        auto resp = backend.invoke(req);
        if (resp.refusal) return fallback("refusal");
        arr = find_json_array(resp.text);
    } catch (const BackendError& e) {
        return fallback(e.what());
    }
    if (!arr) return fallback("no JSON array in response");

    std::map<std::size_t, std::vector<Claim>> by_record;
    for (const auto& item : *arr) {
        if (!item.is_object() || !item.contains("record") || !item["record"].is_number_integer()) continue;
        const auto rec = item["record"].get<long long>() - 1;
        if (rec < 0 || static_cast<std::size_t>(rec) >= residuals.size()) continue;
        const auto& rr = residuals[static_cast<std::size_t>(rec)];
        if (rr.is_no_change()) continue;
        Claim c;
        c.record_index = static_cast<std::size_t>(rec);
        c.pair = rr.frame_pair;
        try {
            c.kind = claim_kind_from_string(item.value("kind", std::string("event")));
        } catch (const InputError&) {
            continue;
        }
        c.subject = norm_np(item.value("subject", std::string()));
        c.predicate = text::lower(text::trim(item.value("predicate", std::string())));
        c.value = norm_np(item.value("value", std::string()));
        c.text = std::string(text::trim(item.value("text", std::string())));
        if (c.subject.empty() || c.predicate.empty()) continue;
        if (c.kind != ClaimKind::motion && c.value.empty()) c.predicate = "occurs", c.value = norm_np(c.text);
        if (c.text.empty()) c.text = rr.delta_caption;
        c.sentence = c.text;
        by_record[c.record_index].push_back(std::move(c));
    }

    ClaimSet set;
    set.mode = ExtractorMode::backend;
    for (std::size_t r = 0; r < residuals.size(); ++r) {
        if (residuals[r].is_no_change()) continue;
        auto it = by_record.find(r);
        std::vector<Claim> claims;
        if (it == by_record.end() || it->second.empty()) {
            claims = extract_text_claims(residuals[r].delta_caption, residuals[r].frame_pair, r);
            set.warning = "backend returned no claims for some records; pattern extractor filled them";
        } else {
            claims = std::move(it->second);
            for (std::size_t i = 0; i < claims.size(); ++i) claims[i].sentence_index = i;
        }
        for (auto& c : claims) {
            c.id = set.claims.size();
            set.claims.push_back(std::move(c));
        }
    }
    return set;
}

// --- ledger -------------------------------------------------------------------

std::optional<LedgerEntry> AttributeLedger::get(const std::string& subject, const std::string& attribute) const {
    auto s = entries.find(subject);
    if (s == entries.end()) return std::nullopt;
    auto a = s->second.find(attribute);
    if (a == s->second.end()) return std::nullopt;
    return a->second;
}

void AttributeLedger::set(const std::string& subject, const std::string& attribute, LedgerEntry entry) {
    entries[subject][attribute] = entry;
    history.push_back({subject, attribute, std::move(entry)});
}

AttributeLedger ledger_from_anchor(const AnchorCaption& anchor) {
    AttributeLedger ledger;
    for (const auto& c : extract_text_claims(anchor.text)) {
        if (c.kind != ClaimKind::observation) continue;
        if (ledger.get(c.subject, c.predicate)) continue;
        ledger.set(c.subject, c.predicate, {c.value, anchor.anchor_time_s, LedgerOrigin::anchor});
    }
    return ledger;
}

const AntonymTable& default_antonyms() {
    static const AntonymTable t{{"left", "right"},   {"up", "down"},         {"clockwise", "counterclockwise"},
                                {"in", "out"},       {"forward", "backward"}, {"open", "closed"},
                                {"present", "absent"}};
    return t;
}

// --- rules ----------------------------------------------------------------------

namespace {

double time_at(const FrameTimes& times, std::size_t i) {
    if (i >= times.size())
        throw InputError("frame index " + std::to_string(i) + " lies outside the segment's " +
                         std::to_string(times.size()) + " samples");
    return times[i];
}

bool evidence_before(const EvidenceItem& a, const EvidenceItem& b) {
    auto ka = std::make_tuple(a.support_pairs.empty() ? 0 : a.support_pairs.front(), a.continuous() ? 0 : 1,
                              a.claim_ids.empty() ? 0 : a.claim_ids.front());
    auto kb = std::make_tuple(b.support_pairs.empty() ? 0 : b.support_pairs.front(), b.continuous() ? 0 : 1,
                              b.claim_ids.empty() ? 0 : b.claim_ids.front());
    return ka < kb;
}

} // namespace

RuleOutcome accept_continuous(const std::vector<Claim>& claims, const FrameTimes& times) {
    std::map<std::tuple<std::string, std::string, std::string>, std::map<std::size_t, std::vector<std::size_t>>> groups;
    std::map<std::size_t, const Claim*> by_id;
    for (const auto& c : claims) {
        if (c.kind != ClaimKind::motion) continue;
        groups[{c.subject, c.predicate, c.value}][c.pair.first].push_back(c.id);
        by_id[c.id] = &c;
    }
    RuleOutcome out;
    for (const auto& [key, pairs] : groups) {
        std::vector<std::vector<std::size_t>> runs;
        for (const auto& [p, ids] : pairs) {
            if (runs.empty() || runs.back().back() + 1 != p) runs.push_back({});
            runs.back().push_back(p);
        }
        for (const auto& run : runs) {
            std::vector<std::size_t> ids;
            for (auto p : run) ids.insert(ids.end(), pairs.at(p).begin(), pairs.at(p).end());
            std::sort(ids.begin(), ids.end());
            if (run.size() < 2) {
                out.omissions.push_back({ids, "insufficient_consecutive_support",
                                         "motion reported on a single pair [" + std::to_string(run.front()) + ", " +
                                             std::to_string(run.front() + 1) + "]"});
                continue;
            }
            EvidenceItem e;
            e.kind = EvidenceKind::continuous_change;
            std::tie(e.subject, e.predicate, e.value) = key;
            e.description = by_id.at(ids.front())->text;
            e.support_pairs = run;
            e.support_count = run.size();
            e.start_s = time_at(times, run.front());
            e.end_s = time_at(times, run.back() + 1);
            e.claim_ids = ids;
            out.accepted.push_back(std::move(e));
        }
    }
    std::sort(out.accepted.begin(), out.accepted.end(), evidence_before);
    return out;
}

RuleOutcome accept_discrete(const std::vector<Claim>& claims, const AttributeLedger& ledger, const FrameTimes& times) {
    RuleOutcome out;
    std::vector<const Claim*> changes;
    for (const auto& c : claims) {
        if (c.kind == ClaimKind::observation) {
            out.omissions.push_back({{c.id}, "stative_observation", c.subject + " " + c.predicate + " = " + c.value});
        } else if (c.kind == ClaimKind::event || c.kind == ClaimKind::attribute_update) {
            changes.push_back(&c);
        }
    }
    std::stable_sort(changes.begin(), changes.end(), [](const Claim* a, const Claim* b) {
        return std::make_tuple(a->pair.first, a->id) < std::make_tuple(b->pair.first, b->id);
    });

    std::map<std::pair<std::string, std::string>, std::string> state;
    for (const auto& [subject, attrs] : ledger.entries)
        for (const auto& [attr, entry] : attrs) state[{subject, attr}] = entry.value;

    for (const Claim* c : changes) {
        std::string reason;
        std::string detail;
        if (!c->stateless()) {
            const std::pair<std::string, std::string> key{c->subject, c->predicate};
            auto it = state.find(key);
            if (it != state.end() && it->second == c->value) {
                reason = "precondition_contradicted";
                detail = c->subject + " " + c->predicate + " is already " + c->value;
            } else {
                // A later observation with another value contradicts the
                // outcome unless a change to the same attribute intervenes.
                for (const auto& o : claims) {
                    if (o.kind != ClaimKind::observation || o.subject != c->subject || o.predicate != c->predicate)
                        continue;
                    if (o.pair.first <= c->pair.first || o.value == c->value) continue;
                    bool intervening = std::any_of(claims.begin(), claims.end(), [&](const Claim& x) {
                        return (x.kind == ClaimKind::event || x.kind == ClaimKind::attribute_update) &&
                               x.subject == c->subject && x.predicate == c->predicate &&
                               x.pair.first > c->pair.first && x.pair.first <= o.pair.first;
                    });
                    if (!intervening) {
                        reason = "postcondition_contradicted";
                        detail = "claim " + std::to_string(o.id) + " reports " + c->subject + " " + o.value;
                        break;
                    }
                }
            }
            if (reason.empty()) state[key] = c->value;
        }
        if (!reason.empty()) {
            out.omissions.push_back({{c->id}, reason, detail});
            continue;
        }
        EvidenceItem e;
        e.kind = c->kind == ClaimKind::attribute_update ? EvidenceKind::attribute_update : EvidenceKind::discrete_event;
        e.subject = c->subject;
        e.predicate = c->predicate;
        e.value = c->value;
        e.description = c->text;
        e.support_pairs = {c->pair.first};
        e.support_count = 1;
        e.start_s = time_at(times, c->pair.first);
        e.end_s = time_at(times, c->pair.second);
        e.claim_ids = {c->id};
        out.accepted.push_back(std::move(e));
    }
    return out;
}

bool conflicts(const EvidenceItem& a, const EvidenceItem& b, const AntonymTable& antonyms, bool ignore_time) {
    if (a.subject != b.subject || a.predicate != b.predicate) return false;
    if (a.continuous() != b.continuous()) return false;
    if (a.continuous()) {
        bool anti = std::any_of(antonyms.begin(), antonyms.end(), [&](const auto& p) {
            return (p.first == a.value && p.second == b.value) || (p.first == b.value && p.second == a.value);
        });
        if (!anti) return false;
    } else {
        if (a.predicate == "occurs" || a.value == b.value) return false;
    }
    if (ignore_time) return true;
    return a.start_s < b.end_s && b.start_s < a.end_s;
}

RuleOutcome resolve_contradictions(std::vector<EvidenceItem> items, const AntonymTable& antonyms, bool ignore_time) {
    RuleOutcome out;
    const std::size_t n = items.size();
    std::vector<int> verdict(n, 0);  // 0 keep, 1 tie, 2 outsupported
    std::vector<std::string> rivals(n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            if (i == j || !conflicts(items[i], items[j], antonyms, ignore_time)) continue;
            if (items[j].support_count > items[i].support_count) verdict[i] = 2;
            else if (items[j].support_count == items[i].support_count && verdict[i] == 0) verdict[i] = 1;
            if (items[j].support_count >= items[i].support_count) {
                if (!rivals[i].empty()) rivals[i] += "; ";
                rivals[i] += items[j].predicate + " " + items[j].value + " (support " +
                             std::to_string(items[j].support_count) + ")";
            }
        }
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (verdict[i] == 0) {
            out.accepted.push_back(std::move(items[i]));
        } else {
            out.omissions.push_back({items[i].claim_ids,
                                     verdict[i] == 2 ? "contradiction_outsupported" : "contradiction_tie",
                                     items[i].subject + " " + items[i].predicate + " " + items[i].value + " (support " +
                                         std::to_string(items[i].support_count) + ") vs " + rivals[i]});
        }
    }
    return out;
}

AttributeLedger apply_attribute_locking(const AttributeLedger& anchor_ledger, const std::vector<EvidenceItem>& accepted) {
    AttributeLedger ledger = anchor_ledger;
    std::vector<const EvidenceItem*> updates;
    for (const auto& e : accepted)
        if (!e.continuous() && e.predicate != "occurs") updates.push_back(&e);
    std::stable_sort(updates.begin(), updates.end(), [](const EvidenceItem* a, const EvidenceItem* b) {
        return std::make_tuple(a->support_pairs.front(), a->claim_ids.front()) <
               std::make_tuple(b->support_pairs.front(), b->claim_ids.front());
    });
    for (const auto* e : updates) ledger.set(e->subject, e->predicate, {e->value, e->end_s, LedgerOrigin::residual});
    return ledger;
}

// --- synthesis ------------------------------------------------------------------

namespace {

std::string fmt_time(double t) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3f", t);
    std::string s = buf;
    while (!s.empty() && s.back() == '0') s.pop_back();
    if (!s.empty() && s.back() == '.') s.pop_back();
    return s;
}

std::string as_sentence(std::string s) {
    s = std::string(text::trim(s));
    if (s.empty()) return s;
    if (std::islower(static_cast<unsigned char>(s[0]))) s[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
    const char last = s.back();
    if (last != '.' && last != '!' && last != '?' && last != '"') s += '.';
    return s;
}

// One line per rendered unit, in temporal order.
std::vector<std::string> evidence_lines(const std::vector<EvidenceItem>& evidence, const std::vector<Claim>& claims) {
    std::vector<const EvidenceItem*> items;
    for (const auto& e : evidence) items.push_back(&e);
    std::stable_sort(items.begin(), items.end(),
                     [](const EvidenceItem* a, const EvidenceItem* b) { return evidence_before(*a, *b); });

    std::set<std::size_t> accepted_discrete;
    for (const auto* e : items)
        if (!e->continuous()) accepted_discrete.insert(e->claim_ids.begin(), e->claim_ids.end());
    std::map<std::size_t, const Claim*> by_id;
    for (const auto& c : claims) by_id[c.id] = &c;

    std::vector<std::string> lines;
    std::set<std::pair<std::size_t, std::size_t>> rendered_sentences;
    for (const auto* e : items) {
        if (e->continuous()) {
            lines.push_back("From " + fmt_time(e->start_s) + "s to " + fmt_time(e->end_s) + "s: " +
                            as_sentence(e->description));
            continue;
        }
        const Claim* c = by_id.count(e->claim_ids.front()) ? by_id.at(e->claim_ids.front()) : nullptr;
        if (c) {
            const std::pair<std::size_t, std::size_t> key{c->record_index, c->sentence_index};
            bool whole = std::all_of(claims.begin(), claims.end(), [&](const Claim& o) {
                return o.record_index != key.first || o.sentence_index != key.second || accepted_discrete.count(o.id);
            });
            if (whole) {
                if (rendered_sentences.insert(key).second)
                    lines.push_back("At " + fmt_time(e->end_s) + "s: " + as_sentence(c->sentence));
                continue;
            }
        }
        lines.push_back("At " + fmt_time(e->end_s) + "s: " + as_sentence(e->description));
    }
    return lines;
}

std::string call_text(ModelBackend& backend, std::string prompt) {
    ModelRequest req;
    req.role = ModelRole::text_reason;
    req.prompt = std::move(prompt);
    auto resp = backend.invoke(req);
    auto body = std::string(text::trim(resp.text));
    if (resp.refusal || body.empty()) throw BackendError("text backend returned no text");
    return body;
}

} // namespace

std::string render_scene_template(const AnchorCaption& anchor, const std::vector<EvidenceItem>& evidence,
                                  const std::vector<Claim>& claims) {
    std::string out(text::trim(anchor.text));
    for (const auto& line : evidence_lines(evidence, claims)) out += " " + line;
    return out;
}

std::vector<std::string> whitelist_violations(std::string_view text, std::string_view allowed) {
    static const std::regex word_re(R"([A-Za-z][A-Za-z'\-]*)");
    std::set<std::string> allow;
    const std::string a(allowed);
    for (auto it = std::sregex_iterator(a.begin(), a.end(), word_re); it != std::sregex_iterator(); ++it)
        allow.insert(text::lower(it->str()));
    std::vector<std::string> out;
    const std::string t(text);
    for (auto it = std::sregex_iterator(t.begin(), t.end(), word_re); it != std::sregex_iterator(); ++it) {
        const auto w = it->str();
        if (!std::isupper(static_cast<unsigned char>(w[0]))) continue;
        auto p = static_cast<std::size_t>(it->position());
        while (p > 0 && (std::isspace(static_cast<unsigned char>(t[p - 1])) || t[p - 1] == '"')) --p;
        if (p == 0 || t[p - 1] == '.' || t[p - 1] == '!' || t[p - 1] == '?' || t[p - 1] == ':') continue;
        if (allow.count(text::lower(w))) continue;
        if (std::find(out.begin(), out.end(), w) == out.end()) out.push_back(w);
    }
    return out;
}

SegmentAggregate aggregate_segment(const Segment& segment, const AnchorCaption& anchor,
                                   const std::vector<ResidualRecord>& residuals, const AggregateOptions& opts,
                                   ModelBackend* backend) {
    SegmentAggregate agg;
    agg.segment = segment;
    agg.anchor = anchor;
    agg.times = plan_samples(segment, opts.rate_hz).sample_times;
    if (opts.backend_claims) {
        if (!backend) throw ConfigError("backend claim extraction needs a backend");
        agg.claims = extract_claims(residuals, *backend);
    } else {
        agg.claims = extract_claims(residuals);
    }
    if (!agg.claims.warning.empty()) agg.warnings.push_back(agg.claims.warning);
    agg.anchor_ledger = ledger_from_anchor(anchor);

    auto cont = accept_continuous(agg.claims.claims, agg.times);
    auto disc = accept_discrete(agg.claims.claims, agg.anchor_ledger, agg.times);
    std::vector<EvidenceItem> candidates = std::move(cont.accepted);
    candidates.insert(candidates.end(), disc.accepted.begin(), disc.accepted.end());
    std::sort(candidates.begin(), candidates.end(), evidence_before);
    auto resolved = resolve_contradictions(std::move(candidates), opts.antonyms);

    agg.evidence = std::move(resolved.accepted);
    agg.omissions = std::move(cont.omissions);
    agg.omissions.insert(agg.omissions.end(), disc.omissions.begin(), disc.omissions.end());
    agg.omissions.insert(agg.omissions.end(), resolved.omissions.begin(), resolved.omissions.end());
    agg.ledger = apply_attribute_locking(agg.anchor_ledger, agg.evidence);

    agg.scene.segment_index = segment.index;
    agg.scene.start_s = segment.start_s;
    agg.scene.end_s = segment.end_s;
    const std::string templ = render_scene_template(anchor, agg.evidence, agg.claims.claims);
    if (opts.mode == SynthesisMode::backend) {
        if (!backend) throw ConfigError("backend synthesis needs a backend");
        std::string evidence;
        for (const auto& line : evidence_lines(agg.evidence, agg.claims.claims)) evidence += "- " + line + "\n";
        if (evidence.empty()) evidence = "(none)\n";
        evidence.pop_back();
        try {
            agg.scene.text = call_text(*backend, text::render(prompt_template("scene"), [&](std::string_view key) -> std::string {
                if (key == "start_s") return fmt_time(segment.start_s);
                if (key == "end_s") return fmt_time(segment.end_s);
                if (key == "anchor") return std::string(text::trim(anchor.text));
                if (key == "evidence") return evidence;
                throw InputError("scene prompt has unknown placeholder '" + std::string(key) + "'");
            }));
            for (const auto& w : whitelist_violations(agg.scene.text, anchor.text + "\n" + evidence))
                agg.warnings.push_back("scene narrative mentions unsupported term '" + w + "'");
        } catch (const BackendError& e) {
            agg.synthesis_fallback = true;
            agg.warnings.push_back(std::string("scene synthesis fell back to the template: ") + e.what());
            agg.scene.text = templ;
        }
    } else {
        agg.scene.text = templ;
    }
    return agg;
}

VideoSynthesis synthesize_video(const std::vector<SegmentAggregate>& segments, const AggregateOptions& opts,
                                ModelBackend* backend) {
    VideoSynthesis out;
    std::vector<std::set<std::size_t>> dropped(segments.size());
    for (std::size_t k = 0; k + 1 < segments.size(); ++k) {
        const auto& a = segments[k].evidence;
        const auto& b = segments[k + 1].evidence;
        auto check = [&](const EvidenceItem& x, std::size_t xi, std::size_t xs, const std::vector<EvidenceItem>& other,
                         std::size_t os) {
            if (!x.continuous()) return;
            std::string rivals;
            int verdict = 0;
            for (const auto& y : other) {
                if (!y.continuous() || !conflicts(x, y, opts.antonyms, true)) continue;
                if (y.support_count > x.support_count) verdict = 2;
                else if (y.support_count == x.support_count && verdict == 0) verdict = 1;
                if (y.support_count >= x.support_count)
                    rivals += (rivals.empty() ? "" : "; ") + y.predicate + " " + y.value + " in segment " +
                              std::to_string(segments[os].segment.index);
            }
            if (verdict == 0 || !dropped[xs].insert(xi).second) return;
            out.cross_boundary_omissions.push_back(
                {x.claim_ids, verdict == 2 ? "cross_boundary_outsupported" : "cross_boundary_tie",
                 x.subject + " " + x.predicate + " " + x.value + " vs " + rivals});
            out.segment_of.push_back(segments[xs].segment.index);
        };
        for (std::size_t i = 0; i < a.size(); ++i) check(a[i], i, k, b, k + 1);
        for (std::size_t i = 0; i < b.size(); ++i) check(b[i], i, k + 1, a, k);
    }

    std::vector<std::string> scenes;
    for (std::size_t k = 0; k < segments.size(); ++k) {
        if (dropped[k].empty()) {
            scenes.push_back(segments[k].scene.text);
            continue;
        }
        std::vector<EvidenceItem> kept;
        for (std::size_t i = 0; i < segments[k].evidence.size(); ++i)
            if (!dropped[k].count(i)) kept.push_back(segments[k].evidence[i]);
        scenes.push_back(render_scene_template(segments[k].anchor, kept, segments[k].claims.claims));
    }

    std::string joined;
    for (const auto& s : scenes) joined += (joined.empty() ? "" : "\n\n") + s;
    if (opts.mode == SynthesisMode::backend && backend && !scenes.empty()) {
        try {
            out.narrative = call_text(*backend, text::render(prompt_template("video"), [&](std::string_view key) -> std::string {
                if (key == "scenes") return joined;
                throw InputError("video prompt has unknown placeholder '" + std::string(key) + "'");
            }));
            for (const auto& w : whitelist_violations(out.narrative, joined))
                out.warnings.push_back("video narrative mentions unsupported term '" + w + "'");
            return out;
        } catch (const BackendError& e) {
            out.fallback = true;
            out.warnings.push_back(std::string("video synthesis fell back to the template: ") + e.what());
        }
    }
    out.narrative = joined;
    return out;
}

AggregateResult aggregate_document(CaptionDocument doc, const AggregateOptions& opts, ModelBackend* backend) {
    const std::size_t k = doc.segments.size();
    if (doc.anchors.size() != k) throw ValidationError("|anchors| = K", "every segment needs an anchor before aggregation");
    if (doc.residuals.size() != k) throw ValidationError("|residuals| = K", "every segment needs a residual list");
    AggregateOptions o = opts;
    o.rate_hz = doc.sample_rate_hz;
    AggregateResult result;
    doc.scene_narratives.clear();
    for (std::size_t i = 0; i < k; ++i) {
        result.segments.push_back(aggregate_segment(doc.segments[i], doc.anchors[i], doc.residuals[i], o, backend));
        doc.scene_narratives.push_back(result.segments.back().scene);
    }
    result.video = synthesize_video(result.segments, o, backend);
    doc.video_narrative = result.video.narrative;
    validate(doc);
    result.document = std::move(doc);
    return result;
}

namespace {

Json encode_claim(const Claim& c) {
    Json j;
    j["id"] = c.id;
    j["record_index"] = c.record_index;
    j["frame_pair"] = Json::array({c.pair.first, c.pair.second});
    j["kind"] = to_string(c.kind);
    j["subject"] = c.subject;
    j["predicate"] = c.predicate;
    j["value"] = c.value;
    j["text"] = c.text;
    return j;
}

Json encode_evidence(const EvidenceItem& e) {
    Json j;
    j["kind"] = to_string(e.kind);
    j["subject"] = e.subject;
    j["predicate"] = e.predicate;
    j["value"] = e.value;
    j["description"] = e.description;
    j["support_pairs"] = e.support_pairs;
    j["support_count"] = e.support_count;
    j["time_span"] = Json::array({json_io::time_value(e.start_s), json_io::time_value(e.end_s)});
    j["claim_ids"] = e.claim_ids;
    return j;
}

Json encode_omission(const Omission& o) {
    Json j;
    j["claim_ids"] = o.claim_ids;
    j["reason"] = o.reason;
    j["detail"] = o.detail;
    return j;
}

Json encode_ledger(const AttributeLedger& l) {
    Json entries = Json::object();
    for (const auto& [subject, attrs] : l.entries) {
        Json a = Json::object();
        for (const auto& [attr, e] : attrs) {
            Json ej;
            ej["value"] = e.value;
            ej["last_update_s"] = json_io::time_value(e.last_update_s);
            ej["origin"] = e.origin == LedgerOrigin::anchor ? "anchor" : "residual";
            a[attr] = std::move(ej);
        }
        entries[subject] = std::move(a);
    }
    return entries;
}

} // namespace

std::string serialize_audit(const AggregateResult& result) {
    Json j;
    j["schema_version"] = kSchemaVersion;
    j["video_id"] = result.document.video.video_id;
    Json segs = Json::array();
    for (const auto& s : result.segments) {
        Json sj;
        sj["segment_index"] = s.segment.index;
        sj["extractor"] = {{"mode", to_string(s.claims.mode)}, {"fallback", s.claims.fallback}};
        Json claims = Json::array();
        for (const auto& c : s.claims.claims) claims.push_back(encode_claim(c));
        sj["claims"] = std::move(claims);
        Json ev = Json::array();
        for (const auto& e : s.evidence) ev.push_back(encode_evidence(e));
        sj["evidence"] = std::move(ev);
        Json om = Json::array();
        for (const auto& o : s.omissions) om.push_back(encode_omission(o));
        sj["omissions"] = std::move(om);
        sj["ledger"] = encode_ledger(s.ledger);
        sj["synthesis_fallback"] = s.synthesis_fallback;
        sj["warnings"] = s.warnings;
        segs.push_back(std::move(sj));
    }
    j["segments"] = std::move(segs);
    Json cross = Json::array();
    for (std::size_t i = 0; i < result.video.cross_boundary_omissions.size(); ++i) {
        Json o = encode_omission(result.video.cross_boundary_omissions[i]);
        o["segment_index"] = result.video.segment_of[i];
        cross.push_back(std::move(o));
    }
    j["cross_boundary_omissions"] = std::move(cross);
    j["video_fallback"] = result.video.fallback;
    j["video_warnings"] = result.video.warnings;
    return json_io::dump(j);
}

} // namespace codeccap
