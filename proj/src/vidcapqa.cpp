#include "codeccap/vidcapqa.hpp"

#include "codeccap/error.hpp"
#include "codeccap/json_io.hpp"
#include "codeccap/prompts.hpp"
#include "codeccap/raster.hpp"
#include "text_util.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <mutex>
#include <numeric>
#include <regex>
#include <set>
#include <thread>

namespace codeccap {

using json_io::Json;

const std::vector<std::string>& capability_names() {
    static const std::vector<std::string> names{
        "action_recognition", "attribute_recognition", "camera_movement", "counting",     "direction",
        "holistic_understanding", "object_tracking", "reasoning",       "rotation",     "speed",
        "state_change",       "temporal_grounding",   "temporal_sequence", "trajectory"};
    return names;
}

std::string normalize_capability(std::string_view name) {
    std::string out;
    for (char c : text::trim(name)) {
        if (c == ' ' || c == '-' || c == '_') {
            if (!out.empty() && out.back() != '_') out += '_';
        } else {
            out += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        }
    }
    const auto& names = capability_names();
    if (std::find(names.begin(), names.end(), out) == names.end())
        throw InputError("unknown capability '" + std::string(name) + "'");
    return out;
}

bool is_unknown_vote(std::string_view vote) { return text::lower(text::trim(vote)) == "unknown"; }

const std::vector<std::string>& source_names() {
    static const std::vector<std::string> names{"mvbench", "motionbench",    "tempcompass", "tomato",
                                                "etbench", "longvideobench", "lvbench",     "videomme"};
    return names;
}

std::string normalize_source(std::string_view name) {
    std::string out;
    for (char c : name)
        if (std::isalnum(static_cast<unsigned char>(c))) out += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    const auto& names = source_names();
    if (std::find(names.begin(), names.end(), out) == names.end())
        throw InputError("unknown source benchmark '" + std::string(name) + "'");
    return out;
}

std::string_view to_string(Difficulty d) {
    switch (d) {
    case Difficulty::easy: return "easy";
    case Difficulty::medium: return "medium";
    case Difficulty::hard: return "hard";
    case Difficulty::very_hard: return "very_hard";
    }
    return "easy";
}

Difficulty difficulty_from_string(std::string_view name) {
    if (name == "easy") return Difficulty::easy;
    if (name == "medium") return Difficulty::medium;
    if (name == "hard") return Difficulty::hard;
    if (name == "very_hard") return Difficulty::very_hard;
    throw InputError("unknown difficulty '" + std::string(name) + "'");
}

namespace {

constexpr std::array<std::pair<FilterState, std::string_view>, 8> kStates{{
    {FilterState::pool, "pool"},
    {FilterState::text_leak, "text_leak"},
    {FilterState::normal, "normal"},
    {FilterState::suspected_wrong_gt, "suspected_wrong_gt"},
    {FilterState::phase_b_pending, "phase_b_pending"},
    {FilterState::consensus_hard, "consensus_hard"},
    {FilterState::likely_correct, "likely_correct"},
    {FilterState::discarded, "discarded"},
}};

} // namespace

std::string_view to_string(FilterState s) {
    for (const auto& [k, v] : kStates)
        if (k == s) return v;
    return "pool";
}

FilterState filter_state_from_string(std::string_view name) {
    for (const auto& [k, v] : kStates)
        if (v == name) return k;
    throw InputError("unknown filter state '" + std::string(name) + "'");
}

std::string_view to_string(VotePhase p) {
    switch (p) {
    case VotePhase::relabel: return "relabel";
    case VotePhase::text_only: return "text_only";
    case VotePhase::phase_a: return "phase_a";
    case VotePhase::phase_b: return "phase_b";
    case VotePhase::eval: return "eval";
    }
    return "relabel";
}

void QaQuestion::validate() const {
    if (question_id.empty()) throw InputError("question without question_id");
    if (ground_truth < 0 || ground_truth > 3)
        throw InputError("question " + question_id + ": ground_truth must be in 0..3");
    if (capability) normalize_capability(*capability);
}

int parse_answer(std::string_view vote) {
    auto v = text::upper(text::trim(vote));
    if (v == "UNKNOWN") return kUnknownAnswer;
    if (v.size() == 1 && v[0] >= 'A' && v[0] <= 'D') return v[0] - 'A';
    if (v.size() == 1 && v[0] >= '0' && v[0] <= '3') return v[0] - '0';
    throw InputError("answer vote '" + std::string(vote) + "' is not A-D, 0-3 or unknown");
}

// --- filtering rules ------------------------------------------------------------

std::optional<std::string> relabel_capability(const std::vector<std::string>& votes, bool strict_unknown) {
    if (votes.size() != 4)
        throw InputError("relabeling needs exactly 4 votes, got " + std::to_string(votes.size()));
    std::size_t unknown = 0;
    std::map<std::string, std::size_t> counts;
    for (const auto& v : votes) {
        if (is_unknown_vote(v)) ++unknown;
        else ++counts[normalize_capability(v)];
    }
    std::size_t best = 0;
    std::vector<std::string> leaders;
    for (const auto& [label, c] : counts) {
        if (c > best) best = c, leaders = {label};
        else if (c == best) leaders.push_back(label);
    }
    if (leaders.size() != 1 || best < 2) return std::nullopt;
    if (strict_unknown ? best <= unknown : best < unknown) return std::nullopt;
    return leaders.front();
}

bool text_leak(int ground_truth, const std::vector<int>& answers) {
    if (answers.size() != 2)
        throw InputError("the text-only filter needs exactly 2 answers, got " + std::to_string(answers.size()));
    return std::any_of(answers.begin(), answers.end(), [&](int a) { return a == ground_truth; });
}

FilterState phase_a_classify(int ground_truth, const std::vector<int>& answers) {
    if (answers.size() != 3) throw InputError("phase A needs exactly 3 answers, got " + std::to_string(answers.size()));
    const auto matches = std::count(answers.begin(), answers.end(), ground_truth);
    if (matches >= 2) return FilterState::normal;
    const bool unanimous = answers[0] != kUnknownAnswer && answers[0] == answers[1] && answers[1] == answers[2];
    if (matches == 0 && unanimous) return FilterState::suspected_wrong_gt;
    return FilterState::phase_b_pending;
}

FilterState phase_b_classify(const std::vector<bool>& confirmations) {
    if (confirmations.size() != 3)
        throw InputError("phase B needs exactly 3 confirmations, got " + std::to_string(confirmations.size()));
    const auto yes = std::count(confirmations.begin(), confirmations.end(), true);
    if (yes == 3) return FilterState::consensus_hard;
    if (yes == 2) return FilterState::likely_correct;
    return FilterState::discarded;
}

Difficulty assign_difficulty(const QaQuestion& q) {
    switch (q.filter_state) {
    case FilterState::normal:
        if (q.phase_a_matches == 3) return Difficulty::easy;
        if (q.phase_a_matches == 2) return Difficulty::medium;
        break;
    case FilterState::likely_correct: return Difficulty::hard;
    case FilterState::consensus_hard: return Difficulty::very_hard;
    default: break;
    }
    throw StateError("question " + q.question_id + " in state " + std::string(to_string(q.filter_state)) +
                     " was not retained and has no difficulty");
}

void VoteBook::add(VoteRecord v) {
    auto& list = votes[v.question_id][v.phase];
    list.push_back(std::move(v));
}

const std::vector<VoteRecord>& VoteBook::get(const std::string& question_id, VotePhase phase) const {
    static const std::vector<VoteRecord> none;
    auto q = votes.find(question_id);
    if (q == votes.end()) return none;
    auto p = q->second.find(phase);
    return p == q->second.end() ? none : p->second;
}

VoteBook parse_votes(std::string_view bytes, VotePhase phase, VoteBook book) {
    std::size_t line_no = 0;
    std::size_t offset = 0;
    for (auto line : text::split_lines(bytes)) {
        ++line_no;
        const auto here = offset;
        offset += line.size() + 1;
        if (text::trim(line).empty()) continue;
        Json j;
        try {
            j = json_io::parse(line);
        } catch (const ParseError& e) {
            throw ParseError(std::string(to_string(phase)) + " votes line " + std::to_string(line_no) + ": " + e.what(),
                             here + e.offset());
        }
        VoteRecord v;
        v.phase = phase;
        v.question_id = json_io::string_field(j, "question_id");
        v.voter_id = j.contains("voter_id") && j["voter_id"].is_string() ? j["voter_id"].get<std::string>() : "";
        const auto& vote = json_io::field(j, "vote");
        if (vote.is_string()) v.vote = vote.get<std::string>();
        else if (vote.is_number_integer()) v.vote = std::to_string(vote.get<long long>());
        else if (vote.is_boolean()) v.vote = vote.get<bool>() ? "yes" : "no";
        else throw ParseError(std::string(to_string(phase)) + " votes line " + std::to_string(line_no) +
                              ": vote must be a string, integer or boolean", here);
        book.add(std::move(v));
    }
    return book;
}

VoteBook load_votes(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir)) throw InputError("votes directory '" + dir.string() + "' not found");
    VoteBook book;
    for (auto phase : {VotePhase::relabel, VotePhase::text_only, VotePhase::phase_a, VotePhase::phase_b}) {
        const auto path = dir / (std::string(to_string(phase)) + ".jsonl");
        if (std::filesystem::exists(path)) book = parse_votes(read_file(path), phase, std::move(book));
    }
    return book;
}

namespace {

bool parse_confirmation(const std::string& vote) {
    const auto v = text::lower(text::trim(vote));
    if (v == "yes" || v == "true" || v == "confirm" || v == "confirmed" || v == "1") return true;
    if (v == "no" || v == "false" || v == "reject" || v == "rejected" || v == "0") return false;
    throw InputError("phase B vote '" + vote + "' is not a yes/no confirmation");
}

const std::vector<VoteRecord>& need(const VoteBook& book, const QaQuestion& q, VotePhase phase) {
    const auto& v = book.get(q.question_id, phase);
    if (v.empty())
        throw InputError("question " + q.question_id + " has no " + std::string(to_string(phase)) + " votes");
    return v;
}

} // namespace

FilterOutcome run_filters(std::vector<QaQuestion> pool, const VoteBook& votes, bool strict_unknown) {
    FilterOutcome out;
    for (auto& q : pool) {
        q.validate();
        q.difficulty.reset();
        q.phase_a_matches = -1;
        q.filter_state = FilterState::pool;

        const auto& rl = votes.get(q.question_id, VotePhase::relabel);
        if (!rl.empty() || !q.capability) {
            std::vector<std::string> labels;
            for (const auto& v : need(votes, q, VotePhase::relabel)) labels.push_back(v.vote);
            q.capability = relabel_capability(labels, strict_unknown);
        }
        if (!q.capability) {
            q.filter_state = FilterState::discarded;
            out.questions.push_back(q);
            continue;
        }

        std::vector<int> text_answers;
        for (const auto& v : need(votes, q, VotePhase::text_only)) text_answers.push_back(parse_answer(v.vote));
        if (text_leak(q.ground_truth, text_answers)) {
            q.filter_state = FilterState::text_leak;
            out.questions.push_back(q);
            continue;
        }

        std::vector<int> a;
        for (const auto& v : need(votes, q, VotePhase::phase_a)) a.push_back(parse_answer(v.vote));
        q.filter_state = phase_a_classify(q.ground_truth, a);
        q.phase_a_matches = static_cast<int>(std::count(a.begin(), a.end(), q.ground_truth));
        if (q.filter_state == FilterState::phase_b_pending) {
            std::vector<bool> confirms;
            for (const auto& v : need(votes, q, VotePhase::phase_b)) confirms.push_back(parse_confirmation(v.vote));
            q.filter_state = phase_b_classify(confirms);
        }
        if (q.filter_state == FilterState::normal || q.filter_state == FilterState::likely_correct ||
            q.filter_state == FilterState::consensus_hard) {
            q.difficulty = assign_difficulty(q);
            out.retained.push_back(q);
        }
        out.questions.push_back(q);
    }
    return out;
}

// --- pool ingestion ---------------------------------------------------------------

AdapterTable parse_adapters(std::string_view json) {
    const Json j = json_io::parse(json);
    const Json& table = j.contains("sources") ? j["sources"] : j;
    if (!table.is_object()) throw ConfigError("adapter file must map source names to field maps");
    AdapterTable out;
    for (const auto& [name, m] : table.items()) {
        if (!m.is_object()) throw ConfigError("adapter for '" + name + "' must be an object");
        PoolAdapter a;
        for (const auto& [k, v] : m.items()) {
            if (!v.is_string()) throw ConfigError("adapter '" + name + "' field '" + k + "' must name a column");
            const auto col = v.get<std::string>();
            if (k == "question_id") a.question_id = col;
            else if (k == "video_id") a.video_id = col;
            else if (k == "question") a.question = col;
            else if (k == "options") a.options = col;
            else if (k == "ground_truth") a.ground_truth = col;
            else throw ConfigError("adapter '" + name + "' has unknown field '" + k + "'");
        }
        out[normalize_source(name)] = a;
    }
    return out;
}

std::vector<QaQuestion> parse_pool(std::string_view bytes, const AdapterTable& adapters) {
    std::vector<QaQuestion> out;
    std::set<std::string> seen;
    std::size_t line_no = 0;
    for (auto line : text::split_lines(bytes)) {
        ++line_no;
        if (text::trim(line).empty()) continue;
        auto where = [&](const std::string& msg) { return "pool line " + std::to_string(line_no) + ": " + msg; };
        const Json j = json_io::parse(line);
        std::string source;
        if (j.contains("source_benchmark")) source = json_io::string_field(j, "source_benchmark");
        else if (j.contains("source")) source = json_io::string_field(j, "source");
        else throw InputError(where("record names no source_benchmark"));
        QaQuestion q;
        q.source_benchmark = normalize_source(source);
        PoolAdapter a;
        if (auto it = adapters.find(q.source_benchmark); it != adapters.end()) a = it->second;

        auto str = [&](const std::string& col) {
            if (!j.contains(col)) throw InputError(where("missing field '" + col + "'"));
            const auto& v = j[col];
            if (v.is_string()) return v.get<std::string>();
            if (v.is_number_integer()) return std::to_string(v.get<long long>());
            throw InputError(where("field '" + col + "' must be a string"));
        };
        q.question_id = str(a.question_id);
        q.video_id = str(a.video_id);
        q.question = str(a.question);
        if (!j.contains(a.options)) throw InputError(where("missing field '" + a.options + "'"));
        const auto& opts = j[a.options];
        std::vector<std::string> options;
        if (opts.is_array()) {
            for (const auto& o : opts) {
                if (!o.is_string()) throw InputError(where("options must be strings"));
                options.push_back(o.get<std::string>());
            }
        } else if (opts.is_object()) {
            for (const char* k : {"A", "B", "C", "D"})
                if (opts.contains(k) && opts[k].is_string()) options.push_back(opts[k].get<std::string>());
        }
        if (options.size() != 4) throw InputError(where("expected exactly 4 options, got " + std::to_string(options.size())));
        std::copy(options.begin(), options.end(), q.options.begin());

        if (!j.contains(a.ground_truth)) throw InputError(where("missing field '" + a.ground_truth + "'"));
        const auto& gt = j[a.ground_truth];
        if (gt.is_number_integer()) {
            q.ground_truth = static_cast<int>(gt.get<long long>());
        } else if (gt.is_string()) {
            const auto s = gt.get<std::string>();
            auto hit = std::find(options.begin(), options.end(), s);
            if (hit != options.end()) q.ground_truth = static_cast<int>(hit - options.begin());
            else {
                try {
                    q.ground_truth = parse_answer(s);
                } catch (const InputError&) {
                    throw InputError(where("ground truth '" + s + "' matches no option"));
                }
                if (q.ground_truth == kUnknownAnswer) throw InputError(where("ground truth cannot be unknown"));
            }
        } else {
            throw InputError(where("ground truth must be an index, letter or option text"));
        }
        if (j.contains("capability") && j["capability"].is_string())
            q.capability = normalize_capability(j["capability"].get<std::string>());
        q.validate();
        if (!seen.insert(q.question_id).second) throw InputError(where("duplicate question_id '" + q.question_id + "'"));
        out.push_back(std::move(q));
    }
    return out;
}

// --- sampling ---------------------------------------------------------------------

std::map<std::string, std::size_t> allocate_budget(const std::map<std::string, std::size_t>& available,
                                                   std::size_t budget) {
    const std::size_t total = std::accumulate(available.begin(), available.end(), std::size_t{0},
                                              [](std::size_t s, const auto& kv) { return s + kv.second; });
    if (budget > total)
        throw InputError("budget " + std::to_string(budget) + " exceeds the " + std::to_string(total) +
                         " available questions");
    std::map<std::string, std::size_t> out;
    std::vector<std::string> rest;
    for (const auto& [name, n] : available) rest.push_back(name);
    std::size_t remaining = budget;
    // Cap every dimension that cannot reach an even share, then recompute.
    for (bool changed = true; changed && !rest.empty();) {
        changed = false;
        const std::size_t share = (remaining + rest.size() - 1) / rest.size();
        std::vector<std::string> keep;
        for (const auto& name : rest) {
            if (available.at(name) < share) {
                out[name] = available.at(name);
                remaining -= available.at(name);
                changed = true;
            } else {
                keep.push_back(name);
            }
        }
        rest = std::move(keep);
    }
    if (rest.empty()) return out;
    std::sort(rest.begin(), rest.end(), [&](const std::string& a, const std::string& b) {
        if (available.at(a) != available.at(b)) return available.at(a) > available.at(b);
        return a < b;
    });
    const std::size_t base = remaining / rest.size();
    const std::size_t extra = remaining % rest.size();
    for (std::size_t i = 0; i < rest.size(); ++i) out[rest[i]] = base + (i < extra ? 1 : 0);
    return out;
}

std::array<std::size_t, 4> largest_remainder(std::size_t quota, const Mixture& mixture) {
    const std::size_t parts = std::accumulate(mixture.begin(), mixture.end(), std::size_t{0});
    if (parts == 0) throw ConfigError("difficulty mixture must have a positive total");
    std::array<std::size_t, 4> counts{};
    std::array<std::size_t, 4> rem{};
    std::size_t used = 0;
    for (std::size_t d = 0; d < 4; ++d) {
        counts[d] = quota * mixture[d] / parts;
        rem[d] = quota * mixture[d] % parts;
        used += counts[d];
    }
    std::array<std::size_t, 4> order{0, 1, 2, 3};
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return rem[a] > rem[b]; });
    for (std::size_t i = 0; used < quota; ++i, ++used) ++counts[order[i % 4]];
    return counts;
}

std::array<std::size_t, 4> difficulty_targets(std::size_t quota, const std::array<std::size_t, 4>& available,
                                              const Mixture& mixture) {
    const std::size_t total = std::accumulate(available.begin(), available.end(), std::size_t{0});
    if (quota > total)
        throw InputError("quota " + std::to_string(quota) + " exceeds the " + std::to_string(total) + " candidates");
    auto t = largest_remainder(quota, mixture);
    for (int d = 0; d < 4; ++d) {
        if (t[d] <= available[d]) continue;
        std::size_t short_by = t[d] - available[d];
        t[d] = available[d];
        while (short_by > 0) {
            int pick = -1;
            for (int dist = 1; dist < 4 && pick < 0; ++dist) {
                for (int e : {d - dist, d + dist}) {
                    if (e < 0 || e > 3) continue;
                    if (available[e] > t[e]) {
                        pick = e;
                        break;
                    }
                }
            }
            if (pick < 0) throw Error("backfill found no spare candidates");
            ++t[pick];
            --short_by;
        }
    }
    return t;
}

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

SeededRng::SeededRng(std::uint64_t seed) : engine_(seed) {}

std::uint64_t SeededRng::below(std::uint64_t n) {
    if (n == 0) throw InputError("bounded draw needs n > 0");
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % n;
    for (;;) {
        const std::uint64_t x = engine_();
        if (x < limit) return x % n;
    }
}

std::array<std::vector<std::string>, 4> sample_within_dimension(const std::array<std::vector<std::string>, 4>& candidates,
                                                                 std::size_t quota, std::uint64_t seed,
                                                                 const Mixture& mixture) {
    std::array<std::size_t, 4> avail{};
    std::set<std::string> seen;
    for (std::size_t d = 0; d < 4; ++d) {
        avail[d] = candidates[d].size();
        for (const auto& id : candidates[d])
            if (!seen.insert(id).second) throw InputError("candidate '" + id + "' listed twice");
    }
    const auto targets = difficulty_targets(quota, avail, mixture);
    std::array<std::vector<std::string>, 4> out;
    for (std::size_t d = 0; d < 4; ++d) {
        std::vector<std::string> pool = candidates[d];
        std::sort(pool.begin(), pool.end());
        SeededRng rng(splitmix64(seed + d));
        for (std::size_t i = 0; i < targets[d]; ++i) {
            const auto j = i + static_cast<std::size_t>(rng.below(pool.size() - i));
            std::swap(pool[i], pool[j]);
        }
        pool.resize(targets[d]);
        std::sort(pool.begin(), pool.end());
        out[d] = std::move(pool);
    }
    return out;
}

Benchmark build_benchmark(const std::vector<QaQuestion>& retained, std::size_t budget, std::uint64_t seed,
                          const Mixture& mixture) {
    const auto& names = capability_names();
    std::map<std::string, std::array<std::vector<std::string>, 4>> cands;
    std::map<std::string, const QaQuestion*> by_id;
    for (const auto& name : names) cands[name];
    for (const auto& q : retained) {
        if (!q.capability || !q.difficulty)
            throw StateError("question " + q.question_id + " lacks a capability or difficulty");
        cands[normalize_capability(*q.capability)][static_cast<std::size_t>(*q.difficulty)].push_back(q.question_id);
        if (!by_id.emplace(q.question_id, &q).second) throw InputError("duplicate question_id '" + q.question_id + "'");
    }
    std::map<std::string, std::size_t> avail;
    for (const auto& [name, levels] : cands) {
        std::size_t n = 0;
        for (const auto& l : levels) n += l.size();
        avail[name] = n;
    }
    Benchmark b;
    b.seed = seed;
    b.budget = budget;
    b.allocation = allocate_budget(avail, budget);
    for (std::size_t k = 0; k < names.size(); ++k) {
        const auto picked = sample_within_dimension(cands[names[k]], b.allocation[names[k]], splitmix64(seed + k), mixture);
        for (const auto& level : picked)
            for (const auto& id : level) b.questions.push_back(*by_id.at(id));
    }
    return b;
}

namespace {

Json encode_question(const QaQuestion& q) {
    Json j;
    j["question_id"] = q.question_id;
    j["source_benchmark"] = q.source_benchmark;
    j["video_id"] = q.video_id;
    j["question"] = q.question;
    j["options"] = Json::array({q.options[0], q.options[1], q.options[2], q.options[3]});
    j["ground_truth"] = q.ground_truth;
    j["capability"] = q.capability ? Json(*q.capability) : Json(nullptr);
    j["difficulty"] = q.difficulty ? Json(std::string(to_string(*q.difficulty))) : Json(nullptr);
    j["filter_state"] = to_string(q.filter_state);
    j["phase_a_matches"] = q.phase_a_matches;
    return j;
}

} // namespace

std::string serialize_questions(const std::vector<QaQuestion>& questions) {
    std::string out;
    for (const auto& q : questions) out += encode_question(q).dump() + "\n";
    return out;
}

std::vector<QaQuestion> parse_questions(std::string_view bytes) {
    std::vector<QaQuestion> out;
    std::size_t line_no = 0;
    for (auto line : text::split_lines(bytes)) {
        ++line_no;
        if (text::trim(line).empty()) continue;
        const Json j = json_io::parse(line);
        QaQuestion q;
        q.question_id = json_io::string_field(j, "question_id");
        q.source_benchmark = json_io::string_field(j, "source_benchmark");
        q.video_id = json_io::string_field(j, "video_id");
        q.question = json_io::string_field(j, "question");
        const auto& opts = json_io::field(j, "options");
        if (!opts.is_array() || opts.size() != 4)
            throw InputError("benchmark line " + std::to_string(line_no) + ": expected 4 options");
        for (std::size_t i = 0; i < 4; ++i) q.options[i] = opts[i].get<std::string>();
        q.ground_truth = static_cast<int>(json_io::index_field(j, "ground_truth"));
        if (j.contains("capability") && j["capability"].is_string())
            q.capability = normalize_capability(j["capability"].get<std::string>());
        if (j.contains("difficulty") && j["difficulty"].is_string())
            q.difficulty = difficulty_from_string(j["difficulty"].get<std::string>());
        if (j.contains("filter_state")) q.filter_state = filter_state_from_string(json_io::string_field(j, "filter_state"));
        if (j.contains("phase_a_matches")) q.phase_a_matches = j["phase_a_matches"].get<int>();
        q.validate();
        out.push_back(std::move(q));
    }
    return out;
}

// --- evaluation -------------------------------------------------------------------

namespace {

std::optional<int> answer_token(std::string s) {
    s = text::upper(text::trim(s));
    if (s.rfind("OPTION ", 0) == 0) s = s.substr(7);
    while (!s.empty() && (s.front() == '(' || s.front() == '"')) s.erase(s.begin());
    while (!s.empty() && (s.back() == ')' || s.back() == '.' || s.back() == '"')) s.pop_back();
    if (s == "UNKNOWN") return kUnknownAnswer;
    if (s.size() == 1 && s[0] >= 'A' && s[0] <= 'D') return s[0] - 'A';
    return std::nullopt;
}

} // namespace

std::optional<ParsedAnswer> parse_eval_answer(std::string_view text) {
    const std::string t(text);
    auto b = t.find('{');
    auto e = t.rfind('}');
    if (b != std::string::npos && e != std::string::npos && e > b) {
        try {
            const auto j = Json::parse(t.substr(b, e - b + 1));
            if (j.is_object() && j.contains("answer") && j["answer"].is_string()) {
                if (auto choice = answer_token(j["answer"].get<std::string>())) {
                    ParsedAnswer p;
                    p.choice = *choice;
                    p.rationale = j.value("rationale", std::string());
                    p.observation = j.value("observation", std::string());
                    return p;
                }
            }
        } catch (const nlohmann::json::exception&) {
        }
    }
    static const std::regex answer_re(R"re("?answer"?\s*[:=]\s*"?\(?\s*([A-Da-d]|unknown)\b)re", std::regex::icase);
    std::smatch m;
    if (std::regex_search(t, m, answer_re)) {
        if (auto choice = answer_token(m[1].str())) {
            ParsedAnswer p;
            p.choice = *choice;
            return p;
        }
    }
    return std::nullopt;
}

std::string render_eval_prompt(std::string_view caption, const QaQuestion& q) {
    return text::render(prompt_template("qa_eval"), [&](std::string_view key) -> std::string {
        if (key == "caption") return std::string(text::trim(caption));
        if (key == "question") return q.question;
        if (key == "option_a") return q.options[0];
        if (key == "option_b") return q.options[1];
        if (key == "option_c") return q.options[2];
        if (key == "option_d") return q.options[3];
        throw InputError("evaluation prompt has unknown placeholder '" + std::string(key) + "'");
    });
}

EvalResult evaluate_caption(std::string_view caption, const QaQuestion& q, ModelBackend& backend) {
    EvalResult r;
    r.question_id = q.question_id;
    r.capability = q.capability.value_or("");
    if (text::trim(caption).empty()) {
        r.observation = "empty caption";
        return r;
    }
    ModelRequest req;
    req.role = ModelRole::text_reason;
    req.prompt = render_eval_prompt(caption, q);
    try {
        auto resp = backend.invoke(req);
        auto parsed = parse_eval_answer(resp.text);
        if (!parsed) {
            ModelRequest repair = req;
            repair.prompt = text::render(prompt_template("qa_repair"), [&](std::string_view key) -> std::string {
                if (key == "previous") return resp.text;
                throw InputError("repair prompt has unknown placeholder '" + std::string(key) + "'");
            });
            r.repaired = true;
            parsed = parse_eval_answer(backend.invoke(repair).text);
        }
        if (parsed) {
            r.predicted = parsed->choice;
            r.rationale = parsed->rationale;
            r.observation = parsed->observation;
        } else {
            r.parse_failure = true;
        }
    } catch (const FixtureMissingError&) {
        throw;
    } catch (const BackendError& e) {
        r.errored = true;
        r.error = e.what();
        r.predicted = kUnknownAnswer;
    }
    r.correct = r.predicted != kUnknownAnswer && r.predicted == q.ground_truth;
    return r;
}

std::string serialize_eval_result(const EvalResult& r) {
    Json j;
    j["question_id"] = r.question_id;
    j["capability"] = r.capability;
    j["predicted"] = r.predicted == kUnknownAnswer ? std::string("unknown") : std::string(1, static_cast<char>('A' + r.predicted));
    j["rationale"] = r.rationale;
    j["observation"] = r.observation;
    j["correct"] = r.correct;
    j["parse_failure"] = r.parse_failure;
    j["repaired"] = r.repaired;
    j["errored"] = r.errored;
    j["error"] = r.error;
    return j.dump();
}

EvalResult parse_eval_result(std::string_view line) {
    const Json j = json_io::parse(line);
    EvalResult r;
    r.question_id = json_io::string_field(j, "question_id");
    r.capability = j.value("capability", std::string());
    r.predicted = parse_answer(json_io::string_field(j, "predicted"));
    r.rationale = j.value("rationale", std::string());
    r.observation = j.value("observation", std::string());
    r.correct = j.value("correct", false);
    r.parse_failure = j.value("parse_failure", false);
    r.repaired = j.value("repaired", false);
    r.errored = j.value("errored", false);
    r.error = j.value("error", std::string());
    if (r.correct && r.predicted == kUnknownAnswer)
        throw ValidationError("unknown => correct = false", "result " + r.question_id + " is unknown but marked correct");
    return r;
}

MetricCI bootstrap_mean(const std::vector<std::uint8_t>& outcomes, std::uint64_t seed, std::size_t resamples) {
    MetricCI ci;
    ci.n = outcomes.size();
    if (ci.n == 0) return ci;
    const std::size_t hits = std::accumulate(outcomes.begin(), outcomes.end(), std::size_t{0});
    ci.estimate = static_cast<double>(hits) / static_cast<double>(ci.n);
    if (resamples == 0) {
        ci.lo = ci.hi = ci.estimate;
        return ci;
    }
    SeededRng rng(seed);
    std::vector<double> means(resamples);
    for (std::size_t b = 0; b < resamples; ++b) {
        std::size_t s = 0;
        for (std::size_t i = 0; i < ci.n; ++i) s += outcomes[static_cast<std::size_t>(rng.below(ci.n))];
        means[b] = static_cast<double>(s) / static_cast<double>(ci.n);
    }
    std::sort(means.begin(), means.end());
    auto quantile = [&](double p) {
        const double h = static_cast<double>(resamples - 1) * p;
        const auto lo = static_cast<std::size_t>(std::floor(h));
        const auto hi = std::min(lo + 1, resamples - 1);
        return means[lo] + (h - static_cast<double>(lo)) * (means[hi] - means[lo]);
    };
    ci.lo = std::min(quantile(0.025), ci.estimate);
    ci.hi = std::max(quantile(0.975), ci.estimate);
    return ci;
}

MetricsReport compute_metrics(const std::vector<EvalResult>& results, std::uint64_t seed, std::size_t resamples,
                              bool strict) {
    if (results.empty()) throw InputError("metrics need at least one result");
    MetricsReport rep;
    rep.seed = seed;
    rep.resamples = resamples;
    std::vector<std::uint8_t> correct;
    std::vector<std::uint8_t> unknown;
    std::map<std::string, std::vector<std::uint8_t>> per_dim;
    for (const auto& name : capability_names()) per_dim[name];
    for (const auto& r : results) {
        if (r.errored) ++rep.errored;
        if (r.errored && strict) {
            ++rep.excluded;
            continue;
        }
        const bool ok = r.correct && r.predicted != kUnknownAnswer;
        correct.push_back(ok ? 1 : 0);
        unknown.push_back(r.predicted == kUnknownAnswer ? 1 : 0);
        if (r.predicted == kUnknownAnswer) ++rep.unknown;
        if (!r.capability.empty()) per_dim[normalize_capability(r.capability)].push_back(ok ? 1 : 0);
    }
    if (correct.empty()) throw InputError("every result was excluded; no metrics to compute");
    rep.questions = correct.size();
    rep.overall = bootstrap_mean(correct, splitmix64(seed), resamples);
    rep.no_evidence = bootstrap_mean(unknown, splitmix64(seed + 1), resamples);
    const auto& names = capability_names();
    for (std::size_t k = 0; k < names.size(); ++k)
        rep.per_dimension[names[k]] = bootstrap_mean(per_dim[names[k]], splitmix64(seed + 2 + k), resamples);
    return rep;
}

namespace {

Json encode_ci(const MetricCI& ci) {
    Json j;
    j["n"] = ci.n;
    j["estimate"] = ci.estimate;
    j["ci95"] = Json::array({ci.lo, ci.hi});
    return j;
}

} // namespace

std::string serialize_metrics(const MetricsReport& r) {
    Json j;
    j["questions"] = r.questions;
    j["overall_accuracy"] = encode_ci(r.overall);
    j["no_evidence_rate"] = encode_ci(r.no_evidence);
    Json dims = Json::object();
    for (const auto& [name, ci] : r.per_dimension) dims[name] = encode_ci(ci);
    j["per_dimension"] = std::move(dims);
    j["unknown"] = r.unknown;
    j["errored"] = r.errored;
    j["excluded"] = r.excluded;
    j["bootstrap"] = {{"seed", r.seed}, {"resamples", r.resamples}, {"method", "percentile"}};
    return json_io::dump(j);
}

std::string format_metrics_table(const MetricsReport& r) {
    std::string out;
    char buf[160];
    auto row = [&](const std::string& name, const MetricCI& ci) {
        if (ci.n == 0) std::snprintf(buf, sizeof buf, "%-24s %6zu %8s  %s\n", name.c_str(), ci.n, "-", "-");
        else
            std::snprintf(buf, sizeof buf, "%-24s %6zu %7.1f%%  [%5.1f, %5.1f]\n", name.c_str(), ci.n,
                          100.0 * ci.estimate, 100.0 * ci.lo, 100.0 * ci.hi);
        out += buf;
    };
    std::snprintf(buf, sizeof buf, "%-24s %6s %8s  %s\n", "metric", "n", "value", "95% CI");
    out += buf;
    row("overall accuracy", r.overall);
    row("no-evidence rate", r.no_evidence);
    for (const auto& [name, ci] : r.per_dimension) row(name, ci);
    return out;
}

std::vector<EvalResult> run_evaluation(const std::vector<QaQuestion>& questions,
                                       const std::function<std::string(const std::string&)>& caption_for,
                                       ModelBackend& backend, const std::filesystem::path& log_path,
                                       std::size_t workers) {
    std::map<std::string, EvalResult> done;
    if (std::filesystem::exists(log_path)) {
        const auto bytes = read_file(log_path);
        const auto lines = text::split_lines(bytes);
        for (std::size_t i = 0; i < lines.size(); ++i) {
            if (text::trim(lines[i]).empty()) continue;
            try {
                auto r = parse_eval_result(lines[i]);
                done.emplace(r.question_id, std::move(r));
            } catch (const InputError&) {
                // A torn final line from an interrupted run is redone.
                if (i + 1 != lines.size() && !(i + 2 == lines.size() && text::trim(lines[i + 1]).empty()))
                    throw StateError("evaluation log '" + log_path.string() + "' is corrupt at line " +
                                     std::to_string(i + 1) + "; remove the line or the file to continue");
            }
        }
    }
    std::vector<std::size_t> todo;
    for (std::size_t i = 0; i < questions.size(); ++i)
        if (!done.count(questions[i].question_id)) todo.push_back(i);

    if (!todo.empty()) {
        if (log_path.has_parent_path()) std::filesystem::create_directories(log_path.parent_path());
        std::ofstream log(log_path, std::ios::app | std::ios::binary);
        if (!log) throw InputError("cannot append to '" + log_path.string() + "'");
        std::mutex mu;
        std::atomic<std::size_t> next{0};
        std::exception_ptr failure;
        auto work = [&] {
            for (;;) {
                const std::size_t k = next.fetch_add(1);
                if (k >= todo.size()) return;
                {
                    std::lock_guard lock(mu);
                    if (failure) return;
                }
                try {
                    const auto& q = questions[todo[k]];
                    auto r = evaluate_caption(caption_for(q.video_id), q, backend);
                    std::lock_guard lock(mu);
                    log << serialize_eval_result(r) << '\n';
                    log.flush();
                    done.emplace(r.question_id, std::move(r));
                } catch (...) {
                    std::lock_guard lock(mu);
                    if (!failure) failure = std::current_exception();
                    return;
                }
            }
        };
        std::vector<std::thread> pool;
        for (std::size_t w = 1; w < std::max<std::size_t>(1, workers); ++w) pool.emplace_back(work);
        work();
        for (auto& t : pool) t.join();
        if (failure) std::rethrow_exception(failure);
    }
    std::vector<EvalResult> out;
    for (const auto& q : questions) out.push_back(done.at(q.question_id));
    return out;
}

} // namespace codeccap
