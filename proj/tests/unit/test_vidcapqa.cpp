#include "codeccap/error.hpp"
#include "codeccap/vidcapqa.hpp"
#include "synthetic.hpp"

#include <doctest.h>
#include <json.hpp>

#include <cstdlib>
#include <fstream>
#include <numeric>
#include <set>

using namespace codeccap;
using codeccap::testing::ScriptedTransport;

namespace {

// Phase A outcome for ground truth 0, indexed 16a + 4b + c over the three
// answers. N normal, S suspected wrong ground truth, P phase B pending.
constexpr const char* kPhaseATable =
    "NNNN" "NPPP" "NPPP" "NPPP"
    "NPPP" "PSPP" "PPPP" "PPPP"
    "NPPP" "PPPP" "PPSP" "PPPP"
    "NPPP" "PPPP" "PPPP" "PPPS";

// Phase B outcome indexed 4a + 2b + c over the confirmations.
// D discarded, L likely correct, C consensus hard.
constexpr const char* kPhaseBTable = "DDDLDLLC";

FilterState phase_a_letter(char c) {
    return c == 'N' ? FilterState::normal : c == 'S' ? FilterState::suspected_wrong_gt : FilterState::phase_b_pending;
}

FilterState phase_b_letter(char c) {
    return c == 'C' ? FilterState::consensus_hard : c == 'L' ? FilterState::likely_correct : FilterState::discarded;
}

QaQuestion question(std::string id, int gt = 0) {
    QaQuestion q;
    q.question_id = std::move(id);
    q.source_benchmark = "mvbench";
    q.video_id = "v";
    q.question = "Which way does the ball move?";
    q.options = {"left", "right", "up", "down"};
    q.ground_truth = gt;
    return q;
}

std::map<std::string, std::size_t> abundant(std::size_t each) {
    std::map<std::string, std::size_t> m;
    for (const auto& n : capability_names()) m[n] = each;
    return m;
}

struct LiveText {
    LiveText() {
        setenv("CODECCAP_JUDGE_KEY", "k", 1);
        transport = std::make_shared<ScriptedTransport>();
        BackendConfig cfg;
        cfg.profile_name = "judge";
        cfg.endpoint = "http://localhost:1/x";
        cfg.mode = BackendMode::live;
        cfg.rpm_limit = 1e9;
        backend = std::make_unique<ModelBackend>(cfg, transport, std::make_shared<ManualClock>());
    }
    std::shared_ptr<ScriptedTransport> transport;
    std::unique_ptr<ModelBackend> backend;
};

} // namespace

TEST_CASE("capability relabeling") {
    CHECK_FALSE(relabel_capability({"action_recognition", "action_recognition", "unknown", "unknown"}));
    CHECK(relabel_capability({"action_recognition", "action_recognition", "unknown", "unknown"}, false) ==
          "action_recognition");
    CHECK(relabel_capability({"action recognition", "Action Recognition", "action_recognition", "counting"}) ==
          "action_recognition");
    CHECK_FALSE(relabel_capability({"action_recognition", "action_recognition", "counting", "counting"}));
    CHECK_FALSE(relabel_capability({"counting", "speed", "rotation", "unknown"}));
    CHECK(relabel_capability({"counting", "counting", "speed", "unknown"}) == "counting");
    CHECK_THROWS_AS(relabel_capability({"counting", "counting", "counting"}), InputError);
    CHECK_THROWS_AS(relabel_capability({"counting", "counting", "counting", "juggling"}), InputError);
}

TEST_CASE("text leak filter") {
    CHECK_FALSE(text_leak(0, {1, 2}));
    CHECK(text_leak(0, {0, 2}));
    CHECK(text_leak(0, {0, 0}));
    CHECK_FALSE(text_leak(0, {kUnknownAnswer, kUnknownAnswer}));
}

TEST_CASE("phase A matches the truth table on all 64 patterns") {
    for (int gt = 0; gt < 4; ++gt) {
        for (int i = 0; i < 64; ++i) {
            // relabel answers so the table, written for ground truth 0, applies
            auto shift = [&](int a) { return (a + gt) % 4; };
            std::vector<int> answers{shift(i / 16), shift(i / 4 % 4), shift(i % 4)};
            INFO("gt " << gt << " pattern " << i);
            CHECK(phase_a_classify(gt, answers) == phase_a_letter(kPhaseATable[i]));
        }
    }
}

TEST_CASE("phase B matches the truth table on all 8 patterns") {
    for (int i = 0; i < 8; ++i) {
        std::vector<bool> c{bool(i & 4), bool(i & 2), bool(i & 1)};
        CHECK(phase_b_classify(c) == phase_b_letter(kPhaseBTable[i]));
    }
}

TEST_CASE("phase A with unknown answers") {
    CHECK(phase_a_classify(1, {kUnknownAnswer, 1, 1}) == FilterState::normal);
    CHECK(phase_a_classify(1, {kUnknownAnswer, kUnknownAnswer, kUnknownAnswer}) == FilterState::phase_b_pending);
    CHECK(phase_a_classify(1, {2, 2, kUnknownAnswer}) == FilterState::phase_b_pending);
}

TEST_CASE("difficulty assignment") {
    auto q = question("q");
    q.filter_state = FilterState::normal;
    q.phase_a_matches = 3;
    CHECK(assign_difficulty(q) == Difficulty::easy);
    q.phase_a_matches = 2;
    CHECK(assign_difficulty(q) == Difficulty::medium);
    q.filter_state = FilterState::likely_correct;
    CHECK(assign_difficulty(q) == Difficulty::hard);
    q.filter_state = FilterState::consensus_hard;
    CHECK(assign_difficulty(q) == Difficulty::very_hard);
    q.filter_state = FilterState::discarded;
    CHECK_THROWS_AS(assign_difficulty(q), StateError);
}

TEST_CASE("budget allocation") {
    SUBCASE("trajectory capped at 41") {
        auto avail = abundant(500);
        avail["trajectory"] = 41;
        auto alloc = allocate_budget(avail, 1000);
        CHECK(alloc["trajectory"] == 41);
        std::size_t n74 = 0, n73 = 0, total = 0;
        for (const auto& [name, n] : alloc) {
            total += n;
            if (n == 74) ++n74;
            if (n == 73) ++n73;
        }
        CHECK(total == 1000);
        CHECK(n74 == 10);
        CHECK(n73 == 3);
        // equal availability falls back to name order
        CHECK(alloc["action_recognition"] == 74);
        CHECK(alloc["temporal_sequence"] == 73);
    }
    SUBCASE("uniform") {
        for (const auto& [name, n] : allocate_budget(abundant(10), 14)) CHECK(n == 1);
    }
    SUBCASE("two rare dimensions") {
        auto avail = abundant(500);
        avail["speed"] = 30;
        avail["rotation"] = 50;
        avail["counting"] = 600;
        auto alloc = allocate_budget(avail, 1000);
        CHECK(alloc["speed"] == 30);
        CHECK(alloc["rotation"] == 50);
        CHECK(alloc["counting"] == 77);  // most available gets a larger share first
        std::size_t total = 0;
        for (const auto& [name, n] : alloc) {
            total += n;
            if (name != "speed" && name != "rotation") CHECK((n == 76 || n == 77));
        }
        CHECK(total == 1000);
    }
    SUBCASE("budget beyond supply") {
        CHECK_THROWS_AS(allocate_budget(abundant(10), 141), InputError);
    }
}

TEST_CASE("allocation totals the budget and respects availability") {
    std::mt19937_64 rng(8);
    std::uniform_int_distribution<std::size_t> avail_d(0, 150);
    for (int trial = 0; trial < 500; ++trial) {
        std::map<std::string, std::size_t> avail;
        std::size_t supply = 0;
        for (const auto& n : capability_names()) supply += avail[n] = avail_d(rng);
        std::uniform_int_distribution<std::size_t> b(0, supply);
        const std::size_t budget = b(rng);
        auto alloc = allocate_budget(avail, budget);
        std::size_t total = 0;
        std::size_t lo = SIZE_MAX, hi = 0;
        for (const auto& [name, n] : alloc) {
            total += n;
            CHECK(n <= avail[name]);
            if (n < avail[name]) {
                lo = std::min(lo, n);
                hi = std::max(hi, n);
            }
        }
        CHECK(total == budget);
        // dimensions that were not exhausted differ by at most one
        if (hi > 0) CHECK(hi - lo <= 1);
        for (const auto& [name, n] : alloc)
            if (n == avail[name] && hi > 0) CHECK(n <= hi);
    }
}

TEST_CASE("largest remainder targets") {
    CHECK(largest_remainder(74) == std::array<std::size_t, 4>{22, 26, 19, 7});
    CHECK(largest_remainder(73) == std::array<std::size_t, 4>{22, 26, 18, 7});
    CHECK(largest_remainder(41) == std::array<std::size_t, 4>{12, 15, 10, 4});
    CHECK(largest_remainder(10) == std::array<std::size_t, 4>{3, 4, 2, 1});
    CHECK(largest_remainder(0) == std::array<std::size_t, 4>{0, 0, 0, 0});
    for (std::size_t q = 0; q < 300; ++q) {
        auto t = largest_remainder(q);
        CHECK(std::accumulate(t.begin(), t.end(), std::size_t{0}) == q);
        for (int d = 0; d < 4; ++d) {
            const double ideal = q * double(kDefaultMixture[d]) / 100.0;
            CHECK(std::abs(double(t[d]) - ideal) < 1.0);
        }
    }
}

TEST_CASE("backfill moves shortfalls to neighbours") {
    CHECK(difficulty_targets(41, {5, 10, 20, 6}) == std::array<std::size_t, 4>{5, 10, 20, 6});
    CHECK(difficulty_targets(74, {100, 100, 100, 100}) == std::array<std::size_t, 4>{22, 26, 19, 7});
    // very hard short by 5: nearest level is hard
    CHECK(difficulty_targets(74, {100, 100, 100, 2}) == std::array<std::size_t, 4>{22, 26, 24, 2});
    // medium short by 6: easy and hard are equally near, easy wins
    CHECK(difficulty_targets(74, {100, 20, 100, 100}) == std::array<std::size_t, 4>{28, 20, 19, 7});
    CHECK_THROWS_AS(difficulty_targets(74, {10, 10, 10, 10}), InputError);
}

TEST_CASE("within-dimension sampling") {
    std::array<std::vector<std::string>, 4> cands;
    const char* tags[] = {"e", "m", "h", "v"};
    for (int d = 0; d < 4; ++d)
        for (int i = 0; i < 40; ++i) cands[d].push_back(std::string(tags[d]) + std::to_string(100 + i));
    auto a = sample_within_dimension(cands, 74, 42);
    auto b = sample_within_dimension(cands, 74, 42);
    CHECK(a == b);
    for (int d = 0; d < 4; ++d) {
        CHECK(a[d].size() == largest_remainder(74)[d]);
        CHECK(std::is_sorted(a[d].begin(), a[d].end()));
        std::set<std::string> uniq(a[d].begin(), a[d].end());
        CHECK(uniq.size() == a[d].size());
    }
    bool differs = false;
    for (std::uint64_t seed = 1; seed < 6; ++seed) differs = differs || sample_within_dimension(cands, 74, seed) != a;
    CHECK(differs);
    CHECK_THROWS_AS(sample_within_dimension(cands, 161, 1), InputError);
}

TEST_CASE("seeded sampling is roughly uniform") {
    // each of 10 candidates picked 3 at a time over many seeds
    std::array<std::vector<std::string>, 4> cands;
    for (int i = 0; i < 10; ++i) cands[0].push_back("q" + std::to_string(i));
    std::map<std::string, int> hits;
    const Mixture all_easy{1, 0, 0, 0};
    for (std::uint64_t seed = 0; seed < 4000; ++seed) {
        const auto picked = sample_within_dimension(cands, 3, seed, all_easy);
        for (const auto& id : picked[0]) ++hits[id];
    }
    for (const auto& [id, n] : hits) CHECK(std::abs(n - 1200) < 150);
}

TEST_CASE("filter pipeline replays from stored votes") {
    std::vector<QaQuestion> pool;
    std::string relabel, text_only, phase_a, phase_b;
    auto line = [](const std::string& q, const std::string& voter, const nlohmann::json& vote) {
        return nlohmann::json{{"question_id", q}, {"voter_id", voter}, {"vote", vote}}.dump() + "\n";
    };
    std::mt19937_64 rng(4);
    for (int i = 0; i < 300; ++i) {
        auto id = "q" + std::to_string(i);
        pool.push_back(question(id, i % 4));
        const auto& caps = capability_names();
        for (int v = 0; v < 4; ++v)
            relabel += line(id, "l" + std::to_string(v), rng() % 5 == 0 ? "unknown" : caps[i % 14]);
        for (int v = 0; v < 2; ++v) text_only += line(id, "t" + std::to_string(v), std::string(1, char('A' + rng() % 4)));
        for (int v = 0; v < 3; ++v) phase_a += line(id, "a" + std::to_string(v), int(rng() % 4));
        for (int v = 0; v < 3; ++v) phase_b += line(id, "b" + std::to_string(v), rng() % 3 != 0);
    }
    VoteBook book = parse_votes(relabel, VotePhase::relabel);
    book = parse_votes(text_only, VotePhase::text_only, book);
    book = parse_votes(phase_a, VotePhase::phase_a, book);
    book = parse_votes(phase_b, VotePhase::phase_b, book);
    auto first = run_filters(pool, book);
    auto second = run_filters(pool, book);
    CHECK(first.questions == second.questions);
    CHECK(first.retained == second.retained);
    std::set<FilterState> states;
    for (const auto& q : first.questions) states.insert(q.filter_state);
    CHECK(states.count(FilterState::text_leak));
    CHECK(states.count(FilterState::normal));
    CHECK(states.count(FilterState::discarded));
    for (const auto& q : first.retained) CHECK(q.difficulty.has_value());

    // the same votes written to a directory
    auto dir = codeccap::testing::temp_dir("votes");
    std::ofstream(dir / "relabel.jsonl") << relabel;
    std::ofstream(dir / "text_only.jsonl") << text_only;
    std::ofstream(dir / "phase_a.jsonl") << phase_a;
    std::ofstream(dir / "phase_b.jsonl") << phase_b;
    CHECK(run_filters(pool, load_votes(dir)).questions == first.questions);
}

TEST_CASE("pool ingestion through adapters") {
    auto adapters = parse_adapters(R"({"tempcompass": {"question_id": "qid", "question": "prompt",
                                        "options": "choices", "ground_truth": "answer", "video_id": "video"}})");
    auto pool = parse_pool(
        "{\"source\":\"TempCompass\",\"qid\":\"t1\",\"video\":\"v1\",\"prompt\":\"Speed?\","
        "\"choices\":[\"slow\",\"fast\",\"still\",\"reverse\"],\"answer\":\"fast\"}\n"
        "{\"source_benchmark\":\"mvbench\",\"question_id\":\"m1\",\"video_id\":\"v2\",\"question\":\"Count?\","
        "\"options\":{\"A\":\"1\",\"B\":\"2\",\"C\":\"3\",\"D\":\"4\"},\"ground_truth\":\"C\"}\n",
        adapters);
    REQUIRE(pool.size() == 2);
    CHECK(pool[0].source_benchmark == "tempcompass");
    CHECK(pool[0].ground_truth == 1);
    CHECK(pool[1].ground_truth == 2);
    CHECK_THROWS_AS(parse_pool("{\"source\":\"mvbench\",\"question_id\":\"x\",\"video_id\":\"v\",\"question\":\"q\","
                               "\"options\":[\"a\",\"b\",\"c\"],\"ground_truth\":0}\n"),
                    InputError);
    CHECK_THROWS_AS(parse_pool("{\"source\":\"nowhere\"}\n"), InputError);
}

TEST_CASE("benchmark build hits quota and mixture") {
    std::vector<QaQuestion> retained;
    int n = 0;
    for (const auto& cap : capability_names()) {
        const int per_level = cap == "trajectory" ? 11 : 40;
        for (int d = 0; d < 4; ++d)
            for (int i = 0; i < per_level; ++i) {
                auto q = question("q" + std::to_string(n++));
                q.capability = cap;
                q.difficulty = static_cast<Difficulty>(d);
                q.filter_state = d < 2 ? FilterState::normal : (d == 2 ? FilterState::likely_correct : FilterState::consensus_hard);
                q.phase_a_matches = d == 0 ? 3 : 2;
                retained.push_back(q);
            }
    }
    auto b = build_benchmark(retained, 1000, 7);
    CHECK(b.questions.size() == 1000);
    CHECK(b.allocation["trajectory"] == 44);
    auto again = build_benchmark(retained, 1000, 7);
    CHECK(again.questions == b.questions);
    std::map<std::string, std::array<std::size_t, 4>> per;
    for (const auto& q : b.questions) per[*q.capability][static_cast<int>(*q.difficulty)]++;
    for (const auto& [cap, counts] : per) {
        if (cap == "trajectory") continue;
        CHECK(counts == largest_remainder(b.allocation[cap]));
    }
    CHECK(parse_questions(serialize_questions(b.questions)) == b.questions);
}

TEST_CASE("answer parsing") {
    auto a = parse_eval_answer(R"({"rationale":"r","observation":"o","answer":"B"})");
    REQUIRE(a);
    CHECK(a->choice == 1);
    CHECK(a->observation == "o");
    CHECK(parse_eval_answer("```json\n{\"answer\": \"unknown\"}\n```")->choice == kUnknownAnswer);
    CHECK(parse_eval_answer("Answer: (C)")->choice == 2);
    CHECK_FALSE(parse_eval_answer("I think it is probably the second one"));
    CHECK(parse_answer("D") == 3);
    CHECK(parse_answer("0") == 0);
    CHECK(parse_answer("unknown") == kUnknownAnswer);
    CHECK_THROWS_AS(parse_answer("E"), InputError);
}

TEST_CASE("caption-then-predict") {
    LiveText live;
    live.transport->add_rule([](const std::string& p) -> std::optional<std::string> {
        if (p.find("moves left") != std::string::npos)
            return std::string(R"({"rationale":"The caption says so.","observation":"The ball moves left.","answer":"A"})");
        if (p.find("could not be used") != std::string::npos || p.find("previous") != std::string::npos)
            return std::string(R"({"answer":"unknown"})");
        if (p.find("garbled") != std::string::npos) return std::string("hmm");
        return std::string(R"({"rationale":"Nothing relevant.","observation":"","answer":"unknown"})");
    });
    auto q = question("q1", 0);
    q.capability = "direction";
    SUBCASE("evidence in the caption") {
        auto r = evaluate_caption("A ball on a table. The ball moves left.", q, *live.backend);
        CHECK(r.predicted == 0);
        CHECK(r.correct);
        CHECK(r.observation == "The ball moves left.");
    }
    SUBCASE("irrelevant caption") {
        auto r = evaluate_caption("A bowl of soup.", q, *live.backend);
        CHECK(r.predicted == kUnknownAnswer);
        CHECK_FALSE(r.correct);
    }
    SUBCASE("empty caption makes no call") {
        auto r = evaluate_caption("   ", q, *live.backend);
        CHECK(r.predicted == kUnknownAnswer);
        CHECK(live.transport->calls() == 0);
    }
    SUBCASE("unparseable answer gets one repair") {
        auto r = evaluate_caption("garbled text", q, *live.backend);
        CHECK(r.repaired);
        CHECK(live.transport->calls() == 2);
        CHECK(r.predicted == kUnknownAnswer);
    }
    CHECK(render_eval_prompt("cap", q).find("special token unknown") != std::string::npos);
}

TEST_CASE("metrics") {
    auto make = [](std::size_t correct, std::size_t total, std::size_t unknown) {
        std::vector<EvalResult> rs;
        for (std::size_t i = 0; i < total; ++i) {
            EvalResult r;
            r.question_id = "q" + std::to_string(i);
            r.capability = capability_names()[i % 14];
            r.correct = i < correct;
            r.predicted = i < correct ? 0 : (i < correct + unknown ? kUnknownAnswer : 1);
            rs.push_back(r);
        }
        return rs;
    };
    SUBCASE("all correct") {
        auto m = compute_metrics(make(50, 50, 0), 1, 2000);
        CHECK(m.overall.estimate == 1.0);
        CHECK(m.overall.lo == 1.0);
        CHECK(m.overall.hi == 1.0);
        CHECK(m.no_evidence.estimate == 0.0);
    }
    SUBCASE("444 of 1000") {
        auto rs = make(444, 1000, 100);
        auto m = compute_metrics(rs, 2024, 10000);
        CHECK(m.overall.estimate == doctest::Approx(0.444));
        CHECK(m.overall.lo <= 0.444);
        CHECK(m.overall.hi >= 0.444);
        CHECK(m.overall.hi - m.overall.lo < 0.07);
        CHECK(m.no_evidence.estimate == doctest::Approx(0.1));
        CHECK(m.unknown == 100);
        CHECK(m.per_dimension.size() == 14);
        auto again = compute_metrics(rs, 2024, 10000);
        CHECK(again == m);
        CHECK(serialize_metrics(again) == serialize_metrics(m));
        for (const auto& [cap, ci] : m.per_dimension) {
            CHECK(ci.lo <= ci.estimate);
            CHECK(ci.estimate <= ci.hi);
        }
    }
    SUBCASE("unknown is never correct") {
        auto rs = make(10, 20, 0);
        rs[0].predicted = kUnknownAnswer;  // flagged correct with an unknown answer
        auto m = compute_metrics(rs, 1, 100);
        CHECK(m.overall.estimate == doctest::Approx(9.0 / 20.0));
        CHECK(m.unknown == 1);
    }
    SUBCASE("errored results") {
        auto rs = make(10, 20, 0);
        rs[15].errored = true;
        rs[15].predicted = kUnknownAnswer;
        auto lax = compute_metrics(rs, 1, 500);
        CHECK(lax.overall.n == 20);
        CHECK(lax.unknown == 1);
        auto strict = compute_metrics(rs, 1, 500, true);
        CHECK(strict.overall.n == 19);
        CHECK(strict.excluded == 1);
    }
}

TEST_CASE("wider samples give narrower intervals") {
    double small_width = 0, large_width = 0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        std::vector<std::uint8_t> small(50), large(800);
        for (std::size_t i = 0; i < small.size(); ++i) small[i] = i % 2;
        for (std::size_t i = 0; i < large.size(); ++i) large[i] = i % 2;
        auto a = bootstrap_mean(small, seed, 2000);
        auto b = bootstrap_mean(large, seed, 2000);
        small_width += a.hi - a.lo;
        large_width += b.hi - b.lo;
    }
    CHECK(large_width < small_width);
}

TEST_CASE("evaluation resumes from its log") {
    LiveText live;
    live.transport->add_rule([](const std::string&) -> std::optional<std::string> {
        return std::string(R"({"rationale":"r","observation":"o","answer":"A"})");
    });
    std::vector<QaQuestion> qs;
    for (int i = 0; i < 6; ++i) {
        auto q = question("q" + std::to_string(i), i % 2);
        q.capability = "counting";
        q.video_id = "vid" + std::to_string(i);
        qs.push_back(q);
    }
    auto log = codeccap::testing::temp_dir("evallog") / "results.jsonl";
    auto caption = [](const std::string& vid) { return vid == "vid5" ? std::string() : "caption for " + vid; };
    std::vector<QaQuestion> head(qs.begin(), qs.begin() + 3);
    run_evaluation(head, caption, *live.backend, log, 2);
    CHECK(live.transport->calls() == 3);
    auto all = run_evaluation(qs, caption, *live.backend, log, 2);
    CHECK(live.transport->calls() == 5);
    REQUIRE(all.size() == 6);
    for (std::size_t i = 0; i < all.size(); ++i) CHECK(all[i].question_id == qs[i].question_id);
    CHECK(all[0].correct);
    CHECK_FALSE(all[1].correct);
    CHECK(all[5].predicted == kUnknownAnswer);
}
