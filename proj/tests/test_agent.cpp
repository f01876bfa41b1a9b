#include <algorithm>
#include <atomic>
#include <set>
#include <thread>

#include "doctest.h"
#include "httplib.h"

#include "eafd/agent.hpp"
#include "eafd/core/error.hpp"
#include "eafd/fdsl/parser.hpp"
#include "eafd/synthbench.hpp"

using namespace eafd;
using namespace eafd::agent;
using nlohmann::json;

namespace {

const std::string kScript = std::string(EAFD_ASSET_DIR) + "/mock/synth_discovery.json";

const data::Dataset& synth_small() {
  static const data::Dataset ds = [] {
    synth::SynthConfig c;
    c.n_users = 1000;
    c.seed = 11;
    return synth::generate(c).dataset;
  }();
  return ds;
}

DiscoveryConfig fast_config() {
  DiscoveryConfig c;
  c.target = "y";
  c.scoring.probe.n_trees = 60;
  return c;
}

MockGenerator scripted(const json& iterations, const json& repairs = json::object()) {
  return MockGenerator(MockScript::from_json({{"iterations", iterations}, {"repairs", repairs}}));
}

class Unreachable : public Generator {
 public:
  std::string propose(const ProposeRequest&) override { fail(); }
  std::string repair(const RepairRequest&) override { fail(); }

 private:
  [[noreturn]] static void fail() { throw Error(ErrorKind::GeneratorUnreachable, "down"); }
};

// Scripted for the first `working` iterations, unreachable afterwards.
class FailsAfter : public Generator {
 public:
  FailsAfter(MockGenerator inner, int working) : inner_(std::move(inner)), working_(working) {}
  std::string propose(const ProposeRequest& r) override {
    if (r.iteration > working_) throw Error(ErrorKind::GeneratorUnreachable, "down");
    return inner_.propose(r);
  }
  std::string repair(const RepairRequest& r) override { return inner_.repair(r); }

 private:
  MockGenerator inner_;
  int working_;
};

void check_state_invariants(const IterationState& s) {
  std::set<std::string> texts;
  for (const auto& r : s.ledger) CHECK(texts.insert(r.dsl).second);
  for (auto idx : s.accepted) {
    REQUIRE(idx < s.ledger.size());
    CHECK(s.ledger[idx].verdict == scoring::Verdict::Complementary);
  }
  for (const auto& r : s.rejected) CHECK_FALSE(r.diagnostics.empty());
  for (std::size_t i = 1; i < s.history.size(); ++i) CHECK(s.history[i].metric >= s.history[i - 1].metric);
}

const std::string kShareC7 = "count(where mcc == \"c7\") / count()";

}  // namespace

TEST_CASE("prompt assets render and their examples parse") {
  const auto& p = prompts();
  CHECK(p.version == "v1");
  CHECK(p.propose.find("{{reflection}}") != std::string::npos);
  CHECK(p.repair.find("{{diagnostic}}") != std::string::npos);
  const auto schema = synth_small().schema();
  for (const char* ex : {"count(where mcc == \"c3\") / count()", "mean(amount, window=last_days(30))", "hhi(mcc)"}) {
    CHECK(p.system.find(ex) != std::string::npos);
    CHECK_NOTHROW(fdsl::parse(ex, schema));
  }
  CHECK(render_template("a {{x}} b {{x}} {{y}}", {{"x", "1"}, {"y", "{{x}}"}}) == "a 1 b 1 {{x}}");
}

TEST_CASE("generator spec requires exactly one kind") {
  CHECK_THROWS_AS(GeneratorSpec::from_json(json::object()), Error);
  CHECK_THROWS_AS(GeneratorSpec::from_json({{"mock", {{"script", "a"}}}, {"http", {{"endpoint", "http://x"}, {"model", "m"}}}}),
                  Error);
  CHECK_THROWS_AS(GeneratorSpec::from_json({{"http", {{"endpoint", "http://x"}}}}), Error);
  CHECK_THROWS_AS(GeneratorSpec::from_json({{"mocks", {{"script", "a"}}}}), Error);
  const auto spec = GeneratorSpec::from_json({{"http", {{"endpoint", "http://h:1/v1/chat/completions"}, {"model", "m"}}}});
  REQUIRE(spec.http);
  CHECK(spec.http->max_output_tokens == 16384);
  CHECK(GeneratorSpec::from_json(spec.to_json()).to_json() == spec.to_json());
  try {
    GeneratorSpec::from_json(json::object());
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Config);
  }
}

TEST_CASE("candidate extraction") {
  SUBCASE("prose around a fenced block") {
    const auto ex = extract_candidates(
        "Here you go [see below]:\n```json\n[{\"name\": \"a\", \"dsl\": \"hhi(mcc)\", \"rationale\": \"r\"},"
        " {\"dsl\": \"count()\"}]\n```\nThanks.",
        10);
    REQUIRE_FALSE(ex.diagnostic);
    REQUIRE(ex.candidates.size() == 2);
    CHECK(ex.candidates[0].name == "a");
    CHECK(ex.candidates[0].rationale == "r");
    CHECK(ex.candidates[1].dsl == "count()");
  }
  SUBCASE("bare array after prose") {
    const auto ex = extract_candidates("I suggest [\"hhi(mcc)\", \"span_days()\", \"count()\"] today", 2);
    REQUIRE_FALSE(ex.diagnostic);
    REQUIRE(ex.candidates.size() == 2);
    CHECK(ex.candidates[1].dsl == "span_days()");
  }
  SUBCASE("brackets inside strings") {
    const auto ex = extract_candidates("[{\"dsl\": \"count()\", \"rationale\": \"uses ] and [\"}]", 5);
    REQUIRE(ex.candidates.size() == 1);
  }
  SUBCASE("malformed") {
    const auto ex = extract_candidates("```json\n[{\"dsl\": \"count()\",\n```", 5);
    REQUIRE(ex.diagnostic);
    CHECK(ex.diagnostic->find("not valid JSON") != std::string::npos);
    CHECK(ex.candidates.empty());
    CHECK(extract_candidates("nothing here", 5).diagnostic);
    CHECK(extract_candidates("[{\"x\": 1}]", 5).diagnostic);
  }
  SUBCASE("empty array is valid") {
    const auto ex = extract_candidates("```json\n[]\n```", 5);
    CHECK_FALSE(ex.diagnostic);
    CHECK(ex.candidates.empty());
  }
  CHECK(extract_repaired_dsl("```json\n{\"dsl\": \"count()\"}\n```") == "count()");
  CHECK(extract_repaired_dsl("```\nhhi(mcc)\n```") == "hhi(mcc)");
  CHECK(extract_repaired_dsl("[{\"dsl\": \"span_days()\"}]") == "span_days()");
  CHECK(extract_repaired_dsl("  count()  \n") == "count()");
}

TEST_CASE("mock generator replays its script") {
  auto gen = scripted(json::array({json::array({"hhi(mcc)", "span_days()"})}));
  const auto ex = extract_candidates(gen.propose({1, 10, {}}), 10);
  REQUIRE(ex.candidates.size() == 2);
  CHECK(ex.candidates[0].dsl == "hhi(mcc)");
  CHECK(ex.candidates[1].dsl == "span_days()");
  CHECK(extract_candidates(gen.propose({2, 10, {}}), 10).candidates.empty());
  CHECK_FALSE(extract_candidates(gen.propose({2, 10, {}}), 10).diagnostic);
  CHECK_THROWS_AS(MockScript::from_json({{"iterations", {1}}}), Error);
  CHECK_NOTHROW(MockScript::load(kScript));
}

TEST_CASE("repair rounds") {
  const auto& ds = synth_small();
  SUBCASE("scripted fix accepted on round one") {
    auto gen = scripted(json::array(), {{"count(window=last_days(-3))", "count(window=last_days(3))"}});
    const auto v = validate_candidate("count(window=last_days(-3))", ds);
    REQUIRE_FALSE(v.feature);
    const auto out = repair(gen, "count(window=last_days(-3))", v.diagnostic, ds, 1);
    REQUIRE(out.feature);
    CHECK(out.rounds == 1);
    CHECK(out.feature->canonical() == "count(window=last_days(3))");
  }
  SUBCASE("three failed rounds give a rejection with every diagnostic") {
    auto gen = scripted(json::array());
    const auto v = validate_candidate("mean(mcc)", ds);
    REQUIRE_FALSE(v.feature);
    const auto out = repair(gen, "mean(mcc)", v.diagnostic, ds, 1, 3);
    CHECK_FALSE(out.feature);
    CHECK(out.rounds == 3);
    CHECK(out.diagnostics.size() == 4);
  }
  SUBCASE("unknown field names the nearest field") {
    const auto v = validate_candidate("nunique(mccc)", ds);
    REQUIRE_FALSE(v.feature);
    CHECK(v.diagnostic.find("'mcc'") != std::string::npos);
  }
  SUBCASE("transport failure mid-repair") {
    Unreachable gen;
    const auto out = repair(gen, "mean(mcc)", "bad", ds, 1);
    CHECK_FALSE(out.feature);
    CHECK(out.transport_failure);
    CHECK(out.diagnostics.back().find("transport") != std::string::npos);
  }
}

TEST_CASE("reflection contents and budget") {
  const auto& ds = synth_small();
  IterationState s;
  const auto cfg = fast_config();
  const auto r = build_reflection(s, ds, cfg);
  CHECK(r["iteration"] == 1);
  CHECK(r["accepted"].empty());
  CHECK(r["samples"].size() == 3);
  CHECK(r["samples"][0]["events"].size() == 20);
  CHECK(r["schema"]["fields"].size() == 2);
  CHECK(r["labels"]["name"] == "y");
  CHECK(r["truncated"] == false);
  CHECK(build_reflection(s, ds, cfg).dump() == r.dump());

  auto without_samples = r;
  without_samples["samples"] = json::array();
  auto tight = cfg;
  tight.reflection_tokens = without_samples.dump(2).size() / 4 + 200;
  const auto t = build_reflection(s, ds, tight);
  CHECK(t["truncated"] == true);
  CHECK(t.dump(2).size() / 4 <= tight.reflection_tokens);
  CHECK(t["samples"].dump().size() < r["samples"].dump().size());
  CHECK(t["schema"] == r["schema"]);
}

TEST_CASE("iteration accepts a planted blind-spot feature") {
  const auto& ds = synth_small();
  const auto cfg = fast_config();
  const auto ctx = LoopContext::make(ds, cfg);
  const auto s0 = initial_state(ctx, cfg);
  auto gen = scripted(json::array({json::array({kShareC7, "mean(amount)"}), json::array({kShareC7, "mean( amount )"})}));
  const auto s1 = run_iteration(s0, ctx, cfg, gen);
  REQUIRE(s1.accepted.size() == 1);
  CHECK(s1.ledger[s1.accepted[0]].dsl == fdsl::canonical_print(fdsl::parse(kShareC7)));
  CHECK(s1.ledger[s1.accepted[0]].importance_rank.has_value());
  CHECK(s1.metric > s0.metric);
  check_state_invariants(s1);

  const auto r = build_reflection(s1, ds, cfg);
  CHECK(r["accepted"].size() == 1);
  CHECK(r["accepted"][0].contains("utility"));
  CHECK_FALSE(r["accepted"][0]["importance_rank"].is_null());
  CHECK(r["last_iteration"].size() == 2);

  const auto s2 = run_iteration(s1, ctx, cfg, gen);
  CHECK(s2.ledger.size() == s1.ledger.size());
  CHECK(s2.metric == s1.metric);
  CHECK(s2.rejected.size() == 2);
  for (const auto& rej : s2.rejected) CHECK(rej.reason == "duplicate");
  check_state_invariants(s2);
}

TEST_CASE("zero budget scores but accepts nothing") {
  const auto& ds = synth_small();
  auto cfg = fast_config();
  cfg.budget = 0;
  const auto ctx = LoopContext::make(ds, cfg);
  const auto s0 = initial_state(ctx, cfg);
  auto gen = scripted(json::array({json::array({kShareC7})}));
  const auto s1 = run_iteration(s0, ctx, cfg, gen);
  CHECK(s1.ledger.size() == 1);
  CHECK(s1.ledger[0].verdict == scoring::Verdict::Complementary);
  CHECK(s1.accepted.empty());
  CHECK(s1.metric == s0.metric);
}

TEST_CASE("malformed response triggers a repair prompt") {
  const auto& ds = synth_small();
  const auto cfg = fast_config();
  const auto ctx = LoopContext::make(ds, cfg);
  const auto s0 = initial_state(ctx, cfg);
  const std::string bad = "```json\n[\"hhi(mcc)\",\n```";
  auto fixed = scripted(json::array({bad}), {{bad, "[\"hhi(mcc)\"]"}});
  const auto s1 = run_iteration(s0, ctx, cfg, fixed);
  CHECK(s1.ledger.size() == 1);
  CHECK(s1.rejected.empty());
  auto broken = scripted(json::array({bad}));
  const auto s2 = run_iteration(s0, ctx, cfg, broken);
  CHECK(s2.ledger.empty());
  REQUIRE(s2.rejected.size() == 1);
  CHECK(s2.rejected[0].reason == "format");
  CHECK(s2.rejected[0].diagnostics.size() == 4);
}

TEST_CASE("discovery with zero iterations reports the baseline only") {
  auto cfg = fast_config();
  cfg.iterations = 0;
  auto gen = scripted(json::array());
  const auto rep = run_discovery(synth_small(), cfg, gen);
  CHECK(rep.final_state.history.size() == 1);
  CHECK(rep.final_state.metric == rep.baseline_metric);
  CHECK(rep.to_json()["uplift"] == 0.0);
  CHECK(rep.complete);
  CHECK(json::parse(rep.features_json()).empty());
}

TEST_CASE("scripted discovery is monotone, deterministic and worker independent") {
  const auto& ds = synth_small();
  auto cfg = fast_config();
  auto script = MockScript::load(kScript);
  MockGenerator g1(script);
  const auto a = run_discovery(ds, cfg, g1);
  MockGenerator g2(script);
  const auto b = run_discovery(ds, cfg, g2);
  cfg.scoring.workers = 4;
  MockGenerator g3(script);
  const auto c = run_discovery(ds, cfg, g3);
  CHECK(a.to_json().dump() == b.to_json().dump());
  CHECK(a.to_json().dump() == c.to_json().dump());
  CHECK(a.trajectory_csv() == c.trajectory_csv());

  const auto& s = a.final_state;
  CHECK(s.iteration == 5);
  CHECK(s.history.size() == 6);
  check_state_invariants(s);
  CHECK(s.metric > a.baseline_metric);
  CHECK_FALSE(s.accepted.empty());
  const auto j = a.to_json();
  CHECK(j["trajectory"][1].contains("scored_types"));
  CHECK(j.contains("group_report"));
  bool repaired = false, duplicate = false, format_fixed = false;
  for (const auto& r : s.ledger) {
    repaired |= r.dsl == "count(window=last_days(30))";
    format_fixed |= r.dsl == "entropy(mcc)";
  }
  for (const auto& r : s.rejected) duplicate |= r.reason == "duplicate";
  CHECK(repaired);
  CHECK(duplicate);
  CHECK(format_fixed);
  const auto csv = a.trajectory_csv();
  CHECK(csv.rfind("iteration,metric,n_accepted,Amount,Categories,Time,Activity\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 7);
  const auto features = fdsl::parse_feature_list(a.features_json());
  CHECK(features.size() == s.accepted.size());
  CHECK_NOTHROW(fdsl::compile_all(features, ds.schema()));
}

TEST_CASE("unreachable generator aborts with a partial report") {
  auto cfg = fast_config();
  FailsAfter gen(scripted(json::array({json::array({kShareC7})})), 1);
  const auto rep = run_discovery(synth_small(), cfg, gen);
  CHECK_FALSE(rep.complete);
  CHECK(rep.final_state.iteration == 1);
  CHECK(rep.abort_reason.find("down") != std::string::npos);
  CHECK(rep.to_json()["complete"] == false);
}

TEST_CASE("http generator against a local server") {
  httplib::Server server;
  std::atomic<int> hits{0};
  std::string seen_auth, seen_model;
  int seen_max_tokens = 0;
  server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
    ++hits;
    seen_auth = req.get_header_value("Authorization");
    const auto body = json::parse(req.body);
    seen_model = body["model"];
    seen_max_tokens = body["max_tokens"];
    const json reply = {{"choices", {{{"message", {{"role", "assistant"},
                                                   {"content", "Sure.\n```json\n[{\"name\": \"x\", \"dsl\": \"hhi(mcc)\"}]\n```"}}}}}}};
    res.set_content(reply.dump(), "application/json");
  });
  server.Post("/fail", [&](const httplib::Request&, httplib::Response& res) {
    ++hits;
    res.status = 503;
  });
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread th([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  ::setenv("EAFD_TEST_KEY", "secret", 1);
  HttpGeneratorSpec spec;
  spec.endpoint = "http://127.0.0.1:" + std::to_string(port) + "/v1/chat/completions";
  spec.model = "test-model";
  spec.api_key_env = "EAFD_TEST_KEY";
  spec.backoff_seconds = 0.01;
  HttpGenerator gen(spec);
  const auto text = gen.propose({1, 10, {{"system", "s"}, {"user", "u"}}});
  const auto ex = extract_candidates(text, 10);
  REQUIRE(ex.candidates.size() == 1);
  CHECK(ex.candidates[0].dsl == "hhi(mcc)");
  CHECK(seen_auth == "Bearer secret");
  CHECK(seen_model == "test-model");
  CHECK(seen_max_tokens == 16384);

  hits = 0;
  spec.endpoint = "http://127.0.0.1:" + std::to_string(port) + "/fail";
  HttpGenerator failing(spec);
  try {
    failing.complete({{"user", "u"}});
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::GeneratorUnreachable);
  }
  CHECK(hits == 3);

  spec.api_key_env = "EAFD_TEST_KEY_UNSET";
  ::unsetenv("EAFD_TEST_KEY_UNSET");
  HttpGenerator no_key(spec);
  CHECK_THROWS_AS(no_key.complete({{"user", "u"}}), Error);

  server.stop();
  th.join();

  spec.api_key_env.clear();
  spec.endpoint = "http://127.0.0.1:" + std::to_string(port) + "/v1/chat/completions";
  spec.timeout_seconds = 1.0;
  HttpGenerator closed(spec);
  try {
    closed.complete({{"user", "u"}});
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::GeneratorUnreachable);
  }
}
