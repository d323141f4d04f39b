#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <thread>

#include "doctest.h"
#include "genref/rating.hpp"
#include "genref/rating_server.hpp"
#include "httplib.h"

using namespace genref::rating;
using nlohmann::json;

namespace {

std::vector<Item> make_items(std::size_t generated, std::size_t ground_truth) {
  std::vector<Item> items;
  for (std::size_t i = 0; i < generated + ground_truth; ++i) {
    const bool gt = i >= generated;
    items.push_back({"s" + std::to_string(i), "what color is the object at a" + std::to_string(i % 4 + 1) + " ?",
                     "the cube is red", "the object at a1 is a big red cube",
                     gt ? Source::ground_truth : Source::generated});
  }
  return items;
}

std::filesystem::path temp_log(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("genref_test_" + name + ".jsonl");
  std::filesystem::remove(p);
  return p;
}

Record record(const std::string& session, const std::string& task, std::array<int, 5> scores) {
  return {session, task, scores, ""};
}

bool mentions_source(const json& j) {
  const std::string s = j.dump();
  return s.find("source") != std::string::npos || s.find("ground_truth") != std::string::npos ||
         s.find("generated") != std::string::npos;
}

}  // namespace

TEST_CASE("criteria are fixed, five, and start with well-formedness") {
  REQUIRE(criteria().size() == 5);
  CHECK(criteria()[0] == "How well-formed and grammatically correct is the answer?");
}

TEST_CASE("sample statistics") {
  const auto s = summarize({4, 5, 3});
  CHECK(s.count == 3);
  CHECK(s.mean == 4.0);
  CHECK(s.std == 1.0);
  const auto one = summarize({2});
  CHECK(one.mean == 2.0);
  CHECK(one.std == 0.0);
}

TEST_CASE("fresh session walks a 10-task playlist to done") {
  StudyConfig cfg;
  cfg.playlist_size = 10;
  Study study(make_items(20, 20), cfg);
  const std::string sid = study.create_session();
  std::set<std::string> seen;
  std::size_t gt = 0;
  for (int i = 0; i < 10; ++i) {
    const auto t = study.next_task(sid);
    REQUIRE(t.has_value());
    CHECK(seen.insert(t->task_id).second);
    gt += t->source == Source::ground_truth;
    CHECK_FALSE(mentions_source(task_payload(*t)));
    CHECK(task_payload(*t)["criteria"].size() == 5);
    study.submit(record(sid, t->task_id, {4, 4, 4, 4, 4}));
  }
  CHECK(gt == 3);  // round(0.34 * 10)
  CHECK_FALSE(study.next_task(sid).has_value());
  CHECK_THROWS_AS(study.next_task("nope"), ServiceError);
}

TEST_CASE("playlists are reproducible from session id and seed") {
  Study study(make_items(30, 30), {});
  const auto a = study.build_playlist("s000001", 9);
  const auto b = study.build_playlist("s000001", 9);
  const auto c = study.build_playlist("s000001", 10);
  auto ids = [](const std::vector<Task>& ts) {
    std::vector<std::string> out;
    for (const auto& t : ts) out.push_back(t.sample_id);
    return out;
  };
  CHECK(ids(a) == ids(b));
  CHECK(ids(a) != ids(c));
  CHECK(a.size() == 50);
}

TEST_CASE("submission validation and idempotency") {
  const auto log = temp_log("idem");
  StudyConfig cfg;
  cfg.log_path = log;
  Study study(make_items(5, 5), cfg);
  const std::string sid = study.create_session();
  const auto task = *study.next_task(sid);

  try {
    study.submit(record(sid, task.task_id, {0, 5, 3, 4, 4}));
    FAIL("expected validation error");
  } catch (const ServiceError& e) {
    CHECK(e.status == 400);
    CHECK(e.code == "validation_error");
    CHECK(e.detail["criterion"] == 1);
  }
  const Ack first = study.submit(record(sid, task.task_id, {4, 5, 3, 4, 4}));
  CHECK_FALSE(first.duplicate);
  const auto size_after_first = std::filesystem::file_size(log);
  const Ack again = study.submit(record(sid, task.task_id, {1, 1, 1, 1, 1}));
  CHECK(again.duplicate);
  CHECK(again.body == first.body);
  CHECK(std::filesystem::file_size(log) == size_after_first);
  CHECK(study.records().size() == 1);
  CHECK_THROWS_AS(study.submit(record(sid, "t000000000000", {3, 3, 3, 3, 3})), ServiceError);
  CHECK_THROWS_AS(study.submit(record("s999999", task.task_id, {3, 3, 3, 3, 3})), ServiceError);
  std::filesystem::remove(log);
}

TEST_CASE("wire records: wrong score count and out-of-range values name the problem") {
  const json ok = {{"session_id", "s1"}, {"task_id", "t1"}, {"scores", {4, 5, 3, 4, 4}}};
  CHECK(parse_record(ok).scores == std::array<int, 5>{4, 5, 3, 4, 4});
  json short_scores = ok;
  short_scores["scores"] = {4, 5, 3};
  CHECK_THROWS_AS(parse_record(short_scores), ServiceError);
  json bad = ok;
  bad["scores"] = {4, 5, 6, 4, 4};
  try {
    parse_record(bad);
    FAIL("expected validation error");
  } catch (const ServiceError& e) {
    CHECK(e.detail["criterion"] == 3);
  }
  json not_int = ok;
  not_int["scores"] = {4, 5, "x", 4, 4};
  CHECK_THROWS_AS(parse_record(not_int), ServiceError);
  CHECK_THROWS_AS(parse_record(json::array()), ServiceError);
}

TEST_CASE("aggregate: hand-computed values, empty error, permutation invariance") {
  StudyConfig cfg;
  cfg.playlist_size = 6;
  cfg.ground_truth_ratio = 0.0;
  Study study(make_items(10, 0), cfg);
  CHECK_THROWS_AS(study.aggregate(), ServiceError);
  const std::string sid = study.create_session();
  const auto tasks = study.playlist(sid);
  const std::array<int, 3> first = {4, 5, 3};
  for (int i = 0; i < 3; ++i) study.submit(record(sid, tasks[i].task_id, {first[i], 2, 2, 2, 2}));
  const auto r = study.aggregate();
  CHECK(r.records == 3);
  CHECK(r.stats[0][0].mean == 4.0);
  CHECK(r.stats[0][0].std == 1.0);
  CHECK(r.stats[1][0].std == 0.0);
  CHECK(r.stats[0][1].count == 0);
  CHECK(aggregate_table(r).find("Generated") != std::string::npos);

  // Same ratings submitted in another order.
  Study other(make_items(10, 0), cfg);
  const std::string sid2 = other.create_session();
  const auto tasks2 = other.playlist(sid2);
  for (int i : {2, 0, 1}) other.submit(record(sid2, tasks2[i].task_id, {first[i], 2, 2, 2, 2}));
  CHECK(aggregate_to_json(other.aggregate()) == aggregate_to_json(r));
}

TEST_CASE("the log replays to the same state") {
  const auto log = temp_log("replay");
  StudyConfig cfg;
  cfg.log_path = log;
  cfg.playlist_size = 8;
  json before;
  std::string sid;
  {
    Study study(make_items(10, 10), cfg);
    sid = study.create_session(77);
    std::mt19937 rng(3);
    for (const auto& t : study.playlist(sid)) {
      std::array<int, 5> s{};
      for (int& x : s) x = 1 + static_cast<int>(rng() % 5);
      study.submit(record(sid, t.task_id, s));
    }
    before = aggregate_to_json(study.aggregate());
  }
  {
    std::ofstream torn(log, std::ios::app);
    torn << "{\"type\":\"rating\",\"session_id\":";  // crash mid-write
  }
  Study replayed(make_items(10, 10), cfg);
  CHECK(aggregate_to_json(replayed.aggregate()) == before);
  CHECK_FALSE(replayed.next_task(sid).has_value());
  CHECK(replayed.create_session() != sid);
  std::filesystem::remove(log);
}

TEST_CASE("concurrent sessions submit safely") {
  StudyConfig cfg;
  cfg.playlist_size = 20;
  Study study(make_items(30, 30), cfg);
  std::vector<std::thread> threads;
  for (int w = 0; w < 4; ++w) {
    threads.emplace_back([&] {
      const std::string sid = study.create_session();
      while (auto t = study.next_task(sid)) study.submit(record(sid, t->task_id, {3, 3, 3, 3, 3}));
    });
  }
  for (auto& t : threads) t.join();
  CHECK(study.records().size() == 80);
  CHECK(study.session_count() == 4);
}

// ---------------------------------------------------------------- HTTP

TEST_CASE("HTTP: full rating flow, blinding, errors") {
  StudyConfig cfg;
  cfg.playlist_size = 10;
  Study study(make_items(20, 20), cfg);
  Server server(study);
  const int port = server.bind("127.0.0.1", 0);
  REQUIRE(port > 0);
  std::thread loop([&] { server.run(); });
  httplib::Client cli("127.0.0.1", port);
  cli.set_connection_timeout(5);

  auto health = cli.Get("/health");
  REQUIRE(health);
  CHECK(health->status == 200);

  auto empty = cli.Get("/aggregate");
  REQUIRE(empty);
  CHECK(empty->status == 409);
  CHECK(json::parse(empty->body)["code"] == "empty_report");

  auto created = cli.Post("/session", "{}", "application/json");
  REQUIRE(created);
  CHECK(created->status == 201);
  const std::string sid = json::parse(created->body)["session_id"];

  std::vector<std::array<int, 5>> injected;
  std::size_t served = 0;
  for (;;) {
    auto next = cli.Get("/session/" + sid + "/next");
    REQUIRE(next);
    CHECK(next->status == 200);
    CHECK_FALSE(mentions_source(json::parse(next->body)));
    const json task = json::parse(next->body);
    if (task.contains("done")) break;
    ++served;
    std::array<int, 5> s = {static_cast<int>(served % 5) + 1, 4, 4, 4, 4};
    injected.push_back(s);
    const json body = {{"session_id", sid}, {"task_id", task["task_id"]}, {"scores", s}};
    auto posted = cli.Post("/rating", body.dump(), "application/json");
    REQUIRE(posted);
    CHECK(posted->status == 201);
    CHECK_FALSE(mentions_source(json::parse(posted->body)));
    auto dup = cli.Post("/rating", body.dump(), "application/json");
    REQUIRE(dup);
    CHECK(dup->status == 200);
    CHECK(dup->body == posted->body);
  }
  CHECK(served == 10);

  auto agg = cli.Get("/aggregate");
  REQUIRE(agg);
  CHECK(agg->status == 200);
  const json a = json::parse(agg->body);
  CHECK(a["records"] == 10);

  auto bad = cli.Post("/rating", "{not json", "application/json");
  REQUIRE(bad);
  CHECK(bad->status == 400);
  CHECK(json::parse(bad->body).contains("code"));
  const json invalid = {{"session_id", sid}, {"task_id", "t1"}, {"scores", {0, 5, 3, 4, 4}}};
  auto rejected = cli.Post("/rating", invalid.dump(), "application/json");
  REQUIRE(rejected);
  CHECK(rejected->status == 400);
  CHECK(json::parse(rejected->body)["detail"]["criterion"] == 1);
  auto unknown = cli.Get("/session/zzz/next");
  REQUIRE(unknown);
  CHECK(unknown->status == 404);
  CHECK(json::parse(unknown->body)["code"] == "not_found");
  auto route = cli.Get("/nowhere");
  REQUIRE(route);
  CHECK(route->status == 404);
  CHECK(json::parse(route->body)["code"] == "not_found");

  server.stop();
  loop.join();
}

TEST_CASE("HTTP: injected ratings {4,5,3} aggregate to 4.0 +- 1.0") {
  StudyConfig cfg;
  cfg.playlist_size = 3;
  cfg.ground_truth_ratio = 1.0;
  Study study(make_items(0, 5), cfg);
  Server server(study);
  const int port = server.bind("127.0.0.1", 0);
  REQUIRE(port > 0);
  std::thread loop([&] { server.run(); });
  httplib::Client cli("127.0.0.1", port);
  const std::string sid = json::parse(cli.Post("/session", "{\"seed\": 4}", "application/json")->body)["session_id"];
  for (int v : {4, 5, 3}) {
    const json task = json::parse(cli.Get("/session/" + sid + "/next")->body);
    const json body = {{"session_id", sid}, {"task_id", task["task_id"]}, {"scores", {v, v, v, v, v}}};
    CHECK(cli.Post("/rating", body.dump(), "application/json")->status == 201);
  }
  const json a = json::parse(cli.Get("/aggregate")->body);
  for (const auto& row : a["criteria"]) {
    CHECK(row["ground_truth"]["mean"] == 4.0);
    CHECK(row["ground_truth"]["std"] == 1.0);
    CHECK(row["ground_truth"]["count"] == 3);
    CHECK(row["generated"]["count"] == 0);
  }
  server.stop();
  loop.join();
}
