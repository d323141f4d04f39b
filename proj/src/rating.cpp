#include "genref/rating.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <iomanip>
#include <random>
#include <sstream>

namespace genref::rating {

using nlohmann::json;

std::string source_name(Source s) { return s == Source::generated ? "generated" : "ground_truth"; }

Source parse_source(const std::string& name) {
  if (name == "generated") return Source::generated;
  if (name == "ground_truth") return Source::ground_truth;
  throw std::invalid_argument("unknown source '" + name + "' (expected generated or ground_truth)");
}

const std::array<std::string, kCriteria>& criteria() {
  static const std::array<std::string, kCriteria> kTexts = {
      "How well-formed and grammatically correct is the answer?",
      "How well-formed and grammatically correct is the rationale?",
      "How relevant is the answer to the image-question pair?",
      "How well does the rationale explain the answer with respect to the image-question pair?",
      "Irrespective of the image-question pair, how well does the rationale explain the answer ?",
  };
  return kTexts;
}

json item_to_json(const Item& item) {
  return {{"sample_id", item.sample_id},
          {"question", item.question},
          {"answer", item.answer},
          {"rationale", item.rationale},
          {"source", source_name(item.source)}};
}

Item item_from_json(const json& j) {
  return {j.at("sample_id").get<std::string>(), j.at("question").get<std::string>(),
          j.at("answer").get<std::string>(), j.at("rationale").get<std::string>(),
          parse_source(j.at("source").get<std::string>())};
}

json task_payload(const Task& task) {
  return {{"task_id", task.task_id},
          {"sample_id", task.sample_id},
          {"question", task.question},
          {"answer", task.answer},
          {"rationale", task.rationale},
          {"criteria", criteria()}};
}

ServiceError::ServiceError(int status_, std::string code_, std::string message, json detail_)
    : std::runtime_error(std::move(message)), status(status_), code(std::move(code_)), detail(std::move(detail_)) {}

json ServiceError::body() const { return {{"code", code}, {"message", what()}, {"detail", detail}}; }

CriterionStats summarize(const std::vector<int>& values) {
  CriterionStats s;
  s.count = values.size();
  if (values.empty()) return s;
  double sum = 0.0;
  for (int v : values) sum += v;
  s.mean = sum / static_cast<double>(values.size());
  if (values.size() > 1) {
    double sq = 0.0;
    for (int v : values) sq += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(sq / static_cast<double>(values.size() - 1));
  }
  return s;
}

json aggregate_to_json(const AggregateReport& r) {
  json rows = json::array();
  for (std::size_t c = 0; c < kCriteria; ++c) {
    json row = {{"criterion", c + 1}, {"text", criteria()[c]}};
    for (Source s : {Source::generated, Source::ground_truth}) {
      const auto& st = r.stats[c][static_cast<std::size_t>(s)];
      row[source_name(s)] = {{"count", st.count}, {"mean", st.mean}, {"std", st.std}};
    }
    rows.push_back(row);
  }
  return {{"records", r.records}, {"criteria", rows}};
}

std::string aggregate_table(const AggregateReport& r) {
  std::ostringstream os;
  os << std::left << std::setw(92) << "Criteria" << std::setw(18) << "Generated" << "Ground-truth\n";
  os << std::fixed << std::setprecision(2);
  for (std::size_t c = 0; c < kCriteria; ++c) {
    auto cell = [&](const CriterionStats& s) {
      std::ostringstream v;
      v << std::fixed << std::setprecision(2);
      if (s.count == 0) {
        v << "-";
      } else {
        v << s.mean << " +- " << s.std;
      }
      return v.str();
    };
    os << std::setw(92) << criteria()[c] << std::setw(18) << cell(r.stats[c][0]) << cell(r.stats[c][1]) << '\n';
  }
  return os.str();
}

Record parse_record(const json& body) {
  if (!body.is_object()) throw ServiceError(400, "validation_error", "rating body must be a JSON object");
  auto field = [&](const char* name) {
    if (!body.contains(name) || !body.at(name).is_string()) {
      throw ServiceError(400, "validation_error", std::string("missing or non-string field '") + name + "'",
                         {{"field", name}});
    }
    return body.at(name).get<std::string>();
  };
  Record r;
  r.session_id = field("session_id");
  r.task_id = field("task_id");
  if (!body.contains("scores") || !body.at("scores").is_array()) {
    throw ServiceError(400, "validation_error", "missing scores array", {{"field", "scores"}});
  }
  const json& scores = body.at("scores");
  if (scores.size() != kCriteria) {
    throw ServiceError(400, "validation_error",
                       "expected " + std::to_string(kCriteria) + " scores, got " + std::to_string(scores.size()),
                       {{"field", "scores"}, {"expected", kCriteria}, {"got", scores.size()}});
  }
  for (std::size_t c = 0; c < kCriteria; ++c) {
    const json& v = scores[c];
    const bool ok = v.is_number_integer() && v.get<long long>() >= 1 && v.get<long long>() <= 5;
    if (!ok) {
      throw ServiceError(400, "validation_error",
                         "score for criterion " + std::to_string(c + 1) + " must be an integer in 1..5, got " +
                             v.dump(),
                         {{"criterion", c + 1}, {"text", criteria()[c]}, {"value", v}});
    }
    r.scores[c] = v.get<int>();
  }
  return r;
}

// ---------------------------------------------------------------- Study

namespace {

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string hex(std::uint64_t v, int width) {
  std::ostringstream os;
  os << std::hex << std::setw(width) << std::setfill('0') << v;
  return os.str();
}

std::string now_iso8601() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace

Study::Study(std::vector<Item> items, StudyConfig config) : config_(std::move(config)) {
  if (!(config_.ground_truth_ratio >= 0.0 && config_.ground_truth_ratio <= 1.0)) {
    throw std::invalid_argument("ground_truth_ratio must be in [0, 1]");
  }
  if (config_.playlist_size == 0) throw std::invalid_argument("playlist_size must be at least 1");
  for (auto& item : items) (item.source == Source::generated ? generated_ : ground_truth_).push_back(std::move(item));
  if (generated_.empty() && ground_truth_.empty()) throw std::invalid_argument("study has no items");
  if (!config_.log_path.empty() && std::filesystem::exists(config_.log_path)) replay();
}

std::vector<Task> Study::build_playlist(const std::string& session_id, std::uint64_t seed) const {
  std::mt19937_64 rng(seed ^ fnv1a(session_id));
  auto pick = [&](const std::vector<Item>& pool, std::size_t n) {
    std::vector<std::size_t> order(pool.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);
    order.resize(std::min(n, order.size()));
    return order;
  };
  const std::size_t size = config_.playlist_size;
  std::size_t n_gt = std::min<std::size_t>(
      ground_truth_.size(), static_cast<std::size_t>(std::llround(config_.ground_truth_ratio * static_cast<double>(size))));
  const std::size_t n_gen = std::min(generated_.size(), size - n_gt);
  n_gt = std::min(ground_truth_.size(), size - n_gen);  // top up when generated items run short

  std::vector<const Item*> chosen;
  for (std::size_t i : pick(generated_, n_gen)) chosen.push_back(&generated_[i]);
  for (std::size_t i : pick(ground_truth_, n_gt)) chosen.push_back(&ground_truth_[i]);
  std::shuffle(chosen.begin(), chosen.end(), rng);

  std::vector<Task> tasks;
  for (std::size_t pos = 0; pos < chosen.size(); ++pos) {
    const Item& it = *chosen[pos];
    Task t;
    t.task_id = "t" + hex(fnv1a(session_id + "/" + std::to_string(pos)) & 0xffffffffffffULL, 12);
    t.sample_id = it.sample_id;
    t.question = it.question;
    t.answer = it.answer;
    t.rationale = it.rationale;
    t.source = it.source;
    tasks.push_back(std::move(t));
  }
  return tasks;
}

std::string Study::add_session(const std::string& id, std::uint64_t seed) {
  Session s;
  s.seed = seed;
  s.tasks = build_playlist(id, seed);
  for (std::size_t i = 0; i < s.tasks.size(); ++i) s.index[s.tasks[i].task_id] = i;
  sessions_[id] = std::move(s);
  return id;
}

std::string Study::create_session(std::optional<std::uint64_t> seed) {
  std::unique_lock lock(mutex_);
  const std::string id = "s" + hex(next_session_++, 6);
  const std::uint64_t s = seed.value_or(config_.seed);
  add_session(id, s);
  append_log({{"type", "session"}, {"session_id", id}, {"seed", s}});
  return id;
}

std::optional<Task> Study::next_task(const std::string& session_id) const {
  std::shared_lock lock(mutex_);
  auto it = sessions_.find(session_id);
  if (it == sessions_.end()) {
    throw ServiceError(404, "not_found", "unknown session '" + session_id + "'", {{"session_id", session_id}});
  }
  for (const auto& t : it->second.tasks) {
    if (!it->second.acks.count(t.task_id)) return t;
  }
  return std::nullopt;
}

std::vector<Task> Study::playlist(const std::string& session_id) const {
  std::shared_lock lock(mutex_);
  auto it = sessions_.find(session_id);
  if (it == sessions_.end()) {
    throw ServiceError(404, "not_found", "unknown session '" + session_id + "'", {{"session_id", session_id}});
  }
  return it->second.tasks;
}

Ack Study::submit(const Record& record) {
  std::unique_lock lock(mutex_);
  return record_locked(record, true);
}

Ack Study::record_locked(const Record& record, bool write_log) {
  auto sit = sessions_.find(record.session_id);
  if (sit == sessions_.end()) {
    throw ServiceError(404, "not_found", "unknown session '" + record.session_id + "'",
                       {{"session_id", record.session_id}});
  }
  Session& session = sit->second;
  auto tit = session.index.find(record.task_id);
  if (tit == session.index.end()) {
    throw ServiceError(404, "not_found", "task '" + record.task_id + "' was not issued to this session",
                       {{"session_id", record.session_id}, {"task_id", record.task_id}});
  }
  if (auto prev = session.acks.find(record.task_id); prev != session.acks.end()) return {prev->second, true};
  for (std::size_t c = 0; c < kCriteria; ++c) {
    if (record.scores[c] < 1 || record.scores[c] > 5) {
      throw ServiceError(400, "validation_error", "score for criterion " + std::to_string(c + 1) + " out of range",
                         {{"criterion", c + 1}, {"value", record.scores[c]}});
    }
  }
  const Task& task = session.tasks[tit->second];
  Record stored = record;
  if (stored.timestamp.empty()) stored.timestamp = now_iso8601();
  const json ack = {{"accepted", true},
                    {"session_id", stored.session_id},
                    {"task_id", stored.task_id},
                    {"timestamp", stored.timestamp}};
  if (write_log) {
    append_log({{"type", "rating"},
                {"session_id", stored.session_id},
                {"task_id", stored.task_id},
                {"sample_id", task.sample_id},
                {"source", source_name(task.source)},
                {"scores", stored.scores},
                {"timestamp", stored.timestamp}});
  }
  session.acks[stored.task_id] = ack;
  records_.emplace_back(stored, task.source);
  return {ack, false};
}

AggregateReport Study::aggregate() const {
  std::shared_lock lock(mutex_);
  if (records_.empty()) throw ServiceError(409, "empty_report", "no ratings have been recorded yet");
  std::array<std::array<std::vector<int>, 2>, kCriteria> values;
  for (const auto& [rec, source] : records_) {
    for (std::size_t c = 0; c < kCriteria; ++c) values[c][static_cast<std::size_t>(source)].push_back(rec.scores[c]);
  }
  AggregateReport r;
  r.records = records_.size();
  for (std::size_t c = 0; c < kCriteria; ++c) {
    for (std::size_t s = 0; s < 2; ++s) r.stats[c][s] = summarize(values[c][s]);
  }
  return r;
}

std::vector<Record> Study::records() const {
  std::shared_lock lock(mutex_);
  std::vector<Record> out;
  for (const auto& [rec, source] : records_) out.push_back(rec);
  return out;
}

std::size_t Study::session_count() const {
  std::shared_lock lock(mutex_);
  return sessions_.size();
}

void Study::append_log(const json& line) {
  if (config_.log_path.empty()) return;
  const std::string text = line.dump() + "\n";
  const int fd = ::open(config_.log_path.c_str(), O_WRONLY | O_CREAT | O_APPEND, 0644);
  if (fd < 0) throw ServiceError(500, "storage_error", "cannot open rating log " + config_.log_path.string());
  std::size_t written = 0;
  while (written < text.size()) {
    const ssize_t n = ::write(fd, text.data() + written, text.size() - written);
    if (n <= 0) {
      ::close(fd);
      throw ServiceError(500, "storage_error", "write to rating log failed");
    }
    written += static_cast<std::size_t>(n);
  }
  const bool synced = ::fsync(fd) == 0;
  ::close(fd);
  if (!synced) throw ServiceError(500, "storage_error", "fsync of rating log failed");
}

void Study::replay() {
  std::ifstream in(config_.log_path);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error&) {
      // A torn final line from a crash mid-append is dropped; anything else is corruption.
      if (in.peek() == EOF) break;
      throw std::runtime_error("rating log line " + std::to_string(line_no) + " is not valid JSON");
    }
    const std::string type = j.value("type", "");
    if (type == "session") {
      const std::string id = j.at("session_id").get<std::string>();
      add_session(id, j.at("seed").get<std::uint64_t>());
      if (id.size() > 1) next_session_ = std::max<std::uint64_t>(next_session_, std::stoull(id.substr(1), nullptr, 16) + 1);
    } else if (type == "rating") {
      Record r;
      r.session_id = j.at("session_id").get<std::string>();
      r.task_id = j.at("task_id").get<std::string>();
      r.scores = j.at("scores").get<std::array<int, kCriteria>>();
      r.timestamp = j.at("timestamp").get<std::string>();
      record_locked(r, false);
    }
  }
}

}  // namespace genref::rating
