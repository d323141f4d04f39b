#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

namespace genref::rating {

enum class Source { generated, ground_truth };

std::string source_name(Source s);
Source parse_source(const std::string& name);

inline constexpr std::size_t kCriteria = 5;

/// Rater-facing criteria, in the fixed order of the study.
const std::array<std::string, kCriteria>& criteria();

/// One candidate shown to raters.
struct Item {
  std::string sample_id;
  std::string question;
  std::string answer;
  std::string rationale;
  Source source = Source::generated;
};

nlohmann::json item_to_json(const Item& item);
Item item_from_json(const nlohmann::json& j);

struct StudyConfig {
  std::size_t playlist_size = 50;
  double ground_truth_ratio = 0.34;
  std::uint64_t seed = 1;
  std::filesystem::path log_path;  // empty: in-memory only
};

struct Task {
  std::string task_id;
  std::string sample_id;
  std::string question;
  std::string answer;
  std::string rationale;
  Source source = Source::generated;  // never serialized to raters
};

/// Wire payload for raters; the source is left out by construction.
nlohmann::json task_payload(const Task& task);

struct Record {
  std::string session_id;
  std::string task_id;
  std::array<int, kCriteria> scores{};
  std::string timestamp;  // ISO-8601 UTC
};

/// Error with a stable machine-readable code ("not_found", "validation_error", ...).
class ServiceError : public std::runtime_error {
 public:
  ServiceError(int status, std::string code, std::string message, nlohmann::json detail = nlohmann::json::object());
  int status;
  std::string code;
  nlohmann::json detail;

  nlohmann::json body() const;
};

struct Ack {
  nlohmann::json body;
  bool duplicate = false;
};

struct CriterionStats {
  std::size_t count = 0;
  double mean = 0.0;
  double std = 0.0;  // sample std (n - 1); 0 for a single rating
};

struct AggregateReport {
  // [criterion][source]: source index 0 generated, 1 ground truth
  std::array<std::array<CriterionStats, 2>, kCriteria> stats{};
  std::size_t records = 0;
};

nlohmann::json aggregate_to_json(const AggregateReport& r);
std::string aggregate_table(const AggregateReport& r);

/// Mean and sample standard deviation of `values`.
CriterionStats summarize(const std::vector<int>& values);

/// Sessions, playlists, durable rating log, aggregation. Thread-safe: writers
/// are serialized, readers share a lock.
class Study {
 public:
  /// Replays `config.log_path` when it exists.
  Study(std::vector<Item> items, StudyConfig config);

  /// New session with a fresh id; `seed` defaults to the study seed.
  std::string create_session(std::optional<std::uint64_t> seed = std::nullopt);
  /// Next task of the playlist that has no rating yet; nullopt when done.
  std::optional<Task> next_task(const std::string& session_id) const;
  std::vector<Task> playlist(const std::string& session_id) const;
  Ack submit(const Record& record);
  AggregateReport aggregate() const;
  std::vector<Record> records() const;
  std::size_t session_count() const;

  /// Deterministic playlist for a session id and seed.
  std::vector<Task> build_playlist(const std::string& session_id, std::uint64_t seed) const;

 private:
  struct Session {
    std::uint64_t seed = 0;
    std::vector<Task> tasks;
    std::map<std::string, std::size_t> index;  // task id -> position
    std::map<std::string, nlohmann::json> acks;  // task id -> first ack
  };

  void replay();
  void append_log(const nlohmann::json& line);
  std::string add_session(const std::string& id, std::uint64_t seed);
  Ack record_locked(const Record& record, bool write_log);

  std::vector<Item> generated_;
  std::vector<Item> ground_truth_;
  StudyConfig config_;
  mutable std::shared_mutex mutex_;
  std::map<std::string, Session> sessions_;
  std::vector<std::pair<Record, Source>> records_;
  std::uint64_t next_session_ = 1;
};

/// Validates a record body from the wire; throws ServiceError naming the
/// offending field or criterion.
Record parse_record(const nlohmann::json& body);

}  // namespace genref::rating
