#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "geoecon/geo.hpp"

namespace geoecon {

enum class TaskStatus { kPending, kRunning, kSucceeded, kFailed };
std::string to_string(TaskStatus s);
TaskStatus task_status_from_string(const std::string& s);
bool is_terminal(TaskStatus s);

struct TaskRecord {
  std::string task_id;
  nlohmann::json spec;  // snapshot of the submitted TaskSpec
  TaskStatus status = TaskStatus::kPending;
  std::string created_at;
  std::string updated_at;
  std::string message;          // failure diagnostic, empty otherwise
  std::string idempotency_key;  // empty when not supplied
  std::int64_t result_tx = 0;   // commit that published this task's results

  nlohmann::json to_json() const;
  static TaskRecord from_json(const nlohmann::json& j);
};

struct FrameRecord {
  std::string task_id;
  std::string frame_id;  // satellite tile key
  std::string status;    // "scored" or "skipped"
  std::int64_t pair_count = 0;

  nlohmann::json to_json() const;
  static FrameRecord from_json(const nlohmann::json& j);
  friend bool operator==(const FrameRecord&, const FrameRecord&) = default;
};

struct FineGrainedRow {
  std::string task_id;
  std::string cell;
  double lat = 0.0;
  double lon = 0.0;
  double score = 0.0;
  std::int64_t pair_count = 0;

  nlohmann::json to_json() const;
  static FineGrainedRow from_json(const nlohmann::json& j);
  friend bool operator==(const FineGrainedRow&, const FineGrainedRow&) = default;
};

struct CountyRow {
  std::string county_id;
  std::string period;
  double value = 0.0;
  std::int64_t cell_count = 0;
  std::string task_id;

  nlohmann::json to_json() const;
  static CountyRow from_json(const nlohmann::json& j);
  friend bool operator==(const CountyRow&, const CountyRow&) = default;
};

struct TaskEvent {
  std::int64_t seq = 0;  // assigned by the store, strictly increasing
  std::string task_id;
  std::string timestamp;
  std::string stage;  // read | score | reduce | aggregate
  std::string level;  // info | warn | error
  std::string message;
  double progress = 0.0;

  nlohmann::json to_json() const;
  static TaskEvent from_json(const nlohmann::json& j);
};

std::string utc_timestamp();

// A batch of writes applied all-or-nothing by Store::commit.
class Transaction {
 public:
  void put_task(TaskRecord r);
  void put_frame(FrameRecord r);
  void put_fine(FineGrainedRow r);
  void put_county(CountyRow r);
  // Drops the task's frames and fine-grained rows (county rows are keyed by
  // county/period and are overwritten instead).
  void clear_task_results(const std::string& task_id);

  bool empty() const { return ops_.empty(); }

 private:
  friend class Store;
  struct Op {
    std::string table;
    std::string op;  // put | clear
    nlohmann::json row;
  };
  std::vector<Op> ops_;
};

// Append-only journaled tables: one JSON-lines journal per table plus a
// commit log. A transaction's lines become visible only once its commit
// marker is durable; anything after the last marker is discarded on open.
//
// Directory layout:
//   MANIFEST.json        {"format": "geoecon-store", "schema_version": 1,
//                         "generation": G, "tables": [...]}
//   commits.G.jsonl      {"tx": N, "lines": {table: count, ...}}
//   <table>.G.jsonl      {"tx": N, "op": "put"|"clear", "row": {...}}
// Compaction writes generation G+1 and switches by renaming the manifest.
class Store {
 public:
  static constexpr int kSchemaVersion = 1;

  // Creates the directory when missing. Throws RecoveryError when a journal
  // is corrupt before its last commit, naming the last consistent commit.
  static std::unique_ptr<Store> open(const std::filesystem::path& dir);
  ~Store();
  Store(const Store&) = delete;
  Store& operator=(const Store&) = delete;

  const std::filesystem::path& dir() const { return dir_; }

  // Validates uniqueness, referential integrity and status transitions
  // against the current state, then writes durably. Returns the commit id.
  std::int64_t commit(const Transaction& tx);

  // Convenience single-row writes (each one commit).
  void create_task(TaskRecord r);  // ConstraintError if the id exists
  void update_task(const TaskRecord& r);
  void put_frame(FrameRecord r);
  void put_fine(FineGrainedRow r);
  void put_county(CountyRow r);

  // Events are committed individually and are not fsynced.
  std::int64_t append_event(TaskEvent e);

  std::optional<TaskRecord> find_task(const std::string& task_id) const;
  TaskRecord get_task(const std::string& task_id) const;  // NotFoundError
  std::optional<TaskRecord> find_task_by_idempotency_key(const std::string& key) const;
  std::vector<TaskRecord> tasks() const;

  std::vector<FrameRecord> frames(const std::string& task_id) const;
  std::vector<FineGrainedRow> fine_rows(const std::string& task_id) const;
  std::optional<CountyRow> get_county(const std::string& county_id, const std::string& period) const;
  std::vector<CountyRow> county_rows() const;
  bool has_county(const std::string& county_id) const;
  std::vector<TaskEvent> events(const std::string& task_id, std::int64_t after_seq = 0) const;

  // Fine-grained rows of the most recently published succeeded task for the
  // period whose centres fall in bbox, ordered by cell.
  std::vector<FineGrainedRow> query_heatmap(const BBox& bbox, const std::string& period) const;
  // County rows with from <= period <= to (string order), ascending.
  std::vector<CountyRow> query_trend(const std::string& county_id, const std::string& from,
                                     const std::string& to) const;

  // Canonical dump of one task's persisted results (frames, fine rows,
  // county rows it produced), for byte comparison.
  std::string export_task_results(const std::string& task_id) const;

  // Rewrites every journal with committed state only.
  void compact();

  // Test hook: terminate the process (std::_Exit) once this many journal
  // lines have been written by this Store instance. Negative disables.
  void set_crash_after_lines(long lines) { crash_after_lines_ = lines; }

 private:
  explicit Store(std::filesystem::path dir);
  void load();
  void apply(const std::string& table, const std::string& op, const nlohmann::json& row,
             std::int64_t tx);
  void validate(const Transaction& tx) const;
  std::int64_t write(const Transaction& tx, bool durable);
  void write_line(std::FILE* f, const std::string& line);
  void close_journals();

  std::filesystem::path dir_;
  mutable std::shared_mutex mu_;
  std::map<std::string, std::FILE*> files_;
  std::FILE* commits_ = nullptr;
  std::int64_t generation_ = 0;
  std::int64_t next_tx_ = 1;
  std::int64_t next_seq_ = 1;
  long crash_after_lines_ = -1;
  long lines_written_ = 0;

  std::map<std::string, TaskRecord> tasks_;
  std::map<std::pair<std::string, std::string>, FrameRecord> frames_;
  std::map<std::pair<std::string, std::string>, FineGrainedRow> fine_;
  std::map<std::pair<std::string, std::string>, CountyRow> county_;
  std::map<std::string, std::vector<TaskEvent>> events_;
};

}  // namespace geoecon
