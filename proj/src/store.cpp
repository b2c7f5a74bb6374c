#include "geoecon/store.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>

#include "geoecon/error.hpp"

namespace geoecon {

namespace fs = std::filesystem;

namespace {

const std::vector<std::string> kTables = {"tasks", "frames", "fine", "county", "events"};

std::string journal_name(const std::string& table, std::int64_t gen) {
  return table + "." + std::to_string(gen) + ".jsonl";
}

void fsync_file(std::FILE* f) {
  std::fflush(f);
  ::fsync(::fileno(f));
}

void fsync_dir(const fs::path& dir) {
  const int fd = ::open(dir.c_str(), O_RDONLY | O_DIRECTORY);
  if (fd >= 0) {
    ::fsync(fd);
    ::close(fd);
  }
}

struct JournalLine {
  std::int64_t tx = 0;
  nlohmann::json body;
};

// Complete, parseable lines of a journal. A torn final line (no newline or
// unparseable) is dropped and the file truncated to the last good line; a
// bad line before that is corruption.
std::vector<JournalLine> read_journal(const fs::path& path, std::int64_t last_consistent) {
  std::vector<JournalLine> out;
  if (!fs::exists(path)) return out;
  std::ifstream in(path, std::ios::binary);
  std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::size_t pos = 0, good_end = 0;
  while (pos < content.size()) {
    const auto eol = content.find('\n', pos);
    const bool complete = eol != std::string::npos;
    const std::string line = content.substr(pos, complete ? eol - pos : std::string::npos);
    const std::size_t next = complete ? eol + 1 : content.size();
    nlohmann::json j;
    bool ok = complete;
    if (ok) {
      try {
        j = nlohmann::json::parse(line);
        ok = j.is_object() && j.contains("tx") && j["tx"].is_number_integer();
      } catch (const nlohmann::json::exception&) {
        ok = false;
      }
    }
    if (!ok) {
      if (next < content.size())
        throw RecoveryError(path.filename().string() + ": corrupt record at byte " +
                            std::to_string(pos) + "; last consistent commit is tx " +
                            std::to_string(last_consistent));
      break;
    }
    out.push_back({j["tx"].get<std::int64_t>(), std::move(j)});
    good_end = next;
    pos = next;
  }
  if (good_end < content.size()) fs::resize_file(path, good_end);
  return out;
}

template <class Map, class Pred>
void erase_if_map(Map& m, Pred p) {
  for (auto it = m.begin(); it != m.end();) it = p(*it) ? m.erase(it) : std::next(it);
}

bool transition_allowed(TaskStatus from, TaskStatus to) {
  if (from == to) return true;
  switch (from) {
    case TaskStatus::kPending: return to == TaskStatus::kRunning;
    case TaskStatus::kRunning: return to == TaskStatus::kSucceeded || to == TaskStatus::kFailed;
    // Re-running a finished task starts a fresh attempt.
    case TaskStatus::kSucceeded:
    case TaskStatus::kFailed: return to == TaskStatus::kPending;
  }
  return false;
}

}  // namespace

std::string to_string(TaskStatus s) {
  switch (s) {
    case TaskStatus::kPending: return "pending";
    case TaskStatus::kRunning: return "running";
    case TaskStatus::kSucceeded: return "succeeded";
    case TaskStatus::kFailed: return "failed";
  }
  return "pending";
}

TaskStatus task_status_from_string(const std::string& s) {
  if (s == "pending") return TaskStatus::kPending;
  if (s == "running") return TaskStatus::kRunning;
  if (s == "succeeded") return TaskStatus::kSucceeded;
  if (s == "failed") return TaskStatus::kFailed;
  throw FormatError("unknown task status '" + s + "'");
}

bool is_terminal(TaskStatus s) { return s == TaskStatus::kSucceeded || s == TaskStatus::kFailed; }

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count();
  const std::time_t secs = static_cast<std::time_t>(ms / 1000);
  std::tm tm{};
  ::gmtime_r(&secs, &tm);
  char buf[64];
  std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02d.%03dZ", tm.tm_year + 1900,
                tm.tm_mon + 1, tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec,
                static_cast<int>(ms % 1000));
  return buf;
}

nlohmann::json TaskRecord::to_json() const {
  return {{"task_id", task_id},       {"spec", spec},
          {"status", to_string(status)},
          {"created_at", created_at}, {"updated_at", updated_at},
          {"message", message},       {"idempotency_key", idempotency_key},
          {"result_tx", result_tx}};
}

TaskRecord TaskRecord::from_json(const nlohmann::json& j) {
  TaskRecord r;
  r.task_id = j.at("task_id").get<std::string>();
  r.spec = j.value("spec", nlohmann::json::object());
  r.status = task_status_from_string(j.at("status").get<std::string>());
  r.created_at = j.value("created_at", "");
  r.updated_at = j.value("updated_at", "");
  r.message = j.value("message", "");
  r.idempotency_key = j.value("idempotency_key", "");
  r.result_tx = j.value("result_tx", std::int64_t{0});
  return r;
}

nlohmann::json FrameRecord::to_json() const {
  return {{"task_id", task_id}, {"frame_id", frame_id}, {"status", status}, {"pair_count", pair_count}};
}

FrameRecord FrameRecord::from_json(const nlohmann::json& j) {
  return {j.at("task_id").get<std::string>(), j.at("frame_id").get<std::string>(),
          j.at("status").get<std::string>(), j.at("pair_count").get<std::int64_t>()};
}

nlohmann::json FineGrainedRow::to_json() const {
  return {{"task_id", task_id}, {"cell", cell},   {"lat", lat},
          {"lon", lon},         {"score", score}, {"pair_count", pair_count}};
}

FineGrainedRow FineGrainedRow::from_json(const nlohmann::json& j) {
  return {j.at("task_id").get<std::string>(), j.at("cell").get<std::string>(),
          j.at("lat").get<double>(),          j.at("lon").get<double>(),
          j.at("score").get<double>(),        j.at("pair_count").get<std::int64_t>()};
}

nlohmann::json CountyRow::to_json() const {
  return {{"county_id", county_id}, {"period", period},   {"value", value},
          {"cell_count", cell_count}, {"task_id", task_id}};
}

CountyRow CountyRow::from_json(const nlohmann::json& j) {
  return {j.at("county_id").get<std::string>(), j.at("period").get<std::string>(),
          j.at("value").get<double>(), j.at("cell_count").get<std::int64_t>(),
          j.at("task_id").get<std::string>()};
}

nlohmann::json TaskEvent::to_json() const {
  return {{"seq", seq},     {"task_id", task_id}, {"timestamp", timestamp}, {"stage", stage},
          {"level", level}, {"message", message}, {"progress", progress}};
}

TaskEvent TaskEvent::from_json(const nlohmann::json& j) {
  TaskEvent e;
  e.seq = j.at("seq").get<std::int64_t>();
  e.task_id = j.at("task_id").get<std::string>();
  e.timestamp = j.value("timestamp", "");
  e.stage = j.at("stage").get<std::string>();
  e.level = j.at("level").get<std::string>();
  e.message = j.value("message", "");
  e.progress = j.value("progress", 0.0);
  return e;
}

void Transaction::put_task(TaskRecord r) { ops_.push_back({"tasks", "put", r.to_json()}); }
void Transaction::put_frame(FrameRecord r) { ops_.push_back({"frames", "put", r.to_json()}); }
void Transaction::put_fine(FineGrainedRow r) { ops_.push_back({"fine", "put", r.to_json()}); }
void Transaction::put_county(CountyRow r) { ops_.push_back({"county", "put", r.to_json()}); }
void Transaction::clear_task_results(const std::string& task_id) {
  ops_.push_back({"frames", "clear", {{"task_id", task_id}}});
  ops_.push_back({"fine", "clear", {{"task_id", task_id}}});
}

Store::Store(fs::path dir) : dir_(std::move(dir)) {}

Store::~Store() { close_journals(); }

std::unique_ptr<Store> Store::open(const fs::path& dir) {
  fs::create_directories(dir);
  std::unique_ptr<Store> s(new Store(dir));
  s->load();
  return s;
}

namespace {

std::int64_t read_generation(const fs::path& dir) {
  const fs::path manifest = dir / "MANIFEST.json";
  if (!fs::exists(manifest)) return -1;
  std::ifstream in(manifest);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw RecoveryError("store manifest unreadable: " + std::string(e.what()));
  }
  if (j.value("format", "") != "geoecon-store")
    throw FormatError(dir.string() + " is not a geoecon store");
  if (j.value("schema_version", 0) != Store::kSchemaVersion)
    throw FormatError("store schema version " + j.value("schema_version", nlohmann::json()).dump() +
                      " unsupported (expected " + std::to_string(Store::kSchemaVersion) + ")");
  return j.at("generation").get<std::int64_t>();
}

void write_manifest_file(const fs::path& dir, std::int64_t gen) {
  const nlohmann::json j = {{"format", "geoecon-store"},
                            {"schema_version", Store::kSchemaVersion},
                            {"generation", gen},
                            {"tables", kTables}};
  const fs::path tmp = dir / "MANIFEST.json.tmp";
  {
    std::FILE* f = std::fopen(tmp.c_str(), "wb");
    if (!f) throw IoError("cannot write " + tmp.string());
    const std::string text = j.dump(2) + "\n";
    std::fwrite(text.data(), 1, text.size(), f);
    fsync_file(f);
    std::fclose(f);
  }
  fs::rename(tmp, dir / "MANIFEST.json");
  fsync_dir(dir);
}

}  // namespace

void Store::load() {
  std::int64_t gen = read_generation(dir_);
  if (gen < 0) {
    gen = 0;
    write_manifest_file(dir_, gen);
  }

  // Commit markers first: they decide which journal lines count.
  std::map<std::int64_t, nlohmann::json> committed;
  std::int64_t last_tx = 0, max_tx = 0;
  for (const auto& line : read_journal(dir_ / journal_name("commits", gen), 0)) {
    committed[line.tx] = line.body.value("lines", nlohmann::json::object());
    last_tx = std::max(last_tx, line.tx);
  }
  max_tx = last_tx;

  std::map<std::int64_t, std::map<std::string, std::int64_t>> seen;
  bool orphans = false;
  for (const auto& table : kTables) {
    for (const auto& line : read_journal(dir_ / journal_name(table, gen), last_tx)) {
      max_tx = std::max(max_tx, line.tx);
      if (!committed.count(line.tx)) {
        orphans = true;
        continue;
      }
      ++seen[line.tx][table];
      try {
        apply(table, line.body.at("op").get<std::string>(), line.body.at("row"), line.tx);
      } catch (const std::exception& e) {
        throw RecoveryError(table + " journal: bad record in tx " + std::to_string(line.tx) + ": " +
                            e.what() + "; last consistent commit is tx " + std::to_string(line.tx - 1));
      }
    }
  }
  for (const auto& [tx, counts] : committed) {
    for (const auto& [table, n] : counts.items()) {
      if (seen[tx][table] != n.get<std::int64_t>())
        throw RecoveryError("commit tx " + std::to_string(tx) + " expects " + n.dump() + " " + table +
                            " records, found " + std::to_string(seen[tx][table]) +
                            "; last consistent commit is tx " + std::to_string(tx - 1));
    }
  }
  next_tx_ = max_tx + 1;
  for (const auto& [task, evs] : events_)
    for (const auto& e : evs) next_seq_ = std::max(next_seq_, e.seq + 1);
  for (auto& [task, evs] : events_)
    std::sort(evs.begin(), evs.end(), [](const TaskEvent& a, const TaskEvent& b) { return a.seq < b.seq; });

  // Journals are named by generation; remember it through the open files.
  files_.clear();
  for (const auto& table : kTables) {
    std::FILE* f = std::fopen((dir_ / journal_name(table, gen)).c_str(), "ab");
    if (!f) throw IoError("cannot open journal for " + table);
    files_[table] = f;
  }
  commits_ = std::fopen((dir_ / journal_name("commits", gen)).c_str(), "ab");
  if (!commits_) throw IoError("cannot open commit log in " + dir_.string());
  generation_ = gen;

  if (orphans) compact();
}

void Store::close_journals() {
  for (auto& [t, f] : files_)
    if (f) std::fclose(f);
  files_.clear();
  if (commits_) std::fclose(commits_);
  commits_ = nullptr;
}

void Store::apply(const std::string& table, const std::string& op, const nlohmann::json& row,
                  std::int64_t tx) {
  if (table == "tasks") {
    TaskRecord r = TaskRecord::from_json(row);
    tasks_[r.task_id] = std::move(r);
    (void)tx;
  } else if (table == "frames") {
    if (op == "clear") {
      const auto id = row.at("task_id").get<std::string>();
      erase_if_map(frames_, [&](const auto& kv) { return kv.first.first == id; });
    } else {
      FrameRecord r = FrameRecord::from_json(row);
      frames_[{r.task_id, r.frame_id}] = std::move(r);
    }
  } else if (table == "fine") {
    if (op == "clear") {
      const auto id = row.at("task_id").get<std::string>();
      erase_if_map(fine_, [&](const auto& kv) { return kv.first.first == id; });
    } else {
      FineGrainedRow r = FineGrainedRow::from_json(row);
      fine_[{r.task_id, r.cell}] = std::move(r);
    }
  } else if (table == "county") {
    CountyRow r = CountyRow::from_json(row);
    county_[{r.county_id, r.period}] = std::move(r);
  } else if (table == "events") {
    TaskEvent e = TaskEvent::from_json(row);
    events_[e.task_id].push_back(std::move(e));
  } else {
    throw FormatError("unknown table '" + table + "'");
  }
}

void Store::validate(const Transaction& tx) const {
  std::map<std::string, TaskStatus> task_state;
  for (const auto& [id, r] : tasks_) task_state[id] = r.status;
  std::set<std::pair<std::string, std::string>> frames_in_tx, fine_in_tx;
  std::set<std::pair<std::string, std::string>> county_in_tx;
  for (const auto& op : tx.ops_) {
    if (op.table == "tasks") {
      const TaskRecord r = TaskRecord::from_json(op.row);
      if (r.task_id.empty()) throw ConstraintError("task_id must be non-empty");
      auto it = task_state.find(r.task_id);
      if (it != task_state.end() && !transition_allowed(it->second, r.status))
        throw ConstraintError("task " + r.task_id + ": illegal status transition " +
                              to_string(it->second) + " -> " + to_string(r.status));
      if (it == task_state.end() && r.status != TaskStatus::kPending)
        throw ConstraintError("task " + r.task_id + " must be created as pending");
      task_state[r.task_id] = r.status;
    } else if (op.op == "clear") {
      if (!task_state.count(op.row.at("task_id").get<std::string>()))
        throw ConstraintError("clear_task_results for unknown task " + op.row.at("task_id").dump());
    } else {
      const std::string task_id = op.row.at("task_id").get<std::string>();
      if (!task_state.count(task_id))
        throw ConstraintError(op.table + " row cites unknown task '" + task_id + "'");
      if (op.table == "frames" &&
          !frames_in_tx.emplace(task_id, op.row.at("frame_id").get<std::string>()).second)
        throw ConstraintError("duplicate frame (" + task_id + ", " + op.row.at("frame_id").dump() + ")");
      if (op.table == "fine" && !fine_in_tx.emplace(task_id, op.row.at("cell").get<std::string>()).second)
        throw ConstraintError("duplicate cell (" + task_id + ", " + op.row.at("cell").dump() + ")");
      if (op.table == "county" &&
          !county_in_tx.emplace(op.row.at("county_id").get<std::string>(), op.row.at("period").get<std::string>())
               .second)
        throw ConstraintError("duplicate county row " + op.row.at("county_id").dump() + "/" +
                              op.row.at("period").dump());
    }
  }
}

void Store::write_line(std::FILE* f, const std::string& line) {
  ++lines_written_;
  if (crash_after_lines_ >= 0 && lines_written_ > crash_after_lines_) {
    // Simulated power cut: half a record reaches the disk.
    std::fwrite(line.data(), 1, line.size() / 2, f);
    std::fflush(f);
    std::_Exit(86);
  }
  std::fwrite(line.data(), 1, line.size(), f);
  std::fputc('\n', f);
}

std::int64_t Store::write(const Transaction& in, bool durable) {
  const std::int64_t id = next_tx_++;
  Transaction tx = in;
  for (auto& op : tx.ops_)
    if (op.table == "tasks" && op.row.value("status", "") == "succeeded" && op.row.value("result_tx", 0) == 0)
      op.row["result_tx"] = id;
  std::map<std::string, std::int64_t> counts;
  for (const auto& table : kTables) {
    std::FILE* f = files_.at(table);
    bool touched = false;
    for (const auto& op : tx.ops_) {
      if (op.table != table) continue;
      write_line(f, nlohmann::json{{"tx", id}, {"op", op.op}, {"row", op.row}}.dump());
      ++counts[table];
      touched = true;
    }
    if (touched) {
      if (durable) fsync_file(f);
      else std::fflush(f);
    }
  }
  write_line(commits_, nlohmann::json{{"tx", id}, {"lines", counts}}.dump());
  if (durable) fsync_file(commits_);
  else std::fflush(commits_);
  for (const auto& op : tx.ops_) apply(op.table, op.op, op.row, id);
  return id;
}

std::int64_t Store::commit(const Transaction& tx) {
  std::unique_lock lock(mu_);
  validate(tx);
  return write(tx, true);
}

void Store::create_task(TaskRecord r) {
  std::unique_lock lock(mu_);
  if (tasks_.count(r.task_id)) throw ConstraintError("task '" + r.task_id + "' already exists");
  if (r.created_at.empty()) r.created_at = utc_timestamp();
  if (r.updated_at.empty()) r.updated_at = r.created_at;
  Transaction tx;
  tx.put_task(std::move(r));
  validate(tx);
  write(tx, true);
}

void Store::update_task(const TaskRecord& r) {
  std::unique_lock lock(mu_);
  if (!tasks_.count(r.task_id)) throw NotFoundError("no task '" + r.task_id + "'");
  Transaction tx;
  tx.put_task(r);
  validate(tx);
  write(tx, true);
}

void Store::put_frame(FrameRecord r) {
  Transaction tx;
  tx.put_frame(std::move(r));
  commit(tx);
}

void Store::put_fine(FineGrainedRow r) {
  Transaction tx;
  tx.put_fine(std::move(r));
  commit(tx);
}

void Store::put_county(CountyRow r) {
  Transaction tx;
  tx.put_county(std::move(r));
  commit(tx);
}

std::int64_t Store::append_event(TaskEvent e) {
  std::unique_lock lock(mu_);
  if (!tasks_.count(e.task_id)) throw ConstraintError("event cites unknown task '" + e.task_id + "'");
  e.seq = next_seq_++;
  if (e.timestamp.empty()) e.timestamp = utc_timestamp();
  Transaction tx;
  tx.ops_.push_back({"events", "put", e.to_json()});
  write(tx, false);
  return e.seq;
}

std::optional<TaskRecord> Store::find_task(const std::string& task_id) const {
  std::shared_lock lock(mu_);
  auto it = tasks_.find(task_id);
  if (it == tasks_.end()) return std::nullopt;
  return it->second;
}

TaskRecord Store::get_task(const std::string& task_id) const {
  auto t = find_task(task_id);
  if (!t) throw NotFoundError("no task '" + task_id + "'");
  return *t;
}

std::optional<TaskRecord> Store::find_task_by_idempotency_key(const std::string& key) const {
  if (key.empty()) return std::nullopt;
  std::shared_lock lock(mu_);
  for (const auto& [id, r] : tasks_)
    if (r.idempotency_key == key) return r;
  return std::nullopt;
}

std::vector<TaskRecord> Store::tasks() const {
  std::shared_lock lock(mu_);
  std::vector<TaskRecord> out;
  for (const auto& [id, r] : tasks_) out.push_back(r);
  return out;
}

std::vector<FrameRecord> Store::frames(const std::string& task_id) const {
  std::shared_lock lock(mu_);
  std::vector<FrameRecord> out;
  for (auto it = frames_.lower_bound({task_id, ""}); it != frames_.end() && it->first.first == task_id; ++it)
    out.push_back(it->second);
  return out;
}

std::vector<FineGrainedRow> Store::fine_rows(const std::string& task_id) const {
  std::shared_lock lock(mu_);
  std::vector<FineGrainedRow> out;
  for (auto it = fine_.lower_bound({task_id, ""}); it != fine_.end() && it->first.first == task_id; ++it)
    out.push_back(it->second);
  return out;
}

std::optional<CountyRow> Store::get_county(const std::string& county_id, const std::string& period) const {
  std::shared_lock lock(mu_);
  auto it = county_.find({county_id, period});
  if (it == county_.end()) return std::nullopt;
  return it->second;
}

std::vector<CountyRow> Store::county_rows() const {
  std::shared_lock lock(mu_);
  std::vector<CountyRow> out;
  for (const auto& [k, r] : county_) out.push_back(r);
  return out;
}

bool Store::has_county(const std::string& county_id) const {
  std::shared_lock lock(mu_);
  auto it = county_.lower_bound({county_id, ""});
  return it != county_.end() && it->first.first == county_id;
}

std::vector<TaskEvent> Store::events(const std::string& task_id, std::int64_t after_seq) const {
  std::shared_lock lock(mu_);
  std::vector<TaskEvent> out;
  auto it = events_.find(task_id);
  if (it == events_.end()) return out;
  for (const auto& e : it->second)
    if (e.seq > after_seq) out.push_back(e);
  return out;
}

std::vector<FineGrainedRow> Store::query_heatmap(const BBox& bbox, const std::string& period) const {
  std::shared_lock lock(mu_);
  const TaskRecord* latest = nullptr;
  for (const auto& [id, r] : tasks_) {
    if (r.status != TaskStatus::kSucceeded) continue;
    if (r.spec.value("period", "") != period) continue;
    if (!latest || r.result_tx > latest->result_tx) latest = &r;
  }
  std::vector<FineGrainedRow> out;
  if (!latest) return out;
  for (auto it = fine_.lower_bound({latest->task_id, ""});
       it != fine_.end() && it->first.first == latest->task_id; ++it)
    if (bbox.contains({it->second.lat, it->second.lon})) out.push_back(it->second);
  return out;
}

std::vector<CountyRow> Store::query_trend(const std::string& county_id, const std::string& from,
                                          const std::string& to) const {
  std::shared_lock lock(mu_);
  std::vector<CountyRow> out;
  for (auto it = county_.lower_bound({county_id, from});
       it != county_.end() && it->first.first == county_id && it->first.second <= to; ++it)
    out.push_back(it->second);
  return out;
}

std::string Store::export_task_results(const std::string& task_id) const {
  std::ostringstream os;
  for (const auto& f : frames(task_id)) os << "frame " << f.to_json().dump() << "\n";
  for (const auto& r : fine_rows(task_id)) os << "fine " << r.to_json().dump() << "\n";
  for (const auto& c : county_rows())
    if (c.task_id == task_id) os << "county " << c.to_json().dump() << "\n";
  return os.str();
}

void Store::compact() {
  std::unique_lock lock(mu_);
  const std::int64_t gen = generation_ + 1;
  const std::int64_t tx = next_tx_++;
  std::map<std::string, std::int64_t> counts;
  auto write_table = [&](const std::string& table, const std::vector<nlohmann::json>& rows) {
    const fs::path path = dir_ / journal_name(table, gen);
    std::FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) throw IoError("cannot write " + path.string());
    for (const auto& row : rows) {
      const std::string line = nlohmann::json{{"tx", tx}, {"op", "put"}, {"row", row}}.dump() + "\n";
      std::fwrite(line.data(), 1, line.size(), f);
    }
    fsync_file(f);
    std::fclose(f);
    if (!rows.empty()) counts[table] = static_cast<std::int64_t>(rows.size());
  };
  std::vector<nlohmann::json> rows;
  for (const auto& [k, r] : tasks_) rows.push_back(r.to_json());
  write_table("tasks", rows);
  rows.clear();
  for (const auto& [k, r] : frames_) rows.push_back(r.to_json());
  write_table("frames", rows);
  rows.clear();
  for (const auto& [k, r] : fine_) rows.push_back(r.to_json());
  write_table("fine", rows);
  rows.clear();
  for (const auto& [k, r] : county_) rows.push_back(r.to_json());
  write_table("county", rows);
  rows.clear();
  for (const auto& [k, evs] : events_)
    for (const auto& e : evs) rows.push_back(e.to_json());
  write_table("events", rows);
  {
    const fs::path path = dir_ / journal_name("commits", gen);
    std::FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) throw IoError("cannot write " + path.string());
    const std::string line = nlohmann::json{{"tx", tx}, {"lines", counts}}.dump() + "\n";
    std::fwrite(line.data(), 1, line.size(), f);
    fsync_file(f);
    std::fclose(f);
  }
  fsync_dir(dir_);
  // The manifest rename is the switch-over point.
  write_manifest_file(dir_, gen);
  close_journals();
  for (const auto& table : kTables) fs::remove(dir_ / journal_name(table, generation_));
  fs::remove(dir_ / journal_name("commits", generation_));
  generation_ = gen;
  for (const auto& table : kTables) {
    files_[table] = std::fopen((dir_ / journal_name(table, gen)).c_str(), "ab");
    if (!files_[table]) throw IoError("cannot reopen journal " + table);
  }
  commits_ = std::fopen((dir_ / journal_name("commits", gen)).c_str(), "ab");
  if (!commits_) throw IoError("cannot reopen commit log");
}

}  // namespace geoecon
