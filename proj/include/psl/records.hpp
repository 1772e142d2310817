#pragma once

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace psl {

inline constexpr int kRecordVersion = 1;

enum class RecordKind { clean_acc, robust_err, quant_acc, filter_norms, preact_mean, corruption_acc };

std::string to_string(RecordKind kind);
RecordKind parse_record_kind(const std::string& name);

/// Coordinates of a measurement. Unset fields are omitted from the line.
struct RecordKeys {
  std::optional<int> model_eps;
  std::optional<std::string> attack;
  std::optional<int> delta;
  std::optional<std::string> tap;
  std::optional<double> beta;
  std::optional<std::string> corruption;
  std::optional<int> severity;
  std::optional<std::string> layer;
  std::optional<std::string> stat;

  nlohmann::ordered_json to_json() const;
  static RecordKeys from_json(const nlohmann::json& j);
  /// Canonical text of the keys, used to identify repeated measurements.
  std::string identity() const;
  bool operator==(const RecordKeys&) const = default;
};

/// One measurement. Serialized as a single JSON line whose fields appear in
/// this order: version (int), run_id (string), timestamp (ISO-8601 UTC string),
/// fingerprint (hex string), kind (string), keys (object), value (number),
/// seed (unsigned integer).
struct ResultRecord {
  int version = kRecordVersion;
  std::string run_id;
  std::string timestamp;
  std::string fingerprint;
  RecordKind kind = RecordKind::clean_acc;
  RecordKeys keys;
  double value = 0.0;
  std::uint64_t seed = 0;

  std::string to_line() const;
  static ResultRecord from_line(const std::string& line);
};

std::string utc_timestamp();

/// Append-only sink over a JSONL file. Appends from several threads are
/// serialized, and every record is written and flushed as one whole line.
class RecordSink {
 public:
  RecordSink(const std::filesystem::path& path, std::string run_id, std::string fingerprint);

  void append(RecordKind kind, const RecordKeys& keys, double value, std::uint64_t seed);
  void append(const ResultRecord& record);
  const std::vector<ResultRecord>& written() const { return written_; }
  const std::string& run_id() const { return run_id_; }

 private:
  std::mutex mutex_;
  std::ofstream out_;
  std::string run_id_;
  std::string fingerprint_;
  std::vector<ResultRecord> written_;
};

/// Reads every complete line of a record store. A trailing line without a
/// newline (an interrupted append) is ignored; any other malformed line throws
/// with its line number.
std::vector<ResultRecord> read_records(const std::filesystem::path& path);

}  // namespace psl
