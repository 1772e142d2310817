#include "psl/records.hpp"

#include <array>
#include <chrono>
#include <ctime>
#include <sstream>
#include <stdexcept>

namespace psl {

namespace {

constexpr std::array<const char*, 6> kKindNames = {"clean_acc",   "robust_err",  "quant_acc",
                                                   "filter_norms", "preact_mean", "corruption_acc"};

template <class T>
void put(nlohmann::ordered_json& j, const char* key, const std::optional<T>& v) {
  if (v) j[key] = *v;
}

template <class T>
void get(const nlohmann::json& j, const char* key, std::optional<T>& v) {
  if (j.contains(key)) v = j.at(key).get<T>();
}

}  // namespace

std::string to_string(RecordKind kind) { return kKindNames[static_cast<std::size_t>(kind)]; }

RecordKind parse_record_kind(const std::string& name) {
  for (std::size_t i = 0; i < kKindNames.size(); ++i) {
    if (name == kKindNames[i]) return static_cast<RecordKind>(i);
  }
  throw std::invalid_argument("unknown record kind '" + name + "'");
}

nlohmann::ordered_json RecordKeys::to_json() const {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  put(j, "model_eps", model_eps);
  put(j, "attack", attack);
  put(j, "delta", delta);
  put(j, "tap", tap);
  put(j, "beta", beta);
  put(j, "corruption", corruption);
  put(j, "severity", severity);
  put(j, "layer", layer);
  put(j, "stat", stat);
  return j;
}

RecordKeys RecordKeys::from_json(const nlohmann::json& j) {
  RecordKeys k;
  get(j, "model_eps", k.model_eps);
  get(j, "attack", k.attack);
  get(j, "delta", k.delta);
  get(j, "tap", k.tap);
  get(j, "beta", k.beta);
  get(j, "corruption", k.corruption);
  get(j, "severity", k.severity);
  get(j, "layer", k.layer);
  get(j, "stat", k.stat);
  return k;
}

std::string RecordKeys::identity() const { return to_json().dump(); }

std::string ResultRecord::to_line() const {
  nlohmann::ordered_json j;
  j["version"] = version;
  j["run_id"] = run_id;
  j["timestamp"] = timestamp;
  j["fingerprint"] = fingerprint;
  j["kind"] = to_string(kind);
  j["keys"] = keys.to_json();
  j["value"] = value;
  j["seed"] = seed;
  return j.dump();
}

ResultRecord ResultRecord::from_line(const std::string& line) {
  const auto j = nlohmann::json::parse(line);
  ResultRecord r;
  r.version = j.at("version").get<int>();
  if (r.version != kRecordVersion) {
    throw std::runtime_error("record version " + std::to_string(r.version) + " is not supported");
  }
  r.run_id = j.at("run_id").get<std::string>();
  r.timestamp = j.at("timestamp").get<std::string>();
  r.fingerprint = j.at("fingerprint").get<std::string>();
  r.kind = parse_record_kind(j.at("kind").get<std::string>());
  r.keys = RecordKeys::from_json(j.at("keys"));
  r.value = j.at("value").get<double>();
  r.seed = j.at("seed").get<std::uint64_t>();
  return r;
}

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm utc{};
  gmtime_r(&now, &utc);
  char text[32];
  std::strftime(text, sizeof text, "%Y-%m-%dT%H:%M:%SZ", &utc);
  return text;
}

RecordSink::RecordSink(const std::filesystem::path& path, std::string run_id, std::string fingerprint)
    : out_(path, std::ios::app | std::ios::binary), run_id_(std::move(run_id)), fingerprint_(std::move(fingerprint)) {
  if (!out_) throw std::runtime_error("cannot open record store " + path.string());
}

void RecordSink::append(RecordKind kind, const RecordKeys& keys, double value, std::uint64_t seed) {
  ResultRecord r;
  r.run_id = run_id_;
  r.timestamp = utc_timestamp();
  r.fingerprint = fingerprint_;
  r.kind = kind;
  r.keys = keys;
  r.value = value;
  r.seed = seed;
  append(r);
}

void RecordSink::append(const ResultRecord& record) {
  const std::string line = record.to_line() + "\n";
  std::lock_guard lock(mutex_);
  out_.write(line.data(), static_cast<std::streamsize>(line.size()));
  out_.flush();
  if (!out_) throw std::runtime_error("failed to append record");
  written_.push_back(record);
}

std::vector<ResultRecord> read_records(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open record store " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  const std::string text = buffer.str();

  std::vector<ResultRecord> records;
  std::size_t start = 0;
  std::size_t line_no = 1;
  while (start < text.size()) {
    const std::size_t end = text.find('\n', start);
    if (end == std::string::npos) break;
    const std::string line = text.substr(start, end - start);
    if (!line.empty()) {
      try {
        records.push_back(ResultRecord::from_line(line));
      } catch (const std::exception& e) {
        throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
      }
    }
    start = end + 1;
    ++line_no;
  }
  return records;
}

}  // namespace psl
