#pragma once

// HTTP backend for human evaluation of directions: serves frames
// G(z_row + s a_k) for a fixed z-set, records assessor answers in an
// append-only NDJSON file, and aggregates them into MOS.
//
//   GET  /directions             direction list, descending DVN when known
//   GET  /session?assessor=ID    z-set id, direction order, completed flags
//   GET  /frame?k=&s=&row=       PNG
//   POST /annotation             AnnotationRecord as JSON
//   GET  /report                 MOS, category rates, record counts

#include <filesystem>
#include <map>
#include <mutex>
#include <string>
#include <tuple>
#include <vector>

#include "latentdirs/charts.hpp"
#include "latentdirs/metrics.hpp"

namespace httplib {
class Server;
}

namespace latentdirs {

// Append-only record file. Every submission is written as one line and
// flushed; a later record for the same (assessor, direction) supersedes the
// earlier one when aggregating.
class AnnotationStore {
 public:
  // Loads existing records from `file` if it exists.
  explicit AnnotationStore(std::filesystem::path file);

  void submit(const AnnotationRecord& record);
  // Current record per (assessor, direction), in order of first submission.
  [[nodiscard]] std::vector<AnnotationRecord> latest() const;
  [[nodiscard]] const std::filesystem::path& path() const { return file_; }

  // Same replacement rule applied to an exported file.
  static std::vector<AnnotationRecord> read_latest(const std::filesystem::path& file);

 private:
  void apply(const AnnotationRecord& record);

  std::filesystem::path file_;
  mutable std::mutex mutex_;
  std::vector<AnnotationRecord> records_;
  std::map<std::pair<std::string, int>, std::size_t> index_;
};

struct StudyConfig {
  std::uint64_t z_seed = 0;  // row r uses chart_row(G, z_seed + r)
  int rows = 10;
  double s_limit = 9.0;
  // Optional DVN per direction; the direction list is sorted by it.
  std::vector<double> dvn;

  [[nodiscard]] std::string z_set_id() const { return "zset-" + std::to_string(z_seed) + "x" + std::to_string(rows); }
};

class HttpError : public std::runtime_error {
 public:
  HttpError(int status, std::string kind, const std::string& message)
      : std::runtime_error(message), status_(status), kind_(std::move(kind)) {}
  [[nodiscard]] int status() const { return status_; }
  [[nodiscard]] const std::string& kind() const { return kind_; }

 private:
  int status_;
  std::string kind_;
};

class StudyService {
 public:
  StudyService(const Generator& generator, DirectionMatrix directions, StudyConfig config, AnnotationStore& store);

  [[nodiscard]] io::Json directions() const;
  [[nodiscard]] io::Json session(const std::string& assessor) const;
  // PNG bytes; identical requests return identical bytes from the cache.
  std::vector<unsigned char> frame(int k, double s, int row);
  io::Json submit(const io::Json& body);
  [[nodiscard]] io::Json report() const;

  [[nodiscard]] const StudyConfig& config() const { return config_; }
  [[nodiscard]] const std::vector<ChartRow>& z_set() const { return rows_; }

  // Registers the routes on `server`.
  void mount(httplib::Server& server);

 private:
  const Generator& generator_;
  DirectionMatrix directions_;
  Eigen::MatrixXd effective_;
  StudyConfig config_;
  AnnotationStore& store_;
  std::vector<ChartRow> rows_;
  std::vector<int> order_;
  std::mutex cache_mutex_;
  std::map<std::tuple<int, double, int>, std::vector<unsigned char>> cache_;
};

// Blocks serving on host:port until the server is stopped.
void serve(StudyService& service, const std::string& host, int port);

}  // namespace latentdirs
