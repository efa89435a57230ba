#include "latentdirs/annotation_service.hpp"

#include <cmath>
#include <fstream>
#include <set>

#include <httplib.h>

#include "latentdirs/error.hpp"

namespace latentdirs {

AnnotationStore::AnnotationStore(std::filesystem::path file) : file_(std::move(file)) {
  if (std::filesystem::exists(file_)) {
    for (const auto& r : read_latest(file_)) apply(r);
  }
}

void AnnotationStore::apply(const AnnotationRecord& record) {
  const auto key = std::make_pair(record.assessor_id, record.direction_index);
  if (auto it = index_.find(key); it != index_.end()) {
    records_[it->second] = record;
  } else {
    index_.emplace(key, records_.size());
    records_.push_back(record);
  }
}

void AnnotationStore::submit(const AnnotationRecord& record) {
  record.validate();
  std::lock_guard lock(mutex_);
  if (file_.has_parent_path()) std::filesystem::create_directories(file_.parent_path());
  std::ofstream out(file_, std::ios::app);
  out << record.to_json().dump() << '\n';
  out.flush();
  if (!out) throw Error(ErrorKind::Io, "cannot append to " + file_.string());
  apply(record);
}

std::vector<AnnotationRecord> AnnotationStore::latest() const {
  std::lock_guard lock(mutex_);
  return records_;
}

std::vector<AnnotationRecord> AnnotationStore::read_latest(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw Error(ErrorKind::Io, "cannot read " + file.string());
  std::vector<AnnotationRecord> records;
  std::map<std::pair<std::string, int>, std::size_t> index;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    io::Json j;
    try {
      j = io::Json::parse(line);
    } catch (const io::Json::exception& e) {
      throw Error(ErrorKind::Io, file.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    auto r = AnnotationRecord::from_json(j);
    const auto key = std::make_pair(r.assessor_id, r.direction_index);
    if (auto it = index.find(key); it != index.end()) {
      records[it->second] = std::move(r);
    } else {
      index.emplace(key, records.size());
      records.push_back(std::move(r));
    }
  }
  return records;
}

StudyService::StudyService(const Generator& generator, DirectionMatrix directions, StudyConfig config,
                           AnnotationStore& store)
    : generator_(generator),
      directions_(std::move(directions)),
      effective_(directions_.effective()),
      config_(std::move(config)),
      store_(store) {
  if (directions_.latent_dim() != generator.latent_dim()) {
    throw Error(ErrorKind::ShapeMismatch, "direction matrix does not match the generator latent dim");
  }
  if (config_.rows < 1) throw Error(ErrorKind::Validation, "study needs at least one row");
  if (!config_.dvn.empty() && static_cast<int>(config_.dvn.size()) != directions_.num_directions()) {
    throw Error(ErrorKind::ShapeMismatch, "one DVN value per direction expected");
  }
  for (int r = 0; r < config_.rows; ++r) rows_.push_back(chart_row(generator, config_.z_seed + static_cast<std::uint64_t>(r)));
  if (config_.dvn.empty()) {
    for (int k = 0; k < directions_.num_directions(); ++k) order_.push_back(k);
  } else {
    order_ = rank_values(config_.dvn).order;
  }
}

io::Json StudyService::directions() const {
  io::Json list = io::Json::array();
  for (int k : order_) {
    io::Json item = {{"index", k}};
    item["dvn"] = config_.dvn.empty() ? io::Json(nullptr) : io::Json(config_.dvn[static_cast<std::size_t>(k)]);
    list.push_back(item);
  }
  return {{"directions", list},
          {"count", directions_.num_directions()},
          {"rows", config_.rows},
          {"s_limit", config_.s_limit},
          {"z_set_id", config_.z_set_id()}};
}

io::Json StudyService::session(const std::string& assessor) const {
  if (assessor.empty()) throw HttpError(400, "validation", "assessor is required");
  std::set<int> done;
  for (const auto& r : store_.latest()) {
    if (r.assessor_id == assessor) done.insert(r.direction_index);
  }
  io::Json completed = io::Json::array();
  for (int k : order_) completed.push_back(done.count(k) > 0);
  return {{"session_id", assessor + "@" + config_.z_set_id()},
          {"assessor_id", assessor},
          {"z_set_id", config_.z_set_id()},
          {"order", order_},
          {"completed", completed}};
}

std::vector<unsigned char> StudyService::frame(int k, double s, int row) {
  if (k < 0 || k >= directions_.num_directions()) {
    throw HttpError(400, "index", "direction " + std::to_string(k) + " out of range");
  }
  if (row < 0 || row >= config_.rows) throw HttpError(400, "index", "row " + std::to_string(row) + " out of range");
  if (!std::isfinite(s) || std::abs(s) > config_.s_limit) {
    throw HttpError(400, "validation", "shift must lie in [-" + std::to_string(config_.s_limit) + ", " +
                                           std::to_string(config_.s_limit) + "]");
  }
  const auto key = std::make_tuple(k, s, row);
  {
    std::lock_guard lock(cache_mutex_);
    if (auto it = cache_.find(key); it != cache_.end()) return it->second;
  }
  auto png = encode_png(render_cell(generator_, effective_, rows_[static_cast<std::size_t>(row)], k, s));
  std::lock_guard lock(cache_mutex_);
  return cache_.emplace(key, std::move(png)).first->second;
}

io::Json StudyService::submit(const io::Json& body) {
  AnnotationRecord r;
  try {
    io::Json j = body;
    if (!j.contains("z_set_id")) j["z_set_id"] = config_.z_set_id();
    r = AnnotationRecord::from_json(j);
  } catch (const Error& e) {
    throw HttpError(400, std::string(to_string(e.kind())), e.what());
  }
  if (r.direction_index >= directions_.num_directions()) {
    throw HttpError(400, "index", "direction " + std::to_string(r.direction_index) + " out of range");
  }
  if (r.z_set_id != config_.z_set_id()) {
    throw HttpError(400, "validation", "record refers to z-set '" + r.z_set_id + "', study uses '" + config_.z_set_id() + "'");
  }
  store_.submit(r);
  return {{"ok", true}, {"mark", r.mark() ? 1 : 0}};
}

io::Json StudyService::report() const {
  const auto records = store_.latest();
  std::set<std::string> assessors;
  for (const auto& r : records) assessors.insert(r.assessor_id);
  io::Json j = {{"records", records.size()}, {"assessors", assessors.size()}, {"z_set_id", config_.z_set_id()}};
  if (records.empty()) {
    j["mos"] = nullptr;
    j["category_rates"] = nullptr;
    return j;
  }
  const auto m = mos_aggregate(records);
  j["mos"] = m.mos;
  j["category_rates"] = {{"geometry", m.rates.geometry}, {"coloring", m.rates.coloring}, {"textural", m.rates.textural}};
  io::Json per = io::Json::array();
  for (int k = 0; k < directions_.num_directions(); ++k) {
    int n = 0;
    int marks = 0;
    for (const auto& r : records) {
      if (r.direction_index != k) continue;
      ++n;
      marks += r.mark() ? 1 : 0;
    }
    per.push_back({{"index", k}, {"records", n}, {"mos", n ? io::Json(static_cast<double>(marks) / n) : io::Json(nullptr)}});
  }
  j["per_direction"] = per;
  return j;
}

namespace {

void send_error(httplib::Response& res, int status, const std::string& kind, const std::string& message) {
  res.status = status;
  res.set_content(io::Json{{"error", kind}, {"message", message}}.dump(), "application/json");
}

template <typename Fn>
void guarded(httplib::Response& res, Fn&& fn) {
  try {
    fn();
  } catch (const HttpError& e) {
    send_error(res, e.status(), e.kind(), e.what());
  } catch (const Error& e) {
    send_error(res, 400, std::string(to_string(e.kind())), e.what());
  } catch (const std::exception& e) {
    send_error(res, 500, "internal", e.what());
  }
}

int int_param(const httplib::Request& req, const char* name) {
  if (!req.has_param(name)) throw HttpError(400, "validation", std::string("missing parameter ") + name);
  const auto v = req.get_param_value(name);
  std::size_t used = 0;
  int out = 0;
  try {
    out = std::stoi(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v.size()) throw HttpError(400, "validation", std::string("bad integer for ") + name);
  return out;
}

double real_param(const httplib::Request& req, const char* name) {
  if (!req.has_param(name)) throw HttpError(400, "validation", std::string("missing parameter ") + name);
  const auto v = req.get_param_value(name);
  std::size_t used = 0;
  double out = 0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v.size()) throw HttpError(400, "validation", std::string("bad number for ") + name);
  return out;
}

}  // namespace

void StudyService::mount(httplib::Server& server) {
  server.Get("/directions", [this](const httplib::Request&, httplib::Response& res) {
    guarded(res, [&] { res.set_content(directions().dump(), "application/json"); });
  });
  server.Get("/session", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { res.set_content(session(req.get_param_value("assessor")).dump(), "application/json"); });
  });
  server.Get("/frame", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const auto png = frame(int_param(req, "k"), real_param(req, "s"), int_param(req, "row"));
      res.set_content(std::string(png.begin(), png.end()), "image/png");
    });
  });
  server.Post("/annotation", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      io::Json body;
      try {
        body = io::Json::parse(req.body);
      } catch (const io::Json::exception& e) {
        throw HttpError(400, "validation", std::string("body is not JSON: ") + e.what());
      }
      res.set_content(submit(body).dump(), "application/json");
    });
  });
  server.Get("/report", [this](const httplib::Request&, httplib::Response& res) {
    guarded(res, [&] { res.set_content(report().dump(), "application/json"); });
  });
}

void serve(StudyService& service, const std::string& host, int port) {
  httplib::Server server;
  service.mount(server);
  if (!server.listen(host, port)) throw Error(ErrorKind::Io, "cannot listen on " + host + ":" + std::to_string(port));
}

}  // namespace latentdirs
