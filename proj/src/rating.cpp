#include "earsr/rating.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <json.hpp>
#include <random>
#include <regex>
#include <sstream>

#include "earsr/error.hpp"
#include "earsr/png.hpp"
#include "earsr/random.hpp"
#include "earsr/volume_io.hpp"

namespace earsr::rating {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kLogName = "records.ndjson";
constexpr const char* kSnapshotName = "snapshot.json";

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) h = (h ^ c) * 0x100000001b3ull;
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string random_token() {
  std::random_device rd;
  std::string t;
  for (int i = 0; i < 2; ++i) {
    const std::uint64_t v = (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
    t += hex64(v);
  }
  return t;
}

std::string store_asset(const Image& img, const fs::path& assets) {
  const std::string png = io::encode_png_gray8(img);
  const std::string name = hex64(fnv1a(png)) + ".png";
  if (!fs::exists(assets / name)) io::write_file_atomic(assets / name, png);
  return name;
}

bool valid_criterion(const std::string& c) {
  return std::find(kCriteria.begin(), kCriteria.end(), c) != kCriteria.end();
}

std::int64_t now_ms() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(
             std::chrono::system_clock::now().time_since_epoch())
      .count();
}

std::vector<RatingRecord> read_log(const fs::path& path) {
  std::vector<RatingRecord> out;
  std::ifstream in(path);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      out.push_back(record_from_json(line));
    } catch (const std::exception&) {
      // A torn final line from a crash mid-append was never acknowledged.
      if (in.peek() == std::char_traits<char>::eof()) break;
      throw;
    }
  }
  return out;
}

double quantile_sorted(const std::vector<int>& v, double q) {
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(pos);
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

}  // namespace

std::array<int, kCandidates> candidate_order(std::uint64_t seed, const std::string& rater,
                                             std::size_t trial) {
  Rng rng({seed, 0x70, fnv1a(rater), static_cast<std::uint64_t>(trial)});
  std::array<int, kCandidates> p{0, 1, 2};
  for (int i = kCandidates - 1; i > 0; --i) {
    std::swap(p[i], p[rng.below(static_cast<std::uint64_t>(i) + 1)]);
  }
  return p;
}

std::array<int, kCandidates> StudyManifest::permutation(const std::string& rater,
                                                         std::size_t trial) const {
  return candidate_order(seed, rater, trial);
}

std::optional<std::size_t> StudyManifest::trial_index(const std::string& id) const {
  for (std::size_t i = 0; i < trials.size(); ++i) {
    if (trials[i].trial_id == id) return i;
  }
  return std::nullopt;
}

bool StudyManifest::has_rater(const std::string& r) const {
  return std::find(raters.begin(), raters.end(), r) != raters.end();
}

StudyManifest create_study(const StudyInput& in, const fs::path& root) {
  if (in.study_id.empty() || in.study_id.find_first_of("/\\.") != std::string::npos) {
    throw Error(ErrorCode::BadArgument, "study id must be a plain name");
  }
  if (in.methods.size() != kCandidates) {
    throw Error(ErrorCode::SetMismatch, "a study compares exactly three methods");
  }
  if (in.lr.empty()) throw Error(ErrorCode::SetMismatch, "no LR references");
  if (in.raters.empty()) throw Error(ErrorCode::BadArgument, "no raters");
  for (const auto& m : in.methods) {
    if (m.images.size() != in.lr.size()) {
      throw Error(ErrorCode::SetMismatch, "method set \"" + m.label + "\" has " +
                                              std::to_string(m.images.size()) + " images, expected " +
                                              std::to_string(in.lr.size()));
    }
  }
  const fs::path dir = root / in.study_id;
  fs::create_directories(dir / "assets");

  StudyManifest m;
  m.study_id = in.study_id;
  m.seed = in.seed;
  m.token = in.token.empty() ? random_token() : in.token;
  m.raters = in.raters;
  for (int k = 0; k < kCandidates; ++k) m.methods[k] = in.methods[k].label;
  for (std::size_t t = 0; t < in.lr.size(); ++t) {
    TrialEntry e;
    e.trial_id = hex64(Rng::mix({in.seed, 0x71, fnv1a(in.study_id), static_cast<std::uint64_t>(t)}));
    e.lr_asset = store_asset(in.lr[t], dir / "assets");
    for (int k = 0; k < kCandidates; ++k) {
      e.candidate_assets[k] = store_asset(in.methods[k].images[t], dir / "assets");
    }
    m.trials.push_back(e);
  }

  json trials = json::array();
  for (const auto& t : m.trials) {
    trials.push_back({{"trial_id", t.trial_id}, {"lr", t.lr_asset}, {"candidates", t.candidate_assets}});
  }
  const json doc{{"v", kSchemaVersion}, {"study_id", m.study_id}, {"seed", m.seed},
                 {"token", m.token},    {"methods", m.methods},   {"raters", m.raters},
                 {"trials", trials}};
  io::write_file_atomic(dir / "manifest.json", doc.dump(2) + "\n");
  return m;
}

StudyManifest load_manifest(const fs::path& dir) {
  if (!fs::exists(dir / "manifest.json")) {
    throw Error(ErrorCode::MissingManifest, "no study manifest in " + dir.string());
  }
  const json doc = json::parse(io::read_file(dir / "manifest.json"));
  if (doc.value("v", 0) != kSchemaVersion) throw Error(ErrorCode::FormatError, "unsupported study manifest version");
  StudyManifest m;
  m.study_id = doc.at("study_id").get<std::string>();
  m.seed = doc.at("seed").get<std::uint64_t>();
  m.token = doc.at("token").get<std::string>();
  m.methods = doc.at("methods").get<std::array<std::string, kCandidates>>();
  m.raters = doc.at("raters").get<std::vector<std::string>>();
  for (const auto& t : doc.at("trials")) {
    m.trials.push_back({t.at("trial_id").get<std::string>(), t.at("lr").get<std::string>(),
                        t.at("candidates").get<std::array<std::string, kCandidates>>()});
  }
  return m;
}

std::string record_to_json(const RatingRecord& r) {
  json j{{"v", kSchemaVersion}, {"seq", r.seq},         {"rater", r.rater},
         {"trial_id", r.trial_id}, {"candidate", r.candidate}, {"criterion", r.criterion},
         {"score", r.score},     {"timestamp_ms", r.timestamp_ms}};
  if (!r.idempotency_key.empty()) j["idempotency_key"] = r.idempotency_key;
  return j.dump();
}

RatingRecord record_from_json(const std::string& line) {
  const json j = json::parse(line);
  if (j.value("v", 0) != kSchemaVersion) throw Error(ErrorCode::FormatError, "unsupported record version");
  RatingRecord r;
  r.seq = j.value("seq", std::uint64_t{0});
  r.rater = j.at("rater").get<std::string>();
  r.trial_id = j.at("trial_id").get<std::string>();
  r.candidate = j.at("candidate").get<int>();
  r.criterion = j.at("criterion").get<std::string>();
  r.score = j.at("score").get<int>();
  r.timestamp_ms = j.value("timestamp_ms", std::int64_t{0});
  r.idempotency_key = j.value("idempotency_key", std::string{});
  return r;
}

std::string payload_to_json(const TrialPayload& p, const std::string& study_id,
                            const std::string& prefix) {
  if (p.done) {
    return json{{"v", kSchemaVersion}, {"study", study_id}, {"done", true}, {"total", p.total}}.dump();
  }
  json cands = json::array();
  for (int i = 0; i < kCandidates; ++i) cands.push_back({{"index", i}, {"image", prefix + p.candidate_assets[i]}});
  json saved = json::array();
  for (const auto& s : p.saved) saved.push_back({{"candidate", s.candidate}, {"criterion", s.criterion}, {"score", s.score}});
  return json{{"v", kSchemaVersion}, {"study", study_id},        {"done", false},
              {"trial_id", p.trial_id}, {"index", p.index},       {"total", p.total},
              {"lr", prefix + p.lr_asset}, {"candidates", cands}, {"criteria", kCriteria},
              {"scale", {kMinScore, kMaxScore}}, {"saved", saved}}
      .dump();
}

Study::Study(const fs::path& dir) : dir_(dir), manifest_(load_manifest(dir)) {
  std::uint64_t covered = 0;
  if (fs::exists(dir_ / kSnapshotName)) {
    const json snap = json::parse(io::read_file(dir_ / kSnapshotName));
    for (const auto& r : snap.at("records")) apply(record_from_json(r.dump()));
    covered = snap.at("last_seq").get<std::uint64_t>();
    for (auto it = snap.at("idempotency").begin(); it != snap.at("idempotency").end(); ++it) {
      idempotency_[it.key()] = it.value().get<std::uint64_t>();
    }
    next_seq_ = covered + 1;
  }
  for (const auto& r : read_log(dir_ / kLogName)) {
    if (r.seq <= covered) continue;  // compaction interrupted before the log moved
    apply(r);
    if (!r.idempotency_key.empty()) idempotency_[r.idempotency_key] = r.seq;
    next_seq_ = std::max(next_seq_, r.seq + 1);
  }
}

void Study::apply(const RatingRecord& r) {
  latest_[{r.rater, r.trial_id, r.candidate, r.criterion}] = r;
}

void Study::append_durable(const std::string& line) {
  const fs::path path = dir_ / kLogName;
  const int fd = ::open(path.c_str(), O_WRONLY | O_APPEND | O_CREAT, 0644);
  if (fd < 0) throw Error(ErrorCode::Io, "cannot open " + path.string());
  const std::string data = line + "\n";
  std::size_t done = 0;
  while (done < data.size()) {
    const ssize_t n = ::write(fd, data.data() + done, data.size() - done);
    if (n < 0) {
      ::close(fd);
      throw Error(ErrorCode::Io, "write failed on " + path.string());
    }
    done += static_cast<std::size_t>(n);
  }
  const int rc = ::fsync(fd);
  ::close(fd);
  if (rc != 0) throw Error(ErrorCode::Io, "fsync failed on " + path.string());
}

TrialPayload Study::next_trial(const std::string& rater) const {
  if (!manifest_.has_rater(rater)) throw Error(ErrorCode::UnknownRater, "rater not enrolled");
  std::shared_lock lock(mu_);
  TrialPayload p;
  p.total = manifest_.trials.size();
  for (std::size_t t = 0; t < manifest_.trials.size(); ++t) {
    const auto& entry = manifest_.trials[t];
    std::vector<ScoreView> saved;
    for (int c = 0; c < kCandidates; ++c) {
      for (const auto& crit : kCriteria) {
        auto it = latest_.find({rater, entry.trial_id, c, crit});
        if (it != latest_.end()) saved.push_back({c, crit, it->second.score});
      }
    }
    if (saved.size() == kCandidates * kCriteria.size()) continue;
    const auto order = manifest_.permutation(rater, t);
    p.trial_id = entry.trial_id;
    p.index = t;
    p.lr_asset = entry.lr_asset;
    for (int i = 0; i < kCandidates; ++i) p.candidate_assets[i] = entry.candidate_assets[order[i]];
    p.saved = std::move(saved);
    return p;
  }
  p.done = true;
  return p;
}

Ack Study::submit(RatingRecord r) {
  if (!manifest_.has_rater(r.rater)) throw Error(ErrorCode::UnknownRater, "rater not enrolled");
  if (!manifest_.trial_index(r.trial_id)) throw Error(ErrorCode::UnknownTrial, "no such trial");
  if (r.candidate < 0 || r.candidate >= kCandidates) {
    throw Error(ErrorCode::OutOfRange, "candidate index must be 0..2");
  }
  if (!valid_criterion(r.criterion)) throw Error(ErrorCode::BadArgument, "unknown criterion \"" + r.criterion + "\"");
  if (r.score < kMinScore || r.score > kMaxScore) throw Error(ErrorCode::OutOfRange, "score must be 1..6");

  std::unique_lock lock(mu_);
  if (!r.idempotency_key.empty()) {
    auto it = idempotency_.find(r.idempotency_key);
    if (it != idempotency_.end()) return {it->second, true};
  }
  r.seq = next_seq_;
  if (r.timestamp_ms == 0) r.timestamp_ms = now_ms();
  append_durable(record_to_json(r));
  ++next_seq_;
  apply(r);
  if (!r.idempotency_key.empty()) idempotency_[r.idempotency_key] = r.seq;
  return {r.seq, false};
}

std::optional<RatingRecord> Study::latest(const std::string& rater, const std::string& trial_id,
                                          int candidate, const std::string& criterion) const {
  std::shared_lock lock(mu_);
  auto it = latest_.find({rater, trial_id, candidate, criterion});
  if (it == latest_.end()) return std::nullopt;
  return it->second;
}

std::vector<RatingRecord> Study::audit_history() const {
  std::shared_lock lock(mu_);
  std::vector<fs::path> segments;
  if (fs::exists(dir_ / "segments")) {
    for (const auto& e : fs::directory_iterator(dir_ / "segments")) segments.push_back(e.path());
  }
  std::sort(segments.begin(), segments.end());
  std::vector<RatingRecord> out;
  for (const auto& s : segments) {
    auto part = read_log(s);
    out.insert(out.end(), part.begin(), part.end());
  }
  auto tail = read_log(dir_ / kLogName);
  out.insert(out.end(), tail.begin(), tail.end());
  return out;
}

std::size_t Study::expected_records() const {
  return manifest_.raters.size() * manifest_.trials.size() * kCandidates * kCriteria.size();
}

std::size_t Study::completed_records() const {
  std::shared_lock lock(mu_);
  return latest_.size();
}

void Study::compact() {
  std::unique_lock lock(mu_);
  json records = json::array();
  std::uint64_t last = next_seq_ - 1;
  for (const auto& [key, r] : latest_) records.push_back(json::parse(record_to_json(r)));
  const json snap{{"v", kSchemaVersion}, {"last_seq", last}, {"records", records},
                  {"idempotency", idempotency_}};
  io::write_file_atomic(dir_ / kSnapshotName, snap.dump() + "\n");
  const fs::path log = dir_ / kLogName;
  if (fs::exists(log) && fs::file_size(log) > 0) {
    fs::create_directories(dir_ / "segments");
    char name[32];
    std::snprintf(name, sizeof name, "segment_%012llu.ndjson", static_cast<unsigned long long>(last));
    fs::rename(log, dir_ / "segments" / name);
  }
}

Report Study::analyze(const ReportOptions& opts) const {
  std::shared_lock lock(mu_);
  // Unblind: presentation position -> method index.
  struct Row {
    const RatingRecord* rec;
    std::size_t trial;
    int method;
  };
  std::vector<Row> rows;
  std::map<std::pair<std::string, std::size_t>, int> per_assignment;
  for (const auto& [key, r] : latest_) {
    const auto t = manifest_.trial_index(r.trial_id);
    if (!t) continue;
    rows.push_back({&r, *t, manifest_.permutation(r.rater, *t)[r.candidate]});
    ++per_assignment[{r.rater, *t}];
  }
  const int full = kCandidates * static_cast<int>(kCriteria.size());
  std::map<std::string, int> completed_trials;
  std::size_t complete_assignments = 0;
  for (const auto& [k, n] : per_assignment) {
    if (n == full) {
      ++complete_assignments;
      ++completed_trials[k.first];
    }
  }
  if (complete_assignments == 0) throw Error(ErrorCode::NoData, "no rater has completed a trial");

  json crit_doc = json::object();
  for (const auto& crit : kCriteria) {
    std::array<std::vector<int>, kCandidates> scores;
    for (const auto& row : rows) {
      if (row.rec->criterion == crit) scores[row.method].push_back(row.rec->score);
    }
    json per_method = json::object();
    for (int k = 0; k < kCandidates; ++k) {
      auto v = scores[k];
      std::sort(v.begin(), v.end());
      std::array<int, kMaxScore> counts{};
      for (int s : v) ++counts[s - 1];
      json d{{"n", v.size()}, {"counts", counts}};
      if (!v.empty()) {
        double sum = 0;
        for (int s : v) sum += s;
        d["mean"] = sum / static_cast<double>(v.size());
        d["min"] = v.front();
        d["q1"] = quantile_sorted(v, 0.25);
        d["median"] = quantile_sorted(v, 0.5);
        d["q3"] = quantile_sorted(v, 0.75);
        d["max"] = v.back();
      }
      per_method[manifest_.methods[k]] = d;
    }
    json pairs = json::array();
    for (int a = 0; a < kCandidates; ++a) {
      for (int b = a + 1; b < kCandidates; ++b) {
        json pr{{"a", manifest_.methods[a]}, {"b", manifest_.methods[b]}};
        if (scores[a].empty() || scores[b].empty()) {
          pr["result"] = nullptr;
        } else {
          const auto res = metrics::wilcoxon_rank_sum(metrics::RatingSample{scores[a], scores[b]}, opts.exact_limit);
          pr["statistic"] = res.statistic;
          pr["u_a"] = res.u_a;
          pr["rank_sum_a"] = res.rank_sum_a;
          pr["p_two_sided"] = res.p_two_sided;
          pr["exact"] = res.exact;
          pr["degenerate"] = res.degenerate;
        }
        pairs.push_back(pr);
      }
    }
    crit_doc[crit] = {{"scores", per_method}, {"pairwise", pairs}};
  }

  json doc{{"v", kSchemaVersion},
           {"study_id", manifest_.study_id},
           {"methods", manifest_.methods},
           {"trials", manifest_.trials.size()},
           {"raters", manifest_.raters.size()},
           {"expected_records", expected_records()},
           {"completed_records", latest_.size()},
           {"completion_fraction",
            static_cast<double>(latest_.size()) / static_cast<double>(expected_records())},
           {"complete_assignments", complete_assignments},
           {"criteria", crit_doc}};
  if (!opts.anonymize) {
    json per = json::object();
    for (const auto& r : manifest_.raters) per[r] = completed_trials.count(r) ? completed_trials.at(r) : 0;
    doc["completed_trials_per_rater"] = per;
  }

  std::ostringstream csv;
  csv << (opts.anonymize ? "" : "rater,") << "trial_id,trial_index,method,criterion,score,seq\n";
  std::vector<Row> sorted = rows;
  std::sort(sorted.begin(), sorted.end(), [](const Row& a, const Row& b) { return a.rec->seq < b.rec->seq; });
  for (const auto& row : sorted) {
    if (!opts.anonymize) csv << row.rec->rater << ',';
    csv << row.rec->trial_id << ',' << row.trial << ',' << manifest_.methods[row.method] << ','
        << row.rec->criterion << ',' << row.rec->score << ',' << row.rec->seq << '\n';
  }
  return {doc.dump(2) + "\n", csv.str()};
}

std::optional<std::string> read_asset(const fs::path& root, const std::string& name) {
  static const std::regex pattern("^[0-9a-f]{16}\\.png$");
  if (!std::regex_match(name, pattern)) return std::nullopt;
  if (!fs::exists(root)) return std::nullopt;
  for (const auto& e : fs::directory_iterator(root)) {
    const fs::path p = e.path() / "assets" / name;
    if (e.is_directory() && fs::exists(p)) return io::read_file(p);
  }
  return std::nullopt;
}

}  // namespace earsr::rating
