#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include "earsr/image.hpp"
#include "earsr/metrics.hpp"

namespace earsr::rating {

inline constexpr int kSchemaVersion = 1;
inline constexpr int kCandidates = 3;
inline constexpr int kMinScore = 1;
inline constexpr int kMaxScore = 6;
inline const std::array<std::string, 2> kCriteria = {"resolution_noise", "shape_structure"};

struct MethodImages {
  std::string label;  // server-side only
  std::vector<Image> images;
};

struct StudyInput {
  std::string study_id;
  std::vector<Image> lr;                // one reference per trial
  std::vector<MethodImages> methods;    // exactly three, each aligned with lr
  std::vector<std::string> raters;
  std::uint64_t seed = 0;
  std::string token;                    // report access; generated when empty
};

struct TrialEntry {
  std::string trial_id;                    // opaque
  std::string lr_asset;                    // content-hash asset names
  std::array<std::string, kCandidates> candidate_assets;  // in method order
};

// Server-side description of a study. Never sent to raters as a whole.
struct StudyManifest {
  std::string study_id;
  std::uint64_t seed = 0;
  std::string token;
  std::array<std::string, kCandidates> methods;
  std::vector<std::string> raters;
  std::vector<TrialEntry> trials;

  // permutation(r, t)[position] = method index shown at that position
  std::array<int, kCandidates> permutation(const std::string& rater, std::size_t trial) const;
  std::optional<std::size_t> trial_index(const std::string& trial_id) const;
  bool has_rater(const std::string& rater) const;
};

// Seeded candidate order for one (rater, trial) assignment.
std::array<int, kCandidates> candidate_order(std::uint64_t seed, const std::string& rater,
                                             std::size_t trial);

// Writes <root>/<study_id>/{manifest.json, assets/}. Throws SetMismatch when
// the method sets do not align with the LR references.
StudyManifest create_study(const StudyInput& input, const std::filesystem::path& root);
StudyManifest load_manifest(const std::filesystem::path& study_dir);

struct RatingRecord {
  std::string rater;
  std::string trial_id;
  int candidate = 0;  // presentation position 0..2
  std::string criterion;
  int score = 0;
  std::int64_t timestamp_ms = 0;
  std::uint64_t seq = 0;          // assigned by the log
  std::string idempotency_key;    // optional client retry key
};

std::string record_to_json(const RatingRecord& r);
RatingRecord record_from_json(const std::string& line);

struct Ack {
  std::uint64_t seq = 0;
  bool duplicate = false;  // idempotency key already seen
};

struct ScoreView {
  int candidate = 0;
  std::string criterion;
  int score = 0;
};

// Blinded trial as served to a rater.
struct TrialPayload {
  bool done = false;
  std::string trial_id;
  std::size_t index = 0;   // progress position
  std::size_t total = 0;
  std::string lr_asset;
  std::array<std::string, kCandidates> candidate_assets;  // presentation order
  std::vector<ScoreView> saved;
};

std::string payload_to_json(const TrialPayload& p, const std::string& study_id,
                            const std::string& asset_prefix = "/assets/");

struct ReportOptions {
  bool anonymize = false;
  int exact_limit = metrics::kExactLimit;
};

struct Report {
  std::string json;  // report document
  std::string csv;   // unblinded latest records
};

// One study's persisted state: manifest, append-only record log, compacted
// snapshot and archived log segments.
class Study {
 public:
  explicit Study(const std::filesystem::path& dir);

  const StudyManifest& manifest() const { return manifest_; }
  const std::filesystem::path& dir() const { return dir_; }

  TrialPayload next_trial(const std::string& rater) const;
  // Validates, appends durably (fsync) and only then applies the record.
  Ack submit(RatingRecord record);
  std::optional<RatingRecord> latest(const std::string& rater, const std::string& trial_id,
                                     int candidate, const std::string& criterion) const;
  // Every record ever accepted, oldest first (archived segments, then log).
  std::vector<RatingRecord> audit_history() const;
  std::size_t expected_records() const;
  std::size_t completed_records() const;
  // Writes snapshot.json with the latest records and moves the current log to
  // segments/; new submissions start a fresh log.
  void compact();
  Report analyze(const ReportOptions& opts = {}) const;

 private:
  using Key = std::tuple<std::string, std::string, int, std::string>;
  void apply(const RatingRecord& r);
  void append_durable(const std::string& line);

  std::filesystem::path dir_;
  StudyManifest manifest_;
  mutable std::shared_mutex mu_;
  std::map<Key, RatingRecord> latest_;
  std::map<std::string, std::uint64_t> idempotency_;
  std::uint64_t next_seq_ = 1;
};

// Asset bytes by content-hash name, searched across studies under root.
std::optional<std::string> read_asset(const std::filesystem::path& root, const std::string& name);

}  // namespace earsr::rating
