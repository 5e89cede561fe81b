#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "aadf/attacks.hpp"
#include "aadf/detector.hpp"
#include "aadf/metrics.hpp"
#include "aadf/objective.hpp"
#include "aadf/priors.hpp"
#include "aadf/protocol.hpp"

namespace aadf {

namespace fs = std::filesystem;

// ---- manifests ----

struct ManifestEntry {
  std::string id;
  std::string path;  // relative to the manifest directory
  int label = 0;
  std::optional<FaceBox> box;
  std::string split = "train";  // train, val or test
  bool operator==(const ManifestEntry&) const = default;
};

struct Manifest {
  std::vector<ManifestEntry> entries;
  fs::path root;  // directory entry paths are resolved against
  bool operator==(const Manifest& o) const { return entries == o.entries; }
};

// Unique ids, labels in {0,1}, known split tags. Throws ManifestError.
void validate(const Manifest& m);
std::string serialize_manifest(const Manifest& m);
Manifest parse_manifest(const std::string& text, const fs::path& root = {});
Manifest load_manifest(const fs::path& path);
void save_manifest(const Manifest& m, const fs::path& path);
std::vector<ManifestEntry> entries_in_split(const Manifest& m, const std::string& split);
// Throws IoError naming every entry whose image file is absent.
void require_files(const Manifest& m, const std::vector<ManifestEntry>& entries);

// ---- run configuration ----

struct RunConfig {
  std::uint64_t seed = 0;
  int workingSize = 384;
  int maskGrid = 32;
  int hidden = 16;
  TrainConfig train;
  DefenseConfig defense;
  LossWeights loss;
  double theta = 0.5;
  int dilateRadius = 8;
  int calibBins = 10;
  bool surveillanceEnabled = false;
  double surveillanceLuma = 0.35;
  // "family.key" -> value, patched into every evaluation attack instance.
  std::map<std::string, std::string> attackOverrides;
  std::string outDir = "out";

  void validate() const;
  bool operator==(const RunConfig& o) const { return serialize() == o.serialize(); }
  // Flat "key=value" lines in key order.
  std::string serialize() const;
  static RunConfig parse(const std::string& text);
  static RunConfig load(const fs::path& path);
};

// Training configuration with the run-level seed and model geometry filled in.
TrainConfig train_config(const RunConfig& cfg);

// ---- synthetic corpus ----

struct SynthOptions {
  int size = 256;
  double trainFraction = 0.8;
  double valFraction = 0.0;
};

struct SynthSample {
  Image image;
  // For fakes, the image before the donor region was spliced in; for reals, the image itself.
  Image source;
  FaceBox box;
  int label = 0;
  double featherWidth = 4.0;
};

// Sample `index` of the corpus generated from `seed`: even indices are real, odd are fake.
SynthSample synth_sample(std::uint64_t seed, int index, int size = 256);
Manifest gen_synth(int count, std::uint64_t seed, const fs::path& outDir, const SynthOptions& opt = {});

// ---- training / evaluation ----

Dataset make_dataset(const Manifest& m, const std::vector<ManifestEntry>& entries);
TrainResult train_from_manifest(const Manifest& m, const RunConfig& cfg);
// Writes params.bin, train_log.jsonl and run_config.txt into outDir.
TrainResult run_train(const Manifest& m, const RunConfig& cfg, const fs::path& outDir);

// Deterministic evaluation instance of a family for a test entry, after overrides.
AttackInstance eval_attack(const RunConfig& cfg, const std::string& id, AttackFamily family);
std::uint64_t defense_seed(const RunConfig& cfg, const std::string& recordId);
std::string attacked_id(const std::string& id, AttackFamily family);

struct EvalRecord {
  PredictionRecord pred;
  double meanLogit = 0.0;
  double meanEvidence = 0.0;
  bool hasLoc = false;
  WeakLocalization loc;
  bool surveillance = false;
};

struct SplitMetrics {
  std::optional<RankMetrics> rank;
  CalibMetrics calib;
  SelectiveMetrics selective;
  OperatingMetrics operating;
};

struct LocSummary {
  int fakes = 0;
  double meanEwr = 0, meanPir = 0, meanDilatedIoU = 0, meanSoftIoU = 0, meanHardIoU = 0;
  int emptyPredictions = 0;
  int reals = 0;
  double realMeanEvidence = 0;
};

struct EvalReport {
  std::vector<EvalRecord> records;
  TauResult tau;
  std::map<std::string, SplitMetrics> splits;
  std::map<std::string, LocSummary> localization;
  std::optional<std::pair<int, double>> surveillance;  // (count, accuracy)
};

// Mean luminance below the threshold and a TRANSCODE view.
bool surveillance_filter(const Image& view, AttackFamily family, bool isAttacked, double lumaThreshold);

std::vector<EvalRecord> eval_records(const Manifest& m, const DetectorParams& p, const RunConfig& cfg);
// Metrics at the tuned threshold, or at fixedTau when given.
EvalReport build_report(std::vector<EvalRecord> records, const RunConfig& cfg,
                        std::optional<double> fixedTau = std::nullopt);
std::string metrics_json(const EvalReport& r);
std::string confusion_csv(const EvalReport& r);
std::string risk_coverage_csv(const SelectiveMetrics& s);
std::string predictions_csv(const std::vector<EvalRecord>& records);
std::vector<EvalRecord> parse_predictions_csv(const std::string& text);
void write_report(const EvalReport& r, const RunConfig& cfg, const fs::path& outDir);
EvalReport run_eval(const Manifest& m, const DetectorParams& p, const RunConfig& cfg, const fs::path& outDir);

// ---- gradient check fixtures ----

struct GradCheckCase {
  GradCheckSample sample;
  DetectorParams params;
};
// Random smooth image and an attacked copy at workingSize, random grid x grid
// targets, and parameters with every head and gate perturbed away from zero.
GradCheckCase make_gradcheck_case(std::uint64_t seed, int workingSize = 64, int grid = 32);

// ---- overlays ----

inline constexpr double kOverlayOrange[3] = {1.0, 0.55, 0.0};
Image overlay(const Image& img, const Grid& evidence);
void render_overlay(const Image& img, const Grid& evidence, const fs::path& outPath);

// ---- small file helpers ----

std::string read_text(const fs::path& path);
void write_text(const fs::path& path, const std::string& text);

}  // namespace aadf
