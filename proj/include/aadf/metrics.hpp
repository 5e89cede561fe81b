#pragma once

#include <array>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "aadf/image.hpp"

namespace aadf {

class UndefinedMetricError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

inline constexpr std::array<std::string_view, 7> kSplits = {"clean", "jpeg",  "warp",     "regrain",
                                                             "seam",  "gamma", "transcode"};
bool is_valid_split(std::string_view s);

struct PredictionRecord {
  std::string id;
  std::string split = "clean";
  double p = 0.5;
  int y = 0;
  std::optional<Grid> evidence;
  std::optional<Grid> prior;
};

// Throws PreconditionError on an out-of-range probability, label or split tag.
void validate(const PredictionRecord& r);

struct ConfusionCounts {
  long tn = 0, fp = 0, fn = 0, tp = 0;
  long total() const { return tn + fp + fn + tp; }
  bool operator==(const ConfusionCounts&) const = default;
};

double accuracy(const ConfusionCounts& c);

struct RankMetrics {
  double auc = 0, ap = 0;
};
RankMetrics rank_metrics(const std::vector<PredictionRecord>& records);

struct CalibMetrics {
  double ece = 0, brier = 0, nll = 0;
};
inline constexpr double kProbFloor = 1e-12;
CalibMetrics calib_metrics(const std::vector<PredictionRecord>& records, int bins = 10);

// max(p, 1 - p)
double confidence(double p);

struct SelectiveMetrics {
  std::vector<std::pair<double, double>> curve;  // (coverage, risk)
  double aurc = 0;
};
SelectiveMetrics selective_metrics(const std::vector<PredictionRecord>& records);

ConfusionCounts confusion_at(const std::vector<PredictionRecord>& records, double tau);

// ROC interpolated at FPR = FNR. Requires both classes.
double equal_error_rate(const std::vector<PredictionRecord>& records);
// Highest TPR among thresholds whose FPR <= target; 0 if none. Requires both classes.
double tpr_at_fpr(const std::vector<PredictionRecord>& records, double target);

struct OperatingMetrics {
  ConfusionCounts counts;
  double acc = 0;
  // Empty for single-class inputs; undefinedReason says why.
  std::optional<double> eer, tprAt1e2, tprAt1e3;
  std::string undefinedReason;
};
OperatingMetrics operating_metrics(const std::vector<PredictionRecord>& records, double tau);

struct TauResult {
  double tau = 0.5;
  double worstAcc = 0;
  std::map<std::string, double> perSplitAcc;
};
// Max-min accuracy over splits; ties go to the largest threshold.
TauResult tune_tau(const std::map<std::string, std::vector<PredictionRecord>>& bySplit);
std::vector<double> tau_candidates(const std::map<std::string, std::vector<PredictionRecord>>& bySplit);

struct WeakLocalization {
  double ewr = 0;
  double precisionInRoi = 0;
  bool emptyPrediction = false;  // no pixel reached theta; precisionInRoi set to 1
  double dilatedIoU = 0;
  double softIoU = 0;
  double hardIoU = 0;
};
inline constexpr double kPriorBinThreshold = 0.5;
WeakLocalization weak_localization(const Grid& evidence, const Grid& prior, double theta = 0.5,
                                   int dilateRadius = 8);

// |a & b| / |a | b|, 1 when both are empty.
double iou(const BoolGrid& a, const BoolGrid& b);

}  // namespace aadf
