#include "aadf/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

namespace aadf {

bool is_valid_split(std::string_view s) {
  return std::find(kSplits.begin(), kSplits.end(), s) != kSplits.end();
}

void validate(const PredictionRecord& r) {
  if (!(r.p >= 0.0 && r.p <= 1.0)) throw PreconditionError("record '" + r.id + "': probability outside [0, 1]");
  if (r.y != 0 && r.y != 1) throw PreconditionError("record '" + r.id + "': label outside {0, 1}");
  if (!is_valid_split(r.split)) throw PreconditionError("record '" + r.id + "': unknown split '" + r.split + "'");
}

double accuracy(const ConfusionCounts& c) {
  if (c.total() == 0) throw PreconditionError("accuracy: empty confusion matrix");
  return static_cast<double>(c.tn + c.tp) / static_cast<double>(c.total());
}

double confidence(double p) { return std::max(p, 1.0 - p); }

namespace {

void validate_all(const std::vector<PredictionRecord>& records, const char* what) {
  if (records.empty()) throw PreconditionError(std::string(what) + ": no records");
  for (const auto& r : records) validate(r);
}

std::pair<long, long> class_counts(const std::vector<PredictionRecord>& records) {
  long pos = 0;
  for (const auto& r : records) pos += r.y;
  return {pos, static_cast<long>(records.size()) - pos};
}

void require_both_classes(const std::vector<PredictionRecord>& records, const char* what) {
  const auto [pos, neg] = class_counts(records);
  if (pos == 0 || neg == 0) throw UndefinedMetricError(std::string(what) + ": needs both classes");
}

// Indices sorted by score descending, ties by id.
std::vector<size_t> order_desc(const std::vector<PredictionRecord>& records) {
  std::vector<size_t> idx(records.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](size_t a, size_t b) {
    if (records[a].p != records[b].p) return records[a].p > records[b].p;
    return records[a].id < records[b].id;
  });
  return idx;
}

bool correct(const PredictionRecord& r) { return (r.p >= 0.5 ? 1 : 0) == r.y; }

struct RocPoint {
  double fpr, tpr;
};

// Operating points for every distinct threshold, from "nothing positive" to "all positive".
std::vector<RocPoint> roc(const std::vector<PredictionRecord>& records) {
  const auto [pos, neg] = class_counts(records);
  const auto idx = order_desc(records);
  std::vector<RocPoint> pts{{0.0, 0.0}};
  long tp = 0, fp = 0;
  for (size_t i = 0; i < idx.size();) {
    const double s = records[idx[i]].p;
    while (i < idx.size() && records[idx[i]].p == s) {
      if (records[idx[i]].y == 1)
        ++tp;
      else
        ++fp;
      ++i;
    }
    pts.push_back({static_cast<double>(fp) / neg, static_cast<double>(tp) / pos});
  }
  return pts;
}

}  // namespace

RankMetrics rank_metrics(const std::vector<PredictionRecord>& records) {
  validate_all(records, "rank_metrics");
  require_both_classes(records, "rank_metrics");
  const auto [pos, neg] = class_counts(records);
  const auto idx = order_desc(records);

  // Walk tie groups from the highest score down. For AUC each positive
  // counts the negatives strictly below it plus half of the tied ones.
  double aucSum = 0.0, apSum = 0.0;
  long negAbove = 0, tpSoFar = 0, seen = 0;
  for (size_t i = 0; i < idx.size();) {
    const double s = records[idx[i]].p;
    long gp = 0, gn = 0;
    while (i < idx.size() && records[idx[i]].p == s) {
      if (records[idx[i]].y == 1)
        ++gp;
      else
        ++gn;
      ++i;
    }
    const long negBelow = neg - negAbove - gn;
    aucSum += static_cast<double>(gp) * (static_cast<double>(negBelow) + 0.5 * static_cast<double>(gn));
    tpSoFar += gp;
    seen += gp + gn;
    if (gp > 0) apSum += static_cast<double>(gp) * static_cast<double>(tpSoFar) / static_cast<double>(seen);
    negAbove += gn;
  }
  RankMetrics m;
  m.auc = aucSum / (static_cast<double>(pos) * static_cast<double>(neg));
  m.ap = apSum / static_cast<double>(pos);
  return m;
}

CalibMetrics calib_metrics(const std::vector<PredictionRecord>& records, int bins) {
  validate_all(records, "calib_metrics");
  if (bins < 1) throw PreconditionError("calib_metrics: bins must be >= 1");
  const size_t n = records.size();
  std::vector<size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](size_t a, size_t b) {
    const double ca = confidence(records[a].p), cb = confidence(records[b].p);
    if (ca != cb) return ca < cb;
    return records[a].id < records[b].id;
  });

  CalibMetrics m;
  for (int b = 0; b < bins; ++b) {
    const size_t lo = static_cast<size_t>(b) * n / static_cast<size_t>(bins);
    const size_t hi = static_cast<size_t>(b + 1) * n / static_cast<size_t>(bins);
    if (hi == lo) continue;
    double acc = 0.0, conf = 0.0;
    for (size_t i = lo; i < hi; ++i) {
      acc += correct(records[idx[i]]) ? 1.0 : 0.0;
      conf += confidence(records[idx[i]].p);
    }
    const double cnt = static_cast<double>(hi - lo);
    m.ece += (cnt / static_cast<double>(n)) * std::abs(acc / cnt - conf / cnt);
  }
  for (const auto& r : records) {
    const double d = r.p - r.y;
    m.brier += d * d;
    const double q = std::clamp(r.p, kProbFloor, 1.0 - kProbFloor);
    m.nll += -(r.y == 1 ? std::log(q) : std::log(1.0 - q));
  }
  m.brier /= static_cast<double>(n);
  m.nll /= static_cast<double>(n);
  return m;
}

SelectiveMetrics selective_metrics(const std::vector<PredictionRecord>& records) {
  validate_all(records, "selective_metrics");
  const size_t n = records.size();
  std::vector<size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](size_t a, size_t b) {
    const double ca = confidence(records[a].p), cb = confidence(records[b].p);
    if (ca != cb) return ca > cb;
    return records[a].id < records[b].id;
  });
  SelectiveMetrics m;
  long errors = 0;
  double sum = 0.0;
  for (size_t k = 0; k < n; ++k) {
    if (!correct(records[idx[k]])) ++errors;
    const double risk = static_cast<double>(errors) / static_cast<double>(k + 1);
    m.curve.emplace_back(static_cast<double>(k + 1) / static_cast<double>(n), risk);
    sum += risk;
  }
  m.aurc = sum / static_cast<double>(n);
  return m;
}

ConfusionCounts confusion_at(const std::vector<PredictionRecord>& records, double tau) {
  ConfusionCounts c;
  for (const auto& r : records) {
    const bool pred = r.p >= tau;
    if (r.y == 1)
      (pred ? c.tp : c.fn)++;
    else
      (pred ? c.fp : c.tn)++;
  }
  return c;
}

double equal_error_rate(const std::vector<PredictionRecord>& records) {
  validate_all(records, "equal_error_rate");
  require_both_classes(records, "equal_error_rate");
  const auto pts = roc(records);
  // d = FNR - FPR falls monotonically from 1 to -1 along the curve.
  double prevD = 1.0;
  for (size_t i = 1; i < pts.size(); ++i) {
    const double d = (1.0 - pts[i].tpr) - pts[i].fpr;
    if (d <= 0.0) {
      if (d == 0.0) return pts[i].fpr;
      const double t = prevD / (prevD - d);
      return pts[i - 1].fpr + t * (pts[i].fpr - pts[i - 1].fpr);
    }
    prevD = d;
  }
  return pts.back().fpr;
}

double tpr_at_fpr(const std::vector<PredictionRecord>& records, double target) {
  validate_all(records, "tpr_at_fpr");
  require_both_classes(records, "tpr_at_fpr");
  double best = 0.0;
  for (const auto& pt : roc(records))
    if (pt.fpr <= target) best = std::max(best, pt.tpr);
  return best;
}

OperatingMetrics operating_metrics(const std::vector<PredictionRecord>& records, double tau) {
  validate_all(records, "operating_metrics");
  OperatingMetrics m;
  m.counts = confusion_at(records, tau);
  m.acc = accuracy(m.counts);
  try {
    m.eer = equal_error_rate(records);
    m.tprAt1e2 = tpr_at_fpr(records, 1e-2);
    m.tprAt1e3 = tpr_at_fpr(records, 1e-3);
  } catch (const UndefinedMetricError& e) {
    m.eer.reset();
    m.tprAt1e2.reset();
    m.tprAt1e3.reset();
    m.undefinedReason = e.what();
  }
  return m;
}

std::vector<double> tau_candidates(const std::map<std::string, std::vector<PredictionRecord>>& bySplit) {
  std::set<double> observed{0.0, 1.0};
  for (const auto& [name, recs] : bySplit)
    for (const auto& r : recs) observed.insert(r.p);
  std::vector<double> sorted(observed.begin(), observed.end());
  std::vector<double> out;
  for (size_t i = 0; i < sorted.size(); ++i) {
    out.push_back(sorted[i]);
    if (i + 1 < sorted.size()) out.push_back(0.5 * (sorted[i] + sorted[i + 1]));
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

TauResult tune_tau(const std::map<std::string, std::vector<PredictionRecord>>& bySplit) {
  if (bySplit.empty()) throw PreconditionError("tune_tau: no splits");
  for (const auto& [name, recs] : bySplit) validate_all(recs, ("tune_tau split " + name).c_str());
  TauResult best;
  bool first = true;
  for (double tau : tau_candidates(bySplit)) {
    double worst = 1.0;
    for (const auto& [name, recs] : bySplit) worst = std::min(worst, accuracy(confusion_at(recs, tau)));
    // Candidates ascend, so >= keeps the largest tied threshold.
    if (first || worst >= best.worstAcc) {
      best.tau = tau;
      best.worstAcc = worst;
      first = false;
    }
  }
  for (const auto& [name, recs] : bySplit) best.perSplitAcc[name] = accuracy(confusion_at(recs, best.tau));
  return best;
}

double iou(const BoolGrid& a, const BoolGrid& b) {
  if (a.rows != b.rows || a.cols != b.cols) throw PreconditionError("iou: shape mismatch");
  size_t inter = 0, uni = 0;
  for (size_t i = 0; i < a.data.size(); ++i) {
    inter += (a.data[i] && b.data[i]) ? 1 : 0;
    uni += (a.data[i] || b.data[i]) ? 1 : 0;
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

WeakLocalization weak_localization(const Grid& evidence, const Grid& prior, double theta, int dilateRadius) {
  if (!evidence.same_shape(prior)) throw PreconditionError("weak_localization: shape mismatch");
  if (dilateRadius < 0) throw PreconditionError("weak_localization: negative dilation radius");
  WeakLocalization m;
  double inner = 0.0, mass = 0.0, smin = 0.0, smax = 0.0;
  for (size_t i = 0; i < evidence.size(); ++i) {
    const double p = evidence.data[i], g = prior.data[i];
    inner += p * g;
    mass += p;
    smin += std::min(p, g);
    smax += std::max(p, g);
  }
  m.ewr = inner / std::max(mass, 1e-12);
  m.softIoU = smax > 0.0 ? smin / smax : 1.0;

  const BoolGrid pred = threshold(evidence, theta);
  const BoolGrid roi = threshold(prior, kPriorBinThreshold);
  size_t predCount = 0, hit = 0;
  for (size_t i = 0; i < pred.data.size(); ++i) {
    predCount += pred.data[i] ? 1 : 0;
    hit += (pred.data[i] && roi.data[i]) ? 1 : 0;
  }
  m.emptyPrediction = predCount == 0;
  m.precisionInRoi = m.emptyPrediction ? 1.0 : static_cast<double>(hit) / static_cast<double>(predCount);
  m.hardIoU = iou(pred, roi);
  m.dilatedIoU = iou(pred, dilate_binary(roi, dilateRadius));
  return m;
}

}  // namespace aadf
