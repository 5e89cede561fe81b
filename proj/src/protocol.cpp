#include "aadf/protocol.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <json.hpp>

#include "aadf/random.hpp"

namespace aadf {

void TrainConfig::validate() const {
  if (K < 1 || K > static_cast<int>(kAllFamilies.size()))
    throw PreconditionError("TrainConfig: K must be in [1, 6]");
  if (epochs < 0) throw PreconditionError("TrainConfig: epochs must be >= 0");
  if (batchSize < 1) throw PreconditionError("TrainConfig: batchSize must be >= 1");
  // lr = 0 is accepted so a null run can be expressed.
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw PreconditionError("TrainConfig: lr must be >= 0");
  if (!(weightDecay >= 0.0)) throw PreconditionError("TrainConfig: weightDecay must be >= 0");
  if (!(clipNorm > 0.0)) throw PreconditionError("TrainConfig: clipNorm must be > 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
    throw PreconditionError("TrainConfig: betas must be in [0, 1)");
  if (!(epsOpt > 0.0)) throw PreconditionError("TrainConfig: epsOpt must be > 0");
  if (workingSize < 16) throw PreconditionError("TrainConfig: workingSize must be >= 16");
  if (grid < 1 || grid > workingSize) throw PreconditionError("TrainConfig: grid out of range");
  if (hidden < 1) throw PreconditionError("TrainConfig: hidden must be >= 1");
}

Jitter sample_jitter(const DefenseConfig& cfg, int view) {
  Rng rng(derive_seed({cfg.seed, "ttd-view", 0, view}));
  Jitter j;
  j.phaseRow = rng.uniform_int(0, cfg.maxPhase);
  j.phaseCol = rng.uniform_int(0, cfg.maxPhase);
  j.gamma = rng.uniform(cfg.gammaLo, cfg.gammaHi);
  j.quality = rng.uniform_int(cfg.qualityLo, cfg.qualityHi);
  j.dx = rng.uniform_int(0, cfg.maxJpegShift);
  j.dy = rng.uniform_int(0, cfg.maxJpegShift);
  return j;
}

Image apply_jitter(const Image& img, const Jitter& j) {
  validate(img);
  if (j.phaseRow < 0 || j.phaseCol < 0 || j.phaseRow >= img.rows / 2 || j.phaseCol >= img.cols / 2)
    throw PreconditionError("apply_jitter: phase out of range");
  Image out = img;
  if (j.phaseRow > 0 || j.phaseCol > 0) {
    Image crop(img.rows - j.phaseRow, img.cols - j.phaseCol);
    for (int r = 0; r < crop.rows; ++r)
      for (int c = 0; c < crop.cols; ++c)
        for (int ch = 0; ch < 3; ++ch) crop.at(r, c, ch) = img.at(r + j.phaseRow, c + j.phaseCol, ch);
    out = resize_bilinear(crop, img.rows, img.cols);
  }
  if (j.gamma != 1.0)
    for (double& v : out.data) v = std::clamp(std::pow(std::max(v, 0.0), j.gamma), 0.0, 1.0);
  const AttackInstance jpeg{AttackFamily::JPEG, JpegAttack{j.dx, j.dy, j.quality}, 0};
  return apply_jpeg(out, jpeg);
}

DefendedPrediction ttd_predict_views(const Image& img, const DetectorParams& p, const std::vector<Jitter>& jitters,
                                     int workingSize) {
  if (jitters.empty()) throw PreconditionError("ttd_predict: N must be >= 1");
  DefendedPrediction out;
  for (const Jitter& j : jitters) {
    const Image view = apply_jitter(img, j);
    ModelOutput m = forward(pi_preprocess(view, workingSize), p);
    out.perViewLogits.push_back(m.logit);
    out.perViewEvidence.push_back(std::move(m.evidence));
  }
  // Summing in sorted order makes the mean independent of view order.
  std::vector<double> sorted = out.perViewLogits;
  std::sort(sorted.begin(), sorted.end());
  double sum = 0.0;
  for (double s : sorted) sum += s;
  out.meanLogit = sum / static_cast<double>(sorted.size());
  out.probability = sigmoid(out.meanLogit);
  out.evidence = out.perViewEvidence.front();
  for (size_t v = 1; v < out.perViewEvidence.size(); ++v) {
    const Grid& e = out.perViewEvidence[v];
    for (size_t i = 0; i < e.size(); ++i) out.evidence.data[i] = std::max(out.evidence.data[i], e.data[i]);
  }
  return out;
}

DefendedPrediction ttd_predict(const Image& img, const DetectorParams& p, const DefenseConfig& cfg, int workingSize) {
  if (cfg.N < 1) throw PreconditionError("ttd_predict: N must be >= 1");
  std::vector<Jitter> jitters;
  for (int v = 0; v < cfg.N; ++v) jitters.push_back(sample_jitter(cfg, v));
  return ttd_predict_views(img, p, jitters, workingSize);
}

std::vector<AttackInstance> sample_candidates(std::uint64_t globalSeed, const std::string& id, std::int64_t epoch,
                                              int K) {
  if (K < 1 || K > static_cast<int>(kAllFamilies.size()))
    throw PreconditionError("sample_candidates: K must be in [1, 6]");
  std::array<AttackFamily, kAllFamilies.size()> fams = kAllFamilies;
  Rng rng(derive_seed({globalSeed, id, epoch, 0}));
  for (int i = static_cast<int>(fams.size()) - 1; i > 0; --i) std::swap(fams[i], fams[rng.uniform_int(0, i)]);
  std::vector<AttackInstance> out;
  for (int k = 0; k < K; ++k) out.push_back(sample_attack(fams[k], derive_seed({globalSeed, id, epoch, k + 1})));
  return out;
}

WorstOfK select_worst_of_k(const Image& x, int y, const DetectorParams& p, const std::vector<AttackInstance>& candidates,
                           const Grid* prior, int workingSize) {
  if (candidates.empty()) throw PreconditionError("select_worst_of_k: need at least one candidate");
  WorstOfK out;
  for (size_t k = 0; k < candidates.size(); ++k) {
    Image xt = apply_attack(x, candidates[k], prior);
    Features f = extract_features(pi_preprocess(xt, workingSize), p.grid);
    const double loss = loss_cls(forward(f, p, false).logit, y).value;
    out.losses.push_back(loss);
    if (k == 0 || loss > out.losses[out.chosen]) {
      out.chosen = k;
      out.attacked = std::move(xt);
      out.attackedFeatures = std::move(f);
    }
  }
  return out;
}

std::string to_json_line(const StepLog& s) {
  nlohmann::ordered_json j;
  j["epoch"] = s.epoch;
  j["step"] = s.step;
  j["sampleIds"] = s.sampleIds;
  j["chosenFamilies"] = s.chosenFamilies;
  j["candidateLosses"] = s.candidateLosses;
  j["losses"] = {{"cls", s.cls},   {"mask_att", s.maskAtt}, {"mask_clean", s.maskClean}, {"edge", s.edge},
                 {"size", s.size}, {"cons", s.cons},        {"total", s.total}};
  j["gradNorm"] = s.gradNorm;
  j["clipped"] = s.clipped;
  return j.dump();
}

Image to_canvas(const Image& raw, int workingSize) {
  validate(raw);
  if (raw.rows == workingSize && raw.cols == workingSize) return raw;
  return resize_bilinear(raw, workingSize, workingSize);
}

namespace {

Grid face_prior(const SampleMeta& m, int srcRows, int srcCols, int workingSize) {
  if (!m.box) return Grid(workingSize, workingSize, 0.0);
  return build_prior(*m.box, srcRows, srcCols, workingSize).grid;
}

}  // namespace

Grid training_target(const SampleMeta& m, int srcRows, int srcCols, int workingSize) {
  if (m.label == 1) {
    if (!m.box) throw ManifestError("manipulated sample '" + m.id + "' has no face box");
    return face_prior(m, srcRows, srcCols, workingSize);
  }
  return Grid(workingSize, workingSize, 0.0);
}

double clip_global_norm(std::vector<double>& grad, double maxNorm) {
  double sq = 0.0;
  for (double g : grad) sq += g * g;
  const double norm = std::sqrt(sq);
  if (norm > maxNorm) {
    const double scale = maxNorm / norm;
    for (double& g : grad) g *= scale;
  }
  return norm;
}

void adamw_step(std::vector<double>& theta, const std::vector<double>& grad, AdamState& st, const TrainConfig& cfg) {
  if (grad.size() != theta.size()) throw PreconditionError("adamw_step: size mismatch");
  if (st.m.empty()) {
    st.m.assign(theta.size(), 0.0);
    st.v.assign(theta.size(), 0.0);
  }
  ++st.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(st.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(st.step));
  for (size_t i = 0; i < theta.size(); ++i) {
    theta[i] -= cfg.lr * cfg.weightDecay * theta[i];
    st.m[i] = cfg.beta1 * st.m[i] + (1.0 - cfg.beta1) * grad[i];
    st.v[i] = cfg.beta2 * st.v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
    const double mHat = st.m[i] / bc1;
    const double vHat = st.v[i] / bc2;
    theta[i] -= cfg.lr * mHat / (std::sqrt(vHat) + cfg.epsOpt);
  }
}

TrainResult train(const Dataset& data, const TrainConfig& cfg, const LossWeights& w,
                  const std::optional<DetectorParams>& init) {
  cfg.validate();
  w.validate();
  if (data.items.empty()) throw PreconditionError("train: dataset is empty");
  if (!data.load) throw PreconditionError("train: dataset has no loader");
  for (const SampleMeta& m : data.items) {
    if (m.label != 0 && m.label != 1) throw ManifestError("sample '" + m.id + "' has a label outside {0, 1}");
    if (m.label == 1 && !m.box) throw ManifestError("manipulated sample '" + m.id + "' has no face box");
  }

  TrainResult result;
  result.params = init ? *init : DetectorParams::initialize(splitmix64(cfg.globalSeed), cfg.grid, cfg.hidden);
  DetectorParams& p = result.params;
  if (p.grid != cfg.grid || p.hidden != cfg.hidden) throw PreconditionError("train: initial parameters do not match");
  AdamState adam;
  const int ws = cfg.workingSize;

  std::vector<size_t> order(data.items.size());
  int step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng shuffle(derive_seed({cfg.globalSeed, "epoch-order", epoch, 0}));
    for (size_t i = order.size() - 1; i > 0; --i)
      std::swap(order[i], order[static_cast<size_t>(shuffle.uniform_int(0, static_cast<int>(i)))]);

    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg.batchSize)) {
      const size_t end = std::min(order.size(), start + static_cast<size_t>(cfg.batchSize));
      const double inv = 1.0 / static_cast<double>(end - start);
      DetectorParams acc = DetectorParams::zeros(p.grid, p.hidden);
      StepLog log;
      log.epoch = epoch;
      log.step = step;

      for (size_t b = start; b < end; ++b) {
        const SampleMeta& m = data.items[order[b]];
        const Image raw = data.load(m);
        const Image x = to_canvas(raw, ws);
        const Grid prior = face_prior(m, raw.rows, raw.cols, ws);
        const Grid g = training_target(m, raw.rows, raw.cols, ws);

        const ModelOutput clean = forward(extract_features(pi_preprocess(x, ws), p.grid), p, false);
        ModelOutput attacked;
        Grid gTilde;
        if (cfg.cleanOnly) {
          attacked = clean;
          gTilde = g;
          log.chosenFamilies.push_back("NONE");
          log.candidateLosses.push_back({});
        } else {
          const auto cands = sample_candidates(cfg.globalSeed, m.id, epoch, cfg.K);
          WorstOfK wk = select_worst_of_k(x, m.label, p, cands, &prior, ws);
          for (double l : wk.losses)
            if (l > wk.losses[wk.chosen]) throw std::logic_error("worst-of-K selection is not maximal");
          attacked = forward(wk.attackedFeatures, p, false);
          gTilde = transform_prior(WeakPrior{g, {}}, cands[wk.chosen]).grid;
          log.chosenFamilies.emplace_back(family_name(cands[wk.chosen].family));
          log.candidateLosses.push_back(wk.losses);
        }
        log.sampleIds.push_back(m.id);

        const SampleGradient sg = sample_objective(attacked, clean, m.label, g, gTilde, p, w);
        add_scaled(acc, sg.grad, inv);
        log.cls += sg.loss.cls * inv;
        log.maskAtt += sg.loss.maskAtt * inv;
        log.maskClean += sg.loss.maskClean * inv;
        log.edge += sg.loss.edge * inv;
        log.size += sg.loss.size * inv;
        log.cons += sg.loss.cons * inv;
        log.total += sg.loss.total * inv;
      }

      std::vector<double> grad = acc.flatten();
      log.gradNorm = clip_global_norm(grad, cfg.clipNorm);
      log.clipped = log.gradNorm > cfg.clipNorm;
      std::vector<double> theta = p.flatten();
      adamw_step(theta, grad, adam, cfg);
      p.unflatten(theta);
      result.log.push_back(std::move(log));
      ++step;
    }
  }
  return result;
}

}  // namespace aadf
