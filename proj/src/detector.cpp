#include "aadf/detector.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "aadf/random.hpp"

namespace aadf {

namespace {

constexpr double kSecondOrder5[5][5] = {
    {1, -2, 2, -2, 1}, {-2, 6, -8, 6, -2}, {2, -8, 12, -8, 2}, {-2, 6, -8, 6, -2}, {1, -2, 2, -2, 1}};

constexpr char kMagic[8] = {'A', 'A', 'D', 'F', '0', '0', '0', '1'};

}  // namespace

std::array<Grid, kResidualChannels> extract_residuals(const StandardizedImage& x) {
  const Grid L = luminance(x.raster);
  const int R = L.rows, C = L.cols;
  // Luminance with a 2-pixel replicate border.
  const int P = C + 4;
  std::vector<double> pad(static_cast<size_t>(R + 4) * P);
  for (int r = -2; r < R + 2; ++r)
    for (int c = -2; c < C + 2; ++c) pad[static_cast<size_t>(r + 2) * P + (c + 2)] = L.clamped(r, c);
  std::array<Grid, kResidualChannels> out = {Grid(R, C), Grid(R, C), Grid(R, C), Grid(R, C)};
  for (int r = 0; r < R; ++r)
    for (int c = 0; c < C; ++c) {
      const double* p = &pad[static_cast<size_t>(r + 2) * P + (c + 2)];
      const double v = p[0];
      out[0].at(r, c) = p[-P] + p[P] + p[-1] + p[1] - 4.0 * v;
      out[1].at(r, c) = p[1] - v;
      out[2].at(r, c) = p[P] - v;
      double acc = 0.0;
      for (int i = -2; i <= 2; ++i)
        for (int j = -2; j <= 2; ++j) acc += kSecondOrder5[i + 2][j + 2] * p[i * P + j];
      out[3].at(r, c) = acc / 12.0;
    }
  return out;
}

std::pair<int, int> cell_range(int i, int size, int cells) { return {i * size / cells, (i + 1) * size / cells}; }

Features extract_features(const StandardizedImage& x, const std::array<Grid, kResidualChannels>& residuals,
                          int grid) {
  const Image& img = x.raster;
  if (grid < 1 || grid > img.rows || grid > img.cols) throw PreconditionError("feature grid larger than the image");
  for (const auto& res : residuals)
    if (res.rows != img.rows || res.cols != img.cols) throw PreconditionError("residual shape mismatch");

  Features f;
  f.workingSize = img.rows;
  f.content = {grid, kContentDims, Stream::Content, std::vector<double>(static_cast<size_t>(grid) * grid * kContentDims)};
  f.residual = {grid, kResidualDims, Stream::Residual,
                std::vector<double>(static_cast<size_t>(grid) * grid * kResidualDims)};
  const Grid L = luminance(img);

  for (int gi = 0; gi < grid; ++gi) {
    const auto [r0, r1] = cell_range(gi, img.rows, grid);
    const int h = r1 - r0;
    for (int gj = 0; gj < grid; ++gj) {
      const auto [c0, c1] = cell_range(gj, img.cols, grid);
      const int w = c1 - c0;
      const int cell = gi * grid + gj;
      const double n = static_cast<double>(h) * w;

      for (int ch = 0; ch < 3; ++ch) {
        double s = 0.0;
        for (int r = r0; r < r1; ++r)
          for (int c = c0; c < c1; ++c) s += img.at(r, c, ch);
        const double mean = s / n;
        double v = 0.0;
        for (int r = r0; r < r1; ++r)
          for (int c = c0; c < c1; ++c) {
            const double d = img.at(r, c, ch) - mean;
            v += d * d;
          }
        f.content.at(cell, ch) = mean;
        f.content.at(cell, 3 + ch) = std::sqrt(v / n);
      }

      // Orthonormal DCT-II coefficients (0,1), (1,0), (1,1) of the cell luminance.
      double c01 = 0.0, c10 = 0.0, c11 = 0.0;
      const double aRow0 = std::sqrt(1.0 / h), aRow1 = std::sqrt(2.0 / h);
      const double aCol0 = std::sqrt(1.0 / w), aCol1 = std::sqrt(2.0 / w);
      for (int r = r0; r < r1; ++r) {
        const double br = h > 1 ? std::cos(M_PI * (2 * (r - r0) + 1) / (2.0 * h)) : 0.0;
        for (int c = c0; c < c1; ++c) {
          const double bc = w > 1 ? std::cos(M_PI * (2 * (c - c0) + 1) / (2.0 * w)) : 0.0;
          const double v = L.at(r, c);
          c01 += aRow0 * aCol1 * bc * v;
          c10 += aRow1 * aCol0 * br * v;
          c11 += aRow1 * aCol1 * br * bc * v;
        }
      }
      f.content.at(cell, 6) = c01 * c01;
      f.content.at(cell, 7) = c10 * c10;
      f.content.at(cell, 8) = c11 * c11;

      for (int k = 0; k < kResidualChannels; ++k) {
        const Grid& res = residuals[k];
        double sa = 0.0, s = 0.0;
        for (int r = r0; r < r1; ++r)
          for (int c = c0; c < c1; ++c) {
            sa += std::abs(res.at(r, c));
            s += res.at(r, c);
          }
        const double mean = s / n;
        double v = 0.0;
        for (int r = r0; r < r1; ++r)
          for (int c = c0; c < c1; ++c) {
            const double d = res.at(r, c) - mean;
            v += d * d;
          }
        f.residual.at(cell, 2 * k) = sa / n;
        f.residual.at(cell, 2 * k + 1) = std::sqrt(v / n);
      }
    }
  }
  return f;
}

Features extract_features(const StandardizedImage& x, int grid) {
  return extract_features(x, extract_residuals(x), grid);
}

// ---------------------------------------------------------------------------
// Parameters

size_t expected_param_count(int hidden) {
  return static_cast<size_t>(kFeatureDims) * (1 + hidden) + hidden + (hidden + 1) + (hidden + 1);
}

DetectorParams DetectorParams::zeros(int grid, int hidden) {
  if (grid < 1 || grid > 256) throw PreconditionError("mask grid must be in [1, 256]");
  if (hidden < 1) throw PreconditionError("hidden width must be positive");
  DetectorParams p;
  p.grid = grid;
  p.hidden = hidden;
  p.gateLogits.assign(kFeatureDims, 0.0);
  p.mixWeights.assign(static_cast<size_t>(kFeatureDims) * hidden, 0.0);
  p.mixBias.assign(hidden, 0.0);
  p.clsWeights.assign(hidden, 0.0);
  p.maskWeights.assign(hidden, 0.0);
  return p;
}

DetectorParams DetectorParams::initialize(std::uint64_t seed, int grid, int hidden) {
  DetectorParams p = zeros(grid, hidden);
  Rng rng(seed);
  const double a = std::sqrt(6.0 / (kFeatureDims + hidden));
  for (auto& w : p.mixWeights) w = rng.uniform(-a, a);
  return p;
}

size_t DetectorParams::count() const {
  return gateLogits.size() + mixWeights.size() + mixBias.size() + clsWeights.size() + 1 + maskWeights.size() + 1;
}

std::vector<double> DetectorParams::flatten() const {
  std::vector<double> flat;
  flat.reserve(count());
  flat.insert(flat.end(), gateLogits.begin(), gateLogits.end());
  flat.insert(flat.end(), mixWeights.begin(), mixWeights.end());
  flat.insert(flat.end(), mixBias.begin(), mixBias.end());
  flat.insert(flat.end(), clsWeights.begin(), clsWeights.end());
  flat.push_back(clsBias);
  flat.insert(flat.end(), maskWeights.begin(), maskWeights.end());
  flat.push_back(maskBias);
  return flat;
}

void DetectorParams::unflatten(const std::vector<double>& flat) {
  if (flat.size() != count()) throw PreconditionError("flat parameter vector has the wrong length");
  auto it = flat.begin();
  auto take = [&it](std::vector<double>& dst) {
    std::copy(it, it + static_cast<std::ptrdiff_t>(dst.size()), dst.begin());
    it += static_cast<std::ptrdiff_t>(dst.size());
  };
  take(gateLogits);
  take(mixWeights);
  take(mixBias);
  take(clsWeights);
  clsBias = *it++;
  take(maskWeights);
  maskBias = *it++;
}

void add_scaled(DetectorParams& acc, const DetectorParams& g, double scale) {
  if (acc.grid != g.grid || acc.hidden != g.hidden) throw PreconditionError("parameter layouts differ");
  auto axpy = [scale](std::vector<double>& y, const std::vector<double>& x) {
    for (size_t i = 0; i < y.size(); ++i) y[i] += scale * x[i];
  };
  axpy(acc.gateLogits, g.gateLogits);
  axpy(acc.mixWeights, g.mixWeights);
  axpy(acc.mixBias, g.mixBias);
  axpy(acc.clsWeights, g.clsWeights);
  acc.clsBias += scale * g.clsBias;
  axpy(acc.maskWeights, g.maskWeights);
  acc.maskBias += scale * g.maskBias;
}

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(const std::uint8_t* p) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return v;
}

}  // namespace

std::vector<std::uint8_t> encode_params(const DetectorParams& p) {
  std::vector<std::uint8_t> out(kMagic, kMagic + 8);
  put_u32(out, static_cast<std::uint32_t>(p.grid));
  put_u32(out, static_cast<std::uint32_t>(p.hidden));
  for (double v : p.flatten()) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
  }
  return out;
}

DetectorParams decode_params(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 8) != 0)
    throw FormatError("not a detector checkpoint (bad magic)");
  const int grid = static_cast<int>(get_u32(bytes.data() + 8));
  const int hidden = static_cast<int>(get_u32(bytes.data() + 12));
  DetectorParams p = DetectorParams::zeros(grid, hidden);
  const size_t n = p.count();
  if (bytes.size() != 16 + 8 * n) throw FormatError("checkpoint length does not match its header");
  std::vector<double> flat(n);
  for (size_t i = 0; i < n; ++i) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(bytes[16 + 8 * i + b]) << (8 * b);
    flat[i] = std::bit_cast<double>(bits);
  }
  p.unflatten(flat);
  return p;
}

void save_params(const DetectorParams& p, const std::filesystem::path& path) {
  const auto bytes = encode_params(p);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

DetectorParams load_params(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_params(bytes);
}

// ---------------------------------------------------------------------------
// Fusion and heads

namespace {

void check_dims(const FeatureGrid& content, const FeatureGrid& residual, const DetectorParams& p) {
  if (content.dims != kContentDims || residual.dims != kResidualDims || content.grid != residual.grid)
    throw PreconditionError("feature grids do not match the detector layout");
  if (content.grid != p.grid) throw PreconditionError("feature grid size differs from the detector mask grid");
  if (p.gateLogits.size() != kFeatureDims || p.mixWeights.size() != static_cast<size_t>(kFeatureDims) * p.hidden ||
      p.mixBias.size() != static_cast<size_t>(p.hidden))
    throw PreconditionError("detector parameter dimensions are inconsistent");
}

ForwardCache fuse_cached(const FeatureGrid& content, const FeatureGrid& residual, const DetectorParams& p) {
  check_dims(content, residual, p);
  const int cells = content.cells();
  const int du = p.hidden;
  ForwardCache c;
  c.grid = content.grid;
  c.input.resize(static_cast<size_t>(cells) * kFeatureDims);
  c.gated.resize(c.input.size());
  c.fused.assign(static_cast<size_t>(cells) * du, 0.0);
  c.gates.resize(kFeatureDims);
  for (int j = 0; j < kFeatureDims; ++j) c.gates[j] = sigmoid(p.gateLogits[j]);
  for (int cell = 0; cell < cells; ++cell) {
    double* v = &c.input[static_cast<size_t>(cell) * kFeatureDims];
    for (int j = 0; j < kContentDims; ++j) v[j] = content.at(cell, j);
    for (int j = 0; j < kResidualDims; ++j) v[kContentDims + j] = residual.at(cell, j);
    double* gv = &c.gated[static_cast<size_t>(cell) * kFeatureDims];
    double* u = &c.fused[static_cast<size_t>(cell) * du];
    for (int k = 0; k < du; ++k) u[k] = p.mixBias[k];
    for (int j = 0; j < kFeatureDims; ++j) {
      gv[j] = c.gates[j] * v[j];
      const double* wrow = &p.mixWeights[static_cast<size_t>(j) * du];
      for (int k = 0; k < du; ++k) u[k] += wrow[k] * gv[j];
    }
  }
  c.pooled.assign(du, 0.0);
  for (int cell = 0; cell < cells; ++cell)
    for (int k = 0; k < du; ++k) c.pooled[k] += c.fused[static_cast<size_t>(cell) * du + k];
  for (auto& v : c.pooled) v /= cells;
  c.valid = true;
  return c;
}

}  // namespace

FusedGrid fuse(const FeatureGrid& content, const FeatureGrid& residual, const DetectorParams& p) {
  ForwardCache c = fuse_cached(content, residual, p);
  return {c.grid, p.hidden, std::move(c.fused)};
}

ModelOutput forward(const Features& f, const DetectorParams& p, bool withEvidence) {
  if (p.clsWeights.size() != static_cast<size_t>(p.hidden) || p.maskWeights.size() != static_cast<size_t>(p.hidden))
    throw PreconditionError("head dimensions are inconsistent");
  ModelOutput out;
  out.cache = fuse_cached(f.content, f.residual, p);
  const int du = p.hidden;
  const int G = p.grid;
  out.logit = p.clsBias;
  for (int k = 0; k < du; ++k) out.logit += p.clsWeights[k] * out.cache.pooled[k];
  out.maskLogits = Grid(G, G);
  for (int cell = 0; cell < G * G; ++cell) {
    double z = p.maskBias;
    for (int k = 0; k < du; ++k) z += p.maskWeights[k] * out.cache.fused[static_cast<size_t>(cell) * du + k];
    out.maskLogits.data[cell] = z;
  }
  if (withEvidence) {
    Grid prob = out.maskLogits;
    for (auto& v : prob.data) v = sigmoid(v);
    out.evidence = resize_bilinear(prob, f.workingSize, f.workingSize);
  }
  return out;
}

ModelOutput forward(const StandardizedImage& x, const DetectorParams& p) {
  return forward(extract_features(x, p.grid), p);
}

DetectorParams backward(const ForwardCache& cache, const DetectorParams& p, double dLogit, const Grid& dMask) {
  if (!cache.valid) throw PreconditionError("backward called without a forward cache");
  const int G = cache.grid;
  if (dMask.rows != G || dMask.cols != G) throw PreconditionError("mask gradient shape differs from the mask grid");
  const int du = p.hidden;
  const int cells = G * G;
  DetectorParams g = DetectorParams::zeros(G, du);

  g.clsBias = dLogit;
  for (int k = 0; k < du; ++k) g.clsWeights[k] = dLogit * cache.pooled[k];

  std::vector<double> dU(du);
  std::vector<double> dGated(kFeatureDims, 0.0);  // sum over cells of dL/d(gated_j) * v_j
  for (int cell = 0; cell < cells; ++cell) {
    const double dz = dMask.data[cell];
    const double* u = &cache.fused[static_cast<size_t>(cell) * du];
    g.maskBias += dz;
    for (int k = 0; k < du; ++k) {
      g.maskWeights[k] += dz * u[k];
      dU[k] = dLogit * p.clsWeights[k] / cells + dz * p.maskWeights[k];
      g.mixBias[k] += dU[k];
    }
    const double* gv = &cache.gated[static_cast<size_t>(cell) * kFeatureDims];
    const double* v = &cache.input[static_cast<size_t>(cell) * kFeatureDims];
    for (int j = 0; j < kFeatureDims; ++j) {
      const double* wrow = &p.mixWeights[static_cast<size_t>(j) * du];
      double* grow = &g.mixWeights[static_cast<size_t>(j) * du];
      double back = 0.0;
      for (int k = 0; k < du; ++k) {
        grow[k] += gv[j] * dU[k];
        back += wrow[k] * dU[k];
      }
      dGated[j] += back * v[j];
    }
  }
  for (int j = 0; j < kFeatureDims; ++j) g.gateLogits[j] = dGated[j] * cache.gates[j] * (1.0 - cache.gates[j]);
  return g;
}

}  // namespace aadf
