#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "aadf/image.hpp"

namespace aadf {

inline constexpr int kContentDims = 9;   // per-channel mean, per-channel std, 3 low-band DCT energies
inline constexpr int kResidualDims = 8;  // mean |r| and std r of the 4 residual channels
inline constexpr int kFeatureDims = kContentDims + kResidualDims;
inline constexpr int kResidualChannels = 4;

enum class Stream { Content, Residual };

// G x G cells, each holding `dims` values; cell-major layout.
struct FeatureGrid {
  int grid = 0;
  int dims = 0;
  Stream stream = Stream::Content;
  std::vector<double> values;

  double& at(int cell, int d) { return values[static_cast<size_t>(cell) * dims + d]; }
  double at(int cell, int d) const { return values[static_cast<size_t>(cell) * dims + d]; }
  int cells() const { return grid * grid; }
};

struct Features {
  FeatureGrid content;
  FeatureGrid residual;
  int workingSize = 0;
};

// Laplacian, horizontal and vertical first differences, 5x5 second-order SRM kernel.
std::array<Grid, kResidualChannels> extract_residuals(const StandardizedImage& x);
Features extract_features(const StandardizedImage& x, const std::array<Grid, kResidualChannels>& residuals,
                          int grid);
Features extract_features(const StandardizedImage& x, int grid);

// Row/column range [begin, end) of cell index i when `size` pixels are split into `cells` parts.
std::pair<int, int> cell_range(int i, int size, int cells);

struct DetectorParams {
  int grid = 32;
  int hidden = 16;
  std::vector<double> gateLogits;  // kFeatureDims
  std::vector<double> mixWeights;  // kFeatureDims x hidden, row-major [j * hidden + k]
  std::vector<double> mixBias;     // hidden
  std::vector<double> clsWeights;  // hidden
  double clsBias = 0.0;
  std::vector<double> maskWeights;  // hidden
  double maskBias = 0.0;

  static DetectorParams zeros(int grid = 32, int hidden = 16);
  // Gates 0, mixing weights uniform Glorot, everything else 0.
  static DetectorParams initialize(std::uint64_t seed, int grid = 32, int hidden = 16);

  size_t count() const;
  std::vector<double> flatten() const;
  void unflatten(const std::vector<double>& flat);
  bool operator==(const DetectorParams&) const = default;
};

size_t expected_param_count(int hidden);

// acc += scale * g, field by field.
void add_scaled(DetectorParams& acc, const DetectorParams& g, double scale);

void save_params(const DetectorParams& p, const std::filesystem::path& path);
DetectorParams load_params(const std::filesystem::path& path);
std::vector<std::uint8_t> encode_params(const DetectorParams& p);
DetectorParams decode_params(const std::vector<std::uint8_t>& bytes);

// Per-cell fused representation u, G*G x hidden, cell-major.
struct FusedGrid {
  int grid = 0;
  int hidden = 0;
  std::vector<double> values;
  double at(int cell, int k) const { return values[static_cast<size_t>(cell) * hidden + k]; }
};

FusedGrid fuse(const FeatureGrid& content, const FeatureGrid& residual, const DetectorParams& p);

struct ForwardCache {
  bool valid = false;
  int grid = 0;
  std::vector<double> input;   // concat(content, residual) per cell
  std::vector<double> gates;   // sigmoid(gateLogits)
  std::vector<double> gated;   // gates * input
  std::vector<double> fused;   // u per cell
  std::vector<double> pooled;  // mean of u over cells
};

struct ModelOutput {
  double logit = 0.0;
  Grid maskLogits;  // G x G
  Grid evidence;    // working resolution, bilinear upsample of sigmoid(maskLogits)
  ForwardCache cache;
};

ModelOutput forward(const Features& f, const DetectorParams& p, bool withEvidence = true);
ModelOutput forward(const StandardizedImage& x, const DetectorParams& p);

// Exact parameter gradients for upstream dL/ds and dL/dz (G x G).
DetectorParams backward(const ForwardCache& cache, const DetectorParams& p, double dLogit, const Grid& dMask);

inline double sigmoid(double x) {
  if (x >= 0) {
    const double e = std::exp(-x);
    return 1.0 / (1.0 + e);
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace aadf
