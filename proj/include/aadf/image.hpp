#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace aadf {

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class PreconditionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Row-major 2-D grid of doubles. Used for luminance planes, priors,
// evidence maps and mask logits.
struct Grid {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  Grid() = default;
  Grid(int r, int c, double fill = 0.0);

  double& at(int r, int c) { return data[static_cast<size_t>(r) * cols + c]; }
  double at(int r, int c) const { return data[static_cast<size_t>(r) * cols + c]; }
  // Replicate-padded read.
  double clamped(int r, int c) const {
    r = r < 0 ? 0 : (r >= rows ? rows - 1 : r);
    c = c < 0 ? 0 : (c >= cols ? cols - 1 : c);
    return at(r, c);
  }
  size_t size() const { return data.size(); }
  bool same_shape(const Grid& o) const { return rows == o.rows && cols == o.cols; }
  double sum() const;
  double mean() const;
  Grid transposed() const;
  bool operator==(const Grid&) const = default;
};

struct BoolGrid {
  int rows = 0;
  int cols = 0;
  std::vector<std::uint8_t> data;

  BoolGrid() = default;
  BoolGrid(int r, int c, bool fill = false);

  bool at(int r, int c) const { return data[static_cast<size_t>(r) * cols + c] != 0; }
  void set(int r, int c, bool v) { data[static_cast<size_t>(r) * cols + c] = v ? 1 : 0; }
  size_t count() const;
  bool operator==(const BoolGrid&) const = default;
};

// Interleaved RGB raster, nominal range [0,1].
struct Image {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  Image() = default;
  Image(int r, int c, double fill = 0.0);

  double& at(int r, int c, int ch) { return data[(static_cast<size_t>(r) * cols + c) * 3 + ch]; }
  double at(int r, int c, int ch) const { return data[(static_cast<size_t>(r) * cols + c) * 3 + ch]; }
  bool same_shape(const Image& o) const { return rows == o.rows && cols == o.cols; }
  bool operator==(const Image&) const = default;
};

// Minimum raster side accepted by the attack and detector pipelines.
inline constexpr int kMinImageSide = 8;

// Throws PreconditionError unless the image has at least minSide rows and
// columns, the right data length and only finite values.
void validate(const Image& img, int minSide = kMinImageSide);

Grid channel(const Image& img, int ch);
void set_channel(Image& img, int ch, const Grid& g);
Image from_channels(const Grid& r, const Grid& g, const Grid& b);
// 0.299 R + 0.587 G + 0.114 B
Grid luminance(const Image& img);

struct StandardizedImage {
  Image raster;
  double perChannelMean[3] = {0, 0, 0};
  double perChannelStd[3] = {1, 1, 1};
};

Image load_image(const std::filesystem::path& path);
// Format chosen by extension: .png, otherwise binary PPM.
void save_image(const Image& img, const std::filesystem::path& path);
std::vector<std::uint8_t> to_bytes(const Image& img);
Image from_bytes(int rows, int cols, const std::vector<std::uint8_t>& rgb);
// clamp to [0,1], then round half up to the nearest of 256 levels.
std::uint8_t quantize_byte(double v);

Grid resize_bilinear(const Grid& g, int outRows, int outCols);
Image resize_bilinear(const Image& img, int outRows, int outCols);
// Transpose of the linear map resize_bilinear(., outRows, outCols) applied to
// a gradient on the output grid.
Grid resize_bilinear_adjoint(const Grid& dOut, int inRows, int inCols);
// Bilinear sample at fractional (row, col), coordinates clamped to the grid.
double sample_bilinear(const Grid& g, double r, double c);

Grid sobel_edges(const Grid& g);
Grid gaussian_blur(const Grid& g, double sigma);
Image gaussian_blur(const Image& img, double sigma);
std::vector<double> gaussian_kernel(double sigma);
BoolGrid dilate_binary(const BoolGrid& mask, int radius);
BoolGrid threshold(const Grid& g, double t);
// Mean over integer-partitioned blocks: output cell (i,j) averages input rows
// [i*R/out, (i+1)*R/out) and the matching column range.
Grid area_average(const Grid& g, int outRows, int outCols);

StandardizedImage pi_preprocess(const Image& img, int workingSize);

struct JpegSimParams {
  int quality = 75;
  bool chromaSubsample = false;
};

using QuantTable = std::array<int, 64>;
QuantTable luma_quant_table(int quality);
QuantTable chroma_quant_table(int quality);
extern const QuantTable kAnnexKLuma;
extern const QuantTable kAnnexKChroma;

Image jpeg_sim(const Image& img, const JpegSimParams& p);

// Translate content by (dx, dy) pixels with edge replication: out(r,c) = in(r-dy, c-dx).
Image translate(const Image& img, int dx, int dy);

double psnr(const Image& a, const Image& b);
double max_abs_diff(const Image& a, const Image& b);

}  // namespace aadf
