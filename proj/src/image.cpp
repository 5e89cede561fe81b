#include "aadf/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <sstream>

namespace aadf {

Grid::Grid(int r, int c, double fill) : rows(r), cols(c), data(static_cast<size_t>(r) * c, fill) {}

double Grid::sum() const {
  double s = 0.0;
  for (double v : data) s += v;
  return s;
}

double Grid::mean() const { return data.empty() ? 0.0 : sum() / static_cast<double>(data.size()); }

Grid Grid::transposed() const {
  Grid t(cols, rows);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) t.at(c, r) = at(r, c);
  return t;
}

BoolGrid::BoolGrid(int r, int c, bool fill)
    : rows(r), cols(c), data(static_cast<size_t>(r) * c, fill ? 1 : 0) {}

size_t BoolGrid::count() const {
  return static_cast<size_t>(std::count(data.begin(), data.end(), std::uint8_t{1}));
}

Image::Image(int r, int c, double fill) : rows(r), cols(c), data(static_cast<size_t>(r) * c * 3, fill) {}

void validate(const Image& img, int minSide) {
  if (img.rows < minSide || img.cols < minSide)
    throw PreconditionError("image must be at least " + std::to_string(minSide) + "x" + std::to_string(minSide) + ", got "
    + std::to_string(img.rows) + "x" +
                            std::to_string(img.cols));
  if (img.data.size() != static_cast<size_t>(img.rows) * img.cols * 3)
    throw PreconditionError("image data length does not match its shape");
  for (double v : img.data)
    if (!std::isfinite(v)) throw PreconditionError("image contains non-finite values");
}

Grid channel(const Image& img, int ch) {
  Grid g(img.rows, img.cols);
  for (size_t i = 0; i < g.data.size(); ++i) g.data[i] = img.data[i * 3 + ch];
  return g;
}

void set_channel(Image& img, int ch, const Grid& g) {
  for (size_t i = 0; i < g.data.size(); ++i) img.data[i * 3 + ch] = g.data[i];
}

Image from_channels(const Grid& r, const Grid& g, const Grid& b) {
  Image img(r.rows, r.cols);
  set_channel(img, 0, r);
  set_channel(img, 1, g);
  set_channel(img, 2, b);
  return img;
}

Grid luminance(const Image& img) {
  Grid g(img.rows, img.cols);
  for (size_t i = 0; i < g.data.size(); ++i)
    g.data[i] = 0.299 * img.data[i * 3] + 0.587 * img.data[i * 3 + 1] + 0.114 * img.data[i * 3 + 2];
  return g;
}

// ---------------------------------------------------------------------------
// I/O

std::uint8_t quantize_byte(double v) {
  const double c = std::clamp(v, 0.0, 1.0);
  return static_cast<std::uint8_t>(std::min(255.0, std::floor(c * 255.0 + 0.5)));
}

std::vector<std::uint8_t> to_bytes(const Image& img) {
  std::vector<std::uint8_t> out(img.data.size());
  for (size_t i = 0; i < img.data.size(); ++i) out[i] = quantize_byte(img.data[i]);
  return out;
}

Image from_bytes(int rows, int cols, const std::vector<std::uint8_t>& rgb) {
  Image img(rows, cols);
  if (rgb.size() != img.data.size()) throw FormatError("byte buffer does not match image shape");
  for (size_t i = 0; i < rgb.size(); ++i) img.data[i] = rgb[i] / 255.0;
  return img;
}

namespace {

bool has_png_extension(const std::filesystem::path& p) {
  auto ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png";
}

// Skips whitespace and '#' comments in a PNM header.
int read_pnm_int(std::istream& in) {
  int c = in.peek();
  while (c != EOF) {
    if (std::isspace(c)) {
      in.get();
    } else if (c == '#') {
      std::string line;
      std::getline(in, line);
    } else {
      break;
    }
    c = in.peek();
  }
  int v = -1;
  if (!(in >> v)) throw FormatError("malformed PPM header");
  return v;
}

Image load_ppm(std::istream& in) {
  char magic[2];
  in.read(magic, 2);
  if (!in || magic[0] != 'P' || magic[1] != '6') throw FormatError("unsupported image format");
  const int cols = read_pnm_int(in);
  const int rows = read_pnm_int(in);
  const int maxval = read_pnm_int(in);
  if (cols <= 0 || rows <= 0 || maxval != 255) throw FormatError("only 8-bit P6 PPM is supported");
  in.get();  // single whitespace after maxval
  std::vector<std::uint8_t> buf(static_cast<size_t>(rows) * cols * 3);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (in.gcount() != static_cast<std::streamsize>(buf.size())) throw FormatError("truncated PPM data");
  return from_bytes(rows, cols, buf);
}

struct PngReadGuard {
  png_structp png = nullptr;
  png_infop info = nullptr;
  ~PngReadGuard() { png_destroy_read_struct(&png, info ? &info : nullptr, nullptr); }
};

struct PngWriteGuard {
  png_structp png = nullptr;
  png_infop info = nullptr;
  ~PngWriteGuard() { png_destroy_write_struct(&png, info ? &info : nullptr); }
};

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

Image load_png(const std::filesystem::path& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw IoError("cannot open " + path.string());
  png_byte sig[8];
  if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0)
    throw FormatError("not a PNG file: " + path.string());

  PngReadGuard g;
  g.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!g.png) throw IoError("png_create_read_struct failed");
  g.info = png_create_info_struct(g.png);
  if (!g.info) throw IoError("png_create_info_struct failed");
  if (setjmp(png_jmpbuf(g.png))) throw FormatError("corrupt PNG: " + path.string());

  png_init_io(g.png, fp.get());
  png_set_sig_bytes(g.png, 8);
  png_read_info(g.png, g.info);
  const auto cols = static_cast<int>(png_get_image_width(g.png, g.info));
  const auto rows = static_cast<int>(png_get_image_height(g.png, g.info));
  const int depth = png_get_bit_depth(g.png, g.info);
  const int colorType = png_get_color_type(g.png, g.info);
  if (depth != 8) throw FormatError("only 8-bit PNG is supported");
  if (colorType == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(g.png);
  if (colorType == PNG_COLOR_TYPE_GRAY || colorType == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(g.png);
  if (colorType & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(g.png);
  png_read_update_info(g.png, g.info);
  if (png_get_rowbytes(g.png, g.info) != static_cast<size_t>(cols) * 3)
    throw FormatError("unexpected PNG row layout");

  std::vector<std::uint8_t> buf(static_cast<size_t>(rows) * cols * 3);
  std::vector<png_bytep> rowPtrs(rows);
  for (int r = 0; r < rows; ++r) rowPtrs[r] = buf.data() + static_cast<size_t>(r) * cols * 3;
  png_read_image(g.png, rowPtrs.data());
  png_read_end(g.png, nullptr);
  return from_bytes(rows, cols, buf);
}

void save_png(const std::vector<std::uint8_t>& buf, int rows, int cols, const std::filesystem::path& path) {
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw IoError("cannot write " + path.string());
  PngWriteGuard g;
  g.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!g.png) throw IoError("png_create_write_struct failed");
  g.info = png_create_info_struct(g.png);
  if (!g.info) throw IoError("png_create_info_struct failed");
  if (setjmp(png_jmpbuf(g.png))) throw IoError("PNG write failed: " + path.string());

  png_init_io(g.png, fp.get());
  png_set_IHDR(g.png, g.info, static_cast<png_uint_32>(cols), static_cast<png_uint_32>(rows), 8,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(g.png, g.info);
  for (int r = 0; r < rows; ++r)
    png_write_row(g.png, const_cast<png_bytep>(buf.data() + static_cast<size_t>(r) * cols * 3));
  png_write_end(g.png, nullptr);
  if (std::fflush(fp.get()) != 0) throw IoError("flush failed: " + path.string());
}

}  // namespace

Image load_image(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("no such file: " + path.string());
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  char sig[2] = {0, 0};
  in.read(sig, 2);
  if (in.gcount() == 2 && sig[0] == 'P') {
    in.seekg(0);
    return load_ppm(in);
  }
  in.close();
  if (sig[0] == static_cast<char>(0x89)) return load_png(path);
  throw FormatError("unsupported image format: " + path.string());
}

void save_image(const Image& img, const std::filesystem::path& path) {
  const auto buf = to_bytes(img);
  if (has_png_extension(path)) {
    save_png(buf, img.rows, img.cols, path);
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << "P6\n" << img.cols << ' ' << img.rows << "\n255\n";
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

// ---------------------------------------------------------------------------
// Resampling

namespace {

struct Tap {
  int i0, i1;
  double w1;  // weight of i1; i0 gets 1 - w1
};

// Half-pixel centres, align-corners false.
std::vector<Tap> bilinear_taps(int inSize, int outSize) {
  std::vector<Tap> taps(outSize);
  const double scale = static_cast<double>(inSize) / outSize;
  for (int d = 0; d < outSize; ++d) {
    double s = (d + 0.5) * scale - 0.5;
    s = std::clamp(s, 0.0, static_cast<double>(inSize - 1));
    const int i0 = static_cast<int>(std::floor(s));
    const int i1 = std::min(i0 + 1, inSize - 1);
    taps[d] = {i0, i1, s - i0};
  }
  return taps;
}

}  // namespace

Grid resize_bilinear(const Grid& g, int outRows, int outCols) {
  if (outRows < 1 || outCols < 1) throw PreconditionError("resize target must be at least 1x1");
  if (outRows == g.rows && outCols == g.cols) return g;
  const auto rt = bilinear_taps(g.rows, outRows);
  const auto ct = bilinear_taps(g.cols, outCols);
  Grid out(outRows, outCols);
  for (int r = 0; r < outRows; ++r) {
    const auto& a = rt[r];
    for (int c = 0; c < outCols; ++c) {
      const auto& b = ct[c];
      const double top = g.at(a.i0, b.i0) * (1.0 - b.w1) + g.at(a.i0, b.i1) * b.w1;
      const double bot = g.at(a.i1, b.i0) * (1.0 - b.w1) + g.at(a.i1, b.i1) * b.w1;
      out.at(r, c) = top * (1.0 - a.w1) + bot * a.w1;
    }
  }
  return out;
}

Grid resize_bilinear_adjoint(const Grid& dOut, int inRows, int inCols) {
  if (dOut.rows == inRows && dOut.cols == inCols) return dOut;
  const auto rt = bilinear_taps(inRows, dOut.rows);
  const auto ct = bilinear_taps(inCols, dOut.cols);
  Grid dIn(inRows, inCols);
  for (int r = 0; r < dOut.rows; ++r) {
    const auto& a = rt[r];
    for (int c = 0; c < dOut.cols; ++c) {
      const auto& b = ct[c];
      const double d = dOut.at(r, c);
      dIn.at(a.i0, b.i0) += d * (1.0 - a.w1) * (1.0 - b.w1);
      dIn.at(a.i0, b.i1) += d * (1.0 - a.w1) * b.w1;
      dIn.at(a.i1, b.i0) += d * a.w1 * (1.0 - b.w1);
      dIn.at(a.i1, b.i1) += d * a.w1 * b.w1;
    }
  }
  return dIn;
}

Image resize_bilinear(const Image& img, int outRows, int outCols) {
  if (outRows == img.rows && outCols == img.cols) return img;
  return from_channels(resize_bilinear(channel(img, 0), outRows, outCols),
                       resize_bilinear(channel(img, 1), outRows, outCols),
                       resize_bilinear(channel(img, 2), outRows, outCols));
}

double sample_bilinear(const Grid& g, double r, double c) {
  r = std::clamp(r, 0.0, static_cast<double>(g.rows - 1));
  c = std::clamp(c, 0.0, static_cast<double>(g.cols - 1));
  const int r0 = static_cast<int>(std::floor(r));
  const int c0 = static_cast<int>(std::floor(c));
  const int r1 = std::min(r0 + 1, g.rows - 1);
  const int c1 = std::min(c0 + 1, g.cols - 1);
  const double fr = r - r0;
  const double fc = c - c0;
  const double top = g.at(r0, c0) * (1.0 - fc) + g.at(r0, c1) * fc;
  const double bot = g.at(r1, c0) * (1.0 - fc) + g.at(r1, c1) * fc;
  return top * (1.0 - fr) + bot * fr;
}

// ---------------------------------------------------------------------------
// Filters

Grid sobel_edges(const Grid& g) {
  if (g.rows < 3 || g.cols < 3) throw PreconditionError("sobel_edges needs at least a 3x3 grid");
  Grid out(g.rows, g.cols);
  for (int r = 0; r < g.rows; ++r) {
    for (int c = 0; c < g.cols; ++c) {
      const double a = g.clamped(r - 1, c - 1), b = g.clamped(r - 1, c), d = g.clamped(r - 1, c + 1);
      const double e = g.clamped(r, c - 1), f = g.clamped(r, c + 1);
      const double h = g.clamped(r + 1, c - 1), i = g.clamped(r + 1, c), j = g.clamped(r + 1, c + 1);
      const double gx = (d + 2.0 * f + j) - (a + 2.0 * e + h);
      const double gy = (h + 2.0 * i + j) - (a + 2.0 * b + d);
      out.at(r, c) = std::sqrt(gx * gx + gy * gy);
    }
  }
  return out;
}

std::vector<double> gaussian_kernel(double sigma) {
  if (!(sigma > 0.0)) throw PreconditionError("gaussian sigma must be positive");
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(2 * radius + 1);
  double total = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    k[i + radius] = std::exp(-(i * i) / (2.0 * sigma * sigma));
    total += k[i + radius];
  }
  for (auto& v : k) v /= total;
  return k;
}

Grid gaussian_blur(const Grid& g, double sigma) {
  const auto k = gaussian_kernel(sigma);
  const int radius = static_cast<int>(k.size() / 2);
  // Each pass reads from a replicate-padded line buffer.
  std::vector<double> line(static_cast<size_t>(std::max(g.rows, g.cols) + 2 * radius));
  Grid tmp(g.rows, g.cols);
  for (int r = 0; r < g.rows; ++r) {
    for (int c = -radius; c < g.cols + radius; ++c) line[c + radius] = g.clamped(r, c);
    double* dst = &tmp.data[static_cast<size_t>(r) * g.cols];
    for (int c = 0; c < g.cols; ++c) {
      const double* src = &line[c];
      double acc = 0.0;
      for (int i = 0; i <= 2 * radius; ++i) acc += k[i] * src[i];
      dst[c] = acc;
    }
  }
  Grid out(g.rows, g.cols);
  for (int c = 0; c < g.cols; ++c) {
    for (int r = -radius; r < g.rows + radius; ++r) line[r + radius] = tmp.clamped(r, c);
    for (int r = 0; r < g.rows; ++r) {
      const double* src = &line[r];
      double acc = 0.0;
      for (int i = 0; i <= 2 * radius; ++i) acc += k[i] * src[i];
      out.at(r, c) = acc;
    }
  }
  return out;
}

Image gaussian_blur(const Image& img, double sigma) {
  return from_channels(gaussian_blur(channel(img, 0), sigma), gaussian_blur(channel(img, 1), sigma),
                       gaussian_blur(channel(img, 2), sigma));
}

BoolGrid dilate_binary(const BoolGrid& mask, int radius) {
  if (radius < 0) throw PreconditionError("dilation radius must be nonnegative");
  if (radius == 0) return mask;
  // Square structuring element is separable: horizontal then vertical pass.
  BoolGrid tmp(mask.rows, mask.cols);
  for (int r = 0; r < mask.rows; ++r)
    for (int c = 0; c < mask.cols; ++c) {
      bool any = false;
      for (int i = std::max(0, c - radius); i <= std::min(mask.cols - 1, c + radius) && !any; ++i)
        any = mask.at(r, i);
      tmp.set(r, c, any);
    }
  BoolGrid out(mask.rows, mask.cols);
  for (int r = 0; r < mask.rows; ++r)
    for (int c = 0; c < mask.cols; ++c) {
      bool any = false;
      for (int i = std::max(0, r - radius); i <= std::min(mask.rows - 1, r + radius) && !any; ++i)
        any = tmp.at(i, c);
      out.set(r, c, any);
    }
  return out;
}

BoolGrid threshold(const Grid& g, double t) {
  BoolGrid b(g.rows, g.cols);
  for (size_t i = 0; i < g.data.size(); ++i) b.data[i] = g.data[i] >= t ? 1 : 0;
  return b;
}

Grid area_average(const Grid& g, int outRows, int outCols) {
  if (outRows < 1 || outCols < 1 || outRows > g.rows || outCols > g.cols)
    throw PreconditionError("area_average target must not exceed the source grid");
  Grid out(outRows, outCols);
  for (int i = 0; i < outRows; ++i) {
    const int r0 = i * g.rows / outRows, r1 = (i + 1) * g.rows / outRows;
    for (int j = 0; j < outCols; ++j) {
      const int c0 = j * g.cols / outCols, c1 = (j + 1) * g.cols / outCols;
      double acc = 0.0;
      for (int r = r0; r < r1; ++r)
        for (int c = c0; c < c1; ++c) acc += g.at(r, c);
      out.at(i, j) = acc / static_cast<double>((r1 - r0) * (c1 - c0));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Preprocessing

StandardizedImage pi_preprocess(const Image& img, int workingSize) {
  validate(img);
  if (workingSize < 16) throw PreconditionError("working size must be at least 16");
  StandardizedImage out;
  out.raster = resize_bilinear(img, workingSize, workingSize);
  const double n = static_cast<double>(workingSize) * workingSize;
  for (int ch = 0; ch < 3; ++ch) {
    double mean = 0.0;
    for (size_t i = ch; i < out.raster.data.size(); i += 3) mean += out.raster.data[i];
    mean /= n;
    double var = 0.0;
    for (size_t i = ch; i < out.raster.data.size(); i += 3) {
      const double d = out.raster.data[i] - mean;
      var += d * d;
    }
    double sd = std::sqrt(var / n);
    if (sd < 1e-6) sd = 1.0;
    for (size_t i = ch; i < out.raster.data.size(); i += 3) out.raster.data[i] = (out.raster.data[i] - mean) / sd;
    out.perChannelMean[ch] = mean;
    out.perChannelStd[ch] = sd;
  }
  return out;
}

// ---------------------------------------------------------------------------
// JPEG simulation

const QuantTable kAnnexKLuma = {16, 11, 10, 16, 24,  40,  51,  61,  12, 12, 14, 19, 26,  58,  60,  55,
                                14, 13, 16, 24, 40,  57,  69,  56,  14, 17, 22, 29, 51,  87,  80,  62,
                                18, 22, 37, 56, 68,  109, 103, 77,  24, 35, 55, 64, 81,  104, 113, 92,
                                49, 64, 78, 87, 103, 121, 120, 101, 72, 92, 95, 98, 112, 100, 103, 99};

const QuantTable kAnnexKChroma = {17, 18, 24, 47, 99, 99, 99, 99, 18, 21, 26, 66, 99, 99, 99, 99,
                                  24, 26, 56, 99, 99, 99, 99, 99, 47, 66, 99, 99, 99, 99, 99, 99,
                                  99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99,
                                  99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99};

namespace {

QuantTable scale_table(const QuantTable& base, int quality) {
  if (quality < 1 || quality > 100) throw PreconditionError("JPEG quality must be in [1,100]");
  const int scale = quality < 50 ? 5000 / quality : 200 - 2 * quality;
  QuantTable t{};
  for (int i = 0; i < 64; ++i) t[i] = std::clamp((base[i] * scale + 50) / 100, 1, 255);
  return t;
}

struct DctBasis {
  double m[8][8];  // m[k][n] = alpha(k) cos((2n+1) k pi / 16)
  DctBasis() {
    for (int k = 0; k < 8; ++k)
      for (int n = 0; n < 8; ++n)
        m[k][n] = (k == 0 ? std::sqrt(1.0 / 8.0) : std::sqrt(2.0 / 8.0)) * std::cos((2 * n + 1) * k * M_PI / 16.0);
  }
};

const DctBasis& dct_basis() {
  static const DctBasis b;
  return b;
}

// In-place quantize/dequantize of one plane whose sides are multiples of 8.
void quantize_plane(Grid& plane, const QuantTable& q) {
  const auto& B = dct_basis().m;
  double blk[8][8], tmp[8][8], coef[8][8];
  for (int br = 0; br < plane.rows; br += 8) {
    for (int bc = 0; bc < plane.cols; bc += 8) {
      for (int r = 0; r < 8; ++r)
        for (int c = 0; c < 8; ++c) blk[r][c] = plane.at(br + r, bc + c) - 128.0;
      // coef = B * blk * B^T
      for (int k = 0; k < 8; ++k)
        for (int c = 0; c < 8; ++c) {
          double acc = 0.0;
          for (int n = 0; n < 8; ++n) acc += B[k][n] * blk[n][c];
          tmp[k][c] = acc;
        }
      for (int k = 0; k < 8; ++k)
        for (int l = 0; l < 8; ++l) {
          double acc = 0.0;
          for (int n = 0; n < 8; ++n) acc += tmp[k][n] * B[l][n];
          const double step = q[k * 8 + l];
          coef[k][l] = std::floor(acc / step + 0.5) * step;
        }
      // blk = B^T * coef * B
      for (int n = 0; n < 8; ++n)
        for (int l = 0; l < 8; ++l) {
          double acc = 0.0;
          for (int k = 0; k < 8; ++k) acc += B[k][n] * coef[k][l];
          tmp[n][l] = acc;
        }
      for (int n = 0; n < 8; ++n)
        for (int m = 0; m < 8; ++m) {
          double acc = 0.0;
          for (int l = 0; l < 8; ++l) acc += tmp[n][l] * B[l][m];
          plane.at(br + n, bc + m) = acc + 128.0;
        }
    }
  }
}

Grid pad_replicate(const Grid& g, int rows, int cols) {
  Grid out(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) out.at(r, c) = g.clamped(r, c);
  return out;
}

Grid box_down2(const Grid& g) {
  Grid out(g.rows / 2, g.cols / 2);
  for (int r = 0; r < out.rows; ++r)
    for (int c = 0; c < out.cols; ++c)
      out.at(r, c) = 0.25 * (g.at(2 * r, 2 * c) + g.at(2 * r, 2 * c + 1) + g.at(2 * r + 1, 2 * c) +
                             g.at(2 * r + 1, 2 * c + 1));
  return out;
}

Grid replicate_up2(const Grid& g) {
  Grid out(g.rows * 2, g.cols * 2);
  for (int r = 0; r < out.rows; ++r)
    for (int c = 0; c < out.cols; ++c) out.at(r, c) = g.at(r / 2, c / 2);
  return out;
}

}  // namespace

QuantTable luma_quant_table(int quality) { return scale_table(kAnnexKLuma, quality); }
QuantTable chroma_quant_table(int quality) { return scale_table(kAnnexKChroma, quality); }

Image jpeg_sim(const Image& img, const JpegSimParams& p) {
  validate(img, 1);
  const auto ql = luma_quant_table(p.quality);
  const auto qc = chroma_quant_table(p.quality);
  const int unit = p.chromaSubsample ? 16 : 8;
  const int pr = (img.rows + unit - 1) / unit * unit;
  const int pc = (img.cols + unit - 1) / unit * unit;

  Grid y(img.rows, img.cols), cb(img.rows, img.cols), cr(img.rows, img.cols);
  for (size_t i = 0; i < y.data.size(); ++i) {
    const double R = img.data[i * 3] * 255.0, G = img.data[i * 3 + 1] * 255.0, B = img.data[i * 3 + 2] * 255.0;
    y.data[i] = 0.299 * R + 0.587 * G + 0.114 * B;
    cb.data[i] = -0.168736 * R - 0.331264 * G + 0.5 * B + 128.0;
    cr.data[i] = 0.5 * R - 0.418688 * G - 0.081312 * B + 128.0;
  }
  Grid py = pad_replicate(y, pr, pc);
  Grid pcb = pad_replicate(cb, pr, pc);
  Grid pcr = pad_replicate(cr, pr, pc);
  quantize_plane(py, ql);
  if (p.chromaSubsample) {
    Grid dcb = box_down2(pcb), dcr = box_down2(pcr);
    quantize_plane(dcb, qc);
    quantize_plane(dcr, qc);
    pcb = replicate_up2(dcb);
    pcr = replicate_up2(dcr);
  } else {
    quantize_plane(pcb, qc);
    quantize_plane(pcr, qc);
  }

  Image out(img.rows, img.cols);
  for (int r = 0; r < img.rows; ++r)
    for (int c = 0; c < img.cols; ++c) {
      const double Y = py.at(r, c), Cb = pcb.at(r, c) - 128.0, Cr = pcr.at(r, c) - 128.0;
      out.at(r, c, 0) = std::clamp((Y + 1.402 * Cr) / 255.0, 0.0, 1.0);
      out.at(r, c, 1) = std::clamp((Y - 0.344136 * Cb - 0.714136 * Cr) / 255.0, 0.0, 1.0);
      out.at(r, c, 2) = std::clamp((Y + 1.772 * Cb) / 255.0, 0.0, 1.0);
    }
  return out;
}

Image translate(const Image& img, int dx, int dy) {
  Image out(img.rows, img.cols);
  for (int r = 0; r < img.rows; ++r) {
    const int sr = std::clamp(r - dy, 0, img.rows - 1);
    for (int c = 0; c < img.cols; ++c) {
      const int sc = std::clamp(c - dx, 0, img.cols - 1);
      for (int ch = 0; ch < 3; ++ch) out.at(r, c, ch) = img.at(sr, sc, ch);
    }
  }
  return out;
}

double psnr(const Image& a, const Image& b) {
  if (!a.same_shape(b)) throw PreconditionError("psnr shape mismatch");
  double mse = 0.0;
  for (size_t i = 0; i < a.data.size(); ++i) {
    const double d = a.data[i] - b.data[i];
    mse += d * d;
  }
  mse /= static_cast<double>(a.data.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / mse);
}

double max_abs_diff(const Image& a, const Image& b) {
  if (!a.same_shape(b)) throw PreconditionError("shape mismatch");
  double m = 0.0;
  for (size_t i = 0; i < a.data.size(); ++i) m = std::max(m, std::abs(a.data[i] - b.data[i]));
  return m;
}

}  // namespace aadf
