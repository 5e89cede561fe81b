#include "aadf/harness.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include <json.hpp>

#include "aadf/random.hpp"

namespace aadf {

using ojson = nlohmann::ordered_json;

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double to_double(const std::string& s, const std::string& what) {
  double v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) throw FormatError("bad number for " + what + ": " + s);
  return v;
}

template <class T>
T to_int(const std::string& s, const std::string& what) {
  T v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) throw FormatError("bad integer for " + what + ": " + s);
  return v;
}

bool to_bool(const std::string& s, const std::string& what) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw FormatError("bad boolean for " + what + ": " + s);
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_on(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : s) {
    if (ch == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  out.push_back(cur);
  return out;
}

bool valid_data_split(const std::string& s) { return s == "train" || s == "val" || s == "test"; }

}  // namespace

// ---- manifests ----

void validate(const Manifest& m) {
  std::set<std::string> seen;
  for (const auto& e : m.entries) {
    if (e.id.empty()) throw ManifestError("manifest entry with empty id");
    if (e.id.find_first_of(",\n\r\t ") != std::string::npos)
      throw ManifestError("manifest id '" + e.id + "' contains a separator character");
    if (!seen.insert(e.id).second) throw ManifestError("duplicate manifest id '" + e.id + "'");
    if (e.label != 0 && e.label != 1) throw ManifestError("entry '" + e.id + "': label outside {0, 1}");
    if (!valid_data_split(e.split)) throw ManifestError("entry '" + e.id + "': unknown split '" + e.split + "'");
    if (e.path.empty()) throw ManifestError("entry '" + e.id + "': empty path");
  }
}

std::string serialize_manifest(const Manifest& m) {
  std::string out;
  for (const auto& e : m.entries) {
    ojson j;
    j["id"] = e.id;
    j["path"] = e.path;
    j["label"] = e.label;
    if (e.box)
      j["box"] = {e.box->x0, e.box->y0, e.box->x1, e.box->y1};
    else
      j["box"] = nullptr;
    j["split"] = e.split;
    out += j.dump();
    out += '\n';
  }
  return out;
}

Manifest parse_manifest(const std::string& text, const fs::path& root) {
  Manifest m;
  m.root = root;
  std::istringstream in(text);
  std::string line;
  int lineNo = 0;
  while (std::getline(in, line)) {
    ++lineNo;
    if (trim(line).empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      ManifestEntry e;
      e.id = j.at("id").get<std::string>();
      e.path = j.at("path").get<std::string>();
      e.label = j.at("label").get<int>();
      if (j.contains("box") && !j["box"].is_null()) {
        const auto& b = j["box"];
        if (!b.is_array() || b.size() != 4) throw ManifestError("box must be [x0, y0, x1, y1]");
        e.box = FaceBox{b[0].get<double>(), b[1].get<double>(), b[2].get<double>(), b[3].get<double>()};
      }
      e.split = j.value("split", std::string("train"));
      m.entries.push_back(std::move(e));
    } catch (const nlohmann::json::exception& ex) {
      throw ManifestError("manifest line " + std::to_string(lineNo) + ": " + ex.what());
    }
  }
  validate(m);
  return m;
}

Manifest load_manifest(const fs::path& path) { return parse_manifest(read_text(path), path.parent_path()); }

void save_manifest(const Manifest& m, const fs::path& path) {
  validate(m);
  write_text(path, serialize_manifest(m));
}

std::vector<ManifestEntry> entries_in_split(const Manifest& m, const std::string& split) {
  std::vector<ManifestEntry> out;
  for (const auto& e : m.entries)
    if (e.split == split) out.push_back(e);
  return out;
}

void require_files(const Manifest& m, const std::vector<ManifestEntry>& entries) {
  std::string missing;
  for (const auto& e : entries)
    if (!fs::exists(m.root / e.path)) missing += (missing.empty() ? "" : ", ") + e.id;
  if (!missing.empty()) throw IoError("missing image files for ids: " + missing);
}

// ---- run configuration ----

namespace {

struct Field {
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

const std::map<std::string, Field>& config_fields() {
  static const std::map<std::string, Field> fields = [] {
    std::map<std::string, Field> f;
    auto dbl = [&f](const std::string& key, auto member) {
      f[key] = {[member](const RunConfig& c) { return fmt(member(const_cast<RunConfig&>(c))); },
                [member, key](RunConfig& c, const std::string& v) { member(c) = to_double(v, key); }};
    };
    auto integer = [&f](const std::string& key, auto member) {
      f[key] = {[member](const RunConfig& c) { return std::to_string(member(const_cast<RunConfig&>(c))); },
                [member, key](RunConfig& c, const std::string& v) {
                  member(c) = to_int<std::remove_reference_t<decltype(member(c))>>(v, key);
                }};
    };
    auto boolean = [&f](const std::string& key, auto member) {
      f[key] = {[member](const RunConfig& c) {
                  return std::string(member(const_cast<RunConfig&>(c)) ? "true" : "false");
                },
                [member, key](RunConfig& c, const std::string& v) { member(c) = to_bool(v, key); }};
    };
    integer("seed", [](RunConfig& c) -> std::uint64_t& { return c.seed; });
    integer("working_size", [](RunConfig& c) -> int& { return c.workingSize; });
    integer("mask_grid", [](RunConfig& c) -> int& { return c.maskGrid; });
    integer("hidden", [](RunConfig& c) -> int& { return c.hidden; });
    f["out_dir"] = {[](const RunConfig& c) { return c.outDir; },
                    [](RunConfig& c, const std::string& v) { c.outDir = v; }};

    integer("train.K", [](RunConfig& c) -> int& { return c.train.K; });
    integer("train.epochs", [](RunConfig& c) -> int& { return c.train.epochs; });
    integer("train.batch_size", [](RunConfig& c) -> int& { return c.train.batchSize; });
    dbl("train.lr", [](RunConfig& c) -> double& { return c.train.lr; });
    dbl("train.weight_decay", [](RunConfig& c) -> double& { return c.train.weightDecay; });
    dbl("train.clip_norm", [](RunConfig& c) -> double& { return c.train.clipNorm; });
    dbl("train.beta1", [](RunConfig& c) -> double& { return c.train.beta1; });
    dbl("train.beta2", [](RunConfig& c) -> double& { return c.train.beta2; });
    dbl("train.eps", [](RunConfig& c) -> double& { return c.train.epsOpt; });
    boolean("train.clean_only", [](RunConfig& c) -> bool& { return c.train.cleanOnly; });

    integer("defense.N", [](RunConfig& c) -> int& { return c.defense.N; });
    integer("defense.max_phase", [](RunConfig& c) -> int& { return c.defense.maxPhase; });
    dbl("defense.gamma_lo", [](RunConfig& c) -> double& { return c.defense.gammaLo; });
    dbl("defense.gamma_hi", [](RunConfig& c) -> double& { return c.defense.gammaHi; });
    integer("defense.quality_lo", [](RunConfig& c) -> int& { return c.defense.qualityLo; });
    integer("defense.quality_hi", [](RunConfig& c) -> int& { return c.defense.qualityHi; });
    integer("defense.max_jpeg_shift", [](RunConfig& c) -> int& { return c.defense.maxJpegShift; });

    dbl("loss.alpha", [](RunConfig& c) -> double& { return c.loss.alpha; });
    dbl("loss.beta", [](RunConfig& c) -> double& { return c.loss.beta; });
    dbl("loss.lambda_mask", [](RunConfig& c) -> double& { return c.loss.lambdaMask; });
    dbl("loss.gamma_clean", [](RunConfig& c) -> double& { return c.loss.gammaClean; });
    dbl("loss.lambda_edge", [](RunConfig& c) -> double& { return c.loss.lambdaEdge; });
    dbl("loss.lambda_size", [](RunConfig& c) -> double& { return c.loss.lambdaSize; });
    dbl("loss.lambda_cons", [](RunConfig& c) -> double& { return c.loss.lambdaCons; });
    dbl("loss.eps", [](RunConfig& c) -> double& { return c.loss.eps; });
    dbl("loss.eps_dice", [](RunConfig& c) -> double& { return c.loss.epsDice; });
    dbl("loss.w_max", [](RunConfig& c) -> double& { return c.loss.wMax; });
    boolean("loss.at_working_res", [](RunConfig& c) -> bool& { return c.loss.lossAtWorkingRes; });

    dbl("eval.theta", [](RunConfig& c) -> double& { return c.theta; });
    integer("eval.dilate_radius", [](RunConfig& c) -> int& { return c.dilateRadius; });
    integer("eval.bins", [](RunConfig& c) -> int& { return c.calibBins; });
    boolean("surveillance.enabled", [](RunConfig& c) -> bool& { return c.surveillanceEnabled; });
    dbl("surveillance.luma_threshold", [](RunConfig& c) -> double& { return c.surveillanceLuma; });
    return f;
  }();
  return fields;
}

}  // namespace

void RunConfig::validate() const {
  if (workingSize < 16) throw PreconditionError("RunConfig: working_size must be >= 16");
  if (maskGrid < 1 || maskGrid > workingSize) throw PreconditionError("RunConfig: mask_grid out of range");
  if (hidden < 1) throw PreconditionError("RunConfig: hidden must be >= 1");
  train_config(*this).validate();
  loss.validate();
  if (defense.N < 1) throw PreconditionError("RunConfig: defense.N must be >= 1");
  if (defense.maxPhase < 0 || defense.maxPhase >= workingSize / 2)
    throw PreconditionError("RunConfig: defense.max_phase out of range");
  if (!(defense.gammaLo > 0 && defense.gammaLo <= defense.gammaHi))
    throw PreconditionError("RunConfig: defense gamma range invalid");
  if (defense.qualityLo < 1 || defense.qualityHi > 100 || defense.qualityLo > defense.qualityHi)
    throw PreconditionError("RunConfig: defense quality range invalid");
  if (defense.maxJpegShift < 0 || defense.maxJpegShift > 7)
    throw PreconditionError("RunConfig: defense.max_jpeg_shift must be in [0, 7]");
  if (!(theta >= 0.0 && theta <= 1.0)) throw PreconditionError("RunConfig: eval.theta must be in [0, 1]");
  if (dilateRadius < 0) throw PreconditionError("RunConfig: eval.dilate_radius must be >= 0");
  if (calibBins < 1) throw PreconditionError("RunConfig: eval.bins must be >= 1");
  for (const auto& [key, value] : attackOverrides) {
    const auto dot = key.find('.');
    if (dot == std::string::npos) throw PreconditionError("RunConfig: attack override '" + key + "' needs family.key");
    parse_family(key.substr(0, dot));
  }
}

std::string RunConfig::serialize() const {
  std::map<std::string, std::string> kv;
  for (const auto& [key, field] : config_fields()) kv[key] = field.get(*this);
  for (const auto& [key, value] : attackOverrides) kv["attack." + key] = value;
  std::string out;
  for (const auto& [k, v] : kv) out += k + "=" + v + "\n";
  return out;
}

RunConfig RunConfig::parse(const std::string& text) {
  RunConfig c;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError("config line without '=': " + line);
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.rfind("attack.", 0) == 0) {
      c.attackOverrides[key.substr(7)] = value;
      continue;
    }
    const auto it = config_fields().find(key);
    if (it == config_fields().end()) throw FormatError("unknown config key: " + key);
    it->second.set(c, value);
  }
  c.validate();
  return c;
}

RunConfig RunConfig::load(const fs::path& path) { return parse(read_text(path)); }

TrainConfig train_config(const RunConfig& cfg) {
  TrainConfig t = cfg.train;
  t.globalSeed = cfg.seed;
  t.workingSize = cfg.workingSize;
  t.grid = cfg.maskGrid;
  t.hidden = cfg.hidden;
  return t;
}

// ---- synthetic corpus ----

namespace {

struct FaceGeom {
  double cx, cy, a, b;  // centre and horizontal / vertical semi-axes, pixels
};

struct Wave {
  double amp, fx, fy, phase;
};

struct SceneStyle {
  double noiseSigma;   // additive sensor noise
  double textureAmp;   // relative amplitude of band-pass skin texture
};

constexpr SceneStyle kCameraStyle{0.02, 0.12};
constexpr SceneStyle kDonorStyle{0.02, 0.0};

// Zero-mean, unit-variance band-pass noise (difference of Gaussians).
Grid skin_texture(Rng& rng, int size) {
  Grid white(size, size);
  for (double& v : white.data) v = rng.normal();
  const Grid fine = gaussian_blur(white, 1.5), coarse = gaussian_blur(white, 4.0);
  Grid t(size, size);
  double ss = 0.0;
  for (size_t i = 0; i < t.data.size(); ++i) {
    t.data[i] = fine.data[i] - coarse.data[i];
    ss += t.data[i] * t.data[i];
  }
  const double sd = std::sqrt(ss / static_cast<double>(t.data.size()));
  for (double& v : t.data) v /= sd;
  return t;
}

double ellipse_radius(double x, double y, double cx, double cy, double a, double b) {
  const double u = (x - cx) / a, v = (y - cy) / b;
  return std::sqrt(u * u + v * v);
}

// 1 well inside the ellipse, 0 outside, linear over `soft` pixels at the rim.
double ellipse_cover(double x, double y, double cx, double cy, double a, double b, double soft) {
  const double rho = ellipse_radius(x, y, cx, cy, a, b);
  return std::clamp((1.0 - rho) * std::min(a, b) / soft + 0.5, 0.0, 1.0);
}

// Low-frequency colour field, a shaded elliptical face with darker eye and
// mouth blobs, then i.i.d. Gaussian texture.
Image render_scene(Rng& rng, int size, const FaceGeom& g, const SceneStyle& style) {
  const double S = size;
  double base[3];
  Wave waves[3][3];
  for (int ch = 0; ch < 3; ++ch) {
    base[ch] = rng.uniform(0.35, 0.55);
    for (auto& w : waves[ch])
      w = {rng.uniform(0.02, 0.04), rng.uniform(0.5, 2.5), rng.uniform(0.5, 2.5), rng.uniform(0.0, 2.0 * M_PI)};
  }
  const double skin[3] = {rng.uniform(0.70, 0.85), rng.uniform(0.50, 0.62), rng.uniform(0.40, 0.52)};
  const double shadeAngle = rng.uniform(0.0, 2.0 * M_PI);
  const double shadeAmp = rng.uniform(0.03, 0.08);

  Grid texture;
  if (style.textureAmp > 0.0) texture = skin_texture(rng, size);
  Image img(size, size);
  for (int r = 0; r < size; ++r) {
    for (int c = 0; c < size; ++c) {
      const double x = c + 0.5, y = r + 0.5;
      const double face = ellipse_cover(x, y, g.cx, g.cy, g.a, g.b, 1.5);
      double dark = 0.0;
      dark = std::max(dark, ellipse_cover(x, y, g.cx - 0.4 * g.a, g.cy - 0.25 * g.b, 0.18 * g.a, 0.10 * g.b, 1.0));
      dark = std::max(dark, ellipse_cover(x, y, g.cx + 0.4 * g.a, g.cy - 0.25 * g.b, 0.18 * g.a, 0.10 * g.b, 1.0));
      dark = std::max(dark, ellipse_cover(x, y, g.cx, g.cy + 0.45 * g.b, 0.35 * g.a, 0.08 * g.b, 1.0));
      const double shade =
          shadeAmp * ((x - g.cx) * std::cos(shadeAngle) + (y - g.cy) * std::sin(shadeAngle)) / g.a;
      for (int ch = 0; ch < 3; ++ch) {
        double bg = base[ch];
        for (const auto& w : waves[ch]) bg += w.amp * std::sin(2.0 * M_PI * (w.fx * x + w.fy * y) / S + w.phase);
        double fc = (skin[ch] + shade) * (1.0 - 0.45 * dark);
        if (style.textureAmp > 0.0) fc *= 1.0 + style.textureAmp * texture.at(r, c);
        img.at(r, c, ch) = (1.0 - face) * bg + face * fc;
      }
    }
  }
  if (style.noiseSigma > 0.0)
    for (double& v : img.data) v = std::clamp(v + style.noiseSigma * rng.normal(), 0.0, 1.0);
  return img;
}

}  // namespace

SynthSample synth_sample(std::uint64_t seed, int index, int size) {
  if (size < 32) throw PreconditionError("synth_sample: size must be >= 32");
  if (index < 0) throw PreconditionError("synth_sample: negative index");
  const double S = size;
  Rng rng(derive_seed({seed, "synth", index, 0}));
  FaceGeom g;
  g.a = rng.uniform(0.30, 0.36) * S;
  g.b = std::min(g.a * rng.uniform(1.1, 1.3), 0.45 * S);
  g.cx = rng.uniform(0.4, 0.6) * S;
  g.cy = std::clamp(rng.uniform(0.42, 0.58) * S, g.b + 2.0, S - g.b - 2.0);

  SynthSample out;
  out.label = index % 2;
  out.source = render_scene(rng, size, g, kCameraStyle);
  out.image = out.source;
  out.box = {std::max(0.0, g.cx - g.a), std::max(0.0, g.cy - g.b), std::min(S, g.cx + g.a), std::min(S, g.cy + g.b)};
  if (out.label == 0) return out;

  // Donor content rendered at half resolution with the same face layout and
  // no skin texture, then upsampled.
  Rng drng(derive_seed({seed, "synth-donor", index, 0}));
  const int half = size / 2;
  const double k = static_cast<double>(half) / S;
  const Image donor = resize_bilinear(render_scene(drng, half, {g.cx * k, g.cy * k, g.a * k, g.b * k}, kDonorStyle), size, size);
  const double sgn = drng.uniform() < 0.5 ? -1.0 : 1.0;
  const double offset[3] = {sgn * drng.uniform(0.015, 0.03), 0.0, -sgn * drng.uniform(0.015, 0.03)};

  const double ai = 0.85 * g.a, bi = 0.85 * g.b;
  for (int r = 0; r < size; ++r) {
    for (int c = 0; c < size; ++c) {
      const double rho = ellipse_radius(c + 0.5, r + 0.5, g.cx, g.cy, ai, bi);
      const double alpha = std::clamp((1.0 - rho) * std::min(ai, bi) / out.featherWidth, 0.0, 1.0);
      if (alpha <= 0.0) continue;
      for (int ch = 0; ch < 3; ++ch) {
        const double d = std::clamp(donor.at(r, c, ch) + offset[ch], 0.0, 1.0);
        out.image.at(r, c, ch) = (1.0 - alpha) * out.source.at(r, c, ch) + alpha * d;
      }
    }
  }
  return out;
}

Manifest gen_synth(int count, std::uint64_t seed, const fs::path& outDir, const SynthOptions& opt) {
  if (count < 2 || count % 2 != 0) throw PreconditionError("gen_synth: count must be even and >= 2");
  if (opt.trainFraction < 0 || opt.valFraction < 0 || opt.trainFraction + opt.valFraction > 1.0)
    throw PreconditionError("gen_synth: split fractions out of range");
  const int pairs = count / 2;
  const int trainPairs = static_cast<int>(std::floor(opt.trainFraction * pairs + 0.5));
  const int valPairs = std::min(pairs - trainPairs, static_cast<int>(std::floor(opt.valFraction * pairs + 0.5)));

  Manifest m;
  m.root = outDir;
  fs::create_directories(outDir / "images");
  for (int i = 0; i < count; ++i) {
    const SynthSample s = synth_sample(seed, i, opt.size);
    char name[32];
    std::snprintf(name, sizeof name, "synth_%05d", i);
    ManifestEntry e;
    e.id = name;
    e.path = std::string("images/") + name + ".png";
    e.label = s.label;
    e.box = s.box;
    const int pair = i / 2;
    e.split = pair < trainPairs ? "train" : (pair < trainPairs + valPairs ? "val" : "test");
    save_image(s.image, outDir / e.path);
    m.entries.push_back(std::move(e));
  }
  save_manifest(m, outDir / "manifest.jsonl");
  return m;
}

// ---- training ----

Dataset make_dataset(const Manifest& m, const std::vector<ManifestEntry>& entries) {
  require_files(m, entries);
  Dataset d;
  std::map<std::string, std::string> paths;
  for (const auto& e : entries) {
    d.items.push_back({e.id, e.label, e.box});
    paths[e.id] = (m.root / e.path).string();
  }
  d.load = [paths](const SampleMeta& s) { return load_image(paths.at(s.id)); };
  return d;
}

TrainResult train_from_manifest(const Manifest& m, const RunConfig& cfg) {
  cfg.validate();
  const auto entries = entries_in_split(m, "train");
  if (entries.empty()) throw ManifestError("manifest has no train entries");
  return train(make_dataset(m, entries), train_config(cfg), cfg.loss);
}

TrainResult run_train(const Manifest& m, const RunConfig& cfg, const fs::path& outDir) {
  TrainResult r = train_from_manifest(m, cfg);
  fs::create_directories(outDir);
  save_params(r.params, outDir / "params.bin");
  std::string log;
  for (const auto& s : r.log) log += to_json_line(s) + "\n";
  write_text(outDir / "train_log.jsonl", log);
  write_text(outDir / "run_config.txt", cfg.serialize());
  return r;
}

// ---- evaluation ----

AttackInstance eval_attack(const RunConfig& cfg, const std::string& id, AttackFamily family) {
  // Epoch -1 keeps evaluation draws disjoint from the training epochs.
  AttackInstance inst =
      sample_attack(family, derive_seed({cfg.seed, id, -1, static_cast<std::int64_t>(family) + 1}));
  const std::string prefix = std::string(family_split(family)) + ".";
  bool patched = false;
  std::vector<std::string> parts = split_on(serialize(inst), ';');
  for (const auto& [key, value] : cfg.attackOverrides) {
    if (key.rfind(prefix, 0) != 0) continue;
    const std::string field = key.substr(prefix.size());
    bool found = false;
    for (auto& part : parts) {
      if (part.rfind(field + "=", 0) == 0) {
        part = field + "=" + value;
        found = true;
      }
    }
    if (!found) throw PreconditionError("attack override: " + key + " is not a parameter of " + prefix);
    patched = true;
  }
  if (!patched) return inst;
  std::string rec;
  for (size_t i = 0; i < parts.size(); ++i) rec += (i ? ";" : "") + parts[i];
  return parse_attack(rec);
}

std::uint64_t defense_seed(const RunConfig& cfg, const std::string& recordId) {
  return derive_seed({cfg.seed, recordId, -2, 0});
}

std::string attacked_id(const std::string& id, AttackFamily family) {
  return id + "@" + std::string(family_split(family));
}

bool surveillance_filter(const Image& view, AttackFamily family, bool isAttacked, double lumaThreshold) {
  return isAttacked && family == AttackFamily::TRANSCODE && luminance(view).mean() < lumaThreshold;
}

std::vector<EvalRecord> eval_records(const Manifest& m, const DetectorParams& p, const RunConfig& cfg) {
  cfg.validate();
  if (p.grid != cfg.maskGrid || p.hidden != cfg.hidden)
    throw PreconditionError("eval: parameters do not match the run configuration");
  const auto entries = entries_in_split(m, "test");
  if (entries.empty()) throw ManifestError("manifest has no test entries");
  require_files(m, entries);
  const int ws = cfg.workingSize;

  std::vector<EvalRecord> out;
  for (const auto& e : entries) {
    const Image raw = load_image(m.root / e.path);
    const Image x = to_canvas(raw, ws);
    WeakPrior prior{Grid(ws, ws, 0.0), {}};
    if (e.box) prior = build_prior(*e.box, raw.rows, raw.cols, ws);

    auto score = [&](const Image& view, const Grid& roi, const std::string& rid, const std::string& split,
                     std::optional<AttackFamily> fam) {
      DefenseConfig dc = cfg.defense;
      dc.seed = defense_seed(cfg, rid);
      const DefendedPrediction d = ttd_predict(view, p, dc, ws);
      EvalRecord r;
      r.pred.id = rid;
      r.pred.split = split;
      r.pred.p = d.probability;
      r.pred.y = e.label;
      r.meanLogit = d.meanLogit;
      r.meanEvidence = d.evidence.mean();
      if (e.label == 1 && e.box) {
        r.hasLoc = true;
        r.loc = weak_localization(d.evidence, roi, cfg.theta, cfg.dilateRadius);
      }
      if (fam) r.surveillance = surveillance_filter(view, *fam, true, cfg.surveillanceLuma);
      out.push_back(std::move(r));
    };

    score(x, prior.grid, e.id, "clean", std::nullopt);
    for (AttackFamily f : kAllFamilies) {
      const AttackInstance inst = eval_attack(cfg, e.id, f);
      const Image xt = apply_attack(x, inst, &prior.grid);
      const Grid gt = transform_prior(prior, inst).grid;
      score(xt, gt, attacked_id(e.id, f), std::string(family_split(f)), f);
    }
  }
  return out;
}

EvalReport build_report(std::vector<EvalRecord> records, const RunConfig& cfg, std::optional<double> fixedTau) {
  if (records.empty()) throw PreconditionError("build_report: no records");
  EvalReport rep;
  rep.records = std::move(records);
  std::map<std::string, std::vector<PredictionRecord>> bySplit;
  for (const auto& r : rep.records) {
    validate(r.pred);
    bySplit[r.pred.split].push_back(r.pred);
  }
  if (fixedTau) {
    rep.tau.tau = *fixedTau;
    rep.tau.worstAcc = 1.0;
    for (const auto& [name, recs] : bySplit) {
      rep.tau.perSplitAcc[name] = accuracy(confusion_at(recs, *fixedTau));
      rep.tau.worstAcc = std::min(rep.tau.worstAcc, rep.tau.perSplitAcc[name]);
    }
  } else {
    rep.tau = tune_tau(bySplit);
  }
  for (const auto& [name, recs] : bySplit) {
    SplitMetrics sm;
    try {
      sm.rank = rank_metrics(recs);
    } catch (const UndefinedMetricError&) {
      sm.rank.reset();
    }
    sm.calib = calib_metrics(recs, cfg.calibBins);
    sm.selective = selective_metrics(recs);
    sm.operating = operating_metrics(recs, rep.tau.tau);
    rep.splits[name] = std::move(sm);
  }
  for (const auto& r : rep.records) {
    LocSummary& s = rep.localization[r.pred.split];
    if (r.pred.y == 0) {
      ++s.reals;
      s.realMeanEvidence += r.meanEvidence;
    } else if (r.hasLoc) {
      ++s.fakes;
      s.meanEwr += r.loc.ewr;
      s.meanPir += r.loc.precisionInRoi;
      s.meanDilatedIoU += r.loc.dilatedIoU;
      s.meanSoftIoU += r.loc.softIoU;
      s.meanHardIoU += r.loc.hardIoU;
      s.emptyPredictions += r.loc.emptyPrediction ? 1 : 0;
    }
  }
  for (auto& [name, s] : rep.localization) {
    if (s.reals > 0) s.realMeanEvidence /= s.reals;
    if (s.fakes > 0) {
      s.meanEwr /= s.fakes;
      s.meanPir /= s.fakes;
      s.meanDilatedIoU /= s.fakes;
      s.meanSoftIoU /= s.fakes;
      s.meanHardIoU /= s.fakes;
    }
  }
  if (cfg.surveillanceEnabled) {
    int n = 0, ok = 0;
    for (const auto& r : rep.records) {
      if (!r.surveillance) continue;
      ++n;
      ok += ((r.pred.p >= rep.tau.tau ? 1 : 0) == r.pred.y) ? 1 : 0;
    }
    rep.surveillance = std::make_pair(n, n > 0 ? static_cast<double>(ok) / n : 0.0);
  }
  return rep;
}

namespace {

// Canonical split order first, anything else after.
std::vector<std::string> ordered_splits(const std::map<std::string, SplitMetrics>& m) {
  std::vector<std::string> out;
  for (auto s : kSplits)
    if (m.count(std::string(s))) out.emplace_back(s);
  for (const auto& [name, v] : m)
    if (!is_valid_split(name)) out.push_back(name);
  return out;
}

ojson opt_num(const std::optional<double>& v) { return v ? ojson(*v) : ojson(nullptr); }

}  // namespace

std::string metrics_json(const EvalReport& r) {
  ojson j;
  j["tau_star"] = r.tau.tau;
  double worst = 1.0;
  for (const auto& [name, sm] : r.splits) worst = std::min(worst, sm.operating.acc);
  j["worst_case_acc"] = worst;
  ojson rows = ojson::array();
  for (const auto& name : ordered_splits(r.splits)) {
    const SplitMetrics& sm = r.splits.at(name);
    ojson row;
    row["split"] = name;
    row["n"] = sm.operating.counts.total();
    row["auc"] = sm.rank ? ojson(sm.rank->auc) : ojson(nullptr);
    row["ap"] = sm.rank ? ojson(sm.rank->ap) : ojson(nullptr);
    row["ece"] = sm.calib.ece;
    row["brier"] = sm.calib.brier;
    row["nll"] = sm.calib.nll;
    row["aurc"] = sm.selective.aurc;
    row["acc"] = sm.operating.acc;
    row["eer"] = opt_num(sm.operating.eer);
    row["tpr_at_fpr_1e-2"] = opt_num(sm.operating.tprAt1e2);
    row["tpr_at_fpr_1e-3"] = opt_num(sm.operating.tprAt1e3);
    row["tn"] = sm.operating.counts.tn;
    row["fp"] = sm.operating.counts.fp;
    row["fn"] = sm.operating.counts.fn;
    row["tp"] = sm.operating.counts.tp;
    rows.push_back(row);
  }
  j["splits"] = rows;
  ojson loc;
  for (const auto& name : ordered_splits(r.splits)) {
    if (!r.localization.count(name)) continue;
    const LocSummary& s = r.localization.at(name);
    loc[name] = {{"fakes", s.fakes},
                 {"mean_ewr", s.meanEwr},
                 {"mean_precision_in_roi", s.meanPir},
                 {"empty_predictions", s.emptyPredictions},
                 {"mean_dilated_iou", s.meanDilatedIoU},
                 {"mean_soft_iou", s.meanSoftIoU},
                 {"mean_hard_iou", s.meanHardIoU},
                 {"reals", s.reals},
                 {"real_mean_evidence", s.realMeanEvidence}};
  }
  j["weak_localization"] = loc;
  if (r.surveillance) j["surveillance"] = {{"count", r.surveillance->first}, {"acc", r.surveillance->second}};
  return j.dump(2) + "\n";
}

std::string confusion_csv(const EvalReport& r) {
  std::string out = "split,tn,fp,fn,tp,acc\n";
  for (const auto& name : ordered_splits(r.splits)) {
    const auto& c = r.splits.at(name).operating;
    out += name + "," + std::to_string(c.counts.tn) + "," + std::to_string(c.counts.fp) + "," +
           std::to_string(c.counts.fn) + "," + std::to_string(c.counts.tp) + "," + fmt(c.acc) + "\n";
  }
  return out;
}

std::string risk_coverage_csv(const SelectiveMetrics& s) {
  std::string out = "coverage,risk\n";
  for (const auto& [cov, risk] : s.curve) out += fmt(cov) + "," + fmt(risk) + "\n";
  return out;
}

namespace {
const char* kPredHeader =
    "id,split,y,p,mean_logit,mean_evidence,has_loc,ewr,precision_in_roi,empty_prediction,dilated_iou,soft_iou,"
    "hard_iou,surveillance";
}

std::string predictions_csv(const std::vector<EvalRecord>& records) {
  std::string out = std::string(kPredHeader) + "\n";
  for (const auto& r : records) {
    out += r.pred.id + "," + r.pred.split + "," + std::to_string(r.pred.y) + "," + fmt(r.pred.p) + "," +
           fmt(r.meanLogit) + "," + fmt(r.meanEvidence) + "," + (r.hasLoc ? "1" : "0") + "," + fmt(r.loc.ewr) + "," +
           fmt(r.loc.precisionInRoi) + "," + (r.loc.emptyPrediction ? "1" : "0") + "," + fmt(r.loc.dilatedIoU) +
           "," + fmt(r.loc.softIoU) + "," + fmt(r.loc.hardIoU) + "," + (r.surveillance ? "1" : "0") + "\n";
  }
  return out;
}

std::vector<EvalRecord> parse_predictions_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || trim(line) != kPredHeader) throw FormatError("predictions CSV: unexpected header");
  std::vector<EvalRecord> out;
  int lineNo = 1;
  while (std::getline(in, line)) {
    ++lineNo;
    if (trim(line).empty()) continue;
    const auto f = split_on(trim(line), ',');
    if (f.size() != 14) throw FormatError("predictions CSV line " + std::to_string(lineNo) + ": expected 14 fields");
    EvalRecord r;
    r.pred.id = f[0];
    r.pred.split = f[1];
    r.pred.y = to_int<int>(f[2], "y");
    r.pred.p = to_double(f[3], "p");
    r.meanLogit = to_double(f[4], "mean_logit");
    r.meanEvidence = to_double(f[5], "mean_evidence");
    r.hasLoc = to_bool(f[6], "has_loc");
    r.loc.ewr = to_double(f[7], "ewr");
    r.loc.precisionInRoi = to_double(f[8], "precision_in_roi");
    r.loc.emptyPrediction = to_bool(f[9], "empty_prediction");
    r.loc.dilatedIoU = to_double(f[10], "dilated_iou");
    r.loc.softIoU = to_double(f[11], "soft_iou");
    r.loc.hardIoU = to_double(f[12], "hard_iou");
    r.surveillance = to_bool(f[13], "surveillance");
    validate(r.pred);
    out.push_back(std::move(r));
  }
  return out;
}

void write_report(const EvalReport& r, const RunConfig& cfg, const fs::path& outDir) {
  fs::create_directories(outDir);
  write_text(outDir / "metrics.json", metrics_json(r));
  write_text(outDir / "confusion.csv", confusion_csv(r));
  for (const auto& [name, sm] : r.splits)
    write_text(outDir / ("risk_coverage_" + name + ".csv"), risk_coverage_csv(sm.selective));
  write_text(outDir / "predictions.csv", predictions_csv(r.records));
  write_text(outDir / "run_config.txt", cfg.serialize());
}

EvalReport run_eval(const Manifest& m, const DetectorParams& p, const RunConfig& cfg, const fs::path& outDir) {
  EvalReport r = build_report(eval_records(m, p, cfg), cfg);
  write_report(r, cfg, outDir);
  return r;
}

// ---- gradient check fixtures ----

GradCheckCase make_gradcheck_case(std::uint64_t seed, int workingSize, int grid) {
  Rng rng(splitmix64(seed ^ 0x6a09e667f3bcc909ULL));
  Image img(workingSize, workingSize);
  for (double& v : img.data) v = rng.uniform();
  img = gaussian_blur(img, 1.0);
  const AttackInstance inst = sample_attack(kAllFamilies[rng.uniform_int(0, 5)], rng.next_u64());
  Grid prior(workingSize, workingSize, 0.0);
  const Image attacked = apply_attack(img, inst, &prior);

  GradCheckCase gc;
  gc.sample.clean = extract_features(pi_preprocess(img, workingSize), grid);
  gc.sample.attacked = extract_features(pi_preprocess(attacked, workingSize), grid);
  gc.sample.g = Grid(grid, grid);
  gc.sample.gTilde = Grid(grid, grid);
  for (double& v : gc.sample.g.data) v = rng.uniform();
  for (double& v : gc.sample.gTilde.data) v = rng.uniform();
  gc.sample.y = rng.uniform_int(0, 1);

  gc.params = DetectorParams::initialize(rng.next_u64(), grid);
  std::vector<double> flat = gc.params.flatten();
  for (double& v : flat) v += 0.3 * rng.normal();
  gc.params.unflatten(flat);
  return gc;
}

// ---- overlays ----

Image overlay(const Image& img, const Grid& evidence) {
  validate(img, 1);
  const Grid e = evidence.rows == img.rows && evidence.cols == img.cols
                     ? evidence
                     : resize_bilinear(evidence, img.rows, img.cols);
  Image out = img;
  for (int r = 0; r < img.rows; ++r) {
    for (int c = 0; c < img.cols; ++c) {
      const double a = 0.75 * std::clamp(e.at(r, c), 0.0, 1.0);
      for (int ch = 0; ch < 3; ++ch) out.at(r, c, ch) = (1.0 - a) * img.at(r, c, ch) + a * kOverlayOrange[ch];
    }
  }
  return out;
}

void render_overlay(const Image& img, const Grid& evidence, const fs::path& outPath) {
  save_image(overlay(img, evidence), outPath);
}

}  // namespace aadf
