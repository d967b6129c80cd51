#include "fairtranslate/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "fairtranslate/common.hpp"

namespace fs = std::filesystem;

namespace fairtranslate {

namespace {

constexpr double kDomainHueOffset = 30.0;    // degrees added to the hue band in domain 1
constexpr double kDomainValueOffset = -0.10; // domain 1 backgrounds render darker
constexpr double kGlyphValue = 0.92;        // near-white glyph fill
constexpr double kGlyphDecodeMargin = 0.18; // brightness gap that counts as "glyph present"

struct Region {
  int r0, r1, c0, c1;  // half-open pixel ranges
  bool empty() const { return r0 >= r1 || c0 >= c1; }
};

Region scaled_region(double r0, double r1, double c0, double c1, int res) {
  auto px = [res](double f) { return static_cast<int>(std::lround(f * res)); };
  return {px(r0), px(r1), px(c0), px(c1)};
}

Region glyph_region(const std::string& kind, int res, bool second_bar = false) {
  if (kind == "square") return scaled_region(0.28, 0.44, 0.28, 0.44, res);
  if (kind == "stripe_h") return scaled_region(0.80, 0.92, 0.20, 0.80, res);
  if (kind == "stripe_v") return scaled_region(0.15, 0.70, 0.85, 0.93, res);
  if (kind == "dot") return scaled_region(0.60, 0.68, 0.20, 0.28, res);
  if (kind == "cross") {
    return second_bar ? scaled_region(0.38, 0.68, 0.47, 0.53, res)
                      : scaled_region(0.50, 0.56, 0.25, 0.75, res);
  }
  throw ValidationError("target_factors", "unknown glyph kind '" + kind + "'");
}

// Guaranteed-background patch used as the brightness/hue reference.
Region background_probe(int res) { return scaled_region(0.56, 0.72, 0.58, 0.80, res); }

int frame_thickness(int res) { return std::max(2, res / 32); }
int corner_size(int res) { return std::max(4, res / 8); }

void hsv_to_rgb(double h_deg, double s, double v, double rgb[3]) {
  const double h = std::fmod(std::fmod(h_deg, 360.0) + 360.0, 360.0) / 60.0;
  const int i = static_cast<int>(h) % 6;
  const double f = h - std::floor(h);
  const double p = v * (1.0 - s);
  const double q = v * (1.0 - s * f);
  const double t = v * (1.0 - s * (1.0 - f));
  switch (i) {
    case 0: rgb[0] = v; rgb[1] = t; rgb[2] = p; break;
    case 1: rgb[0] = q; rgb[1] = v; rgb[2] = p; break;
    case 2: rgb[0] = p; rgb[1] = v; rgb[2] = t; break;
    case 3: rgb[0] = p; rgb[1] = q; rgb[2] = v; break;
    case 4: rgb[0] = t; rgb[1] = p; rgb[2] = v; break;
    default: rgb[0] = v; rgb[1] = p; rgb[2] = q; break;
  }
}

double rgb_to_hue(double r, double g, double b) {
  const double mx = std::max({r, g, b});
  const double mn = std::min({r, g, b});
  const double d = mx - mn;
  if (d < 1e-9) return 0.0;
  double h;
  if (mx == r) {
    h = 60.0 * std::fmod((g - b) / d, 6.0);
  } else if (mx == g) {
    h = 60.0 * ((b - r) / d + 2.0);
  } else {
    h = 60.0 * ((r - g) / d + 4.0);
  }
  return std::fmod(h + 360.0, 360.0);
}

double circular_distance_deg(double a, double b) {
  double d = std::fabs(std::fmod(a - b + 540.0, 360.0) - 180.0);
  return d;
}

double gray_level_for_class(int cls, int cardinality) {
  if (cardinality == 1) return 0.5;
  return 0.12 + 0.76 * static_cast<double>(cls) / (cardinality - 1);
}

class Canvas {
 public:
  explicit Canvas(int res) : res_(res), pixels_(static_cast<std::size_t>(res) * res * 3, 0.0f) {}

  void fill(double r, double g, double b) {
    for (int y = 0; y < res_; ++y)
      for (int x = 0; x < res_; ++x) set(y, x, r, g, b);
  }

  void fill_region(const Region& reg, double r, double g, double b) {
    for (int y = std::max(0, reg.r0); y < std::min(res_, reg.r1); ++y)
      for (int x = std::max(0, reg.c0); x < std::min(res_, reg.c1); ++x) set(y, x, r, g, b);
  }

  void fill_border(int thickness, double r, double g, double b) {
    for (int y = 0; y < res_; ++y)
      for (int x = 0; x < res_; ++x) {
        if (y < thickness || y >= res_ - thickness || x < thickness || x >= res_ - thickness) {
          set(y, x, r, g, b);
        }
      }
  }

  void add_noise(RngStream& rng, double amplitude) {
    for (auto& v : pixels_) {
      v = static_cast<float>(std::clamp(v + rng.uniform(-amplitude, amplitude), 0.0, 1.0));
    }
  }

  // (3,H,W) tensor in [-1,1]
  torch::Tensor to_tensor() const {
    auto chw = torch::from_blob(const_cast<float*>(pixels_.data()), {3, res_, res_},
                                torch::kFloat32)
                   .clone();
    return chw * 2.0f - 1.0f;
  }

 private:
  void set(int y, int x, double r, double g, double b) {
    const std::size_t plane = static_cast<std::size_t>(res_) * res_;
    const std::size_t off = static_cast<std::size_t>(y) * res_ + x;
    pixels_[off] = static_cast<float>(r);
    pixels_[plane + off] = static_cast<float>(g);
    pixels_[2 * plane + off] = static_cast<float>(b);
  }

  int res_;
  std::vector<float> pixels_;  // CHW
};

// Mean RGB of a region, in [0,1] units.
void region_mean(const torch::Tensor& image, const Region& reg, double out[3]) {
  auto unit = (image + 1.0f) / 2.0f;
  auto patch = unit.index({torch::indexing::Slice(), torch::indexing::Slice(reg.r0, reg.r1),
                           torch::indexing::Slice(reg.c0, reg.c1)});
  auto mean = patch.mean({1, 2});
  out[0] = mean[0].item<double>();
  out[1] = mean[1].item<double>();
  out[2] = mean[2].item<double>();
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    hash ^= c;
    hash *= 0x100000001b3ULL;
  }
  return hash;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.push_back("");
  return cells;
}

std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace

void SyntheticSpec::validate() const {
  if (resolution < 16 || resolution % 4 != 0) {
    throw ValidationError("resolution", "must be a multiple of 4 and at least 16");
  }
  if (num_samples <= 0) throw ValidationError("num_samples", "must be positive");
  if (correlation < 0.0 || correlation > 1.0) {
    throw ValidationError("correlation", "must lie in [0,1]");
  }
  if (protected_factors.empty()) {
    throw ValidationError("protected_factors", "at least one factor is required");
  }
  if (protected_factors.size() > 3) {
    throw ValidationError("protected_factors", "at most three factors are supported");
  }
  if (domain != 0 && domain != 1) throw ValidationError("domain", "must be 0 or 1");
  std::map<std::string, int> kind_count;
  for (const auto& f : protected_factors) {
    if (f.cardinality < 2) throw ValidationError("protected_factors", f.name + ": cardinality must be >= 2");
    if (f.kind != "hue" && f.kind != "frame" && f.kind != "corner") {
      throw ValidationError("protected_factors", f.name + ": unknown kind '" + f.kind + "'");
    }
    if (++kind_count[f.kind] > 1) {
      throw ValidationError("protected_factors", "kind '" + f.kind + "' used more than once");
    }
  }
  if (target_factors.empty()) throw ValidationError("target_factors", "at least one factor is required");
  std::map<std::string, int> glyph_count;
  for (const auto& f : target_factors) {
    glyph_region(f.kind, resolution);  // validates the kind
    if (++glyph_count[f.kind] > 1) {
      throw ValidationError("target_factors", "kind '" + f.kind + "' used more than once");
    }
  }
}

void SyntheticSpec::write(const std::string& path) const {
  std::ofstream os(path);
  if (!os) throw FormatError("cannot write " + path);
  os << "resolution = " << resolution << "\n";
  os << "num_samples = " << num_samples << "\n";
  os << "correlation = " << correlation << "\n";
  os << "seed = " << seed << "\n";
  os << "domain = " << domain << "\n";
  for (const auto& f : protected_factors) {
    os << "protected_factor = " << f.name << ":" << f.cardinality << ":" << f.kind << "\n";
  }
  for (const auto& f : target_factors) {
    os << "target_factor = " << f.name << ":" << f.kind << "\n";
  }
}

SyntheticSpec SyntheticSpec::from_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw FormatError("cannot open " + path);
  SyntheticSpec spec;
  spec.protected_factors.clear();
  spec.target_factors.clear();
  std::string line;
  while (std::getline(is, line)) {
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError("bad line in " + path + ": " + line);
    auto key = trim(line.substr(0, eq));
    auto value = trim(line.substr(eq + 1));
    if (key == "resolution") {
      spec.resolution = std::stoi(value);
    } else if (key == "num_samples") {
      spec.num_samples = std::stoi(value);
    } else if (key == "correlation") {
      spec.correlation = std::stod(value);
    } else if (key == "seed") {
      spec.seed = std::stoull(value);
    } else if (key == "domain") {
      spec.domain = std::stoi(value);
    } else if (key == "protected_factor") {
      auto c1 = value.find(':');
      auto c2 = value.find(':', c1 + 1);
      if (c1 == std::string::npos || c2 == std::string::npos) {
        throw FormatError("bad protected_factor '" + value + "'");
      }
      spec.protected_factors.push_back(
          {value.substr(0, c1), std::stoi(value.substr(c1 + 1, c2 - c1 - 1)), value.substr(c2 + 1)});
    } else if (key == "target_factor") {
      auto c1 = value.find(':');
      if (c1 == std::string::npos) throw FormatError("bad target_factor '" + value + "'");
      spec.target_factors.push_back({value.substr(0, c1), value.substr(c1 + 1)});
    } else {
      throw FormatError("unknown key '" + key + "' in " + path);
    }
  }
  if (spec.protected_factors.empty()) spec.protected_factors = {{"gender", 2, "hue"}};
  if (spec.target_factors.empty()) spec.target_factors = {{"glyph", "square"}};
  spec.validate();
  return spec;
}

std::vector<DatasetRecord> generate_synthetic_dataset(const SyntheticSpec& spec) {
  spec.validate();
  const int res = spec.resolution;
  const auto k = spec.target_factors.size();

  std::vector<DatasetRecord> records;
  records.reserve(spec.num_samples);

  for (int i = 0; i < spec.num_samples; ++i) {
    RngStream rng(RngStream::mix(spec.seed, static_cast<std::uint64_t>(i)));

    std::vector<int> protected_classes;
    for (const auto& f : spec.protected_factors) {
      protected_classes.push_back(rng.uniform_int(f.cardinality));
    }

    std::vector<int> bits(k, 0);
    const int parity = protected_classes[0] % 2;
    bits[0] = rng.bernoulli((1.0 + spec.correlation) / 2.0) ? parity : 1 - parity;
    for (std::size_t b = 1; b < k; ++b) bits[b] = rng.bernoulli(0.5) ? 1 : 0;

    Canvas canvas(res);

    // Background: hue band when a hue factor exists, otherwise a fixed tint.
    double bg_hue = 210.0;
    double hue_span = 0.0;
    for (std::size_t fi = 0; fi < spec.protected_factors.size(); ++fi) {
      if (spec.protected_factors[fi].kind == "hue") {
        hue_span = 360.0 / spec.protected_factors[fi].cardinality;
        bg_hue = protected_classes[fi] * hue_span;
      }
    }
    bg_hue += spec.domain * kDomainHueOffset + rng.uniform(-8.0, 8.0);
    const double bg_sat = 0.55 + rng.uniform(-0.05, 0.05);
    const double bg_val = 0.62 + spec.domain * kDomainValueOffset + rng.uniform(-0.05, 0.05);
    double rgb[3];
    hsv_to_rgb(bg_hue, bg_sat, bg_val, rgb);
    canvas.fill(rgb[0], rgb[1], rgb[2]);

    for (std::size_t fi = 0; fi < spec.protected_factors.size(); ++fi) {
      const auto& f = spec.protected_factors[fi];
      if (f.kind == "hue") continue;
      const double level =
          std::clamp(gray_level_for_class(protected_classes[fi], f.cardinality) +
                         rng.uniform(-0.02, 0.02),
                     0.0, 1.0);
      if (f.kind == "frame") {
        canvas.fill_border(frame_thickness(res), level, level, level);
      } else {  // corner
        const int s = corner_size(res);
        canvas.fill_region({2, 2 + s, 2, 2 + s}, level, level, level);
      }
    }

    for (std::size_t b = 0; b < k; ++b) {
      if (!bits[b]) continue;
      const double v = std::clamp(kGlyphValue + rng.uniform(-0.03, 0.03), 0.0, 1.0);
      canvas.fill_region(glyph_region(spec.target_factors[b].kind, res), v, v, v);
      if (spec.target_factors[b].kind == "cross") {
        canvas.fill_region(glyph_region("cross", res, /*second_bar=*/true), v, v, v);
      }
    }

    canvas.add_noise(rng, 0.015);

    DatasetRecord rec;
    rec.image = canvas.to_tensor();
    rec.target_attrs = torch::zeros({static_cast<std::int64_t>(k)}, torch::kFloat32);
    for (std::size_t b = 0; b < k; ++b) rec.target_attrs[b] = static_cast<float>(bits[b]);
    if (!protected_classes.empty()) rec.protected_labels.gender = protected_classes[0];
    if (protected_classes.size() > 1) rec.protected_labels.age = protected_classes[1];
    if (protected_classes.size() > 2) rec.protected_labels.race = protected_classes[2];
    rec.domain_label = spec.domain;
    char buf[32];
    std::snprintf(buf, sizeof(buf), "synth_%06d.png", i);
    rec.filename = buf;
    records.push_back(std::move(rec));
  }
  return records;
}

int decode_protected_class(const torch::Tensor& image, const SyntheticSpec& spec,
                           std::size_t factor_index) {
  if (factor_index >= spec.protected_factors.size()) {
    throw ValidationError("factor_index", "out of range");
  }
  const auto& f = spec.protected_factors[factor_index];
  const int res = spec.resolution;
  double rgb[3];

  if (f.kind == "hue") {
    region_mean(image, background_probe(res), rgb);
    const double hue = rgb_to_hue(rgb[0], rgb[1], rgb[2]);
    const double span = 360.0 / f.cardinality;
    int best = 0;
    double best_d = 1e9;
    for (int c = 0; c < f.cardinality; ++c) {
      const double center = c * span + spec.domain * kDomainHueOffset;
      const double d = circular_distance_deg(hue, center);
      if (d < best_d) {
        best_d = d;
        best = c;
      }
    }
    return best;
  }

  Region reg;
  if (f.kind == "frame") {
    const int th = frame_thickness(res);
    reg = {0, th, 0, res};  // top edge is representative of the whole border
  } else {
    const int s = corner_size(res);
    reg = {2, 2 + s, 2, 2 + s};
  }
  region_mean(image, reg, rgb);
  const double value = (rgb[0] + rgb[1] + rgb[2]) / 3.0;
  int best = 0;
  double best_d = 1e9;
  for (int c = 0; c < f.cardinality; ++c) {
    const double d = std::fabs(value - gray_level_for_class(c, f.cardinality));
    if (d < best_d) {
      best_d = d;
      best = c;
    }
  }
  return best;
}

torch::Tensor decode_target_bits(const torch::Tensor& image, const SyntheticSpec& spec) {
  const int res = spec.resolution;
  double probe[3];
  region_mean(image, background_probe(res), probe);
  const double probe_v = (probe[0] + probe[1] + probe[2]) / 3.0;

  auto bits = torch::zeros({static_cast<std::int64_t>(spec.target_factors.size())}, torch::kFloat32);
  for (std::size_t b = 0; b < spec.target_factors.size(); ++b) {
    double rgb[3];
    region_mean(image, glyph_region(spec.target_factors[b].kind, res), rgb);
    const double v = (rgb[0] + rgb[1] + rgb[2]) / 3.0;
    bits[b] = (v - probe_v > kGlyphDecodeMargin) ? 1.0f : 0.0f;
  }
  return bits;
}

Split split_for_filename(const std::string& filename, const SplitRatios& ratios) {
  const double u = static_cast<double>(fnv1a(filename) >> 11) * 0x1.0p-53;
  if (u < ratios.train) return Split::Train;
  if (u < ratios.train + ratios.val) return Split::Val;
  return Split::Test;
}

std::vector<DatasetRecord> load_annotated_dataset(const std::string& root_dir,
                                                  const std::string& annotation_file,
                                                  const LoadOptions& options,
                                                  LoadReport* report) {
  LoadReport local;
  LoadReport& rep = report ? *report : local;

  std::ifstream is(annotation_file);
  if (!is) throw FormatError("cannot open annotation file " + annotation_file);

  std::string header;
  if (!std::getline(is, header) || trim(header).empty()) {
    rep.warnings.push_back("annotation file " + annotation_file + " is empty");
    return {};
  }
  auto columns = split_csv_line(trim(header));
  if (columns.size() < 2 || trim(columns[0]) != "filename") {
    throw FormatError("annotation file missing 'filename,...' header: " + annotation_file);
  }

  // Trailing gender/age/race columns are protected labels; the rest are
  // target attributes.
  std::map<std::string, std::size_t> protected_cols;
  std::size_t attr_end = columns.size();
  const std::vector<std::string> protected_names = {"gender", "age", "race"};
  while (attr_end > 1) {
    auto name = trim(columns[attr_end - 1]);
    if (std::find(protected_names.begin(), protected_names.end(), name) != protected_names.end() &&
        !protected_cols.count(name)) {
      protected_cols[name] = attr_end - 1;
      --attr_end;
    } else {
      break;
    }
  }
  for (std::size_t c = 1; c < attr_end; ++c) rep.attribute_names.push_back(trim(columns[c]));
  const std::size_t num_attrs = attr_end - 1;

  auto parse_attr = [&](const std::string& cell, std::size_t row) -> float {
    auto v = trim(cell);
    if (v == "1") return 1.0f;
    if (v == "0" || v == "-1") return 0.0f;
    throw FormatError("row " + std::to_string(row) + ": bad attribute value '" + v + "'");
  };

  std::vector<DatasetRecord> records;
  std::string line;
  std::size_t row = 1;
  while (std::getline(is, line)) {
    ++row;
    line = trim(line);
    if (line.empty()) continue;
    auto cells = split_csv_line(line);
    if (cells.size() != columns.size()) {
      throw FormatError("row " + std::to_string(row) + ": expected " +
                        std::to_string(columns.size()) + " cells, got " +
                        std::to_string(cells.size()));
    }
    const std::string filename = trim(cells[0]);
    if (options.split && split_for_filename(filename, options.ratios) != *options.split) continue;

    const auto image_path = fs::path(root_dir) / "images" / filename;
    if (!fs::exists(image_path)) {
      ++rep.skipped_missing;
      rep.warnings.push_back("missing image file: " + filename);
      continue;
    }

    DatasetRecord rec;
    rec.filename = filename;
    auto raw = read_png(image_path.string());
    if (options.resolution > 0 &&
        (raw.width != options.resolution || raw.height != options.resolution)) {
      const int crop = std::min(raw.width, raw.height);
      rec.image = preprocess(raw, crop, options.resolution, /*training=*/false);
    } else {
      rec.image = image_to_tensor(raw);
    }

    rec.target_attrs = torch::zeros({static_cast<std::int64_t>(num_attrs)}, torch::kFloat32);
    for (std::size_t c = 1; c < attr_end; ++c) {
      rec.target_attrs[c - 1] = parse_attr(cells[c], row);
    }
    auto parse_protected = [&](const std::string& name) -> std::optional<int> {
      auto it = protected_cols.find(name);
      if (it == protected_cols.end()) return std::nullopt;
      auto v = trim(cells[it->second]);
      if (v.empty()) return std::nullopt;
      try {
        const int cls = std::stoi(v);
        if (cls < 0) throw std::invalid_argument("negative");
        return cls;
      } catch (const std::exception&) {
        throw FormatError("row " + std::to_string(row) + ": bad " + name + " value '" + v + "'");
      }
    };
    rec.protected_labels.gender = parse_protected("gender");
    rec.protected_labels.age = parse_protected("age");
    rec.protected_labels.race = parse_protected("race");
    rec.domain_label = options.domain_label;
    records.push_back(std::move(rec));
    ++rep.loaded;
  }
  if (records.empty() && rep.loaded == 0 && rep.skipped_missing == 0) {
    rep.warnings.push_back("annotation file " + annotation_file + " lists no records");
  }
  return records;
}

void write_dataset(const std::string& root_dir, const std::vector<DatasetRecord>& records,
                   const std::vector<std::string>& attribute_names,
                   bool include_protected_columns) {
  const auto image_dir = fs::path(root_dir) / "images";
  fs::create_directories(image_dir);

  std::ofstream csv(fs::path(root_dir) / "annotations.csv");
  if (!csv) throw FormatError("cannot write annotations.csv under " + root_dir);
  csv << "filename";
  for (const auto& name : attribute_names) csv << "," << name;
  if (include_protected_columns) csv << ",gender,age,race";
  csv << "\n";

  int index = 0;
  for (const auto& rec : records) {
    std::string filename = rec.filename;
    if (filename.empty()) {
      char buf[32];
      std::snprintf(buf, sizeof(buf), "image_%06d.png", index);
      filename = buf;
    }
    write_png((image_dir / filename).string(), tensor_to_image(rec.image));
    csv << filename;
    for (int k = 0; k < rec.target_attrs.size(0); ++k) {
      csv << "," << static_cast<int>(rec.target_attrs[k].item<float>() > 0.5f);
    }
    if (include_protected_columns) {
      auto cell = [&](const std::optional<int>& v) {
        csv << ",";
        if (v) csv << *v;
      };
      cell(rec.protected_labels.gender);
      cell(rec.protected_labels.age);
      cell(rec.protected_labels.race);
    }
    csv << "\n";
    ++index;
  }
}

torch::Tensor stack_images(const std::vector<DatasetRecord>& records,
                           const std::vector<std::size_t>& indices) {
  std::vector<torch::Tensor> slices;
  slices.reserve(indices.size());
  for (auto i : indices) slices.push_back(records.at(i).image);
  return torch::stack(slices);
}

torch::Tensor stack_attrs(const std::vector<DatasetRecord>& records,
                          const std::vector<std::size_t>& indices) {
  std::vector<torch::Tensor> slices;
  slices.reserve(indices.size());
  for (auto i : indices) slices.push_back(records.at(i).target_attrs);
  return torch::stack(slices);
}

}  // namespace fairtranslate
