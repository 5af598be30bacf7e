#include "sos/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <set>
#include <sstream>

#include "sos/errors.hpp"

namespace sos {

namespace fs = std::filesystem;

const std::array<std::string, kNumClasses>& class_names() {
  static const std::array<std::string, kNumClasses> names{"Neg", "AMA", "SMA-V", "SMA-T"};
  return names;
}

ClassCounts scale_counts(const ClassCounts& base, std::size_t total) {
  const std::size_t sum = std::accumulate(base.begin(), base.end(), std::size_t{0});
  if (sum == 0) throw UsageError("scale_counts: base counts are all zero");
  ClassCounts out{};
  std::array<double, kNumClasses> remainder{};
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < kNumClasses; ++i) {
    const double exact = static_cast<double>(base[i]) * static_cast<double>(total) / static_cast<double>(sum);
    out[i] = static_cast<std::size_t>(std::floor(exact));
    remainder[i] = exact - static_cast<double>(out[i]);
    assigned += out[i];
  }
  std::array<std::size_t, kNumClasses> order{0, 1, 2, 3};
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b]; });
  for (std::size_t k = 0; assigned < total; ++k, ++assigned) ++out[order[k % kNumClasses]];
  return out;
}

// Class ratios of the reference train and test splits.
ClassCounts default_train_counts() { return scale_counts({239, 106, 107, 27}, 120); }
ClassCounts default_test_counts() { return scale_counts({103, 45, 46, 11}, 40); }

void validate(const SynthConfig& config) {
  const auto total = [](const ClassCounts& c) { return std::accumulate(c.begin(), c.end(), std::size_t{0}); };
  if (total(config.train_counts) == 0 || total(config.test_counts) == 0) {
    throw UsageError("synthetic dataset: every split needs at least one slide");
  }
  preprocess_geometry(config.full_side, config.factor);
  if (config.noise_sigma < 0.0 || config.blob_amplitude <= 0.0 || config.stripe_amplitude <= 0.0) {
    throw UsageError("synthetic dataset: amplitudes must be positive and noise non-negative");
  }
  const double peak = config.tissue_level + std::max(config.blob_amplitude, config.stripe_amplitude);
  if (config.background < 0.0 || peak > 1.0) throw UsageError("synthetic dataset: intensity levels leave [0,1]");
}

namespace {

struct Ellipse {
  double cy, cx, ry, rx, level;
  bool contains(double y, double x) const {
    const double dy = (y - cy) / ry, dx = (x - cx) / rx;
    return dy * dy + dx * dx <= 1.0;
  }
};

}  // namespace

SlideRecord render_slide(const SynthConfig& config, std::size_t label, std::string slide_id, std::mt19937_64& rng) {
  if (label >= kNumClasses) throw UsageError("render_slide: label out of range");
  const std::size_t n = config.full_side;
  const double side = static_cast<double>(n);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };

  // Three overlapping tissue sections with slightly different staining.
  std::vector<Ellipse> sections;
  for (int i = 0; i < 3; ++i) {
    sections.push_back({uniform(0.3, 0.7) * side, uniform(0.3, 0.7) * side, uniform(0.28, 0.42) * side,
                        uniform(0.28, 0.42) * side, config.tissue_level + uniform(-0.03, 0.03)});
  }
  auto tissue_at = [&](double y, double x) {
    double level = -1.0;
    for (const auto& e : sections)
      if (e.contains(y, x)) level = std::max(level, e.level);
    return level;
  };

  Image image(n, n, config.background);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < n; ++c) {
      const double level = tissue_at(r + 0.5, c + 0.5);
      if (level >= 0.0) image.at(r, c) = level;
    }

  if (label == 1) {
    const int count = 12 + static_cast<int>(rng() % 5);
    for (int b = 0; b < count; ++b) {
      double cy = 0, cx = 0;
      for (int attempt = 0; attempt < 100; ++attempt) {
        cy = uniform(0.0, side);
        cx = uniform(0.0, side);
        if (tissue_at(cy, cx) >= 0.0) break;
      }
      const double radius = uniform(0.07, 0.1) * side;
      const auto r0 = static_cast<std::size_t>(std::max(0.0, cy - radius));
      const auto r1 = static_cast<std::size_t>(std::min(side, cy + radius + 1));
      const auto c0 = static_cast<std::size_t>(std::max(0.0, cx - radius));
      const auto c1 = static_cast<std::size_t>(std::min(side, cx + radius + 1));
      for (std::size_t r = r0; r < r1; ++r)
        for (std::size_t c = c0; c < c1; ++c) {
          const double d = std::hypot(r + 0.5 - cy, c + 0.5 - cx) / radius;
          if (d >= 1.0) continue;
          // Flat top with a soft rim.
          const double shape = d < 0.7 ? 1.0 : (1.0 - d) / 0.3;
          image.at(r, c) = std::max(image.at(r, c), config.tissue_level + config.blob_amplitude * shape);
        }
    }
  } else if (label == 2 || label == 3) {
    const std::size_t f = config.factor;
    for (std::size_t br = 0; br < n / f; ++br)
      for (std::size_t bc = 0; bc < n / f; ++bc) {
        if (tissue_at((br + 0.5) * f, (bc + 0.5) * f) < 0.0) continue;
        for (std::size_t r = br * f; r < (br + 1) * f; ++r)
          for (std::size_t c = bc * f; c < (bc + 1) * f; ++c) {
            const bool lit = label == 2 ? c % 2 == 0 : r % 2 == 0;
            if (lit) image.at(r, c) += config.stripe_amplitude;
          }
      }
  }

  std::normal_distribution<double> noise(0.0, config.noise_sigma);
  for (auto& p : image.pixels) p = std::clamp(p + (config.noise_sigma > 0.0 ? noise(rng) : 0.0), 0.0, 1.0);
  return {std::move(slide_id), std::move(image), label};
}

std::vector<ManifestEntry> DatasetManifest::split(const std::string& name) const {
  std::vector<ManifestEntry> out;
  for (const auto& e : entries)
    if (e.split == name) out.push_back(e);
  return out;
}

ClassCounts DatasetManifest::counts(const std::string& name) const {
  ClassCounts out{};
  for (const auto& e : entries)
    if (e.split == name && e.label < kNumClasses) ++out[e.label];
  return out;
}

namespace {

std::string join_counts(const ClassCounts& c) {
  std::ostringstream os;
  for (std::size_t i = 0; i < c.size(); ++i) os << (i ? "," : "") << c[i];
  return os.str();
}

std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream is(line);
  while (std::getline(is, field, '\t')) fields.push_back(field);
  if (!line.empty() && line.back() == '\t') fields.emplace_back();
  return fields;
}

std::size_t parse_size(const std::string& text, const std::string& what, const fs::path& path) {
  try {
    std::size_t used = 0;
    const auto v = std::stoull(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return static_cast<std::size_t>(v);
  } catch (const std::exception&) {
    throw DataError(DataErrorKind::Malformed, path.string() + ": bad " + what + " '" + text + "'");
  }
}

}  // namespace

DatasetManifest generate_synthetic_dataset(const SynthConfig& config, std::uint64_t seed, const fs::path& root) {
  validate(config);
  const auto geometry = preprocess_geometry(config.full_side, config.factor);

  DatasetManifest manifest;
  manifest.version = kManifestVersion;
  manifest.classes.assign(class_names().begin(), class_names().end());
  manifest.full_side = config.full_side;
  manifest.factor = config.factor;
  manifest.lowres_side = geometry.lowres_side;
  manifest.patch_side = geometry.patch_side;
  manifest.grid_side = geometry.grid_side;
  manifest.seed = seed;
  manifest.config = {{"train_counts", join_counts(config.train_counts)},
                     {"test_counts", join_counts(config.test_counts)},
                     {"background", format_double(config.background)},
                     {"tissue_level", format_double(config.tissue_level)},
                     {"noise_sigma", format_double(config.noise_sigma)},
                     {"blob_amplitude", format_double(config.blob_amplitude)},
                     {"stripe_amplitude", format_double(config.stripe_amplitude)}};

  const std::pair<std::string, ClassCounts> splits[] = {{"train", config.train_counts},
                                                        {"test", config.test_counts}};
  for (std::uint64_t s = 0; s < 2; ++s) {
    const auto& [split, counts] = splits[s];
    // Labels in class order, then shuffled so slide ids carry no label information.
    std::vector<std::size_t> labels;
    for (std::size_t label = 0; label < kNumClasses; ++label) labels.insert(labels.end(), counts[label], label);
    std::seed_seq order_seed{seed, s, std::uint64_t{0xC0FFEE}};
    std::mt19937_64 order_rng(order_seed);
    std::shuffle(labels.begin(), labels.end(), order_rng);

    for (std::size_t i = 0; i < labels.size(); ++i) {
      std::ostringstream id;
      id << split << "_" << std::setw(4) << std::setfill('0') << i;
      std::seed_seq slide_seed{seed, s, static_cast<std::uint64_t>(i) + 1};
      std::mt19937_64 rng(slide_seed);
      // Snap to the 16-bit grid first so the stored patches stitch back exactly.
      SlideRecord record = render_slide(config, labels[i], id.str(), rng);
      record.full_image = quantized(record.full_image);
      const Image lowres = quantized(downscale(record.full_image, config.factor));
      const auto patches = tile(record.full_image, geometry.patch_side);

      const fs::path rel = fs::path(split) / record.slide_id;
      fs::create_directories(root / rel);
      write_pgm16(root / rel / "lowres.pgm", lowres);
      for (std::size_t p = 0; p < patches.size(); ++p) {
        write_pgm16(root / rel / DiskPatches::file_name(p / geometry.grid_side, p % geometry.grid_side), patches[p]);
      }
      manifest.entries.push_back({split, record.slide_id, labels[i], (rel / "lowres.pgm").generic_string(),
                                  rel.generic_string()});
    }
  }
  write_manifest(manifest, root / "manifest.tsv");
  return manifest;
}

void write_manifest(const DatasetManifest& manifest, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(DataErrorKind::MissingFile, "cannot write " + path.string());
  out << "format\tsos-dataset\n";
  out << "version\t" << manifest.version << "\n";
  out << "classes\t";
  for (std::size_t i = 0; i < manifest.classes.size(); ++i) out << (i ? "," : "") << manifest.classes[i];
  out << "\n";
  out << "fullres\t" << manifest.full_side << "\n";
  out << "factor\t" << manifest.factor << "\n";
  out << "lowres\t" << manifest.lowres_side << "\n";
  out << "patch\t" << manifest.patch_side << "\n";
  out << "grid\t" << manifest.grid_side << "\n";
  out << "seed\t" << manifest.seed << "\n";
  for (const auto& [key, value] : manifest.config) out << "config\t" << key << "\t" << value << "\n";
  out << "---\n";
  out << "split\tslide_id\tlabel\tlowres_path\tpatch_dir\n";
  for (const auto& e : manifest.entries) {
    out << e.split << "\t" << e.slide_id << "\t" << e.label << "\t" << e.lowres_path << "\t" << e.patch_dir << "\n";
  }
  if (!out) throw DataError(DataErrorKind::MissingFile, "failed writing " + path.string());
}

namespace {

void check_raster(const fs::path& file, std::size_t side) {
  if (!fs::exists(file)) throw DataError(DataErrorKind::MissingFile, "missing raster " + file.string());
  const auto header = read_pgm_header(file);
  if (header.width != side || header.height != side) {
    std::ostringstream os;
    os << file.string() << ": raster is " << header.width << "x" << header.height << ", manifest declares " << side
       << "x" << side;
    throw DataError(DataErrorKind::DimensionMismatch, os.str());
  }
}

}  // namespace

DatasetManifest load_manifest(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(DataErrorKind::MissingFile, "missing manifest " + path.string());

  DatasetManifest m;
  std::string line;
  bool saw_format = false, saw_version = false, in_rows = false, saw_columns = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split_tabs(line);
    if (!in_rows) {
      if (line == "---") {
        in_rows = true;
        continue;
      }
      if (f.size() < 2) throw DataError(DataErrorKind::Malformed, path.string() + ": bad header line '" + line + "'");
      const auto& key = f[0];
      if (key == "format") {
        if (f[1] != "sos-dataset") throw DataError(DataErrorKind::Malformed, path.string() + ": not a dataset manifest");
        saw_format = true;
      } else if (key == "version") {
        m.version = static_cast<int>(parse_size(f[1], "version", path));
        if (m.version != kManifestVersion) {
          throw DataError(DataErrorKind::UnknownVersion, path.string() + ": unknown manifest version " + f[1]);
        }
        saw_version = true;
      } else if (key == "classes") {
        std::istringstream is(f[1]);
        std::string name;
        while (std::getline(is, name, ',')) m.classes.push_back(name);
      } else if (key == "fullres") {
        m.full_side = parse_size(f[1], key, path);
      } else if (key == "factor") {
        m.factor = parse_size(f[1], key, path);
      } else if (key == "lowres") {
        m.lowres_side = parse_size(f[1], key, path);
      } else if (key == "patch") {
        m.patch_side = parse_size(f[1], key, path);
      } else if (key == "grid") {
        m.grid_side = parse_size(f[1], key, path);
      } else if (key == "seed") {
        m.seed = parse_size(f[1], key, path);
      } else if (key == "config") {
        if (f.size() != 3) throw DataError(DataErrorKind::Malformed, path.string() + ": bad config line");
        m.config.emplace_back(f[1], f[2]);
      } else {
        throw DataError(DataErrorKind::Malformed, path.string() + ": unknown header key '" + key + "'");
      }
      continue;
    }
    if (!saw_columns) {
      if (line != "split\tslide_id\tlabel\tlowres_path\tpatch_dir") {
        throw DataError(DataErrorKind::Malformed, path.string() + ": unexpected column line");
      }
      saw_columns = true;
      continue;
    }
    if (f.size() != 5) throw DataError(DataErrorKind::Malformed, path.string() + ": bad row '" + line + "'");
    m.entries.push_back({f[0], f[1], parse_size(f[2], "label", path), f[3], f[4]});
  }
  if (!saw_format || !saw_version || !in_rows || !saw_columns) {
    throw DataError(DataErrorKind::Malformed, path.string() + ": incomplete manifest");
  }

  if (m.factor < 2 || m.full_side == 0 || m.full_side % m.factor != 0 || m.lowres_side * m.factor != m.full_side ||
      m.patch_side != m.lowres_side || m.grid_side * m.patch_side != m.full_side) {
    throw DataError(DataErrorKind::DimensionMismatch, path.string() + ": inconsistent geometry header");
  }

  std::set<std::string> seen;
  for (const auto& e : m.entries) {
    if (e.label >= m.classes.size()) {
      throw DataError(DataErrorKind::Malformed, path.string() + ": label out of range for " + e.slide_id);
    }
    if (!seen.insert(e.slide_id).second) {
      throw DataError(DataErrorKind::Malformed, path.string() + ": slide " + e.slide_id + " listed twice");
    }
  }

  const fs::path root = path.parent_path();
  for (const auto& e : m.entries) {
    check_raster(root / e.lowres_path, m.lowres_side);
    for (std::size_t r = 0; r < m.grid_side; ++r)
      for (std::size_t c = 0; c < m.grid_side; ++c) check_raster(root / e.patch_dir / DiskPatches::file_name(r, c), m.patch_side);
  }
  return m;
}

std::vector<PreparedSlide> load_split(const DatasetManifest& manifest, const fs::path& root, const std::string& split,
                                      bool lazy) {
  std::vector<PreparedSlide> slides;
  for (const auto& e : manifest.split(split)) {
    PreparedSlide slide;
    slide.slide_id = e.slide_id;
    slide.label = e.label;
    slide.grid_side = manifest.grid_side;
    slide.lowres = read_pgm16(root / e.lowres_path);
    auto disk = std::make_shared<DiskPatches>(root / e.patch_dir, manifest.grid_side);
    if (lazy) {
      slide.patches = disk;
    } else {
      std::vector<Image> patches;
      for (std::size_t p = 0; p < disk->count(); ++p) patches.push_back(disk->load(p));
      slide.patches = std::make_shared<InMemoryPatches>(std::move(patches));
    }
    slides.push_back(std::move(slide));
  }
  return slides;
}

}  // namespace sos
