#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "sos/image.hpp"
#include "sos/slide.hpp"

namespace sos {

inline constexpr std::size_t kNumClasses = 4;
using ClassCounts = std::array<std::size_t, kNumClasses>;

// Neg, AMA-like, SMA-V-like, SMA-T-like.
const std::array<std::string, kNumClasses>& class_names();

// Scales base to the requested total by the largest-remainder method
// (ties go to the lower class index).
ClassCounts scale_counts(const ClassCounts& base, std::size_t total);

ClassCounts default_train_counts();  // 120 slides
ClassCounts default_test_counts();   // 40 slides

struct SynthConfig {
  ClassCounts train_counts = default_train_counts();
  ClassCounts test_counts = default_test_counts();
  std::size_t full_side = 256;
  std::size_t factor = 8;
  double background = 0.05;
  double tissue_level = 0.25;
  double noise_sigma = 0.02;
  double blob_amplitude = 0.65;
  double stripe_amplitude = 0.2;
};

// Throws UsageError for an empty split, a bad factor or out-of-range levels.
void validate(const SynthConfig& config);

// One full-resolution slide. Stripe regions are aligned to factor x factor
// blocks so both stripe orientations have identical block means.
SlideRecord render_slide(const SynthConfig& config, std::size_t label, std::string slide_id, std::mt19937_64& rng);

struct ManifestEntry {
  std::string split;
  std::string slide_id;
  std::size_t label = 0;
  std::string lowres_path;  // relative to the manifest directory
  std::string patch_dir;    // relative to the manifest directory

  bool operator==(const ManifestEntry&) const = default;
};

struct DatasetManifest {
  int version = 1;
  std::vector<std::string> classes;
  std::size_t full_side = 0;
  std::size_t factor = 0;
  std::size_t lowres_side = 0;
  std::size_t patch_side = 0;
  std::size_t grid_side = 0;
  std::uint64_t seed = 0;
  std::vector<std::pair<std::string, std::string>> config;  // free-form echo
  std::vector<ManifestEntry> entries;

  std::vector<ManifestEntry> split(const std::string& name) const;
  ClassCounts counts(const std::string& split) const;

  bool operator==(const DatasetManifest&) const = default;
};

inline constexpr int kManifestVersion = 1;

// Renders every slide and writes <root>/manifest.tsv,
// <root>/<split>/<slide_id>/lowres.pgm and patch_<row>_<col>.pgm.
// Output is byte-identical for a given config and seed.
DatasetManifest generate_synthetic_dataset(const SynthConfig& config, std::uint64_t seed,
                                           const std::filesystem::path& root);

// Manifest layout (UTF-8, tab separated):
//   header block of "key<TAB>value" lines: format, version, classes,
//   fullres, factor, lowres, patch, grid, seed, then "config<TAB>k<TAB>v"
//   lines; a line "---"; a column line
//   split slide_id label lowres_path patch_dir; one row per slide.
void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);

// Parses and validates: files exist, rasters match the declared
// dimensions, the version is known, splits are disjoint. Throws DataError.
DatasetManifest load_manifest(const std::filesystem::path& path);

// Reads one split. Lazy slides read patches from disk on demand.
std::vector<PreparedSlide> load_split(const DatasetManifest& manifest, const std::filesystem::path& root,
                                      const std::string& split, bool lazy);

}  // namespace sos
