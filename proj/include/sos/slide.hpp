#pragma once

#include <atomic>
#include <cstddef>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "sos/image.hpp"

namespace sos {

struct SlideRecord {
  std::string slide_id;
  Image full_image;  // square, side divisible by the downscale factor
  std::size_t label = 0;
};

// Patch storage behind a prepared slide. Patches are addressed in row-major
// grid order. Every load() is counted so callers can verify which code paths
// touch full-resolution data.
class PatchSource {
 public:
  virtual ~PatchSource() = default;
  virtual std::size_t count() const = 0;
  virtual Image load(std::size_t index) const = 0;

  std::size_t loads() const { return loads_.load(); }
  void reset_loads() const { loads_.store(0); }

 protected:
  void note_load() const { loads_.fetch_add(1); }

 private:
  mutable std::atomic<std::size_t> loads_{0};
};

class InMemoryPatches final : public PatchSource {
 public:
  explicit InMemoryPatches(std::vector<Image> patches) : patches_(std::move(patches)) {}
  std::size_t count() const override { return patches_.size(); }
  Image load(std::size_t index) const override;
  const std::vector<Image>& patches() const { return patches_; }

 private:
  std::vector<Image> patches_;
};

// Reads <dir>/patch_<row>_<col>.pgm on demand.
class DiskPatches final : public PatchSource {
 public:
  DiskPatches(std::filesystem::path dir, std::size_t grid_side) : dir_(std::move(dir)), grid_side_(grid_side) {}
  std::size_t count() const override { return grid_side_ * grid_side_; }
  Image load(std::size_t index) const override;

  static std::string file_name(std::size_t row, std::size_t col);

 private:
  std::filesystem::path dir_;
  std::size_t grid_side_;
};

// Low-resolution image s plus its full-resolution patch grid.
struct PreparedSlide {
  std::string slide_id;
  Image lowres;
  std::shared_ptr<const PatchSource> patches;
  std::size_t label = 0;
  std::size_t grid_side = 0;

  std::size_t patch_count() const { return grid_side * grid_side; }
};

// Dimensions implied by downscaling a full_side x full_side slide.
struct PreprocessGeometry {
  std::size_t lowres_side = 0;
  std::size_t patch_side = 0;
  std::size_t grid_side = 0;
  std::size_t patch_count = 0;
};

// Throws UsageError unless factor >= 2 divides full_side.
PreprocessGeometry preprocess_geometry(std::size_t full_side, std::size_t factor);

// factor x factor block-mean downsampling.
Image downscale(const Image& image, std::size_t factor);
// Non-overlapping tiles of side tile, row-major grid order.
std::vector<Image> tile(const Image& image, std::size_t tile_side);
// Inverse of tile() for a grid_side x grid_side layout.
Image stitch(const std::vector<Image>& patches, std::size_t grid_side);

// Downscaled s and factor^2 patches of the same size as s.
PreparedSlide preprocess_slide(const SlideRecord& record, std::size_t factor);

}  // namespace sos
