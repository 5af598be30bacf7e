#include "sos/slide.hpp"

#include <sstream>

#include "sos/errors.hpp"

namespace sos {

Image InMemoryPatches::load(std::size_t index) const {
  if (index >= patches_.size()) throw UsageError("patch index out of range");
  note_load();
  return patches_[index];
}

std::string DiskPatches::file_name(std::size_t row, std::size_t col) {
  return "patch_" + std::to_string(row) + "_" + std::to_string(col) + ".pgm";
}

Image DiskPatches::load(std::size_t index) const {
  if (index >= count()) throw UsageError("patch index out of range");
  note_load();
  return read_pgm16(dir_ / file_name(index / grid_side_, index % grid_side_));
}

PreprocessGeometry preprocess_geometry(std::size_t full_side, std::size_t factor) {
  if (factor < 2 || full_side == 0 || full_side % factor != 0) {
    std::ostringstream os;
    os << "downscale factor " << factor << " must be >= 2 and divide the slide side " << full_side;
    throw UsageError(os.str());
  }
  PreprocessGeometry g;
  g.lowres_side = full_side / factor;
  g.patch_side = g.lowres_side;
  g.grid_side = full_side / g.patch_side;
  g.patch_count = g.grid_side * g.grid_side;
  return g;
}

Image downscale(const Image& image, std::size_t factor) {
  if (factor == 0 || image.height % factor != 0 || image.width % factor != 0) {
    throw UsageError("downscale: factor does not divide image dimensions");
  }
  Image out(image.height / factor, image.width / factor);
  const double inv = 1.0 / static_cast<double>(factor * factor);
  for (std::size_t r = 0; r < out.height; ++r)
    for (std::size_t c = 0; c < out.width; ++c) {
      double acc = 0.0;
      for (std::size_t dr = 0; dr < factor; ++dr)
        for (std::size_t dc = 0; dc < factor; ++dc) acc += image.at(r * factor + dr, c * factor + dc);
      out.at(r, c) = acc * inv;
    }
  return out;
}

std::vector<Image> tile(const Image& image, std::size_t tile_side) {
  if (tile_side == 0 || image.height % tile_side != 0 || image.width % tile_side != 0) {
    throw UsageError("tile: tile side does not divide image dimensions");
  }
  std::vector<Image> tiles;
  for (std::size_t tr = 0; tr < image.height / tile_side; ++tr)
    for (std::size_t tc = 0; tc < image.width / tile_side; ++tc) {
      Image t(tile_side, tile_side);
      for (std::size_t r = 0; r < tile_side; ++r)
        for (std::size_t c = 0; c < tile_side; ++c) t.at(r, c) = image.at(tr * tile_side + r, tc * tile_side + c);
      tiles.push_back(std::move(t));
    }
  return tiles;
}

Image stitch(const std::vector<Image>& patches, std::size_t grid_side) {
  if (grid_side == 0 || patches.size() != grid_side * grid_side) {
    throw UsageError("stitch: patch count does not match the grid");
  }
  const std::size_t h = patches[0].height, w = patches[0].width;
  Image out(h * grid_side, w * grid_side);
  for (std::size_t i = 0; i < patches.size(); ++i) {
    if (patches[i].height != h || patches[i].width != w) throw UsageError("stitch: ragged patches");
    const std::size_t tr = i / grid_side, tc = i % grid_side;
    for (std::size_t r = 0; r < h; ++r)
      for (std::size_t c = 0; c < w; ++c) out.at(tr * h + r, tc * w + c) = patches[i].at(r, c);
  }
  return out;
}

PreparedSlide preprocess_slide(const SlideRecord& record, std::size_t factor) {
  const Image& full = record.full_image;
  if (full.height != full.width) throw UsageError("preprocess_slide: slide must be square");
  auto geometry = preprocess_geometry(full.height, factor);
  PreparedSlide slide;
  slide.slide_id = record.slide_id;
  slide.label = record.label;
  slide.lowres = downscale(full, factor);
  slide.grid_side = geometry.grid_side;
  slide.patches = std::make_shared<InMemoryPatches>(tile(full, geometry.patch_side));
  return slide;
}

}  // namespace sos
