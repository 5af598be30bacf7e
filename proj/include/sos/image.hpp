#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace sos {

enum class DataErrorKind { MissingFile, DimensionMismatch, UnknownVersion, Malformed };

std::string to_string(DataErrorKind kind);

// Failure while reading, writing or validating dataset files. Messages
// carry the offending path where there is one.
class DataError : public std::runtime_error {
 public:
  DataError(DataErrorKind kind, const std::string& message)
      : std::runtime_error(to_string(kind) + ": " + message), kind_(kind) {}
  DataErrorKind kind() const { return kind_; }

 private:
  DataErrorKind kind_;
};

// Single-channel row-major image with values nominally in [0,1].
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> pixels;

  Image() = default;
  Image(std::size_t h, std::size_t w, double fill = 0.0) : height(h), width(w), pixels(h * w, fill) {}

  double& at(std::size_t row, std::size_t col) { return pixels[row * width + col]; }
  double at(std::size_t row, std::size_t col) const { return pixels[row * width + col]; }

  bool operator==(const Image&) const = default;
};

// 16-bit sample value for v in [0,1] (clamped, rounded to nearest).
std::uint16_t quantize16(double v);
double dequantize16(std::uint16_t q);
// Snaps every pixel to the 16-bit grid.
Image quantized(const Image& image);

// Binary P5 PGM, maxval 65535, big-endian samples.
void write_pgm16(const std::filesystem::path& path, const Image& image);
Image read_pgm16(const std::filesystem::path& path);

struct PgmHeader {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t maxval = 0;
};

// Reads and validates only the header; checks the file is long enough for
// the declared raster.
PgmHeader read_pgm_header(const std::filesystem::path& path);

}  // namespace sos
