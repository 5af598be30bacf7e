#include "sos/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

namespace sos {

std::string to_string(DataErrorKind kind) {
  switch (kind) {
    case DataErrorKind::MissingFile: return "missing file";
    case DataErrorKind::DimensionMismatch: return "dimension mismatch";
    case DataErrorKind::UnknownVersion: return "unknown version";
    case DataErrorKind::Malformed: return "malformed file";
  }
  return "data error";
}

std::uint16_t quantize16(double v) {
  const double clamped = std::clamp(v, 0.0, 1.0);
  return static_cast<std::uint16_t>(std::lround(clamped * 65535.0));
}

double dequantize16(std::uint16_t q) { return static_cast<double>(q) / 65535.0; }

Image quantized(const Image& image) {
  Image out = image;
  for (auto& p : out.pixels) p = dequantize16(quantize16(p));
  return out;
}

void write_pgm16(const std::filesystem::path& path, const Image& image) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(DataErrorKind::MissingFile, "cannot open for writing: " + path.string());
  out << "P5\n" << image.width << ' ' << image.height << "\n65535\n";
  std::vector<char> raster(image.pixels.size() * 2);
  for (std::size_t i = 0; i < image.pixels.size(); ++i) {
    const auto q = quantize16(image.pixels[i]);
    raster[2 * i] = static_cast<char>(q >> 8);
    raster[2 * i + 1] = static_cast<char>(q & 0xff);
  }
  out.write(raster.data(), static_cast<std::streamsize>(raster.size()));
  if (!out) throw DataError(DataErrorKind::MissingFile, "write failed: " + path.string());
}

namespace {

// Parses "P5 <w> <h> <maxval>" followed by a single whitespace byte.
PgmHeader parse_header(std::istream& in, const std::filesystem::path& path) {
  auto malformed = [&](const std::string& why) {
    return DataError(DataErrorKind::Malformed, why + ": " + path.string());
  };
  auto next_token = [&]() {
    std::string token;
    int ch;
    while ((ch = in.get()) != EOF) {
      if (ch == '#') {
        while ((ch = in.get()) != EOF && ch != '\n') {
        }
        continue;
      }
      if (std::isspace(ch)) {
        if (!token.empty()) break;
        continue;
      }
      token.push_back(static_cast<char>(ch));
    }
    return token;
  };
  if (next_token() != "P5") throw malformed("not a binary PGM");
  PgmHeader header;
  try {
    header.width = std::stoul(next_token());
    header.height = std::stoul(next_token());
    header.maxval = std::stoul(next_token());
  } catch (const std::exception&) {
    throw malformed("bad PGM header");
  }
  if (header.width == 0 || header.height == 0) throw malformed("empty PGM raster");
  if (header.maxval != 65535) throw malformed("expected 16-bit PGM (maxval 65535)");
  return header;
}

}  // namespace

PgmHeader read_pgm_header(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(DataErrorKind::MissingFile, path.string());
  auto header = parse_header(in, path);
  const auto offset = static_cast<std::uintmax_t>(in.tellg());
  const auto expected = offset + header.width * header.height * 2;
  if (std::filesystem::file_size(path) < expected) {
    throw DataError(DataErrorKind::Malformed, "truncated raster: " + path.string());
  }
  return header;
}

Image read_pgm16(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(DataErrorKind::MissingFile, path.string());
  auto header = parse_header(in, path);
  Image image(header.height, header.width);
  std::vector<unsigned char> raster(image.pixels.size() * 2);
  in.read(reinterpret_cast<char*>(raster.data()), static_cast<std::streamsize>(raster.size()));
  if (in.gcount() != static_cast<std::streamsize>(raster.size())) {
    throw DataError(DataErrorKind::Malformed, "truncated raster: " + path.string());
  }
  for (std::size_t i = 0; i < image.pixels.size(); ++i) {
    const auto q = static_cast<std::uint16_t>((raster[2 * i] << 8) | raster[2 * i + 1]);
    image.pixels[i] = dequantize16(q);
  }
  return image;
}

}  // namespace sos
