#pragma once

// 8-bit grayscale image files: binary PGM (P5) natively, PNG through libpng.

#include <png.h>

#include <cctype>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "saltseg/error.hpp"

namespace saltseg {

struct GrayImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;  // row-major

  std::uint8_t at(std::size_t y, std::size_t x) const { return pixels[y * width + x]; }

  friend bool operator==(const GrayImage&, const GrayImage&) = default;
};

enum class ImageFormat { pgm, png };

namespace detail {

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Header token reader for PNM that skips whitespace and '#' comments.
class PnmHeader {
 public:
  explicit PnmHeader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

  std::string token() {
    skip();
    std::string out;
    while (pos_ < bytes_.size() && !std::isspace(bytes_[pos_])) out += static_cast<char>(bytes_[pos_++]);
    return out;
  }

  std::size_t number(const std::string& file) {
    const std::string t = token();
    if (t.empty() || t.find_first_not_of("0123456789") != std::string::npos)
      throw FormatError("malformed PGM header in " + file);
    return std::stoul(t);
  }

  // Exactly one whitespace byte separates the header from the raster.
  std::size_t raster_start(const std::string& file) {
    if (pos_ >= bytes_.size() || !std::isspace(bytes_[pos_]))
      throw FormatError("malformed PGM header in " + file);
    return pos_ + 1;
  }

 private:
  void skip() {
    while (pos_ < bytes_.size()) {
      if (std::isspace(bytes_[pos_])) {
        ++pos_;
      } else if (bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else {
        break;
      }
    }
  }

  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline GrayImage decode_pgm(const std::vector<std::uint8_t>& bytes, const std::string& name) {
  detail::PnmHeader header(bytes);
  if (header.token() != "P5") throw FormatError("not a binary PGM (P5): " + name);
  GrayImage img;
  img.width = header.number(name);
  img.height = header.number(name);
  const std::size_t maxval = header.number(name);
  if (img.width == 0 || img.height == 0) throw FormatError("empty PGM raster: " + name);
  if (maxval != 255) throw FormatError("unsupported PGM maxval " + std::to_string(maxval) + ": " + name);
  const std::size_t start = header.raster_start(name);
  const std::size_t count = img.width * img.height;
  if (bytes.size() < start + count) throw FormatError("truncated PGM raster: " + name);
  img.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(start),
                    bytes.begin() + static_cast<std::ptrdiff_t>(start + count));
  return img;
}

inline std::vector<std::uint8_t> encode_pgm(const GrayImage& img) {
  const std::string header =
      "P5\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), img.pixels.begin(), img.pixels.end());
  return out;
}

/// Decodes any PNG libpng understands, converted to 8-bit gray.
inline GrayImage decode_png(const std::vector<std::uint8_t>& bytes, const std::string& name) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size()))
    throw FormatError("cannot decode PNG " + name + ": " + image.message);
  image.format = PNG_FORMAT_GRAY;
  GrayImage img;
  img.width = image.width;
  img.height = image.height;
  img.pixels.resize(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, img.pixels.data(), 0, nullptr)) {
    const std::string msg = image.message;
    png_image_free(&image);
    throw FormatError("cannot decode PNG " + name + ": " + msg);
  }
  return img;
}

inline std::vector<std::uint8_t> encode_png(const GrayImage& img) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width);
  image.height = static_cast<png_uint_32>(img.height);
  image.format = PNG_FORMAT_GRAY;
  png_alloc_size_t size = 0;
  if (!png_image_write_get_memory_size(image, size, 0, img.pixels.data(), 0, nullptr))
    throw FormatError(std::string("cannot encode PNG: ") + image.message);
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&image, out.data(), &size, 0, img.pixels.data(), 0, nullptr))
    throw FormatError(std::string("cannot encode PNG: ") + image.message);
  out.resize(size);
  return out;
}

inline ImageFormat format_for_path(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  for (auto& ch : ext) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  if (ext == ".png") return ImageFormat::png;
  if (ext == ".pgm") return ImageFormat::pgm;
  throw FormatError("unsupported image extension: " + path.string());
}

/// Reads a PGM or PNG file, chosen by its signature bytes.
inline GrayImage read_image(const std::filesystem::path& path) {
  const auto bytes = detail::read_file_bytes(path);
  static constexpr std::uint8_t png_sig[] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  if (bytes.size() >= 8 && std::memcmp(bytes.data(), png_sig, 8) == 0)
    return decode_png(bytes, path.string());
  if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] == '5') return decode_pgm(bytes, path.string());
  throw FormatError("unrecognised image format: " + path.string());
}

inline void write_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failed: " + path.string());
}

/// Writes PGM or PNG according to the file extension.
inline void write_image(const std::filesystem::path& path, const GrayImage& img) {
  write_bytes(path, format_for_path(path) == ImageFormat::png ? encode_png(img) : encode_pgm(img));
}

}  // namespace saltseg
