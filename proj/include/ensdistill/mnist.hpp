#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "ensdistill/data.hpp"
#include "ensdistill/error.hpp"

namespace ensdistill {

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;  // 2051
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;  // 2049

namespace detail {

inline std::vector<unsigned char> read_all_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingArtifactError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::uint32_t read_be32(const std::vector<unsigned char>& bytes, std::size_t offset, const std::string& what) {
  if (bytes.size() < offset + 4) throw TruncatedError(what + ": header truncated");
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

inline void append_be32(std::vector<unsigned char>& out, std::uint32_t v) {
  out.push_back(static_cast<unsigned char>(v >> 24));
  out.push_back(static_cast<unsigned char>(v >> 16));
  out.push_back(static_cast<unsigned char>(v >> 8));
  out.push_back(static_cast<unsigned char>(v));
}

inline void write_all_bytes(const std::filesystem::path& path, const std::vector<unsigned char>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write failed for " + path.string());
}

}  // namespace detail

/// Loads an IDX image/label pair (big-endian headers, one unsigned byte per
/// pixel). Pixels are scaled to [0, 1]; rows are flattened row-major images.
inline Dataset load_mnist_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path) {
  const auto images = detail::read_all_bytes(images_path);
  const auto labels = detail::read_all_bytes(labels_path);

  if (detail::read_be32(images, 0, "images") != kIdxImageMagic) {
    throw BadMagicError(images_path.string() + ": not an IDX image file (bad magic number)");
  }
  if (detail::read_be32(labels, 0, "labels") != kIdxLabelMagic) {
    throw BadMagicError(labels_path.string() + ": not an IDX label file (bad magic number)");
  }
  const std::size_t n_images = detail::read_be32(images, 4, "images");
  const std::size_t rows = detail::read_be32(images, 8, "images");
  const std::size_t cols = detail::read_be32(images, 12, "images");
  const std::size_t n_labels = detail::read_be32(labels, 4, "labels");

  if (n_images != n_labels) {
    throw CountMismatchError("image count " + std::to_string(n_images) + " != label count " + std::to_string(n_labels));
  }
  const std::size_t pixels = rows * cols;
  if (images.size() < 16 + n_images * pixels) throw TruncatedError(images_path.string() + ": pixel data truncated");
  if (labels.size() < 8 + n_labels) throw TruncatedError(labels_path.string() + ": label data truncated");
  if (rows != cols) throw FormatError("only square images are supported");

  std::size_t max_label = 0;
  for (std::size_t i = 0; i < n_labels; ++i) max_label = std::max<std::size_t>(max_label, labels[8 + i]);

  Dataset ds{Matrix(n_images, pixels), std::vector<std::size_t>(n_labels), std::max<std::size_t>(10, max_label + 1),
             SplitTag::train, rows};
  for (std::size_t i = 0; i < n_images; ++i) {
    auto row = ds.inputs.row(i);
    for (std::size_t p = 0; p < pixels; ++p) row[p] = static_cast<double>(images[16 + i * pixels + p]) / 255.0;
    (*ds.labels)[i] = labels[8 + i];
  }
  return ds;
}

/// Writes raw bytes in IDX layout. `pixels` holds n * side * side bytes.
inline void write_idx_images(const std::filesystem::path& path, std::size_t n, std::size_t side,
                             const std::vector<unsigned char>& pixels) {
  if (pixels.size() != n * side * side) throw ShapeError("pixel buffer size does not match n * side^2");
  std::vector<unsigned char> bytes;
  detail::append_be32(bytes, kIdxImageMagic);
  detail::append_be32(bytes, static_cast<std::uint32_t>(n));
  detail::append_be32(bytes, static_cast<std::uint32_t>(side));
  detail::append_be32(bytes, static_cast<std::uint32_t>(side));
  bytes.insert(bytes.end(), pixels.begin(), pixels.end());
  detail::write_all_bytes(path, bytes);
}

inline void write_idx_labels(const std::filesystem::path& path, const std::vector<unsigned char>& labels) {
  std::vector<unsigned char> bytes;
  detail::append_be32(bytes, kIdxLabelMagic);
  detail::append_be32(bytes, static_cast<std::uint32_t>(labels.size()));
  bytes.insert(bytes.end(), labels.begin(), labels.end());
  detail::write_all_bytes(path, bytes);
}

}  // namespace ensdistill
