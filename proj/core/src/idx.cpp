#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <iterator>

#include "droplab/data.hpp"

namespace droplab {

ParseError::ParseError(const std::string& what, std::uint64_t offset)
    : std::runtime_error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}

namespace {

std::uint32_t read_be32(std::span<const std::uint8_t> bytes, std::size_t offset, const char* field) {
  if (bytes.size() < offset + 4) throw ParseError(std::string("truncated IDX header: missing ") + field, bytes.size());
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

void write_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

void expect_magic(std::span<const std::uint8_t> bytes, std::uint32_t want, const char* kind) {
  const std::uint32_t got = read_be32(bytes, 0, "magic number");
  if (got != want) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "bad IDX %s magic 0x%08x (expected 0x%08x)", kind, got, want);
    throw ParseError(buf, 0);
  }
}

}  // namespace

IdxImages parse_idx_images(std::span<const std::uint8_t> bytes) {
  expect_magic(bytes, kIdxImagesMagic, "image");
  const std::uint32_t count = read_be32(bytes, 4, "image count");
  IdxImages img;
  img.rows = read_be32(bytes, 8, "row count");
  img.cols = read_be32(bytes, 12, "column count");
  const std::uint64_t need = std::uint64_t{count} * img.rows * img.cols;
  const std::size_t body = bytes.size() - 16;
  if (body < need) {
    const std::uint64_t per = std::uint64_t{img.rows} * img.cols;
    const std::uint64_t complete = per == 0 ? 0 : body / per;
    throw ParseError("truncated IDX image data: " + std::to_string(count) + " images declared, " +
                         std::to_string(complete) + " complete",
                     16 + complete * per);
  }
  img.pixels.assign(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(need));
  return img;
}

std::vector<std::uint8_t> parse_idx_labels(std::span<const std::uint8_t> bytes) {
  expect_magic(bytes, kIdxLabelsMagic, "label");
  const std::uint32_t count = read_be32(bytes, 4, "label count");
  if (bytes.size() - 8 < count)
    throw ParseError("truncated IDX label data: " + std::to_string(count) + " labels declared", bytes.size());
  return {bytes.begin() + 8, bytes.begin() + 8 + count};
}

std::vector<std::uint8_t> serialize_idx_images(const IdxImages& images) {
  std::vector<std::uint8_t> out;
  out.reserve(16 + images.pixels.size());
  write_be32(out, kIdxImagesMagic);
  write_be32(out, static_cast<std::uint32_t>(images.count()));
  write_be32(out, images.rows);
  write_be32(out, images.cols);
  out.insert(out.end(), images.pixels.begin(), images.pixels.end());
  return out;
}

std::vector<std::uint8_t> serialize_idx_labels(std::span<const std::uint8_t> labels) {
  std::vector<std::uint8_t> out;
  out.reserve(8 + labels.size());
  write_be32(out, kIdxLabelsMagic);
  write_be32(out, static_cast<std::uint32_t>(labels.size()));
  out.insert(out.end(), labels.begin(), labels.end());
  return out;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open: " + path.string());
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

MnistBinary mnist_binary_from_idx(const IdxImages& images, std::span<const std::uint8_t> labels,
                                  int digit_pos, int digit_neg, const WarningSink& warn) {
  if (digit_pos == digit_neg) throw DomainError("mnist: positive and negative digit must differ");
  for (int digit : {digit_pos, digit_neg})
    if (digit < 0 || digit > 9) throw DomainError("mnist: digits must lie in 0..9");
  if (images.count() != labels.size())
    throw DomainError("mnist: " + std::to_string(images.count()) + " images but " +
                      std::to_string(labels.size()) + " labels");

  const std::size_t dim = std::size_t{images.rows} * images.cols;
  MnistBinary out;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int label = labels[i];
    if (label != digit_pos && label != digit_neg) continue;
    Vector x(static_cast<Eigen::Index>(dim));
    const std::uint8_t* px = images.pixels.data() + i * dim;
    for (std::size_t k = 0; k < dim; ++k) x[static_cast<Eigen::Index>(k)] = px[k];
    const double n = x.norm();
    if (n == 0.0) {
      ++out.skipped_zero;
      const std::string msg = "mnist: skipping all-zero image at index " + std::to_string(i);
      if (warn) warn(msg);
      else std::cerr << "warning: " << msg << '\n';
      continue;
    }
    out.examples.push_back(Example{x / n, label == digit_pos ? 1 : -1});
  }
  return out;
}

MnistBinary load_mnist_binary(const std::filesystem::path& dir, int digit_pos, int digit_neg,
                              std::string_view split, const WarningSink& warn) {
  if (digit_pos == digit_neg) throw DomainError("mnist: positive and negative digit must differ");
  const std::string prefix(split);
  const auto image_bytes = read_file_bytes(dir / (prefix + "-images-idx3-ubyte"));
  const auto label_bytes = read_file_bytes(dir / (prefix + "-labels-idx1-ubyte"));
  return mnist_binary_from_idx(parse_idx_images(image_bytes), parse_idx_labels(label_bytes),
                               digit_pos, digit_neg, warn);
}

}  // namespace droplab
