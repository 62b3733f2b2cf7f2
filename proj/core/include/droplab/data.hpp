#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "droplab/numerics.hpp"

namespace droplab {

/// One labelled sample: x on the unit sphere, y in {+1, -1}.
struct Example {
  Vector x;
  int y = 1;
};

enum class DataKind { halfspace, mnist_binary };

/// Feature map psi: R^d -> R^d with ||psi(z)|| <= 1.
using FeatureMap = std::function<Vector(const Vector&)>;

/// Describes a data distribution together with the margin certificate.
///
/// For both kinds the certifying feature map is the constant map z -> u_star.
/// For halfspace data u_star is the true separating direction and the margin is
/// certified analytically; for MNIST it comes from a linear fit and the margin
/// is only estimated.
struct MarginSpec {
  DataKind kind = DataKind::halfspace;
  Vector u_star;
  double gamma0 = 0.0;
  double q = 1.0;

  FeatureMap psi() const;
  /// Throws DomainError if the halfspace invariants fail.
  void validate() const;
};

MarginSpec make_halfspace_spec(std::size_t d, double gamma0, double q);

/// Rejection sampler: x uniform on the sphere conditioned on |u.x| >= gamma0,
/// y = sign(u.x).
std::vector<Example> sample_halfspace(RngStream& rng, const MarginSpec& spec, std::size_t n);
Example sample_halfspace_one(RngStream& rng, const MarginSpec& spec);

/// Probability that a uniform point passes the halfspace rejection test.
double halfspace_acceptance_probability(std::size_t d, double gamma0);

/// gamma = q * gamma0 / 2 for the halfspace construction.
double certified_margin(const MarginSpec& spec);

struct MarginEstimate {
  double value = 0.0;           ///< min over examples of the per-example mean
  double standard_error = 0.0;  ///< standard error at the minimizing example
  std::size_t argmin = 0;
};

/// Monte Carlo estimate of min_i E_{z,b}[y_i <psi(z), b x_i 1{z.x_i >= 0}>].
MarginEstimate estimate_margin(RngStream& rng, const MarginSpec& spec,
                               std::span<const Example> examples, std::size_t n_mc);
MarginEstimate estimate_margin(RngStream& rng, const FeatureMap& psi, double q,
                               std::span<const Example> examples, std::size_t n_mc);

/// Unit direction of the mean of y*x; the linear fit behind the heuristic
/// MNIST margin.
Vector fit_mean_direction(std::span<const Example> examples);

// ---------------------------------------------------------------------------
// Example streams

/// One-pass source of training examples.
class ExampleSource {
 public:
  virtual ~ExampleSource() = default;
  virtual std::optional<Example> next() = 0;
};

/// Fresh i.i.d. samples from the halfspace distribution.
class HalfspaceSource final : public ExampleSource {
 public:
  HalfspaceSource(MarginSpec spec, RngStream rng);
  std::optional<Example> next() override;

 private:
  MarginSpec spec_;
  RngStream rng_;
};

/// A finite dataset read once, optionally in shuffled order. Not i.i.d.
class DatasetSource final : public ExampleSource {
 public:
  explicit DatasetSource(std::vector<Example> examples);
  DatasetSource(std::vector<Example> examples, RngStream shuffle_rng);
  std::optional<Example> next() override;

 private:
  std::vector<Example> examples_;
  std::size_t pos_ = 0;
};

// ---------------------------------------------------------------------------
// MNIST IDX files

/// Malformed binary input; carries the byte offset where parsing failed.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::uint64_t offset);
  std::uint64_t offset() const { return offset_; }

 private:
  std::uint64_t offset_;
};

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

struct IdxImages {
  std::uint32_t rows = 0;
  std::uint32_t cols = 0;
  std::vector<std::uint8_t> pixels;  ///< count * rows * cols, row-major
  std::size_t count() const { return rows * cols == 0 ? 0 : pixels.size() / (rows * cols); }
};

IdxImages parse_idx_images(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> parse_idx_labels(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> serialize_idx_images(const IdxImages& images);
std::vector<std::uint8_t> serialize_idx_labels(std::span<const std::uint8_t> labels);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);

using WarningSink = std::function<void(std::string_view)>;

struct MnistBinary {
  std::vector<Example> examples;
  std::size_t skipped_zero = 0;
};

/// Builds a +1/-1 dataset from parsed IDX records: filters the two digits,
/// flattens, and scales each image to unit l2 norm. All-zero images are
/// skipped and reported through `warn`.
MnistBinary mnist_binary_from_idx(const IdxImages& images, std::span<const std::uint8_t> labels,
                                  int digit_pos, int digit_neg, const WarningSink& warn = {});

/// Loads `<dir>/<split>-images-idx3-ubyte` and `<dir>/<split>-labels-idx1-ubyte`.
MnistBinary load_mnist_binary(const std::filesystem::path& dir, int digit_pos, int digit_neg,
                              std::string_view split = "train", const WarningSink& warn = {});

// ---------------------------------------------------------------------------
// Text export: one example per line, "y x_1 ... x_d", 17 significant digits.

void write_examples(std::ostream& out, std::span<const Example> examples);
std::vector<Example> read_examples(std::istream& in);
void save_examples(const std::filesystem::path& path, std::span<const Example> examples);
std::vector<Example> load_examples(const std::filesystem::path& path);

}  // namespace droplab
