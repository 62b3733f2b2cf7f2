#include "droplab/model.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>

#include "droplab/data.hpp"

namespace droplab {

namespace {

void check_shapes(const NetworkParams& params, const Vector& x, const char* op) {
  if (static_cast<std::size_t>(x.size()) != params.dim())
    throw DomainError(std::string(op) + ": input has dimension " + std::to_string(x.size()) +
                      ", network expects " + std::to_string(params.dim()));
  if (static_cast<std::size_t>(params.a.size()) != params.width())
    throw DomainError(std::string(op) + ": sign vector length does not match width");
}

void check_mask(const NetworkParams& params, const DropoutMask& mask, const char* op) {
  if (mask.size() != params.width())
    throw DomainError(std::string(op) + ": mask length " + std::to_string(mask.size()) +
                      " does not match width " + std::to_string(params.width()));
}

}  // namespace

std::size_t DropoutMask::active() const {
  return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), std::uint8_t{1}));
}

DropoutMask DropoutMask::all_ones(std::size_t m) { return DropoutMask{std::vector<std::uint8_t>(m, 1), 1.0}; }

InitResult init_network(RngStream& rng, std::size_t m, std::size_t d) {
  if (m == 0 || d == 0) throw DomainError("init_network: m and d must be >= 1");
  InitResult out;
  out.params.W.resize(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(d));
  out.params.a.resize(static_cast<Eigen::Index>(m));
  for (Eigen::Index r = 0; r < out.params.W.rows(); ++r)
    for (Eigen::Index j = 0; j < out.params.W.cols(); ++j) out.params.W(r, j) = rng.normal();
  for (Eigen::Index r = 0; r < out.params.a.size(); ++r) out.params.a[r] = rng.sign();
  out.max_row_norm = max_row_norm(out.params.W);
  return out;
}

DropoutMask sample_mask(RngStream& rng, std::size_t m, double q) {
  if (!(q >= 0.0 && q <= 1.0)) throw DomainError("sample_mask: q must lie in [0, 1]");
  DropoutMask mask{std::vector<std::uint8_t>(m), q};
  for (auto& b : mask.bits) b = rng.bernoulli(q) ? 1 : 0;
  return mask;
}

double forward_from_preact(const Vector& a, const DropoutMask* mask, const Vector& preact) {
  double acc = 0.0;
  for (Eigen::Index r = 0; r < preact.size(); ++r) {
    if (mask && !mask->bits[static_cast<std::size_t>(r)]) continue;
    if (preact[r] > 0.0) acc += a[r] * preact[r];
  }
  return acc / std::sqrt(static_cast<double>(preact.size()));
}

double forward_full(const NetworkParams& params, const Vector& x) {
  check_shapes(params, x, "forward_full");
  return forward_from_preact(params.a, nullptr, params.W * x);
}

double forward_sub(const NetworkParams& params, const DropoutMask& mask, const Vector& x) {
  check_shapes(params, x, "forward_sub");
  check_mask(params, mask, "forward_sub");
  return forward_from_preact(params.a, &mask, params.W * x);
}

Matrix grad_sub(const NetworkParams& params, const DropoutMask& mask, const Vector& x) {
  check_shapes(params, x, "grad_sub");
  check_mask(params, mask, "grad_sub");
  const Vector pre = params.W * x;
  const double scale = 1.0 / std::sqrt(static_cast<double>(params.width()));
  Matrix G = Matrix::Zero(params.W.rows(), params.W.cols());
  for (Eigen::Index r = 0; r < G.rows(); ++r) {
    if (!mask.bits[static_cast<std::size_t>(r)] || pre[r] < 0.0) continue;
    G.row(r) = (scale * params.a[r]) * x.transpose();
  }
  return G;
}

double max_row_norm(const Matrix& W) {
  double best = 0.0;
  for (Eigen::Index r = 0; r < W.rows(); ++r) best = std::max(best, W.row(r).squaredNorm());
  return std::sqrt(best);
}

// ---------------------------------------------------------------------------

namespace {

template <class T>
void put_le(std::ostream& out, T value) {
  const auto bits = std::bit_cast<std::array<unsigned char, sizeof(T)>>(value);
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(bits.data()), sizeof(T));
  } else {
    for (std::size_t i = sizeof(T); i-- > 0;) out.put(static_cast<char>(bits[i]));
  }
}

template <class T>
T get_le(std::istream& in, std::uint64_t& offset) {
  std::array<unsigned char, sizeof(T)> bits{};
  if (!in.read(reinterpret_cast<char*>(bits.data()), sizeof(T)))
    throw ParseError("truncated checkpoint", offset + static_cast<std::uint64_t>(in.gcount()));
  if constexpr (std::endian::native != std::endian::little) std::reverse(bits.begin(), bits.end());
  offset += sizeof(T);
  return std::bit_cast<T>(bits);
}

}  // namespace

void write_checkpoint(std::ostream& out, const Checkpoint& ckpt) {
  const auto& p = ckpt.params;
  put_le<std::uint64_t>(out, p.width());
  put_le<std::uint64_t>(out, p.dim());
  put_le<double>(out, ckpt.q);
  put_le<std::uint64_t>(out, ckpt.iteration);
  for (Eigen::Index r = 0; r < p.a.size(); ++r) out.put(static_cast<char>(p.a[r] > 0 ? 1 : -1));
  for (Eigen::Index r = 0; r < p.W.rows(); ++r)
    for (Eigen::Index j = 0; j < p.W.cols(); ++j) put_le<double>(out, p.W(r, j));
}

Checkpoint read_checkpoint(std::istream& in) {
  std::uint64_t offset = 0;
  Checkpoint ckpt;
  const auto m = get_le<std::uint64_t>(in, offset);
  const auto d = get_le<std::uint64_t>(in, offset);
  ckpt.q = get_le<double>(in, offset);
  ckpt.iteration = get_le<std::uint64_t>(in, offset);
  if (m == 0 || d == 0 || m > (1ull << 32) || d > (1ull << 32))
    throw ParseError("implausible checkpoint shape " + std::to_string(m) + "x" + std::to_string(d), 0);
  ckpt.params.a.resize(static_cast<Eigen::Index>(m));
  for (std::uint64_t r = 0; r < m; ++r) {
    const int c = in.get();
    if (c == std::char_traits<char>::eof()) throw ParseError("truncated checkpoint signs", offset);
    const auto s = static_cast<signed char>(c);
    if (s != 1 && s != -1) throw ParseError("checkpoint sign must be +1 or -1", offset);
    ckpt.params.a[static_cast<Eigen::Index>(r)] = s;
    ++offset;
  }
  ckpt.params.W.resize(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(d));
  for (Eigen::Index r = 0; r < ckpt.params.W.rows(); ++r)
    for (Eigen::Index j = 0; j < ckpt.params.W.cols(); ++j) ckpt.params.W(r, j) = get_le<double>(in, offset);
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for writing: " + path.string());
  write_checkpoint(f, ckpt);
  if (!f) throw std::runtime_error("write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open: " + path.string());
  return read_checkpoint(f);
}

}  // namespace droplab
