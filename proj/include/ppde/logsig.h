#ifndef PPDE_LOGSIG_H
#define PPDE_LOGSIG_H

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace ppde {

// A discretely observed path, treated as piecewise linear between samples.
// values is row-major: sample k occupies values[k*dim .. (k+1)*dim).
class PiecewisePath {
 public:
  PiecewisePath() = default;
  PiecewisePath(std::vector<double> times, std::vector<double> values, int dim);

  int dim() const { return dim_; }
  std::size_t size() const { return times_.size(); }
  const std::vector<double>& times() const { return times_; }
  const std::vector<double>& values() const { return values_; }

  std::span<const double> point(std::size_t k) const {
    return {values_.data() + k * static_cast<std::size_t>(dim_),
            static_cast<std::size_t>(dim_)};
  }
  double time(std::size_t k) const { return times_[k]; }
  double start_time() const { return times_.front(); }
  double end_time() const { return times_.back(); }

  // Samples [first, last] inclusive, as a new path.
  PiecewisePath slice(std::size_t first, std::size_t last) const;

 private:
  std::vector<double> times_;
  std::vector<double> values_;
  int dim_ = 0;
};

// Element of the depth-N truncated tensor algebra over R^d. Level k holds
// d^k coefficients in lexicographic multi-index order.
class TruncatedTensor {
 public:
  TruncatedTensor() = default;
  TruncatedTensor(int dim, int depth);  // zero tensor

  static TruncatedTensor identity(int dim, int depth);

  int dim() const { return dim_; }
  int depth() const { return depth_; }

  std::vector<double>& level(int k) { return levels_[static_cast<std::size_t>(k)]; }
  const std::vector<double>& level(int k) const {
    return levels_[static_cast<std::size_t>(k)];
  }

  // All coefficients, level 0 first.
  std::vector<double> flatten() const;
  double norm() const;

  TruncatedTensor& operator+=(const TruncatedTensor& other);
  TruncatedTensor& operator-=(const TruncatedTensor& other);
  TruncatedTensor& operator*=(double s);

 private:
  int dim_ = 0;
  int depth_ = 0;
  std::vector<std::vector<double>> levels_;
};

TruncatedTensor operator+(TruncatedTensor a, const TruncatedTensor& b);
TruncatedTensor operator-(TruncatedTensor a, const TruncatedTensor& b);
TruncatedTensor operator*(double s, TruncatedTensor a);

struct LogSignature {
  int dim = 0;
  int depth = 0;
  std::vector<double> coeffs;  // Lyndon basis, by length then lexicographic
};

// Dimension of the free Lie algebra truncated at depth, via the necklace
// (Witt) formula with the Moebius function. Throws std::overflow_error
// instead of wrapping.
std::int64_t beta(std::int64_t dim, std::int64_t depth);

int moebius(std::int64_t n);

TruncatedTensor segment_signature(std::span<const double> increment, int depth);
TruncatedTensor tensor_mul(const TruncatedTensor& a, const TruncatedTensor& b);
TruncatedTensor path_signature(const PiecewisePath& path, int depth);
TruncatedTensor tensor_log(const TruncatedTensor& x);
TruncatedTensor tensor_exp(const TruncatedTensor& lie);

// A Lyndon word over letters 0..d-1 together with its standard bracketing:
// for length > 1, left/right index the standard factorisation w = uv.
struct LyndonWord {
  std::vector<int> letters;
  int left = -1;
  int right = -1;
};

// Lyndon basis of the truncated free Lie algebra for a fixed (dim, depth).
// Words are ordered by length, then lexicographically.
class LyndonBasis {
 public:
  LyndonBasis(int dim, int depth);

  int dim() const { return dim_; }
  int depth() const { return depth_; }
  std::size_t size() const { return words_.size(); }
  const std::vector<LyndonWord>& words() const { return words_; }

  // Bracket polynomial P(w) as a tensor (only level |w| nonzero).
  const TruncatedTensor& expansion(std::size_t i) const { return expansions_[i]; }

  // Lyndon coefficients of a Lie element. Throws std::domain_error carrying
  // the residual norm when the input is not Lie to relative tolerance.
  LogSignature project(const TruncatedTensor& lie, double rel_tol = 1e-9) const;
  TruncatedTensor expand(std::span<const double> coeffs) const;

  // Transpose of the projection map restricted to Lie elements: maps a
  // cotangent on Lyndon coefficients to a cotangent on tensor coefficients.
  TruncatedTensor project_transpose(std::span<const double> cotangent) const;

  // Labels like "1", "[1,2]", "[1,[1,2]]" (letters 1-based).
  std::string label(std::size_t i) const;

 private:
  int dim_;
  int depth_;
  std::vector<LyndonWord> words_;
  std::vector<TruncatedTensor> expansions_;
  // flat index of each word within its level
  std::vector<std::size_t> word_index_;
  // per word: (earlier word j, P(w_j)[w]) entries of the unit lower triangle
  std::vector<std::vector<std::pair<std::size_t, double>>> triangle_;
};

LogSignature project_lyndon(const TruncatedTensor& lie);
LogSignature logsig(const PiecewisePath& path, int depth);

// Logsig of the piecewise-linear path with the given increments (row-major,
// n_segments x dim), computed against a prebuilt basis.
std::vector<double> logsig_from_increments(const LyndonBasis& basis,
                                           std::span<const double> increments);

// Reverse-mode derivative of logsig_from_increments: returns the cotangent of
// every increment coordinate given a cotangent on the Lyndon coefficients.
std::vector<double> logsig_increments_vjp(const LyndonBasis& basis,
                                          std::span<const double> increments,
                                          std::span<const double> cotangent);

}  // namespace ppde

#endif  // PPDE_LOGSIG_H
