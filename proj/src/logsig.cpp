#include "ppde/logsig.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>

namespace ppde {

namespace {

std::size_t ipow(std::size_t base, int exp) {
  std::size_t r = 1;
  for (int i = 0; i < exp; ++i) r *= base;
  return r;
}

void check_compatible(const TruncatedTensor& a, const TruncatedTensor& b) {
  if (a.dim() != b.dim() || a.depth() != b.depth()) {
    std::ostringstream os;
    os << "tensor shape mismatch: (dim " << a.dim() << ", depth " << a.depth()
       << ") vs (dim " << b.dim() << ", depth " << b.depth() << ")";
    throw std::invalid_argument(os.str());
  }
}

// out_{p+q} += a_p (x) b_q, for every p+q <= depth.
void accumulate_product(const TruncatedTensor& a, const TruncatedTensor& b,
                        TruncatedTensor& out) {
  const int n = a.depth();
  const auto d = static_cast<std::size_t>(a.dim());
  for (int k = 0; k <= n; ++k) {
    auto& ck = out.level(k);
    for (int p = 0; p <= k; ++p) {
      const auto& ap = a.level(p);
      const auto& bq = b.level(k - p);
      const std::size_t nq = ipow(d, k - p);
      for (std::size_t i = 0; i < ap.size(); ++i) {
        const double ai = ap[i];
        if (ai == 0.0) continue;
        double* dst = ck.data() + i * nq;
        for (std::size_t j = 0; j < nq; ++j) dst[j] += ai * bq[j];
      }
    }
  }
}

// Cotangent of a in c = a (x) b.
void mul_vjp_left(const TruncatedTensor& gc, const TruncatedTensor& b, TruncatedTensor& ga) {
  const int n = gc.depth();
  const auto d = static_cast<std::size_t>(gc.dim());
  for (int p = 0; p <= n; ++p) {
    auto& gap = ga.level(p);
    for (int q = 0; p + q <= n; ++q) {
      const auto& bq = b.level(q);
      const auto& g = gc.level(p + q);
      const std::size_t nq = ipow(d, q);
      for (std::size_t i = 0; i < gap.size(); ++i) {
        const double* src = g.data() + i * nq;
        double s = 0.0;
        for (std::size_t j = 0; j < nq; ++j) s += src[j] * bq[j];
        gap[i] += s;
      }
    }
  }
}

// Cotangent of b in c = a (x) b.
void mul_vjp_right(const TruncatedTensor& a, const TruncatedTensor& gc, TruncatedTensor& gb) {
  const int n = gc.depth();
  for (int q = 0; q <= n; ++q) {
    auto& gbq = gb.level(q);
    const std::size_t nq = gbq.size();
    for (int p = 0; p + q <= n; ++p) {
      const auto& ap = a.level(p);
      const auto& g = gc.level(p + q);
      for (std::size_t i = 0; i < ap.size(); ++i) {
        const double ai = ap[i];
        if (ai == 0.0) continue;
        const double* src = g.data() + i * nq;
        for (std::size_t j = 0; j < nq; ++j) gbq[j] += ai * src[j];
      }
    }
  }
}

std::vector<std::vector<int>> generate_lyndon_words(int dim, int depth) {
  // Duval's algorithm: all Lyndon words of length <= depth in lexicographic order.
  std::vector<std::vector<int>> out;
  std::vector<int> w{-1};
  while (!w.empty()) {
    ++w.back();
    out.push_back(w);
    const std::size_t m = w.size();
    while (w.size() < static_cast<std::size_t>(depth)) w.push_back(w[w.size() - m]);
    while (!w.empty() && w.back() == dim - 1) w.pop_back();
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const auto& a, const auto& b) { return a.size() < b.size(); });
  return out;
}

std::size_t word_flat_index(const std::vector<int>& w, int dim) {
  std::size_t idx = 0;
  for (int a : w) idx = idx * static_cast<std::size_t>(dim) + static_cast<std::size_t>(a);
  return idx;
}

}  // namespace

// ---------------------------------------------------------------------------
// PiecewisePath

PiecewisePath::PiecewisePath(std::vector<double> times, std::vector<double> values, int dim)
    : times_(std::move(times)), values_(std::move(values)), dim_(dim) {
  if (dim_ < 1) throw std::invalid_argument("path dimension must be positive");
  if (times_.size() < 2) throw std::invalid_argument("path needs ≥ 2 samples");
  if (values_.size() != times_.size() * static_cast<std::size_t>(dim_))
    throw std::invalid_argument("path values do not match times x dim");
  for (std::size_t k = 1; k < times_.size(); ++k) {
    if (!(times_[k] > times_[k - 1]))
      throw std::invalid_argument("path times must be strictly increasing");
  }
  for (double v : values_) {
    if (!std::isfinite(v)) throw std::invalid_argument("path values must be finite");
  }
}

PiecewisePath PiecewisePath::slice(std::size_t first, std::size_t last) const {
  if (last >= times_.size() || first >= last)
    throw std::out_of_range("invalid path slice");
  const auto d = static_cast<std::size_t>(dim_);
  std::vector<double> t(times_.begin() + static_cast<long>(first),
                        times_.begin() + static_cast<long>(last + 1));
  std::vector<double> v(values_.begin() + static_cast<long>(first * d),
                        values_.begin() + static_cast<long>((last + 1) * d));
  return PiecewisePath(std::move(t), std::move(v), dim_);
}

// ---------------------------------------------------------------------------
// TruncatedTensor

TruncatedTensor::TruncatedTensor(int dim, int depth) : dim_(dim), depth_(depth) {
  if (dim < 1 || depth < 0) throw std::invalid_argument("invalid tensor shape");
  levels_.resize(static_cast<std::size_t>(depth) + 1);
  for (int k = 0; k <= depth; ++k)
    levels_[static_cast<std::size_t>(k)].assign(ipow(static_cast<std::size_t>(dim), k), 0.0);
}

TruncatedTensor TruncatedTensor::identity(int dim, int depth) {
  TruncatedTensor t(dim, depth);
  t.level(0)[0] = 1.0;
  return t;
}

std::vector<double> TruncatedTensor::flatten() const {
  std::vector<double> out;
  for (const auto& l : levels_) out.insert(out.end(), l.begin(), l.end());
  return out;
}

double TruncatedTensor::norm() const {
  double s = 0.0;
  for (const auto& l : levels_)
    for (double v : l) s += v * v;
  return std::sqrt(s);
}

TruncatedTensor& TruncatedTensor::operator+=(const TruncatedTensor& other) {
  check_compatible(*this, other);
  for (std::size_t k = 0; k < levels_.size(); ++k)
    for (std::size_t i = 0; i < levels_[k].size(); ++i) levels_[k][i] += other.levels_[k][i];
  return *this;
}

TruncatedTensor& TruncatedTensor::operator-=(const TruncatedTensor& other) {
  check_compatible(*this, other);
  for (std::size_t k = 0; k < levels_.size(); ++k)
    for (std::size_t i = 0; i < levels_[k].size(); ++i) levels_[k][i] -= other.levels_[k][i];
  return *this;
}

TruncatedTensor& TruncatedTensor::operator*=(double s) {
  for (auto& l : levels_)
    for (double& v : l) v *= s;
  return *this;
}

TruncatedTensor operator+(TruncatedTensor a, const TruncatedTensor& b) { return a += b; }
TruncatedTensor operator-(TruncatedTensor a, const TruncatedTensor& b) { return a -= b; }
TruncatedTensor operator*(double s, TruncatedTensor a) { return a *= s; }

// ---------------------------------------------------------------------------
// Free Lie algebra dimension

int moebius(std::int64_t n) {
  if (n < 1) throw std::invalid_argument("moebius: n must be positive");
  int sign = 1;
  for (std::int64_t p = 2; p * p <= n; ++p) {
    if (n % p == 0) {
      n /= p;
      if (n % p == 0) return 0;
      sign = -sign;
    }
  }
  if (n > 1) sign = -sign;
  return sign;
}

std::int64_t beta(std::int64_t dim, std::int64_t depth) {
  if (dim < 1 || depth < 1) throw std::invalid_argument("beta: dim and depth must be >= 1");
  using wide = __int128;
  const wide limit = static_cast<wide>(1) << 120;
  std::vector<wide> powers(static_cast<std::size_t>(depth) + 1);
  powers[0] = 1;
  for (std::int64_t i = 1; i <= depth; ++i) {
    powers[static_cast<std::size_t>(i)] = powers[static_cast<std::size_t>(i - 1)] * dim;
    if (powers[static_cast<std::size_t>(i)] > limit)
      throw std::overflow_error("beta: d^N exceeds the supported integer range");
  }
  wide total = 0;
  for (std::int64_t k = 1; k <= depth; ++k) {
    wide inner = 0;
    for (std::int64_t i = 1; i <= k; ++i) {
      if (k % i == 0) inner += moebius(k / i) * powers[static_cast<std::size_t>(i)];
    }
    total += inner / k;  // the necklace sum is divisible by k
  }
  if (total > std::numeric_limits<std::int64_t>::max())
    throw std::overflow_error("beta: result exceeds int64 range");
  return static_cast<std::int64_t>(total);
}

// ---------------------------------------------------------------------------
// Tensor algebra operations

TruncatedTensor segment_signature(std::span<const double> increment, int depth) {
  const int d = static_cast<int>(increment.size());
  TruncatedTensor out = TruncatedTensor::identity(d, depth);
  for (int k = 1; k <= depth; ++k) {
    const auto& prev = out.level(k - 1);
    auto& cur = out.level(k);
    const double inv_k = 1.0 / k;
    for (std::size_t i = 0; i < prev.size(); ++i)
      for (int j = 0; j < d; ++j)
        cur[i * static_cast<std::size_t>(d) + static_cast<std::size_t>(j)] =
            prev[i] * increment[static_cast<std::size_t>(j)] * inv_k;
  }
  return out;
}

TruncatedTensor tensor_mul(const TruncatedTensor& a, const TruncatedTensor& b) {
  check_compatible(a, b);
  TruncatedTensor out(a.dim(), a.depth());
  accumulate_product(a, b, out);
  return out;
}

TruncatedTensor path_signature(const PiecewisePath& path, int depth) {
  const auto d = static_cast<std::size_t>(path.dim());
  TruncatedTensor sig = TruncatedTensor::identity(path.dim(), depth);
  std::vector<double> inc(d);
  for (std::size_t k = 1; k < path.size(); ++k) {
    auto a = path.point(k - 1);
    auto b = path.point(k);
    for (std::size_t i = 0; i < d; ++i) inc[i] = b[i] - a[i];
    sig = tensor_mul(sig, segment_signature(inc, depth));
  }
  return sig;
}

TruncatedTensor tensor_log(const TruncatedTensor& x) {
  if (std::abs(x.level(0)[0] - 1.0) > 1e-12)
    throw std::domain_error("tensor_log: degree-0 coefficient must be 1");
  TruncatedTensor y = x;
  y.level(0)[0] = 0.0;
  TruncatedTensor result = y;
  TruncatedTensor power = y;
  for (int n = 2; n <= x.depth(); ++n) {
    power = tensor_mul(power, y);
    const double c = ((n % 2 == 0) ? -1.0 : 1.0) / n;
    for (int k = n; k <= x.depth(); ++k) {
      auto& r = result.level(k);
      const auto& p = power.level(k);
      for (std::size_t i = 0; i < r.size(); ++i) r[i] += c * p[i];
    }
  }
  return result;
}

TruncatedTensor tensor_exp(const TruncatedTensor& lie) {
  if (lie.level(0)[0] != 0.0)
    throw std::domain_error("tensor_exp: degree-0 coefficient must be 0");
  TruncatedTensor result = TruncatedTensor::identity(lie.dim(), lie.depth());
  TruncatedTensor power = TruncatedTensor::identity(lie.dim(), lie.depth());
  double fact = 1.0;
  for (int n = 1; n <= lie.depth(); ++n) {
    power = tensor_mul(power, lie);
    fact *= n;
    result += (1.0 / fact) * power;
  }
  return result;
}

// ---------------------------------------------------------------------------
// Lyndon basis

LyndonBasis::LyndonBasis(int dim, int depth) : dim_(dim), depth_(depth) {
  if (dim < 1 || depth < 1) throw std::invalid_argument("LyndonBasis: dim and depth must be >= 1");
  const auto raw = generate_lyndon_words(dim, depth);
  std::map<std::vector<int>, int> index_of;
  for (std::size_t i = 0; i < raw.size(); ++i) index_of[raw[i]] = static_cast<int>(i);

  words_.resize(raw.size());
  expansions_.reserve(raw.size());
  word_index_.resize(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    LyndonWord& w = words_[i];
    w.letters = raw[i];
    word_index_[i] = word_flat_index(raw[i], dim);
    if (raw[i].size() > 1) {
      // standard factorisation: v is the longest proper Lyndon suffix
      for (std::size_t s = 1; s < raw[i].size(); ++s) {
        std::vector<int> v(raw[i].begin() + static_cast<long>(s), raw[i].end());
        auto it = index_of.find(v);
        if (it != index_of.end()) {
          std::vector<int> u(raw[i].begin(), raw[i].begin() + static_cast<long>(s));
          w.left = index_of.at(u);
          w.right = it->second;
          break;
        }
      }
    }
    TruncatedTensor e(dim, depth);
    if (raw[i].size() == 1) {
      e.level(1)[static_cast<std::size_t>(raw[i][0])] = 1.0;
    } else {
      const auto& pu = expansions_[static_cast<std::size_t>(w.left)];
      const auto& pv = expansions_[static_cast<std::size_t>(w.right)];
      accumulate_product(pu, pv, e);
      TruncatedTensor tmp(dim, depth);
      accumulate_product(pv, pu, tmp);
      e -= tmp;
    }
    expansions_.push_back(std::move(e));
  }

  triangle_.resize(words_.size());
  for (std::size_t i = 0; i < words_.size(); ++i) {
    const int k = static_cast<int>(words_[i].letters.size());
    for (std::size_t j = 0; j < i; ++j) {
      if (static_cast<int>(words_[j].letters.size()) != k) continue;
      const double v = expansions_[j].level(k)[word_index_[i]];
      if (v != 0.0) triangle_[i].emplace_back(j, v);
    }
  }
}

LogSignature LyndonBasis::project(const TruncatedTensor& lie, double rel_tol) const {
  if (lie.dim() != dim_ || lie.depth() != depth_)
    throw std::invalid_argument("project_lyndon: tensor shape does not match basis");
  LogSignature out{dim_, depth_, std::vector<double>(words_.size(), 0.0)};
  for (std::size_t i = 0; i < words_.size(); ++i) {
    const int k = static_cast<int>(words_[i].letters.size());
    double c = lie.level(k)[word_index_[i]];
    for (const auto& [j, v] : triangle_[i]) c -= out.coeffs[j] * v;
    out.coeffs[i] = c;
  }
  TruncatedTensor residual = lie - expand(out.coeffs);
  const double res = residual.norm();
  if (res > rel_tol * lie.norm()) {
    std::ostringstream os;
    os << "project_lyndon: input is not a Lie element (residual norm " << res << ")";
    throw std::domain_error(os.str());
  }
  return out;
}

TruncatedTensor LyndonBasis::expand(std::span<const double> coeffs) const {
  if (coeffs.size() != words_.size())
    throw std::invalid_argument("expand: coefficient count does not match basis");
  TruncatedTensor out(dim_, depth_);
  for (std::size_t i = 0; i < words_.size(); ++i) {
    if (coeffs[i] == 0.0) continue;
    const int k = static_cast<int>(words_[i].letters.size());
    const auto& src = expansions_[i].level(k);
    auto& dst = out.level(k);
    for (std::size_t m = 0; m < dst.size(); ++m) dst[m] += coeffs[i] * src[m];
  }
  return out;
}

TruncatedTensor LyndonBasis::project_transpose(std::span<const double> cotangent) const {
  if (cotangent.size() != words_.size())
    throw std::invalid_argument("project_transpose: cotangent size does not match basis");
  std::vector<double> y(cotangent.begin(), cotangent.end());
  for (std::size_t i = words_.size(); i-- > 0;)
    for (const auto& [j, v] : triangle_[i]) y[j] -= v * y[i];
  TruncatedTensor out(dim_, depth_);
  for (std::size_t i = 0; i < words_.size(); ++i) {
    const int k = static_cast<int>(words_[i].letters.size());
    out.level(k)[word_index_[i]] = y[i];
  }
  return out;
}

std::string LyndonBasis::label(std::size_t i) const {
  const LyndonWord& w = words_[i];
  if (w.letters.size() == 1) return std::to_string(w.letters[0] + 1);
  return "[" + label(static_cast<std::size_t>(w.left)) + "," +
         label(static_cast<std::size_t>(w.right)) + "]";
}

LogSignature project_lyndon(const TruncatedTensor& lie) {
  return LyndonBasis(lie.dim(), lie.depth()).project(lie);
}

LogSignature logsig(const PiecewisePath& path, int depth) {
  return project_lyndon(tensor_log(path_signature(path, depth)));
}

// ---------------------------------------------------------------------------
// Logsig of an increment sequence, with its reverse-mode derivative

namespace {

struct LogsigTape {
  std::vector<TruncatedTensor> segments;  // exp of each increment
  std::vector<TruncatedTensor> prefixes;  // prefixes[k] = product of segments[0..k]
  std::vector<TruncatedTensor> powers;    // powers[n-1] = (sig - 1)^n
  TruncatedTensor lie;
};

LogsigTape record_logsig(int dim, int depth, std::span<const double> increments) {
  const auto d = static_cast<std::size_t>(dim);
  if (increments.empty() || increments.size() % d != 0)
    throw std::invalid_argument("logsig: increments must be a non-empty multiple of dim");
  LogsigTape tape;
  const std::size_t n = increments.size() / d;
  TruncatedTensor acc = TruncatedTensor::identity(dim, depth);
  for (std::size_t s = 0; s < n; ++s) {
    tape.segments.push_back(segment_signature(increments.subspan(s * d, d), depth));
    acc = tensor_mul(acc, tape.segments.back());
    tape.prefixes.push_back(acc);
  }
  TruncatedTensor y = acc;
  y.level(0)[0] = 0.0;
  tape.powers.push_back(y);
  tape.lie = y;
  for (int p = 2; p <= depth; ++p) {
    tape.powers.push_back(tensor_mul(tape.powers.back(), y));
    const double c = ((p % 2 == 0) ? -1.0 : 1.0) / p;
    tape.lie += c * tape.powers.back();
  }
  return tape;
}

}  // namespace

std::vector<double> logsig_from_increments(const LyndonBasis& basis,
                                           std::span<const double> increments) {
  LogsigTape tape = record_logsig(basis.dim(), basis.depth(), increments);
  return basis.project(tape.lie).coeffs;
}

std::vector<double> logsig_increments_vjp(const LyndonBasis& basis,
                                          std::span<const double> increments,
                                          std::span<const double> cotangent) {
  const int dim = basis.dim();
  const int depth = basis.depth();
  const auto d = static_cast<std::size_t>(dim);
  LogsigTape tape = record_logsig(dim, depth, increments);

  const TruncatedTensor g_lie = basis.project_transpose(cotangent);
  // powers: P_1 = y, P_n = P_{n-1} (x) y; lie = sum_n c_n P_n
  std::vector<TruncatedTensor> g_pow;
  for (int p = 1; p <= depth; ++p) {
    const double c = ((p % 2 == 0) ? -1.0 : 1.0) / p;
    g_pow.push_back(c * g_lie);
  }
  TruncatedTensor g_y(dim, depth);
  const TruncatedTensor& y = tape.powers.front();
  for (int p = depth; p >= 2; --p) {
    const auto pi = static_cast<std::size_t>(p - 1);
    mul_vjp_left(g_pow[pi], y, g_pow[pi - 1]);
    mul_vjp_right(tape.powers[pi - 1], g_pow[pi], g_y);
  }
  g_y += g_pow[0];
  g_y.level(0)[0] = 0.0;

  // Chen products: prefixes[k] = prefixes[k-1] (x) segments[k]
  const std::size_t n = tape.segments.size();
  std::vector<double> g_inc(increments.size(), 0.0);
  TruncatedTensor g_prefix = g_y;
  for (std::size_t k = n; k-- > 0;) {
    TruncatedTensor g_seg(dim, depth);
    if (k == 0) {
      g_seg = g_prefix;
    } else {
      mul_vjp_right(tape.prefixes[k - 1], g_prefix, g_seg);
      TruncatedTensor g_prev(dim, depth);
      mul_vjp_left(g_prefix, tape.segments[k], g_prev);
      g_prefix = std::move(g_prev);
    }
    // segment level m = level(m-1) (x) inc / m
    const auto inc = increments.subspan(k * d, d);
    const TruncatedTensor& seg = tape.segments[k];
    TruncatedTensor g_lvl = g_seg;
    double* gi = g_inc.data() + k * d;
    for (int m = depth; m >= 1; --m) {
      const auto& prev = seg.level(m - 1);
      const auto& g = g_lvl.level(m);
      auto& gprev = g_lvl.level(m - 1);
      const double inv_m = 1.0 / m;
      for (std::size_t i = 0; i < prev.size(); ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
          const double gij = g[i * d + j] * inv_m;
          acc += gij * inc[j];
          gi[j] += gij * prev[i];
        }
        gprev[i] += acc;
      }
    }
  }
  return g_inc;
}

}  // namespace ppde
