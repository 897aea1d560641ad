#ifndef XFL_NUMKIT_HPP
#define XFL_NUMKIT_HPP

/// @file numkit.hpp Dense linear algebra and seeded random sampling substrate.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <string_view>
#include <vector>

#include "xfl/error.hpp"

namespace xfl::numkit {

/* Matrices
 * --------
 */

/** Dense row-major matrix of doubles.
 *
 * Small and unclever on purpose: the covariances handled here are at most
 * a few thousand entries, so clarity wins over BLAS. */
class Matrix {
public:
    Matrix() : rows_(0), cols_(0) {}
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    static Matrix identity(std::size_t n) {
        Matrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }

    double &operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

    std::vector<double> &data() { return data_; }
    const std::vector<double> &data() const { return data_; }

    bool all_finite() const {
        for (double v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

private:
    std::size_t rows_, cols_;
    std::vector<double> data_;
};

inline Matrix matmul(const Matrix &a, const Matrix &b) {
    if (a.cols() != b.rows())
        throw numeric_error("ShapeMismatch", "matmul " + std::to_string(a.rows()) + "x" +
                                                 std::to_string(a.cols()) + " * " +
                                                 std::to_string(b.rows()) + "x" +
                                                 std::to_string(b.cols()));
    Matrix c(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t k = 0; k < a.cols(); ++k) {
            double aik = a(i, k);
            if (aik == 0.0) continue;
            for (std::size_t j = 0; j < b.cols(); ++j) c(i, j) += aik * b(k, j);
        }
    }
    return c;
}

inline Matrix transpose(const Matrix &a) {
    Matrix t(a.cols(), a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
    return t;
}

/* Random streams
 * --------------
 */

namespace detail {

// 64-bit finalizer (splitmix64 style): bijective, strong avalanche.
inline std::uint64_t mix64(std::uint64_t x) {
    x ^= x >> 30;
    x *= 0xbf58476d1ce4e5b9ULL;
    x ^= x >> 27;
    x *= 0x94d049bb133111ebULL;
    x ^= x >> 31;
    return x;
}

inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : s) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}

constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;

} // namespace detail

/** Counter-mode random stream keyed by (seed, stream_id).
 *
 * Each output is a keyed hash of an incrementing counter, so a stream never
 * revisits internal state, and distinct (seed, stream_id) keys select
 * distinct instances of the mixing function: derived streams cannot overlap.
 * Identical (seed, stream_id) always replays the identical sequence.
 *
 * Copying a stream copies its position; hand each concurrent consumer its
 * own derived stream instead of sharing one. */
class RngStream {
public:
    explicit RngStream(std::uint64_t seed, std::uint64_t stream_id = 0)
        : seed_(seed), stream_(stream_id) {
        key0_ = detail::mix64(seed ^ detail::kGolden);
        key1_ = detail::mix64(stream_id + detail::mix64(seed));
    }

    std::uint64_t seed() const { return seed_; }
    std::uint64_t stream_id() const { return stream_; }

    /// Child stream: same master seed, stream id hash-chained from the
    /// parent's id and the child index. derive(a) != derive(b) for a != b.
    RngStream derive(std::uint64_t child_id) const {
        return RngStream(seed_, detail::mix64(stream_ ^ (child_id * detail::kGolden + 1)));
    }

    RngStream derive(std::string_view name) const { return derive(detail::fnv1a64(name)); }

    std::uint64_t next_u64() {
        std::uint64_t x = counter_++;
        x = detail::mix64(x + key0_);
        x = detail::mix64(x ^ key1_);
        return x;
    }

    /// Uniform double in [0, 1) with 53 random bits.
    double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Standard normal via Box-Muller; the paired draw is cached.
    double next_gaussian() {
        if (has_cached_) {
            has_cached_ = false;
            return cached_;
        }
        double u1;
        do {
            u1 = next_double();
        } while (u1 <= 0.0);
        double u2 = next_double();
        double r = std::sqrt(-2.0 * std::log(u1));
        double t = 6.283185307179586476925286766559 * u2;
        cached_ = r * std::sin(t);
        has_cached_ = true;
        return r * std::cos(t);
    }

    /// Unbiased uniform index in {0, ..., n-1} (rejection sampling).
    std::size_t next_index(std::size_t n) {
        std::uint64_t un = static_cast<std::uint64_t>(n);
        std::uint64_t threshold = (0 - un) % un; // 2^64 mod n
        std::uint64_t r;
        do {
            r = next_u64();
        } while (r < threshold);
        return static_cast<std::size_t>(r % un);
    }

    /// Fisher-Yates shuffle of an index vector.
    template <typename T> void shuffle(std::vector<T> &v) {
        for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[next_index(i)]);
    }

private:
    std::uint64_t seed_, stream_;
    std::uint64_t key0_ = 0, key1_ = 0;
    std::uint64_t counter_ = 0;
    bool has_cached_ = false;
    double cached_ = 0.0;
};

/* Factorization
 * -------------
 */

/** Symmetric eigendecomposition by cyclic Jacobi rotations.
 *
 * Returns eigenvalues (ascending) and the matrix whose columns are the
 * matching eigenvectors. Intended for the small covariances used here. */
inline void jacobi_eigensym(const Matrix &m, std::vector<double> &eigenvalues,
                            Matrix &eigenvectors) {
    const std::size_t n = m.rows();
    Matrix a = m;
    Matrix v = Matrix::identity(n);

    double scale = 0.0;
    for (std::size_t i = 0; i < n; ++i) scale = std::max(scale, std::abs(a(i, i)));
    scale = std::max(scale, 1.0);

    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j) off += a(i, j) * a(i, j);
        if (std::sqrt(off) < 1e-14 * scale * n) break;

        for (std::size_t p = 0; p < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                double apq = a(p, q);
                if (std::abs(apq) < 1e-300) continue;
                double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
                double t = (theta >= 0 ? 1.0 : -1.0) /
                           (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                double c = 1.0 / std::sqrt(t * t + 1.0);
                double s = t * c;

                for (std::size_t i = 0; i < n; ++i) {
                    double aip = a(i, p), aiq = a(i, q);
                    a(i, p) = c * aip - s * aiq;
                    a(i, q) = s * aip + c * aiq;
                }
                for (std::size_t i = 0; i < n; ++i) {
                    double api = a(p, i), aqi = a(q, i);
                    a(p, i) = c * api - s * aqi;
                    a(q, i) = s * api + c * aqi;
                }
                for (std::size_t i = 0; i < n; ++i) {
                    double vip = v(i, p), viq = v(i, q);
                    v(i, p) = c * vip - s * viq;
                    v(i, q) = s * vip + c * viq;
                }
            }
        }
    }

    eigenvalues.resize(n);
    for (std::size_t i = 0; i < n; ++i) eigenvalues[i] = a(i, i);

    // sort ascending, carrying eigenvectors along
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](std::size_t x, std::size_t y) { return eigenvalues[x] < eigenvalues[y]; });
    std::vector<double> ev(n);
    Matrix vs(n, n);
    for (std::size_t k = 0; k < n; ++k) {
        ev[k] = eigenvalues[order[k]];
        for (std::size_t i = 0; i < n; ++i) vs(i, k) = v(i, order[k]);
    }
    eigenvalues = std::move(ev);
    eigenvectors = std::move(vs);
}

/** Factor a symmetric positive semi-definite matrix.
 *
 * Strictly positive definite inputs take the plain Cholesky path and the
 * result is lower-triangular with L*L^T == m to ~1e-8. Singular PSD inputs
 * (correlations at |alpha| = 1) fall back to an eigendecomposition with
 * eigenvalues below 1e-12 clipped to zero, giving a square factor F with
 * F*F^T ~= m to ~1e-6.
 *
 * Throws NotSymmetric / NotPSD. */
inline Matrix cholesky(const Matrix &m) {
    const std::size_t n = m.rows();
    if (m.cols() != n) throw numeric_error("ShapeMismatch", "cholesky needs a square matrix");

    double max_asym = 0.0, scale = 1.0;
    for (std::size_t i = 0; i < n; ++i) {
        scale = std::max(scale, std::abs(m(i, i)));
        for (std::size_t j = i + 1; j < n; ++j)
            max_asym = std::max(max_asym, std::abs(m(i, j) - m(j, i)));
    }
    if (max_asym > 1e-10 * scale)
        throw numeric_error("NotSymmetric",
                            "max |m_ij - m_ji| = " + std::to_string(max_asym));

    // plain Cholesky; bail to the eigen fallback on a tiny or negative pivot
    Matrix lower(n, n);
    bool ok = true;
    for (std::size_t j = 0; j < n && ok; ++j) {
        double d = m(j, j);
        for (std::size_t k = 0; k < j; ++k) d -= lower(j, k) * lower(j, k);
        if (d < 1e-10 * scale) {
            ok = false;
            break;
        }
        double ljj = std::sqrt(d);
        lower(j, j) = ljj;
        for (std::size_t i = j + 1; i < n; ++i) {
            double s = m(i, j);
            for (std::size_t k = 0; k < j; ++k) s -= lower(i, k) * lower(j, k);
            lower(i, j) = s / ljj;
        }
    }
    if (ok) return lower;

    std::vector<double> eig;
    Matrix vecs;
    jacobi_eigensym(m, eig, vecs);
    if (eig.front() < -1e-8 * scale)
        throw numeric_error("NotPSD", "smallest eigenvalue = " + std::to_string(eig.front()));

    Matrix factor(n, n);
    for (std::size_t k = 0; k < n; ++k) {
        double lam = eig[k] < 1e-12 ? 0.0 : std::sqrt(eig[k]);
        for (std::size_t i = 0; i < n; ++i) factor(i, k) = vecs(i, k) * lam;
    }
    return factor;
}

/* Sampling
 * --------
 */

/// n i.i.d. draws of F*z, one per row, z standard normal. Covariance of the
/// samples converges to F*F^T.
inline Matrix sample_mvn(const Matrix &factor, std::size_t n, RngStream &rng) {
    const std::size_t d = factor.rows();
    if (factor.cols() != d) throw numeric_error("ShapeMismatch", "mvn factor must be square");
    Matrix samples(n, d);
    std::vector<double> z(d);
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t i = 0; i < d; ++i) z[i] = rng.next_gaussian();
        for (std::size_t i = 0; i < d; ++i) {
            double acc = 0.0;
            for (std::size_t k = 0; k < d; ++k) acc += factor(i, k) * z[k];
            samples(r, i) = acc;
        }
    }
    return samples;
}

/* Scalar kernels
 * --------------
 */

/// Overflow-free logistic sigmoid.
inline double stable_sigmoid(double z) {
    if (z >= 0.0) {
        return 1.0 / (1.0 + std::exp(-z));
    }
    double e = std::exp(z);
    return e / (1.0 + e);
}

} // namespace xfl::numkit

#endif // XFL_NUMKIT_HPP
