#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace sdm {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Zero-based action index in [0, K).
using ActionId = std::size_t;

using Rng = std::mt19937_64;

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Inconsistent dimensions between inputs.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// Invalid data values (non-finite features, bad action ids, malformed files).
class DataError : public Error {
public:
    using Error::Error;
};

/// Ill-conditioned or non positive-definite matrices.
class NumericalError : public Error {
public:
    explicit NumericalError(const std::string& what, std::ptrdiff_t action = -1)
        : Error(what), action_(action) {}

    /// Offending action, or -1 when the failure is not tied to one action.
    std::ptrdiff_t action() const noexcept { return action_; }

private:
    std::ptrdiff_t action_;
};

/// Invalid scalar parameters (negative noise, delta outside (0,1), ...).
class ParameterError : public Error {
public:
    using Error::Error;
};

// ---------------------------------------------------------------------------
// Numerical constants shared by the posterior code
// ---------------------------------------------------------------------------

inline constexpr double kMinCovEigenvalue = 1e-10;
inline constexpr double kMaxConditionNumber = 1e12;

// ---------------------------------------------------------------------------
// Seeding
// ---------------------------------------------------------------------------

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Independent generator for (master seed, replication, stream). Streams let
/// different stages of one replication (instance, log, contexts) draw without
/// disturbing each other, so methods compared on the same replication see the
/// same randomness.
inline Rng derive_rng(std::uint64_t seed, std::uint64_t replication, std::uint64_t stream = 0) {
    std::uint64_t s = splitmix64(seed);
    s = splitmix64(s ^ (replication + 0x632be59bd9b4e019ULL));
    s = splitmix64(s ^ (stream * 0x85ebca6b + 0x27d4eb2f165667c5ULL));
    return Rng{s};
}

namespace stream {
inline constexpr std::uint64_t kInstance = 1;
inline constexpr std::uint64_t kLog = 2;
inline constexpr std::uint64_t kContexts = 3;
inline constexpr std::uint64_t kProbe = 4;
inline constexpr std::uint64_t kMethod = 5;
inline constexpr std::uint64_t kPrior = 6;
}  // namespace stream

inline VectorXd standard_normal(Eigen::Index n, Rng& rng) {
    std::normal_distribution<double> z(0.0, 1.0);
    VectorXd v(n);
    for (Eigen::Index i = 0; i < n; ++i) v(i) = z(rng);
    return v;
}

inline MatrixXd uniform_matrix(Eigen::Index rows, Eigen::Index cols, double lo, double hi, Rng& rng) {
    std::uniform_real_distribution<double> u(lo, hi);
    MatrixXd m(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j)
        for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = u(rng);
    return m;
}

// ---------------------------------------------------------------------------
// Linear algebra helpers
// ---------------------------------------------------------------------------

inline MatrixXd symmetrize(const MatrixXd& m) { return 0.5 * (m + m.transpose()); }

inline double asymmetry(const MatrixXd& m) { return (m - m.transpose()).cwiseAbs().maxCoeff(); }

inline bool all_finite(const MatrixXd& m) { return m.allFinite(); }

inline double min_eigenvalue(const MatrixXd& m) {
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(symmetrize(m), Eigen::EigenvaluesOnly);
    return es.eigenvalues()(0);
}

/// True when `m` is symmetric within `tol` and its smallest eigenvalue exceeds `floor`.
inline bool is_spd(const MatrixXd& m, double floor = 0.0, double tol = 1e-10) {
    if (m.rows() != m.cols() || !m.allFinite()) return false;
    if (m.size() == 0) return true;
    if (asymmetry(m) > tol * std::max(1.0, m.cwiseAbs().maxCoeff())) return false;
    return min_eigenvalue(m) > floor;
}

/// Inverse of a symmetric positive-definite matrix through its eigendecomposition.
/// Throws NumericalError when the matrix is indefinite or its condition number
/// exceeds kMaxConditionNumber. The result is exactly symmetric.
inline MatrixXd spd_inverse(const MatrixXd& m, const std::string& what, std::ptrdiff_t action = -1) {
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(symmetrize(m));
    if (es.info() != Eigen::Success) throw NumericalError(what + ": eigendecomposition failed", action);
    const VectorXd& ev = es.eigenvalues();
    const double lo = ev(0);
    const double hi = ev(ev.size() - 1);
    if (!(lo > 0.0) || !std::isfinite(hi)) {
        throw NumericalError(what + ": matrix is not positive definite" +
                                 (action >= 0 ? " (action " + std::to_string(action) + ")" : std::string{}),
                             action);
    }
    if (hi / lo > kMaxConditionNumber) {
        throw NumericalError(what + ": condition number " + std::to_string(hi / lo) + " exceeds 1e12" +
                                 (action >= 0 ? " (action " + std::to_string(action) + ")" : std::string{}),
                             action);
    }
    const MatrixXd& v = es.eigenvectors();
    return symmetrize(v * ev.cwiseInverse().asDiagonal() * v.transpose());
}

/// Clamp eigenvalues of a symmetric matrix from below.
inline MatrixXd eigen_floor(const MatrixXd& m, double floor) {
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(symmetrize(m));
    VectorXd ev = es.eigenvalues().cwiseMax(floor);
    return symmetrize(es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose());
}

/// Lower Cholesky factor of a positive semi-definite matrix; falls back to an
/// eigen square root when the factorization fails on near-singular input.
inline MatrixXd sqrt_factor(const MatrixXd& m) {
    Eigen::LLT<MatrixXd> llt(symmetrize(m));
    if (llt.info() == Eigen::Success) return llt.matrixL();
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(symmetrize(m));
    VectorXd root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return es.eigenvectors() * root.asDiagonal();
}

inline VectorXd sample_gaussian(const VectorXd& mean, const MatrixXd& factor, Rng& rng) {
    return mean + factor * standard_normal(mean.size(), rng);
}

// ---------------------------------------------------------------------------
// Statistics helpers
// ---------------------------------------------------------------------------

/// Neumaier-compensated accumulator.
class CompensatedSum {
public:
    void add(double v) {
        const double t = sum_ + v;
        if (std::abs(sum_) >= std::abs(v))
            comp_ += (sum_ - t) + v;
        else
            comp_ += (v - t) + sum_;
        sum_ = t;
    }
    double value() const { return sum_ + comp_; }

private:
    double sum_ = 0.0;
    double comp_ = 0.0;
};

inline double mean_of(std::span<const double> xs) {
    CompensatedSum s;
    for (double x : xs) s.add(x);
    return xs.empty() ? 0.0 : s.value() / static_cast<double>(xs.size());
}

/// Standard error of the mean (sample standard deviation / sqrt(n)); 0 for n < 2.
inline double std_error_of(std::span<const double> xs) {
    if (xs.size() < 2) return 0.0;
    const double m = mean_of(xs);
    CompensatedSum s;
    for (double x : xs) s.add((x - m) * (x - m));
    const double var = s.value() / static_cast<double>(xs.size() - 1);
    return std::sqrt(var / static_cast<double>(xs.size()));
}

inline double sigmoid(double u) {
    if (u >= 0) {
        const double e = std::exp(-u);
        return 1.0 / (1.0 + e);
    }
    const double e = std::exp(u);
    return e / (1.0 + e);
}

/// argmax with lowest-index tie break.
inline ActionId argmax(const VectorXd& scores) {
    ActionId best = 0;
    for (Eigen::Index a = 1; a < scores.size(); ++a)
        if (scores(a) > scores(static_cast<Eigen::Index>(best))) best = static_cast<ActionId>(a);
    return best;
}

}  // namespace sdm
