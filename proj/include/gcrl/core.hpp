#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace gcrl {

using Vec = std::vector<double>;

namespace detail {
inline void cat_one(std::ostringstream&) {}
template <class T, class... Rest>
void cat_one(std::ostringstream& os, T&& v, Rest&&... rest) {
    os << v;
    cat_one(os, std::forward<Rest>(rest)...);
}
}  // namespace detail

template <class... Args>
std::string cat(Args&&... args) {
    std::ostringstream os;
    detail::cat_one(os, std::forward<Args>(args)...);
    return os.str();
}

/// Base error for all library failures.
struct Error : std::runtime_error {
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// Bad user-supplied configuration (CLI exit code 2).
struct ConfigError : Error {
    explicit ConfigError(const std::string& what) : Error(what) {}
};

/// Non-finite values encountered mid-computation (CLI exit code 3).
struct NumericalError : Error {
    explicit NumericalError(const std::string& what) : Error(what) {}
};

template <class... Args>
void require(bool cond, Args&&... args) {
    if (!cond) throw Error(cat(std::forward<Args>(args)...));
}

inline bool all_finite(const Vec& v) {
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

// ---------------------------------------------------------------------------
// Dense row-major matrix. Big enough for 256-wide nets, nothing fancier.
// ---------------------------------------------------------------------------

struct Matrix {
    int rows = 0;
    int cols = 0;
    std::vector<double> a;

    Matrix() = default;
    Matrix(int r, int c) : rows(r), cols(c), a(static_cast<size_t>(r) * c, 0.0) {}

    double& operator()(int i, int j) { return a[static_cast<size_t>(i) * cols + j]; }
    double operator()(int i, int j) const { return a[static_cast<size_t>(i) * cols + j]; }
    double* row(int i) { return a.data() + static_cast<size_t>(i) * cols; }
    const double* row(int i) const { return a.data() + static_cast<size_t>(i) * cols; }
    size_t size() const { return a.size(); }
    void set_zero() { std::fill(a.begin(), a.end(), 0.0); }

    Vec row_vec(int i) const { return Vec(row(i), row(i) + cols); }
    void set_row(int i, const Vec& v) {
        require(static_cast<int>(v.size()) == cols, "Matrix::set_row: dim mismatch");
        std::copy(v.begin(), v.end(), row(i));
    }

    bool all_finite() const {
        for (double x : a)
            if (!std::isfinite(x)) return false;
        return true;
    }
};

/// C += A * B. ikj loop order so the inner loop is a contiguous axpy.
inline void gemm_ab(const Matrix& A, const Matrix& B, Matrix& C) {
    require(A.cols == B.rows && A.rows == C.rows && B.cols == C.cols,
            "gemm_ab: shape mismatch (", A.rows, "x", A.cols, " * ", B.rows, "x", B.cols, ")");
    const int n = A.rows, m = A.cols, p = B.cols;
    for (int i = 0; i < n; ++i) {
        const double* arow = A.row(i);
        double* crow = C.row(i);
        for (int k = 0; k < m; ++k) {
            const double aik = arow[k];
            if (aik == 0.0) continue;
            const double* brow = B.row(k);
            for (int j = 0; j < p; ++j) crow[j] += aik * brow[j];
        }
    }
}

/// C += A^T * B, with A stored n x m (so C is m x p).
inline void gemm_atb(const Matrix& A, const Matrix& B, Matrix& C) {
    require(A.rows == B.rows && A.cols == C.rows && B.cols == C.cols,
            "gemm_atb: shape mismatch");
    const int n = A.rows, m = A.cols, p = B.cols;
    for (int i = 0; i < n; ++i) {
        const double* arow = A.row(i);
        const double* brow = B.row(i);
        for (int k = 0; k < m; ++k) {
            const double aki = arow[k];
            if (aki == 0.0) continue;
            double* crow = C.row(k);
            for (int j = 0; j < p; ++j) crow[j] += aki * brow[j];
        }
    }
}

inline Matrix transpose(const Matrix& A) {
    Matrix T(A.cols, A.rows);
    for (int i = 0; i < A.rows; ++i)
        for (int j = 0; j < A.cols; ++j) T(j, i) = A(i, j);
    return T;
}

/// y = W * x for W stored out x in.
inline Vec matvec(const Matrix& W, const Vec& x) {
    require(W.cols == static_cast<int>(x.size()), "matvec: dim mismatch");
    Vec y(W.rows, 0.0);
    for (int i = 0; i < W.rows; ++i) {
        const double* wrow = W.row(i);
        double s = 0.0;
        for (int j = 0; j < W.cols; ++j) s += wrow[j] * x[j];
        y[i] = s;
    }
    return y;
}

/// y = W^T * d for W stored out x in.
inline Vec matvec_t(const Matrix& W, const Vec& d) {
    require(W.rows == static_cast<int>(d.size()), "matvec_t: dim mismatch");
    Vec y(W.cols, 0.0);
    for (int i = 0; i < W.rows; ++i) {
        const double di = d[i];
        if (di == 0.0) continue;
        const double* wrow = W.row(i);
        for (int j = 0; j < W.cols; ++j) y[j] += di * wrow[j];
    }
    return y;
}

inline double dot(const Vec& a, const Vec& b) {
    require(a.size() == b.size(), "dot: dim mismatch");
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double norm2(const Vec& a) { return std::sqrt(dot(a, a)); }

inline double linf_dist(const Vec& a, const Vec& b) {
    require(a.size() == b.size(), "linf_dist: dim mismatch");
    double m = 0.0;
    for (size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

inline Vec concat(const Vec& a, const Vec& b) {
    Vec r;
    r.reserve(a.size() + b.size());
    r.insert(r.end(), a.begin(), a.end());
    r.insert(r.end(), b.begin(), b.end());
    return r;
}

inline Vec concat(const Vec& a, const Vec& b, const Vec& c) {
    Vec r;
    r.reserve(a.size() + b.size() + c.size());
    r.insert(r.end(), a.begin(), a.end());
    r.insert(r.end(), b.begin(), b.end());
    r.insert(r.end(), c.begin(), c.end());
    return r;
}

// ---------------------------------------------------------------------------
// Deterministic RNG. All randomness in the library flows through Rng so runs
// are bit-reproducible; distributions are implemented by hand because the
// std:: ones are implementation-defined.
// ---------------------------------------------------------------------------

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Derive an independent stream seed from a parent seed and stream ids.
inline uint64_t derive_seed(uint64_t seed, uint64_t a, uint64_t b = 0, uint64_t c = 0) {
    uint64_t s = splitmix64(seed ^ splitmix64(a));
    s = splitmix64(s ^ splitmix64(b + 0x517cc1b727220a95ULL));
    return splitmix64(s ^ splitmix64(c + 0x2545f4914f6cdd1dULL));
}

class Rng {
public:
    explicit Rng(uint64_t seed = 0) : gen_(seed) {}

    uint64_t bits() { return gen_(); }

    /// Uniform double in [0, 1).
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Unbiased uniform index in [0, n).
    size_t index(size_t n) {
        require(n > 0, "Rng::index: n == 0");
        const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        uint64_t u;
        do {
            u = gen_();
        } while (u >= limit);
        return static_cast<size_t>(u % n);
    }

    Vec uniform_vec(size_t n, double lo, double hi) {
        Vec v(n);
        for (auto& x : v) x = uniform(lo, hi);
        return v;
    }

    /// Fisher-Yates permutation of {0, ..., n-1}.
    std::vector<size_t> permutation(size_t n) {
        std::vector<size_t> p(n);
        for (size_t i = 0; i < n; ++i) p[i] = i;
        for (size_t i = n; i > 1; --i) std::swap(p[i - 1], p[index(i)]);
        return p;
    }

private:
    std::mt19937_64 gen_;
};

// ---------------------------------------------------------------------------
// Little-endian binary IO for the dataset / checkpoint containers.
// ---------------------------------------------------------------------------

class BinWriter {
public:
    explicit BinWriter(std::ostream& os) : os_(os) {}

    void u8(uint8_t v) { os_.put(static_cast<char>(v)); }
    void u32(uint32_t v) {
        for (int i = 0; i < 4; ++i) os_.put(static_cast<char>((v >> (8 * i)) & 0xff));
    }
    void u64(uint64_t v) {
        for (int i = 0; i < 8; ++i) os_.put(static_cast<char>((v >> (8 * i)) & 0xff));
    }
    void f64(double v) {
        uint64_t u;
        std::memcpy(&u, &v, 8);
        u64(u);
    }
    void str(const std::string& s) {
        u32(static_cast<uint32_t>(s.size()));
        os_.write(s.data(), static_cast<std::streamsize>(s.size()));
    }
    void vec(const Vec& v) {
        for (double x : v) f64(x);
    }

private:
    std::ostream& os_;
};

class BinReader {
public:
    explicit BinReader(std::istream& is) : is_(is) {}

    uint8_t u8() {
        int c = is_.get();
        require(c != EOF, "BinReader: unexpected end of stream");
        return static_cast<uint8_t>(c);
    }
    uint32_t u32() {
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(u8()) << (8 * i);
        return v;
    }
    uint64_t u64() {
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(u8()) << (8 * i);
        return v;
    }
    double f64() {
        uint64_t u = u64();
        double v;
        std::memcpy(&v, &u, 8);
        return v;
    }
    std::string str() {
        uint32_t n = u32();
        std::string s(n, '\0');
        is_.read(s.data(), n);
        require(static_cast<uint32_t>(is_.gcount()) == n, "BinReader: truncated string");
        return s;
    }
    Vec vec(size_t n) {
        Vec v(n);
        for (auto& x : v) x = f64();
        return v;
    }

private:
    std::istream& is_;
};

}  // namespace gcrl
