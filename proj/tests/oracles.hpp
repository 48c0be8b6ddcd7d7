#pragma once

// Independent reference implementations used only by the test suites.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "qvit/tensor.hpp"

namespace oracle {

using cplx = std::complex<double>;

/// Dense square complex matrix.
struct Matrix {
    std::size_t n = 0;
    std::vector<cplx> a;

    explicit Matrix(std::size_t dim) : n(dim), a(dim * dim) {}
    static Matrix identity(std::size_t dim) {
        Matrix m(dim);
        for (std::size_t i = 0; i < dim; ++i) m(i, i) = 1.0;
        return m;
    }
    cplx& operator()(std::size_t i, std::size_t j) { return a[i * n + j]; }
    cplx operator()(std::size_t i, std::size_t j) const { return a[i * n + j]; }
};

inline Matrix operator*(const Matrix& x, const Matrix& y) {
    Matrix out(x.n);
    for (std::size_t i = 0; i < x.n; ++i)
        for (std::size_t k = 0; k < x.n; ++k)
            for (std::size_t j = 0; j < x.n; ++j) out(i, j) += x(i, k) * y(k, j);
    return out;
}

inline Matrix operator+(const Matrix& x, const Matrix& y) {
    Matrix out(x.n);
    for (std::size_t i = 0; i < x.a.size(); ++i) out.a[i] = x.a[i] + y.a[i];
    return out;
}

inline Matrix kron(const Matrix& x, const Matrix& y) {
    Matrix out(x.n * y.n);
    for (std::size_t i = 0; i < x.n; ++i)
        for (std::size_t j = 0; j < x.n; ++j)
            for (std::size_t k = 0; k < y.n; ++k)
                for (std::size_t l = 0; l < y.n; ++l) out(i * y.n + k, j * y.n + l) = x(i, j) * y(k, l);
    return out;
}

inline Matrix rx(double t) {
    Matrix m(2);
    m(0, 0) = m(1, 1) = std::cos(t / 2);
    m(0, 1) = m(1, 0) = cplx(0, -std::sin(t / 2));
    return m;
}

// d RX / dt
inline Matrix drx(double t) {
    Matrix m(2);
    m(0, 0) = m(1, 1) = -0.5 * std::sin(t / 2);
    m(0, 1) = m(1, 0) = cplx(0, -0.5 * std::cos(t / 2));
    return m;
}

inline Matrix pauli_x() {
    Matrix m(2);
    m(0, 1) = m(1, 0) = 1.0;
    return m;
}
inline Matrix pauli_z() {
    Matrix m(2);
    m(0, 0) = 1.0;
    m(1, 1) = -1.0;
    return m;
}
inline Matrix proj(int bit) {
    Matrix m(2);
    m(bit, bit) = 1.0;
    return m;
}

/// Embeds single-qubit operators: ops[q] acts on qubit q (qubit 0 leftmost /
/// most significant); missing entries are identity.
inline Matrix embed(std::size_t n, const std::vector<std::pair<std::size_t, Matrix>>& ops) {
    Matrix out = Matrix::identity(1);
    for (std::size_t q = 0; q < n; ++q) {
        Matrix factor = Matrix::identity(2);
        for (const auto& [target, m] : ops)
            if (target == q) factor = m;
        out = kron(out, factor);
    }
    return out;
}

inline Matrix cnot(std::size_t n, std::size_t control, std::size_t target) {
    return embed(n, {{control, proj(0)}}) + embed(n, {{control, proj(1)}, {target, pauli_x()}});
}

inline std::vector<std::pair<std::size_t, std::size_t>> ring(std::size_t n) {
    std::vector<std::pair<std::size_t, std::size_t>> r;
    if (n >= 2)
        for (std::size_t i = 0; i < n; ++i) r.emplace_back(i, (i + 1) % n);
    return r;
}

inline std::vector<cplx> mat_vec(const Matrix& m, const std::vector<cplx>& v) {
    std::vector<cplx> out(m.n);
    for (std::size_t i = 0; i < m.n; ++i)
        for (std::size_t j = 0; j < m.n; ++j) out[i] += m(i, j) * v[j];
    return out;
}

/// Full circuit unitary: CNOT ring · Π RX(θ) · Π RX(x). When `deriv` names a
/// gate index (0..n-1 input, n..2n-1 angle), that gate is replaced by its
/// derivative.
inline Matrix circuit(std::size_t n, std::span<const double> x, std::span<const double> theta, long deriv = -1) {
    Matrix u = Matrix::identity(std::size_t{1} << n);
    for (std::size_t g = 0; g < 2 * n; ++g) {
        const std::size_t q = g % n;
        const double angle = g < n ? x[q] : theta[q];
        const Matrix single = static_cast<long>(g) == deriv ? drx(angle) : rx(angle);
        u = embed(n, {{q, single}}) * u;
    }
    for (const auto& [c, t] : ring(n)) u = cnot(n, c, t) * u;
    return u;
}

inline std::vector<cplx> zero_state(std::size_t n) {
    std::vector<cplx> v(std::size_t{1} << n);
    v[0] = 1.0;
    return v;
}

inline std::vector<double> forward(std::size_t n, std::span<const double> x, std::span<const double> theta) {
    auto psi = mat_vec(circuit(n, x, theta), zero_state(n));
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        auto zpsi = mat_vec(embed(n, {{i, pauli_z()}}), psi);
        cplx acc = 0;
        for (std::size_t k = 0; k < psi.size(); ++k) acc += std::conj(psi[k]) * zpsi[k];
        out[i] = acc.real();
    }
    return out;
}

/// J[i][j] = d⟨Z_i⟩/d(angle j), via the analytic derivative of the dense unitary.
inline std::vector<std::vector<double>> jacobian(std::size_t n, std::span<const double> x,
                                                 std::span<const double> theta, bool wrt_input) {
    auto psi = mat_vec(circuit(n, x, theta), zero_state(n));
    std::vector<std::vector<double>> jac(n, std::vector<double>(n));
    for (std::size_t j = 0; j < n; ++j) {
        auto dpsi = mat_vec(circuit(n, x, theta, static_cast<long>(wrt_input ? j : n + j)), zero_state(n));
        for (std::size_t i = 0; i < n; ++i) {
            auto zd = mat_vec(embed(n, {{i, pauli_z()}}), dpsi);
            cplx acc = 0;
            for (std::size_t k = 0; k < psi.size(); ++k) acc += std::conj(psi[k]) * zd[k];
            jac[i][j] = 2.0 * acc.real();
        }
    }
    return jac;
}

/// (#correctly ordered pos/neg pairs + 0.5 · #ties) / (P · N)
inline double wilcoxon_auc(std::span<const double> scores, std::span<const int> labels) {
    double good = 0.0;
    std::size_t pos = 0, neg = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (labels[i] != 1) continue;
        ++pos;
        for (std::size_t j = 0; j < scores.size(); ++j) {
            if (labels[j] != 0) continue;
            if (scores[i] > scores[j]) good += 1.0;
            else if (scores[i] == scores[j]) good += 0.5;
        }
    }
    for (int l : labels) neg += l == 0;
    return good / (static_cast<double>(pos) * static_cast<double>(neg));
}

inline qvit::Tensor random_tensor(std::mt19937_64& rng, qvit::Shape shape, bool requires_grad = true,
                                  double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> dist(lo, hi);
    std::vector<double> v(qvit::numel(shape));
    for (auto& x : v) x = dist(rng);
    return qvit::Tensor(std::move(shape), std::move(v), requires_grad);
}

}  // namespace oracle
