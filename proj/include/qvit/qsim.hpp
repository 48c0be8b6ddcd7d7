#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <numbers>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "qvit/errors.hpp"
#include "qvit/tensor.hpp"

namespace qvit::qsim {

using Amplitude = std::complex<double>;

/// n-qubit register. Qubit 0 is the most significant bit of the amplitude
/// index, so |q0 q1 … q(n-1)⟩ lives at index q0·2^(n-1) + … + q(n-1).
class StateVector {
public:
    /// |0…0⟩
    explicit StateVector(std::size_t n_qubits) : n_qubits_(n_qubits) {
        if (n_qubits == 0 || n_qubits > 30) throw ContractError("qubit count must be in [1, 30]");
        amps_.assign(std::size_t{1} << n_qubits, Amplitude{0.0, 0.0});
        amps_[0] = 1.0;
    }

    StateVector(std::size_t n_qubits, std::vector<Amplitude> amplitudes) : n_qubits_(n_qubits) {
        if (n_qubits == 0 || n_qubits > 30) throw ContractError("qubit count must be in [1, 30]");
        if (amplitudes.size() != (std::size_t{1} << n_qubits))
            throw DimensionError("state of " + std::to_string(n_qubits) + " qubits needs " +
                                 std::to_string(std::size_t{1} << n_qubits) + " amplitudes, got " +
                                 std::to_string(amplitudes.size()));
        amps_ = std::move(amplitudes);
        if (std::abs(norm_squared() - 1.0) > 1e-12) throw ContractError("state vector is not normalized");
    }

    std::size_t n_qubits() const { return n_qubits_; }
    std::size_t dimension() const { return amps_.size(); }
    std::span<const Amplitude> amplitudes() const { return amps_; }
    const Amplitude& operator[](std::size_t i) const { return amps_[i]; }

    double norm_squared() const {
        double total = 0.0;
        for (const auto& a : amps_) total += std::norm(a);
        return total;
    }

    std::size_t mask(std::size_t qubit) const {
        if (qubit >= n_qubits_)
            throw RangeError("qubit " + std::to_string(qubit) + " out of range for " + std::to_string(n_qubits_) +
                             "-qubit register");
        return std::size_t{1} << (n_qubits_ - 1 - qubit);
    }

    // In-place kernels, O(2^n) each.

    void rx(std::size_t qubit, double angle) {
        const std::size_t m = mask(qubit);
        const double c = std::cos(0.5 * angle), s = std::sin(0.5 * angle);
        for (std::size_t i = 0; i < amps_.size(); ++i) {
            if (i & m) continue;
            const Amplitude a0 = amps_[i], a1 = amps_[i | m];
            // [c, -is; -is, c]
            amps_[i] = {c * a0.real() + s * a1.imag(), c * a0.imag() - s * a1.real()};
            amps_[i | m] = {s * a0.imag() + c * a1.real(), -s * a0.real() + c * a1.imag()};
        }
    }

    void cnot(std::size_t control, std::size_t target) {
        if (control == target) throw ContractError("CNOT control and target must differ");
        const std::size_t cm = mask(control), tm = mask(target);
        for (std::size_t i = 0; i < amps_.size(); ++i)
            if ((i & cm) && !(i & tm)) std::swap(amps_[i], amps_[i | tm]);
    }

    // Σ_k conj(bra_k)·(X_q ψ)_k, used by the adjoint sweep.
    Amplitude overlap_with_x(const StateVector& bra, std::size_t qubit) const {
        const std::size_t m = mask(qubit);
        Amplitude acc{0.0, 0.0};
        for (std::size_t i = 0; i < amps_.size(); ++i) acc += std::conj(bra.amps_[i]) * amps_[i ^ m];
        return acc;
    }

    // ψ_k ← w_k ψ_k for a real diagonal operator.
    void multiply_diagonal(std::span<const double> diag) {
        for (std::size_t i = 0; i < amps_.size(); ++i) amps_[i] *= diag[i];
    }

private:
    std::size_t n_qubits_;
    std::vector<Amplitude> amps_;
};

inline StateVector apply_rx(StateVector state, std::size_t qubit, double angle) {
    state.rx(qubit, angle);
    return state;
}

inline StateVector apply_cnot(StateVector state, std::size_t control, std::size_t target) {
    state.cnot(control, target);
    return state;
}

/// Per-qubit ⟨Z⟩: +|a|² where the qubit's bit is 0, −|a|² where it is 1.
inline std::vector<double> expect_z_all(const StateVector& state) {
    const std::size_t n = state.n_qubits();
    std::vector<double> out(n, 0.0);
    for (std::size_t i = 0; i < state.dimension(); ++i) {
        const double p = std::norm(state[i]);
        for (std::size_t q = 0; q < n; ++q) out[q] += (i & state.mask(q)) ? -p : p;
    }
    return out;
}

/// Circuit shape: RX angle embedding, one trainable RX per wire, then a ring
/// of CNOTs (i → i+1 mod n). Two qubits use (0→1),(1→0); one qubit has no ring.
class VqcSpec {
public:
    explicit VqcSpec(std::size_t n_qubits) : n_qubits_(n_qubits) {
        if (n_qubits == 0) throw ContractError("a VQC needs at least one qubit");
        if (n_qubits == 1) return;
        for (std::size_t i = 0; i < n_qubits; ++i) ring_.emplace_back(i, (i + 1) % n_qubits);
    }

    std::size_t n_qubits() const { return n_qubits_; }
    const std::vector<std::pair<std::size_t, std::size_t>>& ring() const { return ring_; }

private:
    std::size_t n_qubits_;
    std::vector<std::pair<std::size_t, std::size_t>> ring_;
};

namespace detail {

inline void check_lengths(const VqcSpec& spec, std::span<const double> x, std::span<const double> theta) {
    if (x.size() != spec.n_qubits() || theta.size() != spec.n_qubits())
        throw DimensionError("VQC of " + std::to_string(spec.n_qubits()) + " qubits given " +
                             std::to_string(x.size()) + " inputs and " + std::to_string(theta.size()) + " angles");
}

inline StateVector prepare(const VqcSpec& spec, std::span<const double> x, std::span<const double> theta) {
    StateVector state(spec.n_qubits());
    for (std::size_t q = 0; q < spec.n_qubits(); ++q) state.rx(q, x[q]);
    for (std::size_t q = 0; q < spec.n_qubits(); ++q) state.rx(q, theta[q]);
    for (const auto& [c, t] : spec.ring()) state.cnot(c, t);
    return state;
}

}  // namespace detail

inline std::vector<double> vqc_forward(const VqcSpec& spec, std::span<const double> x, std::span<const double> theta) {
    detail::check_lengths(spec, x, theta);
    return expect_z_all(detail::prepare(spec, x, theta));
}

/// Dense row-major Jacobian, rows = outputs.
struct Jacobian {
    std::size_t rows = 0, cols = 0;
    std::vector<double> data;

    Jacobian(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}
    double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }
};

namespace detail {

// Shift rule for gates exp(-iφX/2): ∂f/∂φ = (f(φ+π/2) − f(φ−π/2))/2.
inline Jacobian parameter_shift(const VqcSpec& spec, std::span<const double> x, std::span<const double> theta,
                                bool wrt_input) {
    check_lengths(spec, x, theta);
    const std::size_t n = spec.n_qubits();
    std::vector<double> xs(x.begin(), x.end()), ts(theta.begin(), theta.end());
    auto& shifted = wrt_input ? xs : ts;
    Jacobian jac(n, n);
    for (std::size_t j = 0; j < n; ++j) {
        const double saved = shifted[j];
        shifted[j] = saved + std::numbers::pi / 2;
        auto plus = vqc_forward(spec, xs, ts);
        shifted[j] = saved - std::numbers::pi / 2;
        auto minus = vqc_forward(spec, xs, ts);
        shifted[j] = saved;
        for (std::size_t i = 0; i < n; ++i) jac(i, j) = 0.5 * (plus[i] - minus[i]);
    }
    return jac;
}

}  // namespace detail

inline Jacobian vqc_grad_theta(const VqcSpec& spec, std::span<const double> x, std::span<const double> theta) {
    return detail::parameter_shift(spec, x, theta, false);
}

inline Jacobian vqc_grad_input(const VqcSpec& spec, std::span<const double> x, std::span<const double> theta) {
    return detail::parameter_shift(spec, x, theta, true);
}

struct VqcVjp {
    std::vector<double> grad_input;
    std::vector<double> grad_theta;
};

/// Vector-Jacobian product cᵀJ for both the inputs and the angles in a single
/// forward + reverse sweep over the amplitudes (adjoint differentiation).
inline VqcVjp vqc_vjp_adjoint(const VqcSpec& spec, std::span<const double> x, std::span<const double> theta,
                              std::span<const double> cotangent) {
    detail::check_lengths(spec, x, theta);
    const std::size_t n = spec.n_qubits();
    if (cotangent.size() != n) throw DimensionError("cotangent length does not match qubit count");

    StateVector psi = detail::prepare(spec, x, theta);
    std::vector<double> observable(psi.dimension(), 0.0);
    for (std::size_t i = 0; i < psi.dimension(); ++i)
        for (std::size_t q = 0; q < n; ++q) observable[i] += (i & psi.mask(q)) ? -cotangent[q] : cotangent[q];
    StateVector lambda = psi;
    lambda.multiply_diagonal(observable);

    VqcVjp out{std::vector<double>(n, 0.0), std::vector<double>(n, 0.0)};
    const auto& ring = spec.ring();
    for (auto it = ring.rbegin(); it != ring.rend(); ++it) {
        psi.cnot(it->first, it->second);
        lambda.cnot(it->first, it->second);
    }
    // d/dφ ⟨ψ|O|ψ⟩ = 2 Re⟨λ|(−i/2) X ψ_after⟩ = Im⟨λ|X ψ_after⟩
    auto sweep_layer = [&](std::span<const double> angles, std::vector<double>& grads) {
        for (std::size_t q = n; q-- > 0;) {
            grads[q] = psi.overlap_with_x(lambda, q).imag();
            psi.rx(q, -angles[q]);
            lambda.rx(q, -angles[q]);
        }
    };
    sweep_layer(theta, out.grad_theta);
    sweep_layer(x, out.grad_input);
    return out;
}

enum class GradientMethod { parameter_shift, adjoint };

/// Applies the VQC to every trailing-axis slice of X. The backward rule
/// propagates to X and accumulates θ-gradients over slices in row order.
inline Tensor quantum_linear(Tape& tape, const VqcSpec& spec, const Tensor& theta, const Tensor& x,
                             GradientMethod method = GradientMethod::parameter_shift) {
    const std::size_t n = spec.n_qubits();
    if (theta.shape() != Shape{n})
        throw DimensionError("quantum_linear: theta " + shape_str(theta.shape()) + " for " + std::to_string(n) +
                             "-qubit circuit");
    if (x.rank() == 0 || x.shape().back() != n)
        throw DimensionError("quantum_linear: input " + shape_str(x.shape()) + " has trailing dimension != " +
                             std::to_string(n));
    const std::size_t rows = x.size() / n;
    std::vector<double> out(x.size());
    for (std::size_t r = 0; r < rows; ++r) {
        auto row = vqc_forward(spec, x.values().subspan(r * n, n), theta.values());
        std::copy(row.begin(), row.end(), out.begin() + r * n);
    }
    return tape.record(Tensor(x.shape(), std::move(out)), {x, theta}, [spec, x, theta, rows, n, method](auto g, auto gin) {
        for (std::size_t r = 0; r < rows; ++r) {
            auto xr = x.values().subspan(r * n, n);
            auto gr = g.subspan(r * n, n);
            if (method == GradientMethod::adjoint) {
                auto vjp = vqc_vjp_adjoint(spec, xr, theta.values(), gr);
                if (!gin[0].empty())
                    for (std::size_t j = 0; j < n; ++j) gin[0][r * n + j] += vjp.grad_input[j];
                if (!gin[1].empty())
                    for (std::size_t j = 0; j < n; ++j) gin[1][j] += vjp.grad_theta[j];
                continue;
            }
            if (!gin[0].empty()) {
                auto jac = vqc_grad_input(spec, xr, theta.values());
                for (std::size_t j = 0; j < n; ++j) {
                    double acc = 0.0;
                    for (std::size_t i = 0; i < n; ++i) acc += gr[i] * jac(i, j);
                    gin[0][r * n + j] += acc;
                }
            }
            if (!gin[1].empty()) {
                auto jac = vqc_grad_theta(spec, xr, theta.values());
                for (std::size_t j = 0; j < n; ++j) {
                    double acc = 0.0;
                    for (std::size_t i = 0; i < n; ++i) acc += gr[i] * jac(i, j);
                    gin[1][j] += acc;
                }
            }
        }
    });
}

}  // namespace qvit::qsim
