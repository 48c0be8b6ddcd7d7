#pragma once

#include <algorithm>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "qvit/model.hpp"
#include "qvit/qsim.hpp"
#include "qvit/tensor.hpp"

namespace qvit::gradcheck {

struct GroupResult {
    std::string name;
    double max_abs_error = 0.0;
    double max_rel_error = 0.0;
    double tolerance = 0.0;
    bool relative = true;  // which error the tolerance applies to
    bool passed() const { return (relative ? max_rel_error : max_abs_error) <= tolerance; }
};

struct Report {
    std::vector<GroupResult> groups;
    bool passed() const {
        return std::all_of(groups.begin(), groups.end(), [](const GroupResult& g) { return g.passed(); });
    }
};

/// 20×20 three-channel images, patch 10, D = 4, two heads, one quantum block.
inline ModelConfig tiny_quantum_config() {
    ModelConfig cfg;
    cfg.image_size = 20;
    cfg.crop_size = 20;
    cfg.patch_size = 10;
    cfg.hidden_size = 4;
    cfg.num_heads = 2;
    cfg.num_blocks = 1;
    cfg.mode = Mode::quantum;
    return cfg;
}

/// Parameter-shift Jacobians vs central differences (h = 1e-6, 1e-8 absolute),
/// and the adjoint sweep vs parameter shift (1e-10 absolute), for 1–4 qubits.
inline std::vector<GroupResult> check_circuits(std::uint64_t seed, std::size_t trials = 20) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> angle(-std::numbers::pi, std::numbers::pi);
    std::vector<GroupResult> out;
    for (std::size_t n = 1; n <= 4; ++n) {
        qsim::VqcSpec spec(n);
        GroupResult fd{"qsim.shift_vs_fd." + std::to_string(n) + "q", 0, 0, 1e-8, false};
        GroupResult adj{"qsim.adjoint_vs_shift." + std::to_string(n) + "q", 0, 0, 1e-10, false};
        for (std::size_t t = 0; t < trials; ++t) {
            std::vector<double> x(n), theta(n), cot(n);
            for (auto* v : {&x, &theta, &cot})
                for (auto& a : *v) a = angle(rng);
            auto jt = qsim::vqc_grad_theta(spec, x, theta);
            auto jx = qsim::vqc_grad_input(spec, x, theta);
            const double h = 1e-6;
            for (std::size_t j = 0; j < n; ++j) {
                for (auto [vec, jac] : {std::pair{&theta, &jt}, std::pair{&x, &jx}}) {
                    const double saved = (*vec)[j];
                    (*vec)[j] = saved + h;
                    auto up = qsim::vqc_forward(spec, x, theta);
                    (*vec)[j] = saved - h;
                    auto down = qsim::vqc_forward(spec, x, theta);
                    (*vec)[j] = saved;
                    for (std::size_t i = 0; i < n; ++i) {
                        const double err = std::abs((up[i] - down[i]) / (2 * h) - (*jac)(i, j));
                        fd.max_abs_error = std::max(fd.max_abs_error, err);
                    }
                }
            }
            auto vjp = qsim::vqc_vjp_adjoint(spec, x, theta, cot);
            for (std::size_t j = 0; j < n; ++j) {
                double et = -vjp.grad_theta[j], ex = -vjp.grad_input[j];
                for (std::size_t i = 0; i < n; ++i) {
                    et += cot[i] * jt(i, j);
                    ex += cot[i] * jx(i, j);
                }
                adj.max_abs_error = std::max({adj.max_abs_error, std::abs(et), std::abs(ex)});
            }
        }
        out.push_back(fd);
        out.push_back(adj);
    }
    return out;
}

/// Autodiff gradient of the cross-entropy of one random image vs central
/// differences, grouped by registry component.
inline std::vector<GroupResult> check_model(const ModelConfig& cfg, std::uint64_t seed, double h = 1e-5,
                                            double tolerance = 1e-4, double abs_floor = 1e-6) {
    auto params = init_params(cfg, seed);
    std::mt19937_64 rng(seed + 1);
    std::uniform_real_distribution<double> pixel(0.0, 1.0);
    std::vector<double> pixels(cfg.channels * cfg.image_size * cfg.image_size);
    for (auto& p : pixels) p = pixel(rng);
    const Tensor image({cfg.channels, cfg.image_size, cfg.image_size}, pixels);
    const int label = static_cast<int>(seed % cfg.num_classes);
    auto loss_fn = [&](Tape& tape) {
        auto logits = forward(tape, image, params, cfg);
        return cross_entropy_logits(tape, reshape(tape, logits, {1, cfg.num_classes}), std::span(&label, 1));
    };
    std::vector<GroupResult> out;
    for (auto& entry : params.entries()) {
        auto report = finite_diff_check(loss_fn, entry.tensor, h, abs_floor);
        auto it = std::find_if(out.begin(), out.end(), [&](const GroupResult& g) { return g.name == "model." + entry.group; });
        if (it == out.end()) {
            out.push_back({"model." + entry.group, 0, 0, tolerance, true});
            it = std::prev(out.end());
        }
        it->max_abs_error = std::max(it->max_abs_error, report.max_abs_error);
        it->max_rel_error = std::max(it->max_rel_error, report.max_rel_error);
    }
    return out;
}

inline Report run(std::uint64_t seed, const ModelConfig& cfg = tiny_quantum_config()) {
    Report report;
    report.groups = check_circuits(seed);
    auto model = check_model(cfg, seed);
    report.groups.insert(report.groups.end(), model.begin(), model.end());
    return report;
}

}  // namespace qvit::gradcheck
