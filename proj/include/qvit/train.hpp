#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <numbers>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "qvit/data.hpp"
#include "qvit/errors.hpp"
#include "qvit/model.hpp"
#include "qvit/tensor.hpp"

namespace qvit::train {

// ---------------------------------------------------------------------------
// Optimizers
// ---------------------------------------------------------------------------

namespace detail {
inline void check_aligned(const ParamStore& params, const ParamGrads& grads) {
    if (grads.size() != params.size())
        throw RegistryError("gradient list has " + std::to_string(grads.size()) + " entries, registry has " +
                            std::to_string(params.size()));
    auto entries = params.entries();
    for (std::size_t i = 0; i < grads.size(); ++i)
        if (grads[i].size() != entries[i].tensor.size())
            throw RegistryError("gradient for " + entries[i].name + " has " + std::to_string(grads[i].size()) +
                                " elements, parameter has " + std::to_string(entries[i].tensor.size()));
}
}  // namespace detail

/// θ ← θ − lr·∇L
inline void sgd_step(ParamStore& params, const ParamGrads& grads, double lr) {
    detail::check_aligned(params, grads);
    auto entries = params.entries();
    for (std::size_t i = 0; i < grads.size(); ++i) {
        auto values = entries[i].tensor.mutable_values();
        for (std::size_t k = 0; k < values.size(); ++k) values[k] -= lr * grads[i][k];
    }
}

struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-4;
};

struct OptimizerState {
    ParamGrads m, v;
    std::uint64_t t = 0;
    AdamWConfig hyper;

    static OptimizerState init(const ParamStore& params, AdamWConfig hyper = {}) {
        return {params.zero_grads(), params.zero_grads(), 0, hyper};
    }
};

/// Bias-corrected Adam with decoupled weight decay (p ← p − lr·wd·p) applied
/// only to registry entries flagged for decay.
inline void adamw_step(ParamStore& params, const ParamGrads& grads, OptimizerState& state, double lr) {
    detail::check_aligned(params, grads);
    detail::check_aligned(params, state.m);
    const auto& h = state.hyper;
    state.t += 1;
    const double bc1 = 1.0 - std::pow(h.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(h.beta2, static_cast<double>(state.t));
    auto entries = params.entries();
    for (std::size_t i = 0; i < grads.size(); ++i) {
        auto p = entries[i].tensor.mutable_values();
        const bool decay = entries[i].decay && h.weight_decay != 0.0;
        for (std::size_t k = 0; k < p.size(); ++k) {
            const double g = grads[i][k];
            auto& m = state.m[i][k];
            auto& v = state.v[i][k];
            m = h.beta1 * m + (1.0 - h.beta1) * g;
            v = h.beta2 * v + (1.0 - h.beta2) * g * g;
            if (decay) p[k] -= lr * h.weight_decay * p[k];
            p[k] -= lr * (m / bc1) / (std::sqrt(v / bc2) + h.eps);
        }
    }
}

inline double global_norm(const ParamGrads& grads) {
    double sq = 0.0;
    for (const auto& g : grads)
        for (double v : g) sq += v * v;
    return std::sqrt(sq);
}

/// Rescales all gradients by max_norm/‖g‖ when ‖g‖ > max_norm. Returns the
/// pre-clip norm.
inline double clip_global_norm(ParamGrads& grads, double max_norm = 1.0) {
    const double norm = global_norm(grads);
    if (norm > max_norm) {
        const double factor = max_norm / norm;
        for (auto& g : grads)
            for (auto& v : g) v *= factor;
    }
    return norm;
}

/// Linear warmup from 0 to `base`, then cosine decay to 0 at total_steps.
inline double lr_at(std::size_t step, std::size_t warmup, std::size_t total_steps, double base = 1e-3) {
    if (total_steps <= warmup)
        throw ConfigError("total_steps (" + std::to_string(total_steps) + ") must exceed warmup (" +
                          std::to_string(warmup) + ")");
    if (step > total_steps) throw RangeError("step beyond schedule horizon");
    if (warmup > 0 && step <= warmup) return base * static_cast<double>(step) / static_cast<double>(warmup);
    const double progress = static_cast<double>(step - warmup) / static_cast<double>(total_steps - warmup);
    return base * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

struct RocPoint {
    double fpr = 0.0, tpr = 0.0;
    double threshold = 0.0;  // predict positive when score >= threshold
};

/// One point per distinct score (descending thresholds) plus the (0,0)
/// origin at threshold +inf.
inline std::vector<RocPoint> roc_curve(std::span<const double> scores, std::span<const int> labels) {
    if (scores.size() != labels.size()) throw DimensionError("roc_curve: scores and labels differ in length");
    std::size_t pos = 0;
    for (int l : labels) {
        if (l != 0 && l != 1) throw MetricError("roc_curve: labels must be 0 or 1");
        pos += static_cast<std::size_t>(l);
    }
    const std::size_t neg = labels.size() - pos;
    if (pos == 0 || neg == 0) throw MetricError("roc_curve: both classes must be present");

    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] > scores[b]; });

    std::vector<RocPoint> roc{{0.0, 0.0, std::numeric_limits<double>::infinity()}};
    std::size_t tp = 0, fp = 0;
    for (std::size_t i = 0; i < order.size();) {
        const double s = scores[order[i]];
        for (; i < order.size() && scores[order[i]] == s; ++i) (labels[order[i]] ? tp : fp) += 1;
        roc.push_back({static_cast<double>(fp) / static_cast<double>(neg), static_cast<double>(tp) / static_cast<double>(pos), s});
    }
    return roc;
}

/// Trapezoidal area under the curve.
inline double auc(std::span<const RocPoint> roc) {
    double area = 0.0;
    for (std::size_t i = 1; i < roc.size(); ++i)
        area += (roc[i].fpr - roc[i - 1].fpr) * 0.5 * (roc[i].tpr + roc[i - 1].tpr);
    return area;
}

inline double auc(std::span<const double> scores, std::span<const int> labels) {
    auto roc = roc_curve(scores, labels);
    return auc(roc);
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct TrainConfig {
    std::size_t epochs = 10;
    std::size_t batch_size = 32;
    long long warmup_steps = -1;  // < 0: min(5000, 10 % of total steps)
    double base_lr = 1e-3;
    AdamWConfig adamw;
    double clip_norm = 1.0;
    std::size_t train_eval_subsample = 0;  // 0: evaluate on the full training split
    std::size_t max_train_samples = 0;     // 0: whole training split
    bool log_wall_time = true;
    std::size_t threads = 1;

    static TrainConfig full() {
        TrainConfig t;
        t.epochs = 25;
        t.batch_size = 256;
        t.warmup_steps = 5000;
        return t;
    }

    std::size_t resolve_warmup(std::size_t total_steps) const {
        if (warmup_steps >= 0) return static_cast<std::size_t>(warmup_steps);
        return std::max<std::size_t>(1, std::min<std::size_t>(5000, total_steps / 10));
    }
};

inline Json to_json(const TrainConfig& t) {
    return Json{{"epochs", t.epochs},
                {"batch_size", t.batch_size},
                {"warmup_steps", t.warmup_steps},
                {"base_lr", t.base_lr},
                {"beta1", t.adamw.beta1},
                {"beta2", t.adamw.beta2},
                {"eps", t.adamw.eps},
                {"weight_decay", t.adamw.weight_decay},
                {"clip_norm", t.clip_norm},
                {"train_eval_subsample", t.train_eval_subsample},
                {"max_train_samples", t.max_train_samples},
                {"log_wall_time", t.log_wall_time},
                {"threads", t.threads}};
}

inline TrainConfig train_config_from_json(const Json& j) {
    qvit::detail::reject_unknown_keys(j,
                                      {"epochs", "batch_size", "warmup_steps", "base_lr", "beta1", "beta2", "eps",
                                       "weight_decay", "clip_norm", "train_eval_subsample", "max_train_samples",
                                       "log_wall_time", "threads"},
                                      "train config");
    TrainConfig t;
    using qvit::detail::read_field;
    read_field(j, "epochs", t.epochs);
    read_field(j, "batch_size", t.batch_size);
    read_field(j, "warmup_steps", t.warmup_steps);
    read_field(j, "base_lr", t.base_lr);
    read_field(j, "beta1", t.adamw.beta1);
    read_field(j, "beta2", t.adamw.beta2);
    read_field(j, "eps", t.adamw.eps);
    read_field(j, "weight_decay", t.adamw.weight_decay);
    read_field(j, "clip_norm", t.clip_norm);
    read_field(j, "train_eval_subsample", t.train_eval_subsample);
    read_field(j, "max_train_samples", t.max_train_samples);
    read_field(j, "log_wall_time", t.log_wall_time);
    read_field(j, "threads", t.threads);
    if (t.epochs == 0 || t.batch_size == 0 || t.threads == 0) throw ConfigError("epochs, batch_size and threads must be positive");
    if (!(t.base_lr > 0) || !(t.clip_norm > 0)) throw ConfigError("base_lr and clip_norm must be positive");
    return t;
}

/// Runs fn(i) for i in [0, n), statically partitioned over `threads` workers.
inline void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
    threads = std::max<std::size_t>(1, std::min(threads, n));
    if (threads == 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::exception_ptr> errors(threads);
    {
        std::vector<std::jthread> pool;
        for (std::size_t w = 0; w < threads; ++w)
            pool.emplace_back([&, w] {
                try {
                    for (std::size_t i = w; i < n; i += threads) fn(i);
                } catch (...) {
                    errors[w] = std::current_exception();
                }
            });
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

/// A labelled example ready for the model.
struct Example {
    Tensor patches;
    int label = 0;
};

/// Random-access labelled examples (already preprocessed and patched).
using ExampleSource = std::function<Example(std::size_t)>;

inline ExampleSource dataset_source(const data::DatasetReader& reader, const ModelConfig& cfg) {
    const auto& m = reader.manifest();
    if (m.channels != cfg.channels || m.height != cfg.image_size || m.width != cfg.image_size)
        throw ConfigError("dataset images are " + shape_str({m.channels, m.height, m.width}) + " but the model expects " +
                          shape_str({cfg.channels, cfg.image_size, cfg.image_size}));
    return [&reader, cfg](std::size_t i) {
        auto pixels = reader.preprocessed(i);
        return Example{extract_patches(std::span<const double>(pixels), cfg), reader.label(i)};
    };
}

struct Evaluation {
    double loss = 0.0;  // mean cross-entropy
    double auc = 0.0;
    std::vector<double> scores;  // softmax probability of class 1
    std::vector<int> labels;
};

inline Evaluation evaluate(const ParamStore& params, const ModelConfig& cfg, const ExampleSource& source,
                           std::span<const std::size_t> indices, std::size_t threads = 1) {
    std::vector<double> losses(indices.size());
    Evaluation ev;
    ev.scores.resize(indices.size());
    ev.labels.resize(indices.size());
    parallel_for(indices.size(), threads, [&](std::size_t k) {
        auto ex = source(indices[k]);
        auto tape = Tape::inference();
        auto logits = forward_patches(tape, ex.patches, params, cfg);
        const int label = ex.label;
        losses[k] = cross_entropy_logits(tape, reshape(tape, logits, {1, cfg.num_classes}), std::span(&label, 1)).item();
        const double mx = std::max(logits[0], logits[1]);
        const double e0 = std::exp(logits[0] - mx), e1 = std::exp(logits[1] - mx);
        ev.scores[k] = e1 / (e0 + e1);
        ev.labels[k] = ex.label;
    });
    for (double l : losses) ev.loss += l;
    ev.loss /= static_cast<double>(std::max<std::size_t>(1, indices.size()));
    ev.auc = auc(ev.scores, ev.labels);
    return ev;
}

struct StepResult {
    double loss = 0.0;
    double grad_norm = 0.0;  // before clipping
    double lr = 0.0;
};

/// Owns the optimizer and schedule; one call to step() is one minibatch update.
class Trainer {
public:
    Trainer(ModelConfig cfg, ParamStore& params, TrainConfig tcfg, std::size_t total_steps)
        : cfg_(std::move(cfg)),
          params_(params),
          tcfg_(std::move(tcfg)),
          total_steps_(total_steps),
          warmup_(tcfg_.resolve_warmup(total_steps)),
          state_(OptimizerState::init(params, tcfg_.adamw)) {
        if (total_steps_ <= warmup_)
            throw ConfigError("schedule has " + std::to_string(total_steps_) + " steps, not more than warmup " +
                              std::to_string(warmup_));
    }

    std::size_t global_step() const { return step_; }
    std::size_t warmup() const { return warmup_; }
    std::size_t total_steps() const { return total_steps_; }
    double current_lr() const { return lr_at(step_, warmup_, total_steps_, tcfg_.base_lr); }
    const OptimizerState& optimizer() const { return state_; }

    /// Mean cross-entropy over the batch, backward per example, gradients
    /// summed in batch order, global-norm clip, AdamW at lr_at(step + 1).
    StepResult step(const std::vector<Example>& batch) {
        if (step_ >= total_steps_) throw TrainingError("schedule exhausted");
        const std::size_t n = batch.size();
        std::vector<ParamGrads> per_sample(n);
        std::vector<double> losses(n);
        parallel_for(n, tcfg_.threads, [&](std::size_t k) {
            Tape tape;
            auto logits = forward_patches(tape, batch[k].patches, params_, cfg_);
            const int label = batch[k].label;
            auto loss = cross_entropy_logits(tape, reshape(tape, logits, {1, cfg_.num_classes}), std::span(&label, 1));
            losses[k] = loss.item();
            per_sample[k] = params_.gather(tape.backward(loss));
        });
        auto grads = params_.zero_grads();
        StepResult result;
        const double inv = 1.0 / static_cast<double>(n);
        for (std::size_t k = 0; k < n; ++k) {
            result.loss += losses[k];
            for (std::size_t i = 0; i < grads.size(); ++i)
                for (std::size_t j = 0; j < grads[i].size(); ++j) grads[i][j] += per_sample[k][i][j];
        }
        result.loss *= inv;
        for (auto& g : grads)
            for (auto& v : g) v *= inv;
        result.lr = lr_at(step_ + 1, warmup_, total_steps_, tcfg_.base_lr);
        result.grad_norm = clip_global_norm(grads, tcfg_.clip_norm);
        if (!std::isfinite(result.loss) || !std::isfinite(result.grad_norm)) {
            std::ostringstream os;
            os << "non-finite loss at step " << step_ + 1 << " (loss=" << result.loss << ", lr=" << result.lr
               << ", grad_norm=" << result.grad_norm << ")";
            throw TrainingError(os.str());
        }
        adamw_step(params_, grads, state_, result.lr);
        ++step_;
        return result;
    }

private:
    ModelConfig cfg_;
    ParamStore& params_;
    TrainConfig tcfg_;
    std::size_t total_steps_;
    std::size_t warmup_;
    OptimizerState state_;
    std::size_t step_ = 0;
};

struct EpochRow {
    std::size_t epoch = 0;
    double train_loss = 0, val_loss = 0, train_auc = 0, val_auc = 0, lr = 0, wall_time_s = 0;
};

struct RunRecord {
    std::vector<EpochRow> rows;
    std::size_t best_epoch = 0;  // 1-based, earliest maximum of val_auc
    double initial_val_auc = 0.0;
    double test_loss = 0.0, test_auc = 0.0;
    std::size_t train_eval_size = 0;
    std::size_t total_params = 0;
};

inline std::string format_real(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

inline std::string metrics_csv(const RunRecord& record) {
    std::string out = "epoch,train_loss,val_loss,train_auc,val_auc,lr,wall_time_s\n";
    for (const auto& r : record.rows)
        out += std::to_string(r.epoch) + "," + format_real(r.train_loss) + "," + format_real(r.val_loss) + "," +
               format_real(r.train_auc) + "," + format_real(r.val_auc) + "," + format_real(r.lr) + "," +
               format_real(r.wall_time_s) + "\n";
    return out;
}

/// `# auc=<value>` then `threshold,fpr,tpr` rows.
inline std::string roc_csv(std::span<const RocPoint> roc) {
    std::string out = "# auc=" + format_real(auc(roc)) + "\nthreshold,fpr,tpr\n";
    for (const auto& p : roc) out += format_real(p.threshold) + "," + format_real(p.fpr) + "," + format_real(p.tpr) + "\n";
    return out;
}

inline std::size_t select_best_epoch(std::span<const EpochRow> rows) {
    if (rows.empty()) throw ContractError("no epochs recorded");
    std::size_t best = 0;
    for (std::size_t i = 1; i < rows.size(); ++i)
        if (rows[i].val_auc > rows[best].val_auc) best = i;
    return rows[best].epoch;
}

inline std::filesystem::path epoch_dir(const std::filesystem::path& out, std::size_t epoch) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "epoch_%03zu", epoch);
    return out / "checkpoints" / buf;
}

inline Json epoch_meta(const EpochRow& row, const TrainConfig& tcfg, std::uint64_t seed) {
    Json metrics{{"train_loss", row.train_loss}, {"val_loss", row.val_loss}, {"train_auc", row.train_auc},
                 {"val_auc", row.val_auc}, {"lr", row.lr}};
    if (tcfg.log_wall_time) metrics["wall_time_s"] = row.wall_time_s;
    return Json{{"epoch", row.epoch}, {"seed", seed}, {"train", to_json(tcfg)}, {"metrics", std::move(metrics)}};
}

/// Full protocol: per-epoch shuffled minibatch training, end-of-epoch
/// train/val metrics and checkpoint, then test evaluation of the checkpoint
/// with the highest validation AUC. Writes metrics.csv, checkpoints/ and
/// best/ under `out_dir`.
inline RunRecord train_run(const ModelConfig& cfg, const TrainConfig& tcfg, const data::DatasetReader& dataset,
                           std::uint64_t seed, const std::filesystem::path& out_dir, std::ostream* log = nullptr) {
    cfg.validate();
    auto source = dataset_source(dataset, cfg);
    const auto& splits = dataset.manifest().splits;
    auto range = [](data::IndexRange r, std::size_t cap) {
        std::vector<std::size_t> idx(r.size());
        std::iota(idx.begin(), idx.end(), r.begin);
        if (cap != 0 && cap < idx.size()) idx.resize(cap);
        return idx;
    };
    auto train_idx = range(splits.train, tcfg.max_train_samples);
    const auto val_idx = range(splits.val, 0), test_idx = range(splits.test, 0);

    std::vector<std::size_t> train_eval_idx = train_idx;
    if (tcfg.train_eval_subsample != 0 && tcfg.train_eval_subsample < train_eval_idx.size()) {
        std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
        std::shuffle(train_eval_idx.begin(), train_eval_idx.end(), rng);
        train_eval_idx.resize(tcfg.train_eval_subsample);
        std::sort(train_eval_idx.begin(), train_eval_idx.end());
    }

    auto params = init_params(cfg, seed);
    const std::size_t steps_per_epoch = (train_idx.size() + tcfg.batch_size - 1) / tcfg.batch_size;
    Trainer trainer(cfg, params, tcfg, steps_per_epoch * tcfg.epochs);

    RunRecord record;
    record.train_eval_size = train_eval_idx.size();
    record.total_params = params.total_count();
    record.initial_val_auc = evaluate(params, cfg, source, val_idx, tcfg.threads).auc;
    if (log)
        *log << "params=" << record.total_params << " steps=" << trainer.total_steps() << " warmup=" << trainer.warmup()
             << " train=" << train_idx.size() << " train_eval=" << train_eval_idx.size() << " val=" << val_idx.size()
             << " test=" << test_idx.size() << " initial_val_auc=" << format_real(record.initial_val_auc) << "\n";

    const auto start = std::chrono::steady_clock::now();
    for (std::size_t epoch = 1; epoch <= tcfg.epochs; ++epoch) {
        std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                          static_cast<std::uint32_t>(epoch)};
        std::mt19937_64 rng(seq);
        std::shuffle(train_idx.begin(), train_idx.end(), rng);
        for (std::size_t b = 0; b < steps_per_epoch; ++b) {
            std::vector<Example> batch;
            for (std::size_t k = b * tcfg.batch_size; k < std::min(train_idx.size(), (b + 1) * tcfg.batch_size); ++k)
                batch.push_back(source(train_idx[k]));
            trainer.step(batch);
        }
        EpochRow row;
        row.epoch = epoch;
        auto tr = evaluate(params, cfg, source, train_eval_idx, tcfg.threads);
        auto va = evaluate(params, cfg, source, val_idx, tcfg.threads);
        row.train_loss = tr.loss;
        row.train_auc = tr.auc;
        row.val_loss = va.loss;
        row.val_auc = va.auc;
        row.lr = trainer.current_lr();
        if (tcfg.log_wall_time)
            row.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        record.rows.push_back(row);
        save_checkpoint(epoch_dir(out_dir, epoch), cfg, params, epoch_meta(row, tcfg, seed));
        if (log)
            *log << "epoch " << epoch << " train_loss=" << format_real(row.train_loss)
                 << " val_loss=" << format_real(row.val_loss) << " train_auc=" << format_real(row.train_auc)
                 << " val_auc=" << format_real(row.val_auc) << " lr=" << format_real(row.lr) << "\n";
    }

    record.best_epoch = select_best_epoch(record.rows);
    auto best = load_checkpoint(epoch_dir(out_dir, record.best_epoch));
    auto te = evaluate(best.params, best.config, source, test_idx, tcfg.threads);
    record.test_loss = te.loss;
    record.test_auc = te.auc;
    auto meta = epoch_meta(record.rows[record.best_epoch - 1], tcfg, seed);
    meta["test"] = {{"loss", te.loss}, {"auc", te.auc}};
    save_checkpoint(out_dir / "best", best.config, best.params, meta);

    {
        std::ofstream csv(out_dir / "metrics.csv", std::ios::binary | std::ios::trunc);
        csv << metrics_csv(record);
    }
    Json summary{{"best_epoch", record.best_epoch},   {"initial_val_auc", record.initial_val_auc},
                 {"test_loss", record.test_loss},     {"test_auc", record.test_auc},
                 {"train_eval_size", record.train_eval_size}, {"total_params", record.total_params},
                 {"mode", to_string(cfg.mode)}};
    std::ofstream(out_dir / "summary.json", std::ios::binary | std::ios::trunc) << summary.dump(2) << '\n';
    if (log)
        *log << "best_epoch=" << record.best_epoch << " test_loss=" << format_real(record.test_loss)
             << " test_auc=" << format_real(record.test_auc) << "\n";
    return record;
}

}  // namespace qvit::train
