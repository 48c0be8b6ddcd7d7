// Command-line entry point: generate, train, eval, params, gradcheck.
//
// Exit codes: 0 success, 1 verification failure, 2 usage or configuration error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "qvit/config.hpp"
#include "qvit/data.hpp"
#include "qvit/gradcheck.hpp"
#include "qvit/model.hpp"
#include "qvit/plot.hpp"
#include "qvit/train.hpp"

namespace fs = std::filesystem;
using namespace qvit;

namespace {

constexpr int kOk = 0;
constexpr int kVerificationFailure = 1;
constexpr int kUsageError = 2;

constexpr std::size_t kReferenceQuantumParams = 4170;

class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

void require_fresh_dir(const fs::path& dir, bool force) {
    if (fs::exists(dir) && !fs::is_directory(dir)) throw UsageError(dir.string() + " exists and is not a directory");
    if (fs::exists(dir) && !fs::is_empty(dir)) {
        if (!force) throw UsageError(dir.string() + " is not empty (use --force to overwrite)");
        fs::remove_all(dir);
    }
}

data::SplitRatios parse_ratios(const std::string& text) {
    data::SplitRatios r{};
    std::stringstream ss(text);
    std::string part;
    std::size_t i = 0;
    while (std::getline(ss, part, ',')) {
        if (i == 3) throw UsageError("--ratios takes exactly three values");
        try {
            r[i++] = std::stod(part);
        } catch (const std::exception&) {
            throw UsageError("--ratios: cannot parse '" + part + "'");
        }
    }
    if (i != 3) throw UsageError("--ratios takes exactly three values");
    const double total = r[0] + r[1] + r[2];
    if (!(total > 0) || r[0] < 0 || r[1] < 0 || r[2] < 0) throw UsageError("--ratios must be non-negative with a positive sum");
    for (auto& v : r) v /= total;
    return r;
}

int cmd_generate(const fs::path& out, std::size_t n, std::uint64_t seed, const std::string& params_file,
                 const std::string& ratios, bool force) {
    if (n < 2 || n % 2 != 0) throw UsageError("--n must be even and at least 2, got " + std::to_string(n));
    data::GeneratorParams params;
    if (!params_file.empty()) {
        std::ifstream in(params_file);
        if (!in) throw UsageError("cannot open " + params_file);
        try {
            params = data::generator_params_from_json(data::Json::parse(in));
        } catch (const nlohmann::json::parse_error& e) {
            throw ConfigError(params_file + ": " + e.what());
        }
    }
    params.validate();
    const auto split_ratios = ratios.empty() ? data::kReferenceSplitRatios : parse_ratios(ratios);
    data::split(n, split_ratios);  // reject before writing anything
    require_fresh_dir(out, force);

    data::DatasetWriter writer(out);
    std::size_t ones = 0;
    for (std::size_t i = 0; i < n; ++i) {
        auto s = data::generate_sample(i, seed, params);
        ones += static_cast<std::size_t>(s.label);
        writer.append(s);
    }
    auto m = writer.finish(split_ratios, seed, data::to_json(params));
    std::cout << "dataset " << out.string() << "\n"
              << "  samples     " << m.num_samples << " (" << m.channels << "x" << m.height << "x" << m.width << ")\n"
              << "  quark/gluon " << n - ones << "/" << ones << "\n"
              << "  splits      train " << m.splits.train.size() << ", val " << m.splits.val.size() << ", test "
              << m.splits.test.size() << "\n"
              << "  generator   " << m.generator_version << ", seed " << m.seed << "\n";
    return kOk;
}

int cmd_train(const std::string& data_dir, const std::string& config_file, const fs::path& out, bool classical,
              bool force, std::size_t threads) {
    RunConfig cfg = config_file.empty() ? RunConfig{} : load_run_config(config_file);
    if (classical) cfg.model.mode = Mode::classical;
    if (threads != 0) cfg.train.threads = threads;
    const std::string dir = !data_dir.empty() ? data_dir : cfg.data;
    if (dir.empty()) throw UsageError("no dataset given (--data or \"data\" in the config)");
    require_fresh_dir(out, force);

    auto reader = data::read_dataset(dir);
    train::dataset_source(reader, cfg.model);  // shape compatibility check
    fs::create_directories(out);
    std::ofstream(out / "config.json", std::ios::binary) << to_json(cfg).dump(2) << '\n';
    std::cout << "mode " << to_string(cfg.model.mode) << ", " << count_params(cfg.model).total << " parameters\n";
    auto record = train::train_run(cfg.model, cfg.train, reader, cfg.seed, out, &std::cout);
    std::cout << "best epoch " << record.best_epoch << ", test AUC " << train::format_real(record.test_auc) << "\n";
    return kOk;
}

int cmd_eval(const fs::path& checkpoint, const std::string& data_dir, const std::string& split_name,
             const std::string& roc_file, const std::string& svg_file, std::size_t threads) {
    auto ckpt = load_checkpoint(fs::is_directory(checkpoint) ? checkpoint : checkpoint.parent_path());
    auto reader = data::read_dataset(data_dir);
    auto source = train::dataset_source(reader, ckpt.config);
    const auto& s = reader.manifest().splits;
    data::IndexRange range;
    if (split_name == "train") range = s.train;
    else if (split_name == "val") range = s.val;
    else if (split_name == "test") range = s.test;
    else throw UsageError("unknown split '" + split_name + "'");
    if (range.size() == 0) throw UsageError("split '" + split_name + "' is empty");
    std::vector<std::size_t> idx(range.size());
    std::iota(idx.begin(), idx.end(), range.begin);

    auto ev = train::evaluate(ckpt.params, ckpt.config, source, idx, std::max<std::size_t>(1, threads));
    std::cout << "split " << split_name << " samples " << idx.size() << "\n"
              << "loss " << train::format_real(ev.loss) << "\n"
              << "auc " << train::format_real(ev.auc) << "\n";
    if (!roc_file.empty() || !svg_file.empty()) {
        auto roc = train::roc_curve(ev.scores, ev.labels);
        if (!roc_file.empty()) std::ofstream(roc_file, std::ios::binary) << train::roc_csv(roc);
        if (!svg_file.empty())
            std::ofstream(svg_file, std::ios::binary) << plot::roc_svg(roc, to_string(ckpt.config.mode) + " ViT");
    }
    return kOk;
}

void print_breakdown(const ModelConfig& model) {
    auto count = count_params(model);
    std::cout << to_string(model.mode);
    if (model.mode == Mode::quantum) std::cout << " (" << to_string(model.qmha_scheme) << ")";
    std::cout << "\n";
    for (const auto& [name, n] : count.components) {
        char line[96];
        std::snprintf(line, sizeof line, "  %-14s %8zu\n", name.c_str(), n);
        std::cout << line;
    }
    char line[96];
    std::snprintf(line, sizeof line, "  %-14s %8zu\n", "total", count.total);
    std::cout << line;
}

int cmd_params(const std::string& config_file) {
    RunConfig cfg = config_file.empty() ? RunConfig{} : load_run_config(config_file);
    auto classical = cfg.model, quantum = cfg.model;
    classical.mode = Mode::classical;
    quantum.mode = Mode::quantum;
    print_breakdown(classical);
    print_breakdown(quantum);
    if (quantum == [] { auto p = ModelConfig::full(); p.qmha_scheme = QmhaScheme::per_projection; return p; }() ||
        quantum == [] { auto p = ModelConfig::full(); p.qmha_scheme = QmhaScheme::split_halves; return p; }())
        std::cout << "note: the reference QViT figure of " << kReferenceQuantumParams
                  << " parameters is not reproduced by any square-circuit wiring implemented here; "
                  << "the registry count above is authoritative\n";
    return kOk;
}

int cmd_gradcheck(std::uint64_t seed, const std::string& config_file, bool inject_fault) {
    ModelConfig model = gradcheck::tiny_quantum_config();
    if (!config_file.empty()) model = load_run_config(config_file).model;
    if (inject_fault) qvit::detail::flip_gelu_backward = true;
    auto report = gradcheck::run(seed, model);
    for (const auto& g : report.groups) {
        char line[160];
        std::snprintf(line, sizeof line, "%-4s %-32s max_abs %.3e  max_rel %.3e  (tol %.0e %s)\n",
                      g.passed() ? "ok" : "FAIL", g.name.c_str(), g.max_abs_error, g.max_rel_error, g.tolerance,
                      g.relative ? "rel" : "abs");
        std::cout << line;
    }
    std::cout << (report.passed() ? "gradcheck passed\n" : "gradcheck FAILED\n");
    return report.passed() ? kOk : kVerificationFailure;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Hybrid quantum-classical vision transformer for jet images"};
    app.require_subcommand(1);

    std::string out, data_dir, config_file, params_file, ratios, checkpoint, split = "test", roc_file, svg_file;
    std::size_t n = 0, threads = 0;
    std::uint64_t seed = 0;
    bool force = false, classical = false, inject_fault = false;

    auto* gen = app.add_subcommand("generate", "Write a synthetic jet-image dataset");
    gen->add_option("--out", out, "Output directory")->required();
    gen->add_option("--n", n, "Number of samples (even)")->required();
    gen->add_option("--seed", seed, "Generator seed")->required();
    gen->add_option("--params", params_file, "Generator parameter JSON");
    gen->add_option("--ratios", ratios, "train,val,test weights, normalized by their sum (default 714510,79390,139306)");
    gen->add_flag("--force", force, "Overwrite a non-empty output directory");

    auto* tr = app.add_subcommand("train", "Train a model and write checkpoints + metrics.csv");
    tr->add_option("--data", data_dir, "Dataset directory");
    tr->add_option("--config", config_file, "Run configuration JSON");
    tr->add_option("--out", out, "Output directory")->required();
    tr->add_flag("--classical", classical, "Train the classical baseline");
    tr->add_flag("--force", force, "Overwrite a non-empty output directory");
    tr->add_option("--threads", threads, "Worker threads for per-sample fan-out");

    auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset split");
    ev->add_option("--checkpoint", checkpoint, "Checkpoint directory (or its meta.json)")->required();
    ev->add_option("--data", data_dir, "Dataset directory")->required();
    ev->add_option("--split", split, "train | val | test");
    ev->add_option("--roc", roc_file, "Write the ROC curve as CSV");
    ev->add_option("--svg", svg_file, "Write the ROC curve as SVG");
    ev->add_option("--threads", threads, "Worker threads");

    auto* pc = app.add_subcommand("params", "Parameter-count breakdown for both modes");
    pc->add_option("--config", config_file, "Run configuration JSON");

    auto* gc = app.add_subcommand("gradcheck", "Verify circuit and model gradients against finite differences");
    gc->add_option("--seed", seed, "Seed");
    gc->add_option("--config", config_file, "Run configuration JSON (model section is checked)");
    gc->add_flag("--inject-fault", inject_fault, "Negate the GELU backward rule (self-test)")->group("");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kUsageError;
    }

    try {
        if (*gen) return cmd_generate(out, n, seed, params_file, ratios, force);
        if (*tr) return cmd_train(data_dir, config_file, out, classical, force, threads);
        if (*ev) return cmd_eval(checkpoint, data_dir, split, roc_file, svg_file, threads);
        if (*pc) return cmd_params(config_file);
        if (*gc) return cmd_gradcheck(seed, config_file, inject_fault);
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kUsageError;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kUsageError;
    } catch (const CorruptionError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kUsageError;
    } catch (const ContractError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kUsageError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kVerificationFailure;
    }
    return kUsageError;
}
