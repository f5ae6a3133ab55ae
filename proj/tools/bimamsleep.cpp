// bimamsleep: command-line front end (train, evaluate, ablate, gen-synthetic,
// scan-bench, grad-check).

#include "bimamsleep/bimamba.hpp"
#include "bimamsleep/error.hpp"
#include "bimamsleep/gradient_suite.hpp"
#include "bimamsleep/log.hpp"
#include "bimamsleep/metrics.hpp"
#include "bimamsleep/model.hpp"
#include "bimamsleep/signal_io.hpp"
#include "bimamsleep/synth.hpp"
#include "bimamsleep/train_config.hpp"
#include "bimamsleep/trainer.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace bimamsleep;

namespace {

enum ExitCode : int { kOk = 0, kRuntime = 1, kConfig = 2, kData = 3 };

constexpr std::uint64_t kDefaultSeed = 0;

std::optional<std::uint64_t> parse_seed(const std::string& text)
{
    if (text.empty() || text.find_first_not_of("0123456789") != std::string::npos) {
        return std::nullopt;
    }
    try {
        return std::stoull(text);
    } catch (const std::exception&) {
        return std::nullopt;
    }
}

// Seed precedence: --seed flag, then the config file, then BIMAMSLEEP_SEED, then 0.
std::uint64_t resolve_seed(const std::optional<std::uint64_t>& flag, const std::optional<std::uint64_t>& config,
    std::string& source)
{
    if (flag) {
        source = "--seed";
        return *flag;
    }
    if (config) {
        source = "config";
        return *config;
    }
    if (const char* env = std::getenv("BIMAMSLEEP_SEED"); env != nullptr) {
        const auto parsed = parse_seed(env);
        if (!parsed) {
            throw ConfigError(std::string("BIMAMSLEEP_SEED must be an unsigned integer, got '") + env + "'");
        }
        source = "BIMAMSLEEP_SEED";
        return *parsed;
    }
    source = "default";
    return kDefaultSeed;
}

void write_text(const fs::path& path, const std::string& text)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw Error("cannot write " + path.string());
    }
    out << text;
    if (!out) {
        throw Error("failed writing " + path.string());
    }
}

void ensure_dir(const fs::path& dir)
{
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) {
        throw Error("cannot create output directory " + dir.string() + ": " + ec.message());
    }
}

// Loads the config file when given; otherwise the built-in defaults. The seed
// is resolved separately so a config without "seed" still defers to the env.
TrainConfig resolve_train_config(const std::string& config_path, const std::optional<std::uint64_t>& seed_flag,
    std::string& seed_source)
{
    TrainConfig cfg;
    std::optional<std::uint64_t> config_seed;
    if (!config_path.empty()) {
        cfg = load_train_config(config_path);
        std::ifstream in(config_path);
        std::stringstream ss;
        ss << in.rdbuf();
        if (ss.str().find("\"seed\"") != std::string::npos) {
            config_seed = cfg.seed;
        }
    }
    cfg.seed = resolve_seed(seed_flag, config_seed, seed_source);
    return cfg;
}

void print_resolved(const TrainConfig& cfg, const std::string& seed_source)
{
    std::cout << "resolved config:\n" << train_config_to_json(cfg);
    std::cout << "seed: " << cfg.seed << " (" << seed_source << ")\n" << std::flush;
}

ProgressFn stdout_progress(bool quiet)
{
    if (quiet) {
        return {};
    }
    return [](std::string_view s) { std::cout << s << '\n' << std::flush; };
}

// ---------------------------------------------------------------------------

struct TrainArgs {
    std::string data;
    std::string config;
    std::string out;
    std::optional<std::uint64_t> seed;
    bool quiet = false;
};

int cmd_train(const TrainArgs& a)
{
    std::string seed_source;
    const TrainConfig cfg = resolve_train_config(a.config, a.seed, seed_source);
    print_resolved(cfg, seed_source);
    const EpochDataset ds = load_dataset(a.data);
    std::cout << "data: " << a.data << " (" << ds.size() << " epochs, " << ds.subjects().size() << " subjects)\n";

    const auto t0 = std::chrono::steady_clock::now();
    const auto cv = cross_validate(ds, cfg, stdout_progress(a.quiet));
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    const fs::path out(a.out);
    ensure_dir(out);
    write_text(out / "resolved_config.json", train_config_to_json(cfg));
    for (const auto& f : cv.folds) {
        const auto tag = "fold_" + std::to_string(f.fold_index);
        write_text(out / (tag + "_report.csv"), report_csv(f.confusion));
        write_text(out / (tag + "_history.csv"), history_csv(f.history));
        SleepModel model = f.model;
        model.save(out / (tag + "_model.json"));
    }
    const ReportMeta meta{{"data", fs::path(a.data).filename().string()}, {"seed", std::to_string(cfg.seed)},
        {"folds", std::to_string(cfg.folds)}};
    write_text(out / "pooled_report.csv", report_csv(cv.pooled));
    write_text(out / "pooled_report.txt", report_text(cv.pooled, meta));

    std::cout << '\n' << report_text(cv.pooled, meta);
    char line[96];
    std::snprintf(line, sizeof line, "wall time: %.1f s\n", secs);
    std::cout << line << "reports written to " << out.string() << '\n';
    return kOk;
}

struct EvaluateArgs {
    std::string model;
    std::string data;
    std::string out;
    std::optional<std::uint64_t> seed;
};

int cmd_evaluate(const EvaluateArgs& a)
{
    std::string seed_source;
    const auto seed = resolve_seed(a.seed, std::nullopt, seed_source);
    std::cout << "model: " << a.model << "\ndata: " << a.data << "\nseed: " << seed << " (" << seed_source << ")\n";
    if (!fs::exists(a.model)) {
        throw DataError("model file not found: " + a.model);
    }
    SleepModel model = SleepModel::load(a.model);
    const EpochDataset ds = load_dataset(a.data);
    ConfusionMatrix cm(model.config().num_classes);
    std::vector<std::size_t> idx;
    for (std::size_t start = 0; start < ds.size(); start += 256) {
        const auto end = std::min(ds.size(), start + 256);
        idx.resize(end - start);
        for (std::size_t i = start; i < end; ++i) {
            idx[i - start] = i;
        }
        const auto pred = model.predict(make_batch(ds.samples().data(), idx));
        for (std::size_t i = 0; i < idx.size(); ++i) {
            cm.add(stage_index(ds.label(idx[i])), pred[i]);
        }
    }
    const ReportMeta meta{{"model", fs::path(a.model).filename().string()},
        {"data", fs::path(a.data).filename().string()}};
    std::cout << report_text(cm, meta);
    if (!a.out.empty()) {
        write_text(a.out, report_csv(cm));
        std::cout << "csv written to " << a.out << '\n';
    }
    return kOk;
}

struct AblateArgs {
    std::string data;
    std::string config;
    std::string out;
    std::vector<std::string> variants{"no_mamba", "fwd_only", "bwd_only", "bimamba"};
    std::optional<std::uint64_t> seed;
    bool quiet = false;
};

int cmd_ablate(const AblateArgs& a)
{
    std::string seed_source;
    const TrainConfig cfg = resolve_train_config(a.config, a.seed, seed_source);
    std::vector<MambaVariant> variants;
    for (const auto& v : a.variants) {
        const auto parsed = parse_variant(v);
        if (!parsed) {
            throw ConfigError("--variants: unknown variant '" + v + "'");
        }
        variants.push_back(*parsed);
    }
    print_resolved(cfg, seed_source);
    const EpochDataset ds = load_dataset(a.data);
    std::cout << "data: " << a.data << " (" << ds.size() << " epochs, " << ds.subjects().size() << " subjects)\n";
    const auto rows = run_ablation(ds, cfg, variants, stdout_progress(a.quiet));
    std::cout << '\n' << ablation_text(rows);
    if (!a.out.empty()) {
        ensure_dir(fs::path(a.out).parent_path().empty() ? fs::path(".") : fs::path(a.out).parent_path());
        write_text(a.out, ablation_csv(rows));
        std::cout << "csv written to " << a.out << '\n';
    }
    return kOk;
}

struct GenArgs {
    std::size_t subjects = 10;
    std::size_t epochs = 400;
    std::string priors;
    double snr_db = 10.0;
    std::string out;
    std::optional<std::uint64_t> seed;
};

std::vector<double> parse_number_list(const std::string& text, const char* flag)
{
    std::vector<double> values;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            values.push_back(std::stod(item, &used));
            if (used != item.size()) {
                throw std::invalid_argument(item);
            }
        } catch (const std::exception&) {
            throw ConfigError(std::string(flag) + ": cannot parse '" + item + "' as a number");
        }
    }
    return values;
}

int cmd_gen_synthetic(const GenArgs& a)
{
    std::string seed_source;
    const auto seed = resolve_seed(a.seed, std::nullopt, seed_source);
    std::array<double, kNumStages> priors = kSleepEdf20Priors;
    if (!a.priors.empty()) {
        const auto parsed = parse_number_list(a.priors, "--priors");
        bool renormalized = false;
        priors = normalize_priors(parsed, renormalized);
        if (renormalized) {
            warn("--priors sum to a value other than 1; renormalized");
        }
    }
    SynthOptions opt;
    opt.snr_db = a.snr_db;
    char pbuf[128];
    std::snprintf(pbuf, sizeof pbuf, "%.6g,%.6g,%.6g,%.6g,%.6g", priors[0], priors[1], priors[2], priors[3], priors[4]);
    std::cout << "subjects: " << a.subjects << "\nepochs per subject: " << a.epochs << "\npriors: " << pbuf
              << "\nsnr_db: " << a.snr_db << "\nseed: " << seed << " (" << seed_source << ")\nout: " << a.out << '\n';
    const auto ds = synth_generate(a.subjects, a.epochs, priors, seed, opt);
    write_epb(ds, a.out);
    const auto hist = class_histogram(ds);
    std::cout << "wrote " << ds.size() << " epochs; class counts";
    for (std::size_t c = 0; c < kNumStages; ++c) {
        std::cout << ' ' << kStageNames[c] << '=' << hist[c];
    }
    std::cout << '\n';
    return kOk;
}

struct ScanBenchArgs {
    std::string lengths = "1024,2048,4096";
    std::size_t d_model = 64;
    std::size_t state = 16;
    std::size_t repeats = 5;
    double threshold = 2.6;
    std::optional<std::uint64_t> seed;
};

int cmd_scan_bench(const ScanBenchArgs& a)
{
    std::string seed_source;
    const auto seed = resolve_seed(a.seed, std::nullopt, seed_source);
    std::vector<std::size_t> lengths;
    for (double v : parse_number_list(a.lengths, "--lengths")) {
        if (!(v >= 1.0) || v != std::floor(v)) {
            throw ConfigError("--lengths: entries must be positive integers");
        }
        lengths.push_back(static_cast<std::size_t>(v));
    }
    if (a.repeats == 0) {
        throw ConfigError("--repeats must be positive");
    }
    MambaConfig cfg;
    cfg.d_model = a.d_model;
    cfg.state_size = a.state;
    cfg.validate();
    std::cout << "lengths: " << a.lengths << "\nd_model: " << cfg.d_model << " (d_inner " << cfg.d_inner()
              << ")\nstate: " << cfg.state_size << "\nconv_width: " << cfg.conv_width << "\nrepeats: " << a.repeats
              << "\nthreshold: " << a.threshold << "\nseed: " << seed << " (" << seed_source << ")\n";

    Rng rng(seed);
    const BlockParams params = BlockParams::init(cfg, "bench", rng);
    std::vector<double> medians;
    for (auto len : lengths) {
        NdArray x({1, len, cfg.d_model});
        for (auto& v : x.values()) {
            v = standard_normal(rng);
        }
        bimamba_block(x, params, cfg); // warm-up
        std::vector<double> times;
        for (std::size_t r = 0; r < a.repeats; ++r) {
            const auto t0 = std::chrono::steady_clock::now();
            const NdArray y = bimamba_block(x, params, cfg);
            times.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
            if (!y.all_finite()) {
                throw NumericError("scan-bench: non-finite output at L=" + std::to_string(len));
            }
        }
        std::sort(times.begin(), times.end());
        medians.push_back(times[times.size() / 2]);
        char line[96];
        std::snprintf(line, sizeof line, "L=%zu median_ms=%.3f\n", len, medians.back());
        std::cout << line;
    }
    bool ok = true;
    for (std::size_t i = 1; i < lengths.size(); ++i) {
        const double ratio = medians[i] / medians[i - 1];
        const double len_ratio = static_cast<double>(lengths[i]) / static_cast<double>(lengths[i - 1]);
        const bool pass = ratio <= a.threshold;
        ok = ok && pass;
        char line[128];
        std::snprintf(line, sizeof line, "ratio t(%zu)/t(%zu)=%.3f (length x%.2f) %s\n", lengths[i], lengths[i - 1],
            ratio, len_ratio, pass ? "ok" : "EXCEEDS");
        std::cout << line;
    }
    return ok ? kOk : kRuntime;
}

struct GradCheckArgs {
    double tolerance = 1e-4;
    double step = 1e-5;
    bool skip_model = false;
    bool verbose = false;
    std::optional<std::uint64_t> seed;
};

int cmd_grad_check(const GradCheckArgs& a)
{
    std::string seed_source;
    GradientSuiteOptions opt;
    opt.seed = resolve_seed(a.seed, std::nullopt, seed_source);
    if (seed_source == "default") {
        opt.seed = GradientSuiteOptions{}.seed;
    }
    opt.tolerance = a.tolerance;
    opt.step = a.step;
    opt.include_model = !a.skip_model;
    std::cout << "tolerance: " << opt.tolerance << "\nstep: " << opt.step
              << "\nmodel checks: " << (opt.include_model ? "toy" : "off") << "\nseed: " << opt.seed << " ("
              << seed_source << ")\n";
    std::size_t failed = 0;
    std::size_t total = 0;
    double worst = 0.0;
    run_gradient_suite(opt, [&](const GradCheckReport& r) {
        ++total;
        worst = std::max(worst, r.max_rel_err);
        if (!r.passed) {
            ++failed;
        }
        if (a.verbose || !r.passed) {
            char line[256];
            std::snprintf(line, sizeof line, "%-4s %-48s max_rel_err=%.3e (n=%zu; worst #%zu analytic=%.6e fd=%.6e)\n",
                r.passed ? "ok" : "FAIL", r.op_name.c_str(), r.max_rel_err, r.coordinates, r.worst_index,
                r.worst_analytic, r.worst_numeric);
            std::cout << line << std::flush;
        }
    });
    char line[128];
    std::snprintf(line, sizeof line, "%zu checks, %zu failed, worst max_rel_err=%.3e\n", total, failed, worst);
    std::cout << line;
    return failed == 0 ? kOk : kRuntime;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"bimamsleep: single-channel EEG sleep staging with a triple-resolution CNN and bidirectional Mamba"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "bimamsleep 0.1.0");

    const auto add_seed = [](CLI::App* cmd, std::optional<std::uint64_t>& seed) {
        cmd->add_option("--seed", seed, "RNG seed (overrides config and BIMAMSLEEP_SEED)");
    };

    TrainArgs train;
    auto* c_train = app.add_subcommand("train", "Subject-wise cross-validated training");
    c_train->add_option("--data", train.data, "EPB file or manifest CSV")->required();
    c_train->add_option("--config", train.config, "JSON training config");
    c_train->add_option("--out", train.out, "Output directory")->required();
    add_seed(c_train, train.seed);
    c_train->add_flag("--quiet", train.quiet, "Suppress per-epoch progress");

    EvaluateArgs eval;
    auto* c_eval = app.add_subcommand("evaluate", "Score a saved model on a dataset");
    c_eval->add_option("--model", eval.model, "Model parameter file (JSON)")->required();
    c_eval->add_option("--data", eval.data, "EPB file or manifest CSV")->required();
    c_eval->add_option("--out", eval.out, "Write the CSV report here");
    add_seed(c_eval, eval.seed);

    AblateArgs ablate;
    auto* c_ablate = app.add_subcommand("ablate", "Cross-validate the no_mamba / fwd_only / bwd_only / bimamba variants");
    c_ablate->add_option("--data", ablate.data, "EPB file or manifest CSV")->required();
    c_ablate->add_option("--config", ablate.config, "JSON training config");
    c_ablate->add_option("--out", ablate.out, "Write the comparison CSV here");
    c_ablate->add_option("--variants", ablate.variants, "Subset of variants")->delimiter(',');
    add_seed(c_ablate, ablate.seed);
    c_ablate->add_flag("--quiet", ablate.quiet, "Suppress per-epoch progress");

    GenArgs gen;
    auto* c_gen = app.add_subcommand("gen-synthetic", "Write a synthetic EPB dataset");
    c_gen->add_option("--subjects", gen.subjects, "Number of subjects")->check(CLI::PositiveNumber);
    c_gen->add_option("--epochs", gen.epochs, "Epochs per subject")->check(CLI::PositiveNumber);
    c_gen->add_option("--priors", gen.priors, "Class priors W,N1,N2,N3,REM (default: Sleep-EDF-20)");
    c_gen->add_option("--snr-db", gen.snr_db, "Signal-to-noise ratio in dB");
    c_gen->add_option("--out", gen.out, "Output EPB path")->required();
    add_seed(c_gen, gen.seed);

    ScanBenchArgs bench;
    auto* c_bench = app.add_subcommand("scan-bench", "Time the BiMamba block forward pass against sequence length");
    c_bench->add_option("--lengths", bench.lengths, "Comma-separated sequence lengths");
    c_bench->add_option("--d-model", bench.d_model, "Model width")->check(CLI::PositiveNumber);
    c_bench->add_option("--state", bench.state, "SSM state size")->check(CLI::PositiveNumber);
    c_bench->add_option("--repeats", bench.repeats, "Timed runs per length (median reported)");
    c_bench->add_option("--threshold", bench.threshold, "Maximum allowed t(2L)/t(L)");
    add_seed(c_bench, bench.seed);

    GradCheckArgs gc;
    auto* c_gc = app.add_subcommand("grad-check", "Finite-difference gradient suite");
    c_gc->add_option("--tolerance", gc.tolerance, "Maximum relative error");
    c_gc->add_option("--step", gc.step, "Central-difference step")->check(CLI::PositiveNumber);
    c_gc->add_flag("--skip-model", gc.skip_model, "Skip the end-to-end toy model checks");
    c_gc->add_flag("--verbose", gc.verbose, "Print every report");
    add_seed(c_gc, gc.seed);

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kConfig;
    }

    try {
        if (*c_train) {
            return cmd_train(train);
        }
        if (*c_eval) {
            return cmd_evaluate(eval);
        }
        if (*c_ablate) {
            return cmd_ablate(ablate);
        }
        if (*c_gen) {
            return cmd_gen_synthetic(gen);
        }
        if (*c_bench) {
            return cmd_scan_bench(bench);
        }
        if (*c_gc) {
            return cmd_grad_check(gc);
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kConfig;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return kData;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kRuntime;
    }
    return kRuntime;
}
