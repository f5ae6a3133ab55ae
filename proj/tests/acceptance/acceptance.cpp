// Acceptance runner: one PASS/FAIL line per release criterion. Criteria that
// exercise the shipped binary go through the CLI; the rest run in-process
// against independent oracles from tests/support.

#include "../support/oracles.hpp"

#include "bimamsleep/bimamba.hpp"
#include "bimamsleep/focal_loss.hpp"
#include "bimamsleep/gradient_suite.hpp"
#include "bimamsleep/log.hpp"
#include "bimamsleep/metrics.hpp"
#include "bimamsleep/scheduler.hpp"
#include "bimamsleep/smote.hpp"
#include "bimamsleep/ssm.hpp"
#include "bimamsleep/synth.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <vector>

namespace fs = std::filesystem;
using namespace bimamsleep;
namespace on = oracle;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0)
{
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double v)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

struct Run {
    int code = -1;
    std::string output;
    double seconds = 0.0;
};

Run cli(const std::string& args)
{
    const std::string cmd = std::string(BIMAMSLEEP_CLI_PATH) + " " + args + " 2>&1";
    Run r;
    const auto t0 = Clock::now();
    FILE* pipe = ::popen(cmd.c_str(), "r");
    if (pipe == nullptr) {
        return r;
    }
    std::array<char, 4096> buf{};
    std::size_t n = 0;
    while ((n = std::fread(buf.data(), 1, buf.size(), pipe)) > 0) {
        r.output.append(buf.data(), n);
    }
    const int status = ::pclose(pipe);
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.seconds = seconds_since(t0);
    return r;
}

std::string slurp(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string tail(const std::string& s, std::size_t n = 400)
{
    return s.size() <= n ? s : s.substr(s.size() - n);
}

// "metric,class,value" rows keyed by "metric/class".
std::map<std::string, double> parse_report_csv(const fs::path& p)
{
    std::map<std::string, double> out;
    std::istringstream in(slurp(p));
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
        const auto a = line.find(',');
        const auto b = line.find(',', a + 1);
        if (a == std::string::npos || b == std::string::npos) {
            continue;
        }
        out[line.substr(0, a) + "/" + line.substr(a + 1, b - a - 1)] = std::stod(line.substr(b + 1));
    }
    return out;
}

// ---------------------------------------------------------------------------

Outcome gradient_suite()
{
    const auto t0 = Clock::now();
    GradientSuiteOptions opt; // tolerance 1e-4, step 1e-5
    const auto reports = run_gradient_suite(opt);
    const double secs = seconds_since(t0);
    double worst = 0.0;
    std::size_t failed = 0;
    std::string first_fail;
    for (const auto& r : reports) {
        worst = std::max(worst, r.max_rel_err);
        if (!r.passed) {
            ++failed;
            if (first_fail.empty()) {
                first_fail = " first failure " + r.op_name;
            }
        }
    }
    return {failed == 0 && !reports.empty() && secs <= 120.0,
        std::to_string(reports.size()) + " checks, " + std::to_string(failed) + " failed, worst rel err "
            + fmt("%.2e", worst) + ", " + fmt("%.1f", secs) + " s (limit 1e-4, 120 s)" + first_fail};
}

Outcome scan_kernel_oracle()
{
    Rng rng(101);
    double worst = 0.0;
    const int draws = 100;
    for (int d = 0; d < draws; ++d) {
        const auto L = 1 + uniform_index(rng, 64);
        const auto N = 1 + uniform_index(rng, 8);
        std::vector<double> a(N), b(N), c(N), x(L);
        for (std::size_t n = 0; n < N; ++n) {
            a[n] = uniform(rng, 0.0, 0.99);
            b[n] = uniform(rng, -1.0, 1.0);
            c[n] = uniform(rng, -1.0, 1.0);
        }
        for (auto& v : x) {
            v = uniform(rng, -1.0, 1.0);
        }
        const auto y = ssm_scan(NdArray({1, L, 1}, x), DiscreteSsm::broadcast(1, L, 1, a, b, c));
        const auto ref = on::static_ssm_convolution(a, b, c, x);
        const auto lib = causal_convolve(x, ssm_kernel(a, b, c, L));
        worst = std::max({worst, on::max_rel_diff(y.values(), ref), on::max_rel_diff(y.values(), lib)});
    }
    return {worst <= 1e-8, std::to_string(draws) + " draws, worst rel diff " + fmt("%.2e", worst) + " (limit 1e-8)"};
}

Outcome zoh_rk4()
{
    Rng rng(102);
    const double dt = 0.3;
    double worst = 0.0;
    for (const std::vector<double>& a : {std::vector<double>{-2.0}, std::vector<double>{-0.3, -1.0, -2.5, -6.0}}) {
        const std::vector<double> b{1.0, 0.5, -0.7, 2.0};
        const std::vector<double> bb(b.begin(), b.begin() + static_cast<std::ptrdiff_t>(a.size()));
        const auto d = zoh_discretize(NdArray({a.size()}, a), NdArray({bb.size()}, bb), dt);
        std::vector<double> h(a.size(), 0.0), ref(a.size(), 0.0);
        for (int step = 0; step < 50; ++step) {
            const double u = uniform(rng, -1.0, 1.0);
            for (std::size_t n = 0; n < a.size(); ++n) {
                h[n] = d.a_bar[n] * h[n] + d.b_bar[n] * u;
            }
            ref = on::rk4_diag(ref, a, bb, u, dt, 1000);
            for (std::size_t n = 0; n < a.size(); ++n) {
                worst = std::max(worst, std::abs(h[n] - ref[n]));
            }
        }
    }
    return {worst <= 1e-4, "scalar and N=4 diagonal, max abs err " + fmt("%.2e", worst) + " (limit 1e-4)"};
}

Outcome focal_reduction()
{
    Rng rng(103);
    double worst_ce = 0.0;
    for (int batch = 0; batch < 100; ++batch) {
        const auto n = 1 + uniform_index(rng, 32);
        const auto logits = on::random_array({n, 5}, rng, -6.0, 6.0);
        std::vector<std::size_t> y(n);
        for (auto& v : y) {
            v = uniform_index(rng, 5);
        }
        FocalConfig cfg;
        cfg.gamma = 0.0;
        const double got = focal_loss(logits, y, cfg).loss;
        worst_ce = std::max(worst_ce, std::abs(got - on::cross_entropy(logits, y)));
    }
    double worst_grad = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
        const auto logits = on::random_array({6, 5}, rng, -3.0, 3.0);
        std::vector<std::size_t> y(6);
        for (auto& v : y) {
            v = uniform_index(rng, 5);
        }
        FocalConfig cfg;
        cfg.gamma = 2.0;
        cfg.alpha = {0.5, 2.0, 0.7, 1.3, 0.5};
        const auto r = focal_loss(logits, y, cfg);
        const auto f = [&](std::span<const double> v) {
            return on::focal(NdArray(logits.shape(), {v.begin(), v.end()}), y, cfg.gamma, cfg.alpha);
        };
        worst_grad = std::max(worst_grad, on::grad_rel_err(r.grad.values(), on::numeric_gradient(f, logits.values())));
    }
    return {worst_ce <= 1e-12 && worst_grad <= 1e-6,
        "CE diff " + fmt("%.2e", worst_ce) + " (limit 1e-12), grad rel err " + fmt("%.2e", worst_grad)
            + " (limit 1e-6)"};
}

Outcome metrics_oracle()
{
    Rng rng(104);
    ScopedWarningCapture quiet;
    double worst = 0.0;
    for (int trial = 0; trial < 200; ++trial) {
        const auto n = 1 + uniform_index(rng, 400);
        std::vector<std::size_t> t(n), p(n);
        for (std::size_t i = 0; i < n; ++i) {
            t[i] = uniform_index(rng, 5);
            p[i] = uniform_index(rng, 3) == 0 ? uniform_index(rng, 5) : t[i];
        }
        const auto got = summarize(confusion(t, p, 5));
        const auto want = on::brute_metrics(t, p, 5);
        worst = std::max({worst, std::abs(got.acc - want.acc), std::abs(got.mf1 - want.mf1),
            std::abs(got.kappa - want.kappa), std::abs(got.mgm - want.mgm)});
        for (std::size_t c = 0; c < 5; ++c) {
            worst = std::max(worst, std::abs(got.f1[c] - want.f1[c]));
        }
    }
    bool product_zero = true;
    for (int trial = 0; trial < 50; ++trial) {
        ConfusionMatrix cm(5);
        std::array<std::uint64_t, 5> r{}, s{};
        for (std::size_t i = 0; i < 5; ++i) {
            r[i] = 1 + uniform_index(rng, 9);
            s[i] = 1 + uniform_index(rng, 9);
        }
        for (std::size_t i = 0; i < 5; ++i) {
            for (std::size_t j = 0; j < 5; ++j) {
                cm.at(i, j) = r[i] * s[j];
            }
        }
        product_zero = product_zero && kappa(cm) == 0.0;
    }
    // Class 3 never recalled.
    ConfusionMatrix zero_recall(5);
    for (std::size_t i = 0; i < 5; ++i) {
        zero_recall.at(i, i) = 7;
    }
    zero_recall.at(3, 3) = 0;
    zero_recall.at(3, 1) = 4;
    const bool mgm_zero = mgm(zero_recall) == 0.0;
    return {worst <= 1e-12 && product_zero && mgm_zero,
        "200 sets, worst abs diff " + fmt("%.2e", worst) + " (limit 1e-12); product-form kappa == 0: "
            + (product_zero ? "yes" : "no") + "; MGm == 0 with a zero recall: " + (mgm_zero ? "yes" : "no")};
}

Outcome time_reversal()
{
    Rng rng(105);
    MambaConfig cfg;
    cfg.d_model = 16;
    cfg.state_size = 8;
    const auto p = DirectionParams::init(cfg, "tied", rng);
    int exact = 0;
    for (int i = 0; i < 20; ++i) {
        const auto L = 2 + uniform_index(rng, 40);
        const auto x = on::random_array({2, L, cfg.d_inner()}, rng, -2.0, 2.0);
        const auto bwd = direction_forward(x, Direction::Backward, p);
        const auto ref = reverse_time(direction_forward(reverse_time(x), Direction::Forward, p));
        exact += (bwd == ref) ? 1 : 0;
    }
    return {exact == 20, std::to_string(exact) + "/20 inputs bit-identical"};
}

Outcome scan_bench(const fs::path& work)
{
    (void)work;
    const auto r = cli("scan-bench --lengths 1024,2048,4096 --d-model 64 --state 16 --repeats 5 --threshold 2.6");
    std::vector<std::string> ratios;
    std::istringstream in(r.output);
    std::string line;
    while (std::getline(in, line)) {
        if (line.rfind("ratio", 0) == 0) {
            ratios.push_back(line.substr(0, line.find(' ', 6)));
        }
    }
    std::string detail;
    for (const auto& s : ratios) {
        detail += (detail.empty() ? "" : ", ") + s;
    }
    const bool pass = r.code == 0 && ratios.size() == 2;
    return {pass, (detail.empty() ? "no ratios reported, exit " + std::to_string(r.code) : detail) + " (limit 2.6)"};
}

Outcome smote_properties()
{
    Rng rng(106);
    ScopedWarningCapture quiet;
    // Three overlapping Gaussian classes of unequal size in 4 dimensions.
    const std::array<std::size_t, 3> sizes{120, 30, 18};
    const std::array<double, 3> centers{0.0, 1.2, -1.0};
    std::size_t n = 0;
    for (auto s : sizes) {
        n += s;
    }
    const std::size_t d = 4;
    NdArray x({n, d});
    std::vector<std::size_t> y;
    for (std::size_t c = 0, row = 0; c < 3; ++c) {
        for (std::size_t i = 0; i < sizes[c]; ++i, ++row) {
            for (std::size_t j = 0; j < d; ++j) {
                x.at(row, j) = centers[c] + standard_normal(rng);
            }
            y.push_back(c);
        }
    }
    const NdArray original = x;
    SmoteConfig cfg;
    cfg.target_ratio = 0.75;
    const auto r = borderline_smote(x, y, 3, cfg, rng);

    const auto target = static_cast<std::size_t>(std::llround(0.75 * 120.0));
    const std::array<std::size_t, 3> want{120, target, target};
    bool counts_ok = true;
    for (std::size_t c = 0; c < 3; ++c) {
        counts_ok = counts_ok && static_cast<std::size_t>(std::count(r.labels.begin(), r.labels.end(), c)) == want[c];
    }
    bool originals_ok = x == original;
    for (std::size_t i = 0; i < n && originals_ok; ++i) {
        originals_ok = r.labels[i] == y[i];
        for (std::size_t j = 0; j < d; ++j) {
            originals_ok = originals_ok && r.features.at(i, j) == original.at(i, j);
        }
    }
    bool box_ok = r.origins.size() == r.labels.size() - n;
    for (std::size_t s = 0; s < r.origins.size() && box_ok; ++s) {
        const auto& o = r.origins[s];
        box_ok = y[o.base] == y[o.partner] && r.labels[n + s] == y[o.base];
        for (std::size_t j = 0; j < d; ++j) {
            const double lo = std::min(original.at(o.base, j), original.at(o.partner, j));
            const double hi = std::max(original.at(o.base, j), original.at(o.partner, j));
            const double v = r.features.at(n + s, j);
            box_ok = box_ok && v >= lo && v <= hi;
        }
    }
    return {counts_ok && originals_ok && box_ok,
        std::to_string(r.origins.size()) + " synthetic rows; counts exact: " + (counts_ok ? "yes" : "no")
            + "; inside pair box: " + (box_ok ? "yes" : "no") + "; originals untouched: " + (originals_ok ? "yes" : "no")};
}

Outcome scheduler_traces()
{
    const SchedulerConfig cfg;
    auto state = SchedulerState::initial(cfg);
    std::vector<SchedulerState> t;
    // First tick improves from -inf, then the trace is flat.
    for (int i = 0; i <= 40; ++i) {
        scheduler_tick(state, 0.5, cfg);
        t.push_back(state);
    }
    std::vector<std::string> bad;
    const auto expect = [&](bool ok, const std::string& what) {
        if (!ok) {
            bad.push_back(what);
        }
    };
    const auto near = [](double a, double b) { return std::abs(a - b) <= 1e-15 * std::max(1.0, std::abs(b)); };
    for (std::size_t k = 0; k < 5; ++k) {
        expect(t[k].lr == cfg.lr0, "lr0 before 5");
    }
    expect(t[5].lr == cfg.lr0 * 0.5, "halve at 5");
    expect(t[10].lr == cfg.lr0 * 0.25, "halve at 10");
    expect(t[14].phase == SchedulerPhase::RRP, "RRP at 14");
    expect(t[15].phase == SchedulerPhase::CLR, "CLR at 15");
    expect(near(t[15].lr, cfg.clr_base), "CLR base at relative 0");
    expect(near(t[20].lr, cfg.clr_max), "CLR max at relative 5");
    expect(near(t[25].lr, cfg.clr_base), "CLR base at relative 10");
    expect(!early_stop(t[29], cfg), "no stop at 29");
    expect(early_stop(t[30], cfg), "stop at 30");

    // Improvement just before the stop resets the counter; phase stays CLR.
    auto s2 = SchedulerState::initial(cfg);
    for (int i = 0; i < 30; ++i) {
        scheduler_tick(s2, 0.5, cfg);
    }
    expect(scheduler_tick(s2, 0.6, cfg), "improvement reported");
    expect(s2.epochs_since_best == 0 && s2.phase == SchedulerPhase::CLR, "reset keeps CLR");

    // Improvement every 4 epochs never decays the learning rate.
    auto s3 = SchedulerState::initial(cfg);
    for (int i = 0; i < 60; ++i) {
        scheduler_tick(s3, i % 4 == 0 ? 0.01 * i : 0.0, cfg);
        expect(s3.lr == cfg.lr0 && s3.phase == SchedulerPhase::RRP, "periodic improvement keeps lr0");
    }
    std::string detail = "3 scripted traces";
    if (!bad.empty()) {
        detail += "; mismatches: " + bad.front() + (bad.size() > 1 ? " (+" + std::to_string(bad.size() - 1) + ")" : "");
    } else {
        detail += "; halve at 5 and 10, CLR at 15, base/max/base at 15/20/25, stop at 30";
    }
    return {bad.empty(), detail};
}

// ---------------------------------------------------------------------------

struct SyntheticRun {
    Run gen;
    Run train;
    fs::path out;
};

SyntheticRun synthetic_run(const fs::path& work, const fs::path& config, const std::string& tag)
{
    SyntheticRun s;
    const auto data = work / "synthetic_10x400.epb";
    s.out = work / tag;
    fs::remove_all(s.out);
    s.gen = cli("gen-synthetic --subjects 10 --epochs 400 --seed 20240601 --out " + data.string());
    if (s.gen.code != 0) {
        return s;
    }
    s.train = cli("train --data " + data.string() + " --config " + config.string() + " --quiet --out " + s.out.string());
    return s;
}

Outcome end_to_end(const SyntheticRun& s)
{
    if (s.gen.code != 0) {
        return {false, "gen-synthetic exited " + std::to_string(s.gen.code) + ": " + tail(s.gen.output)};
    }
    if (s.train.code != 0) {
        return {false, "train exited " + std::to_string(s.train.code) + ": " + tail(s.train.output)};
    }
    const auto m = parse_report_csv(s.out / "pooled_report.csv");
    const double mf1 = m.count("overall/mf1") ? m.at("overall/mf1") / 100.0 : -1.0;
    const double kap = m.count("overall/kappa_raw") ? m.at("overall/kappa_raw") : -1.0;
    const double secs = s.gen.seconds + s.train.seconds;
    return {mf1 >= 0.85 && kap >= 0.80 && secs <= 900.0,
        "pooled MF1 " + fmt("%.4f", mf1) + " (>= 0.85), kappa " + fmt("%.4f", kap) + " (>= 0.80), "
            + fmt("%.1f", secs) + " s (<= 900 s)"};
}

Outcome ablation(const fs::path& work, const fs::path& config)
{
    const auto data = work / "synthetic_10x400.epb";
    const auto csv = work / "ablation.csv";
    const auto r = cli("ablate --data " + data.string() + " --config " + config.string() + " --quiet --out " + csv.string());
    if (r.code != 0) {
        return {false, "ablate exited " + std::to_string(r.code) + ": " + tail(r.output)};
    }
    std::map<std::string, double> mf1;
    std::istringstream in(slurp(csv));
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
        std::vector<std::string> cols;
        std::stringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, ',')) {
            cols.push_back(cell);
        }
        if (cols.size() >= 3) {
            mf1[cols[0]] = std::stod(cols[2]) / 100.0;
        }
    }
    const bool all_four = mf1.count("no_mamba") && mf1.count("fwd_only") && mf1.count("bwd_only") && mf1.count("bimamba");
    if (!all_four) {
        return {false, "missing variants in " + csv.string()};
    }
    const bool pass = mf1["bimamba"] >= mf1["fwd_only"] - 0.02 && mf1["bimamba"] >= mf1["bwd_only"] - 0.02;
    return {pass, "MF1 no_mamba " + fmt("%.4f", mf1["no_mamba"]) + ", fwd_only " + fmt("%.4f", mf1["fwd_only"])
            + ", bwd_only " + fmt("%.4f", mf1["bwd_only"]) + ", bimamba " + fmt("%.4f", mf1["bimamba"])
            + " (bimamba >= single - 0.02), " + fmt("%.1f", r.seconds) + " s"};
}

Outcome determinism(const SyntheticRun& first, const SyntheticRun& second)
{
    if (first.train.code != 0 || second.train.code != 0) {
        return {false, "a training run failed (exit " + std::to_string(first.train.code) + ", "
                + std::to_string(second.train.code) + ")"};
    }
    std::size_t compared = 0;
    std::vector<std::string> differ;
    for (const auto& entry : fs::directory_iterator(first.out)) {
        const auto name = entry.path().filename();
        ++compared;
        if (!fs::exists(second.out / name) || slurp(entry.path()) != slurp(second.out / name)) {
            differ.push_back(name.string());
        }
    }
    std::size_t second_count = 0;
    for ([[maybe_unused]] const auto& entry : fs::directory_iterator(second.out)) {
        ++second_count;
    }
    const bool pass = differ.empty() && compared > 0 && compared == second_count;
    std::string detail = std::to_string(compared) + " files compared";
    if (!differ.empty()) {
        detail += "; differing: " + differ.front();
    } else if (compared != second_count) {
        detail += "; file sets differ";
    } else {
        detail += ", all byte-identical";
    }
    return {pass, detail};
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Acceptance criteria runner"};
    std::string work_dir = "acceptance_work";
    std::string source_dir = BIMAMSLEEP_SOURCE_DIR;
    app.add_option("--work-dir", work_dir, "Scratch directory for generated data and reports");
    app.add_option("--source-dir", source_dir, "Project root (for configs/)");
    CLI11_PARSE(app, argc, argv);

    const fs::path work(work_dir);
    fs::create_directories(work);
    const fs::path configs = fs::path(source_dir) / "configs";

    int failures = 0;
    const auto report = [&](int n, const std::function<Outcome()>& body) {
        Outcome o;
        try {
            o = body();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        failures += o.pass ? 0 : 1;
        std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << n << ": " << o.detail << '\n' << std::flush;
    };

    report(1, gradient_suite);
    report(2, scan_kernel_oracle);
    report(3, zoh_rk4);
    report(4, focal_reduction);
    report(5, metrics_oracle);
    report(6, time_reversal);
    report(7, [&] { return scan_bench(work); });
    report(8, smote_properties);

    SyntheticRun first, second;
    report(9, [&] {
        first = synthetic_run(work, configs / "desk_synthetic.json", "run_1");
        return end_to_end(first);
    });
    report(10, scheduler_traces);
    report(11, [&] { return ablation(work, configs / "desk_ablation.json"); });
    report(12, [&] {
        second = synthetic_run(work, configs / "desk_synthetic.json", "run_2");
        return determinism(first, second);
    });

    std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << '\n';
    return failures == 0 ? 0 : 1;
}
