#include "bimamsleep/synth.hpp"

#include "bimamsleep/error.hpp"
#include "bimamsleep/random.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>
#include <numeric>

namespace bimamsleep {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

void add_tones(std::vector<double>& x, std::size_t count, double f_lo, double f_hi, double a_lo,
    double a_hi, Rng& rng)
{
    for (std::size_t c = 0; c < count; ++c) {
        const double f = uniform(rng, f_lo, f_hi);
        const double a = uniform(rng, a_lo, a_hi);
        const double phase = uniform(rng, 0.0, kTwoPi);
        for (std::size_t n = 0; n < x.size(); ++n) {
            const double t = static_cast<double>(n) / kSampleRateHz;
            x[n] += a * std::sin(kTwoPi * f * t + phase);
        }
    }
}

void add_spindles(std::vector<double>& x, Rng& rng)
{
    const std::size_t bursts = 2 + uniform_index(rng, 2);
    for (std::size_t b = 0; b < bursts; ++b) {
        const double f = uniform(rng, 12.0, 14.0);
        const double duration = uniform(rng, 1.0, 2.0);
        const double amp = uniform(rng, 25.0, 35.0);
        const double start = uniform(rng, 0.0, static_cast<double>(kEpochSeconds) - duration);
        const double phase = uniform(rng, 0.0, kTwoPi);
        const auto n0 = static_cast<std::size_t>(start * kSampleRateHz);
        const auto len = static_cast<std::size_t>(duration * kSampleRateHz);
        for (std::size_t k = 0; k < len && n0 + k < x.size(); ++k) {
            const double w = 0.5 - 0.5 * std::cos(kTwoPi * static_cast<double>(k) / static_cast<double>(len));
            const double t = static_cast<double>(n0 + k) / kSampleRateHz;
            x[n0 + k] += amp * w * std::sin(kTwoPi * f * t + phase);
        }
    }
}

} // namespace

std::vector<float> synth_epoch(SleepStage stage, double gain, double snr_db, Rng& rng)
{
    std::vector<double> x(kSamplesPerEpoch, 0.0);
    switch (stage) {
    case SleepStage::W:
        add_tones(x, 5, 8.0, 30.0, 6.0, 10.0, rng);
        break;
    case SleepStage::N1:
        add_tones(x, 3, 4.0, 8.0, 20.0, 28.0, rng);
        break;
    case SleepStage::N2:
        add_tones(x, 1, 10.0, 10.0, 12.0, 18.0, rng);
        add_spindles(x, rng);
        break;
    case SleepStage::N3:
        add_tones(x, 3, 0.5, 4.0, 40.0, 60.0, rng);
        break;
    case SleepStage::REM:
        add_tones(x, 3, 4.0, 8.0, 6.0, 9.0, rng);
        break;
    }
    double power = 0.0;
    for (double v : x) {
        power += v * v;
    }
    const double rms = std::sqrt(power / static_cast<double>(x.size()));
    const double noise_std = rms / std::pow(10.0, snr_db / 20.0);

    std::vector<float> out(kSamplesPerEpoch);
    for (std::size_t n = 0; n < x.size(); ++n) {
        out[n] = static_cast<float>(gain * (x[n] + noise_std * standard_normal(rng)));
    }
    return out;
}

std::array<double, kNumStages> normalize_priors(std::span<const double> priors, bool& renormalized)
{
    if (priors.size() != kNumStages) {
        throw ConfigError("priors: expected 5 values, got " + std::to_string(priors.size()));
    }
    std::array<double, kNumStages> p{};
    double sum = 0.0;
    for (std::size_t i = 0; i < kNumStages; ++i) {
        if (!std::isfinite(priors[i]) || priors[i] < 0.0) {
            throw ConfigError("priors: entry " + std::to_string(i) + " must be finite and >= 0");
        }
        p[i] = priors[i];
        sum += priors[i];
    }
    if (!(sum > 0.0)) {
        throw ConfigError("priors: sum must be positive");
    }
    renormalized = std::abs(sum - 1.0) > 1e-6;
    for (auto& v : p) {
        v /= sum;
    }
    return p;
}

std::array<double, kNumStages> validate_priors(std::span<const double> priors)
{
    bool renormalized = false;
    auto p = normalize_priors(priors, renormalized);
    if (renormalized) {
        throw ConfigError("priors: values must sum to 1");
    }
    return p;
}

EpochDataset synth_generate(std::size_t n_subjects, std::size_t epochs_per_subject,
    std::span<const double> priors, std::uint64_t seed, const SynthOptions& options)
{
    const auto p = validate_priors(priors);
    if (n_subjects == 0 || epochs_per_subject == 0) {
        throw ConfigError("synth_generate: need at least one subject and one epoch");
    }
    if (n_subjects > 9999) {
        throw ConfigError("synth_generate: at most 9999 subjects");
    }
    std::array<double, kNumStages> cdf{};
    std::partial_sum(p.begin(), p.end(), cdf.begin());

    Rng rng(seed);
    EpochDataset ds;
    ds.reserve(n_subjects * epochs_per_subject);
    for (std::size_t s = 0; s < n_subjects; ++s) {
        char name[16];
        std::snprintf(name, sizeof(name), "synth_%02zu", s);
        const double gain = uniform(rng, 1.0 - options.subject_gain_jitter, 1.0 + options.subject_gain_jitter);
        for (std::size_t e = 0; e < epochs_per_subject; ++e) {
            const double u = uniform01(rng);
            std::size_t c = 0;
            while (c + 1 < kNumStages && (u >= cdf[c] || p[c] == 0.0)) {
                ++c;
            }
            // Guard against rounding in the last bucket landing on a zero prior.
            while (p[c] == 0.0 && c > 0) {
                --c;
            }
            const auto stage = static_cast<SleepStage>(c);
            ds.append(synth_epoch(stage, gain, options.snr_db, rng), stage, name);
        }
    }
    return ds;
}

} // namespace bimamsleep
