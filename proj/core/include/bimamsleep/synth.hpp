#pragma once

#include "bimamsleep/random.hpp"
#include "bimamsleep/signal_io.hpp"

#include <array>
#include <cstdint>
#include <span>

namespace bimamsleep {

// Sleep-EDF-20 stage distribution (W, N1, N2, N3, REM).
inline constexpr std::array<double, kNumStages> kSleepEdf20Priors{0.196, 0.066, 0.421, 0.135, 0.182};

struct SynthOptions {
    double snr_db = 10.0;
    // Per-subject amplitude gain is drawn from [1 - jitter, 1 + jitter].
    double subject_gain_jitter = 0.1;
};

/// Stage-dependent synthetic EEG. Each stage has its own dominant band:
///   W    mix of 8-30 Hz components
///   N1   4-8 Hz, medium amplitude
///   N2   10 Hz background with 12-14 Hz spindle bursts
///   N3   0.5-4 Hz, high amplitude
///   REM  4-8 Hz, low amplitude
/// plus white Gaussian noise at the configured SNR. Labels are drawn i.i.d.
/// from the priors; subjects are named synth_00, synth_01, ...
EpochDataset synth_generate(std::size_t n_subjects, std::size_t epochs_per_subject,
    std::span<const double> priors, std::uint64_t seed, const SynthOptions& options = {});

// One epoch for a given stage (exposed for spectral tests).
std::vector<float> synth_epoch(SleepStage stage, double gain, double snr_db, Rng& rng);

// Throws ConfigError unless there are five finite, non-negative priors summing to 1 (+-1e-6).
std::array<double, kNumStages> validate_priors(std::span<const double> priors);

// Like validate_priors but rescales any positive total to 1. `renormalized`
// reports whether the input sum differed from 1.
std::array<double, kNumStages> normalize_priors(std::span<const double> priors, bool& renormalized);

} // namespace bimamsleep
