#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace bimamsleep {

inline constexpr std::size_t kNumStages = 5;
inline constexpr std::size_t kSampleRateHz = 100;
inline constexpr std::size_t kEpochSeconds = 30;
inline constexpr std::size_t kSamplesPerEpoch = kSampleRateHz * kEpochSeconds;

// Post-merge label set; the enumerator value is the on-disk code.
enum class SleepStage : std::uint8_t { W = 0, N1 = 1, N2 = 2, N3 = 3, REM = 4 };

// Sentinels that only exist in raw recordings.
inline constexpr std::uint8_t kRawCodeN4 = 5;
inline constexpr std::uint8_t kRawCodeUnknown = 255;

inline constexpr std::array<std::string_view, kNumStages> kStageNames{"W", "N1", "N2", "N3", "REM"};

std::string_view stage_name(SleepStage stage);
std::optional<SleepStage> stage_from_code(std::uint8_t code);
inline std::size_t stage_index(SleepStage s) { return static_cast<std::size_t>(s); }

struct RawAnnotatedRecording {
    std::vector<double> samples; // microvolts
    std::size_t sample_rate_hz = kSampleRateHz;
    std::vector<std::uint8_t> labels; // one code per 30 s epoch: 0..4, kRawCodeN4, kRawCodeUnknown
    std::string subject_id;
};

/// Labeled 30 s single-channel epochs. Samples are held in single precision,
/// which is exactly what the EPB format stores.
class EpochDataset {
public:
    std::size_t size() const noexcept { return labels_.size(); }
    bool empty() const noexcept { return labels_.empty(); }

    std::span<const float> epoch(std::size_t i) const;
    SleepStage label(std::size_t i) const { return labels_[i]; }
    const std::string& subject(std::size_t i) const { return subject_ids_[i]; }

    const std::vector<float>& samples() const noexcept { return samples_; }
    const std::vector<SleepStage>& labels() const noexcept { return labels_; }
    const std::vector<std::string>& subject_ids() const noexcept { return subject_ids_; }

    void append(std::span<const float> epoch, SleepStage label, std::string subject_id);
    void append_dataset(const EpochDataset& other);
    void reserve(std::size_t epochs);

    // Distinct subject ids, sorted.
    std::vector<std::string> subjects() const;
    std::vector<std::size_t> indices_of_subjects(std::span<const std::string> subjects) const;
    EpochDataset subset(std::span<const std::size_t> indices) const;

    // Throws FormatError when an invariant does not hold.
    void validate() const;

    bool operator==(const EpochDataset& other) const = default;

private:
    std::vector<float> samples_;
    std::vector<SleepStage> labels_;
    std::vector<std::string> subject_ids_;
};

/// Removes UNKNOWN epochs, folds N4 into N3 and trims leading/trailing wake
/// runs to at most 60 epochs (30 min) next to the sleep period. Recordings
/// without any sleep keep their first and last 60 wake epochs.
EpochDataset preprocess(const RawAnnotatedRecording& rec);

// Label-level view of the same rule (returns indices of kept epochs in the
// input order; codes must already be free of UNKNOWN and N4).
std::vector<std::size_t> wake_trim_indices(std::span<const SleepStage> labels,
    std::size_t max_wake_epochs = 60);

// ---------------------------------------------------------------------------
// EPB binary format (little-endian):
//   "EPB1" | u16 version=1 | u32 n_epochs | u32 samples_per_epoch=3000 |
//   u16 sample_rate_hz=100 | u8 labels[n] | u16 n_subjects |
//   { u16 byte_length, utf8 bytes }[n_subjects] | u16 subject_index[n] |
//   f32 samples[n * 3000]

inline constexpr std::uint16_t kEpbVersion = 1;

std::vector<std::uint8_t> encode_epb(const EpochDataset& ds);
EpochDataset decode_epb(std::span<const std::uint8_t> bytes);

void write_epb(const EpochDataset& ds, const std::filesystem::path& path);
EpochDataset read_epb(const std::filesystem::path& path);

/// Manifest: UTF-8 CSV with rows `path,subject_id` (optional header line).
/// Relative paths resolve against the manifest's directory. A non-empty
/// subject_id replaces the ids stored inside that EPB file.
struct ManifestEntry {
    std::filesystem::path path;
    std::string subject_id;
};

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);
EpochDataset load_manifest(const std::filesystem::path& path);

// Dispatches on extension: ".csv" is a manifest, anything else an EPB file.
EpochDataset load_dataset(const std::filesystem::path& path);

// ---------------------------------------------------------------------------

struct FoldSplit {
    std::size_t fold_index = 0;
    std::vector<std::string> train_subjects; // sorted
    std::vector<std::string> test_subjects;  // sorted
};

/// Subject-wise k-fold split. Subjects are shuffled with the seed and dealt
/// round-robin, so fold sizes differ by at most one subject.
std::vector<FoldSplit> make_folds(const EpochDataset& ds, std::size_t k, std::uint64_t seed);

std::array<std::size_t, kNumStages> class_histogram(const EpochDataset& ds);
std::array<std::size_t, kNumStages> class_histogram(std::span<const SleepStage> labels);

} // namespace bimamsleep
