#pragma once

#include "bimamsleep/metrics.hpp"
#include "bimamsleep/model.hpp"
#include "bimamsleep/scheduler.hpp"
#include "bimamsleep/signal_io.hpp"
#include "bimamsleep/train_config.hpp"

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace bimamsleep {

struct EpochRecord {
    std::size_t epoch = 0;
    double loss = 0.0;
    double val_acc = 0.0;
    double lr = 0.0; // rate used for this epoch's updates
    SchedulerPhase phase = SchedulerPhase::RRP;

    bool operator==(const EpochRecord&) const = default;
};

// `epoch,loss,val_acc,lr,phase`
std::string history_csv(const std::vector<EpochRecord>& history);

struct FoldResult {
    std::size_t fold_index = 0;
    ConfusionMatrix confusion;
    std::vector<EpochRecord> history;
    SleepModel model; // best-validation snapshot
    std::size_t best_epoch = 0;
    std::array<std::size_t, kNumStages> train_counts{}; // after oversampling
    std::size_t synthetic_samples = 0;
    std::vector<double> alpha;
    std::vector<std::string> validation_subjects;
};

// Index sets used by one fold; the trainer asserts they are pairwise disjoint.
struct FoldPartition {
    std::vector<std::size_t> train;
    std::vector<std::size_t> validation;
    std::vector<std::size_t> test;
    std::vector<std::string> validation_subjects;
};

/// Validation = the last max(1, round(val_fraction * n)) training subjects
/// after a seeded shuffle of the sorted subject list.
FoldPartition partition_fold(const EpochDataset& ds, const FoldSplit& fold, double val_fraction, std::uint64_t seed);

// Throws Error when any two index sets intersect or subjects leak across them.
void assert_no_leakage(const EpochDataset& ds, const FoldPartition& part);

using ProgressFn = std::function<void(std::string_view)>;

FoldResult train_fold(const EpochDataset& ds, const FoldSplit& fold, const TrainConfig& cfg,
    const ProgressFn& progress = {});

struct CrossValidationResult {
    std::vector<FoldResult> folds;
    ConfusionMatrix pooled;
};

CrossValidationResult cross_validate(const EpochDataset& ds, const TrainConfig& cfg, const ProgressFn& progress = {});

struct AblationRow {
    MambaVariant variant = MambaVariant::BiMamba;
    ConfusionMatrix confusion;
    MetricsSummary summary;
};

/// Full cross-validation per variant, same seed and initialization stream.
std::vector<AblationRow> run_ablation(const EpochDataset& ds, const TrainConfig& cfg,
    const std::vector<MambaVariant>& variants, const ProgressFn& progress = {});

// `variant,acc,mf1,kappa,mgm` with percentages (two decimals).
std::string ablation_csv(const std::vector<AblationRow>& rows);
std::string ablation_text(const std::vector<AblationRow>& rows);

// Derives an independent stream seed from the run seed and a purpose tag.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag, std::uint64_t index = 0);

} // namespace bimamsleep
