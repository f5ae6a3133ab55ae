#include "bimamsleep/trainer.hpp"

#include "bimamsleep/error.hpp"
#include "bimamsleep/focal_loss.hpp"
#include "bimamsleep/optimizer.hpp"
#include "bimamsleep/random.hpp"
#include "bimamsleep/smote.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <set>
#include <sstream>

namespace bimamsleep {

std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag, std::uint64_t index)
{
    // FNV-1a over the tag, then a splitmix64 finalizer.
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : tag) {
        h = (h ^ static_cast<unsigned char>(c)) * 0x100000001b3ULL;
    }
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (h ^ (index + 1));
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

std::string history_csv(const std::vector<EpochRecord>& history)
{
    std::ostringstream out;
    out << "epoch,loss,val_acc,lr,phase\n";
    char line[160];
    for (const auto& r : history) {
        std::snprintf(line, sizeof line, "%zu,%.6f,%.6f,%.6g,%s\n", r.epoch, r.loss, r.val_acc, r.lr,
            std::string(phase_name(r.phase)).c_str());
        out << line;
    }
    return out.str();
}

FoldPartition partition_fold(const EpochDataset& ds, const FoldSplit& fold, double val_fraction, std::uint64_t seed)
{
    std::vector<std::string> train_subjects = fold.train_subjects;
    std::sort(train_subjects.begin(), train_subjects.end());
    if (train_subjects.size() < 2) {
        throw DataError("fold " + std::to_string(fold.fold_index)
            + ": need at least 2 training subjects to carve out a validation subject");
    }
    Rng rng(derive_seed(seed, "validation", fold.fold_index));
    shuffle(train_subjects.begin(), train_subjects.end(), rng);
    const auto n_val = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(train_subjects.size()))));
    const auto n_val_capped = std::min(n_val, train_subjects.size() - 1);
    std::vector<std::string> val(train_subjects.end() - static_cast<std::ptrdiff_t>(n_val_capped), train_subjects.end());
    train_subjects.resize(train_subjects.size() - n_val_capped);
    std::sort(val.begin(), val.end());
    std::sort(train_subjects.begin(), train_subjects.end());

    FoldPartition p;
    p.train = ds.indices_of_subjects(train_subjects);
    p.validation = ds.indices_of_subjects(val);
    p.test = ds.indices_of_subjects(fold.test_subjects);
    p.validation_subjects = std::move(val);
    if (p.train.empty() || p.validation.empty() || p.test.empty()) {
        throw DataError("fold " + std::to_string(fold.fold_index) + ": empty train, validation or test split");
    }
    return p;
}

void assert_no_leakage(const EpochDataset& ds, const FoldPartition& part)
{
    const auto subjects_of = [&](const std::vector<std::size_t>& idx) {
        std::set<std::string> s;
        for (auto i : idx) {
            s.insert(ds.subject(i));
        }
        return s;
    };
    const auto disjoint = [](const auto& a, const auto& b) {
        for (const auto& x : a) {
            if (b.count(x) != 0) {
                return false;
            }
        }
        return true;
    };
    const std::set<std::size_t> tr(part.train.begin(), part.train.end());
    const std::set<std::size_t> va(part.validation.begin(), part.validation.end());
    const std::set<std::size_t> te(part.test.begin(), part.test.end());
    if (!disjoint(tr, va) || !disjoint(tr, te) || !disjoint(va, te)) {
        throw Error("leakage: train/validation/test epoch index sets intersect");
    }
    const auto s_tr = subjects_of(part.train);
    const auto s_va = subjects_of(part.validation);
    const auto s_te = subjects_of(part.test);
    if (!disjoint(s_tr, s_te) || !disjoint(s_va, s_te) || !disjoint(s_tr, s_va)) {
        throw Error("leakage: a subject appears in more than one split");
    }
}

namespace {

double evaluate_accuracy(SleepModel& model, const EpochDataset& ds, const std::vector<std::size_t>& idx,
    std::size_t batch, ConfusionMatrix* cm)
{
    std::size_t correct = 0;
    for (std::size_t start = 0; start < idx.size(); start += batch) {
        const auto end = std::min(idx.size(), start + batch);
        const std::span<const std::size_t> rows(idx.data() + start, end - start);
        const auto pred = model.predict(make_batch(ds.samples().data(), rows));
        for (std::size_t i = 0; i < rows.size(); ++i) {
            const auto truth = stage_index(ds.label(rows[i]));
            correct += pred[i] == truth ? 1 : 0;
            if (cm != nullptr) {
                cm->add(truth, pred[i]);
            }
        }
    }
    return static_cast<double>(correct) / static_cast<double>(idx.size());
}

} // namespace

FoldResult train_fold(const EpochDataset& ds, const FoldSplit& fold, const TrainConfig& cfg, const ProgressFn& progress)
{
    cfg.validate();
    const auto part = partition_fold(ds, fold, cfg.val_fraction, cfg.seed);
    assert_no_leakage(ds, part);
    const auto say = [&](const std::string& s) {
        if (progress) {
            progress(s);
        }
    };

    // Training matrix: raw epochs of training subjects, optionally oversampled.
    const auto d = kSamplesPerEpoch;
    NdArray train_x({part.train.size(), d});
    std::vector<std::size_t> train_y(part.train.size());
    for (std::size_t i = 0; i < part.train.size(); ++i) {
        const auto src = ds.epoch(part.train[i]);
        std::copy(src.begin(), src.end(), train_x.data() + i * d);
        train_y[i] = stage_index(ds.label(part.train[i]));
    }
    std::size_t synthetic = 0;
    if (cfg.smote.enabled) {
        Rng srng(derive_seed(cfg.seed, "smote", fold.fold_index));
        auto sm = borderline_smote(train_x, train_y, cfg.model.num_classes, cfg.smote, srng);
        synthetic = sm.origins.size();
        train_x = std::move(sm.features);
        train_y = std::move(sm.labels);
    }
    std::array<std::size_t, kNumStages> counts{};
    for (auto y : train_y) {
        ++counts[y];
    }

    FocalConfig focal;
    focal.gamma = cfg.focal_gamma;
    focal.alpha = cfg.focal_alpha.empty() ? alpha_from_frequencies(counts) : cfg.focal_alpha;

    SleepModel model(cfg.model, derive_seed(cfg.seed, "init"));
    auto params = model.parameters();
    Adam adam(params);
    const auto sched_cfg = cfg.scheduler();
    auto sched = SchedulerState::initial(sched_cfg);
    ModelSnapshot best = model.snapshot();
    std::size_t best_epoch = 0;

    Rng batch_rng(derive_seed(cfg.seed, "batches", fold.fold_index));
    Rng dropout_rng(derive_seed(cfg.seed, "dropout", fold.fold_index));
    std::vector<std::size_t> order(train_y.size());
    std::iota(order.begin(), order.end(), std::size_t{0});

    say("fold " + std::to_string(fold.fold_index) + ": " + std::to_string(part.train.size()) + " train (+"
        + std::to_string(synthetic) + " synthetic), " + std::to_string(part.validation.size()) + " validation, "
        + std::to_string(part.test.size()) + " test epochs");

    std::vector<EpochRecord> history;
    for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        shuffle(order.begin(), order.end(), batch_rng);
        const double lr = sched.lr;
        const auto phase = sched.phase;
        double loss_sum = 0.0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const auto end = std::min(order.size(), start + cfg.batch_size);
            const std::span<const std::size_t> rows(order.data() + start, end - start);
            const NdArray x = make_batch(train_x.data(), rows);
            std::vector<std::size_t> y(rows.size());
            for (std::size_t i = 0; i < rows.size(); ++i) {
                y[i] = train_y[rows[i]];
            }
            model.zero_grad();
            ModelCache cache;
            const NdArray logits = model.forward(x, nn::Mode::Train, dropout_rng, &cache);
            const auto fl = focal_loss(logits, y, focal);
            model.backward(cache, fl.grad);
            clip_grad_norm(params, cfg.grad_clip);
            adam.step(lr);
            loss_sum += fl.loss * static_cast<double>(rows.size());
        }
        const double val_acc = evaluate_accuracy(model, ds, part.validation, cfg.eval_batch_size, nullptr);
        const double mean_loss = loss_sum / static_cast<double>(order.size());
        history.push_back({epoch, mean_loss, val_acc, lr, phase});
        if (scheduler_tick(sched, val_acc, sched_cfg)) {
            best = model.snapshot();
            best_epoch = epoch;
        }
        char line[160];
        std::snprintf(line, sizeof line, "fold %zu epoch %zu: loss %.4f val_acc %.4f lr %.3g %s", fold.fold_index,
            epoch, mean_loss, val_acc, lr, std::string(phase_name(phase)).c_str());
        say(line);
        if (early_stop(sched, sched_cfg)) {
            say("fold " + std::to_string(fold.fold_index) + ": early stop after epoch " + std::to_string(epoch));
            break;
        }
    }

    model.restore(best);
    ConfusionMatrix cm(cfg.model.num_classes);
    evaluate_accuracy(model, ds, part.test, cfg.eval_batch_size, &cm);
    return FoldResult{fold.fold_index, std::move(cm), std::move(history), std::move(model), best_epoch, counts,
        synthetic, focal.alpha, part.validation_subjects};
}

CrossValidationResult cross_validate(const EpochDataset& ds, const TrainConfig& cfg, const ProgressFn& progress)
{
    cfg.validate();
    const auto folds = make_folds(ds, cfg.folds, cfg.seed);
    CrossValidationResult r;
    r.pooled = ConfusionMatrix(cfg.model.num_classes);
    for (const auto& f : folds) {
        r.folds.push_back(train_fold(ds, f, cfg, progress));
        r.pooled += r.folds.back().confusion;
    }
    return r;
}

std::vector<AblationRow> run_ablation(const EpochDataset& ds, const TrainConfig& cfg,
    const std::vector<MambaVariant>& variants, const ProgressFn& progress)
{
    std::vector<AblationRow> rows;
    for (auto v : variants) {
        TrainConfig c = cfg;
        c.model.mamba.variant = v;
        if (progress) {
            progress("ablation variant " + std::string(variant_name(v)));
        }
        auto cv = cross_validate(ds, c, progress);
        rows.push_back({v, cv.pooled, summarize(cv.pooled)});
    }
    return rows;
}

std::string ablation_csv(const std::vector<AblationRow>& rows)
{
    std::ostringstream out;
    out << "variant,acc,mf1,kappa,mgm\n";
    char line[160];
    for (const auto& r : rows) {
        std::snprintf(line, sizeof line, "%s,%.2f,%.2f,%.2f,%.2f\n", std::string(variant_name(r.variant)).c_str(),
            100.0 * r.summary.acc, 100.0 * r.summary.mf1, 100.0 * r.summary.kappa, 100.0 * r.summary.mgm);
        out << line;
    }
    return out.str();
}

std::string ablation_text(const std::vector<AblationRow>& rows)
{
    std::ostringstream out;
    char line[160];
    std::snprintf(line, sizeof line, "%-10s %8s %8s %8s %8s\n", "variant", "ACC", "MF1", "k", "MGm");
    out << line;
    for (const auto& r : rows) {
        std::snprintf(line, sizeof line, "%-10s %8.2f %8.2f %8.2f %8.2f\n", std::string(variant_name(r.variant)).c_str(),
            100.0 * r.summary.acc, 100.0 * r.summary.mf1, 100.0 * r.summary.kappa, 100.0 * r.summary.mgm);
        out << line;
    }
    return out.str();
}

} // namespace bimamsleep
