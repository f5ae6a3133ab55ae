#include "bimamsleep/signal_io.hpp"

#include "bimamsleep/error.hpp"
#include "bimamsleep/random.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <set>
#include <sstream>

namespace bimamsleep {

static_assert(std::numeric_limits<float>::is_iec559, "EPB stores IEEE-754 binary32 samples");

std::string_view stage_name(SleepStage stage)
{
    return kStageNames[stage_index(stage)];
}

std::optional<SleepStage> stage_from_code(std::uint8_t code)
{
    if (code < kNumStages) {
        return static_cast<SleepStage>(code);
    }
    return std::nullopt;
}

// ---------------------------------------------------------------------------

std::span<const float> EpochDataset::epoch(std::size_t i) const
{
    return std::span<const float>(samples_).subspan(i * kSamplesPerEpoch, kSamplesPerEpoch);
}

void EpochDataset::append(std::span<const float> epoch, SleepStage label, std::string subject_id)
{
    if (epoch.size() != kSamplesPerEpoch) {
        throw FormatError("epoch must have " + std::to_string(kSamplesPerEpoch) + " samples, got "
            + std::to_string(epoch.size()));
    }
    samples_.insert(samples_.end(), epoch.begin(), epoch.end());
    labels_.push_back(label);
    subject_ids_.push_back(std::move(subject_id));
}

void EpochDataset::append_dataset(const EpochDataset& other)
{
    samples_.insert(samples_.end(), other.samples_.begin(), other.samples_.end());
    labels_.insert(labels_.end(), other.labels_.begin(), other.labels_.end());
    subject_ids_.insert(subject_ids_.end(), other.subject_ids_.begin(), other.subject_ids_.end());
}

void EpochDataset::reserve(std::size_t epochs)
{
    samples_.reserve(epochs * kSamplesPerEpoch);
    labels_.reserve(epochs);
    subject_ids_.reserve(epochs);
}

std::vector<std::string> EpochDataset::subjects() const
{
    std::set<std::string> unique(subject_ids_.begin(), subject_ids_.end());
    return {unique.begin(), unique.end()};
}

std::vector<std::size_t> EpochDataset::indices_of_subjects(std::span<const std::string> subjects) const
{
    std::set<std::string_view> wanted(subjects.begin(), subjects.end());
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < size(); ++i) {
        if (wanted.contains(subject_ids_[i])) {
            out.push_back(i);
        }
    }
    return out;
}

EpochDataset EpochDataset::subset(std::span<const std::size_t> indices) const
{
    EpochDataset out;
    out.reserve(indices.size());
    for (auto i : indices) {
        if (i >= size()) {
            throw ShapeError("EpochDataset::subset: index " + std::to_string(i) + " out of range");
        }
        out.append(epoch(i), labels_[i], subject_ids_[i]);
    }
    return out;
}

void EpochDataset::validate() const
{
    if (samples_.size() != labels_.size() * kSamplesPerEpoch || subject_ids_.size() != labels_.size()) {
        throw FormatError("dataset arrays are inconsistent");
    }
    for (auto l : labels_) {
        if (static_cast<std::size_t>(l) >= kNumStages) {
            throw FormatError("dataset holds invalid stage code " + std::to_string(static_cast<int>(l)));
        }
    }
    for (std::size_t i = 0; i < samples_.size(); ++i) {
        if (!std::isfinite(samples_[i])) {
            throw FormatError("non-finite sample in epoch " + std::to_string(i / kSamplesPerEpoch));
        }
    }
}

// ---------------------------------------------------------------------------

std::vector<std::size_t> wake_trim_indices(std::span<const SleepStage> labels, std::size_t max_wake_epochs)
{
    const std::size_t n = labels.size();
    std::vector<std::size_t> keep;
    auto is_wake = [&](std::size_t i) { return labels[i] == SleepStage::W; };

    std::size_t first = n;
    std::size_t last = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (!is_wake(i)) {
            first = std::min(first, i);
            last = i;
        }
    }
    if (first == n) {
        // No sleep period: keep the head and tail windows.
        for (std::size_t i = 0; i < n; ++i) {
            if (i < max_wake_epochs || i + max_wake_epochs >= n) {
                keep.push_back(i);
            }
        }
        return keep;
    }
    const std::size_t begin = first > max_wake_epochs ? first - max_wake_epochs : 0;
    const std::size_t end = std::min(n, last + max_wake_epochs + 1);
    for (std::size_t i = begin; i < end; ++i) {
        keep.push_back(i);
    }
    return keep;
}

EpochDataset preprocess(const RawAnnotatedRecording& rec)
{
    if (rec.sample_rate_hz != kSampleRateHz) {
        throw FormatError("recording '" + rec.subject_id + "': sample rate must be "
            + std::to_string(kSampleRateHz) + " Hz, got " + std::to_string(rec.sample_rate_hz));
    }
    if (rec.samples.size() != rec.labels.size() * kSamplesPerEpoch) {
        throw FormatError("recording '" + rec.subject_id + "': " + std::to_string(rec.samples.size())
            + " samples do not match " + std::to_string(rec.labels.size()) + " epochs of "
            + std::to_string(kSamplesPerEpoch));
    }

    std::vector<std::size_t> raw_index;
    std::vector<SleepStage> labels;
    for (std::size_t i = 0; i < rec.labels.size(); ++i) {
        const auto code = rec.labels[i];
        if (code == kRawCodeUnknown) {
            continue;
        }
        SleepStage stage;
        if (code == kRawCodeN4) {
            stage = SleepStage::N3;
        } else if (auto s = stage_from_code(code)) {
            stage = *s;
        } else {
            throw FormatError("recording '" + rec.subject_id + "': invalid label code "
                + std::to_string(code) + " at epoch " + std::to_string(i));
        }
        raw_index.push_back(i);
        labels.push_back(stage);
    }
    if (labels.empty()) {
        throw EmptyDatasetError("recording '" + rec.subject_id + "' has no scored epochs");
    }

    EpochDataset out;
    std::vector<float> buffer(kSamplesPerEpoch);
    for (auto k : wake_trim_indices(labels)) {
        const auto src = raw_index[k] * kSamplesPerEpoch;
        for (std::size_t j = 0; j < kSamplesPerEpoch; ++j) {
            const double v = rec.samples[src + j];
            if (!std::isfinite(v)) {
                throw FormatError("recording '" + rec.subject_id + "': non-finite sample in epoch "
                    + std::to_string(raw_index[k]));
            }
            buffer[j] = static_cast<float>(v);
        }
        out.append(buffer, labels[k], rec.subject_id);
    }
    return out;
}

// ---------------------------------------------------------------------------
// EPB

namespace {

constexpr std::array<char, 4> kMagic{'E', 'P', 'B', '1'};

class ByteWriter {
public:
    template <typename T>
    void put(T value)
    {
        static_assert(std::is_trivially_copyable_v<T>);
        std::array<std::uint8_t, sizeof(T)> raw;
        std::memcpy(raw.data(), &value, sizeof(T));
        if constexpr (std::endian::native == std::endian::big) {
            std::reverse(raw.begin(), raw.end());
        }
        bytes.insert(bytes.end(), raw.begin(), raw.end());
    }

    void put_bytes(const void* p, std::size_t n)
    {
        const auto* b = static_cast<const std::uint8_t*>(p);
        bytes.insert(bytes.end(), b, b + n);
    }

    std::vector<std::uint8_t> bytes;
};

class ByteReader {
public:
    explicit ByteReader(std::span<const std::uint8_t> data)
        : data_(data)
    {
    }

    template <typename T>
    T get(const char* what)
    {
        need(sizeof(T), what);
        std::array<std::uint8_t, sizeof(T)> raw;
        std::memcpy(raw.data(), data_.data() + pos_, sizeof(T));
        if constexpr (std::endian::native == std::endian::big) {
            std::reverse(raw.begin(), raw.end());
        }
        pos_ += sizeof(T);
        T value;
        std::memcpy(&value, raw.data(), sizeof(T));
        return value;
    }

    std::span<const std::uint8_t> take(std::size_t n, const char* what)
    {
        need(n, what);
        auto s = data_.subspan(pos_, n);
        pos_ += n;
        return s;
    }

    std::size_t remaining() const { return data_.size() - pos_; }

private:
    void need(std::size_t n, const char* what) const
    {
        if (data_.size() - pos_ < n) {
            throw EpbTruncatedError(std::string("EPB truncated while reading ") + what + ": need "
                + std::to_string(n) + " bytes at offset " + std::to_string(pos_) + ", have "
                + std::to_string(data_.size() - pos_));
        }
    }

    std::span<const std::uint8_t> data_;
    std::size_t pos_ = 0;
};

} // namespace

std::vector<std::uint8_t> encode_epb(const EpochDataset& ds)
{
    ds.validate();
    if (ds.size() > UINT32_MAX) {
        throw FormatError("EPB: too many epochs");
    }

    std::vector<std::string> table;
    std::map<std::string, std::uint16_t> index_of;
    std::vector<std::uint16_t> subject_index;
    subject_index.reserve(ds.size());
    for (const auto& s : ds.subject_ids()) {
        auto it = index_of.find(s);
        if (it == index_of.end()) {
            if (table.size() >= UINT16_MAX) {
                throw FormatError("EPB: more than 65535 subjects");
            }
            if (s.size() > UINT16_MAX) {
                throw FormatError("EPB: subject id longer than 65535 bytes");
            }
            it = index_of.emplace(s, static_cast<std::uint16_t>(table.size())).first;
            table.push_back(s);
        }
        subject_index.push_back(it->second);
    }

    ByteWriter w;
    w.bytes.reserve(32 + ds.size() * (3 + 4 * kSamplesPerEpoch));
    w.put_bytes(kMagic.data(), kMagic.size());
    w.put<std::uint16_t>(kEpbVersion);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(ds.size()));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(kSamplesPerEpoch));
    w.put<std::uint16_t>(static_cast<std::uint16_t>(kSampleRateHz));
    for (auto l : ds.labels()) {
        w.put<std::uint8_t>(static_cast<std::uint8_t>(l));
    }
    w.put<std::uint16_t>(static_cast<std::uint16_t>(table.size()));
    for (const auto& s : table) {
        w.put<std::uint16_t>(static_cast<std::uint16_t>(s.size()));
        w.put_bytes(s.data(), s.size());
    }
    for (auto idx : subject_index) {
        w.put<std::uint16_t>(idx);
    }
    for (float v : ds.samples()) {
        w.put<float>(v);
    }
    return std::move(w.bytes);
}

EpochDataset decode_epb(std::span<const std::uint8_t> bytes)
{
    ByteReader r(bytes);
    const auto magic = r.take(4, "magic");
    if (!std::equal(magic.begin(), magic.end(), kMagic.begin())) {
        throw EpbMagicError("EPB: bad magic (expected \"EPB1\")");
    }
    const auto version = r.get<std::uint16_t>("version");
    if (version != kEpbVersion) {
        throw EpbVersionError("EPB: unsupported version " + std::to_string(version));
    }
    const auto n = r.get<std::uint32_t>("n_epochs");
    const auto spe = r.get<std::uint32_t>("samples_per_epoch");
    if (spe != kSamplesPerEpoch) {
        throw FormatError("EPB: samples_per_epoch must be 3000, got " + std::to_string(spe));
    }
    const auto rate = r.get<std::uint16_t>("sample_rate_hz");
    if (rate != kSampleRateHz) {
        throw FormatError("EPB: sample_rate_hz must be 100, got " + std::to_string(rate));
    }
    const auto label_bytes = r.take(n, "labels");
    std::vector<SleepStage> labels;
    labels.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        auto s = stage_from_code(label_bytes[i]);
        if (!s) {
            throw FormatError("EPB: invalid label code " + std::to_string(label_bytes[i]) + " at epoch "
                + std::to_string(i));
        }
        labels.push_back(*s);
    }
    const auto n_subjects = r.get<std::uint16_t>("subject count");
    std::vector<std::string> table;
    table.reserve(n_subjects);
    for (std::size_t i = 0; i < n_subjects; ++i) {
        const auto len = r.get<std::uint16_t>("subject id length");
        const auto raw = r.take(len, "subject id");
        table.emplace_back(raw.begin(), raw.end());
    }
    std::vector<std::uint16_t> subject_index(n);
    for (std::size_t i = 0; i < n; ++i) {
        subject_index[i] = r.get<std::uint16_t>("subject index");
        if (subject_index[i] >= table.size()) {
            throw FormatError("EPB: subject index " + std::to_string(subject_index[i])
                + " out of range at epoch " + std::to_string(i));
        }
    }
    const std::size_t n_samples = static_cast<std::size_t>(n) * kSamplesPerEpoch;
    if (r.remaining() < n_samples * sizeof(float)) {
        throw EpbTruncatedError("EPB truncated: payload holds " + std::to_string(r.remaining() / sizeof(float))
            + " samples, header announces " + std::to_string(n_samples));
    }
    if (r.remaining() > n_samples * sizeof(float)) {
        throw FormatError("EPB: " + std::to_string(r.remaining() - n_samples * sizeof(float))
            + " trailing bytes after sample payload");
    }

    EpochDataset ds;
    ds.reserve(n);
    std::vector<float> buffer(kSamplesPerEpoch);
    for (std::size_t e = 0; e < n; ++e) {
        for (std::size_t j = 0; j < kSamplesPerEpoch; ++j) {
            const float v = r.get<float>("sample");
            if (!std::isfinite(v)) {
                throw EpbNonFiniteError("EPB: non-finite sample at epoch " + std::to_string(e) + ", offset "
                    + std::to_string(j));
            }
            buffer[j] = v;
        }
        ds.append(buffer, labels[e], table[subject_index[e]]);
    }
    return ds;
}

void write_epb(const EpochDataset& ds, const std::filesystem::path& path)
{
    const auto bytes = encode_epb(ds);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw DataError("cannot open '" + path.string() + "' for writing");
    }
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw DataError("failed writing '" + path.string() + "'");
    }
}

EpochDataset read_epb(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError("cannot open '" + path.string() + "'");
    }
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    try {
        return decode_epb(bytes);
    } catch (const EpbMagicError& e) {
        throw EpbMagicError(path.string() + ": " + e.what());
    } catch (const EpbVersionError& e) {
        throw EpbVersionError(path.string() + ": " + e.what());
    } catch (const EpbTruncatedError& e) {
        throw EpbTruncatedError(path.string() + ": " + e.what());
    } catch (const EpbNonFiniteError& e) {
        throw EpbNonFiniteError(path.string() + ": " + e.what());
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

// ---------------------------------------------------------------------------

namespace {

std::string trim(std::string s)
{
    const auto ws = " \t\r\n";
    const auto b = s.find_first_not_of(ws);
    if (b == std::string::npos) {
        return {};
    }
    const auto e = s.find_last_not_of(ws);
    return s.substr(b, e - b + 1);
}

} // namespace

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) {
        throw DataError("cannot open manifest '" + path.string() + "'");
    }
    std::vector<ManifestEntry> entries;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        line = trim(line);
        if (line.empty()) {
            continue;
        }
        const auto comma = line.find(',');
        if (comma == std::string::npos) {
            throw FormatError(path.string() + ":" + std::to_string(line_no) + ": expected 'path,subject_id'");
        }
        auto file = trim(line.substr(0, comma));
        auto subject = trim(line.substr(comma + 1));
        if (line_no == 1 && file == "path" && subject == "subject_id") {
            continue;
        }
        if (file.empty()) {
            throw FormatError(path.string() + ":" + std::to_string(line_no) + ": empty path");
        }
        std::filesystem::path p(file);
        if (p.is_relative()) {
            p = path.parent_path() / p;
        }
        entries.push_back({p, subject});
    }
    return entries;
}

EpochDataset load_manifest(const std::filesystem::path& path)
{
    EpochDataset all;
    for (const auto& entry : read_manifest(path)) {
        auto part = read_epb(entry.path);
        if (entry.subject_id.empty()) {
            all.append_dataset(part);
        } else {
            for (std::size_t i = 0; i < part.size(); ++i) {
                all.append(part.epoch(i), part.label(i), entry.subject_id);
            }
        }
    }
    if (all.empty()) {
        throw EmptyDatasetError("manifest '" + path.string() + "' yields no epochs");
    }
    return all;
}

EpochDataset load_dataset(const std::filesystem::path& path)
{
    if (!std::filesystem::exists(path)) {
        throw DataError("data file '" + path.string() + "' does not exist");
    }
    if (path.extension() == ".csv") {
        return load_manifest(path);
    }
    return read_epb(path);
}

// ---------------------------------------------------------------------------

std::vector<FoldSplit> make_folds(const EpochDataset& ds, std::size_t k, std::uint64_t seed)
{
    if (k < 2) {
        throw ConfigError("make_folds: k must be >= 2, got " + std::to_string(k));
    }
    auto subjects = ds.subjects();
    if (subjects.size() < k) {
        throw DataError("make_folds: " + std::to_string(subjects.size()) + " subjects cannot fill "
            + std::to_string(k) + " folds");
    }
    Rng rng(seed);
    shuffle(subjects.begin(), subjects.end(), rng);

    std::vector<FoldSplit> folds(k);
    for (std::size_t f = 0; f < k; ++f) {
        folds[f].fold_index = f;
    }
    for (std::size_t i = 0; i < subjects.size(); ++i) {
        const auto owner = i % k;
        for (std::size_t f = 0; f < k; ++f) {
            (f == owner ? folds[f].test_subjects : folds[f].train_subjects).push_back(subjects[i]);
        }
    }
    for (auto& f : folds) {
        std::sort(f.train_subjects.begin(), f.train_subjects.end());
        std::sort(f.test_subjects.begin(), f.test_subjects.end());
    }
    return folds;
}

std::array<std::size_t, kNumStages> class_histogram(std::span<const SleepStage> labels)
{
    std::array<std::size_t, kNumStages> h{};
    for (auto l : labels) {
        ++h[stage_index(l)];
    }
    return h;
}

std::array<std::size_t, kNumStages> class_histogram(const EpochDataset& ds)
{
    return class_histogram(ds.labels());
}

} // namespace bimamsleep
