#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

namespace subbench {

enum class Modality { Xray, Histology };
enum class Split { Train, Test };
enum class SourceKind { Real, Synthetic };

std::string to_string(Modality m);
std::string to_string(Split s);
std::string to_string(SourceKind s);
Modality parse_modality(std::string_view s);
Split parse_split(std::string_view s);
SourceKind parse_source_kind(std::string_view s);

using Labels = std::map<std::string, std::string>;

struct Provenance {
    std::string model_id;
    std::string checkpoint_id;

    bool operator==(const Provenance&) const = default;
};

struct ImageRecord {
    std::string id;
    std::string path;
    Modality modality = Modality::Xray;
    int width = 0;
    int height = 0;
    int channels = 1;
    Labels labels;
    Split split = Split::Train;
    SourceKind source_kind = SourceKind::Real;
    std::optional<Provenance> provenance;

    // Throws DataError if the provenance rule or basic shape constraints fail.
    void validate() const;
    const std::string& label(const std::string& key) const;

    bool operator==(const ImageRecord&) const = default;
};

nlohmann::json to_json(const ImageRecord& r);
ImageRecord record_from_json(const nlohmann::json& j);

// Inclusive age range, e.g. 18-19.
struct AgeBin {
    int lo = 0;
    int hi = 0;

    std::string label() const;
    bool contains(int age) const { return age >= lo && age <= hi; }
    bool operator==(const AgeBin&) const = default;
};

struct LabelSchemaEntry {
    std::string key;
    std::vector<std::string> allowed;
};

// A labelled study cohort. Group and bin counts are configuration.
struct StudyGroup {
    std::string name;
    std::vector<LabelSchemaEntry> schema;
    std::vector<AgeBin> age_binning;
    std::vector<std::string> member_ids;
    std::size_t train_size = 0;
    std::size_t test_size = 0;

    // Bins disjoint and ordered, schema keys unique.
    void validate() const;
    // Label of the bin containing `age`; an age outside every bin is an error.
    std::string age_group(int age) const;
    // Every label key declared by the schema, every value allowed.
    void check_record(const ImageRecord& r) const;

    // Regular bins [lo, lo+width-1], [lo+width, ...] up to and including `hi`.
    static std::vector<AgeBin> regular_bins(int lo, int hi, int width);
};

// Immutable, checksummed catalog of image records.
//
// On disk: a header line {"checksum","count","format","version"} followed by
// one canonical JSON object per record. The checksum is the SHA-256 of the
// record lines, each terminated by '\n'.
class Manifest {
public:
    static constexpr int kFormatVersion = 1;

    Manifest() = default;
    explicit Manifest(std::vector<ImageRecord> records);

    const std::vector<ImageRecord>& records() const { return records_; }
    std::size_t size() const { return records_.size(); }
    bool empty() const { return records_.empty(); }
    const std::string& checksum() const { return checksum_; }
    int version() const { return kFormatVersion; }

    const ImageRecord& at(std::string_view id) const;
    bool contains(std::string_view id) const;

    // Records with the given ids, in manifest order.
    Manifest subset(const std::vector<std::string>& ids) const;
    std::vector<std::string> ids() const;

    std::string serialize() const;
    static Manifest parse(std::string_view text);
    void save(const std::filesystem::path& path) const;
    static Manifest load(const std::filesystem::path& path);

    bool operator==(const Manifest& other) const { return checksum_ == other.checksum_ && records_ == other.records_; }

private:
    std::vector<ImageRecord> records_;
    std::map<std::string, std::size_t, std::less<>> index_;
    std::string checksum_;
};

// How a label is derived from an image's path relative to the ingest root.
struct LabelRule {
    enum class Source { ParentDir, Regex };

    std::string key;
    Source source = Source::ParentDir;
    // ParentDir: 1 = immediate parent directory, 2 = its parent, ...
    int depth = 1;
    // Regex: matched against the relative path; the first capture group is the value.
    std::string pattern;

    // "key=parent", "key=parent:2" or "key=regex:<pattern>".
    static LabelRule parse(std::string_view text);
};

struct IngestReject {
    std::string path;
    std::string reason;
};

struct IngestResult {
    Manifest manifest;
    std::vector<IngestReject> rejects;
};

// One record per decodable image below `root`, ordered by path. A rule whose
// key is "split" sets the record split instead of a label. Ids are the
// relative path without extension; a duplicate id is a hard failure.
IngestResult ingest_directory(const std::filesystem::path& root, Modality modality,
                              const std::vector<LabelRule>& rules);

// Equal number of records per occupied combination of `keys`, chosen by seed.
// Result is in manifest order.
std::vector<std::string> balanced_sample(const Manifest& manifest, const std::vector<std::string>& keys,
                                         std::size_t total, std::uint64_t seed);

struct TrainTestSplit {
    std::vector<std::string> train;
    std::vector<std::string> test;
};

// Per-stratum test share round(test_fraction * n). Both lists in manifest order.
TrainTestSplit split_train_test(const Manifest& manifest, double test_fraction,
                                const std::vector<std::string>& stratify_keys, std::uint64_t seed);

}  // namespace subbench
