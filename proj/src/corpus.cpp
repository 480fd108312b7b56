#include "subbench/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <regex>
#include <set>
#include <sstream>

#include "subbench/container.hpp"
#include "subbench/error.hpp"
#include "subbench/png_io.hpp"
#include "subbench/rng.hpp"

namespace subbench {

namespace fs = std::filesystem;

std::string to_string(Modality m) { return m == Modality::Xray ? "xray" : "histology"; }
std::string to_string(Split s) { return s == Split::Train ? "train" : "test"; }
std::string to_string(SourceKind s) { return s == SourceKind::Real ? "real" : "synthetic"; }

Modality parse_modality(std::string_view s) {
    if (s == "xray") return Modality::Xray;
    if (s == "histology") return Modality::Histology;
    throw DataError("unknown modality '" + std::string(s) + "'");
}

Split parse_split(std::string_view s) {
    if (s == "train") return Split::Train;
    if (s == "test") return Split::Test;
    throw DataError("unknown split '" + std::string(s) + "'");
}

SourceKind parse_source_kind(std::string_view s) {
    if (s == "real") return SourceKind::Real;
    if (s == "synthetic") return SourceKind::Synthetic;
    throw DataError("unknown source kind '" + std::string(s) + "'");
}

void ImageRecord::validate() const {
    if (id.empty()) throw DataError("record with empty id");
    if (width <= 0 || height <= 0) throw DataError("record " + id + ": non-positive dimensions");
    if (channels != 1 && channels != 3) throw DataError("record " + id + ": channels must be 1 or 3");
    if (source_kind == SourceKind::Synthetic) {
        if (!provenance || provenance->model_id.empty() || provenance->checkpoint_id.empty()) {
            throw DataError("synthetic record " + id + " lacks provenance");
        }
    } else if (provenance) {
        throw DataError("real record " + id + " carries provenance");
    }
}

const std::string& ImageRecord::label(const std::string& key) const {
    auto it = labels.find(key);
    if (it == labels.end()) throw DataError("record " + id + " has no label '" + key + "'");
    return it->second;
}

nlohmann::json to_json(const ImageRecord& r) {
    nlohmann::json j;
    j["id"] = r.id;
    j["path"] = r.path;
    j["modality"] = to_string(r.modality);
    j["width"] = r.width;
    j["height"] = r.height;
    j["channels"] = r.channels;
    j["labels"] = r.labels;
    j["split"] = to_string(r.split);
    j["source"] = to_string(r.source_kind);
    if (r.provenance) {
        j["provenance"] = {{"model_id", r.provenance->model_id}, {"checkpoint_id", r.provenance->checkpoint_id}};
    } else {
        j["provenance"] = nullptr;
    }
    return j;
}

ImageRecord record_from_json(const nlohmann::json& j) {
    ImageRecord r;
    r.id = j.at("id").get<std::string>();
    r.path = j.at("path").get<std::string>();
    r.modality = parse_modality(j.at("modality").get<std::string>());
    r.width = j.at("width").get<int>();
    r.height = j.at("height").get<int>();
    r.channels = j.at("channels").get<int>();
    r.labels = j.at("labels").get<Labels>();
    r.split = parse_split(j.at("split").get<std::string>());
    r.source_kind = parse_source_kind(j.at("source").get<std::string>());
    if (j.contains("provenance") && !j.at("provenance").is_null()) {
        const auto& p = j.at("provenance");
        r.provenance = Provenance{p.at("model_id").get<std::string>(), p.at("checkpoint_id").get<std::string>()};
    }
    return r;
}

std::string AgeBin::label() const { return std::to_string(lo) + "-" + std::to_string(hi); }

void StudyGroup::validate() const {
    for (std::size_t i = 0; i < age_binning.size(); ++i) {
        const auto& b = age_binning[i];
        if (b.lo > b.hi) throw ConfigError("study group " + name + ": age bin " + b.label() + " is reversed");
        if (i > 0 && b.lo <= age_binning[i - 1].hi) {
            throw ConfigError("study group " + name + ": age bins " + age_binning[i - 1].label() + " and " + b.label() +
                              " overlap or are out of order");
        }
    }
    std::set<std::string> keys;
    for (const auto& e : schema) {
        if (!keys.insert(e.key).second) throw ConfigError("study group " + name + ": duplicate schema key " + e.key);
    }
}

std::string StudyGroup::age_group(int age) const {
    for (const auto& b : age_binning) {
        if (b.contains(age)) return b.label();
    }
    throw DataError("study group " + name + ": age " + std::to_string(age) + " falls outside every age bin");
}

void StudyGroup::check_record(const ImageRecord& r) const {
    for (const auto& [key, value] : r.labels) {
        auto it = std::find_if(schema.begin(), schema.end(), [&](const auto& e) { return e.key == key; });
        if (it == schema.end()) {
            throw DataError("record " + r.id + ": label key '" + key + "' not declared by study group " + name);
        }
        if (!it->allowed.empty() && std::find(it->allowed.begin(), it->allowed.end(), value) == it->allowed.end()) {
            throw DataError("record " + r.id + ": value '" + value + "' not allowed for '" + key + "'");
        }
    }
    for (const auto& e : schema) {
        if (!r.labels.count(e.key)) throw DataError("record " + r.id + " lacks label '" + e.key + "'");
    }
}

std::vector<AgeBin> StudyGroup::regular_bins(int lo, int hi, int width) {
    if (width <= 0 || hi < lo) throw ConfigError("invalid regular age binning");
    std::vector<AgeBin> bins;
    for (int a = lo; a <= hi; a += width) bins.push_back({a, std::min(hi, a + width - 1)});
    return bins;
}

Manifest::Manifest(std::vector<ImageRecord> records) : records_(std::move(records)) {
    std::string body;
    for (std::size_t i = 0; i < records_.size(); ++i) {
        const auto& r = records_[i];
        r.validate();
        if (!index_.emplace(r.id, i).second) throw DataError("duplicate record id " + r.id);
        body += to_json(r).dump();
        body += '\n';
    }
    checksum_ = sha256_hex(body);
}

const ImageRecord& Manifest::at(std::string_view id) const {
    auto it = index_.find(id);
    if (it == index_.end()) throw DataError("manifest has no record '" + std::string(id) + "'");
    return records_[it->second];
}

bool Manifest::contains(std::string_view id) const { return index_.find(id) != index_.end(); }

Manifest Manifest::subset(const std::vector<std::string>& ids) const {
    std::vector<std::size_t> positions;
    positions.reserve(ids.size());
    for (const auto& id : ids) {
        auto it = index_.find(id);
        if (it == index_.end()) throw DataError("manifest has no record '" + id + "'");
        positions.push_back(it->second);
    }
    std::sort(positions.begin(), positions.end());
    positions.erase(std::unique(positions.begin(), positions.end()), positions.end());
    std::vector<ImageRecord> out;
    out.reserve(positions.size());
    for (auto p : positions) out.push_back(records_[p]);
    return Manifest(std::move(out));
}

std::vector<std::string> Manifest::ids() const {
    std::vector<std::string> out;
    out.reserve(records_.size());
    for (const auto& r : records_) out.push_back(r.id);
    return out;
}

std::string Manifest::serialize() const {
    nlohmann::json header = {
        {"format", "subbench-manifest"}, {"version", kFormatVersion}, {"count", records_.size()}, {"checksum", checksum_}};
    std::string out = header.dump();
    out += '\n';
    for (const auto& r : records_) {
        out += to_json(r).dump();
        out += '\n';
    }
    return out;
}

Manifest Manifest::parse(std::string_view text) {
    std::istringstream in{std::string(text)};
    std::string line;
    if (!std::getline(in, line)) throw DataError("manifest is empty");
    const auto header = nlohmann::json::parse(line);
    if (header.value("format", "") != "subbench-manifest") throw DataError("not a subbench manifest");
    if (header.at("version").get<int>() != kFormatVersion) throw DataError("unsupported manifest version");

    std::vector<ImageRecord> records;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        records.push_back(record_from_json(nlohmann::json::parse(line)));
    }
    if (records.size() != header.at("count").get<std::size_t>()) throw DataError("manifest record count mismatch");
    Manifest m(std::move(records));
    if (m.checksum() != header.at("checksum").get<std::string>()) throw DataError("manifest checksum mismatch");
    return m;
}

void Manifest::save(const fs::path& path) const { write_file(path, serialize()); }

Manifest Manifest::load(const fs::path& path) { return parse(read_file(path)); }

LabelRule LabelRule::parse(std::string_view text) {
    const auto eq = text.find('=');
    if (eq == std::string_view::npos || eq == 0) throw ConfigError("label rule must be key=source: " + std::string(text));
    LabelRule rule;
    rule.key = std::string(text.substr(0, eq));
    const auto src = text.substr(eq + 1);
    if (src == "parent") {
        rule.source = Source::ParentDir;
    } else if (src.starts_with("parent:")) {
        rule.source = Source::ParentDir;
        rule.depth = std::stoi(std::string(src.substr(7)));
        if (rule.depth < 1) throw ConfigError("parent depth must be >= 1");
    } else if (src.starts_with("regex:")) {
        rule.source = Source::Regex;
        rule.pattern = std::string(src.substr(6));
    } else {
        throw ConfigError("unknown label source '" + std::string(src) + "'");
    }
    return rule;
}

namespace {

bool has_image_extension(const fs::path& p) {
    auto ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    return ext == ".png" || ext == ".tif" || ext == ".tiff";
}

std::string apply_rule(const LabelRule& rule, const fs::path& rel) {
    if (rule.source == LabelRule::Source::ParentDir) {
        fs::path p = rel.parent_path();
        for (int i = 1; i < rule.depth && !p.empty(); ++i) p = p.parent_path();
        if (p.empty()) throw DataError("no parent directory at depth " + std::to_string(rule.depth));
        return p.filename().string();
    }
    std::smatch m;
    const std::string s = rel.generic_string();
    if (!std::regex_search(s, m, std::regex(rule.pattern)) || m.size() < 2) {
        throw DataError("pattern '" + rule.pattern + "' does not match");
    }
    return m[1].str();
}

}  // namespace

IngestResult ingest_directory(const fs::path& root, Modality modality, const std::vector<LabelRule>& rules) {
    if (!fs::is_directory(root)) throw DataError("ingest root is not a directory: " + root.string());

    std::vector<fs::path> files;
    for (const auto& entry : fs::recursive_directory_iterator(root)) {
        if (entry.is_regular_file() && has_image_extension(entry.path())) files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());

    IngestResult result;
    std::vector<ImageRecord> records;
    std::set<std::string> seen;
    for (const auto& file : files) {
        const fs::path rel = fs::relative(file, root);
        ImageRecord r;
        r.id = (rel.parent_path() / rel.stem()).generic_string();
        if (!seen.insert(r.id).second) throw DataError("duplicate record id " + r.id + " (" + file.string() + ")");
        r.path = file.lexically_normal().generic_string();
        r.modality = modality;

        auto ext = file.extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
        if (ext != ".png") {
            result.rejects.push_back({r.path, "unsupported format " + ext});
            continue;
        }
        try {
            const auto decoded = read_png(file);
            r.width = decoded.grid.width();
            r.height = decoded.grid.height();
            r.channels = decoded.grid.channels();
            for (const auto& rule : rules) {
                const auto value = apply_rule(rule, rel);
                if (rule.key == "split") {
                    r.split = parse_split(value);
                } else {
                    r.labels[rule.key] = value;
                }
            }
        } catch (const Error& e) {
            result.rejects.push_back({r.path, e.what()});
            continue;
        }
        records.push_back(std::move(r));
    }
    result.manifest = Manifest(std::move(records));
    return result;
}

namespace {

std::string combo_key(const ImageRecord& r, const std::vector<std::string>& keys) {
    std::string k;
    for (std::size_t i = 0; i < keys.size(); ++i) {
        if (i) k += ',';
        k += keys[i] + "=" + r.label(keys[i]);
    }
    return k;
}

// Positions in manifest order grouped by label combination (combinations sorted).
std::map<std::string, std::vector<std::size_t>> group_by(const Manifest& m, const std::vector<std::string>& keys) {
    std::map<std::string, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < m.size(); ++i) groups[combo_key(m.records()[i], keys)].push_back(i);
    return groups;
}

std::vector<std::string> ids_in_order(const Manifest& m, std::vector<std::size_t> positions) {
    std::sort(positions.begin(), positions.end());
    std::vector<std::string> out;
    out.reserve(positions.size());
    for (auto p : positions) out.push_back(m.records()[p].id);
    return out;
}

}  // namespace

std::vector<std::string> balanced_sample(const Manifest& manifest, const std::vector<std::string>& keys,
                                         std::size_t total, std::uint64_t seed) {
    const auto groups = group_by(manifest, keys);
    if (groups.empty()) {
        if (total == 0) return {};
        throw DataError("balanced_sample: manifest is empty");
    }
    if (total % groups.size() != 0) {
        throw DataError("balanced_sample: total " + std::to_string(total) + " is not divisible by " +
                        std::to_string(groups.size()) + " label combinations");
    }
    const std::size_t per = total / groups.size();

    std::string deficits;
    for (const auto& [combo, members] : groups) {
        if (members.size() < per) {
            if (!deficits.empty()) deficits += "; ";
            deficits += combo + " (need " + std::to_string(per) + ", have " + std::to_string(members.size()) +
                        ", deficit " + std::to_string(per - members.size()) + ")";
        }
    }
    if (!deficits.empty()) throw DataError("balanced_sample: insufficient members: " + deficits);

    Rng rng(Rng::derive(seed, "balanced_sample"));
    std::vector<std::size_t> chosen;
    chosen.reserve(total);
    for (const auto& [combo, members] : groups) {
        auto pool = members;
        rng.shuffle(pool);
        chosen.insert(chosen.end(), pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(per));
    }
    return ids_in_order(manifest, std::move(chosen));
}

TrainTestSplit split_train_test(const Manifest& manifest, double test_fraction,
                                const std::vector<std::string>& stratify_keys, std::uint64_t seed) {
    if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw DataError("test_fraction must lie in (0, 1)");
    const auto groups = group_by(manifest, stratify_keys);

    Rng rng(Rng::derive(seed, "split_train_test"));
    std::vector<std::size_t> train;
    std::vector<std::size_t> test;
    for (const auto& [combo, members] : groups) {
        if (members.size() < 2) {
            throw DataError("split_train_test: stratum " + (combo.empty() ? std::string("<all>") : combo) +
                            " has fewer than 2 records");
        }
        auto pool = members;
        rng.shuffle(pool);
        const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(pool.size())));
        test.insert(test.end(), pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(n_test));
        train.insert(train.end(), pool.begin() + static_cast<std::ptrdiff_t>(n_test), pool.end());
    }
    return {ids_in_order(manifest, std::move(train)), ids_in_order(manifest, std::move(test))};
}

}  // namespace subbench
