#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "subbench/bench.hpp"
#include "subbench/classify.hpp"
#include "subbench/corpus.hpp"
#include "subbench/gan.hpp"

namespace subbench {

struct DatasetConfig {
    std::string source = "toy";  // toy | directory
    std::filesystem::path root;  // directory source
    Modality modality = Modality::Histology;
    std::vector<std::string> label_rules{"class=parent", "split=parent:2"};
    std::string preprocess = "resize";  // resize | xray | tiles
    int image_size = 32;
    int tile_size = 256;
    std::string split = "directory";  // directory | random
    double test_fraction = 0.2;
    int toy_train_per_class = 400;
    int toy_test_per_class = 100;
};

struct TriageConfig {
    int hash_size = 16;
    int tau = 64;
    // When set, tau is the nearest-rank `auto_quantile` of the distances from
    // held-out real training images to the reference set.
    bool auto_tau = false;
    double auto_quantile = 95.0;
    int references = 256;
    double surplus = 1.5;  // generated / needed
    int max_rounds = 4;    // extra generation rounds when triage leaves a deficit
};

struct ExperimentConfig {
    std::string name = "experiment";
    std::string preset = "desk";
    std::uint64_t seed = 7;
    DatasetConfig dataset;
    GanConfig gan;
    bool per_label = true;              // one unconditional generator per label combination
    std::string checkpoint = "last";    // "last" or an epoch index of the final stage
    TriageConfig triage;
    int montage_rows = 4;
    int montage_cols = 4;
    std::vector<BenchmarkTask> tasks;
    std::vector<ClassifierSpec> classifiers;
    int folds = 5;
    std::vector<std::string> control;  // classifier kinds rerun with the real arm on both sides

    nlohmann::json to_json() const;
    std::string digest() const;
};

ExperimentConfig preset_config(std::string_view preset);
ExperimentConfig experiment_config_from_json(const nlohmann::json& j);
// Nested key-value (YAML) file overlaid on the preset named in the file
// (`experiment.preset`) or `preset_override` when given.
ExperimentConfig load_experiment_config(const std::filesystem::path& path, std::string_view preset_override = {});
nlohmann::json yaml_text_to_json(const std::string& text);

// Warnings make a run unclean without stopping it.
class Diagnostics {
public:
    std::function<void(const std::string&)> sink;
    void info(const std::string& msg) const;
    void warn(const std::string& msg);
    const std::vector<std::string>& warnings() const { return warnings_; }
    bool clean() const { return warnings_.empty(); }

private:
    std::vector<std::string> warnings_;
};

struct TaskSelection {
    std::vector<std::string> train;
    std::vector<std::string> test;
};

// Balanced train/test selection for a task from the preprocessed manifest.
TaskSelection select_task_data(const ExperimentConfig& cfg, const Manifest& manifest, const BenchmarkTask& task);

Manifest stage_ingest(const ExperimentConfig& cfg, const std::filesystem::path& out, Diagnostics& diag);
Manifest stage_preprocess(const ExperimentConfig& cfg, const std::filesystem::path& out, Diagnostics& diag);
void stage_train_gan(const ExperimentConfig& cfg, const std::filesystem::path& out, Diagnostics& diag);
std::vector<std::filesystem::path> stage_montage(const ExperimentConfig& cfg, const std::filesystem::path& out,
                                                 Diagnostics& diag);
Manifest stage_generate(const ExperimentConfig& cfg, const std::filesystem::path& out, Diagnostics& diag);
Manifest stage_triage(const ExperimentConfig& cfg, const std::filesystem::path& out, Diagnostics& diag);
void stage_features(const ExperimentConfig& cfg, const std::filesystem::path& out, Diagnostics& diag);
Report stage_benchmark(const ExperimentConfig& cfg, const std::filesystem::path& out, Diagnostics& diag);
std::vector<std::filesystem::path> stage_report(const ExperimentConfig& cfg, const std::filesystem::path& out,
                                                Diagnostics& diag);

// Every stage in order.
Report run_pipeline(const ExperimentConfig& cfg, const std::filesystem::path& out, Diagnostics& diag);

}  // namespace subbench
