#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "subbench/classify.hpp"
#include "subbench/corpus.hpp"
#include "subbench/image.hpp"

namespace subbench {

// Fraction of positions where prediction equals truth.
double accuracy(const std::vector<int>& predictions, const std::vector<int>& truth);

// v rounded to `decimals` places, ties to even. A value within 1e-9 (in units
// of the last place) of a tie counts as a tie, so 3.1250000000000027 rounds
// like 3.125.
double round_half_even(double v, int decimals);

// 100 * (acc_real - acc_synth) / acc_real rounded half-even to 2 decimals.
double relative_drop(double acc_real, double acc_synth);

struct BenchmarkTask {
    std::string name;
    Modality modality = Modality::Xray;
    std::string target_key;                  // label key holding the class
    std::vector<std::string> classes;        // exactly two, disjoint
    int train_size = 800;
    int test_size = 200;
    std::vector<std::string> balance_keys;   // defaults to {target_key}

    void validate() const;
};

struct BenchmarkResult {
    std::string task;
    std::string classifier;
    double acc_real = 0.0;
    double acc_synth = 0.0;
    double relative_drop = 0.0;
    std::string params_real;   // CV-selected hyperparameters per arm
    std::string params_synth;
};

struct Report {
    std::vector<BenchmarkResult> rows;
    std::map<std::string, std::string> metadata;  // seeds, config and dataset digests
};

enum class ReportFormat { Markdown, Csv };
ReportFormat parse_report_format(std::string_view s);

// Columns task, model, acc_real, acc_synth, drop; rows grouped by task in
// first-appearance order; metadata footer.
std::string render_report(const Report& report, ReportFormat format);
Report parse_report_csv(std::string_view text);

nlohmann::json to_json(const Report& r);
Report report_from_json(const nlohmann::json& j);

// Generator id -> ids of the real records it was trained on.
using GanRegistry = std::map<std::string, std::set<std::string>>;

using ImageLoader = std::function<PixelGrid(const ImageRecord&)>;
PixelGrid load_record_image(const ImageRecord& r);

struct TstrOptions {
    int folds = 5;
    std::vector<int> lbp_radii{2, 3, 4};
    ImageLoader loader = load_record_image;
    std::optional<std::filesystem::path> artifact_dir;  // models and predictions
    std::function<void(const std::string&)> log;
};

// Train each spec on both arms with identical seeds and features, score both
// on the real test set. Feature classifiers see combined LBP descriptors, cnn
// sees raw pixels.
std::vector<BenchmarkResult> run_tstr(const BenchmarkTask& task, const Manifest& real_train,
                                      const Manifest& synth_train, const Manifest& real_test,
                                      const std::vector<ClassifierSpec>& specs, const GanRegistry& registry,
                                      std::uint64_t seed, const TstrOptions& options = {});

// Throws LeakageError when a synthetic record comes from an unknown generator or
// from one whose training ids intersect the test ids.
void check_leakage(const Manifest& synth_train, const Manifest& real_test, const GanRegistry& registry);

}  // namespace subbench
