#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "subbench/container.hpp"
#include "subbench/features.hpp"

namespace subbench {

enum class ClassifierKind { Knn, Svm, RandomForest, Cnn };

std::string to_string(ClassifierKind k);
ClassifierKind parse_classifier_kind(std::string_view s);

using ParamValue = std::variant<double, std::string>;
using Params = std::map<std::string, ParamValue>;
using Matrix = std::vector<FeatureVector>;

double param_number(const Params& p, const std::string& name, double fallback);
std::string param_text(const Params& p, const std::string& name, const std::string& fallback);
std::string to_string(const Params& p);
nlohmann::json to_json(const Params& p);
Params params_from_json(const nlohmann::json& j);

// Recognised parameters:
//   knn:            k
//   svm:            C, kernel (linear | rbf), gamma_scale (rbf width = gamma_scale / (d * var(X)))
//   random_forest:  trees, depth (0 = unlimited), max_features (0 = sqrt(d)), bootstrap (0 | 1)
//   cnn:            learning_rate, epochs, batch_size, channels, height, width
//                   (features are images flattened as C x H x W)
struct ClassifierSpec {
    ClassifierKind kind = ClassifierKind::Knn;
    std::map<std::string, std::vector<ParamValue>> grid;
    Params fixed;              // merged into every candidate
    bool standardize = false;  // z-score features with training statistics

    void validate() const;
    // Cartesian product in ascending parameter-name order, last name varying fastest.
    std::vector<Params> candidates() const;
};

nlohmann::json to_json(const ClassifierSpec& s);
ClassifierSpec classifier_spec_from_json(const nlohmann::json& j);

class Classifier {
public:
    virtual ~Classifier() = default;
    virtual void fit(const Matrix& X, const std::vector<int>& y) = 0;
    // Per-row class probabilities or vote shares over classes().
    virtual std::vector<std::vector<double>> predict_scores(const Matrix& X) const = 0;
    virtual Container save() const = 0;
    const std::vector<int>& classes() const { return classes_; }

protected:
    std::vector<int> classes_;  // sorted distinct training labels
};

std::unique_ptr<Classifier> make_classifier(ClassifierKind kind, const Params& params, std::uint64_t seed);

struct Prediction {
    std::vector<int> labels;
    std::vector<double> scores;  // score of the predicted label
};

struct TrainedModel {
    ClassifierKind kind = ClassifierKind::Knn;
    Params params;
    std::uint64_t seed = 0;
    bool standardize = false;
    std::vector<double> mean, scale;  // standardisation statistics
    std::vector<double> fold_scores;
    std::shared_ptr<Classifier> model;

    Prediction predict(const Matrix& X) const;
    void save(const std::filesystem::path& path) const;
    static TrainedModel load(const std::filesystem::path& path);
};

TrainedModel fit(const ClassifierSpec& spec, const Params& params, const Matrix& X, const std::vector<int>& y,
                 std::uint64_t seed);
Prediction fit_predict(const ClassifierSpec& spec, const Params& params, const Matrix& X_train,
                       const std::vector<int>& y_train, const Matrix& X_test, std::uint64_t seed);

// k disjoint folds covering 0..n-1 whose sizes differ by at most one. With
// labels, each class is dealt round-robin so per-fold class counts differ by
// at most one.
std::vector<std::vector<std::size_t>> kfold_partition(std::size_t n, int k, std::uint64_t seed,
                                                      const std::vector<int>* labels = nullptr);

struct CvResult {
    std::vector<Params> candidates;
    std::vector<double> mean_accuracy;
    std::vector<std::vector<double>> fold_accuracy;
    std::size_t selected = 0;  // first candidate with the highest mean
    const Params& best() const { return candidates.at(selected); }
};

CvResult cross_validate(const ClassifierSpec& spec, const Matrix& X, const std::vector<int>& y, int k,
                        std::uint64_t seed);

// One line per row: id,label,score
void write_predictions_csv(const std::filesystem::path& path, const std::vector<std::string>& ids,
                           const Prediction& p);

}  // namespace subbench
