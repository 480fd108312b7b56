#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "subbench/container.hpp"
#include "subbench/nn.hpp"

namespace subbench {

// VGG-style family: per block, `block_convs[i]` 3x3 conv + ReLU layers of width
// `block_widths[i]` followed by 2x2 max pooling; then one hidden fully
// connected layer and a linear class head.
struct CnnConfig {
    std::vector<int> block_convs{1, 1, 1};
    std::vector<int> block_widths{8, 16, 32};
    int fc_width = 64;
    int epochs = 20;
    int batch_size = 32;
    double learning_rate = 1e-3;
    double val_fraction = 0.1;

    void validate() const;
    static CnnConfig desk();
    // Thirteen conv layers in five blocks (64..512), two 4096-wide FC layers collapsed to one.
    static CnnConfig vgg16();
};

class CnnModel {
public:
    CnnModel(const CnnConfig& cfg, int channels, int height, int width, int classes, Rng& rng);

    nn::Tensor forward(const nn::Tensor& x);  // logits (N, classes)
    nn::Tensor backward(const nn::Tensor& grad_logits);
    std::vector<nn::Parameter*> parameters();

    // Softmax class probabilities, evaluated in batches.
    nn::Tensor predict_proba(const nn::Tensor& x);
    double mean_loss(const nn::Tensor& x, const std::vector<int>& y);

    int channels() const { return c_; }
    int height() const { return h_; }
    int width() const { return w_; }
    int classes() const { return k_; }
    const CnnConfig& config() const { return cfg_; }

    Container save() const;
    static std::unique_ptr<CnnModel> load(const Container& c);

private:
    CnnConfig cfg_;
    int c_, h_, w_, k_;
    nn::Sequential net_;
};

struct CnnTraining {
    std::unique_ptr<CnnModel> model;  // weights from the best validation epoch
    int best_epoch = 0;
    std::vector<double> train_loss;
    std::vector<double> val_loss;
};

// Images as (N, C, H, W); labels in [0, classes). Raises DivergenceError on a
// non-finite loss.
CnnTraining train_cnn(const nn::Tensor& train_x, const std::vector<int>& train_y, const nn::Tensor& val_x,
                      const std::vector<int>& val_y, const CnnConfig& cfg, int classes, std::uint64_t seed);

nlohmann::json to_json(const CnnConfig& c);
CnnConfig cnn_config_from_json(const nlohmann::json& j);

}  // namespace subbench
