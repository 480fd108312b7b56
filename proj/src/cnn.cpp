#include "subbench/cnn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "subbench/error.hpp"

namespace subbench {

using nn::Tensor;

void CnnConfig::validate() const {
    if (block_convs.empty() || block_convs.size() != block_widths.size()) {
        throw ConfigError("cnn: block_convs and block_widths must be non-empty and of equal length");
    }
    for (std::size_t i = 0; i < block_convs.size(); ++i) {
        if (block_convs[i] <= 0 || block_widths[i] <= 0) throw ConfigError("cnn: block sizes must be positive");
    }
    if (fc_width <= 0 || epochs <= 0 || batch_size <= 0) throw ConfigError("cnn: fc_width, epochs, batch_size must be positive");
    if (learning_rate <= 0.0) throw ConfigError("cnn: learning rate must be positive");
    if (val_fraction <= 0.0 || val_fraction >= 1.0) throw ConfigError("cnn: val_fraction must lie in (0, 1)");
}

CnnConfig CnnConfig::desk() { return {}; }

CnnConfig CnnConfig::vgg16() {
    CnnConfig c;
    c.block_convs = {2, 2, 3, 3, 3};
    c.block_widths = {64, 128, 256, 512, 512};
    c.fc_width = 4096;
    c.learning_rate = 1e-4;
    return c;
}

nlohmann::json to_json(const CnnConfig& c) {
    return {{"block_convs", c.block_convs}, {"block_widths", c.block_widths}, {"fc_width", c.fc_width},
            {"epochs", c.epochs},           {"batch_size", c.batch_size},     {"learning_rate", c.learning_rate},
            {"val_fraction", c.val_fraction}};
}

CnnConfig cnn_config_from_json(const nlohmann::json& j) {
    CnnConfig c;
    c.block_convs = j.value("block_convs", c.block_convs);
    c.block_widths = j.value("block_widths", c.block_widths);
    c.fc_width = j.value("fc_width", c.fc_width);
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.val_fraction = j.value("val_fraction", c.val_fraction);
    return c;
}

CnnModel::CnnModel(const CnnConfig& cfg, int channels, int height, int width, int classes, Rng& rng)
    : cfg_(cfg), c_(channels), h_(height), w_(width), k_(classes) {
    cfg.validate();
    if (classes < 2) throw ConfigError("cnn needs at least two classes");
    int ch = channels, h = height, w = width;
    for (std::size_t b = 0; b < cfg.block_convs.size(); ++b) {
        for (int i = 0; i < cfg.block_convs[b]; ++i) {
            net_.emplace<nn::Conv2d>(ch, cfg.block_widths[b], 3, 1, 1, rng);
            net_.emplace<nn::ReLU>();
            ch = cfg.block_widths[b];
        }
        if (h < 2 || w < 2) throw ConfigError("cnn: input too small for the number of pooling blocks");
        net_.emplace<nn::MaxPool2d>();
        h /= 2;
        w /= 2;
    }
    net_.emplace<nn::Linear>(ch * h * w, cfg.fc_width, rng);
    net_.emplace<nn::ReLU>();
    net_.emplace<nn::Linear>(cfg.fc_width, classes, rng, 0.5);
}

Tensor CnnModel::forward(const Tensor& x) {
    if (x.shape.size() != 4 || x.dim(1) != c_ || x.dim(2) != h_ || x.dim(3) != w_) {
        throw DataError("cnn: expected input (N, " + std::to_string(c_) + ", " + std::to_string(h_) + ", " +
                        std::to_string(w_) + "), got " + x.shape_string());
    }
    return net_.forward(x);
}

Tensor CnnModel::backward(const Tensor& g) { return net_.backward(g); }

std::vector<nn::Parameter*> CnnModel::parameters() { return nn::parameters_of(net_); }

namespace {

Tensor slice(const Tensor& x, std::size_t begin, std::size_t end) {
    std::vector<int> shape = x.shape;
    shape[0] = static_cast<int>(end - begin);
    const std::size_t f = x.stride0();
    return Tensor(shape, std::vector<double>(x.data.begin() + begin * f, x.data.begin() + end * f));
}

Tensor gather(const Tensor& x, const std::vector<std::size_t>& idx) {
    std::vector<int> shape = x.shape;
    shape[0] = static_cast<int>(idx.size());
    Tensor out(shape);
    const std::size_t f = x.stride0();
    for (std::size_t i = 0; i < idx.size(); ++i) std::copy_n(x.data.begin() + idx[i] * f, f, out.data.begin() + i * f);
    return out;
}

constexpr std::size_t kEvalBatch = 64;

}  // namespace

Tensor CnnModel::predict_proba(const Tensor& x) {
    const std::size_t n = x.batch();
    Tensor out({static_cast<int>(n), k_});
    for (std::size_t b = 0; b < n; b += kEvalBatch) {
        const std::size_t e = std::min(n, b + kEvalBatch);
        const Tensor p = nn::softmax(forward(slice(x, b, e)));
        std::copy(p.data.begin(), p.data.end(), out.data.begin() + b * k_);
    }
    return out;
}

double CnnModel::mean_loss(const Tensor& x, const std::vector<int>& y) {
    const std::size_t n = x.batch();
    double total = 0.0;
    for (std::size_t b = 0; b < n; b += kEvalBatch) {
        const std::size_t e = std::min(n, b + kEvalBatch);
        const Tensor logits = forward(slice(x, b, e));
        const std::vector<int> yy(y.begin() + b, y.begin() + e);
        total += nn::softmax_cross_entropy(logits, yy).loss * static_cast<double>(e - b);
    }
    return total / static_cast<double>(n);
}

Container CnnModel::save() const {
    Container c;
    c.kind = "cnn";
    c.meta["config"] = to_json(cfg_);
    c.meta["input"] = {c_, h_, w_};
    c.meta["classes"] = k_;
    auto& self = const_cast<CnnModel&>(*this);
    nn::export_parameters("cnn", nn::parameters_of(self.net_), c.arrays);
    return c;
}

std::unique_ptr<CnnModel> CnnModel::load(const Container& c) {
    if (c.kind != "cnn") throw DataError("container is not a cnn model");
    const auto in = c.meta.at("input").get<std::vector<int>>();
    Rng rng(0);
    auto m = std::make_unique<CnnModel>(cnn_config_from_json(c.meta.at("config")), in.at(0), in.at(1), in.at(2),
                                        c.meta.at("classes").get<int>(), rng);
    nn::import_parameters("cnn", m->parameters(), c);
    return m;
}

CnnTraining train_cnn(const Tensor& train_x, const std::vector<int>& train_y, const Tensor& val_x,
                      const std::vector<int>& val_y, const CnnConfig& cfg, int classes, std::uint64_t seed) {
    cfg.validate();
    if (train_x.shape.size() != 4) throw DataError("train_cnn expects (N, C, H, W) images");
    if (train_x.batch() == 0 || static_cast<std::size_t>(train_x.batch()) != train_y.size()) {
        throw DataError("train_cnn: empty training set or label count mismatch");
    }
    if (val_x.batch() == 0 || static_cast<std::size_t>(val_x.batch()) != val_y.size()) {
        throw DataError("train_cnn: validation split must be non-empty and labelled");
    }
    Rng init(Rng::derive(seed, "cnn-init"));
    Rng rng(Rng::derive(seed, "cnn-shuffle"));
    CnnTraining out;
    out.model = std::make_unique<CnnModel>(cfg, train_x.dim(1), train_x.dim(2), train_x.dim(3), classes, init);
    auto params = out.model->parameters();
    nn::Adam opt(params, {cfg.learning_rate, 0.9, 0.999, 1e-8});

    std::vector<Tensor> best;
    double best_val = 0.0;
    const std::size_t n = train_x.batch();
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), 0);
        rng.shuffle(order);
        double total = 0.0;
        for (std::size_t b = 0; b < n; b += cfg.batch_size) {
            const std::size_t e = std::min(n, b + static_cast<std::size_t>(cfg.batch_size));
            const std::vector<std::size_t> idx(order.begin() + b, order.begin() + e);
            std::vector<int> y;
            for (auto i : idx) y.push_back(train_y[i]);
            opt.zero_grad();
            const auto lg = nn::softmax_cross_entropy(out.model->forward(gather(train_x, idx)), y);
            if (!std::isfinite(lg.loss)) {
                throw DivergenceError("cnn training diverged at epoch " + std::to_string(epoch) + ", batch starting at " +
                                      std::to_string(b) + " (loss " + std::to_string(lg.loss) + ")");
            }
            out.model->backward(lg.grad);
            opt.step();
            total += lg.loss * static_cast<double>(e - b);
        }
        out.train_loss.push_back(total / static_cast<double>(n));
        const double val = out.model->mean_loss(val_x, val_y);
        if (!std::isfinite(val)) throw DivergenceError("cnn validation loss is not finite at epoch " + std::to_string(epoch));
        out.val_loss.push_back(val);
        if (epoch == 0 || val < best_val) {
            best_val = val;
            out.best_epoch = epoch;
            best.clear();
            for (auto* p : params) best.push_back(p->value);
        }
    }
    for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = best[i];
    return out;
}

}  // namespace subbench
