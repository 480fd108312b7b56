#include "subbench/gan.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "subbench/error.hpp"
#include "subbench/preprocess.hpp"

namespace subbench {

using nn::Tensor;

std::string to_string(GanArch a) { return a == GanArch::Dcgan ? "dcgan" : "pggan"; }

GanArch parse_gan_arch(std::string_view s) {
    if (s == "dcgan") return GanArch::Dcgan;
    if (s == "pggan") return GanArch::Pggan;
    throw ConfigError("unknown GAN architecture '" + std::string(s) + "'");
}

namespace {

bool is_power_of_two(int v) { return v > 0 && (v & (v - 1)) == 0; }

int doubling_steps(int base, int target) {
    if (base <= 0 || target < base) return -1;
    int steps = 0;
    for (int r = base; r < target; r *= 2) ++steps;
    return (base << steps) == target ? steps : -1;
}

}  // namespace

void GanConfig::validate() const {
    if (model_id.empty()) throw ConfigError("GAN model_id must not be empty");
    if (latent_dim <= 0) throw ConfigError("latent_dim must be positive");
    if (channels != 1 && channels != 3) throw ConfigError("GAN channels must be 1 or 3");
    if (batch_size <= 0 || epochs <= 0) throw ConfigError("batch_size and epochs must be positive");
    if (conditional && label_cardinality < 2) throw ConfigError("conditional GAN needs label_cardinality >= 2");
    if (!conditional && label_cardinality != 0) throw ConfigError("unconditional GAN must have label_cardinality 0");
    if (fade_fraction < 0.0 || fade_fraction > 1.0) throw ConfigError("fade_fraction must lie in [0, 1]");
    if (fmap_base <= 0 || fmap_max <= 0) throw ConfigError("feature-map table must be positive");
    if (optimizer.learning_rate <= 0.0) throw ConfigError("learning rate must be positive");
    if (arch == GanArch::Dcgan) {
        if (!is_power_of_two(image_size) || image_size < 4) {
            throw ConfigError("dcgan image_size must be a power of two >= 4");
        }
    } else if (doubling_steps(pggan_base, image_size) < 0) {
        throw ConfigError("image_size " + std::to_string(image_size) + " is not reachable by doubling from base " +
                          std::to_string(pggan_base));
    }
}

int GanConfig::channels_at(int resolution) const { return std::max(1, std::min(fmap_max, fmap_base / resolution)); }

GanConfig GanConfig::desk() {
    GanConfig c;
    c.model_id = "desk-gan";
    c.latent_dim = 16;
    c.image_size = 32;
    c.batch_size = 16;
    c.epochs = 30;
    c.fmap_base = 512;
    c.fmap_max = 64;
    return c;
}

GanConfig GanConfig::paper_xray(bool conditional, int label_cardinality) {
    GanConfig c;
    c.model_id = "xray-gan";
    c.latent_dim = 512;
    c.image_size = 256;
    c.batch_size = 32;
    c.conditional = conditional;
    c.label_cardinality = conditional ? label_cardinality : 0;
    c.epochs = conditional ? 60 : 30;
    return c;
}

GanConfig GanConfig::paper_histology() {
    GanConfig c;
    c.model_id = "histology-gan";
    c.latent_dim = 256;
    c.image_size = 256;
    c.channels = 3;
    c.batch_size = 32;
    c.epochs = 10;
    return c;
}

nlohmann::json to_json(const GanConfig& c) {
    return {{"model_id", c.model_id},
            {"arch", to_string(c.arch)},
            {"latent_dim", c.latent_dim},
            {"image_size", c.image_size},
            {"channels", c.channels},
            {"conditional", c.conditional},
            {"label_cardinality", c.label_cardinality},
            {"batch_size", c.batch_size},
            {"epochs", c.epochs},
            {"optimizer",
             {{"learning_rate", c.optimizer.learning_rate},
              {"beta1", c.optimizer.beta1},
              {"beta2", c.optimizer.beta2},
              {"eps", c.optimizer.eps}}},
            {"pggan_base", c.pggan_base},
            {"fade_fraction", c.fade_fraction},
            {"pixel_norm", c.pixel_norm},
            {"minibatch_stddev", c.minibatch_stddev},
            {"fmap_base", c.fmap_base},
            {"fmap_max", c.fmap_max}};
}

GanConfig gan_config_from_json(const nlohmann::json& j) {
    GanConfig c;
    c.model_id = j.value("model_id", c.model_id);
    c.arch = parse_gan_arch(j.value("arch", std::string("dcgan")));
    c.latent_dim = j.value("latent_dim", c.latent_dim);
    c.image_size = j.value("image_size", c.image_size);
    c.channels = j.value("channels", c.channels);
    c.conditional = j.value("conditional", c.conditional);
    c.label_cardinality = j.value("label_cardinality", c.label_cardinality);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.epochs = j.value("epochs", c.epochs);
    if (j.contains("optimizer")) {
        const auto& o = j.at("optimizer");
        c.optimizer.learning_rate = o.value("learning_rate", c.optimizer.learning_rate);
        c.optimizer.beta1 = o.value("beta1", c.optimizer.beta1);
        c.optimizer.beta2 = o.value("beta2", c.optimizer.beta2);
        c.optimizer.eps = o.value("eps", c.optimizer.eps);
    }
    c.pggan_base = j.value("pggan_base", c.pggan_base);
    c.fade_fraction = j.value("fade_fraction", c.fade_fraction);
    c.pixel_norm = j.value("pixel_norm", c.pixel_norm);
    c.minibatch_stddev = j.value("minibatch_stddev", c.minibatch_stddev);
    c.fmap_base = j.value("fmap_base", c.fmap_base);
    c.fmap_max = j.value("fmap_max", c.fmap_max);
    return c;
}

std::vector<Stage> progressive_schedule(const GanConfig& config) {
    if (config.arch != GanArch::Pggan) throw ConfigError("progressive_schedule requires arch = pggan");
    const int steps = doubling_steps(config.pggan_base, config.image_size);
    if (steps < 0) {
        throw ConfigError("image_size " + std::to_string(config.image_size) + " is not reachable by doubling from base " +
                          std::to_string(config.pggan_base));
    }
    std::vector<Stage> stages;
    for (int i = 0; i <= steps; ++i) stages.push_back({config.pggan_base << i, config.epochs});
    return stages;
}

double fade_alpha(int stage_index, long step, long steps_in_stage, double fade_fraction) {
    if (stage_index == 0) return 1.0;
    const double fade_steps = fade_fraction * static_cast<double>(steps_in_stage);
    if (fade_steps <= 0.0) return 1.0;
    return std::clamp(static_cast<double>(step) / fade_steps, 0.0, 1.0);
}

Tensor blend(const Tensor& prev_upsampled, const Tensor& new_path, double alpha) {
    if (!prev_upsampled.same_shape(new_path)) {
        throw DataError("blend: shape mismatch " + prev_upsampled.shape_string() + " vs " + new_path.shape_string());
    }
    if (alpha < 0.0 || alpha > 1.0) throw DataError("blend: alpha must lie in [0, 1]");
    Tensor out(new_path.shape);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = alpha * new_path[i] + (1.0 - alpha) * prev_upsampled[i];
    return out;
}

std::vector<PixelGrid> blend(const std::vector<PixelGrid>& prev_upsampled, const std::vector<PixelGrid>& new_path,
                             double alpha) {
    if (prev_upsampled.size() != new_path.size()) throw DataError("blend: batch size mismatch");
    if (alpha < 0.0 || alpha > 1.0) throw DataError("blend: alpha must lie in [0, 1]");
    std::vector<PixelGrid> out;
    out.reserve(new_path.size());
    for (std::size_t b = 0; b < new_path.size(); ++b) {
        const auto& p = prev_upsampled[b];
        const auto& q = new_path[b];
        if (p.height() != q.height() || p.width() != q.width() || p.channels() != q.channels()) {
            throw DataError("blend: shape mismatch in batch item " + std::to_string(b));
        }
        PixelGrid o(q.height(), q.width(), q.channels(), q.range());
        for (std::size_t i = 0; i < q.size(); ++i) {
            o.values()[i] = static_cast<float>(alpha * q.values()[i] + (1.0 - alpha) * p.values()[i]);
        }
        out.push_back(std::move(o));
    }
    return out;
}

namespace {

double clamp_prob(double p) { return std::clamp(p, kProbabilityEps, 1.0 - kProbabilityEps); }

}  // namespace

GanLosses gan_losses(std::span<const double> d_real, std::span<const double> d_fake) {
    if (d_real.empty() || d_fake.empty()) throw DataError("gan_losses: empty batch");
    GanLosses out;
    double real_term = 0.0, fake_term = 0.0, gen_term = 0.0;
    for (double p : d_real) real_term -= std::log(clamp_prob(p));
    for (double p : d_fake) {
        fake_term -= std::log(1.0 - clamp_prob(p));
        gen_term -= std::log(clamp_prob(p));
    }
    out.d_loss = real_term / d_real.size() + fake_term / d_fake.size();
    out.g_loss = gen_term / d_fake.size();
    return out;
}

namespace {

// Derivatives of the clamped losses with respect to the probabilities.
Tensor d_loss_grad_real(const Tensor& p) {
    Tensor g(p.shape);
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double c = clamp_prob(p[i]);
        g[i] = c == p[i] ? -1.0 / (p.size() * c) : 0.0;
    }
    return g;
}

Tensor d_loss_grad_fake(const Tensor& p) {
    Tensor g(p.shape);
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double c = clamp_prob(p[i]);
        g[i] = c == p[i] ? 1.0 / (p.size() * (1.0 - c)) : 0.0;
    }
    return g;
}

Tensor g_loss_grad(const Tensor& p) {
    Tensor g(p.shape);
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double c = clamp_prob(p[i]);
        g[i] = c == p[i] ? -1.0 / (p.size() * c) : 0.0;
    }
    return g;
}

Tensor scaled(const Tensor& t, double k) {
    Tensor o = t;
    for (auto& v : o.data) v *= k;
    return o;
}

void add_into(Tensor& a, const Tensor& b) {
    for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
}

using nn::Sequential;

// ------------------------------------------------------------------ DCGAN

class DcganGenerator final : public GanNetwork {
public:
    DcganGenerator(const GanConfig& c, Rng& rng) {
        const int in = c.latent_dim + c.label_cardinality;
        const int c0 = c.channels_at(4);
        net_.emplace<nn::Linear>(in, c0 * 16, rng);
        net_.emplace<nn::Reshape>(std::vector<int>{c0, 4, 4});
        if (c.image_size == 4) {
            net_.emplace<nn::Conv2d>(c0, c.channels, 3, 1, 1, rng);
        } else {
            net_.emplace<nn::BatchNorm>(c0);
            net_.emplace<nn::ReLU>();
            int ch = c0;
            for (int r = 8; r <= c.image_size; r *= 2) {
                const bool last = r == c.image_size;
                const int next = last ? c.channels : c.channels_at(r);
                net_.emplace<nn::ConvTranspose2d>(ch, next, 4, 2, 1, rng);
                if (!last) {
                    net_.emplace<nn::BatchNorm>(next);
                    net_.emplace<nn::ReLU>();
                }
                ch = next;
            }
        }
        net_.emplace<nn::Tanh>();
    }

    Tensor forward(const Tensor& x, int, double) override { return net_.forward(x); }
    Tensor backward(const Tensor& g) override { return net_.backward(g); }
    std::vector<nn::Parameter*> parameters() override { return nn::parameters_of(net_); }
    void set_training(bool t) override { net_.set_training(t); }

private:
    Sequential net_;
};

class DcganDiscriminator final : public GanNetwork {
public:
    DcganDiscriminator(const GanConfig& c, Rng& rng) {
        int ch = c.channels + c.label_cardinality;
        bool first = true;
        for (int r = c.image_size; r > 4; r /= 2) {
            const int next = c.channels_at(r / 2);
            net_.emplace<nn::Conv2d>(ch, next, 4, 2, 1, rng);
            if (!first) net_.emplace<nn::BatchNorm>(next);
            net_.emplace<nn::LeakyReLU>(0.2);
            ch = next;
            first = false;
        }
        net_.emplace<nn::Linear>(ch * 16, 1, rng, 0.5);
        net_.emplace<nn::Sigmoid>();
    }

    Tensor forward(const Tensor& x, int, double) override { return net_.forward(x); }
    Tensor backward(const Tensor& g) override { return net_.backward(g); }
    std::vector<nn::Parameter*> parameters() override { return nn::parameters_of(net_); }
    void set_training(bool t) override { net_.set_training(t); }

private:
    Sequential net_;
};

// ------------------------------------------------------------------ PGGAN

class PgganGenerator final : public GanNetwork {
public:
    PgganGenerator(const GanConfig& c, Rng& rng) {
        const auto stages = progressive_schedule(c);
        const int in = c.latent_dim + c.label_cardinality;
        const int c0 = c.channels_at(stages[0].resolution);
        const int base = stages[0].resolution;
        initial_.emplace<nn::Linear>(in, c0 * base * base, rng);
        initial_.emplace<nn::Reshape>(std::vector<int>{c0, base, base});
        initial_.emplace<nn::LeakyReLU>(0.2);
        initial_.emplace<nn::Conv2d>(c0, c0, 3, 1, 1, rng);
        initial_.emplace<nn::LeakyReLU>(0.2);
        if (c.pixel_norm) initial_.emplace<nn::PixelNorm>();

        blocks_.resize(stages.size());
        to_rgb_.resize(stages.size());
        for (std::size_t i = 0; i < stages.size(); ++i) {
            const int ch = c.channels_at(stages[i].resolution);
            if (i > 0) {
                const int prev = c.channels_at(stages[i - 1].resolution);
                auto& b = blocks_[i];
                b.emplace<nn::Upsample2d>();
                b.emplace<nn::Conv2d>(prev, ch, 3, 1, 1, rng);
                b.emplace<nn::LeakyReLU>(0.2);
                if (c.pixel_norm) b.emplace<nn::PixelNorm>();
                b.emplace<nn::Conv2d>(ch, ch, 3, 1, 1, rng);
                b.emplace<nn::LeakyReLU>(0.2);
                if (c.pixel_norm) b.emplace<nn::PixelNorm>();
            }
            to_rgb_[i].emplace<nn::Conv2d>(ch, c.channels, 1, 1, 0, rng);
            to_rgb_[i].emplace<nn::Tanh>();
        }
    }

    Tensor forward(const Tensor& z, int stage, double alpha) override {
        if (stage < 0 || stage >= static_cast<int>(blocks_.size())) throw DataError("pggan generator: bad stage");
        stage_ = stage;
        alpha_ = alpha;
        fading_ = stage > 0 && alpha < 1.0;
        Tensor h = initial_.forward(z);
        Tensor prev;
        for (int i = 1; i <= stage; ++i) {
            if (i == stage) prev = h;
            h = blocks_[i].forward(h);
        }
        Tensor out = to_rgb_[stage].forward(h);
        if (fading_) {
            const Tensor old = upsample_.forward(to_rgb_[stage - 1].forward(prev));
            out = blend(old, out, alpha);
        }
        return out;
    }

    Tensor backward(const Tensor& g) override {
        Tensor d_prev;
        Tensor g_new = g;
        if (fading_) {
            g_new = scaled(g, alpha_);
            d_prev = to_rgb_[stage_ - 1].backward(upsample_.backward(scaled(g, 1.0 - alpha_)));
        }
        Tensor gh = to_rgb_[stage_].backward(g_new);
        for (int i = stage_; i >= 1; --i) {
            gh = blocks_[i].backward(gh);
            if (i == stage_ && fading_) add_into(gh, d_prev);
        }
        return initial_.backward(gh);
    }

    std::vector<nn::Parameter*> parameters() override {
        std::vector<nn::Parameter*> out;
        initial_.collect(out);
        for (auto& b : blocks_) b.collect(out);
        for (auto& t : to_rgb_) t.collect(out);
        return out;
    }

    void set_training(bool) override {}

private:
    Sequential initial_;
    std::vector<Sequential> blocks_;
    std::vector<Sequential> to_rgb_;
    nn::Upsample2d upsample_;
    int stage_ = 0;
    double alpha_ = 1.0;
    bool fading_ = false;
};

class PgganDiscriminator final : public GanNetwork {
public:
    PgganDiscriminator(const GanConfig& c, Rng& rng) {
        const auto stages = progressive_schedule(c);
        const int in = c.channels + c.label_cardinality;
        blocks_.resize(stages.size());
        from_rgb_.resize(stages.size());
        for (std::size_t i = 0; i < stages.size(); ++i) {
            const int ch = c.channels_at(stages[i].resolution);
            from_rgb_[i].emplace<nn::Conv2d>(in, ch, 1, 1, 0, rng);
            from_rgb_[i].emplace<nn::LeakyReLU>(0.2);
            if (i > 0) {
                const int prev = c.channels_at(stages[i - 1].resolution);
                auto& b = blocks_[i];
                b.emplace<nn::Conv2d>(ch, ch, 3, 1, 1, rng);
                b.emplace<nn::LeakyReLU>(0.2);
                b.emplace<nn::Conv2d>(ch, prev, 3, 1, 1, rng);
                b.emplace<nn::LeakyReLU>(0.2);
                b.emplace<nn::AvgPool2d>();
            }
        }
        const int base = stages[0].resolution;
        const int c0 = c.channels_at(base);
        int ch = c0;
        if (c.minibatch_stddev) {
            final_.emplace<nn::MinibatchStdDev>();
            ch += 1;
        }
        final_.emplace<nn::Conv2d>(ch, c0, 3, 1, 1, rng);
        final_.emplace<nn::LeakyReLU>(0.2);
        final_.emplace<nn::Linear>(c0 * base * base, c0, rng);
        final_.emplace<nn::LeakyReLU>(0.2);
        final_.emplace<nn::Linear>(c0, 1, rng, 0.5);
        final_.emplace<nn::Sigmoid>();
    }

    Tensor forward(const Tensor& x, int stage, double alpha) override {
        if (stage < 0 || stage >= static_cast<int>(blocks_.size())) throw DataError("pggan discriminator: bad stage");
        stage_ = stage;
        alpha_ = alpha;
        fading_ = stage > 0 && alpha < 1.0;
        Tensor h = from_rgb_[stage].forward(x);
        if (stage > 0) {
            h = blocks_[stage].forward(h);
            if (fading_) h = blend(from_rgb_[stage - 1].forward(downsample_.forward(x)), h, alpha);
        }
        for (int i = stage - 1; i >= 1; --i) h = blocks_[i].forward(h);
        return final_.forward(h);
    }

    Tensor backward(const Tensor& g) override {
        Tensor gh = final_.backward(g);
        for (int i = 1; i <= stage_ - 1; ++i) gh = blocks_[i].backward(gh);
        Tensor dx_low;
        if (stage_ > 0) {
            if (fading_) {
                dx_low = downsample_.backward(from_rgb_[stage_ - 1].backward(scaled(gh, 1.0 - alpha_)));
                gh = scaled(gh, alpha_);
            }
            gh = blocks_[stage_].backward(gh);
        }
        Tensor dx = from_rgb_[stage_].backward(gh);
        if (fading_) add_into(dx, dx_low);
        return dx;
    }

    std::vector<nn::Parameter*> parameters() override {
        std::vector<nn::Parameter*> out;
        for (auto& f : from_rgb_) f.collect(out);
        for (auto& b : blocks_) b.collect(out);
        final_.collect(out);
        return out;
    }

    void set_training(bool) override {}

private:
    std::vector<Sequential> from_rgb_;
    std::vector<Sequential> blocks_;
    Sequential final_;
    nn::AvgPool2d downsample_;
    int stage_ = 0;
    double alpha_ = 1.0;
    bool fading_ = false;
};

struct StagePlan {
    int resolution;
    int epochs;
};

std::vector<StagePlan> training_stages(const GanConfig& c) {
    if (c.arch == GanArch::Dcgan) return {{c.image_size, c.epochs}};
    std::vector<StagePlan> out;
    for (const auto& s : progressive_schedule(c)) out.push_back({s.resolution, s.epochs});
    return out;
}

// Unit-range images resized to `res`, mapped to [-1, 1], as (N, C, res, res).
Tensor images_to_tensor(const std::vector<PixelGrid>& images, int res, int channels) {
    const int n = static_cast<int>(images.size());
    Tensor t({n, channels, res, res});
    const std::size_t plane = static_cast<std::size_t>(res) * res;
    for (int b = 0; b < n; ++b) {
        const PixelGrid g = images[b].height() == res && images[b].width() == res ? images[b] : resize(images[b], res, res);
        if (g.channels() != channels) throw DataError("GAN training image has wrong channel count");
        for (int c = 0; c < channels; ++c) {
            for (int y = 0; y < res; ++y) {
                for (int x = 0; x < res; ++x) {
                    t[(static_cast<std::size_t>(b) * channels + c) * plane + y * res + x] = 2.0 * g.at(y, x, c) - 1.0;
                }
            }
        }
    }
    return t;
}

Tensor gather(const Tensor& all, const std::vector<std::size_t>& idx) {
    std::vector<int> shape = all.shape;
    shape[0] = static_cast<int>(idx.size());
    Tensor out(shape);
    const std::size_t f = all.stride0();
    for (std::size_t i = 0; i < idx.size(); ++i) {
        std::copy_n(all.data.begin() + idx[i] * f, f, out.data.begin() + i * f);
    }
    return out;
}

// Real images at a stage being faded in are blended with their 2x
// down-then-up version, matching what the generator produces.
Tensor fade_real(const Tensor& real, double alpha) {
    if (alpha >= 1.0) return real;
    nn::AvgPool2d down;
    nn::Upsample2d up;
    return blend(up.forward(down.forward(real)), real, alpha);
}

Tensor latent_batch(Rng& rng, int n, int latent_dim, int cardinality, const std::vector<int>& labels) {
    Tensor z({n, latent_dim + cardinality});
    for (int b = 0; b < n; ++b) {
        double* row = z.data.data() + static_cast<std::size_t>(b) * (latent_dim + cardinality);
        for (int i = 0; i < latent_dim; ++i) row[i] = rng.normal();
        if (cardinality > 0) row[latent_dim + labels[b]] = 1.0;
    }
    return z;
}

Tensor with_label_channels(const Tensor& x, int cardinality, const std::vector<int>& labels) {
    if (cardinality == 0) return x;
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    Tensor out({n, c + cardinality, h, w});
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    for (int b = 0; b < n; ++b) {
        std::copy_n(x.data.begin() + b * x.stride0(), x.stride0(), out.data.begin() + b * out.stride0());
        double* lab = out.data.data() + b * out.stride0() + x.stride0() + static_cast<std::size_t>(labels[b]) * plane;
        std::fill_n(lab, plane, 1.0);
    }
    return out;
}

// Gradient restricted to the image channels.
Tensor strip_label_channels(const Tensor& g, int channels) {
    if (g.dim(1) == channels) return g;
    const int n = g.dim(0), h = g.dim(2), w = g.dim(3);
    Tensor out({n, channels, h, w});
    for (int b = 0; b < n; ++b) {
        std::copy_n(g.data.begin() + b * g.stride0(), out.stride0(), out.data.begin() + b * out.stride0());
    }
    return out;
}

std::shared_ptr<const Container> snapshot(const GanConfig& c, GanNetwork& g, GanNetwork& d) {
    auto out = std::make_shared<Container>();
    out->kind = "gan-checkpoint";
    nn::export_parameters("G", g.parameters(), out->arrays);
    nn::export_parameters("D", d.parameters(), out->arrays);
    out->meta["config"] = to_json(c);
    return out;
}

nlohmann::json stats_json(const LossStats& s) {
    return {{"d_loss", s.d_loss},
            {"g_loss", s.g_loss},
            {"d_real_mean", s.d_real_mean},
            {"d_fake_mean", s.d_fake_mean},
            {"d_fake_accuracy", s.d_fake_accuracy},
            {"steps", s.steps}};
}

LossStats stats_from_json(const nlohmann::json& j) {
    LossStats s;
    s.d_loss = j.value("d_loss", 0.0);
    s.g_loss = j.value("g_loss", 0.0);
    s.d_real_mean = j.value("d_real_mean", 0.0);
    s.d_fake_mean = j.value("d_fake_mean", 0.0);
    s.d_fake_accuracy = j.value("d_fake_accuracy", 0.0);
    s.steps = j.value("steps", 0L);
    return s;
}

std::string ids_checksum(const std::vector<std::string>& ids) {
    std::string body;
    for (const auto& id : ids) body += id + "\n";
    return sha256_hex(body);
}

}  // namespace

std::unique_ptr<GanNetwork> make_generator(const GanConfig& config, Rng& rng) {
    config.validate();
    if (config.arch == GanArch::Dcgan) return std::make_unique<DcganGenerator>(config, rng);
    return std::make_unique<PgganGenerator>(config, rng);
}

std::unique_ptr<GanNetwork> make_discriminator(const GanConfig& config, Rng& rng) {
    config.validate();
    if (config.arch == GanArch::Dcgan) return std::make_unique<DcganDiscriminator>(config, rng);
    return std::make_unique<PgganDiscriminator>(config, rng);
}

std::string Checkpoint::id() const {
    return model_id + "-s" + std::to_string(stage) + "-e" + std::to_string(epoch);
}

void Checkpoint::save(const std::filesystem::path& path) const {
    if (!weights) throw DataError("checkpoint " + id() + " has no weights");
    Container c = *weights;
    c.kind = "gan-checkpoint";
    c.meta["config"] = to_json(config);
    c.meta["model_id"] = model_id;
    c.meta["epoch"] = epoch;
    c.meta["stage"] = stage;
    c.meta["resolution"] = resolution;
    c.meta["alpha"] = alpha;
    c.meta["stats"] = stats_json(stats);
    c.meta["training_checksum"] = training_checksum;
    write_container(path, c);
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
    auto c = std::make_shared<Container>(read_container(path));
    if (c->kind != "gan-checkpoint") throw DataError(path.string() + " is not a GAN checkpoint");
    Checkpoint ck;
    ck.config = gan_config_from_json(c->meta.at("config"));
    ck.config.validate();
    ck.model_id = c->meta.at("model_id").get<std::string>();
    ck.epoch = c->meta.at("epoch").get<int>();
    ck.stage = c->meta.at("stage").get<int>();
    ck.resolution = c->meta.at("resolution").get<int>();
    ck.alpha = c->meta.at("alpha").get<double>();
    ck.stats = stats_from_json(c->meta.at("stats"));
    ck.training_checksum = c->meta.value("training_checksum", std::string());
    if (ck.alpha < 0.0 || ck.alpha > 1.0) throw DataError("checkpoint alpha outside [0, 1]");
    const auto plan = training_stages(ck.config);
    if (ck.stage < 0 || ck.stage >= static_cast<int>(plan.size()) || plan[ck.stage].resolution != ck.resolution) {
        throw DataError("checkpoint stage/resolution not in the configured schedule");
    }
    ck.weights = std::move(c);
    return ck;
}

GanTrainResult train_gan(const GanConfig& config, const GanTrainingSet& train_set, std::uint64_t seed,
                         const GanTrainOptions& options) {
    config.validate();
    const std::size_t n = train_set.images.size();
    if (n == 0) throw DataError("train_gan: empty training set");
    if (train_set.ids.size() != n) throw DataError("train_gan: ids and images differ in length");
    if (config.conditional) {
        if (train_set.labels.size() != n) throw DataError("train_gan: conditional model needs one label per image");
        for (int l : train_set.labels) {
            if (l < 0 || l >= config.label_cardinality) throw DataError("train_gan: label id out of range");
        }
    }
    for (const auto& img : train_set.images) {
        if (img.height() != config.image_size || img.width() != config.image_size) {
            throw DataError("train_gan: images must be " + std::to_string(config.image_size) + "x" +
                            std::to_string(config.image_size));
        }
    }

    Rng init_rng(Rng::derive(seed, "gan-init"));
    Rng rng(Rng::derive(seed, "gan-train"));
    auto gen = make_generator(config, init_rng);
    auto disc = make_discriminator(config, init_rng);
    gen->set_training(true);
    disc->set_training(true);
    nn::Adam opt_g(gen->parameters(), config.optimizer);
    nn::Adam opt_d(disc->parameters(), config.optimizer);
    const int card = config.conditional ? config.label_cardinality : 0;

    GanTrainResult result;
    result.training_ids = train_set.ids;
    const std::string training_checksum = ids_checksum(train_set.ids);

    const auto plan = training_stages(config);
    for (int s = 0; s < static_cast<int>(plan.size()); ++s) {
        const int res = plan[s].resolution;
        const Tensor all_real = images_to_tensor(train_set.images, res, config.channels);
        const long steps_per_epoch = static_cast<long>((n + config.batch_size - 1) / config.batch_size);
        const long stage_steps = steps_per_epoch * plan[s].epochs;
        long step = 0;
        double alpha = 1.0;

        for (int epoch = 0; epoch < plan[s].epochs; ++epoch) {
            std::vector<std::size_t> order(n);
            std::iota(order.begin(), order.end(), 0);
            rng.shuffle(order);

            LossStats stats;
            for (std::size_t start = 0; start < n; start += config.batch_size, ++step) {
                const std::size_t stop = std::min(n, start + static_cast<std::size_t>(config.batch_size));
                const std::vector<std::size_t> idx(order.begin() + start, order.begin() + stop);
                const int bn = static_cast<int>(idx.size());
                alpha = fade_alpha(s, step, stage_steps, config.fade_fraction);

                std::vector<int> labels;
                if (card > 0) {
                    for (auto i : idx) labels.push_back(train_set.labels[i]);
                }
                const Tensor real = with_label_channels(fade_real(gather(all_real, idx), alpha), card, labels);
                const Tensor z = latent_batch(rng, bn, config.latent_dim, card, labels);

                // Discriminator step.
                opt_d.zero_grad();
                const Tensor p_real = disc->forward(real, s, alpha);
                disc->backward(d_loss_grad_real(p_real));
                const Tensor fake = gen->forward(z, s, alpha);
                const Tensor fake_in = with_label_channels(fake, card, labels);
                const Tensor p_fake = disc->forward(fake_in, s, alpha);
                disc->backward(d_loss_grad_fake(p_fake));
                const auto losses_d = gan_losses(p_real.data, p_fake.data);
                opt_d.step();

                // Generator step against the updated discriminator; the
                // generator's cached forward pass is still current.
                opt_g.zero_grad();
                const Tensor p_fake2 = disc->forward(fake_in, s, alpha);
                const Tensor d_fake = disc->backward(g_loss_grad(p_fake2));
                gen->backward(strip_label_channels(d_fake, config.channels));
                const auto losses_g = gan_losses(p_real.data, p_fake2.data);
                opt_g.step();

                result.d_loss_trace.push_back(losses_d.d_loss);
                result.g_loss_trace.push_back(losses_g.g_loss);
                if (!std::isfinite(losses_d.d_loss) || !std::isfinite(losses_g.g_loss)) {
                    result.aborted = true;
                    result.abort_reason = "non-finite loss at stage " + std::to_string(s) + ", epoch " +
                                          std::to_string(epoch) + ", step " + std::to_string(step);
                    return result;
                }

                stats.d_loss += losses_d.d_loss;
                stats.g_loss += losses_g.g_loss;
                stats.d_real_mean += std::accumulate(p_real.data.begin(), p_real.data.end(), 0.0) / bn;
                stats.d_fake_mean += std::accumulate(p_fake.data.begin(), p_fake.data.end(), 0.0) / bn;
                stats.d_fake_accuracy +=
                    static_cast<double>(std::count_if(p_fake.data.begin(), p_fake.data.end(), [](double p) { return p < 0.5; })) / bn;
                ++stats.steps;
            }
            const double k = 1.0 / static_cast<double>(stats.steps);
            stats.d_loss *= k;
            stats.g_loss *= k;
            stats.d_real_mean *= k;
            stats.d_fake_mean *= k;
            stats.d_fake_accuracy *= k;

            Checkpoint ck;
            ck.model_id = config.model_id;
            ck.epoch = epoch;
            ck.stage = s;
            ck.resolution = res;
            ck.alpha = alpha;
            ck.config = config;
            ck.stats = stats;
            ck.training_checksum = training_checksum;
            ck.weights = snapshot(config, *gen, *disc);
            if (options.checkpoint_dir) ck.save(*options.checkpoint_dir / (ck.id() + ".ckpt"));
            if (options.on_checkpoint) options.on_checkpoint(ck);
            result.checkpoints.push_back(std::move(ck));
        }
    }
    return result;
}

namespace {

struct LoadedPair {
    std::unique_ptr<GanNetwork> gen;
    std::unique_ptr<GanNetwork> disc;
};

LoadedPair load_networks(const Checkpoint& ckpt) {
    if (!ckpt.weights) throw DataError("checkpoint " + ckpt.id() + " has no weights");
    Rng rng(0);
    LoadedPair p{make_generator(ckpt.config, rng), make_discriminator(ckpt.config, rng)};
    nn::import_parameters("G", p.gen->parameters(), *ckpt.weights);
    nn::import_parameters("D", p.disc->parameters(), *ckpt.weights);
    p.gen->set_training(false);
    p.disc->set_training(false);
    return p;
}

void check_labels(const Checkpoint& ckpt, int n, const std::vector<int>& labels) {
    const auto& c = ckpt.config;
    if (c.conditional) {
        if (labels.size() != static_cast<std::size_t>(n)) throw DataError("conditional model needs one label per sample");
        for (int l : labels) {
            if (l < 0 || l >= c.label_cardinality) {
                throw DataError("label id " + std::to_string(l) + " out of range for cardinality " +
                                std::to_string(c.label_cardinality));
            }
        }
    } else if (!labels.empty()) {
        throw DataError("labels given for an unconditional model");
    }
}

}  // namespace

std::vector<PixelGrid> sample(const Checkpoint& ckpt, int n, const std::vector<int>& labels, std::uint64_t seed) {
    if (n < 0) throw DataError("sample count must be non-negative");
    check_labels(ckpt, n, labels);
    if (n == 0) return {};
    auto nets = load_networks(ckpt);
    const auto& c = ckpt.config;
    const int card = c.conditional ? c.label_cardinality : 0;
    Rng rng(Rng::derive(seed, "gan-sample"));
    const Tensor z = latent_batch(rng, n, c.latent_dim, card, labels);
    const Tensor out = nets.gen->forward(z, ckpt.stage, ckpt.alpha);

    const int res = ckpt.resolution;
    const std::size_t plane = static_cast<std::size_t>(res) * res;
    std::vector<PixelGrid> images;
    images.reserve(n);
    for (int b = 0; b < n; ++b) {
        PixelGrid g(res, res, c.channels, Range::Signed);
        for (int ch = 0; ch < c.channels; ++ch) {
            for (int y = 0; y < res; ++y) {
                for (int x = 0; x < res; ++x) {
                    g.at(y, x, ch) = static_cast<float>(out[(static_cast<std::size_t>(b) * c.channels + ch) * plane + y * res + x]);
                }
            }
        }
        g.clip();
        images.push_back(std::move(g));
    }
    return images;
}

std::vector<double> discriminate(const Checkpoint& ckpt, const std::vector<PixelGrid>& images,
                                 const std::vector<int>& labels) {
    const int n = static_cast<int>(images.size());
    check_labels(ckpt, n, labels);
    if (n == 0) return {};
    auto nets = load_networks(ckpt);
    const auto& c = ckpt.config;
    const int card = c.conditional ? c.label_cardinality : 0;
    const Tensor x = with_label_channels(images_to_tensor(images, ckpt.resolution, c.channels), card, labels);
    return nets.disc->forward(x, ckpt.stage, ckpt.alpha).data;
}

}  // namespace subbench
