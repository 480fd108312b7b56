#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "subbench/container.hpp"
#include "subbench/image.hpp"
#include "subbench/nn.hpp"

namespace subbench {

enum class GanArch { Dcgan, Pggan };

std::string to_string(GanArch a);
GanArch parse_gan_arch(std::string_view s);

struct GanConfig {
    std::string model_id = "gan";
    GanArch arch = GanArch::Dcgan;
    int latent_dim = 512;
    int image_size = 256;
    int channels = 1;
    bool conditional = false;
    int label_cardinality = 0;
    int batch_size = 32;
    int epochs = 30;
    nn::AdamOptions optimizer;  // 2e-4, 0.5, 0.999, 1e-8
    int pggan_base = 4;
    double fade_fraction = 0.5;
    bool pixel_norm = true;
    bool minibatch_stddev = true;
    // Feature maps at resolution r: min(fmap_max, fmap_base / r).
    int fmap_base = 8192;
    int fmap_max = 512;

    void validate() const;
    int channels_at(int resolution) const;

    // Small networks for 32x32 smoke runs.
    static GanConfig desk();
    // Published setups: latent 512 (X-ray) or 256 (histology), 256x256, batch 32.
    static GanConfig paper_xray(bool conditional, int label_cardinality);
    static GanConfig paper_histology();
};

nlohmann::json to_json(const GanConfig& c);
GanConfig gan_config_from_json(const nlohmann::json& j);

struct Stage {
    int resolution = 0;
    int epochs = 0;
};

// Resolutions base, 2*base, ..., image_size; each stage trains the full
// configured epoch count.
std::vector<Stage> progressive_schedule(const GanConfig& config);

// Blend coefficient at 0-based `step` of `steps_in_stage`. The first stage is
// always fully blended in (1); later stages ramp linearly from 0 to 1 over the
// first fade_fraction of their steps.
double fade_alpha(int stage_index, long step, long steps_in_stage, double fade_fraction);

// alpha * new_path + (1 - alpha) * prev_upsampled, elementwise.
nn::Tensor blend(const nn::Tensor& prev_upsampled, const nn::Tensor& new_path, double alpha);
std::vector<PixelGrid> blend(const std::vector<PixelGrid>& prev_upsampled, const std::vector<PixelGrid>& new_path,
                             double alpha);

inline constexpr double kProbabilityEps = 1e-7;

struct GanLosses {
    double d_loss = 0.0;
    double g_loss = 0.0;
};

// Non-saturating objective on discriminator probabilities clamped to [eps, 1 - eps]:
//   d_loss = -mean ln d_real - mean ln(1 - d_fake),  g_loss = -mean ln d_fake.
GanLosses gan_losses(std::span<const double> d_real, std::span<const double> d_fake);

struct LossStats {
    double d_loss = 0.0;
    double g_loss = 0.0;
    double d_real_mean = 0.0;
    double d_fake_mean = 0.0;
    // Fraction of generated samples the discriminator scored below 0.5.
    double d_fake_accuracy = 0.0;
    long steps = 0;
};

// Trained state after one epoch (per stage for progressive growing).
struct Checkpoint {
    std::string model_id;
    int epoch = 0;       // 0-based within the stage
    int stage = 0;       // index into progressive_schedule (always 0 for dcgan)
    int resolution = 0;
    double alpha = 1.0;
    GanConfig config;
    LossStats stats;
    std::string training_checksum;  // digest of the training record ids
    std::shared_ptr<const Container> weights;

    // "<model>-s<stage>-e<epoch>"
    std::string id() const;
    void save(const std::filesystem::path& path) const;
    static Checkpoint load(const std::filesystem::path& path);
};

struct GanTrainingSet {
    std::vector<std::string> ids;
    std::vector<PixelGrid> images;  // unit range, image_size x image_size, config channels
    std::vector<int> labels;        // required iff conditional
};

struct GanTrainOptions {
    std::optional<std::filesystem::path> checkpoint_dir;
    std::function<void(const Checkpoint&)> on_checkpoint;
};

struct GanTrainResult {
    std::vector<Checkpoint> checkpoints;
    std::vector<double> d_loss_trace;  // one entry per optimisation step
    std::vector<double> g_loss_trace;
    std::vector<std::string> training_ids;
    bool aborted = false;
    std::string abort_reason;
};

// Alternates one discriminator and one generator Adam step per batch.
// Conditional models receive the one-hot label concatenated to the latent
// (generator) and as constant broadcast channels (discriminator). A non-finite
// loss stops training; checkpoints completed so far are kept.
GanTrainResult train_gan(const GanConfig& config, const GanTrainingSet& train_set, std::uint64_t seed,
                         const GanTrainOptions& options = {});

// n images at the checkpoint's resolution in the signed range (tanh output).
// `labels` must be given (one per image) iff the model is conditional.
std::vector<PixelGrid> sample(const Checkpoint& ckpt, int n, const std::vector<int>& labels, std::uint64_t seed);

// Discriminator probabilities for a batch of unit-range images at the
// checkpoint resolution.
std::vector<double> discriminate(const Checkpoint& ckpt, const std::vector<PixelGrid>& images,
                                 const std::vector<int>& labels);

// Exposed for gradient checks and tests: generator/discriminator networks of a
// configuration, stage and blend coefficient fixed per call.
class GanNetwork {
public:
    virtual ~GanNetwork() = default;
    virtual nn::Tensor forward(const nn::Tensor& x, int stage, double alpha) = 0;
    virtual nn::Tensor backward(const nn::Tensor& grad_out) = 0;
    virtual std::vector<nn::Parameter*> parameters() = 0;
    virtual void set_training(bool training) = 0;
};

std::unique_ptr<GanNetwork> make_generator(const GanConfig& config, Rng& rng);
std::unique_ptr<GanNetwork> make_discriminator(const GanConfig& config, Rng& rng);

}  // namespace subbench
