// Acceptance checks, one PASS/FAIL line per criterion.
//
//   subbench_acceptance            run every criterion
//   subbench_acceptance 2 5        run the listed criteria
//
// Exit status is 0 only when every selected criterion passes.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "gradcheck.hpp"
#include "oracles.hpp"
#include "subbench/bench.hpp"
#include "subbench/classify.hpp"
#include "subbench/cnn.hpp"
#include "subbench/features.hpp"
#include "subbench/gan.hpp"
#include "subbench/nn.hpp"
#include "subbench/pipeline.hpp"
#include "subbench/toy.hpp"
#include "subbench/triage.hpp"
#include "support.hpp"

using namespace subbench;

namespace {

struct Outcome {
    bool pass = true;
    std::string detail;
};

// Accumulates failures; the first few are kept for the report line.
class Checker {
public:
    void expect(bool ok, const std::string& what) {
        ++checks_;
        if (ok) return;
        ++failures_;
        if (failures_ <= 3) notes_.push_back(what);
    }
    void note(const std::string& s) { notes_.push_back(s); }
    Outcome outcome() const {
        std::ostringstream os;
        os << checks_ - failures_ << "/" << checks_ << " checks";
        for (const auto& n : notes_) os << "; " << n;
        return {failures_ == 0, os.str()};
    }

private:
    long checks_ = 0;
    long failures_ = 0;
    std::vector<std::string> notes_;
};

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

Outcome relative_drop_replay() {
    const double rows[12][3] = {{0.96, 0.93, 3.12}, {0.94, 0.87, 7.45}, {0.90, 0.85, 5.56}, {0.93, 0.86, 7.53},
                                {0.90, 0.88, 2.22}, {0.84, 0.78, 7.14}, {0.82, 0.74, 9.76}, {0.83, 0.72, 13.25},
                                {0.86, 0.83, 3.49}, {0.80, 0.73, 8.75}, {0.79, 0.71, 10.13}, {0.80, 0.70, 12.50}};
    Checker c;
    for (const auto& r : rows) {
        const double got = relative_drop(r[0], r[1]);
        c.expect(fmt("%.2f", got) == fmt("%.2f", r[2]),
                 fmt("%.2f", r[0]) + "/" + fmt("%.2f", r[1]) + " gave " + fmt("%.2f", got));
    }
    return c.outcome();
}

Outcome lbp_oracle() {
    Rng rng(1002);
    Checker c;
    double worst = 0.0;
    for (int i = 0; i < 50; ++i) {
        const auto img = testing::random_image(16, 16, rng);
        for (int r : {2, 3, 4}) {
            const auto got = lbp_histogram(img, LbpConfig{r, 8});
            const auto want = oracle::lbp_histogram(img, r, 8);
            double diff = 0.0;
            for (std::size_t b = 0; b < want.size(); ++b) diff = std::max(diff, std::abs(got[b] - want[b]));
            worst = std::max(worst, diff);
            c.expect(got.size() == want.size() && diff < 1e-12, "image " + std::to_string(i) + " r=" + std::to_string(r));
        }
    }
    c.note("max bin difference " + fmt("%.3g", worst));
    return c.outcome();
}

Outcome hash_oracle_and_metric() {
    Rng rng(1003);
    Checker c;
    for (int i = 0; i < 100; ++i) {
        const int h = 16 + static_cast<int>(rng.below(100));
        const int w = 16 + static_cast<int>(rng.below(100));
        const auto img = testing::random_image(h, w, rng);
        const auto sig = average_hash(img, 16);
        const auto bits = oracle::average_hash_bits(img, 16);
        bool same = sig.bit_count() == bits.size();
        for (std::size_t b = 0; same && b < bits.size(); ++b) same = sig.bit(b) == (bits[b] != 0);
        c.expect(same, "image " + std::to_string(i) + " " + std::to_string(h) + "x" + std::to_string(w));
    }
    auto random_sig = [&] {
        std::vector<std::uint8_t> bits(256);
        const double p = rng.uniform();
        for (auto& b : bits) b = rng.uniform() < p;
        return HashSignature(16, bits);
    };
    for (int i = 0; i < 1000; ++i) {
        const auto a = random_sig(), b = random_sig(), d = random_sig();
        const int ab = hamming(a, b), ba = hamming(b, a), bd = hamming(b, d), ad = hamming(a, d);
        c.expect(hamming(a, a) == 0, "identity");
        c.expect((ab == 0) == (a == b), "indiscernibles");
        c.expect(ab == ba, "symmetry");
        c.expect(ad <= ab + bd, "triangle");
    }
    return c.outcome();
}

Outcome monotone_invariance() {
    Rng rng(1004);
    Checker c;
    int identical = 0;
    long codes = 0, differing = 0;
    for (int i = 0; i < 20; ++i) {
        const auto img = testing::tie_free_image(16, 16, rng);
        PixelGrid cubed = img;
        for (auto& v : cubed.values()) v = v * v * v;
        const auto a = combined_descriptor(img), b = combined_descriptor(cubed);
        const bool same = a == b;
        identical += same;
        c.expect(same, "image " + std::to_string(i) + " histogram changed under v^3");
        for (int r : {2, 3, 4}) {
            for (int y = r; y < 16 - r; ++y) {
                for (int x = r; x < 16 - r; ++x) {
                    ++codes;
                    differing += lbp_code(img, x, y, LbpConfig{r, 8}) != lbp_code(cubed, x, y, LbpConfig{r, 8});
                }
            }
        }
    }
    c.note(std::to_string(identical) + "/20 LBP histograms identical, " + std::to_string(differing) + "/" +
           std::to_string(codes) + " codes differ");

    int hash_same = 0;
    for (int i = 0; i < 100; ++i) {
        const auto img = testing::random_image(24 + static_cast<int>(rng.below(40)), 24 + static_cast<int>(rng.below(40)), rng);
        const double a = rng.uniform(0.1, 1.0), b = rng.uniform(0.0, 1.0 - a);
        PixelGrid mapped = img;
        for (auto& v : mapped.values()) v = static_cast<float>(a * v + b);
        const bool same = average_hash(img) == average_hash(mapped);
        hash_same += same;
        c.expect(same, "hash changed under " + fmt("%.3f", a) + "v+" + fmt("%.3f", b));
    }
    c.note(std::to_string(hash_same) + "/100 hashes unchanged under affine maps");
    return c.outcome();
}

Outcome fold_laws() {
    Rng rng(1005);
    Checker c;
    for (int t = 0; t < 200; ++t) {
        const int k = 2 + static_cast<int>(rng.below(9));
        const std::size_t n = k + rng.below(500);
        const std::uint64_t seed = rng.next();
        const auto folds = kfold_partition(n, k, seed);
        std::vector<int> seen(n, 0);
        std::size_t lo = n, hi = 0;
        for (const auto& f : folds) {
            for (auto i : f) seen[i]++;
            lo = std::min(lo, f.size());
            hi = std::max(hi, f.size());
        }
        c.expect(static_cast<int>(folds.size()) == k, "fold count");
        c.expect(std::all_of(seen.begin(), seen.end(), [](int s) { return s == 1; }), "disjoint and exhaustive");
        c.expect(hi - lo <= 1, "sizes differ by more than one");

        std::vector<int> labels(n);
        const double p = rng.uniform(0.1, 0.9);
        for (auto& l : labels) l = rng.uniform() < p ? 1 : 0;
        const auto strat = kfold_partition(n, k, seed, &labels);
        std::map<int, double> total;
        for (int l : labels) total[l] += 1.0;
        std::vector<int> seen2(n, 0);
        for (const auto& f : strat) {
            std::map<int, double> in;
            for (auto i : f) {
                seen2[i]++;
                in[labels[i]] += 1.0;
            }
            for (const auto& [cls, cnt] : total) {
                c.expect(std::abs(in[cls] - cnt * f.size() / n) <= 1.0, "stratified class count off by more than one");
            }
        }
        c.expect(std::all_of(seen2.begin(), seen2.end(), [](int s) { return s == 1; }), "stratified partition");
    }
    return c.outcome();
}

GanTrainingSet random_set(int n, int size, Rng& rng) {
    GanTrainingSet s;
    for (int i = 0; i < n; ++i) {
        s.ids.push_back("img" + std::to_string(i));
        s.images.push_back(testing::random_image(size, size, rng));
    }
    return s;
}

Outcome gan_checks() {
    Checker c;
    const std::vector<double> half{0.5, 0.5, 0.5};
    const auto l = gan_losses(half, half);
    c.expect(std::abs(l.d_loss - 2 * std::log(2.0)) < 1e-6 && std::abs(l.g_loss - std::log(2.0)) < 1e-6,
             "losses at 0.5");

    Rng rng(1006);
    for (int t = 0; t < 20; ++t) {
        nn::Tensor a({4, 1, 8, 8}), b({4, 1, 8, 8});
        for (auto& v : a.data) v = rng.uniform(-1, 1);
        for (auto& v : b.data) v = rng.uniform(-1, 1);
        const double alpha = rng.uniform();
        const auto m = blend(a, b, alpha);
        double err = 0.0;
        for (std::size_t i = 0; i < m.size(); ++i) err = std::max(err, std::abs(m[i] - (a[i] + alpha * (b[i] - a[i]))));
        c.expect(err < 1e-12, "blend linearity");
    }

    GanConfig pg = GanConfig::desk();
    pg.arch = GanArch::Pggan;
    pg.pggan_base = 4;
    pg.image_size = 256;
    const auto stages = progressive_schedule(pg);
    std::vector<int> res;
    for (const auto& s : stages) res.push_back(s.resolution);
    c.expect(res == std::vector<int>{4, 8, 16, 32, 64, 128, 256}, "progressive schedule 4->256");

    const auto set = random_set(16, 8, rng);
    for (auto arch : {GanArch::Dcgan, GanArch::Pggan}) {
        GanConfig cfg = GanConfig::desk();
        cfg.model_id = "accept";
        cfg.arch = arch;
        cfg.image_size = 8;
        cfg.latent_dim = 4;
        cfg.batch_size = 4;
        cfg.epochs = 2;
        cfg.fmap_base = 64;
        cfg.fmap_max = 8;
        const auto a = train_gan(cfg, set, 21);
        const auto b = train_gan(cfg, set, 21);
        c.expect(!a.d_loss_trace.empty() && a.d_loss_trace == b.d_loss_trace && a.g_loss_trace == b.g_loss_trace,
                 to_string(arch) + " loss traces differ between same-seed runs");
        for (const auto& ckpt : a.checkpoints) {
            for (std::uint64_t seed : {1u, 2u, 3u}) {
                for (const auto& img : sample(ckpt, 8, {}, seed)) {
                    const auto v = img.values();
                    const auto [mn, mx] = std::minmax_element(v.begin(), v.end());
                    c.expect(*mn >= -1.0f && *mx <= 1.0f, ckpt.id() + " sample out of range");
                }
            }
        }
    }
    return c.outcome();
}

Outcome gradient_checks() {
    Rng rng(1007);
    Checker c;
    double worst = 0.0;
    auto check = [&](const std::string& what, const testing::GradReport& r) {
        worst = std::max(worst, r.max_rel_error);
        c.expect(r.checked > 0 && r.max_rel_error < 1e-4, what + " rel error " + fmt("%.3g", r.max_rel_error));
    };
    using testing::random_tensor;
    auto layer = [&](const std::string& what, nn::Module& m, std::vector<int> shape) {
        check(what, testing::grad_check(m, random_tensor(std::move(shape), rng), rng));
    };

    {
        nn::Conv2d m(2, 3, 3, 1, 1, rng);
        layer("conv2d", m, {3, 2, 6, 6});
    }
    {
        nn::Conv2d m(2, 3, 4, 2, 1, rng);
        layer("strided conv2d", m, {3, 2, 6, 6});
    }
    {
        nn::ConvTranspose2d m(3, 2, 4, 2, 1, rng);
        layer("conv_transpose2d", m, {3, 3, 3, 3});
    }
    {
        nn::Linear m(18, 4, rng);
        layer("linear", m, {3, 2, 3, 3});
    }
    {
        nn::BatchNorm m(3);
        layer("batchnorm", m, {3, 3, 2, 2});
    }
    {
        nn::ReLU m;
        layer("relu", m, {3, 2, 3, 3});
    }
    {
        nn::LeakyReLU m(0.2);
        layer("leaky_relu", m, {3, 2, 3, 3});
    }
    {
        nn::Tanh m;
        layer("tanh", m, {3, 6});
    }
    {
        nn::Sigmoid m;
        layer("sigmoid", m, {3, 6});
    }
    {
        nn::MaxPool2d m;
        layer("maxpool2d", m, {3, 2, 4, 4});
    }
    {
        nn::AvgPool2d m;
        layer("avgpool2d", m, {3, 2, 4, 4});
    }
    {
        nn::Upsample2d m;
        layer("upsample2d", m, {3, 2, 3, 3});
    }
    {
        nn::PixelNorm m;
        layer("pixelnorm", m, {3, 4, 2, 2});
    }
    {
        nn::MinibatchStdDev m;
        layer("minibatch_stddev", m, {3, 2, 3, 3});
    }
    {
        nn::Reshape m({2, 3});
        layer("reshape", m, {3, 6});
    }
    {
        CnnConfig cfg;
        cfg.block_convs = {2, 1};
        cfg.block_widths = {4, 6};
        cfg.fc_width = 8;
        CnnModel cnn(cfg, 1, 8, 8, 2, rng);
        check("cnn", testing::grad_check([&](const nn::Tensor& x) { return cnn.forward(x); },
                                         [&](const nn::Tensor& g) { return cnn.backward(g); }, cnn.parameters(),
                                         random_tensor({3, 1, 8, 8}, rng), rng));
        // Loss-level check through softmax cross-entropy.
        const auto x = random_tensor({3, 1, 8, 8}, rng);
        const std::vector<int> y{0, 1, 1};
        auto params = cnn.parameters();
        nn::zero_grad(params);
        const auto lg = nn::softmax_cross_entropy(cnn.forward(x), y);
        cnn.backward(lg.grad);
        double loss_worst = 0.0;
        for (auto* p : params) {
            for (std::size_t i = 0; i < std::min<std::size_t>(p->value.size(), 8); ++i) {
                const double v = p->value[i], h = 1e-5;
                p->value[i] = v + h;
                const double lp = nn::softmax_cross_entropy(cnn.forward(x), y).loss;
                p->value[i] = v - h;
                const double lm = nn::softmax_cross_entropy(cnn.forward(x), y).loss;
                p->value[i] = v;
                loss_worst = std::max(loss_worst, testing::rel_error(p->grad[i], (lp - lm) / (2 * h)));
            }
        }
        worst = std::max(worst, loss_worst);
        c.expect(loss_worst < 1e-4, "cnn cross-entropy rel error " + fmt("%.3g", loss_worst));
    }
    for (auto arch : {GanArch::Dcgan, GanArch::Pggan}) {
        GanConfig g = GanConfig::desk();
        g.arch = arch;
        g.image_size = 8;
        g.latent_dim = 5;
        g.fmap_base = 32;
        g.fmap_max = 4;
        const int stage = arch == GanArch::Pggan ? 1 : 0;
        const double alpha = arch == GanArch::Pggan ? 0.4 : 1.0;
        auto gen = make_generator(g, rng);
        check(to_string(arch) + " generator",
              testing::grad_check([&](const nn::Tensor& z) { return gen->forward(z, stage, alpha); },
                                  [&](const nn::Tensor& d) { return gen->backward(d); }, gen->parameters(),
                                  random_tensor({3, 5}, rng), rng, 12));
        auto dis = make_discriminator(g, rng);
        check(to_string(arch) + " discriminator",
              testing::grad_check([&](const nn::Tensor& x) { return dis->forward(x, stage, alpha); },
                                  [&](const nn::Tensor& d) { return dis->backward(d); }, dis->parameters(),
                                  random_tensor({3, 1, 8, 8}, rng), rng, 12));
    }
    c.note("worst relative error " + fmt("%.3g", worst));
    return c.outcome();
}

Outcome desk_tstr() {
    testing::TempDir dir("acceptance-desk");
    const auto cfg = preset_config("desk");
    Diagnostics diag;
    const auto t0 = std::chrono::steady_clock::now();
    const Report report = run_pipeline(cfg, dir.path(), diag);
    const double minutes = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / 60.0;

    Checker c;
    c.expect(minutes < 15.0, "pipeline took " + fmt("%.1f", minutes) + " min");
    std::set<std::string> kinds;
    const BenchmarkResult* knn = nullptr;
    std::map<std::string, const BenchmarkResult*> control;
    for (const auto& r : report.rows) {
        if (r.task == "texture") {
            kinds.insert(r.classifier);
            if (r.classifier == "knn") knn = &r;
        } else if (r.task.find("control") != std::string::npos) {
            control[r.classifier] = &r;
        }
    }
    c.expect(kinds == std::set<std::string>{"cnn", "knn", "svm", "random_forest"}, "not all four classifiers ran");
    c.expect(knn && knn->acc_real >= 0.9, "real-trained knn accuracy " + fmt("%.4f", knn ? knn->acc_real : -1));
    for (const std::string k : {"knn", "random_forest"}) {
        c.expect(control.count(k) && control[k]->relative_drop == 0.0, k + " control drop is not 0.00%");
    }
    c.expect(std::filesystem::exists(dir / "report.md"), "report.md missing");

    std::ostringstream os;
    os << fmt("%.1f", minutes) << " min";
    for (const auto& r : report.rows) {
        os << "; " << r.task << "/" << r.classifier << " " << fmt("%.3f", r.acc_real) << "->" << fmt("%.3f", r.acc_synth)
           << " (" << fmt("%.2f", r.relative_drop) << "%)";
    }
    os << "; " << diag.warnings().size() << " warning(s)";
    c.note(os.str());
    return c.outcome();
}

Outcome triage_efficacy() {
    Rng rng(1009);
    std::vector<PixelGrid> refs, anatomy, noise;
    for (int i = 0; i < 100; ++i) refs.push_back(toy::anatomy(64, rng));
    for (int i = 0; i < 200; ++i) anatomy.push_back(toy::anatomy(64, rng));
    for (int i = 0; i < 200; ++i) noise.push_back(toy::noise(64, rng));
    const auto set = ReferenceSet::from_images(refs, 64);
    const auto ka = filter_synthetic(anatomy, set);
    const auto kn = filter_synthetic(noise, set);
    const double kept = static_cast<double>(ka.kept.size()) / anatomy.size();
    const double rejected = static_cast<double>(kn.rejected.size()) / noise.size();
    Checker c;
    c.expect(rejected >= 0.95, "noise rejected " + fmt("%.3f", rejected));
    c.expect(kept >= 0.95, "in-distribution kept " + fmt("%.3f", kept));
    c.note("noise rejected " + fmt("%.1f%%", 100 * rejected) + ", in-distribution kept " + fmt("%.1f%%", 100 * kept));
    return c.outcome();
}

struct Criterion {
    int id;
    const char* name;
    double budget_s;  // 0 = no runtime bound
    std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
    const std::vector<Criterion> all{
        {1, "relative drop replay", 1.0, relative_drop_replay},
        {2, "LBP oracle equivalence", 30.0, lbp_oracle},
        {3, "hash oracle and Hamming metric", 30.0, hash_oracle_and_metric},
        {4, "monotone-transform invariance", 0.0, monotone_invariance},
        {5, "fold laws", 0.0, fold_laws},
        {6, "GAN unit checks", 0.0, gan_checks},
        {7, "gradient check", 120.0, gradient_checks},
        {8, "desk-scale TSTR", 0.0, desk_tstr},
        {9, "triage efficacy", 0.0, triage_efficacy},
    };
    std::set<int> wanted;
    for (int i = 1; i < argc; ++i) wanted.insert(std::atoi(argv[i]));

    int failed = 0;
    for (const auto& cr : all) {
        if (!wanted.empty() && !wanted.count(cr.id)) continue;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = cr.run();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (cr.budget_s > 0 && s >= cr.budget_s) {
            o.pass = false;
            o.detail += "; over the " + fmt("%.0f", cr.budget_s) + " s budget";
        }
        std::printf("criterion %d %s: %s (%.2f s) %s\n", cr.id, o.pass ? "PASS" : "FAIL", cr.name, s, o.detail.c_str());
        std::fflush(stdout);
        failed += !o.pass;
    }
    return failed == 0 ? 0 : 1;
}
