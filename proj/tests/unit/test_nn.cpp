#include <doctest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "subbench/error.hpp"
#include "subbench/gan.hpp"
#include "subbench/nn.hpp"

using namespace subbench;
using namespace subbench::nn;
using testing::grad_check;
using testing::random_tensor;

namespace {

constexpr double kTol = 1e-4;

void expect_gradients(Module& m, const Tensor& x, Rng& rng) {
    const auto rep = grad_check(m, x, rng);
    CAPTURE(m.name());
    CAPTURE(rep.worst);
    CHECK(rep.checked > 0);
    CHECK(rep.max_rel_error < kTol);
}

}  // namespace

TEST_SUITE("nn") {
    TEST_CASE("tensor basics") {
        Tensor t({2, 3, 4});
        CHECK(t.size() == 24);
        CHECK(t.stride0() == 12);
        CHECK(t.shape_string() == "(2,3,4)");
        CHECK_THROWS(Tensor({2, 2}, std::vector<double>(3)));
    }

    TEST_CASE("conv output sizes") {
        Rng rng(1);
        Conv2d conv(2, 3, 4, 2, 1, rng);
        CHECK(conv.forward(Tensor({1, 2, 8, 8})).shape == std::vector<int>{1, 3, 4, 4});
        ConvTranspose2d up(3, 2, 4, 2, 1, rng);
        CHECK(up.forward(Tensor({1, 3, 4, 4})).shape == std::vector<int>{1, 2, 8, 8});
        CHECK_THROWS_AS(conv.forward(Tensor({1, 3, 8, 8})), DataError);
    }

    TEST_CASE("transposed conv is the adjoint of conv") {
        // <conv(x), y> == <x, convT(y)> with shared weights and zero bias.
        Rng rng(2);
        Conv2d conv(2, 3, 3, 2, 1, rng);
        ConvTranspose2d convt(3, 2, 3, 2, 1, rng);
        auto cp = parameters_of(conv);
        auto tp = parameters_of(convt);
        // conv weight (out=3, in=2, k, k); convT weight (in=3, out=2, k, k): same layout.
        tp[0]->value = cp[0]->value;
        for (auto& v : cp[1]->value.data) v = 0.0;
        for (auto& v : tp[1]->value.data) v = 0.0;
        const Tensor x = random_tensor({2, 2, 7, 7}, rng);
        const Tensor y = random_tensor({2, 3, 4, 4}, rng);
        const Tensor cx = conv.forward(x);
        const Tensor ty = convt.forward(y);
        REQUIRE(cx.same_shape(y));
        // convT maps 4 -> 7 with these settings: (4 - 1) * 2 - 2 + 3 = 7.
        REQUIRE(ty.same_shape(x));
        double lhs = 0.0, rhs = 0.0;
        for (std::size_t i = 0; i < y.size(); ++i) lhs += cx[i] * y[i];
        for (std::size_t i = 0; i < x.size(); ++i) rhs += x[i] * ty[i];
        CHECK(lhs == doctest::Approx(rhs).epsilon(1e-10));
    }

    TEST_CASE("layer gradients match finite differences") {
        Rng rng(3);
        SUBCASE("conv2d") {
            Conv2d m(2, 3, 3, 1, 1, rng);
            expect_gradients(m, random_tensor({3, 2, 5, 5}, rng), rng);
            Conv2d s(2, 2, 4, 2, 1, rng);
            expect_gradients(s, random_tensor({3, 2, 6, 6}, rng), rng);
        }
        SUBCASE("conv_transpose2d") {
            ConvTranspose2d m(3, 2, 4, 2, 1, rng);
            expect_gradients(m, random_tensor({3, 3, 3, 3}, rng), rng);
        }
        SUBCASE("linear") {
            Linear m(12, 5, rng);
            expect_gradients(m, random_tensor({3, 3, 2, 2}, rng), rng);
        }
        SUBCASE("batchnorm 4d") {
            BatchNorm m(3);
            auto p = parameters_of(m);
            for (auto& v : p[0]->value.data) v = rng.uniform(0.5, 1.5);
            for (auto& v : p[1]->value.data) v = rng.normal();
            expect_gradients(m, random_tensor({3, 3, 2, 2}, rng), rng);
        }
        SUBCASE("batchnorm 2d") {
            BatchNorm m(4);
            expect_gradients(m, random_tensor({3, 4}, rng), rng);
        }
        SUBCASE("relu") {
            ReLU m;
            expect_gradients(m, random_tensor({3, 2, 3, 3}, rng), rng);
        }
        SUBCASE("leaky_relu") {
            LeakyReLU m(0.2);
            expect_gradients(m, random_tensor({3, 2, 3, 3}, rng), rng);
        }
        SUBCASE("tanh") {
            Tanh m;
            expect_gradients(m, random_tensor({3, 7}, rng), rng);
        }
        SUBCASE("sigmoid") {
            Sigmoid m;
            expect_gradients(m, random_tensor({3, 7}, rng), rng);
        }
        SUBCASE("maxpool2d") {
            MaxPool2d m;
            expect_gradients(m, random_tensor({3, 2, 4, 6}, rng), rng);
        }
        SUBCASE("avgpool2d") {
            AvgPool2d m;
            expect_gradients(m, random_tensor({3, 2, 4, 4}, rng), rng);
        }
        SUBCASE("upsample2d") {
            Upsample2d m;
            expect_gradients(m, random_tensor({3, 2, 3, 3}, rng), rng);
        }
        SUBCASE("pixelnorm") {
            PixelNorm m;
            expect_gradients(m, random_tensor({3, 4, 2, 2}, rng), rng);
            PixelNorm flat;
            expect_gradients(flat, random_tensor({3, 6}, rng), rng);
        }
        SUBCASE("minibatch_stddev") {
            MinibatchStdDev m;
            expect_gradients(m, random_tensor({3, 2, 3, 3}, rng), rng);
        }
        SUBCASE("reshape") {
            Reshape m({2, 6});
            expect_gradients(m, random_tensor({3, 12}, rng), rng);
        }
        SUBCASE("sequential") {
            Sequential m;
            m.emplace<Conv2d>(1, 4, 3, 1, 1, rng);
            m.emplace<BatchNorm>(4);
            m.emplace<LeakyReLU>(0.2);
            m.emplace<MaxPool2d>();
            m.emplace<Linear>(16, 2, rng);
            expect_gradients(m, random_tensor({3, 1, 4, 4}, rng), rng);
        }
    }

    TEST_CASE("gan networks match finite differences") {
        Rng rng(4);
        for (auto arch : {GanArch::Dcgan, GanArch::Pggan}) {
            GanConfig c = GanConfig::desk();
            c.arch = arch;
            c.image_size = 8;
            c.latent_dim = 5;
            c.fmap_base = 32;
            c.fmap_max = 4;
            c.conditional = true;
            c.label_cardinality = 2;
            const int stages = arch == GanArch::Pggan ? 2 : 1;
            for (int stage = 0; stage < stages; ++stage) {
                for (double alpha : {1.0, 0.3}) {
                    if (stage == 0 && alpha != 1.0) continue;
                    CAPTURE(to_string(arch));
                    CAPTURE(stage);
                    CAPTURE(alpha);
                    auto g = make_generator(c, rng);
                    const auto rg = grad_check([&](const Tensor& z) { return g->forward(z, stage, alpha); },
                                               [&](const Tensor& d) { return g->backward(d); }, g->parameters(),
                                               random_tensor({3, 7}, rng), rng, 12);
                    CAPTURE(rg.worst);
                    CHECK(rg.max_rel_error < kTol);
                    const int res = arch == GanArch::Pggan ? 4 << stage : 8;
                    auto d = make_discriminator(c, rng);
                    const auto rd = grad_check([&](const Tensor& x) { return d->forward(x, stage, alpha); },
                                               [&](const Tensor& gr) { return d->backward(gr); }, d->parameters(),
                                               random_tensor({3, 3, res, res}, rng), rng, 12);
                    CAPTURE(rd.worst);
                    CHECK(rd.max_rel_error < kTol);
                }
            }
        }
    }

    TEST_CASE("batchnorm eval mode uses running statistics") {
        BatchNorm bn(2, 1.0);  // momentum 1: running stats equal the last batch
        Rng rng(5);
        const Tensor x = random_tensor({6, 2, 3, 3}, rng, 2.0);
        const Tensor train_out = bn.forward(x);
        bn.set_training(false);
        const Tensor eval_out = bn.forward(x);
        // Running variance is unbiased, the batch variance biased: outputs are
        // close but not identical.
        for (std::size_t i = 0; i < x.size(); ++i) CHECK(eval_out[i] == doctest::Approx(train_out[i]).epsilon(0.05));
    }

    TEST_CASE("softmax cross entropy") {
        const Tensor logits({2, 3}, {1.0, 2.0, 3.0, 0.0, 0.0, 0.0});
        const auto p = softmax(logits);
        double s0 = 0.0;
        for (int j = 0; j < 3; ++j) s0 += p[j];
        CHECK(s0 == doctest::Approx(1.0));
        CHECK(p[3] == doctest::Approx(1.0 / 3.0));
        const auto lg = softmax_cross_entropy(logits, {2, 0});
        const double expected = (-std::log(p[2]) - std::log(p[3])) / 2.0;
        CHECK(lg.loss == doctest::Approx(expected));
        CHECK(lg.grad[2] == doctest::Approx((p[2] - 1.0) / 2.0));
        CHECK(lg.grad[4] == doctest::Approx(p[4] / 2.0));
        CHECK_THROWS_AS(softmax_cross_entropy(logits, {0}), DataError);
    }

    TEST_CASE("adam minimises a quadratic") {
        Parameter p{"w", Tensor({2}, {3.0, -2.0}), Tensor({2}), true};
        Adam opt({&p}, {0.1, 0.9, 0.999, 1e-8});
        for (int i = 0; i < 500; ++i) {
            opt.zero_grad();
            p.grad[0] = 2.0 * (p.value[0] - 1.0);
            p.grad[1] = 2.0 * (p.value[1] + 0.5);
            opt.step();
        }
        CHECK(p.value[0] == doctest::Approx(1.0).epsilon(1e-3));
        CHECK(p.value[1] == doctest::Approx(-0.5).epsilon(1e-3));
    }

    TEST_CASE("parameter export and import") {
        Rng rng(6);
        Sequential a, b;
        a.emplace<Linear>(3, 2, rng);
        a.emplace<BatchNorm>(2);
        b.emplace<Linear>(3, 2, rng);
        b.emplace<BatchNorm>(2);
        std::vector<NamedArray> arrays;
        export_parameters("M", parameters_of(a), arrays);
        Container c;
        c.arrays = arrays;
        import_parameters("M", parameters_of(b), c);
        const Tensor x = random_tensor({4, 3}, rng);
        a.set_training(false);
        b.set_training(false);
        const Tensor ya = a.forward(x), yb = b.forward(x);
        for (std::size_t i = 0; i < ya.size(); ++i) CHECK(ya[i] == doctest::Approx(yb[i]).epsilon(1e-6));
        CHECK_THROWS(import_parameters("X", parameters_of(b), c));
    }
}
