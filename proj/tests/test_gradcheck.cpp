#include <catch_amalgamated.hpp>

#include "sal/model.hpp"
#include "sal/nn.hpp"
#include "support/gradcheck_cases.hpp"

using namespace sal;

// Analytic gradients against central finite differences (double precision,
// step 1e-5); tie-adjacent instances are resampled inside each case.

TEST_CASE("alignment loss gradients", "[gradcheck]") {
    RngStream rng(101);
    for (int i = 0; i < 6; ++i) CHECK(test::gradcheck_la(rng) < 1e-4);
}

TEST_CASE("windowed alignment gradients through the embedding head", "[gradcheck]") {
    RngStream rng(103);
    for (int i = 0; i < 6; ++i) CHECK(test::gradcheck_wla(rng) < 1e-4);
}

TEST_CASE("global positional loss gradients", "[gradcheck]") {
    RngStream rng(107);
    for (int i = 0; i < 6; ++i) CHECK(test::gradcheck_gp(rng) < 1e-4);
}

TEST_CASE("overall loss gradients", "[gradcheck]") {
    RngStream rng(109);
    for (int i = 0; i < 6; ++i) CHECK(test::gradcheck_overall(rng) < 1e-4);
}

// The network layers feed the same optimizer; check their backward passes the
// same way (double precision, composite conv-norm-relu-pool-linear paths).
TEST_CASE("network layer gradients", "[gradcheck]") {
    RngStream rng(113);

    SECTION("conv2d") {
        const int cin = 2, cout = 3, h = 4, w = 4, k = 3;
        Tensor<double> x({cin, h, w}), weight({cout, cin * k * k}), bias({cout});
        for (long long i = 0; i < x.numel(); ++i) x[i] = rng.normal();
        for (long long i = 0; i < weight.numel(); ++i) weight[i] = rng.normal(0.0, 0.3);
        for (long long i = 0; i < bias.numel(); ++i) bias[i] = 0.1 * rng.normal();
        // scalar objective: weighted sum of outputs
        Tensor<double> probe({cout, h, w});
        for (long long i = 0; i < probe.numel(); ++i) probe[i] = rng.normal();

        nn::Conv2dCache<double> cache;
        nn::conv2d_forward(x, weight, bias, k, 1, &cache);
        Tensor<double> dweight({cout, cin * k * k}), dbias({cout});
        Tensor<double> dx = nn::conv2d_backward(probe, cache, weight, k, 1, dweight, dbias);

        std::vector<double*> coords;
        std::vector<double> analytic;
        test::collect(x, coords);
        test::collect(weight, coords);
        test::collect(bias, coords);
        test::collect_values(dx, analytic);
        test::collect_values(dweight, analytic);
        test::collect_values(dbias, analytic);
        auto eval = [&] {
            Tensor<double> y = nn::conv2d_forward(x, weight, bias, k, 1,
                                                  static_cast<nn::Conv2dCache<double>*>(nullptr));
            double s = 0.0;
            for (long long i = 0; i < y.numel(); ++i) s += y[i] * probe[i];
            return s;
        };
        CHECK(test::fd_relative_error(coords, analytic, eval) < 1e-6);
    }

    SECTION("instance norm") {
        const int c = 3, h = 4, w = 4;
        Tensor<double> x({c, h, w}), gamma({c}), beta({c});
        for (long long i = 0; i < x.numel(); ++i) x[i] = rng.normal();
        for (int a = 0; a < c; ++a) {
            gamma.at(a) = 0.5 + rng.uniform(0.0, 1.0);
            beta.at(a) = rng.normal(0.0, 0.2);
        }
        Tensor<double> probe({c, h, w});
        for (long long i = 0; i < probe.numel(); ++i) probe[i] = rng.normal();

        nn::InstNormCache<double> cache;
        nn::instnorm_forward(x, gamma, beta, &cache);
        Tensor<double> dgamma({c}), dbeta({c});
        Tensor<double> dx = nn::instnorm_backward(probe, cache, gamma, dgamma, dbeta);

        std::vector<double*> coords;
        std::vector<double> analytic;
        test::collect(x, coords);
        test::collect(gamma, coords);
        test::collect(beta, coords);
        test::collect_values(dx, analytic);
        test::collect_values(dgamma, analytic);
        test::collect_values(dbeta, analytic);
        auto eval = [&] {
            Tensor<double> y = nn::instnorm_forward(x, gamma, beta,
                                                    static_cast<nn::InstNormCache<double>*>(nullptr));
            double s = 0.0;
            for (long long i = 0; i < y.numel(); ++i) s += y[i] * probe[i];
            return s;
        };
        CHECK(test::fd_relative_error(coords, analytic, eval) < 1e-6);
    }

    SECTION("segmentation loss") {
        const int K = 3, h = 4, w = 4;
        Tensor<double> logits({K, h, w});
        for (long long i = 0; i < logits.numel(); ++i) logits[i] = rng.normal();
        Tensor<std::int32_t> target({h, w});
        for (long long i = 0; i < target.numel(); ++i)
            target[i] = static_cast<std::int32_t>(rng.randint(0, K - 1));

        nn::SegLossCache<double> cache;
        nn::seg_loss_forward(logits, target, &cache);
        Tensor<double> dlogits = nn::seg_loss_backward(target, cache, h, w);

        std::vector<double*> coords;
        std::vector<double> analytic;
        test::collect(logits, coords);
        test::collect_values(dlogits, analytic);
        auto eval = [&] {
            return static_cast<double>(nn::seg_loss_forward(logits, target,
                                                            static_cast<nn::SegLossCache<double>*>(nullptr))
                                           .total);
        };
        CHECK(test::fd_relative_error(coords, analytic, eval) < 1e-6);
    }

    SECTION("full segmentation model") {
        ModelConfig mc;
        mc.base_width = 2;
        mc.scales = 3;
        SegmentationModel<double> model = SegmentationModel<double>::build(mc, 3, 99);
        const int h = 8, w = 8;
        Tensor<double> x({1, h, w});
        for (long long i = 0; i < x.numel(); ++i) x[i] = rng.normal();
        Tensor<std::int32_t> target({h, w});
        for (long long i = 0; i < target.numel(); ++i)
            target[i] = static_cast<std::int32_t>(rng.randint(0, 2));

        typename SegmentationModel<double>::Cache cache;
        Tensor<double> logits = model.forward(x, &cache);
        nn::SegLossCache<double> lcache;
        nn::seg_loss_forward(logits, target, &lcache);
        Tensor<double> dlogits = nn::seg_loss_backward(target, lcache, h, w);
        ParamStore<double>::Arena arena = model.store.make_arena();
        model.backward(dlogits, cache, arena);

        // check a sample of parameters from every part of the network
        std::vector<double*> coords;
        std::vector<double> analytic;
        RngStream pick(7);
        for (int id = 0; id < model.store.size(); ++id) {
            Tensor<double>& value = model.store[id].value;
            const long long take = std::min<long long>(4, value.numel());
            for (long long t = 0; t < take; ++t) {
                const long long idx = pick.randint(0, value.numel() - 1);
                coords.push_back(&value[idx]);
                analytic.push_back(arena[static_cast<std::size_t>(id)][idx]);
            }
        }
        auto eval = [&] {
            Tensor<double> y = model.forward(x, nullptr);
            return static_cast<double>(
                nn::seg_loss_forward(y, target, static_cast<nn::SegLossCache<double>*>(nullptr))
                    .total);
        };
        CHECK(test::fd_relative_error(coords, analytic, eval, 1e-5) < 1e-4);
    }
}
