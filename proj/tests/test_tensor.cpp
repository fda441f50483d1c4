#include <doctest.h>

#include <cmath>

#include "retc/rng.hpp"
#include "retc/tensor.hpp"

using namespace retc;

TEST_SUITE_BEGIN("tensor");

TEST_CASE("matmul identity and scalar") {
    const Tensor eye({2, 2}, {1, 0, 0, 1});
    const Tensor b({2, 2}, {3, 4, 5, 6});
    const Tensor out = matmul(eye, b);
    for (std::size_t i = 0; i < 4; ++i) CHECK(out.data[i] == b.data[i]);

    const Tensor s = matmul(Tensor({1, 1}, {2}), Tensor({1, 1}, {3}));
    CHECK(s.data[0] == doctest::Approx(6.0));
}

TEST_CASE("matmul matches triple-loop oracle") {
    Rng rng = make_rng(1, "t.matmul");
    const Tensor a = Tensor::randn({4, 5}, rng);
    const Tensor b = Tensor::randn({5, 3}, rng);
    const Tensor out = matmul(a, b);
    for (std::int64_t i = 0; i < 4; ++i) {
        for (std::int64_t j = 0; j < 3; ++j) {
            Real acc = 0.0;
            for (std::int64_t k = 0; k < 5; ++k) acc += a.at(i, k) * b.at(k, j);
            CHECK(std::abs(out.at(i, j) - acc) < 1e-12);
        }
    }
}

TEST_CASE("matmul shape mismatch raises dimension error") {
    const Tensor a({2, 3});
    const Tensor b({2, 3});
    CHECK_THROWS_AS(matmul(a, b), Error);
}

TEST_CASE("matmul associativity on random triples") {
    Rng rng = make_rng(2, "t.assoc");
    for (int it = 0; it < 10; ++it) {
        const Tensor a = Tensor::randn({3, 4}, rng);
        const Tensor b = Tensor::randn({4, 5}, rng);
        const Tensor c = Tensor::randn({5, 2}, rng);
        const Tensor lhs = matmul(matmul(a, b), c);
        const Tensor rhs = matmul(a, matmul(b, c));
        for (std::size_t i = 0; i < lhs.data.size(); ++i)
            CHECK(std::abs(lhs.data[i] - rhs.data[i]) < 1e-9);
    }
}

TEST_CASE("softmax basics") {
    const Tensor sym = softmax(Tensor({1, 2}, {0, 0}));
    CHECK(sym.data[0] == doctest::Approx(0.5));
    CHECK(sym.data[1] == doctest::Approx(0.5));

    const Tensor big = softmax(Tensor({1, 2}, {1000, 1000}));  // no overflow
    CHECK(big.data[0] == doctest::Approx(0.5));

    // exp-normalize oracle
    const Tensor x({1, 3}, {1, 2, 3});
    const Tensor y = softmax(x);
    Real z = 0.0;
    for (Real v : x.data) z += std::exp(v);
    for (std::size_t i = 0; i < 3; ++i)
        CHECK(std::abs(y.data[i] - std::exp(x.data[i]) / z) < 1e-12);
}

TEST_CASE("softmax rows sum to one and shift invariance") {
    Rng rng = make_rng(3, "t.softmax");
    for (int it = 0; it < 20; ++it) {
        const Tensor x = Tensor::randn({4, 7}, rng, 10.0);
        const Tensor y = softmax(x);
        for (std::int64_t r = 0; r < 4; ++r) {
            Real s = 0.0;
            for (std::int64_t c = 0; c < 7; ++c) {
                CHECK(y.at(r, c) >= 0.0);
                s += y.at(r, c);
            }
            CHECK(std::abs(s - 1.0) < 1e-9);
        }
        Tensor shifted = x;
        for (auto& v : shifted.data) v += 123.0;
        const Tensor y2 = softmax(shifted);
        for (std::size_t i = 0; i < y.data.size(); ++i)
            CHECK(std::abs(y.data[i] - y2.data[i]) < 1e-12);
    }
}

TEST_CASE("layer_norm zero-variance and identity cases") {
    const Tensor gamma = Tensor::full({4}, 1.0);
    const Tensor beta({4});
    const Tensor c = layer_norm(Tensor({1, 4}, {5, 5, 5, 5}), gamma, beta, 1e-6);
    for (Real v : c.data) CHECK(std::abs(v) < 1e-3);

    const Tensor g2 = Tensor::full({2}, 1.0);
    const Tensor b2({2});
    const Tensor u = layer_norm(Tensor({1, 2}, {1, -1}), g2, b2, 1e-6);
    CHECK(u.data[0] == doctest::Approx(1.0).epsilon(1e-3));
    CHECK(u.data[1] == doctest::Approx(-1.0).epsilon(1e-3));
}

TEST_CASE("layer_norm matches two-pass oracle") {
    Rng rng = make_rng(4, "t.ln");
    const std::int64_t d = 16;
    const Tensor x = Tensor::randn({3, d}, rng, 2.0);
    const Tensor gamma = Tensor::full({d}, 1.0);
    const Tensor beta({d});
    const Tensor y = layer_norm(x, gamma, beta, 1e-6);
    for (std::int64_t r = 0; r < 3; ++r) {
        Real mean = 0.0, var = 0.0;
        for (std::int64_t c = 0; c < d; ++c) mean += y.at(r, c);
        mean /= static_cast<Real>(d);
        for (std::int64_t c = 0; c < d; ++c) var += (y.at(r, c) - mean) * (y.at(r, c) - mean);
        var /= static_cast<Real>(d);
        CHECK(std::abs(mean) < 1e-6);
        CHECK(std::abs(var - 1.0) < 1e-4);
    }
}

TEST_CASE("group_norm with one group reduces to layer_norm") {
    Rng rng = make_rng(5, "t.gn");
    const Tensor x = Tensor::randn({4, 8}, rng);
    const Tensor gamma = Tensor::full({8}, 1.0);
    const Tensor beta({8});
    const Tensor a = group_norm(x, 1, gamma, beta, 1e-6);
    const Tensor b = layer_norm(x, gamma, beta, 1e-6);
    for (std::size_t i = 0; i < a.data.size(); ++i) CHECK(std::abs(a.data[i] - b.data[i]) < 1e-9);
}

TEST_CASE("group_norm constant input and per-group oracle") {
    const Tensor gamma = Tensor::full({4}, 1.0);
    const Tensor beta({4});
    const Tensor z = group_norm(Tensor::full({2, 4}, 3.0), 2, gamma, beta, 1e-6);
    for (Real v : z.data) CHECK(std::abs(v) < 1e-3);

    Rng rng = make_rng(6, "t.gn2");
    const Tensor x = Tensor::randn({3, 4}, rng);  // h=2 groups of d_head=2
    const Tensor y = group_norm(x, 2, gamma, beta, 1e-6);
    for (std::int64_t r = 0; r < 3; ++r) {
        for (std::int64_t g = 0; g < 2; ++g) {
            const Real m = (x.at(r, g * 2) + x.at(r, g * 2 + 1)) / 2.0;
            Real var = 0.0;
            for (std::int64_t j = 0; j < 2; ++j)
                var += (x.at(r, g * 2 + j) - m) * (x.at(r, g * 2 + j) - m);
            var /= 2.0;
            for (std::int64_t j = 0; j < 2; ++j) {
                const Real expect = (x.at(r, g * 2 + j) - m) / std::sqrt(var + 1e-6);
                CHECK(std::abs(y.at(r, g * 2 + j) - expect) < 1e-9);
            }
        }
    }
}

TEST_CASE("group_norm divisibility error") {
    const Tensor x({2, 6});
    const Tensor gamma = Tensor::full({6}, 1.0);
    CHECK_THROWS_AS(group_norm(x, 4, gamma, gamma, 1e-6), Error);
}

TEST_CASE("conv2d 1x1 identity kernel") {
    Rng rng = make_rng(7, "t.conv");
    const Tensor x = Tensor::randn({1, 5, 5}, rng);
    Tensor k({1, 1, 1, 1});
    k.data[0] = 1.0;
    const Tensor y = conv2d(x, k, Tensor({1}), 1, 0);
    for (std::size_t i = 0; i < x.data.size(); ++i) CHECK(y.data[i] == doctest::Approx(x.data[i]));
}

TEST_CASE("conv2d averaging kernel keeps constants in the interior") {
    const Tensor x = Tensor::full({1, 6, 6}, 0.7);
    Tensor k = Tensor::full({1, 1, 3, 3}, 1.0 / 9.0);
    const Tensor y = conv2d(x, k, Tensor({1}), 1, 1);
    CHECK(y.shape[1] == 6);
    for (std::int64_t i = 1; i < 5; ++i)
        for (std::int64_t j = 1; j < 5; ++j)
            CHECK(y.data[static_cast<std::size_t>(i * 6 + j)] == doctest::Approx(0.7));
}

TEST_CASE("conv2d matches naive six-loop oracle") {
    Rng rng = make_rng(8, "t.conv2");
    const std::int64_t cin = 2, cout = 3, h = 5, w = 5, kh = 3, kw = 3;
    const Tensor x = Tensor::randn({cin, h, w}, rng);
    const Tensor k = Tensor::randn({cout, cin, kh, kw}, rng);
    const Tensor bias = Tensor::randn({cout}, rng);

    for (std::int64_t stride : {1, 2}) {
        for (std::int64_t pad : {0, 1}) {
            const Tensor y = conv2d(x, k, bias, stride, pad);
            const std::int64_t hout = (h + 2 * pad - kh) / stride + 1;
            const std::int64_t wout = (w + 2 * pad - kw) / stride + 1;
            REQUIRE(y.shape == std::vector<std::int64_t>({cout, hout, wout}));
            for (std::int64_t co = 0; co < cout; ++co)
                for (std::int64_t oy = 0; oy < hout; ++oy)
                    for (std::int64_t ox = 0; ox < wout; ++ox) {
                        Real acc = bias.data[static_cast<std::size_t>(co)];
                        for (std::int64_t ci = 0; ci < cin; ++ci)
                            for (std::int64_t ky = 0; ky < kh; ++ky)
                                for (std::int64_t kx = 0; kx < kw; ++kx) {
                                    const std::int64_t iy = oy * stride + ky - pad;
                                    const std::int64_t ix = ox * stride + kx - pad;
                                    if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                                    acc += x.data[static_cast<std::size_t>((ci * h + iy) * w + ix)] *
                                           k.data[static_cast<std::size_t>(((co * cin + ci) * kh + ky) * kw + kx)];
                                }
                        CHECK(std::abs(y.data[static_cast<std::size_t>((co * hout + oy) * wout + ox)] -
                                       acc) < 1e-10);
                    }
        }
    }
}

TEST_CASE("non-finite results raise a numeric error when checks are on") {
    REQUIRE(finite_checks_enabled());
    const Tensor x({1, 1}, {1e308});
    CHECK_THROWS_AS(scale(x, 1e10), Error);
    const Tensor z({1, 1}, {0.0});
    CHECK_THROWS_AS(log_val(z), Error);
}

TEST_CASE("rotate_rows is an isometry and inverts") {
    Rng rng = make_rng(9, "t.rot");
    const Tensor x = Tensor::randn({5, 6}, rng);
    const auto theta = std::vector<Real>{0.3, 0.01, 1.2};
    const Tensor y = rotate_rows(x, theta, 10);
    const Tensor back = rotate_rows_inverse(y, theta, 10);
    for (std::size_t i = 0; i < x.data.size(); ++i) CHECK(std::abs(x.data[i] - back.data[i]) < 1e-12);
    for (std::int64_t r = 0; r < 5; ++r) {
        Real n1 = 0.0, n2 = 0.0;
        for (std::int64_t c = 0; c < 6; ++c) {
            n1 += x.at(r, c) * x.at(r, c);
            n2 += y.at(r, c) * y.at(r, c);
        }
        CHECK(std::abs(n1 - n2) < 1e-10);
    }
}

TEST_SUITE_END();
