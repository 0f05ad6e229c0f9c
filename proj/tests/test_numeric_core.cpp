#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "elastron/autodiff.hpp"
#include "elastron/optim.hpp"
#include "elastron/rng.hpp"
#include "test_helpers.hpp"

using namespace elastron;
using namespace elastron::testing;

namespace {
struct FiniteChecksOn {
    FiniteChecksOn() { set_finite_checks(true); }
    ~FiniteChecksOn() { set_finite_checks(false); }
};
}  // namespace

TEST_CASE("matmul identity and hand arithmetic") {
    FiniteChecksOn guard;
    Value a = constant(Tensor::matrix(2, 2, {1, 0, 0, 1}));
    Value b = constant(Tensor::matrix(2, 2, {5, 6, 7, 8}));
    Value c = matmul(a, b);
    CHECK(c->value.data == std::vector<double>{5, 6, 7, 8});

    Value d = matmul(constant(Tensor::matrix(1, 2, {1, 2})), constant(Tensor::matrix(2, 1, {3, 4})));
    CHECK(d->value.item() == doctest::Approx(11.0).epsilon(1e-15));
}

TEST_CASE("matmul rejects mismatched inner dimensions") {
    Value a = constant(Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6}));
    Value b = constant(Tensor::matrix(2, 2, {1, 2, 3, 4}));
    CHECK_THROWS_AS(matmul(a, b), TensorError);
}

TEST_CASE("matmul gradient matches central finite differences") {
    Rng rng(11);
    Value a = parameter(random_tensor({3, 4}, rng));
    Value b = parameter(random_tensor({4, 2}, rng));
    auto res = gradient_check([&] { return sum_all(matmul(a, b)); }, {a, b});
    CHECK(res.max_rel_error < 1e-6);
}

TEST_CASE("linear gradient matches central finite differences") {
    Rng rng(12);
    Value x = parameter(random_tensor({3, 5}, rng));
    Value w = parameter(random_tensor({4, 5}, rng));
    auto res = gradient_check([&] { return mean_all(mul(linear(x, w), linear(x, w))); }, {x, w});
    CHECK(res.max_rel_error < 1e-6);
}

TEST_CASE("softmax basics") {
    FiniteChecksOn guard;
    Value flat = softmax_rows(constant(Tensor::row({0, 0})));
    CHECK(flat->value.data[0] == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(flat->value.data[1] == doctest::Approx(0.5).epsilon(1e-15));

    Value big = softmax_rows(constant(Tensor::row({1000, 1000})));
    CHECK(big->value.data[0] == doctest::Approx(0.5).epsilon(1e-15));

    // Independent high-precision evaluation of softmax([1,2,3]).
    Value soft = softmax_rows(constant(Tensor::row({1, 2, 3})));
    long double z = expl(1.0L - 3.0L) + expl(2.0L - 3.0L) + expl(0.0L);
    for (int j = 0; j < 3; ++j) {
        const long double expect = expl(static_cast<long double>(1 + j) - 3.0L) / z;
        CHECK(std::fabs(soft->value.data[static_cast<std::size_t>(j)] - static_cast<double>(expect)) < 1e-12);
    }
}

TEST_CASE("softmax rows sum to one within 1e-12") {
    Rng rng(13);
    for (int rep = 0; rep < 20; ++rep) {
        Tensor t = random_tensor({4, 7}, rng, 5.0);
        Value s = softmax_rows(constant(t));
        for (int i = 0; i < 4; ++i) {
            double sum = 0;
            for (int j = 0; j < 7; ++j) sum += s->value.at(i, j);
            CHECK(std::fabs(sum - 1.0) < 1e-12);
        }
    }
}

TEST_CASE("softmax gradient") {
    Rng rng(14);
    Value x = parameter(random_tensor({3, 5}, rng));
    Value probe = constant(random_tensor({3, 5}, rng));
    auto res = gradient_check([&] { return sum_all(mul(softmax_rows(x), probe)); }, {x});
    CHECK(res.max_rel_error < 1e-6);
}

TEST_CASE("layer_norm constant row maps to bias") {
    Value gain = constant(Tensor::full({1, 4}, 1.0));
    Value bias = constant(Tensor::zeros({1, 4}));
    Value out = layer_norm(constant(Tensor::full({2, 4}, 3.25)), gain, bias, 1e-5);
    for (double v : out->value.data) CHECK(std::fabs(v) < 1e-12);

    Value bias2 = constant(Tensor::row({1, 2, 3, 4}));
    Value out2 = layer_norm(constant(Tensor::matrix(2, 4, {5, 1, 2, 0, 3, 3, 9, 9})),
                            constant(Tensor::zeros({1, 4})), bias2, 1e-5);
    for (int i = 0; i < 2; ++i) {
        for (int j = 0; j < 4; ++j) CHECK(out2->value.at(i, j) == doctest::Approx(1.0 + j).epsilon(1e-15));
    }
}

TEST_CASE("layer_norm normalizes rows before the affine step") {
    Rng rng(15);
    Value x = constant(random_tensor({6, 9}, rng, 2.0));
    Value out = layer_norm(x, constant(Tensor::full({1, 9}, 1.0)), constant(Tensor::zeros({1, 9})), 1e-10);
    for (int i = 0; i < 6; ++i) {
        double mean = 0;
        for (int j = 0; j < 9; ++j) mean += out->value.at(i, j);
        mean /= 9;
        CHECK(std::fabs(mean) < 1e-10);
    }
}

TEST_CASE("layer_norm rejects non-positive eps") {
    Value x = constant(Tensor::zeros({1, 4}));
    Value g = constant(Tensor::full({1, 4}, 1.0));
    Value b = constant(Tensor::zeros({1, 4}));
    CHECK_THROWS_AS(layer_norm(x, g, b, 0.0), TensorError);
    CHECK_THROWS_AS(layer_norm(x, g, b, -1e-5), TensorError);
}

TEST_CASE("layer_norm gradient") {
    Rng rng(16);
    Value x = parameter(random_tensor({3, 6}, rng));
    Value g = parameter(random_tensor({1, 6}, rng, 0.5));
    Value b = parameter(random_tensor({1, 6}, rng, 0.5));
    Value probe = constant(random_tensor({3, 6}, rng));
    auto res = gradient_check([&] { return sum_all(mul(layer_norm(x, g, b, 1e-5), probe)); }, {x, g, b});
    CHECK(res.max_rel_error < 1e-6);
}

TEST_CASE("cross_entropy uniform and saturated logits") {
    Value uniform = cross_entropy(constant(Tensor::zeros({3, 4})), {0, 1, 3});
    CHECK(uniform->value.item() == doctest::Approx(std::log(4.0)).epsilon(1e-12));

    Tensor hot = Tensor::zeros({1, 5});
    hot.data[2] = 1e4;
    CHECK(cross_entropy(constant(hot), {2})->value.item() < 1e-9);
}

TEST_CASE("cross_entropy matches independent scalar evaluation") {
    Rng rng(17);
    Tensor logits = random_tensor({2, 5}, rng, 2.0);
    std::vector<int> targets{3, 0};
    long double expect = 0.0L;
    for (int i = 0; i < 2; ++i) {
        long double mx = logits.at(i, 0);
        for (int j = 1; j < 5; ++j) mx = std::max<long double>(mx, logits.at(i, j));
        long double z = 0.0L;
        for (int j = 0; j < 5; ++j) z += expl(static_cast<long double>(logits.at(i, j)) - mx);
        expect -= static_cast<long double>(logits.at(i, targets[static_cast<std::size_t>(i)])) - mx - logl(z);
    }
    expect /= 2.0L;
    Value loss = cross_entropy(constant(logits), targets);
    CHECK(std::fabs(loss->value.item() - static_cast<double>(expect)) < 1e-10);
}

TEST_CASE("cross_entropy rejects out-of-range targets") {
    CHECK_THROWS_AS(cross_entropy(constant(Tensor::zeros({2, 3})), {0, 3}), TensorError);
    CHECK_THROWS_AS(cross_entropy(constant(Tensor::zeros({2, 3})), {-1, 0}), TensorError);
}

TEST_CASE("cross_entropy gradient") {
    Rng rng(18);
    Value logits = parameter(random_tensor({4, 6}, rng, 1.5));
    auto res = gradient_check([&] { return cross_entropy(logits, {1, 5, 0, 2}); }, {logits});
    CHECK(res.max_rel_error < 1e-6);
}

TEST_CASE("gelu and relu gradients") {
    Rng rng(19);
    Value x = parameter(random_tensor({3, 7}, rng));
    auto res = gradient_check([&] { return sum_all(mul(gelu(x), gelu(x))); }, {x});
    CHECK(res.max_rel_error < 1e-6);

    Value y = parameter(random_tensor({3, 7}, rng, 2.0));
    auto res2 = gradient_check([&] { return sum_all(relu(y)); }, {y});
    CHECK(res2.max_rel_error < 1e-6);
}

TEST_CASE("causal attention gradient and single-token weights") {
    Rng rng(20);
    const int batch = 2, seq = 3, head_dim = 2, heads = 2;
    Value q = parameter(random_tensor({batch * seq, heads * head_dim}, rng));
    Value k = parameter(random_tensor({batch * seq, heads * head_dim}, rng));
    Value v = parameter(random_tensor({batch * seq, heads * head_dim}, rng));
    Value probe = constant(random_tensor({batch * seq, heads * head_dim}, rng));
    auto res = gradient_check(
        [&] { return sum_all(mul(causal_attention(q, k, v, batch, seq, head_dim), probe)); }, {q, k, v});
    CHECK(res.max_rel_error < 1e-6);

    // One-token sequences attend only to themselves.
    Value v1 = constant(random_tensor({2, 4}, rng));
    Value out = causal_attention(constant(random_tensor({2, 4}, rng)), constant(random_tensor({2, 4}, rng)),
                                 v1, 2, 1, 2);
    CHECK(max_abs_diff(out->value, v1->value) < 1e-15);
}

TEST_CASE("elementwise and reduction gradients") {
    Rng rng(21);
    Value a = parameter(random_tensor({2, 5}, rng));
    Value b = parameter(random_tensor({2, 5}, rng));
    auto res = gradient_check([&] { return mean_all(mul(sub(a, b), add(a, b))); }, {a, b});
    CHECK(res.max_rel_error < 1e-6);

    Value x = parameter(random_tensor({4, 3}, rng));
    auto res2 = gradient_check([&] { return sum_all(group_mean_rows(x, 2)); }, {x});
    CHECK(res2.max_rel_error < 1e-6);

    Value s = parameter(random_tensor({1}, rng));
    auto res3 = gradient_check([&] { return sum_all(mul_scalar_value(a, s)); }, {a, s});
    CHECK(res3.max_rel_error < 1e-6);
}

TEST_CASE("gather, slice and concat gradients") {
    Rng rng(22);
    Value table = parameter(random_tensor({6, 4}, rng));
    auto res = gradient_check([&] { return sum_all(mul(gather_rows(table, {0, 2, 2, 5}),
                                                       gather_rows(table, {1, 1, 3, 4}))); },
                              {table});
    CHECK(res.max_rel_error < 1e-6);

    Value x = parameter(random_tensor({5, 3}, rng));
    auto res2 = gradient_check([&] { return sum_all(mul(slice_rows(x, 3), slice_rows(x, 3))); }, {x});
    CHECK(res2.max_rel_error < 1e-6);

    Value r1 = parameter(random_tensor({1, 3}, rng));
    Value r2 = parameter(random_tensor({1, 2}, rng));
    auto res3 = gradient_check([&] {
        Value cat = concat_cols({r1, r2});
        return sum_all(mul(cat, cat));
    }, {r1, r2});
    CHECK(res3.max_rel_error < 1e-6);
}

TEST_CASE("inactive slice rows receive exactly zero gradient") {
    Rng rng(23);
    Value w = parameter(random_tensor({6, 4}, rng));
    Value x = constant(random_tensor({3, 4}, rng));
    w->zero_grad();
    backward(sum_all(linear(x, slice_rows(w, 2))));
    REQUIRE(w->has_grad());
    for (int r = 2; r < 6; ++r) {
        for (int c = 0; c < 4; ++c) CHECK(w->grad.at(r, c) == 0.0);
    }
}

TEST_CASE("finite checks surface non-finite results") {
    FiniteChecksOn guard;
    Value big = constant(Tensor::row({1e308}));
    CHECK_THROWS_AS(scale(big, 10.0), TensorError);
}

TEST_CASE("adam zero gradient leaves parameters unchanged") {
    Value p = parameter(Tensor::row({1.5, -2.0}));
    p->grad_data();  // allocated, all zeros
    Adam opt({.learning_rate = 0.1});
    opt.step({p});
    CHECK(p->value.data == std::vector<double>{1.5, -2.0});
    CHECK(opt.step_count() == 1);
}

TEST_CASE("adam single step magnitude is about the learning rate") {
    Value p = parameter(Tensor::row({0.0}));
    p->grad_data()[0] = 1.0;
    Adam opt({.learning_rate = 0.1});
    opt.step({p});
    // Bias correction makes m_hat = v_hat = 1 after one unit-gradient step.
    CHECK(p->value.data[0] == doctest::Approx(-0.1).epsilon(1e-7));
}

TEST_CASE("adam is deterministic and validates shapes") {
    auto run = [] {
        Rng rng(7);
        Value p = parameter(random_tensor({3, 3}, rng));
        Adam opt({.learning_rate = 0.01});
        for (int i = 0; i < 5; ++i) {
            p->zero_grad();
            backward(sum_all(mul(p, p)));
            opt.step({p});
        }
        return p->value.data;
    };
    CHECK(run() == run());

    Value a = parameter(Tensor::zeros({2, 2}));
    Adam opt({});
    opt.step({a});
    Value b = parameter(Tensor::zeros({3, 2}));
    CHECK_THROWS_AS(opt.step({b}), TensorError);
}

TEST_CASE("rng streams are reproducible and distinct") {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

    Rng base(42);
    Rng s1 = base.stream("init");
    Rng s2 = base.stream("data");
    Rng s1_again = Rng(42).stream("init");
    CHECK(s1.next_u64() == s1_again.next_u64());
    CHECK(s1.next_u64() != s2.next_u64());

    std::vector<int> v1{1, 2, 3, 4, 5, 6, 7}, v2{1, 2, 3, 4, 5, 6, 7};
    Rng r1(9), r2(9);
    r1.shuffle(v1);
    r2.shuffle(v2);
    CHECK(v1 == v2);
}

TEST_CASE("rng uniform_int covers its range roughly uniformly") {
    Rng rng(123);
    std::vector<int> counts(4, 0);
    const int draws = 40000;
    for (int i = 0; i < draws; ++i) ++counts[static_cast<std::size_t>(rng.uniform_int(4))];
    // 3 sigma of a binomial(draws, 1/4)
    const double sigma = std::sqrt(draws * 0.25 * 0.75);
    for (int c : counts) CHECK(std::fabs(c - draws * 0.25) < 3.0 * sigma);
}

TEST_CASE("no-grad guard suppresses graph construction") {
    Rng rng(24);
    Value w = parameter(random_tensor({3, 3}, rng));
    NoGradGuard guard;
    Value out = matmul(w, w);
    CHECK_FALSE(out->requires_grad);
    CHECK(out->parents.empty());
}
