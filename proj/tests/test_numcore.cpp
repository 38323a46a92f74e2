#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <numeric>

#include "cclip/numcore.hpp"
#include "cclip/rng.hpp"
#include "testutil.hpp"

using namespace cclip;
using testutil::rand_matrix;

namespace {

// Independent scalar-arithmetic oracle: per-element exp/log in long double,
// no max subtraction, no shared code with cross_entropy_rows.
double ce_scalar_oracle(const Matrix& logits, const std::vector<std::size_t>& targets) {
    long double total = 0.0L;
    for (std::size_t i = 0; i < logits.rows; ++i) {
        long double denom = 0.0L;
        for (std::size_t j = 0; j < logits.cols; ++j) {
            denom += std::exp(static_cast<long double>(logits(i, j)));
        }
        const long double p =
            std::exp(static_cast<long double>(logits(i, targets[i]))) / denom;
        total += -std::log(p);
    }
    return static_cast<double>(total / static_cast<long double>(logits.rows));
}

// Weighted-sum probe turning a matrix op into a scalar loss for grad_check.
double weighted(const Matrix& w, const Matrix& m) { return sum_all(hadamard(w, m)); }

} // namespace

TEST_CASE("l2_normalize_rows examples") {
    const Matrix unit = l2_normalize_rows(Matrix{{1, 0, 0}});
    CHECK(unit(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(unit(0, 1) == 0.0);

    const Matrix tri = l2_normalize_rows(Matrix{{3, 4}});
    CHECK(tri(0, 0) == doctest::Approx(0.6).epsilon(1e-12));
    CHECK(tri(0, 1) == doctest::Approx(0.8).epsilon(1e-12));

    CHECK_THROWS_WITH_AS(l2_normalize_rows(Matrix{{0, 0}}),
                         doctest::Contains("ZeroNormRow"), Error);
}

TEST_CASE("l2_normalize_rows is idempotent and direction preserving") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Pcg64 rng(seed, 11);
        const Matrix m = rand_matrix(rng, 5, 7, -3.0, 3.0);
        const Matrix once = l2_normalize_rows(m);
        const Matrix twice = l2_normalize_rows(once);
        CHECK(testutil::max_abs_diff(once, twice) <= 1e-12);
        for (std::size_t i = 0; i < once.rows; ++i) {
            double norm = 0.0;
            double dot = 0.0;
            for (std::size_t j = 0; j < once.cols; ++j) {
                norm += once(i, j) * once(i, j);
                dot += once(i, j) * m(i, j);
            }
            CHECK(std::abs(std::sqrt(norm) - 1.0) <= 1e-12);
            CHECK(dot > 0.0); // same direction
        }
    }
}

TEST_CASE("softmax_rows examples") {
    const Matrix uniform = softmax_rows(Matrix{{0, 0, 0, 0}});
    for (double v : uniform.data) {
        CHECK(v == doctest::Approx(0.25).epsilon(1e-12));
    }

    const Matrix stable = softmax_rows(Matrix{{1000, 0}});
    CHECK(stable.all_finite());
    CHECK(stable(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(stable(0, 1) >= 0.0);
    CHECK(stable(0, 1) <= 1e-12);

    const Matrix two_thirds = softmax_rows(Matrix{{std::log(2.0), std::log(1.0)}});
    CHECK(two_thirds(0, 0) == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
    CHECK(two_thirds(0, 1) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("softmax_rows rows sum to one and shift invariance holds") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Pcg64 rng(seed, 12);
        const Matrix m = rand_matrix(rng, 6, 9, -5.0, 5.0);
        const Matrix p = softmax_rows(m);
        for (std::size_t i = 0; i < p.rows; ++i) {
            double sum = 0.0;
            for (std::size_t j = 0; j < p.cols; ++j) {
                sum += p(i, j);
                CHECK(p(i, j) > 0.0);
                CHECK(p(i, j) <= 1.0);
            }
            CHECK(std::abs(sum - 1.0) <= 1e-12);
        }

        Matrix shifted = m;
        const double c = 3.25;
        for (std::size_t j = 0; j < m.cols; ++j) {
            shifted(2, j) += c;
        }
        const Matrix q = softmax_rows(shifted);
        for (std::size_t j = 0; j < m.cols; ++j) {
            CHECK(std::abs(q(2, j) - p(2, j)) <= 1e-12);
        }
    }
}

TEST_CASE("cross_entropy_rows examples") {
    for (const std::size_t b : {2ul, 5ul, 32ul}) {
        Matrix logits(b, b, 0.7);
        std::vector<std::size_t> diag(b);
        std::iota(diag.begin(), diag.end(), 0);
        CHECK(cross_entropy_rows(logits, diag) ==
              doctest::Approx(std::log(double(b))).epsilon(1e-12));
    }

    const Matrix confident{{50, 0}, {0, 50}};
    const std::vector<std::size_t> t01{0, 1};
    CHECK(cross_entropy_rows(confident, t01) <= 1e-3);

    Pcg64 rng(7, 13);
    const Matrix logits = rand_matrix(rng, 3, 3, -2.0, 2.0);
    const std::vector<std::size_t> targets{2, 0, 1};
    CHECK(std::abs(cross_entropy_rows(logits, targets) - ce_scalar_oracle(logits, targets)) <=
          1e-9);

    const std::vector<std::size_t> bad{0, 3, 1};
    CHECK_THROWS_WITH_AS(cross_entropy_rows(logits, bad),
                         doctest::Contains("IndexOutOfRange"), Error);
}

TEST_CASE("cross_entropy_rows on uniform logits equals ln(cols) for 2..64") {
    for (std::size_t cols = 2; cols <= 64; ++cols) {
        Matrix logits(3, cols, -1.25);
        const std::vector<std::size_t> targets{0, cols / 2, cols - 1};
        CHECK(std::abs(cross_entropy_rows(logits, targets) - std::log(double(cols))) <= 1e-12);
    }
}

TEST_CASE("grad_check on a quadratic is near exact") {
    const DifferentiableLoss loss = [](std::span<const Matrix> params, bool want_grads) {
        LossEval out;
        for (const double v : params[0].data) {
            out.value += v * v;
        }
        if (want_grads) {
            out.grads.push_back(scale(params[0], 2.0));
        }
        return out;
    };
    Pcg64 rng(3, 14);
    CHECK(grad_check(loss, {rand_matrix(rng, 2, 2)}, 1e-5) <= 1e-8);
}

TEST_CASE("grad_check rejects eps outside its range") {
    const DifferentiableLoss loss = [](std::span<const Matrix> params, bool want_grads) {
        LossEval out;
        out.value = sum_all(params[0]);
        if (want_grads) {
            out.grads.push_back(Matrix(params[0].rows, params[0].cols, 1.0));
        }
        return out;
    };
    CHECK_THROWS_WITH_AS(grad_check(loss, {Matrix(1, 1, 0.5)}, 0.0),
                         doctest::Contains("InvalidArgument"), Error);
    CHECK_THROWS_WITH_AS(grad_check(loss, {Matrix(1, 1, 0.5)}, 0.1),
                         doctest::Contains("InvalidArgument"), Error);
}

TEST_CASE("grad_check flags a nondeterministic loss") {
    int calls = 0;
    const DifferentiableLoss loss = [&calls](std::span<const Matrix> params, bool want_grads) {
        LossEval out;
        out.value = sum_all(params[0]) + 1e-3 * calls++;
        if (want_grads) {
            out.grads.push_back(Matrix(params[0].rows, params[0].cols, 1.0));
        }
        return out;
    };
    CHECK_THROWS_WITH_AS(grad_check(loss, {Matrix(2, 2, 0.25)}, 1e-5),
                         doctest::Contains("NonDeterministicLoss"), Error);
}

// Every registered backward rule, certified against central differences on 20
// seeds at eps = 1e-5.
TEST_CASE("backward rules pass grad_check") {
    constexpr double kTol = 1e-4;
    constexpr double kEps = 1e-5;

    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Pcg64 rng(seed, 15);
        const Matrix w34 = rand_matrix(rng, 3, 4, -1.0, 1.0);
        const Matrix w32 = rand_matrix(rng, 3, 2, -1.0, 1.0);
        const Matrix w43 = rand_matrix(rng, 4, 3, -1.0, 1.0);
        const Matrix w14 = rand_matrix(rng, 1, 4, -1.0, 1.0);

        { // matmul
            const DifferentiableLoss loss = [&](std::span<const Matrix> p, bool g) {
                LossEval out;
                out.value = weighted(w32, matmul(p[0], p[1]));
                if (g) {
                    Matrix da, db;
                    matmul_backward(p[0], p[1], w32, &da, &db);
                    out.grads = {da, db};
                }
                return out;
            };
            CHECK(grad_check(loss, {rand_matrix(rng, 3, 4), rand_matrix(rng, 4, 2)}, kEps) <=
                  kTol);
        }
        { // transpose
            const DifferentiableLoss loss = [&](std::span<const Matrix> p, bool g) {
                LossEval out;
                out.value = weighted(w43, transpose(p[0]));
                if (g) {
                    out.grads = {transpose_backward(w43)};
                }
                return out;
            };
            CHECK(grad_check(loss, {rand_matrix(rng, 3, 4)}, kEps) <= kTol);
        }
        { // add
            const DifferentiableLoss loss = [&](std::span<const Matrix> p, bool g) {
                LossEval out;
                out.value = weighted(w34, add(p[0], p[1]));
                if (g) {
                    out.grads = {w34, w34};
                }
                return out;
            };
            CHECK(grad_check(loss, {rand_matrix(rng, 3, 4), rand_matrix(rng, 3, 4)}, kEps) <=
                  kTol);
        }
        { // scale
            const DifferentiableLoss loss = [&](std::span<const Matrix> p, bool g) {
                LossEval out;
                out.value = weighted(w34, scale(p[0], -1.7));
                if (g) {
                    out.grads = {scale_backward(w34, -1.7)};
                }
                return out;
            };
            CHECK(grad_check(loss, {rand_matrix(rng, 3, 4)}, kEps) <= kTol);
        }
        { // add_row_broadcast
            const DifferentiableLoss loss = [&](std::span<const Matrix> p, bool g) {
                LossEval out;
                out.value = weighted(w34, add_row_broadcast(p[0], p[1]));
                if (g) {
                    auto [dm, drow] = add_row_broadcast_backward(w34);
                    out.grads = {dm, drow};
                }
                return out;
            };
            CHECK(grad_check(loss, {rand_matrix(rng, 3, 4), rand_matrix(rng, 1, 4)}, kEps) <=
                  kTol);
        }
        { // row_mean
            const DifferentiableLoss loss = [&](std::span<const Matrix> p, bool g) {
                LossEval out;
                out.value = weighted(w14, row_mean(p[0]));
                if (g) {
                    out.grads = {row_mean_backward(w14, p[0].rows)};
                }
                return out;
            };
            CHECK(grad_check(loss, {rand_matrix(rng, 3, 4)}, kEps) <= kTol);
        }
        { // relu
            const DifferentiableLoss loss = [&](std::span<const Matrix> p, bool g) {
                LossEval out;
                const Matrix y = relu(p[0]);
                out.value = weighted(w34, y);
                if (g) {
                    out.grads = {relu_backward(w34, y)};
                }
                return out;
            };
            CHECK(grad_check(loss, {rand_matrix(rng, 3, 4)}, kEps) <= kTol);
        }
        { // l2_normalize_rows
            const DifferentiableLoss loss = [&](std::span<const Matrix> p, bool g) {
                LossEval out;
                out.value = weighted(w34, l2_normalize_rows(p[0]));
                if (g) {
                    out.grads = {l2_normalize_rows_backward(p[0], w34)};
                }
                return out;
            };
            CHECK(grad_check(loss, {rand_matrix(rng, 3, 4, 0.5, 2.0)}, kEps) <= kTol);
        }
        { // softmax_rows
            const DifferentiableLoss loss = [&](std::span<const Matrix> p, bool g) {
                LossEval out;
                const Matrix y = softmax_rows(p[0]);
                out.value = weighted(w34, y);
                if (g) {
                    out.grads = {softmax_rows_backward(y, w34)};
                }
                return out;
            };
            CHECK(grad_check(loss, {rand_matrix(rng, 3, 4, -2.0, 2.0)}, kEps) <= kTol);
        }
        { // cross_entropy_rows
            const std::vector<std::size_t> targets{1, 3, 0};
            const DifferentiableLoss loss = [&](std::span<const Matrix> p, bool g) {
                LossEval out;
                out.value = cross_entropy_rows(p[0], targets);
                if (g) {
                    out.grads = {cross_entropy_rows_backward(p[0], targets)};
                }
                return out;
            };
            CHECK(grad_check(loss, {rand_matrix(rng, 3, 4, -2.0, 2.0)}, kEps) <= kTol);
        }
    }
}

TEST_CASE("GradTape accumulates per id and checks shapes") {
    GradTape tape;
    tape.add("w", Matrix{{1, 2}});
    tape.add("b", Matrix{{5}});
    tape.add("w", Matrix{{10, 20}});

    REQUIRE(tape.entries().size() == 2);
    CHECK(tape.entries()[0].first == "w");
    CHECK(tape.find("w")->operator()(0, 0) == 11.0);
    CHECK(tape.find("w")->operator()(0, 1) == 22.0);
    CHECK(tape.find("missing") == nullptr);

    CHECK_THROWS_WITH_AS(tape.add("w", Matrix{{1, 2, 3}}),
                         doctest::Contains("ShapeMismatch"), Error);
}

TEST_CASE("matmul agrees with a naive triple loop") {
    Pcg64 rng(21, 16);
    const Matrix a = rand_matrix(rng, 4, 6);
    const Matrix b = rand_matrix(rng, 6, 5);
    const Matrix c = matmul(a, b);
    for (std::size_t i = 0; i < a.rows; ++i) {
        for (std::size_t j = 0; j < b.cols; ++j) {
            double dot = 0.0;
            for (std::size_t k = 0; k < a.cols; ++k) {
                dot += a(i, k) * b(k, j);
            }
            CHECK(c(i, j) == doctest::Approx(dot).epsilon(1e-12));
        }
    }
    CHECK_THROWS_WITH_AS(matmul(a, a), doctest::Contains("DimMismatch"), Error);
}
