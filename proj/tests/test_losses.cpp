#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include "fd_check.hpp"
#include "procver/errors.hpp"
#include "procver/losses.hpp"
#include "procver/rng.hpp"
#include "procver/tensor.hpp"

using namespace procver;
using procver::testing::fd_check;
using procver::testing::random_tensor;

namespace {

// Oracle: for identical orthonormal sequences the cosine matrix is the
// identity, so every softmaxed row and column puts e/(e + K - 1) on the
// diagonal and the loss is K * (1 - e/(e + K - 1)).
double closed_form_alignment_loss(std::size_t k) {
    const double e = std::exp(1.0);
    const double diag = e / (e + static_cast<double>(k) - 1.0);
    return static_cast<double>(k) * (1.0 - diag);
}

// Oracle: plain log-sum-exp cross-entropy, written independently of the
// max-shifted implementation.
double naive_cross_entropy(const std::vector<double>& logits, std::size_t target) {
    double s = 0.0;
    for (double v : logits) {
        s += std::exp(v);
    }
    return std::log(s) - logits[target];
}

// k random orthonormal rows in dimension d >= k (Gram-Schmidt, run twice for
// numerical cleanliness).
Tensor random_orthonormal(std::size_t k, std::size_t d, Rng& rng) {
    REQUIRE(d >= k);
    Tensor m = random_tensor({k, d}, rng);
    for (int pass = 0; pass < 2; ++pass) {
        for (std::size_t i = 0; i < k; ++i) {
            for (std::size_t j = 0; j < i; ++j) {
                double dot = 0.0;
                for (std::size_t c = 0; c < d; ++c) {
                    dot += m(i, c) * m(j, c);
                }
                for (std::size_t c = 0; c < d; ++c) {
                    m(i, c) -= dot * m(j, c);
                }
            }
            double norm = 0.0;
            for (std::size_t c = 0; c < d; ++c) {
                norm += m(i, c) * m(i, c);
            }
            norm = std::sqrt(norm);
            REQUIRE(norm > 1e-8);
            for (std::size_t c = 0; c < d; ++c) {
                m(i, c) /= norm;
            }
        }
    }
    return m;
}

Tensor reversed_rows(const Tensor& a) {
    Tensor out(a.shape);
    const std::size_t r = a.rows();
    for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < a.cols(); ++j) {
            out(i, j) = a(r - 1 - i, j);
        }
    }
    return out;
}

Tensor basis_rows(std::size_t k) {
    Tensor m = Tensor::zeros({k, k});
    for (std::size_t i = 0; i < k; ++i) {
        m(i, i) = 1.0;
    }
    return m;
}

} // namespace

TEST_CASE("correlation rows and columns are proper distributions") {
    Rng rng(11);
    const Tensor a = random_tensor({5, 7}, rng);
    const Tensor b = random_tensor({5, 7}, rng);
    const CorrelationMatrix c = correlation(a, b);
    REQUIRE(c.values.rows() == 5);
    REQUIRE(c.values.cols() == 5);
    for (std::size_t i = 0; i < 5; ++i) {
        double row_sum = 0.0;
        double col_sum = 0.0;
        for (std::size_t j = 0; j < 5; ++j) {
            row_sum += c.row_softmax(i, j);
            col_sum += c.col_softmax(j, i);
            CHECK(c.values(i, j) > 0.0);
            CHECK(c.values(i, j) < 1.0);
            CHECK(c.cosine(i, j) >= -1.0 - 1e-12);
            CHECK(c.cosine(i, j) <= 1.0 + 1e-12);
        }
        CHECK(std::abs(row_sum - 1.0) < 1e-12);
        CHECK(std::abs(col_sum - 1.0) < 1e-12);
    }
}

TEST_CASE("identical orthonormal sequences hit the closed-form alignment loss") {
    Rng rng(29);
    for (std::size_t k : {std::size_t{2}, std::size_t{4}, std::size_t{16}}) {
        CAPTURE(k);
        const double expected = closed_form_alignment_loss(k);

        const Tensor basis = basis_rows(k);
        const CorrelationMatrix c = correlation(basis, basis);
        const double diag_expected = std::exp(1.0) / (std::exp(1.0) + static_cast<double>(k) - 1.0);
        for (std::size_t i = 0; i < k; ++i) {
            CHECK(std::abs(c.values(i, i) - diag_expected) < 1e-12);
        }
        CHECK(std::abs(sequence_alignment_loss(basis, basis) - expected) < 1e-9);

        // A rotated orthonormal frame must give the exact same value.
        const Tensor q = random_orthonormal(k, k + 4, rng);
        CHECK(std::abs(sequence_alignment_loss(q, q) - expected) < 1e-9);
    }
    // Hand-evaluated anchors.
    CHECK(std::abs(closed_form_alignment_loss(4) - 2.09853) < 1e-4);
    CHECK(std::abs(closed_form_alignment_loss(16) - 13.5453) < 1e-4);
}

TEST_CASE("reversing an orthonormal sequence zeroes the cosine diagonal and raises the loss") {
    Rng rng(31);
    const Tensor a = random_orthonormal(4, 9, rng);
    const Tensor b = reversed_rows(a);
    const CorrelationMatrix c = correlation(a, b);
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(std::abs(c.cosine(i, i)) < 1e-10);
    }
    CHECK(sequence_alignment_loss(a, b) > sequence_alignment_loss(a, a) + 0.1);
}

TEST_CASE("alignment loss is symmetric and invariant to positive frame rescaling") {
    Rng rng(37);
    for (int trial = 0; trial < 5; ++trial) {
        const Tensor a = random_tensor({6, 9}, rng);
        const Tensor b = random_tensor({6, 9}, rng);
        const double lab = sequence_alignment_loss(a, b);
        CHECK(lab > 0.0);
        CHECK(std::abs(lab - sequence_alignment_loss(b, a)) < 1e-12);

        Tensor scaled = a;
        for (std::size_t i = 0; i < scaled.rows(); ++i) {
            const double c = 0.1 + 9.9 * rng.uniform();
            for (std::size_t j = 0; j < scaled.cols(); ++j) {
                scaled(i, j) *= c;
            }
        }
        CHECK(std::abs(sequence_alignment_loss(scaled, b) - lab) < 1e-9);

        const CorrelationMatrix cab = correlation(a, b);
        const CorrelationMatrix cba = correlation(b, a);
        for (std::size_t i = 0; i < 6; ++i) {
            for (std::size_t j = 0; j < 6; ++j) {
                CHECK(std::abs(cab.cosine(i, j) - cba.cosine(j, i)) < 1e-14);
                CHECK(std::abs(cab.row_softmax(i, j) - cba.col_softmax(j, i)) < 1e-14);
                CHECK(std::abs(cab.values(i, j) - cba.values(j, i)) < 1e-14);
            }
        }
    }
}

TEST_CASE("correlation rejects degenerate and mismatched inputs") {
    Rng rng(41);
    Tensor a = random_tensor({4, 6}, rng);
    Tensor zero_row = a;
    for (std::size_t j = 0; j < 6; ++j) {
        zero_row(2, j) = 0.0;
    }
    CHECK_THROWS_AS(correlation(zero_row, a), NumericError);
    CHECK_THROWS_AS(correlation(a, zero_row), NumericError);
    CHECK_THROWS_AS(sequence_alignment_loss(zero_row, a), NumericError);
    CHECK_THROWS_AS(correlation(a, random_tensor({5, 6}, rng)), ShapeError);
    CHECK_THROWS_AS(correlation(a, random_tensor({4, 7}, rng)), ShapeError);
    CHECK_THROWS_AS(correlation(Tensor::zeros({6}), Tensor::zeros({6})), ShapeError);
}

TEST_CASE("cross-entropy batch loss: uniform logits, additivity, margins") {
    Tensor uniform({3, 10});
    for (double& v : uniform.data) {
        v = 0.7;
    }
    const ClassificationLoss u = classification_loss(uniform, {0, 4, 9});
    CHECK(std::abs(u.mean - std::log(10.0)) < 1e-12);
    CHECK(std::abs(u.sum - 3.0 * std::log(10.0)) < 1e-12);

    Rng rng(43);
    const Tensor batch = random_tensor({2, 5}, rng);
    const std::vector<std::size_t> labels = {1, 3};
    const ClassificationLoss both = classification_loss(batch, labels);
    double expected_sum = 0.0;
    for (std::size_t i = 0; i < 2; ++i) {
        Tensor row({1, 5});
        std::vector<double> raw(5);
        for (std::size_t j = 0; j < 5; ++j) {
            row(0, j) = batch(i, j);
            raw[j] = batch(i, j);
        }
        const ClassificationLoss single = classification_loss(row, {labels[i]});
        CHECK(std::abs(single.sum - single.mean) < 1e-15);
        CHECK(std::abs(single.sum - naive_cross_entropy(raw, labels[i])) < 1e-9);
        expected_sum += single.sum;
    }
    CHECK(std::abs(both.sum - expected_sum) < 1e-12);
    CHECK(std::abs(both.mean - expected_sum / 2.0) < 1e-12);

    // Widening the correct-class margin drives the loss toward zero without
    // ever reaching it.
    double prev = std::numeric_limits<double>::infinity();
    for (double margin : {2.0, 5.0, 10.0, 20.0}) {
        Tensor logits = Tensor::zeros({1, 4});
        logits(0, 2) = margin;
        const double loss = classification_loss(logits, {2}).mean;
        CHECK(loss > 0.0);
        CHECK(loss < prev);
        prev = loss;
    }
    CHECK(prev < 1e-7);
}

TEST_CASE("cross-entropy batch loss rejects bad labels and shapes") {
    Tensor batch = Tensor::zeros({2, 4});
    CHECK_THROWS_AS(classification_loss(batch, {0, 4}), DataError);
    CHECK_THROWS_AS(classification_loss(batch, {0}), ShapeError);
    CHECK_THROWS_AS(classification_loss(Tensor::zeros({4}), {0}), ShapeError);
    Tape t;
    CHECK_THROWS_AS(build_classification_loss_sum(t, {}, {}), ShapeError);
}

TEST_CASE("total loss combines the two terms") {
    const LossBreakdown b = total_loss(2.0, 3.0, 1.0);
    CHECK(b.cls == 2.0);
    CHECK(b.seq == 3.0);
    CHECK(b.lambda == 1.0);
    CHECK(b.total == 5.0);

    const LossBreakdown off = total_loss(1.25, 7.0, 0.0);
    CHECK(off.total == off.cls);

    CHECK(total_loss(1.0, 4.0, 0.5).total > total_loss(1.0, 3.0, 0.5).total);

    Rng rng(47);
    for (int i = 0; i < 20; ++i) {
        const double cls = rng.normal(0.0, 2.0);
        const double seq = std::abs(rng.normal(0.0, 2.0));
        const double lambda = rng.uniform() * 3.0;
        const LossBreakdown r = total_loss(cls, seq, lambda);
        CHECK(r.total == cls + lambda * seq);
    }

    const double inf = std::numeric_limits<double>::infinity();
    const double nan = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(total_loss(inf, 0.0, 1.0), NumericError);
    CHECK_THROWS_AS(total_loss(0.0, nan, 1.0), NumericError);
    CHECK_THROWS_AS(total_loss(0.0, 0.0, -1.0), ConfigError);
}

TEST_CASE("alignment loss gradients match finite differences") {
    Rng rng(53);
    std::vector<Parameter> params;
    params.emplace_back("seq1", random_tensor({6, 5}, rng));
    params.emplace_back("seq2", random_tensor({6, 5}, rng));
    const auto rep = fd_check(
        [](Tape& t, std::vector<Parameter>& ps) {
            return build_sequence_alignment_loss(t, t.param(ps[0]), t.param(ps[1]));
        },
        params, 15, rng);
    CHECK(rep.points >= 20);
    CHECK(rep.max_rel_err < 1e-4);
}

TEST_CASE("classification loss gradients match finite differences") {
    Rng rng(59);
    std::vector<Parameter> params;
    params.emplace_back("logits0", random_tensor({7}, rng));
    params.emplace_back("logits1", random_tensor({7}, rng));
    params.emplace_back("logits2", random_tensor({7}, rng));
    const std::vector<std::size_t> labels = {2, 0, 5};
    const auto rep = fd_check(
        [&labels](Tape& t, std::vector<Parameter>& ps) {
            return build_classification_loss_mean(t, {t.param(ps[0]), t.param(ps[1]), t.param(ps[2])},
                                                  labels);
        },
        params, 7, rng);
    CHECK(rep.points >= 20);
    CHECK(rep.max_rel_err < 1e-4);
}

TEST_CASE("joint objective gradients flow through both terms") {
    Rng rng(61);
    std::vector<Parameter> params;
    params.emplace_back("seq1", random_tensor({4, 6}, rng));
    params.emplace_back("seq2", random_tensor({4, 6}, rng));
    params.emplace_back("logits", random_tensor({5}, rng));
    const auto rep = fd_check(
        [](Tape& t, std::vector<Parameter>& ps) {
            const auto cls = build_classification_loss_mean(t, {t.param(ps[2])}, {3});
            const auto seq = build_sequence_alignment_loss(t, t.param(ps[0]), t.param(ps[1]));
            return t.add(cls, t.scale(seq, 0.5));
        },
        params, 12, rng);
    CHECK(rep.points >= 20);
    CHECK(rep.max_rel_err < 1e-4);
}
