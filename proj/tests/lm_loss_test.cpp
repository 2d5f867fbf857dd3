#include <gtest/gtest.h>

#include <cmath>

#include "pgtask/lm_loss.hpp"
#include "pgtask/random.hpp"

using namespace pgtask;

namespace {

// Rows chosen so each softmax is a simple fraction:
//   [0, ln 3, 0]  -> (1/5, 3/5, 1/5), target 1
//   [ln 2, 0, 0]  -> (1/2, 1/4, 1/4), target 0
//   [0, 0, ln 8]  -> (1/10, 1/10, 8/10), target 2
Matrix hand_logits() {
    return Matrix(3, 3, {0, std::log(3.0), 0, std::log(2.0), 0, 0, 0, 0, std::log(8.0)});
}
const std::vector<TokenId> kHandTargets = {1, 0, 2};

Matrix random_logits(Rng& rng, std::size_t rows, std::size_t cols) {
    Matrix m(rows, cols);
    for (auto& v : m.data) v = rng.normal(0.0, 2.0);
    return m;
}

}  // namespace

TEST(PgLoss, HandTable) {
    const auto z = hand_logits();
    const double l0 = -std::log(0.6), l1 = std::log(2.0), l2 = -std::log(0.8);
    EXPECT_NEAR(clm_loss(z, kHandTargets), (l0 + l1 + l2) / 3.0, 1e-12);
    EXPECT_NEAR(clm_loss(z, kHandTargets, LossReduction::Sum), l0 + l1 + l2, 1e-12);
    EXPECT_NEAR(pg_loss(z, kHandTargets, {true, false, true}), (l0 + l2) / 2.0, 1e-12);
    EXPECT_NEAR(pg_loss(z, kHandTargets, {false, true, false}, LossReduction::Sum), l1, 1e-12);
}

TEST(PgLoss, UniformLogitsGiveLogVocabulary) {
    Rng rng(1);
    for (std::size_t V : {2u, 7u, 50u}) {
        const Matrix z(6, V, 0.25);
        std::vector<TokenId> t;
        for (int i = 0; i < 6; ++i) t.push_back(TokenId(rng.below(V)));
        EXPECT_NEAR(pg_loss(z, t, {true, false, true, true, false, true}), std::log(double(V)), 1e-12);
    }
}

TEST(PgLoss, AllTrueMaskEqualsCausalLossExactly) {
    Rng rng(2);
    for (int trial = 0; trial < 50; ++trial) {
        const auto z = random_logits(rng, 1 + rng.below(10), 2 + rng.below(10));
        std::vector<TokenId> t;
        for (std::size_t i = 0; i < z.rows; ++i) t.push_back(TokenId(rng.below(z.cols)));
        EXPECT_EQ(pg_loss(z, t, std::vector<bool>(z.rows, true)), clm_loss(z, t));
    }
}

TEST(PgLoss, StableForLargeLogits) {
    const Matrix z(1, 3, {1000.0, 0.0, -1000.0});
    EXPECT_NEAR(clm_loss(z, std::vector<TokenId>{0}), 0.0, 1e-12);
    EXPECT_NEAR(clm_loss(z, std::vector<TokenId>{1}), 1000.0, 1e-9);
}

TEST(PgLossGrad, MatchesFiniteDifferences) {
    Rng rng(3);
    for (auto reduction : {LossReduction::Mean, LossReduction::Sum}) {
        for (int trial = 0; trial < 20; ++trial) {
            auto z = random_logits(rng, 2 + rng.below(6), 2 + rng.below(6));
            std::vector<TokenId> t;
            std::vector<bool> mask;
            for (std::size_t i = 0; i < z.rows; ++i) {
                t.push_back(TokenId(rng.below(z.cols)));
                mask.push_back(rng.below(2) == 0);
            }
            mask[0] = true;
            const auto g = pg_loss_grad(z, t, mask, reduction);
            for (std::size_t i = 0; i < z.data.size(); ++i) {
                const double keep = z.data[i], h = 1e-6;
                z.data[i] = keep + h;
                const double up = pg_loss(z, t, mask, reduction);
                z.data[i] = keep - h;
                const double down = pg_loss(z, t, mask, reduction);
                z.data[i] = keep;
                EXPECT_NEAR(g.data[i], (up - down) / (2 * h), 1e-6);
            }
        }
    }
}

// Logits at positions outside the mask cannot influence the objective.
TEST(PgLossGrad, MaskedOutRowsAreExactlyZeroAndInert) {
    Rng rng(4);
    auto z = random_logits(rng, 5, 4);
    const std::vector<TokenId> t = {0, 1, 2, 3, 0};
    const std::vector<bool> mask = {false, true, false, true, true};
    const auto g = pg_loss_grad(z, t, mask);
    const double base = pg_loss(z, t, mask);
    for (std::size_t r : {0u, 2u}) {
        for (std::size_t c = 0; c < 4; ++c) {
            EXPECT_EQ(g(r, c), 0.0);
            z(r, c) += 123.0;
        }
    }
    EXPECT_EQ(pg_loss(z, t, mask), base);
}

TEST(PgLoss, RejectsBadShapes) {
    const auto z = hand_logits();
    EXPECT_THROW(pg_loss(z, std::vector<TokenId>{0, 1}, {true, true}), ValidationError);
    EXPECT_THROW(pg_loss(z, kHandTargets, {true, true}), ValidationError);
    EXPECT_THROW(pg_loss(z, std::vector<TokenId>{0, 1, 3}, {true, true, true}), ValidationError);
    EXPECT_THROW(pg_loss(z, kHandTargets, {false, false, false}), ValidationError);
    EXPECT_THROW(clm_loss(Matrix(0, 3), std::vector<TokenId>{}), ValidationError);
    EXPECT_THROW(Matrix(2, 2, std::vector<double>{1.0}), ValidationError);
}

TEST(ShiftForTraining, AlignsTargetsWithMask) {
    FormattedExample ex{{4, 5, 1, 7, 3}, {false, false, false, true, true}, 2};
    const auto s = shift_for_training(ex);
    EXPECT_EQ(s.inputs, (std::vector<TokenId>{4, 5, 1, 7}));
    EXPECT_EQ(s.targets, (std::vector<TokenId>{5, 1, 7, 3}));
    EXPECT_EQ(s.mask, (std::vector<bool>{false, false, true, true}));
    EXPECT_TRUE(shift_for_training(FormattedExample{{1}, {false}, 0}).targets.empty());
}
