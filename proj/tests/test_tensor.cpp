#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "ftscore/tensor/adam.hpp"
#include "ftscore/tensor/checkpoint.hpp"
#include "ftscore/tensor/gradcheck.hpp"
#include "ftscore/tensor/tape.hpp"
#include "test_support.hpp"

using namespace ftscore;

namespace {

Var sum_of(Tape& tape, const Var& v)
{
    OpAttrs a;
    a.scalar = static_cast<double>(v.value().size());
    return tape.apply(OpKind::scale_by_scalar, {tape.apply(OpKind::mean, {v})}, a);
}

} // namespace

TEST(Forward, SymlogValues)
{
    const double e1 = std::numbers::e - 1.0;
    Tensor x(Shape{3}, std::vector<double>{0.0, e1, -e1});
    const Tensor y = forward(OpKind::symlog, {&x});
    EXPECT_EQ(y[0], 0.0);
    EXPECT_NEAR(y[1], 1.0, 1e-15);
    EXPECT_NEAR(y[2], -1.0, 1e-15);
}

TEST(Forward, ConvOfOnesIsNine)
{
    Tensor x(Shape{1, 1, 3, 3}, 1.0);
    Tensor w(Shape{1, 1, 3, 3}, 1.0);
    const Tensor y = forward(OpKind::conv2d, {&x, &w});
    ASSERT_EQ(y.shape(), (Shape{1, 1, 1, 1}));
    EXPECT_EQ(y[0], 9.0);
}

TEST(Forward, ConvOutputShapeArithmetic)
{
    std::mt19937_64 rng(3);
    Tensor x = test::random_tensor({2, 4, 7, 9}, rng);
    Tensor w = test::random_tensor({6, 2, 3, 5}, rng);
    OpAttrs a;
    a.stride = 2;
    a.padding = 1;
    a.groups = 2;
    const Tensor y = forward(OpKind::conv2d, {&x, &w}, a);
    EXPECT_EQ(y.shape(), (Shape{2, 6, (7 + 2 - 3) / 2 + 1, (9 + 2 - 5) / 2 + 1}));
}

TEST(Forward, ConvMatchesDirectSum)
{
    std::mt19937_64 rng(11);
    Tensor x = test::random_tensor({1, 2, 5, 5}, rng);
    Tensor w = test::random_tensor({3, 2, 3, 3}, rng);
    OpAttrs a;
    a.stride = 2;
    a.padding = 1;
    const Tensor y = forward(OpKind::conv2d, {&x, &w}, a);
    for (std::size_t o = 0; o < 3; ++o) {
        for (std::size_t oy = 0; oy < 3; ++oy) {
            for (std::size_t ox = 0; ox < 3; ++ox) {
                double acc = 0.0;
                for (std::size_t c = 0; c < 2; ++c) {
                    for (int ky = 0; ky < 3; ++ky) {
                        for (int kx = 0; kx < 3; ++kx) {
                            const int iy = static_cast<int>(oy) * 2 + ky - 1;
                            const int ix = static_cast<int>(ox) * 2 + kx - 1;
                            if (iy < 0 || iy >= 5 || ix < 0 || ix >= 5) {
                                continue;
                            }
                            acc += x[(c * 5 + iy) * 5 + ix] * w[((o * 2 + c) * 3 + ky) * 3 + kx];
                        }
                    }
                }
                EXPECT_NEAR(y[(o * 3 + oy) * 3 + ox], acc, 1e-14);
            }
        }
    }
}

TEST(Forward, AvgPoolTwoByTwo)
{
    Tensor x(Shape{1, 1, 2, 2}, std::vector<double>{1, 2, 3, 4});
    OpAttrs a;
    a.kernel = 2;
    a.stride = 2;
    EXPECT_EQ(forward(OpKind::avgpool2d, {&x}, a)[0], 2.5);
}

TEST(Forward, MaxPoolTiesPickFirstIndex)
{
    Tensor x(Shape{1, 1, 2, 2}, std::vector<double>{5, 5, 5, 5});
    OpAttrs a;
    a.kernel = 2;
    a.stride = 2;
    std::vector<const Tensor*> in{&x};
    const OpResult r = evaluate(OpKind::maxpool2d, in, a);
    EXPECT_EQ(r.saved.indices.at(0), 0U);
}

TEST(Forward, ShapeMismatchNamesOp)
{
    Tensor a(Shape{2, 3});
    Tensor b(Shape{3, 2});
    try {
        (void)forward(OpKind::add, {&a, &b});
        FAIL() << "expected ShapeError";
    } catch (const ShapeError& e) {
        EXPECT_NE(std::string(e.what()).find("add"), std::string::npos);
        EXPECT_NE(std::string(e.what()).find("(2,3)"), std::string::npos);
    }
}

TEST(Forward, DivideByTinyScalarIsDegenerate)
{
    Tensor x(Shape{2}, 1.0);
    Tensor s = Tensor::scalar(1e-13);
    EXPECT_THROW((void)forward(OpKind::divide_by_scalar, {&x, &s}), DegenerateError);
    Tensor ok = Tensor::scalar(1e-11);
    EXPECT_NO_THROW((void)forward(OpKind::divide_by_scalar, {&x, &ok}));
}

TEST(Forward, BatchNormRepIsIdempotentUpToEps)
{
    std::mt19937_64 rng(5);
    Tensor x = test::random_tensor({8, 3, 4, 4}, rng, -5.0, 9.0);
    OpAttrs a;
    a.eps = 0.0;
    const Tensor once = forward(OpKind::batch_norm_rep, {&x}, a);
    const Tensor twice = forward(OpKind::batch_norm_rep, {&once}, a);
    for (std::size_t i = 0; i < once.size(); ++i) {
        EXPECT_NEAR(once[i], twice[i], 1e-12);
    }
}

TEST(Backward, SymlogDerivativeAtOne)
{
    Tape tape;
    Var x = tape.leaf(Tensor::scalar(1.0));
    Var y = tape.apply(OpKind::symlog, {x});
    EXPECT_DOUBLE_EQ(tape.backward(y).of(x).item(), 0.5);
}

TEST(Backward, ReluSubgradientAtZeroIsZero)
{
    Tape tape;
    Var x = tape.leaf(Tensor::scalar(0.0));
    Var y = tape.apply(OpKind::relu, {x});
    EXPECT_EQ(tape.backward(y).of(x).item(), 0.0);
}

TEST(Backward, ConvWeightGradientCountsTouchedPositions)
{
    // sum(conv(ones, w)) with padding 1 on a 4x4 input: each tap touches
    // (rows it can reach) x (cols it can reach) output positions
    const std::vector<Tensor> params{Tensor(Shape{1, 1, 3, 3}, 0.3)};
    TapeFn f = [](Tape& tape, std::span<const Var> p) {
        Var x = tape.constant(Tensor(Shape{1, 1, 4, 4}, 1.0));
        OpAttrs a;
        a.padding = 1;
        return sum_of(tape, tape.apply(OpKind::conv2d, {x, p[0]}, a));
    };
    Tape tape;
    Var w = tape.leaf(params[0]);
    const Var out = f(tape, std::span<const Var>(&w, 1));
    const Tensor g = tape.backward(out).of(w);
    const double expected[9] = {9, 12, 9, 12, 16, 12, 9, 12, 9};
    for (int i = 0; i < 9; ++i) {
        EXPECT_NEAR(g[i], expected[i], 1e-12);
    }
    EXPECT_LT(finite_diff_check(f, params, 1e-5).max_rel_error, 1e-8);
}

TEST(Backward, GroupedStridedConvMatchesFiniteDifferences)
{
    std::mt19937_64 rng(12);
    const std::vector<Tensor> params{test::random_tensor({2, 4, 6, 5}, rng), test::random_tensor({6, 2, 3, 2}, rng)};
    TapeFn f = [](Tape& tape, std::span<const Var> p) {
        OpAttrs a;
        a.stride = 2;
        a.padding = 1;
        a.groups = 2;
        Var y = tape.apply(OpKind::conv2d, {p[0], p[1]}, a);
        return tape.apply(OpKind::std, {tape.apply(OpKind::symlog, {y})});
    };
    EXPECT_LT(finite_diff_check(f, params, 1e-6).max_rel_error, 1e-6);
}

TEST(Backward, NonScalarSeedRejected)
{
    Tape tape;
    Var x = tape.leaf(Tensor(Shape{2}, 1.0));
    EXPECT_THROW((void)tape.backward(x), ShapeError);
}

TEST(Backward, UnreachedLeafGetsZeros)
{
    Tape tape;
    Var x = tape.leaf(Tensor::scalar(2.0));
    Var unused = tape.leaf(Tensor(Shape{3}, 1.0));
    Var y = tape.apply(OpKind::symlog, {x});
    const Gradients g = tape.backward(y);
    EXPECT_EQ(g.of(unused).shape(), (Shape{3}));
    for (double v : g.of(unused).data()) {
        EXPECT_EQ(v, 0.0);
    }
}

TEST(Backward, AddSplitsAndConcatPartitions)
{
    std::mt19937_64 rng(2);
    Tape tape;
    Var a = tape.leaf(test::random_tensor({1, 2, 2, 2}, rng));
    Var b = tape.leaf(test::random_tensor({1, 3, 2, 2}, rng));
    Var cat = tape.apply(OpKind::concat, {a, b});
    Var out = sum_of(tape, tape.apply(OpKind::symlog, {cat}));
    const Gradients g = tape.backward(out);
    const Tensor& ga = g.of(a);
    const Tensor& gb = g.of(b);
    for (std::size_t i = 0; i < ga.size(); ++i) {
        EXPECT_DOUBLE_EQ(ga[i], 1.0 / (std::abs(a.value()[i]) + 1.0));
    }
    for (std::size_t i = 0; i < gb.size(); ++i) {
        EXPECT_DOUBLE_EQ(gb[i], 1.0 / (std::abs(b.value()[i]) + 1.0));
    }

    Tape t2;
    Var x = t2.leaf(test::random_tensor({2, 3}, rng));
    Var y = t2.leaf(test::random_tensor({2, 3}, rng));
    Var s = sum_of(t2, t2.apply(OpKind::symlog, {t2.apply(OpKind::add, {x, y})}));
    const Gradients g2 = t2.backward(s);
    EXPECT_TRUE(g2.of(x).identical(g2.of(y)));
}

TEST(Backward, EveryOpMatchesFiniteDifferences)
{
    std::mt19937_64 rng(123);
    for (OpKind kind : all_op_kinds) {
        for (int trial = 0; trial < 10; ++trial) {
            test::OpInstance inst = test::random_op_instance(kind, rng);
            const double err = test::op_gradcheck(kind, inst.inputs, inst.attrs, rng);
            EXPECT_LE(err, 1e-4) << op_name(kind) << " trial " << trial;
        }
    }
}

TEST(GradCheck, LinearFunctionIsExact)
{
    std::mt19937_64 rng(9);
    const std::vector<Tensor> params{test::random_tensor({3, 4}, rng)};
    const Tensor w = test::random_tensor({2, 4}, rng);
    TapeFn f = [&](Tape& tape, std::span<const Var> p) {
        return tape.apply(OpKind::mean, {tape.apply(OpKind::linear, {p[0], tape.constant(w)})});
    };
    EXPECT_LT(finite_diff_check(f, params, 1e-5).max_rel_error, 1e-9);
}

TEST(GradCheck, SymlogChainAndRelu)
{
    std::mt19937_64 rng(10);
    const std::vector<Tensor> params{test::random_away_from_zero({2, 5}, rng)};
    TapeFn chain = [](Tape& tape, std::span<const Var> p) {
        Var y = tape.apply(OpKind::symlog, {tape.apply(OpKind::symlog, {p[0]})});
        return tape.apply(OpKind::mean, {tape.apply(OpKind::sigmoid, {y})});
    };
    EXPECT_LE(finite_diff_check(chain, params, 1e-5).max_rel_error, 1e-4);
    TapeFn relu = [](Tape& tape, std::span<const Var> p) {
        return tape.apply(OpKind::std, {tape.apply(OpKind::relu, {p[0]})});
    };
    EXPECT_LE(finite_diff_check(relu, params, 1e-5).max_rel_error, 1e-6);
}

TEST(Tape, ReplayIsBitIdentical)
{
    std::mt19937_64 rng(4);
    Tape tape;
    Var x = tape.leaf(test::random_tensor({2, 3, 5, 5}, rng));
    Var w = tape.leaf(test::random_tensor({4, 3, 3, 3}, rng));
    OpAttrs a;
    a.padding = 1;
    Var y = tape.apply(OpKind::conv2d, {x, w}, a);
    y = tape.apply(OpKind::batch_norm_rep, {y});
    y = tape.apply(OpKind::relu, {y});
    (void)tape.apply(OpKind::std, {y});
    EXPECT_TRUE(tape.replay_matches());
}

TEST(Adam, ZeroGradientLeavesParameters)
{
    Tensor p(Shape{3}, std::vector<double>{1, -2, 3});
    const Tensor before = p;
    AdamState state;
    std::vector<Tensor*> params{&p};
    std::vector<Tensor> grads{Tensor(Shape{3})};
    for (int i = 0; i < 5; ++i) {
        adam_step(params, grads, state);
    }
    EXPECT_TRUE(p.identical(before));
    EXPECT_EQ(state.step, 5U);
}

TEST(Adam, FirstStepMovesByLearningRate)
{
    // step 1: m_hat = g, v_hat = g^2, so the update is lr * g / (|g| + eps)
    Tensor p = Tensor::scalar(0.5);
    AdamState state;
    std::vector<Tensor*> params{&p};
    std::vector<Tensor> grads{Tensor::scalar(1.0)};
    adam_step(params, grads, state);
    EXPECT_DOUBLE_EQ(p.item(), 0.5 - 1e-3 / (1.0 + 1e-8));
}

TEST(Adam, IdenticalParametersStayIdentical)
{
    std::mt19937_64 rng(1);
    Tensor a = test::random_tensor({4}, rng);
    Tensor b = a;
    AdamState sa;
    AdamState sb;
    for (int i = 0; i < 20; ++i) {
        const Tensor g = test::random_tensor({4}, rng);
        std::vector<Tensor*> pa{&a};
        std::vector<Tensor*> pb{&b};
        std::vector<Tensor> ga{g};
        adam_step(pa, ga, sa);
        adam_step(pb, ga, sb);
    }
    EXPECT_TRUE(a.identical(b));
}

TEST(Adam, NanGradientNamesParameter)
{
    Tensor p = Tensor::scalar(0.0);
    AdamState state;
    std::vector<Tensor*> params{&p};
    std::vector<Tensor> grads{Tensor::scalar(std::nan(""))};
    std::vector<std::string> names{"mlp.0.weight"};
    try {
        adam_step(params, grads, state, names);
        FAIL();
    } catch (const DegenerateError& e) {
        EXPECT_NE(std::string(e.what()).find("mlp.0.weight"), std::string::npos);
    }
}

TEST(Checkpoint, RoundTripIsBitExact)
{
    std::mt19937_64 rng(8);
    Checkpoint c;
    c.meta["variant"] = "vnorm";
    c.add("freq", test::random_tensor({2, 2, 3, 3}, rng, -1e300, 1e300));
    c.add("scalar", Tensor::scalar(-0.0));
    c.add("denorm", Tensor(Shape{2}, std::vector<double>{5e-324, 1.0 / 3.0}));
    const std::string bytes = encode_checkpoint(c);
    const Checkpoint back = decode_checkpoint(bytes);
    EXPECT_EQ(back.meta, c.meta);
    ASSERT_EQ(back.tensors.size(), c.tensors.size());
    for (std::size_t i = 0; i < c.tensors.size(); ++i) {
        EXPECT_EQ(back.tensors[i].first, c.tensors[i].first);
        EXPECT_TRUE(back.tensors[i].second.identical(c.tensors[i].second));
    }
    EXPECT_EQ(encode_checkpoint(back), bytes);
    EXPECT_THROW((void)decode_checkpoint("garbage"), DataError);
}
