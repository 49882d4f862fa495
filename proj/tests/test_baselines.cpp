#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "ftscore/arch/nb201.hpp"
#include "ftscore/baselines/proxies.hpp"
#include "test_support.hpp"

using namespace ftscore;
using namespace ftscore::baselines;
using arch::GraphBuilder;
using arch::LayerSpec;

namespace {

ArchGraph two_layer_net(bool with_bn)
{
    GraphBuilder b("x", 2, 4);
    std::string cur = b.then("c1", LayerSpec::conv(2, 3, 3, 3, 1, 1), b.input());
    if (with_bn) {
        cur = b.then("bn", LayerSpec::batch_norm(), cur);
    }
    cur = b.then("r1", LayerSpec::relu(), cur);
    cur = b.then("c2", LayerSpec::conv(3, 2, 1, 1, 1, 0), cur);
    cur = b.then("r2", LayerSpec::relu(), cur);
    return ArchGraph(b.finish(cur));
}

ArchGraph relu_only(std::size_t channels, std::size_t size)
{
    GraphBuilder b("x", channels, size);
    return ArchGraph(b.finish(b.then("r", LayerSpec::relu(), b.input())));
}

double det3(const double k[3][3])
{
    return k[0][0] * (k[1][1] * k[2][2] - k[1][2] * k[2][1]) - k[0][1] * (k[1][0] * k[2][2] - k[1][2] * k[2][0]) +
           k[0][2] * (k[1][0] * k[2][1] - k[1][1] * k[2][0]);
}

} // namespace

TEST(ParamsProxy, IdentityGraphHasNoParameters)
{
    GraphBuilder b("x", 3, 8);
    const ArchGraph g(b.finish(b.then("id", LayerSpec::identity(), b.input())));
    EXPECT_EQ(params_proxy(g), 0.0);
}

TEST(ParamsProxy, OneExtraConvAddsItsWeights)
{
    GraphBuilder a("x", 8, 8);
    const ArchGraph g1(a.finish(a.then("c", LayerSpec::conv(8, 8, 3, 3, 1, 1), a.input())));
    GraphBuilder b("x", 8, 8);
    const std::string c = b.then("c", LayerSpec::conv(8, 8, 3, 3, 1, 1), b.input());
    const ArchGraph g2(b.finish(b.then("c2", LayerSpec::conv(8, 8, 3, 3, 1, 1), c)));
    EXPECT_EQ(params_proxy(g2) - params_proxy(g1), 576.0);
    EXPECT_EQ(params_proxy(g1), std::floor(params_proxy(g1)));
}

TEST(Naswot, IdenticalInputsAreSingular)
{
    std::mt19937_64 rng(1);
    Tensor one = test::random_tensor({1, 2, 4, 4}, rng);
    Tensor batch(Shape{2, 2, 4, 4});
    for (std::size_t i = 0; i < one.size(); ++i) {
        batch[i] = batch[one.size() + i] = one[i];
    }
    const NaswotResult r = naswot_proxy(two_layer_net(false), batch, 3);
    EXPECT_TRUE(r.singular);
    EXPECT_EQ(r.score, -std::numeric_limits<double>::infinity());
}

TEST(Naswot, ComplementaryCodesGiveDiagonalKernel)
{
    // x and -x through a lone ReLU: every unit flips
    std::mt19937_64 rng(2);
    const Tensor x = test::random_away_from_zero({1, 3, 5, 5}, rng);
    Tensor batch(Shape{2, 3, 5, 5});
    for (std::size_t i = 0; i < x.size(); ++i) {
        batch[i] = x[i];
        batch[x.size() + i] = -x[i];
    }
    const NaswotResult r = naswot_proxy(relu_only(3, 5), batch, 0);
    EXPECT_FALSE(r.singular);
    EXPECT_EQ(r.units, 75U);
    EXPECT_EQ(r.kernel(0, 1), 0.0);
    EXPECT_EQ(r.kernel(0, 0), 75.0);
    EXPECT_NEAR(r.score, 2.0 * std::log(75.0), 1e-12);
}

TEST(Naswot, MatchesHandAssembledKernelDeterminant)
{
    const ArchGraph g = two_layer_net(false);
    const std::uint64_t seed = 17;
    std::mt19937_64 rng(4);
    const Tensor batch = test::random_tensor({3, 2, 4, 4}, rng);

    // oracle: same seeded weights, plain ops, codes and determinant by hand
    rep::EagerContext ctx;
    rep::KaimingWeights kw(seed);
    const std::size_t c1 = g.index_of("c1");
    const std::size_t c2 = g.index_of("c2");
    const auto w1 = kw(ctx, c1, g.node(c1).op);
    const auto w2 = kw(ctx, c2, g.node(c2).op);
    OpAttrs pad1;
    pad1.padding = 1;
    const Tensor h1 = forward(OpKind::conv2d, {&batch, w1.get()}, pad1);
    const Tensor r1 = forward(OpKind::relu, {&h1});
    const Tensor h2 = forward(OpKind::conv2d, {&r1, w2.get()});
    const Tensor r2 = forward(OpKind::relu, {&h2});
    std::vector<std::vector<int>> codes(3);
    for (const Tensor* t : {&r1, &r2}) {
        const std::size_t per = t->size() / 3;
        for (std::size_t i = 0; i < 3; ++i) {
            for (std::size_t j = 0; j < per; ++j) {
                codes[i].push_back((*t)[i * per + j] > 0.0 ? 1 : 0);
            }
        }
    }
    const double na = static_cast<double>(codes[0].size());
    double k[3][3];
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) {
            double ham = 0.0;
            for (std::size_t u = 0; u < codes[0].size(); ++u) {
                ham += codes[static_cast<std::size_t>(i)][u] != codes[static_cast<std::size_t>(j)][u] ? 1.0 : 0.0;
            }
            k[i][j] = na - ham;
        }
    }
    const NaswotResult r = naswot_proxy(g, batch, seed);
    ASSERT_FALSE(r.singular);
    EXPECT_EQ(r.units, static_cast<std::size_t>(na));
    EXPECT_EQ(na, 3.0 * 16 + 2.0 * 16);
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) {
            EXPECT_EQ(r.kernel(i, j), k[i][j]);
        }
    }
    EXPECT_NEAR(r.score, std::log(std::abs(det3(k))), 1e-10);
}

TEST(Naswot, PositiveInputScalingLeavesScoreUnchanged)
{
    std::mt19937_64 rng(5);
    Tensor batch = test::random_tensor({4, 2, 4, 4}, rng);
    for (bool bn : {false, true}) {
        const ArchGraph g = two_layer_net(bn);
        const double base = naswot_proxy(g, batch, 9).score;
        Tensor scaled = batch;
        for (double& v : scaled.data()) {
            v *= 3.7;
        }
        EXPECT_EQ(naswot_proxy(g, scaled, 9).score, base);
        EXPECT_TRUE(std::isfinite(base));
    }
}

TEST(Naswot, DeterministicInSeedAndRejectsBadBatches)
{
    std::mt19937_64 rng(6);
    const Tensor batch = test::random_tensor({4, 3, 8, 8}, rng);
    const ArchGraph g = arch::nb201_graph(
        arch::parse_nb201_cell("|nor_conv_3x3~0|+|nor_conv_1x1~0|skip_connect~1|+|none~0|avg_pool_3x3~1|nor_conv_3x3~2|"),
        {4, 1, 8, 10});
    EXPECT_EQ(naswot_proxy(g, batch, 1).score, naswot_proxy(g, batch, 1).score);
    EXPECT_THROW((void)naswot_proxy(g, Tensor(Shape{1, 3, 8, 8}), 1), UsageError);
    EXPECT_THROW((void)naswot_proxy(g, Tensor(Shape{4, 3, 8}), 1), UsageError);
}

TEST(ScoreCsv, ParsesHeaderQuotesAndRejectsBadRows)
{
    const auto m = parse_score_csv("arch_id,score\n\"a,b\",1.5\nKXKX:3:1:8:8:1,-2e-3\r\n\n|x~0|,7\n");
    ASSERT_EQ(m.size(), 3U);
    EXPECT_EQ(m.at("a,b"), 1.5);
    EXPECT_EQ(m.at("KXKX:3:1:8:8:1"), -2e-3);
    EXPECT_EQ(m.at("|x~0|"), 7.0);
    EXPECT_THROW((void)parse_score_csv("a,1\na,2\n"), DataError);
    EXPECT_THROW((void)parse_score_csv("a,1\nb,zz\n"), DataError);
    EXPECT_THROW((void)parse_score_csv("a,1\nno-comma\n"), DataError);
    EXPECT_THROW((void)parse_score_csv("a,1\nb,3x\n"), DataError);
}
