#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "ftscore/eval/harness.hpp"
#include "ftscore/train/synthetic.hpp"

using namespace ftscore;
using namespace ftscore::eval;

namespace {

// graph-free dataset: accuracies only, ids "e<i>"
BenchmarkDataset plain_dataset(std::size_t n, std::uint64_t seed, const std::string& id = "plain")
{
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    BenchmarkDataset ds;
    ds.space_id = id;
    for (std::size_t i = 0; i < n; ++i) {
        ds.entries.push_back({"e" + std::to_string(i), nullptr, u(rng)});
        (i % 2 == 0 ? ds.train : ds.test).push_back(i);
    }
    return ds;
}

NamedScorer negated_accuracy()
{
    return {"neg", [](const BenchmarkDataset& ds, std::span<const std::size_t> idx) {
                std::vector<double> out;
                for (std::size_t i : idx) {
                    out.push_back(-ds.entries[i].accuracy);
                }
                return out;
            }};
}

NamedScorer random_scorer(const std::string& name, std::uint64_t seed)
{
    return {name, [seed](const BenchmarkDataset& ds, std::span<const std::size_t> idx) {
                std::vector<double> out;
                for (std::size_t i : idx) {
                    std::seed_seq seq{seed, static_cast<std::uint64_t>(i)};
                    std::mt19937_64 rng(seq);
                    out.push_back(std::uniform_real_distribution<double>(0.0, 1.0)(rng));
                }
                (void)ds;
                return out;
            }};
}

NamedScorer constant_scorer()
{
    return {"const", [](const BenchmarkDataset&, std::span<const std::size_t> idx) {
                return std::vector<double>(idx.size(), 0.25);
            }};
}

} // namespace

TEST(CorrelationTable, AccuracyAndItsNegation)
{
    const std::vector<BenchmarkDataset> ds{plain_dataset(50, 1, "a"), plain_dataset(80, 2, "b")};
    const std::vector<NamedScorer> scorers{accuracy_scorer(), negated_accuracy()};
    const Table t = correlation_table(scorers, ds, {30, 4});
    ASSERT_EQ(t.cells.size(), 2U);
    for (std::size_t j = 0; j < 2; ++j) {
        EXPECT_NEAR(*t.cells[0][j].value, 1.0, 1e-12);
        EXPECT_NEAR(*t.cells[1][j].value, -1.0, 1e-12);
    }
    const Table k = correlation_table(scorers, ds, {30, 4}, Metric::kendall);
    EXPECT_NEAR(*k.cells[1][0].value, -1.0, 1e-12);
    EXPECT_EQ(k.corner, "kendall");
    EXPECT_TRUE(t.warnings.empty());
}

TEST(CorrelationTable, ParamsProxyOnNoiselessSyntheticSpace)
{
    train::SyntheticOptions o;
    o.count = 60;
    o.noise = 0.0;
    const std::vector<BenchmarkDataset> ds{train::synthetic_dataset(o, 3)};
    const std::vector<NamedScorer> scorers{params_scorer()};
    const Table t = correlation_table(scorers, ds, {1000, 0});
    EXPECT_NEAR(*t.cells[0][0].value, 1.0, 1e-12);
    ASSERT_EQ(t.warnings.size(), 1U);
    EXPECT_NE(t.warnings[0].find("clamped to 60"), std::string::npos);
}

TEST(CorrelationTable, SeededAndReproducible)
{
    const std::vector<BenchmarkDataset> ds{plain_dataset(200, 5)};
    const std::vector<NamedScorer> scorers{random_scorer("r", 1)};
    const Table a = correlation_table(scorers, ds, {40, 9});
    const Table b = correlation_table(scorers, ds, {40, 9});
    const Table c = correlation_table(scorers, ds, {40, 10});
    EXPECT_EQ(to_csv(a), to_csv(b));
    EXPECT_NE(to_csv(a), to_csv(c));
    EXPECT_EQ(sample_entries(ds[0], 0, {40, 9}).size(), 40U);
    SampleOptions test_only{40, 9, true};
    for (std::size_t i : sample_entries(ds[0], 0, test_only)) {
        EXPECT_EQ(i % 2, 1U);
    }
}

TEST(CorrelationTable, UndefinedCellsCarryReasons)
{
    const std::vector<BenchmarkDataset> ds{plain_dataset(20, 6)};
    const std::vector<NamedScorer> scorers{constant_scorer(), table_scorer("ext", {{"e0", 1.0}})};
    const Table t = correlation_table(scorers, ds, {20, 0});
    EXPECT_FALSE(t.cells[0][0].value);
    EXPECT_FALSE(t.cells[0][0].reason.empty());
    EXPECT_FALSE(t.cells[1][0].value);
    EXPECT_NE(t.cells[1][0].reason.find("no external score"), std::string::npos);
    const std::string text = to_text(t);
    EXPECT_NE(text.find("null"), std::string::npos);
    EXPECT_NE(text.find("const / plain:"), std::string::npos);
    EXPECT_EQ(to_csv(t), "spearman,plain\nconst,\next,\n");
}

TEST(ScoreScoreTable, SelfMonotoneAndIndependent)
{
    const std::vector<BenchmarkDataset> ds{plain_dataset(1000, 7, "a"), plain_dataset(1000, 8, "b")};
    const NamedScorer base = random_scorer("r1", 11);
    const NamedScorer cubed{"r1^3", [&](const BenchmarkDataset& d, std::span<const std::size_t> idx) {
                                auto v = base.fn(d, idx);
                                for (double& x : v) {
                                    x = x * x * x - 4.0;
                                }
                                return v;
                            }};
    const std::vector<NamedScorer> scorers{base, cubed, random_scorer("r2", 12), constant_scorer()};
    const Table t = score_score_table(scorers, ds, {1000, 0});
    EXPECT_NEAR(*t.cells[0][0].value, 1.0, 1e-12);
    EXPECT_NEAR(*t.cells[0][1].value, 1.0, 1e-12);
    EXPECT_NEAR(*t.cells[1][0].value, 1.0, 1e-12);
    EXPECT_LT(std::abs(*t.cells[0][2].value), 0.1);
    EXPECT_EQ(*t.cells[0][2].value, *t.cells[2][0].value);
    EXPECT_FALSE(t.cells[3][0].value);
    EXPECT_FALSE(t.cells[3][0].reason.empty());
}

TEST(GreedyTopK, TrivialCasesAndMonotonicity)
{
    const BenchmarkDataset ds = plain_dataset(41, 9);
    double test_max = 0.0;
    double train_max = 0.0;
    for (std::size_t i : ds.test) {
        test_max = std::max(test_max, ds.entries[i].accuracy);
    }
    for (std::size_t i : ds.train) {
        train_max = std::max(train_max, ds.entries[i].accuracy);
    }
    const NamedScorer rnd = random_scorer("r", 3);
    EXPECT_EQ(greedy_topk_search(ds, rnd, ds.test.size(), false).best_accuracy, test_max);
    EXPECT_EQ(greedy_topk_search(ds, accuracy_scorer(), 1, false).best_accuracy, test_max);
    EXPECT_EQ(greedy_topk_search(ds, negated_accuracy(), 1, true).best_accuracy,
              std::max(train_max, greedy_topk_search(ds, negated_accuracy(), 1, false).best_accuracy));
    double prev = -1.0;
    for (std::size_t k = 1; k <= ds.test.size(); ++k) {
        const TopKResult r = greedy_topk_search(ds, rnd, k, false);
        EXPECT_EQ(r.visited.size(), k);
        EXPECT_GE(r.best_accuracy, prev);
        prev = r.best_accuracy;
    }
    const std::vector<double> wrong(3, 0.0);
    EXPECT_THROW((void)greedy_topk(ds, wrong, 1), UsageError);
    EXPECT_THROW((void)greedy_topk_search(ds, rnd, 0), UsageError);
}

TEST(Rendering, AlignedTextAndQuotedCsv)
{
    Table t;
    t.corner = "spearman";
    t.rows = {"a,b", "longer-name"};
    t.cols = {"x", "y"};
    t.cells = {{Cell{0.5, {}}, Cell{-1.0, {}}}, {Cell{0.25, {}}, Cell{std::nullopt, "constant"}}};
    EXPECT_EQ(to_csv(t), "spearman,x,y\n\"a,b\",0.5000,-1.0000\nlonger-name,0.2500,\n");
    EXPECT_EQ(to_text(t),
              "spearman          x        y\n"
              "a,b          0.5000  -1.0000\n"
              "longer-name  0.2500     null\n"
              "null longer-name / y: constant\n");
}
