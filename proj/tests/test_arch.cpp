#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "ftscore/arch/genome.hpp"
#include "ftscore/arch/graph_json.hpp"
#include "ftscore/arch/nb201.hpp"

using namespace ftscore;
using namespace ftscore::arch;

namespace {

const std::string all_skip =
    "|skip_connect~0|+|skip_connect~0|skip_connect~1|+|skip_connect~0|skip_connect~1|skip_connect~2|";
const std::string all_none = "|none~0|+|none~0|none~1|+|none~0|none~1|none~2|";
const std::string all_conv3 = "|nor_conv_3x3~0|+|nor_conv_3x3~0|nor_conv_3x3~1|+|nor_conv_3x3~0|"
                              "nor_conv_3x3~1|nor_conv_3x3~2|";

// Hand enumeration of the fixed skeleton: stem conv + BN, two residual
// reduction blocks (two 3x3 conv + BN, 1x1 shortcut conv), final BN, classifier.
std::size_t nb201_skeleton_params(std::size_t c, std::size_t classes)
{
    std::size_t total = 3 * c * 9 + 2 * c;
    for (std::size_t cin : {c, 2 * c}) {
        const std::size_t cout = 2 * cin;
        total += cin * cout * 9 + 2 * cout + cout * cout * 9 + 2 * cout + cin * cout;
    }
    total += 2 * 4 * c;
    total += 4 * c * classes + classes;
    return total;
}

// Per-cell parameter cost of one edge op at width c.
std::size_t nb201_edge_params(Nb201Op op, std::size_t c)
{
    switch (op) {
    case Nb201Op::nor_conv_1x1: return c * c + 2 * c;
    case Nb201Op::nor_conv_3x3: return 9 * c * c + 2 * c;
    default: return 0;
    }
}

// Closed-form parameter count of a decoded genome.
std::size_t genome_params(const ResNetGenome& g, std::size_t c_in)
{
    std::size_t total = 0;
    std::size_t c = c_in;
    for (const GenomeBlock& b : g.blocks) {
        const std::size_t k2 = b.kernel * b.kernel;
        for (std::size_t s = 0; s < b.sublayers; ++s) {
            const std::size_t stride = s == 0 ? b.stride : 1;
            if (b.type == BlockType::kxkx) {
                total += k2 * c * b.bottleneck + 2 * b.bottleneck;
                total += k2 * b.bottleneck * b.channels + 2 * b.channels;
            } else {
                total += c * b.bottleneck + 2 * b.bottleneck;
                total += k2 * b.bottleneck * b.bottleneck + 2 * b.bottleneck;
                total += b.bottleneck * b.channels + 2 * b.channels;
            }
            if (c != b.channels || stride != 1) {
                total += c * b.channels + 2 * b.channels;
            }
            c = b.channels;
        }
    }
    return total;
}

ResNetGenome random_genome(std::mt19937_64& rng)
{
    auto pick = [&](std::size_t lo, std::size_t hi) {
        return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
    };
    ResNetGenome g;
    const std::size_t n = pick(1, 18);
    for (std::size_t i = 0; i < n; ++i) {
        GenomeBlock b;
        b.type = pick(0, 1) == 0 ? BlockType::kxkx : BlockType::k1kxk1;
        b.kernel = 3 + 2 * pick(0, 2);
        b.stride = pick(1, 2);
        b.channels = 8 * pick(1, 256);
        b.bottleneck = 8 * pick(1, 32);
        b.sublayers = pick(1, 9);
        g.blocks.push_back(b);
    }
    return g;
}

std::size_t count_kind(const ArchGraph& g, LayerKind kind)
{
    return static_cast<std::size_t>(std::count_if(
        g.nodes().begin(), g.nodes().end(), [&](const Node& n) { return n.op.kind == kind; }));
}

} // namespace

TEST(Params, SingleConvAndBatchNorm)
{
    GraphBuilder b("in", 3, 8);
    const std::string c = b.then("c", LayerSpec::conv(3, 16, 3, 3, 1, 1), "in");
    const std::string n = b.then("bn", LayerSpec::batch_norm(), c);
    const ArchGraph g(b.finish(n));
    EXPECT_EQ(count_params(g), 432U + 32U);
}

TEST(Params, GroupedConvDividesByGroups)
{
    GraphBuilder b("in", 8, 8);
    const ArchGraph g(b.finish(b.then("c", LayerSpec::conv(8, 16, 3, 3, 1, 1, 4), "in")));
    EXPECT_EQ(count_params(g), 8U * 16U * 9U / 4U);
}

TEST(Nb201, ParameterlessCellsCountOnlySkeleton)
{
    EXPECT_EQ(count_params(parse_nb201(all_skip)), nb201_skeleton_params(16, 10));
    EXPECT_EQ(count_params(parse_nb201(all_none)), nb201_skeleton_params(16, 10));
}

TEST(Nb201, MatchesPublishedExtremes)
{
    // smallest and largest parameter counts listed for the CIFAR-10 benchmark
    EXPECT_EQ(count_params(parse_nb201(all_none)), 73306U);
    EXPECT_EQ(count_params(parse_nb201(all_conv3)), 1531546U);
}

TEST(Nb201, EveryCellMatchesEnumeration)
{
    std::mt19937_64 rng(1);
    for (int trial = 0; trial < 40; ++trial) {
        Nb201Cell cell;
        for (auto& op : cell) {
            op = static_cast<Nb201Op>(std::uniform_int_distribution<int>(0, 4)(rng));
        }
        std::size_t expected = nb201_skeleton_params(16, 10);
        for (std::size_t c : {16, 32, 64}) {
            for (Nb201Op op : cell) {
                expected += 5 * nb201_edge_params(op, c);
            }
        }
        const std::string text = nb201_cell_string(cell);
        EXPECT_EQ(parse_nb201_cell(text), cell);
        EXPECT_EQ(count_params(parse_nb201(text)), expected) << text;
    }
}

TEST(Nb201, CellHasSixSlotsAndIdentityWiring)
{
    const ArchGraph g = parse_nb201(all_skip, 16, 1);
    // 6 edges per cell, 3 cells; nodes: input, stem (2), cells, reductions, last (2)
    std::size_t skips = 0;
    std::size_t zeros = 0;
    for (const Node& n : g.nodes()) {
        skips += n.id.ends_with(".skip") ? 1 : 0;
        zeros += n.op.kind == LayerKind::zero ? 1 : 0;
    }
    EXPECT_EQ(skips, 18U);
    EXPECT_EQ(zeros, 0U);
    const ArchGraph z = parse_nb201(all_none, 16, 1);
    const std::size_t out3 = z.index_of("s0.c0.n3");
    ASSERT_EQ(z.preds(out3).size(), 3U);
    for (std::size_t p : z.preds(out3)) {
        EXPECT_EQ(z.node(p).op.kind, LayerKind::zero);
    }
}

TEST(Nb201, CellCountIsConfigurable)
{
    const ArchGraph g = parse_nb201(all_conv3, 16, 2);
    EXPECT_EQ(count_kind(g, LayerKind::conv), 1U + 3U * 2U * 6U + 2U * 3U);
}

TEST(Nb201, MalformedStringsNameTheToken)
{
    try {
        (void)parse_nb201_cell("|skip_connect~0|+|conv_5x5~0|none~1|+|none~0|none~1|none~2|");
        FAIL();
    } catch (const ParseError& e) {
        EXPECT_EQ(e.token(), "conv_5x5");
    }
    EXPECT_THROW((void)parse_nb201_cell("|none~0|+|none~0|none~1|"), ParseError);
    EXPECT_THROW((void)parse_nb201_cell("|none~0|+|none~1|none~0|+|none~0|none~1|none~2|"),
                 ParseError);
    EXPECT_THROW((void)parse_nb201_cell("none~0+|none~0|none~1|+|none~0|none~1|none~2|"),
                 ParseError);
    EXPECT_THROW((void)parse_nb201_cell(""), ParseError);
}

TEST(GraphJson, SingleConvDocument)
{
    const ArchGraph g = parse_graph_json(R"({
        "nodes": [{"id": "in"}, {"id": "c", "op": {"type": "conv", "c_in": 3, "c_out": 8,
                   "kh": 3, "kw": 3}}, {"id": "out"}],
        "edges": [["in", "c"], ["c", "out"]], "input": "in", "output": "out"})");
    EXPECT_EQ(g.nodes().size(), 3U);
    EXPECT_EQ(count_params(g), 216U);
    EXPECT_EQ(g.shape_of(g.output_index()), (NodeShape{8, 30, 30}));
}

TEST(GraphJson, CycleIsReported)
{
    try {
        (void)parse_graph_json(R"({"nodes": [{"id": "a"}, {"id": "b"}],
            "edges": [["a", "b"], ["b", "a"]], "input": "a", "output": "b"})");
        FAIL();
    } catch (const GraphError& e) {
        EXPECT_NE(std::string(e.what()).find("cycle"), std::string::npos);
        EXPECT_FALSE(e.node_id().empty());
    }
}

TEST(GraphJson, SumJunctionMismatchNamesJunction)
{
    try {
        (void)parse_graph_json(R"({"nodes": [{"id": "in"},
            {"id": "a", "op": {"type": "conv", "c_in": 3, "c_out": 8, "kh": 1, "kw": 1}},
            {"id": "b", "op": {"type": "conv", "c_in": 3, "c_out": 16, "kh": 1, "kw": 1}},
            {"id": "j"}],
            "edges": [["in", "a"], ["in", "b"], ["a", "j"], ["b", "j"]],
            "input": "in", "output": "j"})");
        FAIL();
    } catch (const GraphError& e) {
        EXPECT_EQ(e.node_id(), "j");
    }
}

TEST(GraphJson, ConcatJunctionAddsChannels)
{
    const ArchGraph g = parse_graph_json(R"({"nodes": [{"id": "in"},
        {"id": "a", "op": {"type": "conv", "c_in": 3, "c_out": 8, "kh": 1, "kw": 1}},
        {"id": "b", "op": {"type": "conv", "c_in": 3, "c_out": 16, "kh": 1, "kw": 1}},
        {"id": "j"}, {"id": "bn", "op": {"type": "batchnorm"}}],
        "edges": [["in", "a"], ["in", "b"], ["a", "j"], ["b", "j"], ["j", "bn"]],
        "junction": {"j": "concat"}, "input": "in", "output": "bn"})");
    EXPECT_EQ(g.shape_of(g.index_of("j")).channels, 24U);
    EXPECT_EQ(count_params(g), 24U + 48U + 48U);
}

TEST(GraphJson, SchemaViolations)
{
    EXPECT_THROW((void)parse_graph_json("[1,2]"), GraphError);
    EXPECT_THROW((void)parse_graph_json("{not json"), ParseError);
    EXPECT_THROW((void)parse_graph_json(R"({"nodes": [{"id": "a", "op": {"type": "lstm"}}],
        "edges": [], "input": "a", "output": "a"})"),
                 GraphError);
    EXPECT_THROW((void)parse_graph_json(R"({"nodes": [{"id": "a"}, {"id": "b"}, {"id": "c"}],
        "edges": [["a", "b"]], "input": "a", "output": "b"})"),
                 GraphError);
    EXPECT_THROW((void)parse_graph_json(R"({"nodes": [{"id": "a"},
        {"id": "c", "op": {"type": "conv", "c_in": 4, "c_out": 8, "kh": 1, "kw": 1}}],
        "edges": [["a", "c"]], "input": "a", "output": "c"})"),
                 GraphError);
    EXPECT_THROW((void)parse_graph_json(R"({"nodes": [{"id": "a"},
        {"id": "c", "op": {"type": "conv", "c_in": 3, "c_out": 8, "kh": 1, "kw": 1, "groups": 2}}],
        "edges": [["a", "c"]], "input": "a", "output": "c"})"),
                 GraphError);
}

TEST(GraphJson, RoundTripAndReorderInvariance)
{
    std::mt19937_64 rng(2);
    for (const ArchGraph& g : {parse_nb201(all_conv3, 16, 1), decode_genome(random_genome(rng)),
                               parse_nb201("|avg_pool_3x3~0|+|none~0|nor_conv_1x1~1|+|skip_connect~0|"
                                           "none~1|nor_conv_3x3~2|")}) {
        const ArchGraph back = parse_graph_json(serialize_graph(g));
        EXPECT_TRUE(back.structurally_equal(g));
        EXPECT_EQ(serialize_graph(back), serialize_graph(g));

        GraphDesc shuffled = g.desc();
        std::shuffle(shuffled.nodes.begin(), shuffled.nodes.end(), rng);
        std::shuffle(shuffled.edges.begin(), shuffled.edges.end(), rng);
        const ArchGraph reordered(shuffled);
        EXPECT_TRUE(reordered.structurally_equal(g));
        EXPECT_EQ(count_params(reordered), count_params(g));
    }
}

TEST(Genome, MinimalExpansion)
{
    ResNetGenome g{{GenomeBlock{BlockType::kxkx, 3, 1, 8, 8, 1}}};
    const ArchGraph one = decode_genome(g);
    std::size_t conv3 = 0;
    for (const Node& n : one.nodes()) {
        conv3 += n.op.kind == LayerKind::conv && n.op.kh == 3 ? 1 : 0;
    }
    EXPECT_EQ(conv3, 2U);
    EXPECT_EQ(count_kind(one, LayerKind::conv), 3U);  // plus the 3 -> 8 projection

    g.blocks[0].sublayers = 2;
    const ArchGraph two = decode_genome(g);
    std::size_t conv3_two = 0;
    for (const Node& n : two.nodes()) {
        conv3_two += n.op.kind == LayerKind::conv && n.op.kh == 3 ? 1 : 0;
    }
    EXPECT_EQ(conv3_two, 4U);
}

TEST(Genome, RandomGenomesMatchClosedForm)
{
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 100; ++trial) {
        const ResNetGenome g = random_genome(rng);
        const ArchGraph a = decode_genome(g);
        EXPECT_EQ(count_params(a), genome_params(g, 3)) << genome_to_string(g);
        EXPECT_EQ(serialize_graph(decode_genome(g)), serialize_graph(a));
        EXPECT_EQ(parse_genome(genome_to_string(g)), g);
    }
}

TEST(Genome, HeadAddsClassifier)
{
    const ResNetGenome g{{GenomeBlock{BlockType::k1kxk1, 5, 2, 64, 16, 2}}};
    GenomeDecodeOptions opt;
    opt.classes = 10;
    EXPECT_EQ(count_params(decode_genome(g, opt)), genome_params(g, 3) + 64U * 10U + 10U);
}

TEST(Genome, DomainIsEnforced)
{
    EXPECT_THROW(validate_genome(ResNetGenome{}), UsageError);
    EXPECT_THROW(validate_genome(ResNetGenome{{GenomeBlock{BlockType::kxkx, 4, 1, 8, 8, 1}}}),
                 UsageError);
    EXPECT_THROW(validate_genome(ResNetGenome{{GenomeBlock{BlockType::kxkx, 3, 1, 12, 8, 1}}}),
                 UsageError);
    EXPECT_THROW(validate_genome(ResNetGenome{{GenomeBlock{BlockType::kxkx, 3, 1, 8, 264, 1}}}),
                 UsageError);
    EXPECT_THROW(validate_genome(ResNetGenome{{GenomeBlock{BlockType::kxkx, 3, 1, 8, 8, 10}}}),
                 UsageError);
    EXPECT_THROW((void)parse_genome("KXKX:3:1:8:8"), ParseError);
    EXPECT_THROW((void)parse_genome("RES:3:1:8:8:1"), ParseError);
    EXPECT_THROW((void)parse_genome("KXKX:3:3:8:8:1"), ParseError);
}
