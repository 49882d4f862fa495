#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "ftscore/spectral/materialize.hpp"
#include "ftscore/tensor/gradcheck.hpp"
#include "ftscore/tensor/tape.hpp"
#include "test_support.hpp"

using namespace ftscore;
using namespace ftscore::spectral;

namespace {

// Textbook orthonormal L-point DFT of x zero-padded to L.
std::vector<Complex> naive_dft(const std::vector<double>& x, std::size_t l)
{
    std::vector<Complex> out(l);
    for (std::size_t k = 0; k < l; ++k) {
        Complex acc{};
        for (std::size_t n = 0; n < x.size(); ++n) {
            acc += x[n] * std::polar(1.0, -2.0 * std::numbers::pi * double(k) * double(n) / double(l));
        }
        out[k] = acc / std::sqrt(double(l));
    }
    return out;
}

// Oracle for the resize: pad-and-rescale when growing, trim when shrinking.
std::vector<Complex> naive_resize(const std::vector<double>& x, std::size_t k)
{
    const std::size_t n = x.size();
    if (n <= k) {
        std::vector<Complex> full = naive_dft(x, k);
        for (Complex& c : full) {
            c /= std::sqrt(double(n) / double(k));
        }
        return full;
    }
    std::vector<Complex> full = naive_dft(x, n);
    full.resize(k);
    return full;
}

double energy(std::span<const Complex> v)
{
    double e = 0.0;
    for (const Complex& c : v) {
        e += std::norm(c);
    }
    return e;
}

} // namespace

TEST(DftResize, MatchesNaiveOracle)
{
    std::mt19937_64 rng(1);
    for (std::size_t n = 1; n <= 9; ++n) {
        for (std::size_t k = 1; k <= 9; ++k) {
            const Tensor x = test::random_tensor({n}, rng);
            const std::vector<double> xv(x.data().begin(), x.data().end());
            const auto got = dft_resize_1d(std::span<const double>(xv), k);
            const auto want = naive_resize(xv, k);
            ASSERT_EQ(got.size(), k);
            for (std::size_t i = 0; i < k; ++i) {
                EXPECT_NEAR(std::abs(got[i] - want[i]), 0.0, 1e-10) << n << "->" << k;
            }
        }
    }
}

TEST(DftResize, EnergyByRegime)
{
    std::mt19937_64 rng(2);
    const Tensor x = test::random_tensor({6}, rng);
    const std::vector<double> xv(x.data().begin(), x.data().end());
    double e0 = 0.0;
    for (double v : xv) {
        e0 += v * v;
    }
    EXPECT_NEAR(energy(dft_resize_1d(std::span<const double>(xv), 6)), e0, 1e-12);
    EXPECT_NEAR(energy(dft_resize_1d(std::span<const double>(xv), 10)), e0 * 10.0 / 6.0, 1e-12);
    EXPECT_LE(energy(dft_resize_1d(std::span<const double>(xv), 4)), e0 + 1e-12);
}

TEST(DftResize, UnitImpulseToFour)
{
    const std::vector<double> x{1.0, 0.0};
    const auto y = dft_resize_1d(std::span<const double>(x), 4);
    for (const Complex& c : y) {
        EXPECT_NEAR(std::abs(c), 1.0 / std::sqrt(2.0), 1e-15);
    }
}

TEST(DftResize, AllOnesThreeByThreeToOne)
{
    const std::vector<double> m(9, 1.0);
    const auto y = dft_resize_2d(std::span<const double>(m), 3, 3, 1, 1);
    ASSERT_EQ(y.size(), 1U);
    EXPECT_NEAR(y[0].real(), 3.0, 1e-14);
    EXPECT_NEAR(y[0].imag(), 0.0, 1e-14);
}

TEST(DftResize, UpThenDownScalesSingletonByThree)
{
    // 1x1 -> 3x3 spreads v/sqrt(1) over nine cells; trimming back to DC sums
    // them with weight 1/3 per axis: 9 * v / 3 = 3v
    const std::vector<double> m{0.7};
    const auto up = dft_resize_2d(std::span<const double>(m), 1, 1, 3, 3);
    for (const Complex& c : up) {
        EXPECT_NEAR(std::abs(c - Complex(0.7)), 0.0, 1e-14);
    }
    const auto back = dft_resize_2d(std::span<const Complex>(up), 3, 3, 1, 1);
    EXPECT_NEAR(back[0].real(), 3.0 * 0.7, 1e-14);
}

TEST(DftResize, EmptyInputRejected)
{
    const std::vector<double> x;
    EXPECT_THROW((void)dft_resize_1d(std::span<const double>(x), 3), ShapeError);
    const std::vector<double> y{1.0};
    EXPECT_THROW((void)dft_resize_1d(std::span<const double>(y), 0), ShapeError);
}

TEST(DftResize, CoefficientVarianceIsPreserved)
{
    std::mt19937_64 rng(3);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (auto [n, k] : {std::pair<std::size_t, std::size_t>{5, 11}, {16, 7}, {8, 8}}) {
        double sum_re = 0.0;
        double sum_sq = 0.0;
        std::size_t count = 0;
        for (int trial = 0; trial < 4000; ++trial) {
            std::vector<double> x(n);
            for (double& v : x) {
                v = normal(rng);
            }
            for (const Complex& c : dft_resize_1d(std::span<const double>(x), k)) {
                sum_re += c.real();
                sum_sq += std::norm(c);
                ++count;
            }
        }
        EXPECT_NEAR(sum_re / double(count), 0.0, 0.05) << n << "->" << k;
        EXPECT_NEAR(sum_sq / double(count), 1.0, 0.05) << n << "->" << k;
    }
}

TEST(Materialize, ShapeAndDeterminism)
{
    std::mt19937_64 rng(4);
    const FrequencyKernel fk = FrequencyKernel::random(8, 5, rng);
    const KernelGeometry g{3, 16, 3, 3};
    const Tensor a = materialize(fk, g);
    const Tensor b = materialize(fk, g);
    EXPECT_EQ(a.shape(), (Shape{16, 3, 3, 3}));
    EXPECT_TRUE(a.identical(b));
    for (double v : a.data()) {
        EXPECT_GE(v, 0.0);
    }
}

TEST(Materialize, FullSizeKeepsEnergyOfCoefficients)
{
    std::mt19937_64 rng(5);
    const FrequencyKernel fk = FrequencyKernel::random(4, 3, rng);
    const Tensor w = materialize(fk, KernelGeometry{4, 4, 3, 3});
    double ew = 0.0;
    double ef = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
        ew += w[i] * w[i];
        ef += fk.freq[i] * fk.freq[i];
    }
    EXPECT_NEAR(ew, ef, 1e-10);
}

TEST(Materialize, MatchesHandComposedResizes)
{
    // (1,1,1,1) frequency tensor: every axis grows from one point, so each
    // output entry is |f| regardless of geometry
    const FrequencyKernel fk{Tensor(Shape{1, 1, 1, 1}, -1.25)};
    const Tensor w = materialize(fk, KernelGeometry{2, 3, 3, 1});
    for (double v : w.data()) {
        EXPECT_NEAR(v, 1.25, 1e-14);
    }
}

TEST(Materialize, BadShapesRejected)
{
    const FrequencyKernel bad{Tensor(Shape{2, 2, 3})};
    EXPECT_THROW((void)materialize(bad, KernelGeometry{}), ShapeError);
    const FrequencyKernel ok{Tensor(Shape{2, 2, 3, 3}, 1.0)};
    EXPECT_THROW((void)materialize(ok, KernelGeometry{0, 1, 1, 1}), ShapeError);
}

TEST(Materialize, GradientMatchesFiniteDifferences)
{
    std::mt19937_64 rng(6);
    for (const KernelGeometry g :
         {KernelGeometry{3, 5, 3, 3}, KernelGeometry{1, 2, 1, 1}, KernelGeometry{7, 2, 5, 2}}) {
        const std::vector<Tensor> params{test::random_tensor({4, 4, 3, 3}, rng)};
        TapeFn f = [&](Tape& tape, std::span<const Var> p) {
            OpAttrs a;
            a.geometry = g;
            Var w = tape.apply(OpKind::spectral_materialize, {p[0]}, a);
            return tape.apply(OpKind::std, {tape.apply(OpKind::symlog, {w})});
        };
        EXPECT_LE(finite_diff_check(f, params, 1e-6).max_rel_error, 1e-5);
    }
}

TEST(Materialize, StagedCacheIsBitIdentical)
{
    std::mt19937_64 rng(7);
    const FrequencyKernel fk = FrequencyKernel::random(6, 5, rng);
    CoefficientCache cache(fk.freq);
    for (const KernelGeometry g : {KernelGeometry{3, 5, 3, 3}, KernelGeometry{4, 5, 3, 3}, KernelGeometry{3, 9, 3, 3},
                                   KernelGeometry{3, 5, 1, 3}, KernelGeometry{3, 5, 3, 3}}) {
        const auto direct = materialize_coefficients(fk.freq, g);
        const auto staged = cache.coefficients(g);
        ASSERT_EQ(direct.size(), staged.size());
        for (std::size_t i = 0; i < direct.size(); ++i) {
            EXPECT_EQ(direct[i], staged[i]);
        }
    }
    EXPECT_THROW((void)cache.coefficients(KernelGeometry{0, 1, 1, 1}), ShapeError);
}

TEST(Materialize, GroupedVjpMatchesSumOfSingles)
{
    std::mt19937_64 rng(8);
    const FrequencyKernel fk = FrequencyKernel::random(5, 3, rng);
    const std::vector<KernelGeometry> geoms{{2, 3, 3, 3}, {2, 4, 3, 3}, {3, 4, 3, 3}, {2, 3, 1, 1}, {6, 6, 5, 2}};
    std::vector<std::vector<Complex>> coeffs;
    std::vector<Tensor> grads;
    for (const KernelGeometry& g : geoms) {
        coeffs.push_back(materialize_coefficients(fk.freq, g));
        grads.push_back(test::random_tensor({g.c_out, g.c_in, g.kh, g.kw}, rng));
    }
    std::vector<VjpItem> items;
    Tensor expected(fk.freq.shape());
    for (std::size_t i = 0; i < geoms.size(); ++i) {
        items.push_back({geoms[i], coeffs[i], &grads[i]});
        const Tensor part = materialize_vjp(fk.freq.shape(), geoms[i], coeffs[i], grads[i]);
        for (std::size_t j = 0; j < part.size(); ++j) {
            expected[j] += part[j];
        }
    }
    const Tensor got = materialize_vjp_many(fk.freq.shape(), items);
    for (std::size_t j = 0; j < got.size(); ++j) {
        EXPECT_NEAR(got[j], expected[j], 1e-11);
    }
}
