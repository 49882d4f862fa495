#pragma once

// Handcrafted zero-cost proxies: parameter count and a binary-activation-code
// kernel score, plus ingestion of externally computed scores.

#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ftscore/arch/graph.hpp"
#include "ftscore/error.hpp"
#include "ftscore/rep/builder.hpp"
#include "ftscore/util/digest.hpp"

namespace ftscore::baselines {

using arch::ArchGraph;

inline double params_proxy(const ArchGraph& g) { return static_cast<double>(arch::count_params(g)); }

struct NaswotResult {
    /// log|det K|, or -infinity when K is singular.
    double score = 0.0;
    bool singular = false;
    /// Total ReLU units per input.
    std::size_t units = 0;
    /// Kernel matrix, B x B.
    Eigen::MatrixXd kernel;
};

/// Binary codes of every ReLU output, one row per batch element.
inline std::vector<std::vector<bool>> activation_codes(const ArchGraph& g, const Tensor& batch, std::uint64_t seed)
{
    if (batch.rank() != 4 || batch.dim(0) < 2) {
        throw UsageError("naswot: batch must be (B, C, H, W) with B >= 2, got " + shape_str(batch.shape()));
    }
    const rep::ConstructedArch ca = rep::build(g);
    rep::EagerContext ctx;
    rep::KaimingWeights w(seed);
    const std::size_t b = batch.dim(0);
    std::vector<std::vector<bool>> codes(b);
    const rep::NodeObserver observe = [&](std::size_t node, const Tensor& out) {
        if (g.node(node).op.kind != arch::LayerKind::relu) {
            return;
        }
        const std::size_t per = out.size() / b;
        for (std::size_t i = 0; i < b; ++i) {
            for (std::size_t j = 0; j < per; ++j) {
                codes[i].push_back(out[i * per + j] > 0.0);
            }
        }
    };
    (void)rep::execute(ca, ctx, ctx.constant(batch), w, rep::FactorMode::none, nullptr, observe);
    return codes;
}

/// K[i][j] = N_A - hamming(code_i, code_j).
inline Eigen::MatrixXd hamming_kernel(const std::vector<std::vector<bool>>& codes)
{
    const auto b = static_cast<Eigen::Index>(codes.size());
    const double units = codes.empty() ? 0.0 : static_cast<double>(codes[0].size());
    Eigen::MatrixXd k(b, b);
    for (Eigen::Index i = 0; i < b; ++i) {
        for (Eigen::Index j = i; j < b; ++j) {
            std::size_t dist = 0;
            const auto& ci = codes[static_cast<std::size_t>(i)];
            const auto& cj = codes[static_cast<std::size_t>(j)];
            for (std::size_t u = 0; u < ci.size(); ++u) {
                dist += ci[u] != cj[u] ? 1 : 0;
            }
            k(i, j) = k(j, i) = units - static_cast<double>(dist);
        }
    }
    return k;
}

/// log|det K| through a pivoted LU; a zero pivot marks K singular.
inline NaswotResult kernel_logdet(Eigen::MatrixXd k, std::size_t units)
{
    NaswotResult r;
    r.units = units;
    const Eigen::FullPivLU<Eigen::MatrixXd> lu(k);
    r.kernel = std::move(k);
    if (!lu.isInvertible()) {
        r.singular = true;
        r.score = -std::numeric_limits<double>::infinity();
        return r;
    }
    const Eigen::MatrixXd& u = lu.matrixLU();
    for (Eigen::Index i = 0; i < u.rows(); ++i) {
        r.score += std::log(std::abs(u(i, i)));
    }
    return r;
}

/// Kernel score of an untrained network with seeded Kaiming weights on `batch`.
/// Two inputs with identical codes make K singular; the result then carries
/// score -infinity and `singular`.
inline NaswotResult naswot_proxy(const ArchGraph& g, const Tensor& batch, std::uint64_t seed)
{
    const auto codes = activation_codes(g, batch, seed);
    const std::size_t units = codes[0].size();
    if (units == 0) {
        throw UsageError("naswot: graph has no ReLU units");
    }
    for (std::size_t i = 0; i < codes.size(); ++i) {
        for (std::size_t j = i + 1; j < codes.size(); ++j) {
            if (codes[i] == codes[j]) {
                NaswotResult r;
                r.units = units;
                r.kernel = hamming_kernel(codes);
                r.singular = true;
                r.score = -std::numeric_limits<double>::infinity();
                return r;
            }
        }
    }
    return kernel_logdet(hamming_kernel(codes), units);
}

/// Reads "arch_id,score" lines (an optional header line is skipped). Duplicate
/// ids and unparsable scores are data errors.
inline std::map<std::string, double> parse_score_csv(const std::string& text, const std::string& origin = "<memory>")
{
    std::map<std::string, double> out;
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        if (line.find_first_not_of(" \t") == std::string::npos) {
            continue;
        }
        const std::string where = origin + ":" + std::to_string(line_no);
        const std::size_t comma = line.rfind(',');
        if (comma == std::string::npos) {
            throw DataError(where + ": expected 'arch_id,score'");
        }
        std::string id = line.substr(0, comma);
        if (id.size() >= 2 && id.front() == '"' && id.back() == '"') {
            id = id.substr(1, id.size() - 2);
        }
        const std::string value = line.substr(comma + 1);
        double score = 0.0;
        std::size_t used = 0;
        try {
            score = std::stod(value, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used == 0 || value.find_first_not_of(" \t", used) != std::string::npos) {
            if (line_no == 1 && out.empty()) {
                continue;  // header
            }
            throw DataError(where + ": score '" + value + "' is not a number");
        }
        if (!out.emplace(id, score).second) {
            throw DataError(where + ": duplicate arch id '" + id + "'");
        }
    }
    return out;
}

inline std::map<std::string, double> load_score_csv(const std::string& path)
{
    return parse_score_csv(util::read_file(path), path);
}

} // namespace ftscore::baselines
