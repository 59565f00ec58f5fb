#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "tcv/noise.hpp"

// Regression-based conditional expectations under the two information flows.
// F-features at step i use only the path record up to t_i; G-features add a
// finite summary of the whole rate path (terminal Lambda plus equispaced
// lambda samples), the declared approximation of conditioning on F^Lambda.

namespace tcv {

enum class Flow { F, G };

struct FeatureOptions {
    int degree = 2;         // 1 = linear, 2 = + squares and pairwise products
    int lambda_samples = 8; // whole-path lambda summary size (G-flow)
    bool include_rates = true;
    bool include_cums = true;
    bool include_noise = true;
};

using ExtraColumns = std::vector<std::pair<std::string, const std::vector<double>*>>;

struct FeatureSet {
    Flow flow = Flow::G;
    std::size_t step = 0;
    int degree = 2;
    std::size_t n_paths = 0;
    std::vector<std::string> names;
    std::vector<std::vector<double>> cols; // column-major over paths
};

FeatureSet build_features(const PathEnsemble& paths, Flow flow, std::size_t step,
                          const FeatureOptions& opts, const ExtraColumns& extras = {});

struct FitOptions {
    double ridge_scale = 1e-8;     // ridge = ridge_scale * trace(Gram)/dim
    std::span<const double> weights{}; // optional likelihood-ratio weights
    double min_paths_per_dim = 10.0;
    std::string where;             // label for error messages
};

// Least-squares fit of a target on the polynomial expansion of a FeatureSet.
// Prediction is linear in the expanded basis; the intercept is unpenalized.
struct RegressionFit {
    struct Term {
        int kind = 1;       // 1 linear, 2 square, 3 cross product
        std::size_t a = 0;
        std::size_t b = 0;
    };
    std::vector<Term> terms;       // kept terms, in basis order
    std::vector<double> mean;      // standardization per kept term
    std::vector<double> scale;
    std::vector<double> beta;      // slopes on standardized terms
    double intercept = 0.0;
    double r2 = 0.0;
    double cond = 1.0;
    std::size_t n = 0;
    std::vector<std::string> dropped; // degenerate columns removed from the basis
    bool constant_target = false;

    std::size_t dim() const { return terms.size() + 1; }
};

RegressionFit fit_conditional(std::span<const double> target, const FeatureSet& features,
                              const FitOptions& opts = {});

std::vector<double> predict(const RegressionFit& fit, const FeatureSet& features);

// E[E[target | G_{t2}] | G_{t1}] vs E[target | G_{t1}] on the same ensemble.
struct TowerReport {
    double distance = 0.0;     // ensemble L2 between composed and direct predictions
    double rel_distance = 0.0; // relative to the direct prediction's RMS
    double noise_tol = 0.0;    // regression-noise scale the distance is judged against
};

TowerReport tower_check(std::span<const double> target, const FeatureSet& at_t1,
                        const FeatureSet& at_t2, const FitOptions& opts = {});

} // namespace tcv
