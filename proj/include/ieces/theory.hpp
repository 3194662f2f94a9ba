#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ieces/dataset.hpp"
#include "ieces/siamese.hpp"

namespace ieces {

// Loss surface over raw distances: L(d_same, d_diff) =
// d_same^2 + max(0, m - d_diff^2), with the hinge derivative taken as 0
// exactly at d_diff^2 = m.
struct LossSurfacePoint {
    double d_same = 0.0;
    double d_diff = 0.0;
    double value = 0.0;
    double g_same = 0.0;
    double g_diff = 0.0;
};

LossSurfacePoint loss_surface(double d_same, double d_diff, double m);

struct BoundaryGradientResult {
    bool pass = false;
    double worst_dot = 0.0;   // min over the grid of (-grad) . (-1, 1)
    double worst_d_same = 0.0;
};

// Samples the separation boundary d_diff = d_same + m_sep at `grid` points
// with d_same in (0, 3*sqrt(m)] and checks that the descent direction has a
// positive component along (-1, 1), i.e. it shrinks d_same and grows d_diff.
BoundaryGradientResult boundary_gradient_check(double m, double m_sep, int grid);

struct MinimizerResult {
    double d_star = 0.0;
    double value = 0.0;
};

// Minimizes L(d, d + m_sep) over d >= 0 by grid search plus ternary
// refinement. Closed form: sqrt(m) - m_sep when m > m_sep^2, else 0.
MinimizerResult boundary_minimizer(double m, double m_sep);

struct ConvexityWitness {
    double p_same, p_diff, q_same, q_diff;
    double lhs;   // L(midpoint)
    double rhs;   // (L(p) + L(q)) / 2
};

struct ConvexityResult {
    double violation_fraction = 0.0;
    std::vector<ConvexityWitness> witnesses;  // at most 10
};

// Monte-Carlo midpoint-convexity probe of the full loss surface.
ConvexityResult convexity_probe(double m, int samples, std::uint64_t seed);

struct FeasibilityResult {
    bool defined = false;     // false when positives or negatives are missing
    double max_same = 0.0;
    double min_diff = 0.0;
    double m_sep = 0.0;       // min_diff - max_same; negative means infeasible
};

// Margin between the worst positive distance and the best negative distance
// over encoded samples.
FeasibilityResult constraint1_feasibility(const std::vector<FeatureCode>& codes,
                                          const std::vector<int>& labels,
                                          const TemplateCodebook& codebook);

}  // namespace ieces
