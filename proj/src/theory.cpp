#include "ieces/theory.hpp"

#include <cmath>
#include <stdexcept>

#include "ieces/rng.hpp"

namespace ieces {

LossSurfacePoint loss_surface(double d_same, double d_diff, double m) {
    if (m <= 0.0) throw std::invalid_argument("loss_surface: margin must be > 0");
    if (d_same < 0.0 || d_diff < 0.0)
        throw std::invalid_argument("loss_surface: distances must be >= 0");
    LossSurfacePoint p;
    p.d_same = d_same;
    p.d_diff = d_diff;
    const double hinge = m - d_diff * d_diff;
    p.value = d_same * d_same + (hinge > 0.0 ? hinge : 0.0);
    p.g_same = 2.0 * d_same;
    p.g_diff = hinge > 0.0 ? -2.0 * d_diff : 0.0;
    return p;
}

BoundaryGradientResult boundary_gradient_check(double m, double m_sep, int grid) {
    if (m <= 0.0 || m_sep <= 0.0)
        throw std::invalid_argument("boundary_gradient_check: m and m_sep must be > 0");
    if (grid < 1) throw std::invalid_argument("boundary_gradient_check: grid must be >= 1");
    BoundaryGradientResult r;
    const double hi = 3.0 * std::sqrt(m);
    bool first = true;
    for (int i = 1; i <= grid; ++i) {
        const double d_same = hi * static_cast<double>(i) / static_cast<double>(grid);
        const auto p = loss_surface(d_same, d_same + m_sep, m);
        // descent direction is -grad; project on (-1, 1)
        const double dot = p.g_same - p.g_diff;
        if (first || dot < r.worst_dot) {
            r.worst_dot = dot;
            r.worst_d_same = d_same;
            first = false;
        }
    }
    r.pass = r.worst_dot > 0.0;
    return r;
}

MinimizerResult boundary_minimizer(double m, double m_sep) {
    if (m <= 0.0 || m_sep <= 0.0)
        throw std::invalid_argument("boundary_minimizer: m and m_sep must be > 0");
    auto f = [&](double d) { return loss_surface(d, d + m_sep, m).value; };
    const double hi = 3.0 * std::sqrt(m);
    const int grid = 2000;
    double best_d = 0.0, best_v = f(0.0);
    for (int i = 1; i <= grid; ++i) {
        const double d = hi * static_cast<double>(i) / static_cast<double>(grid);
        const double v = f(d);
        if (v < best_v) {
            best_v = v;
            best_d = d;
        }
    }
    double lo = std::max(0.0, best_d - hi / grid);
    double up = std::min(hi, best_d + hi / grid);
    for (int it = 0; it < 200; ++it) {
        const double a = lo + (up - lo) / 3.0;
        const double b = up - (up - lo) / 3.0;
        if (f(a) < f(b))
            up = b;
        else
            lo = a;
    }
    MinimizerResult r;
    r.d_star = 0.5 * (lo + up);
    r.value = f(r.d_star);
    if (f(0.0) <= r.value) {
        r.d_star = 0.0;
        r.value = f(0.0);
    }
    return r;
}

ConvexityResult convexity_probe(double m, int samples, std::uint64_t seed) {
    if (m <= 0.0) throw std::invalid_argument("convexity_probe: margin must be > 0");
    if (samples < 1) throw std::invalid_argument("convexity_probe: need at least one sample");
    ConvexityResult r;
    Rng rng(mix_seed(seed, 0xc0742e));
    const double hi = 3.0 * std::sqrt(m);
    int violations = 0;
    for (int i = 0; i < samples; ++i) {
        const double ps = rng.uniform(0.0, hi), pd = rng.uniform(0.0, hi);
        const double qs = rng.uniform(0.0, hi), qd = rng.uniform(0.0, hi);
        const double lhs = loss_surface(0.5 * (ps + qs), 0.5 * (pd + qd), m).value;
        const double rhs = 0.5 * (loss_surface(ps, pd, m).value + loss_surface(qs, qd, m).value);
        if (lhs > rhs + 1e-12) {
            ++violations;
            if (r.witnesses.size() < 10) r.witnesses.push_back({ps, pd, qs, qd, lhs, rhs});
        }
    }
    r.violation_fraction = static_cast<double>(violations) / static_cast<double>(samples);
    return r;
}

FeasibilityResult constraint1_feasibility(const std::vector<FeatureCode>& codes,
                                          const std::vector<int>& labels,
                                          const TemplateCodebook& codebook) {
    if (codes.size() != labels.size())
        throw std::invalid_argument("constraint1_feasibility: codes/labels size mismatch");
    FeasibilityResult r;
    bool any_same = false, any_diff = false;
    for (std::size_t i = 0; i < codes.size(); ++i) {
        for (int j = 0; j < codebook.class_count(); ++j) {
            const double d = distance(codes[i], codebook.at(j));
            if (j == labels[i]) {
                if (!any_same || d > r.max_same) r.max_same = d;
                any_same = true;
            } else {
                if (!any_diff || d < r.min_diff) r.min_diff = d;
                any_diff = true;
            }
        }
    }
    r.defined = any_same && any_diff;
    if (r.defined) r.m_sep = r.min_diff - r.max_same;
    return r;
}

}  // namespace ieces
