#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <vector>

#include "ieces/rng.hpp"
#include "ieces/siamese.hpp"
#include "ieces/theory.hpp"

using namespace ieces;

TEST_CASE("loss_surface: values and gradients on both hinge branches") {
    // active hinge: d_diff^2 < m
    auto p = loss_surface(1.0, 2.0, 6.25);
    CHECK(p.value == doctest::Approx(1.0 + 6.25 - 4.0).epsilon(1e-15));
    CHECK(p.g_same == 2.0);
    CHECK(p.g_diff == -4.0);

    // inactive hinge: d_diff^2 > m
    auto q = loss_surface(1.5, 3.0, 6.25);
    CHECK(q.value == doctest::Approx(2.25).epsilon(1e-15));
    CHECK(q.g_same == 3.0);
    CHECK(q.g_diff == 0.0);

    // exactly on the branch point: hinge counted inactive, derivative 0
    auto b = loss_surface(0.5, 2.5, 6.25);
    CHECK(b.value == doctest::Approx(0.25).epsilon(1e-15));
    CHECK(b.g_diff == 0.0);

    CHECK_THROWS_AS(loss_surface(1.0, 1.0, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(loss_surface(-0.1, 1.0, 1.0), std::invalid_argument);
}

TEST_CASE("loss_surface: analytic gradient matches central differences off the branch line") {
    Rng rng(404);
    const double h = 1e-6;
    int checked = 0;
    while (checked < 200) {
        const double m = rng.uniform(0.5, 25.0);
        const double ds = rng.uniform(0.1, 3.0 * std::sqrt(m));
        const double dd = rng.uniform(0.1, 3.0 * std::sqrt(m));
        if (std::fabs(dd * dd - m) < 0.05) continue;  // keep clear of the kink
        auto p = loss_surface(ds, dd, m);
        const double fd_s =
            (loss_surface(ds + h, dd, m).value - loss_surface(ds - h, dd, m).value) / (2 * h);
        const double fd_d =
            (loss_surface(ds, dd + h, m).value - loss_surface(ds, dd - h, m).value) / (2 * h);
        CHECK(std::fabs(p.g_same - fd_s) <= 1e-8 * std::max(1.0, std::fabs(fd_s)));
        CHECK(std::fabs(p.g_diff - fd_d) <= 1e-8 * std::max(1.0, std::fabs(fd_d)));
        ++checked;
    }
}

TEST_CASE("boundary gradient: worked example and branch cases") {
    // d_same=1, m_sep=1, m=6.25: grad (2, -4); descent dot with (-1,1) is 6
    auto p = loss_surface(1.0, 2.0, 6.25);
    CHECK((-p.g_same) * (-1.0) + (-p.g_diff) * 1.0 == doctest::Approx(6.0).epsilon(1e-15));

    // dead hinge: dot reduces to 2*d_same, positive whenever d_same > 0
    for (double ds : {0.3, 1.0, 4.0}) {
        auto q = loss_surface(ds, std::sqrt(6.25) + ds, 6.25);
        CHECK(q.g_diff == 0.0);
        CHECK(q.g_same == doctest::Approx(2.0 * ds).epsilon(1e-15));
    }
}

TEST_CASE("boundary gradient: holds across the margin/separation grid") {
    for (double m : {1.0, 6.25, 25.0}) {
        for (double m_sep : {0.1, 0.5, 1.0}) {
            auto r = boundary_gradient_check(m, m_sep, 100);
            CHECK(r.pass);
            CHECK(r.worst_dot > 0.0);
            CHECK(r.worst_d_same > 0.0);
            CHECK(r.worst_d_same <= 3.0 * std::sqrt(m) + 1e-12);

            // replicate the worst point by hand
            auto p = loss_surface(r.worst_d_same, r.worst_d_same + m_sep, m);
            CHECK(p.g_same - p.g_diff == doctest::Approx(r.worst_dot).epsilon(1e-12));
        }
    }
    CHECK_THROWS_AS(boundary_gradient_check(0.0, 0.5, 10), std::invalid_argument);
    CHECK_THROWS_AS(boundary_gradient_check(1.0, 0.5, 0), std::invalid_argument);
}

TEST_CASE("boundary minimizer: closed form sqrt(m) - m_sep, clamped at zero") {
    auto r = boundary_minimizer(6.25, 0.5);
    CHECK(std::fabs(r.d_star - 2.0) <= 1e-6);
    CHECK(r.value == doctest::Approx(loss_surface(2.0, 2.5, 6.25).value).epsilon(1e-9));

    for (double m : {1.0, 6.25, 25.0}) {
        for (double m_sep : {0.1, 0.5, 1.0}) {
            auto s = boundary_minimizer(m, m_sep);
            const double expected = m > m_sep * m_sep ? std::sqrt(m) - m_sep : 0.0;
            CHECK(std::fabs(s.d_star - expected) <= 1e-6);
        }
    }

    // separation already beyond sqrt(m): restricted loss is d^2, minimum at 0
    auto z = boundary_minimizer(1.0, 1.5);
    CHECK(z.d_star == 0.0);
    CHECK(z.value == 0.0);

    // returned value beats 200 random feasible probes
    Rng rng(606);
    auto best = boundary_minimizer(9.0, 0.25);
    for (int i = 0; i < 200; ++i) {
        const double d = rng.uniform(0.0, 9.0);
        CHECK(best.value <= loss_surface(d, d + 0.25, 9.0).value + 1e-12);
    }
}

TEST_CASE("convexity: the quadratic component alone never violates midpoint convexity") {
    Rng rng(808);
    for (int i = 0; i < 2000; ++i) {
        const double a = rng.uniform(0.0, 10.0), b = rng.uniform(0.0, 10.0);
        const double lhs = contrastive_loss(0.5 * (a + b), 0, 6.25);
        const double rhs = 0.5 * (contrastive_loss(a, 0, 6.25) + contrastive_loss(b, 0, 6.25));
        CHECK(lhs <= rhs + 1e-12);
    }
}

TEST_CASE("convexity probe: the hinge component breaks the premise, with a checkable witness") {
    // hand witness on the different-class branch at m = 6.25
    const double m = 6.25;
    CHECK(contrastive_loss(0.0, 1, m) == doctest::Approx(6.25).epsilon(1e-15));
    CHECK(contrastive_loss(2.5, 1, m) == 0.0);
    CHECK(contrastive_loss(1.25, 1, m) == doctest::Approx(4.6875).epsilon(1e-15));
    CHECK(contrastive_loss(1.25, 1, m) > 0.5 * (contrastive_loss(0.0, 1, m) + contrastive_loss(2.5, 1, m)));

    auto r = convexity_probe(m, 20000, 17);
    CHECK(r.violation_fraction > 0.0);
    CHECK(r.witnesses.size() > 0);
    CHECK(r.witnesses.size() <= 10);
    for (const auto& w : r.witnesses) {
        const double lhs = loss_surface(0.5 * (w.p_same + w.q_same),
                                        0.5 * (w.p_diff + w.q_diff), m).value;
        const double rhs =
            0.5 * (loss_surface(w.p_same, w.p_diff, m).value +
                   loss_surface(w.q_same, w.q_diff, m).value);
        CHECK(lhs == doctest::Approx(w.lhs).epsilon(1e-12));
        CHECK(rhs == doctest::Approx(w.rhs).epsilon(1e-12));
        CHECK(w.lhs > w.rhs);
    }

    // deterministic for a fixed seed
    auto r2 = convexity_probe(m, 20000, 17);
    CHECK(r.violation_fraction == r2.violation_fraction);
}

TEST_CASE("constraint feasibility: hand-built codes and degenerate inputs") {
    TemplateCodebook book;
    book.codes = {{0.0, 0.0}, {4.0, 0.0}};

    // two samples of class 0, one of class 1
    std::vector<FeatureCode> codes = {{0.5, 0.0}, {1.0, 0.0}, {3.0, 0.0}};
    std::vector<int> labels = {0, 0, 1};
    auto r = constraint1_feasibility(codes, labels, book);
    CHECK(r.defined);
    // same-class distances: 0.5, 1.0 (to template 0) and 1.0 (class 1 to template 1)
    CHECK(r.max_same == doctest::Approx(1.0).epsilon(1e-12));
    // cross distances: 3.5, 3.0 (class 0 to template 1) and 3.0 (class 1 to template 0)
    CHECK(r.min_diff == doctest::Approx(3.0).epsilon(1e-12));
    CHECK(r.m_sep == doctest::Approx(2.0).epsilon(1e-12));

    // overlap means a negative separation, reported rather than rejected
    auto bad = constraint1_feasibility({{3.9, 0.0}}, {0}, book);
    CHECK(bad.defined);
    CHECK(bad.m_sep < 0.0);

    // single class in codebook: no negatives exist
    TemplateCodebook solo;
    solo.codes = {{0.0, 0.0}};
    auto u = constraint1_feasibility({{1.0, 0.0}}, {0}, solo);
    CHECK_FALSE(u.defined);
    CHECK(u.m_sep == 0.0);

    CHECK_THROWS_AS(constraint1_feasibility({{1.0}}, {0, 1}, book), std::invalid_argument);
}
