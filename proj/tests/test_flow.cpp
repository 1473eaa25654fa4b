#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "cuspflow/flow.hpp"

using namespace cuspflow;

namespace {

FlowSystem gauss_flow(int n_max, int nodes = 600) {
    DiscretizationParams par;
    par.nodes = nodes;
    auto disc = discretize_gauss(n_max, par);
    DeltaOptions opt;
    opt.a_lo = 0.55;
    opt.a_hi = 1.49;
    auto rep = spectral_report(disc, estimate_delta(disc, opt));
    return make_flow_system(disc, rep);
}

double node_roof(const FlowSystem& flow, std::size_t i) {
    BoundaryPoint x = BoundaryPoint::at(flow.nodes[i]);
    return locate_cell(flow, x) >= 0 ? roof(flow, x) : 0.0;
}

double phase_dist(const PhasePoint& a, const PhasePoint& b) {
    return boundary_dist(a.x, b.x) + boundary_dist(a.x_minus, b.x_minus) +
           std::abs(a.s - b.s);
}

} // namespace

TEST_CASE("make_flow_system: roofs, weights, quadrature mean") {
    auto flow = gauss_flow(4000);
    REQUIRE(!flow.sys.branches.empty());
    CHECK(flow.lambda_max <= 1.0 + 1e-12);
    CHECK(flow.roof_bound > 0.0);
    for (std::size_t j = 0; j < flow.sys.branches.size(); ++j) {
        CHECK(flow.roof_min[j] >= -1e-12);
        CHECK(flow.roof_min[j] <= flow.roof_max_branch[j] + 1e-12);
    }
    // mean roof of the continued-fraction suspension: pi^2 / (6 log 2)
    CHECK(flow.r_bar == doctest::Approx(M_PI * M_PI / 6.0 / std::log(2.0)).epsilon(0.01));
    double total = 0;
    for (double w : flow.node_weight) {
        CHECK(w >= 0.0);
        total += w;
    }
    CHECK(total == doctest::Approx(1.0));
}

TEST_CASE("sample_phase: range, determinism, empirical mean roof") {
    auto flow = gauss_flow(4000);
    SampleStats st;
    auto pts = sample_phase(flow, 2500, 6, &st);
    REQUIRE(pts.size() == 2500);
    for (const auto& p : pts) {
        CHECK(p.s >= 0.0);
        CHECK(p.s < roof(flow, p.x));
        CHECK(!p.x.inf);
        CHECK(locate_cell(flow, p.x) >= 0);
    }
    CHECK(st.escape_rate >= 0.0);
    CHECK(st.escape_rate < 0.5);
    CHECK(std::abs(st.r_bar_empirical - flow.r_bar) <= 2.0 * st.r_bar_stderr);

    auto again = sample_phase(flow, 2500, 6, nullptr);
    double dev = 0;
    for (std::size_t i = 0; i < pts.size(); ++i) dev += phase_dist(pts[i], again[i]);
    CHECK(dev == 0.0); // bit-identical under the same seed

    auto shifted = sample_phase(flow, 2500, 7, nullptr);
    CHECK(phase_dist(pts[0], shifted[0]) > 0.0);
}

TEST_CASE("evolve: identity, additivity, roof accounting, escape") {
    auto flow = gauss_flow(4000);
    auto pts = sample_phase(flow, 1200, 17, nullptr);

    SUBCASE("t = 0 is the identity") {
        for (int i = 0; i < 50; ++i) {
            auto r = evolve(flow, pts[i], 0.0);
            CHECK(r.steps == 0);
            CHECK(phase_dist(r.p, pts[i]) == 0.0);
        }
    }

    SUBCASE("flow property on 1000 random (p, t, u)") {
        std::uint64_t st = 99;
        auto unif = [&]() {
            st = st * 6364136223846793005ULL + 1442695040888963407ULL;
            return static_cast<double>(st >> 11) * 0x1.0p-53;
        };
        int done = 0;
        double worst = 0;
        for (int i = 0; i < static_cast<int>(pts.size()) && done < 1000; ++i) {
            double t = 3.0 * unif(), u = 3.0 * unif();
            EvolveResult one, two;
            try {
                one = evolve(flow, pts[i], t + u);
                two = evolve(flow, evolve(flow, pts[i], t).p, u);
            } catch (const Error&) {
                continue;
            }
            worst = std::max(worst, phase_dist(one.p, two.p));
            ++done;
        }
        REQUIRE(done == 1000);
        CHECK(worst < 1e-9);
    }

    SUBCASE("every consumed roof respects the contraction bound") {
        double floor_all = -std::log(flow.lambda_max);
        for (int i = 0; i < 200; ++i) {
            EvolveResult r;
            try {
                r = evolve(flow, pts[i], 4.0);
            } catch (const Error&) {
                continue;
            }
            double lower = 0;
            for (int j : r.branches) {
                CHECK(flow.roof_min[static_cast<std::size_t>(j)] >= floor_all - 1e-12);
                lower += flow.roof_min[static_cast<std::size_t>(j)];
            }
            CHECK(r.roof_consumed >= lower - 1e-9);
        }
    }

    SUBCASE("orbits that leave the coded region raise the escape class") {
        auto small = gauss_flow(5, 200);
        PhasePoint p;
        p.x = BoundaryPoint::at1(0.99); // cell of n = 1; image 1/0.99 - 1 escapes
        p.x_minus = BoundaryPoint::infinity(1);
        p.s = 0.0;
        try {
            evolve(small, p, 50.0);
            FAIL("expected an escape");
        } catch (const Error& e) {
            CHECK(e.error_class() == "escape");
        }
    }
}

TEST_CASE("factor_project and the semiconjugacy with the geodesic flow") {
    auto flow = gauss_flow(4000);
    auto pts = sample_phase(flow, 1100, 31, nullptr);

    SUBCASE("time change at x = 0 is the identity shift") {
        PhasePoint p;
        p.x = BoundaryPoint::at1(0.0);
        p.x_minus = BoundaryPoint::infinity(1);
        p.s = 0.37;
        CHECK(factor_project(p).hopf_time == doctest::Approx(0.37).epsilon(1e-15));
    }

    SUBCASE("x_minus = inf, s = 0 lands on the unstable horosphere through o") {
        HalfSpacePoint o = HalfSpacePoint::origin(1);
        for (double xv : {0.1, 0.45, 0.8}) {
            PhasePoint p;
            p.x = BoundaryPoint::at1(xv);
            p.x_minus = BoundaryPoint::infinity(1);
            p.s = 0.0;
            HalfSpacePoint on_horosphere{p.x.v, 1.0};
            CHECK(factor_project(p).hopf_time ==
                  doctest::Approx(busemann(p.x, o, on_horosphere)).epsilon(1e-12));
        }
    }

    SUBCASE("semiconjugacy residual below 1e-8 over 1000 sampled (p, t)") {
        int done = 0;
        double worst = 0;
        for (std::size_t i = 0; i < pts.size() && done < 1000; ++i) {
            double t = 0.05 + 0.004 * static_cast<double>(i);
            try {
                worst = std::max(worst, semiconjugacy_residual(flow, pts[i], t));
            } catch (const Error&) {
                continue;
            }
            ++done;
        }
        REQUIRE(done == 1000);
        CHECK(worst < 1e-8);
    }
}

TEST_CASE("evolved samples keep the suspension marginal") {
    auto flow = gauss_flow(4000);
    auto pts = sample_phase(flow, 4000, 21, nullptr);
    std::vector<double> ev;
    for (const auto& p : pts) {
        try {
            ev.push_back(evolve(flow, p, 1.7).p.x.v[0]);
        } catch (const Error&) {
        }
    }
    REQUIRE(ev.size() > 3800);
    std::sort(ev.begin(), ev.end());
    // model CDF: roof-weighted node masses (the x-marginal of the flow measure)
    std::size_t nn = flow.nodes.size();
    std::vector<double> cum(nn);
    double acc = 0;
    for (std::size_t i = 0; i < nn; ++i) {
        acc += flow.node_weight[i] * node_roof(flow, i);
        cum[i] = acc;
    }
    double ks = 0;
    for (std::size_t k = 0; k < ev.size(); ++k) {
        double F = (static_cast<double>(k) + 0.5) / static_cast<double>(ev.size());
        std::size_t i = static_cast<std::size_t>(
            std::upper_bound(flow.nodes.begin(), flow.nodes.end(), ev[k],
                             [](double v, const Vec& nd) { return v < nd[0]; }) -
            flow.nodes.begin());
        double Fm = i == 0 ? 0.0 : cum[i - 1] / acc;
        ks = std::max(ks, std::abs(F - Fm));
    }
    CHECK(ks < 0.035);
}

TEST_CASE("time average along one orbit matches the space average") {
    auto flow = gauss_flow(4000);
    PhasePoint cur = sample_phase(flow, 1, 4, nullptr)[0];
    double acc = 0;
    long long cnt = 0;
    for (int k = 0; k < 4000; ++k) {
        cur = evolve(flow, cur, 0.5).p;
        acc += cur.x.v[0];
        ++cnt;
    }
    double sp = 0, spw = 0;
    for (std::size_t i = 0; i < flow.nodes.size(); ++i) {
        double R = node_roof(flow, i);
        sp += flow.node_weight[i] * R * flow.nodes[i][0];
        spw += flow.node_weight[i] * R;
    }
    CHECK(acc / static_cast<double>(cnt) == doctest::Approx(sp / spw).epsilon(0.02));
}

TEST_CASE("escape rate shrinks as the truncation deepens") {
    SampleStats coarse, fine;
    sample_phase(gauss_flow(30, 300), 1500, 5, &coarse);
    sample_phase(gauss_flow(300, 300), 1500, 5, &fine);
    CHECK(coarse.escape_rate > fine.escape_rate);
    CHECK(fine.escape_rate > 0.0);
}

TEST_CASE("correlation estimates") {
    auto flow = gauss_flow(2000);
    Observable coord = [](const PhasePoint& p) { return p.x.v[0]; };

    SUBCASE("t = 0 reproduces the sample covariance") {
        auto c = correlation(flow, coord, coord, {0.0}, 5000, 77, 1);
        auto pts = sample_phase(flow, 5000, 77, nullptr);
        double mu = 0;
        for (const auto& p : pts) mu += p.x.v[0];
        mu /= static_cast<double>(pts.size());
        double cov = 0;
        for (const auto& p : pts) cov += (p.x.v[0] - mu) * (p.x.v[0] - mu);
        cov /= static_cast<double>(pts.size());
        CHECK(c.rho[0] == doctest::Approx(cov).epsilon(1e-10));
    }

    SUBCASE("constant observable centers to zero at every time") {
        Observable one = [](const PhasePoint&) { return 1.0; };
        auto c = correlation(flow, one, coord, {0.0, 0.5, 1.0, 1.5}, 2000, 7, 2);
        for (double r : c.rho) CHECK(std::abs(r) < 1e-12);
        CHECK(c.degenerate); // nothing exceeds the noise floor
    }

    SUBCASE("coordinate autocorrelation decays exponentially") {
        std::vector<double> times;
        for (int k = 0; k <= 14; ++k) times.push_back(0.5 * k);
        auto c = correlation(flow, coord, coord, times, 100000, 99, 0);
        CHECK(!c.degenerate);
        CHECK(c.fitted_eta > 0.0);
        CHECK(c.fit_quality > 0.8);
        CHECK(c.sample_count > 90000);
        CHECK(c.escape_rate < 0.2);
        CHECK(static_cast<int>(c.window.size()) >= 5);
        // rho decreases over the fitted window
        for (std::size_t k = 1; k < c.window.size(); ++k)
            CHECK(std::abs(c.rho[static_cast<std::size_t>(c.window[k])]) <
                  std::abs(c.rho[static_cast<std::size_t>(c.window[k - 1])]));
    }

    SUBCASE("deterministic across thread counts") {
        std::vector<double> times{0.0, 0.6, 1.2};
        auto a = correlation(flow, coord, coord, times, 4000, 123, 1);
        auto b = correlation(flow, coord, coord, times, 4000, 123, 7);
        for (std::size_t k = 0; k < times.size(); ++k) {
            CHECK(a.rho[k] == b.rho[k]);
            CHECK(a.stderrs[k] == b.stderrs[k]);
        }
        CHECK(correlation_to_csv(a) == correlation_to_csv(b));
    }

    SUBCASE("validation of the time grid") {
        CHECK_THROWS_AS(correlation(flow, coord, coord, {}, 100, 1, 1), Error);
        CHECK_THROWS_AS(correlation(flow, coord, coord, {0.5, 0.5}, 100, 1, 1), Error);
        CHECK_THROWS_AS(correlation(flow, coord, coord, {-1.0, 0.5}, 100, 1, 1), Error);
    }

    SUBCASE("csv and json exports") {
        auto c = correlation(flow, coord, coord, {0.0, 0.8}, 1000, 3, 1);
        auto csv = correlation_to_csv(c);
        CHECK(csv.rfind("t,rho,stderr\n", 0) == 0);
        CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);
        auto js = correlation_summary_json(c);
        CHECK(js.find("\"fitted_eta\"") != std::string::npos);
        CHECK(js.find("\"sample_count\"") != std::string::npos);
        CHECK(js.find("\"escape_rate\"") != std::string::npos);
    }
}
