#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "m3bat/error.hpp"
#include "m3bat/shift.hpp"
#include "testutil.hpp"

using namespace m3bat;

TEST_CASE("cohens_d hand-checked values") {
    std::vector<double> same{1.0, 2.0, 3.0};
    CHECK(cohens_d(same, same) == 0.0);

    // both sample SDs sqrt(1/3), mean gap 1 -> d = sqrt(3)
    std::vector<double> a{0, 0, 1, 1};
    std::vector<double> b{1, 1, 2, 2};
    CHECK(cohens_d(a, b) == doctest::Approx(std::sqrt(3.0)).epsilon(1e-12));
    CHECK(cohens_d(b, a) == doctest::Approx(std::sqrt(3.0)).epsilon(1e-12));

    std::vector<double> tiny{1.0};
    CHECK_THROWS_AS(cohens_d(tiny, a), ValidationError);

    std::vector<double> const_a{2, 2, 2};
    std::vector<double> const_b{3, 3, 3};
    CHECK_THROWS_AS(cohens_d(const_a, const_b), DegenerateShiftError);
    CHECK(cohens_d(const_a, const_a) == 0.0);
}

TEST_CASE("cohens_d recovers the population value on gaussian samples") {
    Rng rng(17);
    const std::size_t n = 10000;
    std::vector<double> a(n), b(n);
    for (std::size_t i = 0; i < n; ++i) {
        a[i] = rng.normal();
        b[i] = 0.5 + rng.normal();
    }
    CHECK(cohens_d(a, b) == doctest::Approx(0.5).epsilon(0.1));
    CHECK(std::fabs(cohens_d(a, b) - 0.5) < 0.05);
}

TEST_CASE("cohens_d symmetry and affine invariance") {
    Rng rng(23);
    for (int trial = 0; trial < 30; ++trial) {
        std::vector<double> a(20), b(25);
        for (double& v : a) v = rng.normal() * 2.0 + 1.0;
        for (double& v : b) v = rng.normal() * 1.5 - 0.5;
        const double d = cohens_d(a, b);
        CHECK(cohens_d(b, a) == doctest::Approx(d).epsilon(1e-12));

        const double scale = rng.uniform(0.5, 3.0);
        const double offset = rng.uniform(-5.0, 5.0);
        std::vector<double> a2 = a, b2 = b;
        for (double& v : a2) v = scale * v + offset;
        for (double& v : b2) v = scale * v + offset;
        CHECK(std::fabs(cohens_d(a2, b2) - d) < 1e-9);
    }
}

namespace {

// Table with one feature per entry, built so each feature's Cohen's-d
// against the shifted copy is exactly the requested value.
struct ShiftFixture {
    FeatureTable source;
    FeatureTable target;
    ModalityMap map;
};

ShiftFixture make_fixture(const std::vector<std::pair<std::string, double>>& feature_shifts,
                          const std::vector<std::string>& modalities_for_features,
                          std::size_t n_rows = 40) {
    ShiftFixture fx;
    fx.source.domain_name = "src";
    fx.target.domain_name = "tgt";
    fx.source.rows = Matrix(n_rows, feature_shifts.size());
    fx.target.rows = Matrix(n_rows, feature_shifts.size());
    for (std::size_t i = 0; i < n_rows; ++i) {
        fx.source.user_ids.push_back("u" + std::to_string(i % 8));
        fx.target.user_ids.push_back("u" + std::to_string(i % 8));
        fx.source.labels.push_back(static_cast<double>(i % 2));
        fx.target.labels.push_back(static_cast<double>(i % 2));
    }
    // alternating 0/1 base pattern: sample SD is identical in both domains,
    // so adding d * sd to the target hits Cohen's-d = d exactly
    std::vector<double> base(n_rows);
    for (std::size_t i = 0; i < n_rows; ++i) base[i] = static_cast<double>(i % 2);
    double mean = 0.5;
    double ss = 0.0;
    for (double v : base) ss += (v - mean) * (v - mean);
    const double sd = std::sqrt(ss / static_cast<double>(n_rows - 1));

    for (std::size_t f = 0; f < feature_shifts.size(); ++f) {
        fx.source.feature_names.push_back(feature_shifts[f].first);
        fx.target.feature_names.push_back(feature_shifts[f].first);
        fx.map.entries[feature_shifts[f].first] = modalities_for_features[f];
        for (std::size_t i = 0; i < n_rows; ++i) {
            fx.source.rows(i, f) = base[i];
            fx.target.rows(i, f) = base[i] + feature_shifts[f].second * sd;
        }
    }
    fx.source.validate();
    fx.target.validate();
    return fx;
}

}  // namespace

TEST_CASE("analyze_shift on identical tables is all zeros") {
    auto fx = make_fixture({{"f1", 0.0}, {"f2", 0.0}}, {"m1", "m2"});
    const ShiftReport report = analyze_shift(fx.source, fx.source, fx.map);
    for (const auto& f : report.per_feature) CHECK(f.cohens_d == 0.0);
    for (const auto& m : report.per_modality) CHECK(m.mean_cohens_d == 0.0);
}

TEST_CASE("analyze_shift per-modality means and ordering") {
    auto fx = make_fixture({{"a1", 0.9}, {"a2", 0.4}, {"a3", 0.1}, {"b1", 0.05}},
                           {"acc", "acc", "acc", "ppg"});
    const ShiftReport report = analyze_shift(fx.source, fx.target, fx.map);

    REQUIRE(report.per_modality.size() == 2);
    CHECK(report.per_modality[0].name == "acc");
    CHECK(report.per_modality[0].mean_cohens_d ==
          doctest::Approx((0.9 + 0.4 + 0.1) / 3.0).epsilon(1e-9));
    CHECK(report.per_modality[1].mean_cohens_d == doctest::Approx(0.05).epsilon(1e-9));

    // features sorted descending
    for (std::size_t i = 1; i < report.per_feature.size(); ++i)
        CHECK(report.per_feature[i - 1].cohens_d >= report.per_feature[i].cohens_d);
    CHECK(report.per_feature.front().name == "a1");
}

TEST_CASE("analyze_shift schema mismatch and shift cap") {
    auto fx = make_fixture({{"f1", 0.5}}, {"m"});
    auto other = make_fixture({{"g1", 0.5}}, {"m"});
    CHECK_THROWS_AS(analyze_shift(fx.source, other.target, fx.map), SchemaError);

    // constant feature with different values across domains hits the cap
    FeatureTable src = fx.source, tgt = fx.target;
    for (std::size_t i = 0; i < src.n_rows(); ++i) {
        src.rows(i, 0) = 1.0;
        tgt.rows(i, 0) = 2.0;
    }
    const ShiftReport capped = analyze_shift(src, tgt, fx.map);
    CHECK(capped.per_feature[0].cohens_d == kDefaultShiftCap);
    const ShiftReport custom = analyze_shift(src, tgt, fx.map, 7.5);
    CHECK(custom.per_feature[0].cohens_d == 7.5);
}

TEST_CASE("analyze_shift moves only the shifted feature") {
    auto fx = make_fixture({{"f1", 0.0}, {"f2", 0.0}, {"f3", 0.0}}, {"m", "m", "m"});
    FeatureTable shifted = fx.target;
    for (std::size_t i = 0; i < shifted.n_rows(); ++i) shifted.rows(i, 1) += 2.5;
    const ShiftReport report = analyze_shift(fx.source, shifted, fx.map);
    for (const auto& f : report.per_feature) {
        if (f.name == "f2") {
            CHECK(f.cohens_d > 1.0);
        } else {
            CHECK(f.cohens_d < 1e-12);
        }
    }
}

TEST_CASE("shift report serializes with descending features") {
    auto fx = make_fixture({{"low", 0.1}, {"high", 0.9}}, {"m1", "m2"});
    const ShiftReport report = analyze_shift(fx.source, fx.target, fx.map);
    const nlohmann::json j = report.to_json();
    CHECK(j.at("source") == "src");
    CHECK(j.at("target") == "tgt");
    REQUIRE(j.at("features").size() == 2);
    CHECK(j.at("features")[0].at("name") == "high");
    CHECK(j.at("features")[0].contains("modality"));
    CHECK(j.at("features")[0].contains("cohens_d"));
    REQUIRE(j.at("modalities").size() == 2);
    CHECK(j.at("modalities")[0].at("name") == "m2");
}

TEST_CASE("lambdas_from_shifts pins the published mapping example") {
    // min 0.4 is above the small-effect threshold: artificial zero appended
    const auto lambdas = lambdas_from_shifts({0.9, 0.4});
    REQUIRE(lambdas.size() == 2);
    CHECK(lambdas[0] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(std::fabs(lambdas[1] - 0.44) < 0.01);
}

TEST_CASE("lambdas_from_shifts artificial-zero trigger around 0.2") {
    // just above: zero appended, the smallest branch keeps a positive value
    const auto above = lambdas_from_shifts({0.5, 0.25});
    CHECK(above[0] == 1.0);
    CHECK(above[1] == doctest::Approx(0.5).epsilon(1e-12));

    // just below: no artificial zero, min-max sends the smallest to 0
    const auto below = lambdas_from_shifts({0.5, 0.15});
    CHECK(below[0] == 1.0);
    CHECK(below[1] == 0.0);

    // exactly at the threshold counts as not above
    const auto at = lambdas_from_shifts({0.5, 0.2});
    CHECK(at[1] == 0.0);
}

TEST_CASE("lambdas_from_shifts three-branch case uses plain min-max") {
    const auto lambdas = lambdas_from_shifts({0.8, 0.6, 0.05});
    CHECK(lambdas[0] == doctest::Approx(1.0));
    CHECK(lambdas[1] == doctest::Approx((0.6 - 0.05) / 0.75).epsilon(1e-9));
    CHECK(lambdas[2] == doctest::Approx(0.0));
}

TEST_CASE("lambdas_from_shifts degenerate and error cases") {
    const auto equal = lambdas_from_shifts({0.5, 0.5});
    CHECK(equal == std::vector<double>{1.0, 1.0});

    const auto zeros = lambdas_from_shifts({0.0, 0.0});
    CHECK(zeros == std::vector<double>{1.0, 1.0});

    // single branch above the threshold gains the artificial zero
    const auto single = lambdas_from_shifts({0.5});
    CHECK(single == std::vector<double>{1.0});

    CHECK_THROWS_AS(lambdas_from_shifts({0.1}), ValidationError);
    CHECK_THROWS_AS(lambdas_from_shifts({-0.1, 0.5}), ValidationError);
    CHECK_THROWS_AS(lambdas_from_shifts({}), ValidationError);
}

TEST_CASE("lambdas_from_shifts properties") {
    Rng rng(31);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t n = 2 + rng.below(5);
        std::vector<double> shifts(n);
        for (double& s : shifts) s = rng.uniform(0.0, 1.2);
        const auto lambdas = lambdas_from_shifts(shifts);

        // maximum maps to 1
        std::size_t argmax = 0;
        for (std::size_t i = 1; i < n; ++i)
            if (shifts[i] > shifts[argmax]) argmax = i;
        CHECK(lambdas[argmax] == doctest::Approx(1.0));

        // monotone: larger shift never gets a smaller lambda
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j)
                if (shifts[i] > shifts[j]) CHECK(lambdas[i] >= lambdas[j] - 1e-12);

        // order-equivariance under rotation
        std::vector<double> rotated(shifts.begin() + 1, shifts.end());
        rotated.push_back(shifts.front());
        const auto rotated_lambdas = lambdas_from_shifts(rotated);
        for (std::size_t i = 0; i + 1 < n; ++i)
            CHECK(rotated_lambdas[i] == doctest::Approx(lambdas[i + 1]).epsilon(1e-12));
        CHECK(rotated_lambdas[n - 1] == doctest::Approx(lambdas[0]).epsilon(1e-12));

        for (double l : lambdas) {
            CHECK(l >= 0.0);
            CHECK(l <= 1.0);
        }
    }
}

namespace {

ShiftReport report_from_modalities(const std::vector<std::pair<std::string, double>>& mods,
                                   std::vector<std::string>* feature_order,
                                   int features_per_modality = 1) {
    ShiftReport report;
    report.source_name = "s";
    report.target_name = "t";
    for (const auto& [name, d] : mods) {
        for (int i = 0; i < features_per_modality; ++i) {
            report.per_feature.push_back({name + "_f" + std::to_string(i), name, d});
            feature_order->push_back(name + "_f" + std::to_string(i));
        }
        report.per_modality.push_back({name, d});
    }
    std::sort(report.per_feature.begin(), report.per_feature.end(),
              [](const FeatureShift& a, const FeatureShift& b) {
                  if (a.cohens_d != b.cohens_d) return a.cohens_d > b.cohens_d;
                  return a.name < b.name;
              });
    std::sort(report.per_modality.begin(), report.per_modality.end(),
              [](const ModalityShift& a, const ModalityShift& b) {
                  if (a.mean_cohens_d != b.mean_cohens_d)
                      return a.mean_cohens_d > b.mean_cohens_d;
                  return a.name < b.name;
              });
    return report;
}

}  // namespace

TEST_CASE("plan_setup1 three modalities") {
    std::vector<std::string> order;
    const ShiftReport report =
        report_from_modalities({{"hi", 0.9}, {"mid", 0.4}, {"lo", 0.05}}, &order);
    const BranchPlan plan = plan_setup1(report, 1, order);

    REQUIRE(plan.branches.size() == 3);
    CHECK(plan.setup == BranchSetup::setup1);
    CHECK(plan.alpha == 1);
    CHECK(plan.branches[0].raw_shift == doctest::Approx(0.9));
    CHECK(plan.branches[1].raw_shift == doctest::Approx(0.4));
    CHECK(plan.branches[2].raw_shift == doctest::Approx(0.05));
    CHECK(plan.branches[0].lambda_m == doctest::Approx(1.0));
    CHECK(plan.branches[1].lambda_m == doctest::Approx((0.4 - 0.05) / 0.85).epsilon(1e-9));
    CHECK(std::fabs(plan.branches[1].lambda_m - 0.41) < 0.01);
    CHECK(plan.branches[2].lambda_m == doctest::Approx(0.0));
    plan.validate_partition(order.size());
}

TEST_CASE("plan_setup1 two modalities gives a two-branch plan") {
    std::vector<std::string> order;
    const ShiftReport report = report_from_modalities({{"acc", 1.0}, {"ppg", 0.2}}, &order, 3);
    const BranchPlan plan = plan_setup1(report, 1, order);
    REQUIRE(plan.branches.size() == 2);
    CHECK(plan.branches[0].lambda_m == doctest::Approx(1.0));
    CHECK(plan.branches[1].lambda_m == doctest::Approx(0.0));
    CHECK(plan.branches[0].feature_indices.size() == 3);
    plan.validate_partition(order.size());

    CHECK_THROWS_AS(plan_setup1(report, 2, order), ValidationError);
}

TEST_CASE("plan_setup1 alpha 2 with five modalities") {
    std::vector<std::string> order;
    const ShiftReport report = report_from_modalities(
        {{"m1", 0.9}, {"m2", 0.7}, {"m3", 0.5}, {"m4", 0.3}, {"m5", 0.1}}, &order, 2);
    const BranchPlan plan = plan_setup1(report, 2, order);
    REQUIRE(plan.branches.size() == 3);
    // high branch - union of the top two modalities' features
    CHECK(plan.branches[0].feature_indices.size() == 4);
    CHECK(plan.branches[1].feature_indices.size() == 2);
    CHECK(plan.branches[2].feature_indices.size() == 4);
    CHECK(plan.branches[0].raw_shift == doctest::Approx(0.8));
    CHECK(plan.branches[2].raw_shift == doctest::Approx(0.2));
    plan.validate_partition(order.size());

    CHECK_THROWS_AS(plan_setup1(report, 3, order), ValidationError);
}

TEST_CASE("plan_setup2 tertile sizes") {
    std::vector<std::string> order;
    const ShiftReport nine = report_from_modalities(
        {{"a", 0.9}, {"b", 0.5}, {"c", 0.1}}, &order, 3);
    const BranchPlan plan9 = plan_setup2(nine, order);
    REQUIRE(plan9.branches.size() == 3);
    CHECK(plan9.branches[0].feature_indices.size() == 3);
    CHECK(plan9.branches[1].feature_indices.size() == 3);
    CHECK(plan9.branches[2].feature_indices.size() == 3);
    CHECK(plan9.branches[0].lambda_m == doctest::Approx(1.0));
    CHECK(plan9.branches[1].lambda_m == doctest::Approx(0.5).epsilon(1e-9));
    CHECK(plan9.branches[2].lambda_m == doctest::Approx(0.0));
    plan9.validate_partition(order.size());

    std::vector<std::string> order10;
    ShiftReport ten = report_from_modalities({{"a", 0.8}, {"b", 0.4}}, &order10, 5);
    const BranchPlan plan10 = plan_setup2(ten, order10);
    CHECK(plan10.branches[0].feature_indices.size() == 4);
    CHECK(plan10.branches[1].feature_indices.size() == 3);
    CHECK(plan10.branches[2].feature_indices.size() == 3);
    plan10.validate_partition(order10.size());

    std::vector<std::string> tiny_order;
    const ShiftReport tiny = report_from_modalities({{"a", 0.5}}, &tiny_order, 2);
    CHECK_THROWS_AS(plan_setup2(tiny, tiny_order), ValidationError);
}

TEST_CASE("plan_setup2 group sizes differ by at most one") {
    Rng rng(41);
    for (std::size_t n : {3u, 4u, 5u, 7u, 11u, 23u, 100u}) {
        std::vector<std::string> order;
        ShiftReport report;
        for (std::size_t i = 0; i < n; ++i) {
            const std::string name = "f" + std::to_string(i);
            report.per_feature.push_back({name, "m", rng.uniform()});
            order.push_back(name);
        }
        std::sort(report.per_feature.begin(), report.per_feature.end(),
                  [](const FeatureShift& a, const FeatureShift& b) {
                      return a.cohens_d > b.cohens_d;
                  });
        report.per_modality.push_back({"m", 0.5});
        const BranchPlan plan = plan_setup2(report, order);
        std::size_t lo = n, hi = 0;
        for (const auto& b : plan.branches) {
            lo = std::min(lo, b.feature_indices.size());
            hi = std::max(hi, b.feature_indices.size());
        }
        CHECK(hi - lo <= 1);
        plan.validate_partition(n);
    }
}
