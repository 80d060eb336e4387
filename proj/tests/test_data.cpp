#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <fstream>

#include "doctest.h"
#include "m3bat/data.hpp"
#include "m3bat/error.hpp"
#include "m3bat/shift.hpp"
#include "testutil.hpp"

using namespace m3bat;

namespace {

void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path);
    REQUIRE(out.good());
    out << content;
}

}  // namespace

TEST_CASE("load_csv basic ingestion") {
    testutil::TempDir dir("load_csv");
    write_file(dir.str("data.csv"), "__user__,__label__,f1\nu1,1,0.5\nu2,0,1.5\n");
    write_file(dir.str("mods.map"), "# comment line\nf1=imu\n");

    const LoadResult r = load_csv(dir.str("data.csv"), dir.str("mods.map"));
    CHECK(r.table.n_features() == 1);
    CHECK(r.table.n_rows() == 2);
    CHECK(r.table.feature_names[0] == "f1");
    CHECK(r.table.rows(1, 0) == 1.5);
    CHECK(r.table.labels[0] == 1.0);
    CHECK(r.table.user_ids[1] == "u2");
    CHECK(r.dropped_rows == 0);
    CHECK(r.modalities.modality_of("f1") == "imu");
}

TEST_CASE("load_csv drops incomplete rows and counts them") {
    testutil::TempDir dir("drop");
    write_file(dir.str("data.csv"), "__user__,__label__,f1\nu1,1,0.5\nu2,0,\nu3,1,2.0\n");
    write_file(dir.str("mods.map"), "f1=imu\n");
    const LoadResult r = load_csv(dir.str("data.csv"), dir.str("mods.map"));
    CHECK(r.table.n_rows() == 2);
    CHECK(r.dropped_rows == 1);
}

TEST_CASE("load_csv schema errors") {
    testutil::TempDir dir("schema");
    write_file(dir.str("no_user.csv"), "__label__,f1\n1,0.5\n");
    write_file(dir.str("mods.map"), "f1=imu\n");
    CHECK_THROWS_AS(load_csv(dir.str("no_user.csv"), dir.str("mods.map")), SchemaError);

    write_file(dir.str("no_label.csv"), "__user__,f1\nu1,0.5\n");
    CHECK_THROWS_AS(load_csv(dir.str("no_label.csv"), dir.str("mods.map")), SchemaError);

    write_file(dir.str("data.csv"), "__user__,__label__,f1,f2\nu1,1,0.5,0.25\n");
    CHECK_THROWS_WITH_AS(load_csv(dir.str("data.csv"), dir.str("mods.map")),
                         doctest::Contains("f2"), SchemaError);

    write_file(dir.str("garbage.csv"), "__user__,__label__,f1\nu1,1,notanumber\n");
    CHECK_THROWS_AS(load_csv(dir.str("garbage.csv"), dir.str("mods.map")), SchemaError);

    CHECK_THROWS_AS(load_csv(dir.str("missing.csv"), dir.str("mods.map")), IoError);
}

TEST_CASE("csv round-trip preserves values exactly") {
    SynthSpec spec;
    spec.groups = {{"acc", 3, 0.8}, {"ppg", 2, 0.1}};
    spec.samples_per_domain = 40;
    spec.users_per_domain = 5;
    spec.seed = 11;
    const SynthResult synth = generate_synthetic(spec);

    testutil::TempDir dir("roundtrip");
    save_csv(synth.source, dir.str("s.csv"));
    save_modality_map(synth.modalities, dir.str("m.map"));
    const LoadResult first = load_csv(dir.str("s.csv"), dir.str("m.map"));
    save_csv(first.table, dir.str("s2.csv"));
    const LoadResult second = load_csv(dir.str("s2.csv"), dir.str("m.map"));

    REQUIRE(first.table.n_rows() == synth.source.n_rows());
    REQUIRE(second.table.n_rows() == first.table.n_rows());
    for (std::size_t i = 0; i < first.table.rows.data.size(); ++i) {
        CHECK(first.table.rows.data[i] == synth.source.rows.data[i]);
        CHECK(second.table.rows.data[i] == first.table.rows.data[i]);
    }
    CHECK(second.table.labels == first.table.labels);
    CHECK(second.table.user_ids == first.table.user_ids);
}

TEST_CASE("modality map parsing rejects malformed lines") {
    testutil::TempDir dir("map");
    write_file(dir.str("bad.map"), "f1\n");
    CHECK_THROWS_AS(load_modality_map(dir.str("bad.map")), SchemaError);
    write_file(dir.str("empty_name.map"), "=imu\n");
    CHECK_THROWS_AS(load_modality_map(dir.str("empty_name.map")), SchemaError);
}

TEST_CASE("synthetic generator hits requested shift magnitudes") {
    SynthSpec spec;
    spec.groups = {{"flat", 2, 0.0}, {"shifted", 2, 1.0}};
    spec.samples_per_domain = 5000;
    spec.users_per_domain = 30;
    spec.seed = 3;
    const SynthResult synth = generate_synthetic(spec);

    for (std::size_t f = 0; f < synth.source.n_features(); ++f) {
        const double d = cohens_d(synth.source.column(f), synth.target.column(f));
        if (synth.source.feature_names[f].rfind("flat", 0) == 0) {
            CHECK(d < 0.05);
        } else {
            CHECK(d == doctest::Approx(1.0).epsilon(0.1));
        }
    }
}

TEST_CASE("synthetic generator is deterministic") {
    SynthSpec spec;
    spec.groups = {{"g", 4, 0.5}};
    spec.samples_per_domain = 100;
    spec.users_per_domain = 8;
    spec.seed = 42;
    const SynthResult a = generate_synthetic(spec);
    const SynthResult b = generate_synthetic(spec);
    CHECK(table_to_csv(a.source) == table_to_csv(b.source));
    CHECK(table_to_csv(a.target) == table_to_csv(b.target));

    spec.seed = 43;
    const SynthResult c = generate_synthetic(spec);
    CHECK(table_to_csv(a.source) != table_to_csv(c.source));
}

TEST_CASE("label rule is shared across domains") {
    SynthSpec spec;
    spec.groups = {{"a", 5, 1.0}, {"b", 5, 0.0}};
    spec.samples_per_domain = 400;
    spec.users_per_domain = 10;
    spec.seed = 7;

    for (TaskKind task : {TaskKind::classification, TaskKind::regression}) {
        spec.task = task;
        const SynthResult synth = generate_synthetic(spec);
        for (std::size_t i = 0; i < synth.target.n_rows(); ++i) {
            const double expect =
                synth.rule.apply(synth.target.rows.row_ptr(i), synth.target.n_features());
            CHECK(synth.target.labels[i] == expect);
        }
        for (std::size_t i = 0; i < synth.source.n_rows(); ++i) {
            const double expect =
                synth.rule.apply(synth.source.rows.row_ptr(i), synth.source.n_features());
            CHECK(synth.source.labels[i] == expect);
        }
    }
}

TEST_CASE("synthetic classification labels stay near-balanced in both domains") {
    SynthSpec spec;
    spec.groups = {{"hi", 10, 1.0}, {"mid", 10, 0.5}, {"lo", 10, 0.05}};
    spec.samples_per_domain = 1000;
    spec.users_per_domain = 30;
    spec.seed = 0;
    const SynthResult synth = generate_synthetic(spec);

    auto positive_rate = [](const FeatureTable& t) {
        double s = 0.0;
        for (double y : t.labels) s += y;
        return s / static_cast<double>(t.n_rows());
    };
    CHECK(positive_rate(synth.source) == doctest::Approx(0.5).epsilon(0.02));
    CHECK(positive_rate(synth.target) == doctest::Approx(0.5).epsilon(0.25));
}

TEST_CASE("synthetic spec validation") {
    SynthSpec spec;
    spec.groups = {{"g", 2, 0.5}};
    spec.users_per_domain = 3;
    CHECK_THROWS_AS(generate_synthetic(spec), ValidationError);

    spec.users_per_domain = 8;
    spec.groups = {{"g", 0, 0.5}};
    CHECK_THROWS_AS(generate_synthetic(spec), ValidationError);

    spec.groups = {{"g", 2, -0.5}};
    CHECK_THROWS_AS(generate_synthetic(spec), ValidationError);

    spec.groups = {{"g", 2, 0.5}};
    spec.user_sd = 1.0;
    CHECK_THROWS_AS(generate_synthetic(spec), ValidationError);
}

TEST_CASE("distinct users per domain") {
    SynthSpec spec;
    spec.groups = {{"g", 2, 0.3}};
    spec.samples_per_domain = 90;
    spec.users_per_domain = 9;
    spec.seed = 5;
    const SynthResult synth = generate_synthetic(spec);
    CHECK(synth.source.distinct_users().size() == 9);
    CHECK(synth.target.distinct_users().size() == 9);
    // source and target user namespaces do not collide
    for (const auto& u : synth.source.distinct_users()) CHECK(u[0] == 's');
    for (const auto& u : synth.target.distinct_users()) CHECK(u[0] == 't');
}
