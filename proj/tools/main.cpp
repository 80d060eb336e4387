#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "m3bat/config.hpp"
#include "m3bat/data.hpp"
#include "m3bat/error.hpp"
#include "m3bat/evaluation.hpp"
#include "m3bat/shift.hpp"

namespace fs = std::filesystem;
using namespace m3bat;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitError = 1;
constexpr int kExitIo = 2;
constexpr int kExitSchema = 3;
constexpr int kExitPartial = 4;

void write_file_atomic(const fs::path& path, const std::string& content) {
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp);
        if (!out) throw IoError("cannot write " + tmp.string());
        out << content;
        if (!out) throw IoError("write failed for " + tmp.string());
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) throw IoError("cannot rename " + tmp.string() + " to " + path.string());
}

nlohmann::json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(path + ": " + e.what());
    }
    return j;
}

std::optional<std::uint64_t> seed_override_from_env() {
    const char* env = std::getenv("M3BAT_SEED");
    if (!env || !*env) return std::nullopt;
    try {
        return std::stoull(env);
    } catch (const std::exception&) {
        throw ValidationError("M3BAT_SEED must be an unsigned integer");
    }
}

void ensure_directory(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
    // probe writability up front so failures surface as I/O errors
    const fs::path probe = dir / ".write_probe";
    {
        std::ofstream out(probe);
        if (!out) throw IoError("directory not writable: " + dir.string());
    }
    fs::remove(probe, ec);
}

int cmd_gen_synth(const std::string& spec_path, const std::string& out_dir) {
    nlohmann::json j = read_json_file(spec_path);
    SynthSpec spec = parse_synth_spec(j);
    if (auto seed = seed_override_from_env()) spec.seed = *seed;

    ensure_directory(out_dir);
    const SynthResult result = generate_synthetic(spec);

    const fs::path dir(out_dir);
    write_file_atomic(dir / "source.csv", table_to_csv(result.source));
    write_file_atomic(dir / "target.csv", table_to_csv(result.target));
    write_file_atomic(dir / "modalities.map", modality_map_to_text(result.modalities));
    write_file_atomic(dir / "spec_resolved.json", synth_spec_to_json(spec).dump(2) + "\n");
    std::cout << "wrote source.csv, target.csv, modalities.map, spec_resolved.json to " << out_dir
              << "\n";
    return kExitOk;
}

int cmd_analyze_shift(const std::string& source_path, const std::string& target_path,
                      const std::string& map_path, const std::string& out_path) {
    const LoadResult source = load_csv(source_path, map_path);
    FeatureTable target = load_table_csv(target_path);
    const ShiftReport report = analyze_shift(source.table, target, source.modalities);
    write_file_atomic(out_path, report.to_json().dump(2) + "\n");
    std::cout << "wrote shift report for " << report.per_feature.size() << " features to "
              << out_path << "\n";
    return kExitOk;
}

std::string stem_of(const std::string& path) {
    const fs::path p(path);
    std::string stem = p.stem().string();
    return stem.empty() ? path : stem;
}

int cmd_experiment(const std::string& config_path, int jobs_override) {
    nlohmann::json config_json = read_json_file(config_path);
    RunConfig cfg = parse_run_config(config_json);
    if (auto seed = seed_override_from_env()) {
        cfg.experiment.seed = *seed;
        if (cfg.synth) cfg.synth->seed = *seed;
    }
    if (jobs_override > 0) cfg.experiment.jobs = jobs_override;

    FeatureTable source;
    std::vector<FeatureTable> targets;
    ModalityMap modalities;
    if (cfg.synth) {
        SynthResult synth = generate_synthetic(*cfg.synth);
        source = std::move(synth.source);
        targets.push_back(std::move(synth.target));
        modalities = std::move(synth.modalities);
    } else {
        LoadResult loaded = load_csv(cfg.data->source, cfg.data->map);
        source = std::move(loaded.table);
        source.domain_name = stem_of(cfg.data->source);
        modalities = std::move(loaded.modalities);
        for (const auto& path : cfg.data->targets) {
            FeatureTable t = load_table_csv(path);
            t.domain_name = stem_of(path);
            targets.push_back(std::move(t));
        }
    }

    ensure_directory(cfg.out_dir);
    const fs::path out_dir(cfg.out_dir);
    const fs::path trace_dir = out_dir / "traces";
    ensure_directory(trace_dir);

    const ExperimentResult result =
        run_experiment(source, targets, modalities, cfg.experiment);

    write_file_atomic(out_dir / "summary.csv", result.summary_csv());
    nlohmann::json detail = result.detail_json();
    detail["config"] = config_json;
    detail["seed"] = cfg.experiment.seed;
    write_file_atomic(out_dir / "detail.json", detail.dump(2) + "\n");
    for (const auto& t : result.traces)
        write_file_atomic(trace_dir / ("trace_" + t.name + ".csv"), t.trace.to_csv());

    std::cout << result.summary_table();
    if (!result.failures.empty()) {
        std::cerr << "failed cells:\n";
        for (const auto& f : result.failures) std::cerr << "  " << f << "\n";
        return kExitPartial;
    }
    return kExitOk;
}

template <class Fn>
int dispatch(Fn&& fn) {
    try {
        return fn();
    } catch (const IoError& e) {
        std::cerr << "I/O error: " << e.what() << "\n";
        return kExitIo;
    } catch (const SchemaError& e) {
        std::cerr << "schema error: " << e.what() << "\n";
        return kExitSchema;
    } catch (const ValidationError& e) {
        std::cerr << "validation error: " << e.what() << "\n";
        return kExitSchema;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitError;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"m3bat: multi-branch domain-adversarial training for tabular sensor features"};
    app.require_subcommand(1);

    std::string spec_path, out_dir;
    auto* gen = app.add_subcommand("gen-synth", "Generate a synthetic shifted-domain dataset");
    gen->add_option("--spec", spec_path, "Synthetic spec JSON")->required();
    gen->add_option("--out", out_dir, "Output directory")->required();

    std::string source_path, target_path, map_path, report_path;
    auto* shift = app.add_subcommand("analyze-shift",
                                     "Cohen's-d shift report for a source/target pair");
    shift->add_option("--source", source_path, "Source CSV")->required();
    shift->add_option("--target", target_path, "Target CSV")->required();
    shift->add_option("--map", map_path, "feature=modality map file")->required();
    shift->add_option("--out", report_path, "Output JSON report")->required();

    std::string config_path;
    int jobs_override = 0;
    auto* experiment = app.add_subcommand("experiment", "Run the configured method comparison");
    experiment->add_option("--config", config_path, "Run configuration JSON")->required();
    experiment->add_option("--jobs", jobs_override, "Worker thread cap (overrides config)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    int rc = kExitError;
    if (gen->parsed()) {
        rc = dispatch([&]() { return cmd_gen_synth(spec_path, out_dir); });
    } else if (shift->parsed()) {
        rc = dispatch(
            [&]() { return cmd_analyze_shift(source_path, target_path, map_path, report_path); });
    } else if (experiment->parsed()) {
        rc = dispatch([&]() { return cmd_experiment(config_path, jobs_override); });
    }
    return rc;
}
