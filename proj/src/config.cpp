#include "m3bat/config.hpp"

#include <algorithm>

#include "m3bat/error.hpp"

namespace m3bat {

void require_known_keys(const nlohmann::json& j, const std::vector<std::string>& allowed,
                        const std::string& where) {
    if (!j.is_object()) throw SchemaError(where + ": expected an object");
    for (const auto& [key, value] : j.items()) {
        (void)value;
        if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
            throw SchemaError(where + ": unknown key '" + key + "'");
    }
}

SynthSpec parse_synth_spec(const nlohmann::json& j) {
    require_known_keys(j,
                       {"groups", "samples_per_domain", "users_per_domain", "task",
                        "label_features", "user_sd", "seed", "source_name", "target_name"},
                       "synth spec");
    SynthSpec spec;
    if (!j.contains("groups")) throw SchemaError("synth spec: 'groups' required");
    for (const auto& gj : j.at("groups")) {
        require_known_keys(gj, {"name", "features", "cohens_d"}, "synth group");
        SynthGroup g;
        g.name = gj.at("name").get<std::string>();
        g.n_features = gj.at("features").get<int>();
        g.cohens_d = gj.at("cohens_d").get<double>();
        spec.groups.push_back(std::move(g));
    }
    if (j.contains("samples_per_domain"))
        spec.samples_per_domain = j.at("samples_per_domain").get<int>();
    if (j.contains("users_per_domain"))
        spec.users_per_domain = j.at("users_per_domain").get<int>();
    if (j.contains("task")) spec.task = task_from_name(j.at("task").get<std::string>());
    if (j.contains("label_features")) spec.label_feature_count = j.at("label_features").get<int>();
    if (j.contains("user_sd")) spec.user_sd = j.at("user_sd").get<double>();
    if (j.contains("seed")) spec.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("source_name")) spec.source_name = j.at("source_name").get<std::string>();
    if (j.contains("target_name")) spec.target_name = j.at("target_name").get<std::string>();
    spec.validate();
    return spec;
}

nlohmann::json synth_spec_to_json(const SynthSpec& spec) {
    nlohmann::json groups = nlohmann::json::array();
    for (const auto& g : spec.groups)
        groups.push_back({{"name", g.name}, {"features", g.n_features}, {"cohens_d", g.cohens_d}});
    return {{"groups", groups},
            {"samples_per_domain", spec.samples_per_domain},
            {"users_per_domain", spec.users_per_domain},
            {"task", task_name(spec.task)},
            {"label_features", spec.label_feature_count},
            {"user_sd", spec.user_sd},
            {"seed", spec.seed},
            {"source_name", spec.source_name},
            {"target_name", spec.target_name}};
}

ArchitectureSpec parse_architecture(const nlohmann::json& j) {
    if (j.contains("preset")) {
        require_known_keys(j, {"preset"}, "arch");
        const std::string preset = j.at("preset").get<std::string>();
        if (preset == "wenet") return ArchitectureSpec::wenet();
        if (preset == "weee") return ArchitectureSpec::weee();
        throw SchemaError("arch: unknown preset '" + preset + "'");
    }
    require_known_keys(j,
                       {"encoder_hidden", "encoder_dropout", "head_hidden", "head_dropout",
                        "domain_hidden", "source_hidden", "source_dropout", "batch"},
                       "arch");
    ArchitectureSpec s;
    s.encoder_hidden = j.at("encoder_hidden").get<std::vector<std::size_t>>();
    s.head_hidden = j.at("head_hidden").get<std::vector<std::size_t>>();
    s.domain_hidden = j.at("domain_hidden").get<std::vector<std::size_t>>();
    s.batch_size = j.at("batch").get<std::size_t>();
    if (j.contains("encoder_dropout"))
        s.encoder_dropout = j.at("encoder_dropout").get<std::vector<double>>();
    if (j.contains("head_dropout"))
        s.head_dropout = j.at("head_dropout").get<std::vector<double>>();
    if (j.contains("source_hidden")) {
        s.source_hidden = j.at("source_hidden").get<std::vector<std::size_t>>();
        if (j.contains("source_dropout"))
            s.source_dropout = j.at("source_dropout").get<std::vector<double>>();
    } else {
        // source-only stack defaults to encoder + target-head hidden layers
        s.source_hidden = s.encoder_hidden;
        s.source_hidden.insert(s.source_hidden.end(), s.head_hidden.begin(), s.head_hidden.end());
        s.source_dropout = s.encoder_dropout;
        s.source_dropout.resize(s.encoder_hidden.size(), 0.0);
        for (double r : s.head_dropout) s.source_dropout.push_back(r);
    }
    s.validate();
    return s;
}

RunConfig parse_run_config(const nlohmann::json& j) {
    require_known_keys(j,
                       {"seed", "out_dir", "task", "data", "synth", "arch", "methods", "alpha",
                        "beta", "lr", "anneal", "early_stop", "split", "val_fraction",
                        "shift_cap", "jobs"},
                       "config");
    RunConfig cfg;
    if (!j.contains("out_dir")) throw SchemaError("config: 'out_dir' required");
    cfg.out_dir = j.at("out_dir").get<std::string>();
    if (!j.contains("task")) throw SchemaError("config: 'task' required");
    cfg.experiment.task = task_from_name(j.at("task").get<std::string>());
    if (!j.contains("arch")) throw SchemaError("config: 'arch' required");
    cfg.experiment.arch = parse_architecture(j.at("arch"));

    const bool has_data = j.contains("data");
    const bool has_synth = j.contains("synth");
    if (has_data == has_synth)
        throw SchemaError("config: exactly one of 'data' or 'synth' required");
    if (has_data) {
        const auto& dj = j.at("data");
        require_known_keys(dj, {"source", "targets", "map"}, "config.data");
        RunConfig::DataPaths paths;
        paths.source = dj.at("source").get<std::string>();
        paths.targets = dj.at("targets").get<std::vector<std::string>>();
        paths.map = dj.at("map").get<std::string>();
        if (paths.targets.empty()) throw SchemaError("config.data: at least one target required");
        cfg.data = std::move(paths);
    } else {
        cfg.synth = parse_synth_spec(j.at("synth"));
        if (cfg.synth->task != cfg.experiment.task)
            throw SchemaError("config: synth task and experiment task disagree");
    }

    if (j.contains("seed")) cfg.experiment.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("methods")) {
        cfg.experiment.methods.clear();
        for (const auto& mj : j.at("methods"))
            cfg.experiment.methods.push_back(method_from_name(mj.get<std::string>()));
        if (cfg.experiment.methods.empty())
            throw SchemaError("config: 'methods' must be non-empty when given");
    }
    if (j.contains("alpha")) cfg.experiment.alpha = j.at("alpha").get<int>();
    if (j.contains("beta")) cfg.experiment.beta = j.at("beta").get<double>();
    if (j.contains("lr")) cfg.experiment.adam.lr = j.at("lr").get<double>();
    if (j.contains("anneal")) {
        const auto& aj = j.at("anneal");
        require_known_keys(aj, {"gamma", "epochs"}, "config.anneal");
        if (aj.contains("gamma")) cfg.experiment.anneal.gamma = aj.at("gamma").get<double>();
        if (aj.contains("epochs"))
            cfg.experiment.anneal.duration_epochs = aj.at("epochs").get<int>();
    }
    if (j.contains("early_stop")) {
        const auto& ej = j.at("early_stop");
        require_known_keys(ej, {"patience", "max_epochs"}, "config.early_stop");
        if (ej.contains("patience")) cfg.experiment.stop.patience = ej.at("patience").get<int>();
        if (ej.contains("max_epochs"))
            cfg.experiment.stop.max_epochs = ej.at("max_epochs").get<int>();
    }
    if (j.contains("split")) {
        const auto& sj = j.at("split");
        require_known_keys(sj, {"train_fraction", "repeats"}, "config.split");
        if (sj.contains("train_fraction"))
            cfg.experiment.split.train_fraction = sj.at("train_fraction").get<double>();
        if (sj.contains("repeats")) cfg.experiment.split.n_repeats = sj.at("repeats").get<int>();
    }
    if (j.contains("val_fraction"))
        cfg.experiment.val_fraction = j.at("val_fraction").get<double>();
    if (j.contains("shift_cap")) cfg.experiment.shift_cap = j.at("shift_cap").get<double>();
    if (j.contains("jobs")) cfg.experiment.jobs = j.at("jobs").get<int>();

    if (cfg.experiment.alpha < 1) throw SchemaError("config: alpha must be >= 1");
    if (cfg.experiment.beta < 0.0) throw SchemaError("config: beta must be >= 0");
    if (cfg.experiment.jobs < 1) throw SchemaError("config: jobs must be >= 1");
    if (!(cfg.experiment.val_fraction > 0.0 && cfg.experiment.val_fraction < 1.0))
        throw SchemaError("config: val_fraction must lie in (0,1)");
    if (cfg.experiment.stop.patience < 1 || cfg.experiment.stop.max_epochs < 1)
        throw SchemaError("config: early-stop policy must be positive");
    if (cfg.experiment.anneal.duration_epochs < 1)
        throw SchemaError("config: anneal epochs must be >= 1");
    return cfg;
}

}  // namespace m3bat
