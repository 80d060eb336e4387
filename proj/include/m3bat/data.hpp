#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "m3bat/matrix.hpp"

namespace m3bat {

enum class TaskKind { classification, regression };

// Tabular features plus per-row user id and label. The unit of ingestion,
// splitting and training.
struct FeatureTable {
    std::string domain_name;
    std::vector<std::string> feature_names;
    Matrix rows;  // n x f
    std::vector<std::string> user_ids;
    std::vector<double> labels;

    std::size_t n_rows() const { return rows.rows; }
    std::size_t n_features() const { return feature_names.size(); }

    void validate() const;
    FeatureTable take_rows(const std::vector<std::size_t>& idx) const;
    std::vector<double> column(std::size_t f) const;
    std::vector<std::string> distinct_users() const;  // sorted
};

// feature name -> modality name, total over a table's features.
struct ModalityMap {
    std::map<std::string, std::string> entries;

    const std::string& modality_of(const std::string& feature) const;
    // Throws SchemaError listing features absent from the map.
    void require_covers(const std::vector<std::string>& features) const;
};

struct LoadResult {
    FeatureTable table;
    ModalityMap modalities;
    std::size_t dropped_rows = 0;  // rows discarded for missing values
};

// CSV with a header; reserved columns __user__ and __label__; every other
// column is a feature. Rows with an empty cell are dropped and counted.
LoadResult load_csv(const std::string& csv_path, const std::string& map_path);
FeatureTable load_table_csv(const std::string& csv_path);  // no modality map
ModalityMap load_modality_map(const std::string& path);

std::string table_to_csv(const FeatureTable& table);
std::string modality_map_to_text(const ModalityMap& map);
void save_csv(const FeatureTable& table, const std::string& path);
void save_modality_map(const ModalityMap& map, const std::string& path);

// ---- synthetic shifted-domain generator ----

struct SynthGroup {
    std::string name;
    int n_features = 1;
    double cohens_d = 0.0;  // target mean shift between domains
};

struct SynthSpec {
    std::vector<SynthGroup> groups;
    int samples_per_domain = 2000;
    int users_per_domain = 30;
    TaskKind task = TaskKind::classification;
    int label_feature_count = 0;  // 0 = use all features
    double user_sd = 0.3;         // per-user intercept SD; marginal variance stays 1
    std::uint64_t seed = 0;
    std::string source_name = "source";
    std::string target_name = "target";

    void validate() const;
};

// The deterministic labeling rule shared by both domains (covariate shift
// only: p(y|x) is identical across domains by construction).
struct LabelRule {
    std::vector<double> weights;  // full feature length; zero outside the subset
    double threshold = 0.0;       // classification cut on weights . x
    TaskKind task = TaskKind::classification;

    double apply(const double* x, std::size_t n) const;
};

struct SynthResult {
    FeatureTable source;
    FeatureTable target;
    ModalityMap modalities;
    LabelRule rule;
};

SynthResult generate_synthetic(const SynthSpec& spec);

const char* task_name(TaskKind task);
TaskKind task_from_name(const std::string& name);

}  // namespace m3bat
