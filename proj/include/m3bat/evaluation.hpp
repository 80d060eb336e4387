#pragma once

#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "m3bat/data.hpp"
#include "m3bat/metrics.hpp"
#include "m3bat/model.hpp"
#include "m3bat/shift.hpp"
#include "m3bat/training.hpp"

namespace m3bat {

struct SplitSpec {
    double train_fraction = 0.7;
    int n_repeats = 5;
};

struct SplitPair {
    FeatureTable train;
    FeatureTable test;
    std::vector<std::string> train_users;
    std::vector<std::string> test_users;
};

// User-disjoint train/test splits: all rows of a user travel together.
std::vector<SplitPair> make_splits(const FeatureTable& table, const SplitSpec& spec, Rng& rng);

// Carves a user-disjoint validation block out of a training table.
std::pair<FeatureTable, FeatureTable> split_off_validation(const FeatureTable& train,
                                                           double fraction, Rng& rng);

// z-score with the fitted statistics; zero-SD features are centered only.
struct Standardizer {
    std::vector<double> mean;
    std::vector<double> sd;
    static Standardizer fit(const Matrix& rows);
    void apply(Matrix& rows) const;
};

struct LabelScaler {
    double mean = 0.0;
    double sd = 1.0;
    static LabelScaler fit(std::span<const double> labels);
    void apply(std::vector<double>& labels) const;
};

// Uninformed reference: uniform scores for classification, uniform draws
// over the training-label range for regression.
double random_baseline_value(TaskKind task, std::span<const double> test_labels,
                             std::pair<double, double> train_label_range, Rng& rng);

enum class Method {
    random,
    s2s,
    s2t,
    s2t_tl,
    mmd,
    dann,
    m3bat_l1_setup1,
    m3bat_lm_setup1,
    m3bat_lm_setup2,
};

const std::vector<Method>& all_methods();
std::string method_name(Method m);
Method method_from_name(const std::string& name);

struct ExperimentConfig {
    std::vector<Method> methods = all_methods();
    TaskKind task = TaskKind::classification;
    ArchitectureSpec arch;
    int alpha = 1;
    double beta = 1.0;
    AdamConfig adam;
    AnnealSchedule anneal;
    EarlyStopPolicy stop;
    SplitSpec split;
    double val_fraction = 0.15;
    double shift_cap = kDefaultShiftCap;
    std::uint64_t seed = 0;
    int jobs = 1;
};

struct CellResult {
    Method method;
    std::string target_name;
    int target_index = 0;
    int repeat = 0;
    std::uint64_t seed = 0;
    double value = 0.0;
    bool failed = false;
    std::string error;
};

struct NamedTrace {
    std::string name;  // <run>_t<target index>_r<repeat>
    StageTrace trace;
};

struct SummaryRow {
    std::string method;
    std::string target;
    std::string metric;
    std::vector<double> per_repeat;
    double mean = 0.0;
    double stddev = 0.0;
};

struct ExperimentResult {
    std::string metric_name;  // auc | mae
    std::vector<CellResult> cells;
    std::vector<NamedTrace> traces;
    std::vector<SummaryRow> summary;
    std::vector<std::string> failures;  // "method,target,repeat: message"

    std::string summary_csv() const;
    std::string summary_table() const;
    nlohmann::json detail_json() const;
};

// Runs every configured method over user-disjoint splits of the source and
// each target; standardization is fitted on source training rows only.
ExperimentResult run_experiment(const FeatureTable& source,
                                const std::vector<FeatureTable>& targets,
                                const ModalityMap& modalities, const ExperimentConfig& cfg);

}  // namespace m3bat
