#pragma once

#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "m3bat/data.hpp"

namespace m3bat {

struct FeatureShift {
    std::string name;
    std::string modality;
    double cohens_d;
};

struct ModalityShift {
    std::string name;
    double mean_cohens_d;
};

// Per-feature and per-modality Cohen's-d between one source/target pair.
// Features are kept in descending shift order (ties by name).
struct ShiftReport {
    std::string source_name;
    std::string target_name;
    std::vector<FeatureShift> per_feature;
    std::vector<ModalityShift> per_modality;

    nlohmann::json to_json() const;
};

// Absolute standardized mean difference with pooled SD (Bessel-corrected
// sample variances). Throws DegenerateShiftError when the pooled SD is zero
// but the means differ.
double cohens_d(std::span<const double> sample_a, std::span<const double> sample_b);

inline constexpr double kDefaultShiftCap = 3.0;

ShiftReport analyze_shift(const FeatureTable& source, const FeatureTable& target,
                          const ModalityMap& modalities, double degenerate_cap = kDefaultShiftCap);

// Min-max normalization of branch shifts into [0,1] adversarial weights.
// When the smallest shift exceeds the small-effect threshold (0.2), an
// artificial zero joins the list before normalizing.
std::vector<double> lambdas_from_shifts(const std::vector<double>& shifts);

enum class BranchSetup { setup1, setup2 };

struct PlanBranch {
    std::vector<std::size_t> feature_indices;  // ascending, into the table's feature order
    double lambda_m;
    double raw_shift;
};

// Ordered (highest shift first) branch assignment; partitions the feature
// index range exactly.
struct BranchPlan {
    std::vector<PlanBranch> branches;
    BranchSetup setup;
    int alpha = 0;  // setup1 only

    std::size_t total_features() const;
    void validate_partition(std::size_t n_features) const;
};

// Branches by modality: the alpha highest-shift modalities, the alpha
// lowest, and everything else in the middle (no middle branch with exactly
// two modalities).
BranchPlan plan_setup1(const ShiftReport& report, int alpha,
                       const std::vector<std::string>& feature_order);

// Branches by per-feature shift tertiles regardless of modality.
BranchPlan plan_setup2(const ShiftReport& report, const std::vector<std::string>& feature_order);

}  // namespace m3bat
