#include "m3bat/shift.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "m3bat/error.hpp"

namespace m3bat {

namespace {

constexpr double kSmallEffect = 0.2;

struct MeanVar {
    double mean;
    double var;  // Bessel-corrected
};

MeanVar mean_var(std::span<const double> xs) {
    const double n = static_cast<double>(xs.size());
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= n;
    double ss = 0.0;
    for (double x : xs) ss += (x - mean) * (x - mean);
    return {mean, ss / (n - 1.0)};
}

}  // namespace

double cohens_d(std::span<const double> sample_a, std::span<const double> sample_b) {
    if (sample_a.size() < 2 || sample_b.size() < 2)
        throw ValidationError("cohens_d: each sample needs at least 2 values");

    const auto [ma, va] = mean_var(sample_a);
    const auto [mb, vb] = mean_var(sample_b);
    const double na = static_cast<double>(sample_a.size());
    const double nb = static_cast<double>(sample_b.size());
    const double pooled =
        std::sqrt(((na - 1.0) * va + (nb - 1.0) * vb) / (na + nb - 2.0));
    const double gap = std::fabs(ma - mb);
    if (pooled == 0.0) {
        if (gap == 0.0) return 0.0;
        throw DegenerateShiftError("cohens_d: zero pooled SD with unequal means");
    }
    return gap / pooled;
}

ShiftReport analyze_shift(const FeatureTable& source, const FeatureTable& target,
                          const ModalityMap& modalities, double degenerate_cap) {
    const std::set<std::string> src_names(source.feature_names.begin(),
                                          source.feature_names.end());
    const std::set<std::string> tgt_names(target.feature_names.begin(),
                                          target.feature_names.end());
    if (src_names != tgt_names) {
        std::string msg = "analyze_shift: feature sets differ;";
        for (const auto& n : src_names)
            if (!tgt_names.count(n)) msg += " target lacks " + n + ";";
        for (const auto& n : tgt_names)
            if (!src_names.count(n)) msg += " source lacks " + n + ";";
        throw SchemaError(msg);
    }
    modalities.require_covers(source.feature_names);

    std::map<std::string, std::size_t> tgt_col;
    for (std::size_t j = 0; j < target.feature_names.size(); ++j)
        tgt_col[target.feature_names[j]] = j;

    ShiftReport report;
    report.source_name = source.domain_name;
    report.target_name = target.domain_name;

    std::map<std::string, std::pair<double, std::size_t>> modality_acc;
    for (std::size_t j = 0; j < source.feature_names.size(); ++j) {
        const std::string& name = source.feature_names[j];
        const auto a = source.column(j);
        const auto b = target.column(tgt_col.at(name));
        double d;
        try {
            d = cohens_d(a, b);
        } catch (const DegenerateShiftError&) {
            d = degenerate_cap;
        }
        const std::string& modality = modalities.modality_of(name);
        report.per_feature.push_back({name, modality, d});
        auto& acc = modality_acc[modality];
        acc.first += d;
        acc.second += 1;
    }

    std::sort(report.per_feature.begin(), report.per_feature.end(),
              [](const FeatureShift& x, const FeatureShift& y) {
                  if (x.cohens_d != y.cohens_d) return x.cohens_d > y.cohens_d;
                  return x.name < y.name;
              });

    for (const auto& [name, acc] : modality_acc)
        report.per_modality.push_back({name, acc.first / static_cast<double>(acc.second)});
    std::sort(report.per_modality.begin(), report.per_modality.end(),
              [](const ModalityShift& x, const ModalityShift& y) {
                  if (x.mean_cohens_d != y.mean_cohens_d) return x.mean_cohens_d > y.mean_cohens_d;
                  return x.name < y.name;
              });

    return report;
}

nlohmann::json ShiftReport::to_json() const {
    nlohmann::json features = nlohmann::json::array();
    for (const auto& f : per_feature)
        features.push_back({{"name", f.name}, {"modality", f.modality}, {"cohens_d", f.cohens_d}});
    nlohmann::json mods = nlohmann::json::array();
    for (const auto& m : per_modality)
        mods.push_back({{"name", m.name}, {"mean_cohens_d", m.mean_cohens_d}});
    return {{"source", source_name},
            {"target", target_name},
            {"features", features},
            {"modalities", mods}};
}

std::vector<double> lambdas_from_shifts(const std::vector<double>& shifts) {
    for (double s : shifts)
        if (s < 0.0) throw ValidationError("lambdas_from_shifts: negative shift");

    std::vector<double> extended = shifts;
    if (!extended.empty() &&
        *std::min_element(extended.begin(), extended.end()) > kSmallEffect) {
        extended.push_back(0.0);
    }
    if (extended.size() < 2)
        throw ValidationError("lambdas_from_shifts: need at least 2 branches after any "
                              "artificial-zero insertion");

    const double lo = *std::min_element(extended.begin(), extended.end());
    const double hi = *std::max_element(extended.begin(), extended.end());

    std::vector<double> lambdas(shifts.size());
    if (hi == lo) {
        std::fill(lambdas.begin(), lambdas.end(), 1.0);
        return lambdas;
    }
    for (std::size_t i = 0; i < shifts.size(); ++i) lambdas[i] = (shifts[i] - lo) / (hi - lo);
    return lambdas;
}

std::size_t BranchPlan::total_features() const {
    std::size_t n = 0;
    for (const auto& b : branches) n += b.feature_indices.size();
    return n;
}

void BranchPlan::validate_partition(std::size_t n_features) const {
    std::vector<bool> seen(n_features, false);
    for (const auto& b : branches) {
        for (std::size_t i : b.feature_indices) {
            if (i >= n_features)
                throw ValidationError("branch plan: feature index " + std::to_string(i) +
                                      " out of range");
            if (seen[i])
                throw ValidationError("branch plan: feature index " + std::to_string(i) +
                                      " assigned twice");
            seen[i] = true;
        }
    }
    for (std::size_t i = 0; i < n_features; ++i)
        if (!seen[i])
            throw ValidationError("branch plan: feature index " + std::to_string(i) +
                                  " unassigned");
}

namespace {

std::map<std::string, std::size_t> index_by_name(const std::vector<std::string>& order) {
    std::map<std::string, std::size_t> out;
    for (std::size_t i = 0; i < order.size(); ++i) out[order[i]] = i;
    return out;
}

PlanBranch make_branch(const std::vector<std::size_t>& indices, const ShiftReport& report,
                       const std::vector<std::string>& order) {
    std::map<std::string, double> d_by_name;
    for (const auto& f : report.per_feature) d_by_name[f.name] = f.cohens_d;
    PlanBranch branch;
    branch.feature_indices = indices;
    std::sort(branch.feature_indices.begin(), branch.feature_indices.end());
    double sum = 0.0;
    for (std::size_t i : branch.feature_indices) sum += d_by_name.at(order[i]);
    branch.raw_shift = branch.feature_indices.empty()
                           ? 0.0
                           : sum / static_cast<double>(branch.feature_indices.size());
    branch.lambda_m = 1.0;
    return branch;
}

void assign_lambdas(BranchPlan& plan) {
    std::vector<double> shifts;
    shifts.reserve(plan.branches.size());
    for (const auto& b : plan.branches) shifts.push_back(b.raw_shift);
    const auto lambdas = lambdas_from_shifts(shifts);
    for (std::size_t i = 0; i < plan.branches.size(); ++i) plan.branches[i].lambda_m = lambdas[i];
}

}  // namespace

BranchPlan plan_setup1(const ShiftReport& report, int alpha,
                       const std::vector<std::string>& feature_order) {
    if (alpha < 1) throw ValidationError("plan_setup1: alpha must be >= 1");
    const int n_modalities = static_cast<int>(report.per_modality.size());
    if (n_modalities < 2) throw ValidationError("plan_setup1: need at least 2 modalities");
    const bool two_branch = n_modalities == 2;
    if (two_branch) {
        if (alpha != 1) throw ValidationError("plan_setup1: alpha must be 1 with 2 modalities");
    } else if (n_modalities < 2 * alpha + 1) {
        throw ValidationError("plan_setup1: alpha " + std::to_string(alpha) +
                              " too large for " + std::to_string(n_modalities) + " modalities");
    }

    // per_modality is already sorted by descending mean shift.
    std::set<std::string> high_mods, low_mods;
    for (int i = 0; i < alpha; ++i) high_mods.insert(report.per_modality[i].name);
    for (int i = 0; i < alpha; ++i)
        low_mods.insert(report.per_modality[n_modalities - 1 - i].name);

    std::map<std::string, std::string> modality_by_feature;
    for (const auto& f : report.per_feature) modality_by_feature[f.name] = f.modality;

    std::vector<std::size_t> high, mid, low;
    for (std::size_t i = 0; i < feature_order.size(); ++i) {
        const std::string& modality = modality_by_feature.at(feature_order[i]);
        if (high_mods.count(modality)) {
            high.push_back(i);
        } else if (low_mods.count(modality)) {
            low.push_back(i);
        } else {
            mid.push_back(i);
        }
    }

    BranchPlan plan;
    plan.setup = BranchSetup::setup1;
    plan.alpha = alpha;
    plan.branches.push_back(make_branch(high, report, feature_order));
    if (!two_branch) plan.branches.push_back(make_branch(mid, report, feature_order));
    plan.branches.push_back(make_branch(low, report, feature_order));
    assign_lambdas(plan);
    plan.validate_partition(feature_order.size());
    return plan;
}

BranchPlan plan_setup2(const ShiftReport& report, const std::vector<std::string>& feature_order) {
    const std::size_t n = feature_order.size();
    if (n < 3) throw ValidationError("plan_setup2: need at least 3 features");
    if (report.per_feature.size() != n)
        throw ValidationError("plan_setup2: report does not match the feature order");

    const auto col = index_by_name(feature_order);
    // Tertile sizes, remainder assigned top-first.
    const std::size_t g1 = (n + 2) / 3;
    const std::size_t g2 = (n - g1 + 1) / 2;

    std::vector<std::size_t> high, mid, low;
    for (std::size_t r = 0; r < n; ++r) {
        const std::size_t idx = col.at(report.per_feature[r].name);
        if (r < g1) {
            high.push_back(idx);
        } else if (r < g1 + g2) {
            mid.push_back(idx);
        } else {
            low.push_back(idx);
        }
    }

    BranchPlan plan;
    plan.setup = BranchSetup::setup2;
    plan.branches.push_back(make_branch(high, report, feature_order));
    plan.branches.push_back(make_branch(mid, report, feature_order));
    plan.branches.push_back(make_branch(low, report, feature_order));
    assign_lambdas(plan);
    plan.validate_partition(n);
    return plan;
}

}  // namespace m3bat
