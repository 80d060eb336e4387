#include "m3bat/evaluation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <thread>

#include "m3bat/error.hpp"

namespace m3bat {

std::vector<SplitPair> make_splits(const FeatureTable& table, const SplitSpec& spec, Rng& rng) {
    if (!(spec.train_fraction > 0.0 && spec.train_fraction < 1.0))
        throw ValidationError("make_splits: train fraction must lie in (0,1)");
    if (spec.n_repeats < 1) throw ValidationError("make_splits: need at least one repeat");

    std::vector<std::string> users = table.distinct_users();
    if (users.size() < 2) throw ValidationError("make_splits: need at least 2 distinct users");

    const std::size_t n_users = users.size();
    const std::size_t n_train = std::clamp<std::size_t>(
        static_cast<std::size_t>(std::llround(spec.train_fraction * static_cast<double>(n_users))),
        1, n_users - 1);

    std::vector<SplitPair> out;
    out.reserve(static_cast<std::size_t>(spec.n_repeats));
    for (int r = 0; r < spec.n_repeats; ++r) {
        std::vector<std::string> shuffled = users;
        rng.shuffle(shuffled);
        std::set<std::string> train_set(shuffled.begin(),
                                        shuffled.begin() + static_cast<std::ptrdiff_t>(n_train));

        SplitPair pair;
        pair.train_users.assign(train_set.begin(), train_set.end());
        for (const auto& u : users)
            if (!train_set.count(u)) pair.test_users.push_back(u);

        std::vector<std::size_t> train_rows, test_rows;
        for (std::size_t i = 0; i < table.n_rows(); ++i) {
            if (train_set.count(table.user_ids[i])) {
                train_rows.push_back(i);
            } else {
                test_rows.push_back(i);
            }
        }
        pair.train = table.take_rows(train_rows);
        pair.test = table.take_rows(test_rows);
        out.push_back(std::move(pair));
    }
    return out;
}

std::pair<FeatureTable, FeatureTable> split_off_validation(const FeatureTable& train,
                                                           double fraction, Rng& rng) {
    if (!(fraction > 0.0 && fraction < 1.0))
        throw ValidationError("split_off_validation: fraction must lie in (0,1)");
    std::vector<std::string> users = train.distinct_users();
    if (users.size() < 2)
        throw ValidationError("split_off_validation: need at least 2 distinct users");

    const std::size_t n_val = std::clamp<std::size_t>(
        static_cast<std::size_t>(std::llround(fraction * static_cast<double>(users.size()))), 1,
        users.size() - 1);
    std::vector<std::string> shuffled = users;
    rng.shuffle(shuffled);
    std::set<std::string> val_set(shuffled.begin(),
                                  shuffled.begin() + static_cast<std::ptrdiff_t>(n_val));

    std::vector<std::size_t> keep_rows, val_rows;
    for (std::size_t i = 0; i < train.n_rows(); ++i) {
        if (val_set.count(train.user_ids[i])) {
            val_rows.push_back(i);
        } else {
            keep_rows.push_back(i);
        }
    }
    return {train.take_rows(keep_rows), train.take_rows(val_rows)};
}

Standardizer Standardizer::fit(const Matrix& rows) {
    if (rows.rows == 0) throw ValidationError("standardizer: empty fit table");
    Standardizer s;
    s.mean.assign(rows.cols, 0.0);
    s.sd.assign(rows.cols, 0.0);
    const double n = static_cast<double>(rows.rows);
    for (std::size_t i = 0; i < rows.rows; ++i) {
        const double* row = rows.row_ptr(i);
        for (std::size_t j = 0; j < rows.cols; ++j) s.mean[j] += row[j];
    }
    for (double& m : s.mean) m /= n;
    for (std::size_t i = 0; i < rows.rows; ++i) {
        const double* row = rows.row_ptr(i);
        for (std::size_t j = 0; j < rows.cols; ++j) {
            const double d = row[j] - s.mean[j];
            s.sd[j] += d * d;
        }
    }
    for (double& v : s.sd) v = std::sqrt(v / n);
    return s;
}

void Standardizer::apply(Matrix& rows) const {
    if (rows.cols != mean.size()) throw ShapeError("standardizer: column count mismatch");
    for (std::size_t i = 0; i < rows.rows; ++i) {
        double* row = rows.row_ptr(i);
        for (std::size_t j = 0; j < rows.cols; ++j) {
            row[j] -= mean[j];
            if (sd[j] > 0.0) row[j] /= sd[j];
        }
    }
}

LabelScaler LabelScaler::fit(std::span<const double> labels) {
    if (labels.empty()) throw ValidationError("label scaler: empty fit labels");
    LabelScaler s;
    for (double v : labels) s.mean += v;
    s.mean /= static_cast<double>(labels.size());
    double ss = 0.0;
    for (double v : labels) ss += (v - s.mean) * (v - s.mean);
    s.sd = std::sqrt(ss / static_cast<double>(labels.size()));
    if (s.sd == 0.0) s.sd = 1.0;
    return s;
}

void LabelScaler::apply(std::vector<double>& labels) const {
    for (double& v : labels) v = (v - mean) / sd;
}

double random_baseline_value(TaskKind task, std::span<const double> test_labels,
                             std::pair<double, double> train_label_range, Rng& rng) {
    if (test_labels.empty()) throw ValidationError("random baseline: empty test set");
    std::vector<double> preds(test_labels.size());
    if (task == TaskKind::classification) {
        for (double& p : preds) p = rng.uniform();
        return auc_macro(preds, test_labels);
    }
    for (double& p : preds) p = rng.uniform(train_label_range.first, train_label_range.second);
    return mae_value(preds, test_labels);
}

const std::vector<Method>& all_methods() {
    static const std::vector<Method> methods = {
        Method::random,          Method::s2s,
        Method::s2t,             Method::s2t_tl,
        Method::mmd,             Method::dann,
        Method::m3bat_l1_setup1, Method::m3bat_lm_setup1,
        Method::m3bat_lm_setup2,
    };
    return methods;
}

std::string method_name(Method m) {
    switch (m) {
        case Method::random: return "random";
        case Method::s2s: return "s2s";
        case Method::s2t: return "s2t";
        case Method::s2t_tl: return "s2t_tl";
        case Method::mmd: return "mmd";
        case Method::dann: return "dann";
        case Method::m3bat_l1_setup1: return "m3bat_l1_setup1";
        case Method::m3bat_lm_setup1: return "m3bat_lm_setup1";
        case Method::m3bat_lm_setup2: return "m3bat_lm_setup2";
    }
    return "unknown";
}

Method method_from_name(const std::string& name) {
    for (Method m : all_methods())
        if (method_name(m) == name) return m;
    throw ValidationError("unknown method '" + name + "'");
}

namespace {

// Per-(target, repeat) derived seed tags.
enum : std::uint64_t {
    kTagSplitSource = 1,
    kTagSplitTarget = 2,
    kTagValSource = 3,
    kTagValTarget = 4,
    kTagRandomBaseline = 5,
    kTagFinetune = 6,
    kTagTrainSource = 10,
    kTagTrainMmd = 11,
    kTagTrainDann = 12,
    kTagTrainL1S1 = 13,
    kTagTrainLmS1 = 14,
    kTagTrainLmS2 = 15,
    kTagBuildSource = 1000,
};

FeatureTable align_features(const FeatureTable& t, const std::vector<std::string>& order) {
    if (t.feature_names == order) return t;
    std::map<std::string, std::size_t> col;
    for (std::size_t j = 0; j < t.feature_names.size(); ++j) col[t.feature_names[j]] = j;
    std::vector<std::size_t> perm;
    std::vector<std::string> missing;
    for (const auto& name : order) {
        auto it = col.find(name);
        if (it == col.end()) {
            missing.push_back(name);
        } else {
            perm.push_back(it->second);
        }
    }
    if (!missing.empty() || col.size() != order.size()) {
        std::string msg = "feature schema mismatch between domains;";
        for (const auto& m : missing) msg += " target lacks " + m + ";";
        throw SchemaError(msg);
    }
    FeatureTable out = t;
    out.feature_names = order;
    out.rows = select_columns(t.rows, perm);
    return out;
}

double evaluate_model(const ModelGraph& model, const FeatureTable& test) {
    const std::vector<double> preds = graph_predict(model, test.rows);
    if (model.task == TaskKind::classification) return auc_macro(preds, test.labels);
    return mae_value(preds, test.labels);
}

struct CellOutput {
    std::vector<CellResult> cells;
    std::vector<NamedTrace> traces;
};

// All work for one (target, repeat) pair: splits, scaling, shift analysis
// and every requested method.
CellOutput run_repeat(const FeatureTable& source, const FeatureTable& target, int target_index,
                      int repeat, const ModalityMap& modalities, const ExperimentConfig& cfg) {
    CellOutput out;
    const std::uint64_t cell_tag =
        (static_cast<std::uint64_t>(target_index) << 24) + static_cast<std::uint64_t>(repeat);
    const std::uint64_t seed_tr = Rng::mix(cfg.seed, cell_tag);
    auto seed_for = [&](std::uint64_t tag) { return Rng::mix(seed_tr, tag); };

    // user-disjoint 70/30 per domain, then a validation carve-out
    Rng rng_split_src(seed_for(kTagSplitSource));
    Rng rng_split_tgt(seed_for(kTagSplitTarget));
    SplitSpec one{cfg.split.train_fraction, 1};
    SplitPair src_split = std::move(make_splits(source, one, rng_split_src).front());
    SplitPair tgt_split = std::move(make_splits(target, one, rng_split_tgt).front());

    Rng rng_val_src(seed_for(kTagValSource));
    Rng rng_val_tgt(seed_for(kTagValTarget));
    auto [src_train, src_val] = split_off_validation(src_split.train, cfg.val_fraction,
                                                     rng_val_src);
    auto [tgt_adapt, tgt_heldout] = split_off_validation(tgt_split.train, cfg.val_fraction,
                                                         rng_val_tgt);

    // standardization fitted on source training rows only
    const Standardizer scaler = Standardizer::fit(src_split.train.rows);
    FeatureTable src_test = src_split.test;
    FeatureTable tgt_test = tgt_split.test;
    scaler.apply(src_train.rows);
    scaler.apply(src_val.rows);
    scaler.apply(src_test.rows);
    scaler.apply(tgt_adapt.rows);
    scaler.apply(tgt_heldout.rows);
    scaler.apply(tgt_test.rows);

    std::pair<double, double> label_range{0.0, 1.0};
    if (cfg.task == TaskKind::regression) {
        const LabelScaler label_scaler = LabelScaler::fit(src_split.train.labels);
        label_scaler.apply(src_train.labels);
        label_scaler.apply(src_val.labels);
        label_scaler.apply(src_test.labels);
        label_scaler.apply(tgt_adapt.labels);
        label_scaler.apply(tgt_heldout.labels);
        label_scaler.apply(tgt_test.labels);
        std::vector<double> scaled_train = src_train.labels;
        scaled_train.insert(scaled_train.end(), src_val.labels.begin(), src_val.labels.end());
        const auto [lo, hi] = std::minmax_element(scaled_train.begin(), scaled_train.end());
        label_range = {*lo, *hi};
    }

    AdaptInputs adapt;
    adapt.source_train = &src_train;
    adapt.source_val = &src_val;
    adapt.target_train = &tgt_adapt.rows;
    adapt.source_heldout = &src_val.rows;
    adapt.target_heldout = &tgt_heldout.rows;

    const std::size_t input_dim = source.n_features();

    // shift analysis on the training sides (Cohen's-d is affine-invariant,
    // so standardized rows give identical values)
    std::optional<BranchPlan> plan_s1, plan_s2, plan_l1;
    auto branch_plan = [&](Method m) -> const BranchPlan& {
        if (!plan_s1) {
            const ShiftReport report =
                analyze_shift(src_split.train, tgt_split.train, modalities, cfg.shift_cap);
            plan_s1 = plan_setup1(report, cfg.alpha, source.feature_names);
            plan_s2 = plan_setup2(report, source.feature_names);
            plan_l1 = *plan_s1;
            for (auto& b : plan_l1->branches) b.lambda_m = 1.0;
        }
        if (m == Method::m3bat_lm_setup1) return *plan_s1;
        if (m == Method::m3bat_lm_setup2) return *plan_s2;
        return *plan_l1;
    };

    // one source model shared by s2s / s2t / s2t_tl
    std::optional<TrainResult> source_run;
    bool source_traced = false;
    auto source_model = [&]() -> const TrainResult& {
        if (!source_run) {
            TrainOptions opt{cfg.adam, cfg.anneal, cfg.stop, seed_for(kTagTrainSource)};
            Rng init(Rng::mix(opt.seed, kTagBuildSource));
            ModelGraph g = build_source_model(cfg.arch, cfg.task, input_dim, init);
            source_run = train_source_only(std::move(g), src_train, src_val, opt);
        }
        return *source_run;
    };

    const std::string suffix =
        "_t" + std::to_string(target_index) + "_r" + std::to_string(repeat);
    auto add_trace = [&](const std::string& run_name, const StageTrace& trace) {
        out.traces.push_back({run_name + suffix, trace});
    };

    for (Method m : cfg.methods) {
        CellResult cell;
        cell.method = m;
        cell.target_name = target.domain_name;
        cell.target_index = target_index;
        cell.repeat = repeat;
        cell.seed = seed_tr;
        try {
            switch (m) {
                case Method::random: {
                    Rng rng(seed_for(kTagRandomBaseline));
                    cell.value =
                        random_baseline_value(cfg.task, tgt_test.labels, label_range, rng);
                    break;
                }
                case Method::s2s: {
                    const TrainResult& run = source_model();
                    if (!source_traced) {
                        add_trace("source_model", run.trace);
                        source_traced = true;
                    }
                    cell.value = evaluate_model(run.model, src_test);
                    break;
                }
                case Method::s2t: {
                    const TrainResult& run = source_model();
                    if (!source_traced) {
                        add_trace("source_model", run.trace);
                        source_traced = true;
                    }
                    cell.value = evaluate_model(run.model, tgt_test);
                    break;
                }
                case Method::s2t_tl: {
                    TrainOptions opt{cfg.adam, cfg.anneal, cfg.stop, seed_for(kTagFinetune)};
                    TrainResult tuned =
                        finetune(source_model().model, tgt_adapt, tgt_heldout, opt);
                    add_trace("s2t_tl", tuned.trace);
                    cell.value = evaluate_model(tuned.model, tgt_test);
                    break;
                }
                case Method::mmd: {
                    TrainOptions opt{cfg.adam, cfg.anneal, cfg.stop, seed_for(kTagTrainMmd)};
                    TrainResult run = train_mmd(cfg.arch, cfg.task, adapt, cfg.beta, opt);
                    add_trace("mmd", run.trace);
                    cell.value = evaluate_model(run.model, tgt_test);
                    break;
                }
                case Method::dann: {
                    TrainOptions opt{cfg.adam, cfg.anneal, cfg.stop, seed_for(kTagTrainDann)};
                    TrainResult run = train_dann(cfg.arch, cfg.task, adapt, opt);
                    add_trace("dann", run.trace);
                    cell.value = evaluate_model(run.model, tgt_test);
                    break;
                }
                case Method::m3bat_l1_setup1:
                case Method::m3bat_lm_setup1:
                case Method::m3bat_lm_setup2: {
                    const std::uint64_t tag = m == Method::m3bat_l1_setup1 ? kTagTrainL1S1
                                              : m == Method::m3bat_lm_setup1 ? kTagTrainLmS1
                                                                             : kTagTrainLmS2;
                    TrainOptions opt{cfg.adam, cfg.anneal, cfg.stop, seed_for(tag)};
                    TrainResult run =
                        train_m3bat(branch_plan(m), cfg.arch, cfg.task, adapt, opt);
                    add_trace(method_name(m), run.trace);
                    cell.value = evaluate_model(run.model, tgt_test);
                    break;
                }
            }
        } catch (const std::exception& e) {
            cell.failed = true;
            cell.error = e.what();
        }
        out.cells.push_back(std::move(cell));
    }
    return out;
}

std::string format_fixed(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

}  // namespace

ExperimentResult run_experiment(const FeatureTable& source,
                                const std::vector<FeatureTable>& targets,
                                const ModalityMap& modalities, const ExperimentConfig& cfg) {
    if (targets.empty()) throw ValidationError("run_experiment: no targets");
    if (cfg.methods.empty()) throw ValidationError("run_experiment: no methods configured");
    cfg.arch.validate();
    modalities.require_covers(source.feature_names);

    std::vector<FeatureTable> aligned;
    aligned.reserve(targets.size());
    for (const auto& t : targets) aligned.push_back(align_features(t, source.feature_names));

    // one work item per (target, repeat)
    struct Item {
        int target_index;
        int repeat;
    };
    std::vector<Item> items;
    for (int ti = 0; ti < static_cast<int>(aligned.size()); ++ti)
        for (int r = 0; r < cfg.split.n_repeats; ++r) items.push_back({ti, r});

    std::vector<CellOutput> outputs(items.size());
    const int jobs = std::max(1, std::min<int>(cfg.jobs, static_cast<int>(items.size())));
    if (jobs == 1) {
        for (std::size_t i = 0; i < items.size(); ++i)
            outputs[i] = run_repeat(source, aligned[static_cast<std::size_t>(items[i].target_index)],
                                    items[i].target_index, items[i].repeat, modalities, cfg);
    } else {
        std::atomic<std::size_t> next{0};
        auto worker = [&]() {
            for (;;) {
                const std::size_t i = next.fetch_add(1);
                if (i >= items.size()) return;
                outputs[i] =
                    run_repeat(source, aligned[static_cast<std::size_t>(items[i].target_index)],
                               items[i].target_index, items[i].repeat, modalities, cfg);
            }
        };
        std::vector<std::thread> pool;
        for (int t = 0; t < jobs; ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }

    ExperimentResult result;
    result.metric_name = cfg.task == TaskKind::classification ? "auc" : "mae";
    for (auto& o : outputs) {
        for (auto& c : o.cells) {
            if (c.failed)
                result.failures.push_back(method_name(c.method) + "," + c.target_name + ",repeat " +
                                          std::to_string(c.repeat) + ": " + c.error);
            result.cells.push_back(std::move(c));
        }
        for (auto& t : o.traces) result.traces.push_back(std::move(t));
    }

    // per-(method, target) summaries in configuration order
    auto summarize = [&](const std::vector<double>& values) {
        double mean = 0.0;
        for (double v : values) mean += v;
        mean /= static_cast<double>(values.size());
        double ss = 0.0;
        for (double v : values) ss += (v - mean) * (v - mean);
        const double stddev =
            values.size() > 1 ? std::sqrt(ss / static_cast<double>(values.size() - 1)) : 0.0;
        return std::make_pair(mean, stddev);
    };

    const double nan = std::numeric_limits<double>::quiet_NaN();
    for (Method m : cfg.methods) {
        std::vector<std::vector<double>> per_target(aligned.size());
        for (std::size_t ti = 0; ti < aligned.size(); ++ti) {
            std::vector<double> values(static_cast<std::size_t>(cfg.split.n_repeats), nan);
            for (const auto& c : result.cells) {
                if (c.method == m && c.target_index == static_cast<int>(ti) && !c.failed)
                    values[static_cast<std::size_t>(c.repeat)] = c.value;
            }
            per_target[ti] = values;

            SummaryRow row;
            row.method = method_name(m);
            row.target = aligned[ti].domain_name;
            row.metric = result.metric_name;
            row.per_repeat = values;
            const auto [mean, stddev] = summarize(values);
            row.mean = mean;
            row.stddev = stddev;
            result.summary.push_back(std::move(row));
        }
        if (aligned.size() > 1) {
            std::vector<double> averaged(static_cast<std::size_t>(cfg.split.n_repeats), 0.0);
            for (std::size_t r = 0; r < averaged.size(); ++r) {
                double acc = 0.0;
                for (const auto& values : per_target) acc += values[r];
                averaged[r] = acc / static_cast<double>(per_target.size());
            }
            SummaryRow row;
            row.method = method_name(m);
            row.target = "avg";
            row.metric = result.metric_name;
            row.per_repeat = averaged;
            const auto [mean, stddev] = summarize(averaged);
            row.mean = mean;
            row.stddev = stddev;
            result.summary.push_back(std::move(row));
        }
    }
    return result;
}

std::string ExperimentResult::summary_csv() const {
    std::ostringstream out;
    out << "method,target,metric,mean,std\n";
    for (const auto& row : summary) {
        out << row.method << ',' << row.target << ',' << row.metric << ','
            << format_fixed(row.mean) << ',' << format_fixed(row.stddev) << '\n';
    }
    return out.str();
}

std::string ExperimentResult::summary_table() const {
    std::size_t method_w = 6, target_w = 6;
    for (const auto& row : summary) {
        method_w = std::max(method_w, row.method.size());
        target_w = std::max(target_w, row.target.size());
    }
    std::ostringstream out;
    out << std::string(method_w - 6, ' ') << "method  " << std::string(target_w - 6, ' ')
        << "target  " << metric_name << " (mean +/- std)\n";
    for (const auto& row : summary) {
        out << std::string(method_w - row.method.size(), ' ') << row.method << "  "
            << std::string(target_w - row.target.size(), ' ') << row.target << "  "
            << format_fixed(row.mean) << " +/- " << format_fixed(row.stddev) << '\n';
    }
    return out.str();
}

nlohmann::json ExperimentResult::detail_json() const {
    nlohmann::json cells_json = nlohmann::json::array();
    for (const auto& c : cells) {
        nlohmann::json j = {{"method", method_name(c.method)},
                            {"target", c.target_name},
                            {"target_index", c.target_index},
                            {"repeat", c.repeat},
                            {"seed", c.seed}};
        if (c.failed) {
            j["error"] = c.error;
        } else {
            j["value"] = c.value;
        }
        cells_json.push_back(std::move(j));
    }
    nlohmann::json summary_json = nlohmann::json::array();
    for (const auto& row : summary) {
        summary_json.push_back({{"method", row.method},
                                {"target", row.target},
                                {"metric", row.metric},
                                {"per_repeat", row.per_repeat},
                                {"mean", row.mean},
                                {"std", row.stddev}});
    }
    nlohmann::json traces_json = nlohmann::json::array();
    for (const auto& t : traces) traces_json.push_back(t.name);
    return {{"metric", metric_name},
            {"cells", cells_json},
            {"summary", summary_json},
            {"failures", failures},
            {"traces", traces_json}};
}

}  // namespace m3bat
