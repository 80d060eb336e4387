#include "m3bat/training.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "m3bat/error.hpp"
#include "m3bat/losses.hpp"
#include "m3bat/metrics.hpp"

namespace m3bat {

double anneal_lambda(const AnnealSchedule& s, double p) {
    if (!(p >= 0.0 && p <= 1.0))
        throw ValidationError("anneal_lambda: p must lie in [0,1], got " + std::to_string(p));
    return 2.0 / (1.0 + std::exp(-s.gamma * p)) - 1.0;
}

double anneal_toward(const AnnealSchedule& s, double p, double lambda_target) {
    if (!(lambda_target >= 0.0 && lambda_target <= 1.0))
        throw ValidationError("anneal_toward: target must lie in [0,1]");
    return 1.0 - (1.0 - lambda_target) * anneal_lambda(s, p);
}

std::size_t StageTrace::lambda_columns() const {
    std::size_t n = 1;
    for (const auto& e : epochs) n = std::max(n, e.lambdas.size());
    return n;
}

std::string StageTrace::to_csv() const {
    const std::size_t k = lambda_columns();
    std::ostringstream out;
    out << "stage,epoch,task_loss,domain_loss";
    for (std::size_t i = 0; i < k; ++i) out << ",lambda_branch_" << i;
    out << ",val_metric\n";
    char buf[40];
    auto fmt = [&](double v) {
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        return std::string(buf);
    };
    for (const auto& e : epochs) {
        out << e.stage << ',' << e.epoch << ',' << fmt(e.task_loss) << ',';
        if (e.has_domain) out << fmt(e.domain_loss);
        for (std::size_t i = 0; i < k; ++i)
            out << ',' << fmt(i < e.lambdas.size() ? e.lambdas[i] : e.lambdas.back());
        out << ',' << fmt(e.val_metric) << '\n';
    }
    return out.str();
}

void StageTrace::write_csv(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out << to_csv();
    if (!out) throw IoError("write failed for " + path);
}

double domain_auc(const ModelGraph& g, const Matrix& source_rows, const Matrix& target_rows) {
    if (!g.domain_head) throw StateError("domain_auc: graph has no domain head");
    const Matrix es = graph_embed(g, source_rows, Mode::infer, nullptr, nullptr);
    const Matrix et = graph_embed(g, target_rows, Mode::infer, nullptr, nullptr);
    Matrix ps = graph_domain_forward(g, es, Mode::infer, nullptr, nullptr);
    Matrix pt = graph_domain_forward(g, et, Mode::infer, nullptr, nullptr);
    std::vector<double> scores = ps.data;
    scores.insert(scores.end(), pt.data.begin(), pt.data.end());
    std::vector<double> labels(ps.data.size(), 0.0);
    labels.insert(labels.end(), pt.data.size(), 1.0);
    return auc_macro(scores, labels);
}

namespace {

// Substream tags; fixed so identical seeds replay identical runs.
enum : std::uint64_t {
    kTagInitCommon = 100,
    kTagInitMultibranch = 101,
    kTagStage1 = 1,
    kTagStage2 = 2,
    kTagStage3a = 3,
    kTagStage3bWarm = 4,
    kTagStage3b = 5,
    kTagStage3c = 6,
    kTagDropout = 11,
    kTagShuffleSource = 12,
    kTagShuffleTarget = 13,
};

enum class LambdaMode { off, zero, anneal_up, fixed_one, anneal_toward_target };

struct StageSpec {
    std::string id;
    std::uint64_t tag = kTagStage1;
    LambdaMode lmode = LambdaMode::off;
    bool use_mmd = false;
    double beta = 0.0;
    bool restore_best = true;     // adversarial phases keep their final state
    bool gate_on_anneal = false;  // early stop may fire only once p reaches 1
    bool record_diag = false;
};

struct StageData {
    const Matrix* src_x = nullptr;
    const std::vector<double>* src_y = nullptr;
    const Matrix* val_x = nullptr;
    const std::vector<double>* val_y = nullptr;
    const Matrix* tgt_x = nullptr;
    const Matrix* diag_src = nullptr;
    const Matrix* diag_tgt = nullptr;
};

struct EarlyStopper {
    int patience;
    double best = std::numeric_limits<double>::infinity();
    int bad = 0;

    explicit EarlyStopper(int patience_) : patience(patience_) {}
    bool observe(double v) {
        if (v < best) {
            best = v;
            bad = 0;
            return true;
        }
        ++bad;
        return false;
    }
    bool exhausted() const { return bad >= patience; }
};

LossResult task_loss(TaskKind task, const Matrix& pred, const std::vector<double>& y) {
    return task == TaskKind::classification ? bce_loss(pred, y) : mse_loss(pred, y);
}

double validation_loss(const ModelGraph& g, const Matrix& x, const std::vector<double>& y) {
    Matrix emb = graph_embed(g, x, Mode::infer, nullptr, nullptr);
    Matrix pred = graph_task_forward(g, emb, Mode::infer, nullptr, nullptr);
    return task_loss(g.task, pred, y).value;
}

Matrix gather_rows(const Matrix& x, const std::vector<std::size_t>& idx, std::size_t begin,
                   std::size_t count, bool wrap) {
    std::vector<std::size_t> rows(count);
    for (std::size_t k = 0; k < count; ++k)
        rows[k] = idx[wrap ? (begin + k) % idx.size() : begin + k];
    return select_rows(x, rows);
}

std::vector<double> gather_labels(const std::vector<double>& y,
                                  const std::vector<std::size_t>& idx, std::size_t begin,
                                  std::size_t count) {
    std::vector<double> out(count);
    for (std::size_t k = 0; k < count; ++k) out[k] = y[idx[begin + k]];
    return out;
}

// One training stage: shuffled source batches, paired with equal-size
// target batches when the stage has an alignment objective, one Adam step
// per batch, early stopping on the validation task loss.
void run_stage(ModelGraph& g, const StageSpec& spec, const StageData& data,
               const TrainOptions& opt, std::size_t lambda_cols, StageTrace& trace) {
    Rng stage_rng = Rng(opt.seed).derive(spec.tag);
    Rng rng_dropout = stage_rng.derive(kTagDropout);
    Rng rng_src = stage_rng.derive(kTagShuffleSource);
    Rng rng_tgt = stage_rng.derive(kTagShuffleTarget);

    const bool adversarial = spec.lmode != LambdaMode::off;
    const bool with_mmd = spec.use_mmd && spec.beta > 0.0;
    const bool needs_target = adversarial || with_mmd;
    if (needs_target && (!data.tgt_x || data.tgt_x->rows == 0))
        throw ValidationError("stage " + spec.id + ": unlabeled target rows required");
    if (adversarial && !g.domain_head)
        throw StateError("stage " + spec.id + ": graph has no domain head");

    const std::size_t n_src = data.src_x->rows;
    if (n_src == 0) throw ValidationError("stage " + spec.id + ": empty training set");
    const std::size_t batch = std::min<std::size_t>(g.batch_size, n_src);
    const std::size_t n_batches = std::max<std::size_t>(1, n_src / batch);

    std::vector<std::size_t> src_idx(n_src);
    for (std::size_t i = 0; i < n_src; ++i) src_idx[i] = i;
    std::vector<std::size_t> tgt_idx;
    if (needs_target) {
        tgt_idx.resize(data.tgt_x->rows);
        for (std::size_t i = 0; i < tgt_idx.size(); ++i) tgt_idx[i] = i;
    }

    auto params = collect_params(g);
    auto grads = collect_grads(g);
    AdamState adam(params, opt.adam);

    EarlyStopper stopper(opt.stop.patience);
    std::vector<double> best_snapshot;
    const int duration = std::max(1, opt.anneal.duration_epochs);
    const bool annealed = spec.lmode == LambdaMode::anneal_up ||
                          spec.lmode == LambdaMode::anneal_toward_target;

    for (int epoch = 1; epoch <= opt.stop.max_epochs; ++epoch) {
        const double p = std::min(1.0, static_cast<double>(epoch - 1) / duration);

        std::vector<double> lambdas(g.branches.size(), 0.0);
        switch (spec.lmode) {
            case LambdaMode::off:
            case LambdaMode::zero: break;
            case LambdaMode::anneal_up:
                std::fill(lambdas.begin(), lambdas.end(), anneal_lambda(opt.anneal, p));
                break;
            case LambdaMode::fixed_one: std::fill(lambdas.begin(), lambdas.end(), 1.0); break;
            case LambdaMode::anneal_toward_target:
                for (std::size_t b = 0; b < g.branches.size(); ++b)
                    lambdas[b] = anneal_toward(opt.anneal, p, g.branches[b].lambda_m);
                break;
        }

        rng_src.shuffle(src_idx);
        if (needs_target) rng_tgt.shuffle(tgt_idx);

        double epoch_task = 0.0, epoch_domain = 0.0;
        std::size_t tgt_cursor = 0;
        for (std::size_t bi = 0; bi < n_batches; ++bi) {
            const Matrix xs = gather_rows(*data.src_x, src_idx, bi * batch, batch, false);
            const std::vector<double> ys =
                gather_labels(*data.src_y, src_idx, bi * batch, batch);

            g.zero_grads();
            GraphCache cache_s;
            Matrix emb_s = graph_embed(g, xs, Mode::train, &rng_dropout, &cache_s);
            Matrix pred = graph_task_forward(g, emb_s, Mode::train, &rng_dropout, &cache_s);
            LossResult task = task_loss(g.task, pred, ys);
            if (!std::isfinite(task.value))
                throw DivergenceError("stage " + spec.id + ": non-finite task loss at epoch " +
                                      std::to_string(epoch));
            epoch_task += task.value;
            Matrix d_emb_s = graph_task_backward(g, cache_s, task.grad);

            GraphCache cache_t;
            Matrix d_emb_t;
            bool have_target_grad = false;

            if (adversarial) {
                const Matrix xt = gather_rows(*data.tgt_x, tgt_idx, tgt_cursor, batch, true);
                tgt_cursor += batch;
                Matrix emb_t = graph_embed(g, xt, Mode::train, &rng_dropout, &cache_t);

                GraphCache cache_d;
                Matrix joint = vstack(emb_s, emb_t);
                Matrix dpred =
                    graph_domain_forward(g, joint, Mode::train, &rng_dropout, &cache_d);
                std::vector<double> dlabels(emb_s.rows, 0.0);
                dlabels.insert(dlabels.end(), emb_t.rows, 1.0);
                LossResult dom = bce_loss(dpred, dlabels);
                if (!std::isfinite(dom.value))
                    throw DivergenceError("stage " + spec.id +
                                          ": non-finite domain loss at epoch " +
                                          std::to_string(epoch));
                epoch_domain += dom.value;

                // Head gets true gradients; the embedding gradient comes
                // back reversed per branch.
                Matrix d_joint = graph_domain_backward(g, cache_d, dom.grad, lambdas);
                for (std::size_t r = 0; r < emb_s.rows; ++r) {
                    const double* src = d_joint.row_ptr(r);
                    double* dst = d_emb_s.row_ptr(r);
                    for (std::size_t c = 0; c < d_joint.cols; ++c) dst[c] += src[c];
                }
                d_emb_t = Matrix(emb_t.rows, d_joint.cols);
                for (std::size_t r = 0; r < emb_t.rows; ++r) {
                    const double* src = d_joint.row_ptr(emb_s.rows + r);
                    std::copy(src, src + d_joint.cols, d_emb_t.row_ptr(r));
                }
                have_target_grad = true;
            } else if (with_mmd) {
                const Matrix xt = gather_rows(*data.tgt_x, tgt_idx, tgt_cursor, batch, true);
                tgt_cursor += batch;
                Matrix emb_t = graph_embed(g, xt, Mode::train, &rng_dropout, &cache_t);
                if (emb_s.rows >= 2 && emb_t.rows >= 2) {
                    MmdResult res = mmd(emb_s, emb_t);
                    if (!std::isfinite(res.value))
                        throw DivergenceError("stage " + spec.id +
                                              ": non-finite alignment loss at epoch " +
                                              std::to_string(epoch));
                    epoch_domain += res.value;
                    for (std::size_t i = 0; i < d_emb_s.data.size(); ++i)
                        d_emb_s.data[i] += spec.beta * res.grad_source.data[i];
                    d_emb_t = std::move(res.grad_target);
                    for (double& v : d_emb_t.data) v *= spec.beta;
                    have_target_grad = true;
                }
            }

            graph_encoder_backward(g, cache_s, d_emb_s);
            if (have_target_grad) graph_encoder_backward(g, cache_t, d_emb_t);
            adam.step(params, grads);
        }

        const double val = validation_loss(g, *data.val_x, *data.val_y);
        if (!std::isfinite(val))
            throw DivergenceError("stage " + spec.id + ": non-finite validation loss at epoch " +
                                  std::to_string(epoch));

        EpochRecord rec;
        rec.stage = spec.id;
        rec.epoch = epoch;
        rec.task_loss = epoch_task / static_cast<double>(n_batches);
        rec.has_domain = needs_target;
        rec.domain_loss = needs_target ? epoch_domain / static_cast<double>(n_batches)
                                       : std::numeric_limits<double>::quiet_NaN();
        rec.lambdas.assign(lambda_cols, lambdas.empty() ? 0.0 : lambdas.front());
        for (std::size_t b = 0; b < lambdas.size() && b < lambda_cols; ++b)
            rec.lambdas[b] = lambdas[b];
        rec.val_metric = val;
        trace.epochs.push_back(std::move(rec));

        const bool improved = stopper.observe(val);
        if (improved && spec.restore_best) best_snapshot = snapshot_params(g);

        const bool anneal_done = !annealed || p >= 1.0;
        if ((anneal_done || !spec.gate_on_anneal) && stopper.exhausted()) break;
    }

    if (spec.restore_best && !best_snapshot.empty()) restore_params(g, best_snapshot);

    if (spec.record_diag && data.diag_src && data.diag_tgt && g.domain_head &&
        data.diag_src->rows > 0 && data.diag_tgt->rows > 0) {
        trace.stage_end_domain_auc[spec.id] = domain_auc(g, *data.diag_src, *data.diag_tgt);
    }
}

void check_labeled(const FeatureTable& t, const char* what) {
    if (t.n_rows() == 0) throw ValidationError(std::string(what) + ": empty table");
}

void check_adapt_inputs(const AdaptInputs& in) {
    if (!in.source_train || !in.source_val)
        throw ValidationError("adaptation needs labeled source train and validation tables");
    check_labeled(*in.source_train, "source train");
    check_labeled(*in.source_val, "source validation");
    if (!in.target_train || in.target_train->rows == 0)
        throw ValidationError("adaptation needs non-empty unlabeled target rows");
    if (in.target_train->cols != in.source_train->rows.cols)
        throw ShapeError("source and target feature widths differ");
}

}  // namespace

TrainResult train_source_only(ModelGraph model, const FeatureTable& train,
                              const FeatureTable& val, const TrainOptions& opt) {
    check_labeled(train, "train");
    check_labeled(val, "validation");

    StageData data;
    data.src_x = &train.rows;
    data.src_y = &train.labels;
    data.val_x = &val.rows;
    data.val_y = &val.labels;

    StageSpec spec;
    spec.id = "1";
    spec.tag = kTagStage1;
    spec.lmode = LambdaMode::off;
    spec.restore_best = true;

    TrainResult out{std::move(model), {}};
    run_stage(out.model, spec, data, opt, out.model.branches.size(), out.trace);
    return out;
}

TrainResult finetune(ModelGraph model, const FeatureTable& target_train,
                     const FeatureTable& target_val, const TrainOptions& opt) {
    if (target_train.n_rows() == 0)
        throw ValidationError("finetune: empty target training set");
    check_labeled(target_val, "target validation");

    StageData data;
    data.src_x = &target_train.rows;
    data.src_y = &target_train.labels;
    data.val_x = &target_val.rows;
    data.val_y = &target_val.labels;

    StageSpec spec;
    spec.id = "1";
    spec.tag = kTagStage1;
    spec.lmode = LambdaMode::off;
    spec.restore_best = true;

    TrainResult out{std::move(model), {}};
    run_stage(out.model, spec, data, opt, out.model.branches.size(), out.trace);
    return out;
}

namespace {

// Shared stages 1 -> 2 -> 3a over a freshly built single-encoder graph.
TrainResult run_common_stages(const ArchitectureSpec& spec, TaskKind task, const AdaptInputs& in,
                              const TrainOptions& opt) {
    check_adapt_inputs(in);
    Rng init = Rng(opt.seed).derive(kTagInitCommon);
    ModelGraph g = build_dann(spec, task, in.source_train->rows.cols, init);

    StageData data;
    data.src_x = &in.source_train->rows;
    data.src_y = &in.source_train->labels;
    data.val_x = &in.source_val->rows;
    data.val_y = &in.source_val->labels;
    data.tgt_x = in.target_train;
    data.diag_src = in.source_heldout;
    data.diag_tgt = in.target_heldout;

    TrainResult out{std::move(g), {}};
    const std::size_t cols = out.model.branches.size();

    StageSpec s1{"1", kTagStage1, LambdaMode::off, false, 0.0, true, false, false};
    run_stage(out.model, s1, data, opt, cols, out.trace);

    StageSpec s2{"2", kTagStage2, LambdaMode::zero, false, 0.0, false, false, true};
    run_stage(out.model, s2, data, opt, cols, out.trace);

    StageSpec s3a{"3a", kTagStage3a, LambdaMode::anneal_up, false, 0.0, false, true, true};
    run_stage(out.model, s3a, data, opt, cols, out.trace);
    return out;
}

}  // namespace

TrainResult train_dann(const ArchitectureSpec& spec, TaskKind task, const AdaptInputs& in,
                       const TrainOptions& opt) {
    return run_common_stages(spec, task, in, opt);
}

TrainResult train_mmd(const ArchitectureSpec& spec, TaskKind task, const AdaptInputs& in,
                      double beta, const TrainOptions& opt) {
    if (beta < 0.0) throw ValidationError("train_mmd: beta must be >= 0");
    check_adapt_inputs(in);
    Rng init = Rng(opt.seed).derive(kTagInitCommon);
    ModelGraph g = build_source_model(spec, task, in.source_train->rows.cols, init);

    StageData data;
    data.src_x = &in.source_train->rows;
    data.src_y = &in.source_train->labels;
    data.val_x = &in.source_val->rows;
    data.val_y = &in.source_val->labels;
    data.tgt_x = in.target_train;

    StageSpec stage;
    stage.id = "1";
    stage.tag = kTagStage1;
    stage.lmode = LambdaMode::off;
    stage.use_mmd = true;
    stage.beta = beta;
    stage.restore_best = true;

    TrainResult out{std::move(g), {}};
    run_stage(out.model, stage, data, opt, out.model.branches.size(), out.trace);
    return out;
}

TrainResult train_m3bat(const BranchPlan& plan, const ArchitectureSpec& spec, TaskKind task,
                        const AdaptInputs& in, const TrainOptions& opt) {
    check_adapt_inputs(in);
    const std::size_t input_dim = in.source_train->rows.cols;
    plan.validate_partition(input_dim);

    const std::size_t cols = plan.branches.size();

    // Phase A: the common single-encoder pipeline.
    TrainResult common = run_common_stages(spec, task, in, opt);

    // Phase B: the multi-branch graph, freshly initialized; heads are sized
    // to the new concatenated embedding.
    Rng init = Rng(opt.seed).derive(kTagInitMultibranch);
    ModelGraph g = build_multibranch(plan, spec, task, input_dim, init);

    StageData data;
    data.src_x = &in.source_train->rows;
    data.src_y = &in.source_train->labels;
    data.val_x = &in.source_val->rows;
    data.val_y = &in.source_val->labels;
    data.tgt_x = in.target_train;
    data.diag_src = in.source_heldout;
    data.diag_tgt = in.target_heldout;

    TrainResult out{std::move(g), {}};
    // Keep the common-phase history in the final trace, widened to the
    // multi-branch lambda column count.
    out.trace = std::move(common.trace);
    for (auto& rec : out.trace.epochs) {
        const double shared = rec.lambdas.empty() ? 0.0 : rec.lambdas.front();
        rec.lambdas.assign(cols, shared);
    }

    // Task-only warm-up of the fresh branches, one early-stop cycle.
    StageSpec warm{"3b", kTagStage3bWarm, LambdaMode::off, false, 0.0, true, false, false};
    run_stage(out.model, warm, data, opt, cols, out.trace);

    StageSpec s3b{"3b", kTagStage3b, LambdaMode::fixed_one, false, 0.0, false, false, true};
    run_stage(out.model, s3b, data, opt, cols, out.trace);

    StageSpec s3c{"3c", kTagStage3c, LambdaMode::anneal_toward_target, false, 0.0, false, true,
                  true};
    run_stage(out.model, s3c, data, opt, cols, out.trace);
    return out;
}

}  // namespace m3bat
