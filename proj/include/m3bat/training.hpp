#pragma once

#include <map>
#include <string>
#include <vector>

#include "m3bat/adam.hpp"
#include "m3bat/data.hpp"
#include "m3bat/model.hpp"

namespace m3bat {

// lambda_p = 2/(1 + exp(-gamma p)) - 1, swept over a fixed epoch window.
struct AnnealSchedule {
    double gamma = 10.0;
    int duration_epochs = 30;
};

double anneal_lambda(const AnnealSchedule& s, double p);
// 1 - (1 - target) * lambda_p: sweeps a branch coefficient from 1 down to
// its target as p goes 0 -> 1.
double anneal_toward(const AnnealSchedule& s, double p, double lambda_target);

struct EarlyStopPolicy {
    int patience = 5;
    int max_epochs = 300;
};

struct EpochRecord {
    std::string stage;  // 1, 2, 3a, 3b, 3c
    int epoch;          // 1-based within the stage
    double task_loss;
    double domain_loss;  // NaN when the stage has no domain/alignment term
    bool has_domain = false;
    std::vector<double> lambdas;  // effective per-branch coefficients
    double val_metric;            // monitored validation task loss
};

struct StageTrace {
    std::vector<EpochRecord> epochs;
    // Held-out domain-classifier AUC at the end of each adversarial stage,
    // filled when the trainer was given held-out rows.
    std::map<std::string, double> stage_end_domain_auc;

    std::size_t lambda_columns() const;
    std::string to_csv() const;
    void write_csv(const std::string& path) const;
};

struct TrainOptions {
    AdamConfig adam;
    AnnealSchedule anneal;
    EarlyStopPolicy stop;
    std::uint64_t seed = 0;
};

struct TrainResult {
    ModelGraph model;
    StageTrace trace;
};

// Unlabeled-target inputs for the adaptation trainers. Target rows enter as
// bare feature matrices, so target labels cannot reach any loss here. The
// held-out blocks only feed the per-stage domain-AUC diagnostic.
struct AdaptInputs {
    const FeatureTable* source_train = nullptr;
    const FeatureTable* source_val = nullptr;
    const Matrix* target_train = nullptr;
    const Matrix* source_heldout = nullptr;  // optional diagnostics
    const Matrix* target_heldout = nullptr;
};

// Task-loss training with Adam and early stopping; no domain machinery.
TrainResult train_source_only(ModelGraph model, const FeatureTable& train,
                              const FeatureTable& val, const TrainOptions& opt);

// Continues training every parameter of a trained model on labeled target
// data with a fresh optimizer.
TrainResult finetune(ModelGraph model, const FeatureTable& target_train,
                     const FeatureTable& target_val, const TrainOptions& opt);

// Stages 1 -> 2 -> 3a with a shared annealed lambda ending at 1.
TrainResult train_dann(const ArchitectureSpec& spec, TaskKind task, const AdaptInputs& in,
                       const TrainOptions& opt);

// Task loss + beta * MMD^2 between per-batch source and target embeddings.
TrainResult train_mmd(const ArchitectureSpec& spec, TaskKind task, const AdaptInputs& in,
                      double beta, const TrainOptions& opt);

// The full staged pipeline: 1 -> 2 -> 3a on a common encoder, then the
// multi-branch graph with a task-only warm-up, lambda = 1 on every branch,
// and a final per-branch anneal from 1 down to each lambda_m.
TrainResult train_m3bat(const BranchPlan& plan, const ArchitectureSpec& spec, TaskKind task,
                        const AdaptInputs& in, const TrainOptions& opt);

// Domain-classifier AUC on held-out rows (source labeled 0, target 1).
double domain_auc(const ModelGraph& g, const Matrix& source_rows, const Matrix& target_rows);

}  // namespace m3bat
