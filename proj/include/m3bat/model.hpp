#pragma once

#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "m3bat/adam.hpp"
#include "m3bat/data.hpp"
#include "m3bat/layers.hpp"
#include "m3bat/shift.hpp"

namespace m3bat {

// Layer sizes and dropout rates for one model family. Presets expand to the
// published WENET / WEEE configurations; explicit specs fill the same
// fields by hand.
struct ArchitectureSpec {
    std::vector<std::size_t> source_hidden;   // source-only stack
    std::vector<double> source_dropout;       // aligned with source_hidden
    std::vector<std::size_t> encoder_hidden;  // adversarial encoder
    std::vector<double> encoder_dropout;
    std::vector<std::size_t> head_hidden;  // target head hidden layers
    std::vector<double> head_dropout;
    std::vector<std::size_t> domain_hidden;  // domain head hidden layers
    std::size_t batch_size = 32;

    static ArchitectureSpec wenet();
    static ArchitectureSpec weee();

    void validate() const;
    nlohmann::json to_json() const;
    static ArchitectureSpec from_json(const nlohmann::json& j);
};

struct EncoderBranch {
    std::vector<std::size_t> feature_indices;
    LayerStack stack;
    double lambda_m = 1.0;
};

// Encoder branch stack + target head (+ optional domain head). Single-branch
// graphs represent the source-only and DANN families.
struct ModelGraph {
    TaskKind task = TaskKind::classification;
    std::size_t input_dim = 0;
    std::size_t embedding_dim = 0;
    std::size_t batch_size = 32;
    std::vector<EncoderBranch> branches;
    LayerStack target_head;
    std::optional<LayerStack> domain_head;
    std::optional<BranchPlan> plan;  // provenance for multi-branch graphs

    void init(Rng& rng);
    void zero_grads();
    std::vector<double> branch_lambdas() const;
};

// Forward/backward caches for one batch through the graph.
struct GraphCache {
    std::vector<StackCache> branch;
    StackCache target_head;
    StackCache domain_head;
};

Matrix graph_embed(const ModelGraph& g, const Matrix& x, Mode mode, Rng* rng, GraphCache* cache);
Matrix graph_task_forward(const ModelGraph& g, const Matrix& embedding, Mode mode, Rng* rng,
                          GraphCache* cache);
Matrix graph_domain_forward(const ModelGraph& g, const Matrix& embedding, Mode mode, Rng* rng,
                            GraphCache* cache);

// Backprop the embedding gradient through every branch encoder.
void graph_encoder_backward(ModelGraph& g, GraphCache& cache, const Matrix& d_embedding);
// Task-head backward; returns the gradient w.r.t. the embedding.
Matrix graph_task_backward(ModelGraph& g, GraphCache& cache, const Matrix& d_prediction);
// Domain-head backward through the per-branch gradient reversal. Each
// branch's segment of the embedding gradient is scaled by -lambda for that
// branch before it reaches the encoder. Returns the reversed gradient.
Matrix graph_domain_backward(ModelGraph& g, GraphCache& cache, const Matrix& d_prediction,
                             const std::vector<double>& effective_lambdas);

// End-to-end prediction in inference mode (n x 1 column flattened).
std::vector<double> graph_predict(const ModelGraph& g, const Matrix& x);

std::vector<ParamRef> collect_params(ModelGraph& g);
std::vector<ParamRef> collect_grads(ModelGraph& g);
std::vector<double> snapshot_params(const ModelGraph& g);
void restore_params(ModelGraph& g, const std::vector<double>& snapshot);

// One encoder branch over all features plus the target head; no domain head.
ModelGraph build_source_model(const ArchitectureSpec& spec, TaskKind task, std::size_t input_dim,
                              Rng& rng);
// Single encoder, target head and sigmoid domain head behind the GRL.
ModelGraph build_dann(const ArchitectureSpec& spec, TaskKind task, std::size_t input_dim,
                      Rng& rng);
// One encoder per plan branch; the final encoder width is split evenly
// (ceiling) across branches and the heads are sized to the concatenation.
ModelGraph build_multibranch(const BranchPlan& plan, const ArchitectureSpec& spec, TaskKind task,
                             std::size_t input_dim, Rng& rng);

// ---- maximum mean discrepancy ----

struct MmdResult {
    double value;
    double bandwidth;
    Matrix grad_source;
    Matrix grad_target;
};

// Biased RBF-kernel MMD^2 with the bandwidth fixed (treated as a constant
// in the gradient).
MmdResult mmd_with_bandwidth(const Matrix& source, const Matrix& target, double bandwidth);
// Median heuristic: bandwidth = median pairwise squared distance over the
// joint batch.
MmdResult mmd(const Matrix& source, const Matrix& target);

// ---- checkpointing ----

void save_model(const ModelGraph& g, const std::string& path);
ModelGraph load_model(const std::string& path);

}  // namespace m3bat
