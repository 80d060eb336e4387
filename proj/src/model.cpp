#include "m3bat/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "m3bat/error.hpp"

namespace m3bat {

ArchitectureSpec ArchitectureSpec::wenet() {
    ArchitectureSpec s;
    s.source_hidden = {128, 128, 64};
    s.source_dropout = {0.5, 0.5, 0.2};
    s.encoder_hidden = {128, 64};
    s.encoder_dropout = {0.5, 0.5};
    s.head_hidden = {64, 32};
    s.head_dropout = {0.2, 0.0};
    s.domain_hidden = {64, 32};
    s.batch_size = 32;
    return s;
}

ArchitectureSpec ArchitectureSpec::weee() {
    ArchitectureSpec s;
    s.source_hidden = {64, 32};
    s.source_dropout = {0.3, 0.2};
    s.encoder_hidden = {64, 32};
    s.encoder_dropout = {0.3, 0.2};
    s.head_hidden = {32};
    s.head_dropout = {0.0};
    s.domain_hidden = {32, 16};
    s.batch_size = 16;
    return s;
}

void ArchitectureSpec::validate() const {
    auto check_sizes = [](const std::vector<std::size_t>& sizes, const char* what) {
        for (std::size_t s : sizes)
            if (s == 0) throw ValidationError(std::string(what) + ": zero layer size");
    };
    check_sizes(source_hidden, "source_hidden");
    check_sizes(encoder_hidden, "encoder_hidden");
    check_sizes(head_hidden, "head_hidden");
    check_sizes(domain_hidden, "domain_hidden");
    if (encoder_hidden.empty()) throw ValidationError("encoder_hidden must be non-empty");
    if (source_dropout.size() > source_hidden.size() ||
        encoder_dropout.size() > encoder_hidden.size() ||
        head_dropout.size() > head_hidden.size())
        throw ValidationError("dropout list longer than its layer list");
    auto check_rates = [](const std::vector<double>& rates) {
        for (double r : rates)
            if (!(r >= 0.0 && r < 1.0)) throw ValidationError("dropout rate outside [0,1)");
    };
    check_rates(source_dropout);
    check_rates(encoder_dropout);
    check_rates(head_dropout);
    if (batch_size == 0) throw ValidationError("batch size must be positive");
}

namespace {

nlohmann::json sizes_json(const std::vector<std::size_t>& v) {
    return nlohmann::json(v);
}

std::vector<std::size_t> sizes_from_json(const nlohmann::json& j) {
    return j.get<std::vector<std::size_t>>();
}

}  // namespace

nlohmann::json ArchitectureSpec::to_json() const {
    return {{"source_hidden", sizes_json(source_hidden)},
            {"source_dropout", source_dropout},
            {"encoder_hidden", sizes_json(encoder_hidden)},
            {"encoder_dropout", encoder_dropout},
            {"head_hidden", sizes_json(head_hidden)},
            {"head_dropout", head_dropout},
            {"domain_hidden", sizes_json(domain_hidden)},
            {"batch_size", batch_size}};
}

ArchitectureSpec ArchitectureSpec::from_json(const nlohmann::json& j) {
    ArchitectureSpec s;
    s.source_hidden = sizes_from_json(j.at("source_hidden"));
    s.source_dropout = j.at("source_dropout").get<std::vector<double>>();
    s.encoder_hidden = sizes_from_json(j.at("encoder_hidden"));
    s.encoder_dropout = j.at("encoder_dropout").get<std::vector<double>>();
    s.head_hidden = sizes_from_json(j.at("head_hidden"));
    s.head_dropout = j.at("head_dropout").get<std::vector<double>>();
    s.domain_hidden = sizes_from_json(j.at("domain_hidden"));
    s.batch_size = j.at("batch_size").get<std::size_t>();
    s.validate();
    return s;
}

void ModelGraph::init(Rng& rng) {
    for (auto& b : branches) b.stack.init(rng);
    target_head.init(rng);
    if (domain_head) domain_head->init(rng);
}

void ModelGraph::zero_grads() {
    for (auto& b : branches) b.stack.zero_grads();
    target_head.zero_grads();
    if (domain_head) domain_head->zero_grads();
}

std::vector<double> ModelGraph::branch_lambdas() const {
    std::vector<double> out;
    out.reserve(branches.size());
    for (const auto& b : branches) out.push_back(b.lambda_m);
    return out;
}

Matrix graph_embed(const ModelGraph& g, const Matrix& x, Mode mode, Rng* rng, GraphCache* cache) {
    if (x.cols != g.input_dim)
        throw ShapeError("graph_embed: input has " + std::to_string(x.cols) +
                         " features, graph expects " + std::to_string(g.input_dim));
    if (cache) cache->branch.resize(g.branches.size());

    Matrix embedding(x.rows, g.embedding_dim);
    std::size_t offset = 0;
    for (std::size_t bi = 0; bi < g.branches.size(); ++bi) {
        const auto& branch = g.branches[bi];
        Matrix slice = select_columns(x, branch.feature_indices);
        Matrix out =
            branch.stack.forward(slice, mode, rng, cache ? &cache->branch[bi] : nullptr);
        for (std::size_t r = 0; r < out.rows; ++r) {
            const double* src = out.row_ptr(r);
            double* dst = embedding.row_ptr(r) + offset;
            std::copy(src, src + out.cols, dst);
        }
        offset += out.cols;
    }
    return embedding;
}

Matrix graph_task_forward(const ModelGraph& g, const Matrix& embedding, Mode mode, Rng* rng,
                          GraphCache* cache) {
    return g.target_head.forward(embedding, mode, rng, cache ? &cache->target_head : nullptr);
}

Matrix graph_domain_forward(const ModelGraph& g, const Matrix& embedding, Mode mode, Rng* rng,
                            GraphCache* cache) {
    if (!g.domain_head) throw StateError("graph has no domain head");
    return g.domain_head->forward(embedding, mode, rng, cache ? &cache->domain_head : nullptr);
}

namespace {

// Width of a branch's embedding segment; an empty stack passes features
// straight through.
std::size_t branch_width(const EncoderBranch& b) {
    return b.stack.empty() ? b.feature_indices.size() : b.stack.out_dim();
}

}  // namespace

void graph_encoder_backward(ModelGraph& g, GraphCache& cache, const Matrix& d_embedding) {
    std::size_t offset = 0;
    for (std::size_t bi = 0; bi < g.branches.size(); ++bi) {
        auto& branch = g.branches[bi];
        const std::size_t width = branch_width(branch);
        Matrix segment(d_embedding.rows, width);
        for (std::size_t r = 0; r < d_embedding.rows; ++r) {
            const double* src = d_embedding.row_ptr(r) + offset;
            std::copy(src, src + width, segment.row_ptr(r));
        }
        branch.stack.backward(cache.branch[bi], segment);
        offset += width;
    }
}

Matrix graph_task_backward(ModelGraph& g, GraphCache& cache, const Matrix& d_prediction) {
    return g.target_head.backward(cache.target_head, d_prediction);
}

Matrix graph_domain_backward(ModelGraph& g, GraphCache& cache, const Matrix& d_prediction,
                             const std::vector<double>& effective_lambdas) {
    if (!g.domain_head) throw StateError("graph has no domain head");
    if (effective_lambdas.size() != g.branches.size())
        throw ShapeError("graph_domain_backward: one lambda per branch required");

    Matrix d_embedding = g.domain_head->backward(cache.domain_head, d_prediction);

    // Per-branch gradient reversal on that branch's segment of the
    // embedding gradient.
    Matrix reversed(d_embedding.rows, d_embedding.cols);
    std::size_t offset = 0;
    for (std::size_t bi = 0; bi < g.branches.size(); ++bi) {
        const std::size_t width = branch_width(g.branches[bi]);
        const GrlCoefficient coeff(effective_lambdas[bi]);
        for (std::size_t r = 0; r < d_embedding.rows; ++r) {
            const double* src = d_embedding.row_ptr(r) + offset;
            double* dst = reversed.row_ptr(r) + offset;
            for (std::size_t c = 0; c < width; ++c) dst[c] = -coeff.lambda * src[c];
        }
        offset += width;
    }
    return reversed;
}

std::vector<double> graph_predict(const ModelGraph& g, const Matrix& x) {
    Matrix embedding = graph_embed(g, x, Mode::infer, nullptr, nullptr);
    Matrix pred = graph_task_forward(g, embedding, Mode::infer, nullptr, nullptr);
    return pred.data;
}

namespace {

void collect_stack(const std::string& prefix, LayerStack& stack, bool grads,
                   std::vector<ParamRef>& out) {
    for (std::size_t i = 0; i < stack.layers.size(); ++i) {
        auto& layer = stack.layers[i];
        Matrix& w = grads ? layer.dW : layer.W;
        std::vector<double>& b = grads ? layer.db : layer.b;
        out.push_back({prefix + "/layer" + std::to_string(i) + "/W", w.data.data(),
                       w.data.size()});
        out.push_back({prefix + "/layer" + std::to_string(i) + "/b", b.data(), b.size()});
    }
}

std::vector<ParamRef> collect(ModelGraph& g, bool grads) {
    std::vector<ParamRef> out;
    for (std::size_t bi = 0; bi < g.branches.size(); ++bi)
        collect_stack("branch" + std::to_string(bi), g.branches[bi].stack, grads, out);
    collect_stack("target_head", g.target_head, grads, out);
    if (g.domain_head) collect_stack("domain_head", *g.domain_head, grads, out);
    return out;
}

}  // namespace

std::vector<ParamRef> collect_params(ModelGraph& g) { return collect(g, false); }
std::vector<ParamRef> collect_grads(ModelGraph& g) { return collect(g, true); }

std::vector<double> snapshot_params(const ModelGraph& g) {
    auto refs = collect_params(const_cast<ModelGraph&>(g));
    std::vector<double> snap;
    for (const auto& r : refs) snap.insert(snap.end(), r.data, r.data + r.size);
    return snap;
}

void restore_params(ModelGraph& g, const std::vector<double>& snapshot) {
    auto refs = collect_params(g);
    std::size_t offset = 0;
    for (auto& r : refs) {
        if (offset + r.size > snapshot.size())
            throw StateError("restore_params: snapshot too small");
        std::copy(snapshot.begin() + offset, snapshot.begin() + offset + r.size, r.data);
        offset += r.size;
    }
    if (offset != snapshot.size()) throw StateError("restore_params: snapshot size mismatch");
}

namespace {

LayerStack make_stack(std::size_t input, const std::vector<std::size_t>& hidden,
                      const std::vector<double>& dropout, std::size_t output,
                      Activation output_act) {
    LayerStack stack;
    std::size_t in = input;
    for (std::size_t i = 0; i < hidden.size(); ++i) {
        stack.push(DenseLayer(in, hidden[i], Activation::relu),
                   i < dropout.size() ? dropout[i] : 0.0);
        in = hidden[i];
    }
    stack.push(DenseLayer(in, output, output_act), 0.0);
    return stack;
}

Activation task_output_activation(TaskKind task) {
    return task == TaskKind::classification ? Activation::sigmoid : Activation::identity;
}

std::vector<std::size_t> full_range(std::size_t n) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    return idx;
}

}  // namespace

ModelGraph build_source_model(const ArchitectureSpec& spec, TaskKind task, std::size_t input_dim,
                              Rng& rng) {
    spec.validate();
    if (input_dim == 0) throw ValidationError("build_source_model: zero input dimension");

    ModelGraph g;
    g.task = task;
    g.input_dim = input_dim;
    g.batch_size = spec.batch_size;

    // The final hidden layer doubles as the embedding; the head is the
    // output layer alone. An empty hidden list degenerates to a direct
    // input -> output affine model.
    EncoderBranch branch;
    branch.feature_indices = full_range(input_dim);
    branch.lambda_m = 1.0;
    std::size_t in = input_dim;
    for (std::size_t i = 0; i < spec.source_hidden.size(); ++i) {
        branch.stack.push(DenseLayer(in, spec.source_hidden[i], Activation::relu),
                          i < spec.source_dropout.size() ? spec.source_dropout[i] : 0.0);
        in = spec.source_hidden[i];
    }
    g.embedding_dim = in;
    g.branches.push_back(std::move(branch));
    g.target_head = make_stack(in, {}, {}, 1, task_output_activation(task));
    g.init(rng);
    return g;
}

ModelGraph build_dann(const ArchitectureSpec& spec, TaskKind task, std::size_t input_dim,
                      Rng& rng) {
    spec.validate();
    if (input_dim == 0) throw ValidationError("build_dann: zero input dimension");

    ModelGraph g;
    g.task = task;
    g.input_dim = input_dim;
    g.batch_size = spec.batch_size;

    EncoderBranch branch;
    branch.feature_indices = full_range(input_dim);
    branch.lambda_m = 1.0;
    std::size_t in = input_dim;
    for (std::size_t i = 0; i < spec.encoder_hidden.size(); ++i) {
        branch.stack.push(DenseLayer(in, spec.encoder_hidden[i], Activation::relu),
                          i < spec.encoder_dropout.size() ? spec.encoder_dropout[i] : 0.0);
        in = spec.encoder_hidden[i];
    }
    g.embedding_dim = in;
    g.branches.push_back(std::move(branch));

    g.target_head =
        make_stack(in, spec.head_hidden, spec.head_dropout, 1, task_output_activation(task));
    g.domain_head = make_stack(in, spec.domain_hidden, {}, 1, Activation::sigmoid);
    g.init(rng);
    return g;
}

ModelGraph build_multibranch(const BranchPlan& plan, const ArchitectureSpec& spec, TaskKind task,
                             std::size_t input_dim, Rng& rng) {
    spec.validate();
    if (input_dim == 0) throw ValidationError("build_multibranch: zero input dimension");
    if (plan.branches.empty()) throw ValidationError("build_multibranch: empty plan");
    plan.validate_partition(input_dim);

    const std::size_t n_branches = plan.branches.size();
    const std::size_t final_width =
        (spec.encoder_hidden.back() + n_branches - 1) / n_branches;  // ceiling split

    ModelGraph g;
    g.task = task;
    g.input_dim = input_dim;
    g.batch_size = spec.batch_size;
    g.plan = plan;

    for (const auto& pb : plan.branches) {
        if (pb.feature_indices.empty())
            throw ValidationError("build_multibranch: empty branch feature set");
        EncoderBranch branch;
        branch.feature_indices = pb.feature_indices;
        branch.lambda_m = pb.lambda_m;
        std::size_t in = pb.feature_indices.size();
        for (std::size_t i = 0; i < spec.encoder_hidden.size(); ++i) {
            const std::size_t width =
                i + 1 == spec.encoder_hidden.size() ? final_width : spec.encoder_hidden[i];
            branch.stack.push(DenseLayer(in, width, Activation::relu),
                              i < spec.encoder_dropout.size() ? spec.encoder_dropout[i] : 0.0);
            in = width;
        }
        g.branches.push_back(std::move(branch));
    }
    g.embedding_dim = final_width * n_branches;

    g.target_head = make_stack(g.embedding_dim, spec.head_hidden, spec.head_dropout, 1,
                               task_output_activation(task));
    g.domain_head = make_stack(g.embedding_dim, spec.domain_hidden, {}, 1, Activation::sigmoid);
    g.init(rng);
    return g;
}

MmdResult mmd_with_bandwidth(const Matrix& source, const Matrix& target, double bandwidth) {
    if (source.cols != target.cols)
        throw ShapeError("mmd: embedding widths differ");
    if (source.rows < 2 || target.rows < 2)
        throw ValidationError("mmd: each batch needs at least 2 rows");
    if (!(bandwidth > 0.0)) throw ValidationError("mmd: bandwidth must be positive");

    const std::size_t n = source.rows, m = target.rows, d = source.cols;
    const double inv_bw = 1.0 / bandwidth;

    auto kernel = [&](const double* a, const double* b) {
        double sq = 0.0;
        for (std::size_t k = 0; k < d; ++k) {
            const double diff = a[k] - b[k];
            sq += diff * diff;
        }
        return std::exp(-sq * inv_bw);
    };

    MmdResult res;
    res.bandwidth = bandwidth;
    res.grad_source = Matrix(n, d);
    res.grad_target = Matrix(m, d);

    double kss = 0.0, ktt = 0.0, kst = 0.0;
    const double wss = 1.0 / static_cast<double>(n * n);
    const double wtt = 1.0 / static_cast<double>(m * m);
    const double wst = 1.0 / static_cast<double>(n * m);

    // d k(a,b) / d a = k * (-2/bw)(a - b). Each point plays both roles in
    // the symmetric within-domain grids, giving a factor 2 on row i.
    for (std::size_t i = 0; i < n; ++i) {
        const double* a = source.row_ptr(i);
        double* ga = res.grad_source.row_ptr(i);
        for (std::size_t j = 0; j < n; ++j) {
            const double* b = source.row_ptr(j);
            const double k = kernel(a, b);
            kss += k;
            const double scale = -4.0 * inv_bw * wss * k;
            for (std::size_t c = 0; c < d; ++c) ga[c] += scale * (a[c] - b[c]);
        }
    }
    for (std::size_t i = 0; i < m; ++i) {
        const double* a = target.row_ptr(i);
        double* ga = res.grad_target.row_ptr(i);
        for (std::size_t j = 0; j < m; ++j) {
            const double* b = target.row_ptr(j);
            const double k = kernel(a, b);
            ktt += k;
            const double scale = -4.0 * inv_bw * wtt * k;
            for (std::size_t c = 0; c < d; ++c) ga[c] += scale * (a[c] - b[c]);
        }
    }
    // Cross term enters with weight -2/(nm).
    for (std::size_t i = 0; i < n; ++i) {
        const double* a = source.row_ptr(i);
        double* ga = res.grad_source.row_ptr(i);
        for (std::size_t j = 0; j < m; ++j) {
            const double* b = target.row_ptr(j);
            const double k = kernel(a, b);
            kst += k;
            const double scale = 4.0 * inv_bw * wst * k;
            double* gb = res.grad_target.row_ptr(j);
            for (std::size_t c = 0; c < d; ++c) {
                const double diff = a[c] - b[c];
                ga[c] += scale * diff;
                gb[c] -= scale * diff;
            }
        }
    }

    res.value = kss * wss + ktt * wtt - 2.0 * kst * wst;
    return res;
}

MmdResult mmd(const Matrix& source, const Matrix& target) {
    if (source.cols != target.cols) throw ShapeError("mmd: embedding widths differ");
    if (source.rows < 2 || target.rows < 2)
        throw ValidationError("mmd: each batch needs at least 2 rows");

    const Matrix joint = vstack(source, target);
    std::vector<double> sq;
    sq.reserve(joint.rows * (joint.rows - 1) / 2);
    for (std::size_t i = 0; i < joint.rows; ++i) {
        const double* a = joint.row_ptr(i);
        for (std::size_t j = i + 1; j < joint.rows; ++j) {
            const double* b = joint.row_ptr(j);
            double s = 0.0;
            for (std::size_t c = 0; c < joint.cols; ++c) {
                const double diff = a[c] - b[c];
                s += diff * diff;
            }
            sq.push_back(s);
        }
    }
    std::sort(sq.begin(), sq.end());
    const std::size_t k = sq.size();
    double median = k % 2 == 1 ? sq[k / 2] : 0.5 * (sq[k / 2 - 1] + sq[k / 2]);
    if (!(median > 0.0)) median = 1.0;  // all points coincide
    return mmd_with_bandwidth(source, target, median);
}

namespace {

nlohmann::json stack_to_json(const LayerStack& stack) {
    nlohmann::json layers = nlohmann::json::array();
    for (std::size_t i = 0; i < stack.layers.size(); ++i) {
        const auto& l = stack.layers[i];
        int act = l.act == Activation::relu ? 0 : (l.act == Activation::sigmoid ? 1 : 2);
        layers.push_back({{"in", l.W.rows},
                          {"out", l.W.cols},
                          {"act", act},
                          {"dropout", stack.dropout[i]},
                          {"W", l.W.data},
                          {"b", l.b}});
    }
    return layers;
}

LayerStack stack_from_json(const nlohmann::json& j) {
    LayerStack stack;
    for (const auto& lj : j) {
        const std::size_t in = lj.at("in").get<std::size_t>();
        const std::size_t out = lj.at("out").get<std::size_t>();
        const int act_i = lj.at("act").get<int>();
        Activation act = act_i == 0 ? Activation::relu
                                    : (act_i == 1 ? Activation::sigmoid : Activation::identity);
        DenseLayer layer(in, out, act);
        layer.W.data = lj.at("W").get<std::vector<double>>();
        layer.b = lj.at("b").get<std::vector<double>>();
        if (layer.W.data.size() != in * out || layer.b.size() != out)
            throw SchemaError("checkpoint: parameter size mismatch");
        stack.push(std::move(layer), lj.at("dropout").get<double>());
    }
    return stack;
}

nlohmann::json plan_to_json(const BranchPlan& plan) {
    nlohmann::json branches = nlohmann::json::array();
    for (const auto& b : plan.branches)
        branches.push_back({{"features", b.feature_indices},
                            {"lambda_m", b.lambda_m},
                            {"raw_shift", b.raw_shift}});
    return {{"branches", branches},
            {"setup", plan.setup == BranchSetup::setup1 ? "setup1" : "setup2"},
            {"alpha", plan.alpha}};
}

BranchPlan plan_from_json(const nlohmann::json& j) {
    BranchPlan plan;
    plan.setup =
        j.at("setup").get<std::string>() == "setup1" ? BranchSetup::setup1 : BranchSetup::setup2;
    plan.alpha = j.at("alpha").get<int>();
    for (const auto& bj : j.at("branches")) {
        PlanBranch b;
        b.feature_indices = bj.at("features").get<std::vector<std::size_t>>();
        b.lambda_m = bj.at("lambda_m").get<double>();
        b.raw_shift = bj.at("raw_shift").get<double>();
        plan.branches.push_back(std::move(b));
    }
    return plan;
}

constexpr int kCheckpointVersion = 1;

}  // namespace

void save_model(const ModelGraph& g, const std::string& path) {
    nlohmann::json branches = nlohmann::json::array();
    for (const auto& b : g.branches)
        branches.push_back({{"features", b.feature_indices},
                            {"lambda_m", b.lambda_m},
                            {"stack", stack_to_json(b.stack)}});
    nlohmann::json j = {{"version", kCheckpointVersion},
                        {"task", task_name(g.task)},
                        {"input_dim", g.input_dim},
                        {"embedding_dim", g.embedding_dim},
                        {"batch_size", g.batch_size},
                        {"branches", branches},
                        {"target_head", stack_to_json(g.target_head)}};
    if (g.domain_head) j["domain_head"] = stack_to_json(*g.domain_head);
    if (g.plan) j["plan"] = plan_to_json(*g.plan);

    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out << j.dump(1) << '\n';
    if (!out) throw IoError("write failed for " + path);
}

ModelGraph load_model(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError("checkpoint parse error: " + std::string(e.what()));
    }
    if (j.at("version").get<int>() != kCheckpointVersion)
        throw SchemaError("checkpoint: unsupported version");

    ModelGraph g;
    g.task = task_from_name(j.at("task").get<std::string>());
    g.input_dim = j.at("input_dim").get<std::size_t>();
    g.embedding_dim = j.at("embedding_dim").get<std::size_t>();
    g.batch_size = j.at("batch_size").get<std::size_t>();
    for (const auto& bj : j.at("branches")) {
        EncoderBranch b;
        b.feature_indices = bj.at("features").get<std::vector<std::size_t>>();
        b.lambda_m = bj.at("lambda_m").get<double>();
        b.stack = stack_from_json(bj.at("stack"));
        g.branches.push_back(std::move(b));
    }
    g.target_head = stack_from_json(j.at("target_head"));
    if (j.contains("domain_head")) g.domain_head = stack_from_json(j.at("domain_head"));
    if (j.contains("plan")) g.plan = plan_from_json(j.at("plan"));
    return g;
}

}  // namespace m3bat
