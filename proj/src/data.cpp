#include "m3bat/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "m3bat/error.hpp"
#include "m3bat/rng.hpp"

namespace m3bat {

namespace {

constexpr const char* kUserColumn = "__user__";
constexpr const char* kLabelColumn = "__label__";

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

double parse_double(const std::string& text, const std::string& where) {
    double value = 0.0;
    const char* begin = text.data();
    const char* end = begin + text.size();
    auto [ptr, ec] = std::from_chars(begin, end, value);
    if (ec != std::errc() || ptr != end)
        throw SchemaError("unparseable numeric value '" + text + "' at " + where);
    return value;
}

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

void FeatureTable::validate() const {
    if (rows.cols != feature_names.size())
        throw SchemaError("feature table: " + std::to_string(rows.cols) + " columns vs " +
                          std::to_string(feature_names.size()) + " feature names");
    if (user_ids.size() != rows.rows || labels.size() != rows.rows)
        throw SchemaError("feature table: row, user and label counts disagree");
    std::set<std::string> seen(feature_names.begin(), feature_names.end());
    if (seen.size() != feature_names.size())
        throw SchemaError("feature table: duplicate feature names");
}

FeatureTable FeatureTable::take_rows(const std::vector<std::size_t>& idx) const {
    FeatureTable out;
    out.domain_name = domain_name;
    out.feature_names = feature_names;
    out.rows = select_rows(rows, idx);
    out.user_ids.reserve(idx.size());
    out.labels.reserve(idx.size());
    for (std::size_t i : idx) {
        out.user_ids.push_back(user_ids[i]);
        out.labels.push_back(labels[i]);
    }
    return out;
}

std::vector<double> FeatureTable::column(std::size_t f) const {
    std::vector<double> out(rows.rows);
    for (std::size_t i = 0; i < rows.rows; ++i) out[i] = rows(i, f);
    return out;
}

std::vector<std::string> FeatureTable::distinct_users() const {
    std::set<std::string> s(user_ids.begin(), user_ids.end());
    return {s.begin(), s.end()};
}

const std::string& ModalityMap::modality_of(const std::string& feature) const {
    auto it = entries.find(feature);
    if (it == entries.end()) throw SchemaError("feature '" + feature + "' absent from modality map");
    return it->second;
}

void ModalityMap::require_covers(const std::vector<std::string>& features) const {
    std::vector<std::string> missing;
    for (const auto& f : features)
        if (!entries.count(f)) missing.push_back(f);
    if (!missing.empty()) {
        std::string msg = "modality map is missing features:";
        for (const auto& f : missing) msg += " " + f;
        throw SchemaError(msg);
    }
}

namespace {

struct ParsedTable {
    FeatureTable table;
    std::size_t dropped = 0;
};

ParsedTable parse_table_csv(const std::string& csv_path) {
    std::ifstream in(csv_path);
    if (!in) throw IoError("cannot open " + csv_path);

    std::string line;
    if (!std::getline(in, line)) throw SchemaError(csv_path + ": missing header row");
    const auto header = split_csv_line(line);

    std::size_t user_col = header.size(), label_col = header.size();
    std::vector<std::size_t> feature_cols;
    std::vector<std::string> feature_names;
    for (std::size_t i = 0; i < header.size(); ++i) {
        if (header[i] == kUserColumn) {
            user_col = i;
        } else if (header[i] == kLabelColumn) {
            label_col = i;
        } else {
            feature_cols.push_back(i);
            feature_names.push_back(header[i]);
        }
    }
    if (user_col == header.size())
        throw SchemaError(csv_path + ": reserved column __user__ missing");
    if (label_col == header.size())
        throw SchemaError(csv_path + ": reserved column __label__ missing");

    ParsedTable result;
    result.table.feature_names = feature_names;
    std::vector<double> values;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        const auto cells = split_csv_line(line);
        if (cells.size() != header.size())
            throw SchemaError(csv_path + ":" + std::to_string(line_no) + ": expected " +
                              std::to_string(header.size()) + " cells, got " +
                              std::to_string(cells.size()));
        bool missing = false;
        for (const auto& c : cells)
            if (c.empty()) missing = true;
        if (missing) {
            ++result.dropped;
            continue;
        }
        result.table.user_ids.push_back(cells[user_col]);
        const std::string where = csv_path + ":" + std::to_string(line_no);
        result.table.labels.push_back(parse_double(cells[label_col], where));
        for (std::size_t f : feature_cols) values.push_back(parse_double(cells[f], where));
    }

    result.table.rows = Matrix(result.table.user_ids.size(), feature_names.size());
    result.table.rows.data = std::move(values);
    result.table.domain_name = csv_path;
    result.table.validate();
    return result;
}

}  // namespace

FeatureTable load_table_csv(const std::string& csv_path) {
    return parse_table_csv(csv_path).table;
}

LoadResult load_csv(const std::string& csv_path, const std::string& map_path) {
    ParsedTable parsed = parse_table_csv(csv_path);
    LoadResult result;
    result.table = std::move(parsed.table);
    result.dropped_rows = parsed.dropped;
    result.modalities = load_modality_map(map_path);
    result.modalities.require_covers(result.table.feature_names);
    return result;
}

ModalityMap load_modality_map(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    ModalityMap map;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos || eq == 0 || eq + 1 == line.size())
            throw SchemaError(path + ":" + std::to_string(line_no) +
                              ": expected feature=modality");
        map.entries[line.substr(0, eq)] = line.substr(eq + 1);
    }
    return map;
}

std::string table_to_csv(const FeatureTable& table) {
    std::ostringstream out;
    out << kUserColumn << ',' << kLabelColumn;
    for (const auto& f : table.feature_names) out << ',' << f;
    out << '\n';
    for (std::size_t i = 0; i < table.n_rows(); ++i) {
        out << table.user_ids[i] << ',' << format_double(table.labels[i]);
        const double* row = table.rows.row_ptr(i);
        for (std::size_t j = 0; j < table.n_features(); ++j) out << ',' << format_double(row[j]);
        out << '\n';
    }
    return out.str();
}

std::string modality_map_to_text(const ModalityMap& map) {
    std::ostringstream out;
    for (const auto& [feature, modality] : map.entries) out << feature << '=' << modality << '\n';
    return out.str();
}

void save_csv(const FeatureTable& table, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out << table_to_csv(table);
    if (!out) throw IoError("write failed for " + path);
}

void save_modality_map(const ModalityMap& map, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out << modality_map_to_text(map);
    if (!out) throw IoError("write failed for " + path);
}

void SynthSpec::validate() const {
    if (groups.empty()) throw ValidationError("synth spec: at least one group required");
    std::set<std::string> names;
    for (const auto& g : groups) {
        if (g.name.empty()) throw ValidationError("synth spec: group name empty");
        if (!names.insert(g.name).second)
            throw ValidationError("synth spec: duplicate group '" + g.name + "'");
        if (g.n_features < 1) throw ValidationError("synth spec: group feature count must be >= 1");
        if (g.cohens_d < 0.0) throw ValidationError("synth spec: target shift must be >= 0");
    }
    if (users_per_domain < 4) throw ValidationError("synth spec: need >= 4 users per domain");
    if (samples_per_domain < users_per_domain)
        throw ValidationError("synth spec: need at least one sample per user");
    if (!(user_sd >= 0.0 && user_sd < 1.0))
        throw ValidationError("synth spec: user_sd must lie in [0,1)");
    int total = 0;
    for (const auto& g : groups) total += g.n_features;
    if (label_feature_count < 0 || label_feature_count > total)
        throw ValidationError("synth spec: label_feature_count out of range");
}

double LabelRule::apply(const double* x, std::size_t n) const {
    double score = 0.0;
    const std::size_t m = std::min(n, weights.size());
    for (std::size_t i = 0; i < m; ++i) score += weights[i] * x[i];
    if (task == TaskKind::classification) return score >= threshold ? 1.0 : 0.0;
    return score;
}

namespace {

// Substream tags for the generator; fixed so outputs are reproducible.
enum : std::uint64_t {
    kTagLabelSubset = 1,
    kTagLabelWeights = 2,
    kTagUserIntercepts = 3,
    kTagSourceNoise = 4,
    kTagTargetNoise = 5,
};

std::string user_name(const std::string& prefix, int k) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%s%03d", prefix.c_str(), k);
    return buf;
}

Matrix draw_domain(const SynthSpec& spec, const std::vector<double>& shift,
                   const Matrix& intercepts, int first_user, Rng& rng) {
    const std::size_t f = shift.size();
    const double z_sd = std::sqrt(1.0 - spec.user_sd * spec.user_sd);
    Matrix rows(static_cast<std::size_t>(spec.samples_per_domain), f);
    for (int i = 0; i < spec.samples_per_domain; ++i) {
        const int user = first_user + i % spec.users_per_domain;
        double* row = rows.row_ptr(static_cast<std::size_t>(i));
        const double* icept = intercepts.row_ptr(static_cast<std::size_t>(user));
        for (std::size_t j = 0; j < f; ++j) row[j] = shift[j] + icept[j] + z_sd * rng.normal();
    }
    return rows;
}

}  // namespace

SynthResult generate_synthetic(const SynthSpec& spec) {
    spec.validate();

    std::vector<std::string> feature_names;
    std::vector<double> shift;  // per-feature inter-domain mean gap
    ModalityMap modalities;
    for (const auto& g : spec.groups) {
        for (int i = 0; i < g.n_features; ++i) {
            std::string name = g.name + "_f" + std::to_string(i);
            modalities.entries[name] = g.name;
            feature_names.push_back(std::move(name));
            shift.push_back(g.cohens_d);
        }
    }
    const std::size_t f = feature_names.size();

    Rng root(spec.seed);

    // Label subset and weights. Weights are projected orthogonal to the
    // shift vector (within the subset) so the labeling rule is untouched by
    // the domain translation: the same rule scores both domains and class
    // balance carries over.
    std::vector<std::size_t> subset(f);
    for (std::size_t i = 0; i < f; ++i) subset[i] = i;
    if (spec.label_feature_count > 0 && static_cast<std::size_t>(spec.label_feature_count) < f) {
        Rng sub_rng = root.derive(kTagLabelSubset);
        sub_rng.shuffle(subset);
        subset.resize(static_cast<std::size_t>(spec.label_feature_count));
        std::sort(subset.begin(), subset.end());
    }

    std::vector<double> w(f, 0.0);
    {
        Rng w_rng = root.derive(kTagLabelWeights);
        for (std::size_t i : subset) w[i] = w_rng.normal();
        double wd = 0.0, dd = 0.0;
        for (std::size_t i : subset) {
            wd += w[i] * shift[i];
            dd += shift[i] * shift[i];
        }
        if (dd > 0.0) {
            for (std::size_t i : subset) w[i] -= wd / dd * shift[i];
        }
        double norm = 0.0;
        for (std::size_t i : subset) norm += w[i] * w[i];
        norm = std::sqrt(norm);
        if (norm < 1e-12) {
            w.assign(f, 0.0);
            w[subset.front()] = 1.0;
        } else {
            for (std::size_t i : subset) w[i] /= norm;
        }
    }

    // Per-user feature intercepts. Users 0..U-1 are source, U..2U-1 target.
    const int total_users = 2 * spec.users_per_domain;
    Matrix intercepts(static_cast<std::size_t>(total_users), f);
    {
        Rng u_rng = root.derive(kTagUserIntercepts);
        for (double& v : intercepts.data) v = spec.user_sd * u_rng.normal();
    }

    const std::vector<double> zero_shift(f, 0.0);
    Rng src_rng = root.derive(kTagSourceNoise);
    Rng tgt_rng = root.derive(kTagTargetNoise);
    Matrix src_rows = draw_domain(spec, zero_shift, intercepts, 0, src_rng);
    Matrix tgt_rows = draw_domain(spec, shift, intercepts, spec.users_per_domain, tgt_rng);

    // Classification threshold: source median of the raw score, so the
    // source classes are balanced. The rule is then frozen for both domains.
    LabelRule rule;
    rule.weights = w;
    rule.task = spec.task;
    if (spec.task == TaskKind::classification) {
        std::vector<double> raw(src_rows.rows);
        for (std::size_t i = 0; i < src_rows.rows; ++i) {
            double s = 0.0;
            const double* row = src_rows.row_ptr(i);
            for (std::size_t j = 0; j < f; ++j) s += w[j] * row[j];
            raw[i] = s;
        }
        std::vector<double> sorted = raw;
        std::sort(sorted.begin(), sorted.end());
        const std::size_t n = sorted.size();
        rule.threshold =
            n % 2 == 1 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
    }

    SynthResult result;
    result.rule = rule;
    result.modalities = modalities;

    auto fill_table = [&](FeatureTable& t, Matrix&& rows, const std::string& domain,
                          const std::string& user_prefix) {
        t.domain_name = domain;
        t.feature_names = feature_names;
        t.rows = std::move(rows);
        t.user_ids.reserve(t.rows.rows);
        t.labels.reserve(t.rows.rows);
        for (std::size_t i = 0; i < t.rows.rows; ++i) {
            const int user = static_cast<int>(i) % spec.users_per_domain;
            t.user_ids.push_back(user_name(user_prefix, user));
            t.labels.push_back(rule.apply(t.rows.row_ptr(i), f));
        }
        t.validate();
    };

    fill_table(result.source, std::move(src_rows), spec.source_name, "s");
    fill_table(result.target, std::move(tgt_rows), spec.target_name, "t");
    return result;
}

const char* task_name(TaskKind task) {
    return task == TaskKind::classification ? "classification" : "regression";
}

TaskKind task_from_name(const std::string& name) {
    if (name == "classification") return TaskKind::classification;
    if (name == "regression") return TaskKind::regression;
    throw ValidationError("unknown task '" + name + "'");
}

}  // namespace m3bat
