#include "elastron/latency.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>

#include "elastron/csv.hpp"
#include "elastron/rng.hpp"

namespace elastron {

std::string cost_kind_name(CostKind kind) {
    switch (kind) {
        case CostKind::MeasuredLatency: return "measured-latency";
        case CostKind::AnalyticFlops: return "analytic-flops";
        case CostKind::ParameterCount: return "parameter-count";
    }
    throw TensorError("cost table: unknown kind");
}

CostKind cost_kind_from_name(const std::string& name) {
    if (name == "measured-latency") return CostKind::MeasuredLatency;
    if (name == "analytic-flops") return CostKind::AnalyticFlops;
    if (name == "parameter-count") return CostKind::ParameterCount;
    throw TensorError("cost table: unknown kind '" + name + "'");
}

double CostTable::full_cost() const {
    double total = fixed_overhead;
    for (const auto& row : mha_cost) total += row.back();
    for (const auto& row : mlp_cost) total += row.back();
    return total;
}

void CostTable::validate() const {
    if (mha_cost.size() != mlp_cost.size()) throw TensorError("cost table: layer count mismatch");
    if (!(fixed_overhead >= 0.0) || !std::isfinite(fixed_overhead)) {
        throw TensorError("cost table: overhead must be finite and nonnegative");
    }
    auto check_slot = [](const std::vector<double>& row, const char* what) {
        if (row.empty()) throw TensorError(std::string("cost table: empty ") + what + " slot");
        double prev = -1.0;
        for (double v : row) {
            if (!(v >= 0.0) || !std::isfinite(v)) {
                throw TensorError(std::string("cost table: ") + what + " entry must be finite nonnegative");
            }
            if (v <= prev) throw TensorError(std::string("cost table: ") + what +
                                             " costs must increase strictly with the candidate index");
            prev = v;
        }
    };
    for (const auto& row : mha_cost) check_slot(row, "mha");
    for (const auto& row : mlp_cost) check_slot(row, "mlp");
}

void CostTable::to_csv(const std::string& path) const {
    CsvWriter csv(path);
    csv.field("kind").field(cost_kind_name(kind)).field("overhead").field(fixed_overhead);
    csv.end_row();
    for (std::size_t layer = 0; layer < mha_cost.size(); ++layer) {
        for (std::size_t j = 0; j < mha_cost[layer].size(); ++j) {
            csv.field(static_cast<int>(layer)).field("mha").field(static_cast<int>(j + 1))
                .field(mha_cost[layer][j]);
            csv.end_row();
        }
        for (std::size_t j = 0; j < mlp_cost[layer].size(); ++j) {
            csv.field(static_cast<int>(layer)).field("mlp").field(static_cast<int>(j + 1))
                .field(mlp_cost[layer][j]);
            csv.end_row();
        }
    }
}

CostTable CostTable::from_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw TensorError("cost table: cannot open '" + path + "'");
    std::string line;
    if (!std::getline(in, line)) throw TensorError("cost table: empty file");
    auto header = split_csv_line(line);
    if (header.size() != 4 || header[0] != "kind" || header[2] != "overhead") {
        throw TensorError("cost table: malformed header");
    }
    CostTable table;
    table.kind = cost_kind_from_name(header[1]);
    table.fixed_overhead = parse_csv_double(header[3]);
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto fields = split_csv_line(line);
        if (fields.size() != 4) throw TensorError("cost table: malformed row '" + line + "'");
        const std::size_t layer = static_cast<std::size_t>(std::stoi(fields[0]));
        while (table.mha_cost.size() <= layer) {
            table.mha_cost.emplace_back();
            table.mlp_cost.emplace_back();
        }
        auto& rows = fields[1] == "mha" ? table.mha_cost : table.mlp_cost;
        rows[layer].push_back(parse_csv_double(fields[3]));
    }
    table.validate();
    return table;
}

BudgetTarget make_budget(const CostTable& table, double normalized_fraction) {
    if (!(normalized_fraction > 0.0) || normalized_fraction > 1.0) {
        throw TensorError("budget: normalized fraction must be in (0, 1]");
    }
    return {normalized_fraction * table.full_cost(), normalized_fraction};
}

namespace {

// Forward FLOPs at the table's fixed batch=1 shapes; multiplies and adds
// each count as one.
double mha_flops(int heads, int head_dim, int embed_dim, int seq) {
    const double dh = static_cast<double>(heads) * head_dim;
    const double s = seq;
    const double pairs = s * (s + 1.0) / 2.0;  // causal
    double flops = 3.0 * 2.0 * s * embed_dim * dh;  // Q, K, V projections
    flops += 2.0 * pairs * dh;                      // scores
    flops += 3.0 * pairs * heads;                   // softmax
    flops += 2.0 * pairs * dh;                      // attention-weighted values
    flops += 2.0 * s * dh * embed_dim;              // output projection
    return flops;
}

double mlp_flops(int width, int embed_dim, int seq) {
    const double s = seq;
    return 2.0 * s * embed_dim * width + 8.0 * s * width + 2.0 * s * width * embed_dim;
}

double overhead_flops(const ModelConfig& cfg, int seq) {
    const double s = seq;
    const double norms = (2.0 * cfg.num_layers + 1.0) * 8.0 * s * cfg.embed_dim;
    const double embed = s * cfg.embed_dim;
    const double head = 2.0 * s * cfg.embed_dim * cfg.vocab_size;
    return norms + embed + head;
}

double median(std::vector<double> samples) {
    std::sort(samples.begin(), samples.end());
    const std::size_t n = samples.size();
    return n % 2 == 1 ? samples[n / 2] : 0.5 * (samples[n / 2 - 1] + samples[n / 2]);
}

double time_op(const std::function<void()>& op, int repeats, int warmup) {
    for (int i = 0; i < warmup; ++i) op();
    std::vector<double> samples;
    samples.reserve(static_cast<std::size_t>(repeats));
    for (int i = 0; i < repeats; ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        op();
        const auto t1 = std::chrono::steady_clock::now();
        samples.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
    }
    return median(std::move(samples));
}

CostTable measured_table(const ElasticModel& model, const CostMeasureOptions& options) {
    if (options.repeats < 1) throw TensorError("cost table: repeats must be >= 1 for measured latency");
    const ModelConfig& cfg = model.config;
    const int n = options.batch * options.seq;
    Rng rng(7);
    Tensor input = Tensor::zeros({n, cfg.embed_dim});
    for (double& v : input.data) v = 0.1 * rng.normal();
    Value x = constant(input);

    NoGradGuard guard;
    CostTable table;
    table.kind = CostKind::MeasuredLatency;
    auto measure_layer = [&](int layer, int repeats) {
        std::vector<double> mha, mlp;
        const auto& shape = model.layer_shapes[static_cast<std::size_t>(layer)];
        for (int j = 1; j <= static_cast<int>(shape.head_menu.size()); ++j) {
            mha.push_back(time_op(
                [&] { elastic_mha_forward(model, layer, x, j, options.batch, options.seq); }, repeats,
                options.warmup));
        }
        for (int j = 1; j <= static_cast<int>(shape.mlp_menu.size()); ++j) {
            mlp.push_back(time_op([&] { elastic_mlp_forward(model, layer, x, j); }, repeats,
                                  options.warmup));
        }
        return std::make_pair(mha, mlp);
    };
    auto strictly_increasing = [](const std::vector<double>& row) {
        for (std::size_t i = 1; i < row.size(); ++i) {
            if (row[i] <= row[i - 1]) return false;
        }
        return true;
    };
    for (int layer = 0; layer < cfg.num_layers; ++layer) {
        auto [mha, mlp] = measure_layer(layer, options.repeats);
        if (!strictly_increasing(mha) || !strictly_increasing(mlp)) {
            // Timing noise: retry once with more repeats before giving up.
            std::tie(mha, mlp) = measure_layer(layer, options.repeats * 4);
        }
        if (!strictly_increasing(mha) || !strictly_increasing(mlp)) {
            throw TensorError("cost table: measured latencies not monotone at layer " +
                              std::to_string(layer));
        }
        table.mha_cost.push_back(std::move(mha));
        table.mlp_cost.push_back(std::move(mlp));
    }
    // Embedding gather, the norms, and the tied output head.
    Value hidden = constant(input);
    table.fixed_overhead = time_op(
        [&] {
            std::vector<int> ids(static_cast<std::size_t>(n), 1);
            Value e = gather_rows(model.tok_embed, ids);
            for (int i = 0; i < 2 * cfg.num_layers + 1; ++i) {
                layer_norm(hidden, model.final_gain, model.final_bias, kLayerNormEps);
            }
            linear(hidden, model.tok_embed);
        },
        options.repeats, options.warmup);
    return table;
}

}  // namespace

CostTable build_cost_table(const ElasticModel& model, CostKind kind, const CostMeasureOptions& options) {
    const ModelConfig& cfg = model.config;
    CostTable table;
    table.kind = kind;
    switch (kind) {
        case CostKind::AnalyticFlops: {
            for (int layer = 0; layer < cfg.num_layers; ++layer) {
                const auto& shape = model.layer_shapes[static_cast<std::size_t>(layer)];
                std::vector<double> mha, mlp;
                for (int heads : shape.head_menu) {
                    mha.push_back(mha_flops(heads, cfg.head_dim, cfg.embed_dim, options.seq));
                }
                for (int width : shape.mlp_menu) mlp.push_back(mlp_flops(width, cfg.embed_dim, options.seq));
                table.mha_cost.push_back(std::move(mha));
                table.mlp_cost.push_back(std::move(mlp));
            }
            table.fixed_overhead = overhead_flops(cfg, options.seq);
            break;
        }
        case CostKind::ParameterCount: {
            for (int layer = 0; layer < cfg.num_layers; ++layer) {
                const auto& shape = model.layer_shapes[static_cast<std::size_t>(layer)];
                std::vector<double> mha, mlp;
                for (int heads : shape.head_menu) {
                    mha.push_back(4.0 * heads * cfg.head_dim * cfg.embed_dim);
                }
                for (int width : shape.mlp_menu) mlp.push_back(2.0 * width * cfg.embed_dim);
                table.mha_cost.push_back(std::move(mha));
                table.mlp_cost.push_back(std::move(mlp));
            }
            table.fixed_overhead = 4.0 * cfg.num_layers * cfg.embed_dim + 2.0 * cfg.embed_dim;
            break;
        }
        case CostKind::MeasuredLatency: {
            table = measured_table(model, options);
            break;
        }
    }
    table.validate();
    return table;
}

double selection_cost(const CostTable& table, const Selection& sel) {
    if (sel.mha.size() != table.mha_cost.size() || sel.mlp.size() != table.mlp_cost.size()) {
        throw TensorError("selection_cost: selection does not match table layers");
    }
    double total = table.fixed_overhead;
    for (std::size_t i = 0; i < sel.mha.size(); ++i) {
        total += table.mha_cost[i][static_cast<std::size_t>(sel.mha[i] - 1)];
        total += table.mlp_cost[i][static_cast<std::size_t>(sel.mlp[i] - 1)];
    }
    return total;
}

double constraint_penalty(const std::vector<double>& costs, const std::vector<double>& targets) {
    if (costs.size() != targets.size()) throw TensorError("constraint: cost/target lists differ in length");
    double total = 0.0;
    for (std::size_t i = 0; i < costs.size(); ++i) total += std::max(costs[i] - targets[i], 0.0);
    return total;
}

Value constraint_loss(const std::vector<Value>& costs, const std::vector<double>& targets) {
    if (costs.size() != targets.size()) throw TensorError("constraint: cost/target lists differ in length");
    Value total;
    for (std::size_t i = 0; i < costs.size(); ++i) {
        Value over = relu(sub(costs[i], constant(Tensor::scalar(targets[i]))));
        total = total ? add(total, over) : over;
    }
    if (!total) throw TensorError("constraint: empty target list");
    return total;
}

}  // namespace elastron
