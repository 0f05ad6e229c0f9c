#pragma once

#include <string>
#include <vector>

#include "elastron/autodiff.hpp"
#include "elastron/model.hpp"

namespace elastron {

enum class CostKind { MeasuredLatency, AnalyticFlops, ParameterCount };

std::string cost_kind_name(CostKind kind);
CostKind cost_kind_from_name(const std::string& name);

// Per-layer, per-candidate cost lookup table. Entries are strictly
// increasing along each slot's candidate axis (nesting).
struct CostTable {
    CostKind kind = CostKind::AnalyticFlops;
    double fixed_overhead = 0.0;  // embeddings, norms, output head
    std::vector<std::vector<double>> mha_cost;  // [layer][candidate]
    std::vector<std::vector<double>> mlp_cost;

    double full_cost() const;
    void validate() const;
    void to_csv(const std::string& path) const;
    static CostTable from_csv(const std::string& path);
};

struct BudgetTarget {
    double value = 0.0;       // in the table's units
    double normalized = 0.0;  // value / full cost, in (0, 1]
};

BudgetTarget make_budget(const CostTable& table, double normalized_fraction);

struct CostMeasureOptions {
    int batch = 1;
    int seq = 32;
    int repeats = 30;
    int warmup = 5;
};

CostTable build_cost_table(const ElasticModel& model, CostKind kind,
                           const CostMeasureOptions& options = {});

double selection_cost(const CostTable& table, const Selection& sel);

// Sum of hinge overages, Σ_t max(cost_t - T_t, 0): numeric and tape forms.
double constraint_penalty(const std::vector<double>& costs, const std::vector<double>& targets);
Value constraint_loss(const std::vector<Value>& costs, const std::vector<double>& targets);

}  // namespace elastron
