#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "heta/heta.h"
#include "heta/metrics.h"
#include "heta/theory.h"

namespace heta::report {

// All report files are line-delimited JSON with this version stamped on every
// line; readers reject anything else outright. Keys serialize in sorted order,
// so save -> load -> save is byte-identical.
inline constexpr int kSchemaVersion = 1;

// One attribution run on one instance: scores, their factors, the resolved
// configuration, and per-phase wall times. The embedding-override tensor is
// runtime-only and never serialized.
struct AttributionRecord {
    std::string id;
    std::vector<int64_t> tokens;
    int64_t target = -1;
    int64_t target_pos = -1;
    std::vector<double> attr, m, s, i;
    bool degenerate_gate = false;
    bool degenerate_path = false;
    double tau_hat = 0.0;
    int64_t hvp_count = 0;
    core::HetaConfig config;
    std::map<std::string, double> timings_ms;
};

AttributionRecord attribution_record(const std::string& id, const std::vector<int64_t>& tokens,
                                     const core::AttributionVector& av,
                                     const std::map<std::string, double>& timings_ms = {});

void save_attributions(const std::vector<AttributionRecord>& records, const std::string& path);
std::vector<AttributionRecord> load_attributions(const std::string& path);

// Per-instance metric values for one method, plus corpus-level aggregates
// keyed method -> metric. Aggregates are derived from the records, so loading
// recomputes them rather than trusting the file.
struct EvalRecord {
    std::string id;
    std::string method;
    std::map<std::string, double> metrics;
};

struct EvalReport {
    std::vector<EvalRecord> records;
    std::map<std::string, std::map<std::string, metrics::Aggregate>> aggregates;
};

EvalReport aggregate_eval(std::vector<EvalRecord> records);
void save_eval(const EvalReport& report, const std::string& path);
EvalReport load_eval(const std::string& path);

// Corpus-level summary of the aggregates as a single indented JSON document
// (derived artifact; not meant to be read back).
void save_eval_summary(const EvalReport& report, const std::string& path);

// Bound reports: only name / instance / lhs / rhs are stored; satisfaction
// and slack are recomputed on load so the file cannot contradict the rule.
void save_bounds(const std::vector<theory::BoundReport>& reports, const std::string& path);
std::vector<theory::BoundReport> load_bounds(const std::string& path);

// Per-check rollup (count, violations, tightest slack) as a markdown table
// for CI logs, one row per distinct check name plus a totals row.
std::string bounds_markdown(const std::vector<theory::BoundReport>& reports);

}  // namespace heta::report
