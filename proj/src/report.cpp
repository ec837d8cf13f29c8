#include "heta/report.h"

#include <json.hpp>

#include <cstdio>
#include <fstream>

#include "heta/error.h"
#include "heta/info.h"
#include "heta/jsonl.h"
#include "heta/metrics.h"

namespace heta::report {

namespace {

using nlohmann::json;

json config_to_json(const core::HetaConfig& cfg) {
    json j;
    j["variant"] = core::variant_name(cfg.variant);
    j["beta"] = cfg.beta;
    j["gamma"] = cfg.gamma;
    j["scheme"] = info::scheme_name(cfg.scheme);
    j["window"] = cfg.window;
    j["stride"] = cfg.stride;
    j["layer_subset"] = cfg.layer_subset;
    j["samples"] = cfg.samples;
    j["rank"] = cfg.rank;
    j["seed"] = cfg.seed;
    j["exact_tail"] = cfg.exact_tail;
    return j;
}

core::HetaConfig config_from_json(const json& j) {
    core::HetaConfig cfg;
    cfg.variant = core::variant_from_name(j.at("variant").get<std::string>());
    cfg.beta = j.at("beta").get<double>();
    cfg.gamma = j.at("gamma").get<double>();
    cfg.scheme = info::scheme_from_name(j.at("scheme").get<std::string>());
    cfg.window = j.at("window").get<int64_t>();
    cfg.stride = j.at("stride").get<int64_t>();
    cfg.layer_subset = j.at("layer_subset").get<std::vector<int64_t>>();
    cfg.samples = j.at("samples").get<int64_t>();
    cfg.rank = j.at("rank").get<int64_t>();
    cfg.seed = j.at("seed").get<uint64_t>();
    cfg.exact_tail = j.at("exact_tail").get<bool>();
    return cfg;
}

std::vector<double> tensor_to_vec(const Tensor& t) {
    return std::vector<double>(t.data(), t.data() + t.numel());
}

// Field-level problems carry the record number; raw parse and version
// problems already carry the line number from the jsonl layer.
template <typename Fn>
auto extract(const std::string& path, size_t row, Fn fn) -> decltype(fn()) {
    try {
        return fn();
    } catch (const json::exception& e) {
        throw IoError(path + ": record " + std::to_string(row + 1) + ": " + e.what());
    }
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("report write: cannot open " + path);
    f << text;
    if (!f) throw IoError("report write: write failed for " + path);
}

std::string format_num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return buf;
}

}  // namespace

AttributionRecord attribution_record(const std::string& id, const std::vector<int64_t>& tokens,
                                     const core::AttributionVector& av,
                                     const std::map<std::string, double>& timings_ms) {
    if (av.attr.numel() != static_cast<int64_t>(tokens.size()))
        throw ShapeError("attribution record: score length does not match tokens");
    AttributionRecord r;
    r.id = id;
    r.tokens = tokens;
    r.target = av.target;
    r.target_pos = av.target_pos;
    r.attr = tensor_to_vec(av.attr);
    r.m = tensor_to_vec(av.m);
    r.s = tensor_to_vec(av.s);
    r.i = tensor_to_vec(av.i);
    r.degenerate_gate = av.degenerate_gate;
    r.degenerate_path = av.degenerate_path;
    r.tau_hat = av.tau_hat;
    r.hvp_count = av.hvp_count;
    r.config = av.config;
    r.timings_ms = timings_ms;
    return r;
}

void save_attributions(const std::vector<AttributionRecord>& records, const std::string& path) {
    std::vector<json> rows;
    rows.reserve(records.size());
    for (const AttributionRecord& r : records) {
        json j;
        j["schema_version"] = kSchemaVersion;
        j["id"] = r.id;
        j["tokens"] = r.tokens;
        j["target"] = r.target;
        j["target_pos"] = r.target_pos;
        j["attr"] = r.attr;
        j["m"] = r.m;
        j["s"] = r.s;
        j["i"] = r.i;
        j["degenerate_gate"] = r.degenerate_gate;
        j["degenerate_path"] = r.degenerate_path;
        j["tau_hat"] = r.tau_hat;
        j["hvp_count"] = r.hvp_count;
        j["config"] = config_to_json(r.config);
        j["timings_ms"] = r.timings_ms;
        rows.push_back(std::move(j));
    }
    write_jsonl(path, rows);
}

std::vector<AttributionRecord> load_attributions(const std::string& path) {
    std::vector<json> rows = read_jsonl(path, kSchemaVersion);
    std::vector<AttributionRecord> out;
    out.reserve(rows.size());
    for (size_t n = 0; n < rows.size(); ++n) {
        const json& j = rows[n];
        AttributionRecord r = extract(path, n, [&] {
            AttributionRecord a;
            a.id = j.at("id").get<std::string>();
            a.tokens = j.at("tokens").get<std::vector<int64_t>>();
            a.target = j.at("target").get<int64_t>();
            a.target_pos = j.at("target_pos").get<int64_t>();
            a.attr = j.at("attr").get<std::vector<double>>();
            a.m = j.at("m").get<std::vector<double>>();
            a.s = j.at("s").get<std::vector<double>>();
            a.i = j.at("i").get<std::vector<double>>();
            a.degenerate_gate = j.at("degenerate_gate").get<bool>();
            a.degenerate_path = j.at("degenerate_path").get<bool>();
            a.tau_hat = j.at("tau_hat").get<double>();
            a.hvp_count = j.at("hvp_count").get<int64_t>();
            a.config = config_from_json(j.at("config"));
            a.timings_ms = j.at("timings_ms").get<std::map<std::string, double>>();
            return a;
        });
        const size_t T = r.tokens.size();
        if (r.attr.size() != T || r.m.size() != T || r.s.size() != T || r.i.size() != T)
            throw IoError(path + ": record " + std::to_string(n + 1) +
                          ": score arrays do not match token count");
        out.push_back(std::move(r));
    }
    return out;
}

EvalReport aggregate_eval(std::vector<EvalRecord> records) {
    EvalReport rep;
    rep.records = std::move(records);
    std::map<std::string, std::map<std::string, std::vector<double>>> pool;
    for (const EvalRecord& r : rep.records)
        for (const auto& [metric, value] : r.metrics) pool[r.method][metric].push_back(value);
    for (const auto& [method, metrics_map] : pool)
        for (const auto& [metric, values] : metrics_map)
            rep.aggregates[method][metric] = metrics::aggregate(values);
    return rep;
}

void save_eval(const EvalReport& report, const std::string& path) {
    std::vector<json> rows;
    rows.reserve(report.records.size());
    for (const EvalRecord& r : report.records) {
        json j;
        j["schema_version"] = kSchemaVersion;
        j["id"] = r.id;
        j["method"] = r.method;
        j["metrics"] = r.metrics;
        rows.push_back(std::move(j));
    }
    write_jsonl(path, rows);
}

EvalReport load_eval(const std::string& path) {
    std::vector<json> rows = read_jsonl(path, kSchemaVersion);
    std::vector<EvalRecord> records;
    records.reserve(rows.size());
    for (size_t n = 0; n < rows.size(); ++n) {
        const json& j = rows[n];
        records.push_back(extract(path, n, [&] {
            EvalRecord r;
            r.id = j.at("id").get<std::string>();
            r.method = j.at("method").get<std::string>();
            r.metrics = j.at("metrics").get<std::map<std::string, double>>();
            return r;
        }));
    }
    return aggregate_eval(std::move(records));
}

void save_eval_summary(const EvalReport& report, const std::string& path) {
    json j;
    j["schema_version"] = kSchemaVersion;
    json methods = json::object();
    for (const auto& [method, metrics_map] : report.aggregates) {
        json mm = json::object();
        for (const auto& [metric, a] : metrics_map) {
            mm[metric] = {{"mean", a.mean}, {"stddev", a.stddev}, {"se", a.se}, {"n", a.n}};
        }
        methods[method] = std::move(mm);
    }
    j["methods"] = std::move(methods);
    write_text(path, j.dump(2) + "\n");
}

void save_bounds(const std::vector<theory::BoundReport>& reports, const std::string& path) {
    std::vector<json> rows;
    rows.reserve(reports.size());
    for (const theory::BoundReport& r : reports) {
        json j;
        j["schema_version"] = kSchemaVersion;
        j["name"] = r.name;
        j["instance"] = r.instance;
        j["lhs"] = r.lhs;
        j["rhs"] = r.rhs;
        rows.push_back(std::move(j));
    }
    write_jsonl(path, rows);
}

std::vector<theory::BoundReport> load_bounds(const std::string& path) {
    std::vector<json> rows = read_jsonl(path, kSchemaVersion);
    std::vector<theory::BoundReport> out;
    out.reserve(rows.size());
    for (size_t n = 0; n < rows.size(); ++n) {
        const json& j = rows[n];
        out.push_back(extract(path, n, [&] {
            return theory::make_bound(j.at("name").get<std::string>(),
                                      j.at("lhs").get<double>(), j.at("rhs").get<double>(),
                                      j.at("instance").get<std::string>());
        }));
    }
    return out;
}

std::string bounds_markdown(const std::vector<theory::BoundReport>& reports) {
    struct Row {
        int64_t count = 0;
        int64_t violated = 0;
        double min_slack = 0.0;
        bool any = false;
    };
    std::vector<std::string> order;
    std::map<std::string, Row> rows;
    for (const theory::BoundReport& r : reports) {
        auto it = rows.find(r.name);
        if (it == rows.end()) {
            order.push_back(r.name);
            it = rows.emplace(r.name, Row{}).first;
        }
        Row& row = it->second;
        ++row.count;
        if (!r.satisfied) ++row.violated;
        if (!row.any || r.slack < row.min_slack) row.min_slack = r.slack;
        row.any = true;
    }

    std::string md = "| check | count | violated | min slack |\n|---|---:|---:|---:|\n";
    int64_t total = 0, total_violated = 0;
    for (const std::string& name : order) {
        const Row& row = rows.at(name);
        total += row.count;
        total_violated += row.violated;
        md += "| " + name + " | " + std::to_string(row.count) + " | " +
              std::to_string(row.violated) + " | " + format_num(row.min_slack) + " |\n";
    }
    md += "| total | " + std::to_string(total) + " | " + std::to_string(total_violated) +
          " | |\n";
    return md;
}

}  // namespace heta::report
