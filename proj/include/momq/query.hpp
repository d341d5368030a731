#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace momq {

// ---------------------------------------------------------------------------
// Toy database: a relational part and a property-graph part.
// ---------------------------------------------------------------------------

using Value = std::variant<int64_t, std::string>;
std::string value_str(const Value& v);

struct Column {
    std::string name;
    bool is_int = false;
};

struct Table {
    std::string name;
    std::vector<Column> columns;
    std::vector<std::vector<Value>> rows;
    int col_index(const std::string& col) const;
};

struct GraphNodeRec {
    int64_t id = 0;
    std::string label;
    std::map<std::string, Value> props;
};

struct EdgeType {
    std::string name;
    std::string src_label;
    std::string dst_label;
};

struct GraphEdgeRec {
    std::string type;
    int64_t src = 0;
    int64_t dst = 0;
};

struct ToyDatabase {
    std::string name;
    std::vector<Table> tables;
    std::map<std::string, std::vector<Column>> label_props;  // node label -> property catalog
    std::vector<GraphNodeRec> nodes;
    std::vector<EdgeType> edge_types;
    std::vector<GraphEdgeRec> edges;

    const Table* find_table(const std::string& name) const;
    const EdgeType* find_edge_type(const std::string& name) const;
};

// ---------------------------------------------------------------------------
// Dialects. sqla/sqlb share one grammar and differ only in surface keywords;
// grapha walks patterns, graphb walks traversals, over identical semantics.
// ---------------------------------------------------------------------------

inline constexpr int kNumDialects = 4;
inline constexpr int kSqlA = 0;
inline constexpr int kSqlB = 1;
inline constexpr int kGraphA = 2;
inline constexpr int kGraphB = 3;

const std::string& dialect_name(int dialect);
int dialect_from_name(const std::string& name);  // -1 if unknown
bool is_sql_dialect(int dialect);

// full keyword/symbol inventory of a dialect (feeds the tokenizer vocab)
const std::vector<std::string>& dialect_keywords(int dialect);

// the four surface keywords that distinguish sqla from sqlb
struct SqlSurfaceKeywords {
    std::string select, where, limit, join;
};
const SqlSurfaceKeywords& sql_surface(int dialect);

// ---------------------------------------------------------------------------
// Execution
// ---------------------------------------------------------------------------

struct QueryResult {
    bool ordered = false;  // query carried an explicit ordering clause
    std::vector<std::vector<Value>> rows;
};

// multiset equality, sequence equality when the gold query was ordered
bool results_match(const QueryResult& gold, const QueryResult& pred);

enum class ExecStatus { ok, syntax_error, runtime_error };

struct ExecOutcome {
    ExecStatus status = ExecStatus::ok;
    QueryResult result;
    std::string message;
    bool ok() const { return status == ExecStatus::ok; }
};

// Parses per the dialect grammar and evaluates against db. Deterministic;
// a wall-clock guard aborts pathological evaluations after one second.
ExecOutcome execute(int dialect, const std::string& query, const ToyDatabase& db);

}  // namespace momq
