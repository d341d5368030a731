#include "momq/query.hpp"

#include <algorithm>
#include <chrono>
#include <sstream>
#include <stdexcept>

namespace momq {

std::string value_str(const Value& v) {
    if (std::holds_alternative<int64_t>(v)) return std::to_string(std::get<int64_t>(v));
    return std::get<std::string>(v);
}

int Table::col_index(const std::string& col) const {
    for (size_t i = 0; i < columns.size(); ++i)
        if (columns[i].name == col) return static_cast<int>(i);
    return -1;
}

const Table* ToyDatabase::find_table(const std::string& n) const {
    for (const auto& t : tables)
        if (t.name == n) return &t;
    return nullptr;
}

const EdgeType* ToyDatabase::find_edge_type(const std::string& n) const {
    for (const auto& e : edge_types)
        if (e.name == n) return &e;
    return nullptr;
}

namespace {

const std::vector<std::string> kDialectNames = {"sqla", "sqlb", "grapha", "graphb"};

// Surface keyword table for the two relational dialects.
const SqlSurfaceKeywords kSqlKw[2] = {
    {"GET", "KEEP", "TAKE", "MERGE"},    // sqla
    {"PICK", "WHEN", "LIM", "JOINED"},   // sqlb
};

const std::vector<std::string> kSharedSql = {"FROM", "ON",  "ORDER", "BY",  "ASC", "DESC",
                                             "AND",  "COUNT", "SUM", "MIN", "MAX", "(",
                                             ")",    "*",   ",",    "=",   "<",   ">",
                                             "'"};
const std::vector<std::string> kSharedGraph = {"ORDER", "BY", "ASC", "DESC", "AND", "COUNT",
                                               "(",     ")",  "*",   ",",    "=",  "<",
                                               ">",     "'"};

std::vector<std::string> make_keywords(int dialect) {
    std::vector<std::string> kws;
    if (dialect == kSqlA || dialect == kSqlB) {
        const auto& k = kSqlKw[dialect];
        kws = {k.select, k.where, k.limit, k.join};
        kws.insert(kws.end(), kSharedSql.begin(), kSharedSql.end());
    } else if (dialect == kGraphA) {
        kws = {"MATCH", "WHERE", "RETURN", "CAP", "-", "[", "]", "->"};
        kws.insert(kws.end(), kSharedGraph.begin(), kSharedGraph.end());
    } else {
        kws = {"SCAN", "WALK", "SOURCE", "HAVING", "EMIT", "FIRST"};
        kws.insert(kws.end(), kSharedGraph.begin(), kSharedGraph.end());
    }
    return kws;
}

struct SyntaxError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct RuntimeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// -------------------------- shared AST pieces --------------------------

enum class CmpOp { eq, lt, gt };

struct Condition {
    std::string field;
    CmpOp op;
    Value rhs;
};

enum class AggFn { none, count, sum, min, max };

struct OrderSpec {
    std::string field;
    bool descending = false;
};

struct SqlQuery {
    std::vector<std::string> select_cols;  // empty means '*'
    AggFn agg = AggFn::none;
    std::string agg_col;  // unused for count
    std::string table;
    bool has_join = false;
    std::string join_table, join_left, join_right;
    std::vector<Condition> conds;
    std::optional<OrderSpec> order;
    std::optional<int64_t> limit;
};

struct GraphQuery {
    bool hop = false;             // node scan vs one-hop traversal
    std::string src_label;
    std::string edge_type;        // hop only
    std::string dst_label;        // hop only (grapha names it; graphb takes it from the catalog)
    std::vector<Condition> conds; // over the source node
    AggFn agg = AggFn::none;      // count only
    std::vector<std::string> ret_props;
    std::optional<OrderSpec> order;
    std::optional<int64_t> limit;
};

// -------------------------- tokenizer + cursor --------------------------

std::vector<std::string> split_tokens(const std::string& text) {
    std::vector<std::string> toks;
    std::istringstream is(text);
    std::string t;
    while (is >> t) toks.push_back(t);
    return toks;
}

struct Cursor {
    const std::vector<std::string>& toks;
    size_t pos = 0;

    bool done() const { return pos >= toks.size(); }
    const std::string& peek() const {
        static const std::string empty;
        return done() ? empty : toks[pos];
    }
    std::string next() {
        if (done()) throw SyntaxError("unexpected end of query");
        return toks[pos++];
    }
    bool accept(const std::string& kw) {
        if (!done() && toks[pos] == kw) {
            ++pos;
            return true;
        }
        return false;
    }
    void expect(const std::string& kw) {
        if (!accept(kw)) throw SyntaxError("expected '" + kw + "' but found '" + peek() + "'");
    }
};

bool is_integer(const std::string& t) {
    if (t.empty()) return false;
    size_t i = t[0] == '-' ? 1 : 0;
    if (i == t.size()) return false;
    for (; i < t.size(); ++i)
        if (!std::isdigit(static_cast<unsigned char>(t[i]))) return false;
    return true;
}

bool is_identifier(const std::string& t) {
    if (t.empty()) return false;
    for (char c : t)
        if (!std::islower(static_cast<unsigned char>(c)) && c != '_') return false;
    return true;
}

std::string expect_identifier(Cursor& c) {
    std::string t = c.next();
    if (!is_identifier(t)) throw SyntaxError("expected identifier, found '" + t + "'");
    return t;
}

int64_t expect_integer(Cursor& c) {
    std::string t = c.next();
    if (!is_integer(t)) throw SyntaxError("expected number, found '" + t + "'");
    return std::stoll(t);
}

Value expect_value(Cursor& c) {
    if (c.accept("'")) {
        std::string word = c.next();
        c.expect("'");
        return Value(word);
    }
    return Value(expect_integer(c));
}

CmpOp expect_cmp(Cursor& c) {
    std::string t = c.next();
    if (t == "=") return CmpOp::eq;
    if (t == "<") return CmpOp::lt;
    if (t == ">") return CmpOp::gt;
    throw SyntaxError("expected comparison operator, found '" + t + "'");
}

std::vector<Condition> parse_conditions(Cursor& c) {
    std::vector<Condition> conds;
    do {
        Condition cond;
        cond.field = expect_identifier(c);
        cond.op = expect_cmp(c);
        cond.rhs = expect_value(c);
        conds.push_back(std::move(cond));
    } while (c.accept("AND"));
    return conds;
}

AggFn parse_agg_keyword(const std::string& t) {
    if (t == "COUNT") return AggFn::count;
    if (t == "SUM") return AggFn::sum;
    if (t == "MIN") return AggFn::min;
    if (t == "MAX") return AggFn::max;
    return AggFn::none;
}

std::optional<OrderSpec> parse_order(Cursor& c) {
    if (!c.accept("ORDER")) return std::nullopt;
    c.expect("BY");
    OrderSpec o;
    o.field = expect_identifier(c);
    std::string dir = c.next();
    if (dir == "DESC")
        o.descending = true;
    else if (dir != "ASC")
        throw SyntaxError("expected ASC or DESC, found '" + dir + "'");
    return o;
}

// -------------------------- parsers --------------------------

SqlQuery parse_sql(int dialect, const std::vector<std::string>& toks) {
    const auto& kw = kSqlKw[dialect];
    Cursor c{toks};
    SqlQuery q;
    c.expect(kw.select);
    if (c.accept("*")) {
        // keep select_cols empty
    } else if (AggFn fn = parse_agg_keyword(c.peek()); fn != AggFn::none) {
        c.next();
        q.agg = fn;
        c.expect("(");
        if (fn == AggFn::count)
            c.expect("*");
        else
            q.agg_col = expect_identifier(c);
        c.expect(")");
    } else {
        do {
            q.select_cols.push_back(expect_identifier(c));
        } while (c.accept(","));
    }
    c.expect("FROM");
    q.table = expect_identifier(c);
    if (c.accept(kw.join)) {
        q.has_join = true;
        q.join_table = expect_identifier(c);
        c.expect("ON");
        q.join_left = expect_identifier(c);
        c.expect("=");
        q.join_right = expect_identifier(c);
    }
    if (c.accept(kw.where)) q.conds = parse_conditions(c);
    q.order = parse_order(c);
    if (c.accept(kw.limit)) q.limit = expect_integer(c);
    if (!c.done()) throw SyntaxError("trailing tokens after query: '" + c.peek() + "'");
    return q;
}

std::vector<std::string> parse_return_list(Cursor& c, AggFn& agg) {
    std::vector<std::string> props;
    if (c.accept("COUNT")) {
        agg = AggFn::count;
        c.expect("(");
        c.expect("*");
        c.expect(")");
        return props;
    }
    do {
        props.push_back(expect_identifier(c));
    } while (c.accept(","));
    return props;
}

GraphQuery parse_grapha(const std::vector<std::string>& toks) {
    Cursor c{toks};
    GraphQuery q;
    c.expect("MATCH");
    c.expect("(");
    q.src_label = expect_identifier(c);
    c.expect(")");
    if (c.accept("-")) {
        q.hop = true;
        c.expect("[");
        q.edge_type = expect_identifier(c);
        c.expect("]");
        c.expect("->");
        c.expect("(");
        q.dst_label = expect_identifier(c);
        c.expect(")");
    }
    if (c.accept("WHERE")) q.conds = parse_conditions(c);
    c.expect("RETURN");
    q.ret_props = parse_return_list(c, q.agg);
    q.order = parse_order(c);
    if (c.accept("CAP")) q.limit = expect_integer(c);
    if (!c.done()) throw SyntaxError("trailing tokens after query: '" + c.peek() + "'");
    return q;
}

GraphQuery parse_graphb(const std::vector<std::string>& toks) {
    Cursor c{toks};
    GraphQuery q;
    if (c.accept("WALK")) {
        q.hop = true;
        q.edge_type = expect_identifier(c);
        c.expect("SOURCE");
        q.src_label = expect_identifier(c);
    } else {
        c.expect("SCAN");
        q.src_label = expect_identifier(c);
    }
    if (c.accept("HAVING")) q.conds = parse_conditions(c);
    c.expect("EMIT");
    q.ret_props = parse_return_list(c, q.agg);
    q.order = parse_order(c);
    if (c.accept("FIRST")) q.limit = expect_integer(c);
    if (!c.done()) throw SyntaxError("trailing tokens after query: '" + c.peek() + "'");
    return q;
}

// -------------------------- evaluation --------------------------

using Deadline = std::chrono::steady_clock::time_point;

void check_deadline(const Deadline& d) {
    if (std::chrono::steady_clock::now() > d) throw RuntimeError("query execution exceeded 1s budget");
}

bool value_cmp(const Value& lhs, CmpOp op, const Value& rhs) {
    if (lhs.index() != rhs.index()) throw RuntimeError("type mismatch in comparison");
    auto three_way = [&]() -> int {
        if (std::holds_alternative<int64_t>(lhs)) {
            int64_t a = std::get<int64_t>(lhs), b = std::get<int64_t>(rhs);
            return a < b ? -1 : (a > b ? 1 : 0);
        }
        const auto& a = std::get<std::string>(lhs);
        const auto& b = std::get<std::string>(rhs);
        return a < b ? -1 : (a > b ? 1 : 0);
    };
    int c = three_way();
    switch (op) {
        case CmpOp::eq: return c == 0;
        case CmpOp::lt: return c < 0;
        case CmpOp::gt: return c > 0;
    }
    return false;
}

bool value_less(const Value& a, const Value& b) {
    if (a.index() != b.index()) return a.index() < b.index();
    if (std::holds_alternative<int64_t>(a)) return std::get<int64_t>(a) < std::get<int64_t>(b);
    return std::get<std::string>(a) < std::get<std::string>(b);
}

QueryResult finish_rows(std::vector<std::vector<Value>> rows, const std::vector<Value>& order_keys,
                        const std::optional<OrderSpec>& order, const std::optional<int64_t>& limit) {
    QueryResult res;
    if (order) {
        std::vector<size_t> idx(rows.size());
        for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        std::stable_sort(idx.begin(), idx.end(), [&](size_t a, size_t b) {
            if (order->descending) return value_less(order_keys[b], order_keys[a]);
            return value_less(order_keys[a], order_keys[b]);
        });
        std::vector<std::vector<Value>> sorted;
        sorted.reserve(rows.size());
        for (size_t i : idx) sorted.push_back(std::move(rows[i]));
        rows = std::move(sorted);
        res.ordered = true;
    }
    if (limit && static_cast<int64_t>(rows.size()) > *limit) rows.resize(static_cast<size_t>(*limit));
    res.rows = std::move(rows);
    return res;
}

QueryResult aggregate_rows(AggFn fn, const std::vector<Value>& vals) {
    QueryResult res;
    if (fn == AggFn::count) {
        res.rows.push_back({Value(static_cast<int64_t>(vals.size()))});
        return res;
    }
    if (fn == AggFn::sum) {
        int64_t total = 0;
        for (const auto& v : vals) {
            if (!std::holds_alternative<int64_t>(v)) throw RuntimeError("SUM over non-numeric column");
            total += std::get<int64_t>(v);
        }
        res.rows.push_back({Value(total)});
        return res;
    }
    // MIN/MAX over the empty set yields no rows
    if (vals.empty()) return res;
    Value best = vals[0];
    for (const auto& v : vals) {
        bool less = value_less(v, best);
        if ((fn == AggFn::min && less) || (fn == AggFn::max && value_less(best, v))) best = v;
    }
    res.rows.push_back({best});
    return res;
}

QueryResult eval_sql(const SqlQuery& q, const ToyDatabase& db, const Deadline& deadline) {
    const Table* t1 = db.find_table(q.table);
    if (!t1) throw RuntimeError("unknown table '" + q.table + "'");

    // materialize the working relation (single table or inner join)
    std::vector<Column> cols = t1->columns;
    std::vector<std::vector<Value>> work;
    if (q.has_join) {
        const Table* t2 = db.find_table(q.join_table);
        if (!t2) throw RuntimeError("unknown table '" + q.join_table + "'");
        cols.insert(cols.end(), t2->columns.begin(), t2->columns.end());
        // the join columns may live in either table
        auto locate = [&](const std::string& name) -> std::pair<int, int> {
            int i1 = t1->col_index(name);
            if (i1 >= 0) return {0, i1};
            int i2 = t2->col_index(name);
            if (i2 >= 0) return {1, i2};
            throw RuntimeError("unknown join column '" + name + "'");
        };
        auto [lt, lc] = locate(q.join_left);
        auto [rt, rc] = locate(q.join_right);
        if (lt == rt) throw RuntimeError("join columns must come from both tables");
        for (const auto& r1 : t1->rows) {
            check_deadline(deadline);
            for (const auto& r2 : t2->rows) {
                const Value& lv = lt == 0 ? r1[static_cast<size_t>(lc)] : r2[static_cast<size_t>(lc)];
                const Value& rv = rt == 0 ? r1[static_cast<size_t>(rc)] : r2[static_cast<size_t>(rc)];
                if (lv.index() == rv.index() && value_cmp(lv, CmpOp::eq, rv)) {
                    std::vector<Value> joined = r1;
                    joined.insert(joined.end(), r2.begin(), r2.end());
                    work.push_back(std::move(joined));
                }
            }
        }
    } else {
        work = t1->rows;
    }

    auto col_of = [&](const std::string& name) -> size_t {
        for (size_t i = 0; i < cols.size(); ++i)
            if (cols[i].name == name) return i;
        throw RuntimeError("unknown column '" + name + "'");
    };

    // filter
    std::vector<std::vector<Value>> kept;
    for (auto& row : work) {
        check_deadline(deadline);
        bool pass = true;
        for (const auto& c : q.conds)
            if (!value_cmp(row[col_of(c.field)], c.op, c.rhs)) {
                pass = false;
                break;
            }
        if (pass) kept.push_back(std::move(row));
    }

    if (q.agg != AggFn::none) {
        std::vector<Value> vals;
        if (q.agg == AggFn::count) {
            vals.resize(kept.size(), Value(int64_t{0}));
        } else {
            size_t ci = col_of(q.agg_col);
            for (const auto& row : kept) vals.push_back(row[ci]);
        }
        return aggregate_rows(q.agg, vals);
    }

    std::vector<size_t> proj;
    if (q.select_cols.empty()) {
        for (size_t i = 0; i < cols.size(); ++i) proj.push_back(i);
    } else {
        for (const auto& name : q.select_cols) proj.push_back(col_of(name));
    }
    std::optional<size_t> order_col;
    if (q.order) order_col = col_of(q.order->field);

    std::vector<std::vector<Value>> rows;
    std::vector<Value> keys;
    for (const auto& row : kept) {
        std::vector<Value> out;
        out.reserve(proj.size());
        for (size_t i : proj) out.push_back(row[i]);
        rows.push_back(std::move(out));
        if (order_col) keys.push_back(row[*order_col]);
    }
    return finish_rows(std::move(rows), keys, q.order, q.limit);
}

QueryResult eval_graph(const GraphQuery& q, const ToyDatabase& db, const Deadline& deadline) {
    auto label_cols = db.label_props.find(q.src_label);
    if (label_cols == db.label_props.end()) throw RuntimeError("unknown node label '" + q.src_label + "'");

    auto prop_of = [&](const GraphNodeRec& n, const std::string& prop) -> const Value& {
        auto it = n.props.find(prop);
        if (it == n.props.end()) throw RuntimeError("unknown property '" + prop + "'");
        return it->second;
    };

    auto source_passes = [&](const GraphNodeRec& n) {
        if (n.label != q.src_label) return false;
        for (const auto& c : q.conds)
            if (!value_cmp(prop_of(n, c.field), c.op, c.rhs)) return false;
        return true;
    };

    // collect the emitted entities in graph storage order
    std::vector<const GraphNodeRec*> emitted;
    if (!q.hop) {
        for (const auto& n : db.nodes) {
            check_deadline(deadline);
            if (source_passes(n)) emitted.push_back(&n);
        }
    } else {
        const EdgeType* et = db.find_edge_type(q.edge_type);
        if (!et) throw RuntimeError("unknown edge type '" + q.edge_type + "'");
        std::string dst_label = q.dst_label.empty() ? et->dst_label : q.dst_label;
        if (db.label_props.find(dst_label) == db.label_props.end())
            throw RuntimeError("unknown node label '" + dst_label + "'");
        std::map<int64_t, const GraphNodeRec*> by_id;
        for (const auto& n : db.nodes) by_id[n.id] = &n;
        for (const auto& e : db.edges) {
            check_deadline(deadline);
            if (e.type != q.edge_type) continue;
            auto src = by_id.find(e.src), dst = by_id.find(e.dst);
            if (src == by_id.end() || dst == by_id.end()) continue;
            if (!source_passes(*src->second)) continue;
            if (dst->second->label != dst_label) continue;
            emitted.push_back(dst->second);
        }
    }

    if (q.agg == AggFn::count) {
        QueryResult res;
        res.rows.push_back({Value(static_cast<int64_t>(emitted.size()))});
        return res;
    }

    std::vector<std::vector<Value>> rows;
    std::vector<Value> keys;
    for (const auto* n : emitted) {
        std::vector<Value> out;
        for (const auto& p : q.ret_props) out.push_back(prop_of(*n, p));
        rows.push_back(std::move(out));
        if (q.order) keys.push_back(prop_of(*n, q.order->field));
    }
    return finish_rows(std::move(rows), keys, q.order, q.limit);
}

}  // namespace

const std::string& dialect_name(int dialect) {
    if (dialect < 0 || dialect >= kNumDialects) throw std::invalid_argument("bad dialect id");
    return kDialectNames[static_cast<size_t>(dialect)];
}

int dialect_from_name(const std::string& name) {
    for (int i = 0; i < kNumDialects; ++i)
        if (kDialectNames[static_cast<size_t>(i)] == name) return i;
    return -1;
}

bool is_sql_dialect(int dialect) { return dialect == kSqlA || dialect == kSqlB; }

const SqlSurfaceKeywords& sql_surface(int dialect) {
    if (!is_sql_dialect(dialect)) throw std::invalid_argument("sql_surface: not a SQL dialect");
    return kSqlKw[dialect];
}

const std::vector<std::string>& dialect_keywords(int dialect) {
    static const std::vector<std::string> tables[kNumDialects] = {
        make_keywords(0), make_keywords(1), make_keywords(2), make_keywords(3)};
    return tables[static_cast<size_t>(dialect)];
}

ExecOutcome execute(int dialect, const std::string& query, const ToyDatabase& db) {
    ExecOutcome out;
    const auto deadline = std::chrono::steady_clock::now() + std::chrono::seconds(1);
    std::vector<std::string> toks = split_tokens(query);
    try {
        if (is_sql_dialect(dialect)) {
            SqlQuery q = parse_sql(dialect, toks);
            out.result = eval_sql(q, db, deadline);
        } else if (dialect == kGraphA) {
            GraphQuery q = parse_grapha(toks);
            out.result = eval_graph(q, db, deadline);
        } else if (dialect == kGraphB) {
            GraphQuery q = parse_graphb(toks);
            out.result = eval_graph(q, db, deadline);
        } else {
            out.status = ExecStatus::runtime_error;
            out.message = "unknown dialect id";
            return out;
        }
    } catch (const SyntaxError& e) {
        out.status = ExecStatus::syntax_error;
        out.message = e.what();
    } catch (const RuntimeError& e) {
        out.status = ExecStatus::runtime_error;
        out.message = e.what();
    }
    return out;
}

bool results_match(const QueryResult& gold, const QueryResult& pred) {
    auto serialize = [](const std::vector<Value>& row) {
        std::string s;
        for (const auto& v : row) {
            s += std::holds_alternative<int64_t>(v) ? 'i' : 's';
            s += value_str(v);
            s += '\x1f';
        }
        return s;
    };
    std::vector<std::string> a, b;
    for (const auto& r : gold.rows) a.push_back(serialize(r));
    for (const auto& r : pred.rows) b.push_back(serialize(r));
    if (!gold.ordered) {
        std::sort(a.begin(), a.end());
        std::sort(b.begin(), b.end());
    }
    return a == b;
}

}  // namespace momq
