#include "momq/corpus.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>

#include <json.hpp>

namespace momq {

using ordered_json = nlohmann::ordered_json;

const ToyDatabase& Corpus::db(const std::string& name) const {
    for (const auto& d : databases)
        if (d.name == name) return d;
    throw std::out_of_range("corpus has no database named '" + name + "'");
}

CorpusCounts uniform_counts(int train_per_dialect, int test_per_dialect) {
    CorpusCounts c;
    for (int d = 0; d < kNumDialects; ++d) c[d] = {train_per_dialect, test_per_dialect};
    return c;
}

namespace {

// ------------------------------ value pools ------------------------------

const std::vector<std::string> kPersonNames = {
    "alice", "bob",  "carol", "dave", "erin", "frank", "grace", "henry",
    "iris",  "jack", "karen", "liam", "mona", "ned",   "olga",  "pete",
    "quinn", "rosa", "sam",   "tina", "uma",  "vic",   "wendy", "yuri"};
const std::vector<std::string> kItems = {"lamp",  "desk",  "chair", "sofa", "stool", "plant",
                                         "radio", "clock", "kettle", "mug", "novel", "atlas",
                                         "banjo", "drum",  "flute", "canoe"};
const std::vector<std::string> kCityNames = {"paris", "tokyo", "oslo",  "cairo", "lima",
                                             "quito", "sofia", "dakar", "hanoi", "perth"};

enum class Pool { person, item, city, key, small_int };

struct ColSpec {
    const char* name;
    bool is_int;
    Pool pool;
};

struct TableSpec {
    const char* name;
    std::vector<ColSpec> cols;
};

struct TablePairSpec {
    TableSpec left, right;
    const char* join_left;
    const char* join_right;
};

const std::vector<TablePairSpec> kTablePairs = {
    {{"people", {{"name", false, Pool::person}, {"age", true, Pool::small_int}, {"pid", true, Pool::key}}},
     {"orders", {{"item", false, Pool::item}, {"qty", true, Pool::small_int}, {"buyer", true, Pool::key}}},
     "pid",
     "buyer"},
    {{"employees",
      {{"name", false, Pool::person}, {"salary", true, Pool::small_int}, {"eid", true, Pool::key}}},
     {"sales", {{"product", false, Pool::item}, {"total", true, Pool::small_int}, {"seller", true, Pool::key}}},
     "eid",
     "seller"},
    {{"students",
      {{"name", false, Pool::person}, {"grade", true, Pool::small_int}, {"sid", true, Pool::key}}},
     {"loans", {{"book", false, Pool::item}, {"week", true, Pool::small_int}, {"reader", true, Pool::key}}},
     "sid",
     "reader"},
    {{"cities", {{"city", false, Pool::city}, {"population", true, Pool::small_int}, {"cid", true, Pool::key}}},
     {"trips", {{"route", false, Pool::item}, {"cost", true, Pool::small_int}, {"dest", true, Pool::key}}},
     "cid",
     "dest"},
};

struct LabelSpec {
    const char* name;
    std::vector<ColSpec> props;  // one string prop and one int prop each
};

const std::vector<LabelSpec> kLabels = {
    {"person", {{"name", false, Pool::person}, {"age", true, Pool::small_int}}},
    {"movie", {{"title", false, Pool::item}, {"rating", true, Pool::small_int}}},
    {"company", {{"brand", false, Pool::item}, {"size", true, Pool::small_int}}},
    {"town", {{"city", false, Pool::city}, {"population", true, Pool::small_int}}},
};

struct EdgeSpec {
    const char* name;
    const char* src;
    const char* dst;
};

const std::vector<EdgeSpec> kEdgeSpecs = {
    {"likes", "person", "movie"},   {"knows", "person", "person"}, {"works_at", "person", "company"},
    {"visits", "person", "town"},   {"ships_to", "company", "town"},
};

const LabelSpec& label_spec(const std::string& name) {
    for (const auto& l : kLabels)
        if (l.name == name) return l;
    throw std::logic_error("unknown label spec");
}

// ------------------------------ database generation ------------------------------

Value draw_value(Pool pool, Rng& rng, int64_t key_range) {
    switch (pool) {
        case Pool::person: return Value(kPersonNames[static_cast<size_t>(rng.uniform_int(0, 23))]);
        case Pool::item: return Value(kItems[static_cast<size_t>(rng.uniform_int(0, 15))]);
        case Pool::city: return Value(kCityNames[static_cast<size_t>(rng.uniform_int(0, 9))]);
        case Pool::key: return Value(rng.uniform_int(1, key_range));
        case Pool::small_int: return Value(rng.uniform_int(1, 99));
    }
    return Value(int64_t{0});
}

Table make_table(const TableSpec& spec, Rng& rng, int64_t key_range, bool keys_sequential) {
    Table t;
    t.name = spec.name;
    for (const auto& c : spec.cols) t.columns.push_back({c.name, c.is_int});
    int64_t n_rows = rng.uniform_int(6, 10);
    for (int64_t r = 0; r < n_rows; ++r) {
        std::vector<Value> row;
        for (const auto& c : spec.cols) {
            if (c.pool == Pool::key && keys_sequential)
                row.push_back(Value(r + 1));
            else
                row.push_back(draw_value(c.pool, rng, key_range));
        }
        t.rows.push_back(std::move(row));
    }
    return t;
}

ToyDatabase make_database(int index, Rng& rng) {
    ToyDatabase db;
    db.name = "db" + std::to_string(index);

    const auto& pair = kTablePairs[static_cast<size_t>(index) % kTablePairs.size()];
    Table left = make_table(pair.left, rng, 0, /*keys_sequential=*/true);
    Table right = make_table(pair.right, rng, static_cast<int64_t>(left.rows.size()),
                             /*keys_sequential=*/false);
    db.tables = {std::move(left), std::move(right)};

    const auto& edge = kEdgeSpecs[static_cast<size_t>(index) % kEdgeSpecs.size()];
    std::vector<std::string> labels = {edge.src};
    if (std::string(edge.dst) != edge.src) labels.push_back(edge.dst);
    int64_t next_id = 1;
    std::map<std::string, std::vector<int64_t>> ids_by_label;
    for (const auto& lbl : labels) {
        const auto& spec = label_spec(lbl);
        db.label_props[lbl] = {};
        for (const auto& p : spec.props) db.label_props[lbl].push_back({p.name, p.is_int});
        int64_t n = rng.uniform_int(8, 12);
        for (int64_t i = 0; i < n; ++i) {
            GraphNodeRec node;
            node.id = next_id++;
            node.label = lbl;
            for (const auto& p : spec.props) node.props[p.name] = draw_value(p.pool, rng, 0);
            ids_by_label[lbl].push_back(node.id);
            db.nodes.push_back(std::move(node));
        }
    }
    db.edge_types.push_back({edge.name, edge.src, edge.dst});
    const auto& src_ids = ids_by_label[edge.src];
    const auto& dst_ids = ids_by_label[edge.dst];
    std::set<std::pair<int64_t, int64_t>> used;
    int64_t n_edges = rng.uniform_int(12, 18);
    for (int64_t i = 0; i < n_edges; ++i) {
        int64_t s = src_ids[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(src_ids.size()) - 1))];
        int64_t d = dst_ids[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(dst_ids.size()) - 1))];
        if (s == d || !used.insert({s, d}).second) continue;
        db.edges.push_back({edge.name, s, d});
    }
    return db;
}

// ------------------------------ template machinery ------------------------------

std::string join_tokens(const std::vector<std::string>& toks) {
    std::string out;
    for (size_t i = 0; i < toks.size(); ++i) {
        if (i) out += ' ';
        out += toks[i];
    }
    return out;
}

struct CmpChoice {
    std::string word;   // question phrasing
    std::string token;  // query operator
};
const std::vector<CmpChoice> kCmps = {{"exactly", "="}, {"below", "<"}, {"above", ">"}};

struct DirChoice {
    std::string word;
    std::string token;
};
const std::vector<DirChoice> kDirs = {{"ascending", "ASC"}, {"descending", "DESC"}};

struct AggChoice {
    std::string word;
    std::string token;
};
const std::vector<AggChoice> kAggs = {{"smallest", "MIN"}, {"largest", "MAX"}, {"total", "SUM"}};

struct Instantiation {
    std::string question;
    std::string gold;
};

const Column& pick_col(const std::vector<Column>& cols, Rng& rng) {
    return cols[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(cols.size()) - 1))];
}

std::vector<Column> int_cols(const std::vector<Column>& cols) {
    std::vector<Column> out;
    for (const auto& c : cols)
        if (c.is_int) out.push_back(c);
    return out;
}

std::vector<Column> str_cols(const std::vector<Column>& cols) {
    std::vector<Column> out;
    for (const auto& c : cols)
        if (!c.is_int) out.push_back(c);
    return out;
}

// mostly draw an existing value from the column so filters hit rows
std::string str_value_for(const Table& t, const std::string& col, Rng& rng) {
    int ci = t.col_index(col);
    if (!t.rows.empty() && rng.uniform() < 0.75) {
        const auto& row = t.rows[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(t.rows.size()) - 1))];
        return std::get<std::string>(row[static_cast<size_t>(ci)]);
    }
    const Pool pools[3] = {Pool::person, Pool::item, Pool::city};
    return std::get<std::string>(draw_value(pools[rng.uniform_int(0, 2)], rng, 0));
}

std::string num_token(Rng& rng) { return std::to_string(rng.uniform_int(2, 97)); }

std::optional<Instantiation> instantiate_sql(int tmpl, int dialect, const ToyDatabase& db, Rng& rng) {
    const auto& kw = sql_surface(dialect);
    const Table& t = db.tables[static_cast<size_t>(rng.uniform_int(0, 1))];
    auto ints = int_cols(t.columns);
    auto strs = str_cols(t.columns);
    Instantiation out;
    switch (tmpl) {
        case 0: {
            const auto& c = pick_col(t.columns, rng);
            out.question = join_tokens({"show", "the", c.name, "of", "each", "row", "in", t.name});
            out.gold = join_tokens({kw.select, c.name, "FROM", t.name});
            return out;
        }
        case 1: {
            const auto& c1 = pick_col(t.columns, rng);
            const Column* c2 = &pick_col(t.columns, rng);
            while (c2->name == c1.name) c2 = &pick_col(t.columns, rng);
            out.question = join_tokens(
                {"list", "the", c1.name, "and", "the", c2->name, "of", "every", "row", "in", t.name});
            out.gold = join_tokens({kw.select, c1.name, ",", c2->name, "FROM", t.name});
            return out;
        }
        case 2: {
            out.question = join_tokens({"show", "all", "columns", "of", t.name});
            out.gold = join_tokens({kw.select, "*", "FROM", t.name});
            return out;
        }
        case 3: {
            const auto& c1 = pick_col(t.columns, rng);
            const auto& c2 = pick_col(ints, rng);
            const auto& cmp = kCmps[static_cast<size_t>(rng.uniform_int(0, 2))];
            std::string n = num_token(rng);
            out.question = join_tokens(
                {"show", "the", c1.name, "of", "rows", "in", t.name, "with", c2.name, cmp.word, n});
            out.gold = join_tokens({kw.select, c1.name, "FROM", t.name, kw.where, c2.name, cmp.token, n});
            return out;
        }
        case 4: {
            if (strs.empty()) return std::nullopt;
            const auto& c1 = pick_col(t.columns, rng);
            const auto& c2 = pick_col(strs, rng);
            std::string s = str_value_for(t, c2.name, rng);
            out.question = join_tokens(
                {"show", "the", c1.name, "of", "rows", "in", t.name, "with", c2.name, "equal", "to", s});
            out.gold = join_tokens({kw.select, c1.name, "FROM", t.name, kw.where, c2.name, "=", "'", s, "'"});
            return out;
        }
        case 5: {
            if (ints.size() < 2) return std::nullopt;
            const auto& c1 = pick_col(t.columns, rng);
            const auto& c2 = pick_col(ints, rng);
            const Column* c3 = &pick_col(ints, rng);
            while (c3->name == c2.name) c3 = &pick_col(ints, rng);
            const auto& cmp1 = kCmps[static_cast<size_t>(rng.uniform_int(0, 2))];
            const auto& cmp2 = kCmps[static_cast<size_t>(rng.uniform_int(0, 2))];
            std::string n1 = num_token(rng), n2 = num_token(rng);
            out.question = join_tokens({"show", "the", c1.name, "of", "rows", "in", t.name, "with",
                                        c2.name, cmp1.word, n1, "and", c3->name, cmp2.word, n2});
            out.gold = join_tokens({kw.select, c1.name, "FROM", t.name, kw.where, c2.name, cmp1.token,
                                    n1, "AND", c3->name, cmp2.token, n2});
            return out;
        }
        case 6: {
            const auto& c = pick_col(ints, rng);
            const auto& cmp = kCmps[static_cast<size_t>(rng.uniform_int(0, 2))];
            std::string n = num_token(rng);
            out.question = join_tokens({"how", "many", "rows", "of", t.name, "have", c.name, cmp.word, n});
            out.gold = join_tokens({kw.select, "COUNT", "(", "*", ")", "FROM", t.name, kw.where, c.name,
                                    cmp.token, n});
            return out;
        }
        case 7: {
            const auto& agg = kAggs[static_cast<size_t>(rng.uniform_int(0, 2))];
            const auto& c = pick_col(ints, rng);
            out.question = join_tokens({"what", "is", "the", agg.word, c.name, "in", t.name});
            out.gold = join_tokens({kw.select, agg.token, "(", c.name, ")", "FROM", t.name});
            return out;
        }
        case 8:
        case 9: {
            const Table& t1 = db.tables[0];
            const Table& t2 = db.tables[1];
            std::string k1, k2;
            for (const auto& tp : kTablePairs)
                if (tp.left.name == t1.name) {
                    k1 = tp.join_left;
                    k2 = tp.join_right;
                }
            if (k1.empty()) return std::nullopt;
            const auto& c1 = pick_col(t1.columns, rng);
            const auto& c2 = pick_col(t2.columns, rng);
            std::vector<std::string> q = {"matching", k1,      "with", k2,      ",",  "list",
                                          "the",      c1.name, "and",  "the",   c2.name, "from",
                                          t1.name,    "and",   t2.name};
            std::vector<std::string> g = {kw.select, c1.name, ",", c2.name, "FROM", t1.name,
                                          kw.join,   t2.name, "ON", k1,     "=",    k2};
            if (tmpl == 9) {
                auto all_ints = int_cols(t1.columns);
                auto ints2 = int_cols(t2.columns);
                all_ints.insert(all_ints.end(), ints2.begin(), ints2.end());
                const auto& c3 = pick_col(all_ints, rng);
                const auto& cmp = kCmps[static_cast<size_t>(rng.uniform_int(0, 2))];
                std::string n = num_token(rng);
                for (const auto& tok : {std::string("with"), c3.name, cmp.word, n}) q.push_back(tok);
                for (const auto& tok : {kw.where, c3.name, cmp.token, n}) g.push_back(tok);
            }
            out.question = join_tokens(q);
            out.gold = join_tokens(g);
            return out;
        }
        case 10: {
            const auto& c1 = pick_col(t.columns, rng);
            const auto& c2 = pick_col(ints, rng);
            const auto& dir = kDirs[static_cast<size_t>(rng.uniform_int(0, 1))];
            std::string k = std::to_string(rng.uniform_int(1, 5));
            out.question = join_tokens({"show", "the", c1.name, "of", "the", "top", k, "rows", "of",
                                        t.name, "by", c2.name, dir.word});
            out.gold = join_tokens(
                {kw.select, c1.name, "FROM", t.name, "ORDER", "BY", c2.name, dir.token, kw.limit, k});
            return out;
        }
        case 11: {
            if (ints.size() < 2) return std::nullopt;
            const auto& c1 = pick_col(t.columns, rng);
            const auto& c2 = pick_col(ints, rng);
            const Column* c3 = &pick_col(ints, rng);
            while (c3->name == c2.name) c3 = &pick_col(ints, rng);
            const auto& cmp = kCmps[static_cast<size_t>(rng.uniform_int(0, 2))];
            const auto& dir = kDirs[static_cast<size_t>(rng.uniform_int(0, 1))];
            std::string n = num_token(rng);
            std::string k = std::to_string(rng.uniform_int(1, 5));
            out.question = join_tokens({"show", "the", c1.name, "of", "the", "top", k, "rows", "of",
                                        t.name, "with", c2.name, cmp.word, n, "by", c3->name, dir.word});
            out.gold = join_tokens({kw.select, c1.name, "FROM", t.name, kw.where, c2.name, cmp.token, n,
                                    "ORDER", "BY", c3->name, dir.token, kw.limit, k});
            return out;
        }
        default:
            return std::nullopt;
    }
}

struct GraphSurface {
    bool pattern;  // grapha writes patterns, graphb writes traversals
};

std::vector<std::string> graph_query_tokens(int dialect, bool hop, const std::string& src_label,
                                            const std::string& edge_type, const std::string& dst_label,
                                            const std::vector<std::string>& cond_tokens,
                                            const std::vector<std::string>& ret_tokens,
                                            const std::vector<std::string>& tail_tokens) {
    std::vector<std::string> g;
    if (dialect == kGraphA) {
        g = {"MATCH", "(", src_label, ")"};
        if (hop) {
            for (const auto& tok :
                 {std::string("-"), std::string("["), edge_type, std::string("]"), std::string("->"),
                  std::string("("), dst_label, std::string(")")})
                g.push_back(tok);
        }
        if (!cond_tokens.empty()) {
            g.push_back("WHERE");
            g.insert(g.end(), cond_tokens.begin(), cond_tokens.end());
        }
        g.push_back("RETURN");
    } else {
        if (hop) {
            g = {"WALK", edge_type, "SOURCE", src_label};
        } else {
            g = {"SCAN", src_label};
        }
        if (!cond_tokens.empty()) {
            g.push_back("HAVING");
            g.insert(g.end(), cond_tokens.begin(), cond_tokens.end());
        }
        g.push_back("EMIT");
    }
    g.insert(g.end(), ret_tokens.begin(), ret_tokens.end());
    g.insert(g.end(), tail_tokens.begin(), tail_tokens.end());
    return g;
}

std::string node_str_value(const ToyDatabase& db, const std::string& label, const std::string& prop,
                           Rng& rng) {
    std::vector<std::string> candidates;
    for (const auto& n : db.nodes)
        if (n.label == label) candidates.push_back(std::get<std::string>(n.props.at(prop)));
    if (!candidates.empty() && rng.uniform() < 0.8)
        return candidates[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(candidates.size()) - 1))];
    const Pool pools[3] = {Pool::person, Pool::item, Pool::city};
    return std::get<std::string>(draw_value(pools[rng.uniform_int(0, 2)], rng, 0));
}

std::optional<Instantiation> instantiate_graph(int tmpl, int dialect, const ToyDatabase& db, Rng& rng) {
    if (db.edge_types.empty()) return std::nullopt;
    const EdgeType& et = db.edge_types[0];
    std::vector<std::string> labels;
    for (const auto& [lbl, _] : db.label_props) labels.push_back(lbl);
    const std::string scan_label = labels[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(labels.size()) - 1))];
    const auto& scan_props = db.label_props.at(scan_label);
    auto ints = int_cols(scan_props);
    auto strs = str_cols(scan_props);
    const auto& src_props = db.label_props.at(et.src_label);
    const auto& dst_props = db.label_props.at(et.dst_label);
    auto src_strs = str_cols(src_props);
    auto src_ints = int_cols(src_props);

    const std::string limit_kw = dialect == kGraphA ? "CAP" : "FIRST";
    Instantiation out;
    switch (tmpl) {
        case 0: {
            const auto& p = pick_col(scan_props, rng);
            out.question = join_tokens({"list", "the", p.name, "of", "every", scan_label, "node"});
            out.gold = join_tokens(graph_query_tokens(dialect, false, scan_label, "", "", {}, {p.name}, {}));
            return out;
        }
        case 1: {
            if (scan_props.size() < 2) return std::nullopt;
            const auto& p1 = pick_col(scan_props, rng);
            const Column* p2 = &pick_col(scan_props, rng);
            while (p2->name == p1.name) p2 = &pick_col(scan_props, rng);
            out.question = join_tokens(
                {"list", "the", p1.name, "and", "the", p2->name, "of", "every", scan_label, "node"});
            out.gold = join_tokens(
                graph_query_tokens(dialect, false, scan_label, "", "", {}, {p1.name, ",", p2->name}, {}));
            return out;
        }
        case 2: {
            if (ints.empty()) return std::nullopt;
            const auto& p1 = pick_col(scan_props, rng);
            const auto& p2 = pick_col(ints, rng);
            const auto& cmp = kCmps[static_cast<size_t>(rng.uniform_int(0, 2))];
            std::string n = num_token(rng);
            out.question = join_tokens(
                {"list", "the", p1.name, "of", scan_label, "nodes", "with", p2.name, cmp.word, n});
            out.gold = join_tokens(graph_query_tokens(dialect, false, scan_label, "", "",
                                                      {p2.name, cmp.token, n}, {p1.name}, {}));
            return out;
        }
        case 3: {
            if (strs.empty()) return std::nullopt;
            const auto& p1 = pick_col(scan_props, rng);
            const auto& p2 = pick_col(strs, rng);
            std::string s = node_str_value(db, scan_label, p2.name, rng);
            out.question = join_tokens(
                {"list", "the", p1.name, "of", scan_label, "nodes", "with", p2.name, "equal", "to", s});
            out.gold = join_tokens(graph_query_tokens(dialect, false, scan_label, "", "",
                                                      {p2.name, "=", "'", s, "'"}, {p1.name}, {}));
            return out;
        }
        case 4: {
            if (ints.empty() || strs.empty()) return std::nullopt;
            const auto& p1 = pick_col(scan_props, rng);
            const auto& p2 = pick_col(ints, rng);
            const auto& p3 = pick_col(strs, rng);
            const auto& cmp = kCmps[static_cast<size_t>(rng.uniform_int(0, 2))];
            std::string n = num_token(rng);
            std::string s = node_str_value(db, scan_label, p3.name, rng);
            out.question =
                join_tokens({"list", "the", p1.name, "of", scan_label, "nodes", "with", p2.name, cmp.word,
                             n, "and", p3.name, "equal", "to", s});
            out.gold = join_tokens(graph_query_tokens(
                dialect, false, scan_label, "", "", {p2.name, cmp.token, n, "AND", p3.name, "=", "'", s, "'"},
                {p1.name}, {}));
            return out;
        }
        case 5: {
            if (ints.empty()) return std::nullopt;
            const auto& p = pick_col(ints, rng);
            const auto& cmp = kCmps[static_cast<size_t>(rng.uniform_int(0, 2))];
            std::string n = num_token(rng);
            out.question = join_tokens({"how", "many", scan_label, "nodes", "have", p.name, cmp.word, n});
            out.gold = join_tokens(graph_query_tokens(dialect, false, scan_label, "", "",
                                                      {p.name, cmp.token, n},
                                                      {"COUNT", "(", "*", ")"}, {}));
            return out;
        }
        case 6: {
            const auto& p = pick_col(dst_props, rng);
            out.question = join_tokens({"via", et.name, ",", "list", "the", p.name, "of", "nodes",
                                        "reached", "from", et.src_label, "nodes"});
            out.gold = join_tokens(
                graph_query_tokens(dialect, true, et.src_label, et.name, et.dst_label, {}, {p.name}, {}));
            return out;
        }
        case 7: {
            if (src_strs.empty()) return std::nullopt;
            const auto& p = pick_col(dst_props, rng);
            const auto& ps = pick_col(src_strs, rng);
            std::string s = node_str_value(db, et.src_label, ps.name, rng);
            out.question = join_tokens({"via", et.name, ",", "list", "the", p.name, "of", "nodes",
                                        "reached", "from", et.src_label, "nodes", "with", ps.name,
                                        "equal", "to", s});
            out.gold = join_tokens(graph_query_tokens(dialect, true, et.src_label, et.name, et.dst_label,
                                                      {ps.name, "=", "'", s, "'"}, {p.name}, {}));
            return out;
        }
        case 8: {
            if (src_strs.empty()) return std::nullopt;
            const auto& ps = pick_col(src_strs, rng);
            std::string s = node_str_value(db, et.src_label, ps.name, rng);
            out.question = join_tokens({"via", et.name, ",", "how", "many", "nodes", "are", "reached",
                                        "from", et.src_label, "nodes", "with", ps.name, "equal", "to", s});
            out.gold = join_tokens(graph_query_tokens(dialect, true, et.src_label, et.name, et.dst_label,
                                                      {ps.name, "=", "'", s, "'"},
                                                      {"COUNT", "(", "*", ")"}, {}));
            return out;
        }
        case 9: {
            const auto& p1 = pick_col(dst_props, rng);
            auto dst_ints = int_cols(dst_props);
            if (dst_ints.empty()) return std::nullopt;
            const auto& p2 = pick_col(dst_ints, rng);
            const auto& dir = kDirs[static_cast<size_t>(rng.uniform_int(0, 1))];
            std::string k = std::to_string(rng.uniform_int(1, 5));
            out.question = join_tokens({"via", et.name, ",", "list", "the", "top", k, p1.name, "of",
                                        "nodes", "reached", "from", et.src_label, "nodes", "by", p2.name,
                                        dir.word});
            out.gold = join_tokens(graph_query_tokens(dialect, true, et.src_label, et.name, et.dst_label,
                                                      {}, {p1.name},
                                                      {"ORDER", "BY", p2.name, dir.token, limit_kw, k}));
            return out;
        }
        case 10: {
            if (ints.empty()) return std::nullopt;
            const auto& p1 = pick_col(scan_props, rng);
            const auto& p2 = pick_col(ints, rng);
            const auto& dir = kDirs[static_cast<size_t>(rng.uniform_int(0, 1))];
            std::string k = std::to_string(rng.uniform_int(1, 5));
            out.question = join_tokens({"list", "the", "top", k, p1.name, "of", scan_label, "nodes",
                                        "by", p2.name, dir.word});
            out.gold = join_tokens(graph_query_tokens(dialect, false, scan_label, "", "", {}, {p1.name},
                                                      {"ORDER", "BY", p2.name, dir.token, limit_kw, k}));
            return out;
        }
        case 11: {
            if (src_ints.empty()) return std::nullopt;
            const auto& p = pick_col(dst_props, rng);
            const auto& pn = pick_col(src_ints, rng);
            const auto& cmp = kCmps[static_cast<size_t>(rng.uniform_int(0, 2))];
            std::string n = num_token(rng);
            out.question = join_tokens({"via", et.name, ",", "list", "the", p.name, "of", "nodes",
                                        "reached", "from", et.src_label, "nodes", "with", pn.name,
                                        cmp.word, n});
            out.gold = join_tokens(graph_query_tokens(dialect, true, et.src_label, et.name, et.dst_label,
                                                      {pn.name, cmp.token, n}, {p.name}, {}));
            return out;
        }
        default:
            return std::nullopt;
    }
}

}  // namespace

std::string serialize_schema(const ToyDatabase& db, bool sql_family) {
    std::vector<std::string> lines;
    if (sql_family) {
        for (const auto& t : db.tables) {
            std::vector<std::string> toks = {"TABLE", t.name, "("};
            for (size_t i = 0; i < t.columns.size(); ++i) {
                if (i) toks.push_back(",");
                toks.push_back(t.columns[i].name);
                toks.push_back(":");
                toks.push_back(t.columns[i].is_int ? "int" : "str");
            }
            toks.push_back(")");
            lines.push_back(join_tokens(toks));
        }
    } else {
        for (const auto& [label, props] : db.label_props) {
            std::vector<std::string> toks = {"NODE", label, "("};
            for (size_t i = 0; i < props.size(); ++i) {
                if (i) toks.push_back(",");
                toks.push_back(props[i].name);
                toks.push_back(":");
                toks.push_back(props[i].is_int ? "int" : "str");
            }
            toks.push_back(")");
            lines.push_back(join_tokens(toks));
        }
        for (const auto& et : db.edge_types)
            lines.push_back(join_tokens({"EDGE", et.name, "(", et.src_label, "->", et.dst_label, ")"}));
    }
    std::string out;
    for (size_t i = 0; i < lines.size(); ++i) {
        if (i) out += '\n';
        out += lines[i];
    }
    return out;
}

std::string build_prompt(const std::string& question, const std::string& schema, int dialect) {
    return "dialect : " + dialect_name(dialect) + "\nschema :\n" + schema + "\nquestion : " + question +
           "\nanswer :";
}

std::string build_prompt(const DialectSample& sample) {
    return build_prompt(sample.question, sample.schema, sample.dialect);
}

Corpus generate_corpus(uint64_t seed, const CorpusCounts& counts, int n_databases) {
    Rng master(seed);
    Rng db_rng = master.fork("databases");
    Corpus corpus;
    for (int i = 0; i < n_databases; ++i) corpus.databases.push_back(make_database(i, db_rng));

    for (const auto& [dialect, want] : counts) {
        auto [n_train, n_test] = want;
        if (n_train < 0 || n_test < 0) throw std::invalid_argument("generate_corpus: negative counts");
        const int total = n_train + n_test;
        if (total == 0) continue;
        Rng rng = master.fork("samples-" + dialect_name(dialect));
        std::set<std::string> seen;
        std::vector<DialectSample> samples;
        const bool sql = is_sql_dialect(dialect);
        int64_t attempts = 0;
        const int64_t max_attempts = 400ll * total + 10000;
        while (static_cast<int>(samples.size()) < total) {
            if (++attempts > max_attempts)
                throw std::runtime_error("generate_corpus: template space exhausted for " +
                                         dialect_name(dialect));
            const ToyDatabase& db =
                corpus.databases[static_cast<size_t>(rng.uniform_int(0, n_databases - 1))];
            int tmpl = static_cast<int>(rng.uniform_int(0, 11));
            auto inst = sql ? instantiate_sql(tmpl, dialect, db, rng)
                            : instantiate_graph(tmpl, dialect, db, rng);
            if (!inst) continue;
            std::string key = db.name + "\x1f" + inst->question;
            if (!seen.insert(key).second) continue;
            ExecOutcome check = execute(dialect, inst->gold, db);
            if (!check.ok())
                throw std::logic_error("generated gold query failed on " + db.name + ": " + inst->gold +
                                       " (" + check.message + ")");
            DialectSample s;
            s.question = inst->question;
            s.schema = serialize_schema(db, sql);
            s.dialect = dialect;
            s.gold_query = inst->gold;
            s.db_name = db.name;
            s.prompt = build_prompt(s.question, s.schema, dialect);
            samples.push_back(std::move(s));
        }
        for (int i = 0; i < total; ++i) {
            if (i < n_train)
                corpus.train.push_back(samples[static_cast<size_t>(i)]);
            else
                corpus.test.push_back(samples[static_cast<size_t>(i)]);
        }
    }
    return corpus;
}

std::vector<std::string> pretrain_lines(const Corpus& corpus) {
    // contiguous schema + question + query blocks, without the prompt markers:
    // the base sees related content adjacently but never the task format
    std::vector<std::string> blocks;
    for (const auto& s : corpus.train)
        blocks.push_back(s.schema + "\n" + s.question + "\n" + s.gold_query);
    return blocks;
}

// ------------------------------ tokenizer ------------------------------

namespace {

std::vector<std::string> text_tokens(const std::string& text) {
    std::vector<std::string> toks;
    std::string cur;
    for (char ch : text) {
        if (ch == ' ' || ch == '\n') {
            if (!cur.empty()) {
                toks.push_back(cur);
                cur.clear();
            }
            if (ch == '\n') toks.push_back("\n");
        } else {
            cur += ch;
        }
    }
    if (!cur.empty()) toks.push_back(cur);
    return toks;
}

const std::vector<std::string> kSpecials = {"<pad>", "<bos>", "<eos>", "<unk>"};

}  // namespace

int64_t Tokenizer::id_of(const std::string& tok) const {
    auto it = tok_to_id.find(tok);
    return it == tok_to_id.end() ? kUnk : it->second;
}

std::vector<int64_t> Tokenizer::encode(const std::string& text) const {
    std::vector<int64_t> ids;
    for (const auto& tok : text_tokens(text)) ids.push_back(id_of(tok));
    return ids;
}

std::string Tokenizer::decode(const std::vector<int64_t>& ids) const {
    std::string out;
    bool at_line_start = true;
    for (int64_t id : ids) {
        if (id < 0 || id >= vocab_size()) throw std::out_of_range("decode: id out of range");
        const std::string& tok = id_to_tok[static_cast<size_t>(id)];
        if (tok == "\n") {
            out += '\n';
            at_line_start = true;
            continue;
        }
        if (!at_line_start) out += ' ';
        out += tok;
        at_line_start = false;
    }
    return out;
}

Tokenizer build_tokenizer(const Corpus& corpus) {
    if (corpus.train.empty() && corpus.test.empty())
        throw std::invalid_argument("build_tokenizer: empty corpus");
    std::set<std::string> words;
    words.insert("\n");
    for (int d = 0; d < kNumDialects; ++d)
        for (const auto& kw : dialect_keywords(d)) words.insert(kw);
    auto absorb = [&](const std::vector<DialectSample>& samples) {
        for (const auto& s : samples) {
            for (const auto& t : text_tokens(s.prompt)) words.insert(t);
            for (const auto& t : text_tokens(s.gold_query)) words.insert(t);
        }
    };
    absorb(corpus.train);
    absorb(corpus.test);

    Tokenizer tok;
    tok.id_to_tok = kSpecials;
    for (const auto& w : words) tok.id_to_tok.push_back(w);
    for (size_t i = 0; i < tok.id_to_tok.size(); ++i)
        tok.tok_to_id[tok.id_to_tok[i]] = static_cast<int64_t>(i);
    return tok;
}

// ------------------------------ persistence ------------------------------

namespace {

ordered_json value_to_json(const Value& v) {
    if (std::holds_alternative<int64_t>(v)) return std::get<int64_t>(v);
    return std::get<std::string>(v);
}

Value value_from_json(const ordered_json& j) {
    if (j.is_number_integer()) return Value(j.get<int64_t>());
    return Value(j.get<std::string>());
}

ordered_json db_to_json(const ToyDatabase& db) {
    ordered_json j;
    j["name"] = db.name;
    j["tables"] = ordered_json::array();
    for (const auto& t : db.tables) {
        ordered_json jt;
        jt["name"] = t.name;
        jt["columns"] = ordered_json::array();
        for (const auto& c : t.columns) jt["columns"].push_back({{"name", c.name}, {"int", c.is_int}});
        jt["rows"] = ordered_json::array();
        for (const auto& r : t.rows) {
            ordered_json jr = ordered_json::array();
            for (const auto& v : r) jr.push_back(value_to_json(v));
            jt["rows"].push_back(jr);
        }
        j["tables"].push_back(jt);
    }
    j["labels"] = ordered_json::array();
    for (const auto& [label, props] : db.label_props) {
        ordered_json jl;
        jl["name"] = label;
        jl["props"] = ordered_json::array();
        for (const auto& p : props) jl["props"].push_back({{"name", p.name}, {"int", p.is_int}});
        j["labels"].push_back(jl);
    }
    j["nodes"] = ordered_json::array();
    for (const auto& n : db.nodes) {
        ordered_json jn;
        jn["id"] = n.id;
        jn["label"] = n.label;
        jn["props"] = ordered_json::object();
        for (const auto& [k, v] : n.props) jn["props"][k] = value_to_json(v);
        j["nodes"].push_back(jn);
    }
    j["edge_types"] = ordered_json::array();
    for (const auto& e : db.edge_types)
        j["edge_types"].push_back({{"name", e.name}, {"src", e.src_label}, {"dst", e.dst_label}});
    j["edges"] = ordered_json::array();
    for (const auto& e : db.edges) j["edges"].push_back({{"type", e.type}, {"src", e.src}, {"dst", e.dst}});
    return j;
}

ToyDatabase db_from_json(const ordered_json& j) {
    ToyDatabase db;
    db.name = j.at("name").get<std::string>();
    for (const auto& jt : j.at("tables")) {
        Table t;
        t.name = jt.at("name").get<std::string>();
        for (const auto& jc : jt.at("columns"))
            t.columns.push_back({jc.at("name").get<std::string>(), jc.at("int").get<bool>()});
        for (const auto& jr : jt.at("rows")) {
            std::vector<Value> row;
            for (const auto& jv : jr) row.push_back(value_from_json(jv));
            t.rows.push_back(std::move(row));
        }
        db.tables.push_back(std::move(t));
    }
    for (const auto& jl : j.at("labels")) {
        std::vector<Column> props;
        for (const auto& jp : jl.at("props"))
            props.push_back({jp.at("name").get<std::string>(), jp.at("int").get<bool>()});
        db.label_props[jl.at("name").get<std::string>()] = std::move(props);
    }
    for (const auto& jn : j.at("nodes")) {
        GraphNodeRec n;
        n.id = jn.at("id").get<int64_t>();
        n.label = jn.at("label").get<std::string>();
        for (const auto& [k, v] : jn.at("props").items()) n.props[k] = value_from_json(v);
        db.nodes.push_back(std::move(n));
    }
    for (const auto& je : j.at("edge_types"))
        db.edge_types.push_back({je.at("name").get<std::string>(), je.at("src").get<std::string>(),
                                 je.at("dst").get<std::string>()});
    for (const auto& je : j.at("edges"))
        db.edges.push_back({je.at("type").get<std::string>(), je.at("src").get<int64_t>(),
                            je.at("dst").get<int64_t>()});
    return db;
}

ordered_json sample_to_json(const DialectSample& s) {
    ordered_json j;
    j["question"] = s.question;
    j["schema"] = s.schema;
    j["dialect"] = dialect_name(s.dialect);
    j["gold_query"] = s.gold_query;
    j["prompt"] = s.prompt;
    j["db"] = s.db_name;
    return j;
}

DialectSample sample_from_json(const ordered_json& j) {
    DialectSample s;
    s.question = j.at("question").get<std::string>();
    s.schema = j.at("schema").get<std::string>();
    s.dialect = dialect_from_name(j.at("dialect").get<std::string>());
    if (s.dialect < 0) throw std::runtime_error("unknown dialect in corpus file");
    s.gold_query = j.at("gold_query").get<std::string>();
    s.prompt = j.at("prompt").get<std::string>();
    s.db_name = j.at("db").get<std::string>();
    return s;
}

void write_jsonl(const std::vector<DialectSample>& samples, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path);
    for (const auto& s : samples) out << sample_to_json(s).dump() << '\n';
}

std::vector<DialectSample> read_jsonl(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + path);
    std::vector<DialectSample> samples;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        samples.push_back(sample_from_json(ordered_json::parse(line)));
    }
    return samples;
}

}  // namespace

void save_corpus(const Corpus& corpus, const std::string& dir) {
    std::filesystem::create_directories(dir);
    write_jsonl(corpus.train, dir + "/train.jsonl");
    write_jsonl(corpus.test, dir + "/test.jsonl");
    ordered_json dbs = ordered_json::array();
    for (const auto& db : corpus.databases) dbs.push_back(db_to_json(db));
    std::ofstream out(dir + "/databases.json", std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + dir + "/databases.json");
    out << dbs.dump(2) << '\n';
}

Corpus load_corpus(const std::string& dir) {
    Corpus corpus;
    corpus.train = read_jsonl(dir + "/train.jsonl");
    corpus.test = read_jsonl(dir + "/test.jsonl");
    std::ifstream in(dir + "/databases.json", std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + dir + "/databases.json");
    ordered_json dbs = ordered_json::parse(in);
    for (const auto& j : dbs) corpus.databases.push_back(db_from_json(j));
    return corpus;
}

void save_tokenizer(const Tokenizer& tok, const std::string& path) {
    ordered_json j;
    j["vocab"] = tok.id_to_tok;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << j.dump() << '\n';
}

Tokenizer load_tokenizer(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + path);
    ordered_json j = ordered_json::parse(in);
    Tokenizer tok;
    tok.id_to_tok = j.at("vocab").get<std::vector<std::string>>();
    for (size_t i = 0; i < tok.id_to_tok.size(); ++i)
        tok.tok_to_id[tok.id_to_tok[i]] = static_cast<int64_t>(i);
    return tok;
}

}  // namespace momq
