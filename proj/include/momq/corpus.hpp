#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "momq/query.hpp"
#include "momq/rng.hpp"

namespace momq {

// One training/eval record. `prompt` is the full conditioning text; the model
// is trained to continue it with `gold_query`.
struct DialectSample {
    std::string question;
    std::string schema;      // serialized schema block shown in the prompt
    int dialect = 0;
    std::string gold_query;
    std::string prompt;
    std::string db_name;     // which ToyDatabase the sample runs against
};

struct Corpus {
    std::vector<ToyDatabase> databases;
    std::vector<DialectSample> train;
    std::vector<DialectSample> test;

    const ToyDatabase& db(const std::string& name) const;
};

// train/test pair per dialect id
using CorpusCounts = std::map<int, std::pair<int, int>>;

CorpusCounts uniform_counts(int train_per_dialect, int test_per_dialect);

// Deterministic: equal seeds give byte-identical corpora. Every gold query is
// validated by execution before a sample is admitted; train/test never share
// a (db, question) instantiation.
Corpus generate_corpus(uint64_t seed, const CorpusCounts& counts, int n_databases = 10);

// schema text for one family: TABLE lines for SQL dialects, NODE/EDGE lines
// for graph dialects
std::string serialize_schema(const ToyDatabase& db, bool sql_family);

std::string build_prompt(const std::string& question, const std::string& schema, int dialect);
std::string build_prompt(const DialectSample& sample);

// question + schema + gold-query lines of the train split, for base pretraining
std::vector<std::string> pretrain_lines(const Corpus& corpus);

// ---------------------------------------------------------------------------
// Tokenizer: word-and-symbol level. '\n' is its own token; encode/decode is
// the identity on canonical corpus text (single-space separated tokens,
// newline-separated lines).
// ---------------------------------------------------------------------------

struct Tokenizer {
    std::vector<std::string> id_to_tok;
    std::unordered_map<std::string, int64_t> tok_to_id;

    static constexpr int64_t kPad = 0;
    static constexpr int64_t kBos = 1;
    static constexpr int64_t kEos = 2;
    static constexpr int64_t kUnk = 3;

    int64_t vocab_size() const { return static_cast<int64_t>(id_to_tok.size()); }
    int64_t id_of(const std::string& tok) const;  // kUnk when unknown
    std::vector<int64_t> encode(const std::string& text) const;
    std::string decode(const std::vector<int64_t>& ids) const;
};

// Specials, then every dialect keyword, then every word seen in the corpus;
// id order is lexicographic for stability.
Tokenizer build_tokenizer(const Corpus& corpus);

// persistence (JSONL samples, one JSON db file, tokenizer vocab)
void save_corpus(const Corpus& corpus, const std::string& dir);
Corpus load_corpus(const std::string& dir);
void save_tokenizer(const Tokenizer& tok, const std::string& path);
Tokenizer load_tokenizer(const std::string& path);

}  // namespace momq
