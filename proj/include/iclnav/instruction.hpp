#pragma once

#include <cctype>
#include <cstdint>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "iclnav/errors.hpp"
#include "iclnav/nn.hpp"
#include "iclnav/rng.hpp"
#include "iclnav/tensor.hpp"

namespace iclnav {

enum class Slot { None, TargetObject, TargetReceptacle };

/// One verb phrase of a template. `pattern` is lowercase text with {object}
/// and {receptacle} placeholders; `introduces` marks the clause that first
/// binds a slot (later clauses may reference an already-bound placeholder).
struct TemplateClause {
    std::string pattern;
    Slot introduces = Slot::None;
};

struct InstructionTemplate {
    std::string id;
    std::vector<TemplateClause> clauses;

    bool needs_receptacle() const {
        for (const auto& c : clauses)
            if (c.introduces == Slot::TargetReceptacle) return true;
        return false;
    }
};

/// A sampled instruction with its stage decomposition. stages[k] extends
/// stages[k-1] by one clause; the last stage is the full instruction.
struct InstructionTask {
    std::string full_text;
    std::vector<std::string> stages;
    std::string target_object;
    std::optional<std::string> target_receptacle;
    int stage_count = 0;
};

struct Vocabulary {
    std::vector<std::string> by_index;  // position 0 is the OOV pseudo-token
    std::unordered_map<std::string, int> index;
    std::set<std::string> stop_words;
    int embedding_dim = 50;
    int oov_index = 0;

    int size() const { return static_cast<int>(by_index.size()); }
};

struct EncodedInstruction {
    std::vector<int> token_indices;
    int source_stage = 0;
};

inline const char* kOovToken = "<oov>";

/// Lowercase and split into maximal alphanumeric runs. Commas, periods and
/// all other punctuation act as separators and never become tokens.
inline std::vector<std::string> tokenize(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : text) {
        unsigned char u = static_cast<unsigned char>(ch);
        if (std::isalnum(u)) {
            cur.push_back(static_cast<char>(std::tolower(u)));
        } else if (!cur.empty()) {
            out.push_back(cur);
            cur.clear();
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

namespace detail {

inline std::string lower(const std::string& s) {
    std::string out = s;
    for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

inline std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

// Split a clause pattern into alternating literal and placeholder pieces.
struct PatternPiece {
    bool is_slot = false;
    std::string text;  // literal text, or the placeholder name
};

inline std::vector<PatternPiece> split_pattern(const std::string& pattern) {
    std::vector<PatternPiece> pieces;
    size_t pos = 0;
    while (pos < pattern.size()) {
        size_t open = pattern.find('{', pos);
        if (open == std::string::npos) {
            pieces.push_back({false, pattern.substr(pos)});
            break;
        }
        if (open > pos) pieces.push_back({false, pattern.substr(pos, open - pos)});
        size_t close = pattern.find('}', open);
        if (close == std::string::npos)
            throw ParseError("unclosed placeholder in pattern: " + pattern);
        std::string name = pattern.substr(open + 1, close - open - 1);
        if (name != "object" && name != "receptacle")
            throw ParseError("unknown placeholder {" + name + "} in pattern: " + pattern);
        pieces.push_back({true, name});
        pos = close + 1;
    }
    return pieces;
}

inline std::string substitute(const std::string& pattern,
                              const std::map<std::string, std::string>& bindings) {
    std::string out;
    for (const auto& piece : split_pattern(pattern)) {
        if (!piece.is_slot) {
            out += piece.text;
        } else {
            auto it = bindings.find(piece.text);
            if (it == bindings.end())
                throw ValidationError("unbound placeholder {" + piece.text + "}");
            out += it->second;
        }
    }
    return out;
}

// Match one comma-separated part against a clause pattern, unifying slot
// bindings. Case-insensitive on literals; captures are non-empty.
inline bool match_clause(const std::string& part, const std::string& pattern,
                         std::map<std::string, std::string>& bindings) {
    std::string text = lower(trim(part));
    auto pieces = split_pattern(lower(pattern));
    size_t pos = 0;
    for (size_t i = 0; i < pieces.size(); ++i) {
        const auto& piece = pieces[i];
        if (!piece.is_slot) {
            if (text.compare(pos, piece.text.size(), piece.text) != 0) return false;
            pos += piece.text.size();
            continue;
        }
        size_t end;
        if (i + 1 < pieces.size()) {
            // capture up to the next literal
            end = text.find(pieces[i + 1].text, pos);
            if (end == std::string::npos) return false;
        } else {
            end = text.size();
        }
        std::string captured = trim(text.substr(pos, end - pos));
        if (captured.empty()) return false;
        auto it = bindings.find(piece.text);
        if (it == bindings.end())
            bindings.emplace(piece.text, captured);
        else if (it->second != captured)
            return false;
        pos = end;
    }
    return pos == text.size();
}

inline std::vector<std::string> split_on_commas(const std::string& text) {
    std::vector<std::string> parts;
    std::string cur;
    for (char c : text) {
        if (c == ',') {
            parts.push_back(trim(cur));
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    parts.push_back(trim(cur));
    return parts;
}

inline std::string strip_trailing_period(const std::string& s) {
    std::string t = trim(s);
    while (!t.empty() && (t.back() == '.' || t.back() == '!')) t.pop_back();
    return trim(t);
}

}  // namespace detail

inline void validate_template(const InstructionTemplate& t) {
    if (t.clauses.empty()) throw ValidationError("template " + t.id + " has no clauses");
    int objects = 0, receptacles = 0;
    for (const auto& c : t.clauses) {
        if (c.introduces == Slot::TargetObject) ++objects;
        if (c.introduces == Slot::TargetReceptacle) ++receptacles;
    }
    if (objects != 1)
        throw ValidationError("template " + t.id + " must introduce exactly one object slot");
    if (receptacles > 1)
        throw ValidationError("template " + t.id + " may introduce at most one receptacle slot");
}

/// Line-oriented template file:
///   template <id>
///   clause <pattern with {object} / {receptacle}>
///   ...
///   end
/// Blank lines and lines starting with # are skipped.
inline std::vector<InstructionTemplate> parse_templates(std::istream& in) {
    std::vector<InstructionTemplate> out;
    std::optional<InstructionTemplate> cur;
    bool saw_object = false, saw_receptacle = false;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string t = detail::trim(line);
        if (t.empty() || t[0] == '#') continue;
        std::istringstream is(t);
        std::string word;
        is >> word;
        if (word == "template") {
            if (cur) throw ParseError("line " + std::to_string(lineno) + ": nested template");
            std::string id;
            is >> id;
            if (id.empty()) throw ParseError("line " + std::to_string(lineno) + ": template needs an id");
            cur = InstructionTemplate{id, {}};
            saw_object = saw_receptacle = false;
        } else if (word == "clause") {
            if (!cur) throw ParseError("line " + std::to_string(lineno) + ": clause outside template");
            std::string pattern = detail::trim(t.substr(6));
            if (pattern.empty())
                throw ParseError("line " + std::to_string(lineno) + ": empty clause");
            TemplateClause clause;
            clause.pattern = detail::lower(pattern);
            for (const auto& piece : detail::split_pattern(clause.pattern)) {
                if (!piece.is_slot) continue;
                if (piece.text == "object" && !saw_object) {
                    clause.introduces = Slot::TargetObject;
                    saw_object = true;
                } else if (piece.text == "receptacle" && !saw_receptacle) {
                    clause.introduces = Slot::TargetReceptacle;
                    saw_receptacle = true;
                }
            }
            cur->clauses.push_back(std::move(clause));
        } else if (word == "end") {
            if (!cur) throw ParseError("line " + std::to_string(lineno) + ": stray end");
            validate_template(*cur);
            out.push_back(std::move(*cur));
            cur.reset();
        } else {
            throw ParseError("line " + std::to_string(lineno) + ": unknown directive '" + word + "'");
        }
    }
    if (cur) throw ParseError("unterminated template " + cur->id);
    return out;
}

/// Canonical stage rendering: the first k clauses joined with ", ", first
/// character capitalized, no trailing period.
inline std::string render_stage(const InstructionTemplate& t,
                                const std::map<std::string, std::string>& bindings, int k) {
    if (k < 1 || k > static_cast<int>(t.clauses.size()))
        throw IndexOutOfRange("render_stage: stage " + std::to_string(k));
    std::string out;
    for (int i = 0; i < k; ++i) {
        if (i) out += ", ";
        out += detail::substitute(t.clauses[i].pattern, bindings);
    }
    if (!out.empty()) out[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(out[0])));
    return out;
}

/// Match full_text against the template, returning the slot bindings.
inline std::map<std::string, std::string> match_template(const std::string& full_text,
                                                         const InstructionTemplate& t) {
    auto parts = detail::split_on_commas(detail::strip_trailing_period(full_text));
    if (parts.size() != t.clauses.size())
        throw TemplateMismatch("expected " + std::to_string(t.clauses.size()) + " clauses, got " +
                               std::to_string(parts.size()));
    std::map<std::string, std::string> bindings;
    for (size_t i = 0; i < parts.size(); ++i) {
        if (!detail::match_clause(parts[i], t.clauses[i].pattern, bindings))
            throw TemplateMismatch("clause " + std::to_string(i + 1) + " '" + parts[i] +
                                   "' does not instantiate '" + t.clauses[i].pattern + "'");
    }
    return bindings;
}

/// Clause-prefix stage texts in canonical rendering.
inline std::vector<std::string> decompose(const std::string& full_text,
                                          const InstructionTemplate& t) {
    auto bindings = match_template(full_text, t);
    std::vector<std::string> stages;
    for (int k = 1; k <= static_cast<int>(t.clauses.size()); ++k)
        stages.push_back(render_stage(t, bindings, k));
    return stages;
}

/// Deterministic task sampling: template, then object, then receptacle are
/// drawn from the seed in that pinned order.
inline InstructionTask sample_task(const std::vector<InstructionTemplate>& templates,
                                   const std::vector<std::string>& object_pool,
                                   const std::vector<std::string>& receptacle_pool, uint64_t seed) {
    if (templates.empty()) throw ValidationError("sample_task: no templates");
    if (object_pool.empty()) throw ValidationError("sample_task: empty object pool");
    Rng rng(seed);
    const InstructionTemplate& t = templates[rng.uniform_below(static_cast<int>(templates.size()))];
    std::map<std::string, std::string> bindings;
    bindings["object"] = detail::lower(object_pool[rng.uniform_below(static_cast<int>(object_pool.size()))]);
    if (t.needs_receptacle()) {
        if (receptacle_pool.empty())
            throw UnsatisfiableTemplate("template " + t.id + " needs a receptacle, pool is empty");
        bindings["receptacle"] =
            detail::lower(receptacle_pool[rng.uniform_below(static_cast<int>(receptacle_pool.size()))]);
    }
    InstructionTask task;
    task.stage_count = static_cast<int>(t.clauses.size());
    for (int k = 1; k <= task.stage_count; ++k) task.stages.push_back(render_stage(t, bindings, k));
    task.full_text = task.stages.back();
    task.target_object = bindings["object"];
    if (t.needs_receptacle()) task.target_receptacle = bindings["receptacle"];
    return task;
}

/// All tokens producible by the templates and pools, minus stop words,
/// sorted, with index 0 reserved for the OOV pseudo-token.
inline Vocabulary build_vocabulary(const std::vector<InstructionTemplate>& templates,
                                   const std::vector<std::string>& object_pool,
                                   const std::vector<std::string>& receptacle_pool,
                                   std::set<std::string> stop_words, int embedding_dim = 50) {
    std::set<std::string> tokens;
    auto add_text = [&](const std::string& text) {
        for (const auto& tok : tokenize(text))
            if (!stop_words.count(tok)) tokens.insert(tok);
    };
    for (const auto& t : templates)
        for (const auto& c : t.clauses) {
            std::string literals;
            for (const auto& piece : detail::split_pattern(c.pattern))
                if (!piece.is_slot) literals += piece.text + " ";
            add_text(literals);
        }
    for (const auto& o : object_pool) add_text(o);
    for (const auto& r : receptacle_pool) add_text(r);

    Vocabulary v;
    v.stop_words = std::move(stop_words);
    v.embedding_dim = embedding_dim;
    v.by_index.push_back(kOovToken);
    for (const auto& tok : tokens) v.by_index.push_back(tok);
    for (int i = 0; i < v.size(); ++i) v.index[v.by_index[i]] = i;
    return v;
}

inline std::set<std::string> parse_stop_words(std::istream& in) {
    std::set<std::string> out;
    std::string line;
    while (std::getline(in, line)) {
        std::string t = detail::trim(line);
        if (t.empty() || t[0] == '#') continue;
        out.insert(detail::lower(t));
    }
    return out;
}

/// Surviving token strings after lowercasing, splitting and stop-word
/// filtering; preprocess maps exactly these to indices.
inline std::vector<std::string> filtered_tokens(const std::string& text, const Vocabulary& v) {
    std::vector<std::string> out;
    for (const auto& tok : tokenize(text))
        if (!v.stop_words.count(tok)) out.push_back(tok);
    return out;
}

inline EncodedInstruction preprocess(const std::string& stage_text, const Vocabulary& v) {
    EncodedInstruction enc;
    for (const auto& tok : filtered_tokens(stage_text, v)) {
        auto it = v.index.find(tok);
        enc.token_indices.push_back(it == v.index.end() ? v.oov_index : it->second);
    }
    if (enc.token_indices.empty())
        throw EmptyAfterFiltering("preprocess: nothing left of '" + stage_text + "'");
    return enc;
}

/// Row lookup per token: a sequence of embedding vectors, one per index.
inline std::vector<Tensor> embed(const EncodedInstruction& enc, const Tensor& table) {
    std::vector<Tensor> out;
    out.reserve(enc.token_indices.size());
    for (int idx : enc.token_indices) {
        if (idx < 0 || idx >= table.rows())
            throw IndexOutOfRange("embed: token index " + std::to_string(idx) + " for table " +
                                  table.dims_str());
        Tensor row = Tensor::zeros({table.cols()});
        for (int c = 0; c < table.cols(); ++c) row[c] = table.at(idx, c);
        out.push_back(std::move(row));
    }
    return out;
}

/// Fixed pseudo-random embedding rows, each seeded from its token text so the
/// table never depends on index assignment. Frozen: stands in for pretrained
/// text vectors.
inline Parameter make_embedding_table(const Vocabulary& v, uint64_t salt = 0) {
    Parameter table;
    table.name = "text.embedding";
    table.value = Tensor::matrix(v.size(), v.embedding_dim);
    table.trainable = false;
    for (int i = 0; i < v.size(); ++i) {
        Rng rng(fnv1a64(v.by_index[i]) ^ salt);
        for (int c = 0; c < v.embedding_dim; ++c)
            table.value.at(i, c) = rng.uniform_range(-0.5, 0.5);
    }
    return table;
}

/// Loader for standard text-format vector files (one line per token:
/// `token v1 v2 ... vD`). Rows for in-vocabulary tokens are replaced; other
/// lines are ignored. Dimension mismatches are an error.
inline int load_text_vectors(std::istream& in, const Vocabulary& v, Parameter& table) {
    if (table.value.rows() != v.size() || table.value.cols() != v.embedding_dim)
        throw ShapeMismatch("load_text_vectors: table " + table.value.dims_str());
    std::string line;
    int replaced = 0;
    while (std::getline(in, line)) {
        std::string t = detail::trim(line);
        if (t.empty()) continue;
        std::istringstream is(t);
        std::string token;
        is >> token;
        auto it = v.index.find(detail::lower(token));
        if (it == v.index.end()) continue;
        std::vector<double> vals;
        double x;
        while (is >> x) vals.push_back(x);
        if (static_cast<int>(vals.size()) != v.embedding_dim)
            throw ValidationError("load_text_vectors: token '" + token + "' has " +
                                  std::to_string(vals.size()) + " values, expected " +
                                  std::to_string(v.embedding_dim));
        for (int c = 0; c < v.embedding_dim; ++c) table.value.at(it->second, c) = vals[c];
        ++replaced;
    }
    return replaced;
}

/// `token<TAB>index` lines in index order.
inline void save_vocabulary(const Vocabulary& v, std::ostream& out) {
    for (int i = 0; i < v.size(); ++i) out << v.by_index[i] << '\t' << i << '\n';
}

inline Vocabulary load_vocabulary(std::istream& in, std::set<std::string> stop_words,
                                  int embedding_dim = 50) {
    Vocabulary v;
    v.stop_words = std::move(stop_words);
    v.embedding_dim = embedding_dim;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (detail::trim(line).empty()) continue;
        size_t tab = line.find('\t');
        if (tab == std::string::npos)
            throw ParseError("vocabulary line " + std::to_string(lineno) + ": missing tab");
        std::string token = line.substr(0, tab);
        int idx;
        try {
            idx = std::stoi(line.substr(tab + 1));
        } catch (const std::exception&) {
            throw ParseError("vocabulary line " + std::to_string(lineno) + ": bad index");
        }
        if (idx != static_cast<int>(v.by_index.size()))
            throw ValidationError("vocabulary indices must be dense from 0, got " +
                                  std::to_string(idx) + " at line " + std::to_string(lineno));
        v.by_index.push_back(token);
        v.index[token] = idx;
    }
    if (v.by_index.empty() || v.by_index[0] != kOovToken)
        throw ValidationError("vocabulary must reserve index 0 for " + std::string(kOovToken));
    return v;
}

}  // namespace iclnav
