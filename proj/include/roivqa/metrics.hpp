#pragma once

#include <json.hpp>

#include <cctype>
#include <cstdint>
#include <cstdio>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "roivqa/bbox.hpp"
#include "roivqa/corpus.hpp"
#include "roivqa/error.hpp"

namespace roivqa {

struct NormalizedAnswer {
    std::vector<std::string> tokens;
    std::string raw;
};

namespace detail {

/// Decodes one UTF-8 code point starting at s[i]; advances i. Malformed
/// bytes are passed through one at a time so no input can fail.
inline char32_t next_code_point(std::string_view s, std::size_t& i) {
    const unsigned char c = static_cast<unsigned char>(s[i]);
    int extra = 0;
    char32_t cp = c;
    if (c >= 0xF0)
        extra = 3, cp = c & 0x07;
    else if (c >= 0xE0)
        extra = 2, cp = c & 0x0F;
    else if (c >= 0xC0)
        extra = 1, cp = c & 0x1F;
    if (i + extra >= s.size()) extra = 0, cp = c;
    for (int k = 0; k < extra; ++k) {
        const unsigned char cc = static_cast<unsigned char>(s[i + 1 + k]);
        if ((cc & 0xC0) != 0x80) {
            extra = k;
            break;
        }
        cp = (cp << 6) | (cc & 0x3F);
    }
    i += 1 + extra;
    return cp;
}

inline bool is_separator_code_point(char32_t cp) {
    if (cp < 0x80) return !(std::isalnum(static_cast<int>(cp)));
    switch (cp) {
        case 0x00A0:  // no-break space
        case 0x00AB:
        case 0x00BB:  // guillemets
        case 0x00B7:  // middle dot
        case 0x2010:
        case 0x2011:
        case 0x2012:
        case 0x2013:
        case 0x2014:
        case 0x2015:  // hyphens and dashes
        case 0x2018:
        case 0x2019:
        case 0x201C:
        case 0x201D:  // curly quotes
        case 0x2022:  // bullet
        case 0x2026:  // ellipsis
            return true;
        default:
            return false;
    }
}

inline void append_code_point(std::string& out, char32_t cp) {
    if (cp < 0x80) {
        out.push_back(static_cast<char>(cp));
    } else if (cp < 0x800) {
        out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else if (cp < 0x10000) {
        out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else {
        out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    }
}

}  // namespace detail

/// Lowercases ASCII letters, turns punctuation and whitespace into token
/// boundaries, and drops leading articles. Non-ASCII letters pass through
/// unchanged; the common typographic punctuation range becomes a boundary.
inline NormalizedAnswer normalize(std::string_view s) {
    NormalizedAnswer out;
    out.raw = std::string(s);

    std::vector<std::string> tokens;
    std::string cur;
    std::size_t i = 0;
    while (i < s.size()) {
        const char32_t cp = detail::next_code_point(s, i);
        if (detail::is_separator_code_point(cp)) {
            if (!cur.empty()) {
                tokens.push_back(cur);
                cur.clear();
            }
        } else if (cp < 0x80) {
            cur.push_back(static_cast<char>(
                std::tolower(static_cast<int>(cp))));
        } else {
            detail::append_code_point(cur, cp);
        }
    }
    if (!cur.empty()) tokens.push_back(cur);

    std::size_t start = 0;
    while (start < tokens.size() &&
           (tokens[start] == "a" || tokens[start] == "an" ||
            tokens[start] == "the"))
        ++start;
    out.tokens.assign(tokens.begin() + start, tokens.end());
    return out;
}

inline double closed_accuracy(const std::vector<std::string>& preds,
                              const std::vector<std::string>& golds) {
    if (preds.size() != golds.size())
        throw Error("closed_accuracy: length mismatch");
    if (preds.empty()) throw Error("closed_accuracy: no items");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < preds.size(); ++i)
        if (normalize(preds[i]).tokens == normalize(golds[i]).tokens) ++hits;
    return static_cast<double>(hits) / static_cast<double>(preds.size());
}

inline std::map<char, std::string> option_colors_from_meta(
    const std::map<std::string, std::string>& meta) {
    std::map<char, std::string> out;
    for (char c = 'A'; c <= 'D'; ++c) {
        auto it = meta.find(std::string("color_") + c);
        if (it != meta.end()) out[c] = it->second;
    }
    return out;
}

/// Maps a free-form prediction to an option letter. Rules are tried in
/// order; the option_colors map lets a color word ("the red box") stand in
/// for its letter. Returns nullopt when nothing matches (scored incorrect).
inline std::optional<char> extract_choice(
    const std::string& pred,
    const std::map<char, std::string>& option_colors = {}) {
    const std::string t = trim(pred);
    auto as_letter = [](char c) -> std::optional<char> {
        if (c >= 'A' && c <= 'D') return c;
        if (c >= 'a' && c <= 'd') return static_cast<char>(c - 'a' + 'A');
        return std::nullopt;
    };

    if (t.size() == 1)
        if (auto l = as_letter(t[0])) return l;

    if (t.size() >= 2 && (t[1] == '.' || t[1] == ':'))
        if (auto l = as_letter(t[0])) return l;

    std::string lower;
    lower.reserve(t.size());
    for (char c : t)
        lower.push_back(static_cast<char>(
            std::tolower(static_cast<unsigned char>(c))));
    if (auto pos = lower.find("answer is"); pos != std::string::npos) {
        std::size_t i = pos + 9;
        while (i < t.size() &&
               std::isspace(static_cast<unsigned char>(t[i])))
            ++i;
        std::size_t j = i;
        while (j < t.size() &&
               std::isalnum(static_cast<unsigned char>(t[j])))
            ++j;
        if (j == i + 1)
            if (auto l = as_letter(t[i])) return l;
    }

    if (!option_colors.empty()) {
        std::map<std::string, char> color_to_letter;
        for (const auto& [letter, color] : option_colors) {
            auto norm = normalize(color);
            if (norm.tokens.size() == 1)
                color_to_letter[norm.tokens[0]] = letter;
        }
        std::set<std::string> found;
        for (const auto& tok : normalize(pred).tokens)
            if (color_to_letter.count(tok)) found.insert(tok);
        if (found.size() == 1) return color_to_letter[*found.begin()];
    }
    return std::nullopt;
}

/// Fraction of distinct gold tokens present in the prediction. nullopt when
/// the gold side normalizes to nothing (the item is skipped, not scored).
inline std::optional<double> token_recall(const std::string& pred,
                                          const std::string& gold) {
    const auto gold_tokens = normalize(gold).tokens;
    std::set<std::string> gold_set(gold_tokens.begin(), gold_tokens.end());
    if (gold_set.empty()) return std::nullopt;
    const auto pred_tokens = normalize(pred).tokens;
    std::set<std::string> pred_set(pred_tokens.begin(), pred_tokens.end());
    std::size_t hit = 0;
    for (const auto& tok : gold_set)
        if (pred_set.count(tok)) ++hit;
    return static_cast<double>(hit) / static_cast<double>(gold_set.size());
}

inline double localization_accuracy(const std::vector<std::string>& preds,
                                    const std::vector<std::string>& golds,
                                    double threshold = 0.5) {
    if (preds.size() != golds.size())
        throw Error("localization_accuracy: length mismatch");
    if (preds.empty()) throw Error("localization_accuracy: no items");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        auto gold = parse_bbox(golds[i]);
        if (!gold) throw Error("localization_accuracy: gold has no bbox");
        auto pred = parse_bbox(preds[i]);
        if (!pred || pred->degenerate()) continue;
        if (iou(*pred, *gold) >= threshold) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(preds.size());
}

inline std::string metric_name_for(QType t) {
    switch (t) {
        case QType::closed: return "accuracy";
        case QType::multichoice: return "accuracy";
        case QType::open: return "recall";
        case QType::localization: return "acc@iou0.5";
    }
    return "accuracy";
}

struct TypeStats {
    long long n = 0;
    std::string metric_name;
    double value = 0.0;
};

struct RunMeta {
    std::string model_id;
    std::string split;
    std::uint64_t seed = 0;
    std::string timestamp;
    long long failed = 0;
    long long skipped = 0;
};

struct EvalReport {
    std::map<std::string, TypeStats> per_type;
    long long total_items = 0;
    long long evaluated = 0;
    RunMeta run_meta;
};

struct ScoredItem {
    std::string qa_id;
    QType qtype = QType::closed;
    std::optional<double> score;  // nullopt = skipped (not in denominators)
};

inline EvalReport aggregate(const std::vector<ScoredItem>& items,
                            RunMeta meta) {
    EvalReport r;
    r.total_items = static_cast<long long>(items.size());
    std::map<std::string, std::pair<long long, double>> acc;
    for (const auto& item : items) {
        if (!item.score) {
            ++meta.skipped;
            continue;
        }
        auto& bucket = acc[to_string(item.qtype)];
        ++bucket.first;
        bucket.second += *item.score;
        ++r.evaluated;
    }
    for (const auto& [type, bucket] : acc) {
        TypeStats st;
        st.n = bucket.first;
        st.metric_name = metric_name_for(*parse_qtype(type));
        st.value = bucket.first ? bucket.second / bucket.first : 0.0;
        r.per_type[type] = st;
    }
    r.run_meta = std::move(meta);
    return r;
}

inline ojson report_json(const EvalReport& r) {
    ojson j;
    ojson per_type = ojson::object();
    for (const auto& [type, st] : r.per_type) {
        ojson tj;
        tj["n"] = st.n;
        tj["metric"] = st.metric_name;
        tj["value"] = st.value;
        per_type[type] = tj;
    }
    j["per_type"] = per_type;
    j["overall"] = {{"total", r.total_items},
                    {"evaluated", r.evaluated},
                    {"failed", r.run_meta.failed},
                    {"skipped", r.run_meta.skipped}};
    j["run_meta"] = {{"model_id", r.run_meta.model_id},
                     {"split", r.run_meta.split},
                     {"seed", r.run_meta.seed},
                     {"timestamp", r.run_meta.timestamp}};
    return j;
}

inline EvalReport report_from_json(const json& j) {
    EvalReport r;
    for (auto it = j.at("per_type").begin(); it != j.at("per_type").end();
         ++it) {
        TypeStats st;
        st.n = it.value().at("n").get<long long>();
        st.metric_name = it.value().at("metric").get<std::string>();
        st.value = it.value().at("value").get<double>();
        r.per_type[it.key()] = st;
    }
    r.total_items = j.at("overall").at("total").get<long long>();
    r.evaluated = j.at("overall").at("evaluated").get<long long>();
    r.run_meta.failed = j.at("overall").at("failed").get<long long>();
    r.run_meta.skipped = j.at("overall").at("skipped").get<long long>();
    r.run_meta.model_id = j.at("run_meta").at("model_id").get<std::string>();
    r.run_meta.split = j.at("run_meta").at("split").get<std::string>();
    r.run_meta.seed = j.at("run_meta").at("seed").get<std::uint64_t>();
    r.run_meta.timestamp = j.at("run_meta").at("timestamp").get<std::string>();
    return r;
}

inline std::string report_markdown(const EvalReport& r) {
    auto cell = [&](const char* type) -> std::string {
        auto it = r.per_type.find(type);
        if (it == r.per_type.end()) return "-";
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.2f", it->second.value * 100.0);
        return buf;
    };
    std::string md;
    md += "| Model | Open | Closed | Multi | Localization |\n";
    md += "|---|---|---|---|---|\n";
    md += "| " + r.run_meta.model_id + " | " + cell("open") + " | " +
          cell("closed") + " | " + cell("multichoice") + " | " +
          cell("localization") + " |\n";
    return md;
}

}  // namespace roivqa
