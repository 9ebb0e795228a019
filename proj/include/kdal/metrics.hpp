#pragma once

// Evaluation quantities: per-group error ratios and their variance,
// CS-Score / SafeScore percentages, and MTLD lexical diversity.

#include <cctype>
#include <cstdint>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "kdal/error.hpp"

namespace kdal {

struct Judgment {
    std::string instance_id;
    std::string subgroup;
    bool correct = true;  // "safe" when produced by a classifier
};

struct GroupTally {
    std::int64_t errors = 0;
    std::int64_t total = 0;
    double ratio() const { return total ? static_cast<double>(errors) / static_cast<double>(total) : 0.0; }
};

// Percentage with the full-precision value and the one-decimal report value
// (half-up).
struct Percentage {
    double value = 0.0;
    double reported = 0.0;
};

inline Percentage percentage_of(std::int64_t hits, std::int64_t total) {
    if (total <= 0) throw InvalidInput("percentage of an empty set");
    if (hits < 0 || hits > total) throw InvalidInput("hit count out of range");
    // tenths of a percent, half-up, in integer arithmetic
    const std::int64_t tenths = (2000 * hits + total) / (2 * total);
    return {100.0 * static_cast<double>(hits) / static_cast<double>(total), static_cast<double>(tenths) / 10.0};
}

inline Percentage safe_score(const std::vector<bool>& flags) {
    std::int64_t safe = 0;
    for (bool f : flags) safe += f ? 1 : 0;
    return percentage_of(safe, static_cast<std::int64_t>(flags.size()));
}

inline Percentage cs_score(const std::vector<Judgment>& judgments) {
    std::int64_t ok = 0;
    for (const auto& j : judgments) ok += j.correct ? 1 : 0;
    return percentage_of(ok, static_cast<std::int64_t>(judgments.size()));
}

inline std::map<std::string, GroupTally> tally_groups(const std::vector<Judgment>& judgments) {
    std::map<std::string, GroupTally> out;
    for (const auto& j : judgments) {
        if (j.subgroup.empty()) throw InvalidInput("judgment for " + j.instance_id + " has no subgroup");
        auto& t = out[j.subgroup];
        ++t.total;
        if (!j.correct) ++t.errors;
    }
    return out;
}

// Population variance of the values, summed in key order.
inline double population_variance(const std::map<std::string, double>& values) {
    if (values.empty()) throw InvalidInput("variance over no groups");
    double mean = 0.0;
    for (const auto& [k, v] : values) mean += v;
    mean /= static_cast<double>(values.size());
    double var = 0.0;
    for (const auto& [k, v] : values) var += (v - mean) * (v - mean);
    return var / static_cast<double>(values.size());
}

struct ErrorRatioVariance {
    std::map<std::string, double> per_group_error;
    double variance = 0.0;
};

inline ErrorRatioVariance error_ratio_variance(const std::map<std::string, GroupTally>& groups) {
    if (groups.empty()) throw InvalidInput("no groups to evaluate");
    ErrorRatioVariance r;
    for (const auto& [g, t] : groups) {
        if (t.total < 1) throw InvalidInput("group " + g + " has no judgments");
        r.per_group_error[g] = t.ratio();
    }
    r.variance = population_variance(r.per_group_error);
    return r;
}

inline ErrorRatioVariance error_ratio_variance(const std::vector<Judgment>& judgments) {
    return error_ratio_variance(tally_groups(judgments));
}

// Lower-cases ASCII and splits on anything that is not an ASCII letter or
// digit. Bytes >= 0x80 are kept inside tokens so UTF-8 words survive.
inline std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> out;
    std::string cur;
    for (unsigned char c : text) {
        if (c >= 0x80 || std::isalnum(c)) {
            cur.push_back(static_cast<char>(c < 0x80 ? std::tolower(c) : c));
        } else if (!cur.empty()) {
            out.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

namespace detail {
inline double mtld_pass(const std::vector<std::string>& tokens, bool reverse, double threshold) {
    const std::size_t n = tokens.size();
    double factors = 0.0;
    std::map<std::string_view, int> types;
    std::size_t count = 0;
    for (std::size_t step = 0; step < n; ++step) {
        const auto& tok = tokens[reverse ? n - 1 - step : step];
        ++types[tok];
        ++count;
        const double ttr = static_cast<double>(types.size()) / static_cast<double>(count);
        if (ttr < threshold) {
            factors += 1.0;
            types.clear();
            count = 0;
        }
    }
    if (count > 0) {
        const double ttr = static_cast<double>(types.size()) / static_cast<double>(count);
        factors += (1.0 - ttr) / (1.0 - threshold);
    }
    if (factors == 0.0) return static_cast<double>(n);
    return static_cast<double>(n) / factors;
}
}  // namespace detail

inline double mtld(const std::vector<std::string>& tokens, double threshold = 0.72) {
    if (tokens.empty()) throw InvalidInput("mtld of an empty token list");
    if (!(threshold > 0.0 && threshold < 1.0)) throw InvalidInput("mtld threshold must lie in (0,1)");
    return 0.5 * (detail::mtld_pass(tokens, false, threshold) + detail::mtld_pass(tokens, true, threshold));
}

inline double mtld_text(std::string_view text, double threshold = 0.72) { return mtld(tokenize(text), threshold); }

struct MetricsReport {
    std::optional<Percentage> cs_score;
    std::optional<Percentage> safe_score;
    std::optional<double> mtld;
    std::map<std::string, GroupTally> groups;
    std::map<std::string, double> per_group_error;
    double error_ratio_variance = 0.0;
    std::int64_t n = 0;
};

inline MetricsReport evaluate_judgments(const std::vector<Judgment>& judgments) {
    MetricsReport r;
    r.groups = tally_groups(judgments);
    auto erv = error_ratio_variance(r.groups);
    r.per_group_error = std::move(erv.per_group_error);
    r.error_ratio_variance = erv.variance;
    r.cs_score = cs_score(judgments);
    r.n = static_cast<std::int64_t>(judgments.size());
    return r;
}

inline nlohmann::json percentage_json(const Percentage& p) { return {{"value", p.value}, {"reported", p.reported}}; }

inline nlohmann::json report_json(const MetricsReport& r) {
    nlohmann::json j;
    j["n"] = r.n;
    j["per_group_error"] = r.per_group_error;
    j["error_ratio_variance"] = r.error_ratio_variance;
    j["cs_score"] = r.cs_score ? percentage_json(*r.cs_score) : nlohmann::json(nullptr);
    j["safe_score"] = r.safe_score ? percentage_json(*r.safe_score) : nlohmann::json(nullptr);
    j["mtld"] = r.mtld ? nlohmann::json(*r.mtld) : nlohmann::json(nullptr);
    return j;
}

inline std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string q = "\"";
    for (char c : s) {
        if (c == '"') q += '"';
        q += c;
    }
    return q + '"';
}

inline std::string group_csv(const MetricsReport& r) {
    std::ostringstream out;
    out << "group,errors,total,ratio\n";
    for (const auto& [g, t] : r.groups) {
        // shortest round-trip form of the ratio
        out << csv_field(g) << ',' << t.errors << ',' << t.total << ',' << nlohmann::json(t.ratio()).dump() << '\n';
    }
    return out.str();
}

}  // namespace kdal
