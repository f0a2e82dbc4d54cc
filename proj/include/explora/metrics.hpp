#pragma once

#include <algorithm>
#include <cstdio>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "explora/embedding.hpp"

namespace explora {

// Mean pairwise cosine similarity inside a recommendation list, diagonal
// excluded. Lower means more diverse. Undefined for fewer than 2 items.
inline std::optional<double> intra_list_similarity(const std::vector<ItemId>& rec,
                                                   const EmbeddingMap& vectors) {
    const std::size_t n = rec.size();
    if (n < 2) return std::nullopt;
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            if (i == j) continue;
            sum += cosine_similarity(vectors.at(rec[i]), vectors.at(rec[j]));
        }
    }
    return sum / (static_cast<double>(n) * static_cast<double>(n - 1));
}

enum class UnexpMode {
    MeanPairwise,     // d(i, H) = mean over history items j of 1 - s(i, j)
    HistoryCentroid,  // d(i, H) = 1 - s(i, centroid of history)
};

// Mean distance between recommended items and the user's history; higher
// means more novel. Undefined when either side is empty.
inline std::optional<double> unexpectedness(const std::vector<ItemId>& rec,
                                            const std::vector<ItemId>& history,
                                            const EmbeddingMap& vectors,
                                            UnexpMode mode = UnexpMode::MeanPairwise) {
    if (rec.empty() || history.empty()) return std::nullopt;
    double total = 0.0;
    if (mode == UnexpMode::HistoryCentroid) {
        std::vector<Embedding> hv;
        hv.reserve(history.size());
        for (ItemId h : history) hv.push_back(vectors.at(h));
        const Embedding centroid = mean_embedding(hv);
        for (ItemId r : rec) total += 1.0 - cosine_similarity(vectors.at(r), centroid);
    } else {
        for (ItemId r : rec) {
            double d = 0.0;
            for (ItemId h : history) d += 1.0 - cosine_similarity(vectors.at(r), vectors.at(h));
            total += d / static_cast<double>(history.size());
        }
    }
    return total / static_cast<double>(rec.size());
}

struct MetricSample {
    std::string label;
    int k = 0;
    int h = 0;
    UserId user = 0;
    std::optional<double> ils;
    std::optional<double> unexp;
};

struct MetricReportRow {
    std::string label;
    int k = 0;
    int h = 0;
    std::optional<double> ils;          // mean over users with a defined value
    std::optional<double> unexp;
    std::optional<double> ab_pref_pct;  // only for the exploration rows
    std::size_t users = 0;
};

// Arithmetic means per (k, h, label) group. Label order within a block
// follows label_order; groups with no samples are omitted with a warning
// line on `warnings` when given. Values stay unrounded here; rounding is
// presentation-only.
inline std::vector<MetricReportRow> aggregate_report(
    const std::vector<MetricSample>& samples, const std::vector<std::string>& label_order,
    std::ostream* warnings = nullptr) {
    struct Acc {
        double ils_sum = 0.0;
        std::size_t ils_n = 0;
        double unexp_sum = 0.0;
        std::size_t unexp_n = 0;
        std::size_t users = 0;
    };
    std::map<std::pair<int, int>, std::map<std::string, Acc>> groups;
    for (const auto& s : samples) {
        Acc& acc = groups[{s.k, s.h}][s.label];
        ++acc.users;
        if (s.ils) {
            acc.ils_sum += *s.ils;
            ++acc.ils_n;
        }
        if (s.unexp) {
            acc.unexp_sum += *s.unexp;
            ++acc.unexp_n;
        }
    }
    std::vector<MetricReportRow> rows;
    for (const auto& [kh, by_label] : groups) {
        for (const auto& label : label_order) {
            auto it = by_label.find(label);
            if (it == by_label.end() || it->second.users == 0) {
                if (warnings) {
                    *warnings << "warning: no samples for configuration '" << label << "' (k="
                              << kh.first << ", h=" << kh.second << "); row omitted\n";
                }
                continue;
            }
            const Acc& acc = it->second;
            MetricReportRow row;
            row.label = label;
            row.k = kh.first;
            row.h = kh.second;
            row.users = acc.users;
            if (acc.ils_n) row.ils = acc.ils_sum / static_cast<double>(acc.ils_n);
            if (acc.unexp_n) row.unexp = acc.unexp_sum / static_cast<double>(acc.unexp_n);
            rows.push_back(std::move(row));
        }
    }
    return rows;
}

namespace detail {

inline std::string fixed2(std::optional<double> v) {
    if (!v) return "-";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", *v);
    return buf;
}

inline std::string fixed6(std::optional<double> v) {
    if (!v) return "";
    char buf[48];
    std::snprintf(buf, sizeof buf, "%.6f", *v);
    return buf;
}

}  // namespace detail

// Machine-readable report: raw means at six decimals, empty cells for
// undefined values.
inline void write_report_csv(const std::vector<MetricReportRow>& rows, std::ostream& out) {
    out << "k,h,configuration,ils,unexp,ab_preference_pct,users\n";
    for (const auto& r : rows) {
        out << r.k << ',' << r.h << ',' << r.label << ',' << detail::fixed6(r.ils) << ','
            << detail::fixed6(r.unexp) << ',' << detail::fixed6(r.ab_pref_pct) << ',' << r.users
            << '\n';
    }
}

// Human-readable table, one block per (k, h), two-decimal presentation.
inline void write_report_table(const std::vector<MetricReportRow>& rows, std::ostream& out) {
    std::pair<int, int> block{-1, -1};
    for (const auto& r : rows) {
        if (std::pair{r.k, r.h} != block) {
            block = {r.k, r.h};
            out << "\nk = " << r.k << ", h = " << r.h << "\n";
            char head[128];
            std::snprintf(head, sizeof head, "  %-24s %8s %8s %18s\n", "Configuration", "ILS",
                          "Unexp.", "A/B Preference (%)");
            out << head
                << "  ------------------------------------------------------------------\n";
        }
        std::string ab = "-";
        if (r.ab_pref_pct) {
            char buf[16];
            std::snprintf(buf, sizeof buf, "%.1f", *r.ab_pref_pct);
            ab = buf;
        }
        char line[160];
        std::snprintf(line, sizeof line, "  %-24s %8s %8s %18s\n", r.label.c_str(),
                      detail::fixed2(r.ils).c_str(), detail::fixed2(r.unexp).c_str(), ab.c_str());
        out << line;
    }
}

}  // namespace explora
