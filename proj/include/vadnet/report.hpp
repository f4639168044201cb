#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "vadnet/dataset.hpp"
#include "vadnet/error.hpp"
#include "vadnet/vad.hpp"

namespace vadnet {

enum class Method { Baseline, Ortho };
enum class EvalSplit { Public, Private };

inline constexpr std::array<Method, 2> kMethods = {Method::Baseline, Method::Ortho};
inline constexpr std::array<EvalSplit, 2> kEvalSplits = {EvalSplit::Public, EvalSplit::Private};

constexpr std::string_view method_key(Method m) { return m == Method::Baseline ? "baseline" : "ortho"; }
constexpr std::string_view method_title(Method m) {
    return m == Method::Baseline ? "Common Resnet-18+regression" : "Orthogonal convolution regularization";
}
constexpr std::string_view split_key(EvalSplit s) { return s == EvalSplit::Public ? "public" : "private"; }
constexpr Split dataset_split(EvalSplit s) { return s == EvalSplit::Public ? Split::PublicTest : Split::PrivateTest; }

inline std::optional<Method> parse_method(std::string_view text) {
    for (Method m : kMethods)
        if (text == method_key(m)) return m;
    return std::nullopt;
}

inline std::optional<EvalSplit> parse_eval_split(std::string_view text) {
    for (EvalSplit s : kEvalSplits)
        if (text == split_key(s)) return s;
    return std::nullopt;
}

/// sqrt(mean((p - t)^2)).
inline double rmse(std::span<const double> preds, std::span<const double> targets) {
    if (preds.size() != targets.size()) {
        throw Error(ErrorKind::InvalidShape, "rmse: " + std::to_string(preds.size()) + " predictions vs " +
                                                 std::to_string(targets.size()) + " targets");
    }
    if (preds.empty()) throw Error(ErrorKind::EmptyInput, "rmse of no values");
    double acc = 0.0;
    for (std::size_t i = 0; i < preds.size(); ++i) acc += (preds[i] - targets[i]) * (preds[i] - targets[i]);
    return std::sqrt(acc / static_cast<double>(preds.size()));
}

/// RMSE of the clamped predictions of `predictor` (pixels -> raw value) over
/// `set`, in the set's (ascending index) order.
template <typename Predictor>
double evaluate(Predictor&& predictor, const LabeledSet& set, Dimension dim) {
    if (set.empty()) throw Error(ErrorKind::EmptyInput, "evaluation split is empty");
    std::vector<double> preds, targets;
    preds.reserve(set.size());
    targets.reserve(set.size());
    for (std::size_t i = 0; i < set.size(); ++i) {
        const double raw = predictor(set.image(i));
        preds.push_back(std::clamp(raw, kScaleMin, kScaleMax));
        targets.push_back(set.targets[i][dim]);
    }
    return rmse(preds, targets);
}

struct ReportCell {
    Dimension dimension;
    EvalSplit split;
    Method method;

    auto key() const { return std::tuple(static_cast<int>(dimension), static_cast<int>(split), static_cast<int>(method)); }
    friend bool operator<(const ReportCell& a, const ReportCell& b) { return a.key() < b.key(); }
    friend bool operator==(const ReportCell& a, const ReportCell& b) { return a.key() == b.key(); }
};

inline std::string describe(const ReportCell& c) {
    return std::string(dimension_name(c.dimension)) + "/" + std::string(split_key(c.split)) + "/" +
           std::string(method_key(c.method));
}

/// The 12-cell ablation table: (dimension, split, method) -> RMSE.
class EvalReport {
public:
    void set(Dimension d, EvalSplit s, Method m, double value) {
        if (!(value >= 0.0) || !std::isfinite(value)) {
            throw Error(ErrorKind::Validation, "rmse must be finite and >= 0 for " + describe({d, s, m}));
        }
        entries_[{d, s, m}] = value;
    }

    std::optional<double> get(Dimension d, EvalSplit s, Method m) const {
        const auto it = entries_.find({d, s, m});
        if (it == entries_.end()) return std::nullopt;
        return it->second;
    }

    double at(Dimension d, EvalSplit s, Method m) const {
        const auto v = get(d, s, m);
        if (!v) throw Error(ErrorKind::IncompleteReport, "missing cell " + describe({d, s, m}));
        return *v;
    }

    std::vector<ReportCell> missing_cells(std::optional<Method> only = std::nullopt) const {
        std::vector<ReportCell> missing;
        for (Dimension d : kDimensions)
            for (EvalSplit s : kEvalSplits)
                for (Method m : kMethods)
                    if ((!only || *only == m) && !entries_.contains({d, s, m})) missing.push_back({d, s, m});
        return missing;
    }

    bool complete() const { return missing_cells().empty(); }
    std::size_t size() const { return entries_.size(); }
    const std::map<ReportCell, double>& entries() const { return entries_; }

    std::map<std::string, std::string> metadata;

private:
    std::map<ReportCell, double> entries_;
};

namespace detail {

inline void require_cells(const std::vector<ReportCell>& missing) {
    if (missing.empty()) return;
    std::string list;
    for (const ReportCell& c : missing) list += (list.empty() ? "" : ", ") + describe(c);
    throw Error(ErrorKind::IncompleteReport, std::to_string(missing.size()) + " missing cell(s): " + list);
}

inline std::string fixed3(double value) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3f", value);
    return buf;
}

}  // namespace detail

struct RankReport {
    Method method = Method::Ortho;
    // ranks[split][dimension], 1 = lowest RMSE; ties share the mean position.
    std::array<std::array<double, 3>, 2> ranks{};
    std::array<double, 3> sums{};
};

/// Ranks the three dimensions by ascending RMSE within each split and sums
/// the ranks across splits.
inline RankReport rank_aggregate(const EvalReport& report, Method method) {
    detail::require_cells(report.missing_cells(method));
    RankReport out;
    out.method = method;
    for (std::size_t s = 0; s < kEvalSplits.size(); ++s) {
        std::array<double, 3> values{};
        for (std::size_t d = 0; d < 3; ++d) values[d] = report.at(kDimensions[d], kEvalSplits[s], method);
        for (std::size_t d = 0; d < 3; ++d) {
            std::size_t below = 0, equal = 0;
            for (double other : values) {
                below += other < values[d];
                equal += other == values[d];
            }
            // Tied entries occupy positions below+1 .. below+equal.
            out.ranks[s][d] = static_cast<double>(below) + (static_cast<double>(equal) + 1.0) / 2.0;
        }
    }
    for (std::size_t d = 0; d < 3; ++d) out.sums[d] = out.ranks[0][d] + out.ranks[1][d];
    return out;
}

struct RenderOptions {
    // Adds RMSE/2, the error on targets rescaled from [-2, 2] to [-1, 1].
    bool normalized_columns = false;
};

/// One table per dimension, methods as rows, Public/Private test columns.
inline std::string render_tables(const EvalReport& report, const RenderOptions& options = {}) {
    detail::require_cells(report.missing_cells());
    std::ostringstream out;
    for (Dimension d : kDimensions) {
        std::string title(dimension_name(d));
        title[0] = static_cast<char>(title[0] - 'a' + 'A');
        out << title << " prediction results (RMSE)\n";
        out << "| Method                                | Public test | Private test |";
        if (options.normalized_columns) out << " Public [-1,1] | Private [-1,1] |";
        out << '\n';
        out << "|---------------------------------------|-------------|--------------|";
        if (options.normalized_columns) out << "---------------|----------------|";
        out << '\n';
        for (Method m : kMethods) {
            char row[160];
            const double pub = report.at(d, EvalSplit::Public, m);
            const double priv = report.at(d, EvalSplit::Private, m);
            std::snprintf(row, sizeof row, "| %-37s | %11s | %12s |", std::string(method_title(m)).c_str(),
                          detail::fixed3(pub).c_str(), detail::fixed3(priv).c_str());
            out << row;
            if (options.normalized_columns) {
                std::snprintf(row, sizeof row, " %13s | %14s |", detail::fixed3(pub / 2.0).c_str(),
                              detail::fixed3(priv / 2.0).c_str());
                out << row;
            }
            out << '\n';
        }
        out << '\n';
    }
    return out.str();
}

inline std::string format_rank_value(double r) {
    char buf[32];
    if (r == std::floor(r)) {
        std::snprintf(buf, sizeof buf, "%d", static_cast<int>(r));
    } else {
        std::snprintf(buf, sizeof buf, "%.1f", r);
    }
    return buf;
}

inline std::string render_ranks(const RankReport& ranks) {
    std::ostringstream out;
    out << "Prediction disparity ranks (" << method_key(ranks.method) << ", 1 = lowest RMSE)\n";
    out << "| Dimension | Public | Private | Sum |\n";
    out << "|-----------|--------|---------|-----|\n";
    for (std::size_t d = 0; d < 3; ++d) {
        char row[96];
        std::snprintf(row, sizeof row, "| %-9c | %6s | %7s | %3s |", dimension_letter(kDimensions[d]),
                      format_rank_value(ranks.ranks[0][d]).c_str(), format_rank_value(ranks.ranks[1][d]).c_str(),
                      format_rank_value(ranks.sums[d]).c_str());
        out << row << '\n';
    }
    out << "rank-sums V=" << format_rank_value(ranks.sums[0]) << " A=" << format_rank_value(ranks.sums[1])
        << " D=" << format_rank_value(ranks.sums[2]) << '\n';
    return out.str();
}

/// Line format, one cell per line in fixed (dimension, split, method) order:
///   dimension=valence split=public method=baseline rmse=0.076000000000000004
/// Metadata lines start with `meta `.
inline void write_report(std::ostream& out, const EvalReport& report) {
    for (const auto& [key, value] : report.metadata) out << "meta " << key << '=' << value << '\n';
    for (const auto& [cell, value] : report.entries()) {
        char buf[40];
        std::snprintf(buf, sizeof buf, "%.17g", value);
        out << "dimension=" << dimension_name(cell.dimension) << " split=" << split_key(cell.split)
            << " method=" << method_key(cell.method) << " rmse=" << buf << '\n';
    }
}

inline EvalReport read_report(std::istream& in) {
    EvalReport report;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string_view row = detail::trim_cr(line);
        if (row.empty() || row.front() == '#') continue;
        const std::string where = detail::row_label(line_no);
        if (row.starts_with("meta ")) {
            const std::string_view rest = row.substr(5);
            const auto eq = rest.find('=');
            if (eq == std::string_view::npos) throw Error(ErrorKind::Parse, where + ": meta without '='");
            report.metadata[std::string(rest.substr(0, eq))] = std::string(rest.substr(eq + 1));
            continue;
        }
        std::map<std::string, std::string> fields;
        std::istringstream tokens{std::string(row)};
        for (std::string token; tokens >> token;) {
            const auto eq = token.find('=');
            if (eq == std::string::npos) throw Error(ErrorKind::Parse, where + ": expected key=value, got '" + token + "'");
            fields[token.substr(0, eq)] = token.substr(eq + 1);
        }
        const auto dim = parse_dimension(fields["dimension"]);
        const auto split = parse_eval_split(fields["split"]);
        const auto method = parse_method(fields["method"]);
        if (!dim || !split || !method || !fields.contains("rmse")) {
            throw Error(ErrorKind::Parse, where + ": needs dimension=, split=, method=, rmse=");
        }
        double value = 0.0;
        try {
            std::size_t used = 0;
            value = std::stod(fields["rmse"], &used);
            if (used != fields["rmse"].size()) throw std::invalid_argument("trailing");
        } catch (const std::logic_error&) {
            throw Error(ErrorKind::Parse, where + ": bad rmse '" + fields["rmse"] + "'");
        }
        report.set(*dim, *split, *method, value);
    }
    return report;
}

}  // namespace vadnet
