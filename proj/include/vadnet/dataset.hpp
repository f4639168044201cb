#pragma once

#include <algorithm>
#include <array>
#include <charconv>
#include <cstdint>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <system_error>
#include <tuple>
#include <utility>
#include <vector>

#include "vadnet/error.hpp"
#include "vadnet/vad.hpp"

namespace vadnet {

inline constexpr std::size_t kImageSide = 48;
inline constexpr std::size_t kImagePixels = kImageSide * kImageSide;

enum class Split { Training, PublicTest, PrivateTest };

inline constexpr std::array<Split, 3> kSplits = {Split::Training, Split::PublicTest, Split::PrivateTest};

constexpr std::string_view split_name(Split s) {
    switch (s) {
        case Split::Training: return "Training";
        case Split::PublicTest: return "PublicTest";
        case Split::PrivateTest: return "PrivateTest";
    }
    return "";
}

inline std::optional<Split> parse_split(std::string_view text) {
    for (Split s : kSplits) {
        if (text == split_name(s)) return s;
    }
    return std::nullopt;
}

struct FaceImage {
    std::size_t index = 0;
    std::array<std::uint8_t, kImagePixels> pixels{};
    Split split = Split::Training;
    std::optional<EmotionCategory> category;
};

struct AnnotationRecord {
    std::size_t image_index = 0;
    std::string annotator_id;
    VadTriple triple;
    std::int64_t timestamp = 0;
    // Reserved for a reviewer pass; no workflow sets it yet.
    bool reviewed = false;

    friend bool operator==(const AnnotationRecord&, const AnnotationRecord&) = default;
};

namespace detail {

inline std::vector<std::string_view> split_fields(std::string_view line, char sep) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t pos = line.find(sep, start);
        if (pos == std::string_view::npos) {
            out.push_back(line.substr(start));
            return out;
        }
        out.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
}

inline std::string_view trim_cr(std::string_view line) {
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    return line;
}

template <typename Int>
std::optional<Int> parse_int(std::string_view text) {
    Int value{};
    const auto* end = text.data() + text.size();
    const auto [ptr, ec] = std::from_chars(text.data(), end, value);
    if (ec != std::errc() || ptr != end || text.empty()) return std::nullopt;
    return value;
}

inline std::string row_label(std::size_t line) { return "row " + std::to_string(line); }

}  // namespace detail

/// Reads the FER2013 CSV (`emotion,pixels,Usage`). Images are indexed by
/// their 0-based data-row position; errors name the 1-based file line.
inline std::vector<FaceImage> parse_fer2013(std::istream& in) {
    std::string line;
    if (!std::getline(in, line) || detail::trim_cr(line) != "emotion,pixels,Usage") {
        throw Error(ErrorKind::Parse, "row 1: expected header 'emotion,pixels,Usage'");
    }
    std::vector<FaceImage> images;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string_view row = detail::trim_cr(line);
        if (row.empty()) continue;
        const auto fields = detail::split_fields(row, ',');
        if (fields.size() != 3) {
            throw Error(ErrorKind::Parse, detail::row_label(line_no) + ": expected 3 fields, got " +
                                              std::to_string(fields.size()));
        }
        FaceImage image;
        image.index = images.size();
        if (!fields[0].empty()) {
            const auto code = detail::parse_int<long>(fields[0]);
            const auto category = code ? emotion_from_code(*code) : std::nullopt;
            if (!category) {
                throw Error(ErrorKind::Parse, detail::row_label(line_no) + ": bad emotion '" +
                                                  std::string(fields[0]) + "'");
            }
            image.category = category;
        }
        std::size_t count = 0;
        for (std::string_view token : detail::split_fields(fields[1], ' ')) {
            if (token.empty()) continue;
            const auto value = detail::parse_int<int>(token);
            if (!value || *value < 0 || *value > 255) {
                throw Error(ErrorKind::Parse, detail::row_label(line_no) + ": bad pixel value '" +
                                                  std::string(token) + "'");
            }
            if (count < kImagePixels) image.pixels[count] = static_cast<std::uint8_t>(*value);
            ++count;
        }
        if (count != kImagePixels) {
            throw Error(ErrorKind::Parse, detail::row_label(line_no) + ": expected " + std::to_string(kImagePixels) +
                                              " pixels, got " + std::to_string(count));
        }
        const auto split = parse_split(fields[2]);
        if (!split) {
            throw Error(ErrorKind::Parse, detail::row_label(line_no) + ": unknown Usage '" + std::string(fields[2]) +
                                              "'");
        }
        image.split = *split;
        images.push_back(image);
    }
    return images;
}

inline void write_fer2013(std::ostream& out, std::span<const FaceImage> images) {
    out << "emotion,pixels,Usage\n";
    for (const FaceImage& image : images) {
        if (image.category) out << static_cast<int>(*image.category);
        out << ',';
        for (std::size_t i = 0; i < kImagePixels; ++i) {
            if (i) out << ' ';
            out << static_cast<int>(image.pixels[i]);
        }
        out << ',' << split_name(image.split) << '\n';
    }
}

inline constexpr std::string_view kAnnotationHeader = "image_index,annotator_id,v,a,d,timestamp";
inline constexpr std::string_view kReducedAnnotationHeader = "image_index,v,a,d";
/// annotator_id assigned to rows imported from the reduced published form.
inline constexpr std::string_view kPublishedAnnotator = "published";

inline bool valid_annotator_id(std::string_view id) {
    if (id.empty() || id.size() > 128) return false;
    return std::none_of(id.begin(), id.end(), [](char c) { return c == ',' || c == '\n' || c == '\r' || c < 0x20; });
}

namespace detail {

inline VadTriple parse_scale_triple(std::string_view v, std::string_view a, std::string_view d, std::size_t line_no) {
    std::array<double, 3> values{};
    const std::array<std::string_view, 3> fields = {v, a, d};
    for (std::size_t i = 0; i < 3; ++i) {
        const auto value = parse_int<long>(fields[i]);
        if (!value || !is_scale_value(*value)) {
            throw Error(ErrorKind::Validation, row_label(line_no) + ": " + std::string(1, "vad"[i]) + "='" +
                                                   std::string(fields[i]) + "' is not one of -2,-1,0,1,2");
        }
        values[i] = static_cast<double>(*value);
    }
    return {values[0], values[1], values[2]};
}

}  // namespace detail

/// Parses one canonical row `image_index,annotator_id,v,a,d,timestamp`.
inline AnnotationRecord parse_annotation_row(std::string_view row, std::size_t line_no) {
    const auto f = detail::split_fields(row, ',');
    if (f.size() != 6) {
        throw Error(ErrorKind::Parse, detail::row_label(line_no) + ": expected 6 fields, got " + std::to_string(f.size()));
    }
    AnnotationRecord rec;
    const auto index = detail::parse_int<std::size_t>(f[0]);
    if (!index) throw Error(ErrorKind::Parse, detail::row_label(line_no) + ": bad image_index");
    rec.image_index = *index;
    if (!valid_annotator_id(f[1])) throw Error(ErrorKind::Validation, detail::row_label(line_no) + ": bad annotator_id");
    rec.annotator_id = std::string(f[1]);
    rec.triple = detail::parse_scale_triple(f[2], f[3], f[4], line_no);
    const auto ts = detail::parse_int<std::int64_t>(f[5]);
    if (!ts) throw Error(ErrorKind::Parse, detail::row_label(line_no) + ": bad timestamp");
    rec.timestamp = *ts;
    return rec;
}

inline std::string format_annotation_row(const AnnotationRecord& rec) {
    auto as_int = [](double x) { return std::to_string(static_cast<long>(x)); };
    return std::to_string(rec.image_index) + "," + rec.annotator_id + "," + as_int(rec.triple.v) + "," +
           as_int(rec.triple.a) + "," + as_int(rec.triple.d) + "," + std::to_string(rec.timestamp);
}

/// Loads annotations in the canonical form, or the reduced
/// `image_index,v,a,d` form of single-annotator published labels.
inline std::vector<AnnotationRecord> load_annotations(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw Error(ErrorKind::Parse, "row 1: missing header");
    const std::string_view header = detail::trim_cr(line);
    const bool reduced = header == kReducedAnnotationHeader;
    if (!reduced && header != kAnnotationHeader) {
        throw Error(ErrorKind::Parse, "row 1: expected header '" + std::string(kAnnotationHeader) + "' or '" +
                                          std::string(kReducedAnnotationHeader) + "'");
    }
    std::vector<AnnotationRecord> records;
    std::set<std::pair<std::size_t, std::string>> seen;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string_view row = detail::trim_cr(line);
        if (row.empty()) continue;
        AnnotationRecord rec;
        if (reduced) {
            const auto f = detail::split_fields(row, ',');
            if (f.size() != 4) {
                throw Error(ErrorKind::Parse, detail::row_label(line_no) + ": expected 4 fields, got " +
                                                  std::to_string(f.size()));
            }
            const auto index = detail::parse_int<std::size_t>(f[0]);
            if (!index) throw Error(ErrorKind::Parse, detail::row_label(line_no) + ": bad image_index");
            rec.image_index = *index;
            rec.annotator_id = std::string(kPublishedAnnotator);
            rec.triple = detail::parse_scale_triple(f[1], f[2], f[3], line_no);
        } else {
            rec = parse_annotation_row(row, line_no);
        }
        if (!seen.emplace(rec.image_index, rec.annotator_id).second) {
            throw Error(ErrorKind::Duplicate, detail::row_label(line_no) + ": image " + std::to_string(rec.image_index) +
                                                  " already annotated by '" + rec.annotator_id + "'");
        }
        records.push_back(std::move(rec));
    }
    return records;
}

/// Canonical CSV, rows sorted by (image_index, annotator_id).
inline void write_annotations(std::ostream& out, std::vector<AnnotationRecord> records) {
    std::sort(records.begin(), records.end(), [](const AnnotationRecord& x, const AnnotationRecord& y) {
        return std::tie(x.image_index, x.annotator_id) < std::tie(y.image_index, y.annotator_id);
    });
    out << kAnnotationHeader << '\n';
    for (const AnnotationRecord& rec : records) out << format_annotation_row(rec) << '\n';
}

/// Median of integer scale values; an even count averages the two middle
/// values and truncates toward zero.
inline double median_toward_zero(std::vector<double> values) {
    if (values.empty()) throw Error(ErrorKind::EmptyInput, "median of no values");
    std::sort(values.begin(), values.end());
    const std::size_t n = values.size();
    if (n % 2 == 1) return values[n / 2];
    return std::trunc((values[n / 2 - 1] + values[n / 2]) / 2.0);
}

struct ConsistencyOutcome {
    std::size_t image_index = 0;
    std::size_t annotators = 0;
    std::optional<VadTriple> label;  // empty when rejected
    std::string rejection;
};

/// Per-image aggregation: accepted when at least `min_annotators` labeled the
/// image and every dimension's max-min spread is <= `max_spread`.
inline std::vector<ConsistencyOutcome> consistency_filter(std::span<const AnnotationRecord> records,
                                                          std::size_t min_annotators, int max_spread) {
    if (min_annotators < 1) throw Error(ErrorKind::Validation, "min_annotators must be >= 1");
    if (max_spread < 0) throw Error(ErrorKind::Validation, "max_spread must be >= 0");
    std::map<std::size_t, std::vector<const AnnotationRecord*>> by_image;
    for (const AnnotationRecord& rec : records) by_image[rec.image_index].push_back(&rec);

    std::vector<ConsistencyOutcome> outcomes;
    outcomes.reserve(by_image.size());
    for (const auto& [index, group] : by_image) {
        ConsistencyOutcome out;
        out.image_index = index;
        out.annotators = group.size();
        if (group.size() < min_annotators) {
            out.rejection = "only " + std::to_string(group.size()) + " annotator(s), need " +
                            std::to_string(min_annotators);
            outcomes.push_back(std::move(out));
            continue;
        }
        std::array<double, 3> label{};
        for (std::size_t k = 0; k < 3; ++k) {
            const Dimension dim = kDimensions[k];
            std::vector<double> values;
            for (const AnnotationRecord* rec : group) values.push_back(rec->triple[dim]);
            const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
            if (*hi - *lo > max_spread) {
                out.rejection = std::string(dimension_name(dim)) + " spread " + std::to_string(static_cast<int>(*hi - *lo)) +
                                " > " + std::to_string(max_spread);
                break;
            }
            label[k] = median_toward_zero(std::move(values));
        }
        if (out.rejection.empty()) out.label = VadTriple{label[0], label[1], label[2]};
        outcomes.push_back(std::move(out));
    }
    return outcomes;
}

/// Image index -> accepted label, dropping rejected images.
inline std::map<std::size_t, VadTriple> accepted_labels(std::span<const ConsistencyOutcome> outcomes) {
    std::map<std::size_t, VadTriple> labels;
    for (const ConsistencyOutcome& o : outcomes) {
        if (o.label) labels.emplace(o.image_index, *o.label);
    }
    return labels;
}

/// counts[dimension][value + 2]
using VadDistribution = std::array<std::array<std::size_t, 5>, 3>;

inline VadDistribution vad_distribution(std::span<const VadTriple> labels) {
    VadDistribution table{};
    for (const VadTriple& t : labels) {
        if (!t.annotation_grade()) {
            throw Error(ErrorKind::Validation, "distribution needs annotation-grade triples");
        }
        for (std::size_t k = 0; k < 3; ++k) {
            table[k][static_cast<std::size_t>(t[kDimensions[k]] + 2.0)] += 1;
        }
    }
    return table;
}

struct SplitCounts {
    std::size_t training = 0;
    std::size_t public_test = 0;
    std::size_t private_test = 0;
    std::size_t unmatched = 0;  // label indices with no image

    std::size_t total() const { return training + public_test + private_test; }
    std::size_t& operator[](Split s) {
        switch (s) {
            case Split::Training: return training;
            case Split::PublicTest: return public_test;
            case Split::PrivateTest: return private_test;
        }
        return unmatched;
    }
};

inline SplitCounts count_images_by_split(std::span<const FaceImage> images) {
    SplitCounts counts;
    for (const FaceImage& image : images) counts[image.split] += 1;
    return counts;
}

template <typename LabelMap>
SplitCounts count_labels_by_split(const LabelMap& labels, std::span<const FaceImage> images) {
    std::map<std::size_t, Split> split_of;
    for (const FaceImage& image : images) split_of.emplace(image.index, image.split);
    SplitCounts counts;
    for (const auto& [index, label] : labels) {
        const auto it = split_of.find(index);
        if (it == split_of.end()) {
            counts.unmatched += 1;
        } else {
            counts[it->second] += 1;
        }
    }
    return counts;
}

/// Images paired with labels, ascending by image index, pixels scaled by 1/255.
struct LabeledSet {
    std::vector<std::size_t> indices;
    std::vector<double> pixels;  // size() * kImagePixels
    std::vector<VadTriple> targets;

    std::size_t size() const { return indices.size(); }
    bool empty() const { return indices.empty(); }
    std::span<const double> image(std::size_t i) const {
        return std::span<const double>(pixels).subspan(i * kImagePixels, kImagePixels);
    }
};

inline LabeledSet to_training_set(std::span<const FaceImage> images, const std::map<std::size_t, VadTriple>& labels,
                                  std::optional<Split> only_split = std::nullopt) {
    std::map<std::size_t, const FaceImage*> by_index;
    for (const FaceImage& image : images) by_index.emplace(image.index, &image);
    LabeledSet set;
    for (const auto& [index, label] : labels) {
        const auto it = by_index.find(index);
        if (it == by_index.end()) {
            throw Error(ErrorKind::MissingImage, "label refers to image " + std::to_string(index) +
                                                     " which is not in the image set");
        }
        if (only_split && it->second->split != *only_split) continue;
        set.indices.push_back(index);
        set.targets.push_back(label);
        for (std::uint8_t p : it->second->pixels) set.pixels.push_back(static_cast<double>(p) / 255.0);
    }
    return set;
}

/// One image index per line; blank lines and `#` comments ignored.
inline std::set<std::size_t> read_exclusion_list(std::istream& in) {
    std::set<std::size_t> excluded;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        std::string_view row = detail::trim_cr(line);
        while (!row.empty() && (row.back() == ' ' || row.back() == '\t')) row.remove_suffix(1);
        if (row.empty() || row.front() == '#') continue;
        const auto index = detail::parse_int<std::size_t>(row);
        if (!index) throw Error(ErrorKind::Parse, detail::row_label(line_no) + ": bad image index '" + std::string(row) + "'");
        excluded.insert(*index);
    }
    return excluded;
}

/// FNV-1a over labeled pixels and targets; identifies the data a model saw.
inline std::uint64_t fingerprint(const LabeledSet& set) {
    std::uint64_t h = 1469598103934665603ULL;
    auto mix = [&h](const void* data, std::size_t bytes) {
        const auto* p = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < bytes; ++i) {
            h ^= p[i];
            h *= 1099511628211ULL;
        }
    };
    mix(set.indices.data(), set.indices.size() * sizeof(std::size_t));
    mix(set.pixels.data(), set.pixels.size() * sizeof(double));
    for (const VadTriple& t : set.targets) mix(&t, sizeof(t));
    return h;
}

}  // namespace vadnet
