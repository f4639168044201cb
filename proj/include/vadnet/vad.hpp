#pragma once

#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <string_view>

namespace vadnet {

enum class Dimension { Valence, Arousal, Dominance };

inline constexpr std::array<Dimension, 3> kDimensions = {Dimension::Valence, Dimension::Arousal,
                                                         Dimension::Dominance};

/// The five annotation options per dimension.
inline constexpr std::array<int, 5> kScale = {-2, -1, 0, 1, 2};
inline constexpr double kScaleMin = -2.0;
inline constexpr double kScaleMax = 2.0;

constexpr char dimension_letter(Dimension d) {
    switch (d) {
        case Dimension::Valence: return 'V';
        case Dimension::Arousal: return 'A';
        case Dimension::Dominance: return 'D';
    }
    return '?';
}

constexpr std::string_view dimension_name(Dimension d) {
    switch (d) {
        case Dimension::Valence: return "valence";
        case Dimension::Arousal: return "arousal";
        case Dimension::Dominance: return "dominance";
    }
    return "unknown";
}

inline std::optional<Dimension> parse_dimension(std::string_view text) {
    for (Dimension d : kDimensions) {
        const char upper = dimension_letter(d);
        const char lower = static_cast<char>(upper - 'A' + 'a');
        if (text.size() == 1 && (text[0] == upper || text[0] == lower)) return d;
        if (text == dimension_name(d)) return d;
    }
    return std::nullopt;
}

/// One (v, a, d) point. Annotation-grade triples hold integers from kScale;
/// anchors and predictions may be any real value in [-2, 2].
struct VadTriple {
    double v = 0.0;
    double a = 0.0;
    double d = 0.0;

    double operator[](Dimension dim) const {
        switch (dim) {
            case Dimension::Valence: return v;
            case Dimension::Arousal: return a;
            case Dimension::Dominance: return d;
        }
        return 0.0;
    }

    bool in_range() const {
        for (double x : {v, a, d}) {
            if (!(x >= kScaleMin && x <= kScaleMax)) return false;
        }
        return true;
    }

    bool annotation_grade() const {
        for (double x : {v, a, d}) {
            if (!(x >= kScaleMin && x <= kScaleMax) || std::floor(x) != x) return false;
        }
        return true;
    }

    friend bool operator==(const VadTriple&, const VadTriple&) = default;
};

inline bool is_scale_value(long value) { return value >= -2 && value <= 2; }

/// Order matches the integer codes of the FER2013 `emotion` column.
enum class EmotionCategory { Angry, Disgust, Fear, Happy, Sad, Surprise, Neutral };

inline constexpr std::array<EmotionCategory, 7> kEmotionCategories = {
    EmotionCategory::Happy,   EmotionCategory::Sad,  EmotionCategory::Surprise, EmotionCategory::Angry,
    EmotionCategory::Disgust, EmotionCategory::Fear, EmotionCategory::Neutral};

constexpr std::string_view emotion_name(EmotionCategory e) {
    switch (e) {
        case EmotionCategory::Angry: return "Angry";
        case EmotionCategory::Disgust: return "Disgust";
        case EmotionCategory::Fear: return "Fear";
        case EmotionCategory::Happy: return "Happy";
        case EmotionCategory::Sad: return "Sad";
        case EmotionCategory::Surprise: return "Surprise";
        case EmotionCategory::Neutral: return "Neutral";
    }
    return "Unknown";
}

inline std::optional<EmotionCategory> emotion_from_code(long code) {
    if (code < 0 || code > 6) return std::nullopt;
    return static_cast<EmotionCategory>(code);
}

/// Anchor position of each basic emotion in VAD space.
constexpr VadTriple emotion_to_vad(EmotionCategory e) {
    switch (e) {
        case EmotionCategory::Happy: return {1.7, 1.8, 1.5};
        case EmotionCategory::Sad: return {-1.3, -1.5, -1.4};
        case EmotionCategory::Surprise: return {-1.6, 1.5, -0.5};
        case EmotionCategory::Angry: return {-2.0, 1.2, -1.0};
        case EmotionCategory::Disgust: return {-1.8, 1.2, 1.0};
        case EmotionCategory::Fear: return {-2.0, 0.5, -2.0};
        case EmotionCategory::Neutral: return {0.0, 0.0, 0.0};
    }
    return {};
}

/// Short annotator-facing descriptions shown on the reference card.
constexpr std::string_view dimension_definition(Dimension d) {
    switch (d) {
        case Dimension::Valence:
            return "How pleasant the expressed feeling is: +2 clearly pleasant, 0 neither, -2 clearly unpleasant.";
        case Dimension::Arousal:
            return "How activated or energized the face looks: +2 highly excited or alert, -2 calm, sleepy or "
                   "lethargic.";
        case Dimension::Dominance:
            return "How much control or power the person appears to feel: +2 confident and in charge, -2 "
                   "submissive, overwhelmed or controlled by the situation.";
    }
    return "";
}

}  // namespace vadnet
