#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <vector>

#include "vadnet/dataset.hpp"
#include "vadnet/vad.hpp"

namespace vadnet {

/// Renders a 48x48 cartoon face whose features encode a VAD triple:
/// mouth curvature follows valence, eye opening follows arousal and brow
/// slant follows dominance. `seed` drives brightness, placement jitter and
/// pixel noise, so equal (triple, seed) pairs give identical pixels.
inline std::array<std::uint8_t, kImagePixels> render_face(const VadTriple& triple, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> jitter(-1.0, 1.0);
    std::normal_distribution<double> noise(0.0, 6.0);
    const double dx = jitter(rng), dy = jitter(rng);
    const double skin = 150.0 + 15.0 * jitter(rng);
    const double background = 45.0 + 10.0 * jitter(rng);
    const double cx = 24.0 + dx, cy = 25.0 + dy;

    const double eye_ry = 1.2 + 0.55 * (triple.a + 2.0);
    const double mouth_bend = 1.6 * triple.v;
    const double brow_tilt = 0.45 * triple.d;

    std::array<std::uint8_t, kImagePixels> px{};
    for (std::size_t y = 0; y < kImageSide; ++y) {
        for (std::size_t x = 0; x < kImageSide; ++x) {
            const double fx = static_cast<double>(x) - cx;
            const double fy = static_cast<double>(y) - cy;
            double value = background;
            if ((fx * fx) / (17.0 * 17.0) + (fy * fy) / (21.0 * 21.0) <= 1.0) value = skin;
            for (double side : {-1.0, 1.0}) {
                const double ex = fx - side * 7.0, ey = fy + 6.0;
                if ((ex * ex) / 9.0 + (ey * ey) / (eye_ry * eye_ry) <= 1.0) value = 30.0;
                // Brows rise toward the outer edge when dominance is positive.
                const double bx = fx - side * 7.0;
                if (std::abs(bx) <= 4.0) {
                    const double brow_y = -12.0 - brow_tilt * side * bx;
                    if (std::abs(fy - brow_y) <= 0.8) value = 60.0;
                }
            }
            if (std::abs(fx) <= 8.0) {
                const double t = fx / 8.0;
                const double mouth_y = 10.0 - mouth_bend * (t * t - 0.5);
                if (std::abs(fy - mouth_y) <= 1.0) value = 55.0;
            }
            value += noise(rng);
            px[y * kImageSide + x] = static_cast<std::uint8_t>(std::clamp(std::lround(value), 0L, 255L));
        }
    }
    return px;
}

/// Nearest anchor (Euclidean) to a triple; used to fill the emotion column.
inline EmotionCategory nearest_emotion(const VadTriple& t) {
    EmotionCategory best = EmotionCategory::Neutral;
    double best_d = std::numeric_limits<double>::infinity();
    for (EmotionCategory e : kEmotionCategories) {
        const VadTriple a = emotion_to_vad(e);
        const double d = (a.v - t.v) * (a.v - t.v) + (a.a - t.a) * (a.a - t.a) + (a.d - t.d) * (a.d - t.d);
        if (d < best_d) {
            best_d = d;
            best = e;
        }
    }
    return best;
}

struct SyntheticFixture {
    std::vector<FaceImage> images;
    std::vector<AnnotationRecord> records;
};

/// `count` rendered faces with uniformly drawn 5-point labels, one
/// annotation each. Splits cycle 8:1:1 (Training:PublicTest:PrivateTest)
/// unless `all_training`.
inline SyntheticFixture make_fixture(std::size_t count, std::uint64_t seed, bool all_training = false) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> scale(-2, 2);
    SyntheticFixture fx;
    for (std::size_t i = 0; i < count; ++i) {
        const VadTriple t{static_cast<double>(scale(rng)), static_cast<double>(scale(rng)),
                          static_cast<double>(scale(rng))};
        FaceImage image;
        image.index = i;
        image.pixels = render_face(t, rng());
        image.category = nearest_emotion(t);
        image.split = all_training || i % 10 < 8 ? Split::Training
                      : i % 10 == 8             ? Split::PublicTest
                                                : Split::PrivateTest;
        fx.images.push_back(image);
        fx.records.push_back({i, "synthetic", t, 1700000000, false});
    }
    return fx;
}

}  // namespace vadnet
