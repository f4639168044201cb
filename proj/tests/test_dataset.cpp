#include <algorithm>
#include <random>
#include <sstream>
#include <string>

#include <gtest/gtest.h>

#include "vadnet/dataset.hpp"
#include "vadnet/synthetic.hpp"
#include "vadnet/vad.hpp"

using namespace vadnet;

namespace {

std::string pixel_row(std::size_t count, int value = 0) {
    std::string row;
    for (std::size_t i = 0; i < count; ++i) {
        if (i) row += ' ';
        row += std::to_string(value);
    }
    return row;
}

ErrorKind kind_of(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.kind();
    }
    ADD_FAILURE() << "no error thrown";
    return ErrorKind::Io;
}

std::string message_of(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.what();
    }
    return {};
}

AnnotationRecord rec(std::size_t image, std::string who, VadTriple t) { return {image, std::move(who), t, 0, false}; }

}  // namespace

TEST(Fer2013, SingleBlackRow) {
    std::istringstream in("emotion,pixels,Usage\n3," + pixel_row(2304) + ",Training\n");
    const auto images = parse_fer2013(in);
    ASSERT_EQ(images.size(), 1u);
    EXPECT_EQ(images[0].index, 0u);
    EXPECT_EQ(images[0].split, Split::Training);
    EXPECT_EQ(images[0].category, EmotionCategory::Happy);
    EXPECT_TRUE(std::all_of(images[0].pixels.begin(), images[0].pixels.end(), [](auto p) { return p == 0; }));
}

TEST(Fer2013, ShortPixelRowNamesTheRow) {
    std::istringstream in("emotion,pixels,Usage\n0," + pixel_row(2304) + ",Training\n0," + pixel_row(2303) +
                          ",PublicTest\n");
    const std::string msg = message_of([&] { parse_fer2013(in); });
    EXPECT_NE(msg.find("row 3"), std::string::npos) << msg;
    EXPECT_NE(msg.find("2303"), std::string::npos) << msg;
}

TEST(Fer2013, RejectsUnknownUsageAndHeader) {
    std::istringstream bad_usage("emotion,pixels,Usage\n0," + pixel_row(2304) + ",Validation\n");
    EXPECT_EQ(kind_of([&] { parse_fer2013(bad_usage); }), ErrorKind::Parse);
    std::istringstream bad_header("label,pixels,Usage\n");
    EXPECT_EQ(kind_of([&] { parse_fer2013(bad_header); }), ErrorKind::Parse);
    std::istringstream bad_pixel("emotion,pixels,Usage\n0," + pixel_row(2303) + " 256,Training\n");
    EXPECT_EQ(kind_of([&] { parse_fer2013(bad_pixel); }), ErrorKind::Parse);
}

TEST(Fer2013, EmotionCodesFollowConvention) {
    std::string text = "emotion,pixels,Usage\n";
    for (int code = 0; code < 7; ++code) text += std::to_string(code) + "," + pixel_row(2304, 7) + ",PrivateTest\n";
    std::istringstream in(text);
    const auto images = parse_fer2013(in);
    const EmotionCategory expected[] = {EmotionCategory::Angry, EmotionCategory::Disgust, EmotionCategory::Fear,
                                        EmotionCategory::Happy, EmotionCategory::Sad,     EmotionCategory::Surprise,
                                        EmotionCategory::Neutral};
    ASSERT_EQ(images.size(), 7u);
    for (int i = 0; i < 7; ++i) {
        EXPECT_EQ(images[i].category, expected[i]);
        EXPECT_EQ(images[i].split, Split::PrivateTest);
    }
}

TEST(Fer2013, RoundTripIsExact) {
    const auto fx = make_fixture(25, 11);
    std::ostringstream out;
    write_fer2013(out, fx.images);
    std::istringstream in(out.str());
    const auto parsed = parse_fer2013(in);
    ASSERT_EQ(parsed.size(), fx.images.size());
    for (std::size_t i = 0; i < parsed.size(); ++i) {
        EXPECT_EQ(parsed[i].pixels, fx.images[i].pixels);
        EXPECT_EQ(parsed[i].split, fx.images[i].split);
        EXPECT_EQ(parsed[i].category, fx.images[i].category);
    }
    std::ostringstream again;
    write_fer2013(again, parsed);
    EXPECT_EQ(again.str(), out.str());
}

TEST(EmotionAnchors, MatchReferenceTable) {
    EXPECT_EQ(emotion_to_vad(EmotionCategory::Happy), (VadTriple{1.7, 1.8, 1.5}));
    EXPECT_EQ(emotion_to_vad(EmotionCategory::Neutral), (VadTriple{0, 0, 0}));
    EXPECT_EQ(emotion_to_vad(EmotionCategory::Fear), (VadTriple{-2, 0.5, -2}));
    EXPECT_EQ(kEmotionCategories.size(), 7u);
    for (EmotionCategory e : kEmotionCategories) EXPECT_TRUE(emotion_to_vad(e).in_range()) << emotion_name(e);
}

TEST(Annotations, ParsesCanonicalRow) {
    std::istringstream in(std::string(kAnnotationHeader) + "\n12,ann1,-1,2,0,1700000000\n");
    const auto records = load_annotations(in);
    ASSERT_EQ(records.size(), 1u);
    EXPECT_EQ(records[0].image_index, 12u);
    EXPECT_EQ(records[0].annotator_id, "ann1");
    EXPECT_EQ(records[0].triple, (VadTriple{-1, 2, 0}));
    EXPECT_EQ(records[0].timestamp, 1700000000);
}

TEST(Annotations, RejectsOutOfScaleWithRow) {
    std::istringstream in(std::string(kAnnotationHeader) + "\n1,a,0,0,0,1\n2,a,3,0,0,1\n");
    const std::string msg = message_of([&] { load_annotations(in); });
    EXPECT_NE(msg.find("validation"), std::string::npos) << msg;
    EXPECT_NE(msg.find("row 3"), std::string::npos) << msg;
}

TEST(Annotations, RejectsDuplicatePair) {
    std::istringstream in(std::string(kAnnotationHeader) + "\n1,a,0,0,0,1\n1,a,1,1,1,2\n");
    EXPECT_EQ(kind_of([&] { load_annotations(in); }), ErrorKind::Duplicate);
    std::istringstream distinct(std::string(kAnnotationHeader) + "\n1,a,0,0,0,1\n1,b,1,1,1,2\n");
    EXPECT_EQ(load_annotations(distinct).size(), 2u);
}

TEST(Annotations, ReducedFormImportsAsPublished) {
    std::istringstream in(std::string(kReducedAnnotationHeader) + "\n4,1,-2,0\n9,0,0,2\n");
    const auto records = load_annotations(in);
    ASSERT_EQ(records.size(), 2u);
    EXPECT_EQ(records[0].annotator_id, kPublishedAnnotator);
    EXPECT_EQ(records[1].triple, (VadTriple{0, 0, 2}));
}

TEST(Annotations, WriteThenLoadRoundTrips) {
    std::mt19937_64 rng(5);
    std::uniform_int_distribution<int> s(-2, 2);
    std::vector<AnnotationRecord> records;
    for (std::size_t i = 0; i < 40; ++i) {
        records.push_back({rng() % 30, "ann" + std::to_string(i % 3), {double(s(rng)), double(s(rng)), double(s(rng))},
                           static_cast<std::int64_t>(1700000000 + i), false});
    }
    std::sort(records.begin(), records.end(), [](const auto& a, const auto& b) {
        return std::tie(a.image_index, a.annotator_id) < std::tie(b.image_index, b.annotator_id);
    });
    records.erase(std::unique(records.begin(), records.end(),
                              [](const auto& a, const auto& b) {
                                  return a.image_index == b.image_index && a.annotator_id == b.annotator_id;
                              }),
                  records.end());
    std::vector<AnnotationRecord> shuffled = records;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    std::ostringstream out;
    write_annotations(out, shuffled);
    std::istringstream in(out.str());
    EXPECT_EQ(load_annotations(in), records);
}

TEST(Consistency, SingleAnnotatorAccepted) {
    const std::vector<AnnotationRecord> records{rec(3, "a", {1, -2, 0})};
    const auto out = consistency_filter(records, 1, 0);
    ASSERT_EQ(out.size(), 1u);
    EXPECT_EQ(out[0].label, (VadTriple{1, -2, 0}));
}

TEST(Consistency, EvenMedianRoundsTowardZero) {
    const std::vector<AnnotationRecord> records{rec(0, "a", {1, 1, 1}), rec(0, "b", {1, 2, 1})};
    const auto out = consistency_filter(records, 1, 1);
    ASSERT_TRUE(out[0].label);
    EXPECT_EQ(*out[0].label, (VadTriple{1, 1, 1}));
    const std::vector<AnnotationRecord> negative{rec(0, "a", {-1, 0, 0}), rec(0, "b", {-2, 0, 0})};
    EXPECT_EQ(consistency_filter(negative, 1, 1)[0].label->v, -1.0);
}

TEST(Consistency, WideSpreadRejected) {
    const std::vector<AnnotationRecord> records{rec(0, "a", {0, 0, -2}), rec(0, "b", {0, 0, 2})};
    const auto out = consistency_filter(records, 1, 1);
    EXPECT_FALSE(out[0].label);
    EXPECT_NE(out[0].rejection.find("dominance"), std::string::npos);
    EXPECT_FALSE(consistency_filter(records, 3, 4)[0].label);
    EXPECT_TRUE(consistency_filter(records, 2, 4)[0].label);
}

TEST(Consistency, PermutationInvariant) {
    std::mt19937_64 rng(17);
    std::uniform_int_distribution<int> s(-2, 2);
    std::vector<AnnotationRecord> records;
    for (std::size_t image = 0; image < 20; ++image) {
        for (int who = 0; who < 4; ++who) {
            records.push_back(rec(image, "ann" + std::to_string(who), {double(s(rng)), double(s(rng)), double(s(rng))}));
        }
    }
    const auto reference = accepted_labels(consistency_filter(records, 2, 3));
    for (int trial = 0; trial < 10; ++trial) {
        std::shuffle(records.begin(), records.end(), rng);
        EXPECT_EQ(accepted_labels(consistency_filter(records, 2, 3)), reference);
    }
}

TEST(Distribution, HandCountedExample) {
    const std::vector<VadTriple> labels{{-1, 2, 0}, {-1, 1, 1}};
    const VadDistribution table = vad_distribution(labels);
    const VadDistribution expected{{{0, 2, 0, 0, 0}, {0, 0, 0, 1, 1}, {0, 0, 1, 1, 0}}};
    EXPECT_EQ(table, expected);
    EXPECT_EQ(vad_distribution({}), VadDistribution{});
}

TEST(Distribution, RowSumsEqualLabelCount) {
    const auto fx = make_fixture(137, 3);
    std::vector<VadTriple> labels;
    for (const auto& r : fx.records) labels.push_back(r.triple);
    for (const auto& row : vad_distribution(labels)) {
        std::size_t total = 0;
        for (std::size_t c : row) total += c;
        EXPECT_EQ(total, labels.size());
    }
}

TEST(TrainingSet, AscendingOrderAndScaling) {
    std::vector<FaceImage> images(3);
    for (std::size_t i = 0; i < 3; ++i) images[i].index = 10 - i;
    images[0].pixels.fill(255);
    const std::map<std::size_t, VadTriple> labels{{10, {1, 1, 1}}, {8, {-1, 0, 2}}};
    const LabeledSet set = to_training_set(images, labels);
    ASSERT_EQ(set.size(), 2u);
    EXPECT_EQ(set.indices, (std::vector<std::size_t>{8, 10}));
    EXPECT_EQ(set.targets[0], (VadTriple{-1, 0, 2}));
    EXPECT_EQ(set.image(1)[0], 1.0);
    EXPECT_EQ(set.image(0)[0], 0.0);
}

TEST(TrainingSet, DanglingIndexNamed) {
    std::vector<FaceImage> images(1);
    const std::map<std::size_t, VadTriple> labels{{42, {0, 0, 0}}};
    const std::string msg = message_of([&] { to_training_set(images, labels); });
    EXPECT_NE(msg.find("missing-image"), std::string::npos) << msg;
    EXPECT_NE(msg.find("42"), std::string::npos) << msg;
}

TEST(TrainingSet, SplitFilter) {
    const auto fx = make_fixture(50, 1);
    std::map<std::size_t, VadTriple> labels;
    for (const auto& r : fx.records) labels[r.image_index] = r.triple;
    const auto counts = count_labels_by_split(labels, fx.images);
    EXPECT_EQ(counts.training, 40u);
    EXPECT_EQ(counts.public_test, 5u);
    EXPECT_EQ(counts.private_test, 5u);
    EXPECT_EQ(to_training_set(fx.images, labels, Split::PublicTest).size(), 5u);
}

TEST(Exclusions, SkipsCommentsAndBlanks) {
    std::istringstream in("# bad crops\n3\n\n17\r\n");
    EXPECT_EQ(read_exclusion_list(in), (std::set<std::size_t>{3, 17}));
    std::istringstream bad("x\n");
    EXPECT_EQ(kind_of([&] { read_exclusion_list(bad); }), ErrorKind::Parse);
}

TEST(Synthetic, FixtureIsDeterministic) {
    const auto a = make_fixture(20, 9);
    const auto b = make_fixture(20, 9);
    ASSERT_EQ(a.images.size(), b.images.size());
    for (std::size_t i = 0; i < a.images.size(); ++i) EXPECT_EQ(a.images[i].pixels, b.images[i].pixels);
    EXPECT_EQ(a.records, b.records);
    const auto c = make_fixture(20, 10);
    EXPECT_NE(a.images[0].pixels, c.images[0].pixels);
}

TEST(Synthetic, FeaturesTrackTheTriple) {
    // Same seed, different valence: only the mouth band changes.
    const auto happy = render_face({2, 0, 0}, 1);
    const auto sad = render_face({-2, 0, 0}, 1);
    std::size_t differing = 0;
    for (std::size_t i = 0; i < kImagePixels; ++i) differing += happy[i] != sad[i];
    EXPECT_GT(differing, 10u);
    EXPECT_LT(differing, 200u);
}
