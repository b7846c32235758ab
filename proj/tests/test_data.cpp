#include <fstream>
#include <map>
#include <set>

#include <gtest/gtest.h>

#include "relume/data.hpp"
#include "relume/toy.hpp"
#include "testutil.hpp"

namespace relume {
namespace {

std::vector<SceneRecord> fake_scenes(int n_scenes, int n_tags) {
    std::vector<SceneRecord> scenes;
    for (int s = 0; s < n_scenes; ++s) {
        SceneRecord rec;
        rec.scene_id = "scene_" + std::to_string(s);
        for (int t = 0; t < n_tags; ++t) {
            std::string tag = "dir_" + std::to_string(t);
            rec.images[tag] = "/fake/" + rec.scene_id + "/" + tag + ".png";
        }
        scenes.push_back(std::move(rec));
    }
    return scenes;
}

std::vector<std::string> tags_upto(int k) {
    std::vector<std::string> tags;
    for (int t = 0; t < k; ++t) tags.push_back("dir_" + std::to_string(t));
    return tags;
}

TEST(PairEnumeration, CountsMatchKChoose2) {
    EXPECT_EQ(enumerate_pairs(fake_scenes(1, 9), tags_upto(9), 0).size(), 36u);
    EXPECT_EQ(enumerate_pairs(fake_scenes(1, 2), tags_upto(2), 0).size(), 1u);
    // 985 scenes at nine lighting conditions, as in the full dataset.
    EXPECT_EQ(enumerate_pairs(fake_scenes(985, 9), tags_upto(9), 0).size(), 35460u);
}

TEST(PairEnumeration, IsAPartitionOfAllUnorderedPairs) {
    auto scenes = fake_scenes(3, 5);
    auto pairs = enumerate_pairs(scenes, tags_upto(5), 7);
    ASSERT_EQ(pairs.size(), 3u * 10u);
    std::set<std::string> seen;
    for (const auto& p : pairs) {
        EXPECT_NE(p.tag_a, p.tag_b);
        std::string lo = std::min(p.tag_a, p.tag_b), hi = std::max(p.tag_a, p.tag_b);
        auto key = p.scene_id + "|" + lo + "|" + hi;
        EXPECT_TRUE(seen.insert(key).second) << "duplicate pair " << key;
    }
    EXPECT_EQ(seen.size(), pairs.size());
}

TEST(PairEnumeration, SeedDeterminesOrderAndBranchAssignment) {
    auto scenes = fake_scenes(2, 4);
    auto a = enumerate_pairs(scenes, tags_upto(4), 11);
    auto b = enumerate_pairs(scenes, tags_upto(4), 11);
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a[i].scene_id, b[i].scene_id);
        EXPECT_EQ(a[i].tag_a, b[i].tag_a);
        EXPECT_EQ(a[i].tag_b, b[i].tag_b);
    }
    auto c = enumerate_pairs(scenes, tags_upto(4), 12);
    bool differs = false;
    for (std::size_t i = 0; i < a.size() && !differs; ++i)
        differs = a[i].scene_id != c[i].scene_id || a[i].tag_a != c[i].tag_a;
    EXPECT_TRUE(differs);
}

TEST(PairEnumeration, MissingTagNamesSceneAndTag) {
    auto scenes = fake_scenes(2, 4);
    scenes[1].images.erase("dir_2");
    try {
        enumerate_pairs(scenes, tags_upto(4), 0);
        FAIL() << "expected LoadError";
    } catch (const LoadError& e) {
        std::string msg = e.what();
        EXPECT_NE(msg.find("scene_1"), std::string::npos) << msg;
        EXPECT_NE(msg.find("dir_2"), std::string::npos) << msg;
    }
}

TEST(StyleSampling, EmptyDrawAndDeterminism) {
    StyleReferenceSet refs;
    refs.tag = "dir_4";
    for (int i = 0; i < 10; ++i) refs.paths.push_back("/fake/style_" + std::to_string(i) + ".png");
    EXPECT_TRUE(sample_style_paths(refs, 0, 3).empty());
    auto a = sample_style_paths(refs, 25, 3);
    auto b = sample_style_paths(refs, 25, 3);
    EXPECT_EQ(a, b);
}

TEST(StyleSampling, UniformWithinBinomialBound) {
    StyleReferenceSet refs;
    refs.tag = "dir_4";
    for (int i = 0; i < 10; ++i) refs.paths.push_back("/fake/style_" + std::to_string(i) + ".png");
    auto draws = sample_style_paths(refs, 10000, 0);
    std::map<fs::path, int> freq;
    for (const auto& p : draws) ++freq[p];
    ASSERT_EQ(freq.size(), 10u);
    for (const auto& [path, n] : freq) {
        EXPECT_GE(n, 800) << path;
        EXPECT_LE(n, 1200) << path;
    }
}

TEST(StyleSampling, EmptySetIsConfigError) {
    StyleReferenceSet refs;
    EXPECT_THROW(sample_style_paths(refs, 1, 0), ConfigError);
}

class ToyDatasetFixture : public ::testing::Test {
protected:
    static void SetUpTestSuite() {
        root_ = fs::temp_directory_path() / "relume_test_toy_data";
        fs::remove_all(root_);
        ToyDatasetSpec spec;
        spec.seed = 5;
        spec.canvas = 32;
        spec.shape_count = 4;
        spec.n_train_scenes = 3;
        spec.n_test_scenes = 1;
        spec.n_dirs = 4;
        generate_toy_dataset(spec, root_);
        spec_ = spec;
    }
    static void TearDownTestSuite() { fs::remove_all(root_); }

    static fs::path root_;
    static ToyDatasetSpec spec_;
};
fs::path ToyDatasetFixture::root_;
ToyDatasetSpec ToyDatasetFixture::spec_;

TEST_F(ToyDatasetFixture, EmittedImagesAreReflectanceTimesShading) {
    for (const char* split : {"train", "test"}) {
        for (const auto& scene : fs::directory_iterator(root_ / split)) {
            Image r = load_image((scene.path() / "gt" / "reflectance.png").string());
            for (int d = 0; d < spec_.n_dirs; ++d) {
                std::string tag = "dir_" + std::to_string(d);
                Image s = load_image((scene.path() / "gt" / ("shading_" + tag + ".png")).string());
                Image i = load_image((scene.path() / (tag + ".png")).string());
                Image rs = hadamard(r, s);
                float worst = 0;
                for (std::size_t k = 0; k < rs.data.size(); ++k)
                    worst = std::max(worst,
                                     std::fabs(std::clamp(rs.data[k], 0.0f, 1.0f) - i.data[k]));
                EXPECT_LE(worst, 1.0f / 255 + 1e-6f) << scene.path() << " " << tag;
            }
        }
    }
}

TEST_F(ToyDatasetFixture, ShadingStaysAboveAmbientFloor) {
    for (const char* split : {"train", "test"}) {
        for (const auto& scene : fs::directory_iterator(root_ / split)) {
            for (const auto& f : fs::directory_iterator(scene.path() / "gt")) {
                if (f.path().stem().string().rfind("shading_", 0) != 0) continue;
                Image s = load_image(f.path().string());
                for (float v : s.data) {
                    ASSERT_GE(v, 0.2f - 1e-6f) << f.path();
                    ASSERT_LE(v, 1.0f) << f.path();
                }
            }
        }
    }
}

TEST_F(ToyDatasetFixture, RampTagStrictlyIncreasesLeftToRight) {
    // dir_0 ramps along +x; its top row is outside the soft-shadow region, so
    // the emitted shading must strictly increase column to column.
    Image s = load_image((root_ / "train" / "scene_000" / "gt" / "shading_dir_0.png").string());
    for (int c = 0; c < 3; ++c)
        for (int x = 1; x < s.width; ++x)
            ASSERT_GT(s.at(0, x, c), s.at(0, x - 1, c)) << "x=" << x << " c=" << c;
}

TEST_F(ToyDatasetFixture, SameSeedIsBitIdentical) {
    fs::path again = fs::temp_directory_path() / "relume_test_toy_data_again";
    fs::remove_all(again);
    generate_toy_dataset(spec_, again);
    for (const auto& entry : fs::recursive_directory_iterator(root_)) {
        if (!entry.is_regular_file()) continue;
        fs::path rel = fs::relative(entry.path(), root_);
        std::ifstream f1(entry.path(), std::ios::binary);
        std::ifstream f2(again / rel, std::ios::binary);
        ASSERT_TRUE(f2) << rel;
        std::vector<char> b1((std::istreambuf_iterator<char>(f1)), {});
        std::vector<char> b2((std::istreambuf_iterator<char>(f2)), {});
        ASSERT_EQ(b1, b2) << rel;
    }
    fs::remove_all(again);
}

TEST_F(ToyDatasetFixture, ScanRoundTripReconstructsInventory) {
    auto scenes = scan_multiillum_layout(root_);
    int train = 0, test = 0;
    for (const auto& s : scenes) {
        if (s.split == Split::Train) {
            ++train;
            EXPECT_EQ(s.images.size(), 5u) << s.scene_id; // inputs + style tag
            EXPECT_TRUE(s.images.count("dir_4"));
        } else {
            ++test;
            EXPECT_EQ(s.images.size(), 4u) << s.scene_id; // style withheld
            EXPECT_FALSE(s.images.count("dir_4"));
        }
        for (int d = 0; d < 4; ++d) EXPECT_TRUE(s.images.count("dir_" + std::to_string(d)));
    }
    EXPECT_EQ(train, 3);
    EXPECT_EQ(test, 1);
}

TEST_F(ToyDatasetFixture, DatasetViewCollectsStyleFromTrainScenesOnly) {
    auto scenes = scan_multiillum_layout(root_);
    auto view = make_dataset_view(scenes, tags_upto(4), "dir_4");
    EXPECT_EQ(view.train_scenes.size(), 3u);
    EXPECT_EQ(view.test_scenes.size(), 1u);
    EXPECT_EQ(view.style.paths.size(), 3u);
    for (const auto& p : view.style.paths)
        EXPECT_NE(p.string().find("train"), std::string::npos) << p;
}

TEST_F(ToyDatasetFixture, PairStreamEpochsArePartitionsAndRandomAccessMatches) {
    auto scenes = scan_multiillum_layout(root_);
    auto view = make_dataset_view(scenes, tags_upto(4), "dir_4");
    PairStream stream(view, 42);
    ASSERT_EQ(stream.pairs_per_epoch(), 3u * 6u);

    for (std::uint64_t epoch = 0; epoch < 2; ++epoch) {
        std::set<std::string> seen;
        for (std::uint64_t i = 0; i < stream.pairs_per_epoch(); ++i) {
            auto p = stream.at(epoch * stream.pairs_per_epoch() + i);
            std::string lo = std::min(p.tag_a, p.tag_b), hi = std::max(p.tag_a, p.tag_b);
            seen.insert(p.scene_id + "|" + lo + "|" + hi);
        }
        EXPECT_EQ(seen.size(), stream.pairs_per_epoch()) << "epoch " << epoch;
    }

    // Random access is a pure function of position: revisiting an old
    // position after the cache moved on returns the identical pair.
    auto first = stream.at(3);
    stream.at(stream.pairs_per_epoch() + 2);
    auto again = stream.at(3);
    EXPECT_EQ(first.scene_id, again.scene_id);
    EXPECT_EQ(first.tag_a, again.tag_a);
    EXPECT_EQ(first.tag_b, again.tag_b);
}

TEST(LayoutScan, UnparsableFilenamesAreListed) {
    fs::path root = fs::temp_directory_path() / "relume_test_badscan";
    fs::remove_all(root);
    fs::create_directories(root / "sceneA");
    { std::ofstream(root / "sceneA" / "dir_0.png") << "x"; }
    { std::ofstream(root / "sceneA" / "dir_1.png") << "x"; }
    { std::ofstream(root / "sceneA" / "holiday_photo.png") << "x"; }
    try {
        scan_multiillum_layout(root);
        FAIL() << "expected LoadError";
    } catch (const LoadError& e) {
        EXPECT_NE(std::string(e.what()).find("holiday_photo"), std::string::npos) << e.what();
    }
    fs::remove_all(root);
}

TEST(LayoutScan, MissingRootIsLoadError) {
    EXPECT_THROW(scan_multiillum_layout("/nonexistent/relume_root"), LoadError);
    EXPECT_THROW(scan_vidit_layout("/nonexistent/relume_root"), LoadError);
}

class ViditFixture : public ::testing::Test {
protected:
    static void SetUpTestSuite() {
        root_ = fs::temp_directory_path() / "relume_test_vidit";
        fs::remove_all(root_);
        fs::create_directories(root_);
        for (const char* scene : {"0", "1"})
            for (const char* dir : {"N", "E", "S"})
                for (const char* temp : {"2500", "4500", "6500"}) {
                    std::ofstream(root_ / ("Image" + std::string(scene) + "_" + dir + "_" + temp +
                                           ".png"))
                        << "x";
                }
    }
    static void TearDownTestSuite() { fs::remove_all(root_); }
    static fs::path root_;
};
fs::path ViditFixture::root_;

TEST_F(ViditFixture, ParsesSceneDirectionTemperatureTags) {
    auto scenes = scan_vidit_layout(root_);
    ASSERT_EQ(scenes.size(), 2u);
    for (const auto& s : scenes) {
        EXPECT_EQ(s.images.size(), 9u);
        EXPECT_TRUE(s.images.count("E_4500"));
        EXPECT_TRUE(s.images.count("N_2500"));
    }
}

TEST_F(ViditFixture, SingleTemperatureRegimeKeepsOnlyStyleTemperature) {
    auto scenes = scan_vidit_layout(root_);
    auto sel = vidit_regime_tags(scenes, ViditRegime::SingleTemperature, "E_4500");
    EXPECT_EQ(sel.style_tag, "E_4500");
    std::set<std::string> inputs(sel.input_tags.begin(), sel.input_tags.end());
    EXPECT_EQ(inputs, (std::set<std::string>{"N_4500", "S_4500"}));
}

TEST_F(ViditFixture, AllToTargetRegimeMarksExactlyOneStyleTag) {
    auto scenes = scan_vidit_layout(root_);
    auto sel = vidit_regime_tags(scenes, ViditRegime::AllToTarget, "E_4500");
    EXPECT_EQ(sel.style_tag, "E_4500");
    EXPECT_EQ(sel.input_tags.size(), 8u); // all nine tags minus the style tag
    for (const auto& t : sel.input_tags) EXPECT_NE(t, "E_4500");
}

TEST_F(ViditFixture, MissingStyleTagIsConfigError) {
    auto scenes = scan_vidit_layout(root_);
    EXPECT_THROW(vidit_regime_tags(scenes, ViditRegime::AllToTarget, "W_9000"), ConfigError);
}

TEST(AccessAudit, RolesAreRecordedAndQueryable) {
    AccessLog log;
    log.record("/a.png", AccessRole::TrainInput);
    log.record("/b.png", AccessRole::StyleReal);
    log.record("/c.png", AccessRole::EvalTarget);
    EXPECT_TRUE(log.touched("/b.png"));
    EXPECT_FALSE(log.touched("/z.png"));
    EXPECT_EQ(log.with_role(AccessRole::StyleReal).size(), 1u);
    EXPECT_EQ(log.with_role(AccessRole::TrainInput)[0].path, fs::path("/a.png"));
    EXPECT_STREQ(access_role_name(AccessRole::StyleReal), "style_real");
    log.clear();
    EXPECT_TRUE(log.events().empty());
}

TEST(DatasetView, RejectsStyleTagInInputsAndMissingTrainTags) {
    auto scenes = fake_scenes(2, 5);
    EXPECT_THROW(make_dataset_view(scenes, tags_upto(5), "dir_4"), InvalidArgumentError);
    auto bad = fake_scenes(2, 4);
    bad[0].images.erase("dir_1");
    // style pool needs the tag present somewhere; attach to the other scene
    bad[1].images["dir_9"] = "/fake/style.png";
    try {
        make_dataset_view(bad, tags_upto(4), "dir_9");
        FAIL() << "expected LoadError";
    } catch (const LoadError& e) {
        std::string msg = e.what();
        EXPECT_NE(msg.find("scene_0"), std::string::npos) << msg;
        EXPECT_NE(msg.find("dir_1"), std::string::npos) << msg;
    }
}

} // namespace
} // namespace relume
