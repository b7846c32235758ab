#pragma once

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "relume/image_io.hpp"
#include "relume/random.hpp"

namespace relume {

namespace fs = std::filesystem;

enum class Split { Train, Test };

struct SceneRecord {
    std::string scene_id;
    std::map<std::string, fs::path> images; // illumination tag -> file
    Split split = Split::Train;
};

/// Unordered within-scene pair; branch assignment (a vs b) is decided at
/// enumeration time.
struct IlluminationPair {
    std::string scene_id;
    std::string tag_a, tag_b;
    fs::path path_a, path_b;
};

struct StyleReferenceSet {
    std::string tag;
    std::vector<fs::path> paths;
};

// ---------------------------------------------------------------------------
// access audit: every image read during training can be attributed to a role
// ---------------------------------------------------------------------------

enum class AccessRole { TrainInput, StyleReal, EvalTarget };

inline const char* access_role_name(AccessRole r) {
    switch (r) {
    case AccessRole::TrainInput: return "train_input";
    case AccessRole::StyleReal: return "style_real";
    case AccessRole::EvalTarget: return "eval_target";
    }
    return "?";
}

struct AccessEvent {
    fs::path path;
    AccessRole role;
};

class AccessLog {
public:
    void record(const fs::path& path, AccessRole role) { events_.push_back({path, role}); }
    const std::vector<AccessEvent>& events() const { return events_; }
    void clear() { events_.clear(); }

    bool touched(const fs::path& path) const {
        for (const auto& e : events_)
            if (e.path == path) return true;
        return false;
    }
    std::vector<AccessEvent> with_role(AccessRole role) const {
        std::vector<AccessEvent> out;
        for (const auto& e : events_)
            if (e.role == role) out.push_back(e);
        return out;
    }

private:
    std::vector<AccessEvent> events_;
};

inline Image load_image_logged(const fs::path& path, AccessRole role, AccessLog* log) {
    if (log) log->record(path, role);
    return load_image(path.string());
}

// ---------------------------------------------------------------------------
// pair enumeration
// ---------------------------------------------------------------------------

namespace detail {

template <typename T>
inline void shuffle_inplace(std::vector<T>& v, Rng& rng) {
    for (std::size_t i = v.size(); i > 1; --i)
        std::swap(v[i - 1], v[static_cast<std::size_t>(rng.uniform_index(i))]);
}

} // namespace detail

/// One epoch of pairs: every unordered tag pair of every scene exactly once,
/// order shuffled and branch assignment randomized by `seed`.
inline std::vector<IlluminationPair> enumerate_pairs(const std::vector<SceneRecord>& scenes,
                                                     const std::vector<std::string>& tags,
                                                     std::uint64_t seed) {
    require(tags.size() >= 2, "enumerate_pairs: need at least two tags");
    std::vector<IlluminationPair> pairs;
    for (const auto& scene : scenes) {
        for (const auto& tag : tags)
            if (!scene.images.count(tag))
                throw LoadError("enumerate_pairs: scene '" + scene.scene_id + "' is missing tag '" +
                                tag + "'");
        for (std::size_t i = 0; i < tags.size(); ++i)
            for (std::size_t j = i + 1; j < tags.size(); ++j)
                pairs.push_back({scene.scene_id, tags[i], tags[j], scene.images.at(tags[i]),
                                 scene.images.at(tags[j])});
    }
    Rng rng(seed);
    detail::shuffle_inplace(pairs, rng);
    for (auto& p : pairs)
        if (rng.uniform() < 0.5) {
            std::swap(p.tag_a, p.tag_b);
            std::swap(p.path_a, p.path_b);
        }
    return pairs;
}

/// Uniform with-replacement draw of n style paths; deterministic per seed.
inline std::vector<fs::path> sample_style_paths(const StyleReferenceSet& refs, std::size_t n,
                                                std::uint64_t seed) {
    if (refs.paths.empty()) throw ConfigError("sample_style_batch: style reference set is empty");
    Rng rng(seed);
    std::vector<fs::path> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i)
        out.push_back(refs.paths[static_cast<std::size_t>(rng.uniform_index(refs.paths.size()))]);
    return out;
}

struct StyleBatch {
    std::vector<fs::path> paths;
    std::vector<Image> images;
};

inline StyleBatch sample_style_batch(const StyleReferenceSet& refs, std::size_t n,
                                     std::uint64_t seed, AccessLog* log = nullptr) {
    StyleBatch batch;
    batch.paths = sample_style_paths(refs, n, seed);
    for (const auto& p : batch.paths)
        batch.images.push_back(load_image_logged(p, AccessRole::StyleReal, log));
    return batch;
}

// ---------------------------------------------------------------------------
// layout adapters
// ---------------------------------------------------------------------------

namespace detail {

inline bool has_image_ext(const fs::path& p) {
    std::string e = p.extension().string();
    for (auto& c : e) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return e == ".png" || e == ".jpg" || e == ".jpeg";
}

// dir_<k> with integer k.
inline bool parse_direction_tag(const std::string& stem, std::string& tag) {
    if (stem.rfind("dir_", 0) != 0 || stem.size() == 4) return false;
    for (std::size_t i = 4; i < stem.size(); ++i)
        if (!std::isdigit(static_cast<unsigned char>(stem[i]))) return false;
    tag = stem;
    return true;
}

inline void scan_scene_dirs(const fs::path& root, Split split, std::vector<SceneRecord>& out,
                            std::vector<fs::path>& bad) {
    std::vector<fs::path> scene_dirs;
    for (const auto& entry : fs::directory_iterator(root))
        if (entry.is_directory()) scene_dirs.push_back(entry.path());
    std::sort(scene_dirs.begin(), scene_dirs.end());
    for (const auto& dir : scene_dirs) {
        SceneRecord rec;
        rec.scene_id = dir.filename().string();
        rec.split = split;
        for (const auto& entry : fs::directory_iterator(dir)) {
            if (!entry.is_regular_file() || !has_image_ext(entry.path())) continue;
            std::string tag;
            if (parse_direction_tag(entry.path().stem().string(), tag))
                rec.images[tag] = entry.path();
            else
                bad.push_back(entry.path());
        }
        if (!rec.images.empty()) out.push_back(std::move(rec));
    }
}

inline std::string join_paths(const std::vector<fs::path>& paths) {
    std::string s;
    for (const auto& p : paths) {
        if (!s.empty()) s += ", ";
        s += p.string();
    }
    return s;
}

} // namespace detail

/// Layout: `<root>/<scene>/dir_<k>.{png,jpg,jpeg}`, optionally under `train/`
/// and `test/` split directories. Subdirectories inside a scene (e.g. ground
/// truth sidecars) are ignored; image files that do not parse as direction
/// tags are a load error.
inline std::vector<SceneRecord> scan_multiillum_layout(const fs::path& root) {
    if (!fs::exists(root)) throw LoadError("scan_multiillum_layout: root does not exist: " + root.string());
    std::vector<SceneRecord> scenes;
    std::vector<fs::path> bad;
    bool split_layout = fs::exists(root / "train") || fs::exists(root / "test");
    if (split_layout) {
        if (fs::exists(root / "train")) detail::scan_scene_dirs(root / "train", Split::Train, scenes, bad);
        if (fs::exists(root / "test")) detail::scan_scene_dirs(root / "test", Split::Test, scenes, bad);
    } else {
        detail::scan_scene_dirs(root, Split::Train, scenes, bad);
    }
    if (!bad.empty())
        throw LoadError("scan_multiillum_layout: unparsable image filenames: " + detail::join_paths(bad));
    if (scenes.empty())
        throw LoadError("scan_multiillum_layout: no scenes found under " + root.string());
    return scenes;
}

/// Layout: flat files `Image<scene>_<direction>_<temperature>.png`; the
/// illumination tag is `<direction>_<temperature>`.
inline std::vector<SceneRecord> scan_vidit_layout(const fs::path& root) {
    if (!fs::exists(root)) throw LoadError("scan_vidit_layout: root does not exist: " + root.string());
    std::map<std::string, SceneRecord> by_scene;
    std::vector<fs::path> bad;
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(root))
        if (entry.is_regular_file() && detail::has_image_ext(entry.path())) files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    for (const auto& p : files) {
        std::string stem = p.stem().string();
        // Image<scene>_<dir>_<temp>
        std::string scene, dir, temp;
        bool ok = stem.rfind("Image", 0) == 0;
        if (ok) {
            std::string rest = stem.substr(5);
            auto u1 = rest.find('_');
            auto u2 = rest.rfind('_');
            ok = u1 != std::string::npos && u2 != std::string::npos && u2 > u1;
            if (ok) {
                scene = rest.substr(0, u1);
                dir = rest.substr(u1 + 1, u2 - u1 - 1);
                temp = rest.substr(u2 + 1);
                ok = !scene.empty() && !dir.empty() && !temp.empty() &&
                     std::all_of(temp.begin(), temp.end(),
                                 [](char c) { return std::isdigit(static_cast<unsigned char>(c)); });
            }
        }
        if (!ok) {
            bad.push_back(p);
            continue;
        }
        SceneRecord& rec = by_scene[scene];
        rec.scene_id = scene;
        rec.images[dir + "_" + temp] = p;
    }
    if (!bad.empty())
        throw LoadError("scan_vidit_layout: unparsable image filenames: " + detail::join_paths(bad));
    if (by_scene.empty()) throw LoadError("scan_vidit_layout: no scenes found under " + root.string());
    std::vector<SceneRecord> scenes;
    for (auto& [id, rec] : by_scene) scenes.push_back(std::move(rec));
    return scenes;
}

enum class ViditRegime {
    SingleTemperature, // one colour temperature; style = target direction at it
    AllToTarget,       // every direction/temperature is an input; one style tag
};

struct TagSelection {
    std::vector<std::string> input_tags;
    std::string style_tag;
};

/// Derives input/style tags for the two supported training regimes. The
/// style tag (default E_4500) is excluded from the pairing pool.
inline TagSelection vidit_regime_tags(const std::vector<SceneRecord>& scenes, ViditRegime regime,
                                      const std::string& style_tag = "E_4500") {
    require(!scenes.empty(), "vidit_regime_tags: empty scene list");
    std::set<std::string> all_tags;
    for (const auto& s : scenes)
        for (const auto& [tag, _] : s.images) all_tags.insert(tag);
    if (!all_tags.count(style_tag))
        throw ConfigError("vidit_regime_tags: style tag not present in dataset: " + style_tag);
    auto temp_of = [](const std::string& tag) { return tag.substr(tag.rfind('_') + 1); };
    TagSelection sel;
    sel.style_tag = style_tag;
    std::string style_temp = temp_of(style_tag);
    for (const auto& tag : all_tags) {
        if (tag == style_tag) continue;
        if (regime == ViditRegime::SingleTemperature && temp_of(tag) != style_temp) continue;
        sel.input_tags.push_back(tag);
    }
    if (sel.input_tags.size() < 2)
        throw ConfigError("vidit_regime_tags: fewer than two input tags for the chosen regime");
    return sel;
}

// ---------------------------------------------------------------------------
// dataset view used by training
// ---------------------------------------------------------------------------

struct DatasetView {
    std::vector<SceneRecord> train_scenes; // sorted by scene_id
    std::vector<SceneRecord> test_scenes;
    std::vector<std::string> input_tags;
    StyleReferenceSet style;
};

/// Splits scenes, validates tag completeness on train scenes, and collects
/// the style pool from training scenes only.
inline DatasetView make_dataset_view(const std::vector<SceneRecord>& scenes,
                                     const std::vector<std::string>& input_tags,
                                     const std::string& style_tag) {
    require(input_tags.size() >= 2, "make_dataset_view: need at least two input tags");
    require(!style_tag.empty(), "make_dataset_view: style tag must be set");
    for (const auto& t : input_tags)
        require(t != style_tag, "make_dataset_view: style tag must not be an input tag");
    DatasetView view;
    view.input_tags = input_tags;
    view.style.tag = style_tag;
    for (const auto& s : scenes)
        (s.split == Split::Train ? view.train_scenes : view.test_scenes).push_back(s);
    auto by_id = [](const SceneRecord& a, const SceneRecord& b) { return a.scene_id < b.scene_id; };
    std::sort(view.train_scenes.begin(), view.train_scenes.end(), by_id);
    std::sort(view.test_scenes.begin(), view.test_scenes.end(), by_id);
    if (view.train_scenes.empty()) throw ConfigError("make_dataset_view: no training scenes");
    for (const auto& s : view.train_scenes) {
        for (const auto& t : input_tags)
            if (!s.images.count(t))
                throw LoadError("make_dataset_view: train scene '" + s.scene_id +
                                "' is missing tag '" + t + "'");
        auto it = s.images.find(style_tag);
        if (it != s.images.end()) view.style.paths.push_back(it->second);
    }
    if (view.style.paths.empty())
        throw ConfigError("make_dataset_view: no style images with tag '" + style_tag + "'");
    return view;
}

/// Pair sequence as a pure function of (seed, position): epoch e is the
/// seeded enumeration with seed mix_seed(seed, e), and consecutive epochs
/// concatenate. Resume-exact: position alone recovers the stream state.
class PairStream {
public:
    PairStream(const DatasetView& view, std::uint64_t seed) : view_(&view), seed_(seed) {
        per_epoch_ = view.train_scenes.size() * n_choose_2(view.input_tags.size());
        require(per_epoch_ > 0, "PairStream: empty pair pool");
    }

    std::uint64_t pairs_per_epoch() const { return per_epoch_; }

    IlluminationPair at(std::uint64_t position) const {
        std::uint64_t epoch = position / per_epoch_;
        std::uint64_t offset = position % per_epoch_;
        if (epoch != cached_epoch_ || cache_.empty()) {
            cache_ = enumerate_pairs(view_->train_scenes, view_->input_tags, mix_seed(seed_, epoch));
            cached_epoch_ = epoch;
        }
        return cache_[static_cast<std::size_t>(offset)];
    }

    static std::uint64_t n_choose_2(std::size_t k) {
        return static_cast<std::uint64_t>(k) * (k - 1) / 2;
    }

private:
    const DatasetView* view_;
    std::uint64_t seed_;
    std::uint64_t per_epoch_ = 0;
    mutable std::uint64_t cached_epoch_ = ~0ull;
    mutable std::vector<IlluminationPair> cache_;
};

} // namespace relume
