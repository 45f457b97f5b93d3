#include <catch_amalgamated.hpp>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <random>

#include "cvdcm/cvdcm.hpp"

using namespace cvdcm;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        static std::atomic<int> counter{0};
        path = fs::temp_directory_path() /
               ("cvdcm_dm_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("make_semantic_vector derives the unsegmented remainder") {
    std::array<double, kNumProportions> props{};
    props[0] = 0.5;
    props[1] = 0.3;  // sum 0.8
    auto v = make_semantic_vector(2.0, props, "test");
    CHECK(v.car_count == 2.0);
    CHECK(v.unsegmented == Catch::Approx(0.2).margin(1e-12));
    double total = v.unsegmented;
    for (double p : v.proportions) total += p;
    CHECK(total == Catch::Approx(1.0).margin(1e-9));
}

TEST_CASE("make_semantic_vector renormalises over-coverage up to tau") {
    std::array<double, kNumProportions> props{};
    props[0] = 0.6;
    props[1] = 0.415;  // sum 1.015, inside (1, 1.02]
    bool renorm = false;
    auto v = make_semantic_vector(0.0, props, "test", &renorm);
    CHECK(renorm);
    double sum = 0.0;
    for (double p : v.proportions) sum += p;
    CHECK(sum + v.unsegmented == Catch::Approx(1.0).margin(1e-9));
    CHECK(v.unsegmented == Catch::Approx(0.0).margin(1e-12));
}

TEST_CASE("make_semantic_vector rejects invalid rows") {
    std::array<double, kNumProportions> props{};
    props[0] = 0.9;
    props[1] = 0.6;  // sum 1.5 > 1 + tau
    CHECK_THROWS_AS(make_semantic_vector(0.0, props, "test"), ValidationError);

    props = {};
    props[0] = -0.1;
    CHECK_THROWS_AS(make_semantic_vector(0.0, props, "test"), ValidationError);

    props = {};
    CHECK_THROWS_AS(make_semantic_vector(-1.0, props, "test"), ValidationError);
}

TEST_CASE("semantic labels round-trip byte-for-byte and flag renormalised rows") {
    TempDir dir;
    LabelStore labels;
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0.0, 0.1);
    for (int i = 0; i < 20; ++i) {
        std::array<double, kNumProportions> props{};
        for (double& p : props) p = u(rng);
        labels["img" + std::to_string(i)] = make_semantic_vector(u(rng) * 30.0, props, "gen");
    }
    write_semantic_labels(dir.file("s.csv"), labels);
    SemanticLoadReport report;
    auto loaded = load_semantic_labels(dir.file("s.csv"), &report);
    REQUIRE(loaded.size() == labels.size());
    CHECK(report.renormalised_ids.empty());
    // write(load(f)) == f byte-for-byte
    write_semantic_labels(dir.file("s2.csv"), loaded);
    CHECK(slurp(dir.file("s.csv")) == slurp(dir.file("s2.csv")));

    // A row whose proportions sum to 1.015 is renormalised and flagged.
    std::string csv = kSemanticsHeader + "\nimgx,1,0.6,0.415,0,0,0,0,0,0,0\n";
    csv::write_file(dir.file("renorm.csv"), csv);
    SemanticLoadReport r2;
    auto l2 = load_semantic_labels(dir.file("renorm.csv"), &r2);
    REQUIRE(r2.renormalised_ids == std::vector<std::string>{"imgx"});
    double sum = l2["imgx"].unsegmented;
    for (double p : l2["imgx"].proportions) sum += p;
    CHECK(sum == Catch::Approx(1.0).margin(1e-9));
}

TEST_CASE("load_choice_data validates structure") {
    TempDir dir;
    SECTION("minimal valid file") {
        csv::write_file(dir.file("c.csv"), kChoicesHeader +
                                               "\no1,r1,0,imga,1.5,-0.5,1\no1,r1,1,imgb,0.25,2,0\n");
        auto obs = load_choice_data(dir.file("c.csv"));
        REQUIRE(obs.size() == 1);
        CHECK(obs[0].chosen == 0);
        CHECK(obs[0].alternatives[0].image_id == "imga");
        CHECK(obs[0].alternatives[1].numeric_attrs[1] == 2.0);
    }
    SECTION("both alternatives chosen") {
        csv::write_file(dir.file("c.csv"), kChoicesHeader +
                                               "\no1,r1,0,imga,1,1,1\no1,r1,1,imgb,1,1,1\n");
        CHECK_THROWS_WITH(load_choice_data(dir.file("c.csv")),
                          Catch::Matchers::ContainsSubstring("chosen-count"));
    }
    SECTION("duplicate (obs_id, alt_id)") {
        csv::write_file(dir.file("c.csv"), kChoicesHeader +
                                               "\no1,r1,0,imga,1,1,1\no1,r1,0,imgb,1,1,0\n");
        CHECK_THROWS_AS(load_choice_data(dir.file("c.csv")), ValidationError);
    }
    SECTION("observation with one alternative") {
        csv::write_file(dir.file("c.csv"), kChoicesHeader + "\no1,r1,0,imga,1,1,1\n");
        CHECK_THROWS_WITH(load_choice_data(dir.file("c.csv")),
                          Catch::Matchers::ContainsSubstring("exactly 2 alternatives"));
    }
    SECTION("bad header") {
        csv::write_file(dir.file("c.csv"), "obs,alt\n");
        CHECK_THROWS_AS(load_choice_data(dir.file("c.csv")), ValidationError);
    }
}

TEST_CASE("choice data round-trips bit-identically and loads order-insensitively") {
    TempDir dir;
    SyntheticSpec spec;
    spec.n_observations = 10;
    spec.n_images = 6;
    spec.k = 4;
    spec.sigma_z = 0.25;
    spec.test_fraction = 0.0;
    auto data = simulate_dataset(spec);
    write_choice_data(dir.file("c.csv"), data.dataset.observations);
    auto loaded = load_choice_data(dir.file("c.csv"));
    write_choice_data(dir.file("c2.csv"), loaded);
    CHECK(slurp(dir.file("c.csv")) == slurp(dir.file("c2.csv")));

    // Permute the data rows: same keyed result.
    std::ifstream in(dir.file("c.csv"));
    std::string header, line;
    std::getline(in, header);
    std::vector<std::string> rows;
    while (std::getline(in, line))
        if (!line.empty()) rows.push_back(line);
    std::reverse(rows.begin(), rows.end());
    std::string shuffled = header + "\n";
    for (const auto& r : rows) shuffled += r + "\n";
    csv::write_file(dir.file("c3.csv"), shuffled);
    auto reloaded = load_choice_data(dir.file("c3.csv"));
    REQUIRE(reloaded.size() == loaded.size());
    for (std::size_t i = 0; i < loaded.size(); ++i) {
        CHECK(reloaded[i].obs_id == loaded[i].obs_id);
        CHECK(reloaded[i].chosen == loaded[i].chosen);
        CHECK(reloaded[i].alternatives[0].image_id == loaded[i].alternatives[0].image_id);
    }
}

TEST_CASE("embedding store lookup and bounds checks") {
    TempDir dir;
    EmbeddingStore store(4);
    store.add("img_a", {1.0f, 2.0f, 3.0f, 4.0f});
    store.add("img_b", {5.0f, 6.0f, 7.0f, 8.0f});
    CHECK(store.lookup("img_a")[0] == 1.0f);
    CHECK(store.lookup("img_b")[3] == 8.0f);
    CHECK_THROWS_AS(store.lookup("img_c"), ValidationError);
    CHECK_THROWS_AS(store.add("img_a", {0, 0, 0, 0}), ValidationError);  // duplicate
    CHECK_THROWS_AS(store.add("img_c", {0, 0}), ValidationError);       // wrong K

    store.save(dir.file("e.bin"), dir.file("e.idx.csv"));
    // Index referencing an out-of-range row.
    csv::write_file(dir.file("bad.idx.csv"), EmbeddingStore::kIndexHeader + "\nimg_a,5\n");
    CHECK_THROWS_WITH(EmbeddingStore::load(dir.file("e.bin"), dir.file("bad.idx.csv")),
                      Catch::Matchers::ContainsSubstring("out of range"));
    // Bad magic.
    csv::write_file(dir.file("bad.bin"), "NOTMAGIC........");
    CHECK_THROWS_WITH(EmbeddingStore::load(dir.file("bad.bin"), dir.file("e.idx.csv")),
                      Catch::Matchers::ContainsSubstring("bad magic"));
}

TEST_CASE("1000 random K=768 embeddings round-trip bitwise") {
    TempDir dir;
    const int k = 768;
    EmbeddingStore store(k, 1000);
    std::mt19937_64 rng(99);
    std::normal_distribution<float> n01(0.0f, 1.0f);
    std::vector<float> z(k);
    for (int i = 0; i < 1000; ++i) {
        for (float& v : z) v = n01(rng);
        store.add("img" + std::to_string(i), z);
    }
    store.save(dir.file("e.bin"), dir.file("e.idx.csv"));
    auto loaded = EmbeddingStore::load(dir.file("e.bin"), dir.file("e.idx.csv"));
    REQUIRE(loaded.rows() == 1000);
    REQUIRE(loaded.k() == k);
    loaded.save(dir.file("e2.bin"), dir.file("e2.idx.csv"));
    CHECK(slurp(dir.file("e.bin")) == slurp(dir.file("e2.bin")));
    CHECK(slurp(dir.file("e.idx.csv")) == slurp(dir.file("e2.idx.csv")));
    // Values are bitwise equal through the store API too.
    for (int i = 0; i < 1000; i += 97) {
        const float* a = store.lookup("img" + std::to_string(i));
        const float* b = loaded.lookup("img" + std::to_string(i));
        CHECK(std::memcmp(a, b, sizeof(float) * k) == 0);
    }
}

TEST_CASE("split validation enforces obs and image disjointness") {
    std::vector<ChoiceObservation> obs(2);
    obs[0].obs_id = "o1";
    obs[0].alternatives[0].image_id = "a";
    obs[0].alternatives[1].image_id = "b";
    obs[1].obs_id = "o2";
    obs[1].alternatives[0].image_id = "c";
    obs[1].alternatives[1].image_id = "d";

    DatasetSplit ok;
    ok.train_ids = {"o1"};
    ok.test_ids = {"o2"};
    CHECK_NOTHROW(ok.validate(obs));

    DatasetSplit overlap = ok;
    overlap.test_ids.insert("o1");
    CHECK_THROWS_AS(overlap.validate(obs), ValidationError);

    // Shared image between splits.
    obs[1].alternatives[0].image_id = "b";
    CHECK_THROWS_WITH(ok.validate(obs), Catch::Matchers::ContainsSubstring("train and test"));
}

TEST_CASE("split csv round-trips") {
    TempDir dir;
    DatasetSplit split;
    split.train_ids = {"o1", "o3"};
    split.test_ids = {"o2"};
    write_split(dir.file("s.csv"), split);
    auto loaded = load_split(dir.file("s.csv"));
    CHECK(loaded.train_ids == split.train_ids);
    CHECK(loaded.test_ids == split.test_ids);
    write_split(dir.file("s2.csv"), loaded);
    CHECK(slurp(dir.file("s.csv")) == slurp(dir.file("s2.csv")));

    csv::write_file(dir.file("bad.csv"), kSplitHeader + "\no1,validation\n");
    CHECK_THROWS_AS(load_split(dir.file("bad.csv")), ValidationError);
}

TEST_CASE("zone map round-trips with optional coordinates") {
    TempDir dir;
    ZoneMap zones;
    zones["img_a"] = {"Z1", 4.47, 51.92};
    zones["img_b"] = {"Z1", std::nullopt, std::nullopt};
    zones["img_c"] = {"Z2", -0.5, std::nullopt};
    write_zone_map(dir.file("z.csv"), zones);
    auto loaded = load_zone_map(dir.file("z.csv"));
    REQUIRE(loaded.size() == 3);
    CHECK(loaded["img_a"].zone_id == "Z1");
    CHECK(loaded["img_a"].lon == 4.47);
    CHECK_FALSE(loaded["img_b"].lat.has_value());
    write_zone_map(dir.file("z2.csv"), loaded);
    CHECK(slurp(dir.file("z.csv")) == slurp(dir.file("z2.csv")));

    csv::write_file(dir.file("dup.csv"), kZonesHeader + "\nimg_a,Z1,,\nimg_a,Z2,,\n");
    CHECK_THROWS_WITH(load_zone_map(dir.file("dup.csv")),
                      Catch::Matchers::ContainsSubstring("more than one zone"));
}

TEST_CASE("manifest resolves paths relative to its own directory") {
    TempDir dir;
    fs::create_directories(dir.path / "sub");
    Manifest m;
    m.choices_path = dir.file("sub/choices.csv");
    m.embeddings_path = dir.file("sub/e.bin");
    m.embeddings_index_path = dir.file("sub/e.idx.csv");
    m.k = 16;
    m.hhcost_unit = "EUR/month";
    m.save(dir.file("sub/manifest.json"));
    auto loaded = Manifest::load(dir.file("sub/manifest.json"));
    CHECK(fs::path(loaded.choices_path) == fs::path(dir.file("sub/choices.csv")));
    CHECK(loaded.k == 16);
    CHECK(loaded.hhcost_unit == "EUR/month");
    CHECK(loaded.semantics_path.empty());
}

TEST_CASE("validate_dataset reports inconsistencies") {
    SyntheticSpec spec;
    spec.n_observations = 30;
    spec.n_images = 10;
    spec.k = 4;
    spec.sigma_z = 0.25;
    spec.n_zones = 2;
    auto data = simulate_dataset(spec);

    SECTION("fully consistent dataset") {
        auto r = validate_dataset(data.dataset);
        CHECK(r.issues.empty());
        CHECK(r.trainable_phase1);
        CHECK(r.trainable_phase23);
        CHECK(r.k == 4);
        CHECK(r.j == kNumAlternatives);
    }
    SECTION("missing embedding") {
        EmbeddingStore partial(spec.k);
        std::vector<float> z(static_cast<std::size_t>(spec.k), 0.0f);
        const std::string& skipped = data.dataset.observations[0].alternatives[0].image_id;
        for (const auto& id : data.image_ids)
            if (id != skipped) partial.add(id, z);
        auto r = validate_dataset(data.dataset.observations, partial, &data.dataset.labels);
        CHECK(r.count("missing embedding") == 1);
        CHECK_FALSE(r.trainable_phase23);
    }
    SECTION("missing labels disable phase 1 only") {
        LabelStore partial = data.dataset.labels;
        partial.erase(data.dataset.observations[0].alternatives[0].image_id);
        auto r = validate_dataset(data.dataset.observations, data.dataset.embeddings, &partial);
        CHECK(r.count("missing label") >= 1);
        CHECK_FALSE(r.trainable_phase1);
        CHECK(r.trainable_phase23);
    }
}

TEST_CASE("full dataset writes and reloads through the manifest") {
    TempDir dir;
    SyntheticSpec spec;
    spec.n_observations = 50;
    spec.n_images = 12;
    spec.k = 6;
    spec.sigma_z = 0.25;
    spec.n_zones = 3;
    auto data = simulate_dataset(spec);
    write_synthetic_dataset(dir.path.string(), data, spec);

    auto d = Dataset::load(Manifest::load(dir.file("manifest.json")));
    d.bind();
    REQUIRE(d.observations.size() == data.dataset.observations.size());
    CHECK(d.labels.size() == data.dataset.labels.size());
    CHECK(d.zones.size() == data.dataset.zones.size());
    CHECK(d.embeddings.rows() == data.dataset.embeddings.rows());
    CHECK(d.split.train_ids == data.dataset.split.train_ids);
    CHECK(d.split.test_ids == data.dataset.split.test_ids);
    auto train = d.split_indices(true);
    auto test = d.split_indices(false);
    CHECK(train.size() + test.size() == d.observations.size());
    CHECK(validate_dataset(d).issues.empty());
}
