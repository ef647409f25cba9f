#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "da4lg/dataset.hpp"
#include "da4lg/errors.hpp"

using namespace da4lg;
namespace fs = std::filesystem;

namespace {

SynthSpec small_spec() {
    SynthSpec s;
    s.seed = 3;
    s.n_objects = 8;
    s.n_references = 24;
    s.image_size = 32;
    s.views = 4;
    return s;
}

struct TempDir {
    fs::path path;
    TempDir(const char* tag) {
        path = fs::temp_directory_path() / (std::string("da4lg_test_") + tag);
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("synthetic generation is deterministic in memory") {
    GroundingDataset a = generate_synthetic(small_spec());
    GroundingDataset b = generate_synthetic(small_spec());
    REQUIRE(a.objects.size() == b.objects.size());
    REQUIRE(a.references.size() == b.references.size());
    CHECK(a.vocabulary == b.vocabulary);
    for (std::size_t i = 0; i < a.references.size(); ++i) {
        CHECK(a.references[i].description == b.references[i].description);
        CHECK(a.references[i].target == b.references[i].target);
    }
    for (const auto& [id, obj] : a.objects) {
        const auto& other = b.objects.at(id);
        for (std::size_t v = 0; v < obj.views.size(); ++v)
            CHECK(obj.views[v].pixels == other.views[v].pixels);
    }
}

TEST_CASE("different seeds give different pixels") {
    SynthSpec s1 = small_spec(), s2 = small_spec();
    s2.seed = 4;
    GroundingDataset a = generate_synthetic(s1);
    GroundingDataset b = generate_synthetic(s2);
    bool any_diff = false;
    for (const auto& [id, obj] : a.objects) {
        auto it = b.objects.find(id);
        if (it == b.objects.end() || obj.views[0].pixels != it->second.views[0].pixels)
            any_diff = true;
    }
    CHECK(any_diff);
}

TEST_CASE("references pair same-shape objects and honor annotation semantics") {
    GroundingDataset ds = generate_synthetic(small_spec());
    REQUIRE_FALSE(ds.truth.empty());
    for (const auto& ref : ds.references) {
        const auto& t0 = ds.truth.at(ref.candidates[0]);
        const auto& t1 = ds.truth.at(ref.candidates[1]);
        CHECK(t0.at("shape") == t1.at("shape"));
        CHECK((ref.target == ref.candidates[0] || ref.target == ref.candidates[1]));
        if (ref.annotation == Annotation::visual) {
            // a visual reference must be decidable by color alone
            CHECK(t0.at("color") != t1.at("color"));
        } else {
            // blind pairs share color so only shape attributes disambiguate
            CHECK(t0.at("color") == t1.at("color"));
            CHECK((t0.at("size") != t1.at("size") || t0.at("part") != t1.at("part")));
        }
    }
}

TEST_CASE("visual_fraction endpoints") {
    SynthSpec s = small_spec();
    s.visual_fraction = 0.0;
    for (const auto& r : generate_synthetic(s).references)
        CHECK(r.annotation == Annotation::blind);
    s.visual_fraction = 1.0;
    for (const auto& r : generate_synthetic(s).references)
        CHECK(r.annotation == Annotation::visual);
}

TEST_CASE("splits are a stable partition with all three present at scale") {
    SynthSpec s = small_spec();
    s.n_references = 200;
    s.n_objects = 16;
    GroundingDataset ds = generate_synthetic(s);
    int n_train = static_cast<int>(ds.split_refs(Split::train).size());
    int n_val = static_cast<int>(ds.split_refs(Split::validation).size());
    int n_test = static_cast<int>(ds.split_refs(Split::test).size());
    CHECK(n_train + n_val + n_test == 200);
    CHECK(n_train > n_val);
    CHECK(n_val > 0);
    CHECK(n_test > 0);
    // split assignment hashes the reference id, so it survives regeneration
    GroundingDataset again = generate_synthetic(s);
    for (std::size_t i = 0; i < ds.references.size(); ++i)
        CHECK(ds.references[i].split == again.references[i].split);
}

TEST_CASE("save and load round-trip") {
    TempDir dir("roundtrip");
    GroundingDataset ds = generate_synthetic(small_spec());
    save_dataset(ds, dir.path.string());
    GroundingDataset back = load_dataset(dir.path.string());
    CHECK(back.objects.size() == ds.objects.size());
    CHECK(back.references.size() == ds.references.size());
    CHECK(back.vocabulary == ds.vocabulary);
    CHECK(back.view_count() == 4);
    CHECK(back.image_size() == 32);
    for (const auto& [id, obj] : ds.objects)
        CHECK(back.objects.at(id).views[1].pixels == obj.views[1].pixels);
    for (std::size_t i = 0; i < ds.references.size(); ++i) {
        CHECK(back.references[i].description == ds.references[i].description);
        CHECK(back.references[i].annotation == ds.references[i].annotation);
        CHECK(back.references[i].split == ds.references[i].split);
    }
}

TEST_CASE("load reports a missing view file by path") {
    TempDir dir("missing");
    GroundingDataset ds = generate_synthetic(small_spec());
    save_dataset(ds, dir.path.string());
    fs::path victim = dir.path / ds.objects.begin()->second.view_paths[0];
    fs::remove(victim);
    try {
        load_dataset(dir.path.string());
        FAIL("expected LoadError");
    } catch (const LoadError& e) {
        CHECK(std::string(e.what()).find(ds.objects.begin()->second.view_paths[0]) !=
              std::string::npos);
    }
}

TEST_CASE("load rejects a reference whose target is not a candidate") {
    TempDir dir("badref");
    GroundingDataset ds = generate_synthetic(small_spec());
    ds.references[0].target = "nonexistent_object";
    save_dataset(ds, dir.path.string());
    try {
        load_dataset(dir.path.string());
        FAIL("expected SchemaError");
    } catch (const SchemaError& e) {
        CHECK(std::string(e.what()).find(ds.references[0].reference_id) != std::string::npos);
    }
}

TEST_CASE("load rejects a truncated manifest line") {
    TempDir dir("badjson");
    GroundingDataset ds = generate_synthetic(small_spec());
    save_dataset(ds, dir.path.string());
    std::ofstream out(dir.path / "manifest.jsonl", std::ios::app);
    out << "{\"type\": \"object\", \"object_id\"\n";
    out.close();
    CHECK_THROWS_AS(load_dataset(dir.path.string()), SchemaError);
}

TEST_CASE("ppm round-trip preserves pixels") {
    TempDir dir("ppm");
    ViewImage img;
    img.width = 3;
    img.height = 2;
    img.pixels = {0, 1, 2, 250, 251, 252, 10, 20, 30, 40, 50, 60, 70, 80, 90, 100, 110, 120};
    fs::path p = dir.path / "x.ppm";
    write_ppm(p.string(), img);
    ViewImage back = read_ppm(p.string());
    CHECK(back.width == 3);
    CHECK(back.height == 2);
    CHECK(back.pixels == img.pixels);
}

TEST_CASE("ppm reader skips comments and rejects bad magic") {
    TempDir dir("ppmhdr");
    {
        std::ofstream f(dir.path / "c.ppm", std::ios::binary);
        f << "P6\n# a comment line\n2 1\n# another\n255\n";
        const unsigned char px[6] = {1, 2, 3, 4, 5, 6};
        f.write(reinterpret_cast<const char*>(px), 6);
    }
    ViewImage img = read_ppm((dir.path / "c.ppm").string());
    CHECK(img.width == 2);
    CHECK(img.at(1, 0, 2) == 6);
    {
        std::ofstream f(dir.path / "bad.ppm", std::ios::binary);
        f << "P5\n1 1\n255\nx";
    }
    CHECK_THROWS_AS(read_ppm((dir.path / "bad.ppm").string()), LoadError);
}

TEST_CASE("tokenizer id layout and reserved tokens") {
    Tokenizer tok({"red", "cube", "small"});
    CHECK(tok.vocab_size() == 7);
    auto ids = tok.encode("red cube", 16);
    CHECK(ids == std::vector<int>{1, 4, 5, 2});
    auto unk = tok.encode("red dragon", 16);
    CHECK(unk == std::vector<int>{1, 4, 3, 2});
}

TEST_CASE("tokenizer truncation keeps EOS last") {
    Tokenizer tok({"w"});
    std::string text;
    for (int i = 0; i < 40; ++i) text += "w ";
    auto ids = tok.encode(text, 16);
    CHECK(ids.size() == 16);
    CHECK(ids.front() == Tokenizer::kBos);
    CHECK(ids.back() == Tokenizer::kEos);
    for (std::size_t i = 1; i + 1 < ids.size(); ++i) CHECK(ids[i] == 4);
}

TEST_CASE("tokenizer argument validation") {
    CHECK_THROWS_AS(Tokenizer({}), ConfigError);
    Tokenizer tok({"a"});
    CHECK_THROWS_AS(tok.encode("a", 1), ArgumentError);
}

TEST_CASE("dataset vocabulary covers every description") {
    GroundingDataset ds = generate_synthetic(small_spec());
    Tokenizer tok(ds.vocabulary);
    for (const auto& ref : ds.references) {
        auto ids = tok.encode(ref.description, 64);
        for (int id : ids) CHECK(id != Tokenizer::kUnk);
    }
}

TEST_CASE("string converters round-trip and reject junk") {
    CHECK(annotation_from_string("visual") == Annotation::visual);
    CHECK(split_from_string(to_string(Split::validation)) == Split::validation);
    CHECK_THROWS_AS(annotation_from_string("purple"), SchemaError);
    CHECK_THROWS_AS(split_from_string(""), SchemaError);
}
