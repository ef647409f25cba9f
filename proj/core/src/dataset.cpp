#include "da4lg/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include <json.hpp>

#include "da4lg/errors.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace da4lg {

const char* to_string(Annotation a) { return a == Annotation::visual ? "visual" : "blind"; }
const char* to_string(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::validation: return "validation";
        default: return "test";
    }
}

Annotation annotation_from_string(const std::string& s) {
    if (s == "visual") return Annotation::visual;
    if (s == "blind") return Annotation::blind;
    throw SchemaError("unknown annotation '" + s + "'");
}

Split split_from_string(const std::string& s) {
    if (s == "train") return Split::train;
    if (s == "validation") return Split::validation;
    if (s == "test") return Split::test;
    throw SchemaError("unknown split '" + s + "'");
}

int GroundingDataset::view_count() const {
    if (objects.empty()) return 0;
    return static_cast<int>(objects.begin()->second.views.size());
}

int GroundingDataset::image_size() const {
    if (objects.empty()) return 0;
    return objects.begin()->second.views.front().width;
}

ViewLayout GroundingDataset::layout() const {
    int j = view_count();
    if (j == 8) return ViewLayout::snare8;
    if (j == 5) return ViewLayout::sim5;
    return ViewLayout::custom;
}

std::vector<const ReferenceRecord*> GroundingDataset::split_refs(Split s) const {
    std::vector<const ReferenceRecord*> out;
    for (const auto& r : references)
        if (r.split == s) out.push_back(&r);
    return out;
}

namespace {

void validate(const GroundingDataset& ds) {
    std::set<std::string> ref_ids;
    for (const auto& [id, obj] : ds.objects) {
        if (obj.views.empty())
            throw SchemaError("object " + id + " has no views");
        int w = obj.views.front().width, h = obj.views.front().height;
        for (const auto& v : obj.views)
            if (v.width != w || v.height != h)
                throw SchemaError("object " + id + " has views of differing dimensions");
        if (static_cast<int>(obj.views.size()) != ds.view_count())
            throw SchemaError("object " + id + " has a view count differing from the dataset layout");
    }
    for (const auto& r : ds.references) {
        if (!ref_ids.insert(r.reference_id).second)
            throw SchemaError("duplicate reference_id " + r.reference_id);
        if (r.description.empty())
            throw SchemaError("reference " + r.reference_id + " has an empty description");
        if (r.candidates[0] == r.candidates[1])
            throw SchemaError("reference " + r.reference_id + " has duplicate candidates");
        for (const auto& c : r.candidates)
            if (!ds.objects.count(c))
                throw SchemaError("reference " + r.reference_id + " names unknown object " + c);
        if (r.target != r.candidates[0] && r.target != r.candidates[1])
            throw SchemaError("reference " + r.reference_id + " target is not among its candidates");
    }
}

std::uint64_t fnv1a64(const std::string& s) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

}  // namespace

GroundingDataset load_dataset(const std::string& root) {
    fs::path rp(root);
    fs::path manifest = rp / "manifest.jsonl";
    std::ifstream in(manifest);
    if (!in) throw LoadError("missing manifest file " + manifest.string());

    GroundingDataset ds;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw SchemaError("manifest line " + std::to_string(lineno) + ": " + e.what());
        }
        std::string type = j.value("type", "");
        if (type == "object") {
            ObjectRecord obj;
            obj.object_id = j.at("object_id").get<std::string>();
            obj.category = j.value("category", "");
            for (const auto& v : j.at("views")) {
                std::string rel = v.get<std::string>();
                fs::path p = rp / rel;
                if (!fs::exists(p)) throw LoadError("missing image file " + p.string());
                obj.view_paths.push_back(rel);
                obj.views.push_back(read_ppm(p.string()));
            }
            if (!ds.objects.emplace(obj.object_id, std::move(obj)).second)
                throw SchemaError("duplicate object_id " + j.at("object_id").get<std::string>());
        } else if (type == "reference") {
            ReferenceRecord r;
            r.reference_id = j.at("reference_id").get<std::string>();
            r.description = j.at("description").get<std::string>();
            auto cands = j.at("candidates");
            if (cands.size() != 2)
                throw SchemaError("reference " + r.reference_id + " must have exactly 2 candidates");
            r.candidates[0] = cands[0].get<std::string>();
            r.candidates[1] = cands[1].get<std::string>();
            r.target = j.at("target").get<std::string>();
            r.annotation = annotation_from_string(j.at("annotation").get<std::string>());
            r.split = split_from_string(j.at("split").get<std::string>());
            ds.references.push_back(std::move(r));
        } else {
            throw SchemaError("manifest line " + std::to_string(lineno) + ": unknown record type '" + type + "'");
        }
    }

    std::ifstream vf(rp / "vocab.txt");
    if (vf) {
        std::string w;
        while (std::getline(vf, w))
            if (!w.empty()) ds.vocabulary.push_back(w);
    }
    std::ifstream tf(rp / "truth.jsonl");
    if (tf) {
        while (std::getline(tf, line)) {
            if (line.empty()) continue;
            json j = json::parse(line);
            std::map<std::string, std::string> attrs;
            for (auto& [k, v] : j.at("attributes").items()) attrs[k] = v.get<std::string>();
            ds.truth[j.at("object_id").get<std::string>()] = std::move(attrs);
        }
    }

    validate(ds);
    return ds;
}

void save_dataset(const GroundingDataset& ds, const std::string& root) {
    fs::path rp(root);
    fs::create_directories(rp / "views");
    std::ofstream out(rp / "manifest.jsonl");
    if (!out) throw LoadError("cannot write manifest in " + root);
    for (const auto& [id, obj] : ds.objects) {
        json j;
        j["type"] = "object";
        j["object_id"] = obj.object_id;
        j["category"] = obj.category;
        j["views"] = obj.view_paths;
        out << j.dump() << "\n";
        for (std::size_t k = 0; k < obj.views.size(); ++k)
            write_ppm((rp / obj.view_paths[k]).string(), obj.views[k]);
    }
    for (const auto& r : ds.references) {
        json j;
        j["type"] = "reference";
        j["reference_id"] = r.reference_id;
        j["description"] = r.description;
        j["candidates"] = {r.candidates[0], r.candidates[1]};
        j["target"] = r.target;
        j["annotation"] = to_string(r.annotation);
        j["split"] = to_string(r.split);
        out << j.dump() << "\n";
    }
    if (!ds.vocabulary.empty()) {
        std::ofstream vf(rp / "vocab.txt");
        for (const auto& w : ds.vocabulary) vf << w << "\n";
    }
    if (!ds.truth.empty()) {
        std::ofstream tf(rp / "truth.jsonl");
        for (const auto& [id, attrs] : ds.truth) {
            json j;
            j["object_id"] = id;
            j["attributes"] = attrs;
            tf << j.dump() << "\n";
        }
    }
}

// ---------------------------------------------------------------------------
// Synthetic generator
// ---------------------------------------------------------------------------

namespace {

struct Attrs {
    int shape, color, size, part;
};

const std::vector<std::string> kShapes = {"cube", "ball", "pyramid", "ring"};
const std::vector<std::string> kColors = {"red", "green", "blue", "yellow", "purple", "orange"};
const std::array<std::array<int, 3>, 6> kColorRgb = {{{220, 40, 40},
                                                      {40, 200, 60},
                                                      {50, 80, 230},
                                                      {230, 220, 50},
                                                      {160, 60, 200},
                                                      {240, 150, 40}}};
const std::vector<std::string> kSizes = {"small", "large"};
const std::vector<std::string> kParts = {"plain", "stripe", "dot"};

bool in_shape(int shape, double u, double v, double r) {
    switch (shape) {
        case 0: return std::abs(u) <= r && std::abs(v) <= r;
        case 1: return u * u + v * v <= r * r;
        case 2: return v >= -r && v <= r && std::abs(u) <= (r - v) * 0.5;
        default: {
            double d2 = u * u + v * v;
            return d2 <= r * r && d2 >= 0.25 * r * r;
        }
    }
}

ViewImage render_view(const Attrs& a, int view_idx, int views, int size) {
    ViewImage img;
    img.width = img.height = size;
    img.pixels.assign(static_cast<std::size_t>(size) * size * 3, 0);

    double s = static_cast<double>(size);
    // Deterministic per-view "camera": shift, scale, rotation.
    double dx = ((view_idx * 37 % 7) - 3) / 24.0 * s;
    double dy = ((view_idx * 53 % 7) - 3) / 24.0 * s;
    double zoom = 1.0 - 0.07 * (view_idx * 29 % 4);
    double theta = views > 0 ? 2.0 * 3.14159265358979323846 * view_idx / views : 0.0;
    double ct = std::cos(theta), st = std::sin(theta);

    double r = (a.size == 1 ? 0.40 : 0.24) * s * zoom;
    double cx = s / 2.0 + dx, cy = s / 2.0 + dy;
    std::uint8_t bg = static_cast<std::uint8_t>(36 + 6 * (view_idx % 3));
    const auto& rgb = kColorRgb[a.color];

    for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
            double px = x + 0.5 - cx, py = y + 0.5 - cy;
            double u = ct * px + st * py;
            double v = -st * px + ct * py;
            std::uint8_t c0 = bg, c1 = bg, c2 = bg;
            if (in_shape(a.shape, u, v, r)) {
                c0 = static_cast<std::uint8_t>(rgb[0]);
                c1 = static_cast<std::uint8_t>(rgb[1]);
                c2 = static_cast<std::uint8_t>(rgb[2]);
                if (a.part == 1 && std::abs(v) <= r / 5.0) {  // stripe
                    c0 = static_cast<std::uint8_t>(rgb[0] / 3);
                    c1 = static_cast<std::uint8_t>(rgb[1] / 3);
                    c2 = static_cast<std::uint8_t>(rgb[2] / 3);
                } else if (a.part == 2 && u * u + v * v <= (r / 4.0) * (r / 4.0)) {  // dot
                    c0 = c1 = c2 = 245;
                }
            }
            img.at(x, y, 0) = c0;
            img.at(x, y, 1) = c1;
            img.at(x, y, 2) = c2;
        }
    }
    return img;
}

std::string pad_id(const char* prefix, int i) {
    std::ostringstream os;
    os << prefix << "_";
    std::string n = std::to_string(i);
    for (std::size_t k = n.size(); k < 4; ++k) os << '0';
    os << n;
    return os.str();
}

}  // namespace

GroundingDataset generate_synthetic(const SynthSpec& spec) {
    if (spec.n_objects < 2) throw ConfigError("synthetic spec requires n_objects >= 2");
    if (spec.visual_fraction < 0.0 || spec.visual_fraction > 1.0)
        throw ConfigError("visual_fraction must lie in [0,1]");
    if (spec.views < 1) throw ConfigError("synthetic spec requires views >= 1");
    if (spec.image_size < 8) throw ConfigError("synthetic spec requires image_size >= 8");

    std::mt19937_64 rng(spec.seed);
    auto pick = [&rng](int n) { return static_cast<int>(rng() % static_cast<std::uint64_t>(n)); };

    GroundingDataset ds;

    // Objects come in same-shape pairs: "visual" pairs differ in color, "blind"
    // pairs share color and differ in size or part. References then always have
    // a distractor that matches the required annotation.
    int n_pairs = spec.n_objects / 2;
    int n_visual_pairs = static_cast<int>(std::lround(spec.visual_fraction * n_pairs));
    if (spec.visual_fraction > 0.0 && n_visual_pairs == 0 && n_pairs > 1) n_visual_pairs = 1;
    if (spec.visual_fraction < 1.0 && n_visual_pairs == n_pairs && n_pairs > 1) n_visual_pairs = n_pairs - 1;

    std::vector<std::pair<int, int>> visual_pairs, blind_pairs;
    std::vector<Attrs> attrs;
    auto add_object = [&](const Attrs& a) {
        int idx = static_cast<int>(attrs.size());
        attrs.push_back(a);
        ObjectRecord obj;
        obj.object_id = pad_id("obj", idx);
        obj.category = kShapes[a.shape];
        for (int j = 0; j < spec.views; ++j) {
            obj.view_paths.push_back("views/" + obj.object_id + "_v" + std::to_string(j) + ".ppm");
            obj.views.push_back(render_view(a, j, spec.views, spec.image_size));
        }
        ds.truth[obj.object_id] = {{"shape", kShapes[a.shape]},
                                   {"color", kColors[a.color]},
                                   {"size", kSizes[a.size]},
                                   {"part", kParts[a.part]}};
        ds.objects.emplace(obj.object_id, std::move(obj));
        return idx;
    };

    for (int p = 0; p < n_pairs; ++p) {
        Attrs base{pick(4), pick(6), pick(2), pick(3)};
        Attrs partner = base;
        bool visual = p < n_visual_pairs;
        if (visual) {
            partner.color = (base.color + 1 + pick(5)) % 6;
        } else if (pick(2) == 0) {
            partner.size = 1 - base.size;
        } else {
            partner.part = (base.part + 1 + pick(2)) % 3;
        }
        int a = add_object(base);
        int b = add_object(partner);
        (visual ? visual_pairs : blind_pairs).push_back({a, b});
    }
    if (spec.n_objects % 2 == 1)
        add_object(Attrs{pick(4), pick(6), pick(2), pick(3)});

    int n_visual_refs = static_cast<int>(std::lround(spec.visual_fraction * spec.n_references));
    if (visual_pairs.empty()) n_visual_refs = 0;
    if (blind_pairs.empty()) n_visual_refs = spec.n_references;

    for (int k = 0; k < spec.n_references; ++k) {
        bool visual = k < n_visual_refs;
        const auto& pool = visual ? visual_pairs : blind_pairs;
        auto [ia, ib] = pool[pick(static_cast<int>(pool.size()))];
        if (pick(2) == 1) std::swap(ia, ib);
        const Attrs& t = attrs[ia];
        const Attrs& d = attrs[ib];

        ReferenceRecord r;
        r.reference_id = pad_id("ref", k);
        r.candidates = {pad_id("obj", ia), pad_id("obj", ib)};
        r.target = r.candidates[0];
        if (visual) {
            r.description = "the " + kColors[t.color] + " " + kShapes[t.shape];
            r.annotation = Annotation::visual;
        } else {
            if (t.size != d.size)
                r.description = "the " + kSizes[t.size] + " " + kShapes[t.shape];
            else if (t.part == 0)
                r.description = "the plain " + kShapes[t.shape];
            else
                r.description = "the " + kShapes[t.shape] + " with a " + kParts[t.part];
            r.annotation = Annotation::blind;
        }
        std::uint64_t h = fnv1a64(r.reference_id) % 10;
        r.split = h < 7 ? Split::train : (h < 9 ? Split::validation : Split::test);
        ds.references.push_back(std::move(r));
    }

    // Vocabulary: caller-provided tokens first, generator template words appended.
    std::set<std::string> seen(spec.vocabulary.begin(), spec.vocabulary.end());
    ds.vocabulary = spec.vocabulary;
    auto add_word = [&](const std::string& w) {
        if (seen.insert(w).second) ds.vocabulary.push_back(w);
    };
    for (const auto& w : {std::string("the"), std::string("with"), std::string("a")}) add_word(w);
    for (const auto& w : kShapes) add_word(w);
    for (const auto& w : kColors) add_word(w);
    for (const auto& w : kSizes) add_word(w);
    for (const auto& w : kParts) add_word(w);

    validate(ds);
    return ds;
}

SynthSpec synth_spec_from_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw LoadError("cannot open synth spec file " + path);
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bad synth spec json: ") + e.what());
    }
    SynthSpec s;
    s.seed = j.value("seed", 0ull);
    s.n_objects = j.value("n_objects", s.n_objects);
    s.n_references = j.value("n_references", s.n_references);
    s.image_size = j.value("image_size", s.image_size);
    s.views = j.value("views", s.views);
    s.visual_fraction = j.value("visual_fraction", s.visual_fraction);
    if (j.contains("vocabulary"))
        for (const auto& w : j["vocabulary"]) s.vocabulary.push_back(w.get<std::string>());
    return s;
}

// ---------------------------------------------------------------------------
// Tokenizer
// ---------------------------------------------------------------------------

Tokenizer::Tokenizer(const std::vector<std::string>& vocabulary) {
    if (vocabulary.empty()) throw ConfigError("tokenizer vocabulary is empty");
    int next = 4;
    for (const auto& w : vocabulary)
        if (word_ids_.emplace(w, next).second) ++next;
}

std::vector<int> Tokenizer::encode(const std::string& text, int max_len) const {
    if (max_len < 2) throw ArgumentError("tokenize requires max_len >= 2");
    std::vector<int> ids{kBos};
    std::istringstream is(text);
    std::string w;
    while (is >> w) {
        std::transform(w.begin(), w.end(), w.begin(), [](unsigned char c) { return std::tolower(c); });
        auto it = word_ids_.find(w);
        ids.push_back(it == word_ids_.end() ? kUnk : it->second);
    }
    ids.push_back(kEos);
    if (static_cast<int>(ids.size()) > max_len) {
        ids.resize(max_len);
        ids.back() = kEos;
    }
    return ids;
}

std::vector<int> tokenize(const std::string& description, const std::vector<std::string>& vocabulary,
                          int max_len) {
    return Tokenizer(vocabulary).encode(description, max_len);
}

}  // namespace da4lg
