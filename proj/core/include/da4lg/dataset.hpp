#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "da4lg/ppm.hpp"

namespace da4lg {

enum class Annotation { visual, blind };
enum class Split { train, validation, test };

const char* to_string(Annotation a);
const char* to_string(Split s);
Annotation annotation_from_string(const std::string& s);
Split split_from_string(const std::string& s);

struct ObjectRecord {
    std::string object_id;
    std::string category;
    std::vector<std::string> view_paths;  // relative to the dataset root
    std::vector<ViewImage> views;         // loaded eagerly, same order
};

struct ReferenceRecord {
    std::string reference_id;
    std::string description;
    std::array<std::string, 2> candidates;
    std::string target;
    Annotation annotation = Annotation::blind;
    Split split = Split::train;
};

enum class ViewLayout { snare8, sim5, custom };

struct GroundingDataset {
    std::map<std::string, ObjectRecord> objects;
    std::vector<ReferenceRecord> references;
    std::vector<std::string> vocabulary;
    // Generator ground truth (object_id -> attribute name -> value); never read by the model.
    std::map<std::string, std::map<std::string, std::string>> truth;

    int view_count() const;  // J, uniform across objects
    int image_size() const;
    ViewLayout layout() const;
    std::vector<const ReferenceRecord*> split_refs(Split s) const;
};

struct SynthSpec {
    std::uint64_t seed = 0;
    int n_objects = 8;
    int n_references = 32;
    int image_size = 32;
    int views = 8;  // J
    double visual_fraction = 0.5;
    std::vector<std::string> vocabulary;  // extra tokens; generator words are always included
};

// Validates eagerly: every invariant violation throws SchemaError naming the record,
// every missing file throws LoadError naming the path.
GroundingDataset load_dataset(const std::string& root);
void save_dataset(const GroundingDataset& ds, const std::string& root);

// Pure function of the spec: identical specs produce byte-identical datasets on disk.
GroundingDataset generate_synthetic(const SynthSpec& spec);

SynthSpec synth_spec_from_json_file(const std::string& path);

// Closed-vocabulary whitespace tokenizer. Reserved ids: 0 pad, 1 BOS, 2 EOS, 3 UNK.
struct Tokenizer {
    static constexpr int kPad = 0;
    static constexpr int kBos = 1;
    static constexpr int kEos = 2;
    static constexpr int kUnk = 3;

    explicit Tokenizer(const std::vector<std::string>& vocabulary);
    std::vector<int> encode(const std::string& text, int max_len) const;
    int vocab_size() const { return static_cast<int>(word_ids_.size()) + 4; }

private:
    std::map<std::string, int> word_ids_;
};

std::vector<int> tokenize(const std::string& description, const std::vector<std::string>& vocabulary,
                          int max_len);

}  // namespace da4lg
