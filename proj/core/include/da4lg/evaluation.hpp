#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "da4lg/dataset.hpp"
#include "da4lg/model.hpp"

namespace da4lg {

struct TrainConfig;
struct FeatureCache;
enum class ViewMode;

struct Scorecard {
    std::string split;
    int n_visual = 0, n_blind = 0;
    int correct_visual = 0, correct_blind = 0;
    std::int64_t trainable_params = 0;
    bool degenerate = false;  // every reference scored as an exact tie

    int n_all() const { return n_visual + n_blind; }
    int correct_all() const { return correct_visual + correct_blind; }
    double acc_visual() const { return n_visual ? double(correct_visual) / n_visual : 0.0; }
    double acc_blind() const { return n_blind ? double(correct_blind) / n_blind : 0.0; }
    double acc_all() const { return n_all() ? double(correct_all()) / n_all() : 0.0; }
};

Scorecard evaluate(const GroundingModel& model, const GroundingDataset& ds, Split split,
                   ViewMode view_mode, int single_view_index, const FeatureCache* cache = nullptr);

std::string scorecard_table(const std::vector<std::pair<std::string, Scorecard>>& rows);

// Fig.-4-style class-token attention heatmap.
struct AttentionHeatmap {
    int grid = 0;                     // image_size / patch_size
    Mat scores;                       // grid x grid, min-max normalized to [0,1]
    int image_size = 0;
    std::vector<std::uint8_t> raster;  // nearest-neighbor upsampled grayscale
};

// layer < 0 selects the last layer.
AttentionHeatmap extract_attention(const EncoderState& domain_encoder, const ViewImage& view,
                                   int layer = -1);

// Copy of an adapter-bearing encoder with every B matrix zeroed (exact no-op adapters).
EncoderState zero_adapters(const EncoderState& domain_encoder);

void write_heatmap_pgm(const AttentionHeatmap& map, const std::string& path);
void write_heatmap_ppm(const AttentionHeatmap& map, const std::string& path);  // blue->red colormap

struct SweepCell {
    std::string task_mask = "lgr,vlc,vgc";
    std::string policy = "domain_adapter";
    bool use_vision = true;
    bool use_domain = true;
};

struct SweepRow {
    SweepCell cell;
    std::string skipped_reason;  // non-empty when the cell was invalid
    int seeds = 0;
    double mean_all = 0, std_all = 0;
    double mean_visual = 0, std_visual = 0;
    double mean_blind = 0, std_blind = 0;
    std::int64_t trainable_params = 0;
};

// Trains and evaluates every grid cell per seed (seeds 1..n_seeds offset the
// base config seed); invalid cells are skipped with a recorded reason.
std::vector<SweepRow> ablation_sweep(const GroundingDataset& ds, const std::vector<SweepCell>& cells,
                                     int n_seeds, const TrainConfig& base);

}  // namespace da4lg
