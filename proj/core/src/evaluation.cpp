#include "da4lg/evaluation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <future>
#include <iomanip>
#include <sstream>
#include <thread>

#include "da4lg/errors.hpp"
#include "da4lg/head.hpp"
#include "da4lg/ppm.hpp"
#include "da4lg/training.hpp"

namespace da4lg {

Scorecard evaluate(const GroundingModel& model, const GroundingDataset& ds, Split split,
                   ViewMode view_mode, int single_view_index, const FeatureCache* cache) {
    auto refs = ds.split_refs(split);
    if (refs.empty()) throw ArgumentError(std::string("split '") + to_string(split) + "' is empty");

    FeatureCache local;
    if (!cache) {
        local = build_feature_cache(model, ds, view_mode, single_view_index);
        cache = &local;
    }
    const ModelConfig& mc = model.cfg;
    Mat zero = Mat::Zero(mc.output_dim, 1);

    // Domain features per object, computed once per call.
    std::map<std::string, std::vector<Mat>> fd;
    if (mc.use_domain) {
        for (const auto* r : refs) {
            for (const auto& cand : r->candidates) {
                if (fd.count(cand)) continue;
                const ObjectRecord& obj = ds.objects.at(cand);
                for (int j : cache->view_indices)
                    fd[cand].push_back(encode_domain(model.domain, obj.views[j]));
            }
        }
    }

    Scorecard sc;
    sc.split = to_string(split);
    sc.trainable_params = build_ledger(model).trainable_total;
    int ties = 0;
    for (const auto* r : refs) {
        const Mat& fl = cache->f_l.at(r->reference_id);
        std::map<std::string, double> scores;
        for (const auto& cand : r->candidates) {
            Mat fv_agg = mc.use_vision ? aggregate(cache->f_v.at(cand)) : zero;
            Mat fd_agg = zero;
            if (mc.use_domain) fd_agg = aggregate(reweight(fd.at(cand), fl));
            EmbeddingBundle b;
            b.f_l = fl;
            b.f_v = fv_agg;
            b.f_d = fd_agg;
            scores[cand] = fuse_and_score(b, model.head);
        }
        if (scores.at(r->candidates[0]) == scores.at(r->candidates[1])) ++ties;
        std::string pred = predict(*r, scores);
        bool correct = pred == r->target;
        if (r->annotation == Annotation::visual) {
            ++sc.n_visual;
            if (correct) ++sc.correct_visual;
        } else {
            ++sc.n_blind;
            if (correct) ++sc.correct_blind;
        }
    }
    sc.degenerate = ties == static_cast<int>(refs.size());
    return sc;
}

std::string scorecard_table(const std::vector<std::pair<std::string, Scorecard>>& rows) {
    std::ostringstream os;
    os << std::left << std::setw(36) << "Row" << std::right << std::setw(9) << "Visual"
       << std::setw(9) << "Blind" << std::setw(9) << "All" << std::setw(12) << "#Param" << "\n";
    for (const auto& [name, sc] : rows) {
        os << std::left << std::setw(36) << name << std::right << std::fixed << std::setprecision(1)
           << std::setw(8) << sc.acc_visual() * 100.0 << "%" << std::setw(8) << sc.acc_blind() * 100.0
           << "%" << std::setw(8) << sc.acc_all() * 100.0 << "%" << std::setw(12) << sc.trainable_params
           << "\n";
    }
    return os.str();
}

EncoderState zero_adapters(const EncoderState& domain_encoder) {
    if (!domain_encoder.adapter) throw StateError("zero_adapters: encoder has no AdapterBank");
    EncoderState out = domain_encoder;
    for (int i = 0; i < out.params.count(); ++i) {
        Param& p = out.params.at(i);
        if (p.name.find(".lora_") != std::string::npos && p.name.back() == 'B')
            p.value.setZero();
    }
    return out;
}

AttentionHeatmap extract_attention(const EncoderState& domain_encoder, const ViewImage& view,
                                   int layer) {
    if (!domain_encoder.adapter)
        throw StateError("extract_attention requires an adapter-bearing Domain-specific Encoder");
    const EncoderConfig& cfg = domain_encoder.cfg;
    if (layer >= cfg.n_layers)
        throw ArgumentError("attention layer " + std::to_string(layer) + " out of range (n_layers=" +
                            std::to_string(cfg.n_layers) + ")");
    if (layer < 0) layer = cfg.n_layers - 1;

    AttentionTrace trace;
    encode_domain(domain_encoder, view, &trace);
    const auto& heads = trace.layers[layer];

    int g = cfg.grid();
    int n_patches = cfg.n_patches();
    Eigen::VectorXd cls_attn = Eigen::VectorXd::Zero(n_patches);
    for (const Mat& a : heads)
        cls_attn += a.row(0).segment(1, n_patches).transpose();  // class-token query over patch keys
    cls_attn /= static_cast<double>(heads.size());

    double lo = cls_attn.minCoeff(), hi = cls_attn.maxCoeff();
    AttentionHeatmap map;
    map.grid = g;
    map.image_size = cfg.image_size;
    map.scores = Mat::Zero(g, g);
    if (hi - lo > 1e-12) {
        for (int p = 0; p < n_patches; ++p)
            map.scores(p / g, p % g) = (cls_attn(p) - lo) / (hi - lo);
    }
    map.raster.resize(static_cast<std::size_t>(cfg.image_size) * cfg.image_size);
    int ps = cfg.patch_size;
    for (int y = 0; y < cfg.image_size; ++y)
        for (int x = 0; x < cfg.image_size; ++x)
            map.raster[static_cast<std::size_t>(y) * cfg.image_size + x] =
                static_cast<std::uint8_t>(std::lround(map.scores(y / ps, x / ps) * 255.0));
    return map;
}

void write_heatmap_pgm(const AttentionHeatmap& map, const std::string& path) {
    write_pgm(path, map.image_size, map.image_size, map.raster);
}

void write_heatmap_ppm(const AttentionHeatmap& map, const std::string& path) {
    ViewImage img;
    img.width = img.height = map.image_size;
    img.pixels.resize(static_cast<std::size_t>(map.image_size) * map.image_size * 3);
    for (std::size_t i = 0; i < map.raster.size(); ++i) {
        double v = map.raster[i] / 255.0;  // 0 = cold (blue), 1 = warm (red)
        img.pixels[i * 3 + 0] = static_cast<std::uint8_t>(std::lround(v * 255.0));
        img.pixels[i * 3 + 1] = static_cast<std::uint8_t>(std::lround((1.0 - std::abs(2.0 * v - 1.0)) * 160.0));
        img.pixels[i * 3 + 2] = static_cast<std::uint8_t>(std::lround((1.0 - v) * 255.0));
    }
    write_ppm(path, img);
}

namespace {

int sweep_workers() {
    const char* env = std::getenv("DA4LG_THREADS");
    if (!env) return 1;
    int n = std::atoi(env);
    return n > 0 ? n : 1;
}

SweepRow run_cell(const GroundingDataset& ds, const SweepCell& cell, int n_seeds,
                  const TrainConfig& base) {
    SweepRow row;
    row.cell = cell;
    TaskMask mask;
    TrainingPolicy policy;
    try {
        mask = task_mask_from_string(cell.task_mask);
        policy.kind = policy_from_string(cell.policy);
        policy.adapter_rank = base.adapter_rank;
        policy.adapter_alpha = base.adapter_alpha;
        if (!cell.use_vision && !cell.use_domain)
            throw ConfigError("at least one of the Vision/Domain encoders must be enabled");
    } catch (const std::exception& e) {
        row.skipped_reason = e.what();
        return row;
    }

    std::vector<double> acc_all, acc_visual, acc_blind;
    for (int s = 0; s < n_seeds; ++s) {
        TrainConfig cfg = base;
        cfg.seed = base.seed + static_cast<std::uint64_t>(s);
        cfg.task_mask = mask;
        cfg.policy = to_string(policy.kind);

        ModelConfig mc;
        mc.image_size = ds.image_size();
        mc.patch_size = std::max(1, ds.image_size() / 4);
        mc.use_vision = cell.use_vision;
        mc.use_domain = cell.use_domain;
        mc.prefix_tokens = cfg.prefix_tokens;
        GroundingModel model = build_model(mc, ds.vocabulary, cfg.seed, policy);
        train(model, ds, cfg, "");
        Scorecard sc = evaluate(model, ds, Split::validation, cfg.view_mode, cfg.single_view_index);
        row.trainable_params = sc.trainable_params;
        acc_all.push_back(sc.acc_all());
        acc_visual.push_back(sc.acc_visual());
        acc_blind.push_back(sc.acc_blind());
    }
    auto mean_std = [](const std::vector<double>& xs) {
        double m = 0;
        for (double x : xs) m += x;
        m /= xs.size();
        double v = 0;
        for (double x : xs) v += (x - m) * (x - m);
        double sd = xs.size() > 1 ? std::sqrt(v / (xs.size() - 1)) : 0.0;
        return std::make_pair(m, sd);
    };
    row.seeds = n_seeds;
    std::tie(row.mean_all, row.std_all) = mean_std(acc_all);
    std::tie(row.mean_visual, row.std_visual) = mean_std(acc_visual);
    std::tie(row.mean_blind, row.std_blind) = mean_std(acc_blind);
    return row;
}

}  // namespace

std::vector<SweepRow> ablation_sweep(const GroundingDataset& ds, const std::vector<SweepCell>& cells,
                                     int n_seeds, const TrainConfig& base) {
    if (n_seeds < 1) throw ArgumentError("sweep requires at least one seed");
    std::vector<SweepRow> rows(cells.size());
    int workers = std::min<int>(sweep_workers(), static_cast<int>(cells.size()));
    if (workers <= 1) {
        for (std::size_t i = 0; i < cells.size(); ++i) rows[i] = run_cell(ds, cells[i], n_seeds, base);
        return rows;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::future<void>> futures;
    for (int w = 0; w < workers; ++w) {
        futures.push_back(std::async(std::launch::async, [&]() {
            for (std::size_t i = next.fetch_add(1); i < cells.size(); i = next.fetch_add(1))
                rows[i] = run_cell(ds, cells[i], n_seeds, base);
        }));
    }
    for (auto& f : futures) f.get();
    return rows;
}

}  // namespace da4lg
