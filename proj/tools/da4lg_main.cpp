// da4lg: dataset generation, training, evaluation, parameter accounting,
// adapter merging and attention-map export for the grounding model.

#include <filesystem>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "da4lg/checkpoint.hpp"
#include "da4lg/dataset.hpp"
#include "da4lg/errors.hpp"
#include "da4lg/evaluation.hpp"
#include "da4lg/head.hpp"
#include "da4lg/model.hpp"
#include "da4lg/objectives.hpp"
#include "da4lg/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace da4lg;

namespace {

ModelConfig model_config_for(const GroundingDataset& ds, const TrainConfig& cfg) {
    if (ds.vocabulary.empty())
        throw ConfigError("dataset has no vocab.txt; a vocabulary is required to build the model");
    ModelConfig mc;
    mc.image_size = ds.image_size();
    mc.patch_size = std::max(1, ds.image_size() / 4);
    mc.prefix_tokens = cfg.prefix_tokens;
    return mc;
}

ViewMode parse_views(const std::string& spec, int& single_idx) {
    if (spec == "multi") return ViewMode::multi;
    if (spec.rfind("single", 0) == 0) {
        auto colon = spec.find(':');
        single_idx = colon == std::string::npos ? 0 : std::stoi(spec.substr(colon + 1));
        return ViewMode::single;
    }
    throw ConfigError("--views must be 'multi' or 'single[:idx]'");
}

json scorecard_json(const Scorecard& sc) {
    json j;
    j["split"] = sc.split;
    j["n_visual"] = sc.n_visual;
    j["n_blind"] = sc.n_blind;
    j["n_all"] = sc.n_all();
    j["correct_visual"] = sc.correct_visual;
    j["correct_blind"] = sc.correct_blind;
    j["correct_all"] = sc.correct_all();
    j["acc_visual"] = sc.acc_visual();
    j["acc_blind"] = sc.acc_blind();
    j["acc_all"] = sc.acc_all();
    j["trainable_params"] = sc.trainable_params;
    j["degenerate"] = sc.degenerate;
    return j;
}

int run(int argc, char** argv) {
    CLI::App app{"DA4LG-style language grounding with 3D objects (desk-scale)"};
    app.require_subcommand(1);
    bool as_json = false;

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "generate a deterministic synthetic dataset");
    std::string gen_spec, gen_out;
    gen->add_option("--spec", gen_spec, "synthetic spec JSON file")->required();
    gen->add_option("--out", gen_out, "output dataset directory")->required();

    // train
    auto* tr = app.add_subcommand("train", "train the grounding model");
    std::string tr_data, tr_config, tr_out;
    tr->add_option("--data", tr_data, "dataset directory")->required();
    tr->add_option("--config", tr_config, "training config file")->required();
    tr->add_option("--out", tr_out, "output directory for checkpoints and metrics")->required();

    // eval
    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a dataset split");
    std::string ev_data, ev_ckpt, ev_split = "validation", ev_views = "multi";
    ev->add_option("--data", ev_data)->required();
    ev->add_option("--ckpt", ev_ckpt)->required();
    ev->add_option("--split", ev_split, "train|validation|test");
    ev->add_option("--views", ev_views, "multi or single[:idx]");

    // sweep
    auto* sw = app.add_subcommand("sweep", "run a task/policy/encoder ablation grid");
    std::string sw_grid;
    int sw_seeds = 1;
    sw->add_option("--grid", sw_grid, "grid JSON file")->required();
    sw->add_option("--seeds", sw_seeds, "seeds per cell")->required();

    // params
    auto* pa = app.add_subcommand("params", "print the parameter ledger of a checkpoint");
    std::string pa_ckpt;
    pa->add_option("--ckpt", pa_ckpt)->required();

    // merge
    auto* me = app.add_subcommand("merge", "fold the adapters into the base weights");
    std::string me_ckpt, me_out;
    me->add_option("--ckpt", me_ckpt)->required();
    me->add_option("--out", me_out)->required();

    // attn
    auto* at = app.add_subcommand("attn", "export class-token attention heatmaps");
    std::string at_ckpt, at_data, at_object, at_out = ".";
    int at_view = 0, at_layer = -1;
    bool at_zero = false;
    at->add_option("--ckpt", at_ckpt)->required();
    at->add_option("--data", at_data, "dataset directory supplying the view images")->required();
    at->add_option("--object", at_object)->required();
    at->add_option("--view", at_view)->required();
    at->add_option("--layer", at_layer, "layer index (default: last)");
    at->add_flag("--zero-adapters", at_zero, "report the zeroed-adapter map as the primary output");
    at->add_option("--out", at_out, "output directory for the map files");

    // caption-debug
    auto* cd = app.add_subcommand("caption-debug", "greedy-decode a caption for an object");
    std::string cd_ckpt, cd_data, cd_object;
    cd->add_option("--ckpt", cd_ckpt)->required();
    cd->add_option("--data", cd_data)->required();
    cd->add_option("--object", cd_object)->required();

    for (auto* sub : {gen, tr, ev, sw, pa, me, at, cd})
        sub->add_flag("--json", as_json, "print machine-readable JSON to stdout");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        app.exit(e);
        return 1;
    }

    if (gen->parsed()) {
        SynthSpec spec = synth_spec_from_json_file(gen_spec);
        GroundingDataset ds = generate_synthetic(spec);
        save_dataset(ds, gen_out);
        json j{{"objects", ds.objects.size()},
               {"references", ds.references.size()},
               {"views", ds.view_count()},
               {"out", gen_out}};
        if (as_json) std::cout << j.dump() << "\n";
        else std::cout << "wrote " << ds.objects.size() << " objects, " << ds.references.size()
                       << " references to " << gen_out << "\n";
    } else if (tr->parsed()) {
        GroundingDataset ds = load_dataset(tr_data);
        TrainConfig cfg = train_config_from_file(tr_config);
        GroundingModel model = build_model(model_config_for(ds, cfg), ds.vocabulary, cfg.seed,
                                           cfg.training_policy());
        TrainResult result = train(model, ds, cfg, tr_out);
        json j{{"epochs", result.history.size()},
               {"best_epoch", result.best_epoch},
               {"best_val_acc", result.best_val_acc},
               {"final_loss", result.history.empty() ? 0.0 : result.history.back().loss_total},
               {"out", tr_out}};
        if (as_json) std::cout << j.dump() << "\n";
        else std::cout << "trained " << result.history.size() << " epochs; best val acc "
                       << result.best_val_acc << " at epoch " << result.best_epoch << "\n";
    } else if (ev->parsed()) {
        GroundingDataset ds = load_dataset(ev_data);
        GroundingModel model = load_checkpoint(ev_ckpt);
        int single_idx = 0;
        ViewMode vm = parse_views(ev_views, single_idx);
        Scorecard sc = evaluate(model, ds, split_from_string(ev_split), vm, single_idx);
        if (as_json) std::cout << scorecard_json(sc).dump() << "\n";
        else std::cout << scorecard_table({{ev_split, sc}});
        if (sc.degenerate)
            std::cerr << "warning: every reference scored as an exact tie; accuracy reflects the "
                         "deterministic tie-break only\n";
    } else if (sw->parsed()) {
        std::ifstream in(sw_grid);
        if (!in) throw LoadError("cannot open grid file " + sw_grid);
        json grid = json::parse(in);
        GroundingDataset ds = load_dataset(grid.at("data").get<std::string>());
        TrainConfig base;
        if (grid.contains("config")) base = train_config_from_file(grid["config"].get<std::string>());
        if (grid.contains("epochs")) base.epochs = grid["epochs"].get<int>();
        if (grid.contains("batch_size")) base.batch_size = grid["batch_size"].get<int>();
        if (grid.contains("seed")) base.seed = grid["seed"].get<std::uint64_t>();

        std::vector<std::string> masks = grid.value("task_masks", std::vector<std::string>{"lgr,vlc,vgc"});
        std::vector<std::string> policies = grid.value("policies", std::vector<std::string>{"domain_adapter"});
        std::vector<std::string> toggles = grid.value("encoder_toggles", std::vector<std::string>{"both"});
        std::vector<SweepCell> cells;
        for (const auto& m : masks)
            for (const auto& p : policies)
                for (const auto& tg : toggles) {
                    SweepCell c;
                    c.task_mask = m;
                    c.policy = p;
                    if (tg == "both") { c.use_vision = true; c.use_domain = true; }
                    else if (tg == "vision_only") { c.use_vision = true; c.use_domain = false; }
                    else if (tg == "domain_only") { c.use_vision = false; c.use_domain = true; }
                    else throw ConfigError("unknown encoder toggle '" + tg + "'");
                    cells.push_back(c);
                }
        auto rows = ablation_sweep(ds, cells, sw_seeds, base);
        if (as_json) {
            json out = json::array();
            for (const auto& r : rows) {
                json j{{"task_mask", r.cell.task_mask},
                       {"policy", r.cell.policy},
                       {"use_vision", r.cell.use_vision},
                       {"use_domain", r.cell.use_domain},
                       {"seeds", r.seeds},
                       {"mean_all", r.mean_all},       {"std_all", r.std_all},
                       {"mean_visual", r.mean_visual}, {"std_visual", r.std_visual},
                       {"mean_blind", r.mean_blind},   {"std_blind", r.std_blind},
                       {"trainable_params", r.trainable_params}};
                if (!r.skipped_reason.empty()) j["skipped"] = r.skipped_reason;
                out.push_back(j);
            }
            std::cout << out.dump() << "\n";
        } else {
            for (const auto& r : rows) {
                std::ostringstream name;
                name << r.cell.policy << " [" << r.cell.task_mask << "]"
                     << (r.cell.use_vision ? "" : " -vision") << (r.cell.use_domain ? "" : " -domain");
                if (!r.skipped_reason.empty()) {
                    std::cout << name.str() << ": skipped (" << r.skipped_reason << ")\n";
                    continue;
                }
                std::cout << name.str() << ": " << std::fixed << std::setprecision(1)
                          << r.mean_visual * 100 << " (" << r.std_visual * 100 << ") / "
                          << r.mean_blind * 100 << " (" << r.std_blind * 100 << ") / "
                          << r.mean_all * 100 << " (" << r.std_all * 100 << ")  #Param "
                          << r.trainable_params << "\n";
            }
        }
    } else if (pa->parsed()) {
        GroundingModel model = load_checkpoint(pa_ckpt);
        ParamLedger ledger = build_ledger(model);
        if (as_json) {
            json groups = json::object();
            for (const auto& g : {"vision", "language", "domain", "decoder", "head", "prefix"})
                groups[g] = {{"total", ledger.group_total(g)}, {"trainable", ledger.group_trainable(g)}};
            json entries = json::array();
            for (const auto& e : ledger.entries)
                entries.push_back({{"group", e.group},
                                   {"name", e.name},
                                   {"elements", e.elements},
                                   {"trainable", e.trainable}});
            json j{{"policy", to_string(model.policy.kind)},
                   {"total", ledger.total},
                   {"trainable_total", ledger.trainable_total},
                   {"frozen_total", ledger.frozen_total},
                   {"groups", groups},
                   {"params", entries}};
            std::cout << j.dump() << "\n";
        } else {
            std::cout << "policy: " << to_string(model.policy.kind) << "\n";
            for (const auto& g : {"vision", "language", "domain", "decoder", "head", "prefix"})
                std::cout << std::left << std::setw(10) << g << " total " << std::setw(10)
                          << ledger.group_total(g) << " trainable " << ledger.group_trainable(g) << "\n";
            std::cout << "total " << ledger.total << "  trainable " << ledger.trainable_total
                      << "  frozen " << ledger.frozen_total << "\n";
        }
    } else if (me->parsed()) {
        GroundingModel model = load_checkpoint(me_ckpt);
        model.domain = merge_adapter(model.domain);
        // A merged checkpoint carries no adapter bank, so record an inference-only
        // policy instead of the adapter policy it was trained under.
        model.policy.kind = PolicyKind::freezing_param;
        apply_policy(model, model.policy);
        save_checkpoint(model, me_out);
        json j{{"out", me_out}, {"has_adapter", false}};
        if (as_json) std::cout << j.dump() << "\n";
        else std::cout << "merged adapter checkpoint written to " << me_out << "\n";
    } else if (at->parsed()) {
        GroundingModel model = load_checkpoint(at_ckpt);
        GroundingDataset ds = load_dataset(at_data);
        auto it = ds.objects.find(at_object);
        if (it == ds.objects.end()) throw ArgumentError("unknown object id '" + at_object + "'");
        if (at_view < 0 || at_view >= static_cast<int>(it->second.views.size()))
            throw ArgumentError("view index " + std::to_string(at_view) + " out of range");
        const ViewImage& view = it->second.views[at_view];

        AttentionHeatmap with = extract_attention(model.domain, view, at_layer);
        EncoderState zeroed = zero_adapters(model.domain);
        AttentionHeatmap without = extract_attention(zeroed, view, at_layer);

        int layer = at_layer < 0 ? model.cfg.n_layers - 1 : at_layer;
        fs::create_directories(at_out);
        std::string stem = at_object + "_" + std::to_string(at_view) + "_" + std::to_string(layer);
        std::string with_pgm = (fs::path(at_out) / (stem + "_with.pgm")).string();
        std::string without_pgm = (fs::path(at_out) / (stem + "_without.pgm")).string();
        write_heatmap_pgm(with, with_pgm);
        write_heatmap_pgm(without, without_pgm);
        write_heatmap_ppm(with, (fs::path(at_out) / (stem + "_with.ppm")).string());
        write_heatmap_ppm(without, (fs::path(at_out) / (stem + "_without.ppm")).string());
        json j{{"grid", with.grid},
               {"layer", layer},
               {"primary", at_zero ? without_pgm : with_pgm},
               {"with", with_pgm},
               {"without", without_pgm}};
        if (as_json) std::cout << j.dump() << "\n";
        else std::cout << "wrote attention maps " << with_pgm << " and " << without_pgm << "\n";
    } else if (cd->parsed()) {
        GroundingModel model = load_checkpoint(cd_ckpt);
        GroundingDataset ds = load_dataset(cd_data);
        auto it = ds.objects.find(cd_object);
        if (it == ds.objects.end()) throw ArgumentError("unknown object id '" + cd_object + "'");
        TrainConfig cfg;
        cfg.prefix_tokens = model.cfg.prefix_tokens;
        FeatureCache cache = build_feature_cache(model, ds, ViewMode::multi, 0);
        std::vector<Mat> fd;
        for (const auto& v : it->second.views) fd.push_back(encode_domain(model.domain, v));
        Mat fo = build_object_feature(cache.f_v.at(cd_object), fd);
        auto ids = greedy_caption(model.decoder, model.prefix, fo, model.cfg.prefix_tokens, 24);
        std::vector<std::string> words;
        for (int id : ids) {
            if (id == Tokenizer::kBos) words.push_back("<bos>");
            else if (id == Tokenizer::kEos) words.push_back("<eos>");
            else if (id == Tokenizer::kUnk) words.push_back("<unk>");
            else if (id == Tokenizer::kPad) words.push_back("<pad>");
            else if (id - 4 < static_cast<int>(model.vocabulary.size())) words.push_back(model.vocabulary[id - 4]);
            else words.push_back("<?" + std::to_string(id) + ">");
        }
        json j{{"object", cd_object}, {"token_ids", ids}, {"tokens", words}};
        if (as_json) std::cout << j.dump() << "\n";
        else {
            std::cout << cd_object << ":";
            for (const auto& w : words) std::cout << " " << w;
            std::cout << "\n";
        }
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const ConfigError& e) {
        std::cerr << e.what() << "\n";
        return 1;
    } catch (const ArgumentError& e) {
        std::cerr << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << e.what() << "\n";
        return 2;
    }
}
