#include "da4lg/training.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include <json.hpp>

#include "da4lg/checkpoint.hpp"
#include "da4lg/errors.hpp"
#include "da4lg/evaluation.hpp"
#include "da4lg/head.hpp"

namespace da4lg {

ViewMode view_mode_from_string(const std::string& s) {
    if (s == "multi") return ViewMode::multi;
    if (s == "single") return ViewMode::single;
    throw ConfigError("unknown view_mode '" + s + "'");
}

TrainingPolicy TrainConfig::training_policy() const {
    TrainingPolicy p;
    p.kind = policy_from_string(policy);
    p.adapter_rank = adapter_rank;
    p.adapter_alpha = adapter_alpha;
    return p;
}

TrainConfig train_config_from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw LoadError("cannot open config file " + path);
    TrainConfig cfg;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        auto eq = line.find('=');
        if (eq == std::string::npos) {
            if (line.find_first_not_of(" \t\r") != std::string::npos)
                throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
            continue;
        }
        auto trim = [](std::string s) {
            auto a = s.find_first_not_of(" \t\r");
            auto b = s.find_last_not_of(" \t\r");
            return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
        };
        std::string key = trim(line.substr(0, eq));
        std::string val = trim(line.substr(eq + 1));
        try {
            if (key == "batch_size") cfg.batch_size = std::stoi(val);
            else if (key == "epochs") cfg.epochs = std::stoi(val);
            else if (key == "learning_rate") cfg.learning_rate = std::stod(val);
            else if (key == "weight_decay") cfg.weight_decay = std::stod(val);
            else if (key == "seed") cfg.seed = std::stoull(val);
            else if (key == "policy") cfg.policy = val;
            else if (key == "adapter_rank") cfg.adapter_rank = std::stoi(val);
            else if (key == "adapter_alpha") cfg.adapter_alpha = std::stod(val);
            else if (key == "task_mask") cfg.task_mask = task_mask_from_string(val);
            else if (key == "view_mode") cfg.view_mode = view_mode_from_string(val);
            else if (key == "single_view_index") cfg.single_view_index = std::stoi(val);
            else if (key == "vlc_mode") cfg.vlc_mode = vlc_mode_from_string(val);
            else if (key == "vlc_temperature") cfg.vlc_temperature = std::stod(val);
            else if (key == "prefix_tokens") cfg.prefix_tokens = std::stoi(val);
            else throw ConfigError("unknown config key '" + key + "'");
        } catch (const std::invalid_argument&) {
            throw ConfigError("config key '" + key + "' has a malformed value '" + val + "'");
        }
    }
    if (cfg.batch_size < 1 || cfg.epochs < 1 || cfg.learning_rate <= 0 || cfg.weight_decay < 0)
        throw ConfigError("config requires positive batch_size/epochs/learning_rate and weight_decay >= 0");
    return cfg;
}

FeatureCache build_feature_cache(const GroundingModel& model, const GroundingDataset& ds,
                                 ViewMode mode, int single_view_index) {
    FeatureCache cache;
    int J = ds.view_count();
    if (mode == ViewMode::single) {
        if (single_view_index < 0 || single_view_index >= J)
            throw ConfigError("single_view_index out of range for this dataset");
        cache.view_indices = {single_view_index};
    } else {
        for (int j = 0; j < J; ++j) cache.view_indices.push_back(j);
    }
    Mat zero = Mat::Zero(model.cfg.output_dim, 1);
    for (const auto& [id, obj] : ds.objects) {
        std::vector<Mat>& views = cache.f_v[id];
        for (int j : cache.view_indices)
            views.push_back(model.cfg.use_vision ? encode_vision(model.vision, obj.views[j]) : zero);
    }
    Tokenizer tok(model.vocabulary);
    for (const auto& r : ds.references) {
        auto ids = tok.encode(r.description, model.cfg.max_tokens);
        cache.f_l[r.reference_id] = encode_language(model.language, ids);
        cache.tokens[r.reference_id] = std::move(ids);
    }
    return cache;
}

BatchLoss batch_loss_on_tape(ad::Tape& t, TapeBind& domain_bind, TapeBind& head_bind,
                             TapeBind& prefix_bind, TapeBind& decoder_bind, GroundingModel& model,
                             const GroundingDataset& ds,
                             const std::vector<const ReferenceRecord*>& refs,
                             const FeatureCache& cache, const TrainConfig& cfg) {
    if (refs.empty()) throw ArgumentError("batch_loss: empty batch");
    const ModelConfig& mc = model.cfg;
    int B = static_cast<int>(refs.size());

    // Encode every object appearing in the batch once.
    std::set<std::string> needed;
    for (const auto* r : refs) {
        needed.insert(r->candidates[0]);
        needed.insert(r->candidates[1]);
    }
    std::map<std::string, std::vector<int>> fd_nodes, fv_nodes;
    std::map<std::string, int> fo_nodes;
    for (const auto& id : needed) {
        auto& fv = fv_nodes[id];
        for (const Mat& m : cache.f_v.at(id)) fv.push_back(t.constant(m));
        auto& fd = fd_nodes[id];
        if (mc.use_domain) {
            const ObjectRecord& obj = ds.objects.at(id);
            for (int j : cache.view_indices)
                fd.push_back(encode_image_on_tape(t, domain_bind, model.domain, obj.views[j]));
        }
        // f^o: max over the union of vision and domain view features.
        std::vector<int> all = mc.use_vision ? fv : std::vector<int>{};
        if (mc.use_domain) all.insert(all.end(), fd.begin(), fd.end());
        if (all.empty()) throw ConfigError("both encoders disabled: no object feature");
        fo_nodes[id] = aggregate_on_tape(t, all);
    }

    int zero_vec = t.constant(Mat::Zero(mc.output_dim, 1));

    // LGR: BCE over every (reference, candidate) pair.
    std::vector<int> lgr_terms;
    std::vector<int> fl_ids;
    for (const auto* r : refs) {
        int fl = t.constant(cache.f_l.at(r->reference_id));
        fl_ids.push_back(fl);
        for (const auto& cand : r->candidates) {
            int fv_agg = mc.use_vision ? aggregate_on_tape(t, fv_nodes.at(cand)) : zero_vec;
            int fd_agg = zero_vec;
            if (mc.use_domain) {
                auto rw = reweight_on_tape(t, fd_nodes.at(cand), fl);
                fd_agg = aggregate_on_tape(t, rw);
            }
            int score = fuse_and_score_on_tape(t, head_bind, fl, fv_agg, fd_agg);
            lgr_terms.push_back(lgr_loss_on_tape(t, score, cand == r->target ? 1.0 : 0.0));
        }
    }
    int lgr_node = t.mean(t.concat_rows(lgr_terms));

    BatchLoss out;
    out.lgr = t.val(lgr_node)(0, 0);
    int total_node = lgr_node;

    // VLC: in-batch negatives, both directions, averaged over references.
    if (cfg.task_mask.vlc && B >= 2) {
        std::vector<std::vector<int>> cos(B, std::vector<int>(B));
        for (int i = 0; i < B; ++i)
            for (int j = 0; j < B; ++j)
                cos[i][j] = t.cosine(fl_ids[i], fo_nodes.at(refs[j]->target));
        std::vector<int> dir_terms;
        for (int i = 0; i < B; ++i) {
            std::vector<int> obj_negs, lang_negs;
            for (int j = 0; j < B; ++j) {
                if (j == i) continue;
                obj_negs.push_back(cos[i][j]);   // o->l: same description, other objects
                lang_negs.push_back(cos[j][i]);  // l->o: same object, other descriptions
            }
            dir_terms.push_back(vlc_direction_on_tape(t, cos[i][i], obj_negs, cfg.vlc_mode, cfg.vlc_temperature));
            dir_terms.push_back(vlc_direction_on_tape(t, cos[i][i], lang_negs, cfg.vlc_mode, cfg.vlc_temperature));
        }
        // Mean per direction over the batch; the two directions sum.
        int vlc_node = t.scale(t.mean(t.concat_rows(dir_terms)), 2.0);
        out.vlc = t.val(vlc_node)(0, 0);
        total_node = t.add(total_node, vlc_node);
    }

    // VGC: caption NLL of each reference's description given its target object.
    if (cfg.task_mask.vgc) {
        std::vector<int> vgc_terms;
        for (int i = 0; i < B; ++i) {
            const auto& toks = cache.tokens.at(refs[i]->reference_id);
            vgc_terms.push_back(vgc_loss_on_tape(t, decoder_bind, prefix_bind, model.decoder,
                                                 fo_nodes.at(refs[i]->target), toks, cfg.prefix_tokens));
        }
        int vgc_node = t.mean(t.concat_rows(vgc_terms));
        out.vgc = t.val(vgc_node)(0, 0);
        total_node = t.add(total_node, vgc_node);
    }

    out.node = total_node;
    out.total = t.val(total_node)(0, 0);
    return out;
}

namespace {

void collect_grads(ad::Tape& t, TapeBind& bind, const std::string& group,
                   std::map<std::string, Mat>& grads) {
    for (const auto& [pi, node] : bind.bound()) {
        const Param& p = bind.store().at(pi);
        if (!p.trainable) continue;
        grads[group + "." + p.name] = t.grad(node);
    }
}

}  // namespace

void AdamOptimizer::step(GroundingModel& model, const std::map<std::string, Mat>& grads) {
    ++t_;
    double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (auto& [group, store] : model.components()) {
        for (int i = 0; i < store->count(); ++i) {
            Param& p = store->at(i);
            if (!p.trainable) continue;
            std::string key = group + "." + p.name;
            auto git = grads.find(key);
            Mat g = git != grads.end() ? git->second : Mat::Zero(p.value.rows(), p.value.cols());
            g += wd_ * p.value;  // coupled weight decay, as in classic Adam
            auto [it, fresh] = state_.try_emplace(key, std::make_pair(Mat::Zero(g.rows(), g.cols()),
                                                                      Mat::Zero(g.rows(), g.cols())));
            Mat& m = it->second.first;
            Mat& v = it->second.second;
            m = beta1_ * m + (1.0 - beta1_) * g;
            v = beta2_ * v + (1.0 - beta2_) * g.cwiseProduct(g);
            Mat update = (m / bc1).array() / ((v / bc2).array().sqrt() + eps_);
            p.value -= lr_ * update;
            quantize_f32(p.value);
        }
    }
}

BatchLoss train_step(GroundingModel& model, const GroundingDataset& ds,
                     const std::vector<const ReferenceRecord*>& refs, const FeatureCache& cache,
                     const TrainConfig& cfg, AdamOptimizer& opt) {
    ad::Tape t;
    TapeBind domain_bind(t, model.domain.params, true);
    TapeBind head_bind(t, model.head, true);
    TapeBind prefix_bind(t, model.prefix, true);
    TapeBind decoder_bind(t, model.decoder.params, true);
    BatchLoss loss = batch_loss_on_tape(t, domain_bind, head_bind, prefix_bind, decoder_bind, model,
                                        ds, refs, cache, cfg);
    if (!std::isfinite(loss.total))
        throw TrainingDiverged("non-finite batch loss (lgr=" + std::to_string(loss.lgr) +
                               ", vlc=" + std::to_string(loss.vlc) + ", vgc=" + std::to_string(loss.vgc) + ")");
    t.backward(loss.node);
    std::map<std::string, Mat> grads;
    collect_grads(t, domain_bind, "domain", grads);
    collect_grads(t, head_bind, "head", grads);
    collect_grads(t, prefix_bind, "prefix", grads);
    collect_grads(t, decoder_bind, "decoder", grads);
    opt.step(model, grads);
    return loss;
}

TrainResult train(GroundingModel& model, const GroundingDataset& ds, const TrainConfig& cfg,
                  const std::string& out_dir) {
    auto train_refs = ds.split_refs(Split::train);
    if (train_refs.empty()) throw ArgumentError("dataset has an empty train split");

    FeatureCache cache = build_feature_cache(model, ds, cfg.view_mode, cfg.single_view_index);
    AdamOptimizer opt(cfg.learning_rate, cfg.weight_decay, cfg.beta1, cfg.beta2, cfg.eps);
    std::mt19937_64 rng(cfg.seed);

    std::ofstream metrics_out;
    if (!out_dir.empty()) {
        std::filesystem::create_directories(out_dir);
        metrics_out.open(std::filesystem::path(out_dir) / "metrics.jsonl");
    }

    bool has_validation = !ds.split_refs(Split::validation).empty();
    TrainResult result;
    GroundingModel best_model = model;

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::vector<const ReferenceRecord*> order = train_refs;
        std::shuffle(order.begin(), order.end(), rng);

        EpochMetrics em;
        em.epoch = epoch;
        int n_batches = 0;
        for (std::size_t at = 0; at < order.size(); at += cfg.batch_size) {
            std::size_t end = std::min(order.size(), at + cfg.batch_size);
            std::vector<const ReferenceRecord*> batch(order.begin() + at, order.begin() + end);
            BatchLoss loss;
            try {
                loss = train_step(model, ds, batch, cache, cfg, opt);
            } catch (const TrainingDiverged& e) {
                throw TrainingDiverged("epoch " + std::to_string(epoch) + ", batch " +
                                       std::to_string(n_batches) + ": " + e.what());
            }
            em.loss_lgr += loss.lgr;
            em.loss_vlc += loss.vlc;
            em.loss_vgc += loss.vgc;
            em.loss_total += loss.total;
            ++n_batches;
        }
        em.loss_lgr /= n_batches;
        em.loss_vlc /= n_batches;
        em.loss_vgc /= n_batches;
        em.loss_total /= n_batches;

        if (has_validation) {
            Scorecard sc = evaluate(model, ds, Split::validation, cfg.view_mode, cfg.single_view_index, &cache);
            em.val_acc_all = sc.acc_all();
            em.val_acc_visual = sc.acc_visual();
            em.val_acc_blind = sc.acc_blind();
            if (result.best_epoch < 0 || em.val_acc_all > result.best_val_acc) {
                result.best_epoch = epoch;
                result.best_val_acc = em.val_acc_all;
                best_model = model;
            }
        }
        result.history.push_back(em);

        if (metrics_out) {
            nlohmann::json j;
            j["epoch"] = em.epoch;
            j["loss_lgr"] = em.loss_lgr;
            j["loss_vlc"] = em.loss_vlc;
            j["loss_vgc"] = em.loss_vgc;
            j["loss_total"] = em.loss_total;
            j["val_acc_all"] = em.val_acc_all;
            j["val_acc_visual"] = em.val_acc_visual;
            j["val_acc_blind"] = em.val_acc_blind;
            metrics_out << j.dump() << "\n";
        }
    }

    if (!out_dir.empty()) {
        save_checkpoint(model, (std::filesystem::path(out_dir) / "checkpoint_final").string());
        save_checkpoint(has_validation ? best_model : model,
                        (std::filesystem::path(out_dir) / "checkpoint_best").string());
    }
    return result;
}

}  // namespace da4lg
