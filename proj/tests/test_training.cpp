#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "da4lg/checkpoint.hpp"
#include "da4lg/errors.hpp"
#include "da4lg/evaluation.hpp"
#include "da4lg/training.hpp"

using namespace da4lg;
namespace fs = std::filesystem;

namespace {

const GroundingDataset& tiny_ds() {
    static GroundingDataset ds = [] {
        SynthSpec s;
        s.seed = 2;
        s.n_objects = 8;
        s.n_references = 24;
        s.image_size = 32;
        s.views = 4;
        return generate_synthetic(s);
    }();
    return ds;
}

GroundingModel tiny_model(const TrainingPolicy& policy, std::uint64_t seed = 5) {
    ModelConfig mc;
    mc.image_size = 32;
    mc.patch_size = 8;
    return build_model(mc, tiny_ds().vocabulary, seed, policy);
}

std::map<std::string, std::string> checksum_all(const GroundingModel& m, bool frozen_only) {
    std::map<std::string, std::string> sums;
    for (const auto& [group, store] : m.components())
        for (int i = 0; i < store->count(); ++i) {
            const Param& p = store->at(i);
            if (frozen_only && p.trainable) continue;
            sums[group + "." + p.name] = param_checksum(p.value);
        }
    return sums;
}

struct TempDir {
    fs::path path;
    TempDir(const char* tag) {
        path = fs::temp_directory_path() / (std::string("da4lg_train_") + tag);
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("train config file parsing") {
    TempDir dir("cfg");
    {
        std::ofstream f(dir.path / "ok.cfg");
        f << "# comment line\n"
          << "batch_size = 8\n"
          << "epochs=3\n"
          << "learning_rate = 1e-2  \n"
          << "policy = partial\n"
          << "task_mask = lgr,vgc\n"
          << "view_mode = single\n"
          << "single_view_index = 2\n"
          << "vlc_mode = literal\n";
    }
    TrainConfig cfg = train_config_from_file((dir.path / "ok.cfg").string());
    CHECK(cfg.batch_size == 8);
    CHECK(cfg.epochs == 3);
    CHECK(cfg.learning_rate == doctest::Approx(0.01));
    CHECK(cfg.training_policy().kind == PolicyKind::partial_param);
    CHECK(cfg.task_mask.vgc);
    CHECK_FALSE(cfg.task_mask.vlc);
    CHECK(cfg.view_mode == ViewMode::single);
    CHECK(cfg.single_view_index == 2);
    CHECK(cfg.vlc_mode == VlcMode::literal);

    {
        std::ofstream f(dir.path / "bad.cfg");
        f << "learning_rat = 1e-2\n";
    }
    CHECK_THROWS_AS(train_config_from_file((dir.path / "bad.cfg").string()), ConfigError);
    CHECK_THROWS_AS(train_config_from_file((dir.path / "missing.cfg").string()), LoadError);
}

TEST_CASE("policy string parsing accepts table names and short forms") {
    CHECK(policy_from_string("freezing") == PolicyKind::freezing_param);
    CHECK(policy_from_string("full_param") == PolicyKind::full_param);
    CHECK(policy_from_string("partial") == PolicyKind::partial_param);
    CHECK(policy_from_string("domain_adapter") == PolicyKind::domain_adapter);
    CHECK_THROWS_AS(policy_from_string("lora"), ConfigError);
}

TEST_CASE("ledger counts match the closed forms for all four policies") {
    auto domain_trainable = [](PolicyKind kind) {
        TrainingPolicy p;
        p.kind = kind;
        GroundingModel m = tiny_model(p);
        return build_ledger(m).group_trainable("domain");
    };
    std::int64_t n_freeze = domain_trainable(PolicyKind::freezing_param);
    std::int64_t n_adapter = domain_trainable(PolicyKind::domain_adapter);
    std::int64_t n_partial = domain_trainable(PolicyKind::partial_param);
    std::int64_t n_full = domain_trainable(PolicyKind::full_param);

    CHECK(n_freeze == 0);
    CHECK(n_adapter == 6144);   // L*3*2*d*r = 4*3*2*64*4
    CHECK(n_partial == 99968);  // base parameters of the last two blocks
    CHECK(n_full == 217664);    // every base parameter of the encoder
    CHECK(n_freeze <= n_adapter);
    CHECK(n_adapter < n_partial);
    CHECK(n_partial < n_full);
}

TEST_CASE("vision, language and decoder stay frozen under every policy") {
    for (PolicyKind kind : {PolicyKind::freezing_param, PolicyKind::full_param,
                            PolicyKind::partial_param, PolicyKind::domain_adapter}) {
        TrainingPolicy p;
        p.kind = kind;
        GroundingModel m = tiny_model(p);
        ParamLedger ledger = build_ledger(m);
        CHECK(ledger.group_trainable("vision") == 0);
        CHECK(ledger.group_trainable("language") == 0);
        CHECK(ledger.group_trainable("decoder") == 0);
        CHECK(ledger.group_trainable("head") == ledger.group_total("head"));
        CHECK(ledger.group_trainable("prefix") == ledger.group_total("prefix"));
        CHECK(ledger.trainable_total + ledger.frozen_total == ledger.total);
    }
}

TEST_CASE("partial policy trains exactly the last blocks' base parameters") {
    TrainingPolicy p;
    p.kind = PolicyKind::partial_param;
    p.partial_layers = 2;
    GroundingModel m = tiny_model(p);
    for (int i = 0; i < m.domain.params.count(); ++i) {
        const Param& prm = m.domain.params.at(i);
        bool in_tail = prm.name.rfind("blocks.2.", 0) == 0 || prm.name.rfind("blocks.3.", 0) == 0;
        bool is_lora = prm.name.find(".lora_") != std::string::npos;
        CHECK(prm.trainable == (in_tail && !is_lora));
    }
    p.partial_layers = 9;
    CHECK_THROWS_AS(tiny_model(p), ConfigError);
}

TEST_CASE("adapter policy trains exactly the lora parameters") {
    TrainingPolicy p;
    p.kind = PolicyKind::domain_adapter;
    GroundingModel m = tiny_model(p);
    for (int i = 0; i < m.domain.params.count(); ++i) {
        const Param& prm = m.domain.params.at(i);
        CHECK(prm.trainable == (prm.name.find(".lora_") != std::string::npos));
    }
}

TEST_CASE("feature cache covers every object and reference") {
    TrainingPolicy p;
    GroundingModel m = tiny_model(p);
    FeatureCache cache = build_feature_cache(m, tiny_ds(), ViewMode::multi, 0);
    CHECK(cache.f_v.size() == tiny_ds().objects.size());
    CHECK(cache.f_l.size() == tiny_ds().references.size());
    for (const auto& [id, views] : cache.f_v) CHECK(views.size() == 4);
    for (const auto& [id, f] : cache.f_l) {
        CHECK(f.rows() == 64);
        CHECK(f.allFinite());
    }

    FeatureCache single = build_feature_cache(m, tiny_ds(), ViewMode::single, 2);
    CHECK(single.view_indices == std::vector<int>{2});
    for (const auto& [id, views] : single.f_v) CHECK(views.size() == 1);
    CHECK_THROWS_AS(build_feature_cache(m, tiny_ds(), ViewMode::single, 7), ConfigError);
}

TEST_CASE("adam takes a descent step on a quadratic") {
    TrainingPolicy p;
    GroundingModel m = tiny_model(p);
    AdamOptimizer opt(0.1, 0.0, 0.9, 0.999, 1e-8);
    // Pretend the loss is 0.5*sum(B^2) for one lora B: gradient = B
    std::string key = "domain.blocks.0.attn.lora_q.B";
    Param& b = m.domain.params.at("blocks.0.attn.lora_q.B");
    b.value.setConstant(1.0);
    double before = b.value.squaredNorm();
    opt.step(m, {{key, b.value}});
    CHECK(b.value.squaredNorm() < before);
    // frozen parameters never move even if a gradient is supplied
    Mat w_before = m.vision.params.at("proj.W").value;
    opt.step(m, {{"vision.proj.W", Mat::Ones(64, 64)}});
    CHECK(m.vision.params.at("proj.W").value == w_before);
}

TEST_CASE("optimizer steps keep parameters float32-representable") {
    TrainingPolicy p;
    GroundingModel m = tiny_model(p);
    AdamOptimizer opt(0.05, 1e-4, 0.9, 0.999, 1e-8);
    Param& b = m.domain.params.at("blocks.1.attn.lora_v.B");
    opt.step(m, {{"domain.blocks.1.attn.lora_v.B", Mat::Ones(b.value.rows(), b.value.cols())}});
    Mat q = b.value;
    quantize_f32(q);
    CHECK(q == b.value);
}

TEST_CASE("frozen checksums survive real training steps under every policy") {
    for (const char* policy : {"freezing", "full", "partial", "domain_adapter"}) {
        TrainConfig cfg;
        cfg.policy = policy;
        cfg.batch_size = 8;
        cfg.seed = 3;
        GroundingModel m = tiny_model(cfg.training_policy());
        auto frozen_before = checksum_all(m, true);
        auto all_before = checksum_all(m, false);

        FeatureCache cache = build_feature_cache(m, tiny_ds(), ViewMode::multi, 0);
        AdamOptimizer opt(cfg.learning_rate, cfg.weight_decay, cfg.beta1, cfg.beta2, cfg.eps);
        auto refs = tiny_ds().split_refs(Split::train);
        refs.resize(8);
        for (int step = 0; step < 3; ++step) {
            BatchLoss bl = train_step(m, tiny_ds(), refs, cache, cfg, opt);
            CHECK(std::isfinite(bl.total));
        }

        for (const auto& [name, sum] : frozen_before)
            CHECK(checksum_all(m, true).at(name) == sum);
        // and something designated trainable actually moved
        auto all_after = checksum_all(m, false);
        bool moved = false;
        for (const auto& [name, sum] : all_before)
            if (all_after.at(name) != sum) moved = true;
        CHECK(moved);
    }
}

TEST_CASE("training loss goes down on a memorizable batch") {
    TrainConfig cfg;
    cfg.batch_size = 8;
    cfg.learning_rate = 5e-3;
    cfg.seed = 4;
    cfg.task_mask = task_mask_from_string("lgr");
    GroundingModel m = tiny_model(cfg.training_policy(), 9);
    FeatureCache cache = build_feature_cache(m, tiny_ds(), ViewMode::multi, 0);
    AdamOptimizer opt(cfg.learning_rate, cfg.weight_decay, cfg.beta1, cfg.beta2, cfg.eps);
    auto refs = tiny_ds().split_refs(Split::train);
    refs.resize(8);
    double first = train_step(m, tiny_ds(), refs, cache, cfg, opt).total;
    double last = first;
    for (int i = 0; i < 24; ++i) last = train_step(m, tiny_ds(), refs, cache, cfg, opt).total;
    CHECK(last < first);
}

TEST_CASE("full train runs are seed-deterministic") {
    TrainConfig cfg;
    cfg.batch_size = 8;
    cfg.epochs = 2;
    cfg.seed = 11;
    auto run = [&] {
        GroundingModel m = tiny_model(cfg.training_policy(), 11);
        return train(m, tiny_ds(), cfg, "");
    };
    TrainResult a = run();
    TrainResult b = run();
    REQUIRE(a.history.size() == b.history.size());
    for (std::size_t i = 0; i < a.history.size(); ++i) {
        CHECK(a.history[i].loss_total == b.history[i].loss_total);
        CHECK(a.history[i].val_acc_all == b.history[i].val_acc_all);
    }
    CHECK(a.best_epoch == b.best_epoch);
}

TEST_CASE("checkpoint round-trip is bit-exact") {
    TempDir dir("ckpt");
    TrainingPolicy p;
    GroundingModel m = tiny_model(p, 21);
    save_checkpoint(m, (dir.path / "ck").string());
    GroundingModel back = load_checkpoint((dir.path / "ck").string());

    CHECK(back.seed == m.seed);
    CHECK(back.vocabulary == m.vocabulary);
    CHECK(back.policy.kind == m.policy.kind);
    CHECK(checksum_all(back, false) == checksum_all(m, false));
    // trainable flags survive too
    for (const auto& [group, store] : m.components()) {
        const ParamStore* other = nullptr;
        for (const auto& [g2, s2] : back.components())
            if (g2 == group) other = s2;
        REQUIRE(other);
        for (int i = 0; i < store->count(); ++i)
            CHECK(other->at(store->at(i).name).trainable == store->at(i).trainable);
    }
}

TEST_CASE("checkpoint tampering is detected") {
    TempDir dir("tamper");
    TrainingPolicy p;
    GroundingModel m = tiny_model(p, 22);
    save_checkpoint(m, (dir.path / "ck").string());
    // flip one byte in a blob
    fs::path blob = dir.path / "ck" / "head.mlp.W1.bin";
    REQUIRE(fs::exists(blob));
    std::fstream f(blob, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(64);
    char c;
    f.seekg(64);
    f.get(c);
    f.seekp(64);
    f.put(static_cast<char>(c ^ 0x1));
    f.close();
    try {
        load_checkpoint((dir.path / "ck").string());
        FAIL("expected LoadError");
    } catch (const LoadError& e) {
        CHECK(std::string(e.what()).find("integrity") != std::string::npos);
    }
}

TEST_CASE("checkpoint of a missing directory fails cleanly") {
    CHECK_THROWS_AS(load_checkpoint("/nonexistent/path/ck"), LoadError);
}

TEST_CASE("train writes metrics and reloadable checkpoints") {
    TempDir dir("trainout");
    TrainConfig cfg;
    cfg.batch_size = 8;
    cfg.epochs = 2;
    cfg.seed = 12;
    GroundingModel m = tiny_model(cfg.training_policy(), 12);
    TrainResult r = train(m, tiny_ds(), cfg, dir.path.string());
    CHECK(r.history.size() == 2);
    CHECK(fs::exists(dir.path / "metrics.jsonl"));
    CHECK(fs::exists(dir.path / "checkpoint_final" / "manifest.json"));
    CHECK(fs::exists(dir.path / "checkpoint_best" / "manifest.json"));

    std::ifstream f(dir.path / "metrics.jsonl");
    std::string line;
    int lines = 0;
    while (std::getline(f, line)) {
        ++lines;
        CHECK(line.find("\"loss_total\"") != std::string::npos);
        CHECK(line.find("\"val_acc_all\"") != std::string::npos);
    }
    CHECK(lines == 2);

    GroundingModel best = load_checkpoint((dir.path / "checkpoint_best").string());
    Scorecard sc = evaluate(best, tiny_ds(), Split::validation, ViewMode::multi, 0);
    CHECK(sc.acc_all() == doctest::Approx(r.best_val_acc));
}
