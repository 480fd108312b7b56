#include "subbench/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <numeric>
#include <set>

#include <yaml-cpp/yaml.h>

#include "subbench/error.hpp"
#include "subbench/features.hpp"
#include "subbench/png_io.hpp"
#include "subbench/preprocess.hpp"
#include "subbench/rng.hpp"
#include "subbench/toy.hpp"
#include "subbench/triage.hpp"

namespace subbench {

namespace fs = std::filesystem;
using nlohmann::json;

// ------------------------------------------------------------------ configuration

namespace {

json desk_preset() {
    return json::parse(R"({
      "experiment": {"name": "texture-desk", "preset": "desk", "seed": 7},
      "dataset": {"source": "toy", "root": "", "modality": "histology",
                  "label_rules": ["class=parent", "split=parent:2"],
                  "preprocess": "resize", "image_size": 32, "tile_size": 256,
                  "split": "directory", "test_fraction": 0.2,
                  "toy": {"train_per_class": 400, "test_per_class": 100}},
      "gan": {"model_id": "gan", "arch": "dcgan", "per_label": true, "latent_dim": 16, "image_size": 32,
              "channels": 1, "batch_size": 16, "epochs": 30, "learning_rate": 0.0002, "beta1": 0.5,
              "beta2": 0.999, "eps": 1e-8, "pggan_base": 4, "fade_fraction": 0.5, "pixel_norm": true,
              "minibatch_stddev": true, "fmap_base": 512, "fmap_max": 64, "checkpoint": "last"},
      "triage": {"hash_size": 16, "tau": "auto", "auto_quantile": 95, "references": 256, "surplus": 1.5, "max_rounds": 4},
      "montage": {"rows": 4, "cols": 4},
      "tasks": [{"name": "texture", "modality": "histology", "target": "class",
                 "classes": ["stripes", "blobs"], "train_size": 800, "test_size": 200, "balance": ["class"]}],
      "classifiers": {
        "standardize": false,
        "cnn": {"grid": {"learning_rate": [0.001]}, "fixed": {"epochs": 20, "batch_size": 32, "preset": "desk"}},
        "knn": {"grid": {"k": [1, 3, 5, 7]}},
        "svm": {"grid": {"C": [1, 10, 100], "kernel": ["rbf"], "gamma_scale": [1]}},
        "random_forest": {"grid": {"trees": [100], "depth": [0, 8]}}
      },
      "benchmark": {"folds": 5, "control": ["knn", "random_forest"]}
    })");
}

json paper_preset() {
    json j = desk_preset();
    j.merge_patch(json::parse(R"({
      "experiment": {"name": "histology-paper", "preset": "paper"},
      "dataset": {"source": "directory", "preprocess": "tiles", "image_size": 256, "tile_size": 256,
                  "label_rules": ["class=parent", "split=parent:2"]},
      "gan": {"latent_dim": 256, "image_size": 256, "channels": 3, "batch_size": 32, "epochs": 10,
              "fmap_base": 8192, "fmap_max": 512},
      "tasks": [{"name": "histology", "modality": "histology", "target": "class",
                 "classes": ["norm", "tumor"], "train_size": 8000, "test_size": 2000, "balance": ["class"]}],
      "classifiers": {
        "cnn": {"grid": {"learning_rate": [0.0001]}, "fixed": {"epochs": 20, "batch_size": 32, "preset": "vgg16"}},
        "knn": {"grid": {"k": [1, 3, 5, 7, 9, 11]}},
        "svm": {"grid": {"C": [0.1, 1, 10, 100], "kernel": ["rbf"], "gamma_scale": [0.1, 1, 10]}},
        "random_forest": {"grid": {"trees": [100, 300], "depth": [0, 16]}}
      }
    })"));
    return j;
}

json preset_json(std::string_view preset) {
    if (preset == "desk") return desk_preset();
    if (preset == "paper") return paper_preset();
    throw ConfigError("unknown preset '" + std::string(preset) + "' (expected desk or paper)");
}

json yaml_to_json(const YAML::Node& node) {
    switch (node.Type()) {
        case YAML::NodeType::Null:
        case YAML::NodeType::Undefined: return nullptr;
        case YAML::NodeType::Sequence: {
            json arr = json::array();
            for (const auto& item : node) arr.push_back(yaml_to_json(item));
            return arr;
        }
        case YAML::NodeType::Map: {
            json obj = json::object();
            for (const auto& kv : node) obj[kv.first.as<std::string>()] = yaml_to_json(kv.second);
            return obj;
        }
        case YAML::NodeType::Scalar: {
            const std::string s = node.Scalar();
            if (node.Tag() == "!") return s;  // quoted
            if (s == "true" || s == "True") return true;
            if (s == "false" || s == "False") return false;
            if (s == "~" || s == "null") return nullptr;
            try {
                std::size_t used = 0;
                const long long v = std::stoll(s, &used);
                if (used == s.size()) return v;
            } catch (const std::exception&) {
            }
            try {
                std::size_t used = 0;
                const double v = std::stod(s, &used);
                if (used == s.size()) return v;
            } catch (const std::exception&) {
            }
            return s;
        }
    }
    return nullptr;
}

const std::vector<std::string> kClassifierOrder = {"cnn", "knn", "svm", "random_forest"};

}  // namespace

nlohmann::json yaml_text_to_json(const std::string& text) {
    try {
        return yaml_to_json(YAML::Load(text));
    } catch (const YAML::Exception& e) {
        throw ConfigError(std::string("invalid config file: ") + e.what());
    }
}

ExperimentConfig experiment_config_from_json(const json& j) {
    try {
        ExperimentConfig c;
        const auto& e = j.at("experiment");
        c.name = e.at("name").get<std::string>();
        c.preset = e.value("preset", std::string("desk"));
        c.seed = e.at("seed").get<std::uint64_t>();

        const auto& d = j.at("dataset");
        c.dataset.source = d.at("source").get<std::string>();
        c.dataset.root = d.value("root", std::string());
        c.dataset.modality = parse_modality(d.at("modality").get<std::string>());
        c.dataset.label_rules = d.at("label_rules").get<std::vector<std::string>>();
        c.dataset.preprocess = d.at("preprocess").get<std::string>();
        c.dataset.image_size = d.at("image_size").get<int>();
        c.dataset.tile_size = d.at("tile_size").get<int>();
        c.dataset.split = d.at("split").get<std::string>();
        c.dataset.test_fraction = d.at("test_fraction").get<double>();
        c.dataset.toy_train_per_class = d.at("toy").at("train_per_class").get<int>();
        c.dataset.toy_test_per_class = d.at("toy").at("test_per_class").get<int>();
        if (c.dataset.source != "toy" && c.dataset.source != "directory") {
            throw ConfigError("dataset.source must be toy or directory");
        }
        if (c.dataset.preprocess != "resize" && c.dataset.preprocess != "xray" && c.dataset.preprocess != "tiles") {
            throw ConfigError("dataset.preprocess must be resize, xray or tiles");
        }
        if (c.dataset.split != "directory" && c.dataset.split != "random") {
            throw ConfigError("dataset.split must be directory or random");
        }

        const auto& g = j.at("gan");
        json gj = g;
        if (!g.contains("optimizer")) {
            gj["optimizer"] = {{"learning_rate", g.at("learning_rate")}, {"beta1", g.at("beta1")},
                               {"beta2", g.at("beta2")}, {"eps", g.value("eps", 1e-8)}};
        }
        c.gan = gan_config_from_json(gj);
        c.per_label = g.value("per_label", true);
        c.checkpoint = g.at("checkpoint").is_string() ? g.at("checkpoint").get<std::string>()
                                                      : std::to_string(g.at("checkpoint").get<int>());
        if (c.gan.image_size != c.dataset.image_size) throw ConfigError("gan.image_size must equal dataset.image_size");

        const auto& t = j.at("triage");
        c.triage.hash_size = t.at("hash_size").get<int>();
        if (t.at("tau").is_string()) {
            if (t.at("tau").get<std::string>() != "auto") throw ConfigError("triage.tau must be an integer or 'auto'");
            c.triage.auto_tau = true;
        } else {
            c.triage.tau = t.at("tau").get<int>();
        }
        c.triage.auto_quantile = t.value("auto_quantile", 95.0);
        c.triage.references = t.at("references").get<int>();
        c.triage.surplus = t.at("surplus").get<double>();
        c.triage.max_rounds = t.at("max_rounds").get<int>();
        if (c.triage.surplus < 1.0 || c.triage.references < 1 || c.triage.max_rounds < 0) {
            throw ConfigError("triage: surplus >= 1, references >= 1, max_rounds >= 0 required");
        }

        c.montage_rows = j.at("montage").at("rows").get<int>();
        c.montage_cols = j.at("montage").at("cols").get<int>();

        for (const auto& tj : j.at("tasks")) {
            BenchmarkTask task;
            task.name = tj.at("name").get<std::string>();
            task.modality = parse_modality(tj.value("modality", to_string(c.dataset.modality)));
            task.target_key = tj.at("target").get<std::string>();
            task.classes = tj.at("classes").get<std::vector<std::string>>();
            task.train_size = tj.at("train_size").get<int>();
            task.test_size = tj.at("test_size").get<int>();
            task.balance_keys = tj.value("balance", std::vector<std::string>{task.target_key});
            if (std::find(task.balance_keys.begin(), task.balance_keys.end(), task.target_key) == task.balance_keys.end()) {
                task.balance_keys.insert(task.balance_keys.begin(), task.target_key);
            }
            task.validate();
            c.tasks.push_back(std::move(task));
        }
        if (c.tasks.empty()) throw ConfigError("no benchmark tasks configured");

        const auto& cl = j.at("classifiers");
        const bool standardize = cl.value("standardize", false);
        for (const auto& kind : kClassifierOrder) {
            if (!cl.contains(kind) || cl.at(kind).is_null()) continue;
            json sj = cl.at(kind);
            sj["kind"] = kind;
            if (!sj.contains("standardize")) sj["standardize"] = standardize;
            c.classifiers.push_back(classifier_spec_from_json(sj));
        }
        if (c.classifiers.empty()) throw ConfigError("no classifiers configured");

        c.folds = j.at("benchmark").at("folds").get<int>();
        c.control = j.at("benchmark").value("control", std::vector<std::string>{});
        for (const auto& k : c.control) parse_classifier_kind(k);
        c.gan.validate();
        return c;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
}

json ExperimentConfig::to_json() const {
    json tasks_j = json::array();
    for (const auto& t : tasks) {
        tasks_j.push_back({{"name", t.name},
                           {"modality", subbench::to_string(t.modality)},
                           {"target", t.target_key},
                           {"classes", t.classes},
                           {"train_size", t.train_size},
                           {"test_size", t.test_size},
                           {"balance", t.balance_keys}});
    }
    json cls = json::object();
    for (const auto& s : classifiers) cls[subbench::to_string(s.kind)] = subbench::to_json(s);
    json g = subbench::to_json(gan);
    g["per_label"] = per_label;
    g["checkpoint"] = checkpoint;
    return {{"experiment", {{"name", name}, {"preset", preset}, {"seed", seed}}},
            {"dataset",
             {{"source", dataset.source},
              {"root", dataset.root.generic_string()},
              {"modality", subbench::to_string(dataset.modality)},
              {"label_rules", dataset.label_rules},
              {"preprocess", dataset.preprocess},
              {"image_size", dataset.image_size},
              {"tile_size", dataset.tile_size},
              {"split", dataset.split},
              {"test_fraction", dataset.test_fraction},
              {"toy", {{"train_per_class", dataset.toy_train_per_class}, {"test_per_class", dataset.toy_test_per_class}}}}},
            {"gan", g},
            {"triage",
             {{"hash_size", triage.hash_size},
              {"tau", triage.auto_tau ? json("auto") : json(triage.tau)},
              {"auto_quantile", triage.auto_quantile},
              {"references", triage.references},
              {"surplus", triage.surplus},
              {"max_rounds", triage.max_rounds}}},
            {"montage", {{"rows", montage_rows}, {"cols", montage_cols}}},
            {"tasks", tasks_j},
            {"classifiers", cls},
            {"benchmark", {{"folds", folds}, {"control", control}}}};
}

std::string ExperimentConfig::digest() const { return sha256_hex(to_json().dump()); }

ExperimentConfig preset_config(std::string_view preset) { return experiment_config_from_json(preset_json(preset)); }

ExperimentConfig load_experiment_config(const fs::path& path, std::string_view preset_override) {
    const json file = yaml_text_to_json(read_file(path));
    if (!file.is_object()) throw ConfigError(path.string() + ": top level must be a mapping");
    std::string preset = "desk";
    if (!preset_override.empty()) {
        preset = preset_override;
    } else if (file.contains("experiment") && file["experiment"].contains("preset")) {
        preset = file["experiment"]["preset"].get<std::string>();
    }
    json merged = preset_json(preset);
    merged.merge_patch(file);
    merged["experiment"]["preset"] = preset;
    return experiment_config_from_json(merged);
}

// ------------------------------------------------------------------ diagnostics

void Diagnostics::info(const std::string& msg) const {
    if (sink) sink(msg);
}

void Diagnostics::warn(const std::string& msg) {
    warnings_.push_back(msg);
    if (sink) sink("warning: " + msg);
}

// ------------------------------------------------------------------ layout and helpers

namespace {

struct Layout {
    fs::path out;
    fs::path raw_manifest() const { return out / "data" / "raw_manifest.jsonl"; }
    fs::path rejects() const { return out / "data" / "rejects.jsonl"; }
    fs::path manifest() const { return out / "data" / "manifest.jsonl"; }
    fs::path images() const { return out / "data" / "images"; }
    fs::path toy_source() const { return out / "data" / "source"; }
    fs::path gan_dir(const std::string& model) const { return out / "gan" / model; }
    fs::path montages(const std::string& model) const { return out / "montages" / model; }
    fs::path generated() const { return out / "synthetic" / "generated.jsonl"; }
    fs::path synthetic() const { return out / "synthetic" / "manifest.jsonl"; }
    fs::path audit() const { return out / "synthetic" / "triage_audit.jsonl"; }
    fs::path triage_summary() const { return out / "synthetic" / "triage_summary.json"; }
    fs::path synth_images() const { return out / "synthetic" / "images"; }
    fs::path features(const std::string& task, const std::string& arm) const {
        return out / "features" / (task + "_" + arm + ".csv");
    }
    fs::path bench(const std::string& task) const { return out / "bench" / task; }
    fs::path results() const { return out / "bench" / "results.json"; }
};

std::string sanitize(std::string s) {
    for (auto& c : s) {
        if (!std::isalnum(static_cast<unsigned char>(c)) && c != '-' && c != '_' && c != '.') c = '_';
    }
    return s;
}

Manifest load_required(const fs::path& p, const std::string& stage) {
    if (!fs::exists(p)) throw DataError(p.string() + " not found; run the '" + stage + "' stage first");
    return Manifest::load(p);
}

void write_json(const fs::path& p, const json& j) { write_file(p, j.dump(2) + "\n"); }

json read_json(const fs::path& p) {
    try {
        return json::parse(read_file(p));
    } catch (const json::exception& e) {
        throw DataError(p.string() + ": " + e.what());
    }
}

// Unit-range image at the configured size and channel count.
PixelGrid conform(PixelGrid img, int size, int channels) {
    if (img.range() == Range::Signed) img = img.to_range(Range::Unit);
    if (channels == 1 && img.channels() == 3) img = to_grayscale(img);
    if (img.channels() != channels) throw DataError("image has " + std::to_string(img.channels()) + " channels, expected " +
                                                    std::to_string(channels));
    if (img.height() != size || img.width() != size) img = resize(img, size, size);
    return img;
}

std::string combo_key(const Labels& labels, const std::vector<std::string>& keys) {
    std::string s;
    for (const auto& k : keys) {
        if (!s.empty()) s += ",";
        const auto it = labels.find(k);
        s += k + "=" + (it == labels.end() ? std::string("?") : it->second);
    }
    return s;
}

struct GanJob {
    std::string model_id;
    const BenchmarkTask* task = nullptr;
    std::vector<Labels> combos;            // label sets this generator produces
    std::vector<std::string> train_ids;
    std::vector<int> train_labels;         // combo index per training id (conditional)
    bool conditional = false;
};

// Label combinations of the task's balance keys present in the training
// selection, in sorted order.
std::vector<Labels> task_combos(const BenchmarkTask& task, const Manifest& m, const std::vector<std::string>& ids) {
    std::map<std::string, Labels> combos;
    for (const auto& id : ids) {
        const auto& r = m.at(id);
        Labels l;
        for (const auto& k : task.balance_keys) l[k] = r.label(k);
        combos.emplace(combo_key(l, task.balance_keys), l);
    }
    std::vector<Labels> out;
    for (auto& [k, l] : combos) out.push_back(l);
    return out;
}

std::vector<GanJob> gan_jobs(const ExperimentConfig& cfg, const Manifest& manifest) {
    std::vector<GanJob> jobs;
    for (const auto& task : cfg.tasks) {
        const auto sel = select_task_data(cfg, manifest, task);
        const auto combos = task_combos(task, manifest, sel.train);
        if (cfg.per_label) {
            for (const auto& combo : combos) {
                GanJob job;
                std::string suffix;
                for (const auto& k : task.balance_keys) suffix += "-" + combo.at(k);
                job.model_id = sanitize(cfg.gan.model_id + "-" + task.name + suffix);
                job.task = &task;
                job.combos = {combo};
                const auto key = combo_key(combo, task.balance_keys);
                for (const auto& id : sel.train) {
                    if (combo_key(manifest.at(id).labels, task.balance_keys) == key) job.train_ids.push_back(id);
                }
                jobs.push_back(std::move(job));
            }
        } else {
            GanJob job;
            job.model_id = sanitize(cfg.gan.model_id + "-" + task.name);
            job.task = &task;
            job.combos = combos;
            job.conditional = true;
            job.train_ids = sel.train;
            for (const auto& id : sel.train) {
                const auto key = combo_key(manifest.at(id).labels, task.balance_keys);
                for (std::size_t c = 0; c < combos.size(); ++c) {
                    if (combo_key(combos[c], task.balance_keys) == key) job.train_labels.push_back(static_cast<int>(c));
                }
            }
            jobs.push_back(std::move(job));
        }
    }
    return jobs;
}

GanConfig job_gan_config(const ExperimentConfig& cfg, const GanJob& job) {
    GanConfig g = cfg.gan;
    g.model_id = job.model_id;
    g.conditional = job.conditional;
    g.label_cardinality = job.conditional ? static_cast<int>(job.combos.size()) : 0;
    g.validate();
    return g;
}

Checkpoint chosen_checkpoint(const ExperimentConfig& cfg, const Layout& L, const GanJob& job) {
    const auto info = read_json(L.gan_dir(job.model_id) / "training.json");
    const auto files = info.at("checkpoints").get<std::vector<std::string>>();
    if (files.empty()) throw DataError("generator " + job.model_id + " has no checkpoints");
    if (cfg.checkpoint == "last") return Checkpoint::load(files.back());
    int epoch = 0;
    try {
        epoch = std::stoi(cfg.checkpoint);
    } catch (const std::exception&) {
        throw ConfigError("gan.checkpoint must be 'last' or an epoch index");
    }
    const Checkpoint last = Checkpoint::load(files.back());
    for (const auto& f : files) {
        Checkpoint c = Checkpoint::load(f);
        if (c.stage == last.stage && c.epoch == epoch) return c;
    }
    throw ConfigError("generator " + job.model_id + " has no checkpoint for epoch " + cfg.checkpoint);
}

std::size_t needed_per_combo(const BenchmarkTask& task, std::size_t combos_in_task) {
    return static_cast<std::size_t>(task.train_size) / std::max<std::size_t>(1, combos_in_task);
}

std::size_t task_combo_count(const std::vector<GanJob>& jobs, const BenchmarkTask& task) {
    std::size_t n = 0;
    for (const auto& j : jobs) {
        if (j.task == &task) n += j.combos.size();
    }
    return n;
}

// Writes `count` fresh samples of one label combination as synthetic records.
std::vector<ImageRecord> generate_records(const ExperimentConfig& cfg, const Layout& L, const GanJob& job,
                                          const Checkpoint& ckpt, std::size_t combo, int round, std::size_t count) {
    std::vector<int> labels;
    if (job.conditional) labels.assign(count, static_cast<int>(combo));
    const auto seed = Rng::derive(Rng::derive(cfg.seed, job.model_id + "/sample"),
                                  static_cast<std::uint64_t>(combo * 1000 + round));
    const auto images = sample(ckpt, static_cast<int>(count), labels, seed);
    std::vector<ImageRecord> out;
    const fs::path dir = L.synth_images() / job.model_id / ("c" + std::to_string(combo));
    fs::create_directories(dir);
    for (std::size_t i = 0; i < images.size(); ++i) {
        char stem[64];
        std::snprintf(stem, sizeof(stem), "r%d_%05zu", round, i);
        ImageRecord r;
        r.id = job.model_id + "/c" + std::to_string(combo) + "/" + stem;
        r.path = (dir / (std::string(stem) + ".png")).generic_string();
        r.modality = job.task->modality;
        r.width = images[i].width();
        r.height = images[i].height();
        r.channels = images[i].channels();
        r.labels = job.combos[combo];
        r.split = Split::Train;
        r.source_kind = SourceKind::Synthetic;
        r.provenance = Provenance{job.model_id, ckpt.id()};
        write_png(r.path, images[i]);
        out.push_back(std::move(r));
    }
    return out;
}

Manifest restrict_to(const Manifest& m, const std::function<bool(const ImageRecord&)>& keep) {
    std::vector<std::string> ids;
    for (const auto& r : m.records()) {
        if (keep(r)) ids.push_back(r.id);
    }
    return m.subset(ids);
}

Manifest task_synthetic(const ExperimentConfig& cfg, const Manifest& synth, const std::vector<GanJob>& jobs,
                        const BenchmarkTask& task) {
    std::set<std::string> models;
    for (const auto& j : jobs) {
        if (j.task == &task) models.insert(j.model_id);
    }
    const Manifest pool = restrict_to(synth, [&](const ImageRecord& r) { return models.count(r.provenance->model_id) > 0; });
    const auto ids = balanced_sample(pool, task.balance_keys, task.train_size, Rng::derive(cfg.seed, task.name + "/synthetic"));
    return pool.subset(ids);
}

GanRegistry load_registry(const Layout& L, const std::vector<GanJob>& jobs) {
    GanRegistry reg;
    for (const auto& j : jobs) {
        const auto p = L.gan_dir(j.model_id) / "training.json";
        if (!fs::exists(p)) continue;
        const auto info = read_json(p);
        const auto ids = info.at("training_ids").get<std::vector<std::string>>();
        reg[info.at("model_id").get<std::string>()] = std::set<std::string>(ids.begin(), ids.end());
    }
    return reg;
}

}  // namespace

// ------------------------------------------------------------------ stages

TaskSelection select_task_data(const ExperimentConfig& cfg, const Manifest& manifest, const BenchmarkTask& task) {
    auto in_task = [&](const ImageRecord& r, Split s) {
        if (r.split != s || r.source_kind != SourceKind::Real) return false;
        const auto it = r.labels.find(task.target_key);
        return it != r.labels.end() && (it->second == task.classes[0] || it->second == task.classes[1]);
    };
    const Manifest train = restrict_to(manifest, [&](const ImageRecord& r) { return in_task(r, Split::Train); });
    const Manifest test = restrict_to(manifest, [&](const ImageRecord& r) { return in_task(r, Split::Test); });
    TaskSelection sel;
    try {
        sel.train = balanced_sample(train, task.balance_keys, task.train_size, Rng::derive(cfg.seed, task.name + "/train"));
        sel.test = balanced_sample(test, task.balance_keys, task.test_size, Rng::derive(cfg.seed, task.name + "/test"));
    } catch (const Error& e) {
        throw DataError("task " + task.name + ": " + e.what());
    }
    return sel;
}

Manifest stage_ingest(const ExperimentConfig& cfg, const fs::path& out, Diagnostics& diag) {
    const Layout L{out};
    Manifest m;
    if (cfg.dataset.source == "toy") {
        diag.info("writing procedural texture corpus to " + L.toy_source().string());
        fs::remove_all(L.toy_source());
        m = toy::write_texture_corpus(L.toy_source(), cfg.dataset.toy_train_per_class, cfg.dataset.toy_test_per_class,
                                      cfg.dataset.image_size, Rng::derive(cfg.seed, "toy"));
        write_file(L.rejects(), "");
    } else {
        if (cfg.dataset.root.empty()) throw ConfigError("dataset.root is required for a directory source");
        if (!fs::is_directory(cfg.dataset.root)) throw DataError("dataset root " + cfg.dataset.root.string() + " does not exist");
        std::vector<LabelRule> rules;
        for (const auto& r : cfg.dataset.label_rules) rules.push_back(LabelRule::parse(r));
        auto result = ingest_directory(cfg.dataset.root, cfg.dataset.modality, rules);
        std::string rejects;
        for (const auto& r : result.rejects) {
            rejects += json{{"path", r.path}, {"reason", r.reason}}.dump() + "\n";
            diag.warn("rejected " + r.path + ": " + r.reason);
        }
        write_file(L.rejects(), rejects);
        m = std::move(result.manifest);
    }
    m.save(L.raw_manifest());
    diag.info("ingested " + std::to_string(m.size()) + " records (checksum " + m.checksum().substr(0, 12) + ")");
    return m;
}

Manifest stage_preprocess(const ExperimentConfig& cfg, const fs::path& out, Diagnostics& diag) {
    const Layout L{out};
    const Manifest raw = load_required(L.raw_manifest(), "ingest");
    const int size = cfg.dataset.image_size;
    const int channels = cfg.gan.channels;
    std::vector<ImageRecord> records;
    std::size_t degenerate = 0, fallback = 0;
    for (const auto& src : raw.records()) {
        const PixelGrid img = read_png(src.path).grid;
        std::vector<std::pair<std::string, PixelGrid>> outputs;
        if (cfg.dataset.preprocess == "xray") {
            const PixelGrid gray = to_grayscale(img);
            const auto mask = foreground_mask(gray);
            fallback += mask.fallback;
            const auto norm = percentile_normalize(gray, mask.mask);
            degenerate += norm.degenerate;
            outputs.emplace_back(src.id, conform(norm.image, size, channels));
        } else if (cfg.dataset.preprocess == "tiles") {
            for (const auto& t : tile_image(img, cfg.dataset.tile_size, cfg.dataset.tile_size)) {
                outputs.emplace_back(src.id + "/t" + std::to_string(t.row) + "_" + std::to_string(t.col),
                                     conform(t.image, size, channels));
            }
        } else {
            outputs.emplace_back(src.id, conform(img, size, channels));
        }
        for (auto& [id, grid] : outputs) {
            ImageRecord r = src;
            r.id = id;
            r.path = (L.images() / (id + ".png")).generic_string();
            r.width = grid.width();
            r.height = grid.height();
            r.channels = grid.channels();
            write_png(r.path, grid, cfg.dataset.preprocess == "xray" ? 16 : 8);
            records.push_back(std::move(r));
        }
    }
    if (fallback) diag.warn(std::to_string(fallback) + " image(s) had no foreground above threshold; full-image masks used");
    if (degenerate) diag.warn(std::to_string(degenerate) + " image(s) had coinciding percentiles; set to constant 0.5");

    Manifest m(std::move(records));
    if (cfg.dataset.split == "random") {
        std::set<std::string> keys;
        for (const auto& t : cfg.tasks) keys.insert(t.target_key);
        const auto split = split_train_test(m, cfg.dataset.test_fraction, {keys.begin(), keys.end()},
                                            Rng::derive(cfg.seed, "split"));
        const std::set<std::string> test(split.test.begin(), split.test.end());
        std::vector<ImageRecord> rs = m.records();
        for (auto& r : rs) r.split = test.count(r.id) ? Split::Test : Split::Train;
        m = Manifest(std::move(rs));
    }
    m.save(L.manifest());
    for (const auto& task : cfg.tasks) {
        const auto sel = select_task_data(cfg, m, task);
        write_json(out / "tasks" / (sanitize(task.name) + ".json"), {{"train", sel.train}, {"test", sel.test}});
    }
    diag.info("preprocessed " + std::to_string(m.size()) + " records to " + std::to_string(size) + "x" + std::to_string(size));
    return m;
}

void stage_train_gan(const ExperimentConfig& cfg, const fs::path& out, Diagnostics& diag) {
    const Layout L{out};
    const Manifest m = load_required(L.manifest(), "preprocess");
    for (const auto& job : gan_jobs(cfg, m)) {
        const GanConfig g = job_gan_config(cfg, job);
        GanTrainingSet set;
        set.ids = job.train_ids;
        set.labels = job.train_labels;
        for (const auto& id : job.train_ids) {
            set.images.push_back(conform(load_record_image(m.at(id)), g.image_size, g.channels));
        }
        const fs::path dir = L.gan_dir(job.model_id);
        fs::remove_all(dir / "ckpt");
        diag.info("training " + job.model_id + " on " + std::to_string(set.ids.size()) + " images");
        GanTrainOptions opt;
        opt.checkpoint_dir = dir / "ckpt";
        std::vector<std::string> files;
        opt.on_checkpoint = [&](const Checkpoint& c) {
            files.push_back((dir / "ckpt" / (c.id() + ".ckpt")).generic_string());
            char line[160];
            std::snprintf(line, sizeof(line), "  %s: d_loss %.4f g_loss %.4f D(fake)<0.5 %.2f", c.id().c_str(),
                          c.stats.d_loss, c.stats.g_loss, c.stats.d_fake_accuracy);
            diag.info(line);
        };
        const auto result = train_gan(g, set, Rng::derive(cfg.seed, job.model_id), opt);
        if (result.aborted) diag.warn(job.model_id + ": training aborted (" + result.abort_reason + ")");
        json combos = json::array();
        for (const auto& c : job.combos) combos.push_back(c);
        write_json(dir / "training.json", {{"model_id", job.model_id},
                                           {"task", job.task->name},
                                           {"config", to_json(g)},
                                           {"combos", combos},
                                           {"training_ids", job.train_ids},
                                           {"checkpoints", files},
                                           {"d_loss_trace", result.d_loss_trace},
                                           {"g_loss_trace", result.g_loss_trace},
                                           {"aborted", result.aborted},
                                           {"abort_reason", result.abort_reason}});
    }
}

std::vector<fs::path> stage_montage(const ExperimentConfig& cfg, const fs::path& out, Diagnostics& diag) {
    const Layout L{out};
    const Manifest m = load_required(L.manifest(), "preprocess");
    std::vector<fs::path> paths;
    for (const auto& job : gan_jobs(cfg, m)) {
        const auto p = L.gan_dir(job.model_id) / "training.json";
        if (!fs::exists(p)) throw DataError(p.string() + " not found; run the 'train-gan' stage first");
        for (const auto& f : read_json(p).at("checkpoints").get<std::vector<std::string>>()) {
            const Checkpoint c = Checkpoint::load(f);
            paths.push_back(emit_montage(c, cfg.montage_rows, cfg.montage_cols, Rng::derive(cfg.seed, "montage"),
                                         L.montages(job.model_id)));
        }
    }
    diag.info("wrote " + std::to_string(paths.size()) + " montage(s)");
    return paths;
}

Manifest stage_generate(const ExperimentConfig& cfg, const fs::path& out, Diagnostics& diag) {
    const Layout L{out};
    const Manifest m = load_required(L.manifest(), "preprocess");
    const auto jobs = gan_jobs(cfg, m);
    fs::remove_all(L.synth_images());
    std::vector<ImageRecord> records;
    for (const auto& job : jobs) {
        const Checkpoint ckpt = chosen_checkpoint(cfg, L, job);
        const std::size_t need = needed_per_combo(*job.task, task_combo_count(jobs, *job.task));
        const auto count = static_cast<std::size_t>(std::ceil(need * cfg.triage.surplus));
        for (std::size_t c = 0; c < job.combos.size(); ++c) {
            auto rs = generate_records(cfg, L, job, ckpt, c, 0, count);
            records.insert(records.end(), rs.begin(), rs.end());
        }
        diag.info("generated " + std::to_string(count * job.combos.size()) + " images from " + ckpt.id());
    }
    Manifest g(std::move(records));
    g.save(L.generated());
    return g;
}

Manifest stage_triage(const ExperimentConfig& cfg, const fs::path& out, Diagnostics& diag) {
    const Layout L{out};
    const Manifest m = load_required(L.manifest(), "preprocess");
    Manifest generated = load_required(L.generated(), "generate");
    const auto jobs = gan_jobs(cfg, m);

    std::vector<ImageRecord> all(generated.records().begin(), generated.records().end());
    std::vector<ImageRecord> kept_records;
    std::string audit;
    json summary = json::array();
    for (const auto& job : jobs) {
        // References: real training images of the generator's task.
        const auto sel = select_task_data(cfg, m, *job.task);
        std::vector<std::string> ref_ids = sel.train;
        Rng rng(Rng::derive(cfg.seed, job.model_id + "/references"));
        rng.shuffle(ref_ids);
        std::vector<std::string> holdout;
        if (cfg.triage.auto_tau) {
            const std::size_t n_ref = std::min<std::size_t>(cfg.triage.references, ref_ids.size() * 2 / 3);
            holdout.assign(ref_ids.begin() + n_ref, ref_ids.end());
            ref_ids.resize(n_ref);
            if (ref_ids.empty() || holdout.empty()) throw ConfigError("triage: too few real images to calibrate tau");
        } else {
            ref_ids.resize(std::min<std::size_t>(ref_ids.size(), cfg.triage.references));
        }
        std::vector<PixelGrid> ref_images;
        for (const auto& id : ref_ids) ref_images.push_back(load_record_image(m.at(id)));
        auto refs = ReferenceSet::from_images(ref_images, 0, cfg.triage.hash_size);
        if (cfg.triage.auto_tau) {
            std::vector<PixelGrid> held;
            for (const auto& id : holdout) held.push_back(load_record_image(m.at(id)));
            const auto d = filter_synthetic(held, refs).distances;
            refs.tau = static_cast<int>(
                nearest_rank_percentile(std::vector<double>(d.begin(), d.end()), cfg.triage.auto_quantile));
            diag.info(job.model_id + ": calibrated tau = " + std::to_string(refs.tau) + " from " +
                      std::to_string(held.size()) + " held-out real images");
        } else {
            refs.tau = cfg.triage.tau;
        }
        refs.validate();

        const std::size_t need = needed_per_combo(*job.task, task_combo_count(jobs, *job.task));
        std::optional<Checkpoint> ckpt;
        for (std::size_t c = 0; c < job.combos.size(); ++c) {
            const auto key = combo_key(job.combos[c], job.task->balance_keys);
            std::vector<ImageRecord> pending;
            for (const auto& r : generated.records()) {
                if (r.provenance->model_id == job.model_id && combo_key(r.labels, job.task->balance_keys) == key) {
                    pending.push_back(r);
                }
            }
            std::size_t kept = 0, seen = 0;
            for (int round = 0;; ++round) {
                std::vector<PixelGrid> imgs;
                std::vector<std::string> ids;
                for (const auto& r : pending) imgs.push_back(load_record_image(r)), ids.push_back(r.id);
                const auto res = filter_synthetic(imgs, refs);
                for (std::size_t i = 0; i < pending.size(); ++i) {
                    audit += json{{"id", ids[i]}, {"model", job.model_id}, {"distance", res.distances[i]},
                                  {"kept", res.distances[i] <= refs.tau}, {"hash", res.signatures[i].to_hex()}}
                                 .dump() +
                             "\n";
                }
                for (auto i : res.kept) kept_records.push_back(pending[i]);
                kept += res.kept.size();
                seen += pending.size();
                if (kept >= need || round >= cfg.triage.max_rounds) break;
                if (!ckpt) ckpt = chosen_checkpoint(cfg, L, job);
                const auto more = static_cast<std::size_t>(std::ceil((need - kept) * cfg.triage.surplus));
                diag.info(job.model_id + " [" + key + "]: triage kept " + std::to_string(kept) + "/" +
                          std::to_string(seen) + ", generating " + std::to_string(more) + " more");
                pending = generate_records(cfg, L, job, *ckpt, c, round + 1, more);
                all.insert(all.end(), pending.begin(), pending.end());
            }
            const double rate = seen ? 1.0 - static_cast<double>(kept) / static_cast<double>(seen) : 0.0;
            summary.push_back({{"model", job.model_id}, {"labels", key}, {"tau", refs.tau}, {"candidates", seen}, {"kept", kept},
                               {"needed", need}, {"rejection_rate", rate}});
            char line[200];
            std::snprintf(line, sizeof(line), "%s [%s]: kept %zu of %zu candidates (rejection rate %.1f%%)",
                          job.model_id.c_str(), key.c_str(), kept, seen, 100.0 * rate);
            diag.info(line);
            if (kept < need) {
                throw DataError("triage left " + job.model_id + " [" + key + "] with " + std::to_string(kept) +
                                " usable images, " + std::to_string(need) + " needed (deficit " +
                                std::to_string(need - kept) + ")");
            }
        }
    }
    generated = Manifest(std::move(all));
    generated.save(L.generated());
    write_file(L.audit(), audit);
    write_json(L.triage_summary(), summary);
    Manifest kept(std::move(kept_records));
    kept.save(L.synthetic());
    return kept;
}

void stage_features(const ExperimentConfig& cfg, const fs::path& out, Diagnostics& diag) {
    const Layout L{out};
    const Manifest m = load_required(L.manifest(), "preprocess");
    const Manifest synth = load_required(L.synthetic(), "triage");
    const auto jobs = gan_jobs(cfg, m);
    for (const auto& task : cfg.tasks) {
        const auto sel = select_task_data(cfg, m, task);
        const Manifest synth_train = task_synthetic(cfg, synth, jobs, task);
        const std::vector<std::pair<std::string, Manifest>> arms = {
            {"real_train", m.subset(sel.train)}, {"synth_train", synth_train}, {"real_test", m.subset(sel.test)}};
        for (const auto& [arm, man] : arms) {
            std::vector<FeatureVector> rows;
            for (const auto& r : man.records()) {
                PixelGrid img = load_record_image(r);
                rows.push_back(combined_descriptor(img));
            }
            write_feature_csv(L.features(sanitize(task.name), arm), man.ids(), rows);
        }
        diag.info("wrote LBP features for task " + task.name);
    }
}

Report stage_benchmark(const ExperimentConfig& cfg, const fs::path& out, Diagnostics& diag) {
    const Layout L{out};
    const Manifest m = load_required(L.manifest(), "preprocess");
    const Manifest synth = load_required(L.synthetic(), "triage");
    const auto jobs = gan_jobs(cfg, m);
    const GanRegistry registry = load_registry(L, jobs);
    Report report;
    for (const auto& task : cfg.tasks) {
        const auto sel = select_task_data(cfg, m, task);
        const Manifest real_train = m.subset(sel.train);
        const Manifest real_test = m.subset(sel.test);
        const Manifest synth_train = task_synthetic(cfg, synth, jobs, task);
        TstrOptions opt;
        opt.folds = cfg.folds;
        opt.artifact_dir = L.bench(sanitize(task.name));
        opt.log = [&](const std::string& s) { diag.info(s); };
        auto rows = run_tstr(task, real_train, synth_train, real_test, cfg.classifiers, registry, cfg.seed, opt);
        report.rows.insert(report.rows.end(), rows.begin(), rows.end());

        std::vector<ClassifierSpec> control;
        for (const auto& s : cfg.classifiers) {
            if (std::find(cfg.control.begin(), cfg.control.end(), to_string(s.kind)) != cfg.control.end()) {
                control.push_back(s);
            }
        }
        if (!control.empty()) {
            BenchmarkTask ctl = task;
            ctl.name = task.name + " [control A,A]";
            opt.artifact_dir = L.bench(sanitize(task.name) + "_control");
            auto crow = run_tstr(ctl, real_train, real_train, real_test, control, registry, cfg.seed, opt);
            for (const auto& r : crow) {
                if (r.relative_drop != 0.0) {
                    diag.warn("control arm " + r.classifier + " on " + task.name + " shows a non-zero drop");
                }
            }
            report.rows.insert(report.rows.end(), crow.begin(), crow.end());
        }
        report.metadata["task." + task.name + ".real_train"] = real_train.checksum();
        report.metadata["task." + task.name + ".real_test"] = real_test.checksum();
        report.metadata["task." + task.name + ".synth_train"] = synth_train.checksum();
    }
    report.metadata["seed"] = std::to_string(cfg.seed);
    report.metadata["preset"] = cfg.preset;
    report.metadata["config_digest"] = cfg.digest();
    report.metadata["manifest"] = m.checksum();
    report.metadata["synthetic_manifest"] = synth.checksum();
    write_json(L.results(), to_json(report));
    return report;
}

std::vector<fs::path> stage_report(const ExperimentConfig&, const fs::path& out, Diagnostics& diag) {
    const Layout L{out};
    if (!fs::exists(L.results())) throw DataError(L.results().string() + " not found; run the 'benchmark' stage first");
    const Report report = report_from_json(read_json(L.results()));
    const fs::path md = out / "report.md", csv = out / "report.csv";
    write_file(md, render_report(report, ReportFormat::Markdown));
    write_file(csv, render_report(report, ReportFormat::Csv));
    diag.info("wrote " + md.string() + " and " + csv.string());
    return {md, csv};
}

Report run_pipeline(const ExperimentConfig& cfg, const fs::path& out, Diagnostics& diag) {
    stage_ingest(cfg, out, diag);
    stage_preprocess(cfg, out, diag);
    stage_train_gan(cfg, out, diag);
    stage_montage(cfg, out, diag);
    stage_generate(cfg, out, diag);
    stage_triage(cfg, out, diag);
    stage_features(cfg, out, diag);
    Report r = stage_benchmark(cfg, out, diag);
    stage_report(cfg, out, diag);
    return r;
}

}  // namespace subbench
