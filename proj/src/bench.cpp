#include "subbench/bench.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "subbench/error.hpp"
#include "subbench/features.hpp"
#include "subbench/png_io.hpp"
#include "subbench/preprocess.hpp"
#include "subbench/rng.hpp"

namespace subbench {

double accuracy(const std::vector<int>& predictions, const std::vector<int>& truth) {
    if (predictions.empty()) throw DataError("accuracy of an empty prediction set");
    if (predictions.size() != truth.size()) throw DataError("accuracy: prediction and truth lengths differ");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) hits += predictions[i] == truth[i];
    return static_cast<double>(hits) / static_cast<double>(truth.size());
}

double round_half_even(double v, int decimals) {
    const double scale = std::pow(10.0, decimals);
    const double scaled = v * scale;
    const double lower = std::floor(scaled);
    const double frac = scaled - lower;
    double r;
    if (std::abs(frac - 0.5) < 1e-9) {
        r = std::fmod(lower, 2.0) == 0.0 ? lower : lower + 1.0;
    } else {
        r = std::round(scaled);
    }
    return r / scale;
}

double relative_drop(double acc_real, double acc_synth) {
    if (!(acc_real > 0.0)) throw DataError("relative_drop: acc_real must be positive");
    return round_half_even(100.0 * (acc_real - acc_synth) / acc_real, 2);
}

void BenchmarkTask::validate() const {
    if (name.empty()) throw ConfigError("benchmark task needs a name");
    if (target_key.empty()) throw ConfigError("task " + name + ": target_key is empty");
    if (classes.size() != 2 || classes[0] == classes[1]) {
        throw ConfigError("task " + name + ": exactly two distinct classes are required");
    }
    if (train_size <= 0 || test_size <= 0) throw ConfigError("task " + name + ": sizes must be positive");
}

ReportFormat parse_report_format(std::string_view s) {
    if (s == "markdown" || s == "md") return ReportFormat::Markdown;
    if (s == "csv") return ReportFormat::Csv;
    throw ConfigError("unknown report format '" + std::string(s) + "'");
}

namespace {

std::vector<BenchmarkResult> grouped(const std::vector<BenchmarkResult>& rows) {
    std::vector<std::string> order;
    for (const auto& r : rows) {
        if (std::find(order.begin(), order.end(), r.task) == order.end()) order.push_back(r.task);
    }
    std::vector<BenchmarkResult> out;
    for (const auto& t : order) {
        for (const auto& r : rows) {
            if (r.task == t) out.push_back(r);
        }
    }
    return out;
}

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), f, v);
    return buf;
}

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') cell += '"', ++i;
            else if (c == '"') quoted = false;
            else cell += c;
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            cells.push_back(cell);
            cell.clear();
        } else {
            cell += c;
        }
    }
    cells.push_back(cell);
    return cells;
}

std::string csv_cell(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) out += c == '"' ? std::string("\"\"") : std::string(1, c);
    return out + "\"";
}

}  // namespace

std::string render_report(const Report& report, ReportFormat format) {
    if (report.rows.empty()) throw DataError("render_report: no result rows");
    std::ostringstream out;
    const auto rows = grouped(report.rows);
    if (format == ReportFormat::Markdown) {
        out << "| task | model | acc_real | acc_synth | drop |\n";
        out << "|---|---|---:|---:|---:|\n";
        std::string last;
        for (const auto& r : rows) {
            out << "| " << (r.task == last ? "" : r.task) << " | " << r.classifier << " | " << fmt("%.4f", r.acc_real)
                << " | " << fmt("%.4f", r.acc_synth) << " | " << fmt("%.2f", r.relative_drop) << "% |\n";
            last = r.task;
        }
        if (!report.metadata.empty()) {
            out << "\n";
            for (const auto& [k, v] : report.metadata) out << "- " << k << ": " << v << "\n";
        }
    } else {
        out << "task,model,acc_real,acc_synth,drop\n";
        for (const auto& r : rows) {
            out << csv_cell(r.task) << ',' << csv_cell(r.classifier) << ',' << fmt("%.17g", r.acc_real) << ','
                << fmt("%.17g", r.acc_synth) << ',' << fmt("%.2f", r.relative_drop) << '\n';
        }
        for (const auto& [k, v] : report.metadata) out << "# " << k << '=' << v << '\n';
    }
    return out.str();
}

Report parse_report_csv(std::string_view text) {
    Report report;
    std::istringstream in{std::string(text)};
    std::string line;
    bool header = true;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (line.rfind("# ", 0) == 0) {
            const auto eq = line.find('=');
            if (eq != std::string::npos) report.metadata[line.substr(2, eq - 2)] = line.substr(eq + 1);
            continue;
        }
        if (header) {
            if (line != "task,model,acc_real,acc_synth,drop") throw DataError("report CSV has an unexpected header");
            header = false;
            continue;
        }
        const auto cells = split_csv(line);
        if (cells.size() != 5) throw DataError("report CSV row has " + std::to_string(cells.size()) + " cells");
        BenchmarkResult r;
        r.task = cells[0];
        r.classifier = cells[1];
        r.acc_real = std::stod(cells[2]);
        r.acc_synth = std::stod(cells[3]);
        r.relative_drop = std::stod(cells[4]);
        report.rows.push_back(std::move(r));
    }
    return report;
}

nlohmann::json to_json(const Report& r) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& x : r.rows) {
        rows.push_back({{"task", x.task},
                        {"model", x.classifier},
                        {"acc_real", x.acc_real},
                        {"acc_synth", x.acc_synth},
                        {"drop", x.relative_drop},
                        {"params_real", x.params_real},
                        {"params_synth", x.params_synth}});
    }
    return {{"rows", rows}, {"metadata", r.metadata}};
}

Report report_from_json(const nlohmann::json& j) {
    Report r;
    for (const auto& x : j.at("rows")) {
        r.rows.push_back({x.at("task").get<std::string>(), x.at("model").get<std::string>(),
                          x.at("acc_real").get<double>(), x.at("acc_synth").get<double>(), x.at("drop").get<double>(),
                          x.value("params_real", std::string()), x.value("params_synth", std::string())});
    }
    r.metadata = j.value("metadata", std::map<std::string, std::string>{});
    return r;
}

PixelGrid load_record_image(const ImageRecord& r) { return read_png(r.path).grid; }

void check_leakage(const Manifest& synth_train, const Manifest& real_test, const GanRegistry& registry) {
    std::vector<std::string> offending;
    for (const auto& r : synth_train.records()) {
        if (r.source_kind == SourceKind::Real) {
            if (real_test.contains(r.id)) offending.push_back(r.id + " (test record in training arm)");
            continue;
        }
        const auto it = registry.find(r.provenance->model_id);
        if (it == registry.end()) {
            throw LeakageError("synthetic record " + r.id + " comes from generator '" + r.provenance->model_id +
                               "' with no stored training manifest");
        }
        std::vector<std::string> hits;
        for (const auto& t : real_test.records()) {
            if (it->second.count(t.id)) hits.push_back(t.id);
        }
        if (!hits.empty()) {
            std::string msg = r.id + " (generator " + r.provenance->model_id + " trained on test ids";
            for (std::size_t i = 0; i < std::min<std::size_t>(hits.size(), 5); ++i) msg += " " + hits[i];
            if (hits.size() > 5) msg += " ...";
            offending.push_back(msg + ")");
        }
    }
    if (!offending.empty()) {
        std::string msg = "leakage guard: " + std::to_string(offending.size()) + " training record(s) touch the test set:";
        for (std::size_t i = 0; i < std::min<std::size_t>(offending.size(), 10); ++i) msg += "\n  " + offending[i];
        throw LeakageError(msg);
    }
}

namespace {

void check_balance(const BenchmarkTask& task, const Manifest& m, const std::string& arm) {
    const auto keys = task.balance_keys.empty() ? std::vector<std::string>{task.target_key} : task.balance_keys;
    std::map<std::string, int> counts;
    for (const auto& r : m.records()) {
        const auto& cls = r.label(task.target_key);
        if (cls != task.classes[0] && cls != task.classes[1]) {
            throw DataError(arm + ": record " + r.id + " has class '" + cls + "' outside the task");
        }
        std::string combo;
        for (const auto& k : keys) combo += k + "=" + r.label(k) + ",";
        ++counts[combo];
    }
    if (counts.empty()) throw DataError(arm + " is empty");
    const int first = counts.begin()->second;
    for (const auto& [combo, n] : counts) {
        if (n != first) {
            throw DataError(arm + " is not balanced: " + combo + " has " + std::to_string(n) + " records, " +
                            counts.begin()->first + " has " + std::to_string(first));
        }
    }
}

std::vector<int> class_ids(const BenchmarkTask& task, const Manifest& m) {
    std::vector<int> y;
    for (const auto& r : m.records()) y.push_back(r.label(task.target_key) == task.classes[0] ? 0 : 1);
    return y;
}

struct ArmData {
    Matrix lbp;
    Matrix pixels;
    std::vector<int> y;
    int channels = 0, height = 0, width = 0;
};

ArmData load_arm(const BenchmarkTask& task, const Manifest& m, const TstrOptions& opt, bool need_lbp, bool need_pixels) {
    ArmData d;
    d.y = class_ids(task, m);
    for (const auto& r : m.records()) {
        PixelGrid img = opt.loader(r);
        if (img.range() == Range::Signed) img = img.to_range(Range::Unit);
        if (need_lbp) d.lbp.push_back(combined_descriptor(img, opt.lbp_radii));
        if (need_pixels) {
            if (d.height == 0) d.channels = img.channels(), d.height = img.height(), d.width = img.width();
            if (img.channels() != d.channels || img.height() != d.height || img.width() != d.width) {
                img = resize(img.channels() == d.channels ? img : to_grayscale(img), d.height, d.width);
            }
            FeatureVector px(static_cast<std::size_t>(d.channels) * d.height * d.width);
            for (int c = 0; c < d.channels; ++c) {
                for (int y = 0; y < d.height; ++y) {
                    for (int x = 0; x < d.width; ++x) {
                        px[(static_cast<std::size_t>(c) * d.height + y) * d.width + x] = img.at(y, x, c);
                    }
                }
            }
            d.pixels.push_back(std::move(px));
        }
    }
    return d;
}

std::string sanitize(std::string s) {
    for (auto& c : s) {
        if (!std::isalnum(static_cast<unsigned char>(c)) && c != '-' && c != '_') c = '_';
    }
    return s;
}

}  // namespace

std::vector<BenchmarkResult> run_tstr(const BenchmarkTask& task, const Manifest& real_train,
                                      const Manifest& synth_train, const Manifest& real_test,
                                      const std::vector<ClassifierSpec>& specs, const GanRegistry& registry,
                                      std::uint64_t seed, const TstrOptions& options) {
    task.validate();
    if (specs.empty()) throw ConfigError("run_tstr: no classifier specs");
    for (const auto& r : real_test.records()) {
        if (r.source_kind != SourceKind::Real) throw DataError("run_tstr: test record " + r.id + " is not real");
    }
    for (const auto& r : real_train.records()) {
        if (r.source_kind != SourceKind::Real) throw DataError("run_tstr: real arm record " + r.id + " is synthetic");
        if (real_test.contains(r.id)) throw LeakageError("run_tstr: record " + r.id + " is in both train and test");
    }
    check_leakage(synth_train, real_test, registry);
    check_balance(task, real_train, "real training arm");
    check_balance(task, synth_train, "synthetic training arm");
    check_balance(task, real_test, "test set");

    bool need_lbp = false, need_pixels = false;
    for (const auto& s : specs) (s.kind == ClassifierKind::Cnn ? need_pixels : need_lbp) = true;
    auto log = [&](const std::string& m) {
        if (options.log) options.log(m);
    };
    log("extracting features for " + task.name);
    const ArmData real = load_arm(task, real_train, options, need_lbp, need_pixels);
    const ArmData synth = load_arm(task, synth_train, options, need_lbp, need_pixels);
    const ArmData test = load_arm(task, real_test, options, need_lbp, need_pixels);

    std::vector<BenchmarkResult> out;
    for (const auto& spec0 : specs) {
        ClassifierSpec spec = spec0;
        const bool cnn = spec.kind == ClassifierKind::Cnn;
        if (cnn) {
            spec.fixed.emplace("channels", static_cast<double>(real.channels));
            spec.fixed.emplace("height", static_cast<double>(real.height));
            spec.fixed.emplace("width", static_cast<double>(real.width));
        }
        const std::uint64_t spec_seed = Rng::derive(seed, to_string(spec.kind));
        BenchmarkResult row;
        row.task = task.name;
        row.classifier = to_string(spec.kind);
        for (int arm = 0; arm < 2; ++arm) {
            const ArmData& d = arm == 0 ? real : synth;
            const Matrix& X = cnn ? d.pixels : d.lbp;
            const auto candidates = spec.candidates();
            Params chosen = candidates.front();
            std::vector<double> fold_scores;
            if (candidates.size() > 1) {
                const auto cv = cross_validate(spec, X, d.y, options.folds, spec_seed);
                chosen = cv.best();
                fold_scores = cv.fold_accuracy[cv.selected];
            }
            log(task.name + " / " + row.classifier + " / " + (arm == 0 ? "real" : "synthetic") + ": " + to_string(chosen));
            TrainedModel model = fit(spec, chosen, X, d.y, spec_seed);
            model.fold_scores = fold_scores;
            const auto pred = model.predict(cnn ? test.pixels : test.lbp);
            const double acc = accuracy(pred.labels, test.y);
            (arm == 0 ? row.acc_real : row.acc_synth) = acc;
            (arm == 0 ? row.params_real : row.params_synth) = to_string(chosen);
            if (options.artifact_dir) {
                const auto stem = sanitize(task.name) + "_" + row.classifier + (arm == 0 ? "_real" : "_synth");
                model.save(*options.artifact_dir / (stem + ".model"));
                write_predictions_csv(*options.artifact_dir / (stem + "_predictions.csv"), real_test.ids(), pred);
            }
        }
        row.relative_drop = relative_drop(row.acc_real, row.acc_synth);
        out.push_back(std::move(row));
    }
    return out;
}

}  // namespace subbench
