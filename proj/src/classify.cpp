#include "subbench/classify.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "subbench/cnn.hpp"
#include "subbench/error.hpp"
#include "subbench/rng.hpp"

namespace subbench {

std::string to_string(ClassifierKind k) {
    switch (k) {
        case ClassifierKind::Knn: return "knn";
        case ClassifierKind::Svm: return "svm";
        case ClassifierKind::RandomForest: return "random_forest";
        case ClassifierKind::Cnn: return "cnn";
    }
    return "unknown";
}

ClassifierKind parse_classifier_kind(std::string_view s) {
    if (s == "knn") return ClassifierKind::Knn;
    if (s == "svm") return ClassifierKind::Svm;
    if (s == "random_forest" || s == "rf") return ClassifierKind::RandomForest;
    if (s == "cnn") return ClassifierKind::Cnn;
    throw ConfigError("unknown classifier kind '" + std::string(s) + "'");
}

double param_number(const Params& p, const std::string& name, double fallback) {
    const auto it = p.find(name);
    if (it == p.end()) return fallback;
    if (const auto* d = std::get_if<double>(&it->second)) return *d;
    throw ConfigError("parameter '" + name + "' must be numeric");
}

std::string param_text(const Params& p, const std::string& name, const std::string& fallback) {
    const auto it = p.find(name);
    if (it == p.end()) return fallback;
    if (const auto* s = std::get_if<std::string>(&it->second)) return *s;
    throw ConfigError("parameter '" + name + "' must be text");
}

std::string to_string(const Params& p) {
    std::ostringstream out;
    bool first = true;
    for (const auto& [k, v] : p) {
        if (!first) out << ' ';
        first = false;
        out << k << '=';
        if (const auto* d = std::get_if<double>(&v)) out << *d;
        else out << std::get<std::string>(v);
    }
    return out.str();
}

namespace {

nlohmann::json value_json(const ParamValue& v) {
    if (const auto* d = std::get_if<double>(&v)) return *d;
    return std::get<std::string>(v);
}

ParamValue value_from_json(const nlohmann::json& j) {
    if (j.is_number()) return j.get<double>();
    if (j.is_boolean()) return j.get<bool>() ? 1.0 : 0.0;
    if (j.is_string()) return j.get<std::string>();
    throw ConfigError("hyperparameter values must be numbers or strings");
}

const std::map<ClassifierKind, std::set<std::string>>& known_params() {
    static const std::map<ClassifierKind, std::set<std::string>> table = {
        {ClassifierKind::Knn, {"k"}},
        {ClassifierKind::Svm, {"C", "kernel", "gamma_scale", "max_iter"}},
        {ClassifierKind::RandomForest, {"trees", "depth", "max_features", "bootstrap", "min_samples_split"}},
        {ClassifierKind::Cnn, {"learning_rate", "epochs", "batch_size", "channels", "height", "width", "fc_width",
                               "preset", "val_fraction"}},
    };
    return table;
}

}  // namespace

nlohmann::json to_json(const Params& p) {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [k, v] : p) j[k] = value_json(v);
    return j;
}

Params params_from_json(const nlohmann::json& j) {
    Params p;
    for (auto it = j.begin(); it != j.end(); ++it) p[it.key()] = value_from_json(it.value());
    return p;
}

void ClassifierSpec::validate() const {
    if (grid.empty()) throw ConfigError(to_string(kind) + ": hyperparameter grid is empty");
    const auto& known = known_params().at(kind);
    for (const auto& [name, values] : grid) {
        if (!known.count(name)) throw ConfigError(to_string(kind) + ": unknown hyperparameter '" + name + "'");
        if (values.empty()) throw ConfigError(to_string(kind) + ": no candidates for '" + name + "'");
    }
    for (const auto& [name, value] : fixed) {
        if (!known.count(name)) throw ConfigError(to_string(kind) + ": unknown hyperparameter '" + name + "'");
    }
}

std::vector<Params> ClassifierSpec::candidates() const {
    validate();
    std::vector<Params> out{fixed};
    for (const auto& [name, values] : grid) {
        std::vector<Params> next;
        for (const auto& base : out) {
            for (const auto& v : values) {
                Params p = base;
                p[name] = v;
                next.push_back(std::move(p));
            }
        }
        out = std::move(next);
    }
    return out;
}

nlohmann::json to_json(const ClassifierSpec& s) {
    nlohmann::json grid = nlohmann::json::object();
    for (const auto& [name, values] : s.grid) {
        auto& arr = grid[name] = nlohmann::json::array();
        for (const auto& v : values) arr.push_back(value_json(v));
    }
    return {{"kind", to_string(s.kind)}, {"grid", grid}, {"fixed", to_json(s.fixed)}, {"standardize", s.standardize}};
}

ClassifierSpec classifier_spec_from_json(const nlohmann::json& j) {
    ClassifierSpec s;
    s.kind = parse_classifier_kind(j.at("kind").get<std::string>());
    for (auto it = j.at("grid").begin(); it != j.at("grid").end(); ++it) {
        auto& values = s.grid[it.key()];
        if (it.value().is_array()) {
            for (const auto& v : it.value()) values.push_back(value_from_json(v));
        } else {
            values.push_back(value_from_json(it.value()));
        }
    }
    if (j.contains("fixed")) s.fixed = params_from_json(j.at("fixed"));
    s.standardize = j.value("standardize", false);
    s.validate();
    return s;
}

namespace {

std::vector<int> sorted_classes(const std::vector<int>& y) {
    std::vector<int> c(y.begin(), y.end());
    std::sort(c.begin(), c.end());
    c.erase(std::unique(c.begin(), c.end()), c.end());
    return c;
}

void check_matrix(const Matrix& X, const std::string& what) {
    if (X.empty()) throw DataError(what + ": empty feature matrix");
    const auto d = X.front().size();
    for (const auto& row : X) {
        if (row.size() != d) throw DataError(what + ": ragged feature matrix");
    }
}

std::size_t class_index(const std::vector<int>& classes, int label) {
    return static_cast<std::size_t>(std::lower_bound(classes.begin(), classes.end(), label) - classes.begin());
}

nlohmann::json matrix_json(const Matrix& X) { return X; }

Matrix matrix_from_json(const nlohmann::json& j) { return j.get<Matrix>(); }

// ------------------------------------------------------------------ k-NN

class KnnClassifier final : public Classifier {
public:
    explicit KnnClassifier(const Params& p) : k_(static_cast<int>(param_number(p, "k", 5))) {
        if (k_ < 1) throw ConfigError("knn: k must be >= 1");
    }

    void fit(const Matrix& X, const std::vector<int>& y) override {
        check_matrix(X, "knn");
        if (X.size() != y.size()) throw DataError("knn: X and y differ in length");
        X_ = X;
        y_ = y;
        classes_ = sorted_classes(y);
    }

    std::vector<std::vector<double>> predict_scores(const Matrix& X) const override {
        const std::size_t n = X_.size();
        const std::size_t k = std::min<std::size_t>(k_, n);
        std::vector<std::vector<double>> out;
        std::vector<std::pair<double, std::size_t>> dist(n);
        for (const auto& q : X) {
            if (q.size() != X_.front().size()) throw DataError("knn: feature dimension mismatch");
            for (std::size_t i = 0; i < n; ++i) {
                double d = 0.0;
                for (std::size_t f = 0; f < q.size(); ++f) {
                    const double t = q[f] - X_[i][f];
                    d += t * t;
                }
                dist[i] = {d, i};
            }
            std::partial_sort(dist.begin(), dist.begin() + k, dist.end());
            std::vector<double> votes(classes_.size(), 0.0);
            for (std::size_t i = 0; i < k; ++i) votes[class_index(classes_, y_[dist[i].second])] += 1.0 / k;
            out.push_back(std::move(votes));
        }
        return out;
    }

    Container save() const override {
        Container c;
        c.meta["k"] = k_;
        c.meta["X"] = matrix_json(X_);
        c.meta["y"] = y_;
        return c;
    }

    static std::unique_ptr<KnnClassifier> load(const Container& c) {
        auto m = std::make_unique<KnnClassifier>(Params{{"k", c.meta.at("k").get<double>()}});
        m->fit(matrix_from_json(c.meta.at("X")), c.meta.at("y").get<std::vector<int>>());
        return m;
    }

private:
    int k_;
    Matrix X_;
    std::vector<int> y_;
};

// ------------------------------------------------------------------ SVM

class SvmClassifier final : public Classifier {
public:
    explicit SvmClassifier(const Params& p)
        : C_(param_number(p, "C", 1.0)),
          kernel_(param_text(p, "kernel", "rbf")),
          gamma_scale_(param_number(p, "gamma_scale", 1.0)),
          max_iter_(static_cast<long>(param_number(p, "max_iter", 200000))) {
        if (C_ <= 0.0) throw ConfigError("svm: C must be positive");
        if (kernel_ != "rbf" && kernel_ != "linear") throw ConfigError("svm: kernel must be 'linear' or 'rbf'");
        if (gamma_scale_ <= 0.0) throw ConfigError("svm: gamma_scale must be positive");
    }

    void fit(const Matrix& X, const std::vector<int>& y) override {
        check_matrix(X, "svm");
        if (X.size() != y.size()) throw DataError("svm: X and y differ in length");
        classes_ = sorted_classes(y);
        if (classes_.size() != 2) throw DataError("svm: binary classifier needs exactly two classes");
        const std::size_t n = X.size(), d = X.front().size();

        double mean = 0.0, sq = 0.0;
        for (const auto& r : X) {
            for (double v : r) {
                mean += v;
                sq += v * v;
            }
        }
        const double cnt = static_cast<double>(n * d);
        mean /= cnt;
        const double var = sq / cnt - mean * mean;
        gamma_ = gamma_scale_ / (static_cast<double>(d) * (var > 0.0 ? var : 1.0));

        std::vector<double> yy(n);
        for (std::size_t i = 0; i < n; ++i) yy[i] = y[i] == classes_[1] ? 1.0 : -1.0;
        std::vector<double> Q(n * n);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = i; j < n; ++j) {
                const double q = yy[i] * yy[j] * kernel(X[i], X[j]);
                Q[i * n + j] = Q[j * n + i] = q;
            }
        }

        std::vector<double> alpha(n, 0.0), G(n, -1.0);
        constexpr double eps = 1e-3, tau = 1e-12;
        auto up = [&](std::size_t t) { return (yy[t] > 0 && alpha[t] < C_) || (yy[t] < 0 && alpha[t] > 0); };
        auto low = [&](std::size_t t) { return (yy[t] > 0 && alpha[t] > 0) || (yy[t] < 0 && alpha[t] < C_); };
        for (long iter = 0; iter < max_iter_; ++iter) {
            std::size_t i = n, j = n;
            double gmax = -HUGE_VAL, gmin = HUGE_VAL;
            for (std::size_t t = 0; t < n; ++t) {
                const double v = -yy[t] * G[t];
                if (up(t) && v > gmax) gmax = v, i = t;
                if (low(t) && v < gmin) gmin = v, j = t;
            }
            if (i == n || j == n || gmax - gmin < eps) break;
            const double ai = alpha[i], aj = alpha[j];
            const double* Qi = &Q[i * n];
            const double* Qj = &Q[j * n];
            if (yy[i] != yy[j]) {
                double quad = Qi[i] + Qj[j] + 2.0 * Qi[j];
                if (quad <= 0) quad = tau;
                const double delta = (-G[i] - G[j]) / quad;
                const double diff = alpha[i] - alpha[j];
                alpha[i] += delta;
                alpha[j] += delta;
                if (diff > 0) {
                    if (alpha[j] < 0) alpha[j] = 0, alpha[i] = diff;
                } else if (alpha[i] < 0) {
                    alpha[i] = 0, alpha[j] = -diff;
                }
                if (diff > 0) {
                    if (alpha[i] > C_) alpha[i] = C_, alpha[j] = C_ - diff;
                } else if (alpha[j] > C_) {
                    alpha[j] = C_, alpha[i] = C_ + diff;
                }
            } else {
                double quad = Qi[i] + Qj[j] - 2.0 * Qi[j];
                if (quad <= 0) quad = tau;
                const double delta = (G[i] - G[j]) / quad;
                const double sum = alpha[i] + alpha[j];
                alpha[i] -= delta;
                alpha[j] += delta;
                if (sum > C_) {
                    if (alpha[i] > C_) alpha[i] = C_, alpha[j] = sum - C_;
                } else if (alpha[j] < 0) {
                    alpha[j] = 0, alpha[i] = sum;
                }
                if (sum > C_) {
                    if (alpha[j] > C_) alpha[j] = C_, alpha[i] = sum - C_;
                } else if (alpha[i] < 0) {
                    alpha[i] = 0, alpha[j] = sum;
                }
            }
            const double di = alpha[i] - ai, dj = alpha[j] - aj;
            for (std::size_t t = 0; t < n; ++t) G[t] += Qi[t] * di + Qj[t] * dj;
        }

        double ub = HUGE_VAL, lb = -HUGE_VAL, sum_free = 0.0;
        int n_free = 0;
        for (std::size_t t = 0; t < n; ++t) {
            const double yg = yy[t] * G[t];
            if (alpha[t] >= C_) {
                if (yy[t] < 0) ub = std::min(ub, yg);
                else lb = std::max(lb, yg);
            } else if (alpha[t] <= 0) {
                if (yy[t] > 0) ub = std::min(ub, yg);
                else lb = std::max(lb, yg);
            } else {
                ++n_free;
                sum_free += yg;
            }
        }
        rho_ = n_free > 0 ? sum_free / n_free : (ub + lb) / 2.0;

        sv_.clear();
        coef_.clear();
        for (std::size_t t = 0; t < n; ++t) {
            if (alpha[t] > 0) {
                sv_.push_back(X[t]);
                coef_.push_back(yy[t] * alpha[t]);
            }
        }
    }

    double decision(const FeatureVector& x) const {
        double f = -rho_;
        for (std::size_t s = 0; s < sv_.size(); ++s) f += coef_[s] * kernel(sv_[s], x);
        return f;
    }

    std::vector<std::vector<double>> predict_scores(const Matrix& X) const override {
        std::vector<std::vector<double>> out;
        for (const auto& x : X) {
            if (!sv_.empty() && x.size() != sv_.front().size()) throw DataError("svm: feature dimension mismatch");
            const double p = 1.0 / (1.0 + std::exp(-decision(x)));
            out.push_back({1.0 - p, p});
        }
        return out;
    }

    Container save() const override {
        Container c;
        c.meta["C"] = C_;
        c.meta["kernel"] = kernel_;
        c.meta["gamma_scale"] = gamma_scale_;
        c.meta["gamma"] = gamma_;
        c.meta["rho"] = rho_;
        c.meta["class_labels"] = classes_;
        c.meta["support_vectors"] = matrix_json(sv_);
        c.meta["coef"] = coef_;
        return c;
    }

    static std::unique_ptr<SvmClassifier> load(const Container& c) {
        auto m = std::make_unique<SvmClassifier>(Params{{"C", c.meta.at("C").get<double>()},
                                                        {"kernel", c.meta.at("kernel").get<std::string>()},
                                                        {"gamma_scale", c.meta.at("gamma_scale").get<double>()}});
        m->gamma_ = c.meta.at("gamma").get<double>();
        m->rho_ = c.meta.at("rho").get<double>();
        m->classes_ = c.meta.at("class_labels").get<std::vector<int>>();
        m->sv_ = matrix_from_json(c.meta.at("support_vectors"));
        m->coef_ = c.meta.at("coef").get<std::vector<double>>();
        return m;
    }

private:
    double kernel(const FeatureVector& a, const FeatureVector& b) const {
        double s = 0.0;
        if (kernel_ == "linear") {
            for (std::size_t f = 0; f < a.size(); ++f) s += a[f] * b[f];
            return s;
        }
        for (std::size_t f = 0; f < a.size(); ++f) {
            const double t = a[f] - b[f];
            s += t * t;
        }
        return std::exp(-gamma_ * s);
    }

    double C_;
    std::string kernel_;
    double gamma_scale_;
    long max_iter_;
    double gamma_ = 1.0;
    double rho_ = 0.0;
    Matrix sv_;
    std::vector<double> coef_;
};

// ------------------------------------------------------------------ random forest

struct TreeNode {
    int feature = -1;  // -1 for leaves
    double threshold = 0.0;
    int left = -1, right = -1;
    int label = 0;  // majority label at the node
};

class RandomForestClassifier final : public Classifier {
public:
    RandomForestClassifier(const Params& p, std::uint64_t seed)
        : trees_n_(static_cast<int>(param_number(p, "trees", 100))),
          depth_(static_cast<int>(param_number(p, "depth", 0))),
          max_features_(static_cast<int>(param_number(p, "max_features", 0))),
          bootstrap_(param_number(p, "bootstrap", 1) != 0.0),
          min_split_(static_cast<int>(param_number(p, "min_samples_split", 2))),
          seed_(seed) {
        if (trees_n_ < 1) throw ConfigError("random_forest: trees must be >= 1");
        if (depth_ < 0 || max_features_ < 0 || min_split_ < 2) throw ConfigError("random_forest: invalid tree limits");
    }

    void fit(const Matrix& X, const std::vector<int>& y) override {
        check_matrix(X, "random_forest");
        if (X.size() != y.size()) throw DataError("random_forest: X and y differ in length");
        classes_ = sorted_classes(y);
        X_ = &X;
        y_.resize(y.size());
        for (std::size_t i = 0; i < y.size(); ++i) y_[i] = static_cast<int>(class_index(classes_, y[i]));
        const int d = static_cast<int>(X.front().size());
        mtry_ = max_features_ > 0 ? std::min(max_features_, d)
                                  : std::max(1, static_cast<int>(std::floor(std::sqrt(static_cast<double>(d)))));
        trees_.clear();
        for (int t = 0; t < trees_n_; ++t) {
            Rng rng(Rng::derive(seed_, static_cast<std::uint64_t>(t)));
            std::vector<std::size_t> idx(X.size());
            if (bootstrap_) {
                for (auto& i : idx) i = rng.below(X.size());
            } else {
                std::iota(idx.begin(), idx.end(), 0);
            }
            std::vector<TreeNode> nodes;
            grow(nodes, idx, 0, rng);
            trees_.push_back(std::move(nodes));
        }
        X_ = nullptr;
    }

    std::vector<std::vector<double>> predict_scores(const Matrix& X) const override {
        std::vector<std::vector<double>> out;
        for (const auto& x : X) {
            std::vector<double> votes(classes_.size(), 0.0);
            for (const auto& tree : trees_) {
                int n = 0;
                while (tree[n].feature >= 0) {
                    if (static_cast<std::size_t>(tree[n].feature) >= x.size()) {
                        throw DataError("random_forest: feature dimension mismatch");
                    }
                    n = x[tree[n].feature] <= tree[n].threshold ? tree[n].left : tree[n].right;
                }
                votes[tree[n].label] += 1.0 / static_cast<double>(trees_.size());
            }
            out.push_back(std::move(votes));
        }
        return out;
    }

    Container save() const override {
        Container c;
        c.meta["class_labels"] = classes_;
        auto& trees = c.meta["trees"] = nlohmann::json::array();
        for (const auto& tree : trees_) {
            nlohmann::json t = nlohmann::json::array();
            for (const auto& n : tree) t.push_back({n.feature, n.threshold, n.left, n.right, n.label});
            trees.push_back(std::move(t));
        }
        return c;
    }

    static std::unique_ptr<RandomForestClassifier> load(const Container& c) {
        auto m = std::make_unique<RandomForestClassifier>(Params{}, 0);
        m->classes_ = c.meta.at("class_labels").get<std::vector<int>>();
        for (const auto& t : c.meta.at("trees")) {
            std::vector<TreeNode> nodes;
            for (const auto& n : t) {
                nodes.push_back({n.at(0).get<int>(), n.at(1).get<double>(), n.at(2).get<int>(), n.at(3).get<int>(),
                                 n.at(4).get<int>()});
            }
            m->trees_.push_back(std::move(nodes));
        }
        return m;
    }

private:
    int grow(std::vector<TreeNode>& nodes, const std::vector<std::size_t>& idx, int depth, Rng& rng) {
        const std::size_t k = classes_.size();
        std::vector<double> counts(k, 0.0);
        for (auto i : idx) counts[y_[i]] += 1.0;
        const int self = static_cast<int>(nodes.size());
        nodes.push_back({});
        nodes[self].label = static_cast<int>(std::max_element(counts.begin(), counts.end()) - counts.begin());
        const double n = static_cast<double>(idx.size());
        auto gini = [&](const std::vector<double>& c, double total) {
            double s = 1.0;
            for (double v : c) s -= (v / total) * (v / total);
            return s;
        };
        const double parent = gini(counts, n);
        if (parent <= 0.0 || static_cast<int>(idx.size()) < min_split_ || (depth_ > 0 && depth >= depth_)) return self;

        const int d = static_cast<int>(X_->front().size());
        std::vector<int> feats(d);
        std::iota(feats.begin(), feats.end(), 0);
        for (int i = 0; i < mtry_; ++i) std::swap(feats[i], feats[i + rng.below(d - i)]);

        double best = parent;
        int best_f = -1;
        double best_t = 0.0;
        std::vector<std::pair<double, int>> col(idx.size());
        for (int fi = 0; fi < mtry_; ++fi) {
            const int f = feats[fi];
            for (std::size_t i = 0; i < idx.size(); ++i) col[i] = {(*X_)[idx[i]][f], y_[idx[i]]};
            std::sort(col.begin(), col.end());
            std::vector<double> left(k, 0.0), right = counts;
            for (std::size_t i = 0; i + 1 < col.size(); ++i) {
                left[col[i].second] += 1.0;
                right[col[i].second] -= 1.0;
                if (col[i].first == col[i + 1].first) continue;
                const double nl = static_cast<double>(i + 1), nr = n - nl;
                const double imp = (nl * gini(left, nl) + nr * gini(right, nr)) / n;
                if (imp < best) {
                    best = imp;
                    best_f = f;
                    best_t = 0.5 * (col[i].first + col[i + 1].first);
                }
            }
        }
        if (best_f < 0) return self;

        std::vector<std::size_t> li, ri;
        for (auto i : idx) ((*X_)[i][best_f] <= best_t ? li : ri).push_back(i);
        nodes[self].feature = best_f;
        nodes[self].threshold = best_t;
        const int l = grow(nodes, li, depth + 1, rng);
        const int r = grow(nodes, ri, depth + 1, rng);
        nodes[self].left = l;
        nodes[self].right = r;
        return self;
    }

    int trees_n_, depth_, max_features_;
    bool bootstrap_;
    int min_split_;
    std::uint64_t seed_;
    int mtry_ = 1;
    const Matrix* X_ = nullptr;
    std::vector<int> y_;
    std::vector<std::vector<TreeNode>> trees_;
};

// ------------------------------------------------------------------ CNN adapter

class CnnClassifier final : public Classifier {
public:
    CnnClassifier(const Params& p, std::uint64_t seed) : seed_(seed) {
        cfg_ = param_text(p, "preset", "desk") == "vgg16" ? CnnConfig::vgg16() : CnnConfig::desk();
        cfg_.learning_rate = param_number(p, "learning_rate", cfg_.learning_rate);
        cfg_.epochs = static_cast<int>(param_number(p, "epochs", cfg_.epochs));
        cfg_.batch_size = static_cast<int>(param_number(p, "batch_size", cfg_.batch_size));
        cfg_.fc_width = static_cast<int>(param_number(p, "fc_width", cfg_.fc_width));
        cfg_.val_fraction = param_number(p, "val_fraction", cfg_.val_fraction);
        c_ = static_cast<int>(param_number(p, "channels", 1));
        h_ = static_cast<int>(param_number(p, "height", 0));
        w_ = static_cast<int>(param_number(p, "width", 0));
        if (c_ <= 0 || h_ <= 0 || w_ <= 0) throw ConfigError("cnn: channels, height and width parameters are required");
        cfg_.validate();
    }

    void fit(const Matrix& X, const std::vector<int>& y) override {
        check_matrix(X, "cnn");
        if (X.size() != y.size()) throw DataError("cnn: X and y differ in length");
        classes_ = sorted_classes(y);
        if (classes_.size() < 2) throw DataError("cnn: needs at least two classes");
        std::vector<int> yi(y.size());
        for (std::size_t i = 0; i < y.size(); ++i) yi[i] = static_cast<int>(class_index(classes_, y[i]));

        // Stratified validation hold-out: per class, the first round(fraction * n_c)
        // of a shuffled order (at least one).
        Rng rng(Rng::derive(seed_, "cnn-val"));
        std::vector<std::size_t> train_idx, val_idx;
        for (std::size_t c = 0; c < classes_.size(); ++c) {
            std::vector<std::size_t> members;
            for (std::size_t i = 0; i < yi.size(); ++i) {
                if (yi[i] == static_cast<int>(c)) members.push_back(i);
            }
            rng.shuffle(members);
            const std::size_t nv = std::max<std::size_t>(1, std::llround(cfg_.val_fraction * members.size()));
            if (nv >= members.size()) throw DataError("cnn: class too small for a validation split");
            val_idx.insert(val_idx.end(), members.begin(), members.begin() + nv);
            train_idx.insert(train_idx.end(), members.begin() + nv, members.end());
        }
        std::sort(train_idx.begin(), train_idx.end());
        std::sort(val_idx.begin(), val_idx.end());
        std::vector<int> ty, vy;
        for (auto i : train_idx) ty.push_back(yi[i]);
        for (auto i : val_idx) vy.push_back(yi[i]);
        auto result = train_cnn(to_tensor(X, train_idx), ty, to_tensor(X, val_idx), vy, cfg_,
                                static_cast<int>(classes_.size()), seed_);
        best_epoch_ = result.best_epoch;
        val_loss_ = result.val_loss;
        model_ = std::move(result.model);
    }

    std::vector<std::vector<double>> predict_scores(const Matrix& X) const override {
        std::vector<std::size_t> all(X.size());
        std::iota(all.begin(), all.end(), 0);
        const auto p = model_->predict_proba(to_tensor(X, all));
        std::vector<std::vector<double>> out;
        const std::size_t k = classes_.size();
        for (std::size_t i = 0; i < X.size(); ++i) out.emplace_back(p.data.begin() + i * k, p.data.begin() + (i + 1) * k);
        return out;
    }

    Container save() const override {
        Container c = model_->save();
        c.meta["class_labels"] = classes_;
        c.meta["best_epoch"] = best_epoch_;
        c.meta["val_loss"] = val_loss_;
        return c;
    }

    static std::unique_ptr<CnnClassifier> load(const Container& c) {
        const auto in = c.meta.at("input").get<std::vector<int>>();
        auto m = std::make_unique<CnnClassifier>(
            Params{{"channels", double(in.at(0))}, {"height", double(in.at(1))}, {"width", double(in.at(2))}}, 0);
        Container inner = c;
        inner.kind = "cnn";
        m->model_ = CnnModel::load(inner);
        m->cfg_ = m->model_->config();
        m->classes_ = c.meta.at("class_labels").get<std::vector<int>>();
        m->best_epoch_ = c.meta.value("best_epoch", 0);
        return m;
    }

private:
    nn::Tensor to_tensor(const Matrix& X, const std::vector<std::size_t>& idx) const {
        const std::size_t f = static_cast<std::size_t>(c_) * h_ * w_;
        nn::Tensor t({static_cast<int>(idx.size()), c_, h_, w_});
        for (std::size_t i = 0; i < idx.size(); ++i) {
            if (X[idx[i]].size() != f) throw DataError("cnn: flattened image has the wrong size");
            std::copy(X[idx[i]].begin(), X[idx[i]].end(), t.data.begin() + i * f);
        }
        return t;
    }

    std::uint64_t seed_;
    CnnConfig cfg_;
    int c_ = 1, h_ = 0, w_ = 0;
    int best_epoch_ = 0;
    std::vector<double> val_loss_;
    std::shared_ptr<CnnModel> model_;
};

std::unique_ptr<Classifier> load_classifier(ClassifierKind kind, const Container& c) {
    switch (kind) {
        case ClassifierKind::Knn: return KnnClassifier::load(c);
        case ClassifierKind::Svm: return SvmClassifier::load(c);
        case ClassifierKind::RandomForest: return RandomForestClassifier::load(c);
        case ClassifierKind::Cnn: return CnnClassifier::load(c);
    }
    throw ConfigError("unknown classifier kind");
}

FeatureVector standardized(const FeatureVector& row, const std::vector<double>& mean, const std::vector<double>& scale) {
    FeatureVector out(row.size());
    for (std::size_t f = 0; f < row.size(); ++f) out[f] = (row[f] - mean[f]) / scale[f];
    return out;
}

}  // namespace

std::unique_ptr<Classifier> make_classifier(ClassifierKind kind, const Params& params, std::uint64_t seed) {
    switch (kind) {
        case ClassifierKind::Knn: return std::make_unique<KnnClassifier>(params);
        case ClassifierKind::Svm: return std::make_unique<SvmClassifier>(params);
        case ClassifierKind::RandomForest: return std::make_unique<RandomForestClassifier>(params, seed);
        case ClassifierKind::Cnn: return std::make_unique<CnnClassifier>(params, seed);
    }
    throw ConfigError("unknown classifier kind");
}

Prediction TrainedModel::predict(const Matrix& X) const {
    if (!model) throw DataError("model is not trained");
    Prediction p;
    const auto& classes = model->classes();
    std::vector<std::vector<double>> scores;
    if (standardize) {
        Matrix Z;
        Z.reserve(X.size());
        for (const auto& row : X) {
            if (row.size() != mean.size()) throw DataError("feature dimension mismatch");
            Z.push_back(standardized(row, mean, scale));
        }
        scores = model->predict_scores(Z);
    } else {
        scores = model->predict_scores(X);
    }
    for (const auto& s : scores) {
        const auto best = static_cast<std::size_t>(std::max_element(s.begin(), s.end()) - s.begin());
        p.labels.push_back(classes[best]);
        p.scores.push_back(s[best]);
    }
    return p;
}

void TrainedModel::save(const std::filesystem::path& path) const {
    if (!model) throw DataError("model is not trained");
    Container c = model->save();
    c.kind = "classifier";
    c.meta["classifier"] = to_string(kind);
    c.meta["params"] = to_json(params);
    c.meta["seed"] = seed;
    c.meta["standardize"] = standardize;
    c.meta["mean"] = mean;
    c.meta["scale"] = scale;
    c.meta["fold_scores"] = fold_scores;
    write_container(path, c);
}

TrainedModel TrainedModel::load(const std::filesystem::path& path) {
    const Container c = read_container(path);
    if (c.kind != "classifier") throw DataError(path.string() + " is not a classifier model");
    TrainedModel m;
    m.kind = parse_classifier_kind(c.meta.at("classifier").get<std::string>());
    m.params = params_from_json(c.meta.at("params"));
    m.seed = c.meta.at("seed").get<std::uint64_t>();
    m.standardize = c.meta.at("standardize").get<bool>();
    m.mean = c.meta.at("mean").get<std::vector<double>>();
    m.scale = c.meta.at("scale").get<std::vector<double>>();
    m.fold_scores = c.meta.at("fold_scores").get<std::vector<double>>();
    m.model = load_classifier(m.kind, c);
    return m;
}

TrainedModel fit(const ClassifierSpec& spec, const Params& params, const Matrix& X, const std::vector<int>& y,
                 std::uint64_t seed) {
    check_matrix(X, to_string(spec.kind));
    if (X.size() != y.size()) throw DataError("fit: X and y differ in length");
    TrainedModel m;
    m.kind = spec.kind;
    m.params = params;
    m.seed = seed;
    m.standardize = spec.standardize;
    m.model = make_classifier(spec.kind, params, seed);
    if (spec.standardize) {
        const std::size_t d = X.front().size();
        m.mean.assign(d, 0.0);
        m.scale.assign(d, 0.0);
        for (const auto& row : X) {
            for (std::size_t f = 0; f < d; ++f) m.mean[f] += row[f];
        }
        for (auto& v : m.mean) v /= static_cast<double>(X.size());
        for (const auto& row : X) {
            for (std::size_t f = 0; f < d; ++f) m.scale[f] += (row[f] - m.mean[f]) * (row[f] - m.mean[f]);
        }
        for (auto& v : m.scale) {
            v = std::sqrt(v / static_cast<double>(X.size()));
            if (v <= 0.0) v = 1.0;
        }
        Matrix Z;
        Z.reserve(X.size());
        for (const auto& row : X) Z.push_back(standardized(row, m.mean, m.scale));
        m.model->fit(Z, y);
    } else {
        m.model->fit(X, y);
    }
    return m;
}

Prediction fit_predict(const ClassifierSpec& spec, const Params& params, const Matrix& X_train,
                       const std::vector<int>& y_train, const Matrix& X_test, std::uint64_t seed) {
    check_matrix(X_train, to_string(spec.kind));
    for (const auto& row : X_test) {
        if (row.size() != X_train.front().size()) throw DataError("fit_predict: feature dimension mismatch");
    }
    return fit(spec, params, X_train, y_train, seed).predict(X_test);
}

std::vector<std::vector<std::size_t>> kfold_partition(std::size_t n, int k, std::uint64_t seed,
                                                      const std::vector<int>* labels) {
    if (k < 2) throw ConfigError("kfold_partition: k must be >= 2");
    if (n < static_cast<std::size_t>(k)) {
        throw DataError("kfold_partition: n=" + std::to_string(n) + " is smaller than k=" + std::to_string(k));
    }
    if (labels && labels->size() != n) throw DataError("kfold_partition: label count differs from n");
    Rng rng(Rng::derive(seed, "kfold"));
    std::vector<std::size_t> order;
    if (labels) {
        for (int c : sorted_classes(*labels)) {
            std::vector<std::size_t> members;
            for (std::size_t i = 0; i < n; ++i) {
                if ((*labels)[i] == c) members.push_back(i);
            }
            rng.shuffle(members);
            order.insert(order.end(), members.begin(), members.end());
        }
    } else {
        order.resize(n);
        std::iota(order.begin(), order.end(), 0);
        rng.shuffle(order);
    }
    std::vector<std::vector<std::size_t>> folds(k);
    for (std::size_t p = 0; p < n; ++p) folds[p % k].push_back(order[p]);
    for (auto& f : folds) std::sort(f.begin(), f.end());
    return folds;
}

CvResult cross_validate(const ClassifierSpec& spec, const Matrix& X, const std::vector<int>& y, int k,
                        std::uint64_t seed) {
    check_matrix(X, "cross_validate");
    if (X.size() != y.size()) throw DataError("cross_validate: X and y differ in length");
    const auto classes = sorted_classes(y);
    if (classes.size() < 2) throw DataError("cross_validate: at least two classes are required");
    const auto folds = kfold_partition(X.size(), k, seed, &y);

    std::vector<std::vector<std::size_t>> train_idx(k);
    for (int f = 0; f < k; ++f) {
        std::vector<bool> held(X.size(), false);
        for (auto i : folds[f]) held[i] = true;
        std::set<int> seen;
        for (std::size_t i = 0; i < X.size(); ++i) {
            if (!held[i]) {
                train_idx[f].push_back(i);
                seen.insert(y[i]);
            }
        }
        if (seen.size() != classes.size()) {
            throw DataError("cross_validate: training fold " + std::to_string(f) + " is missing a class");
        }
    }

    CvResult out;
    out.candidates = spec.candidates();
    for (const auto& cand : out.candidates) {
        std::vector<double> accs;
        for (int f = 0; f < k; ++f) {
            Matrix Xtr, Xte;
            std::vector<int> ytr, yte;
            for (auto i : train_idx[f]) Xtr.push_back(X[i]), ytr.push_back(y[i]);
            for (auto i : folds[f]) Xte.push_back(X[i]), yte.push_back(y[i]);
            const auto pred = fit_predict(spec, cand, Xtr, ytr, Xte, Rng::derive(seed, static_cast<std::uint64_t>(f)));
            std::size_t hits = 0;
            for (std::size_t i = 0; i < yte.size(); ++i) hits += pred.labels[i] == yte[i];
            accs.push_back(static_cast<double>(hits) / static_cast<double>(yte.size()));
        }
        out.mean_accuracy.push_back(std::accumulate(accs.begin(), accs.end(), 0.0) / k);
        out.fold_accuracy.push_back(std::move(accs));
    }
    for (std::size_t c = 1; c < out.mean_accuracy.size(); ++c) {
        if (out.mean_accuracy[c] > out.mean_accuracy[out.selected]) out.selected = c;
    }
    return out;
}

void write_predictions_csv(const std::filesystem::path& path, const std::vector<std::string>& ids,
                           const Prediction& p) {
    if (ids.size() != p.labels.size()) throw DataError("prediction CSV: id and label counts differ");
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw DataError("cannot create " + path.string());
    out << "id,label,score\n";
    char buf[32];
    for (std::size_t i = 0; i < ids.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%.17g", p.scores[i]);
        out << ids[i] << ',' << p.labels[i] << ',' << buf << '\n';
    }
}

}  // namespace subbench
