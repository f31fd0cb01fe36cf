#include "roimae/probe.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "roimae/rng.hpp"

namespace roimae {

SplitAssignment split_subjects(const std::vector<std::string>& ids, std::uint64_t seed) {
    if (ids.empty()) throw invalid_argument("split_subjects: empty id list");
    std::set<std::string> unique(ids.begin(), ids.end());
    if (unique.size() != ids.size()) {
        throw invalid_argument("split_subjects: duplicate subject ids");
    }

    std::vector<std::string> shuffled = ids;
    CounterRng rng(seed, "subject-split");
    const auto n = static_cast<index_t>(shuffled.size());
    for (index_t i = 0; i < n - 1; ++i) {
        const index_t j =
            i + static_cast<index_t>(rng.next_below(static_cast<std::uint64_t>(n - i)));
        std::swap(shuffled[static_cast<std::size_t>(i)], shuffled[static_cast<std::size_t>(j)]);
    }

    const index_t n_val = n / 10;
    const index_t n_test = n / 10;
    const index_t n_train = n - n_val - n_test;

    SplitAssignment split;
    split.train.assign(shuffled.begin(), shuffled.begin() + n_train);
    split.val.assign(shuffled.begin() + n_train, shuffled.begin() + n_train + n_val);
    split.test.assign(shuffled.begin() + n_train + n_val, shuffled.end());
    return split;
}

std::vector<double> extract_features(const MaeModel& model, const Volume4D& vol) {
    const TokenMatrix tokens = patchify(vol, model.spec);
    const std::vector<double> latents = encode_tokens(model, tokens);

    const index_t n = tokens.n_tokens, dl = model.d_latent;
    std::vector<double> feature(static_cast<std::size_t>(dl), 0.0);
    for (index_t tok = 0; tok < n; ++tok) {
        for (index_t l = 0; l < dl; ++l) {
            feature[static_cast<std::size_t>(l)] += latents[static_cast<std::size_t>(tok * dl + l)];
        }
    }
    for (auto& f : feature) f /= static_cast<double>(n);
    return feature;
}

double LogisticHead::logit(const std::vector<double>& x) const {
    if (x.size() != weights.size()) throw invalid_argument("head: feature length mismatch");
    double z = bias;
    for (std::size_t i = 0; i < x.size(); ++i) z += weights[i] * x[i];
    return z;
}

double LogisticHead::probability(const std::vector<double>& x) const {
    const double z = logit(x);
    return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

namespace {

// softplus(z) = log(1 + e^z), computed without overflow.
inline double softplus(double z) {
    return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}

inline double sigmoid(double z) {
    return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

double accuracy(const LogisticHead& head, const std::vector<std::vector<double>>& X,
                const std::vector<int>& y) {
    if (X.empty()) return 0.0;
    index_t correct = 0;
    for (std::size_t i = 0; i < X.size(); ++i) {
        const int pred = head.logit(X[i]) > 0.0 ? 1 : 0;
        correct += (pred == y[i]);
    }
    return static_cast<double>(correct) / static_cast<double>(X.size());
}

} // namespace

double head_loss(const std::vector<double>& w, double b,
                 const std::vector<std::vector<double>>& X, const std::vector<int>& y, double l2) {
    const auto n = X.size();
    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double z = b;
        for (std::size_t j = 0; j < w.size(); ++j) z += w[j] * X[i][j];
        loss += softplus(z) - static_cast<double>(y[i]) * z;
    }
    loss /= static_cast<double>(n);
    double reg = 0.0;
    for (double wj : w) reg += wj * wj;
    return loss + 0.5 * l2 * reg;
}

void head_grad(const std::vector<double>& w, double b,
               const std::vector<std::vector<double>>& X, const std::vector<int>& y, double l2,
               std::vector<double>& grad_w, double& grad_b) {
    const auto n = X.size();
    grad_w.assign(w.size(), 0.0);
    grad_b = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double z = b;
        for (std::size_t j = 0; j < w.size(); ++j) z += w[j] * X[i][j];
        const double r = sigmoid(z) - static_cast<double>(y[i]);
        for (std::size_t j = 0; j < w.size(); ++j) grad_w[j] += r * X[i][j];
        grad_b += r;
    }
    const double inv = 1.0 / static_cast<double>(n);
    for (std::size_t j = 0; j < w.size(); ++j) {
        grad_w[j] = grad_w[j] * inv + l2 * w[j];
    }
    grad_b *= inv;
}

LogisticHead train_head(const std::vector<std::vector<double>>& train_x,
                        const std::vector<int>& train_y,
                        const std::vector<std::vector<double>>& val_x,
                        const std::vector<int>& val_y, const HeadConfig& cfg) {
    if (train_x.empty() || train_x.size() != train_y.size()) {
        throw invalid_argument("train_head: bad training set");
    }
    const bool has0 = std::find(train_y.begin(), train_y.end(), 0) != train_y.end();
    const bool has1 = std::find(train_y.begin(), train_y.end(), 1) != train_y.end();
    if (!has0 || !has1) throw invalid_argument("train_head: single-class training set");

    const std::size_t d = train_x[0].size();

    // Standardize with train statistics; folded back into the returned head.
    std::vector<double> mu(d, 0.0), sd(d, 0.0);
    for (const auto& x : train_x) {
        for (std::size_t j = 0; j < d; ++j) mu[j] += x[j];
    }
    for (auto& m : mu) m /= static_cast<double>(train_x.size());
    for (const auto& x : train_x) {
        for (std::size_t j = 0; j < d; ++j) sd[j] += (x[j] - mu[j]) * (x[j] - mu[j]);
    }
    for (auto& s : sd) {
        s = std::sqrt(s / static_cast<double>(train_x.size()));
        if (s < 1e-12) s = 1.0; // constant feature
    }
    auto standardize = [&](const std::vector<std::vector<double>>& xs) {
        std::vector<std::vector<double>> out(xs.size(), std::vector<double>(d));
        for (std::size_t i = 0; i < xs.size(); ++i) {
            for (std::size_t j = 0; j < d; ++j) out[i][j] = (xs[i][j] - mu[j]) / sd[j];
        }
        return out;
    };
    const auto sx = standardize(train_x);
    const auto svx = standardize(val_x);

    std::vector<double> w(d, 0.0);
    double b = 0.0;
    std::vector<double> gw;
    double gb;

    LogisticHead best;
    double best_val_acc = -1.0;
    const bool use_val = !val_x.empty();

    for (index_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        head_grad(w, b, sx, train_y, cfg.l2, gw, gb);
        for (std::size_t j = 0; j < d; ++j) w[j] -= cfg.lr * gw[j];
        b -= cfg.lr * gb;

        LogisticHead cand;
        cand.weights = w;
        cand.bias = b;
        const double val_acc = use_val ? accuracy(cand, svx, val_y) : accuracy(cand, sx, train_y);
        if (val_acc > best_val_acc) {
            best_val_acc = val_acc;
            best = cand;
        }
    }

    // Fold the scaler: w'j = wj/sdj, b' = b - sum wj*muj/sdj.
    LogisticHead out;
    out.weights.resize(d);
    out.bias = best.bias;
    for (std::size_t j = 0; j < d; ++j) {
        out.weights[j] = best.weights[j] / sd[j];
        out.bias -= best.weights[j] * mu[j] / sd[j];
    }
    return out;
}

std::optional<double> auc_mann_whitney(const std::vector<double>& scores,
                                       const std::vector<int>& labels) {
    const auto n = scores.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    // Twice the midrank is integral even within tie groups.
    std::vector<std::int64_t> rank2(n);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j < n && scores[order[j]] == scores[order[i]]) ++j;
        const auto r2 = static_cast<std::int64_t>(i + 1 + j); // (i+1) + j, 1-based endpoints
        for (std::size_t k = i; k < j; ++k) rank2[order[k]] = r2;
        i = j;
    }

    std::int64_t n_pos = 0, rank2_pos = 0;
    for (std::size_t k = 0; k < n; ++k) {
        if (labels[k] == 1) {
            ++n_pos;
            rank2_pos += rank2[k];
        }
    }
    const auto n_neg = static_cast<std::int64_t>(n) - n_pos;
    if (n_pos == 0 || n_neg == 0) return std::nullopt;

    const std::int64_t u2 = rank2_pos - n_pos * (n_pos + 1);
    return static_cast<double>(u2) / (2.0 * static_cast<double>(n_pos) *
                                      static_cast<double>(n_neg));
}

EvalMetrics evaluate(const LogisticHead& head, const std::vector<std::vector<double>>& X,
                     const std::vector<int>& y) {
    if (X.empty() || X.size() != y.size()) throw invalid_argument("evaluate: bad test set");

    EvalMetrics m;
    m.acc = accuracy(head, X, y);
    std::vector<double> scores(X.size());
    for (std::size_t i = 0; i < X.size(); ++i) scores[i] = head.logit(X[i]);
    m.auc = auc_mann_whitney(scores, y);
    return m;
}

} // namespace roimae
