#include <doctest.h>

#include <cmath>
#include <set>

#include "roimae/probe.hpp"
#include "roimae/rng.hpp"

using namespace roimae;

namespace {

std::vector<std::string> make_ids(int n) {
    std::vector<std::string> ids;
    for (int i = 0; i < n; ++i) ids.push_back("sub-" + std::to_string(1000 + i));
    return ids;
}

// Brute-force AUC: all positive/negative pairs, ties count half.
double auc_pairwise(const std::vector<double>& scores, const std::vector<int>& labels) {
    double wins = 0.0;
    index_t pairs = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (labels[i] != 1) continue;
        for (std::size_t j = 0; j < scores.size(); ++j) {
            if (labels[j] != 0) continue;
            ++pairs;
            if (scores[i] > scores[j]) wins += 1.0;
            else if (scores[i] == scores[j]) wins += 0.5;
        }
    }
    return wins / static_cast<double>(pairs);
}

} // namespace

TEST_CASE("split_subjects") {
    SUBCASE("10 subjects split 8/1/1") {
        const SplitAssignment s = split_subjects(make_ids(10), 1);
        CHECK(s.train.size() == 8);
        CHECK(s.val.size() == 1);
        CHECK(s.test.size() == 1);
    }
    SUBCASE("973 subjects split 779/97/97") {
        const SplitAssignment s = split_subjects(make_ids(973), 2);
        CHECK(s.train.size() == 779);
        CHECK(s.val.size() == 97);
        CHECK(s.test.size() == 97);
    }
    SUBCASE("deterministic and a partition") {
        const auto ids = make_ids(37);
        const SplitAssignment a = split_subjects(ids, 3);
        const SplitAssignment b = split_subjects(ids, 3);
        CHECK(a.train == b.train);
        CHECK(a.val == b.val);
        CHECK(a.test == b.test);

        std::set<std::string> all;
        for (const auto& v : {a.train, a.val, a.test}) {
            for (const auto& id : v) CHECK(all.insert(id).second);
        }
        CHECK(all.size() == ids.size());

        const SplitAssignment c = split_subjects(ids, 4);
        CHECK(a.train != c.train); // different seed shuffles differently
    }
    SUBCASE("duplicates and empty input are rejected") {
        CHECK_THROWS_AS(split_subjects({}, 0), invalid_argument);
        CHECK_THROWS_AS(split_subjects({"a", "b", "a"}, 0), invalid_argument);
    }
}

TEST_CASE("extract_features") {
    PatchSpec spec;
    spec.patch = {2, 2, 2, 2};
    const GridDims dims{4, 4, 4, 4};

    SUBCASE("zero-weight encoder yields the bias-path value for any input") {
        MaeModel m = MaeModel::init(spec, 5, 3, 1);
        std::fill(m.w_enc1.begin(), m.w_enc1.end(), 0.0f);
        std::fill(m.w_enc2.begin(), m.w_enc2.end(), 0.0f);
        m.b_enc2 = {0.5f, -1.0f, 2.0f};

        Volume4D v1, v2;
        v1.dims = v2.dims = dims;
        v1.data.assign(static_cast<std::size_t>(dims.total()), 3.0f);
        v2.data.assign(static_cast<std::size_t>(dims.total()), -7.0f);
        const auto f1 = extract_features(m, v1);
        const auto f2 = extract_features(m, v2);
        CHECK(f1 == f2);
        CHECK(f1[0] == doctest::Approx(0.5));
        CHECK(f1[1] == doctest::Approx(-1.0));
        CHECK(f1[2] == doctest::Approx(2.0));
    }
    SUBCASE("identical volumes give identical features; model is untouched") {
        const MaeModel m = MaeModel::init(spec, 5, 3, 2);
        const std::vector<float> before = m.w_enc1;
        Volume4D v;
        v.dims = dims;
        v.data.resize(static_cast<std::size_t>(dims.total()));
        CounterRng rng(3, "feat");
        for (auto& x : v.data) x = static_cast<float>(rng.next_double());
        CHECK(extract_features(m, v) == extract_features(m, v));
        CHECK(m.w_enc1 == before);
    }
    SUBCASE("mean pooling is invariant under whole-patch permutation") {
        const MaeModel m = MaeModel::init(spec, 5, 3, 4);
        Volume4D v;
        v.dims = dims;
        v.data.resize(static_cast<std::size_t>(dims.total()));
        CounterRng rng(5, "perm");
        for (auto& x : v.data) x = static_cast<float>(rng.next_double() * 2.0 - 1.0);

        // Swap two whole patches (tokens 0 and 3) in voxel space.
        const TokenMatrix tokens = patchify(v, spec);
        TokenMatrix permuted = tokens;
        for (index_t e = 0; e < tokens.d_patch; ++e) {
            std::swap(permuted.row(0)[e], permuted.row(3)[e]);
        }
        const Volume4D pv = unpatchify(permuted, spec, v);

        const auto a = extract_features(m, v);
        const auto b = extract_features(m, pv);
        REQUIRE(a.size() == b.size());
        for (std::size_t i = 0; i < a.size(); ++i) {
            CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-12));
        }
    }
}

TEST_CASE("train_head") {
    SUBCASE("separable two-point set reaches training accuracy 1") {
        const std::vector<std::vector<double>> X{{-1.0}, {1.0}};
        const std::vector<int> y{0, 1};
        HeadConfig cfg;
        cfg.l2 = 0.0;
        cfg.epochs = 200;
        cfg.lr = 0.5;
        const LogisticHead head = train_head(X, y, {}, {}, cfg);
        CHECK(evaluate(head, X, y).acc == 1.0);
    }
    SUBCASE("all-identical features fall back to the majority class") {
        const std::vector<std::vector<double>> X(10, std::vector<double>{2.0, 2.0});
        std::vector<int> y(10, 0);
        y[7] = y[8] = y[9] = 1; // majority 0 (70%)
        HeadConfig cfg;
        cfg.epochs = 100;
        const LogisticHead head = train_head(X, y, {}, {}, cfg);
        CHECK(evaluate(head, X, y).acc == doctest::Approx(0.7));
    }
    SUBCASE("cross-entropy gradient matches finite differences (rel err < 1e-5)") {
        CounterRng rng(6, "head-grad");
        std::vector<std::vector<double>> X;
        std::vector<int> y;
        for (int i = 0; i < 12; ++i) {
            X.push_back({rng.next_double() * 2 - 1, rng.next_double() * 2 - 1,
                         rng.next_double() * 2 - 1});
            y.push_back(static_cast<int>(rng.next_below(2)));
        }
        std::vector<double> w{0.3, -0.8, 0.1};
        double b = 0.2;
        const double l2 = 0.05;

        std::vector<double> gw;
        double gb;
        head_grad(w, b, X, y, l2, gw, gb);

        const double h = 1e-6;
        for (std::size_t j = 0; j <= w.size(); ++j) {
            double plus, minus;
            if (j < w.size()) {
                std::vector<double> wp = w, wm = w;
                wp[j] += h;
                wm[j] -= h;
                plus = head_loss(wp, b, X, y, l2);
                minus = head_loss(wm, b, X, y, l2);
            } else {
                plus = head_loss(w, b + h, X, y, l2);
                minus = head_loss(w, b - h, X, y, l2);
            }
            const double fd = (plus - minus) / (2 * h);
            const double analytic = j < w.size() ? gw[j] : gb;
            const double denom = std::max({std::abs(fd), std::abs(analytic), 1e-10});
            CHECK(std::abs(fd - analytic) / denom < 1e-5);
        }
    }
    SUBCASE("gradient descent with l2 = 0 descends monotonically on separable data") {
        const std::vector<std::vector<double>> X{{-2.0, 0.1}, {-1.0, -0.2}, {1.2, 0.3}, {2.0, 0.0}};
        const std::vector<int> y{0, 0, 1, 1};
        std::vector<double> w{0.0, 0.0};
        double b = 0.0;
        double prev = head_loss(w, b, X, y, 0.0);
        for (int step = 0; step < 50; ++step) {
            std::vector<double> gw;
            double gb;
            head_grad(w, b, X, y, 0.0, gw, gb);
            for (std::size_t j = 0; j < w.size(); ++j) w[j] -= 0.1 * gw[j];
            b -= 0.1 * gb;
            const double loss = head_loss(w, b, X, y, 0.0);
            CHECK(loss < prev);
            prev = loss;
        }
    }
    SUBCASE("single-class training set is rejected") {
        const std::vector<std::vector<double>> X{{1.0}, {2.0}};
        CHECK_THROWS_AS(train_head(X, {1, 1}, {}, {}, HeadConfig{}), invalid_argument);
    }
    SUBCASE("validation checkpointing picks the best epoch") {
        // Train/val disagree: over-training on train should not degrade the
        // returned head below the best validation point.
        CounterRng rng(7, "ckpt");
        std::vector<std::vector<double>> X, vx;
        std::vector<int> y, vy;
        for (int i = 0; i < 30; ++i) {
            const int cls = i % 2;
            X.push_back({cls * 2.0 - 1.0 + rng.next_double(), rng.next_double()});
            y.push_back(cls);
        }
        for (int i = 0; i < 10; ++i) {
            const int cls = i % 2;
            vx.push_back({cls * 2.0 - 1.0 + rng.next_double(), rng.next_double()});
            vy.push_back(cls);
        }
        HeadConfig cfg;
        cfg.epochs = 150;
        const LogisticHead head = train_head(X, y, vx, vy, cfg);
        CHECK(evaluate(head, vx, vy).acc >= 0.5);
    }
}

TEST_CASE("evaluate and AUC") {
    SUBCASE("perfect separation") {
        LogisticHead head;
        head.weights = {1.0};
        head.bias = 0.0;
        const std::vector<std::vector<double>> X{{-2.0}, {-1.0}, {1.0}, {2.0}};
        const std::vector<int> y{0, 0, 1, 1};
        const EvalMetrics m = evaluate(head, X, y);
        CHECK(m.acc == 1.0);
        REQUIRE(m.auc.has_value());
        CHECK(*m.auc == 1.0);
    }
    SUBCASE("all-equal scores give AUC 0.5") {
        const auto auc = auc_mann_whitney({3.0, 3.0, 3.0, 3.0}, {0, 1, 0, 1});
        REQUIRE(auc.has_value());
        CHECK(*auc == 0.5);
    }
    SUBCASE("single-class test set leaves AUC undefined") {
        CHECK_FALSE(auc_mann_whitney({1.0, 2.0}, {1, 1}).has_value());
        LogisticHead head;
        head.weights = {1.0};
        const EvalMetrics m = evaluate(head, {{1.0}, {2.0}}, {1, 1});
        CHECK_FALSE(m.auc.has_value());
    }
    SUBCASE("six-example set with one inversion matches the pairwise oracle") {
        const std::vector<double> scores{0.1, 0.4, 0.35, 0.8, 0.65, 0.9};
        const std::vector<int> y{0, 0, 1, 1, 0, 1};
        const auto auc = auc_mann_whitney(scores, y);
        REQUIRE(auc.has_value());
        CHECK(*auc == auc_pairwise(scores, y));
    }
    SUBCASE("exact match with the pairwise brute force on random instances") {
        CounterRng rng(8, "auc");
        for (int rep = 0; rep < 40; ++rep) {
            const int n = 2 + static_cast<int>(rng.next_below(99));
            std::vector<double> scores;
            std::vector<int> y;
            bool has0 = false, has1 = false;
            for (int i = 0; i < n; ++i) {
                // quantized scores force ties
                scores.push_back(static_cast<double>(rng.next_below(8)) / 4.0);
                y.push_back(static_cast<int>(rng.next_below(2)));
                has0 |= y.back() == 0;
                has1 |= y.back() == 1;
            }
            if (!has0 || !has1) continue;
            const auto auc = auc_mann_whitney(scores, y);
            REQUIRE(auc.has_value());
            CHECK(*auc == auc_pairwise(scores, y));
        }
    }
    SUBCASE("AUC is invariant under strictly monotone transforms") {
        CounterRng rng(9, "monotone");
        std::vector<double> scores;
        std::vector<int> y;
        for (int i = 0; i < 50; ++i) {
            scores.push_back(rng.next_double() * 4.0 - 2.0);
            y.push_back(static_cast<int>(rng.next_below(2)));
        }
        const auto base = auc_mann_whitney(scores, y);
        std::vector<double> exp_scores = scores, affine_scores = scores;
        for (auto& s : exp_scores) s = std::exp(s);
        for (auto& s : affine_scores) s = 3.0 * s + 11.0;
        CHECK(auc_mann_whitney(exp_scores, y) == base);
        CHECK(auc_mann_whitney(affine_scores, y) == base);
    }
}
