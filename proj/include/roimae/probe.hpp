#ifndef ROIMAE_PROBE_HPP
#define ROIMAE_PROBE_HPP

#include <optional>
#include <string>
#include <vector>

#include "roimae/mae.hpp"

// Frozen-encoder evaluation: subject-level 8:1:1 split, mean-pooled latent
// features, a logistic-regression head trained by full-batch gradient
// descent, and ACC / AUCROC metrics.

namespace roimae {

struct SplitAssignment {
    std::vector<std::string> train, val, test;
};

// Seeded shuffle, then floor(n/10) subjects to val and to test, remainder
// to train. Duplicate ids are rejected.
SplitAssignment split_subjects(const std::vector<std::string>& ids, std::uint64_t seed);

// Mean over all tokens of the encoder latents on the unmasked volume.
std::vector<double> extract_features(const MaeModel& model, const Volume4D& vol);

struct LogisticHead {
    std::vector<double> weights;
    double bias = 0.0;

    double logit(const std::vector<double>& x) const;
    double probability(const std::vector<double>& x) const;
};

// Cross-entropy + (l2/2)*||w||^2 (bias unpenalized) and its gradient,
// exposed for the finite-difference check.
double head_loss(const std::vector<double>& w, double b,
                 const std::vector<std::vector<double>>& X, const std::vector<int>& y, double l2);
void head_grad(const std::vector<double>& w, double b,
               const std::vector<std::vector<double>>& X, const std::vector<int>& y, double l2,
               std::vector<double>& grad_w, double& grad_b);

struct HeadConfig {
    double l2 = 1e-3;
    index_t epochs = 300;
    double lr = 0.5;
};

// Full-batch gradient descent from zero weights; features are standardized
// internally with train-set statistics (folded back into the returned
// weights). Returns the checkpoint with the best validation accuracy,
// earlier epoch on ties. Throws on a single-class training set.
LogisticHead train_head(const std::vector<std::vector<double>>& train_x,
                        const std::vector<int>& train_y,
                        const std::vector<std::vector<double>>& val_x,
                        const std::vector<int>& val_y, const HeadConfig& cfg);

struct EvalMetrics {
    double acc = 0.0;
    std::optional<double> auc; // empty when the set holds a single class
};

// Accuracy at probability threshold 0.5 and rank-based (Mann-Whitney)
// AUCROC with the tie correction P(tie)/2.
EvalMetrics evaluate(const LogisticHead& head, const std::vector<std::vector<double>>& X,
                     const std::vector<int>& y);

// Exposed for the oracle tests.
std::optional<double> auc_mann_whitney(const std::vector<double>& scores,
                                       const std::vector<int>& labels);

} // namespace roimae

#endif
