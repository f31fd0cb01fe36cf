#ifndef ROIMAE_HARNESS_HPP
#define ROIMAE_HARNESS_HPP

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "roimae/mae.hpp"
#include "roimae/preprocess.hpp"
#include "roimae/probe.hpp"

// Experiment orchestration: run the preprocess -> pretrain -> probe
// pipeline for every (strategy, repeat seed) cell on a shared subject
// split, and emit the comparison report as CSV / JSON / markdown.

namespace roimae {

enum class PrepMode { none, zscore, full };

struct ExperimentConfig {
    std::string data_dir;
    std::string atlas_path;
    std::string grouping_path;
    std::string labels_csv; // defaults to <data_dir>/labels.csv
    std::string out_dir = ".";
    std::vector<std::string> strategies; // mask spec strings
    PrepMode prep_mode = PrepMode::zscore;
    PreprocessConfig preprocess; // used when prep_mode == full
    TrainConfig train;
    HeadConfig head;
    std::uint64_t seed = 42;
    index_t repeats = 5;
    index_t workers = 1; // ROIMAE_WORKERS overrides
    bool save_models = true;
};

// Plain text config, one "key value" pair per line, '#' comments.
// Unknown keys are rejected. Keys: data, atlas, grouping, labels, out,
// strategy (repeatable), preprocess (none|zscore|full), spacing, shape, tr,
// background (intensity|atlas), epochs, batch, lr, weight-decay, seed,
// repeats, workers, d-hidden, d-latent, patch, head-l2, head-epochs,
// head-lr, save-models (0|1).
ExperimentConfig load_experiment_config(const std::string& path);

struct ReportRow {
    std::string strategy;
    std::uint64_t seed = 0; // pretrain/mask seed for this repeat
    bool ok = false;
    std::string error;
    double recon_loss = 0.0; // final model, masks from eval_mask_stream
    double acc = 0.0;
    std::optional<double> auc;
    index_t masked_voxels = 0;       // popcount of the first eval mask
    double masked_percent = 0.0;     // spatial footprint ∩ brain / |brain|
    std::uint64_t eval_mask_stream = 0;
    std::string model_path;
};

struct StrategySummary {
    std::string strategy;
    index_t cells_ok = 0;
    index_t auc_cells = 0; // cells where AUC was defined
    double loss_mean = 0.0, loss_std = 0.0;
    double acc_mean = 0.0, acc_std = 0.0;
    double auc_mean = 0.0, auc_std = 0.0;
};

struct ExperimentReport {
    std::vector<ReportRow> rows;
    std::vector<StrategySummary> summaries;
    std::vector<std::string> footnotes;
};

ExperimentReport run_experiment(const ExperimentConfig& cfg);

enum class ReportFormat { csv, json, markdown };
ReportFormat parse_report_format(const std::string& name);

std::string render_report(const ExperimentReport& report, ReportFormat format);
void emit_report(const ExperimentReport& report, ReportFormat format, const std::string& path);

// JSON round trip (used by the `report` subcommand).
std::string report_to_json(const ExperimentReport& report);
ExperimentReport report_from_json(const std::string& json_text);

// Dataset helpers shared with the CLI.
std::map<std::string, int> read_labels_csv(const std::string& path);
// Sorted (subject id, file path) pairs for every volume file in `dir`.
std::vector<std::pair<std::string, std::string>> list_dataset(const std::string& dir);

} // namespace roimae

#endif
