// roimae: region-aware masking experiments for 4D volumes.
//
// Subcommands: preprocess, mask-stats, synth, pretrain, probe, experiment,
// report. See README.md for formats and examples.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "roimae/harness.hpp"
#include "roimae/nifti_io.hpp"
#include "roimae/reference.hpp"
#include "roimae/synth.hpp"

namespace fs = std::filesystem;
using namespace roimae;

namespace {

std::string stem_of(const std::string& path) {
    std::string name = fs::path(path).filename().string();
    for (const char* ext : {".nii.gz", ".nii", ".v4d"}) {
        const std::string e(ext);
        if (name.size() > e.size() && name.ends_with(e)) {
            return name.substr(0, name.size() - e.size());
        }
    }
    return name;
}

std::vector<Volume4D> load_dir_volumes(const std::string& dir, bool zscore,
                                        std::vector<std::string>* ids_out = nullptr) {
    std::vector<Volume4D> volumes;
    for (const auto& [id, file] : list_dataset(dir)) {
        Volume4D v = load_volume(file);
        if (zscore) v = zscore_nonbackground(v);
        volumes.push_back(std::move(v));
        if (ids_out) ids_out->push_back(id);
    }
    if (volumes.empty()) {
        throw io_error(io_error::code::open_failed, dir + ": no volume files");
    }
    return volumes;
}

int cmd_preprocess(const std::string& in, const std::string& atlas_path,
                   const std::string& out_dir, double spacing,
                   const std::string& shape_str, double tr, const std::string& background) {
    PreprocessConfig cfg;
    cfg.target_spacing_mm = {spacing, spacing, spacing};
    {
        std::array<index_t, 3> shape{};
        if (std::sscanf(shape_str.c_str(), "%lld,%lld,%lld", (long long*)&shape[0],
                        (long long*)&shape[1], (long long*)&shape[2]) != 3) {
            throw invalid_argument("bad --shape \"" + shape_str + "\"");
        }
        cfg.target_shape = shape;
    }
    cfg.target_tr_s = tr;
    cfg.background_rule =
        background == "atlas" ? BackgroundRule::atlas : BackgroundRule::intensity;

    const Volume4D vol = load_volume(in);
    std::optional<LabelVolume> atlas;
    if (!atlas_path.empty()) atlas = load_labels(atlas_path);

    fs::create_directories(out_dir);
    const PreprocessResult result = run_preprocess(vol, atlas ? &*atlas : nullptr, cfg);

    const std::string out_vol = out_dir + "/" + stem_of(in) + "_proc.nii";
    write_volume(result.volume, out_vol);
    std::cout << "wrote " << out_vol << "\n";
    if (result.aligned_atlas) {
        const std::string out_atlas = out_dir + "/atlas_aligned.v4d";
        write_v4d_labels(*result.aligned_atlas, out_atlas);
        std::cout << "wrote " << out_atlas << "\n";
    }
    return 0;
}

int cmd_mask_stats(const std::string& atlas_path, const std::string& grouping_path,
                   const std::string& fmri_path, const std::string& out_path) {
    const LabelVolume atlas = load_labels(atlas_path);
    const GroupingTable grouping = load_grouping(grouping_path);

    Mask3D brain;
    if (!fmri_path.empty()) {
        const Volume4D fmri = load_volume(fmri_path);
        if (fmri.dims.nx != atlas.dims.nx || fmri.dims.ny != atlas.dims.ny ||
            fmri.dims.nz != atlas.dims.nz) {
            throw invalid_argument("mask-stats: fmri grid does not match the atlas grid");
        }
        brain = brain_mask(fmri);
    } else {
        brain = brain_mask(atlas);
    }

    std::ostringstream csv;
    csv << "mask,voxels_masked,percent_of_brain\n";
    for (const auto& group : grouping.groups) {
        const MaskRatio r = mask_ratio(atlas, group, brain);
        char line[128];
        std::snprintf(line, sizeof line, "%s,%lld,%.2f\n", group.name.c_str(),
                      static_cast<long long>(r.voxel_count), r.percent_of_brain);
        csv << line;
    }
    if (out_path.empty()) {
        std::cout << csv.str();
    } else {
        std::ofstream f(out_path);
        f << csv.str();
        if (!f) throw io_error(io_error::code::write_failed, "short write to " + out_path);
        std::cout << "wrote " << out_path << "\n";
    }
    return 0;
}

int cmd_synth(const PhantomConfig& cfg, const std::string& out_dir, bool as_nifti) {
    write_synth_dataset(cfg, out_dir, as_nifti);
    std::cout << "wrote " << 2 * cfg.subjects_per_class << " subjects, atlas, grouping and "
              << "labels to " << out_dir << "\n";
    return 0;
}

int cmd_pretrain(const std::string& data_dir, const std::string& atlas_path,
                 const std::string& grouping_path, const std::string& mask_spec,
                 TrainConfig tc, bool zscore, const std::string& out_path) {
    const MaskStrategy strategy = MaskStrategy::parse(mask_spec, tc.seed);
    const std::vector<Volume4D> dataset = load_dir_volumes(data_dir, zscore);

    std::optional<LabelVolume> atlas;
    if (!atlas_path.empty()) atlas = load_labels(atlas_path);
    std::optional<GroupingTable> grouping;
    if (!grouping_path.empty()) grouping = load_grouping(grouping_path);

    const PretrainResult result = pretrain(dataset, strategy, tc, atlas ? &*atlas : nullptr,
                                           grouping ? &*grouping : nullptr);
    for (std::size_t e = 0; e < result.epoch_loss.size(); ++e) {
        std::printf("epoch %3zu  loss %.8f\n", e + 1, result.epoch_loss[e]);
    }
    save_model(result.model, out_path);
    std::cout << "wrote " << out_path << " (" << result.model.param_count() << " parameters)\n";
    return 0;
}

int cmd_probe(const std::string& model_path, const std::string& data_dir,
              const std::string& labels_path, std::uint64_t seed, bool zscore,
              const HeadConfig& head_cfg, const std::string& out_path) {
    const MaeModel model = load_model(model_path);
    const auto labels = read_labels_csv(labels_path);

    std::vector<std::string> ids;
    std::vector<Volume4D> volumes = load_dir_volumes(data_dir, zscore, &ids);
    for (const auto& id : ids) {
        if (!labels.count(id)) {
            throw io_error(io_error::code::bad_metadata,
                           "subject \"" + id + "\" has no entry in " + labels_path);
        }
    }

    const SplitAssignment split = split_subjects(ids, seed);
    if (split.test.empty()) {
        throw invalid_argument("probe: test split is empty; the 8:1:1 split needs at least "
                               "10 subjects, got " + std::to_string(ids.size()));
    }
    std::map<std::string, std::size_t> pos;
    for (std::size_t i = 0; i < ids.size(); ++i) pos[ids[i]] = i;

    auto featurize = [&](const std::vector<std::string>& subset,
                         std::vector<std::vector<double>>& X, std::vector<int>& y) {
        for (const auto& id : subset) {
            X.push_back(extract_features(model, volumes[pos.at(id)]));
            y.push_back(labels.at(id));
        }
    };
    std::vector<std::vector<double>> train_x, val_x, test_x;
    std::vector<int> train_y, val_y, test_y;
    featurize(split.train, train_x, train_y);
    featurize(split.val, val_x, val_y);
    featurize(split.test, test_x, test_y);

    const LogisticHead head = train_head(train_x, train_y, val_x, val_y, head_cfg);
    const EvalMetrics m = evaluate(head, test_x, test_y);

    nlohmann::ordered_json j;
    j["model"] = model_path;
    j["seed"] = seed;
    j["n_train"] = train_x.size();
    j["n_val"] = val_x.size();
    j["n_test"] = test_x.size();
    j["acc"] = m.acc;
    if (m.auc) j["auc"] = *m.auc;
    else j["auc"] = nullptr;

    std::ofstream f(out_path);
    f << j.dump(2) << "\n";
    if (!f) throw io_error(io_error::code::write_failed, "short write to " + out_path);
    std::printf("acc %.4f  auc %s  -> %s\n", m.acc,
                m.auc ? std::to_string(*m.auc).c_str() : "undefined", out_path.c_str());
    return 0;
}

int cmd_experiment(const std::string& config_path, const std::string& out_override,
                   index_t workers_override) {
    ExperimentConfig cfg = load_experiment_config(config_path);
    if (!out_override.empty()) cfg.out_dir = out_override;
    if (workers_override > 0) cfg.workers = workers_override;

    const ExperimentReport report = run_experiment(cfg);
    emit_report(report, ReportFormat::csv, cfg.out_dir + "/report.csv");
    emit_report(report, ReportFormat::json, cfg.out_dir + "/report.json");
    emit_report(report, ReportFormat::markdown, cfg.out_dir + "/report.md");

    std::cout << render_report(report, ReportFormat::markdown);
    bool all_ok = true;
    for (const auto& row : report.rows) {
        if (!row.ok) {
            all_ok = false;
            std::cerr << "cell failed: " << row.strategy << " seed " << row.seed << ": "
                      << row.error << "\n";
        }
    }
    std::cout << "report written to " << cfg.out_dir << "\n";
    return all_ok ? 0 : 1;
}

int cmd_report(const std::string& in_path, const std::string& format_name,
               const std::string& out_path) {
    std::ifstream f(in_path);
    if (!f) throw io_error(io_error::code::open_failed, "cannot open " + in_path);
    std::ostringstream buf;
    buf << f.rdbuf();
    const ExperimentReport report = report_from_json(buf.str());
    const ReportFormat format = parse_report_format(format_name);
    if (out_path.empty()) {
        std::cout << render_report(report, format);
    } else {
        emit_report(report, format, out_path);
        std::cout << "wrote " << out_path << "\n";
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"region-aware masking experiments for 4D fMRI-style volumes"};
    app.require_subcommand(1);

    // preprocess
    auto* prep = app.add_subcommand("preprocess", "resample, crop/pad, z-score one volume");
    std::string prep_in, prep_atlas, prep_out = ".", prep_shape = "96,96,96";
    std::string prep_background = "intensity";
    double prep_spacing = 2.0, prep_tr = 0.8;
    prep->add_option("--in", prep_in, "input volume (.nii/.nii.gz/.v4d)")->required();
    prep->add_option("--atlas", prep_atlas, "atlas labels to align");
    prep->add_option("--out-dir", prep_out, "output directory")->required();
    prep->add_option("--spacing", prep_spacing, "target isotropic spacing (mm)");
    prep->add_option("--shape", prep_shape, "target spatial shape nx,ny,nz");
    prep->add_option("--tr", prep_tr, "target TR (s)");
    prep->add_option("--background", prep_background, "background rule: intensity|atlas");

    // mask-stats
    auto* stats = app.add_subcommand("mask-stats", "per-region masked-voxel counts");
    std::string stats_atlas, stats_grouping, stats_fmri, stats_out;
    stats->add_option("--atlas", stats_atlas, "atlas labels")->required();
    stats->add_option("--grouping", stats_grouping, "grouping table")->required();
    stats->add_option("--fmri", stats_fmri, "volume defining the brain mask");
    stats->add_option("--out", stats_out, "output CSV (default stdout)");

    // synth
    auto* synth = app.add_subcommand("synth", "generate the synthetic benchmark dataset");
    PhantomConfig phantom;
    std::string synth_out, synth_dims = "16,16,16,24";
    bool synth_nii = false;
    synth->add_option("--out", synth_out, "output directory")->required();
    synth->add_option("--subjects", phantom.subjects_per_class, "subjects per class");
    synth->add_option("--dims", synth_dims, "grid dims nx,ny,nz,nt");
    synth->add_option("--regions", phantom.n_regions, "number of atlas regions (1..7)");
    synth->add_option("--target-region", phantom.target_region, "class-signal region label");
    synth->add_option("--amplitude", phantom.amplitude, "signal amplitude");
    synth->add_option("--noise", phantom.noise_std, "noise standard deviation");
    synth->add_option("--frequency", phantom.base_frequency_hz, "base frequency (Hz)");
    synth->add_option("--tr", phantom.tr_s, "repetition time (s)");
    synth->add_option("--seed", phantom.seed, "dataset seed");
    synth->add_flag("--nii", synth_nii, "write volumes as NIfTI instead of .v4d");

    // pretrain
    auto* pre = app.add_subcommand("pretrain", "masked-autoencoder pretraining");
    std::string pre_data, pre_atlas, pre_grouping, pre_mask, pre_out = "model.bin";
    std::string pre_patch = "4,4,4,6";
    TrainConfig pre_cfg;
    bool pre_no_zscore = false;
    pre->add_option("--data", pre_data, "directory of volumes")->required();
    pre->add_option("--atlas", pre_atlas, "atlas labels (needed for roi masks)");
    pre->add_option("--grouping", pre_grouping, "grouping table (needed for roi masks)");
    pre->add_option("--mask", pre_mask, "mask spec, e.g. roi:limbic:1.0")->required();
    pre->add_option("--epochs", pre_cfg.epochs, "training epochs");
    pre->add_option("--batch", pre_cfg.batch_size, "batch size");
    pre->add_option("--lr", pre_cfg.lr, "AdamW learning rate");
    pre->add_option("--weight-decay", pre_cfg.weight_decay, "AdamW weight decay");
    pre->add_option("--seed", pre_cfg.seed, "training seed");
    pre->add_option("--d-hidden", pre_cfg.d_hidden, "hidden width");
    pre->add_option("--d-latent", pre_cfg.d_latent, "latent width");
    pre->add_option("--patch", pre_patch, "patch dims px,py,pz,pt");
    pre->add_flag("--no-zscore", pre_no_zscore, "skip z-score preprocessing");
    pre->add_option("--out", pre_out, "output model file");

    // probe
    auto* probe = app.add_subcommand("probe", "frozen-encoder linear probe");
    std::string probe_model, probe_data, probe_labels, probe_out = "metrics.json";
    std::uint64_t probe_seed = 42;
    HeadConfig probe_head;
    bool probe_no_zscore = false;
    probe->add_option("--model", probe_model, "pretrained model file")->required();
    probe->add_option("--data", probe_data, "directory of volumes")->required();
    probe->add_option("--labels", probe_labels, "labels CSV (subject_id,label)")->required();
    probe->add_option("--seed", probe_seed, "split seed");
    probe->add_option("--head-l2", probe_head.l2, "head l2 penalty");
    probe->add_option("--head-epochs", probe_head.epochs, "head training epochs");
    probe->add_option("--head-lr", probe_head.lr, "head learning rate");
    probe->add_flag("--no-zscore", probe_no_zscore, "skip z-score preprocessing");
    probe->add_option("--out", probe_out, "output metrics JSON");

    // experiment
    auto* exp = app.add_subcommand("experiment", "run the full strategy-comparison grid");
    std::string exp_config, exp_out;
    index_t exp_workers = 0;
    exp->add_option("--config", exp_config, "experiment config file")->required();
    exp->add_option("--out", exp_out, "override output directory");
    exp->add_option("--workers", exp_workers, "parallel cells (ROIMAE_WORKERS also works)");

    // report
    auto* rep = app.add_subcommand("report", "re-render a report.json");
    std::string rep_in, rep_format = "markdown", rep_out;
    rep->add_option("--in", rep_in, "report.json produced by `experiment`")->required();
    rep->add_option("--format", rep_format, "csv|json|markdown");
    rep->add_option("--out", rep_out, "output file (default stdout)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (prep->parsed()) {
            return cmd_preprocess(prep_in, prep_atlas, prep_out, prep_spacing, prep_shape,
                                  prep_tr, prep_background);
        }
        if (stats->parsed()) {
            return cmd_mask_stats(stats_atlas, stats_grouping, stats_fmri, stats_out);
        }
        if (synth->parsed()) {
            std::array<long long, 4> d{};
            if (std::sscanf(synth_dims.c_str(), "%lld,%lld,%lld,%lld", &d[0], &d[1], &d[2],
                            &d[3]) != 4) {
                throw invalid_argument("bad --dims \"" + synth_dims + "\"");
            }
            phantom.dims = GridDims{d[0], d[1], d[2], d[3]};
            return cmd_synth(phantom, synth_out, synth_nii);
        }
        if (pre->parsed()) {
            std::array<long long, 4> p{};
            if (std::sscanf(pre_patch.c_str(), "%lld,%lld,%lld,%lld", &p[0], &p[1], &p[2],
                            &p[3]) != 4) {
                throw invalid_argument("bad --patch \"" + pre_patch + "\"");
            }
            pre_cfg.patch.patch = {p[0], p[1], p[2], p[3]};
            return cmd_pretrain(pre_data, pre_atlas, pre_grouping, pre_mask, pre_cfg,
                                !pre_no_zscore, pre_out);
        }
        if (probe->parsed()) {
            return cmd_probe(probe_model, probe_data, probe_labels, probe_seed,
                             !probe_no_zscore, probe_head, probe_out);
        }
        if (exp->parsed()) return cmd_experiment(exp_config, exp_out, exp_workers);
        if (rep->parsed()) return cmd_report(rep_in, rep_format, rep_out);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
