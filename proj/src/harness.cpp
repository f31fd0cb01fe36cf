#include "roimae/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "roimae/nifti_io.hpp"

namespace roimae {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Dataset helpers
// ---------------------------------------------------------------------------

std::map<std::string, int> read_labels_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw io_error(io_error::code::open_failed, "cannot open " + path);

    std::map<std::string, int> labels;
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (lineno == 1 && line == "subject_id,label") continue;

        const auto comma = line.find(',');
        if (comma == std::string::npos) {
            throw io_error(io_error::code::bad_metadata,
                           path + ":" + std::to_string(lineno) + ": expected subject_id,label");
        }
        const std::string id = line.substr(0, comma);
        const std::string value = line.substr(comma + 1);
        if (value != "0" && value != "1") {
            throw io_error(io_error::code::bad_metadata,
                           path + ":" + std::to_string(lineno) + ": label must be 0 or 1, got \"" +
                               value + "\"");
        }
        if (!labels.emplace(id, value == "1" ? 1 : 0).second) {
            throw io_error(io_error::code::bad_metadata,
                           path + ":" + std::to_string(lineno) + ": duplicate subject \"" + id +
                               "\"");
        }
    }
    if (labels.empty()) {
        throw io_error(io_error::code::bad_metadata, path + ": no labels");
    }
    return labels;
}

std::vector<std::pair<std::string, std::string>> list_dataset(const std::string& dir) {
    std::vector<std::pair<std::string, std::string>> entries;
    if (!fs::is_directory(dir)) {
        throw io_error(io_error::code::open_failed, dir + " is not a directory");
    }
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        const std::string name = entry.path().filename().string();
        std::string stem;
        if (name.size() > 4 && name.ends_with(".v4d")) {
            stem = name.substr(0, name.size() - 4);
        } else if (name.size() > 4 && name.ends_with(".nii")) {
            stem = name.substr(0, name.size() - 4);
        } else if (name.size() > 7 && name.ends_with(".nii.gz")) {
            stem = name.substr(0, name.size() - 7);
        } else {
            continue;
        }
        if (stem == "atlas") continue;
        entries.emplace_back(stem, entry.path().string());
    }
    std::sort(entries.begin(), entries.end());
    return entries;
}

// ---------------------------------------------------------------------------
// Config file
// ---------------------------------------------------------------------------

namespace {

std::array<index_t, 3> parse_triple(const std::string& s, const std::string& what) {
    std::array<index_t, 3> out{};
    std::string t = s;
    std::replace(t.begin(), t.end(), ',', ' ');
    std::istringstream is(t);
    if (!(is >> out[0] >> out[1] >> out[2]) || out[0] < 1 || out[1] < 1 || out[2] < 1) {
        throw io_error(io_error::code::bad_metadata, "bad " + what + " \"" + s + "\"");
    }
    return out;
}

std::array<index_t, 4> parse_quad(const std::string& s, const std::string& what) {
    std::array<index_t, 4> out{};
    std::string t = s;
    std::replace(t.begin(), t.end(), ',', ' ');
    std::istringstream is(t);
    if (!(is >> out[0] >> out[1] >> out[2] >> out[3]) || out[0] < 1 || out[1] < 1 || out[2] < 1 ||
        out[3] < 1) {
        throw io_error(io_error::code::bad_metadata, "bad " + what + " \"" + s + "\"");
    }
    return out;
}

} // namespace

ExperimentConfig load_experiment_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw io_error(io_error::code::open_failed, "cannot open " + path);

    ExperimentConfig cfg;
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        std::istringstream is(line);
        std::string key;
        if (!(is >> key)) continue;
        std::string value;
        std::getline(is, value);
        const auto start = value.find_first_not_of(" \t");
        value = start == std::string::npos ? "" : value.substr(start);
        while (!value.empty() && (value.back() == ' ' || value.back() == '\t' || value.back() == '\r')) {
            value.pop_back();
        }
        if (value.empty()) {
            throw io_error(io_error::code::bad_metadata,
                           path + ":" + std::to_string(lineno) + ": key \"" + key +
                               "\" has no value");
        }

        try {
            if (key == "data") cfg.data_dir = value;
            else if (key == "atlas") cfg.atlas_path = value;
            else if (key == "grouping") cfg.grouping_path = value;
            else if (key == "labels") cfg.labels_csv = value;
            else if (key == "out") cfg.out_dir = value;
            else if (key == "strategy") cfg.strategies.push_back(value);
            else if (key == "preprocess") {
                if (value == "none") cfg.prep_mode = PrepMode::none;
                else if (value == "zscore") cfg.prep_mode = PrepMode::zscore;
                else if (value == "full") cfg.prep_mode = PrepMode::full;
                else throw io_error(io_error::code::bad_metadata, "bad preprocess mode " + value);
            } else if (key == "spacing") {
                const double s = std::stod(value);
                cfg.preprocess.target_spacing_mm = {s, s, s};
            } else if (key == "shape") cfg.preprocess.target_shape = parse_triple(value, "shape");
            else if (key == "tr") cfg.preprocess.target_tr_s = std::stod(value);
            else if (key == "background") {
                if (value == "intensity") cfg.preprocess.background_rule = BackgroundRule::intensity;
                else if (value == "atlas") cfg.preprocess.background_rule = BackgroundRule::atlas;
                else throw io_error(io_error::code::bad_metadata, "bad background rule " + value);
            } else if (key == "epochs") cfg.train.epochs = std::stoll(value);
            else if (key == "batch") cfg.train.batch_size = std::stoll(value);
            else if (key == "lr") cfg.train.lr = std::stod(value);
            else if (key == "weight-decay") cfg.train.weight_decay = std::stod(value);
            else if (key == "d-hidden") cfg.train.d_hidden = std::stoll(value);
            else if (key == "d-latent") cfg.train.d_latent = std::stoll(value);
            else if (key == "patch") cfg.train.patch.patch = parse_quad(value, "patch");
            else if (key == "seed") cfg.seed = std::stoull(value);
            else if (key == "repeats") cfg.repeats = std::stoll(value);
            else if (key == "workers") cfg.workers = std::stoll(value);
            else if (key == "head-l2") cfg.head.l2 = std::stod(value);
            else if (key == "head-epochs") cfg.head.epochs = std::stoll(value);
            else if (key == "head-lr") cfg.head.lr = std::stod(value);
            else if (key == "save-models") cfg.save_models = value != "0";
            else {
                throw io_error(io_error::code::bad_metadata,
                               path + ":" + std::to_string(lineno) + ": unknown key \"" + key +
                                   "\"");
            }
        } catch (const io_error&) {
            throw;
        } catch (const std::exception&) {
            throw io_error(io_error::code::bad_metadata,
                           path + ":" + std::to_string(lineno) + ": bad value for \"" + key +
                               "\"");
        }
    }
    if (cfg.labels_csv.empty() && !cfg.data_dir.empty()) {
        cfg.labels_csv = cfg.data_dir + "/labels.csv";
    }
    return cfg;
}

// ---------------------------------------------------------------------------
// Experiment
// ---------------------------------------------------------------------------

namespace {

struct PreparedData {
    std::vector<std::string> ids;
    std::map<std::string, Volume4D> volumes;
    std::map<std::string, int> labels;
    std::optional<LabelVolume> atlas;
    std::optional<GroupingTable> grouping;
    Mask3D brain; // atlas-derived when an atlas is given
    SplitAssignment split;
};

PreparedData prepare(const ExperimentConfig& cfg) {
    PreparedData data;
    data.labels = read_labels_csv(cfg.labels_csv.empty() ? cfg.data_dir + "/labels.csv"
                                                         : cfg.labels_csv);

    std::optional<LabelVolume> raw_atlas;
    if (!cfg.atlas_path.empty()) raw_atlas = load_labels(cfg.atlas_path);
    if (!cfg.grouping_path.empty()) data.grouping = load_grouping(cfg.grouping_path);

    const auto entries = list_dataset(cfg.data_dir);
    if (entries.empty()) {
        throw io_error(io_error::code::open_failed, cfg.data_dir + ": no volume files");
    }
    for (const auto& [id, file] : entries) {
        const auto it = data.labels.find(id);
        if (it == data.labels.end()) {
            throw io_error(io_error::code::bad_metadata,
                           "subject \"" + id + "\" has no entry in the labels CSV");
        }
        Volume4D vol = load_volume(file);
        switch (cfg.prep_mode) {
            case PrepMode::none:
                break;
            case PrepMode::zscore: {
                if (cfg.preprocess.background_rule == BackgroundRule::atlas) {
                    if (!raw_atlas) throw invalid_argument("atlas background rule needs an atlas");
                    const Mask3D brain = brain_mask(*raw_atlas);
                    vol = zscore_nonbackground(vol, cfg.preprocess.zscore_epsilon, &brain);
                } else {
                    vol = zscore_nonbackground(vol, cfg.preprocess.zscore_epsilon);
                }
                break;
            }
            case PrepMode::full: {
                PreprocessResult r =
                    run_preprocess(vol, raw_atlas ? &*raw_atlas : nullptr, cfg.preprocess);
                vol = std::move(r.volume);
                if (r.aligned_atlas && !data.atlas) data.atlas = std::move(r.aligned_atlas);
                break;
            }
        }
        data.volumes.emplace(id, std::move(vol));
        data.ids.push_back(id);
    }
    if (cfg.prep_mode != PrepMode::full && raw_atlas) data.atlas = std::move(raw_atlas);

    if (data.atlas) {
        data.brain = brain_mask(*data.atlas);
    } else {
        data.brain = brain_mask(data.volumes.at(data.ids.front()));
    }
    data.split = split_subjects(data.ids, cfg.seed);
    return data;
}

double spatial_footprint_percent(const Mask4D& mask, const Mask3D& brain) {
    const GridDims d = mask.dims();
    const index_t ns = d.spatial();
    index_t in_brain = 0;
    for (index_t s = 0; s < ns; ++s) {
        bool any = false;
        for (index_t t = 0; t < d.nt && !any; ++t) any = mask.test(t * ns + s);
        if (any && brain.test(s)) ++in_brain;
    }
    return brain.popcount() > 0
               ? 100.0 * static_cast<double>(in_brain) / static_cast<double>(brain.popcount())
               : 0.0;
}

std::string sanitize(const std::string& s) {
    std::string out;
    for (char c : s) {
        out += (std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '-') ? c : '_';
    }
    return out;
}

ReportRow run_cell(const ExperimentConfig& cfg, const PreparedData& data,
                   const std::string& strategy_spec, index_t repeat) {
    ReportRow row;
    row.strategy = strategy_spec;
    row.seed = cfg.seed + static_cast<std::uint64_t>(repeat);
    try {
        const MaskStrategy strategy = MaskStrategy::parse(strategy_spec, row.seed);
        TrainConfig tc = cfg.train;
        tc.seed = row.seed;

        std::vector<Volume4D> train_set;
        train_set.reserve(data.split.train.size());
        for (const auto& id : data.split.train) train_set.push_back(data.volumes.at(id));

        const LabelVolume* atlas = data.atlas ? &*data.atlas : nullptr;
        const GroupingTable* grouping = data.grouping ? &*data.grouping : nullptr;

        PretrainResult trained = pretrain(train_set, strategy, tc, atlas, grouping);

        // Reconstruction loss of the final model over the training split,
        // with masks regenerated from a logged stream base.
        const auto n_train = static_cast<index_t>(train_set.size());
        row.eval_mask_stream =
            static_cast<std::uint64_t>(tc.epochs) * static_cast<std::uint64_t>(n_train);
        double loss_sum = 0.0;
        for (index_t i = 0; i < n_train; ++i) {
            const Mask4D mask =
                generate_mask(strategy, train_set[static_cast<std::size_t>(i)].dims, atlas,
                              data.brain, grouping,
                              row.eval_mask_stream + static_cast<std::uint64_t>(i));
            const Volume4D masked = apply_mask(train_set[static_cast<std::size_t>(i)], mask);
            const Volume4D recon = forward(trained.model, masked);
            loss_sum += masked_mse(recon, train_set[static_cast<std::size_t>(i)], mask);
            if (i == 0) {
                row.masked_voxels = mask.popcount();
                row.masked_percent = spatial_footprint_percent(mask, data.brain);
            }
        }
        row.recon_loss = loss_sum / static_cast<double>(n_train);

        auto featurize = [&](const std::vector<std::string>& ids,
                             std::vector<std::vector<double>>& X, std::vector<int>& y) {
            for (const auto& id : ids) {
                X.push_back(extract_features(trained.model, data.volumes.at(id)));
                y.push_back(data.labels.at(id));
            }
        };
        std::vector<std::vector<double>> train_x, val_x, test_x;
        std::vector<int> train_y, val_y, test_y;
        featurize(data.split.train, train_x, train_y);
        featurize(data.split.val, val_x, val_y);
        featurize(data.split.test, test_x, test_y);

        const LogisticHead head = train_head(train_x, train_y, val_x, val_y, cfg.head);
        const EvalMetrics metrics = evaluate(head, test_x, test_y);
        row.acc = metrics.acc;
        row.auc = metrics.auc;

        if (cfg.save_models) {
            row.model_path = cfg.out_dir + "/model_" + sanitize(strategy_spec) + "_s" +
                             std::to_string(row.seed) + ".bin";
            save_model(trained.model, row.model_path);
        }
        row.ok = true;
    } catch (const std::exception& e) {
        row.ok = false;
        row.error = e.what();
    }
    return row;
}

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

void summarize(ExperimentReport& report, const std::vector<std::string>& strategies) {
    for (const auto& spec : strategies) {
        StrategySummary s;
        s.strategy = spec;
        std::vector<double> losses, accs, aucs;
        for (const auto& row : report.rows) {
            if (row.strategy != spec || !row.ok) continue;
            losses.push_back(row.recon_loss);
            accs.push_back(row.acc);
            if (row.auc) aucs.push_back(*row.auc);
        }
        s.cells_ok = static_cast<index_t>(losses.size());
        s.auc_cells = static_cast<index_t>(aucs.size());
        auto mean_std = [](const std::vector<double>& v, double& mean, double& sd) {
            mean = sd = 0.0;
            if (v.empty()) return;
            for (double x : v) mean += x;
            mean /= static_cast<double>(v.size());
            for (double x : v) sd += (x - mean) * (x - mean);
            sd = std::sqrt(sd / static_cast<double>(v.size()));
        };
        mean_std(losses, s.loss_mean, s.loss_std);
        mean_std(accs, s.acc_mean, s.acc_std);
        mean_std(aucs, s.auc_mean, s.auc_std);
        report.summaries.push_back(std::move(s));
    }
}

} // namespace

ExperimentReport run_experiment(const ExperimentConfig& cfg) {
    if (cfg.strategies.empty()) throw invalid_argument("experiment: no strategies configured");
    if (cfg.repeats < 1) throw invalid_argument("experiment: repeats must be >= 1");

    fs::create_directories(cfg.out_dir);
    const PreparedData data = prepare(cfg);

    index_t workers = cfg.workers;
    if (const char* env = std::getenv("ROIMAE_WORKERS")) {
        workers = std::max<index_t>(1, std::atoll(env));
    }

    struct Cell {
        std::string strategy;
        index_t repeat;
    };
    std::vector<Cell> cells;
    for (const auto& spec : cfg.strategies) {
        for (index_t r = 0; r < cfg.repeats; ++r) cells.push_back({spec, r});
    }

    ExperimentReport report;
    report.rows.resize(cells.size());

    if (workers <= 1) {
        for (std::size_t i = 0; i < cells.size(); ++i) {
            report.rows[i] = run_cell(cfg, data, cells[i].strategy, cells[i].repeat);
        }
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::thread> pool;
        const auto nthreads = std::min<std::size_t>(static_cast<std::size_t>(workers), cells.size());
        for (std::size_t w = 0; w < nthreads; ++w) {
            pool.emplace_back([&]() {
                for (;;) {
                    const std::size_t i = next.fetch_add(1);
                    if (i >= cells.size()) return;
                    report.rows[i] = run_cell(cfg, data, cells[i].strategy, cells[i].repeat);
                }
            });
        }
        for (auto& t : pool) t.join();
    }

    summarize(report, cfg.strategies);
    report.footnotes = {
        "Reconstruction losses are not comparable between strategies that mask different "
        "numbers of voxels; larger masked sets score higher MSE.",
        "All strategies share one subject split derived from the global seed; rows are "
        "reproducible from (strategy, seed, eval_mask_stream).",
    };
    return report;
}

// ---------------------------------------------------------------------------
// Report rendering
// ---------------------------------------------------------------------------

ReportFormat parse_report_format(const std::string& name) {
    if (name == "csv") return ReportFormat::csv;
    if (name == "json") return ReportFormat::json;
    if (name == "markdown" || name == "md") return ReportFormat::markdown;
    throw invalid_argument("unknown report format \"" + name + "\"");
}

namespace {

std::string render_csv(const ExperimentReport& report) {
    std::ostringstream out;
    out << "kind,strategy,seed,status,recon_loss,loss_std,acc,acc_std,auc,auc_std,"
           "masked_voxels,masked_percent,eval_mask_stream,model,error\n";
    for (const auto& r : report.rows) {
        out << "cell," << r.strategy << "," << r.seed << "," << (r.ok ? "ok" : "failed") << ",";
        if (r.ok) {
            out << fmt(r.recon_loss) << ",," << fmt(r.acc) << ",,"
                << (r.auc ? fmt(*r.auc) : "") << ",," << r.masked_voxels << ","
                << fmt(r.masked_percent) << "," << r.eval_mask_stream << "," << r.model_path
                << ",";
        } else {
            std::string msg = r.error;
            std::replace(msg.begin(), msg.end(), ',', ';');
            std::replace(msg.begin(), msg.end(), '\n', ' ');
            out << ",,,,,,,,,," << msg;
        }
        out << "\n";
    }
    for (const auto& s : report.summaries) {
        out << "summary," << s.strategy << ",," << s.cells_ok << "," << fmt(s.loss_mean) << ","
            << fmt(s.loss_std) << "," << fmt(s.acc_mean) << "," << fmt(s.acc_std) << ",";
        if (s.auc_cells > 0) {
            out << fmt(s.auc_mean) << "," << fmt(s.auc_std);
        } else {
            out << ",";
        }
        out << ",,,,,\n";
    }
    return out.str();
}

std::string render_markdown(const ExperimentReport& report) {
    std::ostringstream out;
    out << "| Mask | Reconstruction loss | ACC | AUCROC |\n";
    out << "|------|---------------------|-----|--------|\n";
    for (const auto& s : report.summaries) {
        out << "| " << s.strategy << " | " << fmt(s.loss_mean) << " ± " << fmt(s.loss_std)
            << " | " << fmt(100.0 * s.acc_mean) << "% ± " << fmt(100.0 * s.acc_std) << " | ";
        if (s.auc_cells > 0) {
            out << fmt(s.auc_mean) << " ± " << fmt(s.auc_std);
        } else {
            out << "n/a";
        }
        out << " |\n";
    }
    out << "\n";
    int n = 0;
    for (const auto& note : report.footnotes) {
        out << "[^" << ++n << "]: " << note << "\n";
    }
    return out.str();
}

} // namespace

std::string report_to_json(const ExperimentReport& report) {
    ordered_json j;
    j["rows"] = ordered_json::array();
    for (const auto& r : report.rows) {
        ordered_json row;
        row["strategy"] = r.strategy;
        row["seed"] = r.seed;
        row["ok"] = r.ok;
        row["error"] = r.error;
        row["recon_loss"] = r.recon_loss;
        row["acc"] = r.acc;
        if (r.auc) row["auc"] = *r.auc;
        else row["auc"] = nullptr;
        row["masked_voxels"] = r.masked_voxels;
        row["masked_percent"] = r.masked_percent;
        row["eval_mask_stream"] = r.eval_mask_stream;
        row["model"] = r.model_path;
        j["rows"].push_back(std::move(row));
    }
    j["summaries"] = ordered_json::array();
    for (const auto& s : report.summaries) {
        ordered_json sum;
        sum["strategy"] = s.strategy;
        sum["cells_ok"] = s.cells_ok;
        sum["auc_cells"] = s.auc_cells;
        sum["loss_mean"] = s.loss_mean;
        sum["loss_std"] = s.loss_std;
        sum["acc_mean"] = s.acc_mean;
        sum["acc_std"] = s.acc_std;
        sum["auc_mean"] = s.auc_mean;
        sum["auc_std"] = s.auc_std;
        j["summaries"].push_back(std::move(sum));
    }
    j["footnotes"] = report.footnotes;
    return j.dump(2) + "\n";
}

ExperimentReport report_from_json(const std::string& json_text) {
    ExperimentReport report;
    const auto j = ordered_json::parse(json_text);
    for (const auto& row : j.at("rows")) {
        ReportRow r;
        r.strategy = row.at("strategy").get<std::string>();
        r.seed = row.at("seed").get<std::uint64_t>();
        r.ok = row.at("ok").get<bool>();
        r.error = row.at("error").get<std::string>();
        r.recon_loss = row.at("recon_loss").get<double>();
        r.acc = row.at("acc").get<double>();
        if (!row.at("auc").is_null()) r.auc = row.at("auc").get<double>();
        r.masked_voxels = row.at("masked_voxels").get<index_t>();
        r.masked_percent = row.at("masked_percent").get<double>();
        r.eval_mask_stream = row.at("eval_mask_stream").get<std::uint64_t>();
        r.model_path = row.at("model").get<std::string>();
        report.rows.push_back(std::move(r));
    }
    for (const auto& sum : j.at("summaries")) {
        StrategySummary s;
        s.strategy = sum.at("strategy").get<std::string>();
        s.cells_ok = sum.at("cells_ok").get<index_t>();
        s.auc_cells = sum.at("auc_cells").get<index_t>();
        s.loss_mean = sum.at("loss_mean").get<double>();
        s.loss_std = sum.at("loss_std").get<double>();
        s.acc_mean = sum.at("acc_mean").get<double>();
        s.acc_std = sum.at("acc_std").get<double>();
        s.auc_mean = sum.at("auc_mean").get<double>();
        s.auc_std = sum.at("auc_std").get<double>();
        report.summaries.push_back(std::move(s));
    }
    report.footnotes = j.at("footnotes").get<std::vector<std::string>>();
    return report;
}

std::string render_report(const ExperimentReport& report, ReportFormat format) {
    if (report.rows.empty()) throw invalid_argument("render_report: empty report");
    switch (format) {
        case ReportFormat::csv: return render_csv(report);
        case ReportFormat::json: return report_to_json(report);
        case ReportFormat::markdown: return render_markdown(report);
    }
    throw invalid_argument("render_report: bad format");
}

void emit_report(const ExperimentReport& report, ReportFormat format, const std::string& path) {
    const std::string text = render_report(report, format);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw io_error(io_error::code::write_failed, "cannot open " + path);
    f.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!f) throw io_error(io_error::code::write_failed, "short write to " + path);
}

} // namespace roimae
