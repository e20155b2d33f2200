#include "lmk/cli.hpp"

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "lmk/plot.hpp"
#include "lmk/pruner.hpp"
#include "lmk/shape_stats.hpp"
#include "lmk/synth.hpp"

namespace lmk::cli {

namespace fs = std::filesystem;

namespace {

// Exclusive lock file in the output directory; removed on scope exit.
class DirLock {
public:
    explicit DirLock(const std::string& dir) {
        fs::create_directories(dir);
        path_ = (fs::path(dir) / ".lock").string();
        std::ofstream probe(path_, std::ios::app);
        require(probe.good(), "cannot access lock file " + path_);
        probe.close();
        // the lock is the successful creation; creation after close is racy
        // only across processes we do not run concurrently by contract
        std::error_code ec;
        if (fs::exists(path_ + ".held", ec))
            throw Error("output directory is locked by another invocation: " +
                        dir + " (remove " + path_ + ".held if stale)");
        std::ofstream held(path_ + ".held");
        held_ = path_ + ".held";
    }
    ~DirLock() {
        std::error_code ec;
        fs::remove(held_, ec);
        fs::remove(path_, ec);
    }

private:
    std::string path_, held_;
};

void atomic_save_png(const Image& img, const std::string& path) {
    save_png_gray8(img, path + ".tmp");
    fs::rename(path + ".tmp", path);
}

std::vector<std::string> split_list(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, sep))
        if (!item.empty()) out.push_back(item);
    return out;
}

// Learned landmarks for one image under a checkpoint: encode, drop pruned
// indices when the checkpoint carries a surviving set.
LandmarkSet checkpoint_landmarks(const Checkpoint& ckpt, const Image& img) {
    LandmarkSet lms = encode(ckpt.params, img);
    if (ckpt.kept_indices.has_value()) {
        LandmarkSet kept;
        for (int idx : *ckpt.kept_indices)
            kept.points.push_back(lms.points[size_t(idx)]);
        return kept;
    }
    return lms;
}

RegistrationConfig checkpoint_registration(const Checkpoint& ckpt,
                                           const Dataset& ds) {
    RegistrationConfig rc;
    rc.anchor_count = ckpt.anchor_count;
    rc.image_extent = {ds.image_size, ds.image_size};
    if (ckpt.metadata.count("loss"))
        rc.match.kind = parse_loss_kind(ckpt.metadata.at("loss"));
    if (ckpt.metadata.count("ncc_patch"))
        rc.match.ncc_patch = std::stoi(ckpt.metadata.at("ncc_patch"));
    if (ckpt.metadata.count("variant"))
        rc.variant = parse_variant(ckpt.metadata.at("variant"));
    if (rc.variant == Variant::Localized) {
        require(ckpt.metadata.count("mask"),
                "checkpoint is localized but carries no mask path");
        Mask m = load_image(ckpt.metadata.at("mask"));
        validate_mask(m);
        rc.mask = std::move(m);
    }
    return rc;
}

}  // namespace

void run_synth(const SynthArgs& args) {
    require(!args.out.empty(), "synth needs --out");
    DirLock lock(args.out);
    SynthConfig cfg;
    cfg.out_dir = args.out;
    cfg.n_per_class = args.n_per_class;
    cfg.seed = args.seed;
    cfg.image_size = args.image_size;
    cfg.classes = split_list(args.classes, ',');
    generate_synthetic(cfg);
}

void run_train(const TrainArgs& args) {
    const TrainConfig cfg = parse_train_config(args.config);
    const Manifest manifest = load_manifest(args.manifest);
    const Dataset ds = load_dataset(manifest, cfg.variant == Variant::Weak);
    require(!ds.split_indices("train").empty(), "train split is empty");
    require(!ds.split_indices("val").empty(), "val split is empty");

    DirLock lock(args.out);
    const EncoderParams init = make_initial_params(cfg);
    const TrainResult result = train(cfg, ds, init);

    Checkpoint ckpt;
    ckpt.params = result.best_params;
    ckpt.anchor_count = cfg.anchors;
    ckpt.metadata["loss"] = cfg.loss;
    ckpt.metadata["ncc_patch"] = std::to_string(cfg.ncc_patch);
    ckpt.metadata["variant"] = variant_name(cfg.variant);
    if (!cfg.mask.empty()) ckpt.metadata["mask"] = cfg.mask;
    ckpt.metadata["lambda"] = format_double(cfg.lambda);
    ckpt.metadata["seed"] = std::to_string(cfg.seed);
    ckpt.metadata["epochs"] = std::to_string(int(result.history.size()));
    ckpt.metadata["best_epoch"] = std::to_string(result.best_epoch);
    ckpt.metadata["best_val_loss"] = format_double(result.best_val_loss);
    save_checkpoint(ckpt, (fs::path(args.out) / "checkpoint.ckpt").string());
    write_history_csv(result.history,
                      (fs::path(args.out) / "history.csv").string());
}

void run_infer(const InferArgs& args) {
    const Checkpoint ckpt = load_checkpoint(args.checkpoint);
    const Manifest manifest = load_manifest(args.manifest);
    const Dataset ds = load_dataset(manifest, false);

    std::vector<std::string> ids;
    std::vector<LandmarkSet> sets;
    require(!args.split.empty(), "infer needs --split (train|val|test|all)");
    for (const auto& e : ds.entries) {
        if (args.split != "all" && e.split != args.split) continue;
        LandmarkSet lms = checkpoint_landmarks(ckpt, e.image);
        const auto full = append_anchors(
            lms, {ds.image_size, ds.image_size}, ckpt.anchor_count);
        ids.push_back(e.id);
        sets.push_back(full);
    }
    export_features(sets, ids, args.out);
}

void run_register(const RegisterArgs& args) {
    const Checkpoint ckpt = load_checkpoint(args.checkpoint);
    const Manifest manifest = load_manifest(args.manifest);
    const Dataset ds = load_dataset(manifest, false);
    const int si = ds.find(args.source_id);
    const int ti = ds.find(args.target_id);
    require(si >= 0, "source id not in manifest: " + args.source_id);
    require(ti >= 0, "target id not in manifest: " + args.target_id);

    DirLock lock(args.out);
    const RegistrationConfig rc = checkpoint_registration(ckpt, ds);
    const auto& img_s = ds.entries[size_t(si)].image;
    const auto& img_t = ds.entries[size_t(ti)].image;
    const auto src = checkpoint_landmarks(ckpt, img_s);
    const auto tgt = checkpoint_landmarks(ckpt, img_t);
    const auto full = evaluate_pair_full(src, tgt, img_s, img_t, rc);

    atomic_save_png(full.registered,
                    (fs::path(args.out) / "registered.png").string());
    save_raw64(full.registered,
               (fs::path(args.out) / "registered.raw64").string());
    Image residual(img_t.height, img_t.width);
    for (size_t i = 0; i < residual.data.size(); ++i)
        residual.data[i] = std::abs(img_t.data[i] - full.registered.data[i]);
    atomic_save_png(residual, (fs::path(args.out) / "residual.png").string());

    // overlay: target image with the target landmarks marked
    Image overlay = img_t;
    const auto tgt_full =
        append_anchors(tgt, {ds.image_size, ds.image_size}, ckpt.anchor_count);
    for (const auto& p : tgt_full.points) {
        const int cx = int(std::lround(p.x)), cy = int(std::lround(p.y));
        for (int d = -2; d <= 2; ++d) {
            if (cx + d >= 0 && cx + d < overlay.width && cy >= 0 &&
                cy < overlay.height)
                overlay.at(cy, cx + d) = 1.0;
            if (cy + d >= 0 && cy + d < overlay.height && cx >= 0 &&
                cx < overlay.width)
                overlay.at(cy + d, cx) = 1.0;
        }
    }
    atomic_save_png(overlay, (fs::path(args.out) / "overlay.png").string());

    const double before = match_loss(img_t, img_s, rc.match);
    nlohmann::json stats;
    stats["source"] = args.source_id;
    stats["target"] = args.target_id;
    stats["loss"] = loss_kind_name(rc.match.kind);
    stats["match_before"] = before;
    stats["match_after"] = full.eval.match;
    stats["kappa"] = full.eval.kappa;
    const std::string stats_path = (fs::path(args.out) / "stats.json").string();
    {
        std::ofstream out(stats_path + ".tmp");
        out << stats.dump(2) << "\n";
        require(out.good(), "cannot write " + stats_path);
    }
    fs::rename(stats_path + ".tmp", stats_path);
}

void run_prune(const PruneArgs& args) {
    const Checkpoint ckpt = load_checkpoint(args.checkpoint);
    const Manifest manifest = load_manifest(args.manifest);
    const Dataset ds = load_dataset(manifest, false);
    require(args.target_count.has_value() || args.max_delta.has_value(),
            "prune needs --target-count or --max-delta");

    DirLock lock(args.out);
    const RegistrationConfig rc = checkpoint_registration(ckpt, ds);
    PruneContext ctx =
        make_prune_context(ckpt.params, ds, rc, args.seed, args.pair_cap);

    // when the checkpoint was already pruned, continue from its survivors
    std::vector<int> initial;
    if (ckpt.kept_indices.has_value()) initial = *ckpt.kept_indices;
    else
        for (int i = 0; i < ckpt.params.arch.landmark_count; ++i)
            initial.push_back(i);

    PruneStop stop;
    stop.target_count = args.target_count;
    stop.max_delta = args.max_delta;

    // greedy_prune works on positions within `initial`
    PruneContext sub_ctx = ctx;
    if (ckpt.kept_indices.has_value()) {
        for (auto& lms : sub_ctx.landmarks) {
            if (lms.points.empty()) continue;
            LandmarkSet kept;
            for (int idx : initial) kept.points.push_back(lms.points[size_t(idx)]);
            lms = kept;
        }
    }
    const PruneReport report =
        greedy_prune(sub_ctx, int(initial.size()), stop);

    std::vector<int> surviving;
    for (int pos : report.surviving) surviving.push_back(initial[size_t(pos)]);

    Checkpoint out_ckpt = ckpt;
    out_ckpt.kept_indices = surviving;
    out_ckpt.metadata["pruned_from"] = std::to_string(initial.size());
    out_ckpt.metadata["pruned_to"] = std::to_string(surviving.size());
    save_checkpoint(out_ckpt, (fs::path(args.out) / "checkpoint.ckpt").string());
    write_prune_report_csv(report,
                           (fs::path(args.out) / "prune_report.csv").string());
}

void run_zscore(const ZscoreArgs& args) {
    const Checkpoint ckpt = load_checkpoint(args.checkpoint);
    const Manifest manifest = load_manifest(args.manifest);
    const Dataset ds = load_dataset(manifest, false);

    const auto control_idx = ds.select(args.control_split, args.control_class);
    const auto query_idx = ds.select(args.query_split, args.query_class);
    require(control_idx.size() >= 2,
            "control selection needs at least 2 images (split '" +
                args.control_split + "', class '" + args.control_class + "')");
    require(!query_idx.empty(), "query selection is empty");

    auto descriptor = [&](int idx) {
        const auto& e = ds.entries[size_t(idx)];
        const auto lms = checkpoint_landmarks(ckpt, e.image);
        const auto full = append_anchors(
            lms, {ds.image_size, ds.image_size}, ckpt.anchor_count);
        return full.flatten();
    };

    std::vector<std::vector<double>> control;
    for (int idx : control_idx) control.push_back(descriptor(idx));
    const auto stats = fit_control_stats(
        control, args.pca_dims.has_value()
                     ? std::optional<int>(*args.pca_dims)
                     : std::nullopt);

    const std::string tmp = args.out + ".tmp";
    {
        std::ofstream out(tmp);
        require(out.good(), "cannot write scores: " + args.out);
        out << "id,split,class,zscore\n";
        for (int idx : query_idx) {
            const auto& e = ds.entries[size_t(idx)];
            out << e.id << ',' << e.split << ',' << e.cls << ','
                << format_double(zscore(stats, descriptor(idx))) << "\n";
        }
        require(out.good(), "score write failure: " + args.out);
    }
    fs::rename(tmp, args.out);
}

void run_sweep(const SweepArgs& args) {
    const TrainConfig cfg = parse_train_config(args.config);
    const Manifest manifest = load_manifest(args.manifest);
    const Dataset ds = load_dataset(manifest, cfg.variant == Variant::Weak);

    std::vector<double> lambdas;
    for (const auto& s : split_list(args.lambdas, ','))
        lambdas.push_back(std::stod(s));
    require(!lambdas.empty(), "no lambda values given");

    DirLock lock(args.out);
    const auto cells = lambda_sweep(cfg, ds, lambdas, args.folds);
    write_sweep_csv(cells, (fs::path(args.out) / "sweep.csv").string());

    // one series per fold plus the per-lambda mean over finite cells;
    // x axis is the rank of lambda in the sorted list
    std::vector<double> sorted_lambdas = lambdas;
    std::sort(sorted_lambdas.begin(), sorted_lambdas.end());
    auto rank = [&](double lam) {
        for (size_t i = 0; i < sorted_lambdas.size(); ++i)
            if (sorted_lambdas[i] == lam) return double(i);
        return -1.0;
    };
    std::vector<PlotSeries> series(size_t(args.folds) + 1);
    for (const auto& c : cells) {
        if (!std::isfinite(c.val_match_loss)) continue;
        auto& s = series[size_t(c.fold)];
        s.xs.push_back(rank(c.lambda));
        s.ys.push_back(c.val_match_loss);
        s.gray = 0.6;
    }
    auto& mean_series = series.back();
    mean_series.gray = 0.0;
    for (size_t i = 0; i < sorted_lambdas.size(); ++i) {
        double acc = 0.0;
        int n = 0;
        for (const auto& c : cells)
            if (c.lambda == sorted_lambdas[i] &&
                std::isfinite(c.val_match_loss)) {
                acc += c.val_match_loss;
                ++n;
            }
        if (n > 0) {
            mean_series.xs.push_back(double(i));
            mean_series.ys.push_back(acc / n);
        }
    }
    const Image plot = render_line_plot(series);
    atomic_save_png(plot, (fs::path(args.out) / "sweep.png").string());
}

}  // namespace lmk::cli
