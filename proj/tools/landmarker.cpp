// landmarker — self-supervised landmark discovery via TPS image
// registration: synthetic data generation, training, inference,
// registration, pruning, shape scoring and lambda sweeps.

#include <CLI11.hpp>

#include "lmk/cli.hpp"
#include "lmk/common.hpp"

int main(int argc, char** argv) {
    CLI::App app{"landmark discovery and TPS registration toolkit"};
    app.require_subcommand(1);

    lmk::cli::SynthArgs synth;
    auto* c_synth = app.add_subcommand("synth", "generate a synthetic dataset");
    c_synth->add_option("--out", synth.out, "output directory")->required();
    c_synth->add_option("--n", synth.n_per_class, "samples per class");
    c_synth->add_option("--seed", synth.seed, "rng seed");
    c_synth->add_option("--classes", synth.classes,
                        "comma list: ellipse,lobed,deformed");
    c_synth->add_option("--image-size", synth.image_size, "square image size");

    lmk::cli::TrainArgs train;
    auto* c_train = app.add_subcommand("train", "train a landmark encoder");
    c_train->add_option("--manifest", train.manifest, "dataset manifest")
        ->required();
    c_train->add_option("--config", train.config, "key=value config file")
        ->required();
    c_train->add_option("--out", train.out, "output directory")->required();

    lmk::cli::InferArgs infer;
    auto* c_infer = app.add_subcommand("infer", "emit landmarks per image");
    c_infer->add_option("--checkpoint", infer.checkpoint, "model checkpoint")
        ->required();
    c_infer->add_option("--manifest", infer.manifest, "dataset manifest")
        ->required();
    c_infer->add_option("--split", infer.split, "train|val|test|all")
        ->default_val("all");
    c_infer->add_option("--out", infer.out, "landmarks csv path")->required();

    lmk::cli::RegisterArgs reg;
    auto* c_reg = app.add_subcommand("register", "register one image pair");
    c_reg->add_option("--checkpoint", reg.checkpoint, "model checkpoint")
        ->required();
    c_reg->add_option("--manifest", reg.manifest, "dataset manifest")
        ->required();
    c_reg->add_option("--source", reg.source_id, "source image id")->required();
    c_reg->add_option("--target", reg.target_id, "target image id")->required();
    c_reg->add_option("--out", reg.out, "output directory")->required();

    lmk::cli::PruneArgs prune;
    auto* c_prune = app.add_subcommand("prune", "greedy redundancy removal");
    c_prune->add_option("--checkpoint", prune.checkpoint, "model checkpoint")
        ->required();
    c_prune->add_option("--manifest", prune.manifest, "dataset manifest")
        ->required();
    c_prune->add_option("--out", prune.out, "output directory")->required();
    int target = -1;
    double max_delta = std::numeric_limits<double>::quiet_NaN();
    c_prune->add_option("--target-count", target, "landmarks to retain");
    c_prune->add_option("--max-delta", max_delta, "stop threshold");
    c_prune->add_option("--seed", prune.seed, "rng seed");
    c_prune->add_option("--pair-cap", prune.pair_cap, "evaluation pair cap");

    lmk::cli::ZscoreArgs zs;
    auto* c_zs = app.add_subcommand("zscore", "Mahalanobis shape scores");
    c_zs->add_option("--checkpoint", zs.checkpoint, "model checkpoint")
        ->required();
    c_zs->add_option("--manifest", zs.manifest, "dataset manifest")->required();
    c_zs->add_option("--control-split", zs.control_split, "control split");
    c_zs->add_option("--control-class", zs.control_class,
                     "control class filter");
    c_zs->add_option("--query-split", zs.query_split, "query split");
    c_zs->add_option("--query-class", zs.query_class, "query class filter");
    int pca_dims = -1;
    c_zs->add_option("--pca-dims", pca_dims, "PCA dimension cap");
    c_zs->add_option("--out", zs.out, "scores csv path")->required();

    lmk::cli::SweepArgs sweep;
    auto* c_sweep = app.add_subcommand("sweep", "lambda cross-validation sweep");
    c_sweep->add_option("--manifest", sweep.manifest, "dataset manifest")
        ->required();
    c_sweep->add_option("--config", sweep.config, "key=value config file")
        ->required();
    c_sweep->add_option("--lambdas", sweep.lambdas, "comma list of lambdas");
    c_sweep->add_option("--folds", sweep.folds, "cross-validation folds");
    c_sweep->add_option("--out", sweep.out, "output directory")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*c_synth) lmk::cli::run_synth(synth);
        if (*c_train) lmk::cli::run_train(train);
        if (*c_infer) lmk::cli::run_infer(infer);
        if (*c_reg) lmk::cli::run_register(reg);
        if (*c_prune) {
            if (target >= 0) prune.target_count = target;
            if (!std::isnan(max_delta)) prune.max_delta = max_delta;
            lmk::cli::run_prune(prune);
        }
        if (*c_zs) {
            if (pca_dims >= 1) zs.pca_dims = pca_dims;
            lmk::cli::run_zscore(zs);
        }
        if (*c_sweep) lmk::cli::run_sweep(sweep);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "landmarker: %s\n", e.what());
        return 1;
    }
    return 0;
}
