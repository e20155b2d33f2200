#pragma once

#include <optional>
#include <string>

namespace lmk::cli {

// Command implementations shared by the landmarker binary and the tests.
// Each throws lmk::Error on failure; outputs are written to a temporary
// name and renamed only on success. Commands that write into an output
// directory take an exclusive .lock file there for their duration.

struct SynthArgs {
    std::string out;
    int n_per_class = 50;
    uint64_t seed = 0;
    std::string classes = "ellipse,lobed,deformed";
    int image_size = 128;
};
void run_synth(const SynthArgs& args);

struct TrainArgs {
    std::string manifest;
    std::string config;
    std::string out;  // directory: checkpoint.ckpt + history.csv
};
void run_train(const TrainArgs& args);

struct InferArgs {
    std::string checkpoint;
    std::string manifest;
    std::string split;  // train | val | test | all
    std::string out;    // landmarks csv path
};
void run_infer(const InferArgs& args);

struct RegisterArgs {
    std::string checkpoint;
    std::string manifest;
    std::string source_id;
    std::string target_id;
    std::string out;  // directory
};
void run_register(const RegisterArgs& args);

struct PruneArgs {
    std::string checkpoint;
    std::string manifest;
    std::string out;  // directory: pruned checkpoint + report csv
    std::optional<int> target_count;
    std::optional<double> max_delta;
    uint64_t seed = 0;
    int pair_cap = 200;
};
void run_prune(const PruneArgs& args);

struct ZscoreArgs {
    std::string checkpoint;
    std::string manifest;
    std::string control_split = "train";
    std::string control_class;  // optional class filter
    std::string query_split = "test";
    std::string query_class;
    std::optional<int> pca_dims;
    std::string out;  // scores csv path
};
void run_zscore(const ZscoreArgs& args);

struct SweepArgs {
    std::string manifest;
    std::string config;
    std::string lambdas = "0,1e-4,1e-3,5e-3,1e-2";
    int folds = 3;
    std::string out;  // directory: sweep.csv + sweep.png
};
void run_sweep(const SweepArgs& args);

}  // namespace lmk::cli
