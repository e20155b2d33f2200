#pragma once

#include <map>

#include "lmk/manifest.hpp"
#include "lmk/pipeline.hpp"

namespace lmk {

enum class PairStrategy { AllPairs, RandomK };

PairStrategy parse_pair_strategy(const std::string& name);

struct TrainConfig {
    double lambda = 1e-6;
    double beta = 1.0;
    std::string loss = "l2";
    int ncc_patch = 9;
    Variant variant = Variant::Plain;
    std::string mask = "";  // mask image path (localized variant)
    int epochs = 20;
    int batch_pairs = 32;
    double learning_rate = 1e-4;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    PairStrategy pair_strategy = PairStrategy::AllPairs;
    int pair_cap = 0;  // k for random_k
    uint64_t seed = 0;
    int early_stop_patience = 0;  // 0 disables early stopping

    // encoder / warp configuration
    int landmarks = 16;
    int anchors = 4;
    int image_size = 128;
    std::vector<int> convs_per_block = {2, 2, 4, 4};
    std::vector<int> channels = {16, 32, 64, 128};
    std::string init = "random";  // random | grid

    void validate() const;
    ArchDescriptor arch() const;
    RegistrationConfig registration(const Dataset& ds) const;
    MatchSpec match_spec() const;
};

// Flat key=value config document mirroring the TrainConfig fields.
TrainConfig parse_train_config(const std::string& path);
void write_train_config(const TrainConfig& cfg, const std::string& path);

struct PairRecord {
    int source = 0;  // dataset entry indices
    int target = 0;
};

// Seed-deterministic initial parameters: init=random draws every layer,
// init=grid zeroes the head and pins the initial landmarks to a regular
// grid (a mean-landmark style initialization).
EncoderParams make_initial_params(const TrainConfig& cfg);

// all_pairs: every ordered pair (i, j), i != j, in index order.
// random_k: k ordered pairs sampled uniformly without replacement,
// deterministic given the seed.
std::vector<PairRecord> make_pairs(const std::vector<int>& ids,
                                   PairStrategy strategy, uint64_t seed,
                                   int k = 0);

struct HistoryRow {
    int epoch = 0;
    double train_loss = 0.0;
    double val_match_loss = 0.0;
    double mean_kappa = 0.0;
    double wall_seconds = 0.0;
};

void write_history_csv(const std::vector<HistoryRow>& rows,
                       const std::string& path);

// Raised when the TPS solve hits a singular system during training; names
// the epoch, batch and offending pair.
class TrainAbort : public Error {
public:
    TrainAbort(const std::string& msg, int epoch, int batch,
               std::string source_id, std::string target_id)
        : Error(msg), epoch(epoch), batch(batch),
          source_id(std::move(source_id)), target_id(std::move(target_id)) {}
    int epoch;
    int batch;
    std::string source_id;
    std::string target_id;
};

struct TrainResult {
    EncoderParams best_params;   // snapshot at the best validation loss
    EncoderParams final_params;  // parameters after the last epoch
    std::vector<HistoryRow> history;
    int best_epoch = -1;
    double best_val_loss = 0.0;
};

// Adam over the whole pipeline. Per batch: encode every distinct image
// once, run each pair's registration graph, push the accumulated landmark
// adjoints back through the encoder, and take one step on the mean batch
// gradient. Validation uses the pure match term so values are comparable
// across lambda.
TrainResult train(const TrainConfig& cfg, const Dataset& ds,
                  const std::vector<int>& train_ids,
                  const std::vector<int>& val_ids, const EncoderParams& init);

// Convenience overload using the dataset's train/val splits.
TrainResult train(const TrainConfig& cfg, const Dataset& ds,
                  const EncoderParams& init);

struct SweepCell {
    double lambda = 0.0;
    int fold = 0;
    double val_match_loss = 0.0;  // NaN when the run failed
    std::string status;           // "ok" or the failure reason
};

// K-fold cross-validation over the train+val pool; one train() per
// (lambda, fold). Failures are recorded per cell instead of aborting.
std::vector<SweepCell> lambda_sweep(const TrainConfig& cfg, const Dataset& ds,
                                    const std::vector<double>& lambdas,
                                    int folds);

void write_sweep_csv(const std::vector<SweepCell>& cells,
                     const std::string& path);

}  // namespace lmk
