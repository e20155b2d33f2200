#pragma once

#include <optional>

#include "lmk/pipeline.hpp"
#include "lmk/trainer.hpp"

namespace lmk {

// Greedy redundancy removal: repeatedly drops the learned landmark whose
// removal least degrades the mean registration loss over a fixed set of
// evaluation pairs. Anchors never participate.

struct PruneStep {
    int removed_index = -1;   // original learned-landmark index
    double importance = 0.0;  // loss(active \ {i}) - loss(active)
    double baseline_loss = 0.0;  // mean registration loss after this removal
};

struct PruneReport {
    double initial_loss = 0.0;
    std::vector<PruneStep> steps;    // in removal order
    std::vector<int> surviving;      // learned indices kept, ascending
};

struct PruneStop {
    std::optional<int> target_count;
    std::optional<double> max_delta;
};

// Evaluation context: cached learned landmarks per dataset entry plus the
// pair list the registration loss is averaged over. lambda plays no role
// here (importance uses the pure registration loss; masked when the
// localized variant is configured).
struct PruneContext {
    const Dataset* ds = nullptr;
    std::vector<PairRecord> pairs;
    std::vector<LandmarkSet> landmarks;  // aligned with ds->entries
    RegistrationConfig rc;
};

// Builds the default context: landmarks encoded from the checkpoint
// parameters, pairs drawn from the train split capped at 200 (fixed seed).
PruneContext make_prune_context(const EncoderParams& params, const Dataset& ds,
                                const RegistrationConfig& rc, uint64_t seed,
                                int pair_cap = 200);

// Mean registration loss with only `active` learned indices kept. Learned
// landmarks closer than 1e-6 px are perturbed apart by 1e-3 px before the
// system is built so coincident duplicates stay solvable.
double subset_loss(const PruneContext& ctx, const std::vector<int>& active);

// Per-index importance for every active index; an index whose removal makes
// some pair singular gets +infinity (non-removable).
std::vector<double> importance_scores(const PruneContext& ctx,
                                      const std::vector<int>& active,
                                      double* baseline_out = nullptr);

PruneReport greedy_prune(const PruneContext& ctx, int learned_count,
                         const PruneStop& stop);

void write_prune_report_csv(const PruneReport& report, const std::string& path);

}  // namespace lmk
