#include "lmk/pruner.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>

namespace lmk {

namespace {

// Keep only the active learned indices; nudge near-coincident points apart
// so an engineered duplicate cannot make the kernel singular.
LandmarkSet filter_landmarks(const LandmarkSet& lms,
                             const std::vector<int>& active) {
    LandmarkSet out;
    out.points.reserve(active.size());
    for (int idx : active) out.points.push_back(lms.points[size_t(idx)]);
    for (size_t i = 0; i < out.points.size(); ++i)
        for (size_t j = 0; j < i; ++j) {
            const double dx = out.points[i].x - out.points[j].x;
            const double dy = out.points[i].y - out.points[j].y;
            if (dx * dx + dy * dy < 1e-12) {
                out.points[i].x += 1e-3;  // later index moves
                out.points[i].y += 1e-3;
            }
        }
    return out;
}

}  // namespace

PruneContext make_prune_context(const EncoderParams& params, const Dataset& ds,
                                const RegistrationConfig& rc, uint64_t seed,
                                int pair_cap) {
    PruneContext ctx;
    ctx.ds = &ds;
    ctx.rc = rc;
    ctx.rc.lambda = 0.0;  // importance uses the registration loss alone
    const auto train_ids = ds.split_indices("train");
    auto pairs = make_pairs(train_ids, PairStrategy::AllPairs, 0);
    if (int(pairs.size()) > pair_cap) {
        Rng rng = Rng(seed).split(0x9273);
        for (int i = 0; i < pair_cap; ++i) {
            const size_t j = i + rng.uniform_int(pairs.size() - i);
            std::swap(pairs[size_t(i)], pairs[j]);
        }
        pairs.resize(size_t(pair_cap));
    }
    ctx.pairs = std::move(pairs);

    ctx.landmarks.resize(ds.entries.size());
    std::vector<bool> used(ds.entries.size(), false);
    for (const auto& p : ctx.pairs) used[size_t(p.source)] = used[size_t(p.target)] = true;
    for (size_t i = 0; i < ds.entries.size(); ++i)
        if (used[i]) ctx.landmarks[i] = encode(params, ds.entries[i].image);
    return ctx;
}

double subset_loss(const PruneContext& ctx, const std::vector<int>& active) {
    require(ctx.ds != nullptr && !ctx.pairs.empty(), "empty prune context");
    require(int(active.size()) + ctx.rc.anchor_count >= 5,
            "subset too small for a solvable 2D system");
    double acc = 0.0;
    for (const auto& p : ctx.pairs) {
        const auto src = filter_landmarks(ctx.landmarks[size_t(p.source)], active);
        const auto tgt = filter_landmarks(ctx.landmarks[size_t(p.target)], active);
        const auto ev = evaluate_pair(src, tgt, ctx.ds->entries[size_t(p.source)].image,
                                      ctx.ds->entries[size_t(p.target)].image, ctx.rc);
        acc += ev.match;
    }
    return acc / double(ctx.pairs.size());
}

std::vector<double> importance_scores(const PruneContext& ctx,
                                      const std::vector<int>& active,
                                      double* baseline_out) {
    require(int(active.size()) > 4, "active set must stay above dim+2 points");
    const double baseline = subset_loss(ctx, active);
    if (baseline_out) *baseline_out = baseline;
    std::vector<double> scores(active.size(), 0.0);
    for (size_t k = 0; k < active.size(); ++k) {
        std::vector<int> reduced;
        reduced.reserve(active.size() - 1);
        for (size_t j = 0; j < active.size(); ++j)
            if (j != k) reduced.push_back(active[j]);
        try {
            scores[k] = subset_loss(ctx, reduced) - baseline;
        } catch (const SolverError&) {
            // removal breaks some pair's system: mark non-removable
            scores[k] = std::numeric_limits<double>::infinity();
        }
    }
    return scores;
}

PruneReport greedy_prune(const PruneContext& ctx, int learned_count,
                         const PruneStop& stop) {
    require(stop.target_count.has_value() || stop.max_delta.has_value(),
            "prune needs a target count or a difference threshold");
    if (stop.target_count.has_value())
        require(*stop.target_count >= 5,
                "target count must be at least dim+3 points");

    std::vector<int> active(static_cast<size_t>(learned_count), 0);
    for (int i = 0; i < learned_count; ++i) active[size_t(i)] = i;

    PruneReport report;
    report.initial_loss = subset_loss(ctx, active);
    double current = report.initial_loss;

    while (true) {
        if (stop.target_count.has_value() &&
            int(active.size()) <= *stop.target_count)
            break;
        if (int(active.size()) <= 5) break;  // keep the system solvable

        const auto scores = importance_scores(ctx, active, nullptr);
        size_t best = 0;
        for (size_t k = 1; k < scores.size(); ++k)
            if (scores[k] < scores[best]) best = k;  // tie keeps lowest index
        if (stop.max_delta.has_value() && scores[best] > *stop.max_delta) break;
        if (std::isinf(scores[best])) break;  // nothing removable

        PruneStep step;
        step.removed_index = active[best];
        step.importance = scores[best];
        active.erase(active.begin() + long(best));
        step.baseline_loss = subset_loss(ctx, active);
        current = step.baseline_loss;
        report.steps.push_back(step);
    }
    (void)current;
    report.surviving = active;
    return report;
}

void write_prune_report_csv(const PruneReport& report, const std::string& path) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp);
        require(out.good(), "cannot write prune report: " + path);
        out << "step,removed_index,importance,baseline_loss\n";
        out << "0,-1,0," << format_double(report.initial_loss) << "\n";
        for (size_t i = 0; i < report.steps.size(); ++i) {
            const auto& s = report.steps[i];
            out << (i + 1) << ',' << s.removed_index << ','
                << format_double(s.importance) << ','
                << format_double(s.baseline_loss) << "\n";
        }
        require(out.good(), "prune report write failure: " + path);
    }
    std::filesystem::rename(tmp, path);
}

}  // namespace lmk
