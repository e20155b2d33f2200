#include "lmk/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

namespace lmk {

PairStrategy parse_pair_strategy(const std::string& name) {
    if (name == "all_pairs") return PairStrategy::AllPairs;
    if (name == "random_k") return PairStrategy::RandomK;
    throw Error("unknown pair strategy '" + name + "'");
}

void TrainConfig::validate() const {
    require(lambda >= 0.0 && beta >= 0.0, "lambda and beta must be >= 0");
    require(epochs >= 1, "epochs must be >= 1");
    require(batch_pairs >= 1, "batch_pairs must be >= 1");
    require(learning_rate > 0.0 || learning_rate == 0.0,
            "learning_rate must be non-negative");
    require(landmarks >= 2, "need at least 2 learned landmarks");
    require(anchors == 0 || anchors == 4, "anchors must be 0 or 4");
    parse_loss_kind(loss);
    arch().validate();
    if (variant == Variant::Localized)
        require(!mask.empty(), "localized variant needs mask=<path>");
}

ArchDescriptor TrainConfig::arch() const {
    ArchDescriptor a;
    a.input_size = image_size;
    a.convs_per_block = convs_per_block;
    a.channels = channels;
    a.landmark_count = landmarks;
    return a;
}

MatchSpec TrainConfig::match_spec() const {
    MatchSpec spec;
    spec.kind = parse_loss_kind(loss);
    spec.ncc_patch = ncc_patch;
    return spec;
}

RegistrationConfig TrainConfig::registration(const Dataset& ds) const {
    RegistrationConfig rc;
    rc.match = match_spec();
    rc.lambda = lambda;
    rc.beta = beta;
    rc.variant = variant;
    rc.anchor_count = anchors;
    rc.image_extent = {image_size, image_size};
    if (variant == Variant::Localized) {
        Mask m = load_image(mask);
        validate_mask(m);
        rc.mask = std::move(m);
    }
    (void)ds;
    return rc;
}

// ---------------------------------------------------------------------------
// config file

namespace {

std::vector<int> parse_int_list(const std::string& s) {
    std::vector<int> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(std::stoi(item));
    return out;
}

std::string join_ints(const std::vector<int>& v) {
    std::string s;
    for (size_t i = 0; i < v.size(); ++i) {
        if (i) s += ',';
        s += std::to_string(v[i]);
    }
    return s;
}

}  // namespace

TrainConfig parse_train_config(const std::string& path) {
    std::ifstream in(path);
    require(in.good(), "cannot open config: " + path);
    TrainConfig cfg;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        require(eq != std::string::npos,
                "bad config line " + std::to_string(lineno) + " in " + path);
        const std::string key = line.substr(0, eq);
        const std::string val = line.substr(eq + 1);
        if (key == "lambda") cfg.lambda = std::stod(val);
        else if (key == "beta") cfg.beta = std::stod(val);
        else if (key == "loss") cfg.loss = val;
        else if (key == "ncc_patch") cfg.ncc_patch = std::stoi(val);
        else if (key == "variant") cfg.variant = parse_variant(val);
        else if (key == "mask") cfg.mask = val;
        else if (key == "epochs") cfg.epochs = std::stoi(val);
        else if (key == "batch_pairs") cfg.batch_pairs = std::stoi(val);
        else if (key == "learning_rate") cfg.learning_rate = std::stod(val);
        else if (key == "adam_beta1") cfg.adam_beta1 = std::stod(val);
        else if (key == "adam_beta2") cfg.adam_beta2 = std::stod(val);
        else if (key == "adam_eps") cfg.adam_eps = std::stod(val);
        else if (key == "pair_strategy") cfg.pair_strategy = parse_pair_strategy(val);
        else if (key == "pair_cap") cfg.pair_cap = std::stoi(val);
        else if (key == "seed") cfg.seed = std::stoull(val);
        else if (key == "early_stop_patience") cfg.early_stop_patience = std::stoi(val);
        else if (key == "landmarks") cfg.landmarks = std::stoi(val);
        else if (key == "anchors") cfg.anchors = std::stoi(val);
        else if (key == "image_size") cfg.image_size = std::stoi(val);
        else if (key == "convs_per_block") cfg.convs_per_block = parse_int_list(val);
        else if (key == "channels") cfg.channels = parse_int_list(val);
        else if (key == "init") cfg.init = val;
        else throw Error("unknown config key '" + key + "' in " + path);
    }
    cfg.validate();
    return cfg;
}

void write_train_config(const TrainConfig& cfg, const std::string& path) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp);
        require(out.good(), "cannot write config: " + path);
        out << "lambda=" << format_double(cfg.lambda) << "\n";
        out << "beta=" << format_double(cfg.beta) << "\n";
        out << "loss=" << cfg.loss << "\n";
        out << "ncc_patch=" << cfg.ncc_patch << "\n";
        out << "variant=" << variant_name(cfg.variant) << "\n";
        if (!cfg.mask.empty()) out << "mask=" << cfg.mask << "\n";
        out << "epochs=" << cfg.epochs << "\n";
        out << "batch_pairs=" << cfg.batch_pairs << "\n";
        out << "learning_rate=" << format_double(cfg.learning_rate) << "\n";
        out << "adam_beta1=" << format_double(cfg.adam_beta1) << "\n";
        out << "adam_beta2=" << format_double(cfg.adam_beta2) << "\n";
        out << "adam_eps=" << format_double(cfg.adam_eps) << "\n";
        out << "pair_strategy="
            << (cfg.pair_strategy == PairStrategy::AllPairs ? "all_pairs"
                                                            : "random_k")
            << "\n";
        out << "pair_cap=" << cfg.pair_cap << "\n";
        out << "seed=" << cfg.seed << "\n";
        out << "early_stop_patience=" << cfg.early_stop_patience << "\n";
        out << "landmarks=" << cfg.landmarks << "\n";
        out << "anchors=" << cfg.anchors << "\n";
        out << "image_size=" << cfg.image_size << "\n";
        out << "convs_per_block=" << join_ints(cfg.convs_per_block) << "\n";
        out << "channels=" << join_ints(cfg.channels) << "\n";
        out << "init=" << cfg.init << "\n";
        require(out.good(), "config write failure: " + path);
    }
    std::filesystem::rename(tmp, path);
}

// ---------------------------------------------------------------------------
// pairs

std::vector<PairRecord> make_pairs(const std::vector<int>& ids,
                                   PairStrategy strategy, uint64_t seed,
                                   int k) {
    require(ids.size() >= 2, "need at least 2 ids to form pairs");
    std::vector<PairRecord> all;
    all.reserve(ids.size() * (ids.size() - 1));
    for (int i : ids)
        for (int j : ids)
            if (i != j) all.push_back({i, j});
    if (strategy == PairStrategy::AllPairs) return all;
    require(k >= 1, "random_k needs a positive pair count");
    require(size_t(k) <= all.size(),
            "requested " + std::to_string(k) + " pairs but only " +
                std::to_string(all.size()) + " exist");
    Rng rng(seed);
    // partial Fisher-Yates: the first k slots become the sample
    for (int i = 0; i < k; ++i) {
        const size_t j = i + rng.uniform_int(all.size() - i);
        std::swap(all[size_t(i)], all[j]);
    }
    all.resize(size_t(k));
    return all;
}

// ---------------------------------------------------------------------------
// training

namespace {

struct Adam {
    double lr, b1, b2, eps;
    std::vector<double> m, v;
    long t = 0;

    Adam(double lr, double b1, double b2, double eps, size_t n)
        : lr(lr), b1(b1), b2(b2), eps(eps), m(n, 0.0), v(n, 0.0) {}

    void step(std::vector<double>& params, const std::vector<double>& grad) {
        ++t;
        const double bc1 = 1.0 - std::pow(b1, double(t));
        const double bc2 = 1.0 - std::pow(b2, double(t));
        for (size_t i = 0; i < params.size(); ++i) {
            m[i] = b1 * m[i] + (1.0 - b1) * grad[i];
            v[i] = b2 * v[i] + (1.0 - b2) * grad[i] * grad[i];
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            params[i] -= lr * mhat / (std::sqrt(vhat) + eps);
        }
    }
};

LandmarkSet grid_landmarks(int m, int extent) {
    const int g = int(std::ceil(std::sqrt(double(m))));
    const double lo = 0.15 * (extent - 1), hi = 0.85 * (extent - 1);
    LandmarkSet lms;
    for (int i = 0; i < m; ++i) {
        const int gy = i / g, gx = i % g;
        const double fx = g > 1 ? double(gx) / (g - 1) : 0.5;
        const double fy = g > 1 ? double(gy) / (g - 1) : 0.5;
        lms.points.push_back({lo + fx * (hi - lo), lo + fy * (hi - lo)});
    }
    return lms;
}

double mean_val_match(const Dataset& ds, const std::vector<PairRecord>& pairs,
                      const std::vector<LandmarkSet>& lms_cache,
                      const RegistrationConfig& rc) {
    double acc = 0.0;
    for (const auto& p : pairs) {
        const auto ev = evaluate_pair(lms_cache[size_t(p.source)],
                                      lms_cache[size_t(p.target)],
                                      ds.entries[size_t(p.source)].image,
                                      ds.entries[size_t(p.target)].image, rc);
        acc += ev.match;
    }
    return pairs.empty() ? 0.0 : acc / double(pairs.size());
}

}  // namespace

EncoderParams make_initial_params(const TrainConfig& cfg) {
    if (cfg.init == "grid") {
        return init_params(cfg.seed, cfg.arch(),
                           grid_landmarks(cfg.landmarks, cfg.image_size));
    }
    require(cfg.init == "random", "init must be 'random' or 'grid'");
    return init_params(cfg.seed, cfg.arch());
}

TrainResult train(const TrainConfig& cfg, const Dataset& ds,
                  const std::vector<int>& train_ids,
                  const std::vector<int>& val_ids, const EncoderParams& init) {
    cfg.validate();
    require(train_ids.size() >= 2, "train split needs at least 2 images");
    require(!val_ids.empty(), "validation split is empty");
    const RegistrationConfig rc = cfg.registration(ds);

    std::vector<PairRecord> train_pairs =
        make_pairs(train_ids, cfg.pair_strategy, cfg.seed, cfg.pair_cap);
    // validation uses all ordered pairs, capped at 200 for large splits
    std::vector<PairRecord> val_pairs =
        make_pairs(val_ids, PairStrategy::AllPairs, 0);
    if (val_pairs.size() > 200) {
        Rng vr = Rng(cfg.seed).split(0x5a11);
        for (int i = 0; i < 200; ++i) {
            const size_t j = i + vr.uniform_int(val_pairs.size() - i);
            std::swap(val_pairs[size_t(i)], val_pairs[j]);
        }
        val_pairs.resize(200);
    }

    EncoderParams params = init;
    const ArchDescriptor arch = cfg.arch();
    Adam adam(cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps,
              params.values.size());

    TrainResult result;
    result.best_val_loss = std::numeric_limits<double>::infinity();
    const auto t_start = std::chrono::steady_clock::now();

    const int m = cfg.landmarks;
    std::vector<LandmarkSet> lms_cache(ds.entries.size());

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng erng = Rng(cfg.seed).split(0xe90c + uint64_t(epoch));
        std::vector<PairRecord> order = train_pairs;
        erng.shuffle(order);

        double epoch_loss = 0.0, epoch_kappa = 0.0;
        long seen = 0;

        for (size_t b0 = 0; b0 < order.size(); b0 += size_t(cfg.batch_pairs)) {
            const size_t b1 = std::min(order.size(), b0 + size_t(cfg.batch_pairs));
            const int n_batch = int(b1 - b0);
            const int batch_idx = int(b0 / size_t(cfg.batch_pairs));

            // distinct images of this batch, in first-appearance order
            std::vector<int> imgs;
            std::vector<int> slot(ds.entries.size(), -1);
            for (size_t p = b0; p < b1; ++p) {
                for (int idx : {order[p].source, order[p].target}) {
                    if (slot[size_t(idx)] < 0) {
                        slot[size_t(idx)] = int(imgs.size());
                        imgs.push_back(idx);
                    }
                }
            }

            // pass 1: encode each distinct image once
            std::vector<LandmarkSet> lms(imgs.size());
            for (size_t i = 0; i < imgs.size(); ++i)
                lms[i] = encode(params, ds.entries[size_t(imgs[i])].image);

            // pass 2: registration graphs; accumulate landmark adjoints
            std::vector<Tensor> adj(imgs.size(), Tensor({m, 2}));
            const double inv_batch = 1.0 / double(n_batch);
            for (size_t p = b0; p < b1; ++p) {
                const auto& pr = order[p];
                const auto& es = ds.entries[size_t(pr.source)];
                const auto& et = ds.entries[size_t(pr.target)];
                const Image* seg_s = nullptr;
                const Image* seg_t = nullptr;
                if (cfg.variant == Variant::Weak && es.seg.has_value() &&
                    et.seg.has_value()) {
                    seg_s = &*es.seg;
                    seg_t = &*et.seg;
                }
                try {
                    PairTape pt = build_pair_tape(
                        lms[size_t(slot[size_t(pr.source)])],
                        lms[size_t(slot[size_t(pr.target)])], es.image,
                        et.image, rc, seg_s, seg_t);
                    pt.tape.backward(pt.loss);
                    epoch_loss += pt.tape.value(pt.loss).value();
                    epoch_kappa += pt.tape.value(pt.kappa).value();
                    ++seen;
                    auto& as = adj[size_t(slot[size_t(pr.source)])];
                    const auto& gs = pt.tape.grad(pt.src_lms);
                    for (size_t i = 0; i < as.data.size(); ++i)
                        as.data[i] += inv_batch * gs.data[i];
                    auto& at = adj[size_t(slot[size_t(pr.target)])];
                    const auto& gt = pt.tape.grad(pt.tgt_lms);
                    for (size_t i = 0; i < at.data.size(); ++i)
                        at.data[i] += inv_batch * gt.data[i];
                } catch (const SolverError& e) {
                    throw TrainAbort(
                        "solver failure at epoch " + std::to_string(epoch) +
                            ", batch " + std::to_string(batch_idx) + ", pair " +
                            es.id + " -> " + et.id + ": " + e.what(),
                        epoch, batch_idx, es.id, et.id);
                }
            }

            // pass 3: push landmark adjoints through each encoder once
            std::vector<double> batch_grad(params.values.size(), 0.0);
            for (size_t i = 0; i < imgs.size(); ++i) {
                Tape tape;
                const auto emit =
                    emit_encoder(tape, params, ds.entries[size_t(imgs[i])].image);
                tape.backward_with_grad(emit.landmarks, adj[i]);
                accumulate_param_grads(tape, emit.param_leaves, arch, batch_grad);
            }
            adam.step(params.values, batch_grad);
        }

        // validation with the epoch-end parameters
        for (int idx : val_ids)
            lms_cache[size_t(idx)] = encode(params, ds.entries[size_t(idx)].image);
        double val_loss;
        try {
            val_loss = mean_val_match(ds, val_pairs, lms_cache, rc);
        } catch (const SolverError& e) {
            throw TrainAbort("solver failure during validation at epoch " +
                                 std::to_string(epoch) + ": " + e.what(),
                             epoch, -1, "", "");
        }

        HistoryRow row;
        row.epoch = epoch;
        row.train_loss = seen > 0 ? epoch_loss / double(seen) : 0.0;
        row.val_match_loss = val_loss;
        row.mean_kappa = seen > 0 ? epoch_kappa / double(seen) : 0.0;
        row.wall_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                          t_start)
                .count();
        result.history.push_back(row);

        if (val_loss < result.best_val_loss) {
            result.best_val_loss = val_loss;
            result.best_epoch = epoch;
            result.best_params = params;
        }
        if (cfg.early_stop_patience > 0 &&
            epoch - result.best_epoch >= cfg.early_stop_patience)
            break;
    }

    result.final_params = params;
    if (result.best_epoch < 0) {
        result.best_params = params;
        result.best_epoch = int(result.history.size()) - 1;
    }
    return result;
}

TrainResult train(const TrainConfig& cfg, const Dataset& ds,
                  const EncoderParams& init) {
    return train(cfg, ds, ds.split_indices("train"), ds.split_indices("val"),
                 init);
}

// ---------------------------------------------------------------------------
// lambda sweep

std::vector<SweepCell> lambda_sweep(const TrainConfig& cfg, const Dataset& ds,
                                    const std::vector<double>& lambdas,
                                    int folds) {
    require(folds >= 2, "cross-validation needs at least 2 folds");
    require(!lambdas.empty(), "no lambda values given");
    std::vector<int> pool = ds.split_indices("train");
    for (int i : ds.split_indices("val")) pool.push_back(i);
    require(int(pool.size()) >= 2 * folds,
            "not enough images for " + std::to_string(folds) + " folds");
    Rng fr = Rng(cfg.seed).split(0xf01d);
    fr.shuffle(pool);

    std::vector<SweepCell> cells;
    for (double lam : lambdas) {
        for (int f = 0; f < folds; ++f) {
            std::vector<int> val_ids, train_ids;
            for (size_t i = 0; i < pool.size(); ++i)
                (int(i % size_t(folds)) == f ? val_ids : train_ids)
                    .push_back(pool[i]);
            TrainConfig run_cfg = cfg;
            run_cfg.lambda = lam;
            SweepCell cell;
            cell.lambda = lam;
            cell.fold = f;
            try {
                const auto res =
                    train(run_cfg, ds, train_ids, val_ids,
                          make_initial_params(run_cfg));
                cell.val_match_loss = res.best_val_loss;
                cell.status = "ok";
            } catch (const TrainAbort& e) {
                cell.val_match_loss = std::numeric_limits<double>::quiet_NaN();
                cell.status = "solver_failure";
            }
            cells.push_back(cell);
        }
    }
    std::stable_sort(cells.begin(), cells.end(),
                     [](const SweepCell& a, const SweepCell& b) {
                         if (a.lambda != b.lambda) return a.lambda < b.lambda;
                         return a.fold < b.fold;
                     });
    return cells;
}

// ---------------------------------------------------------------------------
// CSV writers

void write_history_csv(const std::vector<HistoryRow>& rows,
                       const std::string& path) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp);
        require(out.good(), "cannot write history csv: " + path);
        out << "epoch,train_loss,val_match_loss,mean_kappa,wall_seconds\n";
        for (const auto& r : rows)
            out << r.epoch << ',' << format_double(r.train_loss) << ','
                << format_double(r.val_match_loss) << ','
                << format_double(r.mean_kappa) << ','
                << format_double(r.wall_seconds) << '\n';
        require(out.good(), "history write failure: " + path);
    }
    std::filesystem::rename(tmp, path);
}

void write_sweep_csv(const std::vector<SweepCell>& cells,
                     const std::string& path) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp);
        require(out.good(), "cannot write sweep csv: " + path);
        out << "lambda,fold,val_match_loss,status\n";
        for (const auto& c : cells)
            out << format_double(c.lambda) << ',' << c.fold << ','
                << format_double(c.val_match_loss) << ',' << c.status << '\n';
        require(out.good(), "sweep write failure: " + path);
    }
    std::filesystem::rename(tmp, path);
}

}  // namespace lmk
