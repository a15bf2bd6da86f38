#pragma once

// Optimization harness: k-fold selection, Adam with global-norm clipping,
// early stopping on validation AUC.
//
// One seeded stream per run drives, in order: parameter initialization, then
// per-epoch shuffling and dropout draws (shuffle first, then batches in
// shuffled order). Identical config and data reproduce identical loss and
// AUC trajectories.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "kt/data.hpp"
#include "kt/errors.hpp"
#include "kt/evaluation.hpp"
#include "kt/model.hpp"
#include "kt/rng.hpp"

namespace kt::train {

struct TrainConfig {
    double lr = 1e-3;
    std::size_t batch_size = 32;
    std::size_t max_epochs = 50;
    std::size_t patience = 5;
    double clip_norm = 5.0;
    std::uint64_t seed = 0;
    int fold = 0;
    ModelKind kind = ModelKind::dkt;

    void validate() const {
        if (lr <= 0.0) fail(ErrorKind::config, "learning rate must be positive");
        if (batch_size < 1) fail(ErrorKind::config, "batch size must be at least 1");
        if (patience < 1) fail(ErrorKind::config, "patience must be at least 1");
        if (max_epochs < 1) fail(ErrorKind::config, "max epochs must be at least 1");
        if (fold < 0 || fold > 4) {
            fail(ErrorKind::config, "fold " + std::to_string(fold) + " outside 0..4");
        }
    }
};

struct EpochRecord {
    double train_loss = 0.0;
    double val_auc = 0.0;
    double seconds = 0.0;
};

struct RunRecord {
    std::vector<EpochRecord> epochs;
    std::size_t best_epoch = 0;  // 0-based index into epochs
    double best_val_auc = 0.0;
    std::uint64_t seed = 0;

    nlohmann::json to_json() const {
        nlohmann::json es = nlohmann::json::array();
        for (const auto& e : epochs) {
            es.push_back({{"train_loss", e.train_loss},
                          {"val_auc", e.val_auc},
                          {"seconds", e.seconds}});
        }
        return {{"epochs", es},
                {"best_epoch", best_epoch},
                {"best_val_auc", best_val_auc},
                {"seed", seed}};
    }
};

// validation = sequences with the matching fold; train = the rest.
inline std::pair<std::vector<InteractionSequence>, std::vector<InteractionSequence>> kfold_split(
    const std::vector<InteractionSequence>& seqs, int fold) {
    if (fold < 0 || fold > 4) {
        fail(ErrorKind::config, "fold " + std::to_string(fold) + " outside 0..4");
    }
    std::vector<InteractionSequence> train, valid;
    for (const auto& s : seqs) {
        if (s.fold < 0) fail(ErrorKind::config, "sequence without a fold label");
        (s.fold == fold ? valid : train).push_back(s);
    }
    return {std::move(train), std::move(valid)};
}

// ---------------------------------------------------------------------
//  Adam
// ---------------------------------------------------------------------

struct AdamState {
    std::vector<std::vector<double>> m, v;
    std::size_t step = 0;

    explicit AdamState(const std::vector<NamedTensor>& params) {
        for (const auto& p : params) {
            m.emplace_back(p.tensor.size(), 0.0);
            v.emplace_back(p.tensor.size(), 0.0);
        }
    }
};

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEps = 1e-8;

// Global-norm clip (pure rescale, never a direction change) followed by the
// standard bias-corrected update.
inline void adam_step(std::vector<NamedTensor>& params, AdamState& state, double lr,
                      double clip_norm) {
    if (state.m.size() != params.size()) {
        fail(ErrorKind::contract, "Adam state does not match the parameter list");
    }
    double sq = 0.0;
    for (auto& p : params) {
        for (double g : p.tensor.grad()) {
            if (!std::isfinite(g)) {
                fail(ErrorKind::numeric, "non-finite gradient in parameter group '" + p.name + "'");
            }
            sq += g * g;
        }
    }
    const double norm = std::sqrt(sq);
    const double factor = (clip_norm > 0.0 && norm > clip_norm) ? clip_norm / norm : 1.0;

    ++state.step;
    const double bc1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto data = params[i].tensor.data();
        auto grad = params[i].tensor.grad();
        auto& m = state.m[i];
        auto& v = state.v[i];
        for (std::size_t j = 0; j < data.size(); ++j) {
            const double g = grad[j] * factor;
            m[j] = kAdamBeta1 * m[j] + (1.0 - kAdamBeta1) * g;
            v[j] = kAdamBeta2 * v[j] + (1.0 - kAdamBeta2) * g * g;
            const double mhat = m[j] / bc1;
            const double vhat = v[j] / bc2;
            data[j] -= lr * mhat / (std::sqrt(vhat) + kAdamEps);
        }
    }
}

// ---------------------------------------------------------------------
//  Training loop
// ---------------------------------------------------------------------

namespace detail_train {

inline std::vector<std::vector<double>> snapshot(const std::vector<NamedTensor>& params) {
    std::vector<std::vector<double>> out;
    for (const auto& p : params) out.emplace_back(p.tensor.data().begin(), p.tensor.data().end());
    return out;
}

inline void restore(std::vector<NamedTensor>& params,
                    const std::vector<std::vector<double>>& snap) {
    for (std::size_t i = 0; i < params.size(); ++i) {
        std::copy(snap[i].begin(), snap[i].end(), params[i].tensor.data().begin());
    }
}

}  // namespace detail_train

// Trains in place, leaves the model at its best-validation-AUC parameters,
// and returns the per-epoch record. One progress line per epoch when a
// stream is given.
inline RunRecord train_model(TrainableModel& model,
                             const std::vector<InteractionSequence>& train_set,
                             const std::vector<InteractionSequence>& valid_set,
                             const TrainConfig& cfg, std::ostream* progress = nullptr) {
    cfg.validate();
    if (train_set.empty() || valid_set.empty()) {
        fail(ErrorKind::config, "training and validation sets must be nonempty");
    }

    Rng rng(cfg.seed);
    model.init_params(rng);
    auto params = model.parameters();
    AdamState adam(params);

    RunRecord record;
    record.seed = cfg.seed;
    double best_auc = -1.0;
    std::vector<std::vector<double>> best_snapshot;
    std::size_t epochs_without_gain = 0;

    std::vector<std::size_t> order(train_set.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        rng.shuffle(order);
        double epoch_loss_sum = 0.0;
        std::size_t epoch_terms = 0;

        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            for (auto& p : params) p.tensor.zero_grad();

            std::size_t batch_terms = 0;
            for (std::size_t b = start; b < end; ++b) {
                const auto& seq = train_set[order[b]];
                Tape tape;
                std::size_t n = 0;
                Tensor loss_sum = model.sequence_loss_sum(seq, n, &rng);
                if (n == 0) continue;
                tape.backward(loss_sum);
                batch_terms += n;
                epoch_loss_sum += loss_sum.value();
            }
            if (batch_terms == 0) {
                fail(ErrorKind::no_signal, "batch with every position masked out");
            }
            epoch_terms += batch_terms;
            const double inv = 1.0 / static_cast<double>(batch_terms);
            for (auto& p : params) {
                for (double& g : p.tensor.grad()) g *= inv;
            }
            {
                Tape tape;
                Tensor reg = model.regularizer();
                if (reg.defined()) tape.backward(reg);
            }
            adam_step(params, adam, cfg.lr, cfg.clip_norm);
        }

        const auto val = eval::evaluate_validation(model, valid_set);
        const auto t1 = std::chrono::steady_clock::now();

        EpochRecord er;
        er.train_loss = epoch_loss_sum / static_cast<double>(epoch_terms);
        er.val_auc = val.auc_value;
        er.seconds = std::chrono::duration<double>(t1 - t0).count();
        record.epochs.push_back(er);
        if (progress) {
            (*progress) << "epoch " << (epoch + 1) << " train_loss " << er.train_loss
                        << " val_auc " << er.val_auc << "\n";
        }

        if (er.val_auc > best_auc) {
            best_auc = er.val_auc;
            record.best_epoch = record.epochs.size() - 1;
            best_snapshot = detail_train::snapshot(params);
            epochs_without_gain = 0;
        } else {
            ++epochs_without_gain;
            if (epochs_without_gain >= cfg.patience) break;
        }
    }

    record.best_val_auc = best_auc;
    if (!best_snapshot.empty()) detail_train::restore(params, best_snapshot);
    return record;
}

}  // namespace kt::train
