#pragma once

// Common surface for the three predictors. The evaluation protocol drives
// models through three entry points: next-step predictions over a training
// subsequence, a single prediction given (possibly filled) earlier responses,
// and frozen-state predictions for a whole test suffix.

#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "kt/data.hpp"
#include "kt/errors.hpp"
#include "kt/rng.hpp"
#include "kt/tensor.hpp"

namespace kt {

enum class ModelKind { bkt, dkt, akt };

inline const char* to_string(ModelKind k) {
    switch (k) {
        case ModelKind::bkt: return "bkt";
        case ModelKind::dkt: return "dkt";
        case ModelKind::akt: return "akt";
    }
    return "?";
}

inline ModelKind model_kind_from_string(const std::string& s) {
    if (s == "bkt") return ModelKind::bkt;
    if (s == "dkt") return ModelKind::dkt;
    if (s == "akt") return ModelKind::akt;
    fail(ErrorKind::config, "unknown model kind '" + s + "'");
}

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

class StudentModel {
public:
    virtual ~StudentModel() = default;
    virtual ModelKind kind() const = 0;

    // Next-response probabilities over the real positions of a (sub)sequence.
    // positions[i] is the sequence index scored by probs[i]; only positions
    // with selectmask 1 are emitted.
    virtual void predict_sequence(const InteractionSequence& seq,
                                  std::vector<std::size_t>& positions,
                                  std::vector<double>& probs) const = 0;

    // P(correct at position t) given responses[0..t). The responses vector
    // carries the known prefix plus any filled-in values; entries may be
    // fractional when probability feedback is enabled.
    virtual double predict_at(const InteractionSequence& seq,
                              const std::vector<double>& responses, std::size_t t) const = 0;

    // Non-accumulative protocol: state is computed from the known prefix
    // only; returns one probability per suffix position, in order.
    virtual std::vector<double> predict_suffix_frozen(const InteractionSequence& seq,
                                                      std::size_t prefix_len) const = 0;

    virtual nlohmann::json checkpoint() const = 0;
};

// Gradient-trainable models (DKT, AKT).
class TrainableModel : public StudentModel {
public:
    virtual std::vector<NamedTensor> parameters() = 0;

    // Sum of per-position BCE terms over the selected positions of one
    // sequence; n_terms reports how many terms contributed. The caller scales
    // by the pooled count before backward.
    virtual Tensor sequence_loss_sum(const InteractionSequence& seq, std::size_t& n_terms,
                                     Rng* dropout_rng) = 0;

    // Optional penalty added once per batch; undefined tensor means none.
    virtual Tensor regularizer() { return Tensor(); }

    virtual void init_params(Rng& rng) = 0;
};

// ---------------------------------------------------------------------
//  Checkpoint primitives (JSON; doubles round-trip exactly)
// ---------------------------------------------------------------------

inline constexpr int kCheckpointVersion = 1;

inline nlohmann::json tensor_to_json(const Tensor& t) {
    return {{"shape", t.shape()},
            {"data", std::vector<double>(t.data().begin(), t.data().end())}};
}

inline Tensor tensor_from_json(const nlohmann::json& j, bool requires_grad = true) {
    auto shape = j.at("shape").get<std::vector<std::size_t>>();
    auto data = j.at("data").get<std::vector<double>>();
    return Tensor::from(std::move(shape), std::move(data), requires_grad);
}

inline void load_named_tensors(const nlohmann::json& j, std::vector<NamedTensor> params) {
    for (auto& [name, tensor] : params) {
        if (!j.contains(name)) fail(ErrorKind::schema, "checkpoint missing tensor '" + name + "'");
        Tensor loaded = tensor_from_json(j.at(name));
        if (loaded.shape() != tensor.shape()) {
            fail(ErrorKind::schema, "checkpoint tensor '" + name + "' has shape " +
                                        detail::shape_str(loaded.shape()) + ", expected " +
                                        detail::shape_str(tensor.shape()));
        }
        std::copy(loaded.data().begin(), loaded.data().end(), tensor.data().begin());
    }
}

inline nlohmann::json named_tensors_to_json(const std::vector<NamedTensor>& params) {
    nlohmann::json out;
    for (const auto& [name, tensor] : params) out[name] = tensor_to_json(tensor);
    return out;
}

}  // namespace kt
