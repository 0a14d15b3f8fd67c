#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "gridse/grid.hpp"
#include "gridse/matrix.hpp"
#include "gridse/optim.hpp"
#include "gridse/rng.hpp"
#include "gridse/tensor.hpp"

namespace gridse::nn {

// ---------------------------------------------------------------------------
// Model specification
// ---------------------------------------------------------------------------

enum class ModelKind {
    GCN,
    GAT,
    JKConcat,
    JKMax,
    JKLstm,
    JKTrans,
    MLP,
    LR,
    BusbarMean,
};

std::string_view to_string(ModelKind kind);
std::optional<ModelKind> model_kind_from_string(std::string_view name);

/// Message-passing kinds (everything but the flat baselines).
bool is_gnn(ModelKind kind);
bool is_jk(ModelKind kind);
/// Kinds whose encoder stack is GAT layers (GAT itself and all JK variants).
bool uses_gat_encoder(ModelKind kind);

struct ModelSpec {
    ModelKind kind = ModelKind::GAT;
    int num_layers = 2;   ///< K; ignored by baselines
    int hidden = 32;      ///< d_k
    int heads = 1;        ///< GAT-based kinds only
    double dropout = 0.0;

    std::string name() const;  ///< e.g. "jk-trans-K8-h32"
};

/// Throws std::invalid_argument when the spec is out of domain
/// (K outside [2,13] for GNN kinds, heads not in {1,2}, ...).
void validate(const ModelSpec& spec);

nlohmann::ordered_json spec_to_json(const ModelSpec& spec);
ModelSpec spec_from_json(const nlohmann::json& doc);

// ---------------------------------------------------------------------------
// Graph structure compiled for message passing
// ---------------------------------------------------------------------------

/// Directed edge list (both directions of every undirected edge plus one
/// self-loop per vertex), sorted by destination so segment reductions see
/// contiguous neighbourhoods.
struct GraphStructure {
    std::size_t n = 0;
    std::vector<std::size_t> src;
    std::vector<std::size_t> dst;
    std::vector<std::size_t> busbars;

    static GraphStructure build(const PowerGrid& grid);
};

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

struct Param {
    std::string name;
    std::size_t rows = 0, cols = 0;
    std::vector<double> value;
    ad::AdamState opt;
};

/// Named parameter tensors of one model, in creation order.
class ParamStore {
public:
    Param& create(const std::string& name, std::size_t rows, std::size_t cols,
                  std::vector<double> values);
    /// Glorot-uniform initialized matrix.
    Param& create_glorot(const std::string& name, std::size_t rows, std::size_t cols, Rng& rng);
    Param& create_zeros(const std::string& name, std::size_t rows, std::size_t cols);
    Param& create_full(const std::string& name, std::size_t rows, std::size_t cols, double fill);

    Param* find(const std::string& name);
    std::vector<Param>& params() noexcept { return params_; }
    const std::vector<Param>& params() const noexcept { return params_; }
    std::size_t total_size() const;

private:
    std::vector<Param> params_;
};

nlohmann::ordered_json params_to_json(const ParamStore& store);
void params_from_json(ParamStore& store, const nlohmann::json& doc);

// ---------------------------------------------------------------------------
// Layer-level operations (unit-testable with explicit weights)
// ---------------------------------------------------------------------------

/// sigma(mean over N(v) + self of H_u W + b); sigma = ELU unless activate is
/// false. Self-loops come from the GraphStructure.
ad::Tensor gcn_layer(ad::Tape& tape, const ad::Tensor& h, const GraphStructure& graph,
                     const ad::Tensor& w, const ad::Tensor& bias, bool activate = true);

struct GatHeadParams {
    ad::Tensor w;      ///< d_in x d_head
    ad::Tensor a_src;  ///< d_head x 1 attention vector, source half
    ad::Tensor a_dst;  ///< d_head x 1 attention vector, destination half
};

struct GatLayerParams {
    std::vector<GatHeadParams> heads;
    ad::Tensor bias;            ///< 1 x output width
    bool average_heads = false; ///< concat heads when false (hidden layers)
    double leaky_slope = 0.2;
};

/// Attention layer: per-edge scores LeakyReLU(a^T [W h_u || W h_v]),
/// softmax-normalized over each destination neighbourhood (self-loop
/// included), attention-weighted sum of transformed sources, ELU.
/// When alphas_out is given it receives one E x 1 attention column per head.
ad::Tensor gat_layer(ad::Tape& tape, const ad::Tensor& h, const GraphStructure& graph,
                     const GatLayerParams& params, bool activate = true,
                     std::vector<ad::Tensor>* alphas_out = nullptr);

/// Concatenation and max-pooling layer aggregation over per-layer embeddings.
ad::Tensor jk_concat(ad::Tape& tape, const std::vector<ad::Tensor>& layers);
ad::Tensor jk_max(ad::Tape& tape, const std::vector<ad::Tensor>& layers);

struct LstmCellParams {
    ad::Tensor wx;  ///< d_in x 4h (i, f, g, o gate blocks)
    ad::Tensor wh;  ///< h x 4h
    ad::Tensor b;   ///< 1 x 4h
};

struct JkLstmParams {
    LstmCellParams forward_cell;
    LstmCellParams backward_cell;
    ad::Tensor attention;  ///< 2h x 1 scoring vector over [h_fwd || h_bwd]
};

/// Bi-directional LSTM over the K-layer sequence; per-step scores softmax to
/// per-node attention over layers; output is the attention-weighted sum of
/// the original layer embeddings. alphas_out receives the n x K attention.
ad::Tensor jk_lstm(ad::Tape& tape, const std::vector<ad::Tensor>& layers, const JkLstmParams& params,
                   ad::Tensor* alphas_out = nullptr);

struct JkTransParams {
    ad::Tensor wq, wk, wv;        ///< d x d token projections
    ad::Tensor ln1_gain, ln1_bias;  ///< 1 x d
    ad::Tensor ln2_gain, ln2_bias;
    ad::Tensor ff1, ff1_bias;     ///< d x ff, 1 x ff
    ad::Tensor ff2, ff2_bias;     ///< ff x d, 1 x d
};

/// Treats the K per-layer embeddings as a length-K token sequence, applies
/// scaled dot-product self-attention with shared per-token projections,
/// add-and-normalize, a position-wise feed-forward block, and returns the
/// last token's output. attention_out receives K tensors of shape n x K
/// (attention row of each query token).
ad::Tensor jk_transformer(ad::Tape& tape, const std::vector<ad::Tensor>& layers,
                          const JkTransParams& params,
                          std::vector<ad::Tensor>* attention_out = nullptr);

// ---------------------------------------------------------------------------
// Loss and metrics
// ---------------------------------------------------------------------------

struct LossMetrics {
    double mse = 0.0;
    double mae = 0.0;
};

/// Per-snapshot mean squared / absolute deviation. Throws on empty or
/// mismatched inputs.
LossMetrics loss_and_metrics(std::span<const double> preds, std::span<const double> labels);

/// Differentiable MSE over busbars for training.
ad::Tensor mse_loss(ad::Tape& tape, const ad::Tensor& preds, const ad::Tensor& labels);

// ---------------------------------------------------------------------------
// Trainable models
// ---------------------------------------------------------------------------

/// Input of one forward pass. GNN kinds consume graph + node_features; the
/// MLP consumes the flattened vector.
struct ModelInput {
    const GraphStructure* graph = nullptr;
    const Matrix* node_features = nullptr;       ///< n x d0
    const std::vector<double>* flat = nullptr;   ///< flattened z_t || C
};

class TrainableModel {
public:
    using Binding = std::pair<Param*, ad::Tensor>;

    virtual ~TrainableModel() = default;
    /// Predictions in scaled-label space, n_busbars x 1. In eval mode
    /// (training == false) nothing is recorded on the tape and dropout is
    /// inactive.
    virtual ad::Tensor forward(ad::Tape& tape, const ModelInput& input, bool training,
                               Rng* dropout_rng) = 0;
    virtual ParamStore& params() = 0;
    const ParamStore& params() const { return const_cast<TrainableModel*>(this)->params(); }

    /// (parameter, leaf tensor) pairs of the most recent training-mode
    /// forward; the trainer reads gradients through these.
    const std::vector<Binding>& bindings() const noexcept { return bindings_; }

protected:
    /// Tracked leaf in training mode, plain constant in eval mode.
    ad::Tensor bind(ad::Tape& tape, Param& param, bool track);
    std::vector<Binding> bindings_;
};

/// Stacked message-passing model (GCN / GAT / JK variants) with a linear
/// output head over busbar embeddings. Parameter shapes depend only on the
/// input width, never on the topology.
class GnnModel : public TrainableModel {
public:
    GnnModel(const ModelSpec& spec, std::size_t input_width, std::uint64_t seed);

    ad::Tensor forward(ad::Tape& tape, const ModelInput& input, bool training,
                       Rng* dropout_rng) override;
    ParamStore& params() override { return store_; }
    const ModelSpec& spec() const noexcept { return spec_; }

private:
    ModelSpec spec_;
    std::size_t input_width_;
    ParamStore store_;
};

/// Two-layer perceptron on the flattened snapshot vector; the second layer
/// is shared across busbar outputs.
class MlpModel : public TrainableModel {
public:
    MlpModel(const ModelSpec& spec, std::size_t flat_width, std::size_t n_busbars,
             std::uint64_t seed);

    ad::Tensor forward(ad::Tape& tape, const ModelInput& input, bool training,
                       Rng* dropout_rng) override;
    ParamStore& params() override { return store_; }

private:
    ModelSpec spec_;
    std::size_t flat_width_;
    std::size_t n_busbars_;
    ParamStore store_;
};

std::unique_ptr<TrainableModel> make_trainable_model(const ModelSpec& spec, std::size_t input_width,
                                                     std::size_t flat_width, std::size_t n_busbars,
                                                     std::uint64_t seed);

// ---------------------------------------------------------------------------
// Closed-form baselines
// ---------------------------------------------------------------------------

/// Multi-output ridge regression (Tikhonov damping), solved in closed form;
/// uses the kernel (dual) formulation when samples < features.
class RidgeRegression {
public:
    static RidgeRegression fit(const Matrix& x, const Matrix& y, double lambda = 1e-8);
    std::vector<double> predict(std::span<const double> x) const;
    std::size_t num_outputs() const noexcept { return intercept_.size(); }

private:
    Matrix coef_;  // D x n_out
    std::vector<double> intercept_;
};

/// Per-busbar training mean (load-profile split) or pooled global mean
/// (topology split).
class MeanPredictor {
public:
    /// labels: snapshots x busbars.
    static MeanPredictor fit(const Matrix& labels, bool global);
    std::vector<double> predict(std::size_t n_busbars) const;
    bool is_global() const noexcept { return global_; }

private:
    bool global_ = false;
    double global_mean_ = 0.0;
    std::vector<double> per_busbar_;
};

}  // namespace gridse::nn
