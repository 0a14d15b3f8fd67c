#include "gridse/models.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace gridse::nn {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }

constexpr double kLeakySlope = 0.2;

}  // namespace

// ---------------------------------------------------------------------------
// ModelKind / ModelSpec
// ---------------------------------------------------------------------------

namespace {
constexpr std::array<std::string_view, 9> kKindNames = {
    "gcn", "gat", "jk-concat", "jk-max", "jk-lstm", "jk-trans", "mlp", "lr", "busbar-mean"};
}

std::string_view to_string(ModelKind kind) { return kKindNames[static_cast<std::size_t>(kind)]; }

std::optional<ModelKind> model_kind_from_string(std::string_view name) {
    for (std::size_t i = 0; i < kKindNames.size(); ++i)
        if (kKindNames[i] == name) return static_cast<ModelKind>(i);
    return std::nullopt;
}

bool is_gnn(ModelKind kind) {
    switch (kind) {
        case ModelKind::GCN:
        case ModelKind::GAT:
        case ModelKind::JKConcat:
        case ModelKind::JKMax:
        case ModelKind::JKLstm:
        case ModelKind::JKTrans:
            return true;
        default:
            return false;
    }
}

bool is_jk(ModelKind kind) {
    return kind == ModelKind::JKConcat || kind == ModelKind::JKMax || kind == ModelKind::JKLstm ||
           kind == ModelKind::JKTrans;
}

bool uses_gat_encoder(ModelKind kind) { return is_gnn(kind) && kind != ModelKind::GCN; }

namespace {
bool kind_requires_hidden(ModelKind kind) { return is_gnn(kind) || kind == ModelKind::MLP; }
}  // namespace

std::string ModelSpec::name() const {
    std::string out{to_string(kind)};
    if (!is_gnn(kind) && kind != ModelKind::MLP) return out;
    if (is_gnn(kind)) out += "-K" + std::to_string(num_layers);
    out += "-h" + std::to_string(hidden);
    if (uses_gat_encoder(kind) && heads > 1) out += "-a" + std::to_string(heads);
    if (dropout > 0.0) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "-p%g", dropout);
        out += buf;
    }
    return out;
}

void validate(const ModelSpec& spec) {
    if (spec.dropout < 0.0 || spec.dropout >= 1.0) fail("model spec: dropout must lie in [0, 1)");
    if (kind_requires_hidden(spec.kind) && spec.hidden < 2)
        fail("model spec: hidden width must be >= 2");
    if (is_gnn(spec.kind)) {
        if (spec.num_layers < 2 || spec.num_layers > 13)
            fail("model spec: num_layers must lie in [2, 13], got " + std::to_string(spec.num_layers));
    }
    if (uses_gat_encoder(spec.kind)) {
        if (spec.heads != 1 && spec.heads != 2) fail("model spec: attention heads must be 1 or 2");
        if (spec.hidden % spec.heads != 0) fail("model spec: hidden width must divide by heads");
    } else if (spec.heads != 1) {
        fail("model spec: heads are only meaningful for GAT-based kinds");
    }
    if (spec.kind == ModelKind::JKLstm && spec.hidden % 2 != 0)
        fail("model spec: JK-LSTM needs an even hidden width");
}

nlohmann::ordered_json spec_to_json(const ModelSpec& spec) {
    nlohmann::ordered_json j;
    j["kind"] = to_string(spec.kind);
    j["layers"] = spec.num_layers;
    j["hidden"] = spec.hidden;
    j["heads"] = spec.heads;
    j["dropout"] = spec.dropout;
    return j;
}

ModelSpec spec_from_json(const nlohmann::json& doc) {
    ModelSpec spec;
    const auto kind_name = doc.at("kind").get<std::string>();
    const auto kind = model_kind_from_string(kind_name);
    if (!kind) fail("model spec: unknown kind '" + kind_name + "'");
    spec.kind = *kind;
    if (doc.contains("layers")) spec.num_layers = doc.at("layers").get<int>();
    if (doc.contains("hidden")) spec.hidden = doc.at("hidden").get<int>();
    if (doc.contains("heads")) spec.heads = doc.at("heads").get<int>();
    if (doc.contains("dropout")) spec.dropout = doc.at("dropout").get<double>();
    validate(spec);
    return spec;
}

// ---------------------------------------------------------------------------
// GraphStructure
// ---------------------------------------------------------------------------

GraphStructure GraphStructure::build(const PowerGrid& grid) {
    GraphStructure g;
    g.n = static_cast<std::size_t>(grid.num_vertices());
    std::vector<std::pair<std::size_t, std::size_t>> pairs;  // (dst, src)
    pairs.reserve(grid.edges.size() * 2 + g.n);
    for (const auto& [i, j] : grid.edges) {
        pairs.emplace_back(static_cast<std::size_t>(j), static_cast<std::size_t>(i));
        pairs.emplace_back(static_cast<std::size_t>(i), static_cast<std::size_t>(j));
    }
    for (std::size_t v = 0; v < g.n; ++v) pairs.emplace_back(v, v);
    std::sort(pairs.begin(), pairs.end());
    g.src.reserve(pairs.size());
    g.dst.reserve(pairs.size());
    for (const auto& [d, s] : pairs) {
        g.dst.push_back(d);
        g.src.push_back(s);
    }
    for (int b : grid.busbars()) g.busbars.push_back(static_cast<std::size_t>(b));
    return g;
}

// ---------------------------------------------------------------------------
// ParamStore
// ---------------------------------------------------------------------------

Param& ParamStore::create(const std::string& name, std::size_t rows, std::size_t cols,
                          std::vector<double> values) {
    if (find(name)) fail("param store: duplicate parameter '" + name + "'");
    if (values.size() != rows * cols) fail("param store: value size mismatch for '" + name + "'");
    params_.push_back({name, rows, cols, std::move(values), {}});
    return params_.back();
}

Param& ParamStore::create_glorot(const std::string& name, std::size_t rows, std::size_t cols, Rng& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
    std::vector<double> values(rows * cols);
    for (auto& v : values) v = rng.uniform(-limit, limit);
    return create(name, rows, cols, std::move(values));
}

Param& ParamStore::create_zeros(const std::string& name, std::size_t rows, std::size_t cols) {
    return create(name, rows, cols, std::vector<double>(rows * cols, 0.0));
}

Param& ParamStore::create_full(const std::string& name, std::size_t rows, std::size_t cols,
                               double fill) {
    return create(name, rows, cols, std::vector<double>(rows * cols, fill));
}

Param* ParamStore::find(const std::string& name) {
    for (auto& p : params_)
        if (p.name == name) return &p;
    return nullptr;
}

std::size_t ParamStore::total_size() const {
    std::size_t total = 0;
    for (const auto& p : params_) total += p.value.size();
    return total;
}

nlohmann::ordered_json params_to_json(const ParamStore& store) {
    nlohmann::ordered_json doc;
    doc["schema_version"] = 1;
    auto& params = doc["params"] = nlohmann::ordered_json::array();
    for (const auto& p : store.params()) {
        nlohmann::ordered_json j;
        j["name"] = p.name;
        j["rows"] = p.rows;
        j["cols"] = p.cols;
        j["values"] = p.value;
        params.push_back(std::move(j));
    }
    return doc;
}

void params_from_json(ParamStore& store, const nlohmann::json& doc) {
    const auto ver = doc.find("schema_version");
    if (ver == doc.end() || ver->get<int>() != 1)
        throw std::runtime_error("checkpoint document has unsupported schema_version");
    const auto params = doc.find("params");
    if (params == doc.end()) throw std::runtime_error("checkpoint document missing key 'params'");
    for (const auto& j : *params) {
        const auto name = j.at("name").get<std::string>();
        Param* p = store.find(name);
        if (!p) throw std::runtime_error("checkpoint parameter '" + name + "' unknown to this model");
        if (p->rows != j.at("rows").get<std::size_t>() || p->cols != j.at("cols").get<std::size_t>())
            throw std::runtime_error("checkpoint parameter '" + name + "' has mismatched shape");
        p->value = j.at("values").get<std::vector<double>>();
        if (p->value.size() != p->rows * p->cols)
            throw std::runtime_error("checkpoint parameter '" + name + "' has mismatched data size");
        p->opt = {};
    }
}

// ---------------------------------------------------------------------------
// Layers
// ---------------------------------------------------------------------------

ad::Tensor gcn_layer(ad::Tape& tape, const ad::Tensor& h, const GraphStructure& graph,
                     const ad::Tensor& w, const ad::Tensor& bias, bool activate) {
    ad::Tensor msg = tape.add_bias(tape.matmul(h, w), bias);
    ad::Tensor gathered = tape.gather_rows(msg, graph.src);
    ad::Tensor agg = tape.segment_mean(gathered, graph.dst, graph.n);
    return activate ? tape.elu(agg) : agg;
}

ad::Tensor gat_layer(ad::Tape& tape, const ad::Tensor& h, const GraphStructure& graph,
                     const GatLayerParams& params, bool activate,
                     std::vector<ad::Tensor>* alphas_out) {
    if (params.heads.empty()) fail("gat_layer: no heads");
    std::vector<ad::Tensor> head_outputs;
    head_outputs.reserve(params.heads.size());
    for (const auto& head : params.heads) {
        ad::Tensor wh = tape.matmul(h, head.w);
        ad::Tensor s_src = tape.matmul(wh, head.a_src);
        ad::Tensor s_dst = tape.matmul(wh, head.a_dst);
        ad::Tensor scores = tape.add(tape.gather_rows(s_src, graph.src),
                                     tape.gather_rows(s_dst, graph.dst));
        scores = tape.leaky_relu(scores, params.leaky_slope);
        ad::Tensor alpha = tape.segment_softmax(scores, graph.dst, graph.n);
        if (alphas_out) alphas_out->push_back(alpha);
        ad::Tensor msg = tape.row_scale(tape.gather_rows(wh, graph.src), alpha);
        head_outputs.push_back(tape.segment_sum(msg, graph.dst, graph.n));
    }
    ad::Tensor combined;
    if (params.average_heads) {
        combined = head_outputs.front();
        for (std::size_t i = 1; i < head_outputs.size(); ++i)
            combined = tape.add(combined, head_outputs[i]);
        combined = tape.scale(combined, 1.0 / static_cast<double>(head_outputs.size()));
    } else {
        combined = head_outputs.size() == 1 ? head_outputs.front() : tape.concat_cols(head_outputs);
    }
    combined = tape.add_bias(combined, params.bias);
    return activate ? tape.elu(combined) : combined;
}

ad::Tensor jk_concat(ad::Tape& tape, const std::vector<ad::Tensor>& layers) {
    if (layers.empty()) fail("jk_concat: no layer embeddings");
    return layers.size() == 1 ? layers.front() : tape.concat_cols(layers);
}

ad::Tensor jk_max(ad::Tape& tape, const std::vector<ad::Tensor>& layers) {
    if (layers.empty()) fail("jk_max: no layer embeddings");
    ad::Tensor out = layers.front();
    for (std::size_t k = 1; k < layers.size(); ++k) {
        if (layers[k].cols() != out.cols()) fail("jk_max: layer width mismatch");
        out = tape.cwise_max(out, layers[k]);
    }
    return out;
}

namespace {

struct LstmState {
    ad::Tensor h, c;
};

LstmState lstm_cell(ad::Tape& tape, const ad::Tensor& x, const LstmState& prev,
                    const LstmCellParams& p) {
    const std::size_t hl = p.wh.rows();
    ad::Tensor gates = tape.add_bias(tape.add(tape.matmul(x, p.wx), tape.matmul(prev.h, p.wh)), p.b);
    ad::Tensor i = tape.sigmoid(tape.slice_cols(gates, 0, hl));
    ad::Tensor f = tape.sigmoid(tape.slice_cols(gates, hl, hl));
    ad::Tensor g = tape.tanh(tape.slice_cols(gates, 2 * hl, hl));
    ad::Tensor o = tape.sigmoid(tape.slice_cols(gates, 3 * hl, hl));
    LstmState next;
    next.c = tape.add(tape.mul(f, prev.c), tape.mul(i, g));
    next.h = tape.mul(o, tape.tanh(next.c));
    return next;
}

}  // namespace

ad::Tensor jk_lstm(ad::Tape& tape, const std::vector<ad::Tensor>& layers, const JkLstmParams& params,
                   ad::Tensor* alphas_out) {
    if (layers.empty()) fail("jk_lstm: no layer embeddings");
    const std::size_t n = layers.front().rows();
    const std::size_t d = layers.front().cols();
    for (const auto& l : layers)
        if (l.cols() != d || l.rows() != n) fail("jk_lstm: layer shape mismatch");
    const std::size_t k = layers.size();
    const std::size_t hl = params.forward_cell.wh.rows();

    std::vector<ad::Tensor> fwd(k), bwd(k);
    LstmState state{ad::Tensor::zeros(n, hl), ad::Tensor::zeros(n, hl)};
    for (std::size_t t = 0; t < k; ++t) {
        state = lstm_cell(tape, layers[t], state, params.forward_cell);
        fwd[t] = state.h;
    }
    state = {ad::Tensor::zeros(n, hl), ad::Tensor::zeros(n, hl)};
    for (std::size_t t = k; t-- > 0;) {
        state = lstm_cell(tape, layers[t], state, params.backward_cell);
        bwd[t] = state.h;
    }

    std::vector<ad::Tensor> scores(k);
    for (std::size_t t = 0; t < k; ++t)
        scores[t] = tape.matmul(tape.concat_cols({fwd[t], bwd[t]}), params.attention);
    ad::Tensor alpha = tape.row_softmax(k == 1 ? scores.front() : tape.concat_cols(scores));
    if (alphas_out) *alphas_out = alpha;

    ad::Tensor out;
    for (std::size_t t = 0; t < k; ++t) {
        ad::Tensor weighted = tape.row_scale(layers[t], tape.slice_cols(alpha, t, 1));
        out = t == 0 ? weighted : tape.add(out, weighted);
    }
    return out;
}

ad::Tensor jk_transformer(ad::Tape& tape, const std::vector<ad::Tensor>& layers,
                          const JkTransParams& params, std::vector<ad::Tensor>* attention_out) {
    if (layers.empty()) fail("jk_transformer: no layer embeddings");
    const std::size_t n = layers.front().rows();
    const std::size_t d = layers.front().cols();
    for (const auto& l : layers)
        if (l.cols() != d || l.rows() != n) fail("jk_transformer: layer shape mismatch");
    const std::size_t k = layers.size();
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));

    std::vector<ad::Tensor> queries(k), keys(k), values(k);
    for (std::size_t t = 0; t < k; ++t) {
        queries[t] = tape.matmul(layers[t], params.wq);
        keys[t] = tape.matmul(layers[t], params.wk);
        values[t] = tape.matmul(layers[t], params.wv);
    }

    // Full attention rows (cheap for K <= 13); only the last token's output
    // feeds the regression head.
    std::vector<ad::Tensor> rows(k);
    for (std::size_t q = 0; q < k; ++q) {
        std::vector<ad::Tensor> scores(k);
        for (std::size_t t = 0; t < k; ++t)
            scores[t] = tape.scale(tape.rowwise_sum(tape.mul(queries[q], keys[t])), inv_sqrt_d);
        rows[q] = tape.row_softmax(k == 1 ? scores.front() : tape.concat_cols(scores));
        if (attention_out) attention_out->push_back(rows[q]);
    }

    const std::size_t last = k - 1;
    ad::Tensor attended;
    for (std::size_t t = 0; t < k; ++t) {
        ad::Tensor weighted = tape.row_scale(values[t], tape.slice_cols(rows[last], t, 1));
        attended = t == 0 ? weighted : tape.add(attended, weighted);
    }
    ad::Tensor z = tape.layer_norm(tape.add(layers[last], attended), params.ln1_gain, params.ln1_bias);
    ad::Tensor ff = tape.add_bias(
        tape.matmul(tape.elu(tape.add_bias(tape.matmul(z, params.ff1), params.ff1_bias)), params.ff2),
        params.ff2_bias);
    return tape.layer_norm(tape.add(z, ff), params.ln2_gain, params.ln2_bias);
}

// ---------------------------------------------------------------------------
// Loss and metrics
// ---------------------------------------------------------------------------

LossMetrics loss_and_metrics(std::span<const double> preds, std::span<const double> labels) {
    if (preds.size() != labels.size()) fail("loss_and_metrics: prediction/label length mismatch");
    if (preds.empty()) fail("loss_and_metrics: empty label set");
    LossMetrics m;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const double diff = preds[i] - labels[i];
        m.mse += diff * diff;
        m.mae += std::abs(diff);
    }
    m.mse /= static_cast<double>(preds.size());
    m.mae /= static_cast<double>(preds.size());
    return m;
}

ad::Tensor mse_loss(ad::Tape& tape, const ad::Tensor& preds, const ad::Tensor& labels) {
    if (preds.size() == 0) fail("mse_loss: empty label set");
    ad::Tensor diff = tape.sub(preds, labels);
    return tape.mean_all(tape.mul(diff, diff));
}

// ---------------------------------------------------------------------------
// TrainableModel base
// ---------------------------------------------------------------------------

ad::Tensor TrainableModel::bind(ad::Tape& tape, Param& param, bool track) {
    if (!track) return ad::Tensor::constant(param.rows, param.cols, param.value);
    ad::Tensor t = tape.leaf(param.rows, param.cols, param.value);
    bindings_.emplace_back(&param, t);
    return t;
}

// ---------------------------------------------------------------------------
// GnnModel
// ---------------------------------------------------------------------------

GnnModel::GnnModel(const ModelSpec& spec, std::size_t input_width, std::uint64_t seed)
    : spec_(spec), input_width_(input_width) {
    validate(spec);
    if (!is_gnn(spec.kind)) fail("GnnModel: spec kind is not a message-passing model");
    Rng rng = Rng(seed).derive("init");

    const auto hidden = static_cast<std::size_t>(spec.hidden);
    const auto layers = static_cast<std::size_t>(spec.num_layers);
    const auto heads = static_cast<std::size_t>(spec.heads);

    std::size_t d_in = input_width;
    for (std::size_t k = 0; k < layers; ++k) {
        const std::string prefix = "layer" + std::to_string(k) + ".";
        if (spec.kind == ModelKind::GCN) {
            store_.create_glorot(prefix + "w", d_in, hidden, rng);
            store_.create_zeros(prefix + "b", 1, hidden);
        } else {
            // Hidden GAT layers concatenate heads; the last layer of a plain
            // GAT stack averages full-width heads instead.
            const bool average = spec.kind == ModelKind::GAT && k + 1 == layers;
            const std::size_t d_head = average ? hidden : hidden / heads;
            for (std::size_t a = 0; a < heads; ++a) {
                const std::string hp = prefix + "head" + std::to_string(a) + ".";
                store_.create_glorot(hp + "w", d_in, d_head, rng);
                store_.create_glorot(hp + "a_src", d_head, 1, rng);
                store_.create_glorot(hp + "a_dst", d_head, 1, rng);
            }
            store_.create_zeros(prefix + "b", 1, hidden);
        }
        d_in = hidden;
    }

    std::size_t head_width = hidden;
    switch (spec.kind) {
        case ModelKind::JKConcat:
            head_width = hidden * layers;
            break;
        case ModelKind::JKLstm: {
            const std::size_t hl = hidden / 2;
            for (const char* dir : {"fwd", "bwd"}) {
                const std::string p = std::string("jk.lstm.") + dir + ".";
                store_.create_glorot(p + "wx", hidden, 4 * hl, rng);
                store_.create_glorot(p + "wh", hl, 4 * hl, rng);
                // Forget-gate block initialized to 1.
                auto& b = store_.create_zeros(p + "b", 1, 4 * hl);
                for (std::size_t i = hl; i < 2 * hl; ++i) b.value[i] = 1.0;
            }
            store_.create_glorot("jk.lstm.attention", 2 * hl, 1, rng);
            break;
        }
        case ModelKind::JKTrans: {
            store_.create_glorot("jk.trans.wq", hidden, hidden, rng);
            store_.create_glorot("jk.trans.wk", hidden, hidden, rng);
            store_.create_glorot("jk.trans.wv", hidden, hidden, rng);
            store_.create_full("jk.trans.ln1_g", 1, hidden, 1.0);
            store_.create_zeros("jk.trans.ln1_b", 1, hidden);
            store_.create_full("jk.trans.ln2_g", 1, hidden, 1.0);
            store_.create_zeros("jk.trans.ln2_b", 1, hidden);
            store_.create_glorot("jk.trans.ff1", hidden, 2 * hidden, rng);
            store_.create_zeros("jk.trans.ff1_b", 1, 2 * hidden);
            store_.create_glorot("jk.trans.ff2", 2 * hidden, hidden, rng);
            store_.create_zeros("jk.trans.ff2_b", 1, hidden);
            break;
        }
        default:
            break;
    }
    store_.create_glorot("head.w_out", head_width, 1, rng);
    store_.create_zeros("head.b_out", 1, 1);
}

ad::Tensor GnnModel::forward(ad::Tape& tape, const ModelInput& input, bool training,
                             Rng* dropout_rng) {
    if (!input.graph || !input.node_features) fail("GnnModel::forward: graph input missing");
    if (input.node_features->cols() != input_width_)
        fail("GnnModel::forward: feature width " + std::to_string(input.node_features->cols()) +
             " does not match model input width " + std::to_string(input_width_));
    if (training && spec_.dropout > 0.0 && !dropout_rng)
        fail("GnnModel::forward: dropout requires an rng in training mode");
    bindings_.clear();

    const auto& graph = *input.graph;
    const auto layers = static_cast<std::size_t>(spec_.num_layers);
    ad::Tensor h = ad::Tensor::constant(*input.node_features);
    std::vector<ad::Tensor> per_layer;
    per_layer.reserve(layers);

    for (std::size_t k = 0; k < layers; ++k) {
        const std::string prefix = "layer" + std::to_string(k) + ".";
        if (spec_.kind == ModelKind::GCN) {
            ad::Tensor w = bind(tape, *store_.find(prefix + "w"), training);
            ad::Tensor b = bind(tape, *store_.find(prefix + "b"), training);
            h = gcn_layer(tape, h, graph, w, b);
        } else {
            const bool average = spec_.kind == ModelKind::GAT && k + 1 == layers;
            GatLayerParams params;
            params.average_heads = average;
            params.leaky_slope = kLeakySlope;
            for (int a = 0; a < spec_.heads; ++a) {
                const std::string hp = prefix + "head" + std::to_string(a) + ".";
                GatHeadParams head;
                head.w = bind(tape, *store_.find(hp + "w"), training);
                head.a_src = bind(tape, *store_.find(hp + "a_src"), training);
                head.a_dst = bind(tape, *store_.find(hp + "a_dst"), training);
                params.heads.push_back(std::move(head));
            }
            params.bias = bind(tape, *store_.find(prefix + "b"), training);
            h = gat_layer(tape, h, graph, params);
        }
        if (spec_.dropout > 0.0 && training) h = tape.dropout(h, spec_.dropout, *dropout_rng, true);
        per_layer.push_back(h);
    }

    // Only busbar embeddings feed the aggregation and the output head.
    ad::Tensor out;
    if (is_jk(spec_.kind)) {
        std::vector<ad::Tensor> busbar_layers;
        busbar_layers.reserve(layers);
        for (const auto& layer : per_layer)
            busbar_layers.push_back(tape.gather_rows(layer, graph.busbars));
        switch (spec_.kind) {
            case ModelKind::JKConcat:
                out = jk_concat(tape, busbar_layers);
                break;
            case ModelKind::JKMax:
                out = jk_max(tape, busbar_layers);
                break;
            case ModelKind::JKLstm: {
                JkLstmParams params;
                params.forward_cell = {bind(tape, *store_.find("jk.lstm.fwd.wx"), training),
                                       bind(tape, *store_.find("jk.lstm.fwd.wh"), training),
                                       bind(tape, *store_.find("jk.lstm.fwd.b"), training)};
                params.backward_cell = {bind(tape, *store_.find("jk.lstm.bwd.wx"), training),
                                        bind(tape, *store_.find("jk.lstm.bwd.wh"), training),
                                        bind(tape, *store_.find("jk.lstm.bwd.b"), training)};
                params.attention = bind(tape, *store_.find("jk.lstm.attention"), training);
                out = jk_lstm(tape, busbar_layers, params);
                break;
            }
            default: {
                JkTransParams params;
                params.wq = bind(tape, *store_.find("jk.trans.wq"), training);
                params.wk = bind(tape, *store_.find("jk.trans.wk"), training);
                params.wv = bind(tape, *store_.find("jk.trans.wv"), training);
                params.ln1_gain = bind(tape, *store_.find("jk.trans.ln1_g"), training);
                params.ln1_bias = bind(tape, *store_.find("jk.trans.ln1_b"), training);
                params.ln2_gain = bind(tape, *store_.find("jk.trans.ln2_g"), training);
                params.ln2_bias = bind(tape, *store_.find("jk.trans.ln2_b"), training);
                params.ff1 = bind(tape, *store_.find("jk.trans.ff1"), training);
                params.ff1_bias = bind(tape, *store_.find("jk.trans.ff1_b"), training);
                params.ff2 = bind(tape, *store_.find("jk.trans.ff2"), training);
                params.ff2_bias = bind(tape, *store_.find("jk.trans.ff2_b"), training);
                out = jk_transformer(tape, busbar_layers, params);
                break;
            }
        }
    } else {
        out = tape.gather_rows(per_layer.back(), graph.busbars);
    }

    ad::Tensor w_out = bind(tape, *store_.find("head.w_out"), training);
    ad::Tensor b_out = bind(tape, *store_.find("head.b_out"), training);
    return tape.add_bias(tape.matmul(out, w_out), b_out);
}

// ---------------------------------------------------------------------------
// MlpModel
// ---------------------------------------------------------------------------

MlpModel::MlpModel(const ModelSpec& spec, std::size_t flat_width, std::size_t n_busbars,
                   std::uint64_t seed)
    : spec_(spec), flat_width_(flat_width), n_busbars_(n_busbars) {
    validate(spec);
    if (spec.kind != ModelKind::MLP) fail("MlpModel: spec kind is not mlp");
    Rng rng = Rng(seed).derive("init");
    const auto hidden = static_cast<std::size_t>(spec.hidden);
    store_.create_glorot("w1", hidden, flat_width, rng);
    store_.create_zeros("b1", hidden, 1);
    store_.create_glorot("w2", n_busbars, hidden, rng);
    store_.create_zeros("b2", n_busbars, 1);
}

ad::Tensor MlpModel::forward(ad::Tape& tape, const ModelInput& input, bool training,
                             Rng* dropout_rng) {
    if (!input.flat) fail("MlpModel::forward: flat input missing");
    if (input.flat->size() != flat_width_)
        fail("MlpModel::forward: flat width " + std::to_string(input.flat->size()) +
             " does not match model width " + std::to_string(flat_width_));
    bindings_.clear();

    ad::Tensor x = ad::Tensor::constant(flat_width_, 1, *input.flat);
    ad::Tensor w1 = bind(tape, *store_.find("w1"), training);
    ad::Tensor b1 = bind(tape, *store_.find("b1"), training);
    ad::Tensor h = tape.elu(tape.add(tape.matmul(w1, x), b1));
    if (spec_.dropout > 0.0 && training) {
        if (!dropout_rng) fail("MlpModel::forward: dropout requires an rng in training mode");
        h = tape.dropout(h, spec_.dropout, *dropout_rng, true);
    }
    ad::Tensor w2 = bind(tape, *store_.find("w2"), training);
    ad::Tensor b2 = bind(tape, *store_.find("b2"), training);
    return tape.add(tape.matmul(w2, h), b2);
}

std::unique_ptr<TrainableModel> make_trainable_model(const ModelSpec& spec, std::size_t input_width,
                                                     std::size_t flat_width, std::size_t n_busbars,
                                                     std::uint64_t seed) {
    if (is_gnn(spec.kind)) return std::make_unique<GnnModel>(spec, input_width, seed);
    if (spec.kind == ModelKind::MLP)
        return std::make_unique<MlpModel>(spec, flat_width, n_busbars, seed);
    fail("make_trainable_model: kind '" + std::string(to_string(spec.kind)) +
         "' is not gradient-trained");
}

// ---------------------------------------------------------------------------
// Closed-form baselines
// ---------------------------------------------------------------------------

namespace {

/// Cholesky solve of the SPD system a * x = rhs (rhs may have many columns).
Matrix cholesky_solve(Matrix a, Matrix rhs) {
    const std::size_t n = a.rows();
    if (a.cols() != n || rhs.rows() != n) fail("cholesky_solve: shape mismatch");
    // Decompose in place: lower triangle holds L.
    for (std::size_t j = 0; j < n; ++j) {
        double diag = a.at(j, j);
        for (std::size_t k = 0; k < j; ++k) diag -= a.at(j, k) * a.at(j, k);
        if (diag <= 0.0) fail("cholesky_solve: matrix is not positive definite");
        a.at(j, j) = std::sqrt(diag);
        for (std::size_t i = j + 1; i < n; ++i) {
            double v = a.at(i, j);
            for (std::size_t k = 0; k < j; ++k) v -= a.at(i, k) * a.at(j, k);
            a.at(i, j) = v / a.at(j, j);
        }
    }
    const std::size_t t = rhs.cols();
    // Forward substitution L y = rhs.
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < t; ++c) {
            double v = rhs.at(i, c);
            for (std::size_t k = 0; k < i; ++k) v -= a.at(i, k) * rhs.at(k, c);
            rhs.at(i, c) = v / a.at(i, i);
        }
    // Back substitution L^T x = y.
    for (std::size_t i = n; i-- > 0;)
        for (std::size_t c = 0; c < t; ++c) {
            double v = rhs.at(i, c);
            for (std::size_t k = i + 1; k < n; ++k) v -= a.at(k, i) * rhs.at(k, c);
            rhs.at(i, c) = v / a.at(i, i);
        }
    return rhs;
}

}  // namespace

RidgeRegression RidgeRegression::fit(const Matrix& x, const Matrix& y, double lambda) {
    const std::size_t m = x.rows(), d = x.cols(), t = y.cols();
    if (y.rows() != m) fail("RidgeRegression::fit: sample count mismatch");
    if (m == 0 || t == 0) fail("RidgeRegression::fit: empty training set");
    if (lambda <= 0.0) fail("RidgeRegression::fit: lambda must be > 0");

    std::vector<double> xm(d, 0.0), ym(t, 0.0);
    for (std::size_t r = 0; r < m; ++r) {
        for (std::size_t c = 0; c < d; ++c) xm[c] += x.at(r, c);
        for (std::size_t c = 0; c < t; ++c) ym[c] += y.at(r, c);
    }
    for (auto& v : xm) v /= static_cast<double>(m);
    for (auto& v : ym) v /= static_cast<double>(m);
    Matrix xc(m, d), yc(m, t);
    for (std::size_t r = 0; r < m; ++r) {
        for (std::size_t c = 0; c < d; ++c) xc.at(r, c) = x.at(r, c) - xm[c];
        for (std::size_t c = 0; c < t; ++c) yc.at(r, c) = y.at(r, c) - ym[c];
    }

    RidgeRegression model;
    model.coef_ = Matrix(d, t);
    if (m <= d) {
        // Dual: coef = Xc^T (Xc Xc^T + lambda I)^-1 Yc.
        Matrix gram(m, m);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = i; j < m; ++j) {
                double s = 0.0;
                for (std::size_t c = 0; c < d; ++c) s += xc.at(i, c) * xc.at(j, c);
                gram.at(i, j) = s + (i == j ? lambda : 0.0);
                gram.at(j, i) = gram.at(i, j);
            }
        Matrix beta = cholesky_solve(std::move(gram), yc);
        for (std::size_t c = 0; c < d; ++c)
            for (std::size_t o = 0; o < t; ++o) {
                double s = 0.0;
                for (std::size_t r = 0; r < m; ++r) s += xc.at(r, c) * beta.at(r, o);
                model.coef_.at(c, o) = s;
            }
    } else {
        Matrix gram(d, d);
        for (std::size_t i = 0; i < d; ++i)
            for (std::size_t j = i; j < d; ++j) {
                double s = 0.0;
                for (std::size_t r = 0; r < m; ++r) s += xc.at(r, i) * xc.at(r, j);
                gram.at(i, j) = s + (i == j ? lambda : 0.0);
                gram.at(j, i) = gram.at(i, j);
            }
        Matrix rhs(d, t);
        for (std::size_t c = 0; c < d; ++c)
            for (std::size_t o = 0; o < t; ++o) {
                double s = 0.0;
                for (std::size_t r = 0; r < m; ++r) s += xc.at(r, c) * yc.at(r, o);
                rhs.at(c, o) = s;
            }
        model.coef_ = cholesky_solve(std::move(gram), std::move(rhs));
    }
    model.intercept_.assign(t, 0.0);
    for (std::size_t o = 0; o < t; ++o) {
        double s = ym[o];
        for (std::size_t c = 0; c < d; ++c) s -= xm[c] * model.coef_.at(c, o);
        model.intercept_[o] = s;
    }
    return model;
}

std::vector<double> RidgeRegression::predict(std::span<const double> x) const {
    if (x.size() != coef_.rows()) fail("RidgeRegression::predict: input width mismatch");
    std::vector<double> out(intercept_);
    for (std::size_t c = 0; c < coef_.rows(); ++c) {
        const double xv = x[c];
        if (xv == 0.0) continue;
        for (std::size_t o = 0; o < out.size(); ++o) out[o] += xv * coef_.at(c, o);
    }
    return out;
}

MeanPredictor MeanPredictor::fit(const Matrix& labels, bool global) {
    if (labels.rows() == 0 || labels.cols() == 0) fail("MeanPredictor::fit: empty training labels");
    MeanPredictor p;
    p.global_ = global;
    double total = 0.0;
    p.per_busbar_.assign(labels.cols(), 0.0);
    for (std::size_t r = 0; r < labels.rows(); ++r)
        for (std::size_t c = 0; c < labels.cols(); ++c) {
            p.per_busbar_[c] += labels.at(r, c);
            total += labels.at(r, c);
        }
    for (auto& v : p.per_busbar_) v /= static_cast<double>(labels.rows());
    p.global_mean_ = total / static_cast<double>(labels.rows() * labels.cols());
    return p;
}

std::vector<double> MeanPredictor::predict(std::size_t n_busbars) const {
    if (global_) return std::vector<double>(n_busbars, global_mean_);
    if (n_busbars != per_busbar_.size())
        fail("MeanPredictor::predict: busbar count mismatch (per-busbar means are topology-bound)");
    return per_busbar_;
}

}  // namespace gridse::nn
