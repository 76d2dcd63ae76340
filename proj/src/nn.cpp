#include "add/nn.hpp"

#include <cmath>

namespace add {

void MlpSpec::validate() const {
    require(widths.size() >= 2, "mlp spec: need at least one layer (input and output widths)");
    for (int w : widths) require(w > 0, "mlp spec: layer widths must be positive");
    require(temb_width >= 0 && temb_width % 2 == 0, "mlp spec: time-embedding width must be even");
}

MlpParams init_mlp(const MlpSpec& spec, uint64_t seed) {
    spec.validate();
    Rng rng(seed);
    MlpParams p;
    for (int l = 0; l < spec.layer_count(); ++l) {
        const int fin = spec.fan_in(l), fout = spec.fan_out(l);
        const float bound = std::sqrt(6.0f / static_cast<float>(fin + fout));
        Tensor w = Tensor::zeros({fin, fout});
        for (float& v : w.data) v = rng.uniform(-bound, bound);
        p.tensors.push_back(std::move(w));
        p.tensors.push_back(Tensor::zeros({fout}));
    }
    return p;
}

Tensor time_embedding(const std::vector<int>& ts, int width) {
    require(width > 0 && width % 2 == 0, "time embedding: width must be positive and even");
    const int half = width / 2;
    const int64_t m = static_cast<int64_t>(ts.size());
    Tensor out = Tensor::zeros({m, width});
    for (int64_t i = 0; i < m; ++i) {
        const double t = static_cast<double>(ts[static_cast<size_t>(i)]);
        for (int j = 0; j < half; ++j) {
            const double freq = std::exp(-std::log(10000.0) * static_cast<double>(j) / half);
            out.data[static_cast<size_t>(i * width + j)] = static_cast<float>(std::sin(t * freq));
            out.data[static_cast<size_t>(i * width + half + j)] = static_cast<float>(std::cos(t * freq));
        }
    }
    return out;
}

static std::vector<int> broadcast_ts(const std::vector<int>& ts, int64_t m, const char* who) {
    if (static_cast<int64_t>(ts.size()) == m) return ts;
    require(ts.size() == 1, std::string(who) + ": need one t per row or a single t");
    return std::vector<int>(static_cast<size_t>(m), ts[0]);
}

Tape::NodeId mlp_forward(Tape& tape, const MlpSpec& spec, const std::vector<Tape::NodeId>& param_ids,
                         Tape::NodeId input, const std::vector<int>& ts) {
    spec.validate();
    require(static_cast<int>(param_ids.size()) == 2 * spec.layer_count(),
            "mlp_forward: parameter count does not match spec");
    const Tensor& in = tape.val(input);
    require(in.cols() == spec.widths[0],
            "mlp_forward: layer 0 expects input width " + std::to_string(spec.widths[0]) +
                ", got " + std::to_string(in.cols()));
    Tape::NodeId h = input;
    if (spec.temb_width > 0) {
        require(!ts.empty(), "mlp_forward: diffusion time required by spec");
        Tensor emb = time_embedding(broadcast_ts(ts, in.rows(), "mlp_forward"), spec.temb_width);
        h = tape.concat_cols(h, tape.leaf(std::move(emb), false));
    }
    for (int l = 0; l < spec.layer_count(); ++l) {
        const Tensor& w = tape.val(param_ids[static_cast<size_t>(2 * l)]);
        require(w.rows() == spec.fan_in(l) && w.cols() == spec.fan_out(l),
                "mlp_forward: layer " + std::to_string(l) + " weight shape " + shape_str(w));
        h = tape.matmul(h, param_ids[static_cast<size_t>(2 * l)]);
        h = tape.add_rowvec(h, param_ids[static_cast<size_t>(2 * l + 1)]);
        if (l + 1 < spec.layer_count())
            h = spec.act == Activation::relu ? tape.relu(h) : tape.tanh_op(h);
    }
    return h;
}

Tensor mlp_eval(const MlpSpec& spec, const MlpParams& params, const Tensor& input,
                const std::vector<int>& ts) {
    spec.validate();
    require(static_cast<int>(params.tensors.size()) == 2 * spec.layer_count(),
            "mlp_eval: parameter count does not match spec");
    const int64_t m = input.rows();
    require(input.cols() == spec.widths[0],
            "mlp_eval: layer 0 expects input width " + std::to_string(spec.widths[0]) +
                ", got " + std::to_string(input.cols()));
    Tensor h = input;
    if (h.shape.size() != 2) h = Tensor({m, input.cols()}, input.data);
    if (spec.temb_width > 0) {
        require(!ts.empty(), "mlp_eval: diffusion time required by spec");
        Tensor emb = time_embedding(broadcast_ts(ts, m, "mlp_eval"), spec.temb_width);
        Tensor joined = Tensor::zeros({m, h.cols() + emb.cols()});
        for (int64_t i = 0; i < m; ++i) {
            for (int64_t j = 0; j < h.cols(); ++j) joined.at(i, j) = h.at(i, j);
            for (int64_t j = 0; j < emb.cols(); ++j) joined.at(i, h.cols() + j) = emb.at(i, j);
        }
        h = std::move(joined);
    }
    std::vector<double> acc;
    for (int l = 0; l < spec.layer_count(); ++l) {
        const Tensor& w = params.tensors[static_cast<size_t>(2 * l)];
        const Tensor& b = params.tensors[static_cast<size_t>(2 * l + 1)];
        require(w.rows() == spec.fan_in(l) && w.cols() == spec.fan_out(l),
                "mlp_eval: layer " + std::to_string(l) + " weight shape " + shape_str(w));
        const int64_t k = w.rows(), n = w.cols();
        Tensor out = Tensor::zeros({m, n});
        acc.assign(static_cast<size_t>(n), 0.0);
        for (int64_t i = 0; i < m; ++i) {
            std::fill(acc.begin(), acc.end(), 0.0);
            for (int64_t kk = 0; kk < k; ++kk) {
                const double hik = h.data[static_cast<size_t>(i * k + kk)];
                const float* wrow = &w.data[static_cast<size_t>(kk * n)];
                for (int64_t j = 0; j < n; ++j) acc[static_cast<size_t>(j)] += hik * wrow[j];
            }
            for (int64_t j = 0; j < n; ++j) {
                float v = static_cast<float>(acc[static_cast<size_t>(j)]) + b.data[static_cast<size_t>(j)];
                if (l + 1 < spec.layer_count())
                    v = spec.act == Activation::relu ? (v > 0.0f ? v : 0.0f) : std::tanh(v);
                out.data[static_cast<size_t>(i * n + j)] = v;
            }
        }
        h = std::move(out);
    }
    return h;
}

std::vector<Tape::NodeId> params_on_tape(Tape& tape, const MlpParams& params, bool requires_grad) {
    std::vector<Tape::NodeId> ids;
    ids.reserve(params.tensors.size());
    for (const Tensor& t : params.tensors) ids.push_back(tape.leaf(t, requires_grad));
    return ids;
}

std::vector<Tensor> param_grads(const Tape& tape, const std::vector<Tape::NodeId>& param_ids) {
    std::vector<Tensor> grads;
    grads.reserve(param_ids.size());
    for (Tape::NodeId id : param_ids) grads.push_back(tape.grad(id));
    return grads;
}

std::vector<std::string> param_names(const std::string& prefix, const MlpSpec& spec) {
    std::vector<std::string> names;
    for (int l = 0; l < spec.layer_count(); ++l) {
        names.push_back(prefix + ".W" + std::to_string(l));
        names.push_back(prefix + ".b" + std::to_string(l));
    }
    return names;
}

Tensor pack_params(const MlpParams& params) {
    int64_t total = 0;
    for (const Tensor& t : params.tensors) total += t.numel();
    Tensor flat = Tensor::zeros({total});
    int64_t off = 0;
    for (const Tensor& t : params.tensors)
        for (float v : t.data) flat.data[static_cast<size_t>(off++)] = v;
    return flat;
}

std::vector<Tape::NodeId> unpack_params(Tape& tape, Tape::NodeId packed, const MlpParams& like) {
    std::vector<Tape::NodeId> ids;
    int64_t off = 0;
    for (const Tensor& t : like.tensors) {
        ids.push_back(tape.slice_flat(packed, off, t.shape));
        off += t.numel();
    }
    return ids;
}

} // namespace add
