#pragma once
// Small dense networks: layer spec, Xavier init, sinusoidal time embedding,
// a tape-recorded forward for training/guidance and a plain forward for
// sampling loops that need no gradients.
#include <optional>
#include <string>
#include <vector>

#include "add/tape.hpp"
#include "add/tensor.hpp"

namespace add {

enum class Activation { relu, tanh_ };

struct MlpSpec {
    // widths[0] is the raw input width (before the time embedding is
    // appended), widths.back() the output width
    std::vector<int> widths;
    Activation act = Activation::relu;
    int temb_width = 0; // even; sinusoidal features of t appended when > 0

    int layer_count() const { return static_cast<int>(widths.size()) - 1; }
    int fan_in(int layer) const {
        return layer == 0 ? widths[0] + temb_width : widths[static_cast<size_t>(layer)];
    }
    int fan_out(int layer) const { return widths[static_cast<size_t>(layer) + 1]; }
    void validate() const;
};

// parameter list in layer order: W0, b0, W1, b1, ...
struct MlpParams {
    std::vector<Tensor> tensors;
};

MlpParams init_mlp(const MlpSpec& spec, uint64_t seed);

// sinusoidal features of integer diffusion times, one row per entry:
// [sin(t*f_0).. sin(t*f_{h-1}), cos(t*f_0).. cos(t*f_{h-1})], f_j = 10000^(-j/h)
Tensor time_embedding(const std::vector<int>& ts, int width);

// Tape-recorded forward. param_ids must hold one node per tensor of
// MlpParams in order. ts is required when spec.temb_width > 0 and must have
// one entry per input row (or a single entry broadcast to all rows).
Tape::NodeId mlp_forward(Tape& tape, const MlpSpec& spec, const std::vector<Tape::NodeId>& param_ids,
                         Tape::NodeId input, const std::vector<int>& ts = {});

// gradient-free forward over a batch, same semantics as mlp_forward
Tensor mlp_eval(const MlpSpec& spec, const MlpParams& params, const Tensor& input,
                const std::vector<int>& ts = {});

// convenience: put every parameter tensor on a tape, returning node ids
std::vector<Tape::NodeId> params_on_tape(Tape& tape, const MlpParams& params, bool requires_grad);

// collect gradients of the parameter nodes after backward()
std::vector<Tensor> param_grads(const Tape& tape, const std::vector<Tape::NodeId>& param_ids);

// diagnostic names "<prefix>.W0", "<prefix>.b0", ... matching tensor order
std::vector<std::string> param_names(const std::string& prefix, const MlpSpec& spec);

// flatten all parameter tensors into one vector (for gradient oracles)
Tensor pack_params(const MlpParams& params);

// unpack a packed parameter node into per-tensor nodes shaped like `like`,
// keeping the graph connected so gradients flow back to the packed leaf
std::vector<Tape::NodeId> unpack_params(Tape& tape, Tape::NodeId packed, const MlpParams& like);

} // namespace add
