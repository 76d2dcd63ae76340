#include "add/tape.hpp"

#include <cmath>

namespace add {

Tape::NodeId Tape::push(Tensor val, bool rg, std::function<void(Tape&)> back) {
    Node n;
    n.grad = Tensor::zeros(val.shape);
    n.val = std::move(val);
    n.rg = rg;
    n.back = rg ? std::move(back) : std::function<void(Tape&)>();
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size() - 1);
}

Tape::NodeId Tape::leaf(Tensor v, bool requires_grad) {
    return push(std::move(v), requires_grad, {});
}

static void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    require(a.same_shape(b), std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

Tape::NodeId Tape::add(NodeId a, NodeId b) {
    const Tensor& va = val(a);
    const Tensor& vb = val(b);
    check_same_shape(va, vb, "add");
    Tensor out = Tensor::zeros(va.shape);
    for (int64_t i = 0; i < out.numel(); ++i) out.data[i] = va.data[i] + vb.data[i];
    bool rg = requires_grad(a) || requires_grad(b);
    NodeId id = push(std::move(out), rg, {});
    node(id).back = [a, b, id](Tape& t) {
        const Tensor& g = t.grad(id);
        if (t.requires_grad(a))
            for (int64_t i = 0; i < g.numel(); ++i) t.node(a).grad.data[i] += g.data[i];
        if (t.requires_grad(b))
            for (int64_t i = 0; i < g.numel(); ++i) t.node(b).grad.data[i] += g.data[i];
    };
    return id;
}

Tape::NodeId Tape::sub(NodeId a, NodeId b) {
    const Tensor& va = val(a);
    const Tensor& vb = val(b);
    check_same_shape(va, vb, "sub");
    Tensor out = Tensor::zeros(va.shape);
    for (int64_t i = 0; i < out.numel(); ++i) out.data[i] = va.data[i] - vb.data[i];
    bool rg = requires_grad(a) || requires_grad(b);
    NodeId id = push(std::move(out), rg, {});
    node(id).back = [a, b, id](Tape& t) {
        const Tensor& g = t.grad(id);
        if (t.requires_grad(a))
            for (int64_t i = 0; i < g.numel(); ++i) t.node(a).grad.data[i] += g.data[i];
        if (t.requires_grad(b))
            for (int64_t i = 0; i < g.numel(); ++i) t.node(b).grad.data[i] -= g.data[i];
    };
    return id;
}

Tape::NodeId Tape::mul(NodeId a, NodeId b) {
    const Tensor& va = val(a);
    const Tensor& vb = val(b);
    check_same_shape(va, vb, "mul");
    Tensor out = Tensor::zeros(va.shape);
    for (int64_t i = 0; i < out.numel(); ++i) out.data[i] = va.data[i] * vb.data[i];
    bool rg = requires_grad(a) || requires_grad(b);
    NodeId id = push(std::move(out), rg, {});
    node(id).back = [a, b, id](Tape& t) {
        const Tensor& g = t.grad(id);
        const Tensor& va2 = t.val(a);
        const Tensor& vb2 = t.val(b);
        if (t.requires_grad(a))
            for (int64_t i = 0; i < g.numel(); ++i) t.node(a).grad.data[i] += g.data[i] * vb2.data[i];
        if (t.requires_grad(b))
            for (int64_t i = 0; i < g.numel(); ++i) t.node(b).grad.data[i] += g.data[i] * va2.data[i];
    };
    return id;
}

Tape::NodeId Tape::min2(NodeId a, NodeId b) {
    const Tensor& va = val(a);
    const Tensor& vb = val(b);
    check_same_shape(va, vb, "min2");
    Tensor out = Tensor::zeros(va.shape);
    for (int64_t i = 0; i < out.numel(); ++i)
        out.data[i] = va.data[i] <= vb.data[i] ? va.data[i] : vb.data[i];
    bool rg = requires_grad(a) || requires_grad(b);
    NodeId id = push(std::move(out), rg, {});
    node(id).back = [a, b, id](Tape& t) {
        const Tensor& g = t.grad(id);
        const Tensor& va2 = t.val(a);
        const Tensor& vb2 = t.val(b);
        for (int64_t i = 0; i < g.numel(); ++i) {
            if (va2.data[i] <= vb2.data[i]) {
                if (t.requires_grad(a)) t.node(a).grad.data[i] += g.data[i];
            } else {
                if (t.requires_grad(b)) t.node(b).grad.data[i] += g.data[i];
            }
        }
    };
    return id;
}

Tape::NodeId Tape::scale(NodeId a, float c) {
    const Tensor& va = val(a);
    Tensor out = Tensor::zeros(va.shape);
    for (int64_t i = 0; i < out.numel(); ++i) out.data[i] = va.data[i] * c;
    NodeId id = push(std::move(out), requires_grad(a), {});
    node(id).back = [a, c, id](Tape& t) {
        const Tensor& g = t.grad(id);
        for (int64_t i = 0; i < g.numel(); ++i) t.node(a).grad.data[i] += g.data[i] * c;
    };
    return id;
}

Tape::NodeId Tape::add_const(NodeId a, float c) {
    const Tensor& va = val(a);
    Tensor out = Tensor::zeros(va.shape);
    for (int64_t i = 0; i < out.numel(); ++i) out.data[i] = va.data[i] + c;
    NodeId id = push(std::move(out), requires_grad(a), {});
    node(id).back = [a, id](Tape& t) {
        const Tensor& g = t.grad(id);
        for (int64_t i = 0; i < g.numel(); ++i) t.node(a).grad.data[i] += g.data[i];
    };
    return id;
}

Tape::NodeId Tape::relu(NodeId a) {
    const Tensor& va = val(a);
    Tensor out = Tensor::zeros(va.shape);
    for (int64_t i = 0; i < out.numel(); ++i) out.data[i] = va.data[i] > 0.0f ? va.data[i] : 0.0f;
    NodeId id = push(std::move(out), requires_grad(a), {});
    node(id).back = [a, id](Tape& t) {
        const Tensor& g = t.grad(id);
        const Tensor& va2 = t.val(a);
        for (int64_t i = 0; i < g.numel(); ++i)
            if (va2.data[i] > 0.0f) t.node(a).grad.data[i] += g.data[i];
    };
    return id;
}

Tape::NodeId Tape::tanh_op(NodeId a) {
    const Tensor& va = val(a);
    Tensor out = Tensor::zeros(va.shape);
    for (int64_t i = 0; i < out.numel(); ++i) out.data[i] = std::tanh(va.data[i]);
    NodeId id = push(std::move(out), requires_grad(a), {});
    node(id).back = [a, id](Tape& t) {
        const Tensor& g = t.grad(id);
        const Tensor& y = t.val(id);
        for (int64_t i = 0; i < g.numel(); ++i)
            t.node(a).grad.data[i] += g.data[i] * (1.0f - y.data[i] * y.data[i]);
    };
    return id;
}

Tape::NodeId Tape::exp_op(NodeId a) {
    const Tensor& va = val(a);
    Tensor out = Tensor::zeros(va.shape);
    for (int64_t i = 0; i < out.numel(); ++i) out.data[i] = std::exp(va.data[i]);
    NodeId id = push(std::move(out), requires_grad(a), {});
    node(id).back = [a, id](Tape& t) {
        const Tensor& g = t.grad(id);
        const Tensor& y = t.val(id);
        for (int64_t i = 0; i < g.numel(); ++i) t.node(a).grad.data[i] += g.data[i] * y.data[i];
    };
    return id;
}

Tape::NodeId Tape::log_op(NodeId a) {
    const Tensor& va = val(a);
    Tensor out = Tensor::zeros(va.shape);
    for (int64_t i = 0; i < out.numel(); ++i) out.data[i] = std::log(va.data[i]);
    NodeId id = push(std::move(out), requires_grad(a), {});
    node(id).back = [a, id](Tape& t) {
        const Tensor& g = t.grad(id);
        const Tensor& va2 = t.val(a);
        for (int64_t i = 0; i < g.numel(); ++i) t.node(a).grad.data[i] += g.data[i] / va2.data[i];
    };
    return id;
}

Tape::NodeId Tape::square(NodeId a) {
    const Tensor& va = val(a);
    Tensor out = Tensor::zeros(va.shape);
    for (int64_t i = 0; i < out.numel(); ++i) out.data[i] = va.data[i] * va.data[i];
    NodeId id = push(std::move(out), requires_grad(a), {});
    node(id).back = [a, id](Tape& t) {
        const Tensor& g = t.grad(id);
        const Tensor& va2 = t.val(a);
        for (int64_t i = 0; i < g.numel(); ++i)
            t.node(a).grad.data[i] += g.data[i] * 2.0f * va2.data[i];
    };
    return id;
}

Tape::NodeId Tape::clamp_op(NodeId a, float lo, float hi) {
    require(lo <= hi, "clamp: lo must not exceed hi");
    const Tensor& va = val(a);
    Tensor out = Tensor::zeros(va.shape);
    for (int64_t i = 0; i < out.numel(); ++i) {
        float v = va.data[i];
        out.data[i] = v < lo ? lo : (v > hi ? hi : v);
    }
    NodeId id = push(std::move(out), requires_grad(a), {});
    node(id).back = [a, lo, hi, id](Tape& t) {
        const Tensor& g = t.grad(id);
        const Tensor& va2 = t.val(a);
        for (int64_t i = 0; i < g.numel(); ++i)
            if (va2.data[i] >= lo && va2.data[i] <= hi) t.node(a).grad.data[i] += g.data[i];
    };
    return id;
}

Tape::NodeId Tape::matmul(NodeId a, NodeId w) {
    const Tensor& va = val(a);
    const Tensor& vw = val(w);
    const int64_t m = va.rows(), k = va.cols(), k2 = vw.rows(), n = vw.cols();
    require(k == k2, "matmul: inner dims " + shape_str(va) + " x " + shape_str(vw));
    Tensor out = Tensor::zeros({m, n});
    // i,k,j loop order with a per-row double buffer keeps the inner loop
    // vectorizable while preserving 64-bit accumulation
    std::vector<double> acc(static_cast<size_t>(n));
    for (int64_t i = 0; i < m; ++i) {
        std::fill(acc.begin(), acc.end(), 0.0);
        for (int64_t kk = 0; kk < k; ++kk) {
            const double aik = va.data[static_cast<size_t>(i * k + kk)];
            const float* wrow = &vw.data[static_cast<size_t>(kk * n)];
            for (int64_t j = 0; j < n; ++j) acc[static_cast<size_t>(j)] += aik * wrow[j];
        }
        for (int64_t j = 0; j < n; ++j)
            out.data[static_cast<size_t>(i * n + j)] = static_cast<float>(acc[static_cast<size_t>(j)]);
    }
    bool rg = requires_grad(a) || requires_grad(w);
    NodeId id = push(std::move(out), rg, {});
    node(id).back = [a, w, m, k, n, id](Tape& t) {
        const Tensor& g = t.grad(id);
        const Tensor& va2 = t.val(a);
        const Tensor& vw2 = t.val(w);
        if (t.requires_grad(a)) {
            // dA = dC * W^T
            Tensor& ga = t.node(a).grad;
            std::vector<double> acc(static_cast<size_t>(k));
            for (int64_t i = 0; i < m; ++i) {
                std::fill(acc.begin(), acc.end(), 0.0);
                for (int64_t j = 0; j < n; ++j) {
                    const double gij = g.data[static_cast<size_t>(i * n + j)];
                    for (int64_t kk = 0; kk < k; ++kk)
                        acc[static_cast<size_t>(kk)] += gij * vw2.data[static_cast<size_t>(kk * n + j)];
                }
                for (int64_t kk = 0; kk < k; ++kk)
                    ga.data[static_cast<size_t>(i * k + kk)] +=
                        static_cast<float>(acc[static_cast<size_t>(kk)]);
            }
        }
        if (t.requires_grad(w)) {
            // dW = A^T * dC
            Tensor& gw = t.node(w).grad;
            std::vector<double> acc(static_cast<size_t>(n));
            for (int64_t kk = 0; kk < k; ++kk) {
                std::fill(acc.begin(), acc.end(), 0.0);
                for (int64_t i = 0; i < m; ++i) {
                    const double aik = va2.data[static_cast<size_t>(i * k + kk)];
                    const float* grow = &g.data[static_cast<size_t>(i * n)];
                    for (int64_t j = 0; j < n; ++j) acc[static_cast<size_t>(j)] += aik * grow[j];
                }
                for (int64_t j = 0; j < n; ++j)
                    gw.data[static_cast<size_t>(kk * n + j)] +=
                        static_cast<float>(acc[static_cast<size_t>(j)]);
            }
        }
    };
    return id;
}

Tape::NodeId Tape::add_rowvec(NodeId a, NodeId b) {
    const Tensor& va = val(a);
    const Tensor& vb = val(b);
    const int64_t m = va.rows(), n = va.cols();
    require(vb.numel() == n, "add_rowvec: vector length " + shape_str(vb) + " vs cols " + std::to_string(n));
    Tensor out = Tensor::zeros(va.shape);
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j)
            out.data[static_cast<size_t>(i * n + j)] =
                va.data[static_cast<size_t>(i * n + j)] + vb.data[static_cast<size_t>(j)];
    bool rg = requires_grad(a) || requires_grad(b);
    NodeId id = push(std::move(out), rg, {});
    node(id).back = [a, b, m, n, id](Tape& t) {
        const Tensor& g = t.grad(id);
        if (t.requires_grad(a)) {
            Tensor& ga = t.node(a).grad;
            for (int64_t i = 0; i < g.numel(); ++i) ga.data[i] += g.data[i];
        }
        if (t.requires_grad(b)) {
            Tensor& gb = t.node(b).grad;
            for (int64_t j = 0; j < n; ++j) {
                double s = 0.0;
                for (int64_t i = 0; i < m; ++i) s += g.data[static_cast<size_t>(i * n + j)];
                gb.data[static_cast<size_t>(j)] += static_cast<float>(s);
            }
        }
    };
    return id;
}

Tape::NodeId Tape::sub_colvec(NodeId a, NodeId c) {
    const Tensor& va = val(a);
    const Tensor& vc = val(c);
    const int64_t m = va.rows(), n = va.cols();
    require(vc.rows() == m && vc.cols() == 1, "sub_colvec: column shape " + shape_str(vc));
    Tensor out = Tensor::zeros(va.shape);
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j)
            out.data[static_cast<size_t>(i * n + j)] =
                va.data[static_cast<size_t>(i * n + j)] - vc.data[static_cast<size_t>(i)];
    bool rg = requires_grad(a) || requires_grad(c);
    NodeId id = push(std::move(out), rg, {});
    node(id).back = [a, c, m, n, id](Tape& t) {
        const Tensor& g = t.grad(id);
        if (t.requires_grad(a)) {
            Tensor& ga = t.node(a).grad;
            for (int64_t i = 0; i < g.numel(); ++i) ga.data[i] += g.data[i];
        }
        if (t.requires_grad(c)) {
            Tensor& gc = t.node(c).grad;
            for (int64_t i = 0; i < m; ++i) {
                double s = 0.0;
                for (int64_t j = 0; j < n; ++j) s += g.data[static_cast<size_t>(i * n + j)];
                gc.data[static_cast<size_t>(i)] -= static_cast<float>(s);
            }
        }
    };
    return id;
}

Tape::NodeId Tape::mul_colvec(NodeId a, NodeId c) {
    const Tensor& va = val(a);
    const Tensor& vc = val(c);
    const int64_t m = va.rows(), n = va.cols();
    require(vc.rows() == m && vc.cols() == 1, "mul_colvec: column shape " + shape_str(vc));
    Tensor out = Tensor::zeros(va.shape);
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j)
            out.data[static_cast<size_t>(i * n + j)] =
                va.data[static_cast<size_t>(i * n + j)] * vc.data[static_cast<size_t>(i)];
    bool rg = requires_grad(a) || requires_grad(c);
    NodeId id = push(std::move(out), rg, {});
    node(id).back = [a, c, m, n, id](Tape& t) {
        const Tensor& g = t.grad(id);
        const Tensor& va2 = t.val(a);
        const Tensor& vc2 = t.val(c);
        if (t.requires_grad(a)) {
            Tensor& ga = t.node(a).grad;
            for (int64_t i = 0; i < m; ++i)
                for (int64_t j = 0; j < n; ++j)
                    ga.data[static_cast<size_t>(i * n + j)] +=
                        g.data[static_cast<size_t>(i * n + j)] * vc2.data[static_cast<size_t>(i)];
        }
        if (t.requires_grad(c)) {
            Tensor& gc = t.node(c).grad;
            for (int64_t i = 0; i < m; ++i) {
                double s = 0.0;
                for (int64_t j = 0; j < n; ++j)
                    s += static_cast<double>(g.data[static_cast<size_t>(i * n + j)]) *
                         va2.data[static_cast<size_t>(i * n + j)];
                gc.data[static_cast<size_t>(i)] += static_cast<float>(s);
            }
        }
    };
    return id;
}

Tape::NodeId Tape::concat_cols(NodeId a, NodeId b) {
    const Tensor& va = val(a);
    const Tensor& vb = val(b);
    const int64_t m = va.rows(), n1 = va.cols(), m2 = vb.rows(), n2 = vb.cols();
    require(m == m2, "concat_cols: row mismatch " + shape_str(va) + " vs " + shape_str(vb));
    Tensor out = Tensor::zeros({m, n1 + n2});
    for (int64_t i = 0; i < m; ++i) {
        for (int64_t j = 0; j < n1; ++j)
            out.data[static_cast<size_t>(i * (n1 + n2) + j)] = va.data[static_cast<size_t>(i * n1 + j)];
        for (int64_t j = 0; j < n2; ++j)
            out.data[static_cast<size_t>(i * (n1 + n2) + n1 + j)] = vb.data[static_cast<size_t>(i * n2 + j)];
    }
    bool rg = requires_grad(a) || requires_grad(b);
    NodeId id = push(std::move(out), rg, {});
    node(id).back = [a, b, m, n1, n2, id](Tape& t) {
        const Tensor& g = t.grad(id);
        if (t.requires_grad(a)) {
            Tensor& ga = t.node(a).grad;
            for (int64_t i = 0; i < m; ++i)
                for (int64_t j = 0; j < n1; ++j)
                    ga.data[static_cast<size_t>(i * n1 + j)] +=
                        g.data[static_cast<size_t>(i * (n1 + n2) + j)];
        }
        if (t.requires_grad(b)) {
            Tensor& gb = t.node(b).grad;
            for (int64_t i = 0; i < m; ++i)
                for (int64_t j = 0; j < n2; ++j)
                    gb.data[static_cast<size_t>(i * n2 + j)] +=
                        g.data[static_cast<size_t>(i * (n1 + n2) + n1 + j)];
        }
    };
    return id;
}

Tape::NodeId Tape::gather_cols(NodeId a, std::vector<int> idx) {
    const Tensor& va = val(a);
    const int64_t m = va.rows(), n = va.cols();
    require(static_cast<int64_t>(idx.size()) == m, "gather_cols: need one index per row");
    for (int j : idx) require(j >= 0 && j < n, "gather_cols: column index out of range");
    Tensor out = Tensor::zeros({m, 1});
    for (int64_t i = 0; i < m; ++i)
        out.data[static_cast<size_t>(i)] = va.data[static_cast<size_t>(i * n + idx[static_cast<size_t>(i)])];
    NodeId id = push(std::move(out), requires_grad(a), {});
    node(id).back = [a, idx = std::move(idx), n, id](Tape& t) {
        const Tensor& g = t.grad(id);
        Tensor& ga = t.node(a).grad;
        for (int64_t i = 0; i < g.numel(); ++i)
            ga.data[static_cast<size_t>(i * n + idx[static_cast<size_t>(i)])] += g.data[i];
    };
    return id;
}

Tape::NodeId Tape::sum_cols(NodeId a) {
    const Tensor& va = val(a);
    const int64_t m = va.rows(), n = va.cols();
    Tensor out = Tensor::zeros({m, 1});
    for (int64_t i = 0; i < m; ++i) {
        double s = 0.0;
        for (int64_t j = 0; j < n; ++j) s += va.data[static_cast<size_t>(i * n + j)];
        out.data[static_cast<size_t>(i)] = static_cast<float>(s);
    }
    NodeId id = push(std::move(out), requires_grad(a), {});
    node(id).back = [a, m, n, id](Tape& t) {
        const Tensor& g = t.grad(id);
        Tensor& ga = t.node(a).grad;
        for (int64_t i = 0; i < m; ++i)
            for (int64_t j = 0; j < n; ++j)
                ga.data[static_cast<size_t>(i * n + j)] += g.data[static_cast<size_t>(i)];
    };
    return id;
}

Tape::NodeId Tape::logsumexp_cols(NodeId a) {
    const Tensor& va = val(a);
    const int64_t m = va.rows(), n = va.cols();
    Tensor out = Tensor::zeros({m, 1});
    for (int64_t i = 0; i < m; ++i) {
        float mx = va.data[static_cast<size_t>(i * n)];
        for (int64_t j = 1; j < n; ++j) mx = std::max(mx, va.data[static_cast<size_t>(i * n + j)]);
        double s = 0.0;
        for (int64_t j = 0; j < n; ++j)
            s += std::exp(static_cast<double>(va.data[static_cast<size_t>(i * n + j)]) - mx);
        out.data[static_cast<size_t>(i)] = static_cast<float>(mx + std::log(s));
    }
    NodeId id = push(std::move(out), requires_grad(a), {});
    node(id).back = [a, m, n, id](Tape& t) {
        const Tensor& g = t.grad(id);
        const Tensor& va2 = t.val(a);
        const Tensor& lse = t.val(id);
        Tensor& ga = t.node(a).grad;
        // d lse / d x_j = exp(x_j - lse) = softmax_j
        for (int64_t i = 0; i < m; ++i) {
            const float gi = g.data[static_cast<size_t>(i)];
            const float li = lse.data[static_cast<size_t>(i)];
            for (int64_t j = 0; j < n; ++j)
                ga.data[static_cast<size_t>(i * n + j)] +=
                    gi * std::exp(va2.data[static_cast<size_t>(i * n + j)] - li);
        }
    };
    return id;
}

Tape::NodeId Tape::slice_flat(NodeId a, int64_t offset, std::vector<int64_t> shape) {
    const Tensor& va = val(a);
    const int64_t len = Tensor::numel_of(shape);
    require(offset >= 0 && offset + len <= va.numel(), "slice_flat: window out of range");
    Tensor out = Tensor::zeros(std::move(shape));
    for (int64_t i = 0; i < len; ++i) out.data[i] = va.data[static_cast<size_t>(offset + i)];
    NodeId id = push(std::move(out), requires_grad(a), {});
    node(id).back = [a, offset, len, id](Tape& t) {
        const Tensor& g = t.grad(id);
        Tensor& ga = t.node(a).grad;
        for (int64_t i = 0; i < len; ++i) ga.data[static_cast<size_t>(offset + i)] += g.data[i];
    };
    return id;
}

Tape::NodeId Tape::sum(NodeId a) {
    const Tensor& va = val(a);
    double s = 0.0;
    for (float v : va.data) s += v;
    NodeId id = push(Tensor({1}, {static_cast<float>(s)}), requires_grad(a), {});
    node(id).back = [a, id](Tape& t) {
        const float g = t.grad(id).data[0];
        Tensor& ga = t.node(a).grad;
        for (int64_t i = 0; i < ga.numel(); ++i) ga.data[i] += g;
    };
    return id;
}

Tape::NodeId Tape::mean(NodeId a) {
    const Tensor& va = val(a);
    const int64_t n = va.numel();
    double s = 0.0;
    for (float v : va.data) s += v;
    NodeId id = push(Tensor({1}, {static_cast<float>(s / static_cast<double>(n))}),
                     requires_grad(a), {});
    node(id).back = [a, n, id](Tape& t) {
        const float g = t.grad(id).data[0] / static_cast<float>(n);
        Tensor& ga = t.node(a).grad;
        for (int64_t i = 0; i < ga.numel(); ++i) ga.data[i] += g;
    };
    return id;
}

void Tape::backward(NodeId loss) {
    require(!backward_done_, "backward: tape already replayed; rebuild the tape instead");
    require(val(loss).numel() == 1, "backward: loss must be scalar, got " + shape_str(val(loss)));
    backward_done_ = true;
    node(loss).grad.data[0] = 1.0f;
    for (NodeId i = loss; i >= 0; --i) {
        Node& n = node(i);
        if (n.back && n.rg) n.back(*this);
    }
}

float finite_diff_check(const TapeFn& f, const Tensor& x, float step) {
    require(step > 0.0f, "finite_diff_check: step must be positive");
    Tensor analytic;
    {
        Tape tape;
        Tape::NodeId in = tape.leaf(x, true);
        Tape::NodeId loss = f(tape, in);
        require(tape.val(loss).numel() == 1, "finite_diff_check: f must be scalar-valued");
        tape.backward(loss);
        analytic = tape.grad(in);
    }
    auto value_at = [&f](const Tensor& p) -> double {
        Tape tape;
        Tape::NodeId in = tape.leaf(p, false);
        Tape::NodeId loss = f(tape, in);
        return tape.val(loss).data[0];
    };
    float worst = 0.0f;
    Tensor probe = x;
    for (int64_t i = 0; i < x.numel(); ++i) {
        const float orig = probe.data[i];
        probe.data[i] = orig + step;
        const double fp = value_at(probe);
        probe.data[i] = orig - step;
        const double fm = value_at(probe);
        probe.data[i] = orig;
        const double numeric = (fp - fm) / (2.0 * static_cast<double>(step));
        const double a = analytic.data[i];
        const double denom = std::max({std::fabs(a), std::fabs(numeric), 1e-8});
        const float rel = static_cast<float>(std::fabs(a - numeric) / denom);
        worst = std::max(worst, rel);
    }
    return worst;
}

} // namespace add
