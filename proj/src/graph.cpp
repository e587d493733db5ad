#include "phtk/graph.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace phtk::grad {

namespace {
constexpr double kNegInf = -std::numeric_limits<double>::infinity();
}

const char* op_name(Op op) {
    switch (op) {
        case Op::Leaf: return "leaf";
        case Op::MatMul: return "matmul";
        case Op::Add: return "add";
        case Op::Sub: return "sub";
        case Op::Mul: return "mul";
        case Op::Tanh: return "tanh";
        case Op::Relu: return "relu";
        case Op::Square: return "square";
        case Op::Scale: return "scale";
        case Op::AddRowVec: return "add_rowvec";
        case Op::SoftmaxRows: return "softmax_rows";
        case Op::LogSoftmaxRows: return "log_softmax_rows";
        case Op::LogSumExpRows: return "logsumexp_rows";
        case Op::SumAll: return "sum_all";
        case Op::MeanAll: return "mean_all";
        case Op::PairwiseSqDist: return "pairwise_sqdist";
        case Op::ConcatCols: return "concat_cols";
        case Op::RepeatRows: return "repeat_rows";
        case Op::Detach: return "detach";
        case Op::StCombine: return "st_combine";
        case Op::Ctc: return "ctc";
    }
    return "?";
}

double logsumexp2(double a, double b) {
    if (a == kNegInf) return b;
    if (b == kNegInf) return a;
    double hi = std::max(a, b), lo = std::min(a, b);
    return hi + std::log1p(std::exp(lo - hi));
}

std::size_t ctc_min_frames(const std::vector<int>& target) {
    std::size_t repeats = 0;
    for (std::size_t i = 1; i < target.size(); ++i)
        if (target[i] == target[i - 1]) ++repeats;
    return target.size() + repeats;
}

namespace {

void check_binary_shapes(const Tensor& a, const Tensor& b, const char* what) {
    if (!a.same_shape(b) && !a.is_scalar() && !b.is_scalar())
        throw DimensionError(std::string(what) + ": incompatible shapes " +
                             a.shape_str() + " and " + b.shape_str());
}

Tensor broadcast_binary(const Tensor& a, const Tensor& b, double (*f)(double, double)) {
    if (a.same_shape(b)) {
        Tensor out = a;
        for (std::size_t i = 0; i < out.size(); ++i)
            out.data[i] = f(a.data[i], b.data[i]);
        return out;
    }
    if (b.is_scalar()) {
        Tensor out = a;
        for (std::size_t i = 0; i < out.size(); ++i)
            out.data[i] = f(a.data[i], b.data[0]);
        return out;
    }
    // a is scalar
    Tensor out = b;
    for (std::size_t i = 0; i < out.size(); ++i)
        out.data[i] = f(a.data[0], b.data[i]);
    return out;
}

// Extended label sequence with blanks: B l1 B l2 ... B lL B
std::vector<int> ctc_extended(const std::vector<int>& target, int blank) {
    std::vector<int> ext(2 * target.size() + 1, blank);
    for (std::size_t i = 0; i < target.size(); ++i) ext[2 * i + 1] = target[i];
    return ext;
}

std::vector<double> ctc_alpha(const Tensor& lp, const std::vector<int>& ext) {
    const std::size_t T = lp.rows(), S = ext.size();
    std::vector<double> alpha(T * S, kNegInf);
    alpha[0 * S + 0] = lp.at(0, ext[0]);
    if (S > 1) alpha[0 * S + 1] = lp.at(0, ext[1]);
    for (std::size_t t = 1; t < T; ++t) {
        for (std::size_t s = 0; s < S; ++s) {
            double acc = alpha[(t - 1) * S + s];
            if (s >= 1) acc = logsumexp2(acc, alpha[(t - 1) * S + s - 1]);
            if (s >= 2 && ext[s] != ext[s - 2])
                acc = logsumexp2(acc, alpha[(t - 1) * S + s - 2]);
            alpha[t * S + s] = acc == kNegInf ? kNegInf : acc + lp.at(t, ext[s]);
        }
    }
    return alpha;
}

std::vector<double> ctc_beta(const Tensor& lp, const std::vector<int>& ext) {
    const std::size_t T = lp.rows(), S = ext.size();
    std::vector<double> beta(T * S, kNegInf);
    beta[(T - 1) * S + S - 1] = lp.at(T - 1, ext[S - 1]);
    if (S > 1) beta[(T - 1) * S + S - 2] = lp.at(T - 1, ext[S - 2]);
    for (std::size_t t = T - 1; t-- > 0;) {
        for (std::size_t s = 0; s < S; ++s) {
            double acc = beta[(t + 1) * S + s];
            if (s + 1 < S) acc = logsumexp2(acc, beta[(t + 1) * S + s + 1]);
            if (s + 2 < S && ext[s] != ext[s + 2])
                acc = logsumexp2(acc, beta[(t + 1) * S + s + 2]);
            beta[t * S + s] = acc == kNegInf ? kNegInf : acc + lp.at(t, ext[s]);
        }
    }
    return beta;
}

}  // namespace

double ctc_forward_loss(const Tensor& logprobs, const std::vector<int>& target) {
    const std::size_t T = logprobs.rows();
    const int blank = static_cast<int>(logprobs.cols()) - 1;
    if (ctc_min_frames(target) > T)
        throw InfeasibleTargetError(
            "ctc: target of length " + std::to_string(target.size()) +
            " needs at least " + std::to_string(ctc_min_frames(target)) +
            " frames, got " + std::to_string(T));
    for (int l : target)
        if (l < 0 || l >= blank)
            throw DataError("ctc: label " + std::to_string(l) + " out of range");
    auto ext = ctc_extended(target, blank);
    auto alpha = ctc_alpha(logprobs, ext);
    const std::size_t S = ext.size();
    double logz = alpha[(T - 1) * S + S - 1];
    if (S > 1) logz = logsumexp2(logz, alpha[(T - 1) * S + S - 2]);
    return -logz;
}

int Graph::push(Node n) {
    for (int in : n.inputs)
        if (nodes_[in].requires_grad) n.requires_grad = true;
    if (n.op != Op::Leaf && !n.value.all_finite())
        throw DataError(std::string("non-finite value out of ") + op_name(n.op));
    if (n.op == Op::Detach) n.requires_grad = false;
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
}

int Graph::leaf(Tensor value, bool requires_grad) {
    Node n;
    n.op = Op::Leaf;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
}

Tensor Graph::compute(const Node& n) const {
    auto& in = n.inputs;
    auto V = [&](int i) -> const Tensor& { return nodes_[in[i]].value; };
    switch (n.op) {
        case Op::Leaf:
            return n.value;
        case Op::MatMul: {
            const Tensor &a = V(0), &b = V(1);
            Tensor out(a.rows(), b.cols());
            for (std::size_t i = 0; i < a.rows(); ++i)
                for (std::size_t k = 0; k < a.cols(); ++k) {
                    double av = a.at(i, k);
                    if (av == 0.0) continue;
                    for (std::size_t j = 0; j < b.cols(); ++j)
                        out.at(i, j) += av * b.at(k, j);
                }
            return out;
        }
        case Op::Add:
            return broadcast_binary(V(0), V(1), [](double x, double y) { return x + y; });
        case Op::Sub:
            return broadcast_binary(V(0), V(1), [](double x, double y) { return x - y; });
        case Op::Mul:
            return broadcast_binary(V(0), V(1), [](double x, double y) { return x * y; });
        case Op::Tanh: {
            Tensor out = V(0);
            for (auto& v : out.data) v = std::tanh(v);
            return out;
        }
        case Op::Relu: {
            Tensor out = V(0);
            for (auto& v : out.data) v = v > 0 ? v : 0.0;
            return out;
        }
        case Op::Square: {
            Tensor out = V(0);
            for (auto& v : out.data) v = v * v;
            return out;
        }
        case Op::Scale: {
            Tensor out = V(0);
            for (auto& v : out.data) v *= n.scalar_arg;
            return out;
        }
        case Op::AddRowVec: {
            const Tensor &x = V(0), &b = V(1);
            Tensor out = x;
            for (std::size_t i = 0; i < x.rows(); ++i)
                for (std::size_t j = 0; j < x.cols(); ++j)
                    out.at(i, j) += b.data[j];
            return out;
        }
        case Op::SoftmaxRows: {
            const Tensor& x = V(0);
            Tensor out = x;
            for (std::size_t i = 0; i < x.rows(); ++i) {
                double mx = kNegInf;
                for (std::size_t j = 0; j < x.cols(); ++j) mx = std::max(mx, x.at(i, j));
                double sum = 0;
                for (std::size_t j = 0; j < x.cols(); ++j) {
                    out.at(i, j) = std::exp(x.at(i, j) - mx);
                    sum += out.at(i, j);
                }
                for (std::size_t j = 0; j < x.cols(); ++j) out.at(i, j) /= sum;
            }
            return out;
        }
        case Op::LogSoftmaxRows: {
            const Tensor& x = V(0);
            Tensor out = x;
            for (std::size_t i = 0; i < x.rows(); ++i) {
                double mx = kNegInf;
                for (std::size_t j = 0; j < x.cols(); ++j) mx = std::max(mx, x.at(i, j));
                double sum = 0;
                for (std::size_t j = 0; j < x.cols(); ++j) sum += std::exp(x.at(i, j) - mx);
                double lse = mx + std::log(sum);
                for (std::size_t j = 0; j < x.cols(); ++j) out.at(i, j) = x.at(i, j) - lse;
            }
            return out;
        }
        case Op::LogSumExpRows: {
            const Tensor& x = V(0);
            Tensor out(x.rows(), 1);
            for (std::size_t i = 0; i < x.rows(); ++i) {
                double mx = kNegInf;
                for (std::size_t j = 0; j < x.cols(); ++j) mx = std::max(mx, x.at(i, j));
                double sum = 0;
                for (std::size_t j = 0; j < x.cols(); ++j) sum += std::exp(x.at(i, j) - mx);
                out.at(i, 0) = mx + std::log(sum);
            }
            return out;
        }
        case Op::SumAll: {
            double s = 0;
            for (double v : V(0).data) s += v;
            return Tensor::scalar(s);
        }
        case Op::MeanAll: {
            double s = 0;
            for (double v : V(0).data) s += v;
            return Tensor::scalar(s / static_cast<double>(V(0).size()));
        }
        case Op::PairwiseSqDist: {
            const Tensor &z = V(0), &m = V(1);
            Tensor out(z.rows(), m.rows());
            for (std::size_t t = 0; t < z.rows(); ++t)
                for (std::size_t k = 0; k < m.rows(); ++k) {
                    double d = 0;
                    for (std::size_t j = 0; j < z.cols(); ++j) {
                        double diff = z.at(t, j) - m.at(k, j);
                        d += diff * diff;
                    }
                    out.at(t, k) = d;
                }
            return out;
        }
        case Op::ConcatCols: {
            const Tensor &a = V(0), &b = V(1);
            Tensor out(a.rows(), a.cols() + b.cols());
            for (std::size_t i = 0; i < a.rows(); ++i) {
                for (std::size_t j = 0; j < a.cols(); ++j) out.at(i, j) = a.at(i, j);
                for (std::size_t j = 0; j < b.cols(); ++j)
                    out.at(i, a.cols() + j) = b.at(i, j);
            }
            return out;
        }
        case Op::RepeatRows: {
            const Tensor& v = V(0);
            auto count = static_cast<std::size_t>(n.scalar_arg);
            Tensor out(count, v.cols());
            for (std::size_t i = 0; i < count; ++i)
                for (std::size_t j = 0; j < v.cols(); ++j) out.at(i, j) = v.data[j];
            return out;
        }
        case Op::Detach:
            return V(0);
        case Op::StCombine: {
            const Tensor &w = V(0), &m = V(1);
            Tensor out(w.rows(), m.cols());
            for (std::size_t t = 0; t < w.rows(); ++t) {
                std::size_t best = 0;
                for (std::size_t k = 1; k < w.cols(); ++k)
                    if (w.at(t, k) > w.at(t, best)) best = k;
                for (std::size_t j = 0; j < m.cols(); ++j)
                    out.at(t, j) = m.at(best, j);
            }
            return out;
        }
        case Op::Ctc:
            return Tensor::scalar(ctc_forward_loss(V(0), n.int_args));
    }
    throw std::logic_error("unknown op");
}

int Graph::matmul(int a, int b) {
    if (nodes_[a].value.cols() != nodes_[b].value.rows())
        throw DimensionError("matmul: inner dimensions disagree, " +
                             nodes_[a].value.shape_str() + " vs " +
                             nodes_[b].value.shape_str());
    Node n;
    n.op = Op::MatMul;
    n.inputs = {a, b};
    n.value = compute(n);
    return push(std::move(n));
}

int Graph::add(int a, int b) {
    check_binary_shapes(nodes_[a].value, nodes_[b].value, "add");
    Node n;
    n.op = Op::Add;
    n.inputs = {a, b};
    n.value = compute(n);
    return push(std::move(n));
}

int Graph::sub(int a, int b) {
    check_binary_shapes(nodes_[a].value, nodes_[b].value, "sub");
    Node n;
    n.op = Op::Sub;
    n.inputs = {a, b};
    n.value = compute(n);
    return push(std::move(n));
}

int Graph::mul(int a, int b) {
    check_binary_shapes(nodes_[a].value, nodes_[b].value, "mul");
    Node n;
    n.op = Op::Mul;
    n.inputs = {a, b};
    n.value = compute(n);
    return push(std::move(n));
}

int Graph::tanh_(int x) {
    Node n;
    n.op = Op::Tanh;
    n.inputs = {x};
    n.value = compute(n);
    return push(std::move(n));
}

int Graph::relu_(int x) {
    Node n;
    n.op = Op::Relu;
    n.inputs = {x};
    n.value = compute(n);
    return push(std::move(n));
}

int Graph::square_(int x) {
    Node n;
    n.op = Op::Square;
    n.inputs = {x};
    n.value = compute(n);
    return push(std::move(n));
}

int Graph::scale(int x, double c) {
    Node n;
    n.op = Op::Scale;
    n.inputs = {x};
    n.scalar_arg = c;
    n.value = compute(n);
    return push(std::move(n));
}

int Graph::add_rowvec(int x, int bias) {
    if (nodes_[bias].value.rows() != 1 ||
        nodes_[bias].value.cols() != nodes_[x].value.cols())
        throw DimensionError("add_rowvec: bias " + nodes_[bias].value.shape_str() +
                             " does not match " + nodes_[x].value.shape_str());
    Node n;
    n.op = Op::AddRowVec;
    n.inputs = {x, bias};
    n.value = compute(n);
    return push(std::move(n));
}

int Graph::softmax_rows(int x) {
    Node n;
    n.op = Op::SoftmaxRows;
    n.inputs = {x};
    n.value = compute(n);
    return push(std::move(n));
}

int Graph::log_softmax_rows(int x) {
    Node n;
    n.op = Op::LogSoftmaxRows;
    n.inputs = {x};
    n.value = compute(n);
    return push(std::move(n));
}

int Graph::logsumexp_rows(int x) {
    Node n;
    n.op = Op::LogSumExpRows;
    n.inputs = {x};
    n.value = compute(n);
    return push(std::move(n));
}

int Graph::sum_all(int x) {
    Node n;
    n.op = Op::SumAll;
    n.inputs = {x};
    n.value = compute(n);
    return push(std::move(n));
}

int Graph::mean_all(int x) {
    Node n;
    n.op = Op::MeanAll;
    n.inputs = {x};
    n.value = compute(n);
    return push(std::move(n));
}

int Graph::pairwise_sqdist(int z, int m) {
    if (nodes_[z].value.cols() != nodes_[m].value.cols())
        throw DimensionError("pairwise_sqdist: feature widths disagree, " +
                             nodes_[z].value.shape_str() + " vs " +
                             nodes_[m].value.shape_str());
    Node n;
    n.op = Op::PairwiseSqDist;
    n.inputs = {z, m};
    n.value = compute(n);
    return push(std::move(n));
}

int Graph::concat_cols(int a, int b) {
    if (nodes_[a].value.rows() != nodes_[b].value.rows())
        throw DimensionError("concat_cols: row counts disagree");
    Node n;
    n.op = Op::ConcatCols;
    n.inputs = {a, b};
    n.value = compute(n);
    return push(std::move(n));
}

int Graph::repeat_rows(int v, std::size_t count) {
    if (nodes_[v].value.rows() != 1)
        throw DimensionError("repeat_rows: input must be a single row");
    Node n;
    n.op = Op::RepeatRows;
    n.inputs = {v};
    n.scalar_arg = static_cast<double>(count);
    n.value = compute(n);
    return push(std::move(n));
}

int Graph::detach(int x) {
    Node n;
    n.op = Op::Detach;
    n.inputs = {x};
    n.value = nodes_[x].value;
    return push(std::move(n));
}

int Graph::st_combine(int weights, int centroids) {
    if (nodes_[weights].value.cols() != nodes_[centroids].value.rows())
        throw DimensionError("st_combine: weight width must equal centroid count");
    Node n;
    n.op = Op::StCombine;
    n.inputs = {weights, centroids};
    n.value = compute(n);
    return push(std::move(n));
}

int Graph::ctc(int logprobs, const std::vector<int>& target) {
    Node n;
    n.op = Op::Ctc;
    n.inputs = {logprobs};
    n.int_args = target;
    n.value = compute(n);
    return push(std::move(n));
}

const Tensor& Graph::gradient(int id) const {
    return nodes_[id].grad;
}

void Graph::backward(int loss_node) {
    if (!nodes_[loss_node].value.is_scalar())
        throw DimensionError("backward: loss node must be scalar, got " +
                             nodes_[loss_node].value.shape_str());
    accumulate(loss_node);
}

void Graph::accumulate(int loss_node) {
    // Per-pass gradients; leaves accumulate across passes.
    std::vector<Tensor> g(nodes_.size());
    auto ensure = [&](int id) -> Tensor& {
        if (g[id].size() == 0) {
            g[id] = nodes_[id].value;
            std::fill(g[id].data.begin(), g[id].data.end(), 0.0);
        }
        return g[id];
    };
    ensure(loss_node).data[0] = 1.0;

    for (int id = loss_node; id >= 0; --id) {
        Node& n = nodes_[id];
        if (!n.requires_grad || g[id].size() == 0) continue;
        const Tensor& go = g[id];
        auto& in = n.inputs;
        auto V = [&](int i) -> const Tensor& { return nodes_[in[i]].value; };
        auto needs = [&](int i) { return nodes_[in[i]].requires_grad; };

        switch (n.op) {
            case Op::Leaf:
                break;
            case Op::MatMul: {
                const Tensor &a = V(0), &b = V(1);
                if (needs(0)) {
                    Tensor& ga = ensure(in[0]);
                    for (std::size_t i = 0; i < a.rows(); ++i)
                        for (std::size_t j = 0; j < b.cols(); ++j) {
                            double gv = go.at(i, j);
                            if (gv == 0.0) continue;
                            for (std::size_t k = 0; k < a.cols(); ++k)
                                ga.at(i, k) += gv * b.at(k, j);
                        }
                }
                if (needs(1)) {
                    Tensor& gb = ensure(in[1]);
                    for (std::size_t i = 0; i < a.rows(); ++i)
                        for (std::size_t k = 0; k < a.cols(); ++k) {
                            double av = a.at(i, k);
                            if (av == 0.0) continue;
                            for (std::size_t j = 0; j < b.cols(); ++j)
                                gb.at(k, j) += av * go.at(i, j);
                        }
                }
                break;
            }
            case Op::Add:
            case Op::Sub: {
                double sgn = n.op == Op::Sub ? -1.0 : 1.0;
                if (needs(0)) {
                    Tensor& ga = ensure(in[0]);
                    if (V(0).same_shape(n.value))
                        for (std::size_t i = 0; i < go.size(); ++i)
                            ga.data[i] += go.data[i];
                    else
                        for (double v : go.data) ga.data[0] += v;
                }
                if (needs(1)) {
                    Tensor& gb = ensure(in[1]);
                    if (V(1).same_shape(n.value))
                        for (std::size_t i = 0; i < go.size(); ++i)
                            gb.data[i] += sgn * go.data[i];
                    else
                        for (double v : go.data) gb.data[0] += sgn * v;
                }
                break;
            }
            case Op::Mul: {
                const Tensor &a = V(0), &b = V(1);
                auto side = [&](int which) {
                    const Tensor& other = which == 0 ? b : a;
                    Tensor& gx = ensure(in[which]);
                    const Tensor& self = V(which);
                    if (self.same_shape(n.value)) {
                        for (std::size_t i = 0; i < go.size(); ++i)
                            gx.data[i] += go.data[i] *
                                          (other.is_scalar() && !self.is_scalar()
                                               ? other.data[0]
                                               : other.data[i]);
                    } else {  // self is the scalar side
                        for (std::size_t i = 0; i < go.size(); ++i)
                            gx.data[0] += go.data[i] * other.data[i];
                    }
                };
                if (needs(0)) side(0);
                if (needs(1)) side(1);
                break;
            }
            case Op::Tanh: {
                Tensor& gx = ensure(in[0]);
                for (std::size_t i = 0; i < go.size(); ++i) {
                    double y = n.value.data[i];
                    gx.data[i] += go.data[i] * (1.0 - y * y);
                }
                break;
            }
            case Op::Relu: {
                Tensor& gx = ensure(in[0]);
                for (std::size_t i = 0; i < go.size(); ++i)
                    if (V(0).data[i] > 0) gx.data[i] += go.data[i];
                break;
            }
            case Op::Square: {
                Tensor& gx = ensure(in[0]);
                for (std::size_t i = 0; i < go.size(); ++i)
                    gx.data[i] += 2.0 * V(0).data[i] * go.data[i];
                break;
            }
            case Op::Scale: {
                Tensor& gx = ensure(in[0]);
                for (std::size_t i = 0; i < go.size(); ++i)
                    gx.data[i] += n.scalar_arg * go.data[i];
                break;
            }
            case Op::AddRowVec: {
                if (needs(0)) {
                    Tensor& gx = ensure(in[0]);
                    for (std::size_t i = 0; i < go.size(); ++i)
                        gx.data[i] += go.data[i];
                }
                if (needs(1)) {
                    Tensor& gb = ensure(in[1]);
                    for (std::size_t i = 0; i < go.rows(); ++i)
                        for (std::size_t j = 0; j < go.cols(); ++j)
                            gb.data[j] += go.at(i, j);
                }
                break;
            }
            case Op::SoftmaxRows: {
                Tensor& gx = ensure(in[0]);
                for (std::size_t i = 0; i < go.rows(); ++i) {
                    double dot = 0;
                    for (std::size_t j = 0; j < go.cols(); ++j)
                        dot += go.at(i, j) * n.value.at(i, j);
                    for (std::size_t j = 0; j < go.cols(); ++j)
                        gx.at(i, j) += n.value.at(i, j) * (go.at(i, j) - dot);
                }
                break;
            }
            case Op::LogSoftmaxRows: {
                Tensor& gx = ensure(in[0]);
                for (std::size_t i = 0; i < go.rows(); ++i) {
                    double gsum = 0;
                    for (std::size_t j = 0; j < go.cols(); ++j) gsum += go.at(i, j);
                    for (std::size_t j = 0; j < go.cols(); ++j)
                        gx.at(i, j) += go.at(i, j) - std::exp(n.value.at(i, j)) * gsum;
                }
                break;
            }
            case Op::LogSumExpRows: {
                Tensor& gx = ensure(in[0]);
                const Tensor& x = V(0);
                for (std::size_t i = 0; i < x.rows(); ++i)
                    for (std::size_t j = 0; j < x.cols(); ++j)
                        gx.at(i, j) +=
                            go.at(i, 0) * std::exp(x.at(i, j) - n.value.at(i, 0));
                break;
            }
            case Op::SumAll: {
                Tensor& gx = ensure(in[0]);
                for (auto& v : gx.data) v += go.data[0];
                break;
            }
            case Op::MeanAll: {
                Tensor& gx = ensure(in[0]);
                double c = go.data[0] / static_cast<double>(gx.size());
                for (auto& v : gx.data) v += c;
                break;
            }
            case Op::PairwiseSqDist: {
                const Tensor &z = V(0), &m = V(1);
                if (needs(0)) {
                    Tensor& gz = ensure(in[0]);
                    for (std::size_t t = 0; t < z.rows(); ++t)
                        for (std::size_t k = 0; k < m.rows(); ++k) {
                            double gv = 2.0 * go.at(t, k);
                            if (gv == 0.0) continue;
                            for (std::size_t j = 0; j < z.cols(); ++j)
                                gz.at(t, j) += gv * (z.at(t, j) - m.at(k, j));
                        }
                }
                if (needs(1)) {
                    Tensor& gm = ensure(in[1]);
                    for (std::size_t t = 0; t < z.rows(); ++t)
                        for (std::size_t k = 0; k < m.rows(); ++k) {
                            double gv = 2.0 * go.at(t, k);
                            if (gv == 0.0) continue;
                            for (std::size_t j = 0; j < z.cols(); ++j)
                                gm.at(k, j) += gv * (m.at(k, j) - z.at(t, j));
                        }
                }
                break;
            }
            case Op::ConcatCols: {
                const std::size_t ca = V(0).cols();
                if (needs(0)) {
                    Tensor& ga = ensure(in[0]);
                    for (std::size_t i = 0; i < go.rows(); ++i)
                        for (std::size_t j = 0; j < ca; ++j)
                            ga.at(i, j) += go.at(i, j);
                }
                if (needs(1)) {
                    Tensor& gb = ensure(in[1]);
                    for (std::size_t i = 0; i < go.rows(); ++i)
                        for (std::size_t j = 0; j < V(1).cols(); ++j)
                            gb.at(i, j) += go.at(i, ca + j);
                }
                break;
            }
            case Op::RepeatRows: {
                Tensor& gv = ensure(in[0]);
                for (std::size_t i = 0; i < go.rows(); ++i)
                    for (std::size_t j = 0; j < go.cols(); ++j)
                        gv.data[j] += go.at(i, j);
                break;
            }
            case Op::Detach:
                break;
            case Op::StCombine: {
                // surrogate gradient: behave like matmul(weights, centroids)
                const Tensor &w = V(0), &m = V(1);
                if (needs(0)) {
                    Tensor& gw = ensure(in[0]);
                    for (std::size_t t = 0; t < w.rows(); ++t)
                        for (std::size_t j = 0; j < m.cols(); ++j) {
                            double gv = go.at(t, j);
                            if (gv == 0.0) continue;
                            for (std::size_t k = 0; k < w.cols(); ++k)
                                gw.at(t, k) += gv * m.at(k, j);
                        }
                }
                if (needs(1)) {
                    Tensor& gm = ensure(in[1]);
                    for (std::size_t t = 0; t < w.rows(); ++t)
                        for (std::size_t k = 0; k < w.cols(); ++k) {
                            double wv = w.at(t, k);
                            if (wv == 0.0) continue;
                            for (std::size_t j = 0; j < m.cols(); ++j)
                                gm.at(k, j) += wv * go.at(t, j);
                        }
                }
                break;
            }
            case Op::Ctc: {
                const Tensor& lp = V(0);
                const int blank = static_cast<int>(lp.cols()) - 1;
                auto ext = ctc_extended(n.int_args, blank);
                auto alpha = ctc_alpha(lp, ext);
                auto beta = ctc_beta(lp, ext);
                const std::size_t T = lp.rows(), S = ext.size();
                double logz = alpha[(T - 1) * S + S - 1];
                if (S > 1) logz = logsumexp2(logz, alpha[(T - 1) * S + S - 2]);
                Tensor& gx = ensure(in[0]);
                for (std::size_t t = 0; t < T; ++t)
                    for (std::size_t s = 0; s < S; ++s) {
                        double ab = alpha[t * S + s] + beta[t * S + s];
                        if (ab == kNegInf) continue;
                        // alpha and beta both contain the emission at t
                        double d = std::exp(ab - lp.at(t, ext[s]) - logz);
                        gx.at(t, ext[s]) -= go.data[0] * d;
                    }
                break;
            }
        }
    }

    // Persist: leaves accumulate, intermediates hold the latest pass.
    for (std::size_t id = 0; id < nodes_.size(); ++id) {
        if (!nodes_[id].requires_grad || g[id].size() == 0) continue;
        if (nodes_[id].op == Op::Leaf && nodes_[id].grad.size() != 0) {
            for (std::size_t i = 0; i < g[id].size(); ++i)
                nodes_[id].grad.data[i] += g[id].data[i];
        } else {
            nodes_[id].grad = std::move(g[id]);
        }
    }
}

bool Graph::replay_matches() const {
    for (const Node& n : nodes_) {
        if (n.op == Op::Leaf) continue;
        Tensor re = compute(n);
        if (re.data != n.value.data || re.shape != n.value.shape) return false;
    }
    return true;
}

}  // namespace phtk::grad
