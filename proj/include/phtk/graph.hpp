#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "phtk/tensor.hpp"

namespace phtk::grad {

enum class Op : std::uint8_t {
    Leaf,
    MatMul,
    Add,
    Sub,
    Mul,
    Tanh,
    Relu,
    Square,
    Scale,
    AddRowVec,
    SoftmaxRows,
    LogSoftmaxRows,
    LogSumExpRows,
    SumAll,
    MeanAll,
    PairwiseSqDist,
    ConcatCols,
    RepeatRows,
    Detach,
    StCombine,
    Ctc,
};

const char* op_name(Op op);

// Dynamic tape: nodes are appended in execution order and visited once,
// in reverse, by backward().
class Graph {
  public:
    struct Node {
        Op op = Op::Leaf;
        std::vector<int> inputs;
        Tensor value;
        Tensor grad;  // allocated lazily by backward()
        bool requires_grad = false;
        double scalar_arg = 0.0;          // Scale factor / RepeatRows count
        std::vector<int> int_args;        // Ctc target labels
    };

    int leaf(Tensor value, bool requires_grad = false);

    int matmul(int a, int b);
    int add(int a, int b);
    int sub(int a, int b);
    int mul(int a, int b);
    int tanh_(int x);
    int relu_(int x);
    int square_(int x);
    int scale(int x, double c);
    int add_rowvec(int x, int bias);
    int softmax_rows(int x);
    int log_softmax_rows(int x);
    int logsumexp_rows(int x);
    int sum_all(int x);
    int mean_all(int x);
    // out[t][k] = squared euclidean distance between row t of z and row k of m
    int pairwise_sqdist(int z, int m);
    int concat_cols(int a, int b);
    int repeat_rows(int v, std::size_t count);
    int detach(int x);
    // Forward picks the argmax centroid row per frame; backward behaves like
    // matmul(weights, centroids) so the soft-mixture gradient flows.
    int st_combine(int weights, int centroids);
    // logprobs: T x (V+1) log-softmax output, blank at the last index.
    int ctc(int logprobs, const std::vector<int>& target);

    void backward(int loss_node);

    const Tensor& value(int id) const { return nodes_[id].value; }
    const Tensor& gradient(int id) const;
    bool requires_grad(int id) const { return nodes_[id].requires_grad; }
    std::size_t num_nodes() const { return nodes_.size(); }

    // Recomputes every non-leaf value from the leaves and checks bitwise
    // equality with the recorded values.
    bool replay_matches() const;

  private:
    int push(Node n);
    Tensor compute(const Node& n) const;
    void accumulate(int loss_node);

    std::vector<Node> nodes_;
};

// CTC feasibility: minimum number of frames needed for a target.
std::size_t ctc_min_frames(const std::vector<int>& target);

// Log-space forward algorithm; returns -log p(target | logprobs).
double ctc_forward_loss(const Tensor& logprobs, const std::vector<int>& target);

double logsumexp2(double a, double b);

}  // namespace phtk::grad
