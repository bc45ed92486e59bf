#pragma once

#include <deque>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "merits/matrix.hpp"

namespace merits {

// A trainable weight. Optimizer state lives here so AdamW moments survive
// across minibatch graphs.
struct Parameter {
    std::string name;
    Matrix value;
    Matrix grad;
    Matrix adam_m;
    Matrix adam_v;

    Parameter() = default;
    Parameter(std::string n, std::size_t rows, std::size_t cols)
        : name(std::move(n)), value(rows, cols), grad(rows, cols) {}

    void zero_grad() { grad.fill(0.0); }
};

namespace ad {

// Reverse-mode tape. A Graph is built per forward pass (one minibatch or one
// evaluation), backward() walks the tape once, then the graph is discarded.
// Node addresses are stable because nodes live in a deque.
class Graph;

struct Node {
    Matrix owned;
    const Matrix* value = nullptr;  // points at `owned` or at an external Parameter
    Matrix grad;
    bool needs_grad = false;
    std::function<void()> back;  // null for leaves
    Parameter* param = nullptr;

    const Matrix& v() const { return *value; }
};

using Var = Node*;

class Graph {
  public:
    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    Var leaf(Matrix v, bool needs_grad = false);
    Var param(Parameter& p);
    Var zeros(std::size_t rows, std::size_t cols);

    Var matmul(Var a, Var b);     // a * b
    Var matmul_nt(Var a, Var b);  // a * b^T
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var add_rowvec(Var a, Var bias);  // bias broadcast over rows, bias is 1 x n
    Var hadamard(Var a, Var b);
    Var scale(Var a, double s);
    Var one_minus(Var a);  // 1 - a, elementwise

    Var tanh_op(Var a);
    Var sigmoid_op(Var a);
    Var relu_op(Var a);

    Var concat_cols(Var a, Var b);
    Var slice_cols(Var a, std::size_t j0, std::size_t j1);
    Var concat_rows(const std::vector<Var>& parts);
    Var slice_rows(Var a, std::size_t i0, std::size_t i1);

    // Row-wise softmax. When key_valid is given, invalid columns get weight
    // exactly 0 and receive exactly zero gradient.
    Var softmax_rows(Var scores, const std::vector<bool>* key_valid = nullptr);

    // Row-wise layer normalization with learned gain and bias (both 1 x n).
    Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);

    // Mean of embedding rows selected by `ids`; result is 1 x dim.
    Var embedding_mean(Var table, const std::vector<int>& ids);

    // Mean cross entropy over rows whose mask bit is set (all rows when mask
    // is null), divided by `normalizer` instead of the local row count so
    // several calls can be summed into one batch loss. Returns a 1x1 node.
    Var cross_entropy(Var logits, const std::vector<int>& labels,
                      const std::vector<bool>* row_mask, double normalizer);

    void backward(Var loss);

  private:
    Var make(Matrix value, bool needs_grad);
    Var make_from(const Matrix* external, bool needs_grad);

    std::deque<Node> nodes_;
    std::vector<Node*> order_;
    std::vector<Node*> param_nodes_;
    std::unordered_map<const Parameter*, Node*> param_lookup_;
    bool ran_backward_ = false;
};

// Convenience: run `fn` on a throwaway graph and return the value, for
// evaluation-mode forwards. Identical arithmetic to the training path.
Matrix eval(const std::function<Var(Graph&)>& fn);

}  // namespace ad
}  // namespace merits
