#pragma once

#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

#include "namelink/mat.hpp"
#include "namelink/rng.hpp"

namespace namelink::ad {

struct Var {
    int i = -1;
    bool valid() const { return i >= 0; }
};

// Deterministic dropout source: the mask for a given (seed, stream, call,
// element) tuple never depends on thread scheduling or call history.
struct DropoutState {
    std::uint64_t seed = 0;
    std::uint64_t stream = 0;
    std::uint64_t counter = 0;

    std::uint64_t next_call() { return counter++; }
};

// Records a computation graph over matrices and replays it in reverse for
// gradients. Leaves may reference external storage (parameters) so building
// a tape never copies the parameter store.
class Tape {
public:
    struct Node {
        Mat value;                 // owned value (unused when shared != nullptr)
        const Mat* shared = nullptr;
        Mat grad;
        std::function<void(Tape&, const Mat&)> back;  // receives grad of this node
    };

    Var leaf(const Mat* external) {
        nodes_.push_back(Node{Mat(), external, Mat(), nullptr});
        return Var{static_cast<int>(nodes_.size()) - 1};
    }

    Var constant(Mat v) {
        nodes_.push_back(Node{std::move(v), nullptr, Mat(), nullptr});
        return Var{static_cast<int>(nodes_.size()) - 1};
    }

    Var make(Mat v, std::function<void(Tape&, const Mat&)> back) {
        nodes_.push_back(Node{std::move(v), nullptr, Mat(), std::move(back)});
        return Var{static_cast<int>(nodes_.size()) - 1};
    }

    const Mat& val(Var v) const {
        const Node& n = nodes_[v.i];
        return n.shared ? *n.shared : n.value;
    }

    Mat& grad(Var v) {
        Node& n = nodes_[v.i];
        if (n.grad.a.empty() && n.grad.rows == 0 && n.grad.cols == 0)
            n.grad = Mat(val(v).rows, val(v).cols);
        return n.grad;
    }

    // Read-only gradient access; empty when the node never received gradient.
    const Mat& grad_view(Var v) const { return nodes_[v.i].grad; }

    // Accumulates d(loss)/d(node) for every node reachable from loss.
    // loss must be 1x1.
    void backward(Var loss);

    std::size_t node_count() const { return nodes_.size(); }

private:
    std::vector<Node> nodes_;
};

// ---- elementwise and linear ops ----
Var add(Tape& t, Var a, Var b);
Var sub(Tape& t, Var a, Var b);
Var mul(Tape& t, Var a, Var b);
Var scale(Tape& t, Var a, double c);
Var add_rowvec(Tape& t, Var a, Var v);   // v is 1 x cols, broadcast over rows
Var matmul(Tape& t, Var a, Var b);       // a(r x k) * b(k x c)
Var matmul_nt(Tape& t, Var a, Var b);    // a(r x k) * b(c x k)^T
Var transpose(Tape& t, Var a);

// ---- structure ops ----
Var concat_rows(Tape& t, Var a, Var b);
Var slice_rows(Tape& t, Var a, int r0, int r1);
Var slice_cols(Tape& t, Var a, int c0, int c1);
Var concat_cols(Tape& t, const std::vector<Var>& parts);
Var select_row(Tape& t, Var a, int r);   // 1 x cols view of row r

// Mean over each group of row indices; output has one row per group.
Var pool_rows(Tape& t, Var a, const std::vector<std::vector<int>>& groups);

// Row gather (embedding lookup); backward scatter-adds into the table.
Var gather_rows(Tape& t, Var a, const std::vector<int>& rows);

// ---- nonlinearities ----
Var row_softmax(Tape& t, Var a);
Var log_softmax_rows(Tape& t, Var a);
Var gelu(Tape& t, Var a);
Var layer_norm(Tape& t, Var x, Var gamma, Var beta, double eps);
Var l2_normalize_rows(Tape& t, Var a, double min_norm = 1e-12);
Var dropout(Tape& t, Var a, double rate, DropoutState& state);

// ---- reductions for losses ----

// coeff * sum of a[r, c] over the entry list -> 1x1.
Var pick_sum(Tape& t, Var a, const std::vector<std::pair<int, int>>& entries, double coeff);

// Gathers a[row, c] for each c in cols -> 1 x |cols|.
Var pick_row_cols(Tape& t, Var a, int row, const std::vector<int>& cols);

// Sum over k of binary cross-entropy between sigmoid(logit_k) and target_k
// -> 1x1. Numerically stable for large |logit|.
Var bce_sum(Tape& t, Var logits, const std::vector<double>& targets);

// alpha * s + beta with 1x1 parameter vars broadcast over s.
Var scalar_affine(Tape& t, Var s, Var alpha, Var beta);

// Weighted sum of 1x1 vars -> 1x1.
Var lincomb(Tape& t, const std::vector<Var>& xs, const std::vector<double>& ws);

}  // namespace namelink::ad
