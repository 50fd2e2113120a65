#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "fits/tensor.hpp"

namespace fits {

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// Named parameter leaves with gradient buffers; iteration order is
// insertion order so serialization and Adam sweeps are deterministic.
class ParamStore {
 public:
  struct Entry {
    Tensor value;
    Tensor grad;
  };

  Entry& add(const std::string& name, Tensor init);
  Entry& at(const std::string& name);
  const Entry& at(const std::string& name) const;
  bool contains(const std::string& name) const;
  void zero_grad();
  std::size_t parameter_count() const;
  const std::vector<std::string>& names() const { return order_; }

 private:
  std::vector<std::string> order_;
  std::unordered_map<std::string, Entry> entries_;
};

// Eager tape: each op computes its value on construction; backward()
// replays the tape in reverse. Topological order equals insertion order.
class Tape {
 public:
  // A forward-only tape skips recording backward closures (cheaper for
  // finite-difference sweeps); backward() on it throws.
  explicit Tape(bool forward_only = false);

  Var constant(Tensor v);
  Var param(ParamStore& ps, const std::string& name);

  const Tensor& val(Var v) const;
  double scalar(Var v) const;
  const Tensor& grad(Var v) const;

  // --- op set ---
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var add_n(const std::vector<Var>& xs);
  Var mul(Var a, Var b);  // elementwise
  Var scale(Var a, double c);
  Var matmul(Var a, Var b);     // [m,k] x [k,n]
  Var matmul_nt(Var a, Var b);  // [m,k] x [n,k]^T
  Var linear(Var x, Var w, Var b);  // x[m,k], w[n,k], optional b[n]
  Var relu(Var a);
  Var sigmoid(Var a);
  Var log_clamped(Var a);  // log(max(x, 1e-12))
  Var softmax_vec(Var a);
  // softmax over each row; columns with col_valid==0 get zero weight
  Var masked_softmax_rows(Var a, std::vector<std::uint8_t> col_valid);
  Var layer_norm_rows(Var x, Var gain, Var bias);
  Var embedding_rows(Var table, std::vector<int> ids);
  Var row(Var a, int r);
  Var slice_rows(Var a, int r0, int r1);
  Var slice_cols(Var a, int c0, int c1);
  Var concat_cols(const std::vector<Var>& xs);
  Var matvec(Var w, Var x);  // [m,n] x [n] -> [m]
  Var vecmat(Var x, Var a);  // [m] x [m,n] -> [n]
  Var slice_vec(Var a, int i0, int i1);
  Var concat_vec(Var a, Var b);
  Var stack_scalars(const std::vector<Var>& xs);
  Var stack_rows(const std::vector<Var>& rows);
  Var replace_row(Var a, int r, Var rowvec);
  Var mean_rows(Var a);  // column means of [m,n] -> [n]
  Var mean_vec(Var a);   // scalar
  Var sum(Var a);        // scalar
  Var dot(Var a, Var b);
  Var cosine(Var a, Var b);  // denominator clamped at 1e-12
  Var cross_entropy_logits(Var logits, int target);

  // Fused relational multi-head attention round over a sparse edge list:
  // message_i = e[head_i] + rels[i]; per-target softmax over in-edges of
  // scaled Q·K head dots; out[t] = e[t] + relu(wo . concat_heads(agg)),
  // rows without in-edges pass through unchanged. attention_out, when
  // given, receives the head-averaged weight of each edge.
  Var gat_pass(Var e, Var rels, Var wq, Var wk, Var wv, Var wo,
               const std::vector<std::pair<int, int>>& edges, int heads,
               std::vector<double>* attention_out = nullptr);

  void backward(Var loss);
  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::function<void(Tape&, int)> back;  // nullptr for leaves
    ParamStore::Entry* param = nullptr;
  };

  template <class F>
  int push(Tensor value, F&& back) {
    Node n;
    n.value = std::move(value);
    if (!forward_only_) n.back = std::forward<F>(back);
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
  }
  int push(Tensor value, std::nullptr_t) {
    Node n;
    n.value = std::move(value);
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
  }
  Tensor& gbuf(int id) { return nodes_[id].grad; }
  const Tensor& v(int id) const { return nodes_[id].value; }

  bool forward_only_ = false;
  std::vector<Node> nodes_;
};

}  // namespace fits
