#pragma once

// Dense row-major tensors, a static computation graph with reverse-mode
// differentiation, finite-difference gradient verification, and binary
// parameter snapshots. Templated on the scalar type: double is the
// verification-grade mode, float the fast training mode.
//
// Reproducibility contract, relied on by the training module:
//   - forward is bit-deterministic given inputs, dropout seed, and
//     row offset (dropout masks depend on the global row index, not the
//     position inside the current batch);
//   - backward accumulates parameter gradients in a fixed batch-row-major
//     order per consuming node, into per-consumer buffers that persist
//     between backward calls and are folded into ParamStore gradients in a
//     fixed consumer order after every call. Running micro-batches in
//     sequence therefore produces the exact addition sequence of one full
//     batch, and gradients are bit-identical. zero_grad marks the optimizer
//     step boundary; between two zero_grad calls one Runner must own a
//     parameter's accumulation.

#include <cstdint>
#include <cstring>
#include <map>
#include <string>
#include <vector>

#include "newsclf/common.hpp"

namespace newsclf {

inline std::int64_t numel(const std::vector<std::int64_t>& shape) {
  std::int64_t n = 1;
  for (std::int64_t d : shape) n *= d;
  return n;
}

inline std::string shape_str(const std::vector<std::int64_t>& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + ")";
}

template <typename T>
struct TensorT {
  std::vector<std::int64_t> shape;
  std::vector<T> values;

  TensorT() = default;
  explicit TensorT(std::vector<std::int64_t> s) : shape(std::move(s)) {
    for (std::int64_t d : shape) require(d > 0, "tensor dimensions must be positive");
    values.assign(static_cast<std::size_t>(numel(shape)), T(0));
  }

  static TensorT zeros(std::vector<std::int64_t> s) { return TensorT(std::move(s)); }
  static TensorT full(std::vector<std::int64_t> s, T v) {
    TensorT t(std::move(s));
    for (T& x : t.values) x = v;
    return t;
  }
  static TensorT scalar(T v) {
    TensorT t({1});
    t.values[0] = v;
    return t;
  }
  static TensorT of(std::vector<std::int64_t> s, std::vector<T> v) {
    TensorT t;
    t.shape = std::move(s);
    t.values = std::move(v);
    require(static_cast<std::int64_t>(t.values.size()) == numel(t.shape),
            "value count does not match shape " + shape_str(t.shape));
    return t;
  }

  std::int64_t size() const { return static_cast<std::int64_t>(values.size()); }
  int ndim() const { return static_cast<int>(shape.size()); }
  std::int64_t dim(int i) const { return shape[static_cast<std::size_t>(i)]; }

  T& operator[](std::int64_t i) { return values[static_cast<std::size_t>(i)]; }
  const T& operator[](std::int64_t i) const { return values[static_cast<std::size_t>(i)]; }

  bool same_shape(const TensorT& o) const { return shape == o.shape; }
};

using Tensor = TensorT<double>;

template <typename T>
class ParamStore {
 public:
  void add(const std::string& name, TensorT<T> value, bool trainable = true) {
    require(entries_.count(name) == 0, "parameter '" + name + "' already exists");
    Entry e;
    e.grad = TensorT<T>::zeros(value.shape);
    e.value = std::move(value);
    e.trainable = trainable;
    entries_.emplace(name, std::move(e));
  }

  bool has(const std::string& name) const { return entries_.count(name) != 0; }
  TensorT<T>& value(const std::string& name) { return find(name).value; }
  const TensorT<T>& value(const std::string& name) const { return find(name).value; }
  TensorT<T>& grad(const std::string& name) { return find(name).grad; }
  const TensorT<T>& grad(const std::string& name) const { return find(name).grad; }
  bool trainable(const std::string& name) const { return find(name).trainable; }
  void set_trainable(const std::string& name, bool v) { find(name).trainable = v; }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (const auto& [k, _] : entries_) out.push_back(k);
    return out;
  }

  // Gradients of trainable parameters only; frozen names are absent.
  std::map<std::string, const TensorT<T>*> gradients() const {
    std::map<std::string, const TensorT<T>*> out;
    for (const auto& [k, e] : entries_)
      if (e.trainable) out.emplace(k, &e.grad);
    return out;
  }

  void zero_grad() {
    for (auto& [_, e] : entries_)
      for (T& g : e.grad.values) g = T(0);
    ++grad_epoch_;
  }

  // Bumped by zero_grad; lets a Runner detect optimizer-step boundaries and
  // reset its per-consumer gradient accumulators.
  std::uint64_t grad_epoch() const { return grad_epoch_; }

  std::int64_t total_size() const {
    std::int64_t n = 0;
    for (const auto& [_, e] : entries_) n += e.value.size();
    return n;
  }
  std::int64_t trainable_size() const {
    std::int64_t n = 0;
    for (const auto& [_, e] : entries_)
      if (e.trainable) n += e.value.size();
    return n;
  }

 private:
  struct Entry {
    TensorT<T> value, grad;
    bool trainable = true;
  };
  Entry& find(const std::string& name) {
    auto it = entries_.find(name);
    if (it == entries_.end()) fail_validation("unknown parameter '" + name + "'");
    return it->second;
  }
  const Entry& find(const std::string& name) const {
    return const_cast<ParamStore*>(this)->find(name);
  }
  std::map<std::string, Entry> entries_;
  std::uint64_t grad_epoch_ = 0;
};

enum class Op {
  input,
  param,
  matmul,          // (..., M, K) x (K, N) shared or (..., K, N) batched
  matmul_bt,       // (..., M, K) x (N, K)^T, used by the tied vocabulary head
  add,             // same shape
  add_bias,        // (..., N) + (N)
  mul_scalar,      // a * s where s is a one-element node
  scale_const,     // a * f0
  transpose_last2,
  split_heads,     // (B, L, D) -> (B, H, L, D/H), H = i0
  merge_heads,     // inverse of split_heads
  softmax,         // last dim
  softmax_masked,  // rows over key positions where mask is nonzero; masked entries exactly 0
  layer_norm,      // last dim; eps = f0; inputs x, gamma, beta
  embedding,       // ids (...) x table (V, D) -> (..., D)
  add_pos,         // (B, L, D) + rows 0..L-1 of (Lmax, D)
  relu,
  gelu,            // exact erf form
  tanh_act,
  dropout,         // rate = f0; identity in eval mode
  select_pos0,     // (B, L, D) -> (B, D), the CLS position
  gather_pairs,    // x (B, L, D), pairs (P, 2) of (row, pos) -> (P, D)
  cross_entropy_sum,  // logits (..., C), integer targets (...), optional weights (C); raw sum
  bce_sum,            // logits (..., C), targets (..., C) in [0,1], optional weights (C); raw sum
  sum_all,
};

struct Node {
  Op op = Op::input;
  std::vector<int> in;
  std::string name;  // input/param nodes
  double f0 = 0;
  int i0 = 0;
};

const char* op_name(Op op);

// Static acyclic graph; node inputs always precede the node, so creation
// order is a topological order. Immutable once built (builders only append).
template <typename T>
class Graph {
 public:
  int input(const std::string& name) { return push({Op::input, {}, name, 0, 0}); }
  int param(const std::string& name) { return push({Op::param, {}, name, 0, 0}); }
  int matmul(int a, int b) { return push({Op::matmul, {a, b}, "", 0, 0}); }
  int matmul_bt(int a, int b) { return push({Op::matmul_bt, {a, b}, "", 0, 0}); }
  int add(int a, int b) { return push({Op::add, {a, b}, "", 0, 0}); }
  int add_bias(int a, int b) { return push({Op::add_bias, {a, b}, "", 0, 0}); }
  int mul_scalar(int a, int s) { return push({Op::mul_scalar, {a, s}, "", 0, 0}); }
  int scale(int a, double c) { return push({Op::scale_const, {a}, "", c, 0}); }
  int transpose_last2(int a) { return push({Op::transpose_last2, {a}, "", 0, 0}); }
  int split_heads(int a, int heads) { return push({Op::split_heads, {a}, "", 0, heads}); }
  int merge_heads(int a) { return push({Op::merge_heads, {a}, "", 0, 0}); }
  int softmax(int a) { return push({Op::softmax, {a}, "", 0, 0}); }
  int softmax_masked(int a, int mask) { return push({Op::softmax_masked, {a, mask}, "", 0, 0}); }
  int layer_norm(int x, int gamma, int beta, double eps = 1e-5) {
    return push({Op::layer_norm, {x, gamma, beta}, "", eps, 0});
  }
  int embedding(int ids, int table) { return push({Op::embedding, {ids, table}, "", 0, 0}); }
  int add_pos(int x, int table) { return push({Op::add_pos, {x, table}, "", 0, 0}); }
  int relu(int a) { return push({Op::relu, {a}, "", 0, 0}); }
  int gelu(int a) { return push({Op::gelu, {a}, "", 0, 0}); }
  int tanh_act(int a) { return push({Op::tanh_act, {a}, "", 0, 0}); }
  int dropout(int a, double rate) {
    require(rate >= 0 && rate < 1, "dropout rate must be in [0,1)");
    return push({Op::dropout, {a}, "", rate, 0});
  }
  int select_pos0(int a) { return push({Op::select_pos0, {a}, "", 0, 0}); }
  int gather_pairs(int x, int pairs) { return push({Op::gather_pairs, {x, pairs}, "", 0, 0}); }
  int cross_entropy_sum(int logits, int targets, int weights = -1) {
    return push({Op::cross_entropy_sum,
                 weights < 0 ? std::vector<int>{logits, targets}
                             : std::vector<int>{logits, targets, weights},
                 "", 0, 0});
  }
  int bce_sum(int logits, int targets, int weights = -1) {
    return push({Op::bce_sum,
                 weights < 0 ? std::vector<int>{logits, targets}
                             : std::vector<int>{logits, targets, weights},
                 "", 0, 0});
  }
  int sum_all(int a) { return push({Op::sum_all, {a}, "", 0, 0}); }

  const std::vector<Node>& nodes() const { return nodes_; }
  int size() const { return static_cast<int>(nodes_.size()); }
  std::string label(int id) const {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    std::string s = std::string(op_name(n.op)) + "#" + std::to_string(id);
    if (!n.name.empty()) s += "(" + n.name + ")";
    return s;
  }

 private:
  int push(Node n) {
    for (int i : n.in)
      require(i >= 0 && i < size(), "graph error: node input out of range");
    nodes_.push_back(std::move(n));
    return size() - 1;
  }
  std::vector<Node> nodes_;
};

// Owns the activation and gradient buffers for one execution, so separate
// Runner instances over the same graph may run concurrently.
template <typename T>
class Runner {
 public:
  Runner(const Graph<T>& g, ParamStore<T>& store)
      : g_(&g), store_(&store), seen_epoch_(store.grad_epoch()) {}

  bool check_finite = false;

  // Evaluates every node. Dropout draws from (seed, node id, global row),
  // where the global row is row_offset + the row inside this batch.
  const TensorT<T>& forward(const std::map<std::string, TensorT<T>>& inputs, int out_node,
                            std::uint64_t dropout_seed = 0, bool train_mode = false,
                            std::int64_t row_offset = 0);

  // Accumulates into the gradients of trainable parameters. Call
  // ParamStore::zero_grad between optimizer steps, not between micro-batches.
  void backward(int loss_node);

  const TensorT<T>& value(int node) const { return vals_[static_cast<std::size_t>(node)]; }
  const TensorT<T>& grad(int node) const { return grads_[static_cast<std::size_t>(node)]; }

 private:
  [[noreturn]] void dim_error(int node, const std::string& detail) const {
    fail_validation("dimension error at " + g_->label(node) + ": " + detail);
  }
  void eval_node(int id, const std::map<std::string, TensorT<T>>& inputs);
  void grad_node(int id);

  const Graph<T>* g_;
  ParamStore<T>* store_;
  std::vector<TensorT<T>> vals_, grads_, masks_;
  // Per-(parameter, consumer node) gradient accumulators. They survive
  // across backward calls within one zero_grad epoch so micro-batch rows
  // extend the same addition chains a full batch would build.
  std::map<std::pair<std::string, int>, TensorT<T>> accum_;
  std::uint64_t seed_ = 0;
  std::uint64_t seen_epoch_ = 0;
  bool train_ = false;
  std::int64_t row_offset_ = 0;
};

struct GradCheckConfig {
  double epsilon = 1e-5;
  double tolerance = 1e-4;
  int samples_per_param = 50;
  std::uint64_t seed = 1234;        // coordinate sampling
  std::uint64_t dropout_seed = 0;   // forwarded to every evaluation
  bool train_mode = false;
  std::string corrupt_param;        // fault injection: scales one analytic gradient
  double corrupt_factor = 1.0;
};

struct GradCheckEntry {
  std::string param;
  std::int64_t coord = -1;
  double analytic = 0;
  double numeric = 0;
  double rel_err = 0;
  bool passed = true;
};

struct GradCheckReport {
  bool passed = true;
  std::vector<GradCheckEntry> per_param;  // worst coordinate of each trainable parameter
  std::string summary() const;
};

// Central finite differences against the analytic gradients. A tolerance
// violation is reported, never thrown. Double precision only.
GradCheckReport grad_check(const Graph<double>& g, ParamStore<double>& store,
                           const std::map<std::string, Tensor>& inputs, int loss_node,
                           const GradCheckConfig& cfg = {});

// Flat binary snapshot of parameter values (little-endian), plus a text
// manifest `<name>\t<dtype>\t<dims>` at <path>.manifest. Trainable flags
// are runtime state and are not persisted.
template <typename T>
void save_params(const ParamStore<T>& store, const std::string& path);

template <typename T>
ParamStore<T> load_params(const std::string& path);

}  // namespace newsclf
