#include "newsclf/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace newsclf {

const char* op_name(Op op) {
  switch (op) {
    case Op::input: return "input";
    case Op::param: return "param";
    case Op::matmul: return "matmul";
    case Op::matmul_bt: return "matmul_bt";
    case Op::add: return "add";
    case Op::add_bias: return "add_bias";
    case Op::mul_scalar: return "mul_scalar";
    case Op::scale_const: return "scale";
    case Op::transpose_last2: return "transpose_last2";
    case Op::split_heads: return "split_heads";
    case Op::merge_heads: return "merge_heads";
    case Op::softmax: return "softmax";
    case Op::softmax_masked: return "softmax_masked";
    case Op::layer_norm: return "layer_norm";
    case Op::embedding: return "embedding";
    case Op::add_pos: return "add_pos";
    case Op::relu: return "relu";
    case Op::gelu: return "gelu";
    case Op::tanh_act: return "tanh";
    case Op::dropout: return "dropout";
    case Op::select_pos0: return "select_pos0";
    case Op::gather_pairs: return "gather_pairs";
    case Op::cross_entropy_sum: return "cross_entropy_sum";
    case Op::bce_sum: return "bce_sum";
    case Op::sum_all: return "sum_all";
  }
  return "?";
}

namespace {

// Unit-interval draw for dropout, fully determined by (seed, node, element).
inline double unit_draw(std::uint64_t node_seed, std::uint64_t index) {
  return static_cast<double>(mix_seed(node_seed, index) >> 11) * 0x1.0p-53;
}

template <typename T>
inline std::int64_t int_value(T v, std::int64_t limit, const std::string& what) {
  auto i = static_cast<std::int64_t>(v);
  require(static_cast<T>(i) == v, what + " must be integral");
  require(i >= 0 && i < limit,
          what + " " + std::to_string(i) + " out of range [0," + std::to_string(limit) + ")");
  return i;
}

}  // namespace

template <typename T>
void Runner<T>::eval_node(int id, const std::map<std::string, TensorT<T>>& inputs) {
  const Node& n = g_->nodes()[static_cast<std::size_t>(id)];
  TensorT<T>& out = vals_[static_cast<std::size_t>(id)];
  auto in_val = [&](int slot) -> const TensorT<T>& {
    return vals_[static_cast<std::size_t>(n.in[static_cast<std::size_t>(slot)])];
  };

  switch (n.op) {
    case Op::input: {
      auto it = inputs.find(n.name);
      if (it == inputs.end()) fail_validation("missing input '" + n.name + "'");
      out = it->second;
      break;
    }
    case Op::param:
      out = store_->value(n.name);
      break;

    case Op::matmul: {
      const TensorT<T>& a = in_val(0);
      const TensorT<T>& b = in_val(1);
      if (a.ndim() < 2) dim_error(id, "left operand must have >= 2 dims, got " + shape_str(a.shape));
      const std::int64_t M = a.dim(a.ndim() - 2), K = a.dim(a.ndim() - 1);
      const bool shared = b.ndim() == 2;
      std::int64_t N = 0;
      if (shared) {
        if (b.dim(0) != K)
          dim_error(id, shape_str(a.shape) + " x " + shape_str(b.shape) + " inner dims differ");
        N = b.dim(1);
      } else {
        if (b.ndim() != a.ndim() || b.dim(b.ndim() - 2) != K ||
            !std::equal(a.shape.begin(), a.shape.end() - 2, b.shape.begin()))
          dim_error(id, shape_str(a.shape) + " x " + shape_str(b.shape) + " are not batch-compatible");
        N = b.dim(b.ndim() - 1);
      }
      std::vector<std::int64_t> shape(a.shape.begin(), a.shape.end() - 1);
      shape.push_back(N);
      out = TensorT<T>::zeros(shape);
      const std::int64_t R = a.size() / (M * K);
      for (std::int64_t r = 0; r < R; ++r) {
        const T* pa = a.values.data() + r * M * K;
        const T* pb = b.values.data() + (shared ? 0 : r * K * N);
        T* pc = out.values.data() + r * M * N;
        for (std::int64_t i = 0; i < M; ++i)
          for (std::int64_t k = 0; k < K; ++k) {
            const T av = pa[i * K + k];
            const T* pbr = pb + k * N;
            T* pcr = pc + i * N;
            for (std::int64_t j = 0; j < N; ++j) pcr[j] += av * pbr[j];
          }
      }
      break;
    }

    case Op::matmul_bt: {
      const TensorT<T>& a = in_val(0);
      const TensorT<T>& b = in_val(1);
      if (a.ndim() < 2 || b.ndim() != 2) dim_error(id, "expects (...,M,K) x (N,K)");
      const std::int64_t M = a.dim(a.ndim() - 2), K = a.dim(a.ndim() - 1);
      if (b.dim(1) != K)
        dim_error(id, shape_str(a.shape) + " x " + shape_str(b.shape) + "^T inner dims differ");
      const std::int64_t N = b.dim(0);
      std::vector<std::int64_t> shape(a.shape.begin(), a.shape.end() - 1);
      shape.push_back(N);
      out = TensorT<T>::zeros(shape);
      const std::int64_t R = a.size() / (M * K);
      for (std::int64_t r = 0; r < R; ++r) {
        const T* pa = a.values.data() + r * M * K;
        T* pc = out.values.data() + r * M * N;
        for (std::int64_t i = 0; i < M; ++i)
          for (std::int64_t jn = 0; jn < N; ++jn) {
            const T* pbr = b.values.data() + jn * K;
            const T* par = pa + i * K;
            T acc = 0;
            for (std::int64_t k = 0; k < K; ++k) acc += par[k] * pbr[k];
            pc[i * N + jn] = acc;
          }
      }
      break;
    }

    case Op::add: {
      const TensorT<T>& a = in_val(0);
      const TensorT<T>& b = in_val(1);
      if (!a.same_shape(b))
        dim_error(id, shape_str(a.shape) + " + " + shape_str(b.shape) + " shapes differ");
      out = a;
      for (std::int64_t i = 0; i < out.size(); ++i) out[i] += b[i];
      break;
    }

    case Op::add_bias: {
      const TensorT<T>& a = in_val(0);
      const TensorT<T>& b = in_val(1);
      const std::int64_t N = a.dim(a.ndim() - 1);
      if (b.ndim() != 1 || b.dim(0) != N)
        dim_error(id, "bias " + shape_str(b.shape) + " does not match last dim of " +
                          shape_str(a.shape));
      out = a;
      const std::int64_t R = a.size() / N;
      for (std::int64_t r = 0; r < R; ++r)
        for (std::int64_t j = 0; j < N; ++j) out[r * N + j] += b[j];
      break;
    }

    case Op::mul_scalar: {
      const TensorT<T>& a = in_val(0);
      const TensorT<T>& s = in_val(1);
      if (s.size() != 1) dim_error(id, "scale operand must hold one value");
      out = a;
      for (T& v : out.values) v *= s[0];
      break;
    }

    case Op::scale_const: {
      out = in_val(0);
      for (T& v : out.values) v *= static_cast<T>(n.f0);
      break;
    }

    case Op::transpose_last2: {
      const TensorT<T>& a = in_val(0);
      if (a.ndim() < 2) dim_error(id, "needs >= 2 dims");
      const std::int64_t M = a.dim(a.ndim() - 2), N = a.dim(a.ndim() - 1);
      std::vector<std::int64_t> shape = a.shape;
      std::swap(shape[shape.size() - 1], shape[shape.size() - 2]);
      out = TensorT<T>::zeros(shape);
      const std::int64_t R = a.size() / (M * N);
      for (std::int64_t r = 0; r < R; ++r)
        for (std::int64_t i = 0; i < M; ++i)
          for (std::int64_t j = 0; j < N; ++j)
            out[r * M * N + j * M + i] = a[r * M * N + i * N + j];
      break;
    }

    case Op::split_heads: {
      const TensorT<T>& a = in_val(0);
      const std::int64_t H = n.i0;
      if (a.ndim() != 3) dim_error(id, "expects (B,L,D), got " + shape_str(a.shape));
      const std::int64_t B = a.dim(0), L = a.dim(1), D = a.dim(2);
      if (D % H != 0) dim_error(id, "model dim " + std::to_string(D) + " not divisible by " +
                                        std::to_string(H) + " heads");
      const std::int64_t Dh = D / H;
      out = TensorT<T>::zeros({B, H, L, Dh});
      for (std::int64_t b = 0; b < B; ++b)
        for (std::int64_t h = 0; h < H; ++h)
          for (std::int64_t l = 0; l < L; ++l)
            for (std::int64_t d = 0; d < Dh; ++d)
              out[((b * H + h) * L + l) * Dh + d] = a[(b * L + l) * D + h * Dh + d];
      break;
    }

    case Op::merge_heads: {
      const TensorT<T>& a = in_val(0);
      if (a.ndim() != 4) dim_error(id, "expects (B,H,L,Dh), got " + shape_str(a.shape));
      const std::int64_t B = a.dim(0), H = a.dim(1), L = a.dim(2), Dh = a.dim(3);
      out = TensorT<T>::zeros({B, L, H * Dh});
      for (std::int64_t b = 0; b < B; ++b)
        for (std::int64_t h = 0; h < H; ++h)
          for (std::int64_t l = 0; l < L; ++l)
            for (std::int64_t d = 0; d < Dh; ++d)
              out[(b * L + l) * H * Dh + h * Dh + d] = a[((b * H + h) * L + l) * Dh + d];
      break;
    }

    case Op::softmax: {
      const TensorT<T>& a = in_val(0);
      const std::int64_t N = a.dim(a.ndim() - 1);
      out = TensorT<T>::zeros(a.shape);
      const std::int64_t R = a.size() / N;
      for (std::int64_t r = 0; r < R; ++r) {
        const T* px = a.values.data() + r * N;
        T* py = out.values.data() + r * N;
        T m = px[0];
        for (std::int64_t j = 1; j < N; ++j) m = std::max(m, px[j]);
        T z = 0;
        for (std::int64_t j = 0; j < N; ++j) {
          py[j] = std::exp(px[j] - m);
          z += py[j];
        }
        for (std::int64_t j = 0; j < N; ++j) py[j] /= z;
      }
      break;
    }

    case Op::softmax_masked: {
      const TensorT<T>& a = in_val(0);
      const TensorT<T>& mask = in_val(1);
      if (a.ndim() < 2) dim_error(id, "needs >= 2 dims");
      const std::int64_t N = a.dim(a.ndim() - 1);
      const std::int64_t B = a.dim(0);
      if (mask.ndim() != 2 || mask.dim(0) != B || mask.dim(1) != N)
        dim_error(id, "mask " + shape_str(mask.shape) + " must be (batch, keys) for " +
                          shape_str(a.shape));
      out = TensorT<T>::zeros(a.shape);
      const std::int64_t R = a.size() / N;
      const std::int64_t rows_per_batch = R / B;
      for (std::int64_t r = 0; r < R; ++r) {
        const T* pm = mask.values.data() + (r / rows_per_batch) * N;
        const T* px = a.values.data() + r * N;
        T* py = out.values.data() + r * N;
        T m = 0;
        bool any = false;
        for (std::int64_t j = 0; j < N; ++j)
          if (pm[j] != T(0)) {
            m = any ? std::max(m, px[j]) : px[j];
            any = true;
          }
        if (!any) continue;  // fully masked rows stay exactly zero
        T z = 0;
        for (std::int64_t j = 0; j < N; ++j)
          if (pm[j] != T(0)) {
            py[j] = std::exp(px[j] - m);
            z += py[j];
          }
        for (std::int64_t j = 0; j < N; ++j)
          if (pm[j] != T(0)) py[j] /= z;
      }
      break;
    }

    case Op::layer_norm: {
      const TensorT<T>& x = in_val(0);
      const TensorT<T>& gamma = in_val(1);
      const TensorT<T>& beta = in_val(2);
      const std::int64_t D = x.dim(x.ndim() - 1);
      if (gamma.size() != D || beta.size() != D)
        dim_error(id, "affine terms must match last dim " + std::to_string(D));
      out = TensorT<T>::zeros(x.shape);
      const T eps = static_cast<T>(n.f0);
      const std::int64_t R = x.size() / D;
      for (std::int64_t r = 0; r < R; ++r) {
        const T* px = x.values.data() + r * D;
        T* py = out.values.data() + r * D;
        T mu = 0;
        for (std::int64_t j = 0; j < D; ++j) mu += px[j];
        mu /= static_cast<T>(D);
        T var = 0;
        for (std::int64_t j = 0; j < D; ++j) var += (px[j] - mu) * (px[j] - mu);
        var /= static_cast<T>(D);
        const T s = std::sqrt(var + eps);
        for (std::int64_t j = 0; j < D; ++j)
          py[j] = (px[j] - mu) / s * gamma[j] + beta[j];
      }
      break;
    }

    case Op::embedding: {
      const TensorT<T>& ids = in_val(0);
      const TensorT<T>& table = in_val(1);
      if (table.ndim() != 2) dim_error(id, "table must be (V,D)");
      const std::int64_t V = table.dim(0), D = table.dim(1);
      std::vector<std::int64_t> shape = ids.shape;
      shape.push_back(D);
      out = TensorT<T>::zeros(shape);
      for (std::int64_t i = 0; i < ids.size(); ++i) {
        const std::int64_t v = int_value(ids[i], V, "token id");
        std::copy_n(table.values.data() + v * D, D, out.values.data() + i * D);
      }
      break;
    }

    case Op::add_pos: {
      const TensorT<T>& x = in_val(0);
      const TensorT<T>& pos = in_val(1);
      if (x.ndim() != 3 || pos.ndim() != 2) dim_error(id, "expects (B,L,D) + (Lmax,D)");
      const std::int64_t B = x.dim(0), L = x.dim(1), D = x.dim(2);
      if (pos.dim(1) != D || pos.dim(0) < L)
        dim_error(id, "position table " + shape_str(pos.shape) + " too small for " +
                          shape_str(x.shape));
      out = x;
      for (std::int64_t b = 0; b < B; ++b)
        for (std::int64_t l = 0; l < L; ++l)
          for (std::int64_t d = 0; d < D; ++d) out[(b * L + l) * D + d] += pos[l * D + d];
      break;
    }

    case Op::relu: {
      out = in_val(0);
      for (T& v : out.values) v = v > T(0) ? v : T(0);
      break;
    }

    case Op::gelu: {
      const TensorT<T>& a = in_val(0);
      out = TensorT<T>::zeros(a.shape);
      for (std::int64_t i = 0; i < a.size(); ++i) {
        const double x = static_cast<double>(a[i]);
        out[i] = static_cast<T>(0.5 * x * (1.0 + std::erf(x * 0.7071067811865475244)));
      }
      break;
    }

    case Op::tanh_act: {
      const TensorT<T>& a = in_val(0);
      out = TensorT<T>::zeros(a.shape);
      for (std::int64_t i = 0; i < a.size(); ++i) out[i] = std::tanh(a[i]);
      break;
    }

    case Op::dropout: {
      const TensorT<T>& a = in_val(0);
      out = a;
      TensorT<T>& mask = masks_[static_cast<std::size_t>(id)];
      if (!train_ || n.f0 == 0) {
        mask = TensorT<T>();  // identity
        break;
      }
      mask = TensorT<T>::zeros(a.shape);
      const double keep = 1.0 - n.f0;
      const T inv = static_cast<T>(1.0 / keep);
      const std::int64_t per_row = a.ndim() > 1 ? a.size() / a.dim(0) : a.size();
      const std::uint64_t node_seed =
          mix_seed(seed_, 0x5eedull + static_cast<std::uint64_t>(id) * 0x9e3779b9ull);
      for (std::int64_t i = 0; i < a.size(); ++i) {
        const std::int64_t row = i / per_row;
        const std::uint64_t global =
            static_cast<std::uint64_t>((row_offset_ + row) * per_row + i % per_row);
        mask[i] = unit_draw(node_seed, global) < keep ? inv : T(0);
        out[i] *= mask[i];
      }
      break;
    }

    case Op::select_pos0: {
      const TensorT<T>& a = in_val(0);
      if (a.ndim() != 3) dim_error(id, "expects (B,L,D), got " + shape_str(a.shape));
      const std::int64_t B = a.dim(0), L = a.dim(1), D = a.dim(2);
      out = TensorT<T>::zeros({B, D});
      for (std::int64_t b = 0; b < B; ++b)
        std::copy_n(a.values.data() + b * L * D, D, out.values.data() + b * D);
      break;
    }

    case Op::gather_pairs: {
      const TensorT<T>& x = in_val(0);
      const TensorT<T>& pairs = in_val(1);
      if (x.ndim() != 3) dim_error(id, "expects (B,L,D)");
      if (pairs.ndim() != 2 || pairs.dim(1) != 2) dim_error(id, "pairs must be (P,2)");
      const std::int64_t B = x.dim(0), L = x.dim(1), D = x.dim(2), P = pairs.dim(0);
      out = TensorT<T>::zeros({P, D});
      for (std::int64_t p = 0; p < P; ++p) {
        const std::int64_t b = int_value(pairs[p * 2], B, "pair row");
        const std::int64_t l = int_value(pairs[p * 2 + 1], L, "pair position");
        std::copy_n(x.values.data() + (b * L + l) * D, D, out.values.data() + p * D);
      }
      break;
    }

    case Op::cross_entropy_sum: {
      const TensorT<T>& logits = in_val(0);
      const TensorT<T>& targets = in_val(1);
      const TensorT<T>* weights = n.in.size() > 2 ? &in_val(2) : nullptr;
      const std::int64_t C = logits.dim(logits.ndim() - 1);
      const std::int64_t R = logits.size() / C;
      if (targets.size() != R)
        dim_error(id, "targets " + shape_str(targets.shape) + " do not match logits " +
                          shape_str(logits.shape));
      if (weights && weights->size() != C) dim_error(id, "class weights must have one entry per class");
      T acc = 0;
      for (std::int64_t r = 0; r < R; ++r) {
        const T* px = logits.values.data() + r * C;
        const std::int64_t y = int_value(targets[r], C, "target class");
        T m = px[0];
        for (std::int64_t c = 1; c < C; ++c) m = std::max(m, px[c]);
        T z = 0;
        for (std::int64_t c = 0; c < C; ++c) z += std::exp(px[c] - m);
        const T w = weights ? (*weights)[y] : T(1);
        acc += w * (m + std::log(z) - px[y]);
      }
      out = TensorT<T>::scalar(acc);
      break;
    }

    case Op::bce_sum: {
      const TensorT<T>& logits = in_val(0);
      const TensorT<T>& targets = in_val(1);
      const TensorT<T>* weights = n.in.size() > 2 ? &in_val(2) : nullptr;
      if (!logits.same_shape(targets))
        dim_error(id, "targets " + shape_str(targets.shape) + " do not match logits " +
                          shape_str(logits.shape));
      const std::int64_t C = logits.dim(logits.ndim() - 1);
      if (weights && weights->size() != C) dim_error(id, "class weights must have one entry per class");
      T acc = 0;
      for (std::int64_t i = 0; i < logits.size(); ++i) {
        const T x = logits[i];
        const T y = targets[i];
        const T w = weights ? (*weights)[i % C] : T(1);
        // stable form of y*log(sigmoid) + (1-y)*log(1-sigmoid), negated
        acc += w * (std::max(x, T(0)) - x * y + std::log1p(std::exp(-std::abs(x))));
      }
      out = TensorT<T>::scalar(acc);
      break;
    }

    case Op::sum_all: {
      const TensorT<T>& a = in_val(0);
      T acc = 0;
      for (const T& v : a.values) acc += v;
      out = TensorT<T>::scalar(acc);
      break;
    }
  }

  if (check_finite) {
    for (const T& v : out.values)
      if (!std::isfinite(static_cast<double>(v)))
        fail_validation("numeric error: non-finite value in " + g_->label(id));
  }
}

template <typename T>
const TensorT<T>& Runner<T>::forward(const std::map<std::string, TensorT<T>>& inputs,
                                     int out_node, std::uint64_t dropout_seed, bool train_mode,
                                     std::int64_t row_offset) {
  require(out_node >= 0 && out_node < g_->size(), "output node out of range");
  seed_ = dropout_seed;
  train_ = train_mode;
  row_offset_ = row_offset;
  vals_.assign(static_cast<std::size_t>(g_->size()), TensorT<T>());
  masks_.assign(static_cast<std::size_t>(g_->size()), TensorT<T>());
  grads_.clear();
  // only ancestors of the requested node run, so a graph that also holds
  // loss nodes can serve inference without targets being fed
  std::vector<char> needed(static_cast<std::size_t>(g_->size()), 0);
  needed[static_cast<std::size_t>(out_node)] = 1;
  for (int id = out_node; id >= 0; --id)
    if (needed[static_cast<std::size_t>(id)])
      for (int i : g_->nodes()[static_cast<std::size_t>(id)].in)
        needed[static_cast<std::size_t>(i)] = 1;
  for (int id = 0; id <= out_node; ++id)
    if (needed[static_cast<std::size_t>(id)]) eval_node(id, inputs);
  return vals_[static_cast<std::size_t>(out_node)];
}

template <typename T>
void Runner<T>::grad_node(int id) {
  const Node& n = g_->nodes()[static_cast<std::size_t>(id)];
  const TensorT<T>& g = grads_[static_cast<std::size_t>(id)];
  if (g.size() == 0) return;  // node does not influence the loss
  auto in_val = [&](int slot) -> const TensorT<T>& {
    return vals_[static_cast<std::size_t>(n.in[static_cast<std::size_t>(slot)])];
  };
  auto in_grad = [&](int slot) -> TensorT<T>& {
    const int src = n.in[static_cast<std::size_t>(slot)];
    const Node& sn = g_->nodes()[static_cast<std::size_t>(src)];
    if (sn.op == Op::param && store_->trainable(sn.name)) {
      // Trainable parameters accumulate into a per-consumer buffer that
      // persists across backward calls, so every += lands in the same
      // accumulator in the same order whether the batch ran whole or in
      // micro-batches.
      TensorT<T>& t = accum_[{sn.name, id}];
      if (t.size() == 0) t = TensorT<T>::zeros(in_val(slot).shape);
      return t;
    }
    TensorT<T>& t = grads_[static_cast<std::size_t>(src)];
    if (t.size() == 0) t = TensorT<T>::zeros(in_val(slot).shape);
    return t;
  };

  switch (n.op) {
    case Op::input:
      break;
    case Op::param:
      // handled by the consumers via in_grad; frozen parameter gradients
      // land in a transient node buffer and are dropped here
      break;

    case Op::matmul: {
      const TensorT<T>& a = in_val(0);
      const TensorT<T>& b = in_val(1);
      TensorT<T>& da = in_grad(0);
      TensorT<T>& db = in_grad(1);
      const std::int64_t M = a.dim(a.ndim() - 2), K = a.dim(a.ndim() - 1);
      const bool shared = b.ndim() == 2;
      const std::int64_t N = b.dim(b.ndim() - 1);
      const std::int64_t R = a.size() / (M * K);
      for (std::int64_t r = 0; r < R; ++r) {
        const T* pa = a.values.data() + r * M * K;
        const T* pb = b.values.data() + (shared ? 0 : r * K * N);
        const T* pg = g.values.data() + r * M * N;
        T* pda = da.values.data() + r * M * K;
        T* pdb = db.values.data() + (shared ? 0 : r * K * N);
        for (std::int64_t i = 0; i < M; ++i) {
          // dA = G B^T
          for (std::int64_t k = 0; k < K; ++k) {
            const T* pbr = pb + k * N;
            const T* pgr = pg + i * N;
            T acc = 0;
            for (std::int64_t j = 0; j < N; ++j) acc += pgr[j] * pbr[j];
            pda[i * K + k] += acc;
          }
          // dB += A^T G, row i folded in before row i+1 (order matters for
          // bit-identical micro-batch accumulation)
          for (std::int64_t k = 0; k < K; ++k) {
            const T av = pa[i * K + k];
            const T* pgr = pg + i * N;
            T* pdbr = pdb + k * N;
            for (std::int64_t j = 0; j < N; ++j) pdbr[j] += av * pgr[j];
          }
        }
      }
      break;
    }

    case Op::matmul_bt: {
      const TensorT<T>& a = in_val(0);
      const TensorT<T>& b = in_val(1);
      TensorT<T>& da = in_grad(0);
      TensorT<T>& db = in_grad(1);
      const std::int64_t M = a.dim(a.ndim() - 2), K = a.dim(a.ndim() - 1);
      const std::int64_t N = b.dim(0);
      const std::int64_t R = a.size() / (M * K);
      for (std::int64_t r = 0; r < R; ++r) {
        const T* pa = a.values.data() + r * M * K;
        const T* pg = g.values.data() + r * M * N;
        T* pda = da.values.data() + r * M * K;
        for (std::int64_t i = 0; i < M; ++i)
          for (std::int64_t jn = 0; jn < N; ++jn) {
            const T gv = pg[i * N + jn];
            if (gv == T(0)) continue;
            const T* pbr = b.values.data() + jn * K;
            const T* par = pa + i * K;
            T* pdar = pda + i * K;
            T* pdbr = db.values.data() + jn * K;
            for (std::int64_t k = 0; k < K; ++k) {
              pdar[k] += gv * pbr[k];
              pdbr[k] += gv * par[k];
            }
          }
      }
      break;
    }

    case Op::add: {
      TensorT<T>& da = in_grad(0);
      TensorT<T>& db = in_grad(1);
      for (std::int64_t i = 0; i < g.size(); ++i) {
        da[i] += g[i];
        db[i] += g[i];
      }
      break;
    }

    case Op::add_bias: {
      TensorT<T>& da = in_grad(0);
      TensorT<T>& db = in_grad(1);
      const std::int64_t N = db.size();
      const std::int64_t R = g.size() / N;
      for (std::int64_t r = 0; r < R; ++r)
        for (std::int64_t j = 0; j < N; ++j) {
          da[r * N + j] += g[r * N + j];
          db[j] += g[r * N + j];
        }
      break;
    }

    case Op::mul_scalar: {
      const TensorT<T>& a = in_val(0);
      const T s = in_val(1)[0];
      TensorT<T>& da = in_grad(0);
      TensorT<T>& ds = in_grad(1);
      for (std::int64_t i = 0; i < g.size(); ++i) {
        da[i] += g[i] * s;
        ds[0] += g[i] * a[i];
      }
      break;
    }

    case Op::scale_const: {
      TensorT<T>& da = in_grad(0);
      const T c = static_cast<T>(n.f0);
      for (std::int64_t i = 0; i < g.size(); ++i) da[i] += g[i] * c;
      break;
    }

    case Op::transpose_last2: {
      const TensorT<T>& a = in_val(0);
      TensorT<T>& da = in_grad(0);
      const std::int64_t M = a.dim(a.ndim() - 2), N = a.dim(a.ndim() - 1);
      const std::int64_t R = a.size() / (M * N);
      for (std::int64_t r = 0; r < R; ++r)
        for (std::int64_t i = 0; i < M; ++i)
          for (std::int64_t j = 0; j < N; ++j)
            da[r * M * N + i * N + j] += g[r * M * N + j * M + i];
      break;
    }

    case Op::split_heads: {
      const TensorT<T>& a = in_val(0);
      TensorT<T>& da = in_grad(0);
      const std::int64_t B = a.dim(0), L = a.dim(1), D = a.dim(2);
      const std::int64_t H = n.i0, Dh = D / H;
      for (std::int64_t b = 0; b < B; ++b)
        for (std::int64_t h = 0; h < H; ++h)
          for (std::int64_t l = 0; l < L; ++l)
            for (std::int64_t d = 0; d < Dh; ++d)
              da[(b * L + l) * D + h * Dh + d] += g[((b * H + h) * L + l) * Dh + d];
      break;
    }

    case Op::merge_heads: {
      const TensorT<T>& a = in_val(0);
      TensorT<T>& da = in_grad(0);
      const std::int64_t B = a.dim(0), H = a.dim(1), L = a.dim(2), Dh = a.dim(3);
      for (std::int64_t b = 0; b < B; ++b)
        for (std::int64_t h = 0; h < H; ++h)
          for (std::int64_t l = 0; l < L; ++l)
            for (std::int64_t d = 0; d < Dh; ++d)
              da[((b * H + h) * L + l) * Dh + d] += g[(b * L + l) * H * Dh + h * Dh + d];
      break;
    }

    case Op::softmax: {
      const TensorT<T>& y = vals_[static_cast<std::size_t>(id)];
      TensorT<T>& da = in_grad(0);
      const std::int64_t N = y.dim(y.ndim() - 1);
      const std::int64_t R = y.size() / N;
      for (std::int64_t r = 0; r < R; ++r) {
        const T* py = y.values.data() + r * N;
        const T* pg = g.values.data() + r * N;
        T dot = 0;
        for (std::int64_t j = 0; j < N; ++j) dot += pg[j] * py[j];
        for (std::int64_t j = 0; j < N; ++j) da[r * N + j] += py[j] * (pg[j] - dot);
      }
      break;
    }

    case Op::softmax_masked: {
      const TensorT<T>& y = vals_[static_cast<std::size_t>(id)];
      const TensorT<T>& mask = in_val(1);
      TensorT<T>& da = in_grad(0);
      const std::int64_t N = y.dim(y.ndim() - 1);
      const std::int64_t B = y.dim(0);
      const std::int64_t R = y.size() / N;
      const std::int64_t rows_per_batch = R / B;
      for (std::int64_t r = 0; r < R; ++r) {
        const T* pm = mask.values.data() + (r / rows_per_batch) * N;
        const T* py = y.values.data() + r * N;
        const T* pg = g.values.data() + r * N;
        T dot = 0;
        for (std::int64_t j = 0; j < N; ++j)
          if (pm[j] != T(0)) dot += pg[j] * py[j];
        for (std::int64_t j = 0; j < N; ++j)
          if (pm[j] != T(0)) da[r * N + j] += py[j] * (pg[j] - dot);
      }
      break;
    }

    case Op::layer_norm: {
      const TensorT<T>& x = in_val(0);
      const TensorT<T>& gamma = in_val(1);
      TensorT<T>& dx = in_grad(0);
      TensorT<T>& dgamma = in_grad(1);
      TensorT<T>& dbeta = in_grad(2);
      const std::int64_t D = x.dim(x.ndim() - 1);
      const std::int64_t R = x.size() / D;
      const T eps = static_cast<T>(n.f0);
      for (std::int64_t r = 0; r < R; ++r) {
        const T* px = x.values.data() + r * D;
        const T* pg = g.values.data() + r * D;
        T mu = 0;
        for (std::int64_t j = 0; j < D; ++j) mu += px[j];
        mu /= static_cast<T>(D);
        T var = 0;
        for (std::int64_t j = 0; j < D; ++j) var += (px[j] - mu) * (px[j] - mu);
        var /= static_cast<T>(D);
        const T s = std::sqrt(var + eps);
        T mean_gy = 0, mean_gyx = 0;
        for (std::int64_t j = 0; j < D; ++j) {
          const T xh = (px[j] - mu) / s;
          const T gy = pg[j] * gamma[j];
          mean_gy += gy;
          mean_gyx += gy * xh;
          dgamma[j] += pg[j] * xh;
          dbeta[j] += pg[j];
        }
        mean_gy /= static_cast<T>(D);
        mean_gyx /= static_cast<T>(D);
        for (std::int64_t j = 0; j < D; ++j) {
          const T xh = (px[j] - mu) / s;
          dx[r * D + j] += (pg[j] * gamma[j] - mean_gy - xh * mean_gyx) / s;
        }
      }
      break;
    }

    case Op::embedding: {
      const TensorT<T>& ids = in_val(0);
      const TensorT<T>& table = in_val(1);
      TensorT<T>& dtable = in_grad(1);
      const std::int64_t D = table.dim(1);
      for (std::int64_t i = 0; i < ids.size(); ++i) {
        const std::int64_t v = static_cast<std::int64_t>(ids[i]);
        for (std::int64_t d = 0; d < D; ++d) dtable[v * D + d] += g[i * D + d];
      }
      break;
    }

    case Op::add_pos: {
      const TensorT<T>& x = in_val(0);
      TensorT<T>& dx = in_grad(0);
      TensorT<T>& dpos = in_grad(1);
      const std::int64_t B = x.dim(0), L = x.dim(1), D = x.dim(2);
      for (std::int64_t b = 0; b < B; ++b)
        for (std::int64_t l = 0; l < L; ++l)
          for (std::int64_t d = 0; d < D; ++d) {
            dx[(b * L + l) * D + d] += g[(b * L + l) * D + d];
            dpos[l * D + d] += g[(b * L + l) * D + d];
          }
      break;
    }

    case Op::relu: {
      const TensorT<T>& a = in_val(0);
      TensorT<T>& da = in_grad(0);
      for (std::int64_t i = 0; i < g.size(); ++i)
        if (a[i] > T(0)) da[i] += g[i];
      break;
    }

    case Op::gelu: {
      const TensorT<T>& a = in_val(0);
      TensorT<T>& da = in_grad(0);
      for (std::int64_t i = 0; i < g.size(); ++i) {
        const double x = static_cast<double>(a[i]);
        const double cdf = 0.5 * (1.0 + std::erf(x * 0.7071067811865475244));
        const double pdf = std::exp(-0.5 * x * x) * 0.3989422804014326779;
        da[i] += g[i] * static_cast<T>(cdf + x * pdf);
      }
      break;
    }

    case Op::tanh_act: {
      const TensorT<T>& y = vals_[static_cast<std::size_t>(id)];
      TensorT<T>& da = in_grad(0);
      for (std::int64_t i = 0; i < g.size(); ++i) da[i] += g[i] * (T(1) - y[i] * y[i]);
      break;
    }

    case Op::dropout: {
      TensorT<T>& da = in_grad(0);
      const TensorT<T>& mask = masks_[static_cast<std::size_t>(id)];
      if (mask.size() == 0) {
        for (std::int64_t i = 0; i < g.size(); ++i) da[i] += g[i];
      } else {
        for (std::int64_t i = 0; i < g.size(); ++i) da[i] += g[i] * mask[i];
      }
      break;
    }

    case Op::select_pos0: {
      const TensorT<T>& a = in_val(0);
      TensorT<T>& da = in_grad(0);
      const std::int64_t B = a.dim(0), L = a.dim(1), D = a.dim(2);
      for (std::int64_t b = 0; b < B; ++b)
        for (std::int64_t d = 0; d < D; ++d) da[b * L * D + d] += g[b * D + d];
      break;
    }

    case Op::gather_pairs: {
      const TensorT<T>& x = in_val(0);
      const TensorT<T>& pairs = in_val(1);
      TensorT<T>& dx = in_grad(0);
      const std::int64_t L = x.dim(1), D = x.dim(2), P = pairs.dim(0);
      for (std::int64_t p = 0; p < P; ++p) {
        const std::int64_t b = static_cast<std::int64_t>(pairs[p * 2]);
        const std::int64_t l = static_cast<std::int64_t>(pairs[p * 2 + 1]);
        for (std::int64_t d = 0; d < D; ++d) dx[(b * L + l) * D + d] += g[p * D + d];
      }
      break;
    }

    case Op::cross_entropy_sum: {
      const TensorT<T>& logits = in_val(0);
      const TensorT<T>& targets = in_val(1);
      const TensorT<T>* weights = n.in.size() > 2 ? &in_val(2) : nullptr;
      TensorT<T>& dl = in_grad(0);
      const T gv = g[0];
      const std::int64_t C = logits.dim(logits.ndim() - 1);
      const std::int64_t R = logits.size() / C;
      for (std::int64_t r = 0; r < R; ++r) {
        const T* px = logits.values.data() + r * C;
        const std::int64_t y = static_cast<std::int64_t>(targets[r]);
        T m = px[0];
        for (std::int64_t c = 1; c < C; ++c) m = std::max(m, px[c]);
        T z = 0;
        for (std::int64_t c = 0; c < C; ++c) z += std::exp(px[c] - m);
        const T w = weights ? (*weights)[y] : T(1);
        for (std::int64_t c = 0; c < C; ++c) {
          const T p = std::exp(px[c] - m) / z;
          dl[r * C + c] += gv * w * (p - (c == y ? T(1) : T(0)));
        }
      }
      break;
    }

    case Op::bce_sum: {
      const TensorT<T>& logits = in_val(0);
      const TensorT<T>& targets = in_val(1);
      const TensorT<T>* weights = n.in.size() > 2 ? &in_val(2) : nullptr;
      TensorT<T>& dl = in_grad(0);
      const T gv = g[0];
      const std::int64_t C = logits.dim(logits.ndim() - 1);
      for (std::int64_t i = 0; i < logits.size(); ++i) {
        const T x = logits[i];
        const T w = weights ? (*weights)[i % C] : T(1);
        const T sig = x >= T(0) ? T(1) / (T(1) + std::exp(-x))
                                : std::exp(x) / (T(1) + std::exp(x));
        dl[i] += gv * w * (sig - targets[i]);
      }
      break;
    }

    case Op::sum_all: {
      TensorT<T>& da = in_grad(0);
      const T gv = g[0];
      for (std::int64_t i = 0; i < da.size(); ++i) da[i] += gv;
      break;
    }
  }
}

template <typename T>
void Runner<T>::backward(int loss_node) {
  require(loss_node >= 0 && loss_node < g_->size(), "loss node out of range");
  require(!vals_.empty(), "backward requires a completed forward pass");
  const TensorT<T>& loss = vals_[static_cast<std::size_t>(loss_node)];
  require(loss.size() == 1, "loss must be scalar, got " + shape_str(loss.shape));
  if (seen_epoch_ != store_->grad_epoch()) {
    accum_.clear();
    seen_epoch_ = store_->grad_epoch();
  }
  grads_.assign(static_cast<std::size_t>(g_->size()), TensorT<T>());
  grads_[static_cast<std::size_t>(loss_node)] = TensorT<T>::of(loss.shape, {T(1)});
  for (int id = loss_node; id >= 0; --id) grad_node(id);

  // Rebuild the store gradients from the per-consumer accumulators, folding
  // consumers in ascending node id order (the map is sorted by name, then
  // consumer id). The fold order is a function of the graph alone, so it
  // cannot depend on how the epoch's rows were batched.
  for (auto it = accum_.begin(); it != accum_.end();) {
    const std::string& name = it->first.first;
    TensorT<T>& pg = store_->grad(name);
    bool first = true;
    for (; it != accum_.end() && it->first.first == name; ++it) {
      const TensorT<T>& buf = it->second;
      if (first) {
        pg.values = buf.values;
        first = false;
      } else {
        for (std::int64_t i = 0; i < pg.size(); ++i) pg[i] += buf[i];
      }
    }
  }
}

std::string GradCheckReport::summary() const {
  std::string s = passed ? "grad check PASSED" : "grad check FAILED";
  for (const auto& e : per_param) {
    s += "\n  " + e.param + " worst coord " + std::to_string(e.coord) + ": analytic " +
         std::to_string(e.analytic) + " numeric " + std::to_string(e.numeric) + " rel " +
         std::to_string(e.rel_err) + (e.passed ? "" : "  <-- FAIL");
  }
  return s;
}

GradCheckReport grad_check(const Graph<double>& g, ParamStore<double>& store,
                           const std::map<std::string, Tensor>& inputs, int loss_node,
                           const GradCheckConfig& cfg) {
  Runner<double> runner(g, store);
  store.zero_grad();
  runner.forward(inputs, loss_node, cfg.dropout_seed, cfg.train_mode);
  runner.backward(loss_node);

  std::map<std::string, Tensor> analytic;
  for (const auto& [name, grad] : store.gradients()) analytic.emplace(name, *grad);
  if (!cfg.corrupt_param.empty()) {
    auto it = analytic.find(cfg.corrupt_param);
    require(it != analytic.end(), "corrupt_param '" + cfg.corrupt_param + "' is not trainable");
    for (double& v : it->second.values) v *= cfg.corrupt_factor;
  }

  auto loss_at = [&]() {
    return runner.forward(inputs, loss_node, cfg.dropout_seed, cfg.train_mode).values[0];
  };

  GradCheckReport report;
  for (const auto& [name, ad] : analytic) {
    Tensor& value = store.value(name);
    const std::int64_t n = value.size();
    std::vector<std::int64_t> coords;
    if (n <= cfg.samples_per_param) {
      for (std::int64_t i = 0; i < n; ++i) coords.push_back(i);
    } else {
      Rng rng(mix_seed(cfg.seed, fnv1a(name)));
      std::set<std::int64_t> picked;
      while (static_cast<int>(picked.size()) < cfg.samples_per_param)
        picked.insert(static_cast<std::int64_t>(rng.next_below(static_cast<std::uint64_t>(n))));
      coords.assign(picked.begin(), picked.end());
    }

    GradCheckEntry worst;
    worst.param = name;
    for (std::int64_t c : coords) {
      const double saved = value[c];
      value[c] = saved + cfg.epsilon;
      const double lp = loss_at();
      value[c] = saved - cfg.epsilon;
      const double lm = loss_at();
      value[c] = saved;
      const double fd = (lp - lm) / (2 * cfg.epsilon);
      const double adv = ad[c];
      const double rel = std::abs(adv - fd) / std::max({std::abs(adv), std::abs(fd), 1e-8});
      if (worst.coord < 0 || rel > worst.rel_err) {
        worst.coord = c;
        worst.analytic = adv;
        worst.numeric = fd;
        worst.rel_err = rel;
      }
    }
    worst.passed = worst.rel_err <= cfg.tolerance;
    report.passed = report.passed && worst.passed;
    report.per_param.push_back(std::move(worst));
  }
  return report;
}

namespace {

template <typename V>
void write_raw(std::string& out, const V& v) {
  const char* p = reinterpret_cast<const char*>(&v);
  out.append(p, sizeof(V));
}

template <typename V>
V read_raw(const std::string& in, std::size_t& pos, const std::string& path) {
  if (pos + sizeof(V) > in.size()) fail_io("truncated snapshot: " + path);
  V v;
  std::memcpy(&v, in.data() + pos, sizeof(V));
  pos += sizeof(V);
  return v;
}

template <typename T>
constexpr std::uint8_t dtype_tag() {
  return sizeof(T) == 8 ? 0 : 1;
}

constexpr char kSnapshotMagic[4] = {'N', 'C', 'L', 'F'};

}  // namespace

template <typename T>
void save_params(const ParamStore<T>& store, const std::string& path) {
  std::string bin(kSnapshotMagic, 4);
  const auto names = store.names();
  write_raw(bin, static_cast<std::uint32_t>(1));  // format version
  write_raw(bin, static_cast<std::uint32_t>(names.size()));
  std::string manifest;
  for (const auto& name : names) {
    const TensorT<T>& t = store.value(name);
    write_raw(bin, static_cast<std::uint32_t>(name.size()));
    bin += name;
    write_raw(bin, dtype_tag<T>());
    write_raw(bin, static_cast<std::uint32_t>(t.ndim()));
    for (std::int64_t d : t.shape) write_raw(bin, d);
    bin.append(reinterpret_cast<const char*>(t.values.data()), t.values.size() * sizeof(T));

    manifest += name;
    manifest += '\t';
    manifest += dtype_tag<T>() == 0 ? "f64" : "f32";
    manifest += '\t';
    for (std::size_t i = 0; i < t.shape.size(); ++i) {
      if (i) manifest += 'x';
      manifest += std::to_string(t.shape[i]);
    }
    manifest += '\n';
  }
  write_text_file(path, bin);
  write_text_file(path + ".manifest", manifest);
}

template <typename T>
ParamStore<T> load_params(const std::string& path) {
  const std::string bin = read_text_file(path);
  std::size_t pos = 0;
  if (bin.size() < 4 || std::memcmp(bin.data(), kSnapshotMagic, 4) != 0)
    fail_io("not a parameter snapshot: " + path);
  pos = 4;
  const auto version = read_raw<std::uint32_t>(bin, pos, path);
  if (version != 1) fail_io("unsupported snapshot version in " + path);
  const auto count = read_raw<std::uint32_t>(bin, pos, path);
  ParamStore<T> store;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = read_raw<std::uint32_t>(bin, pos, path);
    if (pos + name_len > bin.size()) fail_io("truncated snapshot: " + path);
    std::string name = bin.substr(pos, name_len);
    pos += name_len;
    const auto tag = read_raw<std::uint8_t>(bin, pos, path);
    if (tag != dtype_tag<T>())
      fail_io("snapshot " + path + " holds " + (tag == 0 ? std::string("f64") : std::string("f32")) +
              " values, expected " + (dtype_tag<T>() == 0 ? "f64" : "f32"));
    const auto ndim = read_raw<std::uint32_t>(bin, pos, path);
    std::vector<std::int64_t> shape;
    for (std::uint32_t d = 0; d < ndim; ++d) shape.push_back(read_raw<std::int64_t>(bin, pos, path));
    TensorT<T> t(shape);
    const std::size_t bytes = t.values.size() * sizeof(T);
    if (pos + bytes > bin.size()) fail_io("truncated snapshot: " + path);
    std::memcpy(t.values.data(), bin.data() + pos, bytes);
    pos += bytes;
    store.add(name, std::move(t));
  }
  return store;
}

template struct TensorT<double>;
template struct TensorT<float>;
template class ParamStore<double>;
template class ParamStore<float>;
template class Graph<double>;
template class Graph<float>;
template class Runner<double>;
template class Runner<float>;
template void save_params<double>(const ParamStore<double>&, const std::string&);
template void save_params<float>(const ParamStore<float>&, const std::string&);
template ParamStore<double> load_params<double>(const std::string&);
template ParamStore<float> load_params<float>(const std::string&);

}  // namespace newsclf
