#include "newsclf/model.hpp"

#include <cmath>

#include "json.hpp"

namespace newsclf {

namespace {

constexpr double kInitStd = 0.02;

Tensor init_normal(std::uint64_t model_seed, const std::string& name,
                   std::vector<std::int64_t> shape) {
  Tensor t(std::move(shape));
  Rng rng(mix_seed(model_seed, fnv1a(name)));
  for (double& v : t.values) v = rng.next_normal() * kInitStd;
  return t;
}

std::string layer_prefix(int layer) { return "layer" + std::to_string(layer) + "."; }

// Adapter-mode training touches adapters, task heads, and layer-norm
// affine terms; everything else is the frozen base.
bool trainable_when_frozen(const std::string& name) {
  return name.find(".adapter.") != std::string::npos || starts_with(name, "head.") ||
         starts_with(name, "mlm.") || name.find(".ln.") != std::string::npos;
}

void apply_freeze(Model& model) {
  if (model.adapters.placement == AdapterPlacement::none) return;
  for (const std::string& name : model.params.names())
    model.params.set_trainable(name, trainable_when_frozen(name));
}

std::vector<std::string> adapter_sites(AdapterPlacement placement) {
  if (placement == AdapterPlacement::houlsby) return {"attn", "ffn"};
  if (placement == AdapterPlacement::pfeiffer) return {"ffn"};
  return {};
}

// z + up(nonlin(down(z))); with the up projection still zero this is the
// identity, so freshly inserted adapters do not change the function.
int adapter_block(Graph<double>& g, const Model& m, int layer, const std::string& site, int z) {
  const std::string p = layer_prefix(layer) + "adapter." + site + ".";
  int down = g.add_bias(g.matmul(z, g.param(p + "down.w")), g.param(p + "down.b"));
  down = m.adapters.nonlinearity == AdapterNonlinearity::gelu ? g.gelu(down) : g.relu(down);
  int up = g.add_bias(g.matmul(down, g.param(p + "up.w")), g.param(p + "up.b"));
  return g.add(z, up);
}

bool has_adapter(const Model& m, const std::string& site) {
  for (const std::string& s : adapter_sites(m.adapters.placement))
    if (s == site) return true;
  return false;
}

int encoder_layer(Graph<double>& g, const Model& m, int layer, int h, int mask) {
  const std::string p = layer_prefix(layer);
  auto P = [&](const char* s) { return g.param(p + s); };
  const int heads = m.config.n_heads;
  const std::int64_t dh = m.config.d_model / heads;

  int q = g.split_heads(g.add_bias(g.matmul(h, P("attn.wq")), P("attn.bq")), heads);
  // no key bias: a constant shift of every key moves each softmax row
  // uniformly, so such a parameter could never receive gradient
  int k = g.split_heads(g.matmul(h, P("attn.wk")), heads);
  int v = g.split_heads(g.add_bias(g.matmul(h, P("attn.wv")), P("attn.bv")), heads);
  int scores = g.scale(g.matmul(q, g.transpose_last2(k)), 1.0 / std::sqrt(double(dh)));
  int probs = g.softmax_masked(scores, mask);
  int ctx = g.merge_heads(g.matmul(probs, v));
  int attn = g.dropout(g.add_bias(g.matmul(ctx, P("attn.wo")), P("attn.bo")), m.config.dropout);
  if (has_adapter(m, "attn")) attn = adapter_block(g, m, layer, "attn", attn);
  h = g.layer_norm(g.add(h, attn), P("attn.ln.gamma"), P("attn.ln.beta"));

  int ff = g.gelu(g.add_bias(g.matmul(h, P("ffn.w1")), P("ffn.b1")));
  ff = g.dropout(g.add_bias(g.matmul(ff, P("ffn.w2")), P("ffn.b2")), m.config.dropout);
  if (has_adapter(m, "ffn")) ff = adapter_block(g, m, layer, "ffn", ff);
  return g.layer_norm(g.add(h, ff), P("ffn.ln.gamma"), P("ffn.ln.beta"));
}

// ids -> embedded, position-augmented, encoded sequence states (B, L, d).
int encoder_stack(Graph<double>& g, const Model& m, int ids, int mask) {
  int h = g.embedding(ids, g.param("embed.tok"));
  h = g.add_pos(h, g.param("embed.pos"));
  h = g.dropout(h, m.config.dropout);
  for (int layer = 0; layer < m.config.n_layers; ++layer)
    h = encoder_layer(g, m, layer, h, mask);
  return h;
}

}  // namespace

void ModelConfig::validate() const {
  require(vocab_size > 0 && d_model > 0 && n_layers > 0 && n_heads > 0 && d_ff > 0,
          "config error: model dimensions must be positive");
  require(d_model % n_heads == 0, "config error: d_model " + std::to_string(d_model) +
                                      " not divisible by n_heads " + std::to_string(n_heads));
  require(max_len >= 2, "config error: max_len must be at least 2");
  require(dropout >= 0 && dropout < 1, "config error: dropout must be in [0,1)");
}

std::string adapter_placement_name(AdapterPlacement p) {
  switch (p) {
    case AdapterPlacement::none: return "none";
    case AdapterPlacement::houlsby: return "houlsby";
    case AdapterPlacement::pfeiffer: return "pfeiffer";
  }
  return "none";
}

AdapterPlacement adapter_placement_from_name(const std::string& name) {
  if (name == "none") return AdapterPlacement::none;
  if (name == "houlsby") return AdapterPlacement::houlsby;
  if (name == "pfeiffer") return AdapterPlacement::pfeiffer;
  fail_validation("config error: unknown adapter placement '" + name + "'");
}

std::string adapter_nonlinearity_name(AdapterNonlinearity n) {
  return n == AdapterNonlinearity::gelu ? "gelu" : "relu";
}

AdapterNonlinearity adapter_nonlinearity_from_name(const std::string& name) {
  if (name == "gelu") return AdapterNonlinearity::gelu;
  if (name == "relu") return AdapterNonlinearity::relu;
  fail_validation("config error: unknown adapter nonlinearity '" + name + "'");
}

std::int64_t AdapterConfig::bottleneck(std::int64_t d_model) const {
  require(reduction_factor > 0, "config error: reduction factor must be positive");
  require(d_model % reduction_factor == 0,
          "config error: d_model " + std::to_string(d_model) +
              " not divisible by reduction factor " + std::to_string(reduction_factor));
  return d_model / reduction_factor;
}

HeadConfig head_for(Subtask task) {
  switch (task) {
    case Subtask::genre: return {Subtask::genre, 3};
    case Subtask::framing: return {Subtask::framing, 14};
    case Subtask::persuasion: return {Subtask::persuasion, 23};
  }
  return {Subtask::genre, 3};
}

Model build_encoder(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Model m;
  m.config = config;
  m.seed = seed;
  const std::int64_t d = config.d_model;

  auto normal = [&](const std::string& name, std::vector<std::int64_t> shape) {
    m.params.add(name, init_normal(seed, name, std::move(shape)));
  };
  auto zeros = [&](const std::string& name, std::vector<std::int64_t> shape) {
    m.params.add(name, Tensor::zeros(std::move(shape)));
  };
  auto ones = [&](const std::string& name, std::vector<std::int64_t> shape) {
    m.params.add(name, Tensor::full(std::move(shape), 1.0));
  };

  normal("embed.tok", {config.vocab_size, d});
  normal("embed.pos", {config.max_len, d});
  for (int layer = 0; layer < config.n_layers; ++layer) {
    const std::string p = layer_prefix(layer);
    for (const char* w : {"attn.wq", "attn.wk", "attn.wv", "attn.wo"}) normal(p + w, {d, d});
    for (const char* b : {"attn.bq", "attn.bv", "attn.bo"}) zeros(p + b, {d});
    ones(p + "attn.ln.gamma", {d});
    zeros(p + "attn.ln.beta", {d});
    normal(p + "ffn.w1", {d, config.d_ff});
    zeros(p + "ffn.b1", {config.d_ff});
    normal(p + "ffn.w2", {config.d_ff, d});
    zeros(p + "ffn.b2", {d});
    ones(p + "ffn.ln.gamma", {d});
    zeros(p + "ffn.ln.beta", {d});
  }
  return m;
}

void attach_head(Model& model, const HeadConfig& head) {
  require(head.n_classes >= 2, "config error: head needs at least two classes");
  const std::int64_t d = model.config.d_model;
  model.params.add("head.pool.w", init_normal(model.seed, "head.pool.w", {d, d}));
  model.params.add("head.pool.b", Tensor::zeros({d}));
  model.params.add("head.out.w", init_normal(model.seed, "head.out.w", {d, head.n_classes}));
  model.params.add("head.out.b", Tensor::zeros({head.n_classes}));
}

void attach_mlm_head(Model& model) {
  const std::int64_t d = model.config.d_model;
  model.params.add("mlm.dense.w", init_normal(model.seed, "mlm.dense.w", {d, d}));
  model.params.add("mlm.dense.b", Tensor::zeros({d}));
  model.params.add("mlm.ln.gamma", Tensor::full({d}, 1.0));
  model.params.add("mlm.ln.beta", Tensor::zeros({d}));
  model.params.add("mlm.bias", Tensor::zeros({model.config.vocab_size}));
}

void insert_adapters(Model& model, const AdapterConfig& config) {
  require(config.placement != AdapterPlacement::none,
          "config error: adapter placement 'none' inserts nothing");
  require(model.adapters.placement == AdapterPlacement::none,
          "config error: model already has adapters");
  const std::int64_t d = model.config.d_model;
  const std::int64_t b = config.bottleneck(d);

  for (int layer = 0; layer < model.config.n_layers; ++layer) {
    for (const std::string& site : adapter_sites(config.placement)) {
      const std::string p = layer_prefix(layer) + "adapter." + site + ".";
      model.params.add(p + "down.w", init_normal(model.seed, p + "down.w", {d, b}));
      model.params.add(p + "down.b", Tensor::zeros({b}));
      // zero up-projection: the residual path starts as the exact identity
      model.params.add(p + "up.w", Tensor::zeros({b, d}));
      model.params.add(p + "up.b", Tensor::zeros({d}));
    }
  }
  model.adapters = config;
  apply_freeze(model);
}

std::vector<std::string> trainable_parameters(const Model& model) {
  std::vector<std::string> out;
  for (const std::string& name : model.params.names())
    if (model.params.trainable(name)) out.push_back(name);
  return out;
}

ClassifyGraph build_classify_graph(const Model& model, const HeadConfig& head) {
  ClassifyGraph cg;
  Graph<double>& g = cg.g;
  cg.ids = g.input("ids");
  cg.mask = g.input("attn_mask");
  int h = encoder_stack(g, model, cg.ids, cg.mask);

  int pooled = g.tanh_act(
      g.add_bias(g.matmul(g.select_pos0(h), g.param("head.pool.w")), g.param("head.pool.b")));
  cg.logits = g.add_bias(g.matmul(pooled, g.param("head.out.w")), g.param("head.out.b"));

  cg.targets = g.input("targets");
  cg.weights = g.input("class_weights");
  cg.loss_scale = g.input("loss_scale");
  const int raw = head.task == Subtask::genre
                      ? g.cross_entropy_sum(cg.logits, cg.targets, cg.weights)
                      : g.bce_sum(cg.logits, cg.targets, cg.weights);
  cg.loss = g.mul_scalar(raw, cg.loss_scale);
  return cg;
}

MlmGraph build_mlm_graph(const Model& model) {
  MlmGraph mg;
  Graph<double>& g = mg.g;
  mg.ids = g.input("ids");
  mg.mask = g.input("attn_mask");
  int h = encoder_stack(g, model, mg.ids, mg.mask);

  mg.pairs = g.input("mlm_pairs");
  int t = g.gather_pairs(h, mg.pairs);
  t = g.gelu(g.add_bias(g.matmul(t, g.param("mlm.dense.w")), g.param("mlm.dense.b")));
  t = g.layer_norm(t, g.param("mlm.ln.gamma"), g.param("mlm.ln.beta"));
  mg.logits = g.add_bias(g.matmul_bt(t, g.param("embed.tok")), g.param("mlm.bias"));

  mg.targets = g.input("mlm_targets");
  mg.loss_scale = g.input("loss_scale");
  mg.loss = g.mul_scalar(g.cross_entropy_sum(mg.logits, mg.targets), mg.loss_scale);
  return mg;
}

Tensor forward_classify(Model& model, const HeadConfig& head, const Tensor& ids,
                        const Tensor& attn_mask) {
  require(ids.ndim() == 2, "ids must be (batch, len)");
  require(ids.dim(1) <= model.config.max_len,
          "sequence length " + std::to_string(ids.dim(1)) + " exceeds max_len " +
              std::to_string(model.config.max_len));
  ClassifyGraph cg = build_classify_graph(model, head);
  Runner<double> runner(cg.g, model.params);
  return runner.forward({{"ids", ids}, {"attn_mask", attn_mask}}, cg.logits);
}

Tensor forward_mlm(Model& model, const Tensor& ids, const Tensor& attn_mask,
                   const Tensor& pairs) {
  MlmGraph mg = build_mlm_graph(model);
  Runner<double> runner(mg.g, model.params);
  return runner.forward({{"ids", ids}, {"attn_mask", attn_mask}, {"mlm_pairs", pairs}},
                        mg.logits);
}

void save_checkpoint(const Model& model, const std::optional<HeadConfig>& head,
                     const std::string& path) {
  save_params(model.params, path);
  nlohmann::json j;
  j["model"] = {{"vocab_size", model.config.vocab_size}, {"d_model", model.config.d_model},
                {"n_layers", model.config.n_layers},     {"n_heads", model.config.n_heads},
                {"d_ff", model.config.d_ff},             {"max_len", model.config.max_len},
                {"dropout", model.config.dropout}};
  j["adapters"] = {{"placement", adapter_placement_name(model.adapters.placement)},
                   {"reduction_factor", model.adapters.reduction_factor},
                   {"nonlinearity", adapter_nonlinearity_name(model.adapters.nonlinearity)}};
  if (head)
    j["head"] = {{"task", subtask_name(head->task)}, {"n_classes", head->n_classes}};
  else
    j["head"] = nullptr;
  j["seed"] = model.seed;
  j["vocab_hash"] = model.vocab_hash;
  j["step"] = model.step;
  write_text_file(path + ".json", j.dump(2) + "\n");
}

Checkpoint load_checkpoint(const std::string& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text_file(path + ".json"));
  } catch (const nlohmann::json::exception& e) {
    fail_io("checkpoint error: bad sidecar " + path + ".json: " + e.what());
  }

  Checkpoint ck;
  try {
    const auto& jm = j.at("model");
    ck.model.config.vocab_size = jm.at("vocab_size").get<std::int64_t>();
    ck.model.config.d_model = jm.at("d_model").get<std::int64_t>();
    ck.model.config.n_layers = jm.at("n_layers").get<int>();
    ck.model.config.n_heads = jm.at("n_heads").get<int>();
    ck.model.config.d_ff = jm.at("d_ff").get<std::int64_t>();
    ck.model.config.max_len = jm.at("max_len").get<std::int64_t>();
    ck.model.config.dropout = jm.at("dropout").get<double>();
    const auto& ja = j.at("adapters");
    ck.model.adapters.placement =
        adapter_placement_from_name(ja.at("placement").get<std::string>());
    ck.model.adapters.reduction_factor = ja.at("reduction_factor").get<int>();
    ck.model.adapters.nonlinearity =
        adapter_nonlinearity_from_name(ja.at("nonlinearity").get<std::string>());
    if (!j.at("head").is_null()) {
      HeadConfig head;
      head.task = subtask_from_name(j["head"].at("task").get<std::string>());
      head.n_classes = j["head"].at("n_classes").get<int>();
      ck.head = head;
    }
    ck.model.seed = j.at("seed").get<std::uint64_t>();
    ck.model.vocab_hash = j.at("vocab_hash").get<std::uint64_t>();
    ck.model.step = j.at("step").get<std::int64_t>();
  } catch (const nlohmann::json::exception& e) {
    fail_io("checkpoint error: sidecar " + path + ".json is missing fields: " + e.what());
  }

  ck.model.config.validate();
  ck.model.params = load_params<double>(path);
  require(ck.model.params.has("embed.tok") &&
              ck.model.params.value("embed.tok").shape ==
                  std::vector<std::int64_t>{ck.model.config.vocab_size, ck.model.config.d_model},
          "checkpoint error: parameters do not match the sidecar architecture");
  apply_freeze(ck.model);
  return ck;
}

}  // namespace newsclf
