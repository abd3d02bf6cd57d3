#include "newsclf/inference.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <thread>

#include <json.hpp>

#include "newsclf/common.hpp"

namespace newsclf {

namespace {

int head_width(const Model& model) {
  require(model.params.has("head.out.w"), "predict error: model has no classification head");
  return static_cast<int>(model.params.value("head.out.w").shape[1]);
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

std::vector<double> softmax_row(const double* logits, int n) {
  double m = logits[0];
  for (int c = 1; c < n; ++c) m = std::max(m, logits[c]);
  std::vector<double> out(static_cast<std::size_t>(n));
  double z = 0;
  for (int c = 0; c < n; ++c) {
    out[static_cast<std::size_t>(c)] = std::exp(logits[c] - m);
    z += out[static_cast<std::size_t>(c)];
  }
  for (double& v : out) v /= z;
  return out;
}

// Members are ranked by validation descending, earlier member first on
// equal scores. Any non-finite score makes the ranking undefined.
std::vector<std::size_t> tie_break_order(const EnsembleSpec& spec) {
  std::vector<std::size_t> order(spec.members.size());
  for (std::size_t i = 0; i < order.size(); ++i) {
    if (!std::isfinite(spec.members[i].validation)) {
      fail_validation("ensemble error: tie-break requires validation scores for every member");
    }
    order[i] = i;
  }
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return spec.members[a].validation > spec.members[b].validation;
  });
  return order;
}

void check_same_coverage(const std::vector<PredictionSet>& members, Subtask subtask) {
  const PredictionSet& first = members.front();
  require(first.subtask == subtask, "ensemble error: member subtask does not match the vote");
  for (std::size_t m = 1; m < members.size(); ++m) {
    const PredictionSet& other = members[m];
    require(other.subtask == subtask, "ensemble error: member subtask does not match the vote");
    require(other.n_classes == first.n_classes,
            "ensemble error: members disagree on the class count");
    if (other.items.size() != first.items.size()) {
      fail_validation("ensemble error: member " + std::to_string(m + 1) +
                      " item coverage differs");
    }
    for (std::size_t i = 0; i < first.items.size(); ++i) {
      if (other.items[i].article_id != first.items[i].article_id ||
          other.items[i].paragraph != first.items[i].paragraph) {
        fail_validation("ensemble error: member " + std::to_string(m + 1) +
                        " item coverage differs");
      }
    }
  }
}

RoutePlan parse_plan(const std::string& language, const nlohmann::json& node) {
  if (!node.is_object() || !node.contains("plan") || !node["plan"].is_string()) {
    fail_validation("routing error: language '" + language + "' needs a plan object");
  }
  const std::string kind = node["plan"].get<std::string>();
  RoutePlan plan;
  if (node.contains("model") && node["model"].is_string()) {
    plan.model = node["model"].get<std::string>();
  }
  if (node.contains("target") && node["target"].is_string()) {
    plan.target = node["target"].get<std::string>();
  }
  require(!plan.model.empty(),
          "routing error: language '" + language + "' has no model");
  if (kind == "direct") {
    plan.kind = RouteKind::direct;
    require(plan.target.empty(),
            "routing error: direct plan for '" + language + "' must not set a target");
  } else if (kind == "translate_test") {
    plan.kind = RouteKind::translate_test;
    require(!plan.target.empty(),
            "routing error: translate_test plan for '" + language + "' has no target");
  } else {
    fail_validation("routing error: unknown plan '" + kind + "' for language '" + language +
                    "'");
  }
  return plan;
}

std::string route_label(const RoutePlan& plan) {
  if (plan.kind == RouteKind::direct) return "direct(" + plan.model + ")";
  return "translate_test(" + plan.target + ", " + plan.model + ")";
}

}  // namespace

int argmax_label(const std::vector<double>& scores) {
  require(!scores.empty(), "predict error: empty score vector");
  std::size_t best = 0;
  for (std::size_t c = 1; c < scores.size(); ++c) {
    if (scores[c] > scores[best]) best = c;
  }
  return static_cast<int>(best);
}

std::vector<std::uint8_t> threshold_labels(const std::vector<double>& probs, double threshold) {
  std::vector<std::uint8_t> out(probs.size(), 0);
  for (std::size_t c = 0; c < probs.size(); ++c) out[c] = probs[c] >= threshold ? 1 : 0;
  return out;
}

PredictionSet predict(Model& model, const EncodedSet& set, double threshold) {
  require(threshold >= 0.0 && threshold <= 1.0, "predict error: threshold must lie in [0, 1]");
  require(set.vocab_hash != 0 && set.vocab_hash == model.vocab_hash,
          "compatibility error: encoded set vocabulary does not match the checkpoint");
  require(head_width(model) == set.n_classes,
          "predict error: head width does not match the class count");
  require(set.article_ids.size() == set.size() && set.paragraphs.size() == set.size(),
          "predict error: encoded set has no item keys");

  HeadConfig head;
  head.task = set.subtask;
  head.n_classes = set.n_classes;

  PredictionSet out;
  out.subtask = set.subtask;
  out.n_classes = set.n_classes;
  out.items.resize(set.size());

  const std::size_t chunk = 16;
  std::vector<std::size_t> order(set.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (std::size_t begin = 0; begin < set.size(); begin += chunk) {
    const std::size_t count = std::min(chunk, set.size() - begin);
    Tensor ids;
    Tensor mask;
    batch_inputs(set, order, begin, count, ids, mask);
    const Tensor logits = forward_classify(model, head, ids, mask);
    for (std::size_t r = 0; r < count; ++r) {
      const double* row = logits.values.data() + r * static_cast<std::size_t>(set.n_classes);
      Prediction& p = out.items[begin + r];
      p.article_id = set.article_ids[begin + r];
      p.paragraph = set.paragraphs[begin + r];
      if (set.subtask == Subtask::genre) {
        p.scores = softmax_row(row, set.n_classes);
        p.genre = static_cast<Genre>(argmax_label(p.scores));
      } else {
        p.scores.resize(static_cast<std::size_t>(set.n_classes));
        for (int c = 0; c < set.n_classes; ++c) {
          p.scores[static_cast<std::size_t>(c)] = sigmoid(row[c]);
        }
        p.labels = threshold_labels(p.scores, threshold);
      }
    }
  }
  return out;
}

LabelSet predictions_to_labels(const PredictionSet& preds) {
  LabelSet out;
  out.subtask = preds.subtask;
  for (const Prediction& p : preds.items) {
    switch (preds.subtask) {
      case Subtask::genre:
        if (!out.genre.emplace(p.article_id, p.genre).second) {
          fail_validation("prediction error: duplicate item key '" + p.article_id + "'");
        }
        break;
      case Subtask::framing: {
        std::set<int> frames;
        for (std::size_t c = 0; c < p.labels.size(); ++c) {
          if (p.labels[c] != 0) frames.insert(static_cast<int>(c));
        }
        if (!out.frames.emplace(p.article_id, std::move(frames)).second) {
          fail_validation("prediction error: duplicate item key '" + p.article_id + "'");
        }
        break;
      }
      case Subtask::persuasion:
        if (!out.techniques.emplace(std::make_pair(p.article_id, p.paragraph), p.labels)
                 .second) {
          fail_validation("prediction error: duplicate item key '" + p.article_id + ":" +
                          std::to_string(p.paragraph) + "'");
        }
        break;
    }
  }
  return out;
}

void EnsembleSpec::validate() const {
  require(members.size() >= 2, "ensemble error: need at least two members");
}

PredictionSet ensemble_vote(const std::vector<PredictionSet>& members, const EnsembleSpec& spec,
                            Subtask subtask) {
  spec.validate();
  if (members.size() != spec.members.size()) {
    fail_validation("ensemble error: got " + std::to_string(members.size()) +
                    " prediction sets for " + std::to_string(spec.members.size()) + " members");
  }
  check_same_coverage(members, subtask);

  const std::size_t m = members.size();
  const PredictionSet& first = members.front();
  PredictionSet out;
  out.subtask = subtask;
  out.n_classes = first.n_classes;
  out.items.resize(first.items.size());

  std::vector<std::size_t> ranked;  // built lazily, only when a tie occurs
  auto ranking = [&]() -> const std::vector<std::size_t>& {
    if (ranked.empty()) ranked = tie_break_order(spec);
    return ranked;
  };

  for (std::size_t i = 0; i < first.items.size(); ++i) {
    Prediction& p = out.items[i];
    p.article_id = first.items[i].article_id;
    p.paragraph = first.items[i].paragraph;
    p.scores.assign(static_cast<std::size_t>(first.n_classes), 0.0);

    if (subtask == Subtask::genre) {
      std::vector<int> votes(static_cast<std::size_t>(first.n_classes), 0);
      for (const PredictionSet& member : members) {
        votes[static_cast<std::size_t>(member.items[i].genre)] += 1;
      }
      int top = 0;
      for (int v : votes) top = std::max(top, v);
      int leaders = 0;
      int winner = 0;
      for (std::size_t c = 0; c < votes.size(); ++c) {
        p.scores[c] = static_cast<double>(votes[c]) / static_cast<double>(m);
        if (votes[c] == top) {
          ++leaders;
          winner = static_cast<int>(c);
        }
      }
      if (leaders > 1) {
        for (std::size_t k : ranking()) {
          const int label = static_cast<int>(members[k].items[i].genre);
          if (votes[static_cast<std::size_t>(label)] == top) {
            winner = label;
            break;
          }
        }
      }
      p.genre = static_cast<Genre>(winner);
    } else {
      p.labels.assign(static_cast<std::size_t>(first.n_classes), 0);
      for (int c = 0; c < first.n_classes; ++c) {
        std::size_t v = 0;
        for (const PredictionSet& member : members) {
          if (member.items[i].labels[static_cast<std::size_t>(c)] != 0) ++v;
        }
        p.scores[static_cast<std::size_t>(c)] =
            static_cast<double>(v) / static_cast<double>(m);
        std::uint8_t bit = 2 * v > m ? 1 : 0;
        if (2 * v == m) {
          bit = members[ranking().front()].items[i].labels[static_cast<std::size_t>(c)];
        }
        p.labels[static_cast<std::size_t>(c)] = bit;
      }
    }
  }
  return out;
}

RoutingTable parse_routing_table(const std::string& json_text) {
  const nlohmann::json doc = nlohmann::json::parse(json_text, nullptr, false);
  if (doc.is_discarded() || !doc.is_object()) {
    fail_validation("routing error: routing table must be a JSON object");
  }
  RoutingTable table;
  for (const auto& [language, node] : doc.items()) {
    require(!language.empty(), "routing error: empty language code");
    table.plans[language] = parse_plan(language, node);
  }
  return table;
}

RoutingTable load_routing_table(const std::string& path) {
  return parse_routing_table(read_text_file(path));
}

std::string routing_table_json(const RoutingTable& table) {
  nlohmann::json doc = nlohmann::json::object();
  for (const auto& [language, plan] : table.plans) {
    nlohmann::json node;
    node["plan"] = plan.kind == RouteKind::direct ? "direct" : "translate_test";
    node["model"] = plan.model;
    if (plan.kind == RouteKind::translate_test) node["target"] = plan.target;
    doc[language] = std::move(node);
  }
  return doc.dump(2) + "\n";
}

RouteResult route_and_predict(const LabeledSet& set, const RoutingTable& routing,
                              const TranslationBackend& backend,
                              std::map<std::string, EnsembleRuntime>& ensembles,
                              const Vocab& vocab, const RouteOptions& options) {
  // Group item indices by language, keeping first-appearance order so the
  // failure list is stable.
  std::vector<std::string> languages;
  std::map<std::string, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < set.items.size(); ++i) {
    const std::string& lang = set.items[i].language();
    if (routing.plans.find(lang) == routing.plans.end()) {
      fail_validation("routing error: no plan for language '" + lang + "'");
    }
    auto [it, fresh] = groups.emplace(lang, std::vector<std::size_t>{});
    if (fresh) languages.push_back(lang);
    it->second.push_back(i);
  }

  RouteResult result;
  result.predictions.subtask = set.subtask;
  std::vector<Prediction> slots(set.items.size());
  std::vector<bool> filled(set.items.size(), false);

  for (const std::string& lang : languages) {
    const RoutePlan& plan = routing.plans.at(lang);
    auto ens = ensembles.find(plan.model);
    if (ens == ensembles.end()) {
      fail_validation("routing error: unknown model '" + plan.model + "' for language '" +
                      lang + "'");
    }
    EnsembleRuntime& runtime = ens->second;
    require(!runtime.models.empty(), "routing error: ensemble '" + plan.model + "' is empty");
    require(runtime.models.size() == runtime.spec.members.size(),
            "routing error: ensemble '" + plan.model + "' models do not match its spec");

    const std::vector<std::size_t>& indices = groups.at(lang);
    LabeledSet subset;
    subset.subtask = set.subtask;
    for (std::size_t i : indices) subset.items.push_back(set.items[i]);

    std::vector<std::size_t> surviving = indices;
    if (plan.kind == RouteKind::translate_test) {
      TranslatedCorpus translated = translate_corpus(backend, subset, plan.target);
      std::set<std::string> failed;
      for (TranslateFailure& failure : translated.failures) {
        failed.insert(failure.article_id);
        result.failures.push_back(std::move(failure));
      }
      if (!failed.empty()) {
        std::vector<std::size_t> kept;
        for (std::size_t i : indices) {
          if (failed.count(set.items[i].article->id) == 0) kept.push_back(i);
        }
        surviving = std::move(kept);
      }
      subset = std::move(translated.set);
    }
    if (subset.items.empty()) continue;

    const int n_classes = head_width(runtime.models.front());
    const EncodedSet encoded =
        encode_set(subset, vocab, options.abbrev, options.max_len, n_classes);

    const std::size_t m = runtime.models.size();
    std::vector<PredictionSet> member_preds(m);
    std::vector<std::exception_ptr> errors(m);
    std::vector<std::thread> pool;
    pool.reserve(m);
    for (std::size_t k = 0; k < m; ++k) {
      pool.emplace_back([&, k]() {
        try {
          member_preds[k] = predict(runtime.models[k], encoded, options.threshold);
        } catch (...) {
          errors[k] = std::current_exception();
        }
      });
    }
    for (std::thread& t : pool) t.join();
    for (const std::exception_ptr& e : errors) {
      if (e) std::rethrow_exception(e);
    }

    PredictionSet voted = m == 1 ? std::move(member_preds.front())
                                 : ensemble_vote(member_preds, runtime.spec, set.subtask);
    require(voted.items.size() == surviving.size(),
            "routing error: prediction count does not match the surviving items");
    result.predictions.n_classes = voted.n_classes;
    const std::string label = route_label(plan);
    for (std::size_t j = 0; j < surviving.size(); ++j) {
      voted.items[j].route = label;
      slots[surviving[j]] = std::move(voted.items[j]);
      filled[surviving[j]] = true;
    }
  }

  for (std::size_t i = 0; i < slots.size(); ++i) {
    if (filled[i]) result.predictions.items.push_back(std::move(slots[i]));
  }
  return result;
}

}  // namespace newsclf
