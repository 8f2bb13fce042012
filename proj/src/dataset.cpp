#include "qap/dataset.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "qap/rng.hpp"

namespace qap {

namespace {

const std::vector<std::string>& category_names() {
  static const std::vector<std::string> v{"fruit", "animal", "tool", "plant"};
  return v;
}

const std::vector<std::string>& relation_names() {
  static const std::vector<std::string> v{"has_color", "has_size", "has_shape", "has_material"};
  return v;
}

// common values back the ordinary property edges; each pool is extended
// with generated "rare" values reserved for missing-knowledge questions so
// the questioned value node stays low-degree under the retrieval cap
const std::vector<std::vector<std::string>>& common_pools() {
  static const std::vector<std::vector<std::string>> v{
      {"crimson", "azure", "emerald", "amber", "violet", "ivory"},
      {"tiny", "small", "large", "huge", "narrow", "wide"},
      {"round", "square", "oval", "flat", "curved", "pointed"},
      {"wood", "metal", "stone", "glass", "cloth", "clay"}};
  return v;
}

// value nodes carry a fixed suffix word: their KG surface is two tokens
// while questions mention only the bare value word, so entity linking
// (whole-name matching) never seeds value nodes from the question text and
// each option's subgraph stays local to that option. The suffix is shared
// across predicates, so the same value word under two different relations
// names the same KG node.
constexpr const char* kValueSuffix = "val";

std::string value_node_name(const std::string& word) {
  return word + " " + kValueSuffix;
}

constexpr int kCommonValues = 6;
constexpr const char* kSiblingRelation = "sibling_of";
constexpr const char* kMissingMarker = "likely";
constexpr int kBaseEdgesPerPredicate = 1;
constexpr int kExtraEdges = 2;

struct World {
  std::vector<std::vector<std::string>> pools;  // per predicate: common ++ rare
  // entity index -> name / category / split (0 train, 1 dev, 2 test)
  std::vector<std::string> names;
  std::vector<int> category;
  std::vector<int> split;
  // properties[entity][predicate] = value indices into the predicate's pool
  std::vector<std::array<std::vector<int>, 4>> props;
  std::vector<bool> fresh;  // available for a dedicated scenario role
  std::vector<std::array<std::vector<int>, 3>> by_cat_split;  // [category][split]
  std::vector<std::pair<int, int>> sibling_edges;
  std::set<std::string> taken;  // every surface word in use

  bool has_value(int e, int p, int v) const {
    const auto& vs = props[std::size_t(e)][std::size_t(p)];
    return std::find(vs.begin(), vs.end(), v) != vs.end();
  }

  std::string fresh_word(Rng& rng);
  int add_value(int p, const std::string& word) {
    auto& pool = pools[std::size_t(p)];
    auto it = std::find(pool.begin(), pool.end(), word);
    if (it != pool.end()) return int(it - pool.begin());
    pool.push_back(word);
    return int(pool.size()) - 1;
  }
};

std::string make_name(Rng& rng) {
  static const char* cons = "bdfgklmnprstvz";
  static const char* vow = "aeiou";
  std::string s;
  for (int i = 0; i < 3; ++i) {
    s += cons[rng.next_below(14)];
    s += vow[rng.next_below(5)];
  }
  return s;
}

std::string World::fresh_word(Rng& rng) {
  std::string name;
  do {
    name = make_name(rng);
  } while (!taken.insert(name).second);
  return name;
}

World build_world(const DatasetConfig& cfg) {
  World w;
  Rng name_rng(cfg.seed ^ fnv1a("gen/entities"));
  std::set<std::string>& taken = w.taken;
  for (const auto& pool : common_pools())
    for (const auto& v : pool) taken.insert(v);
  for (const auto& c : category_names()) taken.insert(c);
  taken.insert(kValueSuffix);
  taken.insert(kMissingMarker);

  Rng rare_rng(cfg.seed ^ fnv1a("gen/rare_values"));
  int n_rare = std::max(8, cfg.n_entities / 10);
  w.pools = common_pools();
  for (auto& pool : w.pools) {
    for (int i = 0; i < n_rare; ++i) {
      std::string name;
      do {
        name = make_name(rare_rng);
      } while (!taken.insert(name).second);
      pool.push_back(name);
    }
  }

  // split shares follow the instance split shares
  double total = double(cfg.n_train + cfg.n_dev + cfg.n_test);
  int n_dev = std::max(4, int(cfg.n_entities * cfg.n_dev / total));
  int n_test = std::max(4, int(cfg.n_entities * cfg.n_test / total));
  int n_train = cfg.n_entities - n_dev - n_test;
  if (n_train < 4) throw dataset_error("entity pool too small for the requested splits");

  w.by_cat_split.resize(category_names().size());
  for (int i = 0; i < cfg.n_entities; ++i) {
    std::string name;
    do {
      name = make_name(name_rng);
    } while (!taken.insert(name).second);
    int split = i < n_train ? 0 : (i < n_train + n_dev ? 1 : 2);
    int cat = int(i % category_names().size());
    w.names.push_back(name);
    w.category.push_back(cat);
    w.split.push_back(split);
    w.by_cat_split[std::size_t(cat)][std::size_t(split)].push_back(i);
  }

  // uniform base degree: one value per predicate plus two extra values, so
  // no entity is identifiable by edge count alone
  Rng edge_rng(cfg.seed ^ fnv1a("gen/edges"));
  w.props.resize(w.names.size());
  w.fresh.assign(w.names.size(), true);
  int n_preds = int(relation_names().size());
  for (std::size_t e = 0; e < w.names.size(); ++e) {
    for (int p = 0; p < n_preds; ++p)
      for (int k = 0; k < kBaseEdgesPerPredicate; ++k)
        w.props[e][std::size_t(p)].push_back(
            int(edge_rng.next_below(kCommonValues)));
    for (int k = 0; k < kExtraEdges; ++k) {
      int p = int(edge_rng.next_below(std::uint64_t(n_preds)));
      auto& vs = w.props[e][std::size_t(p)];
      int v;
      do {
        v = int(edge_rng.next_below(kCommonValues));
      } while (std::find(vs.begin(), vs.end(), v) != vs.end() &&
               int(vs.size()) < kCommonValues);
      if (std::find(vs.begin(), vs.end(), v) == vs.end()) vs.push_back(v);
    }
    // one low-degree value per predicate: questions about these stay
    // decidable under the retrieval cap because few entities share them
    int n_rare = int(w.pools[0].size()) - kCommonValues;
    for (int p = 0; p < n_preds; ++p)
      w.props[e][std::size_t(p)].push_back(kCommonValues +
                                           int(edge_rng.next_below(std::uint64_t(n_rare))));
  }
  return w;
}

std::vector<int> shuffled(const std::vector<int>& in, Rng& rng) {
  std::vector<int> out = in;
  for (std::size_t i = out.size(); i > 1; --i)
    std::swap(out[i - 1], out[rng.next_below(i)]);
  return out;
}

McqaInstance finish_instance(const World& w, const std::string& id, const std::string& question,
                             std::vector<int> option_entities, int gold_entity,
                             const std::string& scenario, Rng& rng) {
  std::vector<int> order = shuffled(option_entities, rng);
  McqaInstance inst;
  inst.id = id;
  inst.question = question;
  inst.scenario = scenario;
  for (std::size_t k = 0; k < order.size(); ++k) {
    inst.options.push_back(w.names[std::size_t(order[k])]);
    if (order[k] == gold_entity) inst.gold = int(k);
  }
  inst.validate();
  return inst;
}

McqaInstance gen_standard(const World& w, int split, const std::string& id, Rng& rng,
                          int n_options) {
  for (int attempt = 0; attempt < 200; ++attempt) {
    int cat = int(rng.next_below(category_names().size()));
    const auto& pool = w.by_cat_split[std::size_t(cat)][std::size_t(split)];
    if (int(pool.size()) < n_options) continue;
    std::vector<int> picks = shuffled(pool, rng);
    int gold = picks[0];
    int p = int(rng.next_below(relation_names().size()));
    // ask about the gold entity's low-degree value: the matching node then
    // appears in the gold option's retrieved subgraph and nowhere else
    const auto& vs = w.props[std::size_t(gold)][std::size_t(p)];
    int v = -1;
    for (int u : vs)
      if (u >= kCommonValues) v = u;
    if (v < 0) continue;
    std::vector<int> opts{gold};
    for (std::size_t i = 1; i < picks.size() && int(opts.size()) < n_options; ++i)
      if (!w.has_value(picks[i], p, v)) opts.push_back(picks[i]);
    if (int(opts.size()) < n_options) continue;
    std::string q = "which " + category_names()[std::size_t(cat)] + " " +
                    relation_names()[std::size_t(p)] + " " +
                    w.pools[std::size_t(p)][std::size_t(v)] + " ?";
    return finish_instance(w, id, q, opts, gold, "standard", rng);
  }
  throw dataset_error("standard generation exhausted attempts; pool too small");
}

// Distractor-heavy: the questioned value word names one shared node that
// both the gold (under the questioned relation) and a trap option (under a
// different relation) point at, and both carry an extra balancing edge so
// per-relation edge counts match. Surface matching then ties the pair
// exactly; only the relation on the matching edge separates them.
McqaInstance gen_distractor(World& w, int split, const std::string& id, Rng& rng, int n_options) {
  for (int attempt = 0; attempt < 500; ++attempt) {
    int cat = int(rng.next_below(category_names().size()));
    const auto& pool = w.by_cat_split[std::size_t(cat)][std::size_t(split)];
    if (int(pool.size()) < n_options) continue;
    std::vector<int> avail;
    for (int e : pool)
      if (w.fresh[std::size_t(e)]) avail.push_back(e);
    if (int(avail.size()) < 2) continue;
    std::vector<int> fresh_picks = shuffled(avail, rng);
    int gold = fresh_picks[0], trap = fresh_picks[1];
    std::vector<int> others;
    for (int e : shuffled(pool, rng)) {
      if (e == gold || e == trap) continue;
      others.push_back(e);
      if (int(others.size()) == n_options - 2) break;
    }
    if (int(others.size()) < n_options - 2) continue;

    int p1 = int(rng.next_below(relation_names().size()));
    int p2;
    do {
      p2 = int(rng.next_below(relation_names().size()));
    } while (p2 == p1);
    std::string word = w.fresh_word(rng);
    w.props[std::size_t(gold)][std::size_t(p1)].push_back(w.add_value(p1, word));
    w.props[std::size_t(trap)][std::size_t(p2)].push_back(w.add_value(p2, word));
    // balancing edges: the trap also gains a p1 edge and the gold a p2 edge
    // (to throwaway values), so neither entity is identifiable by counting
    // edges per relation -- only by which relation reaches the shared node
    w.props[std::size_t(trap)][std::size_t(p1)].push_back(w.add_value(p1, w.fresh_word(rng)));
    w.props[std::size_t(gold)][std::size_t(p2)].push_back(w.add_value(p2, w.fresh_word(rng)));
    w.fresh[std::size_t(gold)] = w.fresh[std::size_t(trap)] = false;

    std::vector<int> opts{gold, trap};
    opts.insert(opts.end(), others.begin(), others.end());
    std::string q = "which " + category_names()[std::size_t(cat)] + " " +
                    relation_names()[std::size_t(p1)] + " " + word + " ?";
    return finish_instance(w, id, q, opts, gold, "distractor-heavy", rng);
  }
  throw dataset_error("distractor generation exhausted attempts; pool too small");
}

// Missing-knowledge: the gold never receives the questioned edge; instead a
// same-category sibling (listed as another option) owns it and a
// sibling_of edge links the pair. The two remaining options own the same
// questioned value as well, so a plain lookup is ambiguous: the gold is the
// one option whose neighborhood does NOT contain the questioned value. The
// question carries a marker word so mixed training data can separate this
// inferential reading from the direct one.
McqaInstance gen_missing(World& w, int split, const std::string& id, Rng& rng, int n_options) {
  for (int attempt = 0; attempt < 500; ++attempt) {
    int cat = int(rng.next_below(category_names().size()));
    const auto& pool = w.by_cat_split[std::size_t(cat)][std::size_t(split)];
    std::vector<int> avail;
    for (int e : pool)
      if (w.fresh[std::size_t(e)]) avail.push_back(e);
    if (int(avail.size()) < n_options) continue;
    std::vector<int> picks = shuffled(avail, rng);
    int g = picks[0], s = picks[1], d2 = picks[2], d3 = picks[3];

    int p = int(rng.next_below(relation_names().size()));
    std::string word = w.fresh_word(rng);
    int v = w.add_value(p, word);
    for (int e : {s, d2, d3}) w.props[std::size_t(e)][std::size_t(p)].push_back(v);
    w.sibling_edges.emplace_back(g, s);
    for (int e : {g, s, d2, d3}) w.fresh[std::size_t(e)] = false;

    std::vector<int> opts{g, s, d2, d3};
    std::string q = "which " + category_names()[std::size_t(cat)] + " " + kMissingMarker + " " +
                    relation_names()[std::size_t(p)] + " " + word + " ?";
    return finish_instance(w, id, q, opts, g, "missing-knowledge", rng);
  }
  throw dataset_error("missing-knowledge generation exhausted fresh entities; pool too small");
}

std::vector<McqaInstance> gen_split(World& w, const DatasetConfig& cfg, int split, int count,
                                    const char* split_name, Rng& rng) {
  std::vector<McqaInstance> out;
  for (int i = 0; i < count; ++i) {
    std::string id = cfg.scenario + "-" + split_name + "-" + std::to_string(i);
    if (cfg.scenario == "standard") {
      out.push_back(gen_standard(w, split, id, rng, cfg.n_options));
    } else if (cfg.scenario == "distractor") {
      out.push_back(gen_distractor(w, split, id, rng, cfg.n_options));
    } else if (cfg.scenario == "missing") {
      out.push_back(gen_missing(w, split, id, rng, cfg.n_options));
    } else {  // mixed: alternate for an exact 50/50 split
      if (i % 2 == 0)
        out.push_back(gen_distractor(w, split, id, rng, cfg.n_options));
      else
        out.push_back(gen_missing(w, split, id, rng, cfg.n_options));
    }
  }
  return out;
}

}  // namespace

void DatasetConfig::validate() const {
  if (n_train < 1 || n_dev < 1 || n_test < 1)
    throw dataset_error("every split needs at least one instance");
  if (n_options < 2 || n_options > 26) throw dataset_error("option count out of range");
  if (n_entities < 4 * n_options) throw dataset_error("entity pool too small");
  if (scenario != "standard" && scenario != "distractor" && scenario != "missing" &&
      scenario != "mixed")
    throw dataset_error("unknown scenario: " + scenario);
  if (n_options != 4 && scenario != "standard")
    throw dataset_error("scenario '" + scenario + "' is defined for 4 options");
}

GeneratedDataset generate_dataset(const DatasetConfig& cfg) {
  cfg.validate();
  World w = build_world(cfg);
  Rng rng(cfg.seed ^ fnv1a("gen/instances"));

  GeneratedDataset out;
  out.train = gen_split(w, cfg, 0, cfg.n_train, "train", rng);
  out.dev = gen_split(w, cfg, 1, cfg.n_dev, "dev", rng);
  out.test = gen_split(w, cfg, 2, cfg.n_test, "test", rng);

  // property edges first (in entity order), then sibling edges
  for (std::size_t e = 0; e < w.names.size(); ++e)
    for (std::size_t p = 0; p < relation_names().size(); ++p)
      for (int v : w.props[e][p])
        out.kg_lines.push_back(w.names[e] + "\t" + relation_names()[p] + "\t" +
                               value_node_name(w.pools[p][std::size_t(v)]));
  for (const auto& [a, b] : w.sibling_edges)
    out.kg_lines.push_back(w.names[std::size_t(a)] + "\t" + kSiblingRelation + "\t" +
                           w.names[std::size_t(b)]);

  // pretraining corpus: every split's rendered prompt (prompts carry no
  // answers) plus entity-name lines so all surfaces enter the vocabulary.
  // Prompts are stored one per line with inner newlines flattened; the
  // whitespace tokenizer yields the same id stream either way.
  for (const auto* split : {&out.train, &out.dev, &out.test}) {
    for (const auto& inst : *split) {
      std::string line = render_prompt(inst);
      std::replace(line.begin(), line.end(), '\n', ' ');
      out.corpus.push_back(line);
    }
  }
  std::string line;
  int per_line = 0;
  auto push_word = [&](const std::string& name) {
    line += (per_line ? " " : "") + name;
    if (++per_line == 16) {
      out.corpus.push_back(line);
      line.clear();
      per_line = 0;
    }
  };
  for (const auto& name : w.names) push_word(name);
  push_word(kValueSuffix);
  if (!line.empty()) out.corpus.push_back(line);
  return out;
}

std::string GeneratedDataset::kg_text() const {
  std::string out;
  for (const auto& l : kg_lines) out += l + "\n";
  return out;
}

void write_jsonl(const std::vector<McqaInstance>& set, std::ostream& out) {
  for (const auto& inst : set) {
    nlohmann::json j{{"id", inst.id},
                     {"question", inst.question},
                     {"options", inst.options},
                     {"gold", inst.gold},
                     {"scenario", inst.scenario}};
    out << j.dump() << "\n";
  }
}

std::vector<McqaInstance> load_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw dataset_error("cannot open: " + path);
  std::vector<McqaInstance> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      nlohmann::json j = nlohmann::json::parse(line);
      McqaInstance inst;
      inst.id = j.at("id").get<std::string>();
      inst.question = j.at("question").get<std::string>();
      inst.options = j.at("options").get<std::vector<std::string>>();
      inst.gold = j.at("gold").get<int>();
      inst.scenario = j.value("scenario", "standard");
      inst.validate();
      out.push_back(std::move(inst));
    } catch (const nlohmann::json::exception& e) {
      throw dataset_error(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

std::vector<std::string> load_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw dataset_error("cannot open: " + path);
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) out.push_back(line);
  return out;
}

void write_dataset(const GeneratedDataset& data, const std::string& dir) {
  auto open = [&dir](const std::string& name) {
    std::ofstream out(dir + "/" + name, std::ios::trunc);
    if (!out) throw dataset_error("cannot write " + dir + "/" + name);
    return out;
  };
  {
    std::ofstream kg = open("kg.tsv");
    kg << data.kg_text();
  }
  {
    std::ofstream c = open("corpus.txt");
    for (const auto& l : data.corpus) c << l << "\n";
  }
  open("train.jsonl") << [&] {
    std::ostringstream os;
    write_jsonl(data.train, os);
    return os.str();
  }();
  open("dev.jsonl") << [&] {
    std::ostringstream os;
    write_jsonl(data.dev, os);
    return os.str();
  }();
  open("test.jsonl") << [&] {
    std::ostringstream os;
    write_jsonl(data.test, os);
    return os.str();
  }();
}

int rule_based_oracle(const McqaInstance& inst, const KnowledgeGraph& kg) {
  // first (relation, entity) pair in the question drives the lookup
  std::vector<std::string> toks = tokenize_words(inst.question);
  int rel = -1, val = -1;
  for (std::size_t i = 0; i + 1 < toks.size() && rel < 0; ++i) {
    for (std::size_t r = 0; r < relation_names().size(); ++r) {
      if (toks[i] == relation_names()[r]) {
        int v = kg.find_entity(value_node_name(toks[i + 1]));
        if (v >= 0) {
          rel = int(r);
          val = v;
        }
        break;
      }
    }
  }
  if (rel < 0) return -1;
  int found = -1;
  for (int k = 0; k < inst.n_options(); ++k) {
    int o = kg.find_entity(tokenize_words(inst.options[std::size_t(k)]).front());
    if (o < 0) continue;
    for (const auto& nb : kg.neighbors(o)) {
      if (nb.dir != EdgeDir::forward || nb.entity != val) continue;
      if (kg.relation_name(nb.relation) != relation_names()[std::size_t(rel)]) continue;
      if (found >= 0) return -1;  // ambiguous
      found = k;
      break;
    }
  }
  return found;
}

double oracle_accuracy(const std::vector<McqaInstance>& set, const KnowledgeGraph& kg) {
  if (set.empty()) throw dataset_error("oracle_accuracy: empty set");
  int hits = 0;
  for (const auto& inst : set) hits += (rule_based_oracle(inst, kg) == inst.gold);
  return double(hits) / double(set.size());
}

}  // namespace qap
