#include "qap/kg.hpp"

#include <algorithm>
#include <cctype>
#include <map>
#include <sstream>
#include <tuple>

namespace qap {

namespace {

std::string to_lower(const std::string& s) {
  std::string out = s;
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

bool word_char(unsigned char c) { return std::isalnum(c) || c == '_'; }

}  // namespace

std::vector<std::string> tokenize_words(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream is(text);
  std::string tok;
  while (is >> tok) {
    // strip surrounding punctuation ("color?" -> "color")
    std::size_t b = 0, e = tok.size();
    while (b < e && !word_char(static_cast<unsigned char>(tok[b]))) ++b;
    while (e > b && !word_char(static_cast<unsigned char>(tok[e - 1]))) --e;
    if (b == e) continue;
    out.push_back(to_lower(tok.substr(b, e - b)));
  }
  return out;
}

int KnowledgeGraph::find_entity(const std::string& lowercase_surface) const {
  auto it = entity_ids_.find(lowercase_surface);
  return it == entity_ids_.end() ? -1 : it->second;
}

int KnowledgeGraph::intern_entity(const std::string& name) {
  std::string key = to_lower(name);
  auto it = entity_ids_.find(key);
  if (it != entity_ids_.end()) return it->second;
  int id = static_cast<int>(entity_names_.size());
  entity_ids_.emplace(std::move(key), id);
  entity_names_.push_back(name);
  adjacency_.emplace_back();
  return id;
}

int KnowledgeGraph::intern_relation(const std::string& name) {
  auto it = relation_ids_.find(name);
  if (it != relation_ids_.end()) return it->second;
  int id = static_cast<int>(relation_names_.size());
  relation_ids_.emplace(name, id);
  relation_names_.push_back(name);
  return id;
}

KnowledgeGraph load_triples(std::istream& in) {
  KnowledgeGraph kg;
  std::set<std::tuple<int, int, int>> seen;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::size_t t1 = line.find('\t');
    std::size_t t2 = t1 == std::string::npos ? std::string::npos : line.find('\t', t1 + 1);
    if (t1 == std::string::npos || t2 == std::string::npos ||
        line.find('\t', t2 + 1) != std::string::npos)
      throw kg_error("malformed triple at line " + std::to_string(lineno) +
                     ": expected head<TAB>relation<TAB>tail");
    std::string h = line.substr(0, t1);
    std::string r = line.substr(t1 + 1, t2 - t1 - 1);
    std::string t = line.substr(t2 + 1);
    if (h.empty() || r.empty() || t.empty())
      throw kg_error("malformed triple at line " + std::to_string(lineno) + ": empty field");
    int hid = kg.intern_entity(h);
    int rid = kg.intern_relation(r);
    int tid = kg.intern_entity(t);
    if (!seen.insert({hid, rid, tid}).second) continue;
    kg.triples_.push_back({hid, rid, tid});
    kg.adjacency_[static_cast<std::size_t>(hid)].push_back({tid, rid, EdgeDir::forward});
    kg.adjacency_[static_cast<std::size_t>(tid)].push_back({hid, rid, EdgeDir::reverse});
  }
  return kg;
}

std::set<int> link_entities(const std::string& text, const KnowledgeGraph& kg) {
  std::vector<std::string> tokens = tokenize_words(text);
  // longest entity surface measured in words
  std::size_t max_words = 1;
  for (int e = 0; e < kg.entity_count(); ++e) {
    std::size_t w = tokenize_words(kg.entity_name(e)).size();
    max_words = std::max(max_words, w);
  }
  std::set<int> out;
  std::size_t i = 0;
  while (i < tokens.size()) {
    std::size_t longest = std::min(max_words, tokens.size() - i);
    bool matched = false;
    for (std::size_t len = longest; len >= 1; --len) {
      std::string joined = tokens[i];
      for (std::size_t k = 1; k < len; ++k) joined += " " + tokens[i + k];
      int id = kg.find_entity(joined);
      if (id >= 0) {
        out.insert(id);
        i += len;
        matched = true;
        break;
      }
    }
    if (!matched) ++i;
  }
  return out;
}

ContextSubgraph retrieve_subgraph_from_seeds(const KnowledgeGraph& kg, const std::set<int>& seeds,
                                             int n_hops, int cap, int option_index) {
  if (n_hops < 0) throw kg_error("retrieve_subgraph: hop limit must be >= 0");
  if (cap < 1) throw kg_error("retrieve_subgraph: node cap must be >= 1");
  ContextSubgraph sg;
  sg.option_index = option_index;
  if (seeds.empty()) return sg;

  std::map<int, int> local;  // entity id -> local index
  auto admit = [&](int entity, int hop, bool seed) {
    local.emplace(entity, static_cast<int>(sg.nodes.size()));
    sg.nodes.push_back(entity);
    sg.seed_mask.push_back(seed);
    sg.hop_of_node.push_back(hop);
  };

  // std::set iterates in id order, which fixes the capped admission order
  for (int s : seeds) {
    if (static_cast<int>(sg.nodes.size()) >= cap) break;
    admit(s, 0, true);
  }

  std::vector<int> frontier = sg.nodes;
  for (int hop = 1; hop <= n_hops && static_cast<int>(sg.nodes.size()) < cap; ++hop) {
    std::set<int> candidates;
    for (int e : frontier)
      for (const auto& nb : kg.neighbors(e))
        if (!local.count(nb.entity)) candidates.insert(nb.entity);
    frontier.clear();
    for (int c : candidates) {
      if (static_cast<int>(sg.nodes.size()) >= cap) break;
      admit(c, hop, false);
      frontier.push_back(c);
    }
  }

  for (const auto& tr : kg.triples()) {
    auto hi = local.find(tr.head);
    auto ti = local.find(tr.tail);
    if (hi == local.end() || ti == local.end()) continue;
    sg.edges.push_back({hi->second, tr.relation, ti->second, EdgeDir::forward});
    sg.edges.push_back({ti->second, tr.relation, hi->second, EdgeDir::reverse});
  }
  return sg;
}

ContextSubgraph retrieve_subgraph(const KnowledgeGraph& kg, const std::string& question,
                                  const std::string& option, int n_hops, int cap,
                                  int option_index) {
  std::set<int> seeds = link_entities(question, kg);
  std::set<int> from_option = link_entities(option, kg);
  seeds.insert(from_option.begin(), from_option.end());
  return retrieve_subgraph_from_seeds(kg, seeds, n_hops, cap, option_index);
}

}  // namespace qap
