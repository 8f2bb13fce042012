#pragma once

#include <istream>
#include <set>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace qap {

class kg_error : public std::runtime_error {
 public:
  explicit kg_error(const std::string& what) : std::runtime_error(what) {}
};

enum class EdgeDir { forward, reverse };

// Interned knowledge graph: entities E, relations R, triples T = {(h,r,t)}.
// Immutable after load; ids follow first appearance in the input stream.
class KnowledgeGraph {
 public:
  struct Neighbor {
    int entity;
    int relation;
    EdgeDir dir;  // forward: this node is the head of the triple
  };
  struct Triple {
    int head;
    int relation;
    int tail;
  };

  int entity_count() const { return static_cast<int>(entity_names_.size()); }
  int relation_count() const { return static_cast<int>(relation_names_.size()); }
  int triple_count() const { return static_cast<int>(triples_.size()); }

  const std::string& entity_name(int id) const { return entity_names_.at(static_cast<std::size_t>(id)); }
  const std::string& relation_name(int id) const { return relation_names_.at(static_cast<std::size_t>(id)); }
  const std::vector<Triple>& triples() const { return triples_; }
  const std::vector<Neighbor>& neighbors(int entity) const {
    return adjacency_.at(static_cast<std::size_t>(entity));
  }

  // -1 if absent; lookup key is the lowercased surface string
  int find_entity(const std::string& lowercase_surface) const;

  friend KnowledgeGraph load_triples(std::istream& in);

 private:
  int intern_entity(const std::string& name);
  int intern_relation(const std::string& name);

  std::vector<std::string> entity_names_;
  std::vector<std::string> relation_names_;
  std::unordered_map<std::string, int> entity_ids_;  // lowercased surface -> id
  std::unordered_map<std::string, int> relation_ids_;
  std::vector<Triple> triples_;
  std::vector<std::vector<Neighbor>> adjacency_;
};

// Per-option contextualized subgraph: the N-hop neighborhood of the seed
// entities mentioned in the question/option, plus all edges between
// retained nodes (each kept triple appears in both directions).
struct ContextSubgraph {
  struct Edge {
    int src;       // local node index
    int relation;  // KG relation id
    int dst;       // local node index
    EdgeDir dir;   // forward: the KG triple reads (src, relation, dst)
  };
  int option_index = -1;
  std::vector<int> nodes;       // KG entity ids, BFS discovery order
  std::vector<Edge> edges;
  std::vector<bool> seed_mask;  // per local node
  std::vector<int> hop_of_node;

  bool empty() const { return nodes.empty(); }
  int size() const { return static_cast<int>(nodes.size()); }
};

// Parses head<TAB>relation<TAB>tail lines; '#' starts a comment line.
// Duplicate triples collapse; malformed lines raise kg_error with the
// line number.
KnowledgeGraph load_triples(std::istream& in);

// Case-insensitive longest-match scan of whitespace-tokenized text against
// entity surfaces; greedy left to right, overlapping shorter matches
// suppressed.
std::set<int> link_entities(const std::string& text, const KnowledgeGraph& kg);

// Bidirectional BFS from link_entities(question) + link_entities(option),
// hop limit n_hops, at most cap nodes admitted in (hop, entity-id) order.
ContextSubgraph retrieve_subgraph(const KnowledgeGraph& kg, const std::string& question,
                                  const std::string& option, int n_hops, int cap,
                                  int option_index = -1);

// Same expansion from an explicit seed set (used by tests and the harness
// oracle).
ContextSubgraph retrieve_subgraph_from_seeds(const KnowledgeGraph& kg,
                                             const std::set<int>& seeds, int n_hops, int cap,
                                             int option_index = -1);

// Lowercased words with surrounding punctuation stripped; shared by the
// entity linker and the LM tokenizer.
std::vector<std::string> tokenize_words(const std::string& text);

}  // namespace qap
