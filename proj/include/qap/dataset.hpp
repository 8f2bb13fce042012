#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "qap/kg.hpp"
#include "qap/mcqa.hpp"

namespace qap {

class dataset_error : public std::runtime_error {
 public:
  explicit dataset_error(const std::string& what) : std::runtime_error(what) {}
};

// Scenario semantics:
//  standard        -- one property edge decides the answer
//  distractor      -- gold and a trap option both point at the questioned
//                     value node, under different relations and with
//                     balanced per-relation edge counts, so surface matching
//                     ties the pair and only the relation on the matching
//                     edge separates them
//  missing         -- the gold lacks the questioned edge; a sibling_of-linked
//                     option and the two remaining options all own it, so the
//                     gold is the one option without the direct evidence
//  mixed           -- 50/50 distractor + missing
struct DatasetConfig {
  int n_entities = 200;
  int n_train = 500;
  int n_dev = 100;
  int n_test = 200;
  int n_options = 4;
  std::string scenario = "standard";
  std::uint64_t seed = 0;

  void validate() const;
};

struct GeneratedDataset {
  std::vector<std::string> kg_lines;  // head<TAB>relation<TAB>tail
  std::vector<McqaInstance> train, dev, test;
  std::vector<std::string> corpus;  // LM format-pretraining lines

  std::string kg_text() const;
};

GeneratedDataset generate_dataset(const DatasetConfig& cfg);

// Writes kg.tsv, {train,dev,test}.jsonl, corpus.txt under dir.
void write_dataset(const GeneratedDataset& data, const std::string& dir);

std::vector<McqaInstance> load_jsonl(const std::string& path);
void write_jsonl(const std::vector<McqaInstance>& set, std::ostream& out);
std::vector<std::string> load_lines(const std::string& path);

// 1-hop lookup baseline: parse the questioned relation and value tokens,
// answer the option owning that direct edge; -1 when no unique owner.
int rule_based_oracle(const McqaInstance& inst, const KnowledgeGraph& kg);

double oracle_accuracy(const std::vector<McqaInstance>& set, const KnowledgeGraph& kg);

}  // namespace qap
