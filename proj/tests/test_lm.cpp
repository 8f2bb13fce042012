#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>

#include <qap/lm.hpp>

using namespace qap;

namespace {

std::vector<std::string> tiny_corpus() {
  std::vector<std::string> lines;
  const char* fruits[] = {"banana", "lemon", "apple", "grape", "plum", "cherry"};
  const char* colors[] = {"yellow", "red", "green", "purple"};
  Rng rng(99);
  for (int i = 0; i < 60; ++i) {
    std::string q = "question: which fruit has color ";
    q += colors[rng.next_below(4)];
    q += " ? options:";
    const char* letters = "ABCD";
    for (int k = 0; k < 4; ++k) {
      q += std::string(" ") + letters[k] + ". " + fruits[rng.next_below(6)];
    }
    q += " answer:";
    lines.push_back(q);
  }
  return lines;
}

}  // namespace

TEST_CASE("vocabulary reserves labels and is stable") {
  auto corpus = tiny_corpus();
  Vocabulary v = Vocabulary::build(corpus);
  CHECK(Vocabulary::label_index("A.") == 0);
  CHECK(Vocabulary::label_index("c.") == 2);
  CHECK(Vocabulary::label_index("banana") == -1);
  CHECK(v.encode("A. banana")[0] == Vocabulary::label_id(0));
  Vocabulary v2 = Vocabulary::build(corpus);
  CHECK(v.size() == v2.size());
  for (int i = 0; i < v.size(); ++i) CHECK(v.token_name(i) == v2.token_name(i));
}

TEST_CASE("encode_question mean pooling") {
  Vocabulary v = Vocabulary::build({"alpha beta gamma"});
  FrozenLm<double> lm = init_lm<double>(v, 16, 64, 5);

  SUBCASE("single token equals that token's encoder output") {
    Mat<double> q = encode_question(lm, "alpha");
    Tape<double> t;
    BoundParams<double> lmp = bind(t, lm.params, false);
    TensorRef states = lm_encode(t, lmp, lm, TensorRef{}, lm.vocab.encode("alpha"));
    CHECK((q - t.value(states)).cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("two tokens average") {
    Mat<double> q = encode_question(lm, "alpha beta");
    Tape<double> t;
    BoundParams<double> lmp = bind(t, lm.params, false);
    TensorRef states = lm_encode(t, lmp, lm, TensorRef{}, lm.vocab.encode("alpha beta"));
    Mat<double> manual = (t.value(states).row(0) + t.value(states).row(1)) / 2.0;
    CHECK((q - manual).cwiseAbs().maxCoeff() < 1e-12);
  }
  SUBCASE("independent raw-primitive recomputation of the pooling") {
    Mat<double> q = encode_question(lm, "alpha beta gamma");
    Tape<double> t;
    BoundParams<double> lmp = bind(t, lm.params, false);
    TensorRef states = lm_encode(t, lmp, lm, TensorRef{}, lm.vocab.encode("alpha beta gamma"));
    Mat<double> manual = Mat<double>::Zero(1, 16);
    for (int i = 0; i < 3; ++i) manual += t.value(states).row(i);
    manual /= 3.0;
    CHECK((q - manual).cwiseAbs().maxCoeff() < 1e-6);
  }
  SUBCASE("empty question is an error") {
    CHECK_THROWS_AS(encode_question(lm, "  ?!  "), lm_error);
  }
}

TEST_CASE("option_sequence layout, truncation, and lookup oracle") {
  Vocabulary v = Vocabulary::build({"x y z"});
  FrozenLm<double> lm = init_lm<double>(v, 8, 64, 3);
  Mat<double> seq = option_sequence(lm, "x", "y");
  const Mat<double>& table = lm.params.at("lm/tok_emb");
  REQUIRE(seq.rows() == 3);
  CHECK((seq.row(0) - table.row(Vocabulary::kBos)).cwiseAbs().maxCoeff() == 0.0);
  CHECK((seq.row(1) - table.row(lm.vocab.encode("x")[0])).cwiseAbs().maxCoeff() == 0.0);
  CHECK((seq.row(2) - table.row(lm.vocab.encode("y")[0])).cwiseAbs().maxCoeff() == 0.0);

  lm.m_max = 2;
  Mat<double> cut = option_sequence(lm, "x", "y");
  CHECK(cut.rows() == 2);  // last token dropped
  CHECK((cut.row(1) - table.row(lm.vocab.encode("x")[0])).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("empty prefix scoring equals the plain forward pass bitwise") {
  Vocabulary v = Vocabulary::build(tiny_corpus());
  FrozenLm<double> lm = init_lm<double>(v, 16, 64, 11);
  Mat<double> a = score_with_prefix(lm, Mat<double>(), "question: which fruit answer:");
  Tape<double> t;
  BoundParams<double> lmp = bind(t, lm.params, false);
  std::vector<int> ids;
  ids.push_back(Vocabulary::kBos);
  for (int id : lm.vocab.encode("question: which fruit answer:")) ids.push_back(id);
  Mat<double> b = t.value(lm_logits(t, lmp, lm, TensorRef{}, ids));
  REQUIRE(a.rows() == b.rows());
  REQUIRE(a.cols() == b.cols());
  CHECK(std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<std::size_t>(a.size())) == 0);

  // repeatability
  Mat<double> c = score_with_prefix(lm, Mat<double>(), "question: which fruit answer:");
  CHECK(std::memcmp(a.data(), c.data(), sizeof(double) * static_cast<std::size_t>(a.size())) == 0);
}

TEST_CASE("prefix width mismatch is a shape error") {
  Vocabulary v = Vocabulary::build({"w"});
  FrozenLm<double> lm = init_lm<double>(v, 8, 64, 1);
  Mat<double> bad = Mat<double>::Zero(2, 5);
  CHECK_THROWS_AS(score_with_prefix(lm, bad, "w"), tape_error);
}

TEST_CASE("cross-entropy gradient w.r.t. prefix matches finite differences") {
  Vocabulary v = Vocabulary::build(tiny_corpus());
  FrozenLm<double> lm = init_lm<double>(v, 12, 64, 21);
  std::string prompt = "question: which fruit has color red ? answer:";
  int target = Vocabulary::label_id(1);
  Rng rng(4);
  Mat<double> prefix = randn<double>(3, 12, rng, 1.0);

  Tape<double> t;
  BoundParams<double> lmp = bind(t, lm.params, false);
  TensorRef p = t.leaf(prefix, true);
  TensorRef loss = cross_entropy(t, score_with_prefix(t, lmp, lm, p, prompt), target);
  t.backward(loss);
  Mat<double> analytic = t.grad(p);

  auto f = [&](const Mat<double>& m) {
    Tape<double> tt;
    BoundParams<double> b = bind(tt, lm.params, false);
    TensorRef pp = tt.leaf(m, true);
    return tt.value(cross_entropy(tt, score_with_prefix(tt, b, lm, pp, prompt), target))(0, 0);
  };
  Mat<double> numeric = finite_diff_gradient<double>(f, prefix, 1e-4);
  double scale = std::max(1.0, numeric.cwiseAbs().maxCoeff());
  CHECK((analytic - numeric).cwiseAbs().maxCoeff() / scale < 1e-4);

  // LM weights stay gradient-free
  for (const auto& [name, ref] : lmp.refs) CHECK_FALSE(t.has_grad(ref));
}

TEST_CASE("pretrain_format: format competence, determinism, no factual signal") {
  auto corpus = tiny_corpus();
  std::vector<std::string> train(corpus.begin(), corpus.end() - 12);
  std::vector<std::string> held(corpus.end() - 12, corpus.end());

  PretrainConfig cfg;
  cfg.d_t = 32;
  cfg.steps = 2500;
  FrozenLm<float> lm = pretrain_format<float>(train, 7, cfg);

  double mass = 0;
  for (const auto& prompt : held) {
    Mat<float> logits = score_with_prefix(lm, Mat<float>(), prompt);
    Eigen::Array<float, 1, Eigen::Dynamic> p =
        (logits.row(0).array() - logits.row(0).maxCoeff()).exp();
    p /= p.sum();
    double label_mass = 0;
    for (int k = 0; k < 4; ++k) label_mass += p(Vocabulary::label_id(k));
    mass += label_mass;
  }
  mass /= static_cast<double>(held.size());
  CHECK(mass > 0.95);

  FrozenLm<float> lm2 = pretrain_format<float>(train, 7, cfg);
  CHECK(lm.checksum() == lm2.checksum());
  FrozenLm<float> lm3 = pretrain_format<float>(train, 8, cfg);
  CHECK(lm.checksum() != lm3.checksum());

  CHECK_THROWS_AS(pretrain_format<float>({}, 1, cfg), lm_error);
}

TEST_CASE("routed prefix steers the pretrained LM") {
  auto corpus = tiny_corpus();
  PretrainConfig cfg;
  cfg.d_t = 32;
  cfg.steps = 2500;
  FrozenLm<float> lm = pretrain_format<float>(corpus, 7, cfg);
  const Mat<float>& cue = lm.params.at("lm/cue");
  Rng rng(123);
  int hits = 0, total = 0;
  for (const auto& prompt : corpus) {
    for (int hot = 0; hot < 4; ++hot) {
      Mat<float> prefix = randn<float>(4, 32, rng, 0.7);
      prefix.row(hot) += cue.row(0) * 2.0f;
      Mat<float> logits = score_with_prefix(lm, prefix, prompt);
      int best = 0;
      for (int k = 1; k < 4; ++k)
        if (logits(0, Vocabulary::label_id(k)) > logits(0, Vocabulary::label_id(best))) best = k;
      hits += (best == hot);
      ++total;
      if (total >= 80) break;
    }
    if (total >= 80) break;
  }
  // routing skill is what trained soft prompts will exploit
  CHECK(static_cast<double>(hits) / total > 0.8);
}
