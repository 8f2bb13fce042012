#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>
#include <map>
#include <sstream>

#include <qap/qna.hpp>

using namespace qap;

namespace {

KnowledgeGraph fruit_kg() {
  std::istringstream in(
      "banana\thas_color\tyellow\n"
      "banana\thas_taste\tsweet\n"
      "lemon\thas_color\tyellow\n"
      "lemon\thas_taste\tsour\n"
      "yellow\tis_a\tcolor\n");
  return load_triples(in);
}

Vocabulary fruit_vocab() {
  return Vocabulary::build({"banana lemon yellow sweet sour color has taste is a"});
}

// Value-level single-layer recomputation: per-node neighborhoods, the
// pairwise component helpers, explicit message sums. Independent of the
// tape's edge-list kernels.
template <class S>
Mat<S> dense_layer_oracle(const Mat<S>& states, const ContextSubgraph& sg,
                          const ParameterStore<S>& ps, const QnaConfig& cfg, int layer,
                          const Mat<S>& q) {
  int n = static_cast<int>(states.rows());
  int dh = cfg.head_width();
  Mat<S> out = states;
  for (int i = 0; i < n; ++i) {
    std::vector<int> in_edges;
    for (std::size_t e = 0; e < sg.edges.size(); ++e)
      if (sg.edges[e].dst == i) in_edges.push_back(static_cast<int>(e));
    if (in_edges.empty()) continue;
    Mat<S> z(1, cfg.d_g);
    for (int h = 0; h < cfg.heads; ++h) {
      std::vector<AttnComponents<S>> comps;
      for (int e : in_edges) {
        const auto& edge = sg.edges[static_cast<std::size_t>(e)];
        comps.push_back(attention_components<S>(
            ps.at(qna_names::w_q(layer, h)), ps.at(qna_names::w_k(layer, h)),
            ps.at(qna_names::wq_q(layer, h)), ps.at(qna_names::wq_k(layer, h)), states.row(i),
            states.row(edge.src), q));
      }
      std::vector<S> alpha = aggregation_weights(comps, cfg.gamma);
      Mat<S> acc = Mat<S>::Zero(1, dh);
      for (std::size_t j = 0; j < in_edges.size(); ++j) {
        const auto& edge = sg.edges[static_cast<std::size_t>(in_edges[j])];
        Mat<S> msg = states.row(edge.src) * ps.at(qna_names::w_h(layer, h));
        if (cfg.relation_embeddings)
          msg += ps.at(qna_names::rel_emb(layer))
                     .row(2 * edge.relation + (edge.dir == EdgeDir::forward ? 0 : 1));
        acc += alpha[j] * msg;
      }
      z.block(0, h * dh, 1, dh) = acc;
    }
    out.row(i) = z * ps.at(qna_names::w_o(layer)) + states.row(i);
  }
  return out;
}

}  // namespace

TEST_CASE("config validation") {
  QnaConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.gamma = 0.5;
  CHECK_THROWS_AS(cfg.validate(), qna_error);
  cfg.gamma = 0.0;
  CHECK_THROWS_AS(cfg.validate(), qna_error);
  cfg.question_terms = false;
  CHECK_NOTHROW(cfg.validate());
  cfg.gamma = 0.1;
  CHECK_THROWS_AS(cfg.validate(), qna_error);
  cfg = QnaConfig{};
  cfg.d_g = 30;  // not divisible by 4 heads
  CHECK_THROWS_AS(cfg.validate(), qna_error);
  cfg = QnaConfig{};
  cfg.heads = 0;
  CHECK_THROWS_AS(cfg.validate(), qna_error);
}

TEST_CASE("attention components") {
  int d_g = 6, d_k = 4, d_t = 5;
  SUBCASE("zero weights give zero components") {
    Mat<double> z1 = Mat<double>::Zero(d_g, d_k), z2 = Mat<double>::Zero(d_t, d_k);
    Rng rng(1);
    Mat<double> hi = randn<double>(1, d_g, rng, 1.0), hj = randn<double>(1, d_g, rng, 1.0);
    Mat<double> q = randn<double>(1, d_t, rng, 1.0);
    auto c = attention_components<double>(z1, z1, z2, z2, hi, hj, q);
    CHECK(c.n_ij == 0.0);
    CHECK(c.h_iq == 0.0);
    CHECK(c.t_qj == 0.0);
  }
  SUBCASE("all-ones query and key") {
    // Q_i = K_j = 1-vector: dot = d_k, scaled by 1/sqrt(d_k) -> sqrt(d_k)
    Mat<double> w = Mat<double>::Zero(d_g, d_k);
    w.row(0).setOnes();
    Mat<double> wq = Mat<double>::Zero(d_t, d_k);
    Mat<double> e1 = Mat<double>::Zero(1, d_g);
    e1(0, 0) = 1.0;
    Mat<double> q = Mat<double>::Zero(1, d_t);
    auto c = attention_components<double>(w, w, wq, wq, e1, e1, q);
    CHECK(c.n_ij == doctest::Approx(std::sqrt(double(d_k))).epsilon(1e-12));
  }
  SUBCASE("random instance matches raw dot-product oracle") {
    Rng rng(7);
    for (int trial = 0; trial < 20; ++trial) {
      Mat<double> wq = randn<double>(d_g, d_k, rng, 1.0), wk = randn<double>(d_g, d_k, rng, 1.0);
      Mat<double> wqq = randn<double>(d_t, d_k, rng, 1.0), wqk = randn<double>(d_t, d_k, rng, 1.0);
      Mat<double> hi = randn<double>(1, d_g, rng, 1.0), hj = randn<double>(1, d_g, rng, 1.0);
      Mat<double> q = randn<double>(1, d_t, rng, 1.0);
      auto c = attention_components<double>(wq, wk, wqq, wqk, hi, hj, q);
      double inv = 1.0 / std::sqrt(double(d_k));
      double n = 0, h = 0, t = 0;
      for (int a = 0; a < d_k; ++a) {
        double qi = 0, kj = 0, kq = 0, qq = 0;
        for (int b = 0; b < d_g; ++b) qi += hi(0, b) * wq(b, a);
        for (int b = 0; b < d_g; ++b) kj += hj(0, b) * wk(b, a);
        for (int b = 0; b < d_t; ++b) kq += q(0, b) * wqk(b, a);
        for (int b = 0; b < d_t; ++b) qq += q(0, b) * wqq(b, a);
        n += qi * kj;
        h += qi * kq;
        t += qq * kj;
      }
      CHECK(std::abs(c.n_ij - n * inv) < 1e-6);
      CHECK(std::abs(c.h_iq - h * inv) < 1e-6);
      CHECK(std::abs(c.t_qj - t * inv) < 1e-6);
    }
  }
  SUBCASE("width mismatch is a shape error") {
    Mat<double> w = Mat<double>::Zero(d_g, d_k), wq = Mat<double>::Zero(d_t, d_k);
    Mat<double> hi = Mat<double>::Zero(1, d_g + 1);
    CHECK_THROWS_AS(attention_components<double>(w, w, wq, wq, hi, hi, Mat<double>::Zero(1, d_t)),
                    tape_error);
  }
}

TEST_CASE("aggregation weights") {
  SUBCASE("single neighbor gets weight one") {
    std::vector<AttnComponents<double>> comps{{3.7, -1.2, 0.4}};
    auto a = aggregation_weights(comps, 0.2);
    REQUIRE(a.size() == 1);
    CHECK(a[0] == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("gamma 1/3 averages the three components") {
    std::vector<AttnComponents<double>> comps{{0.3, 0.6, 0.9}, {-0.4, 0.1, 0.2}};
    auto a = aggregation_weights(comps, 1.0 / 3.0);
    double a0 = (0.3 + 0.6 + 0.9) / 3.0, a1 = (-0.4 + 0.1 + 0.2) / 3.0;
    double e0 = std::exp(a0), e1 = std::exp(a1);
    CHECK(a[0] == doctest::Approx(e0 / (e0 + e1)).epsilon(1e-12));
    CHECK(a[1] == doctest::Approx(e1 / (e0 + e1)).epsilon(1e-12));
  }
  SUBCASE("analytic softmax of [0, ln 2]") {
    // gamma 0.25 puts weight 0.5 on the neighbor term
    std::vector<AttnComponents<double>> comps{{0.0, 0.0, 0.0}, {2.0 * std::log(2.0), 0.0, 0.0}};
    auto a = aggregation_weights(comps, 0.25);
    CHECK(a[0] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
    CHECK(a[1] == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  }
  SUBCASE("row-stochastic on random inputs") {
    Rng rng(11);
    for (int trial = 0; trial < 50; ++trial) {
      std::vector<AttnComponents<double>> comps;
      int n = 1 + static_cast<int>(rng.next_below(6));
      for (int j = 0; j < n; ++j)
        comps.push_back({rng.next_normal() * 3, rng.next_normal() * 3, rng.next_normal() * 3});
      auto a = aggregation_weights(comps, 0.05 + 0.4 * rng.next_double());
      double s = 0;
      for (double v : a) s += v;
      CHECK(std::abs(s - 1.0) < 1e-9);
    }
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(aggregation_weights<double>({}, 0.2), qna_error);
    std::vector<AttnComponents<double>> one{{0, 0, 0}};
    CHECK_THROWS_AS(aggregation_weights(one, 0.6), qna_error);
  }
}

TEST_CASE("layer-0 node features") {
  KnowledgeGraph kg = fruit_kg();
  FrozenLm<double> lm = init_lm<double>(fruit_vocab(), 12, 64, 3);

  SUBCASE("identity projector reproduces pooled embeddings") {
    QnaConfig cfg;
    cfg.d_g = 12;
    cfg.heads = 4;
    ParameterStore<double> ps;
    Rng rng(5);
    init_qna_params(ps, cfg, 12, kg.relation_count(), rng);
    ps.at(qna_names::projector) = Mat<double>::Identity(12, 12);
    ContextSubgraph sg = retrieve_subgraph(kg, "what is yellow", "banana", 1, 64);
    REQUIRE(!sg.empty());
    Tape<double> t;
    BoundParams<double> bound = bind(t, ps, true);
    Mat<double> h0 = t.value(init_node_features(t, sg, kg, lm, bound));
    const Mat<double>& table = lm.params.at("lm/tok_emb");
    for (int i = 0; i < sg.size(); ++i) {
      std::vector<int> ids = lm.vocab.encode(kg.entity_name(sg.nodes[std::size_t(i)]));
      // every entity here is a single vocabulary word
      REQUIRE(ids.size() == 1);
      CHECK((h0.row(i) - table.row(ids[0])).cwiseAbs().maxCoeff() < 1e-6);
    }
  }
  SUBCASE("identical surfaces give identical rows") {
    QnaConfig cfg;
    cfg.d_g = 8;
    cfg.heads = 2;
    ParameterStore<double> ps;
    Rng rng(6);
    init_qna_params(ps, cfg, 12, kg.relation_count(), rng);
    ContextSubgraph sg;
    sg.nodes = {kg.find_entity("banana"), kg.find_entity("banana")};
    Tape<double> t;
    BoundParams<double> bound = bind(t, ps, true);
    Mat<double> h0 = t.value(init_node_features(t, sg, kg, lm, bound));
    CHECK((h0.row(0) - h0.row(1)).cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("empty subgraph is an error") {
    ParameterStore<double> ps;
    QnaConfig cfg;
    Rng rng(6);
    init_qna_params(ps, cfg, 12, kg.relation_count(), rng);
    Tape<double> t;
    BoundParams<double> bound = bind(t, ps, true);
    ContextSubgraph sg;
    CHECK_THROWS_AS(init_node_features(t, sg, kg, lm, bound), qna_error);
  }
}

TEST_CASE("layer forward") {
  KnowledgeGraph kg = fruit_kg();
  QnaConfig cfg;
  cfg.layers = 1;
  cfg.heads = 2;
  cfg.d_g = 8;
  cfg.d_k = 4;
  ParameterStore<double> ps;
  Rng rng(17);
  init_qna_params(ps, cfg, 6, kg.relation_count(), rng);
  Mat<double> q = randn<double>(1, 6, rng, 1.0);
  ContextSubgraph sg = retrieve_subgraph(kg, "what color is a banana", "yellow", 2, 64);
  REQUIRE(sg.size() >= 3);
  Mat<double> states = randn<double>(sg.size(), cfg.d_g, rng, 1.0);

  SUBCASE("zero output mix is the residual identity") {
    ps.at(qna_names::w_o(0)).setZero();
    Tape<double> t;
    BoundParams<double> bound = bind(t, ps, true);
    TensorRef h = t.leaf(states, false);
    Mat<double> out = t.value(qna_layer_forward(t, h, sg, bound, cfg, 0, q));
    CHECK(std::memcmp(out.data(), states.data(),
                      sizeof(double) * std::size_t(states.size())) == 0);
  }
  SUBCASE("isolated node passes through unchanged") {
    ContextSubgraph iso = sg;
    iso.nodes.push_back(kg.find_entity("sour"));
    Mat<double> st2(iso.size(), cfg.d_g);
    st2.topRows(sg.size()) = states;
    st2.row(sg.size()) = randn<double>(1, cfg.d_g, rng, 1.0);
    Tape<double> t;
    BoundParams<double> bound = bind(t, ps, true);
    Mat<double> out = t.value(qna_layer_forward(t, t.leaf(st2, false), iso, bound, cfg, 0, q));
    CHECK((out.row(sg.size()) - st2.row(sg.size())).cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("matches the dense per-node oracle") {
    for (int trial = 0; trial < 10; ++trial) {
      ParameterStore<double> ps2;
      Rng r2(100 + trial);
      init_qna_params(ps2, cfg, 6, kg.relation_count(), r2);
      Mat<double> st = randn<double>(sg.size(), cfg.d_g, r2, 1.0);
      Mat<double> qq = randn<double>(1, 6, r2, 1.0);
      Tape<double> t;
      BoundParams<double> bound = bind(t, ps2, true);
      Mat<double> fast = t.value(qna_layer_forward(t, t.leaf(st, false), sg, bound, cfg, 0, qq));
      Mat<double> slow = dense_layer_oracle(st, sg, ps2, cfg, 0, qq);
      CHECK((fast - slow).cwiseAbs().maxCoeff() < 1e-6);
    }
  }
  SUBCASE("relation embeddings off also matches the oracle") {
    QnaConfig cfg2 = cfg;
    cfg2.relation_embeddings = false;
    ParameterStore<double> ps2;
    Rng r2(55);
    init_qna_params(ps2, cfg2, 6, kg.relation_count(), r2);
    Mat<double> st = randn<double>(sg.size(), cfg2.d_g, r2, 1.0);
    Tape<double> t;
    BoundParams<double> bound = bind(t, ps2, true);
    Mat<double> fast = t.value(qna_layer_forward(t, t.leaf(st, false), sg, bound, cfg2, 0, q));
    Mat<double> slow = dense_layer_oracle(st, sg, ps2, cfg2, 0, q);
    CHECK((fast - slow).cwiseAbs().maxCoeff() < 1e-6);
  }
}

TEST_CASE("alpha trace is row-stochastic per node, head, layer") {
  KnowledgeGraph kg = fruit_kg();
  FrozenLm<double> lm = init_lm<double>(fruit_vocab(), 10, 64, 9);
  QnaConfig cfg;
  cfg.layers = 2;
  cfg.heads = 2;
  cfg.d_g = 8;
  cfg.d_k = 4;
  ParameterStore<double> ps;
  Rng rng(21);
  init_qna_params(ps, cfg, 10, kg.relation_count(), rng);
  Mat<double> q = encode_question(lm, "what color is a banana");
  ContextSubgraph sg = retrieve_subgraph(kg, "what color is a banana", "yellow", 2, 64);
  Tape<double> t;
  BoundParams<double> bound = bind(t, ps, true);
  QnaTrace<double> trace;
  qna_forward(t, sg, kg, lm, q, bound, cfg, &trace);
  REQUIRE(trace.entries.size() == std::size_t(cfg.layers * cfg.heads));
  for (const auto& entry : trace.entries) {
    std::map<int, double> sums;
    for (int e = 0; e < entry.alpha.rows(); ++e) sums[entry.dst[std::size_t(e)]] += entry.alpha(e, 0);
    CHECK(!sums.empty());
    for (const auto& [node, s] : sums) CHECK(std::abs(s - 1.0) < 1e-9);
  }
}

TEST_CASE("full forward") {
  KnowledgeGraph kg = fruit_kg();
  FrozenLm<double> lm = init_lm<double>(fruit_vocab(), 10, 64, 9);
  ContextSubgraph sg = retrieve_subgraph(kg, "what color is a banana", "yellow", 2, 64);
  Mat<double> q1 = encode_question(lm, "what color is a banana");
  Mat<double> q2 = encode_question(lm, "which taste is sour");

  SUBCASE("zero layers returns layer-0 features") {
    QnaConfig cfg;
    cfg.layers = 0;
    cfg.heads = 2;
    cfg.d_g = 8;
    ParameterStore<double> ps;
    Rng rng(2);
    init_qna_params(ps, cfg, 10, kg.relation_count(), rng);
    Tape<double> t;
    BoundParams<double> bound = bind(t, ps, true);
    Mat<double> a = t.value(qna_forward(t, sg, kg, lm, q1, bound, cfg));
    Tape<double> t2;
    BoundParams<double> b2 = bind(t2, ps, true);
    Mat<double> b = t2.value(init_node_features(t2, sg, kg, lm, b2));
    CHECK(std::memcmp(a.data(), b.data(), sizeof(double) * std::size_t(a.size())) == 0);
  }
  SUBCASE("gamma 0 makes the output bitwise independent of the question") {
    QnaConfig cfg;
    cfg.layers = 2;
    cfg.heads = 2;
    cfg.d_g = 8;
    cfg.d_k = 4;
    ParameterStore<double> ps;
    Rng rng(3);
    init_qna_params(ps, cfg, 10, kg.relation_count(), rng);
    cfg.gamma = 0.0;  // test-only override; the question terms multiply by zero
    Tape<double> ta;
    Mat<double> a = ta.value(qna_forward(ta, sg, kg, lm, q1, bind(ta, ps, true), cfg));
    Tape<double> tb;
    Mat<double> b = tb.value(qna_forward(tb, sg, kg, lm, q2, bind(tb, ps, true), cfg));
    CHECK(std::memcmp(a.data(), b.data(), sizeof(double) * std::size_t(a.size())) == 0);
  }
  SUBCASE("gamma 1/3 is question sensitive") {
    QnaConfig cfg;
    cfg.layers = 1;
    cfg.heads = 2;
    cfg.d_g = 8;
    cfg.d_k = 4;
    ParameterStore<double> ps;
    Rng rng(4);
    init_qna_params(ps, cfg, 10, kg.relation_count(), rng);
    Tape<double> ta;
    QnaTrace<double> tra;
    qna_forward(ta, sg, kg, lm, q1, bind(ta, ps, true), cfg, &tra);
    Tape<double> tb;
    QnaTrace<double> trb;
    qna_forward(tb, sg, kg, lm, q2, bind(tb, ps, true), cfg, &trb);
    double delta = 0;
    for (std::size_t i = 0; i < tra.entries.size(); ++i)
      delta = std::max(delta,
                       (tra.entries[i].alpha - trb.entries[i].alpha).cwiseAbs().maxCoeff());
    CHECK(delta > 1e-3);
  }
  SUBCASE("zeroing every output mix reduces to layer-0 features") {
    QnaConfig cfg;
    cfg.layers = 3;
    cfg.heads = 2;
    cfg.d_g = 8;
    cfg.d_k = 4;
    ParameterStore<double> ps;
    Rng rng(5);
    init_qna_params(ps, cfg, 10, kg.relation_count(), rng);
    for (int l = 0; l < cfg.layers; ++l) ps.at(qna_names::w_o(l)).setZero();
    Tape<double> t;
    BoundParams<double> bound = bind(t, ps, true);
    Mat<double> a = t.value(qna_forward(t, sg, kg, lm, q1, bound, cfg));
    Tape<double> t2;
    Mat<double> b = t2.value(init_node_features(t2, sg, kg, lm, bind(t2, ps, true)));
    CHECK((a - b).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("permutation equivariance") {
  KnowledgeGraph kg = fruit_kg();
  FrozenLm<double> lm = init_lm<double>(fruit_vocab(), 10, 64, 13);
  QnaConfig cfg;
  cfg.layers = 2;
  cfg.heads = 2;
  cfg.d_g = 8;
  cfg.d_k = 4;
  ParameterStore<double> ps;
  Rng rng(31);
  init_qna_params(ps, cfg, 10, kg.relation_count(), rng);
  Mat<double> q = encode_question(lm, "what color is a banana");
  ContextSubgraph sg = retrieve_subgraph(kg, "what color is a banana", "yellow", 2, 64);
  int n = sg.size();
  REQUIRE(n >= 3);

  std::vector<int> perm(static_cast<std::size_t>(n), 0);
  for (int i = 0; i < n; ++i) perm[std::size_t(i)] = (i + 1) % n;  // perm[old] = new
  ContextSubgraph sp = sg;
  for (int i = 0; i < n; ++i) {
    sp.nodes[std::size_t(perm[std::size_t(i)])] = sg.nodes[std::size_t(i)];
    sp.seed_mask[std::size_t(perm[std::size_t(i)])] = sg.seed_mask[std::size_t(i)];
    sp.hop_of_node[std::size_t(perm[std::size_t(i)])] = sg.hop_of_node[std::size_t(i)];
  }
  for (auto& e : sp.edges) {
    e.src = perm[std::size_t(e.src)];
    e.dst = perm[std::size_t(e.dst)];
  }

  Tape<double> ta;
  Mat<double> a = ta.value(qna_forward(ta, sg, kg, lm, q, bind(ta, ps, true), cfg));
  Tape<double> tb;
  Mat<double> b = tb.value(qna_forward(tb, sp, kg, lm, q, bind(tb, ps, true), cfg));
  for (int i = 0; i < n; ++i)
    CHECK((a.row(i) - b.row(perm[std::size_t(i)])).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("star graph argmax relevance") {
  // center node 0 with three leaves; the question key direction aligns with
  // leaf 2's feature only, and the neighbor/head terms are silenced
  QnaConfig cfg;
  cfg.layers = 1;
  cfg.heads = 1;
  cfg.d_g = 4;
  cfg.d_k = 4;
  cfg.gamma = 0.45;
  cfg.relation_embeddings = false;
  ParameterStore<double> ps;
  Rng rng(41);
  init_qna_params(ps, cfg, 4, 1, rng);
  ps.at(qna_names::w_q(0, 0)).setZero();      // kills n_ij and h_iq
  ps.at(qna_names::wq_q(0, 0)).setIdentity();  // t_qj = q . h_j / sqrt(d_k)
  ps.at(qna_names::w_k(0, 0)).setIdentity();

  ContextSubgraph sg;
  sg.nodes = {0, 1, 2, 3};
  for (int leaf = 1; leaf <= 3; ++leaf)
    sg.edges.push_back({leaf, 0, 0, EdgeDir::forward});
  Mat<double> states = Mat<double>::Zero(4, 4);
  for (int i = 1; i <= 3; ++i) states(i, i) = 1.0;  // orthogonal leaf features
  Mat<double> q = Mat<double>::Zero(1, 4);
  q(0, 2) = 3.0;  // aligned with leaf 2

  Tape<double> t;
  BoundParams<double> bound = bind(t, ps, true);
  QnaTrace<double> trace;
  qna_layer_forward(t, t.leaf(states, false), sg, bound, cfg, 0, q, &trace);
  REQUIRE(trace.entries.size() == 1);
  const Mat<double>& alpha = trace.entries[0].alpha;
  REQUIRE(alpha.rows() == 3);
  CHECK(alpha(1, 0) > alpha(0, 0));  // edge order follows leaf order 1,2,3
  CHECK(alpha(1, 0) > alpha(2, 0));
}

TEST_CASE("gradients match finite differences") {
  KnowledgeGraph kg = fruit_kg();
  FrozenLm<double> lm = init_lm<double>(fruit_vocab(), 8, 64, 19);
  QnaConfig cfg;
  cfg.layers = 2;
  cfg.heads = 2;
  cfg.d_g = 8;
  cfg.d_k = 4;
  ParameterStore<double> ps;
  Rng rng(47);
  init_qna_params(ps, cfg, 8, kg.relation_count(), rng);
  Mat<double> q = encode_question(lm, "what color is a banana");
  ContextSubgraph sg = retrieve_subgraph(kg, "what color is a banana", "yellow", 2, 64);

  Tape<double> t;
  BoundParams<double> bound = bind(t, ps, true);
  // squared sum keeps the pooled scalar sensitive to every coordinate
  TensorRef h = qna_forward(t, sg, kg, lm, q, bound, cfg);
  t.backward(t.sum(t.cmul(h, h)));

  for (const auto& [name, ref] : bound.refs) {
    REQUIRE_MESSAGE(t.has_grad(ref), name);
    Mat<double> analytic = t.grad(ref);
    Mat<double> saved = ps.at(name);
    auto f = [&](const Mat<double>& m) {
      ps.at(name) = m;
      Tape<double> tt;
      BoundParams<double> b = bind(tt, ps, true);
      TensorRef hh = qna_forward(tt, sg, kg, lm, q, b, cfg);
      return tt.value(tt.sum(tt.cmul(hh, hh)))(0, 0);
    };
    Mat<double> numeric = finite_diff_gradient<double>(f, saved, 1e-4);
    ps.at(name) = saved;
    double scale = std::max(1.0, numeric.cwiseAbs().maxCoeff());
    CHECK_MESSAGE((analytic - numeric).cwiseAbs().maxCoeff() / scale < 1e-4, name);
  }
}
