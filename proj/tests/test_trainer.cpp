#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <sstream>

#include <qap/checkpoint.hpp>
#include <qap/trainer.hpp>

#include "oracles.hpp"

using namespace qap;

namespace {

KnowledgeGraph small_kg() {
  std::istringstream in(
      "banana\thas_color\tyellow\n"
      "banana\thas_taste\tsweet\n"
      "cherry\thas_color\tred\n"
      "grape\thas_color\tpurple\n"
      "plum\thas_color\tpurple\n"
      "plum\thas_taste\tsweet\n"
      "yellow\tis_a\tcolor\n"
      "red\tis_a\tcolor\n"
      "purple\tis_a\tcolor\n");
  return load_triples(in);
}

McqaInstance yellow_instance() {
  McqaInstance inst;
  inst.id = "q0";
  inst.question = "which fruit has the color yellow ?";
  inst.options = {"banana", "cherry", "grape", "plum"};
  inst.gold = 0;
  return inst;
}

template <class S>
FrozenLm<S> small_lm(std::uint64_t seed = 3) {
  std::vector<std::string> corpus{render_prompt(yellow_instance()),
                                  "yellow red purple sweet sour color is a taste fruit"};
  return init_lm<S>(Vocabulary::build(corpus), 12, 96, seed);
}

PipelineConfig small_cfg(Mode mode = Mode::full) {
  PipelineConfig cfg;
  cfg.mode = mode;
  cfg.n_options = 4;
  cfg.layers = 2;
  cfg.heads = 2;
  cfg.d_g = 8;
  cfg.d_k = 4;
  cfg.n_hops = 2;
  cfg.cap = 16;
  return cfg;
}

}  // namespace

TEST_CASE("rigged language models pin the loss analytically") {
  KnowledgeGraph kg = small_kg();
  McqaInstance inst = yellow_instance();
  PipelineConfig cfg = small_cfg(Mode::llm_only);
  ParameterStore<double> ps =
      init_pipeline_params<double>(cfg, 12, kg.relation_count(), 0);
  CHECK(ps.count() == 0);

  SUBCASE("zero head means uniform logits and loss ln V") {
    FrozenLm<double> lm = small_lm<double>();
    lm.params.at("lm/head").setZero();
    double loss = instance_loss(inst, kg, lm, ps, cfg);
    CHECK(loss == doctest::Approx(std::log(double(lm.vocab.size()))).epsilon(1e-12));
  }
  SUBCASE("probability one on the gold label means loss zero") {
    FrozenLm<double> lm = small_lm<double>();
    std::vector<int> ids;
    ids.push_back(Vocabulary::kBos);
    for (int id : lm.vocab.encode(render_prompt(inst))) ids.push_back(id);
    Mat<double> states = oracle::lm_states(lm, Mat<double>(0, 12), ids);
    Mat<double> last = states.row(states.rows() - 1);
    Mat<double>& head = lm.params.at("lm/head");
    head.setZero();
    head.col(Vocabulary::label_id(inst.gold)) = last.transpose() * (200.0 / last.squaredNorm());
    double loss = instance_loss(inst, kg, lm, ps, cfg);
    CHECK(loss >= 0.0);
    CHECK(loss < 1e-9);
  }
}

TEST_CASE("loss matches the straight-line pipeline oracle in every mode") {
  KnowledgeGraph kg = small_kg();
  FrozenLm<double> lm = small_lm<double>();
  McqaInstance inst = yellow_instance();
  for (Mode mode : {Mode::full, Mode::wo_q, Mode::wo_g, Mode::wo_q_g, Mode::wo_mh,
                    Mode::sp_only, Mode::llm_only}) {
    CAPTURE(mode_name(mode));
    PipelineConfig cfg = small_cfg(mode);
    ParameterStore<double> ps =
        init_pipeline_params<double>(cfg, lm.d_t, kg.relation_count(), 7);
    double fast = instance_loss(inst, kg, lm, ps, cfg);
    double slow = oracle::pipeline_loss(inst, kg, lm, ps, cfg);
    CHECK(fast >= 0.0);
    CHECK(std::abs(fast - slow) < 1e-6);
  }
}

TEST_CASE("whole-pipeline gradient check in 64-bit mode") {
  KnowledgeGraph kg = small_kg();
  FrozenLm<double> lm = small_lm<double>();
  McqaInstance inst;
  inst.id = "g0";
  // no entity in the question and one off-graph option: exercises the
  // null-prompt path so every parameter carries gradient
  inst.question = "what should you eat today ?";
  inst.options = {"banana", "granite"};
  inst.gold = 0;
  PipelineConfig cfg = small_cfg();
  cfg.n_options = 2;
  ParameterStore<double> ps = init_pipeline_params<double>(cfg, lm.d_t, kg.relation_count(), 11);
  PreparedInstance<double> prep = prepare_instance(inst, kg, lm, cfg);

  Tape<double> t;
  BoundParams<double> lmp = bind(t, lm.params, false);
  BoundParams<double> bound = bind(t, ps, true);
  t.backward(compute_loss(t, prep, kg, lm, lmp, bound, cfg));

  for (const auto& [name, ref] : bound.refs) {
    REQUIRE_MESSAGE(t.has_grad(ref), name);
    Mat<double> analytic = t.grad(ref);
    Mat<double> saved = ps.at(name);
    auto f = [&](const Mat<double>& m) {
      ps.at(name) = m;
      return instance_loss(inst, kg, lm, ps, cfg);
    };
    Mat<double> numeric = finite_diff_gradient<double>(f, saved, 1e-4);
    ps.at(name) = saved;
    double scale = std::max(1.0, numeric.cwiseAbs().maxCoeff());
    CHECK_MESSAGE((analytic - numeric).cwiseAbs().maxCoeff() / scale < 1e-4, name);
  }
  for (const auto& [name, ref] : lmp.refs) CHECK_FALSE(t.has_grad(ref));
}

TEST_CASE("training loop") {
  KnowledgeGraph kg = small_kg();
  FrozenLm<double> lm = small_lm<double>();
  std::vector<McqaInstance> data{yellow_instance()};

  SUBCASE("zero learning rate leaves parameters untouched") {
    TrainConfig<double> tc;
    tc.pipeline = small_cfg();
    tc.opt.lr = 0;
    tc.steps = 3;
    tc.eval_every = 1;
    tc.seed = 4;
    TrainResult<double> res = train(data, data, kg, lm, tc);
    ParameterStore<double> fresh =
        init_pipeline_params<double>(tc.pipeline, lm.d_t, kg.relation_count(), 4);
    CHECK(res.params.checksum() == fresh.checksum());
  }

  SUBCASE("one step descends on the training instance across 25 seeds") {
    int descended = 0;
    for (std::uint64_t seed = 0; seed < 25; ++seed) {
      TrainConfig<double> tc;
      tc.pipeline = small_cfg();
      tc.opt.weight_decay = 0;  // isolate the gradient direction
      tc.steps = 1;
      tc.eval_every = 1;
      tc.seed = seed;
      ParameterStore<double> before =
          init_pipeline_params<double>(tc.pipeline, lm.d_t, kg.relation_count(), seed);
      double l0 = instance_loss(data[0], kg, lm, before, tc.pipeline);
      TrainResult<double> res = train(data, data, kg, lm, tc);
      double l1 = instance_loss(data[0], kg, lm, res.params, tc.pipeline);
      descended += (l1 < l0);
    }
    CHECK(descended == 25);
  }

  SUBCASE("same seed gives identical metrics and parameters") {
    std::uint64_t lm_sum = lm.checksum();
    TrainConfig<double> tc;
    tc.pipeline = small_cfg();
    tc.steps = 6;
    tc.eval_every = 2;
    tc.seed = 11;
    TrainResult<double> a = train(data, data, kg, lm, tc);
    TrainResult<double> b = train(data, data, kg, lm, tc);
    REQUIRE(a.metrics.size() == b.metrics.size());
    for (std::size_t i = 0; i < a.metrics.size(); ++i) {
      CHECK(a.metrics[i].step == b.metrics[i].step);
      CHECK(a.metrics[i].train_loss == b.metrics[i].train_loss);
      CHECK(a.metrics[i].dev_acc == b.metrics[i].dev_acc);
    }
    CHECK(a.params.checksum() == b.params.checksum());
    CHECK(lm.checksum() == lm_sum);  // the LM stays frozen
  }

  SUBCASE("divergence aborts naming the instance") {
    TrainConfig<double> tc;
    tc.pipeline = small_cfg();
    tc.opt.lr = 1e200;
    tc.opt.clip = 0;
    tc.steps = 10;
    tc.eval_every = 100;
    tc.seed = 2;
    try {
      train(data, data, kg, lm, tc);
      FAIL("expected a numeric abort");
    } catch (const trainer_error& e) {
      CHECK(std::string(e.what()).find("q0") != std::string::npos);
    }
  }

  SUBCASE("llm_only skips optimization") {
    TrainConfig<double> tc;
    tc.pipeline = small_cfg(Mode::llm_only);
    tc.steps = 50;
    tc.seed = 1;
    TrainResult<double> res = train(data, data, kg, lm, tc);
    CHECK(res.params.count() == 0);
    CHECK(res.metrics.size() == 1);
  }
}

TEST_CASE("metrics serialization") {
  std::vector<MetricsRow> rows{{10, 1.25, 0.5, 3.0}, {20, 0.75, 1.0, 6.5}};
  std::ostringstream os;
  write_metrics_jsonl(rows, os);
  std::istringstream is(os.str());
  std::string line;
  int n = 0;
  while (std::getline(is, line)) {
    CHECK(line.front() == '{');
    CHECK(line.find("\"step\":") != std::string::npos);
    CHECK(line.find("\"train_loss\":") != std::string::npos);
    CHECK(line.find("\"dev_acc\":") != std::string::npos);
    CHECK(line.find("\"wall_ms\":") != std::string::npos);
    ++n;
  }
  CHECK(n == 2);
}

TEST_CASE("checkpoint round trip") {
  KnowledgeGraph kg = small_kg();
  FrozenLm<float> lm = small_lm<float>();
  std::vector<McqaInstance> data{yellow_instance()};
  TrainConfig<float> tc;
  tc.pipeline = small_cfg();
  tc.steps = 4;
  tc.eval_every = 2;
  tc.seed = 6;
  TrainResult<float> res = train(data, data, kg, lm, tc);
  double acc_before = evaluate(std::vector<PreparedInstance<float>>{
                                   prepare_instance(data[0], kg, lm, tc.pipeline)},
                               kg, lm, res.params, tc.pipeline);

  std::string path = "trainer_ckpt_test.qapc";
  save_checkpoint(res.params, &res.opt, path);

  SUBCASE("bitwise round trip with optimizer state") {
    Checkpoint ck = load_checkpoint(path, res.params.config_hash);
    CHECK(ck.params.checksum() == res.params.checksum());
    CHECK(ck.params.step == res.params.step);
    CHECK(ck.opt_step == res.opt.step_count());
    REQUIRE(ck.moments.size() == res.opt.moments().size());
    for (const auto& [name, mo] : res.opt.moments()) {
      CHECK((ck.moments.at(name).m1 - mo.m1).cwiseAbs().maxCoeff() == 0.0f);
      CHECK((ck.moments.at(name).m2 - mo.m2).cwiseAbs().maxCoeff() == 0.0f);
    }
    double acc_after = evaluate(std::vector<PreparedInstance<float>>{
                                    prepare_instance(data[0], kg, lm, tc.pipeline)},
                                kg, lm, ck.params, tc.pipeline);
    CHECK(acc_after == acc_before);
  }
  SUBCASE("config hash mismatch is rejected") {
    PipelineConfig other = tc.pipeline;
    other.d_g = 16;
    CHECK_THROWS_AS(load_checkpoint(path, other.hash(lm.d_t)), checkpoint_error);
  }
  SUBCASE("corrupt and truncated files are rejected") {
    {
      std::ofstream bad("trainer_ckpt_bad.qapc", std::ios::binary);
      bad << "not a checkpoint";
    }
    CHECK_THROWS_AS(load_checkpoint("trainer_ckpt_bad.qapc"), checkpoint_error);
    std::remove("trainer_ckpt_bad.qapc");

    std::ifstream in(path, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    in.close();
    {
      std::ofstream cut("trainer_ckpt_cut.qapc", std::ios::binary);
      cut.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
    }
    CHECK_THROWS_AS(load_checkpoint("trainer_ckpt_cut.qapc"), checkpoint_error);
    std::remove("trainer_ckpt_cut.qapc");
    CHECK_THROWS_AS(load_checkpoint("no_such_file.qapc"), checkpoint_error);
  }
  std::remove(path.c_str());
}
