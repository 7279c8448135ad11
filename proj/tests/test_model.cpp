#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "qg/model.hpp"
#include "qg/numeric/optim.hpp"
#include "support.hpp"

using namespace qg;
using qgtest::TinyFixture;

namespace {

Matrix<double> rows_to_matrix(const nlohmann::json& rows) {
  Matrix<double> m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows[0].size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = rows[r][c].get<double>();
  }
  return m;
}

Matrix<double> rand_mat(Eigen::Index r, Eigen::Index c, std::uint64_t seed) {
  return uniform_init<double>(r, c, seed, -1.0, 1.0);
}

Matrix<double> rand_simplex(Eigen::Index n, std::uint64_t seed) {
  Matrix<double> m = uniform_init<double>(n, 1, seed, 0.0, 1.0);
  return m / m.sum();
}

double sigm(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

TEST_CASE("model config validation and JSON") {
  ModelConfig c;
  CHECK(c.hidden == 600);
  CHECK(c.word_dim == 300);
  CHECK(c.layers == 2);
  CHECK(c.dropout_p == 0.3);
  CHECK(c.beam_size == 3);
  CHECK_NOTHROW(c.validate());
  CHECK_NOTHROW(ModelConfig::desk().validate());
  const auto back = ModelConfig::from_json(c.to_json());
  CHECK(back.to_json() == c.to_json());

  auto bad = c;
  bad.hidden = 0;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = c;
  bad.dropout_p = 1.0;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = c;
  bad.beam_size = 0;
  CHECK_THROWS_AS(bad.validate(), Error);

  try {
    ModelConfig::from_json(nlohmann::json{{"hiden", 4}});
    FAIL("expected an error");
  } catch (const Error& e) {
    const std::string msg = e.what();
    CHECK(msg.find("hiden") != std::string::npos);
    CHECK(msg.find("hidden") != std::string::npos);
  }
  CHECK_THROWS_AS(ModelConfig::from_json(nlohmann::json{{"layers", -1}}), Error);
}

TEST_CASE("encoder states match the reference forward pass") {
  const TinyFixture fx;
  auto model = fx.model();
  for (std::size_t k = 0; k < fx.examples.size(); ++k) {
    const auto& ex = fx.examples[k];
    Tape<double> tape(false);
    const auto s = model.encode_sentence(tape, ex, false);
    const auto r = model.encode_relation(tape, ex, false);
    const auto want_s = rows_to_matrix(fx.doc["examples"][k]["sentence_states"]);
    const auto want_r = rows_to_matrix(fx.doc["examples"][k]["relation_states"]);
    REQUIRE(s.states.rows() == want_s.rows());
    REQUIRE(s.states.cols() == want_s.cols());
    REQUIRE(r.states.cols() == want_r.cols());
    CHECK((s.states.value() - want_s).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((r.states.value() - want_r).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(s.states_t.value() == s.states.value().transpose());
  }
}

TEST_CASE("teacher-forced loss matches the reference") {
  const TinyFixture fx;
  auto model = fx.model();
  for (std::size_t k = 0; k < fx.examples.size(); ++k) {
    Tape<double> tape(false);
    const auto res = model.forward_teacher_forced(tape, fx.examples[k], false);
    CHECK(res.loss.scalar() == doctest::Approx(fx.expected_loss[k]).epsilon(1e-10));
    CHECK(res.target_tokens == fx.examples[k].target.size());
  }
}

TEST_CASE("float and double agree") {
  const TinyFixture fx;
  auto d = fx.model<double>();
  auto f = fx.model<float>();
  for (const auto& ex : fx.examples) {
    Tape<double> td(false);
    Tape<float> tf(false);
    const double ld = d.forward_teacher_forced(td, ex, false).loss.scalar();
    const double lf = f.forward_teacher_forced(tf, ex, false).loss.scalar();
    CHECK(std::abs(ld - lf) / ld < 1e-5);
  }
}

TEST_CASE("full model gradient check") {
  const TinyFixture fx;
  auto model = fx.model();
  const std::function<Var<double>(Tape<double>&)> loss = [&](Tape<double>& t) {
    std::vector<Var<double>> terms;
    for (const auto& ex : fx.examples) terms.push_back(model.forward_teacher_forced(t, ex, false).loss);
    return add_all(std::span<const Var<double>>(terms));
  };
  const auto r = gradient_check(model.params(), loss);
  CHECK(r.entries_checked == model.params().scalar_count());
  CHECK(r.max_relative_error < 1e-6);

  auto dropping = fx.config;
  dropping.dropout_p = 0.3;
  QGModel<double> noisy(dropping, fx.vocab);
  const std::function<Var<double>(Tape<double>&)> train_loss = [&](Tape<double>& t) {
    return noisy.forward_teacher_forced(t, fx.examples[0], true).loss;
  };
  CHECK_THROWS_AS(gradient_check(noisy.params(), train_loss), Error);
}

TEST_CASE("single-layer encoder with tied directions is reversal symmetric") {
  const TinyFixture fx;
  auto cfg = fx.config;
  cfg.layers = 1;
  QGModel<double> model(cfg, fx.vocab);
  for (const char* part : {"sentence", "relation"}) {
    for (const char* w : {".W", ".b"}) {
      model.params().at(std::string(part) + ".l0.bwd" + w).value =
          model.params().at(std::string(part) + ".l0.fwd" + w).value;
    }
  }
  auto ex = fx.examples[0];
  auto rev = ex;
  std::reverse(rev.sentence_words.begin(), rev.sentence_words.end());
  std::reverse(rev.sentence_pos.begin(), rev.sentence_pos.end());
  std::reverse(rev.sentence_ner.begin(), rev.sentence_ner.end());
  std::reverse(rev.sentence_answer.begin(), rev.sentence_answer.end());
  Tape<double> tape(false);
  const auto a = model.encode_sentence(tape, ex, false).states.value();
  const auto b = model.encode_sentence(tape, rev, false).states.value();
  const auto h = cfg.hidden;
  const auto n = a.cols();
  for (Eigen::Index i = 0; i < n; ++i) {
    CHECK((a.col(i).head(h) - b.col(n - 1 - i).tail(h)).cwiseAbs().maxCoeff() < 1e-14);
    CHECK((a.col(i).tail(h) - b.col(n - 1 - i).head(h)).cwiseAbs().maxCoeff() < 1e-14);
  }
}

TEST_CASE("attention and fusion match direct loops") {
  Tape<double> tape;
  const Eigen::Index d = 4, n = 5, h = 3;
  const auto keys_m = rand_mat(d, n, 1);
  EncoderOutput<double> keys{tape.constant(keys_m), tape.constant(keys_m.transpose()), {}, {}};
  const auto u_m = rand_mat(h, 1, 2);
  const auto w_m = rand_mat(d, h, 3);
  const auto att = attend(tape.constant(u_m), keys, tape.constant(w_m));
  std::vector<double> e(static_cast<std::size_t>(n));
  double z = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    double s = 0;
    for (Eigen::Index a = 0; a < d; ++a) {
      for (Eigen::Index b = 0; b < h; ++b) s += keys_m(a, i) * w_m(a, b) * u_m(b, 0);
    }
    e[static_cast<std::size_t>(i)] = std::exp(s);
    z += std::exp(s);
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    CHECK(att.scores.value()(i, 0) == doctest::Approx(e[static_cast<std::size_t>(i)] / z).epsilon(1e-12));
  }
  for (Eigen::Index a = 0; a < d; ++a) {
    double c = 0;
    for (Eigen::Index i = 0; i < n; ++i) c += keys_m(a, i) * e[static_cast<std::size_t>(i)] / z;
    CHECK(att.context.value()(a, 0) == doctest::Approx(c).epsilon(1e-12));
  }

  const auto cs = rand_mat(d, 1, 4);
  const auto cm = rand_mat(d, 1, 5);
  const auto wg = rand_mat(d, 2 * d, 6);
  const auto wh = rand_mat(h, h + d, 7);
  const auto fu = gated_fuse(tape.constant(cs), tape.constant(cm), tape.constant(u_m), tape.constant(wg),
                             tape.constant(wh));
  Eigen::VectorXd ctx(d);
  for (Eigen::Index a = 0; a < d; ++a) {
    double s = 0;
    for (Eigen::Index b = 0; b < d; ++b) s += wg(a, b) * cs(b, 0) + wg(a, d + b) * cm(b, 0);
    const double g = sigm(s);
    CHECK(fu.gate.value()(a, 0) == doctest::Approx(g).epsilon(1e-12));
    ctx(a) = g * cs(a, 0) + (1 - g) * cm(a, 0);
    CHECK(fu.context.value()(a, 0) == doctest::Approx(ctx(a)).epsilon(1e-12));
  }
  for (Eigen::Index r = 0; r < h; ++r) {
    double s = 0;
    for (Eigen::Index b = 0; b < h; ++b) s += wh(r, b) * u_m(b, 0);
    for (Eigen::Index b = 0; b < d; ++b) s += wh(r, h + b) * ctx(b);
    CHECK(fu.readout.value()(r, 0) == doctest::Approx(std::tanh(s)).epsilon(1e-12));
  }
  const auto pinned = gated_fuse(tape.constant(cs), tape.constant(cm), tape.constant(u_m), tape.constant(wg),
                                 tape.constant(wh), 1.0);
  CHECK(pinned.context.value() == cs);
}

TEST_CASE("copy distributions and gates match direct loops") {
  Tape<double> tape;
  const auto a_s = rand_simplex(4, 1);
  const auto a_m = rand_simplex(3, 2);
  const std::vector<int> s_ext = {5, 7, 5, 9};
  const std::vector<int> m_ext = {9, 4, 9};
  const auto [ps, pm] = copy_distributions(tape.constant(a_s), tape.constant(a_m), std::span<const int>(s_ext),
                                           std::span<const int>(m_ext), 10);
  for (int id = 0; id < 10; ++id) {
    double want_s = 0, want_m = 0;
    for (std::size_t i = 0; i < s_ext.size(); ++i) {
      if (s_ext[i] == id) want_s += a_s(static_cast<Eigen::Index>(i), 0);
    }
    for (std::size_t i = 0; i < m_ext.size(); ++i) {
      if (m_ext[i] == id) want_m += a_m(static_cast<Eigen::Index>(i), 0);
    }
    CHECK(ps.value()(id, 0) == doctest::Approx(want_s).epsilon(1e-15));
    CHECK(pm.value()(id, 0) == doctest::Approx(want_m).epsilon(1e-15));
  }

  const Eigen::Index h = 3, d = 4;
  const auto r = rand_mat(h, 1, 3);
  const auto cs = rand_mat(d, 1, 4);
  const auto cm = rand_mat(d, 1, 5);
  const auto wv = rand_mat(1, h, 6);
  const auto bv = rand_mat(1, 1, 7);
  const auto wc = rand_mat(1, 2 * d, 8);
  const auto bc = rand_mat(1, 1, 9);
  auto gates = copy_gates(tape.constant(r), tape.constant(cs), tape.constant(cm), tape.constant(wv),
                          tape.constant(bv), tape.constant(wc), tape.constant(bc));
  CHECK(gates.copy.scalar() == doctest::Approx(sigm((wv * r)(0, 0) + bv(0, 0))).epsilon(1e-14));
  Matrix<double> both(2 * d, 1);
  both << cs, cm;
  CHECK(gates.copy_source.scalar() == doctest::Approx(sigm((wc * both)(0, 0) + bc(0, 0))).epsilon(1e-14));
  GateOverrides pin;
  pin.copy = 0.25;
  pin.copy_source = 0.75;
  gates = copy_gates(tape.constant(r), tape.constant(cs), tape.constant(cm), tape.constant(wv),
                     tape.constant(bv), tape.constant(wc), tape.constant(bc), pin);
  CHECK(gates.copy.scalar() == 0.25);
  CHECK(gates.copy_source.scalar() == 0.75);
}

TEST_CASE("final distribution is the gated mixture") {
  Tape<double> tape;
  const auto pv = rand_simplex(6, 1);
  const auto ps = rand_simplex(9, 2);
  const auto pm = rand_simplex(9, 3);
  auto scalar = [&](double v) { return tape.constant(Matrix<double>::Constant(1, 1, v)); };
  for (double gv : {0.0, 0.3, 1.0}) {
    for (double gc : {0.0, 0.6, 1.0}) {
      const auto out = final_distribution(tape.constant(pv), tape.constant(ps), tape.constant(pm), scalar(gv),
                                          scalar(gc))
                           .value();
      REQUIRE(out.rows() == 9);
      CHECK(out.sum() == doctest::Approx(1.0).epsilon(1e-14));
      for (Eigen::Index i = 0; i < 9; ++i) {
        const double v = i < 6 ? pv(i, 0) : 0.0;
        const double want = (1 - gv) * v + gv * gc * ps(i, 0) + gv * (1 - gc) * pm(i, 0);
        CHECK(std::abs(out(i, 0) - want) < 1e-15);
      }
    }
  }
  CHECK_THROWS_AS(final_distribution(tape.constant(ps), tape.constant(pv), tape.constant(pv), scalar(0.5),
                                     scalar(0.5)),
                  ShapeError);
}

TEST_CASE("vocabulary distribution masks padding and start symbols") {
  Tape<double> tape;
  const auto out = vocab_distribution(tape.constant(rand_mat(3, 1, 1)), tape.constant(rand_mat(8, 3, 2)),
                                      tape.constant(rand_mat(8, 1, 3)))
                       .value();
  CHECK(out(Vocabulary::kPad, 0) == 0.0);
  CHECK(out(Vocabulary::kBos, 0) == 0.0);
  CHECK(out(Vocabulary::kEos, 0) > 0.0);
  CHECK(out.sum() == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("model steps emit proper distributions") {
  const TinyFixture fx;
  auto model = fx.model();
  const auto& ex = fx.examples[0];
  Tape<double> tape(false);
  const auto res = model.forward_teacher_forced(tape, ex, false, true);
  REQUIRE(res.traces.size() == ex.target.size());
  for (const auto& t : res.traces) {
    CHECK(t.p_final.size() == ex.extended_size());
    CHECK(t.p_vocab.size() == ex.vocab_size);
    CHECK(t.p_final.sum() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(t.p_sentence.sum() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(t.p_relation.sum() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(t.copy_gate > 0.0);
    CHECK(t.copy_gate < 1.0);
    CHECK(t.source_gate > 0.0);
    CHECK(t.source_gate < 1.0);
    CHECK((t.fuse_gate.array() > 0.0).all());
    CHECK((t.fuse_gate.array() < 1.0).all());
    // The copy-only word is only reachable through copying and gets mass.
    CHECK(t.p_final(ex.vocab_size) > 0.0);
  }
  double nll = 0;
  for (const auto& t : res.traces) nll -= std::log(t.p_final(t.token));
  CHECK(nll == doctest::Approx(res.loss.scalar()).epsilon(1e-12));

  model.overrides().copy = 0.0;
  Tape<double> plain(false);
  const auto gen = model.forward_teacher_forced(plain, ex, false, true);
  CHECK(gen.traces[0].p_final(ex.vocab_size) == 0.0);
}

TEST_CASE("encode_example and render_tokens") {
  auto ex = qgtest::make_example("e", "Zorblat lives near the river", 0, 0, "who lives near the Zorblat Quux ?",
                                 {NaryRelation{{"Zorblat", "lives near", "the river"}, 0.9, 0}});
  const auto ctx = select_relation(ex);
  const auto vocab = Vocabulary::from_words({"the", "river", "who", "near", "?"}, 10);
  const auto enc = encode_example(ex, ctx, vocab);
  CHECK(enc.vocab_size == 9);
  REQUIRE(enc.copy_surfaces.size() == 2);
  CHECK(enc.copy_surfaces[0] == "Zorblat");
  CHECK(enc.copy_surfaces[1] == "lives");
  CHECK(enc.sentence_words[0] == Vocabulary::kUnk);
  CHECK(enc.sentence_ext[0] == 9);
  CHECK(enc.sentence_ext[1] == 10);
  CHECK(enc.relation_ext[0] == 9);
  CHECK(enc.extended_size() == 11);
  const std::vector<int> want = {*vocab.find("who"), 10, *vocab.find("near"), *vocab.find("the"), 9,
                                 Vocabulary::kUnk, *vocab.find("?"), Vocabulary::kEos};
  CHECK(enc.target == want);
  const auto words = render_tokens(std::span<const int>(enc.target), enc, vocab);
  const std::vector<std::string> rendered = {"who", "lives", "near", "the", "Zorblat", "<unk>", "?"};
  CHECK(words == rendered);
  CHECK(enc.sentence_answer[0] == static_cast<int>(AnswerTag::B));

  auto empty = ex;
  empty.sentence.clear();
  CHECK_THROWS_AS(encode_example(empty, ctx, vocab), Error);
}

TEST_CASE("parameter initialisation is seeded") {
  const TinyFixture fx;
  QGModel<double> a(fx.config, fx.vocab);
  QGModel<double> b(fx.config, fx.vocab);
  auto cfg = fx.config;
  cfg.seed = 2;
  QGModel<double> c(cfg, fx.vocab);
  for (const auto& p : a.params()) {
    CHECK(p.value == b.params().at(p.name).value);
    CHECK_FALSE(p.value == c.params().at(p.name).value);
    CHECK(p.value.cwiseAbs().maxCoeff() < 0.1);
  }
  CHECK(a.params().size() == fx.doc["params"].size());
}
