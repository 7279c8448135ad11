#include "qg/model.hpp"

#include <algorithm>
#include <unordered_map>

#include "qg/numeric/optim.hpp"

namespace qg {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Configuration

ModelConfig ModelConfig::desk() {
  ModelConfig c;
  c.word_dim = 64;
  c.pos_dim = 8;
  c.ner_dim = 8;
  c.ans_dim = 8;
  c.hidden = 64;
  c.layers = 1;
  c.vocab_cap = 5000;
  return c;
}

void ModelConfig::validate() const {
  if (word_dim <= 0 || pos_dim <= 0 || ner_dim <= 0 || ans_dim <= 0 || hidden <= 0 || layers <= 0) {
    throw Error("model dimensions and layer count must be positive");
  }
  if (!(dropout_p >= 0.0 && dropout_p < 1.0)) throw Error("dropout_p must lie in [0, 1)");
  if (vocab_cap == 0) throw Error("vocab_cap must be positive");
  if (beam_size <= 0) throw Error("beam_size must be positive");
  if (max_decode_len <= 0) throw Error("max_decode_len must be positive");
}

const std::vector<std::string>& ModelConfig::keys() {
  static const std::vector<std::string> k = {"word_dim", "pos_dim",   "ner_dim",   "ans_dim",
                                             "hidden",   "layers",    "dropout_p", "vocab_cap",
                                             "beam_size", "max_decode_len", "seed"};
  return k;
}

json ModelConfig::to_json() const {
  return {{"word_dim", word_dim},   {"pos_dim", pos_dim},     {"ner_dim", ner_dim},
          {"ans_dim", ans_dim},     {"hidden", hidden},       {"layers", layers},
          {"dropout_p", dropout_p}, {"vocab_cap", vocab_cap}, {"beam_size", beam_size},
          {"max_decode_len", max_decode_len}, {"seed", seed}};
}

ModelConfig ModelConfig::from_json(const json& j, ModelConfig c) {
  for (const auto& [key, value] : j.items()) {
    const auto& valid = keys();
    if (std::find(valid.begin(), valid.end(), key) == valid.end()) {
      std::string list;
      for (const auto& k : valid) list += (list.empty() ? "" : ", ") + k;
      throw Error("unknown model config key '" + key + "'; valid keys: " + list);
    }
  }
  auto read = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  read("word_dim", c.word_dim);
  read("pos_dim", c.pos_dim);
  read("ner_dim", c.ner_dim);
  read("ans_dim", c.ans_dim);
  read("hidden", c.hidden);
  read("layers", c.layers);
  read("dropout_p", c.dropout_p);
  read("vocab_cap", c.vocab_cap);
  read("beam_size", c.beam_size);
  read("max_decode_len", c.max_decode_len);
  read("seed", c.seed);
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Example encoding

EncodedExample encode_example(const QGExample& example, const RelationContext& context,
                              const Vocabulary& vocab) {
  if (example.sentence.empty()) throw Error("example " + example.id + ": empty sentence");
  if (context.tokens.empty()) throw Error("example " + example.id + ": empty relation context");
  EncodedExample ex;
  ex.vocab_size = static_cast<int>(vocab.size());
  std::unordered_map<std::string, int> copy_ids;
  auto extended_id = [&](const Token& t) {
    if (const auto id = vocab.find(t.lower)) return *id;
    const auto [it, inserted] = copy_ids.emplace(t.lower, ex.vocab_size + static_cast<int>(copy_ids.size()));
    if (inserted) ex.copy_surfaces.push_back(t.surface);
    return it->second;
  };

  const auto tags = bio_tags(example.sentence.size(), example.answer);
  for (std::size_t i = 0; i < example.sentence.size(); ++i) {
    const auto& t = example.sentence[i];
    ex.sentence_words.push_back(vocab.id_or_unk(t.lower));
    ex.sentence_pos.push_back(vocab.pos_tags().id(t.pos));
    ex.sentence_ner.push_back(vocab.ner_tags().id(t.ner));
    ex.sentence_answer.push_back(static_cast<int>(tags[i]));
    ex.sentence_ext.push_back(extended_id(t));
  }
  for (std::size_t i = 0; i < context.tokens.size(); ++i) {
    ex.relation_words.push_back(vocab.id_or_unk(context.tokens[i].lower));
    ex.relation_answer.push_back(static_cast<int>(context.answer_tags[i]));
    ex.relation_ext.push_back(extended_id(context.tokens[i]));
  }
  for (const auto& t : example.question) {
    if (const auto id = vocab.find(t.lower)) {
      ex.target.push_back(*id);
    } else if (const auto it = copy_ids.find(t.lower); it != copy_ids.end()) {
      ex.target.push_back(it->second);
    } else {
      ex.target.push_back(Vocabulary::kUnk);
    }
  }
  ex.target.push_back(Vocabulary::kEos);
  return ex;
}

std::vector<std::string> render_tokens(std::span<const int> ids, const EncodedExample& encoded,
                                       const Vocabulary& vocab) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const int id = ids[i];
    if (id == Vocabulary::kEos && i + 1 == ids.size()) break;
    if (id >= encoded.vocab_size) {
      out.push_back(encoded.copy_surfaces.at(static_cast<std::size_t>(id - encoded.vocab_size)));
    } else {
      out.push_back(vocab.word(id));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Building blocks

template <typename Scalar>
Attention<Scalar> attend(Var<Scalar> query, const EncoderOutput<Scalar>& keys, Var<Scalar> weight) {
  const auto projected = matmul(weight, query);
  const auto scores = softmax(matmul(keys.states_t, projected));
  return {scores, matmul(keys.states, scores)};
}

template <typename Scalar>
Fusion<Scalar> gated_fuse(Var<Scalar> c_sentence, Var<Scalar> c_relation, Var<Scalar> query,
                          Var<Scalar> w_gate, Var<Scalar> w_readout,
                          std::optional<double> forced_gate) {
  auto& tape = *c_sentence.tape;
  Var<Scalar> gate = forced_gate
      ? tape.constant(Matrix<Scalar>::Constant(c_sentence.rows(), 1, static_cast<Scalar>(*forced_gate)))
      : sigmoid(matmul(w_gate, concat({c_sentence, c_relation})));
  const auto context = add(cmul(gate, c_sentence), cmul(one_minus(gate), c_relation));
  const auto readout = tanh(matmul(w_readout, concat({query, context})));
  return {gate, context, readout};
}

template <typename Scalar>
Var<Scalar> vocab_distribution(Var<Scalar> readout, Var<Scalar> w_out, Var<Scalar> b_out) {
  static constexpr int kMasked[] = {Vocabulary::kPad, Vocabulary::kBos};
  return softmax(add(matmul(w_out, readout), b_out), std::span<const int>(kMasked));
}

template <typename Scalar>
std::pair<Var<Scalar>, Var<Scalar>> copy_distributions(Var<Scalar> sentence_scores,
                                                       Var<Scalar> relation_scores,
                                                       std::span<const int> sentence_ext,
                                                       std::span<const int> relation_ext,
                                                       int extended_size) {
  return {scatter_add(sentence_scores, {sentence_ext.begin(), sentence_ext.end()}, extended_size),
          scatter_add(relation_scores, {relation_ext.begin(), relation_ext.end()}, extended_size)};
}

template <typename Scalar>
CopyGates<Scalar> copy_gates(Var<Scalar> readout, Var<Scalar> c_sentence, Var<Scalar> c_relation,
                             Var<Scalar> w_copy, Var<Scalar> b_copy, Var<Scalar> w_source,
                             Var<Scalar> b_source, const GateOverrides& overrides) {
  auto& tape = *readout.tape;
  auto pinned = [&](double v) { return tape.constant(Matrix<Scalar>::Constant(1, 1, static_cast<Scalar>(v))); };
  const auto copy = overrides.copy ? pinned(*overrides.copy)
                                   : sigmoid(add(matmul(w_copy, readout), b_copy));
  const auto source = overrides.copy_source
      ? pinned(*overrides.copy_source)
      : sigmoid(add(matmul(w_source, concat({c_sentence, c_relation})), b_source));
  return {copy, source};
}

template <typename Scalar>
Var<Scalar> final_distribution(Var<Scalar> p_vocab, Var<Scalar> p_sentence, Var<Scalar> p_relation,
                               Var<Scalar> copy, Var<Scalar> copy_source) {
  auto& tape = *p_vocab.tape;
  const auto copy_only = p_sentence.rows() - p_vocab.rows();
  if (copy_only < 0 || p_relation.rows() != p_sentence.rows()) {
    throw ShapeError("final_distribution: shape mismatch " + shape_string(p_vocab.value()) + " vs " +
                     shape_string(p_sentence.value()));
  }
  const auto generated =
      copy_only == 0 ? p_vocab : concat({p_vocab, tape.constant(Matrix<Scalar>::Zero(copy_only, 1))});
  const auto from_vocab = scale_by(generated, one_minus(copy));
  const auto from_sentence = scale_by(p_sentence, cmul(copy, copy_source));
  const auto from_relation = scale_by(p_relation, cmul(copy, one_minus(copy_source)));
  return add(add(from_vocab, from_sentence), from_relation);
}

namespace {

template <typename Scalar>
std::pair<Var<Scalar>, Var<Scalar>> lstm_cell(Var<Scalar> w, Var<Scalar> b, Var<Scalar> x,
                                              Var<Scalar> h, Var<Scalar> c) {
  const auto n = h.rows();
  const auto z = add(matmul(w, concat({x, h})), b);
  const auto in = sigmoid(slice(z, 0, n));
  const auto forget = sigmoid(slice(z, n, n));
  const auto cand = tanh(slice(z, 2 * n, n));
  const auto out = sigmoid(slice(z, 3 * n, n));
  const auto c_next = add(cmul(forget, c), cmul(in, cand));
  return {cmul(out, tanh(c_next)), c_next};
}

template <typename Scalar>
Eigen::VectorXd as_vector(Var<Scalar> v) {
  return v.value().template cast<double>().reshaped();
}

}  // namespace

// ---------------------------------------------------------------------------
// Model

template <typename Scalar>
QGModel<Scalar>::QGModel(ModelConfig config, const Vocabulary& vocab)
    : config_(config),
      vocab_size_(static_cast<int>(vocab.size())),
      dropout_rng_(mix_seed(config.seed ^ 0xd509u)) {
  config_.validate();
  const int h = config_.hidden;
  const int both = 2 * h;
  std::uint64_t counter = 0;
  auto add = [&](const std::string& name, Eigen::Index rows, Eigen::Index cols) {
    params_.add(name, uniform_init<Scalar>(rows, cols, mix_seed(config_.seed ^ mix_seed(++counter))));
  };
  add("embedding.word", config_.word_dim, vocab_size_);
  add("embedding.pos", config_.pos_dim, static_cast<Eigen::Index>(vocab.pos_tags().size()));
  add("embedding.ner", config_.ner_dim, static_cast<Eigen::Index>(vocab.ner_tags().size()));
  add("sentence.answer_tag", config_.ans_dim, 3);
  add("relation.answer_tag", config_.ans_dim, 3);
  const int sentence_in = config_.word_dim + config_.pos_dim + config_.ner_dim + config_.ans_dim;
  const int relation_in = config_.word_dim + config_.ans_dim;
  for (const auto& [prefix, input] : {std::pair{std::string("sentence"), sentence_in},
                                      std::pair{std::string("relation"), relation_in}}) {
    for (int l = 0; l < config_.layers; ++l) {
      const int in = l == 0 ? input : both;
      for (const char* dir : {"fwd", "bwd"}) {
        const auto base = prefix + ".l" + std::to_string(l) + "." + dir;
        add(base + ".W", 4 * h, in + h);
        add(base + ".b", 4 * h, 1);
      }
    }
  }
  for (int l = 0; l < config_.layers; ++l) {
    add("bridge.l" + std::to_string(l) + ".W", h, both);
    add("bridge.l" + std::to_string(l) + ".b", h, 1);
  }
  for (int l = 0; l < config_.layers; ++l) {
    const int in = l == 0 ? config_.word_dim : h;
    add("decoder.l" + std::to_string(l) + ".W", 4 * h, in + h);
    add("decoder.l" + std::to_string(l) + ".b", 4 * h, 1);
  }
  add("attention.sentence.W", both, h);
  add("attention.relation.W", both, h);
  add("fusion.W_g", both, 2 * both);
  add("fusion.W_h", h, h + both);
  add("output.W", vocab_size_, h);
  add("output.b", vocab_size_, 1);
  add("copy.gate.w", 1, h);
  add("copy.gate.b", 1, 1);
  add("copy.source.w", 1, 2 * both);
  add("copy.source.b", 1, 1);
}

template <typename Scalar>
EncoderOutput<Scalar> QGModel<Scalar>::run_encoder(Tape<Scalar>& tape, const std::string& prefix,
                                                   std::vector<Var<Scalar>> inputs, bool train) {
  const auto n = inputs.size();
  const auto zero = tape.constant(Matrix<Scalar>::Zero(config_.hidden, 1));
  Var<Scalar> final_fwd;
  Var<Scalar> final_bwd;
  for (int l = 0; l < config_.layers; ++l) {
    for (auto& x : inputs) x = dropout(x, config_.dropout_p, train, dropout_rng_);
    const auto base = prefix + ".l" + std::to_string(l);
    const auto wf = p(tape, base + ".fwd.W");
    const auto bf = p(tape, base + ".fwd.b");
    const auto wb = p(tape, base + ".bwd.W");
    const auto bb = p(tape, base + ".bwd.b");
    std::vector<Var<Scalar>> fwd(n);
    std::vector<Var<Scalar>> bwd(n);
    Var<Scalar> h = zero;
    Var<Scalar> c = zero;
    for (std::size_t i = 0; i < n; ++i) {
      std::tie(h, c) = lstm_cell(wf, bf, inputs[i], h, c);
      fwd[i] = h;
    }
    h = zero;
    c = zero;
    for (std::size_t i = n; i-- > 0;) {
      std::tie(h, c) = lstm_cell(wb, bb, inputs[i], h, c);
      bwd[i] = h;
    }
    for (std::size_t i = 0; i < n; ++i) inputs[i] = concat({fwd[i], bwd[i]});
    final_fwd = fwd[n - 1];
    final_bwd = bwd[0];
  }
  EncoderOutput<Scalar> out;
  out.states = concat_cols(std::span<const Var<Scalar>>(inputs));
  out.states_t = transpose(out.states);
  out.final_fwd = final_fwd;
  out.final_bwd = final_bwd;
  return out;
}

template <typename Scalar>
EncoderOutput<Scalar> QGModel<Scalar>::encode_sentence(Tape<Scalar>& tape, const EncodedExample& ex,
                                                       bool train) {
  if (ex.sentence_words.empty()) throw Error("encode_sentence: empty sentence");
  auto& word = params_.at("embedding.word");
  auto& pos = params_.at("embedding.pos");
  auto& ner = params_.at("embedding.ner");
  auto& ans = params_.at("sentence.answer_tag");
  std::vector<Var<Scalar>> inputs;
  for (std::size_t i = 0; i < ex.sentence_words.size(); ++i) {
    inputs.push_back(concat({embedding_lookup(tape, word, ex.sentence_words[i]),
                             embedding_lookup(tape, pos, ex.sentence_pos[i]),
                             embedding_lookup(tape, ner, ex.sentence_ner[i]),
                             embedding_lookup(tape, ans, ex.sentence_answer[i])}));
  }
  return run_encoder(tape, "sentence", std::move(inputs), train);
}

template <typename Scalar>
EncoderOutput<Scalar> QGModel<Scalar>::encode_relation(Tape<Scalar>& tape, const EncodedExample& ex,
                                                       bool train) {
  if (ex.relation_words.empty()) throw Error("encode_relation: empty relation context");
  auto& word = params_.at("embedding.word");
  auto& ans = params_.at("relation.answer_tag");
  std::vector<Var<Scalar>> inputs;
  for (std::size_t i = 0; i < ex.relation_words.size(); ++i) {
    inputs.push_back(concat({embedding_lookup(tape, word, ex.relation_words[i]),
                             embedding_lookup(tape, ans, ex.relation_answer[i])}));
  }
  return run_encoder(tape, "relation", std::move(inputs), train);
}

template <typename Scalar>
DecoderState<Scalar> QGModel<Scalar>::initial_state(Tape<Scalar>& tape,
                                                    const EncoderOutput<Scalar>& sentence) {
  DecoderState<Scalar> s;
  const auto summary = concat({sentence.final_fwd, sentence.final_bwd});
  const auto zero = tape.constant(Matrix<Scalar>::Zero(config_.hidden, 1));
  for (int l = 0; l < config_.layers; ++l) {
    const auto base = "bridge.l" + std::to_string(l);
    s.h.push_back(tanh(add(matmul(p(tape, base + ".W"), summary), p(tape, base + ".b"))));
    s.c.push_back(zero);
  }
  return s;
}

template <typename Scalar>
StepOutput<Scalar> QGModel<Scalar>::step(Tape<Scalar>& tape, const EncodedExample& ex,
                                         const EncoderOutput<Scalar>& sentence,
                                         const EncoderOutput<Scalar>& relation,
                                         const DecoderState<Scalar>& state, int input_id, bool train) {
  // Copy-only ids feed the UNK embedding.
  const int fed = input_id >= vocab_size_ ? Vocabulary::kUnk : input_id;
  StepOutput<Scalar> out;
  auto x = embedding_lookup(tape, params_.at("embedding.word"), fed);
  for (int l = 0; l < config_.layers; ++l) {
    x = dropout(x, config_.dropout_p, train, dropout_rng_);
    const auto base = "decoder.l" + std::to_string(l);
    auto [h, c] = lstm_cell(p(tape, base + ".W"), p(tape, base + ".b"), x, state.h[l], state.c[l]);
    out.next.h.push_back(h);
    out.next.c.push_back(c);
    x = h;
  }
  const auto u = x;
  out.sentence_attention = attend(u, sentence, p(tape, "attention.sentence.W"));
  out.relation_attention = attend(u, relation, p(tape, "attention.relation.W"));
  const auto c_s = out.sentence_attention.context;
  const auto c_m = out.relation_attention.context;
  out.fusion = gated_fuse(c_s, c_m, u, p(tape, "fusion.W_g"), p(tape, "fusion.W_h"), overrides_.fuse);
  out.p_vocab = vocab_distribution(out.fusion.readout, p(tape, "output.W"), p(tape, "output.b"));
  std::tie(out.p_sentence, out.p_relation) =
      copy_distributions(out.sentence_attention.scores, out.relation_attention.scores,
                         std::span<const int>(ex.sentence_ext), std::span<const int>(ex.relation_ext),
                         ex.extended_size());
  out.gates = copy_gates(out.fusion.readout, c_s, c_m, p(tape, "copy.gate.w"), p(tape, "copy.gate.b"),
                         p(tape, "copy.source.w"), p(tape, "copy.source.b"), overrides_);
  out.p_final = final_distribution(out.p_vocab, out.p_sentence, out.p_relation, out.gates.copy,
                                   out.gates.copy_source);
  return out;
}

template <typename Scalar>
ForwardResult<Scalar> QGModel<Scalar>::forward_teacher_forced(Tape<Scalar>& tape,
                                                              const EncodedExample& ex, bool train,
                                                              bool keep_traces) {
  const auto sentence = encode_sentence(tape, ex, train);
  const auto relation = encode_relation(tape, ex, train);
  auto state = initial_state(tape, sentence);
  ForwardResult<Scalar> result;
  std::vector<Var<Scalar>> terms;
  int input = Vocabulary::kBos;
  for (const int target : ex.target) {
    auto out = step(tape, ex, sentence, relation, state, input, train);
    terms.push_back(log(pick(out.p_final, target)));
    Eigen::Index best = 0;
    out.p_final.value().col(0).maxCoeff(&best);
    if (best == target) ++result.correct_tokens;
    if (keep_traces) {
      auto trace = to_trace(out);
      trace.token = target;
      result.traces.push_back(std::move(trace));
    }
    state = out.next;
    input = target;
  }
  result.loss = scale(add_all(std::span<const Var<Scalar>>(terms)), Scalar(-1));
  result.target_tokens = ex.target.size();
  return result;
}

template <typename Scalar>
static DecodeStepTrace make_trace(const StepOutput<Scalar>& out) {
  DecodeStepTrace t;
  t.attn_sentence = as_vector(out.sentence_attention.scores);
  t.attn_relation = as_vector(out.relation_attention.scores);
  t.fuse_gate = as_vector(out.fusion.gate);
  t.copy_gate = static_cast<double>(out.gates.copy.scalar());
  t.source_gate = static_cast<double>(out.gates.copy_source.scalar());
  t.p_vocab = as_vector(out.p_vocab);
  t.p_sentence = as_vector(out.p_sentence);
  t.p_relation = as_vector(out.p_relation);
  t.p_final = as_vector(out.p_final);
  return t;
}

DecodeStepTrace to_trace(const StepOutput<double>& out) { return make_trace(out); }
DecodeStepTrace to_trace(const StepOutput<float>& out) { return make_trace(out); }

#define QG_INSTANTIATE(S)                                                                            \
  template class QGModel<S>;                                                                         \
  template Attention<S> attend<S>(Var<S>, const EncoderOutput<S>&, Var<S>);                          \
  template Fusion<S> gated_fuse<S>(Var<S>, Var<S>, Var<S>, Var<S>, Var<S>, std::optional<double>);  \
  template Var<S> vocab_distribution<S>(Var<S>, Var<S>, Var<S>);                                     \
  template std::pair<Var<S>, Var<S>> copy_distributions<S>(Var<S>, Var<S>, std::span<const int>,     \
                                                           std::span<const int>, int);               \
  template CopyGates<S> copy_gates<S>(Var<S>, Var<S>, Var<S>, Var<S>, Var<S>, Var<S>, Var<S>,        \
                                      const GateOverrides&);                                         \
  template Var<S> final_distribution<S>(Var<S>, Var<S>, Var<S>, Var<S>, Var<S>);

QG_INSTANTIATE(double)
QG_INSTANTIATE(float)

#undef QG_INSTANTIATE

}  // namespace qg
