#pragma once

#include <utility>
#include <vector>

#include "qg/beam.hpp"
#include "qg/model.hpp"

namespace qg {

/// Runs the encoders once and then serves single decoder steps on fresh,
/// non-recording tapes. Parameters are only read.
template <typename Scalar>
class StepDecoder {
 public:
  using State = DecoderValues<Scalar>;

  StepDecoder(QGModel<Scalar>& model, const EncodedExample& ex) : model_(model), ex_(ex) {
    Tape<Scalar> tape(false);
    const auto s = model_.encode_sentence(tape, ex_, false);
    const auto r = model_.encode_relation(tape, ex_, false);
    sentence_ = s.states.value();
    sentence_t_ = s.states_t.value();
    relation_ = r.states.value();
    relation_t_ = r.states_t.value();
    const auto init = model_.initial_state(tape, s);
    for (std::size_t l = 0; l < init.h.size(); ++l) {
      initial_.h.push_back(init.h[l].value());
      initial_.c.push_back(init.c[l].value());
    }
  }

  const State& initial() const { return initial_; }

  std::pair<Eigen::VectorXd, State> operator()(const State& state, int token) {
    Tape<Scalar> tape(false);
    StepOutput<Scalar> out = run(tape, state, token);
    State next;
    for (std::size_t l = 0; l < out.next.h.size(); ++l) {
      next.h.push_back(out.next.h[l].value());
      next.c.push_back(out.next.c[l].value());
    }
    return {out.p_final.value().template cast<double>().reshaped(), std::move(next)};
  }

  /// Traces of feeding `ids` (teacher-forced, BOS first).
  std::vector<DecodeStepTrace> trace(std::span<const int> ids) {
    std::vector<DecodeStepTrace> traces;
    State state = initial_;
    int input = Vocabulary::kBos;
    for (const int id : ids) {
      Tape<Scalar> tape(false);
      auto out = run(tape, state, input);
      auto t = to_trace(out);
      t.token = id;
      traces.push_back(std::move(t));
      state.h.clear();
      state.c.clear();
      for (std::size_t l = 0; l < out.next.h.size(); ++l) {
        state.h.push_back(out.next.h[l].value());
        state.c.push_back(out.next.c[l].value());
      }
      input = id;
    }
    return traces;
  }

 private:
  StepOutput<Scalar> run(Tape<Scalar>& tape, const State& state, int token) {
    EncoderOutput<Scalar> s{tape.external(sentence_), tape.external(sentence_t_), {}, {}};
    EncoderOutput<Scalar> r{tape.external(relation_), tape.external(relation_t_), {}, {}};
    DecoderState<Scalar> vars;
    for (std::size_t l = 0; l < state.h.size(); ++l) {
      vars.h.push_back(tape.external(state.h[l]));
      vars.c.push_back(tape.external(state.c[l]));
    }
    return model_.step(tape, ex_, s, r, vars, token, false);
  }

  QGModel<Scalar>& model_;
  const EncodedExample& ex_;
  Matrix<Scalar> sentence_, sentence_t_, relation_, relation_t_;
  State initial_;
};

template <typename Scalar>
BeamResult<DecoderValues<Scalar>> beam_decode(QGModel<Scalar>& model, const EncodedExample& ex,
                                              int beam_size, int max_len) {
  if (beam_size <= 0) throw Error("beam_size must be positive");
  StepDecoder<Scalar> decoder(model, ex);
  return beam_search(decoder.initial(), Vocabulary::kBos, Vocabulary::kEos, beam_size, max_len, decoder);
}

template <typename Scalar>
Hypothesis<DecoderValues<Scalar>> greedy_decode(QGModel<Scalar>& model, const EncodedExample& ex,
                                                int max_len) {
  StepDecoder<Scalar> decoder(model, ex);
  return greedy_search(decoder.initial(), Vocabulary::kBos, Vocabulary::kEos, max_len, decoder);
}

}  // namespace qg
