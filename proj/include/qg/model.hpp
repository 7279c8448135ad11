#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "qg/data.hpp"
#include "qg/numeric/rng.hpp"
#include "qg/numeric/tape.hpp"
#include "qg/numeric/tensor.hpp"
#include "qg/relation.hpp"

namespace qg {

struct ModelConfig {
  int word_dim = 300;
  int pos_dim = 20;
  int ner_dim = 20;
  int ans_dim = 20;
  int hidden = 600;  // per direction in the encoders; decoder width
  int layers = 2;
  double dropout_p = 0.3;
  std::size_t vocab_cap = 20000;
  int beam_size = 3;
  int max_decode_len = 30;
  std::uint64_t seed = 1;

  /// Hyperparameters of the full-size recipe.
  static ModelConfig full() { return {}; }
  /// Small profile that trains in minutes on a CPU.
  static ModelConfig desk();

  void validate() const;
  nlohmann::json to_json() const;
  /// Unknown keys raise an Error listing the accepted ones.
  static ModelConfig from_json(const nlohmann::json& j, ModelConfig base);
  static ModelConfig from_json(const nlohmann::json& j) { return from_json(j, ModelConfig{}); }
  static const std::vector<std::string>& keys();
};

/// One example mapped to ids. Extended ids are the fixed vocabulary followed
/// by this example's copy-only source words (in order of first appearance,
/// sentence before relation).
struct EncodedExample {
  std::vector<int> sentence_words;
  std::vector<int> sentence_pos;
  std::vector<int> sentence_ner;
  std::vector<int> sentence_answer;
  std::vector<int> relation_words;
  std::vector<int> relation_answer;
  std::vector<int> sentence_ext;
  std::vector<int> relation_ext;
  std::vector<std::string> copy_surfaces;
  /// Question ids over the extended vocabulary, EOS-terminated.
  std::vector<int> target;
  int vocab_size = 0;

  int extended_size() const { return vocab_size + static_cast<int>(copy_surfaces.size()); }
};

EncodedExample encode_example(const QGExample& example, const RelationContext& context,
                              const Vocabulary& vocab);

/// Surfaces for extended ids, dropping a trailing EOS. Copy-only ids render
/// with the surface of their first source occurrence.
std::vector<std::string> render_tokens(std::span<const int> ids, const EncodedExample& encoded,
                                       const Vocabulary& vocab);

/// Test hooks that pin a gate to a constant instead of its learned value.
struct GateOverrides {
  std::optional<double> fuse;         // g_t, broadcast to every entry
  std::optional<double> copy;         // g^v_t
  std::optional<double> copy_source;  // g^c_t
};

template <typename Scalar>
struct EncoderOutput {
  Var<Scalar> states;      // (2*hidden) x n, column i = [fwd_i; bwd_i]
  Var<Scalar> states_t;    // n x (2*hidden)
  Var<Scalar> final_fwd;   // last layer, forward direction after the last token
  Var<Scalar> final_bwd;   // last layer, backward direction after the first token
  Eigen::Index length() const { return states.cols(); }
};

template <typename Scalar>
struct DecoderState {
  std::vector<Var<Scalar>> h;
  std::vector<Var<Scalar>> c;
};

/// Plain-value decoder state, detached from any tape.
template <typename Scalar>
struct DecoderValues {
  std::vector<Matrix<Scalar>> h;
  std::vector<Matrix<Scalar>> c;
};

template <typename Scalar>
struct Attention {
  Var<Scalar> scores;   // n x 1, sums to one
  Var<Scalar> context;  // (2*hidden) x 1
};

template <typename Scalar>
struct Fusion {
  Var<Scalar> gate;      // g_t
  Var<Scalar> context;   // c_t
  Var<Scalar> readout;   // h~_t
};

template <typename Scalar>
struct CopyGates {
  Var<Scalar> copy;         // g^v_t, probability of copying
  Var<Scalar> copy_source;  // g^c_t, probability the copy comes from the sentence
};

template <typename Scalar>
struct StepOutput {
  Attention<Scalar> sentence_attention;
  Attention<Scalar> relation_attention;
  Fusion<Scalar> fusion;
  CopyGates<Scalar> gates;
  Var<Scalar> p_vocab;
  Var<Scalar> p_sentence;
  Var<Scalar> p_relation;
  Var<Scalar> p_final;
  DecoderState<Scalar> next;
};

/// Inspection record of one decoding step, over the extended vocabulary
/// except p_vocab, which covers the fixed vocabulary.
struct DecodeStepTrace {
  Eigen::VectorXd attn_sentence;
  Eigen::VectorXd attn_relation;
  Eigen::VectorXd fuse_gate;
  double copy_gate = 0.0;
  double source_gate = 0.0;
  Eigen::VectorXd p_vocab;
  Eigen::VectorXd p_sentence;
  Eigen::VectorXd p_relation;
  Eigen::VectorXd p_final;
  int token = -1;
};

template <typename Scalar>
struct ForwardResult {
  Var<Scalar> loss;               // summed negative log-likelihood
  std::size_t target_tokens = 0;
  std::size_t correct_tokens = 0;  // argmax of P_final equals the target
  std::vector<DecodeStepTrace> traces;
};

/// Bilinear attention: scores = softmax(keys^T (W u)), context = keys * scores.
/// `weight` is stored as (key width) x (query width).
template <typename Scalar>
Attention<Scalar> attend(Var<Scalar> query, const EncoderOutput<Scalar>& keys, Var<Scalar> weight);

/// g = sigmoid(W_g [c_s; c_m]); c = g*c_s + (1-g)*c_m; h~ = tanh(W_h [u; c]).
template <typename Scalar>
Fusion<Scalar> gated_fuse(Var<Scalar> c_sentence, Var<Scalar> c_relation, Var<Scalar> query,
                          Var<Scalar> w_gate, Var<Scalar> w_readout,
                          std::optional<double> forced_gate = std::nullopt);

/// softmax(W_V h~ + b_V) with PAD and BOS excluded.
template <typename Scalar>
Var<Scalar> vocab_distribution(Var<Scalar> readout, Var<Scalar> w_out, Var<Scalar> b_out);

/// Copy distributions over the extended vocabulary, reusing attention scores.
template <typename Scalar>
std::pair<Var<Scalar>, Var<Scalar>> copy_distributions(Var<Scalar> sentence_scores,
                                                       Var<Scalar> relation_scores,
                                                       std::span<const int> sentence_ext,
                                                       std::span<const int> relation_ext,
                                                       int extended_size);

template <typename Scalar>
CopyGates<Scalar> copy_gates(Var<Scalar> readout, Var<Scalar> c_sentence, Var<Scalar> c_relation,
                             Var<Scalar> w_copy, Var<Scalar> b_copy, Var<Scalar> w_source,
                             Var<Scalar> b_source, const GateOverrides& overrides = {});

/// (1-g^v) P_V + g^v g^c P_S + g^v (1-g^c) P_M, with P_V zero-padded to the
/// extended vocabulary.
template <typename Scalar>
Var<Scalar> final_distribution(Var<Scalar> p_vocab, Var<Scalar> p_sentence, Var<Scalar> p_relation,
                               Var<Scalar> copy, Var<Scalar> copy_source);

/// Dual-encoder question generator with gated attention fusion and a dual
/// copy mechanism.
template <typename Scalar>
class QGModel {
 public:
  QGModel(ModelConfig config, const Vocabulary& vocab);

  const ModelConfig& config() const { return config_; }
  ParameterSet<Scalar>& params() { return params_; }
  const ParameterSet<Scalar>& params() const { return params_; }
  int vocab_size() const { return vocab_size_; }

  Rng& dropout_rng() { return dropout_rng_; }
  GateOverrides& overrides() { return overrides_; }

  EncoderOutput<Scalar> encode_sentence(Tape<Scalar>& tape, const EncodedExample& ex, bool train);
  EncoderOutput<Scalar> encode_relation(Tape<Scalar>& tape, const EncodedExample& ex, bool train);

  DecoderState<Scalar> initial_state(Tape<Scalar>& tape, const EncoderOutput<Scalar>& sentence);

  /// One decoder step consuming `input_id` (clamped to the fixed vocabulary).
  StepOutput<Scalar> step(Tape<Scalar>& tape, const EncodedExample& ex,
                          const EncoderOutput<Scalar>& sentence,
                          const EncoderOutput<Scalar>& relation, const DecoderState<Scalar>& state,
                          int input_id, bool train);

  /// Teacher-forced loss over ex.target (BOS-prefixed inputs).
  ForwardResult<Scalar> forward_teacher_forced(Tape<Scalar>& tape, const EncodedExample& ex,
                                               bool train, bool keep_traces = false);

  /// Word embedding table, dim x vocab.
  Parameter<Scalar>& word_embeddings() { return params_.at("embedding.word"); }

 private:
  Var<Scalar> p(Tape<Scalar>& tape, const std::string& name) { return tape.parameter(params_.at(name)); }
  EncoderOutput<Scalar> run_encoder(Tape<Scalar>& tape, const std::string& prefix,
                                    std::vector<Var<Scalar>> inputs, bool train);

  ModelConfig config_;
  int vocab_size_;
  ParameterSet<Scalar> params_;
  Rng dropout_rng_;
  GateOverrides overrides_;
};

DecodeStepTrace to_trace(const StepOutput<double>& out);
DecodeStepTrace to_trace(const StepOutput<float>& out);

extern template class QGModel<double>;
extern template class QGModel<float>;

}  // namespace qg
