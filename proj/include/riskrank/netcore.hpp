#ifndef RISKRANK_NETCORE_HPP
#define RISKRANK_NETCORE_HPP

#include <Eigen/Dense>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "riskrank/corpus.hpp"

namespace riskrank::netcore {

using Eigen::MatrixXd;
using Eigen::Vector3d;
using Eigen::VectorXd;

struct ModelConfig {
    int vocab_size = 0;
    int embed_dim = 32;     // m; token and sentence embedding width
    int attn_dim = 32;      // context width; must be even
    int heads = 4;          // H; embed_dim must be divisible by H
    int max_sentences = 350; // L
    int max_tokens = 40;     // l
    int ffn_width = 64;      // encoder feed-forward width
    std::uint64_t seed = 0;

    int head_dim() const { return embed_dim / heads; }
    int gru_hidden() const { return attn_dim / 2; }
    void validate() const;
};

// One direction of the sentence-context GRU. Input width is embed_dim,
// hidden width is attn_dim/2.
struct GruParams {
    MatrixXd update_w, update_u; // hidden x input, hidden x hidden
    MatrixXd reset_w, reset_u;
    MatrixXd cand_w, cand_u;
    VectorXd update_b, reset_b, cand_b;
};

// Every trainable tensor of the network. Doubles as the gradient container:
// backward() returns a ParameterSet with matching shapes.
struct ParameterSet {
    MatrixXd embedding; // vocab_size x m

    // Sentence encoder: one masked multi-head self-attention block with
    // residual + layer norm, position-wise feed-forward, residual + layer norm.
    MatrixXd attn_query_w, attn_key_w, attn_value_w, attn_out_w; // m x m
    VectorXd attn_query_b, attn_key_b, attn_value_b, attn_out_b; // m
    MatrixXd ffn_in_w;  // ffn_width x m
    VectorXd ffn_in_b;  // ffn_width
    MatrixXd ffn_out_w; // m x ffn_width
    VectorXd ffn_out_b; // m
    VectorXd ln1_gain, ln1_bias, ln2_gain, ln2_bias; // m

    GruParams gru_fwd, gru_bwd;

    MatrixXd sent_attn_w; // attdim x attdim
    VectorXd sent_attn_b; // attdim
    VectorXd sent_attn_u; // attdim

    VectorXd head_w; // attdim
    double head_b = 0.0;
    MatrixXd class_head_w; // 3 x attdim (cross-entropy mode)
    VectorXd class_head_b; // 3

    VectorXd pool_head_w; // m (pooling-ablation mode)
    double pool_head_b = 0.0;
    MatrixXd pool_class_w; // 3 x m
    VectorXd pool_class_b; // 3

    static ParameterSet zeros(const ModelConfig& config);
};

struct ModelState {
    ModelConfig config;
    ParameterSet params;
};

// Two-rate descent groups: the sentence encoder (embedding + transformer
// block) trains at encoder_lr, everything above it at head_lr.
enum class ParamGroup { Encoder, Head };

struct TensorInfo {
    std::string name;
    double* data;
    Eigen::Index rows;
    Eigen::Index cols;
    ParamGroup group;
    Eigen::Index size() const { return rows * cols; }
};

// Fixed-order enumeration of every parameter tensor; the order defines the
// checkpoint layout and the initialization draw sequence.
std::vector<TensorInfo> parameter_registry(ParameterSet& params);
std::vector<TensorInfo> parameter_registry(const ParameterSet& params);

// Seeded initialization: uniform(-a, a) with a = sqrt(6/(fan_in+fan_out))
// for weight matrices, zeros for biases and the attention vector U, ones
// for layer-norm gains.
ModelState init_model(const ModelConfig& config);

// --- forward pieces -------------------------------------------------------

struct SentenceCache {
    int sentence_index = 0;
    std::vector<int> positions;       // original token columns, compact order
    std::vector<std::int32_t> ids;    // token ids at those positions
    MatrixXd input;                   // U x m embedding rows
    MatrixXd query, key, value;       // U x m
    std::vector<MatrixXd> attn;       // per head, U x U row-softmax
    MatrixXd attn_concat;             // U x m
    MatrixXd res1;                    // U x m, input + attention projection
    MatrixXd norm1_hat;               // U x m
    VectorXd norm1_inv_std;           // U
    MatrixXd norm1;                   // U x m
    MatrixXd ffn_pre;                 // U x ffn_width
    MatrixXd ffn_act;                 // U x ffn_width
    MatrixXd res2;                    // U x m
    MatrixXd norm2_hat;               // U x m
    VectorXd norm2_inv_std;           // U
    MatrixXd output;                  // U x m
};

struct SentenceEncodeResult {
    VectorXd cls_embedding;  // m
    VectorXd word_attention; // l, zero at masked positions
    MatrixXd outputs;        // l x m, zero rows at masked positions
};

// Encodes one sentence row. Standalone entry point used by tests and the
// pooled aggregators; forward() runs the same computation with caching.
SentenceEncodeResult encode_sentence(const std::int32_t* ids, const std::uint8_t* mask,
                                     const ModelState& state);

// h' = z (.) h_prev + (1 - z) (.) h_cand.
VectorXd gru_cell(const VectorXd& x, const VectorXd& h_prev, const GruParams& params);

// Bidirectional GRU over unmasked sentences; masked rows output zero and do
// not update either recurrence. Row = [forward | backward], width attdim.
MatrixXd context_encode(const MatrixXd& sentence_embeddings,
                        const std::vector<std::uint8_t>& sentence_mask,
                        const ModelState& state);

// alpha_s = softmax over unmasked sentences of tanh(W h + b) . U.
VectorXd sentence_attention(const MatrixXd& context,
                            const std::vector<std::uint8_t>& sentence_mask,
                            const ModelState& state);

VectorXd document_embedding(const VectorXd& alpha_s, const MatrixXd& context);

enum class PoolMode { Mean, Max };

// Mean or coordinate-wise max over unmasked token-level encoder outputs.
// token_outputs is (L*l) x m with zero rows at masked positions.
VectorXd pooled_document_embedding(const MatrixXd& token_outputs,
                                   const std::vector<std::uint8_t>& token_mask,
                                   PoolMode mode);

double risk_logit(const VectorXd& document_embedding, const ModelState& state);

// --- full forward / backward ----------------------------------------------

struct GruStepCache {
    int sentence_index = 0;
    VectorXd h_prev, update, reset, cand, h;
};

struct TraceCaches {
    std::vector<SentenceCache> sentences;       // unmasked rows, document order
    std::vector<GruStepCache> gru_fwd, gru_bwd; // step order per direction
    MatrixXd sent_u;                            // S_u x attdim, tanh output
    VectorXd sent_scores;                       // S_u
    VectorXd alpha_compact;                     // S_u
};

struct ForwardTrace {
    double risk_logit = 0.0;
    Vector3d class_logits = Vector3d::Zero();
    VectorXd sentence_attention;  // L, masked sentences carry 0
    MatrixXd word_attention;      // L x l, masked positions carry 0
    MatrixXd sentence_embeddings; // L x m
    MatrixXd context;             // L x attdim
    VectorXd document_embedding;  // attdim

    std::shared_ptr<TraceCaches> caches; // null unless caching was requested
};

ForwardTrace forward(const corpus::EncodedDocument& doc, const ModelState& state,
                     bool with_caches = false);

struct PooledTrace {
    double risk_logit = 0.0;
    Vector3d class_logits = Vector3d::Zero();
    VectorXd pooled; // m
    PoolMode mode = PoolMode::Mean;
    int token_count = 0;                  // unmasked tokens pooled over
    std::vector<int> argmax_sentence;     // per coordinate (max mode): cache index
    std::vector<int> argmax_row;          // per coordinate: compact row in that cache
    std::shared_ptr<std::vector<SentenceCache>> caches;
};

PooledTrace forward_pooled(const corpus::EncodedDocument& doc, const ModelState& state,
                           PoolMode mode, bool with_caches = false);

// How a trace turns into the scalar used for ranking and discretization:
// the risk logit directly, or the expected value of the class distribution
// in cross-entropy mode.
enum class ScoreKind { RiskLogit, ExpectedRisk };

double document_score(double risk_logit, const Vector3d& class_logits, ScoreKind kind);

inline double document_score(const ForwardTrace& trace, ScoreKind kind) {
    return document_score(trace.risk_logit, trace.class_logits, kind);
}

inline double document_score(const PooledTrace& trace, ScoreKind kind) {
    return document_score(trace.risk_logit, trace.class_logits, kind);
}

// Upstream gradient for one document: d(loss)/d(risk logit) and, in
// cross-entropy mode, d(loss)/d(class logits).
struct LogitGrad {
    double d_risk = 0.0;
    Vector3d d_class = Vector3d::Zero();
};

// Exact reverse-mode gradients of the batch loss w.r.t. every parameter
// tensor. Traces must have been produced with caching enabled.
ParameterSet backward(const std::vector<ForwardTrace>& traces,
                      const std::vector<LogitGrad>& grads, const ModelState& state);

ParameterSet backward_pooled(const std::vector<PooledTrace>& traces,
                             const std::vector<LogitGrad>& grads, const ModelState& state);

// parameter <- parameter - lr * gradient with the group's learning rate.
void sgd_step(ModelState& state, const ParameterSet& grads, double encoder_lr, double head_lr);

// --- checkpointing ---------------------------------------------------------

// Versioned binary container: config, seed, then every parameter tensor as a
// shape-tagged little-endian float64 array in registry order.
void save_checkpoint(const ModelState& state, const std::string& path);
ModelState load_checkpoint(const std::string& path);

} // namespace riskrank::netcore

#endif
