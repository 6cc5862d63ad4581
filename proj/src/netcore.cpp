#include "riskrank/netcore.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include "riskrank/errors.hpp"
#include "riskrank/rng.hpp"

namespace riskrank::netcore {

namespace {

constexpr double kLayerNormEps = 1e-5;
constexpr double kSqrt2 = 1.4142135623730951;
constexpr double kInvSqrt2Pi = 0.3989422804014327;

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / kSqrt2)); }

double gelu_grad(double x) {
    const double cdf = 0.5 * (1.0 + std::erf(x / kSqrt2));
    const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
    return cdf + x * pdf;
}

double sigmoid(double x) {
    return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

// Row-wise layer normalization; returns the normalized rows and fills
// x_hat / inv_std caches for the backward pass.
MatrixXd layer_norm(const MatrixXd& x, const VectorXd& gain, const VectorXd& bias,
                    MatrixXd& x_hat, VectorXd& inv_std) {
    const auto rows = x.rows();
    const auto cols = x.cols();
    x_hat.resize(rows, cols);
    inv_std.resize(rows);
    MatrixXd out(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
        const double mean = x.row(r).mean();
        const double var = (x.row(r).array() - mean).square().sum() / static_cast<double>(cols);
        const double is = 1.0 / std::sqrt(var + kLayerNormEps);
        inv_std(r) = is;
        x_hat.row(r) = (x.row(r).array() - mean) * is;
        out.row(r) = x_hat.row(r).cwiseProduct(gain.transpose()) + bias.transpose();
    }
    return out;
}

// dL/dx for y = gain (.) x_hat + bias given dL/dy; accumulates gain/bias grads.
MatrixXd layer_norm_backward(const MatrixXd& d_out, const MatrixXd& x_hat,
                             const VectorXd& inv_std, const VectorXd& gain,
                             VectorXd& d_gain, VectorXd& d_bias) {
    const auto rows = d_out.rows();
    const auto cols = d_out.cols();
    MatrixXd dx(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
        d_bias += d_out.row(r).transpose();
        d_gain += d_out.row(r).cwiseProduct(x_hat.row(r)).transpose();
        const Eigen::RowVectorXd d_hat = d_out.row(r).cwiseProduct(gain.transpose());
        const double mean_d = d_hat.mean();
        const double mean_dx = d_hat.cwiseProduct(x_hat.row(r)).mean();
        dx.row(r) = inv_std(r) * (d_hat.array() - mean_d - x_hat.row(r).array() * mean_dx);
    }
    return dx;
}

// Runs the encoder block on the compact (unmasked) positions of one row.
SentenceCache encode_sentence_compact(const std::int32_t* ids, const std::uint8_t* mask,
                                      const ModelState& state, int sentence_index) {
    const ModelConfig& cfg = state.config;
    const ParameterSet& p = state.params;
    const int l = cfg.max_tokens;

    SentenceCache cache;
    cache.sentence_index = sentence_index;
    for (int t = 0; t < l; ++t) {
        if (mask[t] != 0) {
            cache.positions.push_back(t);
            cache.ids.push_back(ids[t]);
        }
    }
    const auto u = static_cast<Eigen::Index>(cache.positions.size());
    if (u == 0) {
        throw Error(ErrorKind::InternalInvariantViolation,
                    "sentence marked non-empty but every position is masked");
    }
    if (cache.positions.front() != 0 || cache.ids.front() != corpus::kClsId) {
        throw Error(ErrorKind::InternalInvariantViolation,
                    "non-empty sentence row does not begin with CLS");
    }

    const int m = cfg.embed_dim;
    const int dk = cfg.head_dim();
    const double scale = 1.0 / std::sqrt(static_cast<double>(dk));

    cache.input.resize(u, m);
    for (Eigen::Index i = 0; i < u; ++i) {
        cache.input.row(i) = p.embedding.row(cache.ids[static_cast<std::size_t>(i)]);
    }

    cache.query = cache.input * p.attn_query_w.transpose();
    cache.query.rowwise() += p.attn_query_b.transpose();
    cache.key = cache.input * p.attn_key_w.transpose();
    cache.key.rowwise() += p.attn_key_b.transpose();
    cache.value = cache.input * p.attn_value_w.transpose();
    cache.value.rowwise() += p.attn_value_b.transpose();

    cache.attn.resize(static_cast<std::size_t>(cfg.heads));
    cache.attn_concat.resize(u, m);
    for (int h = 0; h < cfg.heads; ++h) {
        const auto col = static_cast<Eigen::Index>(h) * dk;
        const MatrixXd q = cache.query.middleCols(col, dk);
        const MatrixXd k = cache.key.middleCols(col, dk);
        const MatrixXd v = cache.value.middleCols(col, dk);
        MatrixXd scores = q * k.transpose() * scale;
        // Row softmax; only unmasked positions exist in the compact matrices.
        MatrixXd& attn = cache.attn[static_cast<std::size_t>(h)];
        attn.resize(u, u);
        for (Eigen::Index r = 0; r < u; ++r) {
            const double mx = scores.row(r).maxCoeff();
            Eigen::RowVectorXd e = (scores.row(r).array() - mx).exp();
            attn.row(r) = e / e.sum();
        }
        cache.attn_concat.middleCols(col, dk) = attn * v;
    }

    MatrixXd proj = cache.attn_concat * p.attn_out_w.transpose();
    proj.rowwise() += p.attn_out_b.transpose();
    cache.res1 = cache.input + proj;
    cache.norm1 = layer_norm(cache.res1, p.ln1_gain, p.ln1_bias, cache.norm1_hat, cache.norm1_inv_std);

    cache.ffn_pre = cache.norm1 * p.ffn_in_w.transpose();
    cache.ffn_pre.rowwise() += p.ffn_in_b.transpose();
    cache.ffn_act = cache.ffn_pre.unaryExpr([](double x) { return gelu(x); });
    MatrixXd ffn_out = cache.ffn_act * p.ffn_out_w.transpose();
    ffn_out.rowwise() += p.ffn_out_b.transpose();
    cache.res2 = cache.norm1 + ffn_out;
    cache.norm2_hat.resize(0, 0);
    cache.output = layer_norm(cache.res2, p.ln2_gain, p.ln2_bias, cache.norm2_hat, cache.norm2_inv_std);
    return cache;
}

VectorXd word_attention_from_cache(const SentenceCache& cache, int l, int heads) {
    VectorXd alpha = VectorXd::Zero(l);
    Eigen::RowVectorXd mean_cls = Eigen::RowVectorXd::Zero(cache.attn_concat.rows());
    for (const MatrixXd& attn : cache.attn) mean_cls += attn.row(0);
    mean_cls /= static_cast<double>(heads);
    for (std::size_t i = 0; i < cache.positions.size(); ++i) {
        alpha(cache.positions[i]) = mean_cls(static_cast<Eigen::Index>(i));
    }
    return alpha;
}

// Backward through the encoder block for one sentence. d_out is U x m.
void encode_sentence_backward(const SentenceCache& cache, const MatrixXd& d_out,
                              const ModelState& state, ParameterSet& g) {
    const ModelConfig& cfg = state.config;
    const ParameterSet& p = state.params;
    const int dk = cfg.head_dim();
    const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
    const auto u = cache.input.rows();

    MatrixXd d_res2 = layer_norm_backward(d_out, cache.norm2_hat, cache.norm2_inv_std,
                                          p.ln2_gain, g.ln2_gain, g.ln2_bias);
    MatrixXd d_norm1 = d_res2;

    // Feed-forward.
    g.ffn_out_w += d_res2.transpose() * cache.ffn_act;
    g.ffn_out_b += d_res2.colwise().sum().transpose();
    MatrixXd d_act = d_res2 * p.ffn_out_w;
    MatrixXd d_pre = d_act.cwiseProduct(cache.ffn_pre.unaryExpr([](double x) { return gelu_grad(x); }));
    g.ffn_in_w += d_pre.transpose() * cache.norm1;
    g.ffn_in_b += d_pre.colwise().sum().transpose();
    d_norm1 += d_pre * p.ffn_in_w;

    MatrixXd d_res1 = layer_norm_backward(d_norm1, cache.norm1_hat, cache.norm1_inv_std,
                                          p.ln1_gain, g.ln1_gain, g.ln1_bias);
    MatrixXd d_input = d_res1;

    // Attention projection.
    g.attn_out_w += d_res1.transpose() * cache.attn_concat;
    g.attn_out_b += d_res1.colwise().sum().transpose();
    MatrixXd d_concat = d_res1 * p.attn_out_w;

    MatrixXd d_query = MatrixXd::Zero(u, cfg.embed_dim);
    MatrixXd d_key = MatrixXd::Zero(u, cfg.embed_dim);
    MatrixXd d_value = MatrixXd::Zero(u, cfg.embed_dim);
    for (int h = 0; h < cfg.heads; ++h) {
        const auto col = static_cast<Eigen::Index>(h) * dk;
        const MatrixXd& attn = cache.attn[static_cast<std::size_t>(h)];
        const MatrixXd v = cache.value.middleCols(col, dk);
        const MatrixXd d_head = d_concat.middleCols(col, dk);

        MatrixXd d_attn = d_head * v.transpose();
        d_value.middleCols(col, dk) = attn.transpose() * d_head;

        MatrixXd d_scores(u, u);
        for (Eigen::Index r = 0; r < u; ++r) {
            const double dot = attn.row(r).dot(d_attn.row(r));
            d_scores.row(r) = attn.row(r).array() * (d_attn.row(r).array() - dot);
        }
        d_query.middleCols(col, dk) = d_scores * cache.key.middleCols(col, dk) * scale;
        d_key.middleCols(col, dk) = d_scores.transpose() * cache.query.middleCols(col, dk) * scale;
    }

    g.attn_query_w += d_query.transpose() * cache.input;
    g.attn_query_b += d_query.colwise().sum().transpose();
    g.attn_key_w += d_key.transpose() * cache.input;
    g.attn_key_b += d_key.colwise().sum().transpose();
    g.attn_value_w += d_value.transpose() * cache.input;
    g.attn_value_b += d_value.colwise().sum().transpose();
    d_input += d_query * p.attn_query_w + d_key * p.attn_key_w + d_value * p.attn_value_w;

    for (Eigen::Index i = 0; i < u; ++i) {
        g.embedding.row(cache.ids[static_cast<std::size_t>(i)]) += d_input.row(i);
    }
}

struct GruRun {
    std::vector<GruStepCache> steps;
};

// Runs one GRU direction over the given sentence order.
GruRun run_gru(const MatrixXd& inputs, const std::vector<int>& order, const GruParams& params,
               int hidden) {
    GruRun run;
    VectorXd h = VectorXd::Zero(hidden);
    for (int s : order) {
        GruStepCache step;
        step.sentence_index = s;
        step.h_prev = h;
        const VectorXd x = inputs.row(s).transpose();
        step.update = (params.update_w * x + params.update_u * h + params.update_b)
                          .unaryExpr([](double v) { return sigmoid(v); });
        step.reset = (params.reset_w * x + params.reset_u * h + params.reset_b)
                         .unaryExpr([](double v) { return sigmoid(v); });
        step.cand = (params.cand_w * x + params.cand_u * step.reset.cwiseProduct(h) + params.cand_b)
                        .unaryExpr([](double v) { return std::tanh(v); });
        step.h = step.update.cwiseProduct(h) +
                 (VectorXd::Ones(hidden) - step.update).cwiseProduct(step.cand);
        h = step.h;
        run.steps.push_back(std::move(step));
    }
    return run;
}

// BPTT through one direction. d_h_per_step[i] is the gradient arriving at
// the hidden output of step i; d_inputs accumulates per-sentence input grads.
void gru_backward(const std::vector<GruStepCache>& steps, const MatrixXd& inputs,
                  const GruParams& params, const std::vector<VectorXd>& d_h_per_step,
                  GruParams& grads, MatrixXd& d_inputs) {
    const auto hidden = params.update_b.size();
    VectorXd carry = VectorXd::Zero(hidden);
    for (std::size_t idx = steps.size(); idx-- > 0;) {
        const GruStepCache& step = steps[idx];
        const VectorXd x = inputs.row(step.sentence_index).transpose();
        VectorXd dh = d_h_per_step[idx] + carry;

        const VectorXd one = VectorXd::Ones(hidden);
        VectorXd d_update = dh.cwiseProduct(step.h_prev - step.cand);
        VectorXd d_cand = dh.cwiseProduct(one - step.update);
        VectorXd d_h_prev = dh.cwiseProduct(step.update);

        // Candidate: cand = tanh(Wc x + Uc (reset (.) h_prev) + bc).
        VectorXd da_cand = d_cand.cwiseProduct(one - step.cand.cwiseProduct(step.cand));
        grads.cand_w += da_cand * x.transpose();
        grads.cand_u += da_cand * step.reset.cwiseProduct(step.h_prev).transpose();
        grads.cand_b += da_cand;
        VectorXd d_rh = params.cand_u.transpose() * da_cand;
        VectorXd d_reset = d_rh.cwiseProduct(step.h_prev);
        d_h_prev += d_rh.cwiseProduct(step.reset);
        VectorXd dx = params.cand_w.transpose() * da_cand;

        // Reset gate.
        VectorXd da_reset = d_reset.cwiseProduct(step.reset.cwiseProduct(one - step.reset));
        grads.reset_w += da_reset * x.transpose();
        grads.reset_u += da_reset * step.h_prev.transpose();
        grads.reset_b += da_reset;
        d_h_prev += params.reset_u.transpose() * da_reset;
        dx += params.reset_w.transpose() * da_reset;

        // Update gate.
        VectorXd da_update = d_update.cwiseProduct(step.update.cwiseProduct(one - step.update));
        grads.update_w += da_update * x.transpose();
        grads.update_u += da_update * step.h_prev.transpose();
        grads.update_b += da_update;
        d_h_prev += params.update_u.transpose() * da_update;
        dx += params.update_w.transpose() * da_update;

        d_inputs.row(step.sentence_index) += dx.transpose();
        carry = d_h_prev;
    }
}

bool all_finite(const TensorInfo& t) {
    for (Eigen::Index i = 0; i < t.size(); ++i) {
        if (!std::isfinite(t.data[i])) return false;
    }
    return true;
}

} // namespace

void ModelConfig::validate() const {
    if (vocab_size < corpus::kNumSpecialIds || embed_dim < 1 || attn_dim < 1 || heads < 1 ||
        max_sentences < 1 || max_tokens < 3 || ffn_width < 1) {
        throw Error(ErrorKind::InputShapeError, "model dimensions must be positive");
    }
    if (attn_dim % 2 != 0) {
        throw Error(ErrorKind::InputShapeError, "attn_dim must be even");
    }
    if (embed_dim % heads != 0) {
        throw Error(ErrorKind::InputShapeError, "embed_dim must be divisible by the head count");
    }
}

ParameterSet ParameterSet::zeros(const ModelConfig& cfg) {
    const int m = cfg.embed_dim;
    const int a = cfg.attn_dim;
    const int g = cfg.gru_hidden();
    const int f = cfg.ffn_width;

    ParameterSet p;
    p.embedding = MatrixXd::Zero(cfg.vocab_size, m);
    p.attn_query_w = p.attn_key_w = p.attn_value_w = p.attn_out_w = MatrixXd::Zero(m, m);
    p.attn_query_b = p.attn_key_b = p.attn_value_b = p.attn_out_b = VectorXd::Zero(m);
    p.ffn_in_w = MatrixXd::Zero(f, m);
    p.ffn_in_b = VectorXd::Zero(f);
    p.ffn_out_w = MatrixXd::Zero(m, f);
    p.ffn_out_b = VectorXd::Zero(m);
    p.ln1_gain = p.ln1_bias = p.ln2_gain = p.ln2_bias = VectorXd::Zero(m);

    for (GruParams* gp : {&p.gru_fwd, &p.gru_bwd}) {
        gp->update_w = gp->reset_w = gp->cand_w = MatrixXd::Zero(g, m);
        gp->update_u = gp->reset_u = gp->cand_u = MatrixXd::Zero(g, g);
        gp->update_b = gp->reset_b = gp->cand_b = VectorXd::Zero(g);
    }

    p.sent_attn_w = MatrixXd::Zero(a, a);
    p.sent_attn_b = VectorXd::Zero(a);
    p.sent_attn_u = VectorXd::Zero(a);
    p.head_w = VectorXd::Zero(a);
    p.head_b = 0.0;
    p.class_head_w = MatrixXd::Zero(3, a);
    p.class_head_b = VectorXd::Zero(3);
    p.pool_head_w = VectorXd::Zero(m);
    p.pool_head_b = 0.0;
    p.pool_class_w = MatrixXd::Zero(3, m);
    p.pool_class_b = VectorXd::Zero(3);
    return p;
}

std::vector<TensorInfo> parameter_registry(ParameterSet& p) {
    std::vector<TensorInfo> reg;
    auto mat = [&reg](const char* name, MatrixXd& t, ParamGroup group) {
        reg.push_back({name, t.data(), t.rows(), t.cols(), group});
    };
    auto vec = [&reg](const char* name, VectorXd& t, ParamGroup group) {
        reg.push_back({name, t.data(), t.size(), 1, group});
    };
    auto scalar = [&reg](const char* name, double& t, ParamGroup group) {
        reg.push_back({name, &t, 1, 1, group});
    };

    mat("embedding", p.embedding, ParamGroup::Encoder);
    mat("attn_query_w", p.attn_query_w, ParamGroup::Encoder);
    vec("attn_query_b", p.attn_query_b, ParamGroup::Encoder);
    mat("attn_key_w", p.attn_key_w, ParamGroup::Encoder);
    vec("attn_key_b", p.attn_key_b, ParamGroup::Encoder);
    mat("attn_value_w", p.attn_value_w, ParamGroup::Encoder);
    vec("attn_value_b", p.attn_value_b, ParamGroup::Encoder);
    mat("attn_out_w", p.attn_out_w, ParamGroup::Encoder);
    vec("attn_out_b", p.attn_out_b, ParamGroup::Encoder);
    mat("ffn_in_w", p.ffn_in_w, ParamGroup::Encoder);
    vec("ffn_in_b", p.ffn_in_b, ParamGroup::Encoder);
    mat("ffn_out_w", p.ffn_out_w, ParamGroup::Encoder);
    vec("ffn_out_b", p.ffn_out_b, ParamGroup::Encoder);
    vec("ln1_gain", p.ln1_gain, ParamGroup::Encoder);
    vec("ln1_bias", p.ln1_bias, ParamGroup::Encoder);
    vec("ln2_gain", p.ln2_gain, ParamGroup::Encoder);
    vec("ln2_bias", p.ln2_bias, ParamGroup::Encoder);

    const char* dir_names[2] = {"gru_fwd", "gru_bwd"};
    GruParams* dirs[2] = {&p.gru_fwd, &p.gru_bwd};
    for (int i = 0; i < 2; ++i) {
        const std::string prefix = dir_names[i];
        GruParams& gp = *dirs[i];
        auto gmat = [&reg, &prefix](const char* name, MatrixXd& t) {
            reg.push_back({prefix + "." + name, t.data(), t.rows(), t.cols(), ParamGroup::Head});
        };
        auto gvec = [&reg, &prefix](const char* name, VectorXd& t) {
            reg.push_back({prefix + "." + name, t.data(), t.size(), 1, ParamGroup::Head});
        };
        gmat("update_w", gp.update_w);
        gmat("update_u", gp.update_u);
        gvec("update_b", gp.update_b);
        gmat("reset_w", gp.reset_w);
        gmat("reset_u", gp.reset_u);
        gvec("reset_b", gp.reset_b);
        gmat("cand_w", gp.cand_w);
        gmat("cand_u", gp.cand_u);
        gvec("cand_b", gp.cand_b);
    }

    mat("sent_attn_w", p.sent_attn_w, ParamGroup::Head);
    vec("sent_attn_b", p.sent_attn_b, ParamGroup::Head);
    vec("sent_attn_u", p.sent_attn_u, ParamGroup::Head);
    vec("head_w", p.head_w, ParamGroup::Head);
    scalar("head_b", p.head_b, ParamGroup::Head);
    mat("class_head_w", p.class_head_w, ParamGroup::Head);
    vec("class_head_b", p.class_head_b, ParamGroup::Head);
    vec("pool_head_w", p.pool_head_w, ParamGroup::Head);
    scalar("pool_head_b", p.pool_head_b, ParamGroup::Head);
    mat("pool_class_w", p.pool_class_w, ParamGroup::Head);
    vec("pool_class_b", p.pool_class_b, ParamGroup::Head);
    return reg;
}

std::vector<TensorInfo> parameter_registry(const ParameterSet& p) {
    return parameter_registry(const_cast<ParameterSet&>(p));
}

ModelState init_model(const ModelConfig& config) {
    config.validate();
    ModelState state;
    state.config = config;
    state.params = ParameterSet::zeros(config);

    Rng rng(config.seed);
    for (TensorInfo& t : parameter_registry(state.params)) {
        const bool is_weight = t.rows > 1 && t.cols > 1;
        const bool is_head_vector = t.name == "head_w" || t.name == "pool_head_w";
        if (is_weight || is_head_vector) {
            // fan_in = cols, fan_out = rows for out = W * in; head vectors map
            // their full width down to one output.
            const double fan_in = static_cast<double>(is_head_vector ? t.rows : t.cols);
            const double fan_out = is_head_vector ? 1.0 : static_cast<double>(t.rows);
            const double a = std::sqrt(6.0 / (fan_in + fan_out));
            for (Eigen::Index i = 0; i < t.size(); ++i) t.data[i] = rng.uniform(-a, a);
        } else if (t.name == "ln1_gain" || t.name == "ln2_gain") {
            for (Eigen::Index i = 0; i < t.size(); ++i) t.data[i] = 1.0;
        }
        // Biases and the sentence-attention vector U stay zero.
    }
    return state;
}

SentenceEncodeResult encode_sentence(const std::int32_t* ids, const std::uint8_t* mask,
                                     const ModelState& state) {
    SentenceCache cache = encode_sentence_compact(ids, mask, state, 0);
    const int l = state.config.max_tokens;
    SentenceEncodeResult result;
    result.cls_embedding = cache.output.row(0).transpose();
    result.word_attention = word_attention_from_cache(cache, l, state.config.heads);
    result.outputs = MatrixXd::Zero(l, state.config.embed_dim);
    for (std::size_t i = 0; i < cache.positions.size(); ++i) {
        result.outputs.row(cache.positions[i]) = cache.output.row(static_cast<Eigen::Index>(i));
    }
    return result;
}

VectorXd gru_cell(const VectorXd& x, const VectorXd& h_prev, const GruParams& params) {
    const auto hidden = params.update_b.size();
    if (params.update_w.cols() != x.size() || h_prev.size() != hidden) {
        throw Error(ErrorKind::InputShapeError, "gru_cell dimension mismatch");
    }
    const VectorXd z = (params.update_w * x + params.update_u * h_prev + params.update_b)
                           .unaryExpr([](double v) { return sigmoid(v); });
    const VectorXd r = (params.reset_w * x + params.reset_u * h_prev + params.reset_b)
                           .unaryExpr([](double v) { return sigmoid(v); });
    const VectorXd cand =
        (params.cand_w * x + params.cand_u * r.cwiseProduct(h_prev) + params.cand_b)
            .unaryExpr([](double v) { return std::tanh(v); });
    return z.cwiseProduct(h_prev) + (VectorXd::Ones(hidden) - z).cwiseProduct(cand);
}

MatrixXd context_encode(const MatrixXd& sentence_embeddings,
                        const std::vector<std::uint8_t>& sentence_mask, const ModelState& state) {
    const int hidden = state.config.gru_hidden();
    const auto L = sentence_embeddings.rows();
    std::vector<int> order;
    for (Eigen::Index s = 0; s < L; ++s) {
        if (sentence_mask[static_cast<std::size_t>(s)] != 0) order.push_back(static_cast<int>(s));
    }
    std::vector<int> rev(order.rbegin(), order.rend());

    const GruRun fwd = run_gru(sentence_embeddings, order, state.params.gru_fwd, hidden);
    const GruRun bwd = run_gru(sentence_embeddings, rev, state.params.gru_bwd, hidden);

    MatrixXd h = MatrixXd::Zero(L, state.config.attn_dim);
    for (const GruStepCache& step : fwd.steps) h.row(step.sentence_index).head(hidden) = step.h;
    for (const GruStepCache& step : bwd.steps) h.row(step.sentence_index).tail(hidden) = step.h;
    return h;
}

VectorXd sentence_attention(const MatrixXd& context, const std::vector<std::uint8_t>& sentence_mask,
                            const ModelState& state) {
    const auto L = context.rows();
    std::vector<int> unmasked;
    for (Eigen::Index s = 0; s < L; ++s) {
        if (sentence_mask[static_cast<std::size_t>(s)] != 0) unmasked.push_back(static_cast<int>(s));
    }
    if (unmasked.empty()) {
        throw Error(ErrorKind::EmptyDocument, "no unmasked sentences for attention");
    }
    VectorXd scores(static_cast<Eigen::Index>(unmasked.size()));
    for (std::size_t i = 0; i < unmasked.size(); ++i) {
        const VectorXd u =
            (state.params.sent_attn_w * context.row(unmasked[i]).transpose() + state.params.sent_attn_b)
                .unaryExpr([](double v) { return std::tanh(v); });
        scores(static_cast<Eigen::Index>(i)) = u.dot(state.params.sent_attn_u);
    }
    const double mx = scores.maxCoeff();
    VectorXd e = (scores.array() - mx).exp();
    e /= e.sum();

    VectorXd alpha = VectorXd::Zero(L);
    for (std::size_t i = 0; i < unmasked.size(); ++i) {
        alpha(unmasked[i]) = e(static_cast<Eigen::Index>(i));
    }
    return alpha;
}

VectorXd document_embedding(const VectorXd& alpha_s, const MatrixXd& context) {
    if (alpha_s.size() != context.rows()) {
        throw Error(ErrorKind::InputShapeError, "attention and context row counts differ");
    }
    return context.transpose() * alpha_s;
}

VectorXd pooled_document_embedding(const MatrixXd& token_outputs,
                                   const std::vector<std::uint8_t>& token_mask, PoolMode mode) {
    if (token_outputs.rows() != static_cast<Eigen::Index>(token_mask.size())) {
        throw Error(ErrorKind::InputShapeError, "token outputs and mask lengths differ");
    }
    const auto m = token_outputs.cols();
    VectorXd pooled = VectorXd::Zero(m);
    int count = 0;
    for (Eigen::Index i = 0; i < token_outputs.rows(); ++i) {
        if (token_mask[static_cast<std::size_t>(i)] == 0) continue;
        if (mode == PoolMode::Mean) {
            pooled += token_outputs.row(i).transpose();
        } else if (count == 0) {
            pooled = token_outputs.row(i).transpose();
        } else {
            pooled = pooled.cwiseMax(token_outputs.row(i).transpose());
        }
        ++count;
    }
    if (count == 0) throw Error(ErrorKind::EmptyDocument, "every token position is masked");
    if (mode == PoolMode::Mean) pooled /= static_cast<double>(count);
    return pooled;
}

double risk_logit(const VectorXd& d, const ModelState& state) {
    if (d.size() != state.params.head_w.size()) {
        throw Error(ErrorKind::InputShapeError, "document embedding width mismatch");
    }
    return state.params.head_w.dot(d) + state.params.head_b;
}

double document_score(double risk_logit_value, const Vector3d& class_logits, ScoreKind kind) {
    if (kind == ScoreKind::RiskLogit) return risk_logit_value;
    const double mx = class_logits.maxCoeff();
    Vector3d p = (class_logits.array() - mx).exp();
    p /= p.sum();
    return p(1) + 2.0 * p(2);
}

ForwardTrace forward(const corpus::EncodedDocument& doc, const ModelState& state, bool with_caches) {
    const ModelConfig& cfg = state.config;
    if (doc.max_sentences != cfg.max_sentences || doc.max_tokens != cfg.max_tokens) {
        throw Error(ErrorKind::InputShapeError, "document grid does not match model config");
    }
    const int L = cfg.max_sentences;
    const int l = cfg.max_tokens;
    const int hidden = cfg.gru_hidden();

    ForwardTrace trace;
    trace.sentence_embeddings = MatrixXd::Zero(L, cfg.embed_dim);
    trace.word_attention = MatrixXd::Zero(L, l);

    auto caches = std::make_shared<TraceCaches>();
    std::vector<int> order;
    for (int s = 0; s < L; ++s) {
        if (!doc.sentence_on(s)) continue;
        order.push_back(s);
        SentenceCache cache = encode_sentence_compact(
            doc.token_ids.data() + static_cast<std::size_t>(s) * l,
            doc.token_mask.data() + static_cast<std::size_t>(s) * l, state, s);
        trace.sentence_embeddings.row(s) = cache.output.row(0);
        trace.word_attention.row(s) = word_attention_from_cache(cache, l, cfg.heads).transpose();
        caches->sentences.push_back(std::move(cache));
    }
    if (order.empty()) {
        throw Error(ErrorKind::EmptyDocument, "document has no unmasked sentences");
    }

    std::vector<int> rev(order.rbegin(), order.rend());
    GruRun fwd = run_gru(trace.sentence_embeddings, order, state.params.gru_fwd, hidden);
    GruRun bwd = run_gru(trace.sentence_embeddings, rev, state.params.gru_bwd, hidden);
    trace.context = MatrixXd::Zero(L, cfg.attn_dim);
    for (const GruStepCache& step : fwd.steps) trace.context.row(step.sentence_index).head(hidden) = step.h;
    for (const GruStepCache& step : bwd.steps) trace.context.row(step.sentence_index).tail(hidden) = step.h;

    // Sentence attention with tanh-transform caches for the backward pass.
    const auto su = static_cast<Eigen::Index>(order.size());
    caches->sent_u.resize(su, cfg.attn_dim);
    caches->sent_scores.resize(su);
    for (Eigen::Index i = 0; i < su; ++i) {
        const VectorXd pre = state.params.sent_attn_w * trace.context.row(order[static_cast<std::size_t>(i)]).transpose() +
                             state.params.sent_attn_b;
        caches->sent_u.row(i) = pre.unaryExpr([](double v) { return std::tanh(v); }).transpose();
        caches->sent_scores(i) = caches->sent_u.row(i).dot(state.params.sent_attn_u.transpose());
    }
    const double mx = caches->sent_scores.maxCoeff();
    caches->alpha_compact = (caches->sent_scores.array() - mx).exp();
    caches->alpha_compact /= caches->alpha_compact.sum();

    trace.sentence_attention = VectorXd::Zero(L);
    for (Eigen::Index i = 0; i < su; ++i) {
        trace.sentence_attention(order[static_cast<std::size_t>(i)]) = caches->alpha_compact(i);
    }

    trace.document_embedding = document_embedding(trace.sentence_attention, trace.context);
    trace.risk_logit = risk_logit(trace.document_embedding, state);
    trace.class_logits =
        state.params.class_head_w * trace.document_embedding + state.params.class_head_b;

    if (with_caches) {
        caches->gru_fwd = std::move(fwd.steps);
        caches->gru_bwd = std::move(bwd.steps);
        trace.caches = std::move(caches);
    }
    return trace;
}

PooledTrace forward_pooled(const corpus::EncodedDocument& doc, const ModelState& state,
                           PoolMode mode, bool with_caches) {
    const ModelConfig& cfg = state.config;
    if (doc.max_sentences != cfg.max_sentences || doc.max_tokens != cfg.max_tokens) {
        throw Error(ErrorKind::InputShapeError, "document grid does not match model config");
    }
    const int m = cfg.embed_dim;

    PooledTrace trace;
    trace.mode = mode;
    auto caches = std::make_shared<std::vector<SentenceCache>>();
    VectorXd pooled = VectorXd::Zero(m);
    trace.argmax_sentence.assign(static_cast<std::size_t>(m), -1);
    trace.argmax_row.assign(static_cast<std::size_t>(m), -1);
    int count = 0;

    for (int s = 0; s < cfg.max_sentences; ++s) {
        if (!doc.sentence_on(s)) continue;
        SentenceCache cache = encode_sentence_compact(
            doc.token_ids.data() + static_cast<std::size_t>(s) * cfg.max_tokens,
            doc.token_mask.data() + static_cast<std::size_t>(s) * cfg.max_tokens, state, s);
        const int cache_idx = static_cast<int>(caches->size());
        for (Eigen::Index r = 0; r < cache.output.rows(); ++r) {
            if (mode == PoolMode::Mean) {
                pooled += cache.output.row(r).transpose();
            } else {
                for (int c = 0; c < m; ++c) {
                    if (count == 0 || cache.output(r, c) > pooled(c)) {
                        pooled(c) = cache.output(r, c);
                        trace.argmax_sentence[static_cast<std::size_t>(c)] = cache_idx;
                        trace.argmax_row[static_cast<std::size_t>(c)] = static_cast<int>(r);
                    }
                }
            }
            ++count;
        }
        caches->push_back(std::move(cache));
    }
    if (count == 0) throw Error(ErrorKind::EmptyDocument, "document has no unmasked tokens");
    if (mode == PoolMode::Mean) pooled /= static_cast<double>(count);

    trace.pooled = pooled;
    trace.token_count = count;
    trace.risk_logit = state.params.pool_head_w.dot(pooled) + state.params.pool_head_b;
    trace.class_logits = state.params.pool_class_w * pooled + state.params.pool_class_b;
    if (with_caches) trace.caches = std::move(caches);
    return trace;
}

ParameterSet backward(const std::vector<ForwardTrace>& traces, const std::vector<LogitGrad>& grads,
                      const ModelState& state) {
    if (traces.size() != grads.size()) {
        throw Error(ErrorKind::InputShapeError, "trace and gradient counts differ");
    }
    const ModelConfig& cfg = state.config;
    const ParameterSet& p = state.params;
    const int hidden = cfg.gru_hidden();
    ParameterSet g = ParameterSet::zeros(cfg);

    for (std::size_t t = 0; t < traces.size(); ++t) {
        const ForwardTrace& trace = traces[t];
        if (!trace.caches) {
            throw Error(ErrorKind::MissingTrace, "forward trace was produced without caches");
        }
        const TraceCaches& caches = *trace.caches;
        const LogitGrad& lg = grads[t];

        // Heads.
        VectorXd dd = lg.d_risk * p.head_w + p.class_head_w.transpose() * lg.d_class;
        g.head_w += lg.d_risk * trace.document_embedding;
        g.head_b += lg.d_risk;
        g.class_head_w += lg.d_class * trace.document_embedding.transpose();
        g.class_head_b += lg.d_class;

        // d = sum_s alpha_s h_s. Forward GRU steps visit the unmasked
        // sentences in document order, which is also the compact order.
        const auto su = caches.alpha_compact.size();
        std::vector<int> order(static_cast<std::size_t>(su));
        for (std::size_t i = 0; i < caches.gru_fwd.size(); ++i) {
            order[i] = caches.gru_fwd[i].sentence_index;
        }

        VectorXd d_alpha(su);
        MatrixXd d_context = MatrixXd::Zero(cfg.max_sentences, cfg.attn_dim);
        for (Eigen::Index i = 0; i < su; ++i) {
            const int s = order[static_cast<std::size_t>(i)];
            d_alpha(i) = dd.dot(trace.context.row(s));
            d_context.row(s) += caches.alpha_compact(i) * dd.transpose();
        }

        // Softmax over unmasked sentence scores.
        const double dot = caches.alpha_compact.dot(d_alpha);
        VectorXd d_scores = caches.alpha_compact.cwiseProduct((d_alpha.array() - dot).matrix());

        for (Eigen::Index i = 0; i < su; ++i) {
            const int s = order[static_cast<std::size_t>(i)];
            const VectorXd u = caches.sent_u.row(i).transpose();
            g.sent_attn_u += d_scores(i) * u;
            const VectorXd du = d_scores(i) * p.sent_attn_u;
            const VectorXd da = du.cwiseProduct((1.0 - u.array().square()).matrix());
            g.sent_attn_w += da * trace.context.row(s);
            g.sent_attn_b += da;
            d_context.row(s) += (p.sent_attn_w.transpose() * da).transpose();
        }

        // GRU BPTT, both directions.
        MatrixXd d_sentence = MatrixXd::Zero(cfg.max_sentences, cfg.embed_dim);
        {
            std::vector<VectorXd> d_steps(caches.gru_fwd.size());
            for (std::size_t i = 0; i < caches.gru_fwd.size(); ++i) {
                d_steps[i] = d_context.row(caches.gru_fwd[i].sentence_index).head(hidden).transpose();
            }
            gru_backward(caches.gru_fwd, trace.sentence_embeddings, p.gru_fwd, d_steps,
                         g.gru_fwd, d_sentence);
        }
        {
            std::vector<VectorXd> d_steps(caches.gru_bwd.size());
            for (std::size_t i = 0; i < caches.gru_bwd.size(); ++i) {
                d_steps[i] = d_context.row(caches.gru_bwd[i].sentence_index).tail(hidden).transpose();
            }
            gru_backward(caches.gru_bwd, trace.sentence_embeddings, p.gru_bwd, d_steps,
                         g.gru_bwd, d_sentence);
        }

        // Sentence encoder: the CLS output row receives the gradient.
        for (const SentenceCache& cache : caches.sentences) {
            MatrixXd d_out = MatrixXd::Zero(cache.output.rows(), cfg.embed_dim);
            d_out.row(0) = d_sentence.row(cache.sentence_index);
            encode_sentence_backward(cache, d_out, state, g);
        }
    }
    return g;
}

ParameterSet backward_pooled(const std::vector<PooledTrace>& traces,
                             const std::vector<LogitGrad>& grads, const ModelState& state) {
    if (traces.size() != grads.size()) {
        throw Error(ErrorKind::InputShapeError, "trace and gradient counts differ");
    }
    const ModelConfig& cfg = state.config;
    const ParameterSet& p = state.params;
    ParameterSet g = ParameterSet::zeros(cfg);

    for (std::size_t t = 0; t < traces.size(); ++t) {
        const PooledTrace& trace = traces[t];
        if (!trace.caches) {
            throw Error(ErrorKind::MissingTrace, "pooled trace was produced without caches");
        }
        const LogitGrad& lg = grads[t];

        VectorXd d_pooled = lg.d_risk * p.pool_head_w + p.pool_class_w.transpose() * lg.d_class;
        g.pool_head_w += lg.d_risk * trace.pooled;
        g.pool_head_b += lg.d_risk;
        g.pool_class_w += lg.d_class * trace.pooled.transpose();
        g.pool_class_b += lg.d_class;

        const auto& caches = *trace.caches;
        if (trace.mode == PoolMode::Mean) {
            const double inv = 1.0 / static_cast<double>(trace.token_count);
            for (const SentenceCache& cache : caches) {
                MatrixXd d_out = MatrixXd::Zero(cache.output.rows(), cfg.embed_dim);
                d_out.rowwise() += (d_pooled * inv).transpose();
                encode_sentence_backward(cache, d_out, state, g);
            }
        } else {
            std::vector<MatrixXd> d_outs(caches.size());
            for (std::size_t c = 0; c < caches.size(); ++c) {
                d_outs[c] = MatrixXd::Zero(caches[c].output.rows(), cfg.embed_dim);
            }
            for (int c = 0; c < cfg.embed_dim; ++c) {
                const int ci = trace.argmax_sentence[static_cast<std::size_t>(c)];
                const int r = trace.argmax_row[static_cast<std::size_t>(c)];
                d_outs[static_cast<std::size_t>(ci)](r, c) += d_pooled(c);
            }
            for (std::size_t c = 0; c < caches.size(); ++c) {
                encode_sentence_backward(caches[c], d_outs[c], state, g);
            }
        }
    }
    return g;
}

void sgd_step(ModelState& state, const ParameterSet& grads, double encoder_lr, double head_lr) {
    auto params = parameter_registry(state.params);
    auto gs = parameter_registry(grads);
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (!all_finite(gs[i])) {
            throw Error(ErrorKind::NonFiniteGradient, "non-finite gradient in " + gs[i].name);
        }
        const double lr = params[i].group == ParamGroup::Encoder ? encoder_lr : head_lr;
        for (Eigen::Index j = 0; j < params[i].size(); ++j) {
            params[i].data[j] -= lr * gs[i].data[j];
        }
    }
}

namespace {

constexpr char kCheckpointMagic[8] = {'R', 'R', 'C', 'K', 'P', 'T', '0', '1'};

template <typename T>
void write_pod(std::ostream& out, const T& value) {
    out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
    T value{};
    in.read(reinterpret_cast<char*>(&value), sizeof(T));
    return value;
}

} // namespace

void save_checkpoint(const ModelState& state, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorKind::IoError, "cannot write checkpoint to " + path);
    out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    const ModelConfig& c = state.config;
    for (std::int64_t v : {static_cast<std::int64_t>(c.vocab_size), static_cast<std::int64_t>(c.embed_dim),
                           static_cast<std::int64_t>(c.attn_dim), static_cast<std::int64_t>(c.heads),
                           static_cast<std::int64_t>(c.max_sentences), static_cast<std::int64_t>(c.max_tokens),
                           static_cast<std::int64_t>(c.ffn_width)}) {
        write_pod(out, v);
    }
    write_pod<std::uint64_t>(out, c.seed);

    const auto reg = parameter_registry(state.params);
    write_pod<std::uint64_t>(out, reg.size());
    for (const TensorInfo& t : reg) {
        write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(t.name.size()));
        out.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
        write_pod<std::int64_t>(out, static_cast<std::int64_t>(t.rows));
        write_pod<std::int64_t>(out, static_cast<std::int64_t>(t.cols));
        out.write(reinterpret_cast<const char*>(t.data),
                  static_cast<std::streamsize>(t.size() * sizeof(double)));
    }
    if (!out) throw Error(ErrorKind::IoError, "failed while writing checkpoint " + path);
}

ModelState load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::IoError, "cannot read checkpoint from " + path);
    char magic[sizeof(kCheckpointMagic)] = {};
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
        throw Error(ErrorKind::IoError, "unrecognized checkpoint header in " + path);
    }

    ModelConfig cfg;
    cfg.vocab_size = static_cast<int>(read_pod<std::int64_t>(in));
    cfg.embed_dim = static_cast<int>(read_pod<std::int64_t>(in));
    cfg.attn_dim = static_cast<int>(read_pod<std::int64_t>(in));
    cfg.heads = static_cast<int>(read_pod<std::int64_t>(in));
    cfg.max_sentences = static_cast<int>(read_pod<std::int64_t>(in));
    cfg.max_tokens = static_cast<int>(read_pod<std::int64_t>(in));
    cfg.ffn_width = static_cast<int>(read_pod<std::int64_t>(in));
    cfg.seed = read_pod<std::uint64_t>(in);
    cfg.validate();

    ModelState state;
    state.config = cfg;
    state.params = ParameterSet::zeros(cfg);
    auto reg = parameter_registry(state.params);

    const auto count = read_pod<std::uint64_t>(in);
    if (count != reg.size()) {
        throw Error(ErrorKind::IoError, "checkpoint tensor count does not match this build");
    }
    for (TensorInfo& t : reg) {
        const auto name_len = read_pod<std::uint32_t>(in);
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        const auto rows = read_pod<std::int64_t>(in);
        const auto cols = read_pod<std::int64_t>(in);
        if (name != t.name || rows != t.rows || cols != t.cols) {
            throw Error(ErrorKind::IoError, "checkpoint tensor " + name +
                                                " does not match expected shape for " + t.name);
        }
        in.read(reinterpret_cast<char*>(t.data),
                static_cast<std::streamsize>(t.size() * sizeof(double)));
    }
    if (!in) throw Error(ErrorKind::IoError, "truncated checkpoint in " + path);
    return state;
}

} // namespace riskrank::netcore
