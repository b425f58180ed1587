#include <cmath>
#include <stdexcept>

#include "editlab/kernels.hpp"
#include "editlab/model.hpp"
#include "model_internal.hpp"

namespace editlab {

namespace {

// y = x * inv_rms * scale; accumulates dx and (optionally) dscale.
void rms_norm_backward(const MatrixD& x, const Vec& inv_rms, std::span<const float> scale,
                       const MatrixD& dy, MatrixD& dx, std::vector<double>* dscale) {
  const std::size_t T = x.rows(), d = x.cols();
  const double inv_d = 1.0 / static_cast<double>(d);
  for (std::size_t t = 0; t < T; ++t) {
    const double r = inv_rms[t];
    double proj = 0.0;
    for (std::size_t i = 0; i < d; ++i) proj += static_cast<double>(scale[i]) * dy(t, i) * x(t, i);
    const double coef = proj * r * r * r * inv_d;
    for (std::size_t i = 0; i < d; ++i)
      dx(t, i) += static_cast<double>(scale[i]) * dy(t, i) * r - coef * x(t, i);
    if (dscale)
      for (std::size_t i = 0; i < d; ++i) (*dscale)[i] += dy(t, i) * x(t, i) * r;
  }
}

void attention_backward(const LayerTrace& lt, std::size_t n_heads, const MatrixD& dctx,
                        MatrixD& dq, MatrixD& dk, MatrixD& dv, std::vector<MatrixD>* dattention) {
  const std::size_t T = dctx.rows(), d = dctx.cols(), hd = d / n_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  dq = MatrixD(T, d);
  dk = MatrixD(T, d);
  dv = MatrixD(T, d);
  if (dattention) dattention->assign(n_heads, MatrixD(T, T));
  std::vector<double> da(T);
  for (std::size_t h = 0; h < n_heads; ++h) {
    const std::size_t off = h * hd;
    const MatrixD& A = lt.attention[h];
    for (std::size_t i = 0; i < T; ++i) {
      const double* g = dctx.row(i).data() + off;
      double weighted = 0.0;
      for (std::size_t j = 0; j <= i; ++j) {
        const double* vr = lt.v.row(j).data() + off;
        double s = 0.0;
        for (std::size_t e = 0; e < hd; ++e) s += g[e] * vr[e];
        da[j] = s;
        weighted += A(i, j) * s;
        double* dvr = dv.row(j).data() + off;
        for (std::size_t e = 0; e < hd; ++e) dvr[e] += A(i, j) * g[e];
      }
      if (dattention)
        for (std::size_t j = 0; j <= i; ++j) (*dattention)[h](i, j) = da[j];
      for (std::size_t j = 0; j <= i; ++j) {
        const double ds = A(i, j) * (da[j] - weighted) * scale;
        if (ds == 0.0) continue;
        const double* kr = lt.k.row(j).data() + off;
        const double* qr = lt.q.row(i).data() + off;
        double* dqr = dq.row(i).data() + off;
        double* dkr = dk.row(j).data() + off;
        for (std::size_t e = 0; e < hd; ++e) {
          dqr[e] += ds * kr[e];
          dkr[e] += ds * qr[e];
        }
      }
    }
  }
}

}  // namespace

BackwardResult backward(const ModelState& model, const ForwardTrace& trace,
                        const MatrixD& dlogits, const BackwardRequest& request) {
  const ArchSpec& arch = model.arch;
  const std::size_t T = trace.tokens.size(), d = arch.d_model;
  if (dlogits.rows() != T || dlogits.cols() != arch.vocab_size)
    throw std::invalid_argument("backward: dlogits shape mismatch");
  ParameterGrads* pg = request.params;

  BackwardResult result;
  if (request.attention) result.attention.resize(arch.n_layers);

  MatrixD dnormed(T, d);
  kernels::matmul_nn_acc(dlogits, model.unembedding, dnormed);
  if (pg) kernels::matmul_tn_acc(dlogits, trace.normed_final, pg->unembedding);

  MatrixD dh(T, d);
  const MatrixD& h_last = trace.layers.back().hidden_out;
  rms_norm_backward(h_last, trace.inv_rms_final, model.norm_final, dnormed, dh,
                    pg ? &pg->norm_final : nullptr);

  for (std::size_t l = arch.n_layers; l-- > 0;) {
    const auto& w = model.layers[l];
    const LayerTrace& lt = trace.layers[l];
    auto* lg = pg ? &pg->layers[l] : nullptr;

    if (trace.substituted && trace.substituted->first == l) {
      const std::size_t p = trace.substituted->second;
      result.substituted_hidden = Vec(dh.row(p).begin(), dh.row(p).end());
      std::fill(dh.row(p).begin(), dh.row(p).end(), 0.0);
    }

    // h_out = h_mid + mlp_proj * GELU(mlp_fc * norm(h_mid))
    MatrixD dmlp = dh;
    for (std::size_t t = 0; t < T; ++t)
      if (lt.adapter_hit[t]) std::fill(dmlp.row(t).begin(), dmlp.row(t).end(), 0.0);
    if (lg) kernels::matmul_tn_acc(dmlp, lt.keys, lg->mlp_proj);
    MatrixD dpre(T, arch.d_ff);
    kernels::matmul_nn_acc(dmlp, w.mlp_proj, dpre);
    for (std::size_t i = 0; i < dpre.size(); ++i)
      dpre.data()[i] *= detail::gelu_grad(lt.pre_activation.data()[i]);
    if (lg) kernels::matmul_tn_acc(dpre, lt.normed_mlp, lg->mlp_fc);
    MatrixD dnm(T, d);
    kernels::matmul_nn_acc(dpre, w.mlp_fc, dnm);
    MatrixD dmid = std::move(dh);
    rms_norm_backward(lt.hidden_mid, lt.inv_rms_mlp, w.norm_mlp, dnm, dmid,
                      lg ? &lg->norm_mlp : nullptr);

    // h_mid = h_in + wo * attention(norm(h_in))
    if (lg) kernels::matmul_tn_acc(dmid, lt.context, lg->wo);
    MatrixD dctx(T, d);
    kernels::matmul_nn_acc(dmid, w.wo, dctx);
    MatrixD dq, dk, dv;
    attention_backward(lt, arch.n_heads, dctx, dq, dk, dv,
                       request.attention ? &result.attention[l] : nullptr);
    if (lg) {
      kernels::matmul_tn_acc(dq, lt.normed_attn, lg->wq);
      kernels::matmul_tn_acc(dk, lt.normed_attn, lg->wk);
      kernels::matmul_tn_acc(dv, lt.normed_attn, lg->wv);
    }
    MatrixD dna(T, d);
    kernels::matmul_nn_acc(dq, w.wq, dna);
    kernels::matmul_nn_acc(dk, w.wk, dna);
    kernels::matmul_nn_acc(dv, w.wv, dna);
    dh = std::move(dmid);
    rms_norm_backward(lt.hidden_in, lt.inv_rms_attn, w.norm_attn, dna, dh,
                      lg ? &lg->norm_attn : nullptr);
  }

  if (pg) {
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t i = 0; i < d; ++i) {
        pg->token_embedding(trace.tokens[t], i) += dh(t, i);
        pg->position_embedding(t, i) += dh(t, i);
      }
  }
  return result;
}

std::vector<std::vector<MatrixD>> attention_saliency(const ModelState& model,
                                                     std::span<const TokenId> tokens,
                                                     std::span<const std::size_t> target_positions,
                                                     const MlpAdapter* adapter) {
  ForwardOptions opts;
  opts.trace = true;
  opts.adapter = adapter;
  const auto fr = forward(model, tokens, opts);
  const auto lg = cross_entropy_grad(fr.logits, tokens, target_positions);
  BackwardRequest req;
  req.attention = true;
  return backward(model, *fr.trace, lg.dlogits, req).attention;
}

HiddenLossGrad hidden_loss_grad(const ModelState& model, std::span<const TokenId> tokens,
                                const HiddenSubstitution& substitution,
                                std::span<const std::size_t> target_positions,
                                const MlpAdapter* adapter) {
  ForwardOptions opts;
  opts.trace = true;
  opts.adapter = adapter;
  opts.substitution = &substitution;
  auto fr = forward(model, tokens, opts);
  auto lg = cross_entropy_grad(fr.logits, tokens, target_positions);
  auto br = backward(model, *fr.trace, lg.dlogits, {});
  HiddenLossGrad out;
  out.loss = lg.loss;
  out.grad = std::move(*br.substituted_hidden);
  out.logits = std::move(fr.logits);
  return out;
}

Vec hidden_grad(const ModelState& model, std::span<const TokenId> tokens, std::size_t layer,
                std::size_t position, std::span<const double> injected,
                std::span<const std::size_t> target_positions, const MlpAdapter* adapter) {
  if (injected.size() != model.arch.d_model)
    throw std::invalid_argument("hidden_grad: injected vector has " +
                                std::to_string(injected.size()) + " entries, expected " +
                                std::to_string(model.arch.d_model));
  if (layer >= model.arch.n_layers) throw std::invalid_argument("hidden_grad: layer out of range");
  HiddenSubstitution sub{layer, position, Vec(injected.begin(), injected.end())};
  return hidden_loss_grad(model, tokens, sub, target_positions, adapter).grad;
}

}  // namespace editlab
