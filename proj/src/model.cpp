#include "incline/model.hpp"

#include <cmath>
#include <sstream>

#include "incline/ioutil.hpp"
#include "incline/rng.hpp"

namespace incline {

namespace {

constexpr double kLnEps = 1e-5;
constexpr double kInitStddev = 0.02;
constexpr double kAdamBeta1 = 0.9;
constexpr double kAdamBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;

void validate_config(const ModelConfig& c) {
  auto bad = [](const std::string& msg) { throw Error(ErrorCode::InvalidConfig, msg); };
  if (c.vocab_size < 2) bad("vocab_size must be >= 2");
  if (c.d_model < 1) bad("d_model must be >= 1");
  if (c.n_layers < 1) bad("n_layers must be >= 1");
  if (c.n_heads < 1) bad("n_heads must be >= 1");
  if (c.d_model % c.n_heads != 0)
    bad("d_model " + std::to_string(c.d_model) + " not divisible by n_heads " +
        std::to_string(c.n_heads));
  if (c.d_ff < 1) bad("d_ff must be >= 1");
  if (c.max_seq_len < 1) bad("max_seq_len must be >= 1");
}

void validate_tokens(const ModelConfig& c, const std::vector<int>& tokens) {
  if (tokens.empty()) throw Error(ErrorCode::SequenceTooLong, "empty token sequence");
  if (tokens.size() > static_cast<size_t>(c.max_seq_len)) {
    throw Error(ErrorCode::SequenceTooLong,
                std::to_string(tokens.size()) + " tokens exceeds max_seq_len " +
                    std::to_string(c.max_seq_len));
  }
  for (int t : tokens) {
    if (t < 0 || t >= c.vocab_size) {
      throw Error(ErrorCode::TokenOutOfRange, "token id " + std::to_string(t));
    }
  }
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * 0.7071067811865475244)); }

double gelu_grad(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x * 0.7071067811865475244));
  const double pdf = std::exp(-0.5 * x * x) * 0.3989422804014326779;
  return cdf + x * pdf;
}

// out[t] = in[t] * w + b
DenseMatrix linear_rows(const DenseMatrix& in, const DenseMatrix& w, const DenseVector& b) {
  DenseMatrix out(in.rows, w.cols);
  for (size_t t = 0; t < in.rows; ++t) {
    for (size_t j = 0; j < w.cols; ++j) {
      double sum = b.empty() ? 0.0 : b[j];
      for (size_t i = 0; i < in.cols; ++i) sum += in.at(t, i) * w.at(i, j);
      out.at(t, j) = sum;
    }
  }
  return out;
}

struct LayerActs {
  DenseMatrix ln1_out, q, k, v, ctx, attn_out, x_attn, ln2_out, f1, gelu_out, ffn_out, x_out;
  DenseVector ln1_mean, ln1_rstd, ln2_mean, ln2_rstd;
  std::vector<DenseMatrix> att;  // one T x T row-stochastic matrix per head
};

struct Activations {
  DenseMatrix x0;
  std::vector<LayerActs> layers;
  DenseMatrix xf;
  DenseVector lnf_mean, lnf_rstd;
  DenseMatrix logits;
};

void layer_norm_rows(const DenseMatrix& in, const DenseVector& g, const DenseVector& b,
                     DenseMatrix& out, DenseVector& means, DenseVector& rstds) {
  const size_t d = in.cols;
  out = DenseMatrix(in.rows, d);
  means.assign(in.rows, 0.0);
  rstds.assign(in.rows, 0.0);
  for (size_t t = 0; t < in.rows; ++t) {
    double mean = 0.0;
    for (size_t i = 0; i < d; ++i) mean += in.at(t, i);
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (size_t i = 0; i < d; ++i) {
      const double c = in.at(t, i) - mean;
      var += c * c;
    }
    var /= static_cast<double>(d);
    const double rstd = 1.0 / std::sqrt(var + kLnEps);
    means[t] = mean;
    rstds[t] = rstd;
    for (size_t i = 0; i < d; ++i) out.at(t, i) = g[i] * ((in.at(t, i) - mean) * rstd) + b[i];
  }
}

// accumulates dx for one row; dg/db accumulate across calls
void layer_norm_backward_row(const DenseMatrix& x_in, size_t t, double mean, double rstd,
                             const DenseVector& g, const double* dout, double* dx_add,
                             DenseVector& dg, DenseVector& db) {
  const size_t d = x_in.cols;
  double m1 = 0.0, m2 = 0.0;
  std::vector<double> dxhat(d), xhat(d);
  for (size_t i = 0; i < d; ++i) {
    xhat[i] = (x_in.at(t, i) - mean) * rstd;
    dg[i] += dout[i] * xhat[i];
    db[i] += dout[i];
    dxhat[i] = dout[i] * g[i];
    m1 += dxhat[i];
    m2 += dxhat[i] * xhat[i];
  }
  m1 /= static_cast<double>(d);
  m2 /= static_cast<double>(d);
  for (size_t i = 0; i < d; ++i) dx_add[i] += rstd * (dxhat[i] - m1 - xhat[i] * m2);
}

// capture the pre-intervention vector, then let the hook rewrite the row
void touch_site(const SiteId& site, DenseMatrix& m, size_t pos, const InterventionHook* hook,
                bool count, TraceRecord* trace) {
  if (trace) {
    DenseVector v(m.cols);
    for (size_t i = 0; i < m.cols; ++i) v[i] = m.at(pos, i);
    trace->sites.emplace(site, std::move(v));
  }
  if (hook && hook->wants(site)) {
    DenseVector v(m.cols);
    for (size_t i = 0; i < m.cols; ++i) v[i] = m.at(pos, i);
    hook->apply(site, v, count);
    if (v.size() != m.cols) {
      throw Error(ErrorCode::DimMismatch, "intervention returned wrong dimension");
    }
    for (size_t i = 0; i < m.cols; ++i) m.at(pos, i) = v[i];
  }
}

void forward_impl(const ModelConfig& cfg, const ModelParams& p, const std::vector<int>& tokens,
                  const InterventionHook* hook, size_t hook_pos, bool count_hook,
                  Activations& acts, TraceRecord* trace) {
  validate_tokens(cfg, tokens);
  const size_t T = tokens.size();
  const size_t d = static_cast<size_t>(cfg.d_model);
  const size_t H = static_cast<size_t>(cfg.n_heads);
  const size_t hd = d / H;
  const double att_scale = 1.0 / std::sqrt(static_cast<double>(hd));

  acts.x0 = DenseMatrix(T, d);
  for (size_t t = 0; t < T; ++t) {
    const size_t tok = static_cast<size_t>(tokens[t]);
    for (size_t i = 0; i < d; ++i) acts.x0.at(t, i) = p.tok_emb.at(tok, i) + p.pos_emb.at(t, i);
  }
  touch_site({SiteKind::Embedding, 0}, acts.x0, hook_pos, hook, count_hook, trace);

  acts.layers.assign(static_cast<size_t>(cfg.n_layers), LayerActs{});
  const DenseMatrix* x = &acts.x0;
  for (int l = 0; l < cfg.n_layers; ++l) {
    LayerActs& a = acts.layers[static_cast<size_t>(l)];
    const LayerParams& lp = p.layers[static_cast<size_t>(l)];

    layer_norm_rows(*x, lp.ln1_g, lp.ln1_b, a.ln1_out, a.ln1_mean, a.ln1_rstd);
    a.q = linear_rows(a.ln1_out, lp.wq, lp.bq);
    a.k = linear_rows(a.ln1_out, lp.wk, lp.bk);
    a.v = linear_rows(a.ln1_out, lp.wv, lp.bv);

    a.att.assign(H, DenseMatrix(T, T));
    a.ctx = DenseMatrix(T, d);
    for (size_t h = 0; h < H; ++h) {
      const size_t off = h * hd;
      DenseMatrix& att = a.att[h];
      for (size_t t = 0; t < T; ++t) {
        double maxs = -1e300;
        std::vector<double> scores(t + 1);
        for (size_t j = 0; j <= t; ++j) {
          double s = 0.0;
          for (size_t c = 0; c < hd; ++c) s += a.q.at(t, off + c) * a.k.at(j, off + c);
          scores[j] = s * att_scale;
          maxs = std::max(maxs, scores[j]);
        }
        double denom = 0.0;
        for (size_t j = 0; j <= t; ++j) {
          scores[j] = std::exp(scores[j] - maxs);
          denom += scores[j];
        }
        for (size_t j = 0; j <= t; ++j) att.at(t, j) = scores[j] / denom;
        for (size_t c = 0; c < hd; ++c) {
          double sum = 0.0;
          for (size_t j = 0; j <= t; ++j) sum += att.at(t, j) * a.v.at(j, off + c);
          a.ctx.at(t, off + c) = sum;
        }
      }
    }

    a.attn_out = linear_rows(a.ctx, lp.wo, lp.bo);
    touch_site({SiteKind::AttnOutput, l}, a.attn_out, hook_pos, hook, count_hook, trace);

    a.x_attn = DenseMatrix(T, d);
    for (size_t i = 0; i < T * d; ++i) a.x_attn.data[i] = x->data[i] + a.attn_out.data[i];

    layer_norm_rows(a.x_attn, lp.ln2_g, lp.ln2_b, a.ln2_out, a.ln2_mean, a.ln2_rstd);
    a.f1 = linear_rows(a.ln2_out, lp.w1, lp.b1);
    a.gelu_out = DenseMatrix(T, a.f1.cols);
    for (size_t i = 0; i < a.f1.data.size(); ++i) a.gelu_out.data[i] = gelu(a.f1.data[i]);
    a.ffn_out = linear_rows(a.gelu_out, lp.w2, lp.b2);
    touch_site({SiteKind::FfnOutput, l}, a.ffn_out, hook_pos, hook, count_hook, trace);

    a.x_out = DenseMatrix(T, d);
    for (size_t i = 0; i < T * d; ++i) a.x_out.data[i] = a.x_attn.data[i] + a.ffn_out.data[i];
    touch_site({SiteKind::Hidden, l}, a.x_out, hook_pos, hook, count_hook, trace);

    x = &a.x_out;
  }

  layer_norm_rows(*x, p.lnf_g, p.lnf_b, acts.xf, acts.lnf_mean, acts.lnf_rstd);
  const size_t V = static_cast<size_t>(cfg.vocab_size);
  acts.logits = DenseMatrix(T, V);
  if (cfg.tied) {
    for (size_t t = 0; t < T; ++t)
      for (size_t v = 0; v < V; ++v) {
        double sum = 0.0;
        for (size_t i = 0; i < d; ++i) sum += acts.xf.at(t, i) * p.tok_emb.at(v, i);
        acts.logits.at(t, v) = sum;
      }
  } else {
    acts.logits = linear_rows(acts.xf, p.w_out, DenseVector{});
  }

  if (trace) {
    trace->last_logits.assign(V, 0.0);
    for (size_t v = 0; v < V; ++v) trace->last_logits[v] = acts.logits.at(hook_pos, v);
  }
}

// ===== initialization =====

ModelParams init_params(const ModelConfig& c) {
  CounterRng rng(derive_seed(c.seed, 0x6d6f64656cull));  // independent stream per model
  auto fill = [&rng](DenseMatrix& m, size_t rows, size_t cols) {
    m = DenseMatrix(rows, cols);
    for (double& v : m.data) v = rng.normal(0.0, kInitStddev);
  };
  const size_t V = static_cast<size_t>(c.vocab_size);
  const size_t d = static_cast<size_t>(c.d_model);
  const size_t F = static_cast<size_t>(c.d_ff);

  ModelParams p;
  fill(p.tok_emb, V, d);
  fill(p.pos_emb, static_cast<size_t>(c.max_seq_len), d);
  p.layers.resize(static_cast<size_t>(c.n_layers));
  for (auto& l : p.layers) {
    l.ln1_g.assign(d, 1.0);
    l.ln1_b.assign(d, 0.0);
    fill(l.wq, d, d);
    fill(l.wk, d, d);
    fill(l.wv, d, d);
    fill(l.wo, d, d);
    l.bq.assign(d, 0.0);
    l.bk.assign(d, 0.0);
    l.bv.assign(d, 0.0);
    l.bo.assign(d, 0.0);
    l.ln2_g.assign(d, 1.0);
    l.ln2_b.assign(d, 0.0);
    fill(l.w1, d, F);
    l.b1.assign(F, 0.0);
    fill(l.w2, F, d);
    l.b2.assign(d, 0.0);
  }
  p.lnf_g.assign(d, 1.0);
  p.lnf_b.assign(d, 0.0);
  if (!c.tied) fill(p.w_out, d, V);
  return p;
}

// ===== gradients =====

ModelParams zero_like(const ModelConfig& c) {
  ModelParams p = init_params(c);
  auto clear = [](std::vector<double>& v) { std::fill(v.begin(), v.end(), 0.0); };
  clear(p.tok_emb.data);
  clear(p.pos_emb.data);
  for (auto& l : p.layers) {
    clear(l.ln1_g);
    clear(l.ln1_b);
    clear(l.wq.data);
    clear(l.wk.data);
    clear(l.wv.data);
    clear(l.wo.data);
    clear(l.bq);
    clear(l.bk);
    clear(l.bv);
    clear(l.bo);
    clear(l.ln2_g);
    clear(l.ln2_b);
    clear(l.w1.data);
    clear(l.b1);
    clear(l.w2.data);
    clear(l.b2);
  }
  clear(p.lnf_g);
  clear(p.lnf_b);
  clear(p.w_out.data);
  return p;
}

std::vector<std::vector<double>*> tensor_list(ModelParams& p, bool tied) {
  std::vector<std::vector<double>*> out;
  out.push_back(&p.tok_emb.data);
  out.push_back(&p.pos_emb.data);
  for (auto& l : p.layers) {
    out.push_back(&l.ln1_g);
    out.push_back(&l.ln1_b);
    out.push_back(&l.wq.data);
    out.push_back(&l.bq);
    out.push_back(&l.wk.data);
    out.push_back(&l.bk);
    out.push_back(&l.wv.data);
    out.push_back(&l.bv);
    out.push_back(&l.wo.data);
    out.push_back(&l.bo);
    out.push_back(&l.ln2_g);
    out.push_back(&l.ln2_b);
    out.push_back(&l.w1.data);
    out.push_back(&l.b1);
    out.push_back(&l.w2.data);
    out.push_back(&l.b2);
  }
  out.push_back(&p.lnf_g);
  out.push_back(&p.lnf_b);
  if (!tied) out.push_back(&p.w_out.data);
  return out;
}

// Cross-entropy at one position; accumulates parameter gradients scaled by
// loss_scale and returns the unscaled loss.
double backward_impl(const ModelConfig& cfg, const ModelParams& p, const std::vector<int>& tokens,
                     const Activations& acts, int answer_pos, int gold, double loss_scale,
                     ModelParams& g) {
  const size_t T = tokens.size();
  const size_t d = static_cast<size_t>(cfg.d_model);
  const size_t V = static_cast<size_t>(cfg.vocab_size);
  const size_t H = static_cast<size_t>(cfg.n_heads);
  const size_t hd = d / H;
  const double att_scale = 1.0 / std::sqrt(static_cast<double>(hd));
  const size_t ap = static_cast<size_t>(answer_pos);

  // softmax cross-entropy at the answer position
  double maxl = -1e300;
  for (size_t v = 0; v < V; ++v) maxl = std::max(maxl, acts.logits.at(ap, v));
  double denom = 0.0;
  for (size_t v = 0; v < V; ++v) denom += std::exp(acts.logits.at(ap, v) - maxl);
  const double loss = std::log(denom) + maxl - acts.logits.at(ap, static_cast<size_t>(gold));

  std::vector<double> dlog(V);
  for (size_t v = 0; v < V; ++v) {
    const double prob = std::exp(acts.logits.at(ap, v) - maxl) / denom;
    dlog[v] = (prob - (v == static_cast<size_t>(gold) ? 1.0 : 0.0)) * loss_scale;
  }

  DenseMatrix dxf(T, d);
  if (cfg.tied) {
    for (size_t v = 0; v < V; ++v) {
      for (size_t i = 0; i < d; ++i) {
        g.tok_emb.at(v, i) += dlog[v] * acts.xf.at(ap, i);
        dxf.at(ap, i) += dlog[v] * p.tok_emb.at(v, i);
      }
    }
  } else {
    for (size_t i = 0; i < d; ++i) {
      double sum = 0.0;
      for (size_t v = 0; v < V; ++v) {
        g.w_out.at(i, v) += acts.xf.at(ap, i) * dlog[v];
        sum += dlog[v] * p.w_out.at(i, v);
      }
      dxf.at(ap, i) = sum;
    }
  }

  // final layer norm; its input is the last block's residual stream
  const DenseMatrix& x_last = acts.layers.back().x_out;
  DenseMatrix dx(T, d);
  for (size_t t = 0; t < T; ++t) {
    layer_norm_backward_row(x_last, t, acts.lnf_mean[t], acts.lnf_rstd[t], p.lnf_g,
                            &dxf.data[t * d], &dx.data[t * d], g.lnf_g, g.lnf_b);
  }

  for (int l = cfg.n_layers - 1; l >= 0; --l) {
    const LayerActs& a = acts.layers[static_cast<size_t>(l)];
    const LayerParams& lp = p.layers[static_cast<size_t>(l)];
    LayerParams& lg = g.layers[static_cast<size_t>(l)];
    const DenseMatrix& x_in = (l == 0) ? acts.x0 : acts.layers[static_cast<size_t>(l - 1)].x_out;
    const size_t F = static_cast<size_t>(cfg.d_ff);

    // x_out = x_attn + ffn_out: dx feeds both branches
    // ffn_out = gelu(f1) * w2 + b2
    DenseMatrix df1(T, F);
    for (size_t t = 0; t < T; ++t) {
      for (size_t i = 0; i < F; ++i) {
        double dg_sum = 0.0;
        for (size_t j = 0; j < d; ++j) dg_sum += dx.at(t, j) * lp.w2.at(i, j);
        df1.at(t, i) = dg_sum * gelu_grad(a.f1.at(t, i));
      }
    }
    for (size_t i = 0; i < F; ++i)
      for (size_t j = 0; j < d; ++j) {
        double sum = 0.0;
        for (size_t t = 0; t < T; ++t) sum += a.gelu_out.at(t, i) * dx.at(t, j);
        lg.w2.at(i, j) += sum;
      }
    for (size_t j = 0; j < d; ++j) {
      double sum = 0.0;
      for (size_t t = 0; t < T; ++t) sum += dx.at(t, j);
      lg.b2[j] += sum;
    }
    DenseMatrix dln2(T, d);
    for (size_t t = 0; t < T; ++t)
      for (size_t i = 0; i < d; ++i) {
        double sum = 0.0;
        for (size_t f = 0; f < F; ++f) sum += df1.at(t, f) * lp.w1.at(i, f);
        dln2.at(t, i) = sum;
      }
    for (size_t i = 0; i < d; ++i)
      for (size_t f = 0; f < F; ++f) {
        double sum = 0.0;
        for (size_t t = 0; t < T; ++t) sum += a.ln2_out.at(t, i) * df1.at(t, f);
        lg.w1.at(i, f) += sum;
      }
    for (size_t f = 0; f < F; ++f) {
      double sum = 0.0;
      for (size_t t = 0; t < T; ++t) sum += df1.at(t, f);
      lg.b1[f] += sum;
    }

    // dx_attn = dx (residual) + ln2 backward contribution
    DenseMatrix dx_attn = dx;
    for (size_t t = 0; t < T; ++t) {
      layer_norm_backward_row(a.x_attn, t, a.ln2_mean[t], a.ln2_rstd[t], lp.ln2_g,
                              &dln2.data[t * d], &dx_attn.data[t * d], lg.ln2_g, lg.ln2_b);
    }

    // x_attn = x_in + attn_out; attn_out = ctx * wo + bo
    DenseMatrix dctx(T, d);
    for (size_t t = 0; t < T; ++t)
      for (size_t i = 0; i < d; ++i) {
        double sum = 0.0;
        for (size_t j = 0; j < d; ++j) sum += dx_attn.at(t, j) * lp.wo.at(i, j);
        dctx.at(t, i) = sum;
      }
    for (size_t i = 0; i < d; ++i)
      for (size_t j = 0; j < d; ++j) {
        double sum = 0.0;
        for (size_t t = 0; t < T; ++t) sum += a.ctx.at(t, i) * dx_attn.at(t, j);
        lg.wo.at(i, j) += sum;
      }
    for (size_t j = 0; j < d; ++j) {
      double sum = 0.0;
      for (size_t t = 0; t < T; ++t) sum += dx_attn.at(t, j);
      lg.bo[j] += sum;
    }

    DenseMatrix dq(T, d), dk(T, d), dv(T, d);
    for (size_t h = 0; h < H; ++h) {
      const size_t off = h * hd;
      const DenseMatrix& att = a.att[h];
      for (size_t t = 0; t < T; ++t) {
        std::vector<double> dp(t + 1, 0.0);
        for (size_t j = 0; j <= t; ++j) {
          double sum = 0.0;
          for (size_t c = 0; c < hd; ++c) sum += dctx.at(t, off + c) * a.v.at(j, off + c);
          dp[j] = sum;
        }
        double dsum = 0.0;
        for (size_t j = 0; j <= t; ++j) dsum += att.at(t, j) * dp[j];
        for (size_t j = 0; j <= t; ++j) {
          const double ds = att.at(t, j) * (dp[j] - dsum) * att_scale;
          for (size_t c = 0; c < hd; ++c) {
            dq.at(t, off + c) += ds * a.k.at(j, off + c);
            dk.at(j, off + c) += ds * a.q.at(t, off + c);
            dv.at(j, off + c) += att.at(t, j) * dctx.at(t, off + c);
          }
        }
      }
    }

    DenseMatrix dln1(T, d);
    auto proj_back = [&](const DenseMatrix& dout, const DenseMatrix& w, DenseMatrix& wgrad,
                         DenseVector& bgrad) {
      for (size_t t = 0; t < T; ++t)
        for (size_t i = 0; i < d; ++i) {
          double sum = 0.0;
          for (size_t j = 0; j < d; ++j) sum += dout.at(t, j) * w.at(i, j);
          dln1.at(t, i) += sum;
        }
      for (size_t i = 0; i < d; ++i)
        for (size_t j = 0; j < d; ++j) {
          double sum = 0.0;
          for (size_t t = 0; t < T; ++t) sum += a.ln1_out.at(t, i) * dout.at(t, j);
          wgrad.at(i, j) += sum;
        }
      for (size_t j = 0; j < d; ++j) {
        double sum = 0.0;
        for (size_t t = 0; t < T; ++t) sum += dout.at(t, j);
        bgrad[j] += sum;
      }
    };
    proj_back(dq, lp.wq, lg.wq, lg.bq);
    proj_back(dk, lp.wk, lg.wk, lg.bk);
    proj_back(dv, lp.wv, lg.wv, lg.bv);

    DenseMatrix dx_in = dx_attn;  // residual pass-through
    for (size_t t = 0; t < T; ++t) {
      layer_norm_backward_row(x_in, t, a.ln1_mean[t], a.ln1_rstd[t], lp.ln1_g, &dln1.data[t * d],
                              &dx_in.data[t * d], lg.ln1_g, lg.ln1_b);
    }
    dx = std::move(dx_in);
  }

  for (size_t t = 0; t < T; ++t) {
    const size_t tok = static_cast<size_t>(tokens[t]);
    for (size_t i = 0; i < d; ++i) {
      g.tok_emb.at(tok, i) += dx.at(t, i);
      g.pos_emb.at(t, i) += dx.at(t, i);
    }
  }
  return loss;
}

const char* kCheckpointHeader = "toytx v1";

}  // namespace

const char* site_kind_name(SiteKind kind) {
  switch (kind) {
    case SiteKind::Embedding: return "emb";
    case SiteKind::AttnOutput: return "attn";
    case SiteKind::FfnOutput: return "ffn";
    case SiteKind::Hidden: return "hidden";
  }
  return "?";
}

SiteKind parse_site_kind(const std::string& name) {
  if (name == "emb") return SiteKind::Embedding;
  if (name == "attn") return SiteKind::AttnOutput;
  if (name == "ffn") return SiteKind::FfnOutput;
  if (name == "hidden") return SiteKind::Hidden;
  throw Error(ErrorCode::ParseError, "unknown site kind '" + name + "'");
}

ToyTransformer::ToyTransformer(const ModelConfig& config) : config_(config) {
  validate_config(config_);
  params = init_params(config_);
}

ForwardResult ToyTransformer::forward(const std::vector<int>& tokens,
                                      const InterventionHook* hook) const {
  Activations acts;
  ForwardResult result;
  forward_impl(config_, params, tokens, hook, tokens.size() - 1, true, acts, &result.trace);
  result.logits = std::move(acts.logits);
  return result;
}

std::vector<int> ToyTransformer::greedy_decode(const std::vector<int>& prompt, int max_new,
                                               const InterventionHook* hook) const {
  if (max_new < 0) throw Error(ErrorCode::InvalidArgument, "max_new must be >= 0");
  validate_tokens(config_, prompt);
  if (prompt.size() + static_cast<size_t>(max_new) > static_cast<size_t>(config_.max_seq_len)) {
    throw Error(ErrorCode::SequenceTooLong,
                "prompt + max_new exceeds max_seq_len " + std::to_string(config_.max_seq_len));
  }
  std::vector<int> tokens = prompt;
  std::vector<int> generated;
  const size_t hook_pos = prompt.size() - 1;
  for (int step = 0; step < max_new; ++step) {
    Activations acts;
    // later passes recompute the same intervened prefix; count only the first
    forward_impl(config_, params, tokens, hook, hook_pos, step == 0, acts, nullptr);
    const size_t last = tokens.size() - 1;
    int best = 0;
    double best_val = acts.logits.at(last, 0);
    for (int v = 1; v < config_.vocab_size; ++v) {
      const double val = acts.logits.at(last, static_cast<size_t>(v));
      if (val > best_val) {
        best_val = val;
        best = v;
      }
    }
    generated.push_back(best);
    tokens.push_back(best);
  }
  return generated;
}

std::string ToyTransformer::serialize() const {
  std::string out;
  out.reserve(1 << 20);
  out += kCheckpointHeader;
  out += '\n';
  out += "vocab_size " + std::to_string(config_.vocab_size) + "\n";
  out += "d_model " + std::to_string(config_.d_model) + "\n";
  out += "n_layers " + std::to_string(config_.n_layers) + "\n";
  out += "n_heads " + std::to_string(config_.n_heads) + "\n";
  out += "d_ff " + std::to_string(config_.d_ff) + "\n";
  out += "max_seq_len " + std::to_string(config_.max_seq_len) + "\n";
  out += "seed " + std::to_string(config_.seed) + "\n";
  out += std::string("tied ") + (config_.tied ? "1" : "0") + "\n";

  auto put_mat = [&out](const std::string& name, const DenseMatrix& m) {
    out += "tensor " + name + "\n";
    append_matrix(out, m);
  };
  auto put_vec = [&out](const std::string& name, const DenseVector& v) {
    out += "tensor " + name + "\n";
    DenseMatrix m(1, v.size());
    m.data = v;
    append_matrix(out, m);
  };

  put_mat("tok_emb", params.tok_emb);
  put_mat("pos_emb", params.pos_emb);
  for (int l = 0; l < config_.n_layers; ++l) {
    const LayerParams& lp = params.layers[static_cast<size_t>(l)];
    const std::string prefix = "layer" + std::to_string(l) + ".";
    put_vec(prefix + "ln1_g", lp.ln1_g);
    put_vec(prefix + "ln1_b", lp.ln1_b);
    put_mat(prefix + "wq", lp.wq);
    put_vec(prefix + "bq", lp.bq);
    put_mat(prefix + "wk", lp.wk);
    put_vec(prefix + "bk", lp.bk);
    put_mat(prefix + "wv", lp.wv);
    put_vec(prefix + "bv", lp.bv);
    put_mat(prefix + "wo", lp.wo);
    put_vec(prefix + "bo", lp.bo);
    put_vec(prefix + "ln2_g", lp.ln2_g);
    put_vec(prefix + "ln2_b", lp.ln2_b);
    put_mat(prefix + "w1", lp.w1);
    put_vec(prefix + "b1", lp.b1);
    put_mat(prefix + "w2", lp.w2);
    put_vec(prefix + "b2", lp.b2);
  }
  put_vec("lnf_g", params.lnf_g);
  put_vec("lnf_b", params.lnf_b);
  if (!config_.tied) put_mat("w_out", params.w_out);
  return out;
}

ToyTransformer ToyTransformer::deserialize(const std::string& text) {
  LineReader reader(text);
  std::string line;
  if (!reader.next(line) || line != kCheckpointHeader) {
    throw Error(ErrorCode::FormatVersionMismatch,
                "expected '" + std::string(kCheckpointHeader) + "' header");
  }

  ModelConfig cfg;
  for (const char* key : {"vocab_size", "d_model", "n_layers", "n_heads", "d_ff", "max_seq_len",
                          "seed", "tied"}) {
    if (!reader.next(line)) reader.fail("missing config key " + std::string(key));
    std::istringstream in(line);
    std::string name;
    long long value = 0;
    in >> name >> value;
    if (in.fail() || name != key) reader.fail("expected config key " + std::string(key));
    if (name == "vocab_size") cfg.vocab_size = static_cast<int>(value);
    else if (name == "d_model") cfg.d_model = static_cast<int>(value);
    else if (name == "n_layers") cfg.n_layers = static_cast<int>(value);
    else if (name == "n_heads") cfg.n_heads = static_cast<int>(value);
    else if (name == "d_ff") cfg.d_ff = static_cast<int>(value);
    else if (name == "max_seq_len") cfg.max_seq_len = static_cast<int>(value);
    else if (name == "seed") cfg.seed = static_cast<uint64_t>(value);
    else cfg.tied = value != 0;
  }

  ToyTransformer model(cfg);
  auto read_named = [&](const std::string& name, size_t rows, size_t cols) {
    if (!reader.next(line)) reader.fail("missing tensor " + name);
    if (line != "tensor " + name) reader.fail("expected tensor " + name + ", got '" + line + "'");
    DenseMatrix m = parse_matrix(reader);
    if (m.rows != rows || m.cols != cols) {
      reader.fail("tensor " + name + " has shape " + std::to_string(m.rows) + "x" +
                  std::to_string(m.cols) + ", expected " + std::to_string(rows) + "x" +
                  std::to_string(cols));
    }
    return m;
  };
  auto read_vec = [&](const std::string& name, size_t n) {
    return read_named(name, 1, n).data;
  };

  const size_t V = static_cast<size_t>(cfg.vocab_size);
  const size_t d = static_cast<size_t>(cfg.d_model);
  const size_t F = static_cast<size_t>(cfg.d_ff);
  model.params.tok_emb = read_named("tok_emb", V, d);
  model.params.pos_emb = read_named("pos_emb", static_cast<size_t>(cfg.max_seq_len), d);
  for (int l = 0; l < cfg.n_layers; ++l) {
    LayerParams& lp = model.params.layers[static_cast<size_t>(l)];
    const std::string prefix = "layer" + std::to_string(l) + ".";
    lp.ln1_g = read_vec(prefix + "ln1_g", d);
    lp.ln1_b = read_vec(prefix + "ln1_b", d);
    lp.wq = read_named(prefix + "wq", d, d);
    lp.bq = read_vec(prefix + "bq", d);
    lp.wk = read_named(prefix + "wk", d, d);
    lp.bk = read_vec(prefix + "bk", d);
    lp.wv = read_named(prefix + "wv", d, d);
    lp.bv = read_vec(prefix + "bv", d);
    lp.wo = read_named(prefix + "wo", d, d);
    lp.bo = read_vec(prefix + "bo", d);
    lp.ln2_g = read_vec(prefix + "ln2_g", d);
    lp.ln2_b = read_vec(prefix + "ln2_b", d);
    lp.w1 = read_named(prefix + "w1", d, F);
    lp.b1 = read_vec(prefix + "b1", F);
    lp.w2 = read_named(prefix + "w2", F, d);
    lp.b2 = read_vec(prefix + "b2", d);
  }
  model.params.lnf_g = read_vec("lnf_g", d);
  model.params.lnf_b = read_vec("lnf_b", d);
  if (!cfg.tied) model.params.w_out = read_named("w_out", d, V);
  if (reader.next(line)) reader.fail("trailing content after last tensor");
  return model;
}

void ToyTransformer::save(const std::string& path) const { write_file_atomic(path, serialize()); }

ToyTransformer ToyTransformer::load(const std::string& path) {
  return deserialize(read_file(path));
}

std::string ToyTransformer::digest() const { return digest_hex(serialize()); }

TrainResult train(const ToyTransformer& model, const std::vector<TrainItem>& data,
                  const TrainConfig& config) {
  if (config.steps < 0) throw Error(ErrorCode::InvalidConfig, "train: steps must be >= 0");
  if (config.batch_size < 1) throw Error(ErrorCode::InvalidConfig, "train: batch_size must be >= 1");
  if (!(config.lr > 0.0)) throw Error(ErrorCode::InvalidConfig, "train: lr must be > 0");
  if (data.empty()) throw Error(ErrorCode::InvalidDataset, "train: empty dataset");
  const ModelConfig& cfg = model.config();
  for (size_t i = 0; i < data.size(); ++i) {
    const TrainItem& item = data[i];
    validate_tokens(cfg, item.tokens);
    if (item.answer_position < 0 ||
        static_cast<size_t>(item.answer_position) >= item.tokens.size()) {
      throw Error(ErrorCode::InvalidDataset,
                  "train: item " + std::to_string(i) + " answer_position out of range");
    }
    if (item.gold < 0 || item.gold >= cfg.vocab_size) {
      throw Error(ErrorCode::InvalidDataset, "train: item " + std::to_string(i) + " gold token");
    }
  }

  TrainResult result{model, {}};
  ModelParams grads = zero_like(cfg);
  ModelParams adam_m = zero_like(cfg);
  ModelParams adam_v = zero_like(cfg);
  auto p_list = tensor_list(result.model.params, cfg.tied);
  auto g_list = tensor_list(grads, cfg.tied);
  auto m_list = tensor_list(adam_m, cfg.tied);
  auto v_list = tensor_list(adam_v, cfg.tied);

  const size_t n = data.size();
  const size_t batch = static_cast<size_t>(config.batch_size);
  result.losses.reserve(static_cast<size_t>(config.steps));

  for (int step = 0; step < config.steps; ++step) {
    for (auto* g : g_list) std::fill(g->begin(), g->end(), 0.0);
    double loss_sum = 0.0;
    for (size_t j = 0; j < batch; ++j) {
      const TrainItem& item = data[(static_cast<size_t>(step) * batch + j) % n];
      Activations acts;
      forward_impl(cfg, result.model.params, item.tokens, nullptr, item.tokens.size() - 1, false,
                   acts, nullptr);
      loss_sum += backward_impl(cfg, result.model.params, item.tokens, acts, item.answer_position,
                                item.gold, 1.0 / static_cast<double>(batch), grads);
    }
    result.losses.push_back(loss_sum / static_cast<double>(batch));

    const double t = static_cast<double>(step + 1);
    const double bc1 = 1.0 - std::pow(kAdamBeta1, t);
    const double bc2 = 1.0 - std::pow(kAdamBeta2, t);
    for (size_t ti = 0; ti < p_list.size(); ++ti) {
      std::vector<double>& param = *p_list[ti];
      std::vector<double>& grad = *g_list[ti];
      std::vector<double>& m1 = *m_list[ti];
      std::vector<double>& m2 = *v_list[ti];
      for (size_t i = 0; i < param.size(); ++i) {
        m1[i] = kAdamBeta1 * m1[i] + (1.0 - kAdamBeta1) * grad[i];
        m2[i] = kAdamBeta2 * m2[i] + (1.0 - kAdamBeta2) * grad[i] * grad[i];
        param[i] -= config.lr * (m1[i] / bc1) / (std::sqrt(m2[i] / bc2) + kAdamEps);
      }
    }
  }
  return result;
}

double training_loss(const ToyTransformer& model, const std::vector<TrainItem>& data) {
  if (data.empty()) throw Error(ErrorCode::InvalidDataset, "loss: empty dataset");
  const ModelConfig& cfg = model.config();
  ModelParams sink = zero_like(cfg);
  double total = 0.0;
  for (const TrainItem& item : data) {
    validate_tokens(cfg, item.tokens);
    Activations acts;
    forward_impl(cfg, model.params, item.tokens, nullptr, item.tokens.size() - 1, false, acts,
                 nullptr);
    total += backward_impl(cfg, model.params, item.tokens, acts, item.answer_position, item.gold,
                           0.0, sink);
  }
  return total / static_cast<double>(data.size());
}

ModelParams training_gradient(const ToyTransformer& model, const std::vector<TrainItem>& data,
                              double* loss) {
  if (data.empty()) throw Error(ErrorCode::InvalidDataset, "gradient: empty dataset");
  const ModelConfig& cfg = model.config();
  ModelParams grads = zero_like(cfg);
  const double scale = 1.0 / static_cast<double>(data.size());
  double total = 0.0;
  for (const TrainItem& item : data) {
    validate_tokens(cfg, item.tokens);
    Activations acts;
    forward_impl(cfg, model.params, item.tokens, nullptr, item.tokens.size() - 1, false, acts,
                 nullptr);
    total += backward_impl(cfg, model.params, item.tokens, acts, item.answer_position, item.gold,
                           scale, grads);
  }
  if (loss != nullptr) *loss = total * scale;
  return grads;
}

}  // namespace incline
