#include "gencrs/toylm.h"

#include <algorithm>
#include <cmath>
#include <limits>

#include <json.hpp>

#include "gencrs/binio.h"

namespace gencrs {

using nlohmann::json;

const char* policy_name(EmbeddingPolicy p) { return p == EmbeddingPolicy::kAll ? "all" : "new-only"; }

EmbeddingPolicy parse_policy(std::string_view s) {
  if (s == "all") return EmbeddingPolicy::kAll;
  if (s == "new-only") return EmbeddingPolicy::kNewTokensOnly;
  throw Error(ErrorCode::kInvalidArgument, "unknown embedding policy \"" + std::string(s) + "\"");
}

const char* optimizer_name(LmOptimizer o) { return o == LmOptimizer::kAdam ? "adam" : "sgd"; }

LmOptimizer parse_optimizer(std::string_view s) {
  if (s == "sgd") return LmOptimizer::kSgd;
  if (s == "adam") return LmOptimizer::kAdam;
  throw Error(ErrorCode::kInvalidArgument, "unknown optimizer \"" + std::string(s) + "\" (expected sgd or adam)");
}

void LmConfig::validate() const {
  auto bad = [](const std::string& what) { throw Error(ErrorCode::kInvalidArgument, "LmConfig: " + what); };
  if (vocab_size < 2) bad("vocab_size must be >= 2");
  if (base_vocab_size < 0 || base_vocab_size > vocab_size) bad("base_vocab_size must be in [0, vocab_size]");
  if (d_model < 1 || n_heads < 1 || d_model % n_heads != 0) bad("d_model must be a positive multiple of n_heads");
  if (n_layers < 1) bad("n_layers must be >= 1");
  if (context_len < 2) bad("context_len must be >= 2");
  if (!(learning_rate > 0.0)) bad("learning_rate must be > 0");
  if (weight_decay < 0.0) bad("weight_decay must be >= 0");
  if (batch_size < 1) bad("batch_size must be >= 1");
  if (steps < 0) bad("steps must be >= 0");
}

LmLayout LmLayout::make(const LmConfig& c) {
  const std::size_t d = static_cast<std::size_t>(c.d_model);
  LmLayout l;
  std::size_t off = 0;
  auto take = [&](std::size_t n) {
    const std::size_t at = off;
    off += n;
    return at;
  };
  l.wte = take(static_cast<std::size_t>(c.vocab_size) * d);
  l.wpe = take(static_cast<std::size_t>(c.context_len) * d);
  for (int i = 0; i < c.n_layers; ++i) {
    Layer y{};
    y.ln1_g = take(d);
    y.ln1_b = take(d);
    y.w_qkv = take(3 * d * d);
    y.b_qkv = take(3 * d);
    y.w_o = take(d * d);
    y.b_o = take(d);
    y.ln2_g = take(d);
    y.ln2_b = take(d);
    y.w_fc = take(4 * d * d);
    y.b_fc = take(4 * d);
    y.w_proj = take(4 * d * d);
    y.b_proj = take(d);
    l.layers.push_back(y);
  }
  l.lnf_g = take(d);
  l.lnf_b = take(d);
  l.total = off;
  return l;
}

// ---------------------------------------------------------------------------
// Kernels. Row-wise so the batched forward and the incremental state share the
// exact same arithmetic.

namespace {

constexpr double kLnEps = 1e-5;

double dot(const double* a, const double* b, int n) {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  int i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += a[i] * b[i];
    s1 += a[i + 1] * b[i + 1];
    s2 += a[i + 2] * b[i + 2];
    s3 += a[i + 3] * b[i + 3];
  }
  for (; i < n; ++i) s0 += a[i] * b[i];
  return (s0 + s1) + (s2 + s3);
}

void axpy(double alpha, const double* x, double* y, int n) {
  for (int i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void layernorm_row(const double* in, const double* g, const double* b, double* out, double* mean_out,
                   double* rstd_out, int d) {
  double mean = 0.0;
  for (int i = 0; i < d; ++i) mean += in[i];
  mean /= d;
  double var = 0.0;
  for (int i = 0; i < d; ++i) var += (in[i] - mean) * (in[i] - mean);
  var /= d;
  const double rstd = 1.0 / std::sqrt(var + kLnEps);
  for (int i = 0; i < d; ++i) out[i] = (in[i] - mean) * rstd * g[i] + b[i];
  if (mean_out) *mean_out = mean;
  if (rstd_out) *rstd_out = rstd;
}

void layernorm_row_backward(const double* dout, const double* in, const double* g, double mean, double rstd,
                            double* din, double* dg, double* db, int d) {
  double dnorm_mean = 0.0, dnorm_norm_mean = 0.0;
  for (int i = 0; i < d; ++i) {
    const double norm = (in[i] - mean) * rstd;
    const double dnorm = g[i] * dout[i];
    dnorm_mean += dnorm;
    dnorm_norm_mean += dnorm * norm;
  }
  dnorm_mean /= d;
  dnorm_norm_mean /= d;
  for (int i = 0; i < d; ++i) {
    const double norm = (in[i] - mean) * rstd;
    const double dnorm = g[i] * dout[i];
    db[i] += dout[i];
    dg[i] += norm * dout[i];
    din[i] += (dnorm - dnorm_mean - norm * dnorm_norm_mean) * rstd;
  }
}

// out[o] = b[o] + W[o] . in, W is out x in.
void linear_row(const double* in, const double* w, const double* b, double* out, int in_dim, int out_dim) {
  for (int o = 0; o < out_dim; ++o) out[o] = b[o] + dot(w + static_cast<std::size_t>(o) * in_dim, in, in_dim);
}

void linear_row_backward(const double* dout, const double* in, const double* w, double* din, double* dw, double* db,
                         int in_dim, int out_dim) {
  for (int o = 0; o < out_dim; ++o) {
    const double g = dout[o];
    if (g == 0.0) continue;
    db[o] += g;
    axpy(g, in, dw + static_cast<std::size_t>(o) * in_dim, in_dim);
    if (din) axpy(g, w + static_cast<std::size_t>(o) * in_dim, din, in_dim);
  }
}

// Causal attention for query position t over keys/values 0..t. keys and
// values are addressed with the given row stride. att receives H x (t+1)
// probabilities laid out with row stride att_stride.
void attend_row(const double* q, const double* keys, const double* values, std::size_t kv_stride, int t, int d,
                int heads, double* out, double* att, std::size_t att_stride) {
  const int hd = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  for (int h = 0; h < heads; ++h) {
    double* a = att + static_cast<std::size_t>(h) * att_stride;
    const double* qh = q + h * hd;
    double maxv = -std::numeric_limits<double>::infinity();
    for (int s = 0; s <= t; ++s) {
      a[s] = dot(qh, keys + s * kv_stride + h * hd, hd) * scale;
      maxv = std::max(maxv, a[s]);
    }
    double sum = 0.0;
    for (int s = 0; s <= t; ++s) {
      a[s] = std::exp(a[s] - maxv);
      sum += a[s];
    }
    const double inv = 1.0 / sum;
    for (int s = 0; s <= t; ++s) a[s] *= inv;
    double* oh = out + h * hd;
    std::fill(oh, oh + hd, 0.0);
    for (int s = 0; s <= t; ++s) axpy(a[s], values + s * kv_stride + h * hd, oh, hd);
  }
}

struct LayerActs {
  std::vector<double> x_in, ln1, mean1, rstd1, qkv, att, y, x_mid, ln2, mean2, rstd2, fc_pre, fc;
};

struct Acts {
  int T = 0;
  std::vector<LayerActs> layers;
  std::vector<double> x_final, lnf, meanf, rstdf;
};

void check_tokens(std::span<const int> tokens, const LmConfig& c) {
  if (static_cast<int>(tokens.size()) > c.context_len) {
    throw Error(ErrorCode::kInvalidArgument, "sequence of " + std::to_string(tokens.size()) +
                                                 " tokens exceeds context_len " + std::to_string(c.context_len));
  }
  for (int t : tokens) {
    if (t < 0 || t >= c.vocab_size)
      throw Error(ErrorCode::kInvalidArgument, "token id " + std::to_string(t) + " out of range");
  }
}

// Runs the body up to the final layer norm.
Acts forward_body(const LmConfig& c, const LmLayout& L, const std::vector<double>& p, std::span<const int> tokens) {
  const int T = static_cast<int>(tokens.size());
  const int d = c.d_model;
  const std::size_t Td = static_cast<std::size_t>(T) * d;
  Acts a;
  a.T = T;
  std::vector<double> x(Td);
  for (int t = 0; t < T; ++t) {
    const double* e = p.data() + L.wte + static_cast<std::size_t>(tokens[t]) * d;
    const double* pe = p.data() + L.wpe + static_cast<std::size_t>(t) * d;
    for (int i = 0; i < d; ++i) x[t * d + i] = e[i] + pe[i];
  }
  for (const auto& ly : L.layers) {
    LayerActs la;
    la.x_in = x;
    la.ln1.resize(Td);
    la.mean1.resize(T);
    la.rstd1.resize(T);
    la.qkv.resize(Td * 3);
    la.att.assign(static_cast<std::size_t>(c.n_heads) * T * T, 0.0);
    la.y.resize(Td);
    la.x_mid.resize(Td);
    la.ln2.resize(Td);
    la.mean2.resize(T);
    la.rstd2.resize(T);
    la.fc_pre.resize(Td * 4);
    la.fc.resize(Td * 4);
    for (int t = 0; t < T; ++t) {
      layernorm_row(&x[t * d], &p[ly.ln1_g], &p[ly.ln1_b], &la.ln1[t * d], &la.mean1[t], &la.rstd1[t], d);
      linear_row(&la.ln1[t * d], &p[ly.w_qkv], &p[ly.b_qkv], &la.qkv[t * 3 * d], d, 3 * d);
    }
    for (int t = 0; t < T; ++t) {
      attend_row(&la.qkv[t * 3 * d], &la.qkv[d], &la.qkv[2 * d], 3 * static_cast<std::size_t>(d), t, d, c.n_heads,
                 &la.y[t * d], &la.att[static_cast<std::size_t>(t) * T], static_cast<std::size_t>(T) * T);
    }
    std::vector<double> tmp(d), tmp4(4 * d);
    for (int t = 0; t < T; ++t) {
      linear_row(&la.y[t * d], &p[ly.w_o], &p[ly.b_o], tmp.data(), d, d);
      for (int i = 0; i < d; ++i) la.x_mid[t * d + i] = x[t * d + i] + tmp[i];
      layernorm_row(&la.x_mid[t * d], &p[ly.ln2_g], &p[ly.ln2_b], &la.ln2[t * d], &la.mean2[t], &la.rstd2[t], d);
      linear_row(&la.ln2[t * d], &p[ly.w_fc], &p[ly.b_fc], &la.fc_pre[t * 4 * d], d, 4 * d);
      for (int i = 0; i < 4 * d; ++i) {
        const double v = la.fc_pre[t * 4 * d + i];
        la.fc[t * 4 * d + i] = v > 0.0 ? v : 0.0;
      }
      linear_row(&la.fc[t * 4 * d], &p[ly.w_proj], &p[ly.b_proj], tmp.data(), 4 * d, d);
      for (int i = 0; i < d; ++i) x[t * d + i] = la.x_mid[t * d + i] + tmp[i];
    }
    a.layers.push_back(std::move(la));
  }
  a.x_final = std::move(x);
  a.lnf.resize(Td);
  a.meanf.resize(T);
  a.rstdf.resize(T);
  for (int t = 0; t < T; ++t) {
    layernorm_row(&a.x_final[t * d], &p[L.lnf_g], &p[L.lnf_b], &a.lnf[t * d], &a.meanf[t], &a.rstdf[t], d);
  }
  return a;
}

void output_row(const LmConfig& c, const LmLayout& L, const std::vector<double>& p, const double* h,
                std::vector<double>& out) {
  out.resize(static_cast<std::size_t>(c.vocab_size));
  for (int v = 0; v < c.vocab_size; ++v) out[v] = dot(h, &p[L.wte + static_cast<std::size_t>(v) * c.d_model], c.d_model);
}

void backward_body(const LmConfig& c, const LmLayout& L, const std::vector<double>& p, std::span<const int> tokens,
                   const Acts& a, std::vector<double> dlnf, std::vector<double>& g) {
  const int T = a.T;
  const int d = c.d_model;
  const int H = c.n_heads;
  const int hd = d / H;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  std::vector<double> dx(static_cast<std::size_t>(T) * d, 0.0);
  for (int t = 0; t < T; ++t) {
    layernorm_row_backward(&dlnf[t * d], &a.x_final[t * d], &p[L.lnf_g], a.meanf[t], a.rstdf[t], &dx[t * d],
                           &g[L.lnf_g], &g[L.lnf_b], d);
  }
  for (std::size_t li = L.layers.size(); li-- > 0;) {
    const auto& ly = L.layers[li];
    const auto& la = a.layers[li];
    // x_out = x_mid + proj(relu(fc(ln2(x_mid))))
    std::vector<double> dx_mid = dx;
    std::vector<double> dfc(4 * static_cast<std::size_t>(d));
    std::vector<double> dln2(static_cast<std::size_t>(T) * d, 0.0);
    for (int t = 0; t < T; ++t) {
      std::fill(dfc.begin(), dfc.end(), 0.0);
      linear_row_backward(&dx[t * d], &la.fc[t * 4 * d], &p[ly.w_proj], dfc.data(), &g[ly.w_proj], &g[ly.b_proj],
                          4 * d, d);
      for (int i = 0; i < 4 * d; ++i)
        if (la.fc_pre[t * 4 * d + i] <= 0.0) dfc[i] = 0.0;
      linear_row_backward(dfc.data(), &la.ln2[t * d], &p[ly.w_fc], &dln2[t * d], &g[ly.w_fc], &g[ly.b_fc], d, 4 * d);
      layernorm_row_backward(&dln2[t * d], &la.x_mid[t * d], &p[ly.ln2_g], la.mean2[t], la.rstd2[t], &dx_mid[t * d],
                             &g[ly.ln2_g], &g[ly.ln2_b], d);
    }
    // x_mid = x_in + o(attn(qkv(ln1(x_in))))
    std::vector<double> dx_in = dx_mid;
    std::vector<double> dy(static_cast<std::size_t>(T) * d, 0.0);
    for (int t = 0; t < T; ++t) {
      linear_row_backward(&dx_mid[t * d], &la.y[t * d], &p[ly.w_o], &dy[t * d], &g[ly.w_o], &g[ly.b_o], d, d);
    }
    std::vector<double> dqkv(static_cast<std::size_t>(T) * 3 * d, 0.0);
    std::vector<double> datt(static_cast<std::size_t>(T));
    for (int t = 0; t < T; ++t) {
      for (int h = 0; h < H; ++h) {
        const double* att = &la.att[(static_cast<std::size_t>(h) * T + t) * T];
        const double* dyh = &dy[t * d + h * hd];
        double sum = 0.0;
        for (int s = 0; s <= t; ++s) {
          const double* v = &la.qkv[s * 3 * d + 2 * d + h * hd];
          datt[s] = dot(dyh, v, hd);
          axpy(att[s], dyh, &dqkv[s * 3 * d + 2 * d + h * hd], hd);
          sum += att[s] * datt[s];
        }
        const double* q = &la.qkv[t * 3 * d + h * hd];
        for (int s = 0; s <= t; ++s) {
          const double ds = att[s] * (datt[s] - sum) * scale;
          if (ds == 0.0) continue;
          axpy(ds, &la.qkv[s * 3 * d + d + h * hd], &dqkv[t * 3 * d + h * hd], hd);
          axpy(ds, q, &dqkv[s * 3 * d + d + h * hd], hd);
        }
      }
    }
    std::vector<double> dln1(static_cast<std::size_t>(d));
    for (int t = 0; t < T; ++t) {
      std::fill(dln1.begin(), dln1.end(), 0.0);
      linear_row_backward(&dqkv[t * 3 * d], &la.ln1[t * d], &p[ly.w_qkv], dln1.data(), &g[ly.w_qkv], &g[ly.b_qkv], d,
                          3 * d);
      layernorm_row_backward(dln1.data(), &la.x_in[t * d], &p[ly.ln1_g], la.mean1[t], la.rstd1[t], &dx_in[t * d],
                             &g[ly.ln1_g], &g[ly.ln1_b], d);
    }
    dx = std::move(dx_in);
  }
  for (int t = 0; t < T; ++t) {
    axpy(1.0, &dx[t * d], &g[L.wte + static_cast<std::size_t>(tokens[t]) * d], d);
    axpy(1.0, &dx[t * d], &g[L.wpe + static_cast<std::size_t>(t) * d], d);
  }
}

}  // namespace

std::vector<double> log_softmax(std::span<const double> scores) {
  double maxv = -std::numeric_limits<double>::infinity();
  for (double s : scores) maxv = std::max(maxv, s);
  double sum = 0.0;
  for (double s : scores) sum += std::exp(s - maxv);
  const double lse = maxv + std::log(sum);
  std::vector<double> out(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) out[i] = scores[i] - lse;
  return out;
}

std::span<const int> truncate_context(std::span<const int> context, std::size_t target_len, int context_len) {
  if (target_len == 0) throw Error(ErrorCode::kInvalidArgument, "ntp_loss: empty target");
  // Inputs are context + targets minus the last target token.
  const long budget = static_cast<long>(context_len) - static_cast<long>(target_len) + 1;
  if (budget < 1) {
    throw Error(ErrorCode::kInvalidArgument, "target of " + std::to_string(target_len) +
                                                 " tokens does not fit context_len " + std::to_string(context_len));
  }
  if (context.empty()) throw Error(ErrorCode::kInvalidArgument, "ntp_loss: empty context");
  if (static_cast<long>(context.size()) <= budget) return context;
  return context.subspan(context.size() - static_cast<std::size_t>(budget));
}

// ---------------------------------------------------------------------------
// Model

LmModel::LmModel(const LmConfig& config) : config_(config), layout_(LmLayout::make(config)) {
  config.validate();
  params_.assign(layout_.total, 0.0);
  Rng rng(config.seed);
  const int d = config.d_model;
  const double emb = 0.02 * std::sqrt(3.0);  // uniform with std 0.02
  for (std::size_t i = 0; i < static_cast<std::size_t>(config.vocab_size) * d; ++i) params_[layout_.wte + i] = uniform(rng, -emb, emb);
  for (std::size_t i = 0; i < static_cast<std::size_t>(config.context_len) * d; ++i) params_[layout_.wpe + i] = uniform(rng, -emb, emb);
  auto fill = [&](std::size_t off, std::size_t n, int fan_in) {
    const double a = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (std::size_t i = 0; i < n; ++i) params_[off + i] = uniform(rng, -a, a);
  };
  const std::size_t dd = static_cast<std::size_t>(d) * d;
  for (const auto& ly : layout_.layers) {
    std::fill_n(params_.begin() + static_cast<std::ptrdiff_t>(ly.ln1_g), d, 1.0);
    std::fill_n(params_.begin() + static_cast<std::ptrdiff_t>(ly.ln2_g), d, 1.0);
    fill(ly.w_qkv, 3 * dd, d);
    fill(ly.w_o, dd, d);
    fill(ly.w_fc, 4 * dd, d);
    fill(ly.w_proj, 4 * dd, 4 * d);
  }
  std::fill_n(params_.begin() + static_cast<std::ptrdiff_t>(layout_.lnf_g), d, 1.0);
}

LmModel LmModel::from_params(const LmConfig& config, std::vector<double> params) {
  config.validate();
  LmModel m;
  m.config_ = config;
  m.layout_ = LmLayout::make(config);
  if (params.size() != m.layout_.total) {
    throw Error(ErrorCode::kMismatch, "LmModel: expected " + std::to_string(m.layout_.total) + " parameters, got " +
                                          std::to_string(params.size()));
  }
  m.params_ = std::move(params);
  return m;
}

std::vector<std::vector<double>> LmModel::logits(std::span<const int> tokens) const {
  check_tokens(tokens, config_);
  const Acts a = forward_body(config_, layout_, params_, tokens);
  std::vector<std::vector<double>> out(tokens.size());
  for (int t = 0; t < a.T; ++t) output_row(config_, layout_, params_, &a.lnf[t * config_.d_model], out[t]);
  return out;
}

namespace {

struct LossPass {
  std::vector<int> inputs;
  int first_loss_pos = 0;
};

LossPass loss_inputs(std::span<const int> context, std::span<const int> targets, const LmConfig& c) {
  const auto ctx = truncate_context(context, targets.size(), c.context_len);
  LossPass lp;
  lp.inputs.assign(ctx.begin(), ctx.end());
  lp.inputs.insert(lp.inputs.end(), targets.begin(), targets.end() - 1);
  lp.first_loss_pos = static_cast<int>(ctx.size()) - 1;
  check_tokens(lp.inputs, c);
  for (int t : targets) {
    if (t < 0 || t >= c.vocab_size)
      throw Error(ErrorCode::kInvalidArgument, "target id " + std::to_string(t) + " out of range");
  }
  return lp;
}

}  // namespace

std::vector<double> LmModel::target_logprobs(std::span<const int> context, std::span<const int> targets) const {
  const LossPass lp = loss_inputs(context, targets, config_);
  const Acts a = forward_body(config_, layout_, params_, lp.inputs);
  std::vector<double> out;
  std::vector<double> row;
  for (std::size_t j = 0; j < targets.size(); ++j) {
    const int t = lp.first_loss_pos + static_cast<int>(j);
    output_row(config_, layout_, params_, &a.lnf[t * config_.d_model], row);
    out.push_back(log_softmax(row)[targets[j]]);
  }
  return out;
}

double LmModel::ntp_loss(std::span<const int> context, std::span<const int> targets) const {
  const auto lps = target_logprobs(context, targets);
  double s = 0.0;
  for (double v : lps) s -= v;
  return s / static_cast<double>(lps.size());
}

double LmModel::ntp_loss_and_grad(std::span<const int> context, std::span<const int> targets,
                                  std::vector<double>& grad) const {
  if (grad.size() != params_.size()) grad.assign(params_.size(), 0.0);
  const LossPass lp = loss_inputs(context, targets, config_);
  const Acts a = forward_body(config_, layout_, params_, lp.inputs);
  const int d = config_.d_model;
  const double inv_m = 1.0 / static_cast<double>(targets.size());
  std::vector<double> dlnf(static_cast<std::size_t>(a.T) * d, 0.0);
  std::vector<double> row;
  double loss = 0.0;
  for (std::size_t j = 0; j < targets.size(); ++j) {
    const int t = lp.first_loss_pos + static_cast<int>(j);
    const double* h = &a.lnf[t * d];
    output_row(config_, layout_, params_, h, row);
    const auto lsm = log_softmax(row);
    loss -= lsm[targets[j]];
    for (int v = 0; v < config_.vocab_size; ++v) {
      double dl = std::exp(lsm[v]);
      if (v == targets[j]) dl -= 1.0;
      dl *= inv_m;
      const double* e = &params_[layout_.wte + static_cast<std::size_t>(v) * d];
      axpy(dl, e, &dlnf[t * d], d);
      axpy(dl, h, &grad[layout_.wte + static_cast<std::size_t>(v) * d], d);
    }
  }
  backward_body(config_, layout_, params_, lp.inputs, a, std::move(dlnf), grad);
  return loss * inv_m;
}

// ---------------------------------------------------------------------------
// Incremental state

LmState::LmState(const LmModel& model) : model_(&model) {
  keys_.resize(model.config().n_layers);
  values_.resize(model.config().n_layers);
}

const std::vector<double>& LmState::step(int token) {
  const LmConfig& c = model_->config();
  const LmLayout& L = model_->layout();
  const auto& p = model_->params();
  if (token < 0 || token >= c.vocab_size)
    throw Error(ErrorCode::kInvalidArgument, "token id " + std::to_string(token) + " out of range");
  if (pos_ >= c.context_len) throw Error(ErrorCode::kInvalidArgument, "decoding past context_len");
  const int d = c.d_model;
  const int t = pos_;
  std::vector<double> x(d), ln(d), qkv(3 * d), y(d), tmp(d), fc(4 * d), att(static_cast<std::size_t>(c.n_heads) * (t + 1));
  for (int i = 0; i < d; ++i)
    x[i] = p[L.wte + static_cast<std::size_t>(token) * d + i] + p[L.wpe + static_cast<std::size_t>(t) * d + i];
  for (std::size_t li = 0; li < L.layers.size(); ++li) {
    const auto& ly = L.layers[li];
    layernorm_row(x.data(), &p[ly.ln1_g], &p[ly.ln1_b], ln.data(), nullptr, nullptr, d);
    linear_row(ln.data(), &p[ly.w_qkv], &p[ly.b_qkv], qkv.data(), d, 3 * d);
    keys_[li].insert(keys_[li].end(), qkv.begin() + d, qkv.begin() + 2 * d);
    values_[li].insert(values_[li].end(), qkv.begin() + 2 * d, qkv.end());
    attend_row(qkv.data(), keys_[li].data(), values_[li].data(), static_cast<std::size_t>(d), t, d, c.n_heads,
               y.data(), att.data(), static_cast<std::size_t>(t + 1));
    linear_row(y.data(), &p[ly.w_o], &p[ly.b_o], tmp.data(), d, d);
    for (int i = 0; i < d; ++i) x[i] += tmp[i];
    layernorm_row(x.data(), &p[ly.ln2_g], &p[ly.ln2_b], ln.data(), nullptr, nullptr, d);
    linear_row(ln.data(), &p[ly.w_fc], &p[ly.b_fc], fc.data(), d, 4 * d);
    for (auto& v : fc) v = v > 0.0 ? v : 0.0;
    linear_row(fc.data(), &p[ly.w_proj], &p[ly.b_proj], tmp.data(), 4 * d, d);
    for (int i = 0; i < d; ++i) x[i] += tmp[i];
  }
  layernorm_row(x.data(), &p[L.lnf_g], &p[L.lnf_b], ln.data(), nullptr, nullptr, d);
  output_row(c, L, p, ln.data(), logits_);
  ++pos_;
  return logits_;
}

const std::vector<double>& LmState::feed(std::span<const int> tokens) {
  for (int t : tokens) step(t);
  return logits_;
}

// ---------------------------------------------------------------------------
// Training

double mean_ntp_loss(const LmModel& model, const std::vector<StructuredSample>& samples) {
  if (samples.empty()) return 0.0;
  double s = 0.0;
  for (const auto& smp : samples) s += model.ntp_loss(smp.context_tokens, smp.target_tokens);
  return s / static_cast<double>(samples.size());
}

LmModel train_lm(const LmConfig& config, const std::vector<StructuredSample>& samples, LmTrainLog* log) {
  if (samples.empty()) throw Error(ErrorCode::kInvalidArgument, "train_lm: no samples");
  LmModel model(config);
  const LmLayout& L = model.layout();
  Rng rng(config.seed ^ 0x5851f42d4c957f2dULL);
  if (log) log->initial_loss = mean_ntp_loss(model, samples);

  std::vector<std::size_t> order(samples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::size_t cursor = order.size();

  // Decay applies to embeddings and weight matrices, never to norms or biases.
  std::vector<char> decays(L.total, 0);
  auto mark = [&](std::size_t off, std::size_t n) { std::fill_n(decays.begin() + static_cast<std::ptrdiff_t>(off), n, 1); };
  const std::size_t d = static_cast<std::size_t>(config.d_model);
  mark(L.wte, static_cast<std::size_t>(config.vocab_size) * d);
  mark(L.wpe, static_cast<std::size_t>(config.context_len) * d);
  for (const auto& ly : L.layers) {
    mark(ly.w_qkv, 3 * d * d);
    mark(ly.w_o, d * d);
    mark(ly.w_fc, 4 * d * d);
    mark(ly.w_proj, 4 * d * d);
  }
  std::vector<char> frozen(L.total, 0);
  if (config.embedding_policy == EmbeddingPolicy::kNewTokensOnly) {
    std::fill_n(frozen.begin() + static_cast<std::ptrdiff_t>(L.wte), static_cast<std::size_t>(config.base_vocab_size) * d, 1);
  }

  std::vector<double> grad(L.total);
  auto& params = model.params();
  const double lr = config.learning_rate;
  const double decay = 1.0 - lr * config.weight_decay;
  const bool adam = config.optimizer == LmOptimizer::kAdam;
  std::vector<double> m1(adam ? L.total : 0), m2(adam ? L.total : 0);
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
  double b1t = 1.0, b2t = 1.0;
  for (int step = 0; step < config.steps; ++step) {
    std::fill(grad.begin(), grad.end(), 0.0);
    double batch_loss = 0.0;
    for (int b = 0; b < config.batch_size; ++b) {
      if (cursor == order.size()) {
        shuffle(order, rng);
        cursor = 0;
      }
      const auto& s = samples[order[cursor++]];
      batch_loss += model.ntp_loss_and_grad(s.context_tokens, s.target_tokens, grad);
    }
    batch_loss /= config.batch_size;
    if (!std::isfinite(batch_loss)) {
      throw Error(ErrorCode::kNonFinite, "train_lm: non-finite loss at step " + std::to_string(step));
    }
    if (log) log->step_loss.push_back(batch_loss);
    if (!adam) {
      const double scale = lr / config.batch_size;
      for (std::size_t i = 0; i < params.size(); ++i) {
        if (frozen[i]) continue;
        if (decays[i]) params[i] *= decay;
        params[i] -= scale * grad[i];
      }
      continue;
    }
    b1t *= kBeta1;
    b2t *= kBeta2;
    const double inv_b = 1.0 / config.batch_size;
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (frozen[i]) continue;
      const double g = grad[i] * inv_b;
      m1[i] = kBeta1 * m1[i] + (1.0 - kBeta1) * g;
      m2[i] = kBeta2 * m2[i] + (1.0 - kBeta2) * g * g;
      if (decays[i]) params[i] *= decay;
      params[i] -= lr * (m1[i] / (1.0 - b1t)) / (std::sqrt(m2[i] / (1.0 - b2t)) + kEps);
    }
  }
  if (log) log->final_loss = mean_ntp_loss(model, samples);
  return model;
}

// ---------------------------------------------------------------------------
// Checkpoint

namespace {

json lm_config_to_json(const LmConfig& c) {
  return {{"vocab_size", c.vocab_size},       {"base_vocab_size", c.base_vocab_size},
          {"d_model", c.d_model},             {"n_layers", c.n_layers},
          {"n_heads", c.n_heads},             {"context_len", c.context_len},
          {"learning_rate", c.learning_rate}, {"weight_decay", c.weight_decay},
          {"batch_size", c.batch_size},       {"steps", c.steps},
          {"seed", c.seed},                   {"embedding_policy", policy_name(c.embedding_policy)},
          {"optimizer", optimizer_name(c.optimizer)}};
}

LmConfig lm_config_from_json(const json& j) {
  LmConfig c;
  c.vocab_size = j.at("vocab_size");
  c.base_vocab_size = j.at("base_vocab_size");
  c.d_model = j.at("d_model");
  c.n_layers = j.at("n_layers");
  c.n_heads = j.at("n_heads");
  c.context_len = j.at("context_len");
  c.learning_rate = j.at("learning_rate");
  c.weight_decay = j.at("weight_decay");
  c.batch_size = j.at("batch_size");
  c.steps = j.at("steps");
  c.seed = j.at("seed");
  c.embedding_policy = parse_policy(j.at("embedding_policy").get<std::string>());
  c.optimizer = parse_optimizer(j.value("optimizer", std::string("sgd")));
  return c;
}

}  // namespace

std::string serialize_lm(const LmModel& model, const Tokenizer& tok) {
  if (tok.size() != model.config().vocab_size) {
    throw Error(ErrorCode::kMismatch, "save_lm: tokenizer size does not match the model vocabulary");
  }
  json header;
  header["config"] = lm_config_to_json(model.config());
  header["vocab_fingerprint"] = hex64(tok.fingerprint());
  header["vocab"] = tok.tokens();
  const std::string h = header.dump();
  ByteWriter w;
  w.bytes("GCLM");
  w.u32(static_cast<std::uint32_t>(h.size()));
  w.bytes(h);
  for (double v : model.params()) w.f64(v);
  return w.str();
}

void save_lm(const LmModel& model, const Tokenizer& tok, const std::string& path) {
  write_file(path, serialize_lm(model, tok));
}

LoadedLm load_lm(const std::string& path, const Tokenizer* expect) {
  const std::string data = read_file(path);
  ByteReader r(data, path);
  if (r.bytes(4) != "GCLM") throw Error(ErrorCode::kParse, path + ": not a language-model checkpoint");
  const std::uint32_t header_len = r.u32();
  LmConfig config;
  Tokenizer tok;
  std::string fingerprint;
  try {
    const auto header = json::parse(r.bytes(header_len));
    config = lm_config_from_json(header.at("config"));
    tok = Tokenizer::from_tokens(header.at("vocab").get<std::vector<std::string>>());
    fingerprint = header.at("vocab_fingerprint").get<std::string>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kParse, path + ": bad checkpoint header: " + e.what());
  }
  if (hex64(tok.fingerprint()) != fingerprint) throw Error(ErrorCode::kParse, path + ": vocabulary fingerprint mismatch");
  if (expect && expect->fingerprint() != tok.fingerprint()) {
    throw Error(ErrorCode::kMismatch, path + ": checkpoint was trained against a different vocabulary (" + fingerprint +
                                          " vs " + hex64(expect->fingerprint()) + ")");
  }
  const std::size_t total = LmLayout::make(config).total;
  if (r.remaining() != total * 8) throw Error(ErrorCode::kParse, path + ": parameter payload has the wrong size");
  std::vector<double> params(total);
  for (auto& v : params) {
    v = r.f64();
    if (!std::isfinite(v)) throw Error(ErrorCode::kNonFinite, path + ": non-finite parameter");
  }
  return {LmModel::from_params(config, std::move(params)), std::move(tok)};
}

}  // namespace gencrs
