#include "gencrs/rqvae.h"

#include <cmath>
#include <limits>
#include <set>

#include <json.hpp>

#include "gencrs/binio.h"

namespace gencrs {

using nlohmann::json;

void RqVaeConfig::validate() const {
  auto bad = [](const std::string& what) { throw Error(ErrorCode::kInvalidArgument, "RqVaeConfig: " + what); };
  if (input_dim < 1) bad("input_dim must be >= 1");
  if (encoder_hidden_layers < 0) bad("encoder_hidden_layers must be >= 0");
  if (latent_dim < 1) bad("latent_dim must be >= 1");
  if (num_levels < 1) bad("num_levels must be >= 1");
  if (codebook_size < 2) bad("codebook_size must be >= 2");
  if (!(learning_rate > 0.0)) bad("learning_rate must be > 0");
  if (!(commitment_beta >= 0.0)) bad("commitment_beta must be >= 0");
  if (weight_decay < 0.0) bad("weight_decay must be >= 0");
  if (batch_size < 1) bad("batch_size must be >= 1");
  if (epochs < 0) bad("epochs must be >= 0");
}

// ---------------------------------------------------------------------------
// MLP

Mlp Mlp::make(const std::vector<int>& widths) {
  Mlp m;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    Linear l;
    l.in = widths[i];
    l.out = widths[i + 1];
    l.weight.assign(static_cast<std::size_t>(l.in) * l.out, 0.0);
    l.bias.assign(static_cast<std::size_t>(l.out), 0.0);
    m.layers.push_back(std::move(l));
  }
  return m;
}

namespace {

void linear_forward(const Linear& l, std::span<const double> x, std::vector<double>& y) {
  y.assign(l.bias.begin(), l.bias.end());
  for (int o = 0; o < l.out; ++o) {
    const double* w = l.weight.data() + static_cast<std::size_t>(o) * l.in;
    double acc = 0.0;
    for (int i = 0; i < l.in; ++i) acc += w[i] * x[i];
    y[o] += acc;
  }
}

// Inputs to every layer plus the final output; ReLU applied between layers.
struct MlpTrace {
  std::vector<std::vector<double>> inputs;
  std::vector<double> output;
};

MlpTrace mlp_trace(const Mlp& m, std::span<const double> x) {
  MlpTrace t;
  std::vector<double> cur(x.begin(), x.end());
  for (std::size_t li = 0; li < m.layers.size(); ++li) {
    t.inputs.push_back(cur);
    std::vector<double> y;
    linear_forward(m.layers[li], cur, y);
    if (li + 1 < m.layers.size()) {
      for (auto& v : y) v = v > 0.0 ? v : 0.0;
    }
    cur = std::move(y);
  }
  t.output = std::move(cur);
  return t;
}

// Accumulates parameter gradients into grad and returns dL/dx.
std::vector<double> mlp_backward(const Mlp& m, const MlpTrace& t, std::vector<double> dout, Mlp& grad) {
  for (std::size_t li = m.layers.size(); li-- > 0;) {
    const Linear& l = m.layers[li];
    Linear& g = grad.layers[li];
    const auto& in = t.inputs[li];
    std::vector<double> din(static_cast<std::size_t>(l.in), 0.0);
    for (int o = 0; o < l.out; ++o) {
      const double d = dout[o];
      if (d == 0.0) continue;
      g.bias[o] += d;
      const double* w = l.weight.data() + static_cast<std::size_t>(o) * l.in;
      double* gw = g.weight.data() + static_cast<std::size_t>(o) * l.in;
      for (int i = 0; i < l.in; ++i) {
        gw[i] += d * in[i];
        din[i] += d * w[i];
      }
    }
    if (li > 0) {
      // in is the ReLU output of the previous layer; zero where it was clipped.
      for (int i = 0; i < l.in; ++i) {
        if (in[i] <= 0.0) din[i] = 0.0;
      }
    }
    dout = std::move(din);
  }
  return dout;
}

}  // namespace

std::vector<double> Mlp::forward(std::span<const double> x) const { return mlp_trace(*this, x).output; }

// ---------------------------------------------------------------------------
// Model

RqVaeModel RqVaeModel::zeros_like() const {
  RqVaeModel g = *this;
  for (auto& b : g.buffers()) std::fill(b.values->begin(), b.values->end(), 0.0);
  return g;
}

std::vector<RqVaeModel::Buffer> RqVaeModel::buffers() {
  std::vector<Buffer> out;
  for (auto& l : encoder.layers) {
    out.push_back({&l.weight, true});
    out.push_back({&l.bias, false});
  }
  for (auto& l : decoder.layers) {
    out.push_back({&l.weight, true});
    out.push_back({&l.bias, false});
  }
  for (auto& c : codebooks) out.push_back({&c, false});
  return out;
}

std::size_t RqVaeModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto* m : {&encoder, &decoder})
    for (const auto& l : m->layers) n += l.weight.size() + l.bias.size();
  for (const auto& c : codebooks) n += c.size();
  return n;
}

bool RqVaeModel::all_finite() const {
  auto ok = [](const std::vector<double>& v) {
    for (double x : v)
      if (!std::isfinite(x)) return false;
    return true;
  };
  for (const auto* m : {&encoder, &decoder})
    for (const auto& l : m->layers)
      if (!ok(l.weight) || !ok(l.bias)) return false;
  for (const auto& c : codebooks)
    if (!ok(c)) return false;
  return true;
}

double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

QuantizationResult quantize(std::span<const double> z, const std::vector<std::vector<double>>& codebooks,
                            int codebook_size) {
  const std::size_t dim = z.size();
  QuantizationResult r;
  r.residuals.reserve(codebooks.size() + 1);
  r.residuals.emplace_back(z.begin(), z.end());
  r.quantized.assign(dim, 0.0);
  for (const auto& book : codebooks) {
    if (book.size() != dim * static_cast<std::size_t>(codebook_size)) {
      throw Error(ErrorCode::kMismatch, "quantize: latent dimension " + std::to_string(dim) +
                                            " does not match codebook shape");
    }
    const auto& res = r.residuals.back();
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (int k = 0; k < codebook_size; ++k) {
      const double d = squared_distance(res, std::span<const double>(book.data() + k * dim, dim));
      if (d < best_d) {
        best_d = d;
        best = k;
      }
    }
    r.codes.push_back(best);
    std::vector<double> next(dim);
    const double* c = book.data() + best * dim;
    for (std::size_t i = 0; i < dim; ++i) {
      next[i] = res[i] - c[i];
      r.quantized[i] += c[i];
    }
    r.residuals.push_back(std::move(next));
  }
  return r;
}

QuantizationResult quantize(std::span<const double> z, const RqVaeModel& model) {
  if (static_cast<int>(z.size()) != model.config.latent_dim) {
    throw Error(ErrorCode::kMismatch, "quantize: expected latent dimension " +
                                          std::to_string(model.config.latent_dim) + ", got " +
                                          std::to_string(z.size()));
  }
  return quantize(z, model.codebooks, model.config.codebook_size);
}

namespace {

LossParts loss_impl(std::span<const double> x, const RqVaeModel& model, RqVaeModel* grad) {
  if (static_cast<int>(x.size()) != model.config.input_dim) {
    throw Error(ErrorCode::kMismatch, "rqvae: expected input dimension " + std::to_string(model.config.input_dim) +
                                          ", got " + std::to_string(x.size()));
  }
  const int dim = model.config.latent_dim;
  const double beta = model.config.commitment_beta;
  const MlpTrace enc = mlp_trace(model.encoder, x);
  const QuantizationResult q = quantize(enc.output, model);
  // Straight-through: the decoder sees the quantized vector, gradients go to z.
  const MlpTrace dec = mlp_trace(model.decoder, q.quantized);

  LossParts parts;
  std::vector<double> dxhat(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double diff = dec.output[i] - x[i];
    parts.recon += diff * diff;
    dxhat[i] = 2.0 * diff;
  }
  for (int l = 0; l < model.config.num_levels; ++l) {
    const double d = squared_distance(q.residuals[l], model.codeword(l, q.codes[l]));
    parts.codebook += d;
    parts.commitment += beta * d;
  }
  if (!grad) return parts;

  std::vector<double> dz = mlp_backward(model.decoder, dec, std::move(dxhat), grad->decoder);
  for (int l = 0; l < model.config.num_levels; ++l) {
    const auto c = model.codeword(l, q.codes[l]);
    const auto& r = q.residuals[l];
    double* gc = grad->codebooks[l].data() + static_cast<std::size_t>(q.codes[l]) * dim;
    for (int i = 0; i < dim; ++i) {
      const double diff = r[i] - c[i];
      gc[i] += -2.0 * diff;
      // r^(l) = z - sum of earlier (stop-gradient) codewords, so dr/dz = I.
      dz[i] += 2.0 * beta * diff;
    }
  }
  mlp_backward(model.encoder, enc, std::move(dz), grad->encoder);
  return parts;
}

}  // namespace

LossParts loss(std::span<const double> x, const RqVaeModel& model) { return loss_impl(x, model, nullptr); }

LossParts loss_and_grad(std::span<const double> x, const RqVaeModel& model, RqVaeModel& grad) {
  return loss_impl(x, model, &grad);
}

std::vector<double> to_double(std::span<const float> row) { return {row.begin(), row.end()}; }

// ---------------------------------------------------------------------------
// Initialization

std::vector<double> kmeans(std::span<const double> points, int dim, int k, int iterations, Rng& rng) {
  const std::size_t n = points.size() / static_cast<std::size_t>(dim);
  if (n == 0) throw Error(ErrorCode::kInvalidArgument, "kmeans: no points");
  auto point = [&](std::size_t i) { return points.subspan(i * dim, dim); };

  std::set<std::vector<double>> distinct;
  for (std::size_t i = 0; i < n && distinct.size() < static_cast<std::size_t>(k); ++i) {
    auto p = point(i);
    distinct.emplace(p.begin(), p.end());
  }

  std::vector<double> centers(static_cast<std::size_t>(k) * dim);
  if (distinct.size() < static_cast<std::size_t>(k)) {
    // Too few distinct points for k clusters: resample with jitter so codewords stay distinct.
    double scale = 0.0;
    for (double v : points) scale = std::max(scale, std::abs(v));
    const double jitter = 1e-3 * (scale > 0.0 ? scale : 1.0);
    for (int c = 0; c < k; ++c) {
      auto p = point(uniform_index(rng, n));
      for (int j = 0; j < dim; ++j) centers[c * dim + j] = p[j] + uniform(rng, -jitter, jitter);
    }
    return centers;
  }

  // Seeded distinct initial centers: shuffled order, skipping duplicate points.
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  shuffle(order, rng);
  std::set<std::vector<double>> used;
  int filled = 0;
  for (std::size_t idx : order) {
    if (filled == k) break;
    auto p = point(idx);
    std::vector<double> v(p.begin(), p.end());
    if (!used.insert(v).second) continue;
    std::copy(v.begin(), v.end(), centers.begin() + static_cast<std::ptrdiff_t>(filled) * dim);
    ++filled;
  }

  std::vector<int> assign(n, 0);
  for (int it = 0; it < iterations; ++it) {
    for (std::size_t i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (int c = 0; c < k; ++c) {
        const double d = squared_distance(point(i), std::span<const double>(centers.data() + c * dim, dim));
        if (d < best) {
          best = d;
          assign[i] = c;
        }
      }
    }
    std::vector<double> sums(centers.size(), 0.0);
    std::vector<std::size_t> counts(static_cast<std::size_t>(k), 0);
    for (std::size_t i = 0; i < n; ++i) {
      auto p = point(i);
      for (int j = 0; j < dim; ++j) sums[assign[i] * dim + j] += p[j];
      ++counts[assign[i]];
    }
    for (int c = 0; c < k; ++c) {
      if (counts[c] == 0) continue;  // empty cluster keeps its center
      for (int j = 0; j < dim; ++j) centers[c * dim + j] = sums[c * dim + j] / static_cast<double>(counts[c]);
    }
  }
  return centers;
}

RqVaeModel init_model(const RqVaeConfig& config, const EmbeddingMatrix& data) {
  config.validate();
  if (data.count == 0) throw Error(ErrorCode::kInvalidArgument, "init_model: empty data");
  if (static_cast<int>(data.dim) != config.input_dim) {
    throw Error(ErrorCode::kMismatch, "init_model: embedding dim " + std::to_string(data.dim) +
                                          " does not match input_dim " + std::to_string(config.input_dim));
  }
  Rng rng(config.seed);
  RqVaeModel m;
  m.config = config;

  std::vector<int> enc_widths{config.input_dim};
  for (int i = 0; i < config.encoder_hidden_layers; ++i) enc_widths.push_back(config.input_dim);
  enc_widths.push_back(config.latent_dim);
  std::vector<int> dec_widths(enc_widths.rbegin(), enc_widths.rend());
  m.encoder = Mlp::make(enc_widths);
  m.decoder = Mlp::make(dec_widths);
  for (auto* mlp : {&m.encoder, &m.decoder}) {
    for (auto& l : mlp->layers) {
      const double a = 1.0 / std::sqrt(static_cast<double>(l.in));
      for (auto& w : l.weight) w = uniform(rng, -a, a);
    }
  }

  const int dim = config.latent_dim;
  std::vector<double> residuals;
  residuals.reserve(static_cast<std::size_t>(data.count) * dim);
  for (std::uint32_t i = 0; i < data.count; ++i) {
    auto z = m.encode(to_double(data.row(i)));
    residuals.insert(residuals.end(), z.begin(), z.end());
  }
  for (int l = 0; l < config.num_levels; ++l) {
    m.codebooks.push_back(kmeans(residuals, dim, config.codebook_size, 10, rng));
    const auto& book = m.codebooks.back();
    for (std::uint32_t i = 0; i < data.count; ++i) {
      std::span<double> r(residuals.data() + static_cast<std::size_t>(i) * dim, dim);
      int best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (int k = 0; k < config.codebook_size; ++k) {
        const double d = squared_distance(r, std::span<const double>(book.data() + k * dim, dim));
        if (d < best_d) {
          best_d = d;
          best = k;
        }
      }
      for (int j = 0; j < dim; ++j) r[j] -= book[best * dim + j];
    }
  }
  return m;
}

// ---------------------------------------------------------------------------
// Training

LossParts mean_loss(const RqVaeModel& model, const EmbeddingMatrix& data) {
  LossParts acc;
  for (std::uint32_t i = 0; i < data.count; ++i) {
    auto p = loss(to_double(data.row(i)), model);
    acc.recon += p.recon;
    acc.codebook += p.codebook;
    acc.commitment += p.commitment;
  }
  const double n = data.count ? static_cast<double>(data.count) : 1.0;
  return {acc.recon / n, acc.codebook / n, acc.commitment / n};
}

RqVaeModel train_rqvae(const RqVaeConfig& config, const EmbeddingMatrix& data, RqVaeTrainLog* log) {
  RqVaeModel model = init_model(config, data);
  // Separate stream from init so changing epochs never perturbs initialization.
  Rng rng(config.seed ^ 0x9e3779b97f4a7c15ULL);

  const auto initial = mean_loss(model, data);
  if (log) {
    log->initial_loss = initial.total();
    log->initial_recon = initial.recon;
  }

  std::vector<std::uint32_t> order(data.count);
  for (std::uint32_t i = 0; i < data.count; ++i) order[i] = i;
  const double lr = config.learning_rate;
  const double decay = 1.0 - lr * config.weight_decay;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    shuffle(order, rng);
    double epoch_total = 0.0;
    double epoch_recon = 0.0;
    int batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size, ++batch_index) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      RqVaeModel grad = model.zeros_like();
      double batch_total = 0.0;
      for (std::size_t b = start; b < end; ++b) {
        auto parts = loss_and_grad(to_double(data.row(order[b])), model, grad);
        batch_total += parts.total();
        epoch_recon += parts.recon;
      }
      if (!std::isfinite(batch_total)) {
        throw Error(ErrorCode::kNonFinite, "rqvae training: non-finite loss at epoch " + std::to_string(epoch) +
                                               ", batch " + std::to_string(batch_index));
      }
      epoch_total += batch_total;
      const double scale = lr / static_cast<double>(end - start);
      auto params = model.buffers();
      auto grads = grad.buffers();
      for (std::size_t bi = 0; bi < params.size(); ++bi) {
        auto& p = *params[bi].values;
        const auto& g = *grads[bi].values;
        if (params[bi].decays) {
          for (auto& v : p) v *= decay;
        }
        for (std::size_t j = 0; j < p.size(); ++j) p[j] -= scale * g[j];
      }
    }
    if (log) {
      log->epoch_loss.push_back(epoch_total / static_cast<double>(data.count));
      log->epoch_recon.push_back(epoch_recon / static_cast<double>(data.count));
    }
  }

  if (log) {
    std::vector<std::vector<bool>> used(config.num_levels, std::vector<bool>(config.codebook_size, false));
    for (const auto& r : assign_ids(model, data))
      for (int l = 0; l < config.num_levels; ++l) used[l][r.codes[l]] = true;
    log->dead_codewords.clear();
    for (const auto& u : used) log->dead_codewords.push_back(static_cast<int>(std::count(u.begin(), u.end(), false)));
  }
  return model;
}

std::vector<QuantizationResult> assign_ids(const RqVaeModel& model, const EmbeddingMatrix& data) {
  if (static_cast<int>(data.dim) != model.config.input_dim) {
    throw Error(ErrorCode::kMismatch, "assign_ids: embedding dim " + std::to_string(data.dim) +
                                          " does not match model input_dim " +
                                          std::to_string(model.config.input_dim));
  }
  std::vector<QuantizationResult> out;
  out.reserve(data.count);
  for (std::uint32_t i = 0; i < data.count; ++i) out.push_back(quantize(model.encode(to_double(data.row(i))), model));
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoint: "GCRQ", u32 header length, JSON config header, f64 parameters.

namespace {

json config_to_json(const RqVaeConfig& c) {
  return {{"input_dim", c.input_dim},
          {"encoder_hidden_layers", c.encoder_hidden_layers},
          {"latent_dim", c.latent_dim},
          {"num_levels", c.num_levels},
          {"codebook_size", c.codebook_size},
          {"commitment_beta", c.commitment_beta},
          {"learning_rate", c.learning_rate},
          {"weight_decay", c.weight_decay},
          {"batch_size", c.batch_size},
          {"epochs", c.epochs},
          {"seed", c.seed}};
}

RqVaeConfig config_from_json(const json& j) {
  RqVaeConfig c;
  c.input_dim = j.at("input_dim");
  c.encoder_hidden_layers = j.at("encoder_hidden_layers");
  c.latent_dim = j.at("latent_dim");
  c.num_levels = j.at("num_levels");
  c.codebook_size = j.at("codebook_size");
  c.commitment_beta = j.at("commitment_beta");
  c.learning_rate = j.at("learning_rate");
  c.weight_decay = j.at("weight_decay");
  c.batch_size = j.at("batch_size");
  c.epochs = j.at("epochs");
  c.seed = j.at("seed");
  return c;
}

}  // namespace

std::string serialize_rqvae(const RqVaeModel& model) {
  ByteWriter w;
  w.bytes("GCRQ");
  const std::string header = config_to_json(model.config).dump();
  w.u32(static_cast<std::uint32_t>(header.size()));
  w.bytes(header);
  auto copy = model;
  for (const auto& b : copy.buffers())
    for (double v : *b.values) w.f64(v);
  return w.str();
}

void save_rqvae(const RqVaeModel& model, const std::string& path) { write_file(path, serialize_rqvae(model)); }

RqVaeModel load_rqvae(const std::string& path) {
  const std::string data = read_file(path);
  ByteReader r(data, path);
  if (r.bytes(4) != "GCRQ") throw Error(ErrorCode::kParse, path + ": not an RQ-VAE checkpoint");
  const std::uint32_t header_len = r.u32();
  RqVaeConfig config;
  try {
    config = config_from_json(json::parse(r.bytes(header_len)));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kParse, path + ": bad checkpoint header: " + e.what());
  }
  config.validate();

  // Rebuild shapes, then fill parameters in buffer order.
  RqVaeModel m;
  m.config = config;
  std::vector<int> enc_widths{config.input_dim};
  for (int i = 0; i < config.encoder_hidden_layers; ++i) enc_widths.push_back(config.input_dim);
  enc_widths.push_back(config.latent_dim);
  m.encoder = Mlp::make(enc_widths);
  m.decoder = Mlp::make(std::vector<int>(enc_widths.rbegin(), enc_widths.rend()));
  m.codebooks.assign(config.num_levels,
                     std::vector<double>(static_cast<std::size_t>(config.codebook_size) * config.latent_dim));
  for (auto& b : m.buffers())
    for (auto& v : *b.values) v = r.f64();
  if (r.remaining() != 0) throw Error(ErrorCode::kParse, path + ": trailing bytes in checkpoint");
  if (!m.all_finite()) throw Error(ErrorCode::kNonFinite, path + ": checkpoint holds non-finite parameters");
  return m;
}

}  // namespace gencrs
