#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "gencrs/catalog.h"
#include "gencrs/common.h"

namespace gencrs {

struct RqVaeConfig {
  int input_dim = kDefaultEmbeddingDim;
  int encoder_hidden_layers = 7;
  int latent_dim = 32;
  int num_levels = 4;
  int codebook_size = 64;
  double commitment_beta = 0.25;
  double learning_rate = 1e-3;
  double weight_decay = 1e-4;
  int batch_size = 1024;
  int epochs = 100;
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const RqVaeConfig&) const = default;
};

// Fully connected layer, weights stored row-major as out x in.
struct Linear {
  int in = 0;
  int out = 0;
  std::vector<double> weight;
  std::vector<double> bias;
};

// ReLU between layers, linear output.
struct Mlp {
  std::vector<Linear> layers;

  static Mlp make(const std::vector<int>& widths);
  int input_dim() const { return layers.front().in; }
  int output_dim() const { return layers.back().out; }
  std::vector<double> forward(std::span<const double> x) const;
};

struct RqVaeModel {
  RqVaeConfig config;
  Mlp encoder;
  Mlp decoder;
  // codebooks[l] holds K codewords of latent_dim values, row-major.
  std::vector<std::vector<double>> codebooks;

  std::span<const double> codeword(int level, int k) const {
    return {codebooks[level].data() + static_cast<std::size_t>(k) * config.latent_dim,
            static_cast<std::size_t>(config.latent_dim)};
  }

  // Same shapes, all zeros; used as a gradient accumulator.
  RqVaeModel zeros_like() const;

  std::vector<double> encode(std::span<const double> x) const { return encoder.forward(x); }
  std::vector<double> decode(std::span<const double> z) const { return decoder.forward(z); }

  struct Buffer {
    std::vector<double>* values;
    bool decays;  // weight matrices only
  };
  // Every parameter buffer in a fixed order.
  std::vector<Buffer> buffers();
  std::size_t parameter_count() const;
  bool all_finite() const;
};

struct QuantizationResult {
  Codes codes;
  // residuals[0] is the encoder output; residuals[L] is what remains after all levels.
  std::vector<std::vector<double>> residuals;
  std::vector<double> quantized;
};

// Greedy residual quantization with lowest-index tie-break.
QuantizationResult quantize(std::span<const double> z, const std::vector<std::vector<double>>& codebooks,
                            int codebook_size);
QuantizationResult quantize(std::span<const double> z, const RqVaeModel& model);

double squared_distance(std::span<const double> a, std::span<const double> b);

struct LossParts {
  double recon = 0.0;
  double codebook = 0.0;
  double commitment = 0.0;
  double total() const { return recon + codebook + commitment; }
};

LossParts loss(std::span<const double> x, const RqVaeModel& model);

// Adds the straight-through gradient of loss(x) into grad and returns the loss.
LossParts loss_and_grad(std::span<const double> x, const RqVaeModel& model, RqVaeModel& grad);

std::vector<double> to_double(std::span<const float> row);

// Seeded fan-in uniform weights; codebooks from per-level k-means on the
// untrained encoder's residuals.
RqVaeModel init_model(const RqVaeConfig& config, const EmbeddingMatrix& data);

// Lloyd's k-means over row-major points of width dim; lowest-index tie-break.
// With fewer distinct points than k, returns seeded samples plus jitter.
std::vector<double> kmeans(std::span<const double> points, int dim, int k, int iterations, Rng& rng);

struct RqVaeTrainLog {
  double initial_loss = 0.0;
  double initial_recon = 0.0;
  std::vector<double> epoch_loss;
  std::vector<double> epoch_recon;
  // Per level count of codewords never selected by the final model.
  std::vector<int> dead_codewords;
};

RqVaeModel train_rqvae(const RqVaeConfig& config, const EmbeddingMatrix& data, RqVaeTrainLog* log = nullptr);

// One result per row, in row order.
std::vector<QuantizationResult> assign_ids(const RqVaeModel& model, const EmbeddingMatrix& data);

// Mean loss parts over all rows.
LossParts mean_loss(const RqVaeModel& model, const EmbeddingMatrix& data);

void save_rqvae(const RqVaeModel& model, const std::string& path);
RqVaeModel load_rqvae(const std::string& path);
std::string serialize_rqvae(const RqVaeModel& model);

}  // namespace gencrs
