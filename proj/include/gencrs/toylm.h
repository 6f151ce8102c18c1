#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "gencrs/common.h"
#include "gencrs/corpus.h"

namespace gencrs {

enum class EmbeddingPolicy { kAll, kNewTokensOnly };
enum class LmOptimizer { kSgd, kAdam };

const char* policy_name(EmbeddingPolicy p);
// Accepts "all" and "new-only".
EmbeddingPolicy parse_policy(std::string_view s);
const char* optimizer_name(LmOptimizer o);
// Accepts "sgd" and "adam".
LmOptimizer parse_optimizer(std::string_view s);

struct LmConfig {
  int vocab_size = 0;
  // Ids below this are the base vocabulary frozen under kNewTokensOnly.
  int base_vocab_size = 0;
  int d_model = 64;
  int n_layers = 2;
  int n_heads = 4;
  int context_len = 256;
  double learning_rate = 1e-3;
  double weight_decay = 0.1;
  int batch_size = 16;
  int steps = 2000;
  std::uint64_t seed = 0;
  EmbeddingPolicy embedding_policy = EmbeddingPolicy::kAll;
  // Adam uses beta1 0.9, beta2 0.999, eps 1e-8; decay stays decoupled.
  LmOptimizer optimizer = LmOptimizer::kAdam;

  void validate() const;
  bool operator==(const LmConfig&) const = default;
};

// Offsets of every tensor inside the flat parameter vector. Linear weights are
// stored out x in, row-major.
struct LmLayout {
  struct Layer {
    std::size_t ln1_g, ln1_b, w_qkv, b_qkv, w_o, b_o, ln2_g, ln2_b, w_fc, b_fc, w_proj, b_proj;
  };
  std::size_t wte = 0, wpe = 0, lnf_g = 0, lnf_b = 0, total = 0;
  std::vector<Layer> layers;

  static LmLayout make(const LmConfig& c);
};

// Decoder-only transformer: learned positions, pre-norm blocks with causal
// multi-head attention and a ReLU MLP of width 4*d_model, final layer norm,
// output projection tied to the token embedding.
class LmModel {
 public:
  LmModel() = default;
  // Seeded initialization.
  explicit LmModel(const LmConfig& config);

  const LmConfig& config() const { return config_; }
  const LmLayout& layout() const { return layout_; }
  std::vector<double>& params() { return params_; }
  const std::vector<double>& params() const { return params_; }

  // Token embedding row; the output projection reads the same storage.
  std::span<const double> embedding(int token) const {
    return {params_.data() + layout_.wte + static_cast<std::size_t>(token) * config_.d_model,
            static_cast<std::size_t>(config_.d_model)};
  }

  // Scores for every position; row t predicts token t+1. Throws on out-of-range
  // ids or sequences longer than context_len.
  std::vector<std::vector<double>> logits(std::span<const int> tokens) const;

  // Mean negative log-likelihood of `targets` given `context` (positions inside
  // the context carry no loss). Long contexts are truncated from the left.
  double ntp_loss(std::span<const int> context, std::span<const int> targets) const;
  // Same, adding d(loss)/d(params) into grad (sized like params()).
  double ntp_loss_and_grad(std::span<const int> context, std::span<const int> targets,
                           std::vector<double>& grad) const;

  // Per-token log-probabilities of targets; sums to -T * ntp_loss.
  std::vector<double> target_logprobs(std::span<const int> context, std::span<const int> targets) const;

  // Wraps existing parameters; throws kMismatch on a size mismatch.
  static LmModel from_params(const LmConfig& config, std::vector<double> params);

 private:
  LmConfig config_;
  LmLayout layout_;
  std::vector<double> params_;
};

// Incremental decoding state: cached keys and values per layer.
class LmState {
 public:
  explicit LmState(const LmModel& model);

  // Feeds one token; returns the next-token scores.
  const std::vector<double>& step(int token);
  // Feeds a sequence; returns scores after its last token.
  const std::vector<double>& feed(std::span<const int> tokens);

  int length() const { return pos_; }
  const std::vector<double>& last_logits() const { return logits_; }

 private:
  const LmModel* model_;
  int pos_ = 0;
  std::vector<std::vector<double>> keys_, values_;  // per layer, pos x d
  std::vector<double> logits_;
};

std::vector<double> log_softmax(std::span<const double> scores);

// Context tokens kept after left truncation so that context + targets - 1 fits.
std::span<const int> truncate_context(std::span<const int> context, std::size_t target_len, int context_len);

struct LmTrainLog {
  double initial_loss = 0.0;
  double final_loss = 0.0;
  std::vector<double> step_loss;
};

LmModel train_lm(const LmConfig& config, const std::vector<StructuredSample>& samples, LmTrainLog* log = nullptr);

double mean_ntp_loss(const LmModel& model, const std::vector<StructuredSample>& samples);

// Checkpoint: "GCLM", u32 header length, JSON header (config, vocabulary and
// its fingerprint), f64 parameters.
std::string serialize_lm(const LmModel& model, const Tokenizer& tok);
void save_lm(const LmModel& model, const Tokenizer& tok, const std::string& path);

struct LoadedLm {
  LmModel model;
  Tokenizer tokenizer;
};
// When expect is given, refuses a checkpoint trained against another vocabulary.
LoadedLm load_lm(const std::string& path, const Tokenizer* expect = nullptr);

}  // namespace gencrs
