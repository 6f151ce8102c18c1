#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "gencrs/corpus.h"
#include "gencrs/eval_protocol.h"
#include "gencrs/rqvae.h"
#include "gencrs/toylm.h"

namespace gencrs {

// ---- stages, each reading and writing only files ----

void stage_embed(const std::string& catalog_path, int dim, std::uint64_t seed, const std::string& out);
RqVaeTrainLog stage_train_rqvae(const std::string& embeddings_path, RqVaeConfig config, const std::string& out);
// Returns the number of items whose ID changed during collision resolution.
std::size_t stage_build_sids(const std::string& rqvae_path, const std::string& embeddings_path,
                             const std::string& catalog_path, const std::string& out);
// An empty catalog path validates mentions against the SID table alone.
std::vector<std::string> stage_prepare_corpus(const std::string& dialogs_path, const std::string& catalog_path,
                                              const std::string& sids_path, const PrepareOptions& opts,
                                              const std::string& out_dir);
// Vocabulary sizes in config are taken from the corpus.
LmTrainLog stage_train_lm(const std::string& corpus_dir, LmConfig config, const std::string& out);
MetricReport stage_evaluate(const std::string& model_path, const std::string& sids_path,
                            const std::string& corpus_dir, const EvalOptions& opts, const std::string& out);

// ---- driver ----

struct PipelineConfig {
  std::string catalog;
  std::string dialogs;
  std::string work_dir = "work";
  std::uint64_t seed = 0;

  int embed_dim = kDefaultEmbeddingDim;
  std::uint64_t embed_seed = 17;
  RqVaeConfig rqvae;
  PrepareOptions corpus;
  LmConfig lm;
  EvalOptions eval;

  // Artifact paths inside work_dir.
  std::string embeddings_path() const { return work_dir + "/embeddings.emb"; }
  std::string rqvae_path() const { return work_dir + "/rqvae.ckpt"; }
  std::string sids_path() const { return work_dir + "/sids.tsv"; }
  std::string corpus_dir() const { return work_dir + "/corpus"; }
  std::string lm_path() const { return work_dir + "/lm.ckpt"; }
  std::string report_path() const { return work_dir + "/report.json"; }
  std::string manifest_path() const { return work_dir + "/manifest.json"; }
};

// Flat "key = value" lines; '#' starts a comment. Relative paths are resolved
// against the config file's directory. Unknown keys are errors.
PipelineConfig parse_pipeline_config(const std::string& text, const std::string& base_dir = ".");
PipelineConfig load_pipeline_config(const std::string& path);
// The pipeline's settings under the same keys, one per line.
std::map<std::string, std::string> config_entries(const PipelineConfig& c);

struct StageOutcome {
  std::string stage;
  bool ran = false;
  std::string reason;  // why it ran, or "up to date"
};

struct PipelineResult {
  std::vector<StageOutcome> stages;
  std::map<std::string, std::string> artifacts;  // name -> path
  std::map<std::string, std::string> hashes;     // name -> hex digest
};

using PipelineLogger = std::function<void(const std::string&)>;

// Runs embed, train-rqvae, build-sids, prepare-corpus, train-lm and evaluate,
// skipping stages whose outputs are newer than their inputs and whose settings
// are unchanged. Writes manifest.json with a hash per artifact. A failing stage
// is rethrown with its name prefixed.
PipelineResult run_pipeline(const PipelineConfig& config, bool force = false, const PipelineLogger& log = {});

// FNV-1a digest of a file, or of every file under a directory in name order.
std::string artifact_hash(const std::string& path);

}  // namespace gencrs
