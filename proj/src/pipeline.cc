#include "gencrs/pipeline.h"

#include <algorithm>
#include <filesystem>
#include <sstream>

#include <json.hpp>

#include "gencrs/catalog.h"
#include "gencrs/collision.h"
#include "gencrs/decoder.h"
#include "gencrs/sid.h"

namespace gencrs {

namespace fs = std::filesystem;
using json = nlohmann::json;

void stage_embed(const std::string& catalog_path, int dim, std::uint64_t seed, const std::string& out) {
  const Catalog catalog = load_catalog(catalog_path);
  save_embeddings(embed_catalog(catalog, dim, seed), out);
}

RqVaeTrainLog stage_train_rqvae(const std::string& embeddings_path, RqVaeConfig config, const std::string& out) {
  const EmbeddingMatrix data = load_embeddings(embeddings_path);
  config.input_dim = static_cast<int>(data.dim);
  RqVaeTrainLog log;
  save_rqvae(train_rqvae(config, data, &log), out);
  return log;
}

std::size_t stage_build_sids(const std::string& rqvae_path, const std::string& embeddings_path,
                             const std::string& catalog_path, const std::string& out) {
  const Catalog catalog = load_catalog(catalog_path);
  const RqVaeModel model = load_rqvae(rqvae_path);
  const EmbeddingMatrix data = load_embeddings(embeddings_path, catalog);
  if (static_cast<int>(data.dim) != model.config.input_dim)
    throw Error(ErrorCode::kMismatch, "embedding dim " + std::to_string(data.dim) + " does not match RQ-VAE input " +
                                          std::to_string(model.config.input_dim));
  const auto results = assign_ids(model, data);
  std::vector<Codes> raw;
  raw.reserve(results.size());
  for (const auto& r : results) raw.push_back(r.codes);
  const IdAssignment ids = resolve_collisions(raw, results, model.codebooks, model.config.codebook_size);
  if (!verify_unique(ids, catalog.size())) throw Error(ErrorCode::kDuplicate, "collision resolution left duplicates");
  const SidVocabulary vocab(model.config.num_levels, model.config.codebook_size);
  save_sid_table(make_sid_table(vocab, catalog, ids), out);
  return ids.changed.size();
}

std::vector<std::string> stage_prepare_corpus(const std::string& dialogs_path, const std::string& catalog_path,
                                              const std::string& sids_path, const PrepareOptions& opts,
                                              const std::string& out_dir) {
  const SidTable sids = load_sid_table(sids_path);
  Catalog catalog;
  if (catalog_path.empty()) {
    // Item ids from the SID table are enough to validate mentions.
    std::vector<ItemRecord> ids;
    for (const auto& e : sids.entries) ids.push_back({e.item_id, e.item_id, std::nullopt, {}, {}, ""});
    catalog = Catalog(std::move(ids));
  } else {
    catalog = load_catalog(catalog_path);
  }
  const auto dialogs = load_dialogs(dialogs_path, catalog);
  std::vector<std::string> warnings;
  const PreparedCorpus corpus = prepare_corpus(dialogs, sids, opts, &warnings);
  save_prepared_corpus(corpus, opts, out_dir);
  return warnings;
}

LmTrainLog stage_train_lm(const std::string& corpus_dir, LmConfig config, const std::string& out) {
  const PreparedCorpus corpus = load_prepared_corpus(corpus_dir);
  config.vocab_size = corpus.tokenizer.size();
  config.base_vocab_size = corpus.tokenizer.base_size();
  LmTrainLog log;
  const LmModel model = train_lm(config, corpus.train, &log);
  save_lm(model, corpus.tokenizer, out);
  return log;
}

MetricReport stage_evaluate(const std::string& model_path, const std::string& sids_path,
                            const std::string& corpus_dir, const EvalOptions& opts, const std::string& out) {
  const PreparedCorpus corpus = load_prepared_corpus(corpus_dir);
  const LoadedLm lm = load_lm(model_path, &corpus.tokenizer);
  const SidTable sids = load_sid_table(sids_path);
  const StructuredDecoder decoder(lm.model, lm.tokenizer, sids);
  MetricReport report = eval_protocol(decoder, corpus.test, corpus.format, opts);
  if (!out.empty()) write_file(out, report.to_json());
  return report;
}

// ---- config ----

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
  std::istringstream in(v);
  T x{};
  in >> x;
  if (in.fail() || !in.eof()) throw Error(ErrorCode::kParse, "config: bad value for " + key + ": \"" + v + "\"");
  return x;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw Error(ErrorCode::kParse, "config: bad boolean for " + key + ": \"" + v + "\"");
}

std::string num(double v) { return json(v).dump(); }

}  // namespace

PipelineConfig parse_pipeline_config(const std::string& text, const std::string& base_dir) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw Error(ErrorCode::kParse, "config line " + std::to_string(line_no) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    if (kv.count(key)) throw Error(ErrorCode::kDuplicate, "config line " + std::to_string(line_no) + ": repeated " + key);
    kv[key] = trim(line.substr(eq + 1));
  }

  PipelineConfig c;
  auto path = [&](const std::string& v) {
    const fs::path p(v);
    return p.is_absolute() ? v : (fs::path(base_dir) / p).lexically_normal().string();
  };
  // The global seed is the default for every stage seed.
  if (kv.count("seed")) c.seed = parse_number<std::uint64_t>("seed", kv["seed"]);
  c.rqvae.seed = c.lm.seed = c.corpus.seed = c.seed;
  c.work_dir = path(c.work_dir);

  for (const auto& [k, v] : kv) {
    if (k == "seed") continue;
    if (k == "catalog") c.catalog = path(v);
    else if (k == "dialogs") c.dialogs = path(v);
    else if (k == "work_dir") c.work_dir = path(v);
    else if (k == "embed.dim") c.embed_dim = parse_number<int>(k, v);
    else if (k == "embed.seed") c.embed_seed = parse_number<std::uint64_t>(k, v);
    else if (k == "rqvae.levels") c.rqvae.num_levels = parse_number<int>(k, v);
    else if (k == "rqvae.codebook_size") c.rqvae.codebook_size = parse_number<int>(k, v);
    else if (k == "rqvae.latent_dim") c.rqvae.latent_dim = parse_number<int>(k, v);
    else if (k == "rqvae.hidden_layers") c.rqvae.encoder_hidden_layers = parse_number<int>(k, v);
    else if (k == "rqvae.beta") c.rqvae.commitment_beta = parse_number<double>(k, v);
    else if (k == "rqvae.lr") c.rqvae.learning_rate = parse_number<double>(k, v);
    else if (k == "rqvae.weight_decay") c.rqvae.weight_decay = parse_number<double>(k, v);
    else if (k == "rqvae.batch_size") c.rqvae.batch_size = parse_number<int>(k, v);
    else if (k == "rqvae.epochs") c.rqvae.epochs = parse_number<int>(k, v);
    else if (k == "rqvae.seed") c.rqvae.seed = parse_number<std::uint64_t>(k, v);
    else if (k == "corpus.format") c.corpus.format = parse_format(v);
    else if (k == "corpus.split") c.corpus.train_fraction = parse_number<double>(k, v);
    else if (k == "corpus.seed") c.corpus.seed = parse_number<std::uint64_t>(k, v);
    else if (k == "lm.d_model") c.lm.d_model = parse_number<int>(k, v);
    else if (k == "lm.layers") c.lm.n_layers = parse_number<int>(k, v);
    else if (k == "lm.heads") c.lm.n_heads = parse_number<int>(k, v);
    else if (k == "lm.context_len") c.lm.context_len = parse_number<int>(k, v);
    else if (k == "lm.lr") c.lm.learning_rate = parse_number<double>(k, v);
    else if (k == "lm.weight_decay") c.lm.weight_decay = parse_number<double>(k, v);
    else if (k == "lm.batch_size") c.lm.batch_size = parse_number<int>(k, v);
    else if (k == "lm.steps") c.lm.steps = parse_number<int>(k, v);
    else if (k == "lm.seed") c.lm.seed = parse_number<std::uint64_t>(k, v);
    else if (k == "lm.embedding_policy") c.lm.embedding_policy = parse_policy(v);
    else if (k == "lm.optimizer") c.lm.optimizer = parse_optimizer(v);
    else if (k == "eval.beam") c.eval.beam_width = parse_number<int>(k, v);
    else if (k == "eval.runs") c.eval.runs = parse_number<int>(k, v);
    else if (k == "eval.max_text_tokens") c.eval.max_text_tokens = parse_number<int>(k, v);
    else if (k == "eval.ppl_movie") c.eval.ppl_movie = parse_bool(k, v);
    else if (k == "eval.inline_items") c.eval.inline_items = parse_bool(k, v);
    else throw Error(ErrorCode::kInvalidArgument, "config: unknown key \"" + k + "\"");
  }
  if (c.catalog.empty()) throw Error(ErrorCode::kMissingField, "config: catalog is required");
  if (c.dialogs.empty()) throw Error(ErrorCode::kMissingField, "config: dialogs is required");
  return c;
}

PipelineConfig load_pipeline_config(const std::string& path) {
  const std::string dir = fs::path(path).parent_path().string();
  return parse_pipeline_config(read_file(path), dir.empty() ? "." : dir);
}

std::map<std::string, std::string> config_entries(const PipelineConfig& c) {
  return {
      {"catalog", c.catalog},
      {"dialogs", c.dialogs},
      {"work_dir", c.work_dir},
      {"seed", std::to_string(c.seed)},
      {"embed.dim", std::to_string(c.embed_dim)},
      {"embed.seed", std::to_string(c.embed_seed)},
      {"rqvae.levels", std::to_string(c.rqvae.num_levels)},
      {"rqvae.codebook_size", std::to_string(c.rqvae.codebook_size)},
      {"rqvae.latent_dim", std::to_string(c.rqvae.latent_dim)},
      {"rqvae.hidden_layers", std::to_string(c.rqvae.encoder_hidden_layers)},
      {"rqvae.beta", num(c.rqvae.commitment_beta)},
      {"rqvae.lr", num(c.rqvae.learning_rate)},
      {"rqvae.weight_decay", num(c.rqvae.weight_decay)},
      {"rqvae.batch_size", std::to_string(c.rqvae.batch_size)},
      {"rqvae.epochs", std::to_string(c.rqvae.epochs)},
      {"rqvae.seed", std::to_string(c.rqvae.seed)},
      {"corpus.format", format_name(c.corpus.format)},
      {"corpus.split", num(c.corpus.train_fraction)},
      {"corpus.seed", std::to_string(c.corpus.seed)},
      {"lm.d_model", std::to_string(c.lm.d_model)},
      {"lm.layers", std::to_string(c.lm.n_layers)},
      {"lm.heads", std::to_string(c.lm.n_heads)},
      {"lm.context_len", std::to_string(c.lm.context_len)},
      {"lm.lr", num(c.lm.learning_rate)},
      {"lm.weight_decay", num(c.lm.weight_decay)},
      {"lm.batch_size", std::to_string(c.lm.batch_size)},
      {"lm.steps", std::to_string(c.lm.steps)},
      {"lm.seed", std::to_string(c.lm.seed)},
      {"lm.embedding_policy", policy_name(c.lm.embedding_policy)},
      {"lm.optimizer", optimizer_name(c.lm.optimizer)},
      {"eval.beam", std::to_string(c.eval.beam_width)},
      {"eval.runs", std::to_string(c.eval.runs)},
      {"eval.max_text_tokens", std::to_string(c.eval.max_text_tokens)},
      {"eval.ppl_movie", c.eval.ppl_movie ? "true" : "false"},
      {"eval.inline_items", c.eval.inline_items ? "true" : "false"},
  };
}

// ---- driver ----

std::string artifact_hash(const std::string& path) {
  if (!fs::is_directory(path)) return hex64(fnv1a64(read_file(path)));
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(path)) {
    if (e.is_regular_file()) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::string acc;
  for (const auto& f : files) {
    acc += fs::relative(f, path).generic_string();
    acc += '\0';
    acc += hex64(fnv1a64(read_file(f.string())));
    acc += '\n';
  }
  return hex64(fnv1a64(acc));
}

namespace {

struct Stage {
  std::string name;
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
  std::string settings;
  std::function<void()> run;
};

std::string settings_of(const std::map<std::string, std::string>& entries, const std::string& prefix) {
  std::string s;
  for (const auto& [k, v] : entries) {
    if (k.rfind(prefix, 0) == 0) s += k + "=" + v + "\n";
  }
  return s;
}

// Empty when the stage is up to date.
std::string stale_reason(const Stage& st, const std::string& stamp_path) {
  for (const auto& in : st.inputs) {
    if (!fs::exists(in)) throw Error(ErrorCode::kNotFound, "input " + in + " does not exist");
  }
  for (const auto& out : st.outputs) {
    if (!fs::exists(out)) return "missing " + out;
  }
  if (!fs::exists(stamp_path) || read_file(stamp_path) != st.settings) return "settings changed";
  auto oldest = fs::file_time_type::max();
  for (const auto& out : st.outputs) oldest = std::min(oldest, fs::last_write_time(out));
  for (const auto& in : st.inputs) {
    if (fs::last_write_time(in) > oldest) return "input " + in + " is newer";
  }
  return "";
}

}  // namespace

PipelineResult run_pipeline(const PipelineConfig& c, bool force, const PipelineLogger& log) {
  auto say = [&](const std::string& m) {
    if (log) log(m);
  };
  fs::create_directories(c.work_dir + "/.stamps");
  const auto entries = config_entries(c);
  const std::string corpus = c.corpus_dir();
  const std::vector<std::string> corpus_files = {corpus + "/vocab.txt", corpus + "/train.jsonl",
                                                 corpus + "/test.jsonl", corpus + "/meta.json"};
  auto plus = [](std::vector<std::string> a, const std::vector<std::string>& b) {
    a.insert(a.end(), b.begin(), b.end());
    return a;
  };

  std::vector<Stage> stages;
  stages.push_back({"embed", {c.catalog}, {c.embeddings_path()}, settings_of(entries, "embed."),
                    [&] { stage_embed(c.catalog, c.embed_dim, c.embed_seed, c.embeddings_path()); }});
  stages.push_back({"train-rqvae", {c.embeddings_path()}, {c.rqvae_path()}, settings_of(entries, "rqvae."), [&] {
                      const auto l = stage_train_rqvae(c.embeddings_path(), c.rqvae, c.rqvae_path());
                      std::string dead;
                      for (int d : l.dead_codewords) dead += (dead.empty() ? "" : ",") + std::to_string(d);
                      if (!l.epoch_loss.empty())
                        say("  rqvae loss " + num(l.initial_loss) + " -> " + num(l.epoch_loss.back()) +
                            ", dead codewords per level " + dead);
                    }});
  stages.push_back({"build-sids", {c.rqvae_path(), c.embeddings_path(), c.catalog}, {c.sids_path()}, "", [&] {
                      const auto changed = stage_build_sids(c.rqvae_path(), c.embeddings_path(), c.catalog, c.sids_path());
                      say("  collision resolution changed " + std::to_string(changed) + " item(s)");
                    }});
  stages.push_back({"prepare-corpus", {c.dialogs, c.catalog, c.sids_path()}, corpus_files,
                    settings_of(entries, "corpus."), [&] {
                      for (const auto& w : stage_prepare_corpus(c.dialogs, c.catalog, c.sids_path(), c.corpus, corpus))
                        say("  warning: " + w);
                    }});
  stages.push_back({"train-lm", corpus_files, {c.lm_path()}, settings_of(entries, "lm."), [&] {
                      const auto l = stage_train_lm(corpus, c.lm, c.lm_path());
                      say("  lm loss " + num(l.initial_loss) + " -> " + num(l.final_loss));
                    }});
  stages.push_back({"evaluate", plus({c.lm_path(), c.sids_path()}, corpus_files), {c.report_path()},
                    settings_of(entries, "eval."),
                    [&] { stage_evaluate(c.lm_path(), c.sids_path(), corpus, c.eval, c.report_path()); }});

  PipelineResult result;
  for (const auto& st : stages) {
    const std::string stamp = c.work_dir + "/.stamps/" + st.name;
    try {
      std::string reason = stale_reason(st, stamp);
      if (force) reason = "forced";
      if (reason.empty()) {
        say(st.name + ": up to date");
        result.stages.push_back({st.name, false, "up to date"});
        continue;
      }
      say(st.name + ": running (" + reason + ")");
      st.run();
      write_file(stamp, st.settings);
      result.stages.push_back({st.name, true, reason});
    } catch (const Error& e) {
      throw Error(e.code(), "stage " + st.name + ": " + e.what());
    }
  }

  const std::vector<std::pair<std::string, std::string>> artifacts = {
      {"embeddings", c.embeddings_path()}, {"rqvae", c.rqvae_path()}, {"sids", c.sids_path()},
      {"corpus", corpus},                  {"lm", c.lm_path()},       {"report", c.report_path()},
  };
  json manifest = json::object();
  for (const auto& [name, p] : artifacts) {
    result.artifacts[name] = p;
    result.hashes[name] = artifact_hash(p);
    manifest[name] = {{"path", fs::relative(p, c.work_dir).generic_string()}, {"fnv1a64", result.hashes[name]}};
  }
  write_file(c.manifest_path(), manifest.dump(2) + "\n");
  return result;
}

}  // namespace gencrs
