#pragma once

#include <chrono>
#include <filesystem>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "lenlab/dataset.hpp"
#include "lenlab/generator.hpp"
#include "lenlab/report.hpp"

// Experiment orchestration: named profiles, the synthetic length-
// generalization task, and the scheme x train-bucket matrix runner with
// resumable per-cell artifacts.

namespace lenlab {

// ---------------------------------------------------------------------------
// Profiles.
// ---------------------------------------------------------------------------

struct Profile {
  std::string name;
  ModelConfig model;
  TrainConfig train;
  GenConfig gen;
  double scale = 1.0;  // dataset cap multiplier for corpus runs
};

// "paper" is the published full-scale setup; "desk" shrinks the model and
// caps so a complete matrix finishes on one CPU core.
inline Profile profile_by_name(const std::string& name) {
  Profile p;
  p.name = name;
  if (name == "paper") return p;  // ModelConfig/TrainConfig defaults
  if (name == "desk") {
    p.model.d_model = 64;
    p.model.enc_layers = 2;
    p.model.dec_layers = 2;
    p.model.enc_heads = 4;
    p.model.dec_heads = 4;
    p.model.head_dim = 16;
    p.model.ffn_mult = 2;
    p.model.enc_max_len = 128;
    p.model.dec_max_len = 72;
    p.model.vocab_size = 512;
    // Relative schemes see no positions in cross-attention by default; at
    // copy lengths past ~32 the alignment never ignites on a CPU budget, so
    // the desk profile turns the cross-attention positional channel on.
    p.model.scheme.cross_attention_bias = true;
    p.train.lr_peak = 3e-3;
    p.train.batch_size = 16;
    p.train.warmup_steps = 100;
    p.train.max_epochs = 5;
    p.train.clip_norm = 1.0;
    p.gen.max_new_tokens = 66;
    p.scale = 0.0005;
    return p;
  }
  throw ConfigError("unknown profile '" + name + "' (expected paper|desk)");
}

inline nlohmann::json profile_to_json(const Profile& p) {
  return {{"name", p.name},
          {"model", config_to_json(p.model)},
          {"train", train_config_to_json(p.train)},
          {"gen", gen_config_to_json(p.gen)},
          {"scale", p.scale}};
}

// ---------------------------------------------------------------------------
// Synthetic copy task with length buckets.
// ---------------------------------------------------------------------------

struct ToyTask {
  int payload = 64;       // distinct source symbols
  int first_symbol = 5;   // ids [first_symbol, first_symbol + payload)
  int start_marker = 2;   // source sentinels; without them a mirror-symmetric
  int end_marker = 3;     // encoder cannot tell forward copy from backward
  int n_eval = 48;        // held-out examples per bucket
  std::map<std::string, std::pair<int, int>> ranges = {
      {"short", {8, 16}}, {"medium", {17, 32}}, {"long", {33, 64}}};

  std::pair<int, int> bucket_range(const std::string& bucket) const {
    auto it = ranges.find(bucket);
    if (it == ranges.end())
      throw ConfigError("toy task: unknown bucket '" + bucket + "'");
    return it->second;
  }

  int vocab_size() const { return first_symbol + payload; }
};

inline nlohmann::json toy_task_to_json(const ToyTask& t) {
  nlohmann::json r;
  for (const auto& [bucket, range] : t.ranges)
    r[bucket] = {range.first, range.second};
  return {{"payload", t.payload},
          {"first_symbol", t.first_symbol},
          {"start_marker", t.start_marker},
          {"end_marker", t.end_marker},
          {"n_eval", t.n_eval},
          {"ranges", r}};
}

struct ToyData {
  std::map<std::string, TokenBatch> eval;  // short/medium/long/mix
};

// One example: unique payload symbols wrapped in start/end sentinels; the
// target copies the payload verbatim and closes with EOS.
inline TokenExample toy_example(const ToyTask& t, const std::string& bucket,
                                Rng& rng) {
  auto [lo, hi] = t.bucket_range(bucket);
  int len = lo + int(rng.below(std::uint64_t(hi - lo + 1)));
  if (len > t.payload)
    throw ConfigError("toy task: bucket needs more symbols than payload has");
  std::vector<int> pool(std::size_t(t.payload));
  for (int i = 0; i < t.payload; ++i) pool[std::size_t(i)] = t.first_symbol + i;
  for (int i = 0; i < len; ++i)
    std::swap(pool[std::size_t(i)],
              pool[std::size_t(i) + rng.below(std::uint64_t(t.payload - i))]);
  std::vector<int> src;
  src.push_back(t.start_marker);
  src.insert(src.end(), pool.begin(), pool.begin() + len);
  src.push_back(t.end_marker);
  std::vector<int> tgt(pool.begin(), pool.begin() + len);
  tgt.push_back(Bpe::kEos);
  return {src, tgt};
}

// Training examples are drawn online (fresh per batch) so the model must
// learn the copy algorithm rather than memorize a pool; only the held-out
// evaluation sets are materialized. The mix evaluation set takes equal thirds
// from the single-bucket sets (first buckets absorb the remainder), mirroring
// the dataset builder's mix split.
inline ToyData make_toy_data(const ToyTask& t, std::uint64_t seed) {
  ToyData d;
  for (const auto& bucket : test_bucket_names()) {
    Rng rng(derive_seed(seed, "toy:" + bucket));
    for (int i = 0; i < t.n_eval; ++i)
      d.eval[bucket].push_back(toy_example(t, bucket, rng));
  }
  TokenBatch mix;
  int base = t.n_eval / 3, rem = t.n_eval % 3;
  int idx = 0;
  for (const auto& bucket : test_bucket_names()) {
    int want = base + (idx < rem ? 1 : 0);
    for (int i = 0; i < want; ++i) mix.push_back(d.eval[bucket][std::size_t(i)]);
    ++idx;
  }
  d.eval["mix"] = std::move(mix);
  return d;
}

// One fresh training example; for the mix bucket the underlying length bucket
// cycles so every batch stays an equal three-way blend.
inline TokenExample next_train_example(const ToyTask& t,
                                       const std::string& train_bucket,
                                       Rng& rng, long long ordinal) {
  if (train_bucket != "mix") return toy_example(t, train_bucket, rng);
  const auto& buckets = test_bucket_names();
  return toy_example(t, buckets[std::size_t(ordinal % 3)], rng);
}

// ---------------------------------------------------------------------------
// Matrix cells.
// ---------------------------------------------------------------------------

struct ToyRunConfig {
  long long max_steps = 2000;
  double em_target = 0.90;    // early-stop threshold on the train bucket
  long long probe_every = 50;
  double probe_loss_gate = 0.5;  // skip EM probes while loss is above this
};

inline nlohmann::json toy_run_config_to_json(const ToyRunConfig& rc) {
  return {{"max_steps", rc.max_steps},
          {"em_target", rc.em_target},
          {"probe_every", rc.probe_every},
          {"probe_loss_gate", rc.probe_loss_gate}};
}

struct CellRecord {
  std::string scheme;
  std::string train_bucket;
  std::string config_hash;
  long long steps_used = 0;
  double train_em = 0.0;  // exact-match fraction on the train bucket's eval set
  std::map<std::string, std::map<std::string, double>> scores;  // per test bucket
};

inline std::string cell_record_to_json(const CellRecord& c) {
  nlohmann::json j;
  j["scheme"] = c.scheme;
  j["train_bucket"] = c.train_bucket;
  j["config_hash"] = c.config_hash;
  j["steps_used"] = c.steps_used;
  j["train_em"] = c.train_em;
  j["scores"] = c.scores;
  return j.dump(2) + "\n";
}

inline CellRecord cell_record_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("cell json: ") + e.what());
  }
  for (const char* field :
       {"scheme", "train_bucket", "config_hash", "steps_used", "train_em", "scores"})
    if (!j.contains(field))
      throw ParseError(std::string("cell json: missing field '") + field + "'");
  CellRecord c;
  c.scheme = j["scheme"].get<std::string>();
  c.train_bucket = j["train_bucket"].get<std::string>();
  c.config_hash = j["config_hash"].get<std::string>();
  c.steps_used = j["steps_used"].get<long long>();
  c.train_em = j["train_em"].get<double>();
  c.scores =
      j["scores"].get<std::map<std::string, std::map<std::string, double>>>();
  return c;
}

inline std::string token_string(const std::vector<int>& ids) {
  std::string out;
  for (int id : ids) {
    if (!out.empty()) out += ' ';
    out += std::to_string(id);
  }
  return out;
}

namespace expdetail {

template <typename S>
std::vector<std::string> generate_corpus(const ModelT<S>& model,
                                         const TokenBatch& data,
                                         const GenConfig& g,
                                         const std::string& id_prefix) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < data.size(); ++i)
    out.push_back(token_string(
        generate(model, data[i].first, g, id_prefix + "#" + std::to_string(i))));
  return out;
}

template <typename S>
double em_fraction(const ModelT<S>& model, const TokenBatch& data,
                   const GenConfig& g, const std::string& id_prefix) {
  std::size_t hits = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    auto got = generate(model, data[i].first, g, id_prefix + "#" + std::to_string(i));
    std::vector<int> want(data[i].second.begin(), data[i].second.end() - 1);
    if (got == want) ++hits;
  }
  return double(hits) / double(data.size());
}

inline std::vector<std::string> target_strings(const TokenBatch& data) {
  std::vector<std::string> out;
  for (const auto& ex : data)
    out.push_back(token_string(
        std::vector<int>(ex.second.begin(), ex.second.end() - 1)));
  return out;
}

}  // namespace expdetail

inline std::string toy_config_hash(const Profile& p, const ToyTask& t,
                                   const ToyRunConfig& rc, std::uint64_t seed) {
  nlohmann::json j = {{"profile", profile_to_json(p)},
                      {"task", toy_task_to_json(t)},
                      {"run", toy_run_config_to_json(rc)},
                      {"seed", seed}};
  return hex64(fnv1a64(j.dump()));
}

// Trains one (scheme, train bucket) model on the copy task, early-stopping
// once the train bucket's held-out exact match reaches the target, then
// scores it on all three test buckets with greedy decoding.
inline CellRecord run_toy_cell(PosKind kind, const std::string& train_bucket,
                               const Profile& p, const ToyTask& task,
                               const ToyData& data, const ToyRunConfig& rc,
                               std::uint64_t seed, std::ostream* log = nullptr) {
  std::string scheme = pos_kind_name(kind);
  std::string tag = scheme + "/" + train_bucket;

  ModelConfig mc = p.model;
  mc.scheme.kind = kind;
  mc.vocab_size = task.vocab_size();
  auto model = build_model(mc, derive_seed(seed, "model:" + tag));

  TrainConfig tc = p.train;
  tc.total_steps = rc.max_steps;
  tc.seed = derive_seed(seed, "train:" + tag);
  Trainer trainer(model, tc);

  GenConfig g;
  g.mode = GenMode::Greedy;
  g.max_new_tokens = std::min(p.gen.max_new_tokens, mc.dec_max_len);
  g.seed = derive_seed(seed, "gen:" + tag);

  const TokenBatch& probe_set = data.eval.at(train_bucket);
  Rng pick(derive_seed(seed, "batch:" + tag));

  auto t0 = std::chrono::steady_clock::now();
  double em = 0.0;
  double loss = 0.0;
  long long drawn = 0;
  while (trainer.steps_done() < rc.max_steps) {
    TokenBatch batch;
    for (int i = 0; i < tc.batch_size; ++i)
      batch.push_back(next_train_example(task, train_bucket, pick, drawn++));
    loss = trainer.step(batch, tag);
    if (trainer.steps_done() % rc.probe_every == 0 && loss < rc.probe_loss_gate) {
      em = expdetail::em_fraction(model, probe_set, g, tag + ":probe");
      if (log)
        *log << "[" << tag << "] step " << trainer.steps_done() << " loss "
             << loss << " em " << em << "\n";
      if (em >= rc.em_target) break;
    }
  }

  CellRecord cell;
  cell.scheme = scheme;
  cell.train_bucket = train_bucket;
  cell.steps_used = trainer.steps_done();
  cell.train_em = expdetail::em_fraction(model, probe_set, g, tag + ":final");
  for (const auto& tb : test_bucket_names()) {
    const TokenBatch& eval_set = data.eval.at(tb);
    auto preds = expdetail::generate_corpus(model, eval_set, g, tag + ":" + tb);
    cell.scores[tb] =
        summary_to_scores(score_corpus(preds, expdetail::target_strings(eval_set)));
  }
  if (log) {
    auto secs = std::chrono::duration_cast<std::chrono::seconds>(
                    std::chrono::steady_clock::now() - t0)
                    .count();
    *log << "[" << tag << "] done: steps " << cell.steps_used << ", train em "
         << cell.train_em << ", " << secs << "s\n";
  }
  return cell;
}

struct MatrixRunResult {
  GeneralizationMatrix matrix;
  std::vector<CellRecord> cells;
  std::string config_hash;
};

// Runs (or resumes) the full scheme x train-bucket grid on the copy task and
// writes cells/, matrix.json, matrix.csv, and report.md under out_dir.
inline MatrixRunResult run_toy_matrix(
    const Profile& p, const ToyTask& task, const ToyRunConfig& rc,
    std::uint64_t seed, const std::string& out_dir, bool resume = false,
    const std::vector<std::string>& schemes = default_scheme_names(),
    std::ostream* log = nullptr) {
  std::string hash = toy_config_hash(p, task, rc, seed);
  std::filesystem::create_directories(out_dir + "/cells");
  ToyData data = make_toy_data(task, derive_seed(seed, "data"));

  MatrixRunResult result{GeneralizationMatrix(schemes), {}, hash};
  for (const auto& scheme : schemes) {
    PosKind kind = pos_kind_from_name(scheme);
    for (const auto& bucket : train_bucket_names()) {
      std::string path = out_dir + "/cells/" + scheme + "_" + bucket + ".json";
      CellRecord cell;
      if (resume && std::filesystem::exists(path)) {
        cell = cell_record_from_json(read_file(path));
        if (cell.config_hash != hash)
          throw ConfigError("resume: " + path + " was produced by config " +
                            cell.config_hash + ", current is " + hash);
        if (log) *log << "[" << scheme << "/" << bucket << "] resumed\n";
      } else {
        cell = run_toy_cell(kind, bucket, p, task, data, rc, seed, log);
        cell.config_hash = hash;
        write_file(path, cell_record_to_json(cell));
      }
      for (const auto& tb : test_bucket_names())
        result.matrix.set_cell(scheme, bucket, tb, cell.scores.at(tb), hash);
      result.cells.push_back(cell);
    }
  }
  write_file(out_dir + "/matrix.json", result.matrix.to_json());
  write_file(out_dir + "/matrix.csv", result.matrix.to_csv());
  write_file(out_dir + "/report.md", result.matrix.render_markdown());
  return result;
}

// ---------------------------------------------------------------------------
// Corpus cells: the same grid driven by dataset files and a tokenizer.
// ---------------------------------------------------------------------------

struct TokenizedSet {
  TokenBatch batch;
  std::vector<std::size_t> kept;  // indices into the instance list
  std::size_t skipped = 0;        // instances over the length budgets
};

inline TokenizedSet tokenize_instances(
    const std::vector<CompletionInstance>& instances, const Bpe& bpe,
    int enc_max, int dec_max) {
  TokenizedSet out;
  for (std::size_t i = 0; i < instances.size(); ++i) {
    std::vector<int> src = bpe.encode(instances[i].input);
    std::vector<int> tgt = bpe.encode(instances[i].target);
    tgt.push_back(Bpe::kEos);
    if (src.empty() || src.size() > std::size_t(enc_max) ||
        tgt.size() > std::size_t(dec_max)) {
      ++out.skipped;
      continue;
    }
    out.batch.push_back({std::move(src), std::move(tgt)});
    out.kept.push_back(i);
  }
  return out;
}

using InstanceSets =
    std::map<std::string, std::map<std::string, std::vector<CompletionInstance>>>;

inline InstanceSets load_dataset_dir(const std::string& dir) {
  InstanceSets sets;
  for (const auto& bucket : train_bucket_names())
    for (const std::string split : {"train", "valid", "test"}) {
      std::string path = dir + "/" + bucket + "_" + split + ".jsonl";
      if (!std::filesystem::exists(path)) {
        if (bucket == "mix" && split == "test") continue;  // never built
        throw IoError("dataset dir is missing " + path);
      }
      sets[bucket][split] = instances_from_jsonl(read_file(path));
    }
  return sets;
}

inline std::string corpus_config_hash(const Profile& p, const Bpe& bpe,
                                      std::uint64_t seed) {
  nlohmann::json j = {{"profile", profile_to_json(p)},
                      {"tokenizer", bpe.content_hash()},
                      {"seed", seed}};
  return hex64(fnv1a64(j.dump()));
}

// Trains one (scheme, train bucket) model with the epoch-driven fit loop and
// scores greedy (or profile-configured) generations on every test bucket.
// Prediction files and the best checkpoint land in cell_dir.
inline CellRecord run_corpus_cell(PosKind kind, const std::string& train_bucket,
                                  const Profile& p, const InstanceSets& sets,
                                  const Bpe& bpe, std::uint64_t seed,
                                  const std::string& cell_dir,
                                  std::ostream* log = nullptr) {
  std::string scheme = pos_kind_name(kind);
  std::string tag = scheme + "/" + train_bucket;

  ModelConfig mc = p.model;
  mc.scheme.kind = kind;
  mc.vocab_size = bpe.size();
  auto train =
      tokenize_instances(sets.at(train_bucket).at("train"), bpe,
                         mc.enc_max_len, mc.dec_max_len);
  auto valid =
      tokenize_instances(sets.at(train_bucket).at("valid"), bpe,
                         mc.enc_max_len, mc.dec_max_len);
  if (train.batch.empty() || valid.batch.empty())
    throw ContractError("corpus cell " + tag +
                        ": no instances fit the length budgets");
  if (log)
    *log << "[" << tag << "] train " << train.batch.size() << " (+"
         << train.skipped << " skipped), valid " << valid.batch.size() << "\n";

  auto model = build_model(mc, derive_seed(seed, "model:" + tag));
  TrainConfig tc = p.train;
  tc.seed = derive_seed(seed, "train:" + tag);
  auto fitres =
      fit(model, train.batch, valid.batch, tc, cell_dir, bpe.content_hash());
  auto [best, meta] = load_checkpoint(fitres.best_path);
  if (log)
    *log << "[" << tag << "] best valid loss " << fitres.best_valid_loss
         << " at epoch " << fitres.best_epoch << "\n";

  GenConfig g = p.gen;
  g.max_new_tokens = std::min(g.max_new_tokens, mc.dec_max_len);
  g.seed = derive_seed(seed, "gen:" + tag);

  CellRecord cell;
  cell.scheme = scheme;
  cell.train_bucket = train_bucket;
  cell.steps_used = meta.step;
  for (const auto& tb : test_bucket_names()) {
    const auto& instances = sets.at(tb).at("test");
    auto test = tokenize_instances(instances, bpe, mc.enc_max_len, mc.dec_max_len);
    if (test.batch.empty())
      throw ContractError("corpus cell " + tag + ": empty test set " + tb);
    std::vector<Prediction> preds;
    std::vector<std::string> pred_strs, tgt_strs;
    for (std::size_t k = 0; k < test.batch.size(); ++k) {
      const auto& inst = instances[test.kept[k]];
      std::string id = inst.function_id + "#" + std::to_string(test.kept[k]);
      auto ids = generate(best, test.batch[k].first, g, id);
      Prediction pr;
      pr.instance_id = id;
      pr.prediction = bpe.decode(ids);
      pr.target = inst.target;
      pr.bucket = tb;
      pred_strs.push_back(pr.prediction);
      tgt_strs.push_back(pr.target);
      preds.push_back(std::move(pr));
    }
    write_file(cell_dir + "/preds_" + tb + ".jsonl", predictions_to_jsonl(preds));
    cell.scores[tb] = summary_to_scores(score_corpus(pred_strs, tgt_strs));
    if (tb == train_bucket) cell.train_em = cell.scores[tb].at("em") / 100.0;
  }
  return cell;
}

// Full corpus-driven grid with the same resume and artifact layout as the
// toy runner.
inline MatrixRunResult run_corpus_matrix(
    const Profile& p, const std::string& dataset_dir,
    const std::string& tokenizer_path, std::uint64_t seed,
    const std::string& out_dir, bool resume = false,
    const std::vector<std::string>& schemes = default_scheme_names(),
    std::ostream* log = nullptr) {
  Bpe bpe = Bpe::load(tokenizer_path);
  InstanceSets sets = load_dataset_dir(dataset_dir);
  std::string hash = corpus_config_hash(p, bpe, seed);
  std::filesystem::create_directories(out_dir + "/cells");

  MatrixRunResult result{GeneralizationMatrix(schemes), {}, hash};
  for (const auto& scheme : schemes) {
    PosKind kind = pos_kind_from_name(scheme);
    for (const auto& bucket : train_bucket_names()) {
      std::string path = out_dir + "/cells/" + scheme + "_" + bucket + ".json";
      std::string cell_dir = out_dir + "/cells/" + scheme + "_" + bucket;
      CellRecord cell;
      if (resume && std::filesystem::exists(path)) {
        cell = cell_record_from_json(read_file(path));
        if (cell.config_hash != hash)
          throw ConfigError("resume: " + path + " was produced by config " +
                            cell.config_hash + ", current is " + hash);
        if (log) *log << "[" << scheme << "/" << bucket << "] resumed\n";
      } else {
        std::filesystem::create_directories(cell_dir);
        cell = run_corpus_cell(kind, bucket, p, sets, bpe, seed, cell_dir, log);
        cell.config_hash = hash;
        write_file(path, cell_record_to_json(cell));
      }
      for (const auto& tb : test_bucket_names())
        result.matrix.set_cell(scheme, bucket, tb, cell.scores.at(tb), hash);
      result.cells.push_back(cell);
    }
  }
  write_file(out_dir + "/matrix.json", result.matrix.to_json());
  write_file(out_dir + "/matrix.csv", result.matrix.to_csv());
  write_file(out_dir + "/report.md", result.matrix.render_markdown());
  return result;
}

// ---------------------------------------------------------------------------
// Experiment config: one JSON document resolving to a full run. Unknown keys
// are rejected at every level so a typo cannot silently fall back to a
// default.
// ---------------------------------------------------------------------------

struct ExperimentConfig {
  std::string mode = "toy";  // toy | corpus
  std::string language = "java";
  std::string profile_name = "desk";
  std::vector<std::string> schemes = default_scheme_names();
  std::uint64_t seed = 1;
  std::string dataset_dir;     // corpus mode
  std::string tokenizer_path;  // corpus mode
  std::string out_dir;
  ToyTask task;     // toy mode
  ToyRunConfig run;  // toy mode
  Profile profile;  // named profile with overrides applied

  ExperimentConfig() : profile(profile_by_name(profile_name)) {}
};

namespace expdetail {

inline void require_keys(const nlohmann::json& j, const std::string& where,
                         std::initializer_list<const char*> allowed) {
  if (!j.is_object())
    throw ConfigError("config: " + (where.empty() ? "document" : "'" + where + "'") +
                      " must be a json object");
  for (const auto& item : j.items()) {
    bool known = false;
    for (const char* a : allowed)
      if (item.key() == a) known = true;
    if (!known)
      throw ConfigError("config: unknown key '" + where + item.key() + "'");
  }
}

template <typename T>
void take(const nlohmann::json& j, const char* key, T& into) {
  if (!j.contains(key)) return;
  try {
    into = j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(std::string("config: bad value for key '") + key + "'");
  }
}

}  // namespace expdetail

inline ExperimentConfig experiment_config_from_json(const nlohmann::json& j) {
  using expdetail::require_keys;
  using expdetail::take;
  require_keys(j, "", {"mode", "language", "profile", "schemes", "seed",
                       "dataset_dir", "tokenizer", "out_dir", "task", "run",
                       "model", "train", "gen", "scale"});
  ExperimentConfig c;
  take(j, "mode", c.mode);
  if (c.mode != "toy" && c.mode != "corpus")
    throw ConfigError("config: mode must be toy|corpus, got '" + c.mode + "'");
  take(j, "language", c.language);
  if (c.language != "java" && c.language != "python")
    throw ConfigError("config: language must be java|python, got '" +
                      c.language + "'");
  take(j, "profile", c.profile_name);
  c.profile = profile_by_name(c.profile_name);
  take(j, "schemes", c.schemes);
  if (c.schemes.empty()) throw ConfigError("config: schemes must be nonempty");
  for (const auto& s : c.schemes) pos_kind_from_name(s);
  take(j, "seed", c.seed);
  take(j, "dataset_dir", c.dataset_dir);
  take(j, "tokenizer", c.tokenizer_path);
  take(j, "out_dir", c.out_dir);
  if (j.contains("task")) {
    const auto& t = j.at("task");
    require_keys(t, "task.", {"payload", "first_symbol", "start_marker",
                              "end_marker", "n_eval", "ranges"});
    take(t, "payload", c.task.payload);
    take(t, "first_symbol", c.task.first_symbol);
    take(t, "start_marker", c.task.start_marker);
    take(t, "end_marker", c.task.end_marker);
    take(t, "n_eval", c.task.n_eval);
    if (t.contains("ranges")) {
      require_keys(t.at("ranges"), "task.ranges.", {"short", "medium", "long"});
      for (const auto& item : t.at("ranges").items()) {
        auto v = item.value().get<std::vector<int>>();
        if (v.size() != 2)
          throw ConfigError("config: task.ranges." + item.key() +
                            " needs [lo, hi]");
        c.task.ranges[item.key()] = {v[0], v[1]};
      }
    }
  }
  if (j.contains("run")) {
    const auto& r = j.at("run");
    require_keys(r, "run.",
                 {"max_steps", "em_target", "probe_every", "probe_loss_gate"});
    take(r, "max_steps", c.run.max_steps);
    take(r, "em_target", c.run.em_target);
    take(r, "probe_every", c.run.probe_every);
    take(r, "probe_loss_gate", c.run.probe_loss_gate);
  }
  if (j.contains("model")) {
    const auto& m = j.at("model");
    require_keys(m, "model.",
                 {"d_model", "enc_layers", "enc_heads", "dec_layers",
                  "dec_heads", "enc_max_len", "dec_max_len", "head_dim",
                  "ffn_mult", "vocab_size", "dropout", "tie_output", "scheme"});
    auto& mc = c.profile.model;
    take(m, "d_model", mc.d_model);
    take(m, "enc_layers", mc.enc_layers);
    take(m, "enc_heads", mc.enc_heads);
    take(m, "dec_layers", mc.dec_layers);
    take(m, "dec_heads", mc.dec_heads);
    take(m, "enc_max_len", mc.enc_max_len);
    take(m, "dec_max_len", mc.dec_max_len);
    take(m, "head_dim", mc.head_dim);
    take(m, "ffn_mult", mc.ffn_mult);
    take(m, "vocab_size", mc.vocab_size);
    take(m, "dropout", mc.dropout);
    take(m, "tie_output", mc.tie_output);
    if (m.contains("scheme")) {
      const auto& s = m.at("scheme");
      require_keys(s, "model.scheme.",
                   {"rotary_theta_base", "t5_num_buckets", "t5_max_distance",
                    "xpos_gamma", "xpos_scale_base", "cross_attention_bias"});
      auto& sc = mc.scheme;
      take(s, "rotary_theta_base", sc.rotary_theta_base);
      take(s, "t5_num_buckets", sc.t5_num_buckets);
      take(s, "t5_max_distance", sc.t5_max_distance);
      take(s, "xpos_gamma", sc.xpos_gamma);
      take(s, "xpos_scale_base", sc.xpos_scale_base);
      take(s, "cross_attention_bias", sc.cross_attention_bias);
    }
  }
  if (j.contains("train")) {
    const auto& t = j.at("train");
    require_keys(t, "train.",
                 {"lr_peak", "batch_size", "warmup_steps", "max_epochs",
                  "beta1", "beta2", "eps", "clip_norm", "total_steps"});
    auto& tc = c.profile.train;
    take(t, "lr_peak", tc.lr_peak);
    take(t, "batch_size", tc.batch_size);
    take(t, "warmup_steps", tc.warmup_steps);
    take(t, "max_epochs", tc.max_epochs);
    take(t, "beta1", tc.beta1);
    take(t, "beta2", tc.beta2);
    take(t, "eps", tc.eps);
    take(t, "clip_norm", tc.clip_norm);
    take(t, "total_steps", tc.total_steps);
  }
  if (j.contains("gen")) {
    const auto& g = j.at("gen");
    require_keys(g, "gen.", {"top_p", "max_new_tokens", "mode"});
    take(g, "top_p", c.profile.gen.top_p);
    take(g, "max_new_tokens", c.profile.gen.max_new_tokens);
    if (g.contains("mode")) {
      std::string mode = g.at("mode").get<std::string>();
      if (mode == "greedy")
        c.profile.gen.mode = GenMode::Greedy;
      else if (mode == "nucleus")
        c.profile.gen.mode = GenMode::Nucleus;
      else
        throw ConfigError("config: gen.mode must be greedy|nucleus, got '" +
                          mode + "'");
    }
  }
  take(j, "scale", c.profile.scale);
  return c;
}

inline ExperimentConfig experiment_config_from_text(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("config json: ") + e.what());
  }
  return experiment_config_from_json(j);
}

// Full resolved form, written next to run artifacts for provenance.
inline nlohmann::json experiment_config_to_json(const ExperimentConfig& c) {
  return {{"mode", c.mode},
          {"language", c.language},
          {"profile", c.profile_name},
          {"schemes", c.schemes},
          {"seed", c.seed},
          {"dataset_dir", c.dataset_dir},
          {"tokenizer", c.tokenizer_path},
          {"out_dir", c.out_dir},
          {"task", toy_task_to_json(c.task)},
          {"run", toy_run_config_to_json(c.run)},
          {"resolved_profile", profile_to_json(c.profile)}};
}

}  // namespace lenlab
