// lenlab: experiment orchestration. Subcommands wire the pipeline end to end:
// build a bucketed completion dataset, train a tokenizer, train one model,
// generate and score predictions, render reports, and run the full scheme x
// train-bucket generalization matrix (toy copy task or corpus-driven).
//
// Exit codes: 0 ok, 2 bad config or unreadable input, 1 internal failure.
// LENLAB_DATA_DIR sets the root for default artifact paths.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "lenlab/experiment.hpp"

using namespace lenlab;

namespace {

std::string data_root() {
  const char* env = std::getenv("LENLAB_DATA_DIR");
  return (env && *env) ? std::string(env) : std::string(".");
}

int cmd_build_dataset(const std::string& corpus_path,
                      const std::string& language, std::uint64_t seed,
                      double scale, const std::string& out_dir) {
  auto corpus = corpus_from_jsonl(read_file(corpus_path));
  auto result = build_dataset(corpus, language, seed, scale);
  build_mix(result, seed);
  write_dataset_dir(result, out_dir);
  std::cout << "functions kept " << result.stats.functions_kept << "/"
            << result.stats.functions_total << ", instances "
            << result.stats.instances_kept << " (dedup dropped "
            << result.stats.dedup_dropped << ")\n";
  for (const auto& [bucket, splits] : result.sets)
    for (const auto& [split, v] : splits)
      std::cout << "  " << bucket << "/" << split << ": " << v.size() << "\n";
  std::cout << "wrote " << out_dir << "\n";
  return 0;
}

int cmd_train_tokenizer(const std::string& data_dir, int vocab,
                        const std::string& out_path) {
  auto sets = load_dataset_dir(data_dir);
  std::string text;
  for (const auto& bucket : test_bucket_names())
    for (const auto& inst : sets.at(bucket).at("train")) {
      text += inst.input;
      text += '\n';
      text += inst.target;
      text += '\n';
    }
  Bpe bpe = Bpe::train(text, std::size_t(vocab));
  bpe.save(out_path);
  std::cout << "vocab " << bpe.size() << ", hash " << bpe.content_hash()
            << ", wrote " << out_path << "\n";
  return 0;
}

struct TrainOverrides {
  int epochs = 0;
  int warmup = -1;
  int batch_size = 0;
  double lr = 0.0;
};

int cmd_train(const std::string& data_dir, const std::string& tok_path,
              const std::string& scheme, const std::string& bucket,
              const std::string& profile_name, std::uint64_t seed,
              const std::string& out_dir, const TrainOverrides& ov) {
  Profile p = profile_by_name(profile_name);
  if (ov.epochs > 0) p.train.max_epochs = ov.epochs;
  if (ov.warmup >= 0) p.train.warmup_steps = ov.warmup;
  if (ov.batch_size > 0) p.train.batch_size = ov.batch_size;
  if (ov.lr > 0.0) p.train.lr_peak = ov.lr;
  Bpe bpe = Bpe::load(tok_path);
  auto sets = load_dataset_dir(data_dir);
  std::string tag = scheme + "/" + bucket;

  ModelConfig mc = p.model;
  mc.scheme.kind = pos_kind_from_name(scheme);
  mc.vocab_size = bpe.size();
  auto train = tokenize_instances(sets.at(bucket).at("train"), bpe,
                                  mc.enc_max_len, mc.dec_max_len);
  auto valid = tokenize_instances(sets.at(bucket).at("valid"), bpe,
                                  mc.enc_max_len, mc.dec_max_len);
  if (train.batch.empty() || valid.batch.empty())
    throw ConfigError("train: no " + bucket +
                      " instances fit the model's length budgets");
  std::cout << "train " << train.batch.size() << " (+" << train.skipped
            << " skipped), valid " << valid.batch.size() << " (+"
            << valid.skipped << " skipped)\n";

  std::filesystem::create_directories(out_dir);
  auto model = build_model(mc, derive_seed(seed, "model:" + tag));
  TrainConfig tc = p.train;
  tc.seed = derive_seed(seed, "train:" + tag);
  auto res = fit(model, train.batch, valid.batch, tc, out_dir,
                 bpe.content_hash());
  std::cout << "best checkpoint " << res.best_path << " (valid loss "
            << res.best_valid_loss << ", epoch " << res.best_epoch << ")\n";
  return 0;
}

int cmd_generate(const std::string& ckpt_path, const std::string& tok_path,
                 const std::string& instances_path, const std::string& out_path,
                 double top_p, bool greedy, int max_new, std::uint64_t seed) {
  auto [model, meta] = load_checkpoint(ckpt_path);
  Bpe bpe = Bpe::load(tok_path);
  if (!meta.tokenizer_hash.empty() && meta.tokenizer_hash != bpe.content_hash())
    throw ConfigError("generate: checkpoint was trained with tokenizer " +
                      meta.tokenizer_hash + " but " + tok_path + " hashes to " +
                      bpe.content_hash());
  auto instances = instances_from_jsonl(read_file(instances_path));
  auto set = tokenize_instances(instances, bpe, model.cfg.enc_max_len,
                                model.cfg.dec_max_len);

  GenConfig g;
  g.top_p = top_p;
  g.mode = greedy ? GenMode::Greedy : GenMode::Nucleus;
  g.max_new_tokens = std::min(max_new, model.cfg.dec_max_len);
  g.seed = seed;

  std::vector<Prediction> preds;
  for (std::size_t k = 0; k < set.batch.size(); ++k) {
    const auto& inst = instances[set.kept[k]];
    Prediction pr;
    pr.instance_id = inst.function_id + "#" + std::to_string(set.kept[k]);
    pr.prediction = bpe.decode(generate(model, set.batch[k].first, g,
                                        pr.instance_id));
    pr.target = inst.target;
    pr.bucket = inst.bucket;
    preds.push_back(std::move(pr));
  }
  write_file(out_path, predictions_to_jsonl(preds));
  std::cout << "generated " << preds.size() << " predictions (" << set.skipped
            << " skipped over length budgets), wrote " << out_path << "\n";
  return 0;
}

int cmd_evaluate(const std::string& preds_path, const std::string& out_path) {
  auto preds = predictions_from_jsonl(read_file(preds_path));
  if (preds.empty())
    throw ConfigError("evaluate: no predictions in " + preds_path);
  std::vector<std::string> hyp, ref;
  for (const auto& p : preds) {
    hyp.push_back(p.prediction);
    ref.push_back(p.target);
  }
  auto scores = summary_to_scores(score_corpus(hyp, ref));
  for (const auto& [metric, value] : scores)
    std::printf("%-8s %.4f\n", metric.c_str(), value);
  if (!out_path.empty()) {
    nlohmann::json j = scores;
    j["n"] = preds.size();
    write_file(out_path, j.dump(2) + "\n");
    std::cout << "wrote " << out_path << "\n";
  }
  return 0;
}

int cmd_report(const std::string& matrix_path, std::string out_dir) {
  auto matrix = GeneralizationMatrix::from_json(read_file(matrix_path));
  matrix.require_complete();
  if (out_dir.empty()) {
    out_dir = std::filesystem::path(matrix_path).parent_path().string();
    if (out_dir.empty()) out_dir = ".";
  }
  std::filesystem::create_directories(out_dir);
  write_file(out_dir + "/report.md", matrix.render_markdown());
  write_file(out_dir + "/matrix.csv", matrix.to_csv());
  std::cout << "config " << matrix.config_hash() << ", wrote " << out_dir
            << "/report.md and " << out_dir << "/matrix.csv\n";
  return 0;
}

int cmd_run_matrix(ExperimentConfig c, bool resume, bool quiet) {
  if (c.mode == "corpus" && (c.dataset_dir.empty() || c.tokenizer_path.empty()))
    throw ConfigError("run-matrix: corpus mode needs --data and --tokenizer");
  std::filesystem::create_directories(c.out_dir);
  write_file(c.out_dir + "/config.json",
             experiment_config_to_json(c).dump(2) + "\n");
  std::ostream* log = quiet ? nullptr : &std::cerr;
  MatrixRunResult r =
      c.mode == "toy"
          ? run_toy_matrix(c.profile, c.task, c.run, c.seed, c.out_dir, resume,
                           c.schemes, log)
          : run_corpus_matrix(c.profile, c.dataset_dir, c.tokenizer_path,
                              c.seed, c.out_dir, resume, c.schemes, log);
  std::cout << "config " << r.config_hash << ", " << r.cells.size()
            << " cells\n";
  for (const auto& cell : r.cells)
    std::printf("  %-10s %-6s  steps %-5lld  train em %.3f\n",
                cell.scheme.c_str(), cell.train_bucket.c_str(),
                cell.steps_used, cell.train_em);
  std::cout << "wrote " << c.out_dir << "/report.md\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"length-generalization laboratory for code completion models"};
  app.require_subcommand(1);
  int rc = 0;

  auto* bd = app.add_subcommand("build-dataset",
                                "Build bucketed completion datasets from a "
                                "function corpus");
  std::string bd_corpus, bd_language = "java";
  std::string bd_out = data_root() + "/dataset";
  std::uint64_t bd_seed = 1;
  double bd_scale = 1.0;
  bd->add_option("--corpus", bd_corpus, "Function corpus (jsonl)")->required();
  bd->add_option("--language", bd_language, "java|python")
      ->check(CLI::IsMember({"java", "python"}));
  bd->add_option("--seed", bd_seed, "Split/sampling seed");
  bd->add_option("--scale", bd_scale, "Cap multiplier")->capture_default_str();
  bd->add_option("--out", bd_out, "Output directory")->capture_default_str();
  bd->callback([&] {
    rc = cmd_build_dataset(bd_corpus, bd_language, bd_seed, bd_scale, bd_out);
  });

  auto* tt = app.add_subcommand("train-tokenizer",
                                "Train a BPE vocabulary on dataset train "
                                "splits");
  std::string tt_data = data_root() + "/dataset";
  std::string tt_out = data_root() + "/tokenizer.json";
  int tt_vocab = 512;
  tt->add_option("--data", tt_data, "Dataset directory")->capture_default_str();
  tt->add_option("--vocab-size", tt_vocab, "Vocabulary size")
      ->capture_default_str();
  tt->add_option("--out", tt_out, "Vocabulary file")->capture_default_str();
  tt->callback([&] { rc = cmd_train_tokenizer(tt_data, tt_vocab, tt_out); });

  auto* tr = app.add_subcommand("train",
                                "Train one scheme on one length bucket");
  std::string tr_data = data_root() + "/dataset";
  std::string tr_tok = data_root() + "/tokenizer.json";
  std::string tr_scheme, tr_bucket, tr_profile = "desk";
  std::string tr_out = data_root() + "/train";
  std::uint64_t tr_seed = 1;
  tr->add_option("--data", tr_data, "Dataset directory")->capture_default_str();
  tr->add_option("--tokenizer", tr_tok, "Vocabulary file")
      ->capture_default_str();
  tr->add_option("--scheme", tr_scheme, "sinusoidal|xpos|alibi|t5")->required();
  tr->add_option("--bucket", tr_bucket, "short|medium|long|mix")
      ->required()
      ->check(CLI::IsMember({"short", "medium", "long", "mix"}));
  tr->add_option("--profile", tr_profile, "desk|paper")->capture_default_str();
  tr->add_option("--seed", tr_seed, "Training seed");
  tr->add_option("--out", tr_out, "Checkpoint directory")
      ->capture_default_str();
  TrainOverrides tr_ov;
  tr->add_option("--epochs", tr_ov.epochs, "Override profile epochs");
  tr->add_option("--warmup", tr_ov.warmup, "Override warmup steps");
  tr->add_option("--batch-size", tr_ov.batch_size, "Override batch size");
  tr->add_option("--lr", tr_ov.lr, "Override peak learning rate");
  tr->callback([&] {
    rc = cmd_train(tr_data, tr_tok, tr_scheme, tr_bucket, tr_profile, tr_seed,
                   tr_out, tr_ov);
  });

  auto* ge = app.add_subcommand("generate",
                                "Generate completions for instances (jsonl)");
  std::string ge_ckpt, ge_tok = data_root() + "/tokenizer.json";
  std::string ge_in, ge_out = data_root() + "/predictions.jsonl";
  double ge_top_p = 0.95;
  bool ge_greedy = false;
  int ge_max_new = 128;
  std::uint64_t ge_seed = 1;
  ge->add_option("--checkpoint", ge_ckpt, "Model checkpoint")->required();
  ge->add_option("--tokenizer", ge_tok, "Vocabulary file")
      ->capture_default_str();
  ge->add_option("--instances", ge_in, "Instances (jsonl)")->required();
  ge->add_option("--out", ge_out, "Predictions file")->capture_default_str();
  ge->add_option("--top-p", ge_top_p, "Nucleus mass")->capture_default_str();
  ge->add_flag("--greedy", ge_greedy, "Greedy decoding instead of nucleus");
  ge->add_option("--max-new", ge_max_new, "Max generated tokens")
      ->capture_default_str();
  ge->add_option("--seed", ge_seed, "Sampling seed");
  ge->callback([&] {
    rc = cmd_generate(ge_ckpt, ge_tok, ge_in, ge_out, ge_top_p, ge_greedy,
                      ge_max_new, ge_seed);
  });

  auto* ev = app.add_subcommand("evaluate",
                                "Score a predictions file against its targets");
  std::string ev_preds, ev_out;
  ev->add_option("--predictions", ev_preds, "Predictions (jsonl)")->required();
  ev->add_option("--out", ev_out, "Also write scores as json");
  ev->callback([&] { rc = cmd_evaluate(ev_preds, ev_out); });

  auto* rp = app.add_subcommand("report",
                                "Render markdown + csv from a matrix json");
  std::string rp_matrix, rp_out;
  rp->add_option("--matrix", rp_matrix, "matrix.json path")->required();
  rp->add_option("--out", rp_out, "Output directory (default: alongside)");
  rp->callback([&] { rc = cmd_report(rp_matrix, rp_out); });

  auto* rm = app.add_subcommand("run-matrix",
                                "Run the full scheme x train-bucket grid");
  std::string rm_config, rm_mode, rm_profile, rm_data, rm_tok, rm_out;
  std::vector<std::string> rm_schemes;
  std::uint64_t rm_seed = 0;
  long long rm_max_steps = 0;
  double rm_em_target = -1.0;
  bool rm_resume = false, rm_quiet = false;
  rm->add_option("--config", rm_config, "Experiment config (json)");
  rm->add_option("--mode", rm_mode, "toy|corpus")
      ->check(CLI::IsMember({"toy", "corpus"}));
  rm->add_option("--profile", rm_profile, "desk|paper");
  rm->add_option("--schemes", rm_schemes, "Subset of schemes")->delimiter(',');
  rm->add_option("--seed", rm_seed, "Experiment seed");
  rm->add_option("--data", rm_data, "Dataset directory (corpus mode)");
  rm->add_option("--tokenizer", rm_tok, "Vocabulary file (corpus mode)");
  rm->add_option("--out", rm_out, "Artifact directory");
  rm->add_option("--max-steps", rm_max_steps, "Toy: step budget per cell");
  rm->add_option("--em-target", rm_em_target, "Toy: early-stop exact match");
  rm->add_flag("--resume", rm_resume, "Reuse completed cells from --out");
  rm->add_flag("--quiet", rm_quiet, "Suppress progress on stderr");
  rm->callback([&] {
    ExperimentConfig c;
    if (!rm_config.empty())
      c = experiment_config_from_text(read_file(rm_config));
    if (rm->count("--mode")) c.mode = rm_mode;
    if (rm->count("--profile")) {
      c.profile_name = rm_profile;
      c.profile = profile_by_name(rm_profile);
    }
    if (rm->count("--schemes")) {
      for (const auto& s : rm_schemes) pos_kind_from_name(s);
      c.schemes = rm_schemes;
    }
    if (rm->count("--seed")) c.seed = rm_seed;
    if (rm->count("--data")) c.dataset_dir = rm_data;
    if (rm->count("--tokenizer")) c.tokenizer_path = rm_tok;
    if (rm->count("--out")) c.out_dir = rm_out;
    if (rm->count("--max-steps")) c.run.max_steps = rm_max_steps;
    if (rm->count("--em-target")) c.run.em_target = rm_em_target;
    if (c.out_dir.empty()) c.out_dir = data_root() + "/matrix";
    rc = cmd_run_matrix(std::move(c), rm_resume, rm_quiet);
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << "lenlab: " << e.what() << "\n";
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "lenlab: " << e.what() << "\n";
    return 2;
  } catch (const ParseError& e) {
    std::cerr << "lenlab: " << e.what() << "\n";
    return 2;
  } catch (const IoError& e) {
    std::cerr << "lenlab: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "lenlab: " << e.what() << "\n";
    return 1;
  }
  return rc;
}
