#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <set>

#include "fixtures.hpp"
#include "lenlab/experiment.hpp"

using namespace lenlab;

namespace {

ToyTask mini_task() {
  ToyTask t;
  t.payload = 24;
  t.n_eval = 12;
  t.ranges = {{"short", {3, 5}}, {"medium", {6, 9}}, {"long", {10, 14}}};
  return t;
}

Profile mini_profile() {
  Profile p = profile_by_name("desk");
  p.model.enc_max_len = 16;
  p.model.dec_max_len = 16;
  p.train.warmup_steps = 30;
  p.gen.max_new_tokens = 15;
  return p;
}

ToyRunConfig mini_run() {
  ToyRunConfig rc;
  rc.max_steps = 900;
  rc.em_target = 0.9;
  rc.probe_every = 50;
  rc.probe_loss_gate = 1.0;
  return rc;
}

}  // namespace

TEST_CASE("profiles pin their scale") {
  auto paper = profile_by_name("paper");
  REQUIRE(paper.model.d_model == 512);
  REQUIRE(paper.model.enc_layers == 6);
  REQUIRE(paper.train.warmup_steps == 2000);
  REQUIRE(paper.train.batch_size == 256);
  REQUIRE(paper.scale == 1.0);

  auto desk = profile_by_name("desk");
  REQUIRE(desk.model.d_model == 64);
  REQUIRE(desk.model.enc_layers == 2);
  REQUIRE(desk.model.enc_heads == 4);
  REQUIRE(desk.train.warmup_steps == 100);
  REQUIRE(desk.scale < 0.01);
  REQUIRE(desk.model.scheme.cross_attention_bias);
  REQUIRE_FALSE(paper.model.scheme.cross_attention_bias);
  desk.model.validate();

  REQUIRE_THROWS_AS(profile_by_name("pocket"), ConfigError);

  auto j = profile_to_json(desk);
  REQUIRE(j["name"] == "desk");
  REQUIRE(j["model"]["d_model"] == 64);
  REQUIRE(j["train"]["lr_peak"] == 3e-3);
  REQUIRE(j["gen"]["mode"] == "nucleus");
}

TEST_CASE("toy data generation") {
  ToyTask task;  // spec-scale ranges
  auto data = make_toy_data(task, 11);
  REQUIRE(data.eval.at("short").size() == 48);
  REQUIRE(data.eval.at("long").size() == 48);

  for (const auto& bucket : test_bucket_names()) {
    auto [lo, hi] = task.bucket_range(bucket);
    for (const auto& [src, tgt] : data.eval.at(bucket)) {
      REQUIRE(src.front() == task.start_marker);
      REQUIRE(src.back() == task.end_marker);
      int payload_len = int(src.size()) - 2;
      REQUIRE(payload_len >= lo);
      REQUIRE(payload_len <= hi);
      std::set<int> uniq(src.begin() + 1, src.end() - 1);
      REQUIRE(int(uniq.size()) == payload_len);  // symbols never repeat
      for (auto it = src.begin() + 1; it != src.end() - 1; ++it) {
        REQUIRE(*it >= task.first_symbol);
        REQUIRE(*it < task.vocab_size());
      }
      REQUIRE(int(tgt.size()) == payload_len + 1);
      REQUIRE(std::equal(src.begin() + 1, src.end() - 1, tgt.begin()));
      REQUIRE(tgt.back() == Bpe::kEos);
    }
  }

  // deterministic per seed
  auto again = make_toy_data(task, 11);
  REQUIRE(again.eval.at("medium") == data.eval.at("medium"));
  auto other = make_toy_data(task, 12);
  REQUIRE(other.eval.at("medium") != data.eval.at("medium"));

  // mix evaluation takes leading thirds of each bucket set
  REQUIRE(data.eval.at("mix").size() == 48);
  TokenBatch expect;
  for (const auto& bucket : test_bucket_names())
    expect.insert(expect.end(), data.eval.at(bucket).begin(),
                  data.eval.at(bucket).begin() + 16);
  REQUIRE(data.eval.at("mix") == expect);

  // online training stream: fresh examples, mix cycles its buckets
  Rng stream(7);
  auto e0 = next_train_example(task, "mix", stream, 0);
  auto e1 = next_train_example(task, "mix", stream, 1);
  auto e2 = next_train_example(task, "mix", stream, 2);
  auto in_range = [&](const TokenExample& e, const std::string& b) {
    auto [lo, hi] = task.bucket_range(b);
    int payload_len = int(e.first.size()) - 2;
    return payload_len >= lo && payload_len <= hi;
  };
  REQUIRE(in_range(e0, "short"));
  REQUIRE(in_range(e1, "medium"));
  REQUIRE(in_range(e2, "long"));
  REQUIRE(in_range(next_train_example(task, "long", stream, 0), "long"));

  REQUIRE_THROWS_AS(task.bucket_range("huge"), ConfigError);
}

TEST_CASE("token strings join ids with spaces") {
  REQUIRE(token_string({5, 17, 140}) == "5 17 140");
  REQUIRE(token_string({}) == "");
  REQUIRE(token_string({9}) == "9");
}

TEST_CASE("instance tokenization enforces length budgets") {
  Bpe bpe = Bpe::train("aa bb cc dd ee ff aa bb aa", 280);
  std::vector<CompletionInstance> instances;
  CompletionInstance ok;
  ok.input = "aa bb " + mask_tag();
  ok.target = "cc dd";
  ok.function_id = "f1";
  ok.bucket = "short";
  instances.push_back(ok);
  CompletionInstance overlong = ok;
  overlong.function_id = "f2";
  for (int i = 0; i < 60; ++i) overlong.input += " ee ff";
  instances.push_back(overlong);

  auto t = tokenize_instances(instances, bpe, 32, 16);
  REQUIRE(t.batch.size() == 1);
  REQUIRE(t.skipped == 1);
  REQUIRE(t.kept == std::vector<std::size_t>{0});
  REQUIRE(t.batch[0].second.back() == Bpe::kEos);
  REQUIRE(bpe.decode(t.batch[0].first) == ok.input);
  auto tgt = t.batch[0].second;
  tgt.pop_back();
  REQUIRE(bpe.decode(tgt) == ok.target);
}

TEST_CASE("cell records round trip through json") {
  CellRecord c;
  c.scheme = "alibi";
  c.train_bucket = "medium";
  c.config_hash = "beef";
  c.steps_used = 123;
  c.train_em = 0.97;
  c.scores["short"] = {{"em", 50.0}, {"bleu", 40.0}};
  auto back = cell_record_from_json(cell_record_to_json(c));
  REQUIRE(back.scheme == c.scheme);
  REQUIRE(back.train_bucket == c.train_bucket);
  REQUIRE(back.config_hash == c.config_hash);
  REQUIRE(back.steps_used == c.steps_used);
  REQUIRE(back.train_em == c.train_em);
  REQUIRE(back.scores == c.scores);
  REQUIRE_THROWS_AS(cell_record_from_json("{}"), ParseError);
  REQUIRE_THROWS_AS(cell_record_from_json("nope"), ParseError);
}

TEST_CASE("config hashes cover every knob") {
  auto p = mini_profile();
  auto t = mini_task();
  auto rc = mini_run();
  REQUIRE(toy_config_hash(p, t, rc, 1) == toy_config_hash(p, t, rc, 1));
  REQUIRE(toy_config_hash(p, t, rc, 1) != toy_config_hash(p, t, rc, 2));
  auto p2 = p;
  p2.train.lr_peak *= 2;
  REQUIRE(toy_config_hash(p, t, rc, 1) != toy_config_hash(p2, t, rc, 1));
  auto t2 = t;
  t2.ranges["long"] = {10, 15};
  REQUIRE(toy_config_hash(p, t, rc, 1) != toy_config_hash(p, t2, rc, 1));
  auto rc2 = rc;
  rc2.max_steps += 1;
  REQUIRE(toy_config_hash(p, t, rc, 1) != toy_config_hash(p, t, rc2, 1));
}

TEST_CASE("a mini matrix trains, persists, and resumes without retraining") {
  auto dir = (std::filesystem::temp_directory_path() / "lenlab_mini_matrix").string();
  std::filesystem::remove_all(dir);
  auto p = mini_profile();
  auto task = mini_task();
  auto rc = mini_run();

  auto run = run_toy_matrix(p, task, rc, 31, dir, false, {"alibi"});
  REQUIRE(run.cells.size() == 4);
  for (const auto& cell : run.cells) {
    INFO(cell.scheme << "/" << cell.train_bucket << " em " << cell.train_em
                     << " steps " << cell.steps_used);
    REQUIRE(cell.train_em >= 0.9);
    REQUIRE(cell.steps_used <= rc.max_steps);
    REQUIRE(cell.config_hash == run.config_hash);
    REQUIRE(cell.scores.size() == 3);
  }
  REQUIRE(run.matrix.complete());
  for (const auto& f : {"matrix.json", "matrix.csv", "report.md",
                        "cells/alibi_short.json", "cells/alibi_mix.json"})
    REQUIRE(std::filesystem::exists(dir + "/" + f));

  // resume must reuse the stored cells verbatim: plant a marker score
  auto path = dir + "/cells/alibi_short.json";
  auto marked = cell_record_from_json(read_file(path));
  marked.scores["short"]["em"] = 77.77;
  write_file(path, cell_record_to_json(marked));
  auto resumed = run_toy_matrix(p, task, rc, 31, dir, true, {"alibi"});
  REQUIRE(resumed.matrix.score("alibi", "short", "short", "em") == 77.77);

  // a config change makes stored cells unusable
  REQUIRE_THROWS_AS(run_toy_matrix(p, task, rc, 32, dir, true, {"alibi"}),
                    ConfigError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("a corpus matrix runs end to end and resumes") {
  namespace fs = std::filesystem;
  std::string dir = (fs::temp_directory_path() / "lenlab_corpus_mx").string();
  fs::remove_all(dir);
  fs::create_directories(dir);

  auto corpus = fixtures::java_corpus(300, 77);
  auto ds = build_dataset(corpus, "java", 11, 0.0004);
  build_mix(ds, 11);
  write_dataset_dir(ds, dir + "/ds");

  std::string text;
  for (const auto& bucket : test_bucket_names())
    for (const auto& inst : ds.sets.at(bucket).at("train")) {
      text += inst.input;
      text += '\n';
      text += inst.target;
      text += '\n';
    }
  Bpe bpe = Bpe::train(text, 500);
  bpe.save(dir + "/tok.json");

  Profile p = profile_by_name("desk");
  p.model.d_model = 32;
  p.model.enc_heads = 2;
  p.model.dec_heads = 2;
  p.model.head_dim = 16;
  p.model.enc_max_len = 192;
  p.model.dec_max_len = 28;
  p.train.max_epochs = 2;
  p.train.warmup_steps = 5;
  p.train.batch_size = 16;
  p.gen.max_new_tokens = 24;
  p.gen.mode = GenMode::Greedy;

  auto run = run_corpus_matrix(p, dir + "/ds", dir + "/tok.json", 3,
                               dir + "/out", false, {"sinusoidal"});
  REQUIRE(run.cells.size() == 4);
  REQUIRE(run.matrix.complete());
  for (const auto& bucket : train_bucket_names()) {
    std::string cell_dir = dir + "/out/cells/sinusoidal_" + bucket;
    REQUIRE(fs::exists(cell_dir + ".json"));
    REQUIRE(fs::exists(cell_dir + "/best.ckpt"));
    REQUIRE(fs::exists(cell_dir + "/history.csv"));
    for (const auto& tb : test_bucket_names()) {
      auto preds =
          predictions_from_jsonl(read_file(cell_dir + "/preds_" + tb + ".jsonl"));
      REQUIRE(!preds.empty());
      for (const auto& pr : preds) REQUIRE(pr.bucket == tb);
    }
  }
  REQUIRE(fs::exists(dir + "/out/report.md"));

  // resume reuses stored cells without retraining
  auto path = dir + "/out/cells/sinusoidal_long.json";
  auto marked = cell_record_from_json(read_file(path));
  marked.scores["short"]["em"] = 33.33;
  write_file(path, cell_record_to_json(marked));
  auto resumed = run_corpus_matrix(p, dir + "/ds", dir + "/tok.json", 3,
                                   dir + "/out", true, {"sinusoidal"});
  REQUIRE(resumed.matrix.score("sinusoidal", "long", "short", "em") == 33.33);
  std::filesystem::remove_all(dir);
}

TEST_CASE("experiment configs parse with strict keys") {
  // defaults
  auto c = experiment_config_from_text("{}");
  REQUIRE(c.mode == "toy");
  REQUIRE(c.profile_name == "desk");
  REQUIRE(c.schemes == default_scheme_names());
  REQUIRE(c.profile.model.d_model == 64);

  // overrides land in the resolved profile
  auto full = experiment_config_from_text(R"({
    "mode": "corpus", "language": "python", "profile": "paper",
    "schemes": ["t5", "alibi"], "seed": 9,
    "dataset_dir": "ds", "tokenizer": "tok.json", "out_dir": "out",
    "task": {"payload": 30, "first_symbol": 6, "start_marker": 2,
             "end_marker": 3, "n_eval": 10,
             "ranges": {"short": [2, 4], "medium": [5, 8], "long": [9, 12]}},
    "run": {"max_steps": 50, "em_target": 0.5, "probe_every": 10,
            "probe_loss_gate": 2.0},
    "model": {"d_model": 48, "head_dim": 12,
              "scheme": {"t5_num_buckets": 16, "t5_max_distance": 64}},
    "train": {"lr_peak": 0.002, "batch_size": 8, "max_epochs": 1},
    "gen": {"top_p": 0.9, "max_new_tokens": 20, "mode": "greedy"},
    "scale": 0.25
  })");
  REQUIRE(full.mode == "corpus");
  REQUIRE(full.language == "python");
  REQUIRE(full.profile_name == "paper");
  REQUIRE(full.schemes == std::vector<std::string>{"t5", "alibi"});
  REQUIRE(full.seed == 9);
  REQUIRE(full.task.payload == 30);
  REQUIRE(full.task.bucket_range("medium") == std::make_pair(5, 8));
  REQUIRE(full.run.max_steps == 50);
  REQUIRE(full.profile.model.d_model == 48);
  REQUIRE(full.profile.model.head_dim == 12);
  REQUIRE(full.profile.model.enc_layers == 6);  // paper default kept
  REQUIRE(full.profile.model.scheme.t5_num_buckets == 16);
  REQUIRE(full.profile.train.lr_peak == 0.002);
  REQUIRE(full.profile.train.beta1 == 0.9);
  REQUIRE(full.profile.gen.mode == GenMode::Greedy);
  REQUIRE(full.profile.gen.top_p == 0.9);
  REQUIRE(full.profile.scale == 0.25);

  // unknown keys are named, at every level
  REQUIRE_THROWS_WITH(experiment_config_from_text(R"({"modle": 1})"),
                      Catch::Matchers::ContainsSubstring("unknown key 'modle'"));
  REQUIRE_THROWS_WITH(
      experiment_config_from_text(R"({"model": {"dmodel": 1}})"),
      Catch::Matchers::ContainsSubstring("unknown key 'model.dmodel'"));
  REQUIRE_THROWS_WITH(
      experiment_config_from_text(R"({"task": {"ranges": {"huge": [1, 2]}}})"),
      Catch::Matchers::ContainsSubstring("unknown key 'task.ranges.huge'"));
  REQUIRE_THROWS_WITH(
      experiment_config_from_text(R"({"gen": {"mode": "beam"}})"),
      Catch::Matchers::ContainsSubstring("greedy|nucleus"));

  // bad values
  REQUIRE_THROWS_AS(experiment_config_from_text(R"({"mode": "dream"})"),
                    ConfigError);
  REQUIRE_THROWS_AS(experiment_config_from_text(R"({"language": "go"})"),
                    ConfigError);
  REQUIRE_THROWS_AS(experiment_config_from_text(R"({"schemes": ["rope9"]})"),
                    ConfigError);
  REQUIRE_THROWS_AS(experiment_config_from_text(R"({"seed": "abc"})"),
                    ConfigError);
  REQUIRE_THROWS_AS(experiment_config_from_text("not json"), ParseError);

  // provenance form carries the resolved profile
  auto j = experiment_config_to_json(full);
  REQUIRE(j.at("profile") == "paper");
  REQUIRE(j.at("resolved_profile").at("model").at("d_model") == 48);
  REQUIRE(j.at("task").at("payload") == 30);
}
