#include "scoresync/cli.hpp"

#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "scoresync/corpus.hpp"
#include "scoresync/model.hpp"
#include "scoresync/run_config.hpp"
#include "scoresync/train.hpp"

namespace fs = std::filesystem;

namespace scoresync {

namespace {

fs::path with_suffix(const fs::path& stem, const std::string& suffix) {
  fs::path p = stem;
  p += suffix;
  return p;
}

void ensure_parent(const fs::path& path) {
  if (!path.has_parent_path()) return;
  std::error_code ec;
  fs::create_directories(path.parent_path(), ec);
  if (ec) throw IoError("cannot create " + path.parent_path().string() + ": " + ec.message());
}

void write_text(const fs::path& path, const std::string& text) {
  ensure_parent(path);
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot write " + path.string());
  os << text;
  if (!os) throw IoError("write failed: " + path.string());
}

void write_json(const fs::path& path, const nlohmann::json& j) { write_text(path, j.dump(2) + "\n"); }

nlohmann::json read_json(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(is);
  } catch (const nlohmann::json::parse_error& e) {
    throw IoError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

struct Checkpoint {
  CaModel model;
  nlohmann::json sidecar;
};

Checkpoint load_checkpoint(const fs::path& stem) {
  CaModel model = CaModel::load(stem);
  return {std::move(model), read_json(with_suffix(stem, ".json"))};
}

nlohmann::json checkpoint_provenance(const Checkpoint& ckpt) {
  return {{"config_hash", ckpt.sidecar.value("config_hash", "")},
          {"run_config", ckpt.sidecar.value("run_config", nlohmann::json())}};
}

// ---------------------------------------------------------------------------

struct GenArgs {
  std::string config, out;
  std::uint64_t seed = 0;
  int pieces = 0;
  double structural_frac = 0.0, val_frac = 0.0, test_frac = 0.0;
  CLI::Option *seed_opt, *pieces_opt, *frac_opt, *val_opt, *test_opt;
};

int cmd_gen(const GenArgs& a, std::ostream& out) {
  RunConfig rc = a.config.empty() ? RunConfig{} : RunConfig::load(a.config);
  if (a.seed_opt->count()) rc.corpus.seed = a.seed;
  if (a.pieces_opt->count()) rc.corpus.pieces = a.pieces;
  if (a.frac_opt->count()) rc.corpus.structural_frac = a.structural_frac;
  if (a.val_opt->count()) rc.corpus.val_frac = a.val_frac;
  if (a.test_opt->count()) rc.corpus.test_frac = a.test_frac;
  rc.corpus.validate();
  const Corpus corpus = build_corpus(rc.corpus);
  write_corpus(corpus, a.out);
  write_json(fs::path(a.out) / "run_config.json", rc.to_json());
  std::size_t structural = 0;
  for (const auto& p : corpus.pairs) structural += p.structural;
  out << "wrote " << corpus.pairs.size() << " pairs (" << structural << " structural) to " << a.out << "\n";
  return kExitOk;
}

struct TrainArgs {
  std::string data, config, out;
  int epochs = 0;
  std::uint64_t seed = 0;
  CLI::Option *epochs_opt, *seed_opt;
};

int cmd_train(const TrainArgs& a, std::ostream& out) {
  RunConfig rc = a.config.empty() ? RunConfig{} : RunConfig::load(a.config);
  if (a.epochs_opt->count()) rc.train.epochs = a.epochs;
  if (a.seed_opt->count()) rc.train.seed = a.seed;
  rc.train.validate();
  const Corpus corpus = read_corpus(a.data);
  rc.corpus = corpus.config;
  const auto train = corpus.split("train");
  const auto val = corpus.split("val");
  if (train.empty()) throw ConfigError("corpus " + a.data + " has no training pairs");

  CaModel model(rc.model);
  const FitResult fit_result = fit(model, train, val, rc.train, [&](const EpochRecord& e) {
    out << "epoch " << e.epoch << "/" << rc.train.epochs << "  train " << e.train_loss << "  val " << e.val_loss
        << "\n";
  });

  const fs::path stem = a.out;
  nlohmann::json extra;
  extra["run_config"] = rc.to_json();
  extra["fit"] = {{"epochs_run", fit_result.curve.size()},
                  {"best_epoch", fit_result.best_epoch},
                  {"best_loss", fit_result.best_loss},
                  {"train_pairs", train.size()},
                  {"val_pairs", val.size()}};
  model.save(stem, extra);

  std::ostringstream csv;
  csv.precision(17);
  csv << "epoch,train_loss,val_loss\n";
  for (const auto& e : fit_result.curve) csv << e.epoch << ',' << e.train_loss << ',' << e.val_loss << '\n';
  write_text(with_suffix(stem, ".loss.csv"), csv.str());
  write_json(with_suffix(stem, ".config.json"), rc.to_json());
  out << "checkpoint " << stem.string() << " (best epoch " << fit_result.best_epoch << ")\n";
  return kExitOk;
}

struct AlignArgs {
  std::string ckpt, data, pair, out, emit_matrix;
};

int cmd_align(const AlignArgs& a, std::ostream& out) {
  Checkpoint ckpt = load_checkpoint(a.ckpt);
  const Corpus corpus = read_corpus(a.data);
  const PerformancePair* pair = nullptr;
  try {
    pair = &corpus.find(a.pair);
  } catch (const std::out_of_range&) {
    throw ConfigError("--pair: no pair '" + a.pair + "' in " + a.data);
  }
  const AlignmentPath path = predict_alignment(*pair, ckpt.model);
  nlohmann::json j{{"id", pair->id},
                   {"y_indices", path.y},
                   {"frame_seconds", pair->frame_seconds},
                   {"p", pair->p()},
                   {"q", pair->q()},
                   {"checkpoint", checkpoint_provenance(ckpt)},
                   {"data_config", corpus.config.to_json()}};
  write_json(a.out, j);

  if (!a.emit_matrix.empty()) {
    const std::size_t L = ckpt.model.config().L;
    const Resized r = resize_and_pad(pair->similarity, L);
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t i = 0; i < L; ++i) rows.push_back(std::vector<double>(r.matrix.row(i), r.matrix.row(i) + L));
    write_json(a.emit_matrix, {{"id", pair->id},
                               {"L", L},
                               {"matrix", rows},
                               {"predicted_grid", predict_grid(r.matrix, ckpt.model)},
                               {"ground_truth_grid", path_to_grid(pair->gt_path, r.meta)},
                               {"resize", {{"p", r.meta.p}, {"q", r.meta.q}, {"ratio", r.meta.ratio},
                                           {"score_cols", r.meta.score_cols}}}});
  }
  out << "aligned " << pair->id << " (" << path.size() << " frames) -> " << a.out << "\n";
  return kExitOk;
}

struct EvalArgs {
  std::string ckpt, data, report, split = "test";
  std::vector<double> margins = kDefaultMargins;
};

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  if (a.margins.empty()) throw ConfigError("--margins: at least one margin is required");
  for (double m : a.margins) {
    if (!(m > 0.0)) throw ConfigError("--margins: margins must be positive seconds");
  }
  Checkpoint ckpt = load_checkpoint(a.ckpt);
  const Corpus corpus = read_corpus(a.data);
  std::vector<const PerformancePair*> split;
  if (a.split == "all") {
    for (const auto& p : corpus.pairs) split.push_back(&p);
  } else {
    split = corpus.split(a.split);
  }
  if (split.empty()) throw ConfigError("--split: no pairs in split '" + a.split + "'");
  const EvalReport report = evaluate(split, ckpt.model, a.margins);
  nlohmann::json j = report.to_json();
  j["split"] = a.split;
  j["checkpoint"] = checkpoint_provenance(ckpt);
  j["data_config"] = corpus.config.to_json();
  write_json(a.report, j);
  out << "evaluated " << split.size() << " pairs; model @" << a.margins.front() << "s " << report.overall.front()
      << "%, DTW " << report.baseline_overall.front() << "%\n";
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Performance-to-score alignment with a convolutional-attention network"};
  app.name("scoresync");
  app.require_subcommand(1);

  GenArgs gen_args;
  auto* gen = app.add_subcommand("gen", "Generate a synthetic corpus");
  gen->add_option("--config", gen_args.config, "Run config JSON; its corpus section is used")->check(CLI::ExistingFile);
  gen_args.seed_opt = gen->add_option("--seed", gen_args.seed, "Corpus seed");
  gen_args.pieces_opt = gen->add_option("--pieces", gen_args.pieces, "Number of pairs")->check(CLI::PositiveNumber);
  gen_args.frac_opt = gen->add_option("--structural-frac", gen_args.structural_frac,
                                      "Fraction of pairs with repeats/skips (default 0.2)")
                          ->check(CLI::Range(0.0, 1.0));
  gen_args.val_opt = gen->add_option("--val-frac", gen_args.val_frac)->check(CLI::Range(0.0, 1.0));
  gen_args.test_opt = gen->add_option("--test-frac", gen_args.test_frac)->check(CLI::Range(0.0, 1.0));
  gen->add_option("--out", gen_args.out, "Output directory")->required();

  TrainArgs train_args;
  auto* train = app.add_subcommand("train", "Train a model on a corpus");
  train->add_option("--data", train_args.data, "Corpus directory")->required();
  train->add_option("--config", train_args.config, "Run config JSON");
  train->add_option("--out", train_args.out, "Checkpoint stem (writes .bin, .json, .loss.csv, .config.json)")
      ->required();
  train_args.epochs_opt = train->add_option("--epochs", train_args.epochs)->check(CLI::NonNegativeNumber);
  train_args.seed_opt = train->add_option("--seed", train_args.seed, "Training seed");

  AlignArgs align_args;
  auto* align = app.add_subcommand("align", "Align one pair with a trained model");
  align->add_option("--ckpt", align_args.ckpt, "Checkpoint stem")->required();
  align->add_option("--data", align_args.data, "Corpus directory")->required();
  align->add_option("--pair", align_args.pair, "Pair id, e.g. pair-0003")->required();
  align->add_option("--out", align_args.out, "Output path JSON")->required();
  align->add_option("--emit-matrix", align_args.emit_matrix, "Also dump the LxL input with predicted path");

  EvalArgs eval_args;
  auto* eval = app.add_subcommand("eval", "Evaluate a model against classic DTW");
  eval->add_option("--ckpt", eval_args.ckpt, "Checkpoint stem")->required();
  eval->add_option("--data", eval_args.data, "Corpus directory")->required();
  eval->add_option("--margins", eval_args.margins, "Error margins in seconds")->delimiter(',')->capture_default_str();
  eval->add_option("--split", eval_args.split, "train, val, test or all")
      ->check(CLI::IsMember({"train", "val", "test", "all"}))
      ->capture_default_str();
  eval->add_option("--report", eval_args.report, "Report JSON path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (gen->parsed()) return cmd_gen(gen_args, out);
    if (train->parsed()) return cmd_train(train_args, out);
    if (align->parsed()) return cmd_align(align_args, out);
    return cmd_eval(eval_args, out);
  } catch (const IoError& e) {
    err << "I/O error: " << e.what() << "\n";
    return kExitIo;
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "unexpected failure: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace scoresync
