// dln.cc

// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

// Command-line front end: synthetic data generation, training, evaluation,
// parameter counting, gradient checking, and summary-vector export.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dln/adapt.h"
#include "dln/checkpoint.h"
#include "dln/config.h"
#include "dln/data.h"
#include "dln/recurrent.h"
#include "dln/train.h"

namespace fs = std::filesystem;
using namespace dln;

namespace {

std::string with_commas(Index n) {
  std::string digits = std::to_string(n);
  std::string out;
  int count = 0;
  for (auto it = digits.rbegin(); it != digits.rend(); ++it) {
    if (count && count % 3 == 0) out.push_back(',');
    out.push_back(*it);
    ++count;
  }
  std::reverse(out.begin(), out.end());
  return out;
}

bool on_off(const std::string& v) {
  if (v == "on") return true;
  if (v == "off") return false;
  fail("expected \"on\" or \"off\", got \"" + v + "\"");
}

std::vector<Index> parse_layer_list(const std::string& s, Index num_layers) {
  std::vector<Index> layers;
  if (s == "all") {
    for (Index l = 1; l <= num_layers; ++l) layers.push_back(l);
    return layers;
  }
  std::size_t pos = 0;
  while (pos < s.size()) {
    std::size_t comma = s.find(',', pos);
    if (comma == std::string::npos) comma = s.size();
    const std::string tok = s.substr(pos, comma - pos);
    try {
      layers.push_back(static_cast<Index>(std::stoll(tok)));
    } catch (const std::exception&) {
      fail("--layers: cannot parse \"" + tok + "\" as a layer index");
    }
    pos = comma + 1;
  }
  if (layers.empty()) fail("--layers: empty list");
  return layers;
}

Index count_speakers(const Dataset& ds) {
  std::set<std::string> speakers;
  for (const Utterance& u : ds.utterances) speakers.insert(u.speaker_id);
  return static_cast<Index>(speakers.size());
}

double modal_speaker_fraction(const std::vector<SummaryRecord>& records) {
  std::map<std::string, std::size_t> counts;
  for (const SummaryRecord& r : records) ++counts[r.speaker_id];
  std::size_t best = 0;
  for (const auto& [speaker, c] : counts) best = std::max(best, c);
  return static_cast<double>(best) / static_cast<double>(records.size());
}

// ---- gen-data -------------------------------------------------------------------

struct GenDataArgs {
  SyntheticSpec spec;
  std::string out;
};

int cmd_gen_data(const GenDataArgs& args) {
  SyntheticData data = gen_synthetic(args.spec);
  const struct {
    const char* name;
    const Dataset* ds;
  } splits[] = {{"train", &data.train}, {"dev", &data.dev}, {"test", &data.test}};
  for (const auto& split : splits) {
    save_dataset(*split.ds, (fs::path(args.out) / split.name).string());
    Index frames = 0;
    for (const Utterance& u : split.ds->utterances) frames += u.frames.rows();
    std::printf("%s: %lld speakers, %zu utterances, %lld frames\n", split.name,
                static_cast<long long>(count_speakers(*split.ds)),
                split.ds->utterances.size(), static_cast<long long>(frames));
  }
  std::printf("wrote dataset to %s\n", args.out.c_str());
  return 0;
}

// ---- train ----------------------------------------------------------------------

struct TrainArgs {
  std::string config = "wsj-baseline";
  std::string data;
  std::string dln;  // "", "on" or "off"
  double lambda = 0.0;
  bool lambda_set = false;
  Index epochs = 0;
  bool epochs_set = false;
  Index batch_size = 0;
  bool batch_set = false;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::string out;
};

int cmd_train(const TrainArgs& args) {
  RunConfig rc = resolve_run_config(args.config);
  if (!args.dln.empty()) rc.model.dln = on_off(args.dln);
  if (args.lambda_set) {
    rc.train.lambda = args.lambda;
    rc.model.lambda = args.lambda;
  }
  if (args.epochs_set) rc.train.epochs = args.epochs;
  if (args.batch_set) rc.train.batch_size = args.batch_size;
  if (args.seed_set) rc.train.seed = args.seed;
  if (!args.data.empty()) {
    rc.train_data = (fs::path(args.data) / "train").string();
    rc.dev_data = (fs::path(args.data) / "dev").string();
  }
  if (rc.train_data.empty() || rc.dev_data.empty())
    fail("no dataset: pass --data DIR (containing train/ and dev/) or set "
         "the data section of the configuration file");

  Dataset train_set = load_dataset(rc.train_data);
  Dataset dev_set = load_dataset(rc.dev_data);

  Model model = build_model(rc.model);
  init_model(&model, rc.train.seed);

  fs::create_directories(args.out);
  const std::string log_path = (fs::path(args.out) / "train_log.csv").string();
  std::ofstream log(log_path, std::ios::trunc);
  if (!log) fail("cannot open " + log_path + " for writing");
  log << "epoch,mean_loss,mean_penalty,train_fer,dev_fer\n";

  std::printf("training %s model: %lld layers, %lld cells, %lld projection, "
              "%s parameters, lambda %g\n",
              rc.model.dln ? "DLN" : "static-LN",
              static_cast<long long>(rc.model.num_layers),
              static_cast<long long>(rc.model.cell_size),
              static_cast<long long>(rc.model.proj_size),
              with_commas(count_params(rc.model)).c_str(), rc.train.lambda);

  auto last = std::chrono::steady_clock::now();
  FitResult result = fit(
      std::move(model), train_set, dev_set, rc.train,
      [&](Index epoch, const EpochStats& s) {
        char line[256];
        std::snprintf(line, sizeof(line), "%lld,%.6f,%.6f,%.6f,%.6f",
                      static_cast<long long>(epoch), s.mean_loss,
                      s.mean_penalty, s.train_fer, s.dev_fer);
        log << line << '\n';
        log.flush();
        const auto now = std::chrono::steady_clock::now();
        const double secs =
            std::chrono::duration<double>(now - last).count();
        last = now;
        std::printf("epoch %lld: loss %.6f penalty %.6f train FER %.2f%% "
                    "dev FER %.2f%% (%.1fs)\n",
                    static_cast<long long>(epoch), s.mean_loss, s.mean_penalty,
                    s.train_fer, s.dev_fer, secs);
        std::fflush(stdout);
      });
  if (!log) fail("failed writing " + log_path);

  const std::string ckpt = (fs::path(args.out) / "checkpoint").string();
  save_checkpoint(result.best, ckpt);
  if (result.best_epoch > 0)
    std::printf("best epoch %lld (dev FER %.2f%%); checkpoint written to %s\n",
                static_cast<long long>(result.best_epoch),
                result.epochs[static_cast<std::size_t>(result.best_epoch - 1)]
                    .dev_fer,
                ckpt.c_str());
  else
    std::printf("0 epochs requested; initialization written to %s\n",
                ckpt.c_str());
  return 0;
}

// ---- eval -----------------------------------------------------------------------

struct EvalArgs {
  std::string model;
  std::string data;
};

int cmd_eval(const EvalArgs& args) {
  Model model = load_checkpoint(args.model);
  bool any = false;
  if (fs::exists(fs::path(args.data) / "manifest.json")) {
    Dataset ds = load_dataset(args.data);
    std::printf("FER: %.2f%%\n", frame_error_rate(model, ds));
    any = true;
  } else {
    for (const char* split : {"train", "dev", "test"}) {
      const fs::path dir = fs::path(args.data) / split;
      if (!fs::exists(dir / "manifest.json")) continue;
      Dataset ds = load_dataset(dir.string());
      std::printf("%s FER: %.2f%%\n", split, frame_error_rate(model, ds));
      any = true;
    }
  }
  if (!any)
    fail("no dataset found at " + args.data +
         " (expected manifest.json or train/dev/test subdirectories)");
  return 0;
}

// ---- count-params ---------------------------------------------------------------

struct CountArgs {
  std::string config = "wsj-baseline";
  std::string dln;
};

int cmd_count_params(const CountArgs& args) {
  RunConfig rc = resolve_run_config(args.config);
  if (!args.dln.empty()) rc.model.dln = on_off(args.dln);
  const Index n = count_params(rc.model);
  std::printf("%s (%s)\n", with_commas(n).c_str(),
              param_count_millions(n).c_str());
  return 0;
}

// ---- grad-check -----------------------------------------------------------------

struct GradCheckArgs {
  std::string config;  // empty = built-in tiny configuration
  std::string dln = "on";
  double lambda = 10.0;
  std::uint64_t seed = 1;
  double tolerance = 1e-4;
  double h = 1e-5;
};

int cmd_grad_check(const GradCheckArgs& args) {
  if (args.tolerance <= 0.0) fail("--tolerance must be positive");
  StackConfig cfg;
  if (args.config.empty()) {
    cfg.num_layers = 2;
    cfg.cell_size = 8;
    cfg.proj_size = 4;
    cfg.summary_size = 3;
    cfg.input_dim = 5;
    cfg.num_classes = 4;
  } else {
    cfg = resolve_run_config(args.config).model;
  }
  cfg.dln = on_off(args.dln);
  cfg.lambda = args.lambda;
  cfg.validate();

  Model model = build_model(cfg);
  init_model(&model, args.seed);
  std::vector<Array> params;
  std::vector<std::string> names;
  for_each_param(model, [&](const std::string& name, const Array& a) {
    params.push_back(a);
    names.push_back(name);
  });

  // A fixed two-utterance batch with one padded sequence, so masking is on
  // the differentiation path.
  Rng rng(args.seed + 17);
  const Index t_max = 5;
  const Index lens[2] = {5, 4};
  std::vector<Array> frames;
  std::vector<std::vector<std::int32_t>> labels;
  std::vector<std::vector<std::uint8_t>> masks;
  for (int u = 0; u < 2; ++u) {
    Array f(Shape{t_max, cfg.input_dim});
    for (Index i = 0; i < f.size(); ++i) f[i] = rng.normal();
    std::vector<std::int32_t> lab(static_cast<std::size_t>(t_max), 0);
    std::vector<std::uint8_t> mask(static_cast<std::size_t>(t_max), 0);
    for (Index t = 0; t < lens[u]; ++t) {
      lab[static_cast<std::size_t>(t)] = static_cast<std::int32_t>(
          rng.uniform_int(static_cast<std::uint64_t>(cfg.num_classes)));
      mask[static_cast<std::size_t>(t)] = 1;
    }
    for (Index t = lens[u]; t < t_max; ++t)
      for (Index d = 0; d < cfg.input_dim; ++d) f.at(t, d) = 0.0;
    frames.push_back(f);
    labels.push_back(lab);
    masks.push_back(mask);
  }

  auto loss_fn = [&](Graph* g, const std::vector<Tensor>& leaves) -> Tensor {
    BoundModel bm = bind_model_leaves(g, cfg, leaves);
    std::vector<std::array<std::vector<Tensor>, 2>> summaries(
        static_cast<std::size_t>(cfg.num_layers));
    Tensor nll_sum;
    for (std::size_t u = 0; u < frames.size(); ++u) {
      ForwardResult fr = stack_forward(g, bm, frames[u], masks[u]);
      Tensor nll = softmax_nll(fr.logits, labels[u], masks[u]);
      nll_sum = nll_sum.defined() ? add(nll_sum, nll) : nll;
      if (cfg.dln)
        for (int dir = 0; dir < 2; ++dir)
          for (Index l = 0; l < cfg.num_layers; ++l)
            summaries[static_cast<std::size_t>(l)][static_cast<std::size_t>(dir)]
                .push_back(fr.summaries[static_cast<std::size_t>(l)]
                                       [static_cast<std::size_t>(dir)]);
    }
    Tensor loss =
        scale(nll_sum, 1.0 / static_cast<double>(frames.size()));
    if (cfg.dln)
      loss = add(loss, variance_penalty(g, summaries, cfg.lambda,
                                        cfg.summary_size));
    return loss;
  };

  GradCheckReport report = grad_check(loss_fn, &params, names, args.h);
  std::printf("checked %zu parameters (%lld coordinates), dln %s, lambda %g\n",
              params.size(), static_cast<long long>(count_params(cfg)),
              cfg.dln ? "on" : "off", cfg.lambda);
  std::printf("max relative error %.3e at %s[%lld] "
              "(analytic %.9e, numeric %.9e)\n",
              report.max_rel_error, report.worst_param.c_str(),
              static_cast<long long>(report.worst_index), report.analytic,
              report.numeric);
  if (report.max_rel_error <= args.tolerance) {
    std::printf("grad check PASSED (tolerance %g)\n", args.tolerance);
    return 0;
  }
  std::printf("grad check FAILED (tolerance %g)\n", args.tolerance);
  return 1;
}

// ---- export-summaries -----------------------------------------------------------

struct ExportArgs {
  std::string model;
  std::string data;
  std::string layers = "all";
  std::string out;
  std::uint64_t seed = 1;
  Index k = 0;  // 0 = number of distinct speakers in the dataset
};

int cmd_export_summaries(const ExportArgs& args) {
  Model model = load_checkpoint(args.model);
  Dataset ds = load_dataset(args.data);
  const std::vector<Index> layers =
      parse_layer_list(args.layers, model.cfg.num_layers);
  std::vector<SummaryRecord> records = export_summaries(model, ds, layers);
  write_summaries_csv(records, args.out);
  std::printf("wrote %zu summary records to %s\n", records.size(),
              args.out.c_str());

  const Index k = args.k > 0 ? args.k : count_speakers(ds);
  for (Index l : layers) {
    for (const char* dir : {"fwd", "bwd"}) {
      std::vector<SummaryRecord> subset;
      for (const SummaryRecord& r : records)
        if (r.layer == l && r.direction == dir) subset.push_back(r);
      const double purity = cluster_purity(subset, k, args.seed);
      std::printf("layer %lld %s: purity %.4f (k=%lld, chance %.4f)\n",
                  static_cast<long long>(l), dir, purity,
                  static_cast<long long>(k), modal_speaker_fraction(subset));
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bidirectional LN-LSTMP acoustic-model stacks with dynamic "
               "layer normalization"};
  app.require_subcommand(1);

  GenDataArgs gen_args;
  CLI::App* gen = app.add_subcommand(
      "gen-data", "Generate a synthetic multi-speaker frame-labeling dataset");
  gen->add_option("--speakers", gen_args.spec.num_speakers,
                  "Total speakers, including held-out ones")
      ->capture_default_str();
  gen->add_option("--utts-per-speaker", gen_args.spec.utterances_per_speaker,
                  "Utterances generated per speaker")
      ->capture_default_str();
  gen->add_option("--dim", gen_args.spec.frame_dim, "Feature dimension")
      ->capture_default_str();
  gen->add_option("--classes", gen_args.spec.num_classes, "Number of classes")
      ->capture_default_str();
  gen->add_option("--len-min", gen_args.spec.len_min,
                  "Minimum utterance length in frames")
      ->capture_default_str();
  gen->add_option("--len-max", gen_args.spec.len_max,
                  "Maximum utterance length in frames")
      ->capture_default_str();
  gen->add_option("--noise", gen_args.spec.noise,
                  "Stddev of additive Gaussian frame noise")
      ->capture_default_str();
  gen->add_option("--gain-spread", gen_args.spec.gain_spread,
                  "Speaker log-gain spread (gain = exp(U(-s, s)) per dim)")
      ->capture_default_str();
  gen->add_option("--offset-spread", gen_args.spec.offset_spread,
                  "Speaker offset stddev per dimension")
      ->capture_default_str();
  gen->add_option("--held-out-dev", gen_args.spec.held_out_dev,
                  "Speakers reserved for the dev split")
      ->capture_default_str();
  gen->add_option("--held-out-test", gen_args.spec.held_out_test,
                  "Speakers reserved for the test split")
      ->capture_default_str();
  gen->add_option("--seed", gen_args.spec.seed, "Generator seed")
      ->capture_default_str();
  gen->add_option("--out", gen_args.out,
                  "Output directory (train/, dev/, test/ are created)")
      ->required();

  TrainArgs train_args;
  CLI::App* train = app.add_subcommand("train", "Train a model");
  train->add_option("--config", train_args.config,
                    "Preset name (wsj-baseline, wsj-dln, ted-baseline, "
                    "ted-dln) or path to a JSON configuration")
      ->capture_default_str();
  train->add_option("--data", train_args.data,
                    "Dataset root containing train/ and dev/ "
                    "(overrides the config's data section)");
  CLI::Option* opt_dln = train->add_option(
      "--dln", train_args.dln, "Override dynamic layer normalization (on|off)");
  opt_dln->check(CLI::IsMember({"on", "off"}));
  CLI::Option* opt_lambda = train->add_option(
      "--lambda", train_args.lambda, "Override the variance-penalty weight");
  CLI::Option* opt_epochs =
      train->add_option("--epochs", train_args.epochs, "Override epoch count");
  CLI::Option* opt_batch = train->add_option(
      "--batch-size", train_args.batch_size, "Override mini-batch size");
  CLI::Option* opt_seed =
      train->add_option("--seed", train_args.seed, "Override training seed");
  train->add_option("--out", train_args.out,
                    "Output directory (checkpoint/ and train_log.csv)")
      ->required();

  EvalArgs eval_args;
  CLI::App* eval = app.add_subcommand(
      "eval", "Report frame error rate of a checkpoint on a dataset");
  eval->add_option("--model", eval_args.model, "Checkpoint directory")
      ->required();
  eval->add_option("--data", eval_args.data,
                   "Dataset directory, or a root with train/dev/test splits")
      ->required();

  CountArgs count_args;
  CLI::App* count = app.add_subcommand(
      "count-params", "Print the exact trainable-parameter count");
  count->add_option("--config", count_args.config,
                    "Preset name or JSON configuration path")
      ->capture_default_str();
  count->add_option("--dln", count_args.dln,
                    "Override dynamic layer normalization (on|off)")
      ->check(CLI::IsMember({"on", "off"}));

  GradCheckArgs gc_args;
  CLI::App* gc = app.add_subcommand(
      "grad-check",
      "Compare analytic gradients with central finite differences on a tiny "
      "random model and batch");
  gc->add_option("--config", gc_args.config,
                 "Preset name or JSON configuration path (default: built-in "
                 "tiny model, 2 layers, 8 cells, 4 projection, 3 summary)");
  gc->add_option("--dln", gc_args.dln,
                 "Dynamic layer normalization (on|off)")
      ->check(CLI::IsMember({"on", "off"}))
      ->capture_default_str();
  gc->add_option("--lambda", gc_args.lambda, "Variance-penalty weight")
      ->capture_default_str();
  gc->add_option("--seed", gc_args.seed, "Model/batch seed")
      ->capture_default_str();
  gc->add_option("--tolerance", gc_args.tolerance,
                 "Maximum allowed relative error")
      ->capture_default_str();
  gc->add_option("--step", gc_args.h, "Finite-difference step")
      ->capture_default_str();

  ExportArgs export_args;
  CLI::App* exp = app.add_subcommand(
      "export-summaries",
      "Export utterance summary vectors and report cluster purity");
  exp->add_option("--model", export_args.model, "DLN checkpoint directory")
      ->required();
  exp->add_option("--data", export_args.data, "Dataset directory")->required();
  exp->add_option("--layers", export_args.layers,
                  "Comma-separated 1-based layer list, or \"all\"")
      ->capture_default_str();
  exp->add_option("--out", export_args.out, "Output CSV path")->required();
  exp->add_option("--seed", export_args.seed, "Clustering seed")
      ->capture_default_str();
  exp->add_option("--k", export_args.k,
                  "Cluster count (default: distinct speakers in the data)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) return cmd_gen_data(gen_args);
    if (*train) {
      train_args.lambda_set = opt_lambda->count() > 0;
      train_args.epochs_set = opt_epochs->count() > 0;
      train_args.batch_set = opt_batch->count() > 0;
      train_args.seed_set = opt_seed->count() > 0;
      return cmd_train(train_args);
    }
    if (*eval) return cmd_eval(eval_args);
    if (*count) return cmd_count_params(count_args);
    if (*gc) return cmd_grad_check(gc_args);
    if (*exp) return cmd_export_summaries(export_args);
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
