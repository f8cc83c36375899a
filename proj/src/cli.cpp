#include "dcap/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "dcap/rng.hpp"
#include "dcap/verify.hpp"

namespace dcap {

namespace {

std::size_t parse_sweep_number(const std::string& text) {
  std::string item = text;
  item.erase(0, item.find_first_not_of(" \t"));
  item.erase(item.find_last_not_of(" \t") + 1);
  if (item.empty()) throw ConfigError("empty entry in sweep '" + text + "'");
  std::size_t pos = 0;
  unsigned long long value = 0;
  try {
    value = std::stoull(item, &pos);
  } catch (const std::exception&) {
    throw ConfigError("not a number in sweep: '" + item + "'");
  }
  if (pos != item.size())
    throw ConfigError("not a number in sweep: '" + item + "'");
  return static_cast<std::size_t>(value);
}

}  // namespace

std::vector<std::size_t> parse_sweep(const std::string& text) {
  if (text.empty()) throw ConfigError("empty sweep expression");
  std::vector<std::size_t> values;
  if (const auto dots = text.find(".."); dots != std::string::npos) {
    const std::size_t lo = parse_sweep_number(text.substr(0, dots));
    const std::size_t hi = parse_sweep_number(text.substr(dots + 2));
    if (lo > hi)
      throw ConfigError("sweep range '" + text + "' runs backwards");
    for (std::size_t v = lo; v <= hi; ++v) values.push_back(v);
    return values;
  }
  std::stringstream stream(text);
  std::string item;
  while (std::getline(stream, item, ',')) values.push_back(parse_sweep_number(item));
  if (values.empty()) throw ConfigError("empty sweep expression");
  return values;
}

TrainConfig to_train_config(const RunConfig& run, std::size_t layers,
                            std::size_t heads) {
  TrainConfig cfg;
  if (run.model == "dcap")
    cfg.kind = ModelKind::dcap;
  else if (run.model == "lr")
    cfg.kind = ModelKind::lr;
  else if (run.model == "fm")
    cfg.kind = ModelKind::fm;
  else
    throw ConfigError("unknown model '" + run.model + "', expected dcap, lr or fm");
  if (run.product == "inner")
    cfg.dcap.kind = ProductKind::inner;
  else if (run.product == "outer")
    cfg.dcap.kind = ProductKind::outer;
  else
    throw ConfigError("unknown product '" + run.product +
                      "', expected inner or outer");
  cfg.dcap.d = run.embedding_dim;
  cfg.dcap.layers = layers;
  cfg.dcap.heads = heads;
  cfg.dcap.hidden1 = run.hidden1;
  cfg.dcap.hidden2 = run.hidden2;
  cfg.dcap.dropout = run.dropout;
  cfg.dcap.residual = run.residual;
  cfg.fm_factors = run.fm_factors;
  cfg.adam.lr = run.lr;
  cfg.adam.weight_decay = run.weight_decay;
  cfg.adam.decoupled = run.decoupled;
  cfg.batch_size = run.batch_size;
  cfg.patience = run.patience;
  cfg.max_epochs = run.max_epochs;
  cfg.seed = run.seed;
  cfg.threads = run.threads;
  return cfg;
}

namespace {

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%g", v);
  if (std::strtod(buf, nullptr) == v) return buf;
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

char resolve_delimiter(const std::string& text) {
  if (text == "\\t" || text == "tab") return '\t';
  if (text.size() != 1)
    throw ConfigError("delimiter must be one character, '\\t' or 'tab'");
  return text[0];
}

std::size_t to_size(const std::string& key, const std::string& value) {
  std::size_t pos = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(value, &pos);
  } catch (const std::exception&) {
    pos = value.size() + 1;
  }
  if (pos != value.size())
    throw ConfigError("bad value '" + value + "' for " + key);
  return static_cast<std::size_t>(v);
}

double to_double(const std::string& key, const std::string& value) {
  char* end = nullptr;
  const double v = std::strtod(value.c_str(), &end);
  if (end != value.c_str() + value.size() || value.empty())
    throw ConfigError("bad value '" + value + "' for " + key);
  return v;
}

bool to_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw ConfigError("bad value '" + value + "' for " + key);
}

/// Fills settings from a flat key=value file. Keys mirror the long flags;
/// values given on the command line keep priority over the file.
void apply_config_file(const std::string& path, const CLI::App& cmd,
                       RunConfig& run) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config file " + path);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto first = line.find_first_not_of(" \t");
    if (first == std::string::npos || line[first] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(path + ":" + std::to_string(line_no) +
                        ": expected key=value");
    auto trim = [](std::string s) {
      s.erase(0, s.find_first_not_of(" \t"));
      s.erase(s.find_last_not_of(" \t") + 1);
      return s;
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const CLI::Option* flag = cmd.get_option_no_throw("--" + key);
    if (flag == nullptr)
      throw ConfigError(path + ":" + std::to_string(line_no) +
                        ": unknown key '" + key + "'");
    if (flag->count() > 0) continue;
    if (key == "data")
      run.data = value;
    else if (key == "out")
      run.out = value;
    else if (key == "model")
      run.model = value;
    else if (key == "product")
      run.product = value;
    else if (key == "embedding-dim")
      run.embedding_dim = to_size(key, value);
    else if (key == "layers")
      run.layers = value;
    else if (key == "heads")
      run.heads = value;
    else if (key == "hidden1")
      run.hidden1 = to_size(key, value);
    else if (key == "hidden2")
      run.hidden2 = to_size(key, value);
    else if (key == "dropout")
      run.dropout = to_double(key, value);
    else if (key == "residual")
      run.residual = to_bool(key, value);
    else if (key == "fm-factors")
      run.fm_factors = to_size(key, value);
    else if (key == "lr")
      run.lr = to_double(key, value);
    else if (key == "weight-decay")
      run.weight_decay = to_double(key, value);
    else if (key == "decoupled")
      run.decoupled = to_bool(key, value);
    else if (key == "batch-size")
      run.batch_size = to_size(key, value);
    else if (key == "patience")
      run.patience = to_size(key, value);
    else if (key == "max-epochs")
      run.max_epochs = to_size(key, value);
    else if (key == "trials")
      run.trials = to_size(key, value);
    else if (key == "seed")
      run.seed = to_size(key, value);
    else if (key == "split-seed")
      run.split_seed = to_size(key, value);
    else if (key == "threads")
      run.threads = static_cast<int>(to_size(key, value));
  }
}

}  // namespace

void write_run_config(const std::string& path, const RunConfig& run) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << "data=" << run.data << '\n'
      << "out=" << run.out << '\n'
      << "model=" << run.model << '\n'
      << "product=" << run.product << '\n'
      << "embedding-dim=" << run.embedding_dim << '\n'
      << "layers=" << run.layers << '\n'
      << "heads=" << run.heads << '\n'
      << "hidden1=" << run.hidden1 << '\n'
      << "hidden2=" << run.hidden2 << '\n'
      << "dropout=" << format_double(run.dropout) << '\n'
      << "residual=" << (run.residual ? "true" : "false") << '\n'
      << "fm-factors=" << run.fm_factors << '\n'
      << "lr=" << format_double(run.lr) << '\n'
      << "weight-decay=" << format_double(run.weight_decay) << '\n'
      << "decoupled=" << (run.decoupled ? "true" : "false") << '\n'
      << "batch-size=" << run.batch_size << '\n'
      << "patience=" << run.patience << '\n'
      << "max-epochs=" << run.max_epochs << '\n'
      << "trials=" << run.trials << '\n'
      << "seed=" << run.seed << '\n'
      << "split-seed=" << run.split_seed << '\n'
      << "threads=" << run.threads << '\n';
}

namespace {

int cmd_prepare(const std::string& movielens_dir, const std::string& data_path,
                const std::string& schema_path, const std::string& delimiter,
                std::size_t min_frequency, const std::string& out_path) {
  std::string root = movielens_dir;
  if (root.empty() && data_path.empty())
    if (const char* env = std::getenv("DCAP_DATA_DIR")) root = env;
  if (!root.empty() && !data_path.empty())
    throw ConfigError("pass either --movielens or --data, not both");

  EncodedDataset data;
  if (!root.empty()) {
    data = load_movielens(root + "/ratings.dat", root + "/users.dat",
                          root + "/movies.dat");
  } else if (!data_path.empty()) {
    if (schema_path.empty())
      throw ConfigError("--data needs a --schema side-file");
    data = load_delimited(data_path, schema_path, resolve_delimiter(delimiter),
                          min_frequency);
  } else {
    throw ConfigError("pass --movielens DIR (or set DCAP_DATA_DIR) or --data FILE");
  }

  save_dataset(out_path, data);
  std::ostringstream stats;
  stats << "instances=" << data.samples.size() << " fields=" << data.field_count()
        << " dimension=" << data.feature_dimension()
        << " skipped=" << data.skipped;
  std::cout << stats.str() << '\n' << "cache written to " << out_path << '\n';
  return 0;
}

int cmd_train(const RunConfig& run) {
  if (run.data.empty()) throw ConfigError("--data is required for training");
  if (run.trials < 1) throw ConfigError("--trials must be at least 1");
  EncodedDataset data = load_dataset(run.data);
  const std::vector<FieldSchema> schemas = data.schemas;
  DatasetSplit split = split_dataset(std::move(data.samples), run.split_seed);

  std::vector<std::size_t> layer_list = {0};
  std::vector<std::size_t> head_list = {0};
  if (run.model == "dcap") {
    layer_list = parse_sweep(run.layers);
    head_list = parse_sweep(run.heads);
  }
  const bool grid = layer_list.size() * head_list.size() > 1;

  for (std::size_t layers : layer_list) {
    for (std::size_t heads : head_list) {
      const TrainConfig cfg = to_train_config(run, layers, heads);
      std::string dir = run.out;
      if (grid)
        dir += "/l" + std::to_string(layers) + "_h" + std::to_string(heads);
      std::filesystem::create_directories(dir);

      RunConfig effective = run;
      effective.out = dir;
      if (run.model == "dcap") {
        effective.layers = std::to_string(layers);
        effective.heads = std::to_string(heads);
      }
      write_run_config(dir + "/config.txt", effective);

      RunSummary summary;
      summary.config_hash = config_hash(cfg);
      for (std::size_t trial = 0; trial < run.trials; ++trial) {
        TrainConfig trial_cfg = cfg;
        trial_cfg.seed = derive_seed(cfg.seed, {fnv1a64("trial"), trial});
        std::ofstream log(dir + "/train_" + std::to_string(trial) + ".log");
        if (!log) throw IoError("cannot write the training log under " + dir);
        TrainResult result = train(trial_cfg, split, schemas, &log);
        if (result.state.diverged) {
          std::cerr << "error: training diverged: " << result.state.diagnostic
                    << '\n';
          return 1;
        }
        MetricsReport test = evaluate(result.params, split.test, "test");
        save_checkpoint(dir + "/model_" + std::to_string(trial) + ".ckpt",
                        result.params);
        summary.trials.push_back({trial_cfg.seed, result.state.epochs_run,
                                  result.state.best_epoch, test.auc,
                                  test.logloss});
      }
      finalize_summary(summary);
      save_run_summary(dir + "/summary.json", summary);

      std::ostringstream line;
      line << "model=" << run.model;
      if (run.model == "dcap") line << " layers=" << layers << " heads=" << heads;
      line << " trials=" << run.trials << " auc="
           << format_mean_std(summary.auc_mean, summary.auc_std) << " logloss="
           << format_mean_std(summary.logloss_mean, summary.logloss_std);
      std::cout << line.str() << '\n';
    }
  }
  return 0;
}

int cmd_evaluate(const std::string& checkpoint_path, const std::string& data_path,
                 const std::string& split_name, std::uint64_t split_seed) {
  AnyParams params = load_checkpoint(checkpoint_path);
  EncodedDataset data = load_dataset(data_path);
  DatasetSplit split = split_dataset(std::move(data.samples), split_seed);
  const std::vector<EncodedSample>* part = nullptr;
  if (split_name == "train")
    part = &split.train;
  else if (split_name == "validation")
    part = &split.validation;
  else if (split_name == "test")
    part = &split.test;
  else
    throw ConfigError("unknown split '" + split_name +
                      "', expected train, validation or test");
  MetricsReport report = evaluate(params, *part, split_name);
  char line[160];
  std::snprintf(line, sizeof line, "split=%s samples=%zu auc=%.6f logloss=%.6f",
                report.split.c_str(), report.samples, report.auc, report.logloss);
  std::cout << line << '\n';
  return 0;
}

int cmd_export_attention(const std::string& checkpoint_path,
                         const std::string& data_path, const std::string& out_dir,
                         std::size_t sample_count) {
  AnyParams any = load_checkpoint(checkpoint_path);
  const auto* params = std::get_if<DcapParams>(&any);
  if (!params)
    throw CheckpointError("attention export needs a dcap checkpoint");
  EncodedDataset data = load_dataset(data_path);
  if (data.field_count() != params->config.n)
    throw ConfigError("checkpoint expects " + std::to_string(params->config.n) +
                      " fields, dataset has " +
                      std::to_string(data.field_count()));
  if (data.samples.empty()) throw DataError("dataset has no samples");
  const std::size_t count = std::min(sample_count, data.samples.size());
  if (count == 0) throw ConfigError("--samples must be at least 1");

  std::vector<ForwardTrace> traces;
  dcap_forward(*params, std::span(data.samples.data(), count), &traces);

  std::filesystem::create_directories(out_dir);
  const std::size_t n = params->config.n;
  for (std::size_t layer = 0; layer < params->config.layers; ++layer) {
    for (std::size_t head = 0; head < params->config.heads; ++head) {
      Tensor mean({n, n});
      for (const ForwardTrace& trace : traces)
        add_in_place(mean, trace.alpha[layer][head]);
      mean = scale(mean, 1.0 / static_cast<double>(count));

      const std::string path = out_dir + "/attention_l" +
                               std::to_string(layer + 1) + "_h" +
                               std::to_string(head + 1) + ".tsv";
      std::ofstream out(path);
      if (!out) throw IoError("cannot write " + path);
      out << "field";
      for (const FieldSchema& schema : data.schemas) out << '\t' << schema.name;
      out << '\n';
      for (std::size_t i = 0; i < n; ++i) {
        out << data.schemas[i].name;
        for (std::size_t j = 0; j < n; ++j) {
          char cell[32];
          std::snprintf(cell, sizeof cell, "%.6f", mean.at(i, j));
          out << '\t' << cell;
        }
        out << '\n';
      }
    }
  }
  std::cout << "wrote " << params->config.layers * params->config.heads
            << " attention matrices under " << out_dir << '\n';
  return 0;
}

int cmd_verify(std::uint64_t seed) {
  const VerificationReport report = run_verification(seed);
  for (const CheckResult& check : report.checks) {
    std::ostringstream line;
    line << (check.passed ? "PASS  " : "FAIL  ") << check.name;
    if (!check.detail.empty()) line << "  (" << check.detail << ")";
    std::cout << line.str() << '\n';
  }
  std::cout << '\n' << homogeneity_tsv(report.homogeneity);
  const std::size_t failed = static_cast<std::size_t>(
      std::count_if(report.checks.begin(), report.checks.end(),
                    [](const CheckResult& c) { return !c.passed; }));
  std::cout << '\n'
            << (report.checks.size() - failed) << "/" << report.checks.size()
            << " checks passed\n";
  return report.all_passed() ? 0 : 1;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"deep cross attentional product network"};
  app.require_subcommand(1);

  auto* prepare = app.add_subcommand("prepare", "encode a raw dataset into a cache");
  std::string movielens_dir, data_path, schema_path, out_path = "dataset.bin";
  std::string delimiter = "\t";
  std::size_t min_frequency = 10;
  prepare->add_option("--movielens", movielens_dir,
                      "directory holding ratings.dat, users.dat, movies.dat "
                      "(default: $DCAP_DATA_DIR)");
  prepare->add_option("--data", data_path, "delimited data file");
  prepare->add_option("--schema", schema_path,
                      "schema side-file: one 'name<TAB>kind' per column");
  prepare->add_option("--delimiter", delimiter, "column delimiter for --data");
  prepare->add_option("--min-frequency", min_frequency,
                      "rare-token cutoff for --data vocabularies");
  prepare->add_option("--out", out_path, "cache output path");

  auto* train_cmd = app.add_subcommand("train", "train and evaluate a model");
  RunConfig run;
  std::string config_path;
  train_cmd->add_option("--config", config_path,
                        "flat key=value settings file; explicit flags win");
  train_cmd->add_option("--data", run.data, "prepared dataset cache");
  train_cmd->add_option("--out", run.out, "artifact directory");
  train_cmd->add_option("--model", run.model, "dcap, lr or fm");
  train_cmd->add_option("--product", run.product, "inner or outer");
  train_cmd->add_option("--embedding-dim", run.embedding_dim, "embedding width");
  train_cmd->add_option("--layers", run.layers,
                        "layer depth; sweeps allowed (1..5 or 1,2,3)");
  train_cmd->add_option("--heads", run.heads,
                        "attention heads; sweeps allowed (1,2,4,8,16)");
  train_cmd->add_option("--hidden1", run.hidden1, "first head layer width");
  train_cmd->add_option("--hidden2", run.hidden2, "second head layer width");
  train_cmd->add_option("--dropout", run.dropout, "hidden dropout rate");
  train_cmd->add_flag("--residual", run.residual, "add residual connections");
  train_cmd->add_option("--fm-factors", run.fm_factors, "fm factor width");
  train_cmd->add_option("--lr", run.lr, "learning rate");
  train_cmd->add_option("--weight-decay", run.weight_decay, "decay strength");
  train_cmd->add_flag("--decoupled", run.decoupled,
                      "decouple weight decay from the gradient");
  train_cmd->add_option("--batch-size", run.batch_size, "minibatch size");
  train_cmd->add_option("--patience", run.patience, "early-stopping patience");
  train_cmd->add_option("--max-epochs", run.max_epochs, "epoch cap");
  train_cmd->add_option("--trials", run.trials, "independent seeds to average");
  train_cmd->add_option("--seed", run.seed, "master seed");
  train_cmd->add_option("--split-seed", run.split_seed, "dataset split seed");
  train_cmd->add_option("--threads", run.threads, "gradient workers (0 = all)");

  auto* eval_cmd = app.add_subcommand("evaluate", "score a checkpoint on a split");
  std::string checkpoint_path, eval_data, eval_split = "test";
  std::uint64_t eval_split_seed = 1;
  eval_cmd->add_option("--checkpoint", checkpoint_path, "model checkpoint")
      ->required();
  eval_cmd->add_option("--data", eval_data, "prepared dataset cache")->required();
  eval_cmd->add_option("--split", eval_split, "train, validation or test");
  eval_cmd->add_option("--split-seed", eval_split_seed, "dataset split seed");

  auto* export_cmd =
      app.add_subcommand("export-attention", "dump mean attention maps as tsv");
  std::string export_checkpoint, export_data, export_out = "attention";
  std::size_t export_samples = 256;
  export_cmd->add_option("--checkpoint", export_checkpoint, "model checkpoint")
      ->required();
  export_cmd->add_option("--data", export_data, "prepared dataset cache")
      ->required();
  export_cmd->add_option("--out", export_out, "output directory");
  export_cmd->add_option("--samples", export_samples, "samples to average over");

  auto* verify_cmd =
      app.add_subcommand("verify", "run the mathematical verification suite");
  std::uint64_t verify_seed = 1;
  verify_cmd->add_option("--seed", verify_seed, "seed for the random probes");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (prepare->parsed())
      return cmd_prepare(movielens_dir, data_path, schema_path, delimiter,
                         min_frequency, out_path);
    if (train_cmd->parsed()) {
      if (!config_path.empty()) apply_config_file(config_path, *train_cmd, run);
      return cmd_train(run);
    }
    if (eval_cmd->parsed())
      return cmd_evaluate(checkpoint_path, eval_data, eval_split, eval_split_seed);
    if (export_cmd->parsed())
      return cmd_export_attention(export_checkpoint, export_data, export_out,
                                  export_samples);
    if (verify_cmd->parsed()) return cmd_verify(verify_seed);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

int run_cli(const std::vector<std::string>& args) {
  std::vector<const char*> argv;
  argv.reserve(args.size());
  for (const std::string& arg : args) argv.push_back(arg.c_str());
  return run_cli(static_cast<int>(argv.size()), argv.data());
}

}  // namespace dcap
