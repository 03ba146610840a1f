#include "cli.h"

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <memory>
#include <optional>
#include <sstream>

#include <openssl/evp.h>

#include <CLI11.hpp>
#include <json.hpp>

#include "ecgdk/common.h"
#include "ecgdk/corpus.h"
#include "ecgdk/distribution.h"
#include "ecgdk/dsp.h"
#include "ecgdk/hrv.h"
#include "ecgdk/ingest.h"
#include "ecgdk/model.h"
#include "ecgdk/robustness.h"
#include "ecgdk/scenario.h"
#include "ecgdk/segment_io.h"
#include "ecgdk/train.h"

namespace ecgdk::cli {

namespace fs = std::filesystem;
using nlohmann::json;

std::string sha256_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ContractError("cannot open " + path + " for hashing");
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1) throw std::runtime_error("SHA-256 init failed");
  char buf[1 << 16];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
    EVP_DigestUpdate(ctx.get(), buf, static_cast<std::size_t>(in.gcount()));
    if (in.eof()) break;
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx.get(), md, &len);
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
  return hex.str();
}

namespace {

const char* const kModelKeys[] = {"d_model",     "encoder_layers", "heads",       "ff_dim",       "dropout",
                                  "ecg_decoder_out", "rr_decoder_out", "fused_fc", "classes",      "use_rr_path",
                                  "input_len",   "ecg_channels",   "rr_channels", "feature_len"};

bool is_model_config(const json& j) {
  if (!j.is_object() || j.empty()) return false;
  for (const auto& [k, v] : j.items())
    if (std::find(std::begin(kModelKeys), std::end(kModelKeys), k) == std::end(kModelKeys)) return false;
  return true;
}

std::vector<std::string> to_inputs(const json& v) {
  if (v.is_null()) return {};
  if (v.is_string()) return {v.get<std::string>()};
  if (v.is_boolean()) return {v.get<bool>() ? "true" : "false"};
  if (v.is_array()) {
    std::vector<std::string> out;
    for (const auto& e : v)
      for (auto& s : to_inputs(e)) out.push_back(std::move(s));
    return out;
  }
  return {v.dump()};
}

// JSON flag files: {"<subcommand>": {"<flag>": value}} with optional top-level flags. A run
// manifest works too (its "config" object is used), and a bare model config is routed to the
// commands that take one.
class JsonConfig : public CLI::Config {
 public:
  std::string to_config(const CLI::App*, bool, bool, std::string) const override { return "{}"; }

  std::vector<CLI::ConfigItem> from_config(std::istream& in) const override {
    json root;
    try {
      root = json::parse(in);
    } catch (const json::parse_error& e) {
      throw CLI::ConversionError(std::string("config file is not valid JSON: ") + e.what());
    }
    if (root.contains("config") && root.at("config").is_object()) root = root.at("config");
    if (!root.is_object()) throw CLI::ConversionError("config file must hold a JSON object");
    std::vector<CLI::ConfigItem> items;
    if (is_model_config(root)) {
      for (const char* sub : {"model-summary", "train"}) items.push_back({{sub}, "model-json", {root.dump()}});
      return items;
    }
    for (const auto& [key, value] : root.items()) {
      if (value.is_object()) {
        for (const auto& [flag, v] : value.items()) {
          auto inputs = to_inputs(v);
          if (!inputs.empty() || v.is_array()) items.push_back({{key}, flag, std::move(inputs)});
        }
      } else {
        auto inputs = to_inputs(value);
        if (!inputs.empty()) items.push_back({{}, key, std::move(inputs)});
      }
    }
    return items;
  }
};

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream out;
  out << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return out.str();
}

// Resolved flag values of a subcommand, as strings (lists for multi-valued flags).
json resolved_options(const CLI::App* app) {
  json out = json::object();
  for (const CLI::Option* opt : app->get_options()) {
    if (opt->get_lnames().empty()) continue;
    const std::string name = opt->get_lnames().front();
    if (name == "help" || name == "config" || name == "version") continue;
    if (opt->get_expected_min() == 0) {
      out[name] = opt->count() > 0 && opt->as<bool>();
      continue;
    }
    if (opt->count() > 0) {
      const auto& res = opt->results();
      if (opt->get_expected_max() > 1 || res.size() > 1)
        out[name] = res;
      else
        out[name] = res.front();
    } else if (!opt->get_default_str().empty()) {
      out[name] = opt->get_default_str();
    }
  }
  return out;
}

struct Run {
  std::string subcommand;
  const CLI::App* app = nullptr;
  std::vector<std::string> inputs;
  std::optional<std::uint64_t> seed;
  std::string started = utc_now();

  void write_manifest(const fs::path& path) const {
    json m;
    m["tool_version"] = kToolVersion;
    m["subcommand"] = subcommand;
    m["config"] = {{subcommand, resolved_options(app)}};
    json digests = json::object();
    for (const auto& in : inputs)
      if (!in.empty()) digests[in] = {{"sha256", sha256_file(in)}};
    m["inputs"] = digests;
    m["seed"] = seed ? json(*seed) : json(nullptr);
    m["started_at"] = started;
    m["finished_at"] = utc_now();
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw ContractError("cannot write manifest " + path.string());
    out << m.dump(2) << '\n';
  }
};

fs::path file_manifest(const fs::path& output) { return fs::path(output.string() + ".manifest.json"); }

void write_json(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ContractError("cannot open " + path.string() + " for writing");
  out << j.dump(2) << '\n';
  if (!out) throw ContractError("write failed for " + path.string());
}

void ensure_parent(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
}

bool has_feature_columns(const fs::path& path) {
  std::ifstream in(path);
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      return json::parse(line).contains("usable");
    } catch (const json::parse_error&) {
      return false;
    }
  }
  return false;
}

// Segments with features: read from a feature file, or computed from a segment file.
std::vector<Example> load_or_extract(const fs::path& path, std::size_t jobs) {
  if (has_feature_columns(path)) return load_examples(path);
  return extract_features(load_segments(path), jobs);
}

ModelConfig resolve_model_config(const std::string& path, const std::string& inline_json) {
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw ContractError("cannot open model config " + path);
    json j;
    try {
      j = json::parse(in);
    } catch (const json::parse_error& e) {
      throw ParseError(path, 0, "", e.what());
    }
    if (j.contains("model_config")) j = j.at("model_config");
    return model_config_from_json(j);
  }
  if (!inline_json.empty()) return model_config_from_json(json::parse(inline_json));
  return ModelConfig{};
}

std::vector<double> parse_snr_list(const std::vector<std::string>& items) {
  std::vector<double> out;
  for (const auto& s : items) {
    if (s == "inf") {
      out.push_back(std::numeric_limits<double>::infinity());
      continue;
    }
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(s, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != s.size()) throw ContractError("bad SNR value '" + s + "'");
    out.push_back(v);
  }
  if (out.empty()) throw ContractError("empty SNR list");
  return out;
}

// ---- gen ----
struct GenOptions {
  std::string cls = "Normal";
  double duration = 10.0;
  double fs = 100.0;
  double hr = 60.0;
  double jitter = 0.03;
  double pvc_rate = 0.2;
  double amplitude = 1.0;
  double wander = 0.0;
  std::optional<double> snr;
  std::string domain = "synthetic";
  std::string record;
  std::uint64_t seed = 0;
  std::string corpus;
  std::size_t records_per_class = 10;
  std::vector<std::string> domains;
  bool unlabeled = false;
  std::size_t jobs = 1;
  std::string out;
};

void add_gen(CLI::App& app, GenOptions& o) {
  auto* sub = app.add_subcommand("gen", "Generate synthetic ECG records (CSV or JSONL by extension)");
  sub->add_option("--class", o.cls, "Normal, AF or PVC")->capture_default_str();
  sub->add_option("--duration", o.duration, "Record length in seconds")->capture_default_str();
  sub->add_option("--fs", o.fs, "Sampling rate in Hz")->capture_default_str();
  sub->add_option("--hr", o.hr, "Mean heart rate in beats/min")->capture_default_str();
  sub->add_option("--jitter", o.jitter, "RR coefficient of variation")->capture_default_str();
  sub->add_option("--pvc-rate", o.pvc_rate, "Fraction of premature beats (PVC class only)")->capture_default_str();
  sub->add_option("--amplitude", o.amplitude, "Gain")->capture_default_str();
  sub->add_option("--wander", o.wander, "Baseline wander amplitude")->capture_default_str();
  sub->add_option("--snr", o.snr, "Additive white noise SNR in dB");
  sub->add_option("--domain", o.domain, "Domain tag")->capture_default_str();
  sub->add_option("--record", o.record, "Record id (default <class>-<seed>)");
  sub->add_option("--seed", o.seed, "Random seed")->capture_default_str();
  sub->add_option("--corpus", o.corpus, "Multi-domain corpus preset instead of one record")
      ->check(CLI::IsMember({"desk"}));
  sub->add_option("--records-per-class", o.records_per_class, "Corpus records per class and domain")
      ->capture_default_str();
  sub->add_option("--domains", o.domains, "Corpus domains (default: all presets)")->delimiter(',');
  sub->add_flag("--unlabeled", o.unlabeled, "Strip labels from the corpus");
  sub->add_option("--jobs", o.jobs, "Worker threads")->capture_default_str();
  sub->add_option("--out", o.out, "Output file (.csv or .jsonl)")->required();
}

int run_gen(const GenOptions& o, Run& run) {
  run.seed = o.seed;
  const fs::path out(o.out);
  const RecordFormat fmt = format_from_path(out);
  ensure_parent(out);
  std::vector<EcgRecord> records;
  if (o.corpus == "desk") {
    CorpusSpec spec;
    if (o.domains.empty()) {
      spec.domains = desk_domains();
    } else {
      for (const auto& d : o.domains) spec.domains.push_back(desk_domain(d));
    }
    spec.records_per_class = o.records_per_class;
    spec.duration_s = o.duration;
    spec.seed = o.seed;
    spec.labeled = !o.unlabeled;
    records = generate_corpus(spec, o.jobs);
  } else {
    SyntheticSpec s;
    const auto label = parse_label(o.cls);
    if (!label) throw ContractError("--class must be Normal, AF or PVC");
    s.cls = *label;
    s.duration_s = o.duration;
    s.fs = o.fs;
    s.mean_hr_bpm = o.hr;
    s.rr_jitter = o.jitter;
    s.pvc_rate = s.cls == ClassLabel::PVC ? o.pvc_rate : 0.0;
    s.amplitude_scale = o.amplitude;
    s.baseline_wander_amp = o.wander;
    s.noise_snr_db = o.snr;
    s.seed = o.seed;
    s.domain_id = o.domain;
    s.record_id = o.record.empty() ? o.cls + "-" + std::to_string(o.seed) : o.record;
    records.push_back(generate_synthetic(s).record);
  }
  save_records(out, records, fmt);
  run.write_manifest(file_manifest(out));
  std::cout << "wrote " << records.size() << " record(s) to " << out.string() << '\n';
  return 0;
}

// ---- preprocess ----
struct PreprocessOptions {
  std::string in;
  double low = 0.5;
  double high = 40.0;
  std::size_t jobs = 1;
  std::string out;
};

void add_preprocess(CLI::App& app, PreprocessOptions& o) {
  auto* sub = app.add_subcommand("preprocess", "Filter, resample to 100 Hz and cut normalized 10 s segments");
  sub->add_option("--in", o.in, "Record file (.csv or .jsonl)")->required();
  sub->add_option("--low", o.low, "Band-pass low edge in Hz")->capture_default_str();
  sub->add_option("--high", o.high, "Band-pass high edge in Hz")->capture_default_str();
  sub->add_option("--jobs", o.jobs, "Worker threads")->capture_default_str();
  sub->add_option("--out", o.out, "Segment JSONL output")->required();
}

int run_preprocess(const PreprocessOptions& o, Run& run) {
  run.inputs = {o.in};
  const auto records = load_records(o.in);
  FilterSpec spec;
  spec.low_cut_hz = o.low;
  spec.high_cut_hz = o.high;
  std::vector<std::vector<Segment>> per_record(records.size());
  parallel_for(records.size(), o.jobs, [&](std::size_t i) { per_record[i] = preprocess_record(records[i], spec); });
  std::vector<Segment> segments;
  std::size_t short_records = 0;
  for (auto& segs : per_record) {
    short_records += segs.empty() ? 1 : 0;
    for (auto& s : segs) segments.push_back(std::move(s));
  }
  if (short_records > 0) log_warning(std::to_string(short_records) + " record(s) shorter than 10 s produced no segments");
  const fs::path out(o.out);
  ensure_parent(out);
  save_segments(out, segments);
  run.write_manifest(file_manifest(out));
  std::cout << "wrote " << segments.size() << " segment(s) from " << records.size() << " record(s)\n";
  return 0;
}

// ---- features ----
struct FeaturesOptions {
  std::string in;
  std::size_t jobs = 1;
  std::string out;
};

void add_features(CLI::App& app, FeaturesOptions& o) {
  auto* sub = app.add_subcommand("features", "Detect R peaks and compute the seven HRV features per segment");
  sub->add_option("--in", o.in, "Segment JSONL")->required();
  sub->add_option("--jobs", o.jobs, "Worker threads")->capture_default_str();
  sub->add_option("--out", o.out, "Feature JSONL output")->required();
}

int run_features(const FeaturesOptions& o, Run& run) {
  run.inputs = {o.in};
  const auto examples = extract_features(load_segments(o.in), o.jobs);
  const fs::path out(o.out);
  ensure_parent(out);
  save_examples(out, examples);
  run.write_manifest(file_manifest(out));
  std::size_t unusable = 0;
  for (const auto& e : examples) unusable += e.usable() ? 0 : 1;
  std::cout << "wrote features for " << examples.size() << " segment(s); " << unusable << " unusable\n";
  return 0;
}

// ---- train ----
struct TrainOptions {
  std::string data;
  std::string features;
  std::string scenario = "seen";
  std::string holdout = "wearable";
  double mmd_lambda = 1.0;
  std::string mmd_beta = "median";
  std::string target;
  std::uint64_t seed = 42;
  std::size_t epochs = 50;
  std::size_t batch_size = 16;
  double lr = 0.001;
  double weight_decay = 1e-4;
  std::size_t warmup = 4000;
  std::size_t patience = 7;
  std::string model_config;
  std::string model_json;
  std::size_t jobs = 1;
  bool quiet = false;
  std::string out;
};

void add_train(CLI::App& app, TrainOptions& o) {
  auto* sub = app.add_subcommand("train", "Train the dual-path classifier under a scenario split");
  sub->add_option("--data", o.data, "Segment JSONL")->required();
  sub->add_option("--features", o.features, "Feature JSONL aligned with --data (computed when absent)");
  sub->add_option("--scenario", o.scenario, "seen, unseen or ablation")
      ->check(CLI::IsMember({"seen", "unseen", "ablation"}))
      ->capture_default_str();
  sub->add_option("--holdout-domain", o.holdout, "Test domain for unseen/ablation")->capture_default_str();
  sub->add_option("--mmd-lambda", o.mmd_lambda, "Weight of the MMD term")->capture_default_str();
  sub->add_option("--mmd-beta", o.mmd_beta, "Kernel beta, or 'median' for the median heuristic")
      ->capture_default_str();
  sub->add_option("--target-unlabeled", o.target, "Unlabeled target-domain segments or features for MMD");
  sub->add_option("--seed", o.seed, "Random seed")->capture_default_str();
  sub->add_option("--epochs", o.epochs, "Maximum epochs")->capture_default_str();
  sub->add_option("--batch-size", o.batch_size, "Mini-batch size")->capture_default_str();
  sub->add_option("--lr", o.lr, "Peak learning rate of the Noam schedule")->capture_default_str();
  sub->add_option("--weight-decay", o.weight_decay, "Decoupled weight decay")->capture_default_str();
  sub->add_option("--warmup", o.warmup, "Noam warmup steps")->capture_default_str();
  sub->add_option("--patience", o.patience, "Early-stopping patience in epochs")->capture_default_str();
  sub->add_option("--model-config", o.model_config, "Model config JSON");
  sub->add_option("--model-json", o.model_json)->group("");
  sub->add_option("--jobs", o.jobs, "Threads for validation passes")->capture_default_str();
  sub->add_flag("--quiet", o.quiet, "No per-epoch progress");
  sub->add_option("--out", o.out, "Run directory")->required();
}

TrainConfig train_config_from(const TrainOptions& o) {
  TrainConfig tc;
  tc.batch_size = o.batch_size;
  tc.max_epochs = o.epochs;
  tc.base_lr = o.lr;
  tc.weight_decay = o.weight_decay;
  tc.warmup_steps = o.warmup;
  tc.early_stop_patience = o.patience;
  tc.seed = o.seed;
  tc.jobs = o.jobs;
  tc.mmd.lambda_mmd = o.mmd_lambda;
  if (o.mmd_beta != "median") {
    std::size_t used = 0;
    double b = 0.0;
    try {
      b = std::stod(o.mmd_beta, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != o.mmd_beta.size()) throw ContractError("--mmd-beta must be a number or 'median'");
    tc.mmd.beta = b;
  }
  tc.validate();
  return tc;
}

std::vector<Example> select(const std::vector<Example>& all, const std::vector<std::size_t>& idx) {
  std::vector<Example> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(all[i]);
  return out;
}

int run_train(const TrainOptions& o, Run& run) {
  run.seed = o.seed;
  run.inputs = {o.data, o.features, o.target, o.model_config};
  const Scenario scenario = parse_scenario(o.scenario);
  const TrainConfig tc = train_config_from(o);
  ModelConfig mc = resolve_model_config(o.model_config, o.model_json);
  if (scenario == Scenario::Ablation) mc.use_rr_path = false;

  const std::vector<Segment> segments = load_segments(o.data);
  std::vector<Example> examples;
  if (!o.features.empty()) {
    examples = load_examples(o.features);
    if (examples.size() != segments.size())
      throw ContractError("--features has " + std::to_string(examples.size()) + " rows but --data has " +
                          std::to_string(segments.size()));
    for (std::size_t i = 0; i < examples.size(); ++i)
      if (examples[i].segment.source_record != segments[i].source_record ||
          examples[i].segment.start_index != segments[i].start_index)
        throw ContractError("--features row " + std::to_string(i + 1) + " does not match --data");
  } else {
    examples = extract_features(segments, o.jobs);
  }
  std::optional<std::string> holdout;
  if (split_mode(scenario) == SplitMode::UnseenDomain) holdout = o.holdout;
  const SplitIndices split = scenario_split(segments, split_mode(scenario), holdout, o.seed);
  const auto train_set = select(examples, split.train);
  const auto val_set = select(examples, split.val);
  const auto test_set = select(examples, split.test);
  std::vector<Example> target;
  if (!o.target.empty()) target = load_or_extract(o.target, o.jobs);

  const fs::path dir(o.out);
  fs::create_directories(dir);
  auto progress = [&](const EpochSummary& e) {
    if (o.quiet) return;
    std::cerr << "epoch " << e.epoch << "  task_loss " << e.mean_task_loss << "  val_f1_macro " << e.val_f1_macro
              << (e.improved ? "  *" : "") << '\n';
  };
  TrainResult result = train(train_set, val_set, target, tc, mc, progress);

  json extra;
  extra["train_config"] = to_json(tc);
  extra["scenario"] = std::string(to_string(scenario));
  result.model.save(dir / "best.ckpt", extra);
  write_train_log_csv(dir / "train_log.csv", result.log);
  write_json(dir / "split.json", {{"scenario", std::string(to_string(scenario))},
                                  {"holdout_domain", holdout ? json(*holdout) : json(nullptr)},
                                  {"seed", o.seed},
                                  {"train", split.train},
                                  {"val", split.val},
                                  {"test", split.test}});
  save_examples(dir / "test.jsonl", test_set);

  const MetricsReport report = evaluate(result.model, test_set, o.jobs);
  json r = report.to_json();
  r["scenario"] = std::string(to_string(scenario));
  r["best_epoch"] = result.best_epoch;
  r["best_val_f1_macro"] = result.best_val_f1;
  r["epochs_run"] = result.epochs_run;
  r["early_stopped"] = result.early_stopped;
  r["unusable_train"] = result.unusable_train;
  r["unusable_val"] = result.unusable_val;
  write_json(dir / "report.json", r);
  run.write_manifest(dir / "manifest.json");
  std::cout << "best epoch " << result.best_epoch << " (val F1-macro " << result.best_val_f1 << "); test F1-macro "
            << report.f1_macro << ", balanced accuracy " << report.balanced_accuracy << '\n';
  return 0;
}

// ---- eval ----
struct EvalOptions {
  std::string ckpt;
  std::string data;
  std::size_t jobs = 1;
  std::string report;
};

void add_eval(CLI::App& app, EvalOptions& o) {
  auto* sub = app.add_subcommand("eval", "Evaluate a checkpoint on labeled segments");
  sub->add_option("--ckpt", o.ckpt, "Checkpoint file")->required();
  sub->add_option("--data", o.data, "Segment or feature JSONL")->required();
  sub->add_option("--jobs", o.jobs, "Worker threads")->capture_default_str();
  sub->add_option("--report", o.report, "Report JSON output")->required();
}

int run_eval(const EvalOptions& o, Run& run) {
  run.inputs = {o.ckpt, o.data};
  const Model model = Model::load(o.ckpt);
  const auto examples = load_or_extract(o.data, o.jobs);
  const MetricsReport report = evaluate(model, examples, o.jobs);
  write_json(o.report, report.to_json());
  run.write_manifest(file_manifest(o.report));
  std::cout << "F1-macro " << report.f1_macro << ", balanced accuracy " << report.balanced_accuracy << " on "
            << report.evaluated << " segment(s); " << report.unusable << " unusable\n";
  return 0;
}

// ---- noise-sweep ----
struct NoiseOptions {
  std::string ckpt;
  std::string data;
  std::vector<std::string> snr{"5", "10", "15", "20", "25", "30", "35"};
  std::size_t noise_seeds = 5;
  std::uint64_t seed = 42;
  std::size_t jobs = 1;
  std::string out;
};

void add_noise(CLI::App& app, NoiseOptions& o) {
  auto* sub = app.add_subcommand("noise-sweep", "AUC loss under additive white Gaussian noise per SNR");
  sub->add_option("--ckpt", o.ckpt, "Checkpoint file")->required();
  sub->add_option("--data", o.data, "Labeled segment or feature JSONL")->required();
  sub->add_option("--snr", o.snr, "Comma-separated SNR list in dB ('inf' allowed)")
      ->delimiter(',')
      ->capture_default_str();
  sub->add_option("--noise-seeds", o.noise_seeds, "Noise realizations per SNR")->capture_default_str();
  sub->add_option("--seed", o.seed, "Random seed")->capture_default_str();
  sub->add_option("--jobs", o.jobs, "Worker threads")->capture_default_str();
  sub->add_option("--out", o.out, "Sweep report JSON")->required();
}

int run_noise(const NoiseOptions& o, Run& run) {
  run.seed = o.seed;
  run.inputs = {o.ckpt, o.data};
  const std::vector<double> snr = parse_snr_list(o.snr);
  const Model model = Model::load(o.ckpt);
  const auto examples = load_or_extract(o.data, o.jobs);
  const NoiseSweepReport report = noise_sweep(model, examples, snr, o.seed, o.noise_seeds, o.jobs);
  write_json(o.out, report.to_json());
  run.write_manifest(file_manifest(o.out));
  std::cout << "clean AUC " << report.clean_auc << '\n';
  for (const auto& l : report.levels)
    std::cout << "SNR " << l.snr_db << " dB: AUC loss " << l.auc_loss_mean << " +- " << l.auc_loss_std << '\n';
  return 0;
}

// ---- dist-export ----
struct DistOptions {
  std::string train;
  std::string test;
  std::string out;
};

void add_dist(CLI::App& app, DistOptions& o) {
  auto* sub = app.add_subcommand("dist-export", "KDE curves and violin summaries of HRV features per cohort");
  sub->add_option("--train", o.train, "Training-cohort feature JSONL")->required();
  sub->add_option("--test", o.test, "Test-cohort feature JSONL")->required();
  sub->add_option("--out", o.out, "Output directory")->required();
}

std::vector<HrvFeatures> usable_features(const std::vector<Example>& examples) {
  std::vector<HrvFeatures> out;
  for (const auto& e : examples)
    if (e.features) out.push_back(*e.features);
  return out;
}

int run_dist(const DistOptions& o, Run& run) {
  run.inputs = {o.train, o.test};
  const auto a = usable_features(load_or_extract(o.train, 1));
  const auto b = usable_features(load_or_extract(o.test, 1));
  const auto files = distribution_export(a, b, o.out);
  run.write_manifest(fs::path(o.out) / "manifest.json");
  std::cout << "wrote " << files.size() << " file(s) to " << o.out << '\n';
  return 0;
}

// ---- model-summary ----
struct SummaryOptions {
  std::string model_config;
  std::string model_json;
  bool ablation = false;
};

void add_summary(CLI::App& app, SummaryOptions& o) {
  auto* sub = app.add_subcommand("model-summary", "Per-block output shapes and parameter counts");
  sub->add_option("--model-config", o.model_config, "Model config JSON (defaults to the standard sizes)");
  sub->add_option("--model-json", o.model_json)->group("");
  sub->add_flag("--ablation", o.ablation, "Summarize without the RR path");
}

std::string shape_text(const nn::Shape& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? " x " : "") + std::to_string(s[i]);
  return out;
}

int run_summary(const SummaryOptions& o) {
  ModelConfig mc = resolve_model_config(o.model_config, o.model_json);
  if (o.ablation) mc.use_rr_path = false;
  const Model model(mc, 0);
  std::cout << std::left << std::setw(16) << "block" << std::setw(18) << "output" << "params\n";
  for (const auto& b : summarize(mc))
    std::cout << std::setw(16) << b.name << std::setw(18) << shape_text(b.output_shape) << b.params << '\n';
  std::cout << "total " << param_count(mc) << " (runtime " << model.runtime_param_count() << ")\n";
  return 0;
}

}  // namespace

int dispatch(int argc, const char* const* argv) {
  CLI::App app{"ecgdk: domain-adaptive ECG arrhythmia classification on synthetic or recorded ECG"};
  app.name("ecgdk");
  app.require_subcommand(1);
  app.fallthrough();
  app.config_formatter(std::make_shared<JsonConfig>());
  app.set_config("--config", "", "JSON file of flags ({\"<subcommand>\": {\"<flag>\": value}}) or a run manifest");
  app.set_version_flag("--version", kToolVersion);

  GenOptions gen;
  PreprocessOptions pre;
  FeaturesOptions feat;
  TrainOptions tr;
  EvalOptions ev;
  NoiseOptions noise;
  DistOptions dist;
  SummaryOptions summary;
  add_gen(app, gen);
  add_preprocess(app, pre);
  add_features(app, feat);
  add_train(app, tr);
  add_eval(app, ev);
  add_noise(app, noise);
  add_dist(app, dist);
  add_summary(app, summary);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  CLI::App* sub = app.get_subcommands().front();
  Run run;
  run.subcommand = sub->get_name();
  run.app = sub;
  try {
    const std::string& name = run.subcommand;
    if (name == "gen") return run_gen(gen, run);
    if (name == "preprocess") return run_preprocess(pre, run);
    if (name == "features") return run_features(feat, run);
    if (name == "train") return run_train(tr, run);
    if (name == "eval") return run_eval(ev, run);
    if (name == "noise-sweep") return run_noise(noise, run);
    if (name == "dist-export") return run_dist(dist, run);
    if (name == "model-summary") return run_summary(summary);
  } catch (const ecgdk::ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}

int dispatch(const std::vector<std::string>& args) {
  std::vector<const char*> argv;
  argv.push_back("ecgdk");
  for (const auto& a : args) argv.push_back(a.c_str());
  return dispatch(static_cast<int>(argv.size()), argv.data());
}

}  // namespace ecgdk::cli
