// gradenet: phantom generation, dataset preparation, training, fine-tuning,
// evaluation, gradient checks and activation dumps.
//
// Every subcommand accepts --config FILE (flat key=value lines, keys are the
// long flag names without dashes). Flags on the command line override the
// file. The effective configuration is written to <out>/config.txt and can be
// replayed with --config.
//
// Exit status: 0 success, 1 usage, 2 data, 3 verification failure. Errors are
// reported on stderr as a single line "gradenet: error: <kind>: <message>".

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "gradenet/gradenet.hpp"

namespace fs = std::filesystem;
using namespace gradenet;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kVerify = 3 };

struct VerificationFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string text(const std::string& v) { return v; }
std::string text(bool v) { return v ? "true" : "false"; }
std::string text(double v) {
  char buf[40];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return {buf, r.ptr};
}
template <class T>
  requires std::is_integral_v<T>
std::string text(T v) {
  return std::to_string(v);
}

// Options of one subcommand, remembered in declaration order for the echo.
class Options {
 public:
  explicit Options(CLI::App* app) : app_(app) {}

  template <class T>
  CLI::Option* add(const std::string& key, T& var, const std::string& help) {
    keys_.emplace_back(key, [&var] { return text(var); });
    return app_->add_option("--" + key, var, help)
        ->multi_option_policy(CLI::MultiOptionPolicy::TakeLast)
        ->capture_default_str();
  }

  void write_echo(const fs::path& dir) const {
    fs::create_directories(dir);
    std::ofstream os(dir / "config.txt", std::ios::trunc);
    if (!os) throw DataError("cannot write " + (dir / "config.txt").string());
    os << "# gradenet " << app_->get_name() << "\n";
    for (const auto& [k, f] : keys_) os << k << '=' << f() << '\n';
  }

  CLI::App* app() const { return app_; }

 private:
  CLI::App* app_;
  std::vector<std::pair<std::string, std::function<std::string()>>> keys_;
};

// Flat key=value file -> "--key=value" arguments.
std::vector<std::string> config_arguments(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file " + path.string());
  std::vector<std::string> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto first = line.find_first_not_of(" \t");
    if (first == std::string::npos || line[first] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": expected key=value");
    auto key = line.substr(first, eq - first);
    while (!key.empty() && (key.back() == ' ' || key.back() == '\t')) key.pop_back();
    auto value = line.substr(eq + 1);
    const auto vs = value.find_first_not_of(" \t");
    value = vs == std::string::npos ? "" : value.substr(vs);
    if (key == "config" || value.empty()) continue;
    out.push_back("--" + key + "=" + value);
  }
  return out;
}

void add_train_flags(Options& o, TrainConfig& c) {
  o.add("lr", c.learning_rate, "SGD learning rate");
  o.add("momentum", c.momentum, "SGD momentum");
  o.add("batch-size", c.batch_size, "Minibatch size");
  o.add("epochs", c.epochs, "Training epochs");
  o.add("validation-fraction", c.validation_fraction, "Fraction of training patients held out for validation");
  o.add("seed", c.seed, "Random seed");
  o.add("augment", c.augment, "Real-time augmentation (true/false)");
  o.add("dropout", c.dropout, "Dropout in dense layers (true/false)");
  o.add("rotation-max", c.policy.rotation_max_deg, "Maximum rotation angle, degrees");
  o.add("shift-fraction", c.policy.shift_fraction, "Maximum shift as a fraction of each dimension");
  o.add("hflip-prob", c.policy.hflip_probability, "Horizontal flip probability");
  o.add("vflip-prob", c.policy.vflip_probability, "Vertical flip probability");
}

Architecture architecture_for(SampleMode m) {
  switch (m) {
    case SampleMode::patch: return Architecture::patchnet;
    case SampleMode::slice: return Architecture::slicenet;
    case SampleMode::planar: return Architecture::volumenet;
  }
  throw ConfigError("unknown mode");
}

struct LoadedManifest {
  std::vector<SampleRecord> records;
  Dataset data;
  SampleMode mode = SampleMode::patch;
  std::size_t channels = 0;
};

LoadedManifest load_manifest(const std::string& path) {
  if (path.empty()) throw ConfigError("--manifest is required");
  if (!fs::exists(path)) throw DataError("manifest not found: " + path);
  LoadedManifest m;
  m.records = read_manifest(path);
  if (m.records.empty()) throw DataError("manifest " + path + " has no records");
  m.mode = m.records.front().mode;
  for (const auto& r : m.records)
    if (r.mode != m.mode) throw DataError("manifest " + path + " mixes sample modes");
  m.data = load_dataset(m.records, fs::path(path).parent_path());
  m.channels = m.data.front().inputs.front().dim(0);
  return m;
}

Architecture resolve_architecture(const std::string& arch, SampleMode mode) {
  const Architecture expected = architecture_for(mode);
  if (arch.empty()) return expected;
  const Architecture a = parse_architecture(arch);
  if (a != expected)
    throw ConfigError(std::string("architecture ") + to_string(a) + " is incompatible with " + to_string(mode) +
                      " samples (expected " + to_string(expected) + ")");
  return a;
}

void write_lines(const fs::path& path, const std::vector<std::string>& lines) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DataError("cannot write " + path.string());
  for (const auto& l : lines) os << l << '\n';
}

std::vector<std::string> read_lines(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open " + path.string());
  std::vector<std::string> out;
  std::string l;
  while (std::getline(is, l))
    if (!l.empty()) out.push_back(l);
  return out;
}

Network<float> fit(const NetworkSpec& spec, const Dataset& data, const TrainConfig& cfg, std::uint64_t init_seed,
                   EpochLog* log_out, Network<float>* start = nullptr) {
  auto [train_set, val_set] = split_train_val(data, cfg.validation_fraction, cfg.seed);
  Network<float> net = start ? *start : Network<float>::instantiate(spec, init_seed);
  auto log = train(net, train_set, val_set, cfg);
  if (log_out) *log_out = std::move(log);
  return net;
}

void print_log(const EpochLog& log) {
  for (const auto& r : log)
    std::printf("epoch %zu train_loss %.6f train_acc %.4f val_loss %.6f val_acc %.4f\n", r.epoch, r.train_loss,
                r.train_acc, r.val_loss, r.val_acc);
}

// ---------------------------------------------------------------------------

struct PhantomArgs {
  std::string out;
  std::string dims = "120,120,120";
  std::size_t positive = 20, negative = 20, sequences = 4, jobs = 1;
  std::string task = "a";
  std::string id_prefix = "ph";
  std::uint64_t seed = 42;
  double radius_min = 10, radius_max = 16;
  double pos_rim = 1.8, pos_core = 0.25, pos_noise = 0.35, neg_intensity = 1.4, neg_noise = 0.05;
};

int run_phantom(const PhantomArgs& a, const Options& o) {
  if (a.out.empty()) throw ConfigError("--out is required");
  PhantomConfig c;
  c.dims.clear();
  for (const auto& s : detail::split(a.dims, ',')) c.dims.push_back(std::stoul(s));
  c.positive_count = a.positive;
  c.negative_count = a.negative;
  c.sequence_count = a.sequences;
  c.seed = a.seed;
  c.radius_min = a.radius_min;
  c.radius_max = a.radius_max;
  c.id_prefix = a.id_prefix;
  c.positive = {static_cast<float>(a.pos_rim), static_cast<float>(a.pos_core), static_cast<float>(a.pos_noise), true};
  c.negative = {static_cast<float>(a.neg_intensity), static_cast<float>(a.neg_intensity),
                static_cast<float>(a.neg_noise), false};
  if (a.task == "b") {
    c.positive_grade = Grade::codeleted;
    c.negative_grade = Grade::non_deleted;
  } else if (a.task != "a") {
    throw ConfigError("--task must be a or b");
  }
  const auto ids = write_cohort(c, a.out, a.jobs);
  o.write_echo(a.out);
  std::printf("wrote %zu volumes to %s\n", ids.size(), a.out.c_str());
  return kOk;
}

struct PrepareArgs {
  std::string data, out, mode = "patch", sequences;
  PrepConfig prep;
  std::size_t jobs = 1;
};

int run_prepare(PrepareArgs a, const Options& o) {
  if (a.data.empty() || a.out.empty()) throw ConfigError("--data and --out are required");
  if (!a.sequences.empty()) a.prep.sequences = detail::split(a.sequences, ',');
  const auto mode = parse_sample_mode(a.mode);
  const auto report = prepare_cohort(a.data, mode, a.prep, a.out, a.jobs);
  for (const auto& d : report.diagnostics) std::fprintf(stderr, "gradenet: skipped: %s\n", d.c_str());
  o.write_echo(a.out);
  std::printf("wrote %zu %s records to %s\n", report.records.size(), to_string(mode),
              (fs::path(a.out) / "manifest.tsv").c_str());
  return kOk;
}

struct TrainArgs {
  std::string manifest, out, arch, weights;
  TrainConfig cfg;
  std::uint64_t init_seed = 7;
  std::size_t freeze_block = 0;
  long freeze_boundary = -1;
};

int run_train(const TrainArgs& a, const Options& o, bool finetune) {
  if (a.out.empty()) throw ConfigError("--out is required");
  auto m = load_manifest(a.manifest);
  const auto arch = resolve_architecture(a.arch, m.mode);
  const auto spec = build_architecture(arch, m.channels);
  EpochLog log;
  Network<float> net = Network<float>::instantiate(spec, a.init_seed);
  if (finetune) {
    if (a.weights.empty()) throw ConfigError("--weights is required for finetune");
    load_weights(net, a.weights);
    std::size_t boundary = 0;
    if (a.freeze_boundary >= 0) boundary = static_cast<std::size_t>(a.freeze_boundary);
    else if (a.freeze_block > 0) boundary = net.conv_block_position(a.freeze_block);
    net = apply_transfer(net, boundary, a.init_seed);
    std::printf("freeze boundary %zu: %zu of %zu parameters trainable\n", boundary, net.trainable_parameter_count(),
                net.parameter_count());
  }
  net = fit(spec, m.data, a.cfg, a.init_seed, &log, &net);
  fs::create_directories(a.out);
  save_weights(net, fs::path(a.out) / "weights.bin");
  write_epoch_log(fs::path(a.out) / "epoch_log.csv", log);
  write_lines(fs::path(a.out) / "patients.txt", patient_ids(m.data));
  o.write_echo(a.out);
  print_log(log);
  return kOk;
}

struct EvalArgs {
  std::string protocol = "lopo", manifest, out, arch, weights, train_patients, model;
  TrainConfig cfg;
  double threshold = kDecisionThreshold;
  std::size_t jobs = 1;
};

void write_reports(const fs::path& out, const LopoSummary& summary, const std::vector<PatientVerdict>& verdicts,
                   const ConfusionMatrix& cm) {
  fs::create_directories(out);
  write_summary_csv(out / "summary.csv", {summary});
  write_verdicts_tsv(out / "verdicts.tsv", verdicts);
  write_confusion_csv(out / "confusion.csv", cm);
  if (cm.total() > 0) write_metrics_csv(out / "metrics.csv", metrics(cm));
}

int run_eval(const EvalArgs& a, const Options& o) {
  if (a.out.empty()) throw ConfigError("--out is required");
  auto m = load_manifest(a.manifest);
  const auto arch = resolve_architecture(a.arch, m.mode);
  const auto spec = build_architecture(arch, m.channels);
  const std::string model = a.model.empty() ? to_string(arch) : a.model;
  const fs::path out = a.out;
  if (a.protocol == "lopo") {
    auto trainer = [&](const Dataset& train_set, const Dataset& test_set, std::uint64_t fold_seed) {
      TrainConfig cfg = a.cfg;
      cfg.seed = fold_seed;
      Network<float> net = fit(spec, train_set, cfg, fold_seed, nullptr);
      return predict(net, test_set);
    };
    const auto r = lopo_run(m.data, trainer, a.cfg.seed, model, a.jobs, a.threshold);
    ConfusionMatrix cm;
    for (const auto& v : r.verdicts)
      if (v.verdict != Verdict::ambiguous) cm.add(v.label, v.verdict == Verdict::correct ? v.label : 1 - v.label);
    write_reports(out, r.summary, r.verdicts, cm);
    o.write_echo(out);
    std::printf("lopo %s: classified %zu misclassified %zu ambiguous %zu accuracy %s%%\n", model.c_str(),
                r.summary.classified, r.summary.misclassified, r.summary.ambiguous,
                format_percent(r.summary.accuracy()).c_str());
    return kOk;
  }
  if (a.protocol != "holdout") throw ConfigError("--protocol must be lopo or holdout");
  if (a.weights.empty()) throw ConfigError("--weights is required for holdout evaluation");
  Network<float> net = Network<float>::instantiate(spec, 0);
  load_weights(net, a.weights);
  fs::path tp = a.train_patients.empty() ? fs::path(a.weights).parent_path() / "patients.txt" : fs::path(a.train_patients);
  const auto training = read_lines(tp);
  const auto probs = predict(net, m.data);
  const auto r = holdout_eval(m.data, probs, training, model, a.threshold);
  write_reports(out, r.summary, r.verdicts, r.matrix);
  o.write_echo(out);
  std::printf("holdout %s: classified %zu misclassified %zu ambiguous %zu accuracy %s%%\n", model.c_str(),
              r.summary.classified, r.summary.misclassified, r.summary.ambiguous,
              format_percent(r.accuracy()).c_str());
  return kOk;
}

struct GradcheckArgs {
  std::size_t seeds = 20;
  std::uint64_t seed = 1;
  std::string out;
};

int run_gradcheck(const GradcheckArgs& a, const Options& o) {
  const auto results = gradenet::run_gradcheck(a.seeds, a.seed);
  std::ostringstream csv;
  csv << "layer,max_relative_error,tolerance,entries,seeds,status\n";
  bool ok = true;
  std::printf("%-10s %14s %10s %8s  status\n", "layer", "max_rel_err", "tolerance", "entries");
  for (const auto& r : results) {
    ok = ok && r.pass();
    std::printf("%-10s %14.3e %10.0e %8zu  %s\n", r.name.c_str(), r.max_relative_error, r.tolerance, r.checked,
                r.pass() ? "ok" : "FAIL");
    char buf[160];
    std::snprintf(buf, sizeof buf, "%s,%.6e,%.0e,%zu,%zu,%s\n", r.name.c_str(), r.max_relative_error, r.tolerance,
                  r.checked, r.seeds, r.pass() ? "ok" : "fail");
    csv << buf;
  }
  if (!a.out.empty()) {
    fs::create_directories(a.out);
    std::ofstream(fs::path(a.out) / "gradcheck.csv", std::ios::trunc) << csv.str();
    o.write_echo(a.out);
  }
  if (!ok) throw VerificationFailure("gradient check exceeded tolerance");
  return kOk;
}

struct InspectArgs {
  std::string manifest, weights, out, arch;
  std::size_t index = 0, block = 1, branch = 0;
};

int run_inspect(const InspectArgs& a, const Options& o) {
  if (a.out.empty() || a.weights.empty()) throw ConfigError("--weights and --out are required");
  auto m = load_manifest(a.manifest);
  const auto spec = build_architecture(resolve_architecture(a.arch, m.mode), m.channels);
  Network<float> net = Network<float>::instantiate(spec, 0);
  load_weights(net, a.weights);
  if (a.index >= m.data.size()) throw ConfigError("--index " + std::to_string(a.index) + " out of range");
  const auto& sample = m.data[a.index];
  if (a.branch >= sample.inputs.size()) throw ConfigError("--branch out of range");
  const auto maps = dump_activations(net, sample.inputs[a.branch], a.block, a.branch);
  const fs::path out = a.out;
  fs::create_directories(out);
  for (const auto& map : maps) {
    char stem[64];
    std::snprintf(stem, sizeof stem, "block%zu_filter%02zu", a.block, map.filter);
    write_pgm(out / (std::string(stem) + ".pgm"), map);
    write_map_csv(out / (std::string(stem) + ".csv"), map);
  }
  o.write_echo(out);
  std::printf("wrote %zu activation maps of %s block %zu to %s\n", maps.size(), sample.patient_id.c_str(), a.block,
              a.out.c_str());
  return kOk;
}

void fail(const char* kind, const std::string& msg) {
  std::string one = msg;
  for (auto& c : one)
    if (c == '\n' || c == '\r') c = ' ';
  std::fprintf(stderr, "gradenet: error: %s: %s\n", kind, one.c_str());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Brain tumor grading CNN pipeline on multi-sequence MR volumes"};
  app.require_subcommand(1);
  std::string config;

  PhantomArgs pa;
  auto* ph = app.add_subcommand("phantom", "Generate a synthetic labeled volume cohort");
  Options po(ph);
  ph->add_option("--config", config, "Flat key=value config file");
  po.add("out", pa.out, "Output directory");
  po.add("dims", pa.dims, "Volume dims z,y,x");
  po.add("positive", pa.positive, "Positive-class patients (HGG or codeleted)");
  po.add("negative", pa.negative, "Negative-class patients (LGG or non-deleted)");
  po.add("sequences", pa.sequences, "Sequence count: 4 (T1,T1C,T2,FLAIR) or 2 (T1C,T2)");
  po.add("task", pa.task, "a: HGG/LGG, b: codeleted/non-deleted");
  po.add("id-prefix", pa.id_prefix, "Patient id prefix");
  po.add("seed", pa.seed, "Random seed");
  po.add("radius-min", pa.radius_min, "Minimum lesion radius, voxels");
  po.add("radius-max", pa.radius_max, "Maximum lesion radius, voxels");
  po.add("pos-rim", pa.pos_rim, "Positive lesion rim intensity");
  po.add("pos-core", pa.pos_core, "Positive lesion core intensity");
  po.add("pos-noise", pa.pos_noise, "Positive lesion texture noise");
  po.add("neg-intensity", pa.neg_intensity, "Negative lesion intensity");
  po.add("neg-noise", pa.neg_noise, "Negative lesion texture noise");
  po.add("jobs", pa.jobs, "Worker threads");

  PrepareArgs pra;
  auto* pr = app.add_subcommand("prepare", "Extract patch, slice or planar samples and a manifest");
  Options pro(pr);
  pr->add_option("--config", config, "Flat key=value config file");
  pro.add("data", pra.data, "Directory of patient volumes");
  pro.add("out", pra.out, "Output directory (manifest.tsv, samples/)");
  pro.add("mode", pra.mode, "patch, slice or planar");
  pro.add("window", pra.prep.window, "Slices in the window around the reference slice");
  pro.add("skip-hgg", pra.prep.skip_hgg, "Slice step for HGG patients");
  pro.add("skip-lgg", pra.prep.skip_lgg, "Slice step for other patients");
  pro.add("jitter", pra.prep.jitter, "Bounding-box jitter, pixels (0 disables)");
  pro.add("patch-size", pra.prep.patch_size, "Patch side");
  pro.add("slice-size", pra.prep.slice_size, "Slice side after center crop/pad");
  pro.add("sequences", pra.sequences, "Comma-separated sequences (default: all present)");
  pro.add("normalize", pra.prep.normalize, "Z-score each sequence over nonzero voxels");
  pro.add("seed", pra.prep.seed, "Random seed");
  pro.add("jobs", pra.jobs, "Worker threads");

  TrainArgs ta;
  auto* tr = app.add_subcommand("train", "Train a network from scratch");
  Options tro(tr);
  tr->add_option("--config", config, "Flat key=value config file");
  tro.add("manifest", ta.manifest, "Sample manifest");
  tro.add("out", ta.out, "Output directory (weights.bin, epoch_log.csv)");
  tro.add("arch", ta.arch, "patchnet, slicenet or volumenet (default: from mode)");
  tro.add("init-seed", ta.init_seed, "Weight initialization seed");
  add_train_flags(tro, ta.cfg);

  TrainArgs fa;
  fa.cfg.learning_rate = kFineTuneLearningRate;
  auto* ft = app.add_subcommand("finetune", "Replace the output layer, freeze early layers and retrain");
  Options fto(ft);
  ft->add_option("--config", config, "Flat key=value config file");
  fto.add("manifest", fa.manifest, "Sample manifest");
  fto.add("weights", fa.weights, "Pretrained weight file");
  fto.add("out", fa.out, "Output directory");
  fto.add("arch", fa.arch, "patchnet, slicenet or volumenet (default: from mode)");
  fto.add("init-seed", fa.init_seed, "Seed of the replaced output layer");
  fto.add("freeze-block", fa.freeze_block, "Freeze every layer before this conv block (1-based; 0: none)");
  fto.add("freeze-boundary", fa.freeze_boundary, "Freeze layers before this layer position (overrides block)");
  add_train_flags(fto, fa.cfg);

  EvalArgs ea;
  auto* ev = app.add_subcommand("eval", "LOPO or holdout evaluation with majority voting");
  Options evo(ev);
  ev->add_option("--config", config, "Flat key=value config file");
  evo.add("protocol", ea.protocol, "lopo or holdout");
  evo.add("manifest", ea.manifest, "Sample manifest (cohort or holdout)");
  evo.add("out", ea.out, "Report directory");
  evo.add("arch", ea.arch, "patchnet, slicenet or volumenet (default: from mode)");
  evo.add("model", ea.model, "Model name in the summary (default: architecture)");
  evo.add("weights", ea.weights, "Trained weights (holdout)");
  evo.add("train-patients", ea.train_patients, "Training patient ids (holdout; default: next to weights)");
  evo.add("threshold", ea.threshold, "Decision threshold");
  evo.add("jobs", ea.jobs, "Parallel folds (lopo)");
  add_train_flags(evo, ea.cfg);

  GradcheckArgs ga;
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of every layer's gradients");
  Options gco(gc);
  gc->add_option("--config", config, "Flat key=value config file");
  gco.add("seeds", ga.seeds, "Random draws per layer kind");
  gco.add("seed", ga.seed, "Base seed");
  gco.add("out", ga.out, "Optional output directory for gradcheck.csv");

  InspectArgs ia;
  auto* ia_cmd = app.add_subcommand("inspect-activations", "Dump post-ReLU feature maps as PGM and CSV");
  Options iao(ia_cmd);
  ia_cmd->add_option("--config", config, "Flat key=value config file");
  iao.add("manifest", ia.manifest, "Sample manifest");
  iao.add("weights", ia.weights, "Trained weights");
  iao.add("out", ia.out, "Output directory");
  iao.add("arch", ia.arch, "patchnet, slicenet or volumenet (default: from mode)");
  iao.add("index", ia.index, "Manifest record index");
  iao.add("block", ia.block, "Conv block, 1-based");
  iao.add("branch", ia.branch, "Branch (0 axial, 1 coronal, 2 sagittal for volumenet)");

  // Splice config-file entries in front of the command-line flags.
  std::vector<std::string> args(argv + 1, argv + argc);
  try {
    for (std::size_t i = 0; i < args.size(); ++i) {
      std::string path;
      if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
      else if (args[i].rfind("--config=", 0) == 0) path = args[i].substr(9);
      if (path.empty()) continue;
      std::size_t sub = 0;
      while (sub < args.size() && args[sub].rfind("-", 0) == 0) ++sub;
      if (sub == args.size()) throw ConfigError("--config must follow a subcommand");
      auto extra = config_arguments(path);
      args.insert(args.begin() + static_cast<std::ptrdiff_t>(sub) + 1, extra.begin(), extra.end());
      break;
    }
  } catch (const ConfigError& e) {
    fail("usage", e.what());
    return kUsage;
  }
  std::reverse(args.begin(), args.end());

  try {
    app.parse(args);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    fail("usage", e.what());
    return kUsage;
  }

  try {
    if (ph->parsed()) return run_phantom(pa, po);
    if (pr->parsed()) return run_prepare(pra, pro);
    if (tr->parsed()) return run_train(ta, tro, false);
    if (ft->parsed()) return run_train(fa, fto, true);
    if (ev->parsed()) return run_eval(ea, evo);
    if (gc->parsed()) return run_gradcheck(ga, gco);
    if (ia_cmd->parsed()) return run_inspect(ia, iao);
  } catch (const VerificationFailure& e) {
    fail("verification", e.what());
    return kVerify;
  } catch (const ConfigError& e) {
    fail("usage", e.what());
    return kUsage;
  } catch (const std::exception& e) {
    fail("data", e.what());
    return kData;
  }
  return kUsage;
}
