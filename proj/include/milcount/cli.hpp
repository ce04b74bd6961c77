#pragma once

#include <chrono>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "annotations.hpp"
#include "augment.hpp"
#include "bags.hpp"
#include "config.hpp"
#include "cv.hpp"
#include "evalcv.hpp"
#include "io.hpp"
#include "parallel.hpp"
#include "synthgen.hpp"

namespace milcount::cli {

namespace fs = std::filesystem;

enum ExitCode : int { kOk = 0, kStageError = 1, kUsage = 2 };

inline std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// Records what a stage read, wrote and was configured with. Written as
// <dir>/run_<command>.json once the stage succeeds.
class RunRecorder {
 public:
  RunRecorder(std::string command, std::vector<std::string> argv)
      : command_(std::move(command)), argv_(std::move(argv)), started_(utc_now()) {}

  void config(const KeyValues& kv) {
    for (const auto& [k, v] : kv) config_[k] = v;
  }
  void config(const std::string& k, const std::string& v) { config_[k] = v; }

  void input(const fs::path& p) {
    if (fs::is_regular_file(p)) inputs_[p.generic_string()] = io::file_hash(p);
  }
  void output(const fs::path& p) {
    if (fs::is_regular_file(p)) outputs_[p.generic_string()] = io::file_hash(p);
  }

  void write(const fs::path& dir) const {
    nlohmann::ordered_json j;
    std::string key = command_;
    for (const auto& a : argv_) key += "\x1f" + a;
    for (const auto& [p, h] : inputs_) key += "\x1f" + h;
    j["run_id"] = io::hex64(io::fnv1a64(key));
    j["command"] = command_;
    j["argv"] = argv_;
    j["config"] = config_;
    j["inputs"] = inputs_;
    j["outputs"] = outputs_;
    j["started"] = started_;
    j["finished"] = utc_now();
    io::write_text(dir / ("run_" + command_ + ".json"), j.dump(2) + "\n");
  }

 private:
  std::string command_;
  std::vector<std::string> argv_;
  std::string started_;
  std::map<std::string, std::string> config_, inputs_, outputs_;
};

inline std::vector<std::uint64_t> parse_seeds(const std::string& s) {
  std::vector<std::uint64_t> seeds;
  for (const auto& part : io::split(s, ','))
    if (!io::trim(part).empty()) seeds.push_back(static_cast<std::uint64_t>(io::parse_int(part, "seeds")));
  if (seeds.empty()) throw ValidationError("--seeds needs at least one seed");
  return seeds;
}

inline std::vector<LabeledSlide> labeled_slides(const fs::path& in) {
  std::vector<LabeledSlide> out;
  if (in.extension() == ".json") {
    for (const auto& s : load_dataset(in)) out.push_back({s.slide_id, s.label});
  } else {
    for (const auto& e : read_manifest(in).entries) out.push_back({e.slide_id, e.label});
  }
  return out;
}

inline fs::path parent_or_cwd(const fs::path& p) { return p.has_parent_path() ? p.parent_path() : fs::path("."); }

// Entry point shared by the milcount tool and the tests.
inline int dispatch(const std::vector<std::string>& args, std::ostream& out = std::cout,
                    std::ostream& err = std::cerr) {
  CLI::App app{"milcount: bag-level droplet count regression toolkit"};
  app.require_subcommand(1);
  app.fallthrough(false);

  std::size_t threads = 1;
  std::uint64_t seed = 1;
  auto add_threads = [&](CLI::App* sc) { sc->add_option("--threads", threads, "worker threads")->capture_default_str(); };

  // ingest
  std::vector<std::string> ingest_in;
  std::string ingest_out;
  auto* ingest = app.add_subcommand("ingest", "merge annotation files in order");
  ingest->add_option("--in", ingest_in, "annotation files")->required()->expected(1, -1);
  ingest->add_option("--out", ingest_out, "merged annotation file")->required();

  // stats
  std::string stats_in, stats_out;
  auto* stats = app.add_subcommand("stats", "per-class cell totals");
  stats->add_option("--in", stats_in)->required();
  stats->add_option("--out", stats_out)->required();

  // augment
  std::string aug_in, aug_images, aug_out, aug_specs = "b12,b08,blur3";
  auto* augment = app.add_subcommand("augment", "brightness and blur copies with suffixed annotations");
  augment->add_option("--in", aug_in)->required();
  augment->add_option("--images", aug_images)->required();
  augment->add_option("--out", aug_out)->required();
  augment->add_option("--specs", aug_specs)->capture_default_str();
  add_threads(augment);

  // featurize
  std::string feat_mode = "blob", feat_in, feat_images, feat_emb, feat_out;
  int feat_patch = kDefaultPatch;
  BlobParams blob;
  auto* featurize = app.add_subcommand("featurize", "assemble per-slide bags");
  featurize->add_option("--mode", feat_mode)->check(CLI::IsMember({"blob", "embed"}))->capture_default_str();
  featurize->add_option("--in", feat_in)->required();
  featurize->add_option("--images", feat_images)->required();
  featurize->add_option("--emb", feat_emb, "embedding directory (embed mode)");
  featurize->add_option("--out", feat_out, "bag manifest path")->required();
  featurize->add_option("--patch", feat_patch)->capture_default_str();
  featurize->add_option("--threshold", blob.threshold)->capture_default_str();
  featurize->add_option("--ref-area", blob.ref_area)->capture_default_str();
  add_threads(featurize);

  // synthgen
  SynthConfig synth;
  std::string synth_out;
  auto* synthgen = app.add_subcommand("synthgen", "oracle-labelled synthetic slides");
  synthgen->add_option("--n", synth.n_slides)->required();
  synthgen->add_option("--seed", synth.seed)->capture_default_str();
  synthgen->add_option("--out", synth_out)->required();
  synthgen->add_flag("--grid-safe", synth.grid_safe, "keep each cell inside one patch tile");
  synthgen->add_option("--patch", synth.patch)->capture_default_str();
  synthgen->add_option("--width", synth.width)->capture_default_str();
  synthgen->add_option("--height", synth.height)->capture_default_str();
  synthgen->add_option("--cells-min", synth.cells_min)->capture_default_str();
  synthgen->add_option("--cells-max", synth.cells_max)->capture_default_str();
  synthgen->add_option("--droplets-min", synth.droplets_min)->capture_default_str();
  synthgen->add_option("--droplets-max", synth.droplets_max)->capture_default_str();
  add_threads(synthgen);

  // split
  int split_k = 5;
  std::string split_in, split_out;
  auto* split = app.add_subcommand("split", "stratified k-fold split CSVs");
  split->add_option("--k", split_k)->capture_default_str();
  split->add_option("--seed", seed)->capture_default_str();
  split->add_option("--in", split_in, "bag manifest or annotation JSON")->required();
  split->add_option("--out", split_out, "split directory")->required();

  // train / cv share options
  std::string model = "mlp", bags_path, splits_dir, run_out, config_path, seeds_str = "1";
  int fold = 0;
  int max_epochs = 0, accum_steps = 0;
  auto add_run_opts = [&](CLI::App* sc) {
    sc->add_option("--model", model)->check(CLI::IsMember({"mil", "mlp"}))->required();
    sc->add_option("--bags", bags_path, "bag manifest")->required();
    sc->add_option("--splits", splits_dir, "split directory")->required();
    sc->add_option("--out", run_out, "run directory")->required();
    sc->add_option("--config", config_path, "key=value config file");
    sc->add_option("--max-epochs", max_epochs, "override max_epochs");
    sc->add_option("--accum-steps", accum_steps, "override accum_steps");
  };
  auto* train = app.add_subcommand("train", "train one fold");
  add_run_opts(train);
  train->add_option("--fold", fold)->capture_default_str();
  train->add_option("--seed", seed)->capture_default_str();
  auto* cv = app.add_subcommand("cv", "cross-validate over all folds and seeds");
  add_run_opts(cv);
  cv->add_option("--seeds", seeds_str)->capture_default_str();
  add_threads(cv);

  // report
  std::string report_runs, report_out, overall = "auto";
  auto* report = app.add_subcommand("report", "aggregate metric rows into mean±std tables");
  report->add_option("--runs", report_runs, "run directory or metrics CSV")->required();
  report->add_option("--out", report_out)->required();
  report->add_option("--overall", overall)->check(CLI::IsMember({"auto", "primary", "seed-means"}))->capture_default_str();

  std::vector<const char*> argv{"milcount"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\n" << app.help();
    return kUsage;
  }

  CLI::App* sub = app.get_subcommands().front();
  const std::string name = sub->get_name();
  RunRecorder rec(name, args);
  try {
    if (sub == ingest) {
      std::vector<fs::path> files(ingest_in.begin(), ingest_in.end());
      const Dataset merged = merge_annotation_files(files);
      save_dataset(ingest_out, merged);
      out << "merged " << files.size() << " files, " << merged.size() << " slides -> " << ingest_out << "\n";
    } else if (sub == stats) {
      const auto st = dataset_stats(load_dataset(stats_in));
      io::write_text(stats_out, stats_csv(st));
      out << "total cells " << st.total << "\n";
    } else if (sub == augment) {
      std::vector<AugmentSpec> specs;
      for (const auto& s : io::split(aug_specs, ','))
        if (!io::trim(s).empty()) specs.push_back(AugmentSpec::parse(io::trim(s)));
      const Dataset src = load_dataset(aug_in);
      rec.input(aug_in);
      const auto res = augment_dataset(src, specs, aug_images, aug_out, threads);
      // Originals are copied so the output directory is self-contained.
      for (const auto& s : src) {
        const fs::path dst = fs::path(aug_out) / s.image_path;
        fs::create_directories(parent_or_cwd(dst));
        fs::copy_file(fs::path(aug_images) / s.image_path, dst, fs::copy_options::overwrite_existing);
      }
      std::vector<Dataset> parts{src};
      for (std::size_t i = 0; i < specs.size(); ++i) {
        const fs::path p = fs::path(aug_out) / ("annotations" + specs[i].suffix + ".json");
        save_dataset(p, res.per_spec[i]);
        rec.output(p);
        parts.push_back(res.per_spec[i]);
      }
      const Dataset all = merge_annotations(parts);
      save_dataset(fs::path(aug_out) / "merged.json", all);
      rec.output(fs::path(aug_out) / "merged.json");
      rec.config("specs", aug_specs);
      rec.write(aug_out);
      out << "augmented " << src.size() << " slides with " << specs.size() << " specs -> " << all.size()
          << " records\n";
    } else if (sub == featurize) {
      const Dataset slides = load_dataset(feat_in);
      rec.input(feat_in);
      FeatureSource source;
      source.mode = parse_mode(feat_mode);
      source.image_root = feat_images;
      source.embedding_dir = feat_emb;
      source.blob = blob;
      source.patch = feat_patch;
      if (source.mode == FeatureMode::embedding && feat_emb.empty())
        throw ValidationError("embed mode needs --emb <dir>");
      std::vector<Bag> bags(slides.size());
      parallel_for(slides.size(), threads, [&](std::size_t i) { bags[i] = assemble_bag(slides[i], source); });
      const fs::path dir = parent_or_cwd(feat_out);
      BagManifest m;
      m.mode = source.mode;
      m.patch = feat_patch;
      m.features = bags.empty() ? kBlobFeatures : static_cast<int>(bags.front().dims());
      for (const auto& b : bags) {
        if (b.dims() != m.features) throw ShapeError("bag '" + b.slide_id + "' feature width differs from the first bag");
        const std::string rel = "bags/" + b.slide_id + ".milf";
        write_embedding(dir / rel, b.features);
        m.entries.push_back({b.slide_id, rel, b.label});
      }
      io::write_text(feat_out, encode_manifest(m));
      rec.output(feat_out);
      rec.config({{"mode", feat_mode}, {"patch", std::to_string(feat_patch)},
                  {"threshold", std::to_string(blob.threshold)}, {"ref_area", io::fmt(blob.ref_area)}});
      rec.write(dir);
      out << "featurized " << bags.size() << " slides (F=" << m.features << ") -> " << feat_out << "\n";
    } else if (sub == synthgen) {
      const auto slides = generate(synth, threads);
      const auto written = write_synthetic(slides, synth_out, threads);
      rec.output(fs::path(synth_out) / "annotations.json");
      rec.output(fs::path(synth_out) / "oracle.csv");
      rec.config({{"n", std::to_string(synth.n_slides)}, {"seed", std::to_string(synth.seed)},
                  {"grid_safe", synth.grid_safe ? "true" : "false"}, {"patch", std::to_string(synth.patch)},
                  {"width", std::to_string(synth.width)}, {"height", std::to_string(synth.height)}});
      rec.write(synth_out);
      out << "generated " << slides.size() << " slides -> " << synth_out << "\n";
    } else if (sub == split) {
      const auto slides = labeled_slides(split_in);
      rec.input(split_in);
      const auto folds = make_splits(slides, split_k, seed);
      for (const auto& p : write_splits(split_out, folds)) rec.output(p);
      rec.config({{"k", std::to_string(split_k)}, {"seed", std::to_string(seed)}});
      rec.write(split_out);
      out << "wrote " << folds.size() << " folds -> " << split_out << "\n";
    } else if (sub == train || sub == cv) {
      const ModelKind kind = parse_model_kind(model);
      RunSettings settings;
      settings.train = kind == ModelKind::mil ? TrainConfig::for_mil() : TrainConfig::for_mlp();
      if (!config_path.empty()) {
        apply_settings(read_key_values(config_path), settings);
        rec.input(config_path);
      }
      if (max_epochs > 0) settings.train.max_epochs = max_epochs;
      if (accum_steps > 0) settings.train.accum_steps = accum_steps;
      settings.train.validate();
      const BagManifest manifest = read_manifest(bags_path);
      const auto bags = load_bags(manifest, parent_or_cwd(bags_path));
      auto folds = read_splits(splits_dir);
      rec.input(bags_path);
      std::vector<std::uint64_t> seeds;
      if (sub == train) {
        if (fold < 0 || fold >= static_cast<int>(folds.size()))
          throw ValidationError("--fold " + std::to_string(fold) + " out of range");
        folds = {folds[static_cast<std::size_t>(fold)]};
        seeds = {seed};
      } else {
        seeds = parse_seeds(seeds_str);
      }
      settings.train.seed = seeds.front();
      const auto res = run_cv(kind, manifest, bags, folds, seeds, settings, threads, run_out);
      for (const auto& p : res.outputs) rec.output(p);
      rec.config(settings_snapshot(settings));
      rec.config("model", model);
      rec.config("seeds", seeds_str);
      io::write_text(fs::path(run_out) / "config.txt", key_values_text(settings_snapshot(settings)));
      rec.write(run_out);
      for (const auto& r : res.rows)
        out << model << " seed " << r.seed << " fold " << r.fold << ": val_mae " << io::fmt_fixed(r.val_mae, 4)
            << " test_mae " << io::fmt_fixed(r.test_mae, 4) << "\n";
    } else if (sub == report) {
      const fs::path src = fs::is_directory(report_runs) ? fs::path(report_runs) / "metrics.csv" : fs::path(report_runs);
      const auto rows = parse_metrics_csv(io::read_text(src), src.string());
      const OverallRule rule = overall == "primary"      ? OverallRule::primary_seed
                               : overall == "seed-means" ? OverallRule::seed_means
                                                         : OverallRule::automatic;
      io::write_text(report_out, report_csv(rows, rule));
      const fs::path summary = parent_or_cwd(report_out) / (fs::path(report_out).stem().string() + "_summary.csv");
      io::write_text(summary, summary_csv(rows, rule));
      for (const auto& s : aggregate_rows(rows, GroupBy::overall, rule))
        out << "overall val_mae " << pm(s.val_mae) << " test_mae " << pm(s.test_mae) << "\n";
    }
  } catch (const std::exception& e) {
    err << "error: " << name << ": " << e.what() << "\n";
    return kStageError;
  }
  return kOk;
}

}  // namespace milcount::cli
