// SPDX-License-Identifier: Apache-2.0
//
// fg3d: data generation, rendering, training, evaluation and inspection.
// Exit codes: 0 ok, 1 usage/config, 2 data, 3 numeric/contract.
#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>

#include "fg3d/error.hpp"
#include "fg3d/gradient_suite.hpp"
#include "fg3d/shape_synth.hpp"
#include "fg3d/train.hpp"

namespace fs = std::filesystem;
using namespace fg3d;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kConfig: return kExitUsage;
    case ErrorKind::kData:
    case ErrorKind::kParse:
    case ErrorKind::kIo:
    case ErrorKind::kVersion:
    case ErrorKind::kGeometry:
    case ErrorKind::kDetection: return kExitData;
    case ErrorKind::kNumeric:
    case ErrorKind::kContract:
    case ErrorKind::kDimension: return kExitNumeric;
  }
  return kExitNumeric;
}

void log(const std::string& msg) { std::cerr << msg << "\n"; }

std::string pct(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  return buf;
}

Dataset open_dataset(const Config& config) {
  if (!fs::exists(fs::path(config.dataset_root) / "train.txt")) {
    throw DataError("no dataset at " + config.dataset_root + " (run gen-data first)");
  }
  return load_dataset(config.dataset_root);
}

fs::path round_checkpoint(const Config& c, std::size_t r) {
  return fs::path(c.out_dir) / ("checkpoint_round" + std::to_string(r) + ".fgpv");
}

/// Architecture comes from the checkpoint; where to read and write from the
/// run config when one is given.
Config eval_config(const Checkpoint& ckpt, const std::optional<Config>& run) {
  Config c = checkpoint_config(ckpt);
  if (run) {
    c.dataset_root = run->dataset_root;
    c.out_dir = run->out_dir;
    c.threads = run->threads;
  }
  return c;
}

const DatasetEntry& find_shape(const Dataset& d, const std::string& id) {
  for (const auto* split : {&d.train, &d.val, &d.test}) {
    for (const auto& e : *split) {
      if (e.shape_id == id || e.rel_path == id) return e;
    }
  }
  throw DataError("shape '" + id + "' is not in the dataset at " + d.root.string());
}

void report_eval(const EvalReport& r, const std::string& split) {
  std::cout << split << ": instance_accuracy " << pct(r.instance_accuracy) << " class_accuracy "
            << pct(r.class_accuracy) << " (" << r.predictions.size() << " shapes)\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-view part-attention shape classifier"};
  app.require_subcommand(1);

  std::string config_path;
  auto load = [&]() { return config_path.empty() ? Config{} : load_config(config_path); };

  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic shape dataset");
  std::string gen_out;
  gen->add_option("--config", config_path, "Run config file");
  gen->add_option("--out", gen_out, "Dataset directory (defaults to dataset_root)");

  auto* render = app.add_subcommand("render", "Render the view cache of every shape");
  std::string dataset_dir;
  render->add_option("--config", config_path, "Run config file");
  render->add_option("--dataset", dataset_dir, "Dataset directory (defaults to dataset_root)");

  auto* gt = app.add_subcommand("gsp-gt", "Build ground-truth part boxes for every view");
  gt->add_option("--config", config_path, "Run config file");
  gt->add_option("--dataset", dataset_dir, "Dataset directory (defaults to dataset_root)");

  auto* train = app.add_subcommand("train", "Alternating detector/classifier training");
  std::string resume;
  train->add_option("--config", config_path, "Run config file")->required();
  train->add_option("--resume", resume, "Continue from a round checkpoint");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  std::string ckpt_path, split = "test";
  bool recall = false;
  eval->add_option("--config", config_path, "Run config (dataset and output locations)");
  eval->add_option("--checkpoint", ckpt_path, "Checkpoint file")->required();
  eval->add_option("--split", split, "train, test or val")->check(CLI::IsMember({"train", "test", "val"}));
  eval->add_flag("--recall", recall, "Also report detector recall at IoU 0.5");

  auto* ablate = app.add_subcommand("ablate", "Train and evaluate the classifier under each attention mode");
  std::string modes_text = "opa,ova,na,nr";
  ablate->add_option("--config", config_path, "Run config file")->required();
  ablate->add_option("--checkpoint", ckpt_path, "Base detector (defaults to <out_dir>/checkpoint_final.fgpv)");
  ablate->add_option("--modes", modes_text, "Comma-separated modes");

  auto* grad = app.add_subcommand("grad-check", "Finite-difference gradient suite (ops and composed paths)");
  grad->add_option("--config", config_path, "Run config file");

  auto* attn = app.add_subcommand("export-attn", "Attention heatmaps and boxed views for one shape");
  std::string shape_id, attn_out;
  attn->add_option("--checkpoint", ckpt_path, "Checkpoint file")->required();
  attn->add_option("--shape", shape_id, "Shape id")->required();
  attn->add_option("--config", config_path, "Run config (dataset and output locations)");
  attn->add_option("--out", attn_out, "Output directory (defaults to <out_dir>/attention)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (gen->parsed()) {
      const Config c = load();
      GenerateOptions g;
      g.family = c.family;
      g.shapes_per_subcategory = c.shapes_per_subcategory;
      g.test_per_subcategory = c.test_per_subcategory;
      g.seed = c.seed;
      const fs::path root = gen_out.empty() ? fs::path(c.dataset_root) : fs::path(gen_out);
      const Dataset d = generate_dataset(g, root);
      std::cout << "wrote " << d.train.size() + d.test.size() << " shapes in " << d.classes.size()
                << " subcategories to " << root.string() << "\n";
    } else if (render->parsed() || gt->parsed()) {
      Config c = load();
      if (!dataset_dir.empty()) c.dataset_root = dataset_dir;
      const Dataset d = open_dataset(c);
      if (render->parsed()) {
        const std::size_t n = ensure_view_cache(c, d);
        std::cout << "rendered " << n << " shapes, " << d.train.size() + d.test.size() - n
                  << " already cached, in " << view_cache_dir(c).string() << "\n";
      } else {
        const std::size_t n = build_ground_truth(c, d);
        std::cout << "wrote ground truth for " << n << " shapes to " << gt_dir(c).string() << "\n";
      }
    } else if (train->parsed()) {
      const Config c = load();
      Pipeline p(c, open_dataset(c));
      TrainState state = p.init_state();
      if (!resume.empty()) {
        state = from_checkpoint(p, load_checkpoint(resume));
        log("resuming after round " + std::to_string(state.rounds_done));
      }
      fs::create_directories(c.out_dir);
      const auto start = std::chrono::steady_clock::now();
      p.alternate_train(state, [&](const TrainState& s) {
        save_checkpoint(to_checkpoint(c, p.dataset(), s), round_checkpoint(c, s.rounds_done));
        write_metrics_csv(s.metrics, fs::path(c.out_dir) / "metrics.csv");
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        log("round " + std::to_string(s.rounds_done) + "/" + std::to_string(c.rounds) + " done (" +
            std::to_string(static_cast<long>(secs)) + " s)");
      });
      save_checkpoint(to_checkpoint(c, p.dataset(), state), fs::path(c.out_dir) / "checkpoint_final.fgpv");
      write_metrics_csv(state.metrics, fs::path(c.out_dir) / "metrics.csv");
      std::cout << "trained " << state.rounds_done << " rounds; checkpoints and metrics.csv in " << c.out_dir
                << "\n";
    } else if (eval->parsed()) {
      const Checkpoint ckpt = load_checkpoint(ckpt_path);
      std::optional<Config> run;
      if (!config_path.empty()) run = load();
      const Config c = eval_config(ckpt, run);
      Pipeline p(c, open_dataset(c));
      const TrainState s = from_checkpoint(p, ckpt);
      const EvalReport r = p.evaluate(s, split);
      const fs::path out = c.out_dir;
      write_confusion_csv(r, p.dataset().classes, out / ("confusion_" + split + ".csv"));
      write_predictions_csv(r, out / ("predictions_" + split + ".csv"));
      report_eval(r, split);
      if (recall) {
        std::cout << split << ": detector_recall@0.5 " << pct(p.detector_recall(s.det, p.dataset().split(split)))
                  << "\n";
      }
    } else if (ablate->parsed()) {
      const Config run = load();
      if (ckpt_path.empty()) ckpt_path = (fs::path(run.out_dir) / "checkpoint_final.fgpv").string();
      if (!fs::exists(ckpt_path)) throw DataError("no base detector at " + ckpt_path + " (run train first)");
      const Checkpoint ckpt = load_checkpoint(ckpt_path);
      const Config c = eval_config(ckpt, run);
      std::vector<AttentionMode> modes;
      std::stringstream ss(modes_text);
      for (std::string m; std::getline(ss, m, ',');) modes.push_back(parse_attention_mode(m));
      Pipeline p(c, open_dataset(c));
      const TrainState s = from_checkpoint(p, ckpt);
      const auto rows = p.run_ablation(s.det, modes);
      write_ablation_csv(rows, fs::path(c.out_dir) / "ablation.csv");
      for (const auto& [mode, r] : rows) report_eval(r, attention_mode_name(mode));
    } else if (grad->parsed()) {
      const Config c = load();
      const auto start = std::chrono::steady_clock::now();
      auto cases = op_gradient_cases();
      const auto composed = composed_gradient_cases(c);
      cases.insert(cases.end(), composed.begin(), composed.end());
      bool ok = true;
      for (const auto& gc : cases) {
        const bool pass = gc.result.max_rel_error < 1e-4;
        ok = ok && pass;
        char line[256];
        std::snprintf(line, sizeof(line), "%-4s %-34s max_rel_error %.3e over %zu coords", pass ? "ok" : "FAIL",
                      gc.name.c_str(), gc.result.max_rel_error, gc.result.coords_checked);
        std::cout << line;
        if (gc.result.kinks_skipped) std::cout << ", " << gc.result.kinks_skipped << " kinks skipped";
        if (!pass) std::cout << " (worst " << gc.result.worst_param << "[" << gc.result.worst_index << "])";
        std::cout << "\n";
      }
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      std::cout << (ok ? "all gradients agree" : "gradient mismatch") << " (" << static_cast<long>(secs) << " s)\n";
      return ok ? 0 : kExitNumeric;
    } else if (attn->parsed()) {
      const Checkpoint ckpt = load_checkpoint(ckpt_path);
      std::optional<Config> run;
      if (!config_path.empty()) run = load();
      const Config c = eval_config(ckpt, run);
      Pipeline p(c, open_dataset(c));
      const TrainState s = from_checkpoint(p, ckpt);
      const DatasetEntry& e = find_shape(p.dataset(), shape_id);
      const fs::path out = attn_out.empty() ? fs::path(c.out_dir) / "attention" : fs::path(attn_out);
      fs::create_directories(out);

      const auto props = p.proposals(s.det, e);
      const GspCache cache = p.gsp_features(s.det, {e});
      ShapeForward fwd;
      {
        NoGradGuard guard;
        fwd = attention_forward(s.att, cache[0], c.mode());
      }
      const auto maps = export_attention_maps(fwd.part_weights, fwd.view_weights, out / e.shape_id);
      std::size_t drawn = 0;
      const fs::path cache_dir = view_cache_dir(c) / e.subcategory / e.shape_id;
      for (std::size_t v = 0; v < props.size(); ++v) {
        char name[32];
        std::snprintf(name, sizeof(name), "v%02zu.ppm", v);
        Image img = read_ppm(cache_dir / name);
        drawn += draw_boxes(img, props[v], 0.8);
        std::snprintf(name, sizeof(name), "_view%zu_boxes.ppm", v);
        write_ppm(img, out / (e.shape_id + name));
      }
      std::vector<std::pair<std::string, std::vector<Proposal>>> rows;
      for (const auto& pv : props) {
        rows.emplace_back(e.shape_id, std::vector<Proposal>(pv.begin(), pv.begin() + std::min<std::ptrdiff_t>(
                                                                             c.k_parts, pv.size())));
      }
      write_detections_csv(rows, out / (e.shape_id + "_detections.csv"));
      if (drawn == 0) log("warning: no proposal scores above 0.8; views exported without boxes");
      std::cout << "wrote " << maps.size() << " heatmaps and " << props.size() << " boxed views to "
                << out.string() << "; predicted " << p.dataset().classes[argmax_lowest(fwd.probs.to_vector())]
                << "\n";
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
  return 0;
}
