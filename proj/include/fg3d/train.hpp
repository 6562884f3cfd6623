// SPDX-License-Identifier: Apache-2.0
//
// Alternating detector / classifier training, evaluation metrics, ablation
// driver and checkpoint conversion.
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <random>
#include <string>
#include <vector>

#include "fg3d/attention.hpp"
#include "fg3d/checkpoint.hpp"
#include "fg3d/config.hpp"
#include "fg3d/dataset.hpp"
#include "fg3d/detector.hpp"
#include "fg3d/optim.hpp"

namespace fg3d {

struct MetricRow {
  std::size_t round = 0;
  std::string phase;  // detector, classifier, detector_eval, classifier_eval, total
  std::size_t epoch = 0;
  double mean_loss = 0.0;
  bool operator==(const MetricRow&) const = default;
};

struct TrainState {
  ParamStore det;
  ParamStore att;
  AdamState det_adam;
  AdamState att_adam;
  std::mt19937_64 rng;
  std::size_t rounds_done = 0;
  std::vector<MetricRow> metrics;
};

/// Rounds every parameter and optimizer moment to float32 in place.
void snap_to_single(TrainState& state);

struct Prediction {
  std::string shape_id;
  std::size_t true_label = 0;
  std::size_t pred_label = 0;
  std::vector<double> probs;
};

struct EvalReport {
  double instance_accuracy = 0.0;
  double class_accuracy = 0.0;  // mean over classes present in the split
  std::vector<std::vector<std::size_t>> confusion;  // [true][pred]
  std::vector<Prediction> predictions;
};

/// Index of the largest value; ties go to the lowest index.
std::size_t argmax_lowest(const std::vector<double>& values);
/// Builds the metrics from predictions. Throws DataError if empty.
EvalReport make_report(std::vector<Prediction> predictions, std::size_t classes);

/// Per shape, per view, the [K×D] part features.
using GspCache = std::vector<std::vector<Tensor>>;

/// Runs `fn(i)` for i in [0, n) on up to `threads` workers. Each index is
/// handled exactly once; the first exception is rethrown.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn);

/// Directory names derived from the camera rig.
std::string rig_key(const CameraRig& rig);
std::filesystem::path view_cache_dir(const Config& config);
std::filesystem::path gt_dir(const Config& config);

/// Renders missing or stale views of every shape to the on-disk cache.
/// Returns the number of shapes rendered (0 when the cache is valid).
std::size_t ensure_view_cache(const Config& config, const Dataset& dataset);
/// Writes GSP ground truth for every shape. Returns the file count.
std::size_t build_ground_truth(const Config& config, const Dataset& dataset);

class Pipeline {
 public:
  Pipeline(Config config, Dataset dataset);

  const Config& config() const { return config_; }
  const Dataset& dataset() const { return dataset_; }
  const Detector& detector() const { return detector_; }
  std::size_t classes() const { return dataset_.classes.size(); }

  /// Fresh parameters, optimizer state and RNG from the config seed.
  TrainState init_state() const;
  void init_attention(ParamStore& att) const;

  /// Quantized view tensors of a shape (loaded from the view cache, which
  /// is filled on demand).
  const std::vector<Tensor>& views(const DatasetEntry& entry);
  const std::vector<std::vector<BBox>>& ground_truth(const DatasetEntry& entry);
  void preload(const std::vector<DatasetEntry>& entries);

  /// Mean over views of the per-view detection loss of one shape.
  Tensor shape_detection_loss(const ParamStore& det, const DatasetEntry& entry, std::mt19937_64& sampler);

  double train_detector_epoch(TrainState& state);
  double train_classifier_epoch(ParamStore& att, AdamState& adam, std::mt19937_64& rng, const GspCache& cache,
                                const std::vector<DatasetEntry>& entries, AttentionMode mode);

  /// Ranked proposals of every view of a shape.
  std::vector<std::vector<Proposal>> proposals(const ParamStore& det, const DatasetEntry& entry);
  GspCache gsp_features(const ParamStore& det, const std::vector<DatasetEntry>& entries);

  double eval_detection_loss(const ParamStore& det, const std::vector<DatasetEntry>& entries);
  double eval_classification_loss(const ParamStore& att, const GspCache& cache,
                                  const std::vector<DatasetEntry>& entries, AttentionMode mode);

  /// Runs rounds rounds_done+1 .. config.rounds. `on_round` runs after each
  /// round, once the state has been rounded to float32.
  void alternate_train(TrainState& state, const std::function<void(const TrainState&)>& on_round = {});

  EvalReport evaluate(const ParamStore& att, const GspCache& cache, const std::vector<DatasetEntry>& entries,
                      AttentionMode mode) const;
  EvalReport evaluate(const TrainState& state, const std::string& split);

  /// Fraction of GT boxes matched at IoU ≥ iou_threshold by one of the
  /// top `recall_top_n` proposals of their view.
  double detector_recall(const ParamStore& det, const std::vector<DatasetEntry>& entries,
                         double iou_threshold = 0.5);

  /// Trains a fresh classifier branch per mode on the given detector, all
  /// from the same seeds, and evaluates each on the test split.
  std::vector<std::pair<AttentionMode, EvalReport>> run_ablation(const ParamStore& det,
                                                                 const std::vector<AttentionMode>& modes);

 private:
  Config config_;
  Dataset dataset_;
  Detector detector_;
  std::map<std::string, std::vector<Tensor>> views_;
  std::map<std::string, std::vector<std::vector<BBox>>> gt_;
  std::mutex cache_mutex_;
};

Checkpoint to_checkpoint(const Config& config, const Dataset& dataset, const TrainState& state);
/// Restores the state written by to_checkpoint into a pipeline's layout.
/// Throws DataError when tensors are missing or mis-shaped.
TrainState from_checkpoint(const Pipeline& pipeline, const Checkpoint& ckpt);
/// The config snapshot stored in a checkpoint.
Config checkpoint_config(const Checkpoint& ckpt);

void write_metrics_csv(const std::vector<MetricRow>& rows, const std::filesystem::path& path);
std::vector<MetricRow> parse_metrics_csv(const std::string& text);
void write_confusion_csv(const EvalReport& report, const std::vector<std::string>& classes,
                         const std::filesystem::path& path);
void write_predictions_csv(const EvalReport& report, const std::filesystem::path& path);
void write_ablation_csv(const std::vector<std::pair<AttentionMode, EvalReport>>& rows,
                        const std::filesystem::path& path);

}  // namespace fg3d
