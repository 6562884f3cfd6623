// SPDX-License-Identifier: Apache-2.0
#include "fg3d/train.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <iterator>
#include <sstream>
#include <thread>

#include "fg3d/error.hpp"
#include "fg3d/mesh.hpp"
#include "fg3d/render.hpp"
#include "fg3d/shape_synth.hpp"

namespace fg3d {

namespace fs = std::filesystem;

namespace {

enum SeedTag : std::uint64_t { kDetInit = 1, kAttInit = 2, kTrainRng = 3, kEvalSampler = 4, kAblationRng = 5 };

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag) { return splitmix64(splitmix64(seed) ^ tag); }

std::string fmt_g(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return {};
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string shape_hash(const fs::path& off) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&](const std::string& bytes) {
    for (unsigned char c : bytes) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
  };
  fs::path lbl = off;
  lbl.replace_extension(".lbl");
  mix(read_bytes(off));
  mix("|");
  mix(read_bytes(lbl));
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

fs::path shape_view_dir(const Config& config, const DatasetEntry& e) {
  return view_cache_dir(config) / e.subcategory / e.shape_id;
}

fs::path view_file(const fs::path& dir, std::size_t v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "v%02zu.ppm", v);
  return dir / buf;
}

bool view_cache_valid(const Config& config, const Dataset& dataset, const DatasetEntry& e) {
  const fs::path dir = shape_view_dir(config, e);
  if (read_bytes(dir / "key") != shape_hash(dataset.path_of(e))) return false;
  for (std::size_t v = 0; v < config.views; ++v) {
    if (!fs::exists(view_file(dir, v))) return false;
  }
  return true;
}

void render_to_cache(const Config& config, const Dataset& dataset, const DatasetEntry& e) {
  const fs::path dir = shape_view_dir(config, e);
  fs::create_directories(dir);
  const ViewSet set = render_views(load_off(dataset.path_of(e)), config.rig());
  for (std::size_t v = 0; v < set.images.size(); ++v) write_ppm(set.images[v], view_file(dir, v));
  std::ofstream key(dir / "key", std::ios::binary);
  key << shape_hash(dataset.path_of(e));
  if (!key) throw IoError("cannot write " + (dir / "key").string());
}

std::vector<DatasetEntry> all_entries(const Dataset& d) {
  std::vector<DatasetEntry> all = d.train;
  all.insert(all.end(), d.val.begin(), d.val.end());
  all.insert(all.end(), d.test.begin(), d.test.end());
  return all;
}

/// Platform-independent Fisher-Yates order of [0, n).
std::vector<std::size_t> shuffled(std::size_t n, std::mt19937_64& rng) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  for (std::size_t i = n; i > 1; --i) {
    const auto j = static_cast<std::size_t>(unit_uniform(rng) * static_cast<double>(i));
    std::swap(order[i - 1], order[std::min(j, i - 1)]);
  }
  return order;
}

std::function<int(int)> category_function(const std::string& family) {
  const FamilySpec& spec = family_spec(family);
  const std::vector<int> cats = spec.part_category;
  return [cats](int label) {
    return label >= 0 && static_cast<std::size_t>(label) < cats.size() ? cats[static_cast<std::size_t>(label)]
                                                                       : label;
  };
}

void snap(std::vector<double>& values) {
  for (double& v : values) v = to_single(v);
}

void snap_store(ParamStore& store) {
  for (auto& [name, t] : store) {
    for (double& v : t.mutable_data()) v = to_single(v);
  }
}

void snap_adam(AdamState& s) {
  for (auto& [name, m] : s.m) snap(m);
  for (auto& [name, v] : s.v) snap(v);
}

}  // namespace

void snap_to_single(TrainState& state) {
  snap_store(state.det);
  snap_store(state.att);
  snap_adam(state.det_adam);
  snap_adam(state.att_adam);
}

std::size_t argmax_lowest(const std::vector<double>& values) {
  if (values.empty()) throw ContractError("argmax of an empty vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

EvalReport make_report(std::vector<Prediction> predictions, std::size_t classes) {
  if (predictions.empty()) throw DataError("cannot evaluate an empty split");
  EvalReport r;
  r.confusion.assign(classes, std::vector<std::size_t>(classes, 0));
  std::size_t correct = 0;
  for (const auto& p : predictions) {
    if (p.true_label >= classes || p.pred_label >= classes) {
      throw ContractError("prediction label out of range for shape " + p.shape_id);
    }
    ++r.confusion[p.true_label][p.pred_label];
    if (p.true_label == p.pred_label) ++correct;
  }
  r.instance_accuracy = static_cast<double>(correct) / static_cast<double>(predictions.size());
  double acc_sum = 0.0;
  std::size_t present = 0;
  for (std::size_t c = 0; c < classes; ++c) {
    std::size_t total = 0;
    for (auto n : r.confusion[c]) total += n;
    if (total == 0) continue;
    acc_sum += static_cast<double>(r.confusion[c][c]) / static_cast<double>(total);
    ++present;
  }
  r.class_accuracy = acc_sum / static_cast<double>(present);
  r.predictions = std::move(predictions);
  return r;
}

void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min(threads, n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::mutex err_mutex;
  std::size_t err_index = n;
  std::exception_ptr err;
  auto work = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mutex);
        if (i < err_index) {
          err_index = i;
          err = std::current_exception();
        }
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < workers; ++t) pool.emplace_back(work);
  for (auto& t : pool) t.join();
  if (err) std::rethrow_exception(err);
}

std::string rig_key(const CameraRig& rig) {
  char buf[128];
  std::snprintf(buf, sizeof(buf), "v%zu_s%zu_e%g_d%g_f%g", rig.views, rig.image_size, rig.elevation_deg,
                rig.distance, rig.fov_deg);
  return buf;
}

fs::path view_cache_dir(const Config& config) {
  return fs::path(config.dataset_root) / ("views_" + rig_key(config.rig()));
}

fs::path gt_dir(const Config& config) { return fs::path(config.dataset_root) / ("gt_" + rig_key(config.rig())); }

std::size_t ensure_view_cache(const Config& config, const Dataset& dataset) {
  const auto entries = all_entries(dataset);
  std::vector<char> rendered(entries.size(), 0);
  parallel_for(entries.size(), config.threads, [&](std::size_t i) {
    if (view_cache_valid(config, dataset, entries[i])) return;
    render_to_cache(config, dataset, entries[i]);
    rendered[i] = 1;
  });
  return static_cast<std::size_t>(std::count(rendered.begin(), rendered.end(), 1));
}

std::size_t build_ground_truth(const Config& config, const Dataset& dataset) {
  Dataset all = dataset;
  all.train = all_entries(dataset);
  all.val.clear();
  all.test.clear();
  return build_gsp_ground_truth(all, config.rig(), gt_dir(config), category_function(config.family));
}

Pipeline::Pipeline(Config config, Dataset dataset)
    : config_(std::move(config)), dataset_(std::move(dataset)), detector_(config_.detector()) {
  config_.validate();
  if (dataset_.classes.size() < 2) throw DataError("dataset needs at least two subcategories");
  if (config_.val_fraction > 0.0 && dataset_.val.empty()) carve_validation(dataset_, config_.val_fraction);
}

TrainState Pipeline::init_state() const {
  TrainState s;
  detector_.init_params(s.det, derive_seed(config_.seed, kDetInit));
  init_attention(s.att);
  s.rng.seed(derive_seed(config_.seed, kTrainRng));
  return s;
}

void Pipeline::init_attention(ParamStore& att) const {
  init_attention_params(att, config_.attention_dims(classes()), derive_seed(config_.seed, kAttInit));
}

const std::vector<Tensor>& Pipeline::views(const DatasetEntry& entry) {
  std::lock_guard<std::mutex> lock(cache_mutex_);
  const std::string key = entry.rel_path;
  if (auto it = views_.find(key); it != views_.end()) return it->second;
  if (!view_cache_valid(config_, dataset_, entry)) render_to_cache(config_, dataset_, entry);
  const fs::path dir = shape_view_dir(config_, entry);
  std::vector<Tensor> out;
  for (std::size_t v = 0; v < config_.views; ++v) {
    const Image img = read_ppm(view_file(dir, v));
    if (img.width != config_.image_size || img.height != config_.image_size) {
      throw DataError("cached view " + view_file(dir, v).string() + " has the wrong size");
    }
    out.push_back(image_tensor(img));
  }
  return views_.emplace(key, std::move(out)).first->second;
}

const std::vector<std::vector<BBox>>& Pipeline::ground_truth(const DatasetEntry& entry) {
  std::lock_guard<std::mutex> lock(cache_mutex_);
  if (auto it = gt_.find(entry.rel_path); it != gt_.end()) return it->second;
  const fs::path path = gt_path(gt_dir(config_), entry);
  if (!fs::exists(path)) {
    throw DataError("missing GSP ground truth " + path.string() + " (run the gsp-gt command first)");
  }
  return gt_.emplace(entry.rel_path, read_gt_csv(path, config_.views)).first->second;
}

void Pipeline::preload(const std::vector<DatasetEntry>& entries) {
  for (const auto& e : entries) views(e);
}

Tensor Pipeline::shape_detection_loss(const ParamStore& det, const DatasetEntry& entry, std::mt19937_64& sampler) {
  const auto& imgs = views(entry);
  const auto& gt = ground_truth(entry);
  Tensor total;
  for (std::size_t v = 0; v < imgs.size(); ++v) {
    const Tensor l = detector_.view_loss(det, detector_.backbone(det, imgs[v]), gt[v], sampler);
    total = total.defined() ? add(total, l) : l;
  }
  return scale(total, 1.0 / static_cast<double>(imgs.size()));
}

double Pipeline::train_detector_epoch(TrainState& state) {
  const auto& train = dataset_.train;
  if (train.empty()) throw DataError("training split is empty");
  for (const auto& e : train) ground_truth(e);  // fail before any update
  const AdamSettings settings{config_.lr};
  double sum = 0.0;
  for (std::size_t i : shuffled(train.size(), state.rng)) {
    state.det.zero_grad();
    const Tensor loss = shape_detection_loss(state.det, train[i], state.rng);
    backward(loss);
    adam_step(state.det, state.det_adam, settings);
    sum += loss.item();
  }
  return sum / static_cast<double>(train.size());
}

double Pipeline::train_classifier_epoch(ParamStore& att, AdamState& adam, std::mt19937_64& rng,
                                        const GspCache& cache, const std::vector<DatasetEntry>& entries,
                                        AttentionMode mode) {
  if (entries.empty() || cache.size() != entries.size()) {
    throw ContractError("classifier epoch: part features do not match the shape list");
  }
  const AdamSettings settings{config_.lr};
  double sum = 0.0;
  for (std::size_t i : shuffled(entries.size(), rng)) {
    att.zero_grad();
    const ShapeForward fwd = attention_forward(att, cache[i], mode);
    const Tensor loss = classification_loss(fwd.probs, one_hot(entries[i].label, classes()));
    backward(loss);
    adam_step(att, adam, settings);
    sum += loss.item();
  }
  return sum / static_cast<double>(entries.size());
}

std::vector<std::vector<Proposal>> Pipeline::proposals(const ParamStore& det, const DatasetEntry& entry) {
  NoGradGuard guard;
  const auto& imgs = views(entry);
  std::vector<std::vector<Proposal>> out;
  for (std::size_t v = 0; v < imgs.size(); ++v) out.push_back(detector_.propose(det, detector_.backbone(det, imgs[v]), v));
  return out;
}

GspCache Pipeline::gsp_features(const ParamStore& det, const std::vector<DatasetEntry>& entries) {
  preload(entries);
  GspCache cache(entries.size());
  parallel_for(entries.size(), config_.threads, [&](std::size_t i) {
    NoGradGuard guard;
    const auto& imgs = views(entries[i]);
    for (std::size_t v = 0; v < imgs.size(); ++v) {
      const Tensor fm = detector_.backbone(det, imgs[v]);
      try {
        cache[i].push_back(detector_.part_features(fm, detector_.propose(det, fm, v), config_.k_parts));
      } catch (const DetectionError& e) {
        throw DetectionError("shape " + entries[i].shape_id + ", view " + std::to_string(v) + ": " + e.what());
      }
    }
  });
  return cache;
}

double Pipeline::eval_detection_loss(const ParamStore& det, const std::vector<DatasetEntry>& entries) {
  if (entries.empty()) throw DataError("cannot evaluate an empty split");
  preload(entries);
  for (const auto& e : entries) ground_truth(e);
  std::vector<double> losses(entries.size());
  const std::uint64_t base = derive_seed(config_.seed, kEvalSampler);
  parallel_for(entries.size(), config_.threads, [&](std::size_t i) {
    NoGradGuard guard;
    std::mt19937_64 sampler(splitmix64(base + i));
    losses[i] = shape_detection_loss(det, entries[i], sampler).item();
  });
  double sum = 0.0;
  for (double l : losses) sum += l;
  return sum / static_cast<double>(entries.size());
}

double Pipeline::eval_classification_loss(const ParamStore& att, const GspCache& cache,
                                          const std::vector<DatasetEntry>& entries, AttentionMode mode) {
  if (entries.empty() || cache.size() != entries.size()) {
    throw ContractError("classifier evaluation: part features do not match the shape list");
  }
  std::vector<double> losses(entries.size());
  parallel_for(entries.size(), config_.threads, [&](std::size_t i) {
    NoGradGuard guard;
    const ShapeForward fwd = attention_forward(att, cache[i], mode);
    losses[i] = classification_loss(fwd.probs, one_hot(entries[i].label, classes())).item();
  });
  double sum = 0.0;
  for (double l : losses) sum += l;
  return sum / static_cast<double>(entries.size());
}

void Pipeline::alternate_train(TrainState& state, const std::function<void(const TrainState&)>& on_round) {
  const std::size_t E = config_.epochs_per_phase;
  const AttentionMode mode = config_.mode();
  const auto& train = dataset_.train;
  for (std::size_t r = state.rounds_done + 1; r <= config_.rounds; ++r) {
    GspCache cache;
    for (std::size_t e = 1; e <= E; ++e) {
      const double det_loss = train_detector_epoch(state);
      cache = gsp_features(state.det, train);
      const double cls_eval = eval_classification_loss(state.att, cache, train, mode);
      state.metrics.push_back({r, "detector", e, det_loss});
      state.metrics.push_back({r, "classifier_eval", e, cls_eval});
      state.metrics.push_back({r, "total", e, det_loss + config_.psi * cls_eval});
    }
    const double det_eval = eval_detection_loss(state.det, train);
    for (std::size_t e = E + 1; e <= 2 * E; ++e) {
      const double cls_loss = train_classifier_epoch(state.att, state.att_adam, state.rng, cache, train, mode);
      state.metrics.push_back({r, "classifier", e, cls_loss});
      state.metrics.push_back({r, "detector_eval", e, det_eval});
      state.metrics.push_back({r, "total", e, det_eval + config_.psi * cls_loss});
    }
    state.rounds_done = r;
    snap_to_single(state);
    if (on_round) on_round(state);
  }
}

EvalReport Pipeline::evaluate(const ParamStore& att, const GspCache& cache, const std::vector<DatasetEntry>& entries,
                              AttentionMode mode) const {
  if (entries.empty()) throw DataError("cannot evaluate an empty split");
  if (cache.size() != entries.size()) throw ContractError("evaluate: part features do not match the shape list");
  std::vector<Prediction> preds(entries.size());
  parallel_for(entries.size(), config_.threads, [&](std::size_t i) {
    NoGradGuard guard;
    const ShapeForward fwd = attention_forward(att, cache[i], mode);
    Prediction& p = preds[i];
    p.shape_id = entries[i].shape_id;
    p.true_label = entries[i].label;
    p.probs = fwd.probs.to_vector();
    p.pred_label = argmax_lowest(p.probs);
  });
  return make_report(std::move(preds), classes());
}

EvalReport Pipeline::evaluate(const TrainState& state, const std::string& split) {
  const auto& entries = dataset_.split(split);
  if (entries.empty()) throw DataError("split '" + split + "' is empty");
  return evaluate(state.att, gsp_features(state.det, entries), entries, config_.mode());
}

double Pipeline::detector_recall(const ParamStore& det, const std::vector<DatasetEntry>& entries,
                                 double iou_threshold) {
  preload(entries);
  for (const auto& e : entries) ground_truth(e);
  std::vector<std::size_t> hits(entries.size(), 0), totals(entries.size(), 0);
  parallel_for(entries.size(), config_.threads, [&](std::size_t i) {
    const auto props = proposals(det, entries[i]);
    const auto& gt = ground_truth(entries[i]);
    for (std::size_t v = 0; v < props.size(); ++v) {
      const std::size_t top = std::min(config_.recall_top_n, props[v].size());
      for (const BBox& g : gt[v]) {
        ++totals[i];
        for (std::size_t k = 0; k < top; ++k) {
          if (iou(props[v][k].box, g) >= iou_threshold) {
            ++hits[i];
            break;
          }
        }
      }
    }
  });
  std::size_t hit = 0, total = 0;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    hit += hits[i];
    total += totals[i];
  }
  if (total == 0) throw DataError("no ground-truth parts to measure recall on");
  return static_cast<double>(hit) / static_cast<double>(total);
}

std::vector<std::pair<AttentionMode, EvalReport>> Pipeline::run_ablation(const ParamStore& det,
                                                                         const std::vector<AttentionMode>& modes) {
  const auto& train = dataset_.train;
  const auto& test = dataset_.test;
  const GspCache train_cache = gsp_features(det, train);
  const GspCache test_cache = gsp_features(det, test);
  std::vector<std::pair<AttentionMode, EvalReport>> out;
  for (AttentionMode mode : modes) {
    ParamStore att;
    init_attention(att);
    AdamState adam;
    std::mt19937_64 rng(derive_seed(config_.seed, kAblationRng));
    for (std::size_t e = 0; e < config_.rounds * config_.epochs_per_phase; ++e) {
      train_classifier_epoch(att, adam, rng, train_cache, train, mode);
    }
    out.emplace_back(mode, evaluate(att, test_cache, test, mode));
  }
  return out;
}

// --- checkpoints -----------------------------------------------------------

namespace {

std::string metrics_text(const std::vector<MetricRow>& rows) {
  std::string out = "round,phase,epoch,mean_loss\n";
  for (const auto& r : rows) {
    out += std::to_string(r.round) + "," + r.phase + "," + std::to_string(r.epoch) + "," + fmt_g(r.mean_loss) + "\n";
  }
  return out;
}

void put_store(Checkpoint& ckpt, const ParamStore& store) {
  for (const auto& [name, t] : store) ckpt.tensors[name] = {t.shape(), t.to_vector()};
}

void put_moments(Checkpoint& ckpt, const ParamStore& store, const AdamState& adam) {
  for (const auto& [name, t] : store) {
    if (auto it = adam.m.find(name); it != adam.m.end()) ckpt.tensors["adam.m/" + name] = {t.shape(), it->second};
    if (auto it = adam.v.find(name); it != adam.v.end()) ckpt.tensors["adam.v/" + name] = {t.shape(), it->second};
  }
}

const TensorRecord& record(const Checkpoint& ckpt, const std::string& name, const Shape& shape) {
  auto it = ckpt.tensors.find(name);
  if (it == ckpt.tensors.end()) throw DataError("checkpoint is missing tensor '" + name + "'");
  if (it->second.dims != shape) {
    throw DataError("checkpoint tensor '" + name + "' has shape " + shape_str(it->second.dims) + ", expected " +
                    shape_str(shape));
  }
  return it->second;
}

void get_store(const Checkpoint& ckpt, ParamStore& store) {
  for (auto& [name, t] : store) {
    const auto& rec = record(ckpt, name, t.shape());
    std::copy(rec.values.begin(), rec.values.end(), t.mutable_data().begin());
  }
}

void get_moments(const Checkpoint& ckpt, const ParamStore& store, AdamState& adam) {
  adam.m.clear();
  adam.v.clear();
  for (const auto& [name, t] : store) {
    if (ckpt.tensors.count("adam.m/" + name)) adam.m[name] = record(ckpt, "adam.m/" + name, t.shape()).values;
    if (ckpt.tensors.count("adam.v/" + name)) adam.v[name] = record(ckpt, "adam.v/" + name, t.shape()).values;
  }
}

std::map<std::string, std::string> parse_metadata(const std::string& text, std::string& metrics) {
  std::map<std::string, std::string> kv;
  const auto split = text.find("\n--metrics--\n");
  const std::string head = split == std::string::npos ? text : text.substr(0, split);
  metrics = split == std::string::npos ? "" : text.substr(split + 13);
  std::istringstream in(head);
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq != std::string::npos) kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

std::int64_t meta_int(const std::map<std::string, std::string>& kv, const std::string& key) {
  auto it = kv.find(key);
  if (it == kv.end()) throw DataError("checkpoint metadata lacks '" + key + "'");
  try {
    return std::stoll(it->second);
  } catch (const std::exception&) {
    throw DataError("checkpoint metadata '" + key + "' is not an integer");
  }
}

}  // namespace

Checkpoint to_checkpoint(const Config& config, const Dataset& dataset, const TrainState& state) {
  Checkpoint ckpt;
  ckpt.config_text = serialize_config(config);
  std::ostringstream rng;
  rng << state.rng;
  ckpt.rng_state = rng.str();
  std::string classes;
  for (std::size_t i = 0; i < dataset.classes.size(); ++i) classes += (i ? "," : "") + dataset.classes[i];
  ckpt.metadata = "rounds_done=" + std::to_string(state.rounds_done) + "\n" +
                  "det_adam_step=" + std::to_string(state.det_adam.step) + "\n" +
                  "att_adam_step=" + std::to_string(state.att_adam.step) + "\n" + "classes=" + classes +
                  "\n--metrics--\n" + metrics_text(state.metrics);
  put_store(ckpt, state.det);
  put_store(ckpt, state.att);
  put_moments(ckpt, state.det, state.det_adam);
  put_moments(ckpt, state.att, state.att_adam);
  return ckpt;
}

TrainState from_checkpoint(const Pipeline& pipeline, const Checkpoint& ckpt) {
  TrainState s = pipeline.init_state();
  std::string metrics;
  const auto kv = parse_metadata(ckpt.metadata, metrics);
  std::string classes;
  for (std::size_t i = 0; i < pipeline.dataset().classes.size(); ++i) {
    classes += (i ? "," : "") + pipeline.dataset().classes[i];
  }
  if (auto it = kv.find("classes"); it == kv.end() || it->second != classes) {
    throw DataError("checkpoint was trained on classes '" + (it == kv.end() ? "" : it->second) +
                    "' but the dataset has '" + classes + "'");
  }
  get_store(ckpt, s.det);
  get_store(ckpt, s.att);
  get_moments(ckpt, s.det, s.det_adam);
  get_moments(ckpt, s.att, s.att_adam);
  s.det_adam.step = meta_int(kv, "det_adam_step");
  s.att_adam.step = meta_int(kv, "att_adam_step");
  s.rounds_done = static_cast<std::size_t>(meta_int(kv, "rounds_done"));
  std::istringstream rng(ckpt.rng_state);
  rng >> s.rng;
  if (!rng) throw DataError("checkpoint RNG state is unreadable");
  s.metrics = parse_metrics_csv(metrics);
  return s;
}

Config checkpoint_config(const Checkpoint& ckpt) { return parse_config(ckpt.config_text, "<checkpoint config>"); }

// --- CSV -------------------------------------------------------------------

namespace {

void write_text(const std::string& text, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw IoError("cannot write " + path.string());
}

}  // namespace

void write_metrics_csv(const std::vector<MetricRow>& rows, const fs::path& path) {
  write_text(metrics_text(rows), path);
}

std::vector<MetricRow> parse_metrics_csv(const std::string& text) {
  std::vector<MetricRow> rows;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line_no == 1 || line.empty()) continue;
    std::vector<std::string> cols;
    std::stringstream ss(line);
    std::string c;
    while (std::getline(ss, c, ',')) cols.push_back(c);
    if (cols.size() != 4) throw ParseError("<metrics>", line_no, "expected 4 columns");
    try {
      rows.push_back({std::stoull(cols[0]), cols[1], std::stoull(cols[2]), std::stod(cols[3])});
    } catch (const std::exception&) {
      throw ParseError("<metrics>", line_no, "malformed row '" + line + "'");
    }
  }
  return rows;
}

void write_confusion_csv(const EvalReport& report, const std::vector<std::string>& classes, const fs::path& path) {
  std::string out;
  for (std::size_t i = 0; i < classes.size(); ++i) out += (i ? "," : "") + classes[i];
  out += "\n";
  for (const auto& row : report.confusion) {
    for (std::size_t j = 0; j < row.size(); ++j) out += (j ? "," : "") + std::to_string(row[j]);
    out += "\n";
  }
  write_text(out, path);
}

void write_predictions_csv(const EvalReport& report, const fs::path& path) {
  std::string out = "shape_id,true_label,pred_label";
  const std::size_t C = report.confusion.size();
  for (std::size_t c = 1; c <= C; ++c) out += ",p_" + std::to_string(c);
  out += "\n";
  for (const auto& p : report.predictions) {
    out += p.shape_id + "," + std::to_string(p.true_label) + "," + std::to_string(p.pred_label);
    for (double v : p.probs) out += "," + fmt_g(v);
    out += "\n";
  }
  write_text(out, path);
}

void write_ablation_csv(const std::vector<std::pair<AttentionMode, EvalReport>>& rows, const fs::path& path) {
  std::string out = "mode,class_acc,instance_acc\n";
  for (const auto& [mode, r] : rows) {
    out += attention_mode_name(mode) + "," + fmt_g(r.class_accuracy) + "," + fmt_g(r.instance_accuracy) + "\n";
  }
  write_text(out, path);
}

}  // namespace fg3d
