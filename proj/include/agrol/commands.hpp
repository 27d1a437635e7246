#pragma once

// Command implementations behind the `agrol` executable. Each command takes
// an options struct, writes its artifacts under a run directory, appends one
// record to <run dir>/manifest.jsonl and returns a process exit code.

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "agrol/checkpoint.hpp"
#include "agrol/inference.hpp"
#include "agrol/synthdata.hpp"
#include "agrol/training.hpp"

#ifndef AGROL_VERSION
#define AGROL_VERSION "0.0.0"
#endif
#ifndef AGROL_GIT_HASH
#define AGROL_GIT_HASH "unknown"
#endif

namespace agrol::cli {

namespace fs = std::filesystem;
using nlohmann::json;

inline constexpr int kExitOk = 0;
inline constexpr int kExitOther = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitMissingData = 3;
inline constexpr int kExitShape = 4;
inline constexpr int kExitAlignment = 5;

inline constexpr const char* kVersion = AGROL_VERSION;
inline constexpr const char* kGitHash = AGROL_GIT_HASH;

class CommandError : public std::runtime_error {
 public:
  CommandError(int code, const std::string& what) : std::runtime_error(what), code_(code) {}
  [[nodiscard]] int code() const { return code_; }

 private:
  int code_;
};

// Where commands print; tests pass string streams.
struct Console {
  std::ostream& out = std::cout;
  std::ostream& err = std::cerr;
};

// ---------------------------------------------------------------------------
// Run manifests

struct RunManifest {
  std::string command;
  json config = json::object();
  std::uint64_t seed = 0;
  std::vector<std::string> artifacts;
  double wall_seconds = 0.0;
  std::string version = kVersion;
  std::string git_hash = kGitHash;

  [[nodiscard]] json to_json() const {
    return json{{"command", command},   {"config", config},
                {"seed", seed},         {"artifacts", artifacts},
                {"wall_seconds", wall_seconds}, {"version", version},
                {"git_hash", git_hash}};
  }
};

inline constexpr const char* kManifestFile = "manifest.jsonl";

// Appends one line; earlier records are never rewritten.
inline fs::path append_manifest(const fs::path& dir, const RunManifest& m) {
  fs::create_directories(dir);
  const fs::path path = dir / kManifestFile;
  std::ofstream out(path, std::ios::app);
  out << m.to_json().dump() << '\n';
  if (!out) throw std::runtime_error("failed writing " + path.string());
  return path;
}

inline std::vector<json> read_manifest_records(const fs::path& dir) {
  std::ifstream in(dir / kManifestFile);
  std::vector<json> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) out.push_back(json::parse(line));
  }
  return out;
}

// key = value text as a flat JSON object of strings.
inline json key_values_json(const std::string& text) {
  std::istringstream in(text);
  json j = json::object();
  for (const auto& [k, v] : detail::parse_key_values(in)) j[k] = v;
  return j;
}

inline json train_config_json(const TrainConfig& c) {
  std::ostringstream s;
  write_train_config(s, c);
  return key_values_json(s.str());
}

// ---------------------------------------------------------------------------
// Tables

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  [[nodiscard]] std::string render() const {
    std::vector<std::size_t> width(header.size(), 0);
    auto grow = [&](const std::vector<std::string>& r) {
      for (std::size_t c = 0; c < r.size() && c < width.size(); ++c) {
        width[c] = std::max(width[c], r[c].size());
      }
    };
    grow(header);
    for (const auto& r : rows) grow(r);
    std::ostringstream out;
    auto line = [&](const std::vector<std::string>& r) {
      std::string s;
      for (std::size_t c = 0; c < r.size(); ++c) {
        std::string cell = r[c];
        if (c + 1 < r.size()) cell.resize(width[c], ' ');
        s += (c == 0 ? "" : "  ") + cell;
      }
      out << s << '\n';
    };
    line(header);
    for (const auto& r : rows) line(r);
    return out.str();
  }
};

inline std::string fixed(double v, int digits = 4) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

inline std::vector<std::string> metric_header(const std::string& first) {
  std::vector<std::string> h{first};
  for (const char* name : MetricReport::kFieldNames) h.emplace_back(name);
  return h;
}

inline std::vector<std::string> metric_cells(const std::string& first, const MetricReport& r) {
  std::vector<std::string> row{first};
  for (const double v : r.values()) row.push_back(fixed(v));
  return row;
}

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  out << text;
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

inline void write_records(const fs::path& path, const std::vector<json>& records) {
  std::ofstream out(path, std::ios::trunc);
  for (const auto& r : records) out << r.dump() << '\n';
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

// ---------------------------------------------------------------------------
// Dataset generation config

struct DataConfig {
  std::size_t count = 100;
  std::uint64_t seed = 0;
  GaitRanges ranges;

  void validate() const {
    if (count < 2) throw ConfigError("count must be at least 2");
    if (ranges.lo.frames == 0 || ranges.lo.frames > ranges.hi.frames) {
      throw ConfigError("frames range must satisfy 1 <= frames_min <= frames_max");
    }
    ranges.lo.validate();
    ranges.hi.validate();
    const GaitParams& a = ranges.lo;
    const GaitParams& b = ranges.hi;
    for (const auto& [lo, hi] : {std::pair{a.frequency, b.frequency},
                                 std::pair{a.stride_amplitude, b.stride_amplitude},
                                 std::pair{a.arm_swing, b.arm_swing},
                                 std::pair{a.speed, b.speed},
                                 std::pair{a.turn_rate, b.turn_rate},
                                 std::pair{a.sway, b.sway},
                                 std::pair{a.phase, b.phase},
                                 std::pair{a.noise_deg, b.noise_deg}}) {
      if (lo > hi) throw ConfigError("every _min must not exceed its _max");
    }
  }
};

namespace detail {

inline std::vector<std::pair<std::string, double GaitParams::*>> gait_fields() {
  return {{"frequency", &GaitParams::frequency}, {"stride_amplitude", &GaitParams::stride_amplitude},
          {"arm_swing", &GaitParams::arm_swing}, {"speed", &GaitParams::speed},
          {"turn_rate", &GaitParams::turn_rate}, {"sway", &GaitParams::sway},
          {"phase", &GaitParams::phase},         {"noise_deg", &GaitParams::noise_deg}};
}

} // namespace detail

// Keys: count, seed, frames / frames_min / frames_max, and for each gait
// parameter <name> (both ends), <name>_min and <name>_max.
inline DataConfig parse_data_config(std::istream& in) {
  using agrol::detail::parse_number;
  DataConfig c;
  const auto fields = detail::gait_fields();
  for (const auto& [k, v] : agrol::detail::parse_key_values(in)) {
    if (k == "count") { c.count = parse_number<std::size_t>(k, v); continue; }
    if (k == "seed") { c.seed = parse_number<std::uint64_t>(k, v); continue; }
    if (k == "frames") {
      c.ranges.lo.frames = c.ranges.hi.frames = parse_number<std::size_t>(k, v);
      continue;
    }
    if (k == "frames_min") { c.ranges.lo.frames = parse_number<std::size_t>(k, v); continue; }
    if (k == "frames_max") { c.ranges.hi.frames = parse_number<std::size_t>(k, v); continue; }
    bool known = false;
    for (const auto& [name, member] : fields) {
      if (k == name) {
        c.ranges.lo.*member = c.ranges.hi.*member = parse_number<double>(k, v);
      } else if (k == name + "_min") {
        c.ranges.lo.*member = parse_number<double>(k, v);
      } else if (k == name + "_max") {
        c.ranges.hi.*member = parse_number<double>(k, v);
      } else {
        continue;
      }
      known = true;
      break;
    }
    if (!known) throw ConfigError("unknown config key '" + k + "'");
  }
  c.validate();
  return c;
}

inline void write_data_config(std::ostream& out, const DataConfig& c) {
  const auto old = out.precision(17);
  out << "count = " << c.count << '\n'
      << "seed = " << c.seed << '\n'
      << "frames_min = " << c.ranges.lo.frames << '\n'
      << "frames_max = " << c.ranges.hi.frames << '\n';
  for (const auto& [name, member] : detail::gait_fields()) {
    out << name << "_min = " << c.ranges.lo.*member << '\n'
        << name << "_max = " << c.ranges.hi.*member << '\n';
  }
  out.precision(old);
}

// ---------------------------------------------------------------------------
// Shared helpers

namespace detail {

inline constexpr const char* kSkeletonFile = "skeleton.txt";

class Stopwatch {
 public:
  [[nodiscard]] double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

inline void require_file(const std::string& path, int code, const std::string& what) {
  if (path.empty() || !fs::is_regular_file(path)) {
    throw CommandError(code, what + " not found: " + (path.empty() ? "<none>" : path));
  }
}

struct DataDir {
  SkeletonTree tree;
  Dataset data;
};

inline DataDir load_data_dir(const std::string& dir) {
  if (dir.empty() || !fs::is_regular_file(fs::path(dir) / "manifest.txt")) {
    throw CommandError(kExitMissingData, "no dataset at '" + dir + "' (manifest.txt missing)");
  }
  DataDir d;
  const fs::path skel = fs::path(dir) / kSkeletonFile;
  d.tree = fs::is_regular_file(skel) ? load_skeleton(skel.string()) : default_test_skeleton();
  d.data = load_dataset(dir, &d.tree);
  return d;
}

inline std::vector<std::size_t> split_indices(const Dataset& d, const std::string& split) {
  if (split == "test") return d.test;
  if (split == "train") return d.train;
  if (split == "all") {
    std::vector<std::size_t> all(d.clips.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    return all;
  }
  throw CommandError(kExitUsage, "unknown split '" + split + "' (expected test|train|all)");
}

inline TrainConfig base_train_config(const std::string& path) {
  if (path.empty()) return toy_train_config();
  require_file(path, kExitUsage, "config file");
  return load_train_config(path);
}

inline Checkpoint load_checkpoint_or_fail(const std::string& path) {
  require_file(path, kExitMissingData, "checkpoint");
  return load_checkpoint(path);
}

inline Tensor head_from_sparse(const Tensor& sparse) {
  Tensor head(sparse.rows(), 3);
  for (std::size_t f = 0; f < sparse.rows(); ++f) {
    for (std::size_t c = 0; c < 3; ++c) head(f, c) = sparse(f, sparse_field::kPosition + c);
  }
  return head;
}

// Places a predicted motion so that its head follows `head`.
inline MseqFile prediction_file(const SkeletonTree& tree, const Tensor& motion,
                                const Tensor& head, double fps) {
  const auto local = decode_motion<float, double>(motion);
  const auto head_traj = to_vec3(head);
  const auto root = recover_root_translation<double>(tree, local, head_traj);
  MotionClip clip;
  clip.fps = fps;
  clip.motion = motion;
  clip.root = from_vec3(root);
  clip.head = head;
  return clip_to_mseq(clip);
}

// Trains one model and writes model.agrl, train_log.txt, config.txt and
// interval checkpoints into `dir`. Returns the written artifact paths.
inline std::vector<std::string> train_into(const fs::path& dir, const TrainingSet& set,
                                           const TrainConfig& cfg, ModelKind kind,
                                           const Checkpoint* resume, std::ostream& log,
                                           Checkpoint& result) {
  fs::create_directories(dir);
  std::vector<std::string> artifacts;
  {
    std::ostringstream s;
    write_train_config(s, cfg);
    write_text(dir / "config.txt", s.str());
    artifacts.push_back((dir / "config.txt").string());
  }
  const fs::path log_path = dir / "train_log.txt";
  std::ofstream log_file(log_path, resume != nullptr ? std::ios::app : std::ios::trunc);
  TrainCallbacks cb;
  cb.on_log = [&](const TrainLogRecord& r) {
    write_log_record(log_file, r);
    write_log_record(log, r);
  };
  cb.on_checkpoint = [&](const Checkpoint& ck) {
    if (ck.iteration == cfg.total_iters) return;
    const fs::path p = dir / ("ckpt_" + std::to_string(ck.iteration) + ".agrl");
    save_checkpoint(p.string(), ck);
    artifacts.push_back(p.string());
  };
  TrainResult r = kind == ModelKind::Diffusion ? train_diffusion(set, cfg, resume, cb)
                                               : train_mlp(set, cfg, resume, cb);
  log_file.close();
  artifacts.push_back(log_path.string());
  const fs::path model = dir / "model.agrl";
  save_checkpoint(model.string(), r.checkpoint);
  artifacts.push_back(model.string());
  result = std::move(r.checkpoint);
  return artifacts;
}

template <typename Fn>
int guarded(Console& io, Fn&& fn) {
  try {
    return fn();
  } catch (const CommandError& e) {
    io.err << "error: " << e.what() << '\n';
    return e.code();
  } catch (const ConfigError& e) {
    io.err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const ScheduleError& e) {
    io.err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const DimensionError& e) {
    io.err << "error: " << e.what() << '\n';
    return kExitShape;
  } catch (const LengthError& e) {
    io.err << "error: " << e.what() << '\n';
    return kExitShape;
  } catch (const std::exception& e) {
    io.err << "error: " << e.what() << '\n';
    return kExitOther;
  }
}

} // namespace detail

// ---------------------------------------------------------------------------
// gen-data

struct GenDataOptions {
  std::string config; // empty: defaults
  std::string out;
  std::optional<std::uint64_t> seed;
};

inline int cmd_gen_data(const GenDataOptions& o, Console io = {}) {
  return detail::guarded(io, [&] {
    detail::Stopwatch clock;
    DataConfig cfg;
    if (!o.config.empty()) {
      detail::require_file(o.config, kExitUsage, "config file");
      std::ifstream in(o.config);
      cfg = parse_data_config(in);
    }
    if (o.seed) cfg.seed = *o.seed;
    if (o.out.empty()) throw CommandError(kExitUsage, "--out is required");
    const fs::path dir(o.out);
    const SkeletonTree tree = default_test_skeleton();
    const Dataset d = make_dataset(tree, cfg.count, cfg.ranges, cfg.seed);
    save_dataset(d, dir);
    {
      std::ostringstream s;
      write_skeleton(s, tree);
      write_text(dir / detail::kSkeletonFile, s.str());
    }
    std::ostringstream cfg_text;
    write_data_config(cfg_text, cfg);
    write_text(dir / "data_config.txt", cfg_text.str());

    RunManifest m;
    m.command = "gen-data";
    m.config = key_values_json(cfg_text.str());
    m.seed = cfg.seed;
    m.artifacts = {(dir / "manifest.txt").string(), (dir / detail::kSkeletonFile).string(),
                   (dir / "data_config.txt").string()};
    for (const auto& c : d.clips) m.artifacts.push_back((dir / (c.name + ".mseq")).string());
    m.wall_seconds = clock.seconds();
    append_manifest(dir, m);
    io.out << "wrote " << d.clips.size() << " sequences (" << d.train.size() << " train, "
           << d.test.size() << " test) to " << dir.string() << '\n';
    return kExitOk;
  });
}

// ---------------------------------------------------------------------------
// train

struct TrainOptions {
  std::string model = "diffusion"; // mlp | diffusion
  std::string config;              // empty: toy preset
  std::string data;
  std::string out;
  std::string timestep_mode; // empty: from config
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> iters;
  std::string resume;
};

inline int cmd_train(const TrainOptions& o, Console io = {}) {
  return detail::guarded(io, [&] {
    detail::Stopwatch clock;
    ModelKind kind;
    if (o.model == "mlp") {
      kind = ModelKind::Predictive;
    } else if (o.model == "diffusion") {
      kind = ModelKind::Diffusion;
    } else {
      throw CommandError(kExitUsage, "unknown model '" + o.model + "' (expected mlp|diffusion)");
    }
    TrainConfig cfg = detail::base_train_config(o.config);
    if (!o.timestep_mode.empty()) cfg.timestep_mode = parse_timestep_mode(o.timestep_mode);
    if (o.seed) cfg.seed = *o.seed;
    if (o.iters) cfg.total_iters = *o.iters;
    cfg.validate();
    if (o.out.empty()) throw CommandError(kExitUsage, "--out is required");

    const auto dd = detail::load_data_dir(o.data);
    TrainingSet set;
    try {
      set = make_training_set(dd.tree, dd.data, cfg.seq_len, dd.data.train);
    } catch (const LengthError& e) {
      throw CommandError(kExitMissingData, e.what());
    }
    std::optional<Checkpoint> resume;
    if (!o.resume.empty()) resume = detail::load_checkpoint_or_fail(o.resume);

    Checkpoint result;
    const auto artifacts = detail::train_into(o.out, set, cfg, kind,
                                              resume ? &*resume : nullptr, io.out, result);
    RunManifest m;
    m.command = "train";
    m.config = train_config_json(cfg);
    m.config["model"] = o.model;
    m.config["data"] = o.data;
    if (!o.resume.empty()) m.config["resume"] = o.resume;
    m.seed = cfg.seed;
    m.artifacts = artifacts;
    m.wall_seconds = clock.seconds();
    append_manifest(o.out, m);
    io.out << "trained " << o.model << " to iteration " << result.iteration << ", wrote "
           << (fs::path(o.out) / "model.agrl").string() << '\n';
    return kExitOk;
  });
}

// ---------------------------------------------------------------------------
// sample

struct SampleOptions {
  std::string checkpoint;
  std::string input; // 54-channel sparse input, or 132-channel motion with a ROOT track
  std::string out;
  std::size_t ddim_steps = kDefaultDdimSteps;
  std::uint64_t seed = 0;
  std::vector<std::size_t> sweep; // when set, one output per K
  std::string skeleton;           // for 132-channel inputs; default skeleton otherwise
};

inline int cmd_sample(const SampleOptions& o, Console io = {}) {
  return detail::guarded(io, [&] {
    detail::Stopwatch clock;
    if (o.out.empty()) throw CommandError(kExitUsage, "--out is required");
    const Predictor model(detail::load_checkpoint_or_fail(o.checkpoint));
    detail::require_file(o.input, kExitMissingData, "input file");
    const MseqFile in = load_mseq(o.input);
    const SkeletonTree tree = o.skeleton.empty() ? default_test_skeleton() : load_skeleton(o.skeleton);
    const std::string stem = fs::path(o.input).stem().string();

    Tensor sparse;
    std::optional<MotionClip> gt;
    if (in.motion.cols() == model.config().in_dim) {
      sparse = in.motion;
    } else if (in.motion.cols() == kMotionWidth) {
      gt = mseq_to_clip(in, stem, &tree);
      sparse = clip_sparse_input(tree, *gt);
    } else {
      throw CommandError(kExitShape, "input has " + std::to_string(in.motion.cols()) +
                                         " channels; the checkpoint expects " +
                                         std::to_string(model.config().in_dim) +
                                         " (sparse input) or 132 (motion with ROOT track)");
    }
    if (sparse.rows() < model.config().seq_len) {
      throw CommandError(kExitShape, "input has " + std::to_string(sparse.rows()) +
                                         " frames, shorter than the model window of " +
                                         std::to_string(model.config().seq_len));
    }
    const Tensor head = gt ? gt->head : detail::head_from_sparse(sparse);
    const double fps = in.fps > 0 ? in.fps : kDefaultFps;

    const fs::path dir(o.out);
    fs::create_directories(dir);
    const bool sweeping = !o.sweep.empty();
    const std::vector<std::size_t> ks = sweeping ? o.sweep : std::vector{o.ddim_steps};
    const std::size_t steps_train = model.checkpoint().diffusion_steps;

    RunManifest m;
    m.command = "sample";
    m.config = {{"checkpoint", o.checkpoint}, {"input", o.input}, {"ddim_steps", o.ddim_steps}};
    if (sweeping) m.config["sweep"] = o.sweep;
    m.seed = o.seed;

    Table table{{"K", "status", "ms", "file"}, {}};
    if (gt) {
      table.header = metric_header("K");
      table.header.insert(table.header.begin() + 1, {"status", "ms"});
      table.header.push_back("file");
    }
    std::vector<json> records;
    for (const std::size_t k : ks) {
      json rec{{"K", k}};
      if (model.is_diffusion() && (k == 0 || k > steps_train)) {
        if (!sweeping) {
          throw CommandError(kExitUsage, "--ddim-steps must be in [1, " +
                                             std::to_string(steps_train) + "]");
        }
        rec["status"] = "skipped";
        std::vector<std::string> row{std::to_string(k), "skipped: K > T"};
        row.resize(table.header.size(), "-");
        table.rows.push_back(row);
        records.push_back(rec);
        continue;
      }
      detail::Stopwatch t;
      const Tensor pred = model.predict_sequence(sparse, k, o.seed);
      const double ms = 1000.0 * t.seconds();
      const fs::path file =
          dir / (sweeping ? stem + "_k" + std::to_string(k) + ".mseq" : stem + ".mseq");
      save_mseq(file.string(), detail::prediction_file(tree, pred, head, fps));
      m.artifacts.push_back(file.string());
      rec["status"] = "ok";
      rec["ms"] = ms;
      rec["file"] = file.string();
      std::vector<std::string> row{std::to_string(k), "ok", fixed(ms, 1)};
      if (gt) {
        const MetricReport r = evaluate_clip(tree, *gt, pred);
        rec["metrics"] = r.to_json();
        for (const double v : r.values()) row.push_back(fixed(v));
      }
      row.push_back(file.string());
      table.rows.push_back(row);
      records.push_back(rec);
    }
    const std::string text = table.render();
    write_text(dir / "sample.txt", text);
    write_records(dir / "sample.jsonl", records);
    m.artifacts.push_back((dir / "sample.txt").string());
    m.artifacts.push_back((dir / "sample.jsonl").string());
    m.wall_seconds = clock.seconds();
    append_manifest(dir, m);
    io.out << text;
    return kExitOk;
  });
}

// ---------------------------------------------------------------------------
// evaluate

struct EvaluateOptions {
  std::string gt;         // dataset directory
  std::string pred;       // directory of <name>.mseq predictions
  std::string checkpoint; // or: predict with this model
  std::string split = "test";
  double mask_fraction = 0.0;
  std::size_t trials = 5;
  std::size_t ddim_steps = kDefaultDdimSteps;
  std::uint64_t seed = 0;
  std::string out;
};

struct EvaluationResult {
  std::vector<std::pair<std::string, MetricReport>> per_sequence;
  std::vector<MetricReport> per_trial;
  MetricReport aggregate;
};

namespace detail {

inline EvaluationResult evaluate_pred_dir(const DataDir& dd, const std::vector<std::size_t>& idx,
                                          const fs::path& pred_dir) {
  std::vector<std::string> problems;
  std::vector<MotionClip> preds;
  for (const auto i : idx) {
    const MotionClip& c = dd.data.clips[i];
    const fs::path p = pred_dir / (c.name + ".mseq");
    if (!fs::is_regular_file(p)) {
      problems.push_back(c.name + ": missing prediction " + p.string());
      continue;
    }
    const MseqFile f = load_mseq(p.string());
    if (f.motion.cols() != kMotionWidth) {
      throw CommandError(kExitShape, p.string() + " has " + std::to_string(f.motion.cols()) +
                                         " channels, expected 132");
    }
    if (f.motion.rows() != c.frames()) {
      problems.push_back(c.name + ": length mismatch (gt " + std::to_string(c.frames()) +
                         " frames, prediction " + std::to_string(f.motion.rows()) + ")");
      continue;
    }
    MotionClip pc;
    pc.name = c.name;
    pc.motion = f.motion;
    preds.push_back(std::move(pc));
  }
  if (!problems.empty()) {
    std::string msg = std::to_string(problems.size()) + " sequence(s) not aligned:";
    for (const auto& p : problems) msg += "\n  " + p;
    throw CommandError(kExitAlignment, msg);
  }
  EvaluationResult r;
  std::vector<MetricReport> reports;
  for (std::size_t k = 0; k < idx.size(); ++k) {
    const MotionClip& c = dd.data.clips[idx[k]];
    reports.push_back(evaluate_clip(dd.tree, c, preds[k].motion));
    r.per_sequence.emplace_back(c.name, reports.back());
  }
  r.aggregate = average_reports(reports);
  r.per_trial.push_back(r.aggregate);
  return r;
}

// Trial k masks with Rng seeds derived from mix_seed(seed, k) and samples
// with its own per-sequence seeds; per-sequence rows average the trials.
inline EvaluationResult evaluate_checkpoint(const DataDir& dd, const std::vector<std::size_t>& idx,
                                            const Predictor& model, double mask_fraction,
                                            std::size_t trials, std::size_t ddim_steps,
                                            std::uint64_t seed) {
  EvaluationResult r;
  std::vector<std::vector<MetricReport>> by_seq(idx.size());
  for (std::size_t trial = 0; trial < trials; ++trial) {
    const std::uint64_t trial_seed = mix_seed(seed, trial);
    std::vector<MetricReport> reports;
    for (std::size_t k = 0; k < idx.size(); ++k) {
      const MotionClip& c = dd.data.clips[idx[k]];
      Tensor sparse = clip_sparse_input(dd.tree, c);
      if (mask_fraction > 0.0) {
        sparse = mask_tracking_loss(sparse, mask_fraction, mix_seed(trial_seed ^ 0x6d61736bULL, k));
      }
      const Tensor pred = model.predict_sequence(sparse, ddim_steps, mix_seed(trial_seed, k));
      reports.push_back(evaluate_clip(dd.tree, c, pred));
      by_seq[k].push_back(reports.back());
    }
    r.per_trial.push_back(average_reports(reports));
  }
  std::vector<MetricReport> seq_means;
  for (std::size_t k = 0; k < idx.size(); ++k) {
    seq_means.push_back(average_reports(by_seq[k]));
    r.per_sequence.emplace_back(dd.data.clips[idx[k]].name, seq_means.back());
  }
  r.aggregate = average_reports(seq_means);
  return r;
}

} // namespace detail

inline int cmd_evaluate(const EvaluateOptions& o, Console io = {}) {
  return detail::guarded(io, [&] {
    detail::Stopwatch clock;
    if (o.pred.empty() == o.checkpoint.empty()) {
      throw CommandError(kExitUsage, "give exactly one of --pred or --checkpoint");
    }
    if (!(o.mask_fraction >= 0.0 && o.mask_fraction < 1.0)) {
      throw CommandError(kExitUsage, "--mask-fraction must be in [0, 1)");
    }
    if (o.trials == 0) throw CommandError(kExitUsage, "--trials must be positive");
    if (!o.pred.empty() && o.mask_fraction > 0.0) {
      throw CommandError(kExitUsage, "--mask-fraction needs --checkpoint");
    }
    if (o.out.empty()) throw CommandError(kExitUsage, "--out is required");
    const auto dd = detail::load_data_dir(o.gt);
    const auto idx = detail::split_indices(dd.data, o.split);
    if (idx.empty()) throw CommandError(kExitMissingData, "split '" + o.split + "' is empty");

    EvaluationResult res;
    if (!o.pred.empty()) {
      if (!fs::is_directory(o.pred)) {
        throw CommandError(kExitMissingData, "prediction directory not found: " + o.pred);
      }
      res = detail::evaluate_pred_dir(dd, idx, o.pred);
    } else {
      const Predictor model(detail::load_checkpoint_or_fail(o.checkpoint));
      const std::size_t trials = o.mask_fraction > 0.0 ? o.trials : 1;
      res = detail::evaluate_checkpoint(dd, idx, model, o.mask_fraction, trials, o.ddim_steps,
                                        o.seed);
    }

    Table table{metric_header("sequence"), {}};
    std::vector<json> records;
    for (const auto& [name, r] : res.per_sequence) {
      table.rows.push_back(metric_cells(name, r));
      json rec = r.to_json();
      rec["sequence"] = name;
      records.push_back(rec);
    }
    for (std::size_t t = 0; t < res.per_trial.size() && res.per_trial.size() > 1; ++t) {
      json rec = res.per_trial[t].to_json();
      rec["trial"] = t;
      records.push_back(rec);
    }
    table.rows.push_back(metric_cells("mean", res.aggregate));
    json agg = res.aggregate.to_json();
    agg["sequence"] = "mean";
    agg["trials"] = res.per_trial.size();
    agg["mask_fraction"] = o.mask_fraction;
    records.push_back(agg);

    const fs::path dir(o.out);
    fs::create_directories(dir);
    const std::string text = table.render();
    write_text(dir / "metrics.txt", text);
    write_records(dir / "metrics.jsonl", records);

    RunManifest m;
    m.command = "evaluate";
    m.config = {{"gt", o.gt},
                {"pred", o.pred},
                {"checkpoint", o.checkpoint},
                {"split", o.split},
                {"mask_fraction", o.mask_fraction},
                {"trials", res.per_trial.size()},
                {"ddim_steps", o.ddim_steps}};
    m.seed = o.seed;
    m.artifacts = {(dir / "metrics.txt").string(), (dir / "metrics.jsonl").string()};
    m.wall_seconds = clock.seconds();
    append_manifest(dir, m);
    io.out << text;
    return kExitOk;
  });
}

// ---------------------------------------------------------------------------
// bench

struct BenchOptions {
  std::string checkpoint; // empty: paper-size model with random weights
  std::size_t ddim_steps = kDefaultDdimSteps;
  std::size_t repeats = 10;
  std::size_t warmup = 3;
  std::uint64_t seed = 0;
  std::string out;
};

struct BenchReport {
  std::size_t frames = 0;
  std::size_t ddim_steps = 0;
  std::vector<double> generation_ms;
  std::vector<double> step_ms; // mean model-forward time per sampling step
  double median_ms = 0.0;
  double p95_ms = 0.0;
  double mlp_forward_median_ms = 0.0;
  double mlp_forward_p95_ms = 0.0;

  [[nodiscard]] json to_json() const {
    return json{{"frames", frames},
                {"ddim_steps", ddim_steps},
                {"generation_ms", generation_ms},
                {"step_ms", step_ms},
                {"median_ms", median_ms},
                {"p95_ms", p95_ms},
                {"mlp_forward_median_ms", mlp_forward_median_ms},
                {"mlp_forward_p95_ms", mlp_forward_p95_ms}};
  }
};

// Nearest-rank percentile.
inline double percentile(std::vector<double> v, double q) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(v.size())));
  return v[std::clamp<std::size_t>(rank, 1, v.size()) - 1];
}

inline double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Times one-window generation (recentering plus sampling) for `model`.
inline BenchReport run_bench(const Checkpoint& ck, std::size_t ddim_steps, std::size_t repeats,
                             std::size_t warmup, std::uint64_t seed) {
  const MlpConfig& cfg = ck.model.config;
  if (cfg.in_dim != kSparseWidth) {
    throw DimensionError("bench needs a model with 54 input channels");
  }
  if (repeats == 0) throw ConfigError("repeats must be positive");
  const bool diffusion = cfg.kind == ModelKind::Diffusion;
  const NoiseSchedule sched = diffusion ? cosine_schedule(ck.diffusion_steps) : NoiseSchedule{};
  const Parameterization param =
      ck.predict_noise ? Parameterization::Noise : Parameterization::CleanMotion;
  const std::size_t steps = diffusion ? ddim_steps : 1;
  if (diffusion) (void)ddim_timestep_subset(sched.steps(), ddim_steps);

  GaitParams g;
  g.frames = cfg.seq_len;
  const SkeletonTree tree = default_test_skeleton();
  const Tensor sparse = clip_sparse_input(tree, generate_gait(tree, g, seed));

  BenchReport rep;
  rep.frames = cfg.seq_len;
  rep.ddim_steps = steps;
  std::vector<double> step_total(steps, 0.0);
  for (std::size_t i = 0; i < warmup + repeats; ++i) {
    const bool timed = i >= warmup;
    std::size_t call = 0;
    std::vector<double> step_here(steps, 0.0);
    detail::Stopwatch total;
    const Tensor p = recenter_sparse_input(sparse);
    if (diffusion) {
      Rng rng(mix_seed(seed, i));
      auto denoise = [&](const Tensor& x, std::size_t t) {
        detail::Stopwatch s;
        Tensor out = diffusion_forward(ck.model, x, p, t);
        step_here[call++] = 1000.0 * s.seconds();
        return out;
      };
      (void)ddim_sample<float>(denoise, cfg.seq_len, cfg.out_dim, sched, ddim_steps, rng, param);
    } else {
      detail::Stopwatch s;
      (void)mlp_forward(ck.model, p);
      step_here[0] = 1000.0 * s.seconds();
    }
    const double ms = 1000.0 * total.seconds();
    if (timed) {
      rep.generation_ms.push_back(ms);
      for (std::size_t k = 0; k < steps; ++k) step_total[k] += step_here[k];
    }
  }
  for (const double s : step_total) rep.step_ms.push_back(s / static_cast<double>(repeats));
  rep.median_ms = median(rep.generation_ms);
  rep.p95_ms = percentile(rep.generation_ms, 0.95);

  MlpConfig mc = cfg;
  mc.kind = ModelKind::Predictive;
  mc.timestep_mode = TimestepMode::None;
  ModelParams<float> mlp = make_params<float>(mc);
  init_params(mlp, mix_seed(seed, 0xbe7c));
  const Tensor p = recenter_sparse_input(sparse);
  std::vector<double> fwd;
  for (std::size_t i = 0; i < warmup + repeats; ++i) {
    detail::Stopwatch s;
    (void)mlp_forward(mlp, p);
    if (i >= warmup) fwd.push_back(1000.0 * s.seconds());
  }
  rep.mlp_forward_median_ms = median(fwd);
  rep.mlp_forward_p95_ms = percentile(fwd, 0.95);
  return rep;
}

inline int cmd_bench(const BenchOptions& o, Console io = {}) {
  return detail::guarded(io, [&] {
    detail::Stopwatch clock;
    Checkpoint ck;
    if (!o.checkpoint.empty()) {
      ck = detail::load_checkpoint_or_fail(o.checkpoint);
    } else {
      const TrainConfig paper = paper_train_config();
      ck.model = make_params<float>(paper.model_config(ModelKind::Diffusion));
      init_params(ck.model, mix_seed(o.seed, 0x1a1), OutputInit::IdentityMotion);
      ck.diffusion_steps = paper.diffusion_steps;
    }
    const BenchReport rep = run_bench(ck, o.ddim_steps, o.repeats, o.warmup, o.seed);

    std::ostringstream text;
    text << "model: " << to_string(ck.model.config.kind) << ", " << ck.model.config.num_blocks
         << " blocks, latent " << ck.model.config.latent_dim << ", "
         << (o.checkpoint.empty() ? "random weights" : o.checkpoint) << '\n'
         << "generation of " << rep.frames << " frames, " << rep.ddim_steps << " step(s), "
         << o.repeats << " repeats after " << o.warmup << " warmups\n"
         << "  median_ms = " << fixed(rep.median_ms, 3) << '\n'
         << "  p95_ms = " << fixed(rep.p95_ms, 3) << '\n'
         << "  p95/median = " << fixed(rep.median_ms > 0 ? rep.p95_ms / rep.median_ms : 0.0, 3)
         << '\n';
    Table steps{{"step", "forward_ms"}, {}};
    for (std::size_t k = 0; k < rep.step_ms.size(); ++k) {
      steps.rows.push_back({std::to_string(k), fixed(rep.step_ms[k], 3)});
    }
    text << steps.render()
         << "predictive MLP single forward: median_ms = " << fixed(rep.mlp_forward_median_ms, 3)
         << ", p95_ms = " << fixed(rep.mlp_forward_p95_ms, 3) << '\n';

    std::vector<std::string> artifacts;
    if (!o.out.empty()) {
      const fs::path dir(o.out);
      fs::create_directories(dir);
      write_text(dir / "bench.txt", text.str());
      write_records(dir / "bench.jsonl", {rep.to_json()});
      RunManifest m;
      m.command = "bench";
      m.config = {{"checkpoint", o.checkpoint}, {"ddim_steps", o.ddim_steps},
                  {"repeats", o.repeats},       {"warmup", o.warmup}};
      m.seed = o.seed;
      m.artifacts = {(dir / "bench.txt").string(), (dir / "bench.jsonl").string()};
      m.wall_seconds = clock.seconds();
      append_manifest(dir, m);
    }
    io.out << text.str();
    return kExitOk;
  });
}

// ---------------------------------------------------------------------------
// ablate

struct AblationCell {
  std::string name;
  TrainConfig config;
};

inline const std::vector<std::string>& ablation_suites() {
  static const std::vector<std::string> suites = {"timestep", "steps-train", "length",
                                                  "blocks",   "losses",      "predict-noise"};
  return suites;
}

// Toy-scale grids; sequence lengths and block counts are scaled down from
// 41/98/196/256 and 2/6/12/24.
inline std::vector<AblationCell> ablation_cells(const std::string& suite, const TrainConfig& base) {
  std::vector<AblationCell> cells;
  auto add = [&](const std::string& name, auto&& edit) {
    TrainConfig c = base;
    edit(c);
    cells.push_back({name, c});
  };
  if (suite == "timestep") {
    for (const auto m : {TimestepMode::None, TimestepMode::Add, TimestepMode::Concat,
                         TimestepMode::RepIn}) {
      add(std::string(to_string(m)), [&](TrainConfig& c) { c.timestep_mode = m; });
    }
  } else if (suite == "steps-train") {
    for (const std::size_t t : {10, 100, 1000}) {
      add("T" + std::to_string(t), [&](TrainConfig& c) { c.diffusion_steps = t; });
    }
  } else if (suite == "length") {
    for (const std::size_t n : {7, 16, 32, 42}) {
      add("N" + std::to_string(n), [&](TrainConfig& c) { c.seq_len = n; });
    }
  } else if (suite == "blocks") {
    for (const std::size_t b : {1, 2, 4, 8}) {
      add("M" + std::to_string(b), [&](TrainConfig& c) { c.num_blocks = b; });
    }
  } else if (suite == "losses") {
    struct Row {
      const char* name;
      double pos, vel, foot;
    };
    for (const Row r : {Row{"none", 0, 0, 0}, Row{"foot", 0, 0, 1}, Row{"pos", 1, 0, 0},
                        Row{"pos+vel", 1, 1, 0}, Row{"pos+vel+foot", 1, 1, 1}}) {
      add(r.name, [&](TrainConfig& c) {
        c.w_pos = r.pos;
        c.w_vel = r.vel;
        c.w_foot = r.foot;
      });
    }
  } else if (suite == "predict-noise") {
    add("x0", [](TrainConfig& c) { c.predict_noise = false; });
    add("noise", [](TrainConfig& c) { c.predict_noise = true; });
  } else {
    std::string known;
    for (const auto& s : ablation_suites()) known += (known.empty() ? "" : "|") + s;
    throw CommandError(kExitUsage, "unknown suite '" + suite + "' (expected " + known + ")");
  }
  return cells;
}

struct AblateOptions {
  std::string suite;
  std::string config; // empty: toy preset
  std::string data;
  std::string out;
  std::optional<std::size_t> iters;
  std::optional<std::uint64_t> seed;
  std::size_t ddim_steps = kDefaultDdimSteps;
  std::string split = "test";
};

inline int cmd_ablate(const AblateOptions& o, Console io = {}) {
  return detail::guarded(io, [&] {
    detail::Stopwatch clock;
    TrainConfig base = detail::base_train_config(o.config);
    if (o.iters) base.total_iters = *o.iters;
    if (o.seed) base.seed = *o.seed;
    const auto cells = ablation_cells(o.suite, base);
    for (const auto& c : cells) c.config.validate();
    if (o.out.empty()) throw CommandError(kExitUsage, "--out is required");
    const auto dd = detail::load_data_dir(o.data);
    const auto eval_idx = detail::split_indices(dd.data, o.split);
    if (eval_idx.empty()) throw CommandError(kExitMissingData, "split '" + o.split + "' is empty");
    std::vector<const MotionClip*> eval_clips;
    for (const auto i : eval_idx) eval_clips.push_back(&dd.data.clips[i]);

    const fs::path dir(o.out);
    Table table{metric_header("cell"), {}};
    table.header.push_back("manifest");
    std::vector<json> records;
    RunManifest top;
    top.command = "ablate";
    top.config = train_config_json(base);
    top.config["suite"] = o.suite;
    top.config["data"] = o.data;
    top.config["ddim_steps"] = o.ddim_steps;
    top.config["split"] = o.split;
    top.seed = base.seed;
    for (const auto& cell : cells) {
      detail::Stopwatch cell_clock;
      const fs::path cell_dir = dir / cell.name;
      TrainingSet set;
      try {
        set = make_training_set(dd.tree, dd.data, cell.config.seq_len, dd.data.train);
      } catch (const LengthError& e) {
        throw CommandError(kExitMissingData, cell.name + ": " + e.what());
      }
      io.out << "cell " << cell.name << '\n';
      Checkpoint ck;
      std::ostringstream quiet;
      auto artifacts = detail::train_into(cell_dir, set, cell.config, ModelKind::Diffusion,
                                          nullptr, quiet, ck);
      const std::size_t k = std::min(o.ddim_steps, cell.config.diffusion_steps);
      const Predictor model(std::move(ck));
      const MetricReport r = evaluate_predictor(dd.tree, model, eval_clips, k, base.seed);
      write_records(cell_dir / "metrics.jsonl", {r.to_json()});
      artifacts.push_back((cell_dir / "metrics.jsonl").string());

      RunManifest m;
      m.command = "ablate-cell";
      m.config = train_config_json(cell.config);
      m.config["suite"] = o.suite;
      m.config["cell"] = cell.name;
      m.config["ddim_steps"] = k;
      m.seed = cell.config.seed;
      m.artifacts = artifacts;
      m.wall_seconds = cell_clock.seconds();
      const fs::path manifest = append_manifest(cell_dir, m);

      auto row = metric_cells(cell.name, r);
      row.push_back(manifest.string());
      table.rows.push_back(row);
      json rec = r.to_json();
      rec["cell"] = cell.name;
      rec["manifest"] = manifest.string();
      records.push_back(rec);
      top.artifacts.push_back(manifest.string());
    }
    const std::string text = table.render();
    write_text(dir / "table.txt", text);
    write_records(dir / "table.jsonl", records);
    top.artifacts.push_back((dir / "table.txt").string());
    top.artifacts.push_back((dir / "table.jsonl").string());
    top.wall_seconds = clock.seconds();
    append_manifest(dir, top);
    io.out << text;
    return kExitOk;
  });
}

} // namespace agrol::cli
