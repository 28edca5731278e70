#include "commands.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <random>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "run_config.hpp"
#include "virtview/checkpoint.hpp"
#include "virtview/error.hpp"
#include "virtview/metrics.hpp"
#include "virtview/random.hpp"

namespace virtview::cli {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::optional<std::string> out;
  std::optional<std::string> dataset;
  std::optional<std::string> checkpoints;
  std::optional<std::size_t> frames;
  bool augment = false;
  std::optional<std::string> estimator;
  std::optional<std::string> mode;
  std::optional<int> n;
  std::optional<std::string> fusion;
  std::optional<int> repetitions;
  std::optional<int> teacher_epochs;
  std::optional<int> student_epochs;
  std::optional<int> estimator_epochs;
  int frame_index = 0;
  bool sweep = false;
};

RunConfig resolve(const Overrides& o) {
  RunConfig c = o.config.empty() ? RunConfig{} : load_run_config(o.config);
  if (o.seed) c.seed = *o.seed;
  if (o.threads) c.threads = *o.threads;
  if (o.dataset) c.dataset = *o.dataset;
  if (o.checkpoints) c.checkpoints = *o.checkpoints;
  if (o.frames) {
    c.frames = *o.frames;
    c.bench_frames = *o.frames;
  }
  if (o.augment) c.augment = true;
  if (o.estimator) c.estimator = *o.estimator;
  if (o.mode) c.pipeline.mode = parse_selection_mode(*o.mode);
  if (o.n) c.pipeline.num_selected = *o.n;
  if (o.fusion) c.pipeline.fusion = parse_fusion_kind(*o.fusion);
  if (o.repetitions) c.repetitions = *o.repetitions;
  if (o.teacher_epochs) c.teacher_training.epochs = *o.teacher_epochs;
  if (o.student_epochs) c.student_training.epochs = *o.student_epochs;
  if (o.estimator_epochs) c.estimator_schedule.epochs = *o.estimator_epochs;
  c.pipeline.seed = c.seed;
  c.pipeline.threads = c.resolved_threads();
  c.teacher_training.seed = mix_seed(c.seed, 2);
  c.student_training.seed = mix_seed(c.seed, 3);
  c.estimator_schedule.seed = mix_seed(c.seed, 1);
  c.augmentation.seed = mix_seed(c.seed, 4);
  c.oracle.rng_seed = mix_seed(c.seed, 5);
  c.validate();
  return c;
}

void require_file(const fs::path& p, const char* what) {
  if (!fs::is_regular_file(p)) throw Error(ErrorCode::IoError, std::string(what) + " not found: " + p.string());
}

void ensure_dir(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw Error(ErrorCode::IoError, "cannot create directory " + p.string() + ": " + ec.message());
}

std::vector<Frame> training_frames(const RunConfig& c, const Dataset& ds) {
  if (!c.augment) return ds.frames;
  std::vector<Frame> out;
  out.reserve(ds.frames.size());
  for (const Frame& f : ds.frames) out.push_back(augment(f, c.augmentation));
  return out;
}

// Estimator used by eval/bench: the oracle, or the trained regressor from the checkpoint dir.
struct LoadedModels {
  std::unique_ptr<ViewEstimator> estimator;
  std::optional<TeacherParams> teacher;
  std::optional<StudentParams> student;

  Models view() const {
    return {estimator.get(), teacher ? &*teacher : nullptr, student ? &*student : nullptr};
  }
};

LoadedModels load_models(const RunConfig& c, bool need_teacher, bool need_student) {
  const fs::path dir = c.checkpoints;
  LoadedModels m;
  if (c.estimator == "a2j") {
    require_file(dir / "estimator.json", "estimator checkpoint");
    m.estimator = std::make_unique<AnchorEstimator>(estimator_from_checkpoint(read_text(dir / "estimator.json")));
  } else {
    m.estimator = std::make_unique<OracleEstimator>(c.oracle);
  }
  if (need_teacher) {
    require_file(dir / "teacher.json", "teacher checkpoint");
    m.teacher = teacher_from_checkpoint(read_text(dir / "teacher.json"));
  }
  if (need_student) {
    require_file(dir / "student.json", "student checkpoint");
    m.student = student_from_checkpoint(read_text(dir / "student.json"));
  }
  return m;
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// ---------------------------------------------------------------------------

int cmd_synth(const Overrides& o, std::ostream& out) {
  RunConfig c = resolve(o);
  const fs::path path = o.out ? *o.out : c.dataset;
  const Dataset ds = generate_dataset(SynthHandSpec::default_hand(), c.frames, c.seed, c.camera, sample_pose,
                                      c.resolved_threads());
  if (path.has_parent_path()) ensure_dir(path.parent_path());
  write_dataset(path, ds);
  std::size_t min_valid = SIZE_MAX;
  for (const Frame& f : ds.frames) min_valid = std::min(min_valid, f.depth.valid_count());
  out << "synth: wrote " << ds.frames.size() << " frames to " << path.string() << " (spec " << ds.header.spec_hash
      << ", min valid pixels " << min_valid << ")\n";
  return 0;
}

void write_pgm16(const fs::path& path, const DepthImage& d) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  f << "P5\n" << d.width << ' ' << d.height << "\n65535\n";
  for (double v : d.values) {
    const auto u = static_cast<std::uint16_t>(std::clamp(std::round(v), 0.0, 65535.0));
    const char be[2] = {static_cast<char>(u >> 8), static_cast<char>(u & 0xff)};
    f.write(be, 2);
  }
}

int cmd_render(const Overrides& o, std::ostream& out) {
  RunConfig c = resolve(o);
  require_file(c.dataset, "dataset");
  const Dataset ds = read_dataset(c.dataset);
  if (o.frame_index < 0 || static_cast<std::size_t>(o.frame_index) >= ds.frames.size()) {
    throw Error(ErrorCode::ConfigError, "frame " + std::to_string(o.frame_index) + " outside dataset of " +
                                            std::to_string(ds.frames.size()));
  }
  const Frame& frame = ds.frames[static_cast<std::size_t>(o.frame_index)];
  const fs::path dir = o.out ? fs::path(*o.out) : fs::path(c.reports) / "render";
  ensure_dir(dir);

  const PipelineConfig& p = c.pipeline;
  const VirtualViewSet views = sample_virtual_views(frame.centroid_mm, frame.centroid_mm.norm(), p.grid_rows,
                                                    p.grid_cols, p.zenith_range, p.azimuth_range);
  const std::vector<DepthImage> images =
      render_all(unproject(frame.depth), views, frame.depth.intrinsics, p.render, c.resolved_threads());
  write_pgm16(dir / "original.pgm", frame.depth);
  json meta;
  meta["frame"] = o.frame_index;
  meta["center_mm"] = {frame.centroid_mm.x(), frame.centroid_mm.y(), frame.centroid_mm.z()};
  meta["radius_mm"] = views.radius_mm;
  meta["views"] = json::array();
  for (int i = 0; i < views.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "view_%02d.pgm", i);
    write_pgm16(dir / name, images[static_cast<std::size_t>(i)]);
    const Eigen::Matrix4d m = views[i].to_original.homogeneous();
    json rows = json::array();
    for (int r = 0; r < 4; ++r) rows.push_back({m(r, 0), m(r, 1), m(r, 2), m(r, 3)});
    meta["views"].push_back({{"id", i},
                             {"file", name},
                             {"zenith", views[i].zenith},
                             {"azimuth", views[i].azimuth},
                             {"to_original", rows},
                             {"valid_pixels", images[static_cast<std::size_t>(i)].valid_count()}});
  }
  std::ofstream(dir / "views.json") << meta.dump(2) << "\n";
  out << "render: frame " << o.frame_index << " -> " << views.size() << " views in " << dir.string() << "\n";
  return 0;
}

int cmd_train(const Overrides& o, std::ostream& out) {
  RunConfig c = resolve(o);
  require_file(c.dataset, "dataset");
  const fs::path dir = o.out ? fs::path(*o.out) : fs::path(c.checkpoints);
  ensure_dir(dir);
  const Dataset ds = read_dataset(c.dataset);
  const std::vector<Frame> frames = training_frames(c, ds);

  std::ofstream log_file(dir / "train_log.jsonl");
  TrainingLog log;
  log.on_record = [&](const EpochRecord& r) {
    log_file << to_json_line(r) << "\n";
    out << "train: " << r.stage << " epoch " << r.epoch << " loss " << fmt("%.6g", r.loss) << "\n";
  };

  EstimatorParams estimator;
  std::unique_ptr<ViewEstimator> view_estimator;
  if (c.estimator == "a2j") {
    estimator = EstimatorParams::initialize(c.a2j, mix_seed(c.seed, 6));
    // Original crops plus two seeded lattice views per frame.
    std::vector<EstimatorSample> samples;
    std::mt19937_64 rng(mix_seed(c.seed, 7));
    for (const Frame& f : frames) {
      samples.push_back({crop_hand(f.depth, f.centroid_mm, c.pipeline.crop), f.gt});
      const VirtualViewSet views =
          apply_view_jitter(sample_virtual_views(f.centroid_mm, f.centroid_mm.norm(), c.pipeline.grid_rows,
                                                 c.pipeline.grid_cols, c.pipeline.zenith_range,
                                                 c.pipeline.azimuth_range),
                            f.meta.view_jitter);
      const PointCloud cloud = unproject(f.depth);
      std::uniform_int_distribution<int> pick(0, views.size() - 1);
      for (int r = 0; r < 2; ++r) {
        const VirtualView& v = views[pick(rng)];
        const DepthImage img = render_depth(cloud, v, f.depth.intrinsics, c.pipeline.render);
        samples.push_back({crop_hand(img, v.from_original.apply(f.centroid_mm), c.pipeline.crop),
                           transform_pose(f.gt, v.from_original, v.frame_id)});
      }
    }
    estimator = train_estimator(samples, std::move(estimator), c.estimator_schedule, &log);
    view_estimator = std::make_unique<AnchorEstimator>(estimator);
  } else {
    out << "train: oracle estimator has no trainable parameters; skipping the estimator stage\n";
    view_estimator = std::make_unique<OracleEstimator>(c.oracle);
  }

  std::vector<MultiViewSample> samples;
  samples.reserve(frames.size());
  for (const Frame& f : frames) samples.push_back(make_training_sample(f, c.pipeline, *view_estimator));

  TeacherParams teacher = TeacherParams::initialize(teacher_config_for(c), mix_seed(c.seed, 8));
  auto [joint_estimator, trained_teacher] =
      train_teacher_joint(samples, std::move(estimator), std::move(teacher), c.teacher_training, &log);
  write_text(dir / "teacher.json", to_checkpoint(trained_teacher));
  const EstimatorParams* frozen = nullptr;
  if (c.estimator == "a2j") {
    write_text(dir / "estimator.json", to_checkpoint(joint_estimator));
    frozen = &joint_estimator;
  }

  StudentParams student = StudentParams::initialize(student_config_for(c), mix_seed(c.seed, 9));
  student = train_student(samples, trained_teacher, frozen, std::move(student), c.student_training, &log);
  write_text(dir / "student.json", to_checkpoint(student));
  out << "train: checkpoints written to " << dir.string() << "\n";
  return 0;
}

json eval_once(const RunConfig& c, const PipelineConfig& p, const LoadedModels& m, const std::vector<Frame>& frames,
               const fs::path& dir, std::ostream& out) {
  const std::vector<HandPose> preds = infer_all(frames, p, m.view());
  std::vector<HandPose> gts;
  for (const Frame& f : frames) gts.push_back(f.gt);
  const EvalReport report = mean_joint_error(preds, gts);

  const std::string stem = std::string(to_string(p.mode)) + "_n" + std::to_string(p.num_selected) + "_" +
                           std::string(to_string(p.fusion_kind()));
  json j;
  j["mode"] = to_string(p.mode);
  j["n"] = p.num_selected;
  j["fusion"] = to_string(p.fusion_kind());
  j["estimator"] = c.estimator;
  j["config_hash"] = config_hash(p);
  j["report"] = json::parse(to_json(report));
  std::ofstream(dir / ("eval_" + stem + ".json")) << j.dump(2) << "\n";
  std::ofstream(dir / ("success_" + stem + ".csv")) << success_curve_csv(report);
  out << "eval: mode=" << to_string(p.mode) << " n=" << p.num_selected << " fusion=" << to_string(p.fusion_kind())
      << " frames=" << report.n_frames << " mean_error_mm=" << fmt("%.4f", report.mean_joint_error_mm) << "\n";
  return {{"mode", to_string(p.mode)},
          {"n", p.num_selected},
          {"fusion", to_string(p.fusion_kind())},
          {"mean_error_mm", report.mean_joint_error_mm}};
}

std::vector<PipelineConfig> sweep_grid(const PipelineConfig& base, bool have_teacher, bool have_student) {
  std::vector<PipelineConfig> grid;
  for (SelectionMode mode : {SelectionMode::Uniform, SelectionMode::SelectTeacher, SelectionMode::SelectLight,
                             SelectionMode::Random}) {
    if (mode == SelectionMode::SelectTeacher && !have_teacher) continue;
    if (mode == SelectionMode::SelectLight && !have_student) continue;
    for (int n : {1, 3, 9, 15, 25}) {
      if (n > base.view_count()) continue;
      PipelineConfig p = base;
      p.mode = mode;
      p.num_selected = n;
      p.fusion.reset();
      grid.push_back(p);
    }
  }
  return grid;
}

int cmd_eval(const Overrides& o, std::ostream& out) {
  RunConfig c = resolve(o);
  require_file(c.dataset, "dataset");
  const fs::path dir = o.out ? fs::path(*o.out) : fs::path(c.reports);
  const fs::path ckpt = c.checkpoints;
  const bool teacher = o.sweep ? fs::is_regular_file(ckpt / "teacher.json")
                               : c.pipeline.mode == SelectionMode::SelectTeacher;
  const bool student = o.sweep ? fs::is_regular_file(ckpt / "student.json")
                               : c.pipeline.mode == SelectionMode::SelectLight;
  const LoadedModels models = load_models(c, teacher, student);
  const Dataset ds = read_dataset(c.dataset);
  ensure_dir(dir);
  if (!o.sweep) {
    eval_once(c, c.pipeline, models, ds.frames, dir, out);
    return 0;
  }
  std::ofstream csv(dir / "ablation.csv");
  csv << "mode,n,fusion,mean_error_mm\n";
  for (const PipelineConfig& p : sweep_grid(c.pipeline, teacher, student)) {
    const json row = eval_once(c, p, models, ds.frames, dir, out);
    csv << row["mode"].get<std::string>() << ',' << row["n"].get<int>() << ',' << row["fusion"].get<std::string>()
        << ',' << fmt("%.6f", row["mean_error_mm"].get<double>()) << "\n";
  }
  return 0;
}

int cmd_bench(const Overrides& o, std::ostream& out) {
  RunConfig c = resolve(o);
  require_file(c.dataset, "dataset");
  const fs::path dir = o.out ? fs::path(*o.out) : fs::path(c.reports);
  const fs::path ckpt = c.checkpoints;

  std::vector<PipelineConfig> grid;
  if (o.sweep) {
    for (int n : {1, 3, 9, 15, 25}) {
      PipelineConfig p = c.pipeline;
      p.mode = SelectionMode::Uniform;
      p.num_selected = n;
      p.fusion.reset();
      grid.push_back(p);
    }
    for (SelectionMode mode : {SelectionMode::SelectTeacher, SelectionMode::SelectLight}) {
      PipelineConfig p = c.pipeline;
      p.mode = mode;
      p.num_selected = 3;
      p.fusion.reset();
      grid.push_back(p);
    }
  } else {
    grid.push_back(c.pipeline);
  }
  bool teacher = false, student = false;
  for (const PipelineConfig& p : grid) {
    teacher |= p.mode == SelectionMode::SelectTeacher;
    student |= p.mode == SelectionMode::SelectLight;
  }
  const LoadedModels models = load_models(c, teacher, student);
  Dataset ds = read_dataset(c.dataset);
  if (ds.frames.size() > c.bench_frames) ds.frames.resize(c.bench_frames);
  ensure_dir(dir);

  json all = json::array();
  for (const PipelineConfig& p : grid) {
    const FpsReport r = bench_fps(p, models.view(), ds.frames, c.repetitions);
    json j = json::parse(to_json(r));
    j["mode"] = to_string(p.mode);
    j["n"] = p.num_selected;
    all.push_back(j);
    out << "bench: mode=" << to_string(p.mode) << " n=" << p.num_selected << " threads=" << r.thread_count
        << " fps=" << fmt("%.2f", r.frames_per_second) << "\n";
  }
  std::ofstream(dir / "bench.json") << (o.sweep ? all : all[0]).dump(2) << "\n";
  return 0;
}

void add_common(CLI::App* sub, Overrides& o) {
  sub->add_option("--config", o.config, "JSON run configuration");
  sub->add_option("--seed", o.seed, "global seed");
  sub->add_option("--threads", o.threads, "worker threads (default: VIRTVIEW_THREADS or core count)")
      ->check(CLI::PositiveNumber);
  sub->add_option("--out", o.out, "output path");
}

void add_models(CLI::App* sub, Overrides& o) {
  sub->add_option("--dataset", o.dataset, "dataset file");
  sub->add_option("--checkpoints", o.checkpoints, "checkpoint directory");
  sub->add_option("--estimator", o.estimator, "oracle or a2j");
  sub->add_option("--mode", o.mode, "uniform, select_teacher, select_light or random");
  sub->add_option("--n", o.n, "number of views to fuse");
  sub->add_option("--fusion", o.fusion, "weighted or average");
}

int report_error(std::ostream& err, ErrorCategory cat, std::string_view code, const std::string& detail) {
  std::string flat = detail;
  std::replace(flat.begin(), flat.end(), '\n', ' ');
  err << "error: category=" << to_string(cat) << " code=" << code << " detail=" << flat << "\n";
  switch (cat) {
    case ErrorCategory::Config: return 2;
    case ErrorCategory::Data: return 3;
    case ErrorCategory::Numeric: return 4;
  }
  return 1;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Virtual-view selection and fusion for depth-based hand pose estimation"};
  app.name("virtview");
  app.require_subcommand(1);
  Overrides o;

  CLI::App* synth = app.add_subcommand("synth", "generate a synthetic hand dataset");
  add_common(synth, o);
  synth->add_option("--frames", o.frames, "number of frames");

  CLI::App* render = app.add_subcommand("render", "render one frame into every virtual view (16-bit PGM)");
  add_common(render, o);
  render->add_option("--dataset", o.dataset, "dataset file");
  render->add_option("--frame", o.frame_index, "frame index");

  CLI::App* train = app.add_subcommand("train", "train estimator, teacher and student");
  add_common(train, o);
  train->add_option("--dataset", o.dataset, "dataset file");
  train->add_option("--estimator", o.estimator, "oracle or a2j");
  train->add_flag("--augment", o.augment, "augment training frames");
  train->add_option("--estimator-epochs", o.estimator_epochs, "anchor regressor epochs");
  train->add_option("--teacher-epochs", o.teacher_epochs, "teacher epochs");
  train->add_option("--student-epochs", o.student_epochs, "student epochs");

  CLI::App* eval = app.add_subcommand("eval", "evaluate mean joint error");
  add_common(eval, o);
  add_models(eval, o);
  eval->add_flag("--sweep", o.sweep, "run every mode x N in {1,3,9,15,25}");

  CLI::App* bench = app.add_subcommand("bench", "measure frames per second");
  add_common(bench, o);
  add_models(bench, o);
  bench->add_option("--repetitions", o.repetitions, "timed repetitions (>= 3)");
  bench->add_option("--frames", o.frames, "frames per repetition");
  bench->add_flag("--sweep", o.sweep, "uniform N in {1,3,9,15,25} plus both selection modes at N=3");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    return report_error(err, ErrorCategory::Config, "ConfigError", e.what());
  }

  try {
    if (synth->parsed()) return cmd_synth(o, out);
    if (render->parsed()) return cmd_render(o, out);
    if (train->parsed()) return cmd_train(o, out);
    if (eval->parsed()) return cmd_eval(o, out);
    if (bench->parsed()) return cmd_bench(o, out);
  } catch (const Error& e) {
    return report_error(err, e.category(), to_string(e.code()), e.detail());
  } catch (const std::exception& e) {
    return report_error(err, ErrorCategory::Data, "IoError", e.what());
  }
  return 0;
}

}  // namespace virtview::cli
