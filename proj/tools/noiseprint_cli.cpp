#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "noiseprint/noiseprint.hpp"

namespace fs = std::filesystem;
using namespace noiseprint;

namespace {

enum ExitCode { ok = 0, usage = 2, bad_input = 3, bad_file = 4, failure = 5 };

struct Globals {
  std::string out_root = ".";
  bool force = false;
  bool quiet = false;
};

Globals g;

void note(const std::string& msg) {
  if (!g.quiet) std::cerr << msg << '\n';
}

fs::path output_path(const std::string& p) {
  const fs::path q(p);
  return q.is_absolute() ? q : fs::path(g.out_root) / q;
}

// Relative inputs are looked up in the working directory first, then under the output root.
fs::path input_path(const std::string& p) {
  const fs::path q(p);
  if (q.is_absolute() || fs::exists(q)) return q;
  const fs::path alt = fs::path(g.out_root) / q;
  return fs::exists(alt) ? alt : q;
}

void ensure_parent(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

// Builds a directory under "<target>.partial" and moves it into place on commit; anything
// left uncommitted is removed.
class StagedDir {
 public:
  explicit StagedDir(fs::path target) : target_(std::move(target)) {
    if (fs::exists(target_) && !(fs::is_directory(target_) && fs::is_empty(target_)) && !g.force)
      throw invalid_input("output " + target_.string() + " exists and is not empty (use --force to replace it)");
    stage_ = target_;
    stage_ += ".partial";
    fs::remove_all(stage_);
    fs::create_directories(stage_);
  }
  StagedDir(const StagedDir&) = delete;
  StagedDir& operator=(const StagedDir&) = delete;
  ~StagedDir() {
    if (!committed_) {
      std::error_code ec;
      fs::remove_all(stage_, ec);
    }
  }
  const fs::path& path() const { return stage_; }
  void commit() {
    fs::remove_all(target_);
    fs::rename(stage_, target_);
    committed_ = true;
  }

 private:
  fs::path target_, stage_;
  bool committed_ = false;
};

std::string single_line(std::string s) {
  for (char& c : s)
    if (c == '\n' || c == '\r') c = ' ';
  return s;
}

std::string stem_of(const std::string& path) { return fs::path(path).stem().string(); }

void add_architecture(CLI::App* cmd, NetArchitecture& a) {
  cmd->add_option("--depth", a.depth, "Convolutional layers")->check(CLI::Range(2, 64));
  cmd->add_option("--channels", a.width, "Feature channels per hidden layer")->check(CLI::PositiveNumber);
  cmd->add_option("--kernel", a.kernel, "Odd kernel size")->check(CLI::PositiveNumber);
}

void add_window(CLI::App* cmd, WindowConfig& w) {
  cmd->add_option("--window", w.window, "Sliding window side")->check(CLI::PositiveNumber);
  cmd->add_option("--stride", w.stride, "Sliding window stride")->check(CLI::PositiveNumber);
}

// ---------------------------------------------------------------------------------------------

struct SimulateArgs {
  std::string out = "dataset";
  DatasetConfig cfg;
};

int cmd_simulate(const SimulateArgs& a) {
  a.cfg.validate();
  const auto target = output_path(a.out);
  ensure_parent(target);
  StagedDir stage(target);
  const auto ds = generate_dataset(a.cfg);
  write_dataset(ds, stage.path());
  stage.commit();
  std::cout << "dataset " << (target / "manifest.txt").string() << " images " << ds.images.size() << " hash "
            << manifest_hash(ds.manifest) << '\n';
  return ok;
}

struct PretrainArgs {
  std::string out = "denoiser.bin";
  NetArchitecture arch;
  PretrainConfig cfg;
  int scenes = 64;
  int scene_size = 96;
};

int cmd_pretrain(PretrainArgs a) {
  a.arch.validate();
  const auto out = output_path(a.out);
  ensure_parent(out);
  const auto scenes = render_scenes(a.scenes, a.scene_size, a.scene_size, derive_seed(a.cfg.seed, 1));
  a.cfg.progress = [&](int it, double loss) {
    if (it % 50 == 0 || it == a.cfg.iterations) note("pretrain iteration " + std::to_string(it) + " mse " + format_number(loss));
  };
  auto res = pretrain_denoiser(scenes, Net(a.arch, derive_seed(a.cfg.seed, 2)), a.cfg);
  const auto held_out = render_scenes(8, a.scene_size, a.scene_size, derive_seed(a.cfg.seed, 3));
  const auto ev = evaluate_denoiser(held_out, res.net, a.cfg.noise_sigma, derive_seed(a.cfg.seed, 4));
  save_net(out, res.net, "denoiser");
  std::cout << "denoiser " << out.string() << " psnr_noisy " << format_number(ev.noisy_psnr) << " psnr_denoised "
            << format_number(ev.denoised_psnr) << '\n';
  return ok;
}

struct TrainArgs {
  std::string manifest;
  std::string init;
  std::string resume;
  std::string out = "noiseprint.bin";
  std::string log = "train_log.csv";
  std::string checkpoint;
  NetArchitecture arch;
  TrainConfig cfg;
};

int cmd_train(TrainArgs a) {
  const auto ds = load_dataset(input_path(a.manifest));
  const auto train = make_pool(ds, Role::train);
  const auto validation = make_pool(ds, Role::validation);
  require(!train.images.empty(), "manifest has no train images");
  if (validation.images.empty()) warn("manifest has no validation images; keeping the final weights");

  Net net;
  if (!a.resume.empty()) {
    require(a.init.empty(), "--init and --resume are mutually exclusive");
    auto cp = checkpoint_from_container(load_container(input_path(a.resume)));
    net = std::move(cp.net);
    a.cfg.resume_optimizer = std::move(cp.adam);
    a.cfg.first_iteration = cp.iteration + 1;
  } else {
    a.arch.validate();
    net = Net(a.arch, derive_seed(a.cfg.seed, 1));
    if (!a.init.empty()) net = init_from_denoiser(std::move(net), load_container(input_path(a.init)));
  }

  const auto out = output_path(a.out);
  const auto log = output_path(a.log);
  ensure_parent(out);
  ensure_parent(log);
  auto log_stage = log;
  log_stage += ".partial";
  a.cfg.log_path = log_stage;
  a.cfg.progress = [](int it, double loss) {
    if (it % 50 == 0) note("train iteration " + std::to_string(it) + " loss " + format_number(loss));
  };
  TrainResult res;
  try {
    res = train_siamese(train, validation.images.empty() ? nullptr : &validation, std::move(net), a.cfg);
  } catch (...) {
    fs::remove(log_stage);
    throw;
  }
  auto save_checkpoint = [&] {
    if (a.checkpoint.empty()) return;
    const auto cp = output_path(a.checkpoint);
    ensure_parent(cp);
    const int last = res.log.empty() ? a.cfg.first_iteration - 1 : res.log.back().iteration;
    save_container(cp, checkpoint_container(res.final_net, res.optimizer, last));
  };
  if (res.aborted) {
    fs::remove(log_stage);
    save_checkpoint();
    throw std::runtime_error("training diverged: " + res.abort_reason +
                             (a.checkpoint.empty() ? "" : "; last good state saved to " + a.checkpoint));
  }
  save_net(out, res.net, "noiseprint");
  save_checkpoint();
  fs::rename(log_stage, log);
  std::cout << "weights " << out.string() << " best_iteration " << res.best_iteration;
  for (const auto& v : res.validation)
    if (v.iteration == res.best_iteration)
      std::cout << " pos_mean " << format_number(v.pos_mean) << " neg_mean " << format_number(v.neg_mean) << " ratio "
                << format_number(v.ratio);
  std::cout << '\n';
  return ok;
}

struct EstimateArgs {
  std::string manifest;
  std::string method = "noiseprint";
  std::string weights;
  std::string out = "references";
  int n_ref = 50;
  std::vector<int> devices;
  WienerConfig wiener;
};

std::string reference_name(Method m, int device) { return to_string(m) + "_d" + std::to_string(device) + ".fp"; }

int cmd_estimate(const EstimateArgs& a) {
  const Method method = parse_method(a.method);
  require(a.n_ref >= 1, "--n-ref must be at least 1");
  const auto ds = load_dataset(input_path(a.manifest));
  std::optional<Net> net;
  if (method == Method::noiseprint) {
    require(!a.weights.empty(), "noiseprint references need --weights");
    net = load_net(input_path(a.weights));
  }
  auto refs = references_by_device(ds);
  std::vector<int> devices = a.devices;
  if (devices.empty())
    for (const auto& [d, idx] : refs) devices.push_back(d);
  require(!devices.empty(), "manifest has no reference images");

  const auto target = output_path(a.out);
  ensure_parent(target);
  StagedDir stage(target);
  const std::string hash = manifest_hash(ds.manifest);
  for (int d : devices) {
    const auto it = refs.find(d);
    const std::size_t have = it == refs.end() ? 0 : it->second.size();
    require(have >= static_cast<std::size_t>(a.n_ref), "device " + std::to_string(d) + " has " + std::to_string(have) +
                                                           " reference images, " + std::to_string(a.n_ref) + " requested");
    std::vector<Plane> images;
    for (int k = 0; k < a.n_ref; ++k) images.push_back(ds.images[it->second[static_cast<std::size_t>(k)]]);
    ReferenceSidecar meta;
    meta.type = to_string(method);
    meta.n_images = a.n_ref;
    meta.source_hash = hash;
    meta.extra["device"] = std::to_string(d);
    Plane plane;
    if (method == Method::noiseprint) {
      auto r = estimate_noiseprint_reference(images, *net);
      plane = std::move(r.mean_residual);
      meta.generator_id = r.net_id;
    } else {
      auto r = estimate_prnu(images, a.wiener);
      plane = std::move(r.k_hat);
      meta.generator_id = r.denoiser_id;
    }
    save_reference(stage.path() / reference_name(method, d), plane, meta);
  }
  stage.commit();
  std::cout << "references " << target.string() << " count " << devices.size() << '\n';
  return ok;
}

struct LocalizeArgs {
  std::string reference;
  std::string references;
  std::vector<std::string> images;
  std::string manifest;
  std::string weights;
  std::string out = "heatmaps";
  WindowConfig window;
  std::optional<double> threshold;
  WienerConfig wiener;
};

struct LoadedReference {
  Plane plane;
  ReferenceSidecar meta;
};

LoadedReference load_reference(const fs::path& p) {
  auto meta = load_sidecar(p);
  return {read_float_plane(p), std::move(meta)};
}

int cmd_localize(const LocalizeArgs& a) {
  require(a.reference.empty() != a.references.empty(), "give exactly one of --reference or --references");
  require(a.images.empty() != a.manifest.empty(), "give exactly one of --image or --manifest");
  require(a.references.empty() || !a.manifest.empty(), "--references needs --manifest to pick each image's device");

  // (image path, image, reference file)
  struct Job {
    std::string name;
    Plane image;
    fs::path reference;
  };
  std::vector<Job> jobs;
  std::string source_hash;
  if (!a.manifest.empty()) {
    const auto ds = load_dataset(input_path(a.manifest));
    source_hash = manifest_hash(ds.manifest);
    for (auto t : ds.indices(Role::forged_test)) {
      const auto& rec = ds.manifest.images[t];
      fs::path ref;
      if (!a.reference.empty()) {
        ref = input_path(a.reference);
      } else {
        const auto dir = input_path(a.references);
        for (Method m : {Method::noiseprint, Method::prnu})
          if (fs::exists(dir / reference_name(m, rec.device_id))) ref = dir / reference_name(m, rec.device_id);
        if (ref.empty()) throw format_error("no reference for device " + std::to_string(rec.device_id) + " in " + dir.string());
      }
      jobs.push_back({rec.path, ds.images[t], ref});
    }
    require(!jobs.empty(), "manifest has no forged-test images");
  } else {
    for (const auto& p : a.images) jobs.push_back({p, read_image(input_path(p)), input_path(a.reference)});
  }

  std::map<fs::path, LoadedReference> refs;
  std::optional<Net> net;
  std::string method, generator;
  int n_ref = -1;
  for (const auto& j : jobs) {
    if (refs.count(j.reference)) continue;
    auto r = load_reference(j.reference);
    if (method.empty()) {
      method = r.meta.type;
      generator = r.meta.generator_id;
      n_ref = r.meta.n_images;
    }
    require(r.meta.type == method && r.meta.n_images == n_ref,
            "references disagree on type or image count (" + j.reference.string() + ")");
    refs.emplace(j.reference, std::move(r));
  }
  if (method == "noiseprint") {
    require(!a.weights.empty(), "noiseprint references need --weights");
    net = load_net(input_path(a.weights));
    if (net_id(*net) != generator)
      warn("weights id " + net_id(*net) + " differs from the network id " + generator + " recorded with the reference");
  }

  const auto target = output_path(a.out);
  ensure_parent(target);
  StagedDir stage(target);
  std::ostringstream index;
  index << "noiseprint-heatmaps 1\nmethod " << method << "\nn_reference " << n_ref << "\ngenerator " << generator << '\n';
  if (!source_hash.empty()) index << "source " << source_hash << '\n';
  for (const auto& j : jobs) {
    const auto& ref = refs.at(j.reference).plane;
    Heatmap heat;
    if (method == "noiseprint") {
      require(j.image.same_size(ref), "test image " + j.name + " is " + j.image.size_str() + " but the reference is " +
                                          ref.size_str() + "; references must be aligned with the test image");
      heat = noiseprint_heatmap(extract_residual(j.image, *net), ref, a.window);
    } else {
      heat = prnu_heatmap(j.image, PrnuReference{ref, n_ref, generator}, a.window, a.wiener);
    }
    const std::string stem = stem_of(j.name);
    write_float_plane(stage.path() / (stem + "_heat.fp"), heat);
    render_heatmap_png(heat, stage.path() / (stem + "_heat.png"));
    if (a.threshold) write_mask_pgm(stage.path() / (stem + "_decision.pgm"), threshold(heat, *a.threshold));
    index << "heatmap " << j.name << ' ' << stem << "_heat.fp\n";
  }
  detail::atomic_write(stage.path() / "index.txt", [&](std::ostream& os) { os << index.str(); });
  stage.commit();
  std::cout << "heatmaps " << target.string() << " count " << jobs.size() << '\n';
  return ok;
}

struct EvaluateArgs {
  std::string manifest;
  std::string heatmaps = "heatmaps";
  std::string out = "report.txt";
  int roc_points = 257;
};

int cmd_evaluate(const EvaluateArgs& a) {
  const auto ds = load_dataset(input_path(a.manifest));
  const auto dir = input_path(a.heatmaps);
  std::istringstream index(read_text_file(dir / "index.txt"));
  std::string line;
  if (!std::getline(index, line) || line != "noiseprint-heatmaps 1") throw format_error("heatmap index has a bad header");
  std::map<std::string, std::string> meta, files;
  while (std::getline(index, line)) {
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "heatmap") {
      std::string image, file;
      if (!(ls >> image >> file)) throw format_error("malformed heatmap index line: " + line);
      files[image] = file;
    } else {
      std::getline(ls >> std::ws, meta[key]);
    }
  }
  std::vector<Heatmap> heat;
  std::vector<Mask> masks;
  std::vector<std::string> names;
  for (auto t : ds.indices(Role::forged_test)) {
    const auto& rec = ds.manifest.images[t];
    const auto it = files.find(rec.path);
    if (it == files.end()) throw format_error("no heatmap for forged image " + rec.path);
    heat.push_back(read_float_plane(dir / it->second));
    require(heat.back().width == ds.masks[t].width && heat.back().height == ds.masks[t].height,
            "heatmap for " + rec.path + " is " + heat.back().size_str() + " but its mask is " +
                std::to_string(ds.masks[t].width) + "x" + std::to_string(ds.masks[t].height));
    masks.push_back(ds.masks[t]);
    names.push_back(rec.path);
  }
  require(!heat.empty(), "manifest has no forged-test images");
  auto report = evaluate_heatmaps(meta["method"], std::stoi(meta.count("n_reference") ? meta["n_reference"] : "0"), heat, masks, names);
  report.dataset_hash = manifest_hash(ds.manifest);
  report.generator_id = meta["generator"];
  const auto out = output_path(a.out);
  ensure_parent(out);
  const std::vector<MetricsReport> reports{report};
  const auto text = format_reports(reports, static_cast<std::size_t>(a.roc_points));
  detail::atomic_write(out, [&](std::ostream& os) { os << text; });
  std::cout << "report " << out.string() << " auc " << format_number(report.auc) << " f1 " << format_number(report.f1)
            << " f1_oracle " << format_number(report.f1_oracle) << '\n';
  return ok;
}

struct BenchArgs {
  std::string manifest;
  std::string weights;
  std::vector<std::string> methods{"noiseprint", "prnu"};
  std::vector<int> n_refs{50, 10, 1};
  std::string out = "bench_report.txt";
  std::string roc_png;
  int roc_points = 257;
  BenchmarkConfig cfg;
};

int cmd_bench(BenchArgs a) {
  a.cfg.methods.clear();
  for (const auto& m : a.methods) a.cfg.methods.push_back(parse_method(m));
  a.cfg.n_refs = a.n_refs;
  for (int n : a.n_refs) require(n >= 1, "reference counts must be positive");
  const auto ds = load_dataset(input_path(a.manifest));
  std::optional<Net> net;
  if (!a.weights.empty()) net = load_net(input_path(a.weights));
  const auto reports = run_benchmark(ds, net ? &*net : nullptr, a.cfg);
  require(!reports.empty(), "every benchmark cell was skipped");
  const auto out = output_path(a.out);
  ensure_parent(out);
  const auto text = format_reports(reports, static_cast<std::size_t>(a.roc_points));
  if (!a.roc_png.empty()) {
    const auto png = output_path(a.roc_png);
    ensure_parent(png);
    render_roc_png(parse_reports(text), png);
  }
  detail::atomic_write(out, [&](std::ostream& os) { os << text; });
  for (const auto& r : reports)
    std::cout << r.method << " n_ref " << r.n_reference << " auc " << format_number(r.auc) << " f1 " << format_number(r.f1)
              << " f1_oracle " << format_number(r.f1_oracle) << '\n';
  return ok;
}

struct RenderArgs {
  std::string report;
  std::string heatmap;
  std::string out;
  std::optional<double> lo, hi;
};

int cmd_render(const RenderArgs& a) {
  require(a.report.empty() != a.heatmap.empty(), "give exactly one of --report or --heatmap");
  require(a.lo.has_value() == a.hi.has_value(), "--lo and --hi go together");
  const std::string default_out = a.report.empty() ? stem_of(a.heatmap) + ".png" : stem_of(a.report) + "_roc.png";
  const auto out = output_path(a.out.empty() ? default_out : a.out);
  ensure_parent(out);
  if (!a.report.empty()) {
    render_roc_png(parse_reports(read_text_file(input_path(a.report))), out);
  } else {
    std::optional<HeatmapBounds> b;
    if (a.lo) b = HeatmapBounds{*a.lo, *a.hi};
    render_heatmap_png(read_image(input_path(a.heatmap)), out, b);
  }
  std::cout << "png " << out.string() << '\n';
  return ok;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Camera-model fingerprint extraction and forgery localization"};
  app.option_defaults()->always_capture_default();
  app.set_config("--config", "", "TOML/INI file with flag values; command-line flags take precedence");
  app.require_subcommand(1);
  app.fallthrough();
  app.add_option("--out-root", g.out_root, "Directory that relative output paths are placed under")->envname("NOISEPRINT_OUT");
  app.add_flag("--force", g.force, "Replace non-empty output directories");
  app.add_flag("--quiet", g.quiet, "Suppress progress messages");

  SimulateArgs sim;
  auto* s = app.add_subcommand("simulate", "Generate the synthetic camera dataset");
  s->add_option("--out", sim.out, "Output dataset directory");
  s->add_option("--seed", sim.cfg.seed, "Random seed");
  s->add_option("--models", sim.cfg.n_models, "Camera models");
  s->add_option("--train-models", sim.cfg.train_models, "Models used for training; the rest are held out");
  s->add_option("--devices-per-model", sim.cfg.devices_per_model, "Devices per model");
  s->add_option("--images-per-device", sim.cfg.images_per_device, "Pristine images per device");
  s->add_option("--n-reference", sim.cfg.n_reference, "Reference images per held-out device");
  s->add_option("--forged", sim.cfg.n_forged, "Forged test images");
  s->add_option("--width", sim.cfg.width, "Image width");
  s->add_option("--height", sim.cfg.height, "Image height");
  s->add_option("--sigma-k", sim.cfg.sigma_k, "PRNU strength");
  s->add_option("--alpha", sim.cfg.alpha, "Model pattern amplitude");
  s->add_option("--sigma-n", sim.cfg.sigma_n, "Shot/read noise standard deviation");
  s->add_option("--block-q", sim.cfg.block_q, "Block quantisation step for odd-numbered models");
  s->add_option("--periods", sim.cfg.periods, "Model pattern periods, assigned round-robin");
  s->add_option("--region-min", sim.cfg.region_min, "Smallest forged region side");
  s->add_option("--region-max", sim.cfg.region_max, "Largest forged region side");

  PretrainArgs pre;
  auto* p = app.add_subcommand("pretrain", "Train the network as a residual denoiser");
  p->add_option("--out", pre.out, "Output weights file");
  p->add_option("--seed", pre.cfg.seed, "Random seed");
  add_architecture(p, pre.arch);
  p->add_option("--iterations", pre.cfg.iterations, "ADAM iterations");
  p->add_option("--batch", pre.cfg.batch, "Patches per batch");
  p->add_option("--patch", pre.cfg.patch, "Patch side");
  p->add_option("--lr", pre.cfg.adam.learning_rate, "Learning rate");
  p->add_option("--sigma", pre.cfg.noise_sigma, "Training noise standard deviation");
  p->add_option("--scenes", pre.scenes, "Synthetic training scenes");
  p->add_option("--scene-size", pre.scene_size, "Scene side");

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Siamese training on the dataset's train models");
  t->add_option("--manifest", tr.manifest, "Dataset manifest")->required();
  t->add_option("--init", tr.init, "Denoiser weights to start from");
  t->add_option("--resume", tr.resume, "Checkpoint to continue from");
  t->add_option("--out", tr.out, "Output weights file (best validation iteration)");
  t->add_option("--log", tr.log, "Training log (CSV)");
  t->add_option("--checkpoint", tr.checkpoint, "Also write final weights with optimizer state here");
  t->add_option("--seed", tr.cfg.seed, "Random seed");
  add_architecture(t, tr.arch);
  t->add_option("--iterations", tr.cfg.iterations, "ADAM iterations");
  t->add_option("--lr", tr.cfg.adam.learning_rate, "Learning rate");
  t->add_option("--distance-scale", tr.cfg.distance_scale, "Multiplier on distances inside the loss softmax");
  t->add_option("--weight-decay", tr.cfg.weight_decay, "L2 penalty on convolution weights");
  t->add_option("--sets", tr.cfg.batch.n_sets, "Sets per batch");
  t->add_option("--set-size", tr.cfg.batch.set_size, "Patches per set");
  t->add_option("--patch", tr.cfg.batch.patch, "Patch side");
  t->add_option("--position-modulus", tr.cfg.batch.position_modulus, "Patch positions are multiples of this");
  t->add_option("--models-per-batch", tr.cfg.batch.models_per_batch, "Models drawn per batch (0: independent per set)");
  t->add_option("--validate-every", tr.cfg.validate_every, "Validation interval in iterations");
  t->add_option("--validation-batches", tr.cfg.validation_batches, "Fixed validation batches");

  EstimateArgs est;
  auto* e = app.add_subcommand("estimate", "Estimate per-device reference fingerprints");
  e->add_option("--manifest", est.manifest, "Dataset manifest")->required();
  e->add_option("--method", est.method, "noiseprint or prnu");
  e->add_option("--weights", est.weights, "Network weights (noiseprint)");
  e->add_option("--n-ref", est.n_ref, "Reference images per device");
  e->add_option("--device", est.devices, "Devices to estimate (default: all with references)");
  e->add_option("--out", est.out, "Output directory");
  e->add_option("--wiener-noise-var", est.wiener.noise_var, "Wiener noise variance (prnu)");
  std::uint64_t estimate_seed = 0;
  e->add_option("--seed", estimate_seed, "Accepted for uniformity; estimation is deterministic");

  LocalizeArgs loc;
  auto* l = app.add_subcommand("localize", "Compute forgery heatmaps against a reference");
  l->add_option("--reference", loc.reference, "Reference file for every image");
  l->add_option("--references", loc.references, "Directory written by estimate; picks each image's device");
  l->add_option("--image", loc.images, "Test images");
  l->add_option("--manifest", loc.manifest, "Localize every forged-test image of this dataset");
  l->add_option("--weights", loc.weights, "Network weights (noiseprint references)");
  l->add_option("--out", loc.out, "Output directory");
  add_window(l, loc.window);
  l->add_option("--threshold", loc.threshold, "Also write decision masks (heat > threshold)");
  l->add_option("--wiener-noise-var", loc.wiener.noise_var, "Wiener noise variance (prnu)");
  std::uint64_t localize_seed = 0;
  l->add_option("--seed", localize_seed, "Accepted for uniformity; localization is deterministic");

  EvaluateArgs ev;
  auto* v = app.add_subcommand("evaluate", "Pixel-level metrics for a heatmap directory");
  v->add_option("--manifest", ev.manifest, "Dataset manifest with ground-truth masks")->required();
  v->add_option("--heatmaps", ev.heatmaps, "Directory written by localize");
  v->add_option("--out", ev.out, "Report file");
  v->add_option("--roc-points", ev.roc_points, "Maximum ROC points written per cell")->check(CLI::Range(2, 1 << 30));
  std::uint64_t eval_seed = 0;
  v->add_option("--seed", eval_seed, "Accepted for uniformity; evaluation is deterministic");

  BenchArgs be;
  auto* b = app.add_subcommand("bench", "Reference-count sweep for both methods");
  b->add_option("--manifest", be.manifest, "Dataset manifest")->required();
  b->add_option("--weights", be.weights, "Network weights (needed for noiseprint)");
  b->add_option("--methods", be.methods, "Methods to run");
  b->add_option("--n-refs", be.n_refs, "Reference counts");
  b->add_option("--out", be.out, "Report file");
  b->add_option("--roc-png", be.roc_png, "Also plot the ROC curves here");
  b->add_option("--roc-points", be.roc_points, "Maximum ROC points written per cell")->check(CLI::Range(2, 1 << 30));
  add_window(b, be.cfg.window);
  b->add_option("--wiener-noise-var", be.cfg.wiener.noise_var, "Wiener noise variance (prnu)");
  std::uint64_t bench_seed = 0;
  b->add_option("--seed", bench_seed, "Accepted for uniformity; the sweep is deterministic");

  RenderArgs re;
  auto* r = app.add_subcommand("render", "Render a report's ROC curves or a heatmap to PNG");
  r->add_option("--report", re.report, "Report file");
  r->add_option("--heatmap", re.heatmap, "Heatmap float plane");
  r->add_option("--out", re.out, "Output PNG (default derived from the input name)");
  r->add_option("--lo", re.lo, "Heatmap value mapped to the bottom of the palette");
  r->add_option("--hi", re.hi, "Heatmap value mapped to the top of the palette");
  std::uint64_t render_seed = 0;
  r->add_option("--seed", render_seed, "Accepted for uniformity; rendering is deterministic");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: usage: " << single_line(e.what()) << '\n';
    return usage;
  }

  try {
    if (*s) return cmd_simulate(sim);
    if (*p) return cmd_pretrain(pre);
    if (*t) return cmd_train(tr);
    if (*e) return cmd_estimate(est);
    if (*l) return cmd_localize(loc);
    if (*v) return cmd_evaluate(ev);
    if (*b) return cmd_bench(be);
    if (*r) return cmd_render(re);
  } catch (const invalid_input& ex) {
    std::cerr << "error: invalid_input: " << single_line(ex.what()) << '\n';
    return bad_input;
  } catch (const format_error& ex) {
    std::cerr << "error: format_error: " << single_line(ex.what()) << '\n';
    return bad_file;
  } catch (const std::exception& ex) {
    std::cerr << "error: failure: " << single_line(ex.what()) << '\n';
    return failure;
  }
  return usage;
}
