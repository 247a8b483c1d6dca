#include "commands.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>

#include "plots.hpp"
#include "thz/io.hpp"
#include "thz/metrics.hpp"

namespace thz::cli {

namespace fs = std::filesystem;

namespace {

void echo_config(const fs::path& out, const json& echo) {
  fs::create_directories(out);
  io::write_text(out / "config.resolved.json", echo.dump(2) + "\n");
}

bool selected(const std::vector<std::string>& wanted, const std::string& id) {
  return wanted.empty() || std::find(wanted.begin(), wanted.end(), id) != wanted.end();
}

void check_selection(const std::vector<std::string>& wanted, const phantom::DatasetManifest& m) {
  for (const auto& id : wanted) {
    const bool known = std::any_of(m.objects.begin(), m.objects.end(), [&](const auto& o) { return o.id == id; });
    if (!known) throw ConfigError("/objects: unknown object id '" + id + "'");
  }
}

void require_dataset(const std::string& dir) {
  if (!fs::exists(fs::path(dir) / "manifest.json")) throw MissingPrerequisite("no dataset at '" + dir + "'");
}

json read_json(const fs::path& file) {
  try {
    return json::parse(io::read_text(file));
  } catch (const json::exception& e) {
    throw DataInconsistency(file.string() + ": " + e.what());
  }
}

Image image_from(std::vector<double> values, std::size_t rows, std::size_t cols) {
  Image img(rows, cols);
  img.data() = std::move(values);
  return img;
}

template <typename T>
Image tensor_plane(const nn::Tensor<T>& t, std::size_t n) {
  Image img(t.shape.h, t.shape.w);
  const T* p = t.sample(n);
  for (std::size_t i = 0; i < img.size(); ++i) img.data()[i] = static_cast<double>(p[i]);
  return img;
}

// Ground-truth occupancy written next to the views by gen-data.
Grid3 load_phantom_grid(const fs::path& obj_dir) {
  if (!fs::exists(obj_dir / "phantom.json") || !fs::exists(obj_dir / "phantom.f32")) {
    throw MissingPrerequisite("no ground-truth phantom in " + obj_dir.string());
  }
  const json meta = read_json(obj_dir / "phantom.json");
  std::vector<std::size_t> shape;
  try {
    shape = meta.at("shape").get<std::vector<std::size_t>>();
  } catch (const json::exception& e) {
    throw DataInconsistency(obj_dir.string() + "/phantom.json: " + e.what());
  }
  if (shape.size() != 3) throw DataInconsistency(obj_dir.string() + "/phantom.json: shape must have 3 entries");
  Grid3 g(shape[0], shape[1], shape[2]);
  g.data() = io::read_f32(obj_dir / "phantom.f32", g.size());
  return g;
}

// Restored views of one object as written by `restore`, checked against the
// dataset manifest.
std::vector<Image> load_restored(const fs::path& dir, const phantom::ManifestObject& mo) {
  const fs::path obj_dir = dir / mo.id;
  if (!fs::exists(obj_dir)) throw MissingPrerequisite("no restored views for '" + mo.id + "' in " + dir.string());
  std::size_t on_disk = 0;
  for (const auto& e : fs::directory_iterator(obj_dir)) on_disk += e.is_directory();
  if (on_disk != mo.angles_deg.size()) {
    throw DataInconsistency(obj_dir.string() + ": " + std::to_string(on_disk) + " restored views, manifest lists " +
                            std::to_string(mo.angles_deg.size()));
  }
  std::vector<Image> views;
  for (std::size_t k = 0; k < mo.angles_deg.size(); ++k) {
    const fs::path vdir = obj_dir / phantom::view_dir_name(k);
    if (!fs::exists(vdir / "meta.json")) throw DataInconsistency("missing restored view " + vdir.string());
    const json meta = read_json(vdir / "meta.json");
    double theta = 0.0;
    std::vector<std::size_t> shape;
    try {
      theta = meta.at("theta_deg").get<double>();
      shape = meta.at("shape").get<std::vector<std::size_t>>();
    } catch (const json::exception& e) {
      throw DataInconsistency(vdir.string() + "/meta.json: " + e.what());
    }
    if (std::abs(theta - mo.angles_deg[k]) > 1e-9) {
      throw DataInconsistency(vdir.string() + ": angle " + std::to_string(theta) + " disagrees with manifest " +
                              std::to_string(mo.angles_deg[k]));
    }
    if (shape.size() != 2 || shape[0] != mo.image_shape[0] || shape[1] != mo.image_shape[1]) {
      throw DataInconsistency(vdir.string() + ": image shape disagrees with manifest");
    }
    views.push_back(image_from(io::read_f32(vdir / "restored.f32", shape[0] * shape[1]), shape[0], shape[1]));
  }
  return views;
}

template <typename T>
void train_impl(const TrainRunConfig& cfg, const train::TrainData& data, const train::Split& split, std::ostream& out) {
  sarnet::Network<T> net(cfg.network);
  if (cfg.train.stage == 2) {
    if (cfg.init_checkpoint.empty() || !fs::exists(cfg.init_checkpoint)) {
      throw MissingPrerequisite("stage 2 needs a stage-1 checkpoint (init_checkpoint)");
    }
    if (!(sarnet::load_network_cfg(cfg.init_checkpoint) == cfg.network)) {
      throw DataInconsistency("init_checkpoint was trained with a different network config");
    }
    sarnet::load_weights(cfg.init_checkpoint, net);
  } else if (!cfg.init_checkpoint.empty()) {
    if (!fs::exists(cfg.init_checkpoint)) throw MissingPrerequisite("init_checkpoint '" + cfg.init_checkpoint + "' not found");
    sarnet::load_weights(cfg.init_checkpoint, net);
  } else {
    net.initialize(cfg.seed);
  }
  const auto result = train::train_stage(data, split, net, cfg.train, cfg.out, cfg.resume);
  std::vector<double> epochs, losses, psnrs;
  for (const auto& line : result.log_lines) {
    const json rec = json::parse(line);
    epochs.push_back(rec.at("epoch").get<double>());
    losses.push_back(rec.at("train_loss").get<double>());
    psnrs.push_back(rec.at("val_psnr").is_number() ? rec.at("val_psnr").get<double>() : std::nan(""));
  }
  plots::write_line_plot(fs::path(cfg.out) / "train_loss.svg", "Training loss", "epoch", "MSE",
                         {{"train", epochs, losses}});
  plots::write_line_plot(fs::path(cfg.out) / "val_psnr.svg", "Validation PSNR", "epoch", "dB", {{"val", epochs, psnrs}});
  out << "epochs run: " << result.epochs_run << ", best val PSNR " << result.best_val_psnr << " dB at epoch "
      << result.best_epoch << (result.stopped_early ? " (stopped early)" : "") << "\n";
}

template <typename T>
std::size_t restore_impl(const RestoreConfig& cfg, const phantom::DatasetManifest& manifest, std::ostream& out) {
  sarnet::Network<T> net(sarnet::load_network_cfg(cfg.checkpoint));
  sarnet::load_weights(cfg.checkpoint, net);
  const fs::path dataset(cfg.dataset), out_dir(cfg.out);
  std::size_t written = 0;
  json summary = json::array();
  for (const auto& mo : manifest.objects) {
    if (!selected(cfg.objects, mo.id)) continue;
    std::vector<phantom::ViewRecord> views;
    std::vector<sarnet::ViewInput<T>> inputs;
    for (std::size_t k = 0; k < mo.angles_deg.size(); ++k) {
      views.push_back(phantom::load_view(dataset / mo.id / phantom::view_dir_name(k)));
      inputs.push_back(sarnet::make_input<T>(views.back(), manifest.reference));
    }
    std::vector<Image> restored;
    if (cfg.multiview) {
      for (const auto& t : sarnet::restore_sequence_multiview<T>(net, inputs)) restored.push_back(tensor_plane(t, 0));
    } else {
      constexpr std::size_t kBatch = 8;
      for (std::size_t s = 0; s < inputs.size(); s += kBatch) {
        const std::size_t e = std::min(inputs.size(), s + kBatch);
        const auto batch = sarnet::stack_inputs<T>(std::span(inputs).subspan(s, e - s));
        const auto t = sarnet::restore_single(net, batch);
        for (std::size_t n = 0; n < e - s; ++n) restored.push_back(tensor_plane(t, n));
      }
    }
    for (std::size_t k = 0; k < restored.size(); ++k) {
      const fs::path vdir = out_dir / mo.id / phantom::view_dir_name(k);
      fs::create_directories(vdir);
      Image mm = restored[k];
      for (double& v : mm.data()) v *= mo.gt_scale_mm;
      json meta = {{"object_id", mo.id},
                   {"view_index", k},
                   {"theta_deg", views[k].theta_deg},
                   {"shape", {mm.rows(), mm.cols()}},
                   {"dtype", "float32"},
                   {"units", "mm"},
                   {"gt_scale_mm", mo.gt_scale_mm},
                   {"mode", cfg.multiview ? "multiview" : "single"}};
      io::write_text(vdir / "meta.json", meta.dump(2) + "\n");
      io::write_f32(vdir / "restored.f32", mm.data());
      if (cfg.previews) io::write_pgm(vdir / "restored.pgm", mm, 0.0, mo.gt_scale_mm);
      ++written;
    }
    summary.push_back({{"id", mo.id}, {"views", restored.size()}});
    out << mo.id << ": " << restored.size() << " views restored\n";
  }
  io::write_text(out_dir / "restored.json",
                 json{{"checkpoint", cfg.checkpoint}, {"dataset", cfg.dataset}, {"objects", summary}}.dump(2) + "\n");
  return written;
}

std::string csv_number(double v) {
  if (std::isnan(v)) return "";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

json json_number(double v) {
  if (std::isnan(v)) return nullptr;
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return v;
}

}  // namespace

int cmd_gen_data(const GenDataConfig& cfg, std::ostream& out) {
  echo_config(cfg.out, cfg.echo);
  const auto manifest = phantom::build_dataset(cfg.dataset, cfg.out);
  out << phantom::manifest_to_json(manifest);
  return kOk;
}

int cmd_train(TrainRunConfig cfg, std::ostream& out) {
  require_dataset(cfg.dataset);
  const auto data = train::load_train_data(cfg.dataset);
  train::Split split;
  if (cfg.split_mode == "leave_one_out") {
    if (data.objects.size() < 2) throw ConfigError("/split: leave-one-out needs at least two objects");
    if (cfg.held_out.empty()) cfg.held_out = data.objects.back().id;
    cfg.echo["split"]["held_out"] = cfg.held_out;
    split = train::leave_one_out(data, cfg.held_out);
  } else {
    split = cfg.skip_phase ? train::interleaved(data, cfg.period, cfg.val_phase, *cfg.skip_phase)
                           : train::interleaved(data, cfg.period, cfg.val_phase);
  }
  echo_config(cfg.out, cfg.echo);
  if (cfg.precision == Precision::kF64) train_impl<double>(cfg, data, split, out);
  else train_impl<float>(cfg, data, split, out);
  return kOk;
}

int cmd_restore(const RestoreConfig& cfg, std::ostream& out) {
  require_dataset(cfg.dataset);
  if (!fs::exists(cfg.checkpoint)) throw MissingPrerequisite("no checkpoint at '" + cfg.checkpoint + "'");
  const auto manifest = phantom::load_manifest(cfg.dataset);
  check_selection(cfg.objects, manifest);
  echo_config(cfg.out, cfg.echo);
  if (cfg.precision == Precision::kF64) restore_impl<double>(cfg, manifest, out);
  else restore_impl<float>(cfg, manifest, out);
  return kOk;
}

int cmd_reconstruct(const ReconstructConfig& cfg, std::ostream& out) {
  require_dataset(cfg.dataset);
  const auto manifest = phantom::load_manifest(cfg.dataset);
  check_selection(cfg.objects, manifest);
  if (cfg.source == "restored" && !fs::exists(cfg.views)) {
    throw MissingPrerequisite("no restored views at '" + cfg.views + "'");
  }
  echo_config(cfg.out, cfg.echo);
  json log = json::object();
  for (const auto& mo : manifest.objects) {
    if (!selected(cfg.objects, mo.id)) continue;
    std::vector<Image> views;
    if (cfg.source == "restored") {
      views = load_restored(cfg.views, mo);
    } else {
      for (std::size_t k = 0; k < mo.angles_deg.size(); ++k) {
        const auto v = phantom::load_view(fs::path(cfg.dataset) / mo.id / phantom::view_dir_name(k));
        if (std::abs(v.theta_deg - mo.angles_deg[k]) > 1e-9) {
          throw DataInconsistency(mo.id + " view " + std::to_string(k) + ": angle disagrees with manifest");
        }
        if (cfg.source == "gt") {
          views.push_back(v.gt_thickness);
        } else {
          Image b = train::baseline_image(v, manifest.reference);
          for (double& x : b.data()) x *= mo.gt_scale_mm;
          views.push_back(std::move(b));
        }
      }
    }
    const auto recon = tomo::reconstruct_volume(views, mo.angles_deg, manifest.voxel_size_mm, cfg.recon);
    tomo::export_volume(fs::path(cfg.out) / mo.id, recon.volume, cfg.previews);
    json entry = {{"views", views.size()},
                  {"shape", {recon.volume.data.depth(), recon.volume.data.rows(), recon.volume.data.cols()}}};
    if (!recon.residuals.empty()) {
      entry["sart_residuals"] = recon.residuals;
      std::vector<double> it, mean(recon.residuals.front().size(), 0.0);
      for (const auto& r : recon.residuals) {
        for (std::size_t i = 0; i < r.size() && i < mean.size(); ++i) mean[i] += r[i] / recon.residuals.size();
      }
      for (std::size_t i = 0; i < mean.size(); ++i) it.push_back(static_cast<double>(i));
      plots::write_line_plot(fs::path(cfg.out) / mo.id / "sart_residual.svg", mo.id + ": SART residual", "sweep",
                             "mean slice residual", {{mo.id, it, mean}});
    }
    log[mo.id] = entry;
    out << mo.id << ": volume " << recon.volume.data.depth() << "x" << recon.volume.data.rows() << "x"
        << recon.volume.data.cols() << "\n";
  }
  io::write_text(fs::path(cfg.out) / "reconstruct_log.json", log.dump(2) + "\n");
  return kOk;
}

int cmd_evaluate(const EvaluateConfig& cfg, std::ostream& out) {
  require_dataset(cfg.dataset);
  const auto manifest = phantom::load_manifest(cfg.dataset);
  check_selection(cfg.objects, manifest);
  if (!cfg.volumes.empty() && !fs::exists(cfg.volumes)) throw MissingPrerequisite("no volumes at '" + cfg.volumes + "'");
  if (!cfg.restored.empty() && !fs::exists(cfg.restored)) throw MissingPrerequisite("no restored views at '" + cfg.restored + "'");
  echo_config(cfg.out, cfg.echo);
  const fs::path out_dir(cfg.out);
  json report = json::object();
  std::string csv = "object,psnr_mean,mse3d,iou,fscore,chamfer\n";
  std::vector<std::string> ids;
  std::vector<double> col_psnr, col_iou, col_f;
  std::vector<plots::Series> psnr_curves;
  for (const auto& mo : manifest.objects) {
    if (!selected(cfg.objects, mo.id)) continue;
    const fs::path obj_dir = fs::path(cfg.dataset) / mo.id;
    double psnr_mean = std::nan(""), mse3d = std::nan(""), iou = std::nan(""), fscore = std::nan(""),
           chamfer = std::nan("");
    if (!cfg.restored.empty()) {
      const auto restored = load_restored(cfg.restored, mo);
      plots::Series curve{mo.id, {}, {}};
      double acc = 0.0;
      for (std::size_t k = 0; k < restored.size(); ++k) {
        const auto view = phantom::load_view(obj_dir / phantom::view_dir_name(k));
        Image pred = restored[k];
        for (double& v : pred.data()) v = std::clamp(v / mo.gt_scale_mm, 0.0, 1.0);
        const double p = metrics::psnr(pred, train::normalized_target(view, mo.gt_scale_mm));
        acc += p;
        curve.x.push_back(mo.angles_deg[k]);
        curve.y.push_back(p);
      }
      psnr_mean = acc / static_cast<double>(restored.size());
      psnr_curves.push_back(std::move(curve));
    }
    if (!cfg.volumes.empty()) {
      const Grid3 gt = load_phantom_grid(obj_dir);
      const auto vol = tomo::load_volume(fs::path(cfg.volumes) / mo.id);
      if (!vol.data.same_shape(gt)) throw DataInconsistency(mo.id + ": volume shape differs from the ground truth");
      const Grid3 norm = metrics::minmax_normalize(vol.data);
      mse3d = metrics::cross_section_mse(norm, gt);
      iou = metrics::iou(norm, gt, cfg.threshold);
      const auto pc = metrics::volume_to_pointcloud(norm, cfg.threshold, manifest.voxel_size_mm);
      const auto pc_gt = metrics::volume_to_pointcloud(gt, cfg.threshold, manifest.voxel_size_mm);
      if (pc_gt.empty()) throw DataInconsistency(mo.id + ": ground-truth phantom is empty");
      if (pc.empty()) {
        fscore = 0.0;
        chamfer = std::numeric_limits<double>::infinity();
      } else {
        fscore = metrics::fscore(pc, pc_gt, cfg.tau_mm ? *cfg.tau_mm : metrics::default_tau(pc_gt));
        chamfer = metrics::chamfer(pc, pc_gt);
      }
    }
    report[mo.id] = {{"psnr_mean", json_number(psnr_mean)},
                     {"mse3d", json_number(mse3d)},
                     {"iou", json_number(iou)},
                     {"fscore", json_number(fscore)},
                     {"chamfer", json_number(chamfer)}};
    csv += mo.id + "," + csv_number(psnr_mean) + "," + csv_number(mse3d) + "," + csv_number(iou) + "," +
           csv_number(fscore) + "," + csv_number(chamfer) + "\n";
    ids.push_back(mo.id);
    col_psnr.push_back(psnr_mean);
    col_iou.push_back(iou);
    col_f.push_back(fscore);
    out << mo.id << ": psnr " << csv_number(psnr_mean) << " mse3d " << csv_number(mse3d) << " iou " << csv_number(iou)
        << " fscore " << csv_number(fscore) << " chamfer " << csv_number(chamfer) << "\n";
  }
  io::write_text(out_dir / "report.json", report.dump(2) + "\n");
  io::write_text(out_dir / "report.csv", csv);
  if (cfg.plots) {
    if (!psnr_curves.empty()) {
      plots::write_line_plot(out_dir / "psnr_per_view.svg", "Restored view PSNR", "angle (deg)", "dB", psnr_curves);
      plots::write_bar_chart(out_dir / "psnr_mean.svg", "Mean PSNR (dB)", ids, {{"psnr", {}, col_psnr}});
    }
    if (!cfg.volumes.empty()) {
      plots::write_bar_chart(out_dir / "shape_metrics.svg", "Shape metrics", ids,
                             {{"IoU", {}, col_iou}, {"F-score", {}, col_f}});
    }
  }
  return kOk;
}

}  // namespace thz::cli
