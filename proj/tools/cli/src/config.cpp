#include "config.hpp"

#include "schema.hpp"

namespace thz::cli {

namespace sc = schema;

namespace {

json parse_text(const std::string& text) {
  try {
    json j = json::parse(text);
    sc::require_object(j, "");
    return j;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("/: invalid JSON: ") + e.what());
  }
}

std::vector<std::string> string_list(const json& j, const std::string& ptr, const char* key) {
  std::vector<std::string> out;
  if (!j.contains(key)) return out;
  const auto& v = j.at(key);
  if (!v.is_array()) sc::fail(sc::child(ptr, key), "expected an array of strings");
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!v[i].is_string()) sc::fail(sc::child(ptr, key) + "/" + std::to_string(i), "expected a string");
    out.push_back(v[i].get<std::string>());
  }
  return out;
}

Precision parse_precision(const json& j, bool deterministic) {
  const auto p = sc::one_of(j, "", "precision", "f32", {"f32", "f64"});
  if (deterministic) return Precision::kF64;
  return p == "f64" ? Precision::kF64 : Precision::kF32;
}

const char* precision_name(Precision p) { return p == Precision::kF64 ? "f64" : "f32"; }

std::uint64_t resolve_seed(const json& j, const Overrides& ov) {
  return ov.seed ? *ov.seed : sc::unsigned_integer(j, "", "seed", 0);
}

std::string resolve_out(const json& j, const Overrides& ov, const std::string& fallback) {
  return ov.out ? *ov.out : sc::string(j, "", "out", fallback);
}

phantom::DatasetConfig parse_dataset(const json& j, const std::string& ptr) {
  sc::allow_keys(j, ptr, {"objects", "angles", "psf", "noise", "pulse", "material", "bands_thz"});
  phantom::DatasetConfig cfg;
  if (!j.contains("objects")) sc::fail(sc::child(ptr, "objects"), "required key is missing");
  const auto& objs = j.at("objects");
  const std::string optr = sc::child(ptr, "objects");
  if (!objs.is_array() || objs.empty()) sc::fail(optr, "expected a non-empty array");
  for (std::size_t i = 0; i < objs.size(); ++i) {
    const std::string p = optr + "/" + std::to_string(i);
    sc::allow_keys(objs[i], p, {"id", "shape"});
    phantom::ObjectSpec spec;
    spec.id = sc::required_string(objs[i], p, "id");
    if (spec.id.empty() || spec.id.find('/') != std::string::npos || spec.id == "." || spec.id == "..") {
      sc::fail(sc::child(p, "id"), "must be a non-empty plain name");
    }
    for (const auto& prev : cfg.objects) {
      if (prev.id == spec.id) sc::fail(sc::child(p, "id"), "duplicate object id '" + spec.id + "'");
    }
    if (!objs[i].contains("shape")) sc::fail(sc::child(p, "shape"), "required key is missing");
    spec.shape = phantom::parse_shape_spec(objs[i].at("shape").dump(), sc::child(p, "shape"));
    cfg.objects.push_back(std::move(spec));
  }
  if (j.contains("angles")) {
    const auto& a = j.at("angles");
    const std::string p = sc::child(ptr, "angles");
    sc::allow_keys(a, p, {"count", "start_deg", "end_deg"});
    const auto count = sc::integer(a, p, "count", static_cast<std::int64_t>(cfg.angles.count));
    if (count < 1) sc::fail(sc::child(p, "count"), "must be >= 1");
    cfg.angles.count = static_cast<std::size_t>(count);
    cfg.angles.start_deg = sc::number(a, p, "start_deg", cfg.angles.start_deg);
    cfg.angles.end_deg = sc::number(a, p, "end_deg", cfg.angles.end_deg);
    if (!(cfg.angles.end_deg > cfg.angles.start_deg)) sc::fail(sc::child(p, "end_deg"), "must exceed start_deg");
  }
  if (j.contains("psf")) {
    const auto& a = j.at("psf");
    const std::string p = sc::child(ptr, "psf");
    sc::allow_keys(a, p, {"beam_min_mm", "k_blur", "scan_step_mm"});
    cfg.psf.beam_min_mm = sc::number(a, p, "beam_min_mm", cfg.psf.beam_min_mm);
    cfg.psf.k_blur = sc::number(a, p, "k_blur", cfg.psf.k_blur);
    cfg.psf.scan_step_mm = sc::number(a, p, "scan_step_mm", cfg.psf.scan_step_mm);
    if (cfg.psf.beam_min_mm < 0) sc::fail(sc::child(p, "beam_min_mm"), "must be >= 0");
    if (cfg.psf.k_blur < 0) sc::fail(sc::child(p, "k_blur"), "must be >= 0");
    if (!(cfg.psf.scan_step_mm > 0)) sc::fail(sc::child(p, "scan_step_mm"), "must be > 0");
  }
  if (j.contains("noise")) {
    const auto& a = j.at("noise");
    const std::string p = sc::child(ptr, "noise");
    sc::allow_keys(a, p, {"enabled", "snr_db"});
    cfg.noise.enabled = sc::boolean(a, p, "enabled", cfg.noise.enabled);
    cfg.noise.snr_db = sc::number(a, p, "snr_db", cfg.noise.snr_db);
  }
  if (j.contains("pulse")) {
    const auto& a = j.at("pulse");
    const std::string p = sc::child(ptr, "pulse");
    sc::allow_keys(a, p, {"length", "dt_ps", "t0_ps", "fwhm_ps"});
    const auto len = sc::integer(a, p, "length", static_cast<std::int64_t>(cfg.pulse.length));
    if (len < 16) sc::fail(sc::child(p, "length"), "must be >= 16");
    cfg.pulse.length = static_cast<std::size_t>(len);
    cfg.pulse.dt_ps = sc::number(a, p, "dt_ps", cfg.pulse.dt_ps);
    cfg.pulse.t0_ps = sc::number(a, p, "t0_ps", cfg.pulse.t0_ps);
    cfg.pulse.fwhm_ps = sc::number(a, p, "fwhm_ps", cfg.pulse.fwhm_ps);
    if (!(cfg.pulse.dt_ps > 0)) sc::fail(sc::child(p, "dt_ps"), "must be > 0");
    if (!(cfg.pulse.fwhm_ps > 0)) sc::fail(sc::child(p, "fwhm_ps"), "must be > 0");
  }
  if (j.contains("material")) {
    const auto& m = j.at("material");
    const std::string p = sc::child(ptr, "material");
    if (m.is_string()) {
      if (m != "default") sc::fail(p, "expected \"default\" or a material table");
    } else {
      try {
        cfg.material = signal::MaterialProfile::from_json(m.dump());
      } catch (const std::exception& e) {
        sc::fail(p, e.what());
      }
    }
  }
  if (j.contains("bands_thz")) {
    const auto& b = j.at("bands_thz");
    const std::string p = sc::child(ptr, "bands_thz");
    if (!b.is_array()) sc::fail(p, "expected an array of frequencies");
    std::vector<double> f;
    for (std::size_t i = 0; i < b.size(); ++i) {
      if (!b[i].is_number()) sc::fail(p + "/" + std::to_string(i), "expected a number");
      f.push_back(b[i].get<double>());
    }
    try {
      cfg.bands = signal::BandSet(f);
    } catch (const std::exception& e) {
      sc::fail(p, e.what());
    }
  }
  return cfg;
}

json dataset_echo(const phantom::DatasetConfig& cfg) {
  json j;
  json objs = json::array();
  for (const auto& o : cfg.objects) objs.push_back({{"id", o.id}, {"shape", json::parse(phantom::shape_spec_to_json(o.shape))}});
  j["objects"] = objs;
  j["angles"] = {{"count", cfg.angles.count}, {"start_deg", cfg.angles.start_deg}, {"end_deg", cfg.angles.end_deg}};
  j["psf"] = {{"beam_min_mm", cfg.psf.beam_min_mm}, {"k_blur", cfg.psf.k_blur}, {"scan_step_mm", cfg.psf.scan_step_mm}};
  j["noise"] = {{"enabled", cfg.noise.enabled}, {"snr_db", cfg.noise.snr_db}};
  j["pulse"] = {{"length", cfg.pulse.length},
                {"dt_ps", cfg.pulse.dt_ps},
                {"t0_ps", cfg.pulse.t0_ps},
                {"fwhm_ps", cfg.pulse.fwhm_ps}};
  j["material"] = json::parse(cfg.material.to_json());
  j["bands_thz"] = cfg.bands.frequencies();
  return j;
}

std::string resolve_preset(const json& j, const Overrides& ov) {
  if (ov.preset) {
    if (*ov.preset != "desk" && *ov.preset != "full") throw ConfigError("--preset: expected desk or full");
    return *ov.preset;
  }
  return sc::one_of(j, "", "preset", "desk", {"desk", "full"});
}

}  // namespace

GenDataConfig parse_gen_data(const std::string& text, const Overrides& ov) {
  const json j = parse_text(text);
  sc::allow_keys(j, "", {"seed", "out", "dataset"});
  GenDataConfig cfg;
  cfg.seed = resolve_seed(j, ov);
  cfg.out = resolve_out(j, ov, cfg.out);
  if (!j.contains("dataset")) sc::fail("/dataset", "required key is missing");
  cfg.dataset = parse_dataset(j.at("dataset"), "/dataset");
  cfg.dataset.seed = cfg.seed;
  cfg.echo = {{"seed", cfg.seed}, {"out", cfg.out}, {"dataset", dataset_echo(cfg.dataset)}};
  return cfg;
}

TrainRunConfig parse_train(const std::string& text, const Overrides& ov, bool deterministic) {
  const json j = parse_text(text);
  sc::allow_keys(j, "", {"seed", "out", "dataset", "preset", "network", "train", "split", "init_checkpoint", "resume",
                         "precision"});
  TrainRunConfig cfg;
  cfg.seed = resolve_seed(j, ov);
  cfg.out = resolve_out(j, ov, cfg.out);
  cfg.dataset = sc::required_string(j, "", "dataset");
  const std::string preset = resolve_preset(j, ov);
  json net = j.contains("network") ? j.at("network") : json::object();
  sc::require_object(net, "/network");
  if (ov.preset || !net.contains("preset")) net["preset"] = preset;
  cfg.network = sarnet::NetworkCfg::from_json(net.dump(), "/network");
  json tr = j.contains("train") ? j.at("train") : json::object();
  sc::require_object(tr, "/train");
  if (tr.contains("seed")) sc::fail("/train/seed", "use the top-level seed");
  tr["seed"] = cfg.seed;
  cfg.train = train::TrainCfg::from_json(tr.dump(), "/train");
  if (j.contains("split")) {
    const auto& s = j.at("split");
    sc::allow_keys(s, "/split", {"mode", "held_out", "period", "val_phase", "skip_phase"});
    cfg.split_mode = sc::one_of(s, "/split", "mode", cfg.split_mode, {"leave_one_out", "interleaved"});
    cfg.held_out = sc::string(s, "/split", "held_out", "");
    cfg.period = static_cast<std::size_t>(sc::unsigned_integer(s, "/split", "period", cfg.period));
    cfg.val_phase = static_cast<std::size_t>(sc::unsigned_integer(s, "/split", "val_phase", cfg.val_phase));
    if (s.contains("skip_phase")) cfg.skip_phase = sc::unsigned_integer(s, "/split", "skip_phase", 0);
    if (cfg.period < 2) sc::fail("/split/period", "must be >= 2");
    if (cfg.val_phase >= cfg.period) sc::fail("/split/val_phase", "must be < period");
    if (cfg.skip_phase && (*cfg.skip_phase >= cfg.period || *cfg.skip_phase == cfg.val_phase)) {
      sc::fail("/split/skip_phase", "must be < period and differ from val_phase");
    }
  }
  cfg.init_checkpoint = sc::string(j, "", "init_checkpoint", "");
  cfg.resume = sc::boolean(j, "", "resume", false);
  cfg.precision = parse_precision(j, deterministic);

  json split = {{"mode", cfg.split_mode}};
  if (cfg.split_mode == "leave_one_out") {
    split["held_out"] = cfg.held_out;
  } else {
    split["period"] = cfg.period;
    split["val_phase"] = cfg.val_phase;
    if (cfg.skip_phase) split["skip_phase"] = *cfg.skip_phase;
  }
  json train_echo = json::parse(cfg.train.to_json());
  train_echo.erase("seed");
  cfg.echo = {{"seed", cfg.seed},
              {"out", cfg.out},
              {"dataset", cfg.dataset},
              {"preset", preset},
              {"network", json::parse(cfg.network.to_json())},
              {"train", train_echo},
              {"split", split},
              {"init_checkpoint", cfg.init_checkpoint},
              {"resume", cfg.resume},
              {"precision", precision_name(cfg.precision)}};
  return cfg;
}

RestoreConfig parse_restore(const std::string& text, const Overrides& ov, bool deterministic) {
  const json j = parse_text(text);
  sc::allow_keys(j, "", {"seed", "out", "dataset", "checkpoint", "mode", "objects", "previews", "precision"});
  RestoreConfig cfg;
  cfg.out = resolve_out(j, ov, cfg.out);
  cfg.dataset = sc::required_string(j, "", "dataset");
  cfg.checkpoint = sc::required_string(j, "", "checkpoint");
  cfg.multiview = sc::one_of(j, "", "mode", "single", {"single", "multiview"}) == "multiview";
  cfg.objects = string_list(j, "", "objects");
  cfg.previews = sc::boolean(j, "", "previews", false);
  cfg.precision = parse_precision(j, deterministic);
  cfg.echo = {{"out", cfg.out},
              {"dataset", cfg.dataset},
              {"checkpoint", cfg.checkpoint},
              {"mode", cfg.multiview ? "multiview" : "single"},
              {"objects", cfg.objects},
              {"previews", cfg.previews},
              {"precision", precision_name(cfg.precision)}};
  return cfg;
}

ReconstructConfig parse_reconstruct(const std::string& text, const Overrides& ov) {
  const json j = parse_text(text);
  sc::allow_keys(j, "", {"seed", "out", "dataset", "source", "views", "method", "filter", "sart", "clamp_nonnegative",
                         "previews", "objects"});
  ReconstructConfig cfg;
  cfg.out = resolve_out(j, ov, cfg.out);
  cfg.dataset = sc::required_string(j, "", "dataset");
  cfg.source = sc::one_of(j, "", "source", cfg.source, {"restored", "gt", "baseline"});
  cfg.views = sc::string(j, "", "views", "");
  if (cfg.source == "restored" && cfg.views.empty()) sc::fail("/views", "required when source is \"restored\"");
  const auto method = sc::one_of(j, "", "method", "fbp", {"fbp", "sart"});
  cfg.recon.method = method == "sart" ? tomo::ReconMethod::kSart : tomo::ReconMethod::kFbp;
  const auto filter = sc::one_of(j, "", "filter", "ramp_rolloff", {"ramp", "ramp_rolloff", "shepp_logan"});
  cfg.recon.filter = filter == "ramp"          ? tomo::FbpFilter::kRamp
                     : filter == "shepp_logan" ? tomo::FbpFilter::kSheppLogan
                                               : tomo::FbpFilter::kRampRolloff;
  if (j.contains("sart")) {
    const auto& s = j.at("sart");
    sc::allow_keys(s, "/sart", {"iterations", "relaxation", "nonnegative"});
    const auto it = sc::integer(s, "/sart", "iterations", cfg.recon.sart.iterations);
    if (it < 1) sc::fail("/sart/iterations", "must be >= 1");
    cfg.recon.sart.iterations = static_cast<int>(it);
    cfg.recon.sart.relaxation = sc::number(s, "/sart", "relaxation", cfg.recon.sart.relaxation);
    if (!(cfg.recon.sart.relaxation > 0.0 && cfg.recon.sart.relaxation <= 1.0)) {
      sc::fail("/sart/relaxation", "must lie in (0, 1]");
    }
    cfg.recon.sart.nonnegative = sc::boolean(s, "/sart", "nonnegative", cfg.recon.sart.nonnegative);
  }
  cfg.recon.clamp_nonnegative = sc::boolean(j, "", "clamp_nonnegative", cfg.recon.clamp_nonnegative);
  cfg.previews = sc::boolean(j, "", "previews", cfg.previews);
  cfg.objects = string_list(j, "", "objects");
  cfg.echo = {{"out", cfg.out},
              {"dataset", cfg.dataset},
              {"source", cfg.source},
              {"views", cfg.views},
              {"method", method},
              {"filter", filter},
              {"sart",
               {{"iterations", cfg.recon.sart.iterations},
                {"relaxation", cfg.recon.sart.relaxation},
                {"nonnegative", cfg.recon.sart.nonnegative}}},
              {"clamp_nonnegative", cfg.recon.clamp_nonnegative},
              {"previews", cfg.previews},
              {"objects", cfg.objects}};
  return cfg;
}

EvaluateConfig parse_evaluate(const std::string& text, const Overrides& ov) {
  const json j = parse_text(text);
  sc::allow_keys(j, "", {"seed", "out", "dataset", "volumes", "restored", "threshold", "tau_mm", "plots", "objects"});
  EvaluateConfig cfg;
  cfg.out = resolve_out(j, ov, cfg.out);
  cfg.dataset = sc::required_string(j, "", "dataset");
  cfg.volumes = sc::string(j, "", "volumes", "");
  cfg.restored = sc::string(j, "", "restored", "");
  if (cfg.volumes.empty() && cfg.restored.empty()) sc::fail("/volumes", "give \"volumes\", \"restored\" or both");
  cfg.threshold = sc::number(j, "", "threshold", cfg.threshold);
  if (!(cfg.threshold > 0.0 && cfg.threshold < 1.0)) sc::fail("/threshold", "must lie in (0, 1)");
  if (j.contains("tau_mm") && !j.at("tau_mm").is_null()) {
    cfg.tau_mm = sc::number(j, "", "tau_mm", 0.0);
    if (!(*cfg.tau_mm > 0.0)) sc::fail("/tau_mm", "must be > 0");
  }
  cfg.plots = sc::boolean(j, "", "plots", cfg.plots);
  cfg.objects = string_list(j, "", "objects");
  cfg.echo = {{"out", cfg.out},
              {"dataset", cfg.dataset},
              {"volumes", cfg.volumes},
              {"restored", cfg.restored},
              {"threshold", cfg.threshold},
              {"tau_mm", cfg.tau_mm ? json(*cfg.tau_mm) : json(nullptr)},
              {"plots", cfg.plots},
              {"objects", cfg.objects}};
  return cfg;
}

}  // namespace thz::cli
