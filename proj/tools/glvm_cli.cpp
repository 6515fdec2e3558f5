#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>

#include "CLI11.hpp"

#include "glvm/andor.hpp"
#include "glvm/io.hpp"
#include "glvm/pipeline.hpp"

using namespace glvm;

namespace {

CLI::App* verb(CLI::App& app, const char* name, const char* help, std::string& config) {
  CLI::App* s = app.add_subcommand(name, help);
  s->add_option("--config", config, "JSON object of option values (keys as long flag names, '_' or '-'); "
                                    "flags given on the command line win");
  return s;
}

/// Fills options not given on the command line from a JSON object, through
/// the same conversion and validation as the flags.
void apply_config(CLI::App* sub, const std::string& path) {
  if (path.empty()) return;
  const Json j = io_detail::read_json(path);
  if (!j.is_object()) throw MisuseError(path + ": expected a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    std::string name = it.key();
    std::replace(name.begin(), name.end(), '_', '-');
    CLI::Option* opt = name == "config" ? nullptr : sub->get_option_no_throw("--" + name);
    if (!opt) throw MisuseError(path + ": unknown field '" + it.key() + "'");
    if (opt->count() > 0) continue;
    const Json& v = it.value();
    if (!v.is_string() && !v.is_number() && !v.is_boolean())
      throw MisuseError(path + ": field '" + it.key() + "': expected a number, string or boolean");
    opt->clear();
    opt->add_result(v.is_string() ? v.get<std::string>() : v.dump());
    try {
      opt->run_callback();
    } catch (const CLI::ParseError& e) {
      throw MisuseError(path + ": field '" + it.key() + "': " + e.what());
    }
  }
}

void write_file(const std::string& path, const std::function<void(std::ostream&)>& fill) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  fill(os);
  os.flush();
  if (!os) throw IoError("failed writing '" + path + "'");
}

struct TrainFlags {
  double C = 0.1;
  double margin = 1.0;
  int max_outer_iters = 5;
  int min_outer_iters = 1;
  double inner_tol = 1e-3;
  std::uint64_t seed = 0;

  void add(CLI::App* s) {
    s->add_option("--C", C, "SVM regularization constant")->capture_default_str()->check(CLI::PositiveNumber);
    s->add_option("--margin", margin, "hinge margin")->capture_default_str();
    s->add_option("--max-outer-iters", max_outer_iters, "bound alternations")->capture_default_str();
    s->add_option("--min-outer-iters", min_outer_iters, "alternations before the stopping test")->capture_default_str();
    s->add_option("--inner-tol", inner_tol, "relative duality gap of the inner solver")->capture_default_str();
    s->add_option("--seed", seed, "training seed")->capture_default_str();
  }
  TrainConfig config() const {
    TrainConfig t;
    t.C = C;
    t.margin = margin;
    t.max_outer_iters = max_outer_iters;
    t.min_outer_iters = min_outer_iters;
    t.inner.tol = inner_tol;
    t.seed = seed;
    t.validate();
    return t;
  }
};

void write_trace(std::ostream& os, const std::vector<std::pair<std::string, const TrainTrace*>>& stages) {
  bool header = true;
  for (const auto& [stage, trace] : stages) {
    std::stringstream ss;
    trace->write_csv(ss);
    std::string line;
    bool first = true;
    while (std::getline(ss, line)) {
      if (first) {
        first = false;
        if (header) os << "stage," << line << '\n';
        header = false;
        continue;
      }
      os << stage << ',' << line << '\n';
    }
  }
}

int report_traces(const std::vector<std::pair<std::string, const TrainTrace*>>& stages) {
  int status = 0;
  for (const auto& [stage, trace] : stages) {
    for (const auto& w : trace->warnings) std::cerr << "warning: " << w << '\n';
    if (!trace->records.empty())
      std::cerr << stage << ": objective " << std::setprecision(12) << trace->records.front().objective << " -> "
                << trace->records.back().objective << " in " << trace->records.size() << " records\n";
    if (const int k = trace->first_increase(); k >= 0) {
      std::cerr << "invariant violation: " << stage << " objective increased at record " << k << '\n';
      status = 1;
    }
  }
  return status;
}

template <class E>
E parse_enum(const std::string& s, const std::map<std::string, E>& names, const char* what) {
  const auto it = names.find(s);
  if (it == names.end()) throw MisuseError(std::string("unknown ") + what + " '" + s + "'");
  return it->second;
}

Json inspect_model(const Json& j) {
  const AnyModel m = model_from_json(j);
  Json out = {{"format", "glvm-model"}, {"version", j["version"]}, {"family", family_name(m)},
              {"weights", j["weights"].size()}, {"blocks", j["layout"].size()}};
  if (const auto* g = std::get_if<GdpmBundle>(&m)) {
    Json comps = Json::array();
    for (const auto& c : g->model.components)
      comps.push_back({{"root", {c.root.rows, c.root.cols, c.root.channels}},
                       {"positive_parts", c.positive.size()},
                       {"negative_parts", c.negative.size()}});
    out["components"] = comps;
    out["window"] = g->model.window;
  } else if (const auto* h = std::get_if<HoughDetector>(&m)) {
    out["codebook_positive"] = h->positive.size();
    out["codebook_negative"] = h->negative.size();
    out["groups_positive"] = h->lnht.groups_pos;
    out["groups_negative"] = h->lnht.groups_neg;
  } else {
    const auto& t = std::get<AndOrTree>(m);
    std::map<std::string, int> kinds;
    for (const auto& n : t.nodes) ++kinds[to_string(n.kind)];
    out["nodes"] = kinds;
    out["root"] = t.root;
  }
  return out;
}

Json inspect_manifest(const std::string& path) {
  const Manifest m = load_manifest(path);
  std::size_t pos = 0, boxes = 0, confusers = 0;
  for (const auto& r : m.images) {
    pos += r.label > 0;
    boxes += r.boxes.size();
    confusers += r.confusers.size();
  }
  Json out = {{"format", "glvm-manifest"}, {"images", m.images.size()}, {"positives", pos},
              {"backgrounds", m.images.size() - pos}, {"boxes", boxes}, {"confusers", confusers}};
  if (!m.synth.is_null()) out["synth"] = to_json(synth_config_from(m.synth, path + ": synth"));
  return out;
}

int run(int argc, char** argv) {
  CLI::App app{"Generalized latent variable models: synthetic data, training, detection and evaluation"};
  app.require_subcommand(1);
  int threads = 1;
  app.add_option("--threads", threads, "worker threads")
      ->envname("GLVM_THREADS")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);

  // synth
  SynthConfig sc;
  std::string synth_out;
  std::string synth_config;
  auto* synth = verb(app, "synth", "generate a cross-vs-T dataset (PGM images + manifest.json)", synth_config);
  synth->add_option("--out", synth_out, "output directory")->required();
  synth->add_option("--seed", sc.seed)->capture_default_str();
  synth->add_option("--height", sc.height)->capture_default_str();
  synth->add_option("--width", sc.width)->capture_default_str();
  synth->add_option("--cell", sc.cell)->capture_default_str();
  synth->add_option("--positives", sc.positives)->capture_default_str();
  synth->add_option("--backgrounds", sc.backgrounds)->capture_default_str();
  synth->add_option("--arm", sc.arm)->capture_default_str();
  synth->add_option("--thickness", sc.thickness)->capture_default_str();
  synth->add_option("--cap-length", sc.cap_length)->capture_default_str();
  synth->add_option("--cap-jitter", sc.cap_jitter)->capture_default_str();
  synth->add_option("--confuser-rate", sc.confuser_rate)->capture_default_str();
  synth->add_option("--max-clutter", sc.max_clutter)->capture_default_str();
  synth->add_option("--noise", sc.noise)->capture_default_str();
  synth->add_option("--position-jitter", sc.position_jitter)->capture_default_str();
  synth->add_option("--rotation-jitter", sc.rotation_jitter)->capture_default_str();
  synth->add_option("--scale-min", sc.scale_min)->capture_default_str();
  synth->add_option("--scale-max", sc.scale_max)->capture_default_str();
  synth->add_option("--background-level", sc.background_level)->capture_default_str();
  synth->add_option("--foreground-level", sc.foreground_level)->capture_default_str();

  // train
  std::string train_manifest, family, model_out, trace_out, init = "energy", donor_path;
  TrainFlags tf;
  StagedConfig staged;
  staged.root_rows = 6;
  staged.root_cols = 6;
  int donor_parts = 4;
  HoughConfig hc;
  std::string train_config;
  auto* train = verb(app, "train", "train a gdpm or lnht model", train_config);
  train->add_option("--manifest", train_manifest, "training manifest")->required();
  train->add_option("--family", family, "model family")->required()->check(CLI::IsMember({"gdpm", "lnht"}));
  train->add_option("--out", model_out, "model file")->required();
  train->add_option("--trace", trace_out, "trace CSV (default: <out>.trace.csv)");
  tf.add(train);
  train->add_option("--components", staged.components, "gdpm mixture components")->capture_default_str();
  train->add_option("--root-rows", staged.root_rows, "gdpm root filter rows (cells)")->capture_default_str();
  train->add_option("--root-cols", staged.root_cols, "gdpm root filter cols (cells)")->capture_default_str();
  train->add_option("--positive-parts,-n", staged.positive_parts, "gdpm positive parts")->capture_default_str();
  train->add_option("--negative-parts,-m", staged.negative_parts, "gdpm negative parts")->capture_default_str();
  train->add_option("--part-rows", staged.part_dims.rows, "gdpm part rows (root cells)")->capture_default_str();
  train->add_option("--part-cols", staged.part_dims.cols, "gdpm part cols (root cells)")->capture_default_str();
  train->add_option("--init", init, "negative part initialization")
      ->capture_default_str()
      ->check(CLI::IsMember({"energy", "donor"}));
  train->add_option("--donor", donor_path, "donor gdpm model (default: trained on the manifest's confusers)");
  train->add_option("--donor-parts", donor_parts, "positive parts of a donor trained here")->capture_default_str();
  train->add_option("--tau", staged.tau, "gdpm foreground overlap for latent boxes")->capture_default_str();
  train->add_option("--overlap", staged.part_stage.overlap, "gdpm background overlap")->capture_default_str();
  train->add_option("--cell", staged.pyramid.cell, "feature cell size (pixels)")->capture_default_str();
  train->add_option("--levels", staged.pyramid.levels, "gdpm pyramid levels")->capture_default_str();
  train->add_option("--codebook-pos", hc.codebook_pos, "lnht positive codebook size")->capture_default_str();
  train->add_option("--codebook-neg", hc.codebook_neg, "lnht negative codebook size")->capture_default_str();
  train->add_option("--groups-pos", hc.groups_pos, "lnht positive groups Z+")->capture_default_str();
  train->add_option("--groups-neg", hc.groups_neg, "lnht negative groups Z-")->capture_default_str();
  train->add_option("--peaks", hc.peaks, "lnht candidates per image")->capture_default_str();
  train->add_option("--patch", hc.patch, "lnht patch side (cells)")->capture_default_str();

  // detect
  std::string det_model, det_manifest, det_out, det_family, scoring = "lnht";
  DetectOptions dopt;
  std::string det_config;
  auto* det = verb(app, "detect", "run a model over a manifest's images", det_config);
  det->add_option("--model", det_model, "model file")->required();
  det->add_option("--manifest", det_manifest, "manifest")->required();
  det->add_option("--out", det_out, "detections CSV")->required();
  det->add_option("--family", det_family, "expected model family")->check(CLI::IsMember({"gdpm", "lnht", "hough"}));
  det->add_option("--scoring", scoring, "hough scoring")->capture_default_str()->check(
      CLI::IsMember({"ht", "nht", "lnht"}));
  det->add_option("--nms", dopt.nms_iou, "gdpm non-maximum suppression IoU")->capture_default_str();

  // eval
  std::string ev_dets, ev_manifest, ev_pr, ap_mode = "eleven-point";
  double iou = 0.5;
  std::string ev_config;
  auto* ev = verb(app, "eval", "average precision of detections against a manifest", ev_config);
  ev->add_option("--detections", ev_dets, "detections CSV")->required();
  ev->add_option("--manifest", ev_manifest, "manifest with ground truth")->required();
  ev->add_option("--iou", iou, "match threshold")->capture_default_str()->check(CLI::Range(0.0, 1.0));
  ev->add_option("--ap-mode", ap_mode, "AP definition")->capture_default_str()->check(
      CLI::IsMember({"eleven-point", "continuous"}));
  ev->add_option("--pr-out", ev_pr, "PR curve CSV (default: <detections>.pr.csv)");

  // inspect
  std::string ins_path;
  auto* ins = app.add_subcommand("inspect", "summarize a model or manifest file");
  ins->add_option("path", ins_path, "model or manifest JSON")->required();

  if (const char* env = std::getenv("GLVM_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (*env == '\0' || *end != '\0' || v < 1 || v > 4096)
      throw MisuseError(std::string("GLVM_THREADS must be a positive integer, got '") + env + "'");
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }

  if (synth->parsed()) {
    apply_config(synth, synth_config);
    sc.validate();
    const auto path = write_dataset(synth_out, generate_dataset(sc), to_json(sc));
    std::cout << path << '\n';
    return 0;
  }

  if (train->parsed()) {
    apply_config(train, train_config);
    const Manifest m = load_manifest(train_manifest);
    const auto images = load_images(m);
    if (trace_out.empty()) trace_out = model_out + ".trace.csv";
    const TrainConfig tc = tf.config();
    if (family == "gdpm") {
      staged.negative_init = parse_enum<NegativeInit>(init, {{"energy", NegativeInit::energy}, {"donor", NegativeInit::donor}},
                                                      "initialization");
      staged.root_stage.train = tc;
      staged.part_stage.train = tc;
      staged.root_stage.threads = staged.part_stage.threads = threads;
      staged.root_stage.overlap = staged.part_stage.overlap;
      std::optional<GdpmModel> donor;
      if (staged.negative_init == NegativeInit::donor && staged.negative_parts > 0) {
        if (!donor_path.empty()) {
          const AnyModel d = load_model(donor_path);
          if (!std::holds_alternative<GdpmBundle>(d))
            throw MisuseError("donor '" + donor_path + "' is a " + family_name(d) + " model, not gdpm");
          donor = std::get<GdpmBundle>(d).model;
        } else {
          donor = train_donor(images, staged, std::max(donor_parts, staged.negative_parts));
        }
      }
      const auto r = train_gdpm_staged(images, staged, donor ? &*donor : nullptr);
      save_model(model_out, GdpmBundle{r.model, staged.pyramid});
      std::vector<std::pair<std::string, const TrainTrace*>> stages{{"root", &r.root_trace}};
      if (!r.part_trace.records.empty()) stages.push_back({"parts", &r.part_trace});
      write_file(trace_out, [&](std::ostream& os) { write_trace(os, stages); });
      return report_traces(stages);
    }
    hc.train = tc;
    hc.cell = staged.pyramid.cell;
    hc.seed = tc.seed;
    TrainTrace trace;
    const HoughDetector d = train_hough(images, hc, &trace);
    save_model(model_out, d);
    const std::vector<std::pair<std::string, const TrainTrace*>> stages{{"lnht", &trace}};
    write_file(trace_out, [&](std::ostream& os) { write_trace(os, stages); });
    return report_traces(stages);
  }

  if (det->parsed()) {
    apply_config(det, det_config);
    const AnyModel model = load_model(det_model);
    const std::string fam = family_name(model);
    if (!det_family.empty() && (det_family == "lnht" ? "hough" : det_family) != fam)
      throw MisuseError("model '" + det_model + "' is a " + fam + " model, expected " + det_family);
    dopt.scoring = parse_enum<HoughScoring>(
        scoring, {{"ht", HoughScoring::ht}, {"nht", HoughScoring::nht}, {"lnht", HoughScoring::lnht}}, "scoring");
    if (fam == "andor") throw MisuseError("model '" + det_model + "' is an andor model, which has no detector");
    const auto images = load_images(load_manifest(det_manifest));
    const auto dets = detect_images(model, images, dopt, threads);
    write_file(det_out, [&](std::ostream& os) { write_detections_csv(os, dets); });
    std::cerr << dets.size() << " detections on " << images.size() << " images\n";
    return 0;
  }

  if (ev->parsed()) {
    apply_config(ev, ev_config);
    const Manifest m = load_manifest(ev_manifest);
    std::ifstream is(ev_dets);
    if (!is) throw IoError("cannot open '" + ev_dets + "'");
    const auto dets = read_detections_csv(is, ev_dets);
    std::set<std::string> ids;
    for (const auto& r : m.images) ids.insert(r.id);
    for (std::size_t i = 0; i < dets.size(); ++i)
      if (!ids.contains(dets[i].image))
        throw MisuseError(ev_dets + ": detection for image '" + dets[i].image + "' which the manifest does not list");
    const auto curve = pr_curve(match_detections(dets, ground_truth(m), iou));
    const double ap = average_precision(curve, ap_mode == "continuous" ? ApMode::continuous : ApMode::eleven_point);
    if (ev_pr.empty()) ev_pr = ev_dets + ".pr.csv";
    write_file(ev_pr, [&](std::ostream& os) { write_pr_csv(os, curve); });
    std::cout << "AP " << std::setprecision(17) << ap << '\n';
    return 0;
  }

  if (ins->parsed()) {
    const Json j = io_detail::read_json(ins_path);
    if (!j.is_object() || !j.contains("format")) throw MisuseError("'" + ins_path + "' has no format field");
    if (j["format"] == "glvm-model") std::cout << inspect_model(j).dump(2) << '\n';
    else if (j["format"] == "glvm-manifest") std::cout << inspect_manifest(ins_path).dump(2) << '\n';
    else throw MisuseError("'" + ins_path + "' is neither a glvm model nor a manifest");
    return 0;
  }
  return 2;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const InvariantViolation& e) {
    std::cerr << "invariant violation: " << e.what() << '\n';
    return 1;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return 1;
  } catch (const MisuseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const ResourceError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return 1;
  }
}
