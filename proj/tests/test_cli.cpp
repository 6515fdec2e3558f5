#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "glvm/pipeline.hpp"

using namespace glvm;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

class Cli : public ::testing::Test {
 protected:
  static fs::path dir() { return fs::temp_directory_path() / "glvm_test_cli"; }

  static void SetUpTestSuite() {
    fs::remove_all(dir());
    fs::create_directories(dir());
  }

  static Outcome run(const std::string& args, const std::string& env = "") {
    const auto out = dir() / "stdout.txt", err = dir() / "stderr.txt";
    const std::string cmd = "cd " + dir().string() + " && " + env + " " + GLVM_BIN + " " + args + " >" +
                            out.string() + " 2>" + err.string();
    const int status = std::system(cmd.c_str());
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(out), slurp(err)};
  }

  static std::string path(const std::string& name) { return (dir() / name).string(); }

  /// Small train/test manifests shared by the train, detect and eval tests.
  static void ensure_data() {
    if (fs::exists(dir() / "train" / "manifest.json")) return;
    ASSERT_EQ(run("synth --out train --seed 4 --positives 6 --backgrounds 12").code, 0);
    ASSERT_EQ(run("synth --out test --seed 40 --positives 4 --backgrounds 6").code, 0);
    ASSERT_EQ(run("train --manifest train/manifest.json --family gdpm -n 3 -m 1 --max-outer-iters 2 --out base.json").code, 0);
  }

  static double objective_column_last(const std::string& csv, std::vector<double>* all = nullptr) {
    std::stringstream ss(csv);
    std::string line;
    std::getline(ss, line);
    EXPECT_EQ(line.rfind("stage,iteration,objective,", 0), 0u);
    double last = 0.0;
    while (std::getline(ss, line)) {
      std::stringstream ls(line);
      std::string stage, it, obj;
      std::getline(ls, stage, ',');
      std::getline(ls, it, ',');
      std::getline(ls, obj, ',');
      last = std::stod(obj);
      if (all) all->push_back(last);
    }
    return last;
  }
};

}  // namespace

TEST_F(Cli, SynthDefaultConfigAndDeterminism) {
  ASSERT_EQ(run("synth --out full_a").code, 0);
  ASSERT_EQ(run("synth --out full_b").code, 0);
  const auto m = load_manifest(path("full_a/manifest.json"));
  int pos = 0, bg = 0;
  for (const auto& r : m.images) (r.label > 0 ? pos : bg)++;
  EXPECT_EQ(pos, 60);
  EXPECT_EQ(bg, 500);
  EXPECT_EQ(slurp(path("full_a/manifest.json")), slurp(path("full_b/manifest.json")));
  for (const auto& r : m.images) EXPECT_EQ(slurp(path("full_a/" + r.file)), slurp(path("full_b/" + r.file))) << r.file;
}

TEST_F(Cli, SynthConfigErrorsAreFieldLevel) {
  io_detail::write_text(path("bad_type.json"), R"({"positives": "many"})");
  auto r = run("synth --config bad_type.json --out x");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("field 'positives'"), std::string::npos) << r.err;
  io_detail::write_text(path("bad_key.json"), R"({"positives": 3, "colour": 1})");
  r = run("synth --config bad_key.json --out x");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("unknown field 'colour'"), std::string::npos) << r.err;
  io_detail::write_text(path("bad_json.json"), R"({"positives": )");
  EXPECT_EQ(run("synth --config bad_json.json --out x").code, 2);
  EXPECT_EQ(run("synth --config no_such_file.json --out x").code, 3);
  EXPECT_EQ(run("synth --out x --backgrounds -2").code, 2);
  EXPECT_EQ(run("synth").code, 2);
  EXPECT_EQ(run("frobnicate").code, 2);
}

TEST_F(Cli, FlagsOverrideConfigFile) {
  io_detail::write_text(path("small.json"), R"({"positives": 2, "backgrounds": 3, "seed": 9})");
  ASSERT_EQ(run("synth --config small.json --backgrounds 1 --out small").code, 0);
  const auto m = load_manifest(path("small/manifest.json"));
  EXPECT_EQ(m.images.size(), 3u);
  EXPECT_EQ(synth_config_from(m.synth).seed, 9u);
}

TEST_F(Cli, TrainGdpmBothPartConfigurations) {
  ensure_data();
  for (const auto& [n, m] : {std::pair{4, 0}, std::pair{3, 1}}) {
    const std::string nm = "-n " + std::to_string(n) + " -m " + std::to_string(m);
    const auto r = run("train --manifest train/manifest.json --family gdpm --max-outer-iters 3 " + nm +
                       " --out gdpm_nm.json --trace gdpm_nm.csv");
    ASSERT_EQ(r.code, 0) << nm << r.err;
    std::vector<double> objectives;
    objective_column_last(slurp(path("gdpm_nm.csv")), &objectives);
    ASSERT_GT(objectives.size(), 2u);
    const auto bundle = std::get<GdpmBundle>(load_model(path("gdpm_nm.json")));
    EXPECT_EQ(static_cast<int>(bundle.model.components[0].positive.size()), n);
    EXPECT_EQ(static_cast<int>(bundle.model.components[0].negative.size()), m);
  }
}

TEST_F(Cli, TrainTraceIsMonotoneAndRerunsMatch) {
  ensure_data();
  const std::string args = "train --manifest train/manifest.json --family gdpm -n 3 -m 1 --max-outer-iters 3 --seed 2 ";
  ASSERT_EQ(run(args + "--out r1.json").code, 0);
  ASSERT_EQ(run(args + "--out r2.json", "GLVM_THREADS=2").code, 0);
  std::vector<double> a, b;
  const double last1 = objective_column_last(slurp(path("r1.json.trace.csv")), &a);
  const double last2 = objective_column_last(slurp(path("r2.json.trace.csv")), &b);
  EXPECT_NEAR(last1, last2, 1e-9);
  ASSERT_EQ(a.size(), b.size());
  // the trace holds the root stage then the part stage; each must be non-increasing
  std::stringstream ss(slurp(path("r1.json.trace.csv")));
  std::string line, prev_stage;
  double prev = 0.0;
  std::getline(ss, line);
  while (std::getline(ss, line)) {
    const auto c1 = line.find(','), c2 = line.find(',', c1 + 1), c3 = line.find(',', c2 + 1);
    const std::string stage = line.substr(0, c1);
    const double obj = std::stod(line.substr(c2 + 1, c3 - c2 - 1));
    if (stage == prev_stage) EXPECT_LE(obj, prev + 1e-7) << line;
    prev_stage = stage;
    prev = obj;
  }
  EXPECT_EQ(slurp(path("r1.json")), slurp(path("r2.json")));
}

TEST_F(Cli, TrainLnhtAndValidation) {
  ensure_data();
  const auto r = run("train --manifest train/manifest.json --family lnht --codebook-pos 12 --codebook-neg 6 --out h.json");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(std::holds_alternative<HoughDetector>(load_model(path("h.json"))));
  EXPECT_EQ(run("train --manifest train/manifest.json --family svm --out z.json").code, 2);
  EXPECT_EQ(run("train --manifest nowhere.json --family gdpm --out z.json").code, 3);
  EXPECT_EQ(run("train --manifest train/manifest.json --family gdpm --C -1 --out z.json").code, 2);
}

TEST_F(Cli, DetectMatchesLibraryCallExactly) {
  ensure_data();
  ASSERT_EQ(run("detect --model base.json --manifest test/manifest.json --out d.csv").code, 0);
  std::ifstream is(path("d.csv"));
  const auto from_cli = read_detections_csv(is);
  const auto images = load_images(load_manifest(path("test/manifest.json")));
  const auto from_lib = detect_images(load_model(path("base.json")), images);
  ASSERT_EQ(from_cli.size(), from_lib.size());
  for (std::size_t i = 0; i < from_lib.size(); ++i) {
    EXPECT_EQ(from_cli[i].image, from_lib[i].image);
    EXPECT_EQ(from_cli[i].score, from_lib[i].score);
    EXPECT_EQ(from_cli[i].box, from_lib[i].box);
  }
  ASSERT_EQ(run("detect --model base.json --manifest test/manifest.json --out d3.csv", "GLVM_THREADS=3").code, 0);
  EXPECT_EQ(slurp(path("d.csv")), slurp(path("d3.csv")));
}

TEST_F(Cli, DetectZeroModelIsDeterministic) {
  ensure_data();
  auto b = std::get<GdpmBundle>(load_model(path("base.json")));
  b.model = b.model.with_weights(Vector(b.model.dim(), 0.0));
  save_model(path("zero.json"), b);
  ASSERT_EQ(run("detect --model zero.json --manifest test/manifest.json --out z1.csv").code, 0);
  ASSERT_EQ(run("detect --model zero.json --manifest test/manifest.json --out z2.csv").code, 0);
  EXPECT_EQ(slurp(path("z1.csv")), slurp(path("z2.csv")));
  std::ifstream is(path("z1.csv"));
  for (const auto& d : read_detections_csv(is)) EXPECT_EQ(d.score, 0.0);
}

TEST_F(Cli, DetectFamilyMismatch) {
  ensure_data();
  ASSERT_EQ(run("train --manifest train/manifest.json --family lnht --codebook-pos 12 --codebook-neg 6 --out h2.json").code, 0);
  auto r = run("detect --model h2.json --manifest test/manifest.json --out x.csv --family gdpm");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("hough"), std::string::npos);
  AndOrTree t;
  t.input_rows = t.input_cols = t.input_channels = 1;
  t.root = t.add_terminal({0, 0}, {1.0});
  save_model(path("tree.json"), t);
  EXPECT_EQ(run("detect --model tree.json --manifest test/manifest.json --out x.csv").code, 2);
  EXPECT_EQ(run("detect --model h2.json --manifest test/manifest.json --out hx.csv --scoring nht").code, 0);
  EXPECT_EQ(run("detect --model missing.json --manifest test/manifest.json --out x.csv").code, 3);
}

TEST_F(Cli, EvalPerfectEmptyAndHandComputed) {
  ensure_data();
  const auto m = load_manifest(path("test/manifest.json"));
  std::vector<ScoredBox> perfect;
  for (const auto& r : m.images)
    for (const auto& b : r.boxes) perfect.push_back({r.id, b, 1.0});
  ASSERT_GE(perfect.size(), 3u);
  std::ofstream(path("perfect.csv")) << [&] {
    std::stringstream ss;
    write_detections_csv(ss, perfect);
    return ss.str();
  }();
  auto r = run("eval --detections perfect.csv --manifest test/manifest.json --pr-out pr.csv");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out, "AP 1\n");
  EXPECT_EQ(slurp(path("pr.csv")).rfind("recall,precision,threshold\n", 0), 0u);

  io_detail::write_text(path("empty.csv"), "image,score,x0,y0,x1,y1\n");
  r = run("eval --detections empty.csv --manifest test/manifest.json");
  EXPECT_EQ(r.out, "AP 0\n");

  // three objects, detections ranked TP FP TP FP TP
  ASSERT_EQ(run("synth --out three --seed 41 --positives 3 --backgrounds 1").code, 0);
  std::vector<GroundTruth> gt = ground_truth(load_manifest(path("three/manifest.json")));
  ASSERT_EQ(gt.size(), 3u);
  const Box far{0, 0, 2, 2};
  std::vector<ScoredBox> mixed{{gt[0].image, gt[0].box, 0.9},
                               {gt[0].image, far, 0.8},
                               {gt[1].image, gt[1].box, 0.7},
                               {gt[1].image, far, 0.6},
                               {gt[2].image, gt[2].box, 0.5}};
  std::stringstream ss;
  write_detections_csv(ss, mixed);
  io_detail::write_text(path("mixed.csv"), ss.str());
  // (recall, precision) at the hits: (1/3, 1) (2/3, 2/3) (1, 3/5)
  // recall levels 0-0.3 -> 1, 0.4-0.6 -> 2/3, 0.7-1.0 -> 3/5
  const double expected = 8.4 / 11.0;
  r = run("eval --detections mixed.csv --manifest three/manifest.json");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NEAR(std::stod(r.out.substr(3)), expected, 1e-12) << r.out;
}

TEST_F(Cli, EvalErrors) {
  ensure_data();
  io_detail::write_text(path("broken.csv"), "image,score,x0,y0,x1,y1\npos_0,1,0,0,4,4\npos_0,oops,0,0,4,4\n");
  auto r = run("eval --detections broken.csv --manifest test/manifest.json");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("broken.csv:3:"), std::string::npos) << r.err;
  io_detail::write_text(path("stranger.csv"), "image,score,x0,y0,x1,y1\nnot_an_image,1,0,0,4,4\n");
  EXPECT_EQ(run("eval --detections stranger.csv --manifest test/manifest.json").code, 2);
  EXPECT_EQ(run("eval --detections absent.csv --manifest test/manifest.json").code, 3);
  EXPECT_EQ(run("eval --detections broken.csv --manifest test/manifest.json --iou 2").code, 2);
}

TEST_F(Cli, InspectAndThreadsEnv) {
  ensure_data();
  auto r = run("inspect train/manifest.json");
  ASSERT_EQ(r.code, 0);
  EXPECT_EQ(Json::parse(r.out)["positives"], 6);
  EXPECT_EQ(run("inspect train/manifest.json", "GLVM_THREADS=zero").code, 2);
  EXPECT_EQ(run("inspect nothing.json").code, 3);
}
