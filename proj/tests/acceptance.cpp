// Acceptance checks. One PASS/FAIL line per criterion; exit status is the
// number of failures.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "dcav/audio.hpp"
#include "dcav/gradcheck.hpp"
#include "dcav/model.hpp"
#include "dcav/pipeline.hpp"

using namespace dcav;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;
using T = Tensor<double>;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

T random_tensor(Shape shape, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 0.5);
  T t(std::move(shape));
  for (auto& x : t.storage()) x = n(rng);
  return t;
}

// ---- 1: gradient suite -----------------------------------------------------

Outcome gradient_suite() {
  const auto t0 = Clock::now();
  const auto report = gradcheck::run_suite(7, 1e-4);
  const double secs = seconds_since(t0);
  double worst = 0;
  std::size_t failed = 0;
  for (const auto& r : report.results) {
    worst = std::max(worst, r.rel_error);
    if (!r.passed) ++failed;
  }
  return {report.passed() && secs < 120.0,
          std::to_string(report.results.size()) + " checks, " + std::to_string(failed) + " failed, worst rel err " +
              fmt("%.2e", worst) + " (tol 1e-4), " + fmt("%.1f", secs) + " s (limit 120 s)"};
}

// ---- 2: MUTAN against a triple loop ----------------------------------------

Outcome mutan_contraction() {
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<std::size_t> dim(1, 6);
  double worst = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t k = dim(rng), dt = dim(rng), d_o = dim(rng), k_out = dim(rng);
    ParameterStore<double> store;
    model::MutanParams<double> p;
    p.w_video = &store.create("wv", random_tensor({k, dt}, rng));
    p.w_audio = &store.create("wa", random_tensor({k, dt}, rng));
    p.core = &store.create("core", random_tensor({dt, dt, d_o}, rng));
    p.w_out = &store.create("wo", random_tensor({d_o, k_out}, rng));
    const T v = random_tensor({1, k}, rng), a = random_tensor({1, k}, rng);
    Tape<double> tape;
    const T got = model::mutan_fusion(tape, tape.constant(v), tape.constant(a), p).value();

    std::vector<double> vv(dt), aa(dt), c(d_o, 0.0);
    for (std::size_t j = 0; j < dt; ++j) {
      double sv = 0, sa = 0;
      for (std::size_t i = 0; i < k; ++i) {
        sv += v[i] * p.w_video->value().at(i, j);
        sa += a[i] * p.w_audio->value().at(i, j);
      }
      vv[j] = std::tanh(sv);
      aa[j] = std::tanh(sa);
    }
    for (std::size_t x = 0; x < dt; ++x) {
      for (std::size_t y = 0; y < dt; ++y) {
        for (std::size_t o = 0; o < d_o; ++o) c[o] += p.core->value().at(x, y, o) * vv[x] * aa[y];
      }
    }
    for (std::size_t j = 0; j < k_out; ++j) {
      double want = 0;
      for (std::size_t o = 0; o < d_o; ++o) want += c[o] * p.w_out->value().at(o, j);
      worst = std::max(worst, std::abs(got[j] - want));
    }
  }
  return {worst <= 1e-6, "100 instances, max abs diff " + fmt("%.2e", worst) + " (tol 1e-6)"};
}

// ---- 3: soft clip against hard clip ----------------------------------------

Outcome soft_clip() {
  // Grid points are t_i = (i+0.5)/T, so no boundary can be further than half
  // a frame from one. Boundaries sit on frame edges i/T, the furthest
  // position, and at least two frames from either end.
  const std::size_t frames = 64, k = 8;
  const double w = 1.0 / frames;
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<std::size_t> edge(2, frames - 2);
  double worst = 0;
  for (int trial = 0; trial < 50; ++trial) {
    std::size_t i0 = edge(rng), i1 = edge(rng);
    while (i1 == i0) i1 = edge(rng);
    if (i0 > i1) std::swap(i0, i1);
    const double s = i0 * w, e = i1 * w;
    const T outputs = random_tensor({frames, k}, rng);
    Tape<double> tape;
    const T got =
        model::clip_context(tape, tape.constant(T::row({(s + e) / 2, e - s})), tape.constant(outputs), 1000.0)
            .value();
    std::vector<double> hard(k, 0.0);
    std::size_t n = 0;
    for (std::size_t i = 0; i < frames; ++i) {
      const double t = (i + 0.5) * w;
      if (t < s || t > e) continue;
      ++n;
      for (std::size_t j = 0; j < k; ++j) hard[j] += outputs.at(i, j);
    }
    for (std::size_t j = 0; j < k; ++j) worst = std::max(worst, std::abs(got[j] - hard[j] / n));
  }
  return {worst <= 1e-2, "50 segments, max per-entry diff " + fmt("%.2e", worst) + " (tol 1e-2)"};
}

// ---- 4: metric unit suite --------------------------------------------------

Outcome metric_suite(const fs::path& work) {
  const fs::path log = work / "metric_suite.log";
  const std::string cmd = std::string(DCAV_METRIC_SUITE) + " >" + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  const std::string out = slurp(log);
  const auto pos = out.rfind("[  PASSED  ]");
  std::string summary = pos == std::string::npos ? "see " + log.string() : out.substr(pos, out.find('\n', pos) - pos);
  return {status == 0, "metric unit suite (examples + dual-implementation oracles at 1e-6): " + summary};
}

// ---- pipeline helpers ------------------------------------------------------

pipeline::RunConfig config(const std::string& command, const pipeline::KeyValues& kv) {
  return pipeline::RunConfig(command, {}, kv);
}

void prepare_data(const pipeline::KeyValues& kv) {
  const auto data_dir = kv.at("data-dir");
  pipeline::KeyValues at_data = kv;
  at_data["out-dir"] = data_dir;
  pipeline::run(config("synth-data", at_data));
  pipeline::run(config("extract-audio", at_data));
  pipeline::run(config("build-vocab", at_data));
}

// ---- 5: pretraining accuracy -----------------------------------------------

Outcome pretrain_accuracy(const fs::path& work) {
  const fs::path dir = work / "pretrain";
  fs::remove_all(dir);
  pipeline::KeyValues kv{{"data-dir", (dir / "data").string()}, {"seed", "7"}};
  prepare_data(kv);
  kv["out-dir"] = dir.string();
  kv["vocab"] = (dir / "data" / "vocab.json").string();
  kv["pretrain-epochs"] = "200";
  kv["lr-new"] = "0.5";
  kv["target-accuracy"] = "0.95";
  kv["eval-every"] = "10";
  const auto t0 = Clock::now();
  const auto result = pipeline::pretrain(config("pretrain", kv));
  const double secs = seconds_since(t0);
  return {result.final_accuracy >= 0.95 && result.epochs_run <= 200 && secs < 600.0,
          "teacher-forced accuracy " + fmt("%.4f", result.final_accuracy) + " (need >= 0.95) after " +
              std::to_string(result.epochs_run) + " epochs (limit 200), " + fmt("%.0f", secs) +
              " s (limit 600 s)"};
}

// ---- 6, 7: fusion comparison on audio-distinguishable events ---------------

struct FusionRun {
  pipeline::FusionComparison table;
  double ceiling = 0;
  bool report_written = false;
  std::string error;
};

pipeline::KeyValues fusion_settings(const fs::path& dir) {
  return {{"out-dir", dir.string()},
          {"data-dir", (dir / "data").string()},
          {"seed", "7"},
          {"video-cue", "shared"},
          {"synth-videos", "200"},
          {"synth-val-videos", "50"},
          {"audio-feature", "cqt"},
          {"hidden", "128"},
          {"embed", "128"},
          {"audio-proj", "128"},
          {"mutan-rank", "64"},
          {"mutan-out-rank", "64"},
          {"mutan-out", "128"},
          {"pretrain-epochs", "200"},
          {"target-accuracy", "0.95"},
          {"eval-every", "10"},
          {"train-epochs", "10"},
          {"lr-pretrained", "0.01"}};
}

FusionRun fusion_comparison(const fs::path& work) {
  FusionRun out;
  const fs::path dir = work / "fusion";
  fs::remove_all(dir);
  const pipeline::RunConfig rc = config("compare-fusion", fusion_settings(dir));
  try {
    out.ceiling = data::matched_filter_miou(data::generate_synthetic(pipeline::synthetic_spec(rc)), data::Split::val);
    out.table = pipeline::compare_fusion(rc);
    out.report_written = fs::exists(dir / "fusion_comparison.md") && fs::exists(dir / "fusion_comparison.json");
  } catch (const std::exception& e) {
    out.error = e.what();
  }
  return out;
}

double row_miou(const pipeline::FusionComparison& t, model::Modality m, model::Fusion f) {
  for (const auto& r : t.rows) {
    if (r.modality == m && (m == model::Modality::video || r.fusion == f)) return 100 * r.final_report.miou;
  }
  return -1;
}

Outcome final_miou(const FusionRun& run) {
  if (!run.error.empty()) return {false, "error: " + run.error};
  const double miou = row_miou(run.table, model::Modality::both, model::Fusion::mutan);
  return {miou >= 50.0 && run.ceiling >= 0.5,
          "MUTAN final mIoU " + fmt("%.2f", miou) + " (need >= 50.00); matched-filter ceiling " +
              fmt("%.2f", 100 * run.ceiling)};
}

Outcome fusion_margin(const FusionRun& run) {
  if (!run.error.empty()) return {false, "error: " + run.error};
  const double video = row_miou(run.table, model::Modality::video, model::Fusion::mutan);
  const double mixture = row_miou(run.table, model::Modality::both, model::Fusion::mixture);
  const double context = row_miou(run.table, model::Modality::both, model::Fusion::context);
  const double mutan = row_miou(run.table, model::Modality::both, model::Fusion::mutan);
  const double margin = mutan - video;
  return {run.report_written && run.table.rows.size() == 4 && margin >= 2.0,
          "mIoU video-only " + fmt("%.2f", video) + ", mixture " + fmt("%.2f", mixture) + ", context " +
              fmt("%.2f", context) + ", MUTAN " + fmt("%.2f", mutan) + "; margin " + fmt("%+.2f", margin) +
              " (need >= +2.00)"};
}

// ---- 8: CQT pitch ----------------------------------------------------------

std::size_t tone_argmax(double hz) {
  audio::Waveform w;
  w.samples.resize(16000);
  for (std::size_t i = 0; i < w.samples.size(); ++i) w.samples[i] = 0.5 * std::sin(2 * M_PI * hz * i / 16000.0);
  const auto s = audio::cqt(w);
  std::vector<double> mean(s.frames.cols(), 0.0);
  for (std::size_t t = 0; t < s.frames.rows(); ++t) {
    for (std::size_t b = 0; b < s.frames.cols(); ++b) mean[b] += s.frames.at(t, b);
  }
  return static_cast<std::size_t>(std::max_element(mean.begin(), mean.end()) - mean.begin());
}

Outcome cqt_pitch() {
  const std::size_t a = tone_argmax(440), b = tone_argmax(880);
  return {a == 33 && b == a + 12,
          "440 Hz -> bin " + std::to_string(a) + " (want 33), 880 Hz -> bin " + std::to_string(b) + " (want " +
              std::to_string(a + 12) + ")"};
}

// ---- 9: reproducibility ----------------------------------------------------

std::string full_pipeline(const fs::path& dir) {
  fs::remove_all(dir);
  const pipeline::KeyValues small{{"out-dir", dir.string()},
                                  {"data-dir", (dir / "data").string()},
                                  {"seed", "7"},
                                  {"synth-videos", "6"},
                                  {"synth-val-videos", "3"},
                                  {"hidden", "32"},
                                  {"embed", "32"},
                                  {"audio-proj", "32"},
                                  {"mutan-rank", "16"},
                                  {"mutan-out-rank", "16"},
                                  {"mutan-out", "32"},
                                  {"pretrain-epochs", "10"},
                                  {"train-epochs", "3"},
                                  {"batch-size", "2"}};
  prepare_data(small);
  pipeline::KeyValues kv = small;
  kv["vocab"] = (dir / "data" / "vocab.json").string();
  for (const char* cmd : {"pretrain", "train", "infer", "evaluate"}) pipeline::run(config(cmd, kv));
  return slurp(dir / "report.json") + slurp(dir / "predictions_val.json");
}

Outcome reproducible(const fs::path& work) {
  const std::string a = full_pipeline(work / "repro_a");
  const std::string b = full_pipeline(work / "repro_b");
  const bool same = !a.empty() && a == b;
  return {same, same ? "two seeded runs give byte-identical reports and predictions" : "reports differ"};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance checks"};
  std::string work_dir = "acceptance_work";
  std::vector<int> only;
  app.add_option("--work-dir", work_dir, "scratch directory");
  app.add_option("--only", only, "criteria to run (default: all)")->delimiter(',');
  CLI11_PARSE(app, argc, argv);
  spdlog::set_level(spdlog::level::warn);

  const fs::path work = fs::absolute(work_dir);
  fs::create_directories(work);
  const std::set<int> selected(only.begin(), only.end());
  const auto wanted = [&](int n) { return selected.empty() || selected.count(n) != 0; };

  int failures = 0;
  const auto report = [&](int n, const char* title, const std::function<Outcome()>& check) {
    if (!wanted(n)) return;
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    if (!o.pass) ++failures;
    std::printf("%s %d %s: %s [%.0f s]\n", o.pass ? "PASS" : "FAIL", n, title, o.detail.c_str(), seconds_since(t0));
    std::fflush(stdout);
  };

  report(1, "gradient suite", gradient_suite);
  report(2, "MUTAN contraction", mutan_contraction);
  report(3, "soft clip", soft_clip);
  report(4, "metric suite", [&] { return metric_suite(work); });
  report(5, "pretrain accuracy", [&] { return pretrain_accuracy(work); });
  FusionRun fusion;
  if (wanted(6) || wanted(7)) fusion = fusion_comparison(work);
  report(6, "final mIoU", [&] { return final_miou(fusion); });
  report(7, "fusion comparison", [&] { return fusion_margin(fusion); });
  report(8, "CQT pitch", cqt_pitch);
  report(9, "reproducibility", [&] { return reproducible(work); });
  return failures;
}
