#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <regex>
#include <sstream>

#include "focalfuse/cli/commands.hpp"

using namespace focalfuse;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out;  // stdout and stderr interleaved
};

Run run(const std::string& args) {
  const std::string cmd = std::string(FOCALFUSE_CLI_PATH) + " " + args + " 2>&1";
  Run r;
  FILE* p = popen(cmd.c_str(), "r");
  if (p == nullptr) return r;
  char buf[4096];
  std::size_t n = 0;
  while ((n = fread(buf, 1, sizeof buf, p)) > 0) r.out.append(buf, n);
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

fs::path scratch(const std::string& name) {
  const auto d = fs::temp_directory_path() / ("focalfuse_cli_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

std::string slurp(const fs::path& p) { return data::detail::read_file(p); }

/// A small, fast dataset: 32x16x16 volumes with two foreground classes.
fs::path small_spec(const fs::path& dir) {
  data::PhantomSpec spec;
  spec.extents = {32, 16, 16};
  spec.num_classes = 3;
  spec.seed = 7;
  const auto p = dir / "spec.txt";
  data::detail::write_file(p, spec.to_text());
  return p;
}

fs::path small_config(const fs::path& dir) {
  arch::ModelConfig cfg;
  cfg.base_channels = 2;
  cfg.num_classes = 3;
  const auto p = dir / "model.txt";
  cfg.save(p);
  return p;
}

Index total_of(const std::string& text) {
  std::smatch m;
  const std::regex re(R"(\n\s+total\s+(\d+)\n)");
  if (!std::regex_search(text, m, re)) return -1;
  return std::stoll(m[1]);
}

}  // namespace

TEST(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(run("").code, 2);
  EXPECT_EQ(run("frobnicate").code, 2);
  EXPECT_EQ(run("describe --no-such-flag").code, 2);
  EXPECT_EQ(run("describe --variant unet").code, 2);
  EXPECT_EQ(run("describe --extents 32 32 20").code, 2);
  EXPECT_EQ(run("--help").code, 0);
  const auto r = run("train --data /nonexistent --out " + scratch("nodata").string());
  EXPECT_EQ(r.code, 2);
  EXPECT_EQ(std::count(r.out.begin(), r.out.end(), '\n'), 1) << r.out;
}

TEST(Cli, GenDataIsDeterministic) {
  const auto dir = scratch("gen");
  const auto a = dir / "a";
  const auto b = dir / "b";
  ASSERT_EQ(run("gen-data --count 4 --seed 7 --out " + a.string()).code, 0);
  ASSERT_EQ(run("gen-data --count 4 --seed 7 --out " + b.string()).code, 0);
  const auto files = cli::list_volumes(a);
  ASSERT_EQ(files.size(), 4u);
  EXPECT_EQ(files[0].filename(), "phantom_0000.mvol");
  for (const auto& f : files) EXPECT_EQ(slurp(f), slurp(b / f.filename()));
  const std::string manifest = slurp(a / "manifest.tsv");
  EXPECT_EQ(manifest, slurp(b / "manifest.tsv"));
  EXPECT_EQ(std::count(manifest.begin(), manifest.end(), '\n'), 5);
  EXPECT_NE(manifest.find(cli::file_digest(files[2])), std::string::npos);

  ASSERT_EQ(run("gen-data --count 0 --out " + (dir / "empty").string()).code, 0);
  EXPECT_EQ(slurp(dir / "empty" / "manifest.tsv"), "id\tseed\tfile\tsha256\n");

  data::detail::write_file(dir / "bad.txt", "radius_max = 0.9\n");
  const auto bad = run("gen-data --spec " + (dir / "bad.txt").string() + " --out " + (dir / "c").string());
  EXPECT_EQ(bad.code, 2);
  EXPECT_NE(bad.out.find("radius_max"), std::string::npos);
}

TEST(Cli, DescribeIsStableAndComparesVariants) {
  const auto focal = run("describe --variant focal_fuse");
  const auto msf = run("describe --variant msf3d");
  ASSERT_EQ(focal.code, 0);
  ASSERT_EQ(msf.code, 0);
  EXPECT_EQ(focal.out, run("describe --variant focal_fuse").out);
  EXPECT_GT(total_of(focal.out), 0);
  EXPECT_GT(total_of(msf.out), 0);
  EXPECT_NE(total_of(focal.out), total_of(msf.out));
  EXPECT_NE(focal.out.find("stream 1: 3 6 global"), std::string::npos);

  const auto wide = run("describe --base-channels 32 --per-tensor");
  const auto base = run("describe --per-tensor");
  const auto count = [](const std::string& text, const std::string& name) {
    std::smatch m;
    const std::regex re("\\n\\s+" + std::regex_replace(name, std::regex("\\."), "\\.") + R"(\s+\S+\s+(\d+)\n)");
    return std::regex_search(text, m, re) ? std::stoll(m[1]) : -1;
  };
  EXPECT_EQ(count(wide.out, "encoder.block2.conv2.weight"), 4 * count(base.out, "encoder.block2.conv2.weight"));
  EXPECT_EQ(count(wide.out, "decoder.stage1.conv.weight"), 4 * count(base.out, "decoder.stage1.conv.weight"));
  EXPECT_EQ(count(wide.out, "encoder.block2.conv2.bias"), 2 * count(base.out, "encoder.block2.conv2.bias"));
}

TEST(Cli, PipelineTrainInferEval) {
  const auto dir = scratch("pipeline");
  const auto data_dir = dir / "data";
  ASSERT_EQ(run("gen-data --count 2 --spec " + small_spec(dir).string() + " --out " + data_dir.string()).code, 0);
  const auto cfg = small_config(dir);
  const std::string train_args =
      "--threads 2 train --config " + cfg.string() + " --data " + data_dir.string() + " --epochs 2 --seed 3 --half-cycle 2";
  const auto r1 = run(train_args + " --out " + (dir / "run1").string());
  ASSERT_EQ(r1.code, 0) << r1.out;
  ASSERT_EQ(run(train_args + " --out " + (dir / "run2").string()).code, 0);
  for (const char* f : {"train_log.tsv", "val_log.tsv", "model.ckpt", "last.ckpt", "config.txt"}) {
    EXPECT_EQ(slurp(dir / "run1" / f), slurp(dir / "run2" / f)) << f;
  }
  const std::string log = slurp(dir / "run1" / "train_log.tsv");
  EXPECT_EQ(std::count(log.begin(), log.end(), '\n'), 5);
  EXPECT_EQ(log.substr(0, log.find('\n')), "iteration\tepoch\tsample\tlr\tloss");

  const auto ckpt = (dir / "run1" / "model.ckpt").string();
  ASSERT_EQ(run("infer --checkpoint " + ckpt + " --input " + data_dir.string() + " --out " + (dir / "pred").string()).code, 0);
  const auto one = dir / "one.mvol";
  ASSERT_EQ(run("infer --checkpoint " + ckpt + " --input " + (data_dir / "phantom_0001.mvol").string() + " --out " +
                one.string())
                .code,
            0);
  EXPECT_EQ(cli::file_digest(one), cli::file_digest(dir / "pred" / "phantom_0001.mvol"));
  const auto pred = data::read_volume(one);
  EXPECT_FALSE(pred.has_image());
  for (auto v : pred.labels.values) ASSERT_LT(v, 3);

  const auto ev = run("eval --pred " + (dir / "pred").string() + " --truth " + data_dir.string() + " --out " +
                      (dir / "metrics").string());
  ASSERT_EQ(ev.code, 0) << ev.out;
  EXPECT_EQ(slurp(dir / "metrics" / "metrics.txt"), ev.out);
  const std::string csv = slurp(dir / "metrics" / "metrics.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 1 + 3 * 3);

  const auto self = run("eval --pred " + data_dir.string() + " --truth " + data_dir.string());
  ASSERT_EQ(self.code, 0);
  EXPECT_TRUE(std::regex_search(self.out, std::regex(R"(\nmean\s+1\.0000\s+0\.0000\s+0\.0000\s+1\.0000\s+1\.0000\n)")))
      << self.out;

  // A checkpoint trained on 32x16x16 refuses extents that are not multiples of 16.
  data::VolumeSample odd;
  odd.id = "odd";
  odd.num_classes = 3;
  odd.labels = metrics::LabelVolume({32, 16, 8}, std::vector<std::uint8_t>(4096, 0));
  odd.image.assign(4096, 0.0f);
  data::write_volume(odd, dir / "odd.mvol");
  EXPECT_EQ(run("infer --checkpoint " + ckpt + " --input " + (dir / "odd.mvol").string() + " --out " +
                (dir / "odd_pred.mvol").string())
                .code,
            2);
}

TEST(Cli, EvalReportsTheHandBuiltDiceExample) {
  const auto dir = scratch("eval");
  const auto make = [](const std::string& id, std::vector<std::uint8_t> v) {
    data::VolumeSample s;
    s.id = id;
    s.num_classes = 2;
    s.labels = metrics::LabelVolume({2, 2, 1}, std::move(v));
    return s;
  };
  fs::create_directories(dir / "p");
  fs::create_directories(dir / "t");
  data::write_volume(make("v1", {1, 1, 0, 0}), dir / "p" / "v1.mvol");
  data::write_volume(make("v1", {0, 1, 1, 0}), dir / "t" / "v1.mvol");
  const auto r = run("eval --pred " + (dir / "p").string() + " --truth " + (dir / "t").string());
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_EQ(r.out,
            "volume   mean DSC    mean HD   mean ASD     DSC c1\n"
            "v1         0.5000     1.0000     0.5000     0.5000\n"
            "mean       0.5000     1.0000     0.5000     0.5000\n");

  data::write_volume(make("v2", {0, 1, 1, 0}), dir / "t" / "v2.mvol");
  const auto missing = run("eval --pred " + (dir / "p").string() + " --truth " + (dir / "t").string());
  EXPECT_EQ(missing.code, 2);
  EXPECT_NE(missing.out.find("v2 (truth only)"), std::string::npos);
}

TEST(Cli, GuardedMapsErrorsToExitCodes) {
  std::ostringstream err;
  EXPECT_EQ(cli::guarded([]() -> int { throw ConfigError("bad"); }, err), 2);
  EXPECT_EQ(cli::guarded([]() -> int { throw DataError("gone"); }, err), 2);
  EXPECT_EQ(cli::guarded([]() -> int { throw train::TrainingDiverged(3, "loss is nan"); }, err), 1);
  EXPECT_EQ(cli::guarded([]() -> int { return 0; }, err), 0);
  EXPECT_EQ(err.str(), "error: bad\nerror: gone\nerror: training diverged at iteration 3: loss is nan\n");
}
