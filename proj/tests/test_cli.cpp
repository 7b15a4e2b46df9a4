#include "test_util.hpp"

#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <sstream>

using testutil::TempDir;

namespace {

struct Run {
  int code = -1;
  std::string out, err;
};

Run cli(const TempDir& dir, const std::string& args, const std::string& env = "") {
  const auto out = dir / "stdout.txt", err = dir / "stderr.txt";
  const std::string cmd = "cd '" + dir.path().string() + "' && " + env + " '" CGNET_CLI "' " + args + " >'" + out.string() +
                          "' 2>'" + err.string() + "'";
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = testutil::read_text(out);
  r.err = testutil::read_text(err);
  return r;
}

int lines(const std::string& s) { return static_cast<int>(std::count(s.begin(), s.end(), '\n')); }

const std::string kTiny =
    "--manifest ds/manifest.txt --M 1 --N 1 --channels 8,8,16 --classes 4 --crop 32 --batch-size 2 --max-iter 6 --scales 1";

}  // namespace

TEST_CASE("every subcommand has help") {
  TempDir dir("help");
  for (const char* sub : {"synth", "train", "eval", "infer", "info", "gradcheck"}) {
    CAPTURE(sub);
    const Run r = cli(dir, std::string(sub) + " --help");
    CHECK(r.code == 0);
    CHECK(r.out.find("--") != std::string::npos);
  }
  const Run train = cli(dir, "train --help");
  for (const char* expect : {"--base-lr", "0.001", "--power", "0.9", "--batch-size", "14", "--weight-decay", "0.0005",
                             "--max-iter", "60000", "0.5,0.75,1,1.5,1.75,2", "--sur-mode", "--no-glo", "--no-injection",
                             "--activation", "--residual", "--interchannel-1x1"})
    CHECK_MESSAGE(train.out.find(expect) != std::string::npos, expect);
  CHECK(cli(dir, "").code != 0);
  CHECK(cli(dir, "bogus").code != 0);
}

TEST_CASE("synth writes a reproducible dataset") {
  TempDir dir("synth");
  const Run r = cli(dir, "synth --seed 7 --count 20 --size 64 --classes 4 --out a");
  REQUIRE(r.code == 0);
  CHECK(r.out.find("manifest.txt") != std::string::npos);
  int ppm = 0, pgm = 0;
  for (const auto& e : std::filesystem::directory_iterator(dir / "a")) {
    ppm += e.path().extension() == ".ppm";
    pgm += e.path().extension() == ".pgm";
  }
  CHECK(ppm == 20);
  CHECK(pgm == 20);
  REQUIRE(cli(dir, "synth --seed 7 --count 20 --size 64 --classes 4 --out b").code == 0);
  for (const auto& e : std::filesystem::directory_iterator(dir / "a"))
    CHECK(testutil::read_bytes(e.path()) == testutil::read_bytes(dir / "b" / e.path().filename().string()));
  const Run bad = cli(dir, "synth --size 50 --out c");
  CHECK(bad.code != 0);
  CHECK(lines(bad.err) == 1);
  CHECK(bad.err.find("divisible") + bad.err.find("multiple of 8") != 2 * std::string::npos);
}

TEST_CASE("info reports parameters and FLOPs") {
  TempDir dir("info");
  const Run r = cli(dir, "info --M 3 --N 21 --classes 19");
  REQUIRE(r.code == 0);
  CHECK(r.out.find("params 494777 (0.49 M)") != std::string::npos);
  CHECK(r.out.find("(6.07 G) at 3x360x640") != std::string::npos);
  const Run ablate = cli(dir, "info --M 3 --N 21 --no-glo --sur-mode none --activation relu");
  CHECK(ablate.code == 0);
  CHECK(ablate.out.find("glo = false") != std::string::npos);
  CHECK(cli(dir, "info --sur-mode half").code != 0);
  CHECK(cli(dir, "info --height 100").code != 0);
}

TEST_CASE("train, eval and infer") {
  TempDir dir("pipe");
  REQUIRE(cli(dir, "synth --seed 3 --count 4 --size 32 --classes 4 --out ds").code == 0);
  const Run t = cli(dir, "train " + kTiny + " --checkpoint-interval 3 --out-dir r");
  REQUIRE(t.code == 0);
  CHECK(t.out.find("base_lr = 0.001  # default") != std::string::npos);
  CHECK(t.out.find("M = 1\n") != std::string::npos);
  CHECK(std::filesystem::exists(dir / "r" / "final.cgn"));
  CHECK(std::filesystem::exists(dir / "r" / "iter_000003.cgn"));
  const std::string log = testutil::read_text(dir / "r" / "train.log");
  CHECK(lines(log) == 6);
  CHECK(log.rfind("0\t0.001\t", 0) == 0);

  const Run e = cli(dir, "eval --checkpoint r/final.cgn --manifest ds/manifest.txt");
  REQUIRE(e.code == 0);
  CHECK(e.out.find("mIoU ") != std::string::npos);
  CHECK(e.out.find("pixel_acc ") != std::string::npos);
  const Run csv = cli(dir, "eval --checkpoint r/final.cgn --manifest ds/manifest.txt --csv");
  REQUIRE(csv.code == 0);
  std::istringstream in(csv.out);
  std::string line;
  std::getline(in, line);
  CHECK(line == "metric,class,value");
  while (std::getline(in, line)) CHECK(std::count(line.begin(), line.end(), ',') == 2);

  testutil::write_text(dir / "cats.txt", "0 0\n1 1\n2 1\n3 1\n");
  CHECK(cli(dir, "eval --checkpoint r/final.cgn --manifest ds/manifest.txt --categories cats.txt").out.find("mIoU_cat") !=
        std::string::npos);

  REQUIRE(cli(dir, "synth --seed 3 --count 1 --size 32 --classes 5 --out ds5").code == 0);
  const Run mismatch = cli(dir, "eval --checkpoint r/final.cgn --manifest ds5/manifest.txt");
  CHECK(mismatch.code != 0);
  CHECK(mismatch.err.find("classes") != std::string::npos);

  REQUIRE(cli(dir, "infer --checkpoint r/final.cgn --image ds/img_0000.ppm --out p1.pgm --color p1.ppm").code == 0);
  REQUIRE(cli(dir, "infer --checkpoint r/final.cgn --image ds/img_0000.ppm --out p2.pgm").code == 0);
  CHECK(testutil::read_bytes(dir / "p1.pgm") == testutil::read_bytes(dir / "p2.pgm"));
  CHECK(testutil::read_text(dir / "p1.pgm").rfind("P5\n32 32\n255\n", 0) == 0);
  CHECK(testutil::read_text(dir / "p1.ppm").rfind("P6\n32 32\n255\n", 0) == 0);
}

TEST_CASE("resume and thread count leave the run unchanged") {
  TempDir dir("resume");
  REQUIRE(cli(dir, "synth --seed 5 --count 3 --size 32 --classes 4 --out ds").code == 0);
  REQUIRE(cli(dir, "train " + kTiny + " --out-dir full", "CGNET_THREADS=1").code == 0);
  REQUIRE(cli(dir, "train " + kTiny + " --out-dir part --stop-at 2", "CGNET_THREADS=3").code == 0);
  CHECK(std::filesystem::exists(dir / "part" / "stopped.cgn"));
  REQUIRE(cli(dir, "train " + kTiny + " --out-dir part --resume part/stopped.cgn", "CGNET_THREADS=2").code == 0);
  CHECK(testutil::read_bytes(dir / "full" / "train.log") == testutil::read_bytes(dir / "part" / "train.log"));
  CHECK(testutil::read_bytes(dir / "full" / "final.cgn") == testutil::read_bytes(dir / "part" / "final.cgn"));
  const Run clash = cli(dir, "train " + kTiny + " --N 2 --out-dir x --resume part/stopped.cgn");
  CHECK(clash.code != 0);
}

TEST_CASE("config files and failures") {
  TempDir dir("cfg");
  REQUIRE(cli(dir, "synth --seed 5 --count 2 --size 32 --classes 4 --out ds").code == 0);
  testutil::write_text(dir / "run.cfg",
                       "# tiny\nmanifest = ds/manifest.txt\nM = 1\nN = 1\nchannels = 8,8,16\nclasses = 4\ncrop = 32\n"
                       "batch_size = 2\nmax_iter = 2\nscales = 1\nout_dir = c1\n");
  const Run ok = cli(dir, "train --config run.cfg --max-iter 3");
  REQUIRE(ok.code == 0);
  CHECK(lines(testutil::read_text(dir / "c1" / "train.log")) == 3);
  CHECK(ok.out.find("max_iter = 3\n") != std::string::npos);

  testutil::write_text(dir / "bad.cfg", "manifest = ds/manifest.txt\nlearning_rate = 0.1\n");
  const Run bad = cli(dir, "train --config bad.cfg");
  CHECK(bad.code != 0);
  CHECK(lines(bad.err) == 1);
  CHECK(bad.err.find("learning_rate") != std::string::npos);

  const Run missing = cli(dir, "eval --checkpoint nope.cgn --manifest ds/manifest.txt");
  CHECK(missing.code != 0);
  CHECK(lines(missing.err) == 1);
  CHECK(missing.err.find("terminate") == std::string::npos);

  const Run nomanifest = cli(dir, "train --M 1");
  CHECK(nomanifest.code != 0);
}

TEST_CASE("gradcheck exit codes") {
  TempDir dir("grad");
  const Run pass = cli(dir, "gradcheck --kernels-only --tol 1e-4");
  CHECK(pass.code == 0);
  CHECK(pass.out.find("PASS") != std::string::npos);
  const Run fail = cli(dir, "gradcheck --kernels-only --tol 1e-15");
  CHECK(fail.code == 1);
  CHECK(fail.out.find("FAIL") != std::string::npos);
}
