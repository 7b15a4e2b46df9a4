#include "cgnet/run_config.hpp"

#include <doctest.h>

#include <sstream>

using namespace cgnet;

TEST_CASE("defaults are the full-scale protocol") {
  const RunConfig c;
  CHECK(config_key("base_lr").get(c) == "0.001");
  CHECK(config_key("power").get(c) == "0.9");
  CHECK(config_key("batch_size").get(c) == "14");
  CHECK(config_key("weight_decay").get(c) == "0.0005");
  CHECK(config_key("max_iter").get(c) == "60000");
  CHECK(config_key("scales").get(c) == "0.5,0.75,1,1.5,1.75,2");
  CHECK(config_key("M").get(c) == "3");
  CHECK(config_key("N").get(c) == "21");
}

TEST_CASE("config text with comments and overrides") {
  RunConfig c;
  std::istringstream in("# desk run\nM = 3\nN=3   # short\nchannels = 16, 32, 64\n\nsur_mode = none\nglo = false\nscales = 1\n");
  apply_config_text(c, in, "test.cfg");
  CHECK(c.net.N == 3);
  CHECK(c.net.channels == std::array<int, 3>{16, 32, 64});
  CHECK(c.net.sur_mode == SurMode::kNone);
  CHECK_FALSE(c.net.use_glo);
  CHECK(c.train.scales == std::vector<double>{1.0});
  apply_key(c, "N", "4");
  CHECK(c.net.N == 4);
  std::ostringstream echo;
  write_run_config(echo, c);
  CHECK(echo.str().find("N = 4\n") != std::string::npos);
  CHECK(echo.str().find("base_lr = 0.001  # default\n") != std::string::npos);
}

TEST_CASE("echoed config parses back to the same values") {
  RunConfig c;
  apply_key(c, "means", "1.5,2,3");
  apply_key(c, "residual", "lrl");
  apply_key(c, "loss_reduction", "sum");
  std::ostringstream echo;
  write_run_config(echo, c);
  RunConfig d;
  std::istringstream in(echo.str());
  apply_config_text(d, in, "echo");
  for (const auto& k : config_keys()) CHECK(k.get(c) == k.get(d));
}

TEST_CASE("unknown keys and bad values are errors with a location") {
  RunConfig c;
  std::istringstream unknown("M = 3\nlearning_rate = 0.1\n");
  CHECK_THROWS_WITH(apply_config_text(c, unknown, "x.cfg"), doctest::Contains("x.cfg:2"));
  std::istringstream bad_int("M = three\n");
  CHECK_THROWS(apply_config_text(c, bad_int, "x.cfg"));
  std::istringstream no_eq("M 3\n");
  CHECK_THROWS(apply_config_text(c, no_eq, "x.cfg"));
  CHECK_THROWS(apply_key(c, "sur_mode", "half"));
  CHECK_THROWS(apply_key(c, "channels", "16,32"));
  CHECK_THROWS(apply_key(c, "glo", "maybe"));
  CHECK_THROWS(apply_key(c, "means", "1,2"));
  CHECK_THROWS(apply_config_file(c, "/nonexistent/x.cfg"));
}

TEST_CASE("combined validation") {
  RunConfig c;
  apply_key(c, "ignore_index", "3");
  CHECK_THROWS(validate(c));
  c = RunConfig{};
  apply_key(c, "crop", "60");
  CHECK_THROWS(validate(c));
  c = RunConfig{};
  CHECK_NOTHROW(validate(c));
}
