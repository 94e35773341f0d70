// SPDX-License-Identifier: Apache-2.0
#include <cstdlib>

#include "adrenaline/config.hpp"
#include "adrenaline/error.hpp"
#include "doctest.h"

using namespace adrenaline;
using namespace adrenaline::config;

TEST_CASE("defaults and derived configs") {
  RunConfig c;
  CHECK(c.problems().empty());
  auto m = c.model();
  CHECK(m.frames == 25);
  CHECK(m.bins == 1024);
  CHECK(m.feature_dim() == 512);
  CHECK(c.train().batch_size == 16);
  CHECK(c.train().scheduler == train::Scheduler::noam);
  CHECK(c.scene(2).max_overlap == 2);
  CHECK(c.scene(1).elevation_max_deg == 60.0);
  CHECK(c.overlaps() == std::vector<std::size_t>{1, 2, 3});

  RunConfig desk(Profile::desk);
  CHECK(desk.problems().empty());
  CHECK(desk.model().bins == 128);
  CHECK(desk.model().frames == 25);
  CHECK(desk.model().feature_dim() == 32);
}

TEST_CASE("file parsing collects every problem") {
  RunConfig c;
  c.load_text("# comment\nmodel.hidden = 8   # trailing\n\n  run.seed=5\n");
  CHECK(c.get("model.hidden") == "8");
  CHECK(c.seed() == 5);

  RunConfig d;
  try {
    d.load_text("model.hiddn = 8\nnonsense\nmodel.hidden = 8\n", "cfg");
    FAIL("expected a ConfigError");
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("cfg:1: unknown key 'model.hiddn'") != std::string::npos);
    CHECK(msg.find("cfg:2: expected key = value") != std::string::npos);
  }
}

TEST_CASE("validation lists all problems") {
  RunConfig c;
  c.set("train.batch_size", "x");
  c.set("model.pools", "3,3");
  c.set("loss.doa_form", "eq6");
  c.set("train.patience", "500");
  const auto p = c.problems();
  CHECK(p.size() == 3);  // the batch size message is not repeated by the train cross-check
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK_THROWS_AS(c.set("no.such", "1"), ConfigError);

  RunConfig t;
  t.set("model.variant", "cnn-baseline");
  t.set("train.teacher_forcing", "true");
  CHECK(t.problems().size() == 1);
}

TEST_CASE("hash ignores locations and follows everything else") {
  RunConfig a, b;
  b.set("run.root", "/elsewhere");
  b.set("data.root", "/data");
  CHECK(a.hash() == b.hash());
  CHECK(a.hash().size() == 16);
  b.set("model.hidden", "32");
  CHECK(a.hash() != b.hash());
}

TEST_CASE("commented text round-trips and help lists every key") {
  RunConfig a(Profile::desk);
  a.set("run.seed", "42");
  RunConfig b;
  b.load_text(commented_text(a, "test"));
  CHECK(a.text() == b.text());
  const auto help = help_text();
  for (const auto& k : schema()) {
    CHECK(help.find(k.key + " = " + (k.default_value.empty() ? "\"\"" : k.default_value)) != std::string::npos);
  }
}

TEST_CASE("run root environment override") {
  setenv("ADRENALINE_RUN_ROOT", "/tmp/adrenaline_env_root", 1);
  RunConfig c;
  unsetenv("ADRENALINE_RUN_ROOT");
  CHECK(c.get("run.root") == "/tmp/adrenaline_env_root");
  CHECK(RunConfig().get("run.root") == "runs");
}
