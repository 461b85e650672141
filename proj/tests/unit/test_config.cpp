#include <gtest/gtest.h>

#include <fstream>
#include <json.hpp>

#include "fixtures.hpp"
#include "loopalign/config.hpp"
#include "loopalign/errors.hpp"

namespace loopalign {
namespace {

TEST(Config, DefaultsValidate) {
  RunConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  EXPECT_EQ(cfg.loss.w_aux, 0.1);
  EXPECT_EQ(cfg.loop.injection, Injection::concat);
  EXPECT_EQ(cfg.loop.extra_feature, ExtraFeature::none);
  EXPECT_EQ(cfg.loop.passes(), cfg.loop.loops + 1);
}

TEST(Config, JsonRoundTrip) {
  RunConfig cfg = testing::tiny_config();
  cfg.loop.variant = Variant::decoder;
  cfg.geometry.manifold = ManifoldKind::adaptive_lorentz;
  nlohmann::json j = cfg;
  const RunConfig back = j.get<RunConfig>();
  EXPECT_EQ(nlohmann::json(back), j);
}

TEST(Config, OverridesUseDottedPaths) {
  const RunConfig cfg = resolve_config("", {"loop.loops=3", "geometry.manifold=lorentz", "loss.tau=0.2",
                                            "loop.variant=encoder"});
  EXPECT_EQ(cfg.loop.loops, 3);
  EXPECT_EQ(cfg.geometry.manifold, ManifoldKind::lorentz);
  EXPECT_DOUBLE_EQ(cfg.loss.tau, 0.2);
  EXPECT_EQ(cfg.loop.variant, Variant::encoder);
}

TEST(Config, FileThenOverrides) {
  const auto dir = testing::scratch_dir("config");
  const auto path = dir + "/run.json";
  std::ofstream(path) << R"({"optim": {"steps": 7, "lr": 0.01}, "output_dir": "out"})";
  const RunConfig cfg = resolve_config(path, {"optim.steps=9"});
  EXPECT_EQ(cfg.optim.steps, 9);
  EXPECT_DOUBLE_EQ(cfg.optim.lr, 0.01);
  EXPECT_EQ(cfg.output_dir, "out");
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
  EXPECT_THROW(resolve_config("", {"loop.lops=3"}), ConfigError);
  EXPECT_THROW(resolve_config("", {"geometry.manifold=spherical"}), ConfigError);
  EXPECT_THROW(resolve_config("", {"loss.margin=-0.1"}), ConfigError);
  EXPECT_THROW(resolve_config("", {"loss.alpha=1.0"}), ConfigError);
  EXPECT_THROW(resolve_config("", {"model.heads=3"}), ConfigError);
  EXPECT_THROW(resolve_config("", {"loop.loops"}), ConfigError);
  EXPECT_THROW(resolve_config("", {"optim.steps=\"many\""}), ConfigError);
}

TEST(Config, DisplayNamesMatchTableRows) {
  EXPECT_EQ(display_name(ManifoldKind::euclidean), "Euclidean (Baseline)");
  EXPECT_EQ(display_name(ManifoldKind::adaptive_poincare), "Adaptive Poincare");
  EXPECT_EQ(display_name(Variant::encoder_decoder), "Encoder-Decoder");
  EXPECT_EQ(to_string(ManifoldKind::adaptive_lorentz), "adaptive-lorentz");
}

}  // namespace
}  // namespace loopalign
