#include <gtest/gtest.h>

#include "epk/config.hpp"
#include "epk/errors.hpp"

using namespace epk;

TEST(Config, PresetsRoundTrip) {
  for (const char* preset : {"desk_transformer", "p113_transformer", "desk_mlp"}) {
    const RunConfig c = config_from_json(Json{{"preset", preset}});
    c.validate();
    const RunConfig back = config_from_json(to_json(c));
    EXPECT_EQ(back.setup, c.setup) << preset;
    EXPECT_EQ(to_json(back), to_json(c)) << preset;
  }
  EXPECT_EQ(config_from_json(Json{{"preset", "p113_transformer"}}).setup, p113_transformer_setup());
}

TEST(Config, OverridesParseJsonScalarsAndLists) {
  Json j = Json::object();
  apply_override(j, "lr", "0.5");
  apply_override(j, "components", "decoder,linear2");
  apply_override(j, "windows", "[[0,10],[10,20]]");
  apply_override(j, "epk_mode", "per_sample");
  apply_override(j, "T", "7");
  const RunConfig c = config_from_json(j);
  EXPECT_EQ(c.setup.optimizer.schedule.peak, 0.5);
  EXPECT_EQ(c.components, (std::vector<std::string>{"decoder", "linear2"}));
  ASSERT_EQ(c.windows.size(), 2u);
  EXPECT_EQ(c.windows[1], (StepWindow{10, 20}));
  EXPECT_EQ(c.epk_mode, "per_sample");
  EXPECT_EQ(c.T, std::vector<std::size_t>{7});
}

TEST(Config, ModulusDrivesModelAndData) {
  const RunConfig c = config_from_json(Json{{"modulus", 7}});
  EXPECT_EQ(c.setup.model.modulus, 7);
  EXPECT_EQ(c.setup.data.modulus, 7);
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
  Json j = Json::object();
  EXPECT_THROW(apply_override(j, "learning_rate", "1"), ValidationError);
  EXPECT_THROW(config_from_json(Json{{"lr", "fast"}}), ValidationError);
  EXPECT_THROW(config_from_json(Json{{"preset", "huge"}}), ValidationError);
  auto invalid = [](Json v) {
    const RunConfig c = config_from_json(v);
    EXPECT_THROW(c.validate(), ValidationError) << v.dump();
  };
  invalid({{"components", {"mlp"}}});
  invalid({{"T", {0}}});
  invalid({{"windows", {{5, 5}}}});
  invalid({{"windows", {{0, 301}}}});
  invalid({{"prune_fractions", {0.0}}});
  invalid({{"prune_strategies", {"lottery"}}});
  invalid({{"epk_mode", "fast"}});
  invalid({{"model_kind", "mlp"}});
}

TEST(Config, UnknownComponentMessageListsValidNames) {
  const RunConfig c = config_from_json(Json{{"swap_components", {"mlp"}}});
  try {
    c.validate();
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("embedding, att_encoders, att_decoders, linear1, linear2, decoder"),
              std::string::npos);
  }
}

TEST(Config, MissingFileIsInputError) {
  EXPECT_THROW(load_config("/nonexistent/config.json", {}), InputError);
}
