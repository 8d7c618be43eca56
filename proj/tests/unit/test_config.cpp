#include <doctest.h>

#include <fstream>

#include "gazedistill/config.hpp"
#include "testkit.hpp"

using namespace gazedistill;

TEST_CASE("defaults cover the whole schema") {
    const auto c = Config::defaults();
    CHECK(c.values() == Config::schema());
    CHECK(c.get_double("train.lr_init") == 0.01);
    CHECK(c.get_double("loss.lambda_afc") == 0.1);
    CHECK(c.get_double("loss.lambda_cwc") == 1.0);
    CHECK(c.get_double("loss.epsilon") == 1e-6);
    CHECK(c.get_double("loss.tau_pos") == 0.8);
    CHECK(c.get_double("loss.tau_neg") == 0.2);
    CHECK(c.get_double("masks.tau_hc") == 0.7);
    CHECK(c.get_double("masks.tau_bc") == 0.3);
    CHECK(c.get_int("masks.min_component_px") == 16);
    CHECK(c.get_double("darm.tau_dis") == 0.5);
    CHECK(c.get_double("darm.rate") == 0.5);
    CHECK(c.get_int("text.width") == 768);
    CHECK(c.get_int_list("model.teacher_widths") == std::vector<int>{16, 32, 64, 128});
    CHECK(c.get_int_list("model.student_widths") == std::vector<int>{8, 16, 32, 64});
    CHECK(c.get_bool("darm.enabled"));
}

TEST_CASE("parse overlays assignments and skips comments") {
    const auto c = Config::parse("# comment\n\n  train.epochs = 12  \nmodel.fusion_stages=1,0,1,0\n");
    CHECK(c.get_int("train.epochs") == 12);
    CHECK(c.get_int_list("model.fusion_stages") == std::vector<int>{1, 0, 1, 0});
    CHECK(c.get_int("train.batch_size") == 8);
}

TEST_CASE("unknown keys and malformed lines name the offender") {
    try {
        Config::parse("train.epoch = 3\n");
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(e.key() == "train.epoch");
    }
    CHECK_THROWS_AS(Config::parse("just words\n"), ConfigError);
    auto c = Config::defaults();
    CHECK_THROWS_AS(c.apply_override("train.epochs"), ConfigError);
    CHECK_THROWS_AS(c.get("nope"), ConfigError);
}

TEST_CASE("typed getters reject bad values") {
    auto c = Config::defaults();
    c.set("train.epochs", "3.5");
    CHECK_THROWS_AS(c.get_int("train.epochs"), ConfigError);
    c.set("train.seed", "-1");
    CHECK_THROWS_AS(c.get_uint("train.seed"), ConfigError);
    c.set("train.lr_init", "fast");
    CHECK_THROWS_AS(c.get_double("train.lr_init"), ConfigError);
    c.set("darm.enabled", "maybe");
    CHECK_THROWS_AS(c.get_bool("darm.enabled"), ConfigError);
    c.set("model.fusion_stages", "1,x");
    CHECK_THROWS_AS(c.get_int_list("model.fusion_stages"), ConfigError);
    for (const char* t : {"true", "1", "yes", "on"}) {
        c.set("darm.enabled", t);
        CHECK(c.get_bool("darm.enabled"));
    }
    for (const char* f : {"false", "0", "no", "off"}) {
        c.set("darm.enabled", f);
        CHECK_FALSE(c.get_bool("darm.enabled"));
    }
}

TEST_CASE("dump round trips and hashes track content") {
    testkit::Rng rng(61);
    const auto& schema = Config::schema();
    std::vector<std::string> keys;
    for (const auto& [k, v] : schema) keys.push_back(k);
    for (int trial = 0; trial < 200; ++trial) {
        auto c = Config::defaults();
        const auto& key = keys[static_cast<std::size_t>(testkit::uniform_int(rng, 0, static_cast<int>(keys.size()) - 1))];
        c.apply_override(key + "=v" + std::to_string(trial));
        const auto back = Config::parse(c.dump());
        CHECK(back.values() == c.values());
        CHECK(back.hash() == c.hash());
        CHECK(c.hash() != Config::defaults().hash());
        CHECK(c.hash().size() == 64);
    }
}

TEST_CASE("config files load from disk") {
    testkit::TempDir dir;
    {
        std::ofstream out(dir / "run.cfg");
        out << "train.epochs = 4\n";
    }
    CHECK(Config::load_file(dir / "run.cfg").get_int("train.epochs") == 4);
    CHECK_THROWS_AS(Config::load_file(dir / "missing.cfg"), ConfigError);
}
