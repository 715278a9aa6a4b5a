#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <functional>

#include "fedskd/config.hpp"
#include "fedskd/errors.hpp"

using namespace fedskd;

namespace {

std::string error_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const ConfigError& e) {
        return e.what();
    }
    return "";
}

}  // namespace

TEST(Config, DefaultsAreValidAndFollowTheSetup) {
    const ExperimentConfig c;
    EXPECT_NO_THROW(c.validate());
    EXPECT_EQ(c.batch_size, 8u);
    EXPECT_EQ(c.lr, 1e-4);
    EXPECT_EQ(c.gamma, 1.0);
    EXPECT_EQ(c.components, SkdComponents::all());
    EXPECT_EQ(c.tap_layers, (std::vector<int>{1, 2, 3, 4}));
    EXPECT_EQ(c.test_fraction, 0.2);
}

TEST(Config, ParsesKeysCommentsAndBlankLines) {
    const std::string text = R"(# desk run
method = fedcross_dagger
n_clients = 4
rounds = 12   # trailing comment
iters_per_round = auto
gamma = 100

model.family = resnet10
model.base_width = 8
model.width_step = 0
model.input_shape = 1,32,32
skd.components = BP
skd.layers = 3,4
skd.start_fraction = 0.25
skd.regions = grid:4x4
partition = iid
lr = 0.001
batch_size = 4
seed = 17
fedcross.replicas = true
)";
    const auto c = parse_config(text, "t.cfg");
    EXPECT_EQ(c.method, Method::fedcross_dagger);
    EXPECT_EQ(c.n_clients, 4u);
    EXPECT_EQ(c.rounds, 12u);
    EXPECT_EQ(c.iters_per_round, 0u);
    EXPECT_EQ(c.effective_iters(), 20u);
    EXPECT_EQ(c.gamma, 100.0);
    EXPECT_EQ(c.family, ModelFamily::resnet10);
    EXPECT_EQ(c.input_shape, (Shape{1, 32, 32}));
    EXPECT_EQ(c.components, SkdComponents::parse("B,P"));
    EXPECT_EQ(c.tap_layers, (std::vector<int>{3, 4}));
    EXPECT_EQ(c.skd_start_fraction, 0.25);
    EXPECT_EQ(c.regions, "grid:4x4");
    EXPECT_EQ(c.partition, PartitionMethod::iid);
    EXPECT_EQ(c.lr, 0.001);
    EXPECT_EQ(c.seed, 17u);
    EXPECT_TRUE(c.fedcross_replicas);
    const auto fleet = c.fleet();
    ASSERT_EQ(fleet.size(), 4u);
    for (const auto& s : fleet) EXPECT_EQ(s.base_width, 8u);
}

TEST(Config, IterationsDefaultToFiveTimesClientsOrFive) {
    ExperimentConfig c;
    c.n_clients = 3;
    EXPECT_EQ(c.effective_iters(), 15u);
    c.method = Method::fedavg;
    EXPECT_EQ(c.effective_iters(), 5u);
    c.iters_per_round = 9;
    EXPECT_EQ(c.effective_iters(), 9u);
}

TEST(Config, ErrorsCarryLineNumbers) {
    const std::string unknown = "method = fedskd\n\nbogus_key = 3\n";
    const auto msg = error_of([&] { parse_config(unknown, "exp.cfg"); });
    EXPECT_NE(msg.find("exp.cfg:3:"), std::string::npos) << msg;
    EXPECT_NE(msg.find("bogus_key"), std::string::npos) << msg;

    EXPECT_NE(error_of([] { parse_config("rounds = 3\nmethod = fedsdk\n", "a.cfg"); }).find("a.cfg:2:"),
              std::string::npos);
    EXPECT_NE(error_of([] { parse_config("rounds three\n", "b.cfg"); }).find("b.cfg:1:"), std::string::npos);
    EXPECT_NE(error_of([] { parse_config("rounds = -1\n", "c.cfg"); }).find("c.cfg:1:"), std::string::npos);
    EXPECT_THROW(parse_config("skd.layers = 4,2\n"), ConfigError);
    EXPECT_THROW(parse_config("skd.components = BQ\n"), ConfigError);
    EXPECT_THROW(parse_config("fedcross.replicas = maybe\n"), ConfigError);
    EXPECT_THROW(parse_config("model.input_shape = 16,16\n"), ConfigError);
}

TEST(Config, ValidationRejectsBadValues) {
    auto invalid = [](const std::string& key, const std::string& value) {
        ExperimentConfig c;
        set_config_value(c, key, value);
        return error_of([&] { c.validate(); });
    };
    EXPECT_NE(invalid("skd.start_fraction", "1").find("skd_start_fraction"), std::string::npos);
    EXPECT_FALSE(invalid("gamma", "-1").empty());
    EXPECT_FALSE(invalid("lr", "0").empty());
    EXPECT_FALSE(invalid("n_clients", "0").empty());
    EXPECT_FALSE(invalid("batch_size", "0").empty());
    EXPECT_FALSE(invalid("partition.alpha", "0").empty());
    EXPECT_FALSE(invalid("data.test_fraction", "1").empty());
    EXPECT_FALSE(invalid("dataset", "manifest").empty());
    EXPECT_FALSE(invalid("skd.regions", "none").empty());
    // Fleet errors surface as config errors too.
    EXPECT_FALSE(invalid("model.base_width", "5").empty());
    EXPECT_FALSE(invalid("model.input_shape", "1,2,2").empty());
}

TEST(Config, OverridesAndTheirErrors) {
    ExperimentConfig c;
    apply_overrides(c, {"rounds=7", "skd.components=R", "seed = 3"});
    EXPECT_EQ(c.rounds, 7u);
    EXPECT_EQ(c.components, SkdComponents::parse("R"));
    EXPECT_EQ(c.seed, 3u);
    const auto msg = error_of([&] { apply_overrides(c, {"method=nope"}); });
    EXPECT_EQ(msg.rfind("--set method=nope:", 0), 0u) << msg;
    EXPECT_THROW(apply_overrides(c, {"rounds"}), ConfigError);
}

TEST(Config, SnapshotRoundTrip) {
    ExperimentConfig c;
    apply_overrides(c, {"method=fedprox", "lr=0.00123456789012345", "gamma=0.1", "data.shift=0.3",
                        "skd.layers=2,4", "skd.components=B,R", "partition.alpha=0.7", "iters_per_round=11",
                        "skd.pixel_norm_literal=true", "output_dir=/tmp/x y"});
    const auto text = snapshot(c);
    const auto back = parse_config(text, "snapshot");
    EXPECT_EQ(snapshot(back), text);
    EXPECT_EQ(config_hash(back), config_hash(c));
    EXPECT_EQ(back.lr, c.lr);
    EXPECT_EQ(back.gamma, c.gamma);
    EXPECT_EQ(back.shift, c.shift);
    EXPECT_EQ(back.output_dir, "/tmp/x y");

    ExperimentConfig d = c;
    d.seed = 99;
    EXPECT_NE(config_hash(d), config_hash(c));
}

TEST(Config, LoadFromFile) {
    const auto path = std::filesystem::temp_directory_path() / "fedskd_config_test.cfg";
    {
        std::ofstream os(path);
        os << "method = local\nrounds = 2\n";
    }
    const auto c = load_config(path);
    EXPECT_EQ(c.method, Method::local);
    EXPECT_EQ(c.rounds, 2u);
    std::filesystem::remove(path);
    EXPECT_THROW(load_config(path), ConfigError);
}

TEST(Config, MethodNames) {
    for (auto m : {Method::fedskd, Method::fedcross, Method::fedcross_dagger, Method::fedavg, Method::fedprox,
                   Method::fedbn, Method::local, Method::centralized}) {
        EXPECT_EQ(parse_method(to_string(m)), m);
    }
    EXPECT_TRUE(is_server_method(Method::fedbn));
    EXPECT_FALSE(is_server_method(Method::fedcross));
    EXPECT_THROW(parse_method("FedSKD!"), ConfigError);
}
