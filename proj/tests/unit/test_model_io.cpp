#include <filesystem>
#include <functional>
#include <map>
#include <sstream>

#include "doctest.h"
#include "entrain/model_io.hpp"
#include "entrain/synth.hpp"
#include "json.hpp"

using namespace entrain;

namespace {

MeasureModel trained(Measure measure, int dim) {
    SynthParams p;
    p.n_sessions = 10;
    p.turns_per_session = 9;
    p.feature_dim = dim;
    const Corpus c = generate_corpus(p).corpus;
    const CorpusSplit s = split_corpus(c);
    TrainConfig cfg;
    cfg.batch_size = 8;
    cfg.max_epochs = 2;
    cfg.seed = 4;
    return train_measure(measure, collect_triplets(c, s.train), collect_triplets(c, s.validation), cfg);
}

std::string mutate(const std::string& text, const std::function<void(nlohmann::json&)>& fn) {
    auto doc = nlohmann::json::parse(text);
    fn(doc);
    return doc.dump();
}

}  // namespace

TEST_CASE("save and load round-trip bitwise") {
    for (const Measure m : {Measure::dr, Measure::adv}) {
        const MeasureModel model = trained(m, 5);
        const std::string text = serialize_model(model);
        const MeasureModel back = deserialize_model(text);
        CHECK(serialize_model(back) == text);

        const auto path = std::filesystem::temp_directory_path() / "entrain_model_io_test.json";
        save_model(model, path);
        CHECK(serialize_model(load_model(path)) == text);
        std::filesystem::remove(path);
    }
}

TEST_CASE("parameter shapes follow the architecture at full width") {
    nn::Rng rng(0);
    DrModel dr;
    dr.feature_dim = 228;
    dr.enc0 = nn::make_encoder(228, rng);
    dr.dec0 = nn::make_decoder(228, rng);
    dr.enc1 = nn::make_encoder(456, rng);
    dr.dec1 = nn::make_decoder(228, rng);
    const MeasureModel back = deserialize_model(serialize_model(dr));
    std::map<std::string, std::pair<int, int>> shapes;
    for (const auto& s : parameter_shapes(back)) shapes[s.name] = {s.rows, s.cols};
    CHECK(shapes.size() == 24);
    CHECK(shapes.at("enc0.layer1.W") == std::pair{128, 228});
    CHECK(shapes.at("enc0.layer2.W") == std::pair{30, 128});
    CHECK(shapes.at("dec0.layer1.W") == std::pair{128, 30});
    CHECK(shapes.at("dec0.layer2.W") == std::pair{228, 128});
    CHECK(shapes.at("enc1.layer1.W") == std::pair{128, 456});
    CHECK(shapes.at("dec1.layer2.b") == std::pair{228, 1});
    CHECK(shapes.at("enc1.bn.gamma") == std::pair{128, 1});
}

TEST_CASE("training log CSV marks the restored epoch") {
    const MeasureModel m = trained(Measure::dr, 4);
    std::ostringstream out;
    write_training_log(training_log(m), out);
    const std::string csv = out.str();
    CHECK(csv.rfind("stage,epoch,train_loss,val_loss,best\n", 0) == 0);
    CHECK(csv.find("dr_stage1,1,") != std::string::npos);
    CHECK(csv.find("dr_stage2,") != std::string::npos);
}

TEST_CASE("corrupt model files are rejected with a reason") {
    const std::string text = serialize_model(trained(Measure::adv, 4));
    CHECK_THROWS_WITH_AS(deserialize_model("{"), doctest::Contains("model:"), Error);
    CHECK_THROWS_WITH_AS(deserialize_model(mutate(text, [](auto& d) { d["format"] = "other"; })),
                         doctest::Contains("unknown format"), Error);
    CHECK_THROWS_WITH_AS(deserialize_model(mutate(text, [](auto& d) { d["version"] = 9; })),
                         doctest::Contains("unsupported version"), Error);
    CHECK_THROWS_WITH_AS(deserialize_model(mutate(text, [](auto& d) { d["arrays"].erase(0); })),
                         doctest::Contains("missing array"), Error);
    CHECK_THROWS_WITH_AS(deserialize_model(mutate(text, [](auto& d) { d["arrays"][0]["shape"] = {1, 1}; })),
                         doctest::Contains("shape"), Error);
    CHECK_THROWS_WITH_AS(deserialize_model(mutate(text, [](auto& d) { d["arrays"][0]["data"].erase(0); })),
                         doctest::Contains("holds"), Error);
    CHECK_THROWS_WITH_AS(deserialize_model(mutate(text, [](auto& d) { d["measure"] = "ned"; })),
                         doctest::Contains("unknown measure"), Error);
    CHECK_THROWS_WITH_AS(load_model("/nonexistent/model.json"), doctest::Contains("/nonexistent/model.json"),
                         Error);
}
