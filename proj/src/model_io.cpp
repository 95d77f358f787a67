#include "entrain/model_io.hpp"

#include <fstream>
#include <map>
#include <sstream>

#include <fmt/format.h>
#include "json.hpp"

namespace entrain {

namespace {

using json = nlohmann::json;

constexpr const char* kFormat = "entrain-model";
constexpr int kVersion = 1;

struct NamedComponent {
    const char* name;
    nn::Component* component;
};

std::vector<NamedComponent> components(MeasureModel& model) {
    if (auto* dr = std::get_if<DrModel>(&model)) {
        return {{"enc0", &dr->enc0}, {"dec0", &dr->dec0}, {"enc1", &dr->enc1}, {"dec1", &dr->dec1}};
    }
    auto& adv = std::get<AdvModel>(model);
    return {{"enc0", &adv.enc0}, {"dec1", &adv.dec1}, {"dec2", &adv.dec2}};
}

json array_json(const std::string& name, const double* data, Eigen::Index rows, Eigen::Index cols) {
    // Column-major data, matching Eigen's storage.
    return {{"name", name},
            {"shape", {rows, cols}},
            {"data", std::vector<double>(data, data + rows * cols)}};
}

json component_arrays(const std::string& prefix, const nn::Component& c) {
    json out = json::array();
    auto add_matrix = [&](const std::string& n, const Matrix& m) {
        out.push_back(array_json(prefix + "." + n, m.data(), m.rows(), m.cols()));
    };
    auto add_vector = [&](const std::string& n, const Vector& v) {
        out.push_back(array_json(prefix + "." + n, v.data(), v.size(), 1));
    };
    add_matrix("layer1.W", c.layer1.W);
    add_vector("layer1.b", c.layer1.b);
    add_vector("bn.gamma", c.bn.gamma);
    add_vector("bn.beta", c.bn.beta);
    add_vector("bn.running_mean", c.bn.running_mean);
    add_vector("bn.running_var", c.bn.running_var);
    add_matrix("layer2.W", c.layer2.W);
    add_vector("layer2.b", c.layer2.b);
    return out;
}

void read_array(const std::map<std::string, const json*>& arrays, const std::string& name,
                double* data, Eigen::Index rows, Eigen::Index cols) {
    auto it = arrays.find(name);
    if (it == arrays.end()) throw Error(fmt::format("model: missing array '{}'", name));
    const json& a = *it->second;
    const auto shape = a.at("shape").get<std::vector<Eigen::Index>>();
    if (shape.size() != 2 || shape[0] != rows || shape[1] != cols) {
        throw Error(fmt::format("model: array '{}' has shape {}, expected [{}, {}]", name,
                                a.at("shape").dump(), rows, cols));
    }
    const auto& values = a.at("data");
    if (static_cast<Eigen::Index>(values.size()) != rows * cols) {
        throw Error(fmt::format("model: array '{}' holds {} values, expected {}", name,
                                values.size(), rows * cols));
    }
    for (Eigen::Index i = 0; i < rows * cols; ++i) data[i] = values[static_cast<std::size_t>(i)].get<double>();
}

void read_component(const std::map<std::string, const json*>& arrays, const std::string& prefix,
                    nn::Component& c) {
    auto matrix = [&](const std::string& n, Matrix& m) {
        read_array(arrays, prefix + "." + n, m.data(), m.rows(), m.cols());
    };
    auto vector = [&](const std::string& n, Vector& v) {
        read_array(arrays, prefix + "." + n, v.data(), v.size(), 1);
    };
    matrix("layer1.W", c.layer1.W);
    vector("layer1.b", c.layer1.b);
    vector("bn.gamma", c.bn.gamma);
    vector("bn.beta", c.bn.beta);
    vector("bn.running_mean", c.bn.running_mean);
    vector("bn.running_var", c.bn.running_var);
    matrix("layer2.W", c.layer2.W);
    vector("layer2.b", c.layer2.b);
}

json config_json(const TrainConfig& c) {
    return {{"batch_size", c.batch_size},
            {"max_epochs", c.max_epochs},
            {"patience", c.patience},
            {"lr", c.adam.lr},
            {"beta1", c.adam.beta1},
            {"beta2", c.adam.beta2},
            {"adam_epsilon", c.adam.epsilon},
            {"grl_lambda", c.grl_lambda},
            {"seed", c.seed}};
}

TrainConfig config_from_json(const json& j) {
    TrainConfig c;
    c.batch_size = j.at("batch_size").get<int>();
    c.max_epochs = j.at("max_epochs").get<int>();
    c.patience = j.at("patience").get<int>();
    c.adam.lr = j.at("lr").get<double>();
    c.adam.beta1 = j.at("beta1").get<double>();
    c.adam.beta2 = j.at("beta2").get<double>();
    c.adam.epsilon = j.at("adam_epsilon").get<double>();
    c.grl_lambda = j.at("grl_lambda").get<double>();
    c.seed = j.at("seed").get<std::uint64_t>();
    return c;
}

json log_json(const TrainingLog& log) {
    json epochs = json::array();
    for (const auto& e : log.epochs) {
        epochs.push_back({{"stage", e.stage}, {"epoch", e.epoch}, {"train_loss", e.train_loss},
                          {"val_loss", e.val_loss}});
    }
    json stages = json::array();
    for (const auto& s : log.stages) {
        stages.push_back(
            {{"stage", s.stage}, {"best_epoch", s.best_epoch}, {"best_val_loss", s.best_val_loss}});
    }
    return {{"epochs", epochs}, {"stages", stages}};
}

TrainingLog log_from_json(const json& j) {
    TrainingLog log;
    for (const auto& e : j.at("epochs")) {
        log.epochs.push_back({e.at("stage").get<std::string>(), e.at("epoch").get<int>(),
                              e.at("train_loss").get<double>(), e.at("val_loss").get<double>()});
    }
    for (const auto& s : j.at("stages")) {
        log.stages.push_back({s.at("stage").get<std::string>(), s.at("best_epoch").get<int>(),
                              s.at("best_val_loss").get<double>()});
    }
    return log;
}

// Shapes fixed by the architecture for a given feature width.
MeasureModel skeleton(Measure measure, int feature_dim) {
    nn::Rng rng(0);
    if (measure == Measure::dr) {
        DrModel m;
        m.feature_dim = feature_dim;
        m.enc0 = nn::make_encoder(feature_dim, rng);
        m.dec0 = nn::make_decoder(feature_dim, rng);
        m.enc1 = nn::make_encoder(2 * feature_dim, rng);
        m.dec1 = nn::make_decoder(feature_dim, rng);
        return m;
    }
    AdvModel m;
    m.feature_dim = feature_dim;
    m.enc0 = nn::make_encoder(feature_dim, rng);
    m.dec1 = nn::make_decoder(feature_dim, rng);
    m.dec2 = nn::make_decoder(feature_dim, rng);
    return m;
}

}  // namespace

std::vector<ParamShape> parameter_shapes(const MeasureModel& model) {
    std::vector<ParamShape> out;
    auto& mutable_model = const_cast<MeasureModel&>(model);
    for (const auto& [name, c] : components(mutable_model)) {
        const std::string p = name;
        out.push_back({p + ".layer1.W", c->layer1.out_dim(), c->layer1.in_dim()});
        out.push_back({p + ".layer1.b", c->layer1.out_dim(), 1});
        out.push_back({p + ".bn.gamma", c->bn.dim(), 1});
        out.push_back({p + ".bn.beta", c->bn.dim(), 1});
        out.push_back({p + ".layer2.W", c->layer2.out_dim(), c->layer2.in_dim()});
        out.push_back({p + ".layer2.b", c->layer2.out_dim(), 1});
    }
    return out;
}

std::string serialize_model(const MeasureModel& model) {
    auto& mutable_model = const_cast<MeasureModel&>(model);
    json arrays = json::array();
    for (const auto& [name, c] : components(mutable_model)) {
        for (auto& a : component_arrays(name, *c)) arrays.push_back(std::move(a));
    }
    const bool is_dr = measure_of(model) == Measure::dr;
    const TrainConfig& cfg = is_dr ? std::get<DrModel>(model).config : std::get<AdvModel>(model).config;
    const int feature_dim = is_dr ? std::get<DrModel>(model).feature_dim
                                  : std::get<AdvModel>(model).feature_dim;
    const bool trained = is_dr ? std::get<DrModel>(model).trained : std::get<AdvModel>(model).trained;
    json doc = {{"format", kFormat},
                {"version", kVersion},
                {"measure", to_string(measure_of(model))},
                {"feature_dim", feature_dim},
                {"stage2_input", is_dr ? json("concat(x2_hat_intermediate, x1)") : json(nullptr)},
                {"trained", trained},
                {"batchnorm", {{"momentum", nn::BatchNormState{}.momentum},
                               {"epsilon", nn::BatchNormState{}.epsilon}}},
                {"config", config_json(cfg)},
                {"seed", cfg.seed},
                {"training_log", log_json(training_log(model))},
                {"arrays", arrays}};
    return doc.dump() + "\n";
}

MeasureModel deserialize_model(const std::string& text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::exception& e) {
        throw Error(fmt::format("model: {}", e.what()));
    }
    try {
        if (doc.at("format").get<std::string>() != kFormat) throw Error("model: unknown format");
        if (doc.at("version").get<int>() != kVersion) {
            throw Error(fmt::format("model: unsupported version {}", doc.at("version").dump()));
        }
        const Measure measure = parse_measure(doc.at("measure").get<std::string>());
        const int feature_dim = doc.at("feature_dim").get<int>();
        if (feature_dim < 1) throw Error("model: feature_dim must be positive");
        MeasureModel model = skeleton(measure, feature_dim);

        std::map<std::string, const json*> arrays;
        for (const auto& a : doc.at("arrays")) arrays[a.at("name").get<std::string>()] = &a;
        for (const auto& [name, c] : components(model)) read_component(arrays, name, *c);

        const TrainConfig cfg = config_from_json(doc.at("config"));
        const TrainingLog log = log_from_json(doc.at("training_log"));
        const double momentum = doc.at("batchnorm").at("momentum").get<double>();
        const double epsilon = doc.at("batchnorm").at("epsilon").get<double>();
        for (const auto& [name, c] : components(model)) {
            c->bn.momentum = momentum;
            c->bn.epsilon = epsilon;
        }
        std::visit(
            [&](auto& m) {
                m.config = cfg;
                m.log = log;
                m.trained = doc.at("trained").get<bool>();
            },
            model);
        return model;
    } catch (const json::exception& e) {
        throw Error(fmt::format("model: {}", e.what()));
    }
}

void save_model(const MeasureModel& model, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(fmt::format("cannot write model file '{}'", path.string()));
    out << serialize_model(model);
    if (!out) throw Error(fmt::format("failed writing model file '{}'", path.string()));
}

MeasureModel load_model(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(fmt::format("cannot open model file '{}'", path.string()));
    std::ostringstream buf;
    buf << in.rdbuf();
    return deserialize_model(buf.str());
}

void write_training_log(const TrainingLog& log, std::ostream& out) {
    out << "stage,epoch,train_loss,val_loss,best\n";
    for (const auto& e : log.epochs) {
        bool best = false;
        for (const auto& s : log.stages) best = best || (s.stage == e.stage && s.best_epoch == e.epoch);
        out << fmt::format("{},{},{},{},{}\n", e.stage, e.epoch, e.train_loss, e.val_loss,
                           best ? 1 : 0);
    }
}

}  // namespace entrain
