#pragma once

// Model container: a JSON document naming every parameter array with its
// shape, plus batch-norm running statistics, the training configuration and
// the seed. Doubles are written in shortest round-trip form, so save followed
// by load reproduces every value bitwise.

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "entrain/measures.hpp"

namespace entrain {

struct ParamShape {
    std::string name;  // e.g. "enc1.layer1.W"
    int rows = 0;
    int cols = 0;
};

/// Trainable parameters in serialization order (running stats excluded).
std::vector<ParamShape> parameter_shapes(const MeasureModel& model);

std::string serialize_model(const MeasureModel& model);
MeasureModel deserialize_model(const std::string& text);

void save_model(const MeasureModel& model, const std::filesystem::path& path);
MeasureModel load_model(const std::filesystem::path& path);

/// CSV rows stage,epoch,train_loss,val_loss,best (best = 1 on the restored epoch).
void write_training_log(const TrainingLog& log, std::ostream& out);

}  // namespace entrain
