#pragma once

#include <iosfwd>

#include "config.hpp"
#include "thz/cli.hpp"

namespace thz::cli {

int cmd_gen_data(const GenDataConfig& cfg, std::ostream& out);
int cmd_train(TrainRunConfig cfg, std::ostream& out);
int cmd_restore(const RestoreConfig& cfg, std::ostream& out);
int cmd_reconstruct(const ReconstructConfig& cfg, std::ostream& out);
int cmd_evaluate(const EvaluateConfig& cfg, std::ostream& out);

}  // namespace thz::cli
