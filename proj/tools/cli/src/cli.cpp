#include "thz/cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <ostream>

#include "CLI11.hpp"
#include "commands.hpp"
#include "thz/io.hpp"

namespace thz::cli {

bool deterministic_mode() {
  const char* v = std::getenv("THZ_TOMO_DETERMINISTIC");
  return v != nullptr && std::string(v) == "1";
}

namespace {

int dispatch(const std::string& command, const std::string& text, const Overrides& ov, std::ostream& out) {
  const bool det = deterministic_mode();
  if (command == "gen-data") return cmd_gen_data(parse_gen_data(text, ov), out);
  if (command == "train") return cmd_train(parse_train(text, ov, det), out);
  if (command == "restore") return cmd_restore(parse_restore(text, ov, det), out);
  if (command == "reconstruct") return cmd_reconstruct(parse_reconstruct(text, ov), out);
  return cmd_evaluate(parse_evaluate(text, ov), out);
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Terahertz tomography: data generation, restoration, reconstruction and evaluation", "thz-tomo"};
  app.require_subcommand(1);
  std::string config;
  std::uint64_t seed = 0;
  std::string out_dir, preset;
  for (const char* name : {"gen-data", "train", "restore", "reconstruct", "evaluate"}) {
    auto* sub = app.add_subcommand(name);
    sub->add_option("--config", config, "JSON config file")->required();
    sub->add_option("--seed", seed, "Override the config seed");
    sub->add_option("--out", out_dir, "Output directory");
    sub->add_option("--preset", preset, "Network preset")->check(CLI::IsMember({"desk", "full"}));
  }
  try {
    std::vector<std::string> rev(args.rbegin(), args.rend() - 1);
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n" << app.help();
    return kConfigError;
  }
  const auto* sub = app.get_subcommands().front();
  Overrides ov;
  if (sub->count("--seed") > 0) ov.seed = seed;
  if (sub->count("--out") > 0) ov.out = out_dir;
  if (sub->count("--preset") > 0) ov.preset = preset;
  try {
    if (!std::filesystem::exists(config)) throw ConfigError("config file '" + config + "' not found");
    return dispatch(sub->get_name(), io::read_text(config), ov, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const MissingPrerequisite& e) {
    err << "missing prerequisite: " << e.what() << "\n";
    return kMissingPrerequisite;
  } catch (const DataInconsistency& e) {
    err << "data inconsistency: " << e.what() << "\n";
    return kDataInconsistency;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kFailure;
  }
}

}  // namespace thz::cli
