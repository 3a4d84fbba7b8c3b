#include <CLI11.hpp>

#include <iostream>

#include "spides/errors.hpp"
#include "spides/pipeline.hpp"

namespace {

enum Exit { kOk = 0, kConfig = 2, kIo = 3, kDivergence = 4, kValidation = 5 };

using Command = void (*)(const spides::PipelineConfig&, const std::filesystem::path&, std::ostream&);

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sparse identification of SDEs from unpaired snapshots"};
  app.require_subcommand(1);
  std::string config_path;
  std::string out_dir = ".";

  const std::vector<std::pair<std::string, Command>> commands = {
      {"generate", spides::cmd_generate},       {"train-flow", spides::cmd_train_flow},
      {"train-score", spides::cmd_train_score}, {"identify", spides::cmd_identify},
      {"evaluate", spides::cmd_evaluate},       {"run-all", spides::cmd_run_all},
  };
  std::vector<CLI::App*> subs;
  for (const auto& [name, fn] : commands) {
    CLI::App* sub = app.add_subcommand(name);
    sub->add_option("--config", config_path, "configuration file")->required();
    sub->add_option("--out", out_dir, "output directory");
    subs.push_back(sub);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    const spides::PipelineConfig config = spides::load_config(config_path);
    for (std::size_t i = 0; i < subs.size(); ++i) {
      if (subs[i]->parsed()) commands[i].second(config, out_dir, std::cout);
    }
    return kOk;
  } catch (const spides::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const spides::IoError& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return kIo;
  } catch (const spides::DivergenceError& e) {
    std::cerr << "diverged: " << e.what() << " (last finite loss " << spides::format_real(e.last_finite_loss())
              << ")\n";
    return kDivergence;
  } catch (const spides::ValidationError& e) {
    std::cerr << "invalid input: " << e.what() << "\n";
    return kValidation;
  } catch (const std::invalid_argument& e) {
    std::cerr << "invalid input: " << e.what() << "\n";
    return kValidation;
  }
}
