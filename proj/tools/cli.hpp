#pragma once

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "earsr/run_config.hpp"

namespace CLI {
class App;
class Option;
}  // namespace CLI

namespace earsr::cli {

// Paths and switches that are not part of the run configuration.
struct Paths {
  std::string out;
  std::string config;
  std::string input;
  std::string lr_patches;
  std::string hr_patches;
  std::string patches;
  std::string from;
  std::string model;
  std::string resume;
  std::string spec;
  std::string generated;
  std::string reference;
  std::string baseline;
  std::string study;
  std::string study_id;
  std::string token;
  std::string host = "127.0.0.1";
  std::vector<std::string> methods;  // label=volume_dir
  std::vector<std::string> raters;
  int port = 8080;
  int n_lr = 6;
  int n_hr = 6;
  int n_val = 2;
  int compact_every = 200;
  bool anonymize = false;
  bool write_patches = true;
};

// The `earsr` command line. Parsing and execution are split so tests can
// inspect the effective configuration without running anything.
class Cli {
 public:
  Cli();
  ~Cli();

  CLI::App& app();
  std::string help(const std::string& subcommand = {}) const;

  // Arguments exclude the program name. Throws CLI::ParseError.
  void parse(const std::vector<std::string>& args);
  std::string subcommand() const;

  // Defaults, then the --config file, then explicit flags.
  RunConfig effective_config() const;
  const Paths& paths() const { return paths_; }

  // Runs the parsed subcommand. Returns the process exit code; failures
  // write error.json and print it to `err`.
  int execute(std::ostream& out, std::ostream& err);

 private:
  template <class T>
  void bind(CLI::App* sub, const std::string& flag, T& (*access)(RunConfig&), const std::string& desc);
  void bind_flag(CLI::App* sub, const std::string& flag, bool& (*access)(RunConfig&), const std::string& desc);
  void add_common(CLI::App* sub);

  std::unique_ptr<CLI::App> app_;
  RunConfig flags_;
  Paths paths_;
  std::vector<std::pair<CLI::Option*, std::function<void(RunConfig&, RunConfig&)>>> overrides_;
};

// Process entry point: parse, execute, map errors to exit codes.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

// Run directory resolution: an explicit --out wins (relative paths are placed
// under $EARSR_RUN_DIR when set), otherwise <root>/<command>-<UTC stamp>.
std::filesystem::path resolve_run_dir(const std::string& out, const std::string& command);

}  // namespace earsr::cli
