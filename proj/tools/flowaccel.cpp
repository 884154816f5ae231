// flowaccel <command> --config <path> [--out <path>] [--seed <u64>] [--verbose]
//
// Exit codes: 0 success, 1 an internal assertion failed, 2 bad usage or
// config, 3 any other runtime failure.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "flowaccel/experiments.hpp"

namespace fx = flowaccel::experiments;

namespace {

std::size_t thread_cap() {
  const char* env = std::getenv("TOOL_THREADS");
  if (!env || !*env) return 1;
  char* end = nullptr;
  const unsigned long long n = std::strtoull(env, &end, 10);
  if (*end != '\0' || n == 0) {
    throw flowaccel::ConfigError("TOOL_THREADS", "expected a positive integer, got '" +
                                                     std::string(env) + "'");
  }
  return static_cast<std::size_t>(n);
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << text;
  if (!f) throw std::runtime_error("write failed: " + path);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Rectified-flow sampling, token merging and block pipeline experiments"};
  app.require_subcommand(1);

  std::string config_path, out_path;
  std::uint64_t seed = 0;
  bool verbose = false;
  for (const auto& [name, fn] : fx::commands()) {
    auto* sub = app.add_subcommand(name);
    sub->add_option("--config", config_path, "JSON experiment config")->required();
    sub->add_option("--out", out_path, "CSV output path (default stdout)");
    sub->add_option("--seed", seed, "override the config seed");
    sub->add_flag("--verbose", verbose, "diagnostics on stderr");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  auto* sub = app.get_subcommand(command);
  try {
    fx::Options opt;
    if (sub->count("--seed")) opt.seed = seed;
    opt.threads = thread_cap();
    if (verbose) opt.log = &std::cerr;

    std::ifstream in(config_path);
    if (!in) throw flowaccel::ConfigError(config_path, "cannot open config");
    flowaccel::json config;
    try {
      config = flowaccel::json::parse(in);
    } catch (const flowaccel::json::parse_error& e) {
      throw flowaccel::ConfigError(config_path, e.what());
    }

    const fx::Output out = fx::commands().at(command)(config, opt);
    if (out_path.empty()) {
      std::cout << out.csv;
    } else {
      write_file(out_path, out.csv);
    }
    for (const auto& [path, text] : out.files) write_file(path, text);
    return 0;
  } catch (const flowaccel::ConfigError& e) {
    std::cerr << "flowaccel " << command << ": config error: " << e.what() << '\n';
    return 2;
  } catch (const fx::AssertionFailure& e) {
    std::cerr << "flowaccel " << command << ": " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "flowaccel " << command << ": " << e.what() << '\n';
    return 3;
  }
}
