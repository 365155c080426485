// Command-line front end over the dcav C API.
//
//   dcav <subcommand> [--config FILE] [--key value ...]
//
// Every configuration key is accepted as a flag of the same name.

#include <cstdio>
#include <cstdlib>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dcav/dcav.h"

namespace {

struct Subcommand {
  CLI::App* app = nullptr;
  std::string config_file;
  std::map<std::string, std::string> values;
  std::map<std::string, CLI::Option*> options;
};

const char* summary(const std::string& command) {
  static const std::map<std::string, const char*> text{
      {"extract-audio", "compute MFCC or CQT features for every WAV in the data directory"},
      {"synth-data", "generate the synthetic audio-visual dataset"},
      {"build-vocab", "build the vocabulary from training captions"},
      {"pretrain", "pretrain the caption generator on whole-video segments"},
      {"train", "joint weakly supervised training from the pretrained generator"},
      {"infer", "dense captions for a split"},
      {"evaluate", "score predictions against ground truth"},
      {"gradcheck", "finite-difference gradient suite"},
      {"compare-fusion", "retrain with every fusion strategy and the video-only baseline"},
  };
  const auto it = text.find(command);
  return it == text.end() ? "" : it->second;
}

}  // namespace

int main(int argc, char** argv) {
  if (const char* level = std::getenv("DCAV_LOG")) {
    if (dcav_set_log_level(level) != DCAV_OK) {
      std::fprintf(stderr, "error: DCAV_LOG: %s\n", dcav_last_error());
      return 2;
    }
  }

  CLI::App app{"Weakly supervised audio-visual dense event captioning"};
  app.require_subcommand(1);
  app.set_version_flag("--version", dcav_version());

  std::vector<std::unique_ptr<Subcommand>> subs;
  for (std::size_t i = 0; i < dcav_command_count(); ++i) {
    const std::string name = dcav_command_name(i);
    auto sub = std::make_unique<Subcommand>();
    sub->app = app.add_subcommand(name, summary(name));
    sub->app->add_option("--config", sub->config_file, "flat key = value file; flags override it")
        ->check(CLI::ExistingFile);
    for (std::size_t k = 0; k < dcav_config_key_count(); ++k) {
      const std::string key = dcav_config_key_name(k);
      std::string help = dcav_config_key_help(k);
      const std::string def = dcav_config_key_default(k);
      if (!def.empty()) help += " [" + def + "]";
      sub->options[key] = sub->app->add_option("--" + key, sub->values[key], help);
    }
    subs.push_back(std::move(sub));
  }

  CLI11_PARSE(app, argc, argv);

  for (const auto& sub : subs) {
    if (!sub->app->parsed()) continue;
    dcav_config* config = nullptr;
    if (dcav_config_create(sub->app->get_name().c_str(), &config) != DCAV_OK) {
      std::fprintf(stderr, "error: %s\n", dcav_last_error());
      return 1;
    }
    std::unique_ptr<dcav_config, void (*)(dcav_config*)> guard(config, dcav_config_destroy);
    if (!sub->config_file.empty() && dcav_config_load_file(config, sub->config_file.c_str()) != DCAV_OK) {
      std::fprintf(stderr, "error: %s\n", dcav_last_error());
      return 1;
    }
    for (const auto& [key, option] : sub->options) {
      if (option->count() == 0) continue;
      if (dcav_config_set(config, key.c_str(), sub->values[key].c_str()) != DCAV_OK) {
        std::fprintf(stderr, "error: %s\n", dcav_last_error());
        return 1;
      }
    }
    int exit_code = 1;
    if (dcav_run(config, &exit_code) != DCAV_OK) {
      std::fprintf(stderr, "error: %s\n", dcav_last_error());
      return exit_code == 0 ? 1 : exit_code;
    }
    return exit_code;
  }
  return 1;
}
