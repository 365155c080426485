#include "dcav/dcav.h"

#include <algorithm>
#include <exception>
#include <new>
#include <string>

#include <spdlog/spdlog.h>

#include "dcav/error.hpp"
#include "dcav/pipeline.hpp"

struct dcav_config {
  std::string command;
  dcav::pipeline::KeyValues file;
  dcav::pipeline::KeyValues flags;
  std::string resolved;
};

namespace {

thread_local std::string last_error;

dcav_status fail(dcav_status status, const std::string& message) {
  last_error = message;
  return status;
}

template <class F>
dcav_status guarded(F&& f) {
  try {
    f();
    last_error.clear();
    return DCAV_OK;
  } catch (const dcav::InvalidArgument& e) {
    return fail(DCAV_ERR_INVALID_ARGUMENT, e.what());
  } catch (const dcav::ShapeError& e) {
    return fail(DCAV_ERR_SHAPE, e.what());
  } catch (const dcav::NonFiniteError& e) {
    return fail(DCAV_ERR_NON_FINITE, e.what());
  } catch (const dcav::DataError& e) {
    return fail(DCAV_ERR_DATA, e.what());
  } catch (const dcav::IoError& e) {
    return fail(DCAV_ERR_IO, e.what());
  } catch (const std::bad_alloc&) {
    return fail(DCAV_ERR_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return fail(DCAV_ERR_INTERNAL, e.what());
  } catch (...) {
    return fail(DCAV_ERR_INTERNAL, "unknown error");
  }
}

bool known_key(const std::string& key) {
  for (const auto& k : dcav::pipeline::config_keys()) {
    if (key == k.key) return true;
  }
  return false;
}

}  // namespace

extern "C" {

const char* dcav_version(void) { return "0.1.0"; }

const char* dcav_last_error(void) { return last_error.c_str(); }

dcav_status dcav_set_log_level(const char* level) {
  if (!level) return fail(DCAV_ERR_INVALID_ARGUMENT, "null log level");
  const std::string l(level);
  if (l == "debug") {
    spdlog::set_level(spdlog::level::debug);
  } else if (l == "info") {
    spdlog::set_level(spdlog::level::info);
  } else if (l == "warn") {
    spdlog::set_level(spdlog::level::warn);
  } else if (l == "error") {
    spdlog::set_level(spdlog::level::err);
  } else {
    return fail(DCAV_ERR_INVALID_ARGUMENT, "unknown log level '" + l + "'");
  }
  return DCAV_OK;
}

size_t dcav_command_count(void) { return dcav::pipeline::kCommands.size(); }

const char* dcav_command_name(size_t index) {
  const auto& c = dcav::pipeline::kCommands;
  return index < c.size() ? c[index].c_str() : nullptr;
}

size_t dcav_config_key_count(void) { return dcav::pipeline::config_keys().size(); }

const char* dcav_config_key_name(size_t index) {
  const auto& k = dcav::pipeline::config_keys();
  return index < k.size() ? k[index].key : nullptr;
}

const char* dcav_config_key_default(size_t index) {
  const auto& k = dcav::pipeline::config_keys();
  return index < k.size() ? k[index].default_value : nullptr;
}

const char* dcav_config_key_help(size_t index) {
  const auto& k = dcav::pipeline::config_keys();
  return index < k.size() ? k[index].help : nullptr;
}

dcav_status dcav_config_create(const char* command, dcav_config** out) {
  if (!command || !out) return fail(DCAV_ERR_INVALID_ARGUMENT, "null argument");
  *out = nullptr;
  const auto& c = dcav::pipeline::kCommands;
  if (std::find(c.begin(), c.end(), command) == c.end()) {
    return fail(DCAV_ERR_INVALID_ARGUMENT, std::string("unknown subcommand '") + command + "'");
  }
  return guarded([&] { *out = new dcav_config{command, {}, {}, {}}; });
}

void dcav_config_destroy(dcav_config* config) { delete config; }

dcav_status dcav_config_load_file(dcav_config* config, const char* path) {
  if (!config || !path) return fail(DCAV_ERR_INVALID_ARGUMENT, "null argument");
  return guarded([&] {
    for (const auto& [k, v] : dcav::pipeline::load_config(path)) config->file[k] = v;
  });
}

dcav_status dcav_config_set(dcav_config* config, const char* key, const char* value) {
  if (!config || !key || !value) return fail(DCAV_ERR_INVALID_ARGUMENT, "null argument");
  if (!known_key(key)) return fail(DCAV_ERR_INVALID_ARGUMENT, std::string("unknown option '") + key + "'");
  config->flags[key] = value;
  last_error.clear();
  return DCAV_OK;
}

dcav_status dcav_config_resolved(dcav_config* config, const char** text) {
  if (!config || !text) return fail(DCAV_ERR_INVALID_ARGUMENT, "null argument");
  return guarded([&] {
    config->resolved = dcav::pipeline::RunConfig(config->command, config->file, config->flags).to_text();
    *text = config->resolved.c_str();
  });
}

dcav_status dcav_run(const dcav_config* config, int* exit_code) {
  if (!config || !exit_code) return fail(DCAV_ERR_INVALID_ARGUMENT, "null argument");
  *exit_code = 1;
  return guarded([&] {
    const dcav::pipeline::RunConfig rc(config->command, config->file, config->flags);
    *exit_code = dcav::pipeline::run(rc);
  });
}

double dcav_tiou(double c1, double l1, double c2, double l2) {
  return dcav::tiou(dcav::Segment{c1, l1}, dcav::Segment{c2, l2});
}

}  // extern "C"
