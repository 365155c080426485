#ifndef DCAV_DCAV_H
#define DCAV_DCAV_H

#include <stddef.h>

#if defined(DCAV_BUILDING_LIBRARY)
#define DCAV_API __attribute__((visibility("default")))
#else
#define DCAV_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum dcav_status {
  DCAV_OK = 0,
  DCAV_ERR_INVALID_ARGUMENT = 1, /* unknown key or subcommand, bad value, config conflict */
  DCAV_ERR_SHAPE = 2,
  DCAV_ERR_NON_FINITE = 3,
  DCAV_ERR_DATA = 4, /* malformed annotations, features, WAV or checkpoint */
  DCAV_ERR_IO = 5,   /* missing or unwritable file */
  DCAV_ERR_INTERNAL = 6
} dcav_status;

/* Opaque run configuration: a subcommand plus key/value settings. */
typedef struct dcav_config dcav_config;

DCAV_API const char* dcav_version(void);

/* Message of the last failed call on this thread ("" if none). */
DCAV_API const char* dcav_last_error(void);

/* "debug", "info", "warn" or "error". */
DCAV_API dcav_status dcav_set_log_level(const char* level);

DCAV_API size_t dcav_command_count(void);
DCAV_API const char* dcav_command_name(size_t index);

/* Recognized configuration keys with defaults (may be "") and help text. */
DCAV_API size_t dcav_config_key_count(void);
DCAV_API const char* dcav_config_key_name(size_t index);
DCAV_API const char* dcav_config_key_default(size_t index);
DCAV_API const char* dcav_config_key_help(size_t index);

DCAV_API dcav_status dcav_config_create(const char* command, dcav_config** out);
DCAV_API void dcav_config_destroy(dcav_config* config);

/* Reads `key = value` lines. Values from the file rank below dcav_config_set. */
DCAV_API dcav_status dcav_config_load_file(dcav_config* config, const char* path);
DCAV_API dcav_status dcav_config_set(dcav_config* config, const char* key, const char* value);

/* Fully resolved configuration as `key = value` lines. The string stays valid
   until the next call on this handle. */
DCAV_API dcav_status dcav_config_resolved(dcav_config* config, const char** text);

/* Runs the subcommand. *exit_code receives the process status it implies
   (gradcheck returns 1 when a check fails). */
DCAV_API dcav_status dcav_run(const dcav_config* config, int* exit_code);

/* Temporal IoU of two (center, length) segments. */
DCAV_API double dcav_tiou(double c1, double l1, double c2, double l2);

#ifdef __cplusplus
}
#endif

#endif
