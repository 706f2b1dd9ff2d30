#ifndef PALMSIM_H
#define PALMSIM_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Capacity of [`PsimMessage::text`] including the terminating NUL.
 */
#define PSIM_TEXT_CAPACITY 1024

typedef enum PsimStatus {
  PSIM_STATUS_OK = 0,
  PSIM_STATUS_NULL_POINTER = 1,
  PSIM_STATUS_INVALID_ARGUMENT = 2,
  PSIM_STATUS_UNREACHABLE = 3,
  PSIM_STATUS_NOT_IN_NON_TOUCH_POSE = 4,
  PSIM_STATUS_MALFORMED = 5,
  PSIM_STATUS_BUFFER_TOO_SMALL = 6,
  PSIM_STATUS_CONFIG = 7,
  PSIM_STATUS_PANIC = 8,
} PsimStatus;

typedef enum PsimMessageKind {
  PSIM_MESSAGE_KIND_HELLO = 0,
  PSIM_MESSAGE_KIND_SET_TARGET = 1,
  PSIM_MESSAGE_KIND_FORCE_REPORT = 2,
  PSIM_MESSAGE_KIND_CALIBRATE = 3,
  PSIM_MESSAGE_KIND_ERROR = 4,
} PsimMessageKind;

typedef struct PsimDevice PsimDevice;

/**
 * Discrete impedance model plus its state.
 */
typedef struct PsimImpedance PsimImpedance;

typedef struct PsimLinkage PsimLinkage;

/**
 * Flat view of a protocol message; fields not used by `kind` are zero.
 */
typedef struct PsimMessage {
  /**
   * A [`PsimMessageKind`] value.
   */
  uint32_t kind;
  uint32_t version;
  uint32_t unit;
  uint32_t code;
  double x;
  double y;
  double force;
  /**
   * NUL-terminated UTF-8, `Error` only.
   */
  char text[PSIM_TEXT_CAPACITY];
} PsimMessage;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread; empty after a success.
 * Valid until the next call on the same thread.
 */
const char *psim_last_error(void);

/**
 * Library version, static NUL-terminated string.
 */
const char *psim_version(void);

/**
 * Mass (kg), damping (N s/m), stiffness (N/m), sample time (s).
 */
enum PsimStatus psim_impedance_new(double mass,
                                   double damping,
                                   double stiffness,
                                   double sample_time,
                                   struct PsimImpedance **out);

/**
 * # Safety
 * `h` must come from `psim_impedance_new` and not be used afterwards.
 */
void psim_impedance_free(struct PsimImpedance *h);

enum PsimStatus psim_impedance_reset(struct PsimImpedance *h);

/**
 * One step under external force `force` (N). Displacement in m, velocity in
 * m/s; either output may be null.
 */
enum PsimStatus psim_impedance_step(struct PsimImpedance *h,
                                    double force,
                                    double *displacement,
                                    double *velocity);

/**
 * Row-major transition matrix (4 values) and input gain (2 values).
 */
enum PsimStatus psim_impedance_matrices(const struct PsimImpedance *h,
                                        double *transition,
                                        double *input_gain);

/**
 * Lengths in mm, servo limits in degrees.
 */
enum PsimStatus psim_linkage_new(double base_separation,
                                 double proximal,
                                 double distal,
                                 double servo_min_deg,
                                 double servo_max_deg,
                                 struct PsimLinkage **out);

enum PsimStatus psim_linkage_default(struct PsimLinkage **out);

/**
 * # Safety
 * `h` must come from `psim_linkage_new`/`psim_linkage_default`.
 */
void psim_linkage_free(struct PsimLinkage *h);

/**
 * Servo angles in radians to contact point in mm.
 */
enum PsimStatus psim_linkage_forward(const struct PsimLinkage *h,
                                     double left_rad,
                                     double right_rad,
                                     double *x,
                                     double *y);

/**
 * Contact point in mm to servo angles in radians.
 */
enum PsimStatus psim_linkage_inverse(const struct PsimLinkage *h,
                                     double x,
                                     double y,
                                     double *left_rad,
                                     double *right_rad);

/**
 * Builds a device from TOML texts; a null text selects the defaults.
 *
 * # Safety
 * Non-null strings must be NUL-terminated.
 */
enum PsimStatus psim_device_new(const char *geometry_toml,
                                const char *sim_toml,
                                uint64_t seed,
                                struct PsimDevice **out);

/**
 * # Safety
 * `h` must come from `psim_device_new`.
 */
void psim_device_free(struct PsimDevice *h);

/**
 * Advances `dt` seconds toward `targets` (x0, y0, x1, y1, x2, y2 in mm) and
 * writes three sensed forces (N). `forces` may be null.
 */
enum PsimStatus psim_device_tick(struct PsimDevice *h,
                                 const double *targets,
                                 double dt,
                                 double *forces);

enum PsimStatus psim_device_calibrate(struct PsimDevice *h);

/**
 * Current contact point of `unit` (0..2), mm.
 */
enum PsimStatus psim_device_position(const struct PsimDevice *h,
                                     uint32_t unit,
                                     double *x,
                                     double *y);

/**
 * Encodes `msg` into `buf` (not NUL-terminated). `written` receives the
 * line length, or the required capacity on `BufferTooSmall`.
 */
enum PsimStatus psim_encode(const struct PsimMessage *msg,
                            uint8_t *buf,
                            size_t capacity,
                            size_t *written);

/**
 * Decodes one line of `len` bytes (terminator optional).
 */
enum PsimStatus psim_decode(const uint8_t *line, size_t len, struct PsimMessage *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PALMSIM_H */
