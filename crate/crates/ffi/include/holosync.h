#ifndef HOLOSYNC_H
#define HOLOSYNC_H

/* Generated from the holosync-ffi crate by cbindgen. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum HsStatus {
  HS_STATUS_OK = 0,
  HS_STATUS_NULL_POINTER = 1,
  HS_STATUS_INVALID_UTF8 = 2,
  HS_STATUS_MALFORMED = 3,
  HS_STATUS_REJECTED = 4,
  HS_STATUS_NOT_FOUND = 5,
  HS_STATUS_IO = 6,
  /**
   * Nothing to poll.
   */
  HS_STATUS_EMPTY = 7,
  HS_STATUS_INVALID_ARGUMENT = 8,
  HS_STATUS_PANIC = 9,
} HsStatus;

/**
 * Opaque session handle.
 */
typedef struct HsSession HsSession;

typedef struct HsVec3 {
  double x;
  double y;
  double z;
} HsVec3;

/**
 * Component order x, y, z, w.
 */
typedef struct HsQuat {
  double x;
  double y;
  double z;
  double w;
} HsQuat;

typedef struct HsPose {
  struct HsVec3 position;
  struct HsQuat rotation;
  struct HsVec3 scale;
} HsPose;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *hs_last_error(void);

/**
 * # Safety
 * All pointers must be valid for the duration of the call.
 */
enum HsStatus hs_pose_compose(const struct HsPose *parent,
                              const struct HsPose *child,
                              struct HsPose *out);

/**
 * Pose of `child` expressed in `parent`'s frame.
 *
 * # Safety
 * All pointers must be valid for the duration of the call.
 */
enum HsStatus hs_pose_relative(const struct HsPose *parent,
                               const struct HsPose *child,
                               struct HsPose *out);

/**
 * Creates an empty session with default engine settings.
 *
 * # Safety
 * `session_id` must be a NUL-terminated string; `out` must be writable.
 */
enum HsStatus hs_session_new(const char *session_id, struct HsSession **out);

/**
 * Restores a session saved with [`hs_session_save`].
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum HsStatus hs_session_load(const char *path, struct HsSession **out);

/**
 * # Safety
 * `session` must be null or a handle from this library, not used afterwards.
 */
void hs_session_free(struct HsSession *session);

/**
 * Joins a device described by a JSON descriptor. Its first polled message
 * is the welcome snapshot.
 *
 * # Safety
 * `session` must be a live handle; `descriptor_json` a NUL-terminated
 * string; `device_id` writable.
 */
enum HsStatus hs_session_join(struct HsSession *session,
                              const char *descriptor_json,
                              uint64_t now_ms,
                              uint32_t *device_id);

/**
 * Submits one encoded control envelope from `sender`.
 *
 * # Safety
 * `session` must be a live handle; `envelope_json` a NUL-terminated string.
 */
enum HsStatus hs_session_submit(struct HsSession *session,
                                uint32_t sender,
                                const char *envelope_json,
                                uint64_t now_ms);

/**
 * Advances the interaction engine by `dt` seconds.
 *
 * # Safety
 * `session` must be a live handle.
 */
enum HsStatus hs_session_tick(struct HsSession *session, double dt, uint64_t now_ms);

/**
 * Relays a binary stream frame from `sender` to the other devices.
 *
 * # Safety
 * `session` must be a live handle; `frame` must point to `len` bytes.
 */
enum HsStatus hs_session_relay_stream(struct HsSession *session,
                                      uint32_t sender,
                                      const uint8_t *frame,
                                      size_t len,
                                      uint64_t now_ms);

/**
 * Pops the next control message for `device` as JSON. Returns
 * `HS_STATUS_EMPTY` when none is queued. Free the result with
 * [`hs_string_free`].
 *
 * # Safety
 * `session` must be a live handle; `out` writable.
 */
enum HsStatus hs_session_poll(struct HsSession *session, uint32_t device, char **out);

/**
 * Pops the next stream frame for `device`. Free it with [`hs_bytes_free`].
 *
 * # Safety
 * `session` must be a live handle; `out` and `len` writable.
 */
enum HsStatus hs_session_poll_stream(struct HsSession *session,
                                     uint32_t device,
                                     uint8_t **out,
                                     size_t *len);

/**
 * Writes the 64-character hex state hash and a NUL into `out`.
 *
 * # Safety
 * `session` must be a live handle; `out` must hold at least 65 bytes.
 */
enum HsStatus hs_session_state_hash(const struct HsSession *session, char *out);

/**
 * Current session state as JSON. Free the result with [`hs_string_free`].
 *
 * # Safety
 * `session` must be a live handle; `out` writable.
 */
enum HsStatus hs_session_state_json(const struct HsSession *session, char **out);

/**
 * # Safety
 * `session` must be a live handle; `path` a NUL-terminated string.
 */
enum HsStatus hs_session_save(const struct HsSession *session, const char *path);

/**
 * # Safety
 * `s` must be null or a string returned by this library, not freed before.
 */
void hs_string_free(char *s);

/**
 * # Safety
 * `buf` and `len` must come from [`hs_session_poll_stream`].
 */
void hs_bytes_free(uint8_t *buf, size_t len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HOLOSYNC_H */
