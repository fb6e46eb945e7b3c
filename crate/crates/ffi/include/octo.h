#ifndef OCTO_H
#define OCTO_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum OctoStatus {
  OCTO_STATUS_OK = 0,
  OCTO_STATUS_NULL_ARGUMENT = 1,
  OCTO_STATUS_INVALID_ARGUMENT = 2,
  OCTO_STATUS_UNAUTHORIZED = 3,
  OCTO_STATUS_NOT_FOUND = 4,
  OCTO_STATUS_TRANSPORT = 5,
  OCTO_STATUS_TIMEOUT = 6,
  OCTO_STATUS_FAILED = 7,
  OCTO_STATUS_PANIC = 8,
} OctoStatus;

typedef struct OctoConsumer OctoConsumer;

typedef struct OctoFabric OctoFabric;

typedef struct OctoPattern OctoPattern;

typedef struct OctoProducer OctoProducer;

/*
 Result of a blocking send.
 */
typedef struct OctoDelivery {
  /*
   -1 when the broker did not report one (acks=0).
   */
  int32_t partition;
  /*
   -1 when sent with acks=0.
   */
  int64_t offset;
  double latency_ms;
} OctoDelivery;

/*
 One consumed record. `key` and `value` are owned by the record; release
 them with [`octo_record_clear`].
 */
typedef struct OctoRecord {
  uint32_t partition;
  uint64_t offset;
  int64_t timestamp_ms;
  uint8_t *key;
  size_t key_len;
  uint8_t *value;
  size_t value_len;
} OctoRecord;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message for the last failed call on this thread. Valid until the next
 failing call on the same thread.
 */
const char *octo_last_error(void);

/*
 # Safety
 `s` must come from an octo function documented as returning an owned
 string, and must not be freed twice.
 */
void octo_string_free(char *s);

/*
 Compiles a pattern document.

 # Safety
 `json` must be a NUL-terminated string and `out` a valid pointer.
 */
enum OctoStatus octo_pattern_compile(const char *json, struct OctoPattern **out);

/*
 Tests a JSON body against a compiled pattern.

 # Safety
 `pattern` must come from [`octo_pattern_compile`]; `body` must be a
 NUL-terminated string and `matched` a valid pointer.
 */
enum OctoStatus octo_pattern_matches(const struct OctoPattern *pattern,
                                     const char *body,
                                     bool *matched);

/*
 # Safety
 `pattern` must come from [`octo_pattern_compile`] or be NULL.
 */
void octo_pattern_free(struct OctoPattern *pattern);

/*
 Connects a producer. `acks` is 0, 1, or -1 for all in-sync replicas.

 # Safety
 String arguments must be NUL-terminated, `secret` must point to
 `secret_len` bytes and `out` must be valid.
 */
enum OctoStatus octo_producer_new(const char *brokers_csv,
                                  const char *key_id,
                                  const uint8_t *secret,
                                  size_t secret_len,
                                  int32_t acks,
                                  struct OctoProducer **out);

/*
 Sends one record and waits up to `timeout_ms` for its delivery report.

 # Safety
 `producer` must be live, `topic` NUL-terminated, `key`/`value` valid for
 their lengths, and `report` valid or NULL.
 */
enum OctoStatus octo_producer_send(const struct OctoProducer *producer,
                                   const char *topic,
                                   const uint8_t *key,
                                   size_t key_len,
                                   const uint8_t *value,
                                   size_t value_len,
                                   uint32_t timeout_ms,
                                   struct OctoDelivery *report);

/*
 # Safety
 `producer` must come from [`octo_producer_new`] or be NULL.
 */
void octo_producer_free(struct OctoProducer *producer);

/*
 Subscribes to every partition of `topic`. `group` may be NULL. `start`
 is 0 for earliest, 1 for latest.

 # Safety
 String arguments must be NUL-terminated (except a NULL `group`),
 `secret` valid for `secret_len` bytes and `out` valid.
 */
enum OctoStatus octo_consumer_new(const char *brokers_csv,
                                  const char *key_id,
                                  const uint8_t *secret,
                                  size_t secret_len,
                                  const char *topic,
                                  const char *group,
                                  int32_t start,
                                  struct OctoConsumer **out);

/*
 Fills `record` with the next record, waiting up to `timeout_ms`. Sets
 `*got` to false when nothing arrived.

 # Safety
 `consumer` must be live and used from one thread at a time; `record` and
 `got` must be valid.
 */
enum OctoStatus octo_consumer_next(struct OctoConsumer *consumer,
                                   uint32_t timeout_ms,
                                   struct OctoRecord *record,
                                   bool *got);

/*
 Releases the buffers of a record filled by [`octo_consumer_next`].

 # Safety
 `record` must be valid; its buffers must not be used afterwards.
 */
void octo_record_clear(struct OctoRecord *record);

/*
 Commits the positions of everything returned so far.

 # Safety
 `consumer` must be live.
 */
enum OctoStatus octo_consumer_commit(struct OctoConsumer *consumer);

/*
 # Safety
 `consumer` must come from [`octo_consumer_new`] or be NULL.
 */
void octo_consumer_free(struct OctoConsumer *consumer);

/*
 Starts brokers, trigger engine and control plane on ephemeral local
 ports, keeping data under `data_dir`.

 # Safety
 `data_dir` must be NUL-terminated and `out` valid.
 */
enum OctoStatus octo_fabric_start(const char *data_dir, uint32_t brokers, struct OctoFabric **out);

/*
 Comma-separated broker addresses; free with [`octo_string_free`].

 # Safety
 `fabric` must be live.
 */
char *octo_fabric_broker_addrs(const struct OctoFabric *fabric);

/*
 Control-plane base URL; free with [`octo_string_free`].

 # Safety
 `fabric` must be live.
 */
char *octo_fabric_control_url(const struct OctoFabric *fabric);

/*
 Adds a login identity.

 # Safety
 `fabric` must be live and the strings NUL-terminated.
 */
enum OctoStatus octo_fabric_add_identity(const struct OctoFabric *fabric,
                                         const char *identity,
                                         const char *password);

/*
 Registers a 32-byte data key for `identity`.

 # Safety
 `fabric` must be live, strings NUL-terminated and `secret` 32 bytes.
 */
enum OctoStatus octo_fabric_register_key(const struct OctoFabric *fabric,
                                         const char *identity,
                                         const char *key_id,
                                         const uint8_t *secret);

/*
 Creates a topic owned by `owner`.

 # Safety
 `fabric` must be live and strings NUL-terminated.
 */
enum OctoStatus octo_fabric_create_topic(const struct OctoFabric *fabric,
                                         const char *name,
                                         uint32_t partitions,
                                         uint32_t replication_factor,
                                         const char *owner);

/*
 Stops the fabric and releases the handle.

 # Safety
 `fabric` must come from [`octo_fabric_start`] or be NULL.
 */
void octo_fabric_stop(struct OctoFabric *fabric);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* OCTO_H */
