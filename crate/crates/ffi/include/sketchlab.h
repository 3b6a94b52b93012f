/* C interface to the sketchlab connectivity library.
 *
 * Maintained by hand; the Rust test suite checks it against the exported
 * symbol list. Link against libsketchlab_ffi (static or shared).
 *
 * Handles are opaque and thread-compatible (use one handle from one thread
 * at a time). Error messages are per-thread: after any failure, call
 * slab_last_error from the same thread.
 */

#ifndef SKETCHLAB_H
#define SKETCHLAB_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

/* Result of a fallible call. Mirrors the CLI exit codes where they
 * overlap: 2 for bad input, 3 for a blown message/enumeration cap. */
typedef enum slab_status {
  SLAB_OK = 0,
  SLAB_NULL_ARG = 1,
  SLAB_BAD_CONFIG = 2,
  SLAB_CAP_EXCEEDED = 3,
} slab_status;

/* Undirected graph on vertices 1..=n. */
typedef struct slab_graph slab_graph;

/* Linear sketch of one vertex's incident edges. */
typedef struct slab_sketch slab_sketch;

/* Verdict and message accounting of one simulated round. */
typedef struct slab_report {
  int32_t verdict;  /* 1 = scheme says connected */
  int32_t truth;    /* 1 = graph actually connected */
  double avg_bits;  /* mean per-vertex message size in bits */
  uint64_t max_bits; /* largest per-vertex message in bits */
} slab_report;

/* Copy the message from the last failed call on this thread into buf
 * (NUL-terminated, truncated to fit). Returns the full message length in
 * bytes, 0 if nothing failed yet. buf may be NULL when cap is 0. */
size_t slab_last_error(char *buf, size_t cap);

/* --- graphs ------------------------------------------------------------ */

/* Parse the text graph format ("n m" header, one "u v" edge per line,
 * '#' comments). NULL on malformed input. */
slab_graph *slab_graph_parse(const char *text);

/* Build a graph from a flat endpoint array [u1, v1, u2, v2, ...] of
 * edge_count pairs. Vertices are 1-based; self-loops are rejected and
 * duplicate edges collapse. */
slab_graph *slab_graph_from_edges(uint32_t n, const uint32_t *endpoints,
                                  size_t edge_count);

void slab_graph_free(slab_graph *g);

/* Vertex count; 0 for NULL. */
uint32_t slab_graph_n(const slab_graph *g);

/* Edge count; 0 for NULL. */
size_t slab_graph_edge_count(const slab_graph *g);

/* 1 if connected, 0 if not, -1 for NULL. */
int32_t slab_graph_connected(const slab_graph *g);

/* Erdos-Renyi graph at edge probability 2 ln n / n. */
slab_graph *slab_gen_er(uint32_t n, uint64_t seed);

/* Block-chain instance on n vertices (n must be a perfect square). When
 * connected_out is non-NULL it receives the stored ground truth. */
slab_graph *slab_gen_conn(uint32_t n, uint64_t seed, int32_t *connected_out);

/* --- one-round scheme -------------------------------------------------- */

/* Run the one-round protocol: every vertex sends its sketch, the referee
 * decides. scheme 0 keeps 32-bit fingerprints, 1 scales them with n.
 * Messages over cap_bits abort with SLAB_CAP_EXCEEDED. */
slab_status slab_run_one_round(const slab_graph *g, int32_t scheme,
                               uint64_t seed, uint64_t cap_bits,
                               slab_report *out);

/* --- vertex sketches --------------------------------------------------- */

/* Default sketch shape for an n-vertex graph. Any output pointer may be
 * NULL to skip that field. */
slab_status slab_sketch_dims(uint32_t n, uint32_t *levels, uint32_t *reps,
                             uint32_t *fp_bits, uint64_t *payload_bits);

/* Sketch of vertex's incident edges under the default shape for the graph.
 * Sketches from the same graph and seed XOR-merge. */
slab_sketch *slab_sketch_for_vertex(const slab_graph *g, uint32_t vertex,
                                    uint64_t seed);

void slab_sketch_free(slab_sketch *s);

/* XOR src into dst in place. Fails unless both sketches share the same
 * shape and seed. */
slab_status slab_sketch_merge(slab_sketch *dst, const slab_sketch *src);

/* Try to pull one edge out of repetition rep. Returns 1 and fills
 * u_out/v_out on success, 0 when the repetition is empty, -1 when no level
 * passes the one-sparse test, -2 on bad arguments. */
int32_t slab_sketch_extract(const slab_sketch *s, uint16_t rep,
                            uint32_t *u_out, uint32_t *v_out);

/* Serialize into buf. written receives the full size in bytes; when that
 * exceeds cap nothing is copied and the call still succeeds, so NULL buf
 * with cap 0 sizes the buffer. */
slab_status slab_sketch_serialize(const slab_sketch *s, uint8_t *buf,
                                  size_t cap, size_t *written);

/* Rebuild a sketch from slab_sketch_serialize output. The seed is not part
 * of the wire format and must be supplied again. */
slab_sketch *slab_sketch_deserialize(const uint8_t *bytes, size_t len,
                                     uint64_t seed);

/* --- reveal schedule --------------------------------------------------- */

/* Compute the reveal schedule for a universe-element puzzle at error
 * budget delta. t_buf receives up to t_cap schedule entries and t_len the
 * true count; m, b, rounds may be NULL. */
slab_status slab_urdec_schedule(uint64_t universe, double delta, uint32_t *m,
                                uint32_t *b, uint32_t *rounds, uint32_t *t_buf,
                                size_t t_cap, size_t *t_len);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* SKETCHLAB_H */
