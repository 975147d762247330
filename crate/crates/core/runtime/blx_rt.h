/* blxc runtime support 0.1.0
 *
 * Interface between generated model code (model.c or tasks.c), the thread
 * shim (blx_rt.c) and a trace harness. Kernels below follow the same
 * evaluation order as the blxc simulator, so compiled results match it bit
 * for bit when built with -std=c99 (no floating-point contraction).
 */
#ifndef BLX_RT_H
#define BLX_RT_H

#include <math.h>
#include <stddef.h>
#include <stdint.h>

#define BLX_RT_VERSION "0.1.0"

/* ports */

enum blx_shape { BLX_SCALAR, BLX_VECTOR, BLX_MATRIX, BLX_CLOUD };

/* A root port. Dense data is row-major with rows * cols elements; a cloud
 * has capacity `rows`, three columns and its row count in `*count`. */
typedef struct {
    const char *name;
    enum blx_shape shape;
    size_t rows;
    size_t cols;
    double *data;
    size_t *count;
} blx_port;

/* Supplied by generated code. */
extern const blx_port blx_inputs[];
extern const size_t blx_input_count;
extern const blx_port blx_outputs[];
extern const size_t blx_output_count;
int blx_start(void);
void blx_step(void);
void blx_stop(void);

/* Supplied by the runtime: reports a runtime error and does not return. */
void blx_fail(const char *msg);

/* threads and barrier */

typedef struct blx_barrier blx_barrier;
typedef struct blx_thread *blx_thread;

blx_barrier *blx_barrier_new(unsigned parties);
void blx_barrier_wait(blx_barrier *b);
void blx_barrier_free(blx_barrier *b);
int blx_thread_spawn(blx_thread *t, void (*fn)(void *), void *arg);
void blx_thread_join(blx_thread t);

/* ready flags: hold the last step mark that wrote a variable */

typedef struct {
    uint64_t mark;
} blx_flag;

#if defined(__GNUC__) || defined(__clang__)
static inline void blx_flag_set(blx_flag *f, uint64_t mark)
{
    __atomic_store_n(&f->mark, mark, __ATOMIC_RELEASE);
}

static inline void blx_flag_wait(blx_flag *f, uint64_t mark)
{
    while (__atomic_load_n(&f->mark, __ATOMIC_ACQUIRE) < mark) {
    }
}
#else
#error "blx_rt.h needs GCC-compatible __atomic builtins"
#endif

/* kernels */

static inline double blx_sat(double x, double lo, double hi)
{
    return x > hi ? hi : (x < lo ? lo : x);
}

static inline void blx_copy_rows(double (*dst)[3], double (*src)[3], size_t n)
{
    for (size_t i = 0; i < n; i++) {
        dst[i][0] = src[i][0];
        dst[i][1] = src[i][1];
        dst[i][2] = src[i][2];
    }
}

/* Bit pattern of x with -0 folded into +0. */
static inline uint64_t blx_key_bits(double x)
{
    union {
        double d;
        uint64_t u;
    } v;
    v.d = x + 0.0;
    return v.u;
}

static inline int blx_same_key(const double *a, const double *b)
{
    return blx_key_bits(a[0]) == blx_key_bits(b[0]) && blx_key_bits(a[1]) == blx_key_bits(b[1])
        && blx_key_bits(a[2]) == blx_key_bits(b[2]);
}

/* Indices (as doubles) of the first row carrying each distinct key, in
 * input order. Quadratic in the number of distinct keys. */
static inline void blx_first_unique(double (*keys)[3], size_t n, double *out, size_t *out_n)
{
    size_t m = 0;
    for (size_t i = 0; i < n; i++) {
        size_t s = 0;
        while (s < m && !blx_same_key(keys[(size_t)out[s]], keys[i])) {
            s++;
        }
        if (s == m) {
            out[m++] = (double)i;
        }
    }
    *out_n = m;
}

/* One point per occupied voxel in first-occurrence order: the first point,
 * or the mean of the cell when `centroid` is set. Scratch: keys[n][3],
 * firsts[n], slot[n], sums[n][4]. Returns -1 for a non-positive leaf. */
static inline int blx_voxel_grid(double (*in)[3], size_t n, double leaf, int centroid,
                                 double (*keys)[3], double *firsts, size_t *slot,
                                 double (*sums)[4], double (*out)[3], size_t *out_n)
{
    size_t m;
    if (!(leaf > 0.0)) {
        return -1;
    }
    for (size_t i = 0; i < n; i++) {
        keys[i][0] = floor(in[i][0] / leaf);
        keys[i][1] = floor(in[i][1] / leaf);
        keys[i][2] = floor(in[i][2] / leaf);
    }
    blx_first_unique(keys, n, firsts, &m);
    *out_n = m;
    if (!centroid) {
        for (size_t s = 0; s < m; s++) {
            size_t i = (size_t)firsts[s];
            out[s][0] = in[i][0];
            out[s][1] = in[i][1];
            out[s][2] = in[i][2];
        }
        return 0;
    }
    for (size_t i = 0; i < n; i++) {
        size_t s = 0;
        while (!blx_same_key(keys[(size_t)firsts[s]], keys[i])) {
            s++;
        }
        slot[i] = s;
    }
    for (size_t s = 0; s < m; s++) {
        sums[s][0] = 0.0;
        sums[s][1] = 0.0;
        sums[s][2] = 0.0;
        sums[s][3] = 0.0;
    }
    for (size_t i = 0; i < n; i++) {
        double *acc = sums[slot[i]];
        acc[0] = acc[0] + in[i][0];
        acc[1] = acc[1] + in[i][1];
        acc[2] = acc[2] + in[i][2];
        acc[3] = acc[3] + 1.0;
    }
    for (size_t s = 0; s < m; s++) {
        out[s][0] = sums[s][0] / sums[s][3];
        out[s][1] = sums[s][1] / sums[s][3];
        out[s][2] = sums[s][2] / sums[s][3];
    }
    return 0;
}

/* xoshiro256** seeded through splitmix64 */

typedef struct {
    uint64_t s[4];
} blx_rng;

static inline uint64_t blx_rotl(uint64_t x, int k)
{
    return (x << k) | (x >> (64 - k));
}

static inline void blx_rng_seed(blx_rng *r, uint64_t seed)
{
    uint64_t x = seed;
    for (int i = 0; i < 4; i++) {
        uint64_t z;
        x += UINT64_C(0x9e3779b97f4a7c15);
        z = x;
        z = (z ^ (z >> 30)) * UINT64_C(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)) * UINT64_C(0x94d049bb133111eb);
        r->s[i] = z ^ (z >> 31);
    }
}

static inline uint64_t blx_rng_next(blx_rng *r)
{
    uint64_t *s = r->s;
    uint64_t result = blx_rotl(s[1] * 5, 7) * 9;
    uint64_t t = s[1] << 17;
    s[2] ^= s[0];
    s[3] ^= s[1];
    s[1] ^= s[2];
    s[0] ^= s[3];
    s[2] ^= t;
    s[3] = blx_rotl(s[3], 45);
    return result;
}

/* min(n, max_n) distinct ascending indices (as doubles): partial
 * Fisher-Yates over 0..n. Scratch: perm[n], mark[n]. */
static inline void blx_random_indices(size_t n, size_t max_n, uint64_t seed, size_t *perm,
                                      unsigned char *mark, double *out, size_t *out_n)
{
    blx_rng rng;
    size_t m = 0;
    if (n <= max_n) {
        for (size_t i = 0; i < n; i++) {
            out[i] = (double)i;
        }
        *out_n = n;
        return;
    }
    blx_rng_seed(&rng, seed);
    for (size_t i = 0; i < n; i++) {
        perm[i] = i;
        mark[i] = 0;
    }
    for (size_t i = 0; i < max_n; i++) {
        size_t j = i + (size_t)(blx_rng_next(&rng) % (uint64_t)(n - i));
        size_t tmp = perm[i];
        perm[i] = perm[j];
        perm[j] = tmp;
    }
    for (size_t i = 0; i < max_n; i++) {
        mark[perm[i]] = 1;
    }
    for (size_t i = 0; i < n; i++) {
        if (mark[i]) {
            out[m++] = (double)i;
        }
    }
    *out_n = m;
}

static inline void blx_gather(double (*in)[3], size_t n, const double *idx, size_t m,
                              double (*out)[3])
{
    for (size_t i = 0; i < m; i++) {
        double k = idx[i];
        if (!(k >= 0.0 && floor(k) == k && k < (double)n)) {
            blx_fail("gather index out of range");
        }
        out[i][0] = in[(size_t)k][0];
        out[i][1] = in[(size_t)k][1];
        out[i][2] = in[(size_t)k][2];
    }
}

#endif
