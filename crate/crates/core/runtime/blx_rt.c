/* blxc runtime support 0.1.0: POSIX threads behind the blx_rt.h shim. */
#define _POSIX_C_SOURCE 200809L

#include <pthread.h>
#include <stdio.h>
#include <stdlib.h>

#include "blx_rt.h"

struct blx_barrier {
    pthread_mutex_t lock;
    pthread_cond_t cond;
    unsigned parties;
    unsigned waiting;
    unsigned long generation;
};

struct blx_thread {
    pthread_t handle;
    void (*fn)(void *);
    void *arg;
};

void blx_fail(const char *msg)
{
    fprintf(stderr, "blx: %s\n", msg);
    exit(3);
}

blx_barrier *blx_barrier_new(unsigned parties)
{
    blx_barrier *b = malloc(sizeof *b);
    if (b == NULL) {
        return NULL;
    }
    pthread_mutex_init(&b->lock, NULL);
    pthread_cond_init(&b->cond, NULL);
    b->parties = parties;
    b->waiting = 0;
    b->generation = 0;
    return b;
}

void blx_barrier_wait(blx_barrier *b)
{
    unsigned long gen;
    pthread_mutex_lock(&b->lock);
    gen = b->generation;
    if (++b->waiting == b->parties) {
        b->waiting = 0;
        b->generation++;
        pthread_cond_broadcast(&b->cond);
    } else {
        while (gen == b->generation) {
            pthread_cond_wait(&b->cond, &b->lock);
        }
    }
    pthread_mutex_unlock(&b->lock);
}

void blx_barrier_free(blx_barrier *b)
{
    if (b != NULL) {
        pthread_cond_destroy(&b->cond);
        pthread_mutex_destroy(&b->lock);
        free(b);
    }
}

static void *trampoline(void *p)
{
    struct blx_thread *t = p;
    t->fn(t->arg);
    return NULL;
}

int blx_thread_spawn(blx_thread *out, void (*fn)(void *), void *arg)
{
    struct blx_thread *t = malloc(sizeof *t);
    if (t == NULL) {
        return -1;
    }
    t->fn = fn;
    t->arg = arg;
    if (pthread_create(&t->handle, NULL, trampoline, t) != 0) {
        free(t);
        return -1;
    }
    *out = t;
    return 0;
}

void blx_thread_join(blx_thread t)
{
    pthread_join(t->handle, NULL);
    free(t);
}
