/*
 * Records shared between the in-kernel probes and the userspace collector.
 * Native endianness throughout. Offsets are checked by the collector's tests.
 *
 * Pinned objects (under /sys/fs/bpf/kprism unless overridden):
 *   accum    per-CPU hash   struct kprism_key -> struct kprism_value
 *   scope    hash           __u32 tgid -> __u8 (1 = member)
 *   events   ring buffer    struct kprism_discovery records
 *   dropped  array[1]       __u64 ring-buffer reservations that failed
 */
#ifndef KPRISM_WIRE_H
#define KPRISM_WIRE_H

#ifdef __KERNEL__
#include <linux/types.h>
#else
#include <stdint.h>
typedef uint8_t __u8;
typedef uint16_t __u16;
typedef uint32_t __u32;
typedef uint64_t __u64;
#endif

enum kprism_class {
	KPRISM_RUNTIME = 0,
	KPRISM_RQ = 1,
	KPRISM_BLOCK = 2,
	KPRISM_IOWAIT = 3,
	KPRISM_SLEEP = 4,
	KPRISM_PIPE_WAIT = 5,
	KPRISM_SOCKET_WAIT = 6,
	KPRISM_SECTOR = 7,	/* accumulated for every tgid */
	KPRISM_EPOLL_WAIT = 8,
	KPRISM_EPOLL_FILE_WAIT = 9,
	KPRISM_FUTEX_WAIT = 10,
	KPRISM_FUTEX_WAKE = 11,
};

enum kprism_res_kind {
	KPRISM_RES_NONE = 0,
	KPRISM_RES_PIPE = 1,		/* res0 = s_dev, res1 = i_ino */
	KPRISM_RES_SOCK_INET = 2,	/* as pipe */
	KPRISM_RES_SOCK_INET6 = 3,
	KPRISM_RES_SOCK_UNIX = 4,
	KPRISM_RES_EPOLL = 5,		/* res0 = struct eventpoll address */
	KPRISM_RES_FILE = 6,
	KPRISM_RES_FUTEX = 7,		/* res0 = tgid, res1 = uaddr */
	KPRISM_RES_DEVICE = 8,		/* res0 = major, res1 = minor */
	KPRISM_RES_EPOLL_FILE = 9,	/* res0 = eventpoll, res1/res2 = file dev/ino,
					   aux_kind = file's kind */
};

struct kprism_key {
	__u32 tgid;		/* 0 */
	__u32 tid;		/* 4 */
	__u8 class;		/* 8 */
	__u8 res_kind;		/* 9 */
	__u8 aux_kind;		/* 10 */
	__u8 pad[5];		/* 11, zero */
	__u64 res[3];		/* 16 */
};				/* 40 */

/* Time slot and count slot; which are meaningful depends on the class. */
struct kprism_value {
	__u64 time_ns;		/* 0 */
	__u64 count;		/* 8 */
};				/* 16 */

enum kprism_discovery_type {
	KPRISM_DISC_SOCKET = 1,
	KPRISM_DISC_PIPE = 2,
	KPRISM_DISC_COMM = 3,
	KPRISM_DISC_EPOLL_CTL = 4,
};

struct kprism_disc_header {
	__u32 type;		/* 0 */
	__u32 tgid;		/* 4 */
	__u32 tid;		/* 8 */
	__u32 pad;		/* 12 */
	__u64 ts_ns;		/* 16 */
};				/* 24 */

/*
 * inet/inet6: addresses in network byte order, ports in host order.
 * unix: src/dst start with the own and peer socket inode as __u64.
 */
struct kprism_disc_socket {
	__u64 dev;		/* 24 */
	__u64 ino;		/* 32 */
	__u16 family;		/* 40, AF_* */
	__u16 protocol;		/* 42 */
	__u16 sport;		/* 44 */
	__u16 dport;		/* 46 */
	__u8 src[16];		/* 48 */
	__u8 dst[16];		/* 64 */
	char path[108];		/* 80 */
};

struct kprism_disc_pipe {
	__u64 dev;		/* 24 */
	__u64 ino;		/* 32 */
};

struct kprism_disc_comm {
	char comm[16];		/* 24 */
};

struct kprism_disc_epoll_ctl {
	__u64 epoll;		/* 24 */
	__u32 op;		/* 32, 1 add, 2 del */
	__u32 kind;		/* 36, enum kprism_res_kind of the target */
	__u64 dev;		/* 40 */
	__u64 ino;		/* 48 */
};

#define KPRISM_DISCOVERY_SIZE 192

struct kprism_discovery {
	struct kprism_disc_header hdr;
	union {
		struct kprism_disc_socket socket;
		struct kprism_disc_pipe pipe;
		struct kprism_disc_comm comm;
		struct kprism_disc_epoll_ctl epoll_ctl;
		__u8 raw[KPRISM_DISCOVERY_SIZE - sizeof(struct kprism_disc_header)];
	};
};

#endif
