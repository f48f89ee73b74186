#include "brf/catalog.hpp"

namespace brf {

const char* Catalog::builtin_text() {
    return R"(brf-catalog 1

# Which abstract register kinds satisfy each helper argument type.
argtype ANYTHING accepts SCALAR
argtype CONST_SIZE accepts SCALAR
argtype CONST_SIZE_OR_ZERO accepts SCALAR
argtype PTR_TO_MEM accepts PTR_TO_STACK PTR_TO_MAP_VALUE PTR_TO_MEM
argtype PTR_TO_UNINIT_MEM accepts PTR_TO_STACK PTR_TO_MAP_VALUE PTR_TO_MEM
argtype PTR_TO_MAP_KEY accepts PTR_TO_STACK PTR_TO_MAP_VALUE
argtype PTR_TO_MAP_VALUE accepts PTR_TO_STACK PTR_TO_MAP_VALUE
argtype PTR_TO_UNINIT_MAP_VALUE accepts PTR_TO_STACK PTR_TO_MAP_VALUE
argtype CONST_MAP_PTR accepts CONST_PTR_TO_MAP
argtype PTR_TO_CTX accepts PTR_TO_CTX
argtype PTR_TO_REF accepts PTR_TO_MEM

# Helper prototypes. Ids follow the public helper numbering.
helper 1 map_lookup_elem args CONST_MAP_PTR PTR_TO_MAP_KEY ret PTR_TO_MAP_VALUE_OR_NULL maps ARRAY PERCPU_ARRAY HASH LRU_HASH CGROUP_STORAGE
helper 2 map_update_elem args CONST_MAP_PTR PTR_TO_MAP_KEY PTR_TO_MAP_VALUE ANYTHING ret SCALAR lock bucket maps ARRAY PERCPU_ARRAY HASH LRU_HASH CGROUP_STORAGE
helper 3 map_delete_elem args CONST_MAP_PTR PTR_TO_MAP_KEY ret SCALAR lock bucket maps HASH LRU_HASH
helper 5 ktime_get_ns ret SCALAR
helper 7 get_prandom_u32 ret SCALAR
helper 8 get_smp_processor_id ret SCALAR
helper 12 tail_call args PTR_TO_CTX CONST_MAP_PTR ANYTHING ret SCALAR maps PROG_ARRAY
helper 14 get_current_pid_tgid ret SCALAR
helper 25 perf_event_output args PTR_TO_CTX CONST_MAP_PTR ANYTHING PTR_TO_MEM CONST_SIZE ret SCALAR maps PERF_EVENT_ARRAY
helper 26 skb_load_bytes args PTR_TO_CTX ANYTHING PTR_TO_UNINIT_MEM CONST_SIZE ret SCALAR
helper 27 get_stackid args PTR_TO_CTX ANYTHING ret SCALAR
helper 87 map_push_elem args CONST_MAP_PTR PTR_TO_MAP_VALUE ANYTHING ret SCALAR lock queue maps QUEUE STACK
helper 88 map_pop_elem args CONST_MAP_PTR PTR_TO_UNINIT_MAP_VALUE ret SCALAR lock queue maps QUEUE STACK
helper 89 map_peek_elem args CONST_MAP_PTR PTR_TO_UNINIT_MAP_VALUE ret SCALAR lock queue maps QUEUE STACK
helper 113 probe_read_kernel args PTR_TO_UNINIT_MEM CONST_SIZE ANYTHING ret SCALAR
helper 130 ringbuf_output args CONST_MAP_PTR PTR_TO_MEM CONST_SIZE ANYTHING ret SCALAR maps RINGBUF
helper 131 ringbuf_reserve args CONST_MAP_PTR CONST_SIZE ANYTHING ret PTR_TO_MEM_OR_NULL acquires RINGBUF_RESERVATION maps RINGBUF
helper 132 ringbuf_submit args PTR_TO_REF ANYTHING ret VOID releases RINGBUF_RESERVATION
helper 133 ringbuf_discard args PTR_TO_REF ANYTHING ret VOID releases RINGBUF_RESERVATION
helper 134 ringbuf_query args CONST_MAP_PTR ANYTHING ret SCALAR maps RINGBUF

# Availability groups; @name substitutes another group.
hgroup base = map_lookup_elem map_update_elem map_delete_elem ktime_get_ns get_prandom_u32 get_smp_processor_id tail_call map_push_elem map_pop_elem map_peek_elem ringbuf_output ringbuf_reserve ringbuf_submit ringbuf_discard ringbuf_query
hgroup tracing = @base get_current_pid_tgid probe_read_kernel perf_event_output get_stackid

# Map attribute constraints. key/value: fixed N | set N... | range MIN MAX ALIGN.
# entries: MIN MAX | pow2 MIN MAX | zero. flags lists mutually exclusive groups.
map ARRAY key fixed 4 value range 1 256 1 entries 1 1024 flags - lock none
map PERCPU_ARRAY key fixed 4 value range 1 256 1 entries 1 1024 flags - lock none
map HASH key range 1 64 1 value range 1 256 1 entries 1 1024 flags NO_PREALLOC ZERO_SEED lock bucket
map LRU_HASH key range 1 64 1 value range 1 256 1 entries 1 1024 flags - lock bucket
map PROG_ARRAY key fixed 4 value fixed 4 entries 1 64 flags - lock none
map PERF_EVENT_ARRAY key fixed 4 value fixed 4 entries 1 64 flags - lock none
map RINGBUF key fixed 0 value fixed 0 entries pow2 4096 65536 flags - lock none
map QUEUE key fixed 0 value range 1 256 1 entries 1 1024 flags - lock queue
map STACK key fixed 0 value range 1 256 1 entries 1 1024 flags - lock queue
map CGROUP_STORAGE key set 8 16 value range 1 256 1 entries zero flags - lock none

progtype SOCKET_FILTER section socket attach socket testrun yes
  ctx 32
  field len 0 4 r SCALAR
  field protocol 4 4 r SCALAR
  field priority 8 4 rw SCALAR
  field mark 12 4 rw SCALAR
  field queue_mapping 16 4 r SCALAR
  field sk 24 8 r PTR_TO_SOCK_COMMON
  helpers @base get_current_pid_tgid skb_load_bytes perf_event_output
  maps ARRAY PERCPU_ARRAY HASH LRU_HASH PROG_ARRAY RINGBUF QUEUE STACK PERF_EVENT_ARRAY
  forbid_flags -
end

progtype KPROBE section kprobe/sys_nanosleep attach trace_event testrun no
  ctx 48
  field arg0 0 8 r SCALAR
  field arg1 8 8 r SCALAR
  field arg2 16 8 r SCALAR
  field arg3 24 8 r SCALAR
  field ip 32 8 r SCALAR
  field sp 40 8 r SCALAR
  helpers @tracing
  maps ARRAY PERCPU_ARRAY HASH LRU_HASH PROG_ARRAY RINGBUF QUEUE STACK PERF_EVENT_ARRAY
  forbid_flags -
end

progtype TRACEPOINT section tracepoint/sched/sched_switch attach trace_event testrun yes
  ctx 32
  field arg0 0 8 r SCALAR
  field arg1 8 8 r SCALAR
  field arg2 16 8 r SCALAR
  field arg3 24 8 r SCALAR
  helpers @tracing
  maps ARRAY PERCPU_ARRAY HASH LRU_HASH PROG_ARRAY RINGBUF QUEUE STACK PERF_EVENT_ARRAY
  forbid_flags -
end

progtype PERF_EVENT section perf_event attach trace_event testrun no
  ctx 16
  field sample_period 0 8 r SCALAR
  field addr 8 8 r SCALAR
  helpers @tracing
  maps ARRAY PERCPU_ARRAY HASH LRU_HASH PROG_ARRAY RINGBUF QUEUE STACK PERF_EVENT_ARRAY
  forbid_flags NO_PREALLOC
end

progtype CGROUP_SOCK section cgroup/sock_create attach cgroup testrun yes
  ctx 24
  field family 0 4 r SCALAR
  field type 4 4 r SCALAR
  field protocol 8 4 r SCALAR
  field mark 12 4 rw SCALAR
  field priority 16 4 rw SCALAR
  helpers @base get_current_pid_tgid
  maps ARRAY PERCPU_ARRAY HASH LRU_HASH PROG_ARRAY RINGBUF QUEUE STACK CGROUP_STORAGE PERF_EVENT_ARRAY
  forbid_flags -
end

progtype XDP section xdp attach device testrun yes
  ctx 12
  field pkt_len 0 4 r SCALAR
  field ifindex 4 4 r SCALAR
  field queue_id 8 4 r SCALAR
  helpers @base
  maps ARRAY PERCPU_ARRAY HASH LRU_HASH PROG_ARRAY RINGBUF QUEUE STACK PERF_EVENT_ARRAY
  forbid_flags -
end
)";
}

} // namespace brf
