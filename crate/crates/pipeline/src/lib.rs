pub mod augmentation;
pub mod backbone;
pub mod catalog;
pub mod cli;
pub mod experiment;
pub mod explain;
pub mod nn;
pub mod report;
pub mod splits;
pub mod toy;
pub mod trainer;

// Activations are tens of megabytes each; the system allocator returns such
// blocks to the kernel on free, so every layer would pay page faults again.
#[global_allocator]
static ALLOC: tikv_jemallocator::Jemalloc = tikv_jemallocator::Jemalloc;

// Keep freed pages mapped instead of handing them back to the kernel after
// every training step.
#[allow(non_upper_case_globals)]
#[export_name = "_rjem_malloc_conf"]
pub static malloc_conf: &[u8] = b"retain:true,dirty_decay_ms:-1,muzzy_decay_ms:-1\0";
