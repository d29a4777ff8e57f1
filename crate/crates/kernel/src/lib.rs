//! Kernel wire-protocol server that runs notebook cells through a q8s
//! executor, plus kernelspec installation for frontends.

pub mod connection;
pub mod kernelspec;
pub mod server;
pub mod wire;

pub use connection::{ConnectionError, ConnectionInfo};
pub use kernelspec::{default_kernels_dir, install_kernelspec, list_kernelspecs, KernelSpec, DISPLAY_NAME, KERNEL_NAME};
pub use server::{parse_cell, serve_kernel, start_kernel, KernelConfig, KernelError, RunningKernel, MAGIC_PREFIX};
pub use wire::{Header, Signer, WireError, WireMessage};
