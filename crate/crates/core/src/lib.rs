//! Execute notebook cell payloads as containerized jobs on a remote cluster.
//!
//! The pipeline is: detect the payload's dependencies, ensure a container
//! image for them, create a ConfigMap with the source and a Job that mounts
//! it, poll the Job to completion, collect the logs and delete both
//! resources. [`fakecluster`] provides an in-process stand-in for the
//! cluster API, and [`bench`] reproduces the simulator/overhead timing split.

pub mod bench;
pub mod celldeps;
pub mod clock;
pub mod clusterapi;
pub mod dispatch;
pub mod fakecluster;
pub mod manifests;
pub mod runner;
