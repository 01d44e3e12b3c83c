//! Real-time 3D object proposals and classification for LiDAR point clouds.

pub mod classify;
pub mod cluster;
pub mod error;
pub mod eval;
pub mod filter;
pub mod geom;
pub mod ground;
pub mod ingest;
pub mod kv;
pub mod pipeline;
pub mod tune;

pub use error::{Error, Result};
pub use geom::{canonical_partition, compute_aabb, sample_points, Box3D, Cluster, Point3, PointCloud};
