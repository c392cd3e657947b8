//! Datasets, image helpers, quality metrics and metric logs.

pub mod cifar;
mod csvlog;
pub mod image;
pub mod metrics;

pub use cifar::{load_cifar10, parse_cifar10, Cifar10Set, Split};
pub use csvlog::{append_metrics, format_sig6, read_metrics, write_metrics, MetricRow, METRICS_HEADER};
pub use metrics::{mse, psnr, ssim};
