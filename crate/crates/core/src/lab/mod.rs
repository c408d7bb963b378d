//! Synthetic signals, metrics, spectrograms, file formats, and the
//! inversion-variant comparison harness.

pub mod compare;
pub mod metrics;
pub mod signal;
pub mod spectrum;
pub mod wav;

pub use compare::{compare_inversion_variants, ComparisonRow, ComparisonTable, VariantSummary};
pub use metrics::{log_spectral_distance, measure, MetricReport};
pub use signal::{generate_signal, LatentCodec, Signal, SignalKind, SignalParams};
pub use spectrum::{spectrogram, Spectrogram};
pub use wav::{read_wav, write_wav};
