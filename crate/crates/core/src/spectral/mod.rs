//! Kernel `K(q, Q)`, Hilbert–Schmidt norm, spectra and rate certificates.

mod kernel;
mod rate;
mod spectrum;

pub use kernel::{
    assemble_kernel, assemble_kernel_with, hs_norm, HsConsistency, HsNorm, KernelField,
};
pub use rate::{
    certify_rate, CertificateStatus, RateCertificate, MIN_FIT_POINTS, RATE_TOLERANCE, TRANSIENT,
};
pub use spectrum::{eigen_spectrum, SpectralReport, SYMMETRIC_THRESHOLD};
