//! Tuning defaults shared by the library and the command-line front end.

/// Sobol points used for point estimates under a known target density.
pub const SOBOL_POINTS: usize = 5_000;

/// Sobol points used for ε-band derivative integrals.
pub const BAND_POINTS: usize = 1_000_000;

/// Absolute band half-width for simulation designs.
pub const EPS_SIM: f64 = 0.005;

/// Band half-width as a fraction of SD(ĥ) over the sample, for empirical data.
pub const IOTA: f64 = 0.01;

/// Bandwidth multiplier for the kernel density estimate on empirical data.
pub const KDE_SCALE: f64 = 3.0;

/// Two-sided 95% normal critical value.
pub const CRITICAL: f64 = 1.959964;

/// Default B-spline degree (cubic).
pub const DEGREE: usize = 3;

/// Monte Carlo replications per cell for desk-scale runs.
pub const REPS: usize = 500;

/// Bootstrap draws for the sieve score bootstrap.
pub const BOOTSTRAP_DRAWS: usize = 1_000;

/// Master seed used when none is given.
pub const SEED: u64 = 7;

/// A cell aborts when more than this fraction of replications fail.
pub const MAX_FAILURE_RATE: f64 = 0.20;
