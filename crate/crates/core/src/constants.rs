//! Physical constants (CODATA 2018, exact where defined).

/// Elementary charge, C.
pub const ELEMENTARY_CHARGE: f64 = 1.602_176_634e-19;

/// Unified atomic mass unit, kg.
pub const ATOMIC_MASS_UNIT: f64 = 1.660_539_066_60e-27;

/// Vacuum permittivity, F/m.
pub const VACUUM_PERMITTIVITY: f64 = 8.854_187_8128e-12;

/// Mass of a ⁹Be⁺ ion, kg.
pub const BE9_ION_MASS: f64 = 1.4965e-26;
