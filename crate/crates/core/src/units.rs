//! Decibel and linear power conversions.
//!
//! All power quantities crossing module boundaries are either dBm or mW; the
//! field or argument name says which.

/// Thermal noise power spectral density at 290 K, in dBm/Hz.
pub const THERMAL_NOISE_DBM_PER_HZ: f64 = -174.0;

#[inline]
pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(0.1 * db)
}

#[inline]
pub fn linear_to_db(linear: f64) -> f64 {
    10.0 * linear.log10()
}

#[inline]
pub fn dbm_to_mw(dbm: f64) -> f64 {
    db_to_linear(dbm)
}

#[inline]
pub fn mw_to_dbm(mw: f64) -> f64 {
    linear_to_db(mw)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conversions_invert() {
        for db in [-174.0, -79.0, 0.0, 3.0, 30.0] {
            assert!((linear_to_db(db_to_linear(db)) - db).abs() < 1e-12);
        }
        assert_eq!(dbm_to_mw(0.0), 1.0);
        assert!((mw_to_dbm(1000.0) - 30.0).abs() < 1e-12);
    }
}
