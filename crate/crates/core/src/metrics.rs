//! Error metrics and noise calibration.

use ndarray::Array1;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::signal::Signal;

/// Sentinel SNR meaning "no noise at all".
pub const NOISELESS_SNR_DB: f64 = f64::INFINITY;

/// Normalized mean squared error `‖x_hat − x‖² / ‖x‖²`.
pub fn nmse(x_hat: &Signal, x: &Signal) -> Result<f64> {
    if x_hat.grid() != x.grid() {
        return Err(Error::dim(format!(
            "nmse grids differ: {}x{} vs {}x{}",
            x_hat.grid().rows(),
            x_hat.grid().cols(),
            x.grid().rows(),
            x.grid().cols()
        )));
    }
    let ref_norm = x.l2_norm_sq();
    if ref_norm == 0.0 {
        return Err(Error::ZeroReference);
    }
    let err: f64 = x_hat
        .values()
        .iter()
        .zip(x.values())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(err / ref_norm)
}

/// Gaussian noise scaled so the realized SNR hits `snr_db` exactly.
///
/// The sample is rescaled so that `‖clean‖² / ‖noise‖² = 10^(snr_db/10)`
/// holds for the drawn vector, not merely in expectation. The sentinel
/// [`NOISELESS_SNR_DB`] returns the zero vector.
pub fn noise_for_snr<R: Rng + ?Sized>(
    clean: &Array1<f64>,
    snr_db: f64,
    rng: &mut R,
) -> Result<Array1<f64>> {
    if snr_db == NOISELESS_SNR_DB {
        return Ok(Array1::zeros(clean.len()));
    }
    let clean_norm_sq: f64 = clean.iter().map(|v| v * v).sum();
    if clean_norm_sq == 0.0 {
        return Err(Error::ZeroClean);
    }
    let target_norm_sq = clean_norm_sq * 10f64.powf(-snr_db / 10.0);
    loop {
        let g: Array1<f64> = Array1::from_iter((0..clean.len()).map(|_| rng.sample(StandardNormal)));
        let g_norm_sq: f64 = g.iter().map(|v| v * v).sum();
        // A zero draw has probability zero but would divide by zero below.
        if g_norm_sq > 0.0 {
            return Ok(g * (target_norm_sq / g_norm_sq).sqrt());
        }
    }
}

/// Serde adapter for SNR fields: finite values are plain numbers, the
/// [`NOISELESS_SNR_DB`] sentinel is the string `"noiseless"`.
///
/// JSON has no literal for infinity, so the sentinel needs a spelled-out
/// form. Use with `#[serde(with = "crate::metrics::snr_serde")]`.
pub mod snr_serde {
    use serde::de::Error as DeError;
    use serde::{Deserialize, Deserializer, Serializer};

    use super::NOISELESS_SNR_DB;

    pub fn serialize<S: Serializer>(value: &f64, serializer: S) -> Result<S::Ok, S::Error> {
        if *value == NOISELESS_SNR_DB {
            serializer.serialize_str("noiseless")
        } else {
            serializer.serialize_f64(*value)
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum SnrField {
        Number(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(deserializer: D) -> Result<f64, D::Error> {
        match SnrField::deserialize(deserializer)? {
            SnrField::Number(v) if v.is_finite() => Ok(v),
            SnrField::Number(v) => Err(DeError::custom(format!(
                "numeric SNR must be finite, got {v}; use \"noiseless\" for the sentinel"
            ))),
            SnrField::Text(s) if s == "noiseless" => Ok(NOISELESS_SNR_DB),
            SnrField::Text(s) => Err(DeError::custom(format!("unknown SNR value {s:?}"))),
        }
    }
}

/// Realized input SNR in dB, `10 log10(‖clean‖² / ‖noise‖²)`.
pub fn realized_snr_db(clean: &Array1<f64>, noise: &Array1<f64>) -> f64 {
    let noise_norm_sq: f64 = noise.iter().map(|v| v * v).sum();
    if noise_norm_sq == 0.0 {
        return NOISELESS_SNR_DB;
    }
    let clean_norm_sq: f64 = clean.iter().map(|v| v * v).sum();
    10.0 * (clean_norm_sq / noise_norm_sq).log10()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use crate::seeds::rng_from_seed;
    use approx::assert_abs_diff_eq;

    fn sig(v: &[f64]) -> Signal {
        Signal::new(
            Grid::new(1, v.len()).unwrap(),
            Array1::from_vec(v.to_vec()),
        )
        .unwrap()
    }

    #[test]
    fn nmse_matches_hand_value() {
        let x = sig(&[1.0, 0.0, 2.0]);
        let x_hat = sig(&[1.0, 1.0, 0.0]);
        // ‖err‖² = 0 + 1 + 4 = 5; ‖x‖² = 5.
        assert_abs_diff_eq!(nmse(&x_hat, &x).unwrap(), 1.0, epsilon = 1e-15);
        assert_eq!(nmse(&x, &x).unwrap(), 0.0);
    }

    #[test]
    fn nmse_rejects_zero_reference() {
        let err = nmse(&sig(&[1.0, 0.0]), &sig(&[0.0, 0.0])).unwrap_err();
        assert!(matches!(err, Error::ZeroReference));
    }

    #[test]
    fn nmse_is_permutation_invariant() {
        let x = sig(&[1.0, 2.0, 3.0, 4.0]);
        let x_hat = sig(&[1.5, 2.0, 2.5, 4.5]);
        let perm = [2usize, 0, 3, 1];
        let px = sig(&perm.map(|i| x.values()[i]));
        let px_hat = sig(&perm.map(|i| x_hat.values()[i]));
        assert_abs_diff_eq!(
            nmse(&x_hat, &x).unwrap(),
            nmse(&px_hat, &px).unwrap(),
            epsilon = 1e-15
        );
    }

    #[test]
    fn noiseless_sentinel_gives_zero_vector() {
        let clean = Array1::from_vec(vec![1.0, 2.0]);
        let mut rng = rng_from_seed(0);
        let noise = noise_for_snr(&clean, NOISELESS_SNR_DB, &mut rng).unwrap();
        assert!(noise.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn realized_snr_is_exact() {
        let clean = Array1::from_vec((0..50).map(|i| (i as f64).sin() + 1.5).collect::<Vec<_>>());
        for &snr in &[0.0, 10.0, 20.0, 25.0, 40.0] {
            let mut rng = rng_from_seed(7);
            let noise = noise_for_snr(&clean, snr, &mut rng).unwrap();
            let realized = realized_snr_db(&clean, &noise);
            assert!(
                (realized - snr).abs() <= 1e-10 * snr.abs().max(1.0),
                "target {snr}, realized {realized}"
            );
        }
    }

    #[test]
    fn snr_20db_shrinks_norm_by_factor_100() {
        let clean = Array1::from_vec(vec![2.0, 0.0, 0.0]);
        let mut rng = rng_from_seed(3);
        let noise = noise_for_snr(&clean, 20.0, &mut rng).unwrap();
        let norm_sq: f64 = noise.iter().map(|v| v * v).sum();
        assert_abs_diff_eq!(norm_sq, 0.04, epsilon = 1e-12);
    }

    #[test]
    fn noise_is_deterministic_per_seed() {
        let clean = Array1::from_vec(vec![1.0, -1.0, 0.5]);
        let a = noise_for_snr(&clean, 15.0, &mut rng_from_seed(11)).unwrap();
        let b = noise_for_snr(&clean, 15.0, &mut rng_from_seed(11)).unwrap();
        assert_eq!(a.to_vec(), b.to_vec());
    }

    #[test]
    fn zero_clean_vector_is_rejected() {
        let clean = Array1::zeros(4);
        let err = noise_for_snr(&clean, 10.0, &mut rng_from_seed(0)).unwrap_err();
        assert!(matches!(err, Error::ZeroClean));
    }
}
