//! SNR-calibrated multiplicative Gaussian noise.
//!
//! Every entry `u` becomes `(1 + ξ) u` with `ξ ~ N(0, σ)` and
//! `σ = 10^(-SNR_dB / 20)`.
//!
//! The random stream is fixed so corrupted datasets can be regenerated by
//! any implementation:
//!
//! * generator: ChaCha20 (`rand_chacha::ChaCha20Rng::seed_from_u64(seed)`),
//! * entry `i` of the value array (row-major order) uses the 64-bit word
//!   pair at stream position `2 i`, read as one little-endian `u64`,
//! * uniform: `((w >> 11) + 0.5) / 2^53`, strictly inside `(0, 1)`,
//! * standard normal: inverse CDF by Wichura's AS241 (`PPND16`).

use ndarray::ArrayD;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NoiseError {
    #[error("noisy corruption requires a seed")]
    MissingSeed,
    #[error("SNR must be finite, got {0}")]
    NonFiniteSnr(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// `None` leaves data clean.
    pub snr_db: Option<f64>,
    pub seed: Option<u64>,
}

impl NoiseSpec {
    pub fn clean() -> Self {
        NoiseSpec {
            snr_db: None,
            seed: None,
        }
    }

    pub fn snr(snr_db: f64, seed: u64) -> Self {
        NoiseSpec {
            snr_db: Some(snr_db),
            seed: Some(seed),
        }
    }

    pub fn is_clean(&self) -> bool {
        self.snr_db.is_none()
    }
}

pub fn snr_sigma(snr_db: f64) -> f64 {
    10f64.powf(-snr_db / 20.0)
}

/// Inverse standard normal CDF (AS241, about 16 significant digits).
pub fn normal_quantile(p: f64) -> f64 {
    const SPLIT1: f64 = 0.425;
    const SPLIT2: f64 = 5.0;
    const CONST1: f64 = 0.180625;
    const CONST2: f64 = 1.6;
    let q = p - 0.5;
    if q.abs() <= SPLIT1 {
        let r = CONST1 - q * q;
        return q
            * (((((((2509.0809287301226727 * r + 33430.575583588128105) * r + 67265.770927008700853) * r
                + 45921.953931549871457)
                * r
                + 13731.693765509461125)
                * r
                + 1971.5909503065514427)
                * r
                + 133.14166789178437745)
                * r
                + 3.387132872796366608)
            / (((((((5226.495278852545925 * r + 28729.085735721942674) * r + 39307.89580009271061) * r
                + 21213.794301586595867)
                * r
                + 5394.1960214247511077)
                * r
                + 687.1870074920579083)
                * r
                + 42.313330701600911252)
                * r
                + 1.0);
    }
    let mut r = if q < 0.0 { p } else { 1.0 - p };
    r = (-r.ln()).sqrt();
    let val = if r <= SPLIT2 {
        r -= CONST2;
        (((((((7.7454501427834140764e-4 * r + 0.0227238449892691845833) * r + 0.24178072517745061177) * r
            + 1.27045825245236838258)
            * r
            + 3.64784832476320460504)
            * r
            + 5.7694972214606914055)
            * r
            + 4.6303378461565452959)
            * r
            + 1.42343711074968357734)
            / (((((((1.05075007164441684324e-9 * r + 5.475938084995344946e-4) * r + 0.0151986665636164571966) * r
                + 0.14810397642748007459)
                * r
                + 0.68976733498510000455)
                * r
                + 1.6763848301838038494)
                * r
                + 2.05319162663775882187)
                * r
                + 1.0)
    } else {
        r -= SPLIT2;
        (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r + 0.0012426609473880784386) * r
            + 0.026532189526576123093)
            * r
            + 0.29656057182850489123)
            * r
            + 1.7848265399172913358)
            * r
            + 5.4637849111641143699)
            * r
            + 6.6579046435011037772)
            / (((((((2.04426310338993978564e-15 * r + 1.4215117583164458887e-7) * r + 1.8463183175100546818e-5) * r
                + 7.868691311456132591e-4)
                * r
                + 0.0148753612908506148525)
                * r
                + 0.13692988092273580531)
                * r
                + 0.59983220655588793769)
                * r
                + 1.0)
    };
    if q < 0.0 {
        -val
    } else {
        val
    }
}

fn uniform_from_word(w: u64) -> f64 {
    ((w >> 11) as f64 + 0.5) / (1u64 << 53) as f64
}

const CHUNK: usize = 1 << 14;

/// Standard normal draws for stream entries `start..start + out.len()`.
pub fn fill_standard_normal(seed: u64, start: usize, out: &mut [f64]) {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_word_pos(2 * start as u128);
    for o in out.iter_mut() {
        *o = normal_quantile(uniform_from_word(rng.next_u64()));
    }
}

/// Applies `u -> (1 + ξ) u` in place; chunks partition the stream by entry index.
pub fn corrupt_array(values: &mut ArrayD<f64>, spec: &NoiseSpec) -> Result<(), NoiseError> {
    let Some(snr_db) = spec.snr_db else {
        return Ok(());
    };
    if !snr_db.is_finite() {
        return Err(NoiseError::NonFiniteSnr(snr_db));
    }
    let seed = spec.seed.ok_or(NoiseError::MissingSeed)?;
    let sigma = snr_sigma(snr_db);
    let slice = values
        .as_slice_mut()
        .expect("field values are stored in standard layout");
    slice.par_chunks_mut(CHUNK).enumerate().for_each(|(c, chunk)| {
        let mut xi = vec![0.0; chunk.len()];
        fill_standard_normal(seed, c * CHUNK, &mut xi);
        for (u, z) in chunk.iter_mut().zip(xi) {
            *u *= 1.0 + sigma * z;
        }
    });
    Ok(())
}
