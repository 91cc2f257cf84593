//! Temporal frequency transforms and value normalization.
//!
//! Motion and distance signals are encoded with an orthonormal DCT-II
//! over the time axis. Orthonormality buys three properties the rest of
//! the pipeline leans on: the full-basis transform is an exact inverse
//! pair, energy is preserved (Parseval), and truncating to the first K
//! coefficients is an orthogonal projection, hence the best K-term
//! approximation in least squares.

use ndarray::{Array2, ArrayView2, Axis};

use crate::error::{Error, Result};

/// Orthonormal DCT-II basis with `k` rows over `t` time samples.
///
/// Row `k` is `c_k * cos(pi * (2t + 1) * k / (2T))` with `c_0 = sqrt(1/T)`
/// and `c_k = sqrt(2/T)` otherwise, so rows are orthonormal.
#[derive(Debug, Clone, PartialEq)]
pub struct DctBasis {
    basis: Array2<f64>,
}

impl DctBasis {
    pub fn new(coeffs: usize, frames: usize) -> Result<Self> {
        if frames == 0 {
            return Err(Error::EmptyInput("DCT basis needs at least one frame"));
        }
        if coeffs == 0 || coeffs > frames {
            return Err(Error::InvalidConfig(format!(
                "DCT coefficient count must be in 1..={frames}, got {coeffs}"
            )));
        }
        let t = frames as f64;
        let basis = Array2::from_shape_fn((coeffs, frames), |(k, n)| {
            let scale = if k == 0 { (1.0 / t).sqrt() } else { (2.0 / t).sqrt() };
            scale * (std::f64::consts::PI * (2.0 * n as f64 + 1.0) * k as f64 / (2.0 * t)).cos()
        });
        Ok(Self { basis })
    }

    pub fn coeff_count(&self) -> usize {
        self.basis.nrows()
    }

    pub fn frame_count(&self) -> usize {
        self.basis.ncols()
    }

    pub fn matrix(&self) -> ArrayView2<'_, f64> {
        self.basis.view()
    }

    /// Encodes a `[T, d]` time-major signal into `[K, d]` coefficients.
    pub fn encode(&self, signal: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if signal.nrows() != self.frame_count() {
            return Err(Error::ShapeMismatch {
                context: "DctBasis::encode",
                expected: format!("{} x d", self.frame_count()),
                got: format!("{} x {}", signal.nrows(), signal.ncols()),
            });
        }
        Ok(self.basis.dot(&signal))
    }

    /// Decodes `[K, d]` coefficients back to a `[T, d]` signal.
    ///
    /// With `K < T` this reconstructs the orthogonal projection onto the
    /// span of the first K basis vectors.
    pub fn decode(&self, coeffs: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if coeffs.nrows() != self.coeff_count() {
            return Err(Error::ShapeMismatch {
                context: "DctBasis::decode",
                expected: format!("{} x d", self.coeff_count()),
                got: format!("{} x {}", coeffs.nrows(), coeffs.ncols()),
            });
        }
        Ok(self.basis.t().dot(&coeffs))
    }
}

/// Extends a `[T_obs, d]` signal to `[total, d]` by repeating the last
/// observed row, the standard padding before encoding an observation
/// that must be forecast forward.
pub fn pad_replicate(observed: ArrayView2<'_, f64>, total: usize) -> Result<Array2<f64>> {
    let (t_obs, d) = (observed.nrows(), observed.ncols());
    if t_obs == 0 {
        return Err(Error::EmptyInput("cannot pad an empty signal"));
    }
    if total < t_obs {
        return Err(Error::InvalidConfig(format!(
            "pad target {total} is shorter than the observed {t_obs} frames"
        )));
    }
    let mut out = Array2::zeros((total, d));
    out.slice_mut(ndarray::s![..t_obs, ..]).assign(&observed);
    let last = observed.row(t_obs - 1).to_owned();
    for mut row in out.slice_mut(ndarray::s![t_obs.., ..]).axis_iter_mut(Axis(0)) {
        row.assign(&last);
    }
    Ok(out)
}

/// Scales metric values into the network's working range.
pub fn normalize(values: &Array2<f64>, factor: f64) -> Array2<f64> {
    values * factor
}

/// Inverse of [`normalize`].
pub fn denormalize(values: &Array2<f64>, factor: f64) -> Array2<f64> {
    values / factor
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::{Array1, Array2};
    use proptest::prelude::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    // ----- oracles, kept independent of the implementation above -----

    /// Textbook DCT-II of one channel, written directly from the sum.
    fn oracle_dct(signal: &[f64], coeffs: usize) -> Vec<f64> {
        let t = signal.len() as f64;
        (0..coeffs)
            .map(|k| {
                let scale = if k == 0 { (1.0 / t).sqrt() } else { (2.0 / t).sqrt() };
                scale
                    * signal
                        .iter()
                        .enumerate()
                        .map(|(n, &x)| {
                            x * (std::f64::consts::PI * (2.0 * n as f64 + 1.0) * k as f64
                                / (2.0 * t))
                                .cos()
                        })
                        .sum::<f64>()
            })
            .collect()
    }

    /// Solves `A x = b` by Gaussian elimination with partial pivoting.
    fn oracle_solve(mut a: Array2<f64>, mut b: Array1<f64>) -> Array1<f64> {
        let n = b.len();
        assert_eq!(a.dim(), (n, n));
        for col in 0..n {
            let pivot = (col..n)
                .max_by(|&i, &j| a[[i, col]].abs().partial_cmp(&a[[j, col]].abs()).unwrap())
                .unwrap();
            if pivot != col {
                for k in 0..n {
                    let tmp = a[[col, k]];
                    a[[col, k]] = a[[pivot, k]];
                    a[[pivot, k]] = tmp;
                }
                b.swap(col, pivot);
            }
            let p = a[[col, col]];
            assert!(p.abs() > 1e-12, "oracle system is singular");
            for row in col + 1..n {
                let f = a[[row, col]] / p;
                for k in col..n {
                    a[[row, k]] -= f * a[[col, k]];
                }
                b[row] -= f * b[col];
            }
        }
        let mut x = Array1::zeros(n);
        for row in (0..n).rev() {
            let mut acc = b[row];
            for k in row + 1..n {
                acc -= a[[row, k]] * x[k];
            }
            x[row] = acc / a[[row, row]];
        }
        x
    }

    /// Best K-term reconstruction of one channel by explicit least
    /// squares over the (unnormalized, independently built) cosine
    /// design matrix.
    fn oracle_least_squares_reconstruction(signal: &[f64], coeffs: usize) -> Vec<f64> {
        let t = signal.len();
        // design[n][k] = cos(pi (2n+1) k / (2T)), deliberately without
        // the orthonormal scaling so the oracle does not reuse it
        let design = Array2::from_shape_fn((t, coeffs), |(n, k)| {
            (std::f64::consts::PI * (2.0 * n as f64 + 1.0) * k as f64 / (2.0 * t as f64)).cos()
        });
        let gram = design.t().dot(&design);
        let rhs = design.t().dot(&Array1::from_vec(signal.to_vec()));
        let weights = oracle_solve(gram, rhs);
        design.dot(&weights).to_vec()
    }

    fn random_signal(rng: &mut ChaCha8Rng, t: usize, d: usize) -> Array2<f64> {
        Array2::from_shape_fn((t, d), |_| rng.random_range(-3.0..3.0))
    }

    // ----- tests -----

    #[test]
    fn encode_matches_textbook_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &(t, k) in &[(8usize, 8usize), (16, 5), (90, 20), (3, 1)] {
            let signal = random_signal(&mut rng, t, 1);
            let basis = DctBasis::new(k, t).unwrap();
            let got = basis.encode(signal.view()).unwrap();
            let col: Vec<f64> = signal.column(0).to_vec();
            let want = oracle_dct(&col, k);
            for i in 0..k {
                assert_abs_diff_eq!(got[[i, 0]], want[i], epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn full_basis_round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for &t in &[1usize, 2, 30, 90] {
            let signal = random_signal(&mut rng, t, 4);
            let basis = DctBasis::new(t, t).unwrap();
            let back = basis.decode(basis.encode(signal.view()).unwrap().view()).unwrap();
            let max_err = (&back - &signal).iter().fold(0.0f64, |m, v| m.max(v.abs()));
            assert!(max_err <= 1e-9, "T={t}: round-trip error {max_err}");
        }
    }

    #[test]
    fn parseval_energy_is_preserved() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for &t in &[2usize, 17, 90] {
            let signal = random_signal(&mut rng, t, 3);
            let basis = DctBasis::new(t, t).unwrap();
            let coeffs = basis.encode(signal.view()).unwrap();
            let e_sig: f64 = signal.iter().map(|v| v * v).sum();
            let e_coef: f64 = coeffs.iter().map(|v| v * v).sum();
            assert!((e_sig - e_coef).abs() <= 1e-9 * e_sig.max(1.0));
        }
    }

    #[test]
    fn constant_signal_concentrates_in_dc() {
        let t = 60;
        let signal = Array2::from_elem((t, 2), 2.5);
        let basis = DctBasis::new(t, t).unwrap();
        let coeffs = basis.encode(signal.view()).unwrap();
        for k in 1..t {
            for d in 0..2 {
                assert!(
                    coeffs[[k, d]].abs() <= 1e-9,
                    "AC coefficient {k} is {}",
                    coeffs[[k, d]]
                );
            }
        }
        assert_abs_diff_eq!(coeffs[[0, 0]], 2.5 * (t as f64).sqrt(), epsilon = 1e-9);
    }

    #[test]
    fn truncation_error_never_increases_with_k() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let t = 48;
        let signal = random_signal(&mut rng, t, 2);
        let mut prev = f64::INFINITY;
        for k in 1..=t {
            let basis = DctBasis::new(k, t).unwrap();
            let recon = basis.decode(basis.encode(signal.view()).unwrap().view()).unwrap();
            let err: f64 = (&recon - &signal).iter().map(|v| v * v).sum();
            assert!(
                err <= prev + 1e-9,
                "error rose from {prev} to {err} at K={k}"
            );
            prev = err;
        }
        assert!(prev <= 1e-9, "full-basis error should vanish, got {prev}");
    }

    #[test]
    fn truncation_matches_least_squares_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for &(t, k) in &[(12usize, 4usize), (30, 7), (24, 24)] {
            let signal = random_signal(&mut rng, t, 1);
            let basis = DctBasis::new(k, t).unwrap();
            let recon = basis.decode(basis.encode(signal.view()).unwrap().view()).unwrap();
            let col: Vec<f64> = signal.column(0).to_vec();
            let want = oracle_least_squares_reconstruction(&col, k);
            for n in 0..t {
                assert_abs_diff_eq!(recon[[n, 0]], want[n], epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn two_hundred_random_round_trips_are_fast_and_exact() {
        let start = std::time::Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(97);
        for case in 0..200 {
            let t = rng.random_range(1..=128usize);
            let d = rng.random_range(1..=8usize);
            let signal = random_signal(&mut rng, t, d);
            let basis = DctBasis::new(t, t).unwrap();
            let back = basis.decode(basis.encode(signal.view()).unwrap().view()).unwrap();
            let max_err = (&back - &signal).iter().fold(0.0f64, |m, v| m.max(v.abs()));
            assert!(max_err <= 1e-9, "case {case}: error {max_err}");
        }
        assert!(
            start.elapsed() < std::time::Duration::from_secs(10),
            "200 round trips took {:?}",
            start.elapsed()
        );
    }

    #[test]
    fn padding_repeats_last_row() {
        let obs = ndarray::array![[1.0, 2.0], [3.0, 4.0]];
        let padded = pad_replicate(obs.view(), 5).unwrap();
        assert_eq!(padded.nrows(), 5);
        assert_eq!(padded.row(0).to_vec(), vec![1.0, 2.0]);
        for t in 1..5 {
            assert_eq!(padded.row(t).to_vec(), vec![3.0, 4.0]);
        }
    }

    #[test]
    fn padding_rejects_shrinking() {
        let obs = Array2::<f64>::zeros((4, 2));
        assert!(pad_replicate(obs.view(), 3).is_err());
    }

    #[test]
    fn normalize_round_trip() {
        let values = ndarray::array![[1.5, -2.0], [0.0, 10.0]];
        let back = denormalize(&normalize(&values, 0.2), 0.2);
        assert_abs_diff_eq!(back[[1, 1]], 10.0, epsilon = 1e-12);
        assert_abs_diff_eq!(normalize(&values, 0.2)[[0, 0]], 0.3, epsilon = 1e-12);
    }

    #[test]
    fn basis_rejects_bad_sizes() {
        assert!(DctBasis::new(0, 10).is_err());
        assert!(DctBasis::new(11, 10).is_err());
        assert!(DctBasis::new(1, 0).is_err());
    }

    proptest! {
        #[test]
        fn encode_is_linear(
            t in 2usize..32,
            seed in 0u64..1_000,
            alpha in -4.0f64..4.0,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_signal(&mut rng, t, 2);
            let b = random_signal(&mut rng, t, 2);
            let basis = DctBasis::new(t, t).unwrap();
            let lhs = basis.encode((&a * alpha + &b).view()).unwrap();
            let rhs = basis.encode(a.view()).unwrap() * alpha + basis.encode(b.view()).unwrap();
            let max_err = (&lhs - &rhs).iter().fold(0.0f64, |m, v| m.max(v.abs()));
            prop_assert!(max_err <= 1e-9);
        }

        #[test]
        fn truncated_reconstruction_never_beats_full(
            t in 4usize..40,
            seed in 0u64..1_000,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let signal = random_signal(&mut rng, t, 1);
            let k = rng.random_range(1..t);
            let trunc = DctBasis::new(k, t).unwrap();
            let recon = trunc.decode(trunc.encode(signal.view()).unwrap().view()).unwrap();
            let err: f64 = (&recon - &signal).iter().map(|v| v * v).sum();
            prop_assert!(err >= -1e-12);
        }

        #[test]
        fn padding_preserves_observed_prefix(
            t_obs in 1usize..20,
            extra in 0usize..20,
            seed in 0u64..1_000,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let obs = random_signal(&mut rng, t_obs, 3);
            let padded = pad_replicate(obs.view(), t_obs + extra).unwrap();
            prop_assert_eq!(padded.nrows(), t_obs + extra);
            for t in 0..t_obs {
                prop_assert_eq!(padded.row(t).to_vec(), obs.row(t).to_vec());
            }
        }
    }
}
