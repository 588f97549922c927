//! Truncated Fourier representations of multi-DOF periodic motion.
//!
//! A [`HarmonicBasis`] fixes the harmonic content and the global coefficient
//! ordering used by every residual, Jacobian, and output file in this crate:
//! `[X_0 (all DOF), X_1c (all DOF), X_1s (all DOF), X_2c, X_2s, ...]` over the
//! listed harmonics in increasing order.
//!
//! Transforms use correlation-sum normalization: the constant term is the
//! sample mean and harmonic `n` cosine/sine coefficients are `2/N_t` times the
//! correlation sums. This is exact for band-limited signals on unaliased grids
//! and keeps test values independent of any transform backend.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum HarmonicError {
    #[error("harmonic list must be strictly increasing, got {0:?}")]
    UnorderedHarmonics(Vec<u32>),
    #[error("basis needs at least one harmonic and one DOF")]
    EmptyBasis,
    #[error("coefficient vector has length {got}, basis requires {want}")]
    CoefficientLength { got: usize, want: usize },
    #[error("time grid of {n_time} samples aliases harmonic {max_harmonic} (need a power of two >= {min})")]
    TimeGridTooSmall {
        n_time: usize,
        max_harmonic: u32,
        min: usize,
    },
    #[error("derivative order {0} not supported (k must be 0, 1, or 2)")]
    BadDerivativeOrder(u32),
    #[error("series has {got} rows, expected {want} columns x power-of-two rows")]
    SeriesShape { got: usize, want: usize },
}

/// A single coefficient block: the constant term or one cosine/sine component
/// of a listed harmonic.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Component {
    Constant,
    Cos(u32),
    Sin(u32),
}

impl Component {
    pub fn harmonic(&self) -> u32 {
        match self {
            Component::Constant => 0,
            Component::Cos(h) | Component::Sin(h) => *h,
        }
    }
}

/// Harmonic content and coefficient layout shared by a whole analysis run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HarmonicBasis {
    harmonics: Vec<u32>,
    num_dof: usize,
}

impl HarmonicBasis {
    pub fn new(harmonics: &[u32], num_dof: usize) -> Result<Self, HarmonicError> {
        if harmonics.is_empty() || num_dof == 0 {
            return Err(HarmonicError::EmptyBasis);
        }
        if harmonics.windows(2).any(|w| w[0] >= w[1]) {
            return Err(HarmonicError::UnorderedHarmonics(harmonics.to_vec()));
        }
        Ok(Self {
            harmonics: harmonics.to_vec(),
            num_dof,
        })
    }

    pub fn harmonics(&self) -> &[u32] {
        &self.harmonics
    }

    pub fn num_dof(&self) -> usize {
        self.num_dof
    }

    pub fn max_harmonic(&self) -> u32 {
        *self.harmonics.last().unwrap()
    }

    pub fn contains(&self, harmonic: u32) -> bool {
        self.harmonics.binary_search(&harmonic).is_ok()
    }

    /// Coefficient blocks in layout order.
    pub fn components(&self) -> Vec<Component> {
        let mut out = Vec::new();
        for &h in &self.harmonics {
            if h == 0 {
                out.push(Component::Constant);
            } else {
                out.push(Component::Cos(h));
                out.push(Component::Sin(h));
            }
        }
        out
    }

    pub fn num_components(&self) -> usize {
        self.harmonics
            .iter()
            .map(|&h| if h == 0 { 1 } else { 2 })
            .sum()
    }

    /// Length of a conforming coefficient vector.
    pub fn coeff_len(&self) -> usize {
        self.num_components() * self.num_dof
    }

    /// Block index of a component in the layout, if the harmonic is listed.
    pub fn component_index(&self, comp: Component) -> Option<usize> {
        let mut idx = 0;
        for &h in &self.harmonics {
            if h == 0 {
                if comp == Component::Constant {
                    return Some(idx);
                }
                idx += 1;
            } else {
                if comp == Component::Cos(h) {
                    return Some(idx);
                }
                idx += 1;
                if comp == Component::Sin(h) {
                    return Some(idx);
                }
                idx += 1;
            }
        }
        None
    }

    /// Flat index of (component block, dof) in a conforming vector.
    pub fn coeff_index(&self, comp: Component, dof: usize) -> Option<usize> {
        debug_assert!(dof < self.num_dof);
        self.component_index(comp).map(|b| b * self.num_dof + dof)
    }

    /// Smallest valid power-of-two time grid for this basis.
    pub fn min_time_samples(&self) -> usize {
        let min = 4 * self.max_harmonic() as usize + 2;
        min.max(4).next_power_of_two()
    }

    pub fn validate_time_grid(&self, n_time: usize) -> Result<(), HarmonicError> {
        if !n_time.is_power_of_two() || n_time < self.min_time_samples() {
            return Err(HarmonicError::TimeGridTooSmall {
                n_time,
                max_harmonic: self.max_harmonic(),
                min: self.min_time_samples(),
            });
        }
        Ok(())
    }

    /// Basis-function table `g[b][j]` for the k-th time derivative: row of
    /// values multiplying each coefficient block at nondimensional sample
    /// phase `theta_j = 2 pi j / n_time`. `omega` enters only through the
    /// `(n omega)^k` derivative scaling.
    pub fn sample_table(
        &self,
        n_time: usize,
        omega: f64,
        k: u32,
    ) -> Result<Vec<Vec<f64>>, HarmonicError> {
        self.validate_time_grid(n_time)?;
        if k > 2 {
            return Err(HarmonicError::BadDerivativeOrder(k));
        }
        let comps = self.components();
        let mut table = vec![vec![0.0; n_time]; comps.len()];
        for (b, comp) in comps.iter().enumerate() {
            for (j, slot) in table[b].iter_mut().enumerate() {
                let theta = 2.0 * std::f64::consts::PI * j as f64 / n_time as f64;
                *slot = match (comp, k) {
                    (Component::Constant, 0) => 1.0,
                    (Component::Constant, _) => 0.0,
                    (Component::Cos(h), 0) => (f64::from(*h) * theta).cos(),
                    (Component::Sin(h), 0) => (f64::from(*h) * theta).sin(),
                    (Component::Cos(h), 1) => {
                        -f64::from(*h) * omega * (f64::from(*h) * theta).sin()
                    }
                    (Component::Sin(h), 1) => f64::from(*h) * omega * (f64::from(*h) * theta).cos(),
                    (Component::Cos(h), 2) => {
                        -(f64::from(*h) * omega).powi(2) * (f64::from(*h) * theta).cos()
                    }
                    (Component::Sin(h), 2) => {
                        -(f64::from(*h) * omega).powi(2) * (f64::from(*h) * theta).sin()
                    }
                    _ => unreachable!(),
                };
            }
        }
        Ok(table)
    }

    /// Correlation-sum table `d[b][j]`: coefficients recovered from a sampled
    /// period as `X_b = sum_j d[b][j] x_j`.
    pub fn decode_table(&self, n_time: usize) -> Result<Vec<Vec<f64>>, HarmonicError> {
        self.validate_time_grid(n_time)?;
        let comps = self.components();
        let mut table = vec![vec![0.0; n_time]; comps.len()];
        for (b, comp) in comps.iter().enumerate() {
            for (j, slot) in table[b].iter_mut().enumerate() {
                let theta = 2.0 * std::f64::consts::PI * j as f64 / n_time as f64;
                *slot = match comp {
                    Component::Constant => 1.0 / n_time as f64,
                    Component::Cos(h) => 2.0 / n_time as f64 * (f64::from(*h) * theta).cos(),
                    Component::Sin(h) => 2.0 / n_time as f64 * (f64::from(*h) * theta).sin(),
                };
            }
        }
        Ok(table)
    }
}

/// Stacked Fourier coefficients for all DOFs and harmonics of a basis.
#[derive(Debug, Clone, PartialEq)]
pub struct HarmonicSet {
    basis: HarmonicBasis,
    coeffs: DVector<f64>,
}

impl HarmonicSet {
    pub fn zeros(basis: HarmonicBasis) -> Self {
        let n = basis.coeff_len();
        Self {
            basis,
            coeffs: DVector::zeros(n),
        }
    }

    pub fn from_coeffs(basis: HarmonicBasis, coeffs: DVector<f64>) -> Result<Self, HarmonicError> {
        if coeffs.len() != basis.coeff_len() {
            return Err(HarmonicError::CoefficientLength {
                got: coeffs.len(),
                want: basis.coeff_len(),
            });
        }
        Ok(Self { basis, coeffs })
    }

    pub fn basis(&self) -> &HarmonicBasis {
        &self.basis
    }

    pub fn coeffs(&self) -> &DVector<f64> {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut DVector<f64> {
        &mut self.coeffs
    }

    pub fn into_coeffs(self) -> DVector<f64> {
        self.coeffs
    }

    /// Coefficient of one component at one DOF.
    pub fn coeff(&self, comp: Component, dof: usize) -> f64 {
        match self.basis.coeff_index(comp, dof) {
            Some(i) => self.coeffs[i],
            None => 0.0,
        }
    }

    pub fn set_coeff(&mut self, comp: Component, dof: usize, value: f64) {
        if let Some(i) = self.basis.coeff_index(comp, dof) {
            self.coeffs[i] = value;
        }
    }

    /// All DOFs of one component block as a vector.
    pub fn block(&self, comp: Component) -> Option<DVector<f64>> {
        let n = self.basis.num_dof;
        self.basis
            .component_index(comp)
            .map(|b| self.coeffs.rows(b * n, n).into_owned())
    }

    pub fn set_block(&mut self, comp: Component, values: &DVector<f64>) {
        let n = self.basis.num_dof;
        if let Some(b) = self.basis.component_index(comp) {
            self.coeffs.rows_mut(b * n, n).copy_from(values);
        }
    }

    /// Response amplitude `X_n = sqrt(X_nc^2 + X_ns^2)` at one DOF
    /// (the signed constant term for harmonic 0).
    pub fn amplitude(&self, harmonic: u32, dof: usize) -> f64 {
        if harmonic == 0 {
            self.coeff(Component::Constant, dof)
        } else {
            let c = self.coeff(Component::Cos(harmonic), dof);
            let s = self.coeff(Component::Sin(harmonic), dof);
            c.hypot(s)
        }
    }

    /// Four-quadrant phase of `(X_nc, X_ns)` so that the motion is
    /// `X_n cos(n omega t - phi_n)`.
    pub fn phase(&self, harmonic: u32, dof: usize) -> f64 {
        if harmonic == 0 {
            0.0
        } else {
            let c = self.coeff(Component::Cos(harmonic), dof);
            let s = self.coeff(Component::Sin(harmonic), dof);
            s.atan2(c)
        }
    }

    /// Scalar extraction `r . X_b` for every component block, in layout order.
    pub fn extract_row(&self, row: &DVector<f64>) -> Vec<f64> {
        let n = self.basis.num_dof;
        (0..self.basis.num_components())
            .map(|b| {
                (0..n)
                    .map(|d| row[d] * self.coeffs[b * n + d])
                    .sum::<f64>()
            })
            .collect()
    }

    /// Copy with all coefficients of harmonics >= `cutoff` zeroed.
    pub fn truncated_below(&self, cutoff: u32) -> HarmonicSet {
        let mut out = self.clone();
        for comp in self.basis.components() {
            if comp.harmonic() >= cutoff {
                let zero = DVector::zeros(self.basis.num_dof);
                out.set_block(comp, &zero);
            }
        }
        out
    }

    /// Copy keeping only the coefficients of one harmonic.
    pub fn isolated(&self, harmonic: u32) -> HarmonicSet {
        let mut out = HarmonicSet::zeros(self.basis.clone());
        for comp in self.basis.components() {
            if comp.harmonic() == harmonic {
                if let Some(b) = self.block(comp) {
                    out.set_block(comp, &b);
                }
            }
        }
        out
    }

    /// Rotate every harmonic `n` by `n * phi` (a time shift of `phi / omega`),
    /// leaving the constant term unchanged.
    pub fn rotate(&self, phi: f64) -> HarmonicSet {
        let mut out = self.clone();
        for &h in self.basis.harmonics() {
            if h == 0 {
                continue;
            }
            let a = f64::from(h) * phi;
            let (sin_a, cos_a) = a.sin_cos();
            let c = self.block(Component::Cos(h)).unwrap();
            let s = self.block(Component::Sin(h)).unwrap();
            out.set_block(Component::Cos(h), &(&c * cos_a - &s * sin_a));
            out.set_block(Component::Sin(h), &(&c * sin_a + &s * cos_a));
        }
        out
    }
}

/// Sample the k-th time derivative of the motion over one period:
/// row `j` holds `d^k x / dt^k` at `t_j = 2 pi j / (omega n_time)`.
pub fn time_series_from_harmonics(
    x: &HarmonicSet,
    omega: f64,
    n_time: usize,
    k: u32,
) -> Result<DMatrix<f64>, HarmonicError> {
    let basis = x.basis();
    let table = basis.sample_table(n_time, omega, k)?;
    let n = basis.num_dof();
    let mut out = DMatrix::zeros(n_time, n);
    for (b, row) in table.iter().enumerate() {
        for d in 0..n {
            let coeff = x.coeffs()[b * n + d];
            if coeff == 0.0 {
                continue;
            }
            for j in 0..n_time {
                out[(j, d)] += coeff * row[j];
            }
        }
    }
    Ok(out)
}

/// Recover harmonic coefficients from one uniformly sampled period.
pub fn harmonics_from_time_series(
    series: &DMatrix<f64>,
    basis: &HarmonicBasis,
) -> Result<HarmonicSet, HarmonicError> {
    let n_time = series.nrows();
    if series.ncols() != basis.num_dof() {
        return Err(HarmonicError::SeriesShape {
            got: series.ncols(),
            want: basis.num_dof(),
        });
    }
    let table = basis.decode_table(n_time)?;
    let n = basis.num_dof();
    let mut coeffs = DVector::zeros(basis.coeff_len());
    for (b, row) in table.iter().enumerate() {
        for d in 0..n {
            let mut acc = 0.0;
            for j in 0..n_time {
                acc += row[j] * series[(j, d)];
            }
            coeffs[b * n + d] = acc;
        }
    }
    HarmonicSet::from_coeffs(basis.clone(), coeffs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn basis(harmonics: &[u32], n: usize) -> HarmonicBasis {
        HarmonicBasis::new(harmonics, n).unwrap()
    }

    #[test]
    fn layout_and_lengths() {
        let b = basis(&[0, 1, 3], 2);
        assert_eq!(b.coeff_len(), 2 * (1 + 2 + 2));
        assert_eq!(b.component_index(Component::Constant), Some(0));
        assert_eq!(b.component_index(Component::Cos(1)), Some(1));
        assert_eq!(b.component_index(Component::Sin(1)), Some(2));
        assert_eq!(b.component_index(Component::Cos(3)), Some(3));
        assert_eq!(b.component_index(Component::Sin(3)), Some(4));
        assert_eq!(b.component_index(Component::Cos(2)), None);
    }

    #[test]
    fn rejects_bad_bases() {
        assert!(HarmonicBasis::new(&[1, 1], 2).is_err());
        assert!(HarmonicBasis::new(&[2, 1], 2).is_err());
        assert!(HarmonicBasis::new(&[], 2).is_err());
        assert!(HarmonicBasis::new(&[0, 1], 0).is_err());
    }

    #[test]
    fn constant_term_reproduces_static_offset() {
        let b = basis(&[0], 1);
        let mut x = HarmonicSet::zeros(b);
        x.set_coeff(Component::Constant, 0, 5.0);
        let series = time_series_from_harmonics(&x, 1.3, 8, 0).unwrap();
        for j in 0..8 {
            assert_abs_diff_eq!(series[(j, 0)], 5.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn first_derivative_of_cosine() {
        let b = basis(&[1], 1);
        let mut x = HarmonicSet::zeros(b);
        x.set_coeff(Component::Cos(1), 0, 1.0);
        let omega = 2.0;
        let n_time = 16;
        let series = time_series_from_harmonics(&x, omega, n_time, 1).unwrap();
        for j in 0..n_time {
            let t = 2.0 * std::f64::consts::PI * j as f64 / (omega * n_time as f64);
            assert_abs_diff_eq!(series[(j, 0)], -2.0 * (2.0 * t).sin(), epsilon = 1e-14);
        }
    }

    #[test]
    fn transform_of_constant_and_cosine() {
        let b = basis(&[0, 1, 2], 1);
        let n_time = 32;
        let series = DMatrix::from_element(n_time, 1, 3.0);
        let x = harmonics_from_time_series(&series, &b).unwrap();
        assert_abs_diff_eq!(x.coeff(Component::Constant, 0), 3.0, epsilon = 1e-14);
        assert_abs_diff_eq!(x.coeff(Component::Cos(1), 0), 0.0, epsilon = 1e-14);

        let cosine = DMatrix::from_fn(n_time, 1, |j, _| {
            (2.0 * std::f64::consts::PI * j as f64 / n_time as f64).cos()
        });
        let x = harmonics_from_time_series(&cosine, &b).unwrap();
        assert_abs_diff_eq!(x.coeff(Component::Cos(1), 0), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(x.coeff(Component::Sin(1), 0), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(x.coeff(Component::Constant, 0), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(x.coeff(Component::Cos(2), 0), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn round_trip_recovers_random_coefficients() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..25 {
            let b = basis(&[0, 1, 2, 3, 5], 3);
            let coeffs = DVector::from_fn(b.coeff_len(), |_, _| rng.gen_range(-2.0..2.0));
            let x = HarmonicSet::from_coeffs(b.clone(), coeffs).unwrap();
            let series = time_series_from_harmonics(&x, 1.7, 32, 0).unwrap();
            let back = harmonics_from_time_series(&series, &b).unwrap();
            for i in 0..b.coeff_len() {
                assert_abs_diff_eq!(back.coeffs()[i], x.coeffs()[i], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn clipped_sine_matches_quadrature_oracle() {
        // Independent oracle: piecewise Simpson quadrature of the Fourier
        // integrals of clip(sin(theta), +-0.6), split exactly at the clip
        // crossings so the integrand is smooth on every panel.
        let clip = 0.6_f64;
        let f = |theta: f64| theta.sin().clamp(-clip, clip);
        let theta_c = clip.asin();
        let pi = std::f64::consts::PI;
        let breaks = [
            0.0,
            theta_c,
            pi - theta_c,
            pi + theta_c,
            2.0 * pi - theta_c,
            2.0 * pi,
        ];
        let simpson = |g: &dyn Fn(f64) -> f64, a: f64, b: f64| {
            let m = 4096;
            let h = (b - a) / m as f64;
            let mut acc = g(a) + g(b);
            for i in 1..m {
                let w = if i % 2 == 1 { 4.0 } else { 2.0 };
                acc += w * g(a + i as f64 * h);
            }
            acc * h / 3.0
        };
        let oracle = |n: u32| {
            let gc = |theta: f64| f(theta) * (f64::from(n) * theta).cos();
            let gs = |theta: f64| f(theta) * (f64::from(n) * theta).sin();
            let mut c = 0.0;
            let mut s = 0.0;
            for w in breaks.windows(2) {
                c += simpson(&gc, w[0], w[1]);
                s += simpson(&gs, w[0], w[1]);
            }
            (c / pi, s / pi)
        };

        let harmonics = [1u32, 2, 3, 4, 5, 7];
        let b = basis(&[0, 1, 2, 3, 4, 5, 7], 1);
        let n_time = 1 << 18;
        let series = DMatrix::from_fn(n_time, 1, |j, _| {
            f(2.0 * pi * j as f64 / n_time as f64)
        });
        let x = harmonics_from_time_series(&series, &b).unwrap();

        for n in harmonics {
            let (c, s) = oracle(n);
            assert_abs_diff_eq!(x.coeff(Component::Cos(n), 0), c, epsilon = 1e-10);
            assert_abs_diff_eq!(x.coeff(Component::Sin(n), 0), s, epsilon = 1e-10);
        }
        // flat tops keep only odd harmonics
        assert!(x.coeff(Component::Sin(3), 0).abs() > 1e-3);
        assert!(x.coeff(Component::Sin(2), 0).abs() < 1e-12);
    }

    #[test]
    fn parseval_holds_per_dof() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let b = basis(&[0, 1, 2, 4], 2);
        let coeffs = DVector::from_fn(b.coeff_len(), |_, _| rng.gen_range(-1.0..1.0));
        let x = HarmonicSet::from_coeffs(b.clone(), coeffs).unwrap();
        let series = time_series_from_harmonics(&x, 1.0, 64, 0).unwrap();
        for d in 0..2 {
            let mean_sq = (0..64).map(|j| series[(j, d)].powi(2)).sum::<f64>() / 64.0;
            let mut expect = x.coeff(Component::Constant, d).powi(2);
            for &h in &[1u32, 2, 4] {
                expect += 0.5 * x.amplitude(h, d).powi(2);
            }
            assert_abs_diff_eq!(mean_sq, expect, epsilon = 1e-10);
        }
    }

    #[test]
    fn derivative_swaps_cosine_and_sine() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b = basis(&[0, 1, 3], 1);
        let coeffs = DVector::from_fn(b.coeff_len(), |_, _| rng.gen_range(-1.0..1.0));
        let x = HarmonicSet::from_coeffs(b.clone(), coeffs).unwrap();
        let omega = 2.5;
        let series = time_series_from_harmonics(&x, omega, 32, 1).unwrap();
        let dx = harmonics_from_time_series(&series, &b).unwrap();
        for &h in &[1u32, 3] {
            let n = f64::from(h);
            assert_abs_diff_eq!(
                dx.coeff(Component::Cos(h), 0),
                n * omega * x.coeff(Component::Sin(h), 0),
                epsilon = 1e-12
            );
            assert_abs_diff_eq!(
                dx.coeff(Component::Sin(h), 0),
                -n * omega * x.coeff(Component::Cos(h), 0),
                epsilon = 1e-12
            );
        }
        assert_abs_diff_eq!(dx.coeff(Component::Constant, 0), 0.0, epsilon = 1e-13);
    }

    #[test]
    fn aliasing_grid_rejected() {
        let b = basis(&[0, 1, 2, 3], 1);
        let x = HarmonicSet::zeros(b.clone());
        assert!(matches!(
            time_series_from_harmonics(&x, 1.0, 8, 0),
            Err(HarmonicError::TimeGridTooSmall { .. })
        ));
        let series = DMatrix::zeros(12, 1);
        assert!(harmonics_from_time_series(&series, &b).is_err());
    }

    #[test]
    fn rotation_preserves_amplitude() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let b = basis(&[0, 1, 2, 3], 2);
        let coeffs = DVector::from_fn(b.coeff_len(), |_, _| rng.gen_range(-1.0..1.0));
        let x = HarmonicSet::from_coeffs(b.clone(), coeffs).unwrap();
        let rotated = x.rotate(0.83);
        for &h in &[1u32, 2, 3] {
            for d in 0..2 {
                assert_abs_diff_eq!(
                    rotated.amplitude(h, d),
                    x.amplitude(h, d),
                    epsilon = 1e-12
                );
            }
        }
        assert_abs_diff_eq!(
            rotated.coeff(Component::Constant, 0),
            x.coeff(Component::Constant, 0),
            epsilon = 1e-15
        );
        // rotating by phi shifts every phase by n*phi
        for d in 0..2 {
            let dphi = rotated.phase(2, d) - x.phase(2, d);
            let wrapped = (dphi - 2.0 * 0.83).rem_euclid(2.0 * std::f64::consts::PI);
            assert!(wrapped < 1e-10 || wrapped > 2.0 * std::f64::consts::PI - 1e-10);
        }
    }
}
