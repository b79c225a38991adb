//! Spectral density, periodogram and sample autocovariances.

use std::io::Write;

use nalgebra::{Complex, DMatrix};
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::path::{csv_err, SamplePath};
use crate::sampled::{complexify, resolvent_left, SampledModel};
use crate::scalar::{cis, Real};

/// `f(ω) = (1/2π) C (e^{iω} I − e^{AΔ})^{-1} Σ_N (e^{-iω} I − e^{AᵀΔ})^{-1} Cᵀ` by linear solves.
pub fn spectral_density<T: Real>(sm: &SampledModel<T>, omega: T) -> DMatrix<Complex<T>> {
    // C (zI − M)^{-1} = z^{-1} C (I − M z^{-1})^{-1}.
    let z = cis(omega);
    let zi = z.conj();
    let g = resolvent_left(&complexify(sm.c()), sm.e_ad(), zi) * zi;
    let s = complexify(sm.sigma_n());
    let scale = Complex::new(T::one() / T::two_pi(), T::zero());
    &g * s * g.adjoint() * scale
}

/// `L (wI − M)^{-1} R` as a ratio of polynomials in `w`.
///
/// The adjugate coefficients come from the Faddeev-LeVerrier recursion, so each
/// evaluation is a pair of Horner sweeps with no linear solves.
#[derive(Debug, Clone)]
pub struct RationalResolvent<T: Real> {
    rows: usize,
    cols: usize,
    /// Monic characteristic polynomial of `M`, highest degree first.
    poly: Vec<T>,
    /// `L B_k R` (rows×cols, column-major), highest degree first.
    coeffs: Vec<Vec<T>>,
}

impl<T: Real> RationalResolvent<T> {
    pub fn new(left: &DMatrix<T>, m: &DMatrix<T>, right: &DMatrix<T>) -> Self {
        let n = m.nrows();
        let mut poly = vec![T::one()];
        let mut coeffs = Vec::with_capacity(n);
        let mut bk = DMatrix::<T>::identity(n, n);
        for k in 1..=n {
            coeffs.push((left * &bk * right).as_slice().to_vec());
            let mb = m * &bk;
            let ak = -mb.trace() / T::from_usize_lossy(k);
            poly.push(ak);
            bk = mb;
            for i in 0..n {
                bk[(i, i)] += ak;
            }
        }
        Self { rows: left.nrows(), cols: right.ncols(), poly, coeffs }
    }

    /// Writes the numerator `L adj(wI − M) R` into `num` and returns `det(wI − M)`.
    pub fn eval_into(&self, w: Complex<T>, num: &mut Vec<Complex<T>>) -> Complex<T> {
        num.clear();
        num.extend(self.coeffs[0].iter().map(|&x| Complex::new(x, T::zero())));
        for r in &self.coeffs[1..] {
            for (g, &x) in num.iter_mut().zip(r.iter()) {
                *g = *g * w + Complex::new(x, T::zero());
            }
        }
        let mut p = Complex::new(self.poly[0], T::zero());
        for &c in &self.poly[1..] {
            p = p * w + Complex::new(c, T::zero());
        }
        p
    }

    /// `L (wI − M)^{-1} R`.
    pub fn eval(&self, w: Complex<T>) -> DMatrix<Complex<T>> {
        let mut num = Vec::new();
        let p = self.eval_into(w, &mut num);
        DMatrix::from_vec(self.rows, self.cols, num) / p
    }
}

/// Solve-free evaluator of the spectral density for repeated use at one parameter.
#[derive(Debug, Clone)]
pub struct SpectralEvaluator<T: Real> {
    n: usize,
    m: usize,
    /// `C (wI − e^{AΔ})^{-1}`.
    transfer: RationalResolvent<T>,
    /// `Σ_N` column-major.
    sigma: Vec<T>,
}

impl<T: Real> SpectralEvaluator<T> {
    pub fn new(sm: &SampledModel<T>) -> Self {
        Self::from_parts(sm.e_ad(), sm.sigma_n(), sm.c())
    }

    pub fn from_parts(e_ad: &DMatrix<T>, sigma_n: &DMatrix<T>, c: &DMatrix<T>) -> Self {
        let n = e_ad.nrows();
        let transfer = RationalResolvent::new(c, e_ad, &DMatrix::identity(n, n));
        Self { n, m: c.nrows(), transfer, sigma: sigma_n.as_slice().to_vec() }
    }

    pub fn output_dim(&self) -> usize {
        self.m
    }

    /// Writes `f(ω)` at `z = e^{iω}` into `out` (m×m column-major).
    pub fn density_at(&self, z: Complex<T>, scratch: &mut SpectralScratch<T>, out: &mut [Complex<T>]) {
        let (n, m) = (self.n, self.m);
        let p = self.transfer.eval_into(z, &mut scratch.g);
        let g = &scratch.g;
        let h = &mut scratch.h;
        let scale = T::one() / (T::two_pi() * (p.re * p.re + p.im * p.im));
        // h = g Σ_N (m×N)
        h.clear();
        h.resize(m * n, Complex::new(T::zero(), T::zero()));
        for j in 0..n {
            for k in 0..n {
                let s = self.sigma[k + n * j];
                if s != T::zero() {
                    for a in 0..m {
                        h[a + m * j] += g[a + m * k] * s;
                    }
                }
            }
        }
        for b in 0..m {
            for a in 0..m {
                let mut acc = Complex::new(T::zero(), T::zero());
                for j in 0..n {
                    acc += h[a + m * j] * g[b + m * j].conj();
                }
                out[a + m * b] = acc * scale;
            }
        }
    }

    pub fn density(&self, omega: T) -> DMatrix<Complex<T>> {
        let mut scratch = SpectralScratch::default();
        let mut out = vec![Complex::new(T::zero(), T::zero()); self.m * self.m];
        self.density_at(cis(omega), &mut scratch, &mut out);
        DMatrix::from_vec(self.m, self.m, out)
    }
}

/// Reusable buffers for [`SpectralEvaluator::density_at`].
#[derive(Debug, Clone, Default)]
pub struct SpectralScratch<T: Real> {
    g: Vec<Complex<T>>,
    h: Vec<Complex<T>>,
}

/// `(tr(F^{-1} P), log det F)` for Hermitian positive definite `F` and Hermitian `P`,
/// both m×m column-major. `None` if `F` is not positive definite.
///
/// The trace is returned as a complex number so callers can guard its imaginary residual.
pub fn trace_inv_logdet<T: Real>(m: usize, f: &[Complex<T>], p: &[Complex<T>]) -> Option<(Complex<T>, T)> {
    match m {
        1 => {
            let d = f[0].re;
            if !(d > T::zero()) {
                return None;
            }
            Some((p[0] / d, d.ln()))
        }
        2 => {
            let (a, b, d) = (f[0].re, f[2], f[3].re);
            let det = a * d - (b.re * b.re + b.im * b.im);
            if !(a > T::zero()) || !(det > T::zero()) {
                return None;
            }
            // F^{-1} = [[d, −b], [−b̄, a]] / det.
            let tr = p[0] * d + p[3] * a - b * p[1] - b.conj() * p[2];
            Some((tr / det, det.ln()))
        }
        _ => {
            let fm = DMatrix::from_column_slice(m, m, f);
            let pm = DMatrix::from_column_slice(m, m, p);
            let chol = fm.cholesky()?;
            let logdet = chol.l_dirty().diagonal().iter().fold(T::zero(), |acc, z| acc + z.re.ln()) * T::lit(2.0);
            let tr = chol.solve(&pm).trace();
            Some((tr, logdet))
        }
    }
}

/// Periodogram on the frequencies `ω_j = πj/n`, `j = −n+1, …, n`.
#[derive(Debug, Clone)]
pub struct PeriodogramGrid<T: Real> {
    n: usize,
    m: usize,
    /// Entries for `j = 0..=n`, each m×m column-major; negative `j` follow by conjugation.
    half: Vec<Vec<Complex<T>>>,
    /// `e^{iω_j}` for `j = 0..=n`.
    phases: Vec<Complex<T>>,
}

impl<T: Real> PeriodogramGrid<T> {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.m
    }

    /// `ω_j = π j / n`.
    pub fn frequency(&self, j: i64) -> T {
        T::pi() * T::lit(j as f64) / T::from_usize_lossy(self.n)
    }

    /// Grid indices `−n+1..=n`.
    pub fn indices(&self) -> std::ops::RangeInclusive<i64> {
        (1 - self.n as i64)..=(self.n as i64)
    }

    /// `e^{iω_j}` for `0 ≤ j ≤ n`.
    pub fn phase(&self, j: usize) -> Complex<T> {
        self.phases[j]
    }

    /// Column-major slice of `I_n(ω_j)` for `0 ≤ j ≤ n`.
    pub fn half_value(&self, j: usize) -> &[Complex<T>] {
        &self.half[j]
    }

    /// `I_n(ω_j)` for any grid index.
    pub fn value(&self, j: i64) -> DMatrix<Complex<T>> {
        assert!(self.indices().contains(&j), "grid index {j} out of range");
        let v = DMatrix::from_column_slice(self.m, self.m, &self.half[j.unsigned_abs() as usize]);
        if j < 0 {
            v.transpose()
        } else {
            v
        }
    }

    /// Writes `j,omega,re_a_b,im_a_b,...` rows for the full grid (1-based `a`, `b`).
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["j".to_string(), "omega".to_string()];
        for a in 1..=self.m {
            for b in 1..=self.m {
                header.push(format!("re_{a}_{b}"));
                header.push(format!("im_{a}_{b}"));
            }
        }
        w.write_record(&header).map_err(csv_err)?;
        for j in self.indices() {
            let v = self.value(j);
            let mut row = vec![j.to_string(), format!("{:.16e}", self.frequency(j).as_f64())];
            for a in 0..self.m {
                for b in 0..self.m {
                    row.push(format!("{:.16e}", v[(a, b)].re.as_f64()));
                    row.push(format!("{:.16e}", v[(a, b)].im.as_f64()));
                }
            }
            w.write_record(&row).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `I_n(ω_j) = (2πn)^{-1} d(ω_j) d(ω_j)ᴴ` with `d(ω) = Σ_k Y_k e^{-ikω}`, by a length-2n FFT.
pub fn periodogram<T: Real>(path: &SamplePath<T>) -> Result<PeriodogramGrid<T>> {
    let n = path.len();
    if n < 2 {
        return Err(Error::Range(format!("periodogram needs at least 2 observations, got {n}")));
    }
    let m = path.dim();
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(2 * n);
    let y = path.observations();
    let mut dft: Vec<Vec<Complex<f64>>> = Vec::with_capacity(m);
    for a in 0..m {
        // Slot t holds Y_t, so bin j picks up e^{-i t π j / n}.
        let mut buf = vec![Complex::new(0.0, 0.0); 2 * n];
        for k in 0..n {
            buf[k + 1] = Complex::new(y[(k, a)].as_f64(), 0.0);
        }
        // Only the first 2n slots are used; slot 2n would alias to 0 and the index stops at n.
        fft.process(&mut buf);
        dft.push(buf);
    }
    let norm = 1.0 / (2.0 * std::f64::consts::PI * n as f64);
    let half = (0..=n)
        .map(|j| {
            let mut v = vec![Complex::new(T::zero(), T::zero()); m * m];
            for b in 0..m {
                for a in 0..m {
                    let z = dft[a][j] * dft[b][j].conj() * norm;
                    v[a + m * b] = Complex::new(T::lit(z.re), T::lit(z.im));
                }
            }
            v
        })
        .collect();
    let phases = (0..=n)
        .map(|j| {
            let w = std::f64::consts::PI * j as f64 / n as f64;
            Complex::new(T::lit(w.cos()), T::lit(w.sin()))
        })
        .collect();
    Ok(PeriodogramGrid { n, m, half, phases })
}

/// Sample autocovariances `Γ̄_n(h) = n^{-1} Σ_{k=1}^{n-h} Y_{k+h} Y_kᵀ` for `h = 0..=max_lag`.
#[derive(Debug, Clone)]
pub struct AutocovarianceSet<T: Real> {
    values: Vec<DMatrix<T>>,
}

impl<T: Real> AutocovarianceSet<T> {
    pub fn max_lag(&self) -> usize {
        self.values.len() - 1
    }

    /// `Γ̄_n(h)`, with `Γ̄_n(−h) = Γ̄_n(h)ᵀ`.
    pub fn at(&self, h: i64) -> DMatrix<T> {
        let g = &self.values[h.unsigned_abs() as usize];
        if h < 0 {
            g.transpose()
        } else {
            g.clone()
        }
    }

    pub fn values(&self) -> &[DMatrix<T>] {
        &self.values
    }
}

pub fn sample_autocovariance<T: Real>(path: &SamplePath<T>, max_lag: usize) -> Result<AutocovarianceSet<T>> {
    let n = path.len();
    if max_lag >= n {
        return Err(Error::Range(format!("lag {max_lag} needs more than {n} observations")));
    }
    let y = path.observations();
    let m = path.dim();
    let inv_n = T::one() / T::from_usize_lossy(n);
    let values = (0..=max_lag)
        .map(|h| {
            let mut g = DMatrix::<T>::zeros(m, m);
            for k in 0..n - h {
                for a in 0..m {
                    for b in 0..m {
                        g[(a, b)] += y[(k + h, a)] * y[(k, b)];
                    }
                }
            }
            g * inv_n
        })
        .collect();
    Ok(AutocovarianceSet { values })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampled::{build_sampled, ContinuousModel};
    use rand::{Rng, SeedableRng};

    fn m(r: usize, c: usize, v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(r, c, v)
    }

    fn carma21() -> SampledModel<f64> {
        let model = ContinuousModel::new(
            m(2, 2, &[0.0, 1.0, -2.0, -2.0]),
            m(2, 1, &[-1.0, 0.0]),
            m(1, 2, &[1.0, 0.0]),
            m(1, 1, &[1.0]),
        )
        .unwrap();
        build_sampled(&model, 1.0).unwrap()
    }

    fn mcarma21() -> SampledModel<f64> {
        let model = ContinuousModel::new(
            m(3, 3, &[-1.0, -2.0, 0.0, 0.0, 0.0, 1.0, 1.0, -2.0, -3.0]),
            m(3, 2, &[-1.0, -2.0, 1.0, 2.0, -2.0, -5.0]),
            m(2, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]),
            m(2, 2, &[0.4751, -0.1622, -0.1622, 0.3708]),
        )
        .unwrap();
        build_sampled(&model, 1.0).unwrap()
    }

    fn random_path(n: usize, dim: usize, seed: u64) -> SamplePath<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f64> = (0..n * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        SamplePath::new(DMatrix::from_row_slice(n, dim, &data), 1.0).unwrap()
    }

    #[test]
    fn scalar_ou_at_zero() {
        let model = ContinuousModel::new(m(1, 1, &[-1.0]), m(1, 1, &[1.0]), m(1, 1, &[1.0]), m(1, 1, &[1.0])).unwrap();
        let sm = build_sampled(&model, 1.0).unwrap();
        let sn = (1.0 - (-2.0f64).exp()) / 2.0;
        let expect = sn / (2.0 * std::f64::consts::PI * (1.0 - (-1.0f64).exp()).powi(2));
        assert!((spectral_density(&sm, 0.0)[(0, 0)].re - expect).abs() < 1e-12);
        assert!((SpectralEvaluator::new(&sm).density(0.0)[(0, 0)].re - expect).abs() < 1e-12);
    }

    #[test]
    fn density_symmetry() {
        let sm = mcarma21();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let w: f64 = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
            let a = spectral_density(&sm, w);
            let b = spectral_density(&sm, -w);
            assert!((a.transpose() - b).camax() < 1e-12);
        }
    }

    #[test]
    fn density_routes_agree() {
        for sm in [carma21(), mcarma21()] {
            let ev = SpectralEvaluator::new(&sm);
            for j in 0..256 {
                let w = std::f64::consts::PI * (2.0 * j as f64 / 256.0 - 1.0);
                let d = spectral_density(&sm, w);
                assert!((&d - sm.innovations_spectral_density(w)).camax() < 1e-8);
                assert!((&d - ev.density(w)).camax() < 1e-12);
            }
        }
    }

    #[test]
    fn density_integrates_to_stationary_variance() {
        for sm in [carma21(), mcarma21()] {
            let nodes = 8192;
            let mut acc = DMatrix::<Complex<f64>>::zeros(sm.output_dim(), sm.output_dim());
            for j in 0..nodes {
                let w = -std::f64::consts::PI + 2.0 * std::f64::consts::PI * j as f64 / nodes as f64;
                acc += spectral_density(&sm, w);
            }
            acc *= Complex::new(2.0 * std::f64::consts::PI / nodes as f64, 0.0);
            let gamma0 = &sm.autocovariances(0).unwrap()[0];
            assert!((acc.map(|z| z.re) - gamma0).amax() < 1e-8);
        }
    }

    #[test]
    fn acvf_hand_values() {
        let p = SamplePath::new(m(3, 1, &[1.0, 2.0, 3.0]), 1.0).unwrap();
        let g = sample_autocovariance(&p, 2).unwrap();
        assert!((g.at(0)[(0, 0)] - 14.0 / 3.0).abs() < 1e-15);
        assert!((g.at(1)[(0, 0)] - 8.0 / 3.0).abs() < 1e-15);
        assert!((g.at(2)[(0, 0)] - 1.0).abs() < 1e-15);
        assert!(matches!(sample_autocovariance(&p, 3), Err(Error::Range(_))));
    }

    #[test]
    fn zero_path() {
        let p = SamplePath::new(DMatrix::<f64>::zeros(10, 2), 1.0).unwrap();
        let grid = periodogram(&p).unwrap();
        assert!(grid.indices().all(|j| grid.value(j).camax() == 0.0));
        let g = sample_autocovariance(&p, 9).unwrap();
        assert!(g.values().iter().all(|x| x.amax() == 0.0));
    }

    fn direct_periodogram(p: &SamplePath<f64>, w: f64) -> DMatrix<Complex<f64>> {
        let y = p.observations();
        let mut d = DMatrix::<Complex<f64>>::zeros(p.dim(), 1);
        for k in 0..p.len() {
            let e = cis(-((k + 1) as f64) * w);
            for a in 0..p.dim() {
                d[a] += e * y[(k, a)];
            }
        }
        &d * d.adjoint() / Complex::new(2.0 * std::f64::consts::PI * p.len() as f64, 0.0)
    }

    #[test]
    fn fft_matches_direct_sum() {
        for (n, dim) in [(8, 1), (9, 2), (17, 3)] {
            let p = random_path(n, dim, n as u64);
            let grid = periodogram(&p).unwrap();
            for j in grid.indices() {
                let direct = direct_periodogram(&p, grid.frequency(j));
                assert!((grid.value(j) - direct).camax() < 1e-12, "n={n} j={j}");
            }
        }
    }

    #[test]
    fn too_short() {
        let p = SamplePath::new(m(1, 1, &[1.0]), 1.0).unwrap();
        assert!(matches!(periodogram(&p), Err(Error::Range(_))));
    }

    #[test]
    fn csv_layout() {
        let p = random_path(4, 2, 1);
        let grid = periodogram(&p).unwrap();
        let mut buf = Vec::new();
        grid.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "j,omega,re_1_1,im_1_1,re_1_2,im_1_2,re_2_1,im_2_1,re_2_2,im_2_2");
        assert_eq!(text.lines().count(), 1 + 8);
        assert!(lines.next().unwrap().starts_with("-3,"));
    }

    #[test]
    fn trace_logdet_general_matches_closed_forms() {
        let sm = mcarma21();
        let f = spectral_density(&sm, 0.7);
        let p = direct_periodogram(&random_path(12, 2, 5), 0.7);
        let (t2, l2) = trace_inv_logdet(2, f.as_slice(), p.as_slice()).unwrap();
        let inv = f.clone().try_inverse().unwrap();
        let t = (inv * &p).trace();
        let l = f.determinant().re.ln();
        assert!((t - t2).norm() < 1e-12 && (l - l2).abs() < 1e-12);
        // Route through the generic branch by embedding in 3x3 with a unit block.
        let mut f3 = DMatrix::<Complex<f64>>::identity(3, 3);
        f3.view_mut((0, 0), (2, 2)).copy_from(&f);
        let mut p3 = DMatrix::<Complex<f64>>::zeros(3, 3);
        p3.view_mut((0, 0), (2, 2)).copy_from(&p);
        let (t3, l3) = trace_inv_logdet(3, f3.as_slice(), p3.as_slice()).unwrap();
        assert!((t - t3).norm() < 1e-12 && (l - l3).abs() < 1e-12);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]
            #[test]
            fn periodogram_acvf_identity(n in 2usize..=64, dim in 1usize..=2, seed in any::<u64>()) {
                let p = random_path(n, dim, seed);
                let grid = periodogram(&p).unwrap();
                let g = sample_autocovariance(&p, n - 1).unwrap();
                let two_pi = 2.0 * std::f64::consts::PI;
                let mut sum = DMatrix::<Complex<f64>>::zeros(dim, dim);
                for j in grid.indices() {
                    let w = grid.frequency(j);
                    let mut acc = DMatrix::<Complex<f64>>::zeros(dim, dim);
                    for h in (1 - n as i64)..(n as i64) {
                        acc += g.at(h).map(|x| Complex::new(x, 0.0)) * cis(-(h as f64) * w);
                    }
                    acc /= Complex::new(two_pi, 0.0);
                    let v = grid.value(j);
                    prop_assert!((&v - acc).camax() <= 1e-10);
                    // Hermitian and positive semidefinite.
                    prop_assert!((&v - v.adjoint()).camax() <= 1e-12);
                    let ev = v.clone().symmetric_eigenvalues();
                    prop_assert!(ev.iter().all(|&e| e >= -1e-10));
                    if j < 0 {
                        prop_assert!((grid.value(-j).transpose() - &v).camax() == 0.0);
                    }
                    sum += v;
                }
                let lhs = sum * Complex::new(std::f64::consts::PI / n as f64, 0.0);
                prop_assert!((lhs.map(|z| z.re) - g.at(0)).amax() <= 1e-10);
                prop_assert!(lhs.map(|z| z.im).amax() <= 1e-10);
            }
        }
    }
}
