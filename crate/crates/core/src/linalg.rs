//! Small dense complex matrices with split real/imaginary storage.
//!
//! The propagators spend nearly all of their time multiplying matrices of
//! dimension 4..216. Column-major storage with separate real and imaginary
//! planes lets the inner loops vectorize, which nalgebra's generic complex
//! kernels do not.

use nalgebra::DMatrix;
use num_complex::Complex64;

#[derive(Clone, Debug, PartialEq)]
pub struct CMat {
    rows: usize,
    cols: usize,
    re: Vec<f64>,
    im: Vec<f64>,
}

impl CMat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            re: vec![0.0; rows * cols],
            im: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.re[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_dmatrix(m: &DMatrix<Complex64>) -> Self {
        let (rows, cols) = m.shape();
        let mut out = Self::zeros(rows, cols);
        for (k, z) in m.as_slice().iter().enumerate() {
            out.re[k] = z.re;
            out.im[k] = z.im;
        }
        out
    }

    pub fn to_dmatrix(&self) -> DMatrix<Complex64> {
        DMatrix::from_iterator(
            self.rows,
            self.cols,
            self.re.iter().zip(&self.im).map(|(&r, &i)| Complex64::new(r, i)),
        )
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        let k = j * self.rows + i;
        Complex64::new(self.re[k], self.im[k])
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, z: Complex64) {
        let k = j * self.rows + i;
        self.re[k] = z.re;
        self.im[k] = z.im;
    }

    pub fn re(&self) -> &[f64] {
        &self.re
    }

    pub fn im(&self) -> &[f64] {
        &self.im
    }

    /// Mutable real and imaginary planes, column-major.
    pub fn parts_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        (&mut self.re, &mut self.im)
    }

    pub fn fill_zero(&mut self) {
        self.re.fill(0.0);
        self.im.fill(0.0);
    }

    pub fn copy_from(&mut self, other: &CMat) {
        debug_assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.re.copy_from_slice(&other.re);
        self.im.copy_from_slice(&other.im);
    }

    /// `out = a * b`.
    pub fn mul_into(a: &CMat, b: &CMat, out: &mut CMat) {
        assert_eq!(a.cols, b.rows);
        assert_eq!((out.rows, out.cols), (a.rows, b.cols));
        let (m, k) = (a.rows, a.cols);
        for j in 0..b.cols {
            let ore = &mut out.re[j * m..(j + 1) * m];
            let oim = &mut out.im[j * m..(j + 1) * m];
            ore.fill(0.0);
            oim.fill(0.0);
            for p in 0..k {
                let br = b.re[j * k + p];
                let bi = b.im[j * k + p];
                if br == 0.0 && bi == 0.0 {
                    continue;
                }
                let ar = &a.re[p * m..(p + 1) * m];
                let ai = &a.im[p * m..(p + 1) * m];
                for i in 0..m {
                    ore[i] += ar[i] * br - ai[i] * bi;
                    oim[i] += ar[i] * bi + ai[i] * br;
                }
            }
        }
    }

    /// `out = a * b†`.
    pub fn mul_adj_into(a: &CMat, b: &CMat, out: &mut CMat) {
        assert_eq!(a.cols, b.cols);
        assert_eq!((out.rows, out.cols), (a.rows, b.rows));
        let (m, k, n) = (a.rows, a.cols, b.rows);
        for j in 0..n {
            let ore = &mut out.re[j * m..(j + 1) * m];
            let oim = &mut out.im[j * m..(j + 1) * m];
            ore.fill(0.0);
            oim.fill(0.0);
            for p in 0..k {
                // (b†)[p, j] = conj(b[j, p])
                let br = b.re[p * n + j];
                let bi = -b.im[p * n + j];
                if br == 0.0 && bi == 0.0 {
                    continue;
                }
                let ar = &a.re[p * m..(p + 1) * m];
                let ai = &a.im[p * m..(p + 1) * m];
                for i in 0..m {
                    ore[i] += ar[i] * br - ai[i] * bi;
                    oim[i] += ar[i] * bi + ai[i] * br;
                }
            }
        }
    }

    /// `out = a† * b`.
    pub fn adj_mul_into(a: &CMat, b: &CMat, out: &mut CMat) {
        assert_eq!(a.rows, b.rows);
        assert_eq!((out.rows, out.cols), (a.cols, b.cols));
        let (k, m, n) = (a.rows, a.cols, b.cols);
        for j in 0..n {
            let brc = &b.re[j * k..(j + 1) * k];
            let bic = &b.im[j * k..(j + 1) * k];
            for i in 0..m {
                let arc = &a.re[i * k..(i + 1) * k];
                let aic = &a.im[i * k..(i + 1) * k];
                let mut sr = 0.0;
                let mut si = 0.0;
                for p in 0..k {
                    sr += arc[p] * brc[p] + aic[p] * bic[p];
                    si += arc[p] * bic[p] - aic[p] * brc[p];
                }
                out.re[j * m + i] = sr;
                out.im[j * m + i] = si;
            }
        }
    }

    pub fn mul(&self, rhs: &CMat) -> CMat {
        let mut out = CMat::zeros(self.rows, rhs.cols);
        CMat::mul_into(self, rhs, &mut out);
        out
    }

    pub fn mul_adj(&self, rhs: &CMat) -> CMat {
        let mut out = CMat::zeros(self.rows, rhs.rows);
        CMat::mul_adj_into(self, rhs, &mut out);
        out
    }

    pub fn adj_mul(&self, rhs: &CMat) -> CMat {
        let mut out = CMat::zeros(self.cols, rhs.cols);
        CMat::adj_mul_into(self, rhs, &mut out);
        out
    }

    pub fn adjoint(&self) -> CMat {
        let mut out = CMat::zeros(self.cols, self.rows);
        for j in 0..self.cols {
            for i in 0..self.rows {
                out.re[i * self.cols + j] = self.re[j * self.rows + i];
                out.im[i * self.cols + j] = -self.im[j * self.rows + i];
            }
        }
        out
    }

    /// `self += alpha * x`.
    pub fn axpy(&mut self, alpha: Complex64, x: &CMat) {
        debug_assert_eq!((self.rows, self.cols), (x.rows, x.cols));
        let (ar, ai) = (alpha.re, alpha.im);
        if ai == 0.0 {
            for k in 0..self.re.len() {
                self.re[k] += ar * x.re[k];
                self.im[k] += ar * x.im[k];
            }
        } else {
            for k in 0..self.re.len() {
                self.re[k] += ar * x.re[k] - ai * x.im[k];
                self.im[k] += ar * x.im[k] + ai * x.re[k];
            }
        }
    }

    /// `self += alpha * x` for real `alpha`.
    pub fn add_scaled(&mut self, alpha: f64, x: &CMat) {
        self.axpy(Complex64::new(alpha, 0.0), x);
    }

    pub fn scale(&mut self, alpha: f64) {
        for v in self.re.iter_mut().chain(self.im.iter_mut()) {
            *v *= alpha;
        }
    }

    pub fn scaled(&self, alpha: Complex64) -> CMat {
        let mut out = CMat::zeros(self.rows, self.cols);
        out.axpy(alpha, self);
        out
    }

    pub fn trace(&self) -> Complex64 {
        let n = self.rows.min(self.cols);
        let mut t = Complex64::new(0.0, 0.0);
        for i in 0..n {
            t.re += self.re[i * self.rows + i];
            t.im += self.im[i * self.rows + i];
        }
        t
    }

    /// `Tr(a * b)` without forming the product.
    pub fn trace_of_product(a: &CMat, b: &CMat) -> Complex64 {
        assert_eq!((a.rows, a.cols), (b.cols, b.rows));
        let (m, k) = (a.rows, a.cols);
        let mut sr = 0.0;
        let mut si = 0.0;
        for i in 0..m {
            for p in 0..k {
                // a[i,p] * b[p,i]
                let (xr, xi) = (a.re[p * m + i], a.im[p * m + i]);
                let (yr, yi) = (b.re[i * k + p], b.im[i * k + p]);
                sr += xr * yr - xi * yi;
                si += xr * yi + xi * yr;
            }
        }
        Complex64::new(sr, si)
    }

    /// Squared Frobenius norm.
    pub fn norm_sqr(&self) -> f64 {
        self.re.iter().chain(&self.im).map(|v| v * v).sum()
    }

    /// Maximum absolute column sum.
    pub fn norm1(&self) -> f64 {
        (0..self.cols)
            .map(|j| {
                (0..self.rows)
                    .map(|i| {
                        let k = j * self.rows + i;
                        self.re[k].hypot(self.im[k])
                    })
                    .sum::<f64>()
            })
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.re
            .iter()
            .zip(&self.im)
            .map(|(r, i)| r.hypot(*i))
            .fold(0.0, f64::max)
    }

    /// Max |A - A†|.
    pub fn hermitian_defect(&self) -> f64 {
        let n = self.rows;
        let mut worst: f64 = 0.0;
        for j in 0..n {
            for i in 0..=j {
                let a = self.get(i, j);
                let b = self.get(j, i).conj();
                worst = worst.max((a - b).norm());
            }
        }
        worst
    }

    /// Replace by (A + A†)/2.
    pub fn hermitize(&mut self) {
        let n = self.rows;
        for j in 0..n {
            for i in 0..j {
                let a = self.get(i, j);
                let b = self.get(j, i);
                let avg = (a + b.conj()) * 0.5;
                self.set(i, j, avg);
                self.set(j, i, avg.conj());
            }
            let k = j * n + j;
            self.im[k] = 0.0;
        }
    }

    /// Matrix exponential by scaling and squaring with a degree-16 Taylor
    /// polynomial evaluated in Paterson-Stockmeyer form.
    pub fn expm(&self) -> CMat {
        assert_eq!(self.rows, self.cols);
        let n = self.rows;
        let norm = self.norm1();
        let squarings = if norm > 0.5 {
            (norm / 0.5).log2().ceil() as i32
        } else {
            0
        };
        let mut a = self.clone();
        a.scale(0.5f64.powi(squarings));

        // c_k = 1/k!
        let mut coef = [0.0f64; 17];
        coef[0] = 1.0;
        for k in 1..17 {
            coef[k] = coef[k - 1] / k as f64;
        }
        let a2 = a.mul(&a);
        let a3 = a2.mul(&a);
        let a4 = a3.mul(&a);
        let powers = [CMat::identity(n), a, a2, a3];
        let block = |i: usize| -> CMat {
            let mut b = CMat::zeros(n, n);
            for (l, p) in powers.iter().enumerate() {
                b.add_scaled(coef[4 * i + l], p);
            }
            b
        };
        // p = B0 + A4 (B1 + A4 (B2 + A4 (B3 + A4 c16)))
        let mut acc = block(3);
        acc.add_scaled(coef[16], &a4);
        let mut tmp = CMat::zeros(n, n);
        for i in (0..3).rev() {
            CMat::mul_into(&a4, &acc, &mut tmp);
            acc = block(i);
            acc.add_scaled(1.0, &tmp);
        }
        for _ in 0..squarings {
            CMat::mul_into(&acc, &acc, &mut tmp);
            std::mem::swap(&mut acc, &mut tmp);
        }
        acc
    }

    /// Returns `(exp(A), L(A, E))` where `L` is the Fréchet derivative of the
    /// exponential at `A` in direction `E`, via the block-triangular identity
    /// `exp([[A, E], [0, A]]) = [[exp(A), L(A, E)], [0, exp(A)]]`.
    pub fn expm_frechet(a: &CMat, e: &CMat) -> (CMat, CMat) {
        let n = a.rows;
        let mut big = CMat::zeros(2 * n, 2 * n);
        for j in 0..n {
            for i in 0..n {
                big.set(i, j, a.get(i, j));
                big.set(i + n, j + n, a.get(i, j));
                big.set(i, j + n, e.get(i, j));
            }
        }
        let ex = big.expm();
        let mut u = CMat::zeros(n, n);
        let mut l = CMat::zeros(n, n);
        for j in 0..n {
            for i in 0..n {
                u.set(i, j, ex.get(i, j));
                l.set(i, j, ex.get(i, j + n));
            }
        }
        (u, l)
    }
}

impl std::ops::AddAssign<&CMat> for CMat {
    fn add_assign(&mut self, rhs: &CMat) {
        self.add_scaled(1.0, rhs);
    }
}

impl std::ops::SubAssign<&CMat> for CMat {
    fn sub_assign(&mut self, rhs: &CMat) {
        self.add_scaled(-1.0, rhs);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, scale: f64, rng: &mut ChaCha8Rng) -> DMatrix<Complex64> {
        DMatrix::from_fn(rows, cols, |_, _| {
            Complex64::new(rng.gen_range(-scale..scale), rng.gen_range(-scale..scale))
        })
    }

    fn max_diff(a: &DMatrix<Complex64>, b: &DMatrix<Complex64>) -> f64 {
        (a - b).iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    #[test]
    fn products_match_nalgebra() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random(7, 5, 1.0, &mut rng);
        let b = random(5, 4, 1.0, &mut rng);
        let c = random(4, 5, 1.0, &mut rng);
        let d = random(7, 4, 1.0, &mut rng);
        let (ca, cb, cc, cd) = (
            CMat::from_dmatrix(&a),
            CMat::from_dmatrix(&b),
            CMat::from_dmatrix(&c),
            CMat::from_dmatrix(&d),
        );
        assert!(max_diff(&ca.mul(&cb).to_dmatrix(), &(&a * &b)) < 1e-13);
        assert!(max_diff(&ca.mul_adj(&cc).to_dmatrix(), &(&a * c.adjoint())) < 1e-13);
        assert!(max_diff(&ca.adj_mul(&cd).to_dmatrix(), &(a.adjoint() * &d)) < 1e-13);
        assert!(max_diff(&ca.adjoint().to_dmatrix(), &a.adjoint()) == 0.0);
        let sq = random(5, 5, 1.0, &mut rng);
        let sq2 = random(5, 5, 1.0, &mut rng);
        let t = CMat::trace_of_product(&CMat::from_dmatrix(&sq), &CMat::from_dmatrix(&sq2));
        assert!((t - (&sq * &sq2).trace()).norm() < 1e-13);
    }

    #[test]
    fn expm_matches_nalgebra_pade() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &(n, scale) in &[(4usize, 0.1), (12, 0.3), (12, 3.0), (20, 1.0)] {
            let a = random(n, n, scale, &mut rng);
            let ours = CMat::from_dmatrix(&a).expm().to_dmatrix();
            let reference = a.clone().exp();
            let rel = max_diff(&ours, &reference) / reference.iter().map(|z| z.norm()).fold(0.0, f64::max);
            assert!(rel < 1e-12, "n={n} scale={scale} rel={rel:e}");
        }
    }

    #[test]
    fn frechet_matches_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = CMat::from_dmatrix(&random(6, 6, 0.5, &mut rng));
        let e = CMat::from_dmatrix(&random(6, 6, 1.0, &mut rng));
        let (u, l) = CMat::expm_frechet(&a, &e);
        assert!(max_diff(&u.to_dmatrix(), &a.expm().to_dmatrix()) < 1e-13);
        let h = 1e-6;
        let mut ap = a.clone();
        ap.add_scaled(h, &e);
        let mut am = a.clone();
        am.add_scaled(-h, &e);
        let mut fd = ap.expm();
        fd.add_scaled(-1.0, &am.expm());
        fd.scale(0.5 / h);
        assert!(max_diff(&fd.to_dmatrix(), &l.to_dmatrix()) < 1e-8);
    }

    #[test]
    fn hermitize_removes_antihermitian_part() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut m = CMat::from_dmatrix(&random(5, 5, 1.0, &mut rng));
        assert!(m.hermitian_defect() > 1e-3);
        m.hermitize();
        assert!(m.hermitian_defect() < 1e-15);
    }
}
