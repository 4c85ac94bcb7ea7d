//! Real 2×2 representation of complex arithmetic, Mahalanobis pairings and
//! the geometry of complex projective space.
//!
//! A complex number `z = x + iy` is identified with the real pair
//! `vec(z) = (x, y)` and with the rotation-scaling matrix
//! `M(z) = [[x, -y], [y, x]]`, so that `vec(zw) = M(z) vec(w)`.
//! `Complex64` is `repr(C)`, so a `&[Complex64]` already has the interleaved
//! `(re, im)` layout.

use nalgebra::{Matrix2, Vector2};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type Mat2 = Matrix2<f64>;
pub type Vec2 = Vector2<f64>;

#[inline]
pub fn vec_of(z: C64) -> Vec2 {
    Vec2::new(z.re, z.im)
}

#[inline]
pub fn mat_of(z: C64) -> Mat2 {
    Mat2::new(z.re, -z.im, z.im, z.re)
}

#[inline]
pub fn comp_of(v: &Vec2) -> C64 {
    C64::new(v[0], v[1])
}

/// Stacks `vec` of every entry: `(Re z_1, Im z_1, Re z_2, ...)`.
pub fn vec_of_slice(z: &[C64]) -> Vec<f64> {
    z.iter().flat_map(|c| [c.re, c.im]).collect()
}

/// Inverse of [`vec_of_slice`].
pub fn comp_of_slice(v: &[f64]) -> Result<Vec<C64>> {
    if v.len() % 2 != 0 {
        return Err(Error::DimensionMismatch {
            expected: v.len() + 1,
            got: v.len(),
        });
    }
    Ok(v.chunks_exact(2).map(|p| C64::new(p[0], p[1])).collect())
}

/// Symmetric positive definite 2×2 matrix.
///
/// Construction rejects matrices whose smallest eigenvalue is not above
/// `1e-14 * trace`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[[f64; 2]; 2]", into = "[[f64; 2]; 2]")]
pub struct Spd2 {
    m: Mat2,
}

impl Spd2 {
    pub fn new(m: Mat2) -> Result<Self> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::NotSpd("non-finite entry".into()));
        }
        let scale = m.amax().max(f64::MIN_POSITIVE);
        if (m[(0, 1)] - m[(1, 0)]).abs() > 1e-12 * scale {
            return Err(Error::NotSpd(format!("asymmetric: {m}")));
        }
        let off = 0.5 * (m[(0, 1)] + m[(1, 0)]);
        let s = Mat2::new(m[(0, 0)], off, off, m[(1, 1)]);
        let (_, l2) = sym_eigenvalues(&s);
        let tr = s.trace();
        if !(tr > 0.0) || !(l2 > 1e-14 * tr) {
            return Err(Error::NotSpd(format!("eigenvalue {l2:e} vs trace {tr:e}")));
        }
        Ok(Spd2 { m: s })
    }

    pub fn from_entries(a11: f64, a12: f64, a22: f64) -> Result<Self> {
        Self::new(Mat2::new(a11, a12, a12, a22))
    }

    pub fn identity() -> Self {
        Spd2 { m: Mat2::identity() }
    }

    pub fn scaled_identity(r: f64) -> Result<Self> {
        Self::new(Mat2::identity() * r)
    }

    pub fn diag(a: f64, b: f64) -> Result<Self> {
        Self::from_entries(a, 0.0, b)
    }

    #[inline]
    pub fn matrix(&self) -> &Mat2 {
        &self.m
    }

    /// Eigenvalues `(λ₁, λ₂)` with `λ₁ ≥ λ₂`.
    pub fn eigenvalues(&self) -> (f64, f64) {
        sym_eigenvalues(&self.m)
    }

    pub fn det(&self) -> f64 {
        self.m.determinant()
    }

    pub fn trace(&self) -> f64 {
        self.m.trace()
    }

    pub fn inverse(&self) -> Spd2 {
        let d = self.det();
        let m = &self.m;
        Spd2 {
            m: Mat2::new(m[(1, 1)] / d, -m[(0, 1)] / d, -m[(1, 0)] / d, m[(0, 0)] / d),
        }
    }

    /// The matrix with the same eigenvectors and swapped eigenvalues.
    ///
    /// For a 2×2 SPD matrix this equals `trace·Id − P`.
    pub fn eigen_swapped(&self) -> Spd2 {
        Spd2 {
            m: Mat2::identity() * self.trace() - self.m,
        }
    }

    /// `f(P) = V diag(f(λ)) Vᵀ` for a spectral function `f`.
    fn spectral(&self, f: impl Fn(f64) -> f64) -> Mat2 {
        let eig = self.m.symmetric_eigen();
        let v = eig.eigenvectors;
        let d = Mat2::from_diagonal(&eig.eigenvalues.map(f));
        v * d * v.transpose()
    }

    /// Inverse symmetric square root `P^{-1/2}`.
    pub fn inv_sqrt(&self) -> Mat2 {
        self.spectral(|l| 1.0 / l.sqrt())
    }

    pub fn sqrt(&self) -> Mat2 {
        self.spectral(f64::sqrt)
    }

    /// Lower Cholesky factor `L` with `L Lᵀ = P`.
    pub fn cholesky_lower(&self) -> Mat2 {
        let l11 = self.m[(0, 0)].sqrt();
        let l21 = self.m[(1, 0)] / l11;
        let l22 = (self.m[(1, 1)] - l21 * l21).max(0.0).sqrt();
        Mat2::new(l11, 0.0, l21, l22)
    }
}

impl TryFrom<[[f64; 2]; 2]> for Spd2 {
    type Error = Error;
    fn try_from(a: [[f64; 2]; 2]) -> Result<Self> {
        Spd2::new(Mat2::new(a[0][0], a[0][1], a[1][0], a[1][1]))
    }
}

impl From<Spd2> for [[f64; 2]; 2] {
    fn from(s: Spd2) -> Self {
        [[s.m[(0, 0)], s.m[(0, 1)]], [s.m[(1, 0)], s.m[(1, 1)]]]
    }
}

/// Closed-form eigenvalues of a symmetric 2×2 matrix, largest first.
pub fn sym_eigenvalues(m: &Mat2) -> (f64, f64) {
    let t = 0.5 * (m[(0, 0)] + m[(1, 1)]);
    let h = 0.5 * (m[(0, 0)] - m[(1, 1)]);
    let b = 0.5 * (m[(0, 1)] + m[(1, 0)]);
    let d = h.hypot(b);
    (t + d, t - d)
}

fn check_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::DimensionMismatch { expected: a, got: b });
    }
    Ok(())
}

/// `M(z)ᵀ A M(w)` for single entries.
#[inline]
pub fn dia1(z: C64, a: &Mat2, w: C64) -> Mat2 {
    mat_of(z).transpose() * a * mat_of(w)
}

/// `z ⋄_A w = Σ_i M(z_i)ᵀ A M(w_i)` without length checks.
pub fn dia_raw(z: &[C64], a: &Mat2, w: &[C64]) -> Mat2 {
    z.iter()
        .zip(w)
        .fold(Mat2::zeros(), |acc, (&zi, &wi)| acc + dia1(zi, a, wi))
}

/// `z ●_A w = Σ_i M(z_i)ᵀ A vec(w_i)` without length checks.
pub fn bul_raw(z: &[C64], a: &Mat2, w: &[C64]) -> Vec2 {
    z.iter().zip(w).fold(Vec2::zeros(), |acc, (&zi, &wi)| {
        acc + mat_of(zi).transpose() * (a * vec_of(wi))
    })
}

/// `⟨z, w⟩_A = Σ_i vec(z_i)ᵀ A vec(w_i)` without length checks.
pub fn mahal_inner_raw(z: &[C64], a: &Mat2, w: &[C64]) -> f64 {
    z.iter()
        .zip(w)
        .map(|(&zi, &wi)| vec_of(zi).dot(&(a * vec_of(wi))))
        .sum()
}

pub fn dia(z: &[C64], a: &Mat2, w: &[C64]) -> Result<Mat2> {
    check_len(z.len(), w.len())?;
    Ok(dia_raw(z, a, w))
}

pub fn bul(z: &[C64], a: &Mat2, w: &[C64]) -> Result<Vec2> {
    check_len(z.len(), w.len())?;
    Ok(bul_raw(z, a, w))
}

pub fn mahal_inner(z: &[C64], a: &Mat2, w: &[C64]) -> Result<f64> {
    check_len(z.len(), w.len())?;
    Ok(mahal_inner_raw(z, a, w))
}

pub fn mahal_norm(z: &[C64], a: &Mat2) -> f64 {
    mahal_inner_raw(z, a, z).max(0.0).sqrt()
}

pub fn mahal_dist(z: &[C64], a: &Mat2, w: &[C64]) -> Result<f64> {
    check_len(z.len(), w.len())?;
    let d: Vec<C64> = z.iter().zip(w).map(|(x, y)| x - y).collect();
    Ok(mahal_norm(&d, a))
}

/// Hermitian product `a* b`.
pub fn hdot(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

/// Bilinear product `aᵀ b` (no conjugation).
pub fn tdot(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[C64]) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// A point of complex projective space, stored as a unit-norm representative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<C64>", into = "Vec<C64>")]
pub struct ProjectivePoint {
    rep: Vec<C64>,
}

impl ProjectivePoint {
    /// Normalizes `v`; fails on empty, zero or non-finite input.
    pub fn new(v: Vec<C64>) -> Result<Self> {
        if v.is_empty() {
            return Err(Error::InvalidDimension("empty vector".into()));
        }
        if v.iter().any(|z| !z.is_finite()) {
            return Err(Error::Precondition("non-finite entry".into()));
        }
        let n = norm(&v);
        if !(n > 0.0) {
            return Err(Error::ZeroDirection);
        }
        Ok(ProjectivePoint {
            rep: v.into_iter().map(|z| z / n).collect(),
        })
    }

    pub fn rep(&self) -> &[C64] {
        &self.rep
    }

    pub fn into_rep(self) -> Vec<C64> {
        self.rep
    }

    pub fn dim(&self) -> usize {
        self.rep.len()
    }

    /// The same point with representative multiplied by `e^{iλ}`.
    pub fn with_phase(&self, lambda: f64) -> Self {
        let u = C64::from_polar(1.0, lambda);
        ProjectivePoint {
            rep: self.rep.iter().map(|z| z * u).collect(),
        }
    }
}

impl TryFrom<Vec<C64>> for ProjectivePoint {
    type Error = Error;
    fn try_from(v: Vec<C64>) -> Result<Self> {
        ProjectivePoint::new(v)
    }
}

impl From<ProjectivePoint> for Vec<C64> {
    fn from(p: ProjectivePoint) -> Self {
        p.rep
    }
}

/// Unit phase `b*a / |b*a|`, or `1` when the points are orthogonal.
fn aligning_phase(a: &[C64], b: &[C64]) -> C64 {
    let s = hdot(b, a);
    let r = s.norm();
    if r > 0.0 {
        s / r
    } else {
        C64::new(1.0, 0.0)
    }
}

/// `min_λ ‖a − e^{iλ} b‖`, in `[0, √2]`.
pub fn proj_distance(a: &ProjectivePoint, b: &ProjectivePoint) -> Result<f64> {
    check_len(a.dim(), b.dim())?;
    let u = aligning_phase(&a.rep, &b.rep);
    Ok(a.rep
        .iter()
        .zip(&b.rep)
        .map(|(x, y)| (x - u * y).norm_sqr())
        .sum::<f64>()
        .sqrt())
}

/// Representative of `[b]` closest to `a`; `b*a` is real and non-negative.
pub fn optimal_position(a: &ProjectivePoint, b: &ProjectivePoint) -> Result<ProjectivePoint> {
    check_len(a.dim(), b.dim())?;
    let u = aligning_phase(&a.rep, &b.rep);
    Ok(ProjectivePoint {
        rep: b.rep.iter().map(|y| u * y).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn rand_cvec(rng: &mut impl Rng, n: usize) -> Vec<C64> {
        (0..n)
            .map(|_| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect()
    }

    fn rand_spd(rng: &mut impl Rng) -> Spd2 {
        let a = Mat2::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        Spd2::new(a * a.transpose() + Mat2::identity() * 0.1).unwrap()
    }

    #[test]
    fn vec_and_mat_definitions() {
        assert_eq!(vec_of(c(1.0, 2.0)), Vec2::new(1.0, 2.0));
        assert_eq!(mat_of(c(0.0, 1.0)), Mat2::new(0.0, -1.0, 1.0, 0.0));
        let v = mat_of(c(1.0, 1.0)) * vec_of(c(2.0, -1.0));
        assert_eq!(v, Vec2::new(3.0, 1.0));
        assert_eq!(comp_of(&vec_of(c(-0.5, 3.0))), c(-0.5, 3.0));
    }

    #[test]
    fn slice_maps_round_trip() {
        let z = vec![c(1.0, 2.0), c(-3.0, 0.5)];
        let v = vec_of_slice(&z);
        assert_eq!(v, vec![1.0, 2.0, -3.0, 0.5]);
        assert_eq!(comp_of_slice(&v).unwrap(), z);
        assert!(comp_of_slice(&[1.0]).is_err());
    }

    #[test]
    fn mat_vec_identities_on_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10_000 {
            let z = c(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0));
            let w = c(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0));
            assert_eq!(mat_of(z).transpose(), mat_of(z.conj()));
            let lhs = vec_of(z * w);
            let rhs = mat_of(z) * vec_of(w);
            assert!((lhs - rhs).amax() < 1e-12);
        }
    }

    #[test]
    fn spd_validation() {
        assert!(Spd2::from_entries(1.0, 0.0, 1.0).is_ok());
        assert!(Spd2::from_entries(1.0, 2.0, 1.0).is_err());
        assert!(Spd2::from_entries(0.0, 0.0, 0.0).is_err());
        assert!(Spd2::new(Mat2::new(1.0, 0.1, 0.2, 1.0)).is_err());
        assert!(Spd2::from_entries(1.0, 0.0, 1e-16).is_err());
        assert!(Spd2::from_entries(f64::NAN, 0.0, 1.0).is_err());
        let (l1, l2) = Spd2::diag(2.0, 3.0).unwrap().eigenvalues();
        assert_eq!((l1, l2), (3.0, 2.0));
    }

    #[test]
    fn spd_spectral_functions() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let p = rand_spd(&mut rng);
            let s = p.sqrt();
            assert!((s * s - p.matrix()).amax() < 1e-12);
            let is = p.inv_sqrt();
            assert!((is * p.matrix() * is - Mat2::identity()).amax() < 1e-10);
            assert!((p.inverse().matrix() * p.matrix() - Mat2::identity()).amax() < 1e-10);
            let l = p.cholesky_lower();
            assert!((l * l.transpose() - p.matrix()).amax() < 1e-12);
            let (a1, a2) = p.eigenvalues();
            let (b1, b2) = p.eigen_swapped().eigenvalues();
            assert!((a1 - b1).abs() < 1e-12 && (a2 - b2).abs() < 1e-12);
        }
    }

    #[test]
    fn dia_trivial_and_loop_oracle() {
        let one = [c(1.0, 0.0)];
        assert_eq!(dia(&one, &Mat2::identity(), &one).unwrap(), Mat2::identity());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let n = rng.gen_range(1..8);
            let z = rand_cvec(&mut rng, n);
            let w = rand_cvec(&mut rng, n);
            let a = *rand_spd(&mut rng).matrix();
            let got = dia(&z, &a, &w).unwrap();
            let mut want = Mat2::zeros();
            for i in 0..n {
                let mz = [[z[i].re, -z[i].im], [z[i].im, z[i].re]];
                let mw = [[w[i].re, -w[i].im], [w[i].im, w[i].re]];
                for r in 0..2 {
                    for s in 0..2 {
                        let mut acc = 0.0;
                        for k in 0..2 {
                            for l in 0..2 {
                                acc += mz[k][r] * a[(k, l)] * mw[l][s];
                            }
                        }
                        want[(r, s)] += acc;
                    }
                }
            }
            assert!((got - want).amax() < 1e-12);
        }
        assert!(matches!(
            dia(&one, &Mat2::identity(), &[]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn dia_determinant_lower_bound() {
        let p = Spd2::diag(3.0, 2.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..1000 {
            let n = rng.gen_range(1..10);
            let k = ProjectivePoint::new(rand_cvec(&mut rng, n)).unwrap();
            let d = dia_raw(k.rep(), p.matrix(), k.rep());
            assert!(d.determinant() >= 6.0 - 1e-10);
        }
    }

    #[test]
    fn dia_inverse_via_swapped_and_norm_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..500 {
            let p = rand_spd(&mut rng);
            let n = rng.gen_range(1..10);
            let k = ProjectivePoint::new(rand_cvec(&mut rng, n)).unwrap();
            let m = dia_raw(k.rep(), p.matrix(), k.rep());
            let alt = dia_raw(k.rep(), p.eigen_swapped().matrix(), k.rep()) / m.determinant();
            let inv = m.try_inverse().unwrap();
            assert!((inv - alt).amax() < 1e-9 * inv.amax());
            let (l1, l2) = p.eigenvalues();
            assert!(m.norm() <= (l1 * l1 + l2 * l2).sqrt() * (1.0 + 1e-12));
        }
    }

    #[test]
    fn bul_and_mahal_examples() {
        let z = [c(1.0, 0.0)];
        let w = [c(0.0, 1.0)];
        let a = Mat2::new(2.0, 0.0, 0.0, 3.0);
        let d = mahal_dist(&z, &a, &w).unwrap();
        assert!((d * d - 5.0).abs() < 1e-14);
        assert_eq!(mahal_dist(&z, &a, &z).unwrap(), 0.0);

        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = *rand_spd(&mut rng).matrix();
        let k: Vec<C64> = (0..5).map(|_| c(rng.gen_range(-1.0..1.0), 0.0)).collect();
        let b = bul(&k, &a, &k).unwrap();
        let m = dia(&k, &a, &k).unwrap() * Vec2::new(1.0, 0.0);
        assert!((b - m).amax() < 1e-14);
        let z = rand_cvec(&mut rng, 5);
        let euc = mahal_dist(&z, &Mat2::identity(), &k).unwrap();
        let direct: f64 = z.iter().zip(&k).map(|(x, y)| (x - y).norm_sqr()).sum();
        assert!((euc - direct.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn proj_distance_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let k = ProjectivePoint::new(rand_cvec(&mut rng, 6)).unwrap();
        assert!(proj_distance(&k, &k.with_phase(0.7)).unwrap() < 1e-15);
        let e1 = ProjectivePoint::new(vec![c(1.0, 0.0), c(0.0, 0.0)]).unwrap();
        let e2 = ProjectivePoint::new(vec![c(0.0, 0.0), c(1.0, 0.0)]).unwrap();
        assert!((proj_distance(&e1, &e2).unwrap() - 2f64.sqrt()).abs() < 1e-15);
        assert!(proj_distance(&e1, &k).is_err());
    }

    #[test]
    fn proj_distance_matches_grid_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..5 {
            let a = ProjectivePoint::new(rand_cvec(&mut rng, 4)).unwrap();
            let b = ProjectivePoint::new(rand_cvec(&mut rng, 4)).unwrap();
            let n = 1_000_000;
            let mut best = f64::INFINITY;
            for j in 0..n {
                let u = C64::from_polar(1.0, std::f64::consts::TAU * j as f64 / n as f64);
                let d: f64 = a.rep().iter().zip(b.rep()).map(|(x, y)| (x - u * y).norm_sqr()).sum();
                best = best.min(d);
            }
            let d = proj_distance(&a, &b).unwrap();
            assert!((d - best.sqrt()).abs() < 1e-5);
        }
    }

    #[test]
    fn optimal_position_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = ProjectivePoint::new(rand_cvec(&mut rng, 5)).unwrap();
        let b = a.with_phase(2.1);
        let o = optimal_position(&a, &b).unwrap();
        for (x, y) in o.rep().iter().zip(a.rep()) {
            assert!((x - y).norm() < 1e-12);
        }
        let e1 = ProjectivePoint::new(vec![c(1.0, 0.0), c(0.0, 0.0)]).unwrap();
        let e2 = ProjectivePoint::new(vec![c(0.0, 0.0), c(0.0, 1.0)]).unwrap();
        assert_eq!(optimal_position(&e1, &e2).unwrap(), e2);
        let b = ProjectivePoint::new(rand_cvec(&mut rng, 5)).unwrap();
        let o = optimal_position(&a, &b).unwrap();
        let s = hdot(o.rep(), a.rep());
        assert!(s.im.abs() < 1e-14 && s.re >= 0.0);
        let direct = norm(&a.rep().iter().zip(o.rep()).map(|(x, y)| x - y).collect::<Vec<_>>());
        assert!((direct - proj_distance(&a, &b).unwrap()).abs() < 1e-14);
    }

    proptest! {
        #[test]
        fn proj_distance_is_phase_invariant_symmetric_and_bounded(
            re in proptest::collection::vec(-1.0f64..1.0, 6),
            im in proptest::collection::vec(-1.0f64..1.0, 6),
            l1 in 0.0f64..6.3, l2 in 0.0f64..6.3,
        ) {
            let v: Vec<C64> = re.iter().zip(&im).map(|(&r, &i)| c(r, i)).collect();
            prop_assume!(norm(&v[..3]) > 1e-3 && norm(&v[3..]) > 1e-3);
            let a = ProjectivePoint::new(v[..3].to_vec()).unwrap();
            let b = ProjectivePoint::new(v[3..].to_vec()).unwrap();
            let d = proj_distance(&a, &b).unwrap();
            prop_assert!((0.0..=2f64.sqrt() + 1e-12).contains(&d));
            let d2 = proj_distance(&a.with_phase(l1), &b.with_phase(l2)).unwrap();
            prop_assert!((d - d2).abs() < 1e-12);
            prop_assert!((d - proj_distance(&b, &a).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn mahal_dist_triangle_inequality(
            v in proptest::collection::vec(-10.0f64..10.0, 12),
            p in (0.1f64..5.0, -1.0f64..1.0, 0.1f64..5.0),
        ) {
            prop_assume!(p.0 * p.2 > p.1 * p.1 + 1e-3);
            let a = *Spd2::from_entries(p.0, p.1, p.2).unwrap().matrix();
            let z: Vec<C64> = v.chunks(2).map(|q| c(q[0], q[1])).collect();
            let (x, y, w) = (&z[0..2], &z[2..4], &z[4..6]);
            let dxy = mahal_dist(x, &a, y).unwrap();
            let dyw = mahal_dist(y, &a, w).unwrap();
            let dxw = mahal_dist(x, &a, w).unwrap();
            prop_assert!(dxw <= dxy + dyw + 1e-9);
            prop_assert!(mahal_inner(x, &a, x).unwrap() >= 0.0);
        }
    }
}
