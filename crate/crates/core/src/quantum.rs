//! Operator algebra on truncated tensor-product Hilbert spaces.
//!
//! Modes are ordered as given; the joint basis index of levels
//! `(n_0, n_1, ...)` is `n_0 * d_1 * d_2 ... + n_1 * d_2 ... + ...`, i.e. the
//! first mode is the most significant Kronecker factor.
//!
//! Superoperators act on column-stacked density matrices:
//! `vec(A X B) = (Bᵀ ⊗ A) vec(X)`.

use std::ops::{Add, Mul, Sub};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;

pub(crate) const ZERO: C64 = C64::new(0.0, 0.0);
pub(crate) const ONE: C64 = C64::new(1.0, 0.0);
pub(crate) const I: C64 = C64::new(0.0, 1.0);

pub const HERMITIAN_TOL: f64 = 1e-10;
pub const TRACE_TOL: f64 = 1e-9;
pub const POSITIVITY_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HilbertSpace {
    dims: Vec<usize>,
    labels: Vec<String>,
}

impl HilbertSpace {
    pub fn new(dims: Vec<usize>, labels: Vec<String>) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::InvalidSpace("no modes".into()));
        }
        if dims.len() != labels.len() {
            return Err(Error::InvalidSpace(format!(
                "{} dimensions but {} labels",
                dims.len(),
                labels.len()
            )));
        }
        if let Some(d) = dims.iter().find(|&&d| d < 2) {
            return Err(Error::InvalidSpace(format!("mode dimension {d} < 2")));
        }
        Ok(Self { dims, labels })
    }

    /// Two-mode SNAIL ⊗ qubit space used throughout the simulator.
    pub fn snail_qubit(snail_dim: usize, qubit_dim: usize) -> Result<Self> {
        Self::new(
            vec![snail_dim, qubit_dim],
            vec!["snail".into(), "qubit".into()],
        )
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn num_modes(&self) -> usize {
        self.dims.len()
    }

    pub fn total_dim(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn mode_dim(&self, mode: usize) -> Result<usize> {
        self.dims.get(mode).copied().ok_or(Error::InvalidMode {
            index: mode,
            modes: self.dims.len(),
        })
    }

    pub fn mode_index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    /// Joint basis index of a product state.
    pub fn basis_index(&self, levels: &[usize]) -> Result<usize> {
        if levels.len() != self.dims.len() {
            return Err(Error::InvalidSpace(format!(
                "expected {} levels, got {}",
                self.dims.len(),
                levels.len()
            )));
        }
        let mut idx = 0;
        for (&n, &d) in levels.iter().zip(&self.dims) {
            if n >= d {
                return Err(Error::LevelOutOfRange { level: n, dim: d });
            }
            idx = idx * d + n;
        }
        Ok(idx)
    }

    /// Per-mode levels of a joint basis index.
    pub fn levels_of(&self, mut index: usize) -> Vec<usize> {
        let mut levels = vec![0; self.dims.len()];
        for (slot, &d) in levels.iter_mut().zip(&self.dims).rev() {
            *slot = index % d;
            index /= d;
        }
        levels
    }

    /// Embed a single-mode matrix at `mode`, identities elsewhere.
    fn embed(&self, mode: usize, local: &CMatrix) -> CMatrix {
        let mut out = CMatrix::identity(1, 1);
        for (k, &d) in self.dims.iter().enumerate() {
            out = if k == mode {
                out.kronecker(local)
            } else {
                out.kronecker(&CMatrix::identity(d, d))
            };
        }
        out
    }
}

/// Dense operator on a [`HilbertSpace`].
#[derive(Debug, Clone, PartialEq)]
pub struct Operator {
    space: HilbertSpace,
    matrix: CMatrix,
}

impl Operator {
    pub fn new(space: HilbertSpace, matrix: CMatrix) -> Result<Self> {
        check_square(&matrix, space.total_dim())?;
        Ok(Self { space, matrix })
    }

    pub fn zero(space: &HilbertSpace) -> Self {
        let n = space.total_dim();
        Self {
            space: space.clone(),
            matrix: CMatrix::zeros(n, n),
        }
    }

    pub fn identity(space: &HilbertSpace) -> Self {
        let n = space.total_dim();
        Self {
            space: space.clone(),
            matrix: CMatrix::identity(n, n),
        }
    }

    pub fn space(&self) -> &HilbertSpace {
        &self.space
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> CMatrix {
        self.matrix
    }

    pub fn dag(&self) -> Self {
        Self {
            space: self.space.clone(),
            matrix: self.matrix.adjoint(),
        }
    }

    pub fn scale(&self, c: C64) -> Self {
        Self {
            space: self.space.clone(),
            matrix: &self.matrix * c,
        }
    }

    pub fn commutator(&self, other: &Operator) -> Result<Operator> {
        self.same_space(other)?;
        Ok(Self {
            space: self.space.clone(),
            matrix: &self.matrix * &other.matrix - &other.matrix * &self.matrix,
        })
    }

    /// Maximum elementwise deviation from Hermiticity.
    pub fn hermiticity_error(&self) -> f64 {
        hermiticity_error(&self.matrix)
    }

    fn same_space(&self, other: &Operator) -> Result<()> {
        if self.space != other.space {
            return Err(Error::SpaceMismatch);
        }
        Ok(())
    }
}

impl<'a> Mul<&'a Operator> for &'a Operator {
    type Output = Operator;
    fn mul(self, rhs: &'a Operator) -> Operator {
        assert_eq!(self.space, rhs.space, "operator space mismatch");
        Operator {
            space: self.space.clone(),
            matrix: &self.matrix * &rhs.matrix,
        }
    }
}

impl<'a> Add<&'a Operator> for &'a Operator {
    type Output = Operator;
    fn add(self, rhs: &'a Operator) -> Operator {
        assert_eq!(self.space, rhs.space, "operator space mismatch");
        Operator {
            space: self.space.clone(),
            matrix: &self.matrix + &rhs.matrix,
        }
    }
}

impl<'a> Sub<&'a Operator> for &'a Operator {
    type Output = Operator;
    fn sub(self, rhs: &'a Operator) -> Operator {
        assert_eq!(self.space, rhs.space, "operator space mismatch");
        Operator {
            space: self.space.clone(),
            matrix: &self.matrix - &rhs.matrix,
        }
    }
}

/// Truncated annihilation operator of `mode`, embedded in the joint space.
pub fn ladder(space: &HilbertSpace, mode: usize) -> Result<Operator> {
    let d = space.mode_dim(mode)?;
    let local = CMatrix::from_fn(d, d, |r, c| {
        if c == r + 1 {
            C64::new((c as f64).sqrt(), 0.0)
        } else {
            ZERO
        }
    });
    Ok(Operator {
        space: space.clone(),
        matrix: space.embed(mode, &local),
    })
}

/// Embedded `|i⟩⟨j|` on `mode`.
pub fn projector(space: &HilbertSpace, mode: usize, i: usize, j: usize) -> Result<Operator> {
    let d = space.mode_dim(mode)?;
    for level in [i, j] {
        if level >= d {
            return Err(Error::LevelOutOfRange { level, dim: d });
        }
    }
    let mut local = CMatrix::zeros(d, d);
    local[(i, j)] = ONE;
    Ok(Operator {
        space: space.clone(),
        matrix: space.embed(mode, &local),
    })
}

/// Number operator `a†a` of `mode`.
pub fn number(space: &HilbertSpace, mode: usize) -> Result<Operator> {
    let d = space.mode_dim(mode)?;
    let local = CMatrix::from_fn(d, d, |r, c| {
        if r == c {
            C64::new(r as f64, 0.0)
        } else {
            ZERO
        }
    });
    Ok(Operator {
        space: space.clone(),
        matrix: space.embed(mode, &local),
    })
}

/// Hermitian, unit-trace, positive semidefinite state.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    space: HilbertSpace,
    matrix: CMatrix,
}

impl DensityMatrix {
    /// Validates Hermiticity (1e-10), trace (1e-9) and positivity (−1e-8).
    pub fn new(space: HilbertSpace, matrix: CMatrix) -> Result<Self> {
        check_square(&matrix, space.total_dim())?;
        let herm = hermiticity_error(&matrix);
        if herm > HERMITIAN_TOL {
            return Err(Error::InvalidState(format!(
                "not Hermitian (deviation {herm:.3e})"
            )));
        }
        let tr = matrix.trace();
        if (tr.re - 1.0).abs() > TRACE_TOL || tr.im.abs() > TRACE_TOL {
            return Err(Error::InvalidState(format!("trace {tr} != 1")));
        }
        let min_eig = min_eigenvalue(&matrix);
        if min_eig < -POSITIVITY_TOL {
            return Err(Error::InvalidState(format!(
                "negative eigenvalue {min_eig:.3e}"
            )));
        }
        Ok(Self { space, matrix })
    }

    /// Wraps a matrix produced by a trusted numerical routine without
    /// re-validating it.
    pub(crate) fn from_raw(space: HilbertSpace, matrix: CMatrix) -> Self {
        Self { space, matrix }
    }

    /// Pure product state with the given per-mode levels.
    pub fn basis_state(space: &HilbertSpace, levels: &[usize]) -> Result<Self> {
        let idx = space.basis_index(levels)?;
        let n = space.total_dim();
        let mut m = CMatrix::zeros(n, n);
        m[(idx, idx)] = ONE;
        Ok(Self {
            space: space.clone(),
            matrix: m,
        })
    }

    pub fn space(&self) -> &HilbertSpace {
        &self.space
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn trace(&self) -> C64 {
        self.matrix.trace()
    }

    /// Joint-basis populations (real diagonal).
    pub fn populations(&self) -> Vec<f64> {
        self.matrix.diagonal().iter().map(|z| z.re).collect()
    }

    /// Populations of one mode's levels, summed over the others.
    pub fn mode_populations(&self, mode: usize) -> Result<Vec<f64>> {
        let d = self.space.mode_dim(mode)?;
        let mut out = vec![0.0; d];
        for (idx, p) in self.populations().into_iter().enumerate() {
            out[self.space.levels_of(idx)[mode]] += p;
        }
        Ok(out)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        min_eigenvalue(&self.matrix)
    }

    pub fn hermiticity_error(&self) -> f64 {
        hermiticity_error(&self.matrix)
    }
}

/// `D(a)ρ = aρa† − ½{a†a, ρ}`.
pub fn dissipator_action(a: &Operator, rho: &DensityMatrix) -> Result<CMatrix> {
    check_square(rho.matrix(), a.matrix.nrows())?;
    Ok(dissipator_matrix(&a.matrix, &rho.matrix))
}

pub(crate) fn dissipator_matrix(a: &CMatrix, rho: &CMatrix) -> CMatrix {
    let a_dag = a.adjoint();
    let ada = &a_dag * a;
    a * rho * &a_dag - (&ada * rho + rho * &ada) * C64::new(0.5, 0.0)
}

/// Linear map on column-stacked density matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct SuperOperator {
    space: HilbertSpace,
    matrix: CMatrix,
}

impl SuperOperator {
    pub fn new(space: HilbertSpace, matrix: CMatrix) -> Result<Self> {
        let n = space.total_dim();
        check_square(&matrix, n * n)?;
        Ok(Self { space, matrix })
    }

    pub fn space(&self) -> &HilbertSpace {
        &self.space
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    /// Applies the map to an operator-shaped matrix.
    pub fn apply(&self, rho: &CMatrix) -> CMatrix {
        let n = self.space.total_dim();
        unvec(&(&self.matrix * vec_of(rho)), n)
    }

    /// Largest |⟨⟨1|L|x⟩⟩| over basis vectors, i.e. how far the identity
    /// left vector is from an eigenvalue-0 left eigenvector.
    pub fn trace_preservation_error(&self) -> f64 {
        let n = self.space.total_dim();
        let id = vec_of(&CMatrix::identity(n, n));
        let row = id.adjoint() * &self.matrix;
        row.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn is_trace_preserving(&self) -> bool {
        self.trace_preservation_error() <= 1e-8
    }
}

/// Vectorized generator of `ρ̇ = −i[H,ρ] + Σ κᵢ D(aᵢ)ρ`.
pub fn liouvillian(h: &Operator, collapse: &[(f64, Operator)]) -> Result<SuperOperator> {
    for (rate, op) in collapse {
        if *rate < 0.0 {
            return Err(Error::NegativeRate(*rate));
        }
        if op.space != h.space {
            return Err(Error::SpaceMismatch);
        }
    }
    let n = h.space.total_dim();
    let channels: Vec<(f64, CMatrix)> = collapse
        .iter()
        .map(|(r, op)| (*r, op.matrix.clone()))
        .collect();
    Ok(SuperOperator {
        space: h.space.clone(),
        matrix: liouvillian_matrix(&h.matrix, &channels, n),
    })
}

pub(crate) fn liouvillian_matrix(h: &CMatrix, channels: &[(f64, CMatrix)], n: usize) -> CMatrix {
    let id = CMatrix::identity(n, n);
    let mut l = (id.kronecker(h) - h.transpose().kronecker(&id)) * (-I);
    for (rate, a) in channels {
        if *rate == 0.0 {
            continue;
        }
        let ada = a.adjoint() * a;
        let term = a.conjugate().kronecker(a)
            - (id.kronecker(&ada) + ada.transpose().kronecker(&id)) * C64::new(0.5, 0.0);
        l += term * C64::new(*rate, 0.0);
    }
    l
}

/// Reduced state of `keep_mode` in a two-mode space.
pub fn partial_trace(rho: &DensityMatrix, keep_mode: usize) -> Result<DensityMatrix> {
    let space = rho.space();
    if space.num_modes() != 2 {
        return Err(Error::InvalidSpace(format!(
            "partial trace needs a two-mode space, got {} modes",
            space.num_modes()
        )));
    }
    let keep_dim = space.mode_dim(keep_mode)?;
    let other = 1 - keep_mode;
    let other_dim = space.dims()[other];
    let mut out = CMatrix::zeros(keep_dim, keep_dim);
    for i in 0..keep_dim {
        for j in 0..keep_dim {
            let mut acc = ZERO;
            for k in 0..other_dim {
                let (r, c) = if keep_mode == 0 {
                    (i * other_dim + k, j * other_dim + k)
                } else {
                    (k * keep_dim + i, k * keep_dim + j)
                };
                acc += rho.matrix[(r, c)];
            }
            out[(i, j)] = acc;
        }
    }
    let reduced = HilbertSpace::new(vec![keep_dim], vec![space.labels()[keep_mode].clone()])?;
    Ok(DensityMatrix::from_raw(reduced, out))
}

/// Column-stacking vectorization.
pub fn vec_of(m: &CMatrix) -> DVector<C64> {
    DVector::from_column_slice(m.as_slice())
}

pub fn unvec(v: &DVector<C64>, n: usize) -> CMatrix {
    CMatrix::from_column_slice(n, n, v.as_slice())
}

pub(crate) fn hermiticity_error(m: &CMatrix) -> f64 {
    let mut worst: f64 = 0.0;
    for r in 0..m.nrows() {
        for c in r..m.ncols() {
            worst = worst.max((m[(r, c)] - m[(c, r)].conj()).norm());
        }
    }
    worst
}

pub(crate) fn min_eigenvalue(m: &CMatrix) -> f64 {
    let herm = (m + m.adjoint()) * C64::new(0.5, 0.0);
    herm.symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

fn check_square(m: &CMatrix, expected: usize) -> Result<()> {
    if m.nrows() != expected || m.ncols() != expected {
        return Err(Error::ShapeMismatch {
            expected,
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    Ok(())
}

#[cfg(test)]
pub(crate) mod testing {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    pub fn rng(seed: u64) -> StdRng {
        StdRng::seed_from_u64(seed)
    }

    pub fn random_matrix(rng: &mut StdRng, n: usize) -> CMatrix {
        CMatrix::from_fn(n, n, |_, _| {
            C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        })
    }

    pub fn random_hermitian(rng: &mut StdRng, n: usize) -> CMatrix {
        let a = random_matrix(rng, n);
        (&a + a.adjoint()) * C64::new(0.5, 0.0)
    }

    pub fn random_density(rng: &mut StdRng, space: &HilbertSpace) -> DensityMatrix {
        let a = random_matrix(rng, space.total_dim());
        let m = &a * a.adjoint();
        let tr = m.trace();
        DensityMatrix::new(space.clone(), m / tr).unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::testing::*;
    use super::*;
    use rand::Rng;

    fn single(d: usize) -> HilbertSpace {
        HilbertSpace::new(vec![d], vec!["m".into()]).unwrap()
    }

    fn max_diff(a: &CMatrix, b: &CMatrix) -> f64 {
        (a - b).iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    #[test]
    fn space_rejects_small_dims() {
        assert!(HilbertSpace::new(vec![1, 2], vec!["a".into(), "b".into()]).is_err());
        assert!(HilbertSpace::new(vec![2], vec![]).is_err());
        assert_eq!(HilbertSpace::snail_qubit(2, 3).unwrap().total_dim(), 6);
    }

    #[test]
    fn basis_index_round_trips() {
        let s = HilbertSpace::snail_qubit(3, 4).unwrap();
        for idx in 0..12 {
            assert_eq!(s.basis_index(&s.levels_of(idx)).unwrap(), idx);
        }
        assert!(s.basis_index(&[3, 0]).is_err());
    }

    #[test]
    fn ladder_dim2_is_sigma_minus() {
        let a = ladder(&single(2), 0).unwrap();
        let mut expected = CMatrix::zeros(2, 2);
        expected[(0, 1)] = ONE;
        assert_eq!(a.matrix(), &expected);
    }

    #[test]
    fn ladder_dim3_superdiagonal() {
        let a = ladder(&single(3), 0).unwrap();
        assert_eq!(a.matrix()[(0, 1)], ONE);
        assert!((a.matrix()[(1, 2)].re - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(a.matrix().iter().filter(|z| z.norm() > 0.0).count(), 2);
    }

    #[test]
    fn ladder_embedding_matches_kronecker() {
        let space = HilbertSpace::snail_qubit(2, 3).unwrap();
        let a3 = ladder(&single(3), 0).unwrap().into_matrix();
        let oracle = CMatrix::identity(2, 2).kronecker(&a3);
        assert_eq!(ladder(&space, 1).unwrap().matrix(), &oracle);
        assert!(ladder(&space, 2).is_err());
    }

    #[test]
    fn projector_cases() {
        let p = projector(&single(2), 0, 0, 0).unwrap();
        assert_eq!(p.matrix()[(0, 0)], ONE);
        assert_eq!(p.matrix()[(1, 1)], ZERO);

        let s3 = single(3);
        let p10 = projector(&s3, 0, 1, 0).unwrap();
        let adag = ladder(&s3, 0).unwrap().dag();
        assert_eq!(p10.matrix()[(1, 0)], adag.matrix()[(1, 0)]);

        let space = HilbertSpace::snail_qubit(2, 3).unwrap();
        let mut e21 = CMatrix::zeros(3, 3);
        e21[(2, 1)] = ONE;
        let oracle = CMatrix::identity(2, 2).kronecker(&e21);
        assert_eq!(projector(&space, 1, 2, 1).unwrap().matrix(), &oracle);
        assert!(projector(&space, 1, 3, 0).is_err());
    }

    #[test]
    fn dissipator_of_excited_state() {
        let s = single(2);
        let sm = ladder(&s, 0).unwrap();
        let e = DensityMatrix::basis_state(&s, &[1]).unwrap();
        let d = dissipator_action(&sm, &e).unwrap();
        let mut expected = CMatrix::zeros(2, 2);
        expected[(0, 0)] = ONE;
        expected[(1, 1)] = -ONE;
        assert!(max_diff(&d, &expected) < 1e-15);

        let g = DensityMatrix::basis_state(&s, &[0]).unwrap();
        assert!(dissipator_action(&sm, &g).unwrap().norm() < 1e-15);
    }

    #[test]
    fn dissipator_shape_mismatch() {
        let sm = ladder(&single(3), 0).unwrap();
        let g = DensityMatrix::basis_state(&single(2), &[0]).unwrap();
        assert!(matches!(
            dissipator_action(&sm, &g),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn dissipator_is_trace_annihilating() {
        let mut rng = rng(7);
        let space = HilbertSpace::snail_qubit(2, 3).unwrap();
        for _ in 0..100 {
            let a = Operator::new(space.clone(), random_matrix(&mut rng, 6)).unwrap();
            let rho = random_hermitian(&mut rng, 6);
            let d = dissipator_matrix(a.matrix(), &rho);
            assert!(d.trace().norm() <= 1e-12);
        }
    }

    #[test]
    fn liouvillian_zero() {
        let s = single(2);
        let l = liouvillian(&Operator::zero(&s), &[]).unwrap();
        assert!(l.matrix().norm() == 0.0);
    }

    #[test]
    fn liouvillian_tls_decay_spectrum() {
        // Analytic spectrum of κD(σ⁻): {0, −κ, −κ/2, −κ/2}.
        let s = single(2);
        let kappa = 1.7;
        let l = liouvillian(&Operator::zero(&s), &[(kappa, ladder(&s, 0).unwrap())]).unwrap();
        let mut eig: Vec<f64> = l
            .matrix()
            .clone()
            .schur()
            .eigenvalues()
            .unwrap()
            .iter()
            .map(|z| {
                assert!(z.im.abs() < 1e-12);
                z.re
            })
            .collect();
        eig.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let expected = [0.0, -kappa / 2.0, -kappa / 2.0, -kappa];
        for (a, b) in eig.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12, "{eig:?}");
        }
    }

    #[test]
    fn liouvillian_matches_direct_rhs() {
        let mut rng = rng(11);
        let space = HilbertSpace::snail_qubit(2, 3).unwrap();
        for _ in 0..20 {
            let h = Operator::new(space.clone(), random_hermitian(&mut rng, 6)).unwrap();
            let a = Operator::new(space.clone(), random_matrix(&mut rng, 6)).unwrap();
            let b = Operator::new(space.clone(), random_matrix(&mut rng, 6)).unwrap();
            let rho = random_density(&mut rng, &space);
            let l = liouvillian(&h, &[(0.3, a.clone()), (1.1, b.clone())]).unwrap();
            let direct = (h.matrix() * rho.matrix() - rho.matrix() * h.matrix()) * (-I)
                + dissipator_action(&a, &rho).unwrap() * C64::new(0.3, 0.0)
                + dissipator_action(&b, &rho).unwrap() * C64::new(1.1, 0.0);
            assert!(max_diff(&l.apply(rho.matrix()), &direct) < 1e-12);
            assert!(l.is_trace_preserving());
        }
    }

    #[test]
    fn liouvillian_errors() {
        let s = single(2);
        let sm = ladder(&s, 0).unwrap();
        assert!(matches!(
            liouvillian(&Operator::zero(&s), &[(-1.0, sm)]),
            Err(Error::NegativeRate(_))
        ));
        let other = ladder(&single(3), 0).unwrap();
        assert!(matches!(
            liouvillian(&Operator::zero(&s), &[(1.0, other)]),
            Err(Error::SpaceMismatch)
        ));
    }

    #[test]
    fn partial_trace_of_product_state() {
        let mut rng = rng(3);
        let s2 = single(2);
        let s3 = single(3);
        let rs = random_density(&mut rng, &s2);
        let rq = random_density(&mut rng, &s3);
        let space = HilbertSpace::snail_qubit(2, 3).unwrap();
        let joint = DensityMatrix::new(space, rs.matrix().kronecker(rq.matrix())).unwrap();
        let q = partial_trace(&joint, 1).unwrap();
        assert!(max_diff(q.matrix(), rq.matrix()) < 1e-14);
        let s = partial_trace(&joint, 0).unwrap();
        assert!(max_diff(s.matrix(), rs.matrix()) < 1e-14);
    }

    #[test]
    fn partial_trace_of_bell_state() {
        let space = HilbertSpace::snail_qubit(2, 2).unwrap();
        let h = C64::new(0.5, 0.0);
        let mut m = CMatrix::zeros(4, 4);
        for &(r, c) in &[(0, 0), (0, 3), (3, 0), (3, 3)] {
            m[(r, c)] = h;
        }
        let bell = DensityMatrix::new(space, m).unwrap();
        let q = partial_trace(&bell, 1).unwrap();
        assert!(max_diff(q.matrix(), &(CMatrix::identity(2, 2) * h)) < 1e-15);
    }

    #[test]
    fn partial_trace_matches_index_contraction() {
        let mut rng = rng(5);
        let space = HilbertSpace::snail_qubit(2, 3).unwrap();
        for _ in 0..10 {
            let rho = random_density(&mut rng, &space);
            // ρ_q[i][j] = Σ_k ρ[(k,i),(k,j)] by explicit 4-index view.
            let mut oracle = CMatrix::zeros(3, 3);
            for i in 0..3 {
                for j in 0..3 {
                    for k in 0..2 {
                        oracle[(i, j)] += rho.matrix()[(3 * k + i, 3 * k + j)];
                    }
                }
            }
            let q = partial_trace(&rho, 1).unwrap();
            assert!((q.trace() - ONE).norm() < 1e-12);
            assert!(max_diff(q.matrix(), &oracle) < 1e-12);
        }
        let three =
            HilbertSpace::new(vec![2, 2, 2], vec!["a".into(), "b".into(), "c".into()]).unwrap();
        let rho = DensityMatrix::basis_state(&three, &[0, 0, 0]).unwrap();
        assert!(partial_trace(&rho, 0).is_err());
    }

    #[test]
    fn embedding_commutes_with_products() {
        let mut rng = rng(17);
        let space = HilbertSpace::snail_qubit(3, 3).unwrap();
        let local = single(3);
        for _ in 0..100 {
            let mode = rng.random_range(0..2);
            let (i, j) = (rng.random_range(0..3), rng.random_range(0..3));
            let use_ladder = rng.random_bool(0.5);
            let (emb, loc) = if use_ladder {
                (ladder(&space, mode).unwrap(), ladder(&local, 0).unwrap())
            } else {
                (
                    projector(&space, mode, i, j).unwrap(),
                    projector(&local, 0, i, j).unwrap(),
                )
            };
            let p = projector(&space, mode, j, i).unwrap();
            let pl = projector(&local, 0, j, i).unwrap();
            let product = &emb * &p.dag();
            let local_product = (&loc * &pl.dag()).into_matrix();
            let embedded = space.embed(mode, &local_product);
            assert!(max_diff(product.matrix(), &embedded) < 1e-12);
        }
    }

    #[test]
    fn density_matrix_validation() {
        let s = single(2);
        let mut m = CMatrix::identity(2, 2) * C64::new(0.5, 0.0);
        assert!(DensityMatrix::new(s.clone(), m.clone()).is_ok());
        m[(0, 1)] = C64::new(0.1, 0.0);
        assert!(DensityMatrix::new(s.clone(), m.clone()).is_err());
        let bad_trace = CMatrix::identity(2, 2);
        assert!(DensityMatrix::new(s.clone(), bad_trace).is_err());
        let mut neg = CMatrix::zeros(2, 2);
        neg[(0, 0)] = C64::new(1.5, 0.0);
        neg[(1, 1)] = C64::new(-0.5, 0.0);
        assert!(DensityMatrix::new(s, neg).is_err());
    }
}
