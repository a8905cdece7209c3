//! Linearization at the equilibrium: eigenvalues, bi-orthonormal
//! right/left eigenvectors, and the non-resonance check.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dynamics::{SystemSpec, EQUILIBRIUM_TOL};
use crate::error::{Error, Result};

/// Eigenvector matrices with a larger condition number are rejected.
pub const DIAGONALIZABLE_COND: f64 = 1e10;
/// Relative resonance tolerance, scaled by `max |λ|`.
pub const RESONANCE_TOL: f64 = 1e-9;

/// `∇F(x0) = V Λ W` with `W = V⁻¹`; row `i` of `left` is `w_i^*`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralData {
    pub eigenvalues: Vec<Complex64>,
    /// Right eigenvectors as columns.
    pub right: DMatrix<Complex64>,
    /// Left eigenvectors `w_i^*` as rows.
    pub left: DMatrix<Complex64>,
    /// `ordering[k]` is the position of eigenvalue `k` in the raw solver output.
    pub ordering: Vec<usize>,
    pub condition: f64,
}

impl SpectralData {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// `w_i^*` as a row of complex coefficients; `w_i^* x` is its dot product with `x`.
    pub fn left_row(&self, i: usize) -> Vec<Complex64> {
        self.left.row(i).iter().copied().collect()
    }

    pub fn project(&self, i: usize, x: &[f64]) -> Complex64 {
        self.left.row(i).iter().zip(x).map(|(w, xi)| w * xi).sum()
    }

    /// Index of the eigenvalue paired with `i` by complex conjugation, if any.
    pub fn conjugate_partner(&self, i: usize) -> Option<usize> {
        let li = self.eigenvalues[i];
        if li.im == 0.0 {
            return None;
        }
        self.eigenvalues.iter().position(|l| *l == li.conj())
    }

    pub fn is_hurwitz(&self) -> bool {
        self.eigenvalues.iter().all(|l| l.re < 0.0)
    }

    /// Applies a permutation (`perm[k]` = old index placed at `k`).
    pub fn permuted(&self, perm: &[usize]) -> SpectralData {
        let n = self.dim();
        SpectralData {
            eigenvalues: perm.iter().map(|&p| self.eigenvalues[p]).collect(),
            right: DMatrix::from_fn(n, n, |r, c| self.right[(r, perm[c])]),
            left: DMatrix::from_fn(n, n, |r, c| self.left[(perm[r], c)]),
            ordering: perm.iter().map(|&p| self.ordering[p]).collect(),
            condition: self.condition,
        }
    }

    pub fn to_json(&self) -> SpectralJson {
        let pair = |c: &Complex64| [c.re, c.im];
        let rows = |m: &DMatrix<Complex64>| {
            (0..m.nrows())
                .map(|r| (0..m.ncols()).map(|c| pair(&m[(r, c)])).collect())
                .collect()
        };
        SpectralJson {
            eigenvalues: self.eigenvalues.iter().map(pair).collect(),
            right_vectors: rows(&self.right),
            left_vectors: rows(&self.left),
            ordering: self.ordering.clone(),
            condition: self.condition,
        }
    }
}

/// JSON form: complex numbers as `[re, im]`, matrices row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralJson {
    pub eigenvalues: Vec<[f64; 2]>,
    pub right_vectors: Vec<Vec<[f64; 2]>>,
    pub left_vectors: Vec<Vec<[f64; 2]>>,
    pub ordering: Vec<usize>,
    pub condition: f64,
}

/// Eigen-decomposes the Jacobian at the equilibrium and requires it to be
/// Hurwitz and diagonalizable.
pub fn linearize(system: &SystemSpec) -> Result<SpectralData> {
    let residual = system.eval(&system.equilibrium).norm();
    if !(residual <= EQUILIBRIUM_TOL) {
        return Err(Error::NotEquilibrium {
            residual,
            tolerance: EQUILIBRIUM_TOL,
        });
    }
    let jac = system.jacobian(&system.equilibrium);
    let spec = decompose_unchecked(&jac)?;
    if let Some(l) = spec.eigenvalues.iter().find(|l| l.re >= 0.0) {
        return Err(Error::NotHurwitz { re: l.re, im: l.im });
    }
    if spec.condition > DIAGONALIZABLE_COND {
        return Err(Error::NotDiagonalizable {
            condition: spec.condition,
        });
    }
    Ok(spec)
}

/// Eigen-decomposition of a real square matrix in canonical order, rejecting
/// defective matrices. No stability requirement.
pub fn decompose(matrix: &DMatrix<f64>) -> Result<SpectralData> {
    let spec = decompose_unchecked(matrix)?;
    if spec.condition > DIAGONALIZABLE_COND {
        return Err(Error::NotDiagonalizable {
            condition: spec.condition,
        });
    }
    Ok(spec)
}

fn decompose_unchecked(matrix: &DMatrix<f64>) -> Result<SpectralData> {
    if !matrix.is_square() || matrix.nrows() == 0 {
        return Err(Error::InvalidInput("matrix must be square and non-empty".into()));
    }
    if matrix.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("matrix has non-finite entries".into()));
    }
    let n = matrix.nrows();
    let (raw_values, raw_vectors) = complex_eigen(matrix)?;
    let scale = raw_values.iter().map(|l| l.norm()).fold(1.0, f64::max);
    let pair_tol = 1e-9 * scale;

    let order = canonical_order(&raw_values, pair_tol);
    let mut values: Vec<Complex64> = order.iter().map(|&k| raw_values[k]).collect();
    let mut vectors: Vec<Vec<Complex64>> = order
        .iter()
        .map(|&k| raw_vectors.column(k).iter().copied().collect())
        .collect();

    // The input is real: pair conjugates exactly and make real eigenpairs real.
    let mut done = vec![false; n];
    for a in 0..n {
        if done[a] {
            continue;
        }
        done[a] = true;
        if values[a].im.abs() <= pair_tol {
            values[a].im = 0.0;
            normalize_phase(&mut vectors[a]);
            vectors[a].iter_mut().for_each(|c| c.im = 0.0);
            normalize(&mut vectors[a]);
            continue;
        }
        normalize_phase(&mut vectors[a]);
        let target = values[a].conj();
        let partner = (a + 1..n)
            .filter(|&b| !done[b])
            .min_by(|&b, &c| (values[b] - target).norm().total_cmp(&(values[c] - target).norm()))
            .filter(|&b| (values[b] - target).norm() <= 1e-6 * scale);
        if let Some(b) = partner {
            done[b] = true;
            values[b] = target;
            vectors[b] = vectors[a].iter().map(|c| c.conj()).collect();
        }
    }

    let right = DMatrix::from_fn(n, n, |r, c| vectors[c][r]);
    let condition = condition_number(&right);
    let mut left = right.clone().lu().try_inverse().ok_or(Error::NotDiagonalizable {
        condition: f64::INFINITY,
    })?;
    for a in 0..n {
        if values[a].im > 0.0 {
            if let Some(b) = (0..n).find(|&b| b != a && values[b] == values[a].conj()) {
                for c in 0..n {
                    left[(b, c)] = left[(a, c)].conj();
                }
            }
        } else if values[a].im == 0.0 {
            for c in 0..n {
                left[(a, c)].im = 0.0;
            }
        }
    }
    Ok(SpectralData {
        eigenvalues: values,
        right,
        left,
        ordering: order,
        condition,
    })
}

/// Descending real part; eigenvalues whose real parts agree within `tol`
/// are ordered by ascending |imaginary part|, positive imaginary part first.
fn canonical_order(values: &[Complex64], tol: f64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].re.total_cmp(&values[a].re));
    let mut out = Vec::with_capacity(idx.len());
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && (values[idx[start]].re - values[idx[end]].re).abs() <= tol {
            end += 1;
        }
        let mut cluster = idx[start..end].to_vec();
        cluster.sort_by(|&a, &b| {
            let (la, lb) = (values[a], values[b]);
            let ka = if la.im.abs() <= tol { 0.0 } else { la.im.abs() };
            let kb = if lb.im.abs() <= tol { 0.0 } else { lb.im.abs() };
            if (ka - kb).abs() > tol {
                ka.total_cmp(&kb)
            } else {
                lb.im.total_cmp(&la.im)
            }
        });
        out.extend(cluster);
        start = end;
    }
    out
}

fn normalize(v: &mut [Complex64]) {
    let norm = v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|c| *c /= norm);
    }
}

/// Unit norm, with the first component of (near-)maximal modulus real and positive.
fn normalize_phase(v: &mut [Complex64]) {
    normalize(v);
    let max = v.iter().map(|c| c.norm()).fold(0.0, f64::max);
    if let Some(pivot) = v.iter().find(|c| c.norm() >= max * (1.0 - 1e-8)) {
        let phase = pivot.conj() / pivot.norm();
        v.iter_mut().for_each(|c| *c *= phase);
    }
}

pub fn condition_number(m: &DMatrix<Complex64>) -> f64 {
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.iter().copied().fold(0.0, f64::max);
    let min = sv.iter().copied().fold(f64::INFINITY, f64::min);
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Eigenvalues and unit eigenvectors via the complex Schur form `A = Q T Q^*`
/// and back substitution on the triangular factor.
fn complex_eigen(matrix: &DMatrix<f64>) -> Result<(Vec<Complex64>, DMatrix<Complex64>)> {
    let n = matrix.nrows();
    let a = matrix.map(|v| Complex64::new(v, 0.0));
    let schur = a.try_schur(f64::EPSILON, 10_000).ok_or(Error::EigenFailure)?;
    let (q, t) = schur.unpack();
    let values: Vec<Complex64> = (0..n).map(|i| t[(i, i)]).collect();
    let tnorm = t.iter().map(|c| c.norm()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let small = f64::EPSILON * tnorm;
    let mut vectors = DMatrix::zeros(n, n);
    for k in 0..n {
        let mut y = vec![Complex64::new(0.0, 0.0); n];
        y[k] = Complex64::new(1.0, 0.0);
        for j in (0..k).rev() {
            let s: Complex64 = (j + 1..=k).map(|l| t[(j, l)] * y[l]).sum();
            let mut d = t[(j, j)] - values[k];
            if d.norm() < small {
                d = Complex64::new(small, 0.0);
            }
            y[j] = -s / d;
        }
        let mut v: Vec<Complex64> = (0..n).map(|r| (0..n).map(|c| q[(r, c)] * y[c]).sum()).collect();
        normalize(&mut v);
        for r in 0..n {
            vectors[(r, k)] = v[r];
        }
    }
    Ok((values, vectors))
}

/// Multi-index resonance `Σ α_i λ_i ≈ λ_k` with `|α| ≥ 2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResonanceViolation {
    pub alpha: Vec<u32>,
    /// Zero-based eigenvalue index.
    pub target: usize,
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResonanceReport {
    pub requested_degree: u32,
    pub non_resonant_up_to: u32,
    pub violations: Vec<ResonanceViolation>,
    /// Degree beyond which the tail of the normal-form remainder is integrable
    /// against the slowest decay rate.
    pub sufficient_degree: u32,
    pub tolerance: f64,
}

impl ResonanceReport {
    pub fn is_non_resonant(&self) -> bool {
        self.violations.is_empty()
    }
}

pub fn check_resonance(spec: &SpectralData, max_degree: u32) -> Result<ResonanceReport> {
    if max_degree < 2 {
        return Err(Error::InvalidInput(format!(
            "resonance degree must be at least 2, got {max_degree}"
        )));
    }
    let n = spec.dim();
    let lambda = &spec.eigenvalues;
    let scale = lambda.iter().map(|l| l.norm()).fold(0.0, f64::max);
    let tolerance = RESONANCE_TOL * scale;

    let mut violations = Vec::new();
    let mut alpha = vec![0u32; n];
    for degree in 2..=max_degree {
        enumerate(&mut alpha, 0, degree, &mut |a| {
            let sum: Complex64 = a.iter().zip(lambda).map(|(&ai, l)| l * ai as f64).sum();
            for (k, lk) in lambda.iter().enumerate() {
                let gap = (sum - lk).norm();
                if gap <= tolerance {
                    violations.push(ResonanceViolation {
                        alpha: a.to_vec(),
                        target: k,
                        gap,
                    });
                }
            }
        });
    }
    let non_resonant_up_to = violations
        .iter()
        .map(|v| v.alpha.iter().sum::<u32>() - 1)
        .min()
        .unwrap_or(max_degree);

    Ok(ResonanceReport {
        requested_degree: max_degree,
        non_resonant_up_to,
        violations,
        sufficient_degree: sufficient_degree(lambda),
        tolerance,
    })
}

/// `max(2, ceil(max_i Re λ_i / β) - 1)` with `β = (1 - 1e-3) max_j Re λ_j`.
pub fn sufficient_degree(lambda: &[Complex64]) -> u32 {
    let slowest = lambda.iter().map(|l| l.re).fold(f64::NEG_INFINITY, f64::max);
    if !(slowest < 0.0) {
        return 2;
    }
    let beta = (1.0 - 1e-3) * slowest;
    let ratio = lambda.iter().map(|l| l.re / beta).fold(f64::NEG_INFINITY, f64::max);
    let bound = ratio.ceil() - 1.0;
    (bound.max(2.0)).min(u32::MAX as f64) as u32
}

/// Visits every multi-index of total degree `remaining` in lexicographically
/// descending order of its leading entries.
fn enumerate(alpha: &mut [u32], pos: usize, remaining: u32, visit: &mut dyn FnMut(&[u32])) {
    if pos == alpha.len() - 1 {
        alpha[pos] = remaining;
        visit(alpha);
        alpha[pos] = 0;
        return;
    }
    for v in (0..=remaining).rev() {
        alpha[pos] = v;
        enumerate(alpha, pos + 1, remaining - v, visit);
    }
    alpha[pos] = 0;
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::lookup;
    use std::collections::BTreeMap;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn check_invariants(spec: &SpectralData, a: &DMatrix<f64>) {
        let n = spec.dim();
        let ac = a.map(|v| c(v, 0.0));
        let wv = &spec.left * &spec.right;
        assert!((wv - DMatrix::identity(n, n)).norm() < 1e-10);
        for i in 0..n {
            let l = spec.eigenvalues[i];
            let v = spec.right.column(i);
            let r = &ac * v - v * l;
            assert!(r.norm() <= 1e-8 * (1.0 + l.norm()), "right residual {}", r.norm());
            let w = spec.left.row(i);
            let r = w * &ac - w * l;
            assert!(
                r.norm() <= 1e-8 * (1.0 + l.norm()) * w.norm(),
                "left residual {}",
                r.norm()
            );
        }
    }

    #[test]
    fn vdp_reverse_eigenvalues() {
        let sys = lookup("vdp-reverse", &BTreeMap::new()).unwrap();
        let spec = linearize(&sys).unwrap();
        // roots of λ² + 0.5 λ + 1
        let im = (1.0f64 - 0.0625).sqrt();
        assert!((spec.eigenvalues[0] - c(-0.25, im)).norm() < 1e-12);
        assert!((spec.eigenvalues[1] - c(-0.25, -im)).norm() < 1e-12);
        assert!((im - 0.968_246).abs() < 1e-6);
        check_invariants(&spec, &sys.jacobian(&[0.0, 0.0]));
        assert_eq!(spec.conjugate_partner(0), Some(1));
        for k in 0..2 {
            assert_eq!(spec.left[(1, k)], spec.left[(0, k)].conj());
            assert_eq!(spec.right[(k, 1)], spec.right[(k, 0)].conj());
        }
    }

    #[test]
    fn diagonal_matrix_gives_identity_vectors() {
        let a = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![-1.0, -2.0]));
        let spec = decompose(&a).unwrap();
        assert_eq!(spec.eigenvalues, vec![c(-1.0, 0.0), c(-2.0, 0.0)]);
        let id = DMatrix::<Complex64>::identity(2, 2);
        assert!((&spec.right - &id).norm() < 1e-14, "{}", spec.right);
        assert!((&spec.left - &id).norm() < 1e-14);
        assert_eq!(spec.ordering, vec![0, 1]);
        let swapped = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![-2.0, -1.0]));
        assert_eq!(decompose(&swapped).unwrap().ordering, vec![1, 0]);
    }

    #[test]
    fn forward_vdp_is_not_hurwitz() {
        let sys = lookup("vdp", &BTreeMap::new()).unwrap();
        assert!(matches!(linearize(&sys), Err(Error::NotHurwitz { .. })));
    }

    #[test]
    fn jordan_block_is_not_diagonalizable() {
        let a = DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 0.0, -1.0]);
        assert!(matches!(decompose(&a), Err(Error::NotDiagonalizable { .. })));
    }

    #[test]
    fn resonant_quadratic_eigenvalues() {
        let sys = lookup("resonant-quadratic", &BTreeMap::new()).unwrap();
        let spec = linearize(&sys).unwrap();
        assert_eq!(spec.eigenvalues, vec![c(-1.0, 0.0), c(-2.0, 0.0)]);
    }

    #[test]
    fn ordering_with_mixed_spectrum() {
        // blocks: -0.5 ± 2j, -0.5 ± 1j, -0.5, -3
        let a = DMatrix::from_row_slice(
            6,
            6,
            &[
                -0.5, -2.0, 0.0, 0.0, 0.0, 0.0, //
                2.0, -0.5, 0.0, 0.0, 0.0, 0.0, //
                0.0, 0.0, -3.0, 0.0, 0.0, 0.0, //
                0.0, 0.0, 0.0, -0.5, 1.0, 0.0, //
                0.0, 0.0, 0.0, -1.0, -0.5, 0.0, //
                0.0, 0.0, 0.0, 0.0, 0.0, -0.5,
            ],
        );
        let spec = decompose(&a).unwrap();
        let expect = [
            c(-0.5, 0.0),
            c(-0.5, 1.0),
            c(-0.5, -1.0),
            c(-0.5, 2.0),
            c(-0.5, -2.0),
            c(-3.0, 0.0),
        ];
        for (l, e) in spec.eigenvalues.iter().zip(expect) {
            assert!((l - e).norm() < 1e-10, "{l} vs {e}");
        }
        check_invariants(&spec, &a);
    }

    #[test]
    fn resonance_enumeration() {
        let spec = decompose(&DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, -2.0])).unwrap();
        let r = check_resonance(&spec, 3).unwrap();
        assert_eq!(r.violations.len(), 1);
        assert_eq!(r.violations[0].alpha, vec![2, 0]);
        assert_eq!(r.violations[0].target, 1);
        assert_eq!(r.non_resonant_up_to, 1);
        assert!(!r.is_non_resonant());

        let one = decompose(&DMatrix::from_element(1, 1, -1.0)).unwrap();
        let r = check_resonance(&one, 5).unwrap();
        assert!(r.violations.is_empty());
        assert_eq!(r.non_resonant_up_to, 5);

        assert!(check_resonance(&one, 1).is_err());
    }

    #[test]
    fn vdp_is_non_resonant() {
        let sys = lookup("vdp-reverse", &BTreeMap::new()).unwrap();
        let r = check_resonance(&linearize(&sys).unwrap(), 10).unwrap();
        assert!(r.is_non_resonant());
        assert_eq!(r.non_resonant_up_to, 10);
    }

    #[test]
    fn enumeration_counts_match_binomials() {
        // number of multi-indices in N^3 of degree d is C(d + 2, 2)
        let mut alpha = vec![0; 3];
        for d in 0..6u32 {
            let mut count = 0;
            enumerate(&mut alpha, 0, d, &mut |a| {
                assert_eq!(a.iter().sum::<u32>(), d);
                count += 1;
            });
            assert_eq!(count, ((d + 2) * (d + 1) / 2) as usize);
        }
    }

    #[test]
    fn sufficient_degree_bound() {
        assert_eq!(sufficient_degree(&[c(-1.0, 0.0), c(-2.0, 0.0)]), 2);
        // ratios 1.001 and 10.01: ceil 11, minus one
        assert_eq!(sufficient_degree(&[c(-1.0, 0.0), c(-10.0, 0.0)]), 10);
    }

    #[test]
    fn json_layout() {
        let sys = lookup("vdp-reverse", &BTreeMap::new()).unwrap();
        let j = linearize(&sys).unwrap().to_json();
        assert!((j.eigenvalues[0][0] + 0.25).abs() < 1e-14);
        assert_eq!(j.right_vectors.len(), 2);
        assert_eq!(j.left_vectors[0].len(), 2);
        let text = serde_json::to_string(&j).unwrap();
        let back: SpectralJson = serde_json::from_str(&text).unwrap();
        assert_eq!(back, j);
    }
}
