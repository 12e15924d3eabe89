//! Integer ambiguity resolution: LDL decorrelation, bootstrapping and a
//! bounded integer least-squares search with a ratio test.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NoFix {
    #[error("need at least {need} ambiguities, have {have}")]
    TooFew { have: usize, need: usize },
    #[error("ambiguity covariance is not positive definite")]
    NotPositiveDefinite,
    #[error("integer search exceeded its node budget")]
    SearchLimit,
    #[error("ratio {0:.2} below threshold")]
    Ratio(f64),
    #[error("fixed solution failed residual validation")]
    Validation,
}

/// z = Zᵀ a with Zᵀ Q Z = Lᵀ diag(D) L, L unit lower triangular.
#[derive(Debug, Clone)]
pub struct Reduction {
    pub z: DMatrix<f64>,
    pub l: DMatrix<f64>,
    pub d: DVector<f64>,
}

/// Q = Lᵀ diag(D) L, factored from the last row upwards.
pub fn ld_factor(q: &DMatrix<f64>) -> Result<(DMatrix<f64>, DVector<f64>), NoFix> {
    let n = q.nrows();
    let mut a = q.clone();
    let mut l = DMatrix::zeros(n, n);
    let mut d = DVector::zeros(n);
    for i in (0..n).rev() {
        d[i] = a[(i, i)];
        if !(d[i] > 0.0) || !d[i].is_finite() {
            return Err(NoFix::NotPositiveDefinite);
        }
        let s = d[i].sqrt();
        for j in 0..=i {
            l[(i, j)] = a[(i, j)] / s;
        }
        for j in 0..i {
            for k in 0..=j {
                a[(j, k)] -= l[(i, k)] * l[(i, j)];
            }
        }
        let diag = l[(i, i)];
        for j in 0..=i {
            l[(i, j)] /= diag;
        }
    }
    Ok((l, d))
}

fn gauss(l: &mut DMatrix<f64>, z: &mut DMatrix<f64>, i: usize, j: usize) {
    let n = l.nrows();
    let mu = l[(i, j)].round();
    if mu != 0.0 {
        for k in i..n {
            l[(k, j)] -= mu * l[(k, i)];
        }
        for k in 0..n {
            z[(k, j)] -= mu * z[(k, i)];
        }
    }
}

fn permute(l: &mut DMatrix<f64>, d: &mut DVector<f64>, z: &mut DMatrix<f64>, j: usize, del: f64) {
    let n = l.nrows();
    let eta = d[j] / del;
    let lam = d[j + 1] * l[(j + 1, j)] / del;
    d[j] = eta * d[j + 1];
    d[j + 1] = del;
    for k in 0..j {
        let a0 = l[(j, k)];
        let a1 = l[(j + 1, k)];
        l[(j, k)] = -l[(j + 1, j)] * a0 + a1;
        l[(j + 1, k)] = eta * a0 + lam * a1;
    }
    l[(j + 1, j)] = lam;
    for k in (j + 2)..n {
        l.swap((k, j), (k, j + 1));
    }
    z.swap_columns(j, j + 1);
}

/// Decorrelating integer transformation of an ambiguity covariance.
pub fn reduce(q: &DMatrix<f64>) -> Result<Reduction, NoFix> {
    let n = q.nrows();
    let (mut l, mut d) = ld_factor(q)?;
    let mut z = DMatrix::identity(n, n);
    if n < 2 {
        return Ok(Reduction { z, l, d });
    }
    let mut j = n as isize - 2;
    let mut k = n as isize - 2;
    while j >= 0 {
        let ju = j as usize;
        if j <= k {
            for i in (ju + 1)..n {
                gauss(&mut l, &mut z, i, ju);
            }
        }
        let del = d[ju] + l[(ju + 1, ju)] * l[(ju + 1, ju)] * d[ju + 1];
        if del + 1e-6 < d[ju + 1] {
            permute(&mut l, &mut d, &mut z, ju, del);
            k = j;
            j = n as isize - 2;
        } else {
            j -= 1;
        }
    }
    Ok(Reduction { z, l, d })
}

/// Best and runner-up integer vectors with their squared distances
/// (a - â)ᵀ Q⁻¹ (a - â).
#[derive(Debug, Clone, PartialEq)]
pub struct IlsSolution {
    pub best: Vec<i64>,
    pub best_cost: f64,
    pub second: Option<Vec<i64>>,
    pub second_cost: f64,
    /// Sequential conditional rounding result in the original space.
    pub bootstrap: Vec<i64>,
}

impl IlsSolution {
    pub fn ratio(&self) -> f64 {
        if self.second.is_none() {
            return f64::INFINITY;
        }
        if self.best_cost <= 0.0 {
            return if self.second_cost > 0.0 { f64::INFINITY } else { 1.0 };
        }
        self.second_cost / self.best_cost
    }
}

const SEARCH_NODE_LIMIT: usize = 200_000;

struct Search<'a> {
    l: &'a DMatrix<f64>,
    d: &'a DVector<f64>,
    zhat: &'a DVector<f64>,
    lo: Vec<i64>,
    hi: Vec<i64>,
    z: Vec<i64>,
    center: Vec<f64>,
    found: Vec<(f64, Vec<i64>)>,
    nodes: usize,
}

impl Search<'_> {
    fn bound(&self) -> f64 {
        if self.found.len() < 2 {
            f64::INFINITY
        } else {
            self.found[1].0
        }
    }

    fn conditional_center(&self, k: usize) -> f64 {
        let n = self.z.len();
        let mut c = self.zhat[k];
        for j in (k + 1)..n {
            c += self.l[(j, k)] * (self.z[j] as f64 - self.center[j]);
        }
        c
    }

    fn record(&mut self, cost: f64) {
        let pos = self.found.iter().position(|(c, _)| cost < *c).unwrap_or(self.found.len());
        self.found.insert(pos, (cost, self.z.clone()));
        self.found.truncate(2);
    }

    fn visit(&mut self, k: usize, dist: f64) -> Result<(), NoFix> {
        let c = self.conditional_center(k);
        let mut candidates: Vec<i64> = (self.lo[k]..=self.hi[k]).collect();
        candidates.sort_by(|a, b| {
            let da = (*a as f64 - c).abs();
            let db = (*b as f64 - c).abs();
            da.total_cmp(&db).then(a.cmp(b))
        });
        for zk in candidates {
            self.nodes += 1;
            if self.nodes > SEARCH_NODE_LIMIT {
                return Err(NoFix::SearchLimit);
            }
            let next = dist + (zk as f64 - c).powi(2) / self.d[k];
            if next >= self.bound() {
                break;
            }
            self.z[k] = zk;
            self.center[k] = c;
            if k == 0 {
                self.record(next);
            } else {
                self.visit(k - 1, next)?;
            }
        }
        Ok(())
    }
}

fn back_transform(z_mat: &DMatrix<f64>, z: &[i64]) -> Result<Vec<i64>, NoFix> {
    let zt = z_mat.transpose();
    let zv = DVector::from_iterator(z.len(), z.iter().map(|&v| v as f64));
    let a = zt.clone().lu().solve(&zv).ok_or(NoFix::NotPositiveDefinite)?;
    let a: Vec<i64> = a.iter().map(|v| v.round() as i64).collect();
    let check = &zt * DVector::from_iterator(a.len(), a.iter().map(|&v| v as f64));
    if check.iter().zip(z).any(|(c, &v)| c.round() as i64 != v) {
        return Err(NoFix::NotPositiveDefinite);
    }
    Ok(a)
}

/// Integer least squares: bootstrap in the decorrelated space, then an exact
/// search for the two best candidates inside a box of `half_width` cycles
/// around the bootstrap.
pub fn integer_search(
    a_hat: &DVector<f64>,
    q: &DMatrix<f64>,
    half_width: i64,
) -> Result<IlsSolution, NoFix> {
    let n = a_hat.len();
    if n == 0 {
        return Err(NoFix::TooFew { have: 0, need: 1 });
    }
    let red = reduce(q)?;
    let zhat = red.z.transpose() * a_hat;
    let mut s = Search {
        l: &red.l,
        d: &red.d,
        zhat: &zhat,
        lo: vec![i64::MIN; n],
        hi: vec![i64::MAX; n],
        z: vec![0; n],
        center: vec![0.0; n],
        found: Vec::new(),
        nodes: 0,
    };
    for k in (0..n).rev() {
        let c = s.conditional_center(k);
        s.center[k] = c;
        s.z[k] = c.round() as i64;
    }
    let boot_z = s.z.clone();
    s.lo = boot_z.iter().map(|v| v - half_width).collect();
    s.hi = boot_z.iter().map(|v| v + half_width).collect();
    s.visit(n - 1, 0.0)?;
    let mut found = std::mem::take(&mut s.found).into_iter();
    let (best_cost, best_z) = found.next().ok_or(NoFix::SearchLimit)?;
    let second = found.next();
    Ok(IlsSolution {
        best: back_transform(&red.z, &best_z)?,
        best_cost,
        second_cost: second.as_ref().map_or(f64::INFINITY, |s| s.0),
        second: second.map(|s| back_transform(&red.z, &s.1)).transpose()?,
        bootstrap: back_transform(&red.z, &boot_z)?,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AmbiguityFix {
    pub fixed: Vec<i64>,
    pub ratio: f64,
}

pub const SEARCH_HALF_WIDTH: i64 = 2;

/// Ratio-tested integer fix of float ambiguities `a_hat` with covariance `q`.
pub fn ambiguity_fix(a_hat: &DVector<f64>, q: &DMatrix<f64>, ratio_threshold: f64) -> Result<AmbiguityFix, NoFix> {
    if a_hat.len() < 4 {
        return Err(NoFix::TooFew { have: a_hat.len(), need: 4 });
    }
    let ils = integer_search(a_hat, q, SEARCH_HALF_WIDTH)?;
    let ratio = ils.ratio();
    if ratio < ratio_threshold {
        return Err(NoFix::Ratio(ratio));
    }
    Ok(AmbiguityFix { fixed: ils.best, ratio })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cost(a: &[i64], a_hat: &DVector<f64>, q_inv: &DMatrix<f64>) -> f64 {
        let e = DVector::from_iterator(a.len(), a.iter().map(|&v| v as f64)) - a_hat;
        (e.transpose() * q_inv * &e)[(0, 0)]
    }

    /// Every integer vector within ±`w` of the rounded float solution.
    fn brute_force(a_hat: &DVector<f64>, q: &DMatrix<f64>, w: i64) -> (Vec<i64>, f64) {
        let n = a_hat.len();
        let q_inv = q.clone().try_inverse().unwrap();
        let base: Vec<i64> = a_hat.iter().map(|v| v.round() as i64).collect();
        let mut offsets = vec![-w; n];
        let mut best = (base.clone(), f64::INFINITY);
        loop {
            let cand: Vec<i64> = base.iter().zip(&offsets).map(|(b, o)| b + o).collect();
            let c = cost(&cand, a_hat, &q_inv);
            if c < best.1 {
                best = (cand, c);
            }
            let mut i = 0;
            loop {
                if i == n {
                    return best;
                }
                offsets[i] += 1;
                if offsets[i] <= w {
                    break;
                }
                offsets[i] = -w;
                i += 1;
            }
        }
    }

    fn random_covariance(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> DMatrix<f64> {
        let m = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let u = m.qr().q();
        let eig = DMatrix::from_diagonal(&DVector::from_fn(n, |_, _| rng.gen_range(lo..hi)));
        let q = &u * eig * u.transpose();
        (&q + q.transpose()) * 0.5
    }

    #[test]
    fn ld_factor_reconstructs() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let q = random_covariance(&mut rng, 6, 0.01, 5.0);
        let (l, d) = ld_factor(&q).unwrap();
        let rebuilt = l.transpose() * DMatrix::from_diagonal(&d) * &l;
        assert!((rebuilt - &q).abs().max() < 1e-12);
        for i in 0..6 {
            assert_eq!(l[(i, i)], 1.0);
        }
    }

    #[test]
    fn reduction_is_unimodular_and_consistent() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let q = random_covariance(&mut rng, 8, 0.001, 50.0);
        let red = reduce(&q).unwrap();
        assert!((red.z.determinant().abs() - 1.0).abs() < 1e-9);
        assert!(red.z.iter().all(|v| v.fract() == 0.0));
        let qz = red.z.transpose() * &q * &red.z;
        let rebuilt = red.l.transpose() * DMatrix::from_diagonal(&red.d) * &red.l;
        assert!((qz - rebuilt).abs().max() < 1e-8 * q.abs().max());
    }

    #[test]
    fn well_separated_case_rounds() {
        let a_hat = DVector::from_vec(vec![3.005, -7.01, 12.0, 100.992, -0.004]);
        let q = DMatrix::identity(5, 5) * 0.001;
        let fix = ambiguity_fix(&a_hat, &q, 3.0).unwrap();
        assert_eq!(fix.fixed, vec![3, -7, 12, 101, 0]);
        assert!(fix.ratio > 100.0);
    }

    #[test]
    fn uninformative_covariance_gives_no_fix() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let q = random_covariance(&mut rng, 5, 0.02, 0.2) * 1e6;
        let a_hat = DVector::from_fn(5, |_, _| rng.gen_range(-50.0..50.0));
        assert!(matches!(ambiguity_fix(&a_hat, &q, 3.0), Err(NoFix::Ratio(_))));
    }

    #[test]
    fn too_few_ambiguities() {
        let a_hat = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let q = DMatrix::identity(3, 3) * 0.001;
        assert_eq!(ambiguity_fix(&a_hat, &q, 3.0), Err(NoFix::TooFew { have: 3, need: 4 }));
    }

    #[test]
    fn matches_exhaustive_search_on_random_problems() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for _ in 0..200 {
            let q = random_covariance(&mut rng, 4, 0.02, 0.3);
            let a_hat = DVector::from_fn(4, |_, _| rng.gen_range(-100.0..100.0));
            let ils = integer_search(&a_hat, &q, SEARCH_HALF_WIDTH).unwrap();
            let (oracle, oracle_cost) = brute_force(&a_hat, &q, 3);
            assert_eq!(ils.best, oracle);
            assert!((ils.best_cost - oracle_cost).abs() < 1e-9 * (1.0 + oracle_cost));
        }
    }

    #[test]
    fn costs_match_original_metric() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let q = random_covariance(&mut rng, 6, 0.01, 2.0);
        let a_hat = DVector::from_fn(6, |_, _| rng.gen_range(-10.0..10.0));
        let ils = integer_search(&a_hat, &q, 2).unwrap();
        let q_inv = q.try_inverse().unwrap();
        assert!((cost(&ils.best, &a_hat, &q_inv) - ils.best_cost).abs() < 1e-8);
        let second = ils.second.unwrap();
        assert!((cost(&second, &a_hat, &q_inv) - ils.second_cost).abs() < 1e-8);
        assert!(ils.second_cost >= ils.best_cost);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn accepted_fix_is_never_worse_than_brute_force(seed in any::<u64>(), scale in 0.05f64..3.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let q = random_covariance(&mut rng, 4, 0.01 * scale, scale);
            let a_hat = DVector::from_fn(4, |_, _| rng.gen_range(-20.0..20.0));
            if let Ok(fix) = ambiguity_fix(&a_hat, &q, 3.0) {
                let q_inv = q.clone().try_inverse().unwrap();
                let (_, oracle_cost) = brute_force(&a_hat, &q, 3);
                prop_assert!(cost(&fix.fixed, &a_hat, &q_inv) <= oracle_cost + 1e-9);
            }
        }
    }
}
