//! Closed-form tracking bounds and constant estimation.
//!
//! With contraction factor `c = 1 - 2καm`, the gap after `k` steps obeys
//!
//! ```text
//! f(x_k, t_k) - f*(t_k) ≤ (1 - cᵏ)/(4κ²α²m) ψ
//!                       + (1 - cᵏ)/(4κ²α²m²) max(γδ², μδ)
//!                       + cᵏ (f(x_0, t_0) - f*(t_0))
//! ```
//!
//! where the backward-difference variant uses `γ′` in place of `γ`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{Matrix, ProblemConstants, TimeVaryingCost, Vector};
use crate::oracle::mixed_derivative;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundVariant {
    /// Analytic time derivative.
    Alg1,
    /// Backward-difference time derivative.
    Alg2,
}

fn require_positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("{name} must be positive, got {v}")))
    }
}

/// Bound on the change of the optimal value over one sampling interval.
pub fn psi(c: &ProblemConstants, delta: f64) -> Result<f64> {
    if !(c.m > 0.0) {
        return Err(Error::Domain(format!("m must be positive, got {}", c.m)));
    }
    if !(delta >= 0.0) {
        return Err(Error::Domain(format!(
            "delta must be nonnegative, got {delta}"
        )));
    }
    let drift = delta * (c.k1 + 0.5 * delta * c.k3);
    let motion = c.k2 * c.k2 * delta * delta / (2.0 * c.m) * (c.big_m * delta / c.m + 2.0);
    Ok(drift + motion)
}

/// Per-step prediction error constant for the analytic-derivative tracker.
pub fn gamma(c: &ProblemConstants, delta: f64, epsilon: f64) -> Result<f64> {
    require_positive("delta", delta)?;
    require_positive("epsilon", epsilon)?;
    Ok(2.0 * c.k1 / delta
        + c.big_m / (2.0 * epsilon * epsilon) * c.k1 * c.k1
        + 0.5 * c.k3
        + c.k1 * c.k2 / epsilon)
}

/// Counterpart of [`gamma`] for the backward-difference tracker.
pub fn gamma_prime(c: &ProblemConstants, delta: f64, epsilon: f64) -> Result<f64> {
    require_positive("delta", delta)?;
    require_positive("epsilon", epsilon)?;
    let eps2 = epsilon * epsilon;
    Ok(c.k3
        + 2.0 * c.k1 / delta
        + c.k1 * c.k1 * c.big_m / eps2
        + c.k2 * (c.k1 + 0.5 * delta * c.k3) / epsilon
        + delta * delta * c.k3 * c.k3 * c.big_m / (4.0 * eps2))
}

/// Cost change bound when prediction is skipped.
pub fn mu(c: &ProblemConstants, delta: f64) -> Result<f64> {
    if !(delta >= 0.0) {
        return Err(Error::Domain(format!(
            "delta must be nonnegative, got {delta}"
        )));
    }
    Ok(c.k1 + 0.5 * delta * c.k3)
}

/// `1 - αM/2`, defined for `0 ≤ α ≤ 1/(2M)`.
pub fn kappa(alpha: f64, big_m: f64) -> Result<f64> {
    if !(big_m > 0.0) {
        return Err(Error::Domain(format!("M must be positive, got {big_m}")));
    }
    if !(alpha >= 0.0 && alpha <= 1.0 / (2.0 * big_m)) {
        return Err(Error::Domain(format!(
            "step size {alpha} violates 0 < alpha <= 1/(2M) = {}",
            1.0 / (2.0 * big_m)
        )));
    }
    Ok(1.0 - alpha * big_m / 2.0)
}

/// Right-hand side of the tracking bound after `k` steps.
pub fn theorem_bound(
    c: &ProblemConstants,
    alpha: f64,
    delta: f64,
    epsilon: f64,
    k: u64,
    initial_gap: f64,
    variant: BoundVariant,
) -> Result<f64> {
    BoundReport::new(c, alpha, delta, epsilon)?.per_step(k, initial_gap, variant)
}

/// All bound constants for one configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    pub constants: ProblemConstants,
    pub alpha: f64,
    pub delta: f64,
    pub epsilon: f64,
    pub psi: f64,
    pub gamma: f64,
    pub gamma_prime: f64,
    pub mu: f64,
    pub kappa: f64,
    /// `1 - 2καm`.
    pub contraction: f64,
    pub ultimate_alg1: f64,
    pub ultimate_alg2: f64,
}

impl BoundReport {
    pub fn new(c: &ProblemConstants, alpha: f64, delta: f64, epsilon: f64) -> Result<Self> {
        c.validate()?;
        require_positive("alpha", alpha)?;
        let kappa = kappa(alpha, c.big_m)?;
        let psi = psi(c, delta)?;
        let gamma = gamma(c, delta, epsilon)?;
        let gamma_prime = gamma_prime(c, delta, epsilon)?;
        let mu = mu(c, delta)?;
        let contraction = 1.0 - 2.0 * kappa * alpha * c.m;
        let mut report = Self {
            constants: *c,
            alpha,
            delta,
            epsilon,
            psi,
            gamma,
            gamma_prime,
            mu,
            kappa,
            contraction,
            ultimate_alg1: 0.0,
            ultimate_alg2: 0.0,
        };
        report.ultimate_alg1 = report.limit(BoundVariant::Alg1);
        report.ultimate_alg2 = report.limit(BoundVariant::Alg2);
        Ok(report)
    }

    /// `max(γδ², μδ)` (or with `γ′`).
    pub fn prediction_term(&self, variant: BoundVariant) -> f64 {
        let g = match variant {
            BoundVariant::Alg1 => self.gamma,
            BoundVariant::Alg2 => self.gamma_prime,
        };
        (g * self.delta * self.delta).max(self.mu * self.delta)
    }

    fn scale(&self) -> f64 {
        4.0 * self.kappa * self.kappa * self.alpha * self.alpha * self.constants.m
    }

    fn limit(&self, variant: BoundVariant) -> f64 {
        let s = self.scale();
        self.psi / s + self.prediction_term(variant) / (s * self.constants.m)
    }

    pub fn ultimate(&self, variant: BoundVariant) -> f64 {
        match variant {
            BoundVariant::Alg1 => self.ultimate_alg1,
            BoundVariant::Alg2 => self.ultimate_alg2,
        }
    }

    pub fn per_step(&self, k: u64, initial_gap: f64, variant: BoundVariant) -> Result<f64> {
        if !(initial_gap >= 0.0) {
            return Err(Error::Domain(format!(
                "initial gap must be nonnegative, got {initial_gap}"
            )));
        }
        let ck = self.contraction.powf(k as f64);
        Ok((1.0 - ck) * self.ultimate(variant) + ck * initial_gap)
    }
}

/// Outcome of the threshold search balancing `γδ²` against `μδ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpsilonChoice {
    /// Solution of `γ(ε)δ² = μδ` inside the search range, if one exists.
    pub root: Option<f64>,
    /// Grid minimizer of `max(γδ², μδ)` over the range.
    pub fallback: f64,
}

const EPSILON_GRID: usize = 200;

/// Searches `[lo, hi]` for the threshold that balances the two prediction
/// error regimes. For `K1 > 0` the two sides never meet (`γδ² - μδ` is a sum
/// of positive terms), so the root is `None` and the fallback reports where
/// `max(γδ², μδ)` is smallest.
pub fn optimal_epsilon(
    c: &ProblemConstants,
    delta: f64,
    range: (f64, f64),
) -> Result<EpsilonChoice> {
    let (lo, hi) = range;
    if !(lo > 0.0 && hi > lo) {
        return Err(Error::Domain(format!(
            "search range needs 0 < lo < hi, got ({lo}, {hi})"
        )));
    }
    let mu_delta = mu(c, delta)? * delta;
    let balance = |eps: f64| -> Result<(f64, f64)> {
        let g = gamma(c, delta, eps)? * delta * delta;
        Ok((g - mu_delta, g.abs() + mu_delta.abs()))
    };

    let (h_lo, s_lo) = balance(lo)?;
    let (h_hi, s_hi) = balance(hi)?;
    let tiny = |h: f64, s: f64| h.abs() <= 1e-12 * s;
    let root = if s_lo == 0.0 && s_hi == 0.0 {
        // Nothing to balance: a static cost.
        None
    } else if tiny(h_lo, s_lo) {
        Some(lo)
    } else if tiny(h_hi, s_hi) {
        Some(hi)
    } else if h_lo.signum() != h_hi.signum() {
        let (mut a, mut b, mut ha) = (lo, hi, h_lo);
        for _ in 0..200 {
            let mid = 0.5 * (a + b);
            let (hm, _) = balance(mid)?;
            if hm == 0.0 {
                a = mid;
                b = mid;
                break;
            }
            if hm.signum() == ha.signum() {
                a = mid;
                ha = hm;
            } else {
                b = mid;
            }
        }
        Some(0.5 * (a + b))
    } else {
        None
    };

    let ratio = hi / lo;
    let mut best = (lo, f64::INFINITY);
    for i in 0..EPSILON_GRID {
        let eps = if i + 1 == EPSILON_GRID {
            hi
        } else {
            lo * ratio.powf(i as f64 / (EPSILON_GRID - 1) as f64)
        };
        let g = gamma(c, delta, eps)? * delta * delta;
        let objective = g.max(mu_delta);
        if objective < best.1 {
            best = (eps, objective);
        }
    }
    Ok(EpsilonChoice {
        root,
        fallback: best.0,
    })
}

/// Axis-aligned sampling box.
#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    pub lower: Vector,
    pub upper: Vector,
}

impl Region {
    pub fn new(lower: Vector, upper: Vector) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(Error::Domain(
                "region bounds must have equal, nonzero length".into(),
            ));
        }
        if lower.iter().zip(upper.iter()).any(|(l, u)| !(u > l)) {
            return Err(Error::Domain(
                "region is degenerate: need lower < upper".into(),
            ));
        }
        Ok(Self { lower, upper })
    }

    pub fn cube(n: usize, half_width: f64) -> Result<Self> {
        Self::new(
            Vector::from_element(n, -half_width),
            Vector::from_element(n, half_width),
        )
    }
}

fn fd_hessian<C: TimeVaryingCost + ?Sized>(cost: &C, x: &Vector, t: f64) -> Matrix {
    let n = x.len();
    let h = 1e-5 * (1.0 + x.amax());
    let mut hess = Matrix::zeros(n, n);
    for j in 0..n {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[j] += h;
        xm[j] -= h;
        let col = (cost.grad_x(&xp, t) - cost.grad_x(&xm, t)) / (2.0 * h);
        hess.set_column(j, &col);
    }
    (&hess + hess.transpose()) * 0.5
}

/// Sampled regularity constants over a box and time range.
///
/// `m` and `M` come from Hessian eigenvalue extremes (finite-difference
/// Hessian when none is provided); `K1..K3` from time derivatives, finite
/// differences where the cost does not provide them. Results are the
/// extremes over all samples and are flagged as empirical.
pub fn estimate_constants<C: TimeVaryingCost + ?Sized>(
    cost: &C,
    region: &Region,
    t_range: (f64, f64),
    samples: usize,
    seed: u64,
) -> Result<ProblemConstants> {
    if samples < 2 {
        return Err(Error::Domain(
            "constant estimation needs at least 2 samples".into(),
        ));
    }
    if region.lower.len() != cost.dimension() {
        return Err(Error::Domain(format!(
            "region has dimension {}, cost expects {}",
            region.lower.len(),
            cost.dimension()
        )));
    }
    let (t_lo, t_hi) = t_range;
    if !(t_hi >= t_lo) {
        return Err(Error::Domain("time range is reversed".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = f64::INFINITY;
    let mut big_m = 0.0_f64;
    let (mut k1, mut k2, mut k3) = (0.0_f64, 0.0_f64, 0.0_f64);

    for _ in 0..samples {
        let x = Vector::from_fn(region.lower.len(), |i, _| {
            rng.random_range(region.lower[i]..region.upper[i])
        });
        let t = if t_hi > t_lo {
            rng.random_range(t_lo..t_hi)
        } else {
            t_lo
        };

        let hess = cost
            .hessian(&x, t)
            .unwrap_or_else(|| fd_hessian(cost, &x, t));
        let eig = hess.symmetric_eigenvalues();
        m = m.min(eig.min());
        big_m = big_m.max(eig.max());

        let ht = 1e-5 * (1.0 + t.abs());
        let dt = cost
            .grad_t(&x, t)
            .unwrap_or_else(|| (cost.value(&x, t + ht) - cost.value(&x, t - ht)) / (2.0 * ht));
        k1 = k1.max(dt.abs());
        k2 = k2.max(mixed_derivative(cost, &x, t).norm());
        let dtt = match (cost.grad_t(&x, t + ht), cost.grad_t(&x, t - ht)) {
            (Some(a), Some(b)) => (a - b) / (2.0 * ht),
            _ => {
                let h2 = 1e-4 * (1.0 + t.abs());
                (cost.value(&x, t + h2) - 2.0 * cost.value(&x, t) + cost.value(&x, t - h2))
                    / (h2 * h2)
            }
        };
        k3 = k3.max(dtt.abs());
    }

    if !(m > 0.0) {
        return Err(Error::Domain(format!(
            "sampled curvature is not positive (min eigenvalue {m:e})"
        )));
    }
    let mut c = ProblemConstants::new(m, big_m.max(m), k1, k2, k3)?;
    c.empirical = true;
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit() -> ProblemConstants {
        ProblemConstants::new(1.0, 1.0, 1.0, 1.0, 1.0).unwrap()
    }

    fn zero_k(m: f64, big_m: f64) -> ProblemConstants {
        ProblemConstants::new(m, big_m, 0.0, 0.0, 0.0).unwrap()
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * (1.0 + b.abs())
    }

    #[test]
    fn psi_values() {
        assert!(close(psi(&unit(), 0.1).unwrap(), 0.1155, 1e-14));
        assert_eq!(psi(&unit(), 0.0).unwrap(), 0.0);
        assert_eq!(psi(&zero_k(1.0, 3.0), 0.7).unwrap(), 0.0);
        let bad = ProblemConstants { m: 0.0, ..unit() };
        assert!(psi(&bad, 0.1).is_err());
    }

    #[test]
    fn gamma_values() {
        assert!(close(gamma(&unit(), 0.1, 0.1).unwrap(), 80.5, 1e-14));
        let c = ProblemConstants::new(1.0, 1.0, 0.0, 3.0, 1.0).unwrap();
        assert!(close(gamma(&c, 0.1, 0.1).unwrap(), 0.5, 1e-14));
        // ε → ∞ leaves 2K1/δ + K3/2.
        assert!(close(gamma(&unit(), 0.1, 1e12).unwrap(), 20.5, 1e-9));
        assert!(gamma(&unit(), 0.0, 0.1).is_err());
        assert!(gamma(&unit(), 0.1, -1.0).is_err());
    }

    #[test]
    fn gamma_prime_values() {
        // 1 + 20 + 100 + 10.5 + 0.25
        assert!(close(
            gamma_prime(&unit(), 0.1, 0.1).unwrap(),
            131.75,
            1e-14
        ));
        let c = ProblemConstants::new(1.0, 1.0, 1.0, 1.0, 0.0).unwrap();
        let gp = gamma_prime(&c, 0.1, 0.1).unwrap();
        assert!(close(gp, 20.0 + 100.0 + 10.0, 1e-14));
        assert!(gp >= gamma(&c, 0.1, 0.1).unwrap());
        let c = ProblemConstants::new(1.0, 1.0, 0.0, 5.0, 0.0).unwrap();
        assert_eq!(gamma_prime(&c, 0.1, 0.1).unwrap(), 0.0);
    }

    #[test]
    fn mu_and_kappa_values() {
        assert!(close(mu(&unit(), 0.1).unwrap(), 1.05, 1e-15));
        assert_eq!(mu(&unit(), 0.0).unwrap(), 1.0);
        assert_eq!(mu(&zero_k(1.0, 1.0), 0.3).unwrap(), 0.0);
        assert!(close(kappa(0.04, 1.0).unwrap(), 0.98, 1e-15));
        assert_eq!(kappa(0.0, 1.0).unwrap(), 1.0);
        assert_eq!(kappa(0.125, 4.0).unwrap(), 0.75);
        assert!(kappa(0.2, 4.0).is_err());
        assert!(kappa(-0.1, 4.0).is_err());
    }

    #[test]
    fn theorem_bound_endpoints() {
        let c = unit();
        let b0 = theorem_bound(&c, 0.04, 0.1, 0.1, 0, 3.5, BoundVariant::Alg1).unwrap();
        assert_eq!(b0, 3.5);
        let report = BoundReport::new(&c, 0.04, 0.1, 0.1).unwrap();
        // ψ/(4κ²α²m) + max(γδ², μδ)/(4κ²α²m²) = 0.1155/0.00614656 + 0.805/0.00614656
        let expected = (0.1155 + 0.805) / (4.0 * 0.98 * 0.98 * 0.0016);
        assert!(close(report.ultimate_alg1, expected, 1e-12));
        assert!((report.ultimate_alg1 - 149.8).abs() < 0.05);
        let late = report.per_step(1_000_000, 3.5, BoundVariant::Alg1).unwrap();
        assert!(close(late, report.ultimate_alg1, 1e-9));
        let stat = BoundReport::new(&zero_k(1.0, 1.0), 0.04, 0.1, 0.1).unwrap();
        assert_eq!(stat.ultimate_alg1, 0.0);
        assert_eq!(stat.ultimate_alg2, 0.0);
    }

    #[test]
    fn theorem_bound_rejects_bad_inputs() {
        let c = unit();
        assert!(theorem_bound(&c, 0.6, 0.1, 0.1, 3, 1.0, BoundVariant::Alg1).is_err());
        assert!(theorem_bound(&c, 0.04, 0.1, 0.1, 3, -1.0, BoundVariant::Alg1).is_err());
    }

    #[test]
    fn contraction_in_unit_interval() {
        let c = ProblemConstants::new(0.5, 4.0, 1.0, 1.0, 1.0).unwrap();
        for alpha in [1e-4, 0.01, 0.1, 0.125] {
            let r = BoundReport::new(&c, alpha, 0.1, 0.1).unwrap();
            assert!(r.contraction > 0.0 && r.contraction <= 1.0);
            assert!(r.gamma_prime >= r.gamma);
        }
    }

    #[test]
    fn optimal_epsilon_no_root_when_k1_positive() {
        let choice = optimal_epsilon(&unit(), 0.1, (1e-3, 10.0)).unwrap();
        assert_eq!(choice.root, None);
        assert_eq!(choice.fallback, 10.0);
    }

    #[test]
    fn optimal_epsilon_every_threshold_balances_without_k1() {
        let c = ProblemConstants::new(1.0, 2.0, 0.0, 1.0, 3.0).unwrap();
        let choice = optimal_epsilon(&c, 0.1, (0.01, 1.0)).unwrap();
        assert_eq!(choice.root, Some(0.01));
    }

    #[test]
    fn optimal_epsilon_static_cost() {
        let choice = optimal_epsilon(&zero_k(1.0, 1.0), 0.1, (0.01, 1.0)).unwrap();
        assert_eq!(choice.root, None);
        assert_eq!(choice.fallback, 0.01);
        assert!(optimal_epsilon(&unit(), 0.1, (1.0, 0.5)).is_err());
    }

    struct Drift;

    impl TimeVaryingCost for Drift {
        fn dimension(&self) -> usize {
            1
        }
        fn value(&self, x: &Vector, t: f64) -> f64 {
            (x[0] - t).powi(2)
        }
        fn grad_x(&self, x: &Vector, t: f64) -> Vector {
            Vector::from_element(1, 2.0 * (x[0] - t))
        }
        fn grad_t(&self, x: &Vector, t: f64) -> Option<f64> {
            Some(-2.0 * (x[0] - t))
        }
        fn hessian(&self, _x: &Vector, _t: f64) -> Option<Matrix> {
            Some(Matrix::from_element(1, 1, 2.0))
        }
    }

    struct StaticBowl;

    impl TimeVaryingCost for StaticBowl {
        fn dimension(&self) -> usize {
            2
        }
        fn value(&self, x: &Vector, _t: f64) -> f64 {
            x[0] * x[0] + 3.0 * x[1] * x[1] + x[0] * x[1]
        }
        fn grad_x(&self, x: &Vector, _t: f64) -> Vector {
            Vector::from_vec(vec![2.0 * x[0] + x[1], 6.0 * x[1] + x[0]])
        }
    }

    #[test]
    fn estimated_constants_of_drift() {
        let region = Region::cube(1, 1.0).unwrap();
        let c = estimate_constants(&Drift, &region, (0.0, 2.0), 200, 3).unwrap();
        assert!(c.empirical);
        assert_eq!((c.m, c.big_m), (2.0, 2.0));
        assert!(close(c.k2, 2.0, 1e-6) && close(c.k3, 2.0, 1e-6));
        // |∇ₜf| = 2|x - t| ≤ 2 · sup |x - t| = 6 on this box.
        assert!(c.k1 <= 6.0 && c.k1 > 4.0);
    }

    #[test]
    fn estimated_constants_of_static_quadratic() {
        let region = Region::cube(2, 3.0).unwrap();
        let c = estimate_constants(&StaticBowl, &region, (0.0, 5.0), 20, 1).unwrap();
        assert_eq!((c.k1, c.k2, c.k3), (0.0, 0.0, 0.0));
        let exact = Matrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 6.0]).symmetric_eigenvalues();
        assert!(close(c.m, exact.min(), 1e-6) && close(c.big_m, exact.max(), 1e-6));
    }

    #[test]
    fn estimation_input_errors() {
        assert!(Region::new(Vector::zeros(2), Vector::zeros(2)).is_err());
        let region = Region::cube(1, 1.0).unwrap();
        assert!(estimate_constants(&Drift, &region, (0.0, 1.0), 1, 0).is_err());
        let wrong_dim = Region::cube(3, 1.0).unwrap();
        assert!(estimate_constants(&Drift, &wrong_dim, (0.0, 1.0), 5, 0).is_err());
    }
}
