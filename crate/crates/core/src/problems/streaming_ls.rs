//! Least squares over a sliding window of streamed samples.
//!
//! At step `k` the cost is `(1/2W) Σ (aᵀx - b)²` over the `W` most recent
//! rows. The generator draws standard normal features and a ground truth
//! that is piecewise constant with jumps at configurable step indices.

use std::collections::VecDeque;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{Error, Result};
use crate::model::{Matrix, ProblemConstants, TimeVaryingCost, Vector};

#[derive(Debug, Clone, PartialEq)]
pub struct StreamingLsConfig {
    pub dimension: usize,
    pub window: usize,
    pub steps: usize,
    pub jump_indices: Vec<usize>,
    pub noise_sigma: f64,
    pub seed: u64,
    /// Sampling interval mapping step `k` to time `kδ`.
    pub delta: f64,
}

impl Default for StreamingLsConfig {
    fn default() -> Self {
        Self {
            dimension: 50,
            window: 50,
            steps: 950,
            jump_indices: vec![250, 550],
            noise_sigma: 0.01,
            seed: 1,
            delta: 0.1,
        }
    }
}

/// Ground-truth spread of regime `i`: alternating between 1 and 3 so every
/// jump changes the scale of the solution.
fn regime_std(i: usize) -> f64 {
    if i % 2 == 1 {
        3.0
    } else {
        1.0
    }
}

#[derive(Debug, Clone)]
pub struct StreamingLs {
    features: Matrix,
    targets: Vector,
    window: usize,
    steps: usize,
    delta: f64,
    /// Rows that precede step 0 (full warm-up windows when `window - 1`).
    offset: usize,
    jump_indices: Vec<usize>,
    /// Generator ground truths, one per regime.
    truths: Option<Vec<Vector>>,
}

fn check_shape(window: usize, steps: usize, delta: f64) -> Result<()> {
    if window == 0 {
        return Err(Error::Input("window must hold at least one sample".into()));
    }
    if steps == 0 {
        return Err(Error::Input("need at least one step".into()));
    }
    if !(delta > 0.0) {
        return Err(Error::Domain(format!(
            "delta must be positive, got {delta}"
        )));
    }
    Ok(())
}

impl StreamingLs {
    /// Synthetic stream with `window - 1` warm-up rows, so every window is full.
    pub fn generate(config: &StreamingLsConfig) -> Result<Self> {
        check_shape(config.window, config.steps, config.delta)?;
        if config.steps <= config.window {
            return Err(Error::Input(format!(
                "steps ({}) must exceed the window ({})",
                config.steps, config.window
            )));
        }
        if config.dimension == 0 {
            return Err(Error::Input("dimension must be at least 1".into()));
        }
        let noise = Normal::new(0.0, config.noise_sigma)
            .map_err(|e| Error::Domain(format!("noise sigma: {e}")))?;
        let mut jumps = config.jump_indices.clone();
        jumps.sort_unstable();

        let n = config.dimension;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let truths: Vec<Vector> = (0..=jumps.len())
            .map(|i| {
                let s = regime_std(i);
                Vector::from_fn(n, |_, _| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    s * z
                })
            })
            .collect();

        let offset = config.window - 1;
        let rows = config.steps + offset;
        let mut features = Matrix::zeros(rows, n);
        let mut targets = Vector::zeros(rows);
        for r in 0..rows {
            let step = r as i64 - offset as i64;
            let regime = jumps.iter().filter(|&&j| step >= j as i64).count();
            let mut dot = 0.0;
            for c in 0..n {
                let a: f64 = StandardNormal.sample(&mut rng);
                features[(r, c)] = a;
                dot += a * truths[regime][c];
            }
            targets[r] = dot + noise.sample(&mut rng);
        }

        Ok(Self {
            features,
            targets,
            window: config.window,
            steps: config.steps,
            delta: config.delta,
            offset,
            jump_indices: jumps,
            truths: Some(truths),
        })
    }

    /// Stream from recorded rows, one per step. Rows beyond `steps` (up to
    /// `window - 1`) are taken as warm-up rows preceding step 0; with fewer,
    /// the first windows are partial.
    pub fn from_rows(
        features: Matrix,
        targets: Vector,
        window: usize,
        steps: usize,
        jump_indices: Vec<usize>,
        delta: f64,
    ) -> Result<Self> {
        check_shape(window, steps, delta)?;
        let rows = features.nrows();
        if targets.len() != rows {
            return Err(Error::Input(format!(
                "{} feature rows but {} targets",
                rows,
                targets.len()
            )));
        }
        if rows < steps {
            return Err(Error::Input(format!(
                "data has {rows} rows, need at least one per step ({steps})"
            )));
        }
        if features.ncols() == 0 {
            return Err(Error::Input("rows need at least one feature".into()));
        }
        let mut jumps = jump_indices;
        jumps.sort_unstable();
        Ok(Self {
            offset: (window - 1).min(rows - steps),
            features,
            targets,
            window,
            steps,
            delta,
            jump_indices: jumps,
            truths: None,
        })
    }

    /// Reads `a₁,…,aₙ,b` lines; blank lines and `#` comments are skipped.
    pub fn read_rows(path: &Path) -> Result<(Matrix, Vector)> {
        let text = std::fs::read_to_string(path)?;
        let mut values = Vec::new();
        let mut width = None;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let row = line
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Input(format!("{}:{}: {e}", path.display(), lineno + 1)))?;
            if row.len() < 2 {
                return Err(Error::Input(format!(
                    "{}:{}: need at least one feature and a target",
                    path.display(),
                    lineno + 1
                )));
            }
            match width {
                None => width = Some(row.len()),
                Some(w) if w != row.len() => {
                    return Err(Error::Input(format!(
                        "{}:{}: expected {w} fields, found {}",
                        path.display(),
                        lineno + 1,
                        row.len()
                    )))
                }
                _ => {}
            }
            values.push(row);
        }
        let width =
            width.ok_or_else(|| Error::Input(format!("{} has no data rows", path.display())))?;
        let n = width - 1;
        let features = Matrix::from_fn(values.len(), n, |r, c| values[r][c]);
        let targets = Vector::from_iterator(values.len(), values.iter().map(|row| row[n]));
        Ok((features, targets))
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn jump_indices(&self) -> &[usize] {
        &self.jump_indices
    }

    pub fn step_of(&self, t: f64) -> usize {
        ((t / self.delta).round().max(0.0) as usize).min(self.steps - 1)
    }

    /// Row range `[start, end)` of the window at step `k`.
    pub fn window_rows(&self, k: usize) -> (usize, usize) {
        let end = k.min(self.steps - 1) + self.offset + 1;
        (end.saturating_sub(self.window), end)
    }

    pub fn row(&self, r: usize) -> (Vector, f64) {
        (self.features.row(r).transpose(), self.targets[r])
    }

    /// Ground truth of the newest row at step `k` (generated streams only).
    pub fn truth_at(&self, k: usize) -> Option<&Vector> {
        let truths = self.truths.as_ref()?;
        let regime = self.jump_indices.iter().filter(|&&j| k >= j).count();
        truths.get(regime)
    }

    fn residual(&self, x: &Vector, k: usize) -> (Vector, usize, usize) {
        let (start, end) = self.window_rows(k);
        let a = self.features.rows(start, end - start);
        let r = a * x - self.targets.rows(start, end - start);
        (r, start, end)
    }

    pub fn window_hessian(&self, k: usize) -> Matrix {
        let (start, end) = self.window_rows(k);
        let a = self.features.rows(start, end - start);
        a.transpose() * a / self.window as f64
    }

    /// Curvature extremes over all windows; time constants are left at zero.
    pub fn curvature_constants(&self) -> Result<ProblemConstants> {
        let (mut m, mut big_m) = (f64::INFINITY, 0.0_f64);
        for k in 0..self.steps {
            let eig = self.window_hessian(k).symmetric_eigenvalues();
            m = m.min(eig.min());
            big_m = big_m.max(eig.max());
        }
        if !(m > 0.0) {
            return Err(Error::Domain(format!(
                "some window is rank deficient (min eigenvalue {m:e})"
            )));
        }
        let mut c = ProblemConstants::new(m, big_m, 0.0, 0.0, 0.0)?;
        c.empirical = true;
        Ok(c)
    }
}

impl TimeVaryingCost for StreamingLs {
    fn dimension(&self) -> usize {
        self.features.ncols()
    }

    fn value(&self, x: &Vector, t: f64) -> f64 {
        let (r, _, _) = self.residual(x, self.step_of(t));
        r.norm_squared() / (2.0 * self.window as f64)
    }

    fn grad_x(&self, x: &Vector, t: f64) -> Vector {
        let (r, start, end) = self.residual(x, self.step_of(t));
        self.features.rows(start, end - start).tr_mul(&r) / self.window as f64
    }

    fn hessian(&self, _x: &Vector, t: f64) -> Option<Matrix> {
        Some(self.window_hessian(self.step_of(t)))
    }

    fn jumps_between(&self, t_prev: f64, t_next: f64) -> bool {
        let (a, b) = (self.step_of(t_prev), self.step_of(t_next));
        self.jump_indices.iter().any(|&j| a < j && j <= b)
    }

    fn time_domain(&self) -> (f64, f64) {
        (0.0, self.delta * (self.steps - 1) as f64)
    }
}

/// Incrementally maintained window: Gram matrix `Σ aaᵀ`, `Σ ab` and `Σ b²`.
#[derive(Debug, Clone)]
pub struct SlidingWindow {
    capacity: usize,
    rows: VecDeque<(Vector, f64)>,
    gram: Matrix,
    atb: Vector,
    btb: f64,
}

impl SlidingWindow {
    pub fn new(dimension: usize, capacity: usize) -> Result<Self> {
        if capacity == 0 || dimension == 0 {
            return Err(Error::Input(
                "window needs positive capacity and dimension".into(),
            ));
        }
        Ok(Self {
            capacity,
            rows: VecDeque::with_capacity(capacity),
            gram: Matrix::zeros(dimension, dimension),
            atb: Vector::zeros(dimension),
            btb: 0.0,
        })
    }

    /// Adds a sample, returning the evicted oldest one once full.
    pub fn push(&mut self, a: Vector, b: f64) -> Result<Option<(Vector, f64)>> {
        if a.len() != self.atb.len() {
            return Err(Error::Input(format!(
                "sample has {} features, window expects {}",
                a.len(),
                self.atb.len()
            )));
        }
        let evicted = if self.rows.len() == self.capacity {
            self.rows.pop_front()
        } else {
            None
        };
        if let Some((old_a, old_b)) = &evicted {
            self.gram.ger(-1.0, old_a, old_a, 1.0);
            self.atb.axpy(-old_b, old_a, 1.0);
            self.btb -= old_b * old_b;
        }
        self.gram.ger(1.0, &a, &a, 1.0);
        self.atb.axpy(b, &a, 1.0);
        self.btb += b * b;
        self.rows.push_back((a, b));
        Ok(evicted)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.rows.len() == self.capacity
    }

    fn scale(&self) -> f64 {
        1.0 / self.capacity as f64
    }

    /// `(xᵀGx - 2xᵀAᵀb + bᵀb) / 2W` from the maintained sums.
    pub fn value(&self, x: &Vector) -> f64 {
        0.5 * self.scale() * (x.dot(&(&self.gram * x)) - 2.0 * x.dot(&self.atb) + self.btb)
    }

    pub fn value_from_scratch(&self, x: &Vector) -> f64 {
        let sum: f64 = self.rows.iter().map(|(a, b)| (a.dot(x) - b).powi(2)).sum();
        0.5 * self.scale() * sum
    }

    pub fn gradient(&self, x: &Vector) -> Vector {
        (&self.gram * x - &self.atb) * self.scale()
    }

    pub fn hessian(&self) -> Matrix {
        &self.gram * self.scale()
    }
}

/// Convenience wrapper reading a data file for [`StreamingLs::from_rows`].
pub fn load_stream(
    path: &Path,
    window: usize,
    steps: usize,
    jump_indices: Vec<usize>,
    delta: f64,
) -> Result<StreamingLs> {
    let (a, b) = StreamingLs::read_rows(path)?;
    StreamingLs::from_rows(a, b, window, steps, jump_indices, delta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::validate_cost;
    use crate::oracle::frozen_optimum;
    use std::io::Write;

    fn small(noise: f64) -> StreamingLs {
        StreamingLs::generate(&StreamingLsConfig {
            dimension: 5,
            window: 5,
            steps: 40,
            jump_indices: vec![10, 25],
            noise_sigma: noise,
            seed: 9,
            delta: 1.0,
        })
        .unwrap()
    }

    #[test]
    fn generator_is_deterministic() {
        let a = StreamingLs::generate(&StreamingLsConfig::default()).unwrap();
        let b = StreamingLs::generate(&StreamingLsConfig::default()).unwrap();
        assert_eq!(a.features, b.features);
        assert_eq!(a.targets, b.targets);
        assert_eq!(a.features.nrows(), 950 + 49);
    }

    #[test]
    fn noiseless_window_recovers_truth() {
        let ls = small(0.0);
        for k in [0, 9, 14, 24, 30, 39] {
            let t = k as f64;
            let opt = frozen_optimum(&ls, t, &Vector::zeros(5), 1e-12, 5).unwrap();
            let truth = ls.truth_at(k).unwrap();
            assert!((&opt.x - truth).amax() < 1e-8, "k = {k}");
            assert!(opt.f.abs() < 1e-16);
        }
    }

    #[test]
    fn straddling_window_blends_regimes() {
        let ls = small(0.0);
        let opt = frozen_optimum(&ls, 11.0, &Vector::zeros(5), 1e-12, 5).unwrap();
        let before = ls.truth_at(9).unwrap();
        let after = ls.truth_at(10).unwrap();
        assert!((&opt.x - before).norm() > 1e-3);
        assert!((&opt.x - after).norm() > 1e-3);
        assert!(ls.jumps_between(9.0, 10.0));
        assert!(!ls.jumps_between(10.0, 11.0));
    }

    #[test]
    fn consecutive_windows_differ_by_one_sample() {
        let ls = small(0.01);
        let x = Vector::from_fn(5, |i, _| i as f64 * 0.3 - 0.5);
        for k in 0..39 {
            let (s0, e0) = ls.window_rows(k);
            let (s1, e1) = ls.window_rows(k + 1);
            assert_eq!((s1, e1), (s0 + 1, e0 + 1));
            let (a_in, b_in) = ls.row(e0);
            let (a_out, b_out) = ls.row(s0);
            let diff = ((a_in.dot(&x) - b_in).powi(2) - (a_out.dot(&x) - b_out).powi(2)) / 10.0;
            let lhs = ls.value(&x, (k + 1) as f64) - ls.value(&x, k as f64);
            assert!((lhs - diff).abs() < 1e-12 * (1.0 + diff.abs()));
        }
    }

    #[test]
    fn gradients_validate() {
        let ls = StreamingLs::generate(&StreamingLsConfig::default()).unwrap();
        let report = validate_cost(&ls, 100, 3).unwrap();
        assert!(report.passed, "{report:?}");
    }

    #[test]
    fn incremental_window_matches_recomputation() {
        let ls = StreamingLs::generate(&StreamingLsConfig::default()).unwrap();
        let mut w = SlidingWindow::new(50, 50).unwrap();
        let rows = ls.features.nrows();
        for r in 0..rows {
            let (a, b) = ls.row(r);
            w.push(a, b).unwrap();
        }
        assert!(w.is_full());
        let x = ls.truth_at(900).unwrap() + Vector::from_element(50, 0.1);
        let scratch = w.value_from_scratch(&x);
        assert!((w.value(&x) - scratch).abs() <= 1e-9 * (1.0 + scratch));
        let direct = ls.value(&x, ls.delta * 949.0);
        assert!((direct - scratch).abs() <= 1e-9 * (1.0 + scratch));
        let g = ls.grad_x(&x, ls.delta * 949.0);
        let scale = 1.0 + g.amax();
        assert!((w.gradient(&x) - g).amax() <= 1e-9 * scale);
    }

    #[test]
    fn file_rows_round_trip() {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        writeln!(file, "# a1,a2,b").unwrap();
        for i in 0..6 {
            let x = i as f64;
            writeln!(file, "{},{},{}", x, 1.0 - x, 2.0 * x).unwrap();
        }
        let ls = load_stream(file.path(), 3, 4, vec![], 1.0).unwrap();
        assert_eq!(ls.dimension(), 2);
        // Two spare rows serve as warm-up.
        assert_eq!(ls.window_rows(0), (0, 3));
        assert_eq!(ls.window_rows(3), (3, 6));
        assert!(load_stream(file.path(), 3, 7, vec![], 1.0).is_err());
        let short = load_stream(file.path(), 3, 6, vec![], 1.0).unwrap();
        assert_eq!(short.window_rows(0), (0, 1));
    }

    #[test]
    fn malformed_rows_rejected() {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        writeln!(file, "1,2,3\n1,2").unwrap();
        assert!(StreamingLs::read_rows(file.path()).is_err());
        let mut file = tempfile::NamedTempFile::new().unwrap();
        writeln!(file, "1,x,3").unwrap();
        assert!(StreamingLs::read_rows(file.path()).is_err());
    }
}
