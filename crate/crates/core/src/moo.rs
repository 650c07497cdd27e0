//! Multi-objective optimization primitives.
//!
//! Provides size-proportional averaging weights, linear scalarization, the
//! box-constrained Chebyshev inner maximization (exact greedy solver plus a
//! projection-based cross-check solver), Euclidean simplex projection, and a
//! Pareto-stationarity diagnostic based on the minimum-norm point in the
//! convex hull of objective gradients.

use crate::error::{Error, Result};

/// Absolute tolerance for "weights sum to one".
pub const WEIGHT_SUM_TOL: f64 = 1e-9;

/// Per-client objective values, one entry per client.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveVector(Vec<f64>);

impl ObjectiveVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidInput("objective vector is empty".into()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "objective {i} is not finite: {}",
                values[i]
            )));
        }
        Ok(Self(values))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// A point on the probability simplex: non-negative entries summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidInput("weight vector is empty".into()));
        }
        if let Some(i) = weights.iter().position(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidInput(format!(
                "weight {i} is invalid: {}",
                weights[i]
            )));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::InvalidInput(format!(
                "weights sum to {sum}, expected 1"
            )));
        }
        Ok(Self(weights))
    }

    /// Uniform weights over `k` entries.
    pub fn uniform(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidInput("cannot build uniform weights over zero entries".into()));
        }
        Self::new(vec![1.0 / k as f64; k])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    /// Restrict to the given indices and renormalize to sum one.
    ///
    /// Fails when the retained mass is zero.
    pub fn restrict_and_renormalize(&self, indices: &[usize]) -> Result<WeightVector> {
        if indices.is_empty() {
            return Err(Error::EmptySelection("no indices to restrict weights to".into()));
        }
        let mut picked = Vec::with_capacity(indices.len());
        for &i in indices {
            let w = self.0.get(i).copied().ok_or_else(|| {
                Error::InvalidInput(format!("weight index {i} out of range {}", self.0.len()))
            })?;
            picked.push(w);
        }
        let sum: f64 = picked.iter().sum();
        if sum <= 0.0 {
            return Err(Error::InvalidInput(
                "restricted weights have zero total mass".into(),
            ));
        }
        for w in &mut picked {
            *w /= sum;
        }
        WeightVector::new(picked)
    }
}

/// Parameters of the box-constrained Chebyshev inner maximization: the box
/// radius `epsilon` around the size-proportional weights, and the reference
/// point subtracted from the objectives.
#[derive(Debug, Clone)]
pub struct ChebyshevConfig {
    pub epsilon: f64,
    pub reference_point: Vec<f64>,
    pub fedavg_weights: WeightVector,
}

impl ChebyshevConfig {
    pub fn new(epsilon: f64, reference_point: Vec<f64>, fedavg_weights: WeightVector) -> Result<Self> {
        if !(0.0..=1.0).contains(&epsilon) {
            return Err(Error::InvalidInput(format!(
                "epsilon must be in [0, 1], got {epsilon}"
            )));
        }
        if reference_point.len() != fedavg_weights.len() {
            return Err(Error::DimensionMismatch(format!(
                "reference point has length {}, weights have length {}",
                reference_point.len(),
                fedavg_weights.len()
            )));
        }
        if reference_point.iter().any(|z| !z.is_finite()) {
            return Err(Error::InvalidInput("reference point has non-finite entries".into()));
        }
        Ok(Self {
            epsilon,
            reference_point,
            fedavg_weights,
        })
    }

    /// Config with a zero reference point.
    pub fn with_zero_reference(epsilon: f64, fedavg_weights: WeightVector) -> Result<Self> {
        let zeta = vec![0.0; fedavg_weights.len()];
        Self::new(epsilon, zeta, fedavg_weights)
    }

    fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let avg = self.fedavg_weights.as_slice();
        let lower: Vec<f64> = avg.iter().map(|a| (a - self.epsilon).max(0.0)).collect();
        let upper: Vec<f64> = avg.iter().map(|a| (a + self.epsilon).min(1.0)).collect();
        (lower, upper)
    }
}

/// Size-proportional aggregation weights: `sizes[k] / sum(sizes)`.
pub fn compute_lambda_avg(dataset_sizes: &[u64]) -> Result<WeightVector> {
    if dataset_sizes.is_empty() {
        return Err(Error::InvalidInput("no dataset sizes given".into()));
    }
    if let Some(i) = dataset_sizes.iter().position(|&s| s == 0) {
        return Err(Error::InvalidInput(format!("dataset size {i} is zero")));
    }
    let total: f64 = dataset_sizes.iter().map(|&s| s as f64).sum();
    WeightVector::new(dataset_sizes.iter().map(|&s| s as f64 / total).collect())
}

/// Weighted sum of objectives.
pub fn linear_scalarize(objectives: &ObjectiveVector, weights: &WeightVector) -> Result<f64> {
    if objectives.len() != weights.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} objectives vs {} weights",
            objectives.len(),
            weights.len()
        )));
    }
    Ok(objectives
        .as_slice()
        .iter()
        .zip(weights.as_slice())
        .map(|(f, w)| f * w)
        .sum())
}

fn shifted_scores(objectives: &ObjectiveVector, cfg: &ChebyshevConfig) -> Result<Vec<f64>> {
    if objectives.len() != cfg.fedavg_weights.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} objectives vs {} weights",
            objectives.len(),
            cfg.fedavg_weights.len()
        )));
    }
    let scores: Vec<f64> = objectives
        .as_slice()
        .iter()
        .zip(&cfg.reference_point)
        .map(|(f, z)| f - z)
        .collect();
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::InvalidInput(
            "objective minus reference point is not finite".into(),
        ));
    }
    Ok(scores)
}

/// Exact maximizer of `sum_k w_k (f_k - zeta_k)` over the simplex intersected
/// with the infinity-norm box of radius `epsilon` around the averaging weights.
///
/// Greedy allocation: start every weight at its lower bound, then hand the
/// remaining mass to clients in descending score order, capping each at its
/// upper bound. Score ties go to the lower client index.
pub fn solve_inner_weights(objectives: &ObjectiveVector, cfg: &ChebyshevConfig) -> Result<WeightVector> {
    let scores = shifted_scores(objectives, cfg)?;
    // A zero radius collapses the feasible set to the averaging weights.
    if cfg.epsilon == 0.0 {
        return Ok(cfg.fedavg_weights.clone());
    }
    let (lower, upper) = cfg.bounds();
    let mut weights = lower.clone();
    let mut residual = 1.0 - lower.iter().sum::<f64>();
    let mut order: Vec<usize> = (0..scores.len()).collect();
    // Stable sort keeps ascending index order within equal scores.
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap());
    for idx in order {
        if residual <= 0.0 {
            break;
        }
        let take = (upper[idx] - weights[idx]).min(residual);
        weights[idx] += take;
        residual -= take;
    }
    WeightVector::new(weights)
}

/// Euclidean projection onto the probability simplex.
pub fn project_simplex(v: &[f64]) -> Result<WeightVector> {
    if v.is_empty() {
        return Err(Error::InvalidInput("cannot project an empty vector".into()));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidInput("cannot project non-finite entries".into()));
    }
    WeightVector::new(project_simplex_raw(v))
}

fn project_simplex_raw(v: &[f64]) -> Vec<f64> {
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut cumulative = 0.0;
    let mut threshold = 0.0;
    for (j, &u) in sorted.iter().enumerate() {
        cumulative += u;
        let t = (cumulative - 1.0) / (j + 1) as f64;
        if u - t > 0.0 {
            threshold = t;
        }
    }
    v.iter().map(|&x| (x - threshold).max(0.0)).collect()
}

fn clamp_to_box(v: &[f64], lower: &[f64], upper: &[f64]) -> Vec<f64> {
    v.iter()
        .zip(lower.iter().zip(upper))
        .map(|(&x, (&lo, &hi))| x.clamp(lo, hi))
        .collect()
}

/// Euclidean projection onto the intersection of the simplex and a box, by
/// Dykstra's alternating projections with correction terms.
pub fn dykstra_box_simplex(
    v: &[f64],
    lower: &[f64],
    upper: &[f64],
    max_iters: usize,
    tol: f64,
) -> Result<Vec<f64>> {
    let k = v.len();
    if lower.len() != k || upper.len() != k {
        return Err(Error::DimensionMismatch(
            "bounds must match the vector length".into(),
        ));
    }
    let mut x = v.to_vec();
    let mut p = vec![0.0; k];
    let mut q = vec![0.0; k];
    let mut residual = f64::INFINITY;
    for _ in 0..max_iters {
        let x_prev = x.clone();
        let yp: Vec<f64> = x.iter().zip(&p).map(|(a, b)| a + b).collect();
        let y = project_simplex_raw(&yp);
        for i in 0..k {
            p[i] = yp[i] - y[i];
        }
        let xq: Vec<f64> = y.iter().zip(&q).map(|(a, b)| a + b).collect();
        x = clamp_to_box(&xq, lower, upper);
        for i in 0..k {
            q[i] = xq[i] - x[i];
        }
        let step_change = x
            .iter()
            .zip(&x_prev)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let set_gap = x
            .iter()
            .zip(&y)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        residual = step_change.max(set_gap);
        if residual <= tol {
            return Ok(x);
        }
    }
    Err(Error::NumericFailure {
        what: "dykstra projection onto simplex-box intersection".into(),
        residual,
    })
}

/// Iteration cap for each Dykstra projection inside the POCS solver.
pub const DYKSTRA_MAX_ITERS: usize = 10_000;
/// Convergence tolerance for Dykstra projections.
pub const DYKSTRA_TOL: f64 = 1e-10;

/// Exact Euclidean projection onto the simplex-box intersection by solving
/// the continuous knapsack dual: `x = clamp(v - shift, lower, upper)` with
/// the shift bisected until the coordinates sum to one.
///
/// Used as the fallback when Dykstra exhausts its iteration cap, which
/// happens when a box face osculates the simplex (a bound within a sliver
/// of one).
pub fn project_box_simplex_exact(v: &[f64], lower: &[f64], upper: &[f64]) -> Vec<f64> {
    let clamped_sum = |shift: f64| -> f64 {
        v.iter()
            .zip(lower.iter().zip(upper))
            .map(|(&x, (&lo, &hi))| (x - shift).clamp(lo, hi))
            .sum()
    };
    let mut low_shift = f64::INFINITY;
    let mut high_shift = f64::NEG_INFINITY;
    for ((&x, &lo), &hi) in v.iter().zip(lower).zip(upper) {
        low_shift = low_shift.min(x - hi);
        high_shift = high_shift.max(x - lo);
    }
    // clamped_sum is non-increasing in the shift; bracket and bisect.
    for _ in 0..200 {
        let mid = 0.5 * (low_shift + high_shift);
        if clamped_sum(mid) > 1.0 {
            low_shift = mid;
        } else {
            high_shift = mid;
        }
        if high_shift - low_shift <= f64::EPSILON * (1.0 + high_shift.abs()) {
            break;
        }
    }
    let shift = high_shift;
    let mut x: Vec<f64> = v
        .iter()
        .zip(lower.iter().zip(upper))
        .map(|(&xi, (&lo, &hi))| (xi - shift).clamp(lo, hi))
        .collect();
    // Spread the residual rounding gap over the coordinates that are strictly
    // inside their bounds.
    let gap = 1.0 - x.iter().sum::<f64>();
    if gap != 0.0 {
        let free: Vec<usize> = (0..x.len())
            .filter(|&i| x[i] > lower[i] && x[i] < upper[i])
            .collect();
        if !free.is_empty() {
            let share = gap / free.len() as f64;
            for i in free {
                x[i] = (x[i] + share).clamp(lower[i], upper[i]);
            }
        }
    }
    x
}

/// Projection-based cross-check solver for the inner maximization: projected
/// gradient ascent on the linear objective, with each feasibility projection
/// computed by [`dykstra_box_simplex`].
///
/// The objective is linear, so any positive step is stable; large steps
/// (tens to hundreds over the score scale) converge in a handful of
/// projections even when two scores are nearly tied, while small steps crawl
/// along the tied face.
pub fn solve_inner_weights_pocs(
    objectives: &ObjectiveVector,
    cfg: &ChebyshevConfig,
    step: f64,
    iters: usize,
) -> Result<WeightVector> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::InvalidInput(format!("step must be positive, got {step}")));
    }
    if iters == 0 {
        return Err(Error::InvalidInput("iteration count must be positive".into()));
    }
    let scores = shifted_scores(objectives, cfg)?;
    let (lower, upper) = cfg.bounds();
    let mut x = cfg.fedavg_weights.as_slice().to_vec();
    for _ in 0..iters {
        let ascended: Vec<f64> = x.iter().zip(&scores).map(|(w, s)| w + step * s).collect();
        let next = match dykstra_box_simplex(&ascended, &lower, &upper, DYKSTRA_MAX_ITERS, DYKSTRA_TOL)
        {
            Ok(projected) => projected,
            // An exhausted cap means a box face osculates the simplex;
            // finish that projection with the exact knapsack solve.
            Err(Error::NumericFailure { .. }) => {
                project_box_simplex_exact(&ascended, &lower, &upper)
            }
            Err(other) => return Err(other),
        };
        let change = next
            .iter()
            .zip(&x)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        x = next;
        // Projection jitter sits near the Dykstra tolerance; below this the
        // ascent has stalled at its fixed point.
        if change <= 1e-9 {
            break;
        }
    }
    // Dykstra can leave sub-tolerance negative dust; clean it up.
    for w in &mut x {
        if *w < 0.0 && *w > -DYKSTRA_TOL {
            *w = 0.0;
        }
    }
    WeightVector::new(x)
}

/// Iteration cap for the stationarity-gap solver.
pub const STATIONARITY_MAX_ITERS: usize = 5_000;
/// Duality-gap threshold at which the stationarity-gap solver stops.
pub const STATIONARITY_GAP_TOL: f64 = 1e-13;

/// Minimum norm of a convex combination of the given gradients, with the
/// achieving combination. A value near zero certifies approximate
/// Pareto-stationarity.
///
/// Frank-Wolfe with away steps and exact line search on the squared norm;
/// the away steps give the fast convergence needed to certify gaps at the
/// `1e-6` level.
pub fn pareto_stationarity_gap(gradients: &[Vec<f64>]) -> Result<(f64, WeightVector)> {
    if gradients.is_empty() {
        return Err(Error::InvalidInput("no gradients given".into()));
    }
    let dim = gradients[0].len();
    for (k, g) in gradients.iter().enumerate() {
        if g.len() != dim {
            return Err(Error::DimensionMismatch(format!(
                "gradient {k} has length {}, expected {dim}",
                g.len()
            )));
        }
        if g.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput(format!("gradient {k} has non-finite entries")));
        }
    }
    let k = gradients.len();
    let dot = |a: &[f64], b: &[f64]| -> f64 { a.iter().zip(b).map(|(x, y)| x * y).sum() };

    let mut lambda = vec![0.0; k];
    lambda[0] = 1.0;
    let mut x = gradients[0].clone();
    for _ in 0..STATIONARITY_MAX_ITERS {
        let scores: Vec<f64> = gradients.iter().map(|g| dot(&x, g)).collect();
        let xx = dot(&x, &x);
        let toward = (0..k)
            .min_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap())
            .unwrap();
        let fw_gap = xx - scores[toward];
        if fw_gap <= STATIONARITY_GAP_TOL {
            break;
        }
        let away = (0..k)
            .filter(|&i| lambda[i] > 0.0)
            .max_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap())
            .unwrap();
        let fw_improvement = xx - scores[toward];
        let away_improvement = scores[away] - xx;
        if fw_improvement >= away_improvement || lambda[away] >= 1.0 {
            // Frank-Wolfe step toward the best vertex.
            let direction: Vec<f64> = gradients[toward].iter().zip(&x).map(|(g, xi)| g - xi).collect();
            let denom = dot(&direction, &direction);
            if denom == 0.0 {
                break;
            }
            let gamma = (-dot(&x, &direction) / denom).clamp(0.0, 1.0);
            for l in lambda.iter_mut() {
                *l *= 1.0 - gamma;
            }
            lambda[toward] += gamma;
            for (xi, d) in x.iter_mut().zip(&direction) {
                *xi += gamma * d;
            }
        } else {
            // Away step: shift mass off the worst active vertex.
            let direction: Vec<f64> = x.iter().zip(&gradients[away]).map(|(xi, g)| xi - g).collect();
            let denom = dot(&direction, &direction);
            if denom == 0.0 {
                break;
            }
            let gamma_max = lambda[away] / (1.0 - lambda[away]);
            let gamma = (-dot(&x, &direction) / denom).clamp(0.0, gamma_max);
            for l in lambda.iter_mut() {
                *l *= 1.0 + gamma;
            }
            lambda[away] -= gamma;
            if lambda[away].abs() < 1e-15 {
                lambda[away] = 0.0;
            }
            for (xi, d) in x.iter_mut().zip(&direction) {
                *xi += gamma * d;
            }
        }
    }
    let mass: f64 = lambda.iter().sum();
    for l in lambda.iter_mut() {
        *l /= mass;
    }

    // Terminal polish: on nearly affinely dependent gradient sets the
    // vertex steps stall, so try the regularized affine least-squares
    // witness over the active set and over all vertices, keeping whichever
    // combination yields the smallest norm.
    let combination_norm = |lam: &[f64]| -> f64 {
        let mut point = vec![0.0; dim];
        for (l, g) in lam.iter().zip(gradients) {
            for (pi, gi) in point.iter_mut().zip(g) {
                *pi += l * gi;
            }
        }
        dot(&point, &point).sqrt()
    };
    let mut best_lambda = lambda.clone();
    let mut best_gap = combination_norm(&lambda);
    let active: Vec<usize> = (0..k).filter(|&i| lambda[i] > 1e-12).collect();
    let full: Vec<usize> = (0..k).collect();
    for subset in [active, full] {
        if let Some(candidate) = affine_witness(gradients, &subset) {
            let gap = combination_norm(&candidate);
            if gap < best_gap {
                best_gap = gap;
                best_lambda = candidate;
            }
        }
    }
    Ok((best_gap, WeightVector::new(best_lambda)?))
}

/// Minimizer of `|sum_k lambda_k g_k|` over affine combinations of the given
/// subset (regularized normal equations), clipped back onto the simplex.
/// Returns `None` when the subset collapses or the solve degenerates.
fn affine_witness(gradients: &[Vec<f64>], subset: &[usize]) -> Option<Vec<f64>> {
    let m = subset.len();
    if m == 0 {
        return None;
    }
    let dot = |a: &[f64], b: &[f64]| -> f64 { a.iter().zip(b).map(|(x, y)| x * y).sum() };
    let mut gram = vec![vec![0.0; m]; m];
    let mut trace = 0.0;
    for (r, &i) in subset.iter().enumerate() {
        for (c, &j) in subset.iter().enumerate() {
            gram[r][c] = dot(&gradients[i], &gradients[j]);
        }
        trace += gram[r][r];
    }
    let delta = 1e-12 * (1.0 + trace / m as f64);
    for (r, row) in gram.iter_mut().enumerate() {
        row[r] += delta;
    }
    // The affine stationarity condition reduces to solving (G'G + dI) x = 1
    // and normalizing x to unit sum.
    let mut rhs = vec![1.0; m];
    if !solve_in_place(&mut gram, &mut rhs) {
        return None;
    }
    let mut lam = vec![0.0; gradients.len()];
    for (&i, &x) in subset.iter().zip(&rhs) {
        lam[i] = x.max(0.0);
    }
    let total: f64 = lam.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return None;
    }
    for l in &mut lam {
        *l /= total;
    }
    Some(lam)
}

/// Gaussian elimination with partial pivoting; returns false on a
/// vanishing pivot.
fn solve_in_place(a: &mut [Vec<f64>], b: &mut [f64]) -> bool {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&r, &s| a[r][col].abs().partial_cmp(&a[s][col].abs()).unwrap())
            .unwrap();
        if a[pivot][col].abs() < 1e-300 {
            return false;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let factor = a[row][col] / a[col][col];
            for c in col..n {
                a[row][c] -= factor * a[col][c];
            }
            b[row] -= factor * b[col];
        }
    }
    for col in (0..n).rev() {
        let mut acc = b[col];
        for c in col + 1..n {
            acc -= a[col][c] * b[c];
        }
        b[col] = acc / a[col][col];
    }
    b.iter().all(|x| x.is_finite())
}
