//! Entropy-regularized optimal transport between uniform empirical measures.
//!
//! Marginals are the all-ones vectors, the kernel is `K = exp(-C/ε)` on the
//! squared Euclidean cost, and the scaling vectors are updated alternately
//! (`a ← 1/(K b)`, then `b ← 1/(Kᵀ a)`) for a fixed budget starting from
//! `b = 1`. Everything runs on log-potentials `f = log a`, `g = log b` so
//! small ε cannot underflow the kernel. The transport value is normalized
//! by `1/(n·m)`.
//!
//! Gradients are obtained by differentiating the unrolled iterations, which
//! is the exact derivative of the value actually computed at a finite budget.

use crate::error::{Error, Result};
use crate::tensor::{logsumexp_slice, Tensor};

/// Default number of Sinkhorn iterations.
pub const DEFAULT_BUDGET: usize = 10;

/// Default momentum for the running ε estimate.
pub const DEFAULT_EPS_MOMENTUM: f64 = 0.9;

/// Uniform empirical measure: `n` points in `R^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct Measure {
    points: Tensor,
}

impl Measure {
    pub fn new(points: Tensor) -> Result<Self> {
        if points.ndim() != 2 {
            return Err(Error::shape(format!(
                "measure points must be n×d, got {:?}",
                points.shape()
            )));
        }
        if points.dim(0) == 0 {
            return Err(Error::invalid("measure needs at least one point"));
        }
        points.check_finite("measure points")?;
        Ok(Measure { points })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::shape("ragged measure rows"));
        }
        let data = rows.iter().flatten().copied().collect();
        Self::new(Tensor::new(&[rows.len(), d], data)?)
    }

    pub fn len(&self) -> usize {
        self.points.dim(0)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dim(&self) -> usize {
        self.points.dim(1)
    }

    pub fn point(&self, i: usize) -> &[f64] {
        self.points.row(i)
    }

    pub fn points(&self) -> &Tensor {
        &self.points
    }

    /// Same points shifted by `offset`.
    pub fn translated(&self, offset: &[f64]) -> Result<Self> {
        if offset.len() != self.dim() {
            return Err(Error::shape("translation dimension mismatch"));
        }
        let d = self.dim();
        let mut p = self.points.clone();
        for (k, v) in p.data_mut().iter_mut().enumerate() {
            *v += offset[k % d];
        }
        Measure::new(p)
    }
}

/// Pairwise squared Euclidean distances, `n×m`.
pub fn cost_matrix(p: &Measure, q: &Measure) -> Result<Tensor> {
    if p.dim() != q.dim() {
        return Err(Error::shape(format!(
            "cost_matrix: point dimension {} vs {}",
            p.dim(),
            q.dim()
        )));
    }
    let (n, m) = (p.len(), q.len());
    Ok(Tensor::from_fn(&[n, m], |k| {
        let (x, y) = (p.point(k / m), q.point(k % m));
        x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
    }))
}

/// Scaling-form Sinkhorn state. Potentials are stored as logs.
#[derive(Debug, Clone)]
pub struct TransportState {
    cost: Tensor,
    eps: f64,
    log_k: Tensor,
    log_a: Vec<f64>,
    log_b: Vec<f64>,
    iterations: usize,
    // (log a_l, log b_l) after each completed iteration, for reverse mode
    trajectory: Vec<(Vec<f64>, Vec<f64>)>,
}

impl TransportState {
    /// Fresh state with `b₀ = 1`.
    pub fn new(cost: Tensor, eps: f64, iterations: usize) -> Result<Self> {
        if !(eps > 0.0) || !eps.is_finite() {
            return Err(Error::invalid(format!("ε must be positive and finite, got {eps}")));
        }
        if iterations == 0 {
            return Err(Error::invalid("Sinkhorn budget must be at least 1"));
        }
        if cost.ndim() != 2 || cost.is_empty() {
            return Err(Error::shape(format!("cost must be a nonempty matrix, got {:?}", cost.shape())));
        }
        cost.check_finite("cost matrix")?;
        if cost.data().iter().any(|&c| c < 0.0) {
            return Err(Error::invalid("cost entries must be nonnegative"));
        }
        let mut log_k = cost.clone();
        log_k.scale(-1.0 / eps);
        log_k.check_finite("log kernel")?;
        let (n, m) = (cost.dim(0), cost.dim(1));
        Ok(TransportState {
            cost,
            eps,
            log_k,
            log_a: vec![0.0; n],
            log_b: vec![0.0; m],
            iterations,
            trajectory: Vec::with_capacity(iterations),
        })
    }

    pub fn cost(&self) -> &Tensor {
        &self.cost
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn log_a(&self) -> &[f64] {
        &self.log_a
    }

    pub fn log_b(&self) -> &[f64] {
        &self.log_b
    }

    pub fn log_kernel(&self) -> &Tensor {
        &self.log_k
    }

    fn n(&self) -> usize {
        self.cost.dim(0)
    }

    fn m(&self) -> usize {
        self.cost.dim(1)
    }

    /// One `a` update followed by one `b` update.
    fn step(&mut self) -> Result<()> {
        let (n, m) = (self.n(), self.m());
        let lk = self.log_k.data();
        let mut buf = vec![0.0; n.max(m)];
        for i in 0..n {
            for j in 0..m {
                buf[j] = lk[i * m + j] + self.log_b[j];
            }
            self.log_a[i] = -logsumexp_slice(&buf[..m]);
        }
        for j in 0..m {
            for i in 0..n {
                buf[i] = lk[i * m + j] + self.log_a[i];
            }
            self.log_b[j] = -logsumexp_slice(&buf[..n]);
        }
        if self
            .log_a
            .iter()
            .chain(&self.log_b)
            .any(|v| !v.is_finite())
        {
            return Err(Error::non_finite(format!(
                "Sinkhorn potentials (cost/ε scale mismatch, ε = {})",
                self.eps
            )));
        }
        self.trajectory
            .push((self.log_a.clone(), self.log_b.clone()));
        Ok(())
    }

    /// Transport plan `P_ij = a_i K_ij b_j`.
    pub fn plan(&self) -> Tensor {
        let m = self.m();
        let lk = self.log_k.data();
        Tensor::from_fn(&[self.n(), m], |k| {
            (self.log_a[k / m] + lk[k] + self.log_b[k % m]).exp()
        })
    }

    /// `(1/(nm)) · aᵀ (K ⊙ C) b`.
    pub fn transport_cost(&self) -> f64 {
        let (n, m) = (self.n(), self.m());
        let plan = self.plan();
        let total: f64 = plan
            .data()
            .iter()
            .zip(self.cost.data())
            .map(|(p, c)| p * c)
            .sum();
        total / (n * m) as f64
    }

    /// `‖P 1_m − 1_n‖_∞`
    pub fn row_residual(&self) -> f64 {
        let plan = self.plan();
        (0..self.n())
            .map(|i| (plan.row(i).iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// `‖Pᵀ 1_n − 1_m‖_∞`
    pub fn col_residual(&self) -> f64 {
        let plan = self.plan();
        let (n, m) = (self.n(), self.m());
        (0..m)
            .map(|j| ((0..n).map(|i| plan.at2(i, j)).sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Gradient of `transport_cost` with respect to the cost matrix, by
    /// reverse mode through every recorded iteration (ε held constant).
    pub fn transport_cost_grad(&self) -> Result<Tensor> {
        if self.trajectory.len() != self.iterations {
            return Err(Error::invalid("transport_cost_grad needs a completed run"));
        }
        let (n, m) = (self.n(), self.m());
        let nm = (n * m) as f64;
        let lk = self.log_k.data();
        let c = self.cost.data();

        let plan = self.plan();
        let mut grad_c: Vec<f64> = plan.data().iter().map(|p| p / nm).collect();
        let mut grad_lk: Vec<f64> = plan
            .data()
            .iter()
            .zip(c)
            .map(|(p, cv)| p * cv / nm)
            .collect();
        let mut bar_f = vec![0.0; n];
        let mut bar_g = vec![0.0; m];
        for i in 0..n {
            for j in 0..m {
                let q = grad_lk[i * m + j];
                bar_f[i] += q;
                bar_g[j] += q;
            }
        }

        let zeros_m = vec![0.0; m];
        for l in (0..self.iterations).rev() {
            let (f_l, g_l) = &self.trajectory[l];
            let g_prev: &[f64] = if l == 0 { &zeros_m } else { &self.trajectory[l - 1].1 };

            // g_l = -LSE_i(logK_ij + f_l,i)
            for i in 0..n {
                let mut acc = 0.0;
                for j in 0..m {
                    let s = (lk[i * m + j] + f_l[i] + g_l[j]).exp();
                    let w = bar_g[j] * s;
                    acc += w;
                    grad_lk[i * m + j] -= w;
                }
                bar_f[i] -= acc;
            }
            // f_l = -LSE_j(logK_ij + g_{l-1},j)
            let mut next_g = vec![0.0; m];
            for i in 0..n {
                for j in 0..m {
                    let t = (lk[i * m + j] + g_prev[j] + f_l[i]).exp();
                    let w = bar_f[i] * t;
                    next_g[j] -= w;
                    grad_lk[i * m + j] -= w;
                }
            }
            bar_g = next_g;
            bar_f.iter_mut().for_each(|v| *v = 0.0);
        }

        for (gc, gl) in grad_c.iter_mut().zip(&grad_lk) {
            *gc -= gl / self.eps;
        }
        let t = Tensor::new(&[n, m], grad_c)?;
        Ok(t)
    }
}

/// Run the state's full iteration budget from `b₀ = 1`.
pub fn sinkhorn_iterate(mut state: TransportState) -> Result<TransportState> {
    state.log_a.iter_mut().for_each(|v| *v = 0.0);
    state.log_b.iter_mut().for_each(|v| *v = 0.0);
    state.trajectory.clear();
    for _ in 0..state.iterations {
        state.step()?;
    }
    Ok(state)
}

/// Run Sinkhorn on the cost between `p` and `q`.
pub fn solve(p: &Measure, q: &Measure, eps: f64, budget: usize) -> Result<TransportState> {
    sinkhorn_iterate(TransportState::new(cost_matrix(p, q)?, eps, budget)?)
}

/// Normalized regularized transport value `W_ε(P, Q)`.
pub fn regularized_ot(p: &Measure, q: &Measure, eps: f64, budget: usize) -> Result<f64> {
    Ok(solve(p, q, eps, budget)?.transport_cost())
}

/// `W_ε` together with its gradients with respect to the points of both measures.
pub fn regularized_ot_with_grads(
    p: &Measure,
    q: &Measure,
    eps: f64,
    budget: usize,
) -> Result<(f64, Tensor, Tensor)> {
    let state = solve(p, q, eps, budget)?;
    let gc = state.transport_cost_grad()?;
    let (gp, gq) = cost_grad_to_points(p, q, &gc);
    Ok((state.transport_cost(), gp, gq))
}

// C_ij = ‖x_i − y_j‖² ⇒ ∂/∂x_i = 2 Σ_j Ḡ_ij (x_i − y_j), ∂/∂y_j = −2 Σ_i Ḡ_ij (x_i − y_j)
fn cost_grad_to_points(p: &Measure, q: &Measure, gc: &Tensor) -> (Tensor, Tensor) {
    let (n, m, d) = (p.len(), q.len(), p.dim());
    let mut gp = Tensor::zeros(&[n, d]);
    let mut gq = Tensor::zeros(&[m, d]);
    for i in 0..n {
        let x = p.point(i);
        for j in 0..m {
            let y = q.point(j);
            let w = 2.0 * gc.at2(i, j);
            for k in 0..d {
                let diff = w * (x[k] - y[k]);
                gp.data_mut()[i * d + k] += diff;
                gq.data_mut()[j * d + k] -= diff;
            }
        }
    }
    (gp, gq)
}

/// Cross term of the debiased divergence: `W_ε` averaged over both argument
/// orders, so the result is symmetric at any finite budget.
fn symmetric_cross(p: &Measure, q: &Measure, eps: f64, budget: usize) -> Result<(f64, Tensor, Tensor)> {
    let (w_pq, gp1, gq1) = regularized_ot_with_grads(p, q, eps, budget)?;
    let (w_qp, gq2, gp2) = regularized_ot_with_grads(q, p, eps, budget)?;
    let mut gp = gp1;
    gp.axpy(1.0, &gp2)?;
    gp.scale(0.5);
    let mut gq = gq1;
    gq.axpy(1.0, &gq2)?;
    gq.scale(0.5);
    Ok((0.5 * (w_pq + w_qp), gp, gq))
}

/// Debiased Sinkhorn divergence `2 W_ε(P,Q) − W_ε(P,P) − W_ε(Q,Q)`.
pub fn sinkhorn_divergence(p: &Measure, q: &Measure, eps: f64, budget: usize) -> Result<f64> {
    let w_pq = 0.5 * (regularized_ot(p, q, eps, budget)? + regularized_ot(q, p, eps, budget)?);
    let w_pp = regularized_ot(p, p, eps, budget)?;
    let w_qq = regularized_ot(q, q, eps, budget)?;
    Ok(2.0 * w_pq - w_pp - w_qq)
}

/// Divergence value plus gradients with respect to the points of `p` and `q`.
pub fn sinkhorn_divergence_with_grads(
    p: &Measure,
    q: &Measure,
    eps: f64,
    budget: usize,
) -> Result<(f64, Tensor, Tensor)> {
    let (w_pq, mut gp, mut gq) = symmetric_cross(p, q, eps, budget)?;
    gp.scale(2.0);
    gq.scale(2.0);
    let (w_pp, a, b) = regularized_ot_with_grads(p, p, eps, budget)?;
    gp.axpy(-1.0, &a)?;
    gp.axpy(-1.0, &b)?;
    let (w_qq, a, b) = regularized_ot_with_grads(q, q, eps, budget)?;
    gq.axpy(-1.0, &a)?;
    gq.axpy(-1.0, &b)?;
    Ok((2.0 * w_pq - w_pp - w_qq, gp, gq))
}

/// Gradient of the divergence with respect to the points of `p`.
pub fn sinkhorn_divergence_grad(p: &Measure, q: &Measure, eps: f64, budget: usize) -> Result<Tensor> {
    Ok(sinkhorn_divergence_with_grads(p, q, eps, budget)?.1)
}

/// How the batch ε estimate measures pairwise distance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EpsMetric {
    /// Mean entry of the squared-Euclidean cost matrix.
    #[default]
    SquaredEuclidean,
    /// Mean unsquared Euclidean distance.
    Euclidean,
}

/// Mean pairwise distance between a source and a target batch.
pub fn eps_estimate_batch(source: &Measure, target: &Measure, metric: EpsMetric) -> Result<f64> {
    let cost = cost_matrix(source, target)?;
    let n = cost.len() as f64;
    Ok(match metric {
        EpsMetric::SquaredEuclidean => cost.sum() / n,
        EpsMetric::Euclidean => cost.data().iter().map(|c| c.sqrt()).sum::<f64>() / n,
    })
}

/// Running ε: `ε_{k+1} = ρ ε_k + (1 − ρ) ε̂_k`, seeded by the first estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpsState {
    eps: f64,
    momentum: f64,
    initialized: bool,
}

impl EpsState {
    pub fn new(momentum: f64) -> Result<Self> {
        if !(momentum > 0.0 && momentum < 1.0) {
            return Err(Error::invalid(format!("ε momentum must lie in (0,1), got {momentum}")));
        }
        Ok(EpsState {
            eps: 0.0,
            momentum,
            initialized: false,
        })
    }

    /// A state that already holds `eps`.
    pub fn with_value(eps: f64, momentum: f64) -> Result<Self> {
        let mut s = Self::new(momentum)?;
        if !(eps > 0.0) {
            return Err(Error::invalid("initial ε must be positive"));
        }
        s.eps = eps;
        s.initialized = true;
        Ok(s)
    }

    pub fn eps(&self) -> Option<f64> {
        self.initialized.then_some(self.eps)
    }

    pub fn momentum(&self) -> f64 {
        self.momentum
    }

    pub fn is_initialized(&self) -> bool {
        self.initialized
    }

    /// Fold in a batch estimate and return the new ε. Estimates are floored
    /// at `1e-6 · ε_k` once a running value exists.
    pub fn update(&mut self, estimate: f64) -> Result<f64> {
        if !estimate.is_finite() {
            return Err(Error::non_finite("ε estimate"));
        }
        let est = if self.initialized {
            estimate.max(1e-6 * self.eps)
        } else {
            estimate
        };
        if est <= 0.0 {
            return Err(Error::invalid(format!(
                "ε estimate {estimate} is not positive (degenerate batch)"
            )));
        }
        self.eps = if self.initialized {
            self.momentum * self.eps + (1.0 - self.momentum) * est
        } else {
            est
        };
        self.initialized = true;
        Ok(self.eps)
    }
}

/// Exact unregularized transport between equal-size uniform measures by
/// enumerating permutations, on the same `1/(nm)` scale as `regularized_ot`.
pub fn exact_ot_bruteforce(p: &Measure, q: &Measure) -> Result<f64> {
    let n = p.len();
    if q.len() != n {
        return Err(Error::invalid(format!("brute force needs n = m, got {n} and {}", q.len())));
    }
    if n > 8 {
        return Err(Error::invalid(format!("brute force limited to n ≤ 8, got {n}")));
    }
    let c = cost_matrix(p, q)?;
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = f64::INFINITY;
    permute(&mut perm, 0, &mut |pi| {
        let total: f64 = pi.iter().enumerate().map(|(i, &j)| c.at2(i, j)).sum();
        best = best.min(total);
    });
    Ok(best / (n * n) as f64)
}

fn permute(v: &mut [usize], k: usize, visit: &mut impl FnMut(&[usize])) {
    if k == v.len() {
        visit(v);
        return;
    }
    for i in k..v.len() {
        v.swap(k, i);
        permute(v, k + 1, visit);
        v.swap(k, i);
    }
}

/// Outcome of `oracle_suite`.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleReport {
    pub instances: usize,
    /// Instances whose regularized cost is off the exact optimum by more than 5%.
    pub ot_failures: usize,
    pub worst_relative_error: f64,
    pub min_divergence: f64,
    pub max_asymmetry: f64,
    pub max_self_distance: f64,
}

impl OracleReport {
    pub fn ot_ok(&self) -> bool {
        self.ot_failures == 0
    }

    pub fn nonnegative_ok(&self) -> bool {
        self.min_divergence >= -1e-8
    }

    pub fn symmetry_ok(&self) -> bool {
        self.max_asymmetry <= 1e-9
    }

    pub fn self_distance_ok(&self) -> bool {
        self.max_self_distance <= 1e-9
    }

    pub fn passed(&self) -> bool {
        self.ot_ok() && self.nonnegative_ok() && self.symmetry_ok() && self.self_distance_ok()
    }
}

/// Random instances with `n = m ∈ 2..=5`, `d ∈ 1..=4`, solved at
/// `ε = 1e-3 · mean cost` and compared against `exact_ot_bruteforce`.
pub fn oracle_suite(seed: u64, instances: usize, budget: usize) -> Result<OracleReport> {
    let mut rng = crate::rng::Rng::new(seed);
    let mut rep = OracleReport {
        instances,
        ot_failures: 0,
        worst_relative_error: 0.0,
        min_divergence: f64::INFINITY,
        max_asymmetry: 0.0,
        max_self_distance: 0.0,
    };
    for _ in 0..instances {
        let n = 2 + rng.below(4);
        let d = 1 + rng.below(4);
        let p = Measure::new(Tensor::from_fn(&[n, d], |_| rng.normal()))?;
        let q = Measure::new(Tensor::from_fn(&[n, d], |_| rng.normal()))?;
        let c = cost_matrix(&p, &q)?;
        let eps = 1e-3 * c.sum() / c.len() as f64;
        let exact = exact_ot_bruteforce(&p, &q)?;
        let approx = regularized_ot(&p, &q, eps, budget)?;
        let rel = (approx - exact).abs() / exact.abs().max(f64::MIN_POSITIVE);
        rep.worst_relative_error = rep.worst_relative_error.max(rel);
        if rel > 0.05 {
            rep.ot_failures += 1;
        }
        let pq = sinkhorn_divergence(&p, &q, eps, budget)?;
        let qp = sinkhorn_divergence(&q, &p, eps, budget)?;
        rep.min_divergence = rep.min_divergence.min(pq).min(qp);
        rep.max_asymmetry = rep.max_asymmetry.max((pq - qp).abs());
        rep.max_self_distance = rep.max_self_distance.max(sinkhorn_divergence(&p, &p, eps, budget)?.abs());
    }
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn random_measure(n: usize, d: usize, scale: f64, rng: &mut Rng) -> Measure {
        Measure::new(Tensor::from_fn(&[n, d], |_| scale * rng.normal())).unwrap()
    }

    fn pt(rows: &[&[f64]]) -> Measure {
        Measure::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn cost_matrix_cases() {
        let a = pt(&[&[1.0, 2.0]]);
        assert_eq!(cost_matrix(&a, &a).unwrap().data(), &[0.0]);
        let c = cost_matrix(&pt(&[&[0.0]]), &pt(&[&[3.0]])).unwrap();
        assert_eq!(c.data(), &[9.0]);
        assert!(cost_matrix(&pt(&[&[0.0]]), &pt(&[&[0.0, 1.0]])).is_err());
    }

    #[test]
    fn cost_matrix_matches_pairwise_loop() {
        let mut rng = Rng::new(11);
        let p = random_measure(4, 3, 1.0, &mut rng);
        let q = random_measure(5, 3, 1.0, &mut rng);
        let c = cost_matrix(&p, &q).unwrap();
        for i in 0..4 {
            for j in 0..5 {
                let mut s = 0.0;
                for k in 0..3 {
                    s += (p.point(i)[k] - q.point(j)[k]).powi(2);
                }
                assert!((c.at2(i, j) - s).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn measure_validation() {
        assert!(Measure::new(Tensor::zeros(&[0, 2])).is_err());
        assert!(Measure::new(Tensor::zeros(&[3])).is_err());
    }

    #[test]
    fn single_point_plan_is_forced() {
        let s = solve(&pt(&[&[0.0]]), &pt(&[&[3.0]]), 2.0, 1).unwrap();
        let k = (-9.0f64 / 2.0).exp();
        assert!((s.log_a()[0] - (1.0 / k).ln()).abs() < 1e-12);
        assert!((s.plan().data()[0] - 1.0).abs() < 1e-12);
        assert!((s.transport_cost() - 9.0).abs() < 1e-12);
    }

    #[test]
    fn symmetric_cost_gives_symmetric_scalings() {
        let c = 1.7;
        let cost = Tensor::new(&[2, 2], vec![0.0, c, c, 0.0]).unwrap();
        let mut st = TransportState::new(cost, 0.5, 1).unwrap();
        for _ in 0..6 {
            st.step().unwrap();
            assert!((st.log_a()[0] - st.log_a()[1]).abs() < 1e-15);
            assert!((st.log_b()[0] - st.log_b()[1]).abs() < 1e-15);
        }
    }

    #[test]
    fn log_domain_matches_direct_scaling() {
        let mut rng = Rng::new(12);
        let cost = Tensor::from_fn(&[5, 5], |_| rng.uniform() * 3.0);
        let st = sinkhorn_iterate(TransportState::new(cost.clone(), 1.0, 10).unwrap()).unwrap();
        // direct arithmetic on a, b, K
        let k: Vec<f64> = cost.data().iter().map(|c| (-c).exp()).collect();
        let mut a = vec![0.0; 5];
        let mut b = vec![1.0; 5];
        for _ in 0..10 {
            for i in 0..5 {
                a[i] = 1.0 / (0..5).map(|j| k[i * 5 + j] * b[j]).sum::<f64>();
            }
            for j in 0..5 {
                b[j] = 1.0 / (0..5).map(|i| k[i * 5 + j] * a[i]).sum::<f64>();
            }
        }
        for i in 0..5 {
            assert!((st.log_a()[i].exp() - a[i]).abs() <= 1e-10 * a[i].abs().max(1.0));
            assert!((st.log_b()[i].exp() - b[i]).abs() <= 1e-10 * b[i].abs().max(1.0));
        }
        let direct: f64 = (0..25).map(|e| a[e / 5] * k[e] * b[e % 5] * cost.data()[e]).sum::<f64>() / 25.0;
        assert!((st.transport_cost() - direct).abs() < 1e-10);
    }

    #[test]
    fn state_rejects_bad_eps_and_budget() {
        let c = Tensor::zeros(&[1, 1]);
        assert!(TransportState::new(c.clone(), 0.0, 10).is_err());
        assert!(TransportState::new(c.clone(), -1.0, 10).is_err());
        assert!(TransportState::new(c, 1.0, 0).is_err());
    }

    #[test]
    fn tiny_eps_reports_non_finite() {
        // exp(-C/ε) with C/ε ≈ 1e310 overflows the log kernel itself
        let cost = Tensor::new(&[1, 2], vec![1e300, 1e300]).unwrap();
        assert!(TransportState::new(cost, 1e-20, 10).is_err());
    }

    #[test]
    fn regularized_ot_trivial_values() {
        let a = pt(&[&[0.5, -1.0]]);
        assert_eq!(regularized_ot(&a, &a, 1.0, 10).unwrap(), 0.0);
        let v = regularized_ot(&pt(&[&[0.0]]), &pt(&[&[3.0]]), 1.0, 10).unwrap();
        assert!((v - 9.0).abs() < 1e-12);
    }

    #[test]
    fn regularized_ot_small_eps_near_assignment() {
        let mut rng = Rng::new(13);
        let p = random_measure(4, 2, 1.0, &mut rng);
        let q = random_measure(4, 2, 1.0, &mut rng);
        let exact = exact_ot_bruteforce(&p, &q).unwrap();
        let v = regularized_ot(&p, &q, 1e-3, 2000).unwrap();
        assert!((v - exact).abs() <= 0.05 * exact, "{v} vs {exact}");
    }

    #[test]
    fn final_update_fixes_column_marginals() {
        let mut rng = Rng::new(14);
        for budget in [1, 3, 10] {
            let p = random_measure(5, 3, 1.0, &mut rng);
            let q = random_measure(5, 3, 1.0, &mut rng);
            let st = solve(&p, &q, 1.0, budget).unwrap();
            assert!(st.col_residual() <= 1e-9);
        }
    }

    #[test]
    fn row_residual_shrinks_with_budget() {
        let mut rng = Rng::new(15);
        for _ in 0..20 {
            let p = random_measure(5, 2, 1.0, &mut rng);
            let q = random_measure(5, 2, 1.0, &mut rng);
            let mut prev = f64::INFINITY;
            for budget in 1..=12 {
                let r = solve(&p, &q, 1.0, budget).unwrap().row_residual();
                assert!(r <= prev + 1e-12, "residual rose at L = {budget}");
                prev = r;
            }
        }
    }

    #[test]
    fn divergence_self_and_symmetry() {
        let mut rng = Rng::new(16);
        let p = random_measure(6, 3, 1.0, &mut rng);
        let q = random_measure(5, 3, 1.0, &mut rng);
        assert!(sinkhorn_divergence(&p, &p, 0.7, 10).unwrap().abs() <= 1e-9);
        let a = sinkhorn_divergence(&p, &q, 0.7, 10).unwrap();
        let b = sinkhorn_divergence(&q, &p, 0.7, 10).unwrap();
        assert!((a - b).abs() <= 1e-9);
        assert!(a >= -1e-8);
    }

    #[test]
    fn divergence_separated_clouds_dominated_by_cross_term() {
        let mut rng = Rng::new(17);
        let p = random_measure(32, 2, 1.0, &mut rng);
        let q = random_measure(32, 2, 1.0, &mut rng).translated(&[10.0, 0.0]).unwrap();
        let div = sinkhorn_divergence(&p, &q, 1.0, 10).unwrap();
        let cross = 0.5 * (regularized_ot(&p, &q, 1.0, 10).unwrap() + regularized_ot(&q, &p, 1.0, 10).unwrap());
        assert!(div > 0.0);
        assert!((div - 2.0 * cross).abs() <= 0.1 * 2.0 * cross);
    }

    #[test]
    fn gradient_closed_form_single_points() {
        let (x, y) = (1.3, -0.4);
        let g = sinkhorn_divergence_grad(&pt(&[&[x]]), &pt(&[&[y]]), 0.8, 10).unwrap();
        assert!((g.data()[0] - 4.0 * (x - y)).abs() < 1e-10);
    }

    #[test]
    fn gradient_vanishes_at_coincidence() {
        let mut rng = Rng::new(18);
        let p = random_measure(5, 3, 1.0, &mut rng);
        let g = sinkhorn_divergence_grad(&p, &p, 0.6, 10).unwrap();
        assert!(g.norm() < 1e-6, "{}", g.norm());
    }

    fn fd_check(p: &Measure, q: &Measure, eps: f64, budget: usize) {
        let (_, gp, gq) = sinkhorn_divergence_with_grads(p, q, eps, budget).unwrap();
        let h = 1e-5;
        let f = |p: &Measure, q: &Measure| sinkhorn_divergence(p, q, eps, budget).unwrap();
        for (which, grad) in [(0, &gp), (1, &gq)] {
            let base = if which == 0 { p } else { q };
            for idx in 0..base.points().len() {
                let mut plus = base.points().clone();
                plus.data_mut()[idx] += h;
                let mut minus = base.points().clone();
                minus.data_mut()[idx] -= h;
                let (plus, minus) = (Measure::new(plus).unwrap(), Measure::new(minus).unwrap());
                let fd = if which == 0 {
                    (f(&plus, q) - f(&minus, q)) / (2.0 * h)
                } else {
                    (f(p, &plus) - f(p, &minus)) / (2.0 * h)
                };
                let an = grad.data()[idx];
                let rel = (fd - an).abs() / an.abs().max(fd.abs()).max(1e-3);
                assert!(rel < 1e-4, "idx {idx}: fd {fd} vs analytic {an}");
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = Rng::new(19);
        fd_check(&random_measure(4, 3, 1.0, &mut rng), &random_measure(5, 3, 1.0, &mut rng), 0.9, 10);
        fd_check(&random_measure(3, 2, 1.0, &mut rng), &random_measure(3, 2, 1.0, &mut rng), 0.3, 10);
    }

    #[test]
    fn eps_estimate_cases() {
        let z = pt(&[&[0.0]]);
        assert_eq!(eps_estimate_batch(&z, &z, EpsMetric::SquaredEuclidean).unwrap(), 0.0);
        let t = pt(&[&[3.0]]);
        assert_eq!(eps_estimate_batch(&z, &t, EpsMetric::SquaredEuclidean).unwrap(), 9.0);
        assert_eq!(eps_estimate_batch(&z, &t, EpsMetric::Euclidean).unwrap(), 3.0);
        let mut rng = Rng::new(20);
        let p = random_measure(6, 4, 1.0, &mut rng);
        let q = random_measure(7, 4, 1.0, &mut rng);
        let mut s = 0.0;
        for i in 0..6 {
            for j in 0..7 {
                s += p.point(i).iter().zip(q.point(j)).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            }
        }
        let est = eps_estimate_batch(&p, &q, EpsMetric::SquaredEuclidean).unwrap();
        assert!((est - s / 42.0).abs() < 1e-12);
    }

    #[test]
    fn eps_update_arithmetic() {
        let mut s = EpsState::with_value(1.0, 0.9).unwrap();
        assert!((s.update(2.0).unwrap() - 1.1).abs() < 1e-15);
        let mut s = EpsState::with_value(3.0, 0.9).unwrap();
        assert_eq!(s.update(3.0).unwrap(), 3.0);
        let mut fresh = EpsState::new(0.9).unwrap();
        assert_eq!(fresh.eps(), None);
        assert_eq!(fresh.update(4.0).unwrap(), 4.0);
        assert!(EpsState::new(0.9).unwrap().update(0.0).is_err());
        assert!(EpsState::new(1.0).is_err());
    }

    #[test]
    fn eps_update_floor() {
        let mut s = EpsState::with_value(1.0, 0.9).unwrap();
        let e = s.update(0.0).unwrap();
        assert!((e - (0.9 + 0.1 * 1e-6)).abs() < 1e-15);
    }

    #[test]
    fn eps_update_geometric_closed_form() {
        let mut s = EpsState::with_value(1.0, 0.9).unwrap();
        let mut prev = 1.0;
        for k in 1..=50 {
            let e = s.update(5.0).unwrap();
            assert!((e - (5.0 - 4.0 * 0.9f64.powi(k))).abs() < 1e-12);
            assert!(e > prev);
            prev = e;
        }
    }

    #[test]
    fn bruteforce_cases() {
        let a = pt(&[&[1.0, 1.0]]);
        let b = pt(&[&[2.0, 3.0]]);
        assert_eq!(exact_ot_bruteforce(&a, &b).unwrap(), 5.0);
        let p = pt(&[&[0.0], &[1.0]]);
        let q = pt(&[&[1.0], &[0.0]]);
        assert_eq!(exact_ot_bruteforce(&p, &q).unwrap(), 0.0);
        assert!(exact_ot_bruteforce(&p, &a).is_err());
        let mut rng = Rng::new(21);
        let big = random_measure(9, 1, 1.0, &mut rng);
        assert!(exact_ot_bruteforce(&big, &big).is_err());
    }

    #[test]
    fn bruteforce_matches_independent_search() {
        // independent check: bitmask dynamic program over assignments
        let mut rng = Rng::new(22);
        for _ in 0..10 {
            let p = random_measure(5, 2, 1.0, &mut rng);
            let q = random_measure(5, 2, 1.0, &mut rng);
            let c = cost_matrix(&p, &q).unwrap();
            let n = 5;
            let mut dp = vec![f64::INFINITY; 1 << n];
            dp[0] = 0.0;
            for mask in 0..(1usize << n) {
                let i = mask.count_ones() as usize;
                if i == n || dp[mask].is_infinite() {
                    continue;
                }
                for j in 0..n {
                    if mask & (1 << j) == 0 {
                        let nm = mask | (1 << j);
                        dp[nm] = dp[nm].min(dp[mask] + c.at2(i, j));
                    }
                }
            }
            let expect = dp[(1 << n) - 1] / 25.0;
            assert!((exact_ot_bruteforce(&p, &q).unwrap() - expect).abs() < 1e-12);
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn measure_strategy(max_n: usize, d: usize) -> impl Strategy<Value = Measure> {
            (1..=max_n).prop_flat_map(move |n| {
                proptest::collection::vec(-3.0f64..3.0, n * d)
                    .prop_map(move |v| Measure::new(Tensor::new(&[n, d], v).unwrap()).unwrap())
            })
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn divergence_nonnegative_and_symmetric(p in measure_strategy(6, 2), q in measure_strategy(6, 2), eps in 0.3f64..3.0) {
                let a = sinkhorn_divergence(&p, &q, eps, 10).unwrap();
                let b = sinkhorn_divergence(&q, &p, eps, 10).unwrap();
                prop_assert!(a >= -1e-8);
                prop_assert!((a - b).abs() <= 1e-9);
                prop_assert!(sinkhorn_divergence(&p, &p, eps, 10).unwrap().abs() <= 1e-9);
            }

            #[test]
            fn translation_leaves_ot_unchanged(p in measure_strategy(5, 2), q in measure_strategy(5, 2), dx in -5.0f64..5.0, dy in -5.0f64..5.0) {
                let a = regularized_ot(&p, &q, 1.0, 10).unwrap();
                let b = regularized_ot(&p.translated(&[dx, dy]).unwrap(), &q.translated(&[dx, dy]).unwrap(), 1.0, 10).unwrap();
                prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
            }
        }
    }
}
