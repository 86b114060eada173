//! PANOC for `min f(z)` over a box.
//!
//! Each iteration takes a forward-backward (projected gradient) step, builds
//! an L-BFGS direction on the fixed-point residual and line-searches the
//! convex combination of the two against the forward-backward envelope
//!
//! ```text
//! φ_γ(z) = f(z) + ⟨∇f(z), z̄ - z⟩ + ‖z̄ - z‖² / (2γ),   z̄ = Π(z - γ∇f(z)).
//! ```
//!
//! The step size `γ` starts from a finite-difference Lipschitz estimate and is
//! halved whenever the descent lemma fails at the current iterate.

use std::time::{Duration, Instant};

use super::lbfgs::Lbfgs;
use super::{project_box, DecisionBox};
use crate::error::{Error, Result};

const GAMMA_L_COEFF: f64 = 0.95;
const MAX_LIPSCHITZ_UPDATES: usize = 20;
const MAX_LINESEARCH: usize = 10;
const LIPSCHITZ_EPSILON: f64 = 1e-6;
const LIPSCHITZ_DELTA: f64 = 1e-6;
const MIN_L_ESTIMATE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PanocStatus {
    Converged,
    MaxIterations,
    TimeBudget,
}

#[derive(Debug, Clone)]
pub struct PanocOptions {
    pub fpr_tol: f64,
    pub max_iters: usize,
    pub lbfgs_memory: usize,
    /// No iteration is started unless it is expected to finish before this,
    /// judging by the slowest iteration so far.
    pub deadline: Option<Instant>,
    /// Record `(φ before, φ after, γ)` for each accepted step.
    pub record_envelope: bool,
}

impl Default for PanocOptions {
    fn default() -> Self {
        Self {
            fpr_tol: 1e-3,
            max_iters: 1000,
            lbfgs_memory: 10,
            deadline: None,
            record_envelope: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PanocResult {
    /// Final iterate, inside the box.
    pub z: Vec<f64>,
    pub cost: f64,
    /// `‖z - Π(z - γ∇f(z))‖ / γ` at the returned point.
    pub fpr_norm: f64,
    pub gamma: f64,
    pub iters: usize,
    pub status: PanocStatus,
    pub envelope_trace: Vec<(f64, f64, f64)>,
}

impl PanocResult {
    pub fn converged(&self) -> bool {
        self.status == PanocStatus::Converged
    }
}

/// Evaluation of `f` and `∇f` at a point together with its forward-backward step.
struct Point {
    z: Vec<f64>,
    f: f64,
    grad: Vec<f64>,
    z_bar: Vec<f64>,
    /// `z - z̄`
    res: Vec<f64>,
}

fn norm_sq(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

struct Engine<'a, F> {
    f: F,
    bounds: &'a DecisionBox,
}

impl<F> Engine<'_, F>
where
    F: FnMut(&[f64], &mut [f64]) -> Result<f64>,
{
    fn eval(&mut self, z: Vec<f64>, gamma: f64) -> Result<Point> {
        let mut grad = vec![0.0; z.len()];
        let f = (self.f)(&z, &mut grad)?;
        if !f.is_finite() {
            return Err(Error::NonFinite("objective"));
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("gradient"));
        }
        let mut pt = Point {
            z,
            f,
            grad,
            z_bar: Vec::new(),
            res: Vec::new(),
        };
        self.forward_backward(&mut pt, gamma);
        Ok(pt)
    }

    fn forward_backward(&self, pt: &mut Point, gamma: f64) {
        let mut z_bar: Vec<f64> = pt.z.iter().zip(&pt.grad).map(|(z, g)| z - gamma * g).collect();
        project_box(&mut z_bar, self.bounds);
        pt.res = pt.z.iter().zip(&z_bar).map(|(a, b)| a - b).collect();
        pt.z_bar = z_bar;
    }

    fn value(&mut self, z: &[f64]) -> Result<f64> {
        let mut scratch = vec![0.0; z.len()];
        let f = (self.f)(z, &mut scratch)?;
        if f.is_finite() {
            Ok(f)
        } else {
            Err(Error::NonFinite("objective"))
        }
    }

    fn envelope(pt: &Point, gamma: f64) -> f64 {
        pt.f - dot(&pt.grad, &pt.res) + norm_sq(&pt.res) / (2.0 * gamma)
    }
}

/// Minimises a smooth function over `bounds` starting from `z0`.
///
/// `f(z, grad)` must return the objective and write the gradient.
pub fn panoc_solve<F>(
    f: F,
    bounds: &DecisionBox,
    z0: &[f64],
    opts: &PanocOptions,
) -> Result<PanocResult>
where
    F: FnMut(&[f64], &mut [f64]) -> Result<f64>,
{
    if z0.len() != bounds.lower.len() {
        return Err(Error::Dimension {
            expected: bounds.lower.len(),
            got: z0.len(),
        });
    }
    let mut eng = Engine { f, bounds };
    let mut lbfgs = Lbfgs::new(opts.lbfgs_memory);
    let mut trace = Vec::new();

    let mut z = z0.to_vec();
    project_box(&mut z, bounds);

    // Lipschitz estimate from a finite-difference probe
    let mut g0 = vec![0.0; z.len()];
    (eng.f)(&z, &mut g0)?;
    let delta: Vec<f64> = z
        .iter()
        .map(|zi| (LIPSCHITZ_EPSILON * zi.abs()).max(LIPSCHITZ_DELTA))
        .collect();
    let z_probe: Vec<f64> = z.iter().zip(&delta).map(|(a, b)| a + b).collect();
    let mut g1 = vec![0.0; z.len()];
    (eng.f)(&z_probe, &mut g1)?;
    let dg: Vec<f64> = g1.iter().zip(&g0).map(|(a, b)| a - b).collect();
    let mut lip = (norm_sq(&dg).sqrt() / norm_sq(&delta).sqrt()).max(MIN_L_ESTIMATE);
    if !lip.is_finite() {
        return Err(Error::NonFinite("gradient"));
    }
    let mut gamma = GAMMA_L_COEFF / lip;

    let mut cur = eng.eval(z, gamma)?;
    let mut prev: Option<(Vec<f64>, Vec<f64>)> = None;
    let mut iters = 0;

    let mut slowest = Duration::ZERO;
    let mut iter_start = Instant::now();
    loop {
        // shrink γ until the descent lemma holds at the current iterate
        let mut f_bar = eng.value(&cur.z_bar)?;
        for _ in 0..MAX_LIPSCHITZ_UPDATES {
            let bound = cur.f - dot(&cur.grad, &cur.res)
                + 0.5 * lip * norm_sq(&cur.res)
                + 1e-12 * (1.0 + cur.f.abs());
            if f_bar <= bound {
                break;
            }
            lip *= 2.0;
            gamma /= 2.0;
            lbfgs.reset();
            prev = None;
            eng.forward_backward(&mut cur, gamma);
            f_bar = eng.value(&cur.z_bar)?;
        }

        let res_norm = norm_sq(&cur.res).sqrt();
        let fpr = res_norm / gamma;
        let status = if fpr <= opts.fpr_tol {
            Some(PanocStatus::Converged)
        } else if iters >= opts.max_iters {
            Some(PanocStatus::MaxIterations)
        } else if opts.deadline.is_some_and(|d| Instant::now() + slowest >= d) {
            Some(PanocStatus::TimeBudget)
        } else {
            None
        };
        if let Some(status) = status {
            return Ok(PanocResult {
                z: cur.z,
                cost: cur.f,
                fpr_norm: fpr,
                gamma,
                iters,
                status,
                envelope_trace: trace,
            });
        }

        if let Some((z_prev, res_prev)) = prev.take() {
            let s: Vec<f64> = cur.z.iter().zip(&z_prev).map(|(a, b)| a - b).collect();
            let y: Vec<f64> = cur.res.iter().zip(&res_prev).map(|(a, b)| a - b).collect();
            lbfgs.update(&s, &y, fpr);
        }
        let mut dir = cur.res.clone();
        lbfgs.apply(&mut dir);

        let sigma = (1.0 - gamma * lip) / (4.0 * gamma);
        let fbe = Engine::<F>::envelope(&cur, gamma);
        let rhs = fbe - sigma * norm_sq(&cur.res);

        let mut tau = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_LINESEARCH {
            let mut cand: Vec<f64> = cur
                .z
                .iter()
                .zip(&cur.res)
                .zip(&dir)
                .map(|((z, r), d)| z - (1.0 - tau) * r - tau * d)
                .collect();
            project_box(&mut cand, bounds);
            let pt = eng.eval(cand, gamma)?;
            let phi = Engine::<F>::envelope(&pt, gamma);
            if phi <= rhs {
                accepted = Some((pt, phi));
                break;
            }
            tau /= 2.0;
        }
        let (next, phi_next) = match accepted {
            Some(a) => a,
            None => {
                // plain projected-gradient step
                let pt = eng.eval(cur.z_bar.clone(), gamma)?;
                let phi = Engine::<F>::envelope(&pt, gamma);
                (pt, phi)
            }
        };
        if opts.record_envelope {
            trace.push((fbe, phi_next, gamma));
        }
        prev = Some((std::mem::take(&mut cur.z), std::mem::take(&mut cur.res)));
        cur = next;
        iters += 1;
        let now = Instant::now();
        slowest = slowest.max(now - iter_start);
        iter_start = now;
    }
}
