//! Fixed-point iteration for d ln tau / d ln t = f(t, tau), its corrected
//! right-hand side under one rescaling step, and the extended iteration
//! whose antiderivative carries the cascade's closed-form level
//! corrections.
//!
//! Iterates live in log space on a grid uniform in ln t, anchored at t = 1:
//!
//!   ln tau_n(t) = ln tau_0 + integral_1^t f(s, tau_{n-1}(s)) d ln s
//!
//! Off-grid values of the previous iterate come from monotone cubic
//! interpolation, so every run is a deterministic function of its inputs.

use std::sync::Arc;

use crate::bigscale::BigReal;
use crate::cascade::{generalized_solution, CascadeTrace};
use crate::error::SflError;
use crate::genint::{level_corrections, Integrand};
use crate::quad;
use crate::Result;

/// Right-hand side f(t, tau) of the log-derivative equation.
#[derive(Clone)]
pub struct RhsField {
    pub f: Arc<dyn Fn(&BigReal, &BigReal) -> BigReal + Send + Sync>,
    pub name: String,
    /// Claimed C^k smoothness class; metadata only, never verified by
    /// high-order differentiation.
    pub smoothness: u32,
}

impl std::fmt::Debug for RhsField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RhsField")
            .field("name", &self.name)
            .field("smoothness", &self.smoothness)
            .finish()
    }
}

impl RhsField {
    pub fn new(
        name: impl Into<String>,
        f: impl Fn(&BigReal, &BigReal) -> BigReal + Send + Sync + 'static,
    ) -> Self {
        RhsField {
            f: Arc::new(f),
            name: name.into(),
            smoothness: 0,
        }
    }

    pub fn with_smoothness(mut self, k: u32) -> Self {
        self.smoothness = k;
        self
    }

    /// f = 1: the solution is tau_0 * t.
    pub fn constant_one() -> Self {
        RhsField::new("one", |t: &BigReal, _tau: &BigReal| BigReal::one(t.prec()))
    }

    /// f = tau: the quadratic case, solved by 1/(1 - ln t) from tau_0 = 1.
    pub fn proportional_to_tau() -> Self {
        RhsField::new("tau", |_t: &BigReal, tau: &BigReal| tau.clone())
    }

    /// f = t: the exponential case, solved by tau_0 * e^(t - 1).
    pub fn proportional_to_scale() -> Self {
        RhsField::new("t", |t: &BigReal, _tau: &BigReal| t.clone())
    }

    /// Built-in field by name, as accepted on the command line.
    pub fn builtin(name: &str) -> Option<Self> {
        match name {
            "one" => Some(RhsField::constant_one()),
            "tau" => Some(RhsField::proportional_to_tau()),
            "t" => Some(RhsField::proportional_to_scale()),
            _ => None,
        }
    }

    fn eval(&self, t: &BigReal, tau: &BigReal) -> BigReal {
        (self.f)(t, tau)
    }
}

/// Which antiderivative the run used.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PicardMode {
    Standard,
    Extended,
}

impl PicardMode {
    fn as_str(self) -> &'static str {
        match self {
            PicardMode::Standard => "standard",
            PicardMode::Extended => "extended",
        }
    }
}

/// A completed (or abandoned) fixed-point run.
///
/// `iterates[0]` is the constant initial grid ln tau_0; each later entry is
/// one application of the integral map. `sup_deltas[k]` is the grid sup-norm
/// move of iterate k+1, so its length equals `iterations_used`.
#[derive(Debug, Clone)]
pub struct PicardRun {
    /// Sample points of t, ascending.
    pub grid: Vec<BigReal>,
    /// ln tau per iterate, on the grid.
    pub iterates: Vec<Vec<BigReal>>,
    pub sup_deltas: Vec<BigReal>,
    pub converged: bool,
    pub iterations_used: usize,
    pub mode: PicardMode,
}

impl PicardRun {
    pub fn final_ln(&self) -> &[BigReal] {
        self.iterates.last().expect("at least the initial iterate")
    }

    /// tau on the grid, from the final iterate.
    pub fn final_tau(&self) -> Vec<BigReal> {
        self.final_ln().iter().map(BigReal::exp).collect()
    }

    pub fn to_json(&self) -> String {
        let dec = |v: &[BigReal]| {
            v.iter()
                .map(BigReal::to_decimal_shortest)
                .collect::<Vec<_>>()
        };
        let value = serde_json::json!({
            "grid": dec(&self.grid),
            "ln_tau_final": dec(self.final_ln()),
            "sup_deltas": dec(&self.sup_deltas),
            "converged": self.converged,
            "mode": self.mode.as_str(),
        });
        serde_json::to_string_pretty(&value).expect("JSON serializes")
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,ln_tau_final,tau_final\n");
        for (t, ln_tau) in self.grid.iter().zip(self.final_ln()) {
            out.push_str(&format!(
                "{},{},{}\n",
                t.to_decimal_shortest(),
                ln_tau.to_decimal_shortest(),
                ln_tau.exp().to_decimal_shortest()
            ));
        }
        out
    }
}

/// Monotone cubic interpolant on a uniform grid: Hermite basis with
/// Fritsch-Carlson harmonic-mean slopes, flattened wherever the secants
/// change sign. End cells extend their cubic, so evaluation a rounding step
/// past the boundary stays defined.
struct MonotoneCubic {
    xs: Arc<Vec<BigReal>>,
    ys: Vec<BigReal>,
    slopes: Vec<BigReal>,
    h: BigReal,
    x0_hint: f64,
    h_hint: f64,
}

impl MonotoneCubic {
    fn new(xs: Arc<Vec<BigReal>>, ys: Vec<BigReal>, h: BigReal) -> Self {
        let n = xs.len();
        assert!(n >= 2 && ys.len() == n);
        let secants: Vec<BigReal> = (0..n - 1)
            .map(|i| ys[i + 1].sub(&ys[i]).div(&h).expect("positive cell width"))
            .collect();
        let mut slopes = Vec::with_capacity(n);
        slopes.push(secants[0].clone());
        for i in 1..n - 1 {
            let a = &secants[i - 1];
            let b = &secants[i];
            let product = a.mul(b);
            if product.is_sign_negative() || product.is_zero() {
                slopes.push(BigReal::zero(product.prec()));
            } else {
                // harmonic mean keeps the interpolant monotone on the cell
                slopes.push(a.mul(b).mul_exp2(1).div(&a.add(b)).expect("same sign"));
            }
        }
        slopes.push(secants[n - 2].clone());
        let x0_hint = xs[0].to_f64();
        let h_hint = h.to_f64();
        MonotoneCubic {
            xs,
            ys,
            slopes,
            h,
            x0_hint,
            h_hint,
        }
    }

    fn eval(&self, x: &BigReal) -> BigReal {
        let n = self.xs.len();
        // fast f64 cell guess, corrected by exact comparisons
        let guess = ((x.to_f64() - self.x0_hint) / self.h_hint).floor();
        let mut i = if guess.is_finite() && guess > 0.0 {
            (guess as usize).min(n - 2)
        } else {
            0
        };
        while i > 0 && x < &self.xs[i] {
            i -= 1;
        }
        while i < n - 2 && x > &self.xs[i + 1] {
            i += 1;
        }
        let s = x.sub(&self.xs[i]).div(&self.h).expect("positive cell width");
        let s2 = s.square();
        let s3 = s2.mul(&s);
        // Hermite basis: h00 = 2s^3 - 3s^2 + 1, h10 = s^3 - 2s^2 + s,
        //                h01 = -2s^3 + 3s^2,    h11 = s^3 - s^2
        let h00 = s3.mul_exp2(1).sub(&s2.mul(&three(s2.prec()))).add(&BigReal::one(s2.prec()));
        let h10 = s3.sub(&s2.mul_exp2(1)).add(&s);
        let h01 = s2.mul(&three(s2.prec())).sub(&s3.mul_exp2(1));
        let h11 = s3.sub(&s2);
        self.ys[i]
            .mul(&h00)
            .add(&self.h.mul(&self.slopes[i]).mul(&h10))
            .add(&self.ys[i + 1].mul(&h01))
            .add(&self.h.mul(&self.slopes[i + 1]).mul(&h11))
    }
}

fn three(p: u32) -> BigReal {
    BigReal::from_u64(3, p)
}

/// Everything fixed across iterations of one run.
struct GridContext {
    /// ln t, uniform, ascending.
    xs: Arc<Vec<BigReal>>,
    /// t = exp(ln t), same order.
    ts: Vec<BigReal>,
    h: BigReal,
    /// index of the last node with ln t <= 0
    anchor_cell: usize,
    precision: u32,
}

impl GridContext {
    fn build(a: &BigReal, b: &BigReal, grid_size: usize, precision: u32) -> Result<Self> {
        let one = BigReal::one(precision);
        let zero = BigReal::zero(precision);
        if !(a > &zero && a < &one && b > &one) {
            return Err(SflError::Domain(format!(
                "the interval [{a}, {b}] must straddle the anchor t = 1"
            )));
        }
        if grid_size < 8 {
            return Err(SflError::Domain("grid needs at least 8 points".into()));
        }
        let la = a.with_precision(precision).ln()?;
        let lb = b.with_precision(precision).ln()?;
        let h = lb
            .sub(&la)
            .div(&BigReal::from_u64(grid_size as u64 - 1, precision))?;
        let mut xs = Vec::with_capacity(grid_size);
        for i in 0..grid_size {
            let x = if i == grid_size - 1 {
                lb.clone()
            } else {
                la.add(&h.mul(&BigReal::from_u64(i as u64, precision)))
            };
            xs.push(x);
        }
        let ts: Vec<BigReal> = xs.iter().map(BigReal::exp).collect();
        let anchor_cell = xs
            .iter()
            .rposition(|x| x <= &zero)
            .expect("the interval straddles ln t = 0");
        Ok(GridContext {
            xs: Arc::new(xs),
            ts,
            h,
            anchor_cell,
            precision,
        })
    }

    /// Cumulative integral of `f` in the log variable from 0 to every node,
    /// one fixed-order panel per grid cell plus the split cell around the
    /// anchor.
    fn cumulative_from_anchor(&self, f: impl Fn(&BigReal) -> BigReal) -> Vec<BigReal> {
        let p = self.precision;
        let zero = BigReal::zero(p);
        let n = self.xs.len();
        let j = self.anchor_cell;
        let mut acc = vec![BigReal::zero(p); n];

        // downward from the anchor: nodes j, j-1, ..., 0
        acc[j] = if self.xs[j].is_zero() {
            BigReal::zero(p)
        } else {
            quad::composite(&f, &self.xs[j], &zero, 1, quad::DEFAULT_ORDER).neg()
        };
        for i in (0..j).rev() {
            let cell = quad::composite(&f, &self.xs[i], &self.xs[i + 1], 1, quad::DEFAULT_ORDER);
            acc[i] = acc[i + 1].sub(&cell);
        }
        // upward: nodes j+1, ..., n-1
        if j + 1 < n {
            acc[j + 1] = quad::composite(&f, &zero, &self.xs[j + 1], 1, quad::DEFAULT_ORDER);
            for i in j + 2..n {
                let cell =
                    quad::composite(&f, &self.xs[i - 1], &self.xs[i], 1, quad::DEFAULT_ORDER);
                acc[i] = acc[i - 1].add(&cell);
            }
        }
        acc
    }
}

fn validate_common(tau0: &BigReal, tol: &BigReal, max_iter: usize) -> Result<()> {
    let p = tau0.prec();
    if !(tau0 > &BigReal::zero(p)) {
        return Err(SflError::Domain(format!(
            "the initial value must be positive, got {tau0}"
        )));
    }
    if !(tol > &BigReal::zero(tol.prec())) {
        return Err(SflError::Domain("tolerance must be positive".into()));
    }
    if max_iter == 0 {
        return Err(SflError::Domain("allow at least one iteration".into()));
    }
    Ok(())
}

/// Correction data threaded through an extended run.
struct ExtendedSetup<'a> {
    epsilon: &'a BigReal,
    trace: &'a CascadeTrace,
    /// tau_g evaluated on the grid, once.
    tau_on_grid: Vec<BigReal>,
}

fn run_engine(
    rhs: &RhsField,
    tau0: &BigReal,
    a: &BigReal,
    b: &BigReal,
    grid_size: usize,
    tol: &BigReal,
    max_iter: usize,
    extension: Option<ExtendedSetup<'_>>,
) -> Result<PicardRun> {
    validate_common(tau0, tol, max_iter)?;
    let p = tau0.prec().max(a.prec()).max(b.prec());
    let p = match &extension {
        Some(setup) => p.max(setup.trace.precision),
        None => p,
    };
    let grid = GridContext::build(a, b, grid_size, p)?;
    let ln_tau0 = tau0.with_precision(p).ln()?;

    let mode = if extension.is_some() {
        PicardMode::Extended
    } else {
        PicardMode::Standard
    };
    let mut iterates = vec![vec![ln_tau0.clone(); grid_size]];
    let mut sup_deltas = Vec::new();
    let mut converged = false;

    for _ in 0..max_iter {
        let prev = iterates.last().expect("nonempty").clone();
        let interp = Arc::new(MonotoneCubic::new(
            Arc::clone(&grid.xs),
            prev.clone(),
            grid.h.clone(),
        ));

        // antiderivative of f(t, tau_{n-1}(t)) in the log variable
        let field = Arc::clone(&rhs.f);
        let interp_for_f = Arc::clone(&interp);
        let log_integrand = move |x: &BigReal| -> BigReal {
            let t = x.exp();
            let tau = interp_for_f.eval(x).exp();
            field(&t, &tau)
        };
        let mut next = grid.cumulative_from_anchor(log_integrand);
        for value in &mut next {
            *value = ln_tau0.add(value);
        }

        if let Some(setup) = &extension {
            if !setup.epsilon.is_zero() {
                // the same closed-form level corrections the extended
                // integral applies, based at each node's t
                let field = Arc::clone(&rhs.f);
                let interp_for_g = Arc::clone(&interp);
                let plain_integrand = Integrand::new(move |s: &BigReal| {
                    let tau = interp_for_g.eval(&s.ln().expect("t stays positive")).exp();
                    field(s, &tau).div(s).expect("t stays positive")
                });
                for (i, value) in next.iter_mut().enumerate() {
                    let (_, sum) = level_corrections(
                        &plain_integrand,
                        &grid.ts[i],
                        &setup.tau_on_grid[i],
                        setup.trace,
                    );
                    *value = value.add(&setup.epsilon.mul(&sum));
                }
            }
        }

        // an iterate escaping the representable range means divergence;
        // keep the last finite iterate and report the run as not converged
        if next.iter().any(|v| !v.is_finite()) {
            break;
        }

        let mut delta = BigReal::zero(p);
        for (new, old) in next.iter().zip(&prev) {
            delta = delta.max(&new.sub(old).abs());
        }
        iterates.push(next);
        sup_deltas.push(delta.clone());
        if delta < *tol {
            converged = true;
            break;
        }
    }

    Ok(PicardRun {
        grid: grid.ts,
        iterates,
        iterations_used: sup_deltas.len(),
        sup_deltas,
        converged,
        mode,
    })
}

/// Fixed-point iteration for ln tau(t) = ln tau_0 + int_1^t f(s, tau(s)) d ln s
/// on a log-uniform grid over [a, b].
///
/// Stops when the grid sup-norm move drops below `tol` or after `max_iter`
/// passes; running out of iterations reports `converged = false` instead of
/// failing, since the map legitimately escapes its contraction region.
pub fn picard_standard(
    rhs: &RhsField,
    tau0: &BigReal,
    a: &BigReal,
    b: &BigReal,
    grid_size: usize,
    tol: &BigReal,
    max_iter: usize,
) -> Result<PicardRun> {
    run_engine(rhs, tau0, a, b, grid_size, tol, max_iter, None)
}

/// The same fixed-point scheme with the cascade-corrected antiderivative:
/// each node's integral gains epsilon times the closed-form level
/// corrections of the extended integral. With epsilon = 0 the correction
/// pass is skipped outright and the run is bit-identical to
/// [`picard_standard`].
pub fn picard_extended(
    rhs: &RhsField,
    tau0: &BigReal,
    a: &BigReal,
    b: &BigReal,
    epsilon: &BigReal,
    trace: &CascadeTrace,
    grid_size: usize,
    tol: &BigReal,
    max_iter: usize,
) -> Result<PicardRun> {
    if epsilon.is_sign_negative() && !epsilon.is_zero() {
        return Err(SflError::Domain(format!(
            "epsilon must be nonnegative, got {epsilon}"
        )));
    }
    // mirror the working precision run_engine derives, so the pre-pass grid
    // lands on bit-identical nodes
    let p = tau0
        .prec()
        .max(a.prec())
        .max(b.prec())
        .max(trace.precision);
    let tau_g = generalized_solution(trace)?;
    if !epsilon.is_zero() {
        // every inverse plus-point must be a grid-readable scale
        let base_inverse = BigReal::one(p).add(&trace.eta).recip()?;
        if a > &base_inverse {
            return Err(SflError::Domain(format!(
                "the interval must reach down to the base inverse plus-point {base_inverse}"
            )));
        }
    }
    let grid_check = GridContext::build(a, b, grid_size, p)?;
    let mut tau_on_grid = Vec::with_capacity(grid_size);
    for t in &grid_check.ts {
        tau_on_grid.push(tau_g.value(t)?);
    }
    run_engine(
        rhs,
        tau0,
        a,
        b,
        grid_size,
        tol,
        max_iter,
        Some(ExtendedSetup {
            epsilon,
            trace,
            tau_on_grid,
        }),
    )
}

/// The corrected right-hand side after one rescaling step at scale eta:
///
///   f'(t', tau') = [t_+ f(t_-, tilde_tau(1/t_+) tau') - t_- f(1/t_+, tilde_tau(1/t_+))]
///                  / (t_+ - t_-)
///
/// with t_+ = 1 + eta and t_- = 1 - eta. The outer solution enters only
/// through its value at the matching point 1/t_+, so that value is captured
/// once at construction.
pub fn correction_rhs(
    rhs: &RhsField,
    tilde_tau: impl Fn(&BigReal) -> BigReal,
    eta: &BigReal,
) -> Result<RhsField> {
    let (t_plus, t_minus, gap) = rescaling_points(eta)?;
    let inv_plus = t_plus.recip()?;
    let tilde_at_match = tilde_tau(&inv_plus);

    let outer = rhs.f.clone();
    let fixed = t_minus.mul(&outer(&inv_plus, &tilde_at_match));
    let name = format!("{}_corrected", rhs.name);
    let smoothness = rhs.smoothness;
    let field = move |_t: &BigReal, tau_prime: &BigReal| -> BigReal {
        let inner_tau = tilde_at_match.mul(tau_prime);
        t_plus
            .mul(&outer(&t_minus, &inner_tau))
            .sub(&fixed)
            .div(&gap)
            .expect("gap checked nonzero")
    };
    Ok(RhsField::new(name, field).with_smoothness(smoothness))
}

/// The scale exponent mu = f'/f at the correction point, with the purely
/// scale-driven case short-circuited to its closed form 1/(1 - eta).
///
/// Dependence on each argument is probed numerically: a field that varies
/// with t but not with tau follows the exact scale relation, every other
/// field gets the quotient of the corrected field over the original at the
/// matching point.
pub fn mu_factor(
    rhs: &RhsField,
    tilde_tau: impl Fn(&BigReal) -> BigReal,
    eta: &BigReal,
) -> Result<BigReal> {
    let (t_plus, t_minus, _gap) = rescaling_points(eta)?;
    let p = eta.prec();
    let inv_plus = t_plus.recip()?;
    let tilde_at_match = tilde_tau(&inv_plus);

    // dependence probes at elevated precision so the step never vanishes
    let probe_p = p.max(192);
    let step = BigReal::one(probe_p).mul_exp2(-64);
    let t_probe = t_minus.with_precision(probe_p);
    let tau_probe = tilde_at_match.with_precision(probe_p);
    let base = rhs.eval(&t_probe, &tau_probe);
    let moves_with_t = rhs.eval(&t_probe.add(&step), &tau_probe) != base;
    let moves_with_tau = rhs.eval(&t_probe, &tau_probe.add(&step)) != base;

    if moves_with_t && !moves_with_tau {
        // purely scale-driven field: exact closed form
        return BigReal::one(p).sub(&eta.with_precision(p)).recip();
    }

    let corrected = correction_rhs(rhs, |x| tilde_tau(x), eta)?;
    let one = BigReal::one(p);
    let correction_point = one.sub(&eta.square());
    let numerator = corrected.eval(&correction_point, &one);
    let denominator = rhs.eval(&inv_plus, &tilde_at_match);
    if denominator.is_zero() {
        return Err(SflError::DivisionByZero(
            "the field vanishes at the matching point".into(),
        ));
    }
    numerator.div(&denominator)
}

/// t_+ = 1 + eta, t_- = 1 - eta, and their gap, validated for the
/// correction formulas.
fn rescaling_points(eta: &BigReal) -> Result<(BigReal, BigReal, BigReal)> {
    let p = eta.prec();
    let zero = BigReal::zero(p);
    let half = BigReal::one(p).mul_exp2(-1);
    if !(eta > &zero && eta < &half) {
        return Err(SflError::Domain(format!(
            "the rescaling needs eta strictly inside (0, 0.5), got {eta}"
        )));
    }
    let one = BigReal::one(p);
    let t_plus = one.add(eta);
    let t_minus = one.sub(eta);
    let gap = t_plus.sub(&t_minus);
    if gap.is_zero() {
        return Err(SflError::Domain(format!(
            "eta = {eta} underflows the rescaling gap at {p} bits; raise the precision"
        )));
    }
    Ok((t_plus, t_minus, gap))
}
