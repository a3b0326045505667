//! Ordinary quadrature, its cascade-corrected extension, and the
//! closed-form length bookkeeping for recursively voided intervals.
//!
//! The extension replaces the measure near a point by a sum over the
//! cascade's plus-points: each level contributes a correction
//! [f(1/t'_{n+}) + tau_g(t) * t * df(t)] * ln(1/t'_{n+}), weighted once by
//! the overall infinitesimal epsilon. At epsilon = 0 the extension is the
//! plain integral, bit for bit.

use std::sync::Arc;

use crate::bigscale::{log_product_accumulate, pow_tower, BigReal};
use crate::cascade::{CascadeTrace, GeneralizedSolution};
use crate::error::SflError;
use crate::quad;
use crate::Result;

/// A real integrand with an optional analytic derivative.
///
/// When `df` is absent, derivative values fall back to a central finite
/// difference with step 2^(-precision/4), and results flag the source.
#[derive(Clone)]
pub struct Integrand {
    pub f: Arc<dyn Fn(&BigReal) -> BigReal + Send + Sync>,
    pub df: Option<Arc<dyn Fn(&BigReal) -> BigReal + Send + Sync>>,
    /// Claimed C^k smoothness class; advisory only.
    pub smoothness_hint: u32,
}

impl std::fmt::Debug for Integrand {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Integrand")
            .field("df", &self.df.is_some())
            .field("smoothness_hint", &self.smoothness_hint)
            .finish()
    }
}

impl Integrand {
    pub fn new(f: impl Fn(&BigReal) -> BigReal + Send + Sync + 'static) -> Self {
        Integrand {
            f: Arc::new(f),
            df: None,
            smoothness_hint: 0,
        }
    }

    pub fn with_derivative(
        mut self,
        df: impl Fn(&BigReal) -> BigReal + Send + Sync + 'static,
    ) -> Self {
        self.df = Some(Arc::new(df));
        self
    }

    pub fn with_smoothness(mut self, k: u32) -> Self {
        self.smoothness_hint = k;
        self
    }

    fn eval(&self, x: &BigReal) -> BigReal {
        (self.f)(x)
    }

    /// Derivative at x: analytic when provided, otherwise the central
    /// difference (f(x+h) - f(x-h)) / 2h with h = 2^(-p/4).
    fn derivative(&self, x: &BigReal) -> BigReal {
        match &self.df {
            Some(df) => df(x),
            None => {
                let p = x.prec();
                let h = BigReal::one(p).mul_exp2(-((p / 4) as i32));
                let hi = self.eval(&x.add(&h));
                let lo = self.eval(&x.sub(&h));
                hi.sub(&lo).div(&h.mul_exp2(1)).expect("step is nonzero")
            }
        }
    }

    fn df_source(&self) -> DfSource {
        if self.df.is_some() {
            DfSource::Provided
        } else {
            DfSource::FiniteDifference
        }
    }
}

/// Provenance of derivative values in a result.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DfSource {
    Provided,
    FiniteDifference,
}

impl DfSource {
    fn as_str(self) -> &'static str {
        match self {
            DfSource::Provided => "provided",
            DfSource::FiniteDifference => "finite_difference",
        }
    }
}

/// Plain composite Gauss-Legendre integral of `f` over [a, b].
///
/// Fixed nodes and panel count; no adaptivity, so the value is a pure
/// function of the inputs.
pub fn riemann(f: &Integrand, a: &BigReal, b: &BigReal, panels: usize) -> Result<BigReal> {
    if !(a < b) {
        return Err(SflError::Domain(format!(
            "integration bounds must satisfy a < b, got [{a}, {b}]"
        )));
    }
    if panels < 1 {
        return Err(SflError::Domain("at least one quadrature panel".into()));
    }
    Ok(quad::composite(
        |x| f.eval(x),
        a,
        b,
        panels,
        quad::DEFAULT_ORDER,
    ))
}

/// Largest |f| over the composite quadrature nodes of [a, b]; the
/// deterministic stand-in for the sup used by residual bounds.
fn max_abs_on_nodes(f: &Integrand, a: &BigReal, b: &BigReal, panels: usize) -> BigReal {
    let p = a.prec().max(b.prec());
    let rule = quad::gauss_legendre(quad::DEFAULT_ORDER, p);
    let width = b.sub(a);
    let h = width
        .div(&BigReal::from_u64(panels as u64, p))
        .expect("panel count is nonzero");
    let half_h = h.mul_exp2(-1);
    let mut best = BigReal::zero(p);
    for k in 0..panels {
        let c = a.add(&h.mul(&BigReal::from_u64(k as u64, p))).add(&half_h);
        for node in &rule.nodes {
            let x = c.add(&half_h.mul(node));
            let v = f.eval(&x).abs();
            best = best.max(&v);
        }
    }
    best
}

/// Total replaced log-measure over a trace's factor set:
///
///   ln(1 + eta) + sum_n ln t'_{n+}
///
/// accumulated in the log domain with a single final rounding. A trivial
/// trace telescopes to -ln(1 - eta) up to the eta^(2^(depth+1)) tail; the
/// empty trace has an empty factor set and yields exactly 0.
pub fn measure_replacement(trace: &CascadeTrace) -> Result<BigReal> {
    if trace.t_plus.is_empty() {
        return Ok(BigReal::zero(trace.precision));
    }
    let one = BigReal::one(trace.precision);
    let mut terms = Vec::with_capacity(trace.t_plus.len() + 1);
    terms.push(one.add(&trace.eta));
    terms.extend_from_slice(&trace.t_plus);
    log_product_accumulate(&terms)
}

/// Result of [`extended_integral`].
#[derive(Debug, Clone)]
pub struct ExtendedIntegralResult {
    /// Plain quadrature over [a, t].
    pub riemann_part: BigReal,
    /// One correction per cascade level, in level order.
    pub correction_terms: Vec<BigReal>,
    pub epsilon: BigReal,
    /// riemann_part + epsilon * sum of correction terms.
    pub total: BigReal,
    /// 2 * eta^(2^(depth+1)) * max|f| over the quadrature nodes: the
    /// magnitude of the truncated correction tail.
    pub residual_bound: BigReal,
    pub df_source: DfSource,
}

impl ExtendedIntegralResult {
    pub fn to_json(&self) -> String {
        let value = serde_json::json!({
            "riemann_part": self.riemann_part.to_decimal_shortest(),
            "correction_terms": self
                .correction_terms
                .iter()
                .map(BigReal::to_decimal_shortest)
                .collect::<Vec<_>>(),
            "epsilon": self.epsilon.to_decimal_shortest(),
            "total": self.total.to_decimal_shortest(),
            "residual_bound": self.residual_bound.to_decimal_shortest(),
            "df_source": self.df_source.as_str(),
        });
        serde_json::to_string_pretty(&value).expect("JSON serializes")
    }
}

/// The cascade-corrected integral of `f` from `a` to `t`:
///
///   riemann(f, a, t) + epsilon * sum_n [f(1/t'_{n+}) + tau_g(t) * t * df(t)]
///                                      * ln(1/t'_{n+})
///
/// f is evaluated at each level's constant inverse plus-point and the
/// first-order Taylor term at the outer evaluation point t, so every level
/// contributes in closed form. With epsilon = 0 the correction vanishes
/// exactly and total equals the plain quadrature bit for bit.
pub fn extended_integral(
    f: &Integrand,
    a: &BigReal,
    t: &BigReal,
    epsilon: &BigReal,
    trace: &CascadeTrace,
    tau_g: &GeneralizedSolution,
    panels: usize,
) -> Result<ExtendedIntegralResult> {
    if epsilon.is_sign_negative() && !epsilon.is_zero() {
        return Err(SflError::Domain(format!(
            "epsilon must be nonnegative, got {epsilon}"
        )));
    }
    if tau_g.trace.t_plus != trace.t_plus || tau_g.trace.eta != trace.eta {
        return Err(SflError::Domain(
            "tau_g was built from a different trace".into(),
        ));
    }
    let riemann_part = riemann(f, a, t, panels)?;

    let tau_at_t = tau_g.value(t)?;
    let (correction_terms, sum) = level_corrections(f, t, &tau_at_t, trace);
    let total = riemann_part.add(&epsilon.mul(&sum));

    let tail = pow_tower(&trace.eta, trace.depth() + 1)?;
    let residual_bound = tail.mul_exp2(1).mul(&max_abs_on_nodes(f, a, t, panels));

    Ok(ExtendedIntegralResult {
        riemann_part,
        correction_terms,
        epsilon: epsilon.clone(),
        total,
        residual_bound,
        df_source: f.df_source(),
    })
}

/// One closed-form correction per cascade level at the evaluation point t:
///
///   term_n = [f(1/t'_{n+}) + tau_at_t * t * df(t)] * ln(1/t'_{n+})
///
/// Returns the terms in level order together with their sum. Shared by the
/// extended integral and the extended fixed-point iteration so both apply
/// the identical correction arithmetic.
pub(crate) fn level_corrections(
    f: &Integrand,
    t: &BigReal,
    tau_at_t: &BigReal,
    trace: &CascadeTrace,
) -> (Vec<BigReal>, BigReal) {
    let p = trace.precision.max(t.prec());
    let df_at_t = f.derivative(t);
    let taylor = tau_at_t.mul(&t.with_precision(p)).mul(&df_at_t);

    let mut terms = Vec::with_capacity(trace.t_plus.len());
    let mut sum = BigReal::zero(p);
    for t_plus in &trace.t_plus {
        let inv_plus = t_plus.recip().expect("plus-points exceed 1");
        let log_weight = inv_plus.ln().expect("plus-point inverses are positive");
        let term = f.eval(&inv_plus).add(&taylor).mul(&log_weight);
        sum = sum.add(&term);
        terms.push(term);
    }
    (terms, sum)
}

/// The modulated exponential exp(sum_{k=0}^{depth} 1/t_{k+}) together with
/// its raw exponent sum and the plus-points themselves.
#[derive(Debug, Clone)]
pub struct ModulatedExp {
    /// sum_{k=0}^{depth} 1/t_{k+}.
    pub exponent_sum: BigReal,
    /// exp(exponent_sum).
    pub value: BigReal,
    /// t_{0+}, ..., t_{depth+}; t_{0+} = 1 + eta.
    pub plus_points: Vec<BigReal>,
}

/// Walks the Case-1 scale recursion
///
///   eta_{k+1} = 1/t_{k-} - t_{k+} = eta_k^2 / (1 - eta_k)
///
/// starting from eta_0 = eta, accumulating 1/t_{k+} for k = 0..=depth.
/// Needs eta in (0, 0.5) so the scales strictly decrease; every t_{k+}
/// tends to 1 as eta tends to 0, giving the e^(depth+1) limit.
pub fn modulated_exp(eta: &BigReal, depth: u32) -> Result<ModulatedExp> {
    let p = eta.prec();
    let zero = BigReal::zero(p);
    let half = BigReal::one(p).mul_exp2(-1);
    if !(eta > &zero && eta < &half) {
        return Err(SflError::Domain(format!(
            "modulated_exp needs eta strictly inside (0, 0.5), got {eta}"
        )));
    }
    if depth < 1 {
        return Err(SflError::Domain("depth must be at least 1".into()));
    }
    let one = BigReal::one(p);
    let mut scale = eta.clone();
    let mut plus_points = Vec::with_capacity(depth as usize + 1);
    let mut exponent_sum = BigReal::zero(p);
    for _ in 0..=depth {
        let t_plus = one.add(&scale);
        exponent_sum = exponent_sum.add(&t_plus.recip()?);
        plus_points.push(t_plus);
        scale = scale.square().div(&one.sub(&scale))?;
    }
    Ok(ModulatedExp {
        value: exponent_sum.exp(),
        exponent_sum,
        plus_points,
    })
}

/// Total length removed by depth+1 rounds of symmetric voiding around a
/// point: 2 * sum_{n=0}^{depth} (eps^(2^n) - eps^(2^(n+1))), summed term by
/// term. Telescopes to 2 * (eps - eps^(2^(depth+1))).
pub fn cantor_void_length(epsilon: &BigReal, depth: u32) -> Result<BigReal> {
    check_unit(epsilon)?;
    let p = epsilon.prec();
    let mut sum = BigReal::zero(p);
    let mut cur = epsilon.clone(); // eps^(2^n)
    for _ in 0..=depth {
        let next = cur.square();
        sum = sum.add(&cur.sub(&next));
        cur = next;
    }
    Ok(sum.mul_exp2(1))
}

/// Total length kept by the voiding at the same depth:
/// 2 * sum_{n=1}^{depth} eps^(2^n).
pub fn cantor_residual_length(epsilon: &BigReal, depth: u32) -> Result<BigReal> {
    check_unit(epsilon)?;
    let p = epsilon.prec();
    let mut sum = BigReal::zero(p);
    let mut cur = epsilon.clone();
    for _ in 1..=depth {
        cur = cur.square();
        sum = sum.add(&cur);
    }
    Ok(sum.mul_exp2(1))
}

fn check_unit(epsilon: &BigReal) -> Result<()> {
    let p = epsilon.prec();
    if !(epsilon > &BigReal::zero(p) && epsilon < &BigReal::one(p)) {
        return Err(SflError::Domain(format!(
            "epsilon must lie strictly inside (0, 1), got {epsilon}"
        )));
    }
    Ok(())
}
