//! Gauss-Legendre quadrature at configurable precision.
//!
//! Rules are generated by Newton iteration on the Legendre recurrence with
//! a fixed iteration count (no convergence test), so node and weight bits
//! are a pure function of (order, precision). Generated rules are memoized
//! process-wide: integration shows up in cascades, generalized integrals,
//! and Picard sweeps, and regenerating 256-bit nodes per call would
//! dominate the runtime.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use once_cell::sync::Lazy;
use rug::Float;

use crate::bigscale::{BigReal, MIN_PRECISION};

/// Quadrature order used by the integral operators.
pub const DEFAULT_ORDER: usize = 10;

/// Nodes and weights on the reference interval [-1, 1].
#[derive(Debug)]
pub struct QuadRule {
    pub order: usize,
    pub precision: u32,
    pub nodes: Vec<BigReal>,
    pub weights: Vec<BigReal>,
}

static RULE_CACHE: Lazy<Mutex<HashMap<(usize, u32), Arc<QuadRule>>>> =
    Lazy::new(|| Mutex::new(HashMap::new()));

/// Gauss-Legendre rule of the given order, correct at `precision` bits.
/// Cached; repeated requests return the same allocation.
pub fn gauss_legendre(order: usize, precision: u32) -> Arc<QuadRule> {
    assert!(order >= 2, "quadrature order must be at least 2");
    let p = precision.max(MIN_PRECISION);
    let key = (order, p);
    if let Some(rule) = RULE_CACHE.lock().unwrap().get(&key) {
        return Arc::clone(rule);
    }
    let rule = Arc::new(build_rule(order, p));
    RULE_CACHE
        .lock()
        .unwrap()
        .entry(key)
        .or_insert(rule)
        .clone()
}

/// Legendre P_n and P'_n at x via the three-term recurrence.
fn legendre_pair(n: usize, x: &Float, prec: u32) -> (Float, Float) {
    let mut p_prev = Float::with_val(prec, 1);
    let mut p_cur = Float::with_val(prec, x);
    for k in 1..n {
        // (k+1) P_{k+1} = (2k+1) x P_k - k P_{k-1}
        let a = Float::with_val(prec, x * &p_cur) * (2 * k as u32 + 1);
        let next = Float::with_val(prec, &a - &(p_prev * (k as u32))) / (k as u32 + 1);
        p_prev = p_cur;
        p_cur = next;
    }
    // P'_n = n (x P_n - P_{n-1}) / (x^2 - 1)
    let num = Float::with_val(prec, x * &p_cur) - &p_prev;
    let den = Float::with_val(prec, x.square_ref()) - 1u32;
    let deriv = Float::with_val(prec, num * (n as u32)) / den;
    (p_cur, deriv)
}

fn build_rule(order: usize, precision: u32) -> QuadRule {
    let n = order;
    let work = precision + 64;
    // Enough Newton steps to converge from an f64 seed at any precision:
    // quadratic convergence doubles correct bits per step.
    let steps = 32 - (work.leading_zeros()) + 3;

    let mut nodes = vec![BigReal::zero(precision); n];
    let mut weights = vec![BigReal::zero(precision); n];

    for i in 0..n.div_ceil(2) {
        let mut x = if n % 2 == 1 && i == n / 2 {
            // Odd-order rules have an exact root at the origin.
            Float::with_val(work, 0)
        } else {
            let guess =
                (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut x = Float::with_val(work, guess);
            for _ in 0..steps {
                let (p_n, dp_n) = legendre_pair(n, &x, work);
                x -= p_n / dp_n;
            }
            x
        };
        let (_, dp_n) = legendre_pair(n, &x, work);
        // w = 2 / ((1 - x^2) P'_n(x)^2)
        let one_minus_x2 = Float::with_val(work, 1) - Float::with_val(work, x.square_ref());
        let w = Float::with_val(work, 2) / (one_minus_x2 * Float::with_val(work, dp_n.square_ref()));

        // cos seeds start near +1 for i = 0; store descending on the left,
        // mirrored on the right, so nodes come out sorted ascending.
        let j = n - 1 - i;
        nodes[j] = BigReal::from_float(Float::with_val(precision, &x));
        weights[j] = BigReal::from_float(Float::with_val(precision, &w));
        if i != j {
            x = -x;
            nodes[i] = BigReal::from_float(Float::with_val(precision, x));
            weights[i] = weights[j].clone();
        }
    }

    QuadRule {
        order,
        precision,
        nodes,
        weights,
    }
}

/// Composite quadrature of `f` over [a, b] split into `panels` equal
/// subintervals, `order`-point Gauss-Legendre on each.
///
/// Panel sums accumulate with 64 guard bits and round once at the end.
/// Requires a < b and panels >= 1.
pub fn composite<F>(f: F, a: &BigReal, b: &BigReal, panels: usize, order: usize) -> BigReal
where
    F: Fn(&BigReal) -> BigReal,
{
    assert!(panels >= 1, "at least one panel");
    assert!(a < b, "integration bounds must be ordered");
    let p = a.prec().max(b.prec());
    let work = p + 64;
    let rule = gauss_legendre(order, work);

    let width = b.sub(a).with_precision(work);
    let h = width
        .div(&BigReal::from_u64(panels as u64, work))
        .expect("panel count is nonzero");
    let half_h = h.mul_exp2(-1);

    let mut acc = Float::new(work);
    for k in 0..panels {
        // Panel [a + k h, a + (k+1) h]; map t in [-1,1] to c + (h/2) t.
        let c = a
            .with_precision(work)
            .add(&h.mul(&BigReal::from_u64(k as u64, work)))
            .add(&half_h);
        for (node, weight) in rule.nodes.iter().zip(&rule.weights) {
            let x = c.add(&half_h.mul(node));
            let fx = f(&x).with_precision(work);
            acc += Float::with_val(work, fx.float() * weight.float());
        }
    }
    acc *= half_h.float();
    BigReal::from_float(Float::with_val(p, acc))
}
