//! Residual-rescaling cascades and their multiplicative-product solutions.
//!
//! The object of study is the scale ladder eta, eta^2, eta^4, ...,
//! eta^(2^n). A cascade walks the ladder and, at scheduled positions,
//! replaces the exact squaring step by a rescaled step
//!
//!   eta'_n = alpha_n * u_n - eps_n,    u_n = (alpha_{n-1} * eta'_{n-1})^2,
//!
//! with alpha_n = 1 + eps_n and eps_n drawn from a seeded generator.
//! Unscheduled entries keep alpha = 1, eps = 0 and reproduce the squaring
//! ladder bit for bit. The product solution built from a trace divides out
//! the unperturbed ladder, so a never-rescaled cascade yields the identity
//! solution tau(t) = t up to the truncation tail.
//!
//! Ladder positions are 1-based: position 1 is the base scale eta itself
//! and can never be rescaled (every schedule selector therefore starts at
//! 2), and trace entry n records the step into position n + 1, whose
//! unrescaled scale is eta^(2^n).

use std::collections::BTreeSet;
use std::fmt;

use crate::bigscale::{self, BigReal, DEFAULT_PRECISION};
use crate::error::SflError;
use crate::parallel::map_indexed;
use crate::rng::SplitMix64;
use crate::Result;

/// Decimal guard digits added by the automatic precision raise in
/// [`run_cascade`]: the deepest ladder value keeps at least this many
/// significant digits.
pub const DEFAULT_GUARD_DIGITS: u32 = 20;

/// log2 of the margin delta keeping draws strictly below the positivity
/// cap: the draw window is [low, low + (1 - delta) * (upper - low)).
const DRAW_MARGIN_LOG2: i32 = -32;

/// Defensive redraw limit; the clipped window already guarantees positive
/// scales except at the working-precision floor.
const MAX_REDRAWS: usize = 16;

// ----- schedule -----------------------------------------------------------

/// Selects which ladder positions receive a nontrivial rescaling.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RescalingSchedule {
    /// No rescaling anywhere; the trace is the exact squaring ladder.
    Never,
    /// Rescale position m and every later position.
    FromLevel(u32),
    /// Rescale every position up to and including n.
    UntilLevel(u32),
    /// Rescale exactly the listed positions.
    Explicit(BTreeSet<u32>),
}

impl RescalingSchedule {
    /// Positions start at 2; position 1 is the unrescalable base scale.
    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            RescalingSchedule::Never => true,
            RescalingSchedule::FromLevel(m) => *m >= 2,
            RescalingSchedule::UntilLevel(n) => *n >= 2,
            RescalingSchedule::Explicit(set) => set.iter().all(|&l| l >= 2),
        };
        if ok {
            Ok(())
        } else {
            Err(SflError::Domain(
                "schedule levels start at 2; position 1 is the base scale".into(),
            ))
        }
    }

    /// Whether trace entry `entry` (1-based) is rescaled, i.e. whether the
    /// schedule selects ladder position entry + 1.
    fn applies_to_entry(&self, entry: u32) -> bool {
        let position = entry + 1;
        match self {
            RescalingSchedule::Never => false,
            RescalingSchedule::FromLevel(m) => position >= *m,
            RescalingSchedule::UntilLevel(n) => position <= *n,
            RescalingSchedule::Explicit(set) => set.contains(&position),
        }
    }

    /// Parses the CLI surface syntax: `never`, `from:M`, `until:N`, or
    /// `explicit:A,B,...`.
    pub fn parse(s: &str) -> Result<Self> {
        let bad = |msg: &str| SflError::Parse(format!("schedule {s:?}: {msg}"));
        let sched = if s == "never" {
            RescalingSchedule::Never
        } else if let Some(m) = s.strip_prefix("from:") {
            RescalingSchedule::FromLevel(
                m.parse().map_err(|_| bad("level must be an integer"))?,
            )
        } else if let Some(n) = s.strip_prefix("until:") {
            RescalingSchedule::UntilLevel(
                n.parse().map_err(|_| bad("level must be an integer"))?,
            )
        } else if let Some(list) = s.strip_prefix("explicit:") {
            let mut set = BTreeSet::new();
            for item in list.split(',') {
                set.insert(
                    item.trim()
                        .parse()
                        .map_err(|_| bad("levels must be integers"))?,
                );
            }
            RescalingSchedule::Explicit(set)
        } else {
            return Err(bad("expected never, from:M, until:N, or explicit:A,B"));
        };
        sched.validate()?;
        Ok(sched)
    }
}

impl fmt::Display for RescalingSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RescalingSchedule::Never => write!(f, "never"),
            RescalingSchedule::FromLevel(m) => write!(f, "from:{m}"),
            RescalingSchedule::UntilLevel(n) => write!(f, "until:{n}"),
            RescalingSchedule::Explicit(set) => {
                let items: Vec<String> = set.iter().map(u32::to_string).collect();
                write!(f, "explicit:{}", items.join(","))
            }
        }
    }
}

// ----- configuration ------------------------------------------------------

/// Full description of a cascade run.
#[derive(Debug, Clone)]
pub struct CascadeConfig {
    /// Base scale, strictly inside (0, 1).
    pub eta: BigReal,
    /// Number of trace entries (ladder steps), at least 1.
    pub depth: u32,
    pub schedule: RescalingSchedule,
    /// Seed for the draw stream; the trace is a pure function of
    /// (config, seed).
    pub seed: u64,
    /// Upper-range coefficient c for the eps draw window, in (0, 1).
    pub epsilon_fraction: BigReal,
    /// Requested working precision in bits; raised automatically when the
    /// ladder would otherwise lose its last [`DEFAULT_GUARD_DIGITS`] digits.
    pub precision: u32,
}

impl CascadeConfig {
    /// Config with the default epsilon fraction (0.1) and default precision
    /// (at least [`DEFAULT_PRECISION`], more if `eta` carries more).
    pub fn new(eta: BigReal, depth: u32, schedule: RescalingSchedule, seed: u64) -> Self {
        let precision = eta.prec().max(DEFAULT_PRECISION);
        CascadeConfig {
            epsilon_fraction: BigReal::parse_decimal("0.1", precision)
                .expect("literal parses"),
            eta,
            depth,
            schedule,
            seed,
            precision,
        }
    }

    pub fn with_precision(mut self, precision: u32) -> Self {
        self.precision = precision;
        self
    }

    pub fn with_epsilon_fraction(mut self, c: BigReal) -> Self {
        self.epsilon_fraction = c;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.eta.prec();
        let zero = BigReal::zero(p);
        let one = BigReal::one(p);
        if !(self.eta > zero && self.eta < one) {
            return Err(SflError::Domain(format!(
                "eta must lie strictly inside (0, 1), got {}",
                self.eta
            )));
        }
        if self.depth < 1 {
            return Err(SflError::Domain("depth must be at least 1".into()));
        }
        self.schedule.validate()?;
        if !(self.epsilon_fraction > zero && self.epsilon_fraction < one) {
            return Err(SflError::Domain(format!(
                "epsilon_fraction must lie strictly inside (0, 1), got {}",
                self.epsilon_fraction
            )));
        }
        Ok(())
    }
}

// ----- trace ---------------------------------------------------------------

/// Immutable record of one cascade run. All sequences share length
/// `depth`, indexed by entry n = 1..=depth at vector position n - 1.
#[derive(Debug, Clone)]
pub struct CascadeTrace {
    /// Base scale the run started from.
    pub eta: BigReal,
    /// Working precision actually used (after any automatic raise).
    pub precision: u32,
    pub seed_used: u64,
    /// Scales eta'_n.
    pub eta_primes: Vec<BigReal>,
    /// Rescaling factors alpha_n = 1 + eps_n (1 on trivial entries).
    pub alphas: Vec<BigReal>,
    /// Draws eps_n (0 on trivial entries).
    pub epsilons: Vec<BigReal>,
    /// t'_{n-} = 1 - eta'_n.
    pub t_minus: Vec<BigReal>,
    /// t'_{n+} = 1 + eta'_n.
    pub t_plus: Vec<BigReal>,
}

impl CascadeTrace {
    pub fn depth(&self) -> u32 {
        self.eta_primes.len() as u32
    }

    /// True when no entry was rescaled.
    pub fn is_trivial(&self) -> bool {
        self.epsilons.iter().all(BigReal::is_zero)
    }

    /// The depth-0 trace: no ladder steps at all. Solutions built from it
    /// degenerate to the standard solution tau(t) = t.
    pub fn empty(eta: BigReal, precision: u32) -> Self {
        CascadeTrace {
            eta,
            precision: precision.max(bigscale::MIN_PRECISION),
            seed_used: 0,
            eta_primes: Vec::new(),
            alphas: Vec::new(),
            epsilons: Vec::new(),
            t_minus: Vec::new(),
            t_plus: Vec::new(),
        }
    }

    /// CSV rows `level,eta_prime,alpha,epsilon,t_minus,t_plus`, one per
    /// entry, decimal strings at full (shortest round-trip) precision.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("level,eta_prime,alpha,epsilon,t_minus,t_plus\n");
        for i in 0..self.eta_primes.len() {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                i + 1,
                self.eta_primes[i],
                self.alphas[i],
                self.epsilons[i],
                self.t_minus[i],
                self.t_plus[i],
            ));
        }
        out
    }

    /// JSON mirror of the CSV: an array of row objects with the same field
    /// names.
    pub fn to_json(&self) -> String {
        let rows: Vec<serde_json::Value> = (0..self.eta_primes.len())
            .map(|i| {
                serde_json::json!({
                    "level": i + 1,
                    "eta_prime": self.eta_primes[i].to_decimal_shortest(),
                    "alpha": self.alphas[i].to_decimal_shortest(),
                    "epsilon": self.epsilons[i].to_decimal_shortest(),
                    "t_minus": self.t_minus[i].to_decimal_shortest(),
                    "t_plus": self.t_plus[i].to_decimal_shortest(),
                })
            })
            .collect();
        serde_json::to_string_pretty(&rows).expect("JSON rows serialize")
    }
}

// ----- cascade runner -------------------------------------------------------

/// How eps is chosen inside its admissible window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum DrawPolicy {
    /// Uniform draw from the seeded stream.
    Random,
    /// Deterministic extremal draw at the top of the window; used by
    /// [`deviation_order`] so the fitted slope is reproducible.
    PinnedHigh,
}

/// Runs the cascade described by `config` with seeded uniform draws.
pub fn run_cascade(config: &CascadeConfig) -> Result<CascadeTrace> {
    run_cascade_with_policy(config, DrawPolicy::Random)
}

pub(crate) fn run_cascade_with_policy(
    config: &CascadeConfig,
    policy: DrawPolicy,
) -> Result<CascadeTrace> {
    config.validate()?;
    let p = config
        .precision
        .max(bigscale::required_precision(&config.eta, config.depth, DEFAULT_GUARD_DIGITS)?);
    let eta = config.eta.with_precision(p);
    let c = config.epsilon_fraction.with_precision(p);
    let zero = BigReal::zero(p);
    let one = BigReal::one(p);
    // Draws stop short of the positivity cap by the relative margin delta.
    let one_minus_delta = one.sub(&one.mul_exp2(DRAW_MARGIN_LOG2));

    let mut rng = SplitMix64::new(config.seed);
    let depth = config.depth as usize;
    let mut trace = CascadeTrace {
        eta: eta.clone(),
        precision: p,
        seed_used: config.seed,
        eta_primes: Vec::with_capacity(depth),
        alphas: Vec::with_capacity(depth),
        epsilons: Vec::with_capacity(depth),
        t_minus: Vec::with_capacity(depth),
        t_plus: Vec::with_capacity(depth),
    };

    let mut prev_eta = eta;
    let mut prev_alpha = one.clone();
    for entry in 1..=config.depth {
        // u_n = (alpha_{n-1} * eta'_{n-1})^2. On an all-trivial prefix the
        // multiplication by exactly 1 preserves bits, so u_n is the pure
        // squaring ladder.
        let u = prev_alpha.mul(&prev_eta).square();
        if u >= one {
            return Err(SflError::Domain(format!(
                "cascade left the contraction regime at entry {entry}"
            )));
        }
        let (eps, alpha, eta_n) = if config.schedule.applies_to_entry(entry) {
            // Admissible eps window. Positivity of eta'_n needs
            // eps < cap = u/(1-u); the nominal upper bound c * eta'_{n-1}
            // honors the draw decision, and when it degenerates (c at or
            // below eta'_{n-1}, so nominal <= low) the window widens to the
            // cap instead of emptying out.
            let low = prev_eta.square();
            let cap = u.div(&one.sub(&u))?;
            let nominal = c.mul(&prev_eta);
            let upper = if nominal > low {
                nominal.min(&cap)
            } else {
                cap.clone()
            };
            let high = low.add(&one_minus_delta.mul(&upper.sub(&low)));
            // Every rescaled entry narrows the next window by another
            // factor of eps, so a long rescaled chain eventually squeezes
            // it below any fixed precision; fail loudly instead of
            // fabricating draws.
            if !(low < high) {
                return Err(SflError::Domain(format!(
                    "entry {entry}: the draw window collapsed at {p} bits; \
                     raise the precision or reduce the rescaled depth"
                )));
            }

            let mut accepted = None;
            for _ in 0..MAX_REDRAWS {
                let eps = match policy {
                    DrawPolicy::PinnedHigh => high.clone(),
                    DrawPolicy::Random => rng.draw_in(&low, &high),
                };
                // eta'_n = alpha_n * u - eps = u - eps * (1 - u).
                let eta_n = u.sub(&eps.mul(&one.sub(&u)));
                if eta_n > zero {
                    accepted = Some((eps, eta_n));
                    break;
                }
                if policy == DrawPolicy::PinnedHigh {
                    break; // deterministic draw; retrying cannot differ
                }
            }
            let Some((eps, eta_n)) = accepted else {
                return Err(SflError::Domain(format!(
                    "entry {entry}: every draw collapsed the scale to zero at \
                     {p} bits; raise the precision"
                )));
            };
            let alpha = one.add(&eps);
            (eps, alpha, eta_n)
        } else {
            (zero.clone(), one.clone(), u)
        };

        if eta_n >= prev_eta {
            return Err(SflError::Domain(format!(
                "scales failed to decrease at entry {entry}: {eta_n} >= {prev_eta}"
            )));
        }
        trace.t_minus.push(one.sub(&eta_n));
        trace.t_plus.push(one.add(&eta_n));
        trace.eta_primes.push(eta_n.clone());
        trace.alphas.push(alpha.clone());
        trace.epsilons.push(eps);
        prev_eta = eta_n;
        prev_alpha = alpha;
    }
    Ok(trace)
}

/// prod_{k=0}^{depth} (1 + eta^(2^k)), the factor product of the standard
/// solution at t = 1 - eta. Satisfies the telescoping identity
/// (1 - eta) * result = 1 - eta^(2^(depth+1)).
pub fn standard_product(eta: &BigReal, depth: u32) -> Result<BigReal> {
    let p = eta.prec();
    let zero = BigReal::zero(p);
    let one = BigReal::one(p);
    if !(eta > &zero && eta < &one) {
        return Err(SflError::Domain(format!(
            "standard_product needs eta strictly inside (0, 1), got {eta}"
        )));
    }
    let mut s = eta.clone();
    let mut prod = one.add(&s);
    for _ in 1..=depth {
        s = s.square();
        prod = prod.mul(&one.add(&s));
    }
    Ok(prod)
}

// ----- generalized solution --------------------------------------------------

/// The multiplicative-product solution built from a cascade trace:
///
///   tau(t) = C * fluctuation * prod_{k=0}^{depth} 1 / (1 + (1-t)^(2^k))
///
/// with C = 1 and fluctuation = prod_n (1 + eta^(2^n)) / (1 + eta'_n).
///
/// On a never-rescaled trace every fluctuation factor is exactly 1 (the
/// numerator and denominator are bit-identical), so tau reduces to the
/// standard solution up to the truncation tail and tau(1) = 1 exactly. On
/// rescaled traces the anchor value tau(1) = fluctuation sits within
/// O(eta^(2^(m-1))) of 1, where m is the first rescaled position; that
/// residual is precisely the deviation the fit operators measure.
#[derive(Debug, Clone)]
pub struct GeneralizedSolution {
    pub trace: CascadeTrace,
    /// Anchor normalization C; identically 1 under the convention above.
    pub normalization_c: BigReal,
    /// [1/(1 + eta)] followed by the 1/t'_{n+} per entry; the solution
    /// value at t = 1 - eta equals the product of these factors.
    pub factors: Vec<BigReal>,
    /// Constant ratio of the generalized to the standard factor product.
    pub fluctuation: BigReal,
}

/// Builds the product solution for a trace.
pub fn generalized_solution(trace: &CascadeTrace) -> Result<GeneralizedSolution> {
    let p = trace.precision;
    let one = BigReal::one(p);
    let depth = trace.eta_primes.len();
    let mut factors = Vec::with_capacity(depth + 1);
    let mut fluctuation = one.clone();
    if depth > 0 {
        factors.push(one.add(&trace.eta).recip()?);
        let mut s = trace.eta.clone();
        for n in 0..depth {
            s = s.square(); // eta^(2^(n+1)), same squaring chain as the ladder
            let ladder_factor = one.add(&s);
            fluctuation = fluctuation.mul(&ladder_factor.div(&trace.t_plus[n])?);
            factors.push(trace.t_plus[n].recip()?);
        }
    }
    Ok(GeneralizedSolution {
        trace: trace.clone(),
        normalization_c: one,
        factors,
        fluctuation,
    })
}

impl GeneralizedSolution {
    pub fn depth(&self) -> u32 {
        self.trace.depth()
    }

    /// Evaluates the solution at t, for t strictly inside (0, 2).
    ///
    /// The depth-0 solution is the standard one and returns t exactly.
    pub fn value(&self, t: &BigReal) -> Result<BigReal> {
        let p = self.trace.precision.max(t.prec());
        let zero = BigReal::zero(p);
        let two = BigReal::from_u64(2, p);
        if !(t > &zero && t < &two) {
            return Err(SflError::Domain(format!(
                "evaluation point must lie strictly inside (0, 2), got {t}"
            )));
        }
        if self.trace.eta_primes.is_empty() {
            return Ok(t.with_precision(p));
        }
        let one = BigReal::one(p);
        let mut x = one.sub(&t.with_precision(p)); // |1 - t| < 1
        let mut acc = self.fluctuation.with_precision(p);
        for k in 0..=self.trace.eta_primes.len() {
            if k > 0 {
                x = x.square();
            }
            acc = acc.div(&one.add(&x))?;
        }
        Ok(acc)
    }

    /// The ratio tau(t) / t against the standard solution.
    pub fn ratio(&self, t: &BigReal) -> Result<BigReal> {
        self.value(t)?.div(t)
    }
}

// ----- deviation fit -----------------------------------------------------------

/// Outcome of [`deviation_order`].
#[derive(Debug, Clone)]
pub enum DeviationOrder {
    /// The template schedule never rescales: the family is the standard
    /// solution and the deviation carries no scaling order to fit.
    Standard,
    /// Fitted log-log slope of the deviation against eta.
    Slope(BigReal),
}

/// Fits the scaling order of the solution deviation |tau(t-)/t- - 1|
/// against eta over a grid, with rescaling starting at ladder position
/// `start_level` and eps pinned to the top of its window so the fit is
/// deterministic. The expected slope is 2^(start_level - 1).
///
/// Grid points must be strictly increasing, inside (0, 0.3), and at least
/// 4; the template supplies depth, precision, and epsilon fraction.
pub fn deviation_order(
    template: &CascadeConfig,
    start_level: u32,
    eta_grid: &[BigReal],
) -> Result<DeviationOrder> {
    template.validate()?;
    if start_level < 2 {
        return Err(SflError::Domain(
            "start level is a ladder position and begins at 2".into(),
        ));
    }
    if eta_grid.len() < 4 {
        return Err(SflError::Domain(format!(
            "deviation fit needs at least 4 grid points, got {}",
            eta_grid.len()
        )));
    }
    let cap = BigReal::parse_decimal("0.3", 64).expect("literal parses");
    for pair in eta_grid.windows(2) {
        if !(pair[0] < pair[1]) {
            return Err(SflError::Domain(
                "eta grid must be strictly increasing".into(),
            ));
        }
    }
    for eta in eta_grid {
        let zero = BigReal::zero(eta.prec());
        if !(eta > &zero && eta < &cap) {
            return Err(SflError::Domain(format!(
                "eta grid points must lie in (0, 0.3), got {eta}"
            )));
        }
    }
    if template.schedule == RescalingSchedule::Never {
        return Ok(DeviationOrder::Standard);
    }
    if template.depth < start_level - 1 {
        return Err(SflError::Domain(format!(
            "depth {} never reaches ladder position {start_level}",
            template.depth
        )));
    }

    // One pinned run per grid point; tasks are independent and collected
    // in grid order.
    let points: Result<Vec<(BigReal, BigReal)>> =
        map_indexed(eta_grid.len(), |i| -> Result<(BigReal, BigReal)> {
            let cfg = CascadeConfig {
                eta: eta_grid[i].with_precision(template.precision),
                schedule: RescalingSchedule::FromLevel(start_level),
                ..template.clone()
            };
            let trace = run_cascade_with_policy(&cfg, DrawPolicy::PinnedHigh)?;
            let sol = generalized_solution(&trace)?;
            let p = trace.precision;
            let t_minus = BigReal::one(p).sub(&eta_grid[i].with_precision(p));
            let dev = sol.ratio(&t_minus)?.sub(&BigReal::one(p)).abs();
            if dev.is_zero() {
                return Err(SflError::DegenerateFit(format!(
                    "deviation underflowed at {p} bits for eta = {}",
                    eta_grid[i]
                )));
            }
            Ok((eta_grid[i].with_precision(p).ln()?, dev.ln()?))
        })
        .into_iter()
        .collect();
    let points = points?;

    Ok(DeviationOrder::Slope(fit_slope(&points)))
}

/// Least-squares slope of y against x.
fn fit_slope(points: &[(BigReal, BigReal)]) -> BigReal {
    let p = points
        .iter()
        .map(|(x, y)| x.prec().max(y.prec()))
        .max()
        .unwrap_or(bigscale::MIN_PRECISION);
    let n = BigReal::from_u64(points.len() as u64, p);
    let mut sx = BigReal::zero(p);
    let mut sy = BigReal::zero(p);
    for (x, y) in points {
        sx = sx.add(x);
        sy = sy.add(y);
    }
    let mx = sx.div(&n).expect("n >= 4");
    let my = sy.div(&n).expect("n >= 4");
    let mut num = BigReal::zero(p);
    let mut den = BigReal::zero(p);
    for (x, y) in points {
        let dx = x.sub(&mx);
        num = num.add(&dx.mul(&y.sub(&my)));
        den = den.add(&dx.square());
    }
    num.div(&den).expect("distinct grid points give positive variance")
}

// ----- finite termination ---------------------------------------------------

/// Runs a cascade whose rescaling terminates at the schedule's level and
/// then continues trivially out to `total_depth`, returning the product
/// solution of the extended trace.
///
/// Past the termination level every factor pair cancels exactly, so the
/// ratio tau(t)/t settles to a constant; the residual variation across
/// evaluation points is bounded by 2 * eta'^2 at the first trivial entry.
///
/// The schedule must be `until:n` with n >= 2 (or `never`, which
/// degenerates to the standard solution) and total_depth must leave
/// unwinding room: total_depth >= n + 2.
pub fn terminate_and_unwind(
    config: &CascadeConfig,
    total_depth: u32,
) -> Result<GeneralizedSolution> {
    match &config.schedule {
        RescalingSchedule::UntilLevel(n) => {
            if total_depth < n + 2 {
                return Err(SflError::Domain(format!(
                    "total_depth {total_depth} leaves no unwinding room past \
                     level {n}; need at least {}",
                    n + 2
                )));
            }
        }
        RescalingSchedule::Never => {
            if total_depth < 1 {
                return Err(SflError::Domain("total_depth must be at least 1".into()));
            }
        }
        other => {
            return Err(SflError::Domain(format!(
                "terminate_and_unwind needs an until:n schedule, got {other}"
            )));
        }
    }
    let cfg = CascadeConfig {
        depth: total_depth,
        ..config.clone()
    };
    let trace = run_cascade(&cfg)?;
    generalized_solution(&trace)
}
