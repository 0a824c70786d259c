//! Saturating power laws `L(x) = A / x^alpha + E`: least-squares fitting,
//! asymptote extraction, tiered (nested) limits, data-requirement
//! interpolation, data-efficiency ratios, and spread-based sensitivity
//! checks.
//!
//! The fitter is a damped Gauss-Newton (Levenberg) iteration. `A` and
//! `alpha` are optimized in log space so they stay positive; `E` is
//! projected onto `E >= 0`. Saturating laws have long flat valleys, so every
//! fit runs from a small deterministic multistart and keeps the best
//! residual, breaking ties toward the smaller asymptote.

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum FitError {
    #[error("need at least {need} distinct x values, got {got}")]
    DegenerateInput { need: usize, got: usize },
    #[error("target loss {target} is at or below the asymptote {asymptote}; unreachable at any data size")]
    UnreachableTarget { target: f64, asymptote: f64 },
    #[error("group {group} failed to fit: {source}")]
    Group { group: String, source: Box<FitError> },
    #[error("tier axes empty or inconsistent with point coordinates")]
    BadTiers,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    /// (A0, alpha0, E0) start; the remaining starts are jittered from it.
    pub initial_guess: (f64, f64, f64),
    pub max_iterations: usize,
    pub tolerance: f64,
    pub multistart_count: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            initial_guess: (1.0, 0.5, 2.0),
            max_iterations: 200,
            tolerance: 1e-12,
            multistart_count: 8,
        }
    }
}

/// A fitted law. `converged == false` flags a fit that hit the iteration cap
/// with residual above tolerance; it is reported, never silently dropped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    pub a: f64,
    pub alpha: f64,
    pub e: f64,
    pub residual_sse: f64,
    pub points: Vec<(f64, f64)>,
    pub converged: bool,
}

impl PowerLawFit {
    pub fn predict(&self, x: f64) -> f64 {
        self.a / x.powf(self.alpha) + self.e
    }
}

/// The fitted asymptote: the best possible loss of a monotone recipe as its
/// scaling axis goes to infinity.
pub fn asymptote(fit: &PowerLawFit) -> f64 {
    fit.e
}

fn sse(points: &[(f64, f64)], a: f64, alpha: f64, e: f64) -> f64 {
    points
        .iter()
        .map(|&(x, l)| {
            let r = a / x.powf(alpha) + e - l;
            r * r
        })
        .sum()
}

/// (A, alpha, E, sse, converged) from one descent.
type FitCandidate = (f64, f64, f64, f64, bool);

/// One damped Gauss-Newton descent from (a0, alpha0, e0). Parameters are
/// (log A, log alpha, E); the objective never increases across accepted
/// iterations.
fn gauss_newton(points: &[(f64, f64)], start: (f64, f64, f64), opts: &FitOptions) -> FitCandidate {
    let (mut la, mut lal, mut e) = (start.0.max(1e-12).ln(), start.1.max(1e-12).ln(), start.2.max(0.0));
    let mut lambda = 1e-3;
    let mut cur = sse(points, la.exp(), lal.exp(), e);
    let mut converged = false;
    for _ in 0..opts.max_iterations {
        let a = la.exp();
        let alpha = lal.exp();
        // normal equations J^T J + lambda I, J^T r in the 3 parameters
        let mut jtj = [[0.0f64; 3]; 3];
        let mut jtr = [0.0f64; 3];
        for &(x, l) in points {
            let pw = x.powf(alpha);
            let pred = a / pw + e;
            let r = pred - l;
            // d pred / d logA = A/x^alpha; d/d logAlpha = -A alpha ln(x)/x^alpha; d/dE = 1
            let j = [a / pw, -a * alpha * x.ln() / pw, 1.0];
            for i in 0..3 {
                jtr[i] += j[i] * r;
                for k in 0..3 {
                    jtj[i][k] += j[i] * j[k];
                }
            }
        }
        // solve (JtJ + lambda diag) step = -Jtr via Cramer on the 3x3
        let mut accepted = false;
        for _ in 0..25 {
            let mut m = jtj;
            for (i, row) in m.iter_mut().enumerate() {
                row[i] += lambda * (1.0 + jtj[i][i]);
            }
            let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
                - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
                + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
            if det.abs() < 1e-300 {
                lambda *= 10.0;
                continue;
            }
            let b = [-jtr[0], -jtr[1], -jtr[2]];
            let solve = |col: usize| {
                let mut mm = m;
                for i in 0..3 {
                    mm[i][col] = b[i];
                }
                (mm[0][0] * (mm[1][1] * mm[2][2] - mm[1][2] * mm[2][1])
                    - mm[0][1] * (mm[1][0] * mm[2][2] - mm[1][2] * mm[2][0])
                    + mm[0][2] * (mm[1][0] * mm[2][1] - mm[1][1] * mm[2][0]))
                    / det
            };
            let step = [solve(0), solve(1), solve(2)];
            let (nla, nlal) = (la + step[0], lal + step[1]);
            let ne = (e + step[2]).max(0.0); // project E >= 0
            if !nla.is_finite() || !nlal.is_finite() || nlal > 50.0 || nla > 700.0 {
                lambda *= 10.0;
                continue;
            }
            let next = sse(points, nla.exp(), nlal.exp(), ne);
            if next.is_finite() && next <= cur {
                let gain = cur - next;
                la = nla;
                lal = nlal;
                e = ne;
                cur = next;
                lambda = (lambda * 0.3).max(1e-12);
                accepted = true;
                if gain < opts.tolerance * (1.0 + cur) {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            converged = true; // damping exhausted: local stationarity
            break;
        }
        if converged {
            break;
        }
    }
    (la.exp(), lal.exp(), e, cur, converged)
}

/// Least-squares fit of `A/x^alpha + E` with non-negativity on all three
/// parameters. Requires three distinct x values. A fit that fails to
/// converge is returned flagged, not hidden.
pub fn fit_power_law(points: &[(f64, f64)], options: &FitOptions) -> Result<PowerLawFit, FitError> {
    let mut xs: Vec<f64> = points.iter().map(|p| p.0).collect();
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    xs.dedup();
    if xs.len() < 3 {
        return Err(FitError::DegenerateInput { need: 3, got: xs.len() });
    }
    assert!(points.iter().all(|p| p.0 > 0.0), "x values must be positive");

    let min_loss = points.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let max_loss = points.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    let mean_loss = points.iter().map(|p| p.1).sum::<f64>() / points.len() as f64;
    let mut starts = vec![options.initial_guess];
    // data-informed start: E near the floor, A sized to the observed spread
    starts.push(((max_loss - min_loss).max(1e-3), 1.0, (min_loss * 0.9).max(0.0)));
    // flat-law candidate: vanishing power term, E at the mean
    starts.push((1e-8, 1.0, mean_loss.max(0.0)));
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x5ca1e);
    while starts.len() < options.multistart_count.max(2) {
        let (a0, al0, e0) = options.initial_guess;
        starts.push((
            a0 * (rng.gen::<f64>() * 4.0 - 2.0f64).exp2(),
            al0 * (rng.gen::<f64>() * 2.0 - 1.0f64).exp2(),
            (e0 * (rng.gen::<f64>() * 2.0)).max(0.0),
        ));
    }

    let mut best: Option<FitCandidate> = None;
    for s in starts {
        let cand = gauss_newton(points, s, options);
        let better = match &best {
            None => true,
            Some(b) => {
                cand.3 < b.3 * (1.0 - 1e-12) || ((cand.3 - b.3).abs() <= 1e-12 * b.3.max(1e-300) && cand.2 < b.2)
            }
        };
        if better {
            best = Some(cand);
        }
    }
    let (a, alpha, e, residual_sse, converged) = best.expect("at least one start");
    Ok(PowerLawFit { a, alpha, e, residual_sse, points: points.to_vec(), converged })
}

/// Scaling axes a tiered fit can nest over, innermost first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TierAxis {
    /// Ensemble member count K.
    Members,
    /// Parameter count N (billions at full scale; raw works too, units only
    /// rescale A).
    Params,
    /// Seed token count D.
    Tokens,
}

/// A point in a tiered fit: one coordinate per tier axis plus the loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TierPoint {
    pub coords: Vec<f64>,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TierLevel {
    pub axis: TierAxis,
    /// Key = outer coordinates of the group, joined with ':'.
    pub fits: Vec<(String, PowerLawFit)>,
}

/// Nested limits: fit laws along the innermost axis per group, then fit the
/// asymptotes along the next axis, and so on. `final_asymptote` is the E of
/// the outermost law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TieredFit {
    pub tier_axes: Vec<TierAxis>,
    pub levels: Vec<TierLevel>,
    pub final_asymptote: f64,
    /// Set when the axis order differs from members-then-params-then-tokens,
    /// the order the nesting procedure was designed around.
    pub nonstandard_order: bool,
}

impl TieredFit {
    pub fn outer_fit(&self) -> &PowerLawFit {
        &self.levels.last().expect("at least one level").fits[0].1
    }
}

fn group_key(coords: &[f64]) -> String {
    coords.iter().map(|c| format!("{c}")).collect::<Vec<_>>().join(":")
}

/// Canonical nesting order: K innermost, then N, then D.
pub fn is_standard_tier_order(axes: &[TierAxis]) -> bool {
    let rank = |a: &TierAxis| match a {
        TierAxis::Members => 0,
        TierAxis::Params => 1,
        TierAxis::Tokens => 2,
    };
    axes.windows(2).all(|w| rank(&w[0]) < rank(&w[1]))
}

pub fn tiered_fit(
    points: &[TierPoint],
    tier_axes: &[TierAxis],
    options: &FitOptions,
) -> Result<TieredFit, FitError> {
    if tier_axes.is_empty() || points.iter().any(|p| p.coords.len() != tier_axes.len()) {
        return Err(FitError::BadTiers);
    }
    let nonstandard_order = !is_standard_tier_order(tier_axes);
    let mut levels = Vec::new();
    let mut current: Vec<TierPoint> = points.to_vec();
    for (depth, axis) in tier_axes.iter().enumerate() {
        // group by the outer coordinates (everything after the innermost)
        type Group = (Vec<f64>, Vec<(f64, f64)>);
        let mut groups: Vec<Group> = Vec::new();
        for p in &current {
            let outer = p.coords[1..].to_vec();
            let pt = (p.coords[0], p.loss);
            match groups.iter_mut().find(|(o, _)| *o == outer) {
                Some((_, v)) => v.push(pt),
                None => groups.push((outer, vec![pt])),
            }
        }
        let mut fits = Vec::new();
        let mut next = Vec::new();
        for (outer, pts) in groups {
            let fit = fit_power_law(&pts, options).map_err(|e| FitError::Group {
                group: format!("{:?}[{}]", axis, group_key(&outer)),
                source: Box::new(e),
            })?;
            if depth + 1 < tier_axes.len() {
                next.push(TierPoint { coords: outer.clone(), loss: fit.e });
            }
            fits.push((group_key(&outer), fit));
        }
        levels.push(TierLevel { axis: *axis, fits });
        current = next;
    }
    let final_asymptote = levels.last().unwrap().fits[0].1.e;
    Ok(TieredFit { tier_axes: tier_axes.to_vec(), levels, final_asymptote, nonstandard_order })
}

/// Invert the law: the data size at which `baseline` predicts `target_loss`.
pub fn interpolate_data_requirement(baseline: &PowerLawFit, target_loss: f64) -> Result<f64, FitError> {
    if target_loss <= baseline.e {
        return Err(FitError::UnreachableTarget { target: target_loss, asymptote: baseline.e });
    }
    Ok((baseline.a / (target_loss - baseline.e)).powf(1.0 / baseline.alpha))
}

/// How many times more data the baseline needs to match `achieved_loss`
/// than the `d` tokens actually used: D'/D.
pub fn data_efficiency(baseline: &PowerLawFit, d: f64, achieved_loss: f64) -> Result<f64, FitError> {
    assert!(d > 0.0);
    Ok(interpolate_data_requirement(baseline, achieved_loss)? / d)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    pub asymptotes: Vec<f64>,
    pub spread: f64,
    pub threshold: f64,
    pub flagged: bool,
    pub fits: Vec<PowerLawFit>,
}

/// Refit each variant point-set independently and report the asymptote
/// spread (max - min), flagged when it exceeds `threshold`.
pub fn sensitivity(
    variants: &[Vec<(f64, f64)>],
    options: &FitOptions,
    threshold: f64,
) -> Result<SensitivityReport, FitError> {
    assert!(variants.len() >= 2, "need at least two variants");
    let fits = variants
        .iter()
        .enumerate()
        .map(|(i, pts)| {
            fit_power_law(pts, options).map_err(|e| FitError::Group {
                group: format!("variant{i}"),
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let asymptotes: Vec<f64> = fits.iter().map(|f| f.e).collect();
    let spread = asymptotes.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        - asymptotes.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(SensitivityReport { spread, threshold, flagged: spread > threshold, asymptotes, fits })
}
