//! Locally-optimal hyperparameter search on a discrete grid: learning rate
//! on a {1,3}x10^-k ladder, epoch counts as powers of two, weight decay as
//! {0} plus 0.1 times powers of two. A point is certified when none of its
//! axis neighbors (one index up or down on exactly one axis) evaluates
//! strictly better. Every oracle call is cached; a point is never evaluated
//! twice within a search.

use crate::trainer::Hyper;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

#[derive(Debug, thiserror::Error)]
pub enum SearchError {
    #[error("evaluation budget of {budget} exhausted before certification")]
    BudgetExhausted { budget: usize },
    #[error("point {0:?} lies outside the grid")]
    OffGrid(GridPoint),
}

/// The discrete hyperparameter lattice. Axes are strictly increasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridAxes {
    pub lr: Vec<f64>,
    pub epochs: Vec<u32>,
    pub wd: Vec<f64>,
    /// Optional fourth axis; absent means batch size is fixed by the caller.
    pub batch: Option<Vec<u32>>,
}

impl GridAxes {
    /// Full-scale caps: lr up to 3e-3, epochs up to 64, wd up to 6.4.
    pub fn full() -> Self {
        GridAxes {
            lr: vec![1e-5, 3e-5, 1e-4, 3e-4, 1e-3, 3e-3],
            epochs: vec![1, 2, 4, 8, 16, 32, 64],
            wd: vec![0.0, 0.1, 0.2, 0.4, 0.8, 1.6, 3.2, 6.4],
            batch: None,
        }
    }

    /// Reduced desk grid: same value families, smaller caps.
    pub fn desk() -> Self {
        GridAxes {
            lr: vec![3e-4, 1e-3, 3e-3],
            epochs: vec![1, 2, 4, 8, 16, 32],
            wd: vec![0.0, 0.1, 0.2, 0.4, 0.8, 1.6],
            batch: None,
        }
    }

    pub fn validate(&self) {
        assert!(self.lr.windows(2).all(|w| w[0] < w[1]), "lr axis must increase");
        assert!(self.epochs.windows(2).all(|w| w[0] < w[1]), "epoch axis must increase");
        assert!(self.wd.windows(2).all(|w| w[0] < w[1]), "wd axis must increase");
        if let Some(b) = &self.batch {
            assert!(b.windows(2).all(|w| w[0] < w[1]), "batch axis must increase");
        }
        assert!(!self.lr.is_empty() && !self.epochs.is_empty() && !self.wd.is_empty());
    }

    /// The same grid with the weight-decay axis pinned to a single value
    /// (the standard-practice recipe fixes wd = 0.1).
    pub fn with_fixed_wd(&self, wd: f64) -> GridAxes {
        GridAxes { wd: vec![wd], ..self.clone() }
    }

    pub fn contains(&self, p: &GridPoint) -> bool {
        p.lr < self.lr.len()
            && p.epochs < self.epochs.len()
            && p.wd < self.wd.len()
            && match (&self.batch, p.batch) {
                (Some(axis), Some(i)) => i < axis.len(),
                (None, None) => true,
                _ => false,
            }
    }

    /// Dereference a point into a concrete hyperparameter tuple.
    pub fn hyper_at(&self, p: &GridPoint, default_batch: u32) -> Hyper {
        assert!(self.contains(p), "point off grid");
        Hyper {
            peak_lr: self.lr[p.lr],
            epochs: self.epochs[p.epochs],
            weight_decay: self.wd[p.wd],
            batch_size: match (&self.batch, p.batch) {
                (Some(axis), Some(i)) => axis[i],
                _ => default_batch,
            },
        }
    }

    /// Nearest grid value on the wd axis; ties resolve to the lower value.
    pub fn snap_wd(&self, wd: f64) -> f64 {
        let mut best = self.wd[0];
        let mut best_d = (wd - best).abs();
        for &v in &self.wd[1..] {
            let d = (wd - v).abs();
            if d < best_d {
                best = v;
                best_d = d;
            }
        }
        best
    }

    /// Grid midpoint, the default search seed when nothing better is known.
    pub fn midpoint(&self) -> GridPoint {
        GridPoint {
            lr: self.lr.len() / 2,
            epochs: self.epochs.len() / 2,
            wd: self.wd.len() / 2,
            batch: self.batch.as_ref().map(|b| b.len() / 2),
        }
    }

    pub fn all_points(&self) -> Vec<GridPoint> {
        let batches: Vec<Option<usize>> = match &self.batch {
            Some(axis) => (0..axis.len()).map(Some).collect(),
            None => vec![None],
        };
        let mut out = Vec::new();
        for lr in 0..self.lr.len() {
            for epochs in 0..self.epochs.len() {
                for wd in 0..self.wd.len() {
                    for &batch in &batches {
                        out.push(GridPoint { lr, epochs, wd, batch });
                    }
                }
            }
        }
        out
    }
}

/// Indices into the grid axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridPoint {
    pub lr: usize,
    pub epochs: usize,
    pub wd: usize,
    pub batch: Option<usize>,
}

/// All points differing by one index step on exactly one axis, clipped at
/// the axis ends. An interior point on m axes has 2m neighbors.
pub fn neighbors(axes: &GridAxes, p: &GridPoint) -> Vec<GridPoint> {
    assert!(axes.contains(p));
    let mut out = Vec::with_capacity(8);
    let mut push = |q: GridPoint| {
        if axes.contains(&q) {
            out.push(q);
        }
    };
    if p.lr > 0 {
        push(GridPoint { lr: p.lr - 1, ..*p });
    }
    push(GridPoint { lr: p.lr + 1, ..*p });
    if p.epochs > 0 {
        push(GridPoint { epochs: p.epochs - 1, ..*p });
    }
    push(GridPoint { epochs: p.epochs + 1, ..*p });
    if p.wd > 0 {
        push(GridPoint { wd: p.wd - 1, ..*p });
    }
    push(GridPoint { wd: p.wd + 1, ..*p });
    if let Some(b) = p.batch {
        if b > 0 {
            push(GridPoint { batch: Some(b - 1), ..*p });
        }
        push(GridPoint { batch: Some(b + 1), ..*p });
    }
    out
}

/// A certified local optimum: the point, its loss, and the neighbor
/// evaluations proving no strict improvement exists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertifiedOptimum {
    pub point: GridPoint,
    pub hyper: Hyper,
    pub loss: f64,
    pub neighbor_losses: Vec<(GridPoint, f64)>,
    pub evaluations_used: usize,
    pub certified: bool,
}

/// One oracle evaluation in search order. `cached` marks lookups that did
/// not cost a fresh evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalEvent {
    pub point: GridPoint,
    pub hyper: Hyper,
    pub loss: f64,
    pub cached: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchTranscript {
    pub events: Vec<EvalEvent>,
    pub optimum: CertifiedOptimum,
}

struct CachedOracle<'a, F> {
    oracle: F,
    axes: &'a GridAxes,
    default_batch: u32,
    cache: HashMap<GridPoint, f64>,
    events: Vec<EvalEvent>,
    fresh_evals: usize,
}

impl<'a, F: FnMut(&GridPoint, &Hyper) -> f64> CachedOracle<'a, F> {
    fn eval(&mut self, p: &GridPoint) -> f64 {
        let hyper = self.axes.hyper_at(p, self.default_batch);
        if let Some(&loss) = self.cache.get(p) {
            self.events.push(EvalEvent { point: *p, hyper, loss, cached: true });
            return loss;
        }
        let loss = (self.oracle)(p, &hyper);
        self.cache.insert(*p, loss);
        self.fresh_evals += 1;
        self.events.push(EvalEvent { point: *p, hyper, loss, cached: false });
        loss
    }
}

/// App-style descent: evaluate the seed, then repeatedly evaluate all
/// neighbors of the incumbent and move to the strictly best improving
/// neighbor (ties prefer lower epochs, then lower wd, then lower lr). When
/// no neighbor strictly improves, the incumbent is certified. Divergent runs
/// should be fed in as +infinity.
pub fn coordinate_descent(
    axes: &GridAxes,
    oracle: impl FnMut(&GridPoint, &Hyper) -> f64,
    seed_point: GridPoint,
    default_batch: u32,
    budget: usize,
) -> Result<SearchTranscript, SearchError> {
    axes.validate();
    if !axes.contains(&seed_point) {
        return Err(SearchError::OffGrid(seed_point));
    }
    let mut ora = CachedOracle {
        oracle,
        axes,
        default_batch,
        cache: HashMap::new(),
        events: Vec::new(),
        fresh_evals: 0,
    };
    assert!(budget > neighbors(axes, &seed_point).len(), "budget below one certification round");

    let mut incumbent = seed_point;
    let mut incumbent_loss = ora.eval(&seed_point);
    loop {
        let nbrs = neighbors(axes, &incumbent);
        let mut losses = Vec::with_capacity(nbrs.len());
        let mut exhausted = false;
        for q in &nbrs {
            if ora.fresh_evals >= budget && !ora.cache.contains_key(q) {
                exhausted = true;
                break;
            }
            losses.push((*q, ora.eval(q)));
        }
        if exhausted {
            let optimum = CertifiedOptimum {
                point: incumbent,
                hyper: axes.hyper_at(&incumbent, default_batch),
                loss: incumbent_loss,
                neighbor_losses: losses,
                evaluations_used: ora.fresh_evals,
                certified: false,
            };
            return Ok(SearchTranscript { events: ora.events, optimum });
        }
        // strictly-better neighbors only; equal loss never moves
        let mut best: Option<(GridPoint, f64)> = None;
        for &(q, l) in &losses {
            if l < incumbent_loss {
                let better = match best {
                    None => true,
                    Some((bp, bl)) => {
                        l < bl
                            || (l == bl
                                && (q.epochs, q.wd, q.lr, q.batch.unwrap_or(0))
                                    < (bp.epochs, bp.wd, bp.lr, bp.batch.unwrap_or(0)))
                    }
                };
                if better {
                    best = Some((q, l));
                }
            }
        }
        match best {
            Some((q, l)) => {
                debug_assert!(l < incumbent_loss);
                incumbent = q;
                incumbent_loss = l;
            }
            None => {
                let optimum = CertifiedOptimum {
                    point: incumbent,
                    hyper: axes.hyper_at(&incumbent, default_batch),
                    loss: incumbent_loss,
                    neighbor_losses: losses,
                    evaluations_used: ora.fresh_evals,
                    certified: true,
                };
                return Ok(SearchTranscript { events: ora.events, optimum });
            }
        }
    }
}

/// True iff no axis neighbor evaluates strictly better than `point`.
pub fn certify(
    axes: &GridAxes,
    mut oracle: impl FnMut(&GridPoint, &Hyper) -> f64,
    point: &GridPoint,
    default_batch: u32,
) -> bool {
    let own = oracle(point, &axes.hyper_at(point, default_batch));
    neighbors(axes, point)
        .iter()
        .all(|q| oracle(q, &axes.hyper_at(q, default_batch)) >= own)
}
