//! Continuous-space refinement: center of mass over the top-k posterior
//! locations, then a moving average over the last w estimates.

use crate::error::{Error, Result};
use crate::estimators::{discrete_estimate, EstimatorConfig, PosteriorVector};
use crate::types::{Location, PassiveRadioMap, SignalWindow};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ContinuousConfig {
    /// Locations averaged by the center-of-mass step.
    pub k: usize,
    /// Length of the time-averaging window.
    pub w: usize,
}

impl Default for ContinuousConfig {
    fn default() -> Self {
        Self { k: 2, w: 5 }
    }
}

impl ContinuousConfig {
    pub fn validate(&self, locations: usize) -> Result<()> {
        if self.k == 0 || self.k > locations {
            return Err(Error::InvalidK {
                k: self.k,
                locations,
            });
        }
        if self.w == 0 {
            return Err(Error::InvalidW);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatePoint {
    pub x: f64,
    pub y: f64,
    /// Estimate index within the trace.
    pub t: usize,
}

impl EstimatePoint {
    pub fn to_location(&self, id: impl Into<String>) -> Location {
        Location::new(id, self.x, self.y)
    }
}

/// Weighted mean of `(weight, location)` pairs.
pub fn center_of_mass<'a>(weighted: impl IntoIterator<Item = (f64, &'a Location)>) -> (f64, f64) {
    let (mut sx, mut sy, mut total) = (0.0, 0.0, 0.0);
    for (w, loc) in weighted {
        sx += w * loc.x;
        sy += w * loc.y;
        total += w;
    }
    (sx / total, sy / total)
}

/// Center of mass of the `k` most probable locations, weighted by their
/// posterior probability. `locations` is in the same order as `posterior`.
pub fn spatial_average(
    posterior: &PosteriorVector,
    locations: &[Location],
    k: usize,
    t: usize,
) -> Result<EstimatePoint> {
    if k == 0 || k > locations.len() || locations.len() != posterior.len() {
        return Err(Error::InvalidK {
            k,
            locations: locations.len(),
        });
    }
    let ranked = posterior.ranked();
    let (x, y) = if k == 1 {
        let best = &locations[ranked[0]];
        (best.x, best.y)
    } else {
        center_of_mass(
            ranked[..k]
                .iter()
                .map(|&i| (posterior.normalized()[i], &locations[i])),
        )
    };
    Ok(EstimatePoint { x, y, t })
}

/// Mean of the last `min(w, t)` points of `history`.
pub fn time_average(history: &[EstimatePoint], w: usize) -> Result<EstimatePoint> {
    let last = history.last().ok_or(Error::EmptyHistory)?;
    if w == 0 {
        return Err(Error::InvalidW);
    }
    if w == 1 {
        return Ok(*last);
    }
    let tail = &history[history.len() - w.min(history.len())..];
    let n = tail.len() as f64;
    let (sx, sy) = tail
        .iter()
        .fold((0.0, 0.0), |(sx, sy), p| (sx + p.x, sy + p.y));
    Ok(EstimatePoint {
        x: sx / n,
        y: sy / n,
        t: last.t,
    })
}

/// Per-trace history of raw continuous estimates, owned by the caller.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EstimateHistory {
    points: Vec<EstimatePoint>,
}

impl EstimateHistory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn points(&self) -> &[EstimatePoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Append an estimate and return the time-averaged point.
    pub fn push_and_average(
        &mut self,
        mut point: EstimatePoint,
        w: usize,
    ) -> Result<EstimatePoint> {
        if w == 0 {
            return Err(Error::InvalidW);
        }
        point.t = self.points.len() + 1;
        self.points.push(point);
        time_average(&self.points, w)
    }
}

/// Discrete estimate, then spatial averaging, then time averaging against
/// `history`.
pub fn continuous_estimate(
    radio_map: &PassiveRadioMap,
    window: &SignalWindow,
    est_config: &EstimatorConfig,
    cont_config: &ContinuousConfig,
    history: &mut EstimateHistory,
) -> Result<EstimatePoint> {
    cont_config.validate(radio_map.locations().len())?;
    let (_, post) = discrete_estimate(radio_map, window, est_config)?;
    let point = spatial_average(&post, radio_map.locations(), cont_config.k, 0)?;
    history.push_and_average(point, cont_config.w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p(x: f64, y: f64, t: usize) -> EstimatePoint {
        EstimatePoint { x, y, t }
    }

    fn locs(coords: &[(f64, f64)]) -> Vec<Location> {
        coords
            .iter()
            .enumerate()
            .map(|(i, &(x, y))| Location::new(format!("l{i}"), x, y))
            .collect()
    }

    fn posterior(probs: &[f64]) -> PosteriorVector {
        PosteriorVector::from_log_scores(
            (0..probs.len()).map(|i| format!("l{i}")).collect(),
            probs.iter().map(|p| p.ln()).collect(),
        )
    }

    #[test]
    fn spatial_average_examples() {
        let l = locs(&[(0.0, 0.0), (4.0, 0.0), (9.0, 9.0)]);
        let post = posterior(&[0.6, 0.2, 0.2]);
        let top1 = spatial_average(&post, &l, 1, 0).unwrap();
        assert_eq!((top1.x, top1.y), (0.0, 0.0));

        // renormalized top-2 weights 0.75 / 0.25
        let est = spatial_average(&post, &l, 2, 0).unwrap();
        assert!((est.x - 1.0).abs() < 1e-12 && est.y == 0.0);

        let square = locs(&[(0.0, 0.0), (2.0, 0.0), (0.0, 2.0), (2.0, 2.0)]);
        let est = spatial_average(&posterior(&[0.25; 4]), &square, 4, 0).unwrap();
        assert!((est.x - 1.0).abs() < 1e-12 && (est.y - 1.0).abs() < 1e-12);

        assert!(matches!(
            spatial_average(&post, &l, 0, 0),
            Err(Error::InvalidK { k: 0, .. })
        ));
        assert!(matches!(
            spatial_average(&post, &l, 4, 0),
            Err(Error::InvalidK { k: 4, .. })
        ));
    }

    #[test]
    fn spatial_average_ties_prefer_lowest_index() {
        let l = locs(&[(0.0, 0.0), (4.0, 0.0), (8.0, 0.0)]);
        let post = posterior(&[0.2, 0.4, 0.4]);
        let top1 = spatial_average(&post, &l, 1, 0).unwrap();
        assert_eq!(top1.x, 4.0);
    }

    #[test]
    fn time_average_examples() {
        let h = [p(0.0, 0.0, 1), p(2.0, 0.0, 2), p(4.0, 0.0, 3)];
        assert_eq!(time_average(&h, 1).unwrap(), h[2]);
        assert_eq!(time_average(&h, 3).unwrap(), p(2.0, 0.0, 3));

        let short = [p(1.0, 1.0, 1), p(3.0, 3.0, 2)];
        assert_eq!(time_average(&short, 5).unwrap(), p(2.0, 2.0, 2));
        assert!(matches!(time_average(&[], 3), Err(Error::EmptyHistory)));
        assert!(matches!(time_average(&h, 0), Err(Error::InvalidW)));
    }

    #[test]
    fn history_numbers_estimates() {
        let mut h = EstimateHistory::new();
        h.push_and_average(p(0.0, 0.0, 0), 2).unwrap();
        let avg = h.push_and_average(p(2.0, 2.0, 0), 2).unwrap();
        assert_eq!(avg, p(1.0, 1.0, 2));
        let avg = h.push_and_average(p(4.0, 4.0, 0), 2).unwrap();
        assert_eq!(avg, p(3.0, 3.0, 3));
    }

    proptest! {
        #[test]
        fn spatial_average_stays_in_top_k_hull(
            raw in prop::collection::vec((0.01..1.0f64, -50.0..50.0f64, -50.0..50.0f64), 1..8),
            k_seed in 0usize..8,
        ) {
            let total: f64 = raw.iter().map(|r| r.0).sum();
            let probs: Vec<f64> = raw.iter().map(|r| r.0 / total).collect();
            let l = locs(&raw.iter().map(|r| (r.1, r.2)).collect::<Vec<_>>());
            let k = k_seed % raw.len() + 1;
            let post = posterior(&probs);
            let est = spatial_average(&post, &l, k, 0).unwrap();
            let top = &post.ranked()[..k];
            let (x0, x1) = top.iter().fold((f64::MAX, f64::MIN), |a, &i| (a.0.min(l[i].x), a.1.max(l[i].x)));
            let (y0, y1) = top.iter().fold((f64::MAX, f64::MIN), |a, &i| (a.0.min(l[i].y), a.1.max(l[i].y)));
            prop_assert!(est.x >= x0 - 1e-9 && est.x <= x1 + 1e-9);
            prop_assert!(est.y >= y0 - 1e-9 && est.y <= y1 + 1e-9);
        }

        #[test]
        fn time_average_bounds_and_fixed_point(
            xs in prop::collection::vec(-100.0..100.0f64, 1..20),
            w in 1usize..10,
            c in -100.0..100.0f64,
        ) {
            let h: Vec<_> = xs.iter().enumerate().map(|(i, &x)| p(x, -x, i + 1)).collect();
            let avg = time_average(&h, w).unwrap();
            let tail = &xs[xs.len() - w.min(xs.len())..];
            let lo = tail.iter().copied().fold(f64::MAX, f64::min);
            let hi = tail.iter().copied().fold(f64::MIN, f64::max);
            prop_assert!(avg.x >= lo - 1e-9 && avg.x <= hi + 1e-9);

            let constant: Vec<_> = (1..=xs.len()).map(|t| p(c, c, t)).collect();
            let avg = time_average(&constant, w).unwrap();
            prop_assert!((avg.x - c).abs() < 1e-9 && (avg.y - c).abs() < 1e-9);
        }
    }
}
