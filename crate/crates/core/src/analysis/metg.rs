use super::{AnalysisError, CurvePoint, MetgCurve, Real};

#[derive(Debug, Clone, PartialEq)]
pub enum MetgState<T> {
    /// The curve crosses the threshold.
    Value {
        metg_us: T,
        /// Point just below the threshold; `None` when the smallest grain
        /// already meets it on an otherwise non-monotone curve.
        below: Option<CurvePoint<T>>,
        above: CurvePoint<T>,
        /// More than one crossing existed; the smallest granularity was taken.
        non_monotone: bool,
    },
    /// Every point meets the threshold; METG is at most the smallest sample.
    Saturated { metg_us: T },
    /// No point meets the threshold.
    Unreachable,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetgResult<T> {
    pub threshold: T,
    pub state: MetgState<T>,
}

impl<T: Real> MetgResult<T> {
    /// Numeric METG, if one exists (saturated curves report their bound).
    pub fn metg_us(&self) -> Option<T> {
        match &self.state {
            MetgState::Value { metg_us, .. } | MetgState::Saturated { metg_us } => Some(*metg_us),
            MetgState::Unreachable => None,
        }
    }

    pub fn is_saturated(&self) -> bool {
        matches!(self.state, MetgState::Saturated { .. })
    }

    pub fn is_unreachable(&self) -> bool {
        matches!(self.state, MetgState::Unreachable)
    }
}

/// Log-linear interpolation of the granularity at which efficiency equals
/// `threshold` between `lo` (below) and `hi` (at or above).
fn interpolate<T: Real>(lo: &CurvePoint<T>, hi: &CurvePoint<T>, threshold: T) -> T {
    let frac = (threshold - lo.efficiency) / (hi.efficiency - lo.efficiency);
    if frac >= T::one() {
        return hi.granularity_us;
    }
    lo.granularity_us * (hi.granularity_us / lo.granularity_us).powf(frac)
}

/// Smallest task granularity sustaining `threshold` efficiency.
pub fn compute_metg<T: Real>(
    curve: &MetgCurve<T>,
    threshold: T,
) -> Result<MetgResult<T>, AnalysisError> {
    let points = &curve.points;
    if points.len() < 2 {
        return Err(AnalysisError::TooFewPoints(points.len()));
    }
    if points
        .windows(2)
        .any(|w| w[0].grain_iterations > w[1].grain_iterations)
    {
        return Err(AnalysisError::Unsorted);
    }

    let meets = |p: &CurvePoint<T>| p.efficiency >= threshold;
    if points.iter().all(meets) {
        let metg_us = points
            .iter()
            .map(|p| p.granularity_us)
            .fold(T::infinity(), T::min);
        return Ok(MetgResult {
            threshold,
            state: MetgState::Saturated { metg_us },
        });
    }

    let mut candidates: Vec<(T, Option<&CurvePoint<T>>, &CurvePoint<T>)> = Vec::new();
    if meets(&points[0]) {
        candidates.push((points[0].granularity_us, None, &points[0]));
    }
    for w in points.windows(2) {
        if !meets(&w[0]) && meets(&w[1]) {
            candidates.push((interpolate(&w[0], &w[1], threshold), Some(&w[0]), &w[1]));
        }
    }
    let non_monotone = candidates.len() > 1;
    let state = match candidates
        .into_iter()
        .min_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal))
    {
        Some((metg_us, below, above)) => MetgState::Value {
            metg_us,
            below: below.cloned(),
            above: above.clone(),
            non_monotone,
        },
        None => MetgState::Unreachable,
    };
    Ok(MetgResult { threshold, state })
}
