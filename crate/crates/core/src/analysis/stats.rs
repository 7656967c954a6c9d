use statrs::distribution::{ContinuousCDF, StudentsT};

use super::{real, AnalysisError, Real};

/// `mean ± half_width`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval<T> {
    pub mean: T,
    pub half_width: T,
}

/// Two-sided Student-t quantile `t((1 + level) / 2, dof)`.
pub fn student_t_quantile(level: f64, dof: usize) -> Result<f64, AnalysisError> {
    if !(level > 0.0 && level < 1.0) {
        return Err(AnalysisError::InvalidLevel);
    }
    let dist =
        StudentsT::new(0.0, 1.0, dof as f64).map_err(|_| AnalysisError::TooFewSamples(dof + 1))?;
    Ok(dist.inverse_cdf(0.5 + level / 2.0))
}

/// Student-t confidence interval of the mean.
pub fn confidence_interval<T: Real>(samples: &[T], level: T) -> Result<Interval<T>, AnalysisError> {
    let n = samples.len();
    if n < 2 {
        return Err(AnalysisError::TooFewSamples(n));
    }
    let count: T = real(n as f64);
    let mean = samples.iter().fold(T::zero(), |acc, &x| acc + x) / count;
    let ss = samples
        .iter()
        .fold(T::zero(), |acc, &x| acc + (x - mean) * (x - mean));
    let std_dev = (ss / (count - T::one())).sqrt();
    let t = student_t_quantile(level.to_f64().ok_or(AnalysisError::InvalidLevel)?, n - 1)?;
    Ok(Interval {
        mean,
        half_width: real::<T>(t) * std_dev / count.sqrt(),
    })
}
