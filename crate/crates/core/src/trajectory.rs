//! Filter output: time-ordered beliefs with the innovations that produced them.

use std::io::Write;

use crate::error::Result;
use crate::models::GaussianBelief;
use crate::numkit::{Matrix, Vector};
use crate::csvout::{fmt_num, write_records};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BeliefTag {
    /// The belief the run started from.
    Initial,
    /// Propagated by the moment equations, no new measurement folded in.
    Predicted,
    /// After assimilating a measurement (a discrete sample or an increment `dz`).
    Updated,
}

impl BeliefTag {
    pub fn as_str(self) -> &'static str {
        match self {
            BeliefTag::Initial => "initial",
            BeliefTag::Predicted => "predicted",
            BeliefTag::Updated => "updated",
        }
    }
}

/// Measurement residual. Discrete filters store `ν = y − C m⁻` with its
/// covariance `S`; continuous filters store `dz − C m dt` and no covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct Innovation {
    pub t: f64,
    pub residual: Vector,
    pub cov: Option<Matrix>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryPoint {
    pub tag: BeliefTag,
    pub belief: GaussianBelief,
    pub innovation: Option<Innovation>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FilterTrajectory {
    pub points: Vec<TrajectoryPoint>,
}

impl FilterTrajectory {
    pub fn starting_from(b0: GaussianBelief) -> Self {
        Self { points: vec![TrajectoryPoint { tag: BeliefTag::Initial, belief: b0, innovation: None }] }
    }

    pub fn push(&mut self, tag: BeliefTag, belief: GaussianBelief, innovation: Option<Innovation>) {
        self.points.push(TrajectoryPoint { tag, belief, innovation });
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn final_belief(&self) -> Option<&GaussianBelief> {
        self.points.last().map(|p| &p.belief)
    }

    pub fn beliefs(&self) -> impl Iterator<Item = &GaussianBelief> {
        self.points.iter().map(|p| &p.belief)
    }

    pub fn with_tag(&self, tag: BeliefTag) -> impl Iterator<Item = &GaussianBelief> {
        self.points.iter().filter(move |p| p.tag == tag).map(|p| &p.belief)
    }

    pub fn innovations(&self) -> impl Iterator<Item = &Innovation> {
        self.points.iter().filter_map(|p| p.innovation.as_ref())
    }

    /// Largest entrywise difference between two runs over matching points.
    pub fn max_abs_diff(&self, other: &FilterTrajectory) -> f64 {
        assert_eq!(self.len(), other.len(), "trajectories differ in length");
        self.points
            .iter()
            .zip(&other.points)
            .map(|(a, b)| a.belief.max_abs_diff(&b.belief).max((a.belief.t - b.belief.t).abs()))
            .fold(0.0, f64::max)
    }

    /// Per-component sample mean and (unbiased) variance of the innovations.
    pub fn innovation_stats(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        let residuals: Vec<&Vector> = self.innovations().map(|i| &i.residual).collect();
        let m = residuals.first()?.dim();
        let count = residuals.len() as f64;
        let mean: Vec<f64> =
            (0..m).map(|j| residuals.iter().map(|r| r[j]).sum::<f64>() / count).collect();
        let var = (0..m)
            .map(|j| {
                if residuals.len() < 2 {
                    return 0.0;
                }
                residuals.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / (count - 1.0)
            })
            .collect();
        Some((mean, var))
    }

    /// CSV `t,tag,m1..mn,P11,P12,..,Pnn,nu1..num`; the covariance columns are
    /// the row-major upper triangle and the innovation columns are empty on
    /// rows without one.
    pub fn write_csv<W: Write>(&self, out: W, comment: Option<&str>) -> Result<()> {
        let n = self.points.first().map_or(0, |p| p.belief.dim());
        let m = self.innovations().next().map_or(0, |i| i.residual.dim());
        let mut header = vec!["t".to_string(), "tag".to_string()];
        header.extend((1..=n).map(|i| format!("m{i}")));
        for i in 1..=n {
            for j in i..=n {
                header.push(format!("P{i}{j}"));
            }
        }
        header.extend((1..=m).map(|i| format!("nu{i}")));

        let rows = self.points.iter().map(|p| {
            let mut rec = vec![fmt_num(p.belief.t), p.tag.as_str().to_string()];
            rec.extend(p.belief.mean.iter().map(|x| fmt_num(*x)));
            rec.extend(p.belief.cov.upper_triangle().into_iter().map(fmt_num));
            match &p.innovation {
                Some(inn) => rec.extend(inn.residual.iter().map(|x| fmt_num(*x))),
                None => rec.extend(std::iter::repeat_n(String::new(), m)),
            }
            rec
        });
        write_records(out, comment, header, rows)
    }
}
