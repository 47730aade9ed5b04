//! Observation designs and replicated response data.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Observation times `t_1 < … < t_m` with replicate counts `n_1 … n_m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeDesign {
    times: Vec<f64>,
    replicates: Vec<usize>,
}

impl TimeDesign {
    pub fn new(times: Vec<f64>, replicates: Vec<usize>) -> Result<Self> {
        if times.len() != replicates.len() {
            return Err(Error::InvalidDesign(format!(
                "{} times but {} replicate counts",
                times.len(),
                replicates.len()
            )));
        }
        if times.len() < 2 {
            return Err(Error::InvalidDesign(format!(
                "need at least 2 distinct time points, got {}",
                times.len()
            )));
        }
        if times.iter().any(|t| !t.is_finite() || *t < 0.0) {
            return Err(Error::InvalidDesign("times must be finite and non-negative".into()));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidDesign("times must be strictly increasing".into()));
        }
        if let Some(p) = replicates.iter().position(|&n| n == 0) {
            return Err(Error::InvalidDesign(format!("time {} has no replicates", times[p])));
        }
        Ok(TimeDesign { times, replicates })
    }

    /// The nine-point design of the simulation study: weeks
    /// 0, 3, 9, 15, 21, 27, 33, 39, 45 with 5 replicates at the first seven
    /// times, then 4 and 8 (47 observations).
    pub fn reference() -> Self {
        TimeDesign::new(
            vec![0.0, 3.0, 9.0, 15.0, 21.0, 27.0, 33.0, 39.0, 45.0],
            vec![5, 5, 5, 5, 5, 5, 5, 4, 8],
        )
        .expect("reference design is valid")
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn replicates(&self) -> &[usize] {
        &self.replicates
    }

    /// Number of distinct time points `m`.
    pub fn m(&self) -> usize {
        self.times.len()
    }

    /// Total number of observations `n`.
    pub fn n(&self) -> usize {
        self.replicates.iter().sum()
    }

    pub fn first(&self) -> f64 {
        self.times[0]
    }

    pub fn last(&self) -> f64 {
        self.times[self.times.len() - 1]
    }

    /// Study duration `t_m − t_1`.
    pub fn duration(&self) -> f64 {
        self.last() - self.first()
    }
}

/// Responses `y[p][q]` observed at the design's time points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    design: TimeDesign,
    responses: Vec<Vec<f64>>,
}

impl Dataset {
    pub fn new(design: TimeDesign, responses: Vec<Vec<f64>>) -> Result<Self> {
        if responses.len() != design.m() {
            return Err(Error::InvalidDesign(format!(
                "{} response groups for {} time points",
                responses.len(),
                design.m()
            )));
        }
        for (p, (group, &n)) in responses.iter().zip(design.replicates()).enumerate() {
            if group.len() != n {
                return Err(Error::InvalidDesign(format!(
                    "time {} expects {} replicates, got {}",
                    design.times()[p],
                    n,
                    group.len()
                )));
            }
            if group.iter().any(|y| !y.is_finite()) {
                return Err(Error::InvalidDesign(format!(
                    "non-finite response at time {}",
                    design.times()[p]
                )));
            }
        }
        Ok(Dataset { design, responses })
    }

    /// Builds a dataset from `(time, value)` observations in any order.
    /// Observations sharing a time value form one replicate group.
    pub fn from_observations(observations: &[(f64, f64)]) -> Result<Self> {
        let mut sorted = observations.to_vec();
        if sorted.iter().any(|(t, y)| !t.is_finite() || !y.is_finite()) {
            return Err(Error::InvalidDesign("non-finite observation".into()));
        }
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut times = Vec::new();
        let mut groups: Vec<Vec<f64>> = Vec::new();
        for (t, y) in sorted {
            if times.last() == Some(&t) {
                groups.last_mut().unwrap().push(y);
            } else {
                times.push(t);
                groups.push(vec![y]);
            }
        }
        let replicates = groups.iter().map(Vec::len).collect();
        Dataset::new(TimeDesign::new(times, replicates)?, groups)
    }

    pub fn design(&self) -> &TimeDesign {
        &self.design
    }

    pub fn responses(&self) -> &[Vec<f64>] {
        &self.responses
    }

    /// Observations in design order.
    pub fn observations(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.design
            .times()
            .iter()
            .zip(&self.responses)
            .flat_map(|(&t, g)| g.iter().map(move |&y| (t, y)))
    }

    pub fn group_means(&self) -> Vec<f64> {
        self.responses
            .iter()
            .map(|g| g.iter().sum::<f64>() / g.len() as f64)
            .collect()
    }

    /// Sum of squared deviations from the group means.
    pub fn within_ss(&self) -> f64 {
        self.responses
            .iter()
            .map(|g| {
                let mean = g.iter().sum::<f64>() / g.len() as f64;
                g.iter().map(|y| (y - mean).powi(2)).sum::<f64>()
            })
            .sum()
    }

    pub fn is_constant(&self) -> bool {
        let first = self.responses[0][0];
        self.responses.iter().flatten().all(|&y| y == first)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_design_has_47_observations() {
        let d = TimeDesign::reference();
        assert_eq!(d.m(), 9);
        assert_eq!(d.n(), 47);
        assert_eq!(d.duration(), 45.0);
    }

    #[test]
    fn rejects_bad_designs() {
        assert!(TimeDesign::new(vec![0.0], vec![3]).is_err());
        assert!(TimeDesign::new(vec![1.0, 1.0], vec![3, 3]).is_err());
        assert!(TimeDesign::new(vec![2.0, 1.0], vec![3, 3]).is_err());
        assert!(TimeDesign::new(vec![0.0, 1.0], vec![3, 0]).is_err());
        let d = TimeDesign::new(vec![0.0, 1.0], vec![1, 2]).unwrap();
        assert!(Dataset::new(d.clone(), vec![vec![1.0], vec![2.0]]).is_err());
        assert!(Dataset::new(d, vec![vec![1.0], vec![2.0, f64::NAN]]).is_err());
    }

    #[test]
    fn groups_unsorted_observations() {
        let ds = Dataset::from_observations(&[(3.0, 1.0), (0.0, 2.0), (3.0, 5.0)]).unwrap();
        assert_eq!(ds.design().times(), &[0.0, 3.0]);
        assert_eq!(ds.design().replicates(), &[1, 2]);
        assert_eq!(ds.group_means(), vec![2.0, 3.0]);
        assert_eq!(ds.within_ss(), 8.0);
    }
}
