//! Transition tuples `((θ, θ̇, τ), θ̈_next)` and their CSV form.
//!
//! Column order is by block then joint index:
//! `theta_0..theta_{n-1}, theta_dot_0.., tau_0.., accel_0..`.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::arm::{Action, State};
use crate::error::{check_dim, Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub state: State,
    pub action: Action,
    /// Joint acceleration realised over the step.
    pub accel: DVector<f64>,
}

impl Transition {
    /// Build a tuple from two consecutive simulated states.
    pub fn observed(s: &State, a: &Action, next: &State, dt: f64) -> Result<Self> {
        let accel = (&next.theta_dot - &s.theta_dot) / dt;
        Ok(Self { state: s.clone(), action: a.clone(), accel })
    }

    /// GP input `z = (θ, θ̇, τ)`.
    pub fn input(&self) -> DVector<f64> {
        model_input(&self.state, &self.action)
    }
}

pub(crate) fn model_input(s: &State, a: &Action) -> DVector<f64> {
    let n = s.n_joints();
    let m = a.tau.len();
    DVector::from_fn(2 * n + m, |i, _| {
        if i < n {
            s.theta[i]
        } else if i < 2 * n {
            s.theta_dot[i - n]
        } else {
            a.tau[i - 2 * n]
        }
    })
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TransitionDataset {
    n_links: usize,
    samples: Vec<Transition>,
}

impl TransitionDataset {
    pub fn new(n_links: usize) -> Self {
        Self { n_links, samples: Vec::new() }
    }

    pub fn n_links(&self) -> usize {
        self.n_links
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Transition> {
        self.samples.iter()
    }

    pub fn push(&mut self, t: Transition) -> Result<()> {
        check_dim("transition theta", self.n_links, t.state.theta.len())?;
        check_dim("transition theta_dot", self.n_links, t.state.theta_dot.len())?;
        check_dim("transition tau", self.n_links, t.action.tau.len())?;
        check_dim("transition accel", self.n_links, t.accel.len())?;
        self.samples.push(t);
        Ok(())
    }

    pub fn extend(&mut self, other: &TransitionDataset) -> Result<()> {
        check_dim("dataset n_links", self.n_links, other.n_links)?;
        self.samples.extend(other.samples.iter().cloned());
        Ok(())
    }

    /// Inputs as rows of `z = (θ, θ̇, τ)`.
    pub fn input_matrix(&self) -> DMatrix<f64> {
        let d = 3 * self.n_links;
        let mut x = DMatrix::zeros(self.len(), d);
        for (r, t) in self.samples.iter().enumerate() {
            x.row_mut(r).copy_from(&t.input().transpose());
        }
        x
    }

    /// Targets, one column per joint.
    pub fn target_matrix(&self) -> DMatrix<f64> {
        let mut y = DMatrix::zeros(self.len(), self.n_links);
        for (r, t) in self.samples.iter().enumerate() {
            y.row_mut(r).copy_from(&t.accel.transpose());
        }
        y
    }

    pub fn header(n_links: usize) -> Vec<String> {
        ["theta", "theta_dot", "tau", "accel"]
            .iter()
            .flat_map(|block| (0..n_links).map(move |j| format!("{block}_{j}")))
            .collect()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(Self::header(self.n_links))?;
        for t in &self.samples {
            let row: Vec<String> = t
                .state
                .theta
                .iter()
                .chain(t.state.theta_dot.iter())
                .chain(t.action.tau.iter())
                .chain(t.accel.iter())
                .map(|v| v.to_string())
                .collect();
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let headers = r.headers()?.clone();
        if headers.len() % 4 != 0 || headers.is_empty() {
            return Err(Error::InvalidInput(format!(
                "dataset header must have 4·n columns, got {}",
                headers.len()
            )));
        }
        let n = headers.len() / 4;
        let expected = Self::header(n);
        if headers.iter().zip(&expected).any(|(a, b)| a != b) {
            return Err(Error::InvalidInput(format!(
                "unexpected dataset header {:?}, expected {:?}",
                headers.iter().collect::<Vec<_>>(),
                expected
            )));
        }
        let mut data = Self::new(n);
        for rec in r.records() {
            let rec = rec?;
            let vals = rec
                .iter()
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::InvalidInput(format!("bad dataset value: {e}")))?;
            let block = |k: usize| DVector::from_column_slice(&vals[k * n..(k + 1) * n]);
            data.push(Transition {
                state: State::new(block(0), block(1)),
                action: Action::new(block(2)),
                accel: block(3),
            })?;
        }
        Ok(data)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }
}

impl<'a> IntoIterator for &'a TransitionDataset {
    type Item = &'a Transition;
    type IntoIter = std::slice::Iter<'a, Transition>;
    fn into_iter(self) -> Self::IntoIter {
        self.samples.iter()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample(vals: &[f64]) -> Transition {
        let n = vals.len() / 4;
        let block = |k: usize| DVector::from_column_slice(&vals[k * n..(k + 1) * n]);
        Transition {
            state: State::new(block(0), block(1)),
            action: Action::new(block(2)),
            accel: block(3),
        }
    }

    #[test]
    fn header_layout() {
        assert_eq!(
            TransitionDataset::header(2),
            vec![
                "theta_0", "theta_1", "theta_dot_0", "theta_dot_1", "tau_0", "tau_1", "accel_0",
                "accel_1"
            ]
        );
    }

    #[test]
    fn rejects_bad_header() {
        let text = "a,b,c,d\n1,2,3,4\n";
        assert!(TransitionDataset::read_csv(text.as_bytes()).is_err());
    }

    #[test]
    fn rejects_wrong_width() {
        let mut d = TransitionDataset::new(2);
        assert!(d.push(sample(&[0.0; 4])).is_err());
    }

    proptest! {
        #[test]
        fn csv_round_trip_is_lossless(vals in proptest::collection::vec(-1e3f64..1e3, 8 * 5)) {
            let mut d = TransitionDataset::new(2);
            for chunk in vals.chunks(8) {
                d.push(sample(chunk)).unwrap();
            }
            let mut buf = Vec::new();
            d.write_csv(&mut buf).unwrap();
            let back = TransitionDataset::read_csv(buf.as_slice()).unwrap();
            prop_assert_eq!(back, d);
        }
    }
}
