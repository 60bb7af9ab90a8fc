//! Explicit transition files for probabilistic model checkers.
//!
//! Header `n_states n_choices n_transitions`, then one line per stored
//! nonzero entry: `src choice dst prob`, where `choice = u * n_w + w`
//! enumerates input/disturbance pairs. Lines are ordered by source, choice
//! and destination.

use std::io::{self, BufRead, Write};

use thiserror::Error;

use crate::abstraction::TransitionMatrix;

#[derive(Debug, Error)]
pub enum PrismError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub fn export_prism<W: Write>(tm: &TransitionMatrix, w: W) -> io::Result<()> {
    let mut w = io::BufWriter::new(w);
    let choices = tm.n_inputs * tm.n_disturbances;
    writeln!(w, "{} {} {}", tm.n_states, tm.rows(), tm.nonzeros())?;
    for r in 0..tm.rows() {
        let (src, choice) = (r / choices, r % choices);
        for (c, p) in tm.row(r).iter().enumerate() {
            if *p > 0.0 {
                writeln!(w, "{src} {choice} {} {p:?}", tm.post_state(r, c))?;
            }
        }
    }
    w.flush()
}

/// A parsed explicit transition file.
#[derive(Debug, Clone, PartialEq)]
pub struct PrismModel {
    pub n_states: usize,
    pub n_choices: usize,
    pub transitions: Vec<(usize, usize, usize, f64)>,
}

impl PrismModel {
    /// Sum of probabilities per `(src, choice)`, indexed `src * choices + choice`.
    pub fn choice_sums(&self, choices_per_state: usize) -> Vec<f64> {
        let mut sums = vec![0.0; self.n_states * choices_per_state];
        for &(s, c, _, p) in &self.transitions {
            sums[s * choices_per_state + c] += p;
        }
        sums
    }
}

pub fn parse_prism<R: BufRead>(r: R) -> Result<PrismModel, PrismError> {
    let mut lines = r.lines().enumerate();
    let err = |line: usize, message: &str| PrismError::Parse {
        line: line + 1,
        message: message.into(),
    };
    let (_, header) = lines.next().ok_or_else(|| err(0, "empty file"))?;
    let h: Vec<usize> = header?
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| err(0, "bad header")))
        .collect::<Result<_, _>>()?;
    let [n_states, n_choices, n_transitions] = h[..] else {
        return Err(err(0, "header needs three integers"));
    };
    let mut transitions = Vec::with_capacity(n_transitions);
    for (i, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let t: Vec<&str> = line.split_whitespace().collect();
        let [s, c, d, p] = t[..] else {
            return Err(err(i, "expected `src choice dst prob`"));
        };
        let int = |v: &str| v.parse::<usize>().map_err(|_| err(i, "bad index"));
        let (s, c, d) = (int(s)?, int(c)?, int(d)?);
        let p: f64 = p.parse().map_err(|_| err(i, "bad probability"))?;
        if s >= n_states || d >= n_states {
            return Err(err(i, "state index out of range"));
        }
        transitions.push((s, c, d, p));
    }
    if transitions.len() != n_transitions {
        return Err(err(0, "transition count does not match the header"));
    }
    Ok(PrismModel {
        n_states,
        n_choices,
        transitions,
    })
}
