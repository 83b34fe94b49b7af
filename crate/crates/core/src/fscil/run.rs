use std::collections::BTreeSet;

use serde::Serialize;

use super::proto::{compute_prototypes, ncm_predict, PrototypeStore};
use super::train::{train_base, train_incremental, BaseOutcome, FscilConfig};
use crate::data::{Dataset, SessionSpec};
use crate::error::{Error, Result};
use crate::nn::{NetworkSpec, ScoredParamStore};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SessionRow {
    pub session: usize,
    pub classes_seen: usize,
    /// NCM accuracy over the test data of every class seen so far.
    pub accuracy: f64,
    pub base_accuracy: f64,
    /// `None` for the base session.
    pub novel_accuracy: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct FscilRun {
    pub rows: Vec<SessionRow>,
    /// Final-session accuracy minus the reference's final-session accuracy.
    pub gap_vs_reference: Option<f64>,
    pub base: BaseOutcome,
    pub store: ScoredParamStore,
    pub prototypes: PrototypeStore,
    pub incremental_losses: Vec<Vec<f64>>,
}

fn accuracy(pred: &[usize], labels: &[usize], keep: impl Fn(usize) -> bool) -> Option<f64> {
    let (mut hit, mut n) = (0usize, 0usize);
    for (&p, &y) in pred.iter().zip(labels) {
        if keep(y) {
            n += 1;
            hit += usize::from(p == y);
        }
    }
    (n > 0).then(|| hit as f64 / n as f64)
}

/// Checks that sessions never share classes.
pub fn check_disjoint(sessions: &[SessionSpec]) -> Result<()> {
    let mut seen = BTreeSet::new();
    for s in sessions {
        let dup: Vec<u32> = s.classes.iter().filter(|c| seen.contains(*c)).map(|&c| c as u32).collect();
        if !dup.is_empty() {
            return Err(Error::SessionOverlap {
                session: s.index,
                classes: dup,
            });
        }
        seen.extend(s.classes.iter().copied());
    }
    Ok(())
}

pub fn run_fscil(sessions: &[SessionSpec], config: &FscilConfig) -> Result<FscilRun> {
    config.validate()?;
    let first = sessions.first().ok_or_else(|| Error::Config("no sessions".into()))?;
    check_disjoint(sessions)?;
    if first.classes.iter().enumerate().any(|(i, &c)| i != c) {
        return Err(Error::Config("base session classes must be 0..n".into()));
    }
    let mut base_train = first.train.clone();
    base_train.classes = first.classes.len();
    let spec = NetworkSpec::new(first.train.dim(), config.hidden.clone());
    let mut store = ScoredParamStore::init(&spec, config.seed)?;
    let base = train_base(&mut store, &base_train, config)?;
    let mut prototypes = compute_prototypes(&store, &base.soft, &first.train, &first.classes)?;
    let base_classes: BTreeSet<usize> = first.classes.iter().copied().collect();
    let mut test: Option<Dataset> = None;
    let mut rows = Vec::with_capacity(sessions.len());
    let mut incremental_losses = Vec::new();
    for (k, s) in sessions.iter().enumerate() {
        if k > 0 {
            incremental_losses.push(train_incremental(&mut store, &base.soft, s, &mut prototypes, config)?);
        }
        test = Some(match test {
            Some(t) => t.concat(&s.test)?,
            None => s.test.clone(),
        });
        let t = test.as_ref().expect("set above");
        if t.is_empty() {
            return Err(Error::Config(format!("session {} has no test data", s.index)));
        }
        let pred = ncm_predict(&store, &base.soft, &prototypes, &t.features)?;
        rows.push(SessionRow {
            session: s.index,
            classes_seen: prototypes.len(),
            accuracy: accuracy(&pred, &t.labels, |_| true).unwrap_or(0.0),
            base_accuracy: accuracy(&pred, &t.labels, |y| base_classes.contains(&y)).unwrap_or(0.0),
            novel_accuracy: if k == 0 { None } else { accuracy(&pred, &t.labels, |y| !base_classes.contains(&y)) },
        });
    }
    let gap_vs_reference = config
        .reference
        .as_ref()
        .and_then(|r| r.get(rows.len() - 1))
        .map(|r| rows.last().expect("one row per session").accuracy - r);
    Ok(FscilRun {
        rows,
        gap_vs_reference,
        base,
        store,
        prototypes,
        incremental_losses,
    })
}
