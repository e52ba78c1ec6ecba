use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Checkpoint {
    /// 1-based
    pub epoch: usize,
    pub train_metric: f64,
    pub val_metric: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Selection {
    pub checkpoint: Checkpoint,
    /// no epoch after burn-in had val ≤ train; best val overall was taken
    pub fallback: bool,
}

/// Best validation score among epochs past `burn_in` whose validation score
/// does not exceed the training score; earliest wins ties.
pub fn select_checkpoint(history: &[Checkpoint], burn_in: usize) -> Result<Selection> {
    let best = |it: &mut dyn Iterator<Item = &Checkpoint>| {
        it.fold(None::<Checkpoint>, |acc, c| match acc {
            Some(a) if a.val_metric >= c.val_metric => Some(a),
            _ => Some(*c),
        })
    };
    if history.is_empty() {
        return Err(Error::Empty("checkpoint history"));
    }
    let qualifying = best(&mut history.iter().filter(|c| c.epoch > burn_in && c.val_metric <= c.train_metric));
    Ok(match qualifying {
        Some(checkpoint) => Selection {
            checkpoint,
            fallback: false,
        },
        None => Selection {
            checkpoint: best(&mut history.iter()).expect("nonempty"),
            fallback: true,
        },
    })
}

/// Incremental form of [`select_checkpoint`] that keeps the two candidate
/// snapshots as training proceeds.
#[derive(Debug, Clone)]
pub struct OnlineSelector<S> {
    pub burn_in: usize,
    qualifying: Option<(Checkpoint, S)>,
    best_val: Option<(Checkpoint, S)>,
}

impl<S: Clone> OnlineSelector<S> {
    pub fn new(burn_in: usize) -> Self {
        Self {
            burn_in,
            qualifying: None,
            best_val: None,
        }
    }

    pub fn observe(&mut self, c: Checkpoint, snapshot: impl Fn() -> S) {
        let better = |slot: &Option<(Checkpoint, S)>| slot.as_ref().is_none_or(|(b, _)| c.val_metric > b.val_metric);
        if c.epoch > self.burn_in && c.val_metric <= c.train_metric && better(&self.qualifying) {
            self.qualifying = Some((c, snapshot()));
        }
        if better(&self.best_val) {
            self.best_val = Some((c, snapshot()));
        }
    }

    pub fn finish(self) -> Option<(Selection, S)> {
        match (self.qualifying, self.best_val) {
            (Some((checkpoint, s)), _) => Some((
                Selection {
                    checkpoint,
                    fallback: false,
                },
                s,
            )),
            (None, Some((checkpoint, s))) => Some((
                Selection {
                    checkpoint,
                    fallback: true,
                },
                s,
            )),
            (None, None) => None,
        }
    }
}
