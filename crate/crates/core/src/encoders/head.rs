//! Small classifier heads trained on encoder features.

use rand::Rng;

use super::arch::{ArchitectureSpec, Tap};
use super::encoder::linear;
use super::params::{init_bn, kaiming_linear, ParamStore};
use crate::autodiff::{Mode, Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const PROBE_HIDDEN: usize = 200;
pub const PROBE_DROPOUT: f64 = 0.1;

/// linear(input, 200) → batch norm → relu → dropout(0.1) → linear(200, K)
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierHead {
    pub prefix: String,
    pub input_dim: usize,
    pub hidden: usize,
    pub dropout_p: f64,
    pub num_classes: usize,
}

impl ClassifierHead {
    pub fn new(prefix: &str, input_dim: usize, num_classes: usize) -> Self {
        Self {
            prefix: prefix.into(),
            input_dim,
            hidden: PROBE_HIDDEN,
            dropout_p: PROBE_DROPOUT,
            num_classes,
        }
    }

    fn name(&self, part: &str) -> String {
        format!("{}.{part}", self.prefix)
    }

    pub fn init_params<T: Scalar, R: Rng + ?Sized>(&self, rng: &mut R) -> ParamStore<T> {
        let mut store = ParamStore::new();
        kaiming_linear(&mut store, &self.name("fc1"), self.input_dim, self.hidden, rng);
        init_bn(&mut store, &self.name("bn"), self.hidden);
        kaiming_linear(&mut store, &self.name("fc2"), self.hidden, self.num_classes, rng);
        store
    }

    pub fn parameter_count(&self) -> usize {
        self.input_dim * self.hidden + self.hidden + 2 * self.hidden + self.hidden * self.num_classes + self.num_classes
    }

    /// Logits for `features`; inputs of rank > 2 are flattened.
    pub fn forward<T: Scalar, R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<T>,
        store: &mut ParamStore<T>,
        features: Var,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Var> {
        let x = if tape.shape(features).len() > 2 {
            tape.flatten(features)?
        } else {
            features
        };
        if tape.shape(x)[1] != self.input_dim {
            return Err(Error::shape(format!(
                "head expects {} features, got {:?}",
                self.input_dim,
                tape.shape(x)
            )));
        }
        let h = linear(tape, store, x, &self.name("fc1"), false)?;
        let bn = self.name("bn");
        let g = store.bind(tape, &format!("{bn}.gamma"), false)?;
        let b = store.bind(tape, &format!("{bn}.beta"), false)?;
        let h = tape.batch_norm(h, g, b, store.bn_state_mut(&bn)?, mode)?;
        let h = tape.relu(h)?;
        let h = tape.dropout(h, self.dropout_p, mode, rng)?;
        linear(tape, store, h, &self.name("fc2"), false)
    }
}

/// Probe over one of the evaluated feature taps (conv, fc or z).
pub fn build_probe(spec: &ArchitectureSpec, tap: Tap, num_classes: usize) -> Result<ClassifierHead> {
    if tap == Tap::Local {
        return Err(Error::invalid("probes read the conv, fc or z tap"));
    }
    let input_dim = spec.tap_shape(tap)?.numel();
    Ok(ClassifierHead::new("probe", input_dim, num_classes))
}
