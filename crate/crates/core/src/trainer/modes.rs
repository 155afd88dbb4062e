//! Training modes: the full objective and its ablations, registered by name.

use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Error, Result};
use crate::objectives::LossTerms;
use crate::synthgen::LabeledDataset;

pub trait TrainingMode: Send + Sync {
    fn name(&self) -> String;
    fn terms(&self) -> LossTerms;
    /// Parameter path prefixes the optimizer may update.
    fn trainable_prefixes(&self) -> Vec<&'static str> {
        vec!["enc_p/", "enc_cl/", "dec/", "clf/", "prior_p/", "prior_cl/"]
    }
    /// The label columns this mode trains on; `None` keeps all.
    fn label_columns(&self) -> Option<Vec<usize>> {
        None
    }
    /// Dataset as seen by this mode.
    fn prepare(&self, data: &LabeledDataset) -> Result<LabeledDataset> {
        match self.label_columns() {
            Some(cols) => data.with_label_columns(&cols),
            None => Ok(data.clone()),
        }
    }
}

#[derive(Clone, Copy)]
struct Clap;

impl TrainingMode for Clap {
    fn name(&self) -> String {
        "clap".into()
    }
    fn terms(&self) -> LossTerms {
        LossTerms::ALL
    }
}

/// Prediction branch only, no sparsity penalty; concept-branch parameters
/// stay at their initial values.
#[derive(Clone, Copy)]
struct POnly;

impl TrainingMode for POnly {
    fn name(&self) -> String {
        "p_only".into()
    }
    fn terms(&self) -> LossTerms {
        LossTerms {
            concept_branch: false,
            sparsity: false,
        }
    }
    fn trainable_prefixes(&self) -> Vec<&'static str> {
        vec!["enc_p/", "dec/", "clf/", "prior_p/"]
    }
}

#[derive(Clone, Copy)]
struct NoSparsity;

impl TrainingMode for NoSparsity {
    fn name(&self) -> String {
        "no_sparsity".into()
    }
    fn terms(&self) -> LossTerms {
        LossTerms {
            concept_branch: true,
            sparsity: false,
        }
    }
}

/// Full objective on a single label column.
struct SingleLabel(usize);

impl TrainingMode for SingleLabel {
    fn name(&self) -> String {
        format!("single_label({})", self.0)
    }
    fn terms(&self) -> LossTerms {
        LossTerms::ALL
    }
    fn label_columns(&self) -> Option<Vec<usize>> {
        Some(vec![self.0])
    }
}

type Factory = Box<dyn Fn(Option<usize>) -> Result<Box<dyn TrainingMode>> + Send + Sync>;

pub struct ModeRegistry {
    entries: BTreeMap<String, Factory>,
}

impl fmt::Debug for ModeRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.entries.keys()).finish()
    }
}

fn fixed<M: TrainingMode + Copy + 'static>(mode: M) -> Factory {
    Box::new(move |idx: Option<usize>| {
        if idx.is_some() {
            return Err(Error::InvalidArgument(format!(
                "mode {} takes no label index",
                mode.name()
            )));
        }
        Ok(Box::new(mode) as Box<dyn TrainingMode>)
    })
}

impl Default for ModeRegistry {
    fn default() -> Self {
        let mut r = Self {
            entries: BTreeMap::new(),
        };
        r.register("clap", fixed(Clap));
        r.register("p_only", fixed(POnly));
        r.register("no_sparsity", fixed(NoSparsity));
        r.register(
            "single_label",
            Box::new(|idx: Option<usize>| {
                let i = idx.ok_or_else(|| {
                    Error::InvalidArgument("single_label needs a label index".into())
                })?;
                Ok(Box::new(SingleLabel(i)) as Box<dyn TrainingMode>)
            }),
        );
        r
    }
}

impl ModeRegistry {
    pub fn register(&mut self, name: &str, factory: Factory) {
        self.entries.insert(name.to_string(), factory);
    }

    pub fn get(&self, name: &str, label_index: Option<usize>) -> Result<Box<dyn TrainingMode>> {
        let f = self.entries.get(name).ok_or_else(|| Error::UnknownName {
            kind: "training mode",
            name: name.into(),
            known: self.names().join(", "),
        })?;
        f(label_index)
    }

    pub fn names(&self) -> Vec<String> {
        self.entries.keys().cloned().collect()
    }
}
