use crate::{Error, Result};

/// Sequential-composition accountant: the total budget is the sum of the
/// budgets of every mechanism applied.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BudgetLedger {
    entries: Vec<(String, f64)>,
    total: f64,
}

impl BudgetLedger {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records `epsilon` spent under `label`.
    pub fn compose(mut self, label: impl Into<String>, epsilon: f64) -> Result<Self> {
        self.spend(label, epsilon)?;
        Ok(self)
    }

    pub fn spend(&mut self, label: impl Into<String>, epsilon: f64) -> Result<()> {
        if !(epsilon.is_finite() && epsilon > 0.0) {
            return Err(Error::param(format!("spent epsilon must be positive, got {epsilon}")));
        }
        self.entries.push((label.into(), epsilon));
        self.total += epsilon;
        Ok(())
    }

    pub fn total(&self) -> f64 {
        self.total
    }

    pub fn entries(&self) -> &[(String, f64)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}
