//! Pass/fail reports shared by the condition checkers.

use std::fmt;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckEntry {
    pub label: String,
    pub description: String,
    pub passed: bool,
    /// Non-required entries are informational and do not fail the report.
    pub required: bool,
    pub trials: usize,
    /// Largest observed violation (0 when none).
    pub worst: f64,
    pub witness: Option<String>,
}

impl CheckEntry {
    pub fn new(label: impl Into<String>, description: impl Into<String>) -> Self {
        Self {
            label: label.into(),
            description: description.into(),
            passed: true,
            required: true,
            trials: 0,
            worst: 0.0,
            witness: None,
        }
    }

    pub fn informational(mut self) -> Self {
        self.required = false;
        self
    }

    /// Records one trial with violation size `excess` (positive = failure).
    pub fn record(&mut self, excess: f64, witness: impl FnOnce() -> String) {
        self.trials += 1;
        if excess > 0.0 || excess.is_nan() {
            if self.passed || excess > self.worst {
                self.witness = Some(witness());
            }
            self.passed = false;
            if excess.is_nan() || excess > self.worst {
                self.worst = excess;
            }
        }
    }

    pub fn fail(&mut self, witness: impl Into<String>) {
        self.trials += 1;
        self.passed = false;
        if self.witness.is_none() {
            self.witness = Some(witness.into());
        }
    }

    pub fn pass(&mut self) {
        self.trials += 1;
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CheckReport {
    pub title: String,
    pub entries: Vec<CheckEntry>,
}

impl CheckReport {
    pub fn new(title: impl Into<String>) -> Self {
        Self {
            title: title.into(),
            entries: Vec::new(),
        }
    }

    pub fn push(&mut self, entry: CheckEntry) {
        self.entries.push(entry);
    }

    pub fn extend(&mut self, other: CheckReport) {
        self.entries.extend(other.entries);
    }

    pub fn all_passed(&self) -> bool {
        self.entries.iter().filter(|e| e.required).all(|e| e.passed)
    }

    pub fn get(&self, label: &str) -> Option<&CheckEntry> {
        self.entries.iter().find(|e| e.label == label)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckEntry> {
        self.entries.iter().filter(|e| e.required && !e.passed)
    }
}

impl fmt::Display for CheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{}", self.title)?;
        for e in &self.entries {
            let status = match (e.passed, e.required) {
                (true, _) => "PASS",
                (false, true) => "FAIL",
                (false, false) => "WARN",
            };
            write!(
                f,
                "  [{status}] {:<14} {} (trials={}, worst={:.3e})",
                e.label, e.description, e.trials, e.worst
            )?;
            if let (false, Some(w)) = (e.passed, &e.witness) {
                write!(f, " witness: {w}")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}
