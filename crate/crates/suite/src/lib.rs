//! Pass/fail bookkeeping for the kc acceptance suite in `tests/acceptance.rs`.

/// Outcome of one criterion: pass flag and the notes for its summary line.
#[derive(Debug, Clone, Default)]
pub struct Check {
    pub ok: bool,
    pub notes: Vec<String>,
}

impl Check {
    pub fn new() -> Self {
        Check { ok: true, notes: Vec::new() }
    }

    /// Record a failure with `note` unless `cond` holds.
    pub fn require(&mut self, cond: bool, note: impl Into<String>) {
        if !cond {
            self.ok = false;
            self.notes.push(note.into());
        }
    }

    pub fn info(&mut self, note: impl Into<String>) {
        self.notes.push(note.into());
    }

    /// `criterion N (name): PASS|FAIL [secs] notes`.
    pub fn line(&self, index: usize, name: &str, seconds: f64) -> String {
        format!("criterion {index} ({name}): {} [{seconds:.1} s] {}", if self.ok { "PASS" } else { "FAIL" }, self.notes.join("; "))
    }
}

pub type Outcome = Result<Check, String>;
