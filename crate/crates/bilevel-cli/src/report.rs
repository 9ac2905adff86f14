//! JSON verification report: every check with its numeric margin, so a
//! reader can reconstruct pass/fail without rerunning.

use serde::Serialize;

use bilevel::experiments::ReferenceSolution;

#[derive(Debug, Clone, Serialize)]
pub struct ReportCheck {
    /// Library module the check belongs to.
    pub module: &'static str,
    /// Stable name of the inequality or property being checked.
    pub tag: String,
    /// Iteration (or window) the check is anchored to, when applicable.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    /// Signed margin; nonnegative means the check held. Omitted when the
    /// margin is not finite (see note).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub margin: Option<f64>,
    /// Measured quantity and its bound, for checks that compare one against
    /// the other.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bound: Option<f64>,
    pub pass: bool,
    #[serde(skip_serializing_if = "String::is_empty")]
    pub note: String,
}

impl ReportCheck {
    pub fn new(
        module: &'static str,
        tag: impl Into<String>,
        k: Option<usize>,
        margin: f64,
        pass: bool,
    ) -> Self {
        let (margin, note) = if margin.is_finite() {
            (Some(margin), String::new())
        } else {
            (None, format!("margin not finite: {margin}"))
        };
        Self {
            module,
            tag: tag.into(),
            k,
            margin,
            value: None,
            bound: None,
            pass,
            note: note.to_string(),
        }
    }

    pub fn with_value_bound(mut self, value: f64, bound: f64) -> Self {
        self.value = value.is_finite().then_some(value);
        self.bound = bound.is_finite().then_some(bound);
        self
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = note.into();
        self
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ReferenceReport {
    pub phi_star: f64,
    pub omega_star: f64,
    pub omega_lower: f64,
    pub delta_omega: f64,
    pub achieved_tol: f64,
    pub omega_uncertainty: f64,
    pub confident: bool,
    pub method: String,
}

impl From<&ReferenceSolution> for ReferenceReport {
    fn from(r: &ReferenceSolution) -> Self {
        Self {
            phi_star: r.phi_star,
            omega_star: r.omega_star,
            omega_lower: r.omega_lower,
            delta_omega: r.delta_omega(),
            achieved_tol: r.achieved_tol,
            omega_uncertainty: r.omega_uncertainty,
            confident: r.confident,
            method: r.method.clone(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SlopeReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub slope: Option<f64>,
    pub used_points: usize,
    pub truncated: usize,
    #[serde(skip_serializing_if = "String::is_empty")]
    pub note: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct CellReport {
    pub cell: serde_json::Value,
    pub instance: InstanceReport,
    pub reference: ReferenceReport,
    pub checks: Vec<ReportCheck>,
    pub slopes: std::collections::BTreeMap<String, SlopeReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct InstanceReport {
    pub n: usize,
    pub tau: f64,
    pub seed: u64,
    pub rho: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SummaryEntry {
    pub cell: String,
    pub pass: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}
