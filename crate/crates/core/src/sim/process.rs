//! Before/after efficiency arithmetic for manual versus automated processing.

use serde::{Deserialize, Serialize};

use super::Scenario;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Formula {
    /// `(1 − after/before)·100`: time, effort and cost rows.
    Reduction,
    /// `(after − before)/before·100`: accuracy-type rows.
    RelativeGain,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rounding {
    /// Nearest whole percent, printed without decimals.
    Integer,
    /// Nearest tenth of a percent, printed with two decimals.
    OneDecimal,
}

impl Formula {
    pub fn as_str(self) -> &'static str {
        match self {
            Formula::Reduction => "reduction",
            Formula::RelativeGain => "relative_gain",
        }
    }

    pub fn raw(self, before: f64, after: f64) -> f64 {
        if before == 0.0 {
            return 0.0;
        }
        match self {
            Formula::Reduction => (1.0 - after / before) * 100.0,
            Formula::RelativeGain => (after - before) / before * 100.0,
        }
    }
}

impl Rounding {
    pub fn as_str(self) -> &'static str {
        match self {
            Rounding::Integer => "integer",
            Rounding::OneDecimal => "one_decimal",
        }
    }

    pub fn apply(self, percent: f64) -> f64 {
        match self {
            Rounding::Integer => percent.round(),
            Rounding::OneDecimal => (percent * 10.0).round() / 10.0,
        }
    }

    pub fn format(self, percent: f64) -> String {
        match self {
            Rounding::Integer => format!("{percent:.0}%"),
            Rounding::OneDecimal => format!("{percent:.2}%"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    /// Which table block the row belongs to.
    pub table: String,
    pub metric: String,
    pub before: f64,
    pub after: f64,
    pub formula: Formula,
    pub rounding: Rounding,
    /// Rounded improvement in percent.
    pub improvement_rate: f64,
}

impl MetricRow {
    pub fn new(table: &str, metric: &str, before: f64, after: f64, formula: Formula, rounding: Rounding) -> Self {
        Self {
            table: table.to_owned(),
            metric: metric.to_owned(),
            before,
            after,
            formula,
            rounding,
            improvement_rate: rounding.apply(formula.raw(before, after)),
        }
    }

    pub fn display_rate(&self) -> String {
        self.rounding.format(self.improvement_rate)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ProcessReport {
    pub rows: Vec<MetricRow>,
}

impl ProcessReport {
    pub fn row(&self, table: &str, metric: &str) -> Option<&MetricRow> {
        self.rows.iter().find(|r| r.table == table && r.metric == metric)
    }
}

pub const STAGE_TABLE: &str = "stages";
pub const METRIC_TABLE: &str = "process";

/// Stage hours before and after automation with a total row, the scenario's
/// process metrics, and the stage total blended at the scenario's coverage
/// (covered work at automated cost, the rest manual).
pub fn simulate_process(scenario: &Scenario) -> ProcessReport {
    let mut rows = Vec::new();
    let (mut manual, mut automated) = (0.0, 0.0);
    for st in &scenario.stages {
        rows.push(MetricRow::new(STAGE_TABLE, &st.name, st.manual_hours, st.automated_hours, Formula::Reduction, Rounding::Integer));
        manual += st.manual_hours;
        automated += st.automated_hours;
    }
    if !scenario.stages.is_empty() {
        rows.push(MetricRow::new(STAGE_TABLE, "Total", manual, automated, Formula::Reduction, Rounding::Integer));
        let c = scenario.automation_coverage;
        let blended = c * automated + (1.0 - c) * manual;
        rows.push(MetricRow::new(
            STAGE_TABLE,
            "Total at automation coverage",
            manual,
            blended,
            Formula::Reduction,
            Rounding::Integer,
        ));
    }
    for m in &scenario.process_metrics {
        rows.push(MetricRow::new(METRIC_TABLE, &m.name, m.before, m.after, m.formula, m.rounding));
    }
    ProcessReport { rows }
}
