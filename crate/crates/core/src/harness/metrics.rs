use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;

use nalgebra::Vector3;

use super::{HarnessError, ScenarioConfig};
use crate::adversary::AttackKind;
use crate::guard::GateVerdict;
use crate::rover::{NavSolution, SolutionMode};

/// Epochs after the last attack window during which rejections are not
/// counted as false alarms.
pub const POST_ATTACK_SETTLE_S: f64 = 30.0;

#[derive(Debug, Clone)]
pub struct EpochRecord {
    pub t: f64,
    pub truth: Vector3<f64>,
    pub solution: NavSolution,
    /// Solution minus truth in the truth's local frame; NaN without a position.
    pub enu_error: Vector3<f64>,
    /// 3D error of the rover's standalone solution, NaN when unavailable.
    pub spp_error: f64,
    pub mode: SolutionMode,
    pub verdict: GateVerdict,
    pub station_healthy: bool,
    /// Satellites in the station's latest observation message.
    pub station_tracked: usize,
    pub attack: Option<AttackKind>,
}

impl EpochRecord {
    pub fn error_3d(&self) -> f64 {
        self.enu_error.norm()
    }

    pub fn error_horizontal(&self) -> f64 {
        self.enu_error.xy().norm()
    }
}

/// Column order of the records CSV.
pub const RECORDS_HEADER: &str = "t,truth_x,truth_y,truth_z,sol_x,sol_y,sol_z,clock_bias,err_e,err_n,err_u,err_3d,spp_err_3d,mode,n_sats,ratio,chi2,dof,accept,reasons,station_healthy,station_tracked,attack";

pub fn write_records_csv<W: Write>(records: &[EpochRecord], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{RECORDS_HEADER}")?;
    for r in records {
        let s = &r.solution;
        let p = s.position_ecef;
        let e = r.enu_error;
        writeln!(
            out,
            "{:.3},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4},{:.12e},{:.4},{:.4},{:.4},{:.4},{:.4},{},{},{:.3},{:.3},{},{},{},{},{},{}",
            r.t,
            r.truth.x,
            r.truth.y,
            r.truth.z,
            p.x,
            p.y,
            p.z,
            s.clock_bias,
            e.x,
            e.y,
            e.z,
            r.error_3d(),
            r.spp_error,
            r.mode,
            s.n_sats,
            s.ratio,
            s.dd_residual_chi2,
            s.dof,
            u8::from(r.verdict.accept),
            r.verdict.reasons_label(),
            u8::from(r.station_healthy),
            r.station_tracked,
            r.attack.map_or("-", |a| a.as_str()),
        )?;
    }
    Ok(())
}

fn rms(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.filter(|v| v.is_finite()).fold((0.0, 0usize), |(s, n), v| (s + v * v, n + 1));
    (n > 0).then(|| (sum / n as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub scenario: String,
    pub seed: u64,
    pub gate: bool,
    pub attacks: Vec<AttackKind>,
    pub epochs: usize,
    /// 3D RMS before the first attack (the whole run when there is none).
    pub rms_pre: Option<f64>,
    pub rms_attack: Option<f64>,
    pub rms_post: Option<f64>,
    pub max_error_attack: Option<f64>,
    /// Horizontal RMS from the first fix until the first attack.
    pub hrms_converged: Option<f64>,
    /// 3D RMS of the standalone solution before the first attack.
    pub spp_rms: Option<f64>,
    pub fix_ratio: f64,
    pub time_to_first_fix: Option<usize>,
    pub time_to_refix_after_attack: Option<usize>,
    pub detection_latency: Option<usize>,
    /// Rejected epochs away from any attack.
    pub false_alarms: usize,
    /// Epochs eligible to count as false alarms.
    pub quiet_epochs: usize,
    pub fixed_during_attack: usize,
}

/// Metrics over the pre-attack, attack and post-attack windows.
pub fn summarize(records: &[EpochRecord], cfg: &ScenarioConfig) -> RunSummary {
    let span = cfg.attack_span();
    let pre = |r: &&EpochRecord| span.is_none_or(|(s, _)| r.t < s);
    let during = |r: &&EpochRecord| span.is_some_and(|(s, e)| r.t >= s && r.t < e);
    let post = |r: &&EpochRecord| span.is_some_and(|(_, e)| r.t >= e);
    let fixed = |r: &EpochRecord| r.mode == SolutionMode::Fixed;
    let ttff = records.iter().position(fixed);
    let first_attack_epoch = span.map(|(s, _)| records.iter().position(|r| r.t >= s).unwrap_or(records.len()));
    let attack_end_epoch = span.map(|(_, e)| records.iter().position(|r| r.t >= e).unwrap_or(records.len()));
    let quiet = |r: &&EpochRecord| match span {
        None => true,
        Some((s, e)) => r.t < s || r.t >= e + POST_ATTACK_SETTLE_S,
    };
    RunSummary {
        scenario: cfg.name.clone(),
        seed: cfg.seed,
        gate: cfg.gate.enabled,
        attacks: cfg.attacks.iter().map(|a| a.kind).collect(),
        epochs: records.len(),
        rms_pre: rms(records.iter().filter(pre).map(|r| r.error_3d())),
        rms_attack: rms(records.iter().filter(during).map(|r| r.error_3d())),
        rms_post: rms(records.iter().filter(post).map(|r| r.error_3d())),
        max_error_attack: records.iter().filter(during).map(|r| r.error_3d()).filter(|e| e.is_finite()).reduce(f64::max),
        hrms_converged: ttff.and_then(|k| {
            rms(records[k..first_attack_epoch.unwrap_or(records.len()).max(k)].iter().map(|r| r.error_horizontal()))
        }),
        spp_rms: rms(records.iter().filter(pre).map(|r| r.spp_error)),
        fix_ratio: if records.is_empty() { 0.0 } else { records.iter().filter(|r| fixed(r)).count() as f64 / records.len() as f64 },
        time_to_first_fix: ttff,
        time_to_refix_after_attack: attack_end_epoch.and_then(|k| records[k..].iter().position(fixed)),
        detection_latency: first_attack_epoch.and_then(|k| records[k..].iter().position(|r| !r.verdict.accept)),
        false_alarms: records.iter().filter(quiet).filter(|r| !r.verdict.accept).count(),
        quiet_epochs: records.iter().filter(quiet).count(),
        fixed_during_attack: records.iter().filter(during).filter(|r| fixed(r)).count(),
    }
}

fn opt_f(v: Option<f64>) -> String {
    v.map_or("na".into(), |v| format!("{v:.4}"))
}

fn opt_u(v: Option<usize>) -> String {
    v.map_or("na".into(), |v| v.to_string())
}

impl RunSummary {
    /// One `key: value` line per metric; `na` marks undefined values.
    pub fn to_key_values(&self) -> String {
        let attacks = if self.attacks.is_empty() {
            "none".to_string()
        } else {
            self.attacks.iter().map(|a| a.as_str()).collect::<Vec<_>>().join("+")
        };
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k}: {v}");
        };
        kv("scenario", self.scenario.clone());
        kv("seed", self.seed.to_string());
        kv("gate", if self.gate { "on" } else { "off" }.into());
        kv("attacks", attacks);
        kv("epochs", self.epochs.to_string());
        kv("rms_3d_pre", opt_f(self.rms_pre));
        kv("rms_3d_attack", opt_f(self.rms_attack));
        kv("rms_3d_post", opt_f(self.rms_post));
        kv("max_error_attack", opt_f(self.max_error_attack));
        kv("hrms_converged", opt_f(self.hrms_converged));
        kv("spp_rms_3d", opt_f(self.spp_rms));
        kv("fix_ratio", format!("{:.4}", self.fix_ratio));
        kv("time_to_first_fix", opt_u(self.time_to_first_fix));
        kv("time_to_refix_after_attack", opt_u(self.time_to_refix_after_attack));
        kv("detection_latency", opt_u(self.detection_latency));
        kv("false_alarms", self.false_alarms.to_string());
        kv("quiet_epochs", self.quiet_epochs.to_string());
        kv("fixed_during_attack", self.fixed_during_attack.to_string());
        s
    }
}

/// Parses `key: value` lines written by [`RunSummary::to_key_values`].
pub fn parse_key_values(text: &str) -> Result<BTreeMap<String, String>, HarnessError> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.split_once(':')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| HarnessError::Config(format!("malformed summary line {l:?}")))
        })
        .collect()
}

pub const REPORT_COLUMNS: [&str; 10] = [
    "scenario",
    "attacks",
    "gate",
    "rms_3d_pre",
    "rms_3d_attack",
    "rms_3d_post",
    "fix_ratio",
    "time_to_refix_after_attack",
    "detection_latency",
    "false_alarms",
];

/// Fixed-width comparison table, one row per summary.
pub fn report_table(summaries: &[BTreeMap<String, String>]) -> String {
    let rows: Vec<Vec<String>> = summaries
        .iter()
        .map(|m| REPORT_COLUMNS.iter().map(|c| m.get(*c).cloned().unwrap_or_else(|| "na".into())).collect())
        .collect();
    let widths: Vec<usize> = REPORT_COLUMNS
        .iter()
        .enumerate()
        .map(|(i, c)| rows.iter().map(|r| r[i].len()).chain([c.len()]).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    let mut line = |cells: Vec<&str>| {
        let padded: Vec<String> = cells.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
        let _ = writeln!(out, "{}", padded.join("  ").trim_end());
    };
    line(REPORT_COLUMNS.to_vec());
    for r in &rows {
        line(r.iter().map(String::as_str).collect());
    }
    out
}
