//! Audit records and report files.
//!
//! Every check in the library returns [`AuditRecord`]s; nothing passes or
//! fails silently. Reports serialize with a fixed field order and sorted
//! parameter keys so identical runs produce identical bytes.

use crate::format::g17;
use crate::Result;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::collections::BTreeMap;
use std::io::Write;

/// f64 that serializes non-finite values as strings instead of null.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Num(pub f64);

impl Serialize for Num {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.0.is_finite() {
            s.serialize_f64(self.0)
        } else if self.0.is_nan() {
            s.serialize_str("nan")
        } else if self.0 > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }
}

impl<'de> Deserialize<'de> for Num {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = serde_json::Value::deserialize(d)?;
        match v {
            serde_json::Value::Number(n) => Ok(Num(n.as_f64().unwrap_or(f64::NAN))),
            serde_json::Value::String(s) => match s.as_str() {
                "inf" => Ok(Num(f64::INFINITY)),
                "-inf" => Ok(Num(f64::NEG_INFINITY)),
                "nan" => Ok(Num(f64::NAN)),
                _ => Err(D::Error::custom("bad numeric string")),
            },
            _ => Err(D::Error::custom("expected number or numeric string")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AuditStatus {
    Pass,
    Fail,
    /// Hypothesis of the audited statement does not hold on this input;
    /// the inequality was not judged. Not a failure.
    Skip,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AuditRecord {
    pub check: String,
    pub params: BTreeMap<String, serde_json::Value>,
    pub lhs: Num,
    pub rhs: Num,
    pub slack: Num,
    pub pass: bool,
    pub status: AuditStatus,
    pub note: String,
    pub paper_ref: String,
}

impl AuditRecord {
    /// Pass/fail record: pass iff lhs <= rhs + slack.
    pub fn inequality(
        check: &str,
        params: BTreeMap<String, serde_json::Value>,
        lhs: f64,
        rhs: f64,
        slack: f64,
    ) -> Self {
        let ok = lhs <= rhs + slack;
        AuditRecord {
            check: check.to_string(),
            params,
            lhs: Num(lhs),
            rhs: Num(rhs),
            slack: Num(slack),
            pass: ok,
            status: if ok { AuditStatus::Pass } else { AuditStatus::Fail },
            note: String::new(),
            paper_ref: paper_ref(check).to_string(),
        }
    }

    pub fn skipped(check: &str, params: BTreeMap<String, serde_json::Value>, reason: &str) -> Self {
        AuditRecord {
            check: check.to_string(),
            params,
            lhs: Num(f64::NAN),
            rhs: Num(f64::NAN),
            slack: Num(0.0),
            pass: true,
            status: AuditStatus::Skip,
            note: reason.to_string(),
            paper_ref: paper_ref(check).to_string(),
        }
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = note.into();
        self
    }

    fn same_values(&self, other: &AuditRecord) -> bool {
        self.lhs.0.to_bits() == other.lhs.0.to_bits()
            && self.rhs.0.to_bits() == other.rhs.0.to_bits()
            && self.slack.0.to_bits() == other.slack.0.to_bits()
            && self.status == other.status
    }
}

/// Convenience builder for the params map.
pub fn params(pairs: &[(&str, serde_json::Value)]) -> BTreeMap<String, serde_json::Value> {
    pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
}

/// Statement anchors cited by the audit records.
pub fn paper_ref(check: &str) -> &'static str {
    match check {
        "hypotheses" => "Hyp. 2.1",
        "sigma-p" => "Eq. (2.2)",
        "contraction" => "Sec. 2 (kernel contraction)",
        "jensen" => "Sec. 2 (kernel Jensen)",
        "positivity" => "Sec. 2 (kernel positivity)",
        "gradient-estimate" => "Eq. (2.3)",
        "gradient-estimate-existential" => "Eq. (2.4)",
        "evolution-law" => "Sec. 2 (evolution law)",
        "kernel-oracle" => "Eq. (2.1)",
        "invariance" => "Sec. 2 (evolution system of measures)",
        "measure-derivative" => "Lemma 4.2",
        "log-sobolev" => "Eq. (4.1)",
        "lsi-epsilon" => "Eq. (4.2)",
        "tightness" => "Hyp. 4.3",
        "duhamel-bound" => "Eq. (A.2)",
        "picard-contraction" => "Thm. 3.2",
        "nonlinear-evolution-law" => "Sec. 4 (nonlinear evolution operator)",
        "nonlinear-certificates" => "Hyp. 3.4",
        "local-estimate" => "Eq. (3.2)",
        "local-estimate-data" => "Eq. (3.3)",
        "continuity-in-data" => "Thm. 4.1",
        "lp-estimate" => "Eq. (3.6)",
        "lp-estimate-self" => "Eq. (3.5)",
        "lp-global" => "Thm. 3.5",
        "pde-residual" => "Cor. 3.3",
        "hypercontractivity" => "Eq. (4.3)",
        "gradient-hyper" => "Eq. (4.4)",
        "hyper-exponent-chain" => "Thm. 4.5 (proof)",
        "supercontractivity" => "Eq. (4.5)",
        "gradient-super" => "Thm. 4.8(ii)",
        "harnack" => "Eq. (4.6)",
        "m-delta-lambda" => "Hyp. 4.12",
        "ultraboundedness" => "Eq. (4.7)",
        "gradient-ultra" => "Eq. (4.8)",
        "stability" => "Thm. 5.1",
        "stability-sup" => "Thm. 5.1(ii)",
        _ => "",
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Report {
    pub benchmark: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub n_pass: usize,
    pub n_fail: usize,
    pub n_skip: usize,
    pub records: Vec<AuditRecord>,
}

impl Report {
    pub fn new(benchmark: &str, seed: Option<u64>, records: Vec<AuditRecord>) -> Self {
        let mut r = Report {
            benchmark: benchmark.to_string(),
            seed,
            n_pass: 0,
            n_fail: 0,
            n_skip: 0,
            records,
        };
        r.recount();
        r
    }

    pub fn recount(&mut self) {
        self.n_pass = self.records.iter().filter(|r| r.status == AuditStatus::Pass).count();
        self.n_fail = self.records.iter().filter(|r| r.status == AuditStatus::Fail).count();
        self.n_skip = self.records.iter().filter(|r| r.status == AuditStatus::Skip).count();
    }

    pub fn all_pass(&self) -> bool {
        self.n_fail == 0
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(s: &str) -> Result<Report> {
        Ok(serde_json::from_str(s)?)
    }

    /// Union of reports. Exact duplicates collapse; records that share a
    /// check name and params but disagree on values keep both entries,
    /// the later one renamed `name#2`, `name#3`, ...
    pub fn merge(reports: &[Report]) -> Report {
        let mut records: Vec<AuditRecord> = Vec::new();
        let benchmark = if reports.iter().all(|r| r.benchmark == reports[0].benchmark) {
            reports.first().map(|r| r.benchmark.clone()).unwrap_or_default()
        } else {
            "merged".to_string()
        };
        for rep in reports {
            'rec: for rec in &rep.records {
                let mut conflict_count = 0usize;
                for existing in &records {
                    let base = existing.check.split('#').next().unwrap_or(&existing.check);
                    if base == rec.check && existing.params == rec.params {
                        if existing.same_values(rec) {
                            continue 'rec; // duplicate
                        }
                        conflict_count += 1;
                    }
                }
                let mut out = rec.clone();
                if conflict_count > 0 {
                    out.check = format!("{}#{}", rec.check, conflict_count + 1);
                }
                records.push(out);
            }
        }
        Report::new(&benchmark, reports.iter().find_map(|r| r.seed), records)
    }

    /// One CSV per check name: sorted param columns, then lhs, rhs,
    /// slack, status. Returns (check name, file contents) pairs in
    /// deterministic order.
    pub fn csv_series(&self) -> Vec<(String, String)> {
        let mut names: Vec<String> = self.records.iter().map(|r| r.check.clone()).collect();
        names.sort();
        names.dedup();
        let mut out = Vec::new();
        for name in names {
            let recs: Vec<&AuditRecord> =
                self.records.iter().filter(|r| r.check == name).collect();
            let mut keys: Vec<String> = recs
                .iter()
                .flat_map(|r| r.params.keys().cloned())
                .collect();
            keys.sort();
            keys.dedup();
            let mut buf = Vec::new();
            {
                let mut cols: Vec<&str> = keys.iter().map(|s| s.as_str()).collect();
                cols.extend_from_slice(&["lhs", "rhs", "slack", "status"]);
                crate::format::write_csv_header(&mut buf, &cols).unwrap();
                for r in recs {
                    let mut cells: Vec<String> = Vec::new();
                    for k in &keys {
                        cells.push(match r.params.get(k) {
                            Some(serde_json::Value::Number(n)) => {
                                g17(n.as_f64().unwrap_or(f64::NAN))
                            }
                            Some(serde_json::Value::String(s)) => s.clone(),
                            Some(v) => v.to_string(),
                            None => String::new(),
                        });
                    }
                    for v in [r.lhs.0, r.rhs.0, r.slack.0] {
                        cells.push(g17(v));
                    }
                    cells.push(
                        match r.status {
                            AuditStatus::Pass => "pass",
                            AuditStatus::Fail => "fail",
                            AuditStatus::Skip => "skip",
                        }
                        .to_string(),
                    );
                    writeln!(&mut buf, "{}", cells.join(",")).unwrap();
                }
            }
            out.push((name, String::from_utf8(buf).unwrap()));
        }
        out
    }
}

impl std::fmt::Display for AuditRecord {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let status = match self.status {
            AuditStatus::Pass => "PASS",
            AuditStatus::Fail => "FAIL",
            AuditStatus::Skip => "SKIP",
        };
        write!(
            f,
            "[{status}] {} lhs={} rhs={} slack={}",
            self.check,
            g17(self.lhs.0),
            g17(self.rhs.0),
            g17(self.slack.0)
        )?;
        if !self.note.is_empty() {
            write!(f, " ({})", self.note)?;
        }
        Ok(())
    }
}
