use serde::{Deserialize, Serialize};

use super::InteractionEstimate;
use crate::error::{Error, Result};

/// Provenance stamped on every emitted artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportMeta {
    pub tool: String,
    pub version: String,
    pub config_digest: String,
    pub seed: u64,
}

impl ReportMeta {
    pub fn new(config_digest: impl Into<String>, seed: u64) -> Self {
        Self {
            tool: "hessix".into(),
            version: crate::VERSION.into(),
            config_digest: config_digest.into(),
            seed,
        }
    }

    /// Single `#`-prefixed comment line for CSV outputs.
    pub fn csv_comment(&self) -> String {
        format!(
            "# tool={} version={} config_digest={} seed={}",
            self.tool, self.version, self.config_digest, self.seed
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportRow {
    pub pair: [usize; 2],
    pub features: [String; 2],
    pub mean: f64,
    pub variance: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub p_bayes: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_permute: Option<f64>,
    pub rank: usize,
    pub significant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionReport {
    pub meta: ReportMeta,
    pub measure: String,
    pub layer: usize,
    pub clusters: usize,
    pub mc_samples: usize,
    pub interactions: Vec<ReportRow>,
}

impl DetectionReport {
    /// Rows sorted by rank. `names` labels the features (or hidden nodes).
    pub fn from_estimates(
        meta: ReportMeta,
        measure: impl Into<String>,
        layer: usize,
        clusters: usize,
        mc_samples: usize,
        estimates: &[InteractionEstimate],
        names: &[String],
    ) -> Result<Self> {
        let mut rows = estimates
            .iter()
            .map(|e| {
                let (i, j) = e.pair;
                let name = |k: usize| {
                    names
                        .get(k)
                        .cloned()
                        .ok_or_else(|| Error::invalid(format!("no name for index {k}")))
                };
                Ok(ReportRow {
                    pair: [i, j],
                    features: [name(i)?, name(j)?],
                    mean: e.mean,
                    variance: e.variance,
                    ci_low: e.ci_low,
                    ci_high: e.ci_high,
                    p_bayes: e.p_bayes,
                    p_permute: None,
                    rank: e.rank,
                    significant: e.significant(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        rows.sort_by_key(|r| r.rank);
        Ok(Self {
            meta,
            measure: measure.into(),
            layer,
            clusters,
            mc_samples,
            interactions: rows,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn to_csv(&self) -> String {
        let mut s = self.meta.csv_comment();
        s.push('\n');
        s.push_str("rank,i,j,feature_i,feature_j,mean,variance,ci_low,ci_high,p_bayes,p_permute,significant\n");
        for r in &self.interactions {
            let pp = r.p_permute.map(|p| format!("{p:?}")).unwrap_or_default();
            s.push_str(&format!(
                "{},{},{},{},{},{:?},{:?},{:?},{:?},{:?},{},{}\n",
                r.rank,
                r.pair[0],
                r.pair[1],
                csv_field(&r.features[0]),
                csv_field(&r.features[1]),
                r.mean,
                r.variance,
                r.ci_low,
                r.ci_high,
                r.p_bayes,
                pp,
                r.significant
            ));
        }
        s
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> DetectionReport {
        let mut est = vec![
            InteractionEstimate::from_moments((0, 1), 0.1, 0.01),
            InteractionEstimate::from_moments((0, 2), 1.532, 0.751 * 0.751),
            InteractionEstimate::from_moments((1, 2), 0.3, 0.0),
        ];
        super::super::assign_ranks(&mut est);
        let names: Vec<String> = ["a", "b,c", "d"].iter().map(|s| s.to_string()).collect();
        DetectionReport::from_estimates(ReportMeta::new("abc", 7), "geh", 0, 2, 10, &est, &names).unwrap()
    }

    #[test]
    fn json_round_trip_is_identical() {
        let r = sample();
        let back = DetectionReport::from_json(&r.to_json().unwrap()).unwrap();
        assert_eq!(back, r);
        assert_eq!(back.interactions[0].pair, [0, 2]);
        assert!(back.interactions[0].significant);
    }

    #[test]
    fn csv_has_meta_and_one_row_per_pair() {
        let csv = sample().to_csv();
        let lines: Vec<_> = csv.lines().collect();
        assert!(lines[0].starts_with("# tool=hessix"));
        assert_eq!(lines.len(), 5);
        assert!(lines[3].contains("\"b,c\""));
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let mut v: serde_json::Value = serde_json::from_str(&sample().to_json().unwrap()).unwrap();
        v["extra"] = 1.into();
        assert!(DetectionReport::from_json(&v.to_string()).is_err());
    }
}
