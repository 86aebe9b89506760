//! The two-group / two-period analysis table: loading, validation, outcome
//! support encoding and design rows.
//!
//! Outcomes are grouped into categories by exact floating-point equality.
//! Data recorded at a fixed precision should be rounded before loading if
//! near-equal values are meant to tie.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// One outcome row.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation<T> {
    pub outcome: T,
    /// Treatment group indicator `D`.
    pub group: bool,
    /// Period indicator `T` (post = true).
    pub period: bool,
    pub covariates: Vec<T>,
    pub cluster_id: Option<String>,
}

impl<T: Scalar> Observation<T> {
    pub fn new(outcome: T, group: bool, period: bool, covariates: Vec<T>) -> Self {
        Observation {
            outcome,
            group,
            period,
            covariates,
            cluster_id: None,
        }
    }

    pub fn with_cluster(mut self, id: impl Into<String>) -> Self {
        self.cluster_id = Some(id.into());
        self
    }

    pub fn is_treated_post(&self) -> bool {
        self.group && self.period
    }
}

/// Validated analysis table.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    observations: Vec<Observation<T>>,
    covariate_names: Vec<String>,
}

/// Number of rows in each `(D, T)` cell, indexed `[D][T]`.
pub type CellCounts = [[usize; 2]; 2];

impl<T: Scalar> Dataset<T> {
    pub fn new(observations: Vec<Observation<T>>, covariate_names: Vec<String>) -> Result<Self> {
        let p = covariate_names.len();
        let mut clustered = 0usize;
        for (i, obs) in observations.iter().enumerate() {
            if !obs.outcome.is_finite() {
                return Err(Error::InvalidData(format!("row {i}: outcome is not finite")));
            }
            if obs.covariates.len() != p {
                return Err(Error::InvalidData(format!(
                    "row {i}: expected {p} covariates, found {}",
                    obs.covariates.len()
                )));
            }
            if let Some(j) = obs.covariates.iter().position(|x| !x.is_finite()) {
                return Err(Error::InvalidData(format!(
                    "row {i}: covariate '{}' is not finite",
                    covariate_names[j]
                )));
            }
            if obs.cluster_id.is_some() {
                clustered += 1;
            }
        }
        if clustered != 0 && clustered != observations.len() {
            return Err(Error::InvalidData(format!(
                "cluster id present on {clustered} of {} rows; either all rows carry one or none",
                observations.len()
            )));
        }
        let ds = Dataset {
            observations,
            covariate_names,
        };
        ds.check_cells()?;
        Ok(ds)
    }

    fn check_cells(&self) -> Result<()> {
        let counts = self.cell_counts();
        let names = [["control-pre", "control-post"], ["treated-pre", "treated-post"]];
        for d in 0..2 {
            for t in 0..2 {
                if counts[d][t] == 0 {
                    return Err(Error::InvalidData(format!(
                        "empty {} cell (D={d}, T={t})",
                        names[d][t]
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn observations(&self) -> &[Observation<T>] {
        &self.observations
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn n_covariates(&self) -> usize {
        self.covariate_names.len()
    }

    pub fn is_clustered(&self) -> bool {
        self.observations.first().is_some_and(|o| o.cluster_id.is_some())
    }

    pub fn cell_counts(&self) -> CellCounts {
        let mut c = [[0usize; 2]; 2];
        for o in &self.observations {
            c[o.group as usize][o.period as usize] += 1;
        }
        c
    }

    pub fn outcomes(&self) -> Vec<T> {
        self.observations.iter().map(|o| o.outcome).collect()
    }

    /// Row indices grouped by cluster, clusters in order of first appearance.
    /// Without cluster ids every row is its own cluster.
    pub fn clusters(&self) -> Vec<Vec<usize>> {
        if !self.is_clustered() {
            return (0..self.len()).map(|i| vec![i]).collect();
        }
        let mut index: HashMap<&str, usize> = HashMap::new();
        let mut groups: Vec<Vec<usize>> = Vec::new();
        for (i, o) in self.observations.iter().enumerate() {
            let id = o.cluster_id.as_deref().unwrap_or_default();
            let g = *index.entry(id).or_insert_with(|| {
                groups.push(Vec::new());
                groups.len() - 1
            });
            groups[g].push(i);
        }
        groups
    }

    /// Same covariate names, a new set of rows. Used for resampling.
    pub fn with_observations(&self, observations: Vec<Observation<T>>) -> Result<Self> {
        Dataset::new(observations, self.covariate_names.clone())
    }

    /// Applies `m` to every outcome.
    pub fn map_outcomes(&self, m: impl Fn(T) -> T) -> Result<Self> {
        let obs = self
            .observations
            .iter()
            .map(|o| Observation {
                outcome: m(o.outcome),
                ..o.clone()
            })
            .collect();
        self.with_observations(obs)
    }
}

/// Maps CSV header names to roles.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnMapping {
    pub outcome: String,
    pub group: String,
    pub period: String,
    #[serde(default)]
    pub cluster: Option<String>,
    #[serde(default)]
    pub covariates: Vec<String>,
}

impl Default for ColumnMapping {
    fn default() -> Self {
        ColumnMapping {
            outcome: "y".into(),
            group: "d".into(),
            period: "t".into(),
            cluster: None,
            covariates: Vec::new(),
        }
    }
}

fn parse_indicator(raw: &str, row: usize, column: &str) -> Result<bool> {
    match raw.trim() {
        "0" | "0.0" => Ok(false),
        "1" | "1.0" => Ok(true),
        other => Err(Error::Load(format!(
            "row {row}, column '{column}': expected 0 or 1, found '{other}'"
        ))),
    }
}

fn parse_number<T: Scalar>(raw: &str, row: usize, column: &str) -> Result<T> {
    let s = raw.trim();
    if s.is_empty() || s.eq_ignore_ascii_case("na") || s.eq_ignore_ascii_case("nan") {
        return Err(Error::Load(format!("row {row}, column '{column}': missing value")));
    }
    let v: f64 = s
        .parse()
        .map_err(|_| Error::Load(format!("row {row}, column '{column}': non-numeric value '{s}'")))?;
    if !v.is_finite() {
        return Err(Error::Load(format!("row {row}, column '{column}': non-finite value '{s}'")));
    }
    Ok(T::lit(v))
}

/// Reads a headed CSV file. Row numbers in errors are 1-based data rows.
pub fn load_csv<T: Scalar>(path: impl AsRef<Path>, mapping: &ColumnMapping) -> Result<Dataset<T>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)
        .map_err(|e| Error::Load(format!("cannot open '{}': {e}", path.display())))?;
    read_csv(file, mapping)
}

pub fn read_csv<T: Scalar, R: std::io::Read>(reader: R, mapping: &ColumnMapping) -> Result<Dataset<T>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Load(format!("missing column '{name}'")))
    };
    let y_col = find(&mapping.outcome)?;
    let d_col = find(&mapping.group)?;
    let t_col = find(&mapping.period)?;
    let c_col = mapping.cluster.as_deref().map(find).transpose()?;
    let x_cols = mapping
        .covariates
        .iter()
        .map(|c| find(c))
        .collect::<Result<Vec<_>>>()?;

    let mut observations = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let row = i + 1;
        let record = record?;
        let get = |col: usize, name: &str| -> Result<&str> {
            record
                .get(col)
                .ok_or_else(|| Error::Load(format!("row {row}: missing field for column '{name}'")))
        };
        let outcome = parse_number(get(y_col, &mapping.outcome)?, row, &mapping.outcome)?;
        let group = parse_indicator(get(d_col, &mapping.group)?, row, &mapping.group)?;
        let period = parse_indicator(get(t_col, &mapping.period)?, row, &mapping.period)?;
        let covariates = x_cols
            .iter()
            .zip(&mapping.covariates)
            .map(|(&c, name)| parse_number(get(c, name)?, row, name))
            .collect::<Result<Vec<T>>>()?;
        let cluster_id = match (c_col, mapping.cluster.as_deref()) {
            (Some(c), Some(name)) => {
                let id = get(c, name)?;
                if id.is_empty() {
                    return Err(Error::Load(format!("row {row}, column '{name}': missing cluster id")));
                }
                Some(id.to_string())
            }
            _ => None,
        };
        observations.push(Observation {
            outcome,
            group,
            period,
            covariates,
            cluster_id,
        });
    }
    Dataset::new(observations, mapping.covariates.clone()).map_err(|e| match e {
        Error::InvalidData(msg) => Error::Load(msg),
        other => other,
    })
}

/// Writes the dataset with the column names of `mapping`.
pub fn write_csv<T: Scalar, W: std::io::Write>(
    dataset: &Dataset<T>,
    mapping: &ColumnMapping,
    writer: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec![mapping.outcome.clone(), mapping.group.clone(), mapping.period.clone()];
    let cluster = mapping.cluster.clone().filter(|_| dataset.is_clustered());
    if let Some(c) = &cluster {
        header.push(c.clone());
    }
    header.extend(mapping.covariates.iter().cloned());
    w.write_record(&header)?;
    for o in dataset.observations() {
        let mut rec = vec![
            format!("{:?}", o.outcome.as_f64()),
            (o.group as u8).to_string(),
            (o.period as u8).to_string(),
        ];
        if cluster.is_some() {
            rec.push(o.cluster_id.clone().unwrap_or_default());
        }
        rec.extend(o.covariates.iter().map(|x| format!("{:?}", x.as_f64())));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Distinct sorted outcome values and the category of every row.
#[derive(Debug, Clone, PartialEq)]
pub struct SupportEncoding<T> {
    pub support: Vec<T>,
    pub category_index: Vec<usize>,
    pub counts: Vec<usize>,
}

impl<T: Scalar> SupportEncoding<T> {
    pub fn n_categories(&self) -> usize {
        self.support.len()
    }

    /// Index of the last support point `<= y`, or `None` below the support.
    pub fn position(&self, y: T) -> Option<usize> {
        step_position(&self.support, y)
    }

    /// Encoding with outcomes below `lower` collapsed into the lowest
    /// category and outcomes above `upper` into the highest. A collapsed
    /// category is represented by its most extreme-inward observed value
    /// (largest value below `lower`, smallest value above `upper`).
    pub fn censored(&self, lower: T, upper: T) -> Result<Self> {
        if !(lower < upper) {
            return Err(Error::Config(format!("censor bounds need L < U, got ({lower}, {upper})")));
        }
        let k = self.support.len();
        let (min, max) = (self.support[0], self.support[k - 1]);
        if lower < min || upper > max {
            return Err(Error::Config(format!(
                "censor bounds ({lower}, {upper}) must lie inside the outcome range [{min}, {max}]"
            )));
        }
        // Number of distinct values strictly below L / strictly above U.
        let below = self.support.partition_point(|&y| y < lower);
        let above = k - self.support.partition_point(|&y| y <= upper);
        let mut remap = Vec::with_capacity(k);
        let mut support = Vec::with_capacity(k);
        for (j, &y) in self.support.iter().enumerate() {
            if below > 0 && j < below {
                if j + 1 == below {
                    support.push(y);
                }
                remap.push(0);
            } else if above > 0 && j >= k - above {
                if j == k - above {
                    support.push(y);
                }
                remap.push(support.len() - 1);
            } else {
                support.push(y);
                remap.push(support.len() - 1);
            }
        }
        let mut counts = vec![0usize; support.len()];
        let category_index: Vec<usize> = self
            .category_index
            .iter()
            .map(|&c| {
                let r = remap[c];
                counts[r] += 1;
                r
            })
            .collect();
        if support.len() < 2 {
            return Err(Error::InvalidData(
                "censoring leaves fewer than 2 outcome categories".into(),
            ));
        }
        Ok(SupportEncoding {
            support,
            category_index,
            counts,
        })
    }
}

/// Index of the last element of sorted `support` that is `<= y`.
#[inline]
pub fn step_position<T: Scalar>(support: &[T], y: T) -> Option<usize> {
    support.partition_point(|&s| s <= y).checked_sub(1)
}

pub fn encode_support<T: Scalar>(dataset: &Dataset<T>) -> Result<SupportEncoding<T>> {
    if dataset.is_empty() {
        return Err(Error::InvalidData("empty dataset".into()));
    }
    let mut support = dataset.outcomes();
    support.sort_by(|a, b| a.partial_cmp(b).expect("finite outcomes"));
    support.dedup();
    if support.len() < 2 {
        return Err(Error::InvalidData(
            "fewer than 2 distinct outcome values; the model is undefined".into(),
        ));
    }
    let mut counts = vec![0usize; support.len()];
    let category_index = dataset
        .observations()
        .iter()
        .map(|o| {
            let k = support
                .binary_search_by(|s| s.partial_cmp(&o.outcome).expect("finite outcomes"))
                .expect("outcome present in its own support");
            counts[k] += 1;
            k
        })
        .collect();
    Ok(SupportEncoding {
        support,
        category_index,
        counts,
    })
}

/// Regression row `[D, T, D·T, X₁ … X_p]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignRow<T>(pub Vec<T>);

impl<T: Scalar> DesignRow<T> {
    pub fn from_observation(o: &Observation<T>) -> Self {
        let d = if o.group { T::one() } else { T::zero() };
        let t = if o.period { T::one() } else { T::zero() };
        let mut w = Vec::with_capacity(o.covariates.len() + 3);
        w.extend([d, t, d * t]);
        w.extend_from_slice(&o.covariates);
        DesignRow(w)
    }

    pub fn as_slice(&self) -> &[T] {
        &self.0
    }
}

pub fn design_rows<T: Scalar>(dataset: &Dataset<T>) -> Vec<DesignRow<T>> {
    dataset
        .observations()
        .iter()
        .map(DesignRow::from_observation)
        .collect()
}

/// Names of the regression coefficients in design-row order.
pub fn coefficient_names(covariate_names: &[String]) -> Vec<String> {
    let mut names = vec!["D".to_string(), "T".to_string(), "D:T".to_string()];
    names.extend(covariate_names.iter().cloned());
    names
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn obs(y: f64, d: bool, t: bool, x: Vec<f64>) -> Observation<f64> {
        Observation::new(y, d, t, x)
    }

    fn four_cells(ys: [f64; 4]) -> Dataset<f64> {
        Dataset::new(
            vec![
                obs(ys[0], false, false, vec![]),
                obs(ys[1], false, true, vec![]),
                obs(ys[2], true, false, vec![]),
                obs(ys[3], true, true, vec![]),
            ],
            vec![],
        )
        .unwrap()
    }

    #[test]
    fn load_four_rows() {
        let csv = "y,d,t\n1.5,0,0\n2.5,0,1\n3.5,1,0\n4.5,1,1\n";
        let ds: Dataset<f64> = read_csv(csv.as_bytes(), &ColumnMapping::default()).unwrap();
        assert_eq!(ds.len(), 4);
        assert_eq!(ds.cell_counts(), [[1, 1], [1, 1]]);
    }

    #[test]
    fn load_rejects_missing_treated_post() {
        let csv = "y,d,t\n1,0,0\n2,0,1\n3,1,0\n";
        let err = read_csv::<f64, _>(csv.as_bytes(), &ColumnMapping::default()).unwrap_err();
        assert!(err.to_string().contains("empty treated-post cell"), "{err}");
    }

    #[test]
    fn load_names_missing_column_and_bad_cell() {
        let csv = "y,d\n1,0\n";
        let err = read_csv::<f64, _>(csv.as_bytes(), &ColumnMapping::default()).unwrap_err();
        assert!(err.to_string().contains("missing column 't'"), "{err}");

        let csv = "y,d,t\n1,0,0\nabc,0,1\n";
        let err = read_csv::<f64, _>(csv.as_bytes(), &ColumnMapping::default()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("row 2") && msg.contains("'y'") && msg.contains("non-numeric"), "{msg}");

        let csv = "y,d,t\n1,0,0\n2,2,1\n";
        let err = read_csv::<f64, _>(csv.as_bytes(), &ColumnMapping::default()).unwrap_err();
        assert!(err.to_string().contains("expected 0 or 1"));

        let csv = "y,d,t\n1,0,0\n,0,1\n";
        let err = read_csv::<f64, _>(csv.as_bytes(), &ColumnMapping::default()).unwrap_err();
        assert!(err.to_string().contains("missing value"));
    }

    #[test]
    fn load_with_covariates_and_clusters() {
        let csv = "id,y,d,t,age,sex\na,1,0,0,30,1\na,2,0,1,31,1\nb,3,1,0,40,0\nb,4,1,1,41,0\n";
        let mapping = ColumnMapping {
            cluster: Some("id".into()),
            covariates: vec!["age".into(), "sex".into()],
            ..ColumnMapping::default()
        };
        let ds: Dataset<f64> = read_csv(csv.as_bytes(), &mapping).unwrap();
        assert_eq!(ds.n_covariates(), 2);
        assert!(ds.is_clustered());
        assert_eq!(ds.clusters(), vec![vec![0, 1], vec![2, 3]]);
    }

    #[test]
    fn partial_cluster_ids_rejected() {
        let mut rows = four_cells([1.0, 2.0, 3.0, 4.0]).observations().to_vec();
        rows[0].cluster_id = Some("a".into());
        assert!(Dataset::new(rows, vec![]).is_err());
    }

    #[test]
    fn encode_support_sorts_and_indexes() {
        let ds = Dataset::new(
            vec![
                obs(3.0, false, false, vec![]),
                obs(1.0, false, true, vec![]),
                obs(2.0, true, false, vec![]),
                obs(2.0, true, true, vec![]),
            ],
            vec![],
        )
        .unwrap();
        let enc = encode_support(&ds).unwrap();
        assert_eq!(enc.support, vec![1.0, 2.0, 3.0]);
        assert_eq!(enc.category_index, vec![2, 0, 1, 1]);
        assert_eq!(enc.counts, vec![1, 2, 1]);
    }

    #[test]
    fn encode_support_groups_ties() {
        let ds = four_cells([1.0, 1.0, 2.0, 1.0]);
        let enc = encode_support(&ds).unwrap();
        assert_eq!(enc.support, vec![1.0, 2.0]);
        assert_eq!(enc.counts, vec![3, 1]);
    }

    #[test]
    fn encode_support_rejects_constant_outcome() {
        let ds = four_cells([5.0; 4]);
        assert!(encode_support(&ds).is_err());
    }

    #[test]
    fn design_row_layout() {
        assert_eq!(DesignRow::from_observation(&obs(0.0, true, true, vec![0.5])).0, vec![1.0, 1.0, 1.0, 0.5]);
        assert_eq!(
            DesignRow::from_observation(&obs(0.0, false, true, vec![2.0, -1.0])).0,
            vec![0.0, 1.0, 0.0, 2.0, -1.0]
        );
        assert_eq!(DesignRow::from_observation(&obs(0.0, true, false, vec![])).0, vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn censoring_collapses_tails() {
        let ds = Dataset::new(
            (0..8)
                .map(|i| obs(i as f64, i % 2 == 1, (i / 2) % 2 == 1, vec![]))
                .collect(),
            vec![],
        )
        .unwrap();
        let enc = encode_support(&ds).unwrap();
        let c = enc.censored(1.5, 5.5).unwrap();
        // {0,1} -> 1, {2..5} kept, {6,7} -> 6
        assert_eq!(c.support, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(c.counts, vec![2, 1, 1, 1, 1, 2]);
        assert_eq!(c.category_index, vec![0, 0, 1, 2, 3, 4, 5, 5]);
        assert!(enc.censored(5.0, 1.0).is_err());
        assert!(enc.censored(-1.0, 3.0).is_err());
    }

    #[test]
    fn step_position_convention() {
        let s = [1.0, 2.0, 4.0];
        assert_eq!(step_position(&s, 0.5), None);
        assert_eq!(step_position(&s, 1.0), Some(0));
        assert_eq!(step_position(&s, 3.9), Some(1));
        assert_eq!(step_position(&s, 9.0), Some(2));
    }

    fn arb_dataset() -> impl Strategy<Value = Dataset<f64>> {
        prop::collection::vec((-100.0f64..100.0, any::<bool>(), any::<bool>(), -5.0f64..5.0), 4..40).prop_map(
            |rows| {
                let mut obs: Vec<Observation<f64>> = rows
                    .into_iter()
                    .map(|(y, d, t, x)| Observation::new((y * 8.0).round() / 8.0, d, t, vec![x]))
                    .collect();
                // guarantee every cell
                for (i, (d, t)) in [(false, false), (false, true), (true, false), (true, true)].iter().enumerate() {
                    obs[i].group = *d;
                    obs[i].period = *t;
                }
                Dataset::new(obs, vec!["x".into()]).unwrap()
            },
        )
    }

    proptest! {
        #[test]
        fn csv_round_trip(ds in arb_dataset()) {
            let mapping = ColumnMapping { covariates: vec!["x".into()], ..ColumnMapping::default() };
            let mut buf = Vec::new();
            write_csv(&ds, &mapping, &mut buf).unwrap();
            let back: Dataset<f64> = read_csv(buf.as_slice(), &mapping).unwrap();
            prop_assert_eq!(back, ds);
        }

        #[test]
        fn support_is_permutation_invariant(ds in arb_dataset(), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut rows = ds.observations().to_vec();
            rows.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let shuffled = Dataset::new(rows, vec!["x".into()]).unwrap();
            if let (Ok(a), Ok(b)) = (encode_support(&ds), encode_support(&shuffled)) {
                prop_assert_eq!(a.support, b.support);
            }
        }
    }
}
