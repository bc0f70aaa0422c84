use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{retained_view_indices, Dataset, DatasetError};
use crate::rng::{splitmix64, SeededRng};
use crate::taxonomy::Taxonomy;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    /// fixed per-taxon test counts, remainder split train/val per taxon
    Comparison,
    /// train/val/test fractions
    MachineLearning,
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::Comparison => "comparison",
            Scheme::MachineLearning => "ml",
        })
    }
}

impl FromStr for Scheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "comparison" => Ok(Scheme::Comparison),
            "ml" | "machine-learning" => Ok(Scheme::MachineLearning),
            other => Err(format!("unknown split scheme '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MlMode {
    /// per-taxon proportional allocation
    Stratified,
    /// one shuffle over all specimens
    Random,
}

impl fmt::Display for MlMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MlMode::Stratified => "stratified",
            MlMode::Random => "random",
        })
    }
}

impl FromStr for MlMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "stratified" => Ok(MlMode::Stratified),
            "random" => Ok(MlMode::Random),
            other => Err(format!("unknown ml split mode '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub scheme: Scheme,
    pub seed: u64,
    pub n_splits: usize,
    /// Fixed test count per class label name, used for every split. `None`
    /// selects [`default_comparison_counts`].
    pub comparison_counts: Option<BTreeMap<String, usize>>,
    pub comparison_train_fraction: f64,
    /// train, val, test
    pub ml_fractions: [f64; 3],
    pub ml_mode: MlMode,
    pub train_view_cap: usize,
    pub test_view_cap: usize,
    /// test view cap under the comparison scheme
    pub comparison_test_view_cap: usize,
}

impl SplitSpec {
    pub fn new(scheme: Scheme, seed: u64) -> Self {
        SplitSpec {
            scheme,
            seed,
            n_splits: 10,
            comparison_counts: None,
            comparison_train_fraction: 0.8,
            ml_fractions: [0.7, 0.1, 0.2],
            ml_mode: MlMode::Stratified,
            train_view_cap: 50,
            test_view_cap: 50,
            comparison_test_view_cap: 10,
        }
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        let bad = |m: &str| Err(DatasetError::InvalidSpec(m.to_string()));
        if self.n_splits == 0 {
            return bad("n_splits must be at least 1");
        }
        let sum: f64 = self.ml_fractions.iter().sum();
        if self.ml_fractions.iter().any(|f| !(0.0..=1.0).contains(f)) || (sum - 1.0).abs() > 1e-9 {
            return bad("ml fractions must be in [0, 1] and sum to 1");
        }
        if !(0.0..=1.0).contains(&self.comparison_train_fraction) {
            return bad("comparison train fraction must be in [0, 1]");
        }
        if self.train_view_cap == 0 || self.test_view_cap == 0 || self.comparison_test_view_cap == 0 {
            return bad("view caps must be at least 1");
        }
        Ok(())
    }

    fn test_cap(&self) -> usize {
        match self.scheme {
            Scheme::Comparison => self.comparison_test_view_cap,
            Scheme::MachineLearning => self.test_view_cap,
        }
    }
}

/// One train/val/test division with the views retained per specimen.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataSplit {
    pub split: usize,
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
    pub views: BTreeMap<String, Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<String>,
}

impl DataSplit {
    pub fn from_json(bytes: &[u8]) -> Result<DataSplit, DatasetError> {
        let split: DataSplit = serde_json::from_slice(bytes).map_err(|e| DatasetError::InvalidSplit(e.to_string()))?;
        split.check_disjoint()?;
        Ok(split)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("split serializes");
        s.push('\n');
        s
    }

    fn check_disjoint(&self) -> Result<(), DatasetError> {
        let mut seen = HashSet::new();
        for id in self.train.iter().chain(&self.val).chain(&self.test) {
            if !seen.insert(id.as_str()) {
                return Err(DatasetError::InvalidSplit(format!(
                    "specimen '{id}' appears in more than one role"
                )));
            }
        }
        if let Some(id) = self.views.keys().find(|k| !seen.contains(k.as_str())) {
            return Err(DatasetError::InvalidSplit(format!(
                "views listed for unassigned specimen '{id}'"
            )));
        }
        Ok(())
    }

    /// Check that every id and retained view exists in `dataset`.
    pub fn validate_against(&self, dataset: &Dataset) -> Result<(), DatasetError> {
        self.check_disjoint()?;
        for id in self.train.iter().chain(&self.val).chain(&self.test) {
            let specimen = dataset
                .get(id)
                .ok_or_else(|| DatasetError::InvalidSplit(format!("unknown specimen '{id}'")))?;
            if let Some(views) = self.views.get(id) {
                if views.is_empty() {
                    return Err(DatasetError::InvalidSplit(format!("no views kept for '{id}'")));
                }
                for v in views {
                    if !specimen.views.iter().any(|x| &x.image_id == v) {
                        return Err(DatasetError::InvalidSplit(format!(
                            "specimen '{id}' has no image '{v}'"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Largest-remainder apportionment of `total` items by `fractions`
/// (normalized). Ties in the remainders go to the earlier part.
pub fn apportion(total: usize, fractions: &[f64]) -> Vec<usize> {
    let sum: f64 = fractions.iter().sum();
    if fractions.is_empty() || sum <= 0.0 {
        return vec![0; fractions.len()];
    }
    let quotas: Vec<f64> = fractions.iter().map(|f| total as f64 * f / sum).collect();
    // guard against 0.7 * 10 landing at 6.999...
    let mut parts: Vec<usize> = quotas.iter().map(|q| (q + 1e-9).floor() as usize).collect();
    let assigned: usize = parts.iter().sum();
    let mut order: Vec<usize> = (0..fractions.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - parts[a] as f64;
        let rb = quotas[b] - parts[b] as f64;
        rb.partial_cmp(&ra).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
    });
    for &i in order.iter().cycle().take(total.saturating_sub(assigned)) {
        parts[i] += 1;
    }
    parts
}

/// Default comparison test counts for split `split`: one specimen per class
/// label plus a second one for a rotating block of labels. With 39 labels
/// and 10 splits this gives seven splits of 46 and three of 45, 457 test
/// specimens in total.
pub fn default_comparison_counts(labels: usize, split: usize) -> Vec<usize> {
    const EXTRA: usize = 7;
    let extras = if split < 7 { EXTRA } else { EXTRA - 1 }.min(labels);
    let mut counts = vec![1; labels];
    if labels == 0 {
        return counts;
    }
    for j in 0..extras {
        counts[(split * EXTRA + j) % labels] += 1;
    }
    counts
}

fn split_stream(seed: u64, split: usize) -> u64 {
    let mut s = seed ^ (split as u64).wrapping_mul(0xA076_1D64_78BD_642F);
    splitmix64(&mut s)
}

fn by_label(dataset: &Dataset, labels: usize) -> Vec<Vec<usize>> {
    let mut groups = vec![Vec::new(); labels];
    for (i, s) in dataset.specimens().iter().enumerate() {
        if s.label < labels {
            groups[s.label].push(i);
        }
    }
    groups
}

fn finish(dataset: &Dataset, spec: &SplitSpec, split: usize, roles: [Vec<usize>; 3]) -> DataSplit {
    let view_seed = split_stream(spec.seed, split);
    let mut views = BTreeMap::new();
    let [mut train, mut val, mut test] = roles;
    for set in [&mut train, &mut val, &mut test] {
        set.sort_unstable();
    }
    let mut ids = |set: &[usize], cap: usize| -> Vec<String> {
        set.iter()
            .map(|&i| {
                let s = &dataset.specimens()[i];
                let kept = retained_view_indices(s, cap, view_seed)
                    .into_iter()
                    .map(|k| s.views[k].image_id.clone())
                    .collect();
                views.insert(s.id.clone(), kept);
                s.id.clone()
            })
            .collect()
    };
    let train = ids(&train, spec.train_view_cap);
    let val = ids(&val, spec.train_view_cap);
    let test = ids(&test, spec.test_cap());
    DataSplit {
        split,
        train,
        val,
        test,
        views,
        manifest: None,
    }
}

/// Comparison protocol: per class label, a fixed number of test specimens;
/// the rest of each label is divided train/val by
/// `comparison_train_fraction`.
pub fn make_comparison_splits(
    dataset: &Dataset,
    taxonomy: &Taxonomy,
    spec: &SplitSpec,
) -> Result<Vec<DataSplit>, DatasetError> {
    spec.validate()?;
    let labels = taxonomy.labels();
    let groups = by_label(dataset, labels.len());
    let fixed: Option<Vec<usize>> = match &spec.comparison_counts {
        None => None,
        Some(table) => {
            if let Some(name) = table.keys().find(|n| taxonomy.label_by_name(n).is_none()) {
                return Err(DatasetError::InvalidSpec(format!("unknown class label '{name}'")));
            }
            Some(
                labels
                    .iter()
                    .map(|l| table.get(&l.name).copied().unwrap_or(0))
                    .collect(),
            )
        }
    };
    let fractions = [spec.comparison_train_fraction, 1.0 - spec.comparison_train_fraction];
    (0..spec.n_splits)
        .map(|split| {
            let counts = fixed
                .clone()
                .unwrap_or_else(|| default_comparison_counts(labels.len(), split));
            let mut rng = SeededRng::new(spec.seed, split_stream(spec.seed, split));
            let mut roles: [Vec<usize>; 3] = Default::default();
            for (label, members) in groups.iter().enumerate() {
                let need = counts[label];
                if need > members.len() {
                    return Err(DatasetError::InsufficientSpecimens {
                        taxon: labels[label].name.clone(),
                        needed: need,
                        available: members.len(),
                    });
                }
                let mut members = members.clone();
                rng.shuffle(&mut members);
                let (test, rest) = members.split_at(need);
                let parts = apportion(rest.len(), &fractions);
                roles[0].extend_from_slice(&rest[..parts[0]]);
                roles[1].extend_from_slice(&rest[parts[0]..]);
                roles[2].extend_from_slice(test);
            }
            Ok(finish(dataset, spec, split, roles))
        })
        .collect()
}

/// Machine-learning protocol: train/val/test by fractions, stratified per
/// class label (default) or over one shuffle of all specimens.
pub fn make_ml_splits(
    dataset: &Dataset,
    taxonomy: &Taxonomy,
    spec: &SplitSpec,
) -> Result<Vec<DataSplit>, DatasetError> {
    spec.validate()?;
    if dataset.len() < 10 {
        return Err(DatasetError::TooFewSpecimens {
            needed: 10,
            found: dataset.len(),
        });
    }
    let groups = match spec.ml_mode {
        MlMode::Stratified => by_label(dataset, taxonomy.labels().len()),
        MlMode::Random => vec![(0..dataset.len()).collect()],
    };
    Ok((0..spec.n_splits)
        .map(|split| {
            let mut rng = SeededRng::new(spec.seed, split_stream(spec.seed, split));
            let mut roles: [Vec<usize>; 3] = Default::default();
            for members in &groups {
                let mut members = members.clone();
                rng.shuffle(&mut members);
                let parts = apportion(members.len(), &spec.ml_fractions);
                let (train, rest) = members.split_at(parts[0]);
                let (val, test) = rest.split_at(parts[1]);
                roles[0].extend_from_slice(train);
                roles[1].extend_from_slice(val);
                roles[2].extend_from_slice(test);
            }
            finish(dataset, spec, split, roles)
        })
        .collect())
}

pub fn make_splits(dataset: &Dataset, taxonomy: &Taxonomy, spec: &SplitSpec) -> Result<Vec<DataSplit>, DatasetError> {
    match spec.scheme {
        Scheme::Comparison => make_comparison_splits(dataset, taxonomy, spec),
        Scheme::MachineLearning => make_ml_splits(dataset, taxonomy, spec),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Specimen, View};
    use crate::taxonomy::fixture;

    /// Specimens per label as in the fixture counts, or `per_label` each.
    fn dataset(taxonomy: &Taxonomy, per_label: Option<usize>, views: usize) -> Dataset {
        let mut specimens = Vec::new();
        for (l, label) in taxonomy.labels().iter().enumerate() {
            let n = per_label.unwrap_or(label.specimens.unwrap() as usize);
            for k in 0..n {
                specimens.push(Specimen {
                    id: format!("{l}-{k}"),
                    label: l,
                    truth: taxonomy.label_path(l).unwrap(),
                    views: (0..views)
                        .map(|v| View {
                            image_id: format!("i{v}"),
                            values: vec![0.0],
                        })
                        .collect(),
                });
            }
        }
        Dataset::new(1, specimens).unwrap()
    }

    fn assert_partition(split: &DataSplit, total: usize) {
        let mut all: Vec<&String> = split.train.iter().chain(&split.val).chain(&split.test).collect();
        assert_eq!(all.len(), total);
        all.sort();
        all.dedup();
        assert_eq!(all.len(), total);
    }

    #[test]
    fn apportion_examples() {
        assert_eq!(apportion(10, &[0.7, 0.1, 0.2]), vec![7, 1, 2]);
        assert_eq!(apportion(5, &[0.8, 0.2]), vec![4, 1]);
        assert_eq!(apportion(3, &[0.5, 0.5]), vec![2, 1]);
        assert_eq!(apportion(0, &[0.7, 0.1, 0.2]), vec![0, 0, 0]);
        for n in 0..200 {
            assert_eq!(apportion(n, &[0.7, 0.1, 0.2]).iter().sum::<usize>(), n);
        }
    }

    #[test]
    fn default_counts_total_457() {
        let totals: Vec<usize> = (0..10).map(|s| default_comparison_counts(39, s).iter().sum()).collect();
        assert!(totals.iter().all(|t| (45..=46).contains(t)));
        assert_eq!(totals.iter().sum::<usize>(), 457);
        assert!((0..10).all(|s| default_comparison_counts(39, s).iter().all(|c| (1..=2).contains(c))));
    }

    #[test]
    fn comparison_splits_shape() {
        let t = fixture();
        let d = dataset(&t, Some(20), 12);
        let spec = SplitSpec::new(Scheme::Comparison, 42);
        let splits = make_comparison_splits(&d, &t, &spec).unwrap();
        assert_eq!(splits.len(), 10);
        let total: usize = splits.iter().map(|s| s.test.len()).sum();
        assert_eq!(total, 457);
        for s in &splits {
            assert!((45..=46).contains(&s.test.len()));
            assert_partition(s, d.len());
            for id in &s.test {
                assert_eq!(s.views[id].len(), 10);
            }
            for id in &s.train {
                assert_eq!(s.views[id].len(), 12);
            }
            // 18 or 19 left per label, split 80/20
            assert!(s.val.len() >= 39 * 3);
        }
        assert_eq!(splits, make_comparison_splits(&d, &t, &spec).unwrap());
    }

    #[test]
    fn zero_count_taxon_stays_in_training() {
        let t = fixture();
        let d = dataset(&t, Some(6), 1);
        let mut spec = SplitSpec::new(Scheme::Comparison, 1);
        spec.n_splits = 2;
        let mut table: BTreeMap<String, usize> = t.labels().iter().map(|l| (l.name.clone(), 1)).collect();
        table.insert("Simuliidae".into(), 0);
        spec.comparison_counts = Some(table);
        let sim = t.label_index_by_name("Simuliidae").unwrap();
        for s in make_comparison_splits(&d, &t, &spec).unwrap() {
            assert!(s.test.iter().all(|id| d.get(id).unwrap().label != sim));
            assert!(s.train.iter().any(|id| d.get(id).unwrap().label == sim));
        }
        let mut greedy = spec.clone();
        greedy.comparison_counts = Some(BTreeMap::from([("Simuliidae".to_string(), 7)]));
        assert!(matches!(
            make_comparison_splits(&d, &t, &greedy),
            Err(DatasetError::InsufficientSpecimens {
                needed: 7,
                available: 6,
                ..
            })
        ));
    }

    #[test]
    fn ml_splits_on_fixture_counts() {
        let t = fixture();
        let d = dataset(&t, None, 1);
        assert_eq!(d.len(), 9631);
        let spec = SplitSpec::new(Scheme::MachineLearning, 7);
        let splits = make_ml_splits(&d, &t, &spec).unwrap();
        for s in &splits {
            assert!((1900..=1940).contains(&s.test.len()), "{}", s.test.len());
            assert_partition(s, d.len());
        }
        let mut random = spec.clone();
        random.ml_mode = MlMode::Random;
        let r = make_ml_splits(&d, &t, &random).unwrap();
        assert_eq!(r[0].test.len(), 1926);
    }

    #[test]
    fn ml_single_taxon_seven_one_two() {
        let t = fixture();
        let specimens: Vec<Specimen> = (0..10)
            .map(|k| Specimen {
                id: format!("s{k}"),
                label: 0,
                truth: t.label_path(0).unwrap(),
                views: vec![View {
                    image_id: "a".into(),
                    values: vec![1.0],
                }],
            })
            .collect();
        let d = Dataset::new(1, specimens).unwrap();
        let spec = SplitSpec::new(Scheme::MachineLearning, 3);
        let s = &make_ml_splits(&d, &t, &spec).unwrap()[0];
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (7, 1, 2));
        assert_eq!(
            make_ml_splits(&d, &t, &spec).unwrap(),
            make_ml_splits(&d, &t, &spec).unwrap()
        );
    }

    #[test]
    fn split_json_round_trip_and_validation() {
        let t = fixture();
        let d = dataset(&t, Some(3), 2);
        let mut spec = SplitSpec::new(Scheme::MachineLearning, 5);
        spec.n_splits = 1;
        let split = make_ml_splits(&d, &t, &spec).unwrap().remove(0);
        let json = split.to_json();
        let back = DataSplit::from_json(json.as_bytes()).unwrap();
        assert_eq!(back, split);
        back.validate_against(&d).unwrap();

        let mut dup = split.clone();
        dup.val.push(dup.train[0].clone());
        assert!(DataSplit::from_json(dup.to_json().as_bytes()).is_err());
        let mut ghost = split.clone();
        ghost.test.push("ghost".into());
        assert!(ghost.validate_against(&d).is_err());
        assert!(DataSplit::from_json(b"{").is_err());
    }
}
