//! Building the six-label subset from an NIH-style manifest: per-label
//! capped sampling, deduplication, label encoding, seeded splits and label
//! co-occurrence.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::{Label, LabelVector, ABNORMALITIES, ALL_LABELS, NUM_LABELS};
use crate::rng::Stream;

pub const DEFAULT_CAP: usize = 2000;
pub const DEFAULT_FRACTIONS: (f64, f64, f64) = (0.70, 0.15, 0.15);

const ID_COLUMN: &str = "Image Index";
const LABEL_COLUMN: &str = "Finding Labels";

// Stream ids keep curation draws and split shuffles on disjoint streams.
const SPLIT_STREAM: u64 = 1 << 32;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestRecord {
    pub image_id: String,
    pub labels: BTreeSet<String>,
}

/// Parses a manifest with `Image Index` and pipe-separated `Finding Labels`
/// columns. Other columns are ignored.
pub fn parse_manifest(csv_bytes: &[u8]) -> Result<Vec<ManifestRecord>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(csv_bytes);
    let headers = reader.headers().map_err(|e| Error::Format(format!("manifest header: {e}")))?.clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Format(format!("manifest is missing required column \"{name}\"")))
    };
    let id_col = column(ID_COLUMN)?;
    let label_col = column(LABEL_COLUMN)?;

    let mut seen = HashSet::new();
    let mut records = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| Error::Format(format!("manifest row {line}: {e}")))?;
        let image_id = row.get(id_col).unwrap_or("").to_string();
        if image_id.is_empty() {
            return Err(Error::Format(format!("manifest row {line}: empty \"{ID_COLUMN}\"")));
        }
        let labels: BTreeSet<String> = row
            .get(label_col)
            .unwrap_or("")
            .split('|')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(String::from)
            .collect();
        if labels.is_empty() {
            return Err(Error::Format(format!("manifest row {line}: empty \"{LABEL_COLUMN}\" for {image_id}")));
        }
        if !seen.insert(image_id.clone()) {
            return Err(Error::Format(format!("manifest row {line}: duplicate image id {image_id}")));
        }
        records.push(ManifestRecord { image_id, labels });
    }
    Ok(records)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CuratedRecord {
    pub image_id: String,
    pub labels: LabelVector,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CuratedDataset {
    pub records: Vec<CuratedRecord>,
    pub seed: u64,
    pub per_label_cap: usize,
    /// Candidate pool size per label, in the fixed label order.
    pub pool_sizes: [usize; NUM_LABELS],
    /// Images drawn from each label's pool (before deduplication).
    pub drawn: [usize; NUM_LABELS],
}

impl CuratedDataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn label_counts(&self) -> [usize; NUM_LABELS] {
        let mut counts = [0; NUM_LABELS];
        for r in &self.records {
            for (c, f) in counts.iter_mut().zip(r.labels.flags()) {
                *c += f as usize;
            }
        }
        counts
    }

    pub fn ids(&self) -> Vec<String> {
        self.records.iter().map(|r| r.image_id.clone()).collect()
    }
}

fn in_pool(record: &ManifestRecord, label: Label) -> bool {
    match label {
        Label::NoFinding => record.labels.len() == 1 && record.labels.contains(label.name()),
        _ => record.labels.contains(label.name()),
    }
}

fn encode(record: &ManifestRecord) -> LabelVector {
    let mut flags = [false; NUM_LABELS];
    for l in ABNORMALITIES {
        flags[l.index()] = record.labels.contains(l.name());
    }
    if !flags.iter().any(|&f| f) {
        flags[Label::NoFinding.index()] = in_pool(record, Label::NoFinding);
    }
    LabelVector::from_flags(flags).expect("No Finding only set without abnormalities")
}

/// Draws up to `cap` images from each label's candidate pool, unions the
/// draws and encodes the survivors over the six target labels.
///
/// Abnormality pools contain every record carrying that label, co-labels
/// included; the No Finding pool holds records labeled exactly
/// `No Finding`. Output keeps manifest order.
pub fn curate(records: &[ManifestRecord], cap: usize, seed: u64) -> Result<CuratedDataset> {
    if cap == 0 {
        return Err(Error::arg("per-label cap must be at least 1"));
    }
    let mut chosen = BTreeSet::new();
    let mut pool_sizes = [0; NUM_LABELS];
    let mut drawn = [0; NUM_LABELS];
    for label in ALL_LABELS {
        let pool: Vec<usize> = (0..records.len()).filter(|&i| in_pool(&records[i], label)).collect();
        if pool.is_empty() {
            return Err(Error::Curation { label: label.name().to_string(), message: "candidate pool is empty".into() });
        }
        let picks = Stream::new(seed, label.index() as u64).sample_indices(pool.len(), cap);
        pool_sizes[label.index()] = pool.len();
        drawn[label.index()] = picks.len();
        chosen.extend(picks.into_iter().map(|p| pool[p]));
    }
    let records = chosen
        .into_iter()
        .map(|i| CuratedRecord { image_id: records[i].image_id.clone(), labels: encode(&records[i]) })
        .collect();
    Ok(CuratedDataset { records, seed, per_label_cap: cap, pool_sizes, drawn })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    Train,
    Validation,
    Test,
}

impl Partition {
    pub fn name(self) -> &'static str {
        match self {
            Partition::Train => "train",
            Partition::Validation => "validation",
            Partition::Test => "test",
        }
    }

    pub fn from_name(s: &str) -> Option<Partition> {
        match s {
            "train" => Some(Partition::Train),
            "validation" => Some(Partition::Validation),
            "test" => Some(Partition::Test),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub seed: u64,
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
}

impl SplitAssignment {
    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.train.len(), self.validation.len(), self.test.len())
    }

    pub fn partition_of(&self) -> BTreeMap<&str, Partition> {
        let mut out = BTreeMap::new();
        for (ids, part) in
            [(&self.train, Partition::Train), (&self.validation, Partition::Validation), (&self.test, Partition::Test)]
        {
            for id in ids {
                out.insert(id.as_str(), part);
            }
        }
        out
    }
}

/// Partition sizes: `round(f_train n)`, `round(f_val n)`, remainder.
pub fn split_sizes(n: usize, fractions: (f64, f64, f64)) -> Result<(usize, usize, usize)> {
    let (a, b, c) = fractions;
    if [a, b, c].iter().any(|f| !(0.0..=1.0).contains(f)) || (a + b + c - 1.0).abs() > 1e-9 {
        return Err(Error::arg(format!("split fractions {a}, {b}, {c} must be in [0, 1] and sum to 1")));
    }
    let train = (a * n as f64).round() as usize;
    let val = (b * n as f64).round() as usize;
    if train + val > n {
        return Err(Error::arg(format!("fractions leave no room for a test partition with n = {n}")));
    }
    Ok((train, val, n - train - val))
}

/// Seeded shuffle of the ids followed by the round/round/remainder cut.
pub fn split(ids: &[String], fractions: (f64, f64, f64), seed: u64) -> Result<SplitAssignment> {
    if ids.len() < 3 {
        return Err(Error::arg(format!("cannot split {} images into three partitions", ids.len())));
    }
    let (n_train, n_val, _) = split_sizes(ids.len(), fractions)?;
    let mut shuffled = ids.to_vec();
    Stream::new(seed, SPLIT_STREAM).shuffle(&mut shuffled);
    let test = shuffled.split_off(n_train + n_val);
    let validation = shuffled.split_off(n_train);
    Ok(SplitAssignment { seed, train: shuffled, validation, test })
}

/// Symmetric label co-occurrence counts; the diagonal holds prevalence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CooccurrenceMatrix {
    pub counts: [[u64; NUM_LABELS]; NUM_LABELS],
}

impl CooccurrenceMatrix {
    pub fn get(&self, a: Label, b: Label) -> u64 {
        self.counts[a.index()][b.index()]
    }

    pub fn add(&mut self, other: &CooccurrenceMatrix) {
        for i in 0..NUM_LABELS {
            for j in 0..NUM_LABELS {
                self.counts[i][j] += other.counts[i][j];
            }
        }
    }

    /// Row-major values as floats.
    pub fn to_f64(&self) -> Vec<f64> {
        self.counts.iter().flatten().map(|&c| c as f64).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("label");
        for l in ALL_LABELS {
            out.push(',');
            out.push_str(l.name());
        }
        out.push('\n');
        for l in ALL_LABELS {
            out.push_str(l.name());
            for c in self.counts[l.index()] {
                out.push_str(&format!(",{c}"));
            }
            out.push('\n');
        }
        out
    }
}

pub fn cooccurrence<'a>(labels: impl IntoIterator<Item = &'a LabelVector>) -> CooccurrenceMatrix {
    let mut m = CooccurrenceMatrix::default();
    for v in labels {
        let f = v.flags();
        for (row, &fi) in m.counts.iter_mut().zip(&f) {
            if !fi {
                continue;
            }
            for (c, &fj) in row.iter_mut().zip(&f) {
                *c += fj as u64;
            }
        }
    }
    m
}

/// Curated manifest CSV: id, six flag columns, then one `split_<seed>`
/// column per assignment.
pub fn curated_csv(ds: &CuratedDataset, splits: &[SplitAssignment]) -> Result<String> {
    let parts: Vec<_> = splits.iter().map(SplitAssignment::partition_of).collect();
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["image_id".to_string()];
    header.extend(ALL_LABELS.iter().map(|l| l.name().to_string()));
    header.extend(splits.iter().map(|s| format!("split_{}", s.seed)));
    w.write_record(&header).map_err(csv_internal)?;
    for r in &ds.records {
        let mut row = vec![r.image_id.clone()];
        row.extend(r.labels.flags().iter().map(|&f| (f as u8).to_string()));
        for p in &parts {
            let part = p
                .get(r.image_id.as_str())
                .ok_or_else(|| Error::Internal(format!("{} missing from split", r.image_id)))?;
            row.push(part.name().to_string());
        }
        w.write_record(&row).map_err(csv_internal)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Internal(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Internal(e.to_string()))
}

fn csv_internal(e: csv::Error) -> Error {
    Error::Internal(format!("csv write: {e}"))
}

/// A curated manifest read back from [`curated_csv`] output.
#[derive(Debug, Clone, PartialEq)]
pub struct CuratedTable {
    pub records: Vec<CuratedRecord>,
    /// Split seed to per-image partition, aligned with `records`.
    pub splits: BTreeMap<u64, Vec<Partition>>,
}

impl CuratedTable {
    pub fn assignment(&self, seed: u64) -> Option<SplitAssignment> {
        let parts = self.splits.get(&seed)?;
        let mut s = SplitAssignment { seed, train: vec![], validation: vec![], test: vec![] };
        for (r, p) in self.records.iter().zip(parts) {
            match p {
                Partition::Train => s.train.push(r.image_id.clone()),
                Partition::Validation => s.validation.push(r.image_id.clone()),
                Partition::Test => s.test.push(r.image_id.clone()),
            }
        }
        Some(s)
    }
}

pub fn parse_curated_csv(bytes: &[u8]) -> Result<CuratedTable> {
    let mut reader = csv::Reader::from_reader(bytes);
    let headers = reader.headers().map_err(|e| Error::Format(format!("curated header: {e}")))?.clone();
    if headers.get(0) != Some("image_id")
        || ALL_LABELS.iter().enumerate().any(|(i, l)| headers.get(i + 1) != Some(l.name()))
    {
        return Err(Error::Format("curated manifest header must be image_id followed by the six labels".into()));
    }
    let mut seeds = Vec::new();
    for h in headers.iter().skip(1 + NUM_LABELS) {
        let seed = h
            .strip_prefix("split_")
            .and_then(|s| s.parse::<u64>().ok())
            .ok_or_else(|| Error::Format(format!("unexpected curated column \"{h}\"")))?;
        seeds.push(seed);
    }
    let mut table = CuratedTable { records: Vec::new(), splits: seeds.iter().map(|&s| (s, Vec::new())).collect() };
    for (i, row) in reader.records().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| Error::Format(format!("curated row {line}: {e}")))?;
        let mut flags = [false; NUM_LABELS];
        for (k, flag) in flags.iter_mut().enumerate() {
            *flag = match &row[k + 1] {
                "0" => false,
                "1" => true,
                other => return Err(Error::Format(format!("curated row {line}: flag \"{other}\" is not 0/1"))),
            };
        }
        let labels = LabelVector::from_flags(flags)
            .ok_or_else(|| Error::Format(format!("curated row {line}: No Finding set with an abnormality")))?;
        table.records.push(CuratedRecord { image_id: row[0].to_string(), labels });
        for (k, seed) in seeds.iter().enumerate() {
            let p = Partition::from_name(&row[1 + NUM_LABELS + k])
                .ok_or_else(|| Error::Format(format!("curated row {line}: bad partition")))?;
            table.splits.get_mut(seed).expect("seed registered").push(p);
        }
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(id: &str, labels: &[&str]) -> ManifestRecord {
        ManifestRecord { image_id: id.into(), labels: labels.iter().map(|s| s.to_string()).collect() }
    }

    #[test]
    fn parse_examples() {
        let csv = b"Image Index,Finding Labels,Patient ID\na.png,Mass|Nodule,1\nb.png,No Finding,2\n";
        let recs = parse_manifest(csv).unwrap();
        assert_eq!(recs[0], rec("a.png", &["Mass", "Nodule"]));
        assert_eq!(recs[1], rec("b.png", &["No Finding"]));

        let err = parse_manifest(b"Image Index,Finding Labels\nc.png,\n").unwrap_err();
        assert!(matches!(err, Error::Format(_)));
        let err = parse_manifest(b"Image Index,Labels\nc.png,Mass\n").unwrap_err();
        assert!(err.to_string().contains("Finding Labels"));
        let err = parse_manifest(b"Image Index,Finding Labels\nc.png,Mass\nc.png,Edema\n").unwrap_err();
        assert!(err.to_string().contains("duplicate"));
    }

    fn toy() -> Vec<ManifestRecord> {
        let names = ["Mass", "Nodule", "Pneumonia", "Edema", "Fibrosis"];
        let mut v: Vec<_> = (0..10).map(|i| rec(&format!("{i}.png"), &[names[i % 5]])).collect();
        v.push(rec("n0.png", &["No Finding"]));
        v.push(rec("n1.png", &["No Finding"]));
        v
    }

    #[test]
    fn curate_toy_manifest() {
        let ds = curate(&toy(), 2, 5).unwrap();
        assert_eq!(ds.drawn, [2; 6]);
        assert_eq!(ds.len(), 12);
        let ids: HashSet<_> = ds.records.iter().map(|r| &r.image_id).collect();
        assert_eq!(ids.len(), ds.len());

        let ds1 = curate(&toy(), 1, 5).unwrap();
        assert_eq!(ds1.len(), 6);
        assert!(ds1.drawn.iter().all(|&d| d == 1));
    }

    #[test]
    fn curate_dedups_multi_label_records() {
        let recs = vec![
            rec("mn.png", &["Mass", "Nodule"]),
            rec("p.png", &["Pneumonia"]),
            rec("e.png", &["Edema", "Effusion"]),
            rec("f.png", &["Fibrosis"]),
            rec("n.png", &["No Finding"]),
        ];
        let ds = curate(&recs, 1, 0).unwrap();
        assert_eq!(ds.len(), 5);
        let mn = &ds.records[0];
        assert_eq!(mn.image_id, "mn.png");
        assert_eq!(mn.labels.flags(), [true, true, false, false, false, false]);
        // non-target co-labels are dropped
        assert_eq!(ds.records[2].labels.flags(), [false, false, false, true, false, false]);
    }

    #[test]
    fn curate_empty_pool_names_label() {
        let recs = vec![rec("a", &["Mass"]), rec("b", &["Nodule"]), rec("n", &["No Finding"])];
        match curate(&recs, 3, 0) {
            Err(Error::Curation { label, .. }) => assert_eq!(label, "Pneumonia"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn no_finding_pool_requires_exact_label() {
        let mut recs = toy();
        recs.push(rec("mixed.png", &["No Finding", "Hernia"]));
        let ds = curate(&recs, 100, 0).unwrap();
        assert_eq!(ds.pool_sizes[Label::NoFinding.index()], 2);
        assert!(ds.records.iter().all(|r| r.image_id != "mixed.png"));
    }

    #[test]
    fn split_size_rule() {
        assert_eq!(split_sizes(10_486, DEFAULT_FRACTIONS).unwrap(), (7340, 1573, 1573));
        assert_eq!(split_sizes(10, DEFAULT_FRACTIONS).unwrap(), (7, 2, 1));
        let ids: Vec<String> = (0..10).map(|i| i.to_string()).collect();
        let a = split(&ids, DEFAULT_FRACTIONS, 3).unwrap();
        assert_eq!(a.sizes(), (7, 2, 1));
        assert_eq!(a, split(&ids, DEFAULT_FRACTIONS, 3).unwrap());
        assert_ne!(a, split(&ids, DEFAULT_FRACTIONS, 4).unwrap());
        assert!(split(&ids[..2], DEFAULT_FRACTIONS, 0).is_err());
        assert!(split(&ids, (0.5, 0.5, 0.5), 0).is_err());
    }

    #[test]
    fn cooccurrence_examples() {
        assert_eq!(cooccurrence(&[]), CooccurrenceMatrix::default());
        let mn = LabelVector::from_abnormalities([true, true, false, false, false]);
        let m = cooccurrence(&[mn]);
        assert_eq!(m.get(Label::Mass, Label::Nodule), 1);
        assert_eq!(m.get(Label::Nodule, Label::Mass), 1);
        assert_eq!(m.get(Label::Mass, Label::Mass), 1);

        let v = [
            LabelVector::from_abnormalities([true, false, false, false, false]),
            mn,
            LabelVector::from_abnormalities([false; 5]),
        ];
        let m = cooccurrence(&v);
        let diag: Vec<u64> = (0..6).map(|i| m.counts[i][i]).collect();
        assert_eq!(diag, vec![2, 1, 0, 0, 0, 1]);
        let off: u64 =
            (0..6).flat_map(|i| (0..6).map(move |j| (i, j))).filter(|(i, j)| i != j).map(|(i, j)| m.counts[i][j]).sum();
        assert_eq!(off, 2);
    }

    #[test]
    fn curated_csv_round_trip() {
        let ds = curate(&toy(), 2, 1).unwrap();
        let splits =
            vec![split(&ds.ids(), DEFAULT_FRACTIONS, 10).unwrap(), split(&ds.ids(), DEFAULT_FRACTIONS, 11).unwrap()];
        let text = curated_csv(&ds, &splits).unwrap();
        assert!(text.starts_with("image_id,Mass,Nodule,Pneumonia,Edema,Fibrosis,No Finding,split_10,split_11\n"));
        let table = parse_curated_csv(text.as_bytes()).unwrap();
        assert_eq!(table.records, ds.records);
        let mut back = table.assignment(10).unwrap();
        let mut orig = splits[0].clone();
        for s in [&mut back, &mut orig] {
            s.train.sort();
            s.validation.sort();
            s.test.sort();
        }
        assert_eq!(back, orig);
    }

    proptest! {
        #[test]
        fn curation_invariants(
            label_sets in prop::collection::vec(prop::collection::btree_set(0usize..7, 1..4), 8..60),
            cap in 1usize..6,
            seed in any::<u64>(),
        ) {
            let names = ["Mass", "Nodule", "Pneumonia", "Edema", "Fibrosis", "No Finding", "Effusion"];
            let mut recs: Vec<ManifestRecord> = label_sets.iter().enumerate().map(|(i, s)| ManifestRecord {
                image_id: format!("img{i}"),
                labels: s.iter().map(|&k| names[k].to_string()).collect(),
            }).collect();
            // guarantee every pool is non-empty
            for (k, n) in names[..6].iter().enumerate() {
                recs.push(rec(&format!("seed{k}"), &[n]));
            }
            let ds = curate(&recs, cap, seed).unwrap();
            let ids: HashSet<_> = ds.records.iter().map(|r| r.image_id.clone()).collect();
            prop_assert_eq!(ids.len(), ds.len());
            for k in 0..6 {
                prop_assert!(ds.drawn[k] <= cap);
                prop_assert_eq!(ds.drawn[k], cap.min(ds.pool_sizes[k]));
            }
            for r in &ds.records {
                let f = r.labels.flags();
                prop_assert!(!(f[5] && f[..5].iter().any(|&x| x)));
            }
            let m = cooccurrence(ds.records.iter().map(|r| &r.labels));
            for i in 0..6 {
                for j in 0..6 {
                    prop_assert_eq!(m.counts[i][j], m.counts[j][i]);
                    prop_assert!(m.counts[i][j] <= m.counts[i][i].min(m.counts[j][j]));
                }
            }
            let s = split(&ds.ids(), DEFAULT_FRACTIONS, seed).unwrap();
            let all: HashSet<_> = s.train.iter().chain(&s.validation).chain(&s.test).cloned().collect();
            prop_assert_eq!(all, ids);
            prop_assert_eq!(s.sizes(), split_sizes(ds.len(), DEFAULT_FRACTIONS).unwrap());
        }
    }
}
