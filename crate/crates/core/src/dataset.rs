//! Dataset construction: payload dedup, ground-truth labeling, class
//! balancing, multiclass selection and the train/test/validation split.
//!
//! Every randomized step takes an explicit seed and draws from a ChaCha
//! stream, so outputs are bit-reproducible across runs and platforms.

use std::collections::{HashMap, HashSet};
use std::io::{BufRead, Write};
use std::net::Ipv4Addr;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hexser;
use crate::pcap::{FiveTuple, Protocol, RawPacket};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("class {0:?} is empty")]
    EmptyClass(String),
    #[error("category {0:?} is not in the class map")]
    UnknownCategory(String),
    #[error("ground truth is missing column {0:?}")]
    MissingColumn(String),
    #[error("split ratios must be non-negative and sum to 1, got {0:?}")]
    BadRatios((f64, f64, f64)),
    #[error("line {line}: {message}")]
    BadRecord { line: usize, message: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Anything carrying a transport payload.
pub trait HasPayload {
    fn payload(&self) -> &[u8];
}

impl HasPayload for RawPacket {
    fn payload(&self) -> &[u8] {
        &self.payload
    }
}

impl HasPayload for LabeledPayload {
    fn payload(&self) -> &[u8] {
        &self.payload
    }
}

impl HasPayload for Vec<u8> {
    fn payload(&self) -> &[u8] {
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LabeledPayload {
    pub label: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
    #[serde(with = "hexser")]
    pub payload: Vec<u8>,
}

impl LabeledPayload {
    pub fn new(payload: Vec<u8>, label: u32, category: Option<String>) -> Self {
        Self { label, category, payload }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruthRecord {
    pub src_ip: Ipv4Addr,
    pub dst_ip: Ipv4Addr,
    pub src_port: u16,
    pub dst_port: u16,
    pub protocol: Protocol,
    pub attack_start: i64,
    pub attack_end: i64,
    pub category: String,
}

impl GroundTruthRecord {
    pub fn tuple(&self) -> FiveTuple {
        FiveTuple {
            src_ip: self.src_ip,
            dst_ip: self.dst_ip,
            src_port: self.src_port,
            dst_port: self.dst_port,
            protocol: self.protocol,
        }
    }

    /// Inclusive window test at whole-second resolution.
    pub fn covers(&self, secs: i64) -> bool {
        self.attack_start <= secs && secs <= self.attack_end
    }
}

/// Ordered attack categories; position is the multiclass label id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassMap {
    names: Vec<String>,
}

impl ClassMap {
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Result<Self, DatasetError> {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        let mut seen = HashSet::new();
        for n in &names {
            if !seen.insert(normalize_category(n)) {
                return Err(DatasetError::BadRecord { line: 0, message: format!("duplicate class {n:?}") });
            }
        }
        Ok(Self { names })
    }

    pub fn unsw_nb15() -> Self {
        Self { names: vec!["Fuzzers".into(), "Exploits".into(), "Generic".into()] }
    }

    pub fn cic_iot23() -> Self {
        Self {
            names: vec![
                "Backdoor Malware".into(),
                "Vulnerability Attack".into(),
                "Brute Force Attack".into(),
            ],
        }
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// Label id for a category; matching ignores case and surrounding blanks.
    pub fn id(&self, category: &str) -> Result<u32, DatasetError> {
        let wanted = normalize_category(category);
        self.names
            .iter()
            .position(|n| normalize_category(n) == wanted)
            .map(|i| i as u32)
            .ok_or_else(|| DatasetError::UnknownCategory(category.to_string()))
    }

    pub fn name(&self, id: u32) -> Option<&str> {
        self.names.get(id as usize).map(String::as_str)
    }
}

fn normalize_category(s: &str) -> String {
    s.trim().to_ascii_lowercase()
}

/// Keeps the first occurrence of each distinct payload, preserving order.
pub fn dedup<T: HasPayload>(items: impl IntoIterator<Item = T>) -> Vec<T> {
    let mut seen: HashSet<Vec<u8>> = HashSet::new();
    items
        .into_iter()
        .filter(|it| seen.insert(it.payload().to_vec()))
        .collect()
}

/// A packet matched by two truth records with different categories.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AmbiguousMatch {
    pub packet_index: usize,
    pub chosen: String,
    pub others: Vec<String>,
}

#[derive(Debug, Clone, Default)]
pub struct Labeling {
    pub payloads: Vec<LabeledPayload>,
    pub ambiguous: Vec<AmbiguousMatch>,
}

/// Labels each packet malicious (1) when a truth record has the same five-tuple
/// and its window covers the packet's capture second, else benign (0).
///
/// `time_offset` is added to every truth window before comparison. When
/// records with different categories match, the earliest in file order wins
/// and the conflict is reported in [`Labeling::ambiguous`].
pub fn label_packets(packets: &[RawPacket], truth: &[GroundTruthRecord], time_offset: i64) -> Labeling {
    let mut by_tuple: HashMap<FiveTuple, Vec<usize>> = HashMap::new();
    for (i, rec) in truth.iter().enumerate() {
        by_tuple.entry(rec.tuple()).or_default().push(i);
    }

    let mut out = Labeling { payloads: Vec::with_capacity(packets.len()), ambiguous: Vec::new() };
    for (pi, pkt) in packets.iter().enumerate() {
        let secs = i64::from(pkt.timestamp.secs) - time_offset;
        let hits: Vec<&GroundTruthRecord> = by_tuple
            .get(&pkt.tuple)
            .map(|ids| ids.iter().map(|&i| &truth[i]).filter(|r| r.covers(secs)).collect())
            .unwrap_or_default();

        let labeled = match hits.first() {
            None => LabeledPayload::new(pkt.payload.clone(), 0, None),
            Some(first) => {
                let others: Vec<String> = hits[1..]
                    .iter()
                    .filter(|r| normalize_category(&r.category) != normalize_category(&first.category))
                    .map(|r| r.category.clone())
                    .collect();
                if !others.is_empty() {
                    log::warn!("packet {pi}: categories {others:?} also match, keeping {:?}", first.category);
                    out.ambiguous.push(AmbiguousMatch {
                        packet_index: pi,
                        chosen: first.category.clone(),
                        others,
                    });
                }
                LabeledPayload::new(pkt.payload.clone(), 1, Some(first.category.trim().to_string()))
            }
        };
        out.payloads.push(labeled);
    }
    out
}

/// All of the minority class plus an equal-size seeded sample of the majority,
/// shuffled by the same seed.
pub fn balance<T: Clone>(benign: &[T], malicious: &[T], seed: u64) -> Result<Vec<T>, DatasetError> {
    if benign.is_empty() {
        return Err(DatasetError::EmptyClass("benign".into()));
    }
    if malicious.is_empty() {
        return Err(DatasetError::EmptyClass("malicious".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = benign.len().min(malicious.len());
    let mut out = Vec::with_capacity(2 * n);
    out.extend(sample_without_replacement(benign, n, &mut rng));
    out.extend(sample_without_replacement(malicious, n, &mut rng));
    out.shuffle(&mut rng);
    Ok(out)
}

/// Splits labeled payloads by label and balances them (label 0 vs the rest).
pub fn balance_binary(data: &[LabeledPayload], seed: u64) -> Result<Vec<LabeledPayload>, DatasetError> {
    let (malicious, benign): (Vec<_>, Vec<_>) = data.iter().cloned().partition(|p| p.label != 0);
    balance(&benign, &malicious, seed)
}

fn sample_without_replacement<T: Clone>(items: &[T], n: usize, rng: &mut ChaCha8Rng) -> Vec<T> {
    if n == items.len() {
        return items.to_vec();
    }
    let mut idx: Vec<usize> = (0..items.len()).collect();
    let (chosen, _) = idx.partial_shuffle(rng, n);
    // Keep source order among the chosen so the sample does not depend on shuffle order.
    chosen.sort_unstable();
    chosen.iter().map(|&i| items[i].clone()).collect()
}

/// Keeps payloads whose category is in `map`, relabels them with the map's ids
/// and downsamples every class to the smallest class size.
///
/// Payloads without a category (benign) or with a category outside the map are
/// dropped.
pub fn build_multiclass(
    payloads: &[LabeledPayload],
    map: &ClassMap,
    seed: u64,
) -> Result<Vec<LabeledPayload>, DatasetError> {
    let mut per_class: Vec<Vec<LabeledPayload>> = vec![Vec::new(); map.len()];
    for p in payloads {
        let Some(cat) = p.category.as_deref() else { continue };
        if let Ok(id) = map.id(cat) {
            per_class[id as usize].push(LabeledPayload::new(
                p.payload.clone(),
                id,
                Some(map.names()[id as usize].clone()),
            ));
        }
    }
    if let Some(empty) = per_class.iter().position(Vec::is_empty) {
        return Err(DatasetError::EmptyClass(map.names()[empty].clone()));
    }
    let n = per_class.iter().map(Vec::len).min().unwrap_or(0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n * map.len());
    for class in &per_class {
        out.extend(sample_without_replacement(class, n, &mut rng));
    }
    out.shuffle(&mut rng);
    Ok(out)
}

pub const DEFAULT_RATIOS: (f64, f64, f64) = (0.70, 0.20, 0.10);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit<T = LabeledPayload> {
    pub train: Vec<T>,
    pub test: Vec<T>,
    pub validation: Vec<T>,
    pub seed: u64,
}

/// Partition sizes for `n` items: train and test are rounded, validation
/// takes the remainder.
pub fn split_sizes(n: usize, ratios: (f64, f64, f64)) -> (usize, usize, usize) {
    let train = ((n as f64) * ratios.0).round() as usize;
    let train = train.min(n);
    let test = (((n as f64) * ratios.1).round() as usize).min(n - train);
    (train, test, n - train - test)
}

/// Seeded shuffle followed by a contiguous (train, test, validation) cut.
pub fn split<T: Clone>(data: &[T], ratios: (f64, f64, f64), seed: u64) -> Result<DatasetSplit<T>, DatasetError> {
    let (a, b, c) = ratios;
    if a < 0.0 || b < 0.0 || c < 0.0 || ((a + b + c) - 1.0).abs() > 1e-9 {
        return Err(DatasetError::BadRatios(ratios));
    }
    let mut shuffled = data.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (n_train, n_test, _) = split_sizes(data.len(), ratios);
    let validation = shuffled.split_off(n_train + n_test);
    let test = shuffled.split_off(n_train);
    Ok(DatasetSplit { train: shuffled, test, validation, seed })
}

/// Column names to read from a ground-truth CSV.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnMap {
    pub src_ip: String,
    pub dst_ip: String,
    pub src_port: String,
    pub dst_port: String,
    pub protocol: String,
    pub start_time: String,
    pub end_time: String,
    pub category: String,
}

impl Default for ColumnMap {
    fn default() -> Self {
        Self {
            src_ip: "src_ip".into(),
            dst_ip: "dst_ip".into(),
            src_port: "src_port".into(),
            dst_port: "dst_port".into(),
            protocol: "protocol".into(),
            start_time: "start_time".into(),
            end_time: "end_time".into(),
            category: "category".into(),
        }
    }
}

impl ColumnMap {
    /// Header names of the UNSW-NB15 ground-truth table.
    pub fn unsw_nb15() -> Self {
        Self {
            src_ip: "Source IP".into(),
            dst_ip: "Destination IP".into(),
            src_port: "Source Port".into(),
            dst_port: "Destination Port".into(),
            protocol: "Protocol".into(),
            start_time: "Start time".into(),
            end_time: "Last time".into(),
            category: "Attack category".into(),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct GroundTruth {
    pub records: Vec<GroundTruthRecord>,
    /// Rows skipped for a non-TCP/UDP protocol or unparsable fields.
    pub skipped_rows: usize,
}

pub fn read_ground_truth(reader: impl std::io::Read, columns: &ColumnMap) -> Result<GroundTruth, DatasetError> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim().eq_ignore_ascii_case(name.trim()))
            .ok_or_else(|| DatasetError::MissingColumn(name.to_string()))
    };
    let idx = [
        col(&columns.src_ip)?,
        col(&columns.dst_ip)?,
        col(&columns.src_port)?,
        col(&columns.dst_port)?,
        col(&columns.protocol)?,
        col(&columns.start_time)?,
        col(&columns.end_time)?,
        col(&columns.category)?,
    ];

    let mut out = GroundTruth::default();
    for row in rdr.records() {
        let row = row?;
        let field = |i: usize| row.get(idx[i]).unwrap_or("");
        let parsed = (|| {
            let start = parse_epoch(field(5))?;
            let end = parse_epoch(field(6))?;
            Some(GroundTruthRecord {
                src_ip: field(0).parse().ok()?,
                dst_ip: field(1).parse().ok()?,
                src_port: parse_port(field(2))?,
                dst_port: parse_port(field(3))?,
                protocol: field(4).parse().ok()?,
                attack_start: start.min(end),
                attack_end: end.max(start),
                category: field(7).to_string(),
            })
        })();
        match parsed {
            Some(r) if !r.category.is_empty() => out.records.push(r),
            _ => out.skipped_rows += 1,
        }
    }
    Ok(out)
}

pub fn load_ground_truth(path: &Path, columns: &ColumnMap) -> Result<GroundTruth, DatasetError> {
    read_ground_truth(std::fs::File::open(path)?, columns)
}

fn parse_epoch(s: &str) -> Option<i64> {
    s.parse::<i64>().ok().or_else(|| s.parse::<f64>().ok().filter(|v| v.is_finite()).map(|v| v.floor() as i64))
}

fn parse_port(s: &str) -> Option<u16> {
    if let Some(hex) = s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
        return u16::from_str_radix(hex, 16).ok();
    }
    s.parse().ok()
}

/// Writes one JSON object per line.
pub fn write_jsonl<T: Serialize>(mut w: impl Write, items: &[T]) -> Result<(), DatasetError> {
    for item in items {
        serde_json::to_writer(&mut w, item).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(r: impl BufRead) -> Result<Vec<T>, DatasetError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| DatasetError::BadRecord {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

pub fn save_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), DatasetError> {
    write_jsonl(std::io::BufWriter::new(std::fs::File::create(path)?), items)
}

pub fn load_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, DatasetError> {
    read_jsonl(std::io::BufReader::new(std::fs::File::open(path)?))
}

/// Per-label counts, indexed by label id.
pub fn class_counts(data: &[LabeledPayload]) -> Vec<usize> {
    let k = data.iter().map(|p| p.label as usize + 1).max().unwrap_or(0);
    let mut counts = vec![0; k];
    for p in data {
        counts[p.label as usize] += 1;
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pcap::Timestamp;
    use proptest::prelude::*;

    fn lp(bytes: &[u8], label: u32) -> LabeledPayload {
        LabeledPayload::new(bytes.to_vec(), label, None)
    }

    fn tuple(src_port: u16) -> FiveTuple {
        FiveTuple {
            src_ip: Ipv4Addr::new(10, 0, 0, 1),
            dst_ip: Ipv4Addr::new(10, 0, 0, 2),
            src_port,
            dst_port: 80,
            protocol: Protocol::Tcp,
        }
    }

    fn packet(src_port: u16, secs: u32, payload: &[u8]) -> RawPacket {
        RawPacket { timestamp: Timestamp { secs, micros: 0 }, tuple: tuple(src_port), payload: payload.to_vec() }
    }

    fn record(src_port: u16, start: i64, end: i64, cat: &str) -> GroundTruthRecord {
        let t = tuple(src_port);
        GroundTruthRecord {
            src_ip: t.src_ip,
            dst_ip: t.dst_ip,
            src_port,
            dst_port: 80,
            protocol: Protocol::Tcp,
            attack_start: start,
            attack_end: end,
            category: cat.into(),
        }
    }

    #[test]
    fn dedup_examples() {
        let out = dedup(vec![lp(b"AA", 0), lp(b"AA", 1), lp(b"BB", 0)]);
        assert_eq!(out, vec![lp(b"AA", 0), lp(b"BB", 0)]);
        assert!(dedup(Vec::<LabeledPayload>::new()).is_empty());
    }

    #[test]
    fn window_containment() {
        let truth = [record(1000, 90, 110, "Exploits")];
        let l = label_packets(&[packet(1000, 100, b"x")], &truth, 0);
        assert_eq!(l.payloads[0].label, 1);
        assert_eq!(l.payloads[0].category.as_deref(), Some("Exploits"));
        let l = label_packets(&[packet(1000, 111, b"x")], &truth, 0);
        assert_eq!(l.payloads[0].label, 0);
        let l = label_packets(&[packet(1000, 110, b"x"), packet(1000, 90, b"y")], &truth, 0);
        assert!(l.payloads.iter().all(|p| p.label == 1));
    }

    #[test]
    fn time_offset_shifts_windows() {
        let truth = [record(1000, 90, 110, "Exploits")];
        assert_eq!(label_packets(&[packet(1000, 130, b"x")], &truth, 20).payloads[0].label, 1);
        assert_eq!(label_packets(&[packet(1000, 100, b"x")], &truth, 20).payloads[0].label, 0);
    }

    #[test]
    fn labeling_matches_double_loop_oracle() {
        let packets = vec![
            packet(1000, 100, b"a"),
            packet(1000, 150, b"b"),
            packet(2000, 100, b"c"),
            packet(2000, 205, b"d"),
            packet(3000, 100, b"e"),
            packet(1000, 89, b"f"),
        ];
        let truth = vec![record(1000, 90, 120, "Exploits"), record(2000, 200, 210, "Fuzzers")];
        let l = label_packets(&packets, &truth, 0);
        // brute force: for every packet scan every record
        for (p, got) in packets.iter().zip(&l.payloads) {
            let hit = truth.iter().find(|r| r.tuple() == p.tuple && r.covers(i64::from(p.timestamp.secs)));
            assert_eq!(got.label, u32::from(hit.is_some()));
            assert_eq!(got.category.as_deref(), hit.map(|r| r.category.as_str()));
        }
        let labels: Vec<u32> = l.payloads.iter().map(|p| p.label).collect();
        assert_eq!(labels, vec![1, 0, 0, 1, 0, 0]);
    }

    #[test]
    fn ambiguous_first_wins() {
        let truth = [record(1000, 0, 200, "Exploits"), record(1000, 50, 150, "Fuzzers"), record(1000, 0, 500, "Exploits")];
        let l = label_packets(&[packet(1000, 100, b"x")], &truth, 0);
        assert_eq!(l.payloads[0].category.as_deref(), Some("Exploits"));
        assert_eq!(l.ambiguous.len(), 1);
        assert_eq!(l.ambiguous[0].others, vec!["Fuzzers".to_string()]);
    }

    #[test]
    fn balance_counts() {
        let benign: Vec<_> = (0..100u8).map(|i| lp(&[i], 0)).collect();
        let malicious: Vec<_> = (0..40u8).map(|i| lp(&[i, i], 1)).collect();
        let out = balance(&benign, &malicious, 7).unwrap();
        assert_eq!(out.len(), 80);
        assert_eq!(class_counts(&out), vec![40, 40]);
        assert_eq!(out, balance(&benign, &malicious, 7).unwrap());
        // roles swap when malicious is the majority
        let out = balance(&malicious[..10], &benign, 7).unwrap();
        assert_eq!(class_counts(&out), vec![10, 10]);
        let all = balance(&benign[..40], &malicious, 1).unwrap();
        assert_eq!(all.len(), 80);
        assert!(matches!(balance(&benign, &[], 1), Err(DatasetError::EmptyClass(_))));
    }

    #[test]
    fn multiclass_min_count() {
        let mut data = Vec::new();
        for (cat, n) in [("Fuzzers", 50), ("Exploits", 30), ("Generic", 40), ("DoS", 70)] {
            for i in 0..n {
                data.push(LabeledPayload::new(format!("{cat}{i}").into_bytes(), 1, Some(cat.into())));
            }
        }
        data.push(lp(b"benign", 0));
        let out = build_multiclass(&data, &ClassMap::unsw_nb15(), 3).unwrap();
        assert_eq!(out.len(), 90);
        assert_eq!(class_counts(&out), vec![30, 30, 30]);
        assert_eq!(out, build_multiclass(&data, &ClassMap::unsw_nb15(), 3).unwrap());
        assert!(matches!(build_multiclass(&[], &ClassMap::unsw_nb15(), 3), Err(DatasetError::EmptyClass(_))));
    }

    #[test]
    fn class_map_lookup() {
        let m = ClassMap::cic_iot23();
        assert_eq!(m.id(" brute force attack ").unwrap(), 2);
        assert!(matches!(m.id("DDoS"), Err(DatasetError::UnknownCategory(_))));
        assert!(ClassMap::new(["a", "A"]).is_err());
    }

    #[test]
    fn split_examples() {
        let ten: Vec<u32> = (0..10).collect();
        let s = split(&ten, DEFAULT_RATIOS, 1).unwrap();
        assert_eq!((s.train.len(), s.test.len(), s.validation.len()), (7, 2, 1));
        let s = split::<u32>(&[], DEFAULT_RATIOS, 1).unwrap();
        assert_eq!((s.train.len(), s.test.len(), s.validation.len()), (0, 0, 0));
        assert!(split(&ten, (0.5, 0.5, 0.5), 1).is_err());
    }

    #[test]
    fn ground_truth_csv() {
        let csv = "Start time,Last time,Attack category,Protocol,Source IP,Source Port,Destination IP,Destination Port\n\
                   1421927414,1421927416,Exploits,tcp,175.45.176.0,13284,149.171.126.16,80\n\
                   1421927415,1421927415, Fuzzers ,udp,175.45.176.2,0x000b,149.171.126.10,53\n\
                   1421927415,1421927415,Recon,ospf,175.45.176.2,0,149.171.126.10,0\n";
        let gt = read_ground_truth(csv.as_bytes(), &ColumnMap::unsw_nb15()).unwrap();
        assert_eq!(gt.records.len(), 2);
        assert_eq!(gt.skipped_rows, 1);
        assert_eq!(gt.records[1].src_port, 11);
        assert_eq!(gt.records[1].category, "Fuzzers");
        assert_eq!(gt.records[0].attack_end, 1421927416);
        assert!(matches!(
            read_ground_truth(csv.as_bytes(), &ColumnMap::default()),
            Err(DatasetError::MissingColumn(_))
        ));
    }

    #[test]
    fn jsonl_roundtrip() {
        let data = vec![LabeledPayload::new(vec![0, 255, 16], 1, Some("Exploits".into())), lp(b"ok", 0)];
        let mut buf = Vec::new();
        write_jsonl(&mut buf, &data).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with(r#"{"label":1,"category":"Exploits","payload":"00ff10"}"#));
        let back: Vec<LabeledPayload> = read_jsonl(&buf[..]).unwrap();
        assert_eq!(back, data);
    }

    proptest! {
        #[test]
        fn dedup_idempotent(xs in proptest::collection::vec(proptest::collection::vec(0u8..4, 0..3), 0..40)) {
            let once = dedup(xs.clone());
            prop_assert_eq!(dedup(once.clone()), once);
        }

        #[test]
        fn split_partitions(n in 0usize..300, seed in any::<u64>()) {
            let data: Vec<usize> = (0..n).collect();
            let s = split(&data, DEFAULT_RATIOS, seed).unwrap();
            let mut all: Vec<usize> = s.train.iter().chain(&s.test).chain(&s.validation).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, data);
            prop_assert!((s.train.len() as f64 - 0.7 * n as f64).abs() <= 1.0);
            prop_assert!((s.test.len() as f64 - 0.2 * n as f64).abs() <= 1.0);
            prop_assert!((s.validation.len() as f64 - 0.1 * n as f64).abs() <= 1.0);
        }
    }
}
