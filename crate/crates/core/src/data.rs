//! Dataset sources: a seeded Gaussian-mixture generator and a CIFAR-100
//! binary loader.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::continual::{Dataset, LabeledSet, Sample, Split};
use crate::error::{Error, Result};
use crate::ndcore::Prng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub dim: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub radius: f64,
    pub std: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            classes: 20,
            dim: 32,
            train_per_class: 100,
            test_per_class: 50,
            radius: 5.0,
            std: 1.0,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::Config("synthetic data needs at least 2 classes".into()));
        }
        if self.dim == 0 || self.train_per_class == 0 || self.test_per_class == 0 {
            return Err(Error::Config("synthetic dim and per-class counts must be >= 1".into()));
        }
        if !(self.std > 0.0 && self.std.is_finite()) || !(self.radius >= 0.0 && self.radius.is_finite()) {
            return Err(Error::Config("synthetic std must be > 0 and radius >= 0".into()));
        }
        Ok(())
    }
}

/// Class means lie uniformly on the sphere of radius `spec.radius`; samples
/// are `mean + N(0, std²·I)`.
pub fn generate(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = Prng::derive(spec.seed, 0xDA7A);
    let means: Vec<Vec<f64>> = (0..spec.classes)
        .map(|_| {
            let mut v: Vec<f64> = (0..spec.dim).map(|_| rng.normal()).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            for x in &mut v {
                *x *= spec.radius / n;
            }
            v
        })
        .collect();
    let mut draw = |split: Split, per_class: usize| {
        let mut samples = Vec::with_capacity(spec.classes * per_class);
        for (label, mean) in means.iter().enumerate() {
            for _ in 0..per_class {
                let features = mean.iter().map(|m| m + spec.std * rng.normal()).collect();
                samples.push(Sample::new(features, label));
            }
        }
        LabeledSet::new(split, samples)
    };
    let train = draw(Split::Train, spec.train_per_class);
    let test = draw(Split::Test, spec.test_per_class);
    Ok(Dataset {
        train,
        test,
        num_classes: spec.classes,
    })
}

pub const CIFAR_RECORD_LEN: usize = 3074;
pub const CIFAR_PIXELS: usize = 3072;

/// One raw CIFAR-100 record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CifarRecord {
    pub coarse: u8,
    pub fine: u8,
    pub pixels: Vec<u8>,
}

impl CifarRecord {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(CIFAR_RECORD_LEN);
        out.push(self.coarse);
        out.push(self.fine);
        out.extend_from_slice(&self.pixels);
        out
    }

    /// Pixels scaled to `[0, 1]`.
    pub fn features(&self) -> Vec<f64> {
        self.pixels.iter().map(|&p| p as f64 / 255.0).collect()
    }

    /// Inverse of [`CifarRecord::features`].
    pub fn from_features(coarse: u8, fine: u8, features: &[f64]) -> Self {
        Self {
            coarse,
            fine,
            pixels: features.iter().map(|v| (v * 255.0).round() as u8).collect(),
        }
    }
}

pub fn parse_cifar100_records(bytes: &[u8], path: &Path) -> Result<Vec<CifarRecord>> {
    let whole = bytes.len() / CIFAR_RECORD_LEN * CIFAR_RECORD_LEN;
    if whole != bytes.len() {
        return Err(Error::Cifar {
            path: path.to_path_buf(),
            offset: whole as u64,
            reason: format!(
                "truncated record ({} of {} bytes)",
                bytes.len() - whole,
                CIFAR_RECORD_LEN
            ),
        });
    }
    if bytes.is_empty() {
        return Err(Error::Cifar {
            path: path.to_path_buf(),
            offset: 0,
            reason: "no records".into(),
        });
    }
    bytes
        .chunks_exact(CIFAR_RECORD_LEN)
        .enumerate()
        .map(|(i, chunk)| {
            let (coarse, fine) = (chunk[0], chunk[1]);
            if fine >= 100 || coarse >= 20 {
                return Err(Error::Cifar {
                    path: path.to_path_buf(),
                    offset: (i * CIFAR_RECORD_LEN) as u64,
                    reason: format!("label out of range (coarse {coarse}, fine {fine})"),
                });
            }
            Ok(CifarRecord {
                coarse,
                fine,
                pixels: chunk[2..].to_vec(),
            })
        })
        .collect()
}

fn records_to_set(records: &[CifarRecord], split: Split) -> LabeledSet {
    let samples = records
        .iter()
        .map(|r| Sample::new(r.features(), r.fine as usize))
        .collect();
    LabeledSet::new(split, samples)
}

pub fn read_cifar100_file(path: &Path) -> Result<Vec<CifarRecord>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_cifar100_records(&bytes, path)
}

/// Loads the `train.bin` / `test.bin` pair, using fine labels.
pub fn load_cifar100_binary(train: &Path, test: &Path) -> Result<Dataset> {
    let train_records = read_cifar100_file(train)?;
    let test_records = read_cifar100_file(test)?;
    Ok(Dataset {
        train: records_to_set(&train_records, Split::Train),
        test: records_to_set(&test_records, Split::Test),
        num_classes: 100,
    })
}

/// `train.bin` and `test.bin` inside `dir`.
pub fn cifar100_paths(dir: &Path) -> (PathBuf, PathBuf) {
    (dir.join("train.bin"), dir.join("test.bin"))
}

/// Writes `train.csv` and `test.csv` (`label,f0,f1,...`) into `dir`.
pub fn write_csv_dataset(data: &Dataset, dir: &Path) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for (set, name) in [(&data.train, "train.csv"), (&data.test, "test.csv")] {
        let path = dir.join(name);
        let file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = std::io::BufWriter::new(file);
        let dim = set.samples().first().map_or(0, |s| s.features.len());
        let mut header = String::from("label");
        for j in 0..dim {
            header.push_str(&format!(",f{j}"));
        }
        writeln!(w, "{header}").map_err(|e| Error::io(&path, e))?;
        for s in set.samples() {
            let mut line = s.label.to_string();
            for v in &s.features {
                line.push(',');
                line.push_str(&v.to_string());
            }
            writeln!(w, "{line}").map_err(|e| Error::io(&path, e))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}

fn read_csv_split(path: &Path, split: Split) -> Result<LabeledSet> {
    let name = path.display().to_string();
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::parse(&name, e.to_string()))?;
    let mut samples = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row.map_err(|e| Error::parse(&name, e.to_string()))?;
        let mut fields = row.iter();
        let label = fields
            .next()
            .and_then(|v| v.trim().parse::<usize>().ok())
            .ok_or_else(|| Error::parse(&name, format!("row {}: bad label", i + 1)))?;
        let features = fields
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::parse(&name, format!("row {}: {e}", i + 1)))?;
        samples.push(Sample::new(features, label));
    }
    Ok(LabeledSet::new(split, samples))
}

/// Reads a dataset written by [`write_csv_dataset`].
pub fn read_csv_dataset(dir: &Path) -> Result<Dataset> {
    let train = read_csv_split(&dir.join("train.csv"), Split::Train)?;
    let test = read_csv_split(&dir.join("test.csv"), Split::Test)?;
    let num_classes = train
        .samples()
        .iter()
        .chain(test.samples())
        .map(|s| s.label + 1)
        .max()
        .unwrap_or(0);
    Ok(Dataset {
        train,
        test,
        num_classes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ndcore::squared_distance;

    fn small_spec() -> SyntheticSpec {
        SyntheticSpec {
            classes: 4,
            dim: 6,
            train_per_class: 7,
            test_per_class: 3,
            ..SyntheticSpec::default()
        }
    }

    #[test]
    fn counts_and_labels() {
        let d = generate(&small_spec()).unwrap();
        assert_eq!(d.train.len(), 28);
        assert_eq!(d.test.len(), 12);
        for c in 0..4 {
            assert_eq!(d.train.samples().iter().filter(|s| s.label == c).count(), 7);
            assert_eq!(d.test.samples().iter().filter(|s| s.label == c).count(), 3);
        }
    }

    #[test]
    fn tiny_std_collapses_to_means() {
        let spec = SyntheticSpec {
            std: 1e-9,
            ..small_spec()
        };
        let d = generate(&spec).unwrap();
        for c in 0..4 {
            let members: Vec<&Sample> = d
                .train
                .samples()
                .iter()
                .chain(d.test.samples())
                .filter(|s| s.label == c)
                .collect();
            let first = &members[0].features;
            // the mean is within 1e-8 of any sample; check spread and radius
            for m in &members {
                assert!(squared_distance(&m.features, first).sqrt() < 1e-6);
            }
            let r = first.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((r - 5.0).abs() < 1e-6);
        }
    }

    #[test]
    fn same_seed_same_data() {
        let a = generate(&small_spec()).unwrap();
        let b = generate(&small_spec()).unwrap();
        assert_eq!(a, b);
        let c = generate(&SyntheticSpec {
            seed: 1,
            ..small_spec()
        })
        .unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn invalid_specs() {
        assert!(generate(&SyntheticSpec { classes: 1, ..small_spec() }).is_err());
        assert!(generate(&SyntheticSpec { std: 0.0, ..small_spec() }).is_err());
    }

    fn fixture() -> Vec<u8> {
        let mut bytes = Vec::new();
        for (coarse, fine, base) in [(3u8, 42u8, 0u8), (19, 99, 7)] {
            bytes.push(coarse);
            bytes.push(fine);
            bytes.extend((0..CIFAR_PIXELS).map(|i| base.wrapping_add((i % 256) as u8)));
        }
        bytes
    }

    #[test]
    fn parses_hand_built_records() {
        let recs = parse_cifar100_records(&fixture(), Path::new("fixture.bin")).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!((recs[0].coarse, recs[0].fine), (3, 42));
        assert_eq!((recs[1].coarse, recs[1].fine), (19, 99));
        let f = recs[1].features();
        assert_eq!(f.len(), CIFAR_PIXELS);
        assert_eq!(f[0], 7.0 / 255.0);
        assert_eq!(f[248], 255.0 / 255.0);
        assert_eq!(f[249], 0.0);
        let set = records_to_set(&recs, Split::Train);
        assert_eq!(set.samples()[0].label, 42);
    }

    #[test]
    fn truncated_file_reports_offset() {
        let mut bytes = fixture();
        bytes.truncate(CIFAR_RECORD_LEN + 100);
        let err = parse_cifar100_records(&bytes, Path::new("t.bin")).unwrap_err();
        match err {
            Error::Cifar { offset, .. } => assert_eq!(offset, CIFAR_RECORD_LEN as u64),
            other => panic!("unexpected {other:?}"),
        }
        assert!(err_msg_has_offset(&bytes));
    }

    fn err_msg_has_offset(bytes: &[u8]) -> bool {
        let msg = parse_cifar100_records(bytes, Path::new("t.bin")).unwrap_err().to_string();
        msg.contains("3074")
    }

    #[test]
    fn records_reserialize_exactly() {
        let bytes = fixture();
        let recs = parse_cifar100_records(&bytes, Path::new("f.bin")).unwrap();
        let mut out = Vec::new();
        for r in &recs {
            let back = CifarRecord::from_features(r.coarse, r.fine, &r.features());
            out.extend(back.to_bytes());
        }
        assert_eq!(out, bytes);
    }

    #[test]
    fn csv_round_trip() {
        let d = generate(&small_spec()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_csv_dataset(&d, dir.path()).unwrap();
        let back = read_csv_dataset(dir.path()).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn full_cifar_if_present() {
        let Ok(dir) = std::env::var("CIFAR100_DIR") else {
            return;
        };
        let (train, test) = cifar100_paths(Path::new(&dir));
        let d = load_cifar100_binary(&train, &test).unwrap();
        assert_eq!(d.train.len(), 50_000);
        assert_eq!(d.test.len(), 10_000);
        let mut counts = vec![0usize; 100];
        for s in d.train.samples() {
            counts[s.label] += 1;
        }
        assert!(counts.iter().all(|&c| c == 500));
    }
}
