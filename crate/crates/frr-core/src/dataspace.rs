//! Shared domain types: samples, labeled sets with provenance, per-sample
//! weight vectors, noise specifications, and the dataset CSV format.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{FrrError, Result};

/// Where a labeled set came from in the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Clean,
    Noisy,
    FilteredNoisy,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Provenance::Clean => write!(f, "clean"),
            Provenance::Noisy => write!(f, "noisy"),
            Provenance::FilteredNoisy => write!(f, "filtered-noisy"),
        }
    }
}

impl std::str::FromStr for Provenance {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "clean" => Ok(Provenance::Clean),
            "noisy" => Ok(Provenance::Noisy),
            "filtered-noisy" => Ok(Provenance::FilteredNoisy),
            other => Err(format!("unknown provenance `{other}`")),
        }
    }
}

/// One observation: a feature vector and its scalar label.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub features: Vec<f64>,
    pub label: f64,
}

impl Sample {
    pub fn new(features: Vec<f64>, label: f64) -> Result<Self> {
        if features.is_empty() {
            return Err(FrrError::Invalid(
                "sample needs at least one feature".into(),
            ));
        }
        if !label.is_finite() || features.iter().any(|v| !v.is_finite()) {
            return Err(FrrError::Invalid("non-finite entry in sample".into()));
        }
        Ok(Sample { features, label })
    }

    pub fn dim(&self) -> usize {
        self.features.len()
    }
}

/// An ordered collection of samples of a fixed dimension, tagged with
/// its provenance. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet {
    samples: Vec<Sample>,
    dimension: usize,
    provenance: Provenance,
}

impl LabeledSet {
    pub fn new(samples: Vec<Sample>, dimension: usize, provenance: Provenance) -> Result<Self> {
        if dimension == 0 {
            return Err(FrrError::Invalid("dimension must be >= 1".into()));
        }
        for (i, s) in samples.iter().enumerate() {
            if s.dim() != dimension {
                return Err(FrrError::Shape(format!(
                    "sample {i} has dimension {}, set declares {dimension}",
                    s.dim()
                )));
            }
        }
        Ok(LabeledSet {
            samples,
            dimension,
            provenance,
        })
    }

    /// Builds a set from parallel feature rows and labels.
    pub fn from_rows(
        rows: Vec<Vec<f64>>,
        labels: Vec<f64>,
        provenance: Provenance,
    ) -> Result<Self> {
        if rows.len() != labels.len() {
            return Err(FrrError::Shape(format!(
                "{} feature rows vs {} labels",
                rows.len(),
                labels.len()
            )));
        }
        let dimension = rows.first().map(|r| r.len()).unwrap_or(0).max(1);
        let samples = rows
            .into_iter()
            .zip(labels)
            .map(|(features, label)| Sample::new(features, label))
            .collect::<Result<Vec<_>>>()?;
        LabeledSet::new(samples, dimension, provenance)
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn labels(&self) -> impl Iterator<Item = f64> + '_ {
        self.samples.iter().map(|s| s.label)
    }

    /// A copy of this set restricted to `indices`, in the given order.
    pub fn subset(&self, indices: &[usize], provenance: Provenance) -> Result<Self> {
        let samples = indices
            .iter()
            .map(|&i| {
                self.samples
                    .get(i)
                    .cloned()
                    .ok_or_else(|| FrrError::Invalid(format!("index {i} out of range")))
            })
            .collect::<Result<Vec<_>>>()?;
        LabeledSet::new(samples, self.dimension, provenance)
    }
}

/// Nonnegative per-sample weights, aligned index-wise with a labeled set,
/// with a declared ceiling that no entry may exceed.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector {
    weights: Vec<f64>,
    alpha_max: f64,
}

impl WeightVector {
    pub fn new(weights: Vec<f64>, alpha_max: f64) -> Result<Self> {
        if !alpha_max.is_finite() || alpha_max <= 0.0 {
            return Err(FrrError::UnboundedWeight(format!(
                "weight ceiling must be finite and positive, got {alpha_max}"
            )));
        }
        for (i, &w) in weights.iter().enumerate() {
            if !w.is_finite() || w < 0.0 {
                return Err(FrrError::Invalid(format!(
                    "weight {i} is {w}, must be finite and >= 0"
                )));
            }
            if w > alpha_max {
                return Err(FrrError::Invalid(format!(
                    "weight {i} is {w}, above the declared ceiling {alpha_max}"
                )));
            }
        }
        Ok(WeightVector { weights, alpha_max })
    }

    pub fn ones(len: usize) -> Self {
        WeightVector {
            weights: vec![1.0; len],
            alpha_max: 1.0,
        }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn alpha_max(&self) -> f64 {
        self.alpha_max
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// Symmetric heavy-tailed noise families for the corrupted set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HeavyTail {
    Cauchy {
        scale: f64,
    },
    StudentT {
        dof: f64,
        scale: f64,
    },
    /// Two-component zero-mean Gaussian mixture: scale1 with probability p,
    /// scale2 otherwise.
    GaussMixture {
        p: f64,
        scale1: f64,
        scale2: f64,
    },
}

impl HeavyTail {
    fn validate(&self) -> Result<()> {
        let ok = match *self {
            HeavyTail::Cauchy { scale } => scale.is_finite() && scale >= 0.0,
            HeavyTail::StudentT { dof, scale } => {
                dof > 0.0 && dof.is_finite() && scale.is_finite() && scale >= 0.0
            }
            HeavyTail::GaussMixture { p, scale1, scale2 } => {
                (0.0..=1.0).contains(&p)
                    && scale1 >= 0.0
                    && scale2 >= 0.0
                    && scale1.is_finite()
                    && scale2.is_finite()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(FrrError::Invalid(format!(
                "invalid heavy-tail parameters: {self:?}"
            )))
        }
    }
}

/// Noise configuration for synthetic data: bounded sub-gaussian noise on the
/// clean set and a symmetric heavy-tailed family on the noisy set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// Sub-gaussian variance proxy sigma of the clean noise.
    pub clean_sigma: f64,
    /// Hard truncation bound xi_max on clean noise draws.
    pub clean_bound: f64,
    pub heavy_tail: HeavyTail,
}

impl NoiseSpec {
    pub fn new(clean_sigma: f64, clean_bound: f64, heavy_tail: HeavyTail) -> Result<Self> {
        if clean_sigma < 0.0 || !clean_sigma.is_finite() {
            return Err(FrrError::Invalid(format!(
                "clean_sigma must be finite and >= 0, got {clean_sigma}"
            )));
        }
        if clean_bound < 0.0 || !clean_bound.is_finite() {
            return Err(FrrError::Invalid(format!(
                "clean_bound must be finite and >= 0, got {clean_bound}"
            )));
        }
        if clean_sigma > 0.0 && clean_bound < clean_sigma {
            return Err(FrrError::Invalid(format!(
                "clean_bound {clean_bound} must be >= clean_sigma {clean_sigma}"
            )));
        }
        heavy_tail.validate()?;
        Ok(NoiseSpec {
            clean_sigma,
            clean_bound,
            heavy_tail,
        })
    }
}

// Dataset CSV schema:
//   # d=<int> provenance=<clean|noisy|filtered-noisy>
//   x1,...,xd,y
//   <one row per sample>
// Values are written with 17 significant digits so reloading reproduces the
// original f64 bit patterns.

fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn parse_f64(field: &str, line: usize) -> Result<f64> {
    let v: f64 = field.trim().parse().map_err(|_| FrrError::Parse {
        line,
        message: format!("`{field}` is not a number"),
    })?;
    if !v.is_finite() {
        return Err(FrrError::Parse {
            line,
            message: format!("non-finite value `{field}`"),
        });
    }
    Ok(v)
}

/// Writes a labeled set to `path` in the dataset CSV format.
pub fn save_labeled_set(set: &LabeledSet, path: impl AsRef<Path>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(
        out,
        "# d={} provenance={}",
        set.dimension(),
        set.provenance()
    )?;
    let header: Vec<String> = (1..=set.dimension()).map(|i| format!("x{i}")).collect();
    writeln!(out, "{},y", header.join(","))?;
    for s in set.samples() {
        let mut fields: Vec<String> = s.features.iter().copied().map(fmt_f64).collect();
        fields.push(fmt_f64(s.label));
        writeln!(out, "{}", fields.join(","))?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a labeled set from the dataset CSV format, preserving row order.
pub fn load_labeled_set(path: impl AsRef<Path>) -> Result<LabeledSet> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines().enumerate();

    let (_, first) = lines.next().ok_or(FrrError::Parse {
        line: 1,
        message: "empty file".into(),
    })?;
    let first = first?;
    let (dimension, provenance) = parse_meta_line(&first)?;

    let (_, header) = lines.next().ok_or(FrrError::Parse {
        line: 2,
        message: "missing column header".into(),
    })?;
    let header = header?;
    let expected: Vec<String> = (1..=dimension).map(|i| format!("x{i}")).collect();
    let expected = format!("{},y", expected.join(","));
    if header.trim() != expected {
        return Err(FrrError::Parse {
            line: 2,
            message: format!("expected header `{expected}`, found `{}`", header.trim()),
        });
    }

    let mut samples = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != dimension + 1 {
            return Err(FrrError::Parse {
                line: line_no,
                message: format!("expected {} fields, found {}", dimension + 1, fields.len()),
            });
        }
        let mut features = Vec::with_capacity(dimension);
        for f in &fields[..dimension] {
            features.push(parse_f64(f, line_no)?);
        }
        let label = parse_f64(fields[dimension], line_no)?;
        samples.push(Sample { features, label });
    }
    LabeledSet::new(samples, dimension, provenance)
}

fn parse_meta_line(line: &str) -> Result<(usize, Provenance)> {
    let err = |message: String| FrrError::Parse { line: 1, message };
    let body = line.strip_prefix('#').ok_or_else(|| {
        err(format!(
            "expected `# d=<int> provenance=<...>`, found `{line}`"
        ))
    })?;
    let mut dimension = None;
    let mut provenance = None;
    for token in body.split_whitespace() {
        if let Some(v) = token.strip_prefix("d=") {
            dimension = Some(
                v.parse::<usize>()
                    .map_err(|_| err(format!("bad dimension `{v}`")))?,
            );
        } else if let Some(v) = token.strip_prefix("provenance=") {
            provenance = Some(v.parse::<Provenance>().map_err(err)?);
        } else {
            return Err(err(format!("unexpected token `{token}`")));
        }
    }
    match (dimension, provenance) {
        (Some(d), Some(p)) if d >= 1 => Ok((d, p)),
        (Some(_), Some(_)) => Err(err("dimension must be >= 1".into())),
        _ => Err(err("meta line must declare both d= and provenance=".into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use tempfile::tempdir;

    fn roundtrip(set: &LabeledSet) -> LabeledSet {
        let dir = tempdir().unwrap();
        let path = dir.path().join("set.csv");
        save_labeled_set(set, &path).unwrap();
        load_labeled_set(&path).unwrap()
    }

    #[test]
    fn load_three_row_file() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("in.csv");
        std::fs::write(
            &path,
            "# d=2 provenance=clean\nx1,x2,y\n1.0,2.0,3.0\n0.5,-1.0,0.0\n4.0,4.0,-2.5\n",
        )
        .unwrap();
        let set = load_labeled_set(&path).unwrap();
        assert_eq!(set.len(), 3);
        assert_eq!(set.dimension(), 2);
        assert_eq!(set.provenance(), Provenance::Clean);
        assert_eq!(set.samples()[1].features, vec![0.5, -1.0]);
        assert_eq!(set.samples()[2].label, -2.5);
    }

    #[test]
    fn load_empty_body() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("empty.csv");
        std::fs::write(&path, "# d=3 provenance=noisy\nx1,x2,x3,y\n").unwrap();
        let set = load_labeled_set(&path).unwrap();
        assert_eq!(set.len(), 0);
        assert_eq!(set.dimension(), 3);
        assert_eq!(set.provenance(), Provenance::Noisy);
    }

    #[test]
    fn nan_label_reports_line() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "# d=1 provenance=clean\nx1,y\n1.0,2.0\n3.0,nan\n").unwrap();
        match load_labeled_set(&path) {
            Err(FrrError::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn inconsistent_row_width_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "# d=2 provenance=clean\nx1,x2,y\n1.0,2.0\n").unwrap();
        match load_labeled_set(&path) {
            Err(FrrError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_header_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "d=2 provenance=clean\nx1,x2,y\n").unwrap();
        assert!(matches!(
            load_labeled_set(&path),
            Err(FrrError::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn roundtrip_hundred_samples_identical() {
        let rows: Vec<Vec<f64>> = (0..100)
            .map(|i| vec![i as f64 * 0.1, (i as f64).sin(), 1.0 / (i as f64 + 1.0)])
            .collect();
        let labels: Vec<f64> = (0..100).map(|i| (i as f64).cos() * 1e-7).collect();
        let set = LabeledSet::from_rows(rows, labels, Provenance::Noisy).unwrap();
        let back = roundtrip(&set);
        assert_eq!(set, back);
        // order preserved: index i maps to index i
        for i in 0..set.len() {
            assert_eq!(set.samples()[i], back.samples()[i]);
        }
    }

    #[test]
    fn roundtrip_point_one_exact() {
        let set = LabeledSet::from_rows(vec![vec![0.1]], vec![0.1], Provenance::Clean).unwrap();
        let back = roundtrip(&set);
        assert_eq!(back.samples()[0].features[0].to_bits(), 0.1f64.to_bits());
        assert_eq!(back.samples()[0].label.to_bits(), 0.1f64.to_bits());
    }

    #[test]
    fn construction_rejects_non_finite() {
        assert!(Sample::new(vec![1.0, f64::NAN], 0.0).is_err());
        assert!(Sample::new(vec![1.0], f64::INFINITY).is_err());
        let good = Sample::new(vec![1.0], 2.0).unwrap();
        let bad = Sample {
            features: vec![1.0, 2.0],
            label: 0.0,
        };
        assert!(LabeledSet::new(vec![good, bad], 1, Provenance::Clean).is_err());
    }

    #[test]
    fn weight_vector_bounds() {
        assert!(WeightVector::new(vec![0.0, 0.5, 1.0], 1.0).is_ok());
        assert!(WeightVector::new(vec![-0.1], 1.0).is_err());
        assert!(WeightVector::new(vec![1.5], 1.0).is_err());
        assert!(WeightVector::new(vec![0.5], f64::INFINITY).is_err());
        assert!(WeightVector::new(vec![f64::NAN], 1.0).is_err());
    }

    #[test]
    fn noise_spec_validation() {
        let tail = HeavyTail::Cauchy { scale: 1.0 };
        assert!(NoiseSpec::new(1.0, 4.0, tail).is_ok());
        assert!(NoiseSpec::new(1.0, 0.5, tail).is_err());
        assert!(NoiseSpec::new(0.0, 0.0, tail).is_ok());
        assert!(NoiseSpec::new(
            1.0,
            4.0,
            HeavyTail::StudentT {
                dof: 0.0,
                scale: 1.0
            }
        )
        .is_err());
        assert!(NoiseSpec::new(
            1.0,
            4.0,
            HeavyTail::GaussMixture {
                p: 1.5,
                scale1: 1.0,
                scale2: 2.0
            }
        )
        .is_err());
    }

    proptest! {
        #[test]
        fn csv_roundtrip_is_identity(
            rows in proptest::collection::vec(
                proptest::collection::vec(-1e12f64..1e12, 3),
                0..40,
            ),
        ) {
            let labels: Vec<f64> = rows.iter().map(|r| r[0] * 0.5 - r[2]).collect();
            let set = LabeledSet::from_rows(rows, labels, Provenance::FilteredNoisy).unwrap();
            let back = roundtrip(&set);
            prop_assert_eq!(set, back);
        }
    }
}
