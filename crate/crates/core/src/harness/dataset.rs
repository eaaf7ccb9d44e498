use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{input_err, shape_err, Error, Result};
use crate::features::FeatureMatrix;
use crate::nn::Tensor2;

pub const DEFAULT_LABELMAP: &str = include_str!("../../../../assets/labelmap_default.json");

/// Smallest dataset the experiment runner accepts.
pub const MIN_DATASET_ROWS: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Valence,
    Arousal,
}

impl Task {
    pub const ALL: [Task; 2] = [Task::Valence, Task::Arousal];

    pub fn name(self) -> &'static str {
        match self {
            Task::Valence => "valence",
            Task::Arousal => "arousal",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Valence {
    Pos,
    Neg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arousal {
    High,
    Low,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Quadrant {
    pub valence: Valence,
    pub arousal: Arousal,
}

impl Quadrant {
    /// (+1 = positive valence, +1 = high arousal)
    pub fn signs(self) -> (i8, i8) {
        (
            if self.valence == Valence::Pos { 1 } else { -1 },
            if self.arousal == Arousal::High { 1 } else { -1 },
        )
    }
}

/// Emotion name → valence/arousal quadrant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LabelMap(pub BTreeMap<String, Quadrant>);

impl LabelMap {
    pub fn from_json(text: &str, context: &str) -> Result<Self> {
        Error::parse_json(text, context)
    }

    pub fn default_map() -> Self {
        Self::from_json(DEFAULT_LABELMAP, "bundled label map").expect("bundled label map is valid")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, &path.display().to_string())
    }

    pub fn resolve(&self, emotion: &str) -> Result<Quadrant> {
        self.0
            .get(emotion)
            .or_else(|| self.0.get(&emotion.to_lowercase()))
            .copied()
            .ok_or_else(|| input_err!("emotion '{emotion}' is not in the label map"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub id: String,
    pub ids: Vec<String>,
    /// Active-learning feature spaces by name; rows follow `ids`.
    pub feature_sets: BTreeMap<String, Tensor2>,
    /// Features the downstream classifier sees.
    pub classifier: Tensor2,
    pub valence: Vec<i8>,
    pub arousal: Vec<i8>,
    /// Generating component per row, when known.
    pub ground_truth: Option<Vec<usize>>,
    pub notes: Vec<String>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn labels(&self, task: Task) -> &[i8] {
        match task {
            Task::Valence => &self.valence,
            Task::Arousal => &self.arousal,
        }
    }

    pub fn feature_set(&self, name: &str) -> Result<&Tensor2> {
        self.feature_sets.get(name).ok_or_else(|| {
            let known: Vec<&str> = self.feature_sets.keys().map(String::as_str).collect();
            input_err!("dataset '{}' has no feature set '{name}' (known: {})", self.id, known.join(", "))
        })
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        let mut seen = HashSet::new();
        for id in &self.ids {
            if !seen.insert(id) {
                return Err(input_err!("duplicate utterance id '{id}'"));
            }
        }
        if self.valence.len() != n || self.arousal.len() != n || self.classifier.rows() != n {
            return Err(shape_err!("dataset '{}' has inconsistent row counts", self.id));
        }
        for (name, m) in &self.feature_sets {
            if m.rows() != n {
                return Err(shape_err!("feature set '{name}' has {} rows, expected {n}", m.rows()));
            }
        }
        if let Some(g) = &self.ground_truth {
            if g.len() != n {
                return Err(shape_err!("ground truth has {} rows, expected {n}", g.len()));
            }
        }
        Ok(())
    }

    /// Writes `features.csv` (first feature set), `labels.csv` and a matching label map.
    pub fn write_csv(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, m) in &self.feature_sets {
            FeatureMatrix::new(self.ids.clone(), m.clone())?.write_csv(&dir.join(format!("features_{name}.csv")))?;
        }
        FeatureMatrix::new(self.ids.clone(), self.classifier.clone())?
            .write_csv(&dir.join("features_classifier.csv"))?;
        let path = dir.join("labels.csv");
        let mut w = csv::Writer::from_path(&path).map_err(|e| Error::csv(path.display().to_string(), e))?;
        let wrap = |e| Error::csv(path.display().to_string(), e);
        w.write_record(["id", "emotion"]).map_err(wrap)?;
        for (i, id) in self.ids.iter().enumerate() {
            w.write_record([id.as_str(), quadrant_name(self.valence[i], self.arousal[i])])
                .map_err(wrap)?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        let map: BTreeMap<String, Quadrant> = [(1, 1), (1, -1), (-1, 1), (-1, -1)]
            .into_iter()
            .map(|(v, a)| {
                let q = Quadrant {
                    valence: if v > 0 { Valence::Pos } else { Valence::Neg },
                    arousal: if a > 0 { Arousal::High } else { Arousal::Low },
                };
                (quadrant_name(v, a).to_string(), q)
            })
            .collect();
        let text = serde_json::to_string_pretty(&map).map_err(|e| Error::json("label map", e))?;
        let lm = dir.join("labelmap.json");
        std::fs::write(&lm, text + "\n").map_err(|e| Error::io(&lm, e))
    }
}

fn quadrant_name(v: i8, a: i8) -> &'static str {
    match (v > 0, a > 0) {
        (true, true) => "pos_high",
        (true, false) => "pos_low",
        (false, true) => "neg_high",
        (false, false) => "neg_low",
    }
}

/// Gaussian blobs with quadrant labels, optional background points and label noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub blobs: usize,
    pub per_blob: usize,
    pub dim: usize,
    /// Distance between any two blob centers, in units of the within-blob std.
    pub separation: f64,
    /// Probability of flipping each binary label independently.
    #[serde(default)]
    pub label_noise: f64,
    /// Extra diffuse points (fraction of blob points) with random labels.
    #[serde(default)]
    pub background: f64,
    /// Std of the isotropic Gaussian the background is drawn from, centered
    /// on the blob centroid.
    #[serde(default = "default_background_std")]
    pub background_std: f64,
    pub seed: u64,
}

fn default_background_std() -> f64 {
    3.0
}

impl SynthSpec {
    /// The bundled four-quadrant set: 1500 rows, 40 dims.
    pub fn four_quadrant(seed: u64) -> Self {
        Self {
            blobs: 4,
            per_blob: 300,
            dim: 40,
            separation: 8.0,
            label_noise: 0.0,
            background: 0.25,
            background_std: 3.0,
            seed,
        }
    }
}

/// Blob `b` carries quadrant `b mod 4` (bit 0 valence, bit 1 arousal).
/// Centers sit on scaled basis vectors, so every pair is `separation` apart.
pub fn synth_dataset(spec: &SynthSpec) -> Result<Dataset> {
    if spec.blobs < 2 {
        return Err(input_err!("synthetic data needs at least 2 blobs"));
    }
    if !(spec.separation > 0.0) {
        return Err(input_err!("blob separation must be positive"));
    }
    if spec.dim < spec.blobs {
        return Err(input_err!("dim {} cannot host {} orthogonal blob centers", spec.dim, spec.blobs));
    }
    if spec.per_blob == 0 {
        return Err(input_err!("per_blob must be positive"));
    }
    if !(0.0..=1.0).contains(&spec.label_noise) || !(0.0..=10.0).contains(&spec.background)
        || !(spec.background_std > 0.0)
    {
        return Err(input_err!(
            "label_noise must be in [0,1], background in [0,10] and background_std positive"
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let scale = spec.separation / 2f64.sqrt();
    let n_blob = spec.blobs * spec.per_blob;
    let n_bg = (n_blob as f64 * spec.background).round() as usize;
    let n = n_blob + n_bg;
    let mut values = Tensor2::zeros(n, spec.dim);
    let mut truth = Vec::with_capacity(n);
    let mut valence = Vec::with_capacity(n);
    let mut arousal = Vec::with_capacity(n);
    for b in 0..spec.blobs {
        for _ in 0..spec.per_blob {
            let r = truth.len();
            for j in 0..spec.dim {
                let z: f64 = StandardNormal.sample(&mut rng);
                values[(r, j)] = z + if j == b { scale } else { 0.0 };
            }
            truth.push(b);
            let q = b % 4;
            valence.push(if q & 1 == 0 { 1 } else { -1 });
            arousal.push(if q & 2 == 0 { 1 } else { -1 });
        }
    }
    let centroid = scale / spec.blobs as f64;
    for _ in 0..n_bg {
        let r = truth.len();
        for j in 0..spec.dim {
            let z: f64 = StandardNormal.sample(&mut rng);
            values[(r, j)] = spec.background_std * z + if j < spec.blobs { centroid } else { 0.0 };
        }
        truth.push(spec.blobs);
        valence.push(if rng.random::<bool>() { 1 } else { -1 });
        arousal.push(if rng.random::<bool>() { 1 } else { -1 });
    }
    for l in valence.iter_mut().chain(arousal.iter_mut()) {
        if spec.label_noise > 0.0 && rng.random::<f64>() < spec.label_noise {
            *l = -*l;
        }
    }
    // shuffle rows so blob order carries no information
    let mut perm: Vec<usize> = (0..n).collect();
    rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), &mut rng);
    let values = values.select_rows(&perm);
    let ids: Vec<String> = (0..n).map(|i| format!("s{i:05}")).collect();
    let ds = Dataset {
        id: format!("synth{}x{}d{}s{}", spec.blobs, spec.per_blob, spec.dim, spec.seed),
        ids,
        feature_sets: BTreeMap::from([("raw".to_string(), values.clone())]),
        classifier: values,
        valence: perm.iter().map(|&i| valence[i]).collect(),
        arousal: perm.iter().map(|&i| arousal[i]).collect(),
        ground_truth: Some(perm.iter().map(|&i| truth[i]).collect()),
        notes: vec![format!("synthetic: {spec:?}")],
    };
    ds.validate()?;
    Ok(ds)
}

/// Reads `id,emotion` rows.
pub fn read_labels_csv(path: &Path) -> Result<Vec<(String, String)>> {
    let ctx = path.display().to_string();
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::csv(&ctx, e))?;
    let header = r.headers().map_err(|e| Error::csv(&ctx, e))?.clone();
    if header.len() != 2 || &header[0] != "id" || &header[1] != "emotion" {
        return Err(input_err!("{ctx}: header must be 'id,emotion'"));
    }
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| Error::csv(&ctx, e))?;
        let id = rec[0].to_string();
        if !seen.insert(id.clone()) {
            return Err(input_err!("{ctx}: duplicate id '{id}'"));
        }
        out.push((id, rec[1].trim().to_string()));
    }
    Ok(out)
}

/// Where the files of a CSV dataset live.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSource {
    /// AL feature sets by name.
    pub features: BTreeMap<String, PathBuf>,
    /// Classifier features; defaults to the first AL feature set.
    #[serde(default)]
    pub classifier: Option<PathBuf>,
    pub labels: PathBuf,
    /// Defaults to the bundled map.
    #[serde(default)]
    pub labelmap: Option<PathBuf>,
}

impl CsvSource {
    pub fn resolve_relative(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        self.features.values_mut().for_each(fix);
        self.classifier.iter_mut().for_each(fix);
        fix(&mut self.labels);
        self.labelmap.iter_mut().for_each(fix);
    }
}

/// Loads feature CSVs and an emotion label file, aligning all rows to the
/// label file's order.
pub fn load_csv_dataset(id: &str, source: &CsvSource) -> Result<Dataset> {
    if source.features.is_empty() {
        return Err(input_err!("dataset '{id}' lists no feature files"));
    }
    let labelmap = match &source.labelmap {
        Some(p) => LabelMap::load(p)?,
        None => LabelMap::default_map(),
    };
    let labels = read_labels_csv(&source.labels)?;
    let mut valence = Vec::with_capacity(labels.len());
    let mut arousal = Vec::with_capacity(labels.len());
    for (id, emotion) in &labels {
        let (v, a) = labelmap
            .resolve(emotion)
            .map_err(|_| input_err!("utterance '{id}' has emotion '{emotion}', which is not in the label map"))?
            .signs();
        valence.push(v);
        arousal.push(a);
    }
    let ids: Vec<String> = labels.iter().map(|(id, _)| id.clone()).collect();
    let align = |path: &Path| -> Result<Tensor2> {
        let m = FeatureMatrix::read_csv(path)?;
        let pos: HashMap<&str, usize> = m.ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
        let mut rows = Vec::with_capacity(ids.len());
        for id in &ids {
            match pos.get(id.as_str()) {
                Some(&r) => rows.push(r),
                None => return Err(input_err!("{}: no features for utterance '{id}'", path.display())),
            }
        }
        if m.n_rows() != ids.len() {
            let known: HashSet<&str> = ids.iter().map(String::as_str).collect();
            let extra = m.ids.iter().find(|s| !known.contains(s.as_str())).cloned().unwrap_or_default();
            return Err(input_err!(
                "{}: {} rows but {} labels (utterance '{extra}' has no label)",
                path.display(),
                m.n_rows(),
                ids.len()
            ));
        }
        Ok(m.values.select_rows(&rows))
    };
    let mut feature_sets = BTreeMap::new();
    for (name, path) in &source.features {
        feature_sets.insert(name.clone(), align(path)?);
    }
    let classifier = match &source.classifier {
        Some(p) => align(p)?,
        None => feature_sets.values().next().cloned().expect("non-empty"),
    };
    let ds = Dataset {
        id: id.to_string(),
        ids,
        feature_sets,
        classifier,
        valence,
        arousal,
        ground_truth: None,
        notes: vec![format!("labels from {}", source.labels.display())],
    };
    ds.validate()?;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_map_covers_fesc_inventory() {
        let m = LabelMap::default_map();
        assert_eq!(m.resolve("anger").unwrap().signs(), (-1, 1));
        assert_eq!(m.resolve("joy").unwrap().signs(), (1, 1));
        assert_eq!(m.resolve("sadness").unwrap().signs(), (-1, -1));
        assert_eq!(m.resolve("tenderness").unwrap().signs(), (1, -1));
        let e = m.resolve("contempt").unwrap_err().to_string();
        assert!(e.contains("contempt"));
    }

    #[test]
    fn synth_shapes_and_determinism() {
        let spec = SynthSpec::four_quadrant(3);
        let a = synth_dataset(&spec).unwrap();
        assert_eq!(a.len(), 1500);
        assert_eq!(a.feature_set("raw").unwrap().cols(), 40);
        assert_eq!(a, synth_dataset(&spec).unwrap());
        assert!(synth_dataset(&SynthSpec { blobs: 1, ..spec }).is_err());
        assert!(synth_dataset(&SynthSpec { separation: 0.0, ..spec }).is_err());
    }
}
