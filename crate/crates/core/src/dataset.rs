//! Population model, JSONL ingestion and the synthetic generator.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng as _;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, object_noise, rng_for};

#[derive(Clone, Debug, PartialEq)]
pub struct DataObject {
    pub id: usize,
    pub attr: f64,
    pub features: Vec<f64>,
    pub oracle_embedding: Option<Vec<f64>>,
    pub proxy_embedding: Option<Vec<f64>>,
}

/// The population `D`.
///
/// Ids are dense in `[0, len)` and equal to the object's position. Attribute
/// bounds are either declared (file header, generator config) or derived from
/// the observed values; derived bounds are flagged because they feed the
/// error guarantees of the sample-size calculators.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    objects: Vec<DataObject>,
    feature_dim: usize,
    embedding_dim: usize,
    attr_bounds: (f64, f64),
    bounds_derived: bool,
}

impl Dataset {
    /// Validates and wraps `objects`. With `attr_bounds = None` the observed
    /// `(min, max)` is used.
    pub fn new(objects: Vec<DataObject>, attr_bounds: Option<(f64, f64)>) -> Result<Self> {
        let first = objects.first().ok_or(Error::EmptyDataset)?;
        let feature_dim = first.features.len();
        if feature_dim == 0 {
            return Err(Error::invalid("features", "feature vectors must be nonempty"));
        }
        let embedding_dim = objects
            .iter()
            .find_map(|o| o.oracle_embedding.as_ref().or(o.proxy_embedding.as_ref()))
            .map_or(feature_dim, Vec::len);

        for (i, o) in objects.iter().enumerate() {
            if o.id != i {
                return Err(Error::invalid("id", format!("object at position {i} has id {}", o.id)));
            }
            check_object(o, feature_dim, embedding_dim, &format!("object {i}"))?;
        }

        let (lo, hi) = objects.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), o| {
            (lo.min(o.attr), hi.max(o.attr))
        });
        let (attr_bounds, bounds_derived) = match attr_bounds {
            Some((a, b)) => {
                if !(a <= lo && hi <= b) {
                    return Err(Error::invalid(
                        "attr_bounds",
                        format!("[{a}, {b}] does not contain observed range [{lo}, {hi}]"),
                    ));
                }
                ((a, b), false)
            }
            None => ((lo, hi), true),
        };

        Ok(Dataset {
            objects,
            feature_dim,
            embedding_dim,
            attr_bounds,
            bounds_derived,
        })
    }

    pub fn objects(&self) -> &[DataObject] {
        &self.objects
    }

    pub fn get(&self, id: usize) -> Option<&DataObject> {
        self.objects.get(id)
    }

    pub fn len(&self) -> usize {
        self.objects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn embedding_dim(&self) -> usize {
        self.embedding_dim
    }

    /// The attribute bounds `(a, b)` used by the sample-size calculators.
    pub fn attribute_bounds(&self) -> (f64, f64) {
        self.attr_bounds
    }

    /// True when the bounds were computed from the data rather than declared.
    pub fn bounds_derived(&self) -> bool {
        self.bounds_derived
    }

    pub fn attr_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.objects.iter().map(|o| o.attr)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        load_dataset(path)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut w = BufWriter::new(file);
        self.write_jsonl(&mut w).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Writes the header line followed by one record per object.
    pub fn write_jsonl<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        let header = Header {
            feature_dim: self.feature_dim,
            embedding_dim: self.embedding_dim,
            attr_bounds: (!self.bounds_derived).then_some(self.attr_bounds),
        };
        serde_json::to_writer(&mut *w, &header)?;
        w.write_all(b"\n")?;
        for o in &self.objects {
            let rec = RecordRef {
                id: o.id,
                attr: o.attr,
                features: &o.features,
                oracle_emb: o.oracle_embedding.as_deref(),
                proxy_emb: o.proxy_embedding.as_deref(),
            };
            serde_json::to_writer(&mut *w, &rec)?;
            w.write_all(b"\n")?;
        }
        w.flush()
    }
}

fn check_object(o: &DataObject, feature_dim: usize, embedding_dim: usize, context: &str) -> Result<()> {
    if o.features.len() != feature_dim {
        return Err(Error::Dimension {
            context: format!("{context}: features"),
            expected: feature_dim,
            found: o.features.len(),
        });
    }
    for (name, emb) in [("oracle_emb", &o.oracle_embedding), ("proxy_emb", &o.proxy_embedding)] {
        if let Some(e) = emb {
            if e.len() != embedding_dim {
                return Err(Error::Dimension {
                    context: format!("{context}: {name}"),
                    expected: embedding_dim,
                    found: e.len(),
                });
            }
        }
    }
    if !o.attr.is_finite() {
        return Err(Error::invalid("attr", format!("{context}: attribute value is not finite")));
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    feature_dim: usize,
    embedding_dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    attr_bounds: Option<(f64, f64)>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    id: u64,
    attr: f64,
    features: Vec<f64>,
    #[serde(default)]
    oracle_emb: Option<Vec<f64>>,
    #[serde(default)]
    proxy_emb: Option<Vec<f64>>,
}

#[derive(Serialize)]
struct RecordRef<'a> {
    id: usize,
    attr: f64,
    features: &'a [f64],
    #[serde(skip_serializing_if = "Option::is_none")]
    oracle_emb: Option<&'a [f64]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    proxy_emb: Option<&'a [f64]>,
}

/// Reads a JSONL dataset: an optional header line
/// `{"feature_dim", "embedding_dim", "attr_bounds"?}` followed by one record
/// per line. Ids are re-indexed densely in file order.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_jsonl(BufReader::new(file)).map_err(|e| match e {
        Error::Io { source, .. } => Error::Io {
            path: path.to_path_buf(),
            source,
        },
        other => other,
    })
}

pub fn read_jsonl<R: BufRead>(reader: R) -> Result<Dataset> {
    let mut header: Option<Header> = None;
    let mut objects = Vec::new();
    let mut seen_ids = std::collections::HashSet::new();
    let mut dims: Option<(usize, usize)> = None;

    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|source| Error::Io {
            path: Default::default(),
            source,
        })?;
        let text = line.trim();
        if text.is_empty() {
            continue;
        }
        if objects.is_empty() && header.is_none() && text.contains("\"feature_dim\"") {
            let h: Header = serde_json::from_str(text).map_err(|e| Error::Parse {
                line: lineno,
                message: e.to_string(),
            })?;
            dims = Some((h.feature_dim, h.embedding_dim));
            header = Some(h);
            continue;
        }
        let rec: Record = serde_json::from_str(text).map_err(|e| Error::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        if !seen_ids.insert(rec.id) {
            return Err(Error::Parse {
                line: lineno,
                message: format!("duplicate id {}", rec.id),
            });
        }
        let obj = DataObject {
            id: objects.len(),
            attr: rec.attr,
            features: rec.features,
            oracle_embedding: rec.oracle_emb,
            proxy_embedding: rec.proxy_emb,
        };
        let (fd, ed) = *dims.get_or_insert_with(|| {
            let fd = obj.features.len();
            let ed = obj
                .oracle_embedding
                .as_ref()
                .or(obj.proxy_embedding.as_ref())
                .map_or(fd, Vec::len);
            (fd, ed)
        });
        check_object(&obj, fd, ed, &format!("line {lineno}"))?;
        objects.push(obj);
    }

    if objects.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Dataset::new(objects, header.and_then(|h| h.attr_bounds))
}

/// Configuration of the Gaussian-mixture generator.
///
/// Oracle embeddings are cluster-structured points; proxy embeddings are the
/// oracle embedding plus isotropic Gaussian noise of scale
/// `proxy_noise_sigma`. Attribute values are drawn from
/// `N(attr_global_mean, attr_global_sd²)`, shifted by
/// `attr_neighborhood_shift` for members of `designated_cluster`, then clipped
/// into `attr_bounds`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticGenConfig {
    pub n_objects: usize,
    pub embedding_dim: usize,
    pub n_clusters: usize,
    /// Standard deviation of cluster centres around the origin.
    pub center_sd: f64,
    /// Within-cluster standard deviation.
    pub cluster_sd: f64,
    pub proxy_noise_sigma: f64,
    pub attr_global_mean: f64,
    pub attr_global_sd: f64,
    pub attr_neighborhood_shift: f64,
    pub designated_cluster: usize,
    pub attr_bounds: (f64, f64),
    /// When false only `features` (the oracle-space point) is stored and
    /// embeddings must be computed on demand by the models.
    pub materialize_embeddings: bool,
    pub seed: u64,
}

impl Default for SyntheticGenConfig {
    fn default() -> Self {
        SyntheticGenConfig {
            n_objects: 10_000,
            embedding_dim: 16,
            n_clusters: 8,
            center_sd: 2.0,
            cluster_sd: 1.0,
            proxy_noise_sigma: 0.0,
            attr_global_mean: 80.0,
            attr_global_sd: 10.0,
            attr_neighborhood_shift: 0.0,
            designated_cluster: 0,
            attr_bounds: (40.0, 140.0),
            materialize_embeddings: true,
            seed: 0,
        }
    }
}

impl SyntheticGenConfig {
    /// Seed of the per-object proxy noise. A simulated proxy model built with
    /// this seed and `proxy_noise_sigma` reproduces the stored proxy vectors.
    pub fn proxy_noise_seed(&self) -> u64 {
        derive_seed(self.seed, "proxy-noise", 0)
    }

    /// Applies one `key = value` setting. Keys are the field names;
    /// `attr_bounds` takes `a,b`.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(field: &'static str, v: &str) -> Result<T> {
            v.parse().map_err(|_| Error::invalid(field, format!("cannot parse {v:?}")))
        }
        match key {
            "n_objects" => self.n_objects = num("n_objects", value)?,
            "embedding_dim" => self.embedding_dim = num("embedding_dim", value)?,
            "n_clusters" => self.n_clusters = num("n_clusters", value)?,
            "center_sd" => self.center_sd = num("center_sd", value)?,
            "cluster_sd" => self.cluster_sd = num("cluster_sd", value)?,
            "proxy_noise_sigma" => self.proxy_noise_sigma = num("proxy_noise_sigma", value)?,
            "attr_global_mean" => self.attr_global_mean = num("attr_global_mean", value)?,
            "attr_global_sd" => self.attr_global_sd = num("attr_global_sd", value)?,
            "attr_neighborhood_shift" => {
                self.attr_neighborhood_shift = num("attr_neighborhood_shift", value)?
            }
            "designated_cluster" => self.designated_cluster = num("designated_cluster", value)?,
            "materialize_embeddings" => {
                self.materialize_embeddings = num("materialize_embeddings", value)?
            }
            "seed" => self.seed = num("seed", value)?,
            "attr_bounds" => {
                let (a, b) = value
                    .split_once(',')
                    .ok_or_else(|| Error::invalid("attr_bounds", "expected `a,b`"))?;
                self.attr_bounds = (num("attr_bounds", a.trim())?, num("attr_bounds", b.trim())?);
            }
            _ => return Err(Error::invalid("config", format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Parses a flat `key = value` file (`#` starts a comment) on top of the
    /// defaults.
    pub fn from_kv_str(text: &str) -> Result<Self> {
        let mut cfg = SyntheticGenConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: i + 1,
                message: "expected `key = value`".into(),
            })?;
            cfg.set(k.trim(), v.trim())?;
        }
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        if self.n_objects == 0 {
            return Err(Error::invalid("n_objects", "must be positive"));
        }
        if self.embedding_dim == 0 {
            return Err(Error::invalid("embedding_dim", "must be positive"));
        }
        if self.n_clusters == 0 || self.n_clusters > self.n_objects {
            return Err(Error::invalid("n_clusters", "must be in [1, n_objects]"));
        }
        if self.designated_cluster >= self.n_clusters {
            return Err(Error::invalid("designated_cluster", "must be < n_clusters"));
        }
        if !(self.proxy_noise_sigma >= 0.0) || !(self.cluster_sd >= 0.0) || !(self.center_sd >= 0.0) {
            return Err(Error::invalid("sigma", "spreads and noise must be nonnegative"));
        }
        if !(self.attr_global_sd >= 0.0) {
            return Err(Error::invalid("attr_global_sd", "must be nonnegative"));
        }
        let (a, b) = self.attr_bounds;
        if !(a <= b) {
            return Err(Error::invalid("attr_bounds", "need a <= b"));
        }
        Ok(())
    }
}

/// A generated dataset together with its latent structure.
#[derive(Clone, Debug)]
pub struct SyntheticDataset {
    pub dataset: Dataset,
    /// Cluster index of every object.
    pub clusters: Vec<usize>,
    pub centers: Vec<Vec<f64>>,
}

pub fn generate_synthetic(cfg: &SyntheticGenConfig) -> Result<Dataset> {
    generate_synthetic_detailed(cfg).map(|g| g.dataset)
}

pub fn generate_synthetic_detailed(cfg: &SyntheticGenConfig) -> Result<SyntheticDataset> {
    cfg.validate()?;
    let dim = cfg.embedding_dim;

    let mut center_rng = rng_for(cfg.seed, "centers", 0);
    let centers: Vec<Vec<f64>> = (0..cfg.n_clusters)
        .map(|_| {
            (0..dim)
                .map(|_| cfg.center_sd * center_rng.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect();

    let attr_dist = Normal::new(cfg.attr_global_mean, cfg.attr_global_sd)
        .map_err(|e| Error::invalid("attr_global_sd", e.to_string()))?;
    let (a, b) = cfg.attr_bounds;
    let noise_seed = cfg.proxy_noise_seed();
    let mut obj_rng = rng_for(cfg.seed, "objects", 0);

    let mut clusters = Vec::with_capacity(cfg.n_objects);
    let mut objects = Vec::with_capacity(cfg.n_objects);
    for id in 0..cfg.n_objects {
        let c = obj_rng.random_range(0..cfg.n_clusters);
        let point: Vec<f64> = centers[c]
            .iter()
            .map(|&m| m + cfg.cluster_sd * obj_rng.sample::<f64, _>(StandardNormal))
            .collect();
        let mut attr = attr_dist.sample(&mut obj_rng);
        if c == cfg.designated_cluster {
            attr += cfg.attr_neighborhood_shift;
        }
        let attr = attr.clamp(a, b);

        let (oracle_embedding, proxy_embedding) = if cfg.materialize_embeddings {
            let proxy = perturb(&point, cfg.proxy_noise_sigma, noise_seed, id);
            (Some(point.clone()), Some(proxy))
        } else {
            (None, None)
        };
        clusters.push(c);
        objects.push(DataObject {
            id,
            attr,
            features: point,
            oracle_embedding,
            proxy_embedding,
        });
    }

    let dataset = Dataset::new(objects, Some(cfg.attr_bounds))?;
    Ok(SyntheticDataset {
        dataset,
        clusters,
        centers,
    })
}

/// `base + sigma · noise(seed, id)`; returns `base` unchanged when `sigma == 0`.
pub(crate) fn perturb(base: &[f64], sigma: f64, seed: u64, id: usize) -> Vec<f64> {
    if sigma == 0.0 {
        return base.to_vec();
    }
    base.iter()
        .zip(object_noise(seed, id, base.len()))
        .map(|(x, z)| x + sigma * z)
        .collect()
}
