//! Directory container for named float arrays, and the dataset and model
//! layouts built on it.
//!
//! A container is a directory holding `manifest.txt` plus one payload file
//! `<name>.f64` per array with raw little-endian binary64 values in row-major
//! order. The manifest is line oriented:
//!
//! ```text
//! format rrff-arrays 1
//! meta <key> <value...>
//! array <name> <rank> <dim_1> ... <dim_rank> f64le
//! ```
//!
//! Keys and names contain no whitespace; a value runs to the end of its line.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Duration;

use faer::{c64, Mat};

use crate::error::{Error, Result};
use crate::features::{FeatureModel, FeatureWeights};
use crate::fem::Mesh;
use crate::pde_data::{Dataset, Grid};
use crate::pipeline::{GridSplit, TrainConfig, TrainedOperator};
use crate::sampling::{Dof, RngState, StudentTParams};
use crate::solver::{FitOptions, RegularizationSpec, SolveReport};

pub const MANIFEST_FILE: &str = "manifest.txt";
pub const FORMAT_NAME: &str = "rrff-arrays";
pub const FORMAT_VERSION: u32 = 1;
pub const ENCODING: &str = "f64le";

/// Shape and encoding of one stored array.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ArrayDescriptor {
    pub name: String,
    pub dims: Vec<usize>,
    pub encoding: String,
}

impl ArrayDescriptor {
    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Parsed `manifest.txt`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Manifest {
    pub version: u32,
    pub metadata: BTreeMap<String, String>,
    pub arrays: Vec<ArrayDescriptor>,
}

/// A dense array with its shape.
#[derive(Clone, Debug, PartialEq)]
pub struct Array {
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

impl Array {
    pub fn from_mat(m: &Mat<f64>) -> Self {
        let (r, c) = (m.nrows(), m.ncols());
        Self { dims: vec![r, c], data: (0..r).flat_map(|i| (0..c).map(move |j| (i, j))).map(|(i, j)| m[(i, j)]).collect() }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self { dims: vec![data.len()], data }
    }

    /// The array as a matrix; rank 1 arrays become a single column.
    pub fn to_mat(&self) -> Result<Mat<f64>> {
        let (r, c) = match self.dims.as_slice() {
            [r] => (*r, 1),
            [r, c] => (*r, *c),
            d => return Err(Error::Format(format!("expected a rank 1 or 2 array, found shape {d:?}"))),
        };
        Ok(Mat::from_fn(r, c, |i, j| self.data[i * c + j]))
    }
}

/// All arrays and metadata of a container.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ArrayBundle {
    pub metadata: BTreeMap<String, String>,
    pub arrays: BTreeMap<String, Array>,
}

impl ArrayBundle {
    pub fn get(&self, name: &str) -> Result<&Array> {
        self.arrays.get(name).ok_or_else(|| Error::Format(format!("missing array {name:?}")))
    }

    pub fn meta(&self, key: &str) -> Result<&str> {
        self.metadata.get(key).map(String::as_str).ok_or_else(|| Error::Format(format!("missing metadata {key:?}")))
    }

    fn meta_parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let v = self.meta(key)?;
        v.parse().map_err(|_| Error::Format(format!("metadata {key:?} has unparsable value {v:?}")))
    }
}

fn check_token(kind: &str, s: &str) -> Result<()> {
    if s.is_empty() || s.chars().any(|c| c.is_whitespace()) {
        return Err(Error::Format(format!("{kind} {s:?} must be a nonempty token without whitespace")));
    }
    Ok(())
}

fn check_name(name: &str) -> Result<()> {
    check_token("array name", name)?;
    if !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
        return Err(Error::Format(format!("array name {name:?} may only use ASCII letters, digits, '_' and '-'")));
    }
    Ok(())
}

/// Manifest text for a bundle.
pub fn manifest_text(bundle: &ArrayBundle) -> Result<String> {
    let mut s = format!("format {FORMAT_NAME} {FORMAT_VERSION}\n");
    for (k, v) in &bundle.metadata {
        check_token("metadata key", k)?;
        if v.contains('\n') || v.contains('\r') {
            return Err(Error::Format(format!("metadata value of {k:?} spans lines")));
        }
        s += &format!("meta {k} {v}\n");
    }
    for (name, a) in &bundle.arrays {
        check_name(name)?;
        if a.data.len() != a.dims.iter().product::<usize>() {
            return Err(Error::Format(format!("array {name:?} has {} values for shape {:?}", a.data.len(), a.dims)));
        }
        let dims: Vec<String> = a.dims.iter().map(usize::to_string).collect();
        s += &format!("array {name} {} {} {ENCODING}\n", a.dims.len(), dims.join(" "));
    }
    Ok(s)
}

/// Parses manifest text.
pub fn parse_manifest(text: &str) -> Result<Manifest> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| Error::Format("empty manifest".into()))?;
    let version = match header.split_whitespace().collect::<Vec<_>>().as_slice() {
        ["format", name, v] if *name == FORMAT_NAME => v.parse::<u32>().map_err(|_| Error::Format(format!("bad version {v:?}")))?,
        _ => return Err(Error::Format(format!("not an {FORMAT_NAME} manifest: {header:?}"))),
    };
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported format version {version}")));
    }
    let mut metadata = BTreeMap::new();
    let mut arrays = Vec::new();
    for (no, line) in lines {
        let bad = |msg: &str| Error::Format(format!("manifest line {}: {msg}", no + 1));
        let line = line.trim_end();
        if let Some(rest) = line.strip_prefix("meta ") {
            let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
            metadata.insert(k.to_string(), v.to_string());
        } else if let Some(rest) = line.strip_prefix("array ") {
            let f: Vec<&str> = rest.split_whitespace().collect();
            let (name, rank) = match f.as_slice() {
                [name, rank, ..] => (*name, rank.parse::<usize>().map_err(|_| bad("bad rank"))?),
                _ => return Err(bad("truncated array descriptor")),
            };
            check_name(name)?;
            if f.len() != rank + 3 {
                return Err(bad(&format!("expected {rank} dimensions and an encoding")));
            }
            let dims = f[2..2 + rank].iter().map(|d| d.parse::<usize>().map_err(|_| bad("bad dimension"))).collect::<Result<Vec<_>>>()?;
            let encoding = f[2 + rank].to_string();
            if encoding != ENCODING {
                return Err(bad(&format!("unsupported encoding {encoding:?}")));
            }
            if arrays.iter().any(|a: &ArrayDescriptor| a.name == name) {
                return Err(bad(&format!("array {name:?} declared twice")));
            }
            arrays.push(ArrayDescriptor { name: name.to_string(), dims, encoding });
        } else {
            return Err(bad(&format!("unrecognized entry {line:?}")));
        }
    }
    Ok(Manifest { version, metadata, arrays })
}

/// Writes a bundle into `dir`, creating it if needed.
pub fn write_bundle(dir: &Path, bundle: &ArrayBundle) -> Result<()> {
    let manifest = manifest_text(bundle)?;
    fs::create_dir_all(dir)?;
    for (name, a) in &bundle.arrays {
        let bytes: Vec<u8> = a.data.iter().flat_map(|x| x.to_le_bytes()).collect();
        fs::write(dir.join(format!("{name}.f64")), bytes)?;
    }
    fs::write(dir.join(MANIFEST_FILE), manifest)?;
    Ok(())
}

/// Reads a bundle from `dir`.
pub fn read_bundle(dir: &Path) -> Result<ArrayBundle> {
    let manifest = parse_manifest(&fs::read_to_string(dir.join(MANIFEST_FILE))?)?;
    let mut arrays = BTreeMap::new();
    for d in &manifest.arrays {
        let bytes = fs::read(dir.join(format!("{}.f64", d.name)))?;
        if bytes.len() != 8 * d.len() {
            return Err(Error::Format(format!("payload of {:?} has {} bytes, expected {}", d.name, bytes.len(), 8 * d.len())));
        }
        let data = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))).collect();
        arrays.insert(d.name.clone(), Array { dims: d.dims.clone(), data });
    }
    Ok(ArrayBundle { metadata: manifest.metadata, arrays })
}

fn grid_array(g: &Grid) -> Array {
    Array { dims: vec![g.len(), g.dim()], data: g.coords().to_vec() }
}

fn grid_from(a: &Array) -> Result<Grid> {
    match a.dims.as_slice() {
        [_, dim] => Grid::new(*dim, a.data.clone()),
        [_] => Grid::new(1, a.data.clone()),
        d => Err(Error::Format(format!("grid array has shape {d:?}"))),
    }
}

fn index_array(idx: &[usize]) -> Array {
    Array::vector(idx.iter().map(|&i| i as f64).collect())
}

fn indices_from(a: &Array) -> Result<Vec<usize>> {
    a.data
        .iter()
        .map(|&x| if x >= 0.0 && x.fract() == 0.0 && x < 2f64.powi(52) { Ok(x as usize) } else { Err(Error::Format(format!("bad index {x}"))) })
        .collect()
}

/// Dataset as arrays `inputs`, `outputs`, `input_grid`, `output_grid` with its metadata.
pub fn dataset_bundle(ds: &Dataset) -> ArrayBundle {
    let arrays = BTreeMap::from([
        ("inputs".to_string(), Array::from_mat(&ds.inputs)),
        ("outputs".to_string(), Array::from_mat(&ds.outputs)),
        ("input_grid".to_string(), grid_array(&ds.input_grid)),
        ("output_grid".to_string(), grid_array(&ds.output_grid)),
    ]);
    ArrayBundle { metadata: ds.metadata.clone(), arrays }
}

pub fn dataset_from_bundle(b: &ArrayBundle) -> Result<Dataset> {
    Dataset::new(
        b.get("inputs")?.to_mat()?,
        b.get("outputs")?.to_mat()?,
        grid_from(b.get("input_grid")?)?,
        grid_from(b.get("output_grid")?)?,
        b.metadata.clone(),
    )
}

pub fn write_dataset(dir: &Path, ds: &Dataset) -> Result<()> {
    write_bundle(dir, &dataset_bundle(ds))
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    dataset_from_bundle(&read_bundle(dir)?)
}

/// Model as weights, split coefficients, grids, split indices and a config snapshot.
pub fn model_bundle(op: &TrainedOperator, extra: &BTreeMap<String, String>) -> ArrayBundle {
    let c = &op.model.coefficients;
    let part = |f: fn(&c64) -> f64| Array::from_mat(&Mat::from_fn(c.nrows(), c.ncols(), |i, j| f(&c[(i, j)])));
    let arrays = BTreeMap::from([
        ("omega".to_string(), Array::from_mat(&op.model.weights.omega)),
        ("coefficients_re".to_string(), part(|z| z.re)),
        ("coefficients_im".to_string(), part(|z| z.im)),
        ("input_grid".to_string(), grid_array(&op.input_grid)),
        ("output_grid".to_string(), grid_array(&op.output_grid)),
        ("split_train".to_string(), index_array(&op.split.train)),
        ("split_validation".to_string(), index_array(&op.split.validation)),
    ]);
    let cfg = &op.config;
    let mut metadata = extra.clone();
    for (k, v) in [
        ("kind", "model".to_string()),
        ("features", cfg.features.to_string()),
        ("nu", cfg.distribution.nu.to_string()),
        ("sigma", format!("{:?}", cfg.distribution.sigma)),
        ("alpha", format!("{:?}", cfg.reg.alpha)),
        ("p", format!("{:?}", cfg.reg.p)),
        ("scaling", cfg.reg.scaling.to_string()),
        ("field", cfg.options.field.to_string()),
        ("strategy", cfg.options.strategy.to_string()),
        ("split_seed", op.split.seed.to_string()),
        ("route", op.report.route.to_string()),
        ("jitter", format!("{:?}", op.report.jitter)),
        ("jitter_retries", op.report.jitter_retries.to_string()),
        ("train_seconds", format!("{:?}", op.train_time.as_secs_f64())),
    ] {
        metadata.insert(k.to_string(), v);
    }
    if let Some(src) = op.model.weights.source {
        metadata.insert("weights_seed".into(), src.seed.to_string());
        metadata.insert("weights_stream".into(), src.stream.to_string());
    }
    ArrayBundle { metadata, arrays }
}

pub fn model_from_bundle(b: &ArrayBundle) -> Result<TrainedOperator> {
    if b.meta("kind")? != "model" {
        return Err(Error::Format("container does not hold a model".into()));
    }
    let distribution = StudentTParams::new(Dof::parse(b.meta("nu")?)?, b.meta_parse("sigma")?)?;
    let reg = RegularizationSpec { alpha: b.meta_parse("alpha")?, p: b.meta_parse("p")?, scaling: b.meta_parse("scaling")? };
    reg.validate()?;
    let options = FitOptions { field: b.meta_parse("field")?, strategy: b.meta_parse("strategy")? };
    let config = TrainConfig { features: b.meta_parse("features")?, distribution, reg, options };
    let mut weights = FeatureWeights::from_omega(b.get("omega")?.to_mat()?, distribution)?;
    if b.metadata.contains_key("weights_seed") {
        weights.source = Some(RngState::new(b.meta_parse("weights_seed")?, b.meta_parse("weights_stream")?));
    }
    let (re, im) = (b.get("coefficients_re")?.to_mat()?, b.get("coefficients_im")?.to_mat()?);
    if (re.nrows(), re.ncols()) != (im.nrows(), im.ncols()) {
        return Err(Error::Format("coefficient parts differ in shape".into()));
    }
    let coefficients = Mat::from_fn(re.nrows(), re.ncols(), |i, j| c64::new(re[(i, j)], im[(i, j)]));
    let model = FeatureModel::new(weights, coefficients, reg, options.field)?;
    let split = GridSplit {
        train: indices_from(b.get("split_train")?)?,
        validation: indices_from(b.get("split_validation")?)?,
        seed: b.meta_parse("split_seed")?,
    };
    let input_grid = grid_from(b.get("input_grid")?)?;
    let output_grid = grid_from(b.get("output_grid")?)?;
    if split.len() != output_grid.len() || split.train.len() != model.output_dim() || split.train.iter().chain(&split.validation).any(|&i| i >= output_grid.len()) {
        return Err(Error::Format("split does not match the output grid and coefficients".into()));
    }
    if input_grid.len() != model.input_dim() {
        return Err(Error::Format("input grid does not match the feature weights".into()));
    }
    let mesh = Mesh::from_grid(&output_grid.subset(&split.train))?;
    let report = SolveReport {
        residual_norms: Vec::new(),
        jitter: b.meta_parse("jitter")?,
        jitter_retries: b.meta_parse("jitter_retries")?,
        factorizations: 1,
        route: b.meta_parse("route")?,
        wall_time: Duration::ZERO,
    };
    let train_time = Duration::from_secs_f64(b.meta_parse::<f64>("train_seconds")?.max(0.0));
    Ok(TrainedOperator { model, mesh, input_grid, output_grid, split, config, report, train_time })
}

pub fn write_model(dir: &Path, op: &TrainedOperator, extra: &BTreeMap<String, String>) -> Result<()> {
    write_bundle(dir, &model_bundle(op, extra))
}

pub fn read_model(dir: &Path) -> Result<TrainedOperator> {
    model_from_bundle(&read_bundle(dir)?)
}
