//! On-disk formats: `%.17g` CSV tables, flat little-endian `f64` arrays with
//! a JSON sidecar, and the ansatz stack built on top of them.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ansatz::{AnsatzSettings, AnsatzStack, CutoffChoice, Level};
use crate::diagnostics::MetricSeries;
use crate::error::{Error, Result};
use crate::grid::{SpaceGrid, TimeGrid};
use crate::math::ProblemParams;
use crate::profile::{build_amplitude, CompactSetSpec};

/// Sidecar file name of a field set.
pub const SIDECAR: &str = "fields.json";
/// Tag written into every sidecar.
pub const FIELD_FORMAT: &str = "f64-le";

/// Formats `x` like C's `printf("%.17g", x)`.
pub fn fmt_g17(x: f64) -> String {
    const P: i32 = 17;
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return if x.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    let sci = format!("{:.*e}", (P - 1) as usize, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent marker");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..P).contains(&exp) {
        let mantissa = strip_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mantissa}e{sign}{:02}", exp.abs())
    } else {
        strip_zeros(&format!("{:.*}", (P - 1 - exp) as usize, x)).to_string()
    }
}

fn strip_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hash of a float array in its on-disk byte order.
pub fn hash_f64s(values: &[f64]) -> String {
    let mut h = Sha256::new();
    for v in values {
        h.update(v.to_le_bytes());
    }
    hex::encode(h.finalize())
}

/// Header row of every metric CSV.
pub const SERIES_HEADER: &str = "name,n,region,t,value";

/// One CSV per series: header row, then `name,n,region,t,value` rows.
pub fn series_to_csv(series: &MetricSeries) -> String {
    let mut out = String::with_capacity(64 * (series.len() + 1));
    out.push_str(SERIES_HEADER);
    out.push('\n');
    let n = series.n.map(|n| n.to_string()).unwrap_or_default();
    for &(t, v) in &series.samples {
        let _ = writeln!(out, "{},{},{},{},{}", series.name, n, series.region, fmt_g17(t), fmt_g17(v));
    }
    out
}

pub fn write_series(path: &Path, series: &MetricSeries) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, series_to_csv(series))?;
    Ok(())
}

pub fn parse_series(path: &Path, text: &str) -> Result<MetricSeries> {
    let bad = |reason: String| Error::Artifact {
        path: path.to_path_buf(),
        reason,
    };
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == SERIES_HEADER => {}
        other => return Err(bad(format!("expected header {SERIES_HEADER:?}, found {other:?}"))),
    }
    let mut series: Option<MetricSeries> = None;
    for (row, line) in lines.enumerate() {
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 5 {
            return Err(bad(format!("row {}: expected 5 columns, found {}", row + 1, cols.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|e| bad(format!("row {}: {e}", row + 1)));
        let (t, v) = (num(cols[3])?, num(cols[4])?);
        let s = series.get_or_insert_with(|| {
            MetricSeries::new(cols[0], cols[1].parse().ok(), cols[2])
        });
        s.push(t, v).map_err(|e| bad(e.to_string()))?;
    }
    series.ok_or_else(|| bad("no data rows".into()))
}

pub fn read_series(path: &Path) -> Result<MetricSeries> {
    let text = fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingArtifact {
            what: "series".into(),
            path: path.to_path_buf(),
        },
        _ => Error::Io(e),
    })?;
    parse_series(path, &text)
}

/// Plain CSV table with a header row; floats are `%.17g`.
pub fn write_table(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut out = header.join(",");
    out.push('\n');
    for r in rows {
        out.push_str(&r.join(","));
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Writes pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path, what: &str) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingArtifact {
            what: what.into(),
            path: path.to_path_buf(),
        },
        _ => Error::Io(e),
    })?;
    serde_json::from_str(&text).map_err(|e| Error::Artifact {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

/// Header entry of one flat array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldEntry {
    pub name: String,
    pub file: String,
    /// Row-major shape; the product equals the number of values.
    pub shape: Vec<usize>,
    pub sha256: String,
}

/// Contents of a sidecar: free-form metadata plus the field table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldSetHeader {
    pub format: String,
    pub meta: serde_json::Value,
    pub fields: Vec<FieldEntry>,
}

/// Writer for a directory of flat arrays.
pub struct FieldSetWriter {
    dir: PathBuf,
    fields: Vec<FieldEntry>,
}

impl FieldSetWriter {
    pub fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            fields: Vec::new(),
        })
    }

    pub fn add(&mut self, name: &str, shape: &[usize], values: &[f64]) -> Result<()> {
        if shape.iter().product::<usize>() != values.len() {
            return Err(Error::InvalidParameter(format!(
                "field {name}: shape {shape:?} does not hold {} values",
                values.len()
            )));
        }
        let mut bytes = Vec::with_capacity(8 * values.len());
        for v in values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let file = format!("{name}.f64");
        fs::write(self.dir.join(&file), &bytes)?;
        self.fields.push(FieldEntry {
            name: name.to_string(),
            file,
            shape: shape.to_vec(),
            sha256: sha256_hex(&bytes),
        });
        Ok(())
    }

    /// Writes the sidecar.
    pub fn finish(self, meta: serde_json::Value) -> Result<FieldSetHeader> {
        let header = FieldSetHeader {
            format: FIELD_FORMAT.into(),
            meta,
            fields: self.fields,
        };
        write_json(&self.dir.join(SIDECAR), &header)?;
        Ok(header)
    }
}

/// Reader for a directory written by [`FieldSetWriter`].
pub struct FieldSet {
    dir: PathBuf,
    pub header: FieldSetHeader,
}

impl FieldSet {
    pub fn open(dir: &Path, what: &str) -> Result<Self> {
        let header: FieldSetHeader = read_json(&dir.join(SIDECAR), what)?;
        if header.format != FIELD_FORMAT {
            return Err(Error::Artifact {
                path: dir.join(SIDECAR),
                reason: format!("unsupported format {:?}", header.format),
            });
        }
        Ok(Self {
            dir: dir.to_path_buf(),
            header,
        })
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.header.fields.iter().map(|f| f.name.as_str())
    }

    /// Reads one field and checks its length and hash against the sidecar.
    pub fn read(&self, name: &str) -> Result<(Vec<usize>, Vec<f64>)> {
        let entry = self
            .header
            .fields
            .iter()
            .find(|f| f.name == name)
            .ok_or_else(|| Error::Artifact {
                path: self.dir.join(SIDECAR),
                reason: format!("no field named {name}"),
            })?;
        let path = self.dir.join(&entry.file);
        let bytes = fs::read(&path)?;
        let bad = |reason: String| Error::Artifact {
            path: path.clone(),
            reason,
        };
        let len: usize = entry.shape.iter().product();
        if bytes.len() != 8 * len {
            return Err(bad(format!("expected {} bytes, found {}", 8 * len, bytes.len())));
        }
        if sha256_hex(&bytes) != entry.sha256 {
            return Err(bad("hash mismatch".into()));
        }
        let values = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        Ok((entry.shape.clone(), values))
    }
}

/// Stack metadata stored in the sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StackMeta {
    pub params: ProblemParams,
    pub compact_set: CompactSetSpec,
    pub settings: AnsatzSettings,
    pub coefficient: f64,
    pub space_nodes: usize,
    pub time_nodes: Vec<f64>,
    pub levels: Vec<LevelMeta>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelMeta {
    pub cutoff: CutoffChoice,
    pub prev_top: usize,
    pub one_sided_nonzero: usize,
}

/// Exports the stack as `u0`, `e0` and per-level `chi`, `i_minus`,
/// `i_plus`, `residual` arrays.
pub fn save_stack(dir: &Path, stack: &AnsatzStack) -> Result<FieldSetHeader> {
    let (nx, nt) = (stack.nx(), stack.nt());
    let mut w = FieldSetWriter::create(dir)?;
    w.add("u0", &[nx, nt], &stack.u0)?;
    w.add("e0", &[nx, nt], &stack.e0)?;
    for (l, lv) in stack.levels.iter().enumerate() {
        let j = l + 1;
        w.add(&format!("level{j}_chi"), &[nx], &lv.chi)?;
        w.add(&format!("level{j}_i_minus"), &[nx, nt], &lv.i_minus)?;
        w.add(&format!("level{j}_i_plus"), &[nx, nt], &lv.i_plus)?;
        w.add(&format!("level{j}_residual"), &[nx, nt], &lv.residual)?;
    }
    let meta = StackMeta {
        params: stack.params.clone(),
        compact_set: stack.profile.spec().clone(),
        settings: stack.settings.clone(),
        coefficient: stack.coefficient,
        space_nodes: nx,
        time_nodes: stack.time.nodes.clone(),
        levels: stack
            .levels
            .iter()
            .map(|lv| LevelMeta {
                cutoff: lv.cutoff.clone(),
                prev_top: lv.prev_top,
                one_sided_nonzero: lv.one_sided_nonzero,
            })
            .collect(),
    };
    w.finish(serde_json::to_value(meta)?)
}

/// Rebuilds a stack from [`save_stack`] output. The profile and grids are
/// reconstructed from the metadata and checked against the stored shapes.
pub fn load_stack(dir: &Path) -> Result<AnsatzStack> {
    let set = FieldSet::open(dir, "stack")?;
    let meta: StackMeta = serde_json::from_value(set.header.meta.clone())?;
    let bad = |reason: String| Error::Artifact {
        path: dir.join(SIDECAR),
        reason,
    };
    let params = meta.params;
    let profile = build_amplitude(&meta.compact_set, params.k, params.n_dim)?;
    let space = SpaceGrid::new(params.dim_mode, params.n_dim, meta.settings.half_width, meta.settings.dx)?;
    let time = TimeGrid::new(meta.settings.t_min, meta.settings.per_octave)?;
    if space.len() != meta.space_nodes || time.nodes != meta.time_nodes {
        return Err(bad("grid metadata does not match the rebuilt grids".into()));
    }
    let (nx, nt) = (space.len(), time.len());
    let field = |name: &str, shape: &[usize]| -> Result<Vec<f64>> {
        let (s, v) = set.read(name)?;
        if s != shape {
            return Err(bad(format!("field {name} has shape {s:?}, expected {shape:?}")));
        }
        Ok(v)
    };
    let u0 = field("u0", &[nx, nt])?;
    let e0 = field("e0", &[nx, nt])?;
    let mut levels = Vec::with_capacity(meta.levels.len());
    for (l, lm) in meta.levels.into_iter().enumerate() {
        let j = l + 1;
        levels.push(Level {
            cutoff: lm.cutoff,
            chi: field(&format!("level{j}_chi"), &[nx])?,
            prev_top: lm.prev_top,
            i_minus: field(&format!("level{j}_i_minus"), &[nx, nt])?,
            i_plus: field(&format!("level{j}_i_plus"), &[nx, nt])?,
            residual: field(&format!("level{j}_residual"), &[nx, nt])?,
            one_sided_nonzero: lm.one_sided_nonzero,
        });
    }
    let amp = space.nodes.iter().map(|&x| profile.eval(x)).collect();
    Ok(AnsatzStack {
        params,
        profile,
        settings: meta.settings,
        space,
        time,
        amp,
        u0,
        e0,
        coefficient: meta.coefficient,
        levels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn g17_matches_printf() {
        // reference strings produced by C printf("%.17g")
        let cases = [
            (0.1, "0.10000000000000001"),
            (1e-5, "1.0000000000000001e-05"),
            (100.0, "100"),
            (1.0 / 3.0, "0.33333333333333331"),
            (1.2345678901234568e17, "1.2345678901234568e+17"),
            (-2.5e-300, "-2.5e-300"),
            (1e17, "1e+17"),
            (1e16, "10000000000000000"),
            (1e-4, "0.0001"),
            (1.234e-5, "1.234e-05"),
            (5e-324, "4.9406564584124654e-324"),
            (f64::MAX, "1.7976931348623157e+308"),
            (std::f64::consts::SQRT_2, "1.4142135623730951"),
            (0.0, "0"),
        ];
        for (x, s) in cases {
            assert_eq!(fmt_g17(x), s, "{x:e}");
        }
    }

    proptest! {
        #[test]
        fn g17_round_trips(bits in any::<u64>()) {
            let x = f64::from_bits(bits);
            prop_assume!(x.is_finite());
            prop_assert_eq!(fmt_g17(x).parse::<f64>().unwrap().to_bits(), x.to_bits());
        }
    }

    #[test]
    fn series_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = MetricSeries::new("h1_norm", Some(16), "all");
        for i in 0..10 {
            s.push(0.0625 + 0.01 * i as f64, (i as f64).sqrt() / 7.0).unwrap();
        }
        let path = dir.path().join("h1.csv");
        write_series(&path, &s).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("name,n,region,t,value\nh1_norm,16,all,0.0625,0\n"));
        assert_eq!(read_series(&path).unwrap(), s);
    }

    #[test]
    fn missing_series_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            read_series(&dir.path().join("nope.csv")),
            Err(Error::MissingArtifact { .. })
        ));
    }

    #[test]
    fn field_set_round_trip_and_tamper_detection() {
        let dir = tempfile::tempdir().unwrap();
        let mut w = FieldSetWriter::create(dir.path()).unwrap();
        let a: Vec<f64> = (0..12).map(|i| i as f64 * 0.1 - 0.5).collect();
        w.add("a", &[3, 4], &a).unwrap();
        assert!(w.add("bad", &[5], &a).is_err());
        w.finish(serde_json::json!({"t": 0.5})).unwrap();
        let bytes = fs::read(dir.path().join("a.f64")).unwrap();
        assert_eq!(bytes.len(), 96);
        assert_eq!(&bytes[8..16], &a[1].to_le_bytes());
        let set = FieldSet::open(dir.path(), "test").unwrap();
        assert_eq!(set.read("a").unwrap(), (vec![3, 4], a));
        let mut tampered = bytes;
        tampered[0] ^= 1;
        fs::write(dir.path().join("a.f64"), tampered).unwrap();
        assert!(matches!(set.read("a"), Err(Error::Artifact { .. })));
    }
}
