//! Weights as little-endian `f32` values in `weights.bin` with a text
//! manifest of `name shape offset` lines (offset counted in values).

use std::fs;
use std::path::Path;

use super::net::{ParamSet, Weights};
use super::spec::{NetworkSpec, Op};
use crate::error::{Error, Result};

pub const WEIGHTS_FILE: &str = "weights.bin";
pub const MANIFEST_FILE: &str = "manifest.txt";

fn entries(spec: &NetworkSpec) -> Vec<(String, Vec<usize>)> {
    let mut out = Vec::new();
    for n in &spec.nodes {
        match n.op {
            Op::Conv { k, c_in, c_out } => {
                out.push((format!("{}/kernel", n.name), vec![k, k, c_in, c_out]));
                out.push((format!("{}/bias", n.name), vec![c_out]));
            }
            Op::BatchNorm { c } => {
                for p in ["gamma", "beta", "moving_mean", "moving_variance"] {
                    out.push((format!("{}/{p}", n.name), vec![c]));
                }
            }
            _ => {}
        }
    }
    out
}

fn tensors(w: &Weights) -> Vec<&Vec<f64>> {
    w.layers
        .iter()
        .flat_map(|p| match p {
            ParamSet::None => vec![],
            ParamSet::Conv { kernel, bias } => vec![kernel, bias],
            ParamSet::Bn { gamma, beta, running_mean, running_var } => vec![gamma, beta, running_mean, running_var],
        })
        .collect()
}

pub fn write_weights(dir: impl AsRef<Path>, spec: &NetworkSpec, w: &Weights) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (names, ts) = (entries(spec), tensors(w));
    if names.len() != ts.len() {
        return Err(Error::shape("weights do not match the network"));
    }
    let mut bytes = Vec::new();
    let mut manifest = String::new();
    let mut offset = 0;
    for ((name, shape), t) in names.iter().zip(ts) {
        let dims: Vec<String> = shape.iter().map(|d| d.to_string()).collect();
        manifest.push_str(&format!("{name} {} {offset}\n", dims.join("x")));
        for v in t {
            bytes.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        offset += t.len();
    }
    let wp = dir.join(WEIGHTS_FILE);
    fs::write(&wp, bytes).map_err(|e| Error::io(&wp, e))?;
    let mp = dir.join(MANIFEST_FILE);
    fs::write(&mp, manifest).map_err(|e| Error::io(&mp, e))
}

pub fn read_weights(dir: impl AsRef<Path>, spec: &NetworkSpec) -> Result<Weights> {
    let dir = dir.as_ref();
    let wp = dir.join(WEIGHTS_FILE);
    let mp = dir.join(MANIFEST_FILE);
    let bytes = fs::read(&wp).map_err(|e| Error::io(&wp, e))?;
    let manifest = fs::read_to_string(&mp).map_err(|e| Error::io(&mp, e))?;
    let parse_err = |m: String| Error::Parse { path: mp.clone(), message: m };
    if bytes.len() % 4 != 0 {
        return Err(Error::Parse { path: wp.clone(), message: "length is not a multiple of 4".into() });
    }
    let values: Vec<f64> = bytes.chunks_exact(4).map(|b| f64::from(f32::from_le_bytes([b[0], b[1], b[2], b[3]]))).collect();
    let expected = entries(spec);
    let lines: Vec<&str> = manifest.lines().filter(|l| !l.trim().is_empty()).collect();
    if lines.len() != expected.len() {
        return Err(parse_err(format!("{} entries, network needs {}", lines.len(), expected.len())));
    }
    let mut flat = Vec::new();
    for (line, (name, shape)) in lines.iter().zip(&expected) {
        let parts: Vec<&str> = line.split_whitespace().collect();
        let dims: Vec<usize> = parts.get(1).map(|s| s.split('x').filter_map(|d| d.parse().ok()).collect()).unwrap_or_default();
        if parts.len() != 3 || parts[0] != name || &dims != shape {
            return Err(parse_err(format!("expected `{name}` with shape {shape:?}, found `{line}`")));
        }
        let off: usize = parts[2].parse().map_err(|_| parse_err(format!("bad offset in `{line}`")))?;
        let len: usize = shape.iter().product();
        let slice = values.get(off..off + len).ok_or_else(|| parse_err(format!("`{name}` runs past the end of the weights")))?;
        flat.push(slice.to_vec());
    }
    let mut it = flat.into_iter();
    let layers = spec
        .nodes
        .iter()
        .map(|n| match n.op {
            Op::Conv { .. } => ParamSet::Conv { kernel: it.next().unwrap(), bias: it.next().unwrap() },
            Op::BatchNorm { .. } => ParamSet::Bn {
                gamma: it.next().unwrap(),
                beta: it.next().unwrap(),
                running_mean: it.next().unwrap(),
                running_var: it.next().unwrap(),
            },
            _ => ParamSet::None,
        })
        .collect();
    Ok(Weights { layers })
}
