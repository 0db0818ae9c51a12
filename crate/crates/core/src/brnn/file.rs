use std::fmt::Write as _;

use super::ModelParams;
use crate::csv_io::fmt_num;
use crate::error::{parse_err, Result};

const MAGIC: &str = "brnn-model";
const VERSION: u32 = 1;

/// A trained model with its input standardization and provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub params: ModelParams,
    pub features: Vec<String>,
    pub input_mean: Vec<f64>,
    pub input_scale: Vec<f64>,
    /// Free-form `key=value` lines (target, seed, training config, ...).
    pub meta: Vec<String>,
}

impl ModelFile {
    /// Applies the stored standardization to raw feature rows.
    pub fn standardize(&self, rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
        rows.iter()
            .map(|r| {
                r.iter().zip(self.input_mean.iter().zip(&self.input_scale)).map(|(x, (m, s))| (x - m) / s).collect()
            })
            .collect()
    }
}

pub fn write_model(m: &ModelFile) -> String {
    let layout = m.params.layout();
    let mut s = String::new();
    writeln!(s, "{MAGIC} {VERSION}").unwrap();
    writeln!(s, "input_dim {}", layout.input_dim).unwrap();
    writeln!(s, "hidden {}", layout.hidden).unwrap();
    writeln!(s, "features {}", m.features.join(",")).unwrap();
    for line in &m.meta {
        writeln!(s, "meta {line}").unwrap();
    }
    let vals = m.params.flatten();
    let mut put = |name: &str, rows: usize, cols: usize, v: &[f64]| {
        let nums: Vec<String> = v.iter().map(|x| fmt_num(*x)).collect();
        writeln!(s, "tensor {name} {rows} {cols} {}", nums.join(" ")).unwrap();
    };
    put("input.mean", 1, m.input_mean.len(), &m.input_mean);
    put("input.scale", 1, m.input_scale.len(), &m.input_scale);
    for (name, off, r, c) in layout.tensors() {
        put(&name, r, c, &vals[off..off + r * c]);
    }
    s
}

fn header_value<'a>(line: Option<(usize, &'a str)>, key: &str) -> Result<(usize, &'a str)> {
    let (n, l) = line.ok_or_else(|| parse_err(0, format!("missing `{key}` line")))?;
    let rest = l
        .strip_prefix(key)
        .and_then(|r| r.strip_prefix(' ').or(if r.is_empty() { Some("") } else { None }))
        .ok_or_else(|| parse_err(n + 1, format!("expected `{key}`")))?;
    Ok((n + 1, rest))
}

pub fn read_model(text: &str) -> Result<ModelFile> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (n, v) = header_value(lines.next(), MAGIC)?;
    if v.trim() != VERSION.to_string() {
        return Err(parse_err(n, format!("unsupported model version `{}`", v.trim())));
    }
    let (n, v) = header_value(lines.next(), "input_dim")?;
    let input_dim: usize = v.trim().parse().map_err(|_| parse_err(n, "bad input_dim"))?;
    let (n, v) = header_value(lines.next(), "hidden")?;
    let hidden: usize = v.trim().parse().map_err(|_| parse_err(n, "bad hidden"))?;
    let (_, v) = header_value(lines.next(), "features")?;
    let features: Vec<String> =
        if v.trim().is_empty() { Vec::new() } else { v.trim().split(',').map(str::to_string).collect() };
    if features.len() != input_dim {
        return Err(parse_err(4, format!("{} feature names for input_dim {input_dim}", features.len())));
    }

    let mut meta = Vec::new();
    let mut params = ModelParams::zeros(input_dim, hidden);
    let tensors = params.layout().tensors();
    let mut seen = vec![false; tensors.len()];
    let mut input_mean = None;
    let mut input_scale = None;
    for (i, line) in lines {
        let n = i + 1;
        if let Some(m) = line.strip_prefix("meta ") {
            meta.push(m.to_string());
            continue;
        }
        let mut it = line.split_whitespace();
        if it.next() != Some("tensor") {
            return Err(parse_err(n, "expected `meta` or `tensor` line"));
        }
        let name = it.next().ok_or_else(|| parse_err(n, "missing tensor name"))?;
        let mut dim = || -> Result<usize> {
            it.next().and_then(|x| x.parse().ok()).ok_or_else(|| parse_err(n, "bad tensor shape"))
        };
        let (rows, cols) = (dim()?, dim()?);
        let values: Vec<f64> = it
            .map(|x| x.parse::<f64>().map_err(|_| parse_err(n, format!("bad number `{x}`"))))
            .collect::<Result<_>>()?;
        if values.len() != rows * cols {
            return Err(parse_err(
                n,
                format!("tensor {name}: {rows}x{cols} needs {} values, got {}", rows * cols, values.len()),
            ));
        }
        match name {
            "input.mean" | "input.scale" => {
                if values.len() != input_dim {
                    return Err(parse_err(n, format!("{name} must have {input_dim} values")));
                }
                if name == "input.mean" {
                    input_mean = Some(values);
                } else {
                    input_scale = Some(values);
                }
            }
            _ => {
                let k = tensors
                    .iter()
                    .position(|t| t.0 == name)
                    .ok_or_else(|| parse_err(n, format!("unknown tensor `{name}`")))?;
                let (_, off, r, c) = &tensors[k];
                if (rows, cols) != (*r, *c) {
                    return Err(parse_err(n, format!("tensor {name}: expected {r}x{c}, got {rows}x{cols}")));
                }
                params.flatten_mut()[*off..off + r * c].copy_from_slice(&values);
                seen[k] = true;
            }
        }
    }
    if let Some(k) = seen.iter().position(|s| !s) {
        return Err(parse_err(0, format!("missing tensor `{}`", tensors[k].0)));
    }
    let input_mean = input_mean.ok_or_else(|| parse_err(0, "missing tensor `input.mean`"))?;
    let input_scale = input_scale.ok_or_else(|| parse_err(0, "missing tensor `input.scale`"))?;
    Ok(ModelFile { params, features, input_mean, input_scale, meta })
}
