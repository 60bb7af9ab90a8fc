//! Binary result and matrix files: a text manifest terminated by a line
//! `end`, followed by little-endian arrays at the offsets the manifest
//! lists.

use std::collections::BTreeMap;
use std::io::{self, Read, Write};

use thiserror::Error;

use crate::abstraction::{TransitionMatrix, WindowLayout};
use crate::grid::{HyperRect, UniformGrid};
use crate::synthesis::{Spec, SpecKind, SynthesisMode, SynthesisResult};

const RESULT_MAGIC: &str = "stochsynth-result";
const MATRIX_MAGIC: &str = "stochsynth-matrix";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ContainerError {
    #[error("not a {expected} file (first line `{found}`)")]
    Magic { expected: &'static str, found: String },
    #[error("unsupported container version {0}")]
    Version(String),
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("payload truncated: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("{0} trailing bytes after payload")]
    Trailing(usize),
    #[error(transparent)]
    Io(#[from] io::Error),
}

struct Manifest {
    fields: BTreeMap<String, String>,
}

fn fmt_vec(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(" ")
}

fn write_grid(out: &mut String, name: &str, g: &UniformGrid) {
    out.push_str(&format!("{name}.lb {}\n", fmt_vec(g.lb())));
    out.push_str(&format!("{name}.ub {}\n", fmt_vec(g.ub())));
    out.push_str(&format!("{name}.eta {}\n", fmt_vec(g.eta())));
}

impl Manifest {
    fn get(&self, key: &str) -> Result<&str, ContainerError> {
        self.fields
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| ContainerError::Manifest(format!("missing `{key}`")))
    }

    fn usize(&self, key: &str) -> Result<usize, ContainerError> {
        self.get(key)?
            .parse()
            .map_err(|_| ContainerError::Manifest(format!("`{key}` is not an integer")))
    }

    fn floats(&self, key: &str) -> Result<Vec<f64>, ContainerError> {
        self.get(key)?
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| ContainerError::Manifest(format!("`{key}` has a bad number `{t}`"))))
            .collect()
    }

    fn usizes(&self, key: &str) -> Result<Vec<usize>, ContainerError> {
        self.get(key)?
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| ContainerError::Manifest(format!("`{key}` has a bad integer `{t}`"))))
            .collect()
    }

    fn grid(&self, name: &str) -> Result<UniformGrid, ContainerError> {
        UniformGrid::new(
            self.floats(&format!("{name}.lb"))?,
            self.floats(&format!("{name}.ub"))?,
            self.floats(&format!("{name}.eta"))?,
        )
        .map_err(|e| ContainerError::Manifest(format!("{name} grid: {e}")))
    }

    fn rect(&self, name: &str) -> Result<Option<HyperRect>, ContainerError> {
        if !self.fields.contains_key(&format!("{name}.lb")) {
            return Ok(None);
        }
        Ok(Some(HyperRect::new(
            self.floats(&format!("{name}.lb"))?,
            self.floats(&format!("{name}.ub"))?,
        )))
    }

    /// `(offset, count)` of a payload array, checked against its element size.
    fn array(&self, key: &str, elem: usize) -> Result<(usize, usize), ContainerError> {
        let parts = self.usizes(key)?;
        let [offset, count] = parts[..] else {
            return Err(ContainerError::Manifest(format!("`{key}` needs an offset and a count")));
        };
        count
            .checked_mul(elem)
            .and_then(|b| b.checked_add(offset))
            .ok_or_else(|| ContainerError::Manifest(format!("`{key}` overflows")))?;
        Ok((offset, count))
    }
}

/// Reads the manifest up to `end`, checking magic and version.
fn read_manifest<R: Read>(r: &mut R, magic: &'static str) -> Result<Manifest, ContainerError> {
    let mut lines = Vec::new();
    let mut line = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        if r.read(&mut byte)? == 0 {
            return Err(ContainerError::Manifest("missing `end` line".into()));
        }
        if byte[0] == b'\n' {
            let text = String::from_utf8(std::mem::take(&mut line))
                .map_err(|_| ContainerError::Manifest("manifest is not text".into()))?;
            if lines.is_empty() && text != magic {
                return Err(ContainerError::Magic {
                    expected: magic,
                    found: text.chars().take(40).collect(),
                });
            }
            if text == "end" {
                break;
            }
            lines.push(text);
        } else {
            line.push(byte[0]);
            if line.len() > 1 << 20 {
                return Err(ContainerError::Magic {
                    expected: magic,
                    found: String::from_utf8_lossy(&line[..40]).into_owned(),
                });
            }
        }
    }
    let mut fields = BTreeMap::new();
    for l in &lines[1..] {
        let (k, v) = l.split_once(' ').unwrap_or((l, ""));
        fields.insert(k.to_string(), v.to_string());
    }
    let m = Manifest { fields };
    let version = m.get("version")?;
    if version != VERSION.to_string() {
        return Err(ContainerError::Version(version.to_string()));
    }
    Ok(m)
}

fn read_payload<R: Read>(r: &mut R, expected: usize) -> Result<Vec<u8>, ContainerError> {
    let mut buf = Vec::with_capacity(expected);
    r.read_to_end(&mut buf)?;
    if buf.len() < expected {
        return Err(ContainerError::Truncated {
            expected,
            found: buf.len(),
        });
    }
    if buf.len() > expected {
        return Err(ContainerError::Trailing(buf.len() - expected));
    }
    Ok(buf)
}

fn f64s(bytes: &[u8]) -> Vec<f64> {
    bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect()
}

fn u32s(bytes: &[u8]) -> Vec<u32> {
    bytes.chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes"))).collect()
}

fn slice(payload: &[u8], (offset, count): (usize, usize), elem: usize) -> Result<&[u8], ContainerError> {
    payload
        .get(offset..offset + count * elem)
        .ok_or_else(|| ContainerError::Manifest("array lies outside the payload".into()))
}

fn write_f64s<W: Write>(w: &mut W, v: &[f64]) -> io::Result<()> {
    for chunk in v.chunks(8192) {
        let bytes: Vec<u8> = chunk.iter().flat_map(|x| x.to_le_bytes()).collect();
        w.write_all(&bytes)?;
    }
    Ok(())
}

fn write_u32s<W: Write>(w: &mut W, v: &[u32]) -> io::Result<()> {
    for chunk in v.chunks(16384) {
        let bytes: Vec<u8> = chunk.iter().flat_map(|x| x.to_le_bytes()).collect();
        w.write_all(&bytes)?;
    }
    Ok(())
}

pub fn write_results<W: Write>(res: &SynthesisResult, mut w: W) -> Result<(), ContainerError> {
    let mut m = format!("{RESULT_MAGIC}\nversion {VERSION}\n");
    write_grid(&mut m, "state", &res.state);
    write_grid(&mut m, "input", &res.input);
    if let Some(g) = &res.disturbance {
        write_grid(&mut m, "disturbance", g);
    }
    m.push_str(&format!("spec.kind {}\nspec.horizon {}\n", res.spec.kind, res.spec.horizon));
    for (name, r) in [("target", &res.spec.target), ("avoid", &res.spec.avoid)] {
        if let Some(r) = r {
            m.push_str(&format!("{name}.lb {}\n{name}.ub {}\n", fmt_vec(&r.lo), fmt_vec(&r.hi)));
        }
    }
    let absorbing = res.spec.absorbing_mask(&res.state).iter().filter(|a| **a).count();
    m.push_str(&format!("gamma {:?}\nmode {}\nabsorbing {absorbing}\n", res.gamma, res.mode));
    let n = res.n_states();
    let values_bytes = res.values.len() * 8;
    let policy_bytes = res.policy.len() * 4;
    m.push_str(&format!("values.shape {} {}\n", n, res.horizon() + 1));
    m.push_str(&format!("values 0 {}\n", res.values.len()));
    m.push_str(&format!("policy.shape {} {}\n", n, res.horizon()));
    m.push_str(&format!("policy {values_bytes} {}\n", res.policy.len()));
    m.push_str(&format!("worst {} {}\n", values_bytes + policy_bytes, res.worst.len()));
    m.push_str("end\n");
    w.write_all(m.as_bytes())?;
    write_f64s(&mut w, &res.values)?;
    write_u32s(&mut w, &res.policy)?;
    write_u32s(&mut w, &res.worst)?;
    w.flush()?;
    Ok(())
}

pub fn read_results<R: Read>(mut r: R) -> Result<SynthesisResult, ContainerError> {
    let m = read_manifest(&mut r, RESULT_MAGIC)?;
    let state = m.grid("state")?;
    let input = m.grid("input")?;
    let disturbance = if m.fields.contains_key("disturbance.lb") {
        Some(m.grid("disturbance")?)
    } else {
        None
    };
    let kind = SpecKind::parse(m.get("spec.kind")?).ok_or_else(|| ContainerError::Manifest("unknown spec kind".into()))?;
    let spec = Spec {
        kind,
        horizon: m.usize("spec.horizon")?,
        target: m.rect("target")?,
        avoid: m.rect("avoid")?,
    };
    let gamma: f64 = m.get("gamma")?.parse().map_err(|_| ContainerError::Manifest("bad gamma".into()))?;
    let mode = match SynthesisMode::parse(m.get("mode")?) {
        Some(SynthesisMode::Auto) | None => return Err(ContainerError::Manifest("bad mode".into())),
        Some(mode) => mode,
    };
    let n = state.len();
    let vals = m.array("values", 8)?;
    let pol = m.array("policy", 4)?;
    let worst = m.array("worst", 4)?;
    if vals.1 != n * (spec.horizon + 1) || pol.1 != n * spec.horizon || worst.1 != pol.1 {
        return Err(ContainerError::Manifest("array sizes do not match the grids and horizon".into()));
    }
    let total = [vals.0 + vals.1 * 8, pol.0 + pol.1 * 4, worst.0 + worst.1 * 4].into_iter().max().unwrap_or(0);
    let payload = read_payload(&mut r, total)?;
    let res = SynthesisResult {
        values: f64s(slice(&payload, vals, 8)?),
        policy: u32s(slice(&payload, pol, 4)?),
        worst: u32s(slice(&payload, worst, 4)?),
        state,
        input,
        disturbance,
        spec,
        gamma,
        mode,
    };
    let n_w = res.disturbance.as_ref().map_or(1, |g| g.len());
    if res.policy.iter().any(|&u| u as usize >= res.input.len()) || res.worst.iter().any(|&w| w as usize >= n_w) {
        return Err(ContainerError::Manifest("policy index out of range".into()));
    }
    Ok(res)
}

/// Raw dump of a transition matrix: window layout, origins and entries.
pub fn write_matrix<W: Write>(tm: &TransitionMatrix, mut w: W) -> Result<(), ContainerError> {
    let join = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ");
    let mut m = format!("{MATRIX_MAGIC}\nversion {VERSION}\n");
    m.push_str(&format!(
        "dims {} {} {}\n",
        tm.n_states, tm.n_inputs, tm.n_disturbances
    ));
    match &tm.layout.half {
        Some(h) => m.push_str(&format!("window.half {}\n", join(h))),
        None => m.push_str("window.half full\n"),
    }
    m.push_str(&format!("window.shape {}\n", join(&tm.layout.shape)));
    m.push_str(&format!("origins 0 {}\n", tm.origins.len()));
    m.push_str(&format!("data {} {}\n", tm.origins.len() * 4, tm.data.len()));
    m.push_str("end\n");
    w.write_all(m.as_bytes())?;
    write_u32s(&mut w, &tm.origins)?;
    write_f64s(&mut w, &tm.data)?;
    w.flush()?;
    Ok(())
}

/// Reads a matrix dump; `state` supplies the strides for the window offsets.
pub fn read_matrix<R: Read>(mut r: R, state: &UniformGrid) -> Result<TransitionMatrix, ContainerError> {
    let m = read_manifest(&mut r, MATRIX_MAGIC)?;
    let dims = m.usizes("dims")?;
    let [n_x, n_u, n_w] = dims[..] else {
        return Err(ContainerError::Manifest("`dims` needs three entries".into()));
    };
    if n_x != state.len() {
        return Err(ContainerError::Manifest(format!("matrix has {n_x} states, grid has {}", state.len())));
    }
    let half = match m.get("window.half")? {
        "full" => None,
        _ => Some(m.usizes("window.half")?),
    };
    let shape = m.usizes("window.shape")?;
    if shape.len() != state.dim() || shape.iter().zip(state.counts()).any(|(s, c)| s > c || *s == 0) {
        return Err(ContainerError::Manifest("window shape does not fit the state grid".into()));
    }
    let layout = WindowLayout {
        half,
        offsets: state.window_offsets(&shape),
        shape,
    };
    let origins = m.array("origins", 4)?;
    let data = m.array("data", 8)?;
    let rows = n_x * n_u * n_w;
    if origins.1 != rows || data.1 != rows * layout.row_width() {
        return Err(ContainerError::Manifest("array sizes do not match the dimensions".into()));
    }
    let payload = read_payload(&mut r, (origins.0 + origins.1 * 4).max(data.0 + data.1 * 8))?;
    Ok(TransitionMatrix {
        n_states: n_x,
        n_inputs: n_u,
        n_disturbances: n_w,
        origins: u32s(slice(&payload, origins, 4)?),
        data: f64s(slice(&payload, data, 8)?),
        layout,
    })
}
