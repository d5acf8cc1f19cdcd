//! Graph files. Matrices are stored row-major in full binary64 precision, so
//! a save/load round trip reproduces the graph bit for bit.

use std::collections::BTreeMap;
use std::path::Path;

use bpguard_core::certify::CertReport;
use bpguard_core::rrt::{BpGraph, Edge, VertexMeta};
use bpguard_core::synth::{BarrierPair, SynthRecord};
use nalgebra::{DMatrix, DVector, Vector2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const GRAPH_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum GraphIoError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("graph file has format version {found:?}, expected {expected}")]
    FormatVersionMismatch { found: Option<u64>, expected: u32 },
    #[error("malformed graph file: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MatrixFile {
    pub rows: usize,
    pub cols: usize,
    /// Row-major entries.
    pub data: Vec<f64>,
}

impl MatrixFile {
    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        let data = (0..m.nrows())
            .flat_map(|i| (0..m.ncols()).map(move |j| m[(i, j)]))
            .collect();
        Self {
            rows: m.nrows(),
            cols: m.ncols(),
            data,
        }
    }

    pub fn to_matrix(&self) -> Result<DMatrix<f64>, GraphIoError> {
        if self.data.len() != self.rows * self.cols {
            return Err(GraphIoError::Parse(format!(
                "matrix of shape {}x{} has {} entries",
                self.rows,
                self.cols,
                self.data.len()
            )));
        }
        Ok(DMatrix::from_row_slice(self.rows, self.cols, &self.data))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct VertexFile {
    id: usize,
    q_e: Vec<f64>,
    x_e: [f64; 2],
    q: MatrixFile,
    k: MatrixFile,
    eps0: f64,
    alpha: f64,
    w_bar: f64,
    multipliers: Vec<f64>,
    contain_offsets: Vec<Vec<f64>>,
    shape_bound: Option<MatrixFile>,
    cert: Option<CertReport>,
    contain: Option<String>,
    obstacles: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct GraphFile {
    format_version: u32,
    rng_seed: u64,
    anchors: BTreeMap<String, usize>,
    vertices: Vec<VertexFile>,
    edges: Vec<Edge>,
}

fn to_file(g: &BpGraph) -> GraphFile {
    let vertices = g
        .vertices
        .iter()
        .zip(&g.meta)
        .map(|(bp, meta)| VertexFile {
            id: bp.id,
            q_e: bp.q_e.as_slice().to_vec(),
            x_e: [bp.x_e.x, bp.x_e.y],
            q: MatrixFile::from_matrix(&bp.q),
            k: MatrixFile::from_matrix(&bp.k),
            eps0: bp.eps0,
            alpha: bp.alpha,
            w_bar: bp.w_bar,
            multipliers: bp.record.multipliers.clone(),
            contain_offsets: bp
                .record
                .contain_offsets
                .iter()
                .map(|v| v.as_slice().to_vec())
                .collect(),
            shape_bound: bp.record.shape_bound.as_ref().map(MatrixFile::from_matrix),
            cert: bp.cert.clone(),
            contain: meta.contain.clone(),
            obstacles: meta.obstacles.clone(),
        })
        .collect();
    GraphFile {
        format_version: GRAPH_FORMAT_VERSION,
        rng_seed: g.rng_seed,
        anchors: g.anchors.clone(),
        vertices,
        edges: g.edges.clone(),
    }
}

fn from_file(f: GraphFile) -> Result<BpGraph, GraphIoError> {
    let mut g = BpGraph::new(f.rng_seed);
    for (pos, v) in f.vertices.into_iter().enumerate() {
        if v.id != pos {
            return Err(GraphIoError::Parse(format!(
                "vertex {pos} carries id {}",
                v.id
            )));
        }
        let q = v.q.to_matrix()?;
        if q.nrows() != q.ncols() || q.nrows() != 2 * v.q_e.len() || q.clone().cholesky().is_none()
        {
            return Err(GraphIoError::Parse(format!(
                "vertex {pos}: Q is not a positive definite state matrix"
            )));
        }
        let mut bp = BarrierPair::new(
            v.id,
            DVector::from_vec(v.q_e),
            Vector2::new(v.x_e[0], v.x_e[1]),
            q,
            v.k.to_matrix()?,
            v.eps0,
            v.alpha,
            v.w_bar,
        );
        bp.record = SynthRecord {
            multipliers: v.multipliers,
            contain_offsets: v
                .contain_offsets
                .into_iter()
                .map(DVector::from_vec)
                .collect(),
            shape_bound: v.shape_bound.map(|m| m.to_matrix()).transpose()?,
        };
        bp.cert = v.cert;
        g.add_vertex(
            bp,
            VertexMeta {
                contain: v.contain,
                obstacles: v.obstacles,
            },
        );
    }
    let n = g.vertices.len();
    for e in &f.edges {
        if e.from >= n || e.to >= n {
            return Err(GraphIoError::Parse(format!(
                "edge {}-{} references a missing vertex",
                e.from, e.to
            )));
        }
    }
    if let Some((label, v)) = f.anchors.iter().find(|(_, v)| **v >= n) {
        return Err(GraphIoError::Parse(format!(
            "anchor {label} references missing vertex {v}"
        )));
    }
    g.edges = f.edges;
    g.anchors = f.anchors;
    Ok(g)
}

pub fn graph_to_string(g: &BpGraph) -> String {
    serde_json::to_string_pretty(&to_file(g)).expect("graph serializes")
}

pub fn graph_from_str(text: &str) -> Result<BpGraph, GraphIoError> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| GraphIoError::Parse(e.to_string()))?;
    let found = value.get("format_version").and_then(|v| v.as_u64());
    if found != Some(GRAPH_FORMAT_VERSION as u64) {
        return Err(GraphIoError::FormatVersionMismatch {
            found,
            expected: GRAPH_FORMAT_VERSION,
        });
    }
    let file: GraphFile =
        serde_json::from_value(value).map_err(|e| GraphIoError::Parse(e.to_string()))?;
    from_file(file)
}

pub fn save_graph(g: &BpGraph, path: &Path) -> Result<(), GraphIoError> {
    std::fs::write(path, graph_to_string(g)).map_err(|source| GraphIoError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_graph(path: &Path) -> Result<BpGraph, GraphIoError> {
    let text = std::fs::read_to_string(path).map_err(|source| GraphIoError::Io {
        path: path.display().to_string(),
        source,
    })?;
    graph_from_str(&text)
}
