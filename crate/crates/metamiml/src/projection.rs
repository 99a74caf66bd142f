//! Sparse random projection fusing instance features with bag context.
//!
//! Entries of the u × k matrix E are drawn IID from the very-sparse law
//! { +sqrt(s/k) w.p. 1/(2s), 0 w.p. 1 - 1/s, -sqrt(s/k) w.p. 1/(2s) }, which
//! preserves squared norms in expectation. A projected bag row is
//! (x_instance ⊕ x_context)ᵀ E.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::hmin::NodeId;

/// Sparse u × k projection with entries in {+c, 0, -c}, c = sqrt(s/k).
/// Frozen after creation: gradients flow through it, never into it.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionMatrix {
    u: usize,
    k: usize,
    s: f64,
    seed: u64,
    scale: f64,
    /// (row, col, sign) for each nonzero entry, row-major order.
    triplets: Vec<(u32, u32, i8)>,
}

impl ProjectionMatrix {
    pub fn input_dim(&self) -> usize {
        self.u
    }

    pub fn output_dim(&self) -> usize {
        self.k
    }

    pub fn sparsity(&self) -> f64 {
        self.s
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn nonzeros(&self) -> &[(u32, u32, i8)] {
        &self.triplets
    }

    /// Materialize the dense matrix (test and inspection use).
    pub fn to_dense(&self) -> Array2<f64> {
        let mut e = Array2::zeros((self.u, self.k));
        for &(r, c, sign) in &self.triplets {
            e[[r as usize, c as usize]] = sign as f64 * self.scale;
        }
        e
    }

    /// y = xᵀ E for a length-u input.
    pub fn apply(&self, x: &Array1<f64>) -> Result<Array1<f64>> {
        if x.len() != self.u {
            return Err(Error::ShapeMismatch(format!(
                "projection input has {} entries, expected {}",
                x.len(),
                self.u
            )));
        }
        let mut y = Array1::zeros(self.k);
        for &(r, c, sign) in &self.triplets {
            y[c as usize] += sign as f64 * self.scale * x[r as usize];
        }
        Ok(y)
    }

    /// Backpropagate d(loss)/d(output rows) to the input block starting at
    /// `offset`: the result has length u - offset and entry t equals
    /// Σ_rows Σ_cols grad[row, col] · E[offset+t, col]. Used to route loss
    /// gradients from projected rows back to the shared context vector.
    pub fn backprop_block(&self, grad_rows: &Array2<f64>, offset: usize) -> Result<Array1<f64>> {
        if grad_rows.ncols() != self.k {
            return Err(Error::ShapeMismatch(format!(
                "gradient has {} columns, expected {}",
                grad_rows.ncols(),
                self.k
            )));
        }
        if offset > self.u {
            return Err(Error::ShapeMismatch(format!(
                "block offset {} exceeds input dim {}",
                offset, self.u
            )));
        }
        let mut out = Array1::zeros(self.u - offset);
        for &(r, c, sign) in &self.triplets {
            let r = r as usize;
            if r < offset {
                continue;
            }
            let w = sign as f64 * self.scale;
            for i in 0..grad_rows.nrows() {
                out[r - offset] += w * grad_rows[[i, c as usize]];
            }
        }
        Ok(out)
    }

    /// Reassemble from persisted parts; `scale` is recomputed as sqrt(s/k).
    pub fn from_triplets(
        u: usize,
        k: usize,
        s: f64,
        seed: u64,
        triplets: Vec<(u32, u32, i8)>,
    ) -> ProjectionMatrix {
        ProjectionMatrix {
            u,
            k,
            s,
            seed,
            scale: (s / k as f64).sqrt(),
            triplets,
        }
    }

    /// k × k identity-patterned projection (s = k gives entry magnitude 1),
    /// so applying it returns the input unchanged.
    pub fn identity(k: usize) -> ProjectionMatrix {
        ProjectionMatrix::from_triplets(
            k,
            k,
            k as f64,
            0,
            (0..k as u32).map(|i| (i, i, 1i8)).collect(),
        )
    }

    /// Persist as `SPROJ v1` header plus one `(row, col, sign)` line per
    /// nonzero, so a run can resume with the bit-exact matrix.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "SPROJ v1 u={} k={} s={} seed={}",
            self.u, self.k, self.s, self.seed
        );
        for &(r, c, sign) in &self.triplets {
            let _ = writeln!(out, "{r} {c} {sign}");
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<ProjectionMatrix> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<ProjectionMatrix> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or(Error::MalformedHeader {
            line: 1,
            detail: "empty projection file".into(),
        })?;
        let mut tok = header.split_whitespace();
        if tok.next() != Some("SPROJ") || tok.next() != Some("v1") {
            return Err(Error::MalformedHeader {
                line: 1,
                detail: "expected 'SPROJ v1 ...'".into(),
            });
        }
        let (mut u, mut k, mut s, mut seed) = (0usize, 0usize, 0f64, 0u64);
        for kv in tok {
            let (key, v) = kv.split_once('=').ok_or_else(|| Error::MalformedHeader {
                line: 1,
                detail: format!("bad header field '{kv}'"),
            })?;
            let bad = || Error::MalformedHeader {
                line: 1,
                detail: format!("bad value in '{kv}'"),
            };
            match key {
                "u" => u = v.parse().map_err(|_| bad())?,
                "k" => k = v.parse().map_err(|_| bad())?,
                "s" => s = v.parse().map_err(|_| bad())?,
                "seed" => seed = v.parse().map_err(|_| bad())?,
                _ => {
                    return Err(Error::MalformedHeader {
                        line: 1,
                        detail: format!("unknown header field '{key}'"),
                    })
                }
            }
        }
        let mut triplets = Vec::new();
        for (n, line) in lines {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            let [r, c, sign] = parts[..] else {
                return Err(Error::MalformedRecord {
                    line: n + 1,
                    detail: "expected '<row> <col> <sign>'".into(),
                });
            };
            let bad = |detail: String| Error::MalformedRecord {
                line: n + 1,
                detail,
            };
            triplets.push((
                r.parse().map_err(|_| bad(format!("bad row '{r}'")))?,
                c.parse().map_err(|_| bad(format!("bad col '{c}'")))?,
                sign.parse().map_err(|_| bad(format!("bad sign '{sign}'")))?,
            ));
        }
        Ok(ProjectionMatrix::from_triplets(u, k, s, seed, triplets))
    }
}

/// Draw a fresh u × k projection. Each entry is independently
/// +c w.p. 1/(2s), -c w.p. 1/(2s), else 0, with c = sqrt(s/k).
pub fn make_projection(u: usize, k: usize, s: f64, seed: u64) -> Result<ProjectionMatrix> {
    if u == 0 || k == 0 {
        return Err(Error::InvalidConfig(
            "projection dims must be at least 1".into(),
        ));
    }
    if s < 1.0 {
        return Err(Error::InvalidConfig(format!(
            "sparsity parameter s must be >= 1, got {s}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = 1.0 / (2.0 * s);
    let mut triplets = Vec::new();
    for r in 0..u as u32 {
        for c in 0..k as u32 {
            let x: f64 = rng.random();
            if x < p {
                triplets.push((r, c, 1i8));
            } else if x < 2.0 * p {
                triplets.push((r, c, -1i8));
            }
        }
    }
    Ok(ProjectionMatrix::from_triplets(u, k, s, seed, triplets))
}

/// Sparsity policy for choosing s from the number of bags.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SparsityPolicy {
    /// s = sqrt(n)
    SqrtN,
    /// s = n / ln(n)
    NOverLogN,
    Fixed(f64),
}

impl SparsityPolicy {
    pub fn resolve(&self, num_bags: usize) -> f64 {
        let n = num_bags.max(2) as f64;
        let s = match self {
            SparsityPolicy::SqrtN => n.sqrt(),
            SparsityPolicy::NOverLogN => n / n.ln(),
            SparsityPolicy::Fixed(v) => *v,
        };
        s.max(1.0)
    }
}

/// Fused representation of one bag under one meta-path: row j is
/// (x_{i,j} ⊕ context)ᵀ E.
#[derive(Debug, Clone)]
pub struct ProjectedBag {
    pub bag: NodeId,
    pub path_index: usize,
    pub rows: Array2<f64>,
}

/// Project every instance of a bag, concatenated with the bag's per-path
/// context vector. `instances` is n_i × d, `context` has length d_l, and
/// `e.input_dim()` must equal d + d_l.
pub fn project_bag(
    bag: NodeId,
    path_index: usize,
    instances: &Array2<f64>,
    context: &Array1<f64>,
    e: &ProjectionMatrix,
) -> Result<ProjectedBag> {
    let d = instances.ncols();
    let d_l = context.len();
    if d + d_l != e.input_dim() {
        return Err(Error::ShapeMismatch(format!(
            "instance dim {d} + context dim {d_l} != projection input {}",
            e.input_dim()
        )));
    }
    let n_i = instances.nrows();
    let mut rows = Array2::zeros((n_i, e.output_dim()));
    for &(r, c, sign) in e.nonzeros() {
        let r = r as usize;
        let w = sign as f64 * e.scale();
        if r < d {
            for j in 0..n_i {
                rows[[j, c as usize]] += w * instances[[j, r]];
            }
        } else {
            let v = w * context[r - d];
            for j in 0..n_i {
                rows[[j, c as usize]] += v;
            }
        }
    }
    Ok(ProjectedBag {
        bag,
        path_index,
        rows,
    })
}
