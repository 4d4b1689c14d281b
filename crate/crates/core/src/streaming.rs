//! Streaming multiplication by a BLT matrix and seeded correlated noise.
//!
//! A [`StreamState`] keeps `d` buffers of width `m` and, for each input row
//! `z_k`, performs `S ← v z_k + W S` and emits `t z_k + uᵀ S`. The emitted
//! rows are `Σ_{j≤k} r_{k-j} z_j`.
//!
//! Noise columns are independent, each drawn from its own ChaCha20 stream,
//! so a noise stream may be split into column shards without changing a bit
//! of its output.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::blt_params::{BltFactorization, MatrixPowerForm, Transition};
use crate::error::{Error, Result};
use crate::error_eval::factorization_sensitivity;
use crate::seq_core::Matrix;

/// Name of the sampling scheme recorded in metadata.
pub const RNG_NAME: &str = "ChaCha20Rng(seed_from_u64(seed), stream=column) + rand_distr::StandardNormal";

/// Rows generated per shard between synchronizations.
pub const BLOCK_ROWS: usize = 256;

/// Buffers and step counter of one streaming multiplication.
#[derive(Clone, Debug)]
pub struct StreamState {
    form: MatrixPowerForm,
    /// Buffer `i` occupies `s[i*m .. (i+1)*m]`.
    s: Vec<f64>,
    /// Workspace for non-diagonal transitions.
    scratch: Vec<f64>,
    k: usize,
    m: usize,
    limit: Option<usize>,
}

/// Zero state for generator `form` and rows of width `m`.
pub fn stream_init(form: MatrixPowerForm, m: usize) -> Result<StreamState> {
    if m == 0 {
        return Err(Error::Empty { what: "m" });
    }
    let d = form.dim();
    let scratch = match form.w {
        Transition::Diagonal(_) => Vec::new(),
        Transition::Dense(_) => vec![0.0; d * m],
    };
    Ok(StreamState {
        form,
        s: vec![0.0; d * m],
        scratch,
        k: 0,
        m,
        limit: None,
    })
}

impl StreamState {
    /// Rejects steps beyond `n`.
    pub fn with_limit(mut self, n: usize) -> Self {
        self.limit = Some(n);
        self
    }

    /// Steps taken so far.
    pub fn k(&self) -> usize {
        self.k
    }

    /// Row width.
    pub fn m(&self) -> usize {
        self.m
    }

    /// Number of buffers.
    pub fn d(&self) -> usize {
        self.form.dim()
    }

    /// Buffer contents, buffer-major.
    pub fn buffers(&self) -> &[f64] {
        &self.s
    }

    /// Bytes held in the buffer matrix.
    pub fn state_bytes(&self) -> usize {
        self.s.len() * std::mem::size_of::<f64>()
    }

    /// Advances by one row, writing `Σ_{j≤k} r_{k-j} z_j` into `out`.
    pub fn step_into(&mut self, z: &[f64], out: &mut [f64]) -> Result<()> {
        let m = self.m;
        if z.len() != m {
            return Err(Error::LengthMismatch { left: m, right: z.len() });
        }
        if out.len() != m {
            return Err(Error::LengthMismatch { left: m, right: out.len() });
        }
        if let Some(n) = self.limit {
            if self.k >= n {
                return Err(Error::Exhausted { rows: n });
            }
        }
        let f = &self.form;
        match &f.w {
            Transition::Diagonal(theta) => {
                for (i, (&th, &vi)) in theta.iter().zip(&f.v).enumerate() {
                    for (s, &zj) in self.s[i * m..(i + 1) * m].iter_mut().zip(z) {
                        *s = vi * zj + th * *s;
                    }
                }
            }
            Transition::Dense(w) => {
                let d = w.rows();
                for i in 0..d {
                    let row = &mut self.scratch[i * m..(i + 1) * m];
                    for (x, &zj) in row.iter_mut().zip(z) {
                        *x = f.v[i] * zj;
                    }
                    for (l, &wil) in w.row(i).iter().enumerate() {
                        if wil != 0.0 {
                            for (x, &sl) in row.iter_mut().zip(&self.s[l * m..(l + 1) * m]) {
                                *x += wil * sl;
                            }
                        }
                    }
                }
                std::mem::swap(&mut self.s, &mut self.scratch);
            }
        }
        for (o, &zj) in out.iter_mut().zip(z) {
            *o = f.t * zj;
        }
        for (i, &ui) in f.u.iter().enumerate() {
            if ui != 0.0 {
                for (o, &s) in out.iter_mut().zip(&self.s[i * m..(i + 1) * m]) {
                    *o += ui * s;
                }
            }
        }
        self.k += 1;
        Ok(())
    }

    /// Advances by one row and returns the output row.
    pub fn step(&mut self, z: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.m];
        self.step_into(z, &mut out)?;
        Ok(out)
    }
}

/// Which rows a noise stream emits.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutputKind {
    /// Rows of `C⁻¹ z`.
    PerStep,
    /// Rows of `B z`, the running sums of the per-step rows.
    Prefix,
}

/// Parameters of a correlated noise stream.
#[derive(Clone, Debug)]
pub struct NoiseStreamConfig {
    /// Factorization whose `C⁻¹` correlates the noise.
    pub factorization: BltFactorization,
    /// Number of rows.
    pub n: usize,
    /// Row width.
    pub m: usize,
    /// RNG seed.
    pub seed: u64,
    /// Noise multiplier; the i.i.d. noise has standard deviation `ζ·‖C‖₁→₂`.
    pub zeta: f64,
    /// Per-step or prefix rows.
    pub output_kind: OutputKind,
}

/// Independent Gaussian columns, one ChaCha20 stream per column.
#[derive(Clone, Debug)]
pub struct ColumnNoise {
    rngs: Vec<ChaCha20Rng>,
    sigma: f64,
}

impl ColumnNoise {
    /// Columns `cols` of the noise keyed by `seed`, scaled by `sigma`.
    pub fn new(seed: u64, cols: std::ops::Range<usize>, sigma: f64) -> Self {
        let rngs = cols
            .map(|c| {
                let mut rng = ChaCha20Rng::seed_from_u64(seed);
                rng.set_stream(c as u64);
                rng
            })
            .collect();
        Self { rngs, sigma }
    }

    /// Draws the next row.
    pub fn fill(&mut self, row: &mut [f64]) {
        for (x, rng) in row.iter_mut().zip(&mut self.rngs) {
            let g: f64 = StandardNormal.sample(rng);
            *x = self.sigma * g;
        }
    }
}

/// The first `n` rows of the noise keyed by `seed`, as a dense matrix.
pub fn gaussian_matrix(seed: u64, n: usize, m: usize, sigma: f64) -> Matrix {
    let mut noise = ColumnNoise::new(seed, 0..m, sigma);
    let mut data = vec![0.0; n * m];
    for row in data.chunks_mut(m.max(1)) {
        noise.fill(row);
    }
    Matrix::from_vec(n, m, data).expect("shape is consistent")
}

/// One column range of a noise stream with its own state.
#[derive(Debug)]
struct Shard {
    state: StreamState,
    noise: ColumnNoise,
    prefix: Option<Vec<f64>>,
    z: Vec<f64>,
    out: Vec<f64>,
    block: Vec<f64>,
}

impl Shard {
    fn run(&mut self, rows: usize) -> Result<()> {
        let w = self.z.len();
        self.block.clear();
        for _ in 0..rows {
            self.noise.fill(&mut self.z);
            self.state.step_into(&self.z, &mut self.out)?;
            match &mut self.prefix {
                Some(acc) => {
                    for (a, o) in acc.iter_mut().zip(&self.out) {
                        *a += o;
                    }
                    self.block.extend_from_slice(acc);
                }
                None => self.block.extend_from_slice(&self.out[..w]),
            }
        }
        Ok(())
    }

    fn state_bytes(&self) -> usize {
        self.state.state_bytes() + self.prefix.as_ref().map_or(0, |p| p.len() * 8)
    }
}

/// Iterator over the rows of a correlated noise stream.
#[derive(Debug)]
pub struct NoiseStream {
    shards: Vec<Shard>,
    pool: Option<rayon::ThreadPool>,
    n: usize,
    m: usize,
    emitted: usize,
    sigma: f64,
    pending: Vec<f64>,
    pending_pos: usize,
}

/// Single-threaded stream for `cfg`.
pub fn noise_stream(cfg: &NoiseStreamConfig) -> Result<NoiseStream> {
    NoiseStream::with_threads(cfg, 1)
}

impl NoiseStream {
    /// Stream split into up to `threads` column shards; `0` uses the rayon default.
    pub fn with_threads(cfg: &NoiseStreamConfig, threads: usize) -> Result<Self> {
        if cfg.n == 0 {
            return Err(Error::Empty { what: "n" });
        }
        if cfg.m == 0 {
            return Err(Error::Empty { what: "m" });
        }
        if !(cfg.zeta >= 0.0 && cfg.zeta.is_finite()) {
            return Err(Error::invalid("zeta", "must be finite and nonnegative"));
        }
        let sigma = cfg.zeta * factorization_sensitivity(&cfg.factorization, cfg.n)?;
        let form = cfg.factorization.inverse_generator().matrix_form()?;
        let threads = if threads == 0 { rayon::current_num_threads() } else { threads };
        let parts = threads.clamp(1, cfg.m);
        let shards = (0..parts)
            .map(|p| {
                let lo = p * cfg.m / parts;
                let hi = (p + 1) * cfg.m / parts;
                let w = hi - lo;
                Ok(Shard {
                    state: stream_init(form.clone(), w)?.with_limit(cfg.n),
                    noise: ColumnNoise::new(cfg.seed, lo..hi, sigma),
                    prefix: (cfg.output_kind == OutputKind::Prefix).then(|| vec![0.0; w]),
                    z: vec![0.0; w],
                    out: vec![0.0; w],
                    block: Vec::new(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let pool = if parts > 1 {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(parts)
                    .build()
                    .map_err(|e| Error::invalid("threads", e.to_string()))?,
            )
        } else {
            None
        };
        Ok(Self {
            shards,
            pool,
            n: cfg.n,
            m: cfg.m,
            emitted: 0,
            sigma,
            pending: Vec::new(),
            pending_pos: 0,
        })
    }

    /// Standard deviation of the underlying i.i.d. noise.
    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Row width.
    pub fn m(&self) -> usize {
        self.m
    }

    /// Total rows.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Bytes of streaming state across all shards, excluding output blocks.
    pub fn state_bytes(&self) -> usize {
        self.shards.iter().map(Shard::state_bytes).sum()
    }

    /// Next block of up to `BLOCK_ROWS` rows, row-major, or `None` when done.
    pub fn next_block(&mut self) -> Result<Option<Vec<f64>>> {
        let rows = BLOCK_ROWS.min(self.n - self.emitted);
        if rows == 0 {
            return Ok(None);
        }
        match &self.pool {
            Some(pool) => {
                let shards = &mut self.shards;
                pool.install(|| shards.par_iter_mut().map(|s| s.run(rows)).collect::<Result<Vec<()>>>())?;
            }
            None => {
                for s in &mut self.shards {
                    s.run(rows)?;
                }
            }
        }
        let mut block = Vec::with_capacity(rows * self.m);
        for r in 0..rows {
            for s in &self.shards {
                let w = s.z.len();
                block.extend_from_slice(&s.block[r * w..(r + 1) * w]);
            }
        }
        self.emitted += rows;
        Ok(Some(block))
    }
}

impl Iterator for NoiseStream {
    type Item = Vec<f64>;

    fn next(&mut self) -> Option<Vec<f64>> {
        if self.pending_pos >= self.pending.len() {
            self.pending = self.next_block().ok().flatten()?;
            self.pending_pos = 0;
        }
        let row = self.pending[self.pending_pos..self.pending_pos + self.m].to_vec();
        self.pending_pos += self.m;
        Some(row)
    }
}

/// Metadata written next to raw noise output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSidecar {
    /// Rows.
    pub n: usize,
    /// Columns.
    pub m: usize,
    /// Noise multiplier.
    pub zeta: f64,
    /// Standard deviation of the i.i.d. noise.
    pub sigma: f64,
    /// RNG seed.
    pub seed: u64,
    /// Sampling scheme.
    pub rng: String,
    /// Source factorization file.
    pub factorization_path: String,
    /// Per-step or prefix rows.
    pub mode: OutputKind,
}

/// Writes `step,dim0,…` CSV and returns the number of rows written.
pub fn write_csv(stream: &mut NoiseStream, mut w: impl Write) -> Result<usize> {
    let m = stream.m();
    let header: Vec<String> = std::iter::once("step".to_string())
        .chain((0..m).map(|j| format!("dim{j}")))
        .collect();
    writeln!(w, "{}", header.join(","))?;
    let mut step = 0;
    while let Some(block) = stream.next_block()? {
        for row in block.chunks(m) {
            write!(w, "{step}")?;
            for x in row {
                write!(w, ",{x}")?;
            }
            writeln!(w)?;
            step += 1;
        }
    }
    w.flush()?;
    Ok(step)
}

/// Writes rows as little-endian `f64`, row-major, and returns the number of rows written.
pub fn write_f64(stream: &mut NoiseStream, mut w: impl Write) -> Result<usize> {
    let m = stream.m();
    let mut rows = 0;
    let mut bytes = Vec::new();
    while let Some(block) = stream.next_block()? {
        bytes.clear();
        for x in &block {
            bytes.extend_from_slice(&x.to_le_bytes());
        }
        w.write_all(&bytes)?;
        rows += block.len() / m;
    }
    w.flush()?;
    Ok(rows)
}
