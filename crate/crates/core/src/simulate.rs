//! Synthetic solute-transport data.
//!
//! The ground truth solves
//!
//! ```text
//!   ∂y/∂t = D (∂²y/∂s₁² + ∂²y/∂s₂²) + ψ₁ ∂y/∂s₁ + ψ₂ ∂y/∂s₂
//! ```
//!
//! on a cell-centred grid with explicit Euler steps, central differences for
//! diffusion and first-order upwinding for the advection terms. Note the sign:
//! the solute is carried with velocity `−ψ`.
//!
//! Observations are sampled from the truth at scheduled (well, time) pairs
//! and perturbed on the `log(y + 1)` scale.

use std::io::{Read, Write};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data_model::{convex_hull_region, Dataset, HullRegion, Observation, Range, Transform};
use crate::error::{Error, Result};
use crate::predict::GridEvaluator;
use crate::selection::FitResult;

/// Regular cell-centred grid over a rectangle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpatialGrid {
    pub nx: usize,
    pub ny: usize,
    pub domain: [Range; 2],
}

impl SpatialGrid {
    pub fn new(nx: usize, ny: usize, domain: [Range; 2]) -> Result<Self> {
        if nx < 3 || ny < 3 {
            return Err(Error::Config(format!("spatial grid needs at least 3×3 cells, got {nx}×{ny}")));
        }
        if !(domain[0].width() > 0.0 && domain[1].width() > 0.0) {
            return Err(Error::Config("spatial domain must have positive extent".into()));
        }
        Ok(SpatialGrid { nx, ny, domain })
    }

    pub fn unit(n: usize) -> Self {
        let r = Range { lo: 0.0, hi: 1.0 };
        SpatialGrid::new(n, n, [r, r]).expect("valid unit grid")
    }

    pub fn hx(&self) -> f64 {
        self.domain[0].width() / self.nx as f64
    }

    pub fn hy(&self) -> f64 {
        self.domain[1].width() / self.ny as f64
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Centre of cell `(i, j)`.
    pub fn center(&self, i: usize, j: usize) -> [f64; 2] {
        [
            self.domain[0].lo + (i as f64 + 0.5) * self.hx(),
            self.domain[1].lo + (j as f64 + 0.5) * self.hy(),
        ]
    }

    /// Evaluates `f` at every cell centre, index `i + nx·j`.
    pub fn sample(&self, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        for j in 0..self.ny {
            for i in 0..self.nx {
                let [x, y] = self.center(i, j);
                out.push(f(x, y));
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Boundary {
    /// Dirichlet `y = 0` on the boundary.
    ZeroValue,
    /// Reflecting boundary, no flux across it.
    ZeroFlux,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowModel {
    pub diffusion: f64,
    /// `ψ₁`, `ψ₂` at the cell centres.
    pub psi: [Vec<f64>; 2],
    pub grid: SpatialGrid,
    pub boundary: Boundary,
}

impl FlowModel {
    pub fn new(diffusion: f64, psi: [Vec<f64>; 2], grid: SpatialGrid, boundary: Boundary) -> Result<Self> {
        if !(diffusion > 0.0) || !diffusion.is_finite() {
            return Err(Error::Config(format!("diffusion coefficient must be positive, got {diffusion}")));
        }
        for p in &psi {
            if p.len() != grid.len() {
                return Err(Error::Config("velocity array does not match the grid".into()));
            }
            if p.iter().any(|v| !v.is_finite()) {
                return Err(Error::Config("velocity field contains non-finite values".into()));
            }
        }
        Ok(FlowModel {
            diffusion,
            psi,
            grid,
            boundary,
        })
    }

    pub fn constant(diffusion: f64, psi: [f64; 2], grid: SpatialGrid, boundary: Boundary) -> Result<Self> {
        FlowModel::new(diffusion, [vec![psi[0]; grid.len()], vec![psi[1]; grid.len()]], grid, boundary)
    }

    /// Largest stable explicit step for this flow.
    pub fn max_time_step(&self) -> f64 {
        let (hx, hy) = (self.grid.hx(), self.grid.hy());
        let vmax = |p: &[f64]| p.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let rate = 2.0 * self.diffusion * (1.0 / (hx * hx) + 1.0 / (hy * hy))
            + vmax(&self.psi[0]) / hx
            + vmax(&self.psi[1]) / hy;
        1.0 / rate
    }
}

/// Safety factor applied to the stability bound of the explicit scheme.
pub const CFL_SAFETY: f64 = 0.5;

/// Concentrations on the spatial grid at equally spaced output times.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub grid: SpatialGrid,
    pub times: Range,
    pub nt: usize,
    /// Index `i + nx·(j + ny·k)`.
    pub values: Vec<f64>,
}

const TRUTH_MAGIC: &[u8; 8] = b"STSTRUTH";
const TRUTH_VERSION: u32 = 1;
/// dtype tag for little-endian IEEE-754 binary64.
const DTYPE_F64_LE: u32 = 1;

impl GroundTruth {
    pub fn time(&self, k: usize) -> f64 {
        if self.nt == 1 {
            return self.times.lo;
        }
        self.times.lo + self.times.width() * k as f64 / (self.nt - 1) as f64
    }

    pub fn slice(&self, k: usize) -> &[f64] {
        let m = self.grid.len();
        &self.values[k * m..(k + 1) * m]
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    /// `Σ y · cell area` at output slice `k`.
    pub fn mass(&self, k: usize) -> f64 {
        self.slice(k).iter().sum::<f64>() * self.grid.hx() * self.grid.hy()
    }

    /// Concentration-weighted mean position at output slice `k`.
    pub fn centroid(&self, k: usize) -> [f64; 2] {
        let s = self.slice(k);
        let (mut m, mut cx, mut cy) = (0.0, 0.0, 0.0);
        for j in 0..self.grid.ny {
            for i in 0..self.grid.nx {
                let v = s[i + self.grid.nx * j];
                let [x, y] = self.grid.center(i, j);
                m += v;
                cx += v * x;
                cy += v * y;
            }
        }
        [cx / m, cy / m]
    }

    /// Trilinear interpolation between cell centres and output times;
    /// constant beyond the outermost centres.
    pub fn interpolate(&self, s1: f64, s2: f64, t: f64) -> f64 {
        let g = &self.grid;
        let frac = |x: f64, lo: f64, h: f64, n: usize| -> (usize, f64) {
            let u = ((x - lo) / h - 0.5).clamp(0.0, (n - 1) as f64);
            let i = (u.floor() as usize).min(n.saturating_sub(2));
            (i, u - i as f64)
        };
        let (i, fx) = frac(s1, g.domain[0].lo, g.hx(), g.nx);
        let (j, fy) = frac(s2, g.domain[1].lo, g.hy(), g.ny);
        let (k, ft) = if self.nt == 1 {
            (0, 0.0)
        } else {
            let u = ((t - self.times.lo) / self.times.width() * (self.nt - 1) as f64).clamp(0.0, (self.nt - 1) as f64);
            let k = (u.floor() as usize).min(self.nt - 2);
            (k, u - k as f64)
        };
        let at = |di: usize, dj: usize, dk: usize| {
            let kk = (k + dk).min(self.nt - 1);
            self.values[(i + di) + g.nx * ((j + dj) + g.ny * kk)]
        };
        let mut acc = 0.0;
        for (dk, wk) in [(0, 1.0 - ft), (1, ft)] {
            if wk == 0.0 {
                continue;
            }
            for (dj, wj) in [(0, 1.0 - fy), (1, fy)] {
                for (di, wi) in [(0, 1.0 - fx), (1, fx)] {
                    acc += wk * wj * wi * at(di, dj, dk);
                }
            }
        }
        acc
    }

    /// Writes the binary truth format (see the crate README): an 8-byte
    /// magic, then little-endian `u32` version, dtype, nx, ny, nt, six `f64`
    /// domain bounds, and the values.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(TRUTH_MAGIC)?;
        for v in [TRUTH_VERSION, DTYPE_F64_LE, self.grid.nx as u32, self.grid.ny as u32, self.nt as u32] {
            w.write_all(&v.to_le_bytes())?;
        }
        let bounds = [
            self.grid.domain[0].lo,
            self.grid.domain[0].hi,
            self.grid.domain[1].lo,
            self.grid.domain[1].hi,
            self.times.lo,
            self.times.hi,
        ];
        for b in bounds {
            w.write_all(&b.to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(self.values.len() * 8);
        for v in &self.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
        w.flush()?;
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != TRUTH_MAGIC {
            return Err(Error::Data("not a ground-truth file (bad magic)".into()));
        }
        let mut word = || -> Result<u32> {
            let mut b = [0u8; 4];
            r.read_exact(&mut b)?;
            Ok(u32::from_le_bytes(b))
        };
        let (version, dtype) = (word()?, word()?);
        if version != TRUTH_VERSION || dtype != DTYPE_F64_LE {
            return Err(Error::Data(format!("unsupported ground-truth version {version} / dtype {dtype}")));
        }
        let (nx, ny, nt) = (word()? as usize, word()? as usize, word()? as usize);
        let mut rest = Vec::new();
        r.read_to_end(&mut rest)?;
        if rest.len() != 8 * (6 + nx * ny * nt) {
            return Err(Error::Data("ground-truth file is truncated".into()));
        }
        let mut vals = rest.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
        let mut next = || vals.next().expect("length checked");
        let domain = [Range { lo: next(), hi: next() }, Range { lo: next(), hi: next() }];
        let times = Range { lo: next(), hi: next() };
        let values: Vec<f64> = (0..nx * ny * nt).map(|_| next()).collect();
        Ok(GroundTruth {
            grid: SpatialGrid::new(nx, ny, domain)?,
            times,
            nt,
            values,
        })
    }
}

/// Integrates the transport equation from `initial` at `t = 0` to `t_end`,
/// storing `n_out` equally spaced slices (both ends included).
pub fn solve_pde(flow: &FlowModel, initial: &[f64], t_end: f64, n_out: usize) -> Result<GroundTruth> {
    if !(t_end > 0.0) || n_out < 2 {
        return Err(Error::Config("need t_end > 0 and at least 2 output times".into()));
    }
    let interval = t_end / (n_out - 1) as f64;
    let substeps = (interval / (CFL_SAFETY * flow.max_time_step())).ceil().max(1.0) as usize;
    solve_pde_with_substeps(flow, initial, t_end, n_out, substeps)
}

/// [`solve_pde`] with a fixed number of Euler steps per output interval
/// instead of the automatic stable choice.
pub fn solve_pde_with_substeps(
    flow: &FlowModel,
    initial: &[f64],
    t_end: f64,
    n_out: usize,
    substeps: usize,
) -> Result<GroundTruth> {
    let g = flow.grid;
    if initial.len() != g.len() {
        return Err(Error::Config("initial condition does not match the grid".into()));
    }
    if initial.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::Config("initial concentrations must be finite and nonnegative".into()));
    }
    if !(t_end > 0.0) || n_out < 2 || substeps == 0 {
        return Err(Error::Config("need t_end > 0, at least 2 output times and 1 substep".into()));
    }
    let dt = t_end / (n_out - 1) as f64 / substeps as f64;
    let limit = 1e6 * initial.iter().copied().fold(0.0, f64::max).max(f64::MIN_POSITIVE);

    let (nx, ny) = (g.nx, g.ny);
    let (ihx, ihy) = (1.0 / g.hx(), 1.0 / g.hy());
    let (ihx2, ihy2) = (ihx * ihx, ihy * ihy);
    let ghost = |inner: f64| match flow.boundary {
        Boundary::ZeroFlux => inner,
        Boundary::ZeroValue => -inner,
    };

    let mut values = Vec::with_capacity(g.len() * n_out);
    values.extend_from_slice(initial);
    let mut y = initial.to_vec();
    let mut next = vec![0.0; g.len()];
    let mut step = 0;
    for _ in 1..n_out {
        for _ in 0..substeps {
            step += 1;
            for j in 0..ny {
                for i in 0..nx {
                    let c = i + nx * j;
                    let yc = y[c];
                    let w = if i > 0 { y[c - 1] } else { ghost(yc) };
                    let e = if i + 1 < nx { y[c + 1] } else { ghost(yc) };
                    let s = if j > 0 { y[c - nx] } else { ghost(yc) };
                    let n = if j + 1 < ny { y[c + nx] } else { ghost(yc) };
                    let lap = (e - 2.0 * yc + w) * ihx2 + (n - 2.0 * yc + s) * ihy2;
                    let (p1, p2) = (flow.psi[0][c], flow.psi[1][c]);
                    // y is transported with velocity −ψ: upwind side is +ψ
                    let d1 = if p1 > 0.0 { (e - yc) * ihx } else { (yc - w) * ihx };
                    let d2 = if p2 > 0.0 { (n - yc) * ihy } else { (yc - s) * ihy };
                    next[c] = (yc + dt * (flow.diffusion * lap + p1 * d1 + p2 * d2)).max(0.0);
                }
            }
            std::mem::swap(&mut y, &mut next);
            if y.iter().any(|v| !(v.abs() <= limit)) {
                return Err(Error::Unstable {
                    step,
                    time: step as f64 * dt,
                });
            }
        }
        values.extend_from_slice(&y);
    }
    Ok(GroundTruth {
        grid: g,
        times: Range { lo: 0.0, hi: t_end },
        nt: n_out,
        values,
    })
}

/// Hydraulic head: two planar trends plus a Gaussian mound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeadSurface {
    pub planes: [[f64; 2]; 2],
    pub bump_center: [f64; 2],
    pub bump_height: f64,
    pub bump_width: f64,
}

impl HeadSurface {
    pub fn value(&self, s1: f64, s2: f64) -> f64 {
        let [a, b] = self.planes;
        let (dx, dy) = (s1 - self.bump_center[0], s2 - self.bump_center[1]);
        let w2 = self.bump_width * self.bump_width;
        (a[0] + b[0]) * s1 + (a[1] + b[1]) * s2 + self.bump_height * (-(dx * dx + dy * dy) / (2.0 * w2)).exp()
    }

    pub fn gradient(&self, s1: f64, s2: f64) -> [f64; 2] {
        let [a, b] = self.planes;
        let (dx, dy) = (s1 - self.bump_center[0], s2 - self.bump_center[1]);
        let w2 = self.bump_width * self.bump_width;
        let g = -self.bump_height * (-(dx * dx + dy * dy) / (2.0 * w2)).exp() / w2;
        [a[0] + b[0] + g * dx, a[1] + b[1] + g * dy]
    }
}

/// Parameters of the default synthetic transport problem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DefaultFlow {
    pub head: HeadSurface,
    /// `ψ = −κ ∇h`.
    pub kappa: f64,
    pub diffusion: f64,
    pub source: [f64; 2],
    pub source_width: f64,
    pub source_peak: f64,
}

/// Grid resolution of the reference solution in each dimension.
pub const TRUTH_RESOLUTION: usize = 100;

/// Seed of the flow field behind the benchmark ground truth.
pub const DEFAULT_FLOW_SEED: u64 = 2009;

impl DefaultFlow {
    pub fn from_seed(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut jitter = |scale: f64| 1.0 + scale * (rng.random::<f64>() - 0.5);
        let head = HeadSurface {
            planes: [[1.0 * jitter(0.1), 0.35 * jitter(0.1)], [-0.15 * jitter(0.2), 0.15 * jitter(0.2)]],
            bump_center: [0.6 * jitter(0.05), 0.3 * jitter(0.05)],
            bump_height: 0.04 * jitter(0.2),
            bump_width: 0.12,
        };
        let source = [0.2 * jitter(0.05), 0.3 * jitter(0.05)];
        let g = head.gradient(source[0], source[1]);
        // transport speed 0.6 domain widths per unit time at the source
        let kappa = 0.6 / g[0].hypot(g[1]);
        DefaultFlow {
            head,
            kappa,
            diffusion: 2.5e-3,
            source,
            source_width: 0.06,
            source_peak: 500.0,
        }
    }

    pub fn flow(&self, grid: SpatialGrid) -> FlowModel {
        let psi1 = grid.sample(|x, y| -self.kappa * self.head.gradient(x, y)[0]);
        let psi2 = grid.sample(|x, y| -self.kappa * self.head.gradient(x, y)[1]);
        FlowModel::new(self.diffusion, [psi1, psi2], grid, Boundary::ZeroValue).expect("valid default flow")
    }

    pub fn initial(&self, grid: SpatialGrid) -> Vec<f64> {
        let w2 = self.source_width * self.source_width;
        grid.sample(|x, y| {
            let (dx, dy) = (x - self.source[0], y - self.source[1]);
            self.source_peak * (-(dx * dx + dy * dy) / (2.0 * w2)).exp()
        })
    }
}

/// Flow field and initial plume on the unit square at the reference
/// resolution.
pub fn default_flow_and_initial(seed: u64) -> (FlowModel, Vec<f64>) {
    let p = DefaultFlow::from_seed(seed);
    let grid = SpatialGrid::unit(TRUTH_RESOLUTION);
    (p.flow(grid), p.initial(grid))
}

/// Reference ground truth: the default flow solved to `t = 1` with
/// 100 output slices.
pub fn default_truth(seed: u64) -> Result<GroundTruth> {
    let (flow, init) = default_flow_and_initial(seed);
    solve_pde(&flow, &init, 1.0, TRUTH_RESOLUTION)
}

/// A monitoring well, sampled only while it is in service.
#[derive(Debug, Clone, PartialEq)]
pub struct WellSite {
    pub id: String,
    pub s1: f64,
    pub s2: f64,
    pub active: Range,
}

const SCENARIO1_LAYOUT: &str = include_str!("../data/wells_scenario1.csv");

/// The fixed 29-well layout of scenarios 1 and 3.
pub fn fixed_well_layout() -> Vec<WellSite> {
    let mut rdr = csv::Reader::from_reader(SCENARIO1_LAYOUT.as_bytes());
    rdr.records()
        .map(|r| {
            let r = r.expect("committed layout is valid CSV");
            WellSite {
                id: r[0].to_string(),
                s1: r[1].parse().expect("numeric s1"),
                s2: r[2].parse().expect("numeric s2"),
                active: Range {
                    lo: r[3].parse().expect("numeric t_start"),
                    hi: r[4].parse().expect("numeric t_end"),
                },
            }
        })
        .collect()
}

/// Observation counts of the three designs.
pub const SCENARIO_SIZES: [(usize, usize); 3] = [(1402, 29), (1402, 280), (100, 29)];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScenarioSpec {
    pub id: u8,
    pub seed: u64,
    /// Signal-to-noise ratio on the working scale; infinite means no noise.
    pub snr: f64,
    pub within_well_corr: f64,
}

impl ScenarioSpec {
    pub fn new(id: u8, seed: u64) -> Result<Self> {
        let spec = ScenarioSpec {
            id,
            seed,
            snr: 10.0,
            within_well_corr: 0.05,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.id) {
            return Err(Error::Config(format!("scenario must be 1, 2 or 3, got {}", self.id)));
        }
        if !(self.snr > 0.0) {
            return Err(Error::Config(format!("signal-to-noise ratio must be positive, got {}", self.snr)));
        }
        if !(0.0..1.0).contains(&self.within_well_corr) {
            return Err(Error::Config("within-well correlation must lie in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn n_obs(&self) -> usize {
        SCENARIO_SIZES[self.id as usize - 1].0
    }
}

/// Sampling times of one well: a regular cadence over its service period
/// with per-visit jitter of up to ±30% of the spacing.
fn cadence(m: usize, active: Range, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let h = active.width() / m as f64;
    (0..m)
        .map(|k| (active.lo + (k as f64 + 0.5 + 0.6 * (rng.random::<f64>() - 0.5)) * h).clamp(active.lo, active.hi))
        .collect()
}

/// Splits `total` observations over wells in proportion to their service
/// periods (a common cadence), the remainder going to randomly chosen wells.
fn split_counts(total: usize, wells: &[WellSite], rng: &mut ChaCha8Rng) -> Vec<usize> {
    let span: f64 = wells.iter().map(|w| w.active.width()).sum();
    let mut counts: Vec<usize> = wells
        .iter()
        .map(|w| ((total as f64 * w.active.width() / span).floor() as usize).max(1))
        .collect();
    let assigned: usize = counts.iter().sum();
    for w in sample(rng, wells.len(), total - assigned) {
        counts[w] += 1;
    }
    counts
}

/// Wells of a scenario and its `(well index, time)` sampling slots.
pub type SamplingDesign = (Vec<WellSite>, Vec<(usize, f64)>);

/// Wells and `(well index, time)` sampling slots of a scenario.
pub fn scenario_design(spec: &ScenarioSpec) -> Result<SamplingDesign> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let wells = match spec.id {
        2 => (0..280)
            .map(|i| WellSite {
                id: format!("R{:03}", i + 1),
                s1: rng.random(),
                s2: rng.random(),
                active: Range { lo: 0.0, hi: 1.0 },
            })
            .collect(),
        _ => fixed_well_layout(),
    };
    let total = if spec.id == 3 { 1402 } else { spec.n_obs() };
    let counts = split_counts(total, &wells, &mut rng);
    let mut slots = Vec::with_capacity(total);
    for (w, &m) in counts.iter().enumerate() {
        slots.extend(cadence(m, wells[w].active, &mut rng).into_iter().map(|t| (w, t)));
    }
    if spec.id == 3 {
        // one visit per well, the rest uniformly over the remaining slots
        let mut keep = Vec::with_capacity(100);
        let mut taken = vec![false; slots.len()];
        let mut start = 0;
        for &m in &counts {
            let k = start + rng.random_range(0..m);
            taken[k] = true;
            keep.push(k);
            start += m;
        }
        let free: Vec<usize> = (0..slots.len()).filter(|&k| !taken[k]).collect();
        keep.extend(sample(&mut rng, free.len(), 100 - wells.len()).into_iter().map(|i| free[i]));
        keep.sort_unstable();
        slots = keep.into_iter().map(|k| slots[k]).collect();
    }
    Ok((wells, slots))
}

/// Equicorrelated Gaussian errors: a shared per-well effect with variance
/// `ρσ²` plus independent noise with variance `(1 − ρ)σ²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    pub sd: f64,
    pub within_well_corr: f64,
}

impl NoiseModel {
    pub fn draw(&self, well_of: &[usize], n_wells: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        if self.sd == 0.0 {
            return vec![0.0; well_of.len()];
        }
        let shared = Normal::new(0.0, self.sd * self.within_well_corr.sqrt()).expect("finite sd");
        let own = Normal::new(0.0, self.sd * (1.0 - self.within_well_corr).sqrt()).expect("finite sd");
        let effects: Vec<f64> = (0..n_wells).map(|_| shared.sample(rng)).collect();
        well_of.iter().map(|&w| effects[w] + own.sample(rng)).collect()
    }
}

fn population_sd(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).sqrt()
}

/// Samples a scenario dataset from `truth`, with noise added on the
/// `log(y + 1)` scale and values clamped at zero.
pub fn build_scenario(truth: &GroundTruth, spec: &ScenarioSpec) -> Result<Dataset> {
    let (wells, slots) = scenario_design(spec)?;
    let transform = Transform::Log1p;
    let signal: Vec<f64> = slots
        .iter()
        .map(|&(w, t)| transform.forward(truth.interpolate(wells[w].s1, wells[w].s2, t).max(0.0)))
        .collect();
    let noise = NoiseModel {
        sd: if spec.snr.is_finite() { population_sd(&signal) / spec.snr } else { 0.0 },
        within_well_corr: spec.within_well_corr,
    };
    // noise stream independent of the design stream
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x6e6f697365);
    let well_of: Vec<usize> = slots.iter().map(|s| s.0).collect();
    let errors = noise.draw(&well_of, wells.len(), &mut rng);
    let obs = slots
        .iter()
        .zip(signal.iter().zip(&errors))
        .map(|(&(w, t), (z, e))| Observation {
            well_id: wells[w].id.clone(),
            s1: wells[w].s1,
            s2: wells[w].s2,
            t,
            value: transform.inverse(z + e).max(0.0),
        })
        .collect();
    Dataset::new(obs, transform)
}

/// Squared-error summary of a fitted surface against the truth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorSummary {
    pub ise: f64,
    pub max_abs_error: f64,
}

/// Cells of a regular grid over the hull's bounding box and time interval,
/// restricted to centres inside the hull, with the truth on the working
/// scale at each centre.
#[derive(Debug, Clone)]
pub struct IseEvaluator {
    axes: [Vec<f64>; 3],
    inside: Vec<usize>,
    truth: Vec<f64>,
    cell_volume: f64,
}

/// Default ISE resolution per dimension.
pub const ISE_RESOLUTION: [usize; 3] = [100, 100, 100];

fn cell_centers(r: Range, n: usize) -> Vec<f64> {
    let h = r.width() / n as f64;
    (0..n).map(|i| r.lo + (i as f64 + 0.5) * h).collect()
}

impl IseEvaluator {
    pub fn new(truth: &GroundTruth, hull: &HullRegion, transform: Transform, resolution: [usize; 3]) -> Result<Self> {
        let xs: Vec<f64> = hull.polygon.iter().map(|p| p[0]).collect();
        let ys: Vec<f64> = hull.polygon.iter().map(|p| p[1]).collect();
        let fold = |v: &[f64]| Range {
            lo: v.iter().copied().fold(f64::INFINITY, f64::min),
            hi: v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        };
        let boxes = [fold(&xs), fold(&ys), hull.time];
        let axes = [
            cell_centers(boxes[0], resolution[0]),
            cell_centers(boxes[1], resolution[1]),
            cell_centers(boxes[2], resolution[2]),
        ];
        let mut inside = Vec::new();
        let mut values = Vec::new();
        let (n1, n2) = (resolution[0], resolution[1]);
        for (k, &t) in axes[2].iter().enumerate() {
            for (j, &y) in axes[1].iter().enumerate() {
                for (i, &x) in axes[0].iter().enumerate() {
                    if hull.contains(x, y, t) {
                        inside.push(i + n1 * (j + n2 * k));
                        values.push(transform.forward(truth.interpolate(x, y, t).max(0.0)));
                    }
                }
            }
        }
        if inside.is_empty() {
            return Err(Error::Data("the hull region contains no evaluation cells".into()));
        }
        let cell_volume = boxes
            .iter()
            .zip(resolution)
            .map(|(r, n)| r.width() / n as f64)
            .product();
        Ok(IseEvaluator {
            axes,
            inside,
            truth: values,
            cell_volume,
        })
    }

    pub fn cell_count(&self) -> usize {
        self.inside.len()
    }

    pub fn volume(&self) -> f64 {
        self.cell_volume * self.inside.len() as f64
    }

    /// ISE and max |error| of the working-scale surface with `coefficients`.
    pub fn evaluate(&self, fit: &FitResult) -> Result<ErrorSummary> {
        let eval = GridEvaluator::new(&fit.spec, [&self.axes[0], &self.axes[1], &self.axes[2]])?;
        let pred = eval.evaluate(&fit.coefficients);
        let mut sse = 0.0;
        let mut max_abs: f64 = 0.0;
        for (&idx, &m) in self.inside.iter().zip(&self.truth) {
            let e = pred[idx] - m;
            sse += e * e;
            max_abs = max_abs.max(e.abs());
        }
        Ok(ErrorSummary {
            ise: sse * self.cell_volume,
            max_abs_error: max_abs,
        })
    }
}

/// Integrated squared error of `fit` over the hull, on the working scale.
pub fn integrated_squared_error(fit: &FitResult, truth: &GroundTruth, hull: &HullRegion) -> Result<f64> {
    Ok(IseEvaluator::new(truth, hull, fit.transform, ISE_RESOLUTION)?.evaluate(fit)?.ise)
}

/// Hull region of a generated dataset.
pub fn scenario_hull(ds: &Dataset) -> Result<HullRegion> {
    convex_hull_region(ds)
}
