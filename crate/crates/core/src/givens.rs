//! Row-sequential sparse QR by Givens rotations.
//!
//! Rows are merged one at a time into an upper-echelon factor: an incoming
//! row whose leading column already owns a factor row is rotated against it
//! until its leading entry vanishes; otherwise it claims that column. Rows
//! that vanish completely span the orthogonal complement. Because every
//! factor row has a distinct leading column, the factor has full row rank
//! and `RᵀR = AᵀA` holds without pivoting.
//!
//! `Qᵀ` is never formed. Each input row is a *register*; the rotation log
//! replays `Qᵀ` on any payload that is stacked row-wise alongside the matrix.

use crate::sparse::SparseMatrix;

type SparseRow = Vec<(usize, f64)>;

#[derive(Debug, Clone, Copy)]
struct Rotation {
    keep: usize,
    other: usize,
    c: f64,
    s: f64,
}

/// Leading entries below this multiple of the largest input entry are roundoff.
const NOISE_TOL: f64 = 64.0 * f64::EPSILON;

#[derive(Debug, Clone)]
struct Slot {
    register: usize,
    row: SparseRow,
}

#[derive(Debug, Clone)]
pub struct RowQr {
    n_rows: usize,
    n_cols: usize,
    slots: Vec<Option<Slot>>,
    rotations: Vec<Rotation>,
    dropped: Vec<usize>,
}

/// `(c·a + s·b, −s·a + c·b)` on sparse rows.
fn rotate_rows(a: &[(usize, f64)], b: &[(usize, f64)], c: f64, s: f64) -> (SparseRow, SparseRow) {
    let mut na = Vec::with_capacity(a.len().max(b.len()));
    let mut nb = Vec::with_capacity(a.len().max(b.len()));
    let (mut i, mut j) = (0, 0);
    while i < a.len() || j < b.len() {
        let (col, va, vb) = match (a.get(i), b.get(j)) {
            (Some(&(ca, xa)), Some(&(cb, xb))) if ca == cb => {
                i += 1;
                j += 1;
                (ca, xa, xb)
            }
            (Some(&(ca, xa)), Some(&(cb, _))) if ca < cb => {
                i += 1;
                (ca, xa, 0.0)
            }
            (Some(&(ca, xa)), None) => {
                i += 1;
                (ca, xa, 0.0)
            }
            (_, Some(&(cb, xb))) => {
                j += 1;
                (cb, 0.0, xb)
            }
            (None, None) => unreachable!(),
        };
        let x = c * va + s * vb;
        let y = -s * va + c * vb;
        if x != 0.0 {
            na.push((col, x));
        }
        if y != 0.0 {
            nb.push((col, y));
        }
    }
    (na, nb)
}

impl RowQr {
    /// Factors `m`. Elimination prunes only roundoff-level leading entries;
    /// once every row is absorbed, pivots at or below `rel_tol` times the
    /// largest entry of `m` are treated as zero and their rows re-absorbed,
    /// so the rank decision is made on finished pivots.
    pub fn factor(m: &SparseMatrix, rel_tol: f64) -> RowQr {
        let scale = m
            .rows()
            .flat_map(|(_, v)| v.iter())
            .fold(0.0_f64, |acc, v| acc.max(v.abs()));
        let noise = NOISE_TOL * scale;
        let threshold = (rel_tol * scale).max(noise);
        let mut qr = RowQr {
            n_rows: m.n_rows(),
            n_cols: m.n_cols(),
            slots: vec![None; m.n_cols()],
            rotations: Vec::new(),
            dropped: Vec::new(),
        };
        for (reg, (cols, vals)) in m.rows().enumerate() {
            let row: SparseRow = cols.iter().copied().zip(vals.iter().copied()).collect();
            qr.absorb(reg, row, noise);
        }
        // stripping a pivot moves the row's leading column right, so this ends
        while let Some(k) = qr.slots.iter().position(|s| s.as_ref().is_some_and(|s| s.row[0].1.abs() <= threshold)) {
            let Slot { register, mut row } = qr.slots[k].take().expect("slot present");
            row.remove(0);
            qr.absorb(register, row, noise);
        }
        qr
    }

    fn absorb(&mut self, reg: usize, mut row: SparseRow, threshold: f64) {
        loop {
            while row.first().is_some_and(|e| e.1.abs() <= threshold) {
                row.remove(0);
            }
            let Some(&(k, w)) = row.first() else {
                self.dropped.push(reg);
                return;
            };
            match self.slots[k].as_mut() {
                None => {
                    self.slots[k] = Some(Slot { register: reg, row });
                    return;
                }
                Some(slot) => {
                    let a = slot.row[0].1;
                    let rho = a.hypot(w);
                    let (c, s) = (a / rho, w / rho);
                    let (mut keep, mut other) = rotate_rows(&slot.row, &row, c, s);
                    keep[0] = (k, rho);
                    if other.first().is_some_and(|e| e.0 == k) {
                        other.remove(0);
                    }
                    slot.row = keep;
                    self.rotations.push(Rotation {
                        keep: slot.register,
                        other: reg,
                        c,
                        s,
                    });
                    row = other;
                }
            }
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn rank(&self) -> usize {
        self.slots.iter().filter(|s| s.is_some()).count()
    }

    pub fn rotation_count(&self) -> usize {
        self.rotations.len()
    }

    /// Leading columns of the factor rows, increasing.
    pub fn pivot_columns(&self) -> Vec<usize> {
        self.slots
            .iter()
            .enumerate()
            .filter_map(|(k, s)| s.as_ref().map(|_| k))
            .collect()
    }

    /// Registers that hold the factor rows, in pivot-column order.
    pub fn slot_registers(&self) -> Vec<usize> {
        self.slots.iter().flatten().map(|s| s.register).collect()
    }

    /// Registers whose rows were annihilated, in input order.
    pub fn dropped_registers(&self) -> &[usize] {
        &self.dropped
    }

    /// The `rank × n_cols` upper-echelon factor.
    pub fn r_factor(&self) -> SparseMatrix {
        let rows = self.slots.iter().flatten().map(|s| s.row.clone()).collect();
        SparseMatrix::from_rows(self.n_cols, rows)
    }

    /// Replays `Qᵀ` in place on a payload holding `width` values per register,
    /// stored contiguously register after register.
    pub fn apply_qt(&self, data: &mut [f64], width: usize) {
        assert_eq!(data.len(), self.n_rows * width);
        for rot in &self.rotations {
            let (lo, hi) = (rot.keep.min(rot.other), rot.keep.max(rot.other));
            let (head, tail) = data.split_at_mut(hi * width);
            let x_lo = &mut head[lo * width..(lo + 1) * width];
            let x_hi = &mut tail[..width];
            let (keep, other) = if rot.keep == lo { (x_lo, x_hi) } else { (x_hi, x_lo) };
            for (a, b) in keep.iter_mut().zip(other.iter_mut()) {
                let (x, y) = (*a, *b);
                *a = rot.c * x + rot.s * y;
                *b = -rot.s * x + rot.c * y;
            }
        }
    }

    /// `Qᵀv` split into the factor part (pivot order) and the complement part
    /// (dropped-register order).
    pub fn split_qt_vec(&self, v: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut w = v.to_vec();
        self.apply_qt(&mut w, 1);
        let top = self.slot_registers().iter().map(|&r| w[r]).collect();
        let bottom = self.dropped.iter().map(|&r| w[r]).collect();
        (top, bottom)
    }
}
