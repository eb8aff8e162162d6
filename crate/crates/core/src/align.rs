//! Gapless local alignment: the score matrix `T`, its excursions, the maximal
//! score `Mₙ` and the exceedance count `Cₙ(t)`.
//!
//! `T` is indexed by the number of letters consumed, so `T[0][j] = T[i][0] = 0`
//! and `T[i][j] = max(T[i-1][j-1] + f(X_i, Y_j), 0)`. Each diagonal is a
//! reflected random walk and is scanned independently.

use std::ops::Add;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::{ScoreModel, ScoreTable};

/// Largest side for which [`score_matrix`] materializes `T`.
pub const FULL_MATRIX_MAX: usize = 1000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Sequences {
    pub x: Vec<u8>,
    pub y: Vec<u8>,
}

impl Sequences {
    /// Checks every symbol against the alphabet of `model`.
    pub fn new(model: &ScoreModel, x: Vec<u8>, y: Vec<u8>) -> Result<Self> {
        let n = model.n_states();
        for (sequence, s) in [(0, &x), (1, &y)] {
            if let Some(position) = s.iter().position(|&c| c as usize >= n) {
                return Err(Error::SymbolOutOfAlphabet { sequence, position, symbol: s[position].to_string() });
            }
        }
        Ok(Self { x, y })
    }

    pub fn n_x(&self) -> usize {
        self.x.len()
    }

    pub fn n_y(&self) -> usize {
        self.y.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum EndReason {
    ScoreDropped,
    HitBoundary,
}

/// A maximal positive stretch of one diagonal, starting at a zero cell `(i, j)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Excursion {
    pub i: usize,
    pub j: usize,
    pub delta: usize,
    pub peak: f64,
    pub end_reason: EndReason,
}

impl Excursion {
    /// Last cell of the excursion.
    pub fn end(&self) -> (usize, usize) {
        (self.i + self.delta, self.j + self.delta)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlignmentResult {
    pub n_x: usize,
    pub n_y: usize,
    pub m_n: f64,
    /// Ordered by diagonal offset `j - i`, then by position along the diagonal.
    pub excursions: Vec<Excursion>,
}

impl AlignmentResult {
    /// `Cₙ(t)`: excursions with peak strictly above `t`.
    pub fn c_of_t(&self, t: f64) -> usize {
        self.excursions.iter().filter(|e| e.peak > t).count()
    }

    /// Excursion carrying `Mₙ`, the first one in scan order on ties.
    pub fn best(&self) -> Option<&Excursion> {
        self.excursions.iter().find(|e| e.peak == self.m_n)
    }
}

pub fn count_excesses(result: &AlignmentResult, t: f64) -> usize {
    result.c_of_t(t)
}

/// First cell `(i, j)` and length of the diagonal with offset `j - i`.
fn diagonal(n_x: usize, n_y: usize, offset: isize) -> Option<(usize, usize, usize)> {
    let (i0, j0) = if offset >= 0 { (0, offset as usize) } else { (offset.unsigned_abs(), 0) };
    if i0 >= n_x || j0 >= n_y {
        return None;
    }
    Some((i0, j0, (n_x - i0).min(n_y - j0)))
}

/// Score increments `f` along the diagonal with offset `j - i`.
///
/// For pair-transition scores the step into the first cell has no
/// predecessor pair and scores 0.
pub fn diagonal_increments(model: &ScoreModel, seqs: &Sequences, offset: isize) -> Vec<f64> {
    let Some((i0, j0, len)) = diagonal(seqs.n_x(), seqs.n_y(), offset) else {
        return Vec::new();
    };
    let n = model.n_states();
    (0..len)
        .map(|k| {
            let (a, b) = (seqs.x[i0 + k] as usize, seqs.y[j0 + k] as usize);
            match model.score() {
                ScoreTable::Pair(f) => f[(a, b)],
                ScoreTable::Transition(f) => {
                    if i0 + k == 0 || j0 + k == 0 {
                        0.0
                    } else {
                        let (pa, pb) = (seqs.x[i0 + k - 1] as usize, seqs.y[j0 + k - 1] as usize);
                        f[(pa * n + pb, a * n + b)]
                    }
                }
            }
        })
        .collect()
}

/// Reflection at zero of the partial sums of `increments`: `T_k = max(T_{k-1} + s_k, 0)`.
pub fn reflect(increments: &[f64]) -> Vec<f64> {
    let mut t = 0.0_f64;
    increments
        .iter()
        .map(|&s| {
            t = (t + s).max(0.0);
            t
        })
        .collect()
}

/// `T` along one diagonal, excluding the boundary zero.
pub fn reflected_walk(model: &ScoreModel, seqs: &Sequences, offset: isize) -> Result<Vec<f64>> {
    let bound = seqs.n_x().max(seqs.n_y()) as isize;
    if offset.abs() >= bound {
        return Err(Error::InvalidArgument(format!("diagonal offset {offset} outside (-{bound}, {bound})")));
    }
    Ok(reflect(&diagonal_increments(model, seqs, offset)))
}

fn scan_diagonal(i0: usize, j0: usize, t: &[f64], out: &mut Vec<Excursion>) {
    let mut start = 0usize;
    let mut peak = 0.0_f64;
    for (k, &v) in t.iter().enumerate() {
        if v <= 0.0 {
            if peak > 0.0 {
                out.push(Excursion {
                    i: i0 + start,
                    j: j0 + start,
                    delta: k + 1 - start,
                    peak,
                    end_reason: EndReason::ScoreDropped,
                });
            }
            start = k + 1;
            peak = 0.0;
        } else if v > peak {
            peak = v;
        }
    }
    if peak > 0.0 {
        out.push(Excursion {
            i: i0 + start,
            j: j0 + start,
            delta: t.len() - start,
            peak,
            end_reason: EndReason::HitBoundary,
        });
    }
}

/// Scan every diagonal and record all excursions with a positive peak.
pub fn score_matrix_scan(model: &ScoreModel, seqs: &Sequences) -> AlignmentResult {
    let (n_x, n_y) = (seqs.n_x(), seqs.n_y());
    let mut excursions = Vec::new();
    if n_x > 0 && n_y > 0 {
        for offset in -(n_x as isize - 1)..n_y as isize {
            let (i0, j0, _) = diagonal(n_x, n_y, offset).expect("offset in range");
            let t = reflect(&diagonal_increments(model, seqs, offset));
            scan_diagonal(i0, j0, &t, &mut excursions);
        }
    }
    let m_n = excursions.iter().map(|e| e.peak).fold(0.0, f64::max);
    AlignmentResult { n_x, n_y, m_n, excursions }
}

/// The full `(n_x + 1) x (n_y + 1)` score matrix, for inspection.
pub fn score_matrix(model: &ScoreModel, seqs: &Sequences) -> Result<Matrix> {
    let (n_x, n_y) = (seqs.n_x(), seqs.n_y());
    if n_x > FULL_MATRIX_MAX || n_y > FULL_MATRIX_MAX {
        return Err(Error::InvalidArgument(format!("full matrix limited to {FULL_MATRIX_MAX} per side")));
    }
    let mut t = Matrix::zeros(n_x + 1, n_y + 1);
    if n_x > 0 && n_y > 0 {
        for offset in -(n_x as isize - 1)..n_y as isize {
            let (i0, j0, _) = diagonal(n_x, n_y, offset).expect("offset in range");
            for (k, v) in reflect(&diagonal_increments(model, seqs, offset)).into_iter().enumerate() {
                t[(i0 + k + 1, j0 + k + 1)] = v;
            }
        }
    }
    Ok(t)
}

/// Cell type for the fast scanner.
pub trait ScanCell: Copy + Default + PartialOrd + Add<Output = Self> + Send + Sync {
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    /// Cell value `c` with `peak > c` iff `peak > floor` for peaks of this type.
    fn threshold(floor: f64) -> Self;
}

macro_rules! scan_cell {
    ($t:ty, $thr:expr) => {
        impl ScanCell for $t {
            #[inline]
            fn from_f64(v: f64) -> Self {
                v as $t
            }
            #[inline]
            fn to_f64(self) -> f64 {
                self as f64
            }
            #[inline]
            fn threshold(floor: f64) -> Self {
                $thr(floor) as $t
            }
        }
    };
}
scan_cell!(i16, f64::floor);
scan_cell!(i32, f64::floor);
scan_cell!(f64, std::convert::identity);

/// `Mₙ` and the peaks above a floor, without positions.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct PeakSummary {
    pub m_n: f64,
    /// Peaks strictly above `floor`, in no particular order.
    pub peaks: Vec<f64>,
    /// Never negative: only positive peaks are excursions.
    pub floor: f64,
}

impl PeakSummary {
    /// `Cₙ(t)` for any `t >= floor`.
    pub fn c_of_t(&self, t: f64) -> usize {
        debug_assert!(t >= self.floor || self.floor == 0.0);
        self.peaks.iter().filter(|&&p| p > t).count()
    }
}

/// Row-at-a-time scanner over preallocated buffers.
///
/// All diagonals advance together one row of `T` per step, so the inner loop
/// is branch-free over `j` and vectorizes.
pub struct PeakScanner {
    kind: CellKind,
}

#[derive(Debug, Clone, Copy)]
enum CellKind {
    I16,
    I32,
    F64,
}

impl PeakScanner {
    /// Chooses integer cells for lattice models when `max_len * max|f|` fits.
    pub fn new(model: &ScoreModel, max_len: usize) -> Self {
        let integral = model.score().matrix().as_slice().iter().all(|v| v.fract() == 0.0 && v.abs() < 1e6);
        let bound = model.score().matrix().max_abs() * (max_len as f64 + 1.0);
        let kind = if !integral {
            CellKind::F64
        } else if bound < i16::MAX as f64 / 2.0 {
            CellKind::I16
        } else if bound < i32::MAX as f64 / 2.0 {
            CellKind::I32
        } else {
            CellKind::F64
        };
        Self { kind }
    }

    pub fn scan(&self, model: &ScoreModel, seqs: &Sequences, floor: f64) -> PeakSummary {
        match self.kind {
            CellKind::I16 => scan_peaks::<i16>(model, seqs, floor),
            CellKind::I32 => scan_peaks::<i32>(model, seqs, floor),
            CellKind::F64 => scan_peaks::<f64>(model, seqs, floor),
        }
    }
}

/// Peaks above `floor` using a scanner chosen for `model`.
pub fn scan_peaks_auto(model: &ScoreModel, seqs: &Sequences, floor: f64) -> PeakSummary {
    PeakScanner::new(model, seqs.n_x().max(seqs.n_y())).scan(model, seqs, floor)
}

#[inline]
fn cmax<T: ScanCell>(a: T, b: T) -> T {
    if a > b { a } else { b }
}

/// Row-wise scan with cell type `T`; integer cells require integer scores.
pub fn scan_peaks<T: ScanCell>(model: &ScoreModel, seqs: &Sequences, floor: f64) -> PeakSummary {
    let (n_x, n_y) = (seqs.n_x(), seqs.n_y());
    let mut out = PeakSummary { m_n: 0.0, peaks: Vec::new(), floor };
    if n_x == 0 || n_y == 0 {
        return out;
    }
    let n = model.n_states();
    let floor = floor.max(0.0);
    out.floor = floor;
    let thr = T::threshold(floor);
    let zero = T::default();

    // Column profiles for pair scores: prof[a][j] = f(a, y_j).
    let pair_prof: Option<Vec<Vec<T>>> = match model.score() {
        ScoreTable::Pair(f) => {
            Some((0..n).map(|a| seqs.y.iter().map(|&b| T::from_f64(f[(a, b as usize)])).collect()).collect())
        }
        ScoreTable::Transition(_) => None,
    };
    let mut row_prof = vec![zero; n_y];
    let mut t_prev = vec![zero; n_y + 1];
    let mut p_prev = vec![zero; n_y + 1];
    let mut t_cur = vec![zero; n_y + 1];
    let mut p_cur = vec![zero; n_y + 1];
    let mut best = zero;

    for i in 0..n_x {
        let prof: &[T] = match (&pair_prof, model.score()) {
            (Some(p), _) => &p[seqs.x[i] as usize],
            (None, ScoreTable::Transition(f)) => {
                row_prof[0] = zero;
                if i == 0 {
                    row_prof.iter_mut().for_each(|v| *v = zero);
                } else {
                    let (pa, a) = (seqs.x[i - 1] as usize, seqs.x[i] as usize);
                    for j in 1..n_y {
                        let (pb, b) = (seqs.y[j - 1] as usize, seqs.y[j] as usize);
                        row_prof[j] = T::from_f64(f[(pa * n + pb, a * n + b)]);
                    }
                }
                &row_prof
            }
            (None, ScoreTable::Pair(_)) => unreachable!(),
        };
        let mut hit = false;
        let mut row_best = zero;
        {
            let tp = &t_prev[..n_y];
            let pp = &p_prev[..n_y];
            let tc = &mut t_cur[1..];
            let pc = &mut p_cur[1..];
            for j in 0..n_y {
                let tn = cmax(tp[j] + prof[j], zero);
                let old = pp[j];
                let dropped = !(tn > zero);
                hit |= dropped & (old > thr);
                let pk = cmax(old, tn);
                pc[j] = if dropped { zero } else { pk };
                tc[j] = tn;
                row_best = cmax(row_best, tn);
            }
        }
        best = cmax(best, row_best);
        if hit {
            for j in 0..n_y {
                if !(t_cur[j + 1] > zero) && p_prev[j] > thr {
                    out.peaks.push(p_prev[j].to_f64());
                }
            }
        }
        // The diagonal through the last column ends here.
        if p_cur[n_y] > thr {
            out.peaks.push(p_cur[n_y].to_f64());
        }
        std::mem::swap(&mut t_prev, &mut t_cur);
        std::mem::swap(&mut p_prev, &mut p_cur);
    }
    // Remaining diagonals end on the last row; the last column was counted above.
    for j in 1..n_y {
        if p_prev[j] > thr {
            out.peaks.push(p_prev[j].to_f64());
        }
    }
    out.m_n = best.to_f64();
    out
}

/// Parse a sequence file: one sequence per line, blank lines and `#`
/// comments skipped. Whitespace-separated tokens are symbol names or
/// indices; a line without whitespace is read one character per symbol.
pub fn parse_sequences(model: &ScoreModel, text: &str, path: &str) -> Result<Vec<Vec<u8>>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let tokens: Vec<String> = if line.split_whitespace().nth(1).is_some() {
            line.split_whitespace().map(str::to_string).collect()
        } else {
            line.chars().map(String::from).collect()
        };
        let mut seq = Vec::with_capacity(tokens.len());
        for (position, tok) in tokens.iter().enumerate() {
            match model.symbol_index(tok) {
                Some(i) => seq.push(i as u8),
                None => {
                    return Err(Error::Parse {
                        path: path.to_string(),
                        line: lineno + 1,
                        message: Error::SymbolOutOfAlphabet { sequence: out.len(), position, symbol: tok.clone() }
                            .to_string(),
                    })
                }
            }
        }
        out.push(seq);
    }
    Ok(out)
}

pub fn load_sequences(model: &ScoreModel, path: impl AsRef<Path>) -> Result<Vec<Vec<u8>>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    parse_sequences(model, &text, &path.display().to_string())
}
