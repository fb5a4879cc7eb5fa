//! Panel of per-period cross-sections: excess returns plus lagged,
//! rank-normalized characteristics.
//!
//! The row for period `s` carries the realized return of period `s` and the
//! characteristics observed at the end of `s - 1`. A decision made at the end
//! of period `t` may therefore read returns up to `t` and characteristics up
//! to period `t + 1`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::{fmt_num, parse_num, read_csv, write_text};
use crate::linalg::{GramSolver, Matrix, OlsOptions, Vector};

/// Integer month index from a configured epoch.
pub type Period = i64;
pub type AssetId = u64;

#[derive(Debug, Clone, PartialEq)]
pub struct CrossSection {
    pub period: Period,
    pub assets: Vec<AssetId>,
    /// Excess returns, decimals.
    pub returns: Vector,
    /// `N x P` lagged characteristics in `[-1, 1]`.
    pub chars: Matrix,
}

impl CrossSection {
    pub fn len(&self) -> usize {
        self.assets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assets.is_empty()
    }

    pub fn return_of(&self, asset: AssetId) -> Option<f64> {
        self.assets.binary_search(&asset).ok().map(|i| self.returns[i])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PanelData {
    n_chars: usize,
    sections: Vec<CrossSection>,
}

impl PanelData {
    /// Builds a panel, sorting sections by period and assets by id.
    pub fn new(n_chars: usize, mut sections: Vec<CrossSection>) -> Result<Self> {
        sections.sort_by_key(|s| s.period);
        for w in sections.windows(2) {
            if w[0].period == w[1].period {
                return Err(Error::Invalid(format!("duplicate period {}", w[0].period)));
            }
        }
        for s in &mut sections {
            if s.chars.ncols() != n_chars || s.chars.nrows() != s.assets.len() || s.returns.len() != s.assets.len() {
                return Err(Error::Shape(format!("cross-section {} has inconsistent shapes", s.period)));
            }
            if !s.returns.iter().all(|r| r.is_finite()) {
                return Err(Error::Invalid(format!("non-finite return in period {}", s.period)));
            }
            if !s.chars.iter().all(|c| c.is_finite() && (-1.0..=1.0).contains(c)) {
                return Err(Error::Invalid(format!("characteristic outside [-1, 1] in period {}", s.period)));
            }
            if s.assets.windows(2).any(|w| w[0] >= w[1]) {
                let mut order: Vec<usize> = (0..s.assets.len()).collect();
                order.sort_by_key(|&i| s.assets[i]);
                if order.windows(2).any(|w| s.assets[w[0]] == s.assets[w[1]]) {
                    return Err(Error::Invalid(format!("duplicate asset id in period {}", s.period)));
                }
                s.assets = order.iter().map(|&i| s.assets[i]).collect();
                s.returns = Vector::from_iterator(order.len(), order.iter().map(|&i| s.returns[i]));
                let old = s.chars.clone();
                s.chars = Matrix::from_fn(order.len(), n_chars, |r, c| old[(order[r], c)]);
            }
        }
        Ok(Self { n_chars, sections })
    }

    pub fn n_chars(&self) -> usize {
        self.n_chars
    }

    pub fn len(&self) -> usize {
        self.sections.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sections.is_empty()
    }

    pub fn sections(&self) -> &[CrossSection] {
        &self.sections
    }

    pub fn section(&self, idx: usize) -> &CrossSection {
        &self.sections[idx]
    }

    pub fn periods(&self) -> Vec<Period> {
        self.sections.iter().map(|s| s.period).collect()
    }

    pub fn index_of(&self, period: Period) -> Option<usize> {
        self.sections.binary_search_by_key(&period, |s| s.period).ok()
    }

    /// Number of sections with `period <= p`.
    pub fn count_through(&self, p: Period) -> usize {
        self.sections.partition_point(|s| s.period <= p)
    }

    pub fn sections_mut(&mut self) -> &mut [CrossSection] {
        &mut self.sections
    }

    /// Characteristic-managed portfolio returns `(Z'Z)^{-1} Z'r` for every
    /// period. These depend only on data, so they are computed once per panel.
    pub fn managed_returns(&self, opts: OlsOptions) -> Result<Vec<Vector>> {
        self.sections
            .iter()
            .map(|s| {
                let solver = GramSolver::new(&s.chars, opts)?;
                Ok(solver.solve(&(s.chars.transpose() * &s.returns)))
            })
            .collect()
    }

    /// Equal-weighted cross-sectional mean return per period.
    pub fn equal_weight_market(&self) -> Vec<(Period, f64)> {
        self.sections.iter().map(|s| (s.period, if s.is_empty() { 0.0 } else { s.returns.mean() })).collect()
    }

    /// Reads the long-form panel CSV `period,asset_id,ret,c_1,...,c_P`.
    /// Characteristics are rank-normalized per period and characteristic;
    /// empty fields are imputed to the cross-sectional median (zero).
    pub fn read_csv(path: &Path) -> Result<Self> {
        let table = read_csv(path)?;
        let h = &table.header;
        if h.len() < 4 || h[0] != "period" || h[1] != "asset_id" || h[2] != "ret" {
            return Err(Error::malformed(path, 1, "expected header period,asset_id,ret,c_1,...,c_P"));
        }
        let p = h.len() - 3;
        type Raw = (Vec<AssetId>, Vec<f64>, Vec<Vec<Option<f64>>>);
        let mut by_period: BTreeMap<Period, Raw> = BTreeMap::new();
        for (line, fields) in &table.rows {
            if fields.len() != p + 3 {
                return Err(Error::malformed(path, *line, format!("expected {} fields, found {}", p + 3, fields.len())));
            }
            let period: Period = fields[0].parse().map_err(|_| Error::malformed(path, *line, format!("bad period '{}'", fields[0])))?;
            let asset: AssetId = fields[1].parse().map_err(|_| Error::malformed(path, *line, format!("bad asset_id '{}'", fields[1])))?;
            let ret = parse_num(&fields[2])
                .filter(|r| r.is_finite())
                .ok_or_else(|| Error::malformed(path, *line, format!("bad ret '{}'", fields[2])))?;
            let mut chars = Vec::with_capacity(p);
            for (j, f) in fields[3..].iter().enumerate() {
                if f.is_empty() {
                    chars.push(None);
                } else {
                    let v = parse_num(f)
                        .filter(|v| v.is_finite())
                        .ok_or_else(|| Error::malformed(path, *line, format!("bad c_{} '{}'", j + 1, f)))?;
                    chars.push(Some(v));
                }
            }
            let entry = by_period.entry(period).or_default();
            entry.0.push(asset);
            entry.1.push(ret);
            entry.2.push(chars);
        }
        let mut sections = Vec::with_capacity(by_period.len());
        for (period, (assets, rets, raw)) in by_period {
            let n = assets.len();
            let mut chars = Matrix::zeros(n, p);
            for j in 0..p {
                let col: Vec<Option<f64>> = raw.iter().map(|row| row[j]).collect();
                for (i, v) in rank_normalize(&col).into_iter().enumerate() {
                    chars[(i, j)] = v;
                }
            }
            sections.push(CrossSection { period, assets, returns: Vector::from_vec(rets), chars });
        }
        PanelData::new(p, sections)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("period,asset_id,ret");
        for j in 1..=self.n_chars {
            write!(out, ",c_{j}").unwrap();
        }
        out.push('\n');
        for s in &self.sections {
            for (i, a) in s.assets.iter().enumerate() {
                write!(out, "{},{},{}", s.period, a, fmt_num(s.returns[i])).unwrap();
                for j in 0..self.n_chars {
                    write!(out, ",{}", fmt_num(s.chars[(i, j)])).unwrap();
                }
                out.push('\n');
            }
        }
        write_text(path, &out)
    }
}

/// Maps raw values to `2 (k - 0.5) / n - 1` where `k` is the (tie-averaged)
/// rank among the `n` present values. Missing values map to 0.
pub fn rank_normalize(raw: &[Option<f64>]) -> Vec<f64> {
    let mut present: Vec<(usize, f64)> = raw.iter().enumerate().filter_map(|(i, v)| v.map(|x| (i, x))).collect();
    let mut out = vec![0.0; raw.len()];
    let n = present.len();
    if n == 0 {
        return out;
    }
    present.sort_by(|a, b| a.1.total_cmp(&b.1));
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && present[end].1 == present[start].1 {
            end += 1;
        }
        // ranks start+1..=end share their average
        let avg_rank = (start + 1 + end) as f64 / 2.0;
        let v = 2.0 * (avg_rank - 0.5) / n as f64 - 1.0;
        for &(i, _) in &present[start..end] {
            out[i] = v;
        }
        start = end;
    }
    out
}
