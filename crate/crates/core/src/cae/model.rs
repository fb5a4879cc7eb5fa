use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::write_text;
use crate::linalg::{cross_sectional_ols, Matrix, OlsOptions, Vector};
use crate::panel::{PanelData, Period};

const FORMAT_TAG: &str = "factorlab-cae";
const FORMAT_VERSION: u32 = 1;

/// One affine map of the beta network, `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weights: Matrix,
    pub bias: Vector,
}

/// A trained conditional autoencoder ("expert"): the characteristic-to-beta
/// network plus the factor projection `W_f`.
#[derive(Debug, Clone, PartialEq)]
pub struct CaeModel {
    /// Hidden layers (ReLU) followed by the linear output layer.
    pub layers: Vec<DenseLayer>,
    /// `K x P` projection from managed-portfolio returns to factors.
    pub w_f: Matrix,
    pub training_window: (Period, Period),
}

impl CaeModel {
    pub fn n_chars(&self) -> usize {
        self.w_f.ncols()
    }

    pub fn n_factors(&self) -> usize {
        self.w_f.nrows()
    }

    pub fn hidden_widths(&self) -> Vec<usize> {
        self.layers[..self.layers.len() - 1].iter().map(|l| l.weights.nrows()).collect()
    }

    /// Model with every weight and bias zero.
    pub fn zeros(p: usize, hidden: &[usize], k: usize) -> Self {
        let mut dims = vec![p];
        dims.extend_from_slice(hidden);
        dims.push(k);
        let layers = dims.windows(2).map(|w| DenseLayer { weights: Matrix::zeros(w[1], w[0]), bias: Vector::zeros(w[1]) }).collect();
        Self { layers, w_f: Matrix::zeros(k, p), training_window: (0, 0) }
    }

    pub fn validate(&self) -> Result<()> {
        let (k, p) = self.w_f.shape();
        let mut width = p;
        for (i, l) in self.layers.iter().enumerate() {
            if l.weights.ncols() != width || l.bias.len() != l.weights.nrows() {
                return Err(Error::Shape(format!("layer {i} does not chain")));
            }
            width = l.weights.nrows();
        }
        if self.layers.is_empty() || width != k {
            return Err(Error::Shape(format!("output width {width} differs from K = {k}")));
        }
        let finite = self.layers.iter().all(|l| l.weights.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
            && self.w_f.iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::Invalid("model has non-finite parameters".into()));
        }
        Ok(())
    }

    /// Factor loadings `beta(z)` for one characteristic vector.
    pub fn beta_forward(&self, z: &Vector) -> Vector {
        let last = self.layers.len() - 1;
        let mut a = z.clone();
        for (i, l) in self.layers.iter().enumerate() {
            a = &l.weights * a + &l.bias;
            if i < last {
                a.apply(|v| *v = v.max(0.0));
            }
        }
        a
    }

    /// `f_s = W_f (Z'Z)^{-1} Z'r` for one cross-section.
    pub fn extract_factors(&self, z: &Matrix, r: &Vector, opts: OlsOptions) -> Result<Vector> {
        let managed = cross_sectional_ols(z, r, opts)?;
        Ok(&self.w_f * managed)
    }

    /// Sum of absolute values of all weight matrices (biases excluded).
    pub fn l1_norm(&self) -> f64 {
        self.layers.iter().map(|l| l.weights.abs().sum()).sum::<f64>() + self.w_f.abs().sum()
    }

    /// Writes the versioned text format: a header, shapes, then row-major
    /// parameters in shortest round-trip notation.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        writeln!(out, "{FORMAT_TAG} {FORMAT_VERSION}").unwrap();
        writeln!(out, "window {} {}", self.training_window.0, self.training_window.1).unwrap();
        writeln!(out, "layers {}", self.layers.len()).unwrap();
        let write_matrix = |out: &mut String, tag: &str, m: &Matrix| {
            writeln!(out, "{tag} {} {}", m.nrows(), m.ncols()).unwrap();
            for r in 0..m.nrows() {
                let row: Vec<String> = (0..m.ncols()).map(|c| format!("{:e}", m[(r, c)])).collect();
                writeln!(out, "{}", row.join(" ")).unwrap();
            }
        };
        for l in &self.layers {
            write_matrix(&mut out, "weights", &l.weights);
            let b: Vec<String> = l.bias.iter().map(|v| format!("{v:e}")).collect();
            writeln!(out, "bias {}", l.bias.len()).unwrap();
            writeln!(out, "{}", b.join(" ")).unwrap();
        }
        write_matrix(&mut out, "wf", &self.w_f);
        write_text(path, &out)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cur = LineCursor { path, lines: text.lines().enumerate().collect(), pos: 0 };

        let (l, h) = cur.next("header")?;
        if h.len() != 2 || h[0] != FORMAT_TAG {
            return Err(cur.bad(l, "not a factorlab model file"));
        }
        if cur.int(l, h[1])? != FORMAT_VERSION as i64 {
            return Err(cur.bad(l, "unsupported model format version"));
        }
        let (l, w) = cur.next("window")?;
        if w.len() != 3 || w[0] != "window" {
            return Err(cur.bad(l, "expected 'window <first> <last>'"));
        }
        let window = (cur.int(l, w[1])?, cur.int(l, w[2])?);
        let (l, n) = cur.next("layers")?;
        if n.len() != 2 || n[0] != "layers" {
            return Err(cur.bad(l, "expected 'layers <n>'"));
        }
        let n_layers = cur.int(l, n[1])? as usize;
        let mut layers = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            let weights = cur.matrix("weights")?;
            let (l, h) = cur.next("bias")?;
            if h.len() != 2 || h[0] != "bias" {
                return Err(cur.bad(l, "expected 'bias <len>'"));
            }
            let len = cur.int(l, h[1])? as usize;
            let (l, vals) = cur.next("bias values")?;
            if vals.len() != len {
                return Err(cur.bad(l, "wrong number of bias values"));
            }
            let bias = Vector::from_vec(vals.iter().map(|v| cur.num(l, v)).collect::<Result<_>>()?);
            layers.push(DenseLayer { weights, bias });
        }
        let w_f = cur.matrix("wf")?;
        let model = CaeModel { layers, w_f, training_window: window };
        model.validate()?;
        Ok(model)
    }
}

struct LineCursor<'a> {
    path: &'a Path,
    lines: Vec<(usize, &'a str)>,
    pos: usize,
}

impl<'a> LineCursor<'a> {
    fn bad(&self, line: usize, msg: &str) -> Error {
        Error::malformed(self.path, line, msg.to_string())
    }

    fn next(&mut self, what: &str) -> Result<(usize, Vec<&'a str>)> {
        let (i, l) = *self
            .lines
            .get(self.pos)
            .ok_or_else(|| Error::malformed(self.path, self.lines.len(), format!("unexpected end of file, expected {what}")))?;
        self.pos += 1;
        Ok((i + 1, l.split_whitespace().collect()))
    }

    fn num(&self, line: usize, s: &str) -> Result<f64> {
        s.parse::<f64>().map_err(|_| self.bad(line, "bad number"))
    }

    fn int(&self, line: usize, s: &str) -> Result<i64> {
        s.parse::<i64>().map_err(|_| self.bad(line, "bad integer"))
    }

    fn matrix(&mut self, tag: &str) -> Result<Matrix> {
        let (l, h) = self.next(tag)?;
        if h.len() != 3 || h[0] != tag {
            return Err(self.bad(l, &format!("expected '{tag} <rows> <cols>'")));
        }
        let (rows, cols) = (self.int(l, h[1])? as usize, self.int(l, h[2])? as usize);
        let mut m = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let (l, vals) = self.next("matrix row")?;
            if vals.len() != cols {
                return Err(self.bad(l, "wrong number of columns"));
            }
            for (c, v) in vals.iter().enumerate() {
                m[(r, c)] = self.num(l, v)?;
            }
        }
        Ok(m)
    }
}

/// Expert ensemble. Averaging factor series across experts is equivalent to
/// using the mean projection matrix, because `f = W_f x` is linear in `W_f`.
#[derive(Debug, Clone, PartialEq)]
pub struct CaeEnsemble {
    pub experts: Vec<CaeModel>,
}

impl CaeEnsemble {
    pub fn new(experts: Vec<CaeModel>) -> Result<Self> {
        let first = experts.first().ok_or_else(|| Error::Invalid("empty expert ensemble".into()))?;
        let shape = first.w_f.shape();
        if experts.iter().any(|m| m.w_f.shape() != shape) {
            return Err(Error::Shape("experts disagree on (K, P)".into()));
        }
        Ok(Self { experts })
    }

    pub fn n_factors(&self) -> usize {
        self.experts[0].n_factors()
    }

    pub fn n_chars(&self) -> usize {
        self.experts[0].n_chars()
    }

    /// Element-wise mean of the experts' `W_f`.
    pub fn mean_projection(&self) -> Matrix {
        let mut acc = Matrix::zeros(self.n_factors(), self.n_chars());
        for m in &self.experts {
            acc += &m.w_f;
        }
        acc / self.experts.len() as f64
    }

    /// Expert-averaged factor series for the panel rows `range`, given the
    /// precomputed managed-portfolio returns of those rows.
    pub fn factor_series(&self, managed: &[Vector]) -> Vec<Vector> {
        let n = self.experts.len() as f64;
        managed
            .iter()
            .map(|x| {
                let mut f = Vector::zeros(self.n_factors());
                for m in &self.experts {
                    f += &m.w_f * x;
                }
                f / n
            })
            .collect()
    }
}

/// Writes each window's experts to `dir/window_<end>/expert_<e>.cae`.
pub fn save_windows(dir: &Path, windows: &[(Period, CaeEnsemble)]) -> Result<Vec<std::path::PathBuf>> {
    let mut files = Vec::new();
    for (end, ens) in windows {
        for (e, m) in ens.experts.iter().enumerate() {
            let p = dir.join(format!("window_{end}")).join(format!("expert_{e:03}.cae"));
            m.save(&p)?;
            files.push(p);
        }
    }
    Ok(files)
}

/// Reads a directory written by [`save_windows`], ordered by window end.
pub fn load_windows(dir: &Path) -> Result<Vec<(Period, CaeEnsemble)>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        let Some(end) = name.strip_prefix("window_").and_then(|s| s.parse::<Period>().ok()) else {
            continue;
        };
        let mut files: Vec<_> = std::fs::read_dir(entry.path())
            .map_err(|e| Error::io(entry.path(), e))?
            .filter_map(|f| f.ok().map(|f| f.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "cae"))
            .collect();
        files.sort();
        let experts = files.iter().map(|f| CaeModel::load(f)).collect::<Result<Vec<_>>>()?;
        out.push((end, CaeEnsemble::new(experts).map_err(|e| Error::Invalid(format!("{}: {e}", entry.path().display())))?));
    }
    if out.is_empty() {
        return Err(Error::Invalid(format!("{}: no window_<period> model directories", dir.display())));
    }
    out.sort_by_key(|w| w.0);
    Ok(out)
}

/// Averaged factor series over panel rows `rows`.
pub fn factor_series(models: &[CaeModel], panel: &PanelData, rows: std::ops::Range<usize>, opts: OlsOptions) -> Result<Vec<Vector>> {
    let ens = CaeEnsemble::new(models.to_vec())?;
    let managed: Vec<Vector> = rows
        .map(|i| {
            let s = panel.section(i);
            cross_sectional_ols(&s.chars, &s.returns, opts)
        })
        .collect::<Result<_>>()?;
    Ok(ens.factor_series(&managed))
}
