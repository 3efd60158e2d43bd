//! Paired t-test and Mantel permutation test.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Stream;

pub const DEFAULT_ALPHA: f64 = 0.05;
pub const EXHAUSTIVE_MAX_LABELS: usize = 7;
pub const DEFAULT_MONTE_CARLO_PERMUTATIONS: usize = 10_000;

const CF_TOLERANCE: f64 = 1e-10;
const CF_MAX_ITER: usize = 10_000;
const RHO_TIE_TOLERANCE: f64 = 1e-12;

/// Natural log of the gamma function for `x > 0` (Lanczos, g = 7).
pub fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = COEF[0];
    let t = x + G + 0.5;
    for (i, c) in COEF.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

fn beta_cf(x: f64, a: f64, b: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=CF_MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < CF_TOLERANCE {
            break;
        }
    }
    h
}

/// Regularized incomplete beta `I_x(a, b)` for `x` in [0, 1].
pub fn incomplete_beta(x: f64, a: f64, b: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(x, a, b) / a
    } else {
        1.0 - front * beta_cf(1.0 - x, b, a) / b
    }
}

/// P(|T| > |t|) for Student's t with `df` degrees of freedom.
pub fn student_t_two_sided_p(t: f64, df: f64) -> f64 {
    if t.is_nan() {
        return f64::NAN;
    }
    if t.is_infinite() {
        return 0.0;
    }
    incomplete_beta(df / (df + t * t), df / 2.0, 0.5).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedTestResult {
    pub t_statistic: f64,
    pub degrees_of_freedom: usize,
    pub p_value: f64,
    pub significant: bool,
}

/// Two-sided paired t-test on `x - y`.
///
/// All-zero differences give t = 0 and p = 1. Constant nonzero differences
/// give an infinite t and p = 0.
pub fn paired_t_test(x: &[f64], y: &[f64], alpha: f64) -> Result<PairedTestResult> {
    if x.len() != y.len() {
        return Err(Error::arg(format!("paired samples differ in length ({} vs {})", x.len(), y.len())));
    }
    let n = x.len();
    if n < 2 {
        return Err(Error::arg("paired t-test needs at least two pairs"));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::arg(format!("alpha must be in (0, 1), got {alpha}")));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::arg("paired t-test inputs must be finite"));
    }
    let d: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
    let nf = n as f64;
    let mean = d.iter().sum::<f64>() / nf;
    let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (nf - 1.0);
    let df = n - 1;
    let (t, p) = if d.iter().all(|&v| v == 0.0) {
        (0.0, 1.0)
    } else if var == 0.0 {
        (mean.signum() * f64::INFINITY, 0.0)
    } else {
        let t = mean / (var.sqrt() / nf.sqrt());
        (t, student_t_two_sided_p(t, df as f64))
    };
    Ok(PairedTestResult { t_statistic: t, degrees_of_freedom: df, p_value: p, significant: p < alpha })
}

/// Dense row-major square matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SquareMatrix {
    size: usize,
    values: Vec<f64>,
}

impl SquareMatrix {
    pub fn new(size: usize, values: Vec<f64>) -> Result<Self> {
        if size < 2 {
            return Err(Error::arg("matrix must be at least 2x2"));
        }
        if values.len() != size * size {
            return Err(Error::arg(format!("{} values for a {size}x{size} matrix", values.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::arg("matrix entries must be finite"));
        }
        Ok(SquareMatrix { size, values })
    }

    /// Symmetric matrix from its strict upper triangle (row by row) and a zero diagonal.
    pub fn from_upper(size: usize, upper: &[f64]) -> Result<Self> {
        if upper.len() != size * size.saturating_sub(1) / 2 {
            return Err(Error::arg("wrong upper-triangle length"));
        }
        let mut values = vec![0.0; size * size];
        let mut it = upper.iter();
        for i in 0..size {
            for j in i + 1..size {
                let v = *it.next().expect("length checked");
                values[i * size + j] = v;
                values[j * size + i] = v;
            }
        }
        SquareMatrix::new(size, values)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.size + j]
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.size).all(|i| (i + 1..self.size).all(|j| self.get(i, j) == self.get(j, i)))
    }

    pub fn upper_triangle(&self) -> Vec<f64> {
        self.permuted_upper(&(0..self.size).collect::<Vec<_>>())
    }

    /// Upper triangle of `P M P^T`, where `perm[i]` is the original label at position `i`.
    pub fn permuted_upper(&self, perm: &[usize]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.size * (self.size - 1) / 2);
        for i in 0..self.size {
            for j in i + 1..self.size {
                out.push(self.get(perm[i], perm[j]));
            }
        }
        out
    }

    pub fn permuted(&self, perm: &[usize]) -> SquareMatrix {
        let k = self.size;
        let values = (0..k * k).map(|idx| self.get(perm[idx / k], perm[idx % k])).collect();
        SquareMatrix { size: k, values }
    }
}

/// Average ranks (1-based), ties sharing the mean of their positions.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = r;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    (saa > 0.0 && sbb > 0.0).then(|| (sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

fn check_pair(a: &SquareMatrix, b: &SquareMatrix) -> Result<()> {
    if a.size != b.size {
        return Err(Error::arg(format!("matrix sizes differ ({} vs {})", a.size, b.size)));
    }
    if !a.is_symmetric() || !b.is_symmetric() {
        return Err(Error::arg("co-occurrence matrices must be symmetric"));
    }
    Ok(())
}

fn spearman_ranks(ra: &[f64], upper_b: &[f64]) -> Result<f64> {
    pearson(ra, &average_ranks(upper_b))
        .ok_or_else(|| Error::UndefinedCorrelation("off-diagonal entries are constant".into()))
}

/// Spearman correlation of the strict upper triangles.
pub fn spearman_offdiag(a: &SquareMatrix, b: &SquareMatrix) -> Result<f64> {
    check_pair(a, b)?;
    spearman_ranks(&average_ranks(&a.upper_triangle()), &b.upper_triangle())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MantelResult {
    pub rho: f64,
    pub p_value: f64,
    pub permutation_count: usize,
    pub exhaustive: bool,
}

/// Every permutation of `0..k` in lexicographic order.
pub fn all_permutations(k: usize) -> Vec<Vec<usize>> {
    let mut perm: Vec<usize> = (0..k).collect();
    let mut out = vec![perm.clone()];
    loop {
        let Some(i) = (1..k).rev().find(|&i| perm[i - 1] < perm[i]) else {
            return out;
        };
        let j = (i..k).rev().find(|&j| perm[j] > perm[i - 1]).expect("pivot exists");
        perm.swap(i - 1, j);
        perm[i..].reverse();
        out.push(perm.clone());
    }
}

/// One-sided Mantel test for positive association, permuting the labels of `b`.
///
/// Up to seven labels every permutation is enumerated and
/// `p = #{rho_perm >= rho_obs} / k!`. Beyond that `permutations` seeded draws
/// are taken and `p = (#{rho_perm >= rho_obs} + 1) / (permutations + 1)`.
pub fn mantel_test(a: &SquareMatrix, b: &SquareMatrix, permutations: usize, seed: u64) -> Result<MantelResult> {
    check_pair(a, b)?;
    let ra = average_ranks(&a.upper_triangle());
    let rho = spearman_ranks(&ra, &b.upper_triangle())?;
    let k = a.size;
    let at_least = |perm: &[usize]| -> Result<bool> {
        Ok(spearman_ranks(&ra, &b.permuted_upper(perm))? >= rho - RHO_TIE_TOLERANCE)
    };
    if k <= EXHAUSTIVE_MAX_LABELS {
        let perms = all_permutations(k);
        let hits = perms
            .par_iter()
            .map(|p| at_least(p).map(usize::from))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .sum::<usize>();
        return Ok(MantelResult {
            rho,
            p_value: hits as f64 / perms.len() as f64,
            permutation_count: perms.len(),
            exhaustive: true,
        });
    }
    if permutations == 0 {
        return Err(Error::arg("Monte Carlo Mantel test needs at least one permutation"));
    }
    let hits = (0..permutations)
        .into_par_iter()
        .map(|i| {
            let mut perm: Vec<usize> = (0..k).collect();
            Stream::new(seed, i as u64).shuffle(&mut perm);
            at_least(&perm).map(usize::from)
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .sum::<usize>();
    Ok(MantelResult {
        rho,
        p_value: (hits + 1) as f64 / (permutations + 1) as f64,
        permutation_count: permutations,
        exhaustive: false,
    })
}

pub const STATS_CSV_HEADER: &str = "test,statistic,df_or_permutations,p_value,significant";

/// One row of the statistical comparison CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatRow {
    pub test: String,
    pub statistic: f64,
    pub df_or_permutations: usize,
    pub p_value: f64,
    pub significant: bool,
}

impl StatRow {
    pub fn from_t(name: &str, r: &PairedTestResult) -> Self {
        StatRow {
            test: name.to_string(),
            statistic: r.t_statistic,
            df_or_permutations: r.degrees_of_freedom,
            p_value: r.p_value,
            significant: r.significant,
        }
    }

    pub fn from_mantel(name: &str, r: &MantelResult, alpha: f64) -> Self {
        StatRow {
            test: name.to_string(),
            statistic: r.rho,
            df_or_permutations: r.permutation_count,
            p_value: r.p_value,
            significant: r.p_value < alpha,
        }
    }

    pub fn csv_line(&self) -> String {
        format!("{},{},{},{},{}", self.test, self.statistic, self.df_or_permutations, self.p_value, self.significant)
    }
}

pub fn stats_csv(rows: &[StatRow]) -> String {
    let mut out = format!("{STATS_CSV_HEADER}\n");
    for r in rows {
        out.push_str(&r.csv_line());
        out.push('\n');
    }
    out
}
