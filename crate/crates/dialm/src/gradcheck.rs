//! Central-difference verification of reverse-mode gradients.
//!
//! The loss under test is re-evaluated at `θ ± ε` per sampled coordinate and
//! `(f(θ+ε) − f(θ−ε)) / 2ε` is compared against the recorded gradient.
//! Everything runs at f64. A coordinate passes when
//! `|analytic − numeric| ≤ atol + rtol·max(|analytic|, |numeric|)`: the
//! relative term catches wrong backward rules, while `atol` absorbs the
//! O(ε²·f‴) truncation noise of the central difference on coordinates whose
//! true gradient is itself at noise level.

use std::collections::BTreeMap;
use std::fmt;

use crate::tensor::Tensor;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    pub eps: f64,
    pub rtol: f64,
    pub atol: f64,
    /// Coordinates sampled per parameter; tensors at most this large are
    /// checked exhaustively.
    pub max_coords: usize,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig { eps: 1e-5, rtol: 1e-4, atol: 1e-7, max_coords: 16, seed: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct CoordCheck {
    pub coord: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub abs_err: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone)]
pub struct ParamReport {
    pub name: String,
    pub coords: Vec<CoordCheck>,
    /// Worst `abs_err / (atol + rtol·scale)` over the checked coordinates;
    /// the parameter passes iff this is ≤ 1.
    pub max_err_ratio: f64,
    pub pass: bool,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub params: Vec<ParamReport>,
    pub max_err_ratio: f64,
    pub pass: bool,
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for p in &self.params {
            writeln!(
                f,
                "{:<28} coords={:<4} err_ratio={:.3e} {}",
                p.name,
                p.coords.len(),
                p.max_err_ratio,
                if p.pass { "ok" } else { "FAIL" }
            )?;
        }
        write!(
            f,
            "overall err_ratio={:.3e} {}",
            self.max_err_ratio,
            if self.pass { "ok" } else { "FAIL" }
        )
    }
}

/// Loss evaluation: maps current parameter values to the scalar loss and the
/// analytic gradient of every parameter.
pub type LossFn<'a> =
    dyn FnMut(&BTreeMap<String, Tensor<f64>>) -> Result<(f64, BTreeMap<String, Vec<f64>>)> + 'a;

/// Checks `d loss / d θ` for every parameter in `params`.
pub fn grad_check(
    params: &mut BTreeMap<String, Tensor<f64>>,
    f: &mut LossFn<'_>,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport> {
    let (_, analytic) = f(params)?;
    for (name, t) in params.iter() {
        match analytic.get(name) {
            None => {
                return Err(Error::Contract(format!("no gradient recorded for {}", name)));
            }
            Some(g) if g.len() != t.numel() => {
                return Err(Error::Contract(format!(
                    "{}: gradient of {} elements for {} weights",
                    name,
                    g.len(),
                    t.numel()
                )));
            }
            _ => {}
        }
    }

    let names: Vec<String> = params.keys().cloned().collect();
    let mut reports = Vec::with_capacity(names.len());
    for (pi, name) in names.iter().enumerate() {
        let numel = params[name].numel();
        let coords = sample_coords(numel, cfg, pi as u64);
        let mut checks = Vec::with_capacity(coords.len());
        let mut max_ratio = 0.0f64;
        for coord in coords {
            let orig = params.get(name).unwrap().data()[coord];
            set_coord(params, name, coord, orig + cfg.eps);
            let (lp, _) = f(params)?;
            set_coord(params, name, coord, orig - cfg.eps);
            let (lm, _) = f(params)?;
            set_coord(params, name, coord, orig);

            let numeric = (lp - lm) / (2.0 * cfg.eps);
            let a = analytic[name][coord];
            let scale = a.abs().max(numeric.abs());
            let abs_err = (a - numeric).abs();
            let rel_err = if scale == 0.0 { 0.0 } else { abs_err / scale };
            max_ratio = max_ratio.max(abs_err / (cfg.atol + cfg.rtol * scale));
            checks.push(CoordCheck { coord, analytic: a, numeric, abs_err, rel_err });
        }
        reports.push(ParamReport {
            name: name.clone(),
            coords: checks,
            max_err_ratio: max_ratio,
            pass: max_ratio <= 1.0,
        });
    }

    let max_err_ratio = reports.iter().map(|r| r.max_err_ratio).fold(0.0, f64::max);
    let pass = reports.iter().all(|r| r.pass);
    Ok(GradCheckReport { params: reports, max_err_ratio, pass })
}

fn sample_coords(numel: usize, cfg: &GradCheckConfig, param_index: u64) -> Vec<usize> {
    if numel <= cfg.max_coords {
        return (0..numel).collect();
    }
    let mut rng = crate::rng::stream(cfg.seed, "gradcheck-coords", 0, param_index);
    let mut picked = rand::seq::index::sample(&mut rng, numel, cfg.max_coords).into_vec();
    picked.sort_unstable();
    picked
}

fn set_coord(params: &mut BTreeMap<String, Tensor<f64>>, name: &str, coord: usize, v: f64) {
    params.get_mut(name).unwrap().data_mut()[coord] = v;
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Scalar, Tape};

    fn quadratic_params() -> BTreeMap<String, Tensor<f64>> {
        let mut p = BTreeMap::new();
        p.insert(
            "w".to_string(),
            Tensor::new(vec![2, 3], vec![0.3, -0.7, 1.1, 0.05, 0.9, -0.4]).unwrap(),
        );
        p.insert("b".to_string(), Tensor::new(vec![3], vec![0.1, -0.2, 0.3]).unwrap());
        p
    }

    fn eval_quadratic(
        params: &BTreeMap<String, Tensor<f64>>,
        grad_scale: f64,
    ) -> crate::Result<(f64, BTreeMap<String, Vec<f64>>)> {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::new(vec![2, 2], vec![1.0, 2.0, -1.5, 0.5]).unwrap());
        let w = tape.param(params["w"].clone());
        let b = tape.param(params["b"].clone());
        let h = tape.matmul(x, w)?;
        let h = tape.add_row(h, b)?;
        let h = tape.gelu(h)?;
        let sq = tape.mul(h, h)?;
        let loss = tape.mean_all(sq)?;
        tape.backward(loss)?;
        let mut grads = BTreeMap::new();
        let scale_vec = |g: &[f64]| g.iter().map(|&v| v * grad_scale).collect::<Vec<_>>();
        grads.insert("w".to_string(), scale_vec(tape.grad(w).unwrap()));
        grads.insert("b".to_string(), scale_vec(tape.grad(b).unwrap()));
        Ok((tape.value(loss).item()?.to_f64(), grads))
    }

    #[test]
    fn correct_gradients_pass() {
        let mut params = quadratic_params();
        let report = grad_check(
            &mut params,
            &mut |p| eval_quadratic(p, 1.0),
            &GradCheckConfig::default(),
        )
        .unwrap();
        assert!(report.pass, "{}", report);
        assert!(report.max_err_ratio < 0.01, "clean gradients sit far inside the allowance");
    }

    #[test]
    fn corrupted_gradients_fail() {
        let mut params = quadratic_params();
        let report = grad_check(
            &mut params,
            &mut |p| eval_quadratic(p, 2.0),
            &GradCheckConfig::default(),
        )
        .unwrap();
        assert!(!report.pass);
    }

    #[test]
    fn missing_gradient_is_a_contract_error() {
        let mut params = quadratic_params();
        let res = grad_check(
            &mut params,
            &mut |p| {
                let (l, mut g) = eval_quadratic(p, 1.0)?;
                g.remove("b");
                Ok((l, g))
            },
            &GradCheckConfig::default(),
        );
        assert!(matches!(res, Err(crate::Error::Contract(_))));
    }

    #[test]
    fn large_tensors_sample_a_subset() {
        let mut params = BTreeMap::new();
        params.insert("big".to_string(), Tensor::new(vec![10, 10], vec![0.01; 100]).unwrap());
        let report = grad_check(
            &mut params,
            &mut |p| {
                let mut tape = Tape::<f64>::new();
                let w = tape.param(p["big"].clone());
                let sq = tape.mul(w, w)?;
                let loss = tape.sum_all(sq)?;
                tape.backward(loss)?;
                let mut grads = BTreeMap::new();
                grads.insert("big".to_string(), tape.grad(w).unwrap().to_vec());
                Ok((tape.value(loss).item()?.to_f64(), grads))
            },
            &GradCheckConfig { max_coords: 7, ..GradCheckConfig::default() },
        )
        .unwrap();
        assert_eq!(report.params[0].coords.len(), 7);
        assert!(report.pass);
    }
}
