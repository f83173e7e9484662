//! Central finite-difference oracle for graph-built scalar functions.
//!
//! The function under test is rebuilt from scratch for every perturbation,
//! so the only thing shared with the analytic path is the forward code.

#![allow(dead_code)]

use occufield::tensor::{Graph, ParamSet, Tensor, Var};

pub const STEP: f64 = 1e-4;
pub const TOLERANCE: f64 = 1e-3;

/// Relative error with a small floor so vanishing gradients compare absolutely.
pub fn rel_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-4)
}

pub struct Report {
    pub checked: usize,
    pub worst: f64,
}

/// Checks d(scalar)/d(every input element) and d(scalar)/d(every parameter).
pub fn check<F>(inputs: &[Tensor<f64>], params: &ParamSet<f64>, build: F) -> Report
where
    F: Fn(&mut Graph<f64>, &[Var], &ParamSet<f64>) -> Var,
{
    check_with_step(inputs, params, build, |_, _| STEP)
}

/// Same as [`check`] with a per-element step chooser `(is_param, value) -> h`.
pub fn check_with_step<F, S>(inputs: &[Tensor<f64>], params: &ParamSet<f64>, build: F, step: S) -> Report
where
    F: Fn(&mut Graph<f64>, &[Var], &ParamSet<f64>) -> Var,
    S: Fn(bool, f64) -> f64,
{
    let eval = |inputs: &[Tensor<f64>], params: &ParamSet<f64>| -> f64 {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
        let out = build(&mut g, &vars, params);
        g.value(out).data()[0]
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.input_with_grad(t.clone())).collect();
    let out = build(&mut g, &vars, params);
    g.backward(out).expect("backward");
    let mut analytic_params = params.clone();
    analytic_params.zero_grad();
    g.accumulate_into(&mut analytic_params);

    let mut report = Report { checked: 0, worst: 0.0 };
    let mut record = |a: f64, n: f64| {
        let e = rel_error(a, n);
        report.checked += 1;
        if e > report.worst {
            report.worst = e;
        }
    };

    for (ti, t) in inputs.iter().enumerate() {
        let analytic = g.grad(vars[ti]).map(|s| s.to_vec()).unwrap_or_else(|| vec![0.0; t.len()]);
        for (i, &a) in analytic.iter().enumerate() {
            let h = step(false, t.data()[i]);
            let mut plus = inputs.to_vec();
            plus[ti].data_mut()[i] += h;
            let mut minus = inputs.to_vec();
            minus[ti].data_mut()[i] -= h;
            let numeric = (eval(&plus, params) - eval(&minus, params)) / (2.0 * h);
            record(a, numeric);
        }
    }

    let n_tensors = params.tensors().count();
    for k in 0..n_tensors {
        let analytic = analytic_params.tensors().nth(k).unwrap().grad().unwrap().to_vec();
        for (i, &a) in analytic.iter().enumerate() {
            let base = params.tensors().nth(k).unwrap().data()[i];
            let h = step(true, base);
            let perturb = |delta: f64| {
                let mut p = params.clone();
                p.tensors_mut().nth(k).unwrap().data_mut()[i] += delta;
                p
            };
            let numeric = (eval(inputs, &perturb(h)) - eval(inputs, &perturb(-h))) / (2.0 * h);
            record(a, numeric);
        }
    }
    report
}
