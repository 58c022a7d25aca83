//! Finite-difference gradient checking.

use std::collections::BTreeMap;

use crate::error::DiffError;
use crate::param::ParamStore;
use crate::tape::{DTensor, Tape};

/// Worst offender for one parameter.
#[derive(Clone, Debug)]
pub struct EntryReport {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub per_param: BTreeMap<String, EntryReport>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.per_param.values().fold(0.0, |a, e| a.max(e.rel_err))
    }

    /// Errors out if any parameter exceeds the tolerance.
    pub fn require(&self, tolerance: f64) -> Result<(), DiffError> {
        for (key, e) in self.per_param.iter() {
            if !(e.rel_err <= tolerance) {
                return Err(DiffError::GradCheckFailed {
                    param: format!("{key}[{}]", e.index),
                    max_rel_err: e.rel_err,
                    tolerance,
                });
            }
        }
        Ok(())
    }
}

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares reverse-mode gradients of a scalar function against central
/// finite differences (f(p+h) - f(p-h)) / 2h, per scalar parameter.
///
/// `build` must construct the same computation for the same store contents;
/// any randomness has to be frozen by the caller.
pub fn grad_check<F>(build: F, params: &ParamStore, step: f64) -> Result<GradCheckReport, DiffError>
where
    F: Fn(&mut Tape, &ParamStore) -> DTensor,
{
    if !(1e-7..=1e-3).contains(&step) {
        return Err(DiffError::InvalidArgument(format!(
            "finite-difference step {step} outside [1e-7, 1e-3]"
        )));
    }

    let mut tape = Tape::new();
    let out = build(&mut tape, params);
    let value = tape.scalar_value(out);
    if !value.is_finite() {
        return Err(DiffError::NonFinite {
            what: "grad_check function value".into(),
        });
    }
    tape.backward(out);
    let analytic = tape.param_grads();

    let eval = |store: &ParamStore| -> f64 {
        let mut t = Tape::new();
        let out = build(&mut t, store);
        t.scalar_value(out)
    };

    let mut report = GradCheckReport::default();
    let mut probe = params.clone();
    let keys: Vec<String> = params.iter().map(|(k, _)| k.clone()).collect();
    for key in keys {
        let len = params.get(&key).len();
        let mut worst = EntryReport {
            index: 0,
            analytic: 0.0,
            numeric: 0.0,
            rel_err: 0.0,
        };
        for i in 0..len {
            let orig = params.get(&key).data()[i];
            probe.get_mut(&key).data_mut()[i] = orig + step;
            let up = eval(&probe);
            probe.get_mut(&key).data_mut()[i] = orig - step;
            let down = eval(&probe);
            probe.get_mut(&key).data_mut()[i] = orig;
            if !up.is_finite() || !down.is_finite() {
                return Err(DiffError::NonFinite {
                    what: format!("grad_check probe of `{key}[{i}]`"),
                });
            }
            let numeric = (up - down) / (2.0 * step);
            let a = analytic
                .get(&key)
                .map(|g| g.data()[i])
                .unwrap_or(0.0);
            let err = rel_err(a, numeric);
            if err >= worst.rel_err {
                worst = EntryReport {
                    index: i,
                    analytic: a,
                    numeric,
                    rel_err: err,
                };
            }
        }
        report.per_param.insert(key, worst);
    }
    Ok(report)
}
