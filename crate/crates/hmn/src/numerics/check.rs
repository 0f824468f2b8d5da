use super::{NamedArrays, Real};

/// Worst observed disagreement for one parameter group.
#[derive(Clone, Debug)]
pub struct FdGroup {
    pub name: String,
    pub max_rel_err: f64,
    pub worst_element: usize,
    pub analytic_at_worst: f64,
    pub numeric_at_worst: f64,
    pub elements: usize,
    pub failures: usize,
}

/// Per-group comparison of analytic gradients against central differences.
#[derive(Clone, Debug)]
pub struct FdReport {
    pub groups: Vec<FdGroup>,
    pub epsilon: f64,
    pub tolerance: f64,
}

impl FdReport {
    pub fn max_rel_err(&self) -> f64 {
        self.groups.iter().map(|g| g.max_rel_err).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.groups.iter().all(|g| g.failures == 0)
    }
}

impl std::fmt::Display for FdReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(
            f,
            "gradient check (eps={:.1e}, tol={:.1e}): max rel err {:.3e}",
            self.epsilon,
            self.tolerance,
            self.max_rel_err()
        )?;
        for g in &self.groups {
            writeln!(
                f,
                "  {:<28} max {:.3e} at [{}] (analytic {:+.6e}, numeric {:+.6e}), {} failures / {} elems",
                g.name, g.max_rel_err, g.worst_element, g.analytic_at_worst, g.numeric_at_worst,
                g.failures, g.elements,
            )?;
        }
        Ok(())
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Compare `analytic` against central finite differences of `loss_fn` taken
/// around `params`, element by element. `loss_fn` must be deterministic: any
/// teacher-forcing or masking randomness has to be frozen by the caller.
///
/// The report never errors; disagreements above `tolerance` are counted as
/// failures per group.
pub fn finite_difference_check<R: Real>(
    params: &NamedArrays<R>,
    analytic: &NamedArrays<R>,
    mut loss_fn: impl FnMut(&NamedArrays<R>) -> R,
    epsilon: f64,
    tolerance: f64,
) -> FdReport {
    let mut work = params.clone();
    let mut groups = Vec::with_capacity(params.len());
    for gi in 0..params.len() {
        let mut group = FdGroup {
            name: params.name(gi).to_string(),
            max_rel_err: 0.0,
            worst_element: 0,
            analytic_at_worst: 0.0,
            numeric_at_worst: 0.0,
            elements: params.array(gi).len(),
            failures: 0,
        };
        for ei in 0..params.array(gi).len() {
            let orig = work.array(gi).data()[ei];
            let x = orig.as_f64();

            work.array_mut(gi).data_mut()[ei] = R::from_f64(x + epsilon);
            let plus = loss_fn(&work).as_f64();
            work.array_mut(gi).data_mut()[ei] = R::from_f64(x - epsilon);
            let minus = loss_fn(&work).as_f64();
            work.array_mut(gi).data_mut()[ei] = orig;

            let numeric = (plus - minus) / (2.0 * epsilon);
            let a = analytic.array(gi).data()[ei].as_f64();
            let err = rel_err(a, numeric);
            if err > group.max_rel_err {
                group.max_rel_err = err;
                group.worst_element = ei;
                group.analytic_at_worst = a;
                group.numeric_at_worst = numeric;
            }
            if err > tolerance {
                group.failures += 1;
            }
        }
        groups.push(group);
    }
    FdReport {
        groups,
        epsilon,
        tolerance,
    }
}
