//! Support code for the acceptance suite: per-criterion reporting, the
//! shared data directory and central finite-difference gradient checks.

use std::panic::{self, AssertUnwindSafe};
use std::path::PathBuf;
use std::time::{Duration, Instant};

use rulfuse::dataset::{synth, DatasetId};
use rulfuse::numkit::{ParamStore, SeededRng, Session, Tensor, Var};

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;
/// Largest accepted relative error between analytic and numeric gradients.
pub const FD_TOL: f64 = 1e-4;
/// Floor of the relative-error denominator.
pub const FD_FLOOR: f64 = 1e-6;
/// Below this every analytic entry of a tensor counts as structurally zero
/// (e.g. attention key biases, which softmax cancels).
pub const ZERO_GRAD: f64 = 1e-12;
/// Largest accepted |numeric| for a structurally zero gradient.
pub const FD_ZERO_TOL: f64 = 1e-8;

/// Sub-check outcomes of one criterion.
#[derive(Default)]
pub struct Checks {
    lines: Vec<(bool, String)>,
}

impl Checks {
    pub fn check(&mut self, ok: bool, what: impl Into<String>) -> bool {
        self.lines.push((ok, what.into()));
        ok
    }

    /// Informational line that does not affect the verdict.
    pub fn note(&mut self, what: impl Into<String>) {
        self.lines.push((true, format!("(info) {}", what.into())));
    }

    pub fn passed(&self) -> bool {
        self.lines.iter().all(|(ok, _)| *ok)
    }
}

pub struct Criterion {
    pub id: u8,
    pub title: &'static str,
    pub budget: Duration,
}

/// Run one criterion, print its sub-checks and a single verdict line, and
/// return whether it passed. Panics and errors count as failures.
pub fn run_criterion(c: &Criterion, f: impl FnOnce(&mut Checks) -> Result<(), String>) -> bool {
    let mut checks = Checks::default();
    let start = Instant::now();
    let outcome = panic::catch_unwind(AssertUnwindSafe(|| f(&mut checks)));
    let elapsed = start.elapsed();
    match outcome {
        Ok(Ok(())) => {}
        Ok(Err(e)) => {
            checks.check(false, format!("error: {e}"));
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "unknown panic".into());
            checks.check(false, format!("panic: {msg}"));
        }
    }
    checks.check(
        elapsed <= c.budget,
        format!("runtime {:.2}s within {}s", elapsed.as_secs_f64(), c.budget.as_secs()),
    );
    for (ok, line) in &checks.lines {
        println!("    [{}] {line}", if *ok { "ok" } else { "FAILED" });
    }
    let pass = checks.passed();
    println!(
        "criterion {:>2} {:<28} {} ({:.2}s)",
        c.id,
        c.title,
        if pass { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64()
    );
    pass
}

/// C-MAPSS directory: `CMAPSS_DIR` when set, otherwise seeded synthetic
/// FD001 and FD002 in a temporary directory.
pub struct DataDir {
    pub path: PathBuf,
    pub synthetic: bool,
    _tmp: Option<tempfile::TempDir>,
}

impl DataDir {
    pub fn acquire() -> rulfuse::Result<Self> {
        if let Some(dir) = std::env::var_os("CMAPSS_DIR") {
            return Ok(Self {
                path: dir.into(),
                synthetic: false,
                _tmp: None,
            });
        }
        let tmp = tempfile::tempdir()?;
        for id in [DatasetId::FD001, DatasetId::FD002] {
            synth::write_dataset(tmp.path(), id, synth::DEFAULT_SEED)?;
        }
        Ok(Self {
            path: tmp.path().to_path_buf(),
            synthetic: true,
            _tmp: Some(tmp),
        })
    }
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FD_FLOOR)
}

#[derive(Debug, Clone, Default)]
pub struct GradReport {
    pub checked: usize,
    pub worst: f64,
    pub worst_at: String,
    /// Entries of structurally zero tensors and the largest numeric value seen there.
    pub zero_checked: usize,
    pub zero_worst: f64,
}

impl GradReport {
    pub fn passed(&self) -> bool {
        self.worst < FD_TOL && self.zero_worst < FD_ZERO_TOL
    }

    pub fn merge(&mut self, other: GradReport) {
        self.checked += other.checked;
        self.zero_checked += other.zero_checked;
        self.zero_worst = self.zero_worst.max(other.zero_worst);
        if other.worst > self.worst {
            self.worst = other.worst;
            self.worst_at = other.worst_at;
        }
    }
}

fn loss_value(
    store: &ParamStore<f64>,
    loss: &impl Fn(&mut Session<'_, f64>) -> rulfuse::Result<Var>,
) -> rulfuse::Result<f64> {
    let mut s = Session::new(store, true);
    let l = loss(&mut s)?;
    Ok(s.g.item(l))
}

/// Compare reverse-mode gradients of the scalar `loss` with central
/// differences. `per_tensor = None` checks every entry; otherwise that many
/// entries per parameter are drawn from `rng`, preferring entries with a
/// non-zero analytic gradient. Tensors whose analytic gradient vanishes
/// everywhere are checked in absolute terms instead. The loss must be a pure
/// function of the store.
pub fn check_gradients(
    store: &ParamStore<f64>,
    per_tensor: Option<usize>,
    rng: &mut SeededRng,
    loss: impl Fn(&mut Session<'_, f64>) -> rulfuse::Result<Var>,
) -> rulfuse::Result<GradReport> {
    let analytic = {
        let mut s = Session::new(store, true);
        let l = loss(&mut s)?;
        let g = s.g.backward(l)?;
        s.param_grads(&g)
    };
    let mut work = store.clone();
    let mut report = GradReport::default();
    for (name, grad) in analytic {
        let structural_zero = grad.data().iter().all(|g| g.abs() < ZERO_GRAD);
        let idx: Vec<usize> = match per_tensor {
            None => (0..grad.len()).collect(),
            Some(k) => {
                let mut live: Vec<usize> = (0..grad.len()).filter(|&i| grad.data()[i].abs() >= ZERO_GRAD).collect();
                if live.is_empty() {
                    live = (0..grad.len()).collect();
                }
                rng.shuffle(&mut live);
                live.truncate(k);
                live
            }
        };
        for i in idx {
            let x0 = work.get(&name).expect("bound parameter").data()[i];
            work.get_mut(&name).unwrap().data_mut()[i] = x0 + FD_STEP;
            let up = loss_value(&work, &loss)?;
            work.get_mut(&name).unwrap().data_mut()[i] = x0 - FD_STEP;
            let down = loss_value(&work, &loss)?;
            work.get_mut(&name).unwrap().data_mut()[i] = x0;
            let numeric = (up - down) / (2.0 * FD_STEP);
            if structural_zero {
                report.zero_checked += 1;
                report.zero_worst = report.zero_worst.max(numeric.abs());
                continue;
            }
            let e = rel_err(grad.data()[i], numeric);
            report.checked += 1;
            if e > report.worst || report.worst_at.is_empty() {
                report.worst = e;
                report.worst_at = format!("{name}[{i}] analytic {:.6e} numeric {numeric:.6e}", grad.data()[i]);
            }
        }
    }
    Ok(report)
}

pub fn normal_tensor(shape: &[usize], rng: &mut SeededRng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.normal()).collect()).expect("positive shape")
}
